use std::collections::HashSet;
use std::fs;

use sandpile_lab::bijection::{burning_bijection, inverse_burning, wave_bijection};
use sandpile_lab::experiments::{
    avalanche_tails, checked_box, dhar_checks, escape_probability, probe_greens, run_replicas, toppling_tree_route,
    tree_observables, AvalancheTails, Checks, EscapeConfig, TailsConfig, TreeObsConfig, TreeRouteConfig,
    TreeRouteEstimate, WaveCountTable, wave_configs,
};
use sandpile_lab::oracle::{census, decode_config, enumerate_forests};
use sandpile_lab::rng::StreamKey;
use sandpile_lab::sampler::{SamplerKind, StationarySampler};
use sandpile_lab::sandpile::{add_and_stabilize, conserves, is_recurrent, stabilize, AvalancheSummary, HeightConfig};
use sandpile_lab::tails::{fit_exponent, ExponentFit, TailEstimate, DEFAULT_BOOTSTRAP};
use sandpile_lab::waves::{wave_of, IntermediateConfig};
use sandpile_lab::{Vertex, WiredGraph};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::args::*;
use crate::checkpoint::{config_hash, run_checkpointed};
use crate::output::*;
use crate::{CliError, CliResult};

pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|_| CliError::Config(format!("bad {what}: {x:?}"))))
        .collect()
}

/// Points such as "4,0;8,0".
pub fn parse_points(s: &str, dim: usize) -> CliResult<Vec<Vec<i32>>> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let v: Vec<i32> = parse_list(p, "coordinate")?;
            if v.len() != dim {
                return Err(CliError::Config(format!("point {p:?} does not have {dim} coordinates")));
            }
            Ok(v)
        })
        .collect()
}

pub fn parse_window(s: &str) -> CliResult<(f64, f64)> {
    let (a, b) = s.split_once(':').ok_or_else(|| CliError::Config(format!("window {s:?} is not lo:hi")))?;
    let lo: f64 = a.trim().parse().map_err(|_| CliError::Config(format!("bad window start {a:?}")))?;
    let hi: f64 = b.trim().parse().map_err(|_| CliError::Config(format!("bad window end {b:?}")))?;
    if !(lo > 0.0 && hi > lo) {
        return Err(CliError::Config(format!("window {s:?} must satisfy 0 < lo < hi")));
    }
    Ok((lo, hi))
}

fn site_of(g: &WiredGraph, rel: &[i32]) -> CliResult<usize> {
    let o = g.require_origin()?;
    let abs: Vec<i32> = g.coords(o).iter().zip(rel).map(|(a, b)| a + b).collect();
    g.site_at(&abs).ok_or_else(|| CliError::Config(format!("point {rel:?} is outside the box")))
}

fn sampler_kind(choice: SamplerChoice, burn_in: Option<u64>, g: &WiredGraph) -> SamplerKind {
    match (choice, burn_in) {
        (SamplerChoice::Exact, _) => SamplerKind::Exact,
        (SamplerChoice::Markov, Some(b)) => SamplerKind::Markov { burn_in: b },
        (SamplerChoice::Markov, None) => SamplerKind::default_markov(g),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("argument structs serialize")
}

/// Shared bookkeeping of one command run.
struct Run {
    command: &'static str,
    out: OutDir,
    config: Value,
    seed: Option<u64>,
    streams: Vec<String>,
    workers: usize,
    replicas: Option<ReplicaSpan>,
    checks: Checks,
    observations: Checks,
}

impl Run {
    fn new<A: Serialize>(command: &'static str, args: &A, opts: &RunOpts) -> CliResult<Self> {
        if opts.workers == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        Ok(Run {
            command,
            out: OutDir::resolve(opts.out.as_deref())?,
            config: to_value(args),
            seed: None,
            streams: Vec::new(),
            workers: opts.workers,
            replicas: None,
            checks: Checks::default(),
            observations: Checks::default(),
        })
    }

    fn mc(&mut self, mc: &McOpts, resumed: u64) {
        self.seed = Some(mc.seed);
        self.replicas = Some(ReplicaSpan { start: 0, end: mc.replicas, resumed });
    }

    /// Writes the manifest; per-sample failures turn into an error.
    fn finish(self, summary: String) -> CliResult<String> {
        let failed = self.checks.failures();
        let status = if failed == 0 { "ok" } else { "invariant-failure" };
        let manifest = Manifest {
            schema: MANIFEST_SCHEMA.into(),
            command: self.command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config_hash(self.command, &self.config),
            config: self.config.clone(),
            seed: self.seed,
            streams: self.streams.clone(),
            workers: self.workers,
            replicas: self.replicas.clone(),
            wall_time_seconds: self.out.elapsed(),
            checks: self.checks.clone(),
            observations: self.observations.clone(),
            outputs: self.out.files.clone(),
            status: status.into(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        write_atomic(&self.out.path("manifest.json"), text.as_bytes())?;
        if failed > 0 {
            return Err(CliError::Invariant(format!("{failed} checks failed ({})", print_checks(&self.checks))));
        }
        Ok(summary)
    }
}

pub fn dispatch(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::Stabilize(a) => stabilize_cmd(a),
        Command::Sample(a) => sample_cmd(a),
        Command::AvalancheTails(a) => tails_cmd(a),
        Command::TopplingProb(a) => toppling_cmd(a),
        Command::Escape(a) => escape_cmd(a),
        Command::TreeObs(a) => tree_obs_cmd(a),
        Command::Waves(a) => waves_cmd(a),
        Command::Census(a) => census_cmd(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Selftest(a) => selftest_cmd(a),
    }
}

#[derive(Debug, Serialize)]
struct StabilizeResult {
    sites: usize,
    initial_total: u64,
    final_heights: Vec<u64>,
    /// Topplings needed to stabilize the initial configuration.
    initial_topplings: u64,
    avalanches: Vec<AvalancheSummary>,
    recurrent: bool,
}

fn stabilize_cmd(a: &StabilizeArgs) -> CliResult<String> {
    let mut run = Run::new("stabilize", a, &a.run)?;
    let g = checked_box(a.dim, a.half_side, sandpile_lab::experiments::DEFAULT_SITE_BUDGET)?;
    let heights = match &a.heights {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str::<Vec<u64>>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => vec![a.fill; g.num_sites()],
    };
    let start = HeightConfig::new(heights);
    start.check_len(&g)?;
    let (mut cfg, odo) = stabilize(&g, start.clone(), None)?;
    run.checks.record("conservation", conserves(&g, &start, &cfg, &odo));
    let mut avalanches = Vec::new();
    for p in parse_points(&a.add, a.dim)? {
        let x = site_of(&g, &p)?;
        let (next, summary, odo) = add_and_stabilize(&g, &cfg, x)?;
        let mut before = cfg.clone();
        before.heights[x] += 1;
        run.checks.record("conservation", conserves(&g, &before, &next, &odo));
        avalanches.push(summary);
        cfg = next;
    }
    let result = StabilizeResult {
        sites: g.num_sites(),
        initial_total: start.total(),
        initial_topplings: odo.total(),
        recurrent: is_recurrent(&g, &cfg)?.0,
        final_heights: cfg.heights,
        avalanches,
    };
    run.out.write_json("stabilize.json", RESULT_SCHEMA, &result)?;
    let summary = format!(
        "stabilize: {} avalanches, total topplings {}, recurrent {}",
        result.avalanches.len(),
        result.initial_topplings + result.avalanches.iter().map(|s| s.size).sum::<u64>(),
        result.recurrent
    );
    run.finish(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SampleLine {
    #[serde(rename = "seed-index")]
    seed_index: u64,
    heights: Vec<u64>,
}

fn sample_cmd(a: &SampleArgs) -> CliResult<String> {
    let mut run = Run::new("sample", a, &a.run)?;
    let g = checked_box(a.dim, a.half_side, a.mc.site_budget)?;
    let kind = sampler_kind(a.sampler, a.burn_in, &g);
    let tag = format!("sample/d{}/L{}/{}", a.dim, a.half_side, kind.label());
    let key = StreamKey::new(a.mc.seed, &tag);
    run.streams.push(tag);
    let workers = run.workers;
    let (lines, resumed) = run_checkpointed(
        &a.mc,
        run.command,
        &run.config,
        |range| {
            run_replicas(
                workers,
                range,
                || StationarySampler::new(&g, kind),
                Vec::new,
                |s, acc: &mut Vec<SampleLine>, i| {
                    let cfg = s.sample(&mut key.replica(i))?;
                    acc.push(SampleLine { seed_index: i, heights: cfg.heights });
                    Ok(())
                },
                |mut x, y| {
                    x.extend(y);
                    x.sort_by_key(|l| l.seed_index);
                    Ok(x)
                },
            )
        },
        |mut x, y| {
            x.extend(y);
            Ok(x)
        },
    )?;
    run.mc(&a.mc, resumed);
    for l in &lines {
        run.checks.record("recurrent", is_recurrent(&g, &HeightConfig::new(l.heights.clone()))?.0);
    }
    run.out.write_jsonl("samples.jsonl", &lines)?;
    run.finish(format!("sample: {} configurations from {}", lines.len(), kind.label()))
}

fn tails_config(a: &TailsArgs, g: &WiredGraph) -> CliResult<TailsConfig> {
    let mut c = TailsConfig::new(a.dim, a.half_side, a.mc.seed);
    if let Some(p) = &a.probes {
        c.probes = parse_points(p, a.dim)?;
    }
    c.sampler = sampler_kind(a.sampler, a.burn_in, g);
    c.abelian_every = a.abelian_every;
    c.keep_records = a.records;
    c.site_budget = a.mc.site_budget;
    Ok(c)
}

fn write_fit(run: &mut Run, name: &str, t: &TailEstimate, window: (f64, f64), seed: u64) -> CliResult<ExponentFit> {
    let mut rng = StreamKey::new(seed, &format!("bootstrap/{}", t.observable)).replica(0);
    let fit = fit_exponent(t, window, DEFAULT_BOOTSTRAP, &mut rng)?;
    run.out.write_json(name, RESULT_SCHEMA, &fit)?;
    Ok(fit)
}

fn tails_cmd(a: &TailsArgs) -> CliResult<String> {
    let mut run = Run::new("avalanche-tails", a, &a.run)?;
    let g = checked_box(a.dim, a.half_side, a.mc.site_budget)?;
    let cfg = tails_config(a, &g)?;
    run.streams.push(cfg.stream_tag());
    let workers = run.workers;
    let (t, resumed) = run_checkpointed(
        &a.mc,
        run.command,
        &run.config,
        |r| avalanche_tails(&cfg, r, workers),
        |x, y| x.merge(y),
    )?;
    run.mc(&a.mc, resumed);
    run.checks.merge(&t.checks);
    run.observations.merge(&t.observations);
    for tail in [&t.radius, &t.radius_sup, &t.cluster, &t.size, &t.waves] {
        run.out.write_tail(&format!("{}.csv", tail.observable), tail)?;
    }
    let mut pmf = String::from("# schema: sandpile-lab/wave-pmf/1\nk,count,replicas\n");
    for (k, c) in &t.wave_pmf {
        pmf.push_str(&format!("{k},{c},{}\n", t.replicas));
    }
    run.out.write("wave_pmf.csv", pmf.as_bytes())?;
    let greens = probe_greens(&cfg)?;
    let dhar = dhar_checks(&t, &greens, 4.0);
    run.out.write_json("dhar.json", RESULT_SCHEMA, &dhar)?;
    if a.records {
        run.out.write_jsonl("records.jsonl", &t.records)?;
    }
    let mut summary = format!(
        "avalanche-tails: {} replicas, E[N] = {:.4} ± {:.4}, E[S] = {:.3}",
        t.replicas,
        t.wave_tally.mean(),
        t.wave_tally.se(),
        t.size_tally.mean()
    );
    for d in &dhar {
        summary.push_str(&format!("\n  Dhar y={:?}: mean {:.4} vs g {:.4} (z = {:.2})", d.probe, d.mean, d.green, d.z));
    }
    if let Some(w) = &a.window {
        let fit = write_fit(&mut run, "fit_radius.json", &t.radius, parse_window(w)?, a.mc.seed)?;
        summary.push_str(&format!("\n  radius slope {:.3} [{:.3}, {:.3}]", fit.slope, fit.ci.0, fit.ci.1));
    }
    run.out.write_json("results.json", RESULT_SCHEMA, &t)?;
    run.finish(summary)
}

#[derive(Debug, Serialize)]
struct TopplingRow {
    z: Vec<i32>,
    norm: f64,
    sandpile: Option<f64>,
    sandpile_se: Option<f64>,
    tree_given_e: f64,
    tree_given_e_se: f64,
    tree_given_any: f64,
    tree_given_any_se: f64,
    lower_bound: f64,
    lower_bound_se: f64,
    /// Sandpile estimate at least the lower bound within 3 standard errors.
    dominates: Option<bool>,
}

fn toppling_cmd(a: &TopplingArgs) -> CliResult<String> {
    let mut run = Run::new("toppling-prob", a, &a.run)?;
    let g = checked_box(a.dim, a.half_side, a.mc.site_budget)?;
    let targets = parse_points(&a.z, a.dim)?;
    let sites: Vec<usize> = targets.iter().map(|z| site_of(&g, z)).collect::<CliResult<_>>()?;
    let route = TreeRouteConfig {
        dim: a.dim,
        half_side: a.half_side,
        seed: a.mc.seed,
        targets: targets.clone(),
        site_budget: a.mc.site_budget,
    };
    let mut tails = TailsConfig::new(a.dim, a.half_side, a.mc.seed);
    tails.site_budget = a.mc.site_budget;
    run.streams.push(route.stream_tag());
    if !a.tree_only {
        run.streams.push(tails.stream_tag());
    }
    let workers = run.workers;
    type State = (Option<AvalancheTails>, TreeRouteEstimate);
    let ((sand, tree), resumed) = run_checkpointed::<State, _, _>(
        &a.mc,
        run.command,
        &run.config,
        |r| {
            let sand = if a.tree_only { None } else { Some(avalanche_tails(&tails, r.clone(), workers)?) };
            Ok((sand, toppling_tree_route(&route, r, workers)?))
        },
        |(s1, t1), (s2, t2)| {
            let s = match (s1, s2) {
                (Some(x), Some(y)) => Some(x.merge(y)?),
                _ => None,
            };
            Ok((s, t1.merge(t2)?))
        },
    )?;
    run.mc(&a.mc, resumed);
    if let Some(s) = &sand {
        run.checks.merge(&s.checks);
        run.observations.merge(&s.observations);
    }
    let mut rows = Vec::new();
    let mut csv = String::from(
        "# schema: sandpile-lab/toppling/1\nz,norm,sandpile,sandpile_se,tree_given_e,tree_given_e_se,tree_given_any,tree_given_any_se,lower_bound,lower_bound_se\n",
    );
    for (k, (z, &x)) in targets.iter().zip(&sites).enumerate() {
        let (pe, pe_se) = tree.conditional_e(k);
        let (pa, pa_se) = tree.conditional_any(k);
        let (lb, lb_se) = tree.lower_bound(k);
        let hit = sand.as_ref().map(|s| s.hit_probability(x));
        let row = TopplingRow {
            z: z.clone(),
            norm: z.iter().map(|&c| (c as f64).powi(2)).sum::<f64>().sqrt(),
            sandpile: hit.map(|h| h.0),
            sandpile_se: hit.map(|h| h.1),
            tree_given_e: pe,
            tree_given_e_se: pe_se,
            tree_given_any: pa,
            tree_given_any_se: pa_se,
            lower_bound: lb,
            lower_bound_se: lb_se,
            dominates: hit.map(|(p, se)| p + 3.0 * (se * se + lb_se * lb_se).sqrt() >= lb),
        };
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "\"{}\",{},{},{},{pe},{pe_se},{pa},{pa_se},{lb},{lb_se}\n",
            z.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
            row.norm,
            opt(row.sandpile),
            opt(row.sandpile_se)
        ));
        if let Some(ok) = row.dominates {
            run.observations.record("sandpile_dominates_tree_bound", ok);
        }
        rows.push(row);
    }
    run.out.write("toppling.csv", csv.as_bytes())?;
    #[derive(Serialize)]
    struct Out<'a> {
        rows: &'a [TopplingRow],
        tree_route_slope: f64,
        tree: &'a TreeRouteEstimate,
    }
    let slope = if targets.len() >= 2 { tree.slope() } else { f64::NAN };
    run.out.write_json("results.json", RESULT_SCHEMA, &Out { rows: &rows, tree_route_slope: slope, tree: &tree })?;
    run.finish(format!(
        "toppling-prob: {} replicas, tree-route log-log slope {slope:.3} over {} targets",
        tree.replicas,
        targets.len()
    ))
}

fn escape_cmd(a: &EscapeArgs) -> CliResult<String> {
    let mut run = Run::new("escape", a, &a.run)?;
    let cfg = EscapeConfig {
        dim: a.dim,
        radii: parse_list(&a.n, "radius")?,
        box_factor: a.box_factor,
        seed: a.mc.seed,
        site_budget: a.mc.site_budget,
    };
    run.streams.push(cfg.stream_tag());
    let workers = run.workers;
    let (t, resumed) = run_checkpointed(
        &a.mc,
        run.command,
        &run.config,
        |r| escape_probability(&cfg, r, workers),
        |mut x, y| {
            x.merge(&y)?;
            Ok(x)
        },
    )?;
    run.mc(&a.mc, resumed);
    let surv = t.survivors();
    run.checks.record("escape_nonincreasing", surv.windows(2).all(|w| w[1] <= w[0]));
    run.out.write_tail("escape.csv", &t)?;
    let mut summary = format!("escape: {} replicas in V({})", t.replicas, cfg.half_side());
    for (n, p) in t.thresholds.iter().zip(t.survival()) {
        summary.push_str(&format!("\n  Es({n}) = {p:.5}"));
    }
    if cfg.radii.len() >= 3 {
        let lo = cfg.radii[0] as f64;
        let hi = *cfg.radii.last().unwrap() as f64;
        match write_fit(&mut run, "fit.json", &t, (lo, hi), a.mc.seed) {
            Ok(fit) => summary.push_str(&format!("\n  slope {:.3} [{:.3}, {:.3}]", fit.slope, fit.ci.0, fit.ci.1)),
            Err(CliError::Lab(e)) => summary.push_str(&format!("\n  no fit: {e}")),
            Err(e) => return Err(e),
        }
    }
    run.out.write_json("results.json", RESULT_SCHEMA, &t)?;
    run.finish(summary)
}

fn tree_obs_cmd(a: &TreeObsArgs) -> CliResult<String> {
    let mut run = Run::new("tree-obs", a, &a.run)?;
    let cfg = TreeObsConfig { dim: a.dim, half_side: a.half_side, seed: a.mc.seed, site_budget: a.mc.site_budget };
    run.streams.push(cfg.stream_tag());
    let workers = run.workers;
    let (t, resumed) = run_checkpointed(
        &a.mc,
        run.command,
        &run.config,
        |r| tree_observables(&cfg, r, workers),
        |x, y| x.merge(y),
    )?;
    run.mc(&a.mc, resumed);
    for tail in [&t.radius, &t.radius_sup, &t.volume, &t.depth] {
        run.out.write_tail(&format!("{}.csv", tail.observable), tail)?;
    }
    let mut summary = format!("tree-obs: {} replicas, E|T_o| = {:.3}", t.replicas, t.volume_tally.mean());
    if let Some(w) = &a.window {
        let fit = write_fit(&mut run, "fit_tree_radius.json", &t.radius, parse_window(w)?, a.mc.seed)?;
        summary.push_str(&format!("\n  radius slope {:.3} [{:.3}, {:.3}]", fit.slope, fit.ci.0, fit.ci.1));
    }
    run.out.write_json("results.json", RESULT_SCHEMA, &t)?;
    run.finish(summary)
}

fn waves_cmd(a: &WavesArgs) -> CliResult<String> {
    let mut run = Run::new("waves", a, &a.run)?;
    let ls: Vec<usize> = parse_list(&a.half_sides, "half-side")?;
    let cfgs = wave_configs(a.dim, &ls, a.mc.seed, a.mc.site_budget);
    run.streams.extend(cfgs.iter().map(|c| c.stream_tag()));
    let workers = run.workers;
    let (runs, resumed) = run_checkpointed(
        &a.mc,
        run.command,
        &run.config,
        |r| cfgs.iter().map(|c| avalanche_tails(c, r.clone(), workers)).collect::<sandpile_lab::Result<Vec<_>>>(),
        |x, y| x.into_iter().zip(y).map(|(p, q)| p.merge(q)).collect(),
    )?;
    run.mc(&a.mc, resumed);
    let table = WaveCountTable::from_runs(a.dim, a.k_max, &runs)?;
    run.checks.merge(&table.checks);
    for r in &runs {
        run.observations.merge(&r.observations);
    }
    let mut csv = String::from("# schema: sandpile-lab/wave-count/1\nL,k,probability,replicas\n");
    for row in &table.rows {
        for (k, p) in row.pmf.iter().enumerate() {
            csv.push_str(&format!("{},{k},{p},{}\n", row.half_side, row.replicas));
        }
    }
    run.out.write("waves.csv", csv.as_bytes())?;
    run.out.write_json("results.json", RESULT_SCHEMA, &table)?;
    let mut summary = format!("waves: E[N] vs g_L(o,o) slope {:.4}, intercept {:.4}", table.slope, table.intercept);
    for r in &table.rows {
        summary.push_str(&format!(
            "\n  L={}: E[N] = {:.4} ± {:.4}, g = {:.4}, drift {}",
            r.half_side,
            r.mean,
            r.mean_se,
            r.green,
            r.drift.map(|d| format!("{d:.4}")).unwrap_or_else(|| "-".into())
        ));
    }
    run.finish(summary)
}

fn census_graph(a: &CensusArgs) -> CliResult<WiredGraph> {
    match (&a.grid, a.dim, a.half_side) {
        (Some(grid), _, _) => {
            let sides: Vec<i32> = grid
                .split('x')
                .map(|s| s.trim().parse::<i32>().map_err(|_| CliError::Config(format!("bad grid {grid:?}"))))
                .collect::<CliResult<_>>()?;
            if sides.iter().any(|&s| s < 1) {
                return Err(CliError::Config(format!("bad grid {grid:?}")));
            }
            let lo = vec![0; sides.len()];
            let hi: Vec<i32> = sides.iter().map(|s| s - 1).collect();
            Ok(WiredGraph::rect(&lo, &hi)?)
        }
        (None, Some(d), Some(l)) => Ok(checked_box(d, l, sandpile_lab::experiments::DEFAULT_SITE_BUDGET)?),
        _ => Err(CliError::Config("census needs --grid AxB or --d and --L".into())),
    }
}

fn census_cmd(a: &CensusArgs) -> CliResult<String> {
    let mut run = Run::new("census", a, &a.run)?;
    let g = census_graph(a)?;
    let marked = match a.marked {
        Some(w) => w,
        None => g.require_origin()?,
    };
    let c = census(&g, Some(marked))?;
    run.checks.record("census_identities", c.check_identities().is_ok());
    if a.dump {
        #[derive(Serialize)]
        struct Line {
            kind: &'static str,
            heights: Vec<u64>,
        }
        let deg = g.degree() as u64;
        let n = g.num_sites();
        let mut lines: Vec<Line> = c
            .recurrent_codes
            .iter()
            .map(|&k| Line { kind: "recurrent", heights: decode_config(k, n, deg) })
            .collect();
        lines.extend(
            c.intermediate_codes
                .iter()
                .map(|&k| Line { kind: "intermediate", heights: decode_config(k, n, deg + 1) }),
        );
        run.out.write_jsonl("census.jsonl", &lines)?;
    }
    #[derive(Serialize)]
    struct Counts<'a> {
        sites: usize,
        marked: usize,
        stable: u64,
        recurrent: u64,
        trees: u64,
        det: &'a str,
        intermediate: Option<u64>,
        two_root_forests: Option<u64>,
        det_primed: Option<&'a str>,
        green_ww: Option<&'a str>,
        last_waves: Option<u64>,
    }
    let counts = Counts {
        sites: c.sites,
        marked,
        stable: c.stable,
        recurrent: c.recurrent,
        trees: c.trees,
        det: &c.det,
        intermediate: c.intermediate,
        two_root_forests: c.two_root_forests,
        det_primed: c.det_primed.as_deref(),
        green_ww: c.green_ww.as_deref(),
        last_waves: c.last_waves,
    };
    run.out.write_json("census.json", RESULT_SCHEMA, &counts)?;
    let summary = format!(
        "census: {} stable, {} recurrent, {} trees, det {}, {} intermediate, g(w,w) = {}",
        c.stable,
        c.recurrent,
        c.trees,
        c.det,
        c.intermediate.unwrap_or(0),
        c.green_ww.as_deref().unwrap_or("-")
    );
    run.finish(summary)
}

fn fit_cmd(a: &FitArgs) -> CliResult<String> {
    let mut run = Run::new("fit", a, &a.run)?;
    let window = parse_window(&a.window)?;
    let t = read_tail_csv(&a.input)?;
    let mut rng = StreamKey::new(a.seed, &format!("bootstrap/{}", t.observable)).replica(0);
    let fit = fit_exponent(&t, window, a.resamples, &mut rng)?;
    run.seed = Some(a.seed);
    run.out.write_json("fit.json", RESULT_SCHEMA, &fit)?;
    run.finish(format!(
        "fit: slope {:.6} [{:.6}, {:.6}] over {} points, R² {:.5}",
        fit.slope,
        fit.ci.0,
        fit.ci.1,
        fit.points.len(),
        fit.r_squared
    ))
}

#[derive(Debug, Serialize)]
struct SelftestItem {
    instance: String,
    check: String,
    ok: bool,
    detail: String,
}

/// Exhaustive checks on one tiny graph with marked site `w`.
fn selftest_instance(name: &str, g: &WiredGraph, w: usize, items: &mut Vec<SelftestItem>) -> CliResult<()> {
    let mut push = |check: &str, ok: bool, detail: String| {
        items.push(SelftestItem { instance: name.into(), check: check.into(), ok, detail })
    };
    let c = census(g, Some(w))?;
    let ident = c.check_identities();
    push(
        "census identities",
        ident.is_ok(),
        format!(
            "stable {}, recurrent {}, trees {}, det {}, intermediate {:?}, det' {:?}, g(w,w) {:?}{}",
            c.stable,
            c.recurrent,
            c.trees,
            c.det,
            c.intermediate,
            c.det_primed,
            c.green_ww,
            ident.err().map(|e| format!(": {e}")).unwrap_or_default()
        ),
    );
    let n = g.num_sites();
    let deg = g.degree() as u64;
    let mut round_trips = 0;
    let mut images = HashSet::new();
    for &k in &c.recurrent_codes {
        let cfg = HeightConfig::new(decode_config(k, n, deg));
        let tree = burning_bijection(g, &cfg)?;
        round_trips += (inverse_burning(g, &tree)? == cfg) as u64;
        images.insert(tree.parent);
    }
    push(
        "inverse burning after burning",
        round_trips == c.recurrent && images.len() as u64 == c.recurrent,
        format!("{round_trips} of {} round trips, {} distinct trees", c.recurrent, images.len()),
    );
    let trees = enumerate_forests(g, &[])?;
    let mut back = 0;
    for t in &trees {
        back += (burning_bijection(g, &inverse_burning(g, t)?)? == *t) as u64;
    }
    push("burning after inverse burning", back == trees.len() as u64, format!("{back} of {} trees", trees.len()));
    let mut forests = HashSet::new();
    let mut matches = 0;
    for &k in &c.intermediate_codes {
        let eta = IntermediateConfig::new(g, HeightConfig::new(decode_config(k, n, deg + 1)), w)?;
        let f = wave_bijection(g, &eta)?;
        let comp = f.forest.component(g, Vertex::Site(w))?;
        matches += (comp == f.wave && wave_of(g, &eta)? == f.wave) as u64;
        forests.insert(f.forest.parent);
    }
    let m = c.intermediate_codes.len();
    push(
        "wave bijection",
        forests.len() == m && matches as usize == m && Some(m as u64) == c.two_root_forests,
        format!("{} distinct forests from {m} configurations, {matches} with V(T_w) = wave", forests.len()),
    );
    Ok(())
}

fn selftest_cmd(a: &SelftestArgs) -> CliResult<String> {
    let mut run = Run::new("selftest", a, &a.run)?;
    let mut items = Vec::new();
    let cases: Vec<(&str, WiredGraph, usize)> = vec![
        ("2x2 square", WiredGraph::rect(&[0, 0], &[1, 1])?, 0),
        ("1x2 domino", WiredGraph::rect(&[0, 0], &[0, 1])?, 0),
        ("1x3 strip", WiredGraph::rect(&[0, 0], &[0, 2])?, 1),
        ("2x3 rectangle", WiredGraph::rect(&[0, 0], &[1, 2])?, 1),
        ("1x1x2 column", WiredGraph::rect(&[0, 0, 0], &[0, 0, 1])?, 0),
        ("1x2x2 slab", WiredGraph::rect(&[0, 0, 0], &[0, 1, 1])?, 0),
    ];
    for (name, g, w) in &cases {
        selftest_instance(name, g, *w, &mut items)?;
    }
    for it in &items {
        run.checks.record(&format!("{}: {}", it.instance, it.check), it.ok);
    }
    run.out.write_json("selftest.json", RESULT_SCHEMA, &items)?;
    let lines: Vec<String> = items
        .iter()
        .map(|i| format!("{} {}: {} ({})", if i.ok { "PASS" } else { "FAIL" }, i.instance, i.check, i.detail))
        .collect();
    run.finish(lines.join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_points_and_windows() {
        assert_eq!(parse_list::<u32>("16, 32,64", "radius").unwrap(), vec![16, 32, 64]);
        assert!(parse_list::<u32>("16,x", "radius").is_err());
        assert_eq!(parse_points("0,0; 4,-1;", 2).unwrap(), vec![vec![0, 0], vec![4, -1]]);
        assert!(parse_points("1,2,3", 2).is_err());
        assert!(parse_points("", 2).unwrap().is_empty());
        assert_eq!(parse_window("2:8").unwrap(), (2.0, 8.0));
        for bad in ["8:2", "0:4", "4", "a:b"] {
            assert!(matches!(parse_window(bad), Err(CliError::Config(_))), "{bad}");
        }
    }

    #[test]
    fn probes_outside_the_box_are_config_errors() {
        let g = sandpile_lab::build_wired_box(sandpile_lab::BoxSpec::new(2, 2)).unwrap();
        assert_eq!(site_of(&g, &[0, 0]).unwrap(), g.origin().unwrap());
        assert!(matches!(site_of(&g, &[3, 0]), Err(CliError::Config(_))));
    }
}
