//! Monte Carlo estimators.
//!
//! Every estimator runs a half-open range of replica indices and returns an
//! accumulator. Replica `i` draws only from its own random stream, and all
//! tallies are integers, so accumulators over disjoint ranges merge into
//! exactly the result of one run over the union, at any worker count.

use std::collections::BTreeMap;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{build_wired_box, BoxSpec, Vertex, WiredGraph, SINK};
use crate::laplacian::green_column;
use crate::rng::StreamKey;
use crate::sampler::{SamplerKind, StationarySampler};
use crate::sandpile::{add_and_stabilize, stabilize_with, HeightConfig, Schedule, Stabilizer};
use crate::tails::{geometric_grid, ols, Tally, TailEstimate};
use crate::waves::wave_profile;
use crate::wilson::{ForestBuilder, SINK_LABEL};

/// Default largest lattice, in sites, an experiment may allocate.
pub const DEFAULT_SITE_BUDGET: usize = 30_000_000;

/// Runs `step` over `range`, with per-worker scratch from `init` and
/// accumulators combined by `merge`.
pub fn run_replicas<S, T, I, Z, F, M>(workers: usize, range: Range<u64>, init: I, zero: Z, step: F, merge: M) -> Result<T>
where
    S: Send,
    T: Send,
    I: Fn() -> S + Sync + Send,
    Z: Fn() -> T + Sync + Send,
    F: Fn(&mut S, &mut T, u64) -> Result<()> + Sync + Send,
    M: Fn(T, T) -> Result<T> + Sync + Send,
{
    if workers <= 1 {
        let mut s = init();
        let mut acc = zero();
        for i in range {
            step(&mut s, &mut acc, i)?;
        }
        return Ok(acc);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| {
        range
            .into_par_iter()
            .fold(
                || (None::<S>, Ok(zero())),
                |(mut s, acc), i| {
                    let scratch = s.get_or_insert_with(&init);
                    let acc = acc.and_then(|mut a| step(scratch, &mut a, i).map(|_| a));
                    (s, acc)
                },
            )
            .map(|(_, acc)| acc)
            .reduce(|| Ok(zero()), |a, b| merge(a?, b?))
    })
}

/// Builds the box after checking the site budget.
pub fn checked_box(dim: usize, half_side: usize, budget: usize) -> Result<WiredGraph> {
    let spec = BoxSpec::new(dim, half_side);
    match spec.site_count() {
        Some(n) if n <= budget => build_wired_box(spec),
        _ => Err(Error::ResourceGuard(format!(
            "box d={dim} L={half_side} exceeds the budget of {budget} sites"
        ))),
    }
}

fn site_of(g: &WiredGraph, rel: &[i32]) -> Result<usize> {
    let o = g.require_origin()?;
    let base = g.coords(o);
    if rel.len() != base.len() {
        return Err(Error::InvalidArgument(format!("point {rel:?} has the wrong dimension")));
    }
    let abs: Vec<i32> = base.iter().zip(rel).map(|(a, b)| a + b).collect();
    g.site_at(&abs).ok_or_else(|| Error::InvalidArgument(format!("point {rel:?} is outside the box")))
}

/// Counts of a named deterministic check.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckCount {
    pub checked: u64,
    pub failed: u64,
}

/// Per-sample assertion counters, keyed by check name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checks(pub BTreeMap<String, CheckCount>);

impl Checks {
    pub fn record(&mut self, name: &str, ok: bool) {
        let e = self.0.entry(name.to_string()).or_default();
        e.checked += 1;
        e.failed += (!ok) as u64;
    }

    pub fn merge(&mut self, other: &Checks) {
        for (k, v) in &other.0 {
            let e = self.0.entry(k.clone()).or_default();
            e.checked += v.checked;
            e.failed += v.failed;
        }
    }

    pub fn failures(&self) -> u64 {
        self.0.values().map(|c| c.failed).sum()
    }

    pub fn get(&self, name: &str) -> CheckCount {
        self.0.get(name).copied().unwrap_or_default()
    }
}

/// Names of the per-avalanche checks.
pub mod check {
    /// `N = n(o,o)`: wave count equals topplings at the source.
    pub const WAVES_EQUAL_TOPPLINGS: &str = "waves_equal_source_topplings";
    /// Wave multiplicities equal the odometer site by site.
    pub const WAVE_MULTISET: &str = "wave_multiset_equals_odometer";
    /// `n(o,o) <= R_inf + 1`.
    pub const RADIUS_BOUND: &str = "source_topplings_at_most_sup_radius_plus_one";
    /// `|Av| <= S`.
    pub const CLUSTER_AT_MOST_SIZE: &str = "cluster_at_most_size";
    /// Queue and stack schedules agree.
    pub const ABELIAN: &str = "abelian_schedule_independence";
    /// Stabilization conserves grains exactly.
    pub const CONSERVATION: &str = "conservation";
    /// `n(o,o) <= R_inf` as literally stated; an observation, not a check.
    pub const RADIUS_BOUND_LITERAL: &str = "source_topplings_at_most_sup_radius";
}

/// One avalanche, for JSON-lines output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    #[serde(rename = "seed-index")]
    pub seed_index: u64,
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "S")]
    pub s: u64,
    pub cluster: u64,
    /// Euclidean radius.
    #[serde(rename = "R2")]
    pub r2: f64,
    #[serde(rename = "Rinf")]
    pub rinf: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailsConfig {
    pub dim: usize,
    pub half_side: usize,
    pub seed: u64,
    /// Sites `y` (relative to `o`) whose toppling numbers `n(o,y)` are averaged.
    pub probes: Vec<Vec<i32>>,
    pub sampler: SamplerKind,
    /// Compare queue and stack schedules every this many replicas (0: never).
    pub abelian_every: u64,
    pub keep_records: bool,
    pub site_budget: usize,
}

impl TailsConfig {
    pub fn new(dim: usize, half_side: usize, seed: u64) -> Self {
        TailsConfig {
            dim,
            half_side,
            seed,
            probes: vec![vec![0; dim]],
            sampler: SamplerKind::Exact,
            abelian_every: 1000,
            keep_records: false,
            site_budget: DEFAULT_SITE_BUDGET,
        }
    }

    pub fn stream_tag(&self) -> String {
        format!("avalanche/d{}/L{}/{}", self.dim, self.half_side, self.sampler.label())
    }

    pub fn stream_key(&self) -> StreamKey {
        StreamKey::new(self.seed, &self.stream_tag())
    }
}

/// Accumulated avalanche statistics at `o` under `ν_L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvalancheTails {
    pub config: TailsConfig,
    pub replicas: u64,
    /// Euclidean radius `R`.
    pub radius: TailEstimate,
    pub radius_sup: TailEstimate,
    pub cluster: TailEstimate,
    pub size: TailEstimate,
    pub waves: TailEstimate,
    /// Replica count per wave count `N`.
    pub wave_pmf: BTreeMap<u64, u64>,
    pub wave_tally: Tally,
    pub size_tally: Tally,
    /// `n(o, y)` per probe.
    pub probe_topplings: Vec<Tally>,
    /// Per-site count of replicas with the site in `Av`.
    pub hits: Vec<u64>,
    pub checks: Checks,
    /// Statements that are tallied but not enforced.
    pub observations: Checks,
    pub records: Vec<SampleRecord>,
}

impl AvalancheTails {
    pub fn empty(config: &TailsConfig, g: &WiredGraph) -> Result<Self> {
        let n = g.num_sites() as f64;
        let l = config.half_side as f64;
        let d = config.dim as f64;
        let (seed, dim, half) = (config.seed, config.dim, config.half_side);
        let tail = |name: &str, t: Vec<f64>| TailEstimate::new(name, t, true, seed, dim, half);
        Ok(AvalancheTails {
            config: config.clone(),
            replicas: 0,
            radius: tail("radius", geometric_grid(1.0, 2f64.sqrt(), d.sqrt() * l))?,
            radius_sup: tail("radius_sup", (1..=config.half_side.min(64)).map(|r| r as f64).collect())?,
            cluster: tail("cluster", geometric_grid(1.0, 2f64.sqrt(), n))?,
            size: tail("size", geometric_grid(1.0, 2f64.sqrt(), n * n))?,
            waves: tail("waves", (1..=(config.half_side + 1).min(64)).map(|k| k as f64).collect())?,
            wave_pmf: BTreeMap::new(),
            wave_tally: Tally::default(),
            size_tally: Tally::default(),
            probe_topplings: vec![Tally::default(); config.probes.len()],
            hits: vec![0; g.num_sites()],
            checks: Checks::default(),
            observations: Checks::default(),
            records: Vec::new(),
        })
    }

    pub fn merge(mut self, other: AvalancheTails) -> Result<Self> {
        if self.config != other.config {
            return Err(Error::InvalidArgument("merging runs with different configurations".into()));
        }
        self.replicas += other.replicas;
        self.radius.merge(&other.radius)?;
        self.radius_sup.merge(&other.radius_sup)?;
        self.cluster.merge(&other.cluster)?;
        self.size.merge(&other.size)?;
        self.waves.merge(&other.waves)?;
        for (k, c) in other.wave_pmf {
            *self.wave_pmf.entry(k).or_insert(0) += c;
        }
        self.wave_tally.merge(&other.wave_tally);
        self.size_tally.merge(&other.size_tally);
        for (a, b) in self.probe_topplings.iter_mut().zip(&other.probe_topplings) {
            a.merge(b);
        }
        for (a, b) in self.hits.iter_mut().zip(&other.hits) {
            *a += b;
        }
        self.checks.merge(&other.checks);
        self.observations.merge(&other.observations);
        self.records.extend(other.records);
        self.records.sort_by_key(|r| r.seed_index);
        Ok(self)
    }

    /// `P(N = k)` for `k = 0..=k_max`.
    pub fn wave_distribution(&self, k_max: u64) -> Vec<f64> {
        (0..=k_max)
            .map(|k| *self.wave_pmf.get(&k).unwrap_or(&0) as f64 / self.replicas as f64)
            .collect()
    }

    /// `(estimate, standard error)` of `ν_L(z ∈ Av)`.
    pub fn hit_probability(&self, site: usize) -> (f64, f64) {
        let p = self.hits[site] as f64 / self.replicas as f64;
        (p, (p * (1.0 - p) / self.replicas as f64).sqrt())
    }
}

/// Avalanches at `o` from `ν_L` samples over a replica range.
pub fn avalanche_tails(config: &TailsConfig, range: Range<u64>, workers: usize) -> Result<AvalancheTails> {
    let g = checked_box(config.dim, config.half_side, config.site_budget)?;
    let o = g.require_origin()?;
    let probes: Vec<usize> = config.probes.iter().map(|p| site_of(&g, p)).collect::<Result<_>>()?;
    let key = config.stream_key();
    let zero = AvalancheTails::empty(config, &g)?;
    run_replicas(
        workers,
        range,
        || (StationarySampler::new(&g, config.sampler), Stabilizer::new()),
        || zero.clone(),
        |(sampler, stab), acc, i| {
            let mut rng = key.replica(i);
            let eta = sampler.sample(&mut rng)?;
            record_avalanche(&g, o, &eta, &probes, config, stab, acc, i)
        },
        |a, b| a.merge(b),
    )
}

#[allow(clippy::too_many_arguments)]
fn record_avalanche(
    g: &WiredGraph,
    o: usize,
    eta: &HeightConfig,
    probes: &[usize],
    config: &TailsConfig,
    stab: &mut Stabilizer,
    acc: &mut AvalancheTails,
    index: u64,
) -> Result<()> {
    let (fin, summary, odo) = add_and_stabilize(g, eta, o)?;
    let profile = wave_profile(g, eta, o, stab)?;
    let n_oo = odo.counts[o];
    acc.checks.record(check::WAVES_EQUAL_TOPPLINGS, profile.sizes.len() as u64 == n_oo);
    acc.checks.record(check::WAVE_MULTISET, profile.multiplicities == odo && profile.final_config == fin);
    acc.checks.record(check::RADIUS_BOUND, n_oo as i64 <= summary.radius_sup + 1);
    acc.checks.record(check::CLUSTER_AT_MOST_SIZE, summary.cluster <= summary.size);
    acc.observations.record(check::RADIUS_BOUND_LITERAL, n_oo as i64 <= summary.radius_sup);
    if config.abelian_every > 0 && index % config.abelian_every == 0 {
        let mut start = eta.clone();
        start.heights[o] += 1;
        let (alt, alt_odo) = stabilize_with(g, start.clone(), None, Schedule::SingleLifo)?;
        acc.checks.record(check::ABELIAN, alt == fin && alt_odo == odo);
        acc.checks.record(check::CONSERVATION, crate::sandpile::conserves(g, &start, &fin, &odo));
    }
    acc.replicas += 1;
    acc.radius.record_value(summary.radius);
    acc.radius_sup.record_value(summary.radius_sup as f64);
    acc.cluster.record_value(summary.cluster as f64);
    acc.size.record_value(summary.size as f64);
    acc.waves.record_value(summary.waves as f64);
    *acc.wave_pmf.entry(summary.waves).or_insert(0) += 1;
    acc.wave_tally.add(summary.waves);
    acc.size_tally.add(summary.size);
    for (t, &y) in acc.probe_topplings.iter_mut().zip(probes) {
        t.add(odo.counts[y]);
    }
    for (h, &c) in acc.hits.iter_mut().zip(&odo.counts) {
        *h += (c > 0) as u64;
    }
    if config.keep_records {
        acc.records.push(SampleRecord {
            seed_index: index,
            n: summary.waves,
            s: summary.size,
            cluster: summary.cluster,
            r2: summary.radius,
            rinf: summary.radius_sup,
        });
    }
    Ok(())
}

/// Exact `g_L(o, y)` for each probe.
pub fn probe_greens(config: &TailsConfig) -> Result<Vec<f64>> {
    let g = checked_box(config.dim, config.half_side, config.site_budget)?;
    let o = g.require_origin()?;
    let col = green_column(&g, o)?;
    config.probes.iter().map(|p| Ok(col.values[site_of(&g, p)?])).collect()
}

/// Dhar's formula as a running check: `|mean n(o,y) - g(o,y)| <= k·SE`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DharCheck {
    pub probe: Vec<i32>,
    pub mean: f64,
    pub se: f64,
    pub green: f64,
    pub z: f64,
    pub ok: bool,
}

pub fn dhar_checks(tails: &AvalancheTails, greens: &[f64], k_se: f64) -> Vec<DharCheck> {
    tails
        .config
        .probes
        .iter()
        .zip(&tails.probe_topplings)
        .zip(greens)
        .map(|((p, t), &g)| {
            let (mean, se) = (t.mean(), t.se());
            let z = (mean - g) / se;
            DharCheck { probe: p.clone(), mean, se, green: g, z, ok: z.abs() <= k_se }
        })
        .collect()
}

/// Spanning-forest route to the toppling probability: Wilson on the graph
/// with `o` wired as a second root, walks started at `e = o + e1`, then at
/// the other neighbours of `o`, then at the targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRouteConfig {
    pub dim: usize,
    pub half_side: usize,
    pub seed: u64,
    pub targets: Vec<Vec<i32>>,
    pub site_budget: usize,
}

impl TreeRouteConfig {
    pub fn stream_tag(&self) -> String {
        format!("tree-route/d{}/L{}", self.dim, self.half_side)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRouteEstimate {
    pub config: TreeRouteConfig,
    pub replicas: u64,
    /// Replicas with `e ∉ T_o`.
    pub e_out: u64,
    /// Replicas with some neighbour of `o` outside `T_o`.
    pub any_out: u64,
    /// Per target: `z ∈ T_o` and `e ∉ T_o`.
    pub hits_e: Vec<u64>,
    /// Per target: `z ∈ T_o` and some neighbour outside.
    pub hits_any: Vec<u64>,
}

impl TreeRouteEstimate {
    fn empty(config: &TreeRouteConfig) -> Self {
        let k = config.targets.len();
        TreeRouteEstimate {
            config: config.clone(),
            replicas: 0,
            e_out: 0,
            any_out: 0,
            hits_e: vec![0; k],
            hits_any: vec![0; k],
        }
    }

    pub fn merge(mut self, other: TreeRouteEstimate) -> Result<Self> {
        if self.config != other.config {
            return Err(Error::InvalidArgument("merging runs with different configurations".into()));
        }
        self.replicas += other.replicas;
        self.e_out += other.e_out;
        self.any_out += other.any_out;
        for (a, b) in self.hits_e.iter_mut().zip(&other.hits_e) {
            *a += b;
        }
        for (a, b) in self.hits_any.iter_mut().zip(&other.hits_any) {
            *a += b;
        }
        Ok(self)
    }

    /// `μ_{L,o}(z ∈ T_o | e ∉ T_o)` with binomial standard error.
    pub fn conditional_e(&self, k: usize) -> (f64, f64) {
        let n = self.e_out as f64;
        let p = self.hits_e[k] as f64 / n;
        (p, (p * (1.0 - p) / n).sqrt())
    }

    /// `μ_{L,o}(z ∈ T_o | some v ~ o has v ∉ T_o)`.
    pub fn conditional_any(&self, k: usize) -> (f64, f64) {
        let n = self.any_out as f64;
        let p = self.hits_any[k] as f64 / n;
        (p, (p * (1.0 - p) / n).sqrt())
    }

    /// The lower bound `(2d)^{-1} μ(z ∈ T_o | e ∉ T_o)` on `ν_L(z ∈ Av)`.
    pub fn lower_bound(&self, k: usize) -> (f64, f64) {
        let (p, se) = self.conditional_e(k);
        let c = 1.0 / (2 * self.config.dim) as f64;
        (c * p, c * se)
    }

    /// Log-log slope of the conditional probability against `|z|`.
    pub fn slope(&self) -> f64 {
        let x: Vec<f64> = self.config.targets.iter().map(|z| norm2(z).ln()).collect();
        let y: Vec<f64> = (0..x.len()).map(|k| self.conditional_e(k).0.ln()).collect();
        ols(&x, &y).0
    }
}

fn norm2(z: &[i32]) -> f64 {
    (z.iter().map(|&a| (a as f64).powi(2)).sum::<f64>()).sqrt()
}

pub fn toppling_tree_route(config: &TreeRouteConfig, range: Range<u64>, workers: usize) -> Result<TreeRouteEstimate> {
    let g = checked_box(config.dim, config.half_side, config.site_budget)?;
    let o = g.require_origin()?;
    let targets: Vec<usize> = config.targets.iter().map(|z| site_of(&g, z)).collect::<Result<_>>()?;
    if targets.contains(&o) {
        return Err(Error::InvalidArgument("target z = o is not allowed".into()));
    }
    let e = g.neighbor(o, 0).site().ok_or_else(|| Error::InvalidArgument("o + e1 lies outside the box".into()))?;
    let others: Vec<usize> = g.neighbors_raw(o).iter().filter(|&&v| v != SINK).map(|&v| v as usize).collect();
    let key = StreamKey::new(config.seed, &config.stream_tag());
    run_replicas(
        workers,
        range,
        || ForestBuilder::new(&g),
        || TreeRouteEstimate::empty(config),
        |b, acc, i| {
            let mut rng = key.replica(i);
            b.reset(&[o])?;
            let e_out = b.attach(e, &mut rng)? == SINK_LABEL;
            let mut any_out = e_out || g.sink_edges(o) > 0;
            for &v in &others {
                any_out |= b.attach(v, &mut rng)? == SINK_LABEL;
            }
            acc.replicas += 1;
            acc.e_out += e_out as u64;
            acc.any_out += any_out as u64;
            if any_out {
                for (k, &z) in targets.iter().enumerate() {
                    if b.attach(z, &mut rng)? != SINK_LABEL {
                        acc.hits_any[k] += 1;
                        acc.hits_e[k] += e_out as u64;
                    }
                }
            }
            Ok(())
        },
        |a, b| a.merge(b),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeConfig {
    pub dim: usize,
    /// Radii `n`, ascending.
    pub radii: Vec<u32>,
    /// The LERW lives in `V(L)` with `L = box_factor · max n`.
    pub box_factor: u32,
    pub seed: u64,
    pub site_budget: usize,
}

impl EscapeConfig {
    pub fn half_side(&self) -> usize {
        (self.box_factor * self.radii.iter().copied().max().unwrap_or(1)) as usize
    }

    pub fn stream_tag(&self) -> String {
        format!("escape/d{}/L{}", self.dim, self.half_side())
    }
}

/// `Es^L(n) = P(LERW(0, σ̂_n] ∩ SRW[0, σ_n] = ∅)`, for all `n` in one pass.
///
/// Per replica: a LERW from `o` to the boundary of `V(L)` and an
/// independent SRW from `o` stopped on leaving `V(n_max)`. A meeting of
/// LERW index `j >= 1` and SRW time `t` lies inside both segments exactly
/// when `n` is at least the sup-norm of every earlier point of both paths,
/// so escape holds for all `n` below the smallest such level `K`. The
/// recorded value is `K - 1`, the largest escaping radius.
pub fn escape_probability(config: &EscapeConfig, range: Range<u64>, workers: usize) -> Result<TailEstimate> {
    if config.radii.is_empty() || config.radii.windows(2).any(|w| w[0] >= w[1]) || config.radii[0] == 0 {
        return Err(Error::InvalidArgument("radii must be positive and strictly increasing".into()));
    }
    if config.box_factor < 2 {
        return Err(Error::InvalidArgument("box factor must be at least 2".into()));
    }
    let half = config.half_side();
    let g = checked_box(config.dim, half, config.site_budget)?;
    let o = g.require_origin()?;
    let n_max = *config.radii.last().unwrap() as i64;
    let sup: Vec<u32> = (0..g.num_sites()).map(|x| g.dist_sup(o, x) as u32).collect();
    let key = StreamKey::new(config.seed, &config.stream_tag());
    let zero = TailEstimate::new(
        "escape",
        config.radii.iter().map(|&n| n as f64).collect(),
        true,
        config.seed,
        config.dim,
        half,
    )?;
    let deg = g.degree();
    let nbr = g.neighbor_table();
    run_replicas(
        workers,
        range,
        || (ForestBuilder::new(&g), vec![0u32; g.num_sites()], Vec::<u32>::new()),
        || zero.clone(),
        |(b, index, prefix), acc, i| {
            let mut rng = key.replica(i);
            b.reset(&[])?;
            b.attach(o, &mut rng)?;
            let path = b.branch(o);
            // prefix[j] = max sup-norm of LERW points before index j
            prefix.clear();
            let mut m = 0u32;
            for (j, v) in path.iter().enumerate() {
                prefix.push(m);
                if let Vertex::Site(x) = *v {
                    m = m.max(sup[x]);
                    if j >= 1 {
                        index[x] = j as u32;
                    }
                }
            }
            let mut kill = n_max + 1;
            let mut slots = crate::walk::SlotSource::new(deg);
            let mut cur = o;
            let mut m_walk = 0i64;
            loop {
                m_walk = m_walk.max(sup[cur] as i64);
                if m_walk >= kill {
                    break;
                }
                let v = nbr[cur * deg + slots.draw(&mut rng)];
                debug_assert!(v != SINK);
                let v = v as usize;
                let j = index[v];
                if j >= 1 {
                    kill = kill.min(m_walk.max(prefix[j as usize] as i64));
                }
                if sup[v] as i64 > n_max {
                    break;
                }
                cur = v;
            }
            for v in &path {
                if let Vertex::Site(x) = *v {
                    index[x] = 0;
                }
            }
            acc.record_value((kill - 1) as f64);
            Ok(())
        },
        |mut a, b| {
            a.merge(&b)?;
            Ok(a)
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeObsConfig {
    pub dim: usize,
    pub half_side: usize,
    pub seed: u64,
    pub site_budget: usize,
}

impl TreeObsConfig {
    pub fn stream_tag(&self) -> String {
        format!("tree-obs/d{}/L{}", self.dim, self.half_side)
    }
}

/// Observables of `T_o` under the two-root forest measure `μ_{L,o}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeObservables {
    pub config: TreeObsConfig,
    pub replicas: u64,
    /// Euclidean extent `max_{x ∈ T_o} |x|`.
    pub radius: TailEstimate,
    pub radius_sup: TailEstimate,
    /// `|T_o|`.
    pub volume: TailEstimate,
    /// Largest tree distance from `o` within `T_o`.
    pub depth: TailEstimate,
    pub volume_tally: Tally,
}

impl TreeObservables {
    fn empty(config: &TreeObsConfig, g: &WiredGraph) -> Result<Self> {
        let (seed, dim, half) = (config.seed, config.dim, config.half_side);
        let tail = |name: &str, t: Vec<f64>| TailEstimate::new(name, t, true, seed, dim, half);
        let rmax = ((dim as f64).sqrt() * half as f64).ceil() as usize;
        let n = g.num_sites() as f64;
        Ok(TreeObservables {
            config: config.clone(),
            replicas: 0,
            radius: tail("tree_radius", (1..=rmax.min(64)).map(|r| r as f64).collect())?,
            radius_sup: tail("tree_radius_sup", (1..=half.min(64)).map(|r| r as f64).collect())?,
            volume: tail("tree_volume", geometric_grid(1.0, 2f64.sqrt(), n))?,
            depth: tail("tree_depth", geometric_grid(1.0, 2f64.sqrt(), n))?,
            volume_tally: Tally::default(),
        })
    }

    pub fn merge(mut self, other: TreeObservables) -> Result<Self> {
        if self.config != other.config {
            return Err(Error::InvalidArgument("merging runs with different configurations".into()));
        }
        self.replicas += other.replicas;
        self.radius.merge(&other.radius)?;
        self.radius_sup.merge(&other.radius_sup)?;
        self.volume.merge(&other.volume)?;
        self.depth.merge(&other.depth)?;
        self.volume_tally.merge(&other.volume_tally);
        Ok(self)
    }
}

/// Per-component summary used by [`tree_observables`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentSummary {
    pub volume: u64,
    pub radius2: i64,
    pub radius_sup: i64,
    pub depth: u64,
}

/// Summary of the tree of `root` in a complete-enough builder state.
pub fn summarize_component(b: &ForestBuilder, root: usize, sites: &[usize], depth: &mut [u32]) -> ComponentSummary {
    let g = b.graph();
    let mut s = ComponentSummary { volume: sites.len() as u64, radius2: 0, radius_sup: 0, depth: 0 };
    depth[root] = 0;
    let mut chain = Vec::new();
    for &x in sites {
        s.radius2 = s.radius2.max(g.dist2(root, x));
        s.radius_sup = s.radius_sup.max(g.dist_sup(root, x));
        let mut u = x;
        while depth[u] == u32::MAX {
            chain.push(u);
            u = match b.parent(u) {
                Some(Vertex::Site(p)) => p,
                _ => break,
            };
        }
        let mut d = depth[u];
        for &y in chain.iter().rev() {
            d += 1;
            depth[y] = d;
        }
        chain.clear();
        s.depth = s.depth.max(depth[x] as u64);
    }
    for &x in sites {
        depth[x] = u32::MAX;
    }
    s
}

pub fn tree_observables(config: &TreeObsConfig, range: Range<u64>, workers: usize) -> Result<TreeObservables> {
    let g = checked_box(config.dim, config.half_side, config.site_budget)?;
    let o = g.require_origin()?;
    let key = StreamKey::new(config.seed, &config.stream_tag());
    let zero = TreeObservables::empty(config, &g)?;
    run_replicas(
        workers,
        range,
        || (ForestBuilder::new(&g), vec![u32::MAX; g.num_sites()]),
        || zero.clone(),
        |(b, depth), acc, i| {
            let mut rng = key.replica(i);
            b.reset(&[o])?;
            let comp = b.explore_component(1, &mut rng)?;
            let s = summarize_component(b, o, &comp, depth);
            acc.replicas += 1;
            acc.radius.record_value((s.radius2 as f64).sqrt());
            acc.radius_sup.record_value(s.radius_sup as f64);
            acc.volume.record_value(s.volume as f64);
            acc.depth.record_value(s.depth as f64);
            acc.volume_tally.add(s.volume);
            Ok(())
        },
        |a, b| a.merge(b),
    )
}

/// `ν_L(N = k)` over a schedule of box sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveCountRow {
    pub half_side: usize,
    pub replicas: u64,
    /// `P(N = k)`, `k = 0..=k_max`.
    pub pmf: Vec<f64>,
    pub mean: f64,
    pub mean_se: f64,
    /// Exact `g_L(o,o)`.
    pub green: f64,
    /// `max_k |P_L(N=k) - P_{L'}(N=k)|` against the previous row.
    pub drift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveCountTable {
    pub dim: usize,
    pub k_max: u64,
    pub rows: Vec<WaveCountRow>,
    /// Least-squares slope and intercept of `E[N]` against `g_L(o,o)`.
    pub slope: f64,
    pub intercept: f64,
    pub checks: Checks,
}

impl WaveCountTable {
    pub fn from_runs(dim: usize, k_max: u64, runs: &[AvalancheTails]) -> Result<Self> {
        let mut rows: Vec<WaveCountRow> = Vec::new();
        let mut checks = Checks::default();
        for t in runs {
            let g = checked_box(dim, t.config.half_side, t.config.site_budget)?;
            let o = g.require_origin()?;
            let green = green_column(&g, o)?.values[o];
            let pmf = t.wave_distribution(k_max);
            let drift = rows
                .last()
                .map(|prev| prev.pmf.iter().zip(&pmf).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            checks.merge(&t.checks);
            rows.push(WaveCountRow {
                half_side: t.config.half_side,
                replicas: t.replicas,
                pmf,
                mean: t.wave_tally.mean(),
                mean_se: t.wave_tally.se(),
                green,
                drift,
            });
        }
        let (slope, intercept) = if rows.len() >= 2 {
            let x: Vec<f64> = rows.iter().map(|r| r.green).collect();
            let y: Vec<f64> = rows.iter().map(|r| r.mean).collect();
            ols(&x, &y)
        } else {
            (f64::NAN, f64::NAN)
        };
        Ok(WaveCountTable { dim, k_max, rows, slope, intercept, checks })
    }
}

/// Per-size avalanche configurations of the wave-count table.
pub fn wave_configs(dim: usize, half_sides: &[usize], seed: u64, site_budget: usize) -> Vec<TailsConfig> {
    half_sides
        .iter()
        .map(|&l| {
            let mut c = TailsConfig::new(dim, l, seed);
            c.abelian_every = 0;
            c.site_budget = site_budget;
            c
        })
        .collect()
}

/// Wave-count distribution over several box sizes (one stream per size).
pub fn wave_count_distribution(
    dim: usize,
    half_sides: &[usize],
    k_max: u64,
    replicas: u64,
    seed: u64,
    workers: usize,
) -> Result<WaveCountTable> {
    let runs = wave_configs(dim, half_sides, seed, DEFAULT_SITE_BUDGET)
        .iter()
        .map(|c| avalanche_tails(c, 0..replicas, workers))
        .collect::<Result<Vec<_>>>()?;
    WaveCountTable::from_runs(dim, k_max, &runs)
}
