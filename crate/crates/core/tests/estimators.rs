use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use sandpile_lab::experiments::{
    avalanche_tails, dhar_checks, probe_greens, toppling_tree_route, wave_count_distribution, TailsConfig,
    tree_observables, TreeObsConfig, TreeRouteConfig, DEFAULT_SITE_BUDGET,
};
use sandpile_lab::laplacian::{green_column, green_exact};
use sandpile_lab::oracle::{census, chi_square, decode_config};
use sandpile_lab::sampler::SamplerKind;
use sandpile_lab::sandpile::{markov_step, HeightConfig, Stabilizer};
use sandpile_lab::tails::{fit_exponent, geometric_grid, TailEstimate};
use sandpile_lab::{build_wired_box, BoxSpec, WiredGraph};

#[test]
fn markov_chain_on_the_square_is_uniform_on_recurrent_states() {
    let g = WiredGraph::rect(&[0, 0], &[1, 1]).unwrap();
    let c = census(&g, None).unwrap();
    let index: HashMap<u64, usize> = c.recurrent_codes.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let mut cfg = HeightConfig::maximal_stable(&g);
    let mut stab = Stabilizer::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut counts = vec![0u64; 192];
    // consecutive states are correlated: keep every 21st of 10^6 steps. The
    // chain has period 2 here, so the stride must be odd.
    for step in 0..1_000_000u32 {
        markov_step(&g, &mut cfg, &mut stab, &mut rng);
        if step % 21 == 20 {
            counts[index[&sandpile_lab::oracle::config_code(&cfg.heights, 4)]] += 1;
        }
    }
    let chi = chi_square(&counts, &vec![1.0 / 192.0; 192]).unwrap();
    assert!(chi.p_value >= 0.01, "{chi:?}");
}

#[test]
fn mean_wave_count_is_the_green_function_at_l4() {
    let mut c = TailsConfig::new(2, 4, 3);
    c.probes = vec![vec![0, 0], vec![1, 0], vec![2, 1]];
    let t = avalanche_tails(&c, 0..100_000, 1).unwrap();
    assert_eq!(t.checks.failures(), 0, "{:?}", t.checks);
    let greens = probe_greens(&c).unwrap();
    for d in dhar_checks(&t, &greens, 3.0) {
        assert!(d.ok, "{d:?}");
    }
    // N and n(o,o) are the same tally
    assert_eq!(t.wave_tally, t.probe_topplings[0]);
    // o is in Av exactly when at least one wave starts
    let o = build_wired_box(BoxSpec::new(2, 4)).unwrap().origin().unwrap();
    assert_eq!(t.hits[o], t.waves.survivors()[0]);
    // Markov inequality: ν(z ∈ Av) <= E n(o,z) = g(o,z)
    let g = build_wired_box(BoxSpec::new(2, 4)).unwrap();
    for x in 0..g.num_sites() {
        let (p, se) = t.hit_probability(x);
        assert!(p <= green_exact(&g, o, x).unwrap() + 4.0 * se);
    }
}

#[test]
fn probability_of_a_wave_matches_the_census_on_the_3x3_box() {
    let g = build_wired_box(BoxSpec::new(2, 1)).unwrap();
    let o = g.origin().unwrap();
    let c = census(&g, None).unwrap();
    let full = c
        .recurrent_codes
        .iter()
        .filter(|&&k| decode_config(k, g.num_sites(), 4)[o] == 3)
        .count() as f64
        / c.recurrent as f64;
    let n = 200_000;
    let t = avalanche_tails(&TailsConfig::new(2, 1, 4), 0..n, 1).unwrap();
    let p = 1.0 - t.wave_distribution(0)[0];
    let se = (full * (1.0 - full) / n as f64).sqrt();
    assert!((p - full).abs() <= 4.0 * se, "{p} vs {full}");
}

#[test]
fn markov_and_exact_samplers_agree_at_l4() {
    let g = build_wired_box(BoxSpec::new(2, 4)).unwrap();
    let exact = avalanche_tails(&TailsConfig::new(2, 4, 5), 0..100_000, 1).unwrap();
    let mut c = TailsConfig::new(2, 4, 5);
    c.sampler = SamplerKind::default_markov(&g);
    let markov = avalanche_tails(&c, 0..20_000, 1).unwrap();
    assert_eq!(markov.checks.failures(), 0);
    for (a, b, name) in [
        (&exact.wave_tally, &markov.wave_tally, "N"),
        (&exact.size_tally, &markov.size_tally, "S"),
    ] {
        let z = (a.mean() - b.mean()) / (a.se().powi(2) + b.se().powi(2)).sqrt();
        assert!(z.abs() <= 3.0, "{name}: z = {z}");
    }
    for (k, (p, q)) in exact.radius.survival().iter().zip(markov.radius.survival()).enumerate() {
        let se = (p * (1.0 - p) / exact.replicas as f64 + q * (1.0 - q) / markov.replicas as f64).sqrt();
        assert!((p - q).abs() <= 3.0 * se.max(1e-9), "radius threshold {k}: {p} vs {q}");
    }
}

#[test]
fn sandpile_dominates_the_tree_bound() {
    let targets = vec![vec![2, 0], vec![4, 0], vec![2, 2]];
    let mut c = TailsConfig::new(2, 8, 7);
    c.abelian_every = 0;
    let sand = avalanche_tails(&c, 0..40_000, 1).unwrap();
    let route = TreeRouteConfig { dim: 2, half_side: 8, seed: 7, targets: targets.clone(), site_budget: DEFAULT_SITE_BUDGET };
    let tree = toppling_tree_route(&route, 0..40_000, 1).unwrap();
    let g = build_wired_box(BoxSpec::new(2, 8)).unwrap();
    let o = g.origin().unwrap();
    for (k, z) in targets.iter().enumerate() {
        let x = g.site_at(&[z[0] + g.coords(o)[0], z[1] + g.coords(o)[1]]).unwrap();
        let (p, se) = sand.hit_probability(x);
        let (lb, lb_se) = tree.lower_bound(k);
        assert!(p + 3.0 * (se * se + lb_se * lb_se).sqrt() >= lb, "z = {z:?}: {p} < {lb}");
        let (pa, _) = tree.conditional_any(k);
        assert!(pa > 0.0 && pa < 1.0);
    }
    assert!(tree.e_out <= tree.any_out && tree.any_out <= tree.replicas);
}

#[test]
fn wave_count_table_reports_drift_and_regression() {
    let t = wave_count_distribution(2, &[2, 4], 6, 5_000, 9, 1).unwrap();
    assert_eq!(t.rows.len(), 2);
    assert!(t.rows[0].drift.is_none());
    let drift = t.rows[1].drift.unwrap();
    assert!((0.0..=1.0).contains(&drift));
    for r in &t.rows {
        assert!((r.pmf.iter().sum::<f64>() - 1.0).abs() < 0.02);
        assert!(r.green > 0.0);
    }
    assert!(t.slope.is_finite());
    assert_eq!(t.checks.failures(), 0);
}

#[test]
fn bootstrap_interval_covers_a_planted_power_law() {
    let alpha = 0.75;
    let thresholds = geometric_grid(1.0, 2.0, 256.0);
    let u = Uniform::new(0.0f64, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut covered = 0;
    for _ in 0..100 {
        let mut t = TailEstimate::new("planted", thresholds.clone(), true, 0, 2, 0).unwrap();
        for _ in 0..20_000 {
            // P(V >= t) = t^{-alpha} for t >= 1
            let v = (1.0 - u.sample(&mut rng)).powf(-1.0 / alpha);
            t.record_value(v);
        }
        let fit = fit_exponent(&t, (2.0, 128.0), 1000, &mut rng).unwrap();
        covered += (fit.ci.0 <= -alpha && -alpha <= fit.ci.1) as u32;
    }
    assert!(covered >= 93, "coverage {covered}/100");
}

#[test]
fn mean_tree_volume_is_the_normalised_green_column() {
    // under the two-root forest x joins T_o exactly when the walk from x
    // hits o before the sink, so E|T_o| = sum_x g(x,o) / g(o,o)
    for (dim, half) in [(3, 4), (5, 3)] {
        let config = TreeObsConfig { dim, half_side: half, seed: 11, site_budget: DEFAULT_SITE_BUDGET };
        let obs = tree_observables(&config, 0..20_000, 1).unwrap();
        let g = build_wired_box(BoxSpec::new(dim, half)).unwrap();
        let o = g.require_origin().unwrap();
        let col = green_column(&g, o).unwrap().values;
        let expected: f64 = col.iter().sum::<f64>() / col[o];
        let (mean, se) = (obs.volume_tally.mean(), obs.volume_tally.se());
        assert!((mean - expected).abs() <= 4.0 * se, "d={dim}: {mean} ± {se} vs {expected}");
        assert_eq!(obs.volume.survivors()[0], 20_000);
    }
}
