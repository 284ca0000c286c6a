//! Exhaustive enumeration on tiny graphs, and chi-square tests.
//!
//! Everything here is brute force on purpose: spanning forests are found by
//! scanning all parent-slot assignments and rejecting cycles, independently
//! of the burning bijection, so the oracle can check it.

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::forest::{RootedForest, ROOT};
use crate::laplacian::{green_rational, spanning_tree_count_exact};
use crate::lattice::WiredGraph;
use crate::sandpile::{is_recurrent, is_recurrent_primed, HeightConfig};
use crate::waves::{last_wave_test, IntermediateConfig};

/// Largest graph the census will scan.
pub const CENSUS_SITE_LIMIT: usize = 12;
/// Largest object list kept in a census.
pub const CENSUS_LIST_LIMIT: usize = 1_000_000;

/// Iterates over all vectors in `0..base` of length `n`, first entry fastest.
fn odometer_codes(n: usize, base: u64) -> impl Iterator<Item = Vec<u64>> {
    let mut cur = vec![0u64; n];
    let mut done = false;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        let out = cur.clone();
        done = true;
        for c in cur.iter_mut() {
            *c += 1;
            if *c < base {
                done = false;
                break;
            }
            *c = 0;
        }
        Some(out)
    })
}

/// Integer code of a height vector, lexicographic with site 0 least
/// significant.
pub fn config_code(heights: &[u64], base: u64) -> u64 {
    heights.iter().rev().fold(0, |acc, &h| acc * base + h)
}

/// Inverse of [`config_code`].
pub fn decode_config(mut code: u64, n: usize, base: u64) -> Vec<u64> {
    (0..n)
        .map(|_| {
            let h = code % base;
            code /= base;
            h
        })
        .collect()
}

fn check_size(g: &WiredGraph) -> Result<()> {
    if g.num_sites() > CENSUS_SITE_LIMIT {
        return Err(Error::ExactTooLarge { sites: g.num_sites(), limit: CENSUS_SITE_LIMIT });
    }
    Ok(())
}

/// All spanning forests of `g` rooted at the sink plus `roots`, by brute
/// force over parent slots.
pub fn enumerate_forests(g: &WiredGraph, roots: &[usize]) -> Result<Vec<RootedForest>> {
    check_size(g)?;
    let n = g.num_sites();
    let free: Vec<usize> = (0..n).filter(|x| !roots.contains(x)).collect();
    let mut out = Vec::new();
    for slots in odometer_codes(free.len(), g.degree() as u64) {
        let mut parent = vec![ROOT; n];
        for (&x, &s) in free.iter().zip(&slots) {
            parent[x] = s as u8;
        }
        let f = RootedForest::from_parents(parent);
        if f.validate(g).is_ok() {
            out.push(f);
        }
    }
    Ok(out)
}

/// Exact counts and object lists for a tiny wired graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExhaustiveCensus {
    pub sites: usize,
    pub degree: usize,
    pub marked: Option<usize>,
    pub stable: u64,
    pub recurrent: u64,
    pub trees: u64,
    /// `det Δ` (exact, decimal).
    pub det: String,
    /// Intermediate configurations at the marked site.
    pub intermediate: Option<u64>,
    /// Forests rooted at the marked site and the sink.
    pub two_root_forests: Option<u64>,
    /// `det Δ'` for the marked site.
    pub det_primed: Option<String>,
    /// `g(w,w)` as a reduced fraction.
    pub green_ww: Option<String>,
    /// Intermediate configurations whose wave is the last one.
    pub last_waves: Option<u64>,
    /// Codes of recurrent configurations (see [`config_code`], base 2d).
    pub recurrent_codes: Vec<u64>,
    /// Codes of intermediate configurations (base 2d+1).
    pub intermediate_codes: Vec<u64>,
}

impl ExhaustiveCensus {
    /// Checks `|R| = det Δ = #trees` and, with a marked site,
    /// `|R' \ R| = det Δ' - det Δ = #forests = g(w,w)·|R|`.
    pub fn check_identities(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Invariant(m));
        if self.recurrent.to_string() != self.det || self.trees != self.recurrent {
            return fail(format!("recurrent {} trees {} det {}", self.recurrent, self.trees, self.det));
        }
        if let (Some(i), Some(f), Some(dp), Some(gw)) =
            (self.intermediate, self.two_root_forests, &self.det_primed, &self.green_ww)
        {
            let dp: BigInt = dp.parse().map_err(|_| Error::Invariant("bad det".into()))?;
            let det: BigInt = self.det.parse().map_err(|_| Error::Invariant("bad det".into()))?;
            if BigInt::from(i) != &dp - &det || f != i {
                return fail(format!("intermediate {i} forests {f} det' {dp}"));
            }
            let gw: num_rational::BigRational = gw.parse().map_err(|_| Error::Invariant("bad g".into()))?;
            if gw * num_rational::BigRational::from_integer(det) != num_rational::BigRational::from_integer(i.into()) {
                return fail("g(w,w)·|R| differs from |R' \\ R|".into());
            }
        }
        Ok(())
    }
}

/// Exhaustive census of `g`, optionally with a marked site for the
/// intermediate configurations and two-root forests.
pub fn census(g: &WiredGraph, marked: Option<usize>) -> Result<ExhaustiveCensus> {
    check_size(g)?;
    let n = g.num_sites();
    let deg = g.degree() as u64;
    if let Some(w) = marked {
        if w >= n {
            return Err(Error::InvalidArgument(format!("marked site {w} not in graph")));
        }
    }
    let mut stable = 0u64;
    let mut recurrent = 0u64;
    let mut recurrent_codes = Vec::new();
    for h in odometer_codes(n, deg) {
        stable += 1;
        let cfg = HeightConfig::new(h);
        if is_recurrent(g, &cfg)?.0 {
            recurrent += 1;
            if recurrent_codes.len() < CENSUS_LIST_LIMIT {
                recurrent_codes.push(config_code(&cfg.heights, deg));
            }
        }
    }
    let trees = enumerate_forests(g, &[])?.len() as u64;
    let det = spanning_tree_count_exact(g, None)?;
    let mut out = ExhaustiveCensus {
        sites: n,
        degree: deg as usize,
        marked,
        stable,
        recurrent,
        trees,
        det: det.to_string(),
        intermediate: None,
        two_root_forests: None,
        det_primed: None,
        green_ww: None,
        last_waves: None,
        recurrent_codes,
        intermediate_codes: Vec::new(),
    };
    if let Some(w) = marked {
        let mut codes = Vec::new();
        let mut last = 0u64;
        for mut h in odometer_codes(n - 1, deg) {
            h.insert(w, deg);
            let cfg = HeightConfig::new(h);
            if is_recurrent_primed(g, &cfg, w)? {
                codes.push(config_code(&cfg.heights, deg + 1));
                if last_wave_test(g, &IntermediateConfig::new(g, cfg, w)?)? {
                    last += 1;
                }
            }
        }
        out.intermediate = Some(codes.len() as u64);
        out.intermediate_codes = codes;
        out.last_waves = Some(last);
        out.two_root_forests = Some(enumerate_forests(g, &[w])?.len() as u64);
        out.det_primed = Some(spanning_tree_count_exact(g, Some(w))?.to_string());
        out.green_ww = Some(green_rational(g, w, w)?.to_string());
    }
    Ok(out)
}

/// Pearson chi-square test result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

fn chi_tail(statistic: f64, dof: usize) -> Result<f64> {
    if dof == 0 {
        return Err(Error::Degenerate("chi-square test needs at least two categories".into()));
    }
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Degenerate(e.to_string()))?;
    Ok(dist.sf(statistic))
}

/// Goodness of fit of `observed` counts to probabilities `expected`.
/// Categories with zero expected probability must be empty.
pub fn chi_square(observed: &[u64], expected: &[f64]) -> Result<ChiSquare> {
    if observed.len() != expected.len() {
        return Err(Error::InvalidArgument("category count mismatch".into()));
    }
    let sum: f64 = expected.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || expected.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::InvalidArgument(format!("expected probabilities sum to {sum}")));
    }
    let total: u64 = observed.iter().sum();
    let live = expected.iter().filter(|&&p| p > 0.0).count();
    if (total as f64) < 5.0 * live as f64 {
        return Err(Error::Degenerate(format!("{total} observations for {live} categories")));
    }
    let mut stat = 0.0;
    for (&o, &p) in observed.iter().zip(expected) {
        if p == 0.0 {
            if o > 0 {
                return Err(Error::Degenerate("observation in a zero-probability category".into()));
            }
            continue;
        }
        let e = p * total as f64;
        stat += (o as f64 - e).powi(2) / e;
    }
    let dof = live - 1;
    Ok(ChiSquare { statistic: stat, dof, p_value: chi_tail(stat, dof)? })
}

/// Two-sample homogeneity test: are `a` and `b` draws from one law?
pub fn chi_square_homogeneity(a: &[u64], b: &[u64]) -> Result<ChiSquare> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument("category count mismatch".into()));
    }
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("empty sample".into()));
    }
    let mut stat = 0.0;
    let mut live = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let t = (x + y) as f64;
        if t == 0.0 {
            continue;
        }
        live += 1;
        let (ea, eb) = (t * na / (na + nb), t * nb / (na + nb));
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
    }
    let dof = live.saturating_sub(1);
    Ok(ChiSquare { statistic: stat, dof, p_value: chi_tail(stat, dof)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_wired_box, BoxSpec};

    fn square() -> WiredGraph {
        WiredGraph::rect(&[0, 0], &[1, 1]).unwrap()
    }

    #[test]
    fn square_census() {
        let c = census(&square(), Some(0)).unwrap();
        assert_eq!((c.stable, c.recurrent, c.trees), (256, 192, 192));
        assert_eq!(c.det, "192");
        assert_eq!(c.intermediate, Some(56));
        assert_eq!(c.two_root_forests, Some(56));
        assert_eq!(c.det_primed.as_deref(), Some("248"));
        assert_eq!(c.green_ww.as_deref(), Some("7/24"));
        let last = c.last_waves.unwrap();
        assert!((48..=192).contains(&last), "{last}");
        c.check_identities().unwrap();
    }

    #[test]
    fn domino_and_corner_census() {
        let domino = WiredGraph::rect(&[0, 0], &[0, 1]).unwrap();
        let c = census(&domino, Some(1)).unwrap();
        assert_eq!(c.recurrent, 15);
        c.check_identities().unwrap();
        let g3 = build_wired_box(BoxSpec::new(2, 1)).unwrap();
        let c3 = census(&g3, Some(g3.origin().unwrap())).unwrap();
        c3.check_identities().unwrap();
        assert!(census(&build_wired_box(BoxSpec::new(2, 2)).unwrap(), None).is_err());
    }

    #[test]
    fn codes_round_trip() {
        let h = vec![3, 0, 2, 1];
        assert_eq!(decode_config(config_code(&h, 4), 4, 4), h);
    }

    #[test]
    fn chi_square_edge_cases() {
        let r = chi_square(&[25, 25, 50], &[0.25, 0.25, 0.5]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        assert!(chi_square(&[1, 1], &[0.5, 0.5]).is_err());
        assert!(chi_square(&[10, 10], &[0.5, 0.6]).is_err());
        assert!(chi_square(&[10, 10, 1], &[0.5, 0.5, 0.0]).is_err());
        let biased = chi_square(&[10_000, 0], &[0.5, 0.5]).unwrap();
        assert!(biased.p_value < 1e-100);
        let h = chi_square_homogeneity(&[100, 200], &[100, 200]).unwrap();
        assert_eq!(h.statistic, 0.0);
    }
}
