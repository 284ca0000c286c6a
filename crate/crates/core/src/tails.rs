//! Survival curves, integer moment tallies and log-log exponent fits.
//!
//! A [`TailEstimate`] keeps, for every replica, the set of thresholds it
//! reached as a bitmask ("pattern"), and counts how many replicas produced
//! each pattern. Survivor counts, merges and bootstrap resamples over
//! replicas are all exact functions of the pattern counts, so results do
//! not depend on how replicas were split between workers.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Most thresholds a single estimate can carry.
pub const MAX_THRESHOLDS: usize = 64;
/// Default number of bootstrap resamples.
pub const DEFAULT_BOOTSTRAP: usize = 1000;

/// Count, sum and sum of squares of nonnegative integer samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub count: u64,
    pub sum: u128,
    pub sum_sq: u128,
}

impl Tally {
    pub fn add(&mut self, v: u64) {
        self.count += 1;
        self.sum += v as u128;
        self.sum_sq += (v as u128) * (v as u128);
    }

    pub fn merge(&mut self, other: &Tally) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        self.sum as f64 / self.count as f64
    }

    /// Sample variance (n - 1 denominator).
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        let n = self.count as f64;
        let m = self.mean();
        ((self.sum_sq as f64) - n * m * m) / (n - 1.0)
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}

/// Geometric threshold grid `start, start·f, start·f², ...` up to `max`.
pub fn geometric_grid(start: f64, factor: f64, max: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 0..MAX_THRESHOLDS as i32 {
        let mut t = start * factor.powi(k);
        // sqrt(2)^2k should be 2^k exactly, or integer observables fall below it
        if (t - t.round()).abs() <= 1e-9 * t {
            t = t.round();
        }
        if t > max * (1.0 + 1e-12) {
            break;
        }
        out.push(t);
    }
    out
}

/// Empirical survival curve (or, when `nested` is false, a family of
/// indicator frequencies sharing replicas).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub observable: String,
    /// Ascending for nested tails.
    pub thresholds: Vec<f64>,
    /// `true` when bit `i` set implies every lower bit set (survival curve).
    pub nested: bool,
    pub replicas: u64,
    /// Replica count per pattern of reached thresholds.
    pub patterns: BTreeMap<u64, u64>,
    pub seed: u64,
    pub dim: usize,
    pub half_side: usize,
}

impl TailEstimate {
    pub fn new(observable: &str, thresholds: Vec<f64>, nested: bool, seed: u64, dim: usize, half_side: usize) -> Result<Self> {
        if thresholds.is_empty() || thresholds.len() > MAX_THRESHOLDS {
            return Err(Error::InvalidArgument(format!("need 1..={MAX_THRESHOLDS} thresholds")));
        }
        if nested && thresholds.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("thresholds must be strictly increasing".into()));
        }
        Ok(TailEstimate {
            observable: observable.to_string(),
            thresholds,
            nested,
            replicas: 0,
            patterns: BTreeMap::new(),
            seed,
            dim,
            half_side,
        })
    }

    /// Same instance, no replicas.
    pub fn empty_like(&self) -> Self {
        TailEstimate { replicas: 0, patterns: BTreeMap::new(), ..self.clone() }
    }

    /// Records one replica with value `v` (nested tails: `v >= t` reaches `t`).
    pub fn record_value(&mut self, v: f64) {
        let mut mask = 0u64;
        for (i, &t) in self.thresholds.iter().enumerate() {
            // tolerate rounding in irrational thresholds such as sqrt(8)
            if v >= t * (1.0 - 1e-12) {
                mask |= 1 << i;
            }
        }
        self.record_pattern(mask);
    }

    pub fn record_pattern(&mut self, mask: u64) {
        self.replicas += 1;
        *self.patterns.entry(mask).or_insert(0) += 1;
    }

    fn check_compatible(&self, other: &TailEstimate) -> Result<()> {
        if self.thresholds != other.thresholds || self.nested != other.nested || self.observable != other.observable {
            return Err(Error::InvalidArgument(format!("cannot merge {} with {}", self.observable, other.observable)));
        }
        Ok(())
    }

    /// Adds the replicas of `other` (disjoint replica ranges).
    pub fn merge(&mut self, other: &TailEstimate) -> Result<()> {
        self.check_compatible(other)?;
        self.replicas += other.replicas;
        for (&m, &c) in &other.patterns {
            *self.patterns.entry(m).or_insert(0) += c;
        }
        Ok(())
    }

    fn survivors_from(&self, patterns: &BTreeMap<u64, u64>) -> Vec<u64> {
        (0..self.thresholds.len())
            .map(|i| patterns.iter().filter(|(&m, _)| m >> i & 1 == 1).map(|(_, &c)| c).sum())
            .collect()
    }

    pub fn survivors(&self) -> Vec<u64> {
        self.survivors_from(&self.patterns)
    }

    pub fn survival(&self) -> Vec<f64> {
        self.survivors().iter().map(|&s| s as f64 / self.replicas as f64).collect()
    }

    /// Binomial standard errors `sqrt(p(1-p)/n)`.
    pub fn standard_errors(&self) -> Vec<f64> {
        let n = self.replicas as f64;
        self.survival().iter().map(|&p| (p * (1.0 - p) / n).sqrt()).collect()
    }

    /// Rebuilds a nested tail from survivor counts (e.g. read from CSV).
    pub fn from_survivors(observable: &str, thresholds: Vec<f64>, survivors: &[u64], replicas: u64) -> Result<Self> {
        let mut t = TailEstimate::new(observable, thresholds, true, 0, 0, 0)?;
        if survivors.len() != t.thresholds.len() {
            return Err(Error::InvalidArgument("one survivor count per threshold".into()));
        }
        if survivors.windows(2).any(|w| w[1] > w[0]) || survivors.first().is_some_and(|&s| s > replicas) {
            return Err(Error::InvalidArgument("survivor counts must be nonincreasing and at most replicas".into()));
        }
        let k = survivors.len();
        let mut below = replicas;
        for i in 0..=k {
            let reach = if i < k { survivors[i] } else { 0 };
            let exact = below - reach; // reached exactly i thresholds
            if exact > 0 {
                let mask = if i == 0 { 0 } else { (u64::MAX) >> (64 - i) };
                t.patterns.insert(mask, exact);
            }
            below = reach;
        }
        t.replicas = replicas;
        Ok(t)
    }

    /// Multinomial resample of the replicas.
    pub fn resample<R: Rng + ?Sized>(&self, rng: &mut R) -> BTreeMap<u64, u64> {
        let mut left = self.replicas;
        let mut mass = self.replicas;
        let mut out = BTreeMap::new();
        for (&m, &c) in &self.patterns {
            if left == 0 {
                break;
            }
            let p = (c as f64 / mass as f64).min(1.0);
            let k = if p >= 1.0 { left } else { Binomial::new(left, p).expect("valid binomial").sample(rng) };
            if k > 0 {
                out.insert(m, k);
            }
            left -= k;
            mass -= c;
        }
        out
    }
}

/// Log-log least-squares fit of a tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub window: (f64, f64),
    /// Thresholds used.
    pub points: Vec<f64>,
    pub residuals: Vec<f64>,
    pub r_squared: f64,
    /// Percentile bootstrap interval for the slope (2.5%, 97.5%).
    pub ci: (f64, f64),
    pub resamples: usize,
    /// Resamples dropped because a window point had no survivors.
    pub dropped_resamples: usize,
}

/// Ordinary least squares `y = a + b x`; returns `(b, a)`.
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let b = sxy / sxx;
    (b, my - b * mx)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Fits `log survival = a + b log threshold` over thresholds in
/// `[window.0, window.1]`, with a bootstrap over replicas.
pub fn fit_exponent<R: Rng + ?Sized>(
    series: &TailEstimate,
    window: (f64, f64),
    resamples: usize,
    rng: &mut R,
) -> Result<ExponentFit> {
    let idx: Vec<usize> = (0..series.thresholds.len())
        .filter(|&i| series.thresholds[i] >= window.0 && series.thresholds[i] <= window.1)
        .collect();
    if idx.len() < 3 {
        return Err(Error::Degenerate(format!("{} points in window {window:?}, need 3", idx.len())));
    }
    if idx.iter().any(|&i| series.thresholds[i] <= 0.0) {
        return Err(Error::Degenerate("nonpositive threshold in window".into()));
    }
    let surv = series.survivors();
    if idx.iter().any(|&i| surv[i] == 0) {
        return Err(Error::Degenerate("zero-survival point in window".into()));
    }
    let x: Vec<f64> = idx.iter().map(|&i| series.thresholds[i].ln()).collect();
    let y_of = |s: &[u64], n: u64| -> Vec<f64> { idx.iter().map(|&i| (s[i] as f64 / n as f64).ln()).collect() };
    let y = y_of(&surv, series.replicas);
    let (slope, intercept) = ols(&x, &y);
    let residuals: Vec<f64> = x.iter().zip(&y).map(|(a, b)| b - (intercept + slope * a)).collect();
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let sse: f64 = residuals.iter().map(|r| r * r).sum();
    let r_squared = if sst > 0.0 { 1.0 - sse / sst } else { 1.0 };
    let mut slopes = Vec::with_capacity(resamples);
    let mut dropped = 0;
    for _ in 0..resamples {
        let pat = series.resample(rng);
        let s = series.survivors_from(&pat);
        if idx.iter().any(|&i| s[i] == 0) {
            dropped += 1;
            continue;
        }
        slopes.push(ols(&x, &y_of(&s, series.replicas)).0);
    }
    let ci = if slopes.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        slopes.sort_by(|a, b| a.total_cmp(b));
        (quantile(&slopes, 0.025), quantile(&slopes, 0.975))
    };
    Ok(ExponentFit {
        slope,
        intercept,
        window,
        points: idx.iter().map(|&i| series.thresholds[i]).collect(),
        residuals,
        r_squared,
        ci,
        resamples,
        dropped_resamples: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sqrt2_grid_hits_powers_of_two_and_counts_them() {
        let grid = geometric_grid(1.0, 2f64.sqrt(), 64.0);
        for k in 0..=6 {
            assert!(grid.contains(&f64::from(1u32 << k)));
        }
        let mut t = TailEstimate::new("v", grid, true, 0, 2, 1).unwrap();
        t.record_value(2.0);
        t.record_value(8f64.sqrt());
        assert_eq!(&t.survivors()[..4], &[2, 2, 2, 1]);
    }

    fn exact_series(f: impl Fn(f64) -> f64) -> TailEstimate {
        let thresholds: Vec<f64> = (1..=8).map(|k| (1u64 << k) as f64).collect();
        let replicas = 1u64 << 40;
        let surv: Vec<u64> = thresholds.iter().map(|&t| (f(t) * replicas as f64).round() as u64).collect();
        TailEstimate::from_survivors("y", thresholds, &surv, replicas).unwrap()
    }

    #[test]
    fn exact_power_law_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fit = fit_exponent(&exact_series(|t| t.powi(-2)), (2.0, 256.0), 50, &mut rng).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-9);
        let flat = fit_exponent(&exact_series(|_| 0.5), (2.0, 256.0), 50, &mut rng).unwrap();
        assert!(flat.slope.abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_bad_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = exact_series(|t| t.powi(-1));
        assert!(fit_exponent(&s, (1000.0, 2000.0), 10, &mut rng).is_err());
        let mut z = TailEstimate::new("z", vec![1.0, 2.0, 3.0], true, 0, 2, 1).unwrap();
        z.record_value(2.5);
        assert!(fit_exponent(&z, (1.0, 3.0), 10, &mut rng).is_err());
    }

    #[test]
    fn survivors_and_patterns() {
        let mut t = TailEstimate::new("r", vec![1.0, 2.0, 4.0], true, 0, 2, 1).unwrap();
        for v in [0.0, 1.0, 3.0, 5.0, 5.0] {
            t.record_value(v);
        }
        assert_eq!(t.survivors(), vec![4, 3, 2]);
        let rebuilt = TailEstimate::from_survivors("r", vec![1.0, 2.0, 4.0], &[4, 3, 2], 5).unwrap();
        assert_eq!(rebuilt.patterns, t.patterns);
        let big = TailEstimate::new("r", vec![1.0, 2.0, 4.0], true, 0, 2, 1).unwrap();
        let mut b2 = big.clone();
        b2.record_value(100.0);
        assert_eq!(b2.survivors(), vec![1, 1, 1]);
        let mut none = big.clone();
        none.record_value(0.5);
        assert_eq!(none.survivors(), vec![0, 0, 0]);
    }

    #[test]
    fn tally_moments() {
        let mut t = Tally::default();
        for v in [1, 2, 3, 4] {
            t.add(v);
        }
        assert_eq!(t.mean(), 2.5);
        assert!((t.variance() - 5.0 / 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn merge_is_order_independent(a in prop::collection::vec(0.0f64..10.0, 0..30),
                                      b in prop::collection::vec(0.0f64..10.0, 0..30),
                                      c in prop::collection::vec(0.0f64..10.0, 0..30)) {
            let base = TailEstimate::new("v", vec![1.0, 2.0, 4.0, 8.0], true, 0, 2, 1).unwrap();
            let fill = |vals: &[f64]| { let mut t = base.clone(); for &v in vals { t.record_value(v); } t };
            let (ta, tb, tc) = (fill(&a), fill(&b), fill(&c));
            let mut left = ta.clone(); left.merge(&tb).unwrap(); left.merge(&tc).unwrap();
            let mut right = tc.clone(); let mut bc = tb.clone(); bc.merge(&ta).unwrap(); right.merge(&bc).unwrap();
            prop_assert_eq!(&left, &right);
            let all: Vec<f64> = a.iter().chain(&b).chain(&c).copied().collect();
            prop_assert_eq!(left, fill(&all));
        }

        #[test]
        fn survival_is_nonincreasing(vals in prop::collection::vec(0.0f64..100.0, 1..50)) {
            let mut t = TailEstimate::new("v", geometric_grid(1.0, 2f64.sqrt(), 100.0), true, 0, 2, 1).unwrap();
            for v in vals { t.record_value(v); }
            let s = t.survivors();
            prop_assert!(s.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(s[0] <= t.replicas);
        }

        #[test]
        fn resample_preserves_total(vals in prop::collection::vec(0.0f64..10.0, 1..40), seed in 0u64..1000) {
            let mut t = TailEstimate::new("v", vec![1.0, 2.0, 4.0], true, 0, 2, 1).unwrap();
            for v in vals { t.record_value(v); }
            let r = t.resample(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(r.values().sum::<u64>(), t.replicas);
            prop_assert!(r.keys().all(|k| t.patterns.contains_key(k)));
        }
    }
}
