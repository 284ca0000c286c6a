//! Wave decomposition of avalanches and intermediate configurations.
//!
//! A wave is produced by toppling the source `w` once and then carrying out
//! every toppling possible without toppling `w` again. The configuration
//! seen just before each wave is an intermediate configuration: it has
//! `η(w) = 2d`, so it is stable on the primed graph `H'` (where `w` has one
//! extra sink edge) but unstable at `w` on `H`. Configurations are kept on
//! `H` together with the marked vertex; `H'` is never materialized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{WiredGraph, SINK};
use crate::sandpile::{HeightConfig, Odometer, Schedule, Stabilizer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveRecord {
    /// 1-based wave index.
    pub index: usize,
    /// Toppled sites, ascending; each topples exactly once in the wave.
    pub sites: Vec<usize>,
    pub last_wave: bool,
}

/// `η* ∈ R'_H \ R_H`, stored on `H` with the marked vertex `w`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntermediateConfig {
    pub config: HeightConfig,
    pub marked: usize,
}

impl IntermediateConfig {
    /// Validates the height conditions: `η(w) = 2d`, all other sites stable.
    pub fn new(g: &WiredGraph, config: HeightConfig, marked: usize) -> Result<Self> {
        config.check_len(g)?;
        let deg = g.degree() as u64;
        if marked >= g.num_sites() {
            return Err(Error::InvalidArgument(format!("marked site {marked} not in graph")));
        }
        if config.heights[marked] != deg {
            return Err(Error::NotIntermediate(format!(
                "height at marked site is {}, expected {deg}",
                config.heights[marked]
            )));
        }
        if let Some(x) = (0..g.num_sites()).find(|&x| x != marked && config.heights[x] >= deg) {
            return Err(Error::NotStable(x));
        }
        Ok(IntermediateConfig { config, marked })
    }
}

#[derive(Debug, Clone)]
pub struct WaveDecomposition {
    pub waves: Vec<WaveRecord>,
    pub intermediates: Vec<IntermediateConfig>,
    /// `a_w η`.
    pub final_config: HeightConfig,
    /// Odometer of the whole avalanche (sum of the waves).
    pub odometer: Odometer,
}

impl WaveDecomposition {
    pub fn count(&self) -> usize {
        self.waves.len()
    }

    /// `Σ_k 1{y ∈ W_k}` for every site.
    pub fn multiplicities(&self, n: usize) -> Vec<u64> {
        let mut m = vec![0u64; n];
        for w in &self.waves {
            for &y in &w.sites {
                m[y] += 1;
            }
        }
        m
    }
}

/// Runs one wave from `cfg` (which must have `cfg(w) >= 2d`) in place.
/// Returns the toppled set; `odo` accumulates the topplings.
fn run_wave(
    g: &WiredGraph,
    cfg: &mut HeightConfig,
    w: usize,
    stab: &mut Stabilizer,
    mask: &[bool],
    scratch: &mut Odometer,
) -> Result<Vec<usize>> {
    let deg = g.degree() as u64;
    cfg.heights[w] -= deg;
    for &y in g.neighbors_raw(w) {
        if y != SINK {
            cfg.heights[y as usize] += 1;
        }
    }
    scratch.counts.iter_mut().for_each(|c| *c = 0);
    stab.run(g, cfg, scratch, Some(mask), Schedule::BatchedFifo);
    let mut sites = vec![w];
    for (x, &c) in scratch.counts.iter().enumerate() {
        match c {
            0 => {}
            1 => sites.push(x),
            _ => {
                return Err(Error::Invariant(format!("site {x} toppled {c} times in one wave")));
            }
        }
    }
    sites.sort_unstable();
    Ok(sites)
}

/// Set of sites toppled in `a'_w(η*)`: one forced toppling of `w`, then
/// all topplings that avoid `w`.
pub fn wave_of(g: &WiredGraph, eta: &IntermediateConfig) -> Result<Vec<usize>> {
    let mut cfg = eta.config.clone();
    let mask = mask_without(g, eta.marked);
    let mut scratch = Odometer::zero(g.num_sites());
    run_wave(g, &mut cfg, eta.marked, &mut Stabilizer::new(), &mask, &mut scratch)
}

fn mask_without(g: &WiredGraph, w: usize) -> Vec<bool> {
    let mut mask = vec![true; g.num_sites()];
    mask[w] = false;
    mask
}

/// Decomposes the avalanche of `cfg + 1_w` into waves.
pub fn decompose_waves(g: &WiredGraph, cfg: &HeightConfig, w: usize) -> Result<WaveDecomposition> {
    cfg.check_stable(g)?;
    if w >= g.num_sites() {
        return Err(Error::InvalidArgument(format!("site {w} not in graph")));
    }
    let deg = g.degree() as u64;
    let n = g.num_sites();
    let mask = mask_without(g, w);
    let mut stab = Stabilizer::new();
    let mut scratch = Odometer::zero(n);
    let mut odometer = Odometer::zero(n);
    let mut current = cfg.clone();
    current.heights[w] += 1;
    let mut waves = Vec::new();
    let mut intermediates = Vec::new();
    while current.heights[w] >= deg {
        intermediates.push(IntermediateConfig { config: current.clone(), marked: w });
        let sites = run_wave(g, &mut current, w, &mut stab, &mask, &mut scratch)?;
        for &x in &sites {
            odometer.counts[x] += 1;
        }
        waves.push(WaveRecord { index: waves.len() + 1, sites, last_wave: false });
    }
    if let Some(last) = waves.last_mut() {
        last.last_wave = true;
    }
    Ok(WaveDecomposition { waves, intermediates, final_config: current, odometer })
}

/// Wave sizes and per-site wave multiplicities of one avalanche.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WaveProfile {
    pub sizes: Vec<usize>,
    /// `Σ_k 1{y ∈ W_k}` per site.
    pub multiplicities: Odometer,
    pub final_config: HeightConfig,
}

/// Like [`decompose_waves`] but keeps only sizes and multiplicities, for
/// use inside Monte Carlo loops.
pub fn wave_profile(g: &WiredGraph, cfg: &HeightConfig, w: usize, stab: &mut Stabilizer) -> Result<WaveProfile> {
    cfg.check_stable(g)?;
    if w >= g.num_sites() {
        return Err(Error::InvalidArgument(format!("site {w} not in graph")));
    }
    let deg = g.degree() as u64;
    let n = g.num_sites();
    let mask = mask_without(g, w);
    let mut scratch = Odometer::zero(n);
    let mut multiplicities = Odometer::zero(n);
    let mut current = cfg.clone();
    current.heights[w] += 1;
    let mut sizes = Vec::new();
    while current.heights[w] >= deg {
        let sites = run_wave(g, &mut current, w, stab, &mask, &mut scratch)?;
        for &x in &sites {
            multiplicities.counts[x] += 1;
        }
        sizes.push(sites.len());
    }
    Ok(WaveProfile { sizes, multiplicities, final_config: current })
}

/// A wave is the last one iff some neighbour of `w` (the sink included) is
/// outside it.
pub fn last_wave_test(g: &WiredGraph, eta: &IntermediateConfig) -> Result<bool> {
    let w = eta.marked;
    if g.sink_edges(w) > 0 {
        return Ok(true);
    }
    let wave = wave_of(g, eta)?;
    let mut inside = vec![false; g.num_sites()];
    for &x in &wave {
        inside[x] = true;
    }
    Ok(g.neighbors_raw(w).iter().any(|&y| y == SINK || !inside[y as usize]))
}

/// `n(w, .)`: the odometer of `a_w`.
pub fn toppling_counts(g: &WiredGraph, cfg: &HeightConfig, w: usize) -> Result<Odometer> {
    let (_, _, odo) = crate::sandpile::add_and_stabilize(g, cfg, w)?;
    Ok(odo)
}
