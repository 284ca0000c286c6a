//! Samplers for the stationary sandpile measure `ν_L`.
//!
//! The exact sampler draws a uniform spanning tree with Wilson's algorithm
//! and maps it to a recurrent configuration with the inverse burning
//! bijection. The Markov sampler runs the sandpile chain from the maximal
//! stable configuration and is kept as an independent cross-check.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::bijection::inverse_burning;
use crate::error::Result;
use crate::forest::RootedForest;
use crate::lattice::WiredGraph;
use crate::sandpile::{markov_step, HeightConfig, Stabilizer};
use crate::walk::SlotSource;
use crate::wilson::ForestBuilder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SamplerKind {
    /// Wilson followed by inverse burning.
    Exact,
    /// Sandpile chain from `η ≡ 2d-1`, `burn_in` additions per sample.
    Markov { burn_in: u64 },
}

impl SamplerKind {
    /// The default chain length, `10·|V|`.
    pub fn default_markov(g: &WiredGraph) -> Self {
        SamplerKind::Markov { burn_in: 10 * g.num_sites() as u64 }
    }

    pub fn label(&self) -> String {
        match self {
            SamplerKind::Exact => "exact".into(),
            SamplerKind::Markov { burn_in } => format!("markov{burn_in}"),
        }
    }
}

/// Reusable sampler of `ν_L`.
#[derive(Debug)]
pub struct StationarySampler<'g> {
    kind: SamplerKind,
    builder: ForestBuilder<'g>,
    stab: Stabilizer,
    period: usize,
}

impl<'g> StationarySampler<'g> {
    pub fn new(g: &'g WiredGraph, kind: SamplerKind) -> Self {
        StationarySampler { kind, builder: ForestBuilder::new(g), stab: Stabilizer::new(), period: chain_period(g) }
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    /// A uniform spanning tree of the wired graph.
    pub fn tree<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> Result<RootedForest> {
        self.builder.reset(&[])?;
        self.builder.finish(rng)
    }

    pub fn sample<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> Result<HeightConfig> {
        let g = self.builder.graph();
        match self.kind {
            SamplerKind::Exact => {
                let tree = self.tree(rng)?;
                inverse_burning(g, &tree)
            }
            SamplerKind::Markov { burn_in } => {
                let mut cfg = HeightConfig::maximal_stable(g);
                // a uniform number of extra steps mod the period reaches every coset
                let extra = SlotSource::new(self.period).draw(rng) as u64;
                for _ in 0..burn_in + extra {
                    markov_step(g, &mut cfg, &mut self.stab, rng);
                }
                Ok(cfg)
            }
        }
    }
}

/// Period of the sandpile chain: `x -> 1` sends every toppling vector
/// `Δ e_y` to its sink-edge count, so additions are periodic modulo the gcd
/// of those counts (2 on the 2x2 square).
pub fn chain_period(g: &WiredGraph) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    (0..g.num_sites()).fold(0, |p, x| gcd(p, g.sink_edges(x))).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::config_code;
    use crate::sandpile::is_recurrent;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn samples_are_recurrent() {
        let g = crate::lattice::build_wired_box(crate::lattice::BoxSpec::new(2, 3)).unwrap();
        for kind in [SamplerKind::Exact, SamplerKind::default_markov(&g)] {
            let mut s = StationarySampler::new(&g, kind);
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            for _ in 0..20 {
                let cfg = s.sample(&mut rng).unwrap();
                assert!(is_recurrent(&g, &cfg).unwrap().0);
            }
        }
    }

    #[test]
    fn exact_sampler_hits_every_recurrent_state_on_the_square() {
        let g = WiredGraph::rect(&[0, 0], &[1, 1]).unwrap();
        let mut s = StationarySampler::new(&g, SamplerKind::Exact);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..20_000 {
            seen.insert(config_code(&s.sample(&mut rng).unwrap().heights, 4));
        }
        assert_eq!(seen.len(), 192);
    }

    #[test]
    fn markov_sampler_reaches_both_cosets_on_the_square() {
        let g = WiredGraph::rect(&[0, 0], &[1, 1]).unwrap();
        assert_eq!(chain_period(&g), 2);
        assert_eq!(chain_period(&crate::lattice::build_wired_box(crate::lattice::BoxSpec::new(2, 2)).unwrap()), 1);
        let mut s = StationarySampler::new(&g, SamplerKind::Markov { burn_in: 40 });
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..20_000 {
            seen.insert(config_code(&s.sample(&mut rng).unwrap().heights, 4));
        }
        assert_eq!(seen.len(), 192);
    }
}
