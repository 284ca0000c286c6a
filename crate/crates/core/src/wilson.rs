//! Wilson's algorithm for uniform rooted spanning forests.
//!
//! [`ForestBuilder`] grows the forest one branch at a time. Each branch is
//! the loop erasure of a walk that stops on the current tree, computed with
//! last-exit pointers: the walk overwrites `next[u]` at every departure, and
//! following `next` from the start afterwards traces exactly the
//! chronological loop erasure. The order in which branches are started may
//! depend on the forest built so far, which lets observables of a single
//! rooted component be sampled without building the rest of the forest.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::forest::{RootedForest, ROOT};
use crate::lattice::{Vertex, WiredGraph, SINK};
use crate::walk::{SlotSource, DEFAULT_STEP_CAP};

/// Component label of sites not yet in the forest.
pub const UNLABELED: u32 = u32::MAX;
/// Component label of the sink's tree.
pub const SINK_LABEL: u32 = 0;

/// Incremental Wilson sampler with reusable buffers.
///
/// Site roots get labels `1, 2, ...` in the order given to [`reset`].
///
/// [`reset`]: ForestBuilder::reset
#[derive(Debug, Clone)]
pub struct ForestBuilder<'g> {
    g: &'g WiredGraph,
    label: Vec<u32>,
    next: Vec<u8>,
    touched: Vec<u32>,
    slots: SlotSource,
    cap: u64,
    steps: u64,
}

impl<'g> ForestBuilder<'g> {
    pub fn new(g: &'g WiredGraph) -> Self {
        ForestBuilder {
            g,
            label: vec![UNLABELED; g.num_sites()],
            next: vec![ROOT; g.num_sites()],
            touched: Vec::new(),
            slots: SlotSource::new(g.degree()),
            cap: DEFAULT_STEP_CAP,
            steps: 0,
        }
    }

    pub fn with_step_cap(mut self, cap: u64) -> Self {
        self.cap = cap;
        self
    }

    /// Clears the forest (in time proportional to its size) and installs
    /// the given site roots. The sink is always a root.
    pub fn reset(&mut self, roots: &[usize]) -> Result<()> {
        for &x in &self.touched {
            self.label[x as usize] = UNLABELED;
            self.next[x as usize] = ROOT;
        }
        self.touched.clear();
        self.slots = SlotSource::new(self.g.degree());
        self.steps = 0;
        for (i, &r) in roots.iter().enumerate() {
            if r >= self.g.num_sites() {
                return Err(Error::InvalidArgument(format!("root {r} not in graph")));
            }
            if self.label[r] != UNLABELED {
                return Err(Error::InvalidArgument(format!("root {r} listed twice")));
            }
            self.label[r] = i as u32 + 1;
            self.touched.push(r as u32);
        }
        Ok(())
    }

    pub fn graph(&self) -> &'g WiredGraph {
        self.g
    }

    /// Component label of `x`, or [`UNLABELED`].
    #[inline]
    pub fn label(&self, x: usize) -> u32 {
        self.label[x]
    }

    #[inline]
    pub fn in_forest(&self, x: usize) -> bool {
        self.label[x] != UNLABELED
    }

    /// Parent vertex of a forest site that is not a root.
    pub fn parent(&self, x: usize) -> Option<Vertex> {
        (self.in_forest(x) && self.next[x] != ROOT).then(|| self.g.neighbor(x, self.next[x] as usize))
    }

    /// Sites currently in the forest (roots included), in insertion order.
    pub fn sites(&self) -> impl Iterator<Item = usize> + '_ {
        self.touched.iter().map(|&x| x as usize)
    }

    /// Walk steps used since the last reset.
    pub fn walk_steps(&self) -> u64 {
        self.steps
    }

    /// Adds the branch from `x` and returns the label it joined. Sites
    /// already in the forest are left alone. `on_site` sees every site that
    /// joins, in path order from `x`.
    pub fn attach_with<R: RngCore + ?Sized>(
        &mut self,
        x: usize,
        rng: &mut R,
        mut on_site: impl FnMut(usize),
    ) -> Result<u32> {
        if self.label[x] != UNLABELED {
            return Ok(self.label[x]);
        }
        let deg = self.g.degree();
        let nbr = self.g.neighbor_table();
        let mut u = x;
        let lab = loop {
            if self.steps >= self.cap {
                return Err(Error::StepCap(self.cap));
            }
            self.steps += 1;
            let slot = self.slots.draw(rng);
            self.next[u] = slot as u8;
            let v = nbr[u * deg + slot];
            if v == SINK {
                break SINK_LABEL;
            }
            let l = self.label[v as usize];
            if l != UNLABELED {
                break l;
            }
            u = v as usize;
        };
        let mut u = x;
        loop {
            self.label[u] = lab;
            self.touched.push(u as u32);
            on_site(u);
            let v = nbr[u * deg + self.next[u] as usize];
            if v == SINK || self.label[v as usize] != UNLABELED {
                break;
            }
            u = v as usize;
        }
        Ok(lab)
    }

    pub fn attach<R: RngCore + ?Sized>(&mut self, x: usize, rng: &mut R) -> Result<u32> {
        self.attach_with(x, rng, |_| {})
    }

    /// The forest path from `x` to its root.
    pub fn branch(&self, x: usize) -> Vec<Vertex> {
        let mut path = vec![Vertex::Site(x)];
        let mut u = x;
        while self.in_forest(u) && self.next[u] != ROOT {
            match self.g.neighbor(u, self.next[u] as usize) {
                Vertex::Sink => {
                    path.push(Vertex::Sink);
                    break;
                }
                Vertex::Site(p) => {
                    path.push(Vertex::Site(p));
                    u = p;
                }
            }
        }
        path
    }

    /// Completes the forest in row-major order and returns it.
    pub fn finish<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> Result<RootedForest> {
        for x in 0..self.g.num_sites() {
            self.attach(x, rng)?;
        }
        Ok(RootedForest::from_parents(self.next.clone()))
    }

    /// Grows the tree of the root with label `lab` until it is complete,
    /// returning its sites. Only walks started next to that tree are run,
    /// so the cost scales with the component rather than the graph.
    pub fn explore_component<R: RngCore + ?Sized>(&mut self, lab: u32, rng: &mut R) -> Result<Vec<usize>> {
        let mut comp: Vec<usize> = self.sites().filter(|&x| self.label[x] == lab).collect();
        let mut frontier: Vec<usize> = Vec::new();
        let mut scan = 0;
        while scan < comp.len() {
            let y = comp[scan];
            scan += 1;
            for &v in self.g.neighbors_raw(y) {
                if v != SINK && self.label[v as usize] == UNLABELED {
                    frontier.push(v as usize);
                }
            }
            while let Some(z) = frontier.pop() {
                if self.label[z] != UNLABELED {
                    continue;
                }
                let mut joined = Vec::new();
                let got = self.attach_with(z, rng, |s| joined.push(s))?;
                if got == lab {
                    comp.extend(joined);
                }
            }
        }
        Ok(comp)
    }
}

/// A uniform spanning forest of `g` rooted at the sink and `roots`.
/// `order` (default: row-major) sets the walk starting order; sites missing
/// from it are handled afterwards in row-major order. The law does not
/// depend on the order.
pub fn wilson<R: RngCore + ?Sized>(
    g: &WiredGraph,
    roots: &[usize],
    order: Option<&[usize]>,
    rng: &mut R,
) -> Result<RootedForest> {
    let mut b = ForestBuilder::new(g);
    b.reset(roots)?;
    if let Some(order) = order {
        for &x in order {
            if x >= g.num_sites() {
                return Err(Error::InvalidArgument(format!("site {x} not in graph")));
            }
            b.attach(x, rng)?;
        }
    }
    b.finish(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_wired_box, BoxSpec};
    use crate::walk::{lerw, loop_erase, srw, LerwOutcome, TargetSet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_branch_is_the_chronological_loop_erasure() {
        let g = build_wired_box(BoxSpec::new(2, 5)).unwrap();
        let o = g.origin().unwrap();
        let target = TargetSet::sink_only(&g);
        let mut b = ForestBuilder::new(&g);
        for seed in 0..100 {
            b.reset(&[]).unwrap();
            b.attach(o, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let walk = srw(&g, o, &target, None, DEFAULT_STEP_CAP, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(b.branch(o), loop_erase(&walk.vertices));
            let LerwOutcome::Path(p) =
                lerw(&g, o, &target, None, DEFAULT_STEP_CAP, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
            else {
                panic!()
            };
            assert_eq!(b.branch(o), p.vertices);
        }
    }

    #[test]
    fn forests_are_valid_and_respect_roots() {
        let g = build_wired_box(BoxSpec::new(3, 2)).unwrap();
        let o = g.origin().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let f = wilson(&g, &[o], None, &mut rng).unwrap();
            f.validate(&g).unwrap();
            assert_eq!(f.site_roots(), vec![o]);
            assert_eq!(f.edge_count(), g.num_sites() - 1);
        }
    }

    #[test]
    fn reset_clears_state() {
        let g = build_wired_box(BoxSpec::new(2, 3)).unwrap();
        let mut b = ForestBuilder::new(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        b.reset(&[0]).unwrap();
        b.finish(&mut rng).unwrap();
        b.reset(&[]).unwrap();
        assert!((0..g.num_sites()).all(|x| !b.in_forest(x)));
        assert!(b.reset(&[1, 1]).is_err());
    }

    #[test]
    fn explored_component_matches_full_forest_statistics() {
        // Mean size of the o-tree from exploration vs. full forests.
        let g = build_wired_box(BoxSpec::new(2, 3)).unwrap();
        let o = g.origin().unwrap();
        let n = 4000;
        let mut b = ForestBuilder::new(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut s1, mut s2) = (0f64, 0f64);
        for _ in 0..n {
            b.reset(&[o]).unwrap();
            let c = b.explore_component(1, &mut rng).unwrap();
            s1 += c.len() as f64;
            let f = wilson(&g, &[o], None, &mut rng).unwrap();
            s2 += f.component(&g, Vertex::Site(o)).unwrap().len() as f64;
        }
        let (m1, m2) = (s1 / n as f64, s2 / n as f64);
        assert!((m1 - m2).abs() < 0.1 * m2.max(1.0), "{m1} vs {m2}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn wilson_output_is_a_spanning_forest(seed in any::<u64>(), root in proptest::option::of(0usize..27)) {
                let g = build_wired_box(BoxSpec::new(3, 1)).unwrap();
                let roots: Vec<usize> = root.into_iter().collect();
                let f = wilson(&g, &roots, None, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                f.validate(&g).unwrap();
                prop_assert_eq!(f.site_roots(), roots.clone());
                prop_assert_eq!(f.edge_count(), g.num_sites() - roots.len());
            }
        }
    }
}
