//! Simple random walks and loop-erased random walks on wired graphs.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Vertex, WiredGraph, SINK};

/// Default cap on the number of steps of a single walk.
pub const DEFAULT_STEP_CAP: u64 = 10_000_000_000;

/// Uniform edge-slot draws in `0..deg`, several per 64-bit word.
///
/// Draws `b = ceil(log2 deg)` bits at a time and rejects values `>= deg`,
/// so slots are exactly uniform.
#[derive(Debug, Clone)]
pub struct SlotSource {
    deg: u32,
    bits: u32,
    mask: u64,
    word: u64,
    left: u32,
}

impl SlotSource {
    pub fn new(deg: usize) -> Self {
        assert!(deg >= 1 && deg <= 64);
        let bits = (usize::BITS - (deg - 1).leading_zeros()).max(1);
        SlotSource { deg: deg as u32, bits, mask: (1u64 << bits) - 1, word: 0, left: 0 }
    }

    #[inline]
    pub fn draw<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> usize {
        loop {
            if self.left < self.bits {
                self.word = rng.next_u64();
                self.left = 64;
            }
            let v = (self.word & self.mask) as u32;
            self.word >>= self.bits;
            self.left -= self.bits;
            if v < self.deg {
                return v as usize;
            }
        }
    }
}

/// Vertex sets a walk can be stopped at.
#[derive(Debug, Clone)]
pub struct TargetSet {
    pub sites: Vec<bool>,
    pub sink: bool,
}

impl TargetSet {
    pub fn sink_only(g: &WiredGraph) -> Self {
        TargetSet { sites: vec![false; g.num_sites()], sink: true }
    }

    pub fn with_sites(g: &WiredGraph, sites: &[usize], sink: bool) -> Self {
        let mut mark = vec![false; g.num_sites()];
        for &x in sites {
            mark[x] = true;
        }
        TargetSet { sites: mark, sink }
    }

    #[inline]
    pub fn contains(&self, v: Vertex) -> bool {
        match v {
            Vertex::Sink => self.sink,
            Vertex::Site(x) => self.sites[x],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    HitTarget,
    HitForbidden,
    ReachedCap,
}

/// A simple random walk trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkPath {
    pub vertices: Vec<Vertex>,
    pub stop: StopReason,
}

impl WalkPath {
    pub fn start(&self) -> Vertex {
        self.vertices[0]
    }

    pub fn steps(&self) -> usize {
        self.vertices.len() - 1
    }
}

/// A loop-erased path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LerwPath {
    pub vertices: Vec<Vertex>,
    /// Steps taken by the underlying walk.
    pub walk_steps: u64,
}

impl LerwPath {
    /// Number of edges.
    pub fn len(&self) -> usize {
        self.vertices.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.len() <= 1
    }
}

/// Simple random walk from `start` until it hits `target` (or `forbid`, or
/// the step cap). The walk never continues out of the sink, so `target`
/// must contain the sink unless the sink is unreachable for the caller.
pub fn srw<R: RngCore + ?Sized>(
    g: &WiredGraph,
    start: usize,
    target: &TargetSet,
    forbid: Option<&[bool]>,
    cap: u64,
    rng: &mut R,
) -> Result<WalkPath> {
    if !target.sink {
        return Err(Error::InvalidArgument("walks on wired graphs must stop at the sink".into()));
    }
    let mut slots = SlotSource::new(g.degree());
    let mut vertices = vec![Vertex::Site(start)];
    if target.sites[start] {
        return Ok(WalkPath { vertices, stop: StopReason::HitTarget });
    }
    let deg = g.degree();
    let nbr = g.neighbor_table();
    let mut cur = start;
    for _ in 0..cap {
        let v = nbr[cur * deg + slots.draw(rng)];
        let vx = Vertex::from_raw(v);
        vertices.push(vx);
        if v == SINK || target.sites[v as usize] {
            return Ok(WalkPath { vertices, stop: StopReason::HitTarget });
        }
        if forbid.is_some_and(|f| f[v as usize]) {
            return Ok(WalkPath { vertices, stop: StopReason::HitForbidden });
        }
        cur = v as usize;
    }
    Ok(WalkPath { vertices, stop: StopReason::ReachedCap })
}

/// Chronological loop erasure of a finite vertex sequence.
pub fn loop_erase(path: &[Vertex]) -> Vec<Vertex> {
    let mut out: Vec<Vertex> = Vec::with_capacity(path.len());
    for &v in path {
        if let Some(i) = out.iter().position(|&u| u == v) {
            out.truncate(i + 1);
        } else {
            out.push(v);
        }
    }
    out
}

/// Outcome of [`lerw`]: the loop-erased path, or the fact that the walk
/// entered a forbidden site first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LerwOutcome {
    Path(LerwPath),
    Forbidden { walk_steps: u64 },
}

/// Loop-erased random walk from `start`, run until it hits `absorb`.
/// Loops are erased as soon as they close, so memory stays proportional to
/// the current loop-erased path. If the walk enters a `forbid` site first
/// the outcome is [`LerwOutcome::Forbidden`] (used for rejection sampling
/// of conditioned walks).
pub fn lerw<R: RngCore + ?Sized>(
    g: &WiredGraph,
    start: usize,
    absorb: &TargetSet,
    forbid: Option<&[bool]>,
    cap: u64,
    rng: &mut R,
) -> Result<LerwOutcome> {
    if !absorb.sink {
        return Err(Error::InvalidArgument("LERW on a wired graph must be absorbed at the sink".into()));
    }
    if start >= g.num_sites() {
        return Err(Error::InvalidArgument(format!("site {start} not in graph")));
    }
    if absorb.sites[start] {
        return Ok(LerwOutcome::Path(LerwPath { vertices: vec![Vertex::Site(start)], walk_steps: 0 }));
    }
    let deg = g.degree();
    let nbr = g.neighbor_table();
    let mut slots = SlotSource::new(deg);
    let mut position = vec![u32::MAX; g.num_sites()];
    let mut path: Vec<u32> = vec![start as u32];
    position[start] = 0;
    let mut cur = start;
    let mut steps = 0u64;
    loop {
        if steps >= cap {
            return Err(Error::StepCap(cap));
        }
        steps += 1;
        let v = nbr[cur * deg + slots.draw(rng)];
        if v == SINK {
            let mut vertices: Vec<Vertex> = path.iter().map(|&x| Vertex::Site(x as usize)).collect();
            vertices.push(Vertex::Sink);
            return Ok(LerwOutcome::Path(LerwPath { vertices, walk_steps: steps }));
        }
        let vi = v as usize;
        if forbid.is_some_and(|f| f[vi]) {
            return Ok(LerwOutcome::Forbidden { walk_steps: steps });
        }
        if absorb.sites[vi] {
            let mut vertices: Vec<Vertex> = path.iter().map(|&x| Vertex::Site(x as usize)).collect();
            vertices.push(Vertex::Site(vi));
            return Ok(LerwOutcome::Path(LerwPath { vertices, walk_steps: steps }));
        }
        let p = position[vi];
        if p != u32::MAX {
            for &x in &path[p as usize + 1..] {
                position[x as usize] = u32::MAX;
            }
            path.truncate(p as usize + 1);
        } else {
            position[vi] = path.len() as u32;
            path.push(v);
        }
        cur = vi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_wired_box, BoxSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn slot_source_is_uniform_enough() {
        for deg in [4usize, 6, 8, 10] {
            let mut s = SlotSource::new(deg);
            let mut rng = ChaCha8Rng::seed_from_u64(deg as u64);
            let mut counts = vec![0u32; deg];
            let n = 200_000;
            for _ in 0..n {
                counts[s.draw(&mut rng)] += 1;
            }
            let e = n as f64 / deg as f64;
            for c in counts {
                assert!((c as f64 - e).abs() < 5.0 * e.sqrt());
            }
        }
    }

    #[test]
    fn loop_erase_basics() {
        let s = |x| Vertex::Site(x);
        assert_eq!(loop_erase(&[s(0), s(1), s(2)]), vec![s(0), s(1), s(2)]);
        assert_eq!(loop_erase(&[s(0), s(1), s(0), s(2)]), vec![s(0), s(2)]);
        assert_eq!(
            loop_erase(&[s(0), s(1), s(2), s(1), s(3), s(0), s(4), Vertex::Sink]),
            vec![s(0), s(4), Vertex::Sink]
        );
    }

    #[test]
    fn lerw_from_absorbing_start_is_empty() {
        let g = build_wired_box(BoxSpec::new(2, 3)).unwrap();
        let o = g.origin().unwrap();
        let absorb = TargetSet::with_sites(&g, &[o], true);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        match lerw(&g, o, &absorb, None, DEFAULT_STEP_CAP, &mut rng).unwrap() {
            LerwOutcome::Path(p) => assert!(p.is_empty()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lerw_equals_loop_erasure_of_the_same_walk() {
        let g = build_wired_box(BoxSpec::new(2, 4)).unwrap();
        let o = g.origin().unwrap();
        let target = TargetSet::sink_only(&g);
        for seed in 0..200 {
            let walk = srw(&g, o, &target, None, DEFAULT_STEP_CAP, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let le = loop_erase(&walk.vertices);
            let LerwOutcome::Path(p) =
                lerw(&g, o, &target, None, DEFAULT_STEP_CAP, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
            else {
                panic!()
            };
            assert_eq!(p.vertices, le);
            assert_eq!(p.walk_steps as usize, walk.steps());
            // self-avoiding, nearest-neighbour steps
            let mut seen = std::collections::HashSet::new();
            assert!(p.vertices.iter().all(|v| seen.insert(*v)));
        }
    }

    #[test]
    fn step_cap_is_enforced() {
        let g = build_wired_box(BoxSpec::new(2, 30)).unwrap();
        let o = g.origin().unwrap();
        let target = TargetSet::sink_only(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(matches!(lerw(&g, o, &target, None, 10, &mut rng), Err(Error::StepCap(10))));
    }
}
