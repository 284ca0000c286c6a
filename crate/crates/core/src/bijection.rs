//! Burning bijections between sandpiles and spanning forests.
//!
//! [`burning_bijection`] maps recurrent configurations to spanning trees of
//! the wired graph, [`inverse_burning`] undoes it, and [`wave_bijection`]
//! maps intermediate configurations to two-component forests rooted at the
//! marked site and the sink.
//!
//! All three use the same attachment rule. A site `u` that burns at step
//! `k` has `P_u` edges to things burnt before step `k` and a set `A_u` of
//! eligible edges (to things burnt at step `k-1`); then
//! `η(u) = 2d - P_u + i` with `0 <= i < |A_u|`, and the parent edge is the
//! `i`-th slot of `A_u` in slot order.

use crate::error::{Error, Result};
use crate::forest::{RootedForest, ROOT};
use crate::lattice::{WiredGraph, SINK};
use crate::sandpile::HeightConfig;
use crate::waves::IntermediateConfig;

/// Burn stamp of sites not yet burnt.
const UNBURNT: u32 = u32::MAX;

/// Parallel-round burning from the sink over the sites with
/// `stamp == UNBURNT`, attaching each burnt site by the burning rule.
///
/// Sites already stamped (and the sink) count as burnt before round 1;
/// in round 1 only sink edges are eligible. Stamps of newly burnt sites are
/// `base + k` for round `k`. Returns the number of sites left unburnt.
fn burn_from_sink(
    g: &WiredGraph,
    eta: &[u64],
    stamp: &mut [u32],
    parent: &mut [u8],
    base: u32,
) -> Result<usize> {
    let deg = g.degree();
    let n = g.num_sites();
    let mut burnt_nbrs: Vec<usize> = (0..n)
        .map(|x| g.neighbors_raw(x).iter().filter(|&&y| y == SINK || stamp[y as usize] != UNBURNT).count())
        .collect();
    let mut remaining: Vec<usize> = (0..n).filter(|&x| stamp[x] == UNBURNT).collect();
    let mut round = 0u32;
    loop {
        round += 1;
        let now: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&x| eta[x] + burnt_nbrs[x] as u64 >= deg as u64)
            .collect();
        if now.is_empty() {
            return Ok(remaining.len());
        }
        for &u in &now {
            let p = burnt_nbrs[u] as u64;
            let i = (eta[u] + p - deg as u64) as usize;
            let eligible = g.neighbors_raw(u).iter().enumerate().filter(|(_, &y)| {
                if round == 1 {
                    y == SINK
                } else {
                    y != SINK && stamp[y as usize] == base + round - 1
                }
            });
            let slot = eligible
                .map(|(s, _)| s)
                .nth(i)
                .ok_or_else(|| Error::Invariant(format!("burning index {i} out of range at site {u}")))?;
            parent[u] = slot as u8;
        }
        for &u in &now {
            stamp[u] = base + round;
            for &y in g.neighbors_raw(u) {
                if y != SINK {
                    burnt_nbrs[y as usize] += 1;
                }
            }
        }
        remaining.retain(|&x| stamp[x] == UNBURNT);
    }
}

/// `φ`: recurrent configuration to spanning tree rooted at the sink.
pub fn burning_bijection(g: &WiredGraph, cfg: &HeightConfig) -> Result<RootedForest> {
    cfg.check_stable(g)?;
    let n = g.num_sites();
    let mut stamp = vec![UNBURNT; n];
    let mut parent = vec![ROOT; n];
    let left = burn_from_sink(g, &cfg.heights, &mut stamp, &mut parent, 0)?;
    if left > 0 {
        return Err(Error::NotRecurrent { burnt: n - left, total: n });
    }
    Ok(RootedForest::from_parents(parent))
}

/// `φ^{-1}`: burn times are tree depths, and the height is read off from
/// the rank of the parent edge among the edges to depth `depth - 1`.
pub fn inverse_burning(g: &WiredGraph, tree: &RootedForest) -> Result<HeightConfig> {
    if !tree.site_roots().is_empty() {
        return Err(Error::NotSpanningForest("tree must be rooted at the sink only".into()));
    }
    let depth = tree.depths(g)?;
    let deg = g.degree() as u64;
    let depth_of = |y: u32| if y == SINK { 0 } else { depth[y as usize] };
    let heights = (0..g.num_sites())
        .map(|y| {
            let dy = depth[y];
            let nbrs = g.neighbors_raw(y);
            let p = nbrs.iter().filter(|&&z| depth_of(z) < dy).count() as u64;
            let slot = tree.parent[y] as usize;
            let rank = nbrs[..slot].iter().filter(|&&z| depth_of(z) + 1 == dy).count() as u64;
            deg - p + rank
        })
        .collect();
    Ok(HeightConfig::new(heights))
}

/// Result of [`wave_bijection`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WaveForest {
    /// Forest rooted at `{w, s}`.
    pub forest: RootedForest,
    /// Sites of `T_w`, ascending; equals the wave of `η*`.
    pub wave: Vec<usize>,
    /// Ball radius of the last stage that burnt something.
    pub radius: u32,
}

/// `φ'`: intermediate configuration to two-component forest `(T_w, T_s)`.
///
/// Stage `r` burns inside the Euclidean ball `B(r)` around `w`, with the
/// sink counted as unburnt; the stages stop at the first one that burns
/// nothing, and what has burnt is the wave. The rest is then burnt from
/// the sink, with the wave and the sink counting as burnt before round 1
/// and only sink edges eligible in round 1.
pub fn wave_bijection(g: &WiredGraph, eta: &IntermediateConfig) -> Result<WaveForest> {
    let w = eta.marked;
    let h = &eta.config.heights;
    let deg = g.degree();
    let n = g.num_sites();
    // stamp: 0 for w, then one tick per burning step across all stages
    let mut stamp = vec![UNBURNT; n];
    let mut parent = vec![ROOT; n];
    let mut burnt_nbrs = vec![0usize; n];
    let mut queued = vec![false; n];
    let mut burnt = vec![w];
    stamp[w] = 0;
    for &y in g.neighbors_raw(w) {
        if y != SINK {
            burnt_nbrs[y as usize] += 1;
        }
    }
    let mut clock = 0u32;
    let mut radius = 0u32;
    let mut r = 0u32;
    loop {
        r += 1;
        let r2 = (r as i64) * (r as i64);
        // stamps <= stage_base form Burnt^{(r)}_0
        let stage_base = clock;
        let mut stage_burnt_any = false;
        let mut last_batch = 0..burnt.len();
        loop {
            // only neighbours of the previous batch can have become eligible,
            // except at the start of a stage when the ball has grown
            let mut now: Vec<usize> = Vec::new();
            for &b in &burnt[last_batch.clone()] {
                for &y in g.neighbors_raw(b) {
                    if y == SINK {
                        continue;
                    }
                    let y = y as usize;
                    if stamp[y] == UNBURNT
                        && !queued[y]
                        && g.dist2(w, y) <= r2
                        && h[y] + burnt_nbrs[y] as u64 >= deg as u64
                    {
                        queued[y] = true;
                        now.push(y);
                    }
                }
            }
            if now.is_empty() {
                break;
            }
            stage_burnt_any = true;
            let first_step = clock == stage_base;
            for &u in &now {
                let i = (h[u] + burnt_nbrs[u] as u64 - deg as u64) as usize;
                let eligible = g.neighbors_raw(u).iter().enumerate().filter(|(_, &y)| {
                    y != SINK
                        && stamp[y as usize] != UNBURNT
                        && if first_step { stamp[y as usize] <= stage_base } else { stamp[y as usize] == clock }
                });
                let slot = eligible
                    .map(|(s, _)| s)
                    .nth(i)
                    .ok_or_else(|| Error::Invariant(format!("wave burning index {i} out of range at site {u}")))?;
                parent[u] = slot as u8;
            }
            clock += 1;
            for &u in &now {
                stamp[u] = clock;
                for &y in g.neighbors_raw(u) {
                    if y != SINK {
                        burnt_nbrs[y as usize] += 1;
                    }
                }
            }
            last_batch = burnt.len()..burnt.len() + now.len();
            burnt.extend(now);
        }
        if !stage_burnt_any {
            break;
        }
        radius = r;
    }
    let mut wave = burnt.clone();
    wave.sort_unstable();
    // s-rooted completion; wave sites keep their stamps (all < clock + 1)
    let left = burn_from_sink(g, h, &mut stamp, &mut parent, clock + 1)?;
    if left > 0 {
        return Err(Error::NotIntermediate(format!("{left} sites never burn")));
    }
    Ok(WaveForest { forest: RootedForest::from_parents(parent), wave, radius })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Vertex;
    use crate::sandpile::is_recurrent;
    use crate::waves::{wave_of, IntermediateConfig};
    use std::collections::HashSet;

    fn square() -> WiredGraph {
        WiredGraph::rect(&[0, 0], &[1, 1]).unwrap()
    }

    fn all_configs(n: usize, deg: u64) -> impl Iterator<Item = Vec<u64>> {
        let total = (deg as usize).pow(n as u32);
        (0..total).map(move |mut code| {
            (0..n)
                .map(|_| {
                    let h = (code % deg as usize) as u64;
                    code /= deg as usize;
                    h
                })
                .collect()
        })
    }

    #[test]
    fn maximal_config_attaches_by_second_sink_slot() {
        let g = square();
        let t = burning_bijection(&g, &HeightConfig::maximal_stable(&g)).unwrap();
        for y in 0..4 {
            let sink_slots: Vec<usize> = (0..4).filter(|&s| g.neighbor(y, s) == Vertex::Sink).collect();
            assert_eq!(t.parent[y] as usize, sink_slots[1]);
        }
        assert_eq!(inverse_burning(&g, &t).unwrap(), HeightConfig::maximal_stable(&g));
    }

    #[test]
    fn phi_is_a_bijection_on_the_square() {
        let g = square();
        let mut trees = HashSet::new();
        for h in all_configs(4, 4) {
            let cfg = HeightConfig::new(h);
            let rec = is_recurrent(&g, &cfg).unwrap().0;
            match burning_bijection(&g, &cfg) {
                Ok(t) => {
                    assert!(rec);
                    t.validate(&g).unwrap();
                    assert_eq!(inverse_burning(&g, &t).unwrap(), cfg);
                    trees.insert(t);
                }
                Err(Error::NotRecurrent { .. }) => assert!(!rec),
                Err(e) => panic!("{e}"),
            }
        }
        assert_eq!(trees.len(), 192);
    }

    #[test]
    fn phi_prime_is_injective_on_the_square() {
        let g = square();
        let o = 0;
        let mut seen = HashSet::new();
        for mut h in all_configs(3, 4) {
            h.insert(o, 4);
            let cfg = HeightConfig::new(h);
            let eta = IntermediateConfig::new(&g, cfg.clone(), o).unwrap();
            let primed = crate::sandpile::is_recurrent_primed(&g, &cfg, o).unwrap();
            match wave_bijection(&g, &eta) {
                Ok(f) => {
                    assert!(primed);
                    f.forest.validate(&g).unwrap();
                    assert_eq!(f.forest.site_roots(), vec![o]);
                    assert_eq!(f.forest.component(&g, Vertex::Site(o)).unwrap(), f.wave);
                    assert_eq!(wave_of(&g, &eta).unwrap(), f.wave);
                    assert!(seen.insert(f.forest));
                }
                Err(_) => assert!(!primed),
            }
        }
        assert_eq!(seen.len(), 56);
    }

    #[test]
    fn single_site_wave_gives_trivial_tree() {
        let g = crate::lattice::build_wired_box(crate::lattice::BoxSpec::new(2, 2)).unwrap();
        let o = g.origin().unwrap();
        // neighbours of o cannot topple after one grain
        let mut cfg = HeightConfig::maximal_stable(&g);
        for &y in g.neighbors_raw(o) {
            cfg.heights[y as usize] = 2;
        }
        cfg.heights[o] = 4;
        let eta = IntermediateConfig::new(&g, cfg, o).unwrap();
        let f = wave_bijection(&g, &eta).unwrap();
        assert_eq!(f.wave, vec![o]);
        assert_eq!(f.radius, 0);
        assert_eq!(f.forest.component(&g, Vertex::Site(o)).unwrap(), vec![o]);
    }

    mod props {
        use super::*;
        use crate::sandpile::add_and_stabilize;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn burning_round_trips_on_reachable_recurrent_states(adds in proptest::collection::vec(0usize..12, 0..40)) {
                // the maximal stable state is recurrent, and so is everything it reaches
                let g = WiredGraph::rect(&[0, 0], &[2, 3]).unwrap();
                let mut cfg = HeightConfig::maximal_stable(&g);
                for x in adds {
                    cfg = add_and_stabilize(&g, &cfg, x).unwrap().0;
                }
                prop_assert!(is_recurrent(&g, &cfg).unwrap().0);
                let tree = burning_bijection(&g, &cfg).unwrap();
                tree.validate(&g).unwrap();
                prop_assert_eq!(inverse_burning(&g, &tree).unwrap(), cfg);
            }
        }
    }
}
