//! Wired subgraphs of `Z^d`.
//!
//! A [`WiredGraph`] is a finite set of lattice sites `V` together with a
//! single sink vertex `s` standing in for every site of `Z^d \ V`. Each site
//! carries exactly `2d` directed edge slots, one per lattice direction, in
//! the fixed order `+e1, -e1, +e2, -e2, ...`. A slot whose lattice neighbour
//! falls outside `V` is a sink edge, so parallel edges to `s` stay
//! distinguishable by the direction they replace.
//!
//! Sites are indexed row-major over the bounding box of the domain (last
//! coordinate fastest), skipping coordinates that are not in the domain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel used in the raw neighbour table for the sink.
pub const SINK: u32 = u32::MAX;

/// Supported dimensions for the standard boxes `V(L)`.
pub const MIN_DIM: usize = 2;
pub const MAX_DIM: usize = 5;

/// A vertex of a wired graph: a lattice site or the sink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Vertex {
    Site(usize),
    Sink,
}

impl Vertex {
    #[inline]
    pub fn from_raw(raw: u32) -> Vertex {
        if raw == SINK {
            Vertex::Sink
        } else {
            Vertex::Site(raw as usize)
        }
    }

    pub fn site(self) -> Option<usize> {
        match self {
            Vertex::Site(x) => Some(x),
            Vertex::Sink => None,
        }
    }
}

/// The standard exhaustion box `V(L) = [-L, L]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoxSpec {
    pub dim: usize,
    pub half_side: usize,
}

impl BoxSpec {
    pub fn new(dim: usize, half_side: usize) -> Self {
        BoxSpec { dim, half_side }
    }

    pub fn side(&self) -> usize {
        2 * self.half_side + 1
    }

    /// `(2L+1)^d`, or `None` on overflow.
    pub fn site_count(&self) -> Option<usize> {
        let side = self.side();
        (0..self.dim).try_fold(1usize, |acc, _| acc.checked_mul(side))
    }
}

/// Norms used for radii and balls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Norm {
    /// `|.|`, balls `B_x(n)`.
    Euclidean,
    /// `||.||`, boxes `V_x(n)`.
    Sup,
}

/// Shape of the vertex set of a wired graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    /// Axis-aligned box `lo[i] <= x_i <= hi[i]`.
    Rect { lo: Vec<i32>, hi: Vec<i32> },
    /// Euclidean lattice ball `{ x : |x| <= radius }`.
    Ball { dim: usize, radius: f64 },
}

/// Wired graph `G_V = (V ∪ {s}, E)`; immutable once built.
#[derive(Debug, Clone)]
pub struct WiredGraph {
    dim: usize,
    domain: Domain,
    box_spec: Option<BoxSpec>,
    lo: Vec<i32>,
    extents: Vec<usize>,
    strides: Vec<usize>,
    /// bounding-box index -> site index (or SINK if outside the domain)
    bbox_to_site: Vec<u32>,
    coords: Vec<i32>,
    nbr: Vec<u32>,
    sink_slots: Vec<u8>,
    origin: Option<usize>,
}

/// Builds the wired box `G_L` for `V(L) = [-L, L]^d`.
pub fn build_wired_box(spec: BoxSpec) -> Result<WiredGraph> {
    if !(MIN_DIM..=MAX_DIM).contains(&spec.dim) {
        return Err(Error::Unsupported(format!(
            "dimension {} outside {}..={}",
            spec.dim, MIN_DIM, MAX_DIM
        )));
    }
    if spec.half_side < 1 {
        return Err(Error::Unsupported("half-side L must be at least 1".into()));
    }
    if spec.site_count().map_or(true, |n| n >= SINK as usize) {
        return Err(Error::Unsupported(format!("box {:?} is too large", spec)));
    }
    let l = spec.half_side as i32;
    let mut g = WiredGraph::rect(&vec![-l; spec.dim], &vec![l; spec.dim])?;
    g.box_spec = Some(spec);
    Ok(g)
}

impl WiredGraph {
    /// Wired rectangle `prod_i [lo_i, hi_i]`. Used for the standard boxes and
    /// for the tiny oracle instances (2x2 square, 1x2 domino).
    pub fn rect(lo: &[i32], hi: &[i32]) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Unsupported("rectangle bounds must share a positive dimension".into()));
        }
        if lo.iter().zip(hi).any(|(a, b)| a > b) {
            return Err(Error::Unsupported("empty rectangle".into()));
        }
        let domain = Domain::Rect { lo: lo.to_vec(), hi: hi.to_vec() };
        Self::from_predicate(domain, lo.to_vec(), hi.to_vec(), |_| true)
    }

    /// Wired Euclidean ball `B(n)` in dimension `dim`.
    pub fn ball(dim: usize, radius: f64) -> Result<Self> {
        if dim == 0 || !(radius >= 0.0) {
            return Err(Error::Unsupported("ball needs dim >= 1 and radius >= 0".into()));
        }
        let r = radius.floor() as i32;
        let r2 = radius * radius;
        let domain = Domain::Ball { dim, radius };
        Self::from_predicate(domain, vec![-r; dim], vec![r; dim], |x| {
            let n2: i64 = x.iter().map(|&c| (c as i64) * (c as i64)).sum();
            n2 as f64 <= r2 + 1e-9
        })
    }

    fn from_predicate(
        domain: Domain,
        lo: Vec<i32>,
        hi: Vec<i32>,
        inside: impl Fn(&[i32]) -> bool,
    ) -> Result<Self> {
        let dim = lo.len();
        let extents: Vec<usize> = lo.iter().zip(&hi).map(|(a, b)| (b - a + 1) as usize).collect();
        let total = extents
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .filter(|&t| t < SINK as usize)
            .ok_or_else(|| Error::Unsupported("domain too large".into()))?;
        let mut strides = vec![1usize; dim];
        for i in (0..dim.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * extents[i + 1];
        }

        let mut bbox_to_site = vec![SINK; total];
        let mut coords = Vec::new();
        let mut x = lo.clone();
        let mut n = 0u32;
        for b in 0..total {
            // decode bounding-box index b into x
            let mut rem = b;
            for i in 0..dim {
                x[i] = lo[i] + (rem / strides[i]) as i32;
                rem %= strides[i];
            }
            if inside(&x) {
                bbox_to_site[b] = n;
                coords.extend_from_slice(&x);
                n += 1;
            }
        }
        let n = n as usize;
        if n == 0 {
            return Err(Error::Unsupported("domain has no sites".into()));
        }

        let deg = 2 * dim;
        let mut nbr = vec![SINK; n * deg];
        let mut sink_slots = vec![0u8; n];
        let mut origin = None;
        let mut y = vec![0i32; dim];
        for site in 0..n {
            let c = &coords[site * dim..(site + 1) * dim];
            if c.iter().all(|&v| v == 0) {
                origin = Some(site);
            }
            for axis in 0..dim {
                for (k, step) in [1i32, -1].into_iter().enumerate() {
                    y.copy_from_slice(c);
                    y[axis] += step;
                    let slot = 2 * axis + k;
                    let target = bbox_index(&lo, &hi, &strides, &y).map_or(SINK, |b| bbox_to_site[b]);
                    nbr[site * deg + slot] = target;
                    if target == SINK {
                        sink_slots[site] += 1;
                    }
                }
            }
        }

        Ok(WiredGraph {
            dim,
            domain,
            box_spec: None,
            lo,
            extents,
            strides,
            bbox_to_site,
            coords,
            nbr,
            sink_slots,
            origin,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `deg_H(x) = 2d` for every site.
    #[inline]
    pub fn degree(&self) -> usize {
        2 * self.dim
    }

    #[inline]
    pub fn num_sites(&self) -> usize {
        self.sink_slots.len()
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// The box spec when this graph is a standard box `V(L)`.
    pub fn box_spec(&self) -> Option<BoxSpec> {
        self.box_spec
    }

    /// The site at coordinate zero, if it belongs to the domain.
    pub fn origin(&self) -> Option<usize> {
        self.origin
    }

    /// Origin or a configuration error.
    pub fn require_origin(&self) -> Result<usize> {
        self.origin
            .ok_or_else(|| Error::Unsupported("domain does not contain the origin".into()))
    }

    #[inline]
    pub fn coords(&self, site: usize) -> &[i32] {
        &self.coords[site * self.dim..(site + 1) * self.dim]
    }

    pub fn site_at(&self, x: &[i32]) -> Option<usize> {
        if x.len() != self.dim {
            return None;
        }
        let hi: Vec<i32> = self.lo.iter().zip(&self.extents).map(|(l, e)| l + *e as i32 - 1).collect();
        let b = bbox_index(&self.lo, &hi, &self.strides, x)?;
        let s = self.bbox_to_site[b];
        (s != SINK).then_some(s as usize)
    }

    /// Neighbour across edge slot `slot` of `site`.
    #[inline]
    pub fn neighbor(&self, site: usize, slot: usize) -> Vertex {
        Vertex::from_raw(self.nbr[site * self.degree() + slot])
    }

    /// Raw neighbour row of `site`, `SINK` marking sink edges.
    #[inline]
    pub fn neighbors_raw(&self, site: usize) -> &[u32] {
        let deg = self.degree();
        &self.nbr[site * deg..(site + 1) * deg]
    }

    /// Full raw neighbour table, `num_sites * 2d` entries.
    #[inline]
    pub fn neighbor_table(&self) -> &[u32] {
        &self.nbr
    }

    /// Number of parallel edges `a_{xs}` between `site` and the sink.
    #[inline]
    pub fn sink_edges(&self, site: usize) -> usize {
        self.sink_slots[site] as usize
    }

    /// `deg_H(s)`.
    pub fn sink_degree(&self) -> usize {
        self.sink_slots.iter().map(|&k| k as usize).sum()
    }

    /// Number of edges `a_{xy}` between two sites.
    pub fn multiplicity(&self, x: usize, y: usize) -> usize {
        self.neighbors_raw(x).iter().filter(|&&v| v == y as u32).count()
    }

    /// Squared Euclidean distance between two sites.
    #[inline]
    pub fn dist2(&self, a: usize, b: usize) -> i64 {
        self.coords(a)
            .iter()
            .zip(self.coords(b))
            .map(|(&p, &q)| {
                let t = (p - q) as i64;
                t * t
            })
            .sum()
    }

    /// Sup-norm distance between two sites.
    #[inline]
    pub fn dist_sup(&self, a: usize, b: usize) -> i64 {
        self.coords(a)
            .iter()
            .zip(self.coords(b))
            .map(|(&p, &q)| ((p - q) as i64).abs())
            .max()
            .unwrap_or(0)
    }

    pub fn distance(&self, a: usize, b: usize, norm: Norm) -> f64 {
        match norm {
            Norm::Euclidean => (self.dist2(a, b) as f64).sqrt(),
            Norm::Sup => self.dist_sup(a, b) as f64,
        }
    }

    /// Site on the positive first axis at distance `r` from the origin.
    pub fn axis_site(&self, r: i32) -> Option<usize> {
        let mut x = vec![0; self.dim];
        x[0] = r;
        self.site_at(&x)
    }
}

fn bbox_index(lo: &[i32], hi: &[i32], strides: &[usize], x: &[i32]) -> Option<usize> {
    let mut b = 0usize;
    for i in 0..x.len() {
        if x[i] < lo[i] || x[i] > hi[i] {
            return None;
        }
        b += (x[i] - lo[i]) as usize * strides[i];
    }
    Some(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interior_neighbors(g: &WiredGraph, site: usize) -> usize {
        g.neighbors_raw(site).iter().filter(|&&v| v != SINK).count()
    }

    #[test]
    fn corner_of_d2_l1() {
        let g = build_wired_box(BoxSpec::new(2, 1)).unwrap();
        assert_eq!(g.num_sites(), 9);
        let corner = g.site_at(&[-1, -1]).unwrap();
        assert_eq!(interior_neighbors(&g, corner), 2);
        assert_eq!(g.sink_edges(corner), 2);
        // slot order: +e1, -e1, +e2, -e2
        assert_eq!(g.neighbor(corner, 0), Vertex::Site(g.site_at(&[0, -1]).unwrap()));
        assert_eq!(g.neighbor(corner, 1), Vertex::Sink);
        assert_eq!(g.neighbor(corner, 2), Vertex::Site(g.site_at(&[-1, 0]).unwrap()));
        assert_eq!(g.neighbor(corner, 3), Vertex::Sink);
    }

    #[test]
    fn two_by_two_square() {
        let g = WiredGraph::rect(&[0, 0], &[1, 1]).unwrap();
        assert_eq!(g.num_sites(), 4);
        for x in 0..4 {
            assert_eq!(interior_neighbors(&g, x), 2);
            assert_eq!(g.sink_edges(x), 2);
        }
        assert_eq!(g.origin(), Some(0));
    }

    #[test]
    fn center_of_d3_l1() {
        let g = build_wired_box(BoxSpec::new(3, 1)).unwrap();
        assert_eq!(g.num_sites(), 27);
        let o = g.origin().unwrap();
        assert_eq!(o, 13);
        assert_eq!(interior_neighbors(&g, o), 6);
        assert_eq!(g.sink_edges(o), 0);
    }

    #[test]
    fn rejects_unsupported_boxes() {
        assert!(build_wired_box(BoxSpec::new(1, 3)).is_err());
        assert!(build_wired_box(BoxSpec::new(6, 1)).is_err());
        assert!(build_wired_box(BoxSpec::new(2, 0)).is_err());
    }

    #[test]
    fn site_count_and_coordinate_round_trip() {
        for (d, l) in [(2, 3), (3, 2), (4, 1), (5, 1)] {
            let spec = BoxSpec::new(d, l);
            let g = build_wired_box(spec).unwrap();
            assert_eq!(g.num_sites(), spec.site_count().unwrap());
            for x in 0..g.num_sites() {
                assert_eq!(g.site_at(g.coords(x)), Some(x));
            }
        }
    }

    #[test]
    fn sink_slots_match_exits_and_adjacency_is_symmetric() {
        let g = build_wired_box(BoxSpec::new(3, 2)).unwrap();
        let l = 2;
        for x in 0..g.num_sites() {
            let exits: usize = g
                .coords(x)
                .iter()
                .map(|&c| (c == l) as usize + (c == -l) as usize)
                .sum();
            assert_eq!(g.sink_edges(x), exits);
            for (slot, &y) in g.neighbors_raw(x).iter().enumerate() {
                if y != SINK {
                    let back = slot ^ 1;
                    assert_eq!(g.neighbors_raw(y as usize)[back], x as u32);
                    assert_eq!(g.dist2(x, y as usize), 1);
                }
            }
        }
    }

    #[test]
    fn ball_membership() {
        let g = WiredGraph::ball(2, 2.0).unwrap();
        // 1 + 4 + 4 + 4 lattice points with |x| <= 2
        assert_eq!(g.num_sites(), 13);
        let o = g.origin().unwrap();
        assert_eq!(g.sink_edges(o), 0);
        let tip = g.site_at(&[2, 0]).unwrap();
        assert_eq!(g.sink_edges(tip), 3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn edges_are_symmetric_and_sink_edges_fill_the_degree(dim in 2usize..=4, half in 1usize..=3) {
                let g = build_wired_box(BoxSpec::new(dim, half)).unwrap();
                for x in 0..g.num_sites() {
                    for &y in g.neighbors_raw(x) {
                        if y != SINK {
                            prop_assert_eq!(g.multiplicity(x, y as usize), g.multiplicity(y as usize, x));
                            prop_assert_eq!(g.dist2(x, y as usize), 1);
                        }
                    }
                    prop_assert_eq!(g.sink_edges(x) + interior_neighbors(&g, x), 2 * dim);
                }
            }
        }
    }
}
