//! Rooted spanning forests of wired graphs.
//!
//! The sink is always a root. Additional roots are sites. Every non-root
//! site stores the edge slot leading to its parent, so parallel sink edges
//! are distinguished and the parent vector is a canonical code for the
//! forest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Vertex, WiredGraph, SINK};

/// Parent-slot value of a root site.
pub const ROOT: u8 = u8::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RootedForest {
    /// Parent edge slot per site, or [`ROOT`].
    pub parent: Vec<u8>,
}

impl RootedForest {
    /// Wraps a parent-slot vector; call [`RootedForest::validate`] before trusting it.
    pub fn from_parents(parent: Vec<u8>) -> Self {
        RootedForest { parent }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn is_root(&self, x: usize) -> bool {
        self.parent[x] == ROOT
    }

    /// Site roots in ascending order (the sink is implicit).
    pub fn site_roots(&self) -> Vec<usize> {
        (0..self.len()).filter(|&x| self.is_root(x)).collect()
    }

    /// Number of edges (non-root sites).
    pub fn edge_count(&self) -> usize {
        self.parent.iter().filter(|&&p| p != ROOT).count()
    }

    pub fn parent_vertex(&self, g: &WiredGraph, x: usize) -> Option<Vertex> {
        (!self.is_root(x)).then(|| g.neighbor(x, self.parent[x] as usize))
    }

    /// Checks that parent chains terminate in roots (no cycles).
    pub fn validate(&self, g: &WiredGraph) -> Result<()> {
        if self.len() != g.num_sites() {
            return Err(Error::NotSpanningForest("size mismatch".into()));
        }
        if self.parent.iter().any(|&p| p != ROOT && p as usize >= g.degree()) {
            return Err(Error::NotSpanningForest("slot out of range".into()));
        }
        self.root_labels(g).map(|_| ())
    }

    /// Root reached from every site, or an error on a cycle.
    pub fn root_labels(&self, g: &WiredGraph) -> Result<Vec<Vertex>> {
        const UNKNOWN: u32 = u32::MAX - 1;
        const ACTIVE: u32 = u32::MAX - 2;
        let n = self.len();
        // label: root site index, SINK, UNKNOWN, or ACTIVE (on current chain)
        let mut label = vec![UNKNOWN; n];
        let mut chain = Vec::new();
        for start in 0..n {
            if label[start] != UNKNOWN {
                continue;
            }
            let mut x = start;
            let result = loop {
                if label[x] == ACTIVE {
                    return Err(Error::NotSpanningForest(format!("cycle through site {x}")));
                }
                if label[x] != UNKNOWN {
                    break label[x];
                }
                if self.is_root(x) {
                    label[x] = x as u32;
                    break x as u32;
                }
                label[x] = ACTIVE;
                chain.push(x);
                let p = g.neighbors_raw(x)[self.parent[x] as usize];
                if p == SINK {
                    break SINK;
                }
                x = p as usize;
            };
            for y in chain.drain(..) {
                label[y] = result;
            }
        }
        Ok(label.into_iter().map(Vertex::from_raw).collect())
    }

    /// Sites of the component rooted at `root` (site root or the sink).
    pub fn component(&self, g: &WiredGraph, root: Vertex) -> Result<Vec<usize>> {
        let labels = self.root_labels(g)?;
        Ok((0..self.len()).filter(|&x| labels[x] == root).collect())
    }

    /// Tree distance of every site to its root.
    pub fn depths(&self, g: &WiredGraph) -> Result<Vec<u32>> {
        self.validate(g)?;
        let n = self.len();
        let mut depth = vec![u32::MAX; n];
        let mut chain = Vec::new();
        for start in 0..n {
            let mut x = start;
            let base = loop {
                if depth[x] != u32::MAX {
                    break depth[x];
                }
                if self.is_root(x) {
                    depth[x] = 0;
                    break 0;
                }
                chain.push(x);
                let p = g.neighbors_raw(x)[self.parent[x] as usize];
                if p == SINK {
                    break 0;
                }
                x = p as usize;
            };
            let mut d = base;
            for y in chain.drain(..).rev() {
                d += 1;
                depth[y] = d;
            }
        }
        Ok(depth)
    }

    /// Path from `x` to its root, inclusive; the sink is the final vertex
    /// for sink-rooted sites.
    pub fn path_to_root(&self, g: &WiredGraph, x: usize) -> Vec<Vertex> {
        let mut path = vec![Vertex::Site(x)];
        let mut cur = x;
        while !self.is_root(cur) {
            match g.neighbor(cur, self.parent[cur] as usize) {
                Vertex::Sink => {
                    path.push(Vertex::Sink);
                    break;
                }
                Vertex::Site(p) => {
                    path.push(Vertex::Site(p));
                    cur = p;
                }
            }
            if path.len() > self.len() + 1 {
                break;
            }
        }
        path
    }
}
