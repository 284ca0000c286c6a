//! Abelian sandpile laboratory on wired hypercubic boxes.
//!
//! Sandpile dynamics (toppling, stabilization, waves, burning), the
//! Majumdar-Dhar and wave bijections to spanning forests, Wilson sampling
//! of uniform forests, exact Green function and tree-count computations,
//! and Monte Carlo estimators for avalanche tails.

pub mod error;
pub mod experiments;
pub mod bijection;
pub mod forest;
pub mod laplacian;
pub mod lattice;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod sandpile;
pub mod tails;
pub mod walk;
pub mod waves;
pub mod wilson;

pub use error::{Error, Result};
pub use lattice::{build_wired_box, BoxSpec, Vertex, WiredGraph, SINK};
