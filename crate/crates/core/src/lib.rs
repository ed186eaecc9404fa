//! Molecular property prediction with a path-augmented graph transformer.
//!
//! The pipeline runs SMILES text through a small parser into a molecular
//! graph, derives pairwise shortest-path features (bond features along the
//! path, a distance one-hot, shared-ring flags), and feeds node and path
//! features into an additive global-attention network. A conventional
//! graph-convolution baseline and a local-attention variant share the same
//! featurization so the three models are directly comparable.
//!
//! Everything is dense `f64` on a reverse-mode gradient tape; runs are
//! deterministic given a seed.

pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod gradcheck;
pub mod model;
pub mod molgraph;
pub mod ring_task;
pub mod rng;
pub mod smiles;
pub mod training;

pub use molgraph::{prepare, Prepared};
pub use smiles::{parse_smiles, MolGraph};
