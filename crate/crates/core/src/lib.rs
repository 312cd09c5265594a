//! Qualitative Explainable Graphs (QXGs) for automated-driving scenes and a
//! graph-attention edge classifier that identifies the objects relevant to
//! the ego vehicle.
//!
//! The pipeline is: [`scene`] (tracked boxes) → [`calculi`] (qualitative
//! relations) → [`qxg`] (graph per annotated frame) → [`model`] (embeddings,
//! two GAT layers, star-edge classifier) trained with [`losses`] by
//! [`train`]; [`baselines`] classify the same star edges without graph
//! context.

pub mod baselines;
pub mod calculi;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod model;
pub mod nn;
pub mod qxg;
pub mod scene;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
