//! Robust node classification on homophilic and heterophilic graphs.
//!
//! The crate provides sparse graph primitives, neighbor-feature similarity
//! analysis, dual kNN structure learning, a gated propagation model with
//! exact gradients, training utilities, a structural-attack harness and
//! experiment orchestration.

pub mod attack;
pub mod data;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod io;
pub mod knn;
pub mod model;
pub mod similarity;
pub mod sparse;
pub mod stats;
pub mod synthetic;
pub mod train;

pub use data::{DataSplit, Dataset, FeatureMatrix, LabelVector};
pub use error::{Error, Result};
pub use graph::Graph;
pub use knn::{build_dual_knn, DualKnnGraphs};
pub use model::{ModelParams, Variant};
pub use train::{train, TrainConfig, TrainResult};
