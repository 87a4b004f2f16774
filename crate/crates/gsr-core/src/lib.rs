//! GSR: demonstration reweighting for offline imitation learning.
//!
//! Suboptimal demonstrations are organized into a similarity graph, every
//! transition is scored by its graph-search distance to a virtual goal, and
//! per-transition training weight is reallocated through k-NN retrieval. The
//! exported step weights plug into any weighted behavior-cloning trainer; a
//! gridworld benchmark harness verifies end to end that the reweighting
//! improves policy success rate and time-to-success.

pub mod bench;
pub mod data;
pub mod graph;
pub mod knn;
pub mod pipeline;
pub mod reweight;
pub mod value;

pub use data::{load_dataset, save_dataset, DemoDataset};
pub use graph::{build_graph, DemoGraph, GraphConfig};
pub use reweight::{reallocate, ReweightConfig, WeightTable};
pub use value::{TabularMode, ValueTable};
