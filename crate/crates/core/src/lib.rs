//! Citation-network growth analysis.
//!
//! The crate turns a directed patent citation graph into technology
//! communities and forecasts how each community grows:
//!
//! * [`citegraph`] loads and validates the graph (DOT subset or edge CSV).
//! * [`walker`] samples second-order biased random walks (node2vec).
//! * [`skipgram`] learns node embeddings with skip-gram and negative sampling.
//! * [`dendro`] clusters embeddings with Ward linkage and cuts the tree by
//!   merge height or by the inconsistency criterion.
//! * [`hawkes`], [`arima`] and [`lstm`] are the three competing forecasters.
//! * [`evalmetrics`] scores forecasts with MAPE and Direction Accuracy.
//! * [`pipeline`] wires everything together behind the `citegrowth` CLI.

pub mod arima;
pub mod citegraph;
pub mod dendro;
pub mod evalmetrics;
pub mod hawkes;
pub mod lstm;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod skipgram;
pub mod walker;

pub use citegraph::{Adjacency, CitationGraph, GraphStats, NodeId};
pub use dendro::{ClusterAssignment, Dendrogram, Merge};
pub use evalmetrics::{ClusterForecast, ScoreTable};
pub use hawkes::{EventSeries, HawkesParams};
pub use skipgram::{Embedding, EmbeddingParams};
pub use walker::{AliasTable, WalkCorpus, WalkParams};
