//! Classical comparison solvers: metaheuristics on a giant-tour encoding,
//! clustering plus worker routing, and a random-assignment control.

mod giant;
mod kmeans;
mod meta;

pub use giant::{evaluate_giant, random_move, GiantScorer, GiantTour, Move};
pub use kmeans::{
    assignment_solve, kmeans_assign, kmeans_solve, normalized_features, random_assign, random_solve, KMeansResult,
};
pub use meta::{
    ba_solve, greedy_initial, sa_solve, ts_solve, AnnealConfig, BeesConfig, MetaConfig, SearchResult, TabuConfig,
};
