//! Customer-to-vehicle assignment policy and its training loop.

mod model;
mod solve;
mod train;

pub use model::{Manager, ManagerArch, ManagerVariant, VehicleHeads};
pub use solve::{
    assign, assignment_probs, evaluate_assignments, gin_embed, solve, solve_batch, vehicle_embeddings, GinOutput,
    WorkerBank,
};
pub use train::{
    evaluate_manager, manager_reports, train_manager, train_manager_with, ManagerBaseline, ManagerConfig, ManagerTraining,
    ValidationPoint,
};
