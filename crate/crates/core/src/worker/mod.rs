//! Attention encoder-decoder routing policy for one vehicle, trained with
//! REINFORCE against a greedy rollout baseline.

mod model;
mod rollout;
mod train;

pub use model::{DecodeMode, Worker, WorkerArch};
pub use rollout::{embed, greedy_plans, greedy_step_probs, rollout, tour_logprob, SubJob, INFERENCE_CHUNK};
pub(crate) use train::fresh_batch;
pub use train::{train_worker, train_worker_with, CurvePoint, WorkerConfig, WorkerTraining};
