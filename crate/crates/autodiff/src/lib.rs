//! Dense tensors with tape-based reverse-mode differentiation, an Adam
//! optimizer and a JSON checkpoint format.
//!
//! ```
//! use autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.leaf(Tensor::scalar(4.0));
//! let z = tape.mul(x, y).unwrap();
//! let g = tape.backward(z).unwrap();
//! assert_eq!(g.get(x).unwrap().data(), &[4.0]);
//! assert_eq!(g.get(y).unwrap().data(), &[3.0]);
//! ```

mod backward;
mod error;
pub mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use backward::Gradients;
pub use error::{AutodiffError, Result};
pub use gradcheck::{grad_check, op_suite, GradCheckReport, OpCheck};
pub use optim::{adam_step, Adam, AdamConfig, AdamState};
pub use params::{Bound, Checkpoint, ParamSet, TensorRecord};
pub use tape::{BatchStats, Tape, Var};
pub use tensor::Tensor;
