//! Solver laboratory for the multiple-vehicle travelling salesman problem
//! with time windows and rejections.
//!
//! Customers that cannot be reached before their deadline are dropped from a
//! route (and penalised) instead of making the route infeasible. The crate
//! provides the problem model, an exhaustive oracle for tiny instances,
//! a learned two-level policy (a manager assigns customers to vehicles, a
//! worker orders each vehicle's customers) and classical search baselines.
//!
//! ```
//! use mtsp_core::domain::{backtrack, generate_instance};
//!
//! let inst = generate_instance(6, 2, 100.0, 7);
//! let plan = backtrack(&inst, 0, &[0, 1, 2]);
//! assert_eq!(plan.served.len() + plan.rejected.len(), 3);
//! ```

pub mod baselines;
pub mod domain;
pub mod error;
pub mod exec;
pub mod manager;
mod nn;
pub mod oracle;
pub mod worker;

pub use error::{CoreError, Result};
pub use exec::Exec;
pub use nn::BnMode;
