//! Problem representation, route simulation and objectives.

mod assignment;
mod geometry;
mod instance;
mod io;
mod objective;
mod plan;

pub use assignment::Assignment;
pub use geometry::{euclid, DistanceMatrix, Metric, Node, Point};
pub use instance::{generate_instance, Customer, Depot, Instance, DEPOT_CLOSE, WINDOW_WIDTH};
pub use io::{parse_instance, read_dataset, write_dataset, write_instance};
pub use objective::{check_coverage, objective_minmax, objective_overall, ObjectiveMode, SolutionReport};
pub use plan::{backtrack, backtrack_with, evaluate_plan, hybrid_cost, rejection_rate, SubTourPlan};
