use serde::{Deserialize, Serialize};

use super::geometry::{Metric, Node};
use super::instance::Instance;

/// One vehicle's route after repair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubTourPlan {
    pub vehicle: usize,
    pub served: Vec<usize>,
    pub rejected: Vec<usize>,
    /// Service start (arrival clamped to the window start) per served customer.
    pub service_times: Vec<f64>,
    /// Clock when the vehicle is back at the depot.
    pub return_time: f64,
    pub length: f64,
    pub rej_rate: f64,
    pub hybrid_cost: f64,
}

impl SubTourPlan {
    pub fn empty(vehicle: usize) -> Self {
        Self {
            vehicle,
            served: Vec::new(),
            rejected: Vec::new(),
            service_times: Vec::new(),
            return_time: 0.0,
            length: 0.0,
            rej_rate: 0.0,
            hybrid_cost: 0.0,
        }
    }

    pub fn assigned(&self) -> usize {
        self.served.len() + self.rejected.len()
    }
}

/// `length + beta * rejected / assigned`; an idle vehicle costs nothing.
pub fn hybrid_cost(length: f64, rejected: usize, assigned: usize, beta: f64) -> f64 {
    length + beta * rejection_rate(rejected, assigned)
}

/// `rejected / assigned`, and 0 for an idle vehicle.
pub fn rejection_rate(rejected: usize, assigned: usize) -> f64 {
    if assigned == 0 {
        0.0
    } else {
        rejected as f64 / assigned as f64
    }
}

pub fn evaluate_plan(plan: &SubTourPlan, beta: f64) -> f64 {
    plan.length + beta * plan.rej_rate
}

/// Drives `tour` from the depot at time 0. A customer whose arrival would
/// exceed its deadline is dropped and the clock is left as it was; a
/// served customer advances the clock to `max(arrival, s)`.
pub fn backtrack(inst: &Instance, vehicle: usize, tour: &[usize]) -> SubTourPlan {
    backtrack_with(inst, inst, vehicle, tour)
}

/// [`backtrack`] with travel times taken from `metric`.
pub fn backtrack_with<M: Metric + ?Sized>(metric: &M, inst: &Instance, vehicle: usize, tour: &[usize]) -> SubTourPlan {
    let mut clock = 0.0;
    let mut length = 0.0;
    let mut at = Node::Depot;
    let mut served = Vec::with_capacity(tour.len());
    let mut service_times = Vec::with_capacity(tour.len());
    let mut rejected = Vec::new();
    for &c in tour {
        let cust = inst.customer(c);
        let leg = metric.dist(at, Node::Customer(c));
        let arrival = clock + leg;
        if arrival > cust.t {
            rejected.push(c);
            continue;
        }
        length += leg;
        clock = f64::max(arrival, cust.s);
        at = Node::Customer(c);
        served.push(c);
        service_times.push(clock);
    }
    let back = metric.dist(at, Node::Depot);
    length += back;
    let assigned = tour.len();
    let rej_rate = rejection_rate(rejected.len(), assigned);
    SubTourPlan {
        vehicle,
        hybrid_cost: hybrid_cost(length, rejected.len(), assigned, inst.beta),
        served,
        rejected,
        service_times,
        return_time: clock + back,
        length,
        rej_rate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::instance::{Customer, Depot};

    fn inst(customers: &[(f64, f64, f64, f64)], beta: f64) -> Instance {
        Instance {
            n: customers.len(),
            m: 1,
            beta,
            seed: 0,
            depot: Depot::default(),
            customers: customers
                .iter()
                .enumerate()
                .map(|(id, &(x, y, s, t))| Customer { id, x, y, s, t })
                .collect(),
        }
    }

    #[test]
    fn rejects_late_customer_and_reverts_clock() {
        let i = inst(&[(0.5, 0.9, 0.0, 3.0), (0.5, 0.1, 0.0, 0.5)], 100.0);
        let p = backtrack(&i, 0, &[0, 1]);
        assert_eq!(p.served, vec![0]);
        assert_eq!(p.rejected, vec![1]);
        assert!((p.service_times[0] - 0.4).abs() < 1e-12);
        assert!((p.length - 0.8).abs() < 1e-12);
        assert_eq!(p.rej_rate, 0.5);
        assert!((p.hybrid_cost - 50.8).abs() < 1e-12);
        assert!((evaluate_plan(&p, 100.0) - 50.8).abs() < 1e-12);
    }

    #[test]
    fn empty_tour() {
        let i = inst(&[(0.1, 0.1, 0.0, 3.0)], 100.0);
        let p = backtrack(&i, 2, &[]);
        assert_eq!(p, SubTourPlan { return_time: 0.0, ..SubTourPlan::empty(2) });
        assert_eq!(p.hybrid_cost, 0.0);
    }

    #[test]
    fn waits_for_window_start() {
        let i = inst(&[(0.5, 1.0, 1.0, 4.0)], 100.0);
        let p = backtrack(&i, 0, &[0]);
        assert_eq!(p.service_times, vec![1.0]);
        assert_eq!(p.length, 1.0);
        assert_eq!(p.return_time, 1.5);
    }

    #[test]
    fn arrival_at_deadline_is_served() {
        let i = inst(&[(0.5, 1.0, 0.0, 0.5)], 100.0);
        let p = backtrack(&i, 0, &[0]);
        assert_eq!(p.served, vec![0]);
    }

    #[test]
    fn evaluate_examples() {
        let mut p = SubTourPlan::empty(0);
        assert_eq!(evaluate_plan(&p, 100.0), 0.0);
        p.length = 3.56;
        assert!((evaluate_plan(&p, 100.0) - 3.56).abs() < 1e-12);
    }
}
