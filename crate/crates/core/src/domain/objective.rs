use serde::{Deserialize, Serialize};

use super::plan::SubTourPlan;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveMode {
    /// Worst vehicle's hybrid cost.
    #[default]
    Minmax,
    /// Fleet-average length plus penalty on the total rejection fraction.
    Overall,
}

/// Checks that `plans` are one per vehicle and that their served and
/// rejected sets partition customers `0..n`.
pub fn check_coverage(plans: &[SubTourPlan], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for (b, p) in plans.iter().enumerate() {
        if p.vehicle != b {
            return Err(CoreError::Coverage(format!("plan {b} belongs to vehicle {}", p.vehicle)));
        }
        if p.service_times.len() != p.served.len() {
            return Err(CoreError::Coverage(format!("plan {b} has mismatched service times")));
        }
        for &c in p.served.iter().chain(&p.rejected) {
            if c >= n {
                return Err(CoreError::Coverage(format!("customer {c} out of range (n = {n})")));
            }
            if std::mem::replace(&mut seen[c], true) {
                return Err(CoreError::Coverage(format!("customer {c} appears twice")));
            }
        }
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(CoreError::Coverage(format!("customer {c} is not covered")));
    }
    Ok(())
}

pub fn objective_minmax(plans: &[SubTourPlan], n: usize) -> Result<f64> {
    check_coverage(plans, n)?;
    Ok(plans.iter().map(|p| p.hybrid_cost).fold(0.0, f64::max))
}

pub fn objective_overall(plans: &[SubTourPlan], n: usize, beta: f64) -> Result<f64> {
    check_coverage(plans, n)?;
    let (len, rej) = overall_parts(plans, n);
    Ok(len + beta * rej)
}

fn overall_parts(plans: &[SubTourPlan], n: usize) -> (f64, f64) {
    let m = plans.len().max(1) as f64;
    let len = plans.iter().map(|p| p.length).sum::<f64>() / m;
    let rejected: usize = plans.iter().map(|p| p.rejected.len()).sum();
    let rej = if n == 0 { 0.0 } else { rejected as f64 / n as f64 };
    (len, rej)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionReport {
    pub plans: Vec<SubTourPlan>,
    pub minmax_cost: f64,
    pub overall_length: f64,
    pub overall_rej: f64,
    pub overall_cost: f64,
    pub wall_time: f64,
}

impl SolutionReport {
    pub fn from_plans(plans: Vec<SubTourPlan>, n: usize, beta: f64, wall_time: f64) -> Result<Self> {
        let minmax_cost = objective_minmax(&plans, n)?;
        let (overall_length, overall_rej) = overall_parts(&plans, n);
        Ok(Self {
            plans,
            minmax_cost,
            overall_length,
            overall_rej,
            overall_cost: overall_length + beta * overall_rej,
            wall_time,
        })
    }

    pub fn cost(&self, mode: ObjectiveMode) -> f64 {
        match mode {
            ObjectiveMode::Minmax => self.minmax_cost,
            ObjectiveMode::Overall => self.overall_cost,
        }
    }

    /// The plan attaining the min-max cost (first on ties).
    pub fn worst_plan(&self) -> Option<&SubTourPlan> {
        self.plans
            .iter()
            .find(|p| p.hybrid_cost == self.minmax_cost)
    }

    /// `(length, rejection rate)` in the units of the chosen objective.
    pub fn length_and_rej(&self, mode: ObjectiveMode) -> (f64, f64) {
        match mode {
            ObjectiveMode::Minmax => self
                .worst_plan()
                .map_or((0.0, 0.0), |p| (p.length, p.rej_rate)),
            ObjectiveMode::Overall => (self.overall_length, self.overall_rej),
        }
    }

    pub fn assigned_counts(&self) -> Vec<usize> {
        self.plans.iter().map(SubTourPlan::assigned).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(vehicle: usize, served: Vec<usize>, rejected: Vec<usize>, length: f64, beta: f64) -> SubTourPlan {
        let assigned = served.len() + rejected.len();
        let rej_rate = if assigned == 0 { 0.0 } else { rejected.len() as f64 / assigned as f64 };
        SubTourPlan {
            vehicle,
            service_times: vec![0.0; served.len()],
            served,
            rejected,
            return_time: 0.0,
            length,
            rej_rate,
            hybrid_cost: length + beta * rej_rate,
        }
    }

    #[test]
    fn minmax_of_two() {
        let plans = vec![plan(0, vec![0], vec![], 3.0, 0.0), plan(1, vec![1], vec![], 5.0, 0.0)];
        assert_eq!(objective_minmax(&plans, 2).unwrap(), 5.0);
        let single = vec![plan(0, vec![0, 1], vec![], 2.5, 0.0)];
        assert_eq!(objective_minmax(&single, 2).unwrap(), 2.5);
    }

    #[test]
    fn overall_matches_table_example() {
        // m = 5, n = 100: mean length 3.48 and 0.07% rejected is 3.55.
        let beta = 100.0;
        let mut ids = 0..100;
        let mut plans = Vec::new();
        for b in 0..5 {
            let served: Vec<usize> = ids.by_ref().take(20).collect();
            plans.push(plan(b, served, vec![], 3.48, beta));
        }
        let base = objective_overall(&plans, 100, beta).unwrap();
        assert!((base - 3.48).abs() < 1e-12);
        let with_rej = 3.48 + beta * 0.0007;
        assert!((with_rej - 3.55).abs() < 1e-9);
    }

    #[test]
    fn coverage_errors() {
        let plans = vec![plan(0, vec![0], vec![], 1.0, 0.0)];
        assert!(objective_minmax(&plans, 2).is_err());
        let dup = vec![plan(0, vec![0], vec![0], 1.0, 0.0)];
        assert!(objective_minmax(&dup, 1).is_err());
        let wrong_vehicle = vec![plan(1, vec![0], vec![], 1.0, 0.0)];
        assert!(objective_overall(&wrong_vehicle, 1, 1.0).is_err());
    }

    #[test]
    fn report_fields() {
        let beta = 10.0;
        let plans = vec![plan(0, vec![0], vec![1], 2.0, beta), plan(1, vec![2, 3], vec![], 4.0, beta)];
        let r = SolutionReport::from_plans(plans, 4, beta, 0.0).unwrap();
        assert_eq!(r.minmax_cost, 7.0);
        assert_eq!(r.worst_plan().unwrap().vehicle, 0);
        assert_eq!(r.overall_length, 3.0);
        assert_eq!(r.overall_rej, 0.25);
        assert_eq!(r.overall_cost, 5.5);
        assert_eq!(r.assigned_counts(), vec![2, 2]);
    }
}
