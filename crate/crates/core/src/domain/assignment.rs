use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Vehicle index per customer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub vehicle_of: Vec<usize>,
    /// Total log-probability of a sampled assignment.
    pub logprob: Option<f64>,
}

impl Assignment {
    pub fn new(vehicle_of: Vec<usize>) -> Self {
        Self {
            vehicle_of,
            logprob: None,
        }
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        if self.vehicle_of.len() != n {
            return Err(CoreError::Coverage(format!(
                "assignment covers {} customers, expected {n}",
                self.vehicle_of.len()
            )));
        }
        if let Some((c, &b)) = self.vehicle_of.iter().enumerate().find(|(_, &b)| b >= m) {
            return Err(CoreError::Coverage(format!(
                "customer {c} assigned to vehicle {b} but m = {m}"
            )));
        }
        Ok(())
    }

    /// Customer ids per vehicle, ascending.
    pub fn groups(&self, m: usize) -> Vec<Vec<usize>> {
        let mut g = vec![Vec::new(); m];
        for (c, &b) in self.vehicle_of.iter().enumerate() {
            g[b].push(c);
        }
        g
    }

    /// Largest minus smallest number of customers per vehicle.
    pub fn spread(&self, m: usize) -> usize {
        let sizes: Vec<usize> = self.groups(m).iter().map(Vec::len).collect();
        sizes.iter().max().unwrap_or(&0) - sizes.iter().min().unwrap_or(&0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_and_spread() {
        let a = Assignment::new(vec![1, 0, 1, 1]);
        assert_eq!(a.groups(3), vec![vec![1], vec![0, 2, 3], vec![]]);
        assert_eq!(a.spread(3), 3);
        assert!(a.validate(4, 3).is_ok());
        assert!(a.validate(4, 1).is_err());
        assert!(a.validate(5, 3).is_err());
    }
}
