use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{Node, Point};

/// Width of every generated time window.
pub const WINDOW_WIDTH: f64 = 3.0;
/// Finite stand-in for the depot's unbounded deadline.
pub const DEPOT_CLOSE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Customer {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    /// Window start.
    pub s: f64,
    /// Deadline.
    pub t: f64,
}

impl Customer {
    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }

    /// Raw node features `(x, y, s, t)`.
    pub fn features(&self) -> [f64; 4] {
        [self.x, self.y, self.s, self.t]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Depot {
    pub x: f64,
    pub y: f64,
    pub open: f64,
    pub close: f64,
}

impl Depot {
    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn features(&self) -> [f64; 4] {
        [self.x, self.y, self.open, self.close]
    }
}

impl Default for Depot {
    fn default() -> Self {
        Self {
            x: 0.5,
            y: 0.5,
            open: 0.0,
            close: DEPOT_CLOSE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub n: usize,
    pub m: usize,
    pub beta: f64,
    pub seed: u64,
    pub depot: Depot,
    pub customers: Vec<Customer>,
}

impl Instance {
    pub fn n(&self) -> usize {
        self.customers.len()
    }

    pub fn point(&self, v: Node) -> Point {
        match v {
            Node::Depot => self.depot.point(),
            Node::Customer(i) => self.customers[i].point(),
        }
    }

    pub fn customer(&self, id: usize) -> &Customer {
        &self.customers[id]
    }

    /// Copy of the instance with a different fleet size or penalty.
    pub fn with_fleet(&self, m: usize, beta: f64) -> Self {
        Self {
            m,
            beta,
            ..self.clone()
        }
    }
}

/// Uniform customers on the unit square with windows `[s, s + 3]`,
/// `s ~ U[0, 3]`, and the depot at the centre. Deterministic in `seed`.
pub fn generate_instance(n: usize, m: usize, beta: f64, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let customers = (0..n)
        .map(|id| {
            let x = rng.gen_range(0.0..=1.0);
            let y = rng.gen_range(0.0..=1.0);
            let s = window_start(&mut rng);
            Customer {
                id,
                x,
                y,
                s,
                t: s + WINDOW_WIDTH,
            }
        })
        .collect();
    Instance {
        n,
        m,
        beta,
        seed,
        depot: Depot::default(),
        customers,
    }
}

/// `U[0, 3]` on the grid of multiples of 2^-50, on which `s + 3` is exact
/// and therefore `t - s == 3` holds bit-for-bit.
fn window_start<R: Rng>(rng: &mut R) -> f64 {
    const SCALE: f64 = (1u64 << 50) as f64;
    let k = rng.gen_range(0..=3 * (1u64 << 50));
    k as f64 / SCALE
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_setting_shape() {
        for seed in 0..5 {
            let inst = generate_instance(50, 10, 100.0, seed);
            assert_eq!(inst.depot, Depot::default());
            assert_eq!((inst.depot.x, inst.depot.y), (0.5, 0.5));
            assert_eq!(inst.customers.len(), 50);
            for (i, c) in inst.customers.iter().enumerate() {
                assert_eq!(c.id, i);
                assert_eq!(c.t - c.s, 3.0);
                assert!((0.0..=1.0).contains(&c.x) && (0.0..=1.0).contains(&c.y));
                assert!((0.0..=3.0).contains(&c.s));
            }
        }
    }

    #[test]
    fn single_customer() {
        let inst = generate_instance(1, 1, 0.0, 0);
        assert_eq!(inst.n(), 1);
        assert!((0.0..=3.0).contains(&inst.customers[0].s));
    }

    #[test]
    fn deterministic() {
        let a = serde_json::to_string(&generate_instance(20, 4, 100.0, 9)).unwrap();
        let b = serde_json::to_string(&generate_instance(20, 4, 100.0, 9)).unwrap();
        assert_eq!(a, b);
        assert_ne!(generate_instance(20, 4, 100.0, 10), generate_instance(20, 4, 100.0, 9));
    }

    #[test]
    fn window_start_statistics() {
        // 10^4 customers: mean of U[0,3] is 1.5, standard error ~0.0087.
        let inst = generate_instance(10_000, 1, 100.0, 2024);
        let mean = inst.customers.iter().map(|c| c.s).sum::<f64>() / 1e4;
        assert!((mean - 1.5).abs() < 0.05, "{mean}");
        assert!(inst.customers.iter().all(|c| c.t - c.s == 3.0));
    }
}
