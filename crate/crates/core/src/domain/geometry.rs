use serde::{Deserialize, Serialize};

use super::instance::Instance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

pub fn euclid(a: Point, b: Point) -> f64 {
    let (dx, dy) = (a.x - b.x, a.y - b.y);
    (dx * dx + dy * dy).sqrt()
}

/// A stop on a route: the depot or a customer id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Node {
    Depot,
    Customer(usize),
}

/// Travel time between stops (unit speed, so time equals distance).
pub trait Metric {
    fn dist(&self, a: Node, b: Node) -> f64;
}

impl Metric for Instance {
    fn dist(&self, a: Node, b: Node) -> f64 {
        euclid(self.point(a), self.point(b))
    }
}

/// Precomputed `(n + 1) x (n + 1)` distances; the depot is index `n`.
/// Entries are computed with [`euclid`], so lookups agree bit-for-bit with
/// on-the-fly evaluation.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    size: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(inst: &Instance) -> Self {
        let n = inst.n();
        let size = n + 1;
        let pts: Vec<Point> = (0..n)
            .map(Node::Customer)
            .chain(std::iter::once(Node::Depot))
            .map(|v| inst.point(v))
            .collect();
        let mut d = vec![0.0; size * size];
        for i in 0..size {
            for j in 0..size {
                d[i * size + j] = euclid(pts[i], pts[j]);
            }
        }
        Self { size, d }
    }

    fn index(&self, v: Node) -> usize {
        match v {
            Node::Depot => self.size - 1,
            Node::Customer(i) => i,
        }
    }
}

impl Metric for DistanceMatrix {
    fn dist(&self, a: Node, b: Node) -> f64 {
        self.d[self.index(a) * self.size + self.index(b)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euclid_examples() {
        let c = Point::new(0.5, 0.5);
        assert_eq!(euclid(c, c), 0.0);
        assert!((euclid(Point::new(0.0, 0.0), Point::new(1.0, 1.0)) - 1.41421356).abs() < 1e-8);
        assert_eq!(euclid(c, Point::new(0.5, 1.0)), 0.5);
    }

    #[test]
    fn matrix_agrees_with_instance() {
        let inst = super::super::generate_instance(7, 2, 100.0, 3);
        let dm = DistanceMatrix::new(&inst);
        for a in (0..7).map(Node::Customer).chain([Node::Depot]) {
            for b in (0..7).map(Node::Customer).chain([Node::Depot]) {
                assert_eq!(dm.dist(a, b), inst.dist(a, b));
                assert_eq!(dm.dist(a, b), dm.dist(b, a));
            }
        }
    }
}
