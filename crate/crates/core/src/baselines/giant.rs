use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    backtrack, hybrid_cost, DistanceMatrix, Instance, Metric, Node, ObjectiveMode, SolutionReport,
};
use crate::error::{CoreError, Result};

/// One permutation of all customers cut into `m` consecutive segments.
/// Segment `b` is vehicle `b`'s visiting order; segments may be empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GiantTour {
    pub perm: Vec<usize>,
    /// `m - 1` sorted cut positions in `0..=n`.
    pub splits: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Move {
    Swap(usize, usize),
    Reverse(usize, usize),
    /// Remove the element at the first position and reinsert it at the second.
    Insert(usize, usize),
    /// Move cut `k` one step left (`false`) or right (`true`).
    ShiftCut(usize, bool),
}

impl GiantTour {
    pub fn new(perm: Vec<usize>, splits: Vec<usize>) -> Self {
        Self { perm, splits }
    }

    /// Customers in id order, all on vehicle 0.
    pub fn identity(n: usize, m: usize) -> Self {
        Self::new((0..n).collect(), vec![n; m.saturating_sub(1)])
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let mut splits: Vec<usize> = (1..m).map(|_| rng.gen_range(0..=n)).collect();
        splits.sort_unstable();
        Self::new(perm, splits)
    }

    /// Concatenates per-vehicle routes.
    pub fn from_routes(routes: &[Vec<usize>]) -> Self {
        let mut perm = Vec::new();
        let mut splits = Vec::new();
        for (b, r) in routes.iter().enumerate() {
            perm.extend_from_slice(r);
            if b + 1 < routes.len() {
                splits.push(perm.len());
            }
        }
        Self::new(perm, splits)
    }

    pub fn n(&self) -> usize {
        self.perm.len()
    }

    pub fn m(&self) -> usize {
        self.splits.len() + 1
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        if self.perm.len() != n || self.m() != m {
            return Err(CoreError::Coverage(format!(
                "giant tour has {} customers and {} segments, expected {n} and {m}",
                self.perm.len(),
                self.m()
            )));
        }
        let mut seen = vec![false; n];
        for &c in &self.perm {
            if c >= n || std::mem::replace(&mut seen[c], true) {
                return Err(CoreError::Coverage(format!("giant tour is not a permutation (customer {c})")));
            }
        }
        if self.splits.windows(2).any(|w| w[0] > w[1]) || self.splits.iter().any(|&s| s > n) {
            return Err(CoreError::Coverage("giant tour cuts are unsorted or out of range".into()));
        }
        Ok(())
    }

    pub fn segment(&self, b: usize) -> &[usize] {
        let lo = if b == 0 { 0 } else { self.splits[b - 1] };
        let hi = self.splits.get(b).copied().unwrap_or(self.perm.len());
        &self.perm[lo..hi]
    }

    pub fn segments(&self) -> impl Iterator<Item = &[usize]> {
        (0..self.m()).map(|b| self.segment(b))
    }

    /// Applies `mv`. Out-of-range indices and cut shifts that would break
    /// the ordering leave the tour unchanged.
    pub fn apply(&mut self, mv: Move) {
        let n = self.perm.len();
        match mv {
            Move::Swap(i, j) if i < n && j < n => self.perm.swap(i, j),
            Move::Reverse(i, j) if i < n && j < n => self.perm[i.min(j)..=i.max(j)].reverse(),
            Move::Insert(i, j) if i < n && j < n => {
                let c = self.perm.remove(i);
                self.perm.insert(j, c);
            }
            Move::ShiftCut(k, right) if k < self.splits.len() => {
                let lo = if k == 0 { 0 } else { self.splits[k - 1] };
                let hi = self.splits.get(k + 1).copied().unwrap_or(n);
                let s = &mut self.splits[k];
                if right && *s < hi {
                    *s += 1;
                } else if !right && *s > lo {
                    *s -= 1;
                }
            }
            _ => {}
        }
    }

    pub fn moved(&self, mv: Move) -> Self {
        let mut g = self.clone();
        g.apply(mv);
        g
    }
}

/// Draws a random move. Position pairs are at most `reach` apart; cut
/// shifts are offered only when there is more than one vehicle.
pub fn random_move<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize, reach: usize) -> Move {
    let kinds = if m > 1 { 4 } else { 3 };
    let kind = rng.gen_range(0..kinds);
    if kind == 3 {
        return Move::ShiftCut(rng.gen_range(0..m - 1), rng.gen());
    }
    if n == 0 {
        return Move::Swap(0, 0);
    }
    let reach = reach.clamp(1, n);
    let i = rng.gen_range(0..n);
    let lo = i.saturating_sub(reach);
    let hi = (i + reach).min(n - 1);
    let j = rng.gen_range(lo..=hi);
    match kind {
        0 => Move::Swap(i, j),
        1 => Move::Reverse(i, j),
        _ => Move::Insert(i, j),
    }
}

/// Routes each segment with backtracking.
pub fn evaluate_giant(gt: &GiantTour, inst: &Instance) -> Result<SolutionReport> {
    gt.validate(inst.n(), inst.m)?;
    let plans = gt.segments().enumerate().map(|(b, s)| backtrack(inst, b, s)).collect();
    SolutionReport::from_plans(plans, inst.n(), inst.beta, 0.0)
}

/// Allocation-free cost of giant tours, bit-identical to
/// [`evaluate_giant`] followed by [`SolutionReport::cost`].
#[derive(Debug, Clone)]
pub struct GiantScorer<'a> {
    pub inst: &'a Instance,
    dm: DistanceMatrix,
    pub objective: ObjectiveMode,
}

impl<'a> GiantScorer<'a> {
    pub fn new(inst: &'a Instance, objective: ObjectiveMode) -> Self {
        Self {
            inst,
            dm: DistanceMatrix::new(inst),
            objective,
        }
    }

    /// Length and rejected count of one segment.
    fn route(&self, seg: &[usize]) -> (f64, usize) {
        let mut clock = 0.0;
        let mut length = 0.0;
        let mut at = Node::Depot;
        let mut rejected = 0;
        for &c in seg {
            let leg = self.dm.dist(at, Node::Customer(c));
            let arrival = clock + leg;
            let cust = &self.inst.customers[c];
            if arrival > cust.t {
                rejected += 1;
                continue;
            }
            length += leg;
            clock = f64::max(arrival, cust.s);
            at = Node::Customer(c);
        }
        (length + self.dm.dist(at, Node::Depot), rejected)
    }

    pub fn cost(&self, gt: &GiantTour) -> f64 {
        let beta = self.inst.beta;
        match self.objective {
            ObjectiveMode::Minmax => gt
                .segments()
                .map(|s| {
                    let (len, rej) = self.route(s);
                    hybrid_cost(len, rej, s.len(), beta)
                })
                .fold(0.0, f64::max),
            ObjectiveMode::Overall => {
                let (mut len, mut rej) = (0.0, 0);
                for s in gt.segments() {
                    let (l, r) = self.route(s);
                    len += l;
                    rej += r;
                }
                let n = self.inst.n();
                let frac = if n == 0 { 0.0 } else { rej as f64 / n as f64 };
                len / gt.m() as f64 + beta * frac
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::generate_instance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trivial_moves() {
        let g = GiantTour::new(vec![3, 1, 0, 2], vec![2]);
        assert_eq!(g.moved(Move::Swap(1, 1)), g);
        assert_eq!(g.moved(Move::Reverse(1, 2)), g.moved(Move::Swap(1, 2)));
        assert_eq!(g.moved(Move::Insert(0, 3)).moved(Move::Insert(3, 0)), g);
        assert_eq!(g.moved(Move::ShiftCut(0, true)).splits, vec![3]);
        let edge = GiantTour::new(vec![0, 1], vec![2]);
        assert_eq!(edge.moved(Move::ShiftCut(0, true)), edge);
    }

    #[test]
    fn all_cuts_at_end_load_vehicle_zero() {
        let inst = generate_instance(5, 3, 100.0, 2);
        let r = evaluate_giant(&GiantTour::identity(5, 3), &inst).unwrap();
        assert_eq!(r.assigned_counts(), vec![5, 0, 0]);
        assert_eq!(r.plans[1].hybrid_cost, 0.0);
    }

    #[test]
    fn scorer_matches_reports() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for seed in 0..30 {
            let inst = generate_instance(7, 3, 10.0 * seed as f64, seed);
            for mode in [ObjectiveMode::Minmax, ObjectiveMode::Overall] {
                let s = GiantScorer::new(&inst, mode);
                let g = GiantTour::random(&mut rng, 7, 3);
                assert_eq!(s.cost(&g), evaluate_giant(&g, &inst).unwrap().cost(mode));
            }
        }
    }

    #[test]
    fn moves_preserve_validity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut g = GiantTour::random(&mut rng, 9, 4);
        for _ in 0..2000 {
            let reach = rng.gen_range(1..10);
            g.apply(random_move(&mut rng, 9, 4, reach));
            g.validate(9, 4).unwrap();
        }
    }
}
