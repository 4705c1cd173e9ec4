//! Exhaustive exact solver for tiny instances.
//!
//! Every ordered subset of a vehicle's customers is a candidate served
//! sequence (the rest are rejected). A depth-first pass over all feasible
//! sequences records the shortest closed tour per served set; the best plan
//! for an assigned set is then a scan over its subsets. Distances and the
//! clock are accumulated in the same order as [`backtrack`], so costs agree
//! bit-for-bit with the domain evaluators.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::domain::{
    backtrack_with, hybrid_cost, rejection_rate, DistanceMatrix, Instance, Metric, Node, SolutionReport,
    SubTourPlan,
};
use crate::error::{CoreError, Result};
use crate::exec::Exec;

#[cfg(doc)]
use crate::domain::backtrack;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleLimits {
    pub max_n: usize,
    pub max_per_vehicle: usize,
}

impl Default for OracleLimits {
    fn default() -> Self {
        Self {
            max_n: 8,
            max_per_vehicle: 6,
        }
    }
}

/// Hard ceiling on the subset table size.
const TABLE_BITS: usize = 20;

#[derive(Debug, Clone)]
struct Tour {
    len: f64,
    seq: Vec<usize>,
}

/// Shortest feasible closed tour per served set over `ids`, indexed by the
/// bit mask of positions in `ids`. `None` marks sets with no feasible order.
struct SubsetTable {
    ids: Vec<usize>,
    best: Vec<Option<Tour>>,
}

impl SubsetTable {
    fn build(dm: &DistanceMatrix, inst: &Instance, ids: &[usize], exec: Exec) -> Self {
        let k = ids.len();
        let mut best: Vec<Option<Tour>> = vec![None; 1 << k];
        best[0] = Some(Tour {
            len: dm.dist(Node::Depot, Node::Depot),
            seq: Vec::new(),
        });
        // Subtrees rooted at different first customers are independent;
        // merging them in ascending order with a strict comparison keeps the
        // lexicographically smallest sequence among equal lengths.
        let roots: Vec<usize> = (0..k).collect();
        let parts = exec.map(&roots, |&first| {
            let mut local: Vec<Option<Tour>> = vec![None; 1 << k];
            let mut seq = Vec::with_capacity(k);
            dfs(dm, inst, ids, Some(first), 0, Node::Depot, 0.0, 0.0, &mut seq, &mut local);
            local
        });
        for part in parts {
            for (slot, cand) in best.iter_mut().zip(part) {
                if let Some(c) = cand {
                    if slot.as_ref().is_none_or(|b| c.len < b.len) {
                        *slot = Some(c);
                    }
                }
            }
        }
        Self { ids: ids.to_vec(), best }
    }

    /// Best plan when the customers at positions `mask` are assigned.
    fn plan_for(&self, dm: &DistanceMatrix, inst: &Instance, vehicle: usize, mask: usize) -> SubTourPlan {
        let assigned = mask.count_ones() as usize;
        if assigned == 0 {
            return SubTourPlan::empty(vehicle);
        }
        let mut chosen: Option<(f64, usize)> = None;
        let mut sub = mask;
        loop {
            if let Some(t) = &self.best[sub] {
                let served = sub.count_ones() as usize;
                let j = hybrid_cost(t.len, assigned - served, assigned, inst.beta);
                let better = match chosen {
                    None => true,
                    Some((bj, bs)) => {
                        let bserved = bs.count_ones() as usize;
                        j < bj
                            || (j == bj && served > bserved)
                            || (j == bj && served == bserved && t.seq < self.best[bs].as_ref().unwrap().seq)
                    }
                };
                if better {
                    chosen = Some((j, sub));
                }
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & mask;
        }
        let (_, sub) = chosen.expect("the empty served set is always feasible");
        let seq = &self.best[sub].as_ref().unwrap().seq;
        let mut plan = backtrack_with(dm, inst, vehicle, seq);
        debug_assert!(plan.rejected.is_empty());
        plan.rejected = (0..self.ids.len())
            .filter(|&i| mask & (1 << i) != 0 && sub & (1 << i) == 0)
            .map(|i| self.ids[i])
            .collect();
        plan.rej_rate = rejection_rate(plan.rejected.len(), assigned);
        plan.hybrid_cost = hybrid_cost(plan.length, plan.rejected.len(), assigned, inst.beta);
        plan
    }
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    dm: &DistanceMatrix,
    inst: &Instance,
    ids: &[usize],
    only: Option<usize>,
    mask: usize,
    at: Node,
    clock: f64,
    length: f64,
    seq: &mut Vec<usize>,
    best: &mut [Option<Tour>],
) {
    for i in 0..ids.len() {
        if mask & (1 << i) != 0 || only.is_some_and(|o| o != i) {
            continue;
        }
        let c = ids[i];
        let cust = inst.customer(c);
        let leg = dm.dist(at, Node::Customer(c));
        let arrival = clock + leg;
        if arrival > cust.t {
            continue;
        }
        let len = length + leg;
        let here = Node::Customer(c);
        let total = len + dm.dist(here, Node::Depot);
        let next = mask | (1 << i);
        seq.push(c);
        if best[next].as_ref().is_none_or(|b| total < b.len) {
            best[next] = Some(Tour {
                len: total,
                seq: seq.clone(),
            });
        }
        dfs(dm, inst, ids, None, next, here, f64::max(arrival, cust.s), len, seq, best);
        seq.pop();
    }
}

/// Minimum hybrid cost plan for one vehicle serving a subset of `assigned`
/// in some order. Ties prefer more served customers, then the
/// lexicographically smallest served sequence.
pub fn best_subtour_exact(
    inst: &Instance,
    vehicle: usize,
    assigned: &[usize],
    limits: &OracleLimits,
) -> Result<SubTourPlan> {
    if assigned.len() > limits.max_per_vehicle {
        return Err(CoreError::OracleLimit {
            what: "customers per vehicle",
            got: assigned.len(),
            limit: limits.max_per_vehicle,
        });
    }
    let mut ids = assigned.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let dm = DistanceMatrix::new(inst);
    let table = SubsetTable::build(&dm, inst, &ids, Exec::Sequential);
    Ok(table.plan_for(&dm, inst, vehicle, (1 << ids.len()) - 1))
}

/// Exact min-max solution. Vehicles are interchangeable, so only canonical
/// assignments (each vehicle's first customer comes after the previous
/// vehicle's first customer) are scored; the lexicographically smallest
/// optimal assignment is always canonical, so the result is the same as
/// scanning all `m^n` assignments in lexicographic order.
pub fn solve_exact(inst: &Instance, limits: &OracleLimits) -> Result<SolutionReport> {
    solve_exact_with(inst, limits, Exec::default())
}

pub fn solve_exact_with(inst: &Instance, limits: &OracleLimits, exec: Exec) -> Result<SolutionReport> {
    let n = inst.n();
    let limit = limits.max_n.min(TABLE_BITS);
    if n > limit {
        return Err(CoreError::OracleLimit {
            what: "customers",
            got: n,
            limit,
        });
    }
    let start = Instant::now();
    let dm = DistanceMatrix::new(inst);
    let ids: Vec<usize> = (0..n).collect();
    let table = SubsetTable::build(&dm, inst, &ids, exec);
    let cost_of = |mask: usize| table.plan_for(&dm, inst, 0, mask).hybrid_cost;
    let subset_cost: Vec<f64> = exec.map_indexed(1 << n, cost_of);

    let assignments = canonical_assignments(n, inst.m);
    let scores = exec.map(&assignments, |a| {
        let mut masks = vec![0usize; inst.m];
        for (c, &b) in a.iter().enumerate() {
            masks[b] |= 1 << c;
        }
        masks.iter().map(|&mk| subset_cost[mk]).fold(0.0, f64::max)
    });
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    let vehicle_of = &assignments[best];
    let plans: Vec<SubTourPlan> = (0..inst.m)
        .map(|b| {
            let mask = vehicle_of
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == b)
                .fold(0usize, |acc, (c, _)| acc | (1 << c));
            table.plan_for(&dm, inst, b, mask)
        })
        .collect();
    SolutionReport::from_plans(plans, n, inst.beta, start.elapsed().as_secs_f64())
}

/// Restricted-growth strings of length `n` over `m` labels, in
/// lexicographic order.
pub fn canonical_assignments(n: usize, m: usize) -> Vec<Vec<usize>> {
    fn rec(a: &mut Vec<usize>, used: usize, n: usize, m: usize, out: &mut Vec<Vec<usize>>) {
        if a.len() == n {
            out.push(a.clone());
            return;
        }
        for b in 0..(used + 1).min(m) {
            a.push(b);
            rec(a, used.max(b + 1), n, m, out);
            a.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), 0, n, m, &mut out);
    out
}
