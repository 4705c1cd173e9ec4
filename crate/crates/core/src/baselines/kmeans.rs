use std::time::Instant;

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{Assignment, Instance, SolutionReport};
use crate::error::Result;
use crate::exec::Exec;
use crate::manager::{evaluate_assignments, WorkerBank};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignment: Assignment,
    pub centroids: Vec<[f64; 4]>,
    /// Within-cluster sum of squares after each assignment step.
    pub wcss: Vec<f64>,
    pub iterations: usize,
}

/// `(x, y, s, t)` per customer, each column scaled to `[0, 1]`. Constant
/// columns become 0.
pub fn normalized_features(inst: &Instance) -> Vec<[f64; 4]> {
    let raw: Vec<[f64; 4]> = inst.customers.iter().map(|c| c.features()).collect();
    let mut lo = [f64::INFINITY; 4];
    let mut hi = [f64::NEG_INFINITY; 4];
    for f in &raw {
        for d in 0..4 {
            lo[d] = lo[d].min(f[d]);
            hi[d] = hi[d].max(f[d]);
        }
    }
    raw.iter()
        .map(|f| {
            let mut out = [0.0; 4];
            for d in 0..4 {
                let span = hi[d] - lo[d];
                if span > 0.0 {
                    out[d] = (f[d] - lo[d]) / span;
                }
            }
            out
        })
        .collect()
}

fn sq(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64; 4], centroids: &[[f64; 4]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Lloyd's algorithm with k-means++ seeding, `k = inst.m`. Ties go to the
/// lower cluster index; a cluster that empties keeps its centroid.
pub fn kmeans_assign(inst: &Instance, max_iter: usize, seed: u64) -> KMeansResult {
    let pts = normalized_features(inst);
    let (n, k) = (pts.len(), inst.m.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<[f64; 4]> = Vec::with_capacity(k);
    if n > 0 {
        centroids.push(pts[rng.gen_range(0..n)]);
    }
    while centroids.len() < k {
        let d: Vec<f64> = pts.iter().map(|p| nearest(p, &centroids).1).collect();
        match WeightedIndex::new(&d) {
            Ok(w) => centroids.push(pts[w.sample(&mut rng)]),
            // Fewer distinct points than clusters.
            Err(_) => centroids.push(centroids.last().copied().unwrap_or([0.0; 4])),
        }
    }

    let mut labels = vec![usize::MAX; n];
    let mut wcss = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut changed = false;
        let mut total = 0.0;
        for (p, l) in pts.iter().zip(labels.iter_mut()) {
            let (c, d) = nearest(p, &centroids);
            changed |= *l != c;
            *l = c;
            total += d;
        }
        wcss.push(total);
        if !changed {
            break;
        }
        let mut sums = vec![[0.0; 4]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in pts.iter().zip(&labels) {
            counts[l] += 1;
            for d in 0..4 {
                sums[l][d] += p[d];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..4 {
                    centroids[c][d] = sums[c][d] / counts[c] as f64;
                }
            }
        }
    }
    if labels.contains(&usize::MAX) {
        labels = pts.iter().map(|p| nearest(p, &centroids).0).collect();
    }
    KMeansResult {
        assignment: Assignment::new(labels),
        centroids,
        wcss,
        iterations,
    }
}

/// Independent uniform vehicle per customer.
pub fn random_assign(inst: &Instance, seed: u64) -> Assignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Assignment::new((0..inst.n()).map(|_| rng.gen_range(0..inst.m.max(1))).collect())
}

/// Routes a fixed assignment with the bank's worker for `ceil(n / m)`.
pub fn assignment_solve(inst: &Instance, a: &Assignment, bank: &WorkerBank, exec: Exec) -> Result<SolutionReport> {
    let worker = bank.select(inst.n(), inst.m)?;
    Ok(evaluate_assignments(&[inst], std::slice::from_ref(a), worker, exec)?.remove(0))
}

pub fn kmeans_solve(inst: &Instance, bank: &WorkerBank, max_iter: usize, seed: u64, exec: Exec) -> Result<SolutionReport> {
    let start = Instant::now();
    bank.select(inst.n(), inst.m)?;
    let a = kmeans_assign(inst, max_iter, seed).assignment;
    let mut r = assignment_solve(inst, &a, bank, exec)?;
    r.wall_time = start.elapsed().as_secs_f64();
    Ok(r)
}

pub fn random_solve(inst: &Instance, bank: &WorkerBank, seed: u64, exec: Exec) -> Result<SolutionReport> {
    let start = Instant::now();
    let mut r = assignment_solve(inst, &random_assign(inst, seed), bank, exec)?;
    r.wall_time = start.elapsed().as_secs_f64();
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{generate_instance, Customer};

    #[test]
    fn one_cluster_takes_everyone() {
        let inst = generate_instance(9, 1, 100.0, 3);
        assert_eq!(kmeans_assign(&inst, 1000, 0).assignment.vehicle_of, vec![0; 9]);
        assert_eq!(random_assign(&inst, 5).vehicle_of, vec![0; 9]);
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let mut inst = generate_instance(10, 2, 100.0, 1);
        for (i, c) in inst.customers.iter_mut().enumerate() {
            let (bx, by) = if i % 2 == 0 { (0.1, 0.1) } else { (0.9, 0.9) };
            let j = (i / 2) as f64 * 0.01;
            *c = Customer { id: i, x: bx + j, y: by - j, s: 1.0, t: 4.0 };
        }
        for seed in 0..10 {
            let a = kmeans_assign(&inst, 1000, seed).assignment.vehicle_of;
            for i in 0..10 {
                assert_eq!(a[i] == a[0], i % 2 == 0, "seed {seed}: {a:?}");
            }
        }
    }

    #[test]
    fn wcss_never_increases() {
        for seed in 0..20 {
            let inst = generate_instance(40, 5, 100.0, seed);
            let r = kmeans_assign(&inst, 1000, seed);
            assert!(r.wcss.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{:?}", r.wcss);
            assert_eq!(r, kmeans_assign(&inst, 1000, seed));
        }
    }
}
