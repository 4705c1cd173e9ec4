use mtsp_core::baselines::{
    assignment_solve, ba_solve, evaluate_giant, kmeans_assign, kmeans_solve, random_assign, random_solve, sa_solve,
    ts_solve, GiantTour, MetaConfig,
};
use mtsp_core::domain::{check_coverage, generate_instance, Assignment, Customer, Instance, ObjectiveMode};
use mtsp_core::manager::WorkerBank;
use mtsp_core::oracle::{solve_exact, OracleLimits};
use mtsp_core::worker::{Worker, WorkerArch};
use mtsp_core::Exec;

/// Every permutation of `0..n` (Heap's algorithm).
fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            rec(k - 1, a, out);
            let j = if k.is_multiple_of(2) { i } else { 0 };
            a.swap(j, k - 1);
        }
    }
    let mut out = Vec::new();
    rec(n, &mut (0..n).collect(), &mut out);
    out
}

/// Minimum min-max cost over every giant tour with two segments.
fn enumerate_two_vehicles(inst: &Instance) -> f64 {
    let n = inst.n();
    let mut best = f64::INFINITY;
    for perm in permutations(n) {
        for cut in 0..=n {
            let r = evaluate_giant(&GiantTour::new(perm.clone(), vec![cut]), inst).unwrap();
            best = best.min(r.minmax_cost);
        }
    }
    best
}

fn short_meta() -> MetaConfig {
    let mut cfg = MetaConfig {
        iterations: 200,
        exec: Exec::Sequential,
        ..MetaConfig::default()
    };
    cfg.sa.population = 20;
    cfg.ba.population = 60;
    cfg
}

fn small_worker(size: usize) -> Worker {
    let arch = WorkerArch {
        layers: 1,
        heads: 2,
        embed_dim: 16,
        ff_dim: 16,
        pretrain_size: size,
        clip: None,
    };
    Worker::new(arch, 3).unwrap()
}

#[test]
fn giant_tour_enumeration_equals_the_oracle() {
    assert_eq!(permutations(4).len(), 24);
    for seed in 0..12 {
        let inst = generate_instance(5, 2, 100.0, 700 + seed);
        let exact = solve_exact(&inst, &OracleLimits::default()).unwrap();
        assert_eq!(enumerate_two_vehicles(&inst), exact.minmax_cost, "seed {seed}");
    }
}

#[test]
fn searchers_never_beat_the_oracle() {
    let cfg = MetaConfig {
        iterations: 40,
        ..short_meta()
    };
    let bank = WorkerBank::single(small_worker(3));
    for seed in 0..8 {
        let inst = generate_instance(6, 2, 100.0, 800 + seed);
        let floor = solve_exact(&inst, &OracleLimits::default()).unwrap().minmax_cost;
        let costs = [
            ts_solve(&inst, &cfg, seed).unwrap().report.minmax_cost,
            sa_solve(&inst, &cfg, seed).unwrap().report.minmax_cost,
            ba_solve(&inst, &cfg, seed).unwrap().report.minmax_cost,
            kmeans_solve(&inst, &bank, 1000, seed, Exec::Sequential).unwrap().minmax_cost,
            random_solve(&inst, &bank, seed, Exec::Sequential).unwrap().minmax_cost,
        ];
        for c in costs {
            assert!(c >= floor - 1e-9, "{c} < {floor}");
        }
    }
}

#[test]
fn annealing_usually_finds_the_optimum() {
    let cfg = short_meta();
    let mut hits = 0;
    for seed in 0..50 {
        let inst = generate_instance(6, 2, 100.0, 900 + seed);
        let exact = solve_exact(&inst, &OracleLimits::default()).unwrap().minmax_cost;
        let got = sa_solve(&inst, &cfg, seed).unwrap().report.minmax_cost;
        if (got - exact).abs() <= 1e-9 {
            hits += 1;
        }
    }
    assert!(hits >= 45, "{hits}/50");
}

#[test]
fn objective_mode_changes_what_is_optimised() {
    let inst = generate_instance(8, 3, 100.0, 4);
    let cfg = MetaConfig {
        objective: ObjectiveMode::Overall,
        ..short_meta()
    };
    let r = sa_solve(&inst, &cfg, 1).unwrap();
    assert_eq!(*r.trace.last().unwrap(), r.report.overall_cost);
    check_coverage(&r.report.plans, 8).unwrap();
}

#[test]
fn random_assignment_is_uniform() {
    let inst = generate_instance(10_000, 4, 100.0, 1);
    let a = random_assign(&inst, 77);
    let mut counts = [0usize; 4];
    for &v in &a.vehicle_of {
        counts[v] += 1;
    }
    let (n, p) = (10_000.0, 0.25);
    let sigma = f64::sqrt(n * p * (1.0 - p));
    for c in counts {
        assert!((c as f64 - n * p).abs() <= 3.0 * sigma, "{counts:?}");
    }
    assert_eq!(random_assign(&inst, 77), a);
    assert_ne!(random_assign(&inst, 78), a);
    let single = generate_instance(20, 1, 100.0, 1);
    assert!(random_assign(&single, 3).vehicle_of.iter().all(|&v| v == 0));
}

/// Two tight spatial blobs in opposite corners with identical windows.
fn two_blobs() -> Instance {
    let mut inst = generate_instance(10, 2, 100.0, 5);
    for (i, c) in inst.customers.iter_mut().enumerate() {
        let (cx, cy) = if i % 2 == 0 { (0.1, 0.1) } else { (0.9, 0.9) };
        let jitter = 0.01 * (i / 2) as f64;
        *c = Customer {
            id: i,
            x: cx + jitter,
            y: cy - jitter,
            s: 1.0,
            t: 4.0,
        };
    }
    inst
}

#[test]
fn kmeans_recovers_blobs_and_beats_a_mixed_split() {
    let inst = two_blobs();
    let km = kmeans_assign(&inst, 1000, 9);
    let v = &km.assignment.vehicle_of;
    for i in 0..10 {
        assert_eq!(v[i], v[i % 2], "customer {i}");
    }
    assert_ne!(v[0], v[1]);

    let bank = WorkerBank::single(small_worker(5));
    let clustered = kmeans_solve(&inst, &bank, 1000, 9, Exec::Sequential).unwrap();
    let mixed = Assignment::new((0..10).map(|i| (i / 2) % 2).collect());
    let mixed = assignment_solve(&inst, &mixed, &bank, Exec::Sequential).unwrap();
    assert!(clustered.minmax_cost <= mixed.minmax_cost, "{} > {}", clustered.minmax_cost, mixed.minmax_cost);
    check_coverage(&clustered.plans, 10).unwrap();
}
