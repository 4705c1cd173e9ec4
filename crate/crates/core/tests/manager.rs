use std::time::Instant;

use mtsp_core::domain::{generate_instance, Customer, Instance};
use mtsp_core::manager::{
    assign, assignment_probs, gin_embed, solve, vehicle_embeddings, Manager, ManagerArch, ManagerVariant, VehicleHeads,
    WorkerBank,
};
use mtsp_core::worker::{rollout, DecodeMode, SubJob, Worker, WorkerArch};
use mtsp_core::{CoreError, Exec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn manager(m: usize, variant: ManagerVariant, heads: VehicleHeads, seed: u64) -> Manager {
    Manager::new(
        ManagerArch {
            m,
            variant,
            heads,
            ..ManagerArch::default()
        },
        seed,
    )
    .unwrap()
}

fn small_worker(size: usize) -> Worker {
    Worker::new(
        WorkerArch {
            layers: 1,
            heads: 2,
            embed_dim: 16,
            ff_dim: 16,
            pretrain_size: size,
            clip: None,
        },
        1,
    )
    .unwrap()
}

/// The same instance with customers reordered: new customer `k` is old
/// customer `perm[k]`.
fn permuted(inst: &Instance, perm: &[usize]) -> Instance {
    let mut out = inst.clone();
    out.customers = perm
        .iter()
        .enumerate()
        .map(|(k, &c)| Customer { id: k, ..inst.customers[c] })
        .collect();
    out
}

#[test]
fn gin_shapes_and_permutation_invariance() {
    for variant in [ManagerVariant::Gin, ManagerVariant::Mlp] {
        let mgr = manager(3, variant, VehicleHeads::Multi, 2);
        let inst = generate_instance(9, 3, 100.0, 4);
        let g = gin_embed(&mgr, &inst).unwrap();
        assert_eq!(g.nodes.shape(), &[10, 32]);
        assert_eq!(g.graph.len(), 32);
        assert_eq!(g.depot, g.nodes.row(9));
        let perm = [3, 8, 0, 5, 1, 7, 2, 6, 4];
        let p = gin_embed(&mgr, &permuted(&inst, &perm)).unwrap();
        for (a, b) in g.graph.iter().zip(&p.graph) {
            assert!((a - b).abs() < 1e-9);
        }
        for (k, &c) in perm.iter().enumerate() {
            for (a, b) in p.nodes.row(k).iter().zip(g.nodes.row(c)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn identical_customers_embed_identically() {
    let mgr = manager(2, ManagerVariant::Gin, VehicleHeads::Multi, 3);
    let mut inst = generate_instance(6, 2, 100.0, 8);
    inst.customers[4] = Customer { id: 4, ..inst.customers[1] };
    let g = gin_embed(&mgr, &inst).unwrap();
    // Mean aggregation sums the other rows in a different order for each
    // node, so agreement is to rounding.
    for (a, b) in g.nodes.row(1).iter().zip(g.nodes.row(4)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn probabilities_normalise_and_respect_the_tanh_bound() {
    for clip in [1.0, 10.0] {
        let arch = ManagerArch {
            clip,
            ..ManagerArch::default()
        };
        let mgr = Manager::new(arch, 5).unwrap();
        for seed in 0..10 {
            let inst = generate_instance(12, 4, 100.0, seed);
            for row in assignment_probs(&mgr, &inst).unwrap() {
                assert_eq!(row.len(), 4);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let hi = row.iter().copied().fold(0.0, f64::max);
                let lo = row.iter().copied().fold(1.0, f64::min);
                assert!(hi / lo <= (2.0 * clip).exp() * (1.0 + 1e-12));
            }
        }
    }
}

#[test]
fn single_vehicle_is_forced() {
    let mgr = manager(1, ManagerVariant::Gin, VehicleHeads::Multi, 6);
    let inst = generate_instance(7, 1, 100.0, 2);
    assert!(assignment_probs(&mgr, &inst).unwrap().iter().all(|r| r == &[1.0]));
    let mut rngs = vec![ChaCha8Rng::seed_from_u64(0)];
    let a = assign(&mgr, &[&inst], DecodeMode::Sample, Some(&mut rngs)).unwrap();
    assert_eq!(a[0].vehicle_of, vec![0; 7]);
    assert_eq!(a[0].logprob, Some(0.0));
    let h = vehicle_embeddings(&mgr, &inst).unwrap();
    assert_eq!(h.len(), 1);
    assert_eq!(h[0].len(), 64);
}

#[test]
fn single_head_embeddings_are_bit_identical() {
    let shared = manager(4, ManagerVariant::Gin, VehicleHeads::Single, 7);
    let multi = manager(4, ManagerVariant::Gin, VehicleHeads::Multi, 7);
    for seed in 0..5 {
        let inst = generate_instance(10, 4, 100.0, seed);
        let h = vehicle_embeddings(&shared, &inst).unwrap();
        assert!(h.iter().all(|v| v == &h[0]));
        for row in assignment_probs(&shared, &inst).unwrap() {
            assert!(row.iter().all(|&p| p == row[0]));
        }
        let h = vehicle_embeddings(&multi, &inst).unwrap();
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(h[i], h[j]);
            }
        }
    }
}

#[test]
fn sampled_assignment_logprob_matches_probabilities() {
    let mgr = manager(3, ManagerVariant::Mlp, VehicleHeads::Multi, 8);
    let insts: Vec<Instance> = (0..3).map(|s| generate_instance(8, 3, 100.0, s)).collect();
    let refs: Vec<&Instance> = insts.iter().collect();
    let mut rngs: Vec<ChaCha8Rng> = (0..3).map(ChaCha8Rng::seed_from_u64).collect();
    let a = assign(&mgr, &refs, DecodeMode::Sample, Some(&mut rngs)).unwrap();
    for (inst, a) in insts.iter().zip(&a) {
        a.validate(8, 3).unwrap();
        let p = assignment_probs(&mgr, inst).unwrap();
        let expect: f64 = a.vehicle_of.iter().enumerate().map(|(i, &v)| p[i][v].ln()).sum();
        assert!((a.logprob.unwrap() - expect).abs() < 1e-9);
    }
    // Greedy picks the most likely vehicle, first on ties.
    let g = assign(&mgr, &refs, DecodeMode::Greedy, None).unwrap();
    for (inst, a) in insts.iter().zip(&g) {
        for (row, &v) in assignment_probs(&mgr, inst).unwrap().iter().zip(&a.vehicle_of) {
            assert!(row.iter().enumerate().all(|(b, &p)| p < row[v] || (p == row[v] && b >= v)));
        }
    }
}

#[test]
fn single_vehicle_solve_is_one_worker_rollout() {
    let mgr = manager(1, ManagerVariant::Gin, VehicleHeads::Multi, 9);
    let worker = small_worker(6);
    let inst = generate_instance(6, 1, 100.0, 3);
    let r = solve(&inst, &mgr, &WorkerBank::single(worker.clone()), Exec::default()).unwrap();
    let ids: Vec<usize> = (0..6).collect();
    let (plan, _, _) = rollout(&worker, SubJob { inst: &inst, vehicle: 0, ids: &ids }, DecodeMode::Greedy, None).unwrap();
    assert_eq!(r.plans, vec![plan]);
}

#[test]
fn missing_worker_names_the_size() {
    let mgr = manager(4, ManagerVariant::Gin, VehicleHeads::Multi, 1);
    let inst = generate_instance(18, 4, 100.0, 1);
    let e = solve(&inst, &mgr, &WorkerBank::single(small_worker(4)), Exec::default()).unwrap_err();
    assert!(matches!(e, CoreError::MissingCheckpoint { required: 5 }), "{e}");
    assert!(e.to_string().contains('5'));
}

#[test]
fn wrong_fleet_size_is_rejected() {
    let mgr = manager(3, ManagerVariant::Gin, VehicleHeads::Multi, 1);
    let inst = generate_instance(6, 2, 100.0, 1);
    assert!(assignment_probs(&mgr, &inst).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let mgr = manager(3, ManagerVariant::Gin, VehicleHeads::Single, 11);
    let back = Manager::from_checkpoint(&mgr.to_checkpoint()).unwrap();
    assert_eq!(back.arch, mgr.arch);
    let inst = generate_instance(7, 3, 100.0, 5);
    assert_eq!(assignment_probs(&mgr, &inst).unwrap(), assignment_probs(&back, &inst).unwrap());
    assert!(Worker::from_checkpoint(&mgr.to_checkpoint()).is_err());
}

#[test]
fn reports_cover_every_customer() {
    let mgr = manager(4, ManagerVariant::Gin, VehicleHeads::Multi, 12);
    let bank = WorkerBank::single(small_worker(3));
    for seed in 0..5 {
        let inst = generate_instance(10, 4, 100.0, seed);
        let r = solve(&inst, &mgr, &bank, Exec::default()).unwrap();
        mtsp_core::domain::check_coverage(&r.plans, 10).unwrap();
        for p in &r.plans {
            for (&c, &s) in p.served.iter().zip(&p.service_times) {
                assert!(s <= inst.customers[c].t);
            }
        }
    }
}

#[test]
fn inference_is_fast_at_fifty_customers() {
    let mgr = manager(10, ManagerVariant::Gin, VehicleHeads::Multi, 13);
    let bank = WorkerBank::single(Worker::new(WorkerArch::default(), 0).unwrap());
    let inst = generate_instance(50, 10, 100.0, 1);
    let start = Instant::now();
    let r = solve(&inst, &mgr, &bank, Exec::default()).unwrap();
    assert!(start.elapsed().as_secs_f64() < 1.0);
    assert!(r.wall_time > 0.0 && r.wall_time < 1.0);
}
