use autodiff::{grad_check, op_suite, Adam, AdamConfig, ParamSet, Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_t(seed: u64, shape: &[usize]) -> Tensor {
    Tensor::uniform(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Plain triple loop, independent of the engine's gemm.
fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (r, k, c) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[i * c + j] = (0..k).map(|p| a.data()[i * k + p] * b.data()[p * c + j]).sum();
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matmul_matches_naive(r in 1usize..9, k in 1usize..9, c in 1usize..9, seed in any::<u64>()) {
        let a = rand_t(seed, &[r, k]);
        let b = rand_t(seed ^ 1, &[k, c]);
        let t = Tape::new();
        let y = t.matmul(t.constant(a.clone()), t.constant(b.clone())).unwrap();
        for (x, e) in t.value(y).data().iter().zip(naive_matmul(&a, &b)) {
            prop_assert!((x - e).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_normalise(r in 1usize..6, c in 1usize..8, seed in any::<u64>(), shift in -50.0f64..50.0) {
        let mut x = rand_t(seed, &[r, c]);
        for v in x.data_mut() {
            *v = *v * 10.0 + shift;
        }
        let t = Tape::new();
        let xv = t.constant(x);
        let p = t.value(t.softmax(xv, 1).unwrap());
        let lp = t.value(t.log_softmax(xv, 1).unwrap());
        for i in 0..r {
            prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, b) in p.row(i).iter().zip(lp.row(i)) {
                prop_assert!((a.ln() - b).abs() < 1e-9 || *a == 0.0);
            }
        }
    }

    #[test]
    fn attention_block_gradients(b in 1usize..3, q in 1usize..4, k in 2usize..5, d in 1usize..4, seed in any::<u64>()) {
        let keys = rand_t(seed ^ 2, &[b, k, d]);
        let vals = rand_t(seed ^ 3, &[b, k, d]);
        let f = |t: &Tape, x| {
            let kt = t.transpose(t.constant(keys.clone()))?;
            let u = t.scale(t.bmm(x, kt)?, 0.7);
            let w = t.softmax(t.tanh(u), 2)?;
            let h = t.bmm(w, t.constant(vals.clone()))?;
            Ok(t.sum_all(t.mul(h, h)?))
        };
        let rep = grad_check(f, &rand_t(seed, &[b, q, d]), 1e-5, 1e-4).unwrap();
        prop_assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn batchnorm_train_gradients(r in 3usize..7, c in 1usize..4, seed in any::<u64>()) {
        let gamma = rand_t(seed ^ 5, &[c]);
        let w = rand_t(seed ^ 6, &[r, c]);
        let f = |t: &Tape, x| {
            let (y, _) = t.batchnorm_train(x, t.constant(gamma.clone()), t.constant(Tensor::zeros(&[c])), 1e-5)?;
            Ok(t.sum_all(t.mul(y, t.constant(w.clone()))?))
        };
        let rep = grad_check(f, &rand_t(seed, &[r, c]), 1e-5, 1e-3).unwrap();
        prop_assert!(rep.passed(), "{rep:?}");
    }
}

#[test]
fn op_suite_over_seeds() {
    for seed in 10..16 {
        for c in op_suite(seed).unwrap() {
            assert!(c.passed(), "seed {seed}: {c:?}");
        }
    }
}

#[test]
fn adam_minimises_a_quadratic() {
    let mut p = ParamSet::new();
    p.insert("x", Tensor::new(vec![2], vec![3.0, -2.0]).unwrap());
    let mut adam = Adam::new(AdamConfig {
        lr: 0.1,
        ..AdamConfig::default()
    });
    for _ in 0..500 {
        let t = Tape::new();
        let bound = p.bind(&t, true);
        let x = bound.var("x").unwrap();
        let target = t.constant(Tensor::new(vec![2], vec![1.0, 0.5]).unwrap());
        let d = t.sub(x, target).unwrap();
        let loss = t.sum_all(t.mul(d, d).unwrap());
        let g = bound.grads(&p, &t.backward(loss).unwrap());
        drop(bound);
        adam.step(&mut p, &g).unwrap();
    }
    let x = p.get("x").unwrap().data();
    assert!((x[0] - 1.0).abs() < 1e-3 && (x[1] - 0.5).abs() < 1e-3, "{x:?}");
}

#[test]
fn checkpoint_file_round_trip() {
    let mut p = ParamSet::new();
    p.insert("w", rand_t(1, &[3, 4]));
    p.insert_buffer("bn.running_mean", rand_t(2, &[4]));
    let dir = std::env::temp_dir().join(format!("autodiff-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("p.json");
    p.to_checkpoint(serde_json::json!({"kind": "test"})).save(&path).unwrap();
    let mut q = ParamSet::new();
    q.insert("w", Tensor::zeros(&[3, 4]));
    q.insert_buffer("bn.running_mean", Tensor::zeros(&[4]));
    q.load_from(&autodiff::Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(q.get("w").unwrap(), p.get("w").unwrap());
    assert_eq!(q.get("bn.running_mean").unwrap(), p.get("bn.running_mean").unwrap());
    std::fs::remove_dir_all(dir).ok();
}
