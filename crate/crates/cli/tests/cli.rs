use std::path::Path;
use std::process::{Command, Output};

fn mtsp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtsp"))
        .args(args)
        .arg("--out_dir")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mtsp(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn err(dir: &Path, args: &[&str]) -> String {
    let out = mtsp(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

#[test]
fn oracle_beats_annealing_on_every_instance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("tiny.ndjson");
    let data = data.to_str().unwrap();
    ok(d, &["gen", data, "--n", "5", "--m", "2", "--count", "6", "--seed", "3"]);
    ok(d, &["oracle", data]);
    ok(d, &["baseline", data, "sa", "--meta.iterations", "5", "--meta.sa.population", "4"]);
    ok(d, &["baseline", data, "ts", "--meta.iterations", "5"]);
    let o = d.join("oracle.ndjson");
    let s = d.join("sa.ndjson");
    let t = d.join("ts.ndjson");
    let table = ok(d, &["compare", o.to_str().unwrap(), s.to_str().unwrap(), t.to_str().unwrap()]);
    assert!(table.lines().any(|l| l.starts_with("oracle,5,2,100,")), "{table}");

    let mut r = csv::Reader::from_path(d.join("gaps.csv")).unwrap();
    let header = r.headers().unwrap().clone();
    assert_eq!(&header[2], "oracle_cost");
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.unwrap();
        let oracle_gap: f64 = rec[3].parse().unwrap();
        assert_eq!(oracle_gap, 0.0);
        for k in (3..rec.len()).step_by(2) {
            assert!(rec[k].parse::<f64>().unwrap() >= 0.0);
        }
        rows += 1;
    }
    assert_eq!(rows, 6);
    assert!(d.join("series").join("sa.csv").exists());

    // A doctored summary fails the audit.
    std::fs::write(d.join("sa_summary.csv"), "solver,n,m,beta,length,rej_rate_pct,cost,time_s,count,seed\nsa,5,2,100,1,0.00,1,0,6,3\n").unwrap();
    let e = err(d, &["compare", o.to_str().unwrap(), s.to_str().unwrap()]);
    assert!(e.contains("does not match"), "{e}");
}

#[test]
fn flags_and_files_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let e = err(d, &["gradcheck", "--worker.nope", "1"]);
    assert!(e.contains("--worker.nope"), "{e}");
    let e = err(d, &["oracle", "missing.ndjson"]);
    assert!(e.contains("missing.ndjson"), "{e}");
    let e = err(d, &["frobnicate"]);
    assert!(e.contains("frobnicate"), "{e}");

    let data = d.join("big.ndjson");
    ok(d, &["gen", data.to_str().unwrap(), "--n", "12", "--m", "2", "--count", "1"]);
    let e = err(d, &["oracle", data.to_str().unwrap()]);
    assert!(e.contains("exceeds limit"), "{e}");

    std::fs::write(d.join("bad.ndjson"), "{\"n\": 1}\n").unwrap();
    let e = err(d, &["oracle", d.join("bad.ndjson").to_str().unwrap()]);
    assert!(e.contains("line 1"), "{e}");
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["gradcheck", "--seed", "4"]);
    assert!(out.contains("gradient checks passed"), "{out}");
}

#[test]
fn train_then_solve_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{
            "n": 3, "m": 1, "count": 4, "seed": 9,
            "worker": {"batch_size": 4, "epochs": 2, "instances_per_epoch": 8,
                       "arch": {"layers": 1, "heads": 2, "embed_dim": 8, "ff_dim": 8, "pretrain_size": 3}},
            "manager": {"iterations": 3, "batch_size": 4, "val_size": 4, "val_interval": 2,
                        "arch": {"n_g": 8, "n_vehicle": 8, "n_assign": 8}}
        }"#,
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    ok(d, &["--config", c, "train-worker"]);
    let mut r = csv::Reader::from_path(d.join("worker_curve.csv")).unwrap();
    let mut last = None;
    for rec in r.records() {
        let rec = rec.unwrap();
        let it: usize = rec[0].parse().unwrap();
        assert!(last.is_none_or(|l| it > l));
        last = Some(it);
        for v in rec.iter().skip(1) {
            assert!(v.parse::<f64>().unwrap().is_finite());
        }
    }
    assert_eq!(last, Some(3));

    let worker = d.join("worker_3.json");
    let w = worker.to_str().unwrap();
    let workers = format!("[\"{w}\"]");
    ok(d, &["--config", c, "train-manager", "--checkpoints.workers", &workers]);
    let data = d.join("data.ndjson");
    ok(d, &["--config", c, "gen", data.to_str().unwrap()]);
    let mgr = d.join("manager.json");
    let out = ok(
        d,
        &[
            "--config",
            c,
            "solve",
            data.to_str().unwrap(),
            "--checkpoints.workers",
            &workers,
            "--checkpoints.manager",
            mgr.to_str().unwrap(),
        ],
    );
    assert!(out.contains("manager,3,1,100,"), "{out}");
    ok(d, &["--config", c, "baseline", data.to_str().unwrap(), "kmeans", "--checkpoints.workers", &workers]);

    // Two vehicles need a size-2 worker, which is not in the bank.
    let data2 = d.join("data2.ndjson");
    ok(d, &["gen", data2.to_str().unwrap(), "--n", "4", "--m", "2", "--count", "1"]);
    let e = err(d, &["baseline", data2.to_str().unwrap(), "random", "--checkpoints.workers", &workers]);
    assert!(e.contains("pretrain size 2"), "{e}");
}
