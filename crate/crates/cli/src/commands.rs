use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use autodiff::{op_suite, Checkpoint};
use mtsp_core::baselines::{ba_solve, kmeans_solve, random_solve, sa_solve, ts_solve};
use mtsp_core::domain::{generate_instance, read_dataset, write_dataset, Instance, SolutionReport};
use mtsp_core::manager::{self, train_manager_with, Manager, WorkerBank};
use mtsp_core::oracle::solve_exact_with;
use mtsp_core::worker::{train_worker_with, CurvePoint, Worker};
use mtsp_core::Exec;

use crate::config::ExperimentConfig;
use crate::records::{audit_summary, read_records, summary_path, write_records, write_rows, Record, ResultRow};
use crate::Method;

pub fn gen(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    ensure!(cfg.n >= 1 && cfg.m >= 1, "n and m must be at least 1");
    let insts: Vec<Instance> = (0..cfg.count as u64)
        .map(|i| generate_instance(cfg.n, cfg.m, cfg.beta, cfg.seed + i))
        .collect();
    let f = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    write_dataset(std::io::BufWriter::new(f), &insts)?;
    println!("wrote {} instances to {}", insts.len(), out.display());
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Vec<Instance>> {
    let f = File::open(path).with_context(|| format!("opening dataset {}", path.display()))?;
    let insts = read_dataset(BufReader::new(f)).with_context(|| format!("reading dataset {}", path.display()))?;
    ensure!(!insts.is_empty(), "dataset {} is empty", path.display());
    Ok(insts)
}

fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for p in curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_bank(cfg: &ExperimentConfig) -> Result<WorkerBank> {
    ensure!(
        !cfg.checkpoints.workers.is_empty(),
        "no worker checkpoints given (set checkpoints.workers)"
    );
    let mut bank = WorkerBank::new();
    for p in &cfg.checkpoints.workers {
        bank.insert(Worker::from_checkpoint(&load_checkpoint(p)?).with_context(|| p.display().to_string())?);
    }
    Ok(bank)
}

fn load_manager(cfg: &ExperimentConfig) -> Result<Manager> {
    let path = cfg
        .checkpoints
        .manager
        .as_ref()
        .context("no manager checkpoint given (set checkpoints.manager)")?;
    Manager::from_checkpoint(&load_checkpoint(path)?).with_context(|| path.display().to_string())
}

pub fn train_worker(cfg: &ExperimentConfig) -> Result<()> {
    let start = Instant::now();
    let total = cfg.worker.updates();
    let tr = train_worker_with(&cfg.worker, |p| {
        if p.iteration % 100 == 0 || p.iteration + 1 == total {
            eprintln!("update {} cost {:.4} baseline {:.4}", p.iteration, p.mean_cost, p.baseline_cost);
        }
    })?;
    let ckpt = cfg.out_dir.join(format!("worker_{}.json", cfg.worker.arch.pretrain_size));
    tr.worker.to_checkpoint().save(&ckpt)?;
    write_curve(&cfg.out_dir.join("worker_curve.csv"), &tr.curve)?;
    println!(
        "trained {} updates in {:.1}s ({} baseline refreshes); checkpoint {}",
        tr.curve.len(),
        start.elapsed().as_secs_f64(),
        tr.baseline_updates,
        ckpt.display()
    );
    Ok(())
}

pub fn train_manager(cfg: &ExperimentConfig) -> Result<()> {
    let bank = load_bank(cfg)?;
    let worker = bank.select(cfg.n, cfg.m)?;
    let start = Instant::now();
    let total = cfg.manager.iterations;
    let tr = train_manager_with(&cfg.manager, worker, |p| {
        if p.iteration % 100 == 0 || p.iteration + 1 == total {
            eprintln!("iteration {} cost {:.4} baseline {:.4}", p.iteration, p.mean_cost, p.baseline_cost);
        }
    })?;
    let ckpt = cfg.out_dir.join("manager.json");
    tr.best.to_checkpoint().save(&ckpt)?;
    write_curve(&cfg.out_dir.join("manager_curve.csv"), &tr.curve)?;
    let vpath = cfg.out_dir.join("manager_validation.csv");
    let mut w = csv::Writer::from_path(&vpath)?;
    for v in &tr.validation {
        w.serialize(v)?;
    }
    w.flush()?;
    println!(
        "trained {} iterations in {:.1}s; best validation {:.4}; checkpoint {}",
        tr.curve.len(),
        start.elapsed().as_secs_f64(),
        tr.validation.iter().map(|v| v.mean_cost).fold(f64::INFINITY, f64::min),
        ckpt.display()
    );
    Ok(())
}

/// Writes records and their summary, then prints the row.
fn emit(cfg: &ExperimentConfig, solver: &str, insts: &[Instance], reports: Vec<SolutionReport>) -> Result<()> {
    let records: Vec<Record> = insts
        .iter()
        .zip(reports)
        .enumerate()
        .map(|(i, (inst, r))| Record::new(solver, i, inst, cfg.objective, r))
        .collect();
    let path = cfg.out_dir.join(format!("{solver}.ndjson"));
    write_records(&path, &records)?;
    let row = ResultRow::from_records(&records)?;
    write_rows(&summary_path(&path), std::slice::from_ref(&row))?;
    println!("{}", crate::records::HEADER.join(","));
    println!("{}", row.fields().join(","));
    Ok(())
}

pub fn solve(cfg: &ExperimentConfig, dataset: &Path) -> Result<()> {
    let insts = load_dataset(dataset)?;
    let mgr = load_manager(cfg)?;
    let bank = load_bank(cfg)?;
    let reports = insts
        .iter()
        .enumerate()
        .map(|(i, inst)| manager::solve(inst, &mgr, &bank, cfg.exec).with_context(|| format!("instance {i}")))
        .collect::<Result<Vec<_>>>()?;
    emit(cfg, "manager", &insts, reports)
}

pub fn baseline(cfg: &ExperimentConfig, dataset: &Path, method: Method) -> Result<()> {
    let insts = load_dataset(dataset)?;
    let idx: Vec<usize> = (0..insts.len()).collect();
    let seed_of = |i: usize| cfg.seed.wrapping_add(i as u64);
    // Instances run side by side; each search stays sequential inside.
    let meta = mtsp_core::baselines::MetaConfig {
        exec: Exec::Sequential,
        ..cfg.meta.clone()
    };
    let (name, reports) = match method {
        Method::Sa | Method::Ts | Method::Ba => {
            let (name, f): (&str, fn(&Instance, &_, u64) -> _) = match method {
                Method::Sa => ("sa", sa_solve),
                Method::Ts => ("ts", ts_solve),
                _ => ("ba", ba_solve),
            };
            let r = cfg
                .exec
                .try_map(&idx, |&i| f(&insts[i], &meta, seed_of(i)).map(|s| s.report))?;
            (name, r)
        }
        Method::Kmeans | Method::Random => {
            let bank = load_bank(cfg)?;
            let r = idx
                .iter()
                .map(|&i| match method {
                    Method::Kmeans => kmeans_solve(&insts[i], &bank, cfg.kmeans_max_iter, seed_of(i), cfg.exec),
                    _ => random_solve(&insts[i], &bank, seed_of(i), cfg.exec),
                })
                .collect::<Result<Vec<_>, _>>()?;
            (if method == Method::Kmeans { "kmeans" } else { "random" }, r)
        }
    };
    emit(cfg, name, &insts, reports)
}

pub fn oracle(cfg: &ExperimentConfig, dataset: &Path) -> Result<()> {
    let insts = load_dataset(dataset)?;
    let idx: Vec<usize> = (0..insts.len()).collect();
    let reports = cfg.exec.try_map(&idx, |&i| {
        let start = Instant::now();
        let mut r = solve_exact_with(&insts[i], &cfg.oracle, Exec::Sequential)
            .with_context(|| format!("instance {i}"))?;
        r.wall_time = start.elapsed().as_secs_f64();
        Ok::<_, anyhow::Error>(r)
    })?;
    emit(cfg, "oracle", &insts, reports)
}

pub fn compare(cfg: &ExperimentConfig, files: &[PathBuf]) -> Result<()> {
    let mut sets = Vec::with_capacity(files.len());
    for f in files {
        let recs = read_records(f)?;
        let row = ResultRow::from_records(&recs)?;
        audit_summary(f, &row)?;
        sets.push((recs, row));
    }
    let (first, _) = &sets[0];
    for (recs, row) in &sets[1..] {
        ensure!(
            recs.len() == first.len(),
            "{} has {} records, {} has {}",
            row.solver,
            recs.len(),
            sets[0].1.solver,
            first.len()
        );
        for (a, b) in first.iter().zip(recs) {
            if (a.instance, a.seed, a.n, a.m, a.beta.to_bits()) != (b.instance, b.seed, b.n, b.m, b.beta.to_bits()) {
                bail!("record files disagree on instance {} ({} vs {})", a.instance, sets[0].1.solver, row.solver);
            }
        }
    }
    let rows: Vec<ResultRow> = sets.iter().map(|(_, r)| r.clone()).collect();
    write_rows(&cfg.out_dir.join("compare.csv"), &rows)?;

    let mut w = csv::Writer::from_path(cfg.out_dir.join("gaps.csv"))?;
    let mut header = vec!["instance".to_string(), "best".to_string()];
    for r in &rows {
        header.push(format!("{}_cost", r.solver));
        header.push(format!("{}_gap_pct", r.solver));
    }
    w.write_record(&header)?;
    for i in 0..first.len() {
        let costs: Vec<f64> = sets.iter().map(|(recs, _)| recs[i].cost).collect();
        let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
        let mut line = vec![first[i].instance.to_string(), best.to_string()];
        for c in costs {
            let gap = if best > 0.0 { 100.0 * (c - best) / best } else { 0.0 };
            line.push(c.to_string());
            line.push(format!("{gap:.4}"));
        }
        w.write_record(&line)?;
    }
    w.flush()?;

    let series = cfg.out_dir.join("series");
    std::fs::create_dir_all(&series)?;
    for (recs, row) in &sets {
        let mut s = csv::Writer::from_path(series.join(format!("{}.csv", row.solver)))?;
        s.write_record(["x", "y"])?;
        for r in recs {
            s.write_record([r.instance.to_string(), r.cost.to_string()])?;
        }
        s.flush()?;
    }
    println!("{}", crate::records::HEADER.join(","));
    for r in &rows {
        println!("{}", r.fields().join(","));
    }
    Ok(())
}

pub fn gradcheck(cfg: &ExperimentConfig) -> Result<()> {
    let checks = op_suite(cfg.seed)?;
    let mut failed = 0;
    for c in &checks {
        let status = if c.passed() { "ok" } else { "FAIL" };
        println!("{:<28} max rel err {:.3e} (tol {:.0e}) {status}", c.name, c.max_rel_err, c.tol);
        failed += usize::from(!c.passed());
    }
    ensure!(failed == 0, "{failed} of {} gradient checks failed", checks.len());
    println!("all {} gradient checks passed", checks.len());
    Ok(())
}
