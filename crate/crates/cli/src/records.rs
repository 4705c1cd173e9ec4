use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use mtsp_core::domain::{hybrid_cost, rejection_rate, Instance, ObjectiveMode, SolutionReport, SubTourPlan};
use serde::{Deserialize, Serialize};

/// One solved instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub solver: String,
    pub instance: usize,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub beta: f64,
    pub objective: ObjectiveMode,
    pub cost: f64,
    pub length: f64,
    pub rej_rate: f64,
    pub wall_time: f64,
    pub plans: Vec<SubTourPlan>,
}

impl Record {
    pub fn new(solver: &str, instance: usize, inst: &Instance, objective: ObjectiveMode, r: SolutionReport) -> Self {
        let (length, rej_rate) = r.length_and_rej(objective);
        Self {
            solver: solver.to_string(),
            instance,
            seed: inst.seed,
            n: inst.n(),
            m: inst.m,
            beta: inst.beta,
            objective,
            cost: r.cost(objective),
            length,
            rej_rate,
            wall_time: r.wall_time,
            plans: r.plans,
        }
    }

    /// Recomputes every derived number from the plans.
    pub fn audit(&self) -> Result<()> {
        let ctx = || format!("record {} of solver {}", self.instance, self.solver);
        ensure!(self.plans.len() == self.m, "{}: {} plans for m = {}", ctx(), self.plans.len(), self.m);
        for p in &self.plans {
            let assigned = p.assigned();
            let rate = rejection_rate(p.rejected.len(), assigned);
            let cost = hybrid_cost(p.length, p.rejected.len(), assigned, self.beta);
            ensure!(
                p.rej_rate == rate && p.hybrid_cost == cost,
                "{}: vehicle {} cost fields disagree with its route",
                ctx(),
                p.vehicle
            );
            ensure!(
                p.service_times.windows(2).all(|w| w[0] <= w[1]),
                "{}: vehicle {} service times go backwards",
                ctx(),
                p.vehicle
            );
        }
        let r = SolutionReport::from_plans(self.plans.clone(), self.n, self.beta, self.wall_time)
            .with_context(ctx)?;
        let (length, rej) = r.length_and_rej(self.objective);
        ensure!(
            r.cost(self.objective) == self.cost && length == self.length && rej == self.rej_rate,
            "{}: stored aggregates differ from recomputation",
            ctx()
        );
        Ok(())
    }
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads and audits a record file.
pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: Record =
            serde_json::from_str(&line).with_context(|| format!("{} line {}: malformed record", path.display(), i + 1))?;
        r.audit().with_context(|| format!("{} line {}", path.display(), i + 1))?;
        out.push(r);
    }
    ensure!(!out.is_empty(), "{} holds no records", path.display());
    Ok(out)
}

/// Table row: means over a record file.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub solver: String,
    pub n: usize,
    pub m: usize,
    pub beta: f64,
    pub length: f64,
    /// Percent.
    pub rej_rate: f64,
    pub cost: f64,
    pub wall_time: f64,
    pub count: usize,
    pub seed: u64,
}

pub const HEADER: [&str; 10] = ["solver", "n", "m", "beta", "length", "rej_rate_pct", "cost", "time_s", "count", "seed"];

impl ResultRow {
    /// `seed` is the first instance's seed.
    pub fn from_records(records: &[Record]) -> Result<Self> {
        let first = records.first().context("no records")?;
        for r in records {
            ensure!(
                r.solver == first.solver && r.n == first.n && r.m == first.m && r.beta == first.beta,
                "records mix solvers or problem families ({} n={} m={} beta={} vs {} n={} m={} beta={})",
                first.solver,
                first.n,
                first.m,
                first.beta,
                r.solver,
                r.n,
                r.m,
                r.beta
            );
        }
        let k = records.len() as f64;
        let mean = |f: fn(&Record) -> f64| records.iter().map(f).sum::<f64>() / k;
        Ok(Self {
            solver: first.solver.clone(),
            n: first.n,
            m: first.m,
            beta: first.beta,
            length: mean(|r| r.length),
            rej_rate: 100.0 * mean(|r| r.rej_rate),
            cost: mean(|r| r.cost),
            wall_time: mean(|r| r.wall_time),
            count: records.len(),
            seed: first.seed,
        })
    }

    pub fn fields(&self) -> [String; 10] {
        [
            self.solver.clone(),
            self.n.to_string(),
            self.m.to_string(),
            self.beta.to_string(),
            self.length.to_string(),
            format!("{:.2}", self.rej_rate),
            self.cost.to_string(),
            self.wall_time.to_string(),
            self.count.to_string(),
            self.seed.to_string(),
        ]
    }

    /// Whether a row read back from CSV matches this one. The rejection
    /// column is compared at its printed precision.
    pub fn matches(&self, fields: &[String]) -> bool {
        fields.len() == 10 && self.fields().iter().zip(fields).all(|(a, b)| a == b)
    }
}

pub fn write_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    ensure!(header == HEADER, "{}: unexpected header {header:?}", path.display());
    r.records()
        .map(|rec| Ok(rec?.iter().map(str::to_string).collect()))
        .collect()
}

/// Summary file written next to a record file.
pub fn summary_path(records: &Path) -> PathBuf {
    let stem = records.file_stem().and_then(|s| s.to_str()).unwrap_or("records");
    records.with_file_name(format!("{stem}_summary.csv"))
}

/// Checks the sibling summary, when present, against the records.
pub fn audit_summary(records_path: &Path, row: &ResultRow) -> Result<()> {
    let path = summary_path(records_path);
    if !path.exists() {
        return Ok(());
    }
    let rows = read_rows(&path)?;
    if rows.len() != 1 || !row.matches(&rows[0]) {
        bail!(
            "{} does not match the aggregates recomputed from {}",
            path.display(),
            records_path.display()
        );
    }
    Ok(())
}
