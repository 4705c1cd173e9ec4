use std::collections::VecDeque;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::giant::{evaluate_giant, random_move, GiantScorer, GiantTour, Move};
use crate::domain::{euclid, Instance, ObjectiveMode, SolutionReport};
use crate::error::{CoreError, Result};
use crate::exec::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TabuConfig {
    /// Candidate moves per iteration; `None` means `n^2`.
    pub actions: Option<usize>,
    /// Tabu tenure in iterations; `None` means `n^2 / 2`.
    pub tenure: Option<usize>,
    /// Stop when a sweep of `n` iterations improves the best cost by less.
    pub threshold: f64,
}

impl Default for TabuConfig {
    fn default() -> Self {
        Self {
            actions: None,
            tenure: None,
            threshold: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealConfig {
    pub population: usize,
    pub sub_iterations: usize,
    /// Neighbours drawn per member per sub-iteration; the best competes.
    pub moves: usize,
    /// Moves per mutation as a fraction of `n`; `None` means `1 / n`.
    pub mutation_rate: Option<f64>,
    /// Reach of a move as a fraction of `n`.
    pub step_size: f64,
    /// Per-iteration factor on the step size.
    pub damp: f64,
    pub t0: f64,
    pub t_final: f64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            population: 100,
            sub_iterations: 10,
            moves: 15,
            mutation_rate: None,
            step_size: 0.49,
            damp: 1.0,
            t0: 10_000.0,
            t_final: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeesConfig {
    pub population: usize,
    pub selected_ratio: f64,
    /// Bees per selected site as a fraction of the population.
    pub selected_bee_ratio: f64,
    /// Elite sites as a fraction of the selected sites.
    pub elite_ratio: f64,
    /// Bees per elite site relative to the selected-site bee count.
    pub elite_bee_ratio: f64,
    /// Neighbourhood reach as a fraction of `n`.
    pub radius: f64,
    pub radius_damp: f64,
}

impl Default for BeesConfig {
    fn default() -> Self {
        Self {
            population: 500,
            selected_ratio: 0.9,
            selected_bee_ratio: 0.1,
            elite_ratio: 0.2,
            elite_bee_ratio: 2.0,
            radius: 1.0,
            radius_damp: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    pub iterations: usize,
    pub objective: ObjectiveMode,
    pub ts: TabuConfig,
    pub sa: AnnealConfig,
    pub ba: BeesConfig,
    pub exec: Exec,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            objective: ObjectiveMode::Minmax,
            ts: TabuConfig::default(),
            sa: AnnealConfig::default(),
            ba: BeesConfig::default(),
            exec: Exec::default(),
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.sa.step_size,
            self.sa.damp,
            self.sa.t0,
            self.sa.t_final,
            self.ba.selected_ratio,
            self.ba.selected_bee_ratio,
            self.ba.elite_ratio,
            self.ba.elite_bee_ratio,
            self.ba.radius,
            self.ba.radius_damp,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(CoreError::Config("metaheuristic ratios must be positive and finite".into()));
        }
        if self.sa.population == 0 || self.sa.moves == 0 || self.ba.population == 0 {
            return Err(CoreError::Config("population sizes and move counts must be positive".into()));
        }
        if self.sa.mutation_rate.is_some_and(|r| !(r > 0.0)) || !(self.ts.threshold >= 0.0) {
            return Err(CoreError::Config("mutation rate must be positive, threshold non-negative".into()));
        }
        Ok(())
    }
}

/// Best solution of a search and its best-so-far cost after each iteration.
#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best: GiantTour,
    pub report: SolutionReport,
    /// Entry 0 is the initial solution; one entry per completed iteration.
    pub trace: Vec<f64>,
}

fn finish(inst: &Instance, best: GiantTour, trace: Vec<f64>, start: Instant) -> Result<SearchResult> {
    let mut report = evaluate_giant(&best, inst)?;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(SearchResult { best, report, trace })
}

/// Nearest feasible neighbour, one customer per vehicle in turn. Vehicles
/// with no reachable customer drop out; anything left over is dealt out
/// round-robin and will be rejected.
pub fn greedy_initial(inst: &Instance) -> GiantTour {
    let (n, m) = (inst.n(), inst.m);
    let mut routes: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut pos = vec![inst.depot.point(); m];
    let mut clock = vec![0.0; m];
    let mut active = vec![true; m];
    let mut left = vec![true; n];
    let mut remaining = n;
    while remaining > 0 && active.iter().any(|&a| a) {
        for b in 0..m {
            if !active[b] || remaining == 0 {
                continue;
            }
            let next = (0..n)
                .filter(|&c| left[c])
                .map(|c| (c, euclid(pos[b], inst.customers[c].point())))
                .filter(|&(c, d)| clock[b] + d <= inst.customers[c].t)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match next {
                Some((c, d)) => {
                    clock[b] = f64::max(clock[b] + d, inst.customers[c].s);
                    pos[b] = inst.customers[c].point();
                    routes[b].push(c);
                    left[c] = false;
                    remaining -= 1;
                }
                None => active[b] = false,
            }
        }
    }
    for (k, c) in (0..n).filter(|&c| left[c]).enumerate() {
        routes[k % m].push(c);
    }
    GiantTour::from_routes(&routes)
}

/// Tabu search over sampled neighbourhoods from the greedy start.
pub fn ts_solve(inst: &Instance, cfg: &MetaConfig, seed: u64) -> Result<SearchResult> {
    cfg.validate()?;
    let start = Instant::now();
    let n = inst.n();
    let scorer = GiantScorer::new(inst, cfg.objective);
    let actions = cfg.ts.actions.unwrap_or(n * n).max(1);
    let tenure = cfg.ts.tenure.unwrap_or(n * n / 2);
    let sweep = n.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut current = greedy_initial(inst);
    let mut best = current.clone();
    let mut best_cost = scorer.cost(&best);
    let mut trace = vec![best_cost];
    let mut tabu: VecDeque<Move> = VecDeque::with_capacity(tenure + 1);

    for it in 0..cfg.iterations {
        let candidates: Vec<Move> = (0..actions).map(|_| random_move(&mut rng, n, inst.m, n)).collect();
        let scored = cfg.exec.map(&candidates, |&mv| scorer.cost(&current.moved(mv)));
        let mut pick: Option<(Move, f64)> = None;
        for (&mv, &c) in candidates.iter().zip(&scored) {
            let allowed = !tabu.contains(&canonical(mv)) || c < best_cost;
            if allowed && pick.is_none_or(|(_, pc)| c < pc) {
                pick = Some((mv, c));
            }
        }
        if let Some((mv, c)) = pick {
            current.apply(mv);
            if tenure > 0 {
                tabu.push_back(inverse(mv));
                if tabu.len() > tenure {
                    tabu.pop_front();
                }
            }
            if c < best_cost {
                best_cost = c;
                best = current.clone();
            }
        }
        trace.push(best_cost);
        if (it + 1) % sweep == 0 {
            let before = trace[it + 1 - sweep];
            if before - best_cost < cfg.ts.threshold {
                break;
            }
        }
    }
    finish(inst, best, trace, start)
}

/// The move that undoes `mv`, which is what becomes tabu.
fn inverse(mv: Move) -> Move {
    match mv {
        Move::Insert(i, j) => Move::Insert(j, i),
        Move::ShiftCut(k, r) => Move::ShiftCut(k, !r),
        other => canonical(other),
    }
}

/// Symmetric moves with their positions ordered.
fn canonical(mv: Move) -> Move {
    match mv {
        Move::Swap(i, j) => Move::Swap(i.min(j), i.max(j)),
        Move::Reverse(i, j) => Move::Reverse(i.min(j), i.max(j)),
        other => other,
    }
}

fn mutate(rng: &mut ChaCha8Rng, g: &GiantTour, m: usize, count: usize, reach: usize) -> GiantTour {
    let mut out = g.clone();
    for _ in 0..count {
        out.apply(random_move(rng, g.n(), m, reach));
    }
    out
}

/// Population simulated annealing: every member runs its own Metropolis
/// chain, proposing the best of several mutations per step. Temperature
/// falls geometrically from `t0` to `t_final` across iterations.
pub fn sa_solve(inst: &Instance, cfg: &MetaConfig, seed: u64) -> Result<SearchResult> {
    cfg.validate()?;
    let start = Instant::now();
    let (n, m) = (inst.n(), inst.m);
    let sa = &cfg.sa;
    let scorer = GiantScorer::new(inst, cfg.objective);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = ((sa.mutation_rate.unwrap_or(1.0 / n.max(1) as f64) * n as f64).round() as usize).max(1);

    let mut pop: Vec<(GiantTour, f64)> = (0..sa.population)
        .map(|_| {
            let g = GiantTour::random(&mut rng, n, m);
            let c = scorer.cost(&g);
            (g, c)
        })
        .collect();
    let (mut best, mut best_cost) = best_of(&pop);
    let mut trace = vec![best_cost];
    let mut step = sa.step_size;
    let cool = if cfg.iterations > 1 {
        (sa.t_final / sa.t0).powf(1.0 / (cfg.iterations - 1) as f64)
    } else {
        1.0
    };
    let mut temp = sa.t0;

    for _ in 0..cfg.iterations {
        let reach = ((step * n as f64).round() as usize).max(1);
        for _ in 0..sa.sub_iterations {
            let seeds: Vec<u64> = (0..pop.len()).map(|_| rng.gen()).collect();
            pop = cfg.exec.map_indexed(pop.len(), |i| {
                let mut r = ChaCha8Rng::seed_from_u64(seeds[i]);
                let (cur, cur_cost) = &pop[i];
                let (cand, cand_cost) = (0..sa.moves)
                    .map(|_| {
                        let g = mutate(&mut r, cur, m, count, reach);
                        let c = scorer.cost(&g);
                        (g, c)
                    })
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("at least one move");
                let accept = cand_cost <= *cur_cost || r.gen::<f64>() < (-(cand_cost - cur_cost) / temp).exp();
                if accept {
                    (cand, cand_cost)
                } else {
                    (cur.clone(), *cur_cost)
                }
            });
            let (g, c) = best_of(&pop);
            if c < best_cost {
                best = g;
                best_cost = c;
            }
        }
        trace.push(best_cost);
        temp *= cool;
        step *= sa.damp;
    }
    finish(inst, best, trace, start)
}

fn best_of(pop: &[(GiantTour, f64)]) -> (GiantTour, f64) {
    let (g, c) = pop
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty population");
    (g.clone(), *c)
}

/// Bees algorithm: neighbourhood search around the best sites, with more
/// recruits at elite sites, and fresh scouts everywhere else.
pub fn ba_solve(inst: &Instance, cfg: &MetaConfig, seed: u64) -> Result<SearchResult> {
    cfg.validate()?;
    let start = Instant::now();
    let (n, m) = (inst.n(), inst.m);
    let ba = &cfg.ba;
    let scorer = GiantScorer::new(inst, cfg.objective);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let selected = ((ba.selected_ratio * ba.population as f64).round() as usize).clamp(1, ba.population);
    let elite = ((ba.elite_ratio * selected as f64).round() as usize).min(selected);
    let sel_bees = ((ba.selected_bee_ratio * ba.population as f64).round() as usize).max(1);
    let elite_bees = ((ba.elite_bee_ratio * sel_bees as f64).round() as usize).max(1);

    let mut pop: Vec<(GiantTour, f64)> = (0..ba.population)
        .map(|_| {
            let g = GiantTour::random(&mut rng, n, m);
            let c = scorer.cost(&g);
            (g, c)
        })
        .collect();
    pop.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut best = pop[0].clone();
    let mut trace = vec![best.1];
    let mut radius = ba.radius;

    for _ in 0..cfg.iterations {
        let reach = ((radius * n as f64).round() as usize).max(1);
        let seeds: Vec<u64> = (0..pop.len()).map(|_| rng.gen()).collect();
        pop = cfg.exec.map_indexed(pop.len(), |i| {
            let mut r = ChaCha8Rng::seed_from_u64(seeds[i]);
            if i >= selected {
                let g = GiantTour::random(&mut r, n, m);
                let c = scorer.cost(&g);
                return (g, c);
            }
            let bees = if i < elite { elite_bees } else { sel_bees };
            let mut site = pop[i].clone();
            for _ in 0..bees {
                let g = mutate(&mut r, &pop[i].0, m, 1, reach);
                let c = scorer.cost(&g);
                if c < site.1 {
                    site = (g, c);
                }
            }
            site
        });
        pop.sort_by(|a, b| a.1.total_cmp(&b.1));
        if pop[0].1 < best.1 {
            best = pop[0].clone();
        }
        trace.push(best.1);
        radius *= ba.radius_damp;
    }
    finish(inst, best.0, trace, start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::generate_instance;

    fn quick(iterations: usize) -> MetaConfig {
        MetaConfig {
            iterations,
            sa: AnnealConfig {
                population: 8,
                ..AnnealConfig::default()
            },
            ba: BeesConfig {
                population: 20,
                ..BeesConfig::default()
            },
            ..MetaConfig::default()
        }
    }

    #[test]
    fn zero_iterations_return_the_start() {
        let inst = generate_instance(6, 2, 100.0, 1);
        let r = ts_solve(&inst, &quick(0), 0).unwrap();
        assert_eq!(r.best, greedy_initial(&inst));
        assert_eq!(r.trace.len(), 1);
        for solve in [sa_solve, ba_solve] {
            let r = solve(&inst, &quick(0), 0).unwrap();
            assert_eq!(r.trace, vec![r.report.minmax_cost]);
        }
    }

    #[test]
    fn traces_never_increase_and_runs_repeat() {
        let inst = generate_instance(8, 3, 100.0, 2);
        for solve in [ts_solve, sa_solve, ba_solve] {
            let a = solve(&inst, &quick(30), 5).unwrap();
            let b = solve(&inst, &quick(30), 5).unwrap();
            assert!(a.trace.windows(2).all(|w| w[1] <= w[0]));
            assert_eq!(a.best, b.best);
            assert_eq!(*a.trace.last().unwrap(), a.report.minmax_cost);
        }
    }

    #[test]
    fn greedy_start_covers_everyone() {
        for seed in 0..20 {
            let inst = generate_instance(10, 3, 100.0, seed);
            greedy_initial(&inst).validate(10, 3).unwrap();
        }
    }
}
