use std::collections::HashMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::context::{evaluate_objectives, feasible, reduce_z1_keeping_counts, OptimizationContext, Solution};
use super::sorting::{approx_eq, crowding_distance, dominates_approx, nondominated_sort};
use super::{GaConfig, OptimizerError};
use crate::domain::CostVector;

/// One evaluated solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontMember {
    pub solution: Solution,
    pub objectives: CostVector,
    pub feasible: bool,
    /// Number of violated constraints.
    pub violations: usize,
    /// Requests moved away from their requested slot.
    pub shifts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub evaluations: usize,
    pub archive_size: usize,
    /// Largest euro saving against the identity solution in the archive.
    pub best_euro_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    pub members: Vec<FrontMember>,
    /// The unchanged plan of the window.
    pub identity: FrontMember,
    pub history: Vec<GenerationStats>,
}

impl ParetoFront {
    pub fn objective_points(&self) -> Vec<Vec<f64>> {
        self.members.iter().map(|m| m.objectives.as_array().to_vec()).collect()
    }

    pub fn write_history_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["generation", "evaluations", "archive_size", "best_euro_gain"])?;
        for h in &self.history {
            w.write_record([
                h.generation.to_string(),
                h.evaluations.to_string(),
                h.archive_size.to_string(),
                h.best_euro_gain.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Gene layout: one categorical gene per request, then one lane gene per
/// terminal and decision slot.
struct Genome<'a> {
    ctx: &'a OptimizationContext,
    lane_genes: Vec<(usize, usize)>,
}

impl<'a> Genome<'a> {
    fn new(ctx: &'a OptimizationContext) -> Self {
        let lane_genes = (0..ctx.terminals.len())
            .flat_map(|k| ctx.lane_slots.iter().map(move |&t| (k, t)))
            .collect();
        Self { ctx, lane_genes }
    }

    fn len(&self) -> usize {
        self.ctx.requests.len() + self.lane_genes.len()
    }

    fn reset_gene<R: Rng>(&self, s: &mut Solution, g: usize, rng: &mut R) {
        let n_req = self.ctx.requests.len();
        if g < n_req {
            let c = &self.ctx.requests[g].candidates;
            s.slots[g] = c[rng.random_range(0..c.len())];
        } else {
            let (k, t) = self.lane_genes[g - n_req];
            s.lanes[k][t] = rng.random_range(1..self.ctx.s_max);
        }
    }

    fn copy_gene(&self, dst: &mut Solution, src: &Solution, g: usize) {
        let n_req = self.ctx.requests.len();
        if g < n_req {
            dst.slots[g] = src.slots[g];
        } else {
            let (k, t) = self.lane_genes[g - n_req];
            dst.lanes[k][t] = src.lanes[k][t];
        }
    }

    fn polish(&self, s: &mut Solution) {
        reduce_z1_keeping_counts(self.ctx, s, None);
    }

    /// Per-gene reset, plus slot swaps between requests of one terminal. A
    /// swap keeps the arrivals per slot, so it tunes z1 alone.
    fn mutate<R: Rng>(&self, s: &mut Solution, p: f64, rng: &mut R) {
        for g in 0..self.len() {
            if rng.random::<f64>() < p {
                self.reset_gene(s, g, rng);
            }
        }
        let reqs = &self.ctx.requests;
        for a in 0..reqs.len() {
            if rng.random::<f64>() >= p {
                continue;
            }
            let b = rng.random_range(0..reqs.len());
            let (ra, rb) = (&reqs[a], &reqs[b]);
            if ra.terminal == rb.terminal
                && ra.candidates.binary_search(&s.slots[b]).is_ok()
                && rb.candidates.binary_search(&s.slots[a]).is_ok()
            {
                s.slots.swap(a, b);
            }
        }
    }
}

struct Evaluator<'a> {
    ctx: &'a OptimizationContext,
    cache: HashMap<Solution, (CostVector, usize)>,
    evaluations: usize,
}

impl<'a> Evaluator<'a> {
    fn member(&mut self, s: Solution) -> Result<FrontMember, OptimizerError> {
        let (objectives, violations) = match self.cache.get(&s) {
            Some(v) => *v,
            None => {
                self.evaluations += 1;
                let rep = feasible(&s, self.ctx);
                let z = if rep.feasible {
                    evaluate_objectives(&s, self.ctx)?
                } else {
                    CostVector::from_array([f64::INFINITY; 4])
                };
                self.cache.insert(s.clone(), (z, rep.violations.len()));
                (z, rep.violations.len())
            }
        };
        Ok(FrontMember {
            shifts: self.ctx.shifts(&s),
            solution: s,
            objectives,
            feasible: violations == 0,
            violations,
        })
    }
}

/// Feasible non-dominated solutions seen so far, one per objective vector.
#[derive(Default)]
struct Archive {
    members: Vec<FrontMember>,
}

impl Archive {
    fn offer(&mut self, m: &FrontMember) {
        if !m.feasible {
            return;
        }
        let z = m.objectives.as_array();
        let same = |a: &[f64; 4]| a.iter().zip(&z).all(|(x, y)| approx_eq(*x, *y));
        if self
            .members
            .iter()
            .any(|a| same(&a.objectives.as_array()) || dominates_approx(&a.objectives.as_array(), &z))
        {
            return;
        }
        self.members.retain(|a| !dominates_approx(&z, &a.objectives.as_array()));
        self.members.push(m.clone());
    }
}

/// Rank and crowding of every individual under constrained dominance:
/// feasible individuals are sorted into fronts first, infeasible ones follow
/// ordered by violation count.
fn rank_population(pop: &[FrontMember]) -> (Vec<usize>, Vec<f64>) {
    let feasible_idx: Vec<usize> = (0..pop.len()).filter(|&i| pop[i].feasible).collect();
    let points: Vec<Vec<f64>> = feasible_idx.iter().map(|&i| pop[i].objectives.as_array().to_vec()).collect();
    let mut rank = vec![usize::MAX; pop.len()];
    let mut crowd = vec![0.0; pop.len()];
    let fronts = nondominated_sort(&points);
    let n_fronts = fronts.len();
    for (r, front) in fronts.iter().enumerate() {
        let pts: Vec<Vec<f64>> = front.iter().map(|&j| points[j].clone()).collect();
        let d = crowding_distance(&pts);
        for (&j, dist) in front.iter().zip(d) {
            rank[feasible_idx[j]] = r;
            crowd[feasible_idx[j]] = dist;
        }
    }
    for i in 0..pop.len() {
        if !pop[i].feasible {
            rank[i] = n_fronts + pop[i].violations;
        }
    }
    (rank, crowd)
}

fn better(i: usize, j: usize, rank: &[usize], crowd: &[f64]) -> bool {
    rank[i] < rank[j] || (rank[i] == rank[j] && crowd[i] > crowd[j])
}

/// Elitist non-dominated sorting GA over request slots and lanes. Returns the
/// archive of feasible non-dominated solutions found during the run.
pub fn nsga2_run(ctx: &OptimizationContext, cfg: &GaConfig) -> Result<ParetoFront, OptimizerError> {
    nsga2_run_observed(ctx, cfg, &mut |_| {})
}

/// [`nsga2_run`] calling `on_generation` after every generation.
pub fn nsga2_run_observed(
    ctx: &OptimizationContext,
    cfg: &GaConfig,
    on_generation: &mut dyn FnMut(&GenerationStats),
) -> Result<ParetoFront, OptimizerError> {
    if let Some(v) = cfg.validate().into_iter().next() {
        return Err(OptimizerError::Config(format!("{}: {}", v.path, v.message)));
    }
    ctx.validate()?;
    let genome = Genome::new(ctx);
    let mut eval = Evaluator {
        ctx,
        cache: HashMap::new(),
        evaluations: 0,
    };
    let identity = eval.member(ctx.identity())?;
    let mut archive = Archive::default();
    archive.offer(&identity);
    let mut history = Vec::new();

    if genome.len() == 0 {
        return Ok(ParetoFront {
            members: vec![identity.clone()],
            identity,
            history,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.population;
    let p_mut = cfg.mutation_probability(genome.len());
    let mut pop = vec![identity.clone()];
    while pop.len() < n {
        let mut s = ctx.identity();
        if pop.len() % 4 == 0 {
            genome.mutate(&mut s, 1.0, &mut rng);
        } else {
            let p = (rng.random_range(1..=4) as f64 * p_mut).min(1.0);
            genome.mutate(&mut s, p, &mut rng);
        }
        genome.polish(&mut s);
        let m = eval.member(s)?;
        archive.offer(&m);
        pop.push(m);
    }

    let base_euro = identity.objectives.euro_total();
    for generation in 1..=cfg.generations {
        let (rank, crowd) = rank_population(&pop);
        let tournament = |rng: &mut ChaCha8Rng| {
            let a = rng.random_range(0..pop.len());
            let b = rng.random_range(0..pop.len());
            if better(b, a, &rank, &crowd) {
                b
            } else {
                a
            }
        };
        let mut offspring = Vec::with_capacity(n);
        while offspring.len() < n {
            let pa = tournament(&mut rng);
            let pb = tournament(&mut rng);
            let mut c1 = pop[pa].solution.clone();
            let mut c2 = pop[pb].solution.clone();
            if rng.random::<f64>() < cfg.crossover_rate {
                for g in 0..genome.len() {
                    if rng.random::<bool>() {
                        genome.copy_gene(&mut c1, &pop[pb].solution, g);
                        genome.copy_gene(&mut c2, &pop[pa].solution, g);
                    }
                }
            }
            genome.mutate(&mut c1, p_mut, &mut rng);
            genome.mutate(&mut c2, p_mut, &mut rng);
            for mut c in [c1, c2] {
                genome.polish(&mut c);
                let m = eval.member(c)?;
                archive.offer(&m);
                offspring.push(m);
            }
        }
        pop.extend(offspring);
        pop = survive(pop, n, cfg.pareto_fraction);
        let stats = GenerationStats {
            generation,
            evaluations: eval.evaluations,
            archive_size: archive.members.len(),
            best_euro_gain: archive
                .members
                .iter()
                .map(|m| base_euro - m.objectives.euro_total())
                .fold(f64::NEG_INFINITY, f64::max),
        };
        on_generation(&stats);
        history.push(stats);
    }

    let members = if archive.members.is_empty() {
        let least = pop.iter().map(|m| m.violations).min().unwrap_or(0);
        let mut best: Vec<FrontMember> = pop.into_iter().filter(|m| m.violations == least).collect();
        best.dedup_by(|a, b| a.solution == b.solution);
        best
    } else {
        let mut m = archive.members;
        m.sort_by(|a, b| {
            a.objectives
                .as_array()
                .partial_cmp(&b.objectives.as_array())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        m
    };
    Ok(ParetoFront {
        members,
        identity,
        history,
    })
}

/// (μ+λ) survival by rank then crowding. At most `pareto_fraction` of the
/// population comes from the first front while later fronts can fill the rest.
fn survive(pop: Vec<FrontMember>, n: usize, pareto_fraction: f64) -> Vec<FrontMember> {
    // drop exact duplicates so copies do not crowd out diversity
    let mut seen = std::collections::HashSet::new();
    let mut pop: Vec<FrontMember> = pop.into_iter().filter(|m| seen.insert(m.solution.clone())).collect();
    let (rank, crowd) = rank_population(&pop);
    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.sort_by(|&a, &b| {
        rank[a]
            .cmp(&rank[b])
            .then(crowd[b].partial_cmp(&crowd[a]).unwrap_or(std::cmp::Ordering::Equal))
            .then(a.cmp(&b))
    });
    let cap = ((pareto_fraction * n as f64).ceil() as usize).max(1);
    let mut chosen = Vec::with_capacity(n);
    let mut deferred = Vec::new();
    let mut first = 0;
    for &i in &order {
        if chosen.len() == n {
            break;
        }
        if rank[i] == 0 {
            if first < cap {
                first += 1;
                chosen.push(i);
            } else {
                deferred.push(i);
            }
        } else {
            chosen.push(i);
        }
    }
    for i in deferred {
        if chosen.len() == n {
            break;
        }
        chosen.push(i);
    }
    chosen.sort_unstable();
    let mut keep = vec![false; pop.len()];
    for &i in &chosen {
        keep[i] = true;
    }
    let mut idx = 0;
    pop.retain(|_| {
        let k = keep[idx];
        idx += 1;
        k
    });
    pop
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::context::{TerminalModel, WindowRequest};

    fn ctx(eta: Vec<f64>, lanes: Vec<u32>, requests: Vec<WindowRequest>) -> OptimizationContext {
        OptimizationContext {
            slot_hours: 1.0,
            terminals: vec![TerminalModel {
                name: "T".into(),
                service_rate: 12.0,
                crane_cost: 205.0,
                centroid: 0,
            }],
            lane_slots: (0..eta.len()).collect(),
            eta: vec![eta],
            lanes: vec![lanes],
            requests,
            idle_cost: 38.0,
            s_max: 4,
            traffic: None,
        }
    }

    fn small_cfg(seed: u64) -> GaConfig {
        GaConfig {
            population: 16,
            generations: 20,
            seed,
            ..GaConfig::default()
        }
    }

    #[test]
    fn identity_unique_optimum() {
        // tiny load, requests already at their cheapest slot
        let reqs = (0..3)
            .map(|i| WindowRequest {
                request_id: i,
                terminal: 0,
                requested_slot: i as usize,
                candidates: vec![0, 1, 2],
                planning_cost: (0..3).map(|t| if t == i as usize { 0.0 } else { 50.0 }).collect(),
            })
            .collect();
        let mut c = ctx(vec![1.0, 1.0, 1.0], vec![1, 1, 1], reqs);
        // extra lanes would trade crane cost for waiting, so lanes stay fixed
        c.lane_slots.clear();
        let front = nsga2_run(&c, &small_cfg(3)).unwrap();
        assert_eq!(front.members.len(), 1);
        assert_eq!(front.members[0].solution, c.identity());
    }

    #[test]
    fn deterministic_per_seed() {
        let reqs = (0..6)
            .map(|i| WindowRequest {
                request_id: i,
                terminal: 0,
                requested_slot: 1,
                candidates: vec![0, 1, 2],
                planning_cost: vec![10.0, 0.0, 5.0],
            })
            .collect();
        let c = ctx(vec![10.0, 30.0, 10.0], vec![2, 3, 2], reqs);
        let a = nsga2_run(&c, &small_cfg(5)).unwrap();
        let b = nsga2_run(&c, &small_cfg(5)).unwrap();
        assert_eq!(a, b);
        let pts = a.objective_points();
        for p in &pts {
            assert!(!pts.iter().any(|q| dominates_approx(q, p)));
        }
        assert!(a.members.iter().all(|m| m.feasible));
    }

    #[test]
    fn empty_window_returns_identity() {
        let mut c = ctx(vec![5.0, 5.0], vec![1, 1], Vec::new());
        c.lane_slots.clear();
        let f = nsga2_run(&c, &small_cfg(1)).unwrap();
        assert_eq!(f.members.len(), 1);
        assert_eq!(f.members[0].shifts, 0);
    }

    #[test]
    fn bad_config_is_rejected() {
        let c = ctx(vec![5.0], vec![1], Vec::new());
        let cfg = GaConfig {
            population: 7,
            ..GaConfig::default()
        };
        assert!(matches!(nsga2_run(&c, &cfg), Err(OptimizerError::Config(_))));
    }
}
