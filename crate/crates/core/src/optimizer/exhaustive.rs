use std::collections::HashMap;

use super::context::{slot_waiting_costs, OptimizationContext};
use super::sorting::{approx_eq, dominates_approx};
use super::OptimizerError;

/// Exact Pareto set of a small single-terminal window without traffic model,
/// as objective vectors. The waiting and lane costs depend only on the
/// arrivals per slot and the lanes, so for every arrival profile only the
/// cheapest assignment in planning cost can be efficient; it is found by
/// dynamic programming over the requests.
pub fn exhaustive_front(ctx: &OptimizationContext) -> Result<Vec<[f64; 4]>, OptimizerError> {
    ctx.validate()?;
    if ctx.terminals.len() != 1 || ctx.traffic.is_some() {
        return Err(OptimizerError::Shape("enumeration needs one terminal and no traffic model".into()));
    }
    let n = ctx.n_slots();
    let combos = ((ctx.s_max - 1) as f64).powi(ctx.lane_slots.len() as i32);
    if ctx.requests.len() > 16 || combos > 1e5 {
        return Err(OptimizerError::Shape("instance too large to enumerate".into()));
    }

    // best planning cost per count vector of moved-in requests
    let mut states: HashMap<Vec<u8>, f64> = HashMap::from([(vec![0u8; n], 0.0)]);
    for r in &ctx.requests {
        let mut next: HashMap<Vec<u8>, f64> = HashMap::new();
        for (counts, cost) in &states {
            for &s in &r.candidates {
                let mut c = counts.clone();
                c[s] += 1;
                let v = cost + r.planning_cost[s];
                let e = next.entry(c).or_insert(f64::INFINITY);
                if v < *e {
                    *e = v;
                }
            }
        }
        states = next;
    }

    let mut requested = vec![0.0; n];
    for r in &ctx.requests {
        requested[r.requested_slot] += 1.0;
    }
    let term = &ctx.terminals[0];
    let mut lane_sets = vec![ctx.lanes[0].clone()];
    for &t in &ctx.lane_slots {
        lane_sets = lane_sets
            .into_iter()
            .flat_map(|l| {
                (1..ctx.s_max).map(move |s| {
                    let mut l = l.clone();
                    l[t] = s;
                    l
                })
            })
            .collect();
    }

    let mut points = Vec::new();
    for (counts, z1) in &states {
        let eta: Vec<f64> = (0..n)
            .map(|t| (ctx.eta[0][t] - requested[t] + counts[t] as f64).max(0.0))
            .collect();
        for lanes in &lane_sets {
            let z2: f64 = slot_waiting_costs(&eta, lanes, term.service_rate, ctx.slot_hours, ctx.idle_cost)
                .iter()
                .sum();
            let z3 = term.crane_cost * ctx.slot_hours * lanes.iter().map(|&s| s as f64).sum::<f64>();
            points.push([*z1, z2, z3, 0.0]);
        }
    }
    // a point can only be dominated by points that precede it lexicographically,
    // up to rounding noise, so later near-equal points are checked both ways
    points.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut front: Vec<[f64; 4]> = Vec::new();
    for p in points {
        let same = |q: &[f64; 4]| q.iter().zip(&p).all(|(a, b)| approx_eq(*a, *b));
        if front.iter().any(|q| same(q) || dominates_approx(q, &p)) {
            continue;
        }
        front.retain(|q| !dominates_approx(&p, q));
        front.push(p);
    }
    Ok(front)
}

/// Share of `truth` found in `found`, matching objective vectors to a
/// relative tolerance of 1e-9.
pub fn front_coverage(found: &[Vec<f64>], truth: &[[f64; 4]]) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let hit = truth
        .iter()
        .filter(|t| {
            found.iter().any(|f| f.iter().zip(t.iter()).all(|(a, b)| approx_eq(*a, *b)))
        })
        .count();
    hit as f64 / truth.len() as f64
}
