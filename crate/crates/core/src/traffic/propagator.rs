use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{LinkGraph, LinkState, NormalizedAdjacency, StateGrid, TrafficError};

/// Days of history required before a propagator is fitted.
pub const MIN_FIT_DAYS: usize = 30;

/// Minimum propagated speed, km/h.
const MIN_SPEED: f64 = 5.0;

/// Linear k-order graph propagator over the features
/// `[q_passenger, q_truck, speed]`.
///
/// `link_weights[o][g][f]` maps feature `g` of the order-`o` neighbourhood
/// average (`Â^o X`) to output feature `f`; order 0 is the node itself.
/// `centroid_weights[o][f]` maps the order-`o` spread of centroid demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagatorParams {
    pub link_weights: Vec<[[f64; 3]; 3]>,
    pub centroid_weights: Vec<[f64; 3]>,
    pub bias: [f64; 3],
}

impl PropagatorParams {
    pub fn zeros(order: usize) -> Self {
        Self {
            link_weights: vec![[[0.0; 3]; 3]; order + 1],
            centroid_weights: vec![[0.0; 3]; order],
            bias: [0.0; 3],
        }
    }

    pub fn order(&self) -> usize {
        self.centroid_weights.len()
    }

    pub fn is_finite(&self) -> bool {
        self.link_weights.len() == self.order() + 1
            && self.link_weights.iter().flatten().flatten().all(|v| v.is_finite())
            && self.centroid_weights.iter().flatten().all(|v| v.is_finite())
            && self.bias.iter().all(|v| v.is_finite())
    }

    fn n_regressors(order: usize) -> usize {
        3 * (order + 1) + order
    }
}

/// Per-node signals `Â^o X` and `Â^o c` for `o = 0..=order`.
pub(crate) struct Neighbourhoods {
    pub features: Vec<Vec<[f64; 3]>>,
    pub demand: Vec<Vec<f64>>,
}

pub(crate) fn neighbourhoods(
    adj: &NormalizedAdjacency,
    x: &[[f64; 3]],
    injection: &[f64],
    order: usize,
) -> Neighbourhoods {
    let n = x.len();
    let mut features = vec![x.to_vec()];
    let mut demand = vec![injection.to_vec()];
    for o in 1..=order {
        let prev = &features[o - 1];
        let mut next = vec![[0.0; 3]; n];
        for (i, row) in adj.rows.iter().enumerate() {
            for &(j, w) in row {
                for g in 0..3 {
                    next[i][g] += w * prev[j][g];
                }
            }
        }
        features.push(next);
        let prev_d = &demand[o - 1];
        let mut next_d = vec![0.0; n];
        adj.apply(prev_d, &mut next_d);
        demand.push(next_d);
    }
    Neighbourhoods { features, demand }
}

/// One unclamped step. `injection` is centroid demand already spread over
/// the attachment nodes. The bias is skipped when `with_bias` is false, which
/// gives the response to a state or demand perturbation.
pub(crate) fn step(
    adj: &NormalizedAdjacency,
    x: &[[f64; 3]],
    injection: &[f64],
    params: &PropagatorParams,
    with_bias: bool,
) -> Vec<[f64; 3]> {
    let k = params.order();
    let nb = neighbourhoods(adj, x, injection, k);
    let bias = if with_bias { params.bias } else { [0.0; 3] };
    (0..x.len())
        .map(|i| {
            let mut y = bias;
            for (o, w) in params.link_weights.iter().enumerate() {
                let feat = nb.features[o][i];
                for g in 0..3 {
                    for f in 0..3 {
                        y[f] += w[g][f] * feat[g];
                    }
                }
            }
            for (o, w) in params.centroid_weights.iter().enumerate() {
                let d = nb.demand[o][i];
                for f in 0..3 {
                    y[f] += w[f] * d;
                }
            }
            y
        })
        .collect()
}

fn check_shapes(graph: &LinkGraph, states: &[LinkState], demand: &[f64]) -> Result<(), TrafficError> {
    if states.len() != graph.n_nodes() {
        return Err(TrafficError::ShapeMismatch(format!(
            "{} states for {} nodes",
            states.len(),
            graph.n_nodes()
        )));
    }
    if demand.len() != graph.centroids.len() {
        return Err(TrafficError::ShapeMismatch(format!(
            "{} demand values for {} centroids",
            demand.len(),
            graph.centroids.len()
        )));
    }
    Ok(())
}

/// Linear one-step propagation without clamping.
pub fn propagate_linear(
    graph: &LinkGraph,
    states: &[LinkState],
    demand: &[f64],
    params: &PropagatorParams,
) -> Result<Vec<LinkState>, TrafficError> {
    check_shapes(graph, states, demand)?;
    let adj = graph.normalized_adjacency();
    let mut injection = vec![0.0; graph.n_nodes()];
    graph.centroid_injection(demand, &mut injection);
    let x: Vec<[f64; 3]> = states.iter().map(LinkState::as_array).collect();
    Ok(step(&adj, &x, &injection, params, true)
        .into_iter()
        .map(LinkState::from_array)
        .collect())
}

/// One propagation step with flows clamped at zero and speeds to `[5, ffs]`.
pub fn propagate(
    graph: &LinkGraph,
    states: &[LinkState],
    demand: &[f64],
    params: &PropagatorParams,
    free_flow_speed: f64,
) -> Result<Vec<LinkState>, TrafficError> {
    let mut next = propagate_linear(graph, states, demand, params)?;
    for s in &mut next {
        clamp_state(s, free_flow_speed);
    }
    Ok(next)
}

pub(crate) fn clamp_state(s: &mut LinkState, free_flow_speed: f64) {
    s.q_passenger = s.q_passenger.max(0.0);
    s.q_truck = s.q_truck.max(0.0);
    s.speed_kmh = s.speed_kmh.clamp(MIN_SPEED, free_flow_speed);
}

/// One observed day: link states and the centroid truck demand per interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficDay {
    pub states: StateGrid,
    /// `centroid_demand[t][c]`, trucks per interval.
    pub centroid_demand: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub samples: usize,
    pub regressors: usize,
    pub rank: usize,
    pub rank_deficient: bool,
    /// Root mean squared one-step residual per feature.
    pub rmse: [f64; 3],
}

/// Least-squares fit of the one-step-ahead linear propagator.
///
/// Regressors are centred and scaled, and the normal equations are solved by
/// SVD pseudo-inverse, so collinear or constant regressors get zero weight and
/// the bias absorbs the mean.
pub fn fit_propagator(
    days: &[TrafficDay],
    graph: &LinkGraph,
    order: usize,
) -> Result<(PropagatorParams, FitReport), TrafficError> {
    if days.len() < MIN_FIT_DAYS {
        return Err(TrafficError::InsufficientHistory {
            needed: MIN_FIT_DAYS,
            got: days.len(),
        });
    }
    if order == 0 {
        return Err(TrafficError::ShapeMismatch("propagation order must be >= 1".into()));
    }
    graph.check()?;
    let n = graph.n_nodes();
    let p = PropagatorParams::n_regressors(order);
    let adj = graph.normalized_adjacency();

    let mut count = 0usize;
    let mut sz = DVector::<f64>::zeros(p);
    let mut szz = DMatrix::<f64>::zeros(p, p);
    let mut sy = [0.0f64; 3];
    let mut szy = DMatrix::<f64>::zeros(p, 3);
    let mut syy = [0.0f64; 3];
    let mut z = DVector::<f64>::zeros(p);
    let mut injection = vec![0.0; n];

    for day in days {
        let grid = &day.states;
        if grid.n_nodes != n || day.centroid_demand.len() < grid.n_intervals {
            return Err(TrafficError::ShapeMismatch("history day does not match graph".into()));
        }
        for t in 0..grid.n_intervals.saturating_sub(1) {
            let x: Vec<[f64; 3]> = grid.interval(t).iter().map(LinkState::as_array).collect();
            graph.centroid_injection(&day.centroid_demand[t], &mut injection);
            let nb = neighbourhoods(&adj, &x, &injection, order);
            for i in 0..n {
                regressor_row(&nb, i, order, &mut z);
                let y = grid.get(t + 1, i).as_array();
                count += 1;
                sz += &z;
                szz.ger(1.0, &z, &z, 1.0);
                for f in 0..3 {
                    sy[f] += y[f];
                    syy[f] += y[f] * y[f];
                    for r in 0..p {
                        szy[(r, f)] += z[r] * y[f];
                    }
                }
            }
        }
    }
    if count == 0 {
        return Err(TrafficError::InsufficientHistory {
            needed: MIN_FIT_DAYS,
            got: 0,
        });
    }

    let m = count as f64;
    let mean_z = &sz / m;
    let cov = &szz / m - &mean_z * mean_z.transpose();
    let mean_y = [sy[0] / m, sy[1] / m, sy[2] / m];
    let mut cross = DMatrix::<f64>::zeros(p, 3);
    for f in 0..3 {
        for r in 0..p {
            cross[(r, f)] = szy[(r, f)] / m - mean_z[r] * mean_y[f];
        }
    }

    // scale to unit variance; constant columns stay at zero
    let scale: Vec<f64> = (0..p)
        .map(|r| {
            let v = cov[(r, r)];
            if v > 1e-12 * (1.0 + mean_z[r] * mean_z[r]) {
                v.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut cov_s = DMatrix::<f64>::zeros(p, p);
    let mut cross_s = DMatrix::<f64>::zeros(p, 3);
    for r in 0..p {
        if scale[r] == 0.0 {
            continue;
        }
        for c in 0..p {
            if scale[c] > 0.0 {
                cov_s[(r, c)] = cov[(r, c)] / (scale[r] * scale[c]);
            }
        }
        for f in 0..3 {
            cross_s[(r, f)] = cross[(r, f)] / scale[r];
        }
    }
    let svd = cov_s.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = 1e-10 * max_sv.max(1e-300);
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let pinv = svd.pseudo_inverse(eps).expect("computed U and V");
    let beta_s = pinv * cross_s;

    let mut params = PropagatorParams::zeros(order);
    let mut beta = DMatrix::<f64>::zeros(p, 3);
    for r in 0..p {
        if scale[r] > 0.0 {
            for f in 0..3 {
                beta[(r, f)] = beta_s[(r, f)] / scale[r];
            }
        }
    }
    for f in 0..3 {
        let mut b = mean_y[f];
        for r in 0..p {
            b -= beta[(r, f)] * mean_z[r];
        }
        params.bias[f] = b;
    }
    for o in 0..=order {
        for g in 0..3 {
            for f in 0..3 {
                params.link_weights[o][g][f] = beta[(3 * o + g, f)];
            }
        }
    }
    for o in 0..order {
        for f in 0..3 {
            params.centroid_weights[o][f] = beta[(3 * (order + 1) + o, f)];
        }
    }

    // residual variance from the accumulated moments
    let mut rmse = [0.0; 3];
    for f in 0..3 {
        let var_y = syy[f] / m - mean_y[f] * mean_y[f];
        let explained: f64 = (0..p).map(|r| beta[(r, f)] * cross[(r, f)]).sum();
        rmse[f] = (var_y - explained).max(0.0).sqrt();
    }

    let report = FitReport {
        samples: count,
        regressors: p,
        rank,
        rank_deficient: rank < p,
        rmse,
    };
    if report.rank_deficient {
        log::warn!("propagator design is rank deficient: rank {rank} of {p}");
    }
    Ok((params, report))
}

fn regressor_row(nb: &Neighbourhoods, i: usize, order: usize, z: &mut DVector<f64>) {
    for o in 0..=order {
        for g in 0..3 {
            z[3 * o + g] = nb.features[o][i][g];
        }
    }
    for o in 0..order {
        z[3 * (order + 1) + o] = nb.demand[o][i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shift_params() -> PropagatorParams {
        let mut p = PropagatorParams::zeros(1);
        p.link_weights[1] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        p
    }

    #[test]
    fn identity_configuration() {
        let g = LinkGraph::chain(3, 0.6);
        let state = LinkState {
            q_passenger: 100.0,
            q_truck: 10.0,
            speed_kmh: 90.0,
        };
        let mut p = PropagatorParams::zeros(1);
        p.bias = state.as_array();
        let next = propagate(&g, &[state; 3], &[0.0], &p, 100.0).unwrap();
        assert_eq!(next, vec![state; 3]);

        let mut selfish = PropagatorParams::zeros(2);
        selfish.link_weights[0] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let varied = vec![
            state,
            LinkState {
                q_passenger: 5.0,
                ..state
            },
            state,
        ];
        assert_eq!(propagate(&g, &varied, &[0.0], &selfish, 100.0).unwrap(), varied);
    }

    #[test]
    fn pulse_travels_down_a_chain() {
        let g = LinkGraph::chain(3, 0.6);
        let p = shift_params();
        let mut x = vec![LinkState::default(); 3];
        x[0].q_truck = 1.0;
        let x1 = propagate_linear(&g, &x, &[0.0], &p).unwrap();
        assert_eq!(x1.iter().map(|s| s.q_truck).collect::<Vec<_>>(), vec![0.0, 1.0, 0.0]);
        let x2 = propagate_linear(&g, &x1, &[0.0], &p).unwrap();
        assert_eq!(x2.iter().map(|s| s.q_truck).collect::<Vec<_>>(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn speeds_are_clamped() {
        let g = LinkGraph::chain(2, 0.6);
        let mut p = PropagatorParams::zeros(1);
        p.bias = [-5.0, 0.0, 500.0];
        let next = propagate(&g, &[LinkState::default(); 2], &[0.0], &p, 100.0).unwrap();
        assert!(next.iter().all(|s| s.speed_kmh == 100.0 && s.q_passenger == 0.0));
        p.bias[2] = -3.0;
        let next = propagate(&g, &[LinkState::default(); 2], &[0.0], &p, 100.0).unwrap();
        assert!(next.iter().all(|s| s.speed_kmh == 5.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let g = LinkGraph::chain(3, 0.6);
        let p = shift_params();
        assert!(propagate(&g, &[LinkState::default(); 2], &[0.0], &p, 100.0).is_err());
        assert!(propagate(&g, &[LinkState::default(); 3], &[], &p, 100.0).is_err());
    }

    #[test]
    fn too_few_days() {
        let g = LinkGraph::chain(3, 0.6);
        let day = TrafficDay {
            states: StateGrid::filled(3, 4, LinkState::default()),
            centroid_demand: vec![vec![0.0]; 4],
        };
        assert!(matches!(
            fit_propagator(&vec![day; 5], &g, 1),
            Err(TrafficError::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn constant_history_gives_bias_only() {
        let g = LinkGraph::chain(4, 0.6);
        let state = LinkState {
            q_passenger: 120.0,
            q_truck: 12.0,
            speed_kmh: 95.0,
        };
        let day = TrafficDay {
            states: StateGrid::filled(4, 12, state),
            centroid_demand: vec![vec![3.0]; 12],
        };
        let (p, report) = fit_propagator(&vec![day; 30], &g, 2).unwrap();
        assert!(report.rank_deficient);
        for w in p.link_weights.iter().flatten().flatten().chain(p.centroid_weights.iter().flatten()) {
            assert!(w.abs() < 1e-6, "weight {w}");
        }
        for (b, s) in p.bias.iter().zip(state.as_array()) {
            assert!((b - s).abs() < 1e-6);
        }
    }

    pub(crate) fn random_params(order: usize, rng: &mut ChaCha8Rng) -> PropagatorParams {
        let mut p = PropagatorParams::zeros(order);
        for w in p.link_weights.iter_mut() {
            for row in w.iter_mut() {
                for v in row.iter_mut() {
                    *v = rng.random_range(-0.2..0.2);
                }
            }
        }
        for w in p.centroid_weights.iter_mut() {
            for v in w.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        p.bias = [10.0, 2.0, 40.0];
        p
    }

    #[test]
    fn self_fit_recovers_known_parameters() {
        let g = LinkGraph::port_network(&[("a", 3.0), ("b", 1.8)], 0.6, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = random_params(2, &mut rng);
        let adj = g.normalized_adjacency();
        let n = g.n_nodes();
        // independent two-interval days: a random state and its exact successor
        let days: Vec<TrafficDay> = (0..40)
            .map(|_| {
                let x: Vec<[f64; 3]> = (0..n)
                    .map(|_| {
                        [
                            rng.random_range(0.0..50.0),
                            rng.random_range(0.0..5.0),
                            rng.random_range(60.0..100.0),
                        ]
                    })
                    .collect();
                let d = vec![rng.random_range(0.0..20.0)];
                let mut inj = vec![0.0; n];
                g.centroid_injection(&d, &mut inj);
                let y = step(&adj, &x, &inj, &truth, true);
                let mut grid = StateGrid::filled(n, 2, LinkState::default());
                for i in 0..n {
                    *grid.get_mut(0, i) = LinkState::from_array(x[i]);
                    *grid.get_mut(1, i) = LinkState::from_array(y[i]);
                }
                TrafficDay {
                    states: grid,
                    centroid_demand: vec![d, vec![0.0]],
                }
            })
            .collect();
        let (fit, report) = fit_propagator(&days, &g, 2).unwrap();
        assert!(!report.rank_deficient, "{report:?}");
        let flat = |p: &PropagatorParams| -> Vec<f64> {
            p.link_weights
                .iter()
                .flatten()
                .flatten()
                .chain(p.centroid_weights.iter().flatten())
                .chain(p.bias.iter())
                .cloned()
                .collect()
        };
        for (a, b) in flat(&fit).iter().zip(flat(&truth)) {
            assert!((a - b).abs() <= 0.01 * b.abs(), "{a} vs {b}");
        }
    }
}
