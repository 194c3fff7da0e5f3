use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `a` dominates `b` under minimisation: no worse everywhere, better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut better = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            better = true;
        }
    }
    better
}

/// Two objective values equal up to summation-order rounding.
pub fn approx_eq(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

/// Dominance that ignores differences within rounding noise: `a` is no worse
/// anywhere and clearly better somewhere. Permuted slot plans give the same
/// costs summed in another order, which must not count as an improvement.
pub fn dominates_approx(a: &[f64], b: &[f64]) -> bool {
    let mut better = false;
    for (&x, &y) in a.iter().zip(b) {
        if approx_eq(x, y) {
            continue;
        }
        if x > y {
            return false;
        }
        better = true;
    }
    better
}

/// Fast non-dominated sort. Returns fronts of point indices, best first,
/// each front in ascending index order.
pub fn nondominated_sort(points: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by = vec![0usize; n];
    let mut dominating: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates(&points[i], &points[j]) {
                dominating[i].push(j);
                dominated_by[j] += 1;
            } else if dominates(&points[j], &points[i]) {
                dominating[j].push(i);
                dominated_by[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominating[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Reference O(n²·m) ranking: peel off the non-dominated set repeatedly.
pub fn brute_force_fronts(points: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let mut remaining: Vec<usize> = (0..points.len()).collect();
    let mut fronts = Vec::new();
    while !remaining.is_empty() {
        let front: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| !remaining.iter().any(|&j| dominates(&points[j], &points[i])))
            .collect();
        remaining.retain(|i| !front.contains(i));
        fronts.push(front);
    }
    fronts
}

/// Crowding distance of the points of one front, in front order. Boundary
/// points of every objective with a non-zero range are infinite; objectives
/// whose range is zero contribute nothing.
pub fn crowding_distance(front: &[Vec<f64>]) -> Vec<f64> {
    let n = front.len();
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let m = front[0].len();
    let mut dist = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    for k in 0..m {
        order.sort_by(|&a, &b| front[a][k].total_cmp(&front[b][k]).then(a.cmp(&b)));
        let lo = front[order[0]][k];
        let hi = front[order[n - 1]][k];
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        for w in 1..n - 1 {
            let i = order[w];
            if dist[i].is_finite() {
                dist[i] += (front[order[w + 1]][k] - front[order[w - 1]][k]) / range;
            }
        }
    }
    dist
}

/// Monte Carlo estimate of the volume dominated by `points` inside the box
/// `[lower, reference]`. The sample is fixed by `seed`, so estimates for
/// different point sets are directly comparable.
pub fn hypervolume(points: &[Vec<f64>], lower: &[f64], reference: &[f64], samples: usize, seed: u64) -> f64 {
    let m = reference.len();
    let volume: f64 = lower.iter().zip(reference).map(|(l, r)| (r - l).max(0.0)).product();
    if volume == 0.0 || samples == 0 {
        return 0.0;
    }
    let inside: Vec<&Vec<f64>> = points
        .iter()
        .filter(|p| p.iter().zip(reference).all(|(a, r)| a < r))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = vec![0.0; m];
    let mut hits = 0usize;
    for _ in 0..samples {
        for k in 0..m {
            sample[k] = lower[k] + rng.random::<f64>() * (reference[k] - lower[k]);
        }
        if inside.iter().any(|p| p.iter().zip(&sample).all(|(a, s)| a <= s)) {
            hits += 1;
        }
    }
    volume * hits as f64 / samples as f64
}
