//! Lloyd's k-means with pinned centroids.
//!
//! Centers are split into *fixed* ones (positions of representatives that an
//! earlier layer already chose) and *free* ones. The assignment step uses all
//! centers; the update step only moves free centers, so fixed positions are
//! bitwise unchanged for the whole run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TilingConfig;

pub type Point2 = [f64; 2];

/// Relative slack allowed when checking that the objective never increases;
/// covers rounding in the centroid mean only.
pub const OBJECTIVE_SLACK: f64 = 1e-12;

#[inline]
pub fn dist2(a: Point2, b: Point2) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansOutcome {
    pub fixed_centers: Vec<Point2>,
    pub free_centers: Vec<Point2>,
    /// Index into `fixed_centers ++ free_centers` for every input point.
    pub assignments: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// Total within-cluster squared distance after every assignment step and
    /// every update step, in execution order.
    pub objective_trace: Vec<f64>,
}

impl KMeansOutcome {
    pub fn centers(&self) -> impl Iterator<Item = Point2> + '_ {
        self.fixed_centers.iter().chain(&self.free_centers).copied()
    }
}

/// Number of free centers: the slots left after the fixed ones, but never more
/// than the points that do not sit exactly on a fixed center.
pub fn free_center_count(points: &[Point2], fixed: &[Point2], k_total: usize) -> usize {
    let slots = k_total.saturating_sub(fixed.len());
    if slots == 0 {
        return 0;
    }
    let uncovered = points.iter().filter(|p| !fixed.iter().any(|c| c == *p)).count();
    slots.min(uncovered)
}

/// k-means++ seeding of `count` new centers given the already placed `fixed`
/// ones: each new center is a data point drawn with probability proportional
/// to its squared distance to the nearest existing center (uniform when no
/// center exists yet or every point is covered).
pub fn kmeans_pp_seed<R: Rng>(points: &[Point2], fixed: &[Point2], count: usize, rng: &mut R) -> Vec<Point2> {
    let mut seeds = Vec::with_capacity(count);
    if count == 0 || points.is_empty() {
        return seeds;
    }
    let mut d2: Vec<f64> = points
        .iter()
        .map(|&p| fixed.iter().map(|&c| dist2(p, c)).fold(f64::INFINITY, f64::min))
        .collect();
    for _ in 0..count {
        let total: f64 = if fixed.is_empty() && seeds.is_empty() {
            0.0
        } else {
            d2.iter().sum()
        };
        let idx = if total > 0.0 && total.is_finite() {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                chosen = Some(i);
                if acc > target {
                    break;
                }
            }
            chosen.expect("positive total weight")
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[idx];
        seeds.push(c);
        for (w, &p) in d2.iter_mut().zip(points) {
            *w = w.min(dist2(p, c));
        }
    }
    seeds
}

fn assign(points: &[Point2], centers: &[Point2], out: &mut [usize]) -> f64 {
    let mut objective = 0.0;
    for (slot, &p) in out.iter_mut().zip(points) {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, &c) in centers.iter().enumerate() {
            let d = dist2(p, c);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        *slot = best;
        objective += best_d;
    }
    objective
}

fn objective(points: &[Point2], centers: &[Point2], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(&p, &a)| dist2(p, centers[a]))
        .sum()
}

fn check_monotone(trace: &[f64]) {
    if let [.., prev, last] = trace {
        debug_assert!(
            *last <= *prev + OBJECTIVE_SLACK * prev.abs(),
            "k-means objective increased: {prev} -> {last}"
        );
    }
}

/// Runs constrained k-means seeded from `cfg.rng_seed`.
pub fn constrained_kmeans(points: &[Point2], fixed: &[Point2], k_total: usize, cfg: &TilingConfig) -> KMeansOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    constrained_kmeans_with_rng(points, fixed, k_total, cfg, &mut rng)
}

/// Constrained k-means drawing its seeding from `rng`.
///
/// Panics if `k_total < fixed.len()` or `points` is empty.
pub fn constrained_kmeans_with_rng<R: Rng>(
    points: &[Point2],
    fixed: &[Point2],
    k_total: usize,
    cfg: &TilingConfig,
    rng: &mut R,
) -> KMeansOutcome {
    assert!(
        k_total >= fixed.len(),
        "k_total ({k_total}) smaller than the number of fixed centers ({})",
        fixed.len()
    );
    assert!(!points.is_empty(), "constrained k-means needs at least one point");

    let n_fixed = fixed.len();
    let n_free = free_center_count(points, fixed, k_total);
    let mut centers: Vec<Point2> = fixed.to_vec();
    centers.extend(kmeans_pp_seed(points, fixed, n_free, rng));

    let mut assignments = vec![0usize; points.len()];
    let mut trace = Vec::new();
    let mut reseeded = vec![false; n_free];
    let mut frozen = vec![false; n_free];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iterations {
        iterations += 1;
        trace.push(assign(points, &centers, &mut assignments));
        check_monotone(&trace);
        if n_free == 0 {
            converged = true;
            break;
        }

        let mut sums = vec![[0.0f64; 2]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (&p, &a) in points.iter().zip(&assignments) {
            sums[a][0] += p[0];
            sums[a][1] += p[1];
            counts[a] += 1;
        }

        let old = centers.clone();
        let mut empty = Vec::new();
        for j in 0..n_free {
            let c = n_fixed + j;
            if frozen[j] {
                continue;
            }
            if counts[c] > 0 {
                let m = counts[c] as f64;
                centers[c] = [sums[c][0] / m, sums[c][1] / m];
            } else if reseeded[j] {
                frozen[j] = true;
            } else {
                empty.push(j);
            }
        }
        for j in empty {
            // farthest point from every other current center
            let c = n_fixed + j;
            let mut best = 0;
            let mut best_d = -1.0;
            for (i, &p) in points.iter().enumerate() {
                let d = centers
                    .iter()
                    .enumerate()
                    .filter(|&(o, _)| o != c)
                    .map(|(_, &q)| dist2(p, q))
                    .fold(f64::INFINITY, f64::min);
                if d > best_d {
                    best_d = d;
                    best = i;
                }
            }
            centers[c] = points[best];
            reseeded[j] = true;
        }

        trace.push(objective(points, &centers, &assignments));
        check_monotone(&trace);

        let movement = old[n_fixed..]
            .iter()
            .zip(&centers[n_fixed..])
            .map(|(&a, &b)| dist2(a, b).sqrt())
            .fold(0.0f64, f64::max);
        if movement < cfg.convergence_eps {
            converged = true;
            break;
        }
    }

    // final assignment so the returned partition matches the returned centers
    if n_free > 0 || iterations == 0 {
        trace.push(assign(points, &centers, &mut assignments));
        check_monotone(&trace);
    }

    let free_centers = centers.split_off(n_fixed);
    KMeansOutcome {
        fixed_centers: centers,
        free_centers,
        assignments,
        iterations,
        converged,
        objective_trace: trace,
    }
}
