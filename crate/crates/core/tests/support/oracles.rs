// Straightforward reference implementations used as test oracles. None of
// these call into the crate's own algorithms.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

pub type P2 = [f64; 2];

fn d2(a: P2, b: P2) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(p: P2, centers: &[P2]) -> usize {
    let mut best = 0;
    for j in 1..centers.len() {
        if d2(p, centers[j]) < d2(p, centers[best]) {
            best = j;
        }
    }
    best
}

pub struct Lloyd {
    pub centers: Vec<P2>,
    pub assignments: Vec<usize>,
}

/// Plain Lloyd iterations where the first `fixed.len()` centers never move.
/// A free cluster that empties is moved to the point farthest from all other
/// centers; if it empties again it stays where it is for the rest of the run.
pub fn lloyd_with_fixed(points: &[P2], fixed: &[P2], init_free: &[P2], max_iter: usize, eps: f64) -> Lloyd {
    let mut centers: Vec<P2> = fixed.iter().chain(init_free).copied().collect();
    let nf = fixed.len();
    let mut assignments = vec![0; points.len()];
    let mut emptied = vec![0u8; centers.len()];
    for _ in 0..max_iter {
        for (a, &p) in assignments.iter_mut().zip(points) {
            *a = nearest(p, &centers);
        }
        if init_free.is_empty() {
            break;
        }
        let before = centers.clone();
        let mut orphans = Vec::new();
        for j in nf..centers.len() {
            if emptied[j] >= 2 {
                continue;
            }
            let members: Vec<P2> = points
                .iter()
                .zip(&assignments)
                .filter(|(_, &a)| a == j)
                .map(|(&p, _)| p)
                .collect();
            if members.is_empty() {
                emptied[j] += 1;
                if emptied[j] == 1 {
                    orphans.push(j);
                }
                continue;
            }
            centers[j] = [
                members.iter().map(|p| p[0]).sum::<f64>() / members.len() as f64,
                members.iter().map(|p| p[1]).sum::<f64>() / members.len() as f64,
            ];
        }
        for j in orphans {
            let gap = |p: P2| {
                (0..centers.len())
                    .filter(|&o| o != j)
                    .map(|o| d2(p, centers[o]))
                    .fold(f64::INFINITY, f64::min)
            };
            let mut far = 0;
            for i in 1..points.len() {
                if gap(points[i]) > gap(points[far]) {
                    far = i;
                }
            }
            centers[j] = points[far];
        }
        let moved = (nf..centers.len())
            .map(|j| d2(before[j], centers[j]).sqrt())
            .fold(0.0, f64::max);
        if moved < eps {
            break;
        }
    }
    for (a, &p) in assignments.iter_mut().zip(points) {
        *a = nearest(p, &centers);
    }
    Lloyd { centers, assignments }
}

/// Grid cell of `(x, y)` at `layer`; the upper edge 1.0 belongs to the last cell.
pub fn cell(x: f64, y: f64, layer: u32) -> (u32, u32) {
    let n = 1u64 << layer;
    let f = |v: f64| ((v * n as f64).floor() as u64).min(n - 1) as u32;
    (f(x), f(y))
}

/// Smallest layer at which no cell holds more than `k` points.
pub fn depth(points: &[P2], k: usize, cap: u32) -> u32 {
    for layer in 0..=cap {
        let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
        for p in points {
            *counts.entry(cell(p[0], p[1], layer)).or_default() += 1;
        }
        if counts.values().all(|&c| c <= k) {
            return layer;
        }
    }
    cap
}

/// Ids of the `n` most similar rows by cosine, ties broken by lower id.
pub fn top_n(rows: &[Vec<f64>], q: &[f64], n: usize) -> Vec<u64> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let qn = norm(q);
    let mut scored: Vec<(f64, u64)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            (
                r.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / (norm(r) * qn),
                i as u64,
            )
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(n).map(|s| s.1).collect()
}

/// Top-2 eigenvectors of the covariance of `rows` by power iteration with
/// deflation. Returns (vectors, eigenvalues).
pub fn power_pca(rows: &[Vec<f64>], iters: usize) -> ([Vec<f64>; 2], [f64; 2]) {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n).collect();
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(a, m)| a - m).collect())
        .collect();
    let cov_mul = |v: &[f64], defl: Option<(&[f64], f64)>| -> Vec<f64> {
        let mut out = vec![0.0; d];
        for r in &centered {
            let s: f64 = r.iter().zip(v).map(|(a, b)| a * b).sum();
            for (o, a) in out.iter_mut().zip(r) {
                *o += s * a / n;
            }
        }
        if let Some((u, l)) = defl {
            let s: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
            for (o, a) in out.iter_mut().zip(u) {
                *o -= l * s * a;
            }
        }
        out
    };
    let unit = |v: Vec<f64>| {
        let nn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / nn).collect::<Vec<f64>>()
    };
    let run = |defl: Option<(&[f64], f64)>| {
        let mut v = unit((0..d).map(|i| 1.0 + i as f64 * 0.37).collect());
        for _ in 0..iters {
            v = unit(cov_mul(&v, defl));
        }
        let lambda: f64 = cov_mul(&v, defl).iter().zip(&v).map(|(a, b)| a * b).sum();
        (v, lambda)
    };
    let (v1, l1) = run(None);
    let (v2, l2) = run(Some((&v1, l1)));
    ([v1, v2], [l1, l2])
}

/// Layer-by-layer representative sets of a pyramid, keyed by cell.
pub type Layers = Vec<BTreeMap<(u32, u32), BTreeSet<u64>>>;

/// Checks the pyramid invariants from first principles. `pos[i]` is item i's
/// position; `layers[l]` the tiles of layer l. Returns human-readable failures.
pub fn check_pyramid(pos: &[P2], layers: &Layers, k: usize) -> Vec<String> {
    let mut errs = Vec::new();
    let depth = layers.len() - 1;
    for (l, tiles) in layers.iter().enumerate() {
        let mut seen = BTreeSet::new();
        for (&(ix, iy), reps) in tiles {
            if l < depth && reps.len() > k {
                errs.push(format!("L{l} {ix},{iy}: {} > k", reps.len()));
            }
            for &id in reps {
                let Some(&p) = pos.get(id as usize) else {
                    errs.push(format!("L{l} {ix},{iy}: {id} is not an item"));
                    continue;
                };
                if cell(p[0], p[1], l as u32) != (ix, iy) {
                    errs.push(format!("L{l} {ix},{iy}: item {id} outside"));
                }
                if !seen.insert(id) {
                    errs.push(format!("L{l}: item {id} twice"));
                }
            }
            if reps.is_empty() {
                errs.push(format!("L{l} {ix},{iy}: empty tile stored"));
            }
        }
        if l > 0 {
            let prev: BTreeSet<u64> = layers[l - 1].values().flatten().copied().collect();
            if let Some(missing) = prev.difference(&seen).next() {
                errs.push(format!("L{l}: lost representative {missing}"));
            }
        }
        // every occupied cell above the last layer has at least one representative
        let mut occupied = BTreeSet::new();
        for p in pos {
            occupied.insert(cell(p[0], p[1], l as u32));
        }
        for c in &occupied {
            if !tiles.contains_key(c) {
                errs.push(format!("L{l} {},{}: occupied but missing", c.0, c.1));
            }
        }
    }
    if seen_count(&layers[depth]) != pos.len() {
        errs.push(format!(
            "last layer holds {} of {} items",
            seen_count(&layers[depth]),
            pos.len()
        ));
    }
    errs
}

fn seen_count(tiles: &BTreeMap<(u32, u32), BTreeSet<u64>>) -> usize {
    tiles.values().map(|s| s.len()).sum()
}
