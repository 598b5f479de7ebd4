use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index of every point, each the nearest centroid (lowest index on ties).
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Lloyd iterations run.
    pub iterations: usize,
    /// Inertia after each assignment step, first to last.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, sq_dist(p, &centroids[0]));
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn validate(points: &[Vec<f64>], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::Validation("k must be at least 1".into()));
    }
    if points.len() < k {
        return Err(Error::Validation(format!("{} points cannot form {k} clusters", points.len())));
    }
    let dim = points[0].len();
    if dim == 0 {
        return Err(Error::Validation("points have no features".into()));
    }
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::Validation(format!("point {i} has {} features, expected {dim}", p.len())));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("point {i} has a non-finite feature")));
        }
    }
    Ok(dim)
}

/// k-means++ seeding: the first centre uniformly, then each next one with
/// probability proportional to its squared distance to the chosen centres.
fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = d2.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Independent k-means++ starts per call; the lowest final inertia wins.
pub const RESTARTS: usize = 10;

/// Lloyd's algorithm from seeded k-means++ starts, keeping the best of
/// [`RESTARTS`] runs. Each run stops when no centroid moves more than `tol`
/// (Euclidean) or after `max_iters` iterations. A cluster left empty is
/// re-seeded at the point farthest from its assigned centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize, tol: f64) -> Result<KMeansResult> {
    let dim = validate(points, k)?;
    if !(tol >= 0.0) {
        return Err(Error::Validation(format!("tol must be non-negative, got {tol}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..RESTARTS {
        let run = lloyd(points, k, dim, max_iters, tol, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn lloyd(points: &[Vec<f64>], k: usize, dim: usize, max_iters: usize, tol: f64, rng: &mut ChaCha8Rng) -> KMeansResult {
    let mut centroids = seed_centroids(points, k, rng);
    let mut assignments = vec![0usize; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut distances = vec![0.0; points.len()];

    let assign = |centroids: &[Vec<f64>], assignments: &mut [usize], distances: &mut [f64]| -> f64 {
        let mut inertia = 0.0;
        for ((p, a), d) in points.iter().zip(assignments.iter_mut()).zip(distances.iter_mut()) {
            let (j, dist) = nearest(p, centroids);
            *a = j;
            *d = dist;
            inertia += dist;
        }
        inertia
    };

    let mut inertia = assign(&centroids, &mut assignments, &mut distances);
    history.push(inertia);
    while iterations < max_iters {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut moved: f64 = 0.0;
        for j in 0..k {
            let next = if counts[j] > 0 {
                sums[j].iter().map(|s| s / counts[j] as f64).collect()
            } else {
                let (far, _) = distances
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
                distances[far] = 0.0;
                points[far].clone()
            };
            moved = moved.max(sq_dist(&next, &centroids[j]).sqrt());
            centroids[j] = next;
        }
        inertia = assign(&centroids, &mut assignments, &mut distances);
        history.push(inertia);
        if moved <= tol {
            break;
        }
    }
    KMeansResult {
        centroids,
        assignments,
        inertia,
        iterations,
        inertia_history: history,
    }
}
