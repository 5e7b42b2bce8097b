use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::stats::normalized;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub k: usize,
    pub seed: u64,
    pub n_init: usize,
    pub max_iter: usize,
    /// Relative inertia change below which Lloyd iterations stop.
    pub tol: f64,
    pub execution: Execution,
}

impl KMeansOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansOptions {
            k,
            seed,
            n_init: 10,
            max_iter: 300,
            tol: 1e-4,
            execution: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to assigned centroids, on unit vectors.
    pub inertia: f64,
    pub seed: u64,
    pub n_init: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub iterations: usize,
    /// Inertia after each assignment step of the winning restart.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, m) in centroids.iter().enumerate() {
        let d = sq_dist(x, m);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut x = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if x < *d {
                    idx = i;
                    break;
                }
                x -= d;
            }
            idx
        };
        centroids.push(points[pick].clone());
        let c = centroids.last().unwrap();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, c));
        }
    }
    centroids
}

struct Run {
    assignments: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    inertia: f64,
    iterations: usize,
    trace: Vec<f64>,
}

fn lloyd(points: &[Vec<f64>], opts: &KMeansOptions, restart: usize) -> Run {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(restart as u64);
    let k = opts.k;
    let dim = points[0].len();
    let mut centroids = plus_plus(points, k, &mut rng);
    let mut trace = Vec::new();
    let mut prev = f64::INFINITY;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let near: Vec<(usize, f64)> = points.iter().map(|p| nearest(p, &centroids)).collect();
        let inertia: f64 = near.iter().map(|n| n.1).sum();
        trace.push(inertia);
        let converged = prev.is_finite() && (prev - inertia).abs() <= opts.tol * prev.max(f64::MIN_POSITIVE);
        if converged || iterations >= opts.max_iter || inertia == 0.0 {
            return Run {
                assignments: near.iter().map(|n| n.0).collect(),
                centroids,
                inertia,
                iterations,
                trace,
            };
        }
        prev = inertia;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, (c, _)) in points.iter().zip(&near) {
            counts[*c] += 1;
            for (s, v) in sums[*c].iter_mut().zip(p) {
                *s += v;
            }
        }
        // empty clusters take the point farthest from its centroid
        let mut taken = vec![false; points.len()];
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..points.len())
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| near[a].1.total_cmp(&near[b].1).then(b.cmp(&a)))
                    .unwrap();
                taken[far] = true;
                sums[c] = points[far].clone();
                counts[c] = 1;
            }
        }
        for c in 0..k {
            centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
    }
}

/// K-means on L2-normalised rows: k-means++ seeding, Lloyd iterations, best
/// of `n_init` restarts by inertia. Restart `r` draws from stream `r` of the
/// master seed, so results do not depend on the execution strategy.
pub fn kmeans_cluster(rows: &[&[f32]], opts: KMeansOptions) -> Result<ClusteringResult> {
    if opts.k < 1 {
        return Err(Error::InvalidInput("k must be positive".into()));
    }
    if rows.len() < opts.k {
        return Err(Error::InvalidInput(format!("{} points for k = {}", rows.len(), opts.k)));
    }
    if rows.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidInput("non-finite embedding value".into()));
    }
    let points: Vec<Vec<f64>> = opts.execution.map_slice(rows, |r| normalized(r));
    let runs = opts.execution.map_range(opts.n_init.max(1), |r| lloyd(&points, &opts, r));
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .unwrap();
    Ok(ClusteringResult {
        k: opts.k,
        assignments: best.assignments,
        centroids: best.centroids,
        inertia: best.inertia,
        seed: opts.seed,
        n_init: opts.n_init,
        max_iter: opts.max_iter,
        tol: opts.tol,
        iterations: best.iterations,
        trace: best.trace,
    })
}
