use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-axis principal component projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub points: Vec<[f64; 2]>,
    /// Variance captured along each axis.
    pub variance: [f64; 2],
    /// Set when the input has no variance at all.
    pub degenerate: bool,
}

fn orthonormalize(q: &mut [Vec<f64>]) {
    for i in 0..q.len() {
        for j in 0..i {
            let d: f64 = q[i].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
            let (head, tail) = q.split_at_mut(i);
            for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                *x -= d * y;
            }
        }
        let n: f64 = q[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            q[i].iter_mut().for_each(|v| *v /= n);
        }
    }
}

fn mat_vec(c: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    c.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// Top two principal axes by orthogonal iteration on the covariance matrix,
/// followed by a 2x2 Rayleigh-Ritz rotation. Each axis is signed so that its
/// largest-magnitude loading is positive.
pub fn project_fallback(rows: &[&[f32]]) -> Result<Projection> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::InvalidInput("projection of zero rows".into()));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::ShapeMismatch("ragged embedding rows".into()));
    }
    let mut centre = vec![0.0; d];
    for r in rows {
        for (c, &v) in centre.iter_mut().zip(r.iter()) {
            *c += v as f64;
        }
    }
    centre.iter_mut().for_each(|c| *c /= n as f64);
    let centred: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&centre).map(|(&v, c)| v as f64 - c).collect())
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for x in &centred {
        for i in 0..d {
            if x[i] == 0.0 {
                continue;
            }
            for j in i..d {
                cov[i][j] += x[i] * x[j];
            }
        }
    }
    #[allow(clippy::needless_range_loop)]
    for i in 0..d {
        for j in i..d {
            let v = cov[i][j] / n as f64;
            cov[i][j] = v;
            cov[j][i] = v;
        }
    }
    let trace: f64 = (0..d).map(|i| cov[i][i]).sum();
    if d == 0 || trace <= 1e-24 {
        return Ok(Projection {
            points: vec![[0.0, 0.0]; n],
            variance: [0.0, 0.0],
            degenerate: true,
        });
    }

    let m = d.min(2);
    // start from the covariance columns with the largest norms
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        let na: f64 = cov[a].iter().map(|v| v * v).sum();
        let nb: f64 = cov[b].iter().map(|v| v * v).sum();
        nb.total_cmp(&na).then(a.cmp(&b))
    });
    let mut q: Vec<Vec<f64>> = order[..m].iter().map(|&i| cov[i].clone()).collect();
    for (i, v) in q.iter_mut().enumerate() {
        // a tiny deterministic perturbation keeps the start off degenerate subspaces
        for (j, x) in v.iter_mut().enumerate() {
            *x += 1e-3 * trace * (((i + 1) * (j + 3)) % 7) as f64 / 7.0;
        }
    }
    orthonormalize(&mut q);
    for _ in 0..2000 {
        let mut z: Vec<Vec<f64>> = q.iter().map(|v| mat_vec(&cov, v)).collect();
        orthonormalize(&mut z);
        let delta: f64 = z
            .iter()
            .zip(&q)
            .map(|(a, b)| {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                1.0 - dot.abs()
            })
            .fold(0.0, f64::max);
        q = z;
        if delta < 1e-15 {
            break;
        }
    }

    // Rayleigh-Ritz in span(q)
    let cq: Vec<Vec<f64>> = q.iter().map(|v| mat_vec(&cov, v)).collect();
    let t = |i: usize, j: usize| -> f64 { q[i].iter().zip(&cq[j]).map(|(a, b)| a * b).sum() };
    let mut axes: Vec<(f64, Vec<f64>)> = if m == 1 {
        vec![(t(0, 0), q[0].clone())]
    } else {
        let (a, b, c) = (t(0, 0), t(0, 1), t(1, 1));
        let mid = 0.5 * (a + c);
        let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        let theta = 0.5 * (2.0 * b).atan2(a - c);
        let (cs, sn) = (theta.cos(), theta.sin());
        let u: Vec<f64> = q[0].iter().zip(&q[1]).map(|(x, y)| cs * x + sn * y).collect();
        let w: Vec<f64> = q[0].iter().zip(&q[1]).map(|(x, y)| -sn * x + cs * y).collect();
        vec![(mid + rad, u), (mid - rad, w)]
    };
    let top = axes[0].0;
    for (lambda, v) in axes.iter_mut() {
        if *lambda <= 1e-12 * top {
            *lambda = 0.0;
            v.iter_mut().for_each(|x| *x = 0.0);
            continue;
        }
        let lead = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(_, x)| *x)
            .unwrap_or(1.0);
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let axis = |k: usize, x: &[f64]| -> f64 {
        axes.get(k)
            .map(|(_, v)| x.iter().zip(v).map(|(a, b)| a * b).sum())
            .unwrap_or(0.0)
    };
    Ok(Projection {
        points: centred.iter().map(|x| [axis(0, x), axis(1, x)]).collect(),
        variance: [axes[0].0, axes.get(1).map(|a| a.0).unwrap_or(0.0)],
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, SymmetricEigen};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn refs(rows: &[Vec<f32>]) -> Vec<&[f32]> {
        rows.iter().map(|r| r.as_slice()).collect()
    }

    #[test]
    fn matches_eigen_decomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scales = [4.0, 2.5, 1.0, 0.5, 0.2];
        let rows: Vec<Vec<f32>> = (0..200)
            .map(|_| {
                scales
                    .iter()
                    .map(|s| (s * Distribution::<f64>::sample(&StandardNormal, &mut rng)) as f32)
                    .collect()
            })
            .collect();
        let p = project_fallback(&refs(&rows)).unwrap();

        let n = rows.len();
        let d = 5;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j] as f64).sum::<f64>() / n as f64).collect();
        let x = DMatrix::from_fn(n, d, |i, j| rows[i][j] as f64 - mean[j]);
        let cov = x.transpose() * &x / n as f64;
        let eig = SymmetricEigen::new(cov);
        let mut idx: Vec<usize> = (0..d).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for (k, &e) in idx[..2].iter().enumerate() {
            assert!((p.variance[k] - eig.eigenvalues[e]).abs() < 1e-8 * eig.eigenvalues[e]);
            let mut v: Vec<f64> = eig.eigenvectors.column(e).iter().copied().collect();
            let lead = *v.iter().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap();
            if lead < 0.0 {
                v.iter_mut().for_each(|t| *t = -*t);
            }
            for i in 0..n {
                let want: f64 = (0..d).map(|j| x[(i, j)] * v[j]).sum();
                assert!((p.points[i][k] - want).abs() < 1e-6, "{k} {i}");
            }
        }
    }

    #[test]
    fn two_dimensional_input_preserves_distances() {
        let rows: Vec<Vec<f32>> = vec![vec![0.0, 0.0], vec![3.0, 1.0], vec![-1.0, 2.0], vec![2.0, -2.0]];
        let p = project_fallback(&refs(&rows)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let a = ((rows[i][0] - rows[j][0]).powi(2) + (rows[i][1] - rows[j][1]).powi(2)) as f64;
                let b = (p.points[i][0] - p.points[j][0]).powi(2) + (p.points[i][1] - p.points[j][1]).powi(2);
                assert!((a - b).abs() < 1e-6);
            }
        }
        assert!(p.variance[0] >= p.variance[1]);
    }

    #[test]
    fn constant_rows_are_degenerate() {
        let rows = vec![vec![1.0f32, 2.0, 3.0]; 5];
        let p = project_fallback(&refs(&rows)).unwrap();
        assert!(p.degenerate);
        assert!(p.points.iter().all(|q| *q == [0.0, 0.0]));
    }

    #[test]
    fn collinear_rows_have_flat_second_axis() {
        let rows: Vec<Vec<f32>> = (0..6).map(|i| vec![i as f32, 2.0 * i as f32, 0.0]).collect();
        let p = project_fallback(&refs(&rows)).unwrap();
        assert!(!p.degenerate);
        assert!(p.points.iter().all(|q| q[1].abs() < 1e-9));
        assert!(p.points[5][0] > p.points[0][0]);
    }
}
