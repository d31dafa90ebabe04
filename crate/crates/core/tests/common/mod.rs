//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

/// Componentwise soft thresholding.
pub fn soft_threshold(y: &[f64], lambda: f64) -> Vec<f64> {
    y.iter()
        .map(|&v| v.signum() * (v.abs() - lambda).max(0.0))
        .collect()
}

/// Optimal value of `min ||z||_1 s.t. ||A'(y - Az)||_inf <= lambda` by
/// enumerating every vertex of the lifted polyhedron in `(z, u)` with
/// `-u <= z <= u`.
pub fn dantzig_by_vertices(a: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> f64 {
    let m = a.ncols();
    let g = a.transpose() * a;
    let c = a.transpose() * y;
    let nv = 2 * m;
    // rows of K x <= h with x = (z, u)
    let mut k = DMatrix::zeros(4 * m, nv);
    let mut h = DVector::zeros(4 * m);
    for i in 0..m {
        k[(i, i)] = 1.0;
        k[(i, m + i)] = -1.0;
        k[(m + i, i)] = -1.0;
        k[(m + i, m + i)] = -1.0;
        for j in 0..m {
            k[(2 * m + i, j)] = g[(i, j)];
            k[(3 * m + i, j)] = -g[(i, j)];
        }
        h[2 * m + i] = c[i] + lambda;
        h[3 * m + i] = lambda - c[i];
    }
    let mut best = f64::INFINITY;
    for rows in (0..4 * m).combinations(nv) {
        let ks = k.select_rows(&rows);
        let hs = DVector::from_iterator(nv, rows.iter().map(|&r| h[r]));
        let lu = ks.clone().lu();
        let Some(x) = lu.solve(&hs) else { continue };
        if (&ks * &x - &hs).amax() > 1e-9 {
            continue;
        }
        let slack = &h - &k * &x;
        if slack.min() < -1e-9 {
            continue;
        }
        let obj: f64 = x.rows(m, m).sum();
        best = best.min(obj);
    }
    best
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration from
/// several random starts, returned as the best Rayleigh quotient.
pub fn rayleigh_max(g: &DMatrix<f64>, starts: usize, iters: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let k = g.nrows();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..starts {
        let mut v = DVector::from_fn(k, |_, _| rng.random::<f64>() - 0.5);
        v /= v.norm();
        for _ in 0..iters {
            let w = g * &v;
            let nw = w.norm();
            if nw == 0.0 {
                break;
            }
            v = w / nw;
        }
        best = best.max(v.dot(&(g * &v)));
    }
    best
}

/// `max(1 - lambda_min, lambda_max - 1)` of a Gram block, from Rayleigh
/// quotients only. The smallest eigenvalue comes from the shifted matrix
/// `k I - G`, whose spectrum is nonnegative for unit-diagonal PSD blocks.
pub fn rayleigh_delta(g: &DMatrix<f64>, seed: u64) -> f64 {
    let k = g.nrows();
    let hi = rayleigh_max(g, 4, 4000, seed);
    let shifted = DMatrix::identity(k, k) * k as f64 - g;
    let lo = k as f64 - rayleigh_max(&shifted, 4, 4000, seed ^ 0x9e37);
    (1.0 - lo).max(hi - 1.0)
}

/// Largest singular value of a block via the Rayleigh quotient of `B'B`.
pub fn bilinear_norm(b: &DMatrix<f64>, seed: u64) -> f64 {
    rayleigh_max(&(b.transpose() * b), 4, 4000, seed).max(0.0).sqrt()
}

/// Oracle `delta_s` over every subset of size `s`.
pub fn oracle_delta(gram: &DMatrix<f64>, s: usize) -> f64 {
    let m = gram.ncols();
    (0..m)
        .combinations(s)
        .enumerate()
        .map(|(k, t)| rayleigh_delta(&gram.select_rows(&t).select_columns(&t), k as u64))
        .fold(0.0, f64::max)
}

/// Oracle `theta_{s, s'}` over every disjoint pair of subsets.
pub fn oracle_theta(gram: &DMatrix<f64>, s: usize, sp: usize) -> f64 {
    let m = gram.ncols();
    let mut best: f64 = 0.0;
    let mut k = 0u64;
    for t1 in (0..m).combinations(s) {
        let rest: Vec<usize> = (0..m).filter(|i| !t1.contains(i)).collect();
        for t2 in rest.into_iter().combinations(sp) {
            k += 1;
            best = best.max(bilinear_norm(&gram.select_rows(&t1).select_columns(&t2), k));
        }
    }
    best
}
