//! Random test objects: gradients in `S⁺`, rotations and symmetric Hessians.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor_core::{svd, Matrix, Tensor};

/// Gaussian `N × n` matrix with `cond(PᵀP) < max_cond` (rejection sampled).
pub fn random_splus(rng: &mut impl Rng, big: usize, n: usize, max_cond: f64) -> Matrix {
    assert!(big >= n && max_cond > 1.0);
    loop {
        let p = Matrix::from_fn(big, n, |_, _| StandardNormal.sample(rng));
        let s = svd(&p).sigma;
        let (hi, lo) = (s[0], s[n - 1]);
        if lo > 0.0 && (hi / lo).powi(2) < max_cond {
            return p;
        }
    }
}

/// Uniformly random rotation in `SO(n)` (QR of a Gaussian matrix with sign fix).
pub fn random_rotation(rng: &mut impl Rng, n: usize) -> Matrix {
    let a = Matrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut v = a.col(j);
        for b in &q {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= d * bi;
            }
        }
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        q.push(v.into_iter().map(|x| x / nv).collect());
    }
    let mut m = Matrix::from_columns(&q);
    if m.determinant() < 0.0 {
        for i in 0..n {
            m[(i, 0)] = -m[(i, 0)];
        }
    }
    m
}

/// Gaussian `N × n × n` tensor symmetric in the last two slots.
pub fn random_hessian(rng: &mut impl Rng, big: usize, n: usize) -> Tensor {
    let mut t = Tensor::zeros(&[big, n, n]);
    for a in 0..big {
        for i in 0..n {
            for j in i..n {
                let v: f64 = StandardNormal.sample(rng);
                t.set(&[a, i, j], v);
                t.set(&[a, j, i], v);
            }
        }
    }
    t
}

/// Uniform point on the unit sphere in `ℝ^d`.
pub fn random_unit_vector(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nv > 1e-12 {
            return v.into_iter().map(|x| x / nv).collect();
        }
    }
}
