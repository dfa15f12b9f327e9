//! The dilation function `K(P) = |P|² / det(PᵀP)^{1/n}` and its derivatives.
//!
//! `P` is an `N × n` gradient with `N ≥ n`. Fourth-order objects such as the
//! Hessian are indexed `(α, i, β, j)` with `α, β` ranging over target
//! components and `i, j` over domain directions.

use crate::error::{QcError, Result};
use crate::tensor_core::{ahlfors, projections_scaled, svd, Matrix, ProjectionPair, Tensor};

/// Relative threshold for membership in `S⁺`: `det(PᵀP) > DET_FLOOR · |P|^{2n}`.
pub const DET_FLOOR: f64 = 1e-14;

/// Metric data shared by `K`, `K_P` and the reduced Hessian.
#[derive(Clone, Debug)]
pub struct Metric {
    pub g: Matrix,
    pub g_inv: Matrix,
    pub det: f64,
    /// `det(g)^{1/n}`.
    pub det_root: f64,
    /// `|P|²`.
    pub norm_sq: f64,
}

/// Computes `g = PᵀP` and checks `P ∈ S⁺`.
pub fn metric(p: &Matrix) -> Result<Metric> {
    let (big, n) = (p.rows(), p.cols());
    if !p.is_finite() {
        return Err(QcError::s_plus("non-finite gradient"));
    }
    if big < n {
        return Err(QcError::s_plus(format!("{big}x{n} gradient cannot have rank {n}")));
    }
    let g = p.gram();
    let norm_sq = g.trace();
    let det = g.determinant();
    let floor = DET_FLOOR * norm_sq.powi(n as i32);
    if !(det > floor) || norm_sq == 0.0 {
        return Err(QcError::s_plus(format!("det(PᵀP) = {det:e} is below {floor:e}")));
    }
    let g_inv = g.inverse().ok_or_else(|| QcError::s_plus("PᵀP is not invertible"))?;
    Ok(Metric { det_root: det.powf(1.0 / n as f64), g, g_inv, det, norm_sq })
}

/// True when `P ∈ S⁺` in the sense of [`metric`].
pub fn in_s_plus(p: &Matrix) -> bool {
    metric(p).is_ok()
}

pub fn dilation(p: &Matrix) -> Result<f64> {
    let m = metric(p)?;
    Ok(m.norm_sq / m.det_root)
}

fn gradient_from_metric(p: &Matrix, m: &Metric) -> Matrix {
    // g⁻¹S(g) = I − (|P|²/n) g⁻¹
    let n = p.cols();
    let mut w = m.g_inv.scale(-m.norm_sq / n as f64);
    for i in 0..n {
        w[(i, i)] += 1.0;
    }
    p.matmul(&w).scale(2.0 / m.det_root)
}

/// `K_P(P) = 2 P g⁻¹ S(g) / det(g)^{1/n}` with `g = PᵀP`.
pub fn dilation_gradient(p: &Matrix) -> Result<Matrix> {
    let m = metric(p)?;
    Ok(gradient_from_metric(p, &m))
}

/// Distance over which `K` changes by `O(1)`: the smallest singular value of `P`.
fn variation_scale(p: &Matrix) -> f64 {
    let s = svd(p).sigma;
    let lo = s.last().copied().unwrap_or(0.0);
    if lo > 0.0 {
        lo
    } else {
        p.norm().max(f64::MIN_POSITIVE)
    }
}

/// Default central-difference step for first derivatives.
pub fn first_difference_step(p: &Matrix) -> f64 {
    f64::EPSILON.cbrt() * variation_scale(p)
}

/// Default step for second differences.
pub fn second_difference_step(p: &Matrix) -> f64 {
    f64::EPSILON.powf(1.0 / 6.0) * variation_scale(p)
}

/// Central finite differences of [`dilation`].
pub fn dilation_gradient_fd(p: &Matrix, h: Option<f64>) -> Result<Matrix> {
    let h = h.unwrap_or_else(|| first_difference_step(p));
    let mut out = Matrix::zeros(p.rows(), p.cols());
    let mut q = p.clone();
    for k in 0..p.data().len() {
        let v = p.data()[k];
        q.data_mut()[k] = v + h;
        let plus = dilation(&q)?;
        q.data_mut()[k] = v - h;
        let minus = dilation(&q)?;
        q.data_mut()[k] = v;
        out.data_mut()[k] = (plus - minus) / (2.0 * h);
    }
    Ok(out)
}

/// The constant tensor `E_{kjlm} = δ_{ml}δ_{jk} + δ_{mj}δ_{kl} − (2/n)δ_{mk}δ_{jl}`.
pub fn e_tensor(n: usize) -> Tensor {
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let two_n = 2.0 / n as f64;
    Tensor::from_fn(&[n, n, n, n], |ix| {
        let (k, j, l, m) = (ix[0], ix[1], ix[2], ix[3]);
        d(m, l) * d(j, k) + d(m, j) * d(k, l) - two_n * d(m, k) * d(j, l)
    })
}

/// The two explicit summands of `K_PP(P)`:
/// `2δ_{αβ}[g⁻¹S(g)]_{ij}/d + 2P_{αm}P_{βl}g⁻¹_{ik}E_{kjlm}/d`, `d = det(g)^{1/n}`.
///
/// The omitted remainder is annihilated by `[K_P(P)]^⊥`, so this agrees with
/// the full Hessian after that projection.
pub fn dilation_hessian_reduced(p: &Matrix) -> Result<Tensor> {
    dilation_hessian_reduced_with(p, &e_tensor(p.cols()))
}

/// [`dilation_hessian_reduced`] with a caller-supplied `E` (used by mutation tests).
pub fn dilation_hessian_reduced_with(p: &Matrix, e: &Tensor) -> Result<Tensor> {
    let n = p.cols();
    if e.dims() != [n, n, n, n] {
        return Err(QcError::Shape(format!("E must be {n}^4, got {:?}", e.dims())));
    }
    let m = metric(p)?;
    reduced_from_metric(p, &m, e)
}

fn reduced_from_metric(p: &Matrix, m: &Metric, e: &Tensor) -> Result<Tensor> {
    let (big, n) = (p.rows(), p.cols());
    let two_d = 2.0 / m.det_root;
    let mut w = m.g_inv.scale(-m.norm_sq / n as f64);
    for i in 0..n {
        w[(i, i)] += 1.0;
    }
    // c[i][j][l][m] = g⁻¹_{ik} E_{kjlm}
    let mut c = vec![0.0; n * n * n * n];
    for i in 0..n {
        for k in 0..n {
            let gik = m.g_inv[(i, k)];
            for j in 0..n {
                for l in 0..n {
                    for mm in 0..n {
                        c[((i * n + j) * n + l) * n + mm] += gik * e.get(&[k, j, l, mm]);
                    }
                }
            }
        }
    }
    let mut out = Tensor::zeros(&[big, n, big, n]);
    for a in 0..big {
        for i in 0..n {
            for b in 0..big {
                for j in 0..n {
                    let mut s = 0.0;
                    for l in 0..n {
                        let pbl = p[(b, l)];
                        for mm in 0..n {
                            s += p[(a, mm)] * pbl * c[((i * n + j) * n + l) * n + mm];
                        }
                    }
                    if a == b {
                        s += w[(i, j)];
                    }
                    out.set(&[a, i, b, j], two_d * s);
                }
            }
        }
    }
    Ok(out)
}

/// Full `K_PP(P)` by central differences of [`dilation`] at steps `h` and `h/2`,
/// Richardson-extrapolated to `O(h⁴)`.
///
/// Evaluating `K` loses about `cond(PᵀP)` in relative accuracy, so the default
/// step is kept large and the truncation error removed by extrapolation.
/// Symmetric in `(αi) ↔ (βj)` by construction. Every stencil point must lie in `S⁺`.
pub fn dilation_hessian_fd(p: &Matrix, h: Option<f64>) -> Result<Tensor> {
    let h = h.unwrap_or_else(|| second_difference_step(p));
    let coarse = central_hessian(p, h)?;
    let fine = central_hessian(p, 0.5 * h)?;
    Ok(&fine.scale(4.0 / 3.0) - &coarse.scale(1.0 / 3.0))
}

fn central_hessian(p: &Matrix, h: f64) -> Result<Tensor> {
    let (big, n) = (p.rows(), p.cols());
    let m = big * n;
    let k0 = dilation(p)?;
    let mut out = Tensor::zeros(&[big, n, big, n]);
    let mut q = p.clone();
    let eval = |q: &mut Matrix, moves: &[(usize, f64)]| -> Result<f64> {
        for &(k, s) in moves {
            q.data_mut()[k] = p.data()[k] + s;
        }
        let v = dilation(q);
        for &(k, _) in moves {
            q.data_mut()[k] = p.data()[k];
        }
        v
    };
    for a in 0..m {
        let plus = eval(&mut q, &[(a, h)])?;
        let minus = eval(&mut q, &[(a, -h)])?;
        out.data_mut()[a * m + a] = (plus - 2.0 * k0 + minus) / (h * h);
        for b in a + 1..m {
            let pp = eval(&mut q, &[(a, h), (b, h)])?;
            let pm = eval(&mut q, &[(a, h), (b, -h)])?;
            let mp = eval(&mut q, &[(a, -h), (b, h)])?;
            let mm = eval(&mut q, &[(a, -h), (b, -h)])?;
            let v = (pp - pm - mp + mm) / (4.0 * h * h);
            out.data_mut()[a * m + b] = v;
            out.data_mut()[b * m + a] = v;
        }
    }
    Ok(out)
}

/// Relative residual of `K_P(P) = −(2K/n)(P^{−T} − nP/|P|²)` for square `P`.
pub fn identity_n_equals_n(p: &Matrix) -> Result<f64> {
    if !p.is_square() {
        return Err(QcError::Shape(format!("identity needs a square gradient, got {}x{}", p.rows(), p.cols())));
    }
    let n = p.cols() as f64;
    let lhs = dilation_gradient(p)?;
    let k = dilation(p)?;
    let inv_t = p.inverse().ok_or_else(|| QcError::s_plus("singular gradient"))?.transpose();
    let rhs = (&inv_t - &p.scale(n / p.norm_sq())).scale(-2.0 * k / n);
    Ok((&lhs - &rhs).norm() / lhs.norm().max(1.0))
}

/// `K`, `K_P` and the reduced `K_PP` at one gradient.
#[derive(Clone, Debug)]
pub struct DilationJet {
    pub k: f64,
    pub k_p: Matrix,
    pub k_pp_reduced: Tensor,
    /// `|P|`, kept for the scale of rank decisions.
    pub p_norm: f64,
}

impl DilationJet {
    pub fn new(p: &Matrix) -> Result<Self> {
        let m = metric(p)?;
        Ok(DilationJet {
            k: m.norm_sq / m.det_root,
            k_p: gradient_from_metric(p, &m),
            k_pp_reduced: reduced_from_metric(p, &m, &e_tensor(p.cols()))?,
            p_norm: m.norm_sq.sqrt(),
        })
    }

    /// Natural magnitude of `K_P`; the floor for its ε-rank.
    pub fn k_p_scale(&self) -> f64 {
        self.k / self.p_norm
    }

    /// `[K_P]^⊤` and `[K_P]^⊥`.
    pub fn projections(&self, tau: f64) -> Result<ProjectionPair> {
        projections_scaled(&self.k_p, tau, self.k_p_scale())
    }
}

/// Traceless part of the metric, `S(PᵀP)`.
pub fn metric_deviation(p: &Matrix) -> Result<Matrix> {
    ahlfors(&p.gram())
}
