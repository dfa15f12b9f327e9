//! Pointwise residuals of the Euler–Lagrange systems for the dilation.
//!
//! All evaluators act on a second-order jet `(u, Du, D²u)` and never look at
//! neighbouring points; jets may come from closed forms or from grid stencils.
//! For a jet, `K_P(Du):D²u` denotes the vector `Σ_{α,i} K_{P_{αi}} D²_{ij}u_α`,
//! which is the chain-rule gradient `D(K(Du))`.

use rayon::prelude::*;
use serde::Serialize;

use crate::dilation_calculus::{dilation, dilation_gradient, dilation_hessian_fd, DilationJet};
use crate::error::{QcError, Result};
use crate::grid_domain::{MapField, NodeKind, MIN_POINTS_PER_AXIS};
use crate::tensor_core::{ahlfors, projections, projections_scaled, Matrix, Tensor};

/// A second-order jet of a map at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet2 {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// `N × n`.
    pub du: Matrix,
    /// `N × n × n`, symmetric in the last two slots.
    pub d2u: Tensor,
}

impl Jet2 {
    pub fn new(x: Vec<f64>, u: Vec<f64>, du: Matrix, d2u: Tensor) -> Result<Self> {
        let (big, n) = (du.rows(), du.cols());
        if x.len() != n || u.len() != big || d2u.dims() != [big, n, n] {
            return Err(QcError::Shape(format!(
                "jet with x∈ℝ^{}, u∈ℝ^{}, Du {big}x{n}, D²u {:?}",
                x.len(),
                u.len(),
                d2u.dims()
            )));
        }
        let scale = d2u.norm().max(f64::MIN_POSITIVE);
        let mut asym: f64 = 0.0;
        for a in 0..big {
            for i in 0..n {
                for j in 0..i {
                    asym = asym.max((d2u.get(&[a, i, j]) - d2u.get(&[a, j, i])).abs());
                }
            }
        }
        if asym > 1e-10 * scale {
            return Err(QcError::Precondition(format!("Hessian not symmetric (defect {asym:e})")));
        }
        Ok(Jet2 { x, u, du, d2u })
    }

    pub fn n(&self) -> usize {
        self.du.cols()
    }

    pub fn big_n(&self) -> usize {
        self.du.rows()
    }

    /// Laplacian `Δu_α = Σ_i D²_{ii}u_α`.
    pub fn laplacian(&self) -> Vec<f64> {
        (0..self.big_n()).map(|a| (0..self.n()).map(|i| self.d2u.get(&[a, i, i])).sum()).collect()
    }
}

/// `Σ_{α,i} M_{αi} D²_{ij}u_α`, an `n`-vector.
pub fn contract_with_hessian(m: &Matrix, d2u: &Tensor) -> Vec<f64> {
    let (big, n) = (m.rows(), m.cols());
    let mut v = vec![0.0; n];
    for a in 0..big {
        for i in 0..n {
            let c = m[(a, i)];
            if c == 0.0 {
                continue;
            }
            for (j, vj) in v.iter_mut().enumerate() {
                *vj += c * d2u.get(&[a, i, j]);
            }
        }
    }
    v
}

/// `(A:D²u)_α = Σ_{i,β,j} A_{αiβj} D²_{ij}u_β` for a 4-tensor `A` of dims `(N, n, N, n)`.
pub fn fourth_order_on_hessian(a: &Tensor, d2u: &Tensor) -> Vec<f64> {
    let dims = a.dims();
    let (big, n) = (dims[0], dims[1]);
    let mut out = vec![0.0; big];
    for (al, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for i in 0..n {
            for b in 0..big {
                for j in 0..n {
                    s += a.get(&[al, i, b, j]) * d2u.get(&[b, i, j]);
                }
            }
        }
        *o = s;
    }
    out
}

/// `D(K(Du))` from the jet by the chain rule.
pub fn dilation_derivative(j: &Jet2) -> Result<Vec<f64>> {
    Ok(contract_with_hessian(&dilation_gradient(&j.du)?, &j.d2u))
}

/// `K_P(Du) [K_P(Du):D²u]`.
pub fn tangential_residual(j: &Jet2) -> Result<Vec<f64>> {
    let kp = dilation_gradient(&j.du)?;
    Ok(kp.mat_vec(&contract_with_hessian(&kp, &j.d2u)))
}

/// `[K_P(Du)]^⊥ (K_PP(Du):D²u)` with the reduced Hessian.
pub fn normal_residual(j: &Jet2, tau: f64) -> Result<Vec<f64>> {
    let dj = DilationJet::new(&j.du)?;
    let proj = dj.projections(tau)?;
    Ok(proj.normal(&fourth_order_on_hessian(&dj.k_pp_reduced, &j.d2u)))
}

/// Which form of the ∞-system a bundle carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum QNormalization {
    /// `tangential + K · normal`.
    WithDilation,
    /// `tangential + normal`.
    Renormalized,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualBundle {
    pub tangential: Vec<f64>,
    pub normal: Vec<f64>,
    pub q_infinity: Vec<f64>,
    pub dilation_value: f64,
    pub normalization: QNormalization,
    /// ε-rank of `K_P(Du)`.
    pub k_p_rank: usize,
}

pub fn q_infinity_residual(j: &Jet2, tau: f64) -> Result<ResidualBundle> {
    q_infinity_residual_with(j, tau, QNormalization::WithDilation)
}

pub fn q_infinity_residual_with(j: &Jet2, tau: f64, normalization: QNormalization) -> Result<ResidualBundle> {
    let dj = DilationJet::new(&j.du)?;
    let proj = dj.projections(tau)?;
    let grad_k = contract_with_hessian(&dj.k_p, &j.d2u);
    let tangential = dj.k_p.mat_vec(&grad_k);
    let normal = proj.normal(&fourth_order_on_hessian(&dj.k_pp_reduced, &j.d2u));
    let w = match normalization {
        QNormalization::WithDilation => dj.k,
        QNormalization::Renormalized => 1.0,
    };
    let q_infinity = tangential.iter().zip(&normal).map(|(t, n)| t + w * n).collect();
    Ok(ResidualBundle { tangential, normal, q_infinity, dilation_value: dj.k, normalization, k_p_rank: proj.eps_rank })
}

/// The expanded `p`-system, stored as `exp(log_scale) · rescaled` so large `p` cannot overflow.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QpValue {
    /// `ln((p − 1) K^{p−2})`.
    pub log_scale: f64,
    /// `(K_P⊗K_P):D²u + K/(p − 1) · K_PP:D²u`.
    pub rescaled: Vec<f64>,
}

impl QpValue {
    /// The unscaled residual; entries may be infinite for large `p`.
    pub fn value(&self) -> Vec<f64> {
        let s = self.log_scale.exp();
        self.rescaled.iter().map(|v| v * s).collect()
    }
}

/// `(p−1)K^{p−2}(K_P⊗K_P):D²u + K^{p−1} K_PP:D²u` with the full Hessian taken by finite differences.
pub fn q_p_expanded(j: &Jet2, p: f64) -> Result<QpValue> {
    if !(p >= 2.0) {
        return Err(QcError::Precondition(format!("exponent p must be ≥ 2, got {p}")));
    }
    let k = dilation(&j.du)?;
    let kp = dilation_gradient(&j.du)?;
    let kpp = dilation_hessian_fd(&j.du, None)?;
    let tangential = kp.mat_vec(&contract_with_hessian(&kp, &j.d2u));
    let second = fourth_order_on_hessian(&kpp, &j.d2u);
    let w = k / (p - 1.0);
    Ok(QpValue {
        log_scale: (p - 1.0).ln() + (p - 2.0) * k.ln(),
        rescaled: tangential.iter().zip(&second).map(|(t, s)| t + w * s).collect(),
    })
}

/// Central-difference divergence of `K(Du)^{p−1} K_P(Du)` on a sampled field.
///
/// `Du` is the nodal finite-difference gradient, so a node needs interior
/// neighbours along every axis; other nodes get `None`.
pub fn q_p_divergence_discrete(field: &MapField, p: f64) -> Result<Vec<Option<Vec<f64>>>> {
    let g = field.grid();
    if g.counts().iter().any(|&c| c < MIN_POINTS_PER_AXIS) {
        return Err(QcError::Config(format!("grid needs ≥ {MIN_POINTS_PER_AXIS} points per axis")));
    }
    if !(p >= 2.0) {
        return Err(QcError::Precondition(format!("exponent p must be ≥ 2, got {p}")));
    }
    if !field.is_immersion() {
        return Err(QcError::Precondition("field is not an immersion".into()));
    }
    let flux = |v: usize| -> Result<Matrix> {
        let du = field.node_gradient(v)?;
        let k = dilation(&du)?;
        Ok(dilation_gradient(&du)?.scale(k.powf(p - 1.0)))
    };
    let (n, big) = (g.n(), field.big_n());
    (0..g.len())
        .into_par_iter()
        .map(|v| {
            let nbrs: Option<Vec<(usize, usize)>> = (0..n)
                .map(|i| Some((g.neighbor(v, i, 1)?, g.neighbor(v, i, -1)?)))
                .collect();
            let Some(nbrs) = nbrs else { return Ok(None) };
            if field.kind(v) != NodeKind::Interior
                || nbrs.iter().any(|&(a, b)| field.kind(a) != NodeKind::Interior || field.kind(b) != NodeKind::Interior)
            {
                return Ok(None);
            }
            let mut out = vec![0.0; big];
            for (i, &(up, dn)) in nbrs.iter().enumerate() {
                let (fu, fd) = (flux(up)?, flux(dn)?);
                let h = g.spacing(i);
                for (a, o) in out.iter_mut().enumerate() {
                    *o += (fu[(a, i)] - fd[(a, i)]) / (2.0 * h);
                }
            }
            Ok(Some(out))
        })
        .collect()
}

/// `(Du⊗Du + |Du|²[Du]^⊥⊗I):D²u`.
pub fn infinity_laplacian_residual(j: &Jet2, tau: f64) -> Result<Vec<f64>> {
    let du = &j.du;
    let (big, n) = (j.big_n(), j.n());
    let proj = projections(du, tau)?;
    // Σ_{β,j} Du_{βj} D²_{ij}u_β, then apply Du.
    let mut w = vec![0.0; n];
    for b in 0..big {
        for i in 0..n {
            for jj in 0..n {
                w[i] += du[(b, jj)] * j.d2u.get(&[b, i, jj]);
            }
        }
    }
    let first = du.mat_vec(&w);
    let lap = proj.normal(&j.laplacian());
    let s = du.norm_sq();
    Ok(first.iter().zip(&lap).map(|(a, b)| a + s * b).collect())
}

/// A Hamiltonian `H(P)` for the general ∞-system.
pub trait Hamiltonian: Sync {
    fn value(&self, p: &Matrix) -> Result<f64>;
    fn gradient(&self, p: &Matrix) -> Result<Matrix>;

    /// `H_PP` by central differences of [`Hamiltonian::gradient`]; symmetrised.
    fn hessian(&self, p: &Matrix) -> Result<Tensor> {
        let (big, n) = (p.rows(), p.cols());
        let m = big * n;
        let h = f64::EPSILON.cbrt() * p.norm().max(1.0);
        let mut out = Tensor::zeros(&[big, n, big, n]);
        let mut q = p.clone();
        for b in 0..m {
            q.data_mut()[b] = p.data()[b] + h;
            let plus = self.gradient(&q)?;
            q.data_mut()[b] = p.data()[b] - h;
            let minus = self.gradient(&q)?;
            q.data_mut()[b] = p.data()[b];
            for a in 0..m {
                out.data_mut()[a * m + b] = (plus.data()[a] - minus.data()[a]) / (2.0 * h);
            }
        }
        for a in 0..m {
            for b in a + 1..m {
                let v = 0.5 * (out.data()[a * m + b] + out.data()[b * m + a]);
                out.data_mut()[a * m + b] = v;
                out.data_mut()[b * m + a] = v;
            }
        }
        Ok(out)
    }

    /// Magnitude below which `H_P` counts as zero when taking its ε-rank.
    fn gradient_scale(&self, p: &Matrix) -> Result<f64> {
        Ok(self.value(p)?.abs() / p.norm().max(f64::MIN_POSITIVE))
    }
}

/// `H = K`.
#[derive(Clone, Copy, Debug, Default)]
pub struct DilationHamiltonian;

impl Hamiltonian for DilationHamiltonian {
    fn value(&self, p: &Matrix) -> Result<f64> {
        dilation(p)
    }
    fn gradient(&self, p: &Matrix) -> Result<Matrix> {
        dilation_gradient(p)
    }
}

/// `H = |P|²`.
#[derive(Clone, Copy, Debug, Default)]
pub struct DirichletHamiltonian;

impl Hamiltonian for DirichletHamiltonian {
    fn value(&self, p: &Matrix) -> Result<f64> {
        Ok(p.norm_sq())
    }
    fn gradient(&self, p: &Matrix) -> Result<Matrix> {
        Ok(p.scale(2.0))
    }
}

/// `(H_P⊗H_P + H [H_P]^⊥ H_PP)(Du):D²u`.
pub fn a_infinity_residual(j: &Jet2, ham: &dyn Hamiltonian, tau: f64) -> Result<Vec<f64>> {
    let h = ham.value(&j.du)?;
    let hp = ham.gradient(&j.du)?;
    let hpp = ham.hessian(&j.du)?;
    let proj = projections_scaled(&hp, tau, ham.gradient_scale(&j.du)?)?;
    let first = hp.mat_vec(&contract_with_hessian(&hp, &j.d2u));
    let second = proj.normal(&fourth_order_on_hessian(&hpp, &j.d2u));
    Ok(first.iter().zip(&second).map(|(a, b)| a + h * b).collect())
}

/// `S(g) D(K(Du))` with `g = DuᵀDu`.
pub fn geometric_tangential(j: &Jet2) -> Result<Vec<f64>> {
    let s = ahlfors(&j.du.gram())?;
    Ok(s.mat_vec(&dilation_derivative(j)?))
}

/// A section `ν` of `[K_P(Du)]^⊥` near a point, with its derivative `Dν` (`N × n`).
#[derive(Clone, Debug)]
pub struct NormalSection {
    pub nu: Vec<f64>,
    pub dnu: Matrix,
}

/// `Dν : K_P(Du)`.
pub fn second_fundamental_contraction(section: &NormalSection, j: &Jet2) -> Result<f64> {
    let kp = dilation_gradient(&j.du)?;
    if section.nu.len() != kp.rows() || (section.dnu.rows(), section.dnu.cols()) != (kp.rows(), kp.cols()) {
        return Err(QcError::Shape("normal section does not match the jet".into()));
    }
    let defect = crate::tensor_core::norm(&kp.tr_mat_vec(&section.nu));
    if defect > 1e-8 * kp.norm().max(1.0) {
        return Err(QcError::Precondition(format!("ν is not normal to K_P(Du): |νᵀK_P| = {defect:e}")));
    }
    Ok(section.dnu.frobenius_dot(&kp))
}

/// `−νᵀ(K_PP(Du):D²u)`, the value [`second_fundamental_contraction`] takes on exact sections.
pub fn second_fundamental_from_hessian(nu: &[f64], j: &Jet2) -> Result<f64> {
    let red = DilationJet::new(&j.du)?.k_pp_reduced;
    Ok(-crate::tensor_core::dot(nu, &fourth_order_on_hessian(&red, &j.d2u)))
}
