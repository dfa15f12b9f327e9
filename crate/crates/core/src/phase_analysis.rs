//! Phases, interfaces and constant-dilation sets of an immersion.
//!
//! The phase label of a point is the number of eigenvalues of `S(DuᵀDu)` whose
//! magnitude exceeds `τ·|DuᵀDu|`. A traceless spectrum cannot have exactly one
//! such eigenvalue unless every eigenvalue sits inside the uncertainty band
//! `[τ, 10τ]`, so that case is reported as label 0 with the uncertain flag set.

use rayon::prelude::*;
use serde::Serialize;

use crate::dilation_calculus::{dilation, metric, DilationJet};
use crate::error::{QcError, Result};
use crate::grid_domain::{connected_components, Grid, JetSource};
use crate::pde_residuals::{fourth_order_on_hessian, normal_residual, Jet2};
use crate::analytic_maps::PointJet;
use crate::tensor_core::{ahlfors, symmetric_spectrum, Matrix, Tensor};

/// Eigenvalue magnitudes within `[τ, UNCERTAIN_FACTOR·τ]·|g|` mark a point as uncertain.
pub const UNCERTAIN_FACTOR: f64 = 10.0;

/// Phase classification of one gradient.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointPhase {
    pub label: usize,
    /// Eigenvalues of `S(g)`, ascending.
    pub spectrum: Vec<f64>,
    /// Eigenvalues of `g = DuᵀDu`, ascending.
    pub metric_eigenvalues: Vec<f64>,
    pub uncertain: bool,
}

pub fn classify_gradient(du: &Matrix, tau: f64) -> Result<PointPhase> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(QcError::Precondition(format!("rank tolerance must lie in (0, 1), got {tau}")));
    }
    let m = metric(du)?;
    let g_norm = m.g.norm();
    let spectrum = symmetric_spectrum(&ahlfors(&m.g)?)?.values;
    let metric_eigenvalues = symmetric_spectrum(&m.g)?.values;
    let ratios: Vec<f64> = spectrum.iter().map(|mu| mu.abs() / g_norm).collect();
    let mut label = ratios.iter().filter(|&&r| r > tau).count();
    let mut uncertain = ratios.iter().any(|&r| r >= tau && r <= UNCERTAIN_FACTOR * tau);
    if label == 1 {
        label = 0;
        uncertain = true;
    }
    Ok(PointPhase { label, spectrum, metric_eigenvalues, uncertain })
}

pub fn classify_point(j: &Jet2, tau: f64) -> Result<PointPhase> {
    classify_gradient(&j.du, tau)
}

/// Phase labels over a grid.
#[derive(Clone, Debug, Serialize)]
pub struct PhaseMap {
    pub grid: Grid,
    pub tau: f64,
    /// `"exact"` or `"finite-difference"` jets.
    pub provenance: &'static str,
    /// Raw label per node (the augmented phase `Ω_k*` it belongs to); `None` where unclassified.
    pub labels: Vec<Option<usize>>,
    /// Label of nodes whose whole `3ⁿ` stencil carries the same label (discrete `Ω_k`).
    pub phases: Vec<Option<usize>>,
    pub spectra: Vec<Option<Vec<f64>>>,
    pub uncertain: Vec<bool>,
    /// Nodes whose `3ⁿ` stencil sees more than one label.
    pub interface: Vec<bool>,
    /// Evaluable nodes whose gradient left `S⁺`, with the reason.
    pub violations: Vec<(usize, String)>,
}

impl PhaseMap {
    /// Number of nodes per label `0..=n`.
    pub fn label_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.grid.n() + 1];
        for k in self.labels.iter().flatten() {
            c[*k] += 1;
        }
        c
    }

    pub fn classified(&self) -> usize {
        self.labels.iter().flatten().count()
    }

    /// Membership mask of the augmented phase `Ω_k*`.
    pub fn augmented(&self, k: usize) -> Vec<bool> {
        self.labels.iter().map(|l| *l == Some(k)).collect()
    }

    /// Rows `x,y[,z],label,mu1..mun,interface,uncertain` for classified nodes.
    pub fn to_csv(&self) -> String {
        let n = self.grid.n();
        let axes = ["x", "y", "z"];
        let mut header: Vec<String> = axes[..n].iter().map(|s| s.to_string()).collect();
        header.push("label".into());
        header.extend((1..=n).map(|i| format!("mu{i}")));
        header.push("interface".into());
        header.push("uncertain".into());
        let mut out = header.join(",");
        out.push('\n');
        for v in 0..self.grid.len() {
            let (Some(k), Some(mu)) = (self.labels[v], &self.spectra[v]) else { continue };
            let mut row: Vec<String> = self.grid.point(v).iter().map(|x| format!("{x:?}")).collect();
            row.push(k.to_string());
            row.extend(mu.iter().map(|m| format!("{m:?}")));
            row.push((self.interface[v] as u8).to_string());
            row.push((self.uncertain[v] as u8).to_string());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Binary PGM (P5) of the labels; `z_index` selects the slice when `n = 3`.
    ///
    /// Label `k` maps to gray `round(255(k+1)/(n+1))`; unclassified nodes are black.
    /// The first image row is the largest `y`.
    pub fn to_pgm(&self, z_index: Option<usize>) -> Result<Vec<u8>> {
        let n = self.grid.n();
        let counts = self.grid.counts();
        let z = match (n, z_index) {
            (2, None) => None,
            (3, Some(z)) if z < counts[2] => Some(z),
            (3, Some(z)) => return Err(QcError::Config(format!("slice {z} outside 0..{}", counts[2]))),
            (3, None) => return Err(QcError::Config("a 3-d phase map needs a z slice".into())),
            _ => return Err(QcError::Config("slices apply to 3-d grids only".into())),
        };
        let (w, h) = (counts[0], counts[1]);
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        for row in (0..h).rev() {
            for col in 0..w {
                let mut c = vec![col, row];
                c.extend(z);
                let gray = match self.labels[self.grid.index(&c)] {
                    Some(k) => (255.0 * (k + 1) as f64 / (n + 1) as f64).round() as u8,
                    None => 0,
                };
                out.push(gray);
            }
        }
        Ok(out)
    }
}

/// Classifies every evaluable node of a jet source.
pub fn phase_map(src: &dyn JetSource, tau: f64) -> Result<PhaseMap> {
    let grid = src.grid().clone();
    let results: Vec<Option<std::result::Result<PointPhase, String>>> = (0..grid.len())
        .into_par_iter()
        .map(|v| {
            if !src.evaluable(v) {
                return Ok(None);
            }
            match src.node_gradient(v).and_then(|du| classify_gradient(&du, tau)) {
                Ok(p) => Ok(Some(Ok(p))),
                Err(e) if e.is_domain_violation() => Ok(Some(Err(e.to_string()))),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let len = grid.len();
    let mut labels = vec![None; len];
    let mut spectra = vec![None; len];
    let mut uncertain = vec![false; len];
    let mut violations = Vec::new();
    for (v, r) in results.into_iter().enumerate() {
        match r {
            Some(Ok(p)) => {
                labels[v] = Some(p.label);
                uncertain[v] = p.uncertain;
                spectra[v] = Some(p.spectrum);
            }
            Some(Err(msg)) => violations.push((v, msg)),
            None => {}
        }
    }

    let offs = grid.stencil_offsets();
    let mut phases = vec![None; len];
    let mut interface = vec![false; len];
    for v in 0..len {
        let Some(k) = labels[v] else { continue };
        let mut whole = true;
        for o in &offs {
            match grid.offset(v, o).and_then(|w| labels[w]) {
                Some(l) if l != k => {
                    interface[v] = true;
                    whole = false;
                }
                Some(_) => {}
                None => whole = false,
            }
        }
        if whole {
            phases[v] = Some(k);
        }
    }
    Ok(PhaseMap { grid, tau, provenance: src.provenance(), labels, phases, spectra, uncertain, interface, violations })
}

/// Dilation statistics on one connected component of a phase.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComponentDilation {
    pub label: usize,
    pub nodes: usize,
    pub mean: f64,
    pub max_deviation: f64,
}

/// Mean and spread of `K(Du)` on each connected component of the labels `0` and `n`.
pub fn constant_dilation_check(src: &dyn JetSource, phases: &PhaseMap) -> Result<Vec<ComponentDilation>> {
    let grid = src.grid();
    let n = grid.n();
    let mut out = Vec::new();
    for label in [0, n] {
        let mask = phases.augmented(label);
        let (comp, count) = connected_components(grid, &mask);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); count];
        for (v, c) in comp.iter().enumerate() {
            if let Some(c) = c {
                members[*c].push(v);
            }
        }
        for nodes in members {
            let ks: Vec<f64> = nodes
                .iter()
                .map(|&v| src.node_gradient(v).and_then(|du| dilation(&du)))
                .collect::<Result<_>>()?;
            let mean = ks.iter().sum::<f64>() / ks.len() as f64;
            let max_deviation = ks.iter().map(|k| (k - mean).abs()).fold(0.0, f64::max);
            out.push(ComponentDilation { label, nodes: nodes.len(), mean, max_deviation });
        }
    }
    Ok(out)
}

/// Sample points of a patch `M` with a tangent frame at each point.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct Patch {
    pub points: Vec<Vec<f64>>,
    /// `tangents[s]` spans the tangent space of `M` at `points[s]`.
    pub tangents: Vec<Vec<Vec<f64>>>,
}

impl Patch {
    /// Evenly spaced points on the segment `a → b` with its direction as tangent.
    pub fn segment(a: &[f64], b: &[f64], samples: usize) -> Self {
        let dir: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
        let points = (0..samples)
            .map(|s| {
                let t = if samples > 1 { s as f64 / (samples - 1) as f64 } else { 0.5 };
                a.iter().zip(&dir).map(|(x, d)| x + t * d).collect()
            })
            .collect();
        Patch { points, tangents: vec![vec![dir]; samples] }
    }
}

/// Residuals of the interface covariant-derivative identity on a patch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InterfaceIdentityReport {
    pub samples: usize,
    /// Rank of `[K_P]^⊥` along the patch.
    pub normal_rank: usize,
    pub max_lhs: f64,
    pub max_rhs: f64,
    /// `max |LHS − RHS|`.
    pub max_abs_diff: f64,
    /// `max |LHS − RHS| / max(|LHS|, |RHS|, 1)`.
    pub max_rel_diff: f64,
    pub max_normal_residual: f64,
    /// `max |[K_P]^⊤ LHS|` over samples whose normal residual is at most `NORMAL_RESIDUAL_ZERO`.
    pub projection_residual: Option<f64>,
}

/// Normal residuals below this count as vanishing for the projection check.
pub const NORMAL_RESIDUAL_ZERO: f64 = 1e-6;

fn orthonormalize(vectors: &[Vec<f64>], dim: usize) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let push = |basis: &mut Vec<Vec<f64>>, v: &[f64]| -> bool {
        let mut w = v.to_vec();
        for _ in 0..2 {
            for b in basis.iter() {
                let d: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
                for (wi, bi) in w.iter_mut().zip(b) {
                    *wi -= d * bi;
                }
            }
        }
        let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nw > 1e-10 * nv.max(1.0) {
            basis.push(w.into_iter().map(|x| x / nw).collect());
            true
        } else {
            false
        }
    };
    for t in vectors {
        if t.len() != dim {
            return Err(QcError::Shape(format!("tangent of length {} in ℝ^{dim}", t.len())));
        }
        if !push(&mut basis, t) {
            return Err(QcError::Precondition("patch tangents are linearly dependent".into()));
        }
    }
    let m = basis.len();
    for i in 0..dim {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        push(&mut basis, &e);
    }
    let normals = basis.split_off(m);
    Ok((basis, normals))
}

/// Checks `∇^M([K_P]^⊥):K_P = −[K_P]^⊥K_PP:D²u + [K_P]^⊥K_PP:∇^{M⊥}Du` on a patch.
///
/// The left side differentiates the projector by central differences of step
/// `h` along the tangents. The right side uses the reduced Hessian, the exact
/// `D²u`, and central differences of `Du` along the normals.
pub fn interface_identity_check(
    map: &dyn PointJet,
    patch: &Patch,
    tau: f64,
    h: f64,
) -> Result<InterfaceIdentityReport> {
    let (n, big) = map.dims();
    if patch.points.is_empty() || patch.points.len() != patch.tangents.len() {
        return Err(QcError::Config("patch needs one tangent frame per sample point".into()));
    }
    if !(h > 0.0) {
        return Err(QcError::Config(format!("difference step must be positive, got {h}")));
    }
    let proj_at = |x: &[f64]| -> Result<(Matrix, usize, Matrix)> {
        let dj = DilationJet::new(&map.gradient(x)?)?;
        let pr = dj.projections(tau)?;
        Ok((pr.proj_null, big - pr.eps_rank, pr.proj_range))
    };
    let mut rank: Option<usize> = None;
    let mut check_rank = |sample: usize, r: usize| -> Result<()> {
        match rank {
            None => rank = Some(r),
            Some(r0) if r0 != r => return Err(QcError::RankDrift { sample, from: r0, to: r }),
            _ => {}
        }
        Ok(())
    };
    let shift = |x: &[f64], d: &[f64], s: f64| -> Vec<f64> { x.iter().zip(d).map(|(a, b)| a + s * b).collect() };

    let mut rep = InterfaceIdentityReport {
        samples: patch.points.len(),
        normal_rank: 0,
        max_lhs: 0.0,
        max_rhs: 0.0,
        max_abs_diff: 0.0,
        max_rel_diff: 0.0,
        max_normal_residual: 0.0,
        projection_residual: None,
    };
    for (s, (x, frame)) in patch.points.iter().zip(&patch.tangents).enumerate() {
        if x.len() != n {
            return Err(QcError::Shape(format!("patch point of length {} in ℝ^{n}", x.len())));
        }
        if !map.ball_inside(x, h) {
            return Err(QcError::Config(format!("difference stencil at {x:?} leaves the domain")));
        }
        let (tangents, normals) = orthonormalize(frame, n)?;
        let jet = map.jet(x)?;
        let dj = DilationJet::new(&jet.du)?;
        let (pi, r, range) = proj_at(x)?;
        check_rank(s, r)?;

        // ∇^M_i Π = Σ_k t_k[i] ∂_{t_k} Π.
        let mut lhs = vec![0.0; big];
        for t in &tangents {
            let (pp, rp, _) = proj_at(&shift(x, t, h))?;
            let (pm, rm, _) = proj_at(&shift(x, t, -h))?;
            check_rank(s, rp)?;
            check_rank(s, rm)?;
            let dpi = (&pp - &pm).scale(0.5 / h);
            let kp_t = dj.k_p.mat_vec(t);
            let contrib = dpi.mat_vec(&kp_t);
            for (l, c) in lhs.iter_mut().zip(contrib) {
                *l += c;
            }
        }

        // X_{γil} = Σ_k ν_k[i] ∂_{ν_k}(D_l u_γ).
        let mut x_normal = Tensor::zeros(&[big, n, n]);
        for nu in &normals {
            let dp = map.gradient(&shift(x, nu, h))?;
            let dm = map.gradient(&shift(x, nu, -h))?;
            for g in 0..big {
                for i in 0..n {
                    for l in 0..n {
                        let v = x_normal.get(&[g, i, l]) + nu[i] * (dp[(g, l)] - dm[(g, l)]) * 0.5 / h;
                        x_normal.set(&[g, i, l], v);
                    }
                }
            }
        }
        let full = pi.mat_vec(&fourth_order_on_hessian(&dj.k_pp_reduced, &jet.d2u));
        let part = pi.mat_vec(&fourth_order_on_hessian(&dj.k_pp_reduced, &x_normal));
        let rhs: Vec<f64> = full.iter().zip(&part).map(|(a, b)| b - a).collect();

        let nrm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        let (nl, nr, nd) = (nrm(&lhs), nrm(&rhs), nrm(&diff));
        rep.max_lhs = rep.max_lhs.max(nl);
        rep.max_rhs = rep.max_rhs.max(nr);
        rep.max_abs_diff = rep.max_abs_diff.max(nd);
        rep.max_rel_diff = rep.max_rel_diff.max(nd / nl.max(nr).max(1.0));
        let normal = nrm(&normal_residual(&jet, tau)?);
        rep.max_normal_residual = rep.max_normal_residual.max(normal);
        if normal <= NORMAL_RESIDUAL_ZERO {
            let pr = nrm(&range.mat_vec(&lhs));
            rep.projection_residual = Some(rep.projection_residual.map_or(pr, |p: f64| p.max(pr)));
        }
    }
    rep.normal_rank = rank.unwrap_or(0);
    Ok(rep)
}
