//! Derivative, identity and invariant checks behind `qcinf verify`.

use qcinf_core::dilation_calculus::{
    dilation, dilation_gradient, dilation_gradient_fd, dilation_hessian_fd, dilation_hessian_reduced_with, e_tensor,
    identity_n_equals_n, metric_deviation, DilationJet,
};
use qcinf_core::phase_analysis::classify_gradient;
use qcinf_core::sampling::{random_rotation, random_splus};
use qcinf_core::tensor_core::{Matrix, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// `(N, n)` shapes cycled through by trial index.
pub const SHAPES: [(usize, usize); 5] = [(2, 2), (3, 2), (4, 2), (3, 3), (4, 3)];
/// Bound on `cond(PᵀP)` for random gradients.
pub const MAX_COND: f64 = 1e4;
/// Bound on `cond(PᵀP)` for the square-identity trials.
pub const SQUARE_MAX_COND: f64 = 1e2;
/// The Hessian and square-identity checks use at most this many trials.
pub const HESSIAN_TRIALS: usize = 100;

pub const K_P_TOLERANCE: f64 = 1e-6;
pub const K_PP_TOLERANCE: f64 = 1e-5;
pub const IDENTITY_TOLERANCE: f64 = 1e-9;

/// Deliberate defects for mutation smoke tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Flips the sign of the trace term of `E`.
    ESign,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyOptions {
    pub trials: usize,
    pub seed: u64,
    pub tau: f64,
    pub fault: Option<Fault>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub trial: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries of the gradient.
    pub p: Vec<f64>,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub samples: usize,
    pub max_error: f64,
    pub threshold: f64,
    pub passed: bool,
    /// First failing trial, or the worst one when the check passes.
    pub witness: Option<Witness>,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub options: VerifyOptions,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn first_failure(&self) -> Option<&CheckResult> {
        self.checks.iter().find(|c| !c.passed)
    }
}

pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Random gradient of trial `i`: shape `SHAPES[i % 5]`, `cond(PᵀP) < 1e4`.
pub fn trial_gradient(seed: u64, trial: usize) -> Matrix {
    let (big, n) = SHAPES[trial % SHAPES.len()];
    random_splus(&mut trial_rng(seed, trial), big, n, MAX_COND)
}

/// Square well-conditioned gradient of trial `i`, `n = 2 + i % 2`.
pub fn square_gradient(seed: u64, trial: usize) -> Matrix {
    let n = 2 + trial % 2;
    random_splus(&mut trial_rng(seed ^ 0x5157_4152_45, trial), n, n, SQUARE_MAX_COND)
}

/// Gradient whose metric has eigenvalues `(m − d, m, m + d)`, so `S(g)` is
/// singular and `K_P` loses rank; shapes `(3, 3)` and `(4, 3)` alternate.
pub fn degenerate_gradient(seed: u64, trial: usize) -> Matrix {
    let big = 3 + trial % 2;
    let mut rng = trial_rng(seed ^ 0xde6e, trial);
    let m = 0.5 + rng.random::<f64>();
    let d = m * (0.1 + 0.8 * rng.random::<f64>());
    let q = random_rotation(&mut rng, big);
    let r = random_rotation(&mut rng, 3);
    let s = Matrix::from_fn(big, 3, |a, i| if a == i { [m - d, m, m + d][i].sqrt() } else { 0.0 });
    q.matmul(&s).matmul(&r)
}

fn faulty_e(n: usize, fault: Option<Fault>) -> Tensor {
    let mut e = e_tensor(n);
    if fault == Some(Fault::ESign) {
        let shift = 4.0 / n as f64;
        for k in 0..n {
            for j in 0..n {
                let v = e.get(&[k, j, j, k]);
                e.set(&[k, j, j, k], v + shift);
            }
        }
    }
    e
}

/// `[K_P]^⊥` applied to the first slot of an `N × n × N × n` tensor.
pub fn project_first_slot(pi: &Matrix, t: &Tensor) -> Tensor {
    let d = t.dims().to_vec();
    Tensor::from_fn(&d, |ix| (0..d[0]).map(|g| pi[(ix[0], g)] * t.get(&[g, ix[1], ix[2], ix[3]])).sum())
}

/// Relative error of the analytic `K_P` against central differences.
pub fn k_p_error(p: &Matrix) -> f64 {
    let a = dilation_gradient(p).expect("trial gradients lie in S+");
    let f = dilation_gradient_fd(p, None).expect("trial gradients lie in S+");
    (&a - &f).norm() / a.norm().max(f64::MIN_POSITIVE)
}

/// Error of the projected reduced Hessian against the projected FD Hessian,
/// relative to the FD Hessian (the projection is exactly zero when `K_P` has full rank).
pub fn k_pp_error(p: &Matrix, tau: f64, fault: Option<Fault>) -> f64 {
    let red = dilation_hessian_reduced_with(p, &faulty_e(p.cols(), fault)).expect("trial gradients lie in S+");
    let fd = dilation_hessian_fd(p, None).expect("trial gradients lie in S+");
    let pi = DilationJet::new(p).expect("trial gradients lie in S+").projections(tau).expect("finite").proj_null;
    let diff = &project_first_slot(&pi, &red) - &project_first_slot(&pi, &fd);
    diff.norm() / fd.norm().max(f64::MIN_POSITIVE)
}

struct Sample {
    trial: usize,
    p: Matrix,
    error: f64,
}

fn summarize(name: &'static str, threshold: f64, samples: Vec<Sample>) -> CheckResult {
    let count = samples.len();
    let max_error = samples.iter().map(|s| s.error).fold(0.0, f64::max);
    let failing = samples.iter().find(|s| !(s.error <= threshold));
    let worst = samples.iter().fold(None::<&Sample>, |w, s| match w {
        Some(w) if w.error >= s.error => Some(w),
        _ => Some(s),
    });
    let passed = failing.is_none();
    let witness = failing.or(worst).map(|s| Witness {
        trial: s.trial,
        rows: s.p.rows(),
        cols: s.p.cols(),
        p: s.p.data().to_vec(),
        error: s.error,
    });
    CheckResult { name, samples: count, max_error: if max_error.is_nan() { f64::INFINITY } else { max_error }, threshold, passed, witness }
}

fn run<F>(range: usize, gen: impl Fn(usize) -> Matrix + Sync, err: F) -> Vec<Sample>
where
    F: Fn(usize, &Matrix) -> f64 + Sync,
{
    (0..range)
        .into_par_iter()
        .map(|i| {
            let p = gen(i);
            let error = err(i, &p);
            Sample { trial: i, p, error }
        })
        .collect()
}

pub fn run_checks(opts: &VerifyOptions) -> VerifyReport {
    let m = opts.trials;
    let seed = opts.seed;
    let gen = |i| trial_gradient(seed, i);
    let hess = m.min(HESSIAN_TRIALS);
    let checks = vec![
        summarize("k_p_finite_difference", K_P_TOLERANCE, run(m, gen, |_, p| k_p_error(p))),
        summarize("k_pp_projected", K_PP_TOLERANCE, run(hess, gen, |_, p| k_pp_error(p, opts.tau, opts.fault))),
        summarize(
            "k_pp_projected_degenerate_metric",
            K_PP_TOLERANCE,
            run(hess, |i| degenerate_gradient(seed, i), |_, p| k_pp_error(p, opts.tau, opts.fault)),
        ),
        summarize(
            "square_identity",
            IDENTITY_TOLERANCE,
            run(hess, |i| square_gradient(seed, i), |_, p| identity_n_equals_n(p).unwrap_or(f64::INFINITY)),
        ),
        summarize(
            "dilation_lower_bound",
            1e-12,
            run(m, gen, |_, p| {
                let n = p.cols() as f64;
                ((n - dilation(p).unwrap_or(f64::NEG_INFINITY)) / n).max(0.0)
            }),
        ),
        summarize(
            "euler_relation",
            1e-10,
            run(m, gen, |_, p| {
                let kp = dilation_gradient(p).expect("trial gradients lie in S+");
                kp.frobenius_dot(p).abs() / (kp.norm() * p.norm()).max(f64::MIN_POSITIVE)
            }),
        ),
        summarize(
            "orthogonal_invariance",
            1e-10,
            run(m, gen, |i, p| {
                let mut rng = trial_rng(seed ^ 0x0a7a, i);
                let q = random_rotation(&mut rng, p.rows());
                let r = random_rotation(&mut rng, p.cols());
                let k = dilation(p).unwrap_or(f64::NAN);
                let kq = dilation(&q.matmul(p).matmul(&r)).unwrap_or(f64::NAN);
                (kq - k).abs() / k
            }),
        ),
        summarize(
            "metric_deviation_traceless",
            1e-12,
            run(m, gen, |_, p| {
                let s = metric_deviation(p).expect("finite");
                (s.trace().abs() + s.asymmetry()) / p.gram().norm()
            }),
        ),
        summarize(
            "label_one_absent",
            0.0,
            run(m, gen, |_, p| match classify_gradient(p, opts.tau) {
                Ok(ph) if ph.label != 1 => 0.0,
                _ => 1.0,
            }),
        ),
    ];
    let passed = checks.iter().all(|c| c.passed);
    VerifyReport { options: opts.clone(), checks, passed }
}
