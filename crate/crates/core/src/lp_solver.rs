//! Dirichlet minimisation of the normalised `L^p` dilation with `p`-continuation.
//!
//! The discrete energy is `E_p(u) = (⨍ K(G_c)^p)^{1/p}`, where `G_c` is the
//! cell-centred gradient of cell `c` and the mean runs over active cells.
//! Interior nodes are free; boundary nodes (grid edge and hole rims) are fixed.
//! States whose cell gradients leave `S⁺` get the energy `+∞`, which the line
//! search treats as a rejection.

use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic_maps::AnalyticMap;
use crate::dilation_calculus::{dilation, dilation_gradient};
use crate::error::{QcError, Result};
use crate::grid_domain::{BoxHole, Grid, MapField, NodeKind};
use crate::tensor_core::{svd, Matrix, DEFAULT_TAU};

pub const CONFIG_SCHEMA: u32 = 1;

fn default_schedule() -> Vec<f64> {
    vec![2.0, 4.0, 8.0, 16.0, 32.0, 64.0]
}

/// Solver run description, read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub schema: u32,
    /// Catalog map supplying the boundary values.
    pub map: Option<String>,
    pub params: String,
    /// Field file supplying the grid and boundary values; excludes `map`.
    pub boundary_file: Option<PathBuf>,
    /// Box corners; default to the map's default box.
    pub lo: Option<Vec<f64>>,
    pub hi: Option<Vec<f64>>,
    pub points: usize,
    pub hole: Option<BoxHole>,
    pub p_schedule: Vec<f64>,
    pub max_iterations: usize,
    /// Stop when the rescaled residual `max_v |∂E/∂u_v| / w_v` falls below this.
    pub tolerance: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Quasi-Newton memory; 0 gives plain gradient descent.
    pub memory: usize,
    pub tau: f64,
    pub restarts: usize,
    /// Jitter of restarts, in units of the smallest grid spacing.
    pub jitter: f64,
    pub seed: u64,
    /// Random states checked against directional differences before solving.
    pub self_test: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            schema: CONFIG_SCHEMA,
            map: Some("identity".into()),
            params: String::new(),
            boundary_file: None,
            lo: None,
            hi: None,
            points: 33,
            hole: None,
            p_schedule: default_schedule(),
            max_iterations: 500,
            tolerance: 1e-6,
            armijo: 1e-4,
            max_backtracks: 60,
            memory: 10,
            tau: DEFAULT_TAU,
            restarts: 0,
            jitter: 0.05,
            seed: 0,
            self_test: 0,
        }
    }
}

impl SolveConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SolveConfig = serde_json::from_str(text).map_err(|e| QcError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(QcError::Config(m));
        if self.schema != CONFIG_SCHEMA {
            return bad(format!("unsupported config schema {} (expected {CONFIG_SCHEMA})", self.schema));
        }
        if self.map.is_some() == self.boundary_file.is_some() {
            return bad("give exactly one of `map` and `boundary_file`".into());
        }
        let s = &self.p_schedule;
        if s.is_empty() || s[0] < 2.0 || s.windows(2).any(|w| w[1] <= w[0]) || s.iter().any(|p| !p.is_finite()) {
            return bad(format!("p schedule must be finite, increasing and start at ≥ 2: {s:?}"));
        }
        if !(self.tolerance > 0.0) || !(self.armijo > 0.0 && self.armijo < 1.0) {
            return bad("tolerance must be positive and armijo in (0, 1)".into());
        }
        if self.max_iterations == 0 || self.max_backtracks == 0 {
            return bad("iteration and backtrack limits must be positive".into());
        }
        if !(self.tau > 0.0 && self.tau < 1.0) || !(self.jitter >= 0.0) {
            return bad("tau must lie in (0, 1) and jitter be non-negative".into());
        }
        Ok(())
    }

    /// Field carrying the boundary values; interior values are placeholders.
    pub fn boundary_field(&self) -> Result<MapField> {
        if let Some(path) = &self.boundary_file {
            let f = MapField::load(path)?;
            return Ok(f);
        }
        let map = AnalyticMap::from_name(self.map.as_deref().unwrap_or_default(), &self.params)?;
        let (dlo, dhi) = map.default_box();
        let grid = Grid::uniform(self.lo.as_deref().unwrap_or(&dlo), self.hi.as_deref().unwrap_or(&dhi), self.points)?;
        MapField::sample(&map, grid, self.hole.as_ref(), self.tau)
    }
}

/// Precomputed cell stencils of a grid with a fixed activity pattern.
struct Discretization {
    n: usize,
    big: usize,
    cells: Vec<usize>,
    corners: Vec<Vec<usize>>,
    /// `weights[m][i]`: coefficient of corner `m` in column `i` of the cell gradient.
    weights: Vec<Vec<f64>>,
    free: Vec<bool>,
    grid: Grid,
}

/// Energy, its gradient, or the first cell outside `S⁺`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyEval {
    /// `+∞` when some cell leaves `S⁺`.
    pub energy: f64,
    /// `∂E/∂u`, `N` entries per node, zero at fixed nodes.
    pub gradient: Vec<f64>,
    /// Centre of the offending cell when `energy` is infinite.
    pub offending: Option<Vec<f64>>,
    pub sup_k: f64,
    pub variance_k: f64,
}

impl Discretization {
    fn new(field: &MapField) -> Result<Self> {
        let grid = field.grid().clone();
        let n = grid.n();
        let cells = field.active_cells();
        if cells.is_empty() {
            return Err(QcError::Config("domain has no active cells".into()));
        }
        let corners = cells.iter().map(|&c| grid.cell_corners(c)).collect();
        let w = 1.0 / (1usize << (n - 1)) as f64;
        let weights = (0..1usize << n)
            .map(|m| (0..n).map(|i| if (m >> i) & 1 == 1 { w } else { -w } / grid.spacing(i)).collect())
            .collect();
        let free = field.kinds().iter().map(|k| *k == NodeKind::Interior).collect();
        Ok(Discretization { n, big: field.big_n(), cells, corners, weights, free, grid })
    }

    fn cell_gradient(&self, values: &[f64], k: usize) -> Matrix {
        let mut du = Matrix::zeros(self.big, self.n);
        for (m, &v) in self.corners[k].iter().enumerate() {
            let u = &values[v * self.big..(v + 1) * self.big];
            for i in 0..self.n {
                let s = self.weights[m][i];
                for (a, ua) in u.iter().enumerate() {
                    du[(a, i)] += s * ua;
                }
            }
        }
        du
    }

    fn dilations(&self, values: &[f64]) -> std::result::Result<Vec<(f64, Matrix)>, usize> {
        let per_cell: Vec<Option<(f64, Matrix)>> = (0..self.cells.len())
            .into_par_iter()
            .map(|k| {
                let du = self.cell_gradient(values, k);
                let kv = dilation(&du).ok()?;
                Some((kv, dilation_gradient(&du).ok()?))
            })
            .collect();
        per_cell.into_iter().enumerate().map(|(k, c)| c.ok_or(k)).collect()
    }

    fn energy_only(&self, values: &[f64], p: f64) -> f64 {
        let per_cell: Vec<Option<f64>> = (0..self.cells.len())
            .into_par_iter()
            .map(|k| dilation(&self.cell_gradient(values, k)).ok())
            .collect();
        let Some(ks) = per_cell.into_iter().collect::<Option<Vec<f64>>>() else { return f64::INFINITY };
        mean_power(&ks, p)
    }

    fn evaluate(&self, values: &[f64], p: f64) -> EnergyEval {
        let cells = match self.dilations(values) {
            Ok(c) => c,
            Err(k) => {
                return EnergyEval {
                    energy: f64::INFINITY,
                    gradient: Vec::new(),
                    offending: Some(self.grid.cell_center(self.cells[k])),
                    sup_k: f64::INFINITY,
                    variance_k: f64::NAN,
                }
            }
        };
        let ks: Vec<f64> = cells.iter().map(|c| c.0).collect();
        let energy = mean_power(&ks, p);
        let count = ks.len() as f64;
        let mut gradient = vec![0.0; values.len()];
        for (k, (kv, kp)) in cells.iter().enumerate() {
            // ∂E/∂K_c = (K_c/E)^{p−1} / #cells
            let coef = (kv / energy).powf(p - 1.0) / count;
            for (m, &v) in self.corners[k].iter().enumerate() {
                if !self.free[v] {
                    continue;
                }
                for a in 0..self.big {
                    let s: f64 = (0..self.n).map(|i| kp[(a, i)] * self.weights[m][i]).sum();
                    gradient[v * self.big + a] += coef * s;
                }
            }
        }
        let (sup_k, variance_k) = sup_and_variance(&ks);
        EnergyEval { energy, gradient, offending: None, sup_k, variance_k }
    }

    /// `max_v |∂E/∂u_v| / w_v` with the nodal weight `w_v = 1/#cells`.
    fn rescaled_residual(&self, gradient: &[f64]) -> f64 {
        let m = gradient.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        m * self.cells.len() as f64
    }

    fn is_immersion(&self, values: &[f64], tau: f64) -> std::result::Result<(), Vec<f64>> {
        let bad = (0..self.cells.len()).into_par_iter().find_first(|&k| {
            let du = self.cell_gradient(values, k);
            let s = svd(&du).sigma;
            !(du.is_finite() && s[0] > 0.0 && s.iter().filter(|&&x| x > tau * s[0]).count() == self.n)
                || dilation(&du).is_err()
        });
        match bad {
            Some(k) => Err(self.grid.cell_center(self.cells[k])),
            None => Ok(()),
        }
    }
}

/// `(⨍ K^p)^{1/p}`, evaluated relative to `max K` so large `p` cannot overflow.
fn mean_power(ks: &[f64], p: f64) -> f64 {
    let sup = ks.iter().fold(0.0f64, |m, &k| m.max(k));
    let mean = ks.iter().map(|k| (k / sup).powf(p)).sum::<f64>() / ks.len() as f64;
    sup * mean.powf(1.0 / p)
}

fn sup_and_variance(ks: &[f64]) -> (f64, f64) {
    let sup = ks.iter().fold(0.0f64, |m, &k| m.max(k));
    let mean = ks.iter().sum::<f64>() / ks.len() as f64;
    let var = ks.iter().map(|k| (k - mean) * (k - mean)).sum::<f64>() / ks.len() as f64;
    (sup, var)
}

/// Energy and gradient of the discrete normalised `L^p` dilation at a field's values.
pub fn energy_and_gradient(field: &MapField, p: f64) -> Result<EnergyEval> {
    if !(p >= 2.0) || !p.is_finite() {
        return Err(QcError::Precondition(format!("exponent p must be finite and ≥ 2, got {p}")));
    }
    Ok(Discretization::new(field)?.evaluate(field.values(), p))
}

/// Outcome of comparing the adjoint gradient with directional differences.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientCheck {
    pub states: usize,
    pub step: f64,
    pub max_rel_error: f64,
}

/// Compares `⟨∇E, δ⟩` with `(E(u + tδ) − E(u − tδ))/2t` at randomly jittered states.
pub fn gradient_self_test(field: &MapField, p: f64, states: usize, seed: u64) -> Result<GradientCheck> {
    const STEP: f64 = 1e-5;
    let disc = Discretization::new(field)?;
    let h = (0..disc.n).map(|i| disc.grid.spacing(i)).fold(f64::INFINITY, f64::min);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < states {
        let mut state = field.values().to_vec();
        let mut amp = 0.1 * h;
        let base = loop {
            for (v, x) in state.iter_mut().enumerate() {
                if disc.free[v / disc.big] {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *x = field.values()[v] + amp * z;
                }
            }
            let e = disc.evaluate(&state, p);
            if e.energy.is_finite() {
                break e;
            }
            amp *= 0.5;
        };
        let dir: Vec<f64> = (0..state.len())
            .map(|v| if disc.free[v / disc.big] { h * Distribution::<f64>::sample(&StandardNormal, &mut rng) } else { 0.0 })
            .collect();
        let shifted = |t: f64| -> Vec<f64> { state.iter().zip(&dir).map(|(x, d)| x + t * d).collect() };
        let fd = (disc.energy_only(&shifted(STEP), p) - disc.energy_only(&shifted(-STEP), p)) / (2.0 * STEP);
        let adj: f64 = base.gradient.iter().zip(&dir).map(|(g, d)| g * d).sum();
        worst = worst.max((fd - adj).abs() / adj.abs().max(fd.abs()).max(f64::MIN_POSITIVE));
        checked += 1;
    }
    Ok(GradientCheck { states, step: STEP, max_rel_error: worst })
}

/// How the initial state was built.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Initializer {
    Harmonic,
    AffineFit,
}

/// Gauss–Seidel/SOR Laplace solve for the free nodes, component by component.
fn harmonic_extension(disc: &Discretization, values: &mut [f64]) {
    const TOL: f64 = 1e-10;
    const MAX_SWEEPS: usize = 100_000;
    let g = &disc.grid;
    let inv_h2: Vec<f64> = (0..disc.n).map(|i| 1.0 / (g.spacing(i) * g.spacing(i))).collect();
    let diag: f64 = 2.0 * inv_h2.iter().sum::<f64>();
    let longest = g.counts().iter().copied().max().unwrap_or(2) as f64;
    let omega = 2.0 / (1.0 + (std::f64::consts::PI / longest).sin());
    let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let free: Vec<usize> = (0..g.len()).filter(|&v| disc.free[v]).collect();
    let nbrs: Vec<Vec<(usize, usize, f64)>> = free
        .iter()
        .map(|&v| {
            (0..disc.n)
                .flat_map(|i| {
                    let up = g.neighbor(v, i, 1).expect("interior node");
                    let dn = g.neighbor(v, i, -1).expect("interior node");
                    [(up, i, inv_h2[i]), (dn, i, inv_h2[i])]
                })
                .collect()
        })
        .collect();
    for a in 0..disc.big {
        for _ in 0..MAX_SWEEPS {
            let mut change: f64 = 0.0;
            for (&v, nb) in free.iter().zip(&nbrs) {
                let s: f64 = nb.iter().map(|&(w, _, c)| c * values[w * disc.big + a]).sum();
                let old = values[v * disc.big + a];
                let new = old + omega * (s / diag - old);
                change = change.max((new - old).abs());
                values[v * disc.big + a] = new;
            }
            if change <= TOL * scale {
                break;
            }
        }
    }
}

/// Least-squares affine map through the fixed nodes, evaluated at the free nodes.
fn affine_fit(disc: &Discretization, values: &mut [f64]) -> Result<()> {
    let g = &disc.grid;
    let dim = disc.n + 1;
    let mut ata = Matrix::zeros(dim, dim);
    let mut atb = Matrix::zeros(dim, disc.big);
    for v in 0..g.len() {
        if disc.free[v] || !disc.corners.iter().flatten().any(|&w| w == v) {
            continue;
        }
        let mut row = g.point(v);
        row.push(1.0);
        for i in 0..dim {
            for j in 0..dim {
                ata[(i, j)] += row[i] * row[j];
            }
            for a in 0..disc.big {
                atb[(i, a)] += row[i] * values[v * disc.big + a];
            }
        }
    }
    let inv = ata
        .inverse()
        .ok_or_else(|| QcError::Initialization("boundary nodes do not determine an affine fit".into()))?;
    let coef = inv.matmul(&atb);
    for v in (0..g.len()).filter(|&v| disc.free[v]) {
        let mut row = g.point(v);
        row.push(1.0);
        for a in 0..disc.big {
            values[v * disc.big + a] = (0..dim).map(|i| row[i] * coef[(i, a)]).sum();
        }
    }
    Ok(())
}

fn initialize(disc: &Discretization, boundary: &[f64], tau: f64) -> Result<(Vec<f64>, Initializer)> {
    let mut values = boundary.to_vec();
    harmonic_extension(disc, &mut values);
    let harmonic_fault = match disc.is_immersion(&values, tau) {
        Ok(()) => return Ok((values, Initializer::Harmonic)),
        Err(at) => at,
    };
    let mut values = boundary.to_vec();
    affine_fit(disc, &mut values)?;
    match disc.is_immersion(&values, tau) {
        Ok(()) => Ok((values, Initializer::AffineFit)),
        Err(at) => Err(QcError::Initialization(format!(
            "harmonic extension degenerates near {harmonic_fault:?}, affine fit near {at:?}"
        ))),
    }
}

/// Why a stage stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    /// Backtracking found no decrease above round-off.
    LineSearch,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageDiagnostics {
    pub p: f64,
    pub energy_start: f64,
    pub energy: f64,
    pub sup_k_start: f64,
    pub sup_k: f64,
    pub variance_k: f64,
    /// Rescaled discrete `Q_p` residual `max_v |∂E/∂u_v| / w_v` at the end of the stage.
    pub residual: f64,
    pub iterations: usize,
    pub stop: StopReason,
    /// Every accepted step lowered the energy.
    pub monotone: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveResult {
    #[serde(skip)]
    pub field: MapField,
    pub initializer: Initializer,
    pub stages: Vec<StageDiagnostics>,
    pub gradient_check: Option<GradientCheck>,
    /// Final energy of each start (the unjittered start first).
    pub restart_energies: Vec<f64>,
    pub best_start: usize,
}

impl SolveResult {
    pub fn final_stage(&self) -> &StageDiagnostics {
        self.stages.last().expect("at least one stage")
    }

    /// Drops wall-clock data so summaries are reproducible byte for byte.
    pub fn strip_timing(&mut self) {
        for s in &mut self.stages {
            s.wall_seconds = None;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// L-BFGS (two-loop recursion) with Armijo backtracking on the free nodes.
fn run_stage(disc: &Discretization, values: &mut Vec<f64>, p: f64, cfg: &SolveConfig) -> Result<StageDiagnostics> {
    let started = Instant::now();
    let mut cur = disc.evaluate(values, p);
    if !cur.energy.is_finite() {
        return Err(QcError::SolverStall {
            p,
            iteration: 0,
            detail: format!("stage starts outside S+ near {:?}", cur.offending),
        });
    }
    let (energy_start, sup_k_start) = (cur.energy, cur.sup_k);
    let h_min = (0..disc.n).map(|i| disc.grid.spacing(i)).fold(f64::INFINITY, f64::min);
    let mut history: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut monotone = true;
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        if disc.rescaled_residual(&cur.gradient) <= cfg.tolerance {
            stop = StopReason::Converged;
            break;
        }
        let g = &cur.gradient;
        let mut dir: Vec<f64> = g.iter().map(|x| -x).collect();
        if let Some((s, y, _)) = history.last() {
            let mut alphas = Vec::with_capacity(history.len());
            for (s, y, rho) in history.iter().rev() {
                let a = rho * dot(s, &dir);
                for (d, yi) in dir.iter_mut().zip(y) {
                    *d -= a * yi;
                }
                alphas.push(a);
            }
            let gamma = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= gamma);
            for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
                let b = rho * dot(y, &dir);
                for (d, si) in dir.iter_mut().zip(s) {
                    *d += (a - b) * si;
                }
            }
        } else {
            // First step moves the largest nodal component by a tenth of a cell.
            let gmax = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            dir.iter_mut().for_each(|d| *d *= 0.1 * h_min / gmax);
        }
        let mut slope = dot(g, &dir);
        if !(slope < 0.0) {
            history.clear();
            let gmax = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            dir = g.iter().map(|x| -x * 0.1 * h_min / gmax).collect();
            slope = dot(g, &dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        let mut all_infinite = true;
        for _ in 0..cfg.max_backtracks {
            let trial: Vec<f64> = values.iter().zip(&dir).map(|(x, d)| x + step * d).collect();
            let e = disc.energy_only(&trial, p);
            if e.is_finite() {
                all_infinite = false;
                if e <= cur.energy + cfg.armijo * step * slope {
                    accepted = Some(trial);
                    break;
                }
            }
            step *= 0.5;
        }
        let Some(trial) = accepted else {
            if all_infinite {
                return Err(QcError::SolverStall {
                    p,
                    iteration: iterations,
                    detail: format!(
                        "every backtrack left S+ (energy {}, residual {:e}, offending cell {:?})",
                        cur.energy,
                        disc.rescaled_residual(&cur.gradient),
                        disc.evaluate(&values.iter().zip(&dir).map(|(x, d)| x + step * d).collect::<Vec<_>>(), p).offending
                    ),
                });
            }
            stop = StopReason::LineSearch;
            break;
        };
        let next = disc.evaluate(&trial, p);
        monotone &= next.energy <= cur.energy;
        let s: Vec<f64> = trial.iter().zip(values.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.gradient.iter().zip(&cur.gradient).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if cfg.memory > 0 && sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if history.len() == cfg.memory {
                history.remove(0);
            }
            history.push((s, y, 1.0 / sy));
        }
        *values = trial;
        cur = next;
        iterations += 1;
    }
    if stop == StopReason::MaxIterations && disc.rescaled_residual(&cur.gradient) <= cfg.tolerance {
        stop = StopReason::Converged;
    }
    Ok(StageDiagnostics {
        p,
        energy_start,
        energy: cur.energy,
        sup_k_start,
        sup_k: cur.sup_k,
        variance_k: cur.variance_k,
        residual: disc.rescaled_residual(&cur.gradient),
        iterations,
        stop,
        monotone,
        wall_seconds: Some(started.elapsed().as_secs_f64()),
    })
}

/// Runs the `p` schedule from a boundary field; interior values of `boundary` are ignored.
pub fn solve_field(boundary: &MapField, cfg: &SolveConfig) -> Result<SolveResult> {
    cfg.validate()?;
    let disc = Discretization::new(boundary)?;
    if !disc.free.iter().any(|&f| f) {
        return Err(QcError::Config("grid has no interior nodes".into()));
    }
    let (init, initializer) = initialize(&disc, boundary.values(), cfg.tau)?;
    let mut start_field = boundary.clone();
    start_field.set_values(init.clone())?;
    let gradient_check = match cfg.self_test {
        0 => None,
        k => Some(gradient_self_test(&start_field, cfg.p_schedule[0], k, cfg.seed)?),
    };

    let h_min = (0..disc.n).map(|i| disc.grid.spacing(i)).fold(f64::INFINITY, f64::min);
    let mut best: Option<(f64, Vec<f64>, Vec<StageDiagnostics>)> = None;
    let mut restart_energies = Vec::with_capacity(cfg.restarts + 1);
    let mut best_start = 0;
    for start in 0..=cfg.restarts {
        let mut values = init.clone();
        if start > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(start as u64);
            let mut amp = cfg.jitter * h_min;
            let noise: Vec<f64> = (0..values.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            loop {
                for (v, x) in values.iter_mut().enumerate() {
                    if disc.free[v / disc.big] {
                        *x = init[v] + amp * noise[v];
                    }
                }
                if disc.is_immersion(&values, cfg.tau).is_ok() || amp == 0.0 {
                    break;
                }
                amp *= 0.5;
            }
        }
        let mut stages = Vec::with_capacity(cfg.p_schedule.len());
        for &p in &cfg.p_schedule {
            stages.push(run_stage(&disc, &mut values, p, cfg)?);
        }
        let e = stages.last().map_or(f64::INFINITY, |s| s.energy);
        restart_energies.push(e);
        if best.as_ref().is_none_or(|b| e < b.0) {
            best_start = start;
            best = Some((e, values, stages));
        }
    }
    let (_, values, stages) = best.expect("at least one start");
    let mut field = boundary.clone();
    field.set_values(values)?;
    Ok(SolveResult { field, initializer, stages, gradient_check, restart_energies, best_start })
}

pub fn solve(cfg: &SolveConfig) -> Result<SolveResult> {
    cfg.validate()?;
    solve_field(&cfg.boundary_field()?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_domain::lp_norm_of_dilation;

    fn sampled(name: &str, params: &str, points: usize, hole: Option<&BoxHole>) -> MapField {
        let map = AnalyticMap::from_name(name, params).unwrap();
        let (lo, hi) = map.default_box();
        MapField::sample(&map, Grid::uniform(&lo, &hi, points).unwrap(), hole, DEFAULT_TAU).unwrap()
    }

    fn annulus() -> BoxHole {
        BoxHole { lo: vec![-0.25; 2], hi: vec![0.25; 2] }
    }

    #[test]
    fn identity_is_a_discrete_critical_point() {
        let f = sampled("identity", "", 17, None);
        for p in [2.0, 8.0, 64.0] {
            let e = energy_and_gradient(&f, p).unwrap();
            assert!((e.energy - 2.0).abs() < 1e-12);
            assert!(e.gradient.iter().all(|g| g.abs() <= 1e-8));
        }
    }

    #[test]
    fn energy_matches_lp_norm_and_power_constant() {
        let f = sampled("power", "gamma=1", 41, Some(&annulus()));
        let e = energy_and_gradient(&f, 4.0).unwrap();
        let lp = lp_norm_of_dilation(&f, 4.0).unwrap();
        assert!((e.energy - lp.normalized).abs() < 1e-12);
        assert!((e.energy - 2.5).abs() < 5e-3, "{}", e.energy);
        assert!(e.gradient.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn adjoint_gradient_matches_directional_differences() {
        let f = sampled("power", "gamma=1", 17, Some(&annulus()));
        for p in [2.0, 16.0] {
            let chk = gradient_self_test(&f, p, 5, 7).unwrap();
            assert!(chk.max_rel_error <= 1e-6, "{chk:?}");
        }
    }

    #[test]
    fn leaving_s_plus_yields_the_sentinel() {
        let mut f = sampled("identity", "", 9, None);
        let mut v = f.values().to_vec();
        // Collapsing a node onto its diagonal neighbour makes that cell's gradient singular.
        let (node, diag) = (f.grid().index(&[4, 4]), f.grid().index(&[3, 3]));
        v[2 * node] = v[2 * diag];
        v[2 * node + 1] = v[2 * diag + 1];
        f.set_values(v).unwrap();
        let e = energy_and_gradient(&f, 2.0).unwrap();
        assert!(e.energy.is_infinite());
        assert!(e.offending.is_some());
    }

    #[test]
    fn identity_boundary_returns_identity() {
        let cfg = SolveConfig { points: 17, self_test: 3, ..SolveConfig::default() };
        let r = solve(&cfg).unwrap();
        assert_eq!(r.initializer, Initializer::Harmonic);
        assert!(r.gradient_check.as_ref().unwrap().max_rel_error <= 1e-6);
        let s = r.final_stage();
        assert!((s.sup_k - 2.0).abs() <= 1e-9);
        for v in 0..r.field.grid().len() {
            let x = r.field.grid().point(v);
            let u = r.field.value(v);
            assert!((u[0] - x[0]).abs() <= 1e-9 && (u[1] - x[1]).abs() <= 1e-9);
        }
    }

    #[test]
    fn affine_boundary_keeps_constant_dilation() {
        let cfg = SolveConfig {
            map: Some("affine".into()),
            params: "a11=2,a12=0.5,a21=0.1,a22=1,b1=0.3".into(),
            points: 13,
            p_schedule: vec![2.0, 8.0],
            ..SolveConfig::default()
        };
        let r = solve(&cfg).unwrap();
        let a = Matrix::from_rows(&[&[2.0, 0.5], &[0.1, 1.0]]);
        let k = dilation(&a).unwrap();
        let s = r.final_stage();
        assert!((s.sup_k - k).abs() <= 1e-3 && s.variance_k <= 1e-6);
    }

    #[test]
    fn warm_starts_carry_over_between_stages() {
        let cfg = SolveConfig {
            map: Some("power".into()),
            params: "gamma=1".into(),
            points: 17,
            hole: Some(annulus()),
            p_schedule: vec![2.0, 4.0, 8.0],
            max_iterations: 200,
            ..SolveConfig::default()
        };
        let r = solve(&cfg).unwrap();
        for w in r.stages.windows(2) {
            assert_eq!(w[0].sup_k, w[1].sup_k_start);
        }
        for s in &r.stages {
            assert!(s.monotone && s.energy <= s.energy_start && s.energy >= 2.0);
        }
    }

    #[test]
    fn degenerate_boundary_is_rejected() {
        let grid = Grid::uniform(&[0.0, 0.0], &[1.0, 1.0], 7).unwrap();
        let values: Vec<f64> = (0..grid.len()).flat_map(|v| [grid.point(v)[0], 0.0]).collect();
        let f = MapField::new(grid, 2, values, &[true; 49], DEFAULT_TAU).unwrap();
        let err = solve_field(&f, &SolveConfig::default());
        assert!(matches!(err, Err(QcError::Initialization(_))), "{err:?}");
    }

    #[test]
    fn config_validation() {
        assert!(SolveConfig::from_json(r#"{"schema": 1, "map": "identity"}"#).is_ok());
        assert!(SolveConfig::from_json(r#"{"schema": 2}"#).is_err());
        assert!(SolveConfig::from_json(r#"{"p_schedule": [4, 2]}"#).is_err());
        assert!(SolveConfig::from_json(r#"{"barrier": 1}"#).is_err());
        assert!(SolveConfig::from_json(r#"{"map": null}"#).is_err());
    }
}
