//! Command implementations. Each returns the process exit code for a completed run.

use std::path::Path;

use qcinf_core::analytic_maps::{catalog, AnalyticMap, PointJet};
use qcinf_core::error::{QcError, Result};
use qcinf_core::grid_domain::{Grid, JetSource, MapField, SampledMap};
use qcinf_core::lp_solver::{solve, SolveConfig};
use qcinf_core::pde_residuals::{q_infinity_residual_with, q_p_expanded, QNormalization};
use qcinf_core::phase_analysis::{constant_dilation_check, phase_map};
use qcinf_core::variations::{
    counterexample_report, dilation_argmax, directed_search, normal_free_trial, rank_one_battery, BatteryConfig, HSpec,
    VariationTrial, RANK_ONE_FLOOR,
};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::args::{
    CounterexampleArgs, PhaseArgs, QForm, ResidualArgs, SolveArgs, SourceArgs, VaryArgs, VaryKind, VerifyArgs,
};
use crate::manifest::{with_suffix, RunManifest};
use crate::verify::{run_checks, trial_rng, Fault, VerifyOptions};

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DOMAIN: i32 = 3;

/// Share of evaluated nodes allowed to leave `S⁺` before a run counts as a domain failure.
pub const MAX_VIOLATION_FRACTION: f64 = 0.01;

pub fn exit_code(e: &QcError) -> i32 {
    match e {
        QcError::Shape(_) | QcError::Precondition(_) | QcError::Config(_) | QcError::Io(_) | QcError::Parse(_) => {
            EXIT_CONFIG
        }
        QcError::DomainViolation { .. }
        | QcError::StencilOutOfDomain { .. }
        | QcError::RankDrift { .. }
        | QcError::PhaseMixed(_)
        | QcError::FrameDiscontinuity(_)
        | QcError::Initialization(_)
        | QcError::SolverStall { .. } => EXIT_DOMAIN,
    }
}

fn pretty(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("summaries serialize") + "\n"
}

fn join(v: &[f64]) -> String {
    v.iter().map(|a| format!("{a:?}")).collect::<Vec<_>>().join(";")
}

fn axis_names(n: usize) -> Vec<String> {
    ["x", "y", "z"].iter().take(n).map(|s| s.to_string()).chain((3..n).map(|i| format!("x{i}"))).collect()
}

fn grid_json(g: &Grid) -> serde_json::Value {
    json!({ "lo": g.lo(), "hi": g.hi(), "counts": g.counts() })
}

pub fn verify(args: &VerifyArgs, m: &mut RunManifest) -> Result<i32> {
    let opts = VerifyOptions {
        trials: args.trials as usize,
        seed: args.seed,
        tau: args.tau,
        fault: args.inject_fault.map(|_| Fault::ESign),
    };
    let report = run_checks(&opts);
    for c in &report.checks {
        println!(
            "{} {:<34} max {:.3e} (threshold {:.0e}, {} samples)",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.max_error,
            c.threshold,
            c.samples
        );
    }
    if let Some(out) = &args.out {
        m.write(with_suffix(out, ".json"), pretty(&report))?;
    }
    match report.first_failure() {
        None => Ok(EXIT_OK),
        Some(c) => {
            eprintln!("check {} failed", c.name);
            if let Some(w) = &c.witness {
                eprintln!("witness: trial {} ({}x{}) P = {:?}, error {:e}", w.trial, w.rows, w.cols, w.p, w.error);
            }
            Ok(EXIT_CHECK)
        }
    }
}

/// A catalog map on a box grid, or a field loaded from disk.
pub enum Loaded {
    Map(AnalyticMap, Grid),
    Field(MapField),
}

impl Loaded {
    pub fn load(args: &SourceArgs, m: &mut RunManifest) -> Result<Self> {
        if let Some(path) = &args.field {
            if args.lo.is_some() || args.hi.is_some() || args.gamma.is_some() {
                return Err(QcError::Config("--lo, --hi and --gamma apply to catalog maps only".into()));
            }
            m.add_input(path)?;
            return Ok(Loaded::Field(MapField::load(path)?));
        }
        let name = args.map.as_deref().ok_or_else(|| QcError::Config("either --map or --field is required".into()))?;
        let params = match args.gamma {
            Some(g) if args.params.trim().is_empty() => format!("gamma={g}"),
            Some(g) => format!("{},gamma={g}", args.params),
            None => args.params.clone(),
        };
        let map = AnalyticMap::from_name(name, &params)?;
        let (lo, hi) = map.default_box();
        let lo = args.lo.clone().unwrap_or(lo);
        let hi = args.hi.clone().unwrap_or(hi);
        let n = map.dims().0;
        if lo.len() != n || hi.len() != n {
            return Err(QcError::Config(format!("{map} lives on ℝ^{n}; box corners need {n} coordinates")));
        }
        let grid = Grid::uniform(&lo, &hi, args.grid)?;
        Ok(Loaded::Map(map, grid))
    }

    pub fn label(&self) -> String {
        match self {
            Loaded::Map(map, _) => map.to_string(),
            Loaded::Field(f) => format!("field {}x{:?}", f.big_n(), f.grid().counts()),
        }
    }

    pub fn grid(&self) -> &Grid {
        match self {
            Loaded::Map(_, g) => g,
            Loaded::Field(f) => f.grid(),
        }
    }

    pub fn point_jet(&self) -> &dyn PointJet {
        match self {
            Loaded::Map(map, _) => map,
            Loaded::Field(f) => f,
        }
    }

    pub fn with_source<R>(&self, f: impl FnOnce(&dyn JetSource) -> Result<R>) -> Result<R> {
        match self {
            Loaded::Map(map, grid) => f(&SampledMap::new(map, grid.clone())?),
            Loaded::Field(field) => f(field),
        }
    }
}

#[derive(Serialize)]
struct Violation {
    node: usize,
    point: Vec<f64>,
    detail: String,
}

fn sup(v: impl Iterator<Item = f64>) -> Option<f64> {
    v.fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))))
}

struct ResidualRow {
    k: f64,
    tangential: f64,
    normal: f64,
    q_infinity: f64,
    q_p: Option<f64>,
}

fn vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn residual(args: &ResidualArgs, m: &mut RunManifest) -> Result<i32> {
    let loaded = Loaded::load(&args.source, m)?;
    let tau = args.source.tau;
    let normalization = match args.q_form {
        QForm::WithDilation => QNormalization::WithDilation,
        QForm::Renormalized => QNormalization::Renormalized,
    };
    let rows: Vec<(usize, std::result::Result<ResidualRow, String>)> = loaded.with_source(|src| {
        (0..src.grid().len())
            .into_par_iter()
            .filter(|&v| src.evaluable(v))
            .map(|v| {
                let eval = || -> Result<ResidualRow> {
                    let j = src.node_jet(v)?;
                    let b = q_infinity_residual_with(&j, tau, normalization)?;
                    let q_p = match args.p {
                        Some(p) => {
                            let q = q_p_expanded(&j, p)?;
                            Some(if args.rescaled { vec_norm(&q.rescaled) } else { vec_norm(&q.value()) })
                        }
                        None => None,
                    };
                    Ok(ResidualRow {
                        k: b.dilation_value,
                        tangential: vec_norm(&b.tangential),
                        normal: vec_norm(&b.normal),
                        q_infinity: vec_norm(&b.q_infinity),
                        q_p,
                    })
                };
                match eval() {
                    Ok(r) => Ok((v, Ok(r))),
                    Err(e) if e.is_domain_violation() => Ok((v, Err(e.to_string()))),
                    Err(e) => Err(e),
                }
            })
            .collect()
    })?;

    let grid = loaded.grid();
    let n = grid.n();
    let mut csv = axis_names(n).join(",") + ",K,tangential,normal,q_infinity";
    if args.p.is_some() {
        csv.push_str(",q_p");
    }
    csv.push('\n');
    let mut violations = Vec::new();
    let mut ok = Vec::new();
    for (v, r) in &rows {
        match r {
            Ok(r) => {
                let x = grid.point(*v);
                let mut line = x.iter().map(|a| format!("{a:?}")).collect::<Vec<_>>().join(",");
                line.push_str(&format!(",{:?},{:?},{:?},{:?}", r.k, r.tangential, r.normal, r.q_infinity));
                if let Some(q) = r.q_p {
                    line.push_str(&format!(",{q:?}"));
                }
                csv.push_str(&line);
                csv.push('\n');
                ok.push(r);
            }
            Err(detail) => violations.push(Violation { node: *v, point: grid.point(*v), detail: detail.clone() }),
        }
    }
    let evaluated = rows.len();
    let fraction = if evaluated == 0 { 0.0 } else { violations.len() as f64 / evaluated as f64 };
    let summary = json!({
        "source": loaded.label(),
        "provenance": loaded.with_source(|s| Ok(s.provenance()))?,
        "grid": grid_json(grid),
        "tau": tau,
        "q_form": args.q_form,
        "p": args.p,
        "rescaled": args.rescaled,
        "evaluated": evaluated,
        "violation_count": violations.len(),
        "violation_fraction": fraction,
        "sup_k": sup(ok.iter().map(|r| r.k)),
        "min_k": sup(ok.iter().map(|r| -r.k)).map(|v| -v),
        "sup_tangential": sup(ok.iter().map(|r| r.tangential)),
        "sup_normal": sup(ok.iter().map(|r| r.normal)),
        "sup_q_infinity": sup(ok.iter().map(|r| r.q_infinity)),
        "sup_q_p": sup(ok.iter().filter_map(|r| r.q_p)),
        "violations": violations,
    });
    m.write(with_suffix(&args.out, ".csv"), csv)?;
    m.write(with_suffix(&args.out, ".json"), pretty(&summary))?;
    println!(
        "{}: {} nodes, sup|tangential| = {}, sup|normal| = {}, sup|q_inf| = {}, {} S+ violations",
        loaded.label(),
        evaluated,
        summary["sup_tangential"],
        summary["sup_normal"],
        summary["sup_q_infinity"],
        violations.len()
    );
    if fraction > MAX_VIOLATION_FRACTION {
        eprintln!("{:.2}% of nodes leave S+ (limit {}%)", 100.0 * fraction, 100.0 * MAX_VIOLATION_FRACTION);
        return Ok(EXIT_DOMAIN);
    }
    Ok(EXIT_OK)
}

pub fn phase(args: &PhaseArgs, m: &mut RunManifest) -> Result<i32> {
    let loaded = Loaded::load(&args.source, m)?;
    let tau = args.source.tau;
    let (pm, comps, evaluable) = loaded.with_source(|src| {
        let pm = phase_map(src, tau)?;
        let comps = constant_dilation_check(src, &pm)?;
        let evaluable = (0..src.grid().len()).filter(|&v| src.evaluable(v)).count();
        Ok((pm, comps, evaluable))
    })?;
    let grid = &pm.grid;
    let n = grid.n();
    m.write(with_suffix(&args.out, ".csv"), pm.to_csv())?;
    match n {
        2 => {
            if args.slice.is_some() {
                return Err(QcError::Config("--slice applies to 3-d grids".into()));
            }
            m.write(with_suffix(&args.out, ".pgm"), pm.to_pgm(None)?)?;
        }
        3 => {
            let z = args.slice.unwrap_or(grid.counts()[2] / 2);
            m.write(with_suffix(&args.out, &format!(".z{z}.pgm")), pm.to_pgm(Some(z))?)?;
        }
        _ => {}
    }
    // Labels along the first axis through the middle of the others.
    let axis_line = (n == 3).then(|| {
        let mid: Vec<usize> = grid.counts().iter().map(|c| c / 2).collect();
        (0..grid.counts()[0])
            .map(|i| {
                let mut c = mid.clone();
                c[0] = i;
                let v = grid.index(&c);
                json!({
                    "point": grid.point(v),
                    "label": pm.labels[v],
                    "spectrum": pm.spectra[v],
                    "uncertain": pm.uncertain[v],
                })
            })
            .collect::<Vec<_>>()
    });
    let counts = pm.label_counts();
    let violations: Vec<Violation> =
        pm.violations.iter().map(|(v, d)| Violation { node: *v, point: grid.point(*v), detail: d.clone() }).collect();
    let fraction = if evaluable == 0 { 0.0 } else { violations.len() as f64 / evaluable as f64 };
    let summary = json!({
        "source": loaded.label(),
        "provenance": pm.provenance,
        "grid": grid_json(grid),
        "tau": tau,
        "classified": pm.classified(),
        "label_counts": counts,
        "uncertain": pm.uncertain.iter().filter(|b| **b).count(),
        "interface": pm.interface.iter().filter(|b| **b).count(),
        "components": comps,
        "axis_line": axis_line,
        "violation_count": violations.len(),
        "violation_fraction": fraction,
        "violations": violations,
    });
    m.write(with_suffix(&args.out, ".json"), pretty(&summary))?;
    println!(
        "{}: {} classified, labels {:?}, {} interface nodes, {} S+ violations",
        loaded.label(),
        pm.classified(),
        counts,
        summary["interface"],
        pm.violations.len()
    );
    if fraction > MAX_VIOLATION_FRACTION {
        eprintln!("{:.2}% of nodes leave S+ (limit {}%)", 100.0 * fraction, 100.0 * MAX_VIOLATION_FRACTION);
        return Ok(EXIT_DOMAIN);
    }
    Ok(EXIT_OK)
}

/// `max |u(x) − map(x)|` over active nodes where the map is defined.
fn distance_to_map(field: &MapField, map: &AnalyticMap) -> Result<f64> {
    let active = field.active();
    let mut d = 0.0f64;
    for (v, a) in active.iter().enumerate() {
        let x = field.grid().point(v);
        if !a || !map.contains(&x) {
            continue;
        }
        let target = map.value(&x)?;
        let diff = field.value(v).iter().zip(&target).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        d = d.max(diff);
    }
    Ok(d)
}

pub fn solve_cmd(args: &SolveArgs, timing: bool, m: &mut RunManifest) -> Result<i32> {
    m.add_input(&args.config)?;
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| QcError::Io(format!("{}: {e}", args.config.display())))?;
    let mut cfg = SolveConfig::from_json(&text)?;
    if let Some(v) = args.points {
        cfg.points = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.restarts {
        cfg.restarts = v;
    }
    if let Some(v) = args.max_iterations {
        cfg.max_iterations = v;
    }
    if let Some(v) = args.self_test {
        cfg.self_test = v;
    }
    if let Some(v) = &args.p_schedule {
        cfg.p_schedule = v.clone();
    }
    if let Some(b) = &cfg.boundary_file {
        // Relative boundary files are resolved against the config's directory.
        if b.is_relative() {
            let base = args.config.parent().unwrap_or(Path::new(""));
            cfg.boundary_file = Some(base.join(b));
        }
        m.add_input(cfg.boundary_file.as_ref().expect("set above"))?;
    }
    m.seed = Some(cfg.seed);
    let mut result = solve(&cfg)?;
    if !timing {
        result.strip_timing();
    }
    let last = result.final_stage().clone();
    let n = result.field.grid().n() as f64;
    let distance = match &cfg.map {
        Some(name) => Some(distance_to_map(&result.field, &AnalyticMap::from_name(name, &cfg.params)?)?),
        None => None,
    };
    let summary = json!({
        "config": cfg,
        "sup_k": last.sup_k,
        "sup_k_minus_n": last.sup_k - n,
        "variance_k": last.variance_k,
        "energy": last.energy,
        "all_stages_monotone": result.stages.iter().all(|s| s.monotone),
        "distance_to_boundary_map": distance,
        "result": result,
    });
    m.write(with_suffix(&args.out, ".field.json"), result.field.to_json()? + "\n")?;
    m.write(with_suffix(&args.out, ".json"), pretty(&summary))?;
    for s in &result.stages {
        println!(
            "p = {:<6} energy {:.6} sup K {:.6} var K {:.3e} iterations {} ({:?})",
            s.p, s.energy, s.sup_k, s.variance_k, s.iterations, s.stop
        );
    }
    if let Some(g) = &result.gradient_check {
        println!("gradient self-test: max relative error {:.3e} over {} states", g.max_rel_error, g.states);
    }
    println!("sup|K - n| = {:.6}", last.sup_k - n);
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct NormalRow {
    index: usize,
    outcome: std::result::Result<VariationTrial, String>,
}

fn normal_battery(base: &dyn PointJet, lo: &[f64], hi: &[f64], args: &VaryArgs) -> Result<Vec<NormalRow>> {
    let n = base.dims().0;
    let (e0, e1) = (args.radius[0], args.radius[1]);
    let (d0, d1) = (args.delta[0], args.delta[1]);
    let tau = args.source.tau;
    (0..args.trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(args.seed, i);
            let eps = e0 + (e1 - e0) * rng.random::<f64>();
            let delta = (d0.ln() + (d1.ln() - d0.ln()) * rng.random::<f64>()).exp();
            let mut x = None;
            for _ in 0..10_000 {
                let z: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| l + (h - l) * rng.random::<f64>()).collect();
                if base.ball_inside(&z, 1.01 * eps) {
                    x = Some(z);
                    break;
                }
            }
            let x = x.ok_or_else(|| QcError::Config(format!("no ball of radius {eps} fits in the box")))?;
            let h = [HSpec::Constant(1.0), HSpec::Constant(-1.0), HSpec::Ramp(0), HSpec::Ramp(1 % n)][i % 4];
            let outcome = match normal_free_trial(base, &x, eps, h, None, delta, tau) {
                Ok(t) => Ok(t),
                Err(e @ (QcError::PhaseMixed(_) | QcError::FrameDiscontinuity(_) | QcError::DomainViolation { .. })) => {
                    Err(e.to_string())
                }
                Err(e) => return Err(e),
            };
            Ok(NormalRow { index: i, outcome })
        })
        .collect()
}

fn trial_csv_header() -> &'static str {
    "index,status,center,radius,h,direction,delta_requested,delta,base_sup,varied_sup,delta_k,samples,converged,note\n"
}

fn trial_csv_row(i: usize, t: &VariationTrial) -> String {
    let h = match t.h {
        Some(HSpec::Constant(c)) => format!("constant:{c:?}"),
        Some(HSpec::Ramp(a)) => format!("ramp:{a}"),
        None => String::new(),
    };
    format!(
        "{i},{},{},{:?},{h},{},{:?},{:?},{:?},{:?},{:?},{},{},\n",
        serde_json::to_value(t.status).expect("status serializes").as_str().unwrap_or_default(),
        join(&t.center),
        t.radius,
        join(&t.direction),
        t.delta_requested,
        t.delta,
        t.base_sup,
        t.varied_sup,
        t.delta_k,
        t.samples_per_axis,
        t.converged
    )
}

pub fn vary(args: &VaryArgs, m: &mut RunManifest) -> Result<i32> {
    let loaded = Loaded::load(&args.source, m)?;
    let base = loaded.point_jet();
    let grid = loaded.grid();
    let (lo, hi) = (grid.lo().to_vec(), grid.hi().to_vec());
    if args.trials == 0 {
        return Err(QcError::Config("--trials must be positive".into()));
    }
    let (e0, e1) = (args.radius[0], args.radius[1]);
    let (d0, d1) = (args.delta[0], args.delta[1]);
    if !(e0 > 0.0 && e1 >= e0 && d0 > 0.0 && d1 >= d0) {
        return Err(QcError::Config("radius and amplitude ranges must be positive and ordered".into()));
    }
    let decreased;
    let summary = match args.kind {
        VaryKind::RankOne => {
            let cfg = BatteryConfig {
                trials: args.trials,
                seed: args.seed,
                lo: lo.clone(),
                hi: hi.clone(),
                eps_range: (e0, e1),
                delta_range: (d0, d1),
            };
            let battery = rank_one_battery(base, &cfg)?;
            let directed = match args.directed.as_deref() {
                None => None,
                Some(spec) => {
                    let center = if spec == "auto" {
                        dilation_argmax(base, &lo, &hi, 33, e1)?
                    } else {
                        spec.split(',')
                            .map(|s| s.trim().parse::<f64>().map_err(|_| QcError::Config(format!("bad centre '{spec}'"))))
                            .collect::<Result<Vec<_>>>()?
                    };
                    Some(directed_search(base, &center, e1, &[d0, (d0 * d1).sqrt(), d1])?)
                }
            };
            let mut csv = String::from(trial_csv_header());
            for (i, t) in battery.trials.iter().enumerate() {
                csv.push_str(&trial_csv_row(i, t));
            }
            m.write(with_suffix(&args.out, ".csv"), csv)?;
            decreased = battery.min_delta_k < RANK_ONE_FLOOR
                || directed.as_ref().is_some_and(|t| t.delta_k < RANK_ONE_FLOOR);
            println!(
                "{}: {} rank-one trials, min ΔK_∞ = {:e} (trial {}), all converged: {}",
                loaded.label(),
                battery.trials.len(),
                battery.min_delta_k,
                battery.witness,
                battery.all_converged
            );
            if let Some(t) = &directed {
                println!("directed search at {:?}: ΔK_∞ = {:e} with δ = {:e}", t.center, t.delta_k, t.delta);
            }
            json!({
                "source": loaded.label(),
                "kind": args.kind,
                "config": cfg,
                "floor": RANK_ONE_FLOOR,
                "min_delta_k": battery.min_delta_k,
                "all_converged": battery.all_converged,
                "witness_index": battery.witness,
                "witness": battery.trials[battery.witness],
                "directed": directed,
                "verdict": if decreased { "decreasing variation found" } else { "no decreasing variation found" },
            })
        }
        VaryKind::Normal => {
            let rows = normal_battery(base, &lo, &hi, args)?;
            let mut csv = String::from(trial_csv_header());
            for r in &rows {
                match &r.outcome {
                    Ok(t) => csv.push_str(&trial_csv_row(r.index, t)),
                    Err(note) => csv.push_str(&format!("{},skipped,,,,,,,,,,,,\"{}\"\n", r.index, note.replace('"', "'"))),
                }
            }
            m.write(with_suffix(&args.out, ".csv"), csv)?;
            let measured: Vec<&VariationTrial> = rows
                .iter()
                .filter_map(|r| r.outcome.as_ref().ok())
                .filter(|t| t.status == qcinf_core::variations::TrialStatus::Measured)
                .collect();
            let degenerate = rows.iter().filter_map(|r| r.outcome.as_ref().ok()).count() - measured.len();
            let skipped = rows.len() - measured.len() - degenerate;
            let witness = measured.iter().fold(None::<&VariationTrial>, |w, t| match w {
                Some(w) if w.delta_k <= t.delta_k => Some(w),
                _ => Some(t),
            });
            decreased = witness.is_some_and(|t| t.delta_k < RANK_ONE_FLOOR);
            println!(
                "{}: {} normal-free trials, {} measured, {} degenerate, {} skipped, min ΔK_∞ = {}",
                loaded.label(),
                rows.len(),
                measured.len(),
                degenerate,
                skipped,
                witness.map_or("n/a".to_string(), |t| format!("{:e}", t.delta_k))
            );
            json!({
                "source": loaded.label(),
                "kind": args.kind,
                "trials": rows.len(),
                "seed": args.seed,
                "radius_range": args.radius,
                "delta_range": args.delta,
                "measured": measured.len(),
                "degenerate": degenerate,
                "skipped": skipped,
                "min_delta_k": witness.map(|t| t.delta_k),
                "witness": witness,
            })
        }
    };
    m.write(with_suffix(&args.out, ".json"), pretty(&summary))?;
    if args.check && decreased {
        eprintln!("a variation decreased the sup of the dilation; see the witness in {}", with_suffix(&args.out, ".json").display());
        return Ok(EXIT_CHECK);
    }
    Ok(EXIT_OK)
}

pub fn counterexample(args: &CounterexampleArgs, m: &mut RunManifest) -> Result<i32> {
    let r = counterexample_report(args.gamma, args.trials, args.seed)?;
    println!("{:<34} {}", "map", "sup K over the punctured unit disc");
    println!("{:<34} {}", "identity", r.k_identity);
    println!("{:<34} {} (closed form {})", format!("|x|^γ x, γ = {}", r.gamma), r.k_power, r.k_power_closed_form);
    println!("{:<34} {:e}", "boundary mismatch on |x| = 1", r.boundary_mismatch);
    println!("{:<34} {:e}", "|u(x)| at |x| = 1e-8", r.puncture_value);
    println!("{:<34} {} trials, min ΔK_∞ = {:e}", "rank-one battery", r.battery_trials, r.battery_min_delta_k);
    println!("K_∞(id) vs K_∞(u^γ): {}", r.comparison);
    println!("{}", r.verdict);
    if let Some(out) = &args.out {
        m.write(with_suffix(out, ".json"), pretty(&r))?;
    }
    Ok(if r.battery_passed { EXIT_OK } else { EXIT_CHECK })
}

pub fn maps_list(json_out: bool) -> Result<i32> {
    let entries = catalog();
    if json_out {
        print!("{}", pretty(&entries));
        return Ok(EXIT_OK);
    }
    println!("{:<16} {:<4} {:<4} {:<38} {}", "name", "n", "N", "default parameters", "description");
    for e in entries {
        println!("{:<16} {:<4} {:<4} {:<38} {}", e.name, e.n, e.big_n, e.params, e.description);
    }
    Ok(EXIT_OK)
}
