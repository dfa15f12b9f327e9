//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use qcinf_cli::verify::{degenerate_gradient, k_p_error, k_pp_error, square_gradient, trial_gradient, trial_rng};
use qcinf_core::analytic_maps::{catalog, complex_exp_map_jet, exp3d_map_jet, power_map_jet, AnalyticMap, PointJet};
use qcinf_core::dilation_calculus::{dilation, dilation_gradient, identity_n_equals_n};
use qcinf_core::grid_domain::{Grid, SampledMap};
use qcinf_core::pde_residuals::{
    dilation_derivative, geometric_tangential, infinity_laplacian_residual, q_p_expanded, tangential_residual, Jet2,
};
use qcinf_core::phase_analysis::{classify_gradient, phase_map};
use qcinf_core::sampling::random_hessian;
use qcinf_core::tensor_core::{ahlfors, projections, symmetric_spectrum, Matrix, Tensor};
use qcinf_core::variations::{directed_search, rank_one_battery, BatteryConfig, RANK_ONE_FLOOR};
use rand::Rng;
use serde_json::Value;

const SEED: u64 = 20_240_601;
const TAU: f64 = 1e-8;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn qcinf(dir: &Path, threads: &str, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_qcinf"))
        .args(args)
        .current_dir(dir)
        .env("QCINF_THREADS", threads)
        .output()
        .expect("qcinf runs")
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let worst = (0..1000).map(|i| k_p_error(&trial_gradient(SEED, i))).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-6 && secs < 5.0,
        format!("K_P vs central FD, 1000 gradients: max rel err {worst:.2e} (≤ 1e-6), {secs:.2} s (< 5 s)"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let random = (0..100).map(|i| k_pp_error(&trial_gradient(SEED, i), TAU, None)).fold(0.0, f64::max);
    let degenerate = (0..100).map(|i| k_pp_error(&degenerate_gradient(SEED, i), TAU, None)).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        random <= 1e-5 && degenerate <= 1e-5 && secs < 10.0,
        format!(
            "projected reduced K_PP vs projected FD Hessian, 100 random gradients: max rel err {random:.2e}, \
             100 with singular S(g): {degenerate:.2e} (≤ 1e-5), {secs:.2} s (< 10 s)"
        ),
    )
}

fn criterion_3() -> Outcome {
    let worst = (0..100).map(|i| identity_n_equals_n(&square_gradient(SEED, i)).unwrap()).fold(0.0, f64::max);
    outcome(worst <= 1e-9, format!("square identity, 100 gradients with cond(PᵀP) < 1e2: max residual {worst:.2e} (≤ 1e-9)"))
}

fn criterion_4() -> Outcome {
    let mut worst = 0.0f64;
    for gamma in [0.5, 1.0, 2.0, 3.0] {
        let expected = 2.0 + gamma * gamma / (gamma + 1.0);
        let mut rng = trial_rng(SEED, (gamma * 10.0) as usize);
        for _ in 0..1000 {
            let r = 0.01 + 0.99 * rng.random::<f64>();
            let t = std::f64::consts::TAU * rng.random::<f64>();
            let j = power_map_jet(&[r * t.cos(), r * t.sin()], gamma).unwrap();
            worst = worst.max((dilation(&j.du).unwrap() - expected).abs());
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let out = qcinf(dir.path(), "1", &["counterexample", "--gamma", "1", "--trials", "8"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let printed = stdout.contains("2 < 2.5");
    outcome(
        worst <= 1e-10 && printed && out.status.success(),
        format!(
            "K(Du^γ) = 2 + γ²/(γ+1) at 4000 points: max abs err {worst:.2e} (≤ 1e-10); counterexample prints \"2 < 2.5\": {printed}"
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut ones = 0;
    for i in 0..10_000 {
        let p = trial_gradient(SEED ^ 5, i);
        if classify_gradient(&p, TAU).unwrap().label == 1 {
            ones += 1;
        }
    }
    let mut grid_nodes = 0;
    let mut grid_ones = 0;
    for e in catalog() {
        let map = AnalyticMap::from_name(e.name, "").unwrap();
        let (lo, hi) = map.default_box();
        let points = if map.dims().0 == 3 { 9 } else { 17 };
        let src = SampledMap::new(&map, Grid::uniform(&lo, &hi, points).unwrap()).unwrap();
        let pm = phase_map(&src, TAU).unwrap();
        grid_nodes += pm.classified();
        grid_ones += pm.label_counts()[1];
    }
    outcome(
        ones == 0 && grid_ones == 0,
        format!("label 1 at τ = 1e-8: {ones} of 10000 random gradients, {grid_ones} of {grid_nodes} catalog grid nodes"),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let power = AnalyticMap::power(1.0);
    let battery = rank_one_battery(&power, &BatteryConfig::for_map(&power, 200, SEED)).unwrap();
    let cubic = AnalyticMap::from_name("cubic-y", "").unwrap();
    let directed = directed_search(&cubic, &[1.9, 1.5], 0.05, &[1e-2, 1e-1]).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        battery.min_delta_k >= RANK_ONE_FLOOR && directed.delta_k <= -1e-6 && secs < 120.0,
        format!(
            "u^γ (γ = 1), 200 rank-one trials: min ΔK_∞ {:.3e} (≥ -1e-8, all converged: {}); (x³, y) directed: ΔK_∞ {:.3e} (≤ -1e-6); {secs:.1} s (< 120 s)",
            battery.min_delta_k, battery.all_converged, directed.delta_k
        ),
    )
}

fn criterion_7() -> Outcome {
    let (mut eig_err, mut mu2, mut labels_ok) = (0.0f64, 0.0f64, true);
    for k in 0..100 {
        let x = -1.0 + 2.0 * k as f64 / 99.0;
        let j = exp3d_map_jet(&[x, 0.0, 0.0]).unwrap();
        let g = j.du.gram();
        let e2 = (2.0 * x).exp();
        let vals = symmetric_spectrum(&g).unwrap().values;
        for (i, v) in vals.iter().enumerate() {
            let want = (i + 1) as f64 * e2;
            eig_err = eig_err.max((v - want).abs() / want);
        }
        let mu = symmetric_spectrum(&ahlfors(&g).unwrap()).unwrap().values;
        mu2 = mu2.max(mu[1].abs());
        labels_ok &= classify_gradient(&j.du, TAU).unwrap().label == 2;
    }
    outcome(
        eig_err <= 1e-10 && mu2 <= 1e-12 && labels_ok,
        format!("exp3d on y = z = 0, 100 points: eig(g) rel err {eig_err:.2e} (≤ 1e-10), max |μ₂| {mu2:.2e} (≤ 1e-12), all labels 2: {labels_ok}"),
    )
}

fn criterion_8() -> Outcome {
    let mut sup = 0.0f64;
    let m = 61;
    for a in 0..m {
        for b in 0..m {
            let x = [-0.3 + 0.6 * a as f64 / (m - 1) as f64, -0.3 + 0.6 * b as f64 / (m - 1) as f64];
            let j = complex_exp_map_jet(&x).unwrap();
            sup = sup.max(norm(&infinity_laplacian_residual(&j, TAU).unwrap()));
        }
    }
    let rank = |x: f64, y: f64| projections(&complex_exp_map_jet(&[x, y]).unwrap().du, TAU).unwrap().eps_rank;
    let diagonal = (0..100).all(|k| {
        let t = -0.3 + 0.6 * k as f64 / 99.0;
        rank(t, t) == 1
    });
    let mut rng = trial_rng(SEED, 8);
    let mut off = 0;
    let mut off_ok = true;
    while off < 100 {
        let (x, y) = (-0.3 + 0.6 * rng.random::<f64>(), -0.3 + 0.6 * rng.random::<f64>());
        if (x - y).abs() < 1e-3 {
            continue;
        }
        off_ok &= rank(x, y) == 2;
        off += 1;
    }
    outcome(
        diagonal && off_ok && sup.is_finite(),
        format!(
            "e^{{ix}} − e^{{iy}} on |x|,|y| ≤ 0.3 (61² exact jets): sup|Δ_∞u| = {sup:.3e}; ε-rank 1 on the diagonal: {diagonal}, 2 at 100 off-diagonal points: {off_ok}"
        ),
    )
}

fn criterion_9() -> Outcome {
    let ps = [10.0, 1e2, 1e3, 1e4];
    let mut slopes = Vec::new();
    for i in 0..20 {
        let p = trial_gradient(SEED ^ 9, i);
        let h = random_hessian(&mut trial_rng(SEED ^ 99, i), p.rows(), p.cols());
        let j = Jet2::new(vec![0.0; p.cols()], vec![0.0; p.rows()], p, h).unwrap();
        let t = tangential_residual(&j).unwrap();
        let pts: Vec<(f64, f64)> = ps
            .iter()
            .map(|&pp| {
                let q = q_p_expanded(&j, pp).unwrap();
                let e: Vec<f64> = q.rescaled.iter().zip(&t).map(|(a, b)| a - b).collect();
                (pp.ln(), norm(&e).ln())
            })
            .collect();
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / 4.0;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / 4.0;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        slopes.push(sxy / sxx);
    }
    let lo = slopes.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = slopes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    outcome(
        slopes.iter().all(|s| (s + 1.0).abs() <= 0.1),
        format!("rescaled Q_p → tangential, 20 jets, p ∈ {{1e1..1e4}}: log-log slopes in [{lo:.4}, {hi:.4}] (−1 ± 0.1)"),
    )
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("config.json"),
        r#"{"schema": 1, "map": "identity", "lo": [0, 0], "hi": [1, 1], "points": 33,
            "p_schedule": [2, 4, 8, 16, 32, 64], "self_test": 8}"#,
    )
    .unwrap();
    let start = Instant::now();
    let out = qcinf(dir.path(), "1", &["solve", "--config", "config.json", "--out", "identity"]);
    let secs = start.elapsed().as_secs_f64();
    if !out.status.success() {
        return outcome(false, format!("solve exited with {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    let s: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("identity.json")).unwrap()).unwrap();
    let excess = s["sup_k_minus_n"].as_f64().unwrap().abs();
    let dist = s["distance_to_boundary_map"].as_f64().unwrap();
    let monotone = s["all_stages_monotone"].as_bool().unwrap();
    let grad = s["result"]["gradient_check"]["max_rel_error"].as_f64().unwrap();
    let p_max = s["result"]["stages"].as_array().unwrap().last().unwrap()["p"].as_f64().unwrap();
    outcome(
        excess <= 0.05 && dist <= 1e-3 && monotone && grad <= 1e-6 && p_max == 64.0 && secs < 180.0,
        format!(
            "identity boundary, 33², p → {p_max}: sup|K − 2| {excess:.2e} (≤ 0.05), sup-distance to identity {dist:.2e} (≤ 1e-3), \
             monotone: {monotone}, gradient self-test {grad:.2e} (≤ 1e-6), {secs:.1} s single-threaded (< 180 s)"
        ),
    )
}

/// Hessian correction making `D(K∘Du)` orthogonal to every row of `w`.
fn force_dk(p: &Matrix, h: &Tensor, w: &[Vec<f64>]) -> Tensor {
    let (big, n) = (p.rows(), p.cols());
    let mut basis = Vec::new();
    for a in 0..big {
        for i in 0..n {
            for j in i..n {
                let mut e = Tensor::zeros(&[big, n, n]);
                e.set(&[a, i, j], 1.0);
                e.set(&[a, j, i], 1.0);
                basis.push(((a, i, j), e));
            }
        }
    }
    let dk = |t: &Tensor| {
        let jet = Jet2::new(vec![0.0; n], vec![0.0; big], p.clone(), t.clone()).unwrap();
        dilation_derivative(&jet).unwrap()
    };
    // Rows of A: w_k · DK(E_b).
    let cols: Vec<Vec<f64>> = basis.iter().map(|(_, e)| dk(e)).collect();
    let a = Matrix::from_fn(w.len(), basis.len(), |k, b| w[k].iter().zip(&cols[b]).map(|(x, y)| x * y).sum());
    let coords: Vec<f64> = basis.iter().map(|((al, i, j), _)| h.get(&[*al, *i, *j])).collect();
    let ah = a.mat_vec(&coords);
    let aat = a.matmul(&a.transpose());
    let lam = aat.inverse().unwrap().mat_vec(&ah);
    let corr = a.tr_mat_vec(&lam);
    let mut out = Tensor::zeros(&[big, n, n]);
    for (((al, i, j), _), (c, d)) in basis.iter().zip(coords.iter().zip(&corr)) {
        out.set(&[*al, *i, *j], c - d);
        out.set(&[*al, *j, *i], c - d);
    }
    out
}

fn co_vanish(j: &Jet2) -> (bool, bool) {
    let t = norm(&tangential_residual(j).unwrap());
    let g = norm(&geometric_tangential(j).unwrap());
    let kp = dilation_gradient(&j.du).unwrap().norm();
    let s = ahlfors(&j.du.gram()).unwrap().norm();
    let h = j.d2u.norm();
    (t <= 1e-8 * (kp * kp * h).max(1.0), g <= 1e-8 * (s * kp * h).max(1.0))
}

fn criterion_11() -> Outcome {
    let (mut agree, mut total, mut vanishing) = (0, 0, 0);
    let mut tally = |j: &Jet2| {
        let (a, b) = co_vanish(j);
        total += 1;
        agree += usize::from(a == b);
        vanishing += usize::from(a && b);
    };
    for i in 0..1000 {
        let p = trial_gradient(SEED ^ 11, i);
        let h = random_hessian(&mut trial_rng(SEED ^ 111, i), p.rows(), p.cols());
        tally(&Jet2::new(vec![0.0; p.cols()], vec![0.0; p.rows()], p, h).unwrap());
    }
    // Jets with D(K∘Du) forced to zero, or into the null space of a singular S(g).
    for i in 0..200 {
        let (p, w) = if i % 2 == 0 {
            let p = trial_gradient(SEED ^ 12, i);
            let w = (0..p.cols()).map(|k| (0..p.cols()).map(|l| f64::from(u8::from(k == l))).collect()).collect();
            (p, w)
        } else {
            let p = degenerate_gradient(SEED ^ 12, i);
            let vecs = symmetric_spectrum(&ahlfors(&p.gram()).unwrap()).unwrap().vectors;
            (p, vec![vecs.col(0), vecs.col(2)])
        };
        let h = force_dk(&p, &random_hessian(&mut trial_rng(SEED ^ 121, i), p.rows(), p.cols()), &w);
        tally(&Jet2::new(vec![0.0; p.cols()], vec![0.0; p.rows()], p, h).unwrap());
    }
    let constructed_vanishing = vanishing;
    let mut map_points = 0;
    let mut map_agree = 0;
    for e in catalog() {
        let map = AnalyticMap::from_name(e.name, "").unwrap();
        let (lo, hi) = map.default_box();
        let grid = Grid::uniform(&lo, &hi, if map.dims().0 == 3 { 7 } else { 13 }).unwrap();
        for v in 0..grid.len() {
            let x = grid.point(v);
            let Ok(j) = map.jet(&x) else { continue };
            if dilation(&j.du).is_err() {
                continue;
            }
            let (a, b) = co_vanish(&j);
            map_points += 1;
            map_agree += usize::from(a == b);
        }
    }
    outcome(
        agree == total && map_agree == map_points && constructed_vanishing >= 200,
        format!(
            "tangential ⟺ S(g)·D(K∘Du) vanish together (tol 1e-8): {agree}/{total} random and constructed jets \
             ({constructed_vanishing} vanishing), {map_agree}/{map_points} catalog grid jets"
        ),
    )
}

fn criterion_12() -> Outcome {
    let runs: [&[&str]; 6] = [
        &["verify", "--trials", "50", "--seed", "3", "--out", "verify"],
        &["residual", "--map", "power", "--gamma", "1", "--grid", "33", "--out", "residual"],
        &["phase", "--map", "exp3d", "--grid", "9", "--out", "phase"],
        &["vary", "--map", "power", "--gamma", "1", "--kind", "rank-one", "--trials", "6", "--seed", "4", "--out", "vary"],
        &["solve", "--config", "annulus.json", "--out", "solve"],
        &["counterexample", "--gamma", "1", "--trials", "4", "--out", "counterexample"],
    ];
    let config = r#"{"schema": 1, "map": "power", "params": "gamma=1", "points": 13,
        "hole": {"lo": [-0.25, -0.25], "hi": [0.25, 0.25]}, "p_schedule": [2, 4], "max_iterations": 60,
        "restarts": 1, "seed": 9, "self_test": 2}"#;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut stdout = [Vec::new(), Vec::new()];
    for (d, out) in dirs.iter().zip(stdout.iter_mut()) {
        std::fs::write(d.path().join("annulus.json"), config).unwrap();
        for args in runs {
            let o = qcinf(d.path(), "2", args);
            if !o.status.success() {
                return outcome(false, format!("{args:?} exited with {:?}", o.status.code()));
            }
            out.extend(o.stdout);
        }
    }
    let mut names: Vec<_> = std::fs::read_dir(dirs[0].path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let differing: Vec<String> = names
        .iter()
        .filter(|n| std::fs::read(dirs[0].path().join(n)).ok() != std::fs::read(dirs[1].path().join(n)).ok())
        .map(|n| n.to_string_lossy().into_owned())
        .collect();
    outcome(
        differing.is_empty() && stdout[0] == stdout[1] && names.len() > 6,
        format!("two runs of 6 commands with 2 threads: {} files compared, differing: {differing:?}, stdout identical: {}", names.len(), stdout[0] == stdout[1]),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("derivative correctness", criterion_1),
        ("reduced Hessian correctness", criterion_2),
        ("square identity", criterion_3),
        ("power map dilation constant", criterion_4),
        ("no rank-one phase", criterion_5),
        ("2-d rank-one equivalence", criterion_6),
        ("3-d example", criterion_7),
        ("∞-Laplacian example", criterion_8),
        ("p → ∞ limit", criterion_9),
        ("solver sanity", criterion_10),
        ("geometric equivalence", criterion_11),
        ("determinism", criterion_12),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        failed += usize::from(!o.passed);
        println!("criterion {:>2} {} {name}: {}", i + 1, if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
