//! End-to-end acceptance run. Every criterion is evaluated even when an
//! earlier one fails; each prints one PASS or FAIL line and the test fails
//! if any of them did.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use homog_core::coefficients::{constant_identity, sine_1d};
use homog_core::corrector::{differentiate, solve_corrector, CorrectorOptions, CorrectorTarget, MixingEstimate};
use homog_core::effective::{effective_from_corrector, EffectiveModel};
use homog_core::ergodic::{mixing_rate, InvariantMeasureEstimate};
use homog_core::feynman_kac::{EllipticData, ParabolicData, Problem};
use homog_core::field::ScalarFn;
use homog_core::{DomainSpec, ScalarForm, Serial, SimConfig, Torus};
use serde_json::Value;

type Verdict = (bool, String);

fn sim(step: f64, horizon: f64, n_paths: usize, seed: u64) -> SimConfig {
    SimConfig {
        step,
        horizon,
        n_paths,
        seed,
        ..SimConfig::default()
    }
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

/// Runs the binary and returns its exit code.
fn homog(args: &[&str], config_file: Option<&Path>, out: &Path) -> i32 {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_homog"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = config_file {
        cmd.arg("--config").arg(c);
    }
    let output = cmd.output().expect("spawn homog");
    if !output.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&output.stderr));
    }
    output.status.code().unwrap_or(-1)
}

fn read_json(path: &Path) -> Value {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn route<'a>(effective: &'a Value, name: &str) -> &'a Value {
    effective["routes"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["route"] == name)
        .unwrap_or_else(|| panic!("route {name} missing"))
}

/// `|b_i| <= 3 se_i` for every component, counting `0 <= 3 * 0`.
fn drift_within_3sigma(model: &Value) -> bool {
    floats(&model["drift_b"]).iter().zip(floats(&model["drift_b_stderr"])).all(|(b, s)| b.abs() <= 3.0 * s)
}

fn max_identity_deviation(cov: &[f64], n: usize) -> f64 {
    cov.iter()
        .enumerate()
        .map(|(k, v)| (v - if k / n == k % n { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max)
}

/// Every file under `dir` except the manifest, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, acc: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, acc);
            } else if path.file_name().unwrap() != "manifest.json" {
                acc.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(dir, dir, &mut acc);
    acc
}

fn sqrt3() -> f64 {
    3f64.sqrt()
}

// ---- criteria -------------------------------------------------------------

fn constant_identity_effective(out: &Path) -> Verdict {
    let started = Instant::now();
    let code = homog(&["effective"], Some(&config("constant_identity.toml")), out);
    let elapsed = started.elapsed().as_secs_f64();
    if code != 0 {
        return (false, format!("exit code {code}"));
    }
    let eff = read_json(&out.join("effective.json"));
    let mut ok = elapsed < 120.0;
    let mut detail = format!("runtime {elapsed:.1}s");
    for name in ["corrector", "long_time"] {
        let model = &route(&eff, name)["model"];
        let dev = max_identity_deviation(&floats(&model["cov_a"]), 2);
        let drift = drift_within_3sigma(model);
        ok &= dev <= 0.03 && drift;
        detail += &format!("; {name}: max |a - I| {dev:.4}, b within 3 sigma {drift}");
    }
    (ok, detail)
}

fn sine_harmonic_mean(out: &Path) -> Verdict {
    let code = homog(&["effective"], Some(&config("sine_1d.toml")), out);
    if code != 0 {
        return (false, format!("exit code {code}"));
    }
    let eff = read_json(&out.join("effective.json"));
    let corrector = floats(&route(&eff, "corrector")["model"]["cov_a"])[0];
    let long_time = route(&eff, "long_time");
    let lt = floats(&long_time["model"]["cov_a"])[0];
    let cc = &long_time["cross_check"];
    let rc = (corrector / sqrt3() - 1.0).abs();
    let rl = (lt / sqrt3() - 1.0).abs();
    let max_z = cc["max_z"].as_f64().unwrap();
    let ok = rc <= 0.02 && rl <= 0.05 && max_z <= 3.0;
    (ok, format!("corrector {corrector:.4} ({:.2}%), long-time {lt:.4} ({:.2}%), cross-check max z {max_z:.2}", 100.0 * rc, 100.0 * rl))
}

fn elliptic_calibration() -> Verdict {
    let data = EllipticData::from_forms(&ScalarForm::constant(1.0), &ScalarForm::constant(1.0));
    let minus_one = ScalarForm::constant(-1.0);
    let cases = [
        ("sine, eps 0.5", sine_1d().with_potential_e(&minus_one), 0.5, DomainSpec::interval(-1.0, 1.0), vec![0.3]),
        (
            "identity 2d, eps 1",
            constant_identity(Torus::cube(2, 1.0).unwrap()).with_potential_e(&minus_one),
            1.0,
            DomainSpec::Ball { center: vec![0.0, 0.0], radius: 1.0 },
            vec![0.2, -0.4],
        ),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (k, (name, set, eps, domain, x)) in cases.iter().enumerate() {
        let problem = Problem::Elliptic { set, epsilon: *eps, domain, data: &data };
        let r = problem.solve(x, &sim(1e-3, 1.0, 10_000, 100 + k as u64), &Serial).unwrap();
        let pass = (r.value - 1.0).abs() <= 3.0 * r.stderr + 1e-12;
        ok &= pass;
        detail.push(format!("{name}: {:.6} +- {:.1e}", r.value, r.stderr));
    }
    (ok, detail.join("; "))
}

fn cosh_oracle() -> Verdict {
    let model = EffectiveModel::analytic(vec![1.0], vec![0.0]).unwrap();
    let data = EllipticData::from_forms(&ScalarForm::zero(), &ScalarForm::constant(1.0));
    let domain = DomainSpec::interval(-1.0, 1.0);
    let problem = Problem::EllipticHomogenized { model: &model, domain: &domain, data: &data, pi_e: -1.0 };
    let mut ok = true;
    let mut detail = Vec::new();
    for (k, x) in [0.0, 0.5, -0.5].into_iter().enumerate() {
        let r = problem.solve_extrapolated(&[x], &sim(2e-3, 1.0, 40_000, 200 + k as u64), &Serial).unwrap();
        let exact = (x * 2f64.sqrt()).cosh() / 2f64.sqrt().cosh();
        let rel = (r.value / exact - 1.0).abs();
        ok &= rel <= 0.02;
        detail.push(format!("x={x}: {:.4} vs {exact:.4} ({:.2}%)", r.value, 100.0 * rel));
    }
    (ok, detail.join("; "))
}

fn heat_equation(out: &Path) -> Verdict {
    let code = homog(&["parabolic"], Some(&config("constant_identity.toml")), out);
    if code != 0 {
        return (false, format!("exit code {code}"));
    }
    let p = read_json(&out.join("parabolic.json"));
    let t = p["t"].as_f64().unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for point in p["points"].as_array().unwrap() {
        let x = floats(&point["x"]);
        let exact = x.iter().map(|v| v * v).sum::<f64>() + 2.0 * t;
        let value = point["value"].as_f64().unwrap();
        let rel = (value / exact - 1.0).abs();
        ok &= rel <= 0.02;
        detail.push(format!("x={x:?}: {value:.4} vs {exact:.4} ({:.2}%)", 100.0 * rel));
    }
    (ok, detail.join("; "))
}

fn mixing_oracle() -> Verdict {
    let tau = 10.0;
    let set = constant_identity(Torus::new(vec![tau]).unwrap());
    let f: ScalarFn = Arc::new(move |x: &[f64]| (2.0 * PI * x[0] / tau).cos());
    let cfg = SimConfig {
        store_stride: 25,
        ..sim(0.01, 10.0, 4000, 300)
    };
    let d = mixing_rate(&set, &f, 1.0, (&[0.0], &[5.0]), &cfg, &Serial).unwrap();
    let exact = 0.5 * (2.0 * PI / tau).powi(2);
    let rel = (d.fitted_rate_gamma / exact - 1.0).abs();
    let ok = rel <= 0.15 && d.fit_r2 > 0.95;
    (ok, format!("rate {:.4} vs {exact:.5} ({:.1}%), R^2 {:.4}", d.fitted_rate_gamma, 100.0 * rel, d.fit_r2))
}

fn degenerate_example(out: &Path) -> Verdict {
    let code = homog(&["example2d"], None, out);
    if code != 0 {
        return (false, format!("exit code {code}"));
    }
    let c = read_json(&out.join("example2d.json"));
    let hit = c["hitting_min_fraction"].as_f64().unwrap();
    let dev = c["invariant_max_relative_deviation"].as_f64().unwrap();
    let z = floats(&c["pi_b_z"]);
    let r2 = c["clt_linearity_r2"].as_f64().unwrap();
    let p = c["clt_min_p_final_time"].as_f64().unwrap();
    let symmetric = c["cov_a_symmetric"].as_bool().unwrap();
    let psd = c["cov_a_psd"].as_bool().unwrap();
    let ok = hit >= 1.0 && dev < 0.05 && z.iter().all(|v| v.abs() <= 3.0) && symmetric && psd && r2 > 0.99 && p > 0.01;
    (
        ok,
        format!("hitting {hit:.2}, max density deviation {:.2}%, pi(b) z {z:.2?}, symmetric {symmetric}, psd {psd}, CLT R^2 {r2:.4}, min p {p:.3}", 100.0 * dev),
    )
}

fn epsilon_convergence(out: &Path) -> Verdict {
    let code = homog(&["study"], Some(&config("sine_1d.toml")), out);
    if code != 0 {
        return (false, format!("exit code {code}"));
    }
    let s = read_json(&out.join("study.json"));
    let decreasing = s["strictly_decreasing_2sigma"].as_bool().unwrap();
    let k = (2.0 / sqrt3()).sqrt();
    let mut ok = decreasing;
    let mut detail = vec![format!("strictly decreasing beyond 2 sigma {decreasing}")];
    let mut seen = Vec::new();
    for row in s["report"]["rows"].as_array().unwrap() {
        let x = floats(&row["x"])[0];
        if seen.contains(&x.to_bits()) {
            continue;
        }
        seen.push(x.to_bits());
        let u0 = row["u0"].as_f64().unwrap();
        let exact = (k * x).cosh() / k.cosh();
        let rel = (u0 / exact - 1.0).abs();
        ok &= rel <= 0.03;
        detail.push(format!("x={x}: u0 {u0:.4} vs {exact:.4} ({:.2}%)", 100.0 * rel));
    }
    (ok, detail.join("; "))
}

fn determinism(root: &Path) -> Verdict {
    let cfg = config("sine_1d.toml");
    let run = |dir: &Path, threads: &str| -> i32 {
        let mut code = 0;
        for sub in ["effective", "clt"] {
            code = code.max(homog(&[sub, "--budget", "smoke", "--threads", threads], Some(&cfg), dir));
        }
        code
    };
    let a = root.join("threads1");
    let b = root.join("threads2");
    let codes = (run(&a, "1"), run(&b, "2"));
    if codes != (0, 0) {
        return (false, format!("exit codes {codes:?}"));
    }
    let first = snapshot(&a);
    let same_threads = first == snapshot(&b);
    let rerun = run(&a, "1") == 0;
    let cached = read_json(&a.join("manifest.json"))["cache"].as_array().unwrap().iter().all(|e| e["hit"] == true);
    let same_rerun = first == snapshot(&a);
    let ok = same_threads && rerun && cached && same_rerun && !first.is_empty();
    (ok, format!("{} files; 1 vs 2 threads identical {same_threads}; cached re-run identical {same_rerun}, all stages hit {cached}", first.len()))
}

fn gauge_and_weak_order() -> Verdict {
    // Gauge: constant shifts of solved correctors leave every coefficient bitwise unchanged.
    let set = sine_1d().with_potential_d_fn(Arc::new(|x: &[f64]| (2.0 * PI * x[0]).sin()));
    let opts = CorrectorOptions {
        shape: vec![32],
        n_paths: 500,
        step: 1e-3,
        seed: 400,
        mixing: Some(MixingEstimate { rate: 32.0, prefactor: 1.0 }),
        centering: vec![0.0],
        ..CorrectorOptions::default()
    };
    let beta = differentiate(&solve_corrector(&set, CorrectorTarget::Drift, &opts, &Serial).unwrap(), 1.0 / 32.0).unwrap();
    let delta_opts = CorrectorOptions { seed: 401, ..opts };
    let delta = differentiate(&solve_corrector(&set, CorrectorTarget::Potential, &delta_opts, &Serial).unwrap(), 1.0 / 32.0).unwrap();
    let pi = InvariantMeasureEstimate::uniform(set.torus().clone(), vec![32]);
    let m0 = effective_from_corrector(&set, &beta, Some(&delta), &pi, true).unwrap();
    let mut gauge = true;
    for (sb, sd) in [(1.0, -2.0), (-7.5, 0.25), (123.0, 45.0)] {
        let m1 = effective_from_corrector(&set, &beta.shifted(&[sb]), Some(&delta.shifted(&[sd])), &pi, true).unwrap();
        gauge &= m0.cov_a == m1.cov_a
            && m0.drift_b == m1.drift_b
            && m0.parabolic_drift == m1.parabolic_drift
            && m0.effective_potential.map(f64::to_bits) == m1.effective_potential.map(f64::to_bits);
    }

    // Weak order of the parabolic scheme with a space-dependent potential.
    let torus = Torus::cube(2, 1.0).unwrap();
    let set = constant_identity(torus.clone()).with_potential_e_fn(Arc::new(|x: &[f64]| -1.0 + 0.5 * (2.0 * PI * x[0]).cos()));
    let zero: ScalarFn = Arc::new(|_: &[f64]| 0.0);
    let g: ScalarFn = Arc::new(|x: &[f64]| (2.0 * PI * x[1]).cos() + 2.0);
    let data = ParabolicData::new(zero.clone(), g);
    let problem = Problem::Parabolic { set: &set, epsilon: 1.0, data: &data, t: 1.0 };
    let ladder = problem.step_ladder(&[0.1, 0.2], &sim(0.1, 1.0, 4000, 402), 4, &Serial).unwrap();
    let order = ladder.order;

    // Without potential or drift the scheme is exact: the ladder differences vanish.
    let heat = constant_identity(torus).with_potential_e(&ScalarForm::zero());
    let squared: ScalarFn = Arc::new(|x: &[f64]| x[0] * x[0] + x[1] * x[1]);
    let heat_data = ParabolicData::new(zero, squared);
    let heat_problem = Problem::Parabolic { set: &heat, epsilon: 1.0, data: &heat_data, t: 1.0 };
    let heat_ladder = heat_problem.step_ladder(&[0.1, 0.2], &sim(0.1, 1.0, 1000, 403), 4, &Serial).unwrap();
    let exact = heat_ladder.differences.iter().all(|d| d.abs() < 1e-10);

    let ok = gauge && order.is_some_and(|o| o >= 0.9) && exact;
    (ok, format!("gauge bitwise {gauge}; weak order {order:.2?}; exact constant case {exact}"))
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let ci = tmp.path().join("constant_identity");
    let sine = tmp.path().join("sine");
    let ex2d = tmp.path().join("example2d");
    let det = tmp.path().join("determinism");

    let criteria: Vec<(&str, Box<dyn FnOnce() -> Verdict>)> = vec![
        ("constant coefficients give identity covariance and zero drift", Box::new(|| constant_identity_effective(&ci))),
        ("sine covariance is the harmonic mean", Box::new(|| sine_harmonic_mean(&sine))),
        ("elliptic calibration returns one", Box::new(elliptic_calibration)),
        ("homogenized elliptic problem matches cosh", Box::new(cosh_oracle)),
        ("heat equation matches |x|^2 + 2t", Box::new(|| heat_equation(&ci))),
        ("Brownian mixing rate matches the spectral gap", Box::new(mixing_oracle)),
        ("degenerate 2D example end to end", Box::new(|| degenerate_example(&ex2d))),
        ("epsilon-problems converge to the homogenized limit", Box::new(|| epsilon_convergence(&sine))),
        ("outputs are deterministic across thread counts", Box::new(|| determinism(&det))),
        ("gauge invariance and weak order", Box::new(gauge_and_weak_order)),
    ];

    let mut failed = Vec::new();
    for (name, check) in criteria {
        let started = Instant::now();
        let (pass, detail) = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        println!("{} {name}: {detail} [{:.0}s]", if pass { "PASS" } else { "FAIL" }, started.elapsed().as_secs_f64());
        if !pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
