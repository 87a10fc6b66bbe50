//! Monte Carlo solution of the cell problem `A beta = g - pi(g)` on a grid,
//! through `beta(x) = -int_0^T E[g(X(x,s)) - pi(g)] ds`.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::ergodic::MixingDiagnostic;
use crate::error::{Error, Result};
use crate::exec::{blocks, Executor};
use crate::field::{grid_node, periodic_interpolate, PeriodicGrid};
use crate::rng::{PathNoise, Stream};
use crate::sde::{check_set, ensure_finite, run_paths, steps_for, Euler};
use crate::stats::MeanVar;
use crate::torus::{ravel, unravel, Torus};

/// Which field the corrector inverts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectorTarget {
    /// Vector corrector `beta` for the drift `b`.
    Drift,
    /// Scalar corrector `delta` for the potential `d`.
    Potential,
}

impl CorrectorTarget {
    pub fn ncomp(&self, dim: usize) -> usize {
        match self {
            CorrectorTarget::Drift => dim,
            CorrectorTarget::Potential => 1,
        }
    }

    /// Evaluates the target field at `x`.
    pub fn eval(&self, set: &CoefficientSet, x: &[f64], out: &mut [f64]) {
        match self {
            CorrectorTarget::Drift => set.drift_b(x, out),
            CorrectorTarget::Potential => out[0] = set.potential_d(x),
        }
    }
}

/// Exponential mixing constants `|P_t f| <= Gamma |f| e^{-gamma t}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingEstimate {
    pub rate: f64,
    pub prefactor: f64,
}

impl From<&MixingDiagnostic> for MixingEstimate {
    fn from(m: &MixingDiagnostic) -> Self {
        Self {
            rate: m.fitted_rate_gamma,
            prefactor: m.fitted_prefactor_gamma.max(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectorOptions {
    /// Grid nodes per axis.
    pub shape: Vec<usize>,
    pub n_paths: usize,
    pub step: f64,
    pub seed: u64,
    pub noise_refinement: u32,
    /// Requested bound on the neglected tail of the time integral.
    pub tail_tolerance: f64,
    pub max_horizon: f64,
    pub mixing: Option<MixingEstimate>,
    /// `pi(g)`, subtracted from the target.
    pub centering: Vec<f64>,
    /// Number of path batches kept for error propagation.
    pub batches: usize,
    /// Fail when any node's standard error exceeds this.
    pub stderr_tolerance: Option<f64>,
}

impl Default for CorrectorOptions {
    fn default() -> Self {
        Self {
            shape: Vec::new(),
            n_paths: 1000,
            step: 1e-3,
            seed: 0,
            noise_refinement: 0,
            tail_tolerance: 1e-3,
            max_horizon: 50.0,
            mixing: None,
            centering: Vec::new(),
            batches: 8,
            stderr_tolerance: None,
        }
    }
}

/// Outcome of the step-doubling check in [`differentiate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RichardsonDiagnostic {
    /// `|D_2k - D_4k| / |D_k - D_2k|`; about 4 for smooth, well-resolved fields.
    pub ratio: f64,
    /// `|D_k - D_2k| / 3`, the leading stencil error of `D_k`.
    pub error_estimate: f64,
    pub max_derivative: f64,
    /// The RMS of `D_k - D_2k` is within twice its RMS batch standard error,
    /// so the ratio reflects Monte Carlo noise rather than stencil error.
    pub noise_dominated: bool,
}

/// Grid-sampled corrector with standard errors and (optionally) its Jacobian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectorField {
    pub torus: Torus,
    pub shape: Vec<usize>,
    pub ncomp: usize,
    pub target: CorrectorTarget,
    /// Node-major values, `ncomp` per node.
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Values computed from disjoint path batches.
    pub batch_values: Vec<Vec<f64>>,
    pub truncation_t: f64,
    pub tail_bound: f64,
    pub n_paths_per_node: usize,
    /// Node-major `ncomp x n` blocks: `D beta` (or the gradient of `delta`).
    pub jacobian: Option<Vec<f64>>,
    pub batch_jacobians: Vec<Vec<f64>>,
    pub stencil_step: Option<f64>,
    pub richardson: Option<RichardsonDiagnostic>,
}

impl CorrectorField {
    /// A field with given node values and no sampling error.
    pub fn from_values(torus: Torus, shape: Vec<usize>, target: CorrectorTarget, values: Vec<f64>) -> Result<Self> {
        let ncomp = target.ncomp(torus.dim());
        PeriodicGrid::new(torus.clone(), shape.clone(), ncomp, values.clone())?;
        Ok(Self {
            stderr: vec![0.0; values.len()],
            torus,
            shape,
            ncomp,
            target,
            values,
            batch_values: Vec::new(),
            truncation_t: 0.0,
            tail_bound: 0.0,
            n_paths_per_node: 0,
            jacobian: None,
            batch_jacobians: Vec::new(),
            stencil_step: None,
            richardson: None,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn node_position(&self, k: usize, out: &mut [f64]) {
        grid_node(&self.torus, &self.shape, k, out)
    }

    fn interp(&self, values: &[f64], ncomp: usize, x: &[f64], out: &mut [f64]) {
        periodic_interpolate(&self.torus, &self.shape, ncomp, values, x, out)
    }

    pub fn interpolate(&self, x: &[f64], out: &mut [f64]) {
        self.interp(&self.values, self.ncomp, x, out)
    }

    pub fn interpolate_batch(&self, b: usize, x: &[f64], out: &mut [f64]) {
        self.interp(&self.batch_values[b], self.ncomp, x, out)
    }

    /// Interpolated Jacobian (`ncomp x n`, row-major) at `x`.
    pub fn interpolate_jacobian(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let j = self.jacobian.as_ref().ok_or(Error::MissingJacobian)?;
        self.interp(j, self.ncomp * self.torus.dim(), x, out);
        Ok(())
    }

    pub fn interpolate_batch_jacobian(&self, b: usize, x: &[f64], out: &mut [f64]) {
        self.interp(&self.batch_jacobians[b], self.ncomp * self.torus.dim(), x, out)
    }

    /// Adds `shift` (one entry per component) to every value; the Jacobian is kept.
    pub fn shifted(&self, shift: &[f64]) -> Self {
        let mut out = self.clone();
        let add = |v: &mut Vec<f64>| {
            for (i, x) in v.iter_mut().enumerate() {
                *x += shift[i % self.ncomp];
            }
        };
        add(&mut out.values);
        out.batch_values.iter_mut().for_each(add);
        out
    }

    pub fn max_stderr(&self) -> f64 {
        self.stderr.iter().fold(0.0, |m, &v| m.max(v))
    }
}

/// Truncation time `T` with `Gamma |g| e^{-gamma T} / gamma <= tol`, capped,
/// and the tail bound actually achieved.
pub fn truncation_time(mixing: &MixingEstimate, g_sup: f64, tol: f64, step: f64, max_horizon: f64) -> (f64, f64) {
    let (g, big) = (mixing.rate, mixing.prefactor);
    let t = libm::log(big * g_sup / (g * tol)) / g;
    let t = t.max(step).min(max_horizon.max(step));
    (t, big * g_sup * libm::exp(-g * t) / g)
}

/// Solves the cell problem at every grid node with common random numbers
/// (path `p` uses the same noise at every node).
pub fn solve_corrector<E: Executor>(set: &CoefficientSet, target: CorrectorTarget, opts: &CorrectorOptions, exec: &E) -> Result<CorrectorField> {
    check_set(set)?;
    let torus = set.torus().clone();
    let n = torus.dim();
    let ncomp = target.ncomp(n);
    if opts.shape.len() != n || opts.shape.iter().any(|&s| s == 0) {
        return Err(Error::InvalidConfig("corrector grid needs one positive node count per axis".into()));
    }
    if opts.centering.len() != ncomp {
        return Err(Error::DimensionMismatch {
            what: "corrector centering",
            expected: ncomp,
            got: opts.centering.len(),
        });
    }
    if opts.n_paths == 0 || !(opts.step > 0.0) || opts.batches == 0 {
        return Err(Error::InvalidConfig("corrector needs n_paths, batches >= 1 and step > 0".into()));
    }
    let nodes: usize = opts.shape.iter().product();
    let mut x = vec![0.0; n];
    let mut g = vec![0.0; ncomp];
    let mut g_sup: f64 = 0.0;
    for k in 0..nodes {
        grid_node(&torus, &opts.shape, k, &mut x);
        target.eval(set, &x, &mut g);
        for c in 0..ncomp {
            g_sup = g_sup.max(libm::fabs(g[c] - opts.centering[c]));
        }
    }
    let (horizon, tail_bound) = if g_sup == 0.0 {
        (opts.step, 0.0)
    } else {
        let mixing = opts.mixing.as_ref().ok_or(Error::MissingMixingEstimate)?;
        if !(mixing.rate > 0.0) {
            return Err(Error::MissingMixingEstimate);
        }
        truncation_time(mixing, g_sup, opts.tail_tolerance, opts.step, opts.max_horizon)
    };
    let n_steps = steps_for(horizon, opts.step);
    let h = opts.step;
    let batch_ranges = blocks(opts.n_paths, opts.batches);
    let per_node = run_paths(exec, nodes, |node| {
        let mut start = vec![0.0; n];
        grid_node(&torus, &opts.shape, node, &mut start);
        let mut acc = vec![MeanVar::new(); ncomp];
        let mut batch_acc = vec![vec![MeanVar::new(); ncomp]; batch_ranges.len()];
        let mut gv = vec![0.0; ncomp];
        let mut integral = vec![0.0; ncomp];
        for (b, range) in batch_ranges.iter().enumerate() {
            for p in range.clone() {
                let mut euler = Euler::new(set, 0.0, h, opts.noise_refinement, PathNoise::new(opts.seed, p, Stream::Drive));
                let mut x = start.clone();
                integral.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..=n_steps {
                    target.eval(set, &x, &mut gv);
                    let w = if k == 0 || k == n_steps { 0.5 * h } else { h };
                    for c in 0..ncomp {
                        integral[c] += w * (gv[c] - opts.centering[c]);
                    }
                    if k == n_steps {
                        break;
                    }
                    euler.step(k, &mut x);
                    ensure_finite(&x, p, k + 1)?;
                }
                for c in 0..ncomp {
                    acc[c].push(-integral[c]);
                    batch_acc[b][c].push(-integral[c]);
                }
            }
        }
        Ok((acc, batch_acc))
    })?;
    let mut values = Vec::with_capacity(nodes * ncomp);
    let mut stderr = Vec::with_capacity(nodes * ncomp);
    let mut batch_values = vec![Vec::with_capacity(nodes * ncomp); batch_ranges.len()];
    for (acc, batch_acc) in &per_node {
        for c in 0..ncomp {
            values.push(acc[c].mean);
            stderr.push(acc[c].stderr());
            for (b, ba) in batch_acc.iter().enumerate() {
                batch_values[b].push(ba[c].mean);
            }
        }
    }
    let field = CorrectorField {
        torus,
        shape: opts.shape.clone(),
        ncomp,
        target,
        values,
        stderr,
        batch_values,
        truncation_t: n_steps as f64 * h,
        tail_bound,
        n_paths_per_node: opts.n_paths,
        jacobian: None,
        batch_jacobians: Vec::new(),
        stencil_step: None,
        richardson: None,
    };
    if let Some(tol) = opts.stderr_tolerance {
        let worst = field.max_stderr();
        if worst > tol {
            return Err(Error::Unresolvable {
                stderr: worst,
                tolerance: tol,
            });
        }
    }
    Ok(field)
}

fn central_difference(values: &[f64], shape: &[usize], ncomp: usize, spacing: &[f64], offset: &[usize]) -> Vec<f64> {
    let n = shape.len();
    let nodes: usize = shape.iter().product();
    let mut out = vec![0.0; nodes * ncomp * n];
    let mut idx = [0usize; 8];
    let mut nb = [0usize; 8];
    for k in 0..nodes {
        unravel(k, shape, &mut idx[..n]);
        for l in 0..n {
            nb[..n].copy_from_slice(&idx[..n]);
            nb[l] = (idx[l] + offset[l]) % shape[l];
            let plus = ravel(&nb[..n], shape);
            nb[l] = (idx[l] + shape[l] - offset[l] % shape[l]) % shape[l];
            let minus = ravel(&nb[..n], shape);
            let h2 = 2.0 * offset[l] as f64 * spacing[l];
            for c in 0..ncomp {
                out[(k * ncomp + c) * n + l] = (values[plus * ncomp + c] - values[minus * ncomp + c]) / h2;
            }
        }
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max(libm::fabs(x - y)))
}

/// Central-difference Jacobian with periodic wraparound, plus a Richardson
/// check comparing stencils `k`, `2k` and `4k` nodes wide.
pub fn differentiate(field: &CorrectorField, stencil_step: f64) -> Result<CorrectorField> {
    let n = field.torus.dim();
    let spacing: Vec<f64> = (0..n)
        .map(|i| field.torus.periods()[i] / field.shape[i] as f64)
        .collect();
    let mut offset = Vec::with_capacity(n);
    for i in 0..n {
        let r = stencil_step / spacing[i];
        let k = libm::round(r);
        if k < 1.0 || libm::fabs(r - k) > 1e-6 * r {
            return Err(Error::InvalidConfig(alloc::format!(
                "stencil step {stencil_step} must be a positive multiple of the grid spacing {}",
                spacing[i]
            )));
        }
        offset.push(k as usize);
    }
    let d1 = central_difference(&field.values, &field.shape, field.ncomp, &spacing, &offset);
    let max_derivative = d1.iter().fold(0.0, |m: f64, v| m.max(libm::fabs(*v)));
    let can_check = (0..n).all(|i| 4 * offset[i] * 2 <= field.shape[i]);
    let richardson = if can_check {
        let o2: Vec<usize> = offset.iter().map(|k| 2 * k).collect();
        let o4: Vec<usize> = offset.iter().map(|k| 4 * k).collect();
        let d2 = central_difference(&field.values, &field.shape, field.ncomp, &spacing, &o2);
        let d4 = central_difference(&field.values, &field.shape, field.ncomp, &spacing, &o4);
        let e12 = max_abs_diff(&d1, &d2);
        let e24 = max_abs_diff(&d2, &d4);
        let ratio = if e12 > 0.0 { e24 / e12 } else if e24 > 0.0 { f64::INFINITY } else { 4.0 };
        let noise_dominated = field.batch_values.len() >= 2 && {
            let diffs: Vec<Vec<f64>> = field
                .batch_values
                .iter()
                .map(|v| {
                    let a = central_difference(v, &field.shape, field.ncomp, &spacing, &offset);
                    let b = central_difference(v, &field.shape, field.ncomp, &spacing, &o2);
                    a.iter().zip(&b).map(|(x, y)| x - y).collect()
                })
                .collect();
            let se = crate::stats::spread_stderr(&diffs, d1.len());
            let diff_sq: f64 = d1.iter().zip(&d2).map(|(x, y)| (x - y) * (x - y)).sum();
            let se_sq: f64 = se.iter().map(|v| v * v).sum();
            diff_sq <= 4.0 * se_sq
        };
        let diag = RichardsonDiagnostic {
            ratio,
            error_estimate: e12 / 3.0,
            max_derivative,
            noise_dominated,
        };
        if diag.error_estimate > 0.1 * max_derivative && ratio < 2.0 && !noise_dominated {
            return Err(Error::StencilTooCoarse {
                ratio,
                error_estimate: diag.error_estimate,
            });
        }
        Some(diag)
    } else {
        None
    };
    let mut out = field.clone();
    out.batch_jacobians = field
        .batch_values
        .iter()
        .map(|v| central_difference(v, &field.shape, field.ncomp, &spacing, &offset))
        .collect();
    out.jacobian = Some(d1);
    out.stencil_step = Some(stencil_step);
    out.richardson = richardson;
    Ok(out)
}

/// Weak check of the generator equation at one probe time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualAtTime {
    pub t: f64,
    /// `(E beta(X_t) - beta(x)) / t - (g(x) - pi(g))` per node and component.
    pub residual: Vec<f64>,
    pub mc_stderr: Vec<f64>,
    /// Spread of the residual over the corrector's path batches.
    pub corrector_stderr: Vec<f64>,
    pub sup_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub per_time: Vec<ResidualAtTime>,
    /// At the smallest probe time: `max |r| / budget` with budget = MC stderr +
    /// corrector stderr + |r(t1) - r(t2)| (the semigroup-bias proxy).
    pub worst_ratio: f64,
    pub passes: bool,
}

/// `(P_t beta - beta)/t` against `g - pi(g)` at every node for each probe time.
pub fn poisson_residual<E: Executor>(
    set: &CoefficientSet,
    field: &CorrectorField,
    centering: &[f64],
    probe_times: &[f64],
    n_paths: usize,
    step: f64,
    seed: u64,
    exec: &E,
) -> Result<ResidualReport> {
    check_set(set)?;
    if probe_times.is_empty() || probe_times.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidConfig("probe times must be positive".into()));
    }
    let mut times = probe_times.to_vec();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = field.torus.dim();
    let ncomp = field.ncomp;
    let nodes = field.n_nodes();
    let nb = field.batch_values.len();
    let mut per_time = Vec::with_capacity(times.len());
    for &t in &times {
        let n_steps = steps_for(t, step);
        let h = t / n_steps as f64;
        let rows = run_paths(exec, nodes, |node| {
            let mut x0 = vec![0.0; n];
            field.node_position(node, &mut x0);
            let mut g = vec![0.0; ncomp];
            field.target.eval(set, &x0, &mut g);
            let base = &field.values[node * ncomp..(node + 1) * ncomp];
            let mut acc = vec![MeanVar::new(); ncomp];
            let mut bsum = vec![0.0; nb * ncomp];
            let mut v = vec![0.0; ncomp];
            for p in 0..n_paths {
                let mut euler = Euler::new(set, 0.0, h, 0, PathNoise::new(seed, p, Stream::Aux));
                let mut x = x0.clone();
                for k in 0..n_steps {
                    euler.step(k, &mut x);
                }
                ensure_finite(&x, p, n_steps)?;
                field.interpolate(&x, &mut v);
                for c in 0..ncomp {
                    acc[c].push((v[c] - base[c]) / t);
                }
                for b in 0..nb {
                    field.interpolate_batch(b, &x, &mut v);
                    for c in 0..ncomp {
                        bsum[b * ncomp + c] += (v[c] - field.batch_values[b][node * ncomp + c]) / t;
                    }
                }
            }
            let mut res = Vec::with_capacity(ncomp);
            let mut se = Vec::with_capacity(ncomp);
            let mut cse = Vec::with_capacity(ncomp);
            for c in 0..ncomp {
                let target = g[c] - centering[c];
                res.push(acc[c].mean - target);
                se.push(acc[c].stderr());
                let mut spread = MeanVar::new();
                for b in 0..nb {
                    spread.push(bsum[b * ncomp + c] / n_paths as f64 - target);
                }
                cse.push(if nb >= 2 { spread.stderr() } else { 0.0 });
            }
            Ok((res, se, cse))
        })?;
        let mut residual = Vec::with_capacity(nodes * ncomp);
        let mut mc_stderr = Vec::with_capacity(nodes * ncomp);
        let mut corrector_stderr = Vec::with_capacity(nodes * ncomp);
        for (r, s, c) in rows {
            residual.extend(r);
            mc_stderr.extend(s);
            corrector_stderr.extend(c);
        }
        let sup_residual = residual.iter().fold(0.0, |m: f64, v| m.max(libm::fabs(*v)));
        per_time.push(ResidualAtTime {
            t,
            residual,
            mc_stderr,
            corrector_stderr,
            sup_residual,
        });
    }
    let first = &per_time[0];
    let mut worst: f64 = 0.0;
    for i in 0..first.residual.len() {
        let bias = per_time
            .get(1)
            .map_or(0.0, |next| libm::fabs(next.residual[i] - first.residual[i]));
        let budget = first.mc_stderr[i] + first.corrector_stderr[i] + bias;
        let r = libm::fabs(first.residual[i]);
        let ratio = if budget > 0.0 { r / budget } else if r == 0.0 { 0.0 } else { f64::INFINITY };
        worst = worst.max(ratio);
    }
    Ok(ResidualReport {
        per_time,
        worst_ratio: worst,
        passes: worst <= 3.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn planted(shape: usize, freq: f64) -> CorrectorField {
        let t = Torus::new(vec![2.0]).unwrap();
        let values = (0..shape)
            .map(|k| libm::sin(2.0 * PI * freq * (k as f64 * 2.0 / shape as f64) / 2.0))
            .collect();
        CorrectorField::from_values(t, vec![shape], CorrectorTarget::Potential, values).unwrap()
    }

    #[test]
    fn derivative_of_planted_sine() {
        let f = planted(64, 1.0);
        let d = differentiate(&f, 2.0 / 64.0).unwrap();
        let j = d.jacobian.as_ref().unwrap();
        let h = 2.0 / 64.0;
        for k in 0..64 {
            let x = k as f64 * h;
            let exact = PI * libm::cos(PI * x);
            assert!((j[k] - exact).abs() < 2.0 * PI * PI * PI * h * h / 6.0);
        }
        let r = d.richardson.unwrap();
        assert!((r.ratio - 4.0).abs() < 0.2, "{}", r.ratio);
    }

    #[test]
    fn underresolved_probe_is_rejected() {
        let f = planted(16, 5.0);
        assert!(matches!(
            differentiate(&f, 2.0 / 16.0),
            Err(Error::StencilTooCoarse { .. })
        ));
    }

    #[test]
    fn zero_field_has_zero_derivative() {
        let t = Torus::cube(2, 1.0).unwrap();
        let f = CorrectorField::from_values(t, vec![8, 8], CorrectorTarget::Drift, vec![0.0; 128]).unwrap();
        let d = differentiate(&f, 0.125).unwrap();
        assert!(d.jacobian.unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn truncation_time_meets_tolerance() {
        let m = MixingEstimate {
            rate: 2.0,
            prefactor: 3.0,
        };
        let (t, tail) = truncation_time(&m, 1.5, 1e-4, 1e-3, 100.0);
        assert!((tail - 1e-4).abs() < 1e-12);
        assert!(t > 0.0);
        let (t2, tail2) = truncation_time(&m, 1.5, 1e-4, 1e-3, 1.0);
        assert_eq!(t2, 1.0);
        assert!(tail2 > 1e-4);
    }
}
