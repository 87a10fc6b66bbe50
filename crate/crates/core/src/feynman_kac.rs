//! Feynman–Kac Monte Carlo solvers for the elliptic and parabolic problems,
//! their homogenized limits, and the epsilon-convergence study.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::coefficients::{cell_mean, CoefficientSet};
use crate::corrector::CorrectorField;
use crate::effective::{z_score, EffectiveModel};
use crate::ergodic::{pi_average_scalar, InvariantMeasureEstimate};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::field::{bin_center, grid_nodes, DomainSpec, ScalarFn, ScalarForm};
use crate::rng::{PathNoise, Stream};
use crate::sde::{check_set, ensure_finite, run_paths, steps_for, Euler, SimConfig, MAX_DIM};
use crate::stats::{self, MeanVar};

/// Default elliptic truncation horizon in units of `1 / alpha`.
pub const DEFAULT_TRUNCATION_FACTOR: f64 = 20.0;
/// Default threshold on the standard deviation of log-weights.
pub const DEFAULT_LOG_WEIGHT_THRESHOLD: f64 = 3.0;

/// Data of the elliptic problem; the killing rate `e` comes from the coefficient set.
#[derive(Clone)]
pub struct EllipticData {
    pub f: ScalarFn,
    pub g: ScalarFn,
    /// `sup |f|` and `sup |g|` when known; they enter the truncation bias bound.
    pub f_sup: Option<f64>,
    pub g_sup: Option<f64>,
    /// Truncation horizon; defaults to `20 / alpha`.
    pub t_max: Option<f64>,
}

impl EllipticData {
    pub fn new(f: ScalarFn, g: ScalarFn) -> Self {
        Self {
            f,
            g,
            f_sup: None,
            g_sup: None,
            t_max: None,
        }
    }

    pub fn from_forms(f: &ScalarForm, g: &ScalarForm) -> Self {
        Self {
            f: f.to_fn(),
            g: g.to_fn(),
            f_sup: f.sup_bound(),
            g_sup: g.sup_bound(),
            t_max: None,
        }
    }
}

/// `|v| <= k (1 + |x|^kappa)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthBound {
    pub k: f64,
    pub kappa: f64,
}

impl GrowthBound {
    fn check(&self, x: &[f64], v: f64) -> Result<()> {
        let r = libm::sqrt(x.iter().map(|v| v * v).sum::<f64>());
        let bound = self.k * (1.0 + libm::pow(r, self.kappa));
        if libm::fabs(v) > bound {
            return Err(Error::GrowthEnvelope { value: v, bound });
        }
        Ok(())
    }
}

/// Data of the parabolic problem; `d` and `e` come from the coefficient set.
#[derive(Clone)]
pub struct ParabolicData<'a> {
    pub f: ScalarFn,
    pub g: ScalarFn,
    pub growth: Option<GrowthBound>,
    /// Accumulate the fast potential through the scalar corrector instead of
    /// direct quadrature.
    pub delta: Option<&'a CorrectorField>,
    /// Measure for the zero-mean check on `d`; uniform when absent.
    pub pi: Option<&'a InvariantMeasureEstimate>,
    pub d_mean_tolerance: f64,
    pub log_weight_threshold: f64,
}

impl ParabolicData<'_> {
    pub fn new(f: ScalarFn, g: ScalarFn) -> Self {
        Self {
            f,
            g,
            growth: None,
            delta: None,
            pi: None,
            d_mean_tolerance: 1e-6,
            log_weight_threshold: DEFAULT_LOG_WEIGHT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitDetection {
    /// First step with `level >= 0`.
    DiscreteStep,
    /// No exit; fixed terminal time.
    FixedTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeynmanKacEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub mean_exit_time: Option<f64>,
    pub truncated_fraction: f64,
    /// Upper bound on the bias from truncating at the horizon, when `f` and
    /// `g` have known bounds.
    pub truncation_bias_bound: Option<f64>,
    pub step: f64,
    pub exit_detection: ExitDetection,
    pub log_weight_std: f64,
    pub variance_warning: bool,
    /// `None` for the homogenized solvers.
    pub epsilon: Option<f64>,
}

/// Per-path results of one solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub values: Vec<f64>,
    pub exit_times: Vec<f64>,
    pub truncated: Vec<bool>,
    pub log_weights: Vec<f64>,
    pub step: f64,
    pub exit_detection: ExitDetection,
    pub truncation_bias_bound: Option<f64>,
    pub log_weight_threshold: f64,
    pub epsilon: Option<f64>,
}

impl PathSample {
    pub fn summarize(&self) -> FeynmanKacEstimate {
        let (value, stderr) = stats::mean_stderr(&self.values);
        let mut lw = MeanVar::new();
        self.log_weights.iter().for_each(|&v| lw.push(v));
        let lw_std = libm::sqrt(lw.variance());
        let n = self.values.len();
        FeynmanKacEstimate {
            value,
            stderr,
            n_paths: n,
            mean_exit_time: match self.exit_detection {
                ExitDetection::DiscreteStep => Some(self.exit_times.iter().sum::<f64>() / n as f64),
                ExitDetection::FixedTime => None,
            },
            truncated_fraction: self.truncated.iter().filter(|t| **t).count() as f64 / n as f64,
            truncation_bias_bound: self.truncation_bias_bound,
            step: self.step,
            exit_detection: self.exit_detection,
            log_weight_std: lw_std,
            variance_warning: lw_std > self.log_weight_threshold,
            epsilon: self.epsilon,
        }
    }
}

/// `int_0^h exp(r s) ds / h` for the step exponent `z = r h`.
#[inline]
fn step_factor(z: f64) -> f64 {
    if libm::fabs(z) < 1e-12 {
        1.0 + 0.5 * z
    } else {
        libm::expm1(z) / z
    }
}

/// One step of an original-space process together with the exponent
/// increment accumulated over it (evaluated at the left endpoint).
trait Stepper {
    fn position(&self) -> &[f64];
    fn step(&mut self, k: u64) -> f64;
}

struct EpsStepper<'a> {
    euler: Euler<'a>,
    set: &'a CoefficientSet,
    eps: f64,
    dt: f64,
    scaled: [f64; MAX_DIM],
    x: [f64; MAX_DIM],
    n: usize,
    m: usize,
    with_d: bool,
    delta: Option<&'a CorrectorField>,
    delta_prev: f64,
    path: usize,
    fail: Option<Error>,
}

impl<'a> EpsStepper<'a> {
    fn new(set: &'a CoefficientSet, eps: f64, dt: f64, refinement: u32, seed: u64, path: usize, x0: &[f64], with_d: bool, delta: Option<&'a CorrectorField>) -> Self {
        let n = set.dim();
        let h = dt / (eps * eps);
        let mut s = Self {
            euler: Euler::new(set, eps, h, refinement, PathNoise::new(seed, path, Stream::Drive)),
            set,
            eps,
            dt,
            scaled: [0.0; MAX_DIM],
            x: [0.0; MAX_DIM],
            n,
            m: set.noise_dim(),
            with_d,
            delta,
            delta_prev: 0.0,
            path,
            fail: None,
        };
        for i in 0..n {
            s.scaled[i] = x0[i] / eps;
            s.x[i] = x0[i];
        }
        if let Some(d) = delta {
            s.delta_prev = delta_at(set, d, &s.scaled[..n]);
        }
        s
    }
}

fn delta_at(set: &CoefficientSet, d: &CorrectorField, x: &[f64]) -> f64 {
    let mut w = [0.0; MAX_DIM];
    let n = x.len();
    set.torus().wrap_into(x, &mut w[..n]);
    let mut v = [0.0];
    d.interpolate(&w[..n], &mut v);
    v[0]
}

impl Stepper for EpsStepper<'_> {
    fn position(&self) -> &[f64] {
        &self.x[..self.n]
    }

    fn step(&mut self, k: u64) -> f64 {
        let (n, m) = (self.n, self.m);
        self.euler.prepare(k, &self.scaled[..n]);
        let w = self.euler.wrapped();
        let mut z = self.set.potential_e(w) * self.dt;
        let mut fast = 0.0;
        if self.with_d {
            match self.delta {
                None => fast = self.set.potential_d(w) * self.dt / self.eps,
                Some(d) => {
                    // eps (delta(end) - delta(start)) minus the drift and martingale parts.
                    let mut grad = [0.0; MAX_DIM];
                    d.interpolate_jacobian(w, &mut grad[..n]).expect("delta jacobian checked");
                    let h = self.euler.step_size();
                    let mut c = [0.0; MAX_DIM];
                    self.set.drift_c(w, &mut c[..n]);
                    let sig = self.euler.sigma();
                    let xi = self.euler.normals();
                    let mut drift = 0.0;
                    let mut mart = 0.0;
                    for i in 0..n {
                        drift += c[i] * grad[i];
                        for j in 0..m {
                            mart += grad[i] * sig[i * m + j] * xi[j];
                        }
                    }
                    fast = -self.eps * self.eps * drift * h - self.eps * mart * libm::sqrt(h);
                }
            }
        }
        self.euler.advance(&mut self.scaled[..n]);
        if self.fail.is_none() {
            if let Err(e) = ensure_finite(&self.scaled[..n], self.path, k + 1) {
                self.fail = Some(e);
            }
        }
        for i in 0..n {
            self.x[i] = self.eps * self.scaled[i];
        }
        if let (true, Some(d)) = (self.with_d, self.delta) {
            let next = delta_at(self.set, d, &self.scaled[..n]);
            fast += self.eps * (next - self.delta_prev);
            self.delta_prev = next;
        }
        z += fast;
        z
    }
}

/// `W = x + b t + S B` driven by the same normals as the scaled process.
struct GaussStepper<'a> {
    sqrt_cov: &'a [f64],
    drift: &'a [f64],
    rate: f64,
    dt: f64,
    sqrt_dt: f64,
    refinement: u32,
    noise: PathNoise,
    x: [f64; MAX_DIM],
    xi: [f64; MAX_DIM],
    scratch: [f64; MAX_DIM],
    n: usize,
}

impl<'a> GaussStepper<'a> {
    fn new(sqrt_cov: &'a [f64], drift: &'a [f64], rate: f64, dt: f64, refinement: u32, seed: u64, path: usize, x0: &[f64]) -> Self {
        let n = drift.len();
        let mut x = [0.0; MAX_DIM];
        x[..n].copy_from_slice(x0);
        Self {
            sqrt_cov,
            drift,
            rate,
            dt,
            sqrt_dt: libm::sqrt(dt),
            refinement,
            noise: PathNoise::new(seed, path, Stream::Drive),
            x,
            xi: [0.0; MAX_DIM],
            scratch: [0.0; MAX_DIM],
            n,
        }
    }
}

impl Stepper for GaussStepper<'_> {
    fn position(&self) -> &[f64] {
        &self.x[..self.n]
    }

    fn step(&mut self, k: u64) -> f64 {
        let n = self.n;
        self.noise
            .coarse_normals(k, self.refinement, &mut self.xi[..n], &mut self.scratch[..n]);
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                s += self.sqrt_cov[i * n + j] * self.xi[j];
            }
            self.x[i] += self.drift[i] * self.dt + self.sqrt_dt * s;
        }
        self.rate * self.dt
    }
}

struct PathResult {
    value: f64,
    time: f64,
    truncated: bool,
    log_weight: f64,
}

fn run_elliptic(st: &mut dyn Stepper, domain: &DomainSpec, f: &ScalarFn, g: &ScalarFn, dt: f64, max_steps: u64) -> PathResult {
    let mut zeta = 0.0;
    let mut acc = 0.0;
    let mut k = 0u64;
    loop {
        let x = st.position();
        if domain.level(x) >= 0.0 {
            acc += g(x) * libm::exp(zeta);
            return PathResult {
                value: acc,
                time: k as f64 * dt,
                truncated: false,
                log_weight: zeta,
            };
        }
        if k == max_steps {
            return PathResult {
                value: acc,
                time: k as f64 * dt,
                truncated: true,
                log_weight: zeta,
            };
        }
        let fx = f(x);
        let dz = st.step(k);
        acc += fx * libm::exp(zeta) * dt * step_factor(dz);
        zeta += dz;
        k += 1;
    }
}

fn run_parabolic(st: &mut dyn Stepper, f: &ScalarFn, g: &ScalarFn, dt: f64, n_steps: u64, growth: Option<GrowthBound>) -> Result<PathResult> {
    let mut zeta = 0.0;
    let mut acc = 0.0;
    for k in 0..n_steps {
        let fx = f(st.position());
        let dz = st.step(k);
        acc += fx * libm::exp(zeta) * dt * step_factor(dz);
        zeta += dz;
    }
    let x = st.position();
    let gx = g(x);
    if let Some(b) = growth {
        b.check(x, gx)?;
        b.check(x, f(x))?;
    }
    acc += gx * libm::exp(zeta);
    Ok(PathResult {
        value: acc,
        time: n_steps as f64 * dt,
        truncated: false,
        log_weight: zeta,
    })
}

fn collect(results: Vec<PathResult>, step: f64, mode: ExitDetection, bias: Option<f64>, threshold: f64, epsilon: Option<f64>) -> PathSample {
    let mut s = PathSample {
        values: Vec::with_capacity(results.len()),
        exit_times: Vec::with_capacity(results.len()),
        truncated: Vec::with_capacity(results.len()),
        log_weights: Vec::with_capacity(results.len()),
        step,
        exit_detection: mode,
        truncation_bias_bound: bias,
        log_weight_threshold: threshold,
        epsilon,
    };
    for r in results {
        s.values.push(r.value);
        s.exit_times.push(r.time);
        s.truncated.push(r.truncated);
        s.log_weights.push(r.log_weight);
    }
    s
}

/// Largest value of `e` over a probe grid of the cell; the killing rate is
/// `alpha = -max e`.
pub fn killing_rate(set: &CoefficientSet) -> Result<f64> {
    let n = set.dim();
    let per_axis = (libm::pow(65536.0, 1.0 / n as f64) as usize).clamp(2, 256);
    let shape = vec![per_axis; n];
    let mut max_e = f64::NEG_INFINITY;
    for x in grid_nodes(set.torus(), &shape) {
        max_e = max_e.max(set.potential_e(&x));
    }
    for v in cell_probe_centers(set, &shape) {
        max_e = max_e.max(v);
    }
    if !(max_e < 0.0) {
        return Err(Error::KillingBound { max_e });
    }
    Ok(-max_e)
}

fn cell_probe_centers(set: &CoefficientSet, shape: &[usize]) -> Vec<f64> {
    let mut out = Vec::new();
    let total: usize = shape.iter().product();
    let mut x = vec![0.0; set.dim()];
    for k in 0..total {
        bin_center(set.torus(), shape, k, &mut x);
        out.push(set.potential_e(&x));
    }
    out
}

fn check_start(domain: &DomainSpec, x: &[f64]) -> Result<()> {
    domain.validate()?;
    if x.len() != domain.dim() {
        return Err(Error::DimensionMismatch {
            what: "start point",
            expected: domain.dim(),
            got: x.len(),
        });
    }
    if !domain.contains(x) {
        return Err(Error::OutsideDomain);
    }
    Ok(())
}

fn check_mc(mc: &SimConfig) -> Result<()> {
    let mut probe = mc.clone();
    probe.horizon = probe.horizon.max(probe.step);
    probe.validate()
}

/// A Feynman–Kac problem together with the process that drives it.
pub enum Problem<'a> {
    Elliptic {
        set: &'a CoefficientSet,
        epsilon: f64,
        domain: &'a DomainSpec,
        data: &'a EllipticData,
    },
    EllipticHomogenized {
        model: &'a EffectiveModel,
        domain: &'a DomainSpec,
        data: &'a EllipticData,
        pi_e: f64,
    },
    Parabolic {
        set: &'a CoefficientSet,
        epsilon: f64,
        data: &'a ParabolicData<'a>,
        t: f64,
    },
    ParabolicHomogenized {
        model: &'a EffectiveModel,
        data: &'a ParabolicData<'a>,
        t: f64,
    },
}

impl Problem<'_> {
    /// Per-path values. `mc.step` is in original time; `mc.horizon` is unused.
    pub fn paths<E: Executor>(&self, x: &[f64], mc: &SimConfig, exec: &E) -> Result<PathSample> {
        check_mc(mc)?;
        let dt = mc.step;
        match *self {
            Problem::Elliptic { set, epsilon, domain, data } => {
                check_set(set)?;
                if !(epsilon > 0.0) {
                    return Err(Error::InvalidConfig("epsilon must be > 0".into()));
                }
                check_start(domain, x)?;
                if domain.dim() != set.dim() {
                    return Err(Error::DimensionMismatch {
                        what: "domain",
                        expected: set.dim(),
                        got: domain.dim(),
                    });
                }
                let alpha = killing_rate(set)?;
                let (max_steps, bias) = truncation(data, alpha, dt);
                let res = run_paths(exec, mc.n_paths, |p| {
                    let mut st = EpsStepper::new(set, epsilon, dt, mc.noise_refinement, mc.seed, p, x, false, None);
                    let r = run_elliptic(&mut st, domain, &data.f, &data.g, dt, max_steps);
                    match st.fail {
                        Some(e) => Err(e),
                        None => Ok(r),
                    }
                })?;
                Ok(collect(res, dt, ExitDetection::DiscreteStep, bias, f64::INFINITY, Some(epsilon)))
            }
            Problem::EllipticHomogenized { model, domain, data, pi_e } => {
                check_start(domain, x)?;
                if domain.dim() != model.dim {
                    return Err(Error::DimensionMismatch {
                        what: "domain",
                        expected: model.dim,
                        got: domain.dim(),
                    });
                }
                if !(pi_e < 0.0) {
                    return Err(Error::KillingBound { max_e: pi_e });
                }
                boundary_nondegeneracy(model, domain)?;
                let sqrt_cov = model.cov_sqrt()?;
                let (max_steps, bias) = truncation(data, -pi_e, dt);
                let res = run_paths(exec, mc.n_paths, |p| {
                    let mut st = GaussStepper::new(&sqrt_cov, &model.drift_b, pi_e, dt, mc.noise_refinement, mc.seed, p, x);
                    Ok(run_elliptic(&mut st, domain, &data.f, &data.g, dt, max_steps))
                })?;
                Ok(collect(res, dt, ExitDetection::DiscreteStep, bias, f64::INFINITY, None))
            }
            Problem::Parabolic { set, epsilon, data, t } => {
                check_set(set)?;
                if !(epsilon > 0.0) {
                    return Err(Error::InvalidConfig("epsilon must be > 0".into()));
                }
                if !(t > 0.0) {
                    return Err(Error::NonPositiveTime(t));
                }
                if x.len() != set.dim() {
                    return Err(Error::DimensionMismatch {
                        what: "start point",
                        expected: set.dim(),
                        got: x.len(),
                    });
                }
                let with_d = !set.d_is_zero();
                if with_d {
                    check_d_mean(set, data)?;
                }
                if let Some(d) = data.delta {
                    if d.ncomp != 1 || d.torus != *set.torus() {
                        return Err(Error::DimensionMismatch {
                            what: "scalar corrector",
                            expected: 1,
                            got: d.ncomp,
                        });
                    }
                    d.jacobian.as_ref().ok_or(Error::MissingJacobian)?;
                }
                let n_steps = steps_for(t, dt);
                let res = run_paths(exec, mc.n_paths, |p| {
                    let mut st = EpsStepper::new(set, epsilon, dt, mc.noise_refinement, mc.seed, p, x, with_d, data.delta);
                    let r = run_parabolic(&mut st, &data.f, &data.g, dt, n_steps, data.growth)?;
                    match st.fail {
                        Some(e) => Err(e),
                        None => Ok(r),
                    }
                })?;
                Ok(collect(res, dt, ExitDetection::FixedTime, Some(0.0), data.log_weight_threshold, Some(epsilon)))
            }
            Problem::ParabolicHomogenized { model, data, t } => {
                if !(t > 0.0) {
                    return Err(Error::NonPositiveTime(t));
                }
                if x.len() != model.dim {
                    return Err(Error::DimensionMismatch {
                        what: "start point",
                        expected: model.dim,
                        got: x.len(),
                    });
                }
                let (drift, potential) = model.require_parabolic()?;
                let sqrt_cov = model.cov_sqrt()?;
                let n_steps = steps_for(t, dt);
                let res = run_paths(exec, mc.n_paths, |p| {
                    let mut st = GaussStepper::new(&sqrt_cov, drift, potential, dt, mc.noise_refinement, mc.seed, p, x);
                    run_parabolic(&mut st, &data.f, &data.g, dt, n_steps, data.growth)
                })?;
                Ok(collect(res, dt, ExitDetection::FixedTime, Some(0.0), data.log_weight_threshold, None))
            }
        }
    }

    pub fn solve<E: Executor>(&self, x: &[f64], mc: &SimConfig, exec: &E) -> Result<FeynmanKacEstimate> {
        Ok(self.paths(x, mc, exec)?.summarize())
    }

    /// Weak order of the time discretization: 1/2 with exit detection, 1 at fixed time.
    pub fn bias_order(&self) -> f64 {
        match self {
            Problem::Elliptic { .. } | Problem::EllipticHomogenized { .. } => 0.5,
            _ => 1.0,
        }
    }

    /// Runs at `mc.step` and `mc.step / 2` on one Brownian path and removes
    /// the leading bias term.
    pub fn solve_extrapolated<E: Executor>(&self, x: &[f64], mc: &SimConfig, exec: &E) -> Result<Extrapolation> {
        let mut coarse_cfg = mc.clone();
        coarse_cfg.noise_refinement = mc.noise_refinement + 1;
        let mut fine_cfg = mc.clone();
        fine_cfg.step = mc.step / 2.0;
        let coarse = self.paths(x, &coarse_cfg, exec)?;
        let fine = self.paths(x, &fine_cfg, exec)?;
        let r = libm::pow(2.0, self.bias_order());
        let combined: Vec<f64> = fine
            .values
            .iter()
            .zip(&coarse.values)
            .map(|(f, c)| (r * f - c) / (r - 1.0))
            .collect();
        let shift: Vec<f64> = fine.values.iter().zip(&coarse.values).map(|(f, c)| f - c).collect();
        let (value, stderr) = stats::mean_stderr(&combined);
        let (shift, shift_stderr) = stats::mean_stderr(&shift);
        Ok(Extrapolation {
            coarse: coarse.summarize(),
            fine: fine.summarize(),
            value,
            stderr,
            shift,
            shift_stderr,
            order: self.bias_order(),
        })
    }

    /// Estimates at `step / 2^j`, `j < levels`, on one Brownian path, with the
    /// order fitted to the consecutive paired differences.
    pub fn step_ladder<E: Executor>(&self, x: &[f64], mc: &SimConfig, levels: usize, exec: &E) -> Result<StepLadder> {
        if levels < 2 {
            return Err(Error::InvalidConfig("step ladder needs at least two levels".into()));
        }
        let mut samples = Vec::with_capacity(levels);
        for j in 0..levels {
            let mut cfg = mc.clone();
            cfg.step = mc.step / (1u64 << j) as f64;
            cfg.noise_refinement = mc.noise_refinement + (levels - 1 - j) as u32;
            samples.push(self.paths(x, &cfg, exec)?);
        }
        let mut differences = Vec::new();
        let mut difference_stderr = Vec::new();
        for w in samples.windows(2) {
            let d: Vec<f64> = w[0].values.iter().zip(&w[1].values).map(|(a, b)| a - b).collect();
            let (m, s) = stats::mean_stderr(&d);
            differences.push(m);
            difference_stderr.push(s);
        }
        let steps: Vec<f64> = samples.iter().map(|s| s.step).collect();
        let resolved: Vec<(f64, f64)> = differences
            .iter()
            .zip(&difference_stderr)
            .zip(&steps)
            .filter(|((d, s), _)| libm::fabs(**d) > 2.0 * **s)
            .map(|((d, _), h)| (libm::log(*h), libm::log(libm::fabs(*d))))
            .collect();
        let order = if resolved.len() >= 2 {
            let (lx, ly): (Vec<f64>, Vec<f64>) = resolved.into_iter().unzip();
            stats::linear_fit(&lx, &ly).map(|f| f.slope)
        } else {
            None
        };
        Ok(StepLadder {
            steps,
            estimates: samples.iter().map(PathSample::summarize).collect(),
            differences,
            difference_stderr,
            order,
        })
    }
}

/// Step budget and `exp(-alpha T) (sup|g| + sup|f| / alpha)`.
fn truncation(data: &EllipticData, alpha: f64, dt: f64) -> (u64, Option<f64>) {
    let t_max = data.t_max.unwrap_or(DEFAULT_TRUNCATION_FACTOR / alpha);
    let steps = steps_for(t_max.max(dt), dt);
    let bias = match (data.f_sup, data.g_sup) {
        (Some(f), Some(g)) => Some(libm::exp(-alpha * steps as f64 * dt) * (g + f / alpha)),
        _ => None,
    };
    (steps, bias)
}

/// Minimum of `grad(level)^T A grad(level)` over boundary probes.
pub fn boundary_nondegeneracy(model: &EffectiveModel, domain: &DomainSpec) -> Result<f64> {
    let n = model.dim;
    let mut grad = vec![0.0; n];
    let mut min_q = f64::INFINITY;
    for p in domain.boundary_probes(16) {
        domain.gradient(&p, &mut grad);
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += grad[i] * model.cov_a[i * n + j] * grad[j];
            }
        }
        min_q = min_q.min(q);
    }
    if !(min_q > 0.0) {
        return Err(Error::InvalidConfig(alloc::format!(
            "effective covariance is degenerate normal to the boundary (min {min_q:.3e})"
        )));
    }
    Ok(min_q)
}

fn check_d_mean(set: &CoefficientSet, data: &ParabolicData) -> Result<()> {
    let (mean, tol) = match data.pi {
        Some(pi) => {
            let (m, se) = pi_average_scalar(pi, &|x| set.potential_d(x));
            (m, data.d_mean_tolerance.max(3.0 * se))
        }
        None => {
            let n = set.dim();
            let per_axis = (libm::pow(65536.0, 1.0 / n as f64) as usize).clamp(2, 256);
            let m = cell_mean(set.torus(), &vec![per_axis; n], 1, |x, o| o[0] = set.potential_d(x))[0];
            (m, data.d_mean_tolerance)
        }
    };
    if libm::fabs(mean) > tol {
        return Err(Error::NotZeroMean { what: "d", mean });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub coarse: FeynmanKacEstimate,
    pub fine: FeynmanKacEstimate,
    pub value: f64,
    pub stderr: f64,
    /// Paired mean of fine minus coarse.
    pub shift: f64,
    pub shift_stderr: f64,
    pub order: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLadder {
    pub steps: Vec<f64>,
    pub estimates: Vec<FeynmanKacEstimate>,
    /// `u(h_j) - u(h_{j+1})`, paired.
    pub differences: Vec<f64>,
    pub difference_stderr: Vec<f64>,
    pub order: Option<f64>,
}

pub fn solve_elliptic<E: Executor>(set: &CoefficientSet, epsilon: f64, domain: &DomainSpec, data: &EllipticData, x: &[f64], mc: &SimConfig, exec: &E) -> Result<FeynmanKacEstimate> {
    Problem::Elliptic { set, epsilon, domain, data }.solve(x, mc, exec)
}

pub fn solve_elliptic_homogenized<E: Executor>(model: &EffectiveModel, domain: &DomainSpec, data: &EllipticData, pi_e: f64, x: &[f64], mc: &SimConfig, exec: &E) -> Result<FeynmanKacEstimate> {
    Problem::EllipticHomogenized { model, domain, data, pi_e }.solve(x, mc, exec)
}

pub fn solve_parabolic<E: Executor>(set: &CoefficientSet, epsilon: f64, data: &ParabolicData, x: &[f64], t: f64, mc: &SimConfig, exec: &E) -> Result<FeynmanKacEstimate> {
    Problem::Parabolic { set, epsilon, data, t }.solve(x, mc, exec)
}

pub fn solve_parabolic_homogenized<E: Executor>(model: &EffectiveModel, data: &ParabolicData, x: &[f64], t: f64, mc: &SimConfig, exec: &E) -> Result<FeynmanKacEstimate> {
    Problem::ParabolicHomogenized { model, data, t }.solve(x, mc, exec)
}

/// Which problem the study compares.
pub enum StudyProblem<'a> {
    Elliptic {
        set: &'a CoefficientSet,
        model: &'a EffectiveModel,
        domain: &'a DomainSpec,
        data: &'a EllipticData,
        pi_e: f64,
    },
    Parabolic {
        set: &'a CoefficientSet,
        model: &'a EffectiveModel,
        data: &'a ParabolicData<'a>,
        homogenized_data: &'a ParabolicData<'a>,
        t: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub epsilon: f64,
    pub x: Vec<f64>,
    pub u_eps: f64,
    pub stderr_eps: f64,
    pub u0: f64,
    pub stderr_0: f64,
    /// `|u_eps - u0|`, paired over paths.
    pub gap: f64,
    pub gap_stderr: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
    /// Per start point and consecutive pair of epsilons (descending):
    /// `(|gap_i| - |gap_{i+1}|) / stderr` of the paired difference.
    pub decrease_z: Vec<Vec<f64>>,
    pub extrapolated: bool,
    pub notes: Vec<String>,
}

impl StudyReport {
    /// Whether gaps shrink with epsilon beyond `sigmas` standard errors at every start.
    pub fn strictly_decreasing(&self, sigmas: f64) -> bool {
        self.decrease_z.iter().all(|zs| zs.iter().all(|z| *z > sigmas))
    }
}

/// Per-path values after optional step extrapolation.
fn extrapolated_values<E: Executor>(p: &Problem, x: &[f64], mc: &SimConfig, extrapolate: bool, exec: &E) -> Result<Vec<f64>> {
    if !extrapolate {
        return Ok(p.paths(x, mc, exec)?.values);
    }
    let mut coarse_cfg = mc.clone();
    coarse_cfg.noise_refinement += 1;
    let mut fine_cfg = mc.clone();
    fine_cfg.step /= 2.0;
    let c = p.paths(x, &coarse_cfg, exec)?.values;
    let f = p.paths(x, &fine_cfg, exec)?.values;
    let r = libm::pow(2.0, p.bias_order());
    Ok(f.iter().zip(&c).map(|(f, c)| (r * f - c) / (r - 1.0)).collect())
}

/// Gaps between the epsilon-problems and the homogenized problem at each
/// start, all driven by the same Brownian paths.
pub fn epsilon_convergence_study<E: Executor>(problem: &StudyProblem, epsilons: &[f64], xs: &[Vec<f64>], mc: &SimConfig, extrapolate: bool, exec: &E) -> Result<StudyReport> {
    if epsilons.is_empty() || xs.is_empty() {
        return Err(Error::InvalidConfig("study needs epsilons and start points".into()));
    }
    let mut eps = epsilons.to_vec();
    eps.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut rows = Vec::new();
    let mut decrease_z = Vec::new();
    let mut notes = Vec::new();
    for x in xs {
        let limit = match problem {
            StudyProblem::Elliptic { model, domain, data, pi_e, .. } => Problem::EllipticHomogenized {
                model,
                domain,
                data,
                pi_e: *pi_e,
            },
            StudyProblem::Parabolic { model, homogenized_data, t, .. } => Problem::ParabolicHomogenized {
                model,
                data: homogenized_data,
                t: *t,
            },
        };
        let u0 = extrapolated_values(&limit, x, mc, extrapolate, exec)?;
        let (u0_mean, u0_se) = stats::mean_stderr(&u0);
        let mut diffs: Vec<Vec<f64>> = Vec::new();
        for &e in &eps {
            let p = match problem {
                StudyProblem::Elliptic { set, domain, data, .. } => Problem::Elliptic {
                    set,
                    epsilon: e,
                    domain,
                    data,
                },
                StudyProblem::Parabolic { set, data, t, .. } => Problem::Parabolic {
                    set,
                    epsilon: e,
                    data,
                    t: *t,
                },
            };
            let ue = extrapolated_values(&p, x, mc, extrapolate, exec)?;
            let (m, se) = stats::mean_stderr(&ue);
            let d: Vec<f64> = ue.iter().zip(&u0).map(|(a, b)| a - b).collect();
            let (dm, dse) = stats::mean_stderr(&d);
            rows.push(StudyRow {
                epsilon: e,
                x: x.clone(),
                u_eps: m,
                stderr_eps: se,
                u0: u0_mean,
                stderr_0: u0_se,
                gap: libm::fabs(dm),
                gap_stderr: dse,
                z: z_score(dm, dse, 0.0),
            });
            diffs.push(d);
        }
        let mut zs = Vec::new();
        for w in diffs.windows(2) {
            let (a, _) = stats::mean_stderr(&w[0]);
            let (b, _) = stats::mean_stderr(&w[1]);
            // |a| - |b| with the sign of each gap fixed at its mean.
            let sa = if a >= 0.0 { 1.0 } else { -1.0 };
            let sb = if b >= 0.0 { 1.0 } else { -1.0 };
            let paired: Vec<f64> = w[0].iter().zip(&w[1]).map(|(p, q)| sa * p - sb * q).collect();
            let (m, se) = stats::mean_stderr(&paired);
            zs.push(if se > 0.0 { m / se } else if m > 0.0 { f64::INFINITY } else { 0.0 });
        }
        decrease_z.push(zs);
    }
    if let StudyProblem::Elliptic { set, .. } = problem {
        if set.noise_dim() != set.dim() {
            notes.push("noise dimension differs from state dimension; gaps are not path-paired".into());
        }
    }
    Ok(StudyReport {
        rows,
        decrease_z,
        extrapolated: extrapolate,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::constant_identity;
    use crate::exec::Serial;
    use crate::field::constant_scalar;
    use crate::torus::Torus;
    use alloc::sync::Arc;

    fn mc(step: f64, n: usize) -> SimConfig {
        SimConfig {
            step,
            n_paths: n,
            seed: 7,
            ..SimConfig::default()
        }
    }

    #[test]
    fn zero_data_gives_zero() {
        let set = constant_identity(Torus::new(vec![1.0]).unwrap());
        let data = EllipticData::new(constant_scalar(0.0), constant_scalar(0.0));
        let d = DomainSpec::interval(-1.0, 1.0);
        let e = solve_elliptic(&set, 1.0, &d, &data, &[0.2], &mc(1e-2, 50), &Serial).unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn calibration_telescopes_per_path() {
        let set = constant_identity(Torus::new(vec![1.0]).unwrap()).with_potential_e(&ScalarForm::constant(-2.0));
        let data = EllipticData::new(constant_scalar(2.0), constant_scalar(1.0));
        let d = DomainSpec::interval(-1.0, 1.0);
        let s = Problem::Elliptic {
            set: &set,
            epsilon: 0.5,
            domain: &d,
            data: &data,
        }
        .paths(&[0.1], &mc(1e-2, 100), &Serial)
        .unwrap();
        assert!(s.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn outside_domain_rejected() {
        let set = constant_identity(Torus::new(vec![1.0]).unwrap());
        let data = EllipticData::new(constant_scalar(0.0), constant_scalar(1.0));
        let d = DomainSpec::interval(-1.0, 1.0);
        assert!(matches!(
            solve_elliptic(&set, 1.0, &d, &data, &[1.5], &mc(1e-2, 10), &Serial),
            Err(Error::OutsideDomain)
        ));
    }

    #[test]
    fn nonnegative_killing_rejected() {
        let set = constant_identity(Torus::new(vec![1.0]).unwrap()).with_potential_e(&ScalarForm::constant(0.0));
        let data = EllipticData::new(constant_scalar(0.0), constant_scalar(1.0));
        let d = DomainSpec::interval(-1.0, 1.0);
        assert!(matches!(
            solve_elliptic(&set, 1.0, &d, &data, &[0.0], &mc(1e-2, 10), &Serial),
            Err(Error::KillingBound { .. })
        ));
    }

    #[test]
    fn parabolic_factorizes_constant_potential() {
        let set = constant_identity(Torus::new(vec![1.0]).unwrap()).with_potential_e(&ScalarForm::constant(-0.7));
        let g: ScalarFn = Arc::new(|x: &[f64]| x[0] * x[0]);
        let data = ParabolicData::new(constant_scalar(0.0), g.clone());
        let with = solve_parabolic(&set, 1.0, &data, &[0.3], 1.0, &mc(0.05, 200), &Serial).unwrap();
        let plain_set = constant_identity(Torus::new(vec![1.0]).unwrap()).with_potential_e(&ScalarForm::constant(0.0));
        let plain = solve_parabolic(&plain_set, 1.0, &data, &[0.3], 1.0, &mc(0.05, 200), &Serial).unwrap();
        assert!((with.value - libm::exp(-0.7) * plain.value).abs() < 1e-12);
    }

    #[test]
    fn nonzero_mean_d_rejected() {
        let set = constant_identity(Torus::new(vec![1.0]).unwrap()).with_potential_d(&ScalarForm::constant(0.5));
        let data = ParabolicData::new(constant_scalar(0.0), constant_scalar(1.0));
        assert!(matches!(
            solve_parabolic(&set, 0.5, &data, &[0.0], 1.0, &mc(0.01, 10), &Serial),
            Err(Error::NotZeroMean { .. })
        ));
    }

    #[test]
    fn growth_envelope_enforced() {
        let set = constant_identity(Torus::new(vec![1.0]).unwrap()).with_potential_e(&ScalarForm::constant(0.0));
        let g: ScalarFn = Arc::new(|x: &[f64]| libm::exp(10.0 * x[0].abs()));
        let mut data = ParabolicData::new(constant_scalar(0.0), g);
        data.growth = Some(GrowthBound { k: 1.0, kappa: 2.0 });
        assert!(matches!(
            solve_parabolic(&set, 1.0, &data, &[0.0], 1.0, &mc(0.05, 50), &Serial),
            Err(Error::GrowthEnvelope { .. })
        ));
    }

    #[test]
    fn homogenized_parabolic_gaussian_moments_exact_drift_free() {
        let model = EffectiveModel::analytic(vec![1.0], vec![0.0]).unwrap().with_parabolic(vec![0.0], 0.0);
        let g: ScalarFn = Arc::new(|x: &[f64]| x[0]);
        let data = ParabolicData::new(constant_scalar(0.0), g);
        let e = solve_parabolic_homogenized(&model, &data, &[0.4], 1.0, &mc(0.1, 4000), &Serial).unwrap();
        assert!((e.value - 0.4).abs() < 4.0 * e.stderr);
    }

    #[test]
    fn step_factor_limits() {
        assert!((step_factor(0.0) - 1.0).abs() < 1e-15);
        assert!((step_factor(-1.0) - (1.0 - libm::exp(-1.0))).abs() < 1e-15);
    }
}
