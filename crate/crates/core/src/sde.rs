//! Euler–Maruyama simulation of the scaled and original processes, the
//! Jacobian flow, and the hitting diagnostics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::field::Region;
use crate::rng::{PathNoise, Stream};
use crate::stats::{self, MeanVar};
use crate::torus::Torus;

/// Largest supported state and noise dimension.
pub const MAX_DIM: usize = 8;

/// Simulation parameters.
///
/// `step` and `horizon` are measured in the time units of the process being
/// produced: scaled time for [`simulate_scaled`], original time for
/// [`simulate_original`] and the Feynman–Kac solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub epsilon: f64,
    pub step: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub store_stride: usize,
    /// Each step consumes the aggregated normals of `2^noise_refinement`
    /// finer steps, so runs at `h` and `h / 2^r` share one Brownian path.
    pub noise_refinement: u32,
    /// Central-difference step for coefficient derivatives.
    pub fd_step: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            step: 1e-3,
            horizon: 1.0,
            n_paths: 1000,
            seed: 0,
            store_stride: 1,
            noise_refinement: 0,
            fd_step: 1e-6,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.step.is_finite() && self.step > 0.0) {
            return bad("step must be > 0");
        }
        if !(self.horizon.is_finite() && self.horizon >= self.step * (1.0 - 1e-9)) {
            return bad("horizon must be >= step");
        }
        if self.n_paths == 0 {
            return bad("n_paths must be >= 1");
        }
        if self.store_stride == 0 {
            return bad("store_stride must be >= 1");
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return bad("epsilon must be >= 0");
        }
        if self.noise_refinement > 20 {
            return bad("noise_refinement is at most 20");
        }
        if !(self.fd_step > 0.0) {
            return bad("fd_step must be > 0");
        }
        Ok(())
    }

    /// Number of steps covering the horizon (the last step may overshoot by
    /// less than one rounding error).
    pub fn n_steps(&self) -> u64 {
        steps_for(self.horizon, self.step)
    }
}

/// `ceil(t / h)`, treating near-integers as integers.
pub fn steps_for(t: f64, h: f64) -> u64 {
    let r = t / h;
    let k = libm::round(r);
    if libm::fabs(r - k) <= 1e-9 * r.max(1.0) {
        k as u64
    } else {
        libm::ceil(r) as u64
    }
}

pub(crate) fn check_set(set: &CoefficientSet) -> Result<()> {
    if set.dim() > MAX_DIM || set.noise_dim() > MAX_DIM || set.noise_dim() == 0 {
        return Err(Error::InvalidConfig(format!(
            "dimensions n={}, m={} outside 1..={MAX_DIM}",
            set.dim(),
            set.noise_dim()
        )));
    }
    Ok(())
}

pub(crate) fn check_points(set: &CoefficientSet, pts: &[Vec<f64>]) -> Result<()> {
    if pts.is_empty() {
        return Err(Error::InvalidConfig("at least one start point is required".into()));
    }
    for p in pts {
        if p.len() != set.dim() {
            return Err(Error::DimensionMismatch {
                what: "start point",
                expected: set.dim(),
                got: p.len(),
            });
        }
    }
    Ok(())
}

/// One Euler–Maruyama integrator bound to a single path's noise.
pub struct Euler<'a> {
    set: &'a CoefficientSet,
    eps: f64,
    h: f64,
    sqrt_h: f64,
    refinement: u32,
    noise: PathNoise,
    n: usize,
    m: usize,
    w: [f64; MAX_DIM],
    b: [f64; MAX_DIM],
    c: [f64; MAX_DIM],
    s: [f64; MAX_DIM * MAX_DIM],
    xi: [f64; MAX_DIM],
    scratch: [f64; MAX_DIM],
}

impl<'a> Euler<'a> {
    pub fn new(set: &'a CoefficientSet, eps: f64, h: f64, refinement: u32, noise: PathNoise) -> Self {
        Self {
            set,
            eps,
            h,
            sqrt_h: libm::sqrt(h),
            refinement,
            noise,
            n: set.dim(),
            m: set.noise_dim(),
            w: [0.0; MAX_DIM],
            b: [0.0; MAX_DIM],
            c: [0.0; MAX_DIM],
            s: [0.0; MAX_DIM * MAX_DIM],
            xi: [0.0; MAX_DIM],
            scratch: [0.0; MAX_DIM],
        }
    }

    /// Loads the coefficients at `x` (evaluated on the wrapped point) and the
    /// normals of step `k`, without moving.
    #[inline]
    pub fn prepare(&mut self, k: u64, x: &[f64]) {
        let (n, m) = (self.n, self.m);
        self.set.torus().wrap_into(x, &mut self.w[..n]);
        (self.set.raw_b())(&self.w[..n], &mut self.b[..n]);
        if self.eps != 0.0 && !self.set.c_is_zero() {
            self.set.drift_c(&self.w[..n], &mut self.c[..n]);
        } else {
            self.c[..n].iter_mut().for_each(|v| *v = 0.0);
        }
        (self.set.raw_sigma())(&self.w[..n], &mut self.s[..n * m]);
        self.noise
            .coarse_normals(k, self.refinement, &mut self.xi[..m], &mut self.scratch[..m]);
    }

    /// Applies the prepared step to `x`.
    #[inline]
    pub fn advance(&self, x: &mut [f64]) {
        let (n, m) = (self.n, self.m);
        for i in 0..n {
            let mut diff = 0.0;
            for j in 0..m {
                diff += self.s[i * m + j] * self.xi[j];
            }
            x[i] += (self.b[i] + self.eps * self.c[i]) * self.h + self.sqrt_h * diff;
        }
    }

    /// Advances `x` from step `k` to `k + 1`.
    #[inline]
    pub fn step(&mut self, k: u64, x: &mut [f64]) {
        self.prepare(k, x);
        self.advance(x);
    }

    /// Wrapped point where the last step's coefficients were evaluated.
    pub fn wrapped(&self) -> &[f64] {
        &self.w[..self.n]
    }

    /// Standard normals of the last step.
    pub fn normals(&self) -> &[f64] {
        &self.xi[..self.m]
    }

    /// `sigma` at the last evaluation point.
    pub fn sigma(&self) -> &[f64] {
        &self.s[..self.n * self.m]
    }

    pub fn drift(&self) -> &[f64] {
        &self.b[..self.n]
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }
}

#[inline]
pub(crate) fn ensure_finite(x: &[f64], path: usize, step: u64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { path, step })
    }
}

/// Collects per-path results in index order, surfacing the lowest-index error.
pub(crate) fn run_paths<T: Send, E: Executor>(exec: &E, n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    exec.map(n, f).into_iter().collect()
}

/// Ensemble of stored trajectories (unwrapped positions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathBatch {
    pub config: SimConfig,
    pub dim: usize,
    pub starts: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    /// Flattened `path x time x dim`.
    pub states: Vec<f64>,
}

impl PathBatch {
    pub fn n_paths(&self) -> usize {
        self.config.n_paths
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn state(&self, path: usize, t: usize) -> &[f64] {
        let o = (path * self.times.len() + t) * self.dim;
        &self.states[o..o + self.dim]
    }

    pub fn terminal(&self, path: usize) -> &[f64] {
        self.state(path, self.times.len() - 1)
    }

    pub fn wrapped(&self, torus: &Torus, path: usize, t: usize) -> Vec<f64> {
        torus.wrap(self.state(path, t))
    }

    /// Start of path `p` (starts are cycled).
    pub fn start(&self, path: usize) -> &[f64] {
        &self.starts[path % self.starts.len()]
    }
}

/// Step indices that are stored: multiples of the stride plus the last step.
pub fn stored_steps(n_steps: u64, stride: usize) -> Vec<u64> {
    let mut ks: Vec<u64> = (0..=n_steps).step_by(stride).collect();
    if *ks.last().unwrap() != n_steps {
        ks.push(n_steps);
    }
    ks
}

fn simulate_impl<E: Executor>(
    set: &CoefficientSet,
    config: &SimConfig,
    eps: f64,
    h: f64,
    scale: f64,
    time_unit: f64,
    starts: &[Vec<f64>],
    exec: &E,
) -> Result<PathBatch> {
    config.validate()?;
    check_set(set)?;
    check_points(set, starts)?;
    let n = set.dim();
    let n_steps = config.n_steps();
    let ks = stored_steps(n_steps, config.store_stride);
    let per_path = run_paths(exec, config.n_paths, |p| {
        let mut euler = Euler::new(set, eps, h, config.noise_refinement, PathNoise::new(config.seed, p, Stream::Drive));
        let mut x: Vec<f64> = starts[p % starts.len()].iter().map(|v| v / scale).collect();
        let mut out = Vec::with_capacity(ks.len() * n);
        let mut next = 0;
        for k in 0..=n_steps {
            if ks[next] == k {
                if scale == 1.0 {
                    out.extend_from_slice(&x);
                } else {
                    out.extend(x.iter().map(|v| v * scale));
                }
                next += 1;
            }
            if k == n_steps {
                break;
            }
            euler.step(k, &mut x);
            ensure_finite(&x, p, k + 1)?;
        }
        Ok(out)
    })?;
    let mut cfg = config.clone();
    cfg.epsilon = eps;
    Ok(PathBatch {
        config: cfg,
        dim: n,
        starts: starts.to_vec(),
        times: ks.iter().map(|&k| k as f64 * h * time_unit).collect(),
        states: per_path.concat(),
    })
}

/// Paths of the scaled process (`config.epsilon = 0` gives the limit-drift process).
pub fn simulate_scaled<E: Executor>(set: &CoefficientSet, config: &SimConfig, starts: &[Vec<f64>], exec: &E) -> Result<PathBatch> {
    simulate_impl(set, config, config.epsilon, config.step, 1.0, 1.0, starts, exec)
}

/// Paths of the original process `X^eps(x, t) = eps * Xbar^eps(x / eps, t / eps^2)`.
///
/// `config.step` and `config.horizon` are original-time quantities; the scaled
/// process is run with step `step / eps^2`. Because normals are indexed by step,
/// every `eps` sees the same original-time Brownian path.
pub fn simulate_original<E: Executor>(set: &CoefficientSet, epsilon: f64, config: &SimConfig, starts: &[Vec<f64>], exec: &E) -> Result<PathBatch> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig("epsilon must be > 0 for the original process".into()));
    }
    let e2 = epsilon * epsilon;
    simulate_impl(set, config, epsilon, config.step / e2, epsilon, e2, starts, exec)
}

/// Uniform points on the cell, from the `Init` stream of `seed`.
pub fn uniform_starts(torus: &Torus, n: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|p| {
            let noise = PathNoise::new(seed, p, Stream::Init);
            torus
                .periods()
                .iter()
                .enumerate()
                .map(|(i, tau)| noise.uniform(0, i as u32) * tau)
                .collect()
        })
        .collect()
}

/// Regular `k^n` grid of points `(i + 1/2) tau / k`.
pub fn start_grid(torus: &Torus, per_axis: usize) -> Vec<Vec<f64>> {
    let shape = vec![per_axis; torus.dim()];
    let total: usize = shape.iter().product();
    (0..total)
        .map(|k| {
            let mut x = vec![0.0; torus.dim()];
            crate::field::bin_center(torus, &shape, k, &mut x);
            x
        })
        .collect()
}

/// Flow Jacobians `J_x(t)` at stored times, flattened `path x time x n x n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianBatch {
    pub dim: usize,
    pub n_times: usize,
    pub states: Vec<f64>,
}

impl JacobianBatch {
    pub fn at(&self, path: usize, t: usize) -> &[f64] {
        let nn = self.dim * self.dim;
        let o = (path * self.n_times + t) * nn;
        &self.states[o..o + nn]
    }
}

/// `Db + eps Dc` (row-major `n x n`) and `D sigma_j` (`m` blocks of `n x n`)
/// at the wrapped point `w`, by central differences.
pub(crate) fn coefficient_derivatives(set: &CoefficientSet, eps: f64, w: &[f64], fd: f64, db: &mut [f64], dsig: &mut [f64]) {
    let n = set.dim();
    let m = set.noise_dim();
    let mut p = [0.0; MAX_DIM];
    let mut bp = [0.0; MAX_DIM];
    let mut bm = [0.0; MAX_DIM];
    let mut cp = [0.0; MAX_DIM];
    let mut cm = [0.0; MAX_DIM];
    let mut sp = [0.0; MAX_DIM * MAX_DIM];
    let mut sm = [0.0; MAX_DIM * MAX_DIM];
    let with_c = eps != 0.0 && !set.c_is_zero();
    for l in 0..n {
        p[..n].copy_from_slice(w);
        p[l] = w[l] + fd;
        set.drift_b(&p[..n], &mut bp[..n]);
        set.sigma(&p[..n], &mut sp[..n * m]);
        if with_c {
            set.drift_c(&p[..n], &mut cp[..n]);
        }
        p[l] = w[l] - fd;
        set.drift_b(&p[..n], &mut bm[..n]);
        set.sigma(&p[..n], &mut sm[..n * m]);
        if with_c {
            set.drift_c(&p[..n], &mut cm[..n]);
        }
        for i in 0..n {
            let mut d = (bp[i] - bm[i]) / (2.0 * fd);
            if with_c {
                d += eps * (cp[i] - cm[i]) / (2.0 * fd);
            }
            db[i * n + l] = d;
            for j in 0..m {
                dsig[j * n * n + i * n + l] = (sp[i * m + j] - sm[i * m + j]) / (2.0 * fd);
            }
        }
    }
}

/// Joint Euler step of a flow Jacobian: `J += Db J h + sum_j Dsigma_j J sqrt(h) xi_j`.
pub(crate) fn jacobian_step(n: usize, m: usize, j: &mut [f64], db: &[f64], dsig: &[f64], h: f64, xi: &[f64]) {
    let sqrt_h = libm::sqrt(h);
    let mut gen = [0.0; MAX_DIM * MAX_DIM];
    for r in 0..n * n {
        let mut v = db[r] * h;
        for q in 0..m {
            v += dsig[q * n * n + r] * sqrt_h * xi[q];
        }
        gen[r] = v;
    }
    let mut inc = [0.0; MAX_DIM * MAX_DIM];
    crate::linalg::matmul(&gen[..n * n], j, n, n, n, &mut inc[..n * n]);
    for r in 0..n * n {
        j[r] += inc[r];
    }
}

/// Joint simulation of the scaled process and its flow Jacobian.
pub fn simulate_jacobian<E: Executor>(set: &CoefficientSet, config: &SimConfig, starts: &[Vec<f64>], exec: &E) -> Result<(PathBatch, JacobianBatch)> {
    config.validate()?;
    check_set(set)?;
    check_points(set, starts)?;
    let n = set.dim();
    let m = set.noise_dim();
    let n_steps = config.n_steps();
    let ks = stored_steps(n_steps, config.store_stride);
    let eps = config.epsilon;
    let per_path = run_paths(exec, config.n_paths, |p| {
        let mut euler = Euler::new(set, eps, config.step, config.noise_refinement, PathNoise::new(config.seed, p, Stream::Drive));
        let mut x = starts[p % starts.len()].clone();
        let mut jac = crate::linalg::identity(n);
        let mut db = [0.0; MAX_DIM * MAX_DIM];
        let mut dsig = [0.0; MAX_DIM * MAX_DIM * MAX_DIM];
        let mut xs = Vec::with_capacity(ks.len() * n);
        let mut js = Vec::with_capacity(ks.len() * n * n);
        let mut next = 0;
        for k in 0..=n_steps {
            if ks[next] == k {
                xs.extend_from_slice(&x);
                js.extend_from_slice(&jac);
                next += 1;
            }
            if k == n_steps {
                break;
            }
            euler.prepare(k, &x);
            coefficient_derivatives(set, eps, euler.wrapped(), config.fd_step, &mut db[..n * n], &mut dsig[..m * n * n]);
            jacobian_step(n, m, &mut jac, &db[..n * n], &dsig[..m * n * n], config.step, euler.normals());
            euler.advance(&mut x);
            ensure_finite(&x, p, k + 1)?;
            ensure_finite(&jac, p, k + 1)?;
        }
        Ok((xs, js))
    })?;
    let (xs, js): (Vec<_>, Vec<_>) = per_path.into_iter().unzip();
    let times: Vec<f64> = ks.iter().map(|&k| k as f64 * config.step).collect();
    Ok((
        PathBatch {
            config: config.clone(),
            dim: n,
            starts: starts.to_vec(),
            times: times.clone(),
            states: xs.concat(),
        },
        JacobianBatch {
            dim: n,
            n_times: times.len(),
            states: js.concat(),
        },
    ))
}

/// Entry statistics for one start point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingStats {
    pub start: Vec<f64>,
    pub fraction: f64,
    /// `(q, t_q)` over the paths that entered.
    pub quantiles: Vec<(f64, f64)>,
}

pub const HITTING_QUANTILES: [f64; 4] = [0.1, 0.5, 0.9, 1.0];

/// For each start, the fraction of `config.n_paths` paths whose wrapped
/// trajectory enters `region` by `config.horizon` (checked at every step,
/// including time 0), with entry-time quantiles. Path ids are
/// `start_index * n_paths + i`.
pub fn hitting_diagnostic<E: Executor>(set: &CoefficientSet, region: &Region, config: &SimConfig, starts: &[Vec<f64>], exec: &E) -> Result<Vec<HittingStats>> {
    config.validate()?;
    check_set(set)?;
    check_points(set, starts)?;
    region.check_dim(set.dim())?;
    let n_steps = config.n_steps();
    let np = config.n_paths;
    let torus = set.torus();
    let hits = run_paths(exec, starts.len() * np, |id| {
        let start = &starts[id / np];
        let mut euler = Euler::new(set, config.epsilon, config.step, config.noise_refinement, PathNoise::new(config.seed, id, Stream::Drive));
        let mut x = start.clone();
        let mut w = vec![0.0; x.len()];
        for k in 0..=n_steps {
            torus.wrap_into(&x, &mut w);
            if region.contains(torus, &w) {
                return Ok(Some(k as f64 * config.step));
            }
            if k == n_steps {
                break;
            }
            euler.step(k, &mut x);
            ensure_finite(&x, id, k + 1)?;
        }
        Ok(None)
    })?;
    Ok(starts
        .iter()
        .enumerate()
        .map(|(s, start)| {
            let mut ts: Vec<f64> = hits[s * np..(s + 1) * np].iter().flatten().copied().collect();
            ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            HittingStats {
                start: start.clone(),
                fraction: ts.len() as f64 / np as f64,
                quantiles: if ts.is_empty() {
                    Vec::new()
                } else {
                    HITTING_QUANTILES
                        .iter()
                        .map(|&q| (q, stats::quantile_sorted(&ts, q)))
                        .collect()
                },
            }
        })
        .collect())
}

/// Result of [`contraction_diagnostic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub times: Vec<f64>,
    /// Per time: max over starts of the estimated `E[|J(t)|_HS 1{tau_U >= t}]`.
    pub sup_estimate: Vec<f64>,
    /// Standard error of the maximising start's estimate.
    pub sup_stderr: Vec<f64>,
    pub min_value: f64,
    pub min_time: f64,
    /// `min_value + 2 stderr`.
    pub upper_bound: f64,
    pub passes: bool,
}

/// Estimates `inf_t sup_x E[|J_x(t)|_HS 1{tau_U >= t}]`, where `tau_U` is the
/// first entry time of the wrapped path into `region_u`.
pub fn contraction_diagnostic<E: Executor>(set: &CoefficientSet, config: &SimConfig, region_u: &Region, time_grid: &[f64], starts: &[Vec<f64>], exec: &E) -> Result<ContractionReport> {
    config.validate()?;
    check_set(set)?;
    check_points(set, starts)?;
    region_u.check_dim(set.dim())?;
    if time_grid.is_empty() {
        return Err(Error::InvalidConfig("time grid is empty".into()));
    }
    let n = set.dim();
    let m = set.noise_dim();
    let kt: Vec<u64> = time_grid.iter().map(|&t| steps_for(t, config.step)).collect();
    let n_steps = kt.iter().copied().max().unwrap();
    let np = config.n_paths;
    let torus = set.torus();
    let eps = config.epsilon;
    let rows = run_paths(exec, starts.len() * np, |id| {
        let mut euler = Euler::new(set, eps, config.step, config.noise_refinement, PathNoise::new(config.seed, id, Stream::Drive));
        let mut x = starts[id / np].clone();
        let mut w = vec![0.0; n];
        let mut jac = crate::linalg::identity(n);
        let mut db = [0.0; MAX_DIM * MAX_DIM];
        let mut dsig = [0.0; MAX_DIM * MAX_DIM * MAX_DIM];
        let mut hit: Option<u64> = None;
        let mut vals = vec![0.0; kt.len()];
        for k in 0..=n_steps {
            if hit.is_none() {
                torus.wrap_into(&x, &mut w);
                if region_u.contains(torus, &w) {
                    hit = Some(k);
                }
            }
            let alive = |kk: u64| hit.map_or(true, |h| h >= kk);
            for (i, &kk) in kt.iter().enumerate() {
                if kk == k && alive(kk) {
                    vals[i] = crate::linalg::hs_norm(&jac);
                }
            }
            if k == n_steps || (hit.is_some() && kt.iter().all(|&kk| kk <= k || !alive(kk))) {
                break;
            }
            euler.prepare(k, &x);
            coefficient_derivatives(set, eps, euler.wrapped(), config.fd_step, &mut db[..n * n], &mut dsig[..m * n * n]);
            jacobian_step(n, m, &mut jac, &db[..n * n], &dsig[..m * n * n], config.step, euler.normals());
            euler.advance(&mut x);
            ensure_finite(&x, id, k + 1)?;
        }
        Ok(vals)
    })?;
    let mut sup_estimate = Vec::with_capacity(kt.len());
    let mut sup_stderr = Vec::with_capacity(kt.len());
    for i in 0..kt.len() {
        let mut best = (f64::NEG_INFINITY, 0.0);
        for s in 0..starts.len() {
            let mut acc = MeanVar::new();
            for r in &rows[s * np..(s + 1) * np] {
                acc.push(r[i]);
            }
            if acc.mean > best.0 {
                best = (acc.mean, acc.stderr());
            }
        }
        sup_estimate.push(best.0);
        sup_stderr.push(best.1);
    }
    let (imin, _) = sup_estimate
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let upper = sup_estimate[imin] + 2.0 * sup_stderr[imin];
    Ok(ContractionReport {
        times: time_grid.to_vec(),
        min_value: sup_estimate[imin],
        min_time: time_grid[imin],
        upper_bound: upper,
        passes: upper < 1.0,
        sup_estimate,
        sup_stderr,
    })
}

/// Weak-error study over a ladder of step sizes sharing one Brownian path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakOrderReport {
    /// Step sizes, coarsest first, each half the previous.
    pub steps: Vec<f64>,
    pub means: Vec<f64>,
    pub stderr: Vec<f64>,
    /// `E[phi(X_h)] - E[phi(X_{h/2})]` per consecutive pair, with paired stderr.
    pub differences: Vec<f64>,
    pub difference_stderr: Vec<f64>,
    /// Slope of `log |difference|` against `log h`, when every difference is
    /// resolved beyond three standard errors.
    pub order: Option<f64>,
}

impl WeakOrderReport {
    /// `|mean - exact|` per level with the stderr of the mean.
    pub fn errors_against(&self, exact: f64) -> Vec<(f64, f64)> {
        self.means
            .iter()
            .zip(&self.stderr)
            .map(|(m, s)| (libm::fabs(m - exact), *s))
            .collect()
    }
}

/// Runs the scaled process (at `config.epsilon`) to `config.horizon` at steps
/// `config.step / 2^l`, `l = 0..levels`, with common noise, and compares
/// `E[phi(X_T)]` across levels.
pub fn weak_order_study<E: Executor>(
    set: &CoefficientSet,
    config: &SimConfig,
    levels: u32,
    starts: &[Vec<f64>],
    phi: &(dyn Fn(&[f64]) -> f64 + Sync),
    exec: &E,
) -> Result<WeakOrderReport> {
    config.validate()?;
    check_set(set)?;
    check_points(set, starts)?;
    if levels < 2 {
        return Err(Error::InvalidConfig("weak-order study needs at least two levels".into()));
    }
    let steps: Vec<f64> = (0..levels).map(|l| config.step / (1u64 << l) as f64).collect();
    let per_path = run_paths(exec, config.n_paths, |p| {
        let noise = PathNoise::new(config.seed, p, Stream::Drive);
        let mut out = Vec::with_capacity(levels as usize);
        for (l, &h) in steps.iter().enumerate() {
            let refinement = config.noise_refinement + levels - 1 - l as u32;
            let mut euler = Euler::new(set, config.epsilon, h, refinement, noise);
            let mut x = starts[p % starts.len()].clone();
            let n_steps = steps_for(config.horizon, h);
            for k in 0..n_steps {
                euler.step(k, &mut x);
            }
            ensure_finite(&x, p, n_steps)?;
            out.push(phi(&x));
        }
        Ok(out)
    })?;
    let mut means = Vec::new();
    let mut stderr = Vec::new();
    for l in 0..levels as usize {
        let mut acc = MeanVar::new();
        per_path.iter().for_each(|r| acc.push(r[l]));
        means.push(acc.mean);
        stderr.push(acc.stderr());
    }
    let mut differences = Vec::new();
    let mut difference_stderr = Vec::new();
    for l in 0..levels as usize - 1 {
        let mut acc = MeanVar::new();
        per_path.iter().for_each(|r| acc.push(r[l] - r[l + 1]));
        differences.push(acc.mean);
        difference_stderr.push(acc.stderr());
    }
    let resolved = differences
        .iter()
        .zip(&difference_stderr)
        .all(|(d, s)| libm::fabs(*d) > 3.0 * s && *d != 0.0);
    let order = if resolved {
        let xs: Vec<f64> = steps[..steps.len() - 1].iter().map(|h| libm::log(*h)).collect();
        let ys: Vec<f64> = differences.iter().map(|d| libm::log(libm::fabs(*d))).collect();
        stats::linear_fit(&xs, &ys).map(|f| f.slope)
    } else {
        None
    };
    Ok(WeakOrderReport {
        steps,
        means,
        stderr,
        differences,
        difference_stderr,
        order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::constant_identity;
    use crate::exec::Serial;
    use alloc::sync::Arc;

    #[test]
    fn stored_steps_include_last() {
        assert_eq!(stored_steps(5, 2), vec![0, 2, 4, 5]);
        assert_eq!(stored_steps(4, 2), vec![0, 2, 4]);
        assert_eq!(steps_for(1.0, 0.1), 10);
        assert_eq!(steps_for(1.05, 0.1), 11);
    }

    #[test]
    fn deterministic_ode_is_exact() {
        let t = Torus::new(vec![10.0]).unwrap();
        let set = CoefficientSet::builder(t, 1)
            .drift_b(Arc::new(|_, o: &mut [f64]| o[0] = 0.5))
            .build();
        let cfg = SimConfig {
            step: 0.125,
            horizon: 4.0,
            n_paths: 2,
            ..SimConfig::default()
        };
        let batch = simulate_scaled(&set, &cfg, &[vec![1.0]], &Serial).unwrap();
        for p in 0..2 {
            for (ti, &t) in batch.times.iter().enumerate() {
                assert_eq!(batch.state(p, ti)[0], 1.0 + 0.5 * t);
            }
        }
    }

    #[test]
    fn starts_are_stored_exactly() {
        let set = constant_identity(Torus::cube(2, 1.0).unwrap());
        let cfg = SimConfig {
            step: 0.01,
            horizon: 0.1,
            n_paths: 3,
            ..SimConfig::default()
        };
        let starts = vec![vec![0.1, 0.2], vec![0.3, 0.4]];
        let b = simulate_scaled(&set, &cfg, &starts, &Serial).unwrap();
        assert_eq!(b.state(0, 0), &[0.1, 0.2]);
        assert_eq!(b.state(1, 0), &[0.3, 0.4]);
        assert_eq!(b.state(2, 0), &[0.1, 0.2]);
    }

    #[test]
    fn nonfinite_state_is_reported() {
        let set = CoefficientSet::builder(Torus::new(vec![1.0]).unwrap(), 1)
            .drift_b(Arc::new(|x, o: &mut [f64]| o[0] = if x[0] > 0.5 { f64::NAN } else { 1.0 }))
            .build();
        let cfg = SimConfig {
            step: 0.1,
            horizon: 1.0,
            n_paths: 1,
            ..SimConfig::default()
        };
        let err = simulate_scaled(&set, &cfg, &[vec![0.0]], &Serial).unwrap_err();
        assert!(matches!(err, Error::NonFinite { path: 0, .. }));
    }
}
