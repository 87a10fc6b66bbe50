//! Empirical checks of the functional central limit theorem and of the
//! semigroup convergence toward the homogenized Brownian motion.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::corrector::CorrectorField;
use crate::effective::{z_score, EffectiveModel};
use crate::error::{Error, Result};
use crate::exec::{blocks, Executor, DEFAULT_BLOCKS};
use crate::field::ScalarFn;
use crate::linalg;
use crate::rng::{PathNoise, Stream};
use crate::sde::{check_points, check_set, ensure_finite, run_paths, steps_for, Euler, SimConfig, MAX_DIM};
use crate::stats::{self, MeanVar};

/// `X^eps(x, t) - pi(b) t / eps` at the requested step indices, one row of
/// `k.len() * n` values per path. `config.step` is in original time.
pub fn original_at_steps<E: Executor>(set: &CoefficientSet, epsilon: f64, config: &SimConfig, starts: &[Vec<f64>], pi_b: &[f64], ks: &[u64], exec: &E) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    check_set(set)?;
    check_points(set, starts)?;
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig("epsilon must be > 0 for the original process".into()));
    }
    let n = set.dim();
    let h = config.step / (epsilon * epsilon);
    let last = ks.iter().copied().max().unwrap_or(0);
    run_paths(exec, config.n_paths, |p| {
        let mut euler = Euler::new(set, epsilon, h, config.noise_refinement, PathNoise::new(config.seed, p, Stream::Drive));
        let x0 = &starts[p % starts.len()];
        let mut x: Vec<f64> = x0.iter().map(|v| v / epsilon).collect();
        let mut out = vec![0.0; ks.len() * n];
        for k in 0..=last {
            for (ti, &kt) in ks.iter().enumerate() {
                if kt == k {
                    let t = k as f64 * config.step;
                    for i in 0..n {
                        out[ti * n + i] = epsilon * x[i] - pi_b[i] * t / epsilon;
                    }
                }
            }
            if k == last {
                break;
            }
            euler.step(k, &mut x);
            ensure_finite(&x, p, k + 1)?;
        }
        Ok(out)
    })
}

/// `W(x, t) = x + b t + S B(t)` with `S S^T = A`, driven by the same normals
/// as [`original_at_steps`] (the first `n` of each step).
pub fn limit_at_steps<E: Executor>(model: &EffectiveModel, config: &SimConfig, starts: &[Vec<f64>], ks: &[u64], exec: &E) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    let n = model.dim;
    if n > MAX_DIM || starts.is_empty() || starts.iter().any(|s| s.len() != n) {
        return Err(Error::DimensionMismatch {
            what: "start point",
            expected: n,
            got: starts.first().map_or(0, |s| s.len()),
        });
    }
    let s = model.cov_sqrt()?;
    let last = ks.iter().copied().max().unwrap_or(0);
    let sqrt_dt = libm::sqrt(config.step);
    run_paths(exec, config.n_paths, |p| {
        let noise = PathNoise::new(config.seed, p, Stream::Drive);
        let mut w = starts[p % starts.len()].clone();
        let mut xi = [0.0; MAX_DIM];
        let mut scratch = [0.0; MAX_DIM];
        let mut out = vec![0.0; ks.len() * n];
        for k in 0..=last {
            for (ti, &kt) in ks.iter().enumerate() {
                if kt == k {
                    out[ti * n..(ti + 1) * n].copy_from_slice(&w);
                }
            }
            if k == last {
                break;
            }
            noise.coarse_normals(k, config.noise_refinement, &mut xi[..n], &mut scratch[..n]);
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += s[i * n + j] * xi[j];
                }
                w[i] += model.drift_b[i] * config.step + sqrt_dt * acc;
            }
        }
        Ok(out)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub epsilons: Vec<f64>,
    pub times: Vec<f64>,
    pub starts: Vec<Vec<f64>>,
    /// `[eps][t]` -> `n x n` covariance of `Y = X - x - pi(b) t / eps`.
    pub empirical_cov: Vec<Vec<Vec<f64>>>,
    pub cov_stderr: Vec<Vec<Vec<f64>>>,
    /// `[eps][t]` -> mean of `Y`.
    pub empirical_mean: Vec<Vec<Vec<f64>>>,
    pub mean_stderr: Vec<Vec<Vec<f64>>>,
    pub target: EffectiveModel,
    /// Per epsilon, R^2 of `tr cov(Y(t))` against `t`.
    pub linearity_r2: Vec<f64>,
    pub intercept: Vec<f64>,
    pub intercept_stderr: Vec<f64>,
    /// `[eps][t][i]`: Kolmogorov–Smirnov p-value of the whitened coordinate `i`.
    pub gaussianity_p: Vec<Vec<Vec<f64>>>,
    /// Per epsilon, mean lag-1 correlation of consecutive increments.
    pub increment_independence: Vec<f64>,
    /// Per epsilon, `|cov(Y(T)) / T - A|_HS` at the largest time, with its stderr.
    pub cov_error: Vec<f64>,
    pub cov_error_stderr: Vec<f64>,
    /// Per epsilon, largest z-score of `mean(Y(T)) / T` against the target drift.
    pub drift_z: Vec<f64>,
    /// Per epsilon, largest z-score between a single start's terminal trace and the pooled one.
    pub start_agreement_z: Vec<f64>,
}

impl CltReport {
    pub fn min_gaussianity_p(&self, eps_index: usize) -> f64 {
        self.gaussianity_p[eps_index]
            .iter()
            .flatten()
            .fold(1.0, |m: f64, &p| m.min(p))
    }

    /// Whether the covariance error is nonincreasing along the (descending)
    /// epsilon ladder, up to `sigmas` standard errors.
    pub fn monotone_improvement(&self, sigmas: f64) -> bool {
        self.cov_error.windows(2).zip(self.cov_error_stderr.windows(2)).all(|(e, s)| {
            e[1] <= e[0] + sigmas * libm::sqrt(s[0] * s[0] + s[1] * s[1])
        })
    }
}

fn rows_at<'a>(rows: &'a [Vec<f64>], ti: usize, n: usize, idx: &[usize]) -> Vec<&'a [f64]> {
    idx.iter().map(|&p| &rows[p][ti * n..(ti + 1) * n]).collect()
}

/// Simulates `Y^eps` for each epsilon (descending) and compares its law at
/// the given times with the limit Brownian motion of `model`.
pub fn verify_clt<E: Executor>(set: &CoefficientSet, model: &EffectiveModel, pi_b: &[f64], epsilons: &[f64], times: &[f64], starts: &[Vec<f64>], config: &SimConfig, exec: &E) -> Result<CltReport> {
    let n = set.dim();
    if model.dim != n || pi_b.len() != n {
        return Err(Error::DimensionMismatch {
            what: "effective model",
            expected: n,
            got: model.dim,
        });
    }
    if epsilons.is_empty() || epsilons.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidConfig("epsilons must be non-empty and sorted descending".into()));
    }
    if times.is_empty() || times.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidConfig("CLT times must be positive".into()));
    }
    linalg::psd_sqrt(&model.cov_a, n, crate::effective::PSD_TOLERANCE)?;
    let mut times = times.to_vec();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ks: Vec<u64> = times.iter().map(|&t| steps_for(t, config.step)).collect();
    let real_t: Vec<f64> = ks.iter().map(|&k| k as f64 * config.step).collect();
    let nt = times.len();
    let all: Vec<usize> = (0..config.n_paths).collect();
    let path_blocks = blocks(config.n_paths, DEFAULT_BLOCKS);
    let mut report = CltReport {
        epsilons: epsilons.to_vec(),
        times: real_t.clone(),
        starts: starts.to_vec(),
        empirical_cov: Vec::new(),
        cov_stderr: Vec::new(),
        empirical_mean: Vec::new(),
        mean_stderr: Vec::new(),
        target: model.clone(),
        linearity_r2: Vec::new(),
        intercept: Vec::new(),
        intercept_stderr: Vec::new(),
        gaussianity_p: Vec::new(),
        increment_independence: Vec::new(),
        cov_error: Vec::new(),
        cov_error_stderr: Vec::new(),
        drift_z: Vec::new(),
        start_agreement_z: Vec::new(),
    };
    for &eps in epsilons {
        let mut rows = original_at_steps(set, eps, config, starts, pi_b, &ks, exec)?;
        for (p, r) in rows.iter_mut().enumerate() {
            let x0 = &starts[p % starts.len()];
            for ti in 0..nt {
                for i in 0..n {
                    r[ti * n + i] -= x0[i];
                }
            }
        }
        let mut covs = Vec::with_capacity(nt);
        let mut cov_se = Vec::with_capacity(nt);
        let mut means = Vec::with_capacity(nt);
        let mut mean_se = Vec::with_capacity(nt);
        let mut pvals = Vec::with_capacity(nt);
        let mut traces = Vec::with_capacity(nt);
        let mut trace_se = Vec::with_capacity(nt);
        for ti in 0..nt {
            let slice = rows_at(&rows, ti, n, &all);
            let cov = stats::sample_covariance(&slice, n);
            let per_block: Vec<Vec<f64>> = path_blocks
                .iter()
                .filter(|r| r.len() >= 2)
                .map(|r| stats::sample_covariance(&slice[r.clone()], n))
                .collect();
            let block_traces: Vec<Vec<f64>> = per_block.iter().map(|c| vec![(0..n).map(|i| c[i * n + i]).sum()]).collect();
            trace_se.push(stats::spread_stderr(&block_traces, 1)[0]);
            cov_se.push(stats::spread_stderr(&per_block, n * n));
            traces.push((0..n).map(|i| cov[i * n + i]).sum::<f64>());
            let mut m = vec![0.0; n];
            let mut mse = vec![0.0; n];
            for i in 0..n {
                let col: Vec<f64> = slice.iter().map(|r| r[i]).collect();
                let (a, b) = stats::mean_stderr(&col);
                m[i] = a;
                mse[i] = b;
            }
            pvals.push(whitened_pvalues(&slice, &m, &cov, n));
            covs.push(cov);
            means.push(m);
            mean_se.push(mse);
        }
        let fit = if nt >= 2 { stats::linear_fit(&real_t, &traces) } else { None };
        report.linearity_r2.push(fit.as_ref().map_or(1.0, |f| f.r2));
        report.intercept.push(fit.as_ref().map_or(0.0, |f| f.intercept));
        report.intercept_stderr.push(fit.as_ref().map_or(0.0, |f| f.intercept_stderr.max(trace_se[0])));

        report.increment_independence.push(increment_correlation(&rows, nt, n));

        let t_last = real_t[nt - 1];
        let c_last = &covs[nt - 1];
        let diff: Vec<f64> = (0..n * n).map(|i| c_last[i] / t_last - model.cov_a[i]).collect();
        let err = linalg::hs_norm(&diff);
        let se2: f64 = (0..n * n)
            .map(|i| {
                let a = cov_se[nt - 1][i] / t_last;
                let b = model.cov_a_stderr[i];
                let w = if err > 0.0 { diff[i] / err } else { 1.0 };
                w * w * (a * a + b * b)
            })
            .sum();
        report.cov_error.push(err);
        report.cov_error_stderr.push(libm::sqrt(se2));

        let dz = (0..n)
            .map(|i| z_score(means[nt - 1][i] / t_last - model.drift_b[i], mean_se[nt - 1][i] / t_last, model.drift_b_stderr[i]))
            .fold(0.0, f64::max);
        report.drift_z.push(dz);

        let mut agree = 0.0f64;
        if starts.len() > 1 {
            for s in 0..starts.len() {
                let idx: Vec<usize> = (s..config.n_paths).step_by(starts.len()).collect();
                if idx.len() < 4 {
                    continue;
                }
                let sl = rows_at(&rows, nt - 1, n, &idx);
                let c = stats::sample_covariance(&sl, n);
                let tr: f64 = (0..n).map(|i| c[i * n + i]).sum();
                let bs = blocks(idx.len(), DEFAULT_BLOCKS.min(idx.len() / 2));
                let tb: Vec<Vec<f64>> = bs
                    .iter()
                    .filter(|r| r.len() >= 2)
                    .map(|r| {
                        let c = stats::sample_covariance(&sl[r.clone()], n);
                        vec![(0..n).map(|i| c[i * n + i]).sum()]
                    })
                    .collect();
                let se = stats::spread_stderr(&tb, 1)[0];
                agree = agree.max(z_score(tr - traces[nt - 1], se, trace_se[nt - 1]));
            }
        }
        report.start_agreement_z.push(agree);

        report.empirical_cov.push(covs);
        report.cov_stderr.push(cov_se);
        report.empirical_mean.push(means);
        report.mean_stderr.push(mean_se);
        report.gaussianity_p.push(pvals);
    }
    Ok(report)
}

/// KS p-values of each coordinate after whitening with the empirical
/// covariance. Degenerate directions get p = 1 when they are constant.
fn whitened_pvalues(rows: &[&[f64]], mean: &[f64], cov: &[f64], n: usize) -> Vec<f64> {
    let (vals, vecs) = linalg::sym_eigen(cov, n);
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (0..n)
        .map(|k| {
            let lambda = vals[k];
            if !(lambda > 1e-14 * scale.max(1e-300)) {
                return 1.0;
            }
            let inv = 1.0 / libm::sqrt(lambda);
            let z: Vec<f64> = rows
                .iter()
                .map(|r| (0..n).map(|i| vecs[i * n + k] * (r[i] - mean[i])).sum::<f64>() * inv)
                .collect();
            stats::ks_standard_normal(&z).1
        })
        .collect()
}

/// Mean over coordinates and consecutive time pairs of the correlation
/// between successive increments of `Y`.
fn increment_correlation(rows: &[Vec<f64>], nt: usize, n: usize) -> f64 {
    if nt < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut cnt = 0.0;
    for ti in 0..nt - 2 {
        for i in 0..n {
            let a: Vec<f64> = rows.iter().map(|r| r[(ti + 1) * n + i] - r[ti * n + i]).collect();
            let b: Vec<f64> = rows.iter().map(|r| r[(ti + 2) * n + i] - r[(ti + 1) * n + i]).collect();
            acc += stats::correlation(&a, &b);
            cnt += 1.0;
        }
    }
    acc / cnt
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticVariationReport {
    pub t: f64,
    pub epsilon: f64,
    /// Mean of `eps^2 <M>_{t / eps^2} / t` (`n x n`).
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub target: Vec<f64>,
    pub max_z: f64,
}

/// Accumulates `(I - Dbeta) a (I - Dbeta)^T` along scaled paths, which is the
/// quadratic variation of the martingale part of `Xbar - beta(Xbar)`.
pub fn quadratic_variation_check<E: Executor>(set: &CoefficientSet, beta: &CorrectorField, target: &EffectiveModel, epsilon: f64, t: f64, starts: &[Vec<f64>], config: &SimConfig, exec: &E) -> Result<QuadraticVariationReport> {
    config.validate()?;
    check_set(set)?;
    check_points(set, starts)?;
    beta.jacobian.as_ref().ok_or(Error::MissingJacobian)?;
    if !(t > 0.0) {
        return Err(Error::NonPositiveTime(t));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig("epsilon must be > 0".into()));
    }
    let n = set.dim();
    let m = set.noise_dim();
    let h = config.step / (epsilon * epsilon);
    let steps = steps_for(t, config.step);
    let t_real = steps as f64 * config.step;
    let per_path = run_paths(exec, config.n_paths, |p| {
        let mut euler = Euler::new(set, epsilon, h, config.noise_refinement, PathNoise::new(config.seed, p, Stream::Drive));
        let mut x: Vec<f64> = starts[p % starts.len()].iter().map(|v| v / epsilon).collect();
        let mut acc = vec![0.0; n * n];
        let mut d = vec![0.0; n * n];
        let mut ms = vec![0.0; n * m];
        for k in 0..steps {
            euler.prepare(k, &x);
            beta.interpolate_jacobian(euler.wrapped(), &mut d).expect("jacobian checked");
            let s = euler.sigma();
            for i in 0..n {
                for j in 0..m {
                    let mut v = s[i * m + j];
                    for l in 0..n {
                        v -= d[i * n + l] * s[l * m + j];
                    }
                    ms[i * m + j] = v;
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let mut v = 0.0;
                    for l in 0..m {
                        v += ms[i * m + l] * ms[j * m + l];
                    }
                    acc[i * n + j] += v * config.step;
                }
            }
            euler.advance(&mut x);
            ensure_finite(&x, p, k + 1)?;
        }
        acc.iter_mut().for_each(|v| *v /= t_real);
        Ok(acc)
    })?;
    let mut mean = vec![0.0; n * n];
    let mut stderr = vec![0.0; n * n];
    for i in 0..n * n {
        let mut mv = MeanVar::new();
        per_path.iter().for_each(|r| mv.push(r[i]));
        mean[i] = mv.mean;
        stderr[i] = mv.stderr();
    }
    let max_z = (0..n * n)
        .map(|i| z_score(mean[i] - target.cov_a[i], stderr[i], target.cov_a_stderr[i]))
        .fold(0.0, f64::max);
    Ok(QuadraticVariationReport {
        t: t_real,
        epsilon,
        mean,
        stderr,
        target: target.cov_a.clone(),
        max_z,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunctionKind {
    Periodic,
    VanishingAtInfinity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemigroupCell {
    pub t: f64,
    pub x: Vec<f64>,
    /// Paired mean of `f(Y^eps) - f(W)`.
    pub gap: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemigroupRow {
    pub epsilon: f64,
    pub max_gap: f64,
    pub max_gap_stderr: f64,
    pub cells: Vec<SemigroupCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemigroupReport {
    pub kind: TestFunctionKind,
    pub rows: Vec<SemigroupRow>,
}

impl SemigroupReport {
    /// Whether the largest gap at `eps_small` is below the one at `eps_large`
    /// by more than `sigmas` combined standard errors.
    pub fn improves(&self, eps_large: f64, eps_small: f64, sigmas: f64) -> bool {
        let find = |e: f64| self.rows.iter().find(|r| r.epsilon == e);
        match (find(eps_large), find(eps_small)) {
            (Some(a), Some(b)) => {
                let se = libm::sqrt(a.max_gap_stderr * a.max_gap_stderr + b.max_gap_stderr * b.max_gap_stderr);
                a.max_gap - b.max_gap > sigmas * se
            }
            _ => false,
        }
    }
}

/// Compares `E f(X^eps(x, t) - pi(b) t / eps)` with `E f(W(x, t))` on a grid
/// of times and start points. `epsilon = 0` compares the limit with itself.
pub fn semigroup_convergence<E: Executor>(set: &CoefficientSet, model: &EffectiveModel, pi_b: &[f64], f: &ScalarFn, kind: TestFunctionKind, times: &[f64], epsilons: &[f64], probes: &[Vec<f64>], config: &SimConfig, exec: &E) -> Result<SemigroupReport> {
    if times.is_empty() || times.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidConfig("semigroup times must be positive".into()));
    }
    check_points(set, probes)?;
    let ks: Vec<u64> = times.iter().map(|&t| steps_for(t, config.step)).collect();
    let n = set.dim();
    let mut rows = Vec::with_capacity(epsilons.len());
    let limits: Vec<Vec<Vec<f64>>> = probes
        .iter()
        .map(|x| limit_at_steps(model, config, core::slice::from_ref(x), &ks, exec))
        .collect::<Result<_>>()?;
    for &eps in epsilons {
        let mut cells = Vec::new();
        for (xi, x) in probes.iter().enumerate() {
            let lim = &limits[xi];
            let ys = if eps == 0.0 {
                lim.clone()
            } else {
                original_at_steps(set, eps, config, core::slice::from_ref(x), pi_b, &ks, exec)?
            };
            for (ti, &k) in ks.iter().enumerate() {
                let d: Vec<f64> = ys
                    .iter()
                    .zip(lim)
                    .map(|(y, w)| f(&y[ti * n..(ti + 1) * n]) - f(&w[ti * n..(ti + 1) * n]))
                    .collect();
                let (gap, stderr) = stats::mean_stderr(&d);
                cells.push(SemigroupCell {
                    t: k as f64 * config.step,
                    x: x.clone(),
                    gap,
                    stderr,
                });
            }
        }
        let best = cells
            .iter()
            .max_by(|a, b| libm::fabs(a.gap).partial_cmp(&libm::fabs(b.gap)).unwrap())
            .expect("non-empty grid");
        rows.push(SemigroupRow {
            epsilon: eps,
            max_gap: libm::fabs(best.gap),
            max_gap_stderr: best.stderr,
            cells,
        });
    }
    Ok(SemigroupReport { kind, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::constant_identity;
    use crate::exec::Serial;
    use crate::torus::Torus;
    use alloc::sync::Arc;

    #[test]
    fn constant_identity_limit_matches_process_pathwise() {
        let set = constant_identity(Torus::new(vec![1.0, 1.0]).unwrap());
        let model = EffectiveModel::analytic(linalg::identity(2), vec![0.0, 0.0]).unwrap();
        let cfg = SimConfig {
            step: 0.01,
            n_paths: 20,
            seed: 3,
            ..SimConfig::default()
        };
        let starts = vec![vec![0.2, 0.4]];
        let ks = [10, 50];
        let a = original_at_steps(&set, 0.5, &cfg, &starts, &[0.0, 0.0], &ks, &Serial).unwrap();
        let b = limit_at_steps(&model, &cfg, &starts, &ks, &Serial).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (u, v) in x.iter().zip(y) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_epsilon_semigroup_gap_is_zero() {
        let set = constant_identity(Torus::new(vec![1.0]).unwrap());
        let model = EffectiveModel::analytic(vec![1.0], vec![0.0]).unwrap();
        let f: ScalarFn = Arc::new(|x: &[f64]| libm::cos(2.0 * core::f64::consts::PI * x[0]));
        let cfg = SimConfig {
            step: 0.01,
            n_paths: 50,
            ..SimConfig::default()
        };
        let r = semigroup_convergence(&set, &model, &[0.0], &f, TestFunctionKind::Periodic, &[0.1, 0.2], &[0.0], &[vec![0.0], vec![0.3]], &cfg, &Serial).unwrap();
        assert_eq!(r.rows[0].max_gap, 0.0);
    }

    #[test]
    fn frozen_dynamics_have_zero_quadratic_variation() {
        let set = constant_identity(Torus::new(vec![1.0]).unwrap()).scale_sigma(0.0);
        let beta = CorrectorField::from_values(set.torus().clone(), vec![8], crate::corrector::CorrectorTarget::Drift, vec![0.0; 8]).unwrap();
        let beta = crate::corrector::differentiate(&beta, 1.0 / 8.0).unwrap();
        let model = EffectiveModel::analytic(vec![0.0], vec![0.0]).unwrap();
        let cfg = SimConfig {
            step: 0.01,
            n_paths: 10,
            ..SimConfig::default()
        };
        let r = quadratic_variation_check(&set, &beta, &model, 0.5, 1.0, &[vec![0.1]], &cfg, &Serial).unwrap();
        assert_eq!(r.mean[0], 0.0);
    }
}
