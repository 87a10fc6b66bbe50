//! Invariant-measure histograms, π-averages and mixing-rate estimates.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::exec::{blocks, Executor, DEFAULT_BLOCKS};
use crate::field::{bin_center, ScalarFn};
use crate::rng::{PathNoise, Stream};
use crate::sde::{check_points, check_set, ensure_finite, run_paths, steps_for, Euler, SimConfig};
use crate::stats::{self, MeanVar};
use crate::torus::{ravel, Torus};

/// Normalised occupation histogram of the wrapped process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantMeasureEstimate {
    pub torus: Torus,
    pub bins: Vec<usize>,
    pub mass: Vec<f64>,
    /// Normalised histograms of disjoint path blocks, for standard errors.
    pub block_mass: Vec<Vec<f64>>,
    pub burn_in: f64,
    /// Horizon of each path (averaging window is `total_time - burn_in`).
    pub total_time: f64,
    pub epsilon: f64,
    pub n_samples: u64,
    /// Time average of the drift `b` over the same samples as the histogram,
    /// free of the bin-centre quadrature error of [`pi_average`].
    #[serde(default)]
    pub drift_time_average: Option<PiAverage>,
}

impl InvariantMeasureEstimate {
    /// The exact uniform measure on the given bins.
    pub fn uniform(torus: Torus, bins: Vec<usize>) -> Self {
        let total: usize = bins.iter().product();
        let mass = vec![1.0 / total as f64; total];
        Self {
            torus,
            bins,
            block_mass: Vec::new(),
            mass,
            burn_in: 0.0,
            total_time: f64::INFINITY,
            epsilon: 0.0,
            n_samples: 0,
            drift_time_average: None,
        }
    }

    /// Builds an estimate from per-block raw counts.
    pub fn from_block_counts(torus: Torus, bins: Vec<usize>, counts: &[Vec<u64>], burn_in: f64, total_time: f64, epsilon: f64) -> Result<Self> {
        let total: usize = bins.iter().product();
        let mut sum = vec![0u64; total];
        let mut block_mass = Vec::new();
        for c in counts {
            let s: u64 = c.iter().sum();
            for (a, b) in sum.iter_mut().zip(c) {
                *a += b;
            }
            if s > 0 {
                block_mass.push(c.iter().map(|&v| v as f64 / s as f64).collect());
            }
        }
        let n: u64 = sum.iter().sum();
        if n == 0 {
            return Err(Error::EmptySample);
        }
        Ok(Self {
            torus,
            bins,
            mass: sum.iter().map(|&v| v as f64 / n as f64).collect(),
            block_mass,
            burn_in,
            total_time,
            epsilon,
            n_samples: n,
            drift_time_average: None,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.mass.len()
    }

    pub fn center(&self, k: usize, out: &mut [f64]) {
        bin_center(&self.torus, &self.bins, k, out)
    }

    /// Flat bin index of a point (any representative).
    pub fn bin_of(&self, x: &[f64]) -> usize {
        bin_index(&self.torus, &self.bins, x)
    }

    /// `max_k |mass_k * K - 1|`, the largest relative deviation from uniform.
    pub fn max_relative_deviation(&self) -> f64 {
        let k = self.n_bins() as f64;
        self.mass.iter().fold(0.0, |m, &v| m.max(libm::fabs(v * k - 1.0)))
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.mass.iter().zip(&other.mass).map(|(a, b)| libm::fabs(a - b)).sum()
    }

    pub fn l1_from_uniform(&self) -> f64 {
        let u = 1.0 / self.n_bins() as f64;
        self.mass.iter().map(|a| libm::fabs(a - u)).sum()
    }

    /// Per-bin standard errors from the block spread.
    pub fn bin_stderr(&self) -> Vec<f64> {
        let nb = self.block_mass.len();
        (0..self.n_bins())
            .map(|k| {
                if nb < 2 {
                    return 0.0;
                }
                let mut acc = MeanVar::new();
                self.block_mass.iter().for_each(|b| acc.push(b[k]));
                acc.stderr()
            })
            .collect()
    }

    /// Expected L1 norm of pure sampling noise, `sum_k sqrt(2/pi) se_k`.
    pub fn l1_noise_floor(&self) -> f64 {
        libm::sqrt(2.0 / core::f64::consts::PI) * self.bin_stderr().iter().sum::<f64>()
    }

    /// Draws `n` points: a bin by inverse CDF, then uniformly inside it.
    pub fn sample_points(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut cdf = Vec::with_capacity(self.n_bins());
        let mut acc = 0.0;
        for &m in &self.mass {
            acc += m;
            cdf.push(acc);
        }
        let dim = self.torus.dim();
        (0..n)
            .map(|p| {
                let noise = PathNoise::new(seed, p, Stream::Init);
                let u = noise.uniform(0, 0) * acc;
                let k = cdf.partition_point(|&c| c < u).min(self.n_bins() - 1);
                let mut x = vec![0.0; dim];
                self.center(k, &mut x);
                for i in 0..dim {
                    let w = self.torus.periods()[i] / self.bins[i] as f64;
                    x[i] += (noise.uniform(0, 1 + i as u32) - 0.5) * w;
                }
                x
            })
            .collect()
    }
}

pub fn bin_index(torus: &Torus, bins: &[usize], x: &[f64]) -> usize {
    let mut idx = [0usize; 8];
    for i in 0..bins.len() {
        let tau = torus.periods()[i];
        let u = Torus::wrap_coord(x[i], tau) / tau * bins[i] as f64;
        idx[i] = (u as usize).min(bins[i] - 1);
    }
    ravel(&idx[..bins.len()], bins)
}

/// Occupation histogram pooled over paths and over the stored steps after
/// `burn_in` (every `store_stride` steps). Path `p` starts at
/// `starts[p % starts.len()]`.
pub fn estimate_invariant<E: Executor>(set: &CoefficientSet, config: &SimConfig, bins: &[usize], starts: &[Vec<f64>], burn_in: f64, exec: &E) -> Result<InvariantMeasureEstimate> {
    config.validate()?;
    check_set(set)?;
    check_points(set, starts)?;
    if bins.len() != set.dim() || bins.iter().any(|&b| b == 0) {
        return Err(Error::InvalidConfig("one positive bin count per axis is required".into()));
    }
    if !(burn_in >= 0.0 && burn_in < config.horizon) {
        return Err(Error::EmptySample);
    }
    let total: usize = bins.iter().product();
    let n_steps = config.n_steps();
    let k0 = steps_for(burn_in, config.step).min(n_steps);
    let torus = set.torus();
    let path_blocks = blocks(config.n_paths, DEFAULT_BLOCKS);
    let n = set.dim();
    let per_block = run_paths(exec, path_blocks.len(), |b| {
        let mut counts = vec![0u64; total];
        let mut drift_sum = vec![0.0; n];
        let mut drift = vec![0.0; n];
        for p in path_blocks[b].clone() {
            let mut euler = Euler::new(set, config.epsilon, config.step, config.noise_refinement, PathNoise::new(config.seed, p, Stream::Drive));
            let mut x = starts[p % starts.len()].clone();
            for k in 0..=n_steps {
                if k >= k0 && (k - k0) % config.store_stride as u64 == 0 {
                    counts[bin_index(torus, bins, &x)] += 1;
                    set.drift_b(&x, &mut drift);
                    drift_sum.iter_mut().zip(&drift).for_each(|(s, d)| *s += d);
                }
                if k == n_steps {
                    break;
                }
                euler.step(k, &mut x);
                ensure_finite(&x, p, k + 1)?;
                // Only the wrapped state matters here; keeping it wrapped lets
                // the next wrap take its fast path.
                for (xi, &tau) in x.iter_mut().zip(torus.periods()) {
                    *xi = Torus::wrap_coord(*xi, tau);
                }
            }
        }
        Ok((counts, drift_sum))
    })?;
    let counts: Vec<Vec<u64>> = per_block.iter().map(|(c, _)| c.clone()).collect();
    let mut est = InvariantMeasureEstimate::from_block_counts(torus.clone(), bins.to_vec(), &counts, k0 as f64 * config.step, config.horizon, config.epsilon)?;
    let mut value = vec![0.0; n];
    let mut block_means = Vec::new();
    for (c, sum) in &per_block {
        let m: u64 = c.iter().sum();
        if m > 0 {
            value.iter_mut().zip(sum).for_each(|(v, s)| *v += s);
            block_means.push(sum.iter().map(|s| s / m as f64).collect::<Vec<f64>>());
        }
    }
    value.iter_mut().for_each(|v| *v /= est.n_samples as f64);
    let stderr = if block_means.len() >= 2 { stats::spread_stderr(&block_means, n) } else { vec![0.0; n] };
    est.drift_time_average = Some(PiAverage { value, stderr });
    Ok(est)
}

/// A π-average with its block standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiAverage {
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// `sum_k mass_k f(center_k)` for an `ncomp`-valued field.
pub fn pi_average(measure: &InvariantMeasureEstimate, ncomp: usize, f: &dyn Fn(&[f64], &mut [f64])) -> Result<PiAverage> {
    if ncomp == 0 {
        return Err(Error::InvalidConfig("field must have at least one component".into()));
    }
    let dim = measure.torus.dim();
    let mut x = vec![0.0; dim];
    let mut v = vec![0.0; ncomp];
    let mut values = vec![0.0; measure.n_bins() * ncomp];
    for k in 0..measure.n_bins() {
        measure.center(k, &mut x);
        f(&x, &mut v);
        values[k * ncomp..(k + 1) * ncomp].copy_from_slice(&v);
    }
    let weigh = |mass: &[f64]| {
        let mut acc = vec![0.0; ncomp];
        for (k, &m) in mass.iter().enumerate() {
            for c in 0..ncomp {
                acc[c] += m * values[k * ncomp + c];
            }
        }
        acc
    };
    let value = weigh(&measure.mass);
    let mut stderr = vec![0.0; ncomp];
    if measure.block_mass.len() >= 2 {
        let per_block: Vec<Vec<f64>> = measure.block_mass.iter().map(|b| weigh(b)).collect();
        for c in 0..ncomp {
            let mut acc = MeanVar::new();
            per_block.iter().for_each(|b| acc.push(b[c]));
            stderr[c] = acc.stderr();
        }
    }
    Ok(PiAverage { value, stderr })
}

pub fn pi_average_scalar(measure: &InvariantMeasureEstimate, f: &dyn Fn(&[f64]) -> f64) -> (f64, f64) {
    let r = pi_average(measure, 1, &|x, o| o[0] = f(x)).expect("one component");
    (r.value[0], r.stderr[0])
}

/// Decay of `|E f(X(x1,t)) - E f(X(x2,t))|` and its log-linear fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingDiagnostic {
    pub time_grid: Vec<f64>,
    /// Paired difference of the two expectations for the maximising test
    /// function: signed for a scalar function, its norm otherwise.
    pub estimates: Vec<f64>,
    /// `min(1, |estimate| / (2 sup))`.
    pub tv_estimates: Vec<f64>,
    /// Standard error of `tv_estimates`.
    pub stderr: Vec<f64>,
    pub fitted_rate_gamma: f64,
    pub fitted_prefactor_gamma: f64,
    pub fit_r2: f64,
    /// Number of leading grid points used by the fit.
    pub fit_points: usize,
}

/// A test function for the mixing diagnostic: `parts` are the real
/// components of a (possibly vector-valued) observable `g`, and `sup` bounds
/// the Euclidean norm of `g`. The paired difference of expectations is
/// measured in that norm, so `|E g(X1) - E g(X2)| / (2 sup)` lower-bounds the
/// total-variation distance.
#[derive(Clone)]
pub struct TestFunction {
    pub parts: Vec<ScalarFn>,
    pub sup: f64,
}

impl TestFunction {
    pub fn scalar(f: ScalarFn, sup: f64) -> Self {
        Self { parts: vec![f], sup }
    }
}

/// Complex Fourier modes `exp(2 pi i k.x / tau)` (as cosine/sine pairs, sup
/// 1) for every nonzero integer wavevector with `|k_i| <= order`, one per
/// `+-k` pair.
pub fn fourier_modes(torus: &Torus, order: u32) -> Vec<TestFunction> {
    let n = torus.dim();
    let side = 2 * order as usize + 1;
    let total = side.pow(n as u32);
    let mut out = Vec::new();
    for flat in 0..total {
        let mut rest = flat;
        let mut k = vec![0i64; n];
        for ki in k.iter_mut() {
            *ki = (rest % side) as i64 - order as i64;
            rest /= side;
        }
        // Keep one of each +-k pair: the first nonzero entry is positive.
        match k.iter().find(|&&v| v != 0) {
            Some(&v) if v > 0 => {}
            _ => continue,
        }
        let w: Vec<f64> = k
            .iter()
            .zip(torus.periods())
            .map(|(&ki, &tau)| 2.0 * core::f64::consts::PI * ki as f64 / tau)
            .collect();
        let wc = w.clone();
        let phase = move |w: &[f64], x: &[f64]| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        out.push(TestFunction {
            parts: vec![
                alloc::sync::Arc::new(move |x: &[f64]| libm::cos(phase(&wc, x))),
                alloc::sync::Arc::new(move |x: &[f64]| libm::sin(phase(&w, x))),
            ],
            sup: 1.0,
        });
    }
    out
}

/// Estimates the mixing rate from two starts driven by common noise, with a
/// single real test function.
pub fn mixing_rate<E: Executor>(set: &CoefficientSet, f: &ScalarFn, f_sup: f64, starts: (&[f64], &[f64]), config: &SimConfig, exec: &E) -> Result<MixingDiagnostic> {
    mixing_rate_dictionary(set, &[TestFunction::scalar(f.clone(), f_sup)], starts, config, exec)
}

/// Mixing diagnostic over a dictionary of test functions: at each time the
/// total-variation surrogate is the largest normalised paired difference over
/// the dictionary. The fit uses the leading run of grid points whose
/// surrogate exceeds three standard errors; fewer than three such points is
/// `RateUnresolvable`.
pub fn mixing_rate_dictionary<E: Executor>(set: &CoefficientSet, dictionary: &[TestFunction], starts: (&[f64], &[f64]), config: &SimConfig, exec: &E) -> Result<MixingDiagnostic> {
    config.validate()?;
    check_set(set)?;
    check_points(set, &[starts.0.to_vec(), starts.1.to_vec()])?;
    if dictionary.is_empty() || dictionary.iter().any(|g| g.parts.is_empty()) {
        return Err(Error::InvalidConfig("mixing dictionary needs at least one test function".into()));
    }
    let parts: Vec<&ScalarFn> = dictionary.iter().flat_map(|g| g.parts.iter()).collect();
    let np = parts.len();
    let n_steps = config.n_steps();
    let ks = crate::sde::stored_steps(n_steps, config.store_stride);
    let torus = set.torus();
    let rows = run_paths(exec, config.n_paths, |p| {
        let noise = PathNoise::new(config.seed, p, Stream::Drive);
        let mut e1 = Euler::new(set, config.epsilon, config.step, config.noise_refinement, noise);
        let mut e2 = Euler::new(set, config.epsilon, config.step, config.noise_refinement, noise);
        let mut x1 = starts.0.to_vec();
        let mut x2 = starts.1.to_vec();
        let mut w1 = vec![0.0; x1.len()];
        let mut w2 = vec![0.0; x1.len()];
        let mut out = Vec::with_capacity(ks.len() * np);
        let mut next = 0;
        for k in 0..=n_steps {
            if ks[next] == k {
                torus.wrap_into(&x1, &mut w1);
                torus.wrap_into(&x2, &mut w2);
                out.extend(parts.iter().map(|g| g(&w1) - g(&w2)));
                next += 1;
            }
            if k == n_steps {
                break;
            }
            e1.step(k, &mut x1);
            e2.step(k, &mut x2);
            ensure_finite(&x1, p, k + 1)?;
            ensure_finite(&x2, p, k + 1)?;
        }
        Ok(out)
    })?;
    let time_grid: Vec<f64> = ks.iter().map(|&k| k as f64 * config.step).collect();
    let mut estimates = Vec::with_capacity(ks.len());
    let mut stderr = Vec::with_capacity(ks.len());
    let mut tv_estimates = Vec::with_capacity(ks.len());
    let mut means = vec![0.0; np];
    let mut ses = vec![0.0; np];
    for i in 0..ks.len() {
        for j in 0..np {
            let mut acc = MeanVar::new();
            rows.iter().for_each(|r| acc.push(r[i * np + j]));
            means[j] = acc.mean;
            ses[j] = acc.stderr();
        }
        // Largest normalised difference over the dictionary, with the
        // delta-method stderr of its norm.
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        let mut j0 = 0;
        for g in dictionary {
            let (m, s) = (&means[j0..j0 + g.parts.len()], &ses[j0..j0 + g.parts.len()]);
            j0 += g.parts.len();
            let (est, se) = if m.len() == 1 {
                (m[0], s[0])
            } else {
                let norm = libm::sqrt(m.iter().map(|v| v * v).sum());
                let se = if norm > 0.0 {
                    libm::sqrt(m.iter().zip(s).map(|(v, e)| (v / norm) * (v / norm) * e * e).sum())
                } else {
                    libm::sqrt(s.iter().map(|e| e * e).sum())
                };
                (norm, se)
            };
            let tv = if g.sup > 0.0 { (libm::fabs(est) / (2.0 * g.sup)).min(1.0) } else { 0.0 };
            let tv_se = if g.sup > 0.0 { se / (2.0 * g.sup) } else { 0.0 };
            if tv > best.0 {
                best = (tv, est, tv_se);
            }
        }
        tv_estimates.push(best.0.max(0.0));
        estimates.push(best.1);
        stderr.push(best.2);
    }
    let fit_points = tv_estimates
        .iter()
        .zip(&stderr)
        .take_while(|(e, s)| **e > 3.0 * **s && **e > 0.0)
        .count();
    if fit_points < 3 {
        return Err(Error::RateUnresolvable);
    }
    let ys: Vec<f64> = tv_estimates[..fit_points].iter().map(|v| libm::log(*v)).collect();
    let fit = stats::linear_fit(&time_grid[..fit_points], &ys).ok_or(Error::RateUnresolvable)?;
    Ok(MixingDiagnostic {
        time_grid,
        estimates,
        stderr,
        tv_estimates,
        fitted_rate_gamma: -fit.slope,
        fitted_prefactor_gamma: libm::exp(fit.intercept),
        fit_r2: fit.r2,
        fit_points,
    })
}

/// Burn-in of `10 / rate` (at least one time unit) from a pilot rate, or a
/// quarter of the horizon without one; always below half the horizon.
pub fn default_burn_in(rate: Option<f64>, horizon: f64) -> f64 {
    let b = match rate {
        Some(g) if g > 0.0 && g.is_finite() => (10.0 / g).max(1.0),
        _ => 0.25 * horizon,
    };
    b.min(0.5 * horizon)
}

/// One row of [`pi_epsilon_convergence`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiEpsilonRow {
    pub epsilon: f64,
    /// L1 distance between the histograms at `epsilon` and at 0.
    pub l1_distance: f64,
    /// Expected L1 size of sampling noise in the `epsilon` histogram.
    pub noise_floor: f64,
}

/// Histogram distance between `pi^eps` and `pi^0` for each epsilon, with
/// common noise across the ladder.
pub fn pi_epsilon_convergence<E: Executor>(set: &CoefficientSet, epsilons: &[f64], config: &SimConfig, bins: &[usize], starts: &[Vec<f64>], burn_in: f64, exec: &E) -> Result<Vec<PiEpsilonRow>> {
    if !epsilons.iter().any(|&e| e == 0.0) {
        return Err(Error::InvalidConfig("the epsilon ladder must include 0".into()));
    }
    let mut cfg = config.clone();
    cfg.epsilon = 0.0;
    let base = estimate_invariant(set, &cfg, bins, starts, burn_in, exec)?;
    epsilons
        .iter()
        .map(|&eps| {
            cfg.epsilon = eps;
            let est = if eps == 0.0 {
                base.clone()
            } else {
                estimate_invariant(set, &cfg, bins, starts, burn_in, exec)?
            };
            Ok(PiEpsilonRow {
                epsilon: eps,
                l1_distance: est.l1_distance(&base),
                noise_floor: est.l1_noise_floor(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn uniform_averages() {
        let t = Torus::new(vec![10.0]).unwrap();
        let u = InvariantMeasureEstimate::uniform(t, vec![50]);
        let (one, _) = pi_average_scalar(&u, &|_| 1.0);
        assert!((one - 1.0).abs() < 1e-12);
        let (s, _) = pi_average_scalar(&u, &|x| libm::sin(2.0 * core::f64::consts::PI * x[0] / 10.0));
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn bin_index_edges() {
        let t = Torus::new(vec![1.0, 2.0]).unwrap();
        assert_eq!(bin_index(&t, &[4, 4], &[0.0, 0.0]), 0);
        assert_eq!(bin_index(&t, &[4, 4], &[0.99, 1.99]), 15);
        assert_eq!(bin_index(&t, &[4, 4], &[-1e-18, 0.0]), 0);
        assert_eq!(bin_index(&t, &[4, 4], &[1.0, 2.0]), 0);
    }

    #[test]
    fn burn_in_defaults() {
        assert_eq!(default_burn_in(Some(20.0), 100.0), 1.0);
        assert_eq!(default_burn_in(Some(0.5), 100.0), 20.0);
        assert_eq!(default_burn_in(None, 8.0), 2.0);
        assert_eq!(default_burn_in(Some(0.01), 10.0), 5.0);
    }
}
