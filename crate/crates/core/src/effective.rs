//! Effective (homogenized) coefficients.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::corrector::CorrectorField;
use crate::ergodic::InvariantMeasureEstimate;
use crate::error::{Error, Result};
use crate::exec::{blocks, Executor, DEFAULT_BLOCKS};
use crate::linalg;
use crate::rng::{PathNoise, Stream};
use crate::sde::{check_points, check_set, ensure_finite, run_paths, steps_for, Euler, SimConfig};
use crate::stats::{self, MeanVar};

/// Eigenvalues of the symmetrized covariance in `(-PSD_TOLERANCE, 0)` are clipped.
pub const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Corrector,
    DbetaForm,
    LongTime,
    Analytic,
}

/// The limit Brownian motion's covariance and drift, plus the parabolic
/// drift and constant potential when a scalar corrector was supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveModel {
    pub dim: usize,
    /// Row-major `n x n`, symmetric.
    pub cov_a: Vec<f64>,
    pub drift_b: Vec<f64>,
    pub cov_a_stderr: Vec<f64>,
    pub drift_b_stderr: Vec<f64>,
    /// Estimated upward bias of `cov_a` from corrector noise entering the
    /// quadratic form, `pi(E[(D - E D) a (D - E D)^T])`, from the batch spread.
    /// Not subtracted; when it is comparable to `cov_a` the corrector budget
    /// is too small for the derivative.
    #[serde(default)]
    pub cov_a_noise_bias: Vec<f64>,
    pub parabolic_drift: Option<Vec<f64>>,
    pub parabolic_drift_stderr: Option<Vec<f64>>,
    pub effective_potential: Option<f64>,
    pub effective_potential_stderr: Option<f64>,
    /// Largest `|a_ij - a_ji|` before symmetrization.
    pub asymmetry: f64,
    pub min_eigenvalue: f64,
    pub psd_clipped: bool,
    pub provenance: Provenance,
    /// Content fingerprints of the artifacts this model was computed from.
    #[serde(default)]
    pub fingerprints: Vec<String>,
}

impl EffectiveModel {
    /// A model with given covariance and drift and no sampling error.
    pub fn analytic(cov_a: Vec<f64>, drift_b: Vec<f64>) -> Result<Self> {
        let n = drift_b.len();
        if cov_a.len() != n * n {
            return Err(Error::DimensionMismatch {
                what: "covariance",
                expected: n * n,
                got: cov_a.len(),
            });
        }
        let mut m = Self {
            dim: n,
            cov_a_stderr: vec![0.0; n * n],
            drift_b_stderr: vec![0.0; n],
            cov_a_noise_bias: vec![0.0; n * n],
            cov_a,
            drift_b,
            parabolic_drift: None,
            parabolic_drift_stderr: None,
            effective_potential: None,
            effective_potential_stderr: None,
            asymmetry: 0.0,
            min_eigenvalue: 0.0,
            psd_clipped: false,
            provenance: Provenance::Analytic,
            fingerprints: Vec::new(),
        };
        m.finish_cov()?;
        Ok(m)
    }

    pub fn with_parabolic(mut self, drift: Vec<f64>, potential: f64) -> Self {
        self.parabolic_drift_stderr = Some(vec![0.0; drift.len()]);
        self.parabolic_drift = Some(drift);
        self.effective_potential = Some(potential);
        self.effective_potential_stderr = Some(0.0);
        self
    }

    /// Symmetrizes, records asymmetry and the smallest eigenvalue, and clips
    /// tiny negative eigenvalues.
    fn finish_cov(&mut self) -> Result<()> {
        let n = self.dim;
        if !self.cov_a.iter().chain(&self.drift_b).all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("effective coefficients are not finite".into()));
        }
        self.asymmetry = linalg::max_asymmetry(&self.cov_a, n);
        linalg::symmetrize(&mut self.cov_a, n);
        let (vals, vecs) = linalg::sym_eigen(&self.cov_a, n);
        self.min_eigenvalue = vals[0];
        if vals[0] < -PSD_TOLERANCE {
            return Err(Error::NotPsd {
                min_eigenvalue: vals[0],
            });
        }
        if vals[0] < 0.0 {
            let clipped: Vec<f64> = vals.iter().map(|v| v.max(0.0)).collect();
            self.cov_a = linalg::from_eigen(&clipped, &vecs, n);
            linalg::symmetrize(&mut self.cov_a, n);
            self.psd_clipped = true;
        }
        Ok(())
    }

    /// Symmetric square root of the covariance.
    pub fn cov_sqrt(&self) -> Result<Vec<f64>> {
        linalg::psd_sqrt(&self.cov_a, self.dim, PSD_TOLERANCE)
    }

    pub fn require_parabolic(&self) -> Result<(&[f64], f64)> {
        match (&self.parabolic_drift, self.effective_potential) {
            (Some(d), Some(p)) => Ok((d, p)),
            _ => Err(Error::MissingParabolicFields),
        }
    }
}

struct Moments {
    cov: Vec<f64>,
    drift: Vec<f64>,
    bbar_extra: Vec<f64>,
    potential: f64,
}

impl Moments {
    fn flat(&self) -> Vec<f64> {
        let mut v = self.cov.clone();
        v.extend_from_slice(&self.drift);
        v.extend_from_slice(&self.bbar_extra);
        v.push(self.potential);
        v
    }
}

/// Per-bin integrand data shared by every weighting.
struct BinData {
    a: Vec<f64>,
    c: Vec<f64>,
    e: Vec<f64>,
}

fn bin_data(set: &CoefficientSet, pi: &InvariantMeasureEstimate) -> BinData {
    let n = set.dim();
    let nb = pi.n_bins();
    let mut data = BinData {
        a: vec![0.0; nb * n * n],
        c: vec![0.0; nb * n],
        e: vec![0.0; nb],
    };
    let mut x = vec![0.0; n];
    for k in 0..nb {
        pi.center(k, &mut x);
        set.diffusion(&x, &mut data.a[k * n * n..(k + 1) * n * n]);
        set.drift_c(&x, &mut data.c[k * n..(k + 1) * n]);
        data.e[k] = set.potential_e(&x);
    }
    data
}

/// `pi((I - Dbeta) a (I - Dbeta)^T)`, `pi((I - Dbeta) c)`, and with a scalar
/// corrector `pi((I - Dbeta) a grad delta)` and the effective potential.
fn moments(
    n: usize,
    pi: &InvariantMeasureEstimate,
    data: &BinData,
    mass: &[f64],
    jb: &dyn Fn(&[f64], &mut [f64]),
    jd: Option<&dyn Fn(&[f64], &mut [f64])>,
) -> Moments {
    let mut out = Moments {
        cov: vec![0.0; n * n],
        drift: vec![0.0; n],
        bbar_extra: vec![0.0; n],
        potential: 0.0,
    };
    let mut x = vec![0.0; n];
    let mut m = vec![0.0; n * n];
    let mut ma = vec![0.0; n * n];
    let mut grad = vec![0.0; n];
    for (k, &w) in mass.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        pi.center(k, &mut x);
        jb(&x, &mut m);
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = if i == j { 1.0 } else { 0.0 } - m[i * n + j];
            }
        }
        let a = &data.a[k * n * n..(k + 1) * n * n];
        let c = &data.c[k * n..(k + 1) * n];
        linalg::matmul(&m, a, n, n, n, &mut ma);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for l in 0..n {
                    s += ma[i * n + l] * m[j * n + l];
                }
                out.cov[i * n + j] += w * s;
            }
            let mut s = 0.0;
            for l in 0..n {
                s += m[i * n + l] * c[l];
            }
            out.drift[i] += w * s;
        }
        match jd {
            Some(jd) => {
                jd(&x, &mut grad);
                let mut quad = 0.0;
                let mut gc = 0.0;
                for i in 0..n {
                    let mut s = 0.0;
                    for l in 0..n {
                        s += ma[i * n + l] * grad[l];
                        quad += grad[i] * a[i * n + l] * grad[l];
                    }
                    out.bbar_extra[i] += w * s;
                    gc += grad[i] * c[i];
                }
                out.potential += w * (0.5 * quad + data.e[k] - gc);
            }
            None => out.potential += w * data.e[k],
        }
    }
    out
}

/// `pi(sum_b (D_b - D) a (D_b - D)^T) / (B (B - 1))`: the variance of the
/// pooled Jacobian pushed through the quadratic form.
fn noise_bias(n: usize, pi: &InvariantMeasureEstimate, data: &BinData, beta: &CorrectorField) -> Vec<f64> {
    let nb = beta.batch_jacobians.len();
    let mut out = vec![0.0; n * n];
    if nb < 2 {
        return out;
    }
    let mut x = vec![0.0; n];
    let mut d = vec![0.0; n * n];
    let mut db = vec![0.0; n * n];
    let mut da = vec![0.0; n * n];
    for (k, &w) in pi.mass.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        pi.center(k, &mut x);
        beta.interpolate_jacobian(&x, &mut d).expect("jacobian checked");
        let a = &data.a[k * n * n..(k + 1) * n * n];
        for b in 0..nb {
            beta.interpolate_batch_jacobian(b, &x, &mut db);
            db.iter_mut().zip(&d).for_each(|(u, v)| *u -= v);
            linalg::matmul(&db, a, n, n, n, &mut da);
            for i in 0..n {
                for j in 0..n {
                    let s: f64 = (0..n).map(|l| da[i * n + l] * db[j * n + l]).sum();
                    out[i * n + j] += w * s;
                }
            }
        }
    }
    let scale = 1.0 / (nb * (nb - 1)) as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

/// Standard errors combining corrector batches and invariant-measure blocks.
fn propagate(samples_beta: &[Vec<f64>], samples_pi: &[Vec<f64>], len: usize) -> Vec<f64> {
    let a = stats::spread_stderr(samples_beta, len);
    let b = stats::spread_stderr(samples_pi, len);
    a.iter().zip(&b).map(|(x, y)| libm::sqrt(x * x + y * y)).collect()
}

/// Effective coefficients from corrector Jacobians, integrated against the
/// histogram measure. A scalar corrector is required when `d` is not zero or
/// when `parabolic` outputs are requested.
pub fn effective_from_corrector(
    set: &CoefficientSet,
    beta: &CorrectorField,
    delta: Option<&CorrectorField>,
    pi: &InvariantMeasureEstimate,
    parabolic: bool,
) -> Result<EffectiveModel> {
    let n = set.dim();
    if beta.ncomp != n || beta.torus != *set.torus() || pi.torus != *set.torus() {
        return Err(Error::DimensionMismatch {
            what: "corrector",
            expected: n,
            got: beta.ncomp,
        });
    }
    beta.jacobian.as_ref().ok_or(Error::MissingJacobian)?;
    let delta = if parabolic || !set.d_is_zero() {
        let d = delta.ok_or(Error::MissingDelta)?;
        d.jacobian.as_ref().ok_or(Error::MissingJacobian)?;
        Some(d)
    } else {
        delta.filter(|d| d.jacobian.is_some())
    };
    let data = bin_data(set, pi);
    let jb_main = |x: &[f64], o: &mut [f64]| {
        beta.interpolate_jacobian(x, o).expect("jacobian checked");
    };
    let jd_main = |x: &[f64], o: &mut [f64]| {
        delta.unwrap().interpolate_jacobian(x, o).expect("jacobian checked");
    };
    let jd_opt: Option<&dyn Fn(&[f64], &mut [f64])> = if delta.is_some() { Some(&jd_main) } else { None };
    let main = moments(n, pi, &data, &pi.mass, &jb_main, jd_opt);
    let len = main.flat().len();

    let nb = beta.batch_jacobians.len();
    let nd = delta.map_or(0, |d| d.batch_jacobians.len());
    let batches = if delta.is_some() && nd > 0 { nb.min(nd) } else { nb };
    let mut beta_samples = Vec::with_capacity(batches);
    for b in 0..batches {
        let jb = |x: &[f64], o: &mut [f64]| beta.interpolate_batch_jacobian(b, x, o);
        let jd = |x: &[f64], o: &mut [f64]| delta.unwrap().interpolate_batch_jacobian(b, x, o);
        let jd_opt: Option<&dyn Fn(&[f64], &mut [f64])> = if delta.is_some() && nd > 0 { Some(&jd) } else { jd_opt };
        beta_samples.push(moments(n, pi, &data, &pi.mass, &jb, jd_opt).flat());
    }
    let pi_samples: Vec<Vec<f64>> = pi
        .block_mass
        .iter()
        .map(|mass| moments(n, pi, &data, mass, &jb_main, jd_opt).flat())
        .collect();
    let se = propagate(&beta_samples, &pi_samples, len);

    let nn = n * n;
    let mut model = EffectiveModel {
        dim: n,
        cov_a: main.cov.clone(),
        drift_b: main.drift.clone(),
        cov_a_stderr: se[..nn].to_vec(),
        drift_b_stderr: se[nn..nn + n].to_vec(),
        cov_a_noise_bias: noise_bias(n, pi, &data, beta),
        parabolic_drift: None,
        parabolic_drift_stderr: None,
        effective_potential: None,
        effective_potential_stderr: None,
        asymmetry: 0.0,
        min_eigenvalue: 0.0,
        psd_clipped: false,
        provenance: Provenance::Corrector,
        fingerprints: Vec::new(),
    };
    if set.c_is_zero() {
        model.drift_b_stderr.iter_mut().for_each(|v| *v = 0.0);
    }
    if delta.is_some() {
        let b_se = &se[nn + n..nn + 2 * n];
        model.parabolic_drift = Some((0..n).map(|i| main.drift[i] - main.bbar_extra[i]).collect());
        model.parabolic_drift_stderr = Some(
            (0..n)
                .map(|i| libm::sqrt(model.drift_b_stderr[i] * model.drift_b_stderr[i] + b_se[i] * b_se[i]))
                .collect(),
        );
        model.effective_potential = Some(main.potential);
        model.effective_potential_stderr = Some(se[nn + 2 * n]);
    }
    model.finish_cov()?;
    Ok(model)
}

/// Covariance from the representation
/// `pi(a - Dbeta a - a Dbeta^T - beta g^T - g beta^T)` with `g = b - pi(b)`,
/// which uses the corrector values themselves. Serves as a cross-check of
/// [`effective_from_corrector`].
pub fn effective_dbeta_form(set: &CoefficientSet, beta: &CorrectorField, pi: &InvariantMeasureEstimate, pi_b: &[f64]) -> Result<EffectiveModel> {
    let n = set.dim();
    beta.jacobian.as_ref().ok_or(Error::MissingJacobian)?;
    if pi_b.len() != n || beta.ncomp != n {
        return Err(Error::DimensionMismatch {
            what: "pi(b)",
            expected: n,
            got: pi_b.len(),
        });
    }
    let nb = pi.n_bins();
    let mut x = vec![0.0; n];
    let mut a = vec![0.0; n * n];
    let mut g = vec![0.0; n];
    let mut pre = Vec::with_capacity(nb);
    for k in 0..nb {
        pi.center(k, &mut x);
        set.diffusion(&x, &mut a);
        set.drift_b(&x, &mut g);
        for i in 0..n {
            g[i] -= pi_b[i];
        }
        pre.push((a.clone(), g.clone()));
    }
    let eval = |mass: &[f64], val: &dyn Fn(&[f64], &mut [f64]), jac: &dyn Fn(&[f64], &mut [f64])| {
        let mut cov = vec![0.0; n * n];
        let mut bv = vec![0.0; n];
        let mut d = vec![0.0; n * n];
        let mut x = vec![0.0; n];
        for (k, &w) in mass.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            pi.center(k, &mut x);
            val(&x, &mut bv);
            jac(&x, &mut d);
            let (a, g) = &pre[k];
            for i in 0..n {
                for j in 0..n {
                    let mut da = 0.0;
                    let mut ad = 0.0;
                    for l in 0..n {
                        da += d[i * n + l] * a[l * n + j];
                        ad += a[i * n + l] * d[j * n + l];
                    }
                    cov[i * n + j] += w * (a[i * n + j] - da - ad - bv[i] * g[j] - g[i] * bv[j]);
                }
            }
        }
        cov
    };
    let main = eval(
        &pi.mass,
        &|x, o| beta.interpolate(x, o),
        &|x, o| beta.interpolate_jacobian(x, o).expect("jacobian checked"),
    );
    let beta_samples: Vec<Vec<f64>> = (0..beta.batch_jacobians.len().min(beta.batch_values.len()))
        .map(|b| {
            eval(
                &pi.mass,
                &|x, o| beta.interpolate_batch(b, x, o),
                &|x, o| beta.interpolate_batch_jacobian(b, x, o),
            )
        })
        .collect();
    let pi_samples: Vec<Vec<f64>> = pi
        .block_mass
        .iter()
        .map(|mass| {
            eval(
                mass,
                &|x, o| beta.interpolate(x, o),
                &|x, o| beta.interpolate_jacobian(x, o).expect("jacobian checked"),
            )
        })
        .collect();
    let mut model = EffectiveModel {
        dim: n,
        cov_a_stderr: propagate(&beta_samples, &pi_samples, n * n),
        cov_a_noise_bias: vec![0.0; n * n],
        cov_a: main,
        drift_b: vec![0.0; n],
        drift_b_stderr: vec![0.0; n],
        parabolic_drift: None,
        parabolic_drift_stderr: None,
        effective_potential: None,
        effective_potential_stderr: None,
        asymmetry: 0.0,
        min_eigenvalue: 0.0,
        psd_clipped: false,
        provenance: Provenance::DbetaForm,
        fingerprints: Vec::new(),
    };
    model.finish_cov()?;
    Ok(model)
}

/// Long-time covariance estimate and its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTimeEstimate {
    /// Covariance = plateau; drift = mean of `(X - x - pi(b) t) / t` at the last time.
    pub model: EffectiveModel,
    pub times: Vec<f64>,
    /// Per time: covariance of `(X(t) - x - pi(b) t) / sqrt(t)` (`n x n`).
    pub cov_per_t: Vec<Vec<f64>>,
    pub cov_stderr_per_t: Vec<Vec<f64>>,
    /// R^2 of the least-squares line through `tr Cov(X(t) - x)` against `t`.
    pub linearity_r2: f64,
    /// Whether the linearity R^2 reaches the requested threshold.
    pub plateau_reached: bool,
}

/// `lim (1/t) Cov(X(x,t) - x - pi(b) t)` with `x` drawn from the given starts
/// (which should be distributed by the invariant measure). The plateau is the
/// mean over the largest half of `t_grid`.
pub fn effective_from_longtime<E: Executor>(
    set: &CoefficientSet,
    config: &SimConfig,
    t_grid: &[f64],
    starts: &[Vec<f64>],
    pi_b: &[f64],
    r2_threshold: f64,
    exec: &E,
) -> Result<LongTimeEstimate> {
    config.validate()?;
    check_set(set)?;
    check_points(set, starts)?;
    let n = set.dim();
    if pi_b.len() != n {
        return Err(Error::DimensionMismatch {
            what: "pi(b)",
            expected: n,
            got: pi_b.len(),
        });
    }
    if t_grid.is_empty() || t_grid.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidConfig("long-time grid must hold positive times".into()));
    }
    let mut times = t_grid.to_vec();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let kt: Vec<u64> = times.iter().map(|&t| steps_for(t, config.step)).collect();
    let n_steps = *kt.last().unwrap();
    let nt = times.len();
    let rows = run_paths(exec, config.n_paths, |p| {
        let mut euler = Euler::new(set, config.epsilon, config.step, config.noise_refinement, PathNoise::new(config.seed, p, Stream::Drive));
        let x0 = &starts[p % starts.len()];
        let mut x = x0.clone();
        let mut out = vec![0.0; nt * n];
        let mut next = 0;
        for k in 0..=n_steps {
            while next < nt && kt[next] == k {
                let t = k as f64 * config.step;
                for i in 0..n {
                    out[next * n + i] = x[i] - x0[i] - pi_b[i] * t;
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
    let path_blocks = blocks(config.n_paths, DEFAULT_BLOCKS);
    let mut cov_per_t = Vec::with_capacity(nt);
    let mut cov_stderr_per_t = Vec::with_capacity(nt);
    let mut block_covs: Vec<Vec<Vec<f64>>> = Vec::with_capacity(nt);
    let mut traces = Vec::with_capacity(nt);
    for (ti, &k) in kt.iter().enumerate() {
        let t = k as f64 * config.step;
        let slice: Vec<&[f64]> = rows.iter().map(|r| &r[ti * n..(ti + 1) * n]).collect();
        let cov: Vec<f64> = stats::sample_covariance(&slice, n).iter().map(|v| v / t).collect();
        traces.push((0..n).map(|i| cov[i * n + i] * t).sum::<f64>());
        let per_block: Vec<Vec<f64>> = path_blocks
            .iter()
            .filter(|r| r.len() >= 2)
            .map(|r| stats::sample_covariance(&slice[r.clone()], n).iter().map(|v| v / t).collect())
            .collect();
        cov_stderr_per_t.push(stats::spread_stderr(&per_block, n * n));
        block_covs.push(per_block);
        cov_per_t.push(cov);
    }
    let half = nt / 2;
    let upper = &cov_per_t[half..];
    let plateau: Vec<f64> = (0..n * n)
        .map(|i| upper.iter().map(|c| c[i]).sum::<f64>() / upper.len() as f64)
        .collect();
    let nblocks = block_covs[0].len();
    let plateau_blocks: Vec<Vec<f64>> = (0..nblocks)
        .map(|b| {
            (0..n * n)
                .map(|i| block_covs[half..].iter().map(|c| c[b][i]).sum::<f64>() / upper.len() as f64)
                .collect()
        })
        .collect();
    let real_t: Vec<f64> = kt.iter().map(|&k| k as f64 * config.step).collect();
    let linearity_r2 = if nt >= 2 {
        stats::linear_fit(&real_t, &traces).map_or(0.0, |f| f.r2)
    } else {
        1.0
    };
    let t_last = *real_t.last().unwrap();
    let mut drift = Vec::with_capacity(n);
    let mut drift_se = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = MeanVar::new();
        rows.iter().for_each(|r| acc.push(r[(nt - 1) * n + i] / t_last));
        drift.push(acc.mean);
        drift_se.push(acc.stderr());
    }
    let mut model = EffectiveModel {
        dim: n,
        cov_a: plateau,
        drift_b: drift,
        cov_a_stderr: stats::spread_stderr(&plateau_blocks, n * n),
        cov_a_noise_bias: vec![0.0; n * n],
        drift_b_stderr: drift_se,
        parabolic_drift: None,
        parabolic_drift_stderr: None,
        effective_potential: None,
        effective_potential_stderr: None,
        asymmetry: 0.0,
        min_eigenvalue: 0.0,
        psd_clipped: false,
        provenance: Provenance::LongTime,
        fingerprints: Vec::new(),
    };
    model.finish_cov()?;
    Ok(LongTimeEstimate {
        model,
        times: real_t,
        cov_per_t,
        cov_stderr_per_t,
        linearity_r2,
        plateau_reached: linearity_r2 >= r2_threshold,
    })
}

/// Entrywise comparison of two covariance estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    /// `|a_ij^A - a_ij^B| / sqrt(se_A^2 + se_B^2)`, row-major.
    pub z: Vec<f64>,
    pub max_z: f64,
    pub passes: bool,
}

pub fn cross_check(a: &EffectiveModel, b: &EffectiveModel, tolerance_sigmas: f64) -> Result<CrossCheck> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch {
            what: "effective model",
            expected: a.dim,
            got: b.dim,
        });
    }
    let z: Vec<f64> = (0..a.dim * a.dim)
        .map(|i| z_score(a.cov_a[i] - b.cov_a[i], a.cov_a_stderr[i], b.cov_a_stderr[i]))
        .collect();
    let max_z = z.iter().fold(0.0, |m: f64, v| m.max(*v));
    Ok(CrossCheck {
        passes: max_z <= tolerance_sigmas,
        z,
        max_z,
    })
}

pub fn z_score(diff: f64, se_a: f64, se_b: f64) -> f64 {
    let se = libm::sqrt(se_a * se_a + se_b * se_b);
    if diff == 0.0 {
        0.0
    } else if se == 0.0 {
        f64::INFINITY
    } else {
        libm::fabs(diff) / se
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_model_rejects_indefinite() {
        assert!(matches!(
            EffectiveModel::analytic(vec![1.0, 0.0, 0.0, -1.0], vec![0.0, 0.0]),
            Err(Error::NotPsd { .. })
        ));
        let m = EffectiveModel::analytic(vec![1.0, 0.0, 0.0, -1e-10], vec![0.0, 0.0]).unwrap();
        assert!(m.psd_clipped);
        assert!(m.cov_a[3] >= 0.0);
    }

    #[test]
    fn symmetrizes_and_reports_asymmetry() {
        let m = EffectiveModel::analytic(vec![2.0, 0.2, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert!((m.asymmetry - 0.2).abs() < 1e-15);
        assert_eq!(m.cov_a[1], m.cov_a[2]);
    }

    #[test]
    fn same_model_has_zero_z() {
        let m = EffectiveModel::analytic(vec![1.0], vec![0.0]).unwrap();
        let c = cross_check(&m, &m, 3.0).unwrap();
        assert_eq!(c.max_z, 0.0);
        assert!(c.passes);
    }
}
