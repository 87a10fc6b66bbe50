//! Periodic coefficient fields, the built-in catalog and sampled validation.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{
    bin_center, constant_scalar, constant_vector, grid_node, zero_vector, MatrixFn, Region, ScalarFn,
    ScalarForm, VectorFn,
};
use crate::linalg;
use crate::quadrature::adaptive_simpson;
use crate::torus::Torus;

/// The fields `sigma, b, c, d, e` of the operator on a torus.
///
/// Every accessor evaluates at the wrapped representative of its argument.
#[derive(Clone)]
pub struct CoefficientSet {
    torus: Torus,
    noise_dim: usize,
    label: String,
    sigma: MatrixFn,
    drift_b: VectorFn,
    drift_c: VectorFn,
    potential_d: ScalarFn,
    potential_e: ScalarFn,
    c_zero: bool,
    d_zero: bool,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("label", &self.label)
            .field("torus", &self.torus)
            .field("noise_dim", &self.noise_dim)
            .finish_non_exhaustive()
    }
}

pub struct CoefficientSetBuilder {
    set: CoefficientSet,
}

impl CoefficientSetBuilder {
    pub fn label(mut self, label: impl Into<String>) -> Self {
        self.set.label = label.into();
        self
    }

    /// `sigma` writes an `n x m` row-major matrix.
    pub fn sigma(mut self, f: MatrixFn) -> Self {
        self.set.sigma = f;
        self
    }

    pub fn drift_b(mut self, f: VectorFn) -> Self {
        self.set.drift_b = f;
        self
    }

    pub fn drift_c(mut self, f: VectorFn) -> Self {
        self.set.drift_c = f;
        self.set.c_zero = false;
        self
    }

    pub fn constant_c(self, c: Vec<f64>) -> Self {
        let zero = c.iter().all(|&v| v == 0.0);
        let mut b = self.drift_c(constant_vector(c));
        b.set.c_zero = zero;
        b
    }

    pub fn potential_d(mut self, f: ScalarFn) -> Self {
        self.set.potential_d = f;
        self.set.d_zero = false;
        self
    }

    pub fn potential_e(mut self, f: ScalarFn) -> Self {
        self.set.potential_e = f;
        self
    }

    pub fn build(self) -> CoefficientSet {
        self.set
    }
}

impl CoefficientSet {
    /// Starts from `sigma = 0, b = c = 0, d = 0, e = -1`.
    pub fn builder(torus: Torus, noise_dim: usize) -> CoefficientSetBuilder {
        let n = torus.dim();
        CoefficientSetBuilder {
            set: CoefficientSet {
                torus,
                noise_dim,
                label: "custom".into(),
                sigma: Arc::new(move |_, out: &mut [f64]| {
                    debug_assert_eq!(out.len(), n * noise_dim);
                    out.iter_mut().for_each(|o| *o = 0.0)
                }),
                drift_b: zero_vector(),
                drift_c: zero_vector(),
                potential_d: constant_scalar(0.0),
                potential_e: constant_scalar(-1.0),
                c_zero: true,
                d_zero: true,
            },
        }
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn dim(&self) -> usize {
        self.torus.dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// True when `c` is known to vanish identically.
    pub fn c_is_zero(&self) -> bool {
        self.c_zero
    }

    pub fn d_is_zero(&self) -> bool {
        self.d_zero
    }

    fn wrapped(&self, x: &[f64]) -> [f64; 8] {
        let mut w = [0.0; 8];
        self.torus.wrap_into(x, &mut w[..x.len()]);
        w
    }

    pub fn sigma(&self, x: &[f64], out: &mut [f64]) {
        let w = self.wrapped(x);
        (self.sigma)(&w[..x.len()], out)
    }

    pub fn drift_b(&self, x: &[f64], out: &mut [f64]) {
        let w = self.wrapped(x);
        (self.drift_b)(&w[..x.len()], out)
    }

    pub fn drift_c(&self, x: &[f64], out: &mut [f64]) {
        if self.c_zero {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let w = self.wrapped(x);
        (self.drift_c)(&w[..x.len()], out)
    }

    pub fn potential_d(&self, x: &[f64]) -> f64 {
        if self.d_zero {
            return 0.0;
        }
        let w = self.wrapped(x);
        (self.potential_d)(&w[..x.len()])
    }

    pub fn potential_e(&self, x: &[f64]) -> f64 {
        let w = self.wrapped(x);
        (self.potential_e)(&w[..x.len()])
    }

    /// `a = sigma sigma^T` at `x`.
    pub fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let m = self.noise_dim;
        let mut s = [0.0; 64];
        self.sigma(x, &mut s[..n * m]);
        linalg::outer_self(&s[..n * m], n, m, out);
    }

    /// Raw closures, bypassing the wrap. Callers must pass points in the cell.
    pub(crate) fn raw_sigma(&self) -> &MatrixFn {
        &self.sigma
    }
    pub(crate) fn raw_b(&self) -> &VectorFn {
        &self.drift_b
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_sigma(mut self, sigma: MatrixFn) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_drift_b(mut self, b: VectorFn) -> Self {
        self.drift_b = b;
        self
    }

    pub fn with_constant_c(mut self, c: Vec<f64>) -> Self {
        self.c_zero = c.iter().all(|&v| v == 0.0);
        self.drift_c = constant_vector(c);
        self
    }

    pub fn with_drift_c(mut self, c: VectorFn) -> Self {
        self.c_zero = false;
        self.drift_c = c;
        self
    }

    pub fn with_potential_d(mut self, d: &ScalarForm) -> Self {
        self.d_zero = d.is_zero();
        self.potential_d = d.to_fn();
        self
    }

    pub fn with_potential_d_fn(mut self, d: ScalarFn) -> Self {
        self.d_zero = false;
        self.potential_d = d;
        self
    }

    pub fn with_potential_e(mut self, e: &ScalarForm) -> Self {
        self.potential_e = e.to_fn();
        self
    }

    pub fn with_potential_e_fn(mut self, e: ScalarFn) -> Self {
        self.potential_e = e;
        self
    }

    /// Multiplies `sigma` by `kappa` (so `a` by `kappa^2`).
    pub fn scale_sigma(mut self, kappa: f64) -> Self {
        let s = self.sigma.clone();
        self.sigma = Arc::new(move |x, out| {
            s(x, out);
            out.iter_mut().for_each(|o| *o *= kappa);
        });
        self
    }
}

/// Catalog entries that need no user-supplied closures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    ConstantIdentity,
    Sine1d,
    Paper2dDegenerate,
}

impl Builtin {
    pub fn from_label(label: &str) -> Result<Self> {
        match label {
            "constant_identity" => Ok(Builtin::ConstantIdentity),
            "sine_1d" => Ok(Builtin::Sine1d),
            "paper_2d_degenerate" => Ok(Builtin::Paper2dDegenerate),
            other => Err(Error::UnknownLabel(other.to_string())),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Builtin::ConstantIdentity => "constant_identity",
            Builtin::Sine1d => "sine_1d",
            Builtin::Paper2dDegenerate => "paper_2d_degenerate",
        }
    }

    pub fn build(&self, opts: &BuiltinOptions) -> Result<CoefficientSet> {
        let set = match self {
            Builtin::ConstantIdentity => {
                let periods = opts.periods.clone().unwrap_or_else(|| vec![1.0, 1.0]);
                constant_identity(Torus::new(periods)?)
            }
            Builtin::Sine1d => sine_1d(),
            Builtin::Paper2dDegenerate => paper_2d_degenerate(),
        };
        opts.apply(set)
    }
}

/// Optional overrides applied on top of a catalog entry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuiltinOptions {
    /// Periods for `constant_identity` (its dimension follows).
    pub periods: Option<Vec<f64>>,
    /// Constant drift `c`.
    pub drift_c: Option<Vec<f64>>,
    pub potential_d: Option<ScalarForm>,
    pub potential_e: Option<ScalarForm>,
    /// Multiplies `sigma`.
    pub sigma_scale: Option<f64>,
}

impl BuiltinOptions {
    pub fn apply(&self, mut set: CoefficientSet) -> Result<CoefficientSet> {
        if let Some(c) = &self.drift_c {
            if c.len() != set.dim() {
                return Err(Error::DimensionMismatch {
                    what: "drift_c",
                    expected: set.dim(),
                    got: c.len(),
                });
            }
            set = set.with_constant_c(c.clone());
        }
        if let Some(d) = &self.potential_d {
            set = set.with_potential_d(d);
        }
        if let Some(e) = &self.potential_e {
            set = set.with_potential_e(e);
        }
        if let Some(k) = self.sigma_scale {
            set = set.scale_sigma(k);
        }
        Ok(set)
    }
}

/// `sigma = I`, all drifts zero, `e = -1`.
pub fn constant_identity(torus: Torus) -> CoefficientSet {
    let n = torus.dim();
    CoefficientSet::builder(torus, n)
        .label("constant_identity")
        .sigma(Arc::new(move |_, out: &mut [f64]| {
            out.iter_mut().for_each(|o| *o = 0.0);
            for i in 0..n {
                out[i * n + i] = 1.0;
            }
        }))
        .build()
}

/// `tau = 1`, `a = 2 + sin(2 pi x)`, `sigma = sqrt(a)`, `b = a'/2 = pi cos(2 pi x)`.
pub fn sine_1d() -> CoefficientSet {
    let torus = Torus::new(vec![1.0]).expect("unit period");
    CoefficientSet::builder(torus, 1)
        .label("sine_1d")
        .sigma(Arc::new(|x, out| {
            out[0] = libm::sqrt(2.0 + libm::sin(2.0 * PI * x[0]));
        }))
        .drift_b(Arc::new(|x, out| {
            out[0] = PI * libm::cos(2.0 * PI * x[0]);
        }))
        .build()
}

/// `int_4^6 exp(-1/(1-(x-5)^2)) dx`, by adaptive quadrature.
pub fn bump_integral() -> f64 {
    adaptive_simpson(&|x| bump(x - 5.0), 4.0, 6.0, 1e-13)
}

#[inline]
fn bump(u: f64) -> f64 {
    let s = 1.0 - u * u;
    if s > 0.0 {
        libm::exp(-1.0 / s)
    } else {
        0.0
    }
}

/// Normaliser making `b_tilde` integrate to zero over `[0, 10]`.
pub fn paper_2d_normalizer() -> f64 {
    10.0 / bump_integral()
}

/// The zero-mean profile `b_tilde` of the degenerate 2D example.
pub fn paper_2d_profile(beta: f64) -> impl Fn(f64) -> f64 + Send + Sync + Copy {
    move |x: f64| {
        if x > 4.0 && x < 6.0 {
            1.0 - beta * bump(x - 5.0)
        } else {
            1.0
        }
    }
}

/// The degenerate 2D example on `tau = (10, 10)`: `sigma` is a smooth bump
/// supported on the open ball `B_3(5,5)` and `b` is in divergence form with
/// `b_bar = (b_tilde(y), b_tilde(x))`.
pub fn paper_2d_degenerate() -> CoefficientSet {
    let torus = Torus::cube(2, 10.0).expect("valid periods");
    let beta = paper_2d_normalizer();
    let profile = paper_2d_profile(beta);
    CoefficientSet::builder(torus, 2)
        .label("paper_2d_degenerate")
        .sigma(Arc::new(|x, out| {
            let s = (x[0] - 5.0) * (x[0] - 5.0) + (x[1] - 5.0) * (x[1] - 5.0);
            let v = if s < 9.0 { libm::exp(-1.0 / (9.0 - s)) } else { 0.0 };
            out[0] = v;
            out[1] = 0.0;
            out[2] = 0.0;
            out[3] = v;
        }))
        .drift_b(Arc::new(move |x, out| {
            let dx = x[0] - 5.0;
            let dy = x[1] - 5.0;
            let s = dx * dx + dy * dy;
            // a = phi(s) I with phi(s) = exp(-2/(9-s)); b_i = phi'(s) (x_i - 5) + b_bar_i.
            let k = if s < 9.0 {
                let w = 9.0 - s;
                -2.0 * libm::exp(-2.0 / w) / (w * w)
            } else {
                0.0
            };
            out[0] = k * dx + profile(x[1]);
            out[1] = k * dy + profile(x[0]);
        }))
        .build()
}

/// Drift `b_i = 1/2 sum_j d_j a_ij + b_bar_i` making Lebesgue measure invariant.
///
/// `a` is differentiated by central differences. `b_bar` is checked on the
/// grid with spacing `grid_step`: each component must have zero cell mean and
/// must not depend on its own coordinate.
pub fn divergence_form_drift(torus: &Torus, a: MatrixFn, b_bar: VectorFn, grid_step: f64) -> Result<VectorFn> {
    let n = torus.dim();
    let shape = torus.grid_shape(grid_step)?;
    let total: usize = shape.iter().product();
    let mut x = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut sums = vec![0.0; n];
    let mut scale: f64 = 0.0;
    for k in 0..total {
        bin_center(torus, &shape, k, &mut x);
        b_bar(&x, &mut v);
        for i in 0..n {
            sums[i] += v[i];
            scale = scale.max(libm::fabs(v[i]));
        }
    }
    let tol = 1e-6 * scale.max(1.0);
    for (axis, s) in sums.iter().enumerate() {
        let mean = s / total as f64;
        if libm::fabs(mean) > tol {
            return Err(Error::DriftNotZeroMean { axis, mean });
        }
    }
    let mut y = vec![0.0; n];
    let mut w = vec![0.0; n];
    for k in 0..total {
        bin_center(torus, &shape, k, &mut x);
        b_bar(&x, &mut v);
        for axis in 0..n {
            for j in 1..shape[axis] {
                y.copy_from_slice(&x);
                y[axis] = Torus::wrap_coord(x[axis] + j as f64 * grid_step, torus.periods()[axis]);
                b_bar(&y, &mut w);
                let variation = libm::fabs(w[axis] - v[axis]);
                if variation > tol {
                    return Err(Error::DriftDependsOnOwnAxis { axis, variation });
                }
            }
        }
    }
    let periods = torus.periods().to_vec();
    let h = 1e-5 * periods.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(Arc::new(move |x: &[f64], out: &mut [f64]| {
        let n = x.len();
        let mut p = [0.0; 8];
        let mut ap = [0.0; 64];
        let mut am = [0.0; 64];
        b_bar(x, out);
        for j in 0..n {
            p[..n].copy_from_slice(x);
            p[j] = x[j] + h;
            a(&p[..n], &mut ap[..n * n]);
            p[j] = x[j] - h;
            a(&p[..n], &mut am[..n * n]);
            for i in 0..n {
                out[i] += 0.5 * (ap[i * n + j] - am[i * n + j]) / (2.0 * h);
            }
        }
    }))
}

/// Assembles a divergence-form set from `sigma` (with `a = sigma sigma^T`) and `b_bar`.
pub fn divergence_form(torus: Torus, noise_dim: usize, sigma: MatrixFn, b_bar: VectorFn, grid_step: f64) -> Result<CoefficientSet> {
    let n = torus.dim();
    let periods = torus.periods().to_vec();
    let s2 = sigma.clone();
    let a: MatrixFn = Arc::new(move |x: &[f64], out: &mut [f64]| {
        let mut w = [0.0; 8];
        for i in 0..n {
            w[i] = Torus::wrap_coord(x[i], periods[i]);
        }
        let mut s = [0.0; 64];
        s2(&w[..n], &mut s[..n * noise_dim]);
        linalg::outer_self(&s[..n * noise_dim], n, noise_dim, out);
    });
    let b = divergence_form_drift(&torus, a, b_bar, grid_step)?;
    Ok(CoefficientSet::builder(torus, noise_dim)
        .label("divergence_form")
        .sigma(sigma)
        .drift_b(b)
        .build())
}

/// Per-assumption outcome of [`validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssumptionChecks {
    pub periodic: bool,
    pub symmetric_psd: bool,
    /// Lipschitz specialisation of the modulus condition (finite constant).
    pub modulus: bool,
    pub holder: bool,
    pub elliptic_on_region: bool,
}

impl AssumptionChecks {
    pub fn all(&self) -> bool {
        self.periodic && self.symmetric_psd && self.modulus && self.holder && self.elliptic_on_region
    }
}

/// Sampled constants certifying (or not) the standing assumptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub grid_step: f64,
    pub holder_exponent_gamma: f64,
    pub holder_constant_gamma: f64,
    pub modulus_constant_theta: f64,
    pub ellipticity_alpha: f64,
    pub degenerate_fraction: f64,
    pub min_eigenvalue: f64,
    pub max_asymmetry: f64,
    pub max_seam_jump: f64,
    pub passed: AssumptionChecks,
}

/// Tolerances used by [`validate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationOptions {
    /// Relative seam tolerance.
    pub seam_tolerance: f64,
    /// Smallest admissible eigenvalue of `a`.
    pub psd_tolerance: f64,
    /// Eigenvalues at or below this count as degenerate.
    pub degeneracy_threshold: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            seam_tolerance: 1e-6,
            psd_tolerance: 1e-10,
            degeneracy_threshold: 0.0,
        }
    }
}

struct Sample {
    sigma: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: f64,
    e: f64,
}

fn sample_raw(set: &CoefficientSet, x: &[f64]) -> Sample {
    let n = set.dim();
    let m = set.noise_dim();
    let mut s = Sample {
        sigma: vec![0.0; n * m],
        a: vec![0.0; n * n],
        b: vec![0.0; n],
        c: vec![0.0; n],
        d: 0.0,
        e: 0.0,
    };
    (set.sigma)(x, &mut s.sigma);
    linalg::outer_self(&s.sigma, n, m, &mut s.a);
    (set.drift_b)(x, &mut s.b);
    if !set.c_zero {
        (set.drift_c)(x, &mut s.c);
    }
    if !set.d_zero {
        s.d = (set.potential_d)(x);
    }
    s.e = (set.potential_e)(x);
    s
}

fn max_jump(p: &Sample, q: &Sample) -> f64 {
    let mut j: f64 = 0.0;
    for (u, v) in p.sigma.iter().zip(&q.sigma) {
        j = j.max(libm::fabs(u - v));
    }
    for (u, v) in p.b.iter().zip(&q.b).chain(p.c.iter().zip(&q.c)) {
        j = j.max(libm::fabs(u - v));
    }
    j.max(libm::fabs(p.d - q.d)).max(libm::fabs(p.e - q.e))
}

fn sample_scale(p: &Sample) -> f64 {
    p.sigma
        .iter()
        .chain(&p.b)
        .chain(&p.c)
        .fold(libm::fabs(p.d).max(libm::fabs(p.e)), |m, v| m.max(libm::fabs(*v)))
}

/// Samples the set on the grid of spacing `grid_step` and estimates the
/// constants of the standing assumptions. Ellipticity is measured over the
/// grid nodes lying in the (open) declared region.
pub fn validate(set: &CoefficientSet, grid_step: f64, declared: &Region, opts: &ValidationOptions) -> Result<ValidationReport> {
    let torus = set.torus().clone();
    let n = torus.dim();
    declared.check_dim(n)?;
    let shape = torus.grid_shape(grid_step)?;
    let total: usize = shape.iter().product();
    let periods = torus.periods().to_vec();

    // Seam: compare both sides of every face, and the formula against its translate.
    let mut seam: f64 = 0.0;
    let mut scale: f64 = 1.0;
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; n];
    for k in 0..total {
        grid_node(&torus, &shape, k, &mut x);
        let base = sample_raw(set, &x);
        scale = scale.max(sample_scale(&base));
        for axis in 0..n {
            if x[axis] != 0.0 {
                continue;
            }
            let eta = 1e-9 * periods[axis];
            y.copy_from_slice(&x);
            y[axis] = periods[axis] - eta;
            let left = sample_raw(set, &y);
            y[axis] = eta;
            let right = sample_raw(set, &y);
            y[axis] = periods[axis];
            let shifted = sample_raw(set, &y);
            let jump = max_jump(&left, &right).max(max_jump(&base, &shifted));
            seam = seam.max(jump);
            if jump > opts.seam_tolerance * scale.max(1.0) {
                return Err(Error::NonPeriodic {
                    field: "coefficients",
                    axis,
                    jump,
                });
            }
        }
    }

    // Symmetry, PSD and ellipticity on the nodes; degeneracy on cell midpoints.
    let mut min_eig = f64::INFINITY;
    let mut asym: f64 = 0.0;
    let mut alpha = f64::INFINITY;
    let mut degenerate = 0usize;
    for k in 0..total {
        grid_node(&torus, &shape, k, &mut x);
        let s = sample_raw(set, &x);
        asym = asym.max(linalg::max_asymmetry(&s.a, n));
        let ev = linalg::min_eigenvalue(&s.a, n);
        min_eig = min_eig.min(ev);
        if declared.contains(&torus, &x) {
            alpha = alpha.min(ev);
        }
        bin_center(&torus, &shape, k, &mut x);
        let s = sample_raw(set, &x);
        if linalg::min_eigenvalue(&s.a, n) <= opts.degeneracy_threshold {
            degenerate += 1;
        }
    }
    if !alpha.is_finite() {
        alpha = 0.0;
    }

    // Difference quotients at dyadic scales along each axis.
    let mut theta: f64 = 0.0;
    let mut scales = Vec::new();
    let mut quotients = Vec::new();
    let min_cells = shape.iter().copied().min().unwrap_or(1);
    let mut step_cells = 1usize;
    while step_cells * 4 <= min_cells.max(4) {
        let mut q: f64 = 0.0;
        let mut dist = 0.0;
        for k in 0..total {
            grid_node(&torus, &shape, k, &mut x);
            let p = sample_raw(set, &x);
            for axis in 0..n {
                let hx = step_cells as f64 * periods[axis] / shape[axis] as f64;
                dist = hx;
                y.copy_from_slice(&x);
                y[axis] = Torus::wrap_coord(x[axis] + hx, periods[axis]);
                let r = sample_raw(set, &y);
                let ds: f64 = p.sigma.iter().zip(&r.sigma).map(|(u, v)| (u - v) * (u - v)).sum();
                let db = (r.b[axis] - p.b[axis]) * hx;
                let dc = (r.c[axis] - p.c[axis]) * hx;
                theta = theta.max(ds.max(db).max(dc) / (hx * hx));
                let da: f64 = linalg::hs_norm(
                    &p.a.iter().zip(&r.a).map(|(u, v)| u - v).collect::<Vec<_>>(),
                );
                let dbn = libm::sqrt(p.b.iter().zip(&r.b).map(|(u, v)| (u - v) * (u - v)).sum());
                let dcn = libm::sqrt(p.c.iter().zip(&r.c).map(|(u, v)| (u - v) * (u - v)).sum());
                q = q.max(da + dbn + dcn);
            }
        }
        scales.push(dist);
        quotients.push(q);
        step_cells *= 2;
    }
    let (gamma, big_gamma) = holder_fit(&scales, &quotients);

    let checks = AssumptionChecks {
        periodic: true,
        symmetric_psd: min_eig >= -opts.psd_tolerance && asym <= 1e-12 * scale,
        modulus: theta.is_finite(),
        holder: gamma > 0.0 && big_gamma.is_finite(),
        elliptic_on_region: declared.is_empty() || alpha > 0.0,
    };
    Ok(ValidationReport {
        grid_step,
        holder_exponent_gamma: gamma,
        holder_constant_gamma: big_gamma,
        modulus_constant_theta: theta,
        ellipticity_alpha: alpha,
        degenerate_fraction: degenerate as f64 / total as f64,
        min_eigenvalue: min_eig,
        max_asymmetry: asym,
        max_seam_jump: seam,
        passed: checks,
    })
}

/// Fits `q(s) ~ Gamma s^gamma`, clipping `gamma` to `(0, 1]`, and returns the
/// smallest `Gamma` dominating every sampled quotient.
fn holder_fit(scales: &[f64], q: &[f64]) -> (f64, f64) {
    if q.iter().all(|&v| v == 0.0) {
        return (1.0, 0.0);
    }
    let pts: Vec<(f64, f64)> = scales
        .iter()
        .zip(q)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&s, &v)| (libm::log(s), libm::log(v)))
        .collect();
    let gamma = if pts.len() >= 2 {
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        crate::stats::linear_fit(&xs, &ys).map(|f| f.slope).unwrap_or(1.0)
    } else {
        1.0
    };
    let gamma = gamma.clamp(1e-3, 1.0);
    let big = scales
        .iter()
        .zip(q)
        .map(|(&s, &v)| v / libm::pow(s, gamma))
        .fold(0.0, f64::max);
    (gamma, big)
}

/// Cell average of a vector field by the midpoint rule on a grid.
pub fn cell_mean(torus: &Torus, shape: &[usize], ncomp: usize, f: impl Fn(&[f64], &mut [f64])) -> Vec<f64> {
    let total: usize = shape.iter().product();
    let mut x = vec![0.0; torus.dim()];
    let mut v = vec![0.0; ncomp];
    let mut acc = vec![0.0; ncomp];
    for k in 0..total {
        bin_center(torus, shape, k, &mut x);
        f(&x, &mut v);
        for (a, b) in acc.iter_mut().zip(&v) {
            *a += b;
        }
    }
    acc.iter().map(|a| a / total as f64).collect()
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "gamma={:.3} Gamma={:.3e} Theta={:.3e} alpha={:.3e} degenerate={:.4}",
            self.holder_exponent_gamma,
            self.holder_constant_gamma,
            self.modulus_constant_theta,
            self.ellipticity_alpha,
            self.degenerate_fraction
        )
    }
}

/// Human-readable identifier used in error messages.
pub fn describe(set: &CoefficientSet) -> String {
    format!("{} on {:?}", set.label(), set.torus().periods())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_2d_sigma_values() {
        let set = paper_2d_degenerate();
        let mut s = [0.0; 4];
        set.sigma(&[5.0, 5.0], &mut s);
        assert!((s[0] - 0.894_839_316_814_369_8).abs() < 1e-14);
        assert_eq!(s[1], 0.0);
        assert_eq!(s[0], s[3]);
        set.sigma(&[8.0, 5.0], &mut s);
        assert_eq!(s, [0.0; 4]);
        set.sigma(&[15.0, -5.0], &mut s);
        assert!((s[0] - 0.894_839_316_814_369_8).abs() < 1e-14);
    }

    #[test]
    fn normalizer_matches_quadrature_oracle() {
        // Frozen from an independent high-precision quadrature.
        assert!((bump_integral() - 0.443_993_816_168_079_3).abs() < 1e-10);
        assert!((paper_2d_normalizer() - 22.522_836_210_435_816).abs() < 1e-8);
    }

    #[test]
    fn profile_has_zero_mean() {
        let p = paper_2d_profile(paper_2d_normalizer());
        let m = adaptive_simpson(&p, 0.0, 10.0, 1e-12) / 10.0;
        assert!(m.abs() < 1e-8, "{m}");
    }

    #[test]
    fn sine_drift_is_half_derivative() {
        let set = sine_1d();
        let mut b = [0.0];
        set.drift_b(&[0.0], &mut b);
        assert!((b[0] - PI).abs() < 1e-14);
    }

    #[test]
    fn labels_roundtrip() {
        for b in [Builtin::ConstantIdentity, Builtin::Sine1d, Builtin::Paper2dDegenerate] {
            assert_eq!(Builtin::from_label(b.label()).unwrap(), b);
        }
        assert!(matches!(Builtin::from_label("nope"), Err(Error::UnknownLabel(_))));
    }
}
