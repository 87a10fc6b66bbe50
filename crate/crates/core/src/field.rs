//! Field types, named analytic forms, regions and periodic grids.

use alloc::boxed::Box;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::{unravel, Torus};

/// Scalar field `R^n -> R`.
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Vector field; writes `n` components into the output slice.
pub type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Matrix field; writes a row-major matrix into the output slice.
pub type MatrixFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

pub fn constant_scalar(v: f64) -> ScalarFn {
    Arc::new(move |_| v)
}

pub fn constant_vector(v: Vec<f64>) -> VectorFn {
    Arc::new(move |_, out| out.copy_from_slice(&v))
}

pub fn zero_vector() -> VectorFn {
    Arc::new(|_, out| out.iter_mut().for_each(|o| *o = 0.0))
}

/// Named analytic scalar forms used for problem data (`f`, `g`, `d`, `e`) and
/// test functions. Frequencies are in cycles per unit length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarForm {
    Constant {
        value: f64,
    },
    /// `scale * |x - center|^2`; `center` defaults to the origin.
    SquaredNorm {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        center: Vec<f64>,
    },
    /// `amplitude * cos(2 pi k.x + phase)`.
    Cosine {
        amplitude: f64,
        frequency: Vec<f64>,
        #[serde(default)]
        phase: f64,
    },
    /// `amplitude * sin(2 pi k.x + phase)`.
    Sine {
        amplitude: f64,
        frequency: Vec<f64>,
        #[serde(default)]
        phase: f64,
    },
    /// `amplitude * exp(-|x - center|^2 / (2 width^2))`.
    Gaussian {
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
    },
    Sum {
        terms: Vec<ScalarForm>,
    },
}

fn one() -> f64 {
    1.0
}

impl ScalarForm {
    pub fn constant(value: f64) -> Self {
        ScalarForm::Constant { value }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ScalarForm::Constant { value } => *value,
            ScalarForm::SquaredNorm { scale, center } => {
                let s: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(i, xi)| {
                        let d = xi - center.get(i).copied().unwrap_or(0.0);
                        d * d
                    })
                    .sum();
                scale * s
            }
            ScalarForm::Cosine {
                amplitude,
                frequency,
                phase,
            } => amplitude * libm::cos(2.0 * PI * dot(frequency, x) + phase),
            ScalarForm::Sine {
                amplitude,
                frequency,
                phase,
            } => amplitude * libm::sin(2.0 * PI * dot(frequency, x) + phase),
            ScalarForm::Gaussian {
                amplitude,
                center,
                width,
            } => {
                let r2: f64 = x
                    .iter()
                    .zip(center)
                    .map(|(a, c)| (a - c) * (a - c))
                    .sum();
                amplitude * libm::exp(-r2 / (2.0 * width * width))
            }
            ScalarForm::Sum { terms } => terms.iter().map(|t| t.eval(x)).sum(),
        }
    }

    /// A bound on `sup |f|`, when the form is bounded.
    pub fn sup_bound(&self) -> Option<f64> {
        match self {
            ScalarForm::Constant { value } => Some(libm::fabs(*value)),
            ScalarForm::SquaredNorm { scale, .. } => (*scale == 0.0).then_some(0.0),
            ScalarForm::Cosine { amplitude, .. }
            | ScalarForm::Sine { amplitude, .. }
            | ScalarForm::Gaussian { amplitude, .. } => Some(libm::fabs(*amplitude)),
            ScalarForm::Sum { terms } => terms.iter().map(|t| t.sup_bound()).sum(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sup_bound() == Some(0.0)
    }

    pub fn to_fn(&self) -> ScalarFn {
        let form = self.clone();
        Arc::new(move |x| form.eval(x))
    }
}

fn dot(k: &[f64], x: &[f64]) -> f64 {
    k.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// A subset of the torus, tested on wrapped points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    WholeTorus,
    Empty,
    /// Open periodic ball `{x : dist_tau(x, center) < radius}`.
    Ball { center: Vec<f64>, radius: f64 },
    /// Open periodic box `lo < x < hi` (per axis, measured from its midpoint).
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Region {
    pub fn contains(&self, torus: &Torus, x: &[f64]) -> bool {
        match self {
            Region::WholeTorus => true,
            Region::Empty => false,
            Region::Ball { center, radius } => torus.periodic_distance(x, center) < *radius,
            Region::Box { lo, hi } => (0..torus.dim()).all(|i| {
                let tau = torus.periods()[i];
                let mid = 0.5 * (lo[i] + hi[i]);
                let half = 0.5 * (hi[i] - lo[i]);
                if half * 2.0 >= tau {
                    return true;
                }
                let d = x[i] - mid;
                let d = d - tau * libm::round(d / tau);
                libm::fabs(d) < half
            }),
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Region::Empty => true,
            Region::Ball { radius, .. } => *radius <= 0.0,
            Region::Box { lo, hi } => lo.iter().zip(hi).any(|(l, h)| h <= l),
            Region::WholeTorus => false,
        }
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        let got = match self {
            Region::Ball { center, .. } => center.len(),
            Region::Box { lo, hi } if lo.len() != hi.len() => {
                return Err(Error::InvalidConfig("box lo/hi lengths differ".into()))
            }
            Region::Box { lo, .. } => lo.len(),
            _ => dim,
        };
        if got != dim {
            return Err(Error::DimensionMismatch {
                what: "region",
                expected: dim,
                got,
            });
        }
        Ok(())
    }
}

/// A bounded domain `D = {x : d(x) < 0}` in the original (unwrapped) space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainSpec {
    /// `d(x) = |x - center| - radius`.
    Ball { center: Vec<f64>, radius: f64 },
    /// `d(x) = max_i (|x_i - m_i| - h_i)`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl DomainSpec {
    pub fn interval(lo: f64, hi: f64) -> Self {
        DomainSpec::Box {
            lo: vec![lo],
            hi: vec![hi],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DomainSpec::Ball { center, .. } => center.len(),
            DomainSpec::Box { lo, .. } => lo.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DomainSpec::Ball { radius, .. } if !(*radius > 0.0) => Err(Error::InvalidConfig(
                format!("domain radius {radius} must be > 0"),
            )),
            DomainSpec::Box { lo, hi } if lo.len() != hi.len() || lo.iter().zip(hi).any(|(l, h)| !(h > l)) => {
                Err(Error::InvalidConfig("domain box needs lo < hi on every axis".into()))
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn level(&self, x: &[f64]) -> f64 {
        match self {
            DomainSpec::Ball { center, radius } => {
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                libm::sqrt(r2) - radius
            }
            DomainSpec::Box { lo, hi } => {
                let mut m = f64::NEG_INFINITY;
                for i in 0..lo.len() {
                    let mid = 0.5 * (lo[i] + hi[i]);
                    let half = 0.5 * (hi[i] - lo[i]);
                    m = m.max(libm::fabs(x[i] - mid) - half);
                }
                m
            }
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.level(x) < 0.0
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            DomainSpec::Ball { center, .. } => {
                let r = libm::sqrt(x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum());
                for i in 0..out.len() {
                    out[i] = if r > 0.0 { (x[i] - center[i]) / r } else { 0.0 };
                }
            }
            DomainSpec::Box { lo, hi } => {
                let mut best = 0;
                let mut m = f64::NEG_INFINITY;
                for i in 0..lo.len() {
                    let mid = 0.5 * (lo[i] + hi[i]);
                    let v = libm::fabs(x[i] - mid) - 0.5 * (hi[i] - lo[i]);
                    if v > m {
                        m = v;
                        best = i;
                    }
                }
                out.iter_mut().for_each(|o| *o = 0.0);
                let mid = 0.5 * (lo[best] + hi[best]);
                out[best] = if x[best] >= mid { 1.0 } else { -1.0 };
            }
        }
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            DomainSpec::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            DomainSpec::Box { lo, hi } => (lo.clone(), hi.clone()),
        }
    }

    /// Points on the boundary, used to probe boundary hypotheses.
    pub fn boundary_probes(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut out = Vec::new();
        match self {
            DomainSpec::Ball { center, radius } => {
                for i in 0..n {
                    for s in [-1.0, 1.0] {
                        let mut p = center.clone();
                        p[i] += s * radius;
                        out.push(p);
                    }
                }
                if n == 2 {
                    for k in 0..per_axis.max(1) * 4 {
                        let th = 2.0 * PI * k as f64 / (per_axis.max(1) * 4) as f64;
                        out.push(vec![
                            center[0] + radius * libm::cos(th),
                            center[1] + radius * libm::sin(th),
                        ]);
                    }
                }
            }
            DomainSpec::Box { lo, hi } => {
                for i in 0..n {
                    for face in [lo[i], hi[i]] {
                        let mut p: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
                        p[i] = face;
                        out.push(p);
                    }
                }
            }
        }
        out
    }
}

/// Values sampled on the regular grid `x_i = k_i tau_i / N_i` of the torus,
/// `ncomp` components per node, nodes in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicGrid {
    pub torus: Torus,
    pub shape: Vec<usize>,
    pub ncomp: usize,
    pub values: Vec<f64>,
}

impl PeriodicGrid {
    pub fn new(torus: Torus, shape: Vec<usize>, ncomp: usize, values: Vec<f64>) -> Result<Self> {
        if shape.len() != torus.dim() {
            return Err(Error::DimensionMismatch {
                what: "grid shape",
                expected: torus.dim(),
                got: shape.len(),
            });
        }
        if shape.iter().any(|&s| s == 0) || ncomp == 0 {
            return Err(Error::InvalidConfig("grid shape and ncomp must be positive".into()));
        }
        let nodes: usize = shape.iter().product();
        if values.len() != nodes * ncomp {
            return Err(Error::DimensionMismatch {
                what: "grid values",
                expected: nodes * ncomp,
                got: values.len(),
            });
        }
        Ok(Self {
            torus,
            shape,
            ncomp,
            values,
        })
    }

    /// Samples `f` on the grid nodes.
    pub fn sample(torus: Torus, shape: Vec<usize>, ncomp: usize, f: impl Fn(&[f64], &mut [f64])) -> Result<Self> {
        let nodes: usize = shape.iter().product();
        let mut values = vec![0.0; nodes * ncomp];
        let mut x = vec![0.0; torus.dim()];
        for k in 0..nodes {
            grid_node(&torus, &shape, k, &mut x);
            f(&x, &mut values[k * ncomp..(k + 1) * ncomp]);
        }
        Self::new(torus, shape, ncomp, values)
    }

    pub fn n_nodes(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.torus.periods()[axis] / self.shape[axis] as f64
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.values[k * self.ncomp..(k + 1) * self.ncomp]
    }

    /// Periodic multilinear interpolation at `x` (any representative).
    pub fn interpolate(&self, x: &[f64], out: &mut [f64]) {
        periodic_interpolate(&self.torus, &self.shape, self.ncomp, &self.values, x, out)
    }

    pub fn into_vector_fn(self) -> VectorFn {
        let g = Arc::new(self);
        Arc::new(move |x, out| g.interpolate(x, out))
    }

    pub fn into_scalar_fn(self) -> ScalarFn {
        let g = Arc::new(self);
        Arc::new(move |x| {
            let mut v = [0.0];
            g.interpolate(x, &mut v);
            v[0]
        })
    }
}

/// Multilinear interpolation of node-major grid values with periodic wraparound.
pub fn periodic_interpolate(torus: &Torus, shape: &[usize], ncomp: usize, values: &[f64], x: &[f64], out: &mut [f64]) {
    let n = shape.len();
    debug_assert!(n <= 8);
    let mut base = [0usize; 8];
    let mut frac = [0.0f64; 8];
    for i in 0..n {
        let tau = torus.periods()[i];
        let u = Torus::wrap_coord(x[i], tau) / tau * shape[i] as f64;
        let f = libm::floor(u);
        base[i] = (f as usize).min(shape[i] - 1);
        frac[i] = u - f;
    }
    out[..ncomp].iter_mut().for_each(|o| *o = 0.0);
    for corner in 0..(1usize << n) {
        let mut w = 1.0;
        let mut flat = 0;
        for i in 0..n {
            let hi = (corner >> (n - 1 - i)) & 1;
            w *= if hi == 1 { frac[i] } else { 1.0 - frac[i] };
            flat = flat * shape[i] + (base[i] + hi) % shape[i];
        }
        if w == 0.0 {
            continue;
        }
        let v = &values[flat * ncomp..(flat + 1) * ncomp];
        for c in 0..ncomp {
            out[c] += w * v[c];
        }
    }
}

/// Coordinates of node `k` of a regular grid on the torus.
pub fn grid_node(torus: &Torus, shape: &[usize], k: usize, out: &mut [f64]) {
    let mut idx = [0usize; 8];
    unravel(k, shape, &mut idx[..shape.len()]);
    for i in 0..shape.len() {
        out[i] = idx[i] as f64 * torus.periods()[i] / shape[i] as f64;
    }
}

/// Cell-centre coordinates of bin `k`.
pub fn bin_center(torus: &Torus, shape: &[usize], k: usize, out: &mut [f64]) {
    let mut idx = [0usize; 8];
    unravel(k, shape, &mut idx[..shape.len()]);
    for i in 0..shape.len() {
        out[i] = (idx[i] as f64 + 0.5) * torus.periods()[i] / shape[i] as f64;
    }
}

/// Boxed iterator over every grid node; convenient in tests and reports.
pub fn grid_nodes<'a>(torus: &'a Torus, shape: &[usize]) -> Box<dyn Iterator<Item = Vec<f64>> + 'a> {
    let total: usize = shape.iter().product();
    let shape = shape.to_vec();
    Box::new((0..total).map(move |k| {
        let mut x = vec![0.0; torus.dim()];
        grid_node(torus, &shape, k, &mut x);
        x
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forms_evaluate() {
        let sq = ScalarForm::SquaredNorm {
            scale: 1.0,
            center: vec![],
        };
        assert_eq!(sq.eval(&[1.0, 2.0]), 5.0);
        let c = ScalarForm::Cosine {
            amplitude: 2.0,
            frequency: vec![0.1],
            phase: 0.0,
        };
        assert!((c.eval(&[5.0]) + 2.0).abs() < 1e-14);
        assert_eq!(c.sup_bound(), Some(2.0));
        assert_eq!(sq.sup_bound(), None);
        assert!(ScalarForm::zero().is_zero());
    }

    #[test]
    fn forms_roundtrip_through_serde_shape() {
        let s = ScalarForm::Sum {
            terms: vec![ScalarForm::constant(1.0), ScalarForm::zero()],
        };
        assert_eq!(s.eval(&[0.0]), 1.0);
    }

    #[test]
    fn periodic_ball_membership() {
        let t = Torus::cube(2, 10.0).unwrap();
        let r = Region::Ball {
            center: vec![5.0, 5.0],
            radius: 3.0,
        };
        assert!(r.contains(&t, &[5.0, 5.0]));
        assert!(r.contains(&t, &[15.0, 5.0]));
        assert!(!r.contains(&t, &[8.0, 5.0]));
        assert!(!r.contains(&t, &[0.0, 0.0]));
        let b = Region::Box {
            lo: vec![9.0, 0.0],
            hi: vec![11.0, 10.0],
        };
        assert!(b.contains(&t, &[0.5, 3.0]));
        assert!(b.contains(&t, &[9.5, 3.0]));
        assert!(!b.contains(&t, &[5.0, 3.0]));
    }

    #[test]
    fn domain_level_sets() {
        let d = DomainSpec::interval(-1.0, 1.0);
        assert!(d.contains(&[0.0]));
        assert!(!d.contains(&[1.0]));
        assert!((d.level(&[0.5]) + 0.5).abs() < 1e-15);
        let mut g = [0.0];
        d.gradient(&[0.7], &mut g);
        assert_eq!(g, [1.0]);
        let ball = DomainSpec::Ball {
            center: vec![0.0, 0.0],
            radius: 2.0,
        };
        assert!((ball.level(&[0.0, 1.0]) + 1.0).abs() < 1e-15);
        for p in ball.boundary_probes(4) {
            assert!(ball.level(&p).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_is_exact_for_linear_within_cell_and_periodic() {
        let t = Torus::new(vec![1.0, 2.0]).unwrap();
        let g = PeriodicGrid::sample(t.clone(), vec![8, 4], 1, |x, o| {
            o[0] = libm::sin(2.0 * PI * x[0]) + libm::cos(PI * x[1]);
        })
        .unwrap();
        let mut v = [0.0];
        g.interpolate(&[0.25, 0.5], &mut v);
        assert!((v[0] - 1.0).abs() < 1e-12);
        let mut w = [0.0];
        g.interpolate(&[1.25, -1.5], &mut w);
        assert!((v[0] - w[0]).abs() < 1e-12);
        let mut m = [0.0];
        g.interpolate(&[0.0625, 0.0], &mut m);
        let expect = 0.5 * (libm::sin(0.0) + libm::sin(PI / 4.0)) + 1.0;
        assert!((m[0] - expect).abs() < 1e-12);
    }
}
