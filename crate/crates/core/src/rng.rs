//! Counter-based random numbers.
//!
//! Every Gaussian the engine consumes is a pure function of
//! `(seed, path id, stream, step index, slot)`, computed with Philox4x32-10.
//! No generator state is carried between steps, so the order in which paths
//! are scheduled on workers cannot change any sample.

use core::f64::consts::PI;

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

/// Philox4x32 with 10 rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Philox4x32 {
    key: [u32; 2],
}

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = (a as u64) * (b as u64);
    ((p >> 32) as u32, p as u32)
}

impl Philox4x32 {
    pub fn new(seed: u64) -> Self {
        Self {
            key: [seed as u32, (seed >> 32) as u32],
        }
    }

    pub fn from_key(key: [u32; 2]) -> Self {
        Self { key }
    }

    #[inline]
    pub fn block(&self, counter: [u32; 4]) -> [u32; 4] {
        let mut c = counter;
        let mut k = self.key;
        for round in 0..10 {
            if round > 0 {
                k[0] = k[0].wrapping_add(PHILOX_W0);
                k[1] = k[1].wrapping_add(PHILOX_W1);
            }
            let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
            let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
            c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
        }
        c
    }
}

/// Uniform in the open interval (0, 1) with 52 random bits.
#[inline]
pub fn open_unit(hi: u32, lo: u32) -> f64 {
    let bits = ((hi as u64) << 20) | ((lo as u64) >> 12);
    (bits as f64 + 0.5) * (1.0 / 4_503_599_627_370_496.0)
}

/// Independent sub-streams of one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Stream {
    /// Brownian increments.
    Drive = 0,
    /// Random initial conditions.
    Init = 1,
    /// Anything else a caller needs (bootstrap, shuffles).
    Aux = 2,
}

/// Gaussian source for one path.
#[derive(Debug, Clone, Copy)]
pub struct PathNoise {
    philox: Philox4x32,
    path: u32,
    stream: Stream,
}

impl PathNoise {
    pub fn new(seed: u64, path: usize, stream: Stream) -> Self {
        Self {
            philox: Philox4x32::new(seed),
            path: path as u32,
            stream,
        }
    }

    #[inline]
    fn raw(&self, step: u64, slot: u32) -> [u32; 4] {
        debug_assert!(slot < (1 << 24));
        self.philox.block([
            step as u32,
            (step >> 32) as u32,
            self.path,
            ((self.stream as u32) << 24) | slot,
        ])
    }

    /// Two independent standard normals for `(step, pair)`.
    #[inline]
    pub fn normal_pair(&self, step: u64, pair: u32) -> (f64, f64) {
        let w = self.raw(step, pair);
        let u1 = open_unit(w[0], w[1]);
        let u2 = open_unit(w[2], w[3]);
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let (s, c) = libm::sincos(2.0 * PI * u2);
        (r * c, r * s)
    }

    /// Fills `out` with standard normals for one step.
    #[inline]
    pub fn normals(&self, step: u64, out: &mut [f64]) {
        let mut i = 0;
        let mut pair = 0;
        while i < out.len() {
            let (a, b) = self.normal_pair(step, pair);
            out[i] = a;
            if i + 1 < out.len() {
                out[i + 1] = b;
            }
            i += 2;
            pair += 1;
        }
    }

    /// Normals for a coarse step that aggregates `2^refinement` fine steps:
    /// the sum of the fine normals divided by `sqrt(2^refinement)`. A run at
    /// step `h` with refinement `r` therefore sees the same Brownian path as a
    /// run at step `h / 2^r` with refinement 0.
    #[inline]
    pub fn coarse_normals(&self, step: u64, refinement: u32, out: &mut [f64], scratch: &mut [f64]) {
        if refinement == 0 {
            self.normals(step, out);
            return;
        }
        let fine = 1u64 << refinement;
        out.iter_mut().for_each(|o| *o = 0.0);
        for j in 0..fine {
            self.normals(step * fine + j, scratch);
            for (o, s) in out.iter_mut().zip(scratch.iter()) {
                *o += *s;
            }
        }
        let scale = 1.0 / libm::sqrt(fine as f64);
        out.iter_mut().for_each(|o| *o *= scale);
    }

    /// Uniform in (0,1) for `(step, slot)`; used for initial conditions.
    pub fn uniform(&self, step: u64, slot: u32) -> f64 {
        let w = self.raw(step, slot);
        open_unit(w[0], w[1])
    }
}
