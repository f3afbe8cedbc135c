//! Diophantine certification of directions over finite lattice balls and the
//! band-sharp generalized Poincare constant.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::DiophantineError;

pub const DEFAULT_TAU: f64 = 3.0;
pub const DEFAULT_TRUNCATION: u32 = 64;
const MAX_RESAMPLES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Algebraic,
    User,
    Random,
}

/// A unit vector together with its finite-truncation certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub omega: [f64; 3],
    pub tau: f64,
    pub truncation_x: u32,
    pub c_est: f64,
    /// Lattice vector attaining `c_est`.
    pub argmin_chi: [i64; 3],
    pub provenance: Provenance,
}

impl Direction {
    /// Recomputes `c_est` by enumeration.
    pub fn recompute_c_est(&self) -> Result<f64, DiophantineError> {
        certify_direction(self.omega, self.tau, self.truncation_x).map(|d| d.c_est)
    }

    /// The unit vector `(1, 2^{1/3}, 2^{2/3}) / |.|`.
    pub fn algebraic_omega() -> [f64; 3] {
        let c = 2f64.cbrt();
        normalize([1.0, c, c * c])
    }
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// `k . omega` evaluated with error-free transformations, accurate to about
/// one rounding of the result.
#[inline]
pub fn compensated_dot(k: [i64; 3], omega: [f64; 3]) -> f64 {
    let (p0, e0) = two_prod(k[0] as f64, omega[0]);
    let (p1, e1) = two_prod(k[1] as f64, omega[1]);
    let (p2, e2) = two_prod(k[2] as f64, omega[2]);
    let (s, c0) = two_sum(p0, p1);
    let (s, c1) = two_sum(s, p2);
    s + (e0 + e1 + e2 + c0 + c1)
}

/// Values this small are indistinguishable from an exact zero of `chi . omega`
/// given that `omega` itself carries one rounding per coordinate.
#[inline]
fn is_orthogonal(dot: f64, chi: [i64; 3]) -> bool {
    let l1 = (chi[0].abs() + chi[1].abs() + chi[2].abs()) as f64;
    dot.abs() <= 8.0 * f64::EPSILON * l1
}

fn in_half_space(chi: [i64; 3]) -> bool {
    chi[0] > 0 || (chi[0] == 0 && (chi[1] > 0 || (chi[1] == 0 && chi[2] > 0)))
}

/// `0, 1, -1, 2, -2, ...` up to `x`.
fn zigzag(x: i64) -> impl Iterator<Item = i64> {
    std::iter::once(0).chain((1..=x).flat_map(|v| [v, -v]))
}

fn check_unit(omega: [f64; 3]) -> Result<(), DiophantineError> {
    let norm = (omega[0] * omega[0] + omega[1] * omega[1] + omega[2] * omega[2]).sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-12 {
        return Err(DiophantineError::NotUnit { norm });
    }
    Ok(())
}

/// Exhaustive minimum of `|chi . omega| |chi|^tau` over nonzero integer `chi`
/// with `|chi| <= x`, one representative per `{chi, -chi}`. The loops run
/// `chi_3`, then `chi_2`, then `chi_1` outermost-first in the order
/// `0, 1, -1, 2, ...`; the first orthogonal vector met is the witness.
pub fn certify_direction(omega: [f64; 3], tau: f64, x: u32) -> Result<Direction, DiophantineError> {
    check_unit(omega)?;
    if x == 0 {
        return Err(DiophantineError::InvalidTruncation);
    }
    let xi = x as i64;
    let r2 = xi * xi;
    let mut best = f64::INFINITY;
    let mut arg = [0i64; 3];
    for c3 in zigzag(xi) {
        for c2 in zigzag(xi) {
            let partial = c2 * c2 + c3 * c3;
            if partial > r2 {
                continue;
            }
            for c1 in zigzag(xi) {
                let chi = [c1, c2, c3];
                let q = partial + c1 * c1;
                if q > r2 || !in_half_space(chi) {
                    continue;
                }
                let dot = compensated_dot(chi, omega);
                if is_orthogonal(dot, chi) {
                    return Err(DiophantineError::Orthogonal { witness: chi });
                }
                let v = dot.abs() * (q as f64).powf(0.5 * tau);
                if v < best {
                    best = v;
                    arg = chi;
                }
            }
        }
    }
    Ok(Direction { omega, tau, truncation_x: x, c_est: best, argmin_chi: arg, provenance: Provenance::User })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionKind {
    Algebraic,
    Random,
}

/// Deterministic or seeded-random direction, certified at `tau = 3`, `X = 64`.
pub fn sample_direction(kind: DirectionKind, seed: u64) -> Result<Direction, DiophantineError> {
    match kind {
        DirectionKind::Algebraic => {
            let mut d = certify_direction(Direction::algebraic_omega(), DEFAULT_TAU, DEFAULT_TRUNCATION)?;
            d.provenance = Provenance::Algebraic;
            Ok(d)
        }
        DirectionKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..MAX_RESAMPLES {
                let v: [f64; 3] = UnitSphere.sample(&mut rng);
                if let Ok(mut d) = certify_direction(normalize(v), DEFAULT_TAU, DEFAULT_TRUNCATION) {
                    d.provenance = Provenance::Random;
                    return Ok(d);
                }
            }
            Err(DiophantineError::SamplingExhausted { attempts: MAX_RESAMPLES })
        }
    }
}

/// Sharp constant `C` in `||f||_i <= C ||d_omega f||_{i+3}` over mean-zero
/// fields with every `|k_j| <= band`, and the mode attaining it. The per-mode
/// ratio is `1 / (|2 pi k.omega| (1 + |2 pi k|^2)^{3/2})` for every order `i`.
pub fn poincare_extremal(dir: &Direction, band: u32) -> Result<(f64, [i64; 3]), DiophantineError> {
    if band == 0 || band > dir.truncation_x {
        return Err(DiophantineError::InvalidTruncation);
    }
    let b = band as i64;
    let mut best = 0.0f64;
    let mut arg = [0i64; 3];
    for k1 in 0..=b {
        for k2 in -b..=b {
            for k3 in -b..=b {
                let k = [k1, k2, k3];
                if !in_half_space(k) {
                    continue;
                }
                let dot = compensated_dot(k, dir.omega);
                if is_orthogonal(dot, k) {
                    return Err(DiophantineError::InfiniteConstant { witness: k });
                }
                let q = 4.0 * PI * PI * ((k1 * k1 + k2 * k2 + k3 * k3) as f64);
                let ratio = 1.0 / (2.0 * PI * dot.abs() * (1.0 + q).powf(1.5));
                if ratio > best {
                    best = ratio;
                    arg = k;
                }
            }
        }
    }
    Ok((best, arg))
}

/// See [`poincare_extremal`]; `order` does not change the value.
pub fn poincare_constant(dir: &Direction, order: u32, band: u32) -> Result<f64, DiophantineError> {
    let _ = order;
    poincare_extremal(dir, band).map(|(c, _)| c)
}
