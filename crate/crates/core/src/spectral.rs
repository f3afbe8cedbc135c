//! Truncated Fourier representation of real periodic fields on the unit
//! torus `T^3 = (R/Z)^3`.
//!
//! A field on a [`Lattice`] of side `n` stores one complex amplitude per
//! wrapped frequency `k in {-n/2+1, ..., n/2}^3`, laid out exactly like the
//! FFT output (`(i1 * n + i2) * n + i3`, axis 1 slowest). The Nyquist planes
//! (`|k_j| = n/2`) are always zero and coefficients are Hermitian, so every
//! stored field is real-valued. Physical wavenumbers are `2 pi k`.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::SpectralError;
use crate::quadrature::Quadrature;

pub const TWO_PI: f64 = 2.0 * PI;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Discretization of the unit torus: `n` points per axis, plus the
/// fraction of the resolved band kept by the dealiasing filter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Lattice {
    n: usize,
    dealias_num: u32,
    dealias_den: u32,
}

impl Lattice {
    /// Lattice with the default 2/3 dealiasing fraction.
    pub fn new(n: usize) -> Result<Self, SpectralError> {
        Self::with_dealias(n, 2, 3)
    }

    pub fn with_dealias(n: usize, num: u32, den: u32) -> Result<Self, SpectralError> {
        if n == 0 || n % 2 != 0 {
            return Err(SpectralError::InvalidResolution(n));
        }
        if den == 0 || num == 0 || num > den {
            return Err(SpectralError::InvalidDealias { num, den });
        }
        Ok(Lattice { n, dealias_num: num, dealias_den: den })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored coefficients, `n^3`.
    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dealias_fraction(&self) -> (u32, u32) {
        (self.dealias_num, self.dealias_den)
    }

    /// Largest `|k_j|` retained by the dealiasing filter: `floor(frac * n / 2)`,
    /// which is `floor(n / 3)` for the 2/3 rule.
    pub fn cutoff(&self) -> usize {
        let c = self.n * self.dealias_num as usize / (2 * self.dealias_den as usize);
        c.min(self.max_freq())
    }

    /// Largest non-Nyquist `|k_j|`.
    pub fn max_freq(&self) -> usize {
        self.n / 2 - 1
    }

    /// Same resolution with a different side length and the same dealiasing fraction.
    pub fn resized(&self, n: usize) -> Result<Self, SpectralError> {
        Self::with_dealias(n, self.dealias_num, self.dealias_den)
    }

    #[inline]
    pub(crate) fn wrap(&self, i: usize) -> i64 {
        if i <= self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    #[inline]
    pub(crate) fn is_nyquist(&self, i: usize) -> bool {
        i == self.n / 2
    }

    /// Wrapped frequency vector stored at `index`.
    pub fn freq(&self, index: usize) -> [i64; 3] {
        let n = self.n;
        [self.wrap(index / (n * n)), self.wrap((index / n) % n), self.wrap(index % n)]
    }

    /// Storage index of a non-Nyquist frequency, or `None` if it is not resolved.
    pub fn index_of(&self, k: [i64; 3]) -> Option<usize> {
        let n = self.n as i64;
        let h = self.max_freq() as i64;
        let mut idx = 0usize;
        for kj in k {
            if kj.abs() > h {
                return None;
            }
            idx = idx * self.n + kj.rem_euclid(n) as usize;
        }
        Some(idx)
    }

    /// Index of `-k` for the frequency stored at `index`.
    #[inline]
    pub(crate) fn neg_index(&self, index: usize) -> usize {
        let n = self.n;
        let (a, b, c) = (index / (n * n), (index / n) % n, index % n);
        (((n - a) % n) * n + (n - b) % n) * n + (n - c) % n
    }

    /// True when the index lies on a Nyquist plane.
    #[inline]
    pub(crate) fn on_nyquist(&self, index: usize) -> bool {
        let n = self.n;
        self.is_nyquist(index / (n * n)) || self.is_nyquist((index / n) % n) || self.is_nyquist(index % n)
    }
}

/// Physical wavevector `2 pi k`.
#[inline]
pub fn wavevector(k: [i64; 3]) -> [f64; 3] {
    [TWO_PI * k[0] as f64, TWO_PI * k[1] as f64, TWO_PI * k[2] as f64]
}

#[inline]
fn norm_sq(k: [f64; 3]) -> f64 {
    k[0] * k[0] + k[1] * k[1] + k[2] * k[2]
}

#[inline]
fn linf(k: [i64; 3]) -> usize {
    k.iter().map(|v| v.unsigned_abs() as usize).max().unwrap_or(0)
}

/// A real periodic scalar field in truncated Fourier form.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralScalarField {
    lattice: Lattice,
    coeffs: Vec<Complex64>,
}

impl SpectralScalarField {
    pub fn zeros(lattice: Lattice) -> Self {
        SpectralScalarField { lattice, coeffs: vec![ZERO; lattice.len()] }
    }

    pub fn constant(lattice: Lattice, value: f64) -> Self {
        let mut f = Self::zeros(lattice);
        f.coeffs[0] = Complex64::new(value, 0.0);
        f
    }

    /// Wraps raw coefficients. Nyquist entries are cleared and the result is
    /// symmetrized so it represents a real field.
    pub fn from_coeffs(lattice: Lattice, coeffs: Vec<Complex64>) -> Result<Self, SpectralError> {
        if coeffs.len() != lattice.len() {
            return Err(SpectralError::Length { expected: lattice.len(), got: coeffs.len() });
        }
        let mut f = SpectralScalarField { lattice, coeffs };
        f.clear_nyquist();
        f.symmetrize();
        Ok(f)
    }

    /// Builds a field from `(k, amplitude)` pairs; each pair also sets the
    /// conjugate amplitude at `-k`. Frequencies outside the lattice are ignored.
    pub fn from_modes(lattice: Lattice, modes: &[([i64; 3], Complex64)]) -> Self {
        let mut f = Self::zeros(lattice);
        for &(k, c) in modes {
            f.add_mode(k, c);
        }
        f
    }

    /// Adds `c e^{2 pi i k.y} + conj(c) e^{-2 pi i k.y}` (or `Re c` at `k = 0`).
    pub fn add_mode(&mut self, k: [i64; 3], c: Complex64) {
        let Some(i) = self.lattice.index_of(k) else { return };
        if k == [0, 0, 0] {
            self.coeffs[0] += Complex64::new(c.re, 0.0);
            return;
        }
        let j = self.lattice.index_of([-k[0], -k[1], -k[2]]).expect("lattice is symmetric");
        self.coeffs[i] += c;
        self.coeffs[j] += c.conj();
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub(crate) fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    /// Amplitude of frequency `k` (zero if unresolved).
    pub fn coeff(&self, k: [i64; 3]) -> Complex64 {
        self.lattice.index_of(k).map_or(ZERO, |i| self.coeffs[i])
    }

    /// Spatial mean, `coeff(0)`.
    pub fn mean(&self) -> f64 {
        self.coeffs[0].re
    }

    pub fn set_mean(&mut self, value: f64) {
        self.coeffs[0] = Complex64::new(value, 0.0);
    }

    fn clear_nyquist(&mut self) {
        let l = self.lattice;
        for (i, c) in self.coeffs.iter_mut().enumerate() {
            if l.on_nyquist(i) {
                *c = ZERO;
            }
        }
    }

    /// Replaces each pair `(c_k, c_{-k})` by its Hermitian part.
    pub(crate) fn symmetrize(&mut self) {
        let l = self.lattice;
        for i in 0..self.coeffs.len() {
            let j = l.neg_index(i);
            if j < i {
                continue;
            }
            if j == i {
                self.coeffs[i].im = 0.0;
                continue;
            }
            let a = self.coeffs[i];
            let b = self.coeffs[j];
            let h = (a + b.conj()) * 0.5;
            self.coeffs[i] = h;
            self.coeffs[j] = h.conj();
        }
    }

    /// Largest `|c_k - conj(c_{-k})|`; zero for every field built through this API.
    pub fn hermitian_defect(&self) -> f64 {
        let l = self.lattice;
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| (c - self.coeffs[l.neg_index(i)].conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Largest `|k_j|` carrying a nonzero amplitude.
    pub fn band(&self) -> usize {
        let l = self.lattice;
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| c.re != 0.0 || c.im != 0.0)
            .map(|(i, _)| linf(l.freq(i)))
            .max()
            .unwrap_or(0)
    }

    /// Applies a Fourier multiplier `c_k -> mult(k) c_k`. The multiplier must
    /// satisfy `mult(-k) = conj(mult(k))` to keep the field real.
    pub fn apply<F>(&self, mult: F) -> Self
    where
        F: Fn([i64; 3]) -> Complex64,
    {
        let l = self.lattice;
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| if c == ZERO { ZERO } else { c * mult(l.freq(i)) })
            .collect();
        SpectralScalarField { lattice: l, coeffs }
    }

    /// `d/dy_axis`.
    pub fn derivative(&self, axis: usize) -> Self {
        self.apply(|k| Complex64::new(0.0, TWO_PI * k[axis] as f64))
    }

    /// `omega . grad`, multiplier `2 pi i (k . omega)`.
    pub fn directional_derivative(&self, omega: [f64; 3]) -> Self {
        self.apply(|k| Complex64::new(0.0, TWO_PI * dot_k(k, omega)))
    }

    /// Second directional derivative, multiplier `-(2 pi k . omega)^2`.
    pub fn directional_second_derivative(&self, omega: [f64; 3]) -> Self {
        self.apply(|k| {
            let w = TWO_PI * dot_k(k, omega);
            Complex64::new(-w * w, 0.0)
        })
    }

    pub fn laplacian(&self) -> Self {
        self.apply(|k| Complex64::new(-norm_sq(wavevector(k)), 0.0))
    }

    /// Mean-zero solution of `Lap u = f`. Rejects sources whose mean is not
    /// zero (relative to the field's L2 norm).
    pub fn inverse_laplacian(&self) -> Result<Self, SpectralError> {
        let mean = self.coeffs[0].norm();
        let scale = self.sobolev_norm(0);
        if mean > 1e-12 * scale {
            return Err(SpectralError::IncompatibleSource { mean });
        }
        let mut out = self.apply(|k| {
            let q = norm_sq(wavevector(k));
            if q == 0.0 {
                ZERO
            } else {
                Complex64::new(-1.0 / q, 0.0)
            }
        });
        out.coeffs[0] = ZERO;
        Ok(out)
    }

    /// Squared norm `sum_k (1 + |2 pi k|^2)^s |c_k|^2`, summed in storage order.
    pub fn sobolev_norm_sq(&self, s: u32) -> f64 {
        let l = self.lattice;
        let mut acc = 0.0;
        for (i, c) in self.coeffs.iter().enumerate() {
            let a = c.norm_sqr();
            if a == 0.0 {
                continue;
            }
            let w = if s == 0 { 1.0 } else { (1.0 + norm_sq(wavevector(l.freq(i)))).powi(s as i32) };
            acc += w * a;
        }
        acc
    }

    /// `H^s` norm with the multiplier `(1 + |2 pi k|^2)^{s/2}`.
    pub fn sobolev_norm(&self, s: u32) -> f64 {
        self.sobolev_norm_sq(s).sqrt()
    }

    /// Real L2 inner product `int f g dy`.
    pub fn inner(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.lattice, other.lattice);
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| (a * b.conj()).re).sum()
    }

    /// Keeps only modes with every `|k_j| <= band`.
    pub fn truncated(&self, band: usize) -> Self {
        let l = self.lattice;
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| if linf(l.freq(i)) <= band { c } else { ZERO })
            .collect();
        SpectralScalarField { lattice: l, coeffs }
    }

    /// Applies the lattice's dealiasing filter.
    pub fn dealiased(&self) -> Self {
        self.truncated(self.lattice.cutoff())
    }

    /// Same function on another lattice: zero-padding when growing,
    /// truncation when shrinking.
    pub fn resample(&self, target: Lattice) -> Self {
        if target == self.lattice {
            return self.clone();
        }
        let mut out = Self::zeros(target);
        for (i, &c) in self.coeffs.iter().enumerate() {
            if c == ZERO {
                continue;
            }
            if let Some(j) = target.index_of(self.lattice.freq(i)) {
                out.coeffs[j] = c;
            }
        }
        out
    }

    pub fn scale(&self, a: f64) -> Self {
        SpectralScalarField { lattice: self.lattice, coeffs: self.coeffs.iter().map(|c| c * a).collect() }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &Self) {
        assert_eq!(self.lattice, other.lattice, "lattice mismatch");
        for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x += y * a;
        }
    }

    /// Largest coefficient magnitude.
    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Samples on the lattice's own `n^3` grid.
    pub fn to_grid(&self) -> Vec<f64> {
        Quadrature::new(self.lattice, self.lattice.n()).sample(self)
    }

    /// Samples on a finer `m^3` grid (exact trigonometric interpolation).
    pub fn to_grid_padded(&self, m: usize) -> Result<Vec<f64>, SpectralError> {
        Ok(Quadrature::try_new(self.lattice, m)?.sample(self))
    }
}

/// Exact integer-weighted `k . omega` with a compensated sum.
#[inline]
pub(crate) fn dot_k(k: [i64; 3], omega: [f64; 3]) -> f64 {
    crate::diophantine::compensated_dot(k, omega)
}

/// Forward transform of `n^3` real samples (row-major, axis 1 slowest) to
/// Fourier coefficients `c_k = n^{-3} sum_y f(y) e^{-2 pi i k.y}`.
pub fn forward_transform(samples: &[f64], n: usize) -> Result<SpectralScalarField, SpectralError> {
    let lattice = Lattice::new(n)?;
    if samples.len() != lattice.len() {
        return Err(SpectralError::Length { expected: lattice.len(), got: samples.len() });
    }
    Ok(Quadrature::new(lattice, n).project(samples, lattice, lattice.max_freq()))
}

/// Samples of a field on its own grid.
pub fn inverse_transform(f: &SpectralScalarField) -> Vec<f64> {
    f.to_grid()
}

/// Product of two fields, exact on every resolved frequency: both factors are
/// evaluated on a zero-padded `3n/2` grid, multiplied pointwise and transformed
/// back, so no aliased contribution reaches the retained modes.
pub fn dealiased_product(f: &SpectralScalarField, g: &SpectralScalarField) -> SpectralScalarField {
    assert_eq!(f.lattice(), g.lattice(), "lattice mismatch");
    let l = f.lattice();
    let quad = Quadrature::for_products(l);
    let a = quad.sample(f);
    let b = quad.sample(g);
    let prod: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    quad.project(&prod, l, l.max_freq())
}

impl Add for &SpectralScalarField {
    type Output = SpectralScalarField;
    fn add(self, rhs: &SpectralScalarField) -> SpectralScalarField {
        let mut out = self.clone();
        out.axpy(1.0, rhs);
        out
    }
}

impl Sub for &SpectralScalarField {
    type Output = SpectralScalarField;
    fn sub(self, rhs: &SpectralScalarField) -> SpectralScalarField {
        let mut out = self.clone();
        out.axpy(-1.0, rhs);
        out
    }
}

impl Neg for &SpectralScalarField {
    type Output = SpectralScalarField;
    fn neg(self) -> SpectralScalarField {
        self.scale(-1.0)
    }
}

impl Mul<f64> for &SpectralScalarField {
    type Output = SpectralScalarField;
    fn mul(self, rhs: f64) -> SpectralScalarField {
        self.scale(rhs)
    }
}

/// Three scalar fields on one lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralVectorField {
    comps: [SpectralScalarField; 3],
}

impl SpectralVectorField {
    pub fn new(comps: [SpectralScalarField; 3]) -> Result<Self, SpectralError> {
        let l = comps[0].lattice();
        if comps.iter().any(|c| c.lattice() != l) {
            return Err(SpectralError::LatticeMismatch);
        }
        Ok(SpectralVectorField { comps })
    }

    pub fn zeros(lattice: Lattice) -> Self {
        let z = SpectralScalarField::zeros(lattice);
        SpectralVectorField { comps: [z.clone(), z.clone(), z] }
    }

    /// Gradient of a scalar.
    pub fn gradient(f: &SpectralScalarField) -> Self {
        SpectralVectorField { comps: [f.derivative(0), f.derivative(1), f.derivative(2)] }
    }

    pub fn lattice(&self) -> Lattice {
        self.comps[0].lattice()
    }

    pub fn comps(&self) -> &[SpectralScalarField; 3] {
        &self.comps
    }

    pub fn comp(&self, i: usize) -> &SpectralScalarField {
        &self.comps[i]
    }

    pub(crate) fn comps_mut(&mut self) -> &mut [SpectralScalarField; 3] {
        &mut self.comps
    }

    pub fn into_comps(self) -> [SpectralScalarField; 3] {
        self.comps
    }

    pub fn map<F>(&self, f: F) -> Self
    where
        F: Fn(&SpectralScalarField) -> SpectralScalarField,
    {
        SpectralVectorField { comps: [f(&self.comps[0]), f(&self.comps[1]), f(&self.comps[2])] }
    }

    pub fn mean(&self) -> [f64; 3] {
        [self.comps[0].mean(), self.comps[1].mean(), self.comps[2].mean()]
    }

    pub fn divergence(&self) -> SpectralScalarField {
        let mut d = self.comps[0].derivative(0);
        d.axpy(1.0, &self.comps[1].derivative(1));
        d.axpy(1.0, &self.comps[2].derivative(2));
        d
    }

    /// Gradient matrix `G[i][j] = d_j v_i`.
    pub fn jacobian(&self) -> [[SpectralScalarField; 3]; 3] {
        std::array::from_fn(|i| std::array::from_fn(|j| self.comps[i].derivative(j)))
    }

    pub fn directional_derivative(&self, omega: [f64; 3]) -> Self {
        self.map(|c| c.directional_derivative(omega))
    }

    pub fn laplacian(&self) -> Self {
        self.map(|c| c.laplacian())
    }

    /// Removes the gradient part: `v - grad Lap^{-1} div v`, mode by mode.
    /// The mean of each component is untouched.
    pub fn leray_project(&self) -> Self {
        let l = self.lattice();
        let mut out = self.clone();
        for idx in 1..l.len() {
            let kv = wavevector(l.freq(idx));
            let q = norm_sq(kv);
            if q == 0.0 {
                continue;
            }
            let c = [self.comps[0].coeffs[idx], self.comps[1].coeffs[idx], self.comps[2].coeffs[idx]];
            let kdotc = c[0] * kv[0] + c[1] * kv[1] + c[2] * kv[2];
            for (j, comp) in out.comps.iter_mut().enumerate() {
                comp.coeffs[idx] = c[j] - kdotc * (kv[j] / q);
            }
        }
        out
    }

    pub fn sobolev_norm_sq(&self, s: u32) -> f64 {
        self.comps.iter().map(|c| c.sobolev_norm_sq(s)).sum()
    }

    pub fn sobolev_norm(&self, s: u32) -> f64 {
        self.sobolev_norm_sq(s).sqrt()
    }

    pub fn inner(&self, other: &Self) -> f64 {
        self.comps.iter().zip(&other.comps).map(|(a, b)| a.inner(b)).sum()
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|c| c.scale(a))
    }

    pub fn axpy(&mut self, a: f64, other: &Self) {
        for (x, y) in self.comps.iter_mut().zip(&other.comps) {
            x.axpy(a, y);
        }
    }

    pub fn truncated(&self, band: usize) -> Self {
        self.map(|c| c.truncated(band))
    }

    pub fn dealiased(&self) -> Self {
        self.map(|c| c.dealiased())
    }

    pub fn resample(&self, target: Lattice) -> Self {
        self.map(|c| c.resample(target))
    }

    pub fn band(&self) -> usize {
        self.comps.iter().map(|c| c.band()).max().unwrap_or(0)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.comps.iter().map(|c| c.max_abs_coeff()).fold(0.0, f64::max)
    }

    /// Subtracts the mean of every component.
    pub fn without_mean(&self) -> Self {
        self.map(|c| {
            let mut c = c.clone();
            c.set_mean(0.0);
            c
        })
    }
}

impl Add for &SpectralVectorField {
    type Output = SpectralVectorField;
    fn add(self, rhs: &SpectralVectorField) -> SpectralVectorField {
        let mut out = self.clone();
        out.axpy(1.0, rhs);
        out
    }
}

impl Sub for &SpectralVectorField {
    type Output = SpectralVectorField;
    fn sub(self, rhs: &SpectralVectorField) -> SpectralVectorField {
        let mut out = self.clone();
        out.axpy(-1.0, rhs);
        out
    }
}
