//! Point evaluation of spectral fields on padded grids and projection back.
//!
//! Real fields are transformed two at a time as `f + i g`. Projection keeps
//! only `|k_j| <= band`, so a polynomial of band `P` is recovered exactly on
//! every retained mode as long as `P + band < m`.

use num_complex::Complex64;

use crate::error::SpectralError;
use crate::fft;
use crate::spectral::{Lattice, SpectralScalarField};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Smallest even size `>= at_least` whose only prime factors are 2, 3, 5.
pub fn good_size(at_least: usize) -> usize {
    let mut m = at_least.max(2);
    loop {
        if m % 2 == 0 {
            let mut r = m;
            for p in [2, 3, 5] {
                while r % p == 0 {
                    r /= p;
                }
            }
            if r == 1 {
                return m;
            }
        }
        m += 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Quadrature {
    lattice: Lattice,
    m: usize,
}

impl Quadrature {
    /// Panics if `m < n`; use [`Quadrature::try_new`] for checked construction.
    pub fn new(lattice: Lattice, m: usize) -> Self {
        Self::try_new(lattice, m).expect("quadrature grid too coarse")
    }

    pub fn try_new(lattice: Lattice, m: usize) -> Result<Self, SpectralError> {
        if m < lattice.n() || m % 2 != 0 {
            return Err(SpectralError::GridTooCoarse { n: lattice.n(), m });
        }
        Ok(Quadrature { lattice, m })
    }

    /// Grid of side `3n/2` (rounded up to even): exact for quadratic products
    /// of lattice fields projected back onto the lattice.
    pub fn for_products(lattice: Lattice) -> Self {
        let m = (3 * lattice.n()).div_ceil(2);
        Self::new(lattice, m + m % 2)
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn side(&self) -> usize {
        self.m
    }

    pub fn points(&self) -> usize {
        self.m * self.m * self.m
    }

    fn scatter(&self, buf: &mut [Complex64], f: &SpectralScalarField, band: usize, scale: Complex64) {
        let n = self.lattice.n();
        let m = self.m;
        let coeffs = f.coeffs();
        let b = band as i64;
        for k1 in -b..=b {
            let a_n = k1.rem_euclid(n as i64) as usize;
            let a_m = k1.rem_euclid(m as i64) as usize;
            for k2 in -b..=b {
                let b_n = k2.rem_euclid(n as i64) as usize;
                let b_m = k2.rem_euclid(m as i64) as usize;
                let row_n = (a_n * n + b_n) * n;
                let row_m = (a_m * m + b_m) * m;
                for k3 in -b..=b {
                    let c = coeffs[row_n + k3.rem_euclid(n as i64) as usize];
                    if c != ZERO {
                        buf[row_m + k3.rem_euclid(m as i64) as usize] += c * scale;
                    }
                }
            }
        }
    }

    fn band_of(&self, f: &SpectralScalarField) -> usize {
        assert_eq!(f.lattice(), self.lattice, "lattice mismatch");
        f.band()
    }

    /// Values of `f` at the grid points `y = (a, b, c) / m`.
    pub fn sample(&self, f: &SpectralScalarField) -> Vec<f64> {
        let band = self.band_of(f);
        self.sample_band(f, band)
    }

    /// As [`Quadrature::sample`], trusting that `f` vanishes beyond `band`.
    pub fn sample_band(&self, f: &SpectralScalarField, band: usize) -> Vec<f64> {
        let mut buf = vec![ZERO; self.points()];
        self.scatter(&mut buf, f, band, Complex64::new(1.0, 0.0));
        fft::plan(self.m).inverse(&mut buf, band);
        buf.into_iter().map(|z| z.re).collect()
    }

    /// Two fields with one complex transform.
    pub fn sample_pair(&self, f: &SpectralScalarField, g: &SpectralScalarField) -> (Vec<f64>, Vec<f64>) {
        let band = self.band_of(f).max(self.band_of(g));
        self.sample_pair_band(f, g, band)
    }

    pub fn sample_pair_band(&self, f: &SpectralScalarField, g: &SpectralScalarField, band: usize) -> (Vec<f64>, Vec<f64>) {
        let mut buf = vec![ZERO; self.points()];
        self.scatter(&mut buf, f, band, Complex64::new(1.0, 0.0));
        self.scatter(&mut buf, g, band, Complex64::new(0.0, 1.0));
        fft::plan(self.m).inverse(&mut buf, band);
        buf.into_iter().map(|z| (z.re, z.im)).unzip()
    }

    /// Samples of every field, pairing transforms.
    pub fn sample_all(&self, fields: &[&SpectralScalarField], band: usize) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(fields.len());
        for chunk in fields.chunks(2) {
            match chunk {
                [f, g] => {
                    let (a, b) = self.sample_pair_band(f, g, band);
                    out.push(a);
                    out.push(b);
                }
                [f] => out.push(self.sample_band(f, band)),
                _ => unreachable!(),
            }
        }
        out
    }

    fn check_band(&self, target: Lattice, band: usize) {
        assert!(band <= target.max_freq(), "band {band} exceeds target lattice");
        assert!(2 * band < self.m, "band {band} not resolved on grid {}", self.m);
    }

    fn gather(&self, buf: &[Complex64], target: Lattice, band: usize, pair: bool) -> (SpectralScalarField, Option<SpectralScalarField>) {
        let n = target.n();
        let m = self.m;
        let norm = 1.0 / self.points() as f64;
        let mut f = SpectralScalarField::zeros(target);
        let mut g = if pair { Some(SpectralScalarField::zeros(target)) } else { None };
        let b = band as i64;
        let wrap = |k: i64, s: usize| k.rem_euclid(s as i64) as usize;
        for k1 in -b..=b {
            for k2 in -b..=b {
                for k3 in -b..=b {
                    let im = (wrap(k1, m) * m + wrap(k2, m)) * m + wrap(k3, m);
                    let jm = (wrap(-k1, m) * m + wrap(-k2, m)) * m + wrap(-k3, m);
                    let it = (wrap(k1, n) * n + wrap(k2, n)) * n + wrap(k3, n);
                    let h = buf[im];
                    let hc = buf[jm].conj();
                    let s = (h + hc) * 0.5;
                    f.coeffs_mut()[it] = s * norm;
                    if let Some(g) = g.as_mut() {
                        let d = h - hc;
                        g.coeffs_mut()[it] = Complex64::new(d.im * 0.5 * norm, -d.re * 0.5 * norm);
                    }
                }
            }
        }
        (f, g)
    }

    /// Fourier coefficients (`|k_j| <= band`) of grid samples, placed on `target`.
    pub fn project(&self, samples: &[f64], target: Lattice, band: usize) -> SpectralScalarField {
        assert_eq!(samples.len(), self.points());
        self.check_band(target, band);
        let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        fft::plan(self.m).forward(&mut buf, band);
        self.gather(&buf, target, band, false).0
    }

    pub fn project_pair(&self, a: &[f64], b: &[f64], target: Lattice, band: usize) -> (SpectralScalarField, SpectralScalarField) {
        assert_eq!(a.len(), self.points());
        assert_eq!(b.len(), self.points());
        self.check_band(target, band);
        let mut buf: Vec<Complex64> = a.iter().zip(b).map(|(&x, &y)| Complex64::new(x, y)).collect();
        fft::plan(self.m).forward(&mut buf, band);
        let (f, g) = self.gather(&buf, target, band, true);
        (f, g.expect("paired gather"))
    }

    pub fn project_all(&self, samples: &[Vec<f64>], target: Lattice, band: usize) -> Vec<SpectralScalarField> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(2) {
            match chunk {
                [a, b] => {
                    let (f, g) = self.project_pair(a, b, target, band);
                    out.push(f);
                    out.push(g);
                }
                [a] => out.push(self.project(a, target, band)),
                _ => unreachable!(),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::TWO_PI;

    #[test]
    fn good_sizes() {
        assert_eq!(good_size(31), 32);
        assert_eq!(good_size(49), 50);
        assert_eq!(good_size(13), 16);
        assert_eq!(good_size(1), 2);
    }

    #[test]
    fn sample_matches_pointwise_evaluation() {
        let l = Lattice::new(8).unwrap();
        let mut f = SpectralScalarField::zeros(l);
        f.add_mode([1, -2, 3], Complex64::new(0.3, -0.7));
        f.add_mode([0, 0, 0], Complex64::new(1.5, 0.0));
        let q = Quadrature::new(l, 12);
        let s = q.sample(&f);
        for (idx, &v) in s.iter().enumerate() {
            let y = [(idx / 144) as f64 / 12.0, ((idx / 12) % 12) as f64 / 12.0, (idx % 12) as f64 / 12.0];
            let ph = TWO_PI * (y[0] - 2.0 * y[1] + 3.0 * y[2]);
            let exact = 1.5 + 2.0 * (Complex64::new(0.3, -0.7) * Complex64::from_polar(1.0, ph)).re;
            assert!((v - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn paired_path_matches_single_path() {
        let l = Lattice::new(8).unwrap();
        let mut f = SpectralScalarField::zeros(l);
        let mut g = SpectralScalarField::zeros(l);
        f.add_mode([1, 2, 0], Complex64::new(0.2, 0.1));
        g.add_mode([3, -1, 1], Complex64::new(-0.4, 0.5));
        g.add_mode([0, 0, 0], Complex64::new(2.0, 0.0));
        let q = Quadrature::new(l, 16);
        let (a, b) = q.sample_pair(&f, &g);
        let (sa, sb) = (q.sample(&f), q.sample(&g));
        for i in 0..a.len() {
            assert!((a[i] - sa[i]).abs() < 1e-14 && (b[i] - sb[i]).abs() < 1e-14);
        }
        let (pf, pg) = q.project_pair(&a, &b, l, 3);
        assert!((&pf - &f).max_abs_coeff() < 1e-15);
        assert!((&pg - &g).max_abs_coeff() < 1e-15);
        assert_eq!(pf.hermitian_defect(), 0.0);
        assert_eq!(pg.hermitian_defect(), 0.0);
    }
}
