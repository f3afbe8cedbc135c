//! Cubic 3-D FFT with band pruning.
//!
//! Layout is row-major `(a * m + b) * m + c` with axis 1 slowest. Pruned
//! transforms skip 1-D lines that are known to be zero on input
//! (inverse) or whose outputs are discarded (forward).

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct Fft3 {
    m: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

thread_local! {
    static PLANS: RefCell<HashMap<usize, Rc<Fft3>>> = RefCell::new(HashMap::new());
}

/// Shared plan for grids of side `m`.
pub(crate) fn plan(m: usize) -> Rc<Fft3> {
    PLANS.with(|plans| {
        plans
            .borrow_mut()
            .entry(m)
            .or_insert_with(|| {
                let mut planner = FftPlanner::<f64>::new();
                Rc::new(Fft3 {
                    m,
                    fwd: planner.plan_fft_forward(m),
                    inv: planner.plan_fft_inverse(m),
                })
            })
            .clone()
    })
}

/// Indices `0..=band` and `m-band..m`, i.e. the wrapped frequencies `|k| <= band`.
fn band_indices(m: usize, band: usize) -> impl Iterator<Item = usize> {
    let band = band.min(m / 2);
    let upper = (m - band).max(band + 1);
    (0..=band).chain(upper..m)
}

impl Fft3 {
    fn scratch(&self, fft: &Arc<dyn Fft<f64>>) -> Vec<Complex64> {
        vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()]
    }

    /// Unnormalized inverse transform (sign +) of a spectrum whose nonzero
    /// entries all satisfy `|k_j| <= band`.
    pub(crate) fn inverse(&self, buf: &mut [Complex64], band: usize) {
        self.run(buf, band, &self.inv.clone(), true);
    }

    /// Unnormalized forward transform (sign -); only outputs with
    /// `|k_j| <= band` are valid afterwards.
    pub(crate) fn forward(&self, buf: &mut [Complex64], band: usize) {
        self.run(buf, band, &self.fwd.clone(), false);
    }

    fn run(&self, buf: &mut [Complex64], band: usize, fft: &Arc<dyn Fft<f64>>, inverse: bool) {
        let m = self.m;
        assert_eq!(buf.len(), m * m * m);
        let mut scratch = self.scratch(fft);
        let mut tmp = vec![Complex64::new(0.0, 0.0); m * m];
        let active: Vec<usize> = band_indices(m, band).collect();

        let axis3 = |buf: &mut [Complex64], scratch: &mut [Complex64]| {
            for &a in &active {
                for &b in &active {
                    let start = (a * m + b) * m;
                    fft.process_with_scratch(&mut buf[start..start + m], scratch);
                }
            }
        };
        let axis2 = |buf: &mut [Complex64], tmp: &mut [Complex64], scratch: &mut [Complex64]| {
            for &a in &active {
                let plane = &mut buf[a * m * m..(a + 1) * m * m];
                for b in 0..m {
                    for c in 0..m {
                        tmp[c * m + b] = plane[b * m + c];
                    }
                }
                fft.process_with_scratch(tmp, scratch);
                for b in 0..m {
                    for c in 0..m {
                        plane[b * m + c] = tmp[c * m + b];
                    }
                }
            }
        };
        let axis1 = |buf: &mut [Complex64], tmp: &mut [Complex64], scratch: &mut [Complex64]| {
            for b in 0..m {
                for a in 0..m {
                    let row = (a * m + b) * m;
                    for c in 0..m {
                        tmp[c * m + a] = buf[row + c];
                    }
                }
                fft.process_with_scratch(tmp, scratch);
                for a in 0..m {
                    let row = (a * m + b) * m;
                    for c in 0..m {
                        buf[row + c] = tmp[c * m + a];
                    }
                }
            }
        };

        if inverse {
            axis3(buf, &mut scratch);
            axis2(buf, &mut tmp, &mut scratch);
            axis1(buf, &mut tmp, &mut scratch);
        } else {
            axis1(buf, &mut tmp, &mut scratch);
            axis2(buf, &mut tmp, &mut scratch);
            axis3(buf, &mut scratch);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_dft(data: &[Complex64], m: usize, sign: f64) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
        let w = sign * 2.0 * std::f64::consts::PI / m as f64;
        for k1 in 0..m {
            for k2 in 0..m {
                for k3 in 0..m {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for a in 0..m {
                        for b in 0..m {
                            for c in 0..m {
                                let phase = w * ((k1 * a + k2 * b + k3 * c) % m) as f64;
                                acc += data[(a * m + b) * m + c] * Complex64::from_polar(1.0, phase);
                            }
                        }
                    }
                    out[(k1 * m + k2) * m + k3] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn full_transform_matches_direct_sum() {
        let m = 6;
        let data: Vec<Complex64> = (0..m * m * m)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let p = plan(m);
        let mut fwd = data.clone();
        p.forward(&mut fwd, m / 2);
        let oracle = direct_dft(&data, m, -1.0);
        for (x, y) in fwd.iter().zip(&oracle) {
            assert!((x - y).norm() < 1e-11);
        }
        let mut inv = data.clone();
        p.inverse(&mut inv, m / 2);
        let oracle = direct_dft(&data, m, 1.0);
        for (x, y) in inv.iter().zip(&oracle) {
            assert!((x - y).norm() < 1e-11);
        }
    }

    #[test]
    fn pruned_inverse_agrees_with_full() {
        let m = 8;
        let band = 2;
        let mut data = vec![Complex64::new(0.0, 0.0); m * m * m];
        let idx: Vec<usize> = band_indices(m, band).collect();
        for &a in &idx {
            for &b in &idx {
                for &c in &idx {
                    data[(a * m + b) * m + c] = Complex64::new((a + 2 * b) as f64, c as f64 - 1.0);
                }
            }
        }
        let p = plan(m);
        let mut pruned = data.clone();
        p.inverse(&mut pruned, band);
        let mut full = data;
        p.inverse(&mut full, m / 2);
        for (x, y) in pruned.iter().zip(&full) {
            assert!((x - y).norm() < 1e-10);
        }
    }
}
