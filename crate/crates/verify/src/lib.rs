//! Helpers for the acceptance runs: seeded random fields, trajectory CSV
//! parsing and the per-criterion verdict lines.

use std::fmt;

use lagmhd::geometry::build_geometry;
use lagmhd::{Lattice, SpectralScalarField, SpectralVectorField};
use num_complex::Complex64;
use rand::Rng;

/// Outcome of one acceptance criterion.
#[derive(Clone, Debug)]
pub struct Verdict {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "criterion {} [{tag}] {}: {}", self.id, self.name, self.detail)
    }
}

/// Real mean-zero field with independent Gaussian-free uniform coefficients
/// on `|k| <= radius` (Euclidean) or `|k_j| <= radius` when `cube`.
pub fn random_scalar<R: Rng>(l: Lattice, radius: usize, cube: bool, rng: &mut R) -> SpectralScalarField {
    let r = radius as i64;
    let mut f = SpectralScalarField::zeros(l);
    for k1 in -r..=r {
        for k2 in -r..=r {
            for k3 in -r..=r {
                let k = [k1, k2, k3];
                // one representative of each +-k pair
                if k <= [0, 0, 0] {
                    continue;
                }
                if !cube && k1 * k1 + k2 * k2 + k3 * k3 > r * r {
                    continue;
                }
                let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                f.add_mode(k, c);
            }
        }
    }
    f
}

pub fn random_vector<R: Rng>(l: Lattice, radius: usize, rng: &mut R) -> SpectralVectorField {
    SpectralVectorField::new(std::array::from_fn(|_| random_scalar(l, radius, false, rng))).expect("shared lattice")
}

/// `v` rescaled so that the largest entry of `|grad v|` equals `amp`.
pub fn with_gradient_amplitude(v: &SpectralVectorField, amp: f64) -> SpectralVectorField {
    let sup = build_geometry(v).sup_grad_eta();
    v.scale(amp / sup)
}

/// Numeric CSV with a header row.
#[derive(Clone, Debug)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        let header: Vec<String> = lines.next().ok_or("empty csv")?.split(',').map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row = line
                .split(',')
                .map(|s| s.parse::<f64>().map_err(|e| format!("row {}: {e}", i + 1)))
                .collect::<Result<Vec<_>, _>>()?;
            if row.len() != header.len() {
                return Err(format!("row {} has {} columns", i + 1, row.len()));
            }
            rows.push(row);
        }
        Ok(Table { header, rows })
    }

    pub fn column(&self, name: &str) -> Vec<f64> {
        let j = self.header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
        self.rows.iter().map(|r| r[j]).collect()
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).map(|(a, b)| (a.ln(), b.ln())).collect();
    lagmhd::diagnostics::least_squares(&pts).0
}
