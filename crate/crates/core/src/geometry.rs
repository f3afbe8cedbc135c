//! Flow-map algebra: `F = I + grad eta`, its cofactor matrix `A`, the split
//! `A - I = A_L + A_N`, `det F`, the divergence residual `r_eta`, and the
//! operators `div_A`, `grad_A`, `Lap_A`.
//!
//! Everything is polynomial in `grad eta`, so it is evaluated pointwise on a
//! grid fine enough that the degree-3 determinant (and degree-5 viscous
//! fluxes used by the stepper) are projected back without aliasing.

use std::cell::OnceCell;

use crate::error::GeometryError;
use crate::quadrature::{good_size, Quadrature};
use crate::spectral::{Lattice, SpectralScalarField, SpectralVectorField};

/// `(i + 1) % 3`, `(i + 2) % 3`.
#[inline]
fn nxt(i: usize) -> (usize, usize) {
    ((i + 1) % 3, (i + 2) % 3)
}

/// Cofactor matrix of a 3x3 row-major matrix.
#[inline]
pub(crate) fn cofactor(f: &[f64; 9]) -> [f64; 9] {
    let mut c = [0.0; 9];
    for i in 0..3 {
        let (i1, i2) = nxt(i);
        for j in 0..3 {
            let (j1, j2) = nxt(j);
            c[3 * i + j] = f[3 * i1 + j1] * f[3 * i2 + j2] - f[3 * i1 + j2] * f[3 * i2 + j1];
        }
    }
    c
}

/// Directional derivative of the cofactor map at `f` along `df`.
#[inline]
pub(crate) fn cofactor_derivative(f: &[f64; 9], df: &[f64; 9]) -> [f64; 9] {
    let mut c = [0.0; 9];
    for i in 0..3 {
        let (i1, i2) = nxt(i);
        for j in 0..3 {
            let (j1, j2) = nxt(j);
            c[3 * i + j] = df[3 * i1 + j1] * f[3 * i2 + j2] + f[3 * i1 + j1] * df[3 * i2 + j2]
                - df[3 * i1 + j2] * f[3 * i2 + j1]
                - f[3 * i1 + j2] * df[3 * i2 + j1];
        }
    }
    c
}

#[inline]
pub(crate) fn determinant(f: &[f64; 9]) -> f64 {
    f[0] * (f[4] * f[8] - f[5] * f[7]) - f[1] * (f[3] * f[8] - f[5] * f[6]) + f[2] * (f[3] * f[7] - f[4] * f[6])
}

pub(crate) type Grid9 = [Vec<f64>; 9];

/// Samples of all nine first derivatives `d_j v_i` (entry `3 i + j`).
pub(crate) fn sample_gradient(quad: &Quadrature, v: &SpectralVectorField, band: usize) -> Grid9 {
    let derivs: Vec<SpectralScalarField> =
        (0..9).map(|e| v.comp(e / 3).derivative(e % 3)).collect();
    let refs: Vec<&SpectralScalarField> = derivs.iter().collect();
    let mut s = quad.sample_all(&refs, band).into_iter();
    std::array::from_fn(|_| s.next().expect("nine samples"))
}

pub(crate) fn sample_vector(quad: &Quadrature, v: &SpectralVectorField, band: usize) -> [Vec<f64>; 3] {
    let refs: Vec<&SpectralScalarField> = v.comps().iter().collect();
    let mut s = quad.sample_all(&refs, band).into_iter();
    std::array::from_fn(|_| s.next().expect("three samples"))
}

pub(crate) fn project_vector(quad: &Quadrature, samples: [Vec<f64>; 3], target: Lattice, band: usize) -> SpectralVectorField {
    let mut p = quad.project_all(&samples, target, band).into_iter();
    SpectralVectorField::new(std::array::from_fn(|_| p.next().expect("three projections"))).expect("shared lattice")
}

#[inline]
fn at9(g: &Grid9, p: usize) -> [f64; 9] {
    std::array::from_fn(|e| g[e][p])
}

/// Spectral representation of the bundle, built on first use.
#[derive(Clone, Debug)]
struct SpectralParts {
    grad_eta: [[SpectralScalarField; 3]; 3],
    cof: [[SpectralScalarField; 3]; 3],
    tilde_a_l: [[SpectralScalarField; 3]; 3],
    tilde_a_n: [[SpectralScalarField; 3]; 3],
    det_field: SpectralScalarField,
}

/// Geometry of one displacement field.
///
/// Spectral parts live on [`GeometryBundle::storage_lattice`], which is large
/// enough to hold `det F` (band `3 B` for `eta` of band `B`) exactly.
#[derive(Clone, Debug)]
pub struct GeometryBundle {
    lattice: Lattice,
    quad: Quadrature,
    band: usize,
    eta: SpectralVectorField,
    grad: Grid9,
    cof: Grid9,
    det: Vec<f64>,
    /// Coarser grid carrying `A` alone, for products of `A` with two
    /// band-limited factors (`L`, `div_A`, `grad_A`).
    op_quad: Quadrature,
    op_cof: Grid9,
    source_state_time: f64,
    spectral: OnceCell<SpectralParts>,
}

/// Geometry of `eta` (at time 0).
pub fn build_geometry(eta: &SpectralVectorField) -> GeometryBundle {
    GeometryBundle::new(eta, 0.0)
}

impl GeometryBundle {
    pub fn new(eta: &SpectralVectorField, time: f64) -> Self {
        let lattice = eta.lattice();
        let c = lattice.cutoff();
        let band = eta.band().max(c);
        let n = lattice.n();
        let m = good_size((6 * band + 1).max(2 * band + n / 2 + c + 1).max(n));
        let quad = Quadrature::new(lattice, m);
        let grad = sample_gradient(&quad, eta, band);
        let pts = quad.points();
        let mut cof: Grid9 = std::array::from_fn(|_| vec![0.0; pts]);
        let mut det = vec![0.0; pts];
        for p in 0..pts {
            let mut f = at9(&grad, p);
            f[0] += 1.0;
            f[4] += 1.0;
            f[8] += 1.0;
            let a = cofactor(&f);
            for e in 0..9 {
                cof[e][p] = a[e];
            }
            det[p] = f[0] * a[0] + f[1] * a[1] + f[2] * a[2];
        }
        let op_side = good_size((4 * band + 1).max(n));
        let (op_quad, op_cof) = if op_side < m {
            let q = Quadrature::new(lattice, op_side);
            let gr = sample_gradient(&q, eta, band);
            let mut oc: Grid9 = std::array::from_fn(|_| vec![0.0; q.points()]);
            for p in 0..q.points() {
                let mut f = at9(&gr, p);
                f[0] += 1.0;
                f[4] += 1.0;
                f[8] += 1.0;
                let a = cofactor(&f);
                for e in 0..9 {
                    oc[e][p] = a[e];
                }
            }
            (q, oc)
        } else {
            (quad, cof.clone())
        };
        GeometryBundle {
            lattice,
            quad,
            band,
            eta: eta.clone(),
            grad,
            cof,
            det,
            op_quad,
            op_cof,
            source_state_time: time,
            spectral: OnceCell::new(),
        }
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    /// Side of the evaluation grid.
    pub fn grid_side(&self) -> usize {
        self.quad.side()
    }

    pub fn source_state_time(&self) -> f64 {
        self.source_state_time
    }

    pub fn eta(&self) -> &SpectralVectorField {
        &self.eta
    }

    pub(crate) fn quad(&self) -> &Quadrature {
        &self.quad
    }

    pub(crate) fn cof_samples(&self) -> &Grid9 {
        &self.cof
    }

    pub(crate) fn grad_samples(&self) -> &Grid9 {
        &self.grad
    }

    pub(crate) fn points(&self) -> usize {
        self.quad.points()
    }

    /// Band assumed for `eta` when sizing the grid (at least the dealiasing cutoff).
    pub fn eta_band(&self) -> usize {
        self.band
    }

    pub fn storage_lattice(&self) -> Lattice {
        let (num, den) = self.lattice.dealias_fraction();
        Lattice::with_dealias(self.quad.side(), num, den).expect("even grid side")
    }

    fn parts(&self) -> &SpectralParts {
        self.spectral.get_or_init(|| {
            let store = self.storage_lattice();
            let b = self.band;
            let up = |f: &SpectralScalarField| f.resample(store);
            let grad_eta: [[SpectralScalarField; 3]; 3] =
                std::array::from_fn(|i| std::array::from_fn(|j| up(&self.eta.comp(i).derivative(j))));
            let mut trace = grad_eta[0][0].clone();
            trace.axpy(1.0, &grad_eta[1][1]);
            trace.axpy(1.0, &grad_eta[2][2]);
            let tilde_a_l: [[SpectralScalarField; 3]; 3] = std::array::from_fn(|i| {
                std::array::from_fn(|j| {
                    let mut e = grad_eta[j][i].scale(-1.0);
                    if i == j {
                        e.axpy(1.0, &trace);
                    }
                    e
                })
            });
            let pts = self.points();
            let mut quad_n: Grid9 = std::array::from_fn(|_| vec![0.0; pts]);
            for p in 0..pts {
                let c = cofactor(&at9(&self.grad, p));
                for e in 0..9 {
                    quad_n[e][p] = c[e];
                }
            }
            let mut tn = self.quad_store().project_all(&quad_n, store, 2 * b).into_iter();
            let tilde_a_n: [[SpectralScalarField; 3]; 3] =
                std::array::from_fn(|_| std::array::from_fn(|_| tn.next().expect("nine")));
            let cof = std::array::from_fn(|i| {
                std::array::from_fn(|j| {
                    let mut e = &tilde_a_l[i][j] + &tilde_a_n[i][j];
                    if i == j {
                        let m0 = e.mean();
                        e.set_mean(m0 + 1.0);
                    }
                    e
                })
            });
            let det_field = self.quad_store().project(&self.det, store, 3 * b);
            SpectralParts { grad_eta, cof, tilde_a_l, tilde_a_n, det_field }
        })
    }

    fn quad_store(&self) -> Quadrature {
        Quadrature::new(self.storage_lattice(), self.quad.side())
    }

    /// `grad eta`, entry `[i][j] = d_j eta_i`.
    pub fn grad_eta(&self) -> &[[SpectralScalarField; 3]; 3] {
        &self.parts().grad_eta
    }

    /// Cofactor matrix of `I + grad eta`.
    pub fn cof(&self) -> &[[SpectralScalarField; 3]; 3] {
        &self.parts().cof
    }

    /// Linear part `delta_ij tr(grad eta) - d_i eta_j`.
    pub fn tilde_a_l(&self) -> &[[SpectralScalarField; 3]; 3] {
        &self.parts().tilde_a_l
    }

    /// Quadratic part, the cofactor matrix of `grad eta`.
    pub fn tilde_a_n(&self) -> &[[SpectralScalarField; 3]; 3] {
        &self.parts().tilde_a_n
    }

    /// `det(I + grad eta)`.
    pub fn det_field(&self) -> &SpectralScalarField {
        &self.parts().det_field
    }

    /// `r_eta = div eta - (det F - 1)`, on the storage lattice.
    pub fn div_residual(&self) -> SpectralScalarField {
        let store = self.storage_lattice();
        let pts = self.points();
        let mut r = vec![0.0; pts];
        for (p, rp) in r.iter_mut().enumerate() {
            let g = at9(&self.grad, p);
            let c = cofactor(&g);
            *rp = -(c[0] + c[4] + c[8]) - determinant(&g);
        }
        self.quad_store().project(&r, store, 3 * self.band)
    }

    /// `r_eta` truncated to `band` on the state lattice.
    pub(crate) fn div_residual_on_lattice(&self, band: usize) -> SpectralScalarField {
        let pts = self.points();
        let mut r = vec![0.0; pts];
        for (p, rp) in r.iter_mut().enumerate() {
            let g = at9(&self.grad, p);
            let c = cofactor(&g);
            *rp = -(c[0] + c[4] + c[8]) - determinant(&g);
        }
        self.quad.project(&r, self.lattice, band)
    }

    /// `max |det F - 1|` over the grid.
    pub fn det_error_sup(&self) -> f64 {
        self.det.iter().map(|d| (d - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn det_min(&self) -> f64 {
        self.det.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest entry of `|grad eta|` over the grid.
    pub fn sup_grad_eta(&self) -> f64 {
        self.grad.iter().flat_map(|g| g.iter()).map(|x| x.abs()).fold(0.0, f64::max)
    }

    /// Lower bound for the smallest singular value of `F`,
    /// `det F / (|F|_F^2 / 2)`, minimized over the grid.
    pub fn min_singular_lower(&self) -> f64 {
        let mut best = f64::INFINITY;
        for p in 0..self.points() {
            let mut f = at9(&self.grad, p);
            f[0] += 1.0;
            f[4] += 1.0;
            f[8] += 1.0;
            let fro2: f64 = f.iter().map(|x| x * x).sum();
            best = best.min(self.det[p] / (0.5 * fro2));
        }
        best
    }

    /// `sqrt(sum_i ||d_k A_ik||_0^2)`.
    pub fn piola_residual(&self) -> f64 {
        let cof = self.cof();
        let mut acc = 0.0;
        for row in cof {
            let mut d = row[0].derivative(0);
            d.axpy(1.0, &row[1].derivative(1));
            d.axpy(1.0, &row[2].derivative(2));
            acc += d.sobolev_norm_sq(0);
        }
        acc.sqrt()
    }

    /// `sum_k A_ik x_k` (or `sum_i A_ik x_i` when `transpose`) at every point of the main grid.
    pub(crate) fn apply_pointwise(&self, x: &[Vec<f64>; 3], transpose: bool) -> [Vec<f64>; 3] {
        apply_cof(&self.cof, x, transpose)
    }

    /// Grid and cofactor samples for `A` times a factor of band `x_band`
    /// projected to band `band`: the coarse grid when that is alias-free.
    fn grid_for(&self, x_band: usize, band: usize) -> (&Quadrature, &Grid9) {
        if 2 * self.band + x_band + band < self.op_quad.side() {
            (&self.op_quad, &self.op_cof)
        } else {
            (&self.quad, &self.cof)
        }
    }

    /// `P div(A^T v)`, truncated to band `band`.
    pub(crate) fn div_a_conservative(&self, v: &SpectralVectorField, v_band: usize, band: usize) -> SpectralScalarField {
        let (quad, cof) = self.grid_for(v_band, band);
        let s = sample_vector(quad, v, v_band);
        let flux = apply_cof(cof, &s, true);
        project_vector(quad, flux, self.lattice, band).divergence()
    }

    /// `P (A grad f)`, truncated to band `band`.
    pub(crate) fn grad_a_band(&self, f: &SpectralScalarField, f_band: usize, band: usize) -> SpectralVectorField {
        let (quad, cof) = self.grid_for(f_band, band);
        let g = SpectralVectorField::gradient(f);
        let s = sample_vector(quad, &g, f_band);
        let ag = apply_cof(cof, &s, false);
        project_vector(quad, ag, self.lattice, band)
    }
}

fn apply_cof(cof: &Grid9, x: &[Vec<f64>; 3], transpose: bool) -> [Vec<f64>; 3] {
    let pts = x[0].len();
    let mut out: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; pts]);
    for p in 0..pts {
        let v = [x[0][p], x[1][p], x[2][p]];
        for i in 0..3 {
            let mut s = 0.0;
            for k in 0..3 {
                let e = if transpose { 3 * k + i } else { 3 * i + k };
                s += cof[e][p] * v[k];
            }
            out[i][p] = s;
        }
    }
    out
}

/// `r_eta = r_2 + r_3 = -tr cof(grad eta) - det(grad eta)`, the residual in
/// `det(I + grad eta) - 1 = div eta - r_eta`. Returned on the geometry's
/// storage lattice, where it is represented exactly.
pub fn div_residual(eta: &SpectralVectorField) -> SpectralScalarField {
    build_geometry(eta).div_residual()
}

/// `A_lk d_k v_l`, truncated to the dealiasing band of `v`'s lattice.
pub fn div_a(v: &SpectralVectorField, g: &GeometryBundle) -> SpectralScalarField {
    assert_eq!(v.lattice(), g.lattice(), "lattice mismatch");
    let l = g.lattice();
    let grads = sample_gradient(&g.quad, v, v.band());
    let pts = g.points();
    let mut out = vec![0.0; pts];
    for (p, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for lidx in 0..3 {
            for k in 0..3 {
                s += g.cof[3 * lidx + k][p] * grads[3 * lidx + k][p];
            }
        }
        *o = s;
    }
    g.quad.project(&out, l, l.cutoff())
}

/// `P div(A^T v)` truncated to `band`: the constraint residual in the
/// form the stepper restores.
pub fn div_a_projected(v: &SpectralVectorField, g: &GeometryBundle, band: usize) -> SpectralScalarField {
    assert_eq!(v.lattice(), g.lattice(), "lattice mismatch");
    let mut r = g.div_a_conservative(v, v.band().max(g.lattice().cutoff()), band);
    r.set_mean(0.0);
    r
}

/// `(A_ik d_k f)_i`, truncated to the dealiasing band.
pub fn grad_a(f: &SpectralScalarField, g: &GeometryBundle) -> SpectralVectorField {
    assert_eq!(f.lattice(), g.lattice(), "lattice mismatch");
    let c = g.lattice().cutoff();
    g.grad_a_band(f, f.band(), c)
}

/// `div_A grad_A f`.
pub fn laplacian_a(f: &SpectralScalarField, g: &GeometryBundle) -> SpectralScalarField {
    div_a(&grad_a(f, g), g)
}

/// Component-wise [`laplacian_a`].
pub fn laplacian_a_vector(v: &SpectralVectorField, g: &GeometryBundle) -> SpectralVectorField {
    v.map(|c| laplacian_a(c, g))
}

/// `B = m (d_omega eta + omega)`: mean `m omega` plus the fluctuating part.
pub fn recover_magnetic(eta: &SpectralVectorField, m: f64, omega: [f64; 3]) -> Result<SpectralVectorField, GeometryError> {
    if !m.is_finite() || m < 0.0 {
        return Err(GeometryError::InvalidIntensity(m));
    }
    let norm = (omega[0] * omega[0] + omega[1] * omega[1] + omega[2] * omega[2]).sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-12 {
        return Err(GeometryError::InvalidDirection);
    }
    let mut b = eta.directional_derivative(omega).scale(m);
    for (i, c) in b.comps_mut().iter_mut().enumerate() {
        let mean = c.mean();
        c.set_mean(mean + m * omega[i]);
    }
    Ok(b)
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random field with decaying spectrum, scaled so `max |grad v|` is `amp`.
    pub(crate) fn random_vector(l: Lattice, band: usize, amp: f64, seed: u64) -> SpectralVectorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = band as i64;
        let comps = std::array::from_fn(|_| {
            let mut f = SpectralScalarField::zeros(l);
            for k1 in -b..=b {
                for k2 in -b..=b {
                    for k3 in 0..=b {
                        if [k1, k2, k3] == [0, 0, 0] {
                            continue;
                        }
                        let decay = 1.0 / (1.0 + (k1 * k1 + k2 * k2 + k3 * k3) as f64).powi(2);
                        f.add_mode([k1, k2, k3], Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * decay);
                    }
                }
            }
            f
        });
        let v = SpectralVectorField::new(comps).unwrap();
        let g = build_geometry(&v);
        let s = g.sup_grad_eta();
        if s == 0.0 {
            v
        } else {
            v.scale(amp / s)
        }
    }

}
