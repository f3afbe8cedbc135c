//! Pressure as the fixed point of a constant-coefficient Poisson problem.
//!
//! Differentiating the Galerkin constraint `P div(A^T u) = 0` in time gives
//! `L q = S` with `L q = P div(A^T P(A grad q))` and
//! `S = P div(A_t^T u) + P div(A^T R)`, where `R = m^2 d_omega^2 eta + nu P Lap_A u`
//! is the non-pressure acceleration. The solver iterates
//! `Lap q_{j+1} = S - (L - Lap) q_j`, so `f(q) = S - (L - Lap) q` is the source
//! at the current iterate. At `eta = 0` this reduces to `Lap q = -d_j u_i d_i u_j`.

use serde::Serialize;

use crate::error::PressureError;
use crate::evolution::FlowState;
use crate::geometry::{cofactor_derivative, sample_gradient, sample_vector, GeometryBundle};
use crate::spectral::{SpectralScalarField, SpectralVectorField};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_GUARD: f64 = 0.1;

#[derive(Clone, Debug, Serialize)]
pub struct PressureSolveReport {
    #[serde(skip)]
    pub q: SpectralScalarField,
    pub iterations: usize,
    pub residual: f64,
    pub contraction_estimate: f64,
    /// `max |grad eta|` over the grid, compared with `guard_threshold`.
    pub guard_value: f64,
    pub guard_threshold: f64,
    pub guard_exceeded: bool,
}

/// Everything the stepper needs from one evaluation of the forcing.
pub(crate) struct Forcing {
    /// `S`, mean zero.
    pub source: SpectralScalarField,
    /// `nu P div((A^T A - I) grad u_j)`.
    pub viscous: SpectralVectorField,
    /// `||grad_A u||_0^2`.
    pub grad_a_u_sq: f64,
}

pub(crate) fn assemble(state: &FlowState, g: &GeometryBundle, m: f64, nu: f64, omega: [f64; 3]) -> Forcing {
    let l = g.lattice();
    let c = l.cutoff();
    let quad = g.quad();
    let u = &state.u;
    let bu = u.band();
    let gu = sample_gradient(quad, u, bu);
    let us = sample_vector(quad, u, bu);
    let cof = g.cof_samples();
    let grad = g.grad_samples();
    let pts = g.points();

    let mut flux: [Vec<f64>; 9] = std::array::from_fn(|_| vec![0.0; pts]);
    let mut x: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; pts]);
    let mut grad_a_u_sq = 0.0;
    for p in 0..pts {
        let a: [f64; 9] = std::array::from_fn(|e| cof[e][p]);
        let du: [f64; 9] = std::array::from_fn(|e| gu[e][p]);
        let mut f: [f64; 9] = std::array::from_fn(|e| grad[e][p]);
        f[0] += 1.0;
        f[4] += 1.0;
        f[8] += 1.0;
        // B = A^T A - I
        let mut b = [0.0; 9];
        for k in 0..3 {
            for l2 in 0..3 {
                let mut s = 0.0;
                for i in 0..3 {
                    s += a[3 * i + k] * a[3 * i + l2];
                }
                b[3 * k + l2] = s - if k == l2 { 1.0 } else { 0.0 };
            }
        }
        for j in 0..3 {
            for k in 0..3 {
                let mut s = 0.0;
                for l2 in 0..3 {
                    s += b[3 * k + l2] * du[3 * j + l2];
                }
                flux[3 * j + k][p] = s;
            }
            for i in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += a[3 * i + k] * du[3 * j + k];
                }
                grad_a_u_sq += s * s;
            }
        }
        let at = cofactor_derivative(&f, &du);
        for k in 0..3 {
            x[k][p] = at[k] * us[0][p] + at[3 + k] * us[1][p] + at[6 + k] * us[2][p];
        }
    }
    grad_a_u_sq /= pts as f64;

    let w = quad.project_all(&flux, l, c);
    let viscous = SpectralVectorField::new(std::array::from_fn(|j| {
        let mut d = w[3 * j].derivative(0);
        d.axpy(1.0, &w[3 * j + 1].derivative(1));
        d.axpy(1.0, &w[3 * j + 2].derivative(2));
        d.scale(nu)
    }))
    .expect("shared lattice");

    let mut r = state.eta.map(|e| e.directional_second_derivative(omega)).scale(m * m);
    r.axpy(nu, &u.laplacian());
    r.axpy(1.0, &viscous);
    let rs = sample_vector(quad, &r, r.band());
    let ar = g.apply_pointwise(&rs, true);
    for k in 0..3 {
        for (xp, ap) in x[k].iter_mut().zip(&ar[k]) {
            *xp += ap;
        }
    }
    let xs = quad.project_all(&x, l, c);
    let mut source = xs[0].derivative(0);
    source.axpy(1.0, &xs[1].derivative(1));
    source.axpy(1.0, &xs[2].derivative(2));
    source.set_mean(0.0);
    Forcing { source, viscous, grad_a_u_sq }
}

/// `(L q, P(A grad q))` on the dealiasing band.
pub(crate) fn apply_l(g: &GeometryBundle, q: &SpectralScalarField) -> (SpectralScalarField, SpectralVectorField) {
    let c = g.lattice().cutoff();
    let agq = g.grad_a_band(q, c, c);
    let mut lq = g.div_a_conservative(&agq, c, c);
    lq.set_mean(0.0);
    (lq, agq)
}

pub(crate) struct PicardOutcome {
    pub q: SpectralScalarField,
    pub iterations: usize,
    pub residual: f64,
    pub contraction: f64,
    /// `P(A grad q)` at the returned iterate.
    pub a_grad_q: SpectralVectorField,
}

fn mean_zero_inverse_laplacian(f: &SpectralScalarField) -> SpectralScalarField {
    let mut f = f.clone();
    f.set_mean(0.0);
    f.inverse_laplacian().expect("mean removed")
}

/// Solves `L q = source` by `Lap q_{j+1} = source - (L - Lap) q_j`.
pub(crate) fn picard(
    g: &GeometryBundle,
    source: &SpectralScalarField,
    seed: Option<&SpectralScalarField>,
    tol: f64,
    max_iter: usize,
) -> Result<PicardOutcome, PressureError> {
    let l = g.lattice();
    let mut q = match seed {
        Some(s) => {
            let mut s = s.truncated(l.cutoff());
            s.set_mean(0.0);
            s
        }
        None => SpectralScalarField::zeros(l),
    };
    let mut prev = f64::NAN;
    let mut contraction = 0.0;
    let mut growing = 0;
    let max_iter = max_iter.max(1);
    for j in 0..max_iter {
        let (lq, agq) = if q.max_abs_coeff() == 0.0 {
            (SpectralScalarField::zeros(l), SpectralVectorField::zeros(l))
        } else {
            apply_l(g, &q)
        };
        let lap = q.laplacian();
        // f(q) = S - (L q - Lap q)
        let mut f = source.clone();
        f.axpy(-1.0, &lq);
        f.axpy(1.0, &lap);
        let denom = f.sobolev_norm(0).max(f64::EPSILON);
        let residual = (&lq - source).sobolev_norm(0) / denom;
        if j > 0 {
            contraction = residual / prev;
            if contraction >= 1.0 {
                growing += 1;
                if growing >= 3 {
                    return Err(PressureError::NoContraction { iterations: j + 1, ratio: contraction });
                }
            } else {
                growing = 0;
            }
        }
        if residual <= tol {
            return Ok(PicardOutcome { q, iterations: j + 1, residual, contraction, a_grad_q: agq });
        }
        if j + 1 == max_iter {
            return Err(PressureError::MaxIterations { iterations: max_iter, residual });
        }
        prev = residual;
        q = mean_zero_inverse_laplacian(&f);
    }
    unreachable!("loop returns")
}

/// `f(q_guess) = S - (L - Lap) q_guess`.
pub fn pressure_source(
    state: &FlowState,
    g: &GeometryBundle,
    q_guess: &SpectralScalarField,
    m: f64,
    nu: f64,
    omega: [f64; 3],
) -> SpectralScalarField {
    let forcing = assemble(state, g, m, nu, omega);
    let mut f = forcing.source;
    if q_guess.max_abs_coeff() != 0.0 {
        let (lq, _) = apply_l(g, q_guess);
        f.axpy(-1.0, &lq);
        f.axpy(1.0, &q_guess.laplacian());
    }
    f.set_mean(0.0);
    f
}

/// Picard iteration from `q = 0`.
pub fn solve_pressure(
    state: &FlowState,
    g: &GeometryBundle,
    m: f64,
    nu: f64,
    omega: [f64; 3],
    tol: f64,
    max_iter: usize,
) -> Result<PressureSolveReport, PressureError> {
    solve_pressure_seeded(state, g, m, nu, omega, tol, max_iter, None)
}

/// Picard iteration from `seed` (or zero).
#[allow(clippy::too_many_arguments)]
pub fn solve_pressure_seeded(
    state: &FlowState,
    g: &GeometryBundle,
    m: f64,
    nu: f64,
    omega: [f64; 3],
    tol: f64,
    max_iter: usize,
    seed: Option<&SpectralScalarField>,
) -> Result<PressureSolveReport, PressureError> {
    let forcing = assemble(state, g, m, nu, omega);
    let out = picard(g, &forcing.source, seed, tol, max_iter)?;
    Ok(report(out, g, DEFAULT_GUARD))
}

pub(crate) fn report(out: PicardOutcome, g: &GeometryBundle, guard: f64) -> PressureSolveReport {
    let guard_value = g.sup_grad_eta();
    PressureSolveReport {
        q: out.q,
        iterations: out.iterations,
        residual: out.residual,
        contraction_estimate: out.contraction,
        guard_value,
        guard_threshold: guard,
        guard_exceeded: guard_value > guard,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diophantine::Direction;
    use crate::evolution::taylor_green;
    use crate::geometry::build_geometry;
    use crate::spectral::Lattice;
    use num_complex::Complex64;

    fn omega() -> [f64; 3] {
        Direction::algebraic_omega()
    }

    fn state(eta: SpectralVectorField, u: SpectralVectorField) -> FlowState {
        FlowState { t: 0.0, eta, u }
    }

    #[test]
    fn rest_state_has_zero_pressure() {
        let l = Lattice::new(8).unwrap();
        let s = state(SpectralVectorField::zeros(l), SpectralVectorField::zeros(l));
        let g = build_geometry(&s.eta);
        let f = pressure_source(&s, &g, &SpectralScalarField::zeros(l), 4.0, 1.0, omega());
        assert_eq!(f.max_abs_coeff(), 0.0);
        let r = solve_pressure(&s, &g, 4.0, 1.0, omega(), 1e-10, 100).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.q.max_abs_coeff(), 0.0);
    }

    #[test]
    fn identity_geometry_reduces_to_eulerian_source() {
        let l = Lattice::new(16).unwrap();
        let u = taylor_green(l);
        let s = state(SpectralVectorField::zeros(l), u.clone());
        let g = build_geometry(&s.eta);
        let f = pressure_source(&s, &g, &SpectralScalarField::zeros(l), 16.0, 1.0, omega());
        // oracle: -d_j u_i d_i u_j with exact products
        let mut oracle = SpectralScalarField::zeros(l);
        for i in 0..3 {
            for j in 0..3 {
                let p = crate::spectral::dealiased_product(&u.comp(i).derivative(j), &u.comp(j).derivative(i));
                oracle.axpy(-1.0, &p);
            }
        }
        let oracle = oracle.dealiased();
        assert!((&f - &oracle).max_abs_coeff() < 1e-12 * oracle.max_abs_coeff());
        let r = solve_pressure(&s, &g, 16.0, 1.0, omega(), 1e-10, 100).unwrap();
        let direct = oracle.inverse_laplacian().unwrap();
        assert!((&r.q - &direct).sobolev_norm(0) <= 1e-10 * direct.sobolev_norm(0));
        assert!(r.iterations <= 2);
        assert!(r.residual <= 1e-12);
    }

    #[test]
    fn magnetic_part_scales_as_m_squared() {
        let l = Lattice::new(16).unwrap();
        let mut eta = SpectralVectorField::zeros(l);
        eta.comps_mut()[0].add_mode([0, 1, 1], Complex64::new(0.0, -0.004));
        eta.comps_mut()[1].add_mode([1, 0, 1], Complex64::new(0.003, 0.0));
        eta.comps_mut()[2].add_mode([1, 1, 0], Complex64::new(0.0, 0.002));
        let s = state(eta, SpectralVectorField::zeros(l));
        let g = build_geometry(&s.eta);
        let z = SpectralScalarField::zeros(l);
        let f1 = pressure_source(&s, &g, &z, 1.0, 1.0, omega());
        let f3 = pressure_source(&s, &g, &z, 3.0, 1.0, omega());
        assert!((&f3 - &f1.scale(9.0)).max_abs_coeff() <= 1e-13 * f3.max_abs_coeff());
        let q1 = solve_pressure(&s, &g, 1.0, 1.0, omega(), 1e-12, 100).unwrap().q;
        let q3 = solve_pressure(&s, &g, 3.0, 1.0, omega(), 1e-12, 100).unwrap().q;
        assert!((&q3 - &q1.scale(9.0)).sobolev_norm(0) <= 1e-10 * q3.sobolev_norm(0));
    }

    #[test]
    fn small_shear_contracts_and_is_a_fixed_point() {
        let l = Lattice::new(16).unwrap();
        let mut eta = SpectralVectorField::zeros(l);
        eta.comps_mut()[0].add_mode([0, 1, 0], Complex64::new(0.0, -0.005));
        let u = crate::geometry::tests_support::random_vector(l, 5, 1.0, 31).leray_project();
        let s = state(eta, u);
        let g = build_geometry(&s.eta);
        let r = solve_pressure(&s, &g, 8.0, 1.0, omega(), 1e-10, 100).unwrap();
        assert!(r.contraction_estimate <= 0.2, "{}", r.contraction_estimate);
        assert!(!r.guard_exceeded);
        let again = solve_pressure_seeded(&s, &g, 8.0, 1.0, omega(), 1e-10, 100, Some(&r.q)).unwrap();
        assert!((&again.q - &r.q).sobolev_norm(0) <= 1e-10 * r.q.sobolev_norm(0));
        assert_eq!(again.iterations, 1);
        assert_eq!(r.q.mean(), 0.0);
    }

    #[test]
    fn max_iterations_is_reported() {
        let l = Lattice::new(16).unwrap();
        let mut eta = SpectralVectorField::zeros(l);
        eta.comps_mut()[0].add_mode([0, 1, 0], Complex64::new(0.0, -0.005));
        let u = crate::geometry::tests_support::random_vector(l, 5, 1.0, 32).leray_project();
        let s = state(eta, u);
        let g = build_geometry(&s.eta);
        let e = solve_pressure(&s, &g, 8.0, 1.0, omega(), 1e-14, 2).unwrap_err();
        assert!(matches!(e, PressureError::MaxIterations { iterations: 2, .. }));
    }
}
