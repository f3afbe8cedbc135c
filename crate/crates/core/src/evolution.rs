//! Time evolution: the exact per-mode linear propagator, the integrating-factor
//! RK2 stepper for the full system, initial data, and nonlinear-versus-linear
//! error experiments.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    dissipation_functional, energy_functional, hierarchy_orders, highest_energy_analog, highest_order,
    initial_params, ErrorReport, ErrorSeries, InitialParams,
};
use crate::diophantine::{compensated_dot, Direction};
use crate::error::EvolutionError;
use crate::geometry::{build_geometry, div_a_projected, GeometryBundle};
use crate::pressure::{self, Forcing, DEFAULT_GUARD, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::spectral::{wavevector, Lattice, SpectralScalarField, SpectralVectorField, TWO_PI};

/// Displacement and velocity at time `t`, both mean-zero.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub eta: SpectralVectorField,
    pub u: SpectralVectorField,
}

impl FlowState {
    pub fn rest(lattice: Lattice) -> Self {
        FlowState { t: 0.0, eta: SpectralVectorField::zeros(lattice), u: SpectralVectorField::zeros(lattice) }
    }

    pub fn lattice(&self) -> Lattice {
        self.eta.lattice()
    }

    pub fn is_finite(&self) -> bool {
        self.eta.comps().iter().chain(self.u.comps()).all(|c| c.coeffs().iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }

    /// `(eta - other.eta, u - other.u)` at this state's time.
    pub fn difference(&self, other: &FlowState) -> FlowState {
        FlowState { t: self.t, eta: &self.eta - &other.eta, u: &self.u - &other.u }
    }
}

/// Physical constants; `nu = mu / rho` and `m^2 = lambda varpi^2 / (4 pi rho)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub rho: f64,
    pub mu: f64,
    pub lambda: f64,
    pub varpi: f64,
}

impl PhysicalParams {
    /// `rho = 1`, `lambda = 4 pi`, so that `nu = mu` and `m = varpi`.
    pub fn normalized(nu: f64, m: f64) -> Self {
        PhysicalParams { rho: 1.0, mu: nu, lambda: 4.0 * std::f64::consts::PI, varpi: m }
    }

    pub fn nu(&self) -> f64 {
        self.mu / self.rho
    }

    pub fn m(&self) -> f64 {
        self.varpi * (self.lambda / (4.0 * std::f64::consts::PI * self.rho)).sqrt()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    #[default]
    #[serde(rename = "if-rk2")]
    IfRk2,
}

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "if-rk2" => Ok(Scheme::IfRk2),
            other => Err(format!("unknown scheme {other:?}")),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("if-rk2")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    pub nu: f64,
    pub m: f64,
    pub params: Option<PhysicalParams>,
    pub direction: Direction,
    pub epsilon: f64,
    /// Multiplies the initial velocity profile.
    pub u_amplitude: f64,
    pub scheme: Scheme,
    pub pressure_tol: f64,
    pub pressure_max_iter: usize,
    /// Constraint restoration runs every `project_cadence` steps.
    pub project_cadence: usize,
    pub restore_tol: f64,
    /// Threshold on `max |grad eta|`, reported when exceeded.
    pub guard: f64,
    pub hierarchy_s: u32,
    pub seed: u64,
    pub record_every: usize,
    /// When false only the linear part is advanced.
    pub nonlinear: bool,
}

impl SimConfig {
    pub fn new(n: usize, dt: f64, t_end: f64, nu: f64, m: f64, direction: Direction) -> Result<Self, EvolutionError> {
        let cfg = Self::new_unchecked(n, dt, t_end, nu, m, direction);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults for everything else, without [`SimConfig::validate`].
    pub fn new_unchecked(n: usize, dt: f64, t_end: f64, nu: f64, m: f64, direction: Direction) -> Self {
        SimConfig {
            n,
            dt,
            t_end,
            nu,
            m,
            params: None,
            direction,
            epsilon: 0.05,
            u_amplitude: 1.0,
            scheme: Scheme::IfRk2,
            pressure_tol: DEFAULT_TOL,
            pressure_max_iter: DEFAULT_MAX_ITER,
            project_cadence: 1,
            restore_tol: 1e-11,
            guard: DEFAULT_GUARD,
            hierarchy_s: 2,
            seed: 0,
            record_every: 1,
            nonlinear: true,
        }
    }

    /// `n = 16, nu = 1, m = 16, epsilon = 0.05, dt = 1e-3, t_end = 5`, algebraic direction.
    pub fn baseline() -> Self {
        let dir = crate::diophantine::sample_direction(crate::diophantine::DirectionKind::Algebraic, 0)
            .expect("algebraic direction certifies");
        Self::new(16, 1e-3, 5.0, 1.0, 16.0, dir).expect("baseline is valid")
    }

    pub fn lattice(&self) -> Result<Lattice, EvolutionError> {
        Ok(Lattice::new(self.n)?)
    }

    pub fn omega(&self) -> [f64; 3] {
        self.direction.omega
    }

    pub fn orders(&self) -> [u32; 4] {
        hierarchy_orders(self.hierarchy_s)
    }

    pub fn highest_order(&self) -> u32 {
        highest_order(self.hierarchy_s)
    }

    /// Explicit bound for the nonlinear remainder: its viscous part is at most
    /// `2 guard` times `nu Lap` on the retained band, and RK2 is stable for
    /// real negative eigenvalues down to `-2 / dt`. The linear part never limits `dt`.
    pub fn dt_max(&self) -> f64 {
        if !self.nonlinear || self.nu == 0.0 {
            return f64::INFINITY;
        }
        let c = self.n as f64 / 3.0;
        let k = TWO_PI * c.floor();
        2.0 / (self.nu * k * k * 2.0 * self.guard)
    }

    pub fn num_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), EvolutionError> {
        let bad = |s: String| Err(EvolutionError::Config(s));
        if self.n == 0 || self.n % 2 != 0 {
            return bad(format!("grid_n must be even and positive, got {}", self.n));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return bad(format!("t_end must be nonnegative, got {}", self.t_end));
        }
        let steps = self.t_end / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return bad(format!("t_end {} is not a multiple of dt {}", self.t_end, self.dt));
        }
        if !(self.nu >= 0.0) || !self.nu.is_finite() {
            return bad(format!("nu must be nonnegative, got {}", self.nu));
        }
        if !(self.m >= 0.0) || !self.m.is_finite() {
            return bad(format!("m must be nonnegative, got {}", self.m));
        }
        if !(0.0..=0.2).contains(&self.epsilon) {
            return Err(EvolutionError::EpsilonOutOfRange(self.epsilon));
        }
        if self.project_cadence == 0 || self.record_every == 0 || self.pressure_max_iter == 0 {
            return bad("cadences and iteration limits must be positive".into());
        }
        if !(self.pressure_tol > 0.0) || !(self.guard > 0.0) {
            return bad("pressure_tol and guard must be positive".into());
        }
        if self.dt > self.dt_max() {
            return bad(format!("dt {} exceeds the stability bound {:.3e}", self.dt, self.dt_max()));
        }
        Ok(())
    }
}

/// `exp(t M)` for `M = [[0, 1], [-b, -a]]`, `a = nu |2 pi k|^2`,
/// `b = (2 pi m k.omega)^2`, acting on `(eta_hat, u_hat)`.
pub fn linear_propagator(k: [i64; 3], omega: [f64; 3], nu: f64, m: f64, t: f64) -> [[f64; 2]; 2] {
    if k == [0, 0, 0] {
        return [[1.0, t], [0.0, 1.0]];
    }
    let kv = wavevector(k);
    let a = nu * (kv[0] * kv[0] + kv[1] * kv[1] + kv[2] * kv[2]);
    let w = TWO_PI * m * compensated_dot(k, omega);
    propagator_ab(a, w * w, t)
}

pub(crate) fn propagator_ab(a: f64, b: f64, t: f64) -> [[f64; 2]; 2] {
    let h = 0.5 * a;
    let s2 = h * h - b;
    let x = s2 * t * t;
    if x.abs() <= 1.0 {
        // cosh(s t) and sinh(s t)/s as series in s^2 t^2, valid for either sign
        let (mut c, mut sh) = (1.0, 1.0);
        let mut term_c = 1.0;
        let mut term_s = 1.0;
        for j in 1..20 {
            let jf = j as f64;
            term_c *= x / ((2.0 * jf - 1.0) * (2.0 * jf));
            term_s *= x / ((2.0 * jf) * (2.0 * jf + 1.0));
            c += term_c;
            sh += term_s;
            if term_c.abs() < 1e-18 && term_s.abs() < 1e-18 {
                break;
            }
        }
        let sh = sh * t;
        let e = (-h * t).exp();
        return [[e * (c + sh * h), e * sh], [-e * sh * b, e * (c - sh * h)]];
    }
    if s2 < 0.0 {
        let w = (-s2).sqrt();
        let (sn, c) = (w * t).sin_cos();
        let sh = sn / w;
        let e = (-h * t).exp();
        return [[e * (c + sh * h), e * sh], [-e * sh * b, e * (c - sh * h)]];
    }
    // overdamped: roots l+ = -b / (h + s), l- = -h - s
    let s = s2.sqrt();
    let lp = -b / (h + s);
    let lm = -h - s;
    let ep = (lp * t).exp();
    let em = (lm * t).exp();
    let inv = 1.0 / (2.0 * s);
    let d = (ep - em) * inv;
    [[(-lm * ep + lp * em) * inv, d], [-b * d, (lp * ep - lm * em) * inv]]
}

/// Propagator entries for every stored frequency.
fn propagator_table(l: Lattice, omega: [f64; 3], nu: f64, m: f64, t: f64) -> Vec<[f64; 4]> {
    (0..l.len())
        .map(|i| {
            let p = linear_propagator(l.freq(i), omega, nu, m, t);
            [p[0][0], p[0][1], p[1][0], p[1][1]]
        })
        .collect()
}

/// Per mode, `|2 pi k|^2 int_0^t (P21^2, 2 P21 P22, P22^2) ds`: the flat
/// dissipation integral of the linear flow as a quadratic form in `(eta, u)`.
fn dissipation_table(l: Lattice, omega: [f64; 3], nu: f64, m: f64, t: f64) -> Vec<[f64; 3]> {
    // 5-point Gauss-Legendre on 4 panels
    const X: [f64; 5] = [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
    const W: [f64; 5] = [0.568_888_888_888_888_9, 0.478_628_670_499_366_5, 0.478_628_670_499_366_5, 0.236_926_885_056_189_1, 0.236_926_885_056_189_1];
    const PANELS: usize = 4;
    let h = t / PANELS as f64;
    (0..l.len())
        .map(|i| {
            let k = l.freq(i);
            let kv = wavevector(k);
            let k2 = kv[0] * kv[0] + kv[1] * kv[1] + kv[2] * kv[2];
            if k2 == 0.0 {
                return [0.0; 3];
            }
            let mut acc = [0.0; 3];
            for p in 0..PANELS {
                let mid = (p as f64 + 0.5) * h;
                for (x, w) in X.iter().zip(W) {
                    let q = linear_propagator(k, omega, nu, m, mid + 0.5 * h * x);
                    let (a, b) = (q[1][0], q[1][1]);
                    let wh = 0.5 * h * w * k2;
                    acc[0] += wh * a * a;
                    acc[1] += wh * 2.0 * a * b;
                    acc[2] += wh * b * b;
                }
            }
            acc
        })
        .collect()
}

fn apply_table(table: &[[f64; 4]], eta: &SpectralVectorField, u: &SpectralVectorField) -> (SpectralVectorField, SpectralVectorField) {
    let mut e_out = eta.clone();
    let mut u_out = u.clone();
    for c in 0..3 {
        let e_in = eta.comp(c).coeffs();
        let u_in = u.comp(c).coeffs();
        let eo = e_out.comps_mut()[c].coeffs_mut();
        for (i, p) in table.iter().enumerate() {
            let (x, y) = (e_in[i], u_in[i]);
            if x == Complex64::new(0.0, 0.0) && y == Complex64::new(0.0, 0.0) {
                continue;
            }
            eo[i] = x * p[0] + y * p[1];
        }
        let uo = u_out.comps_mut()[c].coeffs_mut();
        for (i, p) in table.iter().enumerate() {
            let (x, y) = (e_in[i], u_in[i]);
            if x == Complex64::new(0.0, 0.0) && y == Complex64::new(0.0, 0.0) {
                continue;
            }
            uo[i] = x * p[2] + y * p[3];
        }
    }
    (e_out, u_out)
}

fn divergence_residual(s: &FlowState) -> f64 {
    s.eta.divergence().sobolev_norm(0) + s.u.divergence().sobolev_norm(0)
}

fn divergence_scale(s: &FlowState) -> f64 {
    (s.eta.sobolev_norm(1) + s.u.sobolev_norm(1)).max(1.0)
}

/// Closed-form solution of the linear pressureless system at time `initial.t + t`.
pub fn evolve_linear(initial: &FlowState, omega: [f64; 3], nu: f64, m: f64, t: f64) -> Result<FlowState, EvolutionError> {
    let res = divergence_residual(initial);
    if res > 1e-10 * divergence_scale(initial) {
        return Err(EvolutionError::NotDivergenceFree(res));
    }
    if t == 0.0 {
        return Ok(initial.clone());
    }
    let table = propagator_table(initial.lattice(), omega, nu, m, t);
    let (eta, u) = apply_table(&table, &initial.eta, &initial.u);
    Ok(FlowState { t: initial.t + t, eta, u })
}

/// What happened during one step.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StepReport {
    pub pressure_iters: usize,
    pub restore_iters: usize,
    /// `||P div(A^T u)||_0` after restoration.
    pub diva_res: f64,
    pub det_err: f64,
    pub guard_exceeded: bool,
}

/// Integrating-factor RK2 stepper with cached geometry and pressure.
pub struct Stepper {
    cfg: SimConfig,
    lattice: Lattice,
    omega: [f64; 3],
    table: Vec<[f64; 4]>,
    dissip: Vec<[f64; 3]>,
    geom: Option<GeometryBundle>,
    forcing: Option<(FlowState, Forcing)>,
    q_prev: Option<SpectralScalarField>,
    phi_prev: Option<SpectralScalarField>,
    steps_taken: usize,
    pub last: StepReport,
}

impl Stepper {
    pub fn new(cfg: &SimConfig) -> Result<Self, EvolutionError> {
        cfg.validate()?;
        let lattice = cfg.lattice()?;
        let omega = cfg.omega();
        Ok(Stepper {
            table: propagator_table(lattice, omega, cfg.nu, cfg.m, cfg.dt),
            dissip: dissipation_table(lattice, omega, cfg.nu, cfg.m, cfg.dt),
            cfg: cfg.clone(),
            lattice,
            omega,
            geom: None,
            forcing: None,
            q_prev: None,
            phi_prev: None,
            steps_taken: 0,
            last: StepReport::default(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// Geometry of `eta`, reused when unchanged.
    pub fn geometry(&mut self, eta: &SpectralVectorField, t: f64) -> &GeometryBundle {
        let fresh = match &self.geom {
            Some(g) => g.eta() != eta,
            None => true,
        };
        if fresh {
            self.geom = Some(GeometryBundle::new(eta, t));
        }
        self.geom.as_ref().expect("just set")
    }

    fn forcing_for(&mut self, s: &FlowState) -> &Forcing {
        let fresh = match &self.forcing {
            Some((st, _)) => st.eta != s.eta || st.u != s.u,
            None => true,
        };
        if fresh {
            let (m, nu, omega) = (self.cfg.m, self.cfg.nu, self.omega);
            let g = self.geometry(&s.eta, s.t);
            let f = pressure::assemble(s, g, m, nu, omega);
            self.forcing = Some((s.clone(), f));
        }
        &self.forcing.as_ref().expect("just set").1
    }

    /// `||grad_A u||_0^2` for the nonlinear system, `||grad u||_0^2` for the linear one.
    pub fn dissipation_rate(&mut self, s: &FlowState) -> f64 {
        if self.cfg.nonlinear {
            self.forcing_for(s).grad_a_u_sq
        } else {
            s.u.comps().iter().map(|c| (0..3).map(|j| c.derivative(j).sobolev_norm_sq(0)).sum::<f64>()).sum()
        }
    }

    /// For the linear flow over one step from `s`: `int ||grad u||^2 dt` and
    /// `||grad u||^2` at both ends.
    pub fn linear_dissipation(&self, s: &FlowState) -> (f64, f64, f64) {
        let (mut integral, mut start, mut end) = (0.0, 0.0, 0.0);
        for c in 0..3 {
            let (e, v) = (s.eta.comp(c).coeffs(), s.u.comp(c).coeffs());
            for (i, (d, p)) in self.dissip.iter().zip(&self.table).enumerate() {
                if d[0] == 0.0 && d[2] == 0.0 {
                    continue;
                }
                let kv = wavevector(self.lattice.freq(i));
                let k2 = kv[0] * kv[0] + kv[1] * kv[1] + kv[2] * kv[2];
                integral += d[0] * e[i].norm_sqr() + d[1] * (e[i] * v[i].conj()).re + d[2] * v[i].norm_sqr();
                start += k2 * v[i].norm_sqr();
                end += k2 * (e[i] * p[2] + v[i] * p[3]).norm_sqr();
            }
        }
        (integral, start, end)
    }

    /// `||P div(A^T u)||_0` with the geometry of `s`.
    pub fn constraint_residual(&mut self, s: &FlowState) -> f64 {
        let c = self.lattice.cutoff();
        let g = self.geometry(&s.eta, s.t);
        div_a_projected(&s.u, g, c).sobolev_norm(0)
    }

    pub fn det_error(&mut self, s: &FlowState) -> f64 {
        self.geometry(&s.eta, s.t).det_error_sup()
    }

    /// Nonlinear velocity tendency `nu P div((A^T A - I) grad u) - P(A grad q)`.
    fn nonlinear_rhs(&mut self, s: &FlowState) -> Result<(SpectralVectorField, usize), EvolutionError> {
        if !self.cfg.nonlinear {
            return Ok((SpectralVectorField::zeros(self.lattice), 0));
        }
        let (tol, max_iter) = (self.cfg.pressure_tol, self.cfg.pressure_max_iter);
        let source = self.forcing_for(s).source.clone();
        let seed = self.q_prev.take();
        let g = self.geometry(&s.eta, s.t);
        let out = pressure::picard(g, &source, seed.as_ref(), tol, max_iter)?;
        let viscous = &self.forcing.as_ref().expect("assembled").1.viscous;
        let mut rhs = viscous - &out.a_grad_q;
        for c in rhs.comps_mut() {
            c.set_mean(0.0);
        }
        self.q_prev = Some(out.q);
        Ok((rhs, out.iterations))
    }

    /// One step from `s` to `s.t + dt`.
    pub fn step(&mut self, s: &FlowState) -> Result<FlowState, EvolutionError> {
        let dt = self.cfg.dt;
        let (k1, it1) = self.nonlinear_rhs(s)?;
        let mut u1 = s.u.clone();
        u1.axpy(dt, &k1);
        let (eta_star, u_star) = apply_table(&self.table, &s.eta, &u1);
        let star = FlowState { t: s.t + dt, eta: eta_star, u: u_star };
        let (k2, it2) = if self.cfg.nonlinear { self.nonlinear_rhs(&star)? } else { (SpectralVectorField::zeros(self.lattice), 0) };
        let mut uh = s.u.clone();
        uh.axpy(0.5 * dt, &k1);
        let (eta, mut u) = apply_table(&self.table, &s.eta, &uh);
        u.axpy(0.5 * dt, &k2);
        let mut next = FlowState { t: s.t + dt, eta, u };
        self.steps_taken += 1;
        let mut report = StepReport { pressure_iters: it1 + it2, ..Default::default() };
        if self.cfg.nonlinear {
            let c = self.lattice.cutoff();
            let restore = self.steps_taken % self.cfg.project_cadence == 0;
            let (restore_tol, tol, max_iter, guard) =
                (self.cfg.restore_tol, self.cfg.pressure_tol, self.cfg.pressure_max_iter, self.cfg.guard);
            let phi_seed = self.phi_prev.take();
            let mut new_phi = None;
            let g = self.geometry(&next.eta, next.t);
            let mut r = g.div_a_conservative(&next.u, c, c);
            r.set_mean(0.0);
            let mut res = r.sobolev_norm(0);
            if restore && res > restore_tol {
                // an absolute target well below restore_tol suffices
                let rel = tol.max(0.1 * restore_tol / res).min(0.1);
                let out = pressure::picard(g, &r, phi_seed.as_ref(), rel, max_iter)
                    .map_err(EvolutionError::Restoration)?;
                new_phi = Some(out.q.clone());
                next.u.axpy(-1.0, &out.a_grad_q);
                for comp in next.u.comps_mut() {
                    comp.set_mean(0.0);
                }
                report.restore_iters = out.iterations;
                res = div_a_projected(&next.u, g, c).sobolev_norm(0);
            }
            report.diva_res = res;
            report.det_err = g.det_error_sup();
            report.guard_exceeded = g.sup_grad_eta() > guard;
            self.phi_prev = new_phi;
            if res > 1e-2 {
                return Err(EvolutionError::ConstraintBlowup(res));
            }
        }
        if !next.is_finite() {
            return Err(EvolutionError::NonFinite(next.t));
        }
        self.last = report;
        Ok(next)
    }
}

/// One step of the configured scheme.
pub fn step_nonlinear(state: &FlowState, cfg: &SimConfig) -> Result<FlowState, EvolutionError> {
    Stepper::new(cfg)?.step(state)
}

/// `(sin cos cos, cos sin cos, -2 cos cos sin)(2 pi y) / (2 pi)`: divergence-free,
/// band 1, with `max |grad| = 2`.
pub fn initial_profile(l: Lattice) -> SpectralVectorField {
    let mut comps: [SpectralScalarField; 3] = std::array::from_fn(|_| SpectralScalarField::zeros(l));
    let c = 1.0 / (8.0 * TWO_PI);
    // add_mode fills the conjugate at -k, so k_1 = 1 covers all eight modes
    for s2 in [-1i64, 1] {
        for s3 in [-1i64, 1] {
            let k = [1, s2, s3];
            comps[0].add_mode(k, Complex64::new(0.0, -c));
            comps[1].add_mode(k, Complex64::new(0.0, -c * s2 as f64));
            comps[2].add_mode(k, Complex64::new(0.0, 2.0 * c * s3 as f64));
        }
    }
    SpectralVectorField::new(comps).expect("shared lattice")
}

/// `grad Lap^{-1} g` (mean of `g` ignored): the periodic Stokes correction
/// `-Lap w + grad Q = 0`, `div w = g`.
pub fn stokes_correction(g: &SpectralScalarField) -> SpectralVectorField {
    let mut g = g.clone();
    g.set_mean(0.0);
    SpectralVectorField::gradient(&g.inverse_laplacian().expect("mean removed"))
}

/// Initial data and its correction fields.
#[derive(Clone, Debug)]
pub struct InitialData {
    pub state: FlowState,
    /// `eta^r`, with `eta^0 = epsilon eta_bar + epsilon^2 eta^r`.
    pub eta_r: SpectralVectorField,
    /// `u^r`, with `u^0 = a (u_bar + epsilon u^r)`.
    pub u_r: SpectralVectorField,
    pub eta_iterations: usize,
    pub u_iterations: usize,
}

const FIXED_POINT_MAX: usize = 200;

fn fixed_point<F>(start: SpectralVectorField, mut update: F) -> Result<(SpectralVectorField, usize), EvolutionError>
where
    F: FnMut(&SpectralVectorField) -> SpectralVectorField,
{
    let mut z = start;
    let mut prev_diff = f64::INFINITY;
    for it in 1..=FIXED_POINT_MAX {
        let next = update(&z);
        let diff = (&next - &z).sobolev_norm(0);
        let scale = next.sobolev_norm(0);
        z = next;
        if diff <= 1e-15 * scale || diff == 0.0 || (diff >= prev_diff && diff <= 1e-12 * scale) {
            return Ok((z, it));
        }
        prev_diff = diff;
    }
    let residual = prev_diff / z.sobolev_norm(0).max(f64::MIN_POSITIVE);
    Err(EvolutionError::InitialData { residual })
}

/// `(eta^0, u^0) = (epsilon eta_bar + epsilon^2 eta^r, a (u_bar + epsilon u^r))` with
/// `eta_bar = u_bar` the reference profile, `eta^r` making `div eta^0 = r_{eta^0}`
/// and `u^r` making `div_{A^0} u^0 = 0` on the dealiasing band.
pub fn make_initial_data(cfg: &SimConfig) -> Result<FlowState, EvolutionError> {
    make_initial_data_detailed(cfg).map(|d| d.state)
}

pub fn make_initial_data_detailed(cfg: &SimConfig) -> Result<InitialData, EvolutionError> {
    let eps = cfg.epsilon;
    if !(0.0..=0.2).contains(&eps) {
        return Err(EvolutionError::EpsilonOutOfRange(eps));
    }
    let l = cfg.lattice()?;
    let c = l.cutoff();
    let bar = initial_profile(l);
    let zero = SpectralVectorField::zeros(l);
    if eps == 0.0 {
        let state = FlowState { t: 0.0, eta: zero.clone(), u: bar.scale(cfg.u_amplitude) };
        return Ok(InitialData { state, eta_r: zero.clone(), u_r: zero, eta_iterations: 0, u_iterations: 0 });
    }
    let eta_bar = bar.scale(eps);
    // z = epsilon^2 eta^r
    let (z, eta_iterations) = fixed_point(zero.clone(), |z| {
        let eta0 = &eta_bar + z;
        let g = build_geometry(&eta0);
        stokes_correction(&g.div_residual_on_lattice(c))
    })?;
    let eta0 = &eta_bar + &z;
    let g = build_geometry(&eta0);
    // w = epsilon u^r for unit amplitude
    let (w, u_iterations) = fixed_point(zero, |w| {
        let v = &bar + w;
        let mut d = g.div_a_conservative(&v, c, c);
        d.axpy(-1.0, &v.divergence());
        stokes_correction(&d).scale(-1.0)
    })?;
    let u0 = (&bar + &w).scale(cfg.u_amplitude);
    Ok(InitialData {
        state: FlowState { t: 0.0, eta: eta0, u: u0 },
        eta_r: z.scale(1.0 / (eps * eps)),
        u_r: w.scale(1.0 / eps),
        eta_iterations,
        u_iterations,
    })
}

/// `(eta^0 + eta^r, u^0 + u^r)` with `div eta^r = -div eta^0` and
/// `div u^r = div_{A~0} u^0`, both as `grad Lap^{-1}` of the source.
pub fn linearized_initial_data(state0: &FlowState) -> Result<FlowState, EvolutionError> {
    let l = state0.lattice();
    let c = l.cutoff();
    let g = build_geometry(&state0.eta);
    let div_a = g.div_a_conservative(&state0.u, state0.u.band(), c);
    let res = div_a.sobolev_norm(0);
    if res > 1e-9 * state0.u.sobolev_norm(1).max(1.0) {
        return Err(EvolutionError::NotDivergenceFree(res));
    }
    let eta_r = stokes_correction(&state0.eta.divergence()).scale(-1.0);
    let mut div_tilde = div_a;
    div_tilde.axpy(-1.0, &state0.u.divergence().dealiased());
    let u_r = stokes_correction(&div_tilde);
    Ok(FlowState { t: state0.t, eta: &state0.eta + &eta_r, u: &state0.u + &u_r })
}

/// One diagnostics row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub e: [f64; 4],
    pub d: [f64; 4],
    pub eh: f64,
    pub det_err: f64,
    pub diva_res: f64,
    pub energy_resid: f64,
    pub pressure_iters: usize,
    /// `||u||^2 + m^2 ||d_omega eta||^2`.
    pub mech: f64,
    /// `||grad_A u||^2` (or `||grad u||^2` for the linear system).
    pub grad_a_u_sq: f64,
}

#[derive(Clone, Debug)]
pub struct TrajectoryLog {
    pub orders: [u32; 4],
    pub h: u32,
    pub initial_params: InitialParams,
    pub records: Vec<DiagnosticsRecord>,
    pub final_state: FlowState,
    pub steps: usize,
    /// Maxima over every accepted step, not only recorded ones.
    pub max_det_err: f64,
    pub max_diva_res: f64,
    pub max_energy_resid: f64,
    pub guard_exceeded_steps: usize,
}

#[derive(Debug)]
pub struct RunFailure {
    pub error: EvolutionError,
    pub last_good: FlowState,
    pub log: TrajectoryLog,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run failed at t = {}: {}", self.last_good.t, self.error)
    }
}

impl std::error::Error for RunFailure {}

/// Runs from [`make_initial_data`] to `t_end`.
pub fn run_simulation(cfg: &SimConfig) -> Result<TrajectoryLog, Box<RunFailure>> {
    let init = make_initial_data(cfg).map_err(|e| {
        let l = Lattice::new(cfg.n.max(2) + cfg.n % 2).expect("even");
        let rest = FlowState::rest(l);
        Box::new(RunFailure { error: e, log: empty_log(cfg, &rest), last_good: rest })
    })?;
    run_from(cfg, init, |_, _| {})
}

fn empty_log(cfg: &SimConfig, s: &FlowState) -> TrajectoryLog {
    TrajectoryLog {
        orders: cfg.orders(),
        h: cfg.highest_order(),
        initial_params: initial_params(s, cfg.m, cfg.omega(), cfg.orders(), cfg.highest_order()),
        records: Vec::new(),
        final_state: s.clone(),
        steps: 0,
        max_det_err: 0.0,
        max_diva_res: 0.0,
        max_energy_resid: 0.0,
        guard_exceeded_steps: 0,
    }
}

/// Advances `initial` by `cfg.t_end`, calling `observe` with every recorded state.
pub fn run_from<F>(cfg: &SimConfig, initial: FlowState, mut observe: F) -> Result<TrajectoryLog, Box<RunFailure>>
where
    F: FnMut(&FlowState, &DiagnosticsRecord),
{
    let mut log = empty_log(cfg, &initial);
    let mut stepper = match Stepper::new(cfg) {
        Ok(s) => s,
        Err(error) => return Err(Box::new(RunFailure { error, last_good: initial.clone(), log })),
    };
    let (m, nu, omega) = (cfg.m, cfg.nu, cfg.omega());
    let orders = cfg.orders();
    let h = cfg.highest_order();
    let steps = cfg.num_steps();
    let t0 = initial.t;
    let mut state = initial;
    let mut g_prev = stepper.dissipation_rate(&state);
    let mech0 = mech_energy(&state, m, omega);
    let mut integral = 0.0;
    let (det0, res0) = if cfg.nonlinear {
        (stepper.det_error(&state), stepper.constraint_residual(&state))
    } else {
        (0.0, 0.0)
    };
    log.max_det_err = det0;
    log.max_diva_res = res0;
    let make_record = |s: &FlowState, det_err: f64, diva_res: f64, resid: f64, iters: usize, ga: f64| DiagnosticsRecord {
        t: s.t,
        e: orders.map(|i| energy_functional(s, m, omega, i)),
        d: orders.map(|i| dissipation_functional(s, m, omega, i)),
        eh: highest_energy_analog(s, m, omega, h),
        det_err,
        diva_res,
        energy_resid: resid,
        pressure_iters: iters,
        mech: mech_energy(s, m, omega),
        grad_a_u_sq: ga,
    };
    let r0 = make_record(&state, det0, res0, 0.0, 0, g_prev);
    observe(&state, &r0);
    log.records.push(r0);
    for k in 1..=steps {
        let (lin_int, lin0, lin1) = stepper.linear_dissipation(&state);
        let next = match stepper.step(&state) {
            Ok(s) => s,
            Err(error) => {
                log.final_state = state.clone();
                log.steps = k - 1;
                return Err(Box::new(RunFailure { error, last_good: state, log }));
            }
        };
        state = FlowState { t: t0 + k as f64 * cfg.dt, ..next };
        let rep = stepper.last.clone();
        let g_now = stepper.dissipation_rate(&state);
        // exact for the linear flow, trapezoid for the remainder
        integral += lin_int + 0.5 * cfg.dt * ((g_prev - lin0) + (g_now - lin1));
        g_prev = g_now;
        let diff = (mech_energy(&state, m, omega) + 2.0 * nu * integral - mech0).abs();
        let resid = if mech0 == 0.0 { diff } else { diff / mech0 };
        log.max_det_err = log.max_det_err.max(rep.det_err);
        log.max_diva_res = log.max_diva_res.max(rep.diva_res);
        log.max_energy_resid = log.max_energy_resid.max(resid);
        log.guard_exceeded_steps += rep.guard_exceeded as usize;
        if k % cfg.record_every == 0 || k == steps {
            let r = make_record(&state, rep.det_err, rep.diva_res, resid, rep.pressure_iters, g_now);
            observe(&state, &r);
            log.records.push(r);
        }
    }
    log.steps = steps;
    log.final_state = state;
    Ok(log)
}

fn mech_energy(s: &FlowState, m: f64, omega: [f64; 3]) -> f64 {
    s.u.sobolev_norm_sq(0) + m * m * s.eta.directional_derivative(omega).sobolev_norm_sq(0)
}

/// One record of a nonlinear run next to the closed-form linear evolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub t: f64,
    pub nonlinear: [f64; 4],
    pub linear: [f64; 4],
    /// `E^d` of the difference at each hierarchy order.
    pub e_d: [f64; 4],
    pub d_d: [f64; 4],
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub m: f64,
    pub orders: [u32; 4],
    pub rows: Vec<ComparisonRow>,
    /// Largest spectral divergence of the linearized initial data.
    pub compatibility_residual: f64,
    pub log: TrajectoryLog,
}

impl Comparison {
    pub fn error_series(&self) -> ErrorSeries {
        let e_d: Vec<[f64; 4]> = self.rows.iter().map(|r| r.e_d).collect();
        ErrorSeries {
            m: self.m,
            t: self.rows.iter().map(|r| r.t).collect(),
            sup_norm: e_d.iter().map(|e| e[3].sqrt()).fold(0.0, f64::max),
            e_d,
            compatibility_residual: self.compatibility_residual,
        }
    }
}

/// Runs the configured system from [`make_initial_data`] and evolves the
/// corrected data of [`linearized_initial_data`] in closed form alongside.
/// With `cfg.nonlinear = false` both start from the corrected data.
pub fn compare_with_linear(cfg: &SimConfig) -> Result<Comparison, EvolutionError> {
    let orders = cfg.orders();
    let (m, nu, omega) = (cfg.m, cfg.nu, cfg.omega());
    let s0 = make_initial_data(cfg)?;
    let lin0 = linearized_initial_data(&s0)?;
    let compat = lin0.eta.divergence().sobolev_norm(0).max(lin0.u.divergence().sobolev_norm(0));
    let start = if cfg.nonlinear { s0 } else { lin0.clone() };
    let mut rows = Vec::new();
    let mut failure = None;
    let res = run_from(cfg, start, |s, _| {
        if failure.is_some() {
            return;
        }
        match evolve_linear(&lin0, omega, nu, m, s.t) {
            Ok(lin) => {
                let d = s.difference(&lin);
                rows.push(ComparisonRow {
                    t: s.t,
                    nonlinear: orders.map(|i| energy_functional(s, m, omega, i)),
                    linear: orders.map(|i| energy_functional(&lin, m, omega, i)),
                    e_d: orders.map(|i| energy_functional(&d, m, omega, i)),
                    d_d: orders.map(|i| dissipation_functional(&d, m, omega, i)),
                });
            }
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let log = res.map_err(|f| f.error)?;
    Ok(Comparison { m, orders, rows, compatibility_residual: compat, log })
}

/// [`compare_with_linear`] for each `m`, with the log-log fit of
/// `sup_t (E^d_top)^{1/2}` against `m`.
pub fn run_error_experiment(cfg: &SimConfig, m_list: &[f64]) -> Result<ErrorReport, EvolutionError> {
    let mut series = Vec::with_capacity(m_list.len());
    for &m in m_list {
        let c = config_for_m(cfg, m)?;
        series.push(compare_with_linear(&c)?.error_series());
    }
    Ok(ErrorReport::from_series(series, cfg.orders(), cfg.epsilon, cfg.t_end))
}

/// `cfg` with `m` replaced, validated.
pub fn config_for_m(cfg: &SimConfig, m: f64) -> Result<SimConfig, EvolutionError> {
    if !(m > 0.0) || !m.is_finite() {
        return Err(EvolutionError::Config(format!("m values must be positive, got {m}")));
    }
    let mut c = cfg.clone();
    c.m = m;
    c.params = None;
    c.validate()?;
    Ok(c)
}

const MAGIC: &[u8; 4] = b"MIHD";
const VERSION: u32 = 1;

/// Contents of a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub state: FlowState,
    pub nu: f64,
    pub m: f64,
    pub omega: [f64; 3],
}

pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let l = c.state.lattice();
    let mut out = Vec::with_capacity(64 + 6 * 16 * l.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(l.n() as u32).to_le_bytes());
    for v in [c.state.t, c.nu, c.m, c.omega[0], c.omega[1], c.omega[2]] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for field in c.state.eta.comps().iter().chain(c.state.u.comps()) {
        for z in field.coeffs() {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, EvolutionError> {
    let bad = |s: &str| EvolutionError::Checkpoint(s.to_string());
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("missing MIHD magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    if u32_at(4) != VERSION {
        return Err(bad("unsupported version"));
    }
    let n = u32_at(8) as usize;
    let l = Lattice::new(n).map_err(|e| EvolutionError::Checkpoint(e.to_string()))?;
    let header = 12 + 6 * 8;
    if bytes.len() != header + 6 * 16 * l.len() {
        return Err(bad("truncated or oversized body"));
    }
    let t = f64_at(12);
    let nu = f64_at(20);
    let m = f64_at(28);
    let omega = [f64_at(36), f64_at(44), f64_at(52)];
    let mut off = header;
    let mut fields = Vec::with_capacity(6);
    for _ in 0..6 {
        let coeffs: Vec<Complex64> = (0..l.len())
            .map(|i| Complex64::new(f64_at(off + 16 * i), f64_at(off + 16 * i + 8)))
            .collect();
        off += 16 * l.len();
        fields.push(SpectralScalarField::from_coeffs(l, coeffs)?);
    }
    let mut it = fields.into_iter();
    let mut vec3 = || SpectralVectorField::new(std::array::from_fn(|_| it.next().expect("six fields"))).expect("shared");
    let eta = vec3();
    let u = vec3();
    Ok(Checkpoint { state: FlowState { t, eta, u }, nu, m, omega })
}

/// Writes via a temporary file in the same directory and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no file name"))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn write_checkpoint(path: &Path, c: &Checkpoint) -> io::Result<()> {
    write_atomic(path, &encode_checkpoint(c))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, EvolutionError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| EvolutionError::Checkpoint(e.to_string()))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
pub(crate) fn taylor_green(l: Lattice) -> SpectralVectorField {
    initial_profile(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diophantine::{sample_direction, DirectionKind};

    fn dir() -> Direction {
        sample_direction(DirectionKind::Algebraic, 0).unwrap()
    }

    /// Classical RK4 on the per-mode system.
    fn rk4(a: f64, b: f64, t: f64, steps: usize, y0: [f64; 2]) -> [f64; 2] {
        let h = t / steps as f64;
        let f = |y: [f64; 2]| [y[1], -b * y[0] - a * y[1]];
        let mut y = y0;
        for _ in 0..steps {
            let k1 = f(y);
            let k2 = f([y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
            let k3 = f([y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
            let k4 = f([y[0] + h * k3[0], y[1] + h * k3[1]]);
            for i in 0..2 {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        y
    }

    #[test]
    fn propagator_identity_and_zero_mode() {
        let w = dir().omega;
        assert_eq!(linear_propagator([1, 2, 3], w, 1.0, 5.0, 0.0), [[1.0, 0.0], [-0.0, 1.0]]);
        assert_eq!(linear_propagator([0, 0, 0], w, 1.0, 5.0, 0.3), [[1.0, 0.3], [0.0, 1.0]]);
    }

    #[test]
    fn propagator_heat_limit() {
        let w = dir().omega;
        for k in [[1, 0, 0], [2, -1, 3], [5, 5, 5]] {
            let p = linear_propagator(k, w, 0.7, 0.0, 0.05);
            let a = 0.7 * wavevector(k).iter().map(|x| x * x).sum::<f64>();
            let e = (-a * 0.05).exp();
            assert!((p[1][1] - e).abs() < 1e-14);
            assert!((p[0][1] - (1.0 - e) / a).abs() < 1e-14);
            assert!((p[0][0] - 1.0).abs() < 1e-14 && p[1][0].abs() < 1e-14);
        }
    }

    #[test]
    fn propagator_matches_rk4_oracle() {
        let w = dir().omega;
        let k = [1, 0, 0];
        let dt = 0.01;
        let p = linear_propagator(k, w, 1.0, 10.0, dt);
        let a = TWO_PI * TWO_PI;
        let b = (TWO_PI * 10.0 * w[0]).powi(2);
        for y0 in [[1.0, 0.0], [0.0, 1.0]] {
            let y = rk4(a, b, dt, 10_000, y0);
            let got = [p[0][0] * y0[0] + p[0][1] * y0[1], p[1][0] * y0[0] + p[1][1] * y0[1]];
            for i in 0..2 {
                assert!((got[i] - y[i]).abs() <= 1e-10 * (1.0 + y[i].abs()), "{got:?} {y:?}");
            }
        }
    }

    #[test]
    fn propagator_regimes_agree_across_branches() {
        // semigroup property across underdamped, critical, overdamped and series branches
        for (a, b) in [(1.0, 100.0), (20.0, 100.0), (30.0, 100.0), (1e4, 1.0), (2.0, 1.0), (0.0, 400.0)] {
            let t = 0.37;
            let p = propagator_ab(a, b, t);
            let h = propagator_ab(a, b, t / 2.0);
            for i in 0..2 {
                for j in 0..2 {
                    let sq = h[i][0] * h[0][j] + h[i][1] * h[1][j];
                    assert!((sq - p[i][j]).abs() <= 1e-12 * (1.0 + p[i][j].abs()), "a={a} b={b}");
                }
            }
            // det exp(tM) = exp(t tr M)
            let det = p[0][0] * p[1][1] - p[0][1] * p[1][0];
            assert!((det - (-a * t).exp()).abs() <= 1e-12);
        }
        let big = propagator_ab(3e5, 1.0, 50.0);
        assert!(big.iter().flatten().all(|x| x.is_finite()));
    }

    #[test]
    fn linear_evolution_keeps_divergence_free_and_decays_without_field() {
        let l = Lattice::new(8).unwrap();
        let u = initial_profile(l);
        let s0 = FlowState { t: 0.0, eta: u.scale(0.01), u };
        assert_eq!(evolve_linear(&s0, dir().omega, 1.0, 3.0, 0.0).unwrap(), s0);
        let mut prev = s0.u.sobolev_norm(0);
        for t in [0.01, 0.02, 0.05, 0.1] {
            let s = evolve_linear(&s0, dir().omega, 1.0, 0.0, t).unwrap();
            assert!(s.u.divergence().sobolev_norm(0) < 1e-14);
            let now = s.u.sobolev_norm(0);
            assert!(now < prev);
            prev = now;
        }
        let mut bad = s0.clone();
        bad.u.comps_mut()[0].add_mode([1, 0, 0], Complex64::new(0.1, 0.0));
        assert!(matches!(evolve_linear(&bad, dir().omega, 1.0, 1.0, 0.1), Err(EvolutionError::NotDivergenceFree(_))));
    }

    #[test]
    fn rest_state_is_a_fixed_point() {
        let cfg = SimConfig::new(8, 1e-3, 1e-3, 1.0, 8.0, dir()).unwrap();
        let rest = FlowState::rest(cfg.lattice().unwrap());
        let next = step_nonlinear(&rest, &cfg).unwrap();
        assert_eq!(next.eta, rest.eta);
        assert_eq!(next.u, rest.u);
    }

    #[test]
    fn linear_run_satisfies_the_energy_law_to_roundoff() {
        let mut cfg = SimConfig::new(8, 1e-2, 0.5, 1.0, 16.0, dir()).unwrap();
        cfg.nonlinear = false;
        let s0 = linearized_initial_data(&make_initial_data(&cfg).unwrap()).unwrap();
        let log = run_from(&cfg, s0, |_, _| {}).unwrap();
        assert!(log.max_energy_resid < 1e-12, "{}", log.max_energy_resid);
    }

    #[test]
    fn profile_is_divergence_free_with_unit_gradient_bound() {
        let l = Lattice::new(16).unwrap();
        let v = initial_profile(l);
        assert!(v.divergence().max_abs_coeff() < 1e-15);
        assert_eq!(v.band(), 1);
        assert!((&v.leray_project() - &v).max_abs_coeff() < 1e-16);
        let grid = v.comp(0).to_grid();
        let y = [3.0, 5.0, 11.0].map(|a: f64| TWO_PI * a / 16.0);
        let expect = y[0].sin() * y[1].cos() * y[2].cos() / TWO_PI;
        assert!((grid[(3 * 16 + 5) * 16 + 11] - expect).abs() < 1e-15);
        let g = build_geometry(&v);
        assert!((g.sup_grad_eta() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn stokes_correction_round_trip() {
        let l = Lattice::new(8).unwrap();
        let mut g = SpectralScalarField::zeros(l);
        g.add_mode([1, 2, -1], Complex64::new(0.4, -0.2));
        g.add_mode([3, 0, 0], Complex64::new(0.1, 0.0));
        let w = stokes_correction(&g);
        assert!((&w.divergence() - &g).max_abs_coeff() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_and_layout() {
        let l = Lattice::new(8).unwrap();
        let u = initial_profile(l);
        let c = Checkpoint { state: FlowState { t: 0.25, eta: u.scale(0.1), u }, nu: 1.0, m: 16.0, omega: dir().omega };
        let bytes = encode_checkpoint(&c);
        assert_eq!(&bytes[..4], b"MIHD");
        assert_eq!(bytes.len(), 60 + 6 * 16 * 512);
        assert_eq!(decode_checkpoint(&bytes).unwrap(), c);
        assert!(decode_checkpoint(&bytes[..100]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.ckpt");
        write_checkpoint(&p, &c).unwrap();
        assert_eq!(read_checkpoint(&p).unwrap(), c);
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(16, 1e-3, 5.0, 1.0, 16.0, dir()).is_ok());
        assert!(SimConfig::new(15, 1e-3, 5.0, 1.0, 16.0, dir()).is_err());
        assert!(SimConfig::new(16, 0.0, 5.0, 1.0, 16.0, dir()).is_err());
        assert!(SimConfig::new(16, 0.5, 5.0, 1.0, 16.0, dir()).is_err());
        assert!(SimConfig::new(16, 3e-3, 1.0, 1.0, 16.0, dir()).is_err());
        let p = PhysicalParams { rho: 1.0, mu: 1.0, lambda: 4.0 * std::f64::consts::PI, varpi: 16.0 };
        assert!((p.m() - 16.0).abs() < 1e-14 && p.nu() == 1.0);
        let p = PhysicalParams { rho: 2.0, mu: 3.0, lambda: 5.0, varpi: 7.0 };
        assert!((p.m() * p.m() - 5.0 * 49.0 / (4.0 * std::f64::consts::PI * 2.0)).abs() < 1e-13);
        assert_eq!(p.nu(), 1.5);
    }
}
