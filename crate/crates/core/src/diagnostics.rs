//! Energy and dissipation functionals at graded Sobolev orders, initial-data
//! parameters, the mechanical energy law, and decay fits.
//!
//! The hierarchy is `{0, s, 2s, 3s}` (default `s = 2`) and stands in for the
//! orders `{0, 4, 8, 12}`; the highest-energy analog uses base order `3s + 1`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::evolution::{DiagnosticsRecord, FlowState, TrajectoryLog};
use crate::spectral::SpectralVectorField;

/// `[0, s, 2s, 3s]`.
pub fn hierarchy_orders(s: u32) -> [u32; 4] {
    [0, s, 2 * s, 3 * s]
}

/// Base order of the highest-energy analog.
pub fn highest_order(s: u32) -> u32 {
    3 * s + 1
}

fn grad_norm_sq(v: &SpectralVectorField, order: u32) -> f64 {
    v.comps().iter().map(|c| (0..3).map(|j| c.derivative(j).sobolev_norm_sq(order)).sum::<f64>()).sum()
}

fn d_omega_norm_sq(eta: &SpectralVectorField, omega: [f64; 3], order: u32) -> f64 {
    eta.directional_derivative(omega).sobolev_norm_sq(order)
}

/// `E_i = ||grad eta||_i^2 + ||u||_i^2 + m^2 ||d_omega eta||_i^2`.
pub fn energy_functional(state: &FlowState, m: f64, omega: [f64; 3], order: u32) -> f64 {
    grad_norm_sq(&state.eta, order) + state.u.sobolev_norm_sq(order) + m * m * d_omega_norm_sq(&state.eta, omega, order)
}

/// `D_i = ||grad u||_i^2 + m^2 ||d_omega eta||_i^2`.
pub fn dissipation_functional(state: &FlowState, m: f64, omega: [f64; 3], order: u32) -> f64 {
    grad_norm_sq(&state.u, order) + m * m * d_omega_norm_sq(&state.eta, omega, order)
}

/// `E_{h-1} + ||eta||_{h+1}^2 + m^{-2/3} (||u||_h^2 + m^2 ||d_omega eta||_h^2)`;
/// the weighted term is dropped when `m = 0`.
pub fn highest_energy_analog(state: &FlowState, m: f64, omega: [f64; 3], h: u32) -> f64 {
    assert!(h >= 1, "base order must be at least 1");
    let base = energy_functional(state, m, omega, h - 1) + state.eta.sobolev_norm_sq(h + 1);
    if m == 0.0 {
        return base;
    }
    let weighted = state.u.sobolev_norm_sq(h) + m * m * d_omega_norm_sq(&state.eta, omega, h);
    base + m.powf(-2.0 / 3.0) * weighted
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub t: f64,
    pub orders: Vec<u32>,
    pub e: Vec<f64>,
    pub d: Vec<f64>,
    pub h: u32,
    pub e_h_analog: f64,
    pub det_err: f64,
    pub diva_res: f64,
}

pub fn energy_report(
    state: &FlowState,
    m: f64,
    omega: [f64; 3],
    orders: &[u32],
    h: u32,
    det_err: f64,
    diva_res: f64,
) -> EnergyReport {
    EnergyReport {
        t: state.t,
        orders: orders.to_vec(),
        e: orders.iter().map(|&i| energy_functional(state, m, omega, i)).collect(),
        d: orders.iter().map(|&i| dissipation_functional(state, m, omega, i)).collect(),
        h,
        e_h_analog: highest_energy_analog(state, m, omega, h),
        det_err,
        diva_res,
    }
}

pub const C1: f64 = 4.0;
pub const C2: f64 = 1.0;
pub const C3: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialParams {
    pub orders: [u32; 4],
    /// Order standing in for 6 in the `theta` formula, `ceil(orders[3] / 2)`.
    pub mid_order: u32,
    pub h: u32,
    pub xi: f64,
    pub vartheta: f64,
    pub e_h0: f64,
    pub mhd_condition_lhs: f64,
    pub mhd_condition_holds: bool,
}

/// `Xi = sum_i (1 + m^-2)^i E_{o_i}` and
/// `theta = E_{o_3}^{1/8} (1 + E_{o_1}^{3/2}) Xi^{3/8} + E_c + E_c^2` with
/// `c = ceil(o_3 / 2)`, plus `m^-1 max{(c1 E_H e^{c2 theta})^{1/2}, c1 E_H e^{c2 theta}}`.
/// The `Xi` weights are taken as 1 when `m = 0`.
pub fn initial_params(state0: &FlowState, m: f64, omega: [f64; 3], orders: [u32; 4], h: u32) -> InitialParams {
    assert!(orders.windows(2).all(|w| w[0] < w[1]), "orders must ascend");
    let e = |i: u32| energy_functional(state0, m, omega, i);
    let w = if m == 0.0 { 1.0 } else { 1.0 + 1.0 / (m * m) };
    let xi: f64 = orders.iter().enumerate().map(|(i, &o)| w.powi(i as i32) * e(o)).sum();
    let mid = orders[3].div_ceil(2);
    let e_mid = e(mid);
    let vartheta = e(orders[3]).powf(0.125) * (1.0 + e(orders[1]).powf(1.5)) * xi.powf(0.375) + e_mid + e_mid * e_mid;
    let e_h0 = highest_energy_analog(state0, m, omega, h);
    let inner = C1 * e_h0 * (C2 * vartheta).exp();
    let lhs = if m == 0.0 { f64::INFINITY } else { inner.sqrt().max(inner) / m };
    InitialParams {
        orders,
        mid_order: mid,
        h,
        xi,
        vartheta,
        e_h0,
        mhd_condition_lhs: lhs,
        mhd_condition_holds: lhs <= C3,
    }
}

/// `|L(t) - L(0)| / L(0)` with `L = ||u||^2 + m^2 ||d_omega eta||^2 + 2 nu int_0^t ||grad_A u||^2`,
/// trapezoidal in time over the log's records. Absolute when `L(0) = 0`.
pub fn energy_law_residual(log: &TrajectoryLog, nu: f64) -> Vec<f64> {
    energy_law_residual_records(&log.records, nu)
}

pub fn energy_law_residual_records(records: &[DiagnosticsRecord], nu: f64) -> Vec<f64> {
    let Some(first) = records.first() else { return Vec::new() };
    let l0 = first.mech;
    let mut integral = 0.0;
    let mut out = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if i > 0 {
            let p = &records[i - 1];
            integral += 0.5 * (r.t - p.t) * (r.grad_a_u_sq + p.grad_a_u_sq);
        }
        let diff = (r.mech + 2.0 * nu * integral - l0).abs();
        out.push(if l0 == 0.0 { diff } else { diff / l0 });
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Least-squares slope of `ln E` against `ln (t + 1)`.
    pub slope: f64,
    /// `max (t + 1)^p E / Xi` over the window.
    pub max_ratio: f64,
    pub argmax_t: f64,
    pub used: usize,
    /// Nonpositive entries skipped.
    pub excluded: usize,
}

/// Fits `series` restricted to `window = (t0, t1)` (inclusive).
pub fn decay_fit(series: &[(f64, f64)], window: (f64, f64), weight_exponent: f64, xi: f64) -> DecayFit {
    let mut excluded = 0;
    let mut pts = Vec::new();
    let mut max_ratio = f64::NEG_INFINITY;
    let mut argmax_t = f64::NAN;
    for &(t, e) in series {
        if t < window.0 || t > window.1 {
            continue;
        }
        if !(e > 0.0) {
            excluded += 1;
            continue;
        }
        let tt = t + 1.0;
        pts.push((tt.ln(), e.ln()));
        let ratio = tt.powf(weight_exponent) * e / xi;
        if ratio > max_ratio {
            max_ratio = ratio;
            argmax_t = t;
        }
    }
    let slope = least_squares(&pts).0;
    DecayFit { slope, max_ratio, argmax_t, used: pts.len(), excluded }
}

/// `(slope, intercept)` of the least-squares line through `pts`.
pub fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub m: f64,
    pub t: Vec<f64>,
    /// `E^d` at each hierarchy order, one row per record.
    pub e_d: Vec<[f64; 4]>,
    /// `sup_t (E^d at the top order)^{1/2}`.
    pub sup_norm: f64,
    /// Largest spectral divergence of the linearized initial data.
    pub compatibility_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub m_values: Vec<f64>,
    pub orders: [u32; 4],
    pub epsilon: f64,
    pub t_end: f64,
    pub series: Vec<ErrorSeries>,
    pub slope: f64,
    pub intercept: f64,
}

impl ErrorReport {
    pub fn from_series(series: Vec<ErrorSeries>, orders: [u32; 4], epsilon: f64, t_end: f64) -> Self {
        let mut r = ErrorReport {
            m_values: series.iter().map(|s| s.m).collect(),
            orders,
            epsilon,
            t_end,
            series,
            slope: f64::NAN,
            intercept: f64::NAN,
        };
        (r.slope, r.intercept) = r.refit();
        r
    }

    /// Refits the log-log slope from the stored sup norms.
    pub fn refit(&self) -> (f64, f64) {
        let pts: Vec<(f64, f64)> = self.series.iter().map(|s| (s.m.ln(), s.sup_norm.ln())).collect();
        least_squares(&pts)
    }
}

/// Formats a float as the shortest decimal that parses back to the same value.
pub fn fmt_float(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e16).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub const CSV_HEADER: &str =
    "t,E0,E1,E2,E3,D0,D1,D2,D3,EH,det_err,divA_res,energy_resid,pressure_iters";

pub fn csv_row(r: &DiagnosticsRecord) -> String {
    let mut cols = vec![fmt_float(r.t)];
    cols.extend(r.e.iter().map(|&v| fmt_float(v)));
    cols.extend(r.d.iter().map(|&v| fmt_float(v)));
    cols.push(fmt_float(r.eh));
    cols.push(fmt_float(r.det_err));
    cols.push(fmt_float(r.diva_res));
    cols.push(fmt_float(r.energy_resid));
    cols.push(r.pressure_iters.to_string());
    cols.join(",")
}

pub fn write_csv<W: Write>(mut w: W, records: &[DiagnosticsRecord]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{}", csv_row(r))?;
    }
    Ok(())
}
