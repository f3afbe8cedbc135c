//! Pinned values for the baseline configuration.

use lagmhd::evolution::{make_initial_data_detailed, Stepper};
use lagmhd::{initial_params, SimConfig};

#[test]
fn baseline_initial_data_and_first_step() {
    let cfg = SimConfig::baseline();
    let d = make_initial_data_detailed(&cfg).unwrap();
    assert!(d.eta_iterations.abs_diff(12) <= 2, "{}", d.eta_iterations);
    assert!(d.u_iterations.abs_diff(17) <= 2, "{}", d.u_iterations);
    let p = initial_params(&d.state, cfg.m, cfg.omega(), cfg.orders(), cfg.highest_order());
    assert!((p.xi / 1.6316060338902e12 - 1.0).abs() < 1e-9, "{}", p.xi);

    let mut st = Stepper::new(&cfg).unwrap();
    let s1 = st.step(&d.state).unwrap();
    assert!(st.last.pressure_iters.abs_diff(22) <= 2, "{:?}", st.last);
    assert!(st.last.restore_iters.abs_diff(10) <= 2, "{:?}", st.last);
    assert!(st.last.diva_res < 1e-11);
    assert!((st.last.det_err / 3.5267645488e-6 - 1.0).abs() < 1e-6);
    assert!((s1.u.sobolev_norm_sq(0) / 8.596023552324e-3 - 1.0).abs() < 1e-9);
}
