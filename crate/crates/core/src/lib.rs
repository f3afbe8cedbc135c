//! Pseudospectral simulation of incompressible, viscous, non-resistive MHD in
//! Lagrangian coordinates on the periodic unit box.
//!
//! The unknowns are the displacement `eta` of the flow map `zeta = y + eta`
//! and the velocity `u`, evolved under
//!
//! ```text
//! eta_t = u,   u_t + grad_A q - nu Lap_A u = m^2 d_omega^2 eta,   div_A u = 0
//! ```
//!
//! where `A` is the cofactor matrix of `grad zeta`.

pub mod diagnostics;
pub mod diophantine;
pub mod error;
pub mod evolution;
mod fft;
pub mod geometry;
pub mod pressure;
pub mod quadrature;
pub mod spectral;

pub use diagnostics::{
    decay_fit, dissipation_functional, energy_functional, energy_law_residual, energy_report, highest_energy_analog,
    initial_params, DecayFit, EnergyReport, ErrorReport, InitialParams,
};
pub use diophantine::{certify_direction, poincare_constant, sample_direction, Direction, DirectionKind, Provenance};
pub use error::{DiophantineError, EvolutionError, GeometryError, PressureError, SpectralError};
pub use evolution::{
    compare_with_linear, evolve_linear, linear_propagator, linearized_initial_data, make_initial_data,
    run_error_experiment, run_simulation, step_nonlinear, Comparison, DiagnosticsRecord, FlowState, PhysicalParams,
    Scheme, SimConfig, Stepper, TrajectoryLog,
};
pub use geometry::{build_geometry, div_a, div_residual, grad_a, laplacian_a, recover_magnetic, GeometryBundle};
pub use pressure::{pressure_source, solve_pressure, solve_pressure_seeded, PressureSolveReport};
pub use spectral::{
    dealiased_product, forward_transform, inverse_transform, Lattice, SpectralScalarField, SpectralVectorField,
};
