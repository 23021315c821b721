//! Semiclassical three-mode model of a Bose-Einstein condensate whose optical
//! lattice depth is driven by a feedback loop on Bragg-reflected probe light.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: parameters, mode amplitudes and the equations of motion with
//!   the scattered field eliminated adiabatically.
//! * [`control`]: the exponential measurement filter, proportional and
//!   proportional-derivative control laws, and photon-count sampling.
//! * [`integrate`]: fixed-step RK4 propagation, trajectories and settling
//!   metrics.
//! * [`analysis`]: critical point, steady-state branches from the quartic
//!   eigenfrequency equation, the square-root law near threshold, and
//!   perturbative stability classification.
//! * [`field`]: real-space density reconstruction from mode amplitudes.
//!
//! All quantities are dimensionless, with time measured in recoil units.

pub mod analysis;
pub mod control;
pub mod error;
pub mod field;
pub mod integrate;
pub mod model;

pub use analysis::{
    bifurcation_sweep, classify_state, classify_stability, critical_feedback_parameter, sqrt_approximation,
    steady_state_branches, ApproxBranch, Branch, CriticalPoint, Stability, StabilityProbe, SweepClassification,
    SweepRow,
};
pub use control::{control_intensity, filter_derivative, FeedbackConfig, FeedbackMode, FilterState, PhotonCounter};
pub use error::{Error, Result};
pub use field::{density_evolution, density_profile, DensityGrid, DensitySnapshot};
pub use integrate::{settling_time, simulate, step, IntegratorConfig, Trajectory};
pub use model::{bragg_angle, eom_rhs, scattered_field, uniform_state, BraggGeometry, ModeState, SystemParams};

pub use num_complex::Complex64;
