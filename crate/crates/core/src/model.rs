//! Physical parameters, mode amplitudes and the semiclassical equations of
//! motion for the zero-momentum and the two counter-propagating side modes.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical constants in recoil-scaled units.
///
/// `kappa` is used both as the decay rate of the scattered mode and as the
/// photon detection rate that drives the feedback filter. The atom-probe
/// detuning is fixed to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    pub kappa: f64,
    pub u0: f64,
    pub eta: f64,
    pub n_atoms: f64,
}

impl SystemParams {
    pub fn new(kappa: f64, u0: f64, eta: f64, n_atoms: f64) -> Result<Self> {
        let params = SystemParams {
            kappa,
            u0,
            eta,
            n_atoms,
        };
        params.validate()?;
        Ok(params)
    }

    /// The reference parameter set: κ = 2500, U₀ = 0.01, η = 1,
    /// N = 10⁴.
    pub fn reference() -> Self {
        SystemParams {
            kappa: 2500.0,
            u0: 0.01,
            eta: 1.0,
            n_atoms: 1.0e4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(Error::invalid("kappa", format!("must be finite and > 0, got {}", self.kappa)));
        }
        if !(self.u0.is_finite() && self.u0 > 0.0) {
            return Err(Error::invalid("u0", format!("must be finite and > 0, got {}", self.u0)));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::invalid("eta", format!("must be finite and >= 0, got {}", self.eta)));
        }
        if !(self.n_atoms.is_finite() && self.n_atoms > 0.0) {
            return Err(Error::invalid(
                "n_atoms",
                format!("must be finite and > 0, got {}", self.n_atoms),
            ));
        }
        Ok(())
    }
}

/// Complex amplitudes of the three momentum modes.
///
/// The same type doubles as the time derivative returned by [`eom_rhs`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeState {
    pub a0: Complex64,
    pub a_l: Complex64,
    pub a_r: Complex64,
}

impl ModeState {
    pub fn new(a0: Complex64, a_l: Complex64, a_r: Complex64) -> Self {
        ModeState { a0, a_l, a_r }
    }

    /// Builds a state and checks that it holds `params.n_atoms` atoms to
    /// relative accuracy `1e-12`.
    pub fn prepared(a0: Complex64, a_l: Complex64, a_r: Complex64, params: &SystemParams) -> Result<Self> {
        let state = ModeState::new(a0, a_l, a_r);
        let total = state.total_occupation();
        if !total.is_finite() || (total - params.n_atoms).abs() > 1e-12 * params.n_atoms {
            return Err(Error::invalid(
                "state",
                format!("total occupation {total} differs from N = {}", params.n_atoms),
            ));
        }
        Ok(state)
    }

    pub fn zero() -> Self {
        let z = Complex64::new(0.0, 0.0);
        ModeState::new(z, z, z)
    }

    /// `(n0, nL, nR)`
    pub fn occupations(&self) -> (f64, f64, f64) {
        (self.a0.norm_sqr(), self.a_l.norm_sqr(), self.a_r.norm_sqr())
    }

    pub fn total_occupation(&self) -> f64 {
        self.a0.norm_sqr() + self.a_l.norm_sqr() + self.a_r.norm_sqr()
    }

    /// Multiplies every amplitude by `e^{iφ}`.
    pub fn rotated(&self, phi: f64) -> Self {
        let p = Complex64::from_polar(1.0, phi);
        ModeState::new(self.a0 * p, self.a_l * p, self.a_r * p)
    }

    pub fn is_finite(&self) -> bool {
        self.a0.is_finite() && self.a_l.is_finite() && self.a_r.is_finite()
    }

    /// `self + h * other`, componentwise.
    pub(crate) fn axpy(&self, h: f64, other: &ModeState) -> Self {
        ModeState::new(self.a0 + other.a0 * h, self.a_l + other.a_l * h, self.a_r + other.a_r * h)
    }
}

/// All atoms in the zero-momentum mode: `(√N, 0, 0)`.
pub fn uniform_state(params: &SystemParams) -> ModeState {
    let z = Complex64::new(0.0, 0.0);
    ModeState::new(Complex64::new(params.n_atoms.sqrt(), 0.0), z, z)
}

/// Adiabatically eliminated Bragg-scattered field,
/// `α = −2iU₀η(α_L*α₀ + α₀*α_R)/κ`.
pub fn scattered_field(state: &ModeState, params: &SystemParams) -> Complex64 {
    let bilinear = state.a_l.conj() * state.a0 + state.a0.conj() * state.a_r;
    Complex64::new(0.0, -2.0 * params.u0 * params.eta / params.kappa) * bilinear
}

/// Time derivative of the three amplitudes for lattice control value
/// `intensity`. The side modes rotate freely at frequency 4; the probe
/// couples them to the zero mode through the scattered field and the lattice
/// through `U₀ I / 2`. `intensity` may be negative.
pub fn eom_rhs(state: &ModeState, intensity: f64, params: &SystemParams) -> ModeState {
    let alpha = scattered_field(state, params);
    let g = params.u0 * params.eta;
    let i = Complex64::i();
    let lattice = i * (0.5 * params.u0 * intensity);

    let d0 = -i * g * (alpha.conj() * state.a_r + alpha * state.a_l) + lattice * (state.a_r + state.a_l);
    let d_l = -4.0 * i * state.a_l - i * g * alpha.conj() * state.a0 + lattice * state.a0;
    let d_r = -4.0 * i * state.a_r - i * g * alpha * state.a0 + lattice * state.a0;
    ModeState::new(d0, d_l, d_r)
}

/// Rate of change of the total occupation implied by `deriv` at `state`.
pub fn occupation_rate(state: &ModeState, deriv: &ModeState) -> f64 {
    2.0 * ((state.a0.conj() * deriv.a0).re + (state.a_l.conj() * deriv.a_l).re + (state.a_r.conj() * deriv.a_r).re)
}

/// Probe geometry satisfying the Bragg condition `2 d cos Θ = λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BraggGeometry {
    pub d: f64,
    pub lambda_probe: f64,
    pub theta: f64,
}

impl BraggGeometry {
    /// `None` when no angle satisfies the condition (`λ > 2d`).
    pub fn solve(d: f64, lambda_probe: f64) -> Result<Option<Self>> {
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::invalid("d", format!("must be > 0, got {d}")));
        }
        if !(lambda_probe.is_finite() && lambda_probe > 0.0) {
            return Err(Error::invalid("lambda_probe", format!("must be > 0, got {lambda_probe}")));
        }
        Ok(bragg_angle(d, lambda_probe).map(|theta| BraggGeometry { d, lambda_probe, theta }))
    }
}

/// Probe angle `Θ = arccos(λ / 2d)`, or `None` if `λ > 2d`.
pub fn bragg_angle(d: f64, lambda_probe: f64) -> Option<f64> {
    let c = lambda_probe / (2.0 * d);
    if !(c.is_finite() && c > 0.0 && c <= 1.0) {
        return None;
    }
    Some(c.acos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn uniform_state_holds_all_atoms_in_zero_mode() {
        let p = SystemParams::reference();
        let s = uniform_state(&p);
        assert_eq!(s.a0, c(100.0, 0.0));
        assert_eq!(s.a_l, c(0.0, 0.0));
        assert_eq!(s.a_r, c(0.0, 0.0));
        assert_abs_diff_eq!(s.total_occupation(), 1.0e4, epsilon = 1e-9);

        let p1 = SystemParams::new(2500.0, 0.01, 1.0, 1.0).unwrap();
        assert_eq!(uniform_state(&p1).a0, c(1.0, 0.0));
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(SystemParams::new(0.0, 0.01, 1.0, 1e4).is_err());
        assert!(SystemParams::new(2500.0, -0.01, 1.0, 1e4).is_err());
        assert!(SystemParams::new(2500.0, 0.01, -1.0, 1e4).is_err());
        assert!(SystemParams::new(2500.0, 0.01, 1.0, 0.0).is_err());
        assert!(SystemParams::new(2500.0, 0.01, 0.0, 1e4).is_ok());
    }

    #[test]
    fn prepared_state_checks_atom_number() {
        let p = SystemParams::reference();
        assert!(ModeState::prepared(c(100.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), &p).is_ok());
        assert!(ModeState::prepared(c(99.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), &p).is_err());
    }

    #[test]
    fn scattered_field_vanishes_without_side_modes() {
        let p = SystemParams::reference();
        assert_eq!(scattered_field(&uniform_state(&p), &p), c(0.0, 0.0));
        let s = ModeState::new(c(3.0, -7.0), c(0.0, 0.0), c(0.0, 0.0));
        assert_eq!(scattered_field(&s, &p), c(0.0, 0.0));
    }

    #[test]
    fn scattered_field_reference_value() {
        let p = SystemParams::reference();
        let s = ModeState::new(c(100.0, 0.0), c(0.01, 0.0), c(0.01, 0.0));
        let alpha = scattered_field(&s, &p);
        assert_abs_diff_eq!(alpha.re, 0.0, epsilon = 1e-20);
        assert_abs_diff_eq!(alpha.im, -1.6e-5, epsilon = 1e-18);
    }

    #[test]
    fn uniform_state_is_a_fixed_point() {
        let p = SystemParams::reference();
        let d = eom_rhs(&uniform_state(&p), 0.0, &p);
        assert_eq!(d, ModeState::zero());
    }

    #[test]
    fn isolated_side_mode_rotates_freely() {
        let p = SystemParams::reference();
        let s = ModeState::new(c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0));
        let d = eom_rhs(&s, 0.0, &p);
        assert_eq!(d.a_l, c(0.0, -4.0));
        assert_eq!(d.a0, c(0.0, 0.0));
        assert_eq!(d.a_r, c(0.0, 0.0));
    }

    #[test]
    fn reference_derivative_term_by_term() {
        // α = −1.6e-5 i; the probe term moves atoms from R to L, so the two
        // side-mode derivatives differ in the sign of their real parts.
        let p = SystemParams::reference();
        let s = ModeState::new(c(100.0, 0.0), c(0.01, 0.0), c(0.01, 0.0));
        let d = eom_rhs(&s, 0.0, &p);
        assert_abs_diff_eq!(d.a0.re, 0.0, epsilon = 1e-18);
        assert_abs_diff_eq!(d.a0.im, 0.0, epsilon = 1e-18);
        assert_abs_diff_eq!(d.a_l.re, 1.6e-5, epsilon = 1e-17);
        assert_abs_diff_eq!(d.a_l.im, -0.04, epsilon = 1e-15);
        assert_abs_diff_eq!(d.a_r.re, -1.6e-5, epsilon = 1e-17);
        assert_abs_diff_eq!(d.a_r.im, -0.04, epsilon = 1e-15);
    }

    #[test]
    fn lattice_term_feeds_side_modes_symmetrically() {
        let p = SystemParams::reference();
        let d = eom_rhs(&uniform_state(&p), 6.0, &p);
        assert_abs_diff_eq!(d.a_l.im, 3.0, epsilon = 1e-12);
        assert_eq!(d.a_l, d.a_r);
    }

    #[test]
    fn bragg_angle_cases() {
        assert_abs_diff_eq!(bragg_angle(0.5, 1.0).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(bragg_angle(1.0, 1.0).unwrap(), PI / 3.0, epsilon = 1e-15);
        assert_eq!(bragg_angle(1.0, 2.1), None);
        let g = BraggGeometry::solve(1.0, 1.0).unwrap().unwrap();
        assert!(g.theta >= 0.0 && g.theta < PI / 2.0);
        assert!(BraggGeometry::solve(-1.0, 1.0).is_err());
        assert_eq!(BraggGeometry::solve(1.0, 2.1).unwrap(), None);
    }

    fn amp() -> impl Strategy<Value = Complex64> {
        (-50.0..50.0f64, -50.0..50.0f64).prop_map(|(re, im)| Complex64::new(re, im))
    }

    fn params() -> impl Strategy<Value = SystemParams> {
        (10.0..5000.0f64, 1e-3..0.1f64, 0.0..3.0f64, 10.0..1e5f64)
            .prop_map(|(k, u, e, n)| SystemParams::new(k, u, e, n).unwrap())
    }

    proptest! {
        #[test]
        fn derivative_conserves_atom_number(a0 in amp(), al in amp(), ar in amp(),
                                            intensity in -1e3..1e3f64, p in params()) {
            let s = ModeState::new(a0, al, ar);
            let d = eom_rhs(&s, intensity, &p);
            let scale = s.total_occupation().max(1.0);
            let rate = occupation_rate(&s, &d);
            // rounding scales with the largest individual contribution
            let magnitude = 4.0 * scale * (4.0 + p.u0 * intensity.abs()
                + 4.0 * p.u0 * p.u0 * p.eta * p.eta * scale / p.kappa);
            prop_assert!(rate.abs() <= 1e-12 * magnitude, "rate {rate}");
        }

        #[test]
        fn mirror_relation_for_conjugate_side_modes(a0 in -50.0..50.0f64, al in amp(),
                                                    intensity in -1e3..1e3f64, p in params()) {
            // real a0 and a_r = conj(a_l)  =>  da_r/dt = -conj(da_l/dt)
            let s = ModeState::new(Complex64::new(a0, 0.0), al, al.conj());
            let d = eom_rhs(&s, intensity, &p);
            let diff = d.a_r + d.a_l.conj();
            prop_assert!(diff.norm() <= 1e-12 * (1.0 + d.a_l.norm()));
        }

        #[test]
        fn gauge_invariance(a0 in amp(), al in amp(), ar in amp(), phi in 0.0..6.3f64,
                            intensity in -1e3..1e3f64, p in params()) {
            let s = ModeState::new(a0, al, ar);
            let r = s.rotated(phi);
            let i1 = scattered_field(&s, &p).norm_sqr();
            let i2 = scattered_field(&r, &p).norm_sqr();
            prop_assert!((i1 - i2).abs() <= 1e-12 * i1.max(1e-300));
            let d1 = eom_rhs(&s, intensity, &p);
            let d2 = eom_rhs(&r, intensity, &p);
            for (x, y) in [(d1.a0, d2.a0), (d1.a_l, d2.a_l), (d1.a_r, d2.a_r)] {
                prop_assert!((x.norm() - y.norm()).abs() <= 1e-10 * (1.0 + x.norm()));
            }
        }
    }
}
