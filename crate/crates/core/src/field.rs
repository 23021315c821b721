//! Spatial atomic density reconstructed from the mode amplitudes.
//!
//! Positions are measured in units of the pump wavelength λ₀, so the side
//! modes carry wavenumbers ±2k₀ = ±4π and
//! `ρ(x) = |α₀ + α_L e^{4πix} + α_R e^{−4πix}|² / L`. Every profile repeats
//! with period λ₀/2.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::Trajectory;
use crate::model::ModeState;

/// Spatial period of the density, in units of λ₀.
pub const DENSITY_PERIOD: f64 = 0.5;

/// Sample positions and the normalization length `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub x: Vec<f64>,
    pub length: f64,
}

impl DensityGrid {
    pub fn new(x: Vec<f64>, length: f64) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::invalid("x", "grid must not be empty"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("x", "grid positions must be finite"));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::invalid("length", format!("must be > 0, got {length}")));
        }
        Ok(DensityGrid { x, length })
    }

    /// `periods` full density periods starting at 0, both ends included,
    /// with `L` equal to the covered span.
    pub fn periodic(periods: usize, points_per_period: usize) -> Result<Self> {
        if periods == 0 || points_per_period == 0 {
            return Err(Error::invalid("periods", "need at least one period and one point per period"));
        }
        let n = periods * points_per_period;
        let h = DENSITY_PERIOD / points_per_period as f64;
        let x = (0..=n).map(|i| i as f64 * h).collect();
        DensityGrid::new(x, periods as f64 * DENSITY_PERIOD)
    }
}

impl Default for DensityGrid {
    fn default() -> Self {
        DensityGrid::periodic(3, 256).expect("static grid")
    }
}

/// `ρ(x)` on the grid.
pub fn density_profile(state: &ModeState, grid: &DensityGrid) -> Vec<f64> {
    let k = 4.0 * std::f64::consts::PI;
    grid.x
        .iter()
        .map(|&x| {
            let e = Complex64::from_polar(1.0, k * x);
            (state.a0 + state.a_l * e + state.a_r * e.conj()).norm_sqr() / grid.length
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySnapshot {
    pub t: f64,
    pub rho: Vec<f64>,
}

/// Profiles at every `stride`-th recorded sample of `traj`. The last sample
/// is always included.
pub fn density_evolution(traj: &Trajectory, grid: &DensityGrid, stride: usize) -> Vec<DensitySnapshot> {
    let stride = stride.max(1);
    let n = traj.amplitudes.len();
    let mut out: Vec<DensitySnapshot> = (0..n)
        .step_by(stride)
        .map(|i| DensitySnapshot {
            t: traj.times[i],
            rho: density_profile(&traj.amplitudes[i], grid),
        })
        .collect();
    if n > 0 && !(n - 1).is_multiple_of(stride) {
        out.push(DensitySnapshot {
            t: traj.times[n - 1],
            rho: density_profile(&traj.amplitudes[n - 1], grid),
        });
    }
    out
}

/// `(max − min) / (max + min)`; zero for a flat or empty profile.
pub fn modulation_depth(rho: &[f64]) -> f64 {
    let max = rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = rho.iter().copied().fold(f64::INFINITY, f64::min);
    if rho.is_empty() || max + min <= 0.0 {
        return 0.0;
    }
    (max - min) / (max + min)
}

/// Trapezoid rule over samples `y` at positions `x`.
pub fn integrate_trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}
