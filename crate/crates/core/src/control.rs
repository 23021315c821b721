//! Measurement filter and lattice control laws.
//!
//! The photocurrent is low-pass filtered with an exponential kernel of
//! response time τ. Because that kernel is the Green's function of
//! `ds/dt = rate − s/τ`, the filter is carried as a single state variable
//! instead of a convolution over the measurement history.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SystemParams;

/// Default seed value of the filter, `s(0) = 1e-3`.
pub const DEFAULT_S_INITIAL: f64 = 1.0e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackMode {
    /// The filter is driven by the expected photon flux `κ|α|²`.
    #[default]
    Deterministic,
    /// The filter is driven by Poisson photon counts.
    ShotNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackConfig {
    /// Proportional gain K.
    pub gain: f64,
    /// Filter response time τ.
    pub tau: f64,
    /// Derivative gain K_d.
    #[serde(default)]
    pub gain_d: f64,
    #[serde(default = "default_s_initial")]
    pub s_initial: f64,
    #[serde(default)]
    pub mode: FeedbackMode,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_s_initial() -> f64 {
    DEFAULT_S_INITIAL
}

impl FeedbackConfig {
    /// Deterministic proportional control with the default filter seed.
    pub fn proportional(gain: f64, tau: f64) -> Result<Self> {
        let fb = FeedbackConfig {
            gain,
            tau,
            gain_d: 0.0,
            s_initial: DEFAULT_S_INITIAL,
            mode: FeedbackMode::Deterministic,
            rng_seed: 0,
        };
        fb.validate()?;
        Ok(fb)
    }

    pub fn with_derivative(mut self, gain_d: f64) -> Self {
        self.gain_d = gain_d;
        self
    }

    pub fn with_s_initial(mut self, s_initial: f64) -> Self {
        self.s_initial = s_initial;
        self
    }

    pub fn with_shot_noise(mut self, seed: u64) -> Self {
        self.mode = FeedbackMode::ShotNoise;
        self.rng_seed = seed;
        self
    }

    pub fn kernel(&self) -> ExponentialKernel {
        ExponentialKernel { tau: self.tau }
    }

    /// The combined feedback parameter `F = K τ`.
    pub fn combined(&self) -> f64 {
        self.gain * self.tau
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::invalid("tau", format!("must be finite and > 0, got {}", self.tau)));
        }
        if !(self.gain.is_finite() && self.gain >= 0.0) {
            return Err(Error::invalid("gain", format!("must be finite and >= 0, got {}", self.gain)));
        }
        if !self.gain_d.is_finite() {
            return Err(Error::invalid("gain_d", "must be finite"));
        }
        if !(self.s_initial.is_finite() && self.s_initial >= 0.0) {
            return Err(Error::invalid(
                "s_initial",
                format!("must be finite and >= 0, got {}", self.s_initial),
            ));
        }
        Ok(())
    }
}

/// Filtered photocurrent `s_τ(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub s: f64,
}

impl FilterState {
    pub fn new(s: f64) -> Self {
        FilterState { s }
    }
}

/// Linear filter driven by a photon rate.
pub trait FeedbackFilter {
    fn derivative(&self, s: f64, rate: f64) -> f64;

    /// Filter value that a constant `rate` settles to.
    fn stationary(&self, rate: f64) -> f64;
}

/// `ds/dt = rate − s/τ`, the differential form of an `e^{−t/τ}` kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialKernel {
    pub tau: f64,
}

impl FeedbackFilter for ExponentialKernel {
    fn derivative(&self, s: f64, rate: f64) -> f64 {
        rate - s / self.tau
    }

    fn stationary(&self, rate: f64) -> f64 {
        rate * self.tau
    }
}

/// `ds/dt = κ|α|² − s/τ`.
pub fn filter_derivative(
    filter: FilterState,
    scattered_intensity: f64,
    params: &SystemParams,
    fb: &FeedbackConfig,
) -> f64 {
    fb.kernel().derivative(filter.s, params.kappa * scattered_intensity)
}

/// `I = K s + K_d ds/dt`. Not clamped: negative values are passed through.
pub fn control_intensity(filter: FilterState, ds_dt: f64, fb: &FeedbackConfig) -> f64 {
    fb.gain * filter.s + fb.gain_d * ds_dt
}

/// Source of photodetection counts for one trajectory.
#[derive(Debug, Clone)]
pub struct PhotonCounter {
    rng: ChaCha8Rng,
}

impl PhotonCounter {
    pub fn new(seed: u64) -> Self {
        PhotonCounter {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Draws a Poisson count with mean `mean`.
    pub fn sample(&mut self, mean: f64) -> u64 {
        if mean.is_nan() || mean <= 0.0 {
            return 0;
        }
        match Poisson::new(mean) {
            Ok(dist) => {
                let k: f64 = dist.sample(&mut self.rng);
                k as u64
            }
            // mean is positive but not finite
            Err(_) => u64::MAX,
        }
    }
}

/// Photon count over a step of length `dt`, Poisson with mean `κ|α|² dt`.
///
/// A full Poisson variate is drawn rather than a 0/1 increment, so the step
/// need not resolve individual detection events.
pub fn shot_noise_increment(
    scattered_intensity: f64,
    params: &SystemParams,
    dt: f64,
    counter: &mut PhotonCounter,
) -> u64 {
    counter.sample(params.kappa * scattered_intensity * dt)
}
