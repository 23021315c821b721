//! Steady states of the feedback-driven system and their stability.
//!
//! Substituting `α_j(t) = α_j e^{iωt}` into the equations of motion gives
//! occupations `n0 = (N/2)(4+ω)/(2+ω)`, `nL = nR = (N/4)ω/(2+ω)` and a
//! quartic for ω that is quadratic in `v = (ω+2)²`:
//!
//! ```text
//! 2B v² − (a − 2) v + 4a = 0,   a = (U₀ N F)²,   B = κ² / (4 U₀⁴ η⁴ N²)
//! ```
//!
//! Real branches exist once the discriminant `(a−2)² − 32 B a` turns
//! non-negative, which fixes the critical feedback parameter `F_c`. Above it
//! the two roots `v±` give four eigenfrequencies `ω = −2 ± √v`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{FeedbackConfig, FeedbackMode, FilterState};
use crate::error::{Error, Result};
use crate::integrate::step;
use crate::model::{scattered_field, ModeState, SystemParams};

/// Discriminants below this fraction of `(a − 2)²` are treated as a double
/// root.
const DEGENERATE_DISCRIMINANT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
    Undetermined,
}

impl Stability {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stability::Stable => "stable",
            Stability::Unstable => "unstable",
            Stability::Undetermined => "undetermined",
        }
    }
}

/// Threshold of the transition and the two critical eigenfrequencies.
///
/// Index 0 of the occupation arrays belongs to `omega_c_plus`, index 1 to
/// `omega_c_minus`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub f_c: f64,
    pub omega_c_plus: f64,
    pub omega_c_minus: f64,
    pub n0_c: [f64; 2],
    pub nl_c: [f64; 2],
}

/// One stationary solution of the rotating ansatz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    /// Combined feedback parameter at which the branch was evaluated.
    pub f: f64,
    pub omega: f64,
    pub n0: f64,
    pub n_l: f64,
    pub n_r: f64,
    pub stability: Stability,
}

/// Branches at one `F`, plus the number of roots rejected for giving
/// occupations outside `[0, N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchSet {
    pub branches: Vec<Branch>,
    pub discarded: usize,
}

/// Coefficients of the quadratic in `v = (ω+2)²`.
#[derive(Debug, Clone, Copy)]
struct Quadratic {
    a: f64,
    b_coef: f64,
}

impl Quadratic {
    fn new(params: &SystemParams, f: f64) -> Self {
        let u0n = params.u0 * params.n_atoms;
        let g2 = (params.u0 * params.eta).powi(2);
        Quadratic {
            a: (u0n * f).powi(2),
            b_coef: params.kappa.powi(2) / (4.0 * g2 * g2 * params.n_atoms.powi(2)),
        }
    }

    fn discriminant(&self) -> f64 {
        (self.a - 2.0).powi(2) - 32.0 * self.b_coef * self.a
    }

    /// Roots `v` ordered large-then-small, with a flag for the double root.
    fn roots(&self) -> Option<([f64; 2], bool)> {
        let d = self.discriminant();
        let scale = (self.a - 2.0).powi(2);
        let degenerate = d.abs() <= DEGENERATE_DISCRIMINANT * scale;
        if d < 0.0 && !degenerate {
            return None;
        }
        let sq = if degenerate { 0.0 } else { d.sqrt() };
        // 2B v² − (a−2) v + 4a: the large root is free of cancellation, the
        // small one follows from the product 2a/B.
        let large = ((self.a - 2.0) + sq) / (4.0 * self.b_coef);
        let small = if large > 0.0 { 2.0 * self.a / (self.b_coef * large) } else { large };
        Some(([large, small], degenerate))
    }
}

/// `(n0, nL)` for eigenfrequency ω.
pub fn occupations_for(params: &SystemParams, omega: f64) -> (f64, f64) {
    let n = params.n_atoms;
    (0.5 * n * (4.0 + omega) / (2.0 + omega), 0.25 * n * omega / (2.0 + omega))
}

/// Left-hand side of the quartic eigenfrequency equation.
pub fn eigenfrequency_residual(params: &SystemParams, f: f64, omega: f64) -> f64 {
    let u0 = params.u0;
    let n = params.n_atoms;
    let x = (2.0 + omega).powi(2);
    let ratio = params.kappa.powi(2) * x / (4.0 * u0.powi(4) * params.eta.powi(4) * n * n);
    (4.0 + omega) * omega - 2.0 * x / (u0 * u0 * n * n * f * f) * (1.0 + ratio)
}

/// Residual divided by the magnitude of the larger of its two terms.
pub fn scaled_residual(params: &SystemParams, f: f64, omega: f64) -> f64 {
    let lhs = ((4.0 + omega) * omega).abs();
    eigenfrequency_residual(params, f, omega) / lhs.max(1.0)
}

fn require_probe(params: &SystemParams) -> Result<()> {
    params.validate()?;
    if params.eta <= 0.0 {
        return Err(Error::invalid("eta", "the probe amplitude must be > 0 for a finite threshold"));
    }
    Ok(())
}

/// Critical feedback parameter
/// `F_c = √2 κ / (U₀³ η² N²) · (1 + √(1 + (U₀² η² N / κ)²))`, the critical
/// eigenfrequencies `ω_c = −2 ± (U₀² N η² / κ) √(U₀² N² F_c² − 2)` and the
/// occupations there.
pub fn critical_feedback_parameter(params: &SystemParams) -> Result<CriticalPoint> {
    require_probe(params)?;
    let SystemParams { kappa, u0, eta, n_atoms: n } = *params;
    let x = u0 * u0 * eta * eta * n / kappa;
    let f_c = std::f64::consts::SQRT_2 * kappa / (u0.powi(3) * eta * eta * n * n) * (1.0 + 1f64.hypot(x));
    let spread = x * ((u0 * n * f_c).powi(2) - 2.0).sqrt();
    let omega_c_plus = -2.0 + spread;
    let omega_c_minus = -2.0 - spread;
    let (n0p, nlp) = occupations_for(params, omega_c_plus);
    let (n0m, nlm) = occupations_for(params, omega_c_minus);
    Ok(CriticalPoint {
        f_c,
        omega_c_plus,
        omega_c_minus,
        n0_c: [n0p, n0m],
        nl_c: [nlp, nlm],
    })
}

/// Branches at `f` together with the rejected-root count.
pub fn steady_state_solutions(params: &SystemParams, f: f64) -> Result<BranchSet> {
    require_probe(params)?;
    if !(f.is_finite() && f > 0.0) {
        return Err(Error::invalid("f", format!("must be finite and > 0, got {f}")));
    }
    let quad = Quadratic::new(params, f);
    let Some((roots, _)) = quad.roots() else {
        return Ok(BranchSet {
            branches: Vec::new(),
            discarded: 0,
        });
    };
    let n = params.n_atoms;
    let mut branches = Vec::with_capacity(4);
    let mut discarded = 0;
    for v in roots {
        if v < 0.0 {
            discarded += 2;
            continue;
        }
        for sign in [1.0, -1.0] {
            let omega = -2.0 + sign * v.sqrt();
            let (n0, n_l) = occupations_for(params, omega);
            let admissible = [n0, n_l].iter().all(|x| x.is_finite() && *x >= 0.0 && *x <= n);
            if !admissible {
                discarded += 1;
                continue;
            }
            branches.push(Branch {
                f,
                omega,
                n0,
                n_l,
                n_r: n_l,
                stability: Stability::Undetermined,
            });
        }
    }
    branches.sort_by(|x, y| x.n_l.total_cmp(&y.n_l));
    Ok(BranchSet { branches, discarded })
}

/// Admissible steady-state branches at `f`, sorted by `nL` ascending. Empty
/// below the critical point. Stability is left `Undetermined`; see
/// [`classify_stability`]. At the double root the two coincident pairs are
/// both returned.
pub fn steady_state_branches(params: &SystemParams, f: f64) -> Result<Vec<Branch>> {
    steady_state_solutions(params, f).map(|set| set.branches)
}

/// Coefficient `P` of the leading-order law `|nL − nLc| = P √(F_c δ)`,
/// `P = √(U₀²N²F_c² + 2) / (8 U₀ F_c²)`. Moving atoms into the side modes
/// takes them from the zero mode, so `n0 − n0c = −2 (nL − nLc)`.
pub fn sqrt_prefactor(params: &SystemParams, f_c: f64) -> f64 {
    let a_c = (params.u0 * params.n_atoms * f_c).powi(2);
    (a_c + 2.0).sqrt() / (8.0 * params.u0 * f_c * f_c)
}

/// Square-root approximation of one branch near threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxBranch {
    /// 0 for the branch pair born at `ω_c+`, 1 for `ω_c−`.
    pub critical_index: usize,
    /// +1 if `nL` grows with δ, −1 if it shrinks.
    pub sign: i8,
    pub n0: f64,
    pub n_l: f64,
    pub n_r: f64,
}

/// Square-root approximation of all four branches at `f ≥ F_c`, sorted by
/// `nL` ascending.
pub fn sqrt_approximation(params: &SystemParams, f: f64) -> Result<Vec<ApproxBranch>> {
    let cp = critical_feedback_parameter(params)?;
    if f.is_nan() || f < cp.f_c {
        return Err(Error::BelowCritical { f, f_c: cp.f_c });
    }
    let delta = f - cp.f_c;
    let shift = sqrt_prefactor(params, cp.f_c) * (cp.f_c * delta).sqrt();
    let mut out = Vec::with_capacity(4);
    for idx in 0..2 {
        for sign in [-1i8, 1] {
            let d = f64::from(sign) * shift;
            out.push(ApproxBranch {
                critical_index: idx,
                sign,
                n0: cp.n0_c[idx] - 2.0 * d,
                n_l: cp.nl_c[idx] + d,
                n_r: cp.nl_c[idx] + d,
            });
        }
    }
    out.sort_by(|x, y| x.n_l.total_cmp(&y.n_l));
    Ok(out)
}

impl Branch {
    /// Full amplitudes and stationary filter value of the branch, with the
    /// global phase fixed by a real positive `α₀`.
    ///
    /// From the rotating ansatz, `α_R = h α₀ / ((1 − icg)(ω+4))` and
    /// `α_L = conj(α_R)`, where `g = U₀η`, `c = 2gN / (κ(ω+2))` and
    /// `h = U₀I/2 = 2(1 + c²g²) / (U₀ F κ c²)`. The filter sits at
    /// `s* = τκ|α|²`.
    pub fn steady_state(&self, params: &SystemParams, tau: f64) -> (ModeState, FilterState) {
        let g = params.u0 * params.eta;
        let c = 2.0 * g * params.n_atoms / (params.kappa * (self.omega + 2.0));
        let h = 2.0 * (1.0 + c * c * g * g) / (params.u0 * self.f * params.kappa * c * c);
        let a0 = Complex64::new(self.n0.sqrt(), 0.0);
        let a_r = a0 * h / (Complex64::new(1.0, -c * g) * (self.omega + 4.0));
        let state = ModeState::new(a0, a_r.conj(), a_r);
        let s = tau * params.kappa * scattered_field(&state, params).norm_sqr();
        (state, FilterState::new(s))
    }
}

/// Settings of the perturb-and-integrate stability test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityProbe {
    /// Relative change applied to the side-mode occupations.
    pub kick: f64,
    /// Allowed relative excursion of every occupation.
    pub band: f64,
    pub horizon: f64,
    pub dt: f64,
}

impl Default for StabilityProbe {
    fn default() -> Self {
        StabilityProbe {
            kick: 1e-3,
            band: 0.05,
            horizon: 5.0,
            dt: 1e-4,
        }
    }
}

impl StabilityProbe {
    fn validate(&self) -> Result<()> {
        if !(self.kick > 0.0 && self.kick < 1.0) {
            return Err(Error::invalid("kick", "must lie in (0, 1)"));
        }
        if !(self.band > 0.0 && self.band.is_finite()) {
            return Err(Error::invalid("band", "must be > 0"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid("horizon", "must be > 0"));
        }
        if !(self.dt > 0.0 && self.dt < self.horizon) {
            return Err(Error::invalid("dt", "must be > 0 and below the horizon"));
        }
        Ok(())
    }
}

/// Moves a fraction `kick` of the side-mode atoms in or out while keeping
/// the total fixed.
///
/// * side modes populated, zero mode populated: side occupations scaled by
///   `1 + kick`, the zero mode absorbs the difference;
/// * side modes empty: `kick · N / 2` atoms moved into each side mode with
///   real amplitudes;
/// * zero mode empty: `kick · nL` atoms moved from R to L.
pub fn perturb(state: &ModeState, kick: f64) -> ModeState {
    let (n0, nl, nr) = state.occupations();
    let total = n0 + nl + nr;
    if nl + nr <= 0.0 {
        let side = Complex64::new((0.5 * kick * total).sqrt(), 0.0);
        let a0 = Complex64::new(((1.0 - kick) * total).sqrt(), 0.0);
        let phase = if n0 > 0.0 { state.a0 / state.a0.norm() } else { Complex64::new(1.0, 0.0) };
        return ModeState::new(a0 * phase, side * phase, side * phase);
    }
    if n0 <= 0.0 {
        let moved = (kick * nl).min(nr);
        let sl = ((nl + moved) / nl).sqrt();
        let sr = if nr > 0.0 { ((nr - moved) / nr).sqrt() } else { 0.0 };
        return ModeState::new(state.a0, state.a_l * sl, state.a_r * sr);
    }
    let side = (1.0 + kick).sqrt();
    let n0_new = (total - (nl + nr) * (1.0 + kick)).max(0.0);
    ModeState::new(state.a0 * (n0_new / n0).sqrt(), state.a_l * side, state.a_r * side)
}

/// Perturbs `state`, integrates deterministically for `probe.horizon`, and
/// reports `Stable` if every occupation stays within `probe.band` of its
/// reference value. Empty modes are measured against `band · N`.
pub fn classify_state(
    state: &ModeState,
    filter: FilterState,
    params: &SystemParams,
    fb: &FeedbackConfig,
    probe: &StabilityProbe,
) -> Result<Stability> {
    params.validate()?;
    fb.validate()?;
    probe.validate()?;
    let deterministic = FeedbackConfig {
        mode: FeedbackMode::Deterministic,
        ..*fb
    };
    let (r0, rl, rr) = state.occupations();
    let tol = |n: f64| probe.band * if n > 0.0 { n } else { params.n_atoms };
    let bounds = [(r0, tol(r0)), (rl, tol(rl)), (rr, tol(rr))];
    let within = |s: &ModeState| {
        let (a, b, c) = s.occupations();
        [a, b, c].iter().zip(&bounds).all(|(n, (reference, t))| (n - reference).abs() <= *t)
    };

    let mut current = perturb(state, probe.kick);
    let mut f = filter;
    let n_steps = (probe.horizon / probe.dt).ceil() as usize;
    for _ in 0..n_steps {
        match step(&current, f, params, &deterministic, probe.dt) {
            Ok((next, f_next)) => {
                current = next;
                f = f_next;
            }
            Err(Error::IntegrationDiverged { .. }) => return Ok(Stability::Unstable),
            Err(e) => return Err(e),
        }
        if !within(&current) {
            return Ok(Stability::Unstable);
        }
    }
    Ok(Stability::Stable)
}

/// Stability of `branch` under feedback `fb`, which must satisfy
/// `fb.gain · fb.tau = branch.f`.
pub fn classify_stability(branch: &Branch, params: &SystemParams, fb: &FeedbackConfig) -> Result<Stability> {
    classify_stability_with(branch, params, fb, &StabilityProbe::default())
}

pub fn classify_stability_with(
    branch: &Branch,
    params: &SystemParams,
    fb: &FeedbackConfig,
    probe: &StabilityProbe,
) -> Result<Stability> {
    if (fb.combined() - branch.f).abs() > 1e-9 * branch.f {
        return Err(Error::invalid(
            "gain",
            format!("K·τ = {} does not match the branch parameter F = {}", fb.combined(), branch.f),
        ));
    }
    let (state, filter) = branch.steady_state(params, fb.tau);
    classify_state(&state, filter, params, fb, probe)
}

/// Stability settings for a sweep: each point uses `K = F / tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepClassification {
    pub tau: f64,
    pub probe: StabilityProbe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub f: f64,
    pub branches: Vec<Branch>,
}

/// Branches on a uniform grid of `n_points` values from `f_min` to `f_max`.
/// With `classify`, every non-degenerate branch is probed; the points are
/// processed in parallel on the current rayon pool.
pub fn bifurcation_sweep(
    params: &SystemParams,
    f_min: f64,
    f_max: f64,
    n_points: usize,
    classify: Option<SweepClassification>,
) -> Result<Vec<SweepRow>> {
    require_probe(params)?;
    if !(f_min.is_finite() && f_max.is_finite() && f_min > 0.0 && f_min < f_max) {
        return Err(Error::invalid("f_min", format!("need 0 < f_min < f_max, got [{f_min}, {f_max}]")));
    }
    if n_points < 2 {
        return Err(Error::invalid("n_points", "must be >= 2"));
    }
    let grid: Vec<f64> = (0..n_points)
        .map(|i| {
            if i + 1 == n_points {
                f_max
            } else {
                f_min + (f_max - f_min) * i as f64 / (n_points - 1) as f64
            }
        })
        .collect();

    grid.par_iter()
        .map(|&f| {
            let mut branches = steady_state_branches(params, f)?;
            if let Some(cls) = classify {
                let fb = FeedbackConfig::proportional(f / cls.tau, cls.tau)?;
                if !is_degenerate(params, f) {
                    for b in &mut branches {
                        b.stability = classify_stability_with(b, params, &fb, &cls.probe)?;
                    }
                }
            }
            Ok(SweepRow { f, branches })
        })
        .collect()
}

fn is_degenerate(params: &SystemParams, f: f64) -> bool {
    matches!(Quadratic::new(params, f).roots(), Some((_, true)))
}

/// Branch at `f` whose `nL` is closest to `n_l`.
pub fn nearest_branch(params: &SystemParams, f: f64, n_l: f64) -> Result<Option<Branch>> {
    let branches = steady_state_branches(params, f)?;
    Ok(branches.into_iter().min_by(|a, b| (a.n_l - n_l).abs().total_cmp(&(b.n_l - n_l).abs())))
}
