//! The γ-tensor coupling the moving-frame angular velocity to the pseudo spin,
//! its presets, and regime checks.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastic::StochasticModel;

/// Axially symmetric γ-tensor, diagonal in the reference frame with
/// `γ_XX = γ_YY = gamma_perp` and `γ_ZZ = gamma_par`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaTensor {
    pub gamma_par: f64,
    pub gamma_perp: f64,
}

impl GammaTensor {
    pub fn new(gamma_par: f64, gamma_perp: f64) -> Result<Self> {
        if !gamma_par.is_finite() || !gamma_perp.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "gamma principal values must be finite, got ({gamma_par}, {gamma_perp})"
            )));
        }
        Ok(Self {
            gamma_par,
            gamma_perp,
        })
    }

    /// Free-spin tensor, `γ = 1`.
    pub fn identity() -> Self {
        Self {
            gamma_par: 1.0,
            gamma_perp: 1.0,
        }
    }

    /// `γ⊥ − 1`, the lag of the pseudo spin behind the rotating frame.
    pub fn delta_gamma_perp(&self) -> f64 {
        self.gamma_perp - 1.0
    }

    pub fn delta_gamma_par(&self) -> f64 {
        self.gamma_par - 1.0
    }

    /// Reads off `Δg = γ − 1` componentwise as `(dg_perp, dg_par)`.
    pub fn delta_g(&self) -> (f64, f64) {
        (self.delta_gamma_perp(), self.delta_gamma_par())
    }

    /// `‖δg‖²` of the axial tensor, `2δγ⊥² + δγ∥²`.
    pub fn delta_g_norm_sq(&self) -> f64 {
        let p = self.delta_gamma_perp();
        let z = self.delta_gamma_par();
        2.0 * p * p + z * z
    }

    /// Scales a moving-frame vector by the principal values, `ω ∘ γ`.
    #[inline]
    pub fn scale(&self, omega: [f64; 3]) -> [f64; 3] {
        [
            omega[0] * self.gamma_perp,
            omega[1] * self.gamma_perp,
            omega[2] * self.gamma_par,
        ]
    }

    /// Scales by `γ − 1`.
    #[inline]
    pub fn scale_delta(&self, omega: [f64; 3]) -> [f64; 3] {
        let p = self.delta_gamma_perp();
        [omega[0] * p, omega[1] * p, omega[2] * self.delta_gamma_par()]
    }
}

/// First-order weak spin-orbit mapping `γ − 1 = Δg`.
///
/// Values with `|Δg| ≥ 1` are accepted with a warning: they lie outside the
/// regime where the mapping holds.
pub fn from_delta_g(dg_perp: f64, dg_par: f64) -> GammaTensor {
    if dg_perp.abs() >= 1.0 || dg_par.abs() >= 1.0 {
        warn!("Δg = ({dg_perp}, {dg_par}) is outside the first-order regime |Δg| < 1");
    }
    GammaTensor {
        gamma_par: 1.0 + dg_par,
        gamma_perp: 1.0 + dg_perp,
    }
}

/// Nuclear Kramers doublet `|m| = 1/2` isolated by a quadrupolar splitting:
/// `γ∥ = 1`, `γ⊥ = I + 1/2`.
pub fn jones_pines(nuclear_spin: f64) -> Result<GammaTensor> {
    let twice = 2.0 * nuclear_spin;
    let is_half_integer = twice.is_finite() && twice.fract() == 0.0 && twice.rem_euclid(2.0) == 1.0;
    if !is_half_integer {
        return Err(Error::InvalidArgument(format!(
            "nuclear spin I = {nuclear_spin} is not a half-integer"
        )));
    }
    if nuclear_spin < 1.5 {
        return Err(Error::InvalidArgument(format!(
            "nuclear spin I = {nuclear_spin} has no quadrupolar doublet; need I ≥ 3/2"
        )));
    }
    Ok(GammaTensor {
        gamma_par: 1.0,
        gamma_perp: nuclear_spin + 0.5,
    })
}

/// Energy and time scales entering the adiabatic and perturbative
/// conditions, in units with ħ = 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdiabaticityParams {
    pub lambda_soc: f64,
    pub delta_e: f64,
    pub tau_p: f64,
}

impl AdiabaticityParams {
    pub fn adiabatic_ratio(&self) -> f64 {
        self.delta_e * self.tau_p
    }

    pub fn perturbative_ratio(&self) -> f64 {
        self.lambda_soc / self.delta_e
    }

    pub fn is_adiabatic(&self, threshold: f64) -> bool {
        self.adiabatic_ratio() >= threshold
    }

    pub fn perturbative(&self) -> bool {
        self.perturbative_ratio() < 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeThresholds {
    /// Minimum `ΔE·τ_p`.
    pub adiabatic_min: f64,
    /// Maximum `δγ⊥·ω_rms·τ_c`.
    pub fast_motional_max: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self {
            adiabatic_min: 10.0,
            fast_motional_max: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeReport {
    /// `None` when no energy scales were supplied.
    pub adiabatic: Option<bool>,
    pub perturbative: Option<bool>,
    pub fast_motional: bool,
    pub adiabatic_ratio: Option<f64>,
    pub perturbative_ratio: Option<f64>,
    /// `|δγ⊥|·ω_rms·τ_c`: phase the pseudo spin gains relative to the frame
    /// during one correlation time of the angular velocity.
    pub motional_ratio: f64,
}

impl RegimeReport {
    pub fn all_satisfied(&self) -> bool {
        self.fast_motional && self.adiabatic != Some(false) && self.perturbative != Some(false)
    }
}

/// Checks the adiabatic, perturbative and fast-motional conditions. Never
/// fails: violations are logged as warnings and reported in the flags.
///
/// The motional ratio per model: Ornstein-Uhlenbeck uses `ω_rms = √⟨ω²⟩`
/// and `τ_c`; strong collisions use `ω = ϑ/δt_c` held over `τ_c = δt_c`,
/// which reduces to `ϑ_rms`; angular diffusion has delta-correlated `ω` and
/// a ratio of zero.
pub fn validate_regime(
    gamma: &GammaTensor,
    energies: Option<&AdiabaticityParams>,
    model: &StochasticModel,
    thresholds: &RegimeThresholds,
) -> RegimeReport {
    let motional_ratio = gamma.delta_gamma_perp().abs() * model.rotation_per_correlation_time();
    let fast_motional = motional_ratio < thresholds.fast_motional_max;
    if !fast_motional {
        warn!(
            "fast-motional condition violated: δγ⊥·ω_rms·τ_c = {motional_ratio:.4} ≥ {}",
            thresholds.fast_motional_max
        );
    }
    let (adiabatic, perturbative, adiabatic_ratio, perturbative_ratio) = match energies {
        Some(a) => {
            let ad = a.is_adiabatic(thresholds.adiabatic_min);
            let pt = a.perturbative();
            if !ad {
                warn!(
                    "adiabatic condition violated: ΔE·τ_p = {:.4} < {}",
                    a.adiabatic_ratio(),
                    thresholds.adiabatic_min
                );
            }
            if !pt {
                warn!("perturbative condition violated: λ/ΔE = {:.4}", a.perturbative_ratio());
            }
            (Some(ad), Some(pt), Some(a.adiabatic_ratio()), Some(a.perturbative_ratio()))
        }
        None => (None, None, None, None),
    };
    RegimeReport {
        adiabatic,
        perturbative,
        fast_motional,
        adiabatic_ratio,
        perturbative_ratio,
        motional_ratio,
    }
}
