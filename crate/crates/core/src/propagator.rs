//! Deterministic evolution of the Kramers doublet.
//!
//! In the moving frame whose `Z` axis follows `k̂`, the doublet evolves under
//! `H_eff = −½ (ω∘γ)·σ`. Over a step of length `dt` with constant `ω` this is
//! the rotor with rotation vector `(ω∘γ)·dt`. The frame itself turns by the
//! rotor with rotation vector `ω·dt`; undoing that turn gives the local
//! lab-frame propagator, a rotation by `(ω∘(γ − 1))·dt` to first order and
//! exactly so when all steps share one axis.
//!
//! Sign convention: a positive `ϑ` about `n̂` turns `k̂` and, with `γ⊥ = 2`,
//! drags the pseudo spin along with it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gamma::GammaTensor;
use crate::su2::{compose, inverse, norm, scale, Polarization, Rotor, RotorChain, Vec3};

/// A single reorientation of `k̂` by `theta` about an axis in the local `XY`
/// plane, lasting `duration`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    axis: Vec3,
    theta: f64,
    duration: f64,
}

impl CollisionEvent {
    pub const AXIS_TOL: f64 = 1e-12;

    pub fn new(axis: Vec3, theta: f64, duration: f64) -> Result<Self> {
        let n = norm(axis);
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::InvalidArgument(format!("bad collision axis {axis:?}")));
        }
        let axis = scale(axis, 1.0 / n);
        if axis[2].abs() > Self::AXIS_TOL {
            return Err(Error::InvalidArgument(format!(
                "collision axis {axis:?} has a component along k̂"
            )));
        }
        if !(theta > -std::f64::consts::PI && theta <= std::f64::consts::PI) {
            return Err(Error::InvalidArgument(format!(
                "collision angle {theta} outside (-π, π]"
            )));
        }
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "collision duration {duration} must be positive"
            )));
        }
        Ok(Self {
            axis,
            theta,
            duration,
        })
    }

    /// In-plane axis at azimuth `alpha`.
    pub fn in_plane(alpha: f64, theta: f64, duration: f64) -> Result<Self> {
        let (s, c) = alpha.sin_cos();
        Self::new([c, s, 0.0], theta, duration)
    }

    pub fn axis(&self) -> Vec3 {
        self.axis
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Angular speed `ϑ / δt_c`.
    pub fn omega(&self) -> f64 {
        self.theta / self.duration
    }

    /// Rotation of the moving frame produced by the event.
    pub fn frame_rotor(&self) -> Rotor {
        Rotor::from_axis_angle(self.axis, self.theta)
    }
}

/// Instantaneous angular velocity of the moving frame together with the
/// coupling tensor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveHamiltonianSample {
    pub omega: Vec3,
    pub gamma: GammaTensor,
}

impl EffectiveHamiltonianSample {
    /// Effective field `ω∘γ`; `H_eff = −½ field·σ`.
    pub fn field(&self) -> Vec3 {
        self.gamma.scale(self.omega)
    }

    pub fn step_rotor(&self, dt: f64) -> Rotor {
        Rotor::from_rotation_vector(scale(self.field(), dt))
    }

    pub fn frame_step_rotor(&self, dt: f64) -> Rotor {
        Rotor::from_rotation_vector(scale(self.omega, dt))
    }
}

/// Moving-frame propagator of a single collision: rotation by `ϑγ⊥`.
pub fn collision_rotor_m_frame(e: &CollisionEvent, g: &GammaTensor) -> Rotor {
    Rotor::from_axis_angle(e.axis, e.theta * g.gamma_perp)
}

/// Local lab-frame propagator of a single collision: rotation by `ϑδγ⊥`.
pub fn collision_rotor_lab_frame(e: &CollisionEvent, g: &GammaTensor) -> Rotor {
    to_lab_frame(collision_rotor_m_frame(e, g), e.frame_rotor())
}

/// Undoes the frame rotation: `frame⁻¹ ∘ m_rotor`.
pub fn to_lab_frame(m_rotor: Rotor, frame_rotation: Rotor) -> Rotor {
    compose(inverse(frame_rotation), m_rotor)
}

/// Time-ordered product of the per-step moving-frame rotors for
/// piecewise-constant samples of width `dt`.
pub fn integrate_piecewise(samples: &[EffectiveHamiltonianSample], dt: f64) -> Result<Rotor> {
    if samples.is_empty() {
        return Err(Error::EmptySequence);
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("step dt = {dt} must be positive")));
    }
    let mut chain = RotorChain::new();
    for s in samples {
        chain.push_after(s.step_rotor(dt));
    }
    Ok(chain.finish())
}

/// Local lab-frame propagator for one piecewise-constant step.
pub fn lab_step_rotor(sample: &EffectiveHamiltonianSample, dt: f64) -> Rotor {
    to_lab_frame(sample.step_rotor(dt), sample.frame_step_rotor(dt))
}

/// Pseudo-spin polarization in the space-fixed frame together with the
/// current orientation of the moving frame.
///
/// Each local propagator is written in moving-frame coordinates; it is
/// carried into space-fixed coordinates by conjugating with the current frame
/// orientation before it acts on `u`. The orientation then advances by the
/// frame rotor in body coordinates.
#[derive(Clone, Copy, Debug)]
pub struct LabFrameState {
    frame: RotorChain,
    u: Vec3,
}

impl LabFrameState {
    pub fn new(frame_orientation: Rotor, u: Polarization) -> Self {
        Self {
            frame: RotorChain::starting_at(frame_orientation),
            u: u.vector(),
        }
    }

    pub fn polarization(&self) -> Vec3 {
        self.u
    }

    /// Orientation of the moving frame (maps frame coordinates to space-fixed).
    pub fn frame(&self) -> Rotor {
        self.frame.rotor()
    }

    /// Direction of `k̂` in space-fixed coordinates.
    pub fn k_hat(&self) -> Vec3 {
        self.frame.rotor().rotate([0.0, 0.0, 1.0])
    }

    pub fn collide(&mut self, e: &CollisionEvent, g: &GammaTensor) {
        let local = collision_rotor_lab_frame(e, g);
        self.u = local.conjugated_by(self.frame.rotor()).rotate(self.u);
        self.frame.push_before(e.frame_rotor());
    }

    pub fn advance(&mut self, sample: &EffectiveHamiltonianSample, dt: f64) {
        let frame_step = sample.frame_step_rotor(dt);
        let local = frame_step.inverse().mul_raw(sample.step_rotor(dt));
        self.u = local.conjugated_by(self.frame.rotor()).rotate(self.u);
        self.frame.push_before(frame_step);
    }
}
