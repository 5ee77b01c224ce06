//! Random motion of the moving frame.
//!
//! Three processes are provided: angular diffusion about a fixed axis, Poisson
//! strong collisions about random in-plane axes, and an isotropic
//! Ornstein-Uhlenbeck angular velocity.
//!
//! # Random streams
//!
//! Every trajectory owns a ChaCha8 stream. The 256-bit key is four successive
//! SplitMix64 outputs seeded with the root seed (little-endian words), and the
//! stream id is the trajectory index. Given `(root_seed, index)` the draws are
//! identical on every platform and independent of how trajectories are
//! scheduled across threads. Within a trajectory, draws are consumed in the
//! order documented on each sampler.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagator::CollisionEvent;
use crate::quadrature;
use crate::su2::Vec3;

/// SplitMix64 output function applied to `state + golden gamma`.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child root seed for sub-experiment `label` (used by parameter scans).
pub fn derive_seed(root: u64, label: u64) -> u64 {
    splitmix64(root ^ splitmix64(label))
}

/// `(root seed, trajectory index)` pair identifying one random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectorySeed {
    pub root: u64,
    pub index: u64,
}

impl TrajectorySeed {
    pub fn new(root: u64, index: u64) -> Self {
        Self { root, index }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = self.root;
        for chunk in key.chunks_exact_mut(8) {
            let word = splitmix64(state);
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.index);
        rng
    }
}

impl From<u64> for TrajectorySeed {
    fn from(root: u64) -> Self {
        Self { root, index: 0 }
    }
}

/// Uniform grid `t_i = i·t_max/(n_points − 1)`, `i = 0..n_points`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t_max: f64,
    pub n_points: usize,
}

impl TimeGrid {
    pub fn new(t_max: f64, n_points: usize) -> Result<Self> {
        let g = Self { t_max, n_points };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "t_max = {} must be positive",
                self.t_max
            )));
        }
        if self.n_points < 2 {
            return Err(Error::InvalidArgument(format!(
                "time grid needs at least 2 points, got {}",
                self.n_points
            )));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        self.t_max / (self.n_points - 1) as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.t_max
        } else {
            i as f64 * self.step()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.time(i)).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            t_max: self.t_max * factor,
            n_points: self.n_points,
        }
    }
}

/// Distribution of the scattering angle of one collision. Draws outside
/// `(−π, π]` are rejected and redrawn, never wrapped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum AngleLaw {
    Fixed { theta: f64 },
    Gaussian { sigma: f64 },
    Exponential { mean: f64 },
}

impl AngleLaw {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            AngleLaw::Fixed { theta } => theta > -PI && theta <= PI,
            AngleLaw::Gaussian { sigma } => sigma >= 0.0 && sigma.is_finite(),
            AngleLaw::Exponential { mean } => mean >= 0.0 && mean.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid angle law {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            AngleLaw::Fixed { theta } => theta,
            AngleLaw::Gaussian { sigma } => loop {
                let z: f64 = rng.sample(StandardNormal);
                let theta = sigma * z;
                if theta > -PI && theta <= PI {
                    break theta;
                }
            },
            AngleLaw::Exponential { mean } => loop {
                let e: f64 = rng.sample(Exp1);
                let theta = mean * e;
                if theta <= PI {
                    break theta;
                }
            },
        }
    }

    /// `E[f(ϑ)]` under the truncated law, by quadrature for the continuous
    /// laws.
    pub fn expectation<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64> {
        const TOL: f64 = 1e-13;
        match *self {
            AngleLaw::Fixed { theta } => Ok(f(theta)),
            AngleLaw::Gaussian { sigma: 0.0 } => Ok(f(0.0)),
            AngleLaw::Exponential { mean: 0.0 } => Ok(f(0.0)),
            AngleLaw::Gaussian { sigma } => {
                let w = |x: f64| (-0.5 * (x / sigma).powi(2)).exp();
                let z = quadrature::integrate(w, -PI, PI, TOL)?;
                let num = quadrature::integrate(|x| w(x) * f(x), -PI, PI, TOL)?;
                Ok(num / z)
            }
            AngleLaw::Exponential { mean } => {
                let w = |x: f64| (-x / mean).exp();
                let z = quadrature::integrate(w, 0.0, PI, TOL)?;
                let num = quadrature::integrate(|x| w(x) * f(x), 0.0, PI, TOL)?;
                Ok(num / z)
            }
        }
    }

    pub fn second_moment(&self) -> f64 {
        self.expectation(|x| x * x)
            .expect("smooth integrand on a finite interval")
    }

    pub fn rms(&self) -> f64 {
        self.second_moment().sqrt()
    }
}

/// Random process driving the moving frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StochasticModel {
    /// Angular diffusion about a fixed axis with coefficient `d1`
    /// (`Var ϑ(t) = 2·d1·t`).
    #[serde(rename = "diffusion_2d")]
    Diffusion2D { d1: f64 },
    /// Poisson collisions with mean waiting time `tau_p`; axes uniform in the
    /// plane perpendicular to the current `k̂`.
    #[serde(rename = "strong_collision_3d")]
    StrongCollision3D {
        tau_p: f64,
        angle_law: AngleLaw,
        delta_t_c: f64,
    },
    /// Stationary isotropic Ornstein-Uhlenbeck angular velocity with
    /// `⟨ω_i(0)ω_i(t)⟩ = omega_sq_mean·exp(−t/tau_c)` for each Cartesian
    /// component `i`.
    #[serde(rename = "ou_angular_velocity_3d")]
    OuAngularVelocity3D { omega_sq_mean: f64, tau_c: f64 },
}

impl StochasticModel {
    pub fn name(&self) -> &'static str {
        match self {
            StochasticModel::Diffusion2D { .. } => "diffusion_2d",
            StochasticModel::StrongCollision3D { .. } => "strong_collision_3d",
            StochasticModel::OuAngularVelocity3D { .. } => "ou_angular_velocity_3d",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && !v.is_nan() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} = {v} must be positive")))
            }
        };
        let non_negative = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} = {v} must be non-negative")))
            }
        };
        match *self {
            StochasticModel::Diffusion2D { d1 } => non_negative("d1", d1),
            StochasticModel::StrongCollision3D {
                tau_p,
                angle_law,
                delta_t_c,
            } => {
                positive("tau_p", tau_p)?;
                positive("delta_t_c", delta_t_c)?;
                angle_law.validate()
            }
            StochasticModel::OuAngularVelocity3D {
                omega_sq_mean,
                tau_c,
            } => {
                non_negative("omega_sq_mean", omega_sq_mean)?;
                positive("tau_c", tau_c)
            }
        }
    }

    /// Typical frame rotation angle accumulated over one correlation time of
    /// the angular velocity, `ω_rms·τ_c`.
    pub fn rotation_per_correlation_time(&self) -> f64 {
        match *self {
            StochasticModel::Diffusion2D { .. } => 0.0,
            StochasticModel::StrongCollision3D { angle_law, .. } => angle_law.rms(),
            StochasticModel::OuAngularVelocity3D {
                omega_sq_mean,
                tau_c,
            } => omega_sq_mean.sqrt() * tau_c,
        }
    }
}

/// `⟨ω²⟩` for which `⟨ω²⟩·τ_c = 1/τ_p`.
pub fn omega_sq_mean_for_tau_p(tau_p: f64, tau_c: f64) -> f64 {
    1.0 / (tau_p * tau_c)
}

/// Momentum relaxation time equivalent to `(⟨ω²⟩, τ_c)`.
pub fn tau_p_for_omega(omega_sq_mean: f64, tau_c: f64) -> f64 {
    1.0 / (omega_sq_mean * tau_c)
}

/// Sampled realization of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Trajectory {
    /// Cumulative rotation angle about the fixed axis.
    Angle {
        t: Vec<f64>,
        theta: Vec<f64>,
        seed: TrajectorySeed,
    },
    /// Collision events with their start times, in time order.
    Collisions {
        horizon: f64,
        events: Vec<(f64, CollisionEvent)>,
        seed: TrajectorySeed,
    },
    /// Angular velocity (moving-frame components) on a uniform grid; each
    /// value holds until the next grid point.
    AngularVelocity {
        t: Vec<f64>,
        omega: Vec<Vec3>,
        seed: TrajectorySeed,
    },
}

impl Trajectory {
    pub fn seed(&self) -> TrajectorySeed {
        match self {
            Trajectory::Angle { seed, .. }
            | Trajectory::Collisions { seed, .. }
            | Trajectory::AngularVelocity { seed, .. } => *seed,
        }
    }
}

/// Wiener angle increments. One standard normal per grid step.
#[derive(Clone, Debug)]
pub struct DiffusionSampler {
    step_sd: f64,
    theta: f64,
}

impl DiffusionSampler {
    pub fn new(d1: f64, dt: f64) -> Self {
        Self {
            step_sd: (2.0 * d1 * dt).sqrt(),
            theta: 0.0,
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    #[inline]
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.theta += self.step_sd * z;
        self.theta
    }
}

pub fn sample_diffusion_2d(d1: f64, grid: &TimeGrid, seed: TrajectorySeed) -> Result<Trajectory> {
    StochasticModel::Diffusion2D { d1 }.validate()?;
    grid.validate()?;
    let mut rng = seed.rng();
    let mut sampler = DiffusionSampler::new(d1, grid.step());
    let mut theta = Vec::with_capacity(grid.n_points);
    theta.push(0.0);
    for _ in 1..grid.n_points {
        theta.push(sampler.step(&mut rng));
    }
    Ok(Trajectory::Angle {
        t: grid.points(),
        theta,
        seed,
    })
}

/// Poisson collision stream. Per event the draws are: waiting time
/// (`Exp1`), scattering angle (per [`AngleLaw::sample`]), axis azimuth
/// (uniform on `[0, 2π)`).
#[derive(Clone, Debug)]
pub struct CollisionSampler {
    tau_p: f64,
    angle_law: AngleLaw,
    delta_t_c: f64,
    clock: f64,
}

impl CollisionSampler {
    pub fn new(tau_p: f64, angle_law: AngleLaw, delta_t_c: f64) -> Self {
        Self {
            tau_p,
            angle_law,
            delta_t_c,
            clock: 0.0,
        }
    }

    /// Next event and its start time. The azimuth is relative to the moving
    /// frame, so the axis is uniform in the plane perpendicular to `k̂`.
    #[inline]
    pub fn next_event<R: Rng + ?Sized>(&mut self, rng: &mut R) -> (f64, CollisionEvent) {
        let wait: f64 = rng.sample(Exp1);
        self.clock += self.tau_p * wait;
        let theta = self.angle_law.sample(rng);
        let alpha = rng.gen::<f64>() * TAU;
        let event = CollisionEvent::in_plane(alpha, theta, self.delta_t_c)
            .expect("sampled events satisfy the event invariants");
        (self.clock, event)
    }
}

pub fn sample_collisions(
    tau_p: f64,
    angle_law: AngleLaw,
    delta_t_c: f64,
    horizon: f64,
    seed: TrajectorySeed,
) -> Result<Trajectory> {
    StochasticModel::StrongCollision3D {
        tau_p,
        angle_law,
        delta_t_c,
    }
    .validate()?;
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon = {horizon} must be positive")));
    }
    if delta_t_c > 0.1 * tau_p {
        log::warn!("collision duration {delta_t_c} is not small against tau_p = {tau_p}");
    }
    let mut rng = seed.rng();
    let mut sampler = CollisionSampler::new(tau_p, angle_law, delta_t_c);
    let mut events = Vec::new();
    loop {
        let (t, e) = sampler.next_event(&mut rng);
        if t > horizon {
            break;
        }
        events.push((t, e));
    }
    Ok(Trajectory::Collisions {
        horizon,
        events,
        seed,
    })
}

/// Exact discretization of the stationary OU process at a fixed step.
/// The initial value is drawn from the stationary law (three normals), then
/// each step consumes three normals (x, y, z).
#[derive(Clone, Debug)]
pub struct OuSampler {
    decay: f64,
    kick: f64,
    omega: Vec3,
}

impl OuSampler {
    pub fn new<R: Rng + ?Sized>(omega_sq_mean: f64, tau_c: f64, dt: f64, rng: &mut R) -> Self {
        let sd = omega_sq_mean.sqrt();
        let decay = (-dt / tau_c).exp();
        let kick = sd * (-(-2.0 * dt / tau_c).exp_m1()).sqrt();
        let mut omega = [0.0; 3];
        for w in &mut omega {
            let z: f64 = rng.sample(StandardNormal);
            *w = sd * z;
        }
        Self { decay, kick, omega }
    }

    pub fn omega(&self) -> Vec3 {
        self.omega
    }

    #[inline]
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec3 {
        for w in &mut self.omega {
            let z: f64 = rng.sample(StandardNormal);
            *w = self.decay * *w + self.kick * z;
        }
        self.omega
    }
}

/// Largest step the OU sampler accepts, `τ_c/10`.
pub fn ou_max_step(tau_c: f64) -> f64 {
    0.1 * tau_c
}

/// Samples `ω(t)` on `grid`, subdividing each grid interval evenly so that the
/// sampling step does not exceed `τ_c/10`. The returned trajectory lives on
/// the refined grid.
pub fn sample_ou_omega(
    omega_sq_mean: f64,
    tau_c: f64,
    grid: &TimeGrid,
    seed: TrajectorySeed,
) -> Result<Trajectory> {
    StochasticModel::OuAngularVelocity3D {
        omega_sq_mean,
        tau_c,
    }
    .validate()?;
    grid.validate()?;
    let sub = substeps(grid.step(), ou_max_step(tau_c));
    let fine = TimeGrid {
        t_max: grid.t_max,
        n_points: (grid.n_points - 1) * sub + 1,
    };
    let mut rng = seed.rng();
    let mut sampler = OuSampler::new(omega_sq_mean, tau_c, fine.step(), &mut rng);
    let mut omega = Vec::with_capacity(fine.n_points);
    omega.push(sampler.omega());
    for _ in 1..fine.n_points {
        omega.push(sampler.step(&mut rng));
    }
    Ok(Trajectory::AngularVelocity {
        t: fine.points(),
        omega,
        seed,
    })
}

/// Number of equal substeps of `interval` needed to stay at or below `max_step`.
pub fn substeps(interval: f64, max_step: f64) -> usize {
    let n = (interval / max_step * (1.0 - 1e-12)).ceil();
    (n as usize).max(1)
}
