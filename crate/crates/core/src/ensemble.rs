//! Ensemble averaging of the lab-frame polarization over many trajectories.
//!
//! Trajectories are grouped into fixed blocks of [`BLOCK`] consecutive
//! indices. Each block is accumulated sequentially in index order, and block
//! results are merged by a fixed pairwise tree, so the output bits do not
//! depend on the number of worker threads.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gamma::GammaTensor;
use crate::propagator::{EffectiveHamiltonianSample, LabFrameState};
use crate::stochastic::{
    ou_max_step, substeps, AngleLaw, CollisionSampler, DiffusionSampler, OuSampler,
    StochasticModel, TimeGrid, TrajectorySeed,
};
use crate::su2::{scale, Polarization, Rotor, Vec3};

pub const BLOCK: usize = 64;

/// Initial orientation of the moving frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameInit {
    /// `k̂` along the space-fixed `Z` axis.
    Aligned,
    /// Uniformly random orientation (Haar measure), drawn first from each
    /// trajectory's stream.
    #[default]
    Isotropic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub model: StochasticModel,
    pub gamma: GammaTensor,
    pub n_traj: usize,
    pub grid: TimeGrid,
    pub root_seed: u64,
    pub initial_u: Polarization,
    pub frame_init: FrameInit,
    /// Requested integration step for the Ornstein-Uhlenbeck runner; the
    /// automatic bound is used when absent.
    pub ou_step: Option<f64>,
}

impl EnsembleSpec {
    pub fn new(model: StochasticModel, gamma: GammaTensor, n_traj: usize, grid: TimeGrid, root_seed: u64) -> Self {
        Self {
            model,
            gamma,
            n_traj,
            grid,
            root_seed,
            initial_u: Polarization::z_up(),
            frame_init: FrameInit::default(),
            ou_step: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 {
            return Err(Error::InvalidArgument("n_traj must be at least 1".into()));
        }
        self.grid.validate()?;
        self.model.validate()
    }
}

/// Pointwise ensemble mean of the polarization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayCurve {
    pub t: Vec<f64>,
    pub mean_uz: Vec<f64>,
    pub stderr_uz: Vec<f64>,
    pub n_traj: usize,
    /// Mean of the full polarization vector.
    pub mean_u: Vec<Vec3>,
}

impl DecayCurve {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

#[derive(Clone, Debug)]
struct Moments {
    n: f64,
    mean: Vec<Vec3>,
    m2_z: Vec<f64>,
    min_z: Vec<f64>,
    max_z: Vec<f64>,
}

impl Moments {
    fn new(points: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![[0.0; 3]; points],
            m2_z: vec![0.0; points],
            min_z: vec![f64::INFINITY; points],
            max_z: vec![f64::NEG_INFINITY; points],
        }
    }

    fn push(&mut self, sample: &[Vec3]) {
        self.n += 1.0;
        let inv_n = 1.0 / self.n;
        for (i, u) in sample.iter().enumerate() {
            let m = &mut self.mean[i];
            let dz = u[2] - m[2];
            for c in 0..3 {
                m[c] += (u[c] - m[c]) * inv_n;
            }
            self.m2_z[i] += dz * (u[2] - m[2]);
            self.min_z[i] = self.min_z[i].min(u[2]);
            self.max_z[i] = self.max_z[i].max(u[2]);
        }
    }

    fn merge(a: Moments, b: Moments) -> Moments {
        if a.n == 0.0 {
            return b;
        }
        if b.n == 0.0 {
            return a;
        }
        let n = a.n + b.n;
        let wb = b.n / n;
        let mut out = a;
        for i in 0..out.mean.len() {
            let delta_z = b.mean[i][2] - out.mean[i][2];
            for c in 0..3 {
                out.mean[i][c] += (b.mean[i][c] - out.mean[i][c]) * wb;
            }
            out.m2_z[i] += b.m2_z[i] + delta_z * delta_z * out.n * wb;
            out.min_z[i] = out.min_z[i].min(b.min_z[i]);
            out.max_z[i] = out.max_z[i].max(b.max_z[i]);
        }
        out.n = n;
        out
    }

    fn tree_merge(mut parts: Vec<Moments>) -> Moments {
        while parts.len() > 1 {
            let mut next = Vec::with_capacity(parts.len().div_ceil(2));
            let mut it = parts.into_iter();
            while let Some(a) = it.next() {
                match it.next() {
                    Some(b) => next.push(Moments::merge(a, b)),
                    None => next.push(a),
                }
            }
            parts = next;
        }
        parts.pop().expect("at least one block")
    }

    fn into_curve(self, grid: &TimeGrid) -> DecayCurve {
        let n = self.n;
        let mut mean_uz = Vec::with_capacity(self.mean.len());
        let mut stderr_uz = Vec::with_capacity(self.mean.len());
        for i in 0..self.mean.len() {
            if self.min_z[i] == self.max_z[i] {
                // constant column: the mean is exact
                mean_uz.push(self.min_z[i]);
                stderr_uz.push(0.0);
            } else {
                mean_uz.push(self.mean[i][2]);
                let var = if n > 1.0 { (self.m2_z[i] / (n - 1.0)).max(0.0) } else { 0.0 };
                stderr_uz.push((var / n).sqrt());
            }
        }
        DecayCurve {
            t: grid.points(),
            mean_uz,
            stderr_uz,
            n_traj: n as usize,
            mean_u: self.mean,
        }
    }
}

/// Runs `trajectory(index, readout)` for every trajectory and reduces the
/// readouts deterministically.
fn run_ensemble<F>(n_traj: usize, grid: &TimeGrid, trajectory: F) -> DecayCurve
where
    F: Fn(u64, &mut [Vec3]) + Sync,
{
    let points = grid.n_points;
    let blocks = n_traj.div_ceil(BLOCK);
    let parts: Vec<Moments> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut moments = Moments::new(points);
            let mut buf = vec![[0.0; 3]; points];
            let end = ((b + 1) * BLOCK).min(n_traj);
            for idx in b * BLOCK..end {
                trajectory(idx as u64, &mut buf);
                moments.push(&buf);
            }
            moments
        })
        .collect();
    Moments::tree_merge(parts).into_curve(grid)
}

fn initial_frame<R: Rng + ?Sized>(init: FrameInit, rng: &mut R) -> Rotor {
    match init {
        FrameInit::Aligned => Rotor::identity(),
        FrameInit::Isotropic => loop {
            let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
            if let Ok(r) = Rotor::from_quaternion(q[0], q[1], q[2], q[3]) {
                break r;
            }
        },
    }
}

/// Dispatches on the model variant.
pub fn run(spec: &EnsembleSpec) -> Result<DecayCurve> {
    match spec.model {
        StochasticModel::Diffusion2D { .. } => run_2d(spec),
        StochasticModel::StrongCollision3D { .. } => run_3d_collisions(spec),
        StochasticModel::OuAngularVelocity3D { .. } => run_3d_ou(spec),
    }
}

/// Angular diffusion about a fixed axis (`X`). All propagators commute, so
/// each trajectory uses the closed form `u(t) = R_x(δγ⊥·ϑ(t)) u₀`.
pub fn run_2d(spec: &EnsembleSpec) -> Result<DecayCurve> {
    spec.validate()?;
    let StochasticModel::Diffusion2D { d1 } = spec.model else {
        return Err(Error::ModelMismatch {
            expected: "diffusion_2d",
            found: spec.model.name(),
        });
    };
    let dgp = spec.gamma.delta_gamma_perp();
    let u0 = spec.initial_u.vector();
    let dt = spec.grid.step();
    Ok(run_ensemble(spec.n_traj, &spec.grid, |idx, out| {
        let mut rng = TrajectorySeed::new(spec.root_seed, idx).rng();
        let mut sampler = DiffusionSampler::new(d1, dt);
        out[0] = u0;
        for slot in out.iter_mut().skip(1) {
            let theta = sampler.step(&mut rng);
            *slot = Rotor::rx(dgp * theta).rotate(u0);
        }
    }))
}

/// Poisson strong collisions with random in-plane axes. Each event applies
/// its local lab-frame propagator, carried into space-fixed coordinates by
/// the current frame orientation, and then turns the frame.
pub fn run_3d_collisions(spec: &EnsembleSpec) -> Result<DecayCurve> {
    spec.validate()?;
    let StochasticModel::StrongCollision3D {
        tau_p,
        angle_law,
        delta_t_c,
    } = spec.model
    else {
        return Err(Error::ModelMismatch {
            expected: "strong_collision_3d",
            found: spec.model.name(),
        });
    };
    if delta_t_c > 0.1 * tau_p {
        log::warn!("collision duration {delta_t_c} is not small against tau_p = {tau_p}");
    }
    let gamma = spec.gamma;
    let grid = spec.grid;
    Ok(run_ensemble(spec.n_traj, &grid, |idx, out| {
        let mut rng = TrajectorySeed::new(spec.root_seed, idx).rng();
        let frame = initial_frame(spec.frame_init, &mut rng);
        let mut state = LabFrameState::new(frame, spec.initial_u);
        let mut sampler = CollisionSampler::new(tau_p, angle_law, delta_t_c);
        let mut pending = sampler.next_event(&mut rng);
        for (i, slot) in out.iter_mut().enumerate() {
            let t = grid.time(i);
            while pending.0 <= t {
                state.collide(&pending.1, &gamma);
                pending = sampler.next_event(&mut rng);
            }
            *slot = state.polarization();
        }
    }))
}

/// Largest integration step allowed for the Ornstein-Uhlenbeck runner,
/// `min(τ_c/10, 0.1/(|δγ|·ω_rms))`.
pub fn ou_step_bound(gamma: &GammaTensor, omega_sq_mean: f64, tau_c: f64) -> f64 {
    let dg = gamma.delta_gamma_perp().abs().max(gamma.delta_gamma_par().abs());
    let phase_rate = dg * omega_sq_mean.sqrt();
    let mut bound = ou_max_step(tau_c);
    if phase_rate > 0.0 {
        bound = bound.min(0.1 / phase_rate);
    }
    bound
}

/// Isotropic Ornstein-Uhlenbeck angular velocity, integrated stepwise with
/// piecewise-constant `ω`.
pub fn run_3d_ou(spec: &EnsembleSpec) -> Result<DecayCurve> {
    run_3d_ou_strided(spec, 1)
}

/// As [`run_3d_ou`], but the OU path is sampled `stride` times finer than
/// the integration step and each step is driven by the mean of the samples
/// it covers. Runs that share `(root_seed, sampling step)` then see the same
/// underlying path, which isolates discretization error in convergence
/// studies. `stride = 1` is exactly [`run_3d_ou`].
pub fn run_3d_ou_strided(spec: &EnsembleSpec, stride: usize) -> Result<DecayCurve> {
    spec.validate()?;
    let StochasticModel::OuAngularVelocity3D {
        omega_sq_mean,
        tau_c,
    } = spec.model
    else {
        return Err(Error::ModelMismatch {
            expected: "ou_angular_velocity_3d",
            found: spec.model.name(),
        });
    };
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    let bound = ou_step_bound(&spec.gamma, omega_sq_mean, tau_c);
    let requested = match spec.ou_step {
        Some(step) if step > bound * (1.0 + 1e-12) => {
            return Err(Error::GridTooCoarse { step, max: bound });
        }
        Some(step) if step > 0.0 => step,
        Some(step) => {
            return Err(Error::InvalidArgument(format!("ou_step = {step} must be positive")));
        }
        None => bound,
    };
    let grid = spec.grid;
    let per_point = substeps(grid.step(), requested);
    let dt = grid.step() / per_point as f64;
    let sample_dt = dt / stride as f64;
    let gamma = spec.gamma;
    Ok(run_ensemble(spec.n_traj, &grid, |idx, out| {
        let mut rng = TrajectorySeed::new(spec.root_seed, idx).rng();
        let frame = initial_frame(spec.frame_init, &mut rng);
        let mut state = LabFrameState::new(frame, spec.initial_u);
        let mut ou = OuSampler::new(omega_sq_mean, tau_c, sample_dt, &mut rng);
        out[0] = state.polarization();
        for slot in out.iter_mut().skip(1) {
            for _ in 0..per_point {
                let mut omega = ou.omega();
                for _ in 1..stride {
                    let w = ou.step(&mut rng);
                    for c in 0..3 {
                        omega[c] += w[c];
                    }
                }
                if stride > 1 {
                    omega = scale(omega, 1.0 / stride as f64);
                }
                state.advance(&EffectiveHamiltonianSample { omega, gamma }, dt);
                ou.step(&mut rng);
            }
            *slot = state.polarization();
        }
    }))
}

/// Per-collision survival factor of `⟨u_Z⟩` when the collision axis is
/// isotropic in space: `(1 + 2⟨cos(δγ⊥ϑ)⟩)/3`.
pub fn isotropic_collision_factor(gamma: &GammaTensor, law: &AngleLaw) -> Result<f64> {
    let dg = gamma.delta_gamma_perp();
    let c = law.expectation(|x| (dg * x).cos())?;
    Ok((1.0 + 2.0 * c) / 3.0)
}
