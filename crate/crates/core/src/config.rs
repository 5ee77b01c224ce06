//! Declarative experiment configuration (JSON).

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{self, FitWindow};
use crate::ensemble::FrameInit;
use crate::gamma::{self, AdiabaticityParams, GammaTensor, RegimeThresholds};
use crate::stochastic::{omega_sq_mean_for_tau_p, AngleLaw, StochasticModel, TimeGrid};

pub const DEFAULT_N_TRAJ: usize = 10_000;
pub const DEFAULT_N_POINTS: usize = 200;
/// Default horizon in units of the expected relaxation time.
pub const DEFAULT_HORIZON_RELAXATION_TIMES: f64 = 2.5;
/// Default collision duration as a fraction of `τ_p`.
pub const DEFAULT_COLLISION_FRACTION: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    #[serde(rename = "decay-2d")]
    Decay2d,
    #[serde(rename = "decay-3d-collisions")]
    Decay3dCollisions,
    #[serde(rename = "decay-3d-ou")]
    Decay3dOu,
    ElliottScan,
    OracleTable,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scenario::Decay2d => "decay-2d",
            Scenario::Decay3dCollisions => "decay-3d-collisions",
            Scenario::Decay3dOu => "decay-3d-ou",
            Scenario::ElliottScan => "elliott-scan",
            Scenario::OracleTable => "oracle-table",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrincipalValues {
    pub gamma_par: f64,
    pub gamma_perp: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaG {
    pub perp: f64,
    #[serde(default)]
    pub par: f64,
}

/// Exactly one of the three forms must be present.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub principal: Option<PrincipalValues>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_g: Option<DeltaG>,
    /// Nuclear spin `I` of the Jones-Pines preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jones_pines: Option<f64>,
}

impl GammaSpec {
    pub fn resolve(&self) -> Result<GammaTensor, String> {
        match (self.principal, self.delta_g, self.jones_pines) {
            (Some(p), None, None) => GammaTensor::new(p.gamma_par, p.gamma_perp).map_err(|e| format!("gamma.principal: {e}")),
            (None, Some(d), None) => {
                if !(d.perp.is_finite() && d.par.is_finite()) {
                    return Err("gamma.delta_g: values must be finite".into());
                }
                Ok(gamma::from_delta_g(d.perp, d.par))
            }
            (None, None, Some(i)) => gamma::jones_pines(i).map_err(|e| format!("gamma.jones_pines: {e}")),
            (None, None, None) => Err("gamma: one of principal, delta_g, jones_pines is required".into()),
            _ => Err("gamma: give exactly one of principal, delta_g, jones_pines".into()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[serde(rename = "diffusion_2d")]
    Diffusion2D,
    #[serde(rename = "strong_collision_3d")]
    StrongCollision3D,
    #[serde(rename = "ou_angular_velocity_3d")]
    OuAngularVelocity3D,
}

/// Model parameters as written in the file. The Ornstein-Uhlenbeck model
/// takes `tau_c` with either `omega_sq_mean` or `tau_p` (then
/// `⟨ω²⟩·τ_c = 1/τ_p`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_law: Option<AngleLaw>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_t_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_sq_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_c: Option<f64>,
}

impl ModelConfig {
    fn unused(&self, allowed: &[&str], errs: &mut Vec<String>) {
        let present = [
            ("d1", self.d1.is_some()),
            ("tau_p", self.tau_p.is_some()),
            ("angle_law", self.angle_law.is_some()),
            ("delta_t_c", self.delta_t_c.is_some()),
            ("omega_sq_mean", self.omega_sq_mean.is_some()),
            ("tau_c", self.tau_c.is_some()),
        ];
        for (name, set) in present {
            if set && !allowed.contains(&name) {
                errs.push(format!("model.{name} does not apply to {:?}", self.kind));
            }
        }
    }

    pub fn resolve(&self) -> Result<StochasticModel, Vec<String>> {
        let mut errs = Vec::new();
        let need = |name: &str, v: Option<f64>, errs: &mut Vec<String>| {
            if v.is_none() {
                errs.push(format!("model.{name} is required"));
            }
            v.unwrap_or(f64::NAN)
        };
        let model = match self.kind {
            ModelKind::Diffusion2D => {
                self.unused(&["d1"], &mut errs);
                StochasticModel::Diffusion2D {
                    d1: need("d1", self.d1, &mut errs),
                }
            }
            ModelKind::StrongCollision3D => {
                self.unused(&["tau_p", "angle_law", "delta_t_c"], &mut errs);
                let tau_p = need("tau_p", self.tau_p, &mut errs);
                if self.angle_law.is_none() {
                    errs.push("model.angle_law is required".into());
                }
                StochasticModel::StrongCollision3D {
                    tau_p,
                    angle_law: self.angle_law.unwrap_or(AngleLaw::Fixed { theta: 0.0 }),
                    delta_t_c: self.delta_t_c.unwrap_or(DEFAULT_COLLISION_FRACTION * tau_p),
                }
            }
            ModelKind::OuAngularVelocity3D => {
                self.unused(&["omega_sq_mean", "tau_c", "tau_p"], &mut errs);
                let tau_c = need("tau_c", self.tau_c, &mut errs);
                let omega_sq_mean = match (self.omega_sq_mean, self.tau_p) {
                    (Some(w), None) => w,
                    (None, Some(tp)) => omega_sq_mean_for_tau_p(tp, tau_c),
                    (Some(_), Some(_)) => {
                        errs.push("model: give omega_sq_mean or tau_p, not both".into());
                        f64::NAN
                    }
                    (None, None) => {
                        errs.push("model: omega_sq_mean or tau_p is required".into());
                        f64::NAN
                    }
                };
                StochasticModel::OuAngularVelocity3D { omega_sq_mean, tau_c }
            }
        };
        if errs.is_empty() {
            if let Err(e) = model.validate() {
                errs.push(format!("model: {e}"));
            }
        }
        if errs.is_empty() {
            Ok(model)
        } else {
            Err(errs)
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub t_max: Option<f64>,
    #[serde(default)]
    pub n_points: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "svg" => Ok(Format::Svg),
            other => Err(format!("unknown output format '{other}' (csv, json, svg)")),
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json, Format::Svg]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            formats: default_formats(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub tau_p_values: Vec<f64>,
}

fn default_n_traj() -> usize {
    DEFAULT_N_TRAJ
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub gamma: GammaSpec,
    pub model: ModelConfig,
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    #[serde(default)]
    pub t_grid: GridConfig,
    /// Optional only for `oracle-table`, which consumes no random numbers.
    #[serde(default)]
    pub root_seed: Option<u64>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default = "yes")]
    pub regime_check: bool,
    #[serde(default)]
    pub adiabaticity: Option<AdiabaticityParams>,
    #[serde(default)]
    pub thresholds: RegimeThresholds,
    #[serde(default)]
    pub scan: Option<ScanConfig>,
    #[serde(default)]
    pub fit_window: Option<FitWindow>,
    #[serde(default)]
    pub frame_init: FrameInit,
    #[serde(default)]
    pub ou_step: Option<f64>,
}

/// Validated, resolved view of an [`ExperimentConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub gamma: GammaTensor,
    pub model: StochasticModel,
    pub grid: TimeGrid,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.fill_defaults().map_err(ConfigError::Validation)?;
        Ok(cfg)
    }

    /// Checks every field, reporting all violations together, and writes
    /// derived defaults (grid, collision duration) back into the config.
    pub fn fill_defaults(&mut self) -> Result<Resolved, Vec<String>> {
        let mut errs = Vec::new();
        let gamma = self.gamma.resolve().map_err(|e| errs.push(e)).ok();

        if self.scenario == Scenario::ElliottScan && self.model.tau_p.is_none() {
            if let Some(first) = self.scan.as_ref().and_then(|s| s.tau_p_values.first()) {
                self.model.tau_p = Some(*first);
            }
        }
        let model = match self.model.resolve() {
            Ok(m) => Some(m),
            Err(e) => {
                errs.extend(e);
                None
            }
        };
        if let Some(StochasticModel::StrongCollision3D { delta_t_c, .. }) = model {
            self.model.delta_t_c = Some(delta_t_c);
        }

        let expected_kind = match self.scenario {
            Scenario::Decay2d => Some(ModelKind::Diffusion2D),
            Scenario::Decay3dCollisions | Scenario::ElliottScan => Some(ModelKind::StrongCollision3D),
            Scenario::Decay3dOu => Some(ModelKind::OuAngularVelocity3D),
            Scenario::OracleTable => None,
        };
        if let Some(k) = expected_kind {
            if k != self.model.kind {
                errs.push(format!("scenario {} needs model kind {:?}, got {:?}", self.scenario, k, self.model.kind));
            }
        }

        if self.n_traj == 0 {
            errs.push("n_traj must be at least 1".into());
        }
        if self.root_seed.is_none() && self.scenario != Scenario::OracleTable {
            errs.push(format!("root_seed is required for scenario {}", self.scenario));
        }
        if self.output.formats.is_empty() {
            errs.push("output.formats must not be empty".into());
        }
        match (&self.scan, self.scenario) {
            (None, Scenario::ElliottScan) => errs.push("scan.tau_p_values is required for elliott-scan".into()),
            (Some(s), Scenario::ElliottScan) => {
                if s.tau_p_values.len() < 3 {
                    errs.push("scan.tau_p_values needs at least 3 values".into());
                }
                if s.tau_p_values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    errs.push("scan.tau_p_values must be positive".into());
                }
            }
            (Some(_), _) => errs.push(format!("scan does not apply to scenario {}", self.scenario)),
            (None, _) => {}
        }
        if let Some(step) = self.ou_step {
            if self.model.kind != ModelKind::OuAngularVelocity3D {
                errs.push("ou_step applies only to the ou_angular_velocity_3d model".into());
            } else if !(step > 0.0 && step.is_finite()) {
                errs.push(format!("ou_step = {step} must be positive"));
            }
        }
        if let Some(w) = self.fit_window {
            if !(w.t_start < w.t_end) {
                errs.push(format!("fit_window: t_start {} must be below t_end {}", w.t_start, w.t_end));
            }
        }
        if let Some(a) = self.adiabaticity {
            if !(a.lambda_soc >= 0.0 && a.delta_e > 0.0 && a.tau_p > 0.0) {
                errs.push("adiabaticity: need lambda_soc ≥ 0, delta_e > 0, tau_p > 0".into());
            }
        }
        if !(self.thresholds.adiabatic_min > 0.0 && self.thresholds.fast_motional_max > 0.0) {
            errs.push("thresholds must be positive".into());
        }

        let n_points = self.t_grid.n_points.unwrap_or(DEFAULT_N_POINTS);
        if n_points < 2 {
            errs.push(format!("t_grid.n_points = {n_points} must be at least 2"));
        }
        let t_max = match (self.t_grid.t_max, gamma, model) {
            (Some(t), _, _) => Some(t),
            (None, Some(g), Some(m)) => match analysis::model_oracle_rate(&g, &m) {
                Ok(Some((rate, _))) if rate > 0.0 => Some(DEFAULT_HORIZON_RELAXATION_TIMES / rate),
                _ => {
                    errs.push("t_grid.t_max is required: no positive analytic rate to size the grid from".into());
                    None
                }
            },
            _ => None,
        };
        if let Some(t) = t_max {
            if !(t > 0.0 && t.is_finite()) {
                errs.push(format!("t_grid.t_max = {t} must be positive"));
            }
        }
        self.t_grid = GridConfig {
            t_max,
            n_points: Some(n_points),
        };

        if !errs.is_empty() {
            return Err(errs);
        }
        Ok(Resolved {
            gamma: gamma.expect("checked"),
            model: model.expect("checked"),
            grid: TimeGrid::new(t_max.expect("checked"), n_points).map_err(|e| vec![e.to_string()])?,
        })
    }

    /// Resolves an already-filled config.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        self.clone().fill_defaults().map_err(ConfigError::Validation)
    }

    /// Canonical serialization used for hashing and echo.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON with the `output` block reset, so the
    /// hash identifies the experiment rather than where its files go.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut c = self.clone();
        c.output = OutputConfig::default();
        hex::encode(Sha256::digest(c.canonical_json().as_bytes()))
    }
}

/// Reads, parses and validates a configuration file, filling defaults.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ExperimentConfig::from_json_str(&text, path)
}
