//! Experiment orchestration and result export.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{self, ElliottScan, RateEstimate};
use crate::config::{ConfigError, ExperimentConfig, Format, Resolved, Scenario};
use crate::ensemble::{self, DecayCurve, EnsembleSpec};
use crate::error::Error;
use crate::gamma::{validate_regime, RegimeReport};
use crate::stochastic::StochasticModel;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{scenario}: {source}")]
    Runtime {
        scenario: Scenario,
        #[source]
        source: Error,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    /// Process exit status: 1 validation, 2 runtime, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(ConfigError::Io { .. }) => 3,
            RunError::Config(_) => 1,
            RunError::Runtime { .. } => 2,
            RunError::Io { .. } => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleValue {
    pub rate: f64,
    pub formula: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateRecord {
    pub label: String,
    pub estimate: RateEstimate,
    pub oracle: Option<OracleValue>,
    /// `rate/oracle − 1`.
    pub relative_deviation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveRecord {
    pub label: String,
    pub tau_p: Option<f64>,
    pub curve: DecayCurve,
    /// `exp(−rate·t)` of the analytic rate on the same grid.
    pub oracle_uz: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleTable {
    pub t: Vec<f64>,
    pub rate: OracleValue,
    pub closed_form_uz: Vec<f64>,
    /// Gaussian angle average; angular diffusion only.
    pub quadrature_uz: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngInfo {
    pub algorithm: String,
    pub stream_layout: String,
    pub root_seed: Option<u64>,
}

/// Everything a run produces except wall-clock timing, which goes to a
/// sidecar file so bundles stay byte-identical across reruns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultBundle {
    pub schema_version: u32,
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub rng: RngInfo,
    pub curves: Vec<CurveRecord>,
    pub rates: Vec<RateRecord>,
    pub elliott: Option<ElliottScan>,
    pub oracle_table: Option<OracleTable>,
    pub regime: Option<RegimeReport>,
}

fn oracle_for(r: &Resolved, model: &StochasticModel) -> Result<Option<OracleValue>, Error> {
    Ok(analysis::model_oracle_rate(&r.gamma, model)?.map(|(rate, formula)| OracleValue {
        rate,
        formula: formula.into(),
    }))
}

fn spec_for(cfg: &ExperimentConfig, r: &Resolved) -> EnsembleSpec {
    let mut spec = EnsembleSpec::new(r.model, r.gamma, cfg.n_traj, r.grid, cfg.root_seed.unwrap_or(0));
    spec.frame_init = cfg.frame_init;
    spec.ou_step = cfg.ou_step;
    spec
}

fn record(label: String, tau_p: Option<f64>, curve: DecayCurve, estimate: RateEstimate, oracle: Option<OracleValue>) -> (CurveRecord, RateRecord) {
    let oracle_uz = oracle
        .as_ref()
        .map(|o| curve.t.iter().map(|&t| (-o.rate * t).exp()).collect());
    let relative_deviation = oracle
        .as_ref()
        .filter(|o| o.rate != 0.0)
        .map(|o| estimate.rate / o.rate - 1.0);
    (
        CurveRecord {
            label: label.clone(),
            tau_p,
            curve,
            oracle_uz,
        },
        RateRecord {
            label,
            estimate,
            oracle,
            relative_deviation,
        },
    )
}

/// Executes the configured scenario. Regime violations are reported, never
/// fatal.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultBundle, RunError> {
    let r = cfg.resolve()?;
    let scenario = cfg.scenario;
    let rt = |source: Error| RunError::Runtime { scenario, source };

    let regime = cfg
        .regime_check
        .then(|| validate_regime(&r.gamma, cfg.adiabaticity.as_ref(), &r.model, &cfg.thresholds));

    let mut curves = Vec::new();
    let mut rates = Vec::new();
    let mut elliott = None;
    let mut oracle_table = None;

    match scenario {
        Scenario::Decay2d | Scenario::Decay3dCollisions | Scenario::Decay3dOu => {
            let spec = spec_for(cfg, &r);
            let curve = ensemble::run(&spec).map_err(rt)?;
            let estimate = analysis::fit_rate(&curve, cfg.fit_window).map_err(rt)?;
            let oracle = oracle_for(&r, &r.model).map_err(rt)?;
            let (c, e) = record("decay".into(), None, curve, estimate, oracle);
            curves.push(c);
            rates.push(e);
        }
        Scenario::ElliottScan => {
            let spec = spec_for(cfg, &r);
            let taus = &cfg.scan.as_ref().expect("validated").tau_p_values;
            let (scan, scan_curves) = analysis::elliott_scan_with_curves(&spec, taus).map_err(rt)?;
            for (i, (curve, &tau_p)) in scan_curves.into_iter().zip(taus).enumerate() {
                let StochasticModel::StrongCollision3D { angle_law, delta_t_c, .. } = r.model else {
                    unreachable!("validated");
                };
                let model = StochasticModel::StrongCollision3D {
                    tau_p,
                    angle_law,
                    delta_t_c,
                };
                let oracle = oracle_for(&r, &model).map_err(rt)?;
                let (c, e) = record(format!("decay_tau_p_{i}"), Some(tau_p), curve, scan.fitted_rates[i].clone(), oracle);
                curves.push(c);
                rates.push(e);
            }
            elliott = Some(scan);
        }
        Scenario::OracleTable => {
            let Some(oracle) = oracle_for(&r, &r.model).map_err(rt)? else {
                unreachable!("every model has an analytic rate");
            };
            let t = r.grid.points();
            let closed_form_uz = t.iter().map(|&x| (-oracle.rate * x).exp()).collect();
            let quadrature_uz = match r.model {
                StochasticModel::Diffusion2D { d1 } => Some(
                    t.iter()
                        .map(|&x| analysis::gaussian_average_oracle(&r.gamma, d1, x))
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(rt)?,
                ),
                _ => None,
            };
            oracle_table = Some(OracleTable {
                t,
                rate: oracle,
                closed_form_uz,
                quadrature_uz,
            });
        }
    }

    Ok(ResultBundle {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        config_hash: cfg.hash(),
        rng: RngInfo {
            algorithm: "ChaCha8".into(),
            stream_layout: "key = SplitMix64(root_seed), stream = trajectory index; scan point i uses root derive_seed(root_seed, i)".into(),
            root_seed: (scenario != Scenario::OracleTable).then_some(cfg.root_seed).flatten(),
        },
        curves,
        rates,
        elliott,
        oracle_table,
        regime,
    })
}

/// Writes `bytes` to `path` via a temporary file in the same directory and
/// an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let io = |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Creates `dir` if needed and checks that files can be created in it.
pub fn prepare_output_dir(dir: &Path) -> Result<(), RunError> {
    let io = |source| RunError::Io {
        path: dir.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    Ok(())
}

fn provenance(bundle: &ResultBundle) -> Vec<String> {
    vec![
        format!("geodephase {}", bundle.tool_version),
        format!("scenario {}", bundle.config.scenario),
        format!("config_hash {}", bundle.config_hash),
        format!(
            "root_seed {}",
            bundle.rng.root_seed.map_or_else(|| "none".into(), |s| s.to_string())
        ),
    ]
}

/// CSV of one curve: `#` provenance lines, then `t,mean_uz,stderr_uz`.
pub fn curve_csv(bundle: &ResultBundle, rec: &CurveRecord) -> String {
    let mut out = String::new();
    for line in provenance(bundle) {
        let _ = writeln!(out, "# {line}");
    }
    if let Some(tp) = rec.tau_p {
        let _ = writeln!(out, "# tau_p {tp:?}");
    }
    out.push_str("t,mean_uz,stderr_uz\n");
    let c = &rec.curve;
    for i in 0..c.len() {
        let _ = writeln!(out, "{:?},{:?},{:?}", c.t[i], c.mean_uz[i], c.stderr_uz[i]);
    }
    out
}

pub fn oracle_csv(bundle: &ResultBundle, table: &OracleTable) -> String {
    let mut out = String::new();
    for line in provenance(bundle) {
        let _ = writeln!(out, "# {line}");
    }
    let _ = writeln!(out, "# rate {:?} ({})", table.rate.rate, table.rate.formula);
    out.push_str("t,closed_form_uz,quadrature_uz\n");
    for (i, t) in table.t.iter().enumerate() {
        let q = table.quadrature_uz.as_ref().map_or_else(String::new, |q| format!("{:?}", q[i]));
        let _ = writeln!(out, "{t:?},{:?},{q}", table.closed_form_uz[i]);
    }
    out
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const MARGIN: f64 = 50.0;

fn polyline(t: &[f64], y: &[f64], t_max: f64, y_min: f64, y_max: f64, style: &str) -> String {
    let mut pts = String::new();
    for (&x, &v) in t.iter().zip(y) {
        let px = MARGIN + (SVG_W - 2.0 * MARGIN) * x / t_max;
        let py = SVG_H - MARGIN - (SVG_H - 2.0 * MARGIN) * (v - y_min) / (y_max - y_min);
        let _ = write!(pts, "{px:.2},{py:.2} ");
    }
    format!("<polyline fill=\"none\" {style} points=\"{}\"/>\n", pts.trim_end())
}

/// Line plot of `mean_uz` against `t`, with the analytic curve overlaid when
/// one exists.
pub fn curve_svg(bundle: &ResultBundle, rec: &CurveRecord) -> String {
    let c = &rec.curve;
    let t_max = c.t.last().copied().unwrap_or(1.0).max(f64::MIN_POSITIVE);
    let mut lo = c.mean_uz.iter().chain(rec.oracle_uz.iter().flatten()).cloned().fold(0.0, f64::min);
    let hi = 1.0f64;
    if hi - lo < 1e-12 {
        lo = hi - 1.0;
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">"
    );
    let _ = writeln!(s, "<!-- {} -->", provenance(bundle).join("; "));
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let (x0, y0, x1, y1) = (MARGIN, SVG_H - MARGIN, SVG_W - MARGIN, MARGIN);
    let _ = writeln!(s, "<path d=\"M{x0},{y1} L{x0},{y0} L{x1},{y0}\" stroke=\"black\" fill=\"none\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"14\">t</text>", SVG_W / 2.0, SVG_H - 15.0);
    let _ = writeln!(s, "<text x=\"15\" y=\"{}\" font-size=\"14\" transform=\"rotate(-90 15 {})\">mean u_z</text>", SVG_H / 2.0, SVG_H / 2.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{lo:.3}</text>", x0 - 5.0, y0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{hi:.3}</text>", x0 - 5.0, y1 + 4.0);
    let _ = writeln!(s, "<text x=\"{x1}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{t_max:.4}</text>", y0 + 15.0);
    s.push_str(&polyline(&c.t, &c.mean_uz, t_max, lo, hi, "stroke=\"steelblue\" stroke-width=\"1.5\" class=\"simulation\""));
    if let Some(o) = &rec.oracle_uz {
        s.push_str(&polyline(&c.t, o, t_max, lo, hi, "stroke=\"firebrick\" stroke-dasharray=\"6 4\" class=\"oracle\""));
    }
    s.push_str("</svg>\n");
    s
}

/// Serializes the bundle as pretty-printed JSON.
pub fn bundle_json(bundle: &ResultBundle) -> String {
    let mut s = serde_json::to_string_pretty(bundle).expect("bundle serializes");
    s.push('\n');
    s
}

/// Writes the requested formats into `dir`, returning the written paths.
pub fn export(bundle: &ResultBundle, formats: &[Format], dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    prepare_output_dir(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> Result<(), RunError> {
        let path = dir.join(name);
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
        Ok(())
    };
    let mut formats = formats.to_vec();
    formats.sort();
    formats.dedup();
    for f in formats {
        match f {
            Format::Csv => {
                for rec in &bundle.curves {
                    put(format!("{}.csv", rec.label), curve_csv(bundle, rec))?;
                }
                if let Some(table) = &bundle.oracle_table {
                    put("oracle.csv".into(), oracle_csv(bundle, table))?;
                }
            }
            Format::Json => put("bundle.json".into(), bundle_json(bundle))?,
            Format::Svg => {
                for rec in &bundle.curves {
                    put(format!("{}.svg", rec.label), curve_svg(bundle, rec))?;
                }
            }
        }
    }
    Ok(written)
}

#[derive(Clone, Debug, Serialize)]
pub struct Timing {
    pub config_hash: String,
    pub wall_clock_seconds: f64,
    pub threads: usize,
}

pub fn write_timing(dir: &Path, timing: &Timing) -> Result<PathBuf, RunError> {
    let path = dir.join("timing.json");
    let mut s = serde_json::to_string_pretty(timing).expect("timing serializes");
    s.push('\n');
    write_atomic(&path, s.as_bytes())?;
    Ok(path)
}

/// Analytic rate and regime report for a configuration, without sampling.
#[derive(Clone, Debug, Serialize)]
pub struct OracleSummary {
    pub scenario: Scenario,
    pub config_hash: String,
    pub delta_gamma_perp: f64,
    pub rates: Vec<(Option<f64>, OracleValue)>,
    pub regime: RegimeReport,
}

pub fn oracle_summary(cfg: &ExperimentConfig) -> Result<OracleSummary, RunError> {
    let r = cfg.resolve()?;
    let rt = |source: Error| RunError::Runtime {
        scenario: cfg.scenario,
        source,
    };
    let mut rates = Vec::new();
    match (&cfg.scan, r.model) {
        (Some(scan), StochasticModel::StrongCollision3D { angle_law, delta_t_c, .. }) => {
            for &tau_p in &scan.tau_p_values {
                let m = StochasticModel::StrongCollision3D {
                    tau_p,
                    angle_law,
                    delta_t_c,
                };
                if let Some(o) = oracle_for(&r, &m).map_err(rt)? {
                    rates.push((Some(tau_p), o));
                }
            }
        }
        _ => {
            if let Some(o) = oracle_for(&r, &r.model).map_err(rt)? {
                rates.push((None, o));
            }
        }
    }
    Ok(OracleSummary {
        scenario: cfg.scenario,
        config_hash: cfg.hash(),
        delta_gamma_perp: r.gamma.delta_gamma_perp(),
        rates,
        regime: validate_regime(&r.gamma, cfg.adiabaticity.as_ref(), &r.model, &cfg.thresholds),
    })
}
