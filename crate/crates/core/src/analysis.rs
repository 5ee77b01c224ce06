//! Relaxation-rate extraction, analytic rate formulas and Elliott scans.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::ensemble::{self, DecayCurve, EnsembleSpec};
use crate::error::{Error, Result};
use crate::gamma::GammaTensor;
use crate::quadrature;
use crate::stochastic::{derive_seed, StochasticModel};

pub const MIN_FIT_POINTS: usize = 8;
/// Smallest mean polarization admitted to the log fit.
pub const LOG_FLOOR: f64 = 0.05;
pub const WINDOW_START_BELOW: f64 = 0.95;
pub const WINDOW_END_AT: f64 = 0.2;
/// Required linearity of rate against `1/τ_p` in an Elliott scan.
pub const ELLIOTT_MIN_R2: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    LogLinear,
    NonlinearLs,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitWindow {
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateEstimate {
    pub rate: f64,
    pub rate_stderr: f64,
    pub amplitude: f64,
    pub fit_window: FitWindow,
    pub points: usize,
    pub residual_rms: f64,
    pub method: FitMethod,
    /// Residuals exceed three times the level implied by the curve's
    /// standard errors.
    pub non_exponential: bool,
}

fn default_window(curve: &DecayCurve) -> (usize, usize) {
    let n = curve.len();
    let start = curve
        .mean_uz
        .iter()
        .position(|&m| m < WINDOW_START_BELOW)
        .unwrap_or(0);
    let end = curve.mean_uz[start..]
        .iter()
        .position(|&m| m <= WINDOW_END_AT)
        .map(|k| start + k + 1)
        .unwrap_or(n);
    (start, end)
}

struct LinearFit {
    intercept: f64,
    slope: f64,
    slope_var: f64,
}

/// Weighted straight-line fit `y = a + b·x`. With `weights = None` the
/// slope variance is scaled by the residual variance.
fn linear_fit(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> LinearFit {
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        sw += w(i);
        sx += w(i) * x[i];
        sy += w(i) * y[i];
    }
    let (xm, ym) = (sx / sw, sy / sw);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for i in 0..x.len() {
        let dx = x[i] - xm;
        sxx += w(i) * dx * dx;
        sxy += w(i) * dx * (y[i] - ym);
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let slope_var = match weights {
        Some(_) => 1.0 / sxx,
        None => {
            let ssr: f64 = (0..x.len())
                .map(|i| (y[i] - intercept - slope * x[i]).powi(2))
                .sum();
            let dof = (x.len() as f64 - 2.0).max(1.0);
            ssr / dof / sxx
        }
    };
    LinearFit {
        intercept,
        slope,
        slope_var,
    }
}

/// Gauss-Newton with Levenberg damping for `m(t) = A·exp(−r·t)`. Returns
/// `(A, r, var_r)` or `None` if it fails to converge.
fn exp_refine(t: &[f64], m: &[f64], w: Option<&[f64]>, a0: f64, r0: f64) -> Option<(f64, f64, f64)> {
    let weight = |i: usize| w.map_or(1.0, |w| w[i]);
    let cost = |a: f64, r: f64| -> f64 {
        (0..t.len())
            .map(|i| weight(i) * (m[i] - a * (-r * t[i]).exp()).powi(2))
            .sum()
    };
    let (mut a, mut r) = (a0, r0);
    let mut c = cost(a, r);
    let mut lambda = 1e-6;
    let mut converged = false;
    for _ in 0..200 {
        // normal equations J'WJ δ = J'W res with J = ∂model/∂(A, r)
        let (mut h00, mut h01, mut h11, mut g0, mut g1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..t.len() {
            let e = (-r * t[i]).exp();
            let j0 = e;
            let j1 = -a * t[i] * e;
            let res = m[i] - a * e;
            let wi = weight(i);
            h00 += wi * j0 * j0;
            h01 += wi * j0 * j1;
            h11 += wi * j1 * j1;
            g0 += wi * j0 * res;
            g1 += wi * j1 * res;
        }
        let mut accepted = false;
        for _ in 0..30 {
            let d00 = h00 * (1.0 + lambda);
            let d11 = h11 * (1.0 + lambda);
            let det = d00 * d11 - h01 * h01;
            if det <= 0.0 || !det.is_finite() {
                lambda *= 10.0;
                continue;
            }
            let da = (d11 * g0 - h01 * g1) / det;
            let dr = (d00 * g1 - h01 * g0) / det;
            let (na, nr) = (a + da, r + dr);
            let nc = cost(na, nr);
            if nc.is_finite() && nc <= c {
                let small = da.abs() <= 1e-15 * (1.0 + a.abs()) && dr.abs() <= 1e-15 * (1.0 + r.abs());
                a = na;
                r = nr;
                let improvement = c - nc;
                c = nc;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                if small || improvement <= 1e-30 + 1e-15 * c {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted || converged {
            converged = true;
            break;
        }
    }
    if !converged || !a.is_finite() || !r.is_finite() {
        return None;
    }
    // covariance at the optimum
    let (mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0);
    for (i, &ti) in t.iter().enumerate() {
        let e = (-r * ti).exp();
        let j1 = -a * ti * e;
        let wi = weight(i);
        h00 += wi * e * e;
        h01 += wi * e * j1;
        h11 += wi * j1 * j1;
    }
    let det = h00 * h11 - h01 * h01;
    let mut var_r = if det > 0.0 { h00 / det } else { f64::INFINITY };
    if w.is_none() {
        let dof = (t.len() as f64 - 2.0).max(1.0);
        var_r *= c / dof;
    }
    Some((a, r, var_r))
}

/// Fits a single exponential to `curve` over `window` (or the default window
/// from the first point below 0.95 to the first point at or below 0.2).
///
/// A weighted log-linear fit seeds a nonlinear least-squares refinement; the
/// refined rate is returned when it converges. Time is rescaled by the window
/// length during the fit. If the curve drops to [`LOG_FLOOR`] inside the
/// window, the window is truncated just before that point.
pub fn fit_rate(curve: &DecayCurve, window: Option<FitWindow>) -> Result<RateEstimate> {
    let (start, mut end) = match window {
        Some(w) => {
            let s = curve.t.iter().position(|&t| t >= w.t_start).unwrap_or(curve.len());
            let e = curve.t.iter().rposition(|&t| t <= w.t_end).map_or(0, |k| k + 1);
            (s, e.max(s))
        }
        None => default_window(curve),
    };
    if end - start < MIN_FIT_POINTS {
        return Err(Error::InsufficientData {
            points: end - start,
            required: MIN_FIT_POINTS,
        });
    }
    // NaN counts as below the floor
    if let Some(k) = curve.mean_uz[start..end].iter().position(|&m| !(m > LOG_FLOOR)) {
        end = start + k;
        if end - start < MIN_FIT_POINTS {
            return Err(Error::NonPositiveCurve(format!(
                "mean u_z ≤ {LOG_FLOOR} at t = {}, leaving {} points",
                curve.t[start + k],
                end - start
            )));
        }
    }

    let t0 = curve.t[start];
    let scale = (curve.t[end - 1] - t0).max(f64::MIN_POSITIVE);
    let x: Vec<f64> = curve.t[start..end].iter().map(|&t| (t - t0) / scale).collect();
    let m = &curve.mean_uz[start..end];
    let se = &curve.stderr_uz[start..end];
    let weighted = se.iter().all(|&s| s > 0.0);

    let ln_m: Vec<f64> = m.iter().map(|v| v.ln()).collect();
    let log_weights: Option<Vec<f64>> = weighted.then(|| {
        m.iter()
            .zip(se)
            .map(|(&v, &s)| (v / s).powi(2))
            .collect()
    });
    let lin = linear_fit(&x, &ln_m, log_weights.as_deref());
    let a_log = lin.intercept.exp();
    let r_log = -lin.slope;

    let lin_weights: Option<Vec<f64>> = weighted.then(|| se.iter().map(|s| 1.0 / (s * s)).collect());
    let (amp, rate_scaled, var_scaled, method) =
        match exp_refine(&x, m, lin_weights.as_deref(), a_log, r_log) {
            Some((a, r, v)) => (a, r, v, FitMethod::NonlinearLs),
            None => (a_log, r_log, lin.slope_var, FitMethod::LogLinear),
        };

    // back to physical time
    let rate = rate_scaled / scale;
    let rate_stderr = var_scaled.max(0.0).sqrt() / scale;
    let amplitude = amp * (rate_scaled * t0 / scale).exp();

    let residual_rms = (x
        .iter()
        .zip(m)
        .map(|(&xi, &mi)| (mi - amp * (-rate_scaled * xi).exp()).powi(2))
        .sum::<f64>()
        / x.len() as f64)
        .sqrt();
    let noise_rms = (se.iter().map(|s| s * s).sum::<f64>() / se.len() as f64).sqrt();
    let non_exponential = residual_rms > 3.0 * noise_rms.max(1e-12);

    Ok(RateEstimate {
        rate,
        rate_stderr,
        amplitude,
        fit_window: FitWindow {
            t_start: t0,
            t_end: curve.t[end - 1],
        },
        points: end - start,
        residual_rms,
        method,
        non_exponential,
    })
}

/// Decay rate under one-dimensional angular diffusion, `δγ⊥²·D₁`.
pub fn oracle_rate_2d(g: &GammaTensor, d1: f64) -> f64 {
    let dg = g.delta_gamma_perp();
    dg * dg * d1
}

/// Fast-motional rate in three dimensions, `(4/3)·δγ⊥²·⟨ω²⟩·τ_c`.
pub fn oracle_rate_3d(g: &GammaTensor, omega_sq_mean: f64, tau_c: f64) -> f64 {
    let dg = g.delta_gamma_perp();
    4.0 / 3.0 * dg * dg * omega_sq_mean * tau_c
}

/// The same rate written through the momentum relaxation time,
/// `(4/3)·Δg⊥²/τ_p`.
pub fn oracle_rate_3d_tau_p(g: &GammaTensor, tau_p: f64) -> f64 {
    let dg = g.delta_gamma_perp();
    4.0 / 3.0 * dg * dg / tau_p
}

/// Strong-collision rate when the collision axes are isotropic in space:
/// `(1 − (1 + 2⟨cos δγ⊥ϑ⟩)/3)/τ_p`, with the average taken over the
/// truncated angle law.
pub fn isotropic_collision_rate(g: &GammaTensor, law: &crate::stochastic::AngleLaw, tau_p: f64) -> Result<f64> {
    let f = ensemble::isotropic_collision_factor(g, law)?;
    Ok((1.0 - f) / tau_p)
}

/// Analytic rate for `model`, where one exists.
pub fn model_oracle_rate(g: &GammaTensor, model: &StochasticModel) -> Result<Option<(f64, &'static str)>> {
    Ok(match *model {
        StochasticModel::Diffusion2D { d1 } => Some((oracle_rate_2d(g, d1), "diffusion-2d")),
        StochasticModel::OuAngularVelocity3D {
            omega_sq_mean,
            tau_c,
        } => Some((oracle_rate_3d(g, omega_sq_mean, tau_c), "fast-motional-3d")),
        StochasticModel::StrongCollision3D {
            tau_p, angle_law, ..
        } => Some((
            isotropic_collision_rate(g, &angle_law, tau_p)?,
            "isotropic-collision",
        )),
    })
}

/// `⟨cos(δγ⊥ϑ)⟩` over the Gaussian angle density `(4πD₁t)^{-1/2}
/// exp(−ϑ²/4D₁t)`, by adaptive quadrature (absolute tolerance 1e-10 or
/// tighter). Independent of the closed form `exp(−δγ⊥²D₁t)`.
pub fn gaussian_average_oracle(g: &GammaTensor, d1: f64, t: f64) -> Result<f64> {
    if !(t >= 0.0 && d1 >= 0.0) {
        return Err(Error::InvalidArgument(format!("need t ≥ 0 and d1 ≥ 0, got t = {t}, d1 = {d1}")));
    }
    let var2 = 4.0 * d1 * t;
    if var2 == 0.0 {
        return Ok(1.0);
    }
    let dg = g.delta_gamma_perp();
    let norm = 1.0 / (PI * var2).sqrt();
    let half_width = 40.0 * (0.5 * var2).sqrt();
    quadrature::integrate(
        |x| (dg * x).cos() * norm * (-x * x / var2).exp(),
        -half_width,
        half_width,
        1e-12,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElliottScan {
    pub tau_p_values: Vec<f64>,
    pub fitted_rates: Vec<RateEstimate>,
    /// Regression slope of rate against `1/τ_p` through the origin.
    pub slope: f64,
    pub slope_stderr: f64,
    /// `slope / ‖δg‖²` with `‖δg‖² = 2δγ⊥² + δγ∥²`; null when `δg = 0`.
    #[serde(with = "nan_as_null")]
    pub prefactor_a: f64,
    #[serde(with = "nan_as_null")]
    pub prefactor_a_stderr: f64,
    pub prefactor_defined: bool,
    /// `rate·τ_p/‖δg‖²` per scan point.
    #[serde(with = "nan_as_null_vec")]
    pub prefactor_per_point: Vec<f64>,
    /// `max |a_i/ā − 1|` over the scan.
    #[serde(with = "nan_as_null")]
    pub prefactor_spread: f64,
    pub r_squared: f64,
    pub linear: bool,
    pub norm_convention: String,
}

pub(crate) mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

pub(crate) mod nan_as_null_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let opt = Vec::<Option<f64>>::deserialize(d)?;
        Ok(opt.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }
}

/// Straight-line regression through the origin; returns `(slope, stderr, R²)`.
/// `R²` uses the centered total sum of squares.
pub fn regress_through_origin(x: &[f64], y: &[f64], sigma: Option<&[f64]>) -> (f64, f64, f64) {
    let w: Vec<f64> = match sigma {
        Some(s) if s.iter().all(|&v| v > 0.0) => s.iter().map(|v| 1.0 / (v * v)).collect(),
        _ => vec![1.0; x.len()],
    };
    let sxx: f64 = (0..x.len()).map(|i| w[i] * x[i] * x[i]).sum();
    let sxy: f64 = (0..x.len()).map(|i| w[i] * x[i] * y[i]).sum();
    let slope = sxy / sxx;
    let stderr = match sigma {
        Some(s) if s.iter().all(|&v| v > 0.0) => (1.0 / sxx).sqrt(),
        _ => {
            let ssr: f64 = (0..x.len()).map(|i| (y[i] - slope * x[i]).powi(2)).sum();
            let dof = (x.len() as f64 - 1.0).max(1.0);
            (ssr / dof / sxx).sqrt()
        }
    };
    let ym = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - ym).powi(2)).sum();
    let ss_res: f64 = (0..x.len()).map(|i| (y[i] - slope * x[i]).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { f64::NAN };
    (slope, stderr, r2)
}

/// Runs the strong-collision ensemble at each `τ_p`, fits each decay, and
/// regresses the rates against `1/τ_p`.
///
/// The base grid is stretched by `τ_p/τ_p,0` (with `τ_p,0` the first value)
/// so every run covers the same number of mean collision times. Run `i` uses
/// root seed `derive_seed(root_seed, i)`.
pub fn elliott_scan(base: &EnsembleSpec, tau_p_values: &[f64]) -> Result<ElliottScan> {
    elliott_scan_with_curves(base, tau_p_values).map(|(scan, _)| scan)
}

/// As [`elliott_scan`], also returning the decay curve of every scan point.
pub fn elliott_scan_with_curves(base: &EnsembleSpec, tau_p_values: &[f64]) -> Result<(ElliottScan, Vec<DecayCurve>)> {
    let StochasticModel::StrongCollision3D {
        angle_law,
        delta_t_c,
        ..
    } = base.model
    else {
        return Err(Error::ModelMismatch {
            expected: "strong_collision_3d",
            found: base.model.name(),
        });
    };
    if tau_p_values.len() < 3 {
        return Err(Error::RegressionIllConditioned(format!(
            "need at least 3 tau_p values, got {}",
            tau_p_values.len()
        )));
    }
    if tau_p_values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument("tau_p values must be positive".into()));
    }
    let lo = tau_p_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = tau_p_values.iter().cloned().fold(0.0, f64::max);
    if hi < 4.0 * lo {
        return Err(Error::RegressionIllConditioned(format!(
            "tau_p range {lo}..{hi} spans less than a factor of 4"
        )));
    }

    let norm_sq = base.gamma.delta_g_norm_sq();
    let tau_ref = tau_p_values[0];
    let mut fits = Vec::with_capacity(tau_p_values.len());
    let mut curves = Vec::with_capacity(tau_p_values.len());
    for (i, &tau_p) in tau_p_values.iter().enumerate() {
        let mut spec = base.clone();
        spec.model = StochasticModel::StrongCollision3D {
            tau_p,
            angle_law,
            delta_t_c,
        };
        spec.grid = base.grid.scaled(tau_p / tau_ref);
        spec.root_seed = derive_seed(base.root_seed, i as u64);
        let curve = ensemble::run_3d_collisions(&spec)?;
        fits.push(fit_rate(&curve, None)?);
        curves.push(curve);
    }

    let x: Vec<f64> = tau_p_values.iter().map(|v| 1.0 / v).collect();
    let y: Vec<f64> = fits.iter().map(|f| f.rate).collect();
    let s: Vec<f64> = fits.iter().map(|f| f.rate_stderr).collect();
    let (slope, slope_stderr, r_squared) = regress_through_origin(&x, &y, Some(&s));

    let prefactor_defined = norm_sq > 0.0;
    let (prefactor_a, prefactor_a_stderr, per_point, spread) = if prefactor_defined {
        let per: Vec<f64> = y.iter().zip(tau_p_values).map(|(r, tp)| r * tp / norm_sq).collect();
        let mean = per.iter().sum::<f64>() / per.len() as f64;
        let spread = per.iter().map(|a| (a / mean - 1.0).abs()).fold(0.0, f64::max);
        (slope / norm_sq, slope_stderr / norm_sq, per, spread)
    } else {
        log::warn!("δg = 0: the Elliott prefactor is undefined");
        (f64::NAN, f64::NAN, vec![f64::NAN; y.len()], f64::NAN)
    };

    let scan = ElliottScan {
        tau_p_values: tau_p_values.to_vec(),
        fitted_rates: fits,
        slope,
        slope_stderr,
        prefactor_a,
        prefactor_a_stderr,
        prefactor_defined,
        prefactor_per_point: per_point,
        prefactor_spread: spread,
        r_squared,
        linear: r_squared > ELLIOTT_MIN_R2,
        norm_convention: "|dg|^2 = 2*dgamma_perp^2 + dgamma_par^2".into(),
    };
    Ok((scan, curves))
}
