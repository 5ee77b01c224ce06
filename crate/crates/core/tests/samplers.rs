//! Distributional checks of the stochastic samplers against their laws.

use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Exp, Normal};

use geodephase::stochastic::{
    sample_collisions, sample_diffusion_2d, AngleLaw, CollisionSampler, OuSampler, TimeGrid, Trajectory, TrajectorySeed,
};

/// Asymptotic Kolmogorov tail `P(K > λ)` with the usual small-sample
/// correction to `λ`.
fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn chi_square_band(n: usize) -> (f64, f64) {
    let chi = ChiSquared::new((n - 1) as f64).unwrap();
    (chi.inverse_cdf(0.0005), chi.inverse_cdf(0.9995))
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

#[test]
fn ks_p_value_reference_points() {
    // λ = 1.36 is the classic 5% point, λ = 1.63 the 1% point
    let n = 1_000_000;
    assert!((ks_p_value(1.358 / 1000.0, n) - 0.05).abs() < 2e-3);
    assert!((ks_p_value(1.628 / 1000.0, n) - 0.01).abs() < 1e-3);
}

#[test]
fn diffusion_angle_is_gaussian_with_linear_variance() {
    let (d1, t_max) = (0.7, 3.0);
    let grid = TimeGrid::new(t_max, 31).unwrap();
    let n = 10_000;
    let mut finals = Vec::with_capacity(n);
    let mut mids = Vec::with_capacity(n);
    for i in 0..n {
        let Trajectory::Angle { theta, .. } = sample_diffusion_2d(d1, &grid, TrajectorySeed::new(31, i as u64)).unwrap()
        else {
            unreachable!()
        };
        assert_eq!(theta[0], 0.0);
        finals.push(theta[30]);
        mids.push(theta[10]);
    }
    let (lo, hi) = chi_square_band(n);
    for (xs, t) in [(&finals, t_max), (&mids, 1.0)] {
        let sigma2 = 2.0 * d1 * t;
        let stat = (n - 1) as f64 * sample_variance(xs) / sigma2;
        assert!(stat > lo && stat < hi, "t = {t}: chi² {stat} outside [{lo}, {hi}]");
    }
    let normal = Normal::new(0.0, (2.0 * d1 * t_max).sqrt()).unwrap();
    let d = ks_statistic(finals, |x| normal.cdf(x));
    let p = ks_p_value(d, n);
    assert!(p > 0.01, "KS p = {p}");
}

#[test]
fn collision_counts_are_poisson() {
    let (tau_p, horizon) = (0.5, 20.0);
    let n = 4000;
    let counts: Vec<f64> = (0..n)
        .map(|i| {
            let Trajectory::Collisions { events, .. } =
                sample_collisions(tau_p, AngleLaw::Fixed { theta: 0.3 }, 1e-4, horizon, TrajectorySeed::new(5, i)).unwrap()
            else {
                unreachable!()
            };
            assert!(events.windows(2).all(|w| w[0].0 <= w[1].0));
            events.len() as f64
        })
        .collect();
    let lambda = horizon / tau_p;
    let mean = counts.iter().sum::<f64>() / n as f64;
    let band = 4.0 * (lambda / n as f64).sqrt();
    assert!((mean - lambda).abs() < band, "mean count {mean} vs {lambda}");
    // variance equals the mean for a Poisson count
    let (lo, hi) = chi_square_band(n as usize);
    let stat = (n - 1) as f64 * sample_variance(&counts) / lambda;
    assert!(stat > lo * 0.95 && stat < hi * 1.05, "dispersion {stat}");
}

#[test]
fn waiting_times_angles_and_azimuths() {
    let tau_p = 2.0;
    let sigma = 0.5;
    let mut rng = TrajectorySeed::new(77, 3).rng();
    let mut sampler = CollisionSampler::new(tau_p, AngleLaw::Gaussian { sigma }, 1e-3);
    let n = 10_000;
    let (mut waits, mut thetas, mut alphas) = (Vec::new(), Vec::new(), Vec::new());
    let mut last = 0.0;
    for _ in 0..n {
        let (t, e) = sampler.next_event(&mut rng);
        waits.push(t - last);
        last = t;
        thetas.push(e.theta());
        let a = e.axis();
        assert!(a[2].abs() < 1e-15);
        alphas.push(a[1].atan2(a[0]).rem_euclid(std::f64::consts::TAU));
    }
    let exp = Exp::new(1.0 / tau_p).unwrap();
    assert!(ks_p_value(ks_statistic(waits, |x| exp.cdf(x)), n) > 0.01);
    // truncation at ±π is ~1e-9 in probability for σ = 0.5
    let normal = Normal::new(0.0, sigma).unwrap();
    assert!(ks_p_value(ks_statistic(thetas, |x| normal.cdf(x)), n) > 0.01);
    let tau = std::f64::consts::TAU;
    assert!(ks_p_value(ks_statistic(alphas, |x| x / tau), n) > 0.01);
}

#[test]
fn exponential_angle_law_is_truncated_at_pi() {
    let law = AngleLaw::Exponential { mean: 2.0 };
    let mut rng = TrajectorySeed::new(9, 0).rng();
    let n = 10_000;
    let xs: Vec<f64> = (0..n).map(|_| law.sample(&mut rng)).collect();
    assert!(xs.iter().all(|&x| x > 0.0 && x <= std::f64::consts::PI));
    let norm = 1.0 - (-std::f64::consts::PI / 2.0).exp();
    let d = ks_statistic(xs, |x| (1.0 - (-x / 2.0).exp()) / norm);
    assert!(ks_p_value(d, n) > 0.01);
}

#[test]
fn ou_stationary_variance_and_autocorrelation() {
    let (w2, tau_c, dt) = (2.5, 0.4, 0.04);
    let mut rng = TrajectorySeed::new(11, 0).rng();
    let mut ou = OuSampler::new(w2, tau_c, dt, &mut rng);
    // many short independent chains keep the samples nearly independent
    let mut first = Vec::new();
    let mut pairs = Vec::new();
    for chain in 0..4000u64 {
        let mut rng = TrajectorySeed::new(12, chain).rng();
        let mut s = OuSampler::new(w2, tau_c, dt, &mut rng);
        let a = s.omega();
        let b = s.step(&mut rng);
        first.push(a[0]);
        first.push(a[1]);
        first.push(a[2]);
        for k in 0..3 {
            pairs.push((a[k], b[k]));
        }
    }
    let n = first.len();
    let (lo, hi) = chi_square_band(n);
    let stat = (n - 1) as f64 * sample_variance(&first) / w2;
    assert!(stat > lo && stat < hi, "stationary variance off: {}", stat / (n - 1) as f64);

    let rho = pairs.iter().map(|(a, b)| a * b).sum::<f64>() / pairs.iter().map(|(a, _)| a * a).sum::<f64>();
    let expected = (-dt / tau_c).exp();
    let se = ((1.0 - expected * expected) / pairs.len() as f64).sqrt();
    assert!((rho - expected).abs() < 4.0 * se, "lag-1 {rho} vs {expected}");

    // a long chain stays stationary
    let mut sum_sq = 0.0;
    let steps = 200_000;
    for _ in 0..steps {
        let w = ou.step(&mut rng);
        sum_sq += w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    }
    let per_component = sum_sq / (3.0 * steps as f64);
    assert!((per_component / w2 - 1.0).abs() < 0.05, "{per_component}");
}

#[test]
fn streams_are_independent() {
    let n = 20_000;
    let mut a = TrajectorySeed::new(1234, 0).rng();
    let mut b = TrajectorySeed::new(1234, 1).rng();
    let mut c = TrajectorySeed::new(1235, 0).rng();
    let xs: Vec<f64> = (0..n).map(|_| a.gen::<f64>() - 0.5).collect();
    let ys: Vec<f64> = (0..n).map(|_| b.gen::<f64>() - 0.5).collect();
    let zs: Vec<f64> = (0..n).map(|_| c.gen::<f64>() - 0.5).collect();
    let corr = |p: &[f64], q: &[f64]| {
        let num: f64 = p.iter().zip(q).map(|(x, y)| x * y).sum();
        let den = (p.iter().map(|x| x * x).sum::<f64>() * q.iter().map(|y| y * y).sum::<f64>()).sqrt();
        num / den
    };
    let band = 4.0 / (n as f64).sqrt();
    assert!(corr(&xs, &ys).abs() < band);
    assert!(corr(&xs, &zs).abs() < band);
    assert!(corr(&ys, &zs).abs() < band);
    // same seed, same stream
    let mut again = TrajectorySeed::new(1234, 1).rng();
    assert!(ys.iter().all(|&y| y == again.gen::<f64>() - 0.5));
}
