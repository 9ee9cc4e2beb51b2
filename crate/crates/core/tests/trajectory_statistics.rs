//! Ensemble statistics of the trajectory integrators against closed forms
//! and deterministic FCS values.

use ppk_core::trajectories::{estimate_diffusion, run_ensemble, TrajectoryConfig};
use ppk_core::{CountingStatistics, DensityMatrix, MeasurementScheme, ModelParams, PpkSystem};
use statrs::distribution::{ContinuousCDF, Exp};

fn params(delta: f64, g: f64, u: f64) -> ModelParams {
    ModelParams::in_kappa_units(delta, g, u).unwrap()
}

/// Asymptotic Kolmogorov tail `P(D_n > d)` with the Stephens correction.
fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let sum: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            let sign = if k as usize % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    (2.0 * sum).clamp(0.0, 1.0)
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn single_photon_decay_is_exponential() {
    // dim 2 carries no Kerr term, and G = Delta = 0
    let p = ModelParams::new(0.0, 0.0, 1e-9, 1.0).unwrap();
    let cfg = TrajectoryConfig::new(
        MeasurementScheme::Photodetection,
        DensityMatrix::fock(2, 1).unwrap(),
        1e-3,
        30.0,
        2024,
    )
    .with_stride(1000);
    let records = run_ensemble(&p, &cfg, 2000).unwrap();
    let mut times: Vec<f64> = records
        .iter()
        .map(|r| {
            assert!(r.jump_times.len() <= 1);
            r.jump_times.first().copied().unwrap_or(f64::INFINITY)
        })
        .collect();
    // survival past t = 30 has probability e^-30
    assert!(times.iter().all(|t| t.is_finite()));
    times.sort_by(f64::total_cmp);
    let exp = Exp::new(1.0).unwrap();
    let n = times.len() as f64;
    let d = times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let f = exp.cdf(t);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    let p_value = ks_p_value(d, times.len());
    assert!(p_value > 0.01, "KS D = {d}, p = {p_value}");
}

#[test]
fn vacuum_homodyne_is_shot_noise_limited() {
    let p = params(0.0, 0.0, 1.0);
    let cfg = TrajectoryConfig::new(
        MeasurementScheme::homodyne(),
        DensityMatrix::vacuum(4).unwrap(),
        1e-3,
        60.0,
        11,
    )
    .with_stride(100);
    let records = run_ensemble(&p, &cfg, 200).unwrap();
    let est = estimate_diffusion(&records, 5.0, 50.0).unwrap();
    assert!(est.std_error > 0.0);
    assert!((est.d_hat - 1.0).abs() < 3.0 * est.std_error, "{est:?}");
}

#[test]
fn click_rate_and_homodyne_mean_match_fcs() {
    let p = params(0.0, 1.0, 1.0);
    let dim = 25;
    let sys = PpkSystem::with_dim(&p, dim).unwrap();
    let j_pd = CountingStatistics::new(&sys, MeasurementScheme::Photodetection)
        .unwrap()
        .mean_current();
    let (burn_in, t_final) = (20.0, 70.0);

    let cfg = TrajectoryConfig::new(
        MeasurementScheme::Photodetection,
        DensityMatrix::vacuum(dim).unwrap(),
        2e-3,
        t_final,
        31,
    )
    .with_stride(500);
    let rates: Vec<f64> = run_ensemble(&p, &cfg, 200)
        .unwrap()
        .iter()
        .map(|r| r.jump_times.iter().filter(|&&t| t > burn_in).count() as f64 / (t_final - burn_in))
        .collect();
    let (mean, se) = mean_and_se(&rates);
    assert!((mean - j_pd).abs() < 3.0 * se, "click rate {mean} +- {se}, J_PD {j_pd}");

    let cfg = TrajectoryConfig::new(
        MeasurementScheme::homodyne(),
        DensityMatrix::vacuum(dim).unwrap(),
        1e-3,
        30.0,
        32,
    )
    .with_stride(1000);
    let means: Vec<f64> = run_ensemble(&p, &cfg, 200)
        .unwrap()
        .iter()
        .map(|r| {
            let late: Vec<f64> = r
                .times
                .iter()
                .zip(&r.current)
                .filter(|(t, _)| **t > 10.0)
                .map(|(_, i)| *i)
                .collect();
            late.iter().sum::<f64>() / late.len() as f64
        })
        .collect();
    let (mean, se) = mean_and_se(&means);
    assert!(mean.abs() < 3.0 * se, "homodyne mean current {mean} +- {se}");
}

#[test]
fn photodetection_record_is_telegraphic_near_the_discontinuous_line() {
    let p = params(2.0, 1.0, 1.0 / 3.0);
    let dim = ppk_core::model::default_dim(&p, ppk_core::fock::DEFAULT_DIM_CAP);
    let cfg = TrajectoryConfig::new(
        MeasurementScheme::Photodetection,
        DensityMatrix::vacuum(dim).unwrap(),
        1e-3,
        500.0,
        41,
    )
    .with_stride(10);
    let record = run_ensemble(&p, &cfg, 1).unwrap().remove(0);
    let dark = record.mean_n.iter().filter(|&&n| n < 0.5).count() as f64 / record.mean_n.len() as f64;
    assert!(dark > 0.05 && dark < 0.95, "dark fraction {dark}");
}

#[test]
fn homodyne_noise_is_amplified_near_the_discontinuous_line() {
    let p = params(2.0, 1.0, 1.0 / 3.0);
    let dim = ppk_core::model::default_dim(&p, ppk_core::fock::DEFAULT_DIM_CAP);
    let cfg = TrajectoryConfig::new(
        MeasurementScheme::homodyne(),
        DensityMatrix::vacuum(dim).unwrap(),
        1e-3,
        60.0,
        51,
    )
    .with_stride(100);
    let records = run_ensemble(&p, &cfg, 100).unwrap();
    let est = estimate_diffusion(&records, 10.0, 50.0).unwrap();
    assert!(est.d_hat > 10.0, "{est:?}");
}
