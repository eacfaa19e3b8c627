mod common;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use zonepred_core::bench::{
    per_step_stats, rmse, run_grid, run_variant, seasonal_fit, sigma_min_correlation, EvaluationReport,
    HarnessConfig, InstantRecord, PhaseDays, Phases, VariantSpec,
};
use zonepred_core::plant::Scenario;
use zonepred_core::select::Strategy;
use zonepred_core::series::{ChannelKind, ChannelSchema, Schema, SeriesSet};

use common::{least_squares_qr, rng};

fn short_run() -> (SeriesSet, Phases, HarnessConfig) {
    let mut scenario = Scenario::light(51);
    scenario.days = 75;
    let series = scenario.generate().unwrap();
    let phases = PhaseDays {
        identification: vec![[0.0, 20.0]],
        initialization: [20.0, 40.0],
        evaluation: vec![40.0],
    }
    .to_steps(&series)
    .unwrap();
    let cfg = HarnessConfig {
        eval_stride: 53,
        sigma_min_every: 4,
        distortion_seed: 51,
        ..HarnessConfig::default()
    };
    (series, phases, cfg)
}

#[test]
fn full_grid_is_paired_complete_and_deterministic() {
    let (series, phases, cfg) = short_run();
    let grid = VariantSpec::full_grid();
    let a = run_grid(&series, &grid, &phases, &cfg).unwrap();
    assert!(a.failures.is_empty(), "{:?}", a.failures);
    assert_eq!(a.reports.len(), 69);
    let steps: Vec<usize> = a.reports[0].instants.iter().map(|r| r.step).collect();
    assert!(!steps.is_empty());
    for rep in &a.reports {
        assert_eq!(rep.instants.iter().map(|r| r.step).collect::<Vec<_>>(), steps, "{}", rep.name());
        assert_eq!(rep.skipped, a.reports[0].skipped);
        assert_eq!(rep.instants.len() + rep.skipped.len(), rep.sampled_instants());
        assert_eq!(rep.evaluation_steps, phases.evaluation.len());
        // RMSE of all errors against per-step sums of squares.
        let n = rep.instants.len() as f64;
        let by_step: f64 = (0..96)
            .map(|h| rep.instants.iter().map(|r| r.abs_errors[h].powi(2)).sum::<f64>())
            .sum();
        assert!((rep.rmse - (by_step / (96.0 * n)).sqrt()).abs() <= 1e-12 * (1.0 + rep.rmse));
    }
    let b = run_grid(&series, &grid, &phases, &cfg).unwrap();
    let summary = |o: &zonepred_core::bench::GridOutcome| {
        o.reports
            .iter()
            .map(|r| (r.name(), r.rmse.to_bits(), r.per_step_mean.iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
            .collect::<Vec<_>>()
    };
    assert_eq!(summary(&a), summary(&b));
    for rep in a.reports.iter().filter(|r| r.variant.family().is_bst()) {
        let (r, n) = sigma_min_correlation(rep).unwrap();
        assert!((-1.0..=1.0).contains(&r));
        assert!(n >= 2);
    }
}

#[test]
fn constant_output_is_predicted_by_arx() {
    let n = 96 * 40;
    let mut r = rng(52);
    let schema = Schema::new(vec![
        ChannelSchema::new("heat", ChannelKind::Control, "kW", 0.0, 10.0),
        ChannelSchema::new("temp", ChannelKind::Disturbance, "degC", -50.0, 50.0),
        ChannelSchema::new("solar", ChannelKind::Disturbance, "W/m2", 0.0, 1500.0),
        ChannelSchema::new("zone", ChannelKind::Output, "degC", 0.0, 50.0),
    ])
    .unwrap();
    let noise = |r: &mut rand_chacha::ChaCha8Rng, c: f64, s: f64| (0..n).map(|_| c + s * r.sample::<f64, _>(StandardNormal).abs()).collect::<Vec<_>>();
    let values = vec![noise(&mut r, 1.0, 1.0), noise(&mut r, 5.0, 3.0), noise(&mut r, 0.0, 100.0), vec![21.0; n]];
    let series = SeriesSet::new(schema, 0, 900, values).unwrap();
    let phases = PhaseDays {
        identification: vec![[0.0, 10.0]],
        initialization: [10.0, 20.0],
        evaluation: vec![20.0],
    }
    .to_steps(&series)
    .unwrap();
    let cfg = HarnessConfig { eval_stride: 17, ..HarnessConfig::default() };
    for spec in [VariantSpec::ArxStatic, VariantSpec::ArxAdaptive { memory_days: 3.0 }] {
        let rep = run_variant(&series, spec, &phases, &cfg).unwrap();
        assert!(rep.rmse <= 1e-6, "{}: {}", rep.name(), rep.rmse);
    }
}

#[test]
fn heavy_year_recent_bst_stays_under_one_kelvin() {
    let series = Scenario::heavy(7).generate().unwrap();
    let phases = PhaseDays::default().to_steps(&series).unwrap();
    let cfg = HarnessConfig { eval_stride: 96, distortion_seed: 7, ..HarnessConfig::default() };
    let spec = VariantSpec::BstAdaptive { strategy: Strategy::MostRecent, width: 661, lambda: 1e2 };
    let rep = run_variant(&series, spec, &phases, &cfg).unwrap();
    assert_eq!(rep.per_step_mean.len(), 96);
    assert!(rep.per_step_mean.iter().all(|&m| m < 1.0), "{:?}", rep.per_step_mean);
}

#[test]
fn seasonal_fit_against_polynomial_regression() {
    let mut r = rng(53);
    let days: Vec<f64> = (0..300).map(|i| 1.0 + i as f64 * 1.2).collect();
    let values: Vec<f64> = days.iter().map(|d| 0.4 + 0.001 * d + 0.2 * r.sample::<f64, _>(StandardNormal)).collect();
    let fit = seasonal_fit(&days, &values).unwrap();
    let x = DMatrix::from_fn(days.len(), 4, |i, j| (days[i] / 100.0).powi(j as i32));
    let y = DVector::from_column_slice(&values);
    let beta = least_squares_qr(&x, &y);
    for (j, c) in fit.coefficients.iter().enumerate() {
        let oracle = beta[j] / 100f64.powi(j as i32);
        assert!((c - oracle).abs() <= 1e-8 * (1.0 + oracle.abs()), "{j}: {c} vs {oracle}");
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let raw_ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    assert!(fit.residual_ss <= raw_ss);
}

fn report_with_log(log: &[(f64, f64)]) -> EvaluationReport {
    let instants: Vec<InstantRecord> = log
        .iter()
        .enumerate()
        .map(|(i, &(sigma, err))| InstantRecord {
            step: i,
            time: i as i64 * 900,
            abs_errors: vec![err; 4],
            sigma_min: Some(sigma),
            wall_time: 0.0,
            predictions: None,
        })
        .collect();
    let errors: Vec<Vec<f64>> = instants.iter().map(|r| r.abs_errors.clone()).collect();
    let (per_step_mean, per_step_std) = per_step_stats(&errors).unwrap();
    EvaluationReport {
        variant: VariantSpec::BstAdaptive { strategy: Strategy::MostRecent, width: 181, lambda: 1.0 },
        evaluation_steps: instants.len(),
        eval_stride: 1,
        rmse: rmse(&errors.concat(), &vec![0.0; errors.len() * 4]).unwrap(),
        per_step_mean,
        per_step_std,
        seasonal: None,
        mean_wall_time: 0.0,
        notes: Vec::new(),
        skipped: Vec::new(),
        instants,
    }
}

#[test]
fn sigma_min_correlation_cases() {
    let flat: Vec<(f64, f64)> = (0..50).map(|i| (2.0, i as f64 * 0.1)).collect();
    assert_eq!(sigma_min_correlation(&report_with_log(&flat)).unwrap(), (0.0, 50));
    let mut r = rng(54);
    let opposed: Vec<(f64, f64)> = (0..200)
        .map(|i| {
            let s = i as f64 * 0.05;
            (s, 20.0 - s + 0.1 * r.sample::<f64, _>(StandardNormal))
        })
        .collect();
    let (c, n) = sigma_min_correlation(&report_with_log(&opposed)).unwrap();
    assert_eq!(n, 200);
    assert!(c < -0.95, "{c}");
    let mut arx = report_with_log(&opposed);
    arx.variant = VariantSpec::ArxStatic;
    assert!(sigma_min_correlation(&arx).is_err());
}
