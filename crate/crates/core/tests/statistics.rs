//! Monte Carlo behavior at moderate sizes.

use transtate_core::ensemble::{energy_grid, factorization_check, green_center_check, run_ensemble, EnsembleConfig};
use transtate_core::model::{matched_strength, ModelConfig, ModelTemplate, Preset};
use transtate_core::scattering::transmission_analytic_oracle;
use transtate_core::transition::channel_resonance_correlator_check;

fn model(n: usize, channels: usize, lambda: f64) -> ModelConfig {
    ModelConfig::preset_with(Preset::Isolated, n, 3, lambda, channels, channels)
}

#[test]
fn transmission_matches_band_center_oracle() {
    // x = 1 and x = 0.3 channels side by side
    let mut m = model(200, 4, 1.0);
    let weak = 0.3 * matched_strength(1.0);
    m.channel_strengths_1 = vec![matched_strength(1.0), matched_strength(1.0), weak, weak];
    let report = factorization_check(&m, 200, &energy_grid(-0.05, 0.05, 11), 11, 1).unwrap();
    for (a, &v2) in m.channel_strengths_1.iter().enumerate() {
        let oracle = transmission_analytic_oracle(v2, 1.0);
        assert!(
            (report.t_mean[a] - oracle).abs() < 0.03,
            "channel {a}: {} vs {oracle}",
            report.t_mean[a]
        );
    }
}

#[test]
fn unequal_channels_keep_factorized_ratios() {
    let mut m = model(200, 20, 1.0);
    let weak = 0.3 * matched_strength(1.0);
    for (a, v) in m.channel_strengths_1.iter_mut().enumerate() {
        if a % 2 == 1 {
            *v = weak;
        }
    }
    let report = factorization_check(&m, 200, &energy_grid(-0.2, 0.2, 21), 5, 1).unwrap();
    // for each a, compare the mean over strong a' with the mean over weak a'
    let (mut measured, mut expected) = (0.0, 0.0);
    let l = m.channel_strengths_1.len();
    for a in 0..l {
        let group = |parity: usize, table: &Vec<Vec<f64>>| {
            let cols: Vec<usize> = (0..l).filter(|&c| c != a && c % 2 == parity).collect();
            cols.iter().map(|&c| table[a][c]).sum::<f64>() / cols.len() as f64
        };
        measured += group(0, &report.measured) / group(1, &report.measured) / l as f64;
        expected += group(0, &report.predicted) / group(1, &report.predicted) / l as f64;
    }
    assert!((measured / expected - 1.0).abs() < 0.10, "{measured} vs {expected}");
}

#[test]
fn error_bars_shrink_with_more_realizations() {
    let mut cfg = EnsembleConfig::new(model(60, 4, 1.0));
    cfg.energy_grid = energy_grid(-0.1, 0.1, 5);
    cfg.n_realizations = 100;
    let small = run_ensemble(&cfg).unwrap();
    cfg.n_realizations = 200;
    let large = run_ensemble(&cfg).unwrap();
    let mean_err = |c: &transtate_core::ensemble::TransmissionCurve| {
        let all: Vec<f64> = c
            .points
            .iter()
            .flat_map(|p| p.p_mc.iter().map(|e| e.std_error))
            .collect();
        all.iter().sum::<f64>() / all.len() as f64
    };
    let ratio = mean_err(&large) / mean_err(&small);
    assert!((ratio * 2f64.sqrt() - 1.0).abs() < 0.2, "ratio {ratio}");
}

#[test]
fn probabilities_stay_physical() {
    let mut cfg = EnsembleConfig::new(model(60, 4, 1.0));
    cfg.energy_grid = energy_grid(-0.2, 0.2, 9);
    cfg.n_realizations = 40;
    let curve = run_ensemble(&cfg).unwrap();
    assert_eq!(curve.skipped, 0);
    for p in &curve.points {
        for e in &p.p_mc {
            assert!(e.mean >= -3.0 * e.std_error && e.mean <= 1.0 + 3.0 * e.std_error);
        }
    }
}

#[test]
fn band_center_green_function_scales_with_lambda() {
    let one = green_center_check(&model(400, 25, 1.0), 50, 3, 1).unwrap();
    assert!(one.passes, "{one:?}");
    // H and Gamma both scale with lambda on identical streams, so G scales exactly
    let two = green_center_check(&model(400, 25, 2.0), 50, 3, 1).unwrap();
    assert!((two.diag_mean[1] / one.diag_mean[1] - 0.5).abs() < 1e-9);
    assert!((two.diag_mean[0] / one.diag_mean[0] - 0.5).abs() < 1e-9);
}

#[test]
fn correlator_is_diagonal_and_follows_the_width_identity() {
    let cfg = model(200, 25, 1.0);
    let template = ModelTemplate::new(&cfg).unwrap();
    let report = channel_resonance_correlator_check(&template, 120, 0.0, 9).unwrap();
    assert!(report.max_offdiag_z < 4.5, "{}", report.max_offdiag_z);
    // G^dagger Gamma G = -2 Im G gives sum_a X_mm = -2 Im <G> = 2 / lambda
    assert!(
        (report.channel_sum * cfg.lambda - 2.0).abs() < 0.1,
        "{}",
        report.channel_sum
    );
    assert!((report.mean_ratio - 2.0).abs() < 0.15, "{}", report.mean_ratio);

    let mut doubled = cfg.clone();
    doubled.lambda = 2.0;
    doubled.channel_strengths_1 = vec![matched_strength(2.0); 25];
    doubled.channel_strengths_2 = doubled.channel_strengths_1.clone();
    let half = channel_resonance_correlator_check(&ModelTemplate::new(&doubled).unwrap(), 120, 0.0, 9).unwrap();
    assert!((half.channel_sum / report.channel_sum - 0.5).abs() < 0.05);
}
