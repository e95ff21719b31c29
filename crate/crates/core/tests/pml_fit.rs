use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use pmlab::pml::{fit_pml, read_points_csv, rolling_pml, sr_theta_line, InterceptMode, RiskReturnPoint, RollingSpec};
use pmlab::pml::FitOptions;

const R_F: f64 = 0.05 / 252.0;

// Independent least-squares reference (numpy lstsq, cross-checked with
// statsmodels OLS) on pml_noisy50.csv.
const FIXED_SLOPE: f64 = 3.0088829727158881;
const FIXED_STDERR: f64 = 0.10813953026721637;
const FIXED_R2: f64 = 0.74883355052763823;
const FREE_SLOPE: f64 = 2.8369622638389758;
const FREE_STDERR: f64 = 0.23493487997200857;
const FREE_INTERCEPT: f64 = 0.0013475328384454385;
const FREE_R2: f64 = 0.75234540440472708;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn exact_line_fixture() {
    let pts = read_points_csv(fixture("pml_exact_line.csv")).unwrap();
    let fit = fit_pml(&pts, R_F, InterceptMode::Fixed).unwrap();
    assert!((fit.sr_theta - 3.0).abs() < 1e-9, "{}", fit.sr_theta);
    assert!((fit.r2 - 1.0).abs() < 1e-12);
    assert!((sr_theta_line(&fit, 0.0) - R_F).abs() == 0.0);
}

#[test]
fn noisy_fixture_matches_reference_fits() {
    let pts = read_points_csv(fixture("pml_noisy50.csv")).unwrap();
    let fixed = fit_pml(&pts, R_F, InterceptMode::Fixed).unwrap();
    assert!((fixed.sr_theta - FIXED_SLOPE).abs() < 1e-9);
    assert!((fixed.stderr - FIXED_STDERR).abs() < 1e-9);
    assert!((fixed.r2 - FIXED_R2).abs() < 1e-9);
    assert!((fixed.sr_theta_annualized - FIXED_SLOPE * 252f64.sqrt()).abs() < 1e-9);
    assert_eq!((fixed.n_points, fixed.n_clamped), (50, 0));

    let free = fit_pml(&pts, R_F, InterceptMode::Free).unwrap();
    assert!((free.sr_theta - FREE_SLOPE).abs() < 1e-9);
    assert!((free.stderr - FREE_STDERR).abs() < 1e-9);
    assert!((free.fitted_intercept.unwrap() - FREE_INTERCEPT).abs() < 1e-9);
    assert!((free.r2 - FREE_R2).abs() < 1e-9);
}

#[test]
fn slope_recovered_within_three_stderr() {
    let sigma = Uniform::new(1e-3, 1e-2).unwrap();
    let noise = Normal::new(0.0, 2e-3).unwrap();
    let trials = 1000u64;
    let hits = (0..trials)
        .filter(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<RiskReturnPoint<f64>> = (0..30)
                .map(|i| {
                    let s = sigma.sample(&mut rng);
                    RiskReturnPoint {
                        config_id: i.to_string(),
                        mean_return: R_F + 2.5 * s + noise.sample(&mut rng),
                        sigma_total: s,
                        sigma_mc: 0.0,
                        sigma_priced: s,
                        clamped: false,
                    }
                })
                .collect();
            let fit = fit_pml(&pts, R_F, InterceptMode::Fixed).unwrap();
            (fit.sr_theta - 2.5).abs() <= 3.0 * fit.stderr
        })
        .count();
    assert!(hits as u64 * 100 >= 95 * trials, "{hits}/{trials}");
}

#[test]
fn whole_series_window_gives_one_rolling_point() {
    use pmlab::analysis::SweepSpec;
    use pmlab::backtest::StrategyConfig;
    use pmlab::market_data::{gen_synthetic, SyntheticSpec};
    use pmlab::predictor::TrainSpec;

    let series = gen_synthetic(&SyntheticSpec {
        n_ticks: 3_000,
        dt_ns: 1,
        sigma_noise: 1e-4,
        phi: 0.9,
        sigma_signal: 5e-5,
        spread_bps: 1.0,
        seed: 4,
        decay_to: None,
    })
    .unwrap();
    let train = TrainSpec { window: 5, hidden: vec![8], epochs: 50, dropout_p: 0.2, ..TrainSpec::default() };
    let sweep = SweepSpec {
        n_configs: 6,
        threshold_bps: [0.0, 1.0],
        stop_loss_bps: [5.0, 30.0],
        take_profit_bps: [5.0, 30.0],
        fee_bps: 0.0,
        period_ticks: 100,
        allow_short: true,
        seed: 1,
        k: 4,
        per_tick_masks: false,
        mc_mode: Default::default(),
    };
    let observed = StrategyConfig {
        threshold_bps: 0.5,
        stop_loss_bps: 20.0,
        take_profit_bps: 20.0,
        fee_bps: 0.0,
        allow_short: true,
        period_ticks: 100,
    };
    let rolling = RollingSpec { window_ticks: 3_000, step_ticks: 3_000, train_fraction: 0.5 };
    let r = rolling_pml(&series, &train, &sweep, &rolling, &observed, &FitOptions::new(R_F)).unwrap();
    assert_eq!(r.window_starts, vec![0]);
    assert_eq!(r.sr_theta_series.len(), 1);
    assert_eq!(r.gap_series.len(), 1);
    assert!(r.sr_theta_series[0].is_some());

    let too_short = RollingSpec { window_ticks: 12, step_ticks: 12, train_fraction: 0.5 };
    assert!(rolling_pml(&series, &train, &sweep, &too_short, &observed, &FitOptions::new(R_F)).is_err());
}
