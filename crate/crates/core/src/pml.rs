//! Pretrained Market Line estimation.
//!
//! Each strategy contributes one point in the risk-return plane. Its total
//! volatility is reduced by the MC-dropout component to a priced volatility,
//! and the slope of excess return on priced volatility is the Foundation
//! Sharpe Ratio.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, SweepSpec};
use crate::backtest::{run_backtest, sharpe, BacktestResult, StrategyConfig};
use crate::error::{Error, Result};
use crate::market_data::TickSeries;
use crate::predictor::{self, TrainSpec};
use crate::report::fmt_sig12;
use crate::scalar::Scalar;
use crate::uncertainty::McEstimate;

pub const POINTS_CSV_HEADER: &str = "config_id,mean_return,sigma_total,sigma_mc,sigma_priced,clamped";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReturnPoint<T> {
    pub config_id: String,
    pub mean_return: T,
    pub sigma_total: T,
    pub sigma_mc: T,
    pub sigma_priced: T,
    /// Set when the MC variance exceeded the total variance.
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterceptMode {
    /// Line through `(0, r_f)`.
    #[default]
    Fixed,
    Free,
}

/// Which volatility the fit regresses returns on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PricedRisk {
    /// `sqrt(max(0, sigma_total^2 - sigma_mc^2))`
    #[default]
    Residual,
    /// `sigma_mc` itself.
    McOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions<T> {
    pub r_f_per_period: T,
    pub intercept: InterceptMode,
    pub regressor: PricedRisk,
    pub periods_per_year: T,
}

impl<T: Scalar> FitOptions<T> {
    pub fn new(r_f_per_period: T) -> Self {
        Self {
            r_f_per_period,
            intercept: InterceptMode::Fixed,
            regressor: PricedRisk::Residual,
            periods_per_year: T::lit(252.0),
        }
    }

    pub fn intercept(mut self, mode: InterceptMode) -> Self {
        self.intercept = mode;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmlFit<T> {
    /// Slope per period.
    pub sr_theta: T,
    pub sr_theta_annualized: T,
    pub stderr: T,
    pub r2: T,
    pub r_f_per_period: T,
    pub periods_per_year: T,
    pub n_points: usize,
    pub n_clamped: usize,
    pub intercept_mode: InterceptMode,
    pub regressor: PricedRisk,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fitted_intercept: Option<T>,
}

/// Builds a risk-return point from a strategy's moments and its MC variance.
pub fn priced_point_from_moments<T: Scalar>(
    config_id: impl Into<String>,
    mean_return: T,
    sigma_total: T,
    sigma2_mc: T,
) -> RiskReturnPoint<T> {
    let diff = sigma_total * sigma_total - sigma2_mc;
    RiskReturnPoint {
        config_id: config_id.into(),
        mean_return,
        sigma_total,
        sigma_mc: sigma2_mc.max(T::zero()).sqrt(),
        sigma_priced: diff.max(T::zero()).sqrt(),
        clamped: diff < T::zero(),
    }
}

pub fn priced_point(
    config_id: impl Into<String>,
    result: &BacktestResult,
    mc: &McEstimate<f64>,
) -> Result<RiskReturnPoint<f64>> {
    if mc.n_periods != result.period_returns.len() {
        return Err(Error::invalid(format!(
            "period mismatch: backtest has {} periods, MC estimate {}",
            result.period_returns.len(),
            mc.n_periods
        )));
    }
    Ok(priced_point_from_moments(
        config_id,
        result.mean,
        result.stdev,
        mc.sigma2_mc,
    ))
}

fn regressor_value<T: Scalar>(p: &RiskReturnPoint<T>, which: PricedRisk) -> T {
    match which {
        PricedRisk::Residual => p.sigma_priced,
        PricedRisk::McOnly => p.sigma_mc,
    }
}

/// Least-squares PML fit with classical homoskedastic slope standard error.
pub fn fit_pml<T: Scalar>(
    points: &[RiskReturnPoint<T>],
    r_f_per_period: T,
    intercept: InterceptMode,
) -> Result<PmlFit<T>> {
    fit_pml_with(points, &FitOptions::new(r_f_per_period).intercept(intercept))
}

pub fn fit_pml_with<T: Scalar>(points: &[RiskReturnPoint<T>], opts: &FitOptions<T>) -> Result<PmlFit<T>> {
    let needed = match opts.intercept {
        InterceptMode::Fixed => 2,
        InterceptMode::Free => 3,
    };
    if points.len() < needed {
        return Err(Error::InsufficientPoints {
            needed,
            got: points.len(),
        });
    }
    let xs: Vec<T> = points.iter().map(|p| regressor_value(p, opts.regressor)).collect();
    let ys: Vec<T> = points
        .iter()
        .map(|p| p.mean_return - opts.r_f_per_period)
        .collect();
    if xs.iter().all(|&x| x == xs[0]) {
        return Err(Error::numerical("all priced volatilities are identical"));
    }
    let n = T::from_usize_lossy(xs.len());
    let y_mean = ys.iter().copied().sum::<T>() / n;
    let sst: T = ys.iter().map(|&y| (y - y_mean) * (y - y_mean)).sum();

    let (slope, intercept, ssr, sxx, dof) = match opts.intercept {
        InterceptMode::Fixed => {
            let sxx: T = xs.iter().map(|&x| x * x).sum();
            let sxy: T = xs.iter().zip(&ys).map(|(&x, &y)| x * y).sum();
            let slope = sxy / sxx;
            let ssr: T = xs
                .iter()
                .zip(&ys)
                .map(|(&x, &y)| (y - slope * x) * (y - slope * x))
                .sum();
            (slope, None, ssr, sxx, xs.len() - 1)
        }
        InterceptMode::Free => {
            let x_mean = xs.iter().copied().sum::<T>() / n;
            let sxx: T = xs.iter().map(|&x| (x - x_mean) * (x - x_mean)).sum();
            let sxy: T = xs
                .iter()
                .zip(&ys)
                .map(|(&x, &y)| (x - x_mean) * (y - y_mean))
                .sum();
            let slope = sxy / sxx;
            let a = y_mean - slope * x_mean;
            let ssr: T = xs
                .iter()
                .zip(&ys)
                .map(|(&x, &y)| (y - a - slope * x) * (y - a - slope * x))
                .sum();
            (slope, Some(a + opts.r_f_per_period), ssr, sxx, xs.len() - 2)
        }
    };
    let stderr = (ssr / T::from_usize_lossy(dof) / sxx).sqrt();
    let r2 = if sst > T::zero() {
        T::one() - ssr / sst
    } else if ssr == T::zero() {
        T::one()
    } else {
        T::neg_infinity()
    };
    Ok(PmlFit {
        sr_theta: slope,
        sr_theta_annualized: slope * opts.periods_per_year.sqrt(),
        stderr,
        r2,
        r_f_per_period: opts.r_f_per_period,
        periods_per_year: opts.periods_per_year,
        n_points: points.len(),
        n_clamped: points.iter().filter(|p| p.clamped).count(),
        intercept_mode: opts.intercept,
        regressor: opts.regressor,
        fitted_intercept: intercept,
    })
}

/// Expected return on the fitted line at volatility `sigma`.
pub fn sr_theta_line<T: Scalar>(fit: &PmlFit<T>, sigma: T) -> T {
    fit.r_f_per_period + sigma * fit.sr_theta
}

/// Standard deviation of the slope over `n_boot` seeded resamples of the points.
pub fn bootstrap_stderr<T: Scalar>(
    points: &[RiskReturnPoint<T>],
    opts: &FitOptions<T>,
    n_boot: usize,
    seed: u64,
) -> Result<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slopes = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        let sample: Vec<RiskReturnPoint<T>> = (0..points.len())
            .map(|_| points[rng.random_range(0..points.len())].clone())
            .collect();
        // resamples with a single distinct volatility carry no slope information
        if let Ok(fit) = fit_pml_with(&sample, opts) {
            slopes.push(fit.sr_theta);
        }
    }
    if slopes.len() < 2 {
        return Err(Error::numerical("bootstrap produced fewer than two fits"));
    }
    Ok(crate::stats::pop_stdev(&slopes).expect("nonempty"))
}

pub fn points_csv<T: Scalar>(points: &[RiskReturnPoint<T>]) -> String {
    let mut out = String::from(POINTS_CSV_HEADER);
    out.push('\n');
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            p.config_id,
            fmt_sig12(p.mean_return.as_f64()),
            fmt_sig12(p.sigma_total.as_f64()),
            fmt_sig12(p.sigma_mc.as_f64()),
            fmt_sig12(p.sigma_priced.as_f64()),
            p.clamped
        );
    }
    out
}

#[derive(Debug, Deserialize)]
struct PointRow {
    config_id: String,
    mean_return: f64,
    sigma_total: f64,
    sigma_mc: f64,
    sigma_priced: f64,
    clamped: bool,
}

/// Reads a points CSV; the header must match [`POINTS_CSV_HEADER`] exactly.
pub fn read_points_csv(path: impl AsRef<Path>) -> Result<Vec<RiskReturnPoint<f64>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_points_csv(&text, path)
}

pub fn parse_points_csv(text: &str, origin: &Path) -> Result<Vec<RiskReturnPoint<f64>>> {
    let data_err = |message: String| Error::Data {
        path: origin.to_path_buf(),
        message,
    };
    let header = text.lines().next().unwrap_or("");
    if header.trim_end_matches('\r') != POINTS_CSV_HEADER {
        return Err(data_err(format!("expected header `{POINTS_CSV_HEADER}`")));
    }
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut points = Vec::new();
    for (i, row) in reader.deserialize::<PointRow>().enumerate() {
        let row = row.map_err(|e| data_err(format!("row {}: {e}", i + 2)))?;
        points.push(RiskReturnPoint {
            config_id: row.config_id,
            mean_return: row.mean_return,
            sigma_total: row.sigma_total,
            sigma_mc: row.sigma_mc,
            sigma_priced: row.sigma_priced,
            clamped: row.clamped,
        });
    }
    if points.is_empty() {
        return Err(data_err("no points".into()));
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingSpec {
    pub window_ticks: usize,
    pub step_ticks: usize,
    /// Leading share of each window used to train the predictor.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_train_fraction() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingPmlResult {
    pub window_starts: Vec<usize>,
    /// Fitted slope per window; `None` where the fit was degenerate.
    pub sr_theta_series: Vec<Option<f64>>,
    /// Per-period Sharpe of the observed strategy per window.
    pub sr_observed_series: Vec<Option<f64>>,
    pub gap_series: Vec<Option<f64>>,
}

impl RollingPmlResult {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(fmt_sig12).unwrap_or_default();
        let mut out = String::from("window_start,sr_theta,sr_observed,gap\n");
        for i in 0..self.window_starts.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.window_starts[i],
                opt(self.sr_theta_series[i]),
                opt(self.sr_observed_series[i]),
                opt(self.gap_series[i])
            );
        }
        out
    }
}

/// Window start offsets for a rolling analysis.
pub fn rolling_windows(n_ticks: usize, window: usize, step: usize) -> Result<Vec<usize>> {
    if window == 0 || step == 0 {
        return Err(Error::invalid("rolling window and step must be positive"));
    }
    if window > n_ticks {
        return Err(Error::invalid(format!(
            "rolling window of {window} ticks exceeds series of {n_ticks}"
        )));
    }
    Ok((0..)
        .map(|i| i * step)
        .take_while(|s| s + window <= n_ticks)
        .collect())
}

/// Refits the PML on successive windows: each window retrains the predictor
/// on its leading slice, sweeps the trailing slice and fits the line.
#[allow(clippy::too_many_arguments)]
pub fn rolling_pml(
    series: &TickSeries,
    train_spec: &TrainSpec,
    sweep_spec: &SweepSpec,
    rolling: &RollingSpec,
    observed: &StrategyConfig,
    opts: &FitOptions<f64>,
) -> Result<RollingPmlResult> {
    use rayon::prelude::*;

    if !(rolling.train_fraction > 0.0 && rolling.train_fraction < 1.0) {
        return Err(Error::invalid("train_fraction must lie in (0, 1)"));
    }
    let starts = rolling_windows(series.len(), rolling.window_ticks, rolling.step_ticks)?;
    let train_len = (rolling.window_ticks as f64 * rolling.train_fraction).round() as usize;
    if train_len <= train_spec.window + 1 || rolling.window_ticks - train_len < train_spec.window + 2 {
        return Err(Error::invalid(format!(
            "rolling window of {} ticks is too short for training window {}",
            rolling.window_ticks, train_spec.window
        )));
    }

    let per_window: Vec<Result<(Option<f64>, Option<f64>)>> = starts
        .par_iter()
        .map(|&start| {
            let train = series.slice(start, start + train_len)?;
            let eval = series.slice(start + train_len, start + rolling.window_ticks)?;
            let p = predictor::train(&train, train_spec)?;
            let entries = analysis::sweep(&eval, &p, sweep_spec)?;
            let points = analysis::sweep_points(&entries)?;
            let sr_theta = fit_pml_with(&points, opts).ok().map(|f| f.sr_theta);
            let obs = run_backtest(&eval, &p.eval_mode(), observed)?;
            let sr_obs = sharpe(&obs, opts.r_f_per_period, opts.periods_per_year).map(|s| s.per_period);
            Ok((sr_theta, sr_obs))
        })
        .collect();

    let mut out = RollingPmlResult {
        window_starts: starts,
        sr_theta_series: Vec::new(),
        sr_observed_series: Vec::new(),
        gap_series: Vec::new(),
    };
    for r in per_window {
        let (theta, obs) = r?;
        out.sr_theta_series.push(theta);
        out.sr_observed_series.push(obs);
        out.gap_series.push(theta.zip(obs).map(|(a, b)| a - b));
    }
    Ok(out)
}
