//! Experiment drivers: hyperparameter sweeps over one predictor, the
//! surprise/forward-return lead-lag curve, and risk-return cluster tightness.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backtest::{backtest_signals, BacktestResult, StrategyConfig};
use crate::error::{Error, Result};
use crate::market_data::{mid, TickSeries};
use crate::pml::{priced_point, RiskReturnPoint};
use crate::predictor::{self, sample_variants_with, Predictor, TrainSpec};
use crate::report::fmt_sig12;
use crate::scalar::Scalar;
use crate::stats;
use crate::uncertainty::{mc_disentangle_with, McEstimate, McMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub n_configs: usize,
    /// Inclusive `[low, high]` ranges in basis points.
    pub threshold_bps: [f64; 2],
    pub stop_loss_bps: [f64; 2],
    pub take_profit_bps: [f64; 2],
    pub fee_bps: f64,
    pub period_ticks: usize,
    #[serde(default = "default_true")]
    pub allow_short: bool,
    pub seed: u64,
    /// Dropout variants per configuration.
    pub k: usize,
    #[serde(default)]
    pub per_tick_masks: bool,
    #[serde(default)]
    pub mc_mode: McMode,
}

fn default_true() -> bool {
    true
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_configs < 2 {
            return Err(Error::invalid("n_configs must be at least 2"));
        }
        if self.k < 1 {
            return Err(Error::invalid("K must be at least 1"));
        }
        for (name, [lo, hi]) in [
            ("threshold_bps", self.threshold_bps),
            ("stop_loss_bps", self.stop_loss_bps),
            ("take_profit_bps", self.take_profit_bps),
        ] {
            if !(lo <= hi) {
                return Err(Error::invalid(format!("{name} range [{lo}, {hi}] is empty")));
            }
        }
        StrategyConfig {
            threshold_bps: self.threshold_bps[0],
            stop_loss_bps: self.stop_loss_bps[0],
            take_profit_bps: self.take_profit_bps[0],
            fee_bps: self.fee_bps,
            allow_short: self.allow_short,
            period_ticks: self.period_ticks,
        }
        .validate()
    }

    /// Configurations drawn uniformly from the ranges; depends only on the
    /// seed and the ranges.
    pub fn configs(&self) -> Vec<StrategyConfig> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut draw = |[lo, hi]: [f64; 2]| {
            let u: f64 = rng.random();
            if lo == hi {
                lo
            } else {
                lo + (hi - lo) * u
            }
        };
        (0..self.n_configs)
            .map(|_| StrategyConfig {
                threshold_bps: draw(self.threshold_bps),
                stop_loss_bps: draw(self.stop_loss_bps),
                take_profit_bps: draw(self.take_profit_bps),
                fee_bps: self.fee_bps,
                allow_short: self.allow_short,
                period_ticks: self.period_ticks,
            })
            .collect()
    }

    /// Seed of the dropout masks used for configuration `config_id`.
    pub fn variant_seed(&self, config_id: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(config_id as u64 + 1);
        rng.next_u64()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub config_id: usize,
    pub config: StrategyConfig,
    pub result: BacktestResult,
    pub mc: McEstimate<f64>,
}

fn evaluate_config(
    series: &TickSeries,
    predictor: &Predictor,
    base_signals: &[Option<f64>],
    spec: &SweepSpec,
    config_id: usize,
    config: StrategyConfig,
) -> Result<SweepEntry> {
    let ticks = series.ticks();
    let result = backtest_signals(ticks, base_signals, &config)?;
    let mc = if spec.k >= 2 {
        let variants =
            sample_variants_with(predictor, spec.k, spec.variant_seed(config_id), spec.per_tick_masks)?;
        let results = variants
            .variants()
            .iter()
            .map(|v| backtest_signals(ticks, &v.surprise_series(ticks), &config))
            .collect::<Result<Vec<_>>>()?;
        mc_disentangle_with(&results, spec.mc_mode)?
    } else {
        McEstimate::single(&result.period_returns)
    };
    Ok(SweepEntry {
        config_id,
        config,
        result,
        mc,
    })
}

/// Backtests every drawn configuration on `series` and MC-disentangles each
/// with its own K dropout variants of `predictor`. Output is in config order.
pub fn sweep(series: &TickSeries, predictor: &Predictor, spec: &SweepSpec) -> Result<Vec<SweepEntry>> {
    spec.validate()?;
    let need = predictor.required_history() + 2;
    if series.len() < need {
        return Err(Error::invalid(format!(
            "series of {} ticks is too short for the predictor (needs {need})",
            series.len()
        )));
    }
    let base = predictor.eval_mode();
    let base_signals = base.surprise_series(series.ticks());
    spec.configs()
        .into_par_iter()
        .enumerate()
        .map(|(i, cfg)| evaluate_config(series, predictor, &base_signals, spec, i, cfg))
        .collect()
}

/// Same configurations as [`sweep`], but configuration `i` runs on its own
/// predictor retrained from `train_series` with seed `train_spec.seed + i`.
pub fn independent_sweep(
    train_series: &TickSeries,
    eval_series: &TickSeries,
    train_spec: &TrainSpec,
    spec: &SweepSpec,
) -> Result<Vec<SweepEntry>> {
    spec.validate()?;
    spec.configs()
        .into_par_iter()
        .enumerate()
        .map(|(i, cfg)| {
            let ts = TrainSpec {
                seed: train_spec.seed.wrapping_add(i as u64),
                ..train_spec.clone()
            };
            let p = predictor::train(train_series, &ts)?;
            let signals = p.eval_mode().surprise_series(eval_series.ticks());
            evaluate_config(eval_series, &p, &signals, spec, i, cfg)
        })
        .collect()
}

pub fn sweep_points(entries: &[SweepEntry]) -> Result<Vec<RiskReturnPoint<f64>>> {
    entries
        .iter()
        .map(|e| priced_point(e.config_id.to_string(), &e.result, &e.mc))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub lags: Vec<i32>,
    /// `None` where either side of the pair has zero variance.
    pub corr: Vec<Option<f64>>,
    /// Pair count per lag.
    pub n: Vec<usize>,
}

impl CorrelationCurve {
    pub fn at(&self, lag: i32) -> Option<f64> {
        let i = self.lags.iter().position(|&l| l == lag)?;
        self.corr[i]
    }

    /// Lag with the largest defined correlation.
    pub fn argmax(&self) -> Option<i32> {
        self.lags
            .iter()
            .zip(&self.corr)
            .filter_map(|(l, c)| c.map(|c| (*l, c)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(l, _)| l)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lag,corr,n\n");
        for i in 0..self.lags.len() {
            let c = self.corr[i].map(fmt_sig12).unwrap_or_default();
            let _ = writeln!(out, "{},{},{}", self.lags[i], c, self.n[i]);
        }
        out
    }
}

/// Pearson correlation of surprise at `t` with `(mid[t+j] - mid[t]) / mid[t]`
/// for `j` in `-max_lag..=max_lag`.
pub fn surprise_return_correlation(
    series: &TickSeries,
    predictor: &Predictor,
    max_lag: usize,
) -> Result<CorrelationCurve> {
    let need = 2 * max_lag + predictor.required_history() + 1;
    if series.len() < need {
        return Err(Error::invalid(format!(
            "series of {} ticks is too short for lags up to {max_lag} (needs {need})",
            series.len()
        )));
    }
    let ticks = series.ticks();
    let mids: Vec<f64> = ticks.iter().map(mid).collect();
    let signals = predictor.eval_mode().surprise_series(ticks);
    let n = ticks.len() as i64;
    let max_lag = max_lag as i32;

    let mut curve = CorrelationCurve {
        lags: (-max_lag..=max_lag).collect(),
        corr: Vec::new(),
        n: Vec::new(),
    };
    for &lag in &curve.lags {
        let (xs, ys): (Vec<f64>, Vec<f64>) = (0..n)
            .filter_map(|t| {
                let s = signals[t as usize]?;
                let u = t + lag as i64;
                if !(0..n).contains(&u) {
                    return None;
                }
                let m = mids[t as usize];
                Some((s, (mids[u as usize] - m) / m))
            })
            .unzip();
        curve.n.push(xs.len());
        curve.corr.push(stats::pearson(&xs, &ys));
    }
    Ok(curve)
}

/// Equal-weighted mean of per-series curves sharing the same lags.
pub fn average_curves(curves: &[CorrelationCurve]) -> Result<CorrelationCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::invalid("no curves to average"))?;
    if curves.iter().any(|c| c.lags != first.lags) {
        return Err(Error::invalid("curves have different lag grids"));
    }
    let k = curves.len() as f64;
    let corr = (0..first.lags.len())
        .map(|i| {
            curves
                .iter()
                .map(|c| c.corr[i])
                .sum::<Option<f64>>()
                .map(|s| s / k)
        })
        .collect();
    let n = (0..first.lags.len())
        .map(|i| curves.iter().map(|c| c.n[i]).sum())
        .collect();
    Ok(CorrelationCurve {
        lags: first.lags.clone(),
        corr,
        n,
    })
}

/// Per-group spread of `(sigma_total, mean_return)`: the trace of the group
/// covariance after both axes are divided by their pooled standard deviation.
pub fn cluster_tightness<T: Scalar>(
    groups: &BTreeMap<String, Vec<RiskReturnPoint<T>>>,
) -> Result<BTreeMap<String, T>> {
    if let Some((name, pts)) = groups.iter().find(|(_, p)| p.len() < 2) {
        return Err(Error::invalid(format!(
            "group {name} has {} points, need at least 2",
            pts.len()
        )));
    }
    let all_sigma: Vec<T> = groups.values().flatten().map(|p| p.sigma_total).collect();
    let all_mean: Vec<T> = groups.values().flatten().map(|p| p.mean_return).collect();
    let scale = |xs: &[T]| {
        let s = stats::pop_stdev(xs).unwrap_or_else(T::one);
        // rounding noise in the mean of identical values is not spread
        let big = xs.iter().fold(T::zero(), |a, &x| a.max(x.abs()));
        if s > big * T::epsilon() * T::lit(16.0) {
            s
        } else {
            T::one()
        }
    };
    let (s_sigma, s_mean) = (scale(&all_sigma), scale(&all_mean));
    Ok(groups
        .iter()
        .map(|(name, pts)| {
            let xs: Vec<T> = pts.iter().map(|p| p.sigma_total / s_sigma).collect();
            let ys: Vec<T> = pts.iter().map(|p| p.mean_return / s_mean).collect();
            let trace = stats::pop_variance(&xs).expect("nonempty")
                + stats::pop_variance(&ys).expect("nonempty");
            (name.clone(), trace)
        })
        .collect())
}
