//! Tick-by-tick backtest of a predictor under one execution configuration.
//!
//! Orders decided at tick `t` fill at tick `t + 1`: buys at the ask, sells
//! at the bid. One unit-notional position at a time.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{mid, BboTick, TickSeries};
use crate::predictor::Predictor;
use crate::report::fmt_sig12;
use crate::stats;

const BPS: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub threshold_bps: f64,
    pub stop_loss_bps: f64,
    pub take_profit_bps: f64,
    pub fee_bps: f64,
    #[serde(default = "default_true")]
    pub allow_short: bool,
    pub period_ticks: usize,
}

fn default_true() -> bool {
    true
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::invalid(msg)) };
        check(self.threshold_bps >= 0.0, "threshold_bps must be >= 0")?;
        check(self.stop_loss_bps > 0.0, "stop_loss_bps must be > 0")?;
        check(self.take_profit_bps > 0.0, "take_profit_bps must be > 0")?;
        check(self.fee_bps >= 0.0, "fee_bps must be >= 0")?;
        check(self.period_ticks >= 1, "period_ticks must be >= 1")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Side {
    Buy,
    Sell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillReason {
    Entry,
    TakeProfit,
    StopLoss,
    SignalFlip,
    EndOfData,
}

impl Side {
    pub fn as_str(&self) -> &'static str {
        match self {
            Side::Buy => "BUY",
            Side::Sell => "SELL",
        }
    }
}

impl FillReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            FillReason::Entry => "entry",
            FillReason::TakeProfit => "take_profit",
            FillReason::StopLoss => "stop_loss",
            FillReason::SignalFlip => "signal_flip",
            FillReason::EndOfData => "end_of_data",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fill {
    pub ts: i64,
    pub side: Side,
    pub price: f64,
    pub reason: FillReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub period_returns: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `period_returns`.
    pub stdev: f64,
    pub n_trades: usize,
    /// Net return of each closed trade, in closing order.
    pub trade_returns: Vec<f64>,
    pub fills: Vec<Fill>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpeRatio {
    pub per_period: f64,
    pub annualized: f64,
}

#[derive(Debug, Clone, Copy)]
enum State {
    Flat,
    PendingEntry { dir: f64 },
    Open { dir: f64, entry: f64 },
    PendingExit { dir: f64, entry: f64, reason: FillReason },
}

fn side_for(dir: f64, opening: bool) -> Side {
    match (dir > 0.0, opening) {
        (true, true) | (false, false) => Side::Buy,
        _ => Side::Sell,
    }
}

fn fill_price(tick: &BboTick, side: Side) -> f64 {
    match side {
        Side::Buy => tick.ask,
        Side::Sell => tick.bid,
    }
}

/// Backtests `p` over `series`.
pub fn run_backtest(series: &TickSeries, p: &Predictor, cfg: &StrategyConfig) -> Result<BacktestResult> {
    let need = p.required_history() + 2;
    if series.len() < need {
        return Err(Error::invalid(format!(
            "series of {} ticks is too short for a {} predictor (needs {need})",
            series.len(),
            p.kind_name()
        )));
    }
    let signals = p.surprise_series(series.ticks());
    backtest_signals(series.ticks(), &signals, cfg)
}

/// Backtests a precomputed surprise series; `signals[t]` is the surprise
/// observed at tick `t` (`None` where undefined).
pub fn backtest_signals(
    ticks: &[BboTick],
    signals: &[Option<f64>],
    cfg: &StrategyConfig,
) -> Result<BacktestResult> {
    cfg.validate()?;
    if signals.len() != ticks.len() {
        return Err(Error::invalid("signal series length differs from tick series"));
    }
    let n = ticks.len();
    let threshold = cfg.threshold_bps * BPS;
    let take_profit = cfg.take_profit_bps * BPS;
    let stop_loss = cfg.stop_loss_bps * BPS;
    let fee = cfg.fee_bps * BPS;

    let n_periods = n.div_ceil(cfg.period_ticks).max(1);
    let mut period_returns = vec![0.0; n_periods];
    let mut trade_returns = Vec::new();
    let mut fills = Vec::new();
    let mut state = State::Flat;

    let mut close = |t: usize, dir: f64, entry: f64, reason: FillReason, fills: &mut Vec<Fill>| {
        let side = side_for(dir, false);
        let price = fill_price(&ticks[t], side);
        fills.push(Fill {
            ts: ticks[t].ts,
            side,
            price,
            reason,
        });
        let gross = if dir > 0.0 { price / entry } else { entry / price };
        let ret = gross - 1.0 - 2.0 * fee;
        trade_returns.push(ret);
        period_returns[t / cfg.period_ticks] += ret;
    };

    for t in 0..n {
        let tick = &ticks[t];
        state = match state {
            State::PendingEntry { dir } => {
                let side = side_for(dir, true);
                let price = fill_price(tick, side);
                fills.push(Fill {
                    ts: tick.ts,
                    side,
                    price,
                    reason: FillReason::Entry,
                });
                State::Open { dir, entry: price }
            }
            State::PendingExit { dir, entry, reason } => {
                close(t, dir, entry, reason, &mut fills);
                State::Flat
            }
            s => s,
        };

        if t + 1 == n {
            if let State::Open { dir, entry } = state {
                close(t, dir, entry, FillReason::EndOfData, &mut fills);
            }
            break;
        }

        state = match state {
            // an entry filled on the final tick would close on that same tick
            State::Flat if t + 2 == n => State::Flat,
            State::Flat => match signals[t] {
                Some(s) if s > threshold => State::PendingEntry { dir: 1.0 },
                Some(s) if s < -threshold && cfg.allow_short => State::PendingEntry { dir: -1.0 },
                _ => State::Flat,
            },
            State::Open { dir, entry } => {
                let pnl = dir * (mid(tick) / entry - 1.0);
                let reason = if pnl >= take_profit {
                    Some(FillReason::TakeProfit)
                } else if pnl <= -stop_loss {
                    Some(FillReason::StopLoss)
                } else if matches!(signals[t], Some(s) if s * dir < 0.0) {
                    Some(FillReason::SignalFlip)
                } else {
                    None
                };
                match reason {
                    Some(reason) => State::PendingExit { dir, entry, reason },
                    None => state,
                }
            }
            s => s,
        };
    }

    let mean = stats::mean(&period_returns).unwrap_or(0.0);
    let stdev = stats::pop_stdev(&period_returns).unwrap_or(0.0);
    Ok(BacktestResult {
        period_returns,
        mean,
        stdev,
        n_trades: trade_returns.len(),
        trade_returns,
        fills,
    })
}

/// Excess return per unit of period volatility; `None` when the volatility is zero.
pub fn sharpe(result: &BacktestResult, r_f_per_period: f64, periods_per_year: f64) -> Option<SharpeRatio> {
    if !(result.stdev > 0.0) {
        return None;
    }
    let per_period = (result.mean - r_f_per_period) / result.stdev;
    Some(SharpeRatio {
        per_period,
        annualized: per_period * periods_per_year.sqrt(),
    })
}

/// Equal-bet combination of one config run on several assets: period returns
/// are averaged period by period, trades and fills are concatenated.
pub fn average_across_assets(results: &[BacktestResult]) -> Result<BacktestResult> {
    let first = results.first().ok_or_else(|| Error::invalid("no results to average"))?;
    let n = first.period_returns.len();
    if results.iter().any(|r| r.period_returns.len() != n) {
        return Err(Error::invalid("mismatched period counts across assets"));
    }
    let k = results.len() as f64;
    let period_returns: Vec<f64> = (0..n)
        .map(|t| results.iter().map(|r| r.period_returns[t]).sum::<f64>() / k)
        .collect();
    let trade_returns: Vec<f64> = results.iter().flat_map(|r| r.trade_returns.iter().copied()).collect();
    Ok(BacktestResult {
        mean: stats::mean(&period_returns).unwrap_or(0.0),
        stdev: stats::pop_stdev(&period_returns).unwrap_or(0.0),
        period_returns,
        n_trades: trade_returns.len(),
        trade_returns,
        fills: results.iter().flat_map(|r| r.fills.iter().cloned()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestSummary {
    pub n_periods: usize,
    pub n_trades: usize,
    pub mean: f64,
    pub stdev: f64,
    pub sharpe: Option<SharpeRatio>,
}

impl BacktestResult {
    pub fn summary(&self, r_f_per_period: f64, periods_per_year: f64) -> BacktestSummary {
        BacktestSummary {
            n_periods: self.period_returns.len(),
            n_trades: self.n_trades,
            mean: self.mean,
            stdev: self.stdev,
            sharpe: sharpe(self, r_f_per_period, periods_per_year),
        }
    }

    /// `period,return` rows.
    pub fn period_returns_csv(&self) -> String {
        let mut out = String::from("period,return\n");
        for (i, r) in self.period_returns.iter().enumerate() {
            let _ = writeln!(out, "{i},{}", fmt_sig12(*r));
        }
        out
    }

    /// `ts,side,price,reason` rows.
    pub fn fills_csv(&self) -> String {
        let mut out = String::from("ts,side,price,reason\n");
        for f in &self.fills {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                f.ts,
                f.side.as_str(),
                fmt_sig12(f.price),
                f.reason.as_str()
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> Vec<BboTick> {
        [
            (99.0, 101.0),
            (99.5, 100.0),
            (103.0, 104.0),
            (105.0, 105.5),
            (105.0, 106.0),
            (105.0, 106.0),
        ]
        .iter()
        .enumerate()
        .map(|(i, &(b, a))| BboTick::new(i as i64, b, a))
        .collect()
    }

    fn cfg(threshold: f64, sl: f64, tp: f64) -> StrategyConfig {
        StrategyConfig {
            threshold_bps: threshold,
            stop_loss_bps: sl,
            take_profit_bps: tp,
            fee_bps: 10.0,
            allow_short: true,
            period_ticks: 6,
        }
    }

    #[test]
    fn long_take_profit_walkthrough() {
        let series = TickSeries::new("S", 1, scenario()).unwrap();
        let p = Predictor::leaked(2).unwrap();
        let r = run_backtest(&series, &p, &cfg(50.0, 1000.0, 500.0)).unwrap();
        assert_eq!(r.n_trades, 1);
        assert_eq!(r.fills[0], Fill { ts: 1, side: Side::Buy, price: 100.0, reason: FillReason::Entry });
        assert_eq!(r.fills[1], Fill { ts: 4, side: Side::Sell, price: 105.0, reason: FillReason::TakeProfit });
        assert!((r.trade_returns[0] - 0.048).abs() < 1e-12);
    }

    #[test]
    fn short_stop_loss_walkthrough() {
        let mut signals = vec![None; 6];
        signals[0] = Some(-0.01);
        let r = backtest_signals(&scenario(), &signals, &cfg(50.0, 40.0, 500.0)).unwrap();
        assert_eq!(r.n_trades, 1);
        assert_eq!(r.fills[0].side, Side::Sell);
        assert_eq!(r.fills[0].price, 99.5);
        assert_eq!(r.fills[1], Fill { ts: 3, side: Side::Buy, price: 105.5, reason: FillReason::StopLoss });
        let expected = 99.5 / 105.5 - 1.0 - 0.002;
        assert!((r.trade_returns[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn no_signal_no_trades() {
        let series = TickSeries::new("S", 1, scenario()).unwrap();
        let p = Predictor::leaked(2).unwrap();
        let r = run_backtest(&series, &p, &cfg(1e6, 10.0, 10.0)).unwrap();
        assert_eq!(r.n_trades, 0);
        assert!(r.period_returns.iter().all(|&x| x == 0.0));
        assert_eq!(r.stdev, 0.0);
        assert!(sharpe(&r, 0.0, 252.0).is_none());
    }

    #[test]
    fn signal_flip_and_end_of_data() {
        let ticks = scenario();
        let signals = vec![Some(0.01), Some(0.01), Some(-0.01), Some(0.02), None, None];
        let c = StrategyConfig { allow_short: false, ..cfg(0.0, 1e4, 1e4) };
        let r = backtest_signals(&ticks, &signals, &c).unwrap();
        let reasons: Vec<_> = r.fills.iter().map(|f| f.reason).collect();
        assert_eq!(
            reasons,
            vec![FillReason::Entry, FillReason::SignalFlip, FillReason::Entry, FillReason::EndOfData]
        );
        // re-entry decided at t3 (flat after the t3 exit fill) fills at t4
        assert_eq!(r.fills[2].ts, 4);
        assert_eq!(r.fills[3].ts, 5);
        assert_eq!(r.n_trades, 2);
    }

    #[test]
    fn short_disabled_ignores_negative_signal() {
        let signals = vec![Some(-0.01); 6];
        let c = StrategyConfig { allow_short: false, ..cfg(0.0, 40.0, 500.0) };
        assert_eq!(backtest_signals(&scenario(), &signals, &c).unwrap().n_trades, 0);
    }

    #[test]
    fn sharpe_examples() {
        let mut r = backtest_signals(&scenario(), &[None; 6], &cfg(0.0, 1.0, 1.0)).unwrap();
        r.period_returns = vec![0.01, 0.03];
        r.mean = 0.02;
        r.stdev = 0.01;
        let s = sharpe(&r, 0.0, 252.0).unwrap();
        assert!((s.per_period - 2.0).abs() < 1e-12);
        assert!((s.annualized - 2.0 * 252f64.sqrt()).abs() < 1e-9);
        assert_eq!(sharpe(&r, 0.02, 252.0).unwrap().per_period, 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(cfg(-1.0, 1.0, 1.0).validate().is_err());
        assert!(cfg(0.0, 0.0, 1.0).validate().is_err());
        assert!(cfg(0.0, 1.0, 0.0).validate().is_err());
        assert!(StrategyConfig { period_ticks: 0, ..cfg(0.0, 1.0, 1.0) }.validate().is_err());
    }

    #[test]
    fn short_series_is_rejected() {
        let series = TickSeries::new("S", 1, scenario()[..1].to_vec()).unwrap();
        assert!(run_backtest(&series, &Predictor::Persistence, &cfg(0.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn csv_exports() {
        let series = TickSeries::new("S", 1, scenario()).unwrap();
        let r = run_backtest(&series, &Predictor::leaked(2).unwrap(), &cfg(50.0, 1000.0, 500.0)).unwrap();
        assert_eq!(r.fills_csv(), "ts,side,price,reason\n1,BUY,100,entry\n4,SELL,105,take_profit\n");
        assert_eq!(r.period_returns_csv(), "period,return\n0,0.048\n");
    }

    #[test]
    fn asset_average() {
        let mk = |p: Vec<f64>, trades: Vec<f64>| BacktestResult {
            mean: 0.0,
            stdev: 0.0,
            n_trades: trades.len(),
            trade_returns: trades,
            period_returns: p,
            fills: vec![],
        };
        let avg = average_across_assets(&[mk(vec![0.02, 0.0], vec![0.02]), mk(vec![0.0, -0.01], vec![-0.01])]).unwrap();
        assert_eq!(avg.period_returns, vec![0.01, -0.005]);
        assert_eq!(avg.n_trades, 2);
        assert!((avg.mean - 0.0025).abs() < 1e-15);
        assert!(average_across_assets(&[mk(vec![0.0], vec![]), mk(vec![0.0, 0.0], vec![])]).is_err());
        assert!(average_across_assets(&[]).is_err());
    }
}
