//! Monte-Carlo dropout disentanglement of strategy return variance.
//!
//! K dropout variants of one strategy are backtested over the same periods.
//! Their cross-variant spread is the model (MC) component of the strategy's
//! variance; what remains of the total variance is the priced part.

use serde::{Deserialize, Serialize};

use crate::backtest::BacktestResult;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McMode {
    /// Cross-variant variance per period, averaged over periods.
    #[default]
    PerPeriod,
    /// Variance of the K whole-window mean returns.
    WholeWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate<T> {
    pub mu_mc: T,
    pub sigma2_mc: T,
    pub k: usize,
    pub n_periods: usize,
    pub mode: McMode,
    pub per_period_variance: Vec<T>,
}

impl<T: Scalar> McEstimate<T> {
    /// Estimate for a single deterministic strategy: no MC spread.
    pub fn single(period_returns: &[T]) -> Self {
        let n = period_returns.len();
        let mu = if n == 0 {
            T::zero()
        } else {
            period_returns.iter().copied().sum::<T>() / T::from_usize_lossy(n)
        };
        Self {
            mu_mc: mu,
            sigma2_mc: T::zero(),
            k: 1,
            n_periods: n,
            mode: McMode::PerPeriod,
            per_period_variance: vec![T::zero(); n],
        }
    }

    pub fn sigma_mc(&self) -> T {
        self.sigma2_mc.sqrt()
    }
}

/// Disentangles K aligned per-period return series.
pub fn mc_disentangle_returns<T: Scalar>(variants: &[&[T]], mode: McMode) -> Result<McEstimate<T>> {
    let k = variants.len();
    if k < 2 {
        return Err(Error::invalid(format!("MC estimate needs K >= 2 variants, got {k}")));
    }
    let n = variants[0].len();
    if n == 0 {
        return Err(Error::invalid("variants have no periods"));
    }
    if let Some(bad) = variants.iter().position(|v| v.len() != n) {
        return Err(Error::invalid(format!(
            "mismatched period counts: variant 0 has {n}, variant {bad} has {}",
            variants[bad].len()
        )));
    }
    let kf = T::from_usize_lossy(k);
    let nf = T::from_usize_lossy(n);
    let cross_variance = |values: &mut dyn Iterator<Item = T>| -> (T, T) {
        let xs: Vec<T> = values.collect();
        let m = xs.iter().copied().sum::<T>() / kf;
        let v = xs.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / kf;
        (m, v)
    };

    let (per_period_variance, mu_mc) = match mode {
        McMode::PerPeriod => {
            let mut vars = Vec::with_capacity(n);
            let mut mean_acc = T::zero();
            for t in 0..n {
                let (m, v) = cross_variance(&mut variants.iter().map(|r| r[t]));
                vars.push(v);
                mean_acc = mean_acc + m;
            }
            (vars, mean_acc / nf)
        }
        McMode::WholeWindow => {
            let (m, v) = cross_variance(
                &mut variants.iter().map(|r| r.iter().copied().sum::<T>() / nf),
            );
            (vec![v], m)
        }
    };
    let sigma2_mc = per_period_variance.iter().copied().sum::<T>()
        / T::from_usize_lossy(per_period_variance.len());
    Ok(McEstimate {
        mu_mc,
        sigma2_mc,
        k,
        n_periods: n,
        mode,
        per_period_variance,
    })
}

pub fn mc_disentangle(variant_results: &[BacktestResult]) -> Result<McEstimate<f64>> {
    mc_disentangle_with(variant_results, McMode::PerPeriod)
}

pub fn mc_disentangle_with(variant_results: &[BacktestResult], mode: McMode) -> Result<McEstimate<f64>> {
    let series: Vec<&[f64]> = variant_results
        .iter()
        .map(|r| r.period_returns.as_slice())
        .collect();
    mc_disentangle_returns(&series, mode)
}
