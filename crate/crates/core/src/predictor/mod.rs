//! Mid-price predictors and Monte-Carlo dropout variants.
//!
//! A predictor maps a window of quotes to a predicted mid price. The
//! dropout network is the trainable stand-in for a fine-tuned backbone;
//! persistence, leaked and noise predictors are reference points.

mod net;

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use net::{Dense, DropoutNet, Mask, TrainSpec};

use crate::error::{Error, Result};
use crate::market_data::{mid, BboTick, TickSeries};

/// How a dropout network behaves at inference time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Inference {
    /// Dropout disabled; deterministic.
    Eval,
    /// One mask drawn from `mask_seed`, reused for every tick.
    Frozen {
        mask_seed: u64,
        #[serde(skip)]
        mask: Mask,
    },
    /// A fresh mask per tick, derived from `mask_seed` and the tick timestamp.
    PerTick { mask_seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Predictor {
    DropoutNet {
        net: DropoutNet,
        #[serde(default = "eval_mode")]
        inference: Inference,
    },
    Persistence,
    /// Peeks `horizon` ticks into the future.
    Leaked { horizon: usize },
    /// `mid(now) * exp(e)` with `e ~ N(0, scale^2)` keyed on (seed, ts).
    Noise { scale: f64, seed: u64 },
}

fn eval_mode() -> Inference {
    Inference::Eval
}

fn mix_seed(seed: u64, ts: i64) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed ^ (ts as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains a dropout network on the series' mid prices.
pub fn train(series: &TickSeries, spec: &TrainSpec) -> Result<Predictor> {
    let net = DropoutNet::train(&series.mids(), spec)?;
    Ok(Predictor::DropoutNet {
        net,
        inference: Inference::Eval,
    })
}

impl Predictor {
    pub fn leaked(horizon: usize) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::invalid("leaked horizon must be at least 1"));
        }
        Ok(Predictor::Leaked { horizon })
    }

    pub fn noise(scale: f64, seed: u64) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::invalid("noise scale must be nonnegative"));
        }
        Ok(Predictor::Noise { scale, seed })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Predictor::DropoutNet { .. } => "dropout-net",
            Predictor::Persistence => "persistence",
            Predictor::Leaked { .. } => "leaked",
            Predictor::Noise { .. } => "noise",
        }
    }

    /// Number of past ticks (excluding `now`) required by [`predict`](Self::predict).
    pub fn required_history(&self) -> usize {
        match self {
            Predictor::DropoutNet { net, .. } => net.window(),
            _ => 0,
        }
    }

    /// Ticks after `now` that the predictor reads; nonzero only for the leaked kind.
    pub fn lookahead(&self) -> usize {
        match self {
            Predictor::Leaked { horizon } => *horizon,
            _ => 0,
        }
    }

    pub fn dropout_p(&self) -> f64 {
        match self {
            Predictor::DropoutNet { net, .. } => net.dropout_p(),
            _ => 0.0,
        }
    }

    /// This predictor with dropout disabled.
    pub fn eval_mode(&self) -> Predictor {
        match self {
            Predictor::DropoutNet { net, .. } => Predictor::DropoutNet {
                net: net.clone(),
                inference: Inference::Eval,
            },
            other => other.clone(),
        }
    }

    /// The dropout variant identified by `mask_seed`. Non-network
    /// predictors and networks without dropout return themselves.
    pub fn variant(&self, mask_seed: u64, per_tick: bool) -> Predictor {
        match self {
            Predictor::DropoutNet { net, .. } if net.dropout_p() > 0.0 => {
                let inference = if per_tick {
                    Inference::PerTick { mask_seed }
                } else {
                    Inference::Frozen {
                        mask_seed,
                        mask: net::mask_from_seed(&net.spec.hidden, net.dropout_p(), mask_seed),
                    }
                };
                Predictor::DropoutNet {
                    net: net.clone(),
                    inference,
                }
            }
            other => other.eval_mode(),
        }
    }

    fn net_return(net: &DropoutNet, inference: &Inference, lagged: &[f64], ts: i64) -> f64 {
        match inference {
            Inference::Eval => net.forward(lagged, None),
            Inference::Frozen { mask, mask_seed } => {
                if mask.is_empty() && !net.spec.hidden.is_empty() {
                    // mask is not serialized; rebuild after a load
                    let m = net::mask_from_seed(&net.spec.hidden, net.dropout_p(), *mask_seed);
                    net.forward(lagged, Some(&m))
                } else {
                    net.forward(lagged, Some(mask))
                }
            }
            Inference::PerTick { mask_seed } => {
                let m = net::mask_from_seed(
                    &net.spec.hidden,
                    net.dropout_p(),
                    mix_seed(*mask_seed, ts),
                );
                net.forward(lagged, Some(&m))
            }
        }
    }

    fn noise_factor(scale: f64, seed: u64, ts: i64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, ts));
        let e: f64 = StandardNormal.sample(&mut rng);
        (scale * e).exp()
    }

    /// Predicted mid price at `now`.
    ///
    /// `history` holds the ticks before `now` (oldest first); `future` the
    /// ticks after it and is only read by the leaked kind.
    pub fn predict(
        &self,
        history: &[BboTick],
        now: &BboTick,
        future: Option<&[BboTick]>,
    ) -> Result<f64> {
        let need = self.required_history();
        if history.len() < need {
            return Err(Error::invalid(format!(
                "insufficient history: {} ticks, predictor needs {need}",
                history.len()
            )));
        }
        let now_mid = mid(now);
        match self {
            Predictor::Persistence => Ok(now_mid),
            Predictor::Noise { scale, seed } => Ok(now_mid * Self::noise_factor(*scale, *seed, now.ts)),
            Predictor::Leaked { horizon } => {
                let future = future.ok_or_else(|| {
                    Error::invalid("leaked predictor requires a future window")
                })?;
                let tick = future.get(horizon - 1).ok_or_else(|| {
                    Error::invalid(format!(
                        "future window has {} ticks, leaked horizon is {horizon}",
                        future.len()
                    ))
                })?;
                Ok(mid(tick))
            }
            Predictor::DropoutNet { net, inference } => {
                let mut mids: Vec<f64> = history[history.len() - need..].iter().map(mid).collect();
                mids.push(now_mid);
                let lagged = net::log_returns(&mids);
                let r = Self::net_return(net, inference, &lagged, now.ts);
                Ok(now_mid * r.exp())
            }
        }
    }

    /// Relative model surprise `(predict - mid(now)) / mid(now)`.
    pub fn surprise(
        &self,
        history: &[BboTick],
        now: &BboTick,
        future: Option<&[BboTick]>,
    ) -> Result<f64> {
        let m = mid(now);
        Ok((self.predict(history, now, future)? - m) / m)
    }

    /// Surprise at every tick of `ticks`; `None` where the predictor lacks
    /// history or (for the leaked kind) future.
    pub fn surprise_series(&self, ticks: &[BboTick]) -> Vec<Option<f64>> {
        let n = ticks.len();
        let mids: Vec<f64> = ticks.iter().map(mid).collect();
        match self {
            Predictor::Persistence => vec![Some(0.0); n],
            Predictor::Noise { scale, seed } => ticks
                .iter()
                .zip(&mids)
                .map(|(t, &m)| Some((m * Self::noise_factor(*scale, *seed, t.ts) - m) / m))
                .collect(),
            Predictor::Leaked { horizon } => (0..n)
                .map(|t| {
                    mids.get(t + horizon)
                        .map(|&f| (f - mids[t]) / mids[t])
                })
                .collect(),
            Predictor::DropoutNet { net, inference } => {
                let w = net.window();
                let returns = net::log_returns(&mids);
                (0..n)
                    .map(|t| {
                        if t < w {
                            return None;
                        }
                        let r = Self::net_return(net, inference, &returns[t - w..t], ticks[t].ts);
                        let predicted = mids[t] * r.exp();
                        Some((predicted - mids[t]) / mids[t])
                    })
                    .collect()
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.eval_mode())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// K dropout-activated draws of one base predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSet {
    pub base: Predictor,
    pub mask_seeds: Vec<u64>,
    /// Re-draw the mask at every tick instead of freezing one per variant.
    #[serde(default)]
    pub per_tick: bool,
}

impl VariantSet {
    pub fn k(&self) -> usize {
        self.mask_seeds.len()
    }

    pub fn variant(&self, k: usize) -> Predictor {
        if self.base.dropout_p() == 0.0 {
            return self.base.clone();
        }
        self.base.variant(self.mask_seeds[k], self.per_tick)
    }

    pub fn variants(&self) -> Vec<Predictor> {
        (0..self.k()).map(|k| self.variant(k)).collect()
    }
}

pub fn sample_variants(p: &Predictor, k: usize, seed: u64) -> Result<VariantSet> {
    sample_variants_with(p, k, seed, false)
}

pub fn sample_variants_with(p: &Predictor, k: usize, seed: u64, per_tick: bool) -> Result<VariantSet> {
    if k < 1 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if k > 1 && p.dropout_p() == 0.0 {
        return Err(Error::invalid(format!(
            "no dropout available on {} predictor",
            p.kind_name()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask_seeds = (0..k).map(|_| rng.next_u64()).collect();
    Ok(VariantSet {
        base: p.eval_mode(),
        mask_seeds,
        per_tick,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{gen_synthetic, SyntheticSpec};

    fn tick(bid: f64, ask: f64) -> BboTick {
        BboTick::new(0, bid, ask)
    }

    fn constant_series(n: usize) -> TickSeries {
        let ticks = (0..n as i64).map(|i| BboTick::new(i, 99.0, 101.0)).collect();
        TickSeries::new("C", 1, ticks).unwrap()
    }

    fn small_spec() -> TrainSpec {
        TrainSpec {
            window: 4,
            hidden: vec![6],
            dropout_p: 0.2,
            epochs: 30,
            learning_rate: 0.05,
            l2: 0.0,
            momentum: 0.9,
            seed: 3,
        }
    }

    #[test]
    fn persistence_and_leaked_examples() {
        let now = tick(99.0, 101.0);
        assert_eq!(Predictor::Persistence.predict(&[], &now, None).unwrap(), 100.0);
        let leaked = Predictor::leaked(1).unwrap();
        let fut = [tick(104.0, 106.0)];
        assert_eq!(leaked.predict(&[], &now, Some(&fut)).unwrap(), 105.0);
        assert!(leaked.predict(&[], &now, None).is_err());
        assert!(Predictor::leaked(0).is_err());
    }

    #[test]
    fn surprise_examples() {
        let now = tick(99.0, 101.0);
        assert_eq!(Predictor::Persistence.surprise(&[], &now, None).unwrap(), 0.0);
        let fut = [tick(100.5, 101.5)];
        let s = Predictor::leaked(1).unwrap().surprise(&[], &now, Some(&fut)).unwrap();
        assert!((s - 0.01).abs() < 1e-15);
    }

    #[test]
    fn constant_series_trains_to_zero() {
        let p = train(&constant_series(200), &small_spec()).unwrap();
        let Predictor::DropoutNet { net, .. } = &p else { unreachable!() };
        assert!(net.final_loss <= 1e-8);
        let hist: Vec<BboTick> = (0..4).map(|_| tick(99.0, 101.0)).collect();
        let pred = p.predict(&hist, &tick(99.0, 101.0), None).unwrap();
        assert!((pred - 100.0).abs() <= 1e-4);
    }

    #[test]
    fn training_is_deterministic() {
        let s = gen_synthetic(&SyntheticSpec {
            n_ticks: 400,
            dt_ns: 1,
            sigma_noise: 1e-4,
            phi: 0.9,
            sigma_signal: 5e-5,
            spread_bps: 1.0,
            seed: 5,
            decay_to: None,
        })
        .unwrap();
        let a = train(&s, &small_spec()).unwrap();
        let b = train(&s, &small_spec()).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn training_errors() {
        let err = train(&constant_series(5), &small_spec()).unwrap_err();
        assert!(err.to_string().contains("too short"));
        let diverge = TrainSpec {
            learning_rate: 1e6,
            momentum: 0.0,
            ..small_spec()
        };
        let s = gen_synthetic(&SyntheticSpec {
            n_ticks: 300,
            dt_ns: 1,
            sigma_noise: 1e-4,
            phi: 0.5,
            sigma_signal: 1e-4,
            spread_bps: 1.0,
            seed: 1,
            decay_to: None,
        })
        .unwrap();
        let err = train(&s, &diverge).unwrap_err();
        assert!(err.to_string().contains("epoch"), "{err}");
    }

    #[test]
    fn insufficient_history() {
        let p = train(&constant_series(50), &small_spec()).unwrap();
        let err = p.predict(&[tick(99.0, 101.0)], &tick(99.0, 101.0), None).unwrap_err();
        assert!(err.to_string().contains("insufficient history"));
    }

    #[test]
    fn variant_sampling_rules() {
        let err = sample_variants(&Predictor::Persistence, 5, 1).unwrap_err();
        assert!(err.to_string().contains("no dropout available"));
        let single = sample_variants(&Predictor::Persistence, 1, 1).unwrap();
        assert_eq!(single.variants(), vec![Predictor::Persistence]);
        assert!(sample_variants(&Predictor::Persistence, 0, 1).is_err());

        let no_dropout = train(&constant_series(50), &TrainSpec { dropout_p: 0.0, ..small_spec() }).unwrap();
        assert!(sample_variants(&no_dropout, 5, 1)
            .unwrap_err()
            .to_string()
            .contains("no dropout available"));

        let net = train(&constant_series(50), &small_spec()).unwrap();
        let a = sample_variants(&net, 16, 9).unwrap();
        let b = sample_variants(&net, 16, 9).unwrap();
        assert_eq!(a.mask_seeds, b.mask_seeds);
        assert_eq!(a.k(), 16);
    }

    #[test]
    fn surprise_series_matches_pointwise_predict() {
        let s = gen_synthetic(&SyntheticSpec {
            n_ticks: 120,
            dt_ns: 1,
            sigma_noise: 1e-4,
            phi: 0.9,
            sigma_signal: 5e-5,
            spread_bps: 1.0,
            seed: 8,
            decay_to: None,
        })
        .unwrap();
        let net = train(&s, &small_spec()).unwrap();
        let vs = sample_variants(&net, 3, 4).unwrap();
        let per_tick = sample_variants_with(&net, 2, 4, true).unwrap();
        let predictors = [
            net.clone(),
            vs.variant(1),
            per_tick.variant(0),
            Predictor::leaked(2).unwrap(),
            Predictor::noise(1e-4, 7).unwrap(),
        ];
        let ticks = s.ticks();
        for p in &predictors {
            let series = p.surprise_series(ticks);
            for t in 0..ticks.len() {
                let need = p.required_history();
                let expected = if t < need {
                    None
                } else {
                    p.surprise(&ticks[t - need..t], &ticks[t], Some(&ticks[t + 1..])).ok()
                };
                assert_eq!(series[t], expected, "{} at {t}", p.kind_name());
            }
        }
    }

    #[test]
    fn json_round_trip_preserves_predictions() {
        let net = train(&constant_series(60), &small_spec()).unwrap();
        let back = Predictor::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back, net);
        let text = Predictor::leaked(3).unwrap().to_json().unwrap();
        assert!(text.contains("\"kind\": \"leaked\""));
    }
}
