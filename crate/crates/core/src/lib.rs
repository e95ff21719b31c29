//! Risk-return analysis of trading strategies that share one pretrained
//! predictor.
//!
//! The math modules ([`capm`], [`uncertainty`], [`pml`], [`stats`]) are
//! generic over [`Scalar`]; the aliases below fix them to `f64` (and `f32`
//! where useful). Tick data, predictors and the backtester work in `f64`.

pub mod analysis;
pub mod backtest;
pub mod capm;
pub mod error;
pub mod experiment;
pub mod market_data;
pub mod pml;
pub mod predictor;
pub mod report;
pub mod scalar;
pub mod stats;
pub mod uncertainty;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Universe = capm::AssetUniverse<f64>;
pub type Portfolio = capm::Portfolio<f64>;
pub type CapmDecomposition = capm::CapmDecomposition<f64>;
pub type McEstimate = uncertainty::McEstimate<f64>;
pub type RiskReturnPoint = pml::RiskReturnPoint<f64>;
pub type PmlFit = pml::PmlFit<f64>;

pub type UniverseF32 = capm::AssetUniverse<f32>;
pub type PortfolioF32 = capm::Portfolio<f32>;
pub type RiskReturnPointF32 = pml::RiskReturnPoint<f32>;
pub type PmlFitF32 = pml::PmlFit<f32>;
