//! Config-driven experiment runs: data, predictor, sweep, PML fit,
//! correlation and rolling refits, written as a bundle of artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{self, SweepSpec};
use crate::backtest::StrategyConfig;
use crate::error::{Error, Result};
use crate::market_data::{gen_synthetic, load_csv, SyntheticSpec, TickSeries};
use crate::pml::{self, FitOptions, InterceptMode, PricedRisk, RollingSpec};
use crate::predictor::{self, Predictor, TrainSpec};

pub const POINTS_FILE: &str = "points.csv";
pub const PML_FILE: &str = "pml.json";
pub const MC_FILE: &str = "mc.json";
pub const CORRELATION_FILE: &str = "correlation.csv";
pub const ROLLING_FILE: &str = "rolling.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

impl DataSource {
    pub fn load(&self) -> Result<TickSeries> {
        match (&self.path, &self.synthetic) {
            (Some(p), None) => load_csv(p),
            (None, Some(spec)) => gen_synthetic(spec),
            _ => Err(Error::Config(
                "[data] needs exactly one of `path` or `synthetic`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PredictorSpec {
    /// Trained from the `[train]` section.
    DropoutNet,
    Persistence,
    Leaked { horizon: usize },
    Noise { scale: f64, seed: u64 },
}

fn default_predictor() -> PredictorSpec {
    PredictorSpec::DropoutNet
}
fn default_r_f() -> f64 {
    0.05
}
fn default_ppy() -> f64 {
    252.0
}
fn default_train_fraction() -> f64 {
    0.5
}
fn default_max_lag() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_r_f")]
    pub r_f_annual: f64,
    #[serde(default = "default_ppy")]
    pub periods_per_year: f64,
    /// Leading share of the series used to train the predictor; the
    /// remainder is the evaluation slice.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub intercept: InterceptMode,
    #[serde(default)]
    pub regressor: PricedRisk,
    #[serde(default = "default_max_lag")]
    pub correlation_max_lag: usize,
    #[serde(default)]
    pub bootstrap_samples: usize,
    pub data: DataSource,
    #[serde(default = "default_predictor")]
    pub predictor: PredictorSpec,
    #[serde(default)]
    pub train: TrainSpec,
    pub sweep: SweepSpec,
    pub strategy: StrategyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rolling: Option<RollingSpec>,
}

/// Seed for an independent stream of the global seed.
pub fn derive_seed(global: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(global);
    rng.set_stream(stream);
    rng.next_u64()
}

// Nested seeds left out of the file are filled in from the global seed, so
// the resolved config (as echoed in the manifest) is fully explicit.
fn fill_seeds(v: &mut Value) -> Result<()> {
    let global = v
        .get("seed")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Config("missing top-level integer `seed`".into()))?;
    let noise = v.get("predictor").and_then(|p| p.get("kind")).and_then(Value::as_str) == Some("noise");
    let mut fill = |section: &[&str], stream: u64| {
        let mut node = &mut *v;
        for key in section {
            match node.get_mut(*key) {
                Some(n) => node = n,
                None => return,
            }
        }
        if let Some(obj) = node.as_object_mut() {
            obj.entry("seed").or_insert(json!(derive_seed(global, stream)));
        }
    };
    fill(&["data", "synthetic"], 1);
    fill(&["train"], 2);
    fill(&["sweep"], 3);
    if noise {
        fill(&["predictor"], 4);
    }
    Ok(())
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads a TOML or JSON document (chosen by extension) into `T`.
pub fn read_spec<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(config_err)
    } else {
        toml::from_str(&text).map_err(config_err)
    };
    parsed.map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut v: Value = toml::from_str(text).map_err(config_err)?;
        fill_seeds(&mut v)?;
        let cfg: Self = serde_json::from_value(v).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a TOML config, or the `config` echo of a previous run's
    /// `manifest.json`. Relative data paths resolve against the file's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_text(path)?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            let manifest: Value = serde_json::from_str(&text).map_err(config_err)?;
            let mut v = manifest
                .get("config")
                .cloned()
                .ok_or_else(|| Error::Config(format!("{}: no `config` entry", path.display())))?;
            fill_seeds(&mut v)?;
            let cfg: Self = serde_json::from_value(v).map_err(config_err)?;
            cfg.validate()?;
            cfg
        } else {
            Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        if let Some(p) = cfg.data.path.as_mut() {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.r_f_annual >= 0.0 && self.r_f_annual.is_finite()) {
            return bad("r_f_annual must be >= 0");
        }
        if !(self.periods_per_year > 0.0 && self.periods_per_year.is_finite()) {
            return bad("periods_per_year must be > 0");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)");
        }
        if self.data.path.is_some() == self.data.synthetic.is_some() {
            return bad("[data] needs exactly one of `path` or `synthetic`");
        }
        if let Some(s) = &self.data.synthetic {
            s.validate()?;
        }
        if self.predictor == PredictorSpec::DropoutNet || self.rolling.is_some() {
            self.train.validate()?;
        }
        self.sweep.validate()?;
        self.strategy.validate()?;
        Ok(())
    }

    pub fn r_f_per_period(&self) -> f64 {
        self.r_f_annual / self.periods_per_year
    }

    pub fn fit_options(&self) -> FitOptions<f64> {
        FitOptions {
            r_f_per_period: self.r_f_per_period(),
            intercept: self.intercept,
            regressor: self.regressor,
            periods_per_year: self.periods_per_year,
        }
    }

    pub fn build_predictor(&self, train_slice: &TickSeries) -> Result<Predictor> {
        match &self.predictor {
            PredictorSpec::DropoutNet => predictor::train(train_slice, &self.train),
            PredictorSpec::Persistence => Ok(Predictor::Persistence),
            PredictorSpec::Leaked { horizon } => Predictor::leaked(*horizon),
            PredictorSpec::Noise { scale, seed } => Predictor::noise(*scale, *seed),
        }
    }
}

/// Splits a series into its leading training share and the trailing rest.
pub fn split_series(series: &TickSeries, train_fraction: f64) -> Result<(TickSeries, TickSeries)> {
    let cut = (series.len() as f64 * train_fraction).round() as usize;
    if cut == 0 || cut >= series.len() {
        return Err(Error::invalid(format!(
            "train_fraction {train_fraction} leaves an empty slice of a {}-tick series",
            series.len()
        )));
    }
    Ok((series.slice(0, cut)?, series.slice(cut, series.len())?))
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub fit: pml::PmlFit<f64>,
    pub artifacts: Vec<PathBuf>,
}

fn write(dir: &Path, name: &str, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

fn pretty(v: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

/// Runs the whole pipeline and writes the artifact bundle into `output_dir`.
pub fn run(cfg: &ExperimentConfig, output_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let series = cfg.data.load()?;
    let (train_slice, eval_slice) = split_series(&series, cfg.train_fraction)?;
    let predictor = cfg.build_predictor(&train_slice)?;

    let entries = analysis::sweep(&eval_slice, &predictor, &cfg.sweep)?;
    let trading = entries.iter().filter(|e| e.result.n_trades > 0).count();
    if trading == 0 {
        return Err(Error::DegenerateSweep(format!(
            "none of the {} configurations traded on {} evaluation ticks (threshold_bps {:?})",
            entries.len(),
            eval_slice.len(),
            cfg.sweep.threshold_bps
        )));
    }
    let points = analysis::sweep_points(&entries)?;
    let opts = cfg.fit_options();
    let fit = pml::fit_pml_with(&points, &opts)?;
    let free_fit = match cfg.intercept {
        InterceptMode::Fixed => pml::fit_pml_with(&points, &opts.intercept(InterceptMode::Free)).ok(),
        InterceptMode::Free => None,
    };
    let bootstrap = match cfg.bootstrap_samples {
        0 => None,
        n => Some(pml::bootstrap_stderr(&points, &opts, n, derive_seed(cfg.seed, 5))?),
    };
    let correlation = analysis::surprise_return_correlation(&eval_slice, &predictor, cfg.correlation_max_lag)?;
    let rolling = match &cfg.rolling {
        Some(r) => Some(pml::rolling_pml(&series, &cfg.train, &cfg.sweep, r, &cfg.strategy, &opts)?),
        None => None,
    };

    fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
    let mut written = Vec::new();
    write(output_dir, POINTS_FILE, &pml::points_csv(&points), &mut written)?;
    write(output_dir, PML_FILE, &pretty(&fit)?, &mut written)?;
    let mc: Vec<Value> = entries
        .iter()
        .map(|e| json!({ "config_id": e.config_id, "config": e.config, "n_trades": e.result.n_trades, "mc": e.mc }))
        .collect();
    write(output_dir, MC_FILE, &pretty(&mc)?, &mut written)?;
    write(output_dir, CORRELATION_FILE, &correlation.to_csv(), &mut written)?;
    if let Some(r) = &rolling {
        write(output_dir, ROLLING_FILE, &r.to_csv(), &mut written)?;
    }

    let mut echo = cfg.clone();
    if let Some(p) = echo.data.path.as_mut() {
        *p = fs::canonicalize(&*p).map_err(|e| Error::io(&*p, e))?;
    }
    let noise_seed = match cfg.predictor {
        PredictorSpec::Noise { seed, .. } => Some(seed),
        _ => None,
    };
    let manifest = json!({
        "pmlab_version": env!("CARGO_PKG_VERSION"),
        "seeds": {
            "global": cfg.seed,
            "data": cfg.data.synthetic.as_ref().map(|s| s.seed),
            "train": cfg.train.seed,
            "sweep": cfg.sweep.seed,
            "noise": noise_seed,
        },
        "predictor": predictor.kind_name(),
        "n_ticks": series.len(),
        "n_train_ticks": train_slice.len(),
        "n_eval_ticks": eval_slice.len(),
        "n_configs": entries.len(),
        "n_configs_trading": trading,
        "n_points": fit.n_points,
        "n_clamped": fit.n_clamped,
        "free_intercept_fit": free_fit,
        "bootstrap_stderr": bootstrap,
        "artifacts": written.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy()).collect::<Vec<_>>(),
        "config": echo,
    });
    write(output_dir, MANIFEST_FILE, &pretty(&manifest)?, &mut written)?;

    Ok(RunSummary {
        output_dir: output_dir.to_path_buf(),
        fit,
        artifacts: written,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 11

[data.synthetic]
n_ticks = 4000
dt_ns = 1000000000
sigma_noise = 1e-4
phi = 0.9
sigma_signal = 5e-5
spread_bps = 1.0

[predictor]
kind = "leaked"
horizon = 5

[sweep]
n_configs = 6
threshold_bps = [0.0, 1.0]
stop_loss_bps = [5.0, 50.0]
take_profit_bps = [5.0, 50.0]
fee_bps = 0.0
period_ticks = 100
k = 1

[strategy]
threshold_bps = 0.5
stop_loss_bps = 20.0
take_profit_bps = 20.0
fee_bps = 0.0
period_ticks = 100
"#;

    #[test]
    fn seeds_are_filled_from_global() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.data.synthetic.as_ref().unwrap().seed, derive_seed(11, 1));
        assert_eq!(cfg.sweep.seed, derive_seed(11, 3));
        assert_eq!(cfg.r_f_annual, 0.05);
        assert_eq!(cfg.periods_per_year, 252.0);
        let explicit = MINIMAL.replace("k = 1", "k = 1\nseed = 99");
        assert_eq!(ExperimentConfig::from_toml_str(&explicit).unwrap().sweep.seed, 99);
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        let e = ExperimentConfig::from_toml_str(&MINIMAL.replace("seed = 11", "")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = ExperimentConfig::from_toml_str(&MINIMAL.replace("phi = 0.9", "phi = 1.5")).unwrap_err();
        assert!(e.to_string().contains("|phi| < 1"), "{e}");
        let e = ExperimentConfig::from_toml_str(&MINIMAL.replace("seed = 11", "seed = 11\nbogus = 1")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn run_writes_bundle_and_manifest_reruns() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let a = dir.path().join("a");
        let summary = run(&cfg, &a).unwrap();
        assert!(summary.fit.sr_theta.is_finite());
        for f in [POINTS_FILE, PML_FILE, MC_FILE, CORRELATION_FILE, MANIFEST_FILE] {
            assert!(a.join(f).exists(), "{f}");
        }
        assert!(!a.join(ROLLING_FILE).exists());

        let again = ExperimentConfig::load(a.join(MANIFEST_FILE)).unwrap();
        assert_eq!(again, cfg);
        let b = dir.path().join("b");
        run(&again, &b).unwrap();
        for f in [POINTS_FILE, PML_FILE, MC_FILE, CORRELATION_FILE, MANIFEST_FILE] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn no_trades_is_degenerate() {
        let text = MINIMAL.replace("threshold_bps = [0.0, 1.0]", "threshold_bps = [1e6, 1e6]");
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        let e = run(&cfg, tempfile::tempdir().unwrap().path()).unwrap_err();
        assert_eq!(e.exit_code(), 4);
        assert!(e.to_string().contains("degenerate sweep"));
    }
}
