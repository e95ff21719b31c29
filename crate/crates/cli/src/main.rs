use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use pmlab::analysis::{self, SweepSpec};
use pmlab::backtest::{run_backtest, StrategyConfig};
use pmlab::experiment::{self, read_spec, ExperimentConfig};
use pmlab::market_data::{gen_synthetic, load_csv, save_csv, SyntheticSpec};
use pmlab::pml::{self, FitOptions, InterceptMode, PricedRisk, RollingSpec};
use pmlab::predictor::{self, Predictor, TrainSpec};
use pmlab::{Error, Result};

const AFTER_HELP: &str = "\
Spec and config files are TOML, or JSON when the name ends in .json.
Model files hold a predictor as JSON, e.g. {\"kind\":\"leaked\",\"horizon\":5},
{\"kind\":\"noise\",\"scale\":0.0001,\"seed\":1}, {\"kind\":\"persistence\"}, or the
output of `pmlab train`.

CSV outputs:
  ticks        ts_ns,bid,ask
  points       config_id,mean_return,sigma_total,sigma_mc,sigma_priced,clamped
  correlation  lag,corr,n              (corr empty where undefined)
  rolling      window_start,sr_theta,sr_observed,gap
  returns      period,return
  fills        ts,side,price,reason

Exit codes: 0 ok, 2 invalid input or config, 3 i/o failure, 4 numerical failure.";

#[derive(Parser)]
#[command(name = "pmlab", version, about = "Risk-return experiments for strategies sharing one predictor", after_help = AFTER_HELP)]
struct Cli {
    /// Worker threads (1 for a serial run; output does not depend on it).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutDir {
    /// Output directory.
    #[arg(long = "out-dir", env = "PMLAB_OUT_DIR", default_value = "pmlab-out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RiskFree {
    /// Risk-free rate per period.
    #[arg(long, conflicts_with = "rf_annual")]
    rf: Option<f64>,
    /// Annual risk-free rate, divided by --periods-per-year.
    #[arg(long)]
    rf_annual: Option<f64>,
    #[arg(long, default_value_t = 252.0)]
    periods_per_year: f64,
}

impl RiskFree {
    fn per_period(&self) -> f64 {
        match (self.rf, self.rf_annual) {
            (Some(r), _) => r,
            (None, Some(a)) => a / self.periods_per_year,
            (None, None) => 0.0,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Intercept {
    Fixed,
    Free,
}

#[derive(Clone, Copy, ValueEnum)]
enum Regressor {
    Residual,
    McOnly,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic tick CSV from a SyntheticSpec.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a dropout network on a tick CSV and save it as JSON.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Backtest one predictor and strategy config; prints a JSON summary.
    Backtest {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// StrategyConfig file.
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        rf: RiskFree,
        /// Write per-period returns here.
        #[arg(long)]
        returns: Option<PathBuf>,
        /// Write the fill log here.
        #[arg(long)]
        fills: Option<PathBuf>,
    },
    /// Run a hyperparameter sweep; writes points.csv and mc.json.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// SweepSpec file.
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
    /// Fit the market line to a points CSV; prints the fit as JSON.
    FitPml {
        #[arg(long)]
        points: PathBuf,
        #[command(flatten)]
        rf: RiskFree,
        #[arg(long, value_enum, default_value = "fixed")]
        intercept: Intercept,
        #[arg(long, value_enum, default_value = "residual")]
        regressor: Regressor,
        /// Also report a bootstrap slope stderr over this many resamples.
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rolling retrain, sweep and fit; writes the rolling CSV.
    Decay {
        #[arg(long)]
        data: PathBuf,
        /// TrainSpec file.
        #[arg(long)]
        train: PathBuf,
        /// SweepSpec file.
        #[arg(long)]
        sweep: PathBuf,
        /// StrategyConfig of the observed strategy.
        #[arg(long)]
        strategy: PathBuf,
        #[arg(long)]
        window: usize,
        #[arg(long)]
        step: usize,
        #[arg(long, default_value_t = 0.5)]
        train_fraction: f64,
        #[command(flatten)]
        rf: RiskFree,
        /// Output CSV (standard output when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Surprise vs forward-return correlation by lag.
    Correlate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 5)]
        max_lag: usize,
        /// Output CSV (standard output when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a full experiment from a TOML config or a previous manifest.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output_dir, which in turn overrides
        /// $PMLAB_OUT_DIR.
        #[arg(long = "out-dir")]
        out_dir: Option<PathBuf>,
    },
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn to_json(v: &impl serde::Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenData { spec, out } => {
            let spec: SyntheticSpec = read_spec(&spec)?;
            let series = gen_synthetic(&spec)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            }
            save_csv(&series, &out)
        }
        Command::Train { data, spec, out } => {
            let spec: TrainSpec = read_spec(&spec)?;
            let model = predictor::train(&load_csv(&data)?, &spec)?;
            write_file(&out, &model.to_json()?)
        }
        Command::Backtest {
            data,
            model,
            config,
            rf,
            returns,
            fills,
        } => {
            let cfg: StrategyConfig = read_spec(&config)?;
            let result = run_backtest(&load_csv(&data)?, &Predictor::load(&model)?, &cfg)?;
            if let Some(p) = returns {
                write_file(&p, &result.period_returns_csv())?;
            }
            if let Some(p) = fills {
                write_file(&p, &result.fills_csv())?;
            }
            print!("{}", to_json(&result.summary(rf.per_period(), rf.periods_per_year))?);
            Ok(())
        }
        Command::Sweep { data, model, spec, out } => {
            let spec: SweepSpec = read_spec(&spec)?;
            let entries = analysis::sweep(&load_csv(&data)?, &Predictor::load(&model)?, &spec)?;
            let points = analysis::sweep_points(&entries)?;
            let mc: Vec<_> = entries
                .iter()
                .map(|e| json!({ "config_id": e.config_id, "config": e.config, "n_trades": e.result.n_trades, "mc": e.mc }))
                .collect();
            write_file(&out.out_dir.join(experiment::POINTS_FILE), &pml::points_csv(&points))?;
            write_file(&out.out_dir.join(experiment::MC_FILE), &to_json(&mc)?)
        }
        Command::FitPml {
            points,
            rf,
            intercept,
            regressor,
            bootstrap,
            seed,
        } => {
            let points = pml::read_points_csv(&points)?;
            let opts = FitOptions {
                r_f_per_period: rf.per_period(),
                intercept: match intercept {
                    Intercept::Fixed => InterceptMode::Fixed,
                    Intercept::Free => InterceptMode::Free,
                },
                regressor: match regressor {
                    Regressor::Residual => PricedRisk::Residual,
                    Regressor::McOnly => PricedRisk::McOnly,
                },
                periods_per_year: rf.periods_per_year,
            };
            let fit = pml::fit_pml_with(&points, &opts)?;
            let mut v = serde_json::to_value(&fit)?;
            if let Some(n) = bootstrap {
                v["bootstrap_stderr"] = json!(pml::bootstrap_stderr(&points, &opts, n, seed)?);
            }
            print!("{}", to_json(&v)?);
            Ok(())
        }
        Command::Decay {
            data,
            train,
            sweep,
            strategy,
            window,
            step,
            train_fraction,
            rf,
            out,
        } => {
            let train: TrainSpec = read_spec(&train)?;
            let sweep: SweepSpec = read_spec(&sweep)?;
            let strategy: StrategyConfig = read_spec(&strategy)?;
            let rolling = RollingSpec {
                window_ticks: window,
                step_ticks: step,
                train_fraction,
            };
            let opts = FitOptions {
                periods_per_year: rf.periods_per_year,
                ..FitOptions::new(rf.per_period())
            };
            let result = pml::rolling_pml(&load_csv(&data)?, &train, &sweep, &rolling, &strategy, &opts)?;
            emit(out.as_deref(), &result.to_csv())
        }
        Command::Correlate {
            data,
            model,
            max_lag,
            out,
        } => {
            let curve = analysis::surprise_return_correlation(&load_csv(&data)?, &Predictor::load(&model)?, max_lag)?;
            emit(out.as_deref(), &curve.to_csv())
        }
        Command::Run { config, out_dir } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out_dir
                .or_else(|| cfg.output_dir.clone())
                .or_else(|| std::env::var_os("PMLAB_OUT_DIR").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("pmlab-out"));
            let summary = experiment::run(&cfg, &dir)?;
            eprintln!(
                "wrote {} artifacts to {}; SR_theta {:.6} per period ({:.4} annualized), R2 {:.4}, {} clamped",
                summary.artifacts.len(),
                summary.output_dir.display(),
                summary.fit.sr_theta,
                summary.fit.sr_theta_annualized,
                summary.fit.r2,
                summary.fit.n_clamped
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(cli.command)),
            Err(e) => Err(Error::Invalid(format!("cannot build a pool of {n} threads: {e}"))),
        },
        None => execute(cli.command),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pmlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
