//! Best-bid/offer tick series: validation, CSV I/O, resampling and a
//! seeded synthetic market with a planted AR(1) return component.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "ts_ns,bid,ask";

/// Mid price every synthetic series starts from.
pub const SYNTHETIC_START_MID: f64 = 100.0;

const PRICE_DECIMALS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BboTick {
    pub ts: i64,
    pub bid: f64,
    pub ask: f64,
}

impl BboTick {
    pub fn new(ts: i64, bid: f64, ask: f64) -> Self {
        Self { ts, bid, ask }
    }

    pub fn mid(&self) -> f64 {
        mid(self)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if !(self.bid.is_finite() && self.ask.is_finite()) {
            return Err("non-finite quote".into());
        }
        if self.bid <= 0.0 || self.ask <= 0.0 {
            return Err("nonpositive quote".into());
        }
        if self.bid > self.ask {
            return Err("crossed quote".into());
        }
        Ok(())
    }
}

pub fn mid(tick: &BboTick) -> f64 {
    (tick.bid + tick.ask) / 2.0
}

/// Validated, immutable sequence of quotes for one instrument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickSeries {
    symbol: String,
    resolution_ns: i64,
    regular: bool,
    ticks: Vec<BboTick>,
}

impl TickSeries {
    pub fn new(symbol: impl Into<String>, resolution_ns: i64, ticks: Vec<BboTick>) -> Result<Self> {
        if resolution_ns <= 0 {
            return Err(Error::invalid("resolution_ns must be positive"));
        }
        if ticks.is_empty() {
            return Err(Error::invalid("tick series is empty"));
        }
        for (i, t) in ticks.iter().enumerate() {
            t.check()
                .map_err(|m| Error::invalid(format!("{m} at tick {i}")))?;
        }
        if let Some(i) = ticks.windows(2).position(|w| w[1].ts <= w[0].ts) {
            return Err(Error::invalid(format!(
                "non-monotone timestamp at tick {}",
                i + 1
            )));
        }
        let regular = ticks.windows(2).all(|w| w[1].ts - w[0].ts == resolution_ns);
        Ok(Self {
            symbol: symbol.into(),
            resolution_ns,
            regular,
            ticks,
        })
    }

    /// Builds a series whose resolution is inferred from the smallest
    /// timestamp gap (1 ns for a single tick).
    pub fn from_ticks(symbol: impl Into<String>, ticks: Vec<BboTick>) -> Result<Self> {
        let resolution = ticks
            .windows(2)
            .map(|w| w[1].ts - w[0].ts)
            .filter(|d| *d > 0)
            .min()
            .unwrap_or(1);
        Self::new(symbol, resolution, ticks)
    }

    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn resolution_ns(&self) -> i64 {
        self.resolution_ns
    }

    /// True when every timestamp gap equals the resolution.
    pub fn is_regular(&self) -> bool {
        self.regular
    }

    pub fn ticks(&self) -> &[BboTick] {
        &self.ticks
    }

    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    pub fn mids(&self) -> Vec<f64> {
        self.ticks.iter().map(mid).collect()
    }

    /// Contiguous sub-series `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.ticks.len() {
            return Err(Error::invalid(format!(
                "slice [{start}, {end}) out of range for {} ticks",
                self.ticks.len()
            )));
        }
        let ticks = self.ticks[start..end].to_vec();
        let regular = ticks
            .windows(2)
            .all(|w| w[1].ts - w[0].ts == self.resolution_ns);
        Ok(Self {
            symbol: self.symbol.clone(),
            resolution_ns: self.resolution_ns,
            regular,
            ticks,
        })
    }
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<TickSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let symbol = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_csv(file, path, symbol)
}

/// Parses the tick CSV format from any reader. `origin` only labels errors.
pub fn read_csv<R: Read>(reader: R, origin: &Path, symbol: impl Into<String>) -> Result<TickSeries> {
    let data_err = |message: String| Error::Data {
        path: origin.to_path_buf(),
        message,
    };
    let mut lines = BufReader::new(reader).lines();
    let header = match lines.next() {
        None => return Err(data_err("empty file".into())),
        Some(line) => line.map_err(|e| Error::io(origin, e))?,
    };
    if header.trim_end_matches('\r') != CSV_HEADER {
        return Err(data_err(format!("line 1: expected header `{CSV_HEADER}`")));
    }

    let mut ticks: Vec<BboTick> = Vec::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line.map_err(|e| Error::io(origin, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(data_err(format!(
                "malformed row at line {lineno}: expected 3 fields"
            )));
        }
        let ts: i64 = fields[0]
            .parse()
            .map_err(|_| data_err(format!("malformed row at line {lineno}: bad ts_ns")))?;
        let bid = parse_price(fields[1])
            .ok_or_else(|| data_err(format!("malformed row at line {lineno}: bad bid")))?;
        let ask = parse_price(fields[2])
            .ok_or_else(|| data_err(format!("malformed row at line {lineno}: bad ask")))?;
        let tick = BboTick::new(ts, bid, ask);
        if let Err(m) = tick.check() {
            return Err(data_err(format!("{m} at line {lineno}")));
        }
        if let Some(prev) = ticks.last() {
            if ts <= prev.ts {
                return Err(data_err(format!("non-monotone timestamp at line {lineno}")));
            }
        }
        ticks.push(tick);
    }
    if ticks.is_empty() {
        return Err(data_err("empty file".into()));
    }
    TickSeries::from_ticks(symbol, ticks)
}

fn parse_price(s: &str) -> Option<f64> {
    let valid = !s.is_empty()
        && s.chars().all(|c| c.is_ascii_digit() || c == '.')
        && s.chars().filter(|&c| c == '.').count() <= 1;
    if !valid {
        return None;
    }
    s.parse().ok().filter(|x: &f64| x.is_finite())
}

/// Canonical price text: at most ten fractional digits, trailing zeros
/// trimmed down to one fractional digit.
pub fn format_price(x: f64) -> String {
    let mut s = format!("{:.*}", PRICE_DECIMALS, x);
    while s.ends_with('0') && !s.ends_with(".0") {
        s.pop();
    }
    s
}

pub fn write_csv<W: Write>(series: &TickSeries, mut out: W) -> std::io::Result<()> {
    let mut buf = String::with_capacity(32 * (series.len() + 1));
    buf.push_str(CSV_HEADER);
    buf.push('\n');
    for t in series.ticks() {
        let _ = writeln!(buf, "{},{},{}", t.ts, format_price(t.bid), format_price(t.ask));
    }
    out.write_all(buf.as_bytes())
}

pub fn save_csv(series: &TickSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(series, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

fn bucket_edge(ts: i64, width: i64) -> i64 {
    // right-closed buckets (k*w - w, k*w]
    let q = ts.div_euclid(width);
    if ts.rem_euclid(width) == 0 {
        q * width
    } else {
        (q + 1) * width
    }
}

/// Resamples onto a regular grid of `target_ns`, stamping each bucket with
/// its right edge and carrying the last quote at or before that edge.
pub fn resample(series: &TickSeries, target_ns: i64) -> Result<TickSeries> {
    if target_ns <= 0 {
        return Err(Error::invalid("target resolution must be positive"));
    }
    if target_ns < series.resolution_ns {
        return Err(Error::invalid(format!(
            "target resolution {target_ns} ns is finer than source resolution {} ns",
            series.resolution_ns
        )));
    }
    if series.regular && target_ns % series.resolution_ns != 0 {
        return Err(Error::invalid(format!(
            "target resolution {target_ns} ns is not a multiple of {} ns",
            series.resolution_ns
        )));
    }
    let ticks = series.ticks();
    let mut out = Vec::new();
    let mut edge = bucket_edge(ticks[0].ts, target_ns);
    let mut last = ticks[0];
    for tick in &ticks[1..] {
        let e = bucket_edge(tick.ts, target_ns);
        while edge < e {
            out.push(BboTick::new(edge, last.bid, last.ask));
            edge += target_ns;
        }
        last = *tick;
    }
    out.push(BboTick::new(edge, last.bid, last.ask));
    TickSeries::new(series.symbol.clone(), target_ns, out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_ticks: usize,
    pub dt_ns: i64,
    pub sigma_noise: f64,
    pub phi: f64,
    pub sigma_signal: f64,
    pub spread_bps: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_to: Option<f64>,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_ticks == 0 {
            return Err(Error::invalid("n_ticks must be at least 1"));
        }
        if self.dt_ns <= 0 {
            return Err(Error::invalid("dt_ns must be positive"));
        }
        if !(self.phi.abs() < 1.0) {
            return Err(Error::invalid(format!(
                "phi must satisfy |phi| < 1 (got {})",
                self.phi
            )));
        }
        for (name, v) in [
            ("sigma_noise", self.sigma_noise),
            ("sigma_signal", self.sigma_signal),
            ("spread_bps", self.spread_bps),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be >= 0 (got {v})")));
            }
        }
        if let Some(d) = self.decay_to {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::invalid(format!("decay_to must be >= 0 (got {d})")));
            }
        }
        Ok(())
    }

    /// Innovation volatility of the planted signal entering tick `t`.
    pub fn signal_sigma_at(&self, t: usize) -> f64 {
        match self.decay_to {
            None => self.sigma_signal,
            Some(_) if self.n_ticks < 2 => self.sigma_signal,
            Some(end) => {
                let frac = t as f64 / (self.n_ticks - 1) as f64;
                self.sigma_signal + (end - self.sigma_signal) * frac
            }
        }
    }
}

fn round_price(x: f64) -> f64 {
    let scale = 10f64.powi(PRICE_DECIMALS as i32);
    (x * scale).round() / scale
}

/// Generates the synthetic market described by `spec`.
///
/// Log mid follows `m[t+1] = m[t] + s[t] + e[t]` with a planted AR(1) drift
/// `s[t+1] = phi * s[t] + n[t+1]`. Quotes are rounded to the CSV precision so
/// a written series reloads bit-identically.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<TickSeries> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let half = spec.spread_bps / 2.0 * 1e-4;

    let stationary_sd = spec.sigma_signal / (1.0 - spec.phi * spec.phi).sqrt();
    let z: f64 = StandardNormal.sample(&mut rng);
    let mut signal = stationary_sd * z;
    let mut log_mid = SYNTHETIC_START_MID.ln();

    let mut ticks = Vec::with_capacity(spec.n_ticks);
    for t in 0..spec.n_ticks {
        let m = log_mid.exp();
        let bid = round_price(m * (1.0 - half));
        let ask = round_price(m * (1.0 + half)).max(bid);
        ticks.push(BboTick::new(t as i64 * spec.dt_ns, bid, ask));

        let eps: f64 = StandardNormal.sample(&mut rng);
        let eta: f64 = StandardNormal.sample(&mut rng);
        log_mid += signal + spec.sigma_noise * eps;
        signal = spec.phi * signal + spec.signal_sigma_at(t + 1) * eta;
    }
    TickSeries::new("SYNTH", spec.dt_ns, ticks)
}
