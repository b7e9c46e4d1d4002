//! Flat `key=value` run configuration and the run manifest.
//!
//! Precedence: built-in defaults, then the `--config` file, then flags. A
//! manifest written by a run is itself a valid config file for the same
//! subcommand: its `input.*` digests are checked against the inputs and its
//! `output.*` lines are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bwsl_core::data::{format_float, SynthConfig};
use bwsl_core::policy::PolicyConfig;
use bwsl_core::trainer::TrainConfig;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Train,
    Backtest,
    Interpret,
    Metrics,
}

impl Command {
    pub const ALL: [Command; 5] = [Command::Synth, Command::Train, Command::Backtest, Command::Interpret, Command::Metrics];

    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Backtest => "backtest",
            Command::Interpret => "interpret",
            Command::Metrics => "metrics",
        }
    }

    pub fn about(self) -> &'static str {
        match self {
            Command::Synth => "Write a synthetic market panel",
            Command::Train => "Train a policy on the training part of a panel",
            Command::Backtest => "Backtest a trained policy and baselines on the test part of a panel",
            Command::Interpret => "Average input sensitivities of a trained policy",
            Command::Metrics => "Performance report of a returns CSV",
        }
    }

    /// Keys this subcommand accepts, in manifest order.
    pub fn keys(self) -> &'static [&'static str] {
        const SYNTH: &[&str] = &[
            "seed", "out", "stocks", "periods", "start", "sub_steps", "momentum", "momentum_persistence",
            "reversion", "vol_low", "vol_high", "vol_switch_prob", "low_vol_premium", "anchor_reversion",
            "market_drift", "market_vol",
        ];
        const TRAIN: &[&str] = &[
            "seed", "out", "panel", "train_end", "window", "hidden", "embed", "lookup_cols", "quant",
            "horizon", "batch", "epochs", "learning_rate", "clip", "estimator", "validation_periods",
            "leg_size", "mode", "theta", "tc",
        ];
        const BACKTEST: &[&str] = &[
            "seed", "out", "panel", "train_end", "window", "checkpoint", "leg_size", "mode", "theta", "tc",
            "periods_per_year", "baselines",
        ];
        const INTERPRET: &[&str] = &["seed", "out", "panel", "train_end", "window", "checkpoint", "interpret_on"];
        const METRICS: &[&str] = &["seed", "out", "returns", "theta", "tc", "periods_per_year"];
        match self {
            Command::Synth => SYNTH,
            Command::Train => TRAIN,
            Command::Backtest => BACKTEST,
            Command::Interpret => INTERPRET,
            Command::Metrics => METRICS,
        }
    }

    /// Keys naming input files whose digests go into the manifest.
    pub fn input_keys(self) -> &'static [&'static str] {
        match self {
            Command::Synth => &[],
            Command::Train => &["panel"],
            Command::Backtest | Command::Interpret => &["panel", "checkpoint"],
            Command::Metrics => &["returns"],
        }
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CliError::usage(format!("unknown subcommand `{s}`")))
    }
}

pub struct KeySpec {
    pub name: &'static str,
    pub default: String,
    pub help: &'static str,
}

/// Every configuration key with its default.
pub fn registry() -> Vec<KeySpec> {
    let s = SynthConfig::default();
    let p = PolicyConfig::default();
    let t = TrainConfig::default();
    let f = format_float;
    let key = |name, default: String, help| KeySpec { name, default, help };
    vec![
        key("seed", t.seed.to_string(), "master seed for the data, init and sampling streams"),
        key("out", "out".into(), "output directory"),
        key("stocks", s.num_stocks.to_string(), "synthetic stocks"),
        key("periods", s.num_periods.to_string(), "synthetic months"),
        key("start", s.start.to_string(), "first synthetic month, YYYY-MM"),
        key("sub_steps", s.sub_steps.to_string(), "price steps per month"),
        key("momentum", f(s.momentum), "sd of the persistent monthly drift"),
        key("momentum_persistence", f(s.momentum_persistence), "AR(1) coefficient of the drift"),
        key("reversion", f(s.reversion), "share of last month's shock reversed"),
        key("vol_low", f(s.vol_range.0), "lowest idiosyncratic volatility"),
        key("vol_high", f(s.vol_range.1), "highest idiosyncratic volatility"),
        key("vol_switch_prob", f(s.vol_switch_prob), "monthly chance a stock redraws its volatility"),
        key("low_vol_premium", f(s.low_vol_premium), "monthly premium of the calmest stocks"),
        key("anchor_reversion", f(s.anchor_reversion), "pull of idiosyncratic level toward zero"),
        key("market_drift", f(s.market_drift), "monthly market drift"),
        key("market_vol", f(s.market_vol), "monthly market volatility"),
        key("panel", String::new(), "panel CSV"),
        key("train_end", "auto".into(), "last training month, YYYY-MM; auto = 70% of the panel"),
        key("window", t.window.to_string(), "look-back months K"),
        key("hidden", p.hidden.to_string(), "hidden size H"),
        key("embed", p.embed.to_string(), "rank-prior embedding rows E"),
        key("lookup_cols", p.lookup_cols.to_string(), "rank-prior lookup columns"),
        key("quant", p.quant.to_string(), "rank quantization step Q"),
        key("horizon", t.horizon.to_string(), "months per trajectory T"),
        key("batch", t.batch.to_string(), "trajectories per epoch N"),
        key("epochs", t.epochs.to_string(), "training epochs"),
        key("learning_rate", f(t.learning_rate), "gradient ascent step"),
        key("clip", f(t.clip), "global gradient norm bound"),
        key("estimator", t.estimator.to_string(), "pathwise or score-function"),
        key("validation_periods", t.validation_periods.to_string(), "trailing training months held out for model selection"),
        key("leg_size", "auto".into(), "stocks per leg G; auto = a quarter of the universe"),
        key("mode", t.mode.to_string(), "long-short or long-only"),
        key("theta", f(t.theta), "risk-free return per month"),
        key("tc", f(t.tc), "cost per month"),
        key("checkpoint", String::new(), "trained policy checkpoint"),
        key("periods_per_year", "12".into(), "annualization factor"),
        key("baselines", "market,tsm,csm".into(), "comma-separated baselines to run"),
        key("interpret_on", "test".into(), "months to analyze: test, train or all"),
        key("returns", String::new(), "CSV with a `return` column"),
    ]
}

pub fn default_of(key: &str) -> Option<String> {
    registry().into_iter().find(|k| k.name == key).map(|k| k.default)
}

/// Effective settings of one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    values: BTreeMap<String, String>,
    /// Digests recorded by a manifest used as config.
    expected_inputs: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn defaults(command: Command) -> Self {
        let values = command
            .keys()
            .iter()
            .map(|&k| (k.to_string(), default_of(k).expect("registered key")))
            .collect();
        Self { command, values, expected_inputs: BTreeMap::new() }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !self.command.keys().contains(&key) {
            return Err(CliError::usage(format!("unknown key `{key}` for {}", self.command.name())));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// Applies a `key=value` file.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = || format!("{} line {}", path.display(), i + 1);
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("{}: expected key=value", at())))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "command" {
                if v != self.command.name() {
                    return Err(CliError::usage(format!("{}: config is for `{v}`", at())));
                }
            } else if let Some(input) = k.strip_prefix("input.") {
                self.expected_inputs.insert(input.to_string(), v.to_string());
            } else if k.starts_with("output.") || k == "version" {
            } else {
                self.set(k, v).map_err(|e| CliError::usage(format!("{}: {e}", at())))?;
            }
        }
        Ok(())
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("key `{key}` not registered for command"))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.str(key);
        raw.parse().map_err(|e| CliError::usage(format!("{key}={raw}: {e}")))
    }

    /// `None` for `auto`.
    pub fn parse_auto<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if self.str(key) == "auto" {
            Ok(None)
        } else {
            self.parse(key).map(Some)
        }
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, CliError> {
        match self.str(key) {
            "" => Err(CliError::usage(format!("`{key}` is required"))),
            p => Ok(PathBuf::from(p)),
        }
    }

    /// Checks input files against digests carried over from a manifest.
    pub fn verify_inputs(&self) -> Result<(), CliError> {
        for (key, expected) in &self.expected_inputs {
            let path = self.path(key)?;
            let actual = file_digest(&path)?;
            if &actual != expected {
                return Err(CliError::Data(format!("{} digest {actual} differs from manifest {expected}", path.display())));
            }
        }
        Ok(())
    }

    /// Manifest text: command, every effective key, then input and output digests.
    pub fn manifest(&self, outputs: &[(String, String)]) -> Result<String, CliError> {
        let mut out = format!("command={}\nversion={}\n", self.command.name(), env!("CARGO_PKG_VERSION"));
        for &k in self.command.keys() {
            let _ = writeln!(out, "{k}={}", self.values[k]);
        }
        for &k in self.command.input_keys() {
            let _ = writeln!(out, "input.{k}={}", file_digest(&self.path(k)?)?);
        }
        for (name, digest) in outputs {
            let _ = writeln!(out, "output.{name}={digest}");
        }
        Ok(out)
    }
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(digest(&bytes))
}
