use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use bwsl_core::backtest::{run_csm, run_market, run_policy, run_tsm, BacktestConfig, BacktestRun};
use bwsl_core::data::{format_float, load_panel, split, synth_market, MarketPanel, SynthConfig, YearMonth};
use bwsl_core::features::FEATURE_NAMES;
use bwsl_core::interpret::average_sensitivity;
use bwsl_core::metrics::{report, PerformanceReport, REPORT_COLUMNS};
use bwsl_core::policy::{PolicyConfig, PolicyParams};
use bwsl_core::portfolio::Mode;
use bwsl_core::trainer::{learning_curve_csv, train_from_seed, Estimator, TrainConfig};

use crate::config::{digest, Command, RunConfig};
use crate::error::CliError;
use crate::svg;

/// Files written by a run, with their digests for the manifest.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl Outputs {
    fn write(&mut self, name: &str, contents: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        self.files.push((name.to_string(), digest(contents)));
        Ok(())
    }
}

pub const MANIFEST: &str = "manifest.txt";

pub fn execute(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = PathBuf::from(cfg.str("out"));
    fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut out = Outputs { dir, files: Vec::new() };
    match cfg.command {
        Command::Synth => synth(cfg, &mut out)?,
        Command::Train => train(cfg, &mut out)?,
        Command::Backtest => backtest(cfg, &mut out)?,
        Command::Interpret => interpret(cfg, &mut out)?,
        Command::Metrics => metrics(cfg, &mut out)?,
    }
    let manifest = cfg.manifest(&out.files)?;
    let path = out.dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn synth(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let sc = SynthConfig {
        num_stocks: cfg.parse("stocks")?,
        num_periods: cfg.parse("periods")?,
        sub_steps: cfg.parse("sub_steps")?,
        start: cfg.parse::<YearMonth>("start")?,
        momentum: cfg.parse("momentum")?,
        momentum_persistence: cfg.parse("momentum_persistence")?,
        reversion: cfg.parse("reversion")?,
        vol_range: (cfg.parse("vol_low")?, cfg.parse("vol_high")?),
        vol_switch_prob: cfg.parse("vol_switch_prob")?,
        low_vol_premium: cfg.parse("low_vol_premium")?,
        anchor_reversion: cfg.parse("anchor_reversion")?,
        market_drift: cfg.parse("market_drift")?,
        market_vol: cfg.parse("market_vol")?,
        seed: cfg.parse("seed")?,
    };
    let panel = synth_market(&sc)?;
    let mut bytes = Vec::new();
    panel.write_csv(&mut bytes)?;
    out.write("panel.csv", &bytes)?;
    println!("panel.csv stocks={} periods={} {}..{}", panel.num_stocks(), panel.num_periods(), panel.start(), panel.end());
    Ok(())
}

fn load(cfg: &RunConfig) -> Result<MarketPanel, CliError> {
    let path = cfg.path("panel")?;
    load_panel(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// `(train panel, test panel)`; `train_end = auto` ends training at 70% of the panel.
fn split_panel(cfg: &RunConfig, panel: &MarketPanel) -> Result<(MarketPanel, MarketPanel), CliError> {
    let window: usize = cfg.parse("window")?;
    let train_end = match cfg.parse_auto::<YearMonth>("train_end")? {
        Some(m) => m,
        None => panel.period(panel.num_periods() * 7 / 10),
    };
    split(panel, train_end, window).map_err(|e| CliError::Data(e.to_string()))
}

fn mode(cfg: &RunConfig) -> Result<Mode, CliError> {
    cfg.parse("mode")
}

fn train(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let panel = load(cfg)?;
    let (train_panel, _) = split_panel(cfg, &panel)?;
    let policy = PolicyConfig {
        hidden: cfg.parse("hidden")?,
        embed: cfg.parse("embed")?,
        lookup_cols: cfg.parse("lookup_cols")?,
        quant: cfg.parse("quant")?,
    };
    policy.validate()?;
    let tc = TrainConfig {
        window: cfg.parse("window")?,
        horizon: cfg.parse("horizon")?,
        batch: cfg.parse("batch")?,
        epochs: cfg.parse("epochs")?,
        learning_rate: cfg.parse("learning_rate")?,
        clip: cfg.parse("clip")?,
        leg_size: cfg.parse_auto("leg_size")?,
        mode: mode(cfg)?,
        theta: cfg.parse("theta")?,
        tc: cfg.parse("tc")?,
        seed: cfg.parse("seed")?,
        estimator: cfg.parse::<Estimator>("estimator")?,
        validation_periods: cfg.parse("validation_periods")?,
    };
    let outcome = train_from_seed(&train_panel, policy, &tc)?;
    out.write("checkpoint.txt", outcome.best_params.to_checkpoint().as_bytes())?;
    if tc.validation_periods > 0 {
        out.write("final_checkpoint.txt", outcome.params.to_checkpoint().as_bytes())?;
    }
    out.write("learning_curve.csv", learning_curve_csv(&outcome.log).as_bytes())?;
    if let Some(last) = outcome.log.last() {
        println!(
            "epochs={} mean_H={} mean_advantage={} best_epoch={}",
            last.epoch,
            format_float(last.mean_sharpe),
            format_float(last.mean_advantage),
            outcome.best_epoch
        );
    }
    Ok(())
}

fn load_params(cfg: &RunConfig) -> Result<PolicyParams, CliError> {
    let path = cfg.path("checkpoint")?;
    PolicyParams::load(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn decision_range(panel: &MarketPanel, window: usize) -> Result<Range<usize>, CliError> {
    let end = panel.num_periods().saturating_sub(1);
    if window >= end {
        return Err(CliError::Data(format!("{} months leave no decision month after a {window}-month window", panel.num_periods())));
    }
    Ok(window..end)
}

fn report_block(run: &BacktestRun) -> String {
    match &run.report {
        Some(r) => r.to_key_values(),
        None => "report=degenerate\n".to_string(),
    }
}

fn backtest(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let panel = load(cfg)?;
    let (_, test) = split_panel(cfg, &panel)?;
    let params = load_params(cfg)?;
    let bc = BacktestConfig {
        window: cfg.parse("window")?,
        leg_size: cfg.parse_auto("leg_size")?,
        mode: mode(cfg)?,
        theta: cfg.parse("theta")?,
        tc: cfg.parse("tc")?,
        periods_per_year: cfg.parse("periods_per_year")?,
    };
    let range = decision_range(&test, bc.window)?;
    let mut runs = vec![run_policy(&test, &params, range.clone(), &bc)?];
    for name in cfg.str("baselines").split(',').map(str::trim).filter(|s| !s.is_empty() && *s != "none") {
        runs.push(match name {
            "market" => run_market(&test, range.clone(), &bc)?,
            "tsm" => run_tsm(&test, range.clone(), &bc)?,
            "csm" => run_csm(&test, range.clone(), &bc)?,
            other => return Err(CliError::usage(format!("unknown baseline `{other}` (expected market, tsm or csm)"))),
        });
    }

    let mut table = format!("strategy,{}\n", REPORT_COLUMNS.join(","));
    let mut text = String::new();
    let mut events = String::new();
    for run in &runs {
        out.write(&format!("returns_{}.csv", run.strategy), run.to_csv().as_bytes())?;
        match &run.report {
            Some(r) => {
                let _ = writeln!(table, "{},{}", run.strategy, r.csv_row());
            }
            None => {
                let blanks = vec!["degenerate"; REPORT_COLUMNS.len()];
                let _ = writeln!(table, "{},{}", run.strategy, blanks.join(","));
            }
        }
        let _ = write!(text, "[{}]\n{}\n", run.strategy, report_block(run));
        for e in &run.events {
            let _ = writeln!(events, "{} {e}", run.strategy);
        }
        let asr = run.report.as_ref().map_or_else(|| "degenerate".to_string(), |r| format_float(r.asr));
        println!("{} asr={asr}", run.strategy);
    }
    out.write("report.csv", table.as_bytes())?;
    out.write("report.txt", text.as_bytes())?;
    out.write("events.txt", events.as_bytes())?;

    // wealth[k] is valued at the k-th decision month; one more point closes the last hold.
    let mut x: Vec<String> = runs[0].periods.iter().map(|p| p.to_string()).collect();
    if let Some(last) = runs[0].periods.last() {
        x.push(last.offset(1).to_string());
    }
    let series: Vec<(String, Vec<f64>)> = runs.iter().map(|r| (r.strategy.clone(), r.wealth.clone())).collect();
    out.write("wealth.svg", svg::line_chart("Cumulative wealth", &x, &series).as_bytes())?;
    Ok(())
}

fn interpret(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let panel = load(cfg)?;
    let (train_panel, test) = split_panel(cfg, &panel)?;
    let params = load_params(cfg)?;
    let window: usize = cfg.parse("window")?;
    let target = match cfg.str("interpret_on") {
        "test" => &test,
        "train" => &train_panel,
        "all" => &panel,
        other => return Err(CliError::usage(format!("interpret_on={other}: expected test, train or all"))),
    };
    let range = decision_range(target, window)?;
    let rep = average_sensitivity(target, &params, window, range)?;
    out.write("sensitivity.csv", rep.to_csv().as_bytes())?;
    let lags: Vec<String> = (1..=rep.window).map(|l| format!("{l}")).collect();
    for (name, row) in FEATURE_NAMES.iter().zip(&rep.delta) {
        let title = format!("Mean sensitivity of winner score to {name} by lag");
        out.write(&format!("sensitivity_{name}.svg"), svg::bar_chart(&title, &lags, row).as_bytes())?;
    }
    let means: Vec<String> =
        FEATURE_NAMES.iter().zip(rep.feature_means()).map(|(n, m)| format!("{n}={}", format_float(m))).collect();
    println!("samples={} {}", rep.samples, means.join(" "));
    Ok(())
}

/// Reads the `return` column of a CSV file.
pub fn read_returns(path: &Path) -> Result<Vec<f64>, CliError> {
    let data = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| data(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| data(e.to_string()))?.clone();
    let col = headers
        .iter()
        .position(|h| h.trim() == "return")
        .ok_or_else(|| data("no `return` column".into()))?;
    let mut returns = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| data(e.to_string()))?;
        let raw = rec.get(col).unwrap_or("").trim();
        let v: f64 = raw.parse().map_err(|_| data(format!("line {}: bad return `{raw}`", i + 2)))?;
        returns.push(v);
    }
    Ok(returns)
}

fn metrics(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let returns = read_returns(&cfg.path("returns")?)?;
    let r: PerformanceReport =
        report(&returns, cfg.parse("theta")?, cfg.parse("tc")?, cfg.parse("periods_per_year")?)?;
    let kv = r.to_key_values();
    out.write("report.txt", kv.as_bytes())?;
    print!("{kv}");
    Ok(())
}
