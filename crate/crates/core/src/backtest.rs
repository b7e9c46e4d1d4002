//! Walk-forward evaluation of a policy and of the baseline strategies.
//!
//! Every strategy trades the same universe at decision month `t`: stocks with
//! a bar in every month of `[t - window, t]`. Positions are held over the
//! following month at rates `close[t+1] / close[t]`; a stock with no bar at
//! `t + 1` exits at its last close (rate 1) and the delisting is logged.

use std::fmt::{self, Write as _};
use std::ops::Range;

use rayon::prelude::*;
use thiserror::Error;

use crate::data::{format_float, MarketPanel, YearMonth};
use crate::features::{build_windows, eligible_stocks, FeatureError};
use crate::metrics::{self, MetricsError, PerformanceReport};
use crate::policy::{policy_forward, PolicyError, PolicyInput, PolicyParams};
use crate::portfolio::{generate_by, holding_rates, rank_order, realize_return, Mode, PortfolioError, PortfolioPair};

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("decision range {range:?} invalid for a panel of {periods} months")]
    Range { range: Range<usize>, periods: usize },
    #[error("window must be at least 1")]
    Window,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Portfolio(#[from] PortfolioError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BacktestConfig {
    /// Look-back `K`, shared by eligibility, policy windows and momentum signals.
    pub window: usize,
    /// Stocks per leg; `None` means a quarter of the universe, at least 1.
    pub leg_size: Option<usize>,
    pub mode: Mode,
    pub theta: f64,
    pub tc: f64,
    pub periods_per_year: f64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            window: 12,
            leg_size: None,
            mode: Mode::LongShort,
            theta: 0.0,
            tc: metrics::DEFAULT_TC,
            periods_per_year: metrics::MONTHS_PER_YEAR,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Delisted { stock: String },
    EmptyUniverse,
    /// Too few stocks to form the portfolio at all.
    Skipped { stocks: usize },
    LegShrunk { requested: usize, used: usize },
    EmptyLeg { leg: &'static str },
    DegenerateReport { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    /// Decision month, `None` for run-level events.
    pub period: Option<YearMonth>,
    pub kind: EventKind,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.period {
            Some(p) => write!(f, "{p} ")?,
            None => f.write_str("run ")?,
        }
        match &self.kind {
            EventKind::Delisted { stock } => write!(f, "delisted {stock} exits at last close"),
            EventKind::EmptyUniverse => f.write_str("empty universe, return 0"),
            EventKind::Skipped { stocks } => write!(f, "skipped with {stocks} eligible stocks, return 0"),
            EventKind::LegShrunk { requested, used } => write!(f, "leg size {requested} shrunk to {used}"),
            EventKind::EmptyLeg { leg } => write!(f, "{leg} leg empty"),
            EventKind::DegenerateReport { reason } => write!(f, "no performance report: {reason}"),
        }
    }
}

/// Positions held over one month: `(panel stock index, weight)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Holdings {
    pub long: Vec<(usize, f64)>,
    pub short: Vec<(usize, f64)>,
}

impl Holdings {
    fn from_pair(pair: &PortfolioPair, stocks: &[usize]) -> Self {
        let map = |leg: &[(usize, f64)]| leg.iter().map(|&(i, w)| (stocks[i], w)).collect();
        Self { long: map(&pair.long), short: map(&pair.short) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestRun {
    pub strategy: String,
    /// Decision months; each return is earned over the month that follows.
    pub periods: Vec<YearMonth>,
    pub returns: Vec<f64>,
    pub holdings: Vec<Holdings>,
    pub universe: Vec<usize>,
    /// `wealth[0] = 1`, one more entry than `returns`.
    pub wealth: Vec<f64>,
    /// `None` when the returns admit no Sharpe ratio; see the event log.
    pub report: Option<PerformanceReport>,
    pub events: Vec<Event>,
}

impl BacktestRun {
    /// `period,return,wealth,universe_size`, wealth after the period's return.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("period,return,wealth,universe_size\n");
        for (i, p) in self.periods.iter().enumerate() {
            let _ = writeln!(
                out,
                "{p},{},{},{}",
                format_float(self.returns[i]),
                format_float(self.wealth[i + 1]),
                self.universe[i]
            );
        }
        out
    }

    pub fn events_text(&self) -> String {
        self.events.iter().map(|e| format!("{e}\n")).collect()
    }
}

/// Outcome of one decision month before assembly into a run.
struct Month {
    ret: f64,
    holdings: Holdings,
    universe: usize,
    events: Vec<EventKind>,
}

impl Month {
    fn idle(universe: usize, event: EventKind) -> Self {
        Self { ret: 0.0, holdings: Holdings::default(), universe, events: vec![event] }
    }
}

fn check_range(panel: &MarketPanel, range: &Range<usize>, cfg: &BacktestConfig) -> Result<(), BacktestError> {
    if cfg.window == 0 {
        return Err(BacktestError::Window);
    }
    if range.is_empty() || range.end >= panel.num_periods() {
        return Err(BacktestError::Range { range: range.clone(), periods: panel.num_periods() });
    }
    Ok(())
}

/// Leg size for `n` stocks: the requested or default size, capped so the
/// legs fit. Returns `(size, shrink event)`; size 0 means nothing can be held.
pub fn effective_leg_size(requested: Option<usize>, n: usize, mode: Mode) -> (usize, Option<EventKind>) {
    let g = requested.unwrap_or((n / 4).max(1));
    let cap = match mode {
        Mode::LongShort => n / 2,
        Mode::LongOnly => n,
    };
    if g > cap {
        (cap, Some(EventKind::LegShrunk { requested: g, used: cap }))
    } else {
        (g, None)
    }
}

fn rates_with_events(panel: &MarketPanel, stocks: &[usize], t: usize, events: &mut Vec<EventKind>) -> Vec<f64> {
    let (rates, delisted) = holding_rates(panel, stocks, t);
    events.extend(delisted.into_iter().map(|s| EventKind::Delisted { stock: panel.stock_ids()[s].clone() }));
    rates
}

/// Trades a scored universe the way the policy does.
fn trade_scores(
    panel: &MarketPanel,
    t: usize,
    stocks: &[usize],
    scores: &[f64],
    cfg: &BacktestConfig,
) -> Result<Month, BacktestError> {
    let n = stocks.len();
    let (g, shrink) = effective_leg_size(cfg.leg_size, n, cfg.mode);
    if g == 0 {
        return Ok(Month::idle(n, EventKind::Skipped { stocks: n }));
    }
    let mut events: Vec<EventKind> = shrink.into_iter().collect();
    let ids: Vec<&str> = stocks.iter().map(|&s| panel.stock_ids()[s].as_str()).collect();
    let pair = generate_by(scores, &ids, g, cfg.mode)?;
    let held: Vec<usize> = pair.held().map(|i| stocks[i]).collect();
    let held_rates = rates_with_events(panel, &held, t, &mut events);
    let mut z = vec![None; n];
    for (i, r) in pair.held().zip(held_rates) {
        z[i] = Some(r);
    }
    let ret = realize_return(&pair, &z)?;
    Ok(Month { ret, holdings: Holdings::from_pair(&pair, stocks), universe: n, events })
}

fn assemble(
    strategy: &str,
    panel: &MarketPanel,
    range: Range<usize>,
    months: Vec<Month>,
    cfg: &BacktestConfig,
) -> Result<BacktestRun, BacktestError> {
    let mut run = BacktestRun {
        strategy: strategy.to_string(),
        periods: Vec::with_capacity(months.len()),
        returns: Vec::with_capacity(months.len()),
        holdings: Vec::with_capacity(months.len()),
        universe: Vec::with_capacity(months.len()),
        wealth: Vec::new(),
        report: None,
        events: Vec::new(),
    };
    for (t, m) in range.zip(months) {
        let period = panel.period(t);
        run.periods.push(period);
        run.returns.push(m.ret);
        run.holdings.push(m.holdings);
        run.universe.push(m.universe);
        run.events.extend(m.events.into_iter().map(|kind| Event { period: Some(period), kind }));
    }
    run.wealth = metrics::cumulative_wealth(&run.returns, cfg.tc)?;
    match metrics::report(&run.returns, cfg.theta, cfg.tc, cfg.periods_per_year) {
        Ok(r) => run.report = Some(r),
        Err(e @ (MetricsError::TooFewReturns(_) | MetricsError::ZeroVolatility)) => {
            run.events.push(Event { period: None, kind: EventKind::DegenerateReport { reason: e.to_string() } })
        }
        Err(e) => return Err(e.into()),
    }
    Ok(run)
}

/// Scores the universe with the policy at each decision month in `range`
/// and trades the resulting legs.
pub fn run_policy(
    panel: &MarketPanel,
    params: &PolicyParams,
    range: Range<usize>,
    cfg: &BacktestConfig,
) -> Result<BacktestRun, BacktestError> {
    check_range(panel, &range, cfg)?;
    let months = range
        .clone()
        .into_par_iter()
        .map(|t| {
            let ws = match build_windows(panel, t, cfg.window) {
                Ok(ws) => ws,
                Err(FeatureError::NoEligible(_)) => return Ok(Month::idle(0, EventKind::EmptyUniverse)),
                Err(e) => return Err(e.into()),
            };
            let stocks = ws.stocks();
            if stocks.len() < 2 {
                return Ok(Month::idle(stocks.len(), EventKind::Skipped { stocks: stocks.len() }));
            }
            let scores = policy_forward(params, &PolicyInput::from_windows(&ws))?;
            trade_scores(panel, t, &stocks, &scores, cfg)
        })
        .collect::<Result<Vec<_>, BacktestError>>()?;
    assemble("policy", panel, range, months, cfg)
}

/// Equal weight across the eligible universe: `R = mean(z) - 1`.
pub fn run_market(panel: &MarketPanel, range: Range<usize>, cfg: &BacktestConfig) -> Result<BacktestRun, BacktestError> {
    check_range(panel, &range, cfg)?;
    let months = range
        .clone()
        .map(|t| {
            let stocks = eligible_stocks(panel, t, cfg.window);
            if stocks.is_empty() {
                return Month::idle(0, EventKind::EmptyUniverse);
            }
            let mut events = Vec::new();
            let rates = rates_with_events(panel, &stocks, t, &mut events);
            let w = 1.0 / stocks.len() as f64;
            Month {
                ret: rates.iter().sum::<f64>() * w - 1.0,
                holdings: Holdings { long: stocks.iter().map(|&s| (s, w)).collect(), short: Vec::new() },
                universe: stocks.len(),
                events,
            }
        })
        .collect();
    assemble("market", panel, range, months, cfg)
}

/// Past `window`-month return `close[t] / close[t - window] - 1` per stock.
fn momentum_signals(panel: &MarketPanel, stocks: &[usize], t: usize, window: usize) -> Vec<f64> {
    stocks
        .iter()
        .map(|&s| {
            let now = panel.close(s, t).expect("eligible stock has a bar at t");
            let then = panel.close(s, t - window).expect("eligible stock has a bar at t - window");
            now / then - 1.0
        })
        .collect()
}

fn equal_weights(stocks: &[usize]) -> Vec<(usize, f64)> {
    let w = 1.0 / stocks.len() as f64;
    stocks.iter().map(|&s| (s, w)).collect()
}

/// Return of an equal-weight leg held over the month after `t`, less 1;
/// an empty leg earns 0.
fn leg_excess(panel: &MarketPanel, leg: &[usize], t: usize, events: &mut Vec<EventKind>) -> f64 {
    if leg.is_empty() {
        return 0.0;
    }
    let rates = rates_with_events(panel, leg, t, events);
    rates.iter().sum::<f64>() / leg.len() as f64 - 1.0
}

/// Time-series momentum: long every stock whose past return is positive,
/// short every stock whose past return is negative, equal weight within each
/// leg. Leg size is not used.
pub fn run_tsm(panel: &MarketPanel, range: Range<usize>, cfg: &BacktestConfig) -> Result<BacktestRun, BacktestError> {
    check_range(panel, &range, cfg)?;
    let months = range
        .clone()
        .map(|t| {
            let stocks = eligible_stocks(panel, t, cfg.window);
            if stocks.is_empty() {
                return Month::idle(0, EventKind::EmptyUniverse);
            }
            let signals = momentum_signals(panel, &stocks, t, cfg.window);
            let pick = |keep: fn(f64) -> bool| -> Vec<usize> {
                stocks.iter().zip(&signals).filter(|&(_, &x)| keep(x)).map(|(&s, _)| s).collect()
            };
            let long = pick(|x| x > 0.0);
            let short = match cfg.mode {
                Mode::LongShort => pick(|x| x < 0.0),
                Mode::LongOnly => Vec::new(),
            };
            let mut events = Vec::new();
            if long.is_empty() {
                events.push(EventKind::EmptyLeg { leg: "long" });
            }
            if cfg.mode == Mode::LongShort && short.is_empty() {
                events.push(EventKind::EmptyLeg { leg: "short" });
            }
            let ret = leg_excess(panel, &long, t, &mut events) - leg_excess(panel, &short, t, &mut events);
            Month {
                ret,
                holdings: Holdings { long: equal_weights(&long), short: equal_weights(&short) },
                universe: stocks.len(),
                events,
            }
        })
        .collect();
    assemble("tsm", panel, range, months, cfg)
}

/// Cross-sectional momentum: long the top `G` and short the bottom `G` by past
/// return, equal weight, ties by stock id.
pub fn run_csm(panel: &MarketPanel, range: Range<usize>, cfg: &BacktestConfig) -> Result<BacktestRun, BacktestError> {
    check_range(panel, &range, cfg)?;
    let months = range
        .clone()
        .map(|t| {
            let stocks = eligible_stocks(panel, t, cfg.window);
            if stocks.is_empty() {
                return Month::idle(0, EventKind::EmptyUniverse);
            }
            let n = stocks.len();
            let (g, shrink) = effective_leg_size(cfg.leg_size, n, cfg.mode);
            if g == 0 {
                return Month::idle(n, EventKind::Skipped { stocks: n });
            }
            let mut events: Vec<EventKind> = shrink.into_iter().collect();
            let signals = momentum_signals(panel, &stocks, t, cfg.window);
            let ids: Vec<&str> = stocks.iter().map(|&s| panel.stock_ids()[s].as_str()).collect();
            let order: Vec<usize> = rank_order(&signals, &ids).into_iter().map(|i| stocks[i]).collect();
            let long = order[..g].to_vec();
            let short = match cfg.mode {
                Mode::LongShort => order[n - g..].to_vec(),
                Mode::LongOnly => Vec::new(),
            };
            let ret = leg_excess(panel, &long, t, &mut events) - leg_excess(panel, &short, t, &mut events);
            Month {
                ret,
                holdings: Holdings { long: equal_weights(&long), short: equal_weights(&short) },
                universe: n,
                events,
            }
        })
        .collect();
    assemble("csm", panel, range, months, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_market, SynthConfig};
    use crate::policy::{ix, PolicyConfig};
    use crate::rng::{stream, Stream};
    use crate::autodiff::Tensor;

    /// Closes per stock per month; other fields constant.
    fn panel(closes: &[(&str, &[f64])]) -> MarketPanel {
        let mut text = crate::data::CSV_HEADER.join(",");
        text.push('\n');
        for (id, cs) in closes {
            for (m, c) in cs.iter().enumerate() {
                text.push_str(&format!("{id},2000-{:02},{c},0.1,100,1e6,10,0.5,0.01\n", m + 1));
            }
        }
        MarketPanel::read_csv(text.as_bytes()).unwrap()
    }

    fn cfg(window: usize, leg_size: Option<usize>) -> BacktestConfig {
        BacktestConfig { window, leg_size, tc: 0.0, ..Default::default() }
    }

    #[test]
    fn market_examples() {
        let one = panel(&[("A", &[10.0, 11.0, 12.1])]);
        let run = run_market(&one, 1..2, &cfg(1, None)).unwrap();
        assert!((run.returns[0] - 0.1).abs() < 1e-12);
        let two = panel(&[("A", &[10.0, 10.0, 11.0]), ("B", &[10.0, 10.0, 9.0])]);
        let run = run_market(&two, 1..2, &cfg(1, None)).unwrap();
        assert!(run.returns[0].abs() < 1e-12);
        // One period: no Sharpe ratio, flagged.
        assert!(run.report.is_none());
        assert!(matches!(run.events.last().unwrap().kind, EventKind::DegenerateReport { .. }));
    }

    #[test]
    fn market_matches_recomputation() {
        let p = synth_market(&SynthConfig { num_stocks: 12, num_periods: 40, seed: 3, ..Default::default() }).unwrap();
        let c = BacktestConfig::default();
        let run = run_market(&p, 12..39, &c).unwrap();
        for (k, t) in (12..39).enumerate() {
            let mut zs = Vec::new();
            for s in 0..p.num_stocks() {
                if (t - 12..=t).all(|u| p.is_present(s, u)) {
                    zs.push(p.close(s, t + 1).map_or(1.0, |n| n / p.close(s, t).unwrap()));
                }
            }
            let expect = zs.iter().sum::<f64>() / zs.len() as f64 - 1.0;
            assert!((run.returns[k] - expect).abs() < 1e-12);
            assert_eq!(run.universe[k], zs.len());
        }
        let report = run.report.unwrap();
        assert_eq!(report, metrics::report(&run.returns, c.theta, c.tc, c.periods_per_year).unwrap());
    }

    #[test]
    fn tsm_examples() {
        let up = panel(&[("A", &[10.0, 11.0, 12.0]), ("B", &[10.0, 12.0, 12.0])]);
        let run = run_tsm(&up, 1..2, &cfg(1, None)).unwrap();
        assert!(run.events.iter().any(|e| e.kind == EventKind::EmptyLeg { leg: "short" }));
        assert!(run.holdings[0].short.is_empty());
        assert!((run.returns[0] - (12.0 / 11.0 - 1.0) / 2.0).abs() < 1e-12);

        let mixed = panel(&[("A", &[10.0, 11.0, 12.0]), ("B", &[10.0, 9.0, 9.9])]);
        let run = run_tsm(&mixed, 1..2, &cfg(1, None)).unwrap();
        assert_eq!(run.holdings[0].long, vec![(0, 1.0)]);
        assert_eq!(run.holdings[0].short, vec![(1, 1.0)]);
        assert!((run.returns[0] - (12.0 / 11.0 - 1.1)).abs() < 1e-12);
    }

    #[test]
    fn tsm_hand_panel() {
        // window 2 at t = 2: signals A 0.2, B -0.1, C 0 (skipped), D 0.5
        let p = panel(&[
            ("A", &[10.0, 11.0, 12.0, 13.2]),
            ("B", &[10.0, 10.0, 9.0, 9.9]),
            ("C", &[5.0, 6.0, 5.0, 4.0]),
            ("D", &[2.0, 2.5, 3.0, 3.3]),
        ]);
        let run = run_tsm(&p, 2..3, &cfg(2, None)).unwrap();
        assert_eq!(run.holdings[0].long, vec![(0, 0.5), (3, 0.5)]);
        assert_eq!(run.holdings[0].short, vec![(1, 1.0)]);
        let expect = (1.1 + 1.1) / 2.0 - 1.1;
        assert!((run.returns[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn csm_examples() {
        let p = panel(&[
            ("A", &[10.0, 11.0, 11.0]),
            ("B", &[10.0, 13.0, 13.0]),
            ("C", &[10.0, 9.0, 9.9]),
            ("D", &[10.0, 10.0, 12.0]),
        ]);
        let run = run_csm(&p, 1..2, &cfg(1, Some(1))).unwrap();
        assert_eq!(run.holdings[0].long, vec![(1, 1.0)]);
        assert_eq!(run.holdings[0].short, vec![(2, 1.0)]);
        assert!((run.returns[0] - (0.0 - 0.1)).abs() < 1e-12);

        let flat = panel(&[("B", &[1.0, 1.0, 1.2]), ("A", &[1.0, 1.0, 1.0]), ("C", &[1.0, 1.0, 1.5])]);
        let run = run_csm(&flat, 1..2, &cfg(1, Some(1))).unwrap();
        let ids = flat.stock_ids();
        let id = |s: usize| ids[s].as_str();
        assert_eq!(id(run.holdings[0].long[0].0), "A");
        assert_eq!(id(run.holdings[0].short[0].0), "C");

        let run = run_csm(&flat, 1..2, &cfg(1, Some(3))).unwrap();
        assert!(run.events.iter().any(|e| e.kind == EventKind::LegShrunk { requested: 3, used: 1 }));
    }

    fn flat_params() -> PolicyParams {
        let mut p = PolicyParams::init(PolicyConfig { hidden: 4, embed: 2, lookup_cols: 4, quant: 1 }, &mut stream(1, Stream::Init)).unwrap();
        p.tensors[ix::SCORE_W] = Tensor::zeros(&[4, 1]);
        p
    }

    #[test]
    fn constant_scores_trade_by_stock_id() {
        let p = synth_market(&SynthConfig { num_stocks: 8, num_periods: 26, seed: 5, ..Default::default() }).unwrap();
        let c = BacktestConfig { window: 3, tc: 0.002, ..Default::default() };
        let run = run_policy(&p, &flat_params(), 3..25, &c).unwrap();
        let mut w = 1.0;
        for (k, r) in run.returns.iter().enumerate() {
            w *= 1.0 + r - 0.002;
            assert!((run.wealth[k + 1] - w).abs() < 1e-12);
        }
        for (k, h) in run.holdings.iter().enumerate() {
            let t = 3 + k;
            let elig = eligible_stocks(&p, t, 3);
            let g = (elig.len() / 4).max(1);
            assert_eq!(h.long.iter().map(|x| x.0).collect::<Vec<_>>(), elig[..g].to_vec());
            assert_eq!(h.short.iter().map(|x| x.0).collect::<Vec<_>>(), elig[elig.len() - g..].to_vec());
        }
    }

    #[test]
    fn policy_hand_panel() {
        // Scores all equal: long A and B, short C and D, weights 1/2.
        let p = panel(&[
            ("A", &[10.0, 11.0, 12.0, 12.0]),
            ("B", &[10.0, 10.0, 10.0, 11.0]),
            ("C", &[10.0, 12.0, 12.0, 13.2]),
            ("D", &[10.0, 9.0, 9.0, 9.0]),
        ]);
        let run = run_policy(&p, &flat_params(), 1..3, &cfg(1, Some(2))).unwrap();
        let first = (12.0 / 11.0 + 1.0) / 2.0 - 1.0;
        assert!((run.returns[0] - first).abs() < 1e-12);
        let second = (1.0 + 1.1) / 2.0 - (1.1 + 1.0) / 2.0;
        assert!((run.returns[1] - second).abs() < 1e-12);
    }

    #[test]
    fn delisting_exits_at_last_close() {
        let p = panel(&[("A", &[10.0, 11.0, 12.0]), ("B", &[10.0, 9.0, 8.1]), ("C", &[1.0, 1.0, 1.0])]);
        let mut p2 = p.clone();
        *p2.bar_mut(1, 2).unwrap() = None;
        let run = run_market(&p2, 1..2, &cfg(1, None)).unwrap();
        assert!((run.returns[0] - ((12.0 / 11.0 + 1.0 + 1.0) / 3.0 - 1.0)).abs() < 1e-12);
        assert_eq!(run.events[0].kind, EventKind::Delisted { stock: "B".into() });
    }

    #[test]
    fn empty_universe_records_zero() {
        let mut p = panel(&[("A", &[10.0, 11.0, 12.0, 13.0]), ("B", &[5.0, 5.0, 5.0, 5.0])]);
        *p.bar_mut(0, 1).unwrap() = None;
        *p.bar_mut(1, 1).unwrap() = None;
        for run in [
            run_market(&p, 1..3, &cfg(1, None)).unwrap(),
            run_policy(&p, &flat_params(), 1..3, &cfg(1, None)).unwrap(),
        ] {
            assert_eq!(run.returns[0], 0.0);
            assert_eq!(run.universe[0], 0);
            assert_eq!(run.events[0].kind, EventKind::EmptyUniverse);
        }
    }

    #[test]
    fn csv_rows() {
        let p = panel(&[("A", &[10.0, 11.0, 12.1]), ("B", &[10.0, 10.0, 10.0])]);
        let run = run_market(&p, 1..2, &cfg(1, None)).unwrap();
        assert_eq!(run.to_csv(), "period,return,wealth,universe_size\n2000-02,0.05,1.05,2\n");
    }

    #[test]
    fn rejects_bad_range() {
        let p = panel(&[("A", &[10.0, 11.0])]);
        assert!(matches!(run_market(&p, 1..2, &cfg(1, None)), Err(BacktestError::Range { .. })));
    }

    #[test]
    fn holdings_ignore_later_data() {
        let p = synth_market(&SynthConfig { num_stocks: 10, num_periods: 30, seed: 9, ..Default::default() }).unwrap();
        let params = PolicyParams::init(PolicyConfig { hidden: 4, embed: 2, lookup_cols: 4, quant: 1 }, &mut stream(2, Stream::Init)).unwrap();
        let c = BacktestConfig { window: 3, ..Default::default() };
        let t = 15;
        let mut bent = p.clone();
        for s in 0..bent.num_stocks() {
            for u in t + 1..bent.num_periods() {
                let slot = bent.bar_mut(s, u).unwrap();
                if s % 3 == 0 {
                    *slot = None;
                } else if let Some(bar) = slot.as_mut() {
                    bar.close *= 1.0 + 0.05 * s as f64;
                    bar.vol *= 7.0;
                }
            }
        }
        let pairs = [
            (run_policy(&p, &params, 3..t + 1, &c).unwrap(), run_policy(&bent, &params, 3..t + 1, &c).unwrap()),
            (run_csm(&p, 3..t + 1, &c).unwrap(), run_csm(&bent, 3..t + 1, &c).unwrap()),
            (run_tsm(&p, 3..t + 1, &c).unwrap(), run_tsm(&bent, 3..t + 1, &c).unwrap()),
            (run_market(&p, 3..t + 1, &c).unwrap(), run_market(&bent, 3..t + 1, &c).unwrap()),
        ];
        for (a, b) in &pairs {
            assert_eq!(a.holdings, b.holdings, "{}", a.strategy);
            // Returns before t are realized by t and must agree too.
            assert_eq!(a.returns[..a.returns.len() - 1], b.returns[..b.returns.len() - 1]);
        }
    }
}
