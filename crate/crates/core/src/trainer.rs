//! Sharpe-ratio policy gradient over simulated multi-month trajectories.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::data::{format_float, MarketPanel};
use crate::features::{build_windows, FeatureError};
use crate::metrics::{self, MetricsError};
use crate::policy::{record_forward, PolicyError, PolicyInput, PolicyParams};
use crate::portfolio::{
    default_leg_size, generate_by, holding_rates, log_likelihood, realize_return, return_on_tape,
    Mode, PortfolioError, PortfolioPair,
};
use crate::rng::{stream, Stream};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Portfolio(#[from] PortfolioError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no valid trajectory start in the training range")]
    NoValidStart,
    #[error("non-finite gradient from trajectory {0}")]
    NonFiniteGradient(usize),
    #[error("degenerate policy: scores collapsed to 0.5 with no learning signal by epoch {0}")]
    Degenerate(usize),
}

/// How the batch gradient is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Estimator {
    /// `(1/N) sum_n (H_n - H0_n) grad sum_t sum_held log b`, advantages frozen.
    ScoreFunction,
    /// `(1/N) sum_n grad H_n`, differentiating each trajectory's Sharpe ratio
    /// through the leg weights with the selection held fixed.
    #[default]
    Pathwise,
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Estimator::ScoreFunction => "score-function",
            Estimator::Pathwise => "pathwise",
        })
    }
}

impl FromStr for Estimator {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "score-function" => Ok(Estimator::ScoreFunction),
            "pathwise" => Ok(Estimator::Pathwise),
            other => Err(TrainError::Config(format!("unknown estimator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Look-back window `K`.
    pub window: usize,
    /// Periods per trajectory `T`.
    pub horizon: usize,
    /// Trajectories per batch `N`.
    pub batch: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Bound on the global gradient norm.
    pub clip: f64,
    /// Fixed leg size; `None` uses a quarter of each month's universe.
    pub leg_size: Option<usize>,
    pub mode: Mode,
    pub theta: f64,
    pub tc: f64,
    pub seed: u64,
    pub estimator: Estimator,
    /// Trailing months of the panel held out for picking the best epoch.
    pub validation_periods: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            window: 12,
            horizon: 12,
            batch: 16,
            epochs: 100,
            learning_rate: 30.0,
            clip: 0.01,
            leg_size: None,
            mode: Mode::LongShort,
            theta: 0.0,
            tc: metrics::DEFAULT_TC,
            seed: 0,
            estimator: Estimator::Pathwise,
            validation_periods: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.horizon < 2 {
            return fail("horizon must be at least 2");
        }
        if self.batch < 1 {
            return fail("batch must be at least 1");
        }
        if self.window < 1 {
            return fail("window must be at least 1");
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return fail("learning rate must be finite and non-negative");
        }
        if self.clip.is_nan() || self.clip <= 0.0 {
            return fail("clip must be positive");
        }
        if self.leg_size == Some(0) {
            return fail("leg size must be at least 1");
        }
        Ok(())
    }

    fn leg_size_for(&self, stocks: usize) -> usize {
        self.leg_size.unwrap_or_else(|| default_leg_size(stocks))
    }
}

/// Everything about one decision month that does not depend on parameters.
#[derive(Debug, Clone)]
pub struct Period {
    pub t: usize,
    pub input: PolicyInput,
    /// Panel indices of the eligible stocks, ascending.
    pub stocks: Vec<usize>,
    /// Rate over the following month, per eligible stock.
    pub rates: Vec<f64>,
    /// Equal-weight return over the following month.
    pub market: f64,
    pub delisted: Vec<usize>,
}

impl Period {
    pub fn build(panel: &MarketPanel, t: usize, window: usize) -> Result<Self, TrainError> {
        if t + 1 >= panel.num_periods() {
            return Err(TrainError::Config(format!("decision index {t} has no following month")));
        }
        let ws = build_windows(panel, t, window)?;
        let stocks = ws.stocks();
        let (rates, delisted) = holding_rates(panel, &stocks, t);
        let market = rates.iter().sum::<f64>() / rates.len() as f64 - 1.0;
        Ok(Self { t, input: PolicyInput::from_windows(&ws), stocks, rates, market, delisted })
    }

    pub fn rate_options(&self) -> Vec<Option<f64>> {
        self.rates.iter().map(|&z| Some(z)).collect()
    }
}

/// Policy outcome at one month.
#[derive(Debug, Clone)]
pub struct Step {
    pub t: usize,
    pub scores: Vec<f64>,
    pub pair: PortfolioPair,
    pub ret: f64,
    /// Gradient of `sum log b` over held stocks.
    pub grad_log_b: Option<PolicyParams>,
    /// Gradient of the realized return.
    pub grad_return: Option<PolicyParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Need {
    Nothing,
    LogLikelihood,
    Return,
}

fn evaluate_period(
    params: &PolicyParams,
    period: &Period,
    cfg: &TrainConfig,
    need: Need,
) -> Result<Step, TrainError> {
    let mut fwd = record_forward(params, &period.input)?;
    let scores = fwd.score_values();
    let g = cfg.leg_size_for(scores.len());
    let pair = generate_by(&scores, &period.stocks, g, cfg.mode)?;
    let ret = realize_return(&pair, &period.rate_options())?;
    let (mut grad_log_b, mut grad_return) = (None, None);
    match need {
        Need::Nothing => {}
        Need::LogLikelihood => {
            let root = log_likelihood(&mut fwd.tape, fwd.scores, &pair)?;
            let grads = fwd.tape.backward(root, 1.0)?;
            grad_log_b = Some(fwd.params.gradients(&grads, params.config));
        }
        Need::Return => {
            let root = return_on_tape(&mut fwd.tape, fwd.scores, &pair, &period.rates)?;
            let grads = fwd.tape.backward(root, 1.0)?;
            grad_return = Some(fwd.params.gradients(&grads, params.config));
        }
    }
    Ok(Step { t: period.t, scores, pair, ret, grad_log_b, grad_return })
}

/// One simulated run of `T` consecutive months.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t0: usize,
    pub steps: Vec<Step>,
    pub returns: Vec<f64>,
    /// Sharpe ratio of `returns` after costs.
    pub sharpe: f64,
    /// `grad sum_t sum_held log b`, accumulated over the steps.
    pub grad_log_b: PolicyParams,
}

/// Runs the policy for `cfg.horizon` months from decision index `t0`.
pub fn simulate_trajectory(
    panel: &MarketPanel,
    t0: usize,
    params: &PolicyParams,
    cfg: &TrainConfig,
) -> Result<Trajectory, TrainError> {
    let mut steps = Vec::with_capacity(cfg.horizon);
    let mut grad = params.zeros_like();
    for t in t0..t0 + cfg.horizon {
        let period = Period::build(panel, t, cfg.window)?;
        let step = evaluate_period(params, &period, cfg, Need::LogLikelihood)?;
        grad.add_scaled(step.grad_log_b.as_ref().expect("requested"), 1.0);
        steps.push(step);
    }
    let returns: Vec<f64> = steps.iter().map(|s| s.ret).collect();
    let sharpe = metrics::sharpe(&returns, cfg.theta, cfg.tc)?;
    Ok(Trajectory { t0, steps, returns, sharpe, grad_log_b: grad })
}

/// Sharpe ratio of an equal-weight portfolio; 0 when its volatility is 0.
/// The flag reports that fallback.
pub fn threshold_from_returns(returns: &[f64], theta: f64, tc: f64) -> Result<(f64, bool), TrainError> {
    match metrics::sharpe(returns, theta, tc) {
        Ok(h) => Ok((h, false)),
        Err(MetricsError::ZeroVolatility) => Ok((0.0, true)),
        Err(e) => Err(e.into()),
    }
}

/// Market Sharpe ratio over the `horizon` months from `t0`, holding every
/// stock eligible under `window` in equal weight.
pub fn market_threshold(
    panel: &MarketPanel,
    t0: usize,
    horizon: usize,
    window: usize,
    theta: f64,
    tc: f64,
) -> Result<(f64, bool), TrainError> {
    let returns = (t0..t0 + horizon)
        .map(|t| Period::build(panel, t, window).map(|p| p.market))
        .collect::<Result<Vec<_>, _>>()?;
    threshold_from_returns(&returns, theta, tc)
}

/// `(1/N) sum_n (H_n - H0_n) g_n` with advantages treated as constants.
pub fn batch_gradient(
    trajectories: &[Trajectory],
    thresholds: &[f64],
    params: &PolicyParams,
) -> Result<PolicyParams, TrainError> {
    if trajectories.len() != thresholds.len() || trajectories.is_empty() {
        return Err(TrainError::Config(format!(
            "{} trajectories with {} thresholds",
            trajectories.len(),
            thresholds.len()
        )));
    }
    let mut grad = params.zeros_like();
    let n = trajectories.len() as f64;
    for (idx, (traj, h0)) in trajectories.iter().zip(thresholds).enumerate() {
        let adv = traj.sharpe - h0;
        if !adv.is_finite() || !traj.grad_log_b.all_finite() {
            return Err(TrainError::NonFiniteGradient(idx));
        }
        grad.add_scaled(&traj.grad_log_b, adv / n);
    }
    Ok(grad)
}

/// `dH/dR_t` for `H = (mean(R) - tc - theta) / std(R)`.
pub fn sharpe_gradient(returns: &[f64], theta: f64, tc: f64) -> Result<Vec<f64>, TrainError> {
    let h = metrics::sharpe(returns, theta, tc)?;
    let v = metrics::volatility(returns);
    let n = returns.len() as f64;
    let m = returns.iter().sum::<f64>() / n;
    Ok(returns.iter().map(|r| (1.0 - h * (r - m) / v) / (n * v)).collect())
}

/// Rescales `grad` so its norm is at most `bound`; returns the norm before.
pub fn clip_global_norm(grad: &mut PolicyParams, bound: f64) -> f64 {
    let norm = grad.norm();
    if norm > bound {
        grad.scale(bound / norm);
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_sharpe: f64,
    pub mean_advantage: f64,
    /// Norm before clipping.
    pub grad_norm: f64,
    /// Validation Sharpe ratio, when a validation range is configured.
    pub validation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    /// Parameters with the best validation Sharpe ratio (the final ones
    /// without a validation range).
    pub best_params: PolicyParams,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

pub const LEARNING_CURVE_HEADER: &str = "epoch,mean_H,mean_advantage,grad_norm";

pub fn learning_curve_csv(log: &[EpochLog]) -> String {
    let mut out = format!("{LEARNING_CURVE_HEADER}\n");
    for e in log {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            e.epoch,
            format_float(e.mean_sharpe),
            format_float(e.mean_advantage),
            format_float(e.grad_norm)
        );
    }
    out
}

/// Parameter-independent view of a training panel.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    /// Indexed by decision month; `None` where no window can be formed.
    pub periods: Vec<Option<Period>>,
    /// Valid trajectory starts.
    pub starts: Vec<usize>,
    /// Decision months used for validation.
    pub validation: Vec<usize>,
}

impl TrainingSet {
    pub fn build(panel: &MarketPanel, cfg: &TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let p = panel.num_periods();
        let periods: Vec<Option<Period>> = (0..p)
            .into_par_iter()
            .map(|t| {
                if t < cfg.window || t + 1 >= p {
                    return None;
                }
                let period = Period::build(panel, t, cfg.window).ok()?;
                let g = cfg.leg_size_for(period.stocks.len());
                let needed = match cfg.mode {
                    Mode::LongShort => 2 * g,
                    Mode::LongOnly => g,
                };
                (g >= 1 && period.stocks.len() >= needed.max(2)).then_some(period)
            })
            .collect();
        // Decision months whose next close is inside the panel.
        let last_decision = p.saturating_sub(2);
        let train_last = last_decision.saturating_sub(cfg.validation_periods);
        let validation: Vec<usize> = if cfg.validation_periods > 0 {
            (train_last + 1..=last_decision).filter(|&t| periods[t].is_some()).collect()
        } else {
            Vec::new()
        };
        let starts: Vec<usize> = (cfg.window..p)
            .filter(|&t0| {
                t0 + cfg.horizon <= train_last + 1
                    && (t0..t0 + cfg.horizon).all(|t| periods[t].is_some())
            })
            .collect();
        if starts.is_empty() {
            return Err(TrainError::NoValidStart);
        }
        Ok(Self { periods, starts, validation })
    }

    fn period(&self, t: usize) -> &Period {
        self.periods[t].as_ref().expect("start validity checked")
    }
}

const DEGENERATE_SPREAD: f64 = 1e-6;
const DEGENERATE_EPOCHS: usize = 10;
/// Gradient norms at or below this are round-off.
const DEGENERATE_GRAD: f64 = 1e-12;

/// Gradient ascent on the trajectory Sharpe ratio.
pub fn train(
    panel: &MarketPanel,
    init: PolicyParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let set = TrainingSet::build(panel, cfg)?;
    let mut sampler = stream(cfg.seed, Stream::Sampling);
    let mut params = init;
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut best_validation = f64::NEG_INFINITY;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut stalled = 0;
    let need = match cfg.estimator {
        Estimator::ScoreFunction => Need::LogLikelihood,
        Estimator::Pathwise => Need::Return,
    };

    for epoch in 1..=cfg.epochs {
        let starts: Vec<usize> = (0..cfg.batch)
            .map(|_| set.starts[sampler.random_range(0..set.starts.len())])
            .collect();
        let mut months: Vec<usize> = starts.iter().flat_map(|&t0| t0..t0 + cfg.horizon).collect();
        months.sort_unstable();
        months.dedup();

        // Each month is evaluated once per epoch; trajectories share the results.
        let steps = months
            .par_iter()
            .map(|&t| evaluate_period(&params, set.period(t), cfg, need))
            .collect::<Result<Vec<_>, _>>()?;
        let step_at = |t: usize| &steps[months.binary_search(&t).expect("evaluated")];

        let mut grad = params.zeros_like();
        let n = cfg.batch as f64;
        let (mut sum_h, mut sum_adv) = (0.0, 0.0);
        for (idx, &t0) in starts.iter().enumerate() {
            let returns: Vec<f64> = (t0..t0 + cfg.horizon).map(|t| step_at(t).ret).collect();
            let market: Vec<f64> = (t0..t0 + cfg.horizon).map(|t| set.period(t).market).collect();
            let h = metrics::sharpe(&returns, cfg.theta, cfg.tc)?;
            let (h0, _) = threshold_from_returns(&market, cfg.theta, cfg.tc)?;
            let adv = h - h0;
            sum_h += h;
            sum_adv += adv;
            match cfg.estimator {
                Estimator::ScoreFunction => {
                    for t in t0..t0 + cfg.horizon {
                        grad.add_scaled(step_at(t).grad_log_b.as_ref().expect("requested"), adv / n);
                    }
                }
                Estimator::Pathwise => {
                    let dh = sharpe_gradient(&returns, cfg.theta, cfg.tc)?;
                    for (t, w) in (t0..t0 + cfg.horizon).zip(dh) {
                        grad.add_scaled(step_at(t).grad_return.as_ref().expect("requested"), w / n);
                    }
                }
            }
            if !grad.all_finite() {
                return Err(TrainError::NonFiniteGradient(idx));
            }
        }

        let grad_norm = clip_global_norm(&mut grad, cfg.clip);
        params.add_scaled(&grad, cfg.learning_rate);

        let spread = steps
            .iter()
            .flat_map(|s| s.scores.iter().map(|x| (x - 0.5).abs()))
            .sum::<f64>()
            / steps.iter().map(|s| s.scores.len()).sum::<usize>() as f64;
        if spread < DEGENERATE_SPREAD && grad_norm <= DEGENERATE_GRAD {
            stalled += 1;
            if stalled >= DEGENERATE_EPOCHS {
                return Err(TrainError::Degenerate(epoch));
            }
        } else {
            stalled = 0;
        }

        let validation = if set.validation.is_empty() {
            None
        } else {
            let returns = set
                .validation
                .par_iter()
                .map(|&t| evaluate_period(&params, set.period(t), cfg, Need::Nothing).map(|s| s.ret))
                .collect::<Result<Vec<_>, _>>()?;
            let v = metrics::sharpe(&returns, cfg.theta, cfg.tc).unwrap_or(f64::NEG_INFINITY);
            if v > best_validation {
                best_validation = v;
                best_params = params.clone();
                best_epoch = epoch;
            }
            Some(v)
        };

        log.push(EpochLog {
            epoch,
            mean_sharpe: sum_h / n,
            mean_advantage: sum_adv / n,
            grad_norm,
            validation,
        });
    }

    if set.validation.is_empty() {
        best_params = params.clone();
        best_epoch = cfg.epochs;
    }
    Ok(TrainOutcome { params, best_params, best_epoch, log })
}

/// Convenience: initialize from the seed's init stream and train.
pub fn train_from_seed(
    panel: &MarketPanel,
    policy: crate::policy::PolicyConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let init = PolicyParams::init(policy, &mut stream(cfg.seed, Stream::Init))?;
    train(panel, init, cfg)
}

/// Scalar surrogate `sum_t sum_held log b` of a trajectory, for gradient
/// checks: evaluates the same graph the trainer differentiates.
pub fn log_likelihood_value(
    panel: &MarketPanel,
    t0: usize,
    params: &PolicyParams,
    cfg: &TrainConfig,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for t in t0..t0 + cfg.horizon {
        let period = Period::build(panel, t, cfg.window)?;
        let mut fwd = record_forward(params, &period.input)?;
        let scores = fwd.score_values();
        let pair = generate_by(&scores, &period.stocks, cfg.leg_size_for(scores.len()), cfg.mode)?;
        let root = log_likelihood(&mut fwd.tape, fwd.scores, &pair)?;
        total += fwd.tape.value(root).item().expect("scalar");
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::data::{synth_market, SynthConfig, CSV_HEADER};
    use crate::policy::{ix, PolicyConfig};

    fn small_policy() -> PolicyConfig {
        PolicyConfig { hidden: 4, embed: 2, lookup_cols: 4, quant: 1 }
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig { window: 3, horizon: 4, batch: 3, epochs: 1, seed: 4, ..Default::default() }
    }

    fn small_panel(seed: u64) -> MarketPanel {
        synth_market(&SynthConfig { num_stocks: 8, num_periods: 30, seed, ..Default::default() }).unwrap()
    }

    fn hand_panel(closes: &[(&str, &[f64])]) -> MarketPanel {
        let mut text = CSV_HEADER.join(",");
        text.push('\n');
        for (id, cs) in closes {
            for (m, c) in cs.iter().enumerate() {
                text.push_str(&format!("{id},2000-{:02},{c},0.1,100,1e6,10,0.5,0.01\n", m + 1));
            }
        }
        MarketPanel::read_csv(text.as_bytes()).unwrap()
    }

    fn flat_head(mut p: PolicyParams) -> PolicyParams {
        let h = p.config.hidden;
        p.tensors[ix::SCORE_W] = Tensor::zeros(&[h, 1]);
        p.tensors[ix::SCORE_B] = Tensor::zeros(&[1, 1]);
        p
    }

    fn init(seed: u64) -> PolicyParams {
        PolicyParams::init(small_policy(), &mut stream(seed, Stream::Init)).unwrap()
    }

    /// Starts drawn by the first epoch of `train`.
    fn first_starts(panel: &MarketPanel, cfg: &TrainConfig) -> Vec<usize> {
        let set = TrainingSet::build(panel, cfg).unwrap();
        let mut rng = stream(cfg.seed, Stream::Sampling);
        (0..cfg.batch).map(|_| set.starts[rng.random_range(0..set.starts.len())]).collect()
    }

    #[test]
    fn constant_scores_use_tie_break() {
        let panel = small_panel(1);
        let traj = simulate_trajectory(&panel, 5, &flat_head(init(2)), &small_cfg()).unwrap();
        for step in &traj.steps {
            assert!(step.scores.iter().all(|&s| s == 0.5));
            assert_eq!(step.pair.long_positions(), vec![0, 1]);
            assert_eq!(step.pair.short_positions(), vec![6, 7]);
            assert!(step.pair.long.iter().chain(&step.pair.short).all(|&(_, w)| (w - 0.5).abs() < 1e-15));
        }
    }

    #[test]
    fn two_month_hand_walkthrough() {
        let panel = hand_panel(&[
            ("A", &[10.0, 10.0, 11.0, 11.0]),
            ("B", &[10.0, 10.0, 10.0, 10.0]),
            ("C", &[10.0, 10.0, 10.0, 10.0]),
            ("D", &[10.0, 10.0, 9.0, 9.9]),
        ]);
        let cfg = TrainConfig { window: 1, horizon: 2, tc: 0.0, ..small_cfg() };
        let traj = simulate_trajectory(&panel, 1, &flat_head(init(3)), &cfg).unwrap();
        // Long A, short D with G = 1.
        let expect = [1.1 - 0.9, 1.0 - 1.1];
        for (r, e) in traj.returns.iter().zip(expect) {
            assert!((r - e).abs() < 1e-12);
        }
        let h = metrics::sharpe(&expect, 0.0, 0.0).unwrap();
        assert!((traj.sharpe - h).abs() < 1e-12);
    }

    #[test]
    fn trajectories_are_deterministic() {
        let panel = small_panel(5);
        let a = simulate_trajectory(&panel, 6, &init(6), &small_cfg()).unwrap();
        let b = simulate_trajectory(&panel, 6, &init(6), &small_cfg()).unwrap();
        assert_eq!(a.returns, b.returns);
        assert_eq!(a.grad_log_b.flatten(), b.grad_log_b.flatten());
    }

    #[test]
    fn market_threshold_cases() {
        let flat = hand_panel(&[("A", &[5.0; 5]), ("B", &[7.0; 5])]);
        assert_eq!(market_threshold(&flat, 1, 3, 1, 0.0, 0.0).unwrap(), (0.0, true));
        // z = (1.5, 0.5) every month, exact in binary.
        let cancel = hand_panel(&[("A", &[2.0, 3.0, 4.5, 6.75]), ("B", &[8.0, 4.0, 2.0, 1.0])]);
        assert_eq!(market_threshold(&cancel, 1, 2, 1, 0.0, 0.0).unwrap(), (0.0, true));

        let panel = small_panel(7);
        let (h0, flagged) = market_threshold(&panel, 5, 6, 3, 0.0, 0.001).unwrap();
        assert!(!flagged);
        let returns: Vec<f64> = (5..11)
            .map(|t| {
                let zs: Vec<f64> = (0..panel.num_stocks())
                    .filter(|&s| (t - 3..=t).all(|u| panel.is_present(s, u)))
                    .map(|s| panel.close(s, t + 1).unwrap() / panel.close(s, t).unwrap())
                    .collect();
                zs.iter().sum::<f64>() / zs.len() as f64 - 1.0
            })
            .collect();
        assert!((h0 - metrics::sharpe(&returns, 0.0, 0.001).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn batch_gradient_scales_by_advantage() {
        let panel = small_panel(8);
        let params = init(9);
        let traj = simulate_trajectory(&panel, 4, &params, &small_cfg()).unwrap();
        let zero = batch_gradient(std::slice::from_ref(&traj), &[traj.sharpe], &params).unwrap();
        assert!(zero.flatten().iter().all(|&g| g == 0.0));
        let g = batch_gradient(std::slice::from_ref(&traj), &[traj.sharpe - 2.0], &params).unwrap();
        for (a, b) in g.flatten().iter().zip(traj.grad_log_b.flatten()) {
            assert_eq!(*a, 2.0 * b);
        }
        assert!(batch_gradient(&[], &[], &params).is_err());
    }

    #[test]
    fn log_likelihood_gradient_matches_finite_differences() {
        let panel = small_panel(10);
        let cfg = small_cfg();
        let params = init(11);
        let traj = simulate_trajectory(&panel, 7, &params, &cfg).unwrap();
        let flat = params.flatten();
        let analytic = traj.grad_log_b.flatten();
        let mut rng = stream(12, Stream::Sampling);
        let eps = 1e-6;
        for _ in 0..40 {
            let i = rng.random_range(0..flat.len());
            let eval = |d: f64| {
                let mut x = flat.clone();
                x[i] += d;
                log_likelihood_value(&panel, 7, &PolicyParams::from_flat(params.config, &x).unwrap(), &cfg).unwrap()
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1.0);
            assert!(err <= 1e-4, "coordinate {i}: {} vs {numeric}", analytic[i]);
        }
    }

    fn one_epoch_step(panel: &MarketPanel, cfg: &TrainConfig, params: &PolicyParams) -> Vec<f64> {
        // A large step keeps the update well above the rounding of the parameters.
        let eta = 1e6;
        let cfg = TrainConfig { learning_rate: eta, clip: 1e300, epochs: 1, ..*cfg };
        let out = train(panel, params.clone(), &cfg).unwrap();
        out.params.flatten().iter().zip(params.flatten()).map(|(a, b)| (a - b) / eta).collect()
    }

    #[test]
    fn pathwise_update_is_the_sharpe_gradient() {
        let panel = small_panel(13);
        let cfg = TrainConfig { estimator: Estimator::Pathwise, ..small_cfg() };
        let params = init(14);
        let step = one_epoch_step(&panel, &cfg, &params);
        let starts = first_starts(&panel, &cfg);
        let flat = params.flatten();
        let objective = |x: &[f64]| {
            let p = PolicyParams::from_flat(params.config, x).unwrap();
            starts.iter().map(|&t0| simulate_trajectory(&panel, t0, &p, &cfg).unwrap().sharpe).sum::<f64>()
                / starts.len() as f64
        };
        let mut rng = stream(15, Stream::Sampling);
        let eps = 1e-6;
        for _ in 0..30 {
            let i = rng.random_range(0..flat.len());
            let (mut up, mut down) = (flat.clone(), flat.clone());
            up[i] += eps;
            down[i] -= eps;
            let numeric = (objective(&up) - objective(&down)) / (2.0 * eps);
            let err = (step[i] - numeric).abs() / step[i].abs().max(numeric.abs()).max(1e-3);
            assert!(err <= 1e-4, "coordinate {i}: {} vs {numeric}", step[i]);
        }
    }

    #[test]
    fn score_function_update_matches_batch_gradient() {
        let panel = small_panel(16);
        let cfg = TrainConfig { estimator: Estimator::ScoreFunction, ..small_cfg() };
        let params = init(17);
        let step = one_epoch_step(&panel, &cfg, &params);
        let starts = first_starts(&panel, &cfg);
        let trajs: Vec<Trajectory> =
            starts.iter().map(|&t0| simulate_trajectory(&panel, t0, &params, &cfg).unwrap()).collect();
        let h0: Vec<f64> = starts
            .iter()
            .map(|&t0| market_threshold(&panel, t0, cfg.horizon, cfg.window, cfg.theta, cfg.tc).unwrap().0)
            .collect();
        let expect = batch_gradient(&trajs, &h0, &params).unwrap().flatten();
        // Per-step terms cancel heavily, so compare against their size.
        let scale = trajs
            .iter()
            .zip(&h0)
            .flat_map(|(t, h)| t.steps.iter().map(move |s| (s, (t.sharpe - h).abs())))
            .flat_map(|(s, a)| s.grad_log_b.as_ref().unwrap().flatten().into_iter().map(move |g| g.abs() * a))
            .fold(0.0f64, f64::max);
        for (a, b) in step.iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-12 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let panel = small_panel(18);
        let params = init(19);
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 3, ..small_cfg() };
        let out = train(&panel, params.clone(), &cfg).unwrap();
        assert_eq!(out.params.flatten(), params.flatten());
        assert_eq!(out.log.len(), 3);
    }

    #[test]
    fn clipping_bounds_the_update() {
        let panel = small_panel(20);
        let params = init(21);
        let cfg = TrainConfig { learning_rate: 1.0, clip: 1e-8, epochs: 1, ..small_cfg() };
        let out = train(&panel, params.clone(), &cfg).unwrap();
        let step: f64 = out
            .params
            .flatten()
            .iter()
            .zip(params.flatten())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(out.log[0].grad_norm > 1e-8);
        assert!(step <= 1e-8 * (1.0 + 1e-6));

        let mut g = params.clone();
        let before = clip_global_norm(&mut g, 0.5);
        assert!((before - params.norm()).abs() < 1e-12);
        assert!(g.norm() <= 0.5 + 1e-12);
    }

    #[test]
    fn training_is_deterministic() {
        let panel = small_panel(22);
        let cfg = TrainConfig { epochs: 3, ..small_cfg() };
        let a = train_from_seed(&panel, small_policy(), &cfg).unwrap();
        let b = train_from_seed(&panel, small_policy(), &cfg).unwrap();
        assert_eq!(a.params.flatten(), b.params.flatten());
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn all_zero_policy_is_degenerate() {
        let panel = small_panel(23);
        let cfg = TrainConfig { epochs: 30, ..small_cfg() };
        let zeros = PolicyParams::zeros(small_policy());
        let r = train(&panel, zeros, &cfg);
        assert!(matches!(r, Err(TrainError::Degenerate(10))), "{:?}", r.map(|o| o.log));
    }

    #[test]
    fn validation_selects_best_epoch() {
        let panel = small_panel(24);
        let cfg = TrainConfig { epochs: 4, validation_periods: 6, ..small_cfg() };
        let out = train_from_seed(&panel, small_policy(), &cfg).unwrap();
        let best = out.log.iter().filter_map(|e| e.validation).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.log[out.best_epoch - 1].validation, Some(best));
    }

    #[test]
    fn curve_csv_has_one_row_per_epoch() {
        let log = vec![EpochLog { epoch: 1, mean_sharpe: 0.5, mean_advantage: -0.25, grad_norm: 2.0, validation: None }];
        assert_eq!(learning_curve_csv(&log), format!("{LEARNING_CURVE_HEADER}\n1,0.5,-0.25,2\n"));
    }

    #[test]
    fn estimator_names_round_trip() {
        for e in [Estimator::ScoreFunction, Estimator::Pathwise] {
            assert_eq!(e.to_string().parse::<Estimator>().unwrap(), e);
        }
        assert!("adam".parse::<Estimator>().is_err());
    }
}
