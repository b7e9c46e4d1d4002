//! Seeded synthetic markets with planted cross-sectional structure.
//!
//! Each stock's log price moves at `sub_steps` sub-periods per month. The
//! monthly expected log return of stock `i` is
//!
//! ```text
//! mu_i = a_i + premium(sigma_i) - var_i / 2 - anchor * y_i - reversion * e_i(prev month)
//! ```
//!
//! * `a_i` is a persistent AR(1) drift (stationary sd `momentum`), which makes
//!   trailing returns predictive over long horizons;
//! * `premium` rewards low idiosyncratic volatility: `+low_vol_premium` at the
//!   bottom of `vol_range`, `-low_vol_premium` at the top, linear in between;
//! * `var_i / 2` is the convexity correction, so the premium holds for simple
//!   returns and not only log returns;
//! * `y_i` is the stock's cumulative idiosyncratic log return (the anchor is
//!   off by default);
//! * the last term reverses a fraction of last month's idiosyncratic shock.
//!
//! A common market factor is added to every stock at each sub-step. Volatility
//! levels are redrawn per stock with probability `vol_switch_prob` per month.
//! The `vol` column is the intra-month price sd divided by the mean price.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Bar, DataError, MarketPanel, YearMonth};
use crate::rng::{stream, Stream};

/// Smallest look-back window the generator guarantees room for.
pub const MIN_WINDOW: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_stocks: usize,
    pub num_periods: usize,
    pub sub_steps: usize,
    pub start: YearMonth,
    /// Stationary sd of the persistent monthly drift.
    pub momentum: f64,
    /// AR(1) coefficient of the persistent drift.
    pub momentum_persistence: f64,
    /// Fraction of last month's idiosyncratic shock reversed this month.
    pub reversion: f64,
    /// Range of intra-month idiosyncratic price dispersion, relative to price.
    pub vol_range: (f64, f64),
    pub vol_switch_prob: f64,
    pub low_vol_premium: f64,
    /// Monthly pull of idiosyncratic log level toward zero.
    pub anchor_reversion: f64,
    pub market_drift: f64,
    pub market_vol: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_stocks: 50,
            num_periods: 240,
            sub_steps: 21,
            start: YearMonth::new(2000, 1).expect("valid month"),
            momentum: 0.006,
            momentum_persistence: 0.95,
            reversion: 0.1,
            vol_range: (0.006, 0.024),
            vol_switch_prob: 1.0 / 48.0,
            low_vol_premium: 0.01,
            anchor_reversion: 0.0,
            market_drift: 0.004,
            market_vol: 0.02,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: &str| Err(DataError::Invalid(msg.to_string()));
        if self.num_stocks < 4 {
            return bad("num_stocks must be at least 4");
        }
        if self.num_periods < 2 * MIN_WINDOW + 2 {
            return bad("num_periods must be at least 2K+2 (K = 12)");
        }
        if self.sub_steps < 2 {
            return bad("sub_steps must be at least 2");
        }
        let (lo, hi) = self.vol_range;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return bad("vol_range must satisfy 0 <= lo <= hi");
        }
        if !(0.0..=1.0).contains(&self.vol_switch_prob) {
            return bad("vol_switch_prob must be in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.momentum_persistence) {
            return bad("momentum_persistence must be in [0, 1)");
        }
        let nonneg = [
            self.momentum,
            self.reversion,
            self.low_vol_premium,
            self.anchor_reversion,
            self.market_vol,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || !self.market_drift.is_finite() {
            return bad("strengths and volatilities must be finite and non-negative");
        }
        Ok(())
    }
}

struct StockState {
    log_p0: f64,
    idio_level: f64,
    drift: f64,
    sigma: f64,
    prev_shock: f64,
    shares: f64,
    eps: f64,
    book_ps: f64,
    payout: f64,
    base_volume: f64,
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Generates a panel; identical configs give bitwise-identical panels.
pub fn synth_market(cfg: &SynthConfig) -> Result<MarketPanel, DataError> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, Stream::Data);
    let n = cfg.sub_steps as f64;
    // Sub-step sd that makes the expected intra-month price dispersion equal sigma.
    let dispersion_to_step = (6.0 * n / (n * n - 1.0)).sqrt();
    let (vol_lo, vol_hi) = cfg.vol_range;
    let vol_mid = 0.5 * (vol_lo + vol_hi);
    let vol_half = 0.5 * (vol_hi - vol_lo);
    let premium = |sigma: f64| {
        if vol_half > 0.0 {
            cfg.low_vol_premium * (vol_mid - sigma) / vol_half
        } else {
            0.0
        }
    };
    let persistence_noise = (1.0 - cfg.momentum_persistence.powi(2)).sqrt();

    let mut states: Vec<StockState> = (0..cfg.num_stocks)
        .map(|_| StockState {
            log_p0: (100.0f64).ln() + 0.3 * (2.0 * rng.random::<f64>() - 1.0),
            idio_level: 0.0,
            drift: cfg.momentum * normal(&mut rng),
            sigma: vol_lo + (vol_hi - vol_lo) * rng.random::<f64>(),
            prev_shock: 0.0,
            shares: 1e7 * (1.0 + 9.0 * rng.random::<f64>()),
            eps: 100.0 / (10.0 + 15.0 * rng.random::<f64>()),
            book_ps: 100.0 * (0.2 + 0.8 * rng.random::<f64>()),
            payout: 0.1 + 0.4 * rng.random::<f64>(),
            base_volume: 1e5 * (1.0 + 9.0 * rng.random::<f64>()),
        })
        .collect();

    let mut series: Vec<Vec<Option<Bar>>> = vec![Vec::with_capacity(cfg.num_periods); cfg.num_stocks];
    let mut market_level = 0.0;
    let mut prices = vec![vec![0.0; cfg.sub_steps]; cfg.num_stocks];
    let mut month_shock = vec![0.0; cfg.num_stocks];
    let mut month_start = vec![0.0; cfg.num_stocks];

    for t in 0..cfg.num_periods {
        let mut month_mu = Vec::with_capacity(cfg.num_stocks);
        for s in &mut states {
            if t > 0 {
                s.drift = cfg.momentum_persistence * s.drift
                    + persistence_noise * cfg.momentum * normal(&mut rng);
                if rng.random::<f64>() < cfg.vol_switch_prob {
                    s.sigma = vol_lo + (vol_hi - vol_lo) * rng.random::<f64>();
                }
            }
            // The convexity term makes the premium hold for simple returns.
            let monthly_var = (s.sigma * dispersion_to_step).powi(2) * n;
            month_mu.push(
                s.drift + premium(s.sigma) - 0.5 * monthly_var
                    - cfg.anchor_reversion * s.idio_level
                    - cfg.reversion * s.prev_shock,
            );
        }
        for (i, s) in states.iter().enumerate() {
            month_start[i] = s.log_p0 + market_level + s.idio_level;
            month_shock[i] = 0.0;
        }
        #[allow(clippy::needless_range_loop)]
        for k in 0..cfg.sub_steps {
            market_level += cfg.market_drift / n + cfg.market_vol / n.sqrt() * normal(&mut rng);
            for (i, s) in states.iter_mut().enumerate() {
                let shock = s.sigma * dispersion_to_step * normal(&mut rng);
                s.idio_level += month_mu[i] / n + shock;
                month_shock[i] += shock;
                prices[i][k] = (s.log_p0 + market_level + s.idio_level).exp();
            }
        }
        for (i, s) in states.iter_mut().enumerate() {
            let path = &prices[i];
            let close = path[cfg.sub_steps - 1];
            let mean = path.iter().sum::<f64>() / n;
            // Relative dispersion, so the column tracks volatility rather than price level.
            let vol = (path.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n).sqrt() / mean;
            let month_ret = close.ln() - month_start[i];
            s.prev_shock = month_shock[i];

            s.shares *= (0.005 * normal(&mut rng)).exp();
            s.eps *= (0.02 * normal(&mut rng)).exp();
            s.book_ps *= (0.01 * normal(&mut rng)).exp();
            s.payout = (s.payout * (0.02 * normal(&mut rng)).exp()).min(1.0);
            let volume = s.base_volume * (0.25 * normal(&mut rng) + 2.0 * month_ret.abs()).exp();

            series[i].push(Some(Bar {
                close,
                vol,
                volume,
                mcap: close * s.shares,
                pe: close / s.eps,
                bm: s.book_ps / close,
                div: s.payout * s.eps / 12.0,
            }));
        }
    }

    let width = cfg.num_stocks.saturating_sub(1).to_string().len();
    let named = series
        .into_iter()
        .enumerate()
        .map(|(i, bars)| (format!("S{i:0width$}"), bars))
        .collect();
    MarketPanel::new(cfg.start, cfg.num_periods, named)
}
