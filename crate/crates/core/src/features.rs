//! Raw stock features, cross-sectional z-scores and look-back windows.

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::data::MarketPanel;

pub const NUM_FEATURES: usize = 7;

/// Feature layout: price rising rate, fine-grained volatility, trade volume,
/// market capitalization, price-earnings, book-to-market, dividend.
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = ["pr", "vol", "tv", "mc", "pe", "bm", "div"];

pub const PR: usize = 0;
pub const VOL: usize = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("stock {stock} has no bar at period index {t}")]
    MissingBar { stock: usize, t: usize },
    #[error("standardization needs at least 2 stocks, got {0}")]
    TooFewStocks(usize),
    #[error("decision index {t} needs a {window}-period look-back plus one prior close")]
    WindowOutOfRange { t: usize, window: usize },
    #[error("no stock has a complete window at period index {0}")]
    NoEligible(usize),
}

/// One stock's features at one month, in [`FEATURE_NAMES`] order.
pub type FeatureVector = [f64; NUM_FEATURES];

/// Unstandardized features of `stock` at period index `t`.
pub fn raw_features(panel: &MarketPanel, stock: usize, t: usize) -> Result<FeatureVector, FeatureError> {
    let missing = |t| FeatureError::MissingBar { stock, t };
    if t == 0 {
        return Err(missing(t));
    }
    let prev = panel.bar(stock, t - 1).ok_or(missing(t - 1))?;
    let bar = panel.bar(stock, t).ok_or(missing(t))?;
    Ok([
        bar.close / prev.close,
        bar.vol,
        bar.volume,
        bar.mcap,
        bar.pe,
        bar.bm,
        bar.div,
    ])
}

/// Standardizes each feature across stocks: mean 0, population sd 1. A feature
/// with zero spread maps to all zeros.
pub fn zscore_crosssection(raw: &[FeatureVector]) -> Result<Vec<FeatureVector>, FeatureError> {
    if raw.len() < 2 {
        return Err(FeatureError::TooFewStocks(raw.len()));
    }
    let n = raw.len() as f64;
    let mut out = vec![[0.0; NUM_FEATURES]; raw.len()];
    for f in 0..NUM_FEATURES {
        let mean = raw.iter().map(|v| v[f]).sum::<f64>() / n;
        let var = raw.iter().map(|v| (v[f] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 0.0 && sd.is_finite() {
            for (o, v) in out.iter_mut().zip(raw) {
                o[f] = (v[f] - mean) / sd;
            }
        }
    }
    Ok(out)
}

/// Standardized K x F history of one stock, oldest row first; the last row is
/// the decision month itself.
#[derive(Debug, Clone, PartialEq)]
pub struct StockWindow {
    pub stock: usize,
    pub stock_id: String,
    pub t: usize,
    pub rows: Vec<FeatureVector>,
}

impl StockWindow {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(
            self.rows.len(),
            NUM_FEATURES,
            self.rows.iter().flatten().copied().collect(),
        )
    }
}

/// Windows of every eligible stock at one decision month plus last-period
/// return ranks, aligned by position.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub t: usize,
    pub windows: Vec<StockWindow>,
    /// 1 = highest price rising rate over the month ending at `t`.
    pub ranks: Vec<usize>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Panel indices of the stocks, in window order.
    pub fn stocks(&self) -> Vec<usize> {
        self.windows.iter().map(|w| w.stock).collect()
    }

    pub fn window_len(&self) -> usize {
        self.windows.first().map_or(0, StockWindow::len)
    }
}

/// A stock is eligible at `t` when every bar in `[t - window, t]` is present.
pub fn is_eligible(panel: &MarketPanel, stock: usize, t: usize, window: usize) -> bool {
    t >= window && (t - window..=t).all(|tau| panel.is_present(stock, tau))
}

pub fn eligible_stocks(panel: &MarketPanel, t: usize, window: usize) -> Vec<usize> {
    (0..panel.num_stocks())
        .filter(|&s| is_eligible(panel, s, t, window))
        .collect()
}

/// Ranks by descending value, 1-based; ties go to the earlier position.
pub fn descending_ranks(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; values.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

/// Standardized windows of length `window` for every stock eligible at `t`.
pub fn build_windows(panel: &MarketPanel, t: usize, window: usize) -> Result<WindowSet, FeatureError> {
    if window == 0 || t < window || t >= panel.num_periods() {
        return Err(FeatureError::WindowOutOfRange { t, window });
    }
    let stocks = eligible_stocks(panel, t, window);
    if stocks.is_empty() {
        return Err(FeatureError::NoEligible(t));
    }

    let mut rows: Vec<Vec<FeatureVector>> = vec![Vec::with_capacity(window); stocks.len()];
    let mut last_pr = Vec::with_capacity(stocks.len());
    for tau in t + 1 - window..=t {
        let raw = stocks
            .iter()
            .map(|&s| raw_features(panel, s, tau))
            .collect::<Result<Vec<_>, _>>()?;
        if tau == t {
            last_pr = raw.iter().map(|v| v[PR]).collect();
        }
        let z = if raw.len() >= 2 {
            zscore_crosssection(&raw)?
        } else {
            // A lone stock has no cross-section to compare against.
            vec![[0.0; NUM_FEATURES]; raw.len()]
        };
        for (acc, zv) in rows.iter_mut().zip(z) {
            acc.push(zv);
        }
    }

    let ranks = descending_ranks(&last_pr);
    let windows = stocks
        .iter()
        .zip(rows)
        .map(|(&s, rows)| StockWindow {
            stock: s,
            stock_id: panel.stock_ids()[s].clone(),
            t,
            rows,
        })
        .collect();
    Ok(WindowSet { t, windows, ranks })
}
