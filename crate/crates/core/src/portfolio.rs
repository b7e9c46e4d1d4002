//! Long/short legs from winner scores and their period returns.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::data::MarketPanel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PortfolioError {
    #[error("leg size {g} is invalid for {stocks} stocks in {mode} mode")]
    LegSize { g: usize, stocks: usize, mode: Mode },
    #[error("no price rising rate for held stock at position {0}")]
    MissingReturn(usize),
    #[error("price rising rate {value} at position {stock} is not positive")]
    NonPositiveReturn { stock: usize, value: f64 },
    #[error("{0}")]
    Shape(String),
    #[error("unknown mode `{0}` (expected long-short or long-only)")]
    UnknownMode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    LongShort,
    LongOnly,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::LongShort => "long-short",
            Mode::LongOnly => "long-only",
        })
    }
}

impl FromStr for Mode {
    type Err = PortfolioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "long-short" => Ok(Mode::LongShort),
            "long-only" => Ok(Mode::LongOnly),
            other => Err(PortfolioError::UnknownMode(other.to_string())),
        }
    }
}

/// A quarter of the universe, rounded down.
pub fn default_leg_size(stocks: usize) -> usize {
    stocks / 4
}

/// Long and short legs over `num_stocks` positions. Each leg lists
/// `(position, weight)` in descending-score order.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioPair {
    pub mode: Mode,
    pub leg_size: usize,
    pub num_stocks: usize,
    pub long: Vec<(usize, f64)>,
    /// Empty in long-only mode.
    pub short: Vec<(usize, f64)>,
}

impl PortfolioPair {
    /// Combined vector over all positions: long weight, short weight, or 0
    /// for unselected stocks.
    pub fn combined(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.num_stocks];
        for &(i, w) in self.long.iter().chain(&self.short) {
            b[i] = w;
        }
        b
    }

    pub fn long_positions(&self) -> Vec<usize> {
        self.long.iter().map(|&(i, _)| i).collect()
    }

    pub fn short_positions(&self) -> Vec<usize> {
        self.short.iter().map(|&(i, _)| i).collect()
    }

    /// Every held position, long leg first.
    pub fn held(&self) -> impl Iterator<Item = usize> + '_ {
        self.long.iter().chain(&self.short).map(|&(i, _)| i)
    }
}

/// Positions sorted by descending score, ties by ascending key.
pub fn rank_order<K: Ord>(scores: &[f64], keys: &[K]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| keys[a].cmp(&keys[b])));
    order
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

/// Legs from scores; ties go to the lower position, so positions are
/// expected in stock-id order.
pub fn generate(scores: &[f64], g: usize, mode: Mode) -> Result<PortfolioPair, PortfolioError> {
    let keys: Vec<usize> = (0..scores.len()).collect();
    generate_by(scores, &keys, g, mode)
}

/// Legs from scores with explicit tie-break keys (usually stock ids).
///
/// The top `g` stocks form the long leg weighted by `softmax(s)`; the bottom
/// `g` form the short leg weighted by `softmax(1 - s)`.
pub fn generate_by<K: Ord>(
    scores: &[f64],
    keys: &[K],
    g: usize,
    mode: Mode,
) -> Result<PortfolioPair, PortfolioError> {
    let n = scores.len();
    if keys.len() != n {
        return Err(PortfolioError::Shape(format!("{} keys for {n} scores", keys.len())));
    }
    let needed = match mode {
        Mode::LongShort => 2 * g,
        Mode::LongOnly => g,
    };
    if g == 0 || needed > n {
        return Err(PortfolioError::LegSize { g, stocks: n, mode });
    }
    if let Some(bad) = scores.iter().position(|s| !s.is_finite()) {
        return Err(PortfolioError::Shape(format!("non-finite score at position {bad}")));
    }
    let order = rank_order(scores, keys);
    let top = &order[..g];
    let long_w = softmax(&top.iter().map(|&i| scores[i]).collect::<Vec<_>>());
    let long = top.iter().copied().zip(long_w).collect();
    let short = match mode {
        Mode::LongOnly => Vec::new(),
        Mode::LongShort => {
            let bottom = &order[n - g..];
            let w = softmax(&bottom.iter().map(|&i| 1.0 - scores[i]).collect::<Vec<_>>());
            bottom.iter().copied().zip(w).collect()
        }
    };
    Ok(PortfolioPair { mode, leg_size: g, num_stocks: n, long, short })
}

/// Period return of the pair given each position's price rising rate.
///
/// Long-short: `sum b+ z - sum b- z`; long-only: `sum b+ z - 1`.
pub fn realize_return(pair: &PortfolioPair, z: &[Option<f64>]) -> Result<f64, PortfolioError> {
    let rate = |i: usize| -> Result<f64, PortfolioError> {
        let v = z.get(i).copied().flatten().ok_or(PortfolioError::MissingReturn(i))?;
        if v <= 0.0 || !v.is_finite() {
            return Err(PortfolioError::NonPositiveReturn { stock: i, value: v });
        }
        Ok(v)
    };
    let mut long = 0.0;
    for &(i, w) in &pair.long {
        long += w * rate(i)?;
    }
    match pair.mode {
        Mode::LongOnly => Ok(long - 1.0),
        Mode::LongShort => {
            let mut short = 0.0;
            for &(i, w) in &pair.short {
                short += w * rate(i)?;
            }
            Ok(long - short)
        }
    }
}

/// Price rising rates `close[t+1] / close[t]` of `stocks` over the month
/// after `t`. A stock with no bar at `t + 1` is treated as sold at its last
/// observed close (rate 1); its panel index is reported in the second list.
pub fn holding_rates(panel: &MarketPanel, stocks: &[usize], t: usize) -> (Vec<f64>, Vec<usize>) {
    let mut delisted = Vec::new();
    let rates = stocks
        .iter()
        .map(|&s| {
            let now = panel.close(s, t).expect("held stock has a bar at decision time");
            match panel.close(s, t + 1) {
                Some(next) => next / now,
                None => {
                    delisted.push(s);
                    1.0
                }
            }
        })
        .collect();
    (rates, delisted)
}

/// Tape handles of the leg weights for a fixed selection, each a `1 x G` row
/// in the pair's leg order. The selection itself is not differentiated.
pub fn leg_weights(
    tape: &mut Tape,
    scores: Var,
    pair: &PortfolioPair,
) -> Result<(Var, Option<Var>), AutodiffError> {
    let g = pair.leg_size;
    let long_s = tape.gather(scores, pair.long_positions(), &[1, g])?;
    let long = tape.softmax(long_s)?;
    let short = match pair.mode {
        Mode::LongOnly => None,
        Mode::LongShort => {
            let s = tape.gather(scores, pair.short_positions(), &[1, g])?;
            let neg = tape.scale(s, -1.0)?;
            let flipped = tape.shift(neg, 1.0)?;
            Some(tape.softmax(flipped)?)
        }
    };
    Ok((long, short))
}

/// The pair's period return recorded on the tape, differentiable through the
/// leg weights; `z` holds one rate per position.
pub fn return_on_tape(
    tape: &mut Tape,
    scores: Var,
    pair: &PortfolioPair,
    z: &[f64],
) -> Result<Var, AutodiffError> {
    let (long, short) = leg_weights(tape, scores, pair)?;
    let zl = tape.leaf(Tensor::vector(pair.long.iter().map(|&(i, _)| z[i]).collect()));
    let zl = tape.reshape(zl, &[1, pair.leg_size])?;
    let lw = tape.mul(long, zl)?;
    let mut total = tape.sum(lw)?;
    match short {
        None => total = tape.shift(total, -1.0)?,
        Some(short) => {
            let zs = tape.leaf(Tensor::vector(pair.short.iter().map(|&(i, _)| z[i]).collect()));
            let zs = tape.reshape(zs, &[1, pair.leg_size])?;
            let sw = tape.mul(short, zs)?;
            let s = tape.sum(sw)?;
            total = tape.sub(total, s)?;
        }
    }
    Ok(total)
}

/// `sum log b` over every held stock, recorded on the tape.
pub fn log_likelihood(tape: &mut Tape, scores: Var, pair: &PortfolioPair) -> Result<Var, AutodiffError> {
    let (long, short) = leg_weights(tape, scores, pair)?;
    let ll = tape.log(long)?;
    let mut total = tape.sum(ll)?;
    if let Some(short) = short {
        let ls = tape.log(short)?;
        let s = tape.sum(ls)?;
        total = tape.add(total, s)?;
    }
    Ok(total)
}
