//! Sharpe ratio, cumulative wealth, drawdown and the annualized report.

use std::fmt::Write as _;

use thiserror::Error;

use crate::data::format_float;

pub const DEFAULT_TC: f64 = 0.001;
pub const MONTHS_PER_YEAR: f64 = 12.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("need at least 2 returns, got {0}")]
    TooFewReturns(usize),
    #[error("zero volatility")]
    ZeroVolatility,
    #[error("wealth factor {factor} at period {period} is not positive")]
    Ruin { period: usize, factor: f64 },
    #[error("non-finite return at period {0}")]
    NonFinite(usize),
}

fn check(returns: &[f64]) -> Result<(), MetricsError> {
    if returns.len() < 2 {
        return Err(MetricsError::TooFewReturns(returns.len()));
    }
    match returns.iter().position(|r| !r.is_finite()) {
        Some(i) => Err(MetricsError::NonFinite(i)),
        None => Ok(()),
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation; exactly 0 for a constant series.
pub fn volatility(returns: &[f64]) -> f64 {
    if returns.windows(2).all(|w| w[0] == w[1]) {
        return 0.0;
    }
    let m = mean(returns);
    (returns.iter().map(|r| (r - m).powi(2)).sum::<f64>() / returns.len() as f64).sqrt()
}

/// Mean return net of the per-period cost.
pub fn mean_net_return(returns: &[f64], tc: f64) -> f64 {
    mean(returns) - tc
}

/// `(mean(R - tc) - theta) / std(R)`.
pub fn sharpe(returns: &[f64], theta: f64, tc: f64) -> Result<f64, MetricsError> {
    check(returns)?;
    let v = volatility(returns);
    if v == 0.0 {
        return Err(MetricsError::ZeroVolatility);
    }
    Ok((mean_net_return(returns, tc) - theta) / v)
}

/// `wealth[0] = 1`, `wealth[t] = prod_{tau <= t} (R_tau + 1 - tc)`.
pub fn cumulative_wealth(returns: &[f64], tc: f64) -> Result<Vec<f64>, MetricsError> {
    let mut wealth = Vec::with_capacity(returns.len() + 1);
    wealth.push(1.0);
    let mut w = 1.0;
    for (period, r) in returns.iter().enumerate() {
        let factor = r + 1.0 - tc;
        if !factor.is_finite() {
            return Err(MetricsError::NonFinite(period));
        }
        if factor <= 0.0 {
            return Err(MetricsError::Ruin { period, factor });
        }
        w *= factor;
        wealth.push(w);
    }
    Ok(wealth)
}

/// Largest fractional fall from a running peak.
pub fn max_drawdown(wealth: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst: f64 = 0.0;
    for &w in wealth {
        peak = peak.max(w);
        worst = worst.max((peak - w) / peak);
    }
    worst
}

/// Root mean square of `min(R_t, 0)` over all periods.
pub fn downside_deviation(returns: &[f64]) -> f64 {
    (returns.iter().map(|r| r.min(0.0).powi(2)).sum::<f64>() / returns.len() as f64).sqrt()
}

/// Evaluation summary of a return series.
///
/// `cr` is `None` when there is no drawdown and `ddr` is `None` when no
/// return is negative; both then have a zero denominator.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceReport {
    pub returns: Vec<f64>,
    pub wealth: Vec<f64>,
    pub theta: f64,
    pub tc: f64,
    pub periods_per_year: f64,
    pub sharpe: f64,
    pub apr: f64,
    pub avol: f64,
    pub asr: f64,
    pub mdd: f64,
    pub cr: Option<f64>,
    pub ddr: Option<f64>,
}

/// Column order of [`PerformanceReport::csv_row`].
pub const REPORT_COLUMNS: [&str; 13] = [
    "periods",
    "periods_per_year",
    "theta",
    "tc",
    "sharpe",
    "apr",
    "avol",
    "asr",
    "mdd",
    "cr",
    "ddr",
    "final_wealth",
    "mean_return",
];

pub fn report(
    returns: &[f64],
    theta: f64,
    tc: f64,
    periods_per_year: f64,
) -> Result<PerformanceReport, MetricsError> {
    let h = sharpe(returns, theta, tc)?;
    let wealth = cumulative_wealth(returns, tc)?;
    let apr = mean_net_return(returns, tc) * periods_per_year;
    let avol = volatility(returns) * periods_per_year.sqrt();
    let mdd = max_drawdown(&wealth);
    let dd = downside_deviation(returns);
    Ok(PerformanceReport {
        returns: returns.to_vec(),
        wealth,
        theta,
        tc,
        periods_per_year,
        sharpe: h,
        apr,
        avol,
        asr: apr / avol,
        mdd,
        cr: (mdd > 0.0).then(|| apr / mdd),
        ddr: (dd > 0.0).then(|| apr / dd),
    })
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "degenerate".to_string(), format_float)
}

impl PerformanceReport {
    pub fn final_wealth(&self) -> f64 {
        *self.wealth.last().expect("wealth starts at 1")
    }

    fn values(&self) -> [String; 13] {
        [
            self.returns.len().to_string(),
            format_float(self.periods_per_year),
            format_float(self.theta),
            format_float(self.tc),
            format_float(self.sharpe),
            format_float(self.apr),
            format_float(self.avol),
            format_float(self.asr),
            format_float(self.mdd),
            opt(self.cr),
            opt(self.ddr),
            format_float(self.final_wealth()),
            format_float(mean(&self.returns)),
        ]
    }

    /// One `key=value` line per field, in [`REPORT_COLUMNS`] order.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (k, v) in REPORT_COLUMNS.iter().zip(self.values()) {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn csv_header() -> String {
        REPORT_COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        self.values().join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_mdd(w: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..w.len() {
            for j in i..w.len() {
                let peak = w[..=i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                worst = worst.max((peak - w[j]) / peak);
            }
        }
        worst
    }

    #[test]
    fn two_point_sharpe() {
        assert!((sharpe(&[0.0, 0.2], 0.0, 0.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(sharpe(&[0.05, 0.05, 0.05], 0.0, 0.0), Err(MetricsError::ZeroVolatility));
        let r = [0.01, 0.03, -0.02];
        let a = mean_net_return(&r, 0.001);
        assert!(sharpe(&r, a, 0.001).unwrap().abs() < 1e-15);
        assert_eq!(sharpe(&[0.1], 0.0, 0.0), Err(MetricsError::TooFewReturns(1)));
    }

    #[test]
    fn wealth_examples() {
        assert_eq!(cumulative_wealth(&[0.0; 3], 0.0).unwrap(), vec![1.0; 4]);
        let w = cumulative_wealth(&[0.1, -0.1], 0.0).unwrap();
        assert!((w[2] - 0.99).abs() < 1e-15);
        let w = cumulative_wealth(&[0.01; 12], 0.001).unwrap();
        assert!((w[12] - 1.009f64.powi(12)).abs() < 1e-12);
        assert!((w[12] - 1.1135).abs() < 1e-4);
        assert!(matches!(cumulative_wealth(&[-1.0], 0.0), Err(MetricsError::Ruin { period: 0, .. })));
    }

    #[test]
    fn drawdown_examples() {
        assert_eq!(max_drawdown(&[1.0, 1.1, 1.2]), 0.0);
        assert_eq!(max_drawdown(&[1.0]), 0.0);
        let w = [1.0, 1.2, 0.9, 1.5];
        assert_eq!(max_drawdown(&w), brute_mdd(&w));
        assert!((max_drawdown(&w) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn report_example() {
        let r = report(&[0.2, -0.1], 0.0, 0.0, 12.0).unwrap();
        assert!((r.apr - 0.6).abs() < 1e-12);
        assert!((downside_deviation(&[0.2, -0.1]) - 0.005f64.sqrt()).abs() < 1e-15);
        assert!((r.ddr.unwrap() - 8.485).abs() < 1e-3);
        assert!((r.asr - r.sharpe * 12f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.wealth.len(), 3);
    }

    #[test]
    fn degenerate_ratios_are_flagged() {
        let r = report(&[0.01, 0.02, 0.03], 0.0, 0.0, 12.0).unwrap();
        assert_eq!(r.ddr, None);
        assert_eq!(r.cr, None);
        assert!(r.to_key_values().contains("cr=degenerate"));
    }

    #[test]
    fn serializations_agree() {
        let r = report(&[0.05, -0.02, 0.01, 0.03], 0.0, 0.001, 12.0).unwrap();
        let kv = r.to_key_values();
        let vals: Vec<String> = kv.lines().map(|l| l.split_once('=').unwrap().1.to_string()).collect();
        assert_eq!(vals.join(","), r.csv_row());
        assert_eq!(PerformanceReport::csv_header().split(',').count(), vals.len());
    }
}
