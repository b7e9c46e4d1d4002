//! Input sensitivities of winner scores: the gradient of each stock's score
//! with respect to its own standardized window, averaged over stocks and months.

use std::fmt::Write as _;
use std::ops::Range;

use rayon::prelude::*;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor};
use crate::data::{format_float, MarketPanel};
use crate::features::{build_windows, FeatureError, FEATURE_NAMES, NUM_FEATURES};
use crate::policy::{caan_forward, encode_histories, winner_scores, PolicyError, PolicyInput, PolicyParams};

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("no decision month in {0:?} has at least 2 eligible stocks")]
    EmptyRange(Range<usize>),
    #[error("stock position {stock} out of range for {stocks} stocks")]
    NoSuchStock { stock: usize, stocks: usize },
    #[error("cannot merge reports with window lengths {0} and {1}")]
    WindowMismatch(usize, usize),
}

/// `K x F` gradient of stock `stock`'s score with respect to its own window,
/// rows oldest first; every other stock's window is held fixed.
pub fn input_sensitivity(
    params: &PolicyParams,
    input: &PolicyInput,
    stock: usize,
) -> Result<Tensor, InterpretError> {
    input.validate()?;
    if stock >= input.num_stocks() {
        return Err(InterpretError::NoSuchStock { stock, stocks: input.num_stocks() });
    }
    let mut tape = Tape::new();
    let pv = params.record(&mut tape);
    let steps: Vec<_> = input.steps.iter().map(|s| tape.leaf(s.clone())).collect();
    let reprs = encode_histories(&mut tape, &pv, params.config, &steps)?;
    let attended = caan_forward(&mut tape, &pv, params.config, reprs, &input.ranks)?;
    let scores = winner_scores(&mut tape, &pv, attended)?;
    let si = tape.gather(scores, vec![stock], &[1])?;
    let grads = tape.backward(si, 1.0)?;
    let rows = steps.iter().flat_map(|&v| grads.wrt(v).row(stock).to_vec()).collect();
    Ok(Tensor::matrix(input.window_len(), NUM_FEATURES, rows))
}

/// [`input_sensitivity`] for every stock at once.
///
/// A stock's history encoding depends only on its own window, so the chain
/// rule splits at the encodings: `I` cheap reverse passes through the
/// cross-stock attention give `ds_i/dr_i`, and one pass through the encoder
/// seeded with those rows yields every own-window gradient.
pub fn all_sensitivities(params: &PolicyParams, input: &PolicyInput) -> Result<Vec<Tensor>, InterpretError> {
    input.validate()?;
    let n = input.num_stocks();
    let hidden = params.config.hidden;

    let mut enc = Tape::new();
    let pv = params.record(&mut enc);
    let steps: Vec<_> = input.steps.iter().map(|s| enc.leaf(s.clone())).collect();
    let reprs = encode_histories(&mut enc, &pv, params.config, &steps)?;

    let mut head = Tape::new();
    let hv = params.record(&mut head);
    let r = head.leaf(enc.value(reprs).clone());
    let attended = caan_forward(&mut head, &hv, params.config, r, &input.ranks)?;
    let scores = winner_scores(&mut head, &hv, attended)?;
    let mut own = Vec::with_capacity(n * hidden);
    for i in 0..n {
        let si = head.gather(scores, vec![i], &[1])?;
        own.extend_from_slice(head.backward(si, 1.0)?.wrt(r).row(i));
    }

    let seed = enc.leaf(Tensor::matrix(n, hidden, own));
    let weighted = enc.mul(reprs, seed)?;
    let root = enc.sum(weighted)?;
    let grads = enc.backward(root, 1.0)?;
    let step_grads: Vec<Tensor> = steps.iter().map(|&v| grads.wrt(v)).collect();
    Ok((0..n)
        .map(|i| {
            let rows = step_grads.iter().flat_map(|g| g.row(i).to_vec()).collect();
            Tensor::matrix(input.window_len(), NUM_FEATURES, rows)
        })
        .collect())
}

/// Average sensitivities over (month, stock) samples.
///
/// `delta[f][j]` is the mean gradient for feature `f` at lag `j + 1`, where
/// lag 1 is the most recent window row (the month ending at the decision
/// time) and lag `K` the oldest.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    pub window: usize,
    pub delta: Vec<Vec<f64>>,
    pub samples: usize,
}

impl SensitivityReport {
    fn empty(window: usize) -> Self {
        Self { window, delta: vec![vec![0.0; window]; NUM_FEATURES], samples: 0 }
    }

    /// Adds one `K x F` sensitivity matrix (rows oldest first) to a running sum.
    fn accumulate(&mut self, sens: &Tensor) {
        let k = self.window;
        for row in 0..k {
            let lag = k - 1 - row;
            for f in 0..NUM_FEATURES {
                self.delta[f][lag] += sens.at(row, f);
            }
        }
        self.samples += 1;
    }

    fn finish(mut self) -> Self {
        let n = self.samples.max(1) as f64;
        for row in &mut self.delta {
            for x in row.iter_mut() {
                *x /= n;
            }
        }
        self
    }

    /// Mean over lags, per feature.
    pub fn feature_means(&self) -> Vec<f64> {
        self.delta.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect()
    }

    pub fn feature(&self, name: &str) -> Option<&[f64]> {
        FEATURE_NAMES.iter().position(|&n| n == name).map(|i| self.delta[i].as_slice())
    }

    /// Sample-count weighted combination of two reports.
    pub fn merge(&self, other: &SensitivityReport) -> Result<Self, InterpretError> {
        if self.window != other.window {
            return Err(InterpretError::WindowMismatch(self.window, other.window));
        }
        let total = self.samples + other.samples;
        let (wa, wb) = if total == 0 {
            (0.0, 0.0)
        } else {
            (self.samples as f64 / total as f64, other.samples as f64 / total as f64)
        };
        let delta = self
            .delta
            .iter()
            .zip(&other.delta)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect())
            .collect();
        Ok(Self { window: self.window, delta, samples: total })
    }

    /// Header `feature,lag_1,...,lag_K,mean`, then one row per feature.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature");
        for lag in 1..=self.window {
            let _ = write!(out, ",lag_{lag}");
        }
        out.push_str(",mean\n");
        for ((name, row), mean) in FEATURE_NAMES.iter().zip(&self.delta).zip(self.feature_means()) {
            out.push_str(name);
            for x in row {
                let _ = write!(out, ",{}", format_float(*x));
            }
            let _ = writeln!(out, ",{}", format_float(mean));
        }
        out
    }
}

/// Sensitivity report over a set of policy inputs.
pub fn report_from_inputs(
    params: &PolicyParams,
    inputs: &[PolicyInput],
) -> Result<SensitivityReport, InterpretError> {
    let window = inputs.first().map_or(0, PolicyInput::window_len);
    let per_input = inputs
        .par_iter()
        .map(|input| all_sensitivities(params, input))
        .collect::<Result<Vec<_>, _>>()?;
    let mut report = SensitivityReport::empty(window);
    for sens in per_input.iter().flatten() {
        report.accumulate(sens);
    }
    Ok(report.finish())
}

/// Averages sensitivities over every eligible stock at every decision month
/// in `range` (panel indices) with at least 2 eligible stocks.
pub fn average_sensitivity(
    panel: &MarketPanel,
    params: &PolicyParams,
    window: usize,
    range: Range<usize>,
) -> Result<SensitivityReport, InterpretError> {
    let inputs: Vec<PolicyInput> = range
        .clone()
        .filter_map(|t| build_windows(panel, t, window).ok())
        .filter(|ws| ws.len() >= 2)
        .map(|ws| PolicyInput::from_windows(&ws))
        .collect();
    if inputs.is_empty() {
        return Err(InterpretError::EmptyRange(range));
    }
    report_from_inputs(params, &inputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{ix, policy_forward, PolicyConfig};
    use crate::rng::{stream, Stream};
    use rand::Rng;

    fn cfg() -> PolicyConfig {
        PolicyConfig { hidden: 5, embed: 3, lookup_cols: 6, quant: 2 }
    }

    fn input(stocks: usize, k: usize, seed: u64) -> PolicyInput {
        let mut rng = stream(seed, Stream::Data);
        let windows: Vec<Tensor> = (0..stocks)
            .map(|_| Tensor::matrix(k, NUM_FEATURES, (0..k * NUM_FEATURES).map(|_| rng.random_range(-2.0..2.0)).collect()))
            .collect();
        PolicyInput::from_stock_windows(&windows, (1..=stocks).rev().collect()).unwrap()
    }

    fn params(seed: u64) -> PolicyParams {
        PolicyParams::init(cfg(), &mut stream(seed, Stream::Init)).unwrap()
    }

    #[test]
    fn constant_scores_give_zero_sensitivity() {
        let mut p = params(1);
        p.tensors[ix::SCORE_W] = Tensor::zeros(&[5, 1]);
        let x = input(4, 3, 2);
        let s = input_sensitivity(&p, &x, 1).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
        let rep = report_from_inputs(&p, &[x]).unwrap();
        assert!(rep.delta.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn batched_matches_per_stock() {
        let p = params(3);
        let x = input(5, 4, 4);
        let all = all_sensitivities(&p, &x).unwrap();
        for (i, s) in all.iter().enumerate() {
            let single = input_sensitivity(&p, &x, i).unwrap();
            assert!(s.max_abs_diff(&single) < 1e-13);
        }
    }

    #[test]
    fn matches_finite_differences() {
        let p = params(5);
        let x = input(4, 3, 6);
        let stock = 2;
        let sens = input_sensitivity(&p, &x, stock).unwrap();
        let mut rng = stream(7, Stream::Sampling);
        for _ in 0..20 {
            let (row, f) = (rng.random_range(0..3), rng.random_range(0..NUM_FEATURES));
            let eps = 1e-6;
            let eval = |d: f64| {
                let mut y = x.clone();
                y.steps[row].data_mut()[stock * NUM_FEATURES + f] += d;
                policy_forward(&p, &y).unwrap()[stock]
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let analytic = sens.at(row, f);
            assert!((analytic - numeric).abs() / analytic.abs().max(1.0) <= 1e-4);
        }
    }

    #[test]
    fn most_recent_row_is_lag_one() {
        let p = params(8);
        let x = input(3, 4, 9);
        let sens = input_sensitivity(&p, &x, 0).unwrap();
        let rep = report_from_inputs(&p, std::slice::from_ref(&x)).unwrap();
        // Sample mean over 3 stocks; compare stock 0's contribution alone.
        let all = all_sensitivities(&p, &x).unwrap();
        for f in 0..NUM_FEATURES {
            let mean_recent: f64 = all.iter().map(|s| s.at(3, f)).sum::<f64>() / 3.0;
            assert!((rep.delta[f][0] - mean_recent).abs() < 1e-15);
        }
        // Perturbing the last row moves the score by the last-row gradient.
        let eps = 1e-6;
        let mut y = x.clone();
        y.steps[3].data_mut()[0] += eps;
        let ds = (policy_forward(&p, &y).unwrap()[0] - policy_forward(&p, &x).unwrap()[0]) / eps;
        assert!((ds - sens.at(3, 0)).abs() < 1e-5);
    }

    #[test]
    fn shape_contract_with_duplicate() {
        let p = params(10);
        let x = input(3, 4, 11);
        let mut windows: Vec<Tensor> = (0..3).map(|i| x.stock_window(i)).collect();
        windows.push(x.stock_window(1));
        let y = PolicyInput::from_stock_windows(&windows, vec![1, 2, 3, 4]).unwrap();
        assert_eq!(input_sensitivity(&p, &y, 1).unwrap().shape(), &[4, NUM_FEATURES]);
        assert!(input_sensitivity(&p, &y, 4).is_err());
    }

    #[test]
    fn sum_of_heads_is_sum_of_sensitivities() {
        let a = params(19);
        let mut b = a.clone();
        b.tensors[ix::SCORE_W] = params(20).tensors[ix::SCORE_W].clone();
        b.tensors[ix::SCORE_B] = Tensor::matrix(1, 1, vec![0.3]);
        let x = input(4, 3, 21);
        let stock = 3;

        let mut tape = Tape::new();
        let pv = a.record(&mut tape);
        let steps: Vec<_> = x.steps.iter().map(|s| tape.leaf(s.clone())).collect();
        let reprs = encode_histories(&mut tape, &pv, a.config, &steps).unwrap();
        let attended = caan_forward(&mut tape, &pv, a.config, reprs, &x.ranks).unwrap();
        let sa = winner_scores(&mut tape, &pv, attended).unwrap();
        let mut pb = pv.clone();
        pb.vars[ix::SCORE_W] = tape.leaf(b.tensors[ix::SCORE_W].clone());
        pb.vars[ix::SCORE_B] = tape.leaf(b.tensors[ix::SCORE_B].clone());
        let sb = winner_scores(&mut tape, &pb, attended).unwrap();
        let both = tape.add(sa, sb).unwrap();
        let root = tape.gather(both, vec![stock], &[1]).unwrap();
        let grads = tape.backward(root, 1.0).unwrap();

        let ga = input_sensitivity(&a, &x, stock).unwrap();
        let gb = input_sensitivity(&b, &x, stock).unwrap();
        for (k, &v) in steps.iter().enumerate() {
            for f in 0..NUM_FEATURES {
                let joint = grads.wrt(v).at(stock, f);
                assert!((joint - ga.at(k, f) - gb.at(k, f)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn merge_is_weighted_mean() {
        let p = params(12);
        let a = input(3, 2, 13);
        let b = input(5, 2, 14);
        let ra = report_from_inputs(&p, std::slice::from_ref(&a)).unwrap();
        let rb = report_from_inputs(&p, std::slice::from_ref(&b)).unwrap();
        let both = report_from_inputs(&p, &[a, b]).unwrap();
        let merged = ra.merge(&rb).unwrap();
        assert_eq!(merged.samples, 8);
        for (x, y) in merged.delta.iter().flatten().zip(both.delta.iter().flatten()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_windows_average_to_one_value() {
        let p = params(15);
        let one = input(1, 3, 16).stock_window(0);
        let x = PolicyInput::from_stock_windows(&vec![one; 4], vec![1; 4]).unwrap();
        let single = input_sensitivity(&p, &x, 0).unwrap();
        let rep = report_from_inputs(&p, &[x]).unwrap();
        for f in 0..NUM_FEATURES {
            for lag in 0..3 {
                assert!((rep.delta[f][lag] - single.at(2 - lag, f)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn csv_layout() {
        let p = params(17);
        let rep = report_from_inputs(&p, &[input(3, 2, 18)]).unwrap();
        let csv = rep.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "feature,lag_1,lag_2,mean");
        assert_eq!(lines.len(), 1 + NUM_FEATURES);
        assert!(lines[2].starts_with("vol,"));
    }
}
