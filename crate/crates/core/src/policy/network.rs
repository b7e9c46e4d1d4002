//! Forward pass on the tape: LSTM with history attention per stock, then
//! rank-modulated attention across stocks and the score head.

use super::params::{ix, ParamVars, PolicyParams};
use super::{PolicyConfig, PolicyError};
use crate::autodiff::{Tape, Tensor, Var};
use crate::features::{WindowSet, NUM_FEATURES};

/// Network input for one decision month: the windows of all `I` stocks laid
/// out step by step, plus last-period return ranks in the same stock order.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyInput {
    /// `K` matrices of shape `I x F`; entry `k` holds row `k` of every window.
    pub steps: Vec<Tensor>,
    pub ranks: Vec<usize>,
}

impl PolicyInput {
    pub fn from_windows(ws: &WindowSet) -> Self {
        let k = ws.window_len();
        let steps = (0..k)
            .map(|step| {
                let data = ws
                    .windows
                    .iter()
                    .flat_map(|w| w.rows[step].iter().copied())
                    .collect();
                Tensor::matrix(ws.len(), NUM_FEATURES, data)
            })
            .collect();
        Self { steps, ranks: ws.ranks.clone() }
    }

    /// Builds the input from per-stock `K x F` windows.
    pub fn from_stock_windows(windows: &[Tensor], ranks: Vec<usize>) -> Result<Self, PolicyError> {
        let first = windows.first().ok_or(PolicyError::TooFewStocks(0))?;
        let k = first.rows();
        for w in windows {
            if w.shape() != [k, NUM_FEATURES] {
                return Err(PolicyError::Shape(format!(
                    "window shape {:?}, expected [{k}, {NUM_FEATURES}]",
                    w.shape()
                )));
            }
        }
        let steps = (0..k)
            .map(|step| {
                let data = windows.iter().flat_map(|w| w.row(step).iter().copied()).collect();
                Tensor::matrix(windows.len(), NUM_FEATURES, data)
            })
            .collect();
        Ok(Self { steps, ranks })
    }

    pub fn num_stocks(&self) -> usize {
        self.ranks.len()
    }

    pub fn window_len(&self) -> usize {
        self.steps.len()
    }

    /// `K x F` window of one stock.
    pub fn stock_window(&self, stock: usize) -> Tensor {
        let data = self.steps.iter().flat_map(|s| s.row(stock).iter().copied()).collect();
        Tensor::matrix(self.steps.len(), NUM_FEATURES, data)
    }

    /// Reorders stocks so that new position `i` holds old stock `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let steps = self
            .steps
            .iter()
            .map(|s| {
                let data = perm.iter().flat_map(|&p| s.row(p).iter().copied()).collect();
                Tensor::matrix(perm.len(), NUM_FEATURES, data)
            })
            .collect();
        Self {
            steps,
            ranks: perm.iter().map(|&p| self.ranks[p]).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let i = self.ranks.len();
        if i < 2 {
            return Err(PolicyError::TooFewStocks(i));
        }
        if self.steps.is_empty() {
            return Err(PolicyError::Shape("empty look-back window".into()));
        }
        for s in &self.steps {
            if s.shape() != [i, NUM_FEATURES] {
                return Err(PolicyError::Shape(format!(
                    "step shape {:?}, expected [{i}, {NUM_FEATURES}]",
                    s.shape()
                )));
            }
            if !s.all_finite() {
                return Err(PolicyError::Shape("non-finite feature".into()));
            }
        }
        if self.ranks.contains(&0) {
            return Err(PolicyError::Shape("ranks start at 1".into()));
        }
        Ok(())
    }
}

/// Quantized rank distance `floor(|c_i - c_j| / q)`, clamped to the lookup width.
pub fn rank_distance(ci: usize, cj: usize, quant: usize, lookup_cols: usize) -> usize {
    (ci.abs_diff(cj) / quant).min(lookup_cols - 1)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Prior coefficient for one pair of ranks, evaluated directly.
pub fn prior_weight(ci: usize, cj: usize, params: &PolicyParams) -> f64 {
    let cfg = params.config;
    let d = rank_distance(ci, cj, cfg.quant, cfg.lookup_cols);
    let lookup = &params.tensors[ix::LOOKUP];
    let w = params.tensors[ix::PRIOR_W].data();
    let dot: f64 = (0..cfg.embed).map(|e| w[e] * lookup.at(e, d)).sum();
    sigmoid(dot)
}

/// Runs the LSTM over `steps` (each `I x F`) from zero state; returns every
/// hidden state `h_1..h_K`, each `I x H`.
pub fn lstm_encode(
    tape: &mut Tape,
    pv: &ParamVars,
    hidden: usize,
    steps: &[Var],
) -> Result<Vec<Var>, PolicyError> {
    let first = *steps.first().ok_or_else(|| PolicyError::Shape("empty look-back window".into()))?;
    let stocks = tape.value(first).rows();
    let mut h = tape.leaf(Tensor::zeros(&[stocks, hidden]));
    let mut c = tape.leaf(Tensor::zeros(&[stocks, hidden]));
    let (w, b) = (pv.get(ix::LSTM_W), pv.get(ix::LSTM_B));
    let mut states = Vec::with_capacity(steps.len());
    for &x in steps {
        let xh = tape.concat(&[x, h])?;
        let pre = tape.matmul(xh, w)?;
        let z = tape.add_row(pre, b)?;
        let zi = tape.slice(z, 0, hidden)?;
        let zf = tape.slice(z, hidden, hidden)?;
        let zg = tape.slice(z, 2 * hidden, hidden)?;
        let zo = tape.slice(z, 3 * hidden, hidden)?;
        let i = tape.sigmoid(zi)?;
        let f = tape.sigmoid(zf)?;
        let g = tape.tanh(zg)?;
        let o = tape.sigmoid(zo)?;
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, g)?;
        c = tape.add(keep, write)?;
        let tc = tape.tanh(c)?;
        h = tape.mul(o, tc)?;
        states.push(h);
    }
    Ok(states)
}

/// Attention of the last hidden state over all of them:
/// `alpha_k = tanh(h_k W1 + h_K W2) v`, `r = sum_k softmax(alpha)_k h_k`.
pub fn history_attention(tape: &mut Tape, pv: &ParamVars, states: &[Var]) -> Result<Var, PolicyError> {
    let last = *states.last().ok_or_else(|| PolicyError::Shape("no hidden states".into()))?;
    let query = tape.matmul(last, pv.get(ix::ATT_W2))?;
    let mut logits = Vec::with_capacity(states.len());
    for &h in states {
        let key = tape.matmul(h, pv.get(ix::ATT_W1))?;
        let joint = tape.add(key, query)?;
        let act = tape.tanh(joint)?;
        logits.push(tape.matmul(act, pv.get(ix::ATT_V))?);
    }
    let alpha = tape.concat(&logits)?;
    let weights = tape.softmax(alpha)?;
    let mut r: Option<Var> = None;
    for (k, &h) in states.iter().enumerate() {
        let wk = tape.slice(weights, k, 1)?;
        let term = tape.mul_col(h, wk)?;
        r = Some(match r {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok(r.expect("at least one state"))
}

/// `I x I` matrix of prior coefficients for the given ranks.
pub fn prior_matrix(
    tape: &mut Tape,
    pv: &ParamVars,
    config: PolicyConfig,
    ranks: &[usize],
) -> Result<Var, PolicyError> {
    let proj = tape.matmul(pv.get(ix::PRIOR_W), pv.get(ix::LOOKUP))?;
    let per_distance = tape.sigmoid(proj)?;
    let n = ranks.len();
    let mut indices = Vec::with_capacity(n * n);
    for &ci in ranks {
        for &cj in ranks {
            indices.push(rank_distance(ci, cj, config.quant, config.lookup_cols));
        }
    }
    Ok(tape.gather(per_distance, indices, &[n, n])?)
}

/// Cross-stock attention: `beta = psi * (Q K^T) / sqrt(H)`, rows softmaxed,
/// `a = softmax(beta) V`. Every stock attends to all stocks, itself included.
pub fn caan_forward(
    tape: &mut Tape,
    pv: &ParamVars,
    config: PolicyConfig,
    reprs: Var,
    ranks: &[usize],
) -> Result<Var, PolicyError> {
    let stocks = tape.value(reprs).rows();
    if stocks < 2 {
        return Err(PolicyError::TooFewStocks(stocks));
    }
    if ranks.len() != stocks {
        return Err(PolicyError::Shape(format!(
            "{} ranks for {stocks} stocks",
            ranks.len()
        )));
    }
    let q = tape.matmul(reprs, pv.get(ix::W_Q))?;
    let k = tape.matmul(reprs, pv.get(ix::W_K))?;
    let v = tape.matmul(reprs, pv.get(ix::W_V))?;
    let kt = tape.transpose(k)?;
    let raw = tape.matmul(q, kt)?;
    let psi = prior_matrix(tape, pv, config, ranks)?;
    let modulated = tape.mul(raw, psi)?;
    let beta = tape.scale(modulated, 1.0 / (config.hidden as f64).sqrt())?;
    let attn = tape.softmax(beta)?;
    Ok(tape.matmul(attn, v)?)
}

/// `s_i = sigmoid(a_i w_s + e_s)`, as an `I x 1` column.
pub fn winner_scores(tape: &mut Tape, pv: &ParamVars, attended: Var) -> Result<Var, PolicyError> {
    let logits = tape.matmul(attended, pv.get(ix::SCORE_W))?;
    let biased = tape.add_row(logits, pv.get(ix::SCORE_B))?;
    Ok(tape.sigmoid(biased)?)
}

/// Per-stock representation `r` (`I x H`) from the raw input steps.
pub fn encode_histories(
    tape: &mut Tape,
    pv: &ParamVars,
    config: PolicyConfig,
    steps: &[Var],
) -> Result<Var, PolicyError> {
    let states = lstm_encode(tape, pv, config.hidden, steps)?;
    history_attention(tape, pv, &states)
}

/// A recorded forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub tape: Tape,
    pub params: ParamVars,
    /// Leaf handles of the input steps.
    pub steps: Vec<Var>,
    /// `I x H` history representations.
    pub reprs: Var,
    /// `I x 1` winner scores.
    pub scores: Var,
}

impl Forward {
    pub fn score_values(&self) -> Vec<f64> {
        self.tape.value(self.scores).data().to_vec()
    }
}

/// Records the full network on a fresh tape.
pub fn record_forward(params: &PolicyParams, input: &PolicyInput) -> Result<Forward, PolicyError> {
    input.validate()?;
    let mut tape = Tape::new();
    let pv = params.record(&mut tape);
    let steps: Vec<Var> = input.steps.iter().map(|s| tape.leaf(s.clone())).collect();
    let reprs = encode_histories(&mut tape, &pv, params.config, &steps)?;
    let attended = caan_forward(&mut tape, &pv, params.config, reprs, &input.ranks)?;
    let scores = winner_scores(&mut tape, &pv, attended)?;
    Ok(Forward { tape, params: pv, steps, reprs, scores })
}

/// Winner score of every stock, in input order; each lies in `(0, 1)`.
pub fn policy_forward(params: &PolicyParams, input: &PolicyInput) -> Result<Vec<f64>, PolicyError> {
    Ok(record_forward(params, input)?.score_values())
}
