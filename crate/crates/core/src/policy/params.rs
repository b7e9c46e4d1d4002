//! Learnable tensors of the policy, their initialization and checkpoints.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use super::{PolicyConfig, PolicyError};
use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::features::NUM_FEATURES;

pub const NUM_TENSORS: usize = 12;

/// Tensor names in storage order; checkpoints and flat vectors follow it.
pub const PARAM_NAMES: [&str; NUM_TENSORS] = [
    "lstm_w", "lstm_b", "att_w1", "att_w2", "att_v", "w_q", "w_k", "w_v", "score_w", "score_b",
    "lookup", "prior_w",
];

const CHECKPOINT_MAGIC: &str = "bwsl-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Every learnable tensor, shared by all stocks.
///
/// Shapes (row-vector convention, `x W`):
/// - `lstm_w`: `(F + H) x 4H`, gate blocks in order input, forget, candidate, output
/// - `lstm_b`: `1 x 4H`
/// - `att_w1`, `att_w2`: `H x H`; `att_v`: `H x 1`
/// - `w_q`, `w_k`, `w_v`: `H x H`
/// - `score_w`: `H x 1`; `score_b`: `1 x 1`
/// - `lookup`: `E x L_cols`; `prior_w`: `1 x E`
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub config: PolicyConfig,
    pub tensors: Vec<Tensor>,
}

/// Index of each tensor in [`PolicyParams::tensors`].
pub mod ix {
    pub const LSTM_W: usize = 0;
    pub const LSTM_B: usize = 1;
    pub const ATT_W1: usize = 2;
    pub const ATT_W2: usize = 3;
    pub const ATT_V: usize = 4;
    pub const W_Q: usize = 5;
    pub const W_K: usize = 6;
    pub const W_V: usize = 7;
    pub const SCORE_W: usize = 8;
    pub const SCORE_B: usize = 9;
    pub const LOOKUP: usize = 10;
    pub const PRIOR_W: usize = 11;
}

impl PolicyConfig {
    pub fn shapes(&self) -> [[usize; 2]; NUM_TENSORS] {
        let (f, h, e, l) = (NUM_FEATURES, self.hidden, self.embed, self.lookup_cols);
        [
            [f + h, 4 * h],
            [1, 4 * h],
            [h, h],
            [h, h],
            [h, 1],
            [h, h],
            [h, h],
            [h, h],
            [h, 1],
            [1, 1],
            [e, l],
            [1, e],
        ]
    }

    fn fan_in(&self, which: usize) -> usize {
        match which {
            ix::LSTM_W => NUM_FEATURES + self.hidden,
            ix::LOOKUP | ix::PRIOR_W => self.embed,
            _ => self.hidden,
        }
    }
}

impl PolicyParams {
    pub fn zeros(config: PolicyConfig) -> Self {
        let tensors = config.shapes().iter().map(|s| Tensor::zeros(s)).collect();
        Self { config, tensors }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, forget-gate bias 1, other biases 0.
    pub fn init(config: PolicyConfig, rng: &mut impl Rng) -> Result<Self, PolicyError> {
        config.validate()?;
        let mut p = Self::zeros(config);
        for which in 0..NUM_TENSORS {
            if matches!(which, ix::LSTM_B | ix::SCORE_B) {
                continue;
            }
            let bound = 1.0 / (config.fan_in(which) as f64).sqrt();
            for x in p.tensors[which].data_mut() {
                *x = rng.random_range(-bound..bound);
            }
        }
        let h = config.hidden;
        for x in &mut p.tensors[ix::LSTM_B].data_mut()[h..2 * h] {
            *x = 1.0;
        }
        Ok(p)
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        PARAM_NAMES.iter().position(|&n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        PARAM_NAMES.iter().position(|&n| n == name).map(|i| &mut self.tensors[i])
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), PolicyError> {
        if flat.len() != self.num_params() {
            return Err(PolicyError::Shape(format!(
                "flat vector has {} values, parameters need {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn from_flat(config: PolicyConfig, flat: &[f64]) -> Result<Self, PolicyError> {
        let mut p = Self::zeros(config);
        p.set_flat(flat)?;
        Ok(p)
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &PolicyParams, scale: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_scaled(b, scale);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.scale_in_place(s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors.iter().map(Tensor::squared_norm).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Records every tensor as a leaf.
    pub fn record(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            vars: self.tensors.iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }

    pub fn to_checkpoint(&self) -> String {
        let c = &self.config;
        let mut out = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n");
        let _ = writeln!(
            out,
            "config hidden={} embed={} lookup_cols={} quant={}",
            c.hidden, c.embed, c.lookup_cols, c.quant
        );
        for (name, t) in PARAM_NAMES.iter().zip(&self.tensors) {
            let (r, cols) = t.dims2().expect("parameters are matrices");
            let _ = writeln!(out, "tensor {name} {r} {cols}");
            let values: Vec<String> = t.data().iter().map(|x| format!("{x:e}")).collect();
            let _ = writeln!(out, "{}", values.join(" "));
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, PolicyError> {
        let bad = |line: usize, reason: String| PolicyError::Checkpoint { line, reason };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

        let (n, header) = lines.next().ok_or_else(|| bad(1, "empty checkpoint".into()))?;
        if header != format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}") {
            return Err(bad(n, format!("unsupported header `{header}`")));
        }

        let (n, cfg_line) = lines.next().ok_or_else(|| bad(2, "missing config line".into()))?;
        let mut config = PolicyConfig::default();
        let fields = cfg_line
            .strip_prefix("config ")
            .ok_or_else(|| bad(n, "expected `config` line".into()))?;
        for kv in fields.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(n, format!("bad field `{kv}`")))?;
            let v: usize = v.parse().map_err(|_| bad(n, format!("bad value in `{kv}`")))?;
            match k {
                "hidden" => config.hidden = v,
                "embed" => config.embed = v,
                "lookup_cols" => config.lookup_cols = v,
                "quant" => config.quant = v,
                _ => return Err(bad(n, format!("unknown config key `{k}`"))),
            }
        }
        config.validate().map_err(|e| bad(n, e.to_string()))?;

        let shapes = config.shapes();
        let mut tensors = Vec::with_capacity(NUM_TENSORS);
        for (name, shape) in PARAM_NAMES.iter().zip(shapes) {
            let (n, head) = lines
                .next()
                .ok_or_else(|| bad(0, format!("missing tensor {name}")))?;
            let expected = format!("tensor {name} {} {}", shape[0], shape[1]);
            if head != expected {
                return Err(bad(n, format!("expected `{expected}`, found `{head}`")));
            }
            let (n, body) = lines
                .next()
                .ok_or_else(|| bad(n + 1, format!("missing values of {name}")))?;
            let data = body
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|_| bad(n, format!("bad number `{s}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            if data.iter().any(|x| !x.is_finite()) {
                return Err(bad(n, format!("non-finite value in {name}")));
            }
            let t = Tensor::new(shape.to_vec(), data)
                .map_err(|e| bad(n, format!("{name}: {e}")))?;
            tensors.push(t);
        }
        if let Some((n, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(bad(n, format!("trailing content `{extra}`")));
        }
        Ok(Self { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        std::fs::write(path, self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        Self::from_checkpoint(&std::fs::read_to_string(path)?)
    }
}

/// Tape handles of the parameter tensors, in [`PARAM_NAMES`] order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub vars: Vec<Var>,
}

impl ParamVars {
    pub fn get(&self, which: usize) -> Var {
        self.vars[which]
    }

    /// Collects the parameter gradients into a params-shaped container.
    pub fn gradients(&self, grads: &Gradients, config: PolicyConfig) -> PolicyParams {
        PolicyParams {
            config,
            tensors: self.vars.iter().map(|&v| grads.wrt(v)).collect(),
        }
    }
}
