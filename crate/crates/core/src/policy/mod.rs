//! Winner-score policy: a shared LSTM with history attention encodes each
//! stock's window, attention across stocks (modulated by a prior on the
//! distance between last-period return ranks) mixes the encodings, and a
//! sigmoid head emits one score per stock.

mod network;
mod params;

pub use network::{
    caan_forward, encode_histories, history_attention, lstm_encode, policy_forward, prior_matrix,
    prior_weight, rank_distance, record_forward, winner_scores, Forward, PolicyInput,
};
pub use params::{ix, ParamVars, PolicyParams, NUM_TENSORS, PARAM_NAMES};

use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("attention across stocks needs at least 2 stocks, got {0}")]
    TooFewStocks(usize),
    #[error("{0}")]
    Shape(String),
    #[error("invalid policy config: {0}")]
    Config(String),
    #[error("checkpoint line {line}: {reason}")]
    Checkpoint { line: usize, reason: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Network sizes. The input width is fixed by the feature layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyConfig {
    /// LSTM hidden size `H`, also the query/key/value width.
    pub hidden: usize,
    /// Row count `E` of the rank-distance lookup matrix.
    pub embed: usize,
    /// Column count of the lookup matrix; larger distances clamp to the last column.
    pub lookup_cols: usize,
    /// Rank quantization step `Q`.
    pub quant: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { hidden: 32, embed: 8, lookup_cols: 16, quant: 4 }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        for (name, v) in [
            ("hidden", self.hidden),
            ("embed", self.embed),
            ("lookup_cols", self.lookup_cols),
            ("quant", self.quant),
        ] {
            if v == 0 {
                return Err(PolicyError::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}
