//! Market panels: CSV ingestion, synthetic generation and train/test splits.

mod panel;
mod synth;

pub use panel::{format_float, load_panel, save_panel, split, Bar, MarketPanel, YearMonth, CSV_HEADER};
pub use synth::{synth_market, SynthConfig, MIN_WINDOW};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate row for {stock} {period}")]
    Duplicate {
        line: usize,
        stock: String,
        period: YearMonth,
    },
    #[error("duplicate stock id {0}")]
    DuplicateStock(String),
    #[error("bad period `{0}` (expected YYYY-MM)")]
    BadPeriod(String),
    #[error("panel has no rows")]
    Empty,
    #[error("outside the period axis: {0}")]
    OutOfAxis(String),
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
