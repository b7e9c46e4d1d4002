//! Long/short stock selection with an attention-based scoring policy.
//!
//! The pipeline: [`data`] panels feed [`features`] windows into the
//! [`policy`] network, whose winner scores the [`portfolio`] generator turns
//! into long and short legs. The [`trainer`] ascends the Sharpe ratio of
//! simulated trajectories, the [`backtest`] module evaluates policies against
//! classical baselines with [`metrics`], and [`interpret`] averages input
//! gradients of the scores.

pub mod autodiff;
pub mod backtest;
pub mod data;
pub mod features;
pub mod interpret;
pub mod metrics;
pub mod policy;
pub mod portfolio;
pub mod rng;
pub mod trainer;
