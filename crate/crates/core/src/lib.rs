//! Bayesian nonparametric density autoregression with lag selection.
//!
//! Transition densities `f(y_t | y_{t-1}, ..., y_{t-L})` are modeled as a
//! truncated stick-breaking mixture of Gaussian linear regressions whose
//! weights depend on the lags through Gaussian weight kernels. Lags can be
//! switched off globally or per component, and the posterior is explored with
//! a blocked Gibbs sampler.
//!
//! ```no_run
//! use bnpwmar::model::SeriesData;
//! use bnpwmar::priors::{BaseMeasureState, PriorOptions};
//! use bnpwmar::sampler::{run_chain, SamplerConfig};
//! use bnpwmar::simulate::{simulate, SimKind, SimSpec};
//!
//! let values = simulate(&SimSpec::new(SimKind::RickerNormal, 200, 7))?;
//! let series = SeriesData::new(values, 2)?;
//! let base = BaseMeasureState::from_series(&series, &PriorOptions::default())?;
//! let chain = run_chain(&series, &base, &SamplerConfig { components: 20, ..Default::default() })?;
//! let last = &chain.draws.last().unwrap().state;
//! println!("{}", last.transition_at(&[5.0, 4.0])?.mean());
//! # Ok::<(), bnpwmar::Error>(())
//! ```

pub mod cli;
pub mod dist;
pub mod error;
pub mod evaluate;
pub mod io;
pub mod lagselect;
pub mod linalg;
pub mod model;
pub mod priors;
pub mod sampler;
pub mod simulate;

pub use error::{Error, Result};
