//! Chain orchestration: `γ`-hold and tuning phases, burn-in, thinned draws.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{AdaptPhase, Sampler, SamplerConfig};
use crate::error::Result;
use crate::model::{ModelState, SeriesData};
use crate::priors::{BaseMeasureState, BaseSummary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub iteration: usize,
    pub loglik: f64,
    pub state: ModelState,
    pub base: BaseSummary,
}

/// Per-sweep monitoring values, recorded after adaptation is frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub loglik: f64,
    pub n_occupied: usize,
    pub log_omega_last: f64,
    pub alpha: f64,
    /// Active lags (global mode) or mean active lags per component (local mode).
    pub n_gamma: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub tuning_seconds: f64,
    pub burnin_seconds: f64,
    pub sampling_seconds: f64,
    pub seconds_per_1000: f64,
}

/// Post-freeze acceptance summaries. Deterministic given the seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub eta_x_acceptance: Vec<f64>,
    pub gamma_acceptance: Option<f64>,
    pub gamma_switches: Vec<usize>,
    pub mean_slice_evals: f64,
    pub adapt_phase_at_freeze: AdaptPhase,
    pub adapt_warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub config: SamplerConfig,
    pub lags: usize,
    pub draws: Vec<Draw>,
    pub traces: Vec<TraceRow>,
    pub stats: RunStats,
    pub timings: Timings,
}

fn trace_row(s: &Sampler, iteration: usize, loglik: f64) -> TraceRow {
    let st = &s.state;
    let h = st.n_components();
    let n_gamma = (0..h).map(|j| st.selection.n_gamma(j) as f64).sum::<f64>() / h as f64;
    TraceRow {
        iteration,
        loglik,
        n_occupied: st.mixing.n_occupied(),
        log_omega_last: st.mixing.log_last_weight(),
        alpha: st.mixing.alpha,
        n_gamma,
    }
}

/// Run one chain. Sweeps are numbered from 0 across all phases; errors carry
/// that index.
pub fn run_chain(series: &SeriesData, base: &BaseMeasureState, cfg: &SamplerConfig) -> Result<Chain> {
    let mut s = Sampler::new(series.clone(), base.clone(), cfg.clone())?;
    let mut it = 0usize;
    let t0 = Instant::now();
    for _ in 0..cfg.gamma_hold {
        s.sweep(false).map_err(|e| e.at_iteration(it))?;
        s.adapt_tick();
        it += 1;
    }
    for _ in 0..cfg.tune_rounds * cfg.tune_sweeps {
        s.sweep(true).map_err(|e| e.at_iteration(it))?;
        s.adapt_tick();
        it += 1;
    }
    let phase_at_freeze = s.adapt.phase;
    s.freeze_adaptation();
    let tuning_seconds = t0.elapsed().as_secs_f64();

    let mut traces = Vec::new();
    let t1 = Instant::now();
    for _ in 0..cfg.burnin {
        s.sweep(true).map_err(|e| e.at_iteration(it))?;
        if cfg.record_traces {
            traces.push(trace_row(&s, it, s.log_likelihood()));
        }
        it += 1;
    }
    let burnin_seconds = t1.elapsed().as_secs_f64();

    let mut draws = Vec::with_capacity(cfg.iters / cfg.thin);
    let t2 = Instant::now();
    for k in 0..cfg.iters {
        s.sweep(true).map_err(|e| e.at_iteration(it))?;
        let keep = (k + 1) % cfg.thin == 0;
        if cfg.record_traces || keep {
            let loglik = s.log_likelihood();
            if cfg.record_traces {
                traces.push(trace_row(&s, it, loglik));
            }
            if keep {
                draws.push(Draw {
                    iteration: it,
                    loglik,
                    state: s.state.clone(),
                    base: s.base.summary(),
                });
            }
        }
        it += 1;
    }
    let sampling_seconds = t2.elapsed().as_secs_f64();

    let c = &s.counters;
    let stats = RunStats {
        eta_x_acceptance: c
            .eta_x_tries
            .iter()
            .zip(&c.eta_x_accepts)
            .map(|(t, a)| if *t == 0 { 0.0 } else { *a as f64 / *t as f64 })
            .collect(),
        gamma_acceptance: (c.gamma_tries > 0).then(|| c.gamma_accepts as f64 / c.gamma_tries as f64),
        gamma_switches: c.gamma_switches.clone(),
        mean_slice_evals: if c.slice_calls == 0 {
            0.0
        } else {
            c.slice_evals as f64 / c.slice_calls as f64
        },
        adapt_phase_at_freeze: phase_at_freeze,
        adapt_warning: s.adapt.warning.clone(),
    };
    let timings = Timings {
        tuning_seconds,
        burnin_seconds,
        sampling_seconds,
        seconds_per_1000: if cfg.iters == 0 {
            0.0
        } else {
            1000.0 * sampling_seconds / cfg.iters as f64
        },
    };
    Ok(Chain {
        config: cfg.clone(),
        lags: series.max_lag(),
        draws,
        traces,
        stats,
        timings,
    })
}
