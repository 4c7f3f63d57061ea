//! Scoring fits against known data-generating processes, and chain summaries.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagselect::{default_threshold, global_dependence_summaries, DependenceSummaries, SelectionMode};
use crate::model::{ModelState, SeriesData};
use crate::sampler::Chain;
use crate::simulate::{TransitionOracle, ValidationPairs};

/// Lower bound applied to model log-densities at replicate draws.
pub const LOG_FLOOR: f64 = -745.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSet {
    pub pairs: ValidationPairs,
    /// Replicate draws from the true conditional per validation point.
    pub replicates: usize,
}

impl ValidationSet {
    pub fn new(pairs: ValidationPairs, replicates: usize) -> Result<Self> {
        if replicates < 100 {
            return Err(Error::Domain(format!("{replicates} replicates; at least 100 required")));
        }
        if pairs
            .iter()
            .any(|(y, x)| !y.is_finite() || x.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Domain("validation pairs must be finite".into()));
        }
        Ok(Self { pairs, replicates })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub kl: f64,
    /// Standard error across validation points.
    pub se: f64,
    /// Model ordinates raised to [`LOG_FLOOR`].
    pub clamped: usize,
    pub evaluations: usize,
}

/// A fitted state used as a density oracle, e.g. to score a model against itself.
pub struct StateOracle(pub ModelState);

impl TransitionOracle for StateOracle {
    fn lags(&self) -> usize {
        self.0.lags()
    }

    fn log_density(&self, y: f64, x: &[f64]) -> f64 {
        self.0
            .transition_at(&x[..self.lags()])
            .map_or(f64::NEG_INFINITY, |t| t.log_density(y))
    }

    fn mean(&self, x: &[f64]) -> f64 {
        self.0.transition_at(&x[..self.lags()]).map_or(f64::NAN, |t| t.mean())
    }

    fn sample(&self, x: &[f64], mut rng: &mut dyn rand::RngCore) -> f64 {
        self.0
            .transition_at(&x[..self.lags()])
            .map_or(f64::NAN, |t| t.sample(&mut rng))
    }
}

/// Monte Carlo K-L divergence of the fitted transition densities from the
/// truth: for each validation point, replicates are drawn from the true
/// conditional and `log p_true − log p̂` is averaged over replicates and over
/// posterior draws; the result is the mean across validation points.
/// Replicates depend only on `seed` and the point index, so two fits scored
/// with the same seed see the same replicates.
pub fn kl_divergence_mc(
    validation: &ValidationSet,
    oracle: &dyn TransitionOracle,
    draws: &[ModelState],
    seed: u64,
) -> Result<KlEstimate> {
    let first = draws
        .first()
        .ok_or_else(|| Error::Domain("no posterior draws".into()))?;
    let l = first.lags();
    let need = l.max(oracle.lags());
    if let Some((_, x)) = validation.pairs.iter().find(|(_, x)| x.len() < need) {
        return Err(Error::Dimension {
            what: "validation lag vector",
            expected: need,
            got: x.len(),
        });
    }
    let per_point: Vec<Result<(f64, usize)>> = validation
        .pairs
        .par_iter()
        .enumerate()
        .map(|(j, (_, x))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let ys: Vec<f64> = (0..validation.replicates).map(|_| oracle.sample(x, &mut rng)).collect();
            let log_true: f64 = ys.iter().map(|y| oracle.log_density(*y, x)).sum::<f64>() / ys.len() as f64;
            let mut clamped = 0;
            let mut log_model = 0.0;
            for d in draws {
                let t = d.transition_at(&x[..l])?.log_density_evaluator();
                let mut acc = 0.0;
                for y in &ys {
                    let v = t.eval(*y);
                    acc += if v < LOG_FLOOR || v.is_nan() {
                        clamped += 1;
                        LOG_FLOOR
                    } else {
                        v
                    };
                }
                log_model += acc / ys.len() as f64;
            }
            Ok((log_true - log_model / draws.len() as f64, clamped))
        })
        .collect();
    let mut vals = Vec::with_capacity(per_point.len());
    let mut clamped = 0;
    for r in per_point {
        let (v, c) = r?;
        vals.push(v);
        clamped += c;
    }
    let n = vals.len() as f64;
    let kl = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - kl).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(KlEstimate {
        kl,
        se: (var / n).sqrt(),
        clamped,
        evaluations: vals.len() * validation.replicates * draws.len(),
    })
}

/// Mean squared error of posterior transition means against the truth, over
/// observations (optionally restricted to a region of lag space) and draws.
pub fn mse_transition_mean(
    series: &SeriesData,
    draws: &[ModelState],
    true_mean: &(dyn Fn(&[f64]) -> f64 + Sync),
    region: Option<&(dyn Fn(&[f64]) -> bool + Sync)>,
) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::Domain("no posterior draws".into()));
    }
    let rows: Vec<usize> = (0..series.n_obs())
        .filter(|i| region.is_none_or(|f| f(series.design_row(*i))))
        .collect();
    if rows.is_empty() {
        return Err(Error::Domain("no observations in the region".into()));
    }
    let sums: Vec<Result<f64>> = rows
        .par_iter()
        .map(|&i| {
            let x = series.design_row(i);
            let truth = true_mean(x);
            let mut s = 0.0;
            for d in draws {
                s += (d.transition_at(x)?.mean() - truth).powi(2);
            }
            Ok(s)
        })
        .collect();
    let total: f64 = sums.into_iter().sum::<Result<f64>>()?;
    Ok(total / (rows.len() * draws.len()) as f64)
}

/// Every `stride`-th draw so that at most `max` remain.
pub fn stride_subset(draws: &[ModelState], max: usize) -> Vec<ModelState> {
    if max == 0 || draws.is_empty() {
        return Vec::new();
    }
    let stride = draws.len().div_ceil(max);
    draws.iter().step_by(stride).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagInclusionReport {
    pub mode: SelectionMode,
    /// Posterior inclusion probability per lag: the mean of `γ_ℓ` (global) or
    /// the share of observations allocated to components with the lag active (local).
    pub inclusion: Vec<f64>,
    /// All four local-mode summaries.
    pub local: Option<DependenceSummaries>,
}

pub fn lag_inclusion_report(draws: &[ModelState], range: f64) -> LagInclusionReport {
    let Some(first) = draws.first() else {
        return LagInclusionReport {
            mode: SelectionMode::None,
            inclusion: Vec::new(),
            local: None,
        };
    };
    let mode = first.selection.mode;
    let l = first.lags();
    match mode {
        SelectionMode::Local => {
            let s = global_dependence_summaries(draws, default_threshold(range));
            LagInclusionReport {
                mode,
                inclusion: s.observation_share.clone(),
                local: Some(s),
            }
        }
        _ => {
            let mut inc = vec![0.0; l];
            for d in draws {
                for (k, g) in d.selection.gamma_global.iter().enumerate() {
                    if *g {
                        inc[k] += 1.0;
                    }
                }
            }
            inc.iter_mut().for_each(|v| *v /= draws.len() as f64);
            LagInclusionReport {
                mode,
                inclusion: inc,
                local: None,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub n_draws: usize,
    pub n_trace: usize,
    pub loglik_mean: f64,
    pub loglik_sd: f64,
    pub n_occupied_mean: f64,
    pub n_occupied_max: usize,
    /// Largest `log ω_H` seen; small values mean the truncation is harmless.
    pub log_omega_last_max: f64,
    pub alpha_mean: f64,
    pub eta_x_acceptance_mean: f64,
    pub gamma_acceptance: Option<f64>,
    pub gamma_switches: Vec<usize>,
    pub seconds_per_1000: f64,
}

/// Trace summaries. Uses the per-sweep traces when recorded and the retained
/// draws otherwise.
pub fn chain_diagnostics(chain: &Chain) -> ChainDiagnostics {
    let (ll, occ, lw, alpha): (Vec<f64>, Vec<usize>, Vec<f64>, Vec<f64>) = if chain.traces.is_empty() {
        let d = &chain.draws;
        (
            d.iter().map(|x| x.loglik).collect(),
            d.iter().map(|x| x.state.mixing.n_occupied()).collect(),
            d.iter().map(|x| x.state.mixing.log_last_weight()).collect(),
            d.iter().map(|x| x.state.mixing.alpha).collect(),
        )
    } else {
        let t = &chain.traces;
        (
            t.iter().map(|x| x.loglik).collect(),
            t.iter().map(|x| x.n_occupied).collect(),
            t.iter().map(|x| x.log_omega_last).collect(),
            t.iter().map(|x| x.alpha).collect(),
        )
    };
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let m = mean(&ll);
    let sd = if ll.len() > 1 {
        (ll.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (ll.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let acc = &chain.stats.eta_x_acceptance;
    ChainDiagnostics {
        n_draws: chain.draws.len(),
        n_trace: chain.traces.len(),
        loglik_mean: m,
        loglik_sd: sd,
        n_occupied_mean: mean(&occ.iter().map(|o| *o as f64).collect::<Vec<_>>()),
        n_occupied_max: occ.iter().copied().max().unwrap_or(0),
        log_omega_last_max: lw.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        alpha_mean: mean(&alpha),
        eta_x_acceptance_mean: mean(acc),
        gamma_acceptance: chain.stats.gamma_acceptance,
        gamma_switches: chain.stats.gamma_switches.clone(),
        seconds_per_1000: chain.timings.seconds_per_1000,
    }
}
