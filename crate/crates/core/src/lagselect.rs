//! Lag-selection indicators, their priors and proposals, and posterior
//! summaries of lag relevance.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dist;
use crate::model::{ComponentParams, ModelState};
use crate::priors::pi_gamma_defaults;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "camelCase")]
pub enum SelectionMode {
    #[default]
    None,
    Global,
    Local,
}

/// Probabilities of flipping 1, 2 or 3 indicators in one proposal.
pub const FLIP_SIZE_PROBS: [f64; 3] = [4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagSelectionState {
    pub mode: SelectionMode,
    /// Shared indicators; all `true` and never updated when selection is off.
    pub gamma_global: Vec<bool>,
    /// Per-component indicators, populated only in local mode.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gamma_local: Vec<Vec<bool>>,
    pub pi_gamma: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pi_pi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub a_pi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub b_pi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub xi: Vec<bool>,
}

impl LagSelectionState {
    /// All lags on, default inclusion probabilities.
    pub fn new(mode: SelectionMode, l: usize, h: usize) -> Self {
        let local = mode == SelectionMode::Local;
        Self {
            mode,
            gamma_global: vec![true; l],
            gamma_local: if local { vec![vec![true; l]; h] } else { Vec::new() },
            pi_gamma: pi_gamma_defaults(l),
            pi_pi: if local { pi_gamma_defaults(l) } else { Vec::new() },
            a_pi: if local { vec![1.0; l] } else { Vec::new() },
            b_pi: if local { vec![0.5; l] } else { Vec::new() },
            xi: if local { vec![true; l] } else { Vec::new() },
        }
    }

    pub fn lags(&self) -> usize {
        self.gamma_global.len()
    }

    pub fn mask(&self, h: usize) -> &[bool] {
        match self.mode {
            SelectionMode::Local => &self.gamma_local[h],
            _ => &self.gamma_global,
        }
    }

    pub fn set_all(&mut self, on: bool) {
        match self.mode {
            SelectionMode::None => {}
            SelectionMode::Global => self.gamma_global.iter_mut().for_each(|g| *g = on),
            SelectionMode::Local => {
                for g in self.gamma_local.iter_mut() {
                    g.iter_mut().for_each(|v| *v = on);
                }
            }
        }
    }

    /// Number of active lags in component `h`'s mask.
    pub fn n_gamma(&self, h: usize) -> usize {
        self.mask(h).iter().filter(|g| **g).count()
    }

    /// Log prior of an indicator vector under independent Bernoulli(π^γ_ℓ).
    pub fn log_prior_gamma(&self, gamma: &[bool]) -> f64 {
        gamma
            .iter()
            .zip(&self.pi_gamma)
            .map(|(g, p)| if *g { p.ln() } else { (-p).ln_1p() })
            .sum()
    }
}

/// Masked view of a component: inactive lags are dropped from the weight
/// kernel and their `β^y` and `β^x` entries are zeroed.
pub fn apply_mask(params: &ComponentParams, gamma: &[bool]) -> ComponentParams {
    let mut out = params.clone();
    for (l, on) in gamma.iter().enumerate() {
        if !on {
            out.beta_y[l] = 0.0;
        }
    }
    if !out.beta_x.is_empty() {
        for l in 0..gamma.len() {
            for r in (l + 1)..gamma.len() {
                if !(gamma[l] && gamma[r]) {
                    out.beta_x[l][r - l - 1] = 0.0;
                }
            }
        }
    }
    out
}

/// Flip size `k` from the truncated geometric on `{1, .., min(3, L)}` and a
/// uniformly chosen subset of that size.
pub fn propose_flip_subset<R: Rng + ?Sized>(l: usize, rng: &mut R) -> Vec<usize> {
    let kmax = l.min(3);
    let probs = &FLIP_SIZE_PROBS[..kmax];
    let k = 1 + crate::model::sample_categorical(probs, rng);
    let mut idx = sample_indices(rng, l, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Log of `α^π = E[(1 − π)^H]` under `π ~ Beta(a, b)`.
pub fn log_alpha_pi(a: f64, b: f64, h: usize) -> f64 {
    let hf = h as f64;
    ln_gamma(b + hf) + ln_gamma(a + b) - ln_gamma(b) - ln_gamma(a + b + hf)
}

/// `Pr(ξ = 1 | all γ^{(h)}_ℓ = 0) = α^π / (α^π − 1 + 1/π^π)`.
pub fn slab_probability_given_empty(a: f64, b: f64, h: usize, pi_pi: f64) -> f64 {
    if pi_pi <= 0.0 {
        return 0.0;
    }
    let ap = log_alpha_pi(a, b, h).exp();
    ap / (ap - 1.0 + 1.0 / pi_pi)
}

/// Joint update of `(ξ_ℓ, π^γ_ℓ)` given the local indicators: `ξ_ℓ` from its
/// conditional with `π^γ_ℓ` integrated out, then `π^γ_ℓ` given `ξ_ℓ`.
pub fn update_pi_gamma<R: Rng + ?Sized>(sel: &mut LagSelectionState, rng: &mut R) {
    let h = sel.gamma_local.len();
    for l in 0..sel.lags() {
        let count = sel.gamma_local.iter().filter(|g| g[l]).count();
        let (a, b) = (sel.a_pi[l], sel.b_pi[l]);
        let xi = if count > 0 {
            true
        } else {
            rng.random::<f64>() < slab_probability_given_empty(a, b, h, sel.pi_pi[l])
        };
        sel.xi[l] = xi;
        sel.pi_gamma[l] = if xi {
            let c = count as f64;
            dist::beta(a + c, b + h as f64 - c, rng).clamp(f64::MIN_POSITIVE, 1.0 - 1e-16)
        } else {
            0.0
        };
    }
}

/// Posterior-mean lag-relevance summaries for local selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceSummaries {
    /// Share of observations allocated to components with the lag active.
    pub observation_share: Vec<f64>,
    /// As above, counting only components whose `|β^y_ℓ|` exceeds the threshold.
    pub thresholded_share: Vec<f64>,
    /// `Σ_h ω_h γ^{(h)}_ℓ`.
    pub weight_share: Vec<f64>,
    pub pi_gamma: Vec<f64>,
}

/// Default coefficient threshold for the filtered summary.
pub fn default_threshold(range: f64) -> f64 {
    0.05 * range / 6.0
}

pub fn global_dependence_summaries(draws: &[ModelState], threshold: f64) -> DependenceSummaries {
    let l = draws.first().map_or(0, |d| d.lags());
    let mut out = DependenceSummaries {
        observation_share: vec![0.0; l],
        thresholded_share: vec![0.0; l],
        weight_share: vec![0.0; l],
        pi_gamma: vec![0.0; l],
    };
    if draws.is_empty() {
        return out;
    }
    for d in draws {
        let counts = d.mixing.occupancy();
        let n: usize = counts.iter().sum();
        let w = d.mixing.weights();
        for k in 0..l {
            let mut obs = 0.0;
            let mut thr = 0.0;
            let mut ws = 0.0;
            for h in 0..d.n_components() {
                if d.mask(h)[k] {
                    obs += counts[h] as f64;
                    if d.components[h].beta_y[k].abs() > threshold {
                        thr += counts[h] as f64;
                    }
                    ws += w[h];
                }
            }
            if n > 0 {
                out.observation_share[k] += obs / n as f64;
                out.thresholded_share[k] += thr / n as f64;
            }
            out.weight_share[k] += ws;
            out.pi_gamma[k] += d.selection.pi_gamma[k];
        }
    }
    let m = draws.len() as f64;
    for v in [
        &mut out.observation_share,
        &mut out.thresholded_share,
        &mut out.weight_share,
        &mut out.pi_gamma,
    ] {
        v.iter_mut().for_each(|x| *x /= m);
    }
    out
}
