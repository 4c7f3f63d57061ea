//! Blocked Gibbs sampler for the truncated mixture: allocations, sticks,
//! collapsed component updates, lag indicators, base measure and `α`.

mod adapt;
mod init;
mod run;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist;
use crate::error::{Error, Result};
use crate::lagselect::{propose_flip_subset, update_pi_gamma, LagSelectionState, SelectionMode};
use crate::linalg::{log_add_exp, log_sum_exp, normal_logpdf, DET_FLOOR};
use crate::model::{
    log_stick_break_unchecked, sample_categorical, ComponentParams, MixingState, ModelState, SeriesData, WeightKernel,
};
use crate::priors::{sample_component_from_g0, BaseMeasureState, XPrior};

pub use adapt::{empirical_proposal, scale_block, AdaptPhase, AdaptState, GROW, SHRINK};
pub use init::{init_allocations, ward_clusters};
pub use run::{run_chain, Chain, Draw, RunStats, Timings, TraceRow};

/// Cap on slice-sampler shrinkage steps; reaching it means the state is corrupt.
pub const SLICE_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "camelCase")]
pub enum GammaInit {
    #[default]
    AllOn,
    AllOff,
    Custom(Vec<bool>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct SamplerConfig {
    /// Truncation level `H`.
    pub components: usize,
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    /// Slice widths `τ_h`; empty means all 1.0.
    pub tau_slice: Vec<f64>,
    pub accept_target: (f64, f64),
    pub adapt: bool,
    pub max_adapt_attempts: usize,
    pub selection_mode: SelectionMode,
    pub gamma_init: GammaInit,
    /// Overrides the default prior inclusion probabilities `π^γ`.
    pub pi_gamma: Option<Vec<f64>>,
    /// Sweeps at the start during which `γ` is held fixed.
    pub gamma_hold: usize,
    pub tune_rounds: usize,
    pub tune_sweeps: usize,
    /// Sweeps per adaptation batch (the covariance-estimation batch is five times longer).
    pub batch_sweeps: usize,
    pub record_traces: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            components: 40,
            iters: 10_000,
            burnin: 5_000,
            thin: 5,
            seed: 1,
            tau_slice: Vec::new(),
            accept_target: (0.02, 0.20),
            adapt: true,
            max_adapt_attempts: 10,
            selection_mode: SelectionMode::None,
            gamma_init: GammaInit::AllOn,
            pi_gamma: None,
            gamma_hold: 1_000,
            tune_rounds: 3,
            tune_sweeps: 2_000,
            batch_sweeps: 100,
            record_traces: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, lags: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.components < 2 {
            return bad(format!("components = {} but H >= 2 is required", self.components));
        }
        if self.burnin + self.iters == 0 {
            return bad("burnin + iters must be positive".into());
        }
        if self.thin == 0 {
            return bad("thin must be at least 1".into());
        }
        let (lo, hi) = self.accept_target;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return bad(format!("acceptTarget ({lo}, {hi}) must be an interval inside (0, 1)"));
        }
        if !self.tau_slice.is_empty() {
            if self.tau_slice.len() != self.components - 1 {
                return bad(format!(
                    "tauSlice has {} entries, expected {}",
                    self.tau_slice.len(),
                    self.components - 1
                ));
            }
            if self.tau_slice.iter().any(|t| !(*t > 0.0)) {
                return bad("tauSlice entries must be positive".into());
            }
        }
        if self.batch_sweeps == 0 {
            return bad("batchSweeps must be positive".into());
        }
        if let GammaInit::Custom(g) = &self.gamma_init {
            if g.len() != lags {
                return bad(format!("custom gammaInit has {} entries, expected {lags}", g.len()));
            }
        }
        if let Some(p) = &self.pi_gamma {
            if p.len() != lags || p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return bad(format!("piGamma must hold {lags} probabilities"));
            }
        }
        Ok(())
    }

    fn tau(&self, h: usize) -> f64 {
        self.tau_slice.get(h).copied().unwrap_or(1.0)
    }
}

/// Acceptance tallies since the last reset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub eta_x_tries: Vec<usize>,
    pub eta_x_accepts: Vec<usize>,
    pub gamma_tries: usize,
    pub gamma_accepts: usize,
    pub gamma_switches: Vec<usize>,
    pub slice_calls: usize,
    pub slice_evals: usize,
}

impl Counters {
    fn new(h: usize, l: usize) -> Self {
        Self {
            eta_x_tries: vec![0; h],
            eta_x_accepts: vec![0; h],
            gamma_switches: vec![0; l],
            ..Self::default()
        }
    }
}

struct Streams {
    alloc: ChaCha8Rng,
    sticks: ChaCha8Rng,
    comp: ChaCha8Rng,
    gamma: ChaCha8Rng,
    base: ChaCha8Rng,
    alpha: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            alloc: stream(seed, 1),
            sticks: stream(seed, 2),
            comp: stream(seed, 3),
            gamma: stream(seed, 4),
            base: stream(seed, 5),
            alpha: stream(seed, 6),
        }
    }
}

/// Quantities of `η^y` given `η^x`, `γ` and the allocated data: `Λ₁ = D'D + Λ₀`,
/// `β₁`, `a₁`, `b₁`, and `−½ log det Λ₁ − a₁ log b₁`.
pub struct Collapsed {
    pub prec: Cholesky<f64, Dyn>,
    pub beta1: DVector<f64>,
    pub a1: f64,
    pub b1: f64,
    pub log_term: f64,
}

#[derive(Debug, Clone)]
struct YPrior {
    prec: DMatrix<f64>,
    prec_b0: DVector<f64>,
    b0_quad: f64,
    nu: f64,
    s0: f64,
}

impl YPrior {
    fn new(base: &BaseMeasureState) -> Self {
        let prec = base.prec_star0();
        let prec_b0 = &prec * &base.beta_star0;
        let b0_quad = base.beta_star0.dot(&prec_b0);
        Self {
            prec,
            prec_b0,
            b0_quad,
            nu: base.nu_sigma2,
            s0: base.s0,
        }
    }
}

/// Chain state with the caches the updates share: per-component weight-kernel
/// log-densities `log N_h(x_t)`, their weighted log-sum `log D_t`, and
/// component memberships.
pub struct Sampler {
    series: SeriesData,
    pub state: ModelState,
    pub base: BaseMeasureState,
    cfg: SamplerConfig,
    x_prior: XPrior,
    y_prior: YPrior,
    log_n: Vec<Vec<f64>>,
    log_d: Vec<f64>,
    members: Vec<Vec<usize>>,
    pub adapt: AdaptState,
    pub counters: Counters,
    batch_count: usize,
    rng: Streams,
}

/// Random-walk coordinates of `η^x`: `μ^x`, the `β^x` rows, then `log δ^x`.
pub fn pack_eta_x(c: &ComponentParams) -> Vec<f64> {
    let mut out = c.mu_x.clone();
    for row in &c.beta_x {
        out.extend_from_slice(row);
    }
    out.extend(c.delta_x.iter().map(|d| d.ln()));
    out
}

fn unpack_eta_x(theta: &[f64], template: &ComponentParams) -> ComponentParams {
    let l = template.lags();
    let mut c = template.clone();
    c.mu_x.copy_from_slice(&theta[..l]);
    let mut k = l;
    for row in c.beta_x.iter_mut() {
        let n = row.len();
        row.copy_from_slice(&theta[k..k + n]);
        k += n;
    }
    for (d, v) in c.delta_x.iter_mut().zip(&theta[k..]) {
        *d = v.exp();
    }
    c
}

fn eta_x_groups(l: usize, diagonal: bool) -> Vec<std::ops::Range<usize>> {
    let nb = if diagonal { 0 } else { l * (l - 1) / 2 };
    vec![0..l, l..l + nb, l + nb..2 * l + nb]
}

fn initial_proposal(base: &BaseMeasureState) -> DMatrix<f64> {
    let l = base.lags;
    let nb = if base.diagonal { 0 } else { l * (l - 1) / 2 };
    let mut diag = vec![(0.05 * base.range).powi(2); l];
    diag.extend(std::iter::repeat_n(0.1f64.powi(2), nb));
    diag.extend(std::iter::repeat_n(0.2f64.powi(2), l));
    DMatrix::from_diagonal(&DVector::from_vec(diag))
}

/// `log(Σ_j e^{a_j} − e^{b})` given `total = log Σ_j e^{a_j}` and one term `b`,
/// falling back to `exact` when cancellation would lose precision.
fn log_sub_share<F: FnOnce() -> f64>(total: f64, term: f64, exact: F) -> f64 {
    let share = term - total;
    if share < (-1e-6f64).ln_1p() {
        total + (-share.exp_m1()).ln()
    } else {
        exact()
    }
}

impl Sampler {
    /// Initialize from clustering and prior centers.
    pub fn new(series: SeriesData, base: BaseMeasureState, cfg: SamplerConfig) -> Result<Self> {
        cfg.validate(series.max_lag())?;
        let h = cfg.components;
        let l = series.max_lag();
        let mut rng = stream(cfg.seed, 0);
        let allocations = init_allocations(&series, h);
        let alpha = base.alpha_prior.0 / base.alpha_prior.1;
        let mut counts = vec![0usize; h];
        for s in &allocations {
            counts[*s] += 1;
        }
        let mut members = vec![Vec::new(); h];
        for (i, s) in allocations.iter().enumerate() {
            members[*s].push(i);
        }
        let mut components = Vec::with_capacity(h);
        for mem in members.iter() {
            let mut c = sample_component_from_g0(&base, &mut rng);
            c.delta_x = base.s0_x.clone();
            c.beta_x
                .iter_mut()
                .for_each(|row| row.iter_mut().for_each(|b| *b = 0.0));
            c.mu_x = if mem.is_empty() {
                base.mu0_x.iter().copied().collect()
            } else {
                (0..l)
                    .map(|k| mem.iter().map(|&i| series.design_row(i)[k]).sum::<f64>() / mem.len() as f64)
                    .collect()
            };
            components.push(c);
        }
        let sticks: Vec<f64> = (0..h - 1)
            .map(|j| {
                let tail: usize = counts[j + 1..].iter().sum();
                (1.0 + counts[j] as f64) / (1.0 + counts[j] as f64 + alpha + tail as f64)
            })
            .collect();
        let mixing = MixingState::new(sticks, allocations, alpha)?;
        let mut selection = LagSelectionState::new(cfg.selection_mode, l, h);
        if let Some(p) = &cfg.pi_gamma {
            selection.pi_gamma = p.clone();
            if cfg.selection_mode == SelectionMode::Local {
                selection.pi_pi = p.clone();
            }
        }
        match (&cfg.gamma_init, cfg.selection_mode) {
            (_, SelectionMode::None) => {}
            (GammaInit::AllOn, _) => selection.set_all(true),
            (GammaInit::AllOff, _) => selection.set_all(false),
            (GammaInit::Custom(g), SelectionMode::Global) => selection.gamma_global = g.clone(),
            (GammaInit::Custom(g), SelectionMode::Local) => {
                selection.gamma_local.iter_mut().for_each(|row| *row = g.clone())
            }
        }
        let state = ModelState {
            components,
            mixing,
            selection,
        };
        let mut s = Self::from_state(series, base, state, cfg)?;
        for h in 0..s.state.n_components() {
            s.update_eta_y(h)?;
        }
        Ok(s)
    }

    /// Wrap an explicit state. Unlike [`Sampler::new`] this accepts `H = 1`,
    /// which the reduction tests rely on.
    pub fn from_state(
        series: SeriesData,
        base: BaseMeasureState,
        state: ModelState,
        cfg: SamplerConfig,
    ) -> Result<Self> {
        if state.lags() != series.max_lag() {
            return Err(Error::Dimension {
                what: "state lags",
                expected: series.max_lag(),
                got: state.lags(),
            });
        }
        if state.mixing.allocations.len() != series.n_obs() {
            return Err(Error::Dimension {
                what: "allocations",
                expected: series.n_obs(),
                got: state.mixing.allocations.len(),
            });
        }
        for c in &state.components {
            c.validate()?;
        }
        let h = state.n_components();
        let l = state.lags();
        let x_prior = XPrior::new(&base)?;
        let y_prior = YPrior::new(&base);
        let adapt = AdaptState::new(
            vec![initial_proposal(&base); h],
            eta_x_groups(l, base.diagonal),
            cfg.accept_target,
            cfg.max_adapt_attempts,
            cfg.adapt,
        );
        let rng = Streams::new(cfg.seed);
        let mut s = Self {
            series,
            state,
            base,
            cfg,
            x_prior,
            y_prior,
            log_n: Vec::new(),
            log_d: Vec::new(),
            members: Vec::new(),
            adapt,
            counters: Counters::new(h, l),
            batch_count: 0,
            rng,
        };
        s.refresh_caches();
        Ok(s)
    }

    pub fn series(&self) -> &SeriesData {
        &self.series
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    /// Swap in a new series of the same shape (used by joint-distribution tests).
    pub fn replace_series(&mut self, series: SeriesData) -> Result<()> {
        if series.n_obs() != self.series.n_obs() || series.max_lag() != self.series.max_lag() {
            return Err(Error::Dimension {
                what: "replacement series",
                expected: self.series.n_obs(),
                got: series.n_obs(),
            });
        }
        self.series = series;
        self.refresh_caches();
        Ok(())
    }

    /// Replace the allocations and rebuild caches.
    pub fn set_allocations(&mut self, allocations: Vec<usize>) -> Result<()> {
        let h = self.state.n_components();
        if allocations.len() != self.series.n_obs() || allocations.iter().any(|s| *s >= h) {
            return Err(Error::Domain("invalid allocation vector".into()));
        }
        self.state.mixing.allocations = allocations;
        self.rebuild_members();
        Ok(())
    }

    pub fn refresh_caches(&mut self) {
        let h = self.state.n_components();
        self.log_n = (0..h)
            .map(|j| self.kernel_log_densities(&self.state.components[j], self.state.mask(j)))
            .collect();
        self.recompute_log_d();
        self.rebuild_members();
    }

    fn kernel_log_densities(&self, c: &ComponentParams, mask: &[bool]) -> Vec<f64> {
        let k = WeightKernel::new(c, mask);
        (0..self.series.n_obs())
            .map(|i| k.log_density(self.series.design_row(i)))
            .collect()
    }

    fn recompute_log_d(&mut self) {
        let h = self.state.n_components();
        let lw = &self.state.mixing.log_weights;
        let mut buf = vec![0.0; h];
        self.log_d = (0..self.series.n_obs())
            .map(|i| {
                for j in 0..h {
                    buf[j] = lw[j] + self.log_n[j][i];
                }
                log_sum_exp(&buf)
            })
            .collect();
    }

    fn rebuild_members(&mut self) {
        let h = self.state.n_components();
        let mut members = vec![Vec::new(); h];
        for (i, s) in self.state.mixing.allocations.iter().enumerate() {
            members[*s].push(i);
        }
        self.members = members;
    }

    /// `log Σ_{j≠h} ω_j N_j(x_t)` for every `t`.
    fn rest_log_d(&self, h: usize) -> Vec<f64> {
        let lw = &self.state.mixing.log_weights;
        let n_comp = self.state.n_components();
        (0..self.series.n_obs())
            .map(|i| {
                log_sub_share(self.log_d[i], lw[h] + self.log_n[h][i], || {
                    let others: Vec<f64> = (0..n_comp)
                        .filter(|j| *j != h)
                        .map(|j| lw[j] + self.log_n[j][i])
                        .collect();
                    log_sum_exp(&others)
                })
            })
            .collect()
    }

    /// Log-likelihood of the current state, from the caches.
    pub fn log_likelihood(&self) -> f64 {
        let h = self.state.n_components();
        let mut buf = vec![0.0; h];
        let mut total = 0.0;
        for i in 0..self.series.n_obs() {
            let x = self.series.design_row(i);
            let y = self.series.response(i);
            for j in 0..h {
                let c = &self.state.components[j];
                buf[j] = self.state.mixing.log_weights[j]
                    + self.log_n[j][i]
                    + normal_logpdf(y, c.kernel_mean(x, self.state.mask(j)), c.sigma2);
            }
            total += log_sum_exp(&buf) - self.log_d[i];
        }
        total
    }

    /// Collapsed `η^y` quantities for the data in `members` under kernel location `mu_x` and mask.
    pub fn collapsed(&self, members: &[usize], mu_x: &[f64], mask: &[bool]) -> Option<Collapsed> {
        let l = mu_x.len();
        let p = l + 1;
        let yp = &self.y_prior;
        let mut prec = yp.prec.clone();
        let mut rhs = yp.prec_b0.clone();
        let mut yty = 0.0;
        let mut row = vec![0.0; p];
        row[0] = 1.0;
        for &i in members {
            let x = self.series.design_row(i);
            let y = self.series.response(i);
            for k in 0..l {
                row[k + 1] = if mask[k] { mu_x[k] - x[k] } else { 0.0 };
            }
            for a in 0..p {
                rhs[a] += row[a] * y;
                for b in 0..=a {
                    prec[(a, b)] += row[a] * row[b];
                }
            }
            yty += y * y;
        }
        for a in 0..p {
            for b in 0..a {
                prec[(b, a)] = prec[(a, b)];
            }
        }
        let chol = prec.cholesky()?;
        let beta1 = chol.solve(&rhs);
        let a1 = 0.5 * (yp.nu + members.len() as f64);
        let b1 = 0.5 * (yp.nu * yp.s0 + yty + yp.b0_quad - rhs.dot(&beta1));
        if !(b1 > 0.0 && b1.is_finite()) {
            return None;
        }
        let lmat = chol.l_dirty();
        let log_det: f64 = 2.0 * (0..p).map(|i| lmat[(i, i)].ln()).sum::<f64>();
        Some(Collapsed {
            prec: chol,
            beta1,
            a1,
            b1,
            log_term: -0.5 * log_det - a1 * b1.ln(),
        })
    }

    fn collapsed_term(&self, h: usize, mu_x: &[f64], mask: &[bool]) -> f64 {
        self.collapsed(&self.members[h], mu_x, mask)
            .map_or(f64::NEG_INFINITY, |c| c.log_term)
    }

    /// Metropolized Gibbs update of every allocation.
    pub fn update_allocations(&mut self) -> Result<()> {
        let h = self.state.n_components();
        if h == 1 {
            return Ok(());
        }
        let mut logp = vec![0.0; h];
        let mut p = vec![0.0; h];
        for i in 0..self.series.n_obs() {
            let x = self.series.design_row(i);
            let y = self.series.response(i);
            for j in 0..h {
                let c = &self.state.components[j];
                logp[j] = self.state.mixing.log_weights[j]
                    + self.log_n[j][i]
                    + normal_logpdf(y, c.kernel_mean(x, self.state.mask(j)), c.sigma2);
            }
            let total = log_sum_exp(&logp);
            if !total.is_finite() {
                return Err(Error::NonFiniteDensity { t: i });
            }
            for j in 0..h {
                p[j] = (logp[j] - total).exp();
            }
            let cur = self.state.mixing.allocations[i];
            let excl_cur: f64 = (0..h).filter(|j| *j != cur).map(|j| p[j]).sum();
            if !(excl_cur > 0.0) {
                continue;
            }
            let pc = p[cur];
            p[cur] = 0.0;
            let cand = sample_categorical(&p, &mut self.rng.alloc);
            p[cur] = pc;
            let excl_cand: f64 = (0..h).filter(|j| *j != cand).map(|j| p[j]).sum();
            let ratio = excl_cur / excl_cand;
            if ratio >= 1.0 || self.rng.alloc.random::<f64>() < ratio {
                self.state.mixing.allocations[i] = cand;
            }
        }
        self.rebuild_members();
        Ok(())
    }

    /// Multivariate hyperrectangle slice update of the sticks.
    pub fn update_sticks(&mut self) -> Result<()> {
        let h = self.state.n_components();
        if h == 1 {
            return Ok(());
        }
        let n = self.series.n_obs();
        let counts = self.state.mixing.occupancy();
        let mut tails = vec![0usize; h];
        for j in (0..h - 1).rev() {
            tails[j] = tails[j + 1] + counts[j + 1];
        }
        let alpha = self.state.mixing.alpha;
        let maxes: Vec<f64> = (0..n)
            .map(|i| (0..h).map(|j| self.log_n[j][i]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let scaled: Vec<Vec<f64>> = (0..h)
            .map(|j| (0..n).map(|i| (self.log_n[j][i] - maxes[i]).exp()).collect())
            .collect();
        let log_n = &self.log_n;
        let target = |v: &[f64]| -> f64 {
            if v.iter().any(|x| !(*x > 0.0 && *x < 1.0)) {
                return f64::NEG_INFINITY;
            }
            let mut lp = 0.0;
            for j in 0..h - 1 {
                lp += counts[j] as f64 * v[j].ln() + (alpha + tails[j] as f64 - 1.0) * (-v[j]).ln_1p();
            }
            let lw = log_stick_break_unchecked(v);
            let w: Vec<f64> = lw.iter().map(|x| x.exp()).collect();
            let mut buf = vec![0.0; h];
            // `maxes` does not depend on the sticks and is left out, which keeps
            // the target O(1) even when kernel log-densities are huge
            for i in 0..n {
                if !maxes[i].is_finite() {
                    continue;
                }
                let s: f64 = (0..h).map(|j| w[j] * scaled[j][i]).sum();
                lp -= if s > 0.0 && s.is_finite() {
                    s.ln()
                } else {
                    for j in 0..h {
                        buf[j] = lw[j] + log_n[j][i] - maxes[i];
                    }
                    log_sum_exp(&buf)
                };
            }
            lp
        };
        let v0 = self.state.mixing.sticks.clone();
        let rng = &mut self.rng.sticks;
        let level = target(&v0) + rng.random::<f64>().ln();
        let mut lo = vec![0.0; h - 1];
        let mut hi = vec![0.0; h - 1];
        for j in 0..h - 1 {
            let tau = self.cfg.tau(j);
            lo[j] = v0[j] - tau * rng.random::<f64>();
            hi[j] = (lo[j] + tau).min(1.0);
            lo[j] = lo[j].max(0.0);
        }
        let mut cand = vec![0.0; h - 1];
        let mut evals = 0;
        loop {
            evals += 1;
            if evals > SLICE_CAP {
                return Err(Error::Domain("stick slice sampler exceeded its iteration cap".into()));
            }
            for j in 0..h - 1 {
                cand[j] = lo[j] + rng.random::<f64>() * (hi[j] - lo[j]);
            }
            if target(&cand) > level {
                break;
            }
            for j in 0..h - 1 {
                if cand[j] < v0[j] {
                    lo[j] = cand[j];
                } else {
                    hi[j] = cand[j];
                }
            }
        }
        self.counters.slice_calls += 1;
        self.counters.slice_evals += evals;
        self.state.mixing.set_sticks(cand)?;
        self.recompute_log_d();
        Ok(())
    }

    /// Random-walk Metropolis on `η^x_h` with `η^y_h` integrated out.
    pub fn update_eta_x(&mut self, h: usize) -> Result<bool> {
        let cur = self.state.components[h].clone();
        let theta = pack_eta_x(&cur);
        let step = self.adapt.step(h, &mut self.rng.comp);
        let prop: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let mask = self.state.mask(h).to_vec();
        let cand = unpack_eta_x(&prop, &cur);
        let log_det: f64 = cand
            .delta_x
            .iter()
            .zip(&mask)
            .filter(|(_, m)| **m)
            .map(|(d, _)| d.ln())
            .sum();
        let mut accepted = false;
        let valid = cand.delta_x.iter().all(|d| d.is_finite() && *d > 0.0)
            && cand.mu_x.iter().all(|m| m.is_finite())
            && log_det >= DET_FLOOR.ln();
        if valid {
            let new_n = self.kernel_log_densities(&cand, &mask);
            let rest = self.rest_log_d(h);
            let lw = self.state.mixing.log_weights[h];
            let new_d: Vec<f64> = rest.iter().zip(&new_n).map(|(r, n)| log_add_exp(*r, lw + n)).collect();
            let mem = &self.members[h];
            let jac = |c: &ComponentParams| c.delta_x.iter().map(|d| d.ln()).sum::<f64>();
            let lt_cur = mem.iter().map(|&i| self.log_n[h][i]).sum::<f64>() - self.log_d.iter().sum::<f64>()
                + self.x_prior.log_density(&cur.mu_x, &cur.beta_x, &cur.delta_x)
                + jac(&cur)
                + self.collapsed_term(h, &cur.mu_x, &mask);
            let lt_new = mem.iter().map(|&i| new_n[i]).sum::<f64>() - new_d.iter().sum::<f64>()
                + self.x_prior.log_density(&cand.mu_x, &cand.beta_x, &cand.delta_x)
                + jac(&cand)
                + self.collapsed_term(h, &cand.mu_x, &mask);
            let log_ratio = lt_new - lt_cur;
            if (log_ratio.is_finite() || (lt_new.is_finite() && !lt_cur.is_finite()))
                && (log_ratio >= 0.0 || self.rng.comp.random::<f64>().ln() < log_ratio)
            {
                accepted = true;
                self.state.components[h] = cand;
                self.log_n[h] = new_n;
                self.log_d = new_d;
            }
        }
        self.adapt.record(h, accepted);
        self.counters.eta_x_tries[h] += 1;
        if accepted {
            self.counters.eta_x_accepts[h] += 1;
        }
        let now = pack_eta_x(&self.state.components[h]);
        self.adapt.record_sample(h, &now);
        Ok(accepted)
    }

    /// Exact draw of `η^y_h = (σ²_h, μ^y_h, β^y_h)` given `η^x_h`, `γ` and the data.
    pub fn update_eta_y(&mut self, h: usize) -> Result<()> {
        let c = &self.state.components[h];
        let post = self
            .collapsed(&self.members[h], &c.mu_x, self.state.mask(h))
            .ok_or_else(|| Error::Singular(format!("collapsed posterior of component {h}")))?;
        let rng = &mut self.rng.comp;
        let sigma2 = dist::inv_gamma(post.a1, post.b1, rng);
        let beta = dist::mvn_from_precision_chol(&post.beta1, &post.prec, sigma2, rng);
        let c = &mut self.state.components[h];
        c.sigma2 = sigma2;
        c.mu_y = beta[0];
        for (k, b) in c.beta_y.iter_mut().enumerate() {
            *b = beta[k + 1];
        }
        Ok(())
    }

    fn gamma_target_global(&self, gamma: &[bool], log_n: &[Vec<f64>], log_d: &[f64]) -> f64 {
        let sel = &self.state.selection;
        let mut lt = sel.log_prior_gamma(gamma);
        if !lt.is_finite() {
            return lt;
        }
        for (i, s) in self.state.mixing.allocations.iter().enumerate() {
            lt += log_n[*s][i] - log_d[i];
        }
        for h in 0..self.state.n_components() {
            lt += self.collapsed_term(h, &self.state.components[h].mu_x, gamma);
        }
        lt
    }

    /// Block Metropolis update of the shared indicators; redraws every `η^y_h` on acceptance.
    pub fn update_gamma_global(&mut self) -> Result<bool> {
        let l = self.state.lags();
        let flips = propose_flip_subset(l, &mut self.rng.gamma);
        let mut gamma = self.state.selection.gamma_global.clone();
        for &k in &flips {
            gamma[k] = !gamma[k];
        }
        let h = self.state.n_components();
        let new_n: Vec<Vec<f64>> = (0..h)
            .map(|j| self.kernel_log_densities(&self.state.components[j], &gamma))
            .collect();
        let lw = &self.state.mixing.log_weights;
        let mut buf = vec![0.0; h];
        let new_d: Vec<f64> = (0..self.series.n_obs())
            .map(|i| {
                for j in 0..h {
                    buf[j] = lw[j] + new_n[j][i];
                }
                log_sum_exp(&buf)
            })
            .collect();
        let lt_cur = self.gamma_target_global(&self.state.selection.gamma_global, &self.log_n, &self.log_d);
        let lt_new = self.gamma_target_global(&gamma, &new_n, &new_d);
        self.counters.gamma_tries += 1;
        if !accept(lt_new, lt_cur, &mut self.rng.gamma) {
            return Ok(false);
        }
        self.counters.gamma_accepts += 1;
        for &k in &flips {
            self.counters.gamma_switches[k] += 1;
        }
        self.state.selection.gamma_global = gamma;
        self.log_n = new_n;
        self.log_d = new_d;
        for j in 0..h {
            self.update_eta_y(j)?;
        }
        Ok(true)
    }

    /// Block Metropolis update of component `h`'s indicators, other components held fixed.
    /// The caller draws `η^y_h` afterwards.
    pub fn update_gamma_local(&mut self, h: usize) -> Result<bool> {
        let l = self.state.lags();
        let flips = propose_flip_subset(l, &mut self.rng.gamma);
        let mut gamma = self.state.selection.gamma_local[h].clone();
        for &k in &flips {
            gamma[k] = !gamma[k];
        }
        self.counters.gamma_tries += 1;
        let sel = &self.state.selection;
        let lp_new = sel.log_prior_gamma(&gamma);
        if !lp_new.is_finite() {
            return Ok(false);
        }
        let c = &self.state.components[h];
        let new_n = self.kernel_log_densities(c, &gamma);
        let rest = self.rest_log_d(h);
        let lw = self.state.mixing.log_weights[h];
        let new_d: Vec<f64> = rest.iter().zip(&new_n).map(|(r, n)| log_add_exp(*r, lw + n)).collect();
        let mem = &self.members[h];
        let cur_gamma = &sel.gamma_local[h];
        let lt_cur = sel.log_prior_gamma(cur_gamma) + mem.iter().map(|&i| self.log_n[h][i]).sum::<f64>()
            - self.log_d.iter().sum::<f64>()
            + self.collapsed_term(h, &c.mu_x, cur_gamma);
        let lt_new = lp_new + mem.iter().map(|&i| new_n[i]).sum::<f64>() - new_d.iter().sum::<f64>()
            + self.collapsed_term(h, &c.mu_x, &gamma);
        if !accept(lt_new, lt_cur, &mut self.rng.gamma) {
            return Ok(false);
        }
        self.counters.gamma_accepts += 1;
        for &k in &flips {
            self.counters.gamma_switches[k] += 1;
        }
        self.state.selection.gamma_local[h] = gamma;
        self.log_n[h] = new_n;
        self.log_d = new_d;
        Ok(true)
    }

    /// `(ξ, π^γ)` given the local indicators.
    pub fn update_pi(&mut self) {
        update_pi_gamma(&mut self.state.selection, &mut self.rng.gamma);
    }

    /// Conjugate updates of the base measure. `y`-indexed parameters use the
    /// occupied components (and are skipped when fixed); `x`-indexed
    /// parameters use all `H`.
    pub fn update_base_measure(&mut self) -> Result<()> {
        let rng = &mut self.rng.base;
        let base = &mut self.base;
        let comps = &self.state.components;
        let h = comps.len();
        if !base.fix_y_indexed {
            let occ = self.state.mixing.occupancy();
            let occupied: Vec<&ComponentParams> = comps
                .iter()
                .zip(&occ)
                .filter(|(_, n)| **n > 0)
                .map(|(c, _)| c)
                .collect();
            let n_star = occupied.len() as f64;
            let hp = &base.hyper;
            let betas: Vec<DVector<f64>> = occupied
                .iter()
                .map(|c| DVector::from_iterator(base.lags + 1, std::iter::once(c.mu_y).chain(c.beta_y.iter().copied())))
                .collect();
            let inv_s2: Vec<f64> = occupied.iter().map(|c| 1.0 / c.sigma2).collect();
            let lam0 = base.prec_star0();
            let s0_inv = dist::spd_inverse(&hp.s0_star);
            let sum_w: f64 = inv_s2.iter().sum();
            let mut sum_wb = DVector::zeros(base.lags + 1);
            for (b, w) in betas.iter().zip(&inv_s2) {
                sum_wb += b * *w;
            }
            let post_prec = dist::symmetrize(&lam0 * sum_w + &s0_inv);
            let post_cov = dist::spd_inverse(&post_prec);
            let post_mean = &post_cov * (&s0_inv * &hp.b0_star + &lam0 * sum_wb);
            base.beta_star0 = dist::mvn_from_cov(&post_mean, &post_cov, rng);

            let mut scatter = &hp.psi0_star * hp.nu_star;
            for (b, w) in betas.iter().zip(&inv_s2) {
                let d = b - &base.beta_star0;
                scatter += &d * d.transpose() * *w;
            }
            base.cov_star0 = dist::inv_wishart(hp.nu_star + n_star, &dist::symmetrize(scatter), rng);

            let shape = hp.a_s0 + base.nu_sigma2 * n_star / 2.0;
            let rate = hp.b_s0 + base.nu_sigma2 * sum_w / 2.0;
            base.s0 = dist::gamma_rate(shape, rate, rng);
        }

        let hp = &base.hyper;
        let hf = h as f64;
        let mus: Vec<DVector<f64>> = comps.iter().map(|c| DVector::from_vec(c.mu_x.clone())).collect();
        let (m, cov) = normal_mean_update(&hp.m0_x, &hp.s0_mu_x, &base.cov_mu_x, &mus);
        base.mu0_x = dist::mvn_from_cov(&m, &cov, rng);
        base.cov_mu_x = iw_update(hp.nu_mu_x, &hp.psi0_mu_x, &base.mu0_x, &mus, rng);
        if !base.diagonal {
            for r in 0..base.beta_x0.len() {
                let rows: Vec<DVector<f64>> = comps.iter().map(|c| DVector::from_vec(c.beta_x[r].clone())).collect();
                let (m, cov) = normal_mean_update(&hp.b_beta_x[r], &hp.s_beta_x[r], &base.cov_beta_x[r], &rows);
                base.beta_x0[r] = dist::mvn_from_cov(&m, &cov, rng);
                base.cov_beta_x[r] = iw_update(hp.nu_beta_x[r], &hp.psi_beta_x[r], &base.beta_x0[r], &rows, rng);
            }
        }
        for k in 0..base.lags {
            let nu = base.nu_delta_x[k];
            let sum_inv: f64 = comps.iter().map(|c| 1.0 / c.delta_x[k]).sum();
            base.s0_x[k] = dist::gamma_rate(hp.a_s0_x[k] + nu * hf / 2.0, hp.b_s0_x[k] + nu * sum_inv / 2.0, rng);
        }

        self.x_prior = XPrior::new(&self.base)?;
        if !self.base.fix_y_indexed {
            self.y_prior = YPrior::new(&self.base);
            let occ = self.state.mixing.occupancy();
            for j in 0..h {
                if occ[j] == 0 {
                    self.update_eta_y(j)?;
                }
            }
        }
        Ok(())
    }

    /// `α ~ Gamma(a_α + H − 1, b_α − log ω_H)`.
    pub fn update_alpha(&mut self) {
        let (a, b) = self.base.alpha_prior;
        let h = self.state.n_components() as f64;
        let log_last: f64 = self.state.mixing.sticks.iter().map(|v| (-v).ln_1p()).sum();
        self.state.mixing.alpha = dist::gamma_rate(a + h - 1.0, b - log_last, &mut self.rng.alpha);
    }

    /// One full sweep: allocations, sticks, components (with local indicators
    /// interleaved), global indicators, base measure, `α`.
    pub fn sweep(&mut self, update_gamma: bool) -> Result<()> {
        self.update_allocations()?;
        self.update_sticks()?;
        let mode = self.state.selection.mode;
        for h in 0..self.state.n_components() {
            self.update_eta_x(h)?;
            if update_gamma && mode == SelectionMode::Local {
                self.update_gamma_local(h)?;
            }
            self.update_eta_y(h)?;
        }
        if update_gamma {
            match mode {
                SelectionMode::Global => {
                    self.update_gamma_global()?;
                }
                SelectionMode::Local => {
                    self.update_pi();
                }
                SelectionMode::None => {}
            }
        }
        self.update_base_measure()?;
        self.update_alpha();
        Ok(())
    }

    /// Count a finished sweep toward the current adaptation batch.
    pub fn adapt_tick(&mut self) {
        if self.adapt.is_frozen() {
            return;
        }
        self.batch_count += 1;
        let len = match self.adapt.phase {
            AdaptPhase::EstimateCov => 5 * self.cfg.batch_sweeps,
            _ => self.cfg.batch_sweeps,
        };
        if self.batch_count >= len {
            self.adapt.end_batch();
            self.batch_count = 0;
        }
    }

    pub fn freeze_adaptation(&mut self) {
        self.adapt.freeze();
        self.batch_count = 0;
        let (h, l) = (self.state.n_components(), self.state.lags());
        self.counters = Counters::new(h, l);
    }
}

fn accept<R: Rng + ?Sized>(lt_new: f64, lt_cur: f64, rng: &mut R) -> bool {
    if !lt_new.is_finite() {
        return false;
    }
    if !lt_cur.is_finite() {
        return true;
    }
    let r = lt_new - lt_cur;
    r >= 0.0 || rng.random::<f64>().ln() < r
}

/// Posterior of a normal mean `m` with prior `N(m0, s0)` given draws `x_h ~ N(m, cov)`.
fn normal_mean_update(
    m0: &DVector<f64>,
    s0: &DMatrix<f64>,
    cov: &DMatrix<f64>,
    xs: &[DVector<f64>],
) -> (DVector<f64>, DMatrix<f64>) {
    let s0_inv = dist::spd_inverse(s0);
    let prec = dist::spd_inverse(cov);
    let mut sum = DVector::zeros(m0.len());
    for x in xs {
        sum += x;
    }
    let post_prec = dist::symmetrize(&prec * xs.len() as f64 + &s0_inv);
    let post_cov = dist::symmetrize(dist::spd_inverse(&post_prec));
    let mean = &post_cov * (&s0_inv * m0 + &prec * sum);
    (mean, post_cov)
}

/// `IW(ν + H, νΨ + Σ_h (x_h − m)(x_h − m)')`.
fn iw_update<R: Rng + ?Sized>(
    nu: f64,
    psi: &DMatrix<f64>,
    m: &DVector<f64>,
    xs: &[DVector<f64>],
    rng: &mut R,
) -> DMatrix<f64> {
    let mut scatter = psi * nu;
    for x in xs {
        let d = x - m;
        scatter += &d * d.transpose();
    }
    dist::inv_wishart(nu + xs.len() as f64, &dist::symmetrize(scatter), rng)
}
