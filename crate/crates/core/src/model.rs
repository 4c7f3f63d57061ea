//! Model state, stick-breaking weights, lag-dependent mixture weights and the
//! transition functionals derived from them.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::lagselect::LagSelectionState;
use crate::linalg::{log_sum_exp, normal_logpdf, CholFactor, LN_2PI};

/// A univariate series with its lag embedding. Observation `i` (0-based) is
/// `y_{L+1+i}` in 1-based time and its design row is `(y_{t-1}, ..., y_{t-L})`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesData {
    values: Vec<f64>,
    max_lag: usize,
    design: Vec<f64>,
}

impl SeriesData {
    pub fn new(values: Vec<f64>, max_lag: usize) -> Result<Self> {
        if max_lag == 0 {
            return Err(Error::Domain("max lag must be at least 1".into()));
        }
        if values.len() <= max_lag {
            return Err(Error::DegenerateSeries(format!(
                "series of length {} needs more than {max_lag} values",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::DegenerateSeries(format!("non-finite value at index {i}")));
        }
        let n = values.len() - max_lag;
        let mut design = Vec::with_capacity(n * max_lag);
        for i in 0..n {
            let t = max_lag + i;
            for l in 1..=max_lag {
                design.push(values[t - l]);
            }
        }
        Ok(Self {
            values,
            max_lag,
            design,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    /// Length of the full series, `T`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of terms in the conditional likelihood, `T - L`.
    pub fn n_obs(&self) -> usize {
        self.values.len() - self.max_lag
    }

    pub fn response(&self, i: usize) -> f64 {
        self.values[self.max_lag + i]
    }

    pub fn design_row(&self, i: usize) -> &[f64] {
        &self.design[i * self.max_lag..(i + 1) * self.max_lag]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn range(&self) -> f64 {
        let (lo, hi) = self.min_max();
        hi - lo
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(*v), hi.max(*v))
            })
    }

    /// The last `L` values ordered as a design row for forecasting `y_{T+1}`.
    pub fn tail_lags(&self) -> Vec<f64> {
        let t = self.values.len();
        (1..=self.max_lag).map(|l| self.values[t - l]).collect()
    }
}

/// Parameters `η_h` of one mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentParams {
    pub mu_y: f64,
    pub beta_y: Vec<f64>,
    pub sigma2: f64,
    pub mu_x: Vec<f64>,
    /// Row `ℓ` holds `β^x_{ℓ, ℓ+1..L}`; empty when the weight kernel is diagonal.
    pub beta_x: Vec<Vec<f64>>,
    pub delta_x: Vec<f64>,
}

impl ComponentParams {
    pub fn lags(&self) -> usize {
        self.mu_x.len()
    }

    pub fn is_diagonal(&self) -> bool {
        self.beta_x.is_empty()
    }

    pub fn beta_x_at(&self, l: usize, r: usize) -> f64 {
        if self.beta_x.is_empty() {
            0.0
        } else {
            self.beta_x[l][r - l - 1]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.lags();
        for (what, len) in [("beta_y", self.beta_y.len()), ("delta_x", self.delta_x.len())] {
            if len != l {
                return Err(Error::Dimension {
                    what,
                    expected: l,
                    got: len,
                });
            }
        }
        self.factor().map(|_| ())
    }

    pub fn factor(&self) -> Result<CholFactor> {
        CholFactor::new(
            self.beta_y.clone(),
            self.beta_x.clone(),
            self.delta_x.clone(),
            self.sigma2,
        )
    }

    /// `μ^y − Σ γ_ℓ β^y_ℓ (x_ℓ − μ^x_ℓ)`.
    pub fn kernel_mean(&self, x: &[f64], mask: &[bool]) -> f64 {
        let mut m = self.mu_y;
        for l in 0..self.lags() {
            if mask[l] {
                m -= self.beta_y[l] * (x[l] - self.mu_x[l]);
            }
        }
        m
    }

    /// Intercept of the kernel regression in standard form, `μ^y + Σ γ_ℓ β^y_ℓ μ^x_ℓ`.
    pub fn intercept(&self, mask: &[bool]) -> f64 {
        let mut c = self.mu_y;
        for l in 0..self.lags() {
            if mask[l] {
                c += self.beta_y[l] * self.mu_x[l];
            }
        }
        c
    }

    /// Standard autoregressive slopes `-γ_ℓ β^y_ℓ`.
    pub fn ar_coefficients(&self, mask: &[bool]) -> Vec<f64> {
        self.beta_y
            .iter()
            .zip(mask)
            .map(|(b, on)| if *on { -b } else { 0.0 })
            .collect()
    }

    pub fn weight_kernel(&self, mask: &[bool]) -> WeightKernel {
        WeightKernel::new(self, mask)
    }

    pub fn weight_log_density(&self, x: &[f64], mask: &[bool]) -> f64 {
        self.weight_kernel(mask).log_density(x)
    }
}

/// The masked weight kernel `N_(h)(x)` prepared for repeated evaluation.
#[derive(Debug, Clone)]
pub struct WeightKernel {
    mu: Vec<f64>,
    /// Active lag indices in increasing order.
    active: Vec<usize>,
    /// `β^x` restricted to active pairs: `coef[i][j]` for `j > i` in active order.
    coef: Vec<Vec<f64>>,
    inv_delta: Vec<f64>,
    log_norm: f64,
}

impl WeightKernel {
    pub fn new(params: &ComponentParams, mask: &[bool]) -> Self {
        let active: Vec<usize> = (0..params.lags()).filter(|l| mask[*l]).collect();
        let coef = if params.is_diagonal() {
            Vec::new()
        } else {
            active
                .iter()
                .enumerate()
                .map(|(i, &l)| active[i + 1..].iter().map(|&r| params.beta_x_at(l, r)).collect())
                .collect()
        };
        let inv_delta = active.iter().map(|&l| 1.0 / params.delta_x[l]).collect();
        let log_norm = active.iter().map(|&l| -0.5 * (LN_2PI + params.delta_x[l].ln())).sum();
        Self {
            mu: params.mu_x.clone(),
            active,
            coef,
            inv_delta,
            log_norm,
        }
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let k = self.active.len();
        if k == 0 {
            return 0.0;
        }
        let mut quad = 0.0;
        if self.coef.is_empty() {
            for (i, &l) in self.active.iter().enumerate() {
                let d = x[l] - self.mu[l];
                quad += d * d * self.inv_delta[i];
            }
        } else {
            for i in 0..k {
                let l = self.active[i];
                let mut d = x[l] - self.mu[l];
                for (j, b) in self.coef[i].iter().enumerate() {
                    let r = self.active[i + 1 + j];
                    d += b * (x[r] - self.mu[r]);
                }
                quad += d * d * self.inv_delta[i];
            }
        }
        self.log_norm - 0.5 * quad
    }
}

/// Stick-breaking variables, log-weights, allocations and concentration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingState {
    pub sticks: Vec<f64>,
    pub log_weights: Vec<f64>,
    /// 0-based component labels, one per likelihood term.
    pub allocations: Vec<usize>,
    pub alpha: f64,
}

impl MixingState {
    pub fn new(sticks: Vec<f64>, allocations: Vec<usize>, alpha: f64) -> Result<Self> {
        let log_weights = log_stick_break(&sticks)?;
        let h = log_weights.len();
        if let Some(s) = allocations.iter().find(|s| **s >= h) {
            return Err(Error::Domain(format!("allocation {s} outside 0..{h}")));
        }
        if !(alpha > 0.0) {
            return Err(Error::Domain(format!("alpha = {alpha} must be positive")));
        }
        Ok(Self {
            sticks,
            log_weights,
            allocations,
            alpha,
        })
    }

    pub fn n_components(&self) -> usize {
        self.log_weights.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    pub fn set_sticks(&mut self, sticks: Vec<f64>) -> Result<()> {
        self.log_weights = log_stick_break(&sticks)?;
        self.sticks = sticks;
        Ok(())
    }

    pub fn occupancy(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_components()];
        for s in &self.allocations {
            counts[*s] += 1;
        }
        counts
    }

    pub fn n_occupied(&self) -> usize {
        self.occupancy().iter().filter(|c| **c > 0).count()
    }

    /// `log ω_H = Σ_h log(1 − v_h)`, accumulated without exponentiating.
    pub fn log_last_weight(&self) -> f64 {
        *self.log_weights.last().expect("at least one component")
    }
}

fn check_sticks(sticks: &[f64]) -> Result<()> {
    if let Some(v) = sticks.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::Domain(format!("stick {v} outside (0, 1)")));
    }
    Ok(())
}

/// `ω_h = v_h Π_{j<h} (1 − v_j)` with `ω_H = Π_j (1 − v_j)`.
pub fn stick_break(sticks: &[f64]) -> Result<Vec<f64>> {
    check_sticks(sticks)?;
    let mut weights = Vec::with_capacity(sticks.len() + 1);
    let mut remaining = 1.0;
    for v in sticks {
        weights.push(v * remaining);
        remaining *= 1.0 - v;
    }
    weights.push(remaining);
    Ok(weights)
}

pub fn log_stick_break(sticks: &[f64]) -> Result<Vec<f64>> {
    check_sticks(sticks)?;
    Ok(log_stick_break_unchecked(sticks))
}

pub(crate) fn log_stick_break_unchecked(sticks: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(sticks.len() + 1);
    let mut acc = 0.0;
    for v in sticks {
        out.push(v.ln() + acc);
        acc += (-v).ln_1p();
    }
    out.push(acc);
    out
}

/// Prior expectation of the last weight, `[α / (1 + α)]^{H−1}`.
pub fn truncation_error_expectation(alpha: f64, h: usize) -> f64 {
    (alpha / (1.0 + alpha)).powi(h as i32 - 1)
}

/// `q_h(x) = ω_h N_(h)(x) / Σ_j ω_j N_(j)(x)`, with each component's own mask.
pub fn mixture_weights_q<'a, M>(
    x: &[f64],
    components: &[ComponentParams],
    log_weights: &[f64],
    mask: M,
) -> Result<Vec<f64>>
where
    M: Fn(usize) -> &'a [bool],
{
    let logs: Vec<f64> = components
        .iter()
        .enumerate()
        .map(|(h, c)| log_weights[h] + c.weight_log_density(x, mask(h)))
        .collect();
    normalize_log_weights(&logs)
}

pub(crate) fn normalize_log_weights(logs: &[f64]) -> Result<Vec<f64>> {
    let total = log_sum_exp(logs);
    if total == f64::NEG_INFINITY || !total.is_finite() {
        return Err(Error::Underflow(format!("log normalizer {total}")));
    }
    Ok(logs.iter().map(|l| (l - total).exp()).collect())
}

/// Full parameter state of one posterior draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub components: Vec<ComponentParams>,
    pub mixing: MixingState,
    pub selection: LagSelectionState,
}

impl ModelState {
    pub fn lags(&self) -> usize {
        self.components[0].lags()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Effective lag mask of component `h`.
    pub fn mask(&self, h: usize) -> &[bool] {
        self.selection.mask(h)
    }

    pub fn q_weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        mixture_weights_q(x, &self.components, &self.mixing.log_weights, |h| self.mask(h))
    }

    pub fn transition_at(&self, x: &[f64]) -> Result<TransitionAt> {
        let q = self.q_weights(x)?;
        let means = self
            .components
            .iter()
            .enumerate()
            .map(|(h, c)| c.kernel_mean(x, self.mask(h)))
            .collect();
        let sds = self.components.iter().map(|c| c.sigma2.sqrt()).collect();
        Ok(TransitionAt { q, means, sds })
    }
}

/// The Gaussian mixture `Σ_h q_h(x) N(y | μ_h(x), σ²_h)` at a fixed lag vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionAt {
    pub q: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

impl TransitionAt {
    pub fn density(&self, y: f64) -> f64 {
        self.log_density(y).exp()
    }

    pub fn log_density(&self, y: f64) -> f64 {
        let terms: Vec<f64> = self
            .q
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .filter(|(q, _)| **q > 0.0)
            .map(|(q, (m, s))| q.ln() + normal_logpdf(y, *m, s * s))
            .collect();
        log_sum_exp(&terms)
    }

    /// Precomputed form of [`Self::log_density`] for evaluating many ordinates.
    pub fn log_density_evaluator(&self) -> LogDensityEval {
        let mut eval = LogDensityEval {
            consts: Vec::new(),
            means: Vec::new(),
            half_prec: Vec::new(),
        };
        for ((q, m), s) in self.q.iter().zip(&self.means).zip(&self.sds) {
            if *q > 0.0 {
                eval.consts.push(q.ln() - s.ln() - 0.5 * LN_2PI);
                eval.means.push(*m);
                eval.half_prec.push(0.5 / (s * s));
            }
        }
        eval
    }

    pub fn mean(&self) -> f64 {
        self.q.iter().zip(&self.means).map(|(q, m)| q * m).sum()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        self.q
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(q, (m, s))| q * std_normal_cdf((y - m) / s))
            .sum()
    }

    /// Root of `u − F(y)` by bisection on a bracket that always contains it,
    /// then a few guarded Newton steps.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain(format!("quantile level {u} outside (0, 1)")));
        }
        let max_sd = self.sds.iter().copied().fold(0.0, f64::max);
        let lo0 = self.means.iter().copied().fold(f64::INFINITY, f64::min) - 10.0 * max_sd;
        let hi0 = self.means.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 10.0 * max_sd;
        let (mut lo, mut hi) = (lo0, hi0);
        if self.cdf(lo) > u || self.cdf(hi) < u {
            return Err(Error::BracketFailure(u));
        }
        while hi - lo > 1e-10 * (1.0 + lo.abs().max(hi.abs())) {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut y = 0.5 * (lo + hi);
        for _ in 0..3 {
            let f = self.cdf(y) - u;
            let d = self.density(y);
            if d <= 0.0 {
                break;
            }
            let next = y - f / d;
            if next < lo0 || next > hi0 || (self.cdf(next) - u).abs() > f.abs() {
                break;
            }
            y = next;
        }
        Ok(y)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let h = sample_categorical(&self.q, rng);
        let z: f64 = StandardNormal.sample(rng);
        self.means[h] + self.sds[h] * z
    }
}

/// Log-density of a fixed Gaussian mixture with per-component constants cached.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDensityEval {
    consts: Vec<f64>,
    means: Vec<f64>,
    half_prec: Vec<f64>,
}

impl LogDensityEval {
    pub fn eval(&self, y: f64) -> f64 {
        let term = |k: usize| self.consts[k] - self.half_prec[k] * (y - self.means[k]).powi(2);
        let n = self.consts.len();
        let max = (0..n).map(term).fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return max;
        }
        max + (0..n).map(|k| (term(k) - max).exp()).sum::<f64>().ln()
    }
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            last = i;
            if u < *p {
                return i;
            }
            u -= p;
        }
    }
    last
}

pub fn transition_density(y: f64, x: &[f64], state: &ModelState) -> Result<f64> {
    Ok(state.transition_at(x)?.density(y))
}

pub fn transition_mean(x: &[f64], state: &ModelState) -> Result<f64> {
    Ok(state.transition_at(x)?.mean())
}

pub fn transition_quantile(u: f64, x: &[f64], state: &ModelState) -> Result<f64> {
    state.transition_at(x)?.quantile(u)
}

/// `Σ_t log f(y_t | y_{t-1}, ..., y_{t-L})` over the conditional likelihood terms.
pub fn log_likelihood(series: &SeriesData, state: &ModelState) -> Result<f64> {
    let kernels: Vec<WeightKernel> = state
        .components
        .iter()
        .enumerate()
        .map(|(h, c)| c.weight_kernel(state.mask(h)))
        .collect();
    let h_count = state.n_components();
    let mut num = vec![0.0; h_count];
    let mut den = vec![0.0; h_count];
    let mut total = 0.0;
    for t in 0..series.n_obs() {
        let x = series.design_row(t);
        let y = series.response(t);
        for h in 0..h_count {
            let c = &state.components[h];
            let lw = state.mixing.log_weights[h] + kernels[h].log_density(x);
            den[h] = lw;
            num[h] = lw + normal_logpdf(y, c.kernel_mean(x, state.mask(h)), c.sigma2);
        }
        let term = log_sum_exp(&num) - log_sum_exp(&den);
        if !term.is_finite() {
            return Err(Error::NonFiniteDensity { t });
        }
        total += term;
    }
    Ok(total)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::lagselect::SelectionMode;
    use crate::linalg::{gaussian_logpdf, GaussianParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_component(rng: &mut ChaCha8Rng, l: usize, diagonal: bool) -> ComponentParams {
        ComponentParams {
            mu_y: rng.random_range(-2.0..2.0),
            beta_y: (0..l).map(|_| rng.random_range(-1.5..1.5)).collect(),
            sigma2: rng.random_range(0.05..2.0),
            mu_x: (0..l).map(|_| rng.random_range(-2.0..2.0)).collect(),
            beta_x: if diagonal {
                Vec::new()
            } else {
                (0..l)
                    .map(|row| (0..l - row - 1).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect()
            },
            delta_x: (0..l).map(|_| rng.random_range(0.2..3.0)).collect(),
        }
    }

    pub(crate) fn random_state(rng: &mut ChaCha8Rng, l: usize, h: usize, diagonal: bool) -> ModelState {
        let components = (0..h).map(|_| random_component(rng, l, diagonal)).collect();
        let sticks = (0..h - 1).map(|_| rng.random_range(0.05..0.95)).collect();
        let mut mixing = MixingState::new(sticks, Vec::new(), 1.0).unwrap();
        if h == 1 {
            mixing.log_weights = vec![0.0];
        }
        ModelState {
            components,
            mixing,
            selection: LagSelectionState::new(SelectionMode::None, l, h),
        }
    }

    fn single(l: usize) -> ModelState {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        random_state(&mut rng, l, 1, true)
    }

    #[test]
    fn series_design_rows() {
        let s = SeriesData::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], 2).unwrap();
        assert_eq!(s.n_obs(), 3);
        assert_eq!(s.design_row(0), &[2.0, 1.0]);
        assert_eq!(s.design_row(2), &[4.0, 3.0]);
        assert_eq!(s.response(2), 5.0);
        assert_eq!(s.tail_lags(), vec![5.0, 4.0]);
        assert!(SeriesData::new(vec![1.0, 2.0], 2).is_err());
        assert!(SeriesData::new(vec![1.0, f64::NAN, 3.0], 1).is_err());
    }

    #[test]
    fn stick_break_examples() {
        assert_eq!(stick_break(&[0.5, 0.5]).unwrap(), vec![0.5, 0.25, 0.25]);
        let w = stick_break(&[1.0 - 1e-12, 0.3]).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-11 && w[1] < 1e-11);
        assert!(stick_break(&[0.0]).is_err());
        assert!(stick_break(&[1.0]).is_err());
    }

    #[test]
    fn stick_break_matches_direct_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let v: Vec<f64> = (0..39).map(|_| rng.random_range(0.001..0.999)).collect();
            let w = stick_break(&v).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for h in 0..39 {
                let direct = v[h] * (0..h).map(|j| 1.0 - v[j]).product::<f64>();
                assert!((w[h] - direct).abs() < 1e-15);
            }
            let lw = log_stick_break(&v).unwrap();
            for h in 0..40 {
                assert!((lw[h].exp() - w[h]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn truncation_expectation_values() {
        assert_eq!(truncation_error_expectation(1.0, 2), 0.5);
        assert!((truncation_error_expectation(1.0, 11) - 2f64.powi(-10)).abs() < 1e-18);
        assert!(truncation_error_expectation(1.0, 12) < truncation_error_expectation(1.0, 11));
        assert!(truncation_error_expectation(2.0, 11) > truncation_error_expectation(1.0, 11));
    }

    #[test]
    fn truncation_expectation_monte_carlo() {
        use rand_distr::Beta;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let beta = Beta::new(1.0, 5.0).unwrap();
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| (0..39).map(|_| 1.0 - beta.sample(&mut rng)).product())
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let exact = truncation_error_expectation(5.0, 40);
        assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
    }

    #[test]
    fn q_single_component_and_identical_kernels() {
        let s = single(2);
        assert_eq!(s.q_weights(&[0.3, -1.0]).unwrap(), vec![1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut st = random_state(&mut rng, 2, 3, false);
        let proto = st.components[0].clone();
        for c in st.components.iter_mut() {
            c.mu_x = proto.mu_x.clone();
            c.beta_x = proto.beta_x.clone();
            c.delta_x = proto.delta_x.clone();
        }
        let q = st.q_weights(&[1.0, 2.0]).unwrap();
        let w = st.mixing.weights();
        for h in 0..3 {
            assert!((q[h] - w[h]).abs() < 1e-15);
        }
    }

    #[test]
    fn q_two_component_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let st = random_state(&mut rng, 1, 2, true);
        let x = [0.7];
        let q = st.q_weights(&x).unwrap();
        let w = st.mixing.weights();
        let dens = |c: &ComponentParams| {
            let d = x[0] - c.mu_x[0];
            (-0.5 * d * d / c.delta_x[0]).exp() / (2.0 * std::f64::consts::PI * c.delta_x[0]).sqrt()
        };
        let a = w[0] * dens(&st.components[0]);
        let b = w[1] * dens(&st.components[1]);
        assert!((q[0] / q[1] - a / b).abs() < 1e-12 * (a / b));
    }

    #[test]
    fn all_off_mask_gives_omega() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut st = random_state(&mut rng, 3, 4, false);
        st.selection = LagSelectionState::new(SelectionMode::Global, 3, 4);
        st.selection.gamma_global = vec![false; 3];
        let q = st.q_weights(&[5.0, -3.0, 1.0]).unwrap();
        let w = st.mixing.weights();
        for h in 0..4 {
            assert!((q[h] - w[h]).abs() < 1e-15);
        }
        let tr = st.transition_at(&[5.0, -3.0, 1.0]).unwrap();
        for h in 0..4 {
            assert_eq!(tr.means[h], st.components[h].mu_y);
        }
    }

    #[test]
    fn masked_kernel_matches_subset_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = random_component(&mut rng, 3, false);
        let x = [0.4, -1.2, 2.0];
        let mask = [true, false, true];
        // Subset of the factorization inputs over lags {1, 3}.
        let sub = CholFactor::new(
            vec![0.0, 0.0],
            vec![vec![c.beta_x_at(0, 2)], vec![]],
            vec![c.delta_x[0], c.delta_x[2]],
            1.0,
        )
        .unwrap();
        let cov = crate::linalg::marginal_lag_covariance(&sub).unwrap();
        let p = GaussianParams::new(nalgebra::DVector::from_vec(vec![c.mu_x[0], c.mu_x[2]]), cov).unwrap();
        let dense = gaussian_logpdf(&p, &[x[0], x[2]]).unwrap();
        assert!((c.weight_log_density(&x, &mask) - dense).abs() < 1e-12);
    }

    #[test]
    fn weight_kernel_matches_dense_marginal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let c = random_component(&mut rng, 4, false);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let cov = crate::linalg::marginal_lag_covariance(&c.factor().unwrap()).unwrap();
            let p = GaussianParams::new(nalgebra::DVector::from_column_slice(&c.mu_x), cov).unwrap();
            let dense = gaussian_logpdf(&p, &x).unwrap();
            assert!((c.weight_log_density(&x, &[true; 4]) - dense).abs() < 1e-9);
        }
    }

    #[test]
    fn numerator_denominator_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for case in 0..300 {
            let h = 1 + case % 3;
            let st = random_state(&mut rng, 2, h, false);
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = rng.random_range(-3.0..3.0);
            let w = st.mixing.weights();
            let mut den = 0.0;
            let mut joint = 0.0;
            for (k, c) in st.components.iter().enumerate() {
                den += w[k] * c.weight_log_density(&x, &[true, true]).exp();
                let p = GaussianParams::from_factor(&c.factor().unwrap(), &[c.mu_y, c.mu_x[0], c.mu_x[1]]).unwrap();
                joint += w[k] * gaussian_logpdf(&p, &[y, x[0], x[1]]).unwrap().exp();
            }
            let lhs = transition_density(y, &x, &st).unwrap() * den;
            assert!(
                (lhs - joint).abs() < 1e-8 * joint.max(1e-300).max(1.0),
                "{lhs} vs {joint}"
            );
            assert!(((lhs - joint) / joint).abs() < 1e-8);
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for h in 1..=5 {
            let st = random_state(&mut rng, 2, h, false);
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let tr = st.transition_at(&x).unwrap();
            let max_sd = tr.sds.iter().copied().fold(0.0, f64::max);
            let lo = tr.means.iter().copied().fold(f64::INFINITY, f64::min) - 12.0 * max_sd;
            let hi = tr.means.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 12.0 * max_sd;
            let n = 20_000;
            let step = (hi - lo) / n as f64;
            // Composite Simpson.
            let mut total = tr.density(lo) + tr.density(hi);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                total += w * tr.density(lo + i as f64 * step);
            }
            total *= step / 3.0;
            assert!((total - 1.0).abs() < 1e-6, "H = {h}: {total}");
        }
    }

    #[test]
    fn cached_evaluator_matches_log_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for h in 1..=6 {
            let st = random_state(&mut rng, 3, h, false);
            let tr = st.transition_at(&[0.3, -1.0, 2.0]).unwrap();
            let ev = tr.log_density_evaluator();
            for y in [-40.0, -2.0, 0.0, 0.7, 5.0, 300.0] {
                let (a, b) = (tr.log_density(y), ev.eval(y));
                assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn single_component_functionals() {
        let s = single(1);
        let c = &s.components[0];
        let x = [0.25];
        let m = c.kernel_mean(&x, &[true]);
        assert_eq!(transition_mean(&x, &s).unwrap(), m);
        let y = 0.9;
        let expected = normal_logpdf(y, m, c.sigma2).exp();
        assert!((transition_density(y, &x, &s).unwrap() - expected).abs() < 1e-15);
        let u = 0.8;
        let z = 0.841_621_233_572_914_2;
        let qv = transition_quantile(u, &x, &s).unwrap();
        assert!((qv - (m + c.sigma2.sqrt() * z)).abs() < 1e-9);
    }

    #[test]
    fn symmetric_mixture_mean_and_median() {
        let tr = TransitionAt {
            q: vec![0.5, 0.5],
            means: vec![1.5, -1.5],
            sds: vec![0.7, 0.7],
        };
        assert_eq!(tr.mean(), 0.0);
        assert!(tr.quantile(0.5).unwrap().abs() < 1e-9);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let st = random_state(&mut rng, 2, 3, true);
            let tr = st.transition_at(&[0.1, -0.4]).unwrap();
            let mut prev = f64::NEG_INFINITY;
            for u in [0.001, 0.1, 0.3, 0.5, 0.8, 0.999] {
                let y = tr.quantile(u).unwrap();
                assert!((tr.cdf(y) - u).abs() < 1e-8, "u = {u}");
                assert!(y > prev);
                prev = y;
            }
        }
    }

    #[test]
    fn mean_lies_between_kernel_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let st = random_state(&mut rng, 3, 4, false);
            let tr = st.transition_at(&[0.0, 1.0, -1.0]).unwrap();
            let m = tr.mean();
            let lo = tr.means.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = tr.means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
        }
    }

    #[test]
    fn mean_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let st = random_state(&mut rng, 2, 3, false);
        for x in [[-1.0, 0.5], [0.0, 0.0], [1.5, -0.5]] {
            let tr = st.transition_at(&x).unwrap();
            let n = 50_000;
            let draws: Vec<f64> = (0..n).map(|_| tr.sample(&mut rng)).collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((mean - tr.mean()).abs() < 3.0 * (var / n as f64).sqrt());
        }
    }

    #[test]
    fn log_likelihood_single_term_and_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let st = random_state(&mut rng, 2, 3, false);
        let s = SeriesData::new(vec![0.3, -0.2, 0.8], 2).unwrap();
        let ll = log_likelihood(&s, &st).unwrap();
        let direct = transition_density(0.8, &[-0.2, 0.3], &st).unwrap().ln();
        assert!((ll - direct).abs() < 1e-12);

        let values: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..2.0)).collect();
        let s = SeriesData::new(values, 2).unwrap();
        let ll = log_likelihood(&s, &st).unwrap();
        let sum: f64 = (0..s.n_obs())
            .map(|t| transition_density(s.response(t), s.design_row(t), &st).unwrap().ln())
            .sum();
        assert!((ll - sum).abs() < 1e-10);
    }

    #[test]
    fn log_likelihood_gaussian_ar() {
        // With one component the model is a Gaussian AR(L) with slopes -β^y.
        let mut st = single(2);
        let c = &mut st.components[0];
        c.mu_y = 1.0;
        c.mu_x = vec![0.5, 0.5];
        c.beta_y = vec![-0.6, 0.2];
        c.sigma2 = 0.4;
        let values = vec![0.1, 0.9, 1.3, 0.7, 1.1, 0.4, 0.8];
        let s = SeriesData::new(values.clone(), 2).unwrap();
        let ll = log_likelihood(&s, &st).unwrap();
        let (c0, phi1, phi2) = (1.0 - 0.6 * 0.5 + 0.2 * 0.5, 0.6, -0.2);
        let mut expected = 0.0;
        for t in 2..values.len() {
            let m = c0 + phi1 * values[t - 1] + phi2 * values[t - 2];
            let r = values[t] - m;
            expected += -0.5 * (2.0 * std::f64::consts::PI * 0.4).ln() - r * r / 0.8;
        }
        assert!((ll - expected).abs() < 1e-12);
        assert!((st.components[0].intercept(&[true, true]) - c0).abs() < 1e-15);
    }

    #[test]
    fn masking_is_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut st = random_state(&mut rng, 3, 4, false);
        st.selection = LagSelectionState::new(SelectionMode::Global, 3, 4);
        st.selection.gamma_global = vec![true, false, true];
        let base = transition_density(0.4, &[0.2, 0.1, -0.3], &st).unwrap();
        for alt in [-100.0, -1.0, 0.0, 7.5, 1e6] {
            assert_eq!(transition_density(0.4, &[0.2, alt, -0.3], &st).unwrap(), base);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn q_sums_to_one(seed in any::<u64>(), h in 1usize..6, l in 1usize..4) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let st = random_state(&mut rng, l, h, seed % 2 == 0);
                let x: Vec<f64> = (0..l).map(|_| rng.random_range(-4.0..4.0)).collect();
                let q = st.q_weights(&x).unwrap();
                prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-10);
                prop_assert!(q.iter().all(|v| *v >= 0.0));
            }

            #[test]
            fn q_invariant_to_common_shift(seed in any::<u64>(), shift in -50.0f64..50.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let st = random_state(&mut rng, 2, 4, true);
                let x = [0.3, -0.8];
                let logs: Vec<f64> = (0..4)
                    .map(|h| st.mixing.log_weights[h] + st.components[h].weight_log_density(&x, &[true, true]))
                    .collect();
                let shifted: Vec<f64> = logs.iter().map(|v| v + shift).collect();
                let a = normalize_log_weights(&logs).unwrap();
                let b = normalize_log_weights(&shifted).unwrap();
                for (u, v) in a.iter().zip(&b) {
                    prop_assert!((u - v).abs() < 1e-12);
                }
            }

            #[test]
            fn quantile_is_monotone(seed in any::<u64>(), u1 in 0.001f64..0.999, u2 in 0.001f64..0.999) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let st = random_state(&mut rng, 1, 3, true);
                let tr = st.transition_at(&[0.5]).unwrap();
                let (a, b) = (tr.quantile(u1.min(u2)).unwrap(), tr.quantile(u1.max(u2)).unwrap());
                prop_assert!(a <= b + 1e-12);
            }
        }
    }
}
