//! Synthetic series (Ricker variants and a stationary AR(2)) with their true
//! transition densities, and posterior forecast paths.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::std_normal;
use crate::error::{Error, Result};
use crate::linalg::{normal_logpdf, LN_2PI};
use crate::model::ModelState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum SimKind {
    RickerNormal,
    RickerLogNormal1,
    RickerLogNormal2,
    Ar2,
}

impl std::str::FromStr for SimKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rickerNormal" => Ok(Self::RickerNormal),
            "rickerLogNormal1" => Ok(Self::RickerLogNormal1),
            "rickerLogNormal2" => Ok(Self::RickerLogNormal2),
            "ar2" => Ok(Self::Ar2),
            other => Err(Error::Config(format!("unknown simulation kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct SimParams {
    /// Ricker growth constant.
    pub growth: f64,
    /// Ricker noise scale (additive sd, or log-scale sd).
    pub noise_sd: f64,
    pub mu: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub sigma2: f64,
    /// `(y_{-1}, y_0)`; random Uniform(0.5, 4) draws (Ricker) or `(μ, μ)` (AR) when absent.
    pub initial: Option<(f64, f64)>,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            growth: 2.6,
            noise_sd: 0.09,
            mu: 2.5,
            phi1: 1.2,
            phi2: -0.7,
            sigma2: 1.0,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct SimSpec {
    pub kind: SimKind,
    pub length: usize,
    #[serde(default = "default_burn")]
    pub burn: usize,
    pub seed: u64,
    #[serde(default)]
    pub params: SimParams,
}

fn default_burn() -> usize {
    500
}

impl SimSpec {
    pub fn new(kind: SimKind, length: usize, seed: u64) -> Self {
        Self {
            kind,
            length,
            burn: default_burn(),
            seed,
            params: SimParams::default(),
        }
    }

    pub fn generator(&self) -> Generator {
        Generator {
            kind: self.kind,
            params: self.params.clone(),
        }
    }
}

/// A true conditional density used for scoring fits.
pub trait TransitionOracle: Sync {
    /// Number of lags the oracle reads from `x = (y_{t-1}, y_{t-2}, ...)`.
    fn lags(&self) -> usize;
    fn log_density(&self, y: f64, x: &[f64]) -> f64;
    fn mean(&self, x: &[f64]) -> f64;
    fn sample(&self, x: &[f64], rng: &mut dyn rand::RngCore) -> f64;
}

/// One data-generating process.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub kind: SimKind,
    pub params: SimParams,
}

impl Generator {
    pub fn new(kind: SimKind) -> Self {
        Self {
            kind,
            params: SimParams::default(),
        }
    }

    /// Noiseless Ricker map `y exp(r − y)`.
    pub fn ricker_map(&self, y2: f64) -> f64 {
        y2 * (self.params.growth - y2).exp()
    }

    /// Location and scale of the conditional: Normal `(mean, sd)` for the
    /// Gaussian kinds, `(log-mean, log-sd)` for the log-normal ones.
    fn location_scale(&self, x: &[f64]) -> (f64, f64) {
        let p = &self.params;
        match self.kind {
            SimKind::RickerNormal => (self.ricker_map(x[1]), p.noise_sd),
            SimKind::RickerLogNormal1 => (x[1].ln() + p.growth - x[1], p.noise_sd),
            SimKind::RickerLogNormal2 => (x[1].ln() + p.growth - x[1], p.noise_sd * x[0]),
            SimKind::Ar2 => (p.mu + p.phi1 * (x[0] - p.mu) + p.phi2 * (x[1] - p.mu), p.sigma2.sqrt()),
        }
    }

    fn is_lognormal(&self) -> bool {
        matches!(self.kind, SimKind::RickerLogNormal1 | SimKind::RickerLogNormal2)
    }

    /// Draw `y_t` given `x = (y_{t-1}, y_{t-2})`.
    pub fn step<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> f64 {
        let (m, s) = self.location_scale(x);
        let z = m + s * std_normal(rng);
        if self.is_lognormal() {
            z.exp()
        } else {
            z
        }
    }

    /// Conditional median; equal to the mean for the Gaussian kinds.
    pub fn median(&self, x: &[f64]) -> f64 {
        let (m, _) = self.location_scale(x);
        if self.is_lognormal() {
            m.exp()
        } else {
            m
        }
    }

    /// Conditional CDF.
    pub fn cdf(&self, y: f64, x: &[f64]) -> f64 {
        let (m, s) = self.location_scale(x);
        let arg = if self.is_lognormal() {
            if y <= 0.0 {
                return 0.0;
            }
            y.ln()
        } else {
            y
        };
        if s == 0.0 {
            return if arg >= m { 1.0 } else { 0.0 };
        }
        0.5 * statrs::function::erf::erfc(-(arg - m) / (s * std::f64::consts::SQRT_2))
    }

    /// Generate `length` values after discarding `burn` transitions.
    pub fn generate<R: Rng + ?Sized>(&self, length: usize, burn: usize, rng: &mut R) -> Result<Vec<f64>> {
        if length == 0 {
            return Err(Error::Domain("series length must be positive".into()));
        }
        let (a, b) = match (self.params.initial, self.kind) {
            (Some(init), _) => init,
            (None, SimKind::Ar2) => (self.params.mu, self.params.mu),
            (None, _) => (rng.random_range(0.5..4.0), rng.random_range(0.5..4.0)),
        };
        let (mut y2, mut y1) = (a, b);
        let mut out = Vec::with_capacity(length);
        for t in 0..burn + length {
            let y = self.step(&[y1, y2], rng);
            if !y.is_finite() {
                return Err(Error::DegenerateSeries(format!("simulated value {y} at step {t}")));
            }
            if t >= burn {
                out.push(y);
            }
            y2 = y1;
            y1 = y;
        }
        Ok(out)
    }
}

impl TransitionOracle for Generator {
    fn lags(&self) -> usize {
        2
    }

    fn log_density(&self, y: f64, x: &[f64]) -> f64 {
        let (m, s) = self.location_scale(x);
        if self.is_lognormal() {
            if y <= 0.0 {
                return f64::NEG_INFINITY;
            }
            let ly = y.ln();
            if s == 0.0 {
                return if ly == m { f64::INFINITY } else { f64::NEG_INFINITY };
            }
            -0.5 * LN_2PI - s.ln() - ly - 0.5 * ((ly - m) / s).powi(2)
        } else {
            normal_logpdf(y, m, s * s)
        }
    }

    fn mean(&self, x: &[f64]) -> f64 {
        let (m, s) = self.location_scale(x);
        if self.is_lognormal() {
            (m + 0.5 * s * s).exp()
        } else {
            m
        }
    }

    fn sample(&self, x: &[f64], mut rng: &mut dyn rand::RngCore) -> f64 {
        self.step(x, &mut rng)
    }
}

/// Generate a series from a spec with its own seeded stream.
pub fn simulate(spec: &SimSpec) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    spec.generator().generate(spec.length, spec.burn, &mut rng)
}

pub fn gen_ricker_normal(length: usize, seed: u64) -> Result<Vec<f64>> {
    simulate(&SimSpec::new(SimKind::RickerNormal, length, seed))
}

pub fn gen_ricker_lognormal1(length: usize, seed: u64) -> Result<Vec<f64>> {
    simulate(&SimSpec::new(SimKind::RickerLogNormal1, length, seed))
}

pub fn gen_ricker_lognormal2(length: usize, seed: u64) -> Result<Vec<f64>> {
    simulate(&SimSpec::new(SimKind::RickerLogNormal2, length, seed))
}

pub fn gen_ar2(length: usize, seed: u64) -> Result<Vec<f64>> {
    simulate(&SimSpec::new(SimKind::Ar2, length, seed))
}

/// Moduli of the roots of `1 − φ₁z − φ₂z²`; all above 1 means stationary.
pub fn ar2_root_moduli(phi1: f64, phi2: f64) -> [f64; 2] {
    if phi2 == 0.0 {
        return [if phi1 == 0.0 { f64::INFINITY } else { 1.0 / phi1.abs() }; 2];
    }
    let disc = phi1 * phi1 + 4.0 * phi2;
    if disc >= 0.0 {
        let r1 = (-phi1 + disc.sqrt()) / (2.0 * phi2);
        let r2 = (-phi1 - disc.sqrt()) / (2.0 * phi2);
        [r1.abs(), r2.abs()]
    } else {
        // complex pair: |z|² = c/a for a z² + b z + c with a = −φ₂, c = 1
        let m = (1.0 / -phi2).sqrt();
        [m, m]
    }
}

/// Held-out pairs `(y_j, x_j)` with `x_j = (y_{j-1}, ..., y_{j-L})`.
pub type ValidationPairs = Vec<(f64, Vec<f64>)>;

/// Split a long series into a fitting block of `fit_len` values and `n_val`
/// validation pairs drawn without replacement from the next `pool_len`
/// positions.
pub fn split_for_validation(
    values: &[f64],
    fit_len: usize,
    pool_len: usize,
    n_val: usize,
    lags: usize,
    seed: u64,
) -> Result<(Vec<f64>, ValidationPairs)> {
    if fit_len + pool_len > values.len() {
        return Err(Error::Domain(format!(
            "need {} values, series has {}",
            fit_len + pool_len,
            values.len()
        )));
    }
    if n_val > pool_len || fit_len < lags {
        return Err(Error::Domain("validation pool too small".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample_indices(&mut rng, pool_len, n_val).into_vec();
    idx.sort_unstable();
    let pairs = idx
        .into_iter()
        .map(|k| {
            let t = fit_len + k;
            (values[t], (1..=lags).map(|l| values[t - l]).collect())
        })
        .collect();
    Ok((values[..fit_len].to_vec(), pairs))
}

/// `n_paths` forecast paths of length `k` from the end of `tail`. Path `p`
/// uses draw `p mod n_draws`, and each step draws a component from the
/// lag-dependent weights then `y` from its regression.
pub fn forecast_k_steps<R: Rng + ?Sized>(
    draws: &[ModelState],
    tail: &[f64],
    k: usize,
    n_paths: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(Error::Domain("forecast horizon must be at least 1".into()));
    }
    let first = draws
        .first()
        .ok_or_else(|| Error::Domain("no posterior draws".into()))?;
    let l = first.lags();
    if tail.len() < l {
        return Err(Error::Dimension {
            what: "forecast tail",
            expected: l,
            got: tail.len(),
        });
    }
    let mut paths = Vec::with_capacity(n_paths);
    for p in 0..n_paths {
        let state = &draws[p % draws.len()];
        let mut x: Vec<f64> = tail.iter().rev().take(l).copied().collect();
        let mut path = Vec::with_capacity(k);
        for _ in 0..k {
            let y = state.transition_at(&x)?.sample(rng);
            path.push(y);
            x.rotate_right(1);
            x[0] = y;
        }
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagselect::{LagSelectionState, SelectionMode};
    use crate::model::{ComponentParams, MixingState};

    fn noiseless(kind: SimKind, init: (f64, f64)) -> Generator {
        Generator {
            kind,
            params: SimParams {
                noise_sd: 0.0,
                sigma2: 0.0,
                initial: Some(init),
                ..SimParams::default()
            },
        }
    }

    #[test]
    fn ricker_fixed_point_and_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = noiseless(SimKind::RickerNormal, (2.6, 2.6));
        assert!(g
            .generate(20, 0, &mut rng)
            .unwrap()
            .iter()
            .all(|y| (y - 2.6).abs() < 1e-12));
        let g = noiseless(SimKind::RickerNormal, (1.0, 2.6));
        let ys = g.generate(2, 0, &mut rng).unwrap();
        // y_1 depends on y_{-1} = 1
        assert!((ys[0] - 1.6f64.exp()).abs() < 1e-12);
        assert!((ys[0] - 4.953).abs() < 1e-3);
        let ln = noiseless(SimKind::RickerLogNormal1, (1.0, 2.6));
        let (a, b) = (
            ln.generate(30, 0, &mut rng).unwrap(),
            g.generate(30, 0, &mut rng).unwrap(),
        );
        assert!(a.iter().zip(&b).all(|(u, v)| (u - v).abs() < 1e-9 * v.abs().max(1.0)));
    }

    #[test]
    fn lognormal2_is_deterministic_at_zero_lag_one() {
        let g = Generator::new(SimKind::RickerLogNormal2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = [0.0, 1.3];
        let y = g.step(&x, &mut rng);
        assert!((y - g.ricker_map(1.3)).abs() < 1e-12);
        let var = |y1: f64| {
            let (m, s) = g.location_scale(&[y1, 1.3]);
            ((s * s).exp() - 1.0) * (2.0 * m + s * s).exp()
        };
        assert!(var(0.5) < var(1.0) && var(1.0) < var(3.0));
    }

    fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
        samples.sort_by(f64::total_cmp);
        let n = samples.len() as f64;
        samples
            .iter()
            .enumerate()
            .map(|(i, y)| {
                let f = cdf(*y);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn lognormal_conditionals_pass_ks() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for kind in [SimKind::RickerLogNormal1, SimKind::RickerLogNormal2] {
            let g = Generator::new(kind);
            let x = [1.7, 0.8];
            let mut ys: Vec<f64> = (0..10_000).map(|_| g.step(&x, &mut rng)).collect();
            // 1% critical value for n = 10⁴
            assert!(ks_statistic(&mut ys, |y| g.cdf(y, &x)) < 1.63 / 100.0);
            assert!(g.mean(&x) > g.median(&x));
        }
    }

    #[test]
    fn oracle_densities_integrate_to_one() {
        for kind in [
            SimKind::RickerNormal,
            SimKind::RickerLogNormal1,
            SimKind::RickerLogNormal2,
            SimKind::Ar2,
        ] {
            let g = Generator::new(kind);
            let x = [1.1, 2.0];
            let (lo, hi) = match kind {
                SimKind::Ar2 => (-20.0, 20.0),
                _ => (1e-9, 12.0),
            };
            let n = 200_000;
            let h = (hi - lo) / n as f64;
            let f = |y: f64| g.log_density(y, &x).exp();
            let mut s = f(lo) + f(hi);
            for i in 1..n {
                s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            assert!((s * h / 3.0 - 1.0).abs() < 1e-6, "{kind:?}");
        }
    }

    #[test]
    fn ar2_stationarity_and_autocorrelation() {
        let roots = ar2_root_moduli(1.2, -0.7);
        assert!(roots.iter().all(|r| *r > 1.0));
        assert!((roots[0] - (1.0f64 / 0.7).sqrt()).abs() < 1e-12);
        let ys = gen_ar2(100_000, 3).unwrap();
        let n = ys.len() as f64;
        let m = ys.iter().sum::<f64>() / n;
        let c0: f64 = ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / n;
        let c1: f64 = ys.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>() / n;
        let rho = c1 / c0;
        let truth = 1.2 / 1.7;
        // Bartlett's variance for the lag-1 autocorrelation of this process is about 0.5/n
        assert!((rho - truth).abs() < 3.0 * (0.5 / n).sqrt(), "{rho}");
        assert!((m - 2.5).abs() < 0.1);
        let g = noiseless(SimKind::Ar2, (2.5, 2.5));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(g.generate(10, 5, &mut rng).unwrap().iter().all(|y| *y == 2.5));
    }

    #[test]
    fn generation_is_deterministic_and_burn_discarded() {
        let spec = SimSpec::new(SimKind::RickerNormal, 300, 9);
        assert_eq!(simulate(&spec).unwrap(), simulate(&spec).unwrap());
        assert_eq!(simulate(&spec).unwrap().len(), 300);
        let longer = simulate(&SimSpec {
            length: 301,
            ..spec.clone()
        })
        .unwrap();
        assert_eq!(&longer[..300], &simulate(&spec).unwrap()[..]);
    }

    #[test]
    fn ensemble_moments_are_stable_across_seeds() {
        let stats: Vec<(f64, f64)> = (0..6)
            .map(|s| {
                let ys = gen_ricker_normal(20_000, s).unwrap();
                let m = ys.iter().sum::<f64>() / ys.len() as f64;
                let sd = (ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / ys.len() as f64).sqrt();
                (m, sd)
            })
            .collect();
        let (m0, sd0) = stats[0];
        for (m, sd) in &stats {
            assert!((m - m0).abs() < 0.05 && (sd - sd0).abs() < 0.05);
        }
    }

    #[test]
    fn validation_split_draws_from_continuation() {
        let values: Vec<f64> = (0..100).map(|v| v as f64).collect();
        let (fit, pairs) = split_for_validation(&values, 30, 60, 10, 2, 4).unwrap();
        assert_eq!(fit.len(), 30);
        assert_eq!(pairs.len(), 10);
        for (y, x) in &pairs {
            assert!(*y >= 30.0 && *y < 90.0);
            assert_eq!(x, &vec![y - 1.0, y - 2.0]);
        }
        assert!(split_for_validation(&values, 50, 60, 10, 2, 4).is_err());
    }

    fn linear_state(sigma2: f64, gamma: bool) -> ModelState {
        let mut sel = LagSelectionState::new(SelectionMode::Global, 1, 1);
        sel.gamma_global = vec![gamma];
        ModelState {
            components: vec![ComponentParams {
                mu_y: 1.0,
                beta_y: vec![-0.5],
                sigma2,
                mu_x: vec![0.0],
                beta_x: Vec::new(),
                delta_x: vec![1.0],
            }],
            mixing: MixingState::new(vec![], vec![], 1.0).unwrap(),
            selection: sel,
        }
    }

    #[test]
    fn forecasts_iterate_linear_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let paths = forecast_k_steps(&[linear_state(1e-30, true)], &[2.0], 3, 2, &mut rng).unwrap();
        // y = 1 + 0.5 x
        let expect = [2.0, 2.0, 2.0];
        for p in &paths {
            for (a, b) in p.iter().zip(expect) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let paths = forecast_k_steps(&[linear_state(1e-30, true)], &[0.0], 2, 1, &mut rng).unwrap();
        assert!((paths[0][0] - 1.0).abs() < 1e-9 && (paths[0][1] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn forecasts_without_lags_are_identically_distributed() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let paths = forecast_k_steps(&[linear_state(1.0, false)], &[5.0], 3, 20_000, &mut rng).unwrap();
        for k in 0..3 {
            let m = paths.iter().map(|p| p[k]).sum::<f64>() / paths.len() as f64;
            assert!((m - 1.0).abs() < 3.0 / (paths.len() as f64).sqrt(), "horizon {k}: {m}");
        }
    }

    #[test]
    fn one_step_forecasts_follow_transition_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut state = linear_state(0.7, true);
        state.components.push(ComponentParams {
            mu_y: -1.0,
            beta_y: vec![0.3],
            sigma2: 0.2,
            mu_x: vec![1.0],
            beta_x: Vec::new(),
            delta_x: vec![2.0],
        });
        state.mixing = MixingState::new(vec![0.4], vec![], 1.0).unwrap();
        let tail = [0.7];
        let paths = forecast_k_steps(&[state.clone()], &tail, 1, 10_000, &mut rng).unwrap();
        let mut ys: Vec<f64> = paths.iter().map(|p| p[0]).collect();
        let t = state.transition_at(&tail).unwrap();
        assert!(ks_statistic(&mut ys, |y| t.cdf(y)) < 1.63 / 100.0);
    }
}
