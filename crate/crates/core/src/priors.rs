//! The centering distribution `G₀`, its hyperpriors, data-driven defaults and
//! prior simulation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist;
use crate::error::{Error, Result};
use crate::lagselect::{LagSelectionState, SelectionMode};
use crate::model::{ComponentParams, MixingState, ModelState, SeriesData};

/// Settings that shape the default prior. Every field has a default and can
/// be overridden from the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct PriorOptions {
    /// Prior signal-to-noise ratio `𝓡`.
    pub snr: f64,
    pub a_alpha: f64,
    pub b_alpha: f64,
    /// Degrees of freedom `ν_{σ²}` of the inverse-gamma prior on kernel variances.
    pub nu_sigma2: f64,
    pub fix_y_indexed: bool,
    pub diagonal_sigma_x: bool,
    /// Override the empirical series mean.
    pub y_bar: Option<f64>,
    /// Override the empirical series range.
    pub range: Option<f64>,
    /// Override the automatic prior guess `s₀₀` of the kernel variance.
    pub s00: Option<f64>,
}

impl Default for PriorOptions {
    fn default() -> Self {
        Self {
            snr: 5.0,
            a_alpha: 10.0,
            b_alpha: 1.0,
            nu_sigma2: 5.0,
            fix_y_indexed: true,
            diagonal_sigma_x: false,
            y_bar: None,
            range: None,
            s00: None,
        }
    }
}

impl PriorOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.snr > 0.0) {
            return Err(Error::Domain(format!("snr = {} must be positive", self.snr)));
        }
        if !(self.a_alpha > 0.0 && self.b_alpha > 0.0 && self.nu_sigma2 > 0.0) {
            return Err(Error::Domain("alpha prior and nu_sigma2 must be positive".into()));
        }
        if let Some(s) = self.s00 {
            if !(s > 0.0) {
                return Err(Error::Domain(format!("s00 = {s} must be positive")));
            }
        }
        if let Some(r) = self.range {
            if !(r > 0.0) {
                return Err(Error::Domain(format!("range = {r} must be positive")));
            }
        }
        Ok(())
    }
}

/// Fixed hyper-hyperparameters of `G₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperPriors {
    pub b0_star: DVector<f64>,
    pub s0_star: DMatrix<f64>,
    pub nu_star: f64,
    pub psi0_star: DMatrix<f64>,
    pub a_s0: f64,
    pub b_s0: f64,
    pub m0_x: DVector<f64>,
    pub s0_mu_x: DMatrix<f64>,
    pub nu_mu_x: f64,
    pub psi0_mu_x: DMatrix<f64>,
    /// One entry per `r = 1..L-1`, each of length `L - r`.
    pub b_beta_x: Vec<DVector<f64>>,
    pub s_beta_x: Vec<DMatrix<f64>>,
    pub nu_beta_x: Vec<f64>,
    pub psi_beta_x: Vec<DMatrix<f64>>,
    pub a_s0_x: Vec<f64>,
    pub b_s0_x: Vec<f64>,
}

/// Current values of every `G₀` parameter plus the fixed hyperpriors.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseMeasureState {
    pub lags: usize,
    pub diagonal: bool,
    pub fix_y_indexed: bool,
    pub beta_star0: DVector<f64>,
    /// `(Λ₀*)⁻¹`, the covariance multiplier of `(μ^y, β^y)` given `σ²`.
    pub cov_star0: DMatrix<f64>,
    pub s0: f64,
    pub nu_sigma2: f64,
    pub mu0_x: DVector<f64>,
    /// `(Λ^{μx})⁻¹`.
    pub cov_mu_x: DMatrix<f64>,
    pub beta_x0: Vec<DVector<f64>>,
    pub cov_beta_x: Vec<DMatrix<f64>>,
    pub s0_x: Vec<f64>,
    pub nu_delta_x: Vec<f64>,
    pub hyper: HyperPriors,
    pub alpha_prior: (f64, f64),
    pub snr: f64,
    pub s00: f64,
    pub y_bar: f64,
    pub range: f64,
}

/// Compact record of the sampled base-measure values, stored with each draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseSummary {
    pub beta_star0: Vec<f64>,
    pub s0: f64,
    pub mu0_x: Vec<f64>,
    pub s0_x: Vec<f64>,
}

pub fn prior_guess_s00(range: f64, snr: f64) -> f64 {
    (range / 6.0).powi(2) / snr
}

/// Default `G₀` derived from the empirical mean and range of the series.
pub fn default_hyperparams(series: &SeriesData, snr: f64, a_alpha: f64, b_alpha: f64) -> Result<BaseMeasureState> {
    let opts = PriorOptions {
        snr,
        a_alpha,
        b_alpha,
        ..PriorOptions::default()
    };
    BaseMeasureState::from_series(series, &opts)
}

impl BaseMeasureState {
    pub fn from_series(series: &SeriesData, opts: &PriorOptions) -> Result<Self> {
        let y_bar = opts.y_bar.unwrap_or_else(|| series.mean());
        let range = opts.range.unwrap_or_else(|| series.range());
        Self::from_summaries(series.max_lag(), y_bar, range, opts)
    }

    pub fn from_summaries(l: usize, y_bar: f64, range: f64, opts: &PriorOptions) -> Result<Self> {
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::DegenerateSeries(format!("range {range} must be positive")));
        }
        opts.validate()?;
        if l == 0 {
            return Err(Error::Domain("max lag must be at least 1".into()));
        }
        let s00 = opts.s00.unwrap_or_else(|| prior_guess_s00(range, opts.snr));
        let p = l + 1;
        let lf = l as f64;

        let mut b0_star = DVector::zeros(p);
        b0_star[0] = y_bar;
        let mut psi_diag = vec![16.0 / s00; p];
        psi_diag[0] = (range / 2.0).powi(2) / s00;
        let psi0_star = DMatrix::from_diagonal(&DVector::from_vec(psi_diag));
        let mut s0_diag = vec![1.0; p];
        s0_diag[0] = (range / 6.0).powi(2);
        let s0_star = DMatrix::from_diagonal(&DVector::from_vec(s0_diag));
        let n_s0 = 5.0;
        let a_s0 = n_s0 * opts.nu_sigma2 / 2.0;
        let b_s0 = a_s0 / s00;

        let m0_x = DVector::from_element(l, y_bar);
        let s0_mu_x = DMatrix::identity(l, l) * (range / 6.0).powi(2);
        let psi0_mu_x = DMatrix::identity(l, l) * (range / 2.0).powi(2);
        let nu_mu_x = 10.0 * (lf + 2.0);

        let lens: Vec<usize> = (1..l).map(|r| l - r).collect();
        let b_beta_x: Vec<DVector<f64>> = lens.iter().map(|&k| DVector::zeros(k)).collect();
        let s_beta_x = lens.iter().map(|&k| DMatrix::identity(k, k)).collect();
        let nu_beta_x = vec![10.0 * (lf + 2.0); lens.len()];
        let psi_beta_x: Vec<DMatrix<f64>> = lens.iter().map(|&k| DMatrix::identity(k, k) * 2.0).collect();

        let nu_delta_x = vec![5.0; l];
        let n_s0_x = 5.0;
        let s00_x = (range / 8.0).powi(2);
        let a_s0_x = vec![n_s0_x * 5.0 / 2.0; l];
        let b_s0_x = vec![n_s0_x * 5.0 / (2.0 * s00_x); l];

        let hyper = HyperPriors {
            b0_star: b0_star.clone(),
            s0_star,
            nu_star: 10.0 * (lf + 2.0),
            psi0_star: psi0_star.clone(),
            a_s0,
            b_s0,
            m0_x: m0_x.clone(),
            s0_mu_x,
            nu_mu_x,
            psi0_mu_x: psi0_mu_x.clone(),
            b_beta_x: b_beta_x.clone(),
            s_beta_x,
            nu_beta_x,
            psi_beta_x: psi_beta_x.clone(),
            a_s0_x,
            b_s0_x,
        };
        Ok(Self {
            lags: l,
            diagonal: opts.diagonal_sigma_x,
            fix_y_indexed: opts.fix_y_indexed,
            beta_star0: b0_star,
            cov_star0: psi0_star,
            s0: s00,
            nu_sigma2: opts.nu_sigma2,
            mu0_x: m0_x,
            cov_mu_x: psi0_mu_x,
            beta_x0: b_beta_x,
            cov_beta_x: psi_beta_x,
            s0_x: vec![s00_x; l],
            nu_delta_x,
            hyper,
            alpha_prior: (opts.a_alpha, opts.b_alpha),
            snr: opts.snr,
            s00,
            y_bar,
            range,
        })
    }

    pub fn summary(&self) -> BaseSummary {
        BaseSummary {
            beta_star0: self.beta_star0.iter().copied().collect(),
            s0: self.s0,
            mu0_x: self.mu0_x.iter().copied().collect(),
            s0_x: self.s0_x.clone(),
        }
    }

    /// Precision `Λ₀*`.
    pub fn prec_star0(&self) -> DMatrix<f64> {
        dist::spd_inverse(&self.cov_star0)
    }
}

/// `π^γ_ℓ = 0.1 + 0.8 · 0.5^ℓ`, decreasing geometrically from 0.5 toward 0.1.
pub fn pi_gamma_defaults(l: usize) -> Vec<f64> {
    (1..=l).map(|k| 0.1 + 0.8 * 0.5f64.powi(k as i32)).collect()
}

pub fn pi_gamma_constant(l: usize, value: f64) -> Vec<f64> {
    vec![value; l]
}

pub fn sample_component_from_g0<R: Rng + ?Sized>(base: &BaseMeasureState, rng: &mut R) -> ComponentParams {
    let l = base.lags;
    let sigma2 = if base.nu_sigma2.is_infinite() {
        base.s0
    } else {
        dist::inv_gamma(base.nu_sigma2 / 2.0, base.nu_sigma2 * base.s0 / 2.0, rng)
    };
    let beta_star = dist::mvn_from_cov(&base.beta_star0, &(&base.cov_star0 * sigma2), rng);
    let mu_x = dist::mvn_from_cov(&base.mu0_x, &base.cov_mu_x, rng);
    let beta_x = if base.diagonal {
        Vec::new()
    } else {
        let mut rows: Vec<Vec<f64>> = base
            .beta_x0
            .iter()
            .zip(&base.cov_beta_x)
            .map(|(m, c)| dist::mvn_from_cov(m, c, rng).iter().copied().collect())
            .collect();
        rows.push(Vec::new());
        rows
    };
    let delta_x = (0..l)
        .map(|k| {
            let nu = base.nu_delta_x[k];
            if nu.is_infinite() {
                base.s0_x[k]
            } else {
                dist::inv_gamma(nu / 2.0, nu * base.s0_x[k] / 2.0, rng)
            }
        })
        .collect();
    ComponentParams {
        mu_y: beta_star[0],
        beta_y: beta_star.iter().skip(1).copied().collect(),
        sigma2,
        mu_x: mu_x.iter().copied().collect(),
        beta_x,
        delta_x,
    }
}

/// Replace the updatable `G₀` parameters with a draw from their hyperpriors.
/// The `y`-indexed block is left alone when it is fixed.
pub fn sample_base_from_hyperpriors<R: Rng + ?Sized>(base: &mut BaseMeasureState, rng: &mut R) {
    let hp = base.hyper.clone();
    if !base.fix_y_indexed {
        base.beta_star0 = dist::mvn_from_cov(&hp.b0_star, &hp.s0_star, rng);
        base.cov_star0 = dist::inv_wishart(hp.nu_star, &(&hp.psi0_star * hp.nu_star), rng);
        base.s0 = dist::gamma_rate(hp.a_s0, hp.b_s0, rng);
    }
    base.mu0_x = dist::mvn_from_cov(&hp.m0_x, &hp.s0_mu_x, rng);
    base.cov_mu_x = dist::inv_wishart(hp.nu_mu_x, &(&hp.psi0_mu_x * hp.nu_mu_x), rng);
    if !base.diagonal {
        for r in 0..base.beta_x0.len() {
            base.beta_x0[r] = dist::mvn_from_cov(&hp.b_beta_x[r], &hp.s_beta_x[r], rng);
            base.cov_beta_x[r] = dist::inv_wishart(hp.nu_beta_x[r], &(&hp.psi_beta_x[r] * hp.nu_beta_x[r]), rng);
        }
    }
    for k in 0..base.lags {
        base.s0_x[k] = dist::gamma_rate(hp.a_s0_x[k], hp.b_s0_x[k], rng);
    }
}

/// Log-density of the lag-indexed part `η^x = (μ^x, β^x, δ^x)` under `G₀`,
/// with Cholesky factors cached between base-measure updates.
#[derive(Debug, Clone)]
pub struct XPrior {
    mu0: Vec<f64>,
    mu_chol: Cholesky<f64, Dyn>,
    beta0: Vec<Vec<f64>>,
    beta_chol: Vec<Cholesky<f64, Dyn>>,
    ig_shape: Vec<f64>,
    ig_scale: Vec<f64>,
}

impl XPrior {
    pub fn new(base: &BaseMeasureState) -> Result<Self> {
        let chol = |m: &DMatrix<f64>| {
            m.clone()
                .cholesky()
                .ok_or_else(|| Error::Singular("base-measure covariance not positive definite".into()))
        };
        Ok(Self {
            mu0: base.mu0_x.iter().copied().collect(),
            mu_chol: chol(&base.cov_mu_x)?,
            beta0: base.beta_x0.iter().map(|v| v.iter().copied().collect()).collect(),
            beta_chol: base.cov_beta_x.iter().map(chol).collect::<Result<_>>()?,
            ig_shape: base.nu_delta_x.iter().map(|n| n / 2.0).collect(),
            ig_scale: base
                .nu_delta_x
                .iter()
                .zip(&base.s0_x)
                .map(|(n, s)| n * s / 2.0)
                .collect(),
        })
    }

    pub fn log_density(&self, mu_x: &[f64], beta_x: &[Vec<f64>], delta_x: &[f64]) -> f64 {
        let mut lp = dist::mvn_logpdf_chol(mu_x, &self.mu0, &self.mu_chol);
        if !beta_x.is_empty() {
            for (r, chol) in self.beta_chol.iter().enumerate() {
                lp += dist::mvn_logpdf_chol(&beta_x[r], &self.beta0[r], chol);
            }
        }
        for (k, d) in delta_x.iter().enumerate() {
            lp += dist::inv_gamma_logpdf(*d, self.ig_shape[k], self.ig_scale[k]);
        }
        lp
    }
}

/// Transition-mean curves of full prior draws evaluated on a grid of lag vectors.
pub fn prior_transition_mean_draws<R: Rng + ?Sized>(
    base: &BaseMeasureState,
    alpha_prior: (f64, f64),
    h: usize,
    n_draws: usize,
    x_grid: &[Vec<f64>],
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if h == 0 {
        return Err(Error::Domain("need at least one component".into()));
    }
    if let Some(x) = x_grid.iter().find(|x| x.len() != base.lags) {
        return Err(Error::Dimension {
            what: "grid point",
            expected: base.lags,
            got: x.len(),
        });
    }
    let mut curves = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let alpha = dist::gamma_rate(alpha_prior.0, alpha_prior.1, rng);
        let sticks: Vec<f64> = (0..h - 1)
            .map(|_| dist::beta(1.0, alpha, rng).clamp(1e-300, 1.0 - 1e-16))
            .collect();
        let components = (0..h).map(|_| sample_component_from_g0(base, rng)).collect();
        let state = ModelState {
            components,
            mixing: MixingState::new(sticks, Vec::new(), alpha)?,
            selection: LagSelectionState::new(SelectionMode::None, base.lags, h),
        };
        let curve = x_grid
            .iter()
            .map(|x| state.transition_at(x).map(|t| t.mean()))
            .collect::<Result<Vec<f64>>>()?;
        curves.push(curve);
    }
    Ok(curves)
}
