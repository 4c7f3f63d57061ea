//! Square-root-free Cholesky covariance construction and Gaussian densities.
//!
//! A covariance over `(y, x_1, ..., x_L)` is written as `B^{-1} Δ B^{-T}` where
//! `B` is unit upper-triangular with first row `(1, β^y_1, ..., β^y_L)` and lag
//! rows `(0, .., 1, β^x_{ℓ,ℓ+1}, ..., β^x_{ℓ,L})`, and `Δ = diag(σ², δ_1, ..., δ_L)`.
//! The same parameters define a back-to-front chain of univariate conditionals,
//! which is how densities are evaluated elsewhere in the crate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Weight-kernel covariances with a smaller determinant are treated as singular.
pub const DET_FLOOR: f64 = 1e-12;

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq)]
pub struct CholFactor {
    beta_y: Vec<f64>,
    /// Row `ℓ` (0-based) holds `β^x_{ℓ, ℓ+1..L}`; empty when the lag block is diagonal.
    beta_x: Vec<Vec<f64>>,
    deltas: Vec<f64>,
    sigma2: f64,
}

impl CholFactor {
    pub fn new(beta_y: Vec<f64>, beta_x: Vec<Vec<f64>>, deltas: Vec<f64>, sigma2: f64) -> Result<Self> {
        let l = deltas.len();
        if l == 0 {
            return Err(Error::Domain("factor needs at least one lag".into()));
        }
        if beta_y.len() != l {
            return Err(Error::Dimension {
                what: "beta_y",
                expected: l,
                got: beta_y.len(),
            });
        }
        if !beta_x.is_empty() {
            if beta_x.len() != l {
                return Err(Error::Dimension {
                    what: "beta_x rows",
                    expected: l,
                    got: beta_x.len(),
                });
            }
            for (row, coefs) in beta_x.iter().enumerate() {
                if coefs.len() != l - row - 1 {
                    return Err(Error::Dimension {
                        what: "beta_x row",
                        expected: l - row - 1,
                        got: coefs.len(),
                    });
                }
            }
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::Singular(format!("sigma2 = {sigma2} is not positive")));
        }
        if let Some(d) = deltas.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return Err(Error::Singular(format!("delta = {d} is not positive")));
        }
        Ok(Self {
            beta_y,
            beta_x,
            deltas,
            sigma2,
        })
    }

    /// Factor with all lag-block coefficients zero.
    pub fn diagonal(beta_y: Vec<f64>, deltas: Vec<f64>, sigma2: f64) -> Result<Self> {
        Self::new(beta_y, Vec::new(), deltas, sigma2)
    }

    pub fn lags(&self) -> usize {
        self.deltas.len()
    }

    pub fn beta_y(&self) -> &[f64] {
        &self.beta_y
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn is_diagonal(&self) -> bool {
        self.beta_x.is_empty()
    }

    /// `β^x_{ℓ,r}` with 0-based lag indices, `r > ℓ`.
    pub fn beta_x(&self, l: usize, r: usize) -> f64 {
        debug_assert!(r > l);
        if self.beta_x.is_empty() {
            0.0
        } else {
            self.beta_x[l][r - l - 1]
        }
    }

    pub fn beta_x_rows(&self) -> &[Vec<f64>] {
        &self.beta_x
    }

    /// The unit upper-triangular `B` of dimension `L+1`.
    pub fn unit_upper(&self) -> DMatrix<f64> {
        let l = self.lags();
        let mut b = DMatrix::identity(l + 1, l + 1);
        for (j, by) in self.beta_y.iter().enumerate() {
            b[(0, j + 1)] = *by;
        }
        for row in 0..l {
            for col in (row + 1)..l {
                b[(row + 1, col + 1)] = self.beta_x(row, col);
            }
        }
        b
    }

    fn lag_block_unit_upper(&self) -> DMatrix<f64> {
        let l = self.lags();
        let mut b = DMatrix::identity(l, l);
        for row in 0..l {
            for col in (row + 1)..l {
                b[(row, col)] = self.beta_x(row, col);
            }
        }
        b
    }
}

/// Inverse of a unit upper-triangular matrix by back-substitution.
pub fn unit_upper_inverse(b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = b.nrows();
    let mut inv = DMatrix::identity(n, n);
    // Column j of the inverse solves B z = e_j; z is zero below j.
    for j in 0..n {
        for i in (0..j).rev() {
            let mut acc = 0.0;
            for k in (i + 1)..=j {
                acc += b[(i, k)] * inv[(k, j)];
            }
            inv[(i, j)] = -acc;
        }
    }
    inv
}

fn sandwich(b: &DMatrix<f64>, diag: &[f64]) -> DMatrix<f64> {
    let u = unit_upper_inverse(b);
    let n = u.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            // U is upper-triangular so the sum starts at max(i, j) = j.
            let mut acc = 0.0;
            for k in j..n {
                acc += u[(i, k)] * diag[k] * u[(j, k)];
            }
            out[(i, j)] = acc;
            out[(j, i)] = acc;
        }
    }
    out
}

/// `Σ = B^{-1} Δ B^{-T}` over `(y, x_1, ..., x_L)`.
pub fn build_covariance(factor: &CholFactor) -> Result<DMatrix<f64>> {
    let mut diag = Vec::with_capacity(factor.lags() + 1);
    diag.push(factor.sigma2);
    diag.extend_from_slice(&factor.deltas);
    Ok(sandwich(&factor.unit_upper(), &diag))
}

/// `Σ^x`, the lower-right `L × L` block; `β^y` and `σ²` do not enter.
pub fn marginal_lag_covariance(factor: &CholFactor) -> Result<DMatrix<f64>> {
    Ok(sandwich(&factor.lag_block_unit_upper(), &factor.deltas))
}

/// Recover the factor from a covariance over `(y, x)` via the chain of
/// conditional regressions of each coordinate on the ones after it.
pub fn factorize_covariance(cov: &DMatrix<f64>, diagonal_lags: bool) -> Result<CholFactor> {
    let n = cov.nrows();
    if n < 2 || cov.ncols() != n {
        return Err(Error::Domain("covariance must be square with dimension >= 2".into()));
    }
    let mut coefs: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut vars = vec![0.0; n];
    for i in 0..n {
        if i == n - 1 {
            vars[i] = cov[(i, i)];
            coefs.push(Vec::new());
            continue;
        }
        let rest = cov.view((i + 1, i + 1), (n - i - 1, n - i - 1)).into_owned();
        let cross = cov.view((i + 1, i), (n - i - 1, 1)).into_owned();
        let chol = rest
            .cholesky()
            .ok_or_else(|| Error::Singular("trailing block not positive definite".into()))?;
        let w = chol.solve(&cross);
        vars[i] = cov[(i, i)] - (cross.transpose() * &w)[(0, 0)];
        // x_i | rest has mean μ_i - Σ β (x_r - μ_r), so β is the negated regression weight.
        coefs.push(w.iter().map(|v| -v).collect());
    }
    let beta_y = coefs[0].clone();
    let beta_x = if diagonal_lags { Vec::new() } else { coefs[1..].to_vec() };
    CholFactor::new(beta_y, beta_x, vars[1..].to_vec(), vars[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianParams {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::Dimension {
                what: "covariance",
                expected: n,
                got: cov.nrows(),
            });
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * (1.0 + cov[(i, j)].abs()) {
                    return Err(Error::Domain("covariance is not symmetric".into()));
                }
            }
        }
        Ok(Self { mean, cov })
    }

    pub fn from_factor(factor: &CholFactor, means: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(means), build_covariance(factor)?)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn checked_cholesky(cov: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Singular("covariance not positive definite".into()))?;
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    if log_det < DET_FLOOR.ln() {
        return Err(Error::Singular(format!(
            "determinant exp({log_det:.3}) below floor {DET_FLOOR}"
        )));
    }
    Ok(chol)
}

/// Mean and variance of `y | x` for a joint Gaussian over `(y, x)`.
pub fn conditional_gaussian(params: &GaussianParams, x: &[f64]) -> Result<(f64, f64)> {
    let n = params.dim();
    if x.len() + 1 != n {
        return Err(Error::Dimension {
            what: "conditioning vector",
            expected: n - 1,
            got: x.len(),
        });
    }
    let l = n - 1;
    let sx = params.cov.view((1, 1), (l, l)).into_owned();
    let sxy = params.cov.view((1, 0), (l, 1)).into_owned();
    let chol = checked_cholesky(sx)?;
    let w = chol.solve(&sxy);
    let dx = DVector::from_iterator(l, (0..l).map(|i| x[i] - params.mean[i + 1]));
    let mean = params.mean[0] + w.column(0).dot(&dx);
    let var = params.cov[(0, 0)] - w.column(0).dot(&sxy.column(0));
    if !(var > 0.0) {
        return Err(Error::Singular(format!("conditional variance {var} not positive")));
    }
    Ok((mean, var))
}

#[inline]
pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Joint log-density of `(y, x)` as a product of `L+1` univariate Gaussians,
/// evaluated from the most distant lag forward to `y`.
pub fn sequential_log_density(factor: &CholFactor, means: &[f64], point: &[f64]) -> Result<f64> {
    let l = factor.lags();
    if means.len() != l + 1 || point.len() != l + 1 {
        return Err(Error::Dimension {
            what: "sequential density input",
            expected: l + 1,
            got: means.len().min(point.len()),
        });
    }
    let dev = |i: usize| point[i + 1] - means[i + 1];
    let mut total = 0.0;
    for lag in (0..l).rev() {
        let mut cond_mean = means[lag + 1];
        for r in (lag + 1)..l {
            cond_mean -= factor.beta_x(lag, r) * dev(r);
        }
        total += normal_logpdf(point[lag + 1], cond_mean, factor.deltas[lag]);
    }
    let mut y_mean = means[0];
    for lag in 0..l {
        y_mean -= factor.beta_y[lag] * dev(lag);
    }
    total += normal_logpdf(point[0], y_mean, factor.sigma2);
    Ok(total)
}

/// Dense multivariate Gaussian log-density.
pub fn gaussian_logpdf(params: &GaussianParams, point: &[f64]) -> Result<f64> {
    let n = params.dim();
    if point.len() != n {
        return Err(Error::Dimension {
            what: "point",
            expected: n,
            got: point.len(),
        });
    }
    let chol = checked_cholesky(params.cov.clone())?;
    let diff = DVector::from_iterator(n, (0..n).map(|i| point[i] - params.mean[i]));
    let z = chol.l_dirty().solve_lower_triangular(&diff).expect("triangular solve");
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(-0.5 * (n as f64 * LN_2PI + log_det + z.norm_squared()))
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}
