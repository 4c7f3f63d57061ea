//! Sampling and density helpers for the conjugate families used by the model.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::linalg::LN_2PI;

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Gamma draw with shape/rate parameterization.
pub fn gamma_rate<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("valid gamma parameters")
        .sample(rng)
}

/// Inverse-gamma draw with shape/scale parameterization.
pub fn inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    if shape.is_infinite() {
        // Point mass at the harmonic mean `scale / shape`; callers pass the limit directly.
        return scale;
    }
    scale / gamma_rate(shape, 1.0, rng)
}

pub fn beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    rand_distr::Beta::new(a, b).expect("valid beta parameters").sample(rng)
}

pub fn inv_gamma_logpdf(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

pub fn gamma_logpdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Lower Cholesky factor, falling back to a symmetric eigen square root for
/// positive semi-definite (possibly zero) matrices.
pub fn sqrt_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = cov.clone().cholesky() {
        return ch.l();
    }
    let eig = cov.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d)
}

pub fn mvn_from_cov<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let root = sqrt_factor(cov);
    let z = DVector::from_fn(mean.len(), |_, _| std_normal(rng));
    mean + root * z
}

/// Draw from `N(mean, scale · P^{-1})` given the Cholesky factor of the precision `P`.
pub fn mvn_from_precision_chol<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    prec_chol: &Cholesky<f64, Dyn>,
    scale: f64,
    rng: &mut R,
) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| std_normal(rng));
    let w = prec_chol
        .l_dirty()
        .tr_solve_lower_triangular(&z)
        .expect("triangular solve");
    mean + w * scale.sqrt()
}

/// Multivariate normal log-density given a Cholesky factor of the covariance.
pub fn mvn_logpdf_chol(x: &[f64], mean: &[f64], cov_chol: &Cholesky<f64, Dyn>) -> f64 {
    let n = x.len();
    let diff = DVector::from_iterator(n, x.iter().zip(mean).map(|(a, b)| a - b));
    let l = cov_chol.l_dirty();
    let z = l.solve_lower_triangular(&diff).expect("triangular solve");
    let log_det: f64 = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
    -0.5 * (n as f64 * LN_2PI + log_det + z.norm_squared())
}

/// Wishart draw by the Bartlett decomposition.
pub fn wishart<R: Rng + ?Sized>(df: f64, scale: &DMatrix<f64>, rng: &mut R) -> DMatrix<f64> {
    let p = scale.nrows();
    let l = sqrt_factor(scale);
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(df - i as f64).expect("df > p - 1");
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = std_normal(rng);
        }
    }
    let la = l * a;
    &la * la.transpose()
}

/// Inverse-Wishart draw: `X^{-1} ~ W(df, scale^{-1})`.
pub fn inv_wishart<R: Rng + ?Sized>(df: f64, scale: &DMatrix<f64>, rng: &mut R) -> DMatrix<f64> {
    let scale_inv = spd_inverse(scale);
    let w = wishart(df, &scale_inv, rng);
    symmetrize(spd_inverse(&w))
}

pub fn spd_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    match m.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => m.clone().try_inverse().expect("invertible matrix"),
    }
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn wishart_mean_is_df_times_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scale = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let n = 40_000;
        let df = 6.0;
        let mut acc = DMatrix::zeros(2, 2);
        let mut sq = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let w = wishart(df, &scale, &mut rng);
            sq += w.component_mul(&w);
            acc += w;
        }
        let mean = &acc / n as f64;
        for i in 0..2 {
            for j in 0..2 {
                let var = sq[(i, j)] / n as f64 - mean[(i, j)].powi(2);
                let se = (var / n as f64).sqrt();
                assert!((mean[(i, j)] - df * scale[(i, j)]).abs() < 4.0 * se);
            }
        }
    }

    #[test]
    fn inv_wishart_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let psi = DMatrix::from_row_slice(2, 2, &[2.0, -0.4, -0.4, 1.0]);
        let df = 12.0;
        let n = 40_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            acc += inv_wishart(df, &psi, &mut rng);
        }
        let mean = acc / n as f64;
        let expected = &psi / (df - 3.0);
        assert!((mean - expected).abs().max() < 0.01);
    }

    #[test]
    fn precision_draw_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prec = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let ch = prec.clone().cholesky().unwrap();
        let cov = prec.try_inverse().unwrap() * 0.5;
        let mean = DVector::from_vec(vec![1.0, -1.0]);
        let n = 100_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let d = mvn_from_precision_chol(&mean, &ch, 0.5, &mut rng) - &mean;
            acc += &d * d.transpose();
        }
        assert!((acc / n as f64 - cov).abs().max() < 0.005);
    }

    #[test]
    fn zero_covariance_draw_is_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mean = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let d = mvn_from_cov(&mean, &DMatrix::zeros(3, 3), &mut rng);
        assert_eq!(d, mean);
    }

    #[test]
    fn log_densities_normalize() {
        let h = 1e-3;
        let ig: f64 = (1..40_000)
            .map(|i| inv_gamma_logpdf(i as f64 * h, 3.0, 2.0).exp() * h)
            .sum();
        assert!((ig - 1.0).abs() < 1e-3);
        let g: f64 = (1..40_000)
            .map(|i| gamma_logpdf(i as f64 * h, 3.0, 2.0).exp() * h)
            .sum();
        assert!((g - 1.0).abs() < 1e-3);
    }
}
