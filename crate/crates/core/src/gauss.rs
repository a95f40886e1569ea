//! Gaussian distributions, chi-square quantiles and ellipsoid geometry.
//!
//! Every confidence region in the crate is an [`Ellipsoid`] `{x : (x-c)ᵀ Q⁻¹ (x-c) ≤ 1}`.
//! A Gaussian `N(μ, Σ)` is turned into the region holding probability `p` by scaling
//! its covariance with the chi-square quantile `ρ_n` of `n = dim` degrees of freedom.

use alloc::format;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};

const SERIES_MAX_ITER: usize = 1000;
const GAMMA_EPS: f64 = 1e-16;

/// Regularized lower incomplete gamma function `P(a, x) = γ(a, x) / Γ(a)`.
///
/// Series expansion below `x < a + 1`, Lentz continued fraction for the
/// complement above it.
pub fn regularized_lower_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let log_prefactor = a * libm::log(x) - x - libm::lgamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..SERIES_MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if libm::fabs(term) < libm::fabs(sum) * GAMMA_EPS {
                break;
            }
        }
        (sum * libm::exp(log_prefactor)).min(1.0)
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..SERIES_MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if libm::fabs(d) < tiny {
                d = tiny;
            }
            c = b + an / c;
            if libm::fabs(c) < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if libm::fabs(delta - 1.0) < GAMMA_EPS {
                break;
            }
        }
        (1.0 - libm::exp(log_prefactor) * h).max(0.0)
    }
}

/// Chi-square CDF with `dof` degrees of freedom.
pub fn chi_square_cdf(x: f64, dof: usize) -> f64 {
    regularized_lower_gamma(dof as f64 / 2.0, x / 2.0)
}

fn chi_square_pdf(x: f64, dof: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = dof as f64 / 2.0;
    libm::exp((k - 1.0) * libm::log(x) - x / 2.0 - k * libm::log(2.0) - libm::lgamma(k))
}

/// Radius `ρ_n` with `P[χ²_n ≤ ρ_n] = p`.
///
/// Safeguarded Newton iteration inside a shrinking bisection bracket; the
/// returned value satisfies `|CDF(ρ_n) - p| ≤ 1e-12` or the bracket has
/// collapsed to machine precision.
pub fn chi_square_quantile(p: f64, dof: usize) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("probability {p} outside (0, 1)")));
    }
    if dof == 0 {
        return Err(Error::Domain("chi-square needs at least one degree of freedom".into()));
    }
    let mut lo = 0.0f64;
    let mut hi = (dof as f64).max(1.0);
    while chi_square_cdf(hi, dof) < p {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = chi_square_cdf(x, dof) - p;
        if libm::fabs(f) <= 1e-12 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let slope = chi_square_pdf(x, dof);
        let newton = x - f / slope;
        x = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * hi.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(x)
}

fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    SymmetricEigen::new(m.clone()).eigenvalues
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(libm::fabs(*v)))
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
    }
    let scale = max_abs(m).max(f64::MIN_POSITIVE);
    let asym = max_abs(&(m - m.transpose()));
    if asym > 1e-12 * scale {
        return Err(Error::Domain(format!("matrix asymmetric by {asym:e}")));
    }
    Ok(())
}

/// Symmetric square root of a positive semidefinite matrix (negative rounding
/// noise clamped to zero).
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| libm::sqrt(l.max(0.0)));
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Multivariate Gaussian `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&cov)?;
        check_dim(mean.len(), cov.nrows())?;
        let cov = (&cov + cov.transpose()) * 0.5;
        let eig = symmetric_eigenvalues(&cov);
        let max = eig.max();
        let min = eig.min();
        if min < -1e-12 * max.max(0.0) {
            return Err(Error::NotPsd { min_eigenvalue: min });
        }
        Ok(Self { mean, cov })
    }

    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, DMatrix::identity(n, n) * variance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Draws `mean + L ξ` with `ξ ~ N(0, I)` and `L Lᵀ = cov` (Cholesky factor,
    /// falling back to the symmetric root for singular covariances).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.dim();
        let xi = standard_normal_vector(n, rng);
        let factor = match Cholesky::new(self.cov.clone()) {
            Some(ch) => ch.l(),
            None => psd_sqrt(&self.cov),
        };
        &self.mean + factor * xi
    }
}

/// Draw from a Gaussian.
pub fn sample_gaussian<R: Rng + ?Sized>(g: &Gaussian, rng: &mut R) -> DVector<f64> {
    g.sample(rng)
}

/// Ellipsoid `E(c, Q) = {x : (x - c)ᵀ Q⁻¹ (x - c) ≤ 1}` with `Q` positive definite.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    center: DVector<f64>,
    shape: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl PartialEq for Ellipsoid {
    fn eq(&self, other: &Self) -> bool {
        self.center == other.center && self.shape == other.shape
    }
}

impl Ellipsoid {
    pub fn new(center: DVector<f64>, shape: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&shape)?;
        check_dim(center.len(), shape.nrows())?;
        let shape = (&shape + shape.transpose()) * 0.5;
        let min = symmetric_eigenvalues(&shape).min();
        if !(min > 0.0) {
            return Err(Error::IllConditioned { eigenvalue: min });
        }
        let chol = Cholesky::new(shape.clone()).ok_or(Error::IllConditioned { eigenvalue: min })?;
        Ok(Self { center, shape, chol })
    }

    /// Euclidean ball of the given radius.
    pub fn ball(center: DVector<f64>, radius: f64) -> Result<Self> {
        let n = center.len();
        Self::new(center, DMatrix::identity(n, n) * (radius * radius))
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    /// Lower Cholesky factor `L` with `L Lᵀ = Q`.
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn shape_inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// `(x - c)ᵀ Q⁻¹ (x - c)`.
    pub fn quadratic_form(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let d = x - &self.center;
        let y = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&d)
            .ok_or(Error::IllConditioned { eigenvalue: 0.0 })?;
        Ok(y.norm_squared())
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> Result<bool> {
        Ok(self.quadratic_form(x)? <= 1.0 + tol)
    }

    /// `log det Q`; the log-volume up to the unit-ball constant is half of it.
    pub fn log_det_shape(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| libm::log(*d)).sum::<f64>()
    }

    /// Uniform point: direction on the sphere times `U^(1/n)`, mapped by `L`.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.dim();
        let dir = unit_direction(n, rng);
        let u: f64 = rng.random();
        let radius = libm::pow(u, 1.0 / n as f64);
        &self.center + self.chol.l_dirty().lower_triangle() * (dir * radius)
    }

    /// Uniformly distributed direction mapped onto the boundary surface.
    pub fn sample_boundary<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let dir = unit_direction(self.dim(), rng);
        &self.center + self.chol.l_dirty().lower_triangle() * dir
    }

    pub fn translated(&self, offset: &DVector<f64>) -> Result<Self> {
        Self::new(&self.center + offset, self.shape.clone())
    }
}

/// Vector of i.i.d. standard normal draws.
pub fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| {
        let x: f64 = StandardNormal.sample(rng);
        x
    })
}

fn unit_direction<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = standard_normal_vector(n, rng);
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Uniform draw from the interior of an ellipsoid.
pub fn sample_in_ellipsoid<R: Rng + ?Sized>(e: &Ellipsoid, rng: &mut R) -> DVector<f64> {
    e.sample_uniform(rng)
}

/// The region `E(μ, ρ_n Σ)` holding probability `p` of `N(μ, Σ)`.
///
/// Covariances whose smallest eigenvalue falls below `1e-9 · tr(Σ) / n` get
/// that amount added on the diagonal; exactly singular ones are rejected.
pub fn confidence_ellipsoid(g: &Gaussian, p: f64) -> Result<Ellipsoid> {
    let n = g.dim();
    let rho = chi_square_quantile(p, n)?;
    let cov = regularized_covariance(g.cov())?;
    Ellipsoid::new(g.mean().clone(), cov * rho)
}

/// Apply the near-singular regularization used for every covariance inversion.
pub fn regularized_covariance(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    let eig = symmetric_eigenvalues(cov);
    let min = eig.min();
    if !(min > 0.0) {
        return Err(Error::IllConditioned { eigenvalue: min });
    }
    let eps = 1e-9 * cov.trace() / n as f64;
    if min < eps {
        Ok(cov + DMatrix::identity(n, n) * eps)
    } else {
        Ok(cov.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use nalgebra::dvector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quantile_known_values() {
        let q2 = chi_square_quantile(0.95, 2).unwrap();
        assert!((q2 - 5.991_464_547_107_979).abs() < 1e-9, "{q2}");
        let q3 = chi_square_quantile(0.95, 3).unwrap();
        assert!((q3 - 7.814_727_903_251_178).abs() < 1e-9, "{q3}");
    }

    #[test]
    fn quantile_tends_to_zero() {
        let q = chi_square_quantile(1e-12, 2).unwrap();
        assert!(q < 1e-10);
    }

    #[test]
    fn quantile_domain_errors() {
        assert!(chi_square_quantile(0.0, 2).is_err());
        assert!(chi_square_quantile(1.0, 2).is_err());
        assert!(chi_square_quantile(f64::NAN, 2).is_err());
        assert!(chi_square_quantile(0.5, 0).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        for n in 1..=10 {
            for p in [0.5, 0.9, 0.95, 0.99] {
                let q = chi_square_quantile(p, n).unwrap();
                assert!((chi_square_cdf(q, n) - p).abs() < 1e-9, "n={n} p={p}");
            }
        }
    }

    #[test]
    fn confidence_ellipsoid_identity() {
        let g = Gaussian::isotropic(DVector::zeros(2), 1.0).unwrap();
        let e = confidence_ellipsoid(&g, 0.95).unwrap();
        let expect = 5.991_464_547_107_979;
        assert!((e.shape()[(0, 0)] - expect).abs() < 1e-9);
        assert!((e.shape()[(1, 1)] - expect).abs() < 1e-9);
        assert_eq!(e.shape()[(0, 1)], 0.0);
    }

    #[test]
    fn confidence_ellipsoid_shrinks_with_p() {
        let g = Gaussian::new(dvector![1.0, -2.0], DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
        let e = confidence_ellipsoid(&g, 1e-10).unwrap();
        assert!(max_abs(e.shape()) < 1e-8);
    }

    #[test]
    fn singular_covariance_rejected() {
        let g = Gaussian::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).unwrap();
        match confidence_ellipsoid(&g, 0.9) {
            Err(Error::IllConditioned { eigenvalue }) => assert!(eigenvalue.abs() < 1e-15),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_psd_gaussian_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(Gaussian::new(DVector::zeros(2), cov), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn near_singular_covariance_regularized() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-14]);
        let reg = regularized_covariance(&cov).unwrap();
        let eps = 1e-9 * (1.0 + 1e-14) / 2.0;
        assert!((reg[(1, 1)] - 1e-14 - eps).abs() < 1e-20);
    }

    #[test]
    fn membership_examples() {
        let unit = Ellipsoid::ball(DVector::zeros(2), 1.0).unwrap();
        assert!(unit.contains(&DVector::zeros(2), 0.0).unwrap());
        assert!(!unit.contains(&dvector![1.001, 0.0], 0.0).unwrap());
        let c = dvector![3.0, -1.0];
        let e = Ellipsoid::new(c.clone(), DMatrix::identity(2, 2) * 4.0).unwrap();
        assert!(e.contains(&(&c + dvector![2.0, 0.0]), 1e-9).unwrap());
        assert!(matches!(e.contains(&dvector![1.0], 0.0), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_covariance_returns_mean() {
        let g = Gaussian::new(dvector![0.5, 1.5], DMatrix::zeros(2, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            assert_eq!(g.sample(&mut rng), dvector![0.5, 1.5]);
        }
    }

    #[test]
    fn uniform_samples_stay_inside() {
        let e = Ellipsoid::ball(DVector::zeros(2), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100_000 {
            let x = e.sample_uniform(&mut rng);
            assert!(e.contains(&x, 1e-12).unwrap());
        }
    }

    #[test]
    fn gaussian_sample_mean() {
        let g = Gaussian::isotropic(dvector![1.0, -1.0], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut acc = DVector::zeros(2);
        for _ in 0..n {
            acc += g.sample(&mut rng);
        }
        acc /= n as f64;
        assert!((&acc - g.mean()).amax() < 0.02);
    }

    #[test]
    fn sampling_is_deterministic() {
        let e = Ellipsoid::new(dvector![1.0, 2.0, 3.0], DMatrix::from_diagonal(&dvector![1.0, 2.0, 0.5])).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            assert_eq!(e.sample_uniform(&mut a), e.sample_uniform(&mut b));
        }
    }

    #[test]
    fn log_det_of_ball() {
        let e = Ellipsoid::ball(DVector::zeros(3), 2.0).unwrap();
        assert!((e.log_det_shape() - 3.0 * libm::log(4.0)).abs() < 1e-12);
    }
}
