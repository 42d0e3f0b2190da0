//! Gaussian Fréchet distance between two feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Ridge added to sample covariances when a set has at most `width` rows.
pub const SHRINKAGE: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FrechetError {
    #[error("feature sets are empty or have mismatched widths")]
    Width,
    #[error("feature set needs at least 2 vectors, got {0}")]
    TooFew(usize),
    #[error("covariance product has eigenvalue {0} below -1e-8")]
    NegativeEigenvalue(f64),
    #[error("degenerate covariance")]
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrechetInputs {
    pub features_a: Vec<Vec<f64>>,
    pub features_b: Vec<Vec<f64>>,
}

/// Mean and unbiased covariance, ridge-regularized for small sets.
pub fn moments(set: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>), FrechetError> {
    let d = set.first().map(Vec::len).ok_or(FrechetError::Width)?;
    if set.len() < 2 {
        return Err(FrechetError::TooFew(set.len()));
    }
    if d == 0 || set.iter().any(|v| v.len() != d) {
        return Err(FrechetError::Width);
    }
    let n = set.len() as f64;
    let mut mu = DVector::zeros(d);
    for v in set {
        mu += DVector::from_column_slice(v);
    }
    mu /= n;
    let mut cov = DMatrix::zeros(d, d);
    for v in set {
        let c = DVector::from_column_slice(v) - &mu;
        cov += &c * c.transpose();
    }
    cov /= n - 1.0;
    if set.len() <= d {
        cov += DMatrix::identity(d, d) * SHRINKAGE;
    }
    Ok((mu, cov))
}

fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>, FrechetError> {
    let sym = (m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(sym);
    let mut vals = e.eigenvalues.clone();
    for v in vals.iter_mut() {
        if !v.is_finite() {
            return Err(FrechetError::Degenerate);
        }
        if *v < -1e-8 {
            return Err(FrechetError::NegativeEigenvalue(*v));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&e.eigenvectors * DMatrix::from_diagonal(&vals) * e.eigenvectors.transpose())
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`, with the square
/// root taken as `(A^(1/2) S_b A^(1/2))^(1/2)`, `A = S_a`, which has the
/// same trace and is symmetric.
pub fn frechet_from_moments(mu_a: &DVector<f64>, cov_a: &DMatrix<f64>, mu_b: &DVector<f64>, cov_b: &DMatrix<f64>) -> Result<f64, FrechetError> {
    let d = mu_a.len();
    if d == 0 || mu_b.len() != d || cov_a.shape() != (d, d) || cov_b.shape() != (d, d) {
        return Err(FrechetError::Width);
    }
    let ra = sqrt_psd(cov_a)?;
    let inner = &ra * cov_b * &ra;
    let cross = sqrt_psd(&inner)?.trace();
    let d2 = (mu_a - mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    if !d2.is_finite() {
        return Err(FrechetError::Degenerate);
    }
    Ok(d2.max(0.0))
}

/// Squared Fréchet distance between the Gaussians fitted to each set.
pub fn frechet(inputs: &FrechetInputs) -> Result<f64, FrechetError> {
    let (ma, ca) = moments(&inputs.features_a)?;
    let (mb, cb) = moments(&inputs.features_b)?;
    frechet_from_moments(&ma, &ca, &mb, &cb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn one(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn gauss_set(n: usize, d: usize, shift: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|j| shift + (j + 1) as f64 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect()).collect()
    }

    #[test]
    fn closed_forms_1d() {
        let z = DVector::from_element(1, 0.0);
        let o = DVector::from_element(1, 1.0);
        assert!((frechet_from_moments(&z, &one(1.0), &o, &one(1.0)).unwrap() - 1.0).abs() < 1e-12);
        // (sigma_a - sigma_b)^2 with sigma 1 and 2
        assert!((frechet_from_moments(&z, &one(1.0), &z, &one(4.0)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_diagonal() {
        // diagonal covariances: sum of per-axis (sqrt a - sqrt b)^2
        let (a, b) = ([1.0, 9.0, 0.25], [4.0, 1.0, 0.25]);
        let mu_a = DVector::from_vec(vec![0.0, 1.0, 2.0]);
        let mu_b = DVector::from_vec(vec![1.0, 1.0, 0.0]);
        let expect: f64 = 1.0 + 4.0 + a.iter().zip(&b).map(|(x, y): (&f64, &f64)| (x.sqrt() - y.sqrt()).powi(2)).sum::<f64>();
        let got = frechet_from_moments(&mu_a, &DMatrix::from_diagonal(&DVector::from_row_slice(&a)), &mu_b, &DMatrix::from_diagonal(&DVector::from_row_slice(&b))).unwrap();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn identical_sets_are_zero() {
        let s = gauss_set(50, 5, 0.0, 3);
        let d = frechet(&FrechetInputs { features_a: s.clone(), features_b: s }).unwrap();
        assert!(d < 1e-10, "{d}");
    }

    #[test]
    fn small_sets_get_shrinkage() {
        let s = gauss_set(3, 6, 0.0, 1);
        let (_, c) = moments(&s).unwrap();
        assert!(c.clone().symmetric_eigen().eigenvalues.min() > 0.0);
        let d = frechet(&FrechetInputs { features_a: s.clone(), features_b: s }).unwrap();
        assert!(d < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(moments(&[vec![1.0]]), Err(FrechetError::TooFew(1)));
        assert_eq!(moments(&[vec![1.0], vec![1.0, 2.0]]).unwrap_err(), FrechetError::Width);
        let z = DVector::from_element(1, 0.0);
        assert!(matches!(frechet_from_moments(&z, &one(-1.0), &z, &one(1.0)), Err(FrechetError::NegativeEigenvalue(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn symmetric_and_rotation_invariant(seed in 0u64..1000, shift in -2.0f64..2.0, angle in 0.0f64..6.28) {
            let a = gauss_set(40, 3, 0.0, seed);
            let b = gauss_set(40, 3, shift, seed + 1);
            let ab = frechet(&FrechetInputs { features_a: a.clone(), features_b: b.clone() }).unwrap();
            let ba = frechet(&FrechetInputs { features_a: b.clone(), features_b: a.clone() }).unwrap();
            prop_assert!((ab - ba).abs() < 1e-8 * (1.0 + ab));
            let (c, s) = (angle.cos(), angle.sin());
            let rot = |v: &Vec<f64>| vec![c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]];
            let r = frechet(&FrechetInputs { features_a: a.iter().map(rot).collect(), features_b: b.iter().map(rot).collect() }).unwrap();
            prop_assert!((r - ab).abs() < 1e-8 * (1.0 + ab));
        }
    }
}
