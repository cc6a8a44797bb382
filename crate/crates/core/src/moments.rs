//! Empirical second moments of a representation pair and their spectral inverses.
//!
//! Every inverse is taken through a symmetric eigendecomposition: eigenvalues are
//! clamped at zero and mapped `e -> 1/(e + lambda)`. With `lambda = 0` this is the
//! Moore-Penrose pseudo-inverse, dropping eigenvalues below `k * eps * max(e)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::repdata::Representation;

/// Largest tolerated asymmetry (relative to the largest entry) of a matrix handed
/// to the spectral routines.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Eigendecomposition of a symmetric PSD matrix with round-off negatives clamped.
#[derive(Debug, Clone)]
pub struct Spectrum {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn of(sigma: &DMatrix<f64>) -> Result<Self> {
        if !sigma.is_square() {
            return Err(Error::InvalidArgument(format!(
                "expected a square matrix, got {} x {}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let scale = sigma.amax().max(1.0);
        let asym = (sigma - sigma.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::Asymmetric(asym));
        }
        let sym = (sigma + sigma.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let values = eig.eigenvalues.map(|e| e.max(0.0));
        Ok(Self {
            values,
            vectors: eig.eigenvectors,
        })
    }

    /// Eigenvalues after clamping (unordered).
    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Eigenvalues at or below this are treated as zero by the pseudo-inverse.
    pub fn cutoff(&self) -> f64 {
        self.dim() as f64 * f64::EPSILON * self.values.max()
    }

    /// Number of eigenvalues above [`Spectrum::cutoff`].
    pub fn rank(&self) -> usize {
        let c = self.cutoff();
        self.values.iter().filter(|&&e| e > c && e > 0.0).count()
    }

    /// Eigenvalues of the regularized inverse, in eigenvector order.
    pub fn inverse_values(&self, lambda: f64) -> DVector<f64> {
        if lambda > 0.0 {
            self.values.map(|e| 1.0 / (e + lambda))
        } else {
            let c = self.cutoff();
            self.values
                .map(|e| if e > c && e > 0.0 { 1.0 / e } else { 0.0 })
        }
    }

    /// `V diag(f(e)) V^T`.
    pub fn compose(&self, weights: &DVector<f64>) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            self.vectors[(i, j)] * weights[j]
        });
        let m = scaled * self.vectors.transpose();
        (&m + m.transpose()) * 0.5
    }

    pub fn regularized_inverse(&self, lambda: f64) -> DMatrix<f64> {
        self.compose(&self.inverse_values(lambda))
    }

    /// `tr(S^-l S S^-l S)`: the sum of squared shrinkage factors `e / (e + lambda)`.
    pub fn shrinkage_energy(&self, lambda: f64) -> f64 {
        self.values
            .iter()
            .zip(self.inverse_values(lambda).iter())
            .map(|(e, w)| (e * w).powi(2))
            .sum()
    }
}

fn require_normalized(rep: &Representation) -> Result<()> {
    if rep.is_normalized() {
        Ok(())
    } else {
        Err(Error::NotNormalized(rep.name().to_string()))
    }
}

/// `(1/n) A^T A`, symmetrized.
pub fn covariance(rep: &Representation) -> Result<DMatrix<f64>> {
    require_normalized(rep)?;
    let a = rep.data();
    let s = a.tr_mul(a) / rep.n() as f64;
    Ok((&s + s.transpose()) * 0.5)
}

/// `(1/n) A^T B` for two representations of the same samples.
pub fn cross_covariance(a: &Representation, b: &Representation) -> Result<DMatrix<f64>> {
    require_normalized(a)?;
    require_normalized(b)?;
    if a.n() != b.n() {
        return Err(Error::SampleMismatch(a.n(), b.n()));
    }
    Ok(a.data().tr_mul(b.data()) / a.n() as f64)
}

/// `(sigma + lambda I)^-1`, or the pseudo-inverse when `lambda == 0`.
pub fn regularized_inverse(sigma: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    check_lambda(lambda)?;
    Ok(Spectrum::of(sigma)?.regularized_inverse(lambda))
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )))
    }
}

/// Covariances, cross-covariance and their spectra for a representation pair.
///
/// Regularized inverses are materialized per `lambda` on request, so one
/// `MomentSet` serves a whole grid of regularization strengths.
#[derive(Debug, Clone)]
pub struct MomentSet {
    pub name_a: String,
    pub name_b: String,
    pub sigma_phi: DMatrix<f64>,
    pub sigma_psi: DMatrix<f64>,
    pub sigma_cross: DMatrix<f64>,
    pub n: usize,
    spec_phi: Spectrum,
    spec_psi: Spectrum,
}

impl MomentSet {
    pub fn new(a: &Representation, b: &Representation) -> Result<Self> {
        let sigma_cross = cross_covariance(a, b)?;
        let mut m = Self::from_matrices(covariance(a)?, covariance(b)?, sigma_cross, a.n())?;
        m.name_a = a.name().to_string();
        m.name_b = b.name().to_string();
        Ok(m)
    }

    /// Builds a moment set directly from (already empirical) second moments.
    pub fn from_matrices(
        sigma_phi: DMatrix<f64>,
        sigma_psi: DMatrix<f64>,
        sigma_cross: DMatrix<f64>,
        n: usize,
    ) -> Result<Self> {
        if sigma_cross.shape() != (sigma_phi.nrows(), sigma_psi.nrows()) {
            return Err(Error::InvalidArgument(format!(
                "cross-covariance is {:?}, expected ({}, {})",
                sigma_cross.shape(),
                sigma_phi.nrows(),
                sigma_psi.nrows()
            )));
        }
        let spec_phi = Spectrum::of(&sigma_phi)?;
        let spec_psi = Spectrum::of(&sigma_psi)?;
        Ok(Self {
            name_a: "phi".to_string(),
            name_b: "psi".to_string(),
            sigma_phi,
            sigma_psi,
            sigma_cross,
            n,
            spec_phi,
            spec_psi,
        })
    }

    pub fn k(&self) -> usize {
        self.sigma_phi.nrows()
    }

    pub fn l(&self) -> usize {
        self.sigma_psi.nrows()
    }

    pub fn spectrum_phi(&self) -> &Spectrum {
        &self.spec_phi
    }

    pub fn spectrum_psi(&self) -> &Spectrum {
        &self.spec_psi
    }

    pub fn inv_phi(&self, lambda: f64) -> DMatrix<f64> {
        self.spec_phi.regularized_inverse(lambda)
    }

    pub fn inv_psi(&self, lambda: f64) -> DMatrix<f64> {
        self.spec_psi.regularized_inverse(lambda)
    }

    /// `D_phi^{1/2} V_phi^T Sigma_cross V_psi D_psi^{1/2}` with `D = 1/(e + lambda)`.
    ///
    /// Its squared Frobenius norm is `tr(S_phi^-l Sigma_cross S_psi^-l Sigma_cross^T)`
    /// and its singular values are the (ridge) canonical correlations.
    pub fn whitened_cross(&self, lambda: f64) -> DMatrix<f64> {
        let dp = self.spec_phi.inverse_values(lambda).map(f64::sqrt);
        let dq = self.spec_psi.inverse_values(lambda).map(f64::sqrt);
        let y = self.spec_phi.vectors().tr_mul(&self.sigma_cross) * self.spec_psi.vectors();
        DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| dp[i] * y[(i, j)] * dq[j])
    }

    /// True when the `lambda = 0` path had to fall back to a pseudo-inverse.
    pub fn rank_deficient(&self, lambda: f64) -> bool {
        lambda == 0.0
            && (self.n <= self.k().max(self.l())
                || self.spec_phi.rank() < self.k()
                || self.spec_psi.rank() < self.l())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repdata::{haar_orthogonal, synthesize, Synth, SynthFamily, SynthSpec};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn norm_rep(rows: &[Vec<f64>]) -> Representation {
        Representation::from_rows("t", rows)
            .unwrap()
            .normalize()
            .unwrap()
    }

    fn pair(seed: u64, n: usize, k: usize) -> (Representation, Representation) {
        let spec = SynthSpec::new(SynthFamily::Gaussian, n, k, seed).rho(0.3);
        match synthesize(&spec).unwrap() {
            Synth::Pair(a, b) => (a, b),
            _ => unreachable!(),
        }
    }

    #[test]
    fn covariance_of_unit_scalar() {
        let c = covariance(&norm_rep(&[vec![1.0], vec![-1.0]])).unwrap();
        assert_eq!(c, DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn covariance_of_degenerate_column_is_rank_one() {
        // Normalizing [[1,0],[-1,0]] leaves it unchanged; covariance is diag(1, 0).
        let c = covariance(&norm_rep(&[vec![1.0, 0.0], vec![-1.0, 0.0]])).unwrap();
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(Spectrum::of(&c).unwrap().rank(), 1);
    }

    #[test]
    fn covariance_trace_is_one() {
        let (a, _) = pair(1, 1000, 4);
        assert!((covariance(&a).unwrap().trace() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn covariance_rejects_raw() {
        let r = Representation::from_rows("raw", &[vec![1.0], vec![2.0]]).unwrap();
        assert!(matches!(covariance(&r), Err(Error::NotNormalized(_))));
    }

    #[test]
    fn self_cross_covariance_is_covariance() {
        let (a, _) = pair(2, 50, 3);
        assert_eq!(
            cross_covariance(&a, &a).unwrap(),
            a.data().tr_mul(a.data()) / 50.0
        );
        let diff = cross_covariance(&a, &a).unwrap() - covariance(&a).unwrap();
        assert!(diff.amax() <= 1e-15);
    }

    #[test]
    fn cross_covariance_permutation() {
        let (a, _) = pair(3, 60, 3);
        let perm = [2usize, 0, 1];
        let p = DMatrix::from_fn(3, 3, |i, j| if perm[j] == i { 1.0 } else { 0.0 });
        let b = Representation::new("b", a.data() * &p)
            .unwrap()
            .normalize()
            .unwrap();
        let lhs = cross_covariance(&a, &b).unwrap();
        let rhs = covariance(&a).unwrap() * &p;
        assert!((lhs - rhs).amax() <= 1e-14);
    }

    #[test]
    fn cross_covariance_independent_is_small() {
        let (a, b) = {
            let spec = SynthSpec::new(SynthFamily::Gaussian, 100_000, 1, 4);
            match synthesize(&spec).unwrap() {
                Synth::Pair(a, b) => (a, b),
                _ => unreachable!(),
            }
        };
        // 5 / sqrt(n) CLT tolerance.
        assert!(cross_covariance(&a, &b).unwrap()[(0, 0)].abs() <= 0.02);
    }

    #[test]
    fn cross_covariance_rejects_mismatched_n() {
        let (a, _) = pair(5, 20, 2);
        let (b, _) = pair(5, 21, 2);
        assert!(matches!(
            cross_covariance(&a, &b),
            Err(Error::SampleMismatch(20, 21))
        ));
    }

    #[test]
    fn inverse_examples() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert!((regularized_inverse(&i3, 1.0).unwrap() - &i3 * 0.5).amax() <= 1e-15);

        let d10 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!((regularized_inverse(&d10, 0.0).unwrap() - &d10).amax() <= 1e-15);

        let d21 = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![0.4, 2.0 / 3.0]));
        assert!((regularized_inverse(&d21, 0.5).unwrap() - expect).amax() <= 1e-15);
    }

    #[test]
    fn inverse_rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            regularized_inverse(&m, 1.0),
            Err(Error::Asymmetric(_))
        ));
    }

    #[test]
    fn inverse_times_shifted_is_identity() {
        let (a, b) = pair(6, 300, 8);
        let m = MomentSet::new(&a, &b).unwrap();
        for lambda in [1e-6, 1e-4, 1e-2, 1.0] {
            let shifted = &m.sigma_phi + DMatrix::identity(8, 8) * lambda;
            let prod = m.inv_phi(lambda) * shifted;
            assert!(
                (prod - DMatrix::identity(8, 8)).amax() <= 1e-8,
                "lambda {lambda}"
            );
        }
    }

    #[test]
    fn rank_deficiency_flag() {
        let (a, b) = pair(7, 5, 8);
        let m = MomentSet::new(&a, &b).unwrap();
        assert!(m.rank_deficient(0.0));
        assert!(!m.rank_deficient(0.1));
        let (a, b) = pair(7, 50, 3);
        assert!(!MomentSet::new(&a, &b).unwrap().rank_deficient(0.0));
    }

    fn psd_strategy() -> impl Strategy<Value = (DMatrix<f64>, u64)> {
        (1usize..7, any::<u64>()).prop_flat_map(|(k, seed)| {
            proptest::collection::vec(-3.0f64..3.0, k * (k + 2)).prop_map(move |v| {
                let g = DMatrix::from_row_slice(k + 2, k, &v);
                (g.tr_mul(&g) / (k + 2) as f64, seed)
            })
        })
    }

    proptest! {
        #[test]
        fn inverse_conjugates_with_orthogonal((sigma, seed) in psd_strategy(), lambda in 0.0f64..2.0) {
            let k = sigma.nrows();
            let u = haar_orthogonal(&mut ChaCha8Rng::seed_from_u64(seed), k);
            let lambda = if lambda < 0.2 { lambda * 1e-3 + 1e-3 } else { lambda };
            let rotated = &u * &sigma * u.transpose();
            let lhs = regularized_inverse(&rotated, lambda).unwrap();
            let rhs = &u * regularized_inverse(&sigma, lambda).unwrap() * u.transpose();
            prop_assert!((lhs - rhs).amax() <= 1e-10 * (1.0 + 1.0 / lambda));
        }

        #[test]
        fn inverse_is_symmetric_psd((sigma, _) in psd_strategy(), lambda in 0.0f64..2.0) {
            let inv = regularized_inverse(&sigma, lambda).unwrap();
            prop_assert!((&inv - inv.transpose()).amax() == 0.0);
            let eig = inv.symmetric_eigenvalues();
            prop_assert!(eig.min() >= -1e-10 * eig.amax().max(1.0));
        }
    }
}
