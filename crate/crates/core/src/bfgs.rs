//! Dense inverse-Hessian BFGS state.

use nalgebra::linalg::Cholesky;

use crate::error::{check_dim, Error, Result};
use crate::problem::symmetrize;
use crate::{Matrix, Vector};

/// Updates with `sᵀz ≤ CURVATURE_GUARD·‖s‖‖z‖` are skipped.
pub const CURVATURE_GUARD: f64 = 1e-12;

/// `s = y⁺ − y`, `z = ∇H(y⁺) − ∇H(y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvaturePair {
    pub s: Vector,
    pub z: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Accepted,
    /// Curvature guard tripped; the matrix is unchanged.
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsState {
    inv_hessian: Matrix,
    accepted: usize,
    skipped: usize,
}

impl BfgsState {
    /// Starts from the identity.
    pub fn new(n: usize) -> Self {
        BfgsState::with_initial(Matrix::identity(n, n))
    }

    pub fn with_initial(inv_hessian: Matrix) -> Self {
        BfgsState {
            inv_hessian,
            accepted: 0,
            skipped: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.inv_hessian.nrows()
    }

    pub fn inv_hessian(&self) -> &Matrix {
        &self.inv_hessian
    }

    pub fn accepted_updates(&self) -> usize {
        self.accepted
    }

    pub fn skipped_updates(&self) -> usize {
        self.skipped
    }

    /// Inverse BFGS update
    ///
    /// ```text
    /// B⁺ = B + (sᵀz + zᵀBz)·ssᵀ/(sᵀz)² − (Bz·sᵀ + s·zᵀB)/(sᵀz)
    /// ```
    pub fn update(&mut self, pair: &CurvaturePair) -> Result<UpdateOutcome> {
        let CurvaturePair { s, z } = pair;
        check_dim(self.dim(), s.len())?;
        check_dim(self.dim(), z.len())?;
        if s.iter().chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite curvature pair".into()));
        }
        let sz = s.dot(z);
        if sz <= CURVATURE_GUARD * s.norm() * z.norm() {
            self.skipped += 1;
            return Ok(UpdateOutcome::Skipped);
        }
        let bz = &self.inv_hessian * z;
        let zbz = z.dot(&bz);
        let b = &mut self.inv_hessian;
        b.ger((sz + zbz) / (sz * sz), s, s, 1.0);
        b.ger(-1.0 / sz, &bz, s, 1.0);
        b.ger(-1.0 / sz, s, &bz, 1.0);
        symmetrize(b);
        self.accepted += 1;
        Ok(UpdateOutcome::Accepted)
    }

    /// `p = B⁻¹·g`. The iterate moves along `−p`.
    pub fn direction(&self, gradient: &Vector) -> Result<Vector> {
        check_dim(self.dim(), gradient.len())?;
        Ok(&self.inv_hessian * gradient)
    }

    /// `‖B⁻¹z − s‖ / ‖s‖`.
    pub fn secant_residual(&self, pair: &CurvaturePair) -> f64 {
        (&self.inv_hessian * &pair.z - &pair.s).norm() / pair.s.norm()
    }

    pub fn is_positive_definite(&self) -> bool {
        Cholesky::new(self.inv_hessian.clone()).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let r = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        r.tr_mul(&r) + Matrix::identity(n, n) * 0.1
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vector {
        Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_with_equal_pair_is_fixed() {
        let mut state = BfgsState::new(3);
        let s = dvector![0.3, -1.2, 2.0];
        assert_eq!(state.update(&CurvaturePair { s: s.clone(), z: s }).unwrap(), UpdateOutcome::Accepted);
        assert_relative_eq!(state.inv_hessian(), &Matrix::identity(3, 3), epsilon = 1e-15);
    }

    #[test]
    fn one_dimensional_hand_case() {
        let mut state = BfgsState::new(1);
        let pair = CurvaturePair { s: dvector![2.0], z: dvector![4.0] };
        state.update(&pair).unwrap();
        assert_relative_eq!(state.inv_hessian()[(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(state.direction(&dvector![4.0]).unwrap()[0], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn negative_curvature_is_skipped() {
        let mut state = BfgsState::new(2);
        let pair = CurvaturePair { s: dvector![1.0, 0.0], z: dvector![-1.0, 0.5] };
        assert_eq!(state.update(&pair).unwrap(), UpdateOutcome::Skipped);
        assert_eq!(state.inv_hessian(), &Matrix::identity(2, 2));
        assert_eq!(state.skipped_updates(), 1);
        let zero = CurvaturePair { s: Vector::zeros(2), z: dvector![1.0, 0.0] };
        assert_eq!(state.update(&zero).unwrap(), UpdateOutcome::Skipped);
    }

    #[test]
    fn rejects_non_finite_and_mismatched() {
        let mut state = BfgsState::new(2);
        let pair = CurvaturePair { s: dvector![f64::NAN, 0.0], z: dvector![1.0, 0.0] };
        assert!(matches!(state.update(&pair), Err(Error::Numerical(_))));
        let pair = CurvaturePair { s: dvector![1.0], z: dvector![1.0] };
        assert!(state.update(&pair).is_err());
        assert!(state.direction(&dvector![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn direction_basics() {
        let state = BfgsState::new(3);
        let g = dvector![1.0, -2.0, 0.5];
        assert_eq!(state.direction(&g).unwrap(), g);
        assert_eq!(state.direction(&Vector::zeros(3)).unwrap(), Vector::zeros(3));
    }

    proptest! {
        #[test]
        fn secant_and_definiteness_after_update(seed in any::<u64>(), n in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut state = BfgsState::with_initial(random_spd(&mut rng, n));
            let s = random_vec(&mut rng, n);
            // z = A s for SPD A guarantees sᵀz > 0
            let z = random_spd(&mut rng, n) * &s;
            let pair = CurvaturePair { s, z };
            prop_assume!(pair.s.norm() > 1e-3);
            prop_assert_eq!(state.update(&pair).unwrap(), UpdateOutcome::Accepted);
            prop_assert!(state.secant_residual(&pair) <= 1e-10);
            prop_assert!(state.is_positive_definite());
            let b = state.inv_hessian();
            prop_assert!((b - b.transpose()).amax() == 0.0);
        }

        #[test]
        fn directions_descend(seed in any::<u64>(), n in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let state = BfgsState::with_initial(random_spd(&mut rng, n));
            let g = random_vec(&mut rng, n);
            prop_assume!(g.norm() > 1e-6);
            prop_assert!(state.is_positive_definite());
            prop_assert!(state.direction(&g).unwrap().dot(&g) > 0.0);
        }
    }
}
