//! Problem instances: local loss oracles and the global hyperparameter record.

use nalgebra::linalg::Cholesky;

use crate::error::{check_dim, Error, Result};
use crate::{Matrix, Vector};

/// Global dimensions and hyperparameters of one problem instance.
///
/// [`ProblemSpec::new`] applies the default rules: `γ = λ/(3m)`, which makes
/// `τ = mγ/(mγ+λ) = 1/4`, `σ = 0.1` and `δ = 0.9·λ/(3m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemSpec {
    /// Number of clients.
    pub m: usize,
    /// Model dimension.
    pub d: usize,
    /// Ridge weight λ of the global objective.
    pub lambda: f64,
    /// Envelope parameter γ.
    pub gamma: f64,
    /// Dual averaging coefficient τ = mγ/(mγ+λ).
    pub tau: f64,
    /// Sufficient-decrease constant σ ∈ (0, 1/2).
    pub sigma: f64,
    /// Short-step constant δ ∈ (0, λ/(3m)).
    pub delta: f64,
    /// Absolute gradient-norm tolerance of the client proximal solves.
    pub inner_tol: f64,
    pub max_rounds: usize,
    /// Stop once the optimality residual drops to this value.
    pub stop_tol: f64,
}

impl ProblemSpec {
    pub const DEFAULT_SIGMA: f64 = 0.1;
    pub const DEFAULT_DELTA_FRACTION: f64 = 0.9;
    pub const DEFAULT_INNER_TOL: f64 = 1e-12;
    pub const DEFAULT_MAX_ROUNDS: usize = 1000;
    pub const DEFAULT_STOP_TOL: f64 = 1e-10;

    pub fn new(m: usize, d: usize, lambda: f64) -> Result<Self> {
        if m == 0 || d == 0 {
            return Err(Error::InvalidInput(format!(
                "client count and dimension must be positive (m={m}, d={d})"
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
        }
        let gamma = default_gamma(lambda, m);
        let spec = ProblemSpec {
            m,
            d,
            lambda,
            gamma,
            tau: tau_for(lambda, m, gamma),
            sigma: Self::DEFAULT_SIGMA,
            delta: Self::DEFAULT_DELTA_FRACTION * gamma,
            inner_tol: Self::DEFAULT_INNER_TOL,
            max_rounds: Self::DEFAULT_MAX_ROUNDS,
            stop_tol: Self::DEFAULT_STOP_TOL,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Overrides γ and recomputes τ.
    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        self.gamma = gamma;
        self.tau = tau_for(self.lambda, self.m, gamma);
        self.validate()?;
        Ok(self)
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        self.sigma = sigma;
        self.validate()?;
        Ok(self)
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        self.delta = delta;
        self.validate()?;
        Ok(self)
    }

    pub fn with_inner_tol(mut self, inner_tol: f64) -> Result<Self> {
        self.inner_tol = inner_tol;
        self.validate()?;
        Ok(self)
    }

    pub fn with_max_rounds(mut self, max_rounds: usize) -> Self {
        self.max_rounds = max_rounds;
        self
    }

    pub fn with_stop_tol(mut self, stop_tol: f64) -> Result<Self> {
        self.stop_tol = stop_tol;
        self.validate()?;
        Ok(self)
    }

    /// Upper end of the admissible short-step range, `λ/(3m)`.
    pub fn delta_bound(&self) -> f64 {
        default_gamma(self.lambda, self.m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.m == 0 || self.d == 0 {
            return bad(format!("m and d must be positive (m={}, d={})", self.m, self.d));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if !(self.sigma > 0.0 && self.sigma < 0.5) {
            return bad(format!("sigma must lie in (0, 1/2), got {}", self.sigma));
        }
        let bound = self.delta_bound();
        if !(self.delta > 0.0 && self.delta < bound) {
            return bad(format!("delta must lie in (0, {bound:e}), got {}", self.delta));
        }
        if !(self.inner_tol > 0.0) {
            return bad(format!("inner_tol must be positive, got {}", self.inner_tol));
        }
        if !(self.stop_tol >= 0.0) {
            return bad(format!("stop_tol must be non-negative, got {}", self.stop_tol));
        }
        Ok(())
    }
}

/// `γ = λ/(3m)`.
pub fn default_gamma(lambda: f64, m: usize) -> f64 {
    lambda / (3.0 * m as f64)
}

/// `τ = mγ/(mγ+λ)`.
pub fn tau_for(lambda: f64, m: usize, gamma: f64) -> f64 {
    let mg = m as f64 * gamma;
    mg / (mg + lambda)
}

/// Value/gradient/Hessian oracle of one client's loss `fᵢ`.
///
/// The `*_at` methods assume `x.len() == self.dim()`; the provided methods
/// without the suffix check the dimension first.
pub trait LocalLoss: Send + Sync {
    fn dim(&self) -> usize;

    /// Number of samples behind this loss (1 for analytic losses).
    fn sample_count(&self) -> usize;

    fn value_at(&self, x: &Vector) -> f64;

    fn gradient_at(&self, x: &Vector) -> Vector;

    fn hessian_at(&self, x: &Vector) -> Matrix;

    fn value(&self, x: &Vector) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.value_at(x))
    }

    fn gradient(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim(), x.len())?;
        Ok(self.gradient_at(x))
    }

    fn hessian(&self, x: &Vector) -> Result<Matrix> {
        check_dim(self.dim(), x.len())?;
        Ok(self.hessian_at(x))
    }
}

pub fn loss_value(loss: &dyn LocalLoss, x: &Vector) -> Result<f64> {
    loss.value(x)
}

pub fn loss_gradient(loss: &dyn LocalLoss, x: &Vector) -> Result<Vector> {
    loss.gradient(x)
}

pub fn loss_hessian(loss: &dyn LocalLoss, x: &Vector) -> Result<Matrix> {
    loss.hessian(x)
}

/// Logistic sigmoid, evaluated without overflowing for large `|t|`.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eᵗ)` without overflow.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `f(x) = (1/n) Σⱼ [ln(1 + e^{wⱼᵀx}) + (1 − yⱼ) wⱼᵀx]` with labels `yⱼ ∈ {0, 1}`.
#[derive(Debug, Clone)]
pub struct LogisticLoss {
    /// One sample per row.
    features: Matrix,
    labels: Vec<f64>,
}

impl LogisticLoss {
    pub fn new(features: Matrix, labels: Vec<f64>) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::InvalidInput("logistic loss needs at least one sample".into()));
        }
        check_dim(features.nrows(), labels.len())?;
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::InvalidInput(format!("labels must be 0 or 1, got {bad}")));
        }
        Ok(LogisticLoss { features, labels })
    }

    pub fn from_samples(samples: &[(Vector, f64)]) -> Result<Self> {
        let d = samples
            .first()
            .map(|(w, _)| w.len())
            .ok_or_else(|| Error::InvalidInput("logistic loss needs at least one sample".into()))?;
        let mut features = Matrix::zeros(samples.len(), d);
        for (row, (w, _)) in samples.iter().enumerate() {
            check_dim(d, w.len())?;
            features.set_row(row, &w.transpose());
        }
        LogisticLoss::new(features, samples.iter().map(|(_, y)| *y).collect())
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// `(1/4n) Σ ‖wⱼ‖²`, an upper bound on the Hessian spectrum.
    pub fn curvature_bound(&self) -> f64 {
        self.features.norm_squared() / (4.0 * self.labels.len() as f64)
    }
}

impl LocalLoss for LogisticLoss {
    fn dim(&self) -> usize {
        self.features.ncols()
    }

    fn sample_count(&self) -> usize {
        self.labels.len()
    }

    fn value_at(&self, x: &Vector) -> f64 {
        let margins = &self.features * x;
        let total: f64 = margins
            .iter()
            .zip(&self.labels)
            .map(|(&t, &y)| softplus(t) + (1.0 - y) * t)
            .sum();
        total / self.labels.len() as f64
    }

    fn gradient_at(&self, x: &Vector) -> Vector {
        let margins = &self.features * x;
        let weights = Vector::from_iterator(
            margins.len(),
            margins.iter().zip(&self.labels).map(|(&t, &y)| sigmoid(t) + (1.0 - y)),
        );
        self.features.tr_mul(&weights) / self.labels.len() as f64
    }

    fn hessian_at(&self, x: &Vector) -> Matrix {
        let margins = &self.features * x;
        let mut scaled = self.features.clone();
        for (mut row, &t) in scaled.row_iter_mut().zip(margins.iter()) {
            let s = sigmoid(t);
            row *= s * (1.0 - s);
        }
        let mut h = self.features.tr_mul(&scaled) / self.labels.len() as f64;
        symmetrize(&mut h);
        h
    }
}

/// `f(x) = ½(x − a)ᵀA(x − a)` with `A` symmetric positive definite.
#[derive(Debug, Clone)]
pub struct QuadraticLoss {
    center: Vector,
    curvature: Matrix,
}

impl QuadraticLoss {
    pub fn new(center: Vector, curvature: Matrix) -> Result<Self> {
        let d = center.len();
        check_dim(d, curvature.nrows())?;
        check_dim(d, curvature.ncols())?;
        let asym = (&curvature - curvature.transpose()).amax();
        if asym > 1e-12 * curvature.amax().max(1.0) {
            return Err(Error::InvalidInput("curvature matrix must be symmetric".into()));
        }
        if Cholesky::new(curvature.clone()).is_none() {
            return Err(Error::InvalidInput("curvature matrix must be positive definite".into()));
        }
        Ok(QuadraticLoss { center, curvature })
    }

    /// `A = c·I`.
    pub fn isotropic(center: Vector, c: f64) -> Result<Self> {
        let d = center.len();
        QuadraticLoss::new(center, Matrix::identity(d, d) * c)
    }

    pub fn center(&self) -> &Vector {
        &self.center
    }

    pub fn curvature(&self) -> &Matrix {
        &self.curvature
    }
}

impl LocalLoss for QuadraticLoss {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn sample_count(&self) -> usize {
        1
    }

    fn value_at(&self, x: &Vector) -> f64 {
        let r = x - &self.center;
        0.5 * r.dot(&(&self.curvature * &r))
    }

    fn gradient_at(&self, x: &Vector) -> Vector {
        &self.curvature * (x - &self.center)
    }

    fn hessian_at(&self, _x: &Vector) -> Matrix {
        self.curvature.clone()
    }
}

pub(crate) fn symmetrize(m: &mut Matrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_logistic(rng: &mut ChaCha8Rng, n: usize, d: usize) -> LogisticLoss {
        let features = Matrix::from_fn(n, d, |_, _| rng.random_range(-1.5..1.5));
        let labels = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        LogisticLoss::new(features, labels).unwrap()
    }

    fn random_quadratic(rng: &mut ChaCha8Rng, d: usize) -> QuadraticLoss {
        let r = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let a = r.tr_mul(&r) + Matrix::identity(d, d) * 0.5;
        let c = Vector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        QuadraticLoss::new(c, a).unwrap()
    }

    // Central differences, independent of the analytic gradient/Hessian code.
    fn fd_gradient(loss: &dyn LocalLoss, x: &Vector, h: f64) -> Vector {
        Vector::from_fn(x.len(), |k, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            (loss.value_at(&xp) - loss.value_at(&xm)) / (2.0 * h)
        })
    }

    fn fd_hessian(loss: &dyn LocalLoss, x: &Vector, h: f64) -> Matrix {
        let d = x.len();
        let mut out = Matrix::zeros(d, d);
        for k in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let col = (loss.gradient_at(&xp) - loss.gradient_at(&xm)) / (2.0 * h);
            out.set_column(k, &col);
        }
        out
    }

    fn rel_err(a: &Vector, b: &Vector) -> f64 {
        (a - b).norm() / b.norm().max(1e-12)
    }

    #[test]
    fn default_rule_gives_quarter_tau() {
        for (lambda, m) in [(0.3, 10), (0.1, 5), (2.0, 1), (1e-3, 37)] {
            let spec = ProblemSpec::new(m, 3, lambda).unwrap();
            assert_relative_eq!(spec.gamma, lambda / (3.0 * m as f64));
            assert_relative_eq!(spec.tau, 0.25, epsilon = 1e-15);
            assert!(spec.delta < spec.delta_bound());
        }
    }

    #[test]
    fn spec_rejects_out_of_range_parameters() {
        assert!(ProblemSpec::new(0, 3, 1.0).is_err());
        assert!(ProblemSpec::new(2, 3, 0.0).is_err());
        let spec = ProblemSpec::new(2, 3, 1.0).unwrap();
        assert!(spec.clone().with_sigma(0.5).is_err());
        assert!(spec.clone().with_sigma(0.0).is_err());
        assert!(spec.clone().with_delta(spec.delta_bound()).is_err());
        assert!(spec.clone().with_delta(0.0).is_err());
        assert!(spec.with_inner_tol(-1.0).is_err());
    }

    #[test]
    fn quadratic_value_and_gradient_basics() {
        let q = QuadraticLoss::isotropic(Vector::zeros(3), 1.0).unwrap();
        assert_eq!(loss_value(&q, &Vector::zeros(3)).unwrap(), 0.0);
        let a = dvector![1.0, -2.0, 0.5];
        let q = QuadraticLoss::isotropic(a.clone(), 1.0).unwrap();
        let x = dvector![0.3, 0.1, -4.0];
        assert_eq!(q.gradient(&x).unwrap(), &x - &a);
        let q = QuadraticLoss::isotropic(a.clone(), 2.5).unwrap();
        assert_eq!(q.gradient(&x).unwrap(), (&x - &a) * 2.5);
        let curv = dmatrix![2.0, 0.5; 0.5, 1.0];
        let q = QuadraticLoss::new(dvector![0.0, 1.0], curv.clone()).unwrap();
        assert_eq!(q.hessian(&dvector![7.0, -3.0]).unwrap(), curv);
    }

    #[test]
    fn quadratic_rejects_indefinite_or_asymmetric() {
        assert!(QuadraticLoss::new(dvector![0.0, 0.0], dmatrix![1.0, 0.0; 0.0, -1.0]).is_err());
        assert!(QuadraticLoss::new(dvector![0.0, 0.0], dmatrix![1.0, 0.3; 0.0, 1.0]).is_err());
    }

    #[test]
    fn logistic_hand_values() {
        let zero = LogisticLoss::new(Matrix::zeros(1, 4), vec![0.0]).unwrap();
        let x = dvector![0.3, -1.0, 2.0, 5.0];
        assert_relative_eq!(zero.value(&x).unwrap(), 2f64.ln(), epsilon = 1e-15);

        let one = LogisticLoss::new(dmatrix![1.0], vec![1.0]).unwrap();
        assert_relative_eq!(one.value(&dvector![0.0]).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(one.gradient(&dvector![0.0]).unwrap()[0], 0.5, epsilon = 1e-15);

        for y in [0.0, 1.0] {
            let two = LogisticLoss::new(dmatrix![2.0], vec![y]).unwrap();
            assert_relative_eq!(two.hessian(&dvector![0.0]).unwrap()[(0, 0)], 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn logistic_is_stable_for_huge_margins() {
        let loss = LogisticLoss::new(dmatrix![1.0; -1.0], vec![1.0, 0.0]).unwrap();
        let x = dvector![1e4];
        assert!(loss.value(&x).unwrap().is_finite());
        assert!(loss.gradient(&x).unwrap()[0].is_finite());
        assert!(loss.hessian(&x).unwrap()[(0, 0)].is_finite());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let loss = LogisticLoss::new(Matrix::zeros(2, 3), vec![0.0, 1.0]).unwrap();
        let x = Vector::zeros(2);
        assert!(matches!(loss.value(&x), Err(Error::DimensionMismatch { expected: 3, got: 2 })));
        assert!(loss.gradient(&x).is_err());
        assert!(loss.hessian(&x).is_err());
        let q = QuadraticLoss::isotropic(Vector::zeros(3), 1.0).unwrap();
        assert!(loss_value(&q, &x).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let losses: Vec<Box<dyn LocalLoss>> = vec![
            Box::new(random_logistic(&mut rng, 40, 5)),
            Box::new(random_quadratic(&mut rng, 4)),
        ];
        for loss in &losses {
            for _ in 0..5 {
                let x = Vector::from_fn(loss.dim(), |_, _| rng.random_range(-1.0..1.0));
                let g = loss.gradient(&x).unwrap();
                assert!(rel_err(&fd_gradient(loss.as_ref(), &x, 1e-5), &g) <= 1e-6);
            }
        }
    }

    #[test]
    fn hessians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let losses: Vec<Box<dyn LocalLoss>> = vec![
            Box::new(random_logistic(&mut rng, 40, 5)),
            Box::new(random_quadratic(&mut rng, 4)),
        ];
        for loss in &losses {
            for _ in 0..5 {
                let x = Vector::from_fn(loss.dim(), |_, _| rng.random_range(-1.0..1.0));
                let h = loss.hessian(&x).unwrap();
                let fd = fd_hessian(loss.as_ref(), &x, 1e-5);
                assert!((&fd - &h).norm() / h.norm() <= 1e-5);
            }
        }
    }

    #[test]
    fn logistic_hessian_spectrum_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let loss = random_logistic(&mut rng, 30, 4);
            let x = Vector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
            let eig = loss.hessian(&x).unwrap().symmetric_eigenvalues();
            let bound = loss.curvature_bound();
            assert!(eig.iter().all(|&e| e >= -1e-14 && e <= bound + 1e-12));
        }
    }

    #[test]
    fn sigmoid_and_softplus_branches_agree() {
        for t in [-30.0, -1.0, -1e-9, 0.0, 1e-9, 1.0, 30.0] {
            assert_relative_eq!(sigmoid(t), 1.0 / (1.0 + (-t as f64).exp()), max_relative = 1e-14);
            assert_relative_eq!(softplus(t), (1.0 + (t as f64).exp()).ln(), max_relative = 1e-14);
        }
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(softplus(800.0), 800.0);
    }
}
