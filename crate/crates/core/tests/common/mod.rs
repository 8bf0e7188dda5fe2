#![allow(dead_code)]

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::Cholesky;
use qnd2r::client::{compute_v, prox_solve};
use qnd2r::data::{self, Dataset};
use qnd2r::envelope::{assemble_gradient, assemble_value, dual_shift, EnvelopeCoefficients, StackedVector};
use qnd2r::orchestrator::RunTrace;
use qnd2r::problem::{LocalLoss, ProblemSpec, QuadraticLoss};
use qnd2r::{Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PINNED_M: usize = 5;
pub const PINNED_D: usize = 10;
pub const PINNED_LAMBDA: f64 = 0.1;

pub fn pinned_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/pinned_n500_d10_seed7.svm")
}

pub fn pinned_dataset() -> Dataset {
    data::parse_libsvm(BufReader::new(File::open(pinned_path()).unwrap()), PINNED_D).unwrap()
}

pub fn pinned_losses() -> Vec<Arc<dyn LocalLoss>> {
    let ds = pinned_dataset();
    data::partition_sorted(&ds, PINNED_M, ds.len())
        .unwrap()
        .iter()
        .map(|s| Arc::new(s.to_loss().unwrap()) as Arc<dyn LocalLoss>)
        .collect()
}

pub fn pinned_spec() -> ProblemSpec {
    ProblemSpec::new(PINNED_M, PINNED_D, PINNED_LAMBDA).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    Vector::from_fn(n, |_, _| scale * rng.random_range(-1.0..1.0))
}

pub fn random_stacked(rng: &mut ChaCha8Rng, m: usize, d: usize, scale: f64) -> StackedVector {
    StackedVector::from_vector(uniform_vector(rng, m * d, scale), m, d).unwrap()
}

/// `RᵀR/d + 0.5·I` with `R` uniform on `[-1, 1]`.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> Matrix {
    let r = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let a = r.transpose() * &r / d as f64 + Matrix::identity(d, d) * 0.5;
    (&a + a.transpose()) * 0.5
}

pub struct QuadraticInstance {
    pub quads: Vec<QuadraticLoss>,
    pub lambda: f64,
}

impl QuadraticInstance {
    pub fn random(rng: &mut ChaCha8Rng, m: usize, d: usize, lambda: f64) -> Self {
        let quads = (0..m)
            .map(|_| {
                let a = random_spd(rng, d);
                QuadraticLoss::new(uniform_vector(rng, d, 1.0), a).unwrap()
            })
            .collect();
        QuadraticInstance { quads, lambda }
    }

    pub fn losses(&self) -> Vec<Arc<dyn LocalLoss>> {
        self.quads
            .iter()
            .map(|q| Arc::new(q.clone()) as Arc<dyn LocalLoss>)
            .collect()
    }

    /// Solves `(ΣAᵢ + λI)x = ΣAᵢaᵢ`.
    pub fn minimizer(&self) -> Vector {
        let d = self.quads[0].center().len();
        let mut lhs = Matrix::identity(d, d) * self.lambda;
        let mut rhs = Vector::zeros(d);
        for q in &self.quads {
            lhs += q.curvature();
            rhs += q.curvature() * q.center();
        }
        Cholesky::new(lhs).unwrap().solve(&rhs)
    }

    /// Largest eigenvalue over all `Aᵢ`.
    pub fn max_curvature(&self) -> f64 {
        self.quads
            .iter()
            .map(|q| q.curvature().clone().symmetric_eigenvalues().max())
            .fold(0.0, f64::max)
    }
}

/// `(∇H(y), H(y))` from cold-started prox solves, outside any simulation.
pub fn envelope_at(
    coeffs: &EnvelopeCoefficients,
    losses: &[Arc<dyn LocalLoss>],
    y: &StackedVector,
    tol: f64,
) -> (StackedVector, f64) {
    let shifted = dual_shift(coeffs.tau, y);
    let mut blocks = Vec::new();
    let mut v_sum = 0.0;
    for (i, loss) in losses.iter().enumerate() {
        let c = shifted.block_owned(i);
        let x = prox_solve(loss.as_ref(), &c, coeffs.gamma, tol).unwrap().x;
        v_sum += compute_v(loss.as_ref(), &x, &c, coeffs.gamma).unwrap();
        blocks.push(x);
    }
    let x = StackedVector::from_blocks(&blocks).unwrap();
    (
        assemble_gradient(coeffs, y, &x).unwrap(),
        assemble_value(coeffs, y, v_sum),
    )
}

/// Checks `residual ≤ (γ²/τ² + γ² + 1)‖∇H‖²` with slack `10·inner_tol` on every row.
pub fn residual_bound_violations(trace: &RunTrace, coeffs: &EnvelopeCoefficients, inner_tol: f64) -> Vec<usize> {
    let factor = qnd2r::envelope::residual_bound_factor(coeffs);
    trace
        .rounds
        .iter()
        .filter(|r| r.residual > factor * r.grad_norm * r.grad_norm + 10.0 * inner_tol)
        .map(|r| r.round)
        .collect()
}
