//! The Lasso and SVM experiment problems split across agents.

mod dataset;
mod reference;

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::prox::{HingeSum, L1Norm, ProxFn, QuadraticLoss, SquaredL2};

pub use dataset::{
    parse_libsvm, parse_libsvm_str, partition_even, synth_lasso, synth_lasso_with_noise,
    synth_svm, Dataset, SynthLasso, SynthSpec,
};
pub use reference::{reference_solution, Reference, ReferenceCache, REFERENCE_TOL};

pub type SharedProx = Arc<dyn ProxFn>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Lasso,
    Svm,
    Custom,
}

/// `F(x) = Σ_i f_i(x) + g_i(x)` with `(f_i, g_i)` private to agent `i`.
#[derive(Debug, Clone)]
pub struct CompositeProblem {
    kind: ProblemKind,
    d: usize,
    f: Vec<SharedProx>,
    g: Vec<SharedProx>,
    lambda: f64,
    /// The undivided data, for the centralized reference solvers.
    data: Option<Arc<Dataset>>,
}

impl CompositeProblem {
    /// Problem from arbitrary per-agent pairs; all must share one dimension.
    pub fn from_parts(f: Vec<SharedProx>, g: Vec<SharedProx>) -> Result<Self> {
        if f.is_empty() || f.len() != g.len() {
            return Err(Error::InvalidArgument(format!(
                "need one (f_i, g_i) pair per agent, got {} and {}",
                f.len(),
                g.len()
            )));
        }
        let d = f[0].dim();
        if let Some(bad) = f.iter().chain(&g).find(|h| h.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.dim(),
            });
        }
        Ok(CompositeProblem {
            kind: ProblemKind::Custom,
            d,
            f,
            g,
            lambda: 0.0,
            data: None,
        })
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.f.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn data(&self) -> Option<&Dataset> {
        self.data.as_deref()
    }

    pub fn f(&self) -> &[SharedProx] {
        &self.f
    }

    pub fn g(&self) -> &[SharedProx] {
        &self.g
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.f
            .iter()
            .zip(&self.g)
            .map(|(f, g)| f.evaluate(x) + g.evaluate(x))
            .sum()
    }

    /// Clears warm-start state so that every run starts from scratch.
    pub fn reset(&self) {
        for h in self.f.iter().chain(&self.g) {
            h.reset();
        }
    }

    /// `(smooth, proximal)` roles for gradient-based methods: the block
    /// whose members all expose gradients goes first.
    pub fn smooth_split(&self) -> Result<(&[SharedProx], &[SharedProx])> {
        if self.f.iter().all(|f| f.is_smooth()) {
            Ok((&self.f, &self.g))
        } else if self.g.iter().all(|g| g.is_smooth()) {
            Ok((&self.g, &self.f))
        } else {
            Err(Error::InvalidArgument(
                "neither f nor g is smooth on every agent".into(),
            ))
        }
    }
}

/// `f_i = (1/2m)‖A_i x − b_i‖²`, `g_i = (λ/n)‖x‖₁`; `λ` defaults to `1/m`.
pub fn make_lasso(
    ds: &Dataset,
    n: usize,
    lambda: Option<f64>,
    seed: u64,
) -> Result<CompositeProblem> {
    let parts = partition_even(ds, n, seed)?;
    let m = ds.len() as f64;
    let lambda = check_lambda(lambda.unwrap_or(1.0 / m))?;
    let mut f: Vec<SharedProx> = Vec::with_capacity(n);
    let mut g: Vec<SharedProx> = Vec::with_capacity(n);
    for part in parts {
        f.push(Arc::new(QuadraticLoss::new(
            ds.d,
            part.rows,
            part.labels,
            1.0 / m,
        )?));
        g.push(Arc::new(L1Norm {
            dim: ds.d,
            weight: lambda / n as f64,
        }));
    }
    Ok(CompositeProblem {
        kind: ProblemKind::Lasso,
        d: ds.d,
        f,
        g,
        lambda,
        data: Some(Arc::new(ds.clone())),
    })
}

/// `f_i = (1/m) Σ_{j∈S_i} max(0, 1 − b_j a_jᵀx)`, `g_i = (λ/2n)‖x‖²`;
/// `λ` defaults to `1/m`.
pub fn make_svm(
    ds: &Dataset,
    n: usize,
    lambda: Option<f64>,
    seed: u64,
) -> Result<CompositeProblem> {
    ds.require_binary_labels()?;
    let parts = partition_even(ds, n, seed)?;
    let m = ds.len() as f64;
    let lambda = check_lambda(lambda.unwrap_or(1.0 / m))?;
    let mut f: Vec<SharedProx> = Vec::with_capacity(n);
    let mut g: Vec<SharedProx> = Vec::with_capacity(n);
    for (i, part) in parts.into_iter().enumerate() {
        f.push(Arc::new(
            HingeSum::new(ds.d, part.rows, part.labels, 1.0 / m)?
                .with_seed(seed.wrapping_add(i as u64)),
        ));
        g.push(Arc::new(SquaredL2 {
            dim: ds.d,
            weight: lambda / n as f64,
        }));
    }
    Ok(CompositeProblem {
        kind: ProblemKind::Svm,
        d: ds.d,
        f,
        g,
        lambda,
        data: Some(Arc::new(ds.clone())),
    })
}

fn check_lambda(lambda: f64) -> Result<f64> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(lambda)
    } else {
        Err(Error::InvalidArgument(format!(
            "lambda must be positive, got {lambda}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::sparse::SparseRow;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn lasso_data() -> Dataset {
        synth_lasso(SynthSpec { n_samples: 200, d: 6 }, 2).data
    }

    #[test]
    fn lasso_weights_and_zero_objective() {
        let ds = lasso_data();
        let p = make_lasso(&ds, 4, None, 0).unwrap();
        assert_eq!(p.lambda(), 1.0 / 200.0);
        let x = DVector::from_element(6, 1.0);
        let reg: f64 = p.g().iter().map(|g| g.evaluate(&x)).sum();
        assert!((reg - 6.0 / 200.0).abs() < 1e-15);
        assert!((p.g()[0].evaluate(&x) - 6.0 / (200.0 * 4.0)).abs() < 1e-15);

        let zero = DVector::zeros(6);
        let expected = ds.labels.iter().map(|b| b * b).sum::<f64>() / 400.0;
        assert!((p.objective(&zero) - expected).abs() < 1e-12);
    }

    /// Centralized objective computed straight from the data.
    fn lasso_direct(ds: &Dataset, lambda: f64, x: &DVector<f64>) -> f64 {
        let m = ds.len() as f64;
        let loss: f64 = ds
            .rows
            .iter()
            .zip(&ds.labels)
            .map(|(r, b)| (r.dot(x) - b).powi(2))
            .sum();
        loss / (2.0 * m) + lambda * x.lp_norm(1)
    }

    fn svm_direct(ds: &Dataset, lambda: f64, x: &DVector<f64>) -> f64 {
        let m = ds.len() as f64;
        let hinge: f64 = ds
            .rows
            .iter()
            .zip(&ds.labels)
            .map(|(r, b)| (1.0 - b * r.dot(x)).max(0.0))
            .sum();
        hinge / m + 0.5 * lambda * x.norm_squared()
    }

    #[test]
    fn objective_is_sum_of_agents_and_matches_centralized() {
        let ds = lasso_data();
        let svm_ds = synth_svm(SynthSpec { n_samples: 90, d: 6 }, 3);
        let mut rng = rng::seeded(8);
        for n in [1, 3, 7] {
            let lasso = make_lasso(&ds, n, Some(0.02), 1).unwrap();
            let svm = make_svm(&svm_ds, n, None, 1).unwrap();
            for _ in 0..20 {
                let x = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
                let lo = lasso_direct(&ds, 0.02, &x);
                let so = svm_direct(&svm_ds, 1.0 / 90.0, &x);
                assert!((lasso.objective(&x) - lo).abs() <= 1e-12 * lo.max(1.0));
                assert!((svm.objective(&x) - so).abs() <= 1e-12 * so.max(1.0));
            }
        }
    }

    #[test]
    fn svm_at_zero_is_one() {
        let ds = synth_svm(SynthSpec { n_samples: 300, d: 5 }, 1);
        let p = make_svm(&ds, 30, None, 4).unwrap();
        assert!((p.objective(&DVector::zeros(5)) - 1.0).abs() < 1e-12);
        assert_eq!(p.lambda(), 1.0 / 300.0);
    }

    #[test]
    fn svm_far_correct_point_has_zero_hinge() {
        let ds = Dataset {
            rows: vec![SparseRow::from_dense(&[1.0, 0.0])],
            labels: vec![1.0],
            d: 2,
        };
        let p = make_svm(&ds, 1, Some(1e-9), 0).unwrap();
        let x = DVector::from_vec(vec![50.0, 0.0]);
        assert_eq!(p.f()[0].evaluate(&x), 0.0);
    }

    #[test]
    fn svm_requires_binary_labels() {
        let ds = lasso_data();
        assert!(matches!(make_svm(&ds, 2, None, 0), Err(Error::NonBinaryLabel { .. })));
    }

    #[test]
    fn smooth_split_roles() {
        let lasso = make_lasso(&lasso_data(), 2, None, 0).unwrap();
        let (s, _) = lasso.smooth_split().unwrap();
        assert_eq!(s[0].name(), "quadratic_loss");
        let svm = make_svm(&synth_svm(SynthSpec { n_samples: 20, d: 3 }, 0), 2, None, 0).unwrap();
        let (s, p) = svm.smooth_split().unwrap();
        assert_eq!(s[0].name(), "squared_l2");
        assert_eq!(p[0].name(), "hinge_sum");
    }
}
