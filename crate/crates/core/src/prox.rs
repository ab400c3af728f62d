//! Proximal operators for the losses and regularizers of the experiment
//! problems, behind the uniform [`ProxFn`] interface.
//!
//! For a convex `h` and step `t > 0`,
//! `prox_{t h}(v) = argmin_x h(x) + ‖x − v‖² / (2t)`.

use std::fmt;
use std::sync::{Mutex, RwLock};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;
use crate::sparse::SparseRow;

/// Default inner tolerance of the hinge-sum dual solver.
pub const HINGE_TOL: f64 = 1e-10;

/// Sweep cap of the hinge dual solver in [`ProxFn::prox`].
pub const HINGE_MAX_SWEEPS: usize = 100_000;

/// Design matrices with more than this many entries are kept sparse.
pub const DENSE_LIMIT: usize = 10_000_000;

/// A closed convex function with a computable proximal map.
pub trait ProxFn: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    fn evaluate(&self, x: &DVector<f64>) -> f64;

    fn prox(&self, v: &DVector<f64>, step: f64) -> Result<DVector<f64>>;

    /// `dist(y, ∂h(x))`.
    fn subdiff_dist(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64>;

    /// Gradient when `h` is differentiable, `None` otherwise.
    fn gradient(&self, _x: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }

    /// Whether [`ProxFn::gradient`] returns `Some`.
    fn is_smooth(&self) -> bool {
        false
    }

    /// Drops any state carried between prox calls.
    fn reset(&self) {}
}

fn check_step(step: f64) -> Result<()> {
    if step > 0.0 && step.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "prox step must be positive, got {step}"
        )))
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

#[inline]
fn soft_threshold(x: f64, k: f64) -> f64 {
    if x > k {
        x - k
    } else if x < -k {
        x + k
    } else {
        0.0
    }
}

/// Soft-thresholding: prox of `weight·‖x‖₁`.
pub fn prox_l1(v: &DVector<f64>, step: f64, weight: f64) -> DVector<f64> {
    let k = step * weight;
    v.map(|x| soft_threshold(x, k))
}

/// Prox of `(weight/2)·‖x‖²`.
pub fn prox_sq_l2(v: &DVector<f64>, step: f64, weight: f64) -> DVector<f64> {
    v / (1.0 + step * weight)
}

/// Prox of `w1·‖x‖₁ + (w2/2)·‖x‖²`.
pub fn prox_elastic_net(v: &DVector<f64>, step: f64, w1: f64, w2: f64) -> DVector<f64> {
    prox_l1(v, step, w1) / (1.0 + step * w2)
}

/// Distance from `y` to `∂(w‖·‖₁)(x)`, exact per coordinate.
fn l1_subdiff_dist(x: &DVector<f64>, y: &DVector<f64>, w: f64) -> f64 {
    x.iter()
        .zip(y.iter())
        .map(|(&xk, &yk)| {
            let e = if xk > 0.0 {
                yk - w
            } else if xk < 0.0 {
                yk + w
            } else {
                (yk.abs() - w).max(0.0)
            };
            e * e
        })
        .sum::<f64>()
        .sqrt()
}

/// `weight·‖x‖₁`.
#[derive(Debug, Clone)]
pub struct L1Norm {
    pub dim: usize,
    pub weight: f64,
}

impl ProxFn for L1Norm {
    fn name(&self) -> &'static str {
        "l1"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, x: &DVector<f64>) -> f64 {
        self.weight * x.lp_norm(1)
    }

    fn prox(&self, v: &DVector<f64>, step: f64) -> Result<DVector<f64>> {
        check_step(step)?;
        check_dim(self.dim, v.len())?;
        Ok(prox_l1(v, step, self.weight))
    }

    fn subdiff_dist(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        Ok(l1_subdiff_dist(x, y, self.weight))
    }
}

/// `(weight/2)·‖x‖²`.
#[derive(Debug, Clone)]
pub struct SquaredL2 {
    pub dim: usize,
    pub weight: f64,
}

impl ProxFn for SquaredL2 {
    fn name(&self) -> &'static str {
        "squared_l2"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, x: &DVector<f64>) -> f64 {
        0.5 * self.weight * x.norm_squared()
    }

    fn prox(&self, v: &DVector<f64>, step: f64) -> Result<DVector<f64>> {
        check_step(step)?;
        check_dim(self.dim, v.len())?;
        Ok(prox_sq_l2(v, step, self.weight))
    }

    fn subdiff_dist(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        Ok((y - x * self.weight).norm())
    }

    fn gradient(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        Some(x * self.weight)
    }

    fn is_smooth(&self) -> bool {
        true
    }
}

/// `l1·‖x‖₁ + (l2/2)·‖x‖²`.
#[derive(Debug, Clone)]
pub struct ElasticNet {
    pub dim: usize,
    pub l1: f64,
    pub l2: f64,
}

impl ProxFn for ElasticNet {
    fn name(&self) -> &'static str {
        "elastic_net"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, x: &DVector<f64>) -> f64 {
        self.l1 * x.lp_norm(1) + 0.5 * self.l2 * x.norm_squared()
    }

    fn prox(&self, v: &DVector<f64>, step: f64) -> Result<DVector<f64>> {
        check_step(step)?;
        check_dim(self.dim, v.len())?;
        Ok(prox_elastic_net(v, step, self.l1, self.l2))
    }

    fn subdiff_dist(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        Ok(l1_subdiff_dist(x, &(y - x * self.l2), self.l1))
    }
}

/// The zero function.
#[derive(Debug, Clone)]
pub struct Zero {
    pub dim: usize,
}

impl ProxFn for Zero {
    fn name(&self) -> &'static str {
        "zero"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, _x: &DVector<f64>) -> f64 {
        0.0
    }

    fn prox(&self, v: &DVector<f64>, step: f64) -> Result<DVector<f64>> {
        check_step(step)?;
        Ok(v.clone())
    }

    fn subdiff_dist(&self, _x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        Ok(y.norm())
    }

    fn gradient(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        Some(DVector::zeros(x.len()))
    }

    fn is_smooth(&self) -> bool {
        true
    }
}

enum Normal {
    /// `AᵀA` and per-step Cholesky factors of `I + c·AᵀA`.
    Dense {
        gram: DMatrix<f64>,
        factors: RwLock<Vec<(u64, Cholesky<f64, Dyn>)>>,
    },
    /// Conjugate gradients on `x + c·Aᵀ(Ax)` through the sparse rows.
    Sparse,
}

/// `(scale/2)·‖A x − b‖²` over the rows of `A`.
pub struct QuadraticLoss {
    dim: usize,
    rows: Vec<SparseRow>,
    targets: DVector<f64>,
    scale: f64,
    atb: DVector<f64>,
    normal: Normal,
}

impl fmt::Debug for QuadraticLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuadraticLoss")
            .field("dim", &self.dim)
            .field("rows", &self.rows.len())
            .field("scale", &self.scale)
            .field("dense", &matches!(self.normal, Normal::Dense { .. }))
            .finish()
    }
}

impl QuadraticLoss {
    pub fn new(dim: usize, rows: Vec<SparseRow>, targets: Vec<f64>, scale: f64) -> Result<Self> {
        let dense = rows.len().saturating_mul(dim) <= DENSE_LIMIT;
        Self::with_storage(dim, rows, targets, scale, dense)
    }

    /// Like [`QuadraticLoss::new`] but with the storage choice forced.
    pub fn with_storage(
        dim: usize,
        rows: Vec<SparseRow>,
        targets: Vec<f64>,
        scale: f64,
        dense: bool,
    ) -> Result<Self> {
        check_dim(rows.len(), targets.len())?;
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
        }
        if let Some(r) = rows.iter().find(|r| r.dim_hint() > dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.dim_hint(),
            });
        }
        let targets = DVector::from_vec(targets);
        let mut atb = DVector::zeros(dim);
        for (r, &b) in rows.iter().zip(targets.iter()) {
            r.axpy_into(b, &mut atb);
        }
        let normal = if dense {
            let mut gram = DMatrix::zeros(dim, dim);
            for r in &rows {
                for (i, vi) in r.iter() {
                    for (j, vj) in r.iter() {
                        gram[(i, j)] += vi * vj;
                    }
                }
            }
            Normal::Dense {
                gram,
                factors: RwLock::new(Vec::new()),
            }
        } else {
            Normal::Sparse
        };
        Ok(QuadraticLoss {
            dim,
            rows,
            targets,
            scale,
            atb,
            normal,
        })
    }

    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows
                .iter()
                .zip(self.targets.iter())
                .map(|(r, b)| r.dot(x) - b),
        )
    }

    /// `AᵀA x` through the rows.
    fn gram_apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.normal {
            Normal::Dense { gram, .. } => gram * x,
            Normal::Sparse => {
                let mut out = DVector::zeros(self.dim);
                for r in &self.rows {
                    r.axpy_into(r.dot(x), &mut out);
                }
                out
            }
        }
    }

    /// Solves `(I + step·scale·AᵀA) x = v + step·scale·Aᵀb`.
    pub fn prox_quadratic_loss(&self, v: &DVector<f64>, step: f64) -> Result<DVector<f64>> {
        check_step(step)?;
        check_dim(self.dim, v.len())?;
        if self.rows.is_empty() {
            return Ok(v.clone());
        }
        let c = step * self.scale;
        let rhs = v + &self.atb * c;
        let x = match &self.normal {
            Normal::Dense { gram, factors } => {
                let key = step.to_bits();
                let cached = factors
                    .read()
                    .unwrap()
                    .iter()
                    .find(|(k, _)| *k == key)
                    .map(|(_, f)| f.solve(&rhs));
                match cached {
                    Some(x) => x,
                    None => {
                        let m = DMatrix::identity(self.dim, self.dim) + gram * c;
                        let chol = Cholesky::new(m).ok_or(Error::LinearSolve {
                            residual: f64::INFINITY,
                        })?;
                        let x = chol.solve(&rhs);
                        let mut guard = factors.write().unwrap();
                        if !guard.iter().any(|(k, _)| *k == key) {
                            guard.push((key, chol));
                        }
                        x
                    }
                }
            }
            Normal::Sparse => self.conjugate_gradient(&rhs, c, v)?,
        };
        let residual = (&x + self.gram_apply(&x) * c - &rhs).norm();
        if residual > 1e-10 * rhs.norm().max(1.0) {
            return Err(Error::LinearSolve { residual });
        }
        Ok(x)
    }

    fn conjugate_gradient(
        &self,
        rhs: &DVector<f64>,
        c: f64,
        start: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let apply = |p: &DVector<f64>| p + self.gram_apply(p) * c;
        let mut x = start.clone();
        let mut r = rhs - apply(&x);
        let mut p = r.clone();
        let mut rs = r.norm_squared();
        let target = (1e-13 * rhs.norm().max(1.0)).powi(2);
        let limit = 10 * self.dim + 100;
        for _ in 0..limit {
            if rs <= target {
                return Ok(x);
            }
            let ap = apply(&p);
            let alpha = rs / p.dot(&ap);
            x.axpy(alpha, &p, 1.0);
            r.axpy(-alpha, &ap, 1.0);
            let rs_new = r.norm_squared();
            p = &r + &p * (rs_new / rs);
            rs = rs_new;
        }
        if rs <= target {
            Ok(x)
        } else {
            Err(Error::NotConverged {
                solver: "conjugate gradient",
                limit,
            })
        }
    }
}

impl ProxFn for QuadraticLoss {
    fn name(&self) -> &'static str {
        "quadratic_loss"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, x: &DVector<f64>) -> f64 {
        0.5 * self.scale * self.residuals(x).norm_squared()
    }

    fn prox(&self, v: &DVector<f64>, step: f64) -> Result<DVector<f64>> {
        self.prox_quadratic_loss(v, step)
    }

    fn subdiff_dist(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        Ok((y - self.gradient(x).unwrap()).norm())
    }

    fn gradient(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let res = self.residuals(x);
        let mut g = DVector::zeros(self.dim);
        for (r, e) in self.rows.iter().zip(res.iter()) {
            r.axpy_into(*e, &mut g);
        }
        Some(g * self.scale)
    }

    fn is_smooth(&self) -> bool {
        true
    }
}

/// Free-function form of [`QuadraticLoss::prox_quadratic_loss`].
pub fn prox_quadratic_loss(
    v: &DVector<f64>,
    step: f64,
    data: &QuadraticLoss,
) -> Result<DVector<f64>> {
    data.prox_quadratic_loss(v, step)
}

/// `scale·Σ_j max(0, 1 − b_j a_jᵀx)` with labels `b_j ∈ {−1, +1}`.
///
/// The prox keeps the last dual solution and warm-starts the next call
/// from it.
#[derive(Debug)]
pub struct HingeSum {
    dim: usize,
    rows: Vec<SparseRow>,
    labels: Vec<f64>,
    sq_norms: Vec<f64>,
    scale: f64,
    tol: f64,
    seed: u64,
    warm: Mutex<Vec<f64>>,
}

impl Clone for HingeSum {
    fn clone(&self) -> Self {
        HingeSum {
            dim: self.dim,
            rows: self.rows.clone(),
            labels: self.labels.clone(),
            sq_norms: self.sq_norms.clone(),
            scale: self.scale,
            tol: self.tol,
            seed: self.seed,
            warm: Mutex::new(self.warm.lock().map(|w| w.clone()).unwrap_or_default()),
        }
    }
}

/// Margins closer than this to 1 count as sitting on the hinge kink.
const KINK_BAND: f64 = 1e-9;

impl HingeSum {
    pub fn new(dim: usize, rows: Vec<SparseRow>, labels: Vec<f64>, scale: f64) -> Result<Self> {
        check_dim(rows.len(), labels.len())?;
        if let Some((k, &l)) = labels.iter().enumerate().find(|(_, &l)| l != 1.0 && l != -1.0) {
            return Err(Error::NonBinaryLabel { row: k, label: l });
        }
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
        }
        if let Some(r) = rows.iter().find(|r| r.dim_hint() > dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.dim_hint(),
            });
        }
        let sq_norms = rows.iter().map(SparseRow::norm_squared).collect();
        Ok(HingeSum {
            dim,
            rows,
            labels,
            sq_norms,
            scale,
            tol: HINGE_TOL,
            seed: 0,
            warm: Mutex::new(Vec::new()),
        })
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    /// Seed of the per-call sweep order.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn margin(&self, j: usize, x: &DVector<f64>) -> f64 {
        self.labels[j] * self.rows[j].dot(x)
    }

    /// Dual coordinate ascent on the box-constrained dual.
    ///
    /// With `α_j ∈ [0, scale·step]` the primal point is
    /// `x = v + Σ_j α_j b_j a_j`. Each sweep visits the coordinates in a
    /// seeded random order; the solve stops once no coordinate moved `x` by
    /// more than `tol` during a full sweep.
    pub fn prox_with_tol(&self, v: &DVector<f64>, step: f64, tol: f64) -> Result<DVector<f64>> {
        self.solve_dual(v, step, tol, HINGE_MAX_SWEEPS)
    }

    /// [`HingeSum::prox_with_tol`] with an explicit sweep cap.
    pub fn solve_dual(
        &self,
        v: &DVector<f64>,
        step: f64,
        tol: f64,
        max_sweeps: usize,
    ) -> Result<DVector<f64>> {
        check_step(step)?;
        check_dim(self.dim, v.len())?;
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
        }
        let m = self.rows.len();
        if m == 0 {
            return Ok(v.clone());
        }
        let upper = self.scale * step;
        let mut alpha = {
            let warm = self.warm.lock().map(|w| w.clone()).unwrap_or_default();
            if warm.len() == m {
                warm.into_iter().map(|a| a.clamp(0.0, upper)).collect()
            } else {
                vec![0.0; m]
            }
        };
        let mut x = v.clone();
        for (j, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                self.rows[j].axpy_into(a * self.labels[j], &mut x);
            }
        }
        let result = self.ascend(&mut alpha, &mut x, upper, tol, max_sweeps);
        if let Ok(mut w) = self.warm.lock() {
            *w = alpha;
        }
        result.map(|()| x)
    }

    fn ascend(
        &self,
        alpha: &mut [f64],
        x: &mut DVector<f64>,
        upper: f64,
        tol: f64,
        max_sweeps: usize,
    ) -> Result<()> {
        let m = alpha.len();
        let mut order: Vec<usize> = (0..m).collect();
        let mut rng = rng::seeded(self.seed);
        let limit = max_sweeps;
        for _ in 0..limit {
            order.shuffle(&mut rng);
            let mut largest = 0.0f64;
            for &j in &order {
                let q = self.sq_norms[j];
                if q == 0.0 {
                    alpha[j] = upper;
                    continue;
                }
                let grad = 1.0 - self.margin(j, x);
                let next = (alpha[j] + grad / q).clamp(0.0, upper);
                let delta = next - alpha[j];
                if delta != 0.0 {
                    alpha[j] = next;
                    self.rows[j].axpy_into(delta * self.labels[j], x);
                    largest = largest.max(delta.abs() * q.sqrt());
                }
            }
            if largest < tol {
                return Ok(());
            }
        }
        Err(Error::NotConverged {
            solver: "hinge dual coordinate ascent",
            limit,
        })
    }

    pub fn prox_hinge_sum(&self, v: &DVector<f64>, step: f64) -> Result<DVector<f64>> {
        self.prox_with_tol(v, step, self.tol)
    }
}

impl ProxFn for HingeSum {
    fn name(&self) -> &'static str {
        "hinge_sum"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, x: &DVector<f64>) -> f64 {
        self.scale
            * (0..self.rows.len())
                .map(|j| (1.0 - self.margin(j, x)).max(0.0))
                .sum::<f64>()
    }

    fn prox(&self, v: &DVector<f64>, step: f64) -> Result<DVector<f64>> {
        self.prox_hinge_sum(v, step)
    }

    fn reset(&self) {
        if let Ok(mut w) = self.warm.lock() {
            w.clear();
        }
    }

    /// Projects `y` onto `∂h(x) = {−scale Σ_j γ_j b_j a_j}` where `γ_j` is 1
    /// for violated margins, 0 for satisfied ones and free in `[0, 1]` on the
    /// kink; the free part is a box-constrained least-squares problem solved
    /// by cyclic coordinate descent.
    fn subdiff_dist(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        check_dim(self.dim, y.len())?;
        let mut r = y.clone();
        let mut free = Vec::new();
        for j in 0..self.rows.len() {
            let gap = 1.0 - self.margin(j, x);
            if gap.abs() <= KINK_BAND * (1.0 + x.norm() * self.sq_norms[j].sqrt()) {
                free.push(j);
            } else if gap > 0.0 {
                self.rows[j].axpy_into(self.scale * self.labels[j], &mut r);
            }
        }
        let mut gamma = vec![0.0; free.len()];
        for _ in 0..10_000 {
            let mut moved = 0.0f64;
            for (k, &j) in free.iter().enumerate() {
                let q = self.sq_norms[j] * self.scale * self.scale;
                if q == 0.0 {
                    continue;
                }
                let coef = self.scale * self.labels[j];
                let g = coef * self.rows[j].dot(&r);
                let next = (gamma[k] - g / q).clamp(0.0, 1.0);
                let delta = next - gamma[k];
                if delta != 0.0 {
                    gamma[k] = next;
                    self.rows[j].axpy_into(delta * coef, &mut r);
                    moved = moved.max(delta.abs());
                }
            }
            if moved < 1e-15 {
                break;
            }
        }
        Ok(r.norm())
    }
}

/// Free-function form of [`HingeSum::prox_with_tol`].
pub fn prox_hinge_sum(
    v: &DVector<f64>,
    step: f64,
    data: &HingeSum,
    tol: f64,
) -> Result<DVector<f64>> {
    data.prox_with_tol(v, step, tol)
}
