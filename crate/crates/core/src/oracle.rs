//! Centralized matrix-form replica of DS-ADMM and numerical checks of its
//! convergence theory.
//!
//! With `W̃ = W ⊗ I_d` the consensus constraint is `Au − Bv = 0` where
//! `A = (W̃; I)` and `B = (I; W̃)`, the multiplier is `λ = (w1, w2)` and the
//! proximal term is `Q = β((1+τ)I − W̃²)`. The recursion is available in two
//! forms: [`global_step`] applies the rearranged per-block updates using only
//! products with `W̃`, and [`global_step_multiplier_form`] works with the
//! dense `A`, `B`, `Q` of [`GlobalMatrices`].
//!
//! The convergence analysis is phrased through `w = (u, v, λ)` and the block
//! matrices
//!
//! ```text
//! M = [ I  0    0      ]    H = [ Q  0                    0             ]
//!     [ 0  I    0      ]        [ 0  Q + β/(r+1)·BᵀB      r/(r+1)·Bᵀ    ]
//!     [ 0  βB  (1+r)I  ]        [ 0  r/(r+1)·B          1/(β(r+1))·I    ]
//!
//! S = [ Q  0          0     ]   G = diag(Q, Q, (1−r)/β·I)
//!     [ 0  Q + βBᵀB   rBᵀ   ]
//!     [ 0  B          I/β   ]
//! ```
//!
//! which satisfy `H = S·M⁻¹`, `G = S + Sᵀ − MᵀS` and
//! `w⁺ = w − M(w − w̃)` with `w̃ = (u⁺, v⁺, λ − β(Au⁺ − Bv))`.

use std::fmt::{self, Write as _};
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::graph::{spectral_gap, MixingMatrix};
use crate::problems::CompositeProblem;
use crate::prox::ProxFn;
use crate::stacked::kron_apply;

/// Parameters of the matrix-form recursion; unlike the agent protocol the
/// second dual step `s` is free here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalParams {
    pub beta: f64,
    pub r: f64,
    pub s: f64,
    pub tau: f64,
}

impl GlobalParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |c: bool, msg: &str| {
            if c {
                Ok(())
            } else {
                Err(Error::InvalidArgument(msg.to_string()))
            }
        };
        ok(self.beta > 0.0 && self.beta.is_finite(), "beta must be positive")?;
        ok(self.tau > 0.0 && self.tau.is_finite(), "tau must be positive")?;
        ok(self.r > 0.0 && self.r <= 1.0, "r must lie in (0, 1]")?;
        ok(self.s > 0.0 && self.s.is_finite(), "s must be positive")
    }

    /// Step of both proximal subproblems.
    pub fn prox_step(&self) -> f64 {
        1.0 / (self.beta * (2.0 + self.tau))
    }
}

/// Stacked network state `w = (u, v, λ)` with `λ = (w1, w2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalIterate {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub w1: DVector<f64>,
    pub w2: DVector<f64>,
}

impl GlobalIterate {
    pub fn zeros(n: usize, d: usize) -> Self {
        let z = DVector::zeros(n * d);
        GlobalIterate {
            u: z.clone(),
            v: z.clone(),
            w1: z.clone(),
            w2: z,
        }
    }

    pub fn lambda(&self) -> DVector<f64> {
        concat(&[&self.w1, &self.w2])
    }

    /// `w = (u, v, λ)` as one `4nd` vector.
    pub fn to_vector(&self) -> DVector<f64> {
        concat(&[&self.u, &self.v, &self.w1, &self.w2])
    }

    pub fn from_vector(w: &DVector<f64>) -> Self {
        let m = w.len() / 4;
        GlobalIterate {
            u: w.rows(0, m).into_owned(),
            v: w.rows(m, m).into_owned(),
            w1: w.rows(2 * m, m).into_owned(),
            w2: w.rows(3 * m, m).into_owned(),
        }
    }

    pub fn sub(&self, other: &GlobalIterate) -> GlobalIterate {
        GlobalIterate {
            u: &self.u - &other.u,
            v: &self.v - &other.v,
            w1: &self.w1 - &other.w1,
            w2: &self.w2 - &other.w2,
        }
    }

    pub fn norm_squared(&self) -> f64 {
        self.u.norm_squared() + self.v.norm_squared() + self.w1.norm_squared() + self.w2.norm_squared()
    }

    fn is_finite(&self) -> bool {
        [&self.u, &self.v, &self.w1, &self.w2]
            .iter()
            .all(|x| x.iter().all(|v| v.is_finite()))
    }
}

fn concat(parts: &[&DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(
        parts.iter().map(|p| p.len()).sum(),
        parts.iter().flat_map(|p| p.iter().copied()),
    )
}

/// Products with `W̃`, `A`, `B` and `Q` that never form an `nd × nd` matrix.
#[derive(Debug, Clone, Copy)]
pub struct Operator<'a> {
    w: &'a MixingMatrix,
    d: usize,
}

impl<'a> Operator<'a> {
    pub fn new(w: &'a MixingMatrix, d: usize) -> Self {
        Operator { w, d }
    }

    pub fn n(&self) -> usize {
        self.w.n()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn wt(&self, x: &DVector<f64>) -> DVector<f64> {
        kron_apply(self.w, self.d, x)
    }

    /// `Au − Bv` split into its two `nd` halves `(W̃u − v, u − W̃v)`.
    pub fn residual(&self, u: &DVector<f64>, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (self.wt(u) - v, u - self.wt(v))
    }

    /// `Aᵀλ = W̃w1 + w2`.
    pub fn at(&self, w1: &DVector<f64>, w2: &DVector<f64>) -> DVector<f64> {
        self.wt(w1) + w2
    }

    /// `Bᵀλ = w1 + W̃w2`.
    pub fn bt(&self, w1: &DVector<f64>, w2: &DVector<f64>) -> DVector<f64> {
        w1 + self.wt(w2)
    }

    /// `Bv = (v, W̃v)`.
    pub fn b(&self, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (v.clone(), self.wt(v))
    }

    pub fn q(&self, beta: f64, tau: f64, x: &DVector<f64>) -> DVector<f64> {
        (x * (1.0 + tau) - self.wt(&self.wt(x))) * beta
    }

    pub fn q_norm_sq(&self, beta: f64, tau: f64, x: &DVector<f64>) -> f64 {
        x.dot(&self.q(beta, tau, x))
    }
}

fn prox_blocks(
    fs: &[std::sync::Arc<dyn ProxFn>],
    d: usize,
    x: &DVector<f64>,
    step: f64,
) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(x.len());
    for (i, f) in fs.iter().enumerate() {
        let block = f.prox(&x.rows(i * d, d).into_owned(), step)?;
        out.rows_mut(i * d, d).copy_from(&block);
    }
    Ok(out)
}

fn check_shapes(it: &GlobalIterate, n: usize, d: usize) -> Result<()> {
    for x in [&it.u, &it.v, &it.w1, &it.w2] {
        if x.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: x.len(),
            });
        }
    }
    Ok(())
}

/// One iteration of the rearranged recursion: `u`-prox, half dual step with
/// factor `rβ`, `v`-prox, full dual step with factor `sβ`.
pub fn global_step(
    it: &GlobalIterate,
    op: &Operator<'_>,
    problem: &CompositeProblem,
    params: &GlobalParams,
) -> Result<GlobalIterate> {
    let (n, d) = (op.n(), op.d());
    check_shapes(it, n, d)?;
    let GlobalParams { beta, r, s, tau } = *params;
    let step = params.prox_step();
    let denom = beta * (2.0 + tau);

    let wv = op.wt(&it.v);
    let wu = op.wt(&it.u);
    let lin_u = op.wt(&it.w1)
        + &it.w2
        + (wv * 2.0 + &it.u * (1.0 + tau) - op.wt(&wu)) * beta;
    let u = prox_blocks(problem.f(), d, &(lin_u / denom), step)?;

    let wu = op.wt(&u);
    let w1h = &it.w1 - (&wu - &it.v) * (r * beta);
    let w2h = &it.w2 - (&u - op.wt(&it.v)) * (r * beta);

    let lin_v = (wu.clone() * 2.0 + &it.v * (1.0 + tau) - op.wt(&op.wt(&it.v))) * beta
        - (&w1h + op.wt(&w2h));
    let v = prox_blocks(problem.g(), d, &(lin_v / denom), step)?;

    let wv = op.wt(&v);
    let w1 = &w1h - (&wu - &v) * (s * beta);
    let w2 = &w2h - (&u - &wv) * (s * beta);
    let next = GlobalIterate { u, v, w1, w2 };
    if !next.is_finite() {
        return Err(Error::Diverged {
            iteration: 0,
            norm: f64::INFINITY,
        });
    }
    Ok(next)
}

/// The same iteration written as the augmented-Lagrangian subproblems over
/// the dense `A`, `B`, `Q`: each primal block minimizes its function plus
/// `−λᵀ(Au − Bv) + (β/2)‖Au − Bv‖² + ½‖· − ·ᵗ‖²_Q`.
pub fn global_step_multiplier_form(
    it: &GlobalIterate,
    gm: &GlobalMatrices,
    problem: &CompositeProblem,
) -> Result<GlobalIterate> {
    let (n, d) = (gm.n, gm.d);
    check_shapes(it, n, d)?;
    let GlobalParams { beta, r, s, tau } = gm.params;
    let step = gm.params.prox_step();
    let denom = beta * (2.0 + tau);
    let lambda = it.lambda();

    let lin_u = gm.a.transpose() * &lambda + (gm.a.transpose() * (&gm.b * &it.v)) * beta + &gm.q * &it.u;
    let u = prox_blocks(problem.f(), d, &(lin_u / denom), step)?;
    let lambda_h = &lambda - (&gm.a * &u - &gm.b * &it.v) * (r * beta);

    let lin_v = -(gm.b.transpose() * &lambda_h) + (gm.b.transpose() * (&gm.a * &u)) * beta + &gm.q * &it.v;
    let v = prox_blocks(problem.g(), d, &(lin_v / denom), step)?;
    let lambda = &lambda_h - (&gm.a * &u - &gm.b * &v) * (s * beta);

    let m = n * d;
    Ok(GlobalIterate {
        u,
        v,
        w1: lambda.rows(0, m).into_owned(),
        w2: lambda.rows(m, m).into_owned(),
    })
}

/// Dense matrices of the analysis, checked on construction.
#[derive(Debug, Clone)]
pub struct GlobalMatrices {
    pub n: usize,
    pub d: usize,
    pub params: GlobalParams,
    pub wt: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub m: DMatrix<f64>,
}

/// Elementwise tolerance of the matrix identities.
pub const IDENTITY_TOL: f64 = 1e-10;

pub fn build_matrices(w: &MixingMatrix, d: usize, params: GlobalParams) -> Result<GlobalMatrices> {
    params.validate()?;
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    let GlobalParams { beta, r, tau, .. } = params;
    let n = w.n();
    let nd = n * d;
    let wt = w.matrix().kronecker(&DMatrix::<f64>::identity(d, d));
    let id = DMatrix::<f64>::identity(nd, nd);

    let mut a = DMatrix::zeros(2 * nd, nd);
    a.view_mut((0, 0), (nd, nd)).copy_from(&wt);
    a.view_mut((nd, 0), (nd, nd)).copy_from(&id);
    let mut b = DMatrix::zeros(2 * nd, nd);
    b.view_mut((0, 0), (nd, nd)).copy_from(&id);
    b.view_mut((nd, 0), (nd, nd)).copy_from(&wt);
    let q = (&id * (1.0 + tau) - &wt * &wt) * beta;
    let btb = b.transpose() * &b;

    let dim = 4 * nd;
    let blocks = |entries: &[(usize, usize, DMatrix<f64>)]| {
        let mut out = DMatrix::zeros(dim, dim);
        for (row, col, blk) in entries {
            out.view_mut((*row, *col), blk.shape()).copy_from(blk);
        }
        out
    };
    let (ou, ov, ol) = (0, nd, 2 * nd);
    let id2 = DMatrix::<f64>::identity(2 * nd, 2 * nd);
    let m = blocks(&[
        (ou, ou, id.clone()),
        (ov, ov, id.clone()),
        (ol, ov, &b * beta),
        (ol, ol, &id2 * (1.0 + r)),
    ]);
    let s = blocks(&[
        (ou, ou, q.clone()),
        (ov, ov, &q + &btb * beta),
        (ov, ol, b.transpose() * r),
        (ol, ov, b.clone()),
        (ol, ol, &id2 / beta),
    ]);
    let h = blocks(&[
        (ou, ou, q.clone()),
        (ov, ov, &q + &btb * (beta / (r + 1.0))),
        (ov, ol, b.transpose() * (r / (r + 1.0))),
        (ol, ov, &b * (r / (r + 1.0))),
        (ol, ol, &id2 / (beta * (r + 1.0))),
    ]);
    let g = blocks(&[
        (ou, ou, q.clone()),
        (ov, ov, q.clone()),
        (ol, ol, &id2 * ((1.0 - r) / beta)),
    ]);

    let gm = GlobalMatrices {
        n,
        d,
        params,
        wt,
        a,
        b,
        q,
        h,
        g,
        s,
        m,
    };
    gm.check_invariants()?;
    Ok(gm)
}

fn max_abs_diff(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    (x - y).amax()
}

fn eigen_extremes(x: &DMatrix<f64>) -> (f64, f64) {
    let e = SymmetricEigen::new(x.clone()).eigenvalues;
    (e.min(), e.max())
}

impl GlobalMatrices {
    fn check_invariants(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::MatrixInvariant(msg));
        let (qmin, _) = eigen_extremes(&self.q);
        if !(qmin > 0.0) {
            return bad(format!("Q is not positive definite: lambda_min = {qmin:e}"));
        }
        if max_abs_diff(&self.h, &self.h.transpose()) != 0.0 {
            return bad("H is not symmetric".into());
        }
        let (hmin, _) = eigen_extremes(&self.h);
        if !(hmin > 0.0) {
            return bad(format!("H is not positive definite: lambda_min = {hmin:e}"));
        }
        let (e1, e2) = self.identity_errors()?;
        if e1 > IDENTITY_TOL {
            return bad(format!("H = S M^-1 fails by {e1:e}"));
        }
        if e2 > IDENTITY_TOL {
            return bad(format!("G = S + S^T - M^T S fails by {e2:e}"));
        }
        Ok(())
    }

    /// Largest elementwise errors of `H = S·M⁻¹` and `G = S + Sᵀ − MᵀS`.
    pub fn identity_errors(&self) -> Result<(f64, f64)> {
        let m_inv = self
            .m
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::MatrixInvariant("M is singular".into()))?;
        let e1 = max_abs_diff(&self.h, &(&self.s * m_inv));
        let e2 = max_abs_diff(&self.g, &(&self.s + self.s.transpose() - self.m.transpose() * &self.s));
        Ok((e1, e2))
    }

    pub fn lambda_max_h(&self) -> f64 {
        eigen_extremes(&self.h).1
    }

    pub fn lambda_min_g(&self) -> f64 {
        eigen_extremes(&self.g).0
    }

    pub fn lambda_min_q(&self) -> f64 {
        eigen_extremes(&self.q).0
    }
}

/// `√(xᵀMx)`; inner products in `(−1e−12, 0)` are treated as 0.
pub fn weighted_norm(x: &DVector<f64>, m: &DMatrix<f64>) -> Result<f64> {
    clamp_sqrt(x.dot(&(m * x)))
}

pub fn h_norm(x: &DVector<f64>, gm: &GlobalMatrices) -> Result<f64> {
    weighted_norm(x, &gm.h)
}

pub fn g_norm(x: &DVector<f64>, gm: &GlobalMatrices) -> Result<f64> {
    weighted_norm(x, &gm.g)
}

fn clamp_sqrt(ip: f64) -> Result<f64> {
    if ip >= 0.0 {
        Ok(ip.sqrt())
    } else if ip > -1e-12 {
        Ok(0.0)
    } else {
        Err(Error::MatrixInvariant(format!(
            "negative weighted inner product {ip:e}"
        )))
    }
}

/// `‖x‖²_H` evaluated block by block.
pub fn h_norm_sq(x: &GlobalIterate, op: &Operator<'_>, params: &GlobalParams) -> Result<f64> {
    let GlobalParams { beta, r, tau, .. } = *params;
    let (bv1, bv2) = op.b(&x.v);
    let bv_sq = bv1.norm_squared() + bv2.norm_squared();
    let lam_bv = x.w1.dot(&bv1) + x.w2.dot(&bv2);
    let lam_sq = x.w1.norm_squared() + x.w2.norm_squared();
    let ip = op.q_norm_sq(beta, tau, &x.u)
        + op.q_norm_sq(beta, tau, &x.v)
        + beta / (r + 1.0) * bv_sq
        + 2.0 * r / (r + 1.0) * lam_bv
        + lam_sq / (beta * (r + 1.0));
    clamp_sqrt(ip).map(|v| v * v)
}

/// `‖x‖²_G` evaluated block by block.
pub fn g_norm_sq(x: &GlobalIterate, op: &Operator<'_>, params: &GlobalParams) -> Result<f64> {
    let GlobalParams { beta, r, tau, .. } = *params;
    let ip = op.q_norm_sq(beta, tau, &x.u)
        + op.q_norm_sq(beta, tau, &x.v)
        + (1.0 - r) / beta * (x.w1.norm_squared() + x.w2.norm_squared());
    clamp_sqrt(ip).map(|v| v * v)
}

/// `√(dist²(Aᵀλ, ∂f(u)) + dist²(−Bᵀλ, ∂g(v)) + ‖Au − Bv‖²)`.
pub fn kkt_residual(it: &GlobalIterate, op: &Operator<'_>, problem: &CompositeProblem) -> Result<f64> {
    let d = op.d();
    check_shapes(it, op.n(), d)?;
    let at = op.at(&it.w1, &it.w2);
    let bt = -op.bt(&it.w1, &it.w2);
    let mut total = 0.0;
    for i in 0..op.n() {
        let blk = |x: &DVector<f64>| x.rows(i * d, d).into_owned();
        total += problem.f()[i].subdiff_dist(&blk(&it.u), &blk(&at))?.powi(2);
        total += problem.g()[i].subdiff_dist(&blk(&it.v), &blk(&bt))?.powi(2);
    }
    let (r1, r2) = op.residual(&it.u, &it.v);
    Ok((total + r1.norm_squared() + r2.norm_squared()).sqrt())
}

pub fn constraint_residual(it: &GlobalIterate, op: &Operator<'_>) -> f64 {
    let (r1, r2) = op.residual(&it.u, &it.v);
    (r1.norm_squared() + r2.norm_squared()).sqrt()
}

/// Constants of the linear-rate theorem for spectral gap `rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateConstants {
    pub rho: f64,
    pub phi: f64,
    pub delta: f64,
    pub theta: f64,
}

impl RateConstants {
    /// `ε(c) = φ/(c²δθ)` for metric-subregularity modulus `c`.
    pub fn epsilon(&self, c: f64) -> f64 {
        self.phi / (c * c * self.delta * self.theta)
    }
}

pub fn rate_constants(params: &GlobalParams, rho: f64) -> Result<RateConstants> {
    let GlobalParams { beta, r, tau, .. } = *params;
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "rate constants need 0 < r < 1, got {r}"
        )));
    }
    if !(beta > 0.0 && tau > 0.0) {
        return Err(Error::InvalidArgument("beta and tau must be positive".into()));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidArgument(format!("rho must lie in (0, 1], got {rho}")));
    }
    let tb = tau * beta;
    Ok(RateConstants {
        rho,
        phi: (2.0 * beta * rho).min((1.0 - r) / beta),
        delta: (6.0 * r * r + 2.0 / (beta * beta))
            .max(12.0 * beta * beta + 4.0 + tb * tb)
            .max(3.0 * tb * tb),
        theta: (2.0 * r * r * beta * beta + 1.0) / (beta * (r + 1.0)) + (2.0 + tau - r) * beta,
    })
}

/// Spectral quantities behind the rate theorem.
///
/// Only `λ_max(H) ≤ θ` is asserted. The smallest eigenvalue of `G` is listed
/// next to three candidate lower bounds: `2(1−r)ρ`, `φ` and the exact block
/// value `min(βτ, (1−r)/β)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Report {
    pub lambda_max_h: f64,
    pub theta: f64,
    pub lambda_min_g: f64,
    pub stated_bound: f64,
    pub phi: f64,
    pub block_value: f64,
    pub identity_errors: (f64, f64),
}

impl Lemma1Report {
    pub fn passed(&self) -> bool {
        self.lambda_max_h <= self.theta + 1e-8
            && self.identity_errors.0 <= IDENTITY_TOL
            && self.identity_errors.1 <= IDENTITY_TOL
    }
}

pub fn check_lemma1(gm: &GlobalMatrices, rate: &RateConstants) -> Result<Lemma1Report> {
    let GlobalParams { beta, r, tau, .. } = gm.params;
    Ok(Lemma1Report {
        lambda_max_h: gm.lambda_max_h(),
        theta: rate.theta,
        lambda_min_g: gm.lambda_min_g(),
        stated_bound: 2.0 * (1.0 - r) * rate.rho,
        phi: rate.phi,
        block_value: (beta * tau).min((1.0 - r) / beta),
        identity_errors: gm.identity_errors()?,
    })
}

/// Convenience wrapper computing `ρ` from `w`.
pub fn lemma1_for(w: &MixingMatrix, d: usize, params: GlobalParams) -> Result<Lemma1Report> {
    let gm = build_matrices(w, d, params)?;
    let rate = rate_constants(&params, spectral_gap(w)?)?;
    check_lemma1(&gm, &rate)
}

/// `w̃ = (u⁺, v⁺, λ − β(Au⁺ − Bv))`.
pub fn w_tilde(
    cur: &GlobalIterate,
    next: &GlobalIterate,
    op: &Operator<'_>,
    beta: f64,
) -> GlobalIterate {
    let (r1, r2) = op.residual(&next.u, &cur.v);
    GlobalIterate {
        u: next.u.clone(),
        v: next.v.clone(),
        w1: &cur.w1 - r1 * beta,
        w2: &cur.w2 - r2 * beta,
    }
}

/// The printed variant of `w̃`, whose multiplier uses `v⁺`.
fn w_tilde_printed(cur: &GlobalIterate, next: &GlobalIterate, op: &Operator<'_>, beta: f64) -> GlobalIterate {
    let (r1, r2) = op.residual(&next.u, &next.v);
    GlobalIterate {
        u: next.u.clone(),
        v: next.v.clone(),
        w1: &cur.w1 - r1 * beta,
        w2: &cur.w2 - r2 * beta,
    }
}

/// Per-iteration margins of `‖w⁺ − w∞‖²_H ≤ ‖w − w∞‖²_H − ‖w − w̃‖²_G`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    /// `rhs + slack − lhs`; negative entries are violations.
    pub margins: Vec<f64>,
    pub violations: usize,
    /// Violations when `w̃` is formed with `v⁺`; informational only.
    pub printed_variant_violations: usize,
    /// Whether `‖w − w∞‖_H` was nonincreasing up to the same slack.
    pub h_distance_monotone: bool,
}

pub fn check_contraction(
    traj: &[GlobalIterate],
    op: &Operator<'_>,
    params: &GlobalParams,
    w_ref: &GlobalIterate,
) -> Result<ContractionReport> {
    let mut margins = Vec::new();
    let mut printed = 0;
    let mut monotone = true;
    for pair in traj.windows(2) {
        let (cur, next) = (&pair[0], &pair[1]);
        let dist_cur = h_norm_sq(&cur.sub(w_ref), op, params)?;
        let dist_next = h_norm_sq(&next.sub(w_ref), op, params)?;
        let gap = g_norm_sq(&cur.sub(&w_tilde(cur, next, op, params.beta)), op, params)?;
        let slack = 1e-8 * (1.0 + dist_next);
        margins.push(dist_cur - gap + slack - dist_next);
        let gap_printed =
            g_norm_sq(&cur.sub(&w_tilde_printed(cur, next, op, params.beta)), op, params)?;
        if dist_cur - gap_printed + slack < dist_next {
            printed += 1;
        }
        if dist_next > dist_cur + slack {
            monotone = false;
        }
    }
    Ok(ContractionReport {
        violations: margins.iter().filter(|m| **m < 0.0).count(),
        margins,
        printed_variant_violations: printed,
        h_distance_monotone: monotone,
    })
}

/// Per-iteration margins of the non-ergodic bound
/// `‖wᵗ − wᵗ⁺¹‖² ≤ C/(βτ(t+1))·(1+r)/(1−r)` with
/// `C = ‖w¹ − w⁰‖²_H + ‖v¹ − v⁰‖²_Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Report {
    pub constant: f64,
    pub bounds: Vec<f64>,
    /// `bound·(1 + 1e−8) − ‖wᵗ − wᵗ⁺¹‖²`.
    pub margins: Vec<f64>,
    pub violations: usize,
}

pub fn theorem1_bound(constant: f64, params: &GlobalParams, t: usize) -> f64 {
    let GlobalParams { beta, r, tau, .. } = *params;
    constant / (beta * tau * (t as f64 + 1.0)) * (1.0 + r) / (1.0 - r)
}

pub fn check_theorem1(
    traj: &[GlobalIterate],
    op: &Operator<'_>,
    params: &GlobalParams,
) -> Result<Theorem1Report> {
    if traj.len() < 2 {
        return Err(Error::InvalidArgument("need at least two iterates".into()));
    }
    if !(params.r < 1.0) {
        return Err(Error::InvalidArgument("the sublinear bound needs r < 1".into()));
    }
    let first = traj[1].sub(&traj[0]);
    let constant =
        h_norm_sq(&first, op, params)? + op.q_norm_sq(params.beta, params.tau, &first.v);
    let mut bounds = Vec::new();
    let mut margins = Vec::new();
    for (t, pair) in traj.windows(2).enumerate() {
        let step = pair[0].sub(&pair[1]).norm_squared();
        let bound = theorem1_bound(constant, params, t);
        bounds.push(bound);
        margins.push(bound * (1.0 + 1e-8) - step);
    }
    Ok(Theorem1Report {
        constant,
        violations: margins.iter().filter(|m| **m < 0.0).count(),
        bounds,
        margins,
    })
}

/// Largest elementwise error of `w⁺ = w − M(w − w̃)` along a trajectory.
pub fn check_update_identity(
    traj: &[GlobalIterate],
    op: &Operator<'_>,
    params: &GlobalParams,
) -> f64 {
    let mut worst = 0.0f64;
    for pair in traj.windows(2) {
        let (cur, next) = (&pair[0], &pair[1]);
        let diff = cur.sub(&w_tilde(cur, next, op, params.beta));
        let (bv1, bv2) = op.b(&diff.v);
        let pred = GlobalIterate {
            u: &cur.u - &diff.u,
            v: &cur.v - &diff.v,
            w1: &cur.w1 - (bv1 * params.beta + &diff.w1 * (1.0 + params.r)),
            w2: &cur.w2 - (bv2 * params.beta + &diff.w2 * (1.0 + params.r)),
        };
        worst = worst.max(pred.sub(next).to_vector().amax());
    }
    worst
}

/// Relative distance `‖x − y‖/‖y‖` between stacked iterates, 0 when both
/// vanish.
pub fn relative_deviation(x: &GlobalIterate, y: &GlobalIterate) -> f64 {
    let diff = x.sub(y).norm_squared().sqrt();
    let scale = y.norm_squared().sqrt();
    if diff == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// One row of the verification margins CSV.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MarginRow {
    pub iter: usize,
    pub oracle_rel_dev: f64,
    pub lemma2_margin: f64,
    pub theorem1_margin: f64,
    pub kkt_residual: f64,
}

pub fn write_margins_csv<W: Write>(out: W, rows: &[MarginRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_margins_csv_file(path: impl AsRef<Path>, rows: &[MarginRow]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_margins_csv(std::io::BufWriter::new(file), rows)
}

/// Outcome of a lockstep verification run.
#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub iterations: usize,
    pub max_oracle_deviation: f64,
    pub oracle_tolerance: f64,
    pub contraction: ContractionReport,
    pub theorem1: Theorem1Report,
    pub update_identity_error: f64,
    pub lemma1: Option<Lemma1Report>,
    pub final_consensus_error: f64,
    pub final_constraint_residual: f64,
    pub rows: Vec<MarginRow>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.max_oracle_deviation <= self.oracle_tolerance
            && self.contraction.violations == 0
            && self.theorem1.violations == 0
            && self.update_identity_error <= IDENTITY_TOL
            && self.lemma1.is_none_or(|l| l.passed())
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAILED"
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        let _ = writeln!(s, "verification over {} iterations", self.iterations);
        let _ = writeln!(
            s,
            "  oracle equivalence   max rel dev {:.3e} (tol {:.0e})  {}",
            self.max_oracle_deviation,
            self.oracle_tolerance,
            verdict(self.max_oracle_deviation <= self.oracle_tolerance)
        );
        let _ = writeln!(
            s,
            "  H-contraction        {} violations, min margin {:.3e}  {}",
            self.contraction.violations,
            self.contraction.margins.iter().copied().fold(f64::INFINITY, f64::min),
            verdict(self.contraction.violations == 0)
        );
        let _ = writeln!(
            s,
            "    with w~ built from v(t+1): {} violations (not asserted)",
            self.contraction.printed_variant_violations
        );
        let _ = writeln!(
            s,
            "  sublinear bound      {} violations, constant {:.3e}  {}",
            self.theorem1.violations,
            self.theorem1.constant,
            verdict(self.theorem1.violations == 0)
        );
        let _ = writeln!(
            s,
            "  update identity      max err {:.3e}  {}",
            self.update_identity_error,
            verdict(self.update_identity_error <= IDENTITY_TOL)
        );
        if let Some(l) = &self.lemma1 {
            let _ = writeln!(
                s,
                "  lambda_max(H) = {:.6} <= theta = {:.6}  {}",
                l.lambda_max_h,
                l.theta,
                verdict(l.lambda_max_h <= l.theta + 1e-8)
            );
            let _ = writeln!(
                s,
                "  lambda_min(G) = {:.6e}; 2(1-r)rho = {:.6e}, phi = {:.6e}, min(beta*tau, (1-r)/beta) = {:.6e} (reported only)",
                l.lambda_min_g, l.stated_bound, l.phi, l.block_value
            );
        }
        let _ = writeln!(
            s,
            "  final consensus error {:.3e}, constraint residual {:.3e}",
            self.final_consensus_error, self.final_constraint_residual
        );
        let _ = write!(s, "  overall: {}", if self.passed() { "PASS" } else { "FAIL" });
        f.write_str(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{gen_erdos_renyi, gen_ring, metropolis_weights};
    use crate::problems::{make_lasso, synth_lasso, SynthSpec};
    use crate::prox::{L1Norm, SquaredL2, Zero};
    use crate::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use std::sync::Arc;

    fn params(beta: f64, r: f64, tau: f64) -> GlobalParams {
        GlobalParams { beta, r, s: 1.0, tau }
    }

    fn randn(rng: &mut crate::rng::Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn random_iterate(rng: &mut crate::rng::Rng, nd: usize) -> GlobalIterate {
        GlobalIterate {
            u: randn(rng, nd),
            v: randn(rng, nd),
            w1: randn(rng, nd),
            w2: randn(rng, nd),
        }
    }

    fn single() -> MixingMatrix {
        metropolis_weights(&crate::graph::Graph::new(1, []).unwrap())
    }

    #[test]
    fn scalar_q() {
        let gm = build_matrices(&single(), 1, params(1.0, 0.5, 1.0)).unwrap();
        assert_eq!(gm.q, DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn q_spectrum_bottom_is_beta_tau() {
        for seed in 0..5 {
            let g = gen_erdos_renyi(6, 0.5, seed).unwrap();
            let w = metropolis_weights(&g);
            let p = params(0.7 + seed as f64 * 0.3, 0.5, 0.2);
            let gm = build_matrices(&w, 2, p).unwrap();
            assert!((gm.lambda_min_q() - p.beta * p.tau).abs() < 1e-10);
        }
    }

    #[test]
    fn a_and_b_act_by_definition() {
        let w = metropolis_weights(&gen_ring(5).unwrap());
        let gm = build_matrices(&w, 2, params(1.0, 0.5, 1.0)).unwrap();
        let op = Operator::new(&w, 2);
        let mut rng = rng::seeded(3);
        let x = randn(&mut rng, 10);
        let ax = &gm.a * &x;
        let bx = &gm.b * &x;
        let wx = op.wt(&x);
        assert!((ax.rows(0, 10) - &wx).amax() < 1e-14);
        assert_eq!(ax.rows(10, 10).into_owned(), x);
        assert_eq!(bx.rows(0, 10).into_owned(), x);
        assert!((bx.rows(10, 10) - &wx).amax() < 1e-14);
        assert!((&gm.wt * &x - wx).amax() < 1e-14);
    }

    #[test]
    fn quadratic_part_is_scaled_identity() {
        let w = metropolis_weights(&gen_ring(4).unwrap());
        let p = params(1.3, 0.5, 0.4);
        let gm = build_matrices(&w, 2, p).unwrap();
        let lhs = gm.a.transpose() * &gm.a * p.beta + &gm.q;
        let expected = DMatrix::<f64>::identity(8, 8) * (p.beta * (2.0 + p.tau));
        assert!((lhs - &expected).amax() < 1e-13);
        let rhs = gm.b.transpose() * &gm.b * p.beta + &gm.q;
        assert!((rhs - expected).amax() < 1e-13);
    }

    #[test]
    fn matrix_identities_on_random_configs() {
        let mut rng = rng::seeded(11);
        for k in 0..20 {
            let n = rng.random_range(1..=6);
            let d = rng.random_range(1..=3);
            let g = if n == 1 {
                crate::graph::Graph::new(1, []).unwrap()
            } else {
                gen_erdos_renyi(n, 0.6, k).unwrap()
            };
            let w = metropolis_weights(&g);
            let p = params(
                rng.random_range(0.2..3.0),
                rng.random_range(0.05..0.99),
                rng.random_range(0.01..2.0),
            );
            let gm = build_matrices(&w, d, p).unwrap();
            let (e1, e2) = gm.identity_errors().unwrap();
            assert!(e1 <= IDENTITY_TOL && e2 <= IDENTITY_TOL, "{e1} {e2}");
            let lmin = gm.lambda_min_g();
            assert!((lmin - (p.beta * p.tau).min((1.0 - p.r) / p.beta)).abs() < 1e-10);
        }
    }

    #[test]
    fn lemma1_ring4_example() {
        let w = metropolis_weights(&gen_ring(4).unwrap());
        let p = params(1.0, 0.5, 1.0);
        let rep = lemma1_for(&w, 1, p).unwrap();
        assert_eq!(rep.theta, 3.5);
        assert!(rep.lambda_max_h <= 3.5);
        assert!((rep.lambda_min_g - 0.5).abs() < 1e-10);
        assert!(rep.passed());
    }

    #[test]
    fn g_with_r_zero_is_block_diagonal() {
        // r = 0 is outside the algorithm's range, so assemble G by hand
        let w = metropolis_weights(&gen_ring(4).unwrap());
        let beta = 2.0;
        let tau = 0.3;
        let gm = build_matrices(&w, 1, params(beta, 0.5, tau)).unwrap();
        let mut g = DMatrix::zeros(16, 16);
        g.view_mut((0, 0), (4, 4)).copy_from(&gm.q);
        g.view_mut((4, 4), (4, 4)).copy_from(&gm.q);
        g.view_mut((8, 8), (8, 8)).copy_from(&(DMatrix::<f64>::identity(8, 8) / beta));
        let lmin = eigen_extremes(&g).0;
        assert!((lmin - (beta * tau).min(1.0 / beta)).abs() < 1e-12);
    }

    #[test]
    fn rate_constants_example() {
        let rc = rate_constants(&params(1.0, 0.5, 1.0), 0.5).unwrap();
        assert_eq!(rc.phi, 0.5);
        assert_eq!(rc.delta, 17.0);
        assert_eq!(rc.theta, 3.5);
        assert!((rc.epsilon(2.0) - 0.5 / (4.0 * 17.0 * 3.5)).abs() < 1e-15);

        let near = rate_constants(&params(1.0, 1.0 - 1e-9, 1.0), 0.5).unwrap();
        assert!(near.phi < 1e-8);
        assert!(rate_constants(&params(1.0, 1.0, 1.0), 0.5).is_err());

        let paper = rate_constants(&params(1.0, 0.99, 0.01), 0.3).unwrap();
        for c in [paper.phi, paper.delta, paper.theta] {
            assert!(c.is_finite() && c > 0.0);
        }
    }

    #[test]
    fn norms_match_dense_forms() {
        let mut rng = rng::seeded(5);
        let w = metropolis_weights(&gen_erdos_renyi(5, 0.6, 1).unwrap());
        let p = params(1.7, 0.6, 0.3);
        let gm = build_matrices(&w, 2, p).unwrap();
        let op = Operator::new(&w, 2);
        for _ in 0..10 {
            let x = random_iterate(&mut rng, 10);
            let xv = x.to_vector();
            let hd = h_norm(&xv, &gm).unwrap().powi(2);
            let gd = g_norm(&xv, &gm).unwrap().powi(2);
            assert!((h_norm_sq(&x, &op, &p).unwrap() - hd).abs() <= 1e-10 * hd);
            assert!((g_norm_sq(&x, &op, &p).unwrap() - gd).abs() <= 1e-10 * gd);
            assert!(hd <= gm.lambda_max_h() * xv.norm_squared() * (1.0 + 1e-12));
        }
        assert_eq!(h_norm(&DVector::zeros(40), &gm).unwrap(), 0.0);
        let id = DMatrix::<f64>::identity(3, 3);
        let x = DVector::from_vec(vec![3.0, 0.0, 4.0]);
        assert_eq!(weighted_norm(&x, &id).unwrap(), 5.0);
        assert!(weighted_norm(&x, &(-id)).is_err());
    }

    fn lasso(n: usize) -> CompositeProblem {
        let ds = synth_lasso(SynthSpec { n_samples: 60, d: 3 }, 4).data;
        make_lasso(&ds, n, Some(0.05), 2).unwrap()
    }

    #[test]
    fn zero_problem_keeps_zero_iterate() {
        let w = metropolis_weights(&gen_ring(4).unwrap());
        let zero: Vec<Arc<dyn ProxFn>> = (0..4).map(|_| Arc::new(Zero { dim: 2 }) as Arc<dyn ProxFn>).collect();
        let p = CompositeProblem::from_parts(zero.clone(), zero).unwrap();
        let it = GlobalIterate::zeros(4, 2);
        let next = global_step(&it, &Operator::new(&w, 2), &p, &params(1.0, 0.5, 1.0)).unwrap();
        assert_eq!(next, it);
    }

    #[test]
    fn step_forms_agree_for_general_s() {
        let w = metropolis_weights(&gen_erdos_renyi(5, 0.6, 2).unwrap());
        let problem = lasso(5);
        let mut rng = rng::seeded(21);
        for &(r, s) in &[(0.7, 0.7), (1.0, 1.0), (0.4, 1.3), (0.9, 0.5)] {
            let p = GlobalParams { beta: 1.4, r, s, tau: 0.3 };
            let gm = build_matrices(&w, 3, p).unwrap();
            let op = Operator::new(&w, 3);
            let mut a = random_iterate(&mut rng, 15);
            let mut b = a.clone();
            for _ in 0..20 {
                a = global_step(&a, &op, &problem, &p).unwrap();
                b = global_step_multiplier_form(&b, &gm, &problem).unwrap();
                assert!(relative_deviation(&a, &b) < 1e-12);
            }
        }
    }

    #[test]
    fn identities_along_a_trajectory() {
        let w = metropolis_weights(&gen_ring(5).unwrap());
        let problem = lasso(5);
        let p = params(1.0, 0.8, 0.2);
        let op = Operator::new(&w, 3);
        let mut traj = vec![GlobalIterate::zeros(5, 3)];
        for _ in 0..300 {
            traj.push(global_step(traj.last().unwrap(), &op, &problem, &p).unwrap());
        }
        assert!(check_update_identity(&traj, &op, &p) < 1e-10);
        let w_ref = {
            let mut x = traj.last().unwrap().clone();
            for _ in 0..5000 {
                x = global_step(&x, &op, &problem, &p).unwrap();
            }
            x
        };
        let c = check_contraction(&traj, &op, &p, &w_ref).unwrap();
        assert_eq!(c.violations, 0);
        assert!(c.h_distance_monotone);
        let t1 = check_theorem1(&traj, &op, &p).unwrap();
        assert_eq!(t1.violations, 0);
        assert!((t1.bounds[99] / t1.bounds[9] - 0.1).abs() < 1e-12);
        assert!(kkt_residual(traj.last().unwrap(), &op, &problem).unwrap() < 1e-6);
        assert!(kkt_residual(&traj[0], &op, &problem).unwrap() > 0.0);
    }

    #[test]
    fn fixed_point_has_zero_margins() {
        let w = metropolis_weights(&gen_ring(4).unwrap());
        let p = params(1.0, 0.5, 1.0);
        let op = Operator::new(&w, 1);
        let x = GlobalIterate::zeros(4, 1);
        let c = check_contraction(&[x.clone(), x.clone()], &op, &p, &x).unwrap();
        assert!(c.margins[0] > 0.0 && c.margins[0] <= 1e-8);
    }

    #[test]
    fn kkt_point_from_reference() {
        use crate::problems::{reference_solution, REFERENCE_TOL};
        let ds = synth_lasso(SynthSpec { n_samples: 40, d: 3 }, 8).data;
        let problem = make_lasso(&ds, 1, Some(0.05), 0).unwrap();
        let xs = reference_solution(&problem, REFERENCE_TOL).unwrap().x;
        let w = single();
        let op = Operator::new(&w, 3);
        // with W = [1]: w1 + w2 = ∇f(x*) and −(w1 + w2) ∈ ∂g(x*)
        let grad = problem.f()[0].gradient(&xs).unwrap();
        let it = GlobalIterate {
            u: xs.clone(),
            v: xs.clone(),
            w1: &grad * 0.5,
            w2: &grad * 0.5,
        };
        assert!(kkt_residual(&it, &op, &problem).unwrap() <= 1e-8);
    }

    #[test]
    fn consensus_iff_null_space() {
        let w = metropolis_weights(&gen_erdos_renyi(6, 0.5, 3).unwrap());
        let op = Operator::new(&w, 2);
        let mut rng = rng::seeded(1);
        for _ in 0..10 {
            let c = randn(&mut rng, 2);
            let cons = DVector::from_fn(12, |k, _| c[k % 2]);
            assert!((&cons - op.wt(&op.wt(&cons))).amax() < 1e-12);
            let x = randn(&mut rng, 12);
            assert!(crate::stacked::consensus_error(&x, 2) > 1e-3);
            assert!((&x - op.wt(&op.wt(&x))).amax() > 1e-6);
        }
    }

    #[test]
    fn build_rejects_bad_params() {
        let w = single();
        assert!(build_matrices(&w, 1, params(0.0, 0.5, 1.0)).is_err());
        assert!(build_matrices(&w, 1, params(1.0, 1.5, 1.0)).is_err());
        assert!(build_matrices(&w, 1, params(1.0, 0.5, 0.0)).is_err());
        assert!(build_matrices(&w, 0, params(1.0, 0.5, 1.0)).is_err());
    }

    #[test]
    fn margins_csv_has_header() {
        let mut buf = Vec::new();
        let row = MarginRow {
            iter: 0,
            oracle_rel_dev: 0.0,
            lemma2_margin: 1.0,
            theorem1_margin: 2.0,
            kkt_residual: 3.0,
        };
        write_margins_csv(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iter,oracle_rel_dev,lemma2_margin,theorem1_margin,kkt_residual\n"));
    }

    #[test]
    fn blockwise_prox_uses_each_agent() {
        let f: Vec<Arc<dyn ProxFn>> = (0..3)
            .map(|i| Arc::new(SquaredL2 { dim: 1, weight: i as f64 }) as Arc<dyn ProxFn>)
            .collect();
        let g: Vec<Arc<dyn ProxFn>> = (0..3).map(|_| Arc::new(L1Norm { dim: 1, weight: 0.0 }) as Arc<dyn ProxFn>).collect();
        let problem = CompositeProblem::from_parts(f, g).unwrap();
        let x = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let out = prox_blocks(problem.f(), 1, &x, 1.0).unwrap();
        assert_eq!(out, DVector::from_vec(vec![1.0, 0.5, 1.0 / 3.0]));
    }
}
