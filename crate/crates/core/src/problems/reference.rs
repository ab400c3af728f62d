//! High-precision centralized solutions, optionally cached on disk.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use sha2::{Digest, Sha256};

use super::{CompositeProblem, ProblemKind};
use crate::error::{Error, Result};
use crate::prox::{prox_l1, HingeSum};

pub const REFERENCE_TOL: f64 = 1e-12;

const MAX_ITERS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub x: DVector<f64>,
    pub f_star: f64,
}

/// Lasso: restarted FISTA until the proximal-gradient mapping norm is at most
/// `tol`, with periodic active-set polishing. SVM: dual coordinate ascent on
/// the full regularized hinge objective until no coordinate moves the primal
/// point by more than `tol` in a sweep.
pub fn reference_solution(p: &CompositeProblem, tol: f64) -> Result<Reference> {
    let ds = p.data().ok_or_else(|| {
        Error::InvalidArgument("reference solutions need a Lasso or SVM problem".into())
    })?;
    let x = match p.kind() {
        ProblemKind::Lasso => lasso_fista(ds, p.lambda(), tol)?,
        ProblemKind::Svm => {
            let m = ds.len() as f64;
            let hinge = HingeSum::new(ds.d, ds.rows.clone(), ds.labels.clone(), 1.0 / m)?;
            // (λ/2)‖x‖² is the proximal anchor at 0 with step 1/λ
            hinge.solve_dual(&DVector::zeros(ds.d), 1.0 / p.lambda(), tol, MAX_ITERS)?
        }
        ProblemKind::Custom => {
            return Err(Error::InvalidArgument(
                "reference solutions need a Lasso or SVM problem".into(),
            ))
        }
    };
    let f_star = p.objective(&x);
    Ok(Reference { x, f_star })
}

struct LeastSquares {
    gram: DMatrix<f64>,
    atb: DVector<f64>,
    lambda: f64,
    lipschitz: f64,
}

impl LeastSquares {
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.gram * x - &self.atb
    }

    fn mapping_norm(&self, x: &DVector<f64>) -> f64 {
        let l = self.lipschitz;
        let next = prox_l1(&(x - self.gradient(x) / l), 1.0 / l, self.lambda);
        l * (x - next).norm()
    }

    /// Re-solves the stationarity equations on the current support with its
    /// signs fixed. Returns `None` when the reduced system is singular.
    fn polish(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let support: Vec<usize> = (0..x.len()).filter(|&k| x[k] != 0.0).collect();
        if support.is_empty() {
            return None;
        }
        let k = support.len();
        let sub = DMatrix::from_fn(k, k, |a, b| self.gram[(support[a], support[b])]);
        let rhs = DVector::from_fn(k, |a, _| {
            self.atb[support[a]] - self.lambda * x[support[a]].signum()
        });
        let sol = sub.cholesky()?.solve(&rhs);
        let mut out = DVector::zeros(x.len());
        for (a, &c) in support.iter().enumerate() {
            if sol[a].signum() != x[c].signum() {
                return None;
            }
            out[c] = sol[a];
        }
        Some(out)
    }
}

fn lasso_fista(ds: &super::Dataset, lambda: f64, tol: f64) -> Result<DVector<f64>> {
    let d = ds.d;
    let m = ds.len() as f64;
    let mut gram = DMatrix::zeros(d, d);
    let mut atb = DVector::zeros(d);
    for (r, &b) in ds.rows.iter().zip(&ds.labels) {
        for (i, vi) in r.iter() {
            atb[i] += vi * b / m;
            for (j, vj) in r.iter() {
                gram[(i, j)] += vi * vj / m;
            }
        }
    }
    let lmax = SymmetricEigen::new(gram.clone())
        .eigenvalues
        .iter()
        .fold(0.0f64, |a, &b| a.max(b));
    let ls = LeastSquares {
        gram,
        atb,
        lambda,
        lipschitz: lmax.max(f64::MIN_POSITIVE) * (1.0 + 1e-12),
    };
    let l = ls.lipschitz;

    let mut x = DVector::zeros(d);
    let mut y = x.clone();
    let mut momentum = 1.0f64;
    for iter in 0..MAX_ITERS {
        let gm = ls.mapping_norm(&x);
        if gm <= tol {
            return Ok(x);
        }
        if iter % 50 == 49 && gm < 1e-6 {
            if let Some(p) = ls.polish(&x) {
                if ls.mapping_norm(&p) < gm {
                    x = p;
                    y = x.clone();
                    momentum = 1.0;
                    continue;
                }
            }
        }
        let grad = ls.gradient(&y);
        let next = prox_l1(&(&y - grad / l), 1.0 / l, lambda);
        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        // gradient-based adaptive restart
        if (&y - &next).dot(&(&next - &x)) > 0.0 {
            momentum = 1.0;
            y = next.clone();
        } else {
            y = &next + (&next - &x) * ((momentum - 1.0) / next_momentum);
            momentum = next_momentum;
        }
        x = next;
    }
    Err(Error::NotConverged {
        solver: "FISTA reference",
        limit: MAX_ITERS,
    })
}

/// On-disk cache of reference solutions keyed by dataset hash, problem kind,
/// λ, agent count and tolerance.
///
/// File format: `d` on the first line, then the `d` coordinates of `x*` one
/// per line, then `F*`.
#[derive(Debug, Clone)]
pub struct ReferenceCache {
    dir: PathBuf,
}

impl ReferenceCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ReferenceCache { dir: dir.into() }
    }

    pub fn path_for(&self, p: &CompositeProblem, tol: f64) -> Option<PathBuf> {
        let ds = p.data()?;
        let key = format!(
            "{:?}|{}|{:016x}|{}|{:016x}",
            p.kind(),
            ds.content_hash(),
            p.lambda().to_bits(),
            p.n(),
            tol.to_bits()
        );
        let digest: String = Sha256::digest(key.as_bytes())
            .iter()
            .take(12)
            .map(|b| format!("{b:02x}"))
            .collect();
        Some(self.dir.join(format!("reference-{digest}.txt")))
    }

    pub fn get_or_compute(&self, p: &CompositeProblem, tol: f64) -> Result<Reference> {
        let path = self.path_for(p, tol).ok_or_else(|| {
            Error::InvalidArgument("reference solutions need a Lasso or SVM problem".into())
        })?;
        if path.exists() {
            if let Ok(r) = read_reference(&path) {
                if r.x.len() == p.d() {
                    return Ok(r);
                }
            }
        }
        let r = reference_solution(p, tol)?;
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        write_reference(&path, &r)?;
        Ok(r)
    }
}

pub fn write_reference(path: &Path, r: &Reference) -> Result<()> {
    let mut out = format!("{}\n", r.x.len());
    for v in r.x.iter() {
        let _ = writeln!(out, "{v:?}");
    }
    let _ = writeln!(out, "{:?}", r.f_star);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_reference(path: &Path) -> Result<Reference> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, message: &str| Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.to_string(),
    };
    let values: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let d: usize = values
        .first()
        .ok_or_else(|| bad(1, "empty reference file"))?
        .parse()
        .map_err(|_| bad(1, "bad dimension"))?;
    if values.len() != d + 2 {
        return Err(bad(values.len(), "wrong number of lines"));
    }
    let parse = |k: usize| -> Result<f64> {
        values[k].parse().map_err(|_| bad(k + 1, "bad number"))
    };
    let x = DVector::from_iterator(d, (1..=d).map(parse).collect::<Result<Vec<_>>>()?);
    let f_star = parse(d + 1)?;
    Ok(Reference { x, f_star })
}
