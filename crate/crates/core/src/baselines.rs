//! PG-EXTRA and NIDS on the same problems, graphs and ledger as DS-ADMM,
//! plus a logarithmic grid-sweep harness for tuning a scalar parameter.
//!
//! Both methods split each local objective into a smooth part `s_i` (used
//! through its gradient) and a proximal part `h_i`; see
//! [`CompositeProblem::smooth_split`]. With step `α` and `W̄ = (I + W)/2`:
//!
//! ```text
//! PG-EXTRA  x^{1/2} = W x⁰ − α∇s(x⁰)
//!           x^{k+1/2} = W x^k + x^{k−1/2} − W̄ x^{k−1} − α(∇s(x^k) − ∇s(x^{k−1}))
//!           x^{k+1} = prox_{αh}(x^{k+1/2})
//!
//! NIDS      z¹ = x⁰ − α∇s(x⁰),  x¹ = prox_{αh}(z¹)
//!           z^{k+1} = z^k − x^k + W̄(2x^k − x^{k−1} − α∇s(x^k) + α∇s(x^{k−1}))
//!           x^{k+1} = prox_{αh}(z^{k+1})
//! ```
//!
//! Each iteration mixes one `d`-vector per agent, so the ledger records one
//! round and `2·d·|E|` scalars per iteration. NIDS computes `x¹` without
//! communication during setup.

use std::fmt;
use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::graph::MixingMatrix;
use crate::metrics::{IterateRecord, StopRule, Trajectory};
use crate::network::{mix_round, CommLedger};
use crate::problems::{CompositeProblem, Reference, SharedProx};
use crate::stacked::{consensus_error, mean_block, stack};

/// Iterate norm beyond which a run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    PgExtra,
    Nids,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::PgExtra => "pgextra",
            Algorithm::Nids => "nids",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineParams {
    pub algorithm: Algorithm,
    pub step: f64,
}

impl BaselineParams {
    pub fn new(algorithm: Algorithm, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {step}"
            )));
        }
        Ok(BaselineParams { algorithm, step })
    }
}

/// Lockstep state of every agent for either method.
#[derive(Debug, Clone)]
pub struct BaselineNetwork<'a> {
    w: &'a MixingMatrix,
    smooth: &'a [SharedProx],
    prox: &'a [SharedProx],
    params: BaselineParams,
    x: Vec<DVector<f64>>,
    x_prev: Vec<DVector<f64>>,
    grad_prev: Vec<DVector<f64>>,
    /// PG-EXTRA: `x^{k−1/2}`; NIDS: `z^k`.
    carry: Vec<DVector<f64>>,
    /// PG-EXTRA: `W x^{k−1}` from the previous round.
    mixed_prev: Vec<DVector<f64>>,
    started: bool,
    ledger: CommLedger,
}

fn gradient(h: &SharedProx, x: &DVector<f64>) -> Result<DVector<f64>> {
    h.gradient(x)
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no gradient", h.name())))
}

impl<'a> BaselineNetwork<'a> {
    pub fn new(problem: &'a CompositeProblem, w: &'a MixingMatrix, params: BaselineParams) -> Result<Self> {
        let x0 = vec![DVector::zeros(problem.d()); problem.n()];
        Self::with_start(problem, w, params, x0)
    }

    /// Starts from per-agent points `x0`.
    pub fn with_start(
        problem: &'a CompositeProblem,
        w: &'a MixingMatrix,
        params: BaselineParams,
        x0: Vec<DVector<f64>>,
    ) -> Result<Self> {
        BaselineParams::new(params.algorithm, params.step)?;
        if problem.n() != w.n() || x0.len() != w.n() {
            return Err(Error::DimensionMismatch {
                expected: w.n(),
                got: if problem.n() != w.n() { problem.n() } else { x0.len() },
            });
        }
        if let Some(bad) = x0.iter().find(|x| x.len() != problem.d()) {
            return Err(Error::DimensionMismatch {
                expected: problem.d(),
                got: bad.len(),
            });
        }
        let (smooth, prox) = problem.smooth_split()?;
        let n = w.n();
        let mut net = BaselineNetwork {
            w,
            smooth,
            prox,
            params,
            x_prev: x0.clone(),
            grad_prev: Vec::with_capacity(n),
            carry: Vec::with_capacity(n),
            mixed_prev: Vec::new(),
            x: x0,
            started: false,
            ledger: CommLedger::new(),
        };
        for i in 0..n {
            net.grad_prev.push(gradient(&net.smooth[i], &net.x[i])?);
        }
        if params.algorithm == Algorithm::Nids {
            let alpha = params.step;
            for i in 0..n {
                let z = &net.x[i] - &net.grad_prev[i] * alpha;
                let x1 = net.prox[i].prox(&z, alpha)?;
                net.carry.push(z);
                net.x_prev[i] = std::mem::replace(&mut net.x[i], x1);
            }
            net.started = true;
        }
        Ok(net)
    }

    pub fn iterates(&self) -> &[DVector<f64>] {
        &self.x
    }

    /// PG-EXTRA's `x^{k+1/2}` or NIDS's `z^{k+1}` from the last step.
    pub fn pre_prox(&self) -> &[DVector<f64>] {
        &self.carry
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    pub fn step(&mut self) -> Result<()> {
        self.ledger.begin_iteration();
        match self.params.algorithm {
            Algorithm::PgExtra => self.step_pg_extra(),
            Algorithm::Nids => self.step_nids(),
        }
    }

    fn step_pg_extra(&mut self) -> Result<()> {
        let alpha = self.params.step;
        let n = self.x.len();
        let mixed = mix_round(self.w, &self.x, &mut self.ledger);
        let mut grads = Vec::with_capacity(n);
        for i in 0..n {
            grads.push(gradient(&self.smooth[i], &self.x[i])?);
        }
        let half: Vec<DVector<f64>> = if !self.started {
            (0..n).map(|i| &mixed[i] - &grads[i] * alpha).collect()
        } else {
            (0..n)
                .map(|i| {
                    let wbar_prev = (&self.x_prev[i] + &self.mixed_prev[i]) * 0.5;
                    &mixed[i] + &self.carry[i] - wbar_prev - (&grads[i] - &self.grad_prev[i]) * alpha
                })
                .collect()
        };
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            next.push(self.prox[i].prox(&half[i], alpha)?);
        }
        self.x_prev = std::mem::replace(&mut self.x, next);
        self.grad_prev = grads;
        self.carry = half;
        self.mixed_prev = mixed;
        self.started = true;
        Ok(())
    }

    fn step_nids(&mut self) -> Result<()> {
        let alpha = self.params.step;
        let n = self.x.len();
        let mut grads = Vec::with_capacity(n);
        for i in 0..n {
            grads.push(gradient(&self.smooth[i], &self.x[i])?);
        }
        let y: Vec<DVector<f64>> = (0..n)
            .map(|i| &self.x[i] * 2.0 - &self.x_prev[i] - (&grads[i] - &self.grad_prev[i]) * alpha)
            .collect();
        let wy = mix_round(self.w, &y, &mut self.ledger);
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let z = &self.carry[i] - &self.x[i] + (&y[i] + &wy[i]) * 0.5;
            next.push(self.prox[i].prox(&z, alpha)?);
            self.carry[i] = z;
        }
        self.x_prev = std::mem::replace(&mut self.x, next);
        self.grad_prev = grads;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BaselineOutput {
    pub trajectory: Trajectory,
    pub last: Vec<DVector<f64>>,
}

/// Runs either method with the shared stopping rule: suboptimality of the
/// network average at most `stop.tol` with a reference, iterate movement at
/// most `stop.tol` without one.
pub fn run(
    problem: &CompositeProblem,
    w: &MixingMatrix,
    params: BaselineParams,
    stop: StopRule,
    reference: Option<&Reference>,
) -> Result<BaselineOutput> {
    problem.reset();
    let mut net = BaselineNetwork::new(problem, w, params)?;
    let d = problem.d();
    let start = Instant::now();
    let mut records = Vec::new();
    for t in 1..=stop.max_iters {
        let before = stack(&net.x);
        net.step()?;
        let x = stack(&net.x);
        let norm = x.norm();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(Error::Diverged { iteration: t, norm });
        }
        let xbar = mean_block(&x, d);
        let objective = problem.objective(&xbar);
        let suboptimality = reference.map(|r| objective - r.f_star);
        records.push(IterateRecord {
            iter: t,
            comm_rounds_cum: net.ledger.rounds_total,
            scalars_cum: net.ledger.scalars_total,
            objective,
            suboptimality,
            consensus_err: consensus_error(&x, d),
            kkt_residual: None,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        let done = match suboptimality {
            Some(s) => s <= stop.tol,
            None => (x - before).norm() <= stop.tol,
        };
        if done {
            break;
        }
    }
    Ok(BaselineOutput {
        trajectory: Trajectory {
            records,
            ledger: net.ledger.clone(),
        },
        last: net.x,
    })
}

pub fn pg_extra_run(
    problem: &CompositeProblem,
    w: &MixingMatrix,
    step: f64,
    stop: StopRule,
    reference: Option<&Reference>,
) -> Result<BaselineOutput> {
    run(problem, w, BaselineParams::new(Algorithm::PgExtra, step)?, stop, reference)
}

pub fn nids_run(
    problem: &CompositeProblem,
    w: &MixingMatrix,
    step: f64,
    stop: StopRule,
    reference: Option<&Reference>,
) -> Result<BaselineOutput> {
    run(problem, w, BaselineParams::new(Algorithm::Nids, step)?, stop, reference)
}

/// `per_decade` log-spaced points per decade from `lo` to `hi`, both ends
/// included.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo && per_decade > 0);
    let (a, b) = (lo.log10(), hi.log10());
    let count = ((b - a) * per_decade as f64).round() as usize;
    (0..=count)
        .map(|k| 10f64.powf(a + k as f64 / per_decade as f64))
        .collect()
}

/// Default step grid: 13 points per decade over `[1e−4, 1e1]`.
pub fn default_step_grid() -> Vec<f64> {
    log_grid(1e-4, 1e1, 13)
}

/// One candidate of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub value: f64,
    /// Iterations to reach the target, `None` if it was not reached.
    pub iterations: Option<usize>,
    /// Scalars transmitted up to that iteration.
    pub scalars: Option<u64>,
    /// `max_i ‖x_i − x̄‖` at that iteration.
    pub consensus: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub target: f64,
    /// Candidates in visiting order.
    pub entries: Vec<SweepEntry>,
}

impl SweepResult {
    /// Fastest candidate; ties go to the earlier one.
    pub fn best(&self) -> Option<(f64, usize)> {
        self.best_entry().map(|e| (e.value, e.iterations.unwrap_or(0)))
    }

    pub fn best_entry(&self) -> Option<&SweepEntry> {
        self.entries
            .iter()
            .filter(|e| e.iterations.is_some())
            .fold(None, |acc: Option<&SweepEntry>, c| match acc {
                Some(a) if a.iterations <= c.iterations => Some(a),
                _ => Some(c),
            })
    }
}

/// Evaluates candidates one at a time, capping each run at the best
/// iteration count seen so far.
struct Sweeper<F> {
    run: F,
    target: f64,
    cap: usize,
    best: Option<usize>,
    entries: Vec<SweepEntry>,
}

impl<F> Sweeper<F>
where
    F: FnMut(f64, usize) -> Result<Trajectory>,
{
    fn new(run: F, target: f64, max_iters: usize) -> Self {
        Sweeper {
            run,
            target,
            cap: max_iters,
            best: None,
            entries: Vec::new(),
        }
    }

    /// Returns whether `value` strictly beat every earlier candidate.
    fn eval(&mut self, value: f64) -> bool {
        let cap = self.cap;
        let entry = match (self.run)(value, cap) {
            Ok(traj) => match traj.first_reaching(self.target) {
                Some(rec) => SweepEntry {
                    value,
                    iterations: Some(rec.iter),
                    scalars: Some(rec.scalars_cum),
                    consensus: Some(rec.consensus_err),
                    note: None,
                },
                None => SweepEntry {
                    value,
                    iterations: None,
                    scalars: None,
                    consensus: None,
                    note: Some(format!("target not reached in {cap} iterations")),
                },
            },
            Err(e) => SweepEntry {
                value,
                iterations: None,
                scalars: None,
                consensus: None,
                note: Some(e.to_string()),
            },
        };
        let improved = entry.iterations.is_some_and(|k| self.best.is_none_or(|b| k < b));
        if improved {
            let k = entry.iterations.unwrap_or(cap);
            self.best = Some(k);
            self.cap = k;
        }
        self.entries.push(entry);
        improved
    }

    fn finish(self) -> SweepResult {
        SweepResult {
            target: self.target,
            entries: self.entries,
        }
    }
}

/// Evaluates `run(value, max_iters)` on every candidate and keeps the one
/// reaching suboptimality `target` in the fewest iterations. Once some
/// candidate succeeds, later ones are capped at the best count so far.
/// Errors of individual candidates (divergence, solver failures) are
/// recorded, not propagated.
pub fn sweep<F>(candidates: &[f64], target: f64, max_iters: usize, run: F) -> SweepResult
where
    F: FnMut(f64, usize) -> Result<Trajectory>,
{
    let mut s = Sweeper::new(run, target, max_iters);
    for &value in candidates {
        s.eval(value);
    }
    s.finish()
}

/// How a log grid is visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepStrategy {
    /// Every grid point, largest first.
    #[default]
    Exhaustive,
    /// Every decade point, largest first, then a walk outward from the best
    /// of them, one grid point at a time in each direction, until a point
    /// fails to improve. This finds the exhaustive optimum whenever the
    /// iteration count is unimodal between neighbouring decade points. If
    /// no decade point converges, the rest of the grid is visited.
    Bracketed,
}

/// Runs a sweep over an ascending log grid with `per_decade` points per
/// decade. Entries come back in visiting order.
pub fn sweep_grid<F>(
    grid: &[f64],
    per_decade: usize,
    strategy: SweepStrategy,
    target: f64,
    max_iters: usize,
    run: F,
) -> SweepResult
where
    F: FnMut(f64, usize) -> Result<Trajectory>,
{
    let mut s = Sweeper::new(run, target, max_iters);
    match strategy {
        SweepStrategy::Exhaustive => {
            for &value in grid.iter().rev() {
                s.eval(value);
            }
        }
        SweepStrategy::Bracketed => {
            assert!(per_decade > 0);
            let mut best = None;
            for i in (0..grid.len()).rev().filter(|i| i % per_decade == 0) {
                if s.eval(grid[i]) {
                    best = Some(i);
                }
            }
            match best {
                Some(b) => {
                    for j in b + 1..(b + per_decade).min(grid.len()) {
                        if !s.eval(grid[j]) {
                            break;
                        }
                    }
                    for j in (b.saturating_sub(per_decade - 1)..b).rev() {
                        if !s.eval(grid[j]) {
                            break;
                        }
                    }
                }
                None => {
                    for i in (0..grid.len()).rev().filter(|i| i % per_decade != 0) {
                        s.eval(grid[i]);
                    }
                }
            }
        }
    }
    s.finish()
}

/// Sweeps the step of one baseline over [`default_step_grid`].
pub fn tune_step(
    problem: &CompositeProblem,
    w: &MixingMatrix,
    algorithm: Algorithm,
    reference: &Reference,
    target: f64,
    max_iters: usize,
    strategy: SweepStrategy,
) -> SweepResult {
    sweep_grid(&default_step_grid(), 13, strategy, target, max_iters, |step, cap| {
        let stop = StopRule { max_iters: cap, tol: target };
        run(problem, w, BaselineParams::new(algorithm, step)?, stop, Some(reference)).map(|o| o.trajectory)
    })
}
