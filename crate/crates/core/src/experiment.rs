//! Experiment configuration, orchestration and output files.
//!
//! A configuration is flat `key = value` text, one entry per line, with `#`
//! starting a comment. Every key has a default, so an empty file is a valid
//! configuration (synthetic Lasso on a 30-agent Erdős–Rényi graph).
//!
//! | key | values | default |
//! |---|---|---|
//! | `problem` | `lasso`, `svm` | `lasso` |
//! | `dataset` | LIBSVM path or `synthetic` | `synthetic` |
//! | `n_samples`, `d`, `data_seed` | synthetic shape and seed | `1000`, `50`, `1` |
//! | `lambda` | positive real or `auto` (= 1/m) | `auto` |
//! | `normalize` | `none`, `maxabs` | `none` |
//! | `n_agents` | integer | `30` |
//! | `graph` | `ring`, `complete`, `erdos` | `erdos` |
//! | `p` | edge probability for `erdos` | `0.5` |
//! | `seed` | graph, partition and solver seed | `42` |
//! | `algorithm` | `dsadmm`, `pgextra`, `nids` | `dsadmm` |
//! | `beta`, `r`, `tau` | DS-ADMM parameters | `1`, `0.99`, `0.01` |
//! | `step` | baseline step or `auto` (tuned) | `auto` |
//! | `max_iters`, `tol` | stopping rule | `2000`, `1e-10` |
//! | `verify` | lockstep oracle check (DS-ADMM only) | `false` |
//! | `output` | CSV path | none |
//! | `cache_dir` | reference-solution cache directory | none |
//! | `parallel` | per-agent updates on the rayon pool | `false` |
//! | `sweep_target`, `sweep_max_iters` | tuning target and cap | `1e-6`, `20000` |
//! | `sweep_strategy` | `exhaustive`, `bracketed` | `exhaustive` |

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::agent::{self, DsAdmmParams, RunOptions};
use crate::baselines::{self, Algorithm, BaselineParams, SweepResult, SweepStrategy};
use crate::error::{Error, Result};
use crate::graph::{gen_complete, gen_erdos_renyi, gen_ring, metropolis_weights, spectral_gap, Graph, MixingMatrix};
use crate::metrics::{write_csv_file, StopRule, Trajectory};
use crate::oracle::{
    self, check_contraction, check_theorem1, check_update_identity, constraint_residual, global_step,
    kkt_residual, lemma1_for, relative_deviation, GlobalIterate, MarginRow, Operator, VerificationReport,
};
use crate::problems::{
    make_lasso, make_svm, parse_libsvm, reference_solution, synth_svm, CompositeProblem, Dataset, ProblemKind, Reference,
    ReferenceCache, SynthSpec, REFERENCE_TOL,
};
use crate::stacked::consensus_error;

pub use crate::problems::synth_lasso;

/// Largest relative deviation tolerated between the agents and the oracle.
pub const ORACLE_TOL: f64 = 1e-9;
/// The same bound when the hinge prox is solved iteratively.
pub const ORACLE_TOL_INEXACT: f64 = 1e-6;
/// Oracle iterations used to approximate the limit point `w∞`.
pub const REFERENCE_ITERS: usize = 5000;
/// Iterations over which the contraction and sublinear bounds are checked.
pub const VERIFY_WINDOW: usize = 500;
/// Lemma-1 spectra are computed only when `4nd` is at most this.
pub const LEMMA1_MAX_DIM: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemChoice {
    Lasso,
    Svm,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic { n_samples: usize, d: usize, seed: u64 },
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphSpec {
    Ring,
    Complete,
    Erdos { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlgorithmChoice {
    DsAdmm,
    Baseline(Algorithm),
}

impl AlgorithmChoice {
    pub const ALL: [AlgorithmChoice; 3] = [
        AlgorithmChoice::DsAdmm,
        AlgorithmChoice::Baseline(Algorithm::PgExtra),
        AlgorithmChoice::Baseline(Algorithm::Nids),
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmChoice::DsAdmm => "dsadmm",
            AlgorithmChoice::Baseline(a) => a.name(),
        }
    }

    /// Name of the tuned parameter.
    pub fn param_name(&self) -> &'static str {
        match self {
            AlgorithmChoice::DsAdmm => "beta",
            AlgorithmChoice::Baseline(_) => "step",
        }
    }
}

impl fmt::Display for AlgorithmChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgorithmChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "dsadmm" | "ds-admm" => Ok(AlgorithmChoice::DsAdmm),
            "pgextra" | "pg-extra" => Ok(AlgorithmChoice::Baseline(Algorithm::PgExtra)),
            "nids" => Ok(AlgorithmChoice::Baseline(Algorithm::Nids)),
            _ => Err(format!("unknown algorithm `{s}` (expected dsadmm, pgextra or nids)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemChoice,
    pub dataset: DatasetSource,
    pub lambda: Option<f64>,
    pub normalize: bool,
    pub n_agents: usize,
    pub graph: GraphSpec,
    pub seed: u64,
    pub algorithm: AlgorithmChoice,
    pub beta: f64,
    pub r: f64,
    pub tau: f64,
    pub step: Option<f64>,
    pub max_iters: usize,
    pub tol: f64,
    pub verify: bool,
    pub output: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub parallel: bool,
    pub sweep_target: f64,
    pub sweep_max_iters: usize,
    pub sweep_strategy: SweepStrategy,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let dsadmm = DsAdmmParams::default();
        ExperimentConfig {
            problem: ProblemChoice::Lasso,
            dataset: DatasetSource::Synthetic {
                n_samples: 1000,
                d: 50,
                seed: 1,
            },
            lambda: None,
            normalize: false,
            n_agents: 30,
            graph: GraphSpec::Erdos { p: 0.5 },
            seed: 42,
            algorithm: AlgorithmChoice::DsAdmm,
            beta: dsadmm.beta,
            r: dsadmm.r,
            tau: dsadmm.tau,
            step: None,
            max_iters: 2000,
            tol: 1e-10,
            verify: false,
            output: None,
            cache_dir: None,
            parallel: false,
            sweep_target: 1e-6,
            sweep_max_iters: 20_000,
            sweep_strategy: SweepStrategy::Exhaustive,
        }
    }
}

fn parse_field<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{value}`"))),
    }
}

fn parse_auto(key: &str, value: &str) -> Result<Option<f64>> {
    match value {
        "auto" | "default" | "" => Ok(None),
        _ => parse_field(key, value).map(Some),
    }
}

impl ExperimentConfig {
    /// Parses `key = value` text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", lineno + 1), format!("expected `key = value`, got `{line}`"))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets one key. Values are checked for syntax here and for
    /// consistency by [`ExperimentConfig::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "problem" => {
                self.problem = match value {
                    "lasso" => ProblemChoice::Lasso,
                    "svm" => ProblemChoice::Svm,
                    _ => return Err(Error::config(key, format!("expected lasso or svm, got `{value}`"))),
                }
            }
            "dataset" => {
                self.dataset = if value == "synthetic" {
                    match self.dataset {
                        DatasetSource::Synthetic { .. } => self.dataset.clone(),
                        DatasetSource::File(_) => DatasetSource::Synthetic {
                            n_samples: 1000,
                            d: 50,
                            seed: 1,
                        },
                    }
                } else {
                    DatasetSource::File(PathBuf::from(value))
                }
            }
            "n_samples" | "d" | "data_seed" => {
                let DatasetSource::Synthetic { n_samples, d, seed } = &mut self.dataset else {
                    return Err(Error::config(key, "only applies to the synthetic dataset"));
                };
                match key {
                    "n_samples" => *n_samples = parse_field(key, value)?,
                    "d" => *d = parse_field(key, value)?,
                    _ => *seed = parse_field(key, value)?,
                }
            }
            "lambda" => self.lambda = parse_auto(key, value)?,
            "normalize" => {
                self.normalize = match value {
                    "none" | "false" => false,
                    "maxabs" | "true" => true,
                    _ => return Err(Error::config(key, format!("expected none or maxabs, got `{value}`"))),
                }
            }
            "n_agents" => self.n_agents = parse_field(key, value)?,
            "graph" => {
                let p = match self.graph {
                    GraphSpec::Erdos { p } => p,
                    _ => 0.5,
                };
                self.graph = match value {
                    "ring" => GraphSpec::Ring,
                    "complete" => GraphSpec::Complete,
                    "erdos" | "er" => GraphSpec::Erdos { p },
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected ring, complete or erdos, got `{value}`"),
                        ))
                    }
                }
            }
            "p" => {
                let p = parse_field(key, value)?;
                match &mut self.graph {
                    GraphSpec::Erdos { p: slot } => *slot = p,
                    _ => return Err(Error::config(key, "only applies to graph = erdos")),
                }
            }
            "seed" => self.seed = parse_field(key, value)?,
            "algorithm" => self.algorithm = value.parse().map_err(|m: String| Error::config(key, m))?,
            "beta" => self.beta = parse_field(key, value)?,
            "r" => self.r = parse_field(key, value)?,
            "tau" => self.tau = parse_field(key, value)?,
            "step" => self.step = parse_auto(key, value)?,
            "max_iters" => self.max_iters = parse_field(key, value)?,
            "tol" => self.tol = parse_field(key, value)?,
            "verify" => self.verify = parse_bool(key, value)?,
            "output" => self.output = (!value.is_empty()).then(|| PathBuf::from(value)),
            "cache_dir" => self.cache_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            "parallel" => self.parallel = parse_bool(key, value)?,
            "sweep_target" => self.sweep_target = parse_field(key, value)?,
            "sweep_max_iters" => self.sweep_max_iters = parse_field(key, value)?,
            "sweep_strategy" => {
                self.sweep_strategy = match value {
                    "exhaustive" => SweepStrategy::Exhaustive,
                    "bracketed" => SweepStrategy::Bracketed,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected exhaustive or bracketed, got `{value}`"),
                        ))
                    }
                }
            }
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be positive and finite, got {v}")))
            }
        };
        if let DatasetSource::Synthetic { n_samples, d, .. } = self.dataset {
            if d == 0 {
                return Err(Error::config("d", "must be at least 1"));
            }
            if n_samples < self.n_agents {
                return Err(Error::config(
                    "n_samples",
                    format!("{n_samples} samples cannot be split among {} agents", self.n_agents),
                ));
            }
        }
        if let Some(l) = self.lambda {
            positive("lambda", l)?;
        }
        if self.n_agents == 0 {
            return Err(Error::config("n_agents", "must be at least 1"));
        }
        match self.graph {
            GraphSpec::Erdos { p } if !(p > 0.0 && p <= 1.0) => {
                return Err(Error::config("p", format!("must lie in (0, 1], got {p}")))
            }
            GraphSpec::Ring if self.n_agents < 3 => {
                return Err(Error::config("graph", "a ring needs at least 3 agents"))
            }
            GraphSpec::Complete | GraphSpec::Erdos { .. } if self.n_agents < 2 => {
                return Err(Error::config("graph", "needs at least 2 agents"))
            }
            _ => {}
        }
        positive("beta", self.beta)?;
        positive("tau", self.tau)?;
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(Error::config("r", format!("must lie in (0, 1), got {}", self.r)));
        }
        if let Some(s) = self.step {
            positive("step", s)?;
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters", "must be at least 1"));
        }
        positive("tol", self.tol)?;
        positive("sweep_target", self.sweep_target)?;
        if self.sweep_max_iters == 0 {
            return Err(Error::config("sweep_max_iters", "must be at least 1"));
        }
        if self.verify && self.algorithm != AlgorithmChoice::DsAdmm {
            return Err(Error::config("verify", "the oracle check only applies to dsadmm"));
        }
        Ok(())
    }

    pub fn stop_rule(&self) -> StopRule {
        StopRule {
            max_iters: self.max_iters,
            tol: self.tol,
        }
    }

    pub fn dsadmm_params(&self) -> Result<DsAdmmParams> {
        DsAdmmParams::new(self.beta, self.r, self.tau)
    }

    /// The configuration as `key = value` text that [`ExperimentConfig::parse`]
    /// reads back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "problem = {}",
            match self.problem {
                ProblemChoice::Lasso => "lasso",
                ProblemChoice::Svm => "svm",
            }
        );
        match &self.dataset {
            DatasetSource::Synthetic { n_samples, d, seed } => {
                let _ = writeln!(s, "dataset = synthetic\nn_samples = {n_samples}\nd = {d}\ndata_seed = {seed}");
            }
            DatasetSource::File(p) => {
                let _ = writeln!(s, "dataset = {}", p.display());
            }
        }
        let opt = |v: Option<f64>| v.map_or("auto".to_string(), |x| x.to_string());
        let _ = writeln!(s, "lambda = {}", opt(self.lambda));
        let _ = writeln!(s, "normalize = {}", if self.normalize { "maxabs" } else { "none" });
        let _ = writeln!(s, "n_agents = {}", self.n_agents);
        match self.graph {
            GraphSpec::Ring => s.push_str("graph = ring\n"),
            GraphSpec::Complete => s.push_str("graph = complete\n"),
            GraphSpec::Erdos { p } => {
                let _ = writeln!(s, "graph = erdos\np = {p}");
            }
        }
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "algorithm = {}", self.algorithm);
        let _ = writeln!(s, "beta = {}\nr = {}\ntau = {}", self.beta, self.r, self.tau);
        let _ = writeln!(s, "step = {}", opt(self.step));
        let _ = writeln!(s, "max_iters = {}\ntol = {:e}", self.max_iters, self.tol);
        let _ = writeln!(s, "verify = {}", self.verify);
        if let Some(p) = &self.output {
            let _ = writeln!(s, "output = {}", p.display());
        }
        if let Some(p) = &self.cache_dir {
            let _ = writeln!(s, "cache_dir = {}", p.display());
        }
        let _ = writeln!(s, "parallel = {}", self.parallel);
        let _ = writeln!(
            s,
            "sweep_target = {:e}\nsweep_max_iters = {}\nsweep_strategy = {}",
            self.sweep_target,
            self.sweep_max_iters,
            match self.sweep_strategy {
                SweepStrategy::Exhaustive => "exhaustive",
                SweepStrategy::Bracketed => "bracketed",
            }
        );
        s
    }
}

/// Loads or generates the dataset of a configuration.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let mut ds = match &cfg.dataset {
        DatasetSource::Synthetic { n_samples, d, seed } => {
            let spec = SynthSpec {
                n_samples: *n_samples,
                d: *d,
            };
            match cfg.problem {
                ProblemChoice::Lasso => synth_lasso(spec, *seed).data,
                ProblemChoice::Svm => synth_svm(spec, *seed),
            }
        }
        DatasetSource::File(path) => {
            if !path.exists() {
                return Err(Error::config("dataset", format!("{} does not exist", path.display())));
            }
            parse_libsvm(path)?
        }
    };
    if ds.is_empty() {
        return Err(Error::config("dataset", "contains no rows"));
    }
    if cfg.normalize {
        ds.scale_max_abs();
    }
    Ok(ds)
}

pub fn build_graph(cfg: &ExperimentConfig) -> Result<Graph> {
    match cfg.graph {
        GraphSpec::Ring => gen_ring(cfg.n_agents),
        GraphSpec::Complete => gen_complete(cfg.n_agents),
        GraphSpec::Erdos { p } => gen_erdos_renyi(cfg.n_agents, p, cfg.seed),
    }
}

/// Everything an algorithm run needs, built once per configuration.
pub struct Prepared {
    pub problem: CompositeProblem,
    pub w: MixingMatrix,
    pub reference: Reference,
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let ds = load_dataset(cfg)?;
        let problem = match cfg.problem {
            ProblemChoice::Lasso => make_lasso(&ds, cfg.n_agents, cfg.lambda, cfg.seed)?,
            ProblemChoice::Svm => make_svm(&ds, cfg.n_agents, cfg.lambda, cfg.seed)?,
        };
        let w = metropolis_weights(&build_graph(cfg)?);
        let reference = match &cfg.cache_dir {
            Some(dir) => ReferenceCache::new(dir).get_or_compute(&problem, REFERENCE_TOL)?,
            None => reference_solution(&problem, REFERENCE_TOL)?,
        };
        Ok(Prepared { problem, w, reference })
    }

    /// Runs `algorithm` with its tuned parameter `param` (β or step) and
    /// the remaining DS-ADMM parameters from `cfg`.
    pub fn run(
        &self,
        cfg: &ExperimentConfig,
        algorithm: AlgorithmChoice,
        param: f64,
        stop: StopRule,
    ) -> Result<Trajectory> {
        match algorithm {
            AlgorithmChoice::DsAdmm => {
                let params = DsAdmmParams::new(param, cfg.r, cfg.tau)?;
                let opts = RunOptions {
                    parallel: cfg.parallel,
                    kkt: false,
                };
                agent::run(&self.problem, &self.w, params, stop, Some(&self.reference), opts).map(|o| o.trajectory)
            }
            AlgorithmChoice::Baseline(a) => {
                baselines::run(&self.problem, &self.w, BaselineParams::new(a, param)?, stop, Some(&self.reference))
                    .map(|o| o.trajectory)
            }
        }
    }

    /// Tunes β (DS-ADMM) or the step (baselines) over the default log grid.
    pub fn sweep(&self, cfg: &ExperimentConfig, algorithm: AlgorithmChoice) -> SweepResult {
        let target = cfg.sweep_target;
        baselines::sweep_grid(
            &baselines::default_step_grid(),
            13,
            cfg.sweep_strategy,
            target,
            cfg.sweep_max_iters,
            |value, cap| self.run(cfg, algorithm, value, StopRule { max_iters: cap, tol: target }),
        )
    }
}

/// Headline numbers of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub algorithm: AlgorithmChoice,
    pub param_name: &'static str,
    pub param: f64,
    pub tuned: bool,
    pub iterations: usize,
    pub final_suboptimality: Option<f64>,
    pub final_consensus_error: f64,
    pub rounds: u64,
    pub scalars: u64,
    pub verification: Option<bool>,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "algorithm = {}", self.algorithm)?;
        writeln!(
            f,
            "{} = {}{}",
            self.param_name,
            self.param,
            if self.tuned { "  # tuned" } else { "" }
        )?;
        writeln!(f, "iterations = {}", self.iterations)?;
        match self.final_suboptimality {
            Some(s) => writeln!(f, "final_suboptimality = {s:e}")?,
            None => writeln!(f, "final_suboptimality = n/a")?,
        }
        writeln!(f, "final_consensus_error = {:e}", self.final_consensus_error)?;
        writeln!(f, "rounds = {}", self.rounds)?;
        writeln!(f, "scalars = {}", self.scalars)?;
        if let Some(v) = self.verification {
            writeln!(f, "verification = {}", if v { "pass" } else { "fail" })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub trajectory: Trajectory,
    pub summary: Summary,
    pub verification: Option<VerificationReport>,
}

/// Path of the summary file written next to a CSV output.
pub fn summary_path(output: &Path) -> PathBuf {
    output.with_extension("summary.txt")
}

/// Path of the verification margins written next to a CSV output.
pub fn margins_path(output: &Path) -> PathBuf {
    output.with_extension("margins.csv")
}

/// Builds everything, runs the configured algorithm and writes the CSV and
/// summary when `cfg.output` is set. A missing baseline step is tuned first.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let prepared = Prepared::new(cfg)?;
    let (param, tuned) = match (cfg.algorithm, cfg.step) {
        (AlgorithmChoice::DsAdmm, _) => (cfg.beta, false),
        (_, Some(step)) => (step, false),
        (algo, None) => {
            let res = prepared.sweep(cfg, algo);
            let (step, _) = res.best().ok_or_else(|| {
                Error::config(
                    "step",
                    format!(
                        "no grid step reached suboptimality {:e} within {} iterations; set step explicitly",
                        cfg.sweep_target, cfg.sweep_max_iters
                    ),
                )
            })?;
            (step, true)
        }
    };
    let (trajectory, verification) = if cfg.verify {
        let (out, report) = run_verified(&prepared, cfg)?;
        (out.trajectory, Some(report))
    } else if cfg.algorithm == AlgorithmChoice::DsAdmm {
        let opts = RunOptions {
            parallel: cfg.parallel,
            kkt: true,
        };
        let out = agent::run(
            &prepared.problem,
            &prepared.w,
            cfg.dsadmm_params()?,
            cfg.stop_rule(),
            Some(&prepared.reference),
            opts,
        )?;
        (out.trajectory, None)
    } else {
        (prepared.run(cfg, cfg.algorithm, param, cfg.stop_rule())?, None)
    };
    let final_consensus_error = trajectory.records.last().map_or(0.0, |r| r.consensus_err);
    let summary = Summary {
        algorithm: cfg.algorithm,
        param_name: cfg.algorithm.param_name(),
        param,
        tuned,
        iterations: trajectory.iterations(),
        final_suboptimality: trajectory.final_suboptimality(),
        final_consensus_error,
        rounds: trajectory.ledger.rounds_total,
        scalars: trajectory.ledger.scalars_total,
        verification: verification.as_ref().map(|v| v.passed()),
    };
    if let Some(out) = &cfg.output {
        write_csv_file(out, &trajectory.records)?;
        let mut text = summary.to_string();
        if let Some(v) = &verification {
            let _ = write!(text, "\n{v}\n");
            oracle::write_margins_csv_file(margins_path(out), &v.rows)?;
        }
        let path = summary_path(out);
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(ExperimentOutcome {
        trajectory,
        summary,
        verification,
    })
}

/// Runs DS-ADMM with the global recursion stepped in lockstep. The
/// trajectory is identical to an unobserved run.
pub fn run_verified(prepared: &Prepared, cfg: &ExperimentConfig) -> Result<(agent::RunOutput, VerificationReport)> {
    let params = cfg.dsadmm_params()?;
    let gp = params.global();
    let problem = &prepared.problem;
    let w = &prepared.w;
    let (n, d) = (problem.n(), problem.d());
    let op = Operator::new(w, d);

    let mut oracle_it = GlobalIterate::zeros(n, d);
    let mut window = vec![oracle_it.clone()];
    let mut devs = Vec::new();
    let mut kkts = Vec::new();
    let mut oracle_err = None;
    let opts = RunOptions {
        parallel: cfg.parallel,
        kkt: true,
    };
    let out = agent::run_observed(problem, w, params, cfg.stop_rule(), Some(&prepared.reference), opts, |t, it| {
        match global_step(&oracle_it, &op, problem, &gp) {
            Ok(next) => oracle_it = next,
            Err(e) => {
                oracle_err.get_or_insert(e);
                return Ok(());
            }
        }
        devs.push(relative_deviation(it, &oracle_it));
        if t <= VERIFY_WINDOW {
            window.push(it.clone());
            kkts.push(kkt_residual(it, &op, problem)?);
        }
        Ok(())
    })?;
    if let Some(e) = oracle_err {
        return Err(e);
    }

    // The hinge warm start is shared state; start the limit-point run cold.
    problem.reset();
    let mut w_ref = GlobalIterate::zeros(n, d);
    for _ in 0..REFERENCE_ITERS.max(window.len()) {
        w_ref = global_step(&w_ref, &op, problem, &gp)?;
    }
    problem.reset();

    let contraction = check_contraction(&window, &op, &gp, &w_ref)?;
    let theorem1 = check_theorem1(&window, &op, &gp)?;
    let update_identity_error = check_update_identity(&window, &op, &gp);
    let lemma1 = if 4 * n * d <= LEMMA1_MAX_DIM {
        Some(lemma1_for(w, d, gp)?)
    } else {
        None
    };
    let rows = (0..contraction.margins.len())
        .map(|k| MarginRow {
            iter: k + 1,
            oracle_rel_dev: devs[k],
            lemma2_margin: contraction.margins[k],
            theorem1_margin: theorem1.margins[k],
            kkt_residual: kkts[k],
        })
        .collect();
    let final_consensus_error = consensus_error(&out.last.u, d);
    let final_constraint_residual = constraint_residual(&out.last, &op);
    let report = VerificationReport {
        iterations: devs.len(),
        max_oracle_deviation: devs.iter().copied().fold(0.0, f64::max),
        oracle_tolerance: match problem.kind() {
            ProblemKind::Svm => ORACLE_TOL_INEXACT,
            _ => ORACLE_TOL,
        },
        contraction,
        theorem1,
        update_identity_error,
        lemma1,
        final_consensus_error,
        final_constraint_residual,
        rows,
    };
    Ok((out, report))
}

/// Tuned result of one algorithm in a comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub algorithm: AlgorithmChoice,
    pub param: Option<f64>,
    /// Iterations to reach the target.
    pub iterations: Option<usize>,
    /// Scalars transmitted up to that iteration.
    pub scalars: Option<u64>,
    pub sweep: SweepResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub target: f64,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn row(&self, algorithm: AlgorithmChoice) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.algorithm == algorithm)
    }

    /// Whether DS-ADMM beats every other algorithm strictly on iterations
    /// and on transmitted scalars.
    pub fn dsadmm_wins(&self) -> (bool, bool) {
        let Some(ds) = self.row(AlgorithmChoice::DsAdmm) else {
            return (false, false);
        };
        let others = self.rows.iter().filter(|r| r.algorithm != AlgorithmChoice::DsAdmm);
        let mut iters = ds.iterations.is_some();
        let mut scalars = ds.scalars.is_some();
        for o in others {
            iters &= o.iterations.is_none_or(|k| ds.iterations.is_some_and(|m| m < k));
            scalars &= o.scalars.is_none_or(|k| ds.scalars.is_some_and(|m| m < k));
        }
        (iters, scalars)
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:>6} {:>12} {:>10} {:>14}", "algo", "param", "value", "iters", "scalars")?;
        for r in &self.rows {
            let show = |v: Option<String>| v.unwrap_or_else(|| "-".into());
            writeln!(
                f,
                "{:<8} {:>6} {:>12} {:>10} {:>14}",
                r.algorithm.name(),
                r.algorithm.param_name(),
                show(r.param.map(|p| format!("{p:.4e}"))),
                show(r.iterations.map(|k| k.to_string())),
                show(r.scalars.map(|k| k.to_string())),
            )?;
        }
        Ok(())
    }
}

/// Tunes every algorithm on the same problem and graph and reports
/// iterations and scalars needed to reach `cfg.sweep_target`.
pub fn compare(cfg: &ExperimentConfig) -> Result<Comparison> {
    let prepared = Prepared::new(cfg)?;
    Ok(compare_prepared(&prepared, cfg))
}

pub fn compare_prepared(prepared: &Prepared, cfg: &ExperimentConfig) -> Comparison {
    let target = cfg.sweep_target;
    let mut rows = Vec::new();
    for algorithm in AlgorithmChoice::ALL {
        let sweep = prepared.sweep(cfg, algorithm);
        let best = sweep.best_entry().cloned();
        rows.push(ComparisonRow {
            algorithm,
            param: best.as_ref().map(|e| e.value),
            iterations: best.as_ref().and_then(|e| e.iterations),
            scalars: best.as_ref().and_then(|e| e.scalars),
            sweep,
        });
    }
    Comparison { target, rows }
}

/// Spectral summary of the configured graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInfo {
    pub n: usize,
    pub edges: usize,
    pub min_degree: usize,
    pub max_degree: usize,
    pub spectral_gap: f64,
    pub eigenvalues: Vec<f64>,
}

impl fmt::Display for GraphInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "agents        {}", self.n)?;
        writeln!(f, "edges         {}", self.edges)?;
        writeln!(f, "degree        {}..{}", self.min_degree, self.max_degree)?;
        writeln!(f, "spectral gap  {:.6}", self.spectral_gap)?;
        let eig: Vec<String> = self.eigenvalues.iter().map(|e| format!("{e:.4}")).collect();
        write!(f, "eigenvalues   {}", eig.join(" "))
    }
}

pub fn graph_info(cfg: &ExperimentConfig) -> Result<GraphInfo> {
    cfg.validate()?;
    let g = build_graph(cfg)?;
    let w = metropolis_weights(&g);
    let degrees: Vec<usize> = (0..g.n()).map(|i| g.degree(i)).collect();
    Ok(GraphInfo {
        n: g.n(),
        edges: g.num_edges(),
        min_degree: degrees.iter().copied().min().unwrap_or(0),
        max_degree: degrees.iter().copied().max().unwrap_or(0),
        spectral_gap: spectral_gap(&w)?,
        eigenvalues: w.eigenvalues(),
    })
}

/// Wall-clock helper for examples and the command line.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::read_csv_file;

    fn small() -> ExperimentConfig {
        ExperimentConfig::parse(
            "n_samples = 100\nd = 20\nn_agents = 10\nmax_iters = 60\n",
        )
        .unwrap()
    }

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = ExperimentConfig::parse("# nothing\n\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.n_agents, 30);
        assert_eq!(cfg.graph, GraphSpec::Erdos { p: 0.5 });
        assert_eq!((cfg.r, cfg.tau, cfg.beta), (0.99, 0.01, 1.0));
        assert_eq!(cfg.lambda, None);
    }

    #[test]
    fn text_round_trips() {
        let mut cfg = small();
        cfg.set("problem", "svm").unwrap();
        cfg.set("graph", "ring").unwrap();
        cfg.set("step", "0.5").unwrap();
        cfg.set("output", "/tmp/x.csv").unwrap();
        cfg.set("sweep_strategy", "bracketed").unwrap();
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn field_level_errors() {
        let field = |text: &str| match ExperimentConfig::parse(text) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        };
        assert_eq!(field("beta = -1"), "beta");
        assert_eq!(field("r = 1"), "r");
        assert_eq!(field("bogus = 3"), "bogus");
        assert_eq!(field("algorithm = admm"), "algorithm");
        assert_eq!(field("p = 1.5"), "p");
        assert_eq!(field("graph = ring\np = 0.2"), "p");
        assert_eq!(field("verify = true\nalgorithm = nids"), "verify");
        assert_eq!(field("just words"), "line 1");
        assert_eq!(field("n_samples = 10"), "n_samples");
        assert_eq!(field("dataset = /nonexistent/file\nd = 3"), "d");
    }

    #[test]
    fn missing_dataset_is_a_config_error() {
        let cfg = ExperimentConfig::parse("dataset = /nonexistent/a9a").unwrap();
        assert!(matches!(run_experiment(&cfg), Err(Error::Config { ref field, .. }) if field == "dataset"));
    }

    #[test]
    fn one_iteration_gives_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small();
        cfg.max_iters = 1;
        cfg.output = Some(dir.path().join("run.csv"));
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.trajectory.iterations(), 1);
        let rows = read_csv_file(dir.path().join("run.csv")).unwrap();
        assert_eq!(rows.len(), 1);
        let summary = std::fs::read_to_string(dir.path().join("run.summary.txt")).unwrap();
        assert!(summary.contains("iterations = 1"));
        assert!(summary.contains("scalars = "));
    }

    #[test]
    fn verification_is_observational() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small();
        cfg.graph = GraphSpec::Ring;
        cfg.n_agents = 4;
        cfg.output = Some(dir.path().join("plain.csv"));
        run_experiment(&cfg).unwrap();
        cfg.verify = true;
        cfg.output = Some(dir.path().join("verified.csv"));
        let out = run_experiment(&cfg).unwrap();
        let report = out.verification.unwrap();
        assert!(report.passed(), "{report}");
        assert!(report.lemma1.is_some());
        let strip = |p: &str| {
            let mut rows = read_csv_file(dir.path().join(p)).unwrap();
            rows.iter_mut().for_each(|r| r.wall_ms = 0.0);
            rows
        };
        assert_eq!(strip("plain.csv"), strip("verified.csv"));
        assert!(dir.path().join("verified.margins.csv").exists());
    }

    #[test]
    fn reruns_are_identical() {
        let cfg = small();
        let a = run_experiment(&cfg).unwrap().trajectory.records;
        let b = run_experiment(&cfg).unwrap().trajectory.records;
        let key = |rs: &[crate::metrics::IterateRecord]| {
            rs.iter().map(|r| (r.objective.to_bits(), r.consensus_err.to_bits())).collect::<Vec<_>>()
        };
        assert_eq!(key(&a), key(&b));
    }

    #[test]
    fn baseline_step_is_tuned_when_missing() {
        let mut cfg = small();
        cfg.algorithm = AlgorithmChoice::Baseline(Algorithm::Nids);
        cfg.sweep_strategy = SweepStrategy::Bracketed;
        cfg.sweep_max_iters = 2000;
        let out = run_experiment(&cfg).unwrap();
        assert!(out.summary.tuned);
        assert_eq!(out.summary.param_name, "step");
        assert_eq!(out.summary.rounds, out.trajectory.iterations() as u64);
    }

    #[test]
    fn comparison_reports_every_algorithm() {
        let mut cfg = small();
        cfg.sweep_strategy = SweepStrategy::Bracketed;
        cfg.sweep_max_iters = 3000;
        let cmp = compare(&cfg).unwrap();
        assert_eq!(cmp.rows.len(), 3);
        for row in &cmp.rows {
            let (k, s) = (row.iterations.unwrap(), row.scalars.unwrap());
            let per_iter = match row.algorithm {
                AlgorithmChoice::DsAdmm => 8,
                AlgorithmChoice::Baseline(_) => 2,
            };
            let g = build_graph(&cfg).unwrap();
            assert_eq!(s, (per_iter * 20 * g.num_edges() * k) as u64);
        }
        assert!(cmp.to_string().contains("nids"));
    }

    #[test]
    fn graph_info_of_ring() {
        let mut cfg = small();
        cfg.graph = GraphSpec::Ring;
        cfg.n_agents = 4;
        let info = graph_info(&cfg).unwrap();
        assert_eq!((info.n, info.edges, info.min_degree, info.max_degree), (4, 4, 2, 2));
        assert!((info.spectral_gap - 2.0 / 3.0).abs() < 1e-12);
    }
}
