use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dsadmm::experiment::{self, ExperimentConfig};
use dsadmm::Error;

#[derive(Parser)]
#[command(name = "dsadmm", version, about = "Decentralized symmetric ADMM experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one algorithm and write its per-iteration CSV.
    Run(Common),
    /// Tune beta (dsadmm) or the step (baselines) over the log grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Tune all three algorithms and compare them.
        #[arg(long)]
        all: bool,
    },
    /// Run DS-ADMM against the global recursion and check its convergence
    /// inequalities.
    Verify(Common),
    /// Print the graph and spectral summary.
    GraphInfo(Common),
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algorithm: Option<String>,
    /// ring, complete or erdos.
    #[arg(long)]
    graph: Option<String>,
    /// Edge probability of the Erdős–Rényi graph.
    #[arg(long, allow_negative_numbers = true)]
    p: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    r: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    tol: Option<f64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    verify: bool,
    /// Any other configuration key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn config(&self) -> dsadmm::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                if !path.exists() {
                    return Err(Error::Config {
                        field: "config".into(),
                        message: format!("{} does not exist", path.display()),
                    });
                }
                ExperimentConfig::from_file(path)?
            }
            None => ExperimentConfig::default(),
        };
        let mut pairs: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k.to_string(), v));
            }
        };
        push("algorithm", self.algorithm.clone());
        push("graph", self.graph.clone());
        push("p", self.p.map(|x| x.to_string()));
        push("beta", self.beta.map(|x| x.to_string()));
        push("r", self.r.map(|x| x.to_string()));
        push("tau", self.tau.map(|x| x.to_string()));
        push("seed", self.seed.map(|x| x.to_string()));
        push("max_iters", self.max_iters.map(|x| x.to_string()));
        push("tol", self.tol.map(|x| x.to_string()));
        push("output", self.output.as_ref().map(|p| p.display().to_string()));
        if self.verify {
            push("verify", Some("true".into()));
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config {
                field: "set".into(),
                message: format!("expected KEY=VALUE, got `{kv}`"),
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

enum Failure {
    Error(Error),
    Verification,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(common) => {
            let cfg = common.config()?;
            let out = experiment::run_experiment(&cfg)?;
            print!("{}", out.summary);
            if let Some(report) = &out.verification {
                println!("{report}");
                if !report.passed() {
                    return Err(Failure::Verification);
                }
            }
        }
        Command::Sweep { common, all } => {
            let cfg = common.config()?;
            if all {
                let cmp = experiment::compare(&cfg)?;
                print!("{cmp}");
                let (iters, scalars) = cmp.dsadmm_wins();
                println!("dsadmm fewest iterations: {iters}; fewest scalars: {scalars}");
            } else {
                let prepared = experiment::Prepared::new(&cfg)?;
                let res = prepared.sweep(&cfg, cfg.algorithm);
                println!("{} sweep to suboptimality {:e}", cfg.algorithm.param_name(), res.target);
                for e in &res.entries {
                    match (e.iterations, &e.note) {
                        (Some(k), _) => println!("  {:.4e}  {k}", e.value),
                        (None, Some(note)) => println!("  {:.4e}  - ({note})", e.value),
                        (None, None) => println!("  {:.4e}  -", e.value),
                    }
                }
                match res.best() {
                    Some((v, k)) => println!("best {} = {v:.6e} ({k} iterations)", cfg.algorithm.param_name()),
                    None => println!("no candidate reached the target"),
                }
            }
        }
        Command::Verify(common) => {
            let mut cfg = common.config()?;
            cfg.set("verify", "true")?;
            cfg.validate()?;
            let out = experiment::run_experiment(&cfg)?;
            let report = out.verification.expect("verify mode always reports");
            println!("{report}");
            if !report.passed() {
                return Err(Failure::Verification);
            }
        }
        Command::GraphInfo(common) => {
            let cfg = common.config()?;
            println!("{}", experiment::graph_info(&cfg)?);
        }
    }
    Ok(())
}

fn exit_code(outcome: &Result<(), Failure>) -> u8 {
    match outcome {
        Ok(()) => 0,
        Err(Failure::Error(_)) => 1,
        Err(Failure::Verification) => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = run(cli);
    match &outcome {
        Err(Failure::Error(e)) => eprintln!("error: {e}"),
        Err(Failure::Verification) => eprintln!("verification failed"),
        Ok(()) => {}
    }
    ExitCode::from(exit_code(&outcome))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Ok(())), 0);
        assert_eq!(exit_code(&Err(Failure::Error(Error::InvalidArgument("x".into())))), 1);
        assert_eq!(exit_code(&Err(Failure::Verification)), 2);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
