//! Lockstep check of the agents against the centralized recursion, with the
//! contraction, sublinear-rate and eigenvalue diagnostics.

use dsadmm::experiment::{run_verified, ExperimentConfig, Prepared};

fn main() -> dsadmm::Result<()> {
    let cfg = ExperimentConfig::parse(
        "n_samples = 100\nd = 20\nn_agents = 10\nmax_iters = 500\ntol = 1e-14\ndata_seed = 1\n",
    )?;
    let prepared = Prepared::new(&cfg)?;
    let (out, report) = run_verified(&prepared, &cfg)?;
    println!("{report}");
    println!(
        "final suboptimality {:.2e}",
        out.trajectory.final_suboptimality().unwrap_or(f64::NAN)
    );

    let small = ExperimentConfig::parse("n_samples = 40\nd = 3\nn_agents = 5\ngraph = ring\nmax_iters = 300\n")?;
    let (_, report) = run_verified(&Prepared::new(&small)?, &small)?;
    println!("\nring of 5, d = 3\n{report}");
    Ok(())
}
