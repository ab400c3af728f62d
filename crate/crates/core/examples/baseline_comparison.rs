//! Tunes DS-ADMM, PG-EXTRA and NIDS on the same synthetic Lasso and reports
//! iterations and transmitted scalars to reach suboptimality 1e-6.
//!
//! Usage: `baseline_comparison [lasso|svm] [p]`.

use dsadmm::experiment::{compare, timed, ExperimentConfig};

fn main() -> dsadmm::Result<()> {
    let mut args = std::env::args().skip(1);
    let problem = args.next().unwrap_or_else(|| "lasso".into());
    let p = args.next().unwrap_or_else(|| "0.5".into());
    let shape = if problem == "svm" { "n_samples = 300\nd = 10" } else { "n_samples = 600\nd = 30" };
    let cfg = ExperimentConfig::parse(&format!(
        "problem = {problem}\n{shape}\np = {p}\nsweep_strategy = bracketed\nsweep_max_iters = 20000\n"
    ))?;
    let (cmp, secs) = timed(|| compare(&cfg));
    let cmp = cmp?;
    print!("{cmp}");
    let (iters, scalars) = cmp.dsadmm_wins();
    println!("dsadmm strictly fewest iterations: {iters}, scalars: {scalars} ({secs:.1} s)");
    Ok(())
}
