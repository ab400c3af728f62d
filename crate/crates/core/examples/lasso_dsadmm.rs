//! DS-ADMM on a synthetic Lasso over a 10-agent Erdős–Rényi graph.
//!
//! Pass a path to also write the per-iteration CSV.

use dsadmm::agent::{run, DsAdmmParams, RunOptions};
use dsadmm::graph::{gen_erdos_renyi, metropolis_weights};
use dsadmm::metrics::{write_csv_file, StopRule};
use dsadmm::problems::{make_lasso, reference_solution, synth_lasso, SynthSpec, REFERENCE_TOL};

fn main() -> dsadmm::Result<()> {
    let data = synth_lasso(SynthSpec { n_samples: 200, d: 20 }, 1);
    let problem = make_lasso(&data.data, 10, None, 1)?;
    let reference = reference_solution(&problem, REFERENCE_TOL)?;
    let w = metropolis_weights(&gen_erdos_renyi(10, 0.5, 42)?);

    let stop = StopRule { max_iters: 5000, tol: 1e-10 };
    let out = run(&problem, &w, DsAdmmParams::default(), stop, Some(&reference), RunOptions::default())?;
    for rec in out.trajectory.records.iter().step_by(100) {
        println!(
            "iter {:>5}  subopt {:>10.3e}  consensus {:>9.2e}  kkt {:>9.2e}",
            rec.iter,
            rec.suboptimality.unwrap_or(f64::NAN),
            rec.consensus_err,
            rec.kkt_residual.unwrap_or(f64::NAN)
        );
    }
    let ledger = &out.trajectory.ledger;
    println!(
        "{} iterations, {} rounds, {} scalars, final suboptimality {:.2e}",
        out.trajectory.iterations(),
        ledger.rounds_total,
        ledger.scalars_total,
        out.trajectory.final_suboptimality().unwrap_or(f64::NAN)
    );
    let support: Vec<usize> = (0..data.planted.len()).filter(|&j| data.planted[j] != 0.0).collect();
    println!("planted support {support:?}");
    println!("recovered       {:?}", (0..reference.x.len()).filter(|&j| reference.x[j].abs() > 1e-6).collect::<Vec<_>>());

    if let Some(path) = std::env::args().nth(1) {
        write_csv_file(&path, &out.trajectory.records)?;
        println!("wrote {path}");
    }
    Ok(())
}
