//! DS-ADMM on a separable hinge-loss SVM, where the loss is nonsmooth and
//! its prox is solved by dual coordinate ascent inside every agent.

use dsadmm::agent::{run, DsAdmmParams, RunOptions};
use dsadmm::graph::{gen_erdos_renyi, metropolis_weights};
use dsadmm::metrics::StopRule;
use dsadmm::problems::{make_svm, reference_solution, synth_svm, SynthSpec, REFERENCE_TOL};

fn main() -> dsadmm::Result<()> {
    let data = synth_svm(SynthSpec { n_samples: 300, d: 10 }, 3);
    let problem = make_svm(&data, 10, None, 3)?;
    let reference = reference_solution(&problem, REFERENCE_TOL)?;
    let w = metropolis_weights(&gen_erdos_renyi(10, 0.5, 42)?);

    for beta in [0.1, 0.01, 0.003] {
        let params = DsAdmmParams::new(beta, 0.99, 0.01)?;
        let stop = StopRule { max_iters: 20_000, tol: 1e-6 };
        let out = run(&problem, &w, params, stop, Some(&reference), RunOptions::default())?;
        println!(
            "beta {beta:<6} {:>6} iterations  subopt {:.2e}  scalars {}",
            out.trajectory.iterations(),
            out.trajectory.final_suboptimality().unwrap_or(f64::NAN),
            out.trajectory.ledger.scalars_total
        );
    }
    let margins: Vec<f64> = data
        .rows
        .iter()
        .zip(&data.labels)
        .map(|(a, b)| b * a.dot(&reference.x))
        .collect();
    let correct = margins.iter().filter(|m| **m > 0.0).count();
    println!("F* = {:.6}, training accuracy {}/{}", reference.f_star, correct, margins.len());
    Ok(())
}
