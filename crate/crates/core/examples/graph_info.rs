//! Spectral summary of the graphs used in the experiments.

use dsadmm::graph::{gen_complete, gen_erdos_renyi, gen_ring, metropolis_weights, spectral_gap};

fn main() -> dsadmm::Result<()> {
    let graphs = [
        ("ring(4)", gen_ring(4)?),
        ("ring(30)", gen_ring(30)?),
        ("complete(30)", gen_complete(30)?),
        ("erdos(30, 0.5)", gen_erdos_renyi(30, 0.5, 42)?),
        ("erdos(30, 0.2)", gen_erdos_renyi(30, 0.2, 42)?),
    ];
    println!("{:<16} {:>6} {:>10} {:>10}", "graph", "edges", "gap", "max|W-W'|");
    for (name, g) in graphs {
        let w = metropolis_weights(&g);
        w.validate()?;
        let asym = (w.matrix() - w.matrix().transpose()).amax();
        println!("{:<16} {:>6} {:>10.6} {:>10.1e}", name, g.num_edges(), spectral_gap(&w)?, asym);
    }
    Ok(())
}
