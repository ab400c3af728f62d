//! The proximal operators behind the local subproblems, each checked
//! through the optimality condition `(v − x)/step ∈ ∂h(x)`.

use dsadmm::prox::{ElasticNet, HingeSum, L1Norm, ProxFn, QuadraticLoss, SquaredL2};
use dsadmm::sparse::SparseRow;
use dsadmm::DVector;

fn report(h: &dyn ProxFn, v: &DVector<f64>, step: f64) -> dsadmm::Result<()> {
    let x = h.prox(v, step)?;
    let y = (v - &x) / step;
    println!(
        "{:<14} prox = {:>8.4?}   dist(y, ∂h(x)) = {:.1e}",
        h.name(),
        x.as_slice(),
        h.subdiff_dist(&x, &y)?
    );
    Ok(())
}

fn main() -> dsadmm::Result<()> {
    let v = DVector::from_vec(vec![1.5, -0.2, 0.7]);
    let step = 0.5;
    report(&L1Norm { dim: 3, weight: 1.0 }, &v, step)?;
    report(&SquaredL2 { dim: 3, weight: 2.0 }, &v, step)?;
    report(&ElasticNet { dim: 3, l1: 0.5, l2: 1.0 }, &v, step)?;

    let rows = vec![
        SparseRow::from_dense(&[1.0, 0.0, 2.0]),
        SparseRow::from_dense(&[0.0, -1.0, 1.0]),
        SparseRow::from_dense(&[1.0, 1.0, 0.0]),
    ];
    let quad = QuadraticLoss::new(3, rows.clone(), vec![1.0, 0.0, -1.0], 1.0)?;
    report(&quad, &v, step)?;
    let hinge = HingeSum::new(3, rows, vec![1.0, -1.0, 1.0], 1.0)?;
    report(&hinge, &v, step)?;
    Ok(())
}
