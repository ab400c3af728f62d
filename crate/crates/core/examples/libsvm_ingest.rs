//! Reads a LIBSVM file, splits it among agents and solves the centralized
//! SVM. Without an argument a small file is written to the temp directory.

use std::path::PathBuf;

use dsadmm::problems::{make_svm, parse_libsvm, partition_even, reference_solution, REFERENCE_TOL};

const SAMPLE: &str = "\
+1 1:0.9 3:1.2
-1 2:1.1 3:-0.4
+1 1:1.5 2:0.1
-1 1:-0.7 2:0.8
+1 3:2.0
-1 1:-1.2 3:-0.3
";

fn main() -> dsadmm::Result<()> {
    let path = match std::env::args().nth(1) {
        Some(p) => PathBuf::from(p),
        None => {
            let p = std::env::temp_dir().join("dsadmm-sample.libsvm");
            std::fs::write(&p, SAMPLE).expect("temp dir is writable");
            p
        }
    };
    let mut ds = parse_libsvm(&path)?;
    println!("{}: {} rows, d = {}, hash {}", path.display(), ds.len(), ds.d, ds.content_hash());
    ds.scale_max_abs();

    let parts = partition_even(&ds, 3, 7)?;
    println!("part sizes {:?}", parts.iter().map(|p| p.len()).collect::<Vec<_>>());

    let problem = make_svm(&ds, 3, None, 7)?;
    let reference = reference_solution(&problem, REFERENCE_TOL)?;
    println!("x* = {:.4?}", reference.x.as_slice());
    println!("F* = {:.6}", reference.f_star);
    Ok(())
}
