use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;
use crate::sparse::SparseRow;

/// Labelled sparse samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub rows: Vec<SparseRow>,
    pub labels: Vec<f64>,
    /// Feature count; every index is below `d`.
    pub d: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn require_binary_labels(&self) -> Result<()> {
        match self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l != 1.0 && l != -1.0)
        {
            Some((row, &label)) => Err(Error::NonBinaryLabel { row, label }),
            None => Ok(()),
        }
    }

    /// Scales each feature by the inverse of its largest absolute value.
    pub fn scale_max_abs(&mut self) {
        let mut max = vec![0.0f64; self.d];
        for r in &self.rows {
            for (i, v) in r.iter() {
                max[i] = max[i].max(v.abs());
            }
        }
        let scales: Vec<f64> = max
            .iter()
            .map(|&m| if m > 0.0 { 1.0 / m } else { 1.0 })
            .collect();
        for r in &mut self.rows {
            r.scale_features(&scales);
        }
    }

    /// Content hash of rows, labels and dimension (hex SHA-256).
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.d as u64).to_le_bytes());
        for (r, l) in self.rows.iter().zip(&self.labels) {
            h.update(l.to_bits().to_le_bytes());
            h.update((r.nnz() as u64).to_le_bytes());
            for (i, v) in r.iter() {
                h.update((i as u64).to_le_bytes());
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Reads LIBSVM text: `label idx:val ...` with 1-based indices. Blank lines
/// and `#` comments are skipped.
pub fn parse_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_libsvm_str(&text, &path.display().to_string())
}

pub fn parse_libsvm_str(text: &str, name: &str) -> Result<Dataset> {
    let mut ds = Dataset::default();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: name.to_string(),
            line: k + 1,
            message,
        };
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().unwrap();
        let label: f64 = label_tok
            .parse()
            .map_err(|_| err(format!("bad label `{label_tok}`")))?;
        let mut pairs = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("expected `index:value`, found `{tok}`")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(format!("bad feature index `{idx}`")))?;
            if idx == 0 {
                return Err(err("feature indices are 1-based; found 0".into()));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| err(format!("bad feature value `{val}`")))?;
            pairs.push((idx - 1, val));
        }
        let row = SparseRow::from_pairs(pairs);
        ds.d = ds.d.max(row.dim_hint());
        ds.rows.push(row);
        ds.labels.push(label);
    }
    Ok(ds)
}

/// Shuffles rows by `seed` and deals them round-robin into `n` parts.
pub fn partition_even(ds: &Dataset, n: usize, seed: u64) -> Result<Vec<Dataset>> {
    if n == 0 || n > ds.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} rows among {n} agents",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut parts = vec![
        Dataset {
            d: ds.d,
            ..Dataset::default()
        };
        n
    ];
    for (k, &row) in order.iter().enumerate() {
        let part = &mut parts[k % n];
        part.rows.push(ds.rows[row].clone());
        part.labels.push(ds.labels[row]);
    }
    Ok(parts)
}

/// Shape of a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub d: usize,
}

/// Gaussian design with a planted sparse signal.
#[derive(Debug, Clone)]
pub struct SynthLasso {
    pub data: Dataset,
    pub planted: Vec<f64>,
}

/// Rows `a_j ~ N(0, I)`, a planted `x♮` with 10% support (at least one
/// coordinate, entries of magnitude in `[1, 2]` with random sign) and
/// targets `a_jᵀx♮ + 0.01·ε_j`.
pub fn synth_lasso(spec: SynthSpec, seed: u64) -> SynthLasso {
    synth_lasso_with_noise(spec, seed, 0.01)
}

pub fn synth_lasso_with_noise(spec: SynthSpec, seed: u64, noise: f64) -> SynthLasso {
    let mut rng = rng::seeded(seed);
    let d = spec.d;
    let support = ((d as f64) * 0.1).round().max(1.0) as usize;
    let mut coords: Vec<usize> = (0..d).collect();
    coords.shuffle(&mut rng);
    let mut planted = vec![0.0; d];
    for &c in &coords[..support.min(d)] {
        let mag: f64 = rng.random_range(1.0..2.0);
        planted[c] = if rng.random_bool(0.5) { mag } else { -mag };
    }
    let mut data = Dataset {
        d,
        ..Dataset::default()
    };
    for _ in 0..spec.n_samples {
        let a: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let eps: f64 = rng.sample(StandardNormal);
        let y = a.iter().zip(&planted).map(|(x, w)| x * w).sum::<f64>() + noise * eps;
        data.rows.push(SparseRow::from_dense(&a));
        data.labels.push(y);
    }
    SynthLasso { data, planted }
}

/// Linearly separable classification data: `a_j ~ N(0, I)`, labels
/// `sign(a_jᵀw♮)` for a Gaussian `w♮`.
pub fn synth_svm(spec: SynthSpec, seed: u64) -> Dataset {
    let mut rng = rng::seeded(seed);
    let w: Vec<f64> = (0..spec.d).map(|_| rng.sample(StandardNormal)).collect();
    let mut data = Dataset {
        d: spec.d,
        ..Dataset::default()
    };
    for _ in 0..spec.n_samples {
        let a: Vec<f64> = (0..spec.d).map(|_| rng.sample(StandardNormal)).collect();
        let s: f64 = a.iter().zip(&w).map(|(x, y)| x * y).sum();
        data.rows.push(SparseRow::from_dense(&a));
        data.labels.push(if s >= 0.0 { 1.0 } else { -1.0 });
    }
    data
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_libsvm_line() {
        let ds = parse_libsvm_str("+1 1:0.5 3:2\n", "t").unwrap();
        assert_eq!(ds.labels, vec![1.0]);
        assert_eq!(ds.rows[0].indices, vec![0, 2]);
        assert_eq!(ds.rows[0].values, vec![0.5, 2.0]);
        assert_eq!(ds.d, 3);
    }

    #[test]
    fn empty_input_has_no_rows() {
        let ds = parse_libsvm_str("", "t").unwrap();
        assert!(ds.is_empty());
        assert!(partition_even(&ds, 1, 0).is_err());
    }

    #[test]
    fn malformed_lines_report_line_number() {
        let err = parse_libsvm_str("+1 1:0.5\n\n-1 2-3\n", "f.txt").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e:?}"),
        }
        assert!(parse_libsvm_str("+1 0:1\n", "t").is_err());
        assert!(parse_libsvm_str("x 1:1\n", "t").is_err());
    }

    #[test]
    fn binary_label_check() {
        let ds = parse_libsvm_str("1 1:1\n2 1:1\n", "t").unwrap();
        assert!(matches!(
            ds.require_binary_labels(),
            Err(Error::NonBinaryLabel { row: 1, .. })
        ));
    }

    #[test]
    fn partition_sizes_and_determinism() {
        let ds = synth_lasso(SynthSpec { n_samples: 10, d: 3 }, 1).data;
        let parts = partition_even(&ds, 5, 9).unwrap();
        assert!(parts.iter().all(|p| p.len() == 2));

        let ds7 = synth_lasso(SynthSpec { n_samples: 7, d: 3 }, 1).data;
        let mut sizes: Vec<_> = partition_even(&ds7, 3, 2).unwrap().iter().map(Dataset::len).collect();
        sizes.sort();
        assert_eq!(sizes, vec![2, 2, 3]);

        assert_eq!(partition_even(&ds7, 3, 2).unwrap(), partition_even(&ds7, 3, 2).unwrap());
        assert!(partition_even(&ds7, 8, 2).is_err());
    }

    #[test]
    fn partition_reconstructs_rows() {
        let ds = synth_lasso(SynthSpec { n_samples: 23, d: 4 }, 5).data;
        let key = |r: &SparseRow, l: f64| {
            let mut k: Vec<u64> = r.values.iter().map(|v| v.to_bits()).collect();
            k.push(l.to_bits());
            k
        };
        let mut orig: Vec<_> = ds.rows.iter().zip(&ds.labels).map(|(r, &l)| key(r, l)).collect();
        let mut joined: Vec<_> = partition_even(&ds, 4, 3)
            .unwrap()
            .iter()
            .flat_map(|p| p.rows.iter().zip(&p.labels).map(|(r, &l)| key(r, l)).collect::<Vec<_>>())
            .collect();
        orig.sort();
        joined.sort();
        assert_eq!(orig, joined);
    }

    #[test]
    fn synthetic_data_is_deterministic() {
        let spec = SynthSpec { n_samples: 100, d: 20 };
        let a = synth_lasso(spec, 1);
        let b = synth_lasso(spec, 1);
        assert_eq!(a.data, b.data);
        assert_eq!(a.planted, b.planted);
        assert_eq!(a.planted.iter().filter(|x| **x != 0.0).count(), 2);
        assert_eq!(synth_svm(spec, 4), synth_svm(spec, 4));
    }

    #[test]
    fn max_abs_scaling() {
        let mut ds = parse_libsvm_str("1 1:2 2:-4\n-1 1:1\n", "t").unwrap();
        ds.scale_max_abs();
        assert_eq!(ds.rows[0].values, vec![1.0, -1.0]);
        assert_eq!(ds.rows[1].values, vec![0.5]);
    }

    #[test]
    fn content_hash_changes_with_data() {
        let a = parse_libsvm_str("1 1:2\n", "t").unwrap();
        let b = parse_libsvm_str("1 1:3\n", "t").unwrap();
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash(), a.clone().content_hash());
    }
}
