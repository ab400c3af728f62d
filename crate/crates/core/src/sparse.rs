use nalgebra::DVector;

/// Sparse feature vector as sorted `(index, value)` pairs, 0-based.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseRow {
    /// Sorts by index; duplicate indices are summed.
    pub fn from_pairs(mut pairs: Vec<(usize, f64)>) -> Self {
        pairs.sort_by_key(|&(i, _)| i);
        let mut row = SparseRow::default();
        for (i, v) in pairs {
            if row.indices.last() == Some(&i) {
                *row.values.last_mut().unwrap() += v;
            } else {
                row.indices.push(i);
                row.values.push(v);
            }
        }
        row
    }

    pub fn from_dense(x: &[f64]) -> Self {
        SparseRow::from_pairs(
            x.iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i, *v))
                .collect(),
        )
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    /// Largest index plus one, 0 for an empty row.
    pub fn dim_hint(&self) -> usize {
        self.indices.last().map_or(0, |i| i + 1)
    }

    #[inline]
    pub fn dot(&self, x: &DVector<f64>) -> f64 {
        self.iter().map(|(i, v)| v * x[i]).sum()
    }

    /// `y += alpha · self`
    #[inline]
    pub fn axpy_into(&self, alpha: f64, y: &mut DVector<f64>) {
        for (i, v) in self.iter() {
            y[i] += alpha * v;
        }
    }

    pub fn norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn to_dense(&self, d: usize) -> DVector<f64> {
        let mut x = DVector::zeros(d);
        self.axpy_into(1.0, &mut x);
        x
    }

    pub fn scale_features(&mut self, scales: &[f64]) {
        for (i, v) in self.indices.iter().zip(self.values.iter_mut()) {
            *v *= scales[*i];
        }
    }
}
