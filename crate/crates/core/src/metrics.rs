//! Per-iteration records and the trajectory CSV format.
//!
//! Columns: `iter, comm_rounds_cum, scalars_cum, objective, suboptimality,
//! consensus_err, kkt_residual, wall_ms`. Optional values are written as
//! empty fields. `wall_ms` is the cumulative monotonic-clock time since the
//! start of the run.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::CommLedger;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub iter: usize,
    pub comm_rounds_cum: u64,
    pub scalars_cum: u64,
    pub objective: f64,
    pub suboptimality: Option<f64>,
    pub consensus_err: f64,
    pub kkt_residual: Option<f64>,
    pub wall_ms: f64,
}

/// Stopping rule shared by every algorithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub max_iters: usize,
    /// Suboptimality target when a reference optimum is known, iterate
    /// movement otherwise.
    pub tol: f64,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            max_iters: 2000,
            tol: 1e-10,
        }
    }
}

/// Output of one algorithm run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<IterateRecord>,
    pub ledger: CommLedger,
}

impl Trajectory {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn final_suboptimality(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.suboptimality)
    }

    /// First record whose suboptimality is at or below `target`.
    pub fn first_reaching(&self, target: f64) -> Option<&IterateRecord> {
        self.records
            .iter()
            .find(|r| r.suboptimality.is_some_and(|s| s <= target))
    }
}

pub fn write_csv<W: Write>(out: W, records: &[IterateRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in records {
        wtr.serialize(r)?;
    }
    if records.is_empty() {
        wtr.write_record([
            "iter",
            "comm_rounds_cum",
            "scalars_cum",
            "objective",
            "suboptimality",
            "consensus_err",
            "kkt_residual",
            "wall_ms",
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<IterateRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn write_csv_file(path: impl AsRef<Path>, records: &[IterateRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(std::io::BufWriter::new(file), records)
}

pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Vec<IterateRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_preserves_values() {
        let records = vec![
            IterateRecord {
                iter: 1,
                comm_rounds_cum: 2,
                scalars_cum: 640,
                objective: 0.123456789012345,
                suboptimality: Some(1.5e-7),
                consensus_err: 3.0e-3,
                kkt_residual: None,
                wall_ms: 0.25,
            },
            IterateRecord {
                iter: 2,
                comm_rounds_cum: 4,
                scalars_cum: 1280,
                objective: 0.1,
                suboptimality: None,
                consensus_err: 0.0,
                kkt_residual: Some(2.0e-9),
                wall_ms: 0.5,
            },
        ];
        let mut buf = Vec::new();
        write_csv(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "iter,comm_rounds_cum,scalars_cum,objective,suboptimality,consensus_err,kkt_residual,wall_ms\n"
        ));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), records);
    }

    #[test]
    fn empty_csv_has_header() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &[]).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("iter,"));
    }
}
