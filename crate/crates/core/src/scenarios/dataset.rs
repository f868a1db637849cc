//! Tabular time series of exogenous state with per-column statistics and a
//! contiguous train/test split.
//!
//! On disk a dataset is a CSV file with a `unit_id:quantity` header plus a
//! JSON sidecar (`<file>.meta.json`) holding column statistics and the split
//! boundary.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl Column {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            min: 0.0,
            max: 0.0,
            mean: 0.0,
        }
    }

    pub fn unit_id(&self) -> &str {
        self.name.split(':').next().unwrap_or(&self.name)
    }

    pub fn quantity(&self) -> &str {
        self.name.split(':').nth(1).unwrap_or("")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<f64>>,
    /// Rows at or after this index belong to the test split.
    pub split_index: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    n_rows: usize,
    split_index: usize,
    columns: Vec<Column>,
}

impl Dataset {
    /// Builds a dataset with exact column statistics; every row is train.
    pub fn new(columns: Vec<Column>, rows: Vec<Vec<f64>>) -> Self {
        let split_index = rows.len();
        let mut ds = Self {
            columns,
            rows,
            split_index,
        };
        ds.recompute_statistics();
        ds
    }

    pub fn recompute_statistics(&mut self) {
        let n = self.rows.len();
        for (c, col) in self.columns.iter_mut().enumerate() {
            if n == 0 {
                col.min = 0.0;
                col.max = 0.0;
                col.mean = 0.0;
                continue;
            }
            let values = self.rows.iter().map(|r| r[c]);
            col.min = values.clone().fold(f64::INFINITY, f64::min);
            col.max = values.clone().fold(f64::NEG_INFINITY, f64::max);
            // the mean can land outside [min, max] by rounding on constant columns
            col.mean = (values.sum::<f64>() / n as f64).clamp(col.min, col.max);
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn split_of(&self, row: usize) -> Split {
        if row >= self.split_index {
            Split::Test
        } else {
            Split::Train
        }
    }

    pub fn train_rows(&self) -> std::ops::Range<usize> {
        0..self.split_index
    }

    pub fn test_rows(&self) -> std::ops::Range<usize> {
        self.split_index..self.rows.len()
    }

    /// Min/max over the train split only, per column.
    pub fn train_ranges(&self) -> Vec<(f64, f64)> {
        (0..self.columns.len())
            .map(|c| {
                self.rows[self.train_rows()].iter().fold(
                    (f64::INFINITY, f64::NEG_INFINITY),
                    |(lo, hi), r| (lo.min(r[c]), hi.max(r[c])),
                )
            })
            .collect()
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.columns {
            h.update(c.name.as_bytes());
            h.update([0]);
        }
        for row in &self.rows {
            for v in row {
                h.update(v.to_le_bytes());
            }
        }
        h.update((self.split_index as u64).to_le_bytes());
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".meta.json");
        PathBuf::from(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut out = String::new();
        out.push_str(
            &self
                .columns
                .iter()
                .map(|c| c.name.as_str())
                .collect::<Vec<_>>()
                .join(","),
        );
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        let sidecar = Sidecar {
            n_rows: self.rows.len(),
            split_index: self.split_index,
            columns: self.columns.clone(),
        };
        let json = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(Self::sidecar_path(path), json + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::Parse(e.to_string()))?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::Parse(e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect();
        if header.iter().any(|h| !h.contains(':')) {
            return Err(Error::Parse("dataset header must be unit_id:quantity".into()));
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::Parse(e.to_string()))?;
            let row = record
                .iter()
                .map(|v| v.parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let sidecar_text = std::fs::read_to_string(Self::sidecar_path(path))?;
        let sidecar: Sidecar =
            serde_json::from_str(&sidecar_text).map_err(|e| Error::Parse(e.to_string()))?;
        if sidecar.n_rows != rows.len() || sidecar.split_index > rows.len() {
            return Err(Error::Parse("sidecar does not match dataset rows".into()));
        }
        if sidecar.columns.iter().map(|c| &c.name).ne(header.iter()) {
            return Err(Error::Parse("sidecar columns do not match header".into()));
        }
        Ok(Self {
            columns: sidecar.columns,
            rows,
            split_index: sidecar.split_index,
        })
    }
}

/// Marks the final `ceil(test_fraction * N)` rows as the test split.
pub fn split_dataset(mut dataset: Dataset, test_fraction: f64) -> Result<Dataset> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let n = dataset.rows.len();
    let n_test = (test_fraction * n as f64).ceil() as usize;
    dataset.split_index = n - n_test.min(n);
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numbered(n: usize) -> Dataset {
        Dataset::new(
            vec![Column::new("load0:p_mw")],
            (0..n).map(|i| vec![i as f64]).collect(),
        )
    }

    #[test]
    fn hundred_rows_split() {
        let ds = split_dataset(numbered(100), 0.2).unwrap();
        assert_eq!(ds.test_rows(), 80..100);
        assert_eq!(ds.train_rows(), 0..80);
        assert_eq!(ds.split_of(79), Split::Train);
        assert_eq!(ds.split_of(80), Split::Test);
    }

    #[test]
    fn full_scale_split_count() {
        let ds = split_dataset(numbered(33_600), 0.2).unwrap();
        assert_eq!(ds.test_rows().len(), 6720);
    }

    #[test]
    fn bad_fraction_rejected() {
        assert!(split_dataset(numbered(10), 0.0).is_err());
        assert!(split_dataset(numbered(10), 1.0).is_err());
    }

    #[test]
    fn statistics_are_exact() {
        let ds = numbered(5);
        let c = &ds.columns[0];
        assert_eq!((c.min, c.max, c.mean), (0.0, 4.0, 2.0));
        assert_eq!(c.unit_id(), "load0");
        assert_eq!(c.quantity(), "p_mw");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/data.csv");
        let mut ds = split_dataset(numbered(50), 0.2).unwrap();
        ds.rows[3][0] = 0.1 + 0.2;
        ds.recompute_statistics();
        ds.save(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        assert_eq!(back, ds);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("load0:p_mw\n"));
    }
}
