//! Tabular datasets: synthetic 2D generators and CSV ingestion.

use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Discrete { states: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

/// Per-column z-score parameters, fitted on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<f64>>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Present when continuous columns were standardized; `None` entries
    /// for discrete columns.
    pub standardization: Option<Vec<Option<Standardization>>>,
}

impl Dataset {
    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    pub fn split(&self, indices: &[usize]) -> Vec<Vec<f64>> {
        indices.iter().map(|&i| self.rows[i].clone()).collect()
    }

    pub fn train_rows(&self) -> Vec<Vec<f64>> {
        self.split(&self.train)
    }

    pub fn val_rows(&self) -> Vec<Vec<f64>> {
        self.split(&self.val)
    }

    pub fn test_rows(&self) -> Vec<Vec<f64>> {
        self.split(&self.test)
    }

    /// Smallest and largest value of a column over all rows.
    pub fn range(&self, column: usize) -> (f64, f64) {
        self.rows.iter().map(|r| r[column]).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(x), hi.max(x))
        })
    }

    /// Column range widened by `fraction` of its length on both sides.
    pub fn padded_range(&self, column: usize, fraction: f64) -> (f64, f64) {
        let (lo, hi) = self.range(column);
        let pad = ((hi - lo) * fraction).max(1e-6);
        (lo - pad, hi + pad)
    }

    fn check(&self) -> Result<()> {
        let n = self.rows.len();
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!("split index {i} is out of range or repeated")));
            }
        }
        for (r, row) in self.rows.iter().enumerate() {
            if row.len() != self.columns.len() {
                return Err(Error::InvalidArgument(format!("row {r} has {} values", row.len())));
            }
            for (x, col) in row.iter().zip(&self.columns) {
                if let ColumnKind::Discrete { states } = col.kind {
                    if x.fract() != 0.0 || *x < 0.0 || *x >= states as f64 {
                        return Err(Error::InvalidArgument(format!(
                            "row {r}: {x} is not a state of column {}",
                            col.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Replace continuous columns by the index of one of `bins` equal-width
    /// bins over the column's range.
    pub fn discretize(&mut self, bins: usize) -> Result<()> {
        if bins == 0 {
            return Err(Error::InvalidArgument("bins must be at least 1".into()));
        }
        for c in 0..self.columns.len() {
            if self.columns[c].kind != ColumnKind::Continuous {
                continue;
            }
            let (lo, hi) = self.range(c);
            let width = (hi - lo) / bins as f64;
            for row in &mut self.rows {
                let b = if width > 0.0 { ((row[c] - lo) / width).floor() } else { 0.0 };
                row[c] = b.clamp(0.0, (bins - 1) as f64);
            }
            self.columns[c].kind = ColumnKind::Discrete { states: bins };
        }
        self.standardization = None;
        Ok(())
    }

    /// Z-score every continuous column with mean and standard deviation
    /// of the training split.
    pub fn standardize(&mut self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::InvalidArgument("standardization needs training rows".into()));
        }
        let n = self.train.len() as f64;
        let mut stats = Vec::with_capacity(self.columns.len());
        for c in 0..self.columns.len() {
            if self.columns[c].kind != ColumnKind::Continuous {
                stats.push(None);
                continue;
            }
            let mean = self.train.iter().map(|&i| self.rows[i][c]).sum::<f64>() / n;
            let var = self.train.iter().map(|&i| (self.rows[i][c] - mean).powi(2)).sum::<f64>() / n;
            let std = if var > 0.0 { var.sqrt() } else { 1.0 };
            for row in &mut self.rows {
                row[c] = (row[c] - mean) / std;
            }
            stats.push(Some(Standardization { mean, std }));
        }
        self.standardization = Some(stats);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Synthetic {
    Rings,
    Cosine,
    Funnel,
    Banana,
}

impl FromStr for Synthetic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rings" => Ok(Synthetic::Rings),
            "cosine" => Ok(Synthetic::Cosine),
            "funnel" => Ok(Synthetic::Funnel),
            "banana" => Ok(Synthetic::Banana),
            other => Err(Error::InvalidArgument(format!("unknown synthetic dataset '{other}'"))),
        }
    }
}

impl Synthetic {
    fn draw(self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        let z = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
        match self {
            Synthetic::Rings => {
                let radius = if rng.random::<bool>() { 1.0 } else { 2.0 } + 0.1 * z(rng);
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                [radius * angle.cos(), radius * angle.sin()]
            }
            Synthetic::Cosine => {
                let x1 = rng.random_range(-4.0..4.0);
                [x1, 2.0 * x1.cos() + 0.35 * z(rng)]
            }
            Synthetic::Funnel => {
                let x1 = z(rng);
                let sd = (x1 / 2.0).exp();
                [x1, Normal::new(0.0, sd).expect("positive std").sample(rng)]
            }
            Synthetic::Banana => {
                let (z1, z2) = (z(rng), z(rng));
                [z1, z2 + 0.5 * z1 * z1 - 1.0]
            }
        }
    }
}

/// Rows `0..n_train` form the training split, followed by validation and
/// test rows. With `discretize`, both columns become bin indices.
pub fn generate_synthetic(
    kind: Synthetic,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
    discretize: Option<usize>,
) -> Result<Dataset> {
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::InvalidArgument("every split needs at least one row".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_train + n_val + n_test;
    let rows = (0..n).map(|_| kind.draw(&mut rng).to_vec()).collect();
    let mut ds = Dataset {
        columns: ["x1", "x2"]
            .iter()
            .map(|name| Column { name: name.to_string(), kind: ColumnKind::Continuous })
            .collect(),
        rows,
        train: (0..n_train).collect(),
        val: (n_train..n_train + n_val).collect(),
        test: (n_train + n_val..n).collect(),
        standardization: None,
    };
    if let Some(bins) = discretize {
        ds.discretize(bins)?;
    }
    Ok(ds)
}

/// How to read a CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    /// One kind per column; empty means every column is continuous.
    pub kinds: Vec<ColumnKind>,
    /// Trailing fractions of the rows, in file order, used for validation
    /// and test.
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub standardize: bool,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema { kinds: Vec::new(), val_fraction: 0.1, test_fraction: 0.2, standardize: false }
    }
}

/// Parse a CSV file with a header row.
pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, schema)
}

pub fn ingest_reader<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let fractions_ok = (0.0..1.0).contains(&schema.val_fraction)
        && (0.0..1.0).contains(&schema.test_fraction)
        && schema.val_fraction + schema.test_fraction < 1.0;
    if !fractions_ok {
        return Err(Error::InvalidArgument("split fractions must leave training rows".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let ingest = |line: Option<u64>, message: String| Error::Ingest { line: line.map(|l| l as usize), message };
    let headers = rdr.headers().map_err(|e| ingest(e.position().map(|p| p.line()), e.to_string()))?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(ingest(Some(1), "missing header row".into()));
    }
    let kinds = if schema.kinds.is_empty() {
        vec![ColumnKind::Continuous; headers.len()]
    } else if schema.kinds.len() == headers.len() {
        schema.kinds.clone()
    } else {
        return Err(ingest(
            Some(1),
            format!("schema has {} columns, header has {}", schema.kinds.len(), headers.len()),
        ));
    };
    let columns: Vec<Column> = headers
        .iter()
        .zip(&kinds)
        .map(|(name, &kind)| Column { name: name.to_string(), kind })
        .collect();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| ingest(e.position().map(|p| p.line()), e.to_string()))?;
        let line = record.position().map(|p| p.line());
        let mut row = Vec::with_capacity(columns.len());
        for (cell, col) in record.iter().zip(&columns) {
            let x: f64 = cell
                .parse()
                .map_err(|_| ingest(line, format!("column '{}': '{cell}' is not a number", col.name)))?;
            if !x.is_finite() {
                return Err(ingest(line, format!("column '{}': non-finite value", col.name)));
            }
            if let ColumnKind::Discrete { states } = col.kind {
                if x.fract() != 0.0 || x < 0.0 || x >= states as f64 {
                    return Err(ingest(line, format!("column '{}': {x} is not in 0..{states}", col.name)));
                }
            }
            row.push(x);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ingest(None, "no data rows".into()));
    }
    let n = rows.len();
    let n_test = (n as f64 * schema.test_fraction).round() as usize;
    let n_val = (n as f64 * schema.val_fraction).round() as usize;
    let n_train = n.saturating_sub(n_test + n_val).max(1);
    let n_val = n_val.min(n - n_train);
    let mut ds = Dataset {
        columns,
        rows,
        train: (0..n_train).collect(),
        val: (n_train..n_train + n_val).collect(),
        test: (n_train + n_val..n).collect(),
        standardization: None,
    };
    ds.check()?;
    if schema.standardize {
        ds.standardize()?;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_shapes() {
        let ds = generate_synthetic(Synthetic::Rings, 10000, 1000, 2000, 1, None).unwrap();
        assert_eq!(ds.rows.len(), 13000);
        assert_eq!(ds.columns.len(), 2);
        assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (10000, 1000, 2000));
        let mean_radius: f64 = ds.rows.iter().map(|r| r[0].hypot(r[1])).sum::<f64>() / 13000.0;
        assert!((mean_radius - 1.5).abs() < 0.05);
        for kind in [Synthetic::Cosine, Synthetic::Funnel, Synthetic::Banana] {
            let ds = generate_synthetic(kind, 50, 5, 5, 2, None).unwrap();
            assert!(ds.rows.iter().flatten().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn discretized_and_deterministic() {
        let a = generate_synthetic(Synthetic::Banana, 500, 50, 50, 9, Some(32)).unwrap();
        assert!(a.rows.iter().flatten().all(|&x| x.fract() == 0.0 && (0.0..32.0).contains(&x)));
        assert_eq!(a.columns[0].kind, ColumnKind::Discrete { states: 32 });
        let b = generate_synthetic(Synthetic::Banana, 500, 50, 50, 9, Some(32)).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        assert!("spiral".parse::<Synthetic>().is_err());
    }

    #[test]
    fn csv_ingest() {
        let ds = ingest_reader("a,b\n1,2\n3,4\n5,6\n".as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(ds.rows.len(), 3);
        let err = ingest_reader("a,b\n1,x\n".as_bytes(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Ingest { line: Some(2), .. }), "{err:?}");
        let err = ingest_reader("a,b\n1,2\n3\n".as_bytes(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Ingest { line: Some(3), .. }), "{err:?}");
        let schema = CsvSchema { kinds: vec![ColumnKind::Discrete { states: 2 }], ..Default::default() };
        assert!(ingest_reader("a\n0\n2\n".as_bytes(), &schema).is_err());
    }

    #[test]
    fn standardized_train_split() {
        let text: String = std::iter::once("x,y\n".to_string())
            .chain((0..100).map(|i| format!("{},{}\n", i as f64 * 0.5 + 3.0, (i * i) as f64)))
            .collect();
        let schema = CsvSchema { standardize: true, ..Default::default() };
        let ds = ingest_reader(text.as_bytes(), &schema).unwrap();
        for c in 0..2 {
            let xs: Vec<f64> = ds.train.iter().map(|&i| ds.rows[i][c]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
        assert!(ds.standardization.as_ref().unwrap()[0].is_some());
    }
}
