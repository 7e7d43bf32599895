use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DataValidation(format!(
                "matrix of {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: indices.len(), cols: self.cols, data }
    }
}

/// Observations as paired feature and output rows.
///
/// Gaussian toy data has no features and `d` outputs per row, logistic data
/// has `V` features and one 0/1 label, TLSA data has `C` covariates and `V`
/// outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    outputs: Matrix,
}

const HEADER_TAG: &str = "# epvi-dataset";

impl Dataset {
    pub fn new(features: Matrix, outputs: Matrix) -> Result<Self> {
        if features.rows() != outputs.rows() {
            return Err(Error::DataValidation(format!(
                "{} feature rows but {} output rows",
                features.rows(),
                outputs.rows()
            )));
        }
        Ok(Self { features, outputs })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn outputs(&self) -> &Matrix {
        &self.outputs
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            outputs: self.outputs.select_rows(indices),
        }
    }

    /// Random split into `(train, test)` with `round(fraction · N)` test rows.
    pub fn split_holdout(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Configuration(format!("holdout fraction {fraction} not in [0, 1)")));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (fraction * self.len() as f64).round() as usize;
        let (test, train) = order.split_at(n_test);
        let mut train = train.to_vec();
        let mut test = test.to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.select(&train), self.select(&test)))
    }

    /// Columnar text: one header line, then one whitespace-separated row per
    /// observation (features first, then outputs).
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{HEADER_TAG} rows={} features={} outputs={}\n",
            self.len(),
            self.features.cols(),
            self.outputs.cols()
        );
        for i in 0..self.len() {
            let row = self.features.row(i).iter().chain(self.outputs.row(i));
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty dataset file")?;
        let rest = header
            .strip_prefix(HEADER_TAG)
            .ok_or_else(|| format!("missing '{HEADER_TAG}' header"))?;
        let mut rows = None;
        let mut features = None;
        let mut outputs = None;
        for field in rest.split_whitespace() {
            let (key, value) = field.split_once('=').ok_or_else(|| format!("bad header field '{field}'"))?;
            let value: usize = value.parse().map_err(|_| format!("bad header value '{field}'"))?;
            match key {
                "rows" => rows = Some(value),
                "features" => features = Some(value),
                "outputs" => outputs = Some(value),
                _ => return Err(format!("unknown header key '{key}'")),
            }
        }
        let (rows, p, q) = match (rows, features, outputs) {
            (Some(r), Some(p), Some(q)) => (r, p, q),
            _ => return Err("header must declare rows, features and outputs".into()),
        };
        let mut fdata = Vec::with_capacity(rows * p);
        let mut odata = Vec::with_capacity(rows * q);
        let mut seen = 0;
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let values = line
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| format!("line {}: {e}", lineno + 2))?;
            if values.len() != p + q {
                return Err(format!("line {}: expected {} values, got {}", lineno + 2, p + q, values.len()));
            }
            fdata.extend_from_slice(&values[..p]);
            odata.extend_from_slice(&values[p..]);
            seen += 1;
        }
        if seen != rows {
            return Err(format!("header declares {rows} rows, found {seen}"));
        }
        let features = Matrix::new(rows, p, fdata).map_err(|e| e.to_string())?;
        let outputs = Matrix::new(rows, q, odata).map_err(|e| e.to_string())?;
        Dataset::new(features, outputs).map_err(|e| e.to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::MissingInput(format!("{}: {e}", path.display())))?;
        Self::from_text(&text).map_err(|reason| Error::Parse { path: path.to_path_buf(), reason })
    }
}
