//! Feature matrices, downstream labels and their on-disk formats.
//!
//! `FMAT` layout (all little-endian):
//!
//! | offset | size    | field                                   |
//! |--------|---------|-----------------------------------------|
//! | 0      | 4       | magic `FMAT`                            |
//! | 4      | 1       | version, currently `0x01`               |
//! | 5      | 1       | flags, bit 0 = rows centered            |
//! | 6      | 4       | `p` (u32)                               |
//! | 10     | 4       | `n` (u32)                               |
//! | 14     | 8·p·n   | entries as f64, row-major               |
//!
//! `LBL1` layout: magic `LBL1`, kind byte (0 = regression, 1 = class), `n`
//! (u32), then either `n` f64 targets or `n` u32 labels followed by a u32
//! class count.
//!
//! CSV import reads one sample per line (`n` lines of `p` columns) and
//! transposes to the `p × n` convention used everywhere else.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{shape_err, Error, Result};

pub const FMAT_MAGIC: [u8; 4] = *b"FMAT";
pub const LBL_MAGIC: [u8; 4] = *b"LBL1";
pub const FMAT_VERSION: u8 = 0x01;
pub const FMAT_HEADER_LEN: usize = 14;

const CENTERED_BIT: u8 = 0b0000_0001;

/// Tolerance used when checking that a row (or vector) has zero mean.
pub(crate) fn mean_tolerance(values: impl Iterator<Item = f64>) -> f64 {
    let max_abs = values.fold(0.0_f64, |m, v| m.max(v.abs()));
    1e-12 * (max_abs + 1.0)
}

/// A `p × n` feature matrix: rows are feature dimensions, columns samples.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: DMatrix<f64>,
    centered: bool,
    name: String,
}

impl FeatureMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        Self::with_name(data, "")
    }

    pub fn with_name(data: DMatrix<f64>, name: impl Into<String>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(shape_err(format!(
                "feature matrix must be at least 1x1, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        for col in 0..data.ncols() {
            for row in 0..data.nrows() {
                if !data[(row, col)].is_finite() {
                    return Err(Error::NonFiniteEntry { row, col });
                }
            }
        }
        Ok(Self {
            data,
            centered: false,
            name: name.into(),
        })
    }

    /// Build from row-major slices, one slice per feature dimension.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let p = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n) {
            return Err(shape_err("ragged rows"));
        }
        Self::new(DMatrix::from_fn(p, n, |i, j| rows[i][j]))
    }

    /// Marks the matrix as centered when every row mean is zero within tolerance.
    pub(crate) fn with_centered_flag(mut self, centered: bool) -> Self {
        self.centered = centered;
        self
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    /// Number of feature dimensions.
    pub fn p(&self) -> usize {
        self.data.nrows()
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.data.ncols()
    }

    pub fn centered(&self) -> bool {
        self.centered
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    /// Checks the actual row means, independent of the stored flag.
    pub fn rows_are_centered(&self) -> bool {
        self.data.row_iter().all(|row| {
            let mean = row.sum() / row.len() as f64;
            mean.abs() <= mean_tolerance(row.iter().copied())
        })
    }

    /// Keeps only the listed sample columns, in the given order.
    pub fn select_samples(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n()) {
            return Err(shape_err(format!("sample index {bad} out of range")));
        }
        let data = self.data.select_columns(indices.iter());
        Ok(Self::with_name(data, self.name.clone())?)
    }
}

/// Regression target vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVector {
    values: DVector<f64>,
    centered: bool,
}

impl TaskVector {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(shape_err("task vector must be non-empty"));
        }
        if let Some(col) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEntry { row: 0, col });
        }
        let mean = values.mean();
        let centered = mean.abs() <= mean_tolerance(values.iter().copied());
        Ok(Self { values, centered })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn centered(&self) -> bool {
        self.centered
    }

    /// Subtracts the mean.
    pub fn centered_copy(&self) -> Self {
        let mean = self.values.mean();
        Self {
            values: self.values.add_scalar(-mean),
            centered: true,
        }
    }
}

/// Categorical labels with a declared class count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassLabels {
    labels: Vec<u32>,
    num_classes: u32,
}

impl ClassLabels {
    pub fn new(labels: Vec<u32>, num_classes: u32) -> Result<Self> {
        if num_classes < 2 {
            return Err(shape_err(format!(
                "at least two classes required, got {num_classes}"
            )));
        }
        if labels.is_empty() {
            return Err(shape_err("label vector must be non-empty"));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                index,
                label,
                num_classes,
            });
        }
        Ok(Self {
            labels,
            num_classes,
        })
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn distinct_count(&self) -> usize {
        let mut seen = vec![false; self.num_classes as usize];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        seen.into_iter().filter(|&s| s).count()
    }
}

/// Either kind of downstream target stored in an `LBL1` file.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Regression(TaskVector),
    Classes(ClassLabels),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Regression(t) => t.len(),
            Labels::Classes(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn encode_fmat(m: &FeatureMatrix) -> Vec<u8> {
    let (p, n) = (m.p(), m.n());
    let mut buf = Vec::with_capacity(FMAT_HEADER_LEN + 8 * p * n);
    buf.extend_from_slice(&FMAT_MAGIC);
    buf.push(FMAT_VERSION);
    buf.push(if m.centered() { CENTERED_BIT } else { 0 });
    buf.extend_from_slice(&(p as u32).to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    for i in 0..p {
        for j in 0..n {
            buf.extend_from_slice(&m.data()[(i, j)].to_le_bytes());
        }
    }
    buf
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

fn read_f64(bytes: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"))
}

fn check_magic(bytes: &[u8], expected: [u8; 4]) -> Result<()> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedFile {
            expected: 4,
            found: bytes.len(),
        });
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("4-byte slice");
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

pub fn decode_fmat(bytes: &[u8]) -> Result<FeatureMatrix> {
    check_magic(bytes, FMAT_MAGIC)?;
    if bytes.len() < FMAT_HEADER_LEN {
        return Err(Error::TruncatedFile {
            expected: FMAT_HEADER_LEN,
            found: bytes.len(),
        });
    }
    if bytes[4] != FMAT_VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    let centered = bytes[5] & CENTERED_BIT != 0;
    let p = read_u32(bytes, 6) as usize;
    let n = read_u32(bytes, 10) as usize;
    let expected = FMAT_HEADER_LEN + 8 * p * n;
    if bytes.len() != expected {
        return Err(Error::TruncatedFile {
            expected,
            found: bytes.len(),
        });
    }
    let mut data = DMatrix::zeros(p, n);
    for i in 0..p {
        for j in 0..n {
            let v = read_f64(bytes, FMAT_HEADER_LEN + 8 * (i * n + j));
            if !v.is_finite() {
                return Err(Error::NonFiniteEntry { row: i, col: j });
            }
            data[(i, j)] = v;
        }
    }
    Ok(FeatureMatrix::new(data)?.with_centered_flag(centered))
}

pub fn write_fmat(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_fmat(m))?;
    Ok(())
}

pub fn read_fmat(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let mut m = decode_fmat(&fs::read(path)?)?;
    if let Some(stem) = path.file_stem() {
        m.set_name(stem.to_string_lossy());
    }
    Ok(m)
}

pub fn encode_labels(labels: &Labels) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&LBL_MAGIC);
    match labels {
        Labels::Regression(t) => {
            buf.push(0);
            buf.extend_from_slice(&(t.len() as u32).to_le_bytes());
            for v in t.values().iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Labels::Classes(c) => {
            buf.push(1);
            buf.extend_from_slice(&(c.len() as u32).to_le_bytes());
            for l in c.labels() {
                buf.extend_from_slice(&l.to_le_bytes());
            }
            buf.extend_from_slice(&c.num_classes().to_le_bytes());
        }
    }
    buf
}

pub fn decode_labels(bytes: &[u8]) -> Result<Labels> {
    check_magic(bytes, LBL_MAGIC)?;
    const HEADER: usize = 9;
    if bytes.len() < HEADER {
        return Err(Error::TruncatedFile {
            expected: HEADER,
            found: bytes.len(),
        });
    }
    let kind = bytes[4];
    let n = read_u32(bytes, 5) as usize;
    match kind {
        0 => {
            let expected = HEADER + 8 * n;
            if bytes.len() != expected {
                return Err(Error::TruncatedFile {
                    expected,
                    found: bytes.len(),
                });
            }
            let values: Vec<f64> = (0..n).map(|i| read_f64(bytes, HEADER + 8 * i)).collect();
            Ok(Labels::Regression(TaskVector::from_slice(&values)?))
        }
        1 => {
            let expected = HEADER + 4 * n + 4;
            if bytes.len() != expected {
                return Err(Error::TruncatedFile {
                    expected,
                    found: bytes.len(),
                });
            }
            let labels: Vec<u32> = (0..n).map(|i| read_u32(bytes, HEADER + 4 * i)).collect();
            let num_classes = read_u32(bytes, HEADER + 4 * n);
            Ok(Labels::Classes(ClassLabels::new(labels, num_classes)?))
        }
        other => Err(Error::InvalidArgument(format!("unknown label kind {other}"))),
    }
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Labels> {
    decode_labels(&fs::read(path)?)
}

pub fn write_labels(labels: &Labels, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_labels(labels))?;
    Ok(())
}

/// Reads comma-separated samples (one per line) into a `p × n` matrix.
pub fn read_csv_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut m = parse_csv_features(&text)?;
    if let Some(stem) = path.file_stem() {
        m.set_name(stem.to_string_lossy());
    }
    Ok(m)
}

pub fn parse_csv_features(text: &str) -> Result<FeatureMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut samples: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        let row = record
            .iter()
            .map(|field| {
                field
                    .parse::<f64>()
                    .map_err(|e| Error::Csv(format!("line {}: {field:?}: {e}", line + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        samples.push(row);
    }
    let p = samples.first().map_or(0, Vec::len);
    if let Some(bad) = samples.iter().position(|s| s.len() != p) {
        return Err(Error::Csv(format!(
            "line {} has {} fields, expected {p}",
            bad + 1,
            samples[bad].len()
        )));
    }
    let n = samples.len();
    FeatureMatrix::new(DMatrix::from_fn(p, n, |i, j| samples[j][i]))
}

/// Loads a feature matrix, choosing CSV import for `.csv` paths.
pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => read_csv_features(path),
        _ => read_fmat(path),
    }
}
