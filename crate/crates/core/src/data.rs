//! Labeled datasets, CSV I/O, label partitioning and stratified folds.
//!
//! A [`LabeledDataset`] holds the variable whose conditional density ratio is
//! targeted (`x1`), the conditioning covariates (`x2`), the population label
//! `λ` and an optional outcome. Rows labelled `true` come from the numerator
//! population, rows labelled `false` from the denominator population.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    x1: DMatrix<f64>,
    x2: DMatrix<f64>,
    label: Vec<bool>,
    y: Option<Vec<f64>>,
}

impl LabeledDataset {
    pub fn new(
        x1: DMatrix<f64>,
        x2: DMatrix<f64>,
        label: Vec<bool>,
        y: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = label.len();
        if n == 0 {
            return Err(Error::InvalidData("dataset has no rows".into()));
        }
        if x1.ncols() == 0 {
            return Err(Error::InvalidData("x1 needs at least one column".into()));
        }
        if x1.nrows() != n || x2.nrows() != n {
            return Err(Error::InvalidData(format!(
                "row counts differ: x1 {}, x2 {}, label {n}",
                x1.nrows(),
                x2.nrows()
            )));
        }
        if let Some(y) = &y {
            if y.len() != n {
                return Err(Error::InvalidData(format!("y has {} rows, expected {n}", y.len())));
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData("non-finite outcome value".into()));
            }
        }
        if x1.iter().chain(x2.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite feature value".into()));
        }
        Ok(Self { x1, x2, label, y })
    }

    /// Builds a dataset from row-major slices, mostly for tests and small examples.
    pub fn from_rows(x1: &[Vec<f64>], x2: &[Vec<f64>], label: &[bool]) -> Result<Self> {
        let n = label.len();
        let d1 = x1.first().map_or(0, Vec::len);
        let d2 = x2.first().map_or(0, Vec::len);
        if x1.len() != n || (d2 > 0 && x2.len() != n) {
            return Err(Error::InvalidData("row counts differ".into()));
        }
        if x1.iter().any(|r| r.len() != d1) || x2.iter().any(|r| r.len() != d2) {
            return Err(Error::InvalidData("ragged rows".into()));
        }
        let m1 = DMatrix::from_fn(n, d1, |i, j| x1[i][j]);
        let m2 = DMatrix::from_fn(n, d2, |i, j| x2[i][j]);
        Self::new(m1, m2, label.to_vec(), None)
    }

    pub fn with_outcome(mut self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::InvalidData("outcome length mismatch".into()));
        }
        self.y = Some(y);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.label.len()
    }
    pub fn d1(&self) -> usize {
        self.x1.ncols()
    }
    pub fn d2(&self) -> usize {
        self.x2.ncols()
    }
    pub fn x1(&self) -> &DMatrix<f64> {
        &self.x1
    }
    pub fn x2(&self) -> &DMatrix<f64> {
        &self.x2
    }
    pub fn labels(&self) -> &[bool] {
        &self.label
    }
    pub fn y(&self) -> Option<&[f64]> {
        self.y.as_deref()
    }

    pub fn count_label(&self, label: bool) -> usize {
        self.label.iter().filter(|&&l| l == label).count()
    }

    /// `[x1 | x2]` as one matrix.
    pub fn features(&self) -> DMatrix<f64> {
        hstack(&self.x1, &self.x2)
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            x1: self.x1.select_rows(rows),
            x2: self.x2.select_rows(rows),
            label: rows.iter().map(|&i| self.label[i]).collect(),
            y: self.y.as_ref().map(|y| rows.iter().map(|&i| y[i]).collect()),
        }
    }

    /// Row-wise concatenation. Outcomes are kept only if both sides carry them.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.d1() != other.d1() || self.d2() != other.d2() {
            return Err(Error::DimensionMismatch {
                expected: self.d1() + self.d2(),
                got: other.d1() + other.d2(),
            });
        }
        let x1 = vstack(&self.x1, &other.x1);
        let x2 = vstack(&self.x2, &other.x2);
        let label = self.label.iter().chain(&other.label).copied().collect();
        let y = match (&self.y, &other.y) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Ok(Self { x1, x2, label, y })
    }

    pub fn row_x1(&self, i: usize) -> Vec<f64> {
        self.x1.row(i).iter().copied().collect()
    }
    pub fn row_x2(&self, i: usize) -> Vec<f64> {
        self.x2.row(i).iter().copied().collect()
    }
}

pub fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows());
    let (ca, cb) = (a.ncols(), b.ncols());
    DMatrix::from_fn(a.nrows(), ca + cb, |i, j| if j < ca { a[(i, j)] } else { b[(i, j - ca)] })
}

pub fn vstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.ncols());
    let ra = a.nrows();
    DMatrix::from_fn(ra + b.nrows(), a.ncols(), |i, j| if i < ra { a[(i, j)] } else { b[(i - ra, j)] })
}

/// Maps CSV columns onto dataset roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub x1: Vec<String>,
    #[serde(default)]
    pub x2: Vec<String>,
    pub label: String,
    #[serde(default)]
    pub y: Option<String>,
}

impl ColumnSchema {
    pub fn new(x1: &[&str], x2: &[&str], label: &str) -> Self {
        Self {
            x1: x1.iter().map(|s| s.to_string()).collect(),
            x2: x2.iter().map(|s| s.to_string()).collect(),
            label: label.to_string(),
            y: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.x1.is_empty() {
            return Err(Error::Schema("schema names no x1 column".into()));
        }
        Ok(())
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
}

pub fn read_dataset<R: Read>(reader: R, schema: &ColumnSchema) -> Result<LabeledDataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let x1_idx = schema.x1.iter().map(|c| column_index(&headers, c)).collect::<Result<Vec<_>>>()?;
    let x2_idx = schema.x2.iter().map(|c| column_index(&headers, c)).collect::<Result<Vec<_>>>()?;
    let label_idx = column_index(&headers, &schema.label)?;
    let y_idx = schema.y.as_deref().map(|c| column_index(&headers, c)).transpose()?;

    let (mut x1, mut x2, mut label, mut y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (row, record) in rdr.records().enumerate() {
        let row = row + 1;
        let record = record?;
        let cell = |idx: usize| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("").trim();
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                msg: format!("non-numeric value `{raw}` in column `{}`", &headers[idx]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { row, msg: format!("non-finite value in `{}`", &headers[idx]) });
            }
            Ok(v)
        };
        for &i in &x1_idx {
            x1.push(cell(i)?);
        }
        for &i in &x2_idx {
            x2.push(cell(i)?);
        }
        let l = cell(label_idx)?;
        label.push(match l {
            0.0 => false,
            1.0 => true,
            v => return Err(Error::Parse { row, msg: format!("label {v} is not 0 or 1") }),
        });
        if let Some(i) = y_idx {
            y.push(cell(i)?);
        }
    }
    let n = label.len();
    let x1 = DMatrix::from_row_slice(n, x1_idx.len(), &x1);
    let x2 = DMatrix::from_row_slice(n, x2_idx.len(), &x2);
    LabeledDataset::new(x1, x2, label, y_idx.map(|_| y))
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(file), schema)
}

/// Writes the dataset with the schema's column names, x1 columns first.
/// Values are printed in shortest round-trip form, so a reload is exact.
pub fn write_dataset<W: Write>(d: &LabeledDataset, schema: &ColumnSchema, writer: W) -> Result<()> {
    if schema.x1.len() != d.d1() || schema.x2.len() != d.d2() {
        return Err(Error::Schema("schema column count does not match dataset".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = schema.x1.iter().chain(&schema.x2).map(String::as_str).collect();
    header.push(&schema.label);
    let y_name = match (&schema.y, d.y()) {
        (Some(name), Some(_)) => Some(name.as_str()),
        _ => None,
    };
    header.extend(y_name);
    w.write_record(&header)?;
    for i in 0..d.n() {
        let mut rec: Vec<String> = d.x1.row(i).iter().chain(d.x2.row(i).iter()).map(|v| v.to_string()).collect();
        rec.push(if d.label[i] { "1" } else { "0" }.to_string());
        if let (Some(_), Some(y)) = (y_name, d.y()) {
            rec.push(y[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(d: &LabeledDataset, schema: &ColumnSchema, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_dataset(d, schema, std::io::BufWriter::new(file))
}

/// Splits rows into the numerator (λ = 1) and denominator (λ = 0) populations.
pub fn partition_by_label(d: &LabeledDataset) -> Result<(LabeledDataset, LabeledDataset)> {
    let (num, den): (Vec<usize>, Vec<usize>) = (0..d.n()).partition(|&i| d.label[i]);
    if num.is_empty() {
        return Err(Error::DegeneratePopulation { missing: 1 });
    }
    if den.is_empty() {
        return Err(Error::DegeneratePopulation { missing: 0 });
    }
    Ok((d.subset(&num), d.subset(&den)))
}

/// A v-fold partition of row indices. Fold indices are zero-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    v: usize,
    assignment: Vec<usize>,
}

impl FoldPlan {
    pub fn from_assignment(v: usize, assignment: Vec<usize>) -> Result<Self> {
        if v < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {v}")));
        }
        let mut seen = vec![false; v];
        for &f in &assignment {
            if f >= v {
                return Err(Error::Config(format!("fold index {f} out of range for v={v}")));
            }
            seen[f] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Config("some fold is empty".into()));
        }
        Ok(Self { v, assignment })
    }

    pub fn v(&self) -> usize {
        self.v
    }
    pub fn n(&self) -> usize {
        self.assignment.len()
    }
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Validation rows V(m).
    pub fn validation(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] == fold).collect()
    }

    /// Training rows T(m), the complement of V(m).
    pub fn training(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] != fold).collect()
    }
}

/// Label-stratified v-fold plan. Each class is shuffled and dealt round-robin;
/// the denominator deal starts where the numerator deal stopped so fold sizes
/// differ by at most one.
pub fn make_stratified_folds(d: &LabeledDataset, v: usize, seed: &SeedSpec) -> Result<FoldPlan> {
    stratified_assignment(d.labels(), v, seed)
}

pub(crate) fn stratified_assignment(labels: &[bool], v: usize, seed: &SeedSpec) -> Result<FoldPlan> {
    if v < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {v}")));
    }
    let mut rng = seed.named("stratified-folds").rng();
    let mut assignment = vec![0usize; labels.len()];
    let mut offset = 0;
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < v {
            return Err(Error::InfeasibleStratification {
                label: u8::from(class),
                count: idx.len(),
                folds: v,
            });
        }
        idx.shuffle(&mut rng);
        for (j, &i) in idx.iter().enumerate() {
            assignment[i] = (offset + j) % v;
        }
        offset = (offset + idx.len()) % v;
    }
    FoldPlan::from_assignment(v, assignment)
}

/// Unstratified shuffled k-fold assignment used for internal model selection.
pub(crate) fn shuffled_folds(n: usize, k: usize, seed: &SeedSpec) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed.named("internal-folds").rng());
    let mut out = vec![0; n];
    for (j, &i) in idx.iter().enumerate() {
        out[i] = j % k;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn toy(labels: &[bool]) -> LabeledDataset {
        let x1: Vec<Vec<f64>> = (0..labels.len()).map(|i| vec![i as f64]).collect();
        let x2: Vec<Vec<f64>> = (0..labels.len()).map(|i| vec![(i * 7 % 5) as f64]).collect();
        LabeledDataset::from_rows(&x1, &x2, labels).unwrap()
    }

    #[test]
    fn load_three_row_csv() {
        let csv = "m,w,a\n0.1,3.0,1\n0.5,4.5,0\n0.9,7.25,1\n";
        let schema = ColumnSchema::new(&["m"], &["w"], "a");
        let d = read_dataset(csv.as_bytes(), &schema).unwrap();
        assert_eq!((d.n(), d.d1(), d.d2()), (3, 1, 1));
        assert_eq!(d.labels(), &[true, false, true]);
        assert_eq!(d.x2()[(2, 0)], 7.25);
    }

    #[test]
    fn label_two_is_a_parse_error_with_row() {
        let csv = "m,w,a\n0.1,3.0,1\n0.5,4.5,2\n";
        let schema = ColumnSchema::new(&["m"], &["w"], "a");
        match read_dataset(csv.as_bytes(), &schema) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_schema_error() {
        let csv = "m,w\n0.1,3.0\n";
        let schema = ColumnSchema::new(&["m"], &["w"], "a");
        assert!(matches!(read_dataset(csv.as_bytes(), &schema), Err(Error::Schema(_))));
    }

    #[test]
    fn non_numeric_cell_is_parse_error() {
        let csv = "m,w,a\nabc,3.0,1\n";
        let schema = ColumnSchema::new(&["m"], &["w"], "a");
        assert!(matches!(read_dataset(csv.as_bytes(), &schema), Err(Error::Parse { row: 1, .. })));
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let mut rng = SeedSpec::new(5).rng();
        let n = 50;
        let x1 = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>() * 1e3 - 500.0);
        let x2 = DMatrix::from_fn(n, 3, |_, _| rng.random::<f64>().powi(7));
        let label = (0..n).map(|_| rng.random::<bool>()).collect();
        let y = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let d = LabeledDataset::new(x1, x2, label, Some(y)).unwrap();
        let mut schema = ColumnSchema::new(&["a", "b"], &["c", "d", "e"], "lambda");
        schema.y = Some("y".into());
        let mut buf = Vec::new();
        write_dataset(&d, &schema, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice(), &schema).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn partition_sizes() {
        let (num, den) = partition_by_label(&toy(&[true, false, true])).unwrap();
        assert_eq!((num.n(), den.n()), (2, 1));
        assert!(num.labels().iter().all(|&l| l));
    }

    #[test]
    fn partition_requires_both_labels() {
        let r = partition_by_label(&toy(&[true, true]));
        assert!(matches!(r, Err(Error::DegeneratePopulation { missing: 0 })));
    }

    #[test]
    fn partition_preserves_row_multiset() {
        let mut rng = SeedSpec::new(9).rng();
        let labels: Vec<bool> = (0..100).map(|_| rng.random::<bool>()).collect();
        let d = toy(&labels);
        let (num, den) = partition_by_label(&d).unwrap();
        assert_eq!(num.n() + den.n(), 100);
        let key = |d: &LabeledDataset, i: usize| (d.x1()[(i, 0)].to_bits(), d.x2()[(i, 0)].to_bits(), d.labels()[i]);
        let mut original: Vec<_> = (0..d.n()).map(|i| key(&d, i)).collect();
        let mut recombined: Vec<_> = (0..num.n()).map(|i| key(&num, i)).chain((0..den.n()).map(|i| key(&den, i))).collect();
        original.sort();
        recombined.sort();
        assert_eq!(original, recombined);
    }

    #[test]
    fn balanced_folds() {
        let labels: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
        let plan = make_stratified_folds(&toy(&labels), 10, &SeedSpec::new(1)).unwrap();
        for m in 0..10 {
            let rows = plan.validation(m);
            assert_eq!(rows.len(), 10);
            assert_eq!(rows.iter().filter(|&&i| labels[i]).count(), 5);
        }
    }

    #[test]
    fn infeasible_stratification() {
        let labels: Vec<bool> = (0..10).map(|i| i < 2).collect();
        let r = make_stratified_folds(&toy(&labels), 5, &SeedSpec::new(1));
        assert!(matches!(r, Err(Error::InfeasibleStratification { label: 1, count: 2, folds: 5 })));
    }

    #[test]
    fn folds_are_deterministic() {
        let labels: Vec<bool> = (0..60).map(|i| i % 3 == 0).collect();
        let d = toy(&labels);
        let a = make_stratified_folds(&d, 4, &SeedSpec::new(77)).unwrap();
        let b = make_stratified_folds(&d, 4, &SeedSpec::new(77)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn stratified_folds_partition_and_balance(
            n1 in 2usize..80, n0 in 2usize..80, v in 2usize..8, seed in any::<u64>()
        ) {
            prop_assume!(n1 >= v && n0 >= v);
            let labels: Vec<bool> = (0..n1 + n0).map(|i| i < n1).collect();
            let plan = stratified_assignment(&labels, v, &SeedSpec::new(seed)).unwrap();
            let n = n1 + n0;
            let mut covered = vec![0usize; n];
            for m in 0..v {
                let rows = plan.validation(m);
                prop_assert!(!rows.is_empty());
                for &i in &rows { covered[i] += 1; }
                let pos = rows.iter().filter(|&&i| labels[i]).count() as f64;
                let expected = n1 as f64 * rows.len() as f64 / n as f64;
                prop_assert!((pos - expected).abs() <= 1.0 + 1e-12, "fold {m}: {pos} vs {expected}");
            }
            prop_assert!(covered.iter().all(|&c| c == 1));
        }
    }
}
