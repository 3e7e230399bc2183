//! Dense and sparse feature matrices.
//!
//! [`FeatureMatrix`] is stored in compressed sparse rows and persists as a
//! plain-text triplet file:
//!
//! ```text
//! rows cols nnz
//! row col value
//! ...
//! ```
//!
//! Values are written in Rust's shortest round-trip float form, so reading a
//! file back yields bit-identical values. Column names live in a sidecar file
//! next to the matrix, one name per line.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = MatrixError> = std::result::Result<T, E>;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(MatrixError::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(MatrixError::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(DenseMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
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

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        DenseMatrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Keeps the listed columns, in the listed order.
    pub fn select_columns(&self, idx: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for i in 0..self.rows {
            let r = self.row(i);
            data.extend(idx.iter().map(|&j| r[j]));
        }
        DenseMatrix {
            rows: self.rows,
            cols: idx.len(),
            data,
        }
    }

    /// Copy with every column outside `keep` set to zero.
    pub fn zero_columns_except(&self, keep: &[bool]) -> DenseMatrix {
        let mut out = self.clone();
        for i in 0..self.rows {
            for (v, &k) in out.row_mut(i).iter_mut().zip(keep) {
                if !k {
                    *v = 0.0;
                }
            }
        }
        out
    }
}

/// Sparse row: `(column, value)` pairs with strictly increasing columns.
pub type SparseRow = Vec<(usize, f64)>;

/// Compressed-sparse-row feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl FeatureMatrix {
    /// Builds from sparse rows. Explicit zeros are dropped.
    pub fn from_rows(cols: usize, rows: &[SparseRow]) -> Result<Self> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for (i, row) in rows.iter().enumerate() {
            let mut last: Option<usize> = None;
            for &(j, v) in row {
                if j >= cols || last.is_some_and(|l| j <= l) {
                    return Err(MatrixError::Shape(format!(
                        "row {i}: column {j} out of order or out of range ({cols} columns)"
                    )));
                }
                last = Some(j);
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Ok(FeatureMatrix {
            rows: rows.len(),
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        let rows: Vec<SparseRow> = (0..m.rows())
            .map(|i| {
                m.row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(j, &v)| (j, v))
                    .collect()
            })
            .collect();
        FeatureMatrix::from_rows(m.cols(), &rows).expect("dense rows are well formed")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Fraction of entries that are zero.
    pub fn zero_fraction(&self) -> f64 {
        let total = self.rows * self.cols;
        if total == 0 {
            return 1.0;
        }
        1.0 - self.nnz() as f64 / total as f64
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (idx, vals) = self.row(i);
        idx.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (idx, vals) = self.row(i);
            let r = m.row_mut(i);
            for (&j, &v) in idx.iter().zip(vals) {
                r[j] = v;
            }
        }
        m
    }

    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        let rows: Vec<SparseRow> = idx
            .iter()
            .map(|&i| {
                let (c, v) = self.row(i);
                c.iter().copied().zip(v.iter().copied()).collect()
            })
            .collect();
        FeatureMatrix::from_rows(self.cols, &rows).expect("rows copied from a valid matrix")
    }

    pub fn write_triplets<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {} {}", self.rows, self.cols, self.nnz())?;
        for i in 0..self.rows {
            let (idx, vals) = self.row(i);
            for (&j, &v) in idx.iter().zip(vals) {
                writeln!(w, "{i} {j} {v:?}")?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_triplets<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let parse_err = |line: usize, message: String| MatrixError::Parse {
            line: line + 1,
            message,
        };
        let (_, header) = lines.next().ok_or_else(|| parse_err(0, "missing header".into()))?;
        let header = header?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(0, format!("bad header: {e}")))?;
        let [rows, cols, nnz] = dims[..] else {
            return Err(parse_err(0, "header must be `rows cols nnz`".into()));
        };

        let mut sparse: Vec<SparseRow> = vec![Vec::new(); rows];
        let mut count = 0usize;
        let mut last: Option<(usize, usize)> = None;
        for (n, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(i), Some(j), Some(v), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
                return Err(parse_err(n, "expected `row col value`".into()));
            };
            let i: usize = i.parse().map_err(|e| parse_err(n, format!("row: {e}")))?;
            let j: usize = j.parse().map_err(|e| parse_err(n, format!("col: {e}")))?;
            let v: f64 = v.parse().map_err(|e| parse_err(n, format!("value: {e}")))?;
            if i >= rows || j >= cols {
                return Err(parse_err(n, format!("entry ({i}, {j}) outside {rows}x{cols}")));
            }
            if last.is_some_and(|l| (i, j) <= l) {
                return Err(parse_err(n, "entries must be sorted by row then column".into()));
            }
            last = Some((i, j));
            sparse[i].push((j, v));
            count += 1;
        }
        if count != nnz {
            return Err(MatrixError::Shape(format!(
                "header declares {nnz} entries, found {count}"
            )));
        }
        FeatureMatrix::from_rows(cols, &sparse)
    }
}

/// Path of the column-name sidecar for a matrix file.
pub fn columns_path(matrix: &Path) -> PathBuf {
    let mut s = matrix.as_os_str().to_owned();
    s.push(".cols");
    PathBuf::from(s)
}

/// Path of the label sidecar for a matrix file.
pub fn labels_path(matrix: &Path) -> PathBuf {
    let mut s = matrix.as_os_str().to_owned();
    s.push(".labels");
    PathBuf::from(s)
}

/// Writes the matrix, its column names and (optionally) row labels.
pub fn save_matrix(path: &Path, m: &FeatureMatrix, names: &[String], labels: Option<&[bool]>) -> Result<()> {
    if names.len() != m.cols() {
        return Err(MatrixError::Shape(format!(
            "{} names for {} columns",
            names.len(),
            m.cols()
        )));
    }
    m.write_triplets(BufWriter::new(fs::File::create(path)?))?;
    let mut cols = String::new();
    for n in names {
        cols.push_str(n);
        cols.push('\n');
    }
    fs::write(columns_path(path), cols)?;
    if let Some(labels) = labels {
        if labels.len() != m.rows() {
            return Err(MatrixError::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                m.rows()
            )));
        }
        let text: String = labels.iter().map(|&l| if l { "1\n" } else { "0\n" }).collect();
        fs::write(labels_path(path), text)?;
    }
    Ok(())
}

/// Reads a matrix and its column names; labels are returned when the
/// sidecar exists.
pub fn load_matrix(path: &Path) -> Result<(FeatureMatrix, Vec<String>, Option<Vec<bool>>)> {
    let m = FeatureMatrix::read_triplets(BufReader::new(fs::File::open(path)?))?;
    let names: Vec<String> = fs::read_to_string(columns_path(path))?
        .lines()
        .map(str::to_string)
        .collect();
    if names.len() != m.cols() {
        return Err(MatrixError::Shape(format!(
            "{} names for {} columns",
            names.len(),
            m.cols()
        )));
    }
    let lp = labels_path(path);
    let labels = if lp.exists() {
        let labels = fs::read_to_string(&lp)?
            .lines()
            .enumerate()
            .map(|(n, l)| match l.trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(MatrixError::Parse {
                    line: n + 1,
                    message: format!("label must be 0 or 1, got {other:?}"),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        if labels.len() != m.rows() {
            return Err(MatrixError::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                m.rows()
            )));
        }
        Some(labels)
    } else {
        None
    };
    Ok((m, names, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn triplet_text_layout() {
        let m = FeatureMatrix::from_rows(3, &[vec![(0, 1.5), (2, -0.1)], vec![], vec![(1, 1e-300)]]).unwrap();
        let mut buf = Vec::new();
        m.write_triplets(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "3 3 3\n0 0 1.5\n0 2 -0.1\n2 1 1e-300\n"
        );
    }

    #[test]
    fn rejects_malformed_files() {
        assert!(FeatureMatrix::read_triplets("2 2 1\n0 0 1\n0 1 2\n".as_bytes()).is_err());
        assert!(FeatureMatrix::read_triplets("2 2 2\n1 0 1\n0 1 2\n".as_bytes()).is_err());
        assert!(FeatureMatrix::read_triplets("2 2 1\n5 0 1\n".as_bytes()).is_err());
        assert!(FeatureMatrix::read_triplets("2 2\n".as_bytes()).is_err());
    }

    #[test]
    fn sidecars_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        let m = FeatureMatrix::from_rows(2, &[vec![(1, 0.1 + 0.2)], vec![(0, 3.0)]]).unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        save_matrix(&path, &m, &names, Some(&[true, false])).unwrap();
        let (back, back_names, labels) = load_matrix(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back_names, names);
        assert_eq!(labels, Some(vec![true, false]));
    }

    proptest! {
        #[test]
        fn triplets_round_trip_bit_exact(
            cells in proptest::collection::vec((0usize..6, 0usize..9, any::<f64>()), 0..40)
        ) {
            let mut rows: Vec<SparseRow> = vec![Vec::new(); 6];
            for (i, j, v) in cells {
                if v.is_finite() && !rows[i].iter().any(|&(c, _)| c == j) {
                    rows[i].push((j, v));
                }
            }
            for r in &mut rows {
                r.sort_by_key(|&(c, _)| c);
            }
            let m = FeatureMatrix::from_rows(9, &rows).unwrap();
            let mut buf = Vec::new();
            m.write_triplets(&mut buf).unwrap();
            let back = FeatureMatrix::read_triplets(buf.as_slice()).unwrap();
            prop_assert_eq!(back.to_dense().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            m.to_dense().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
