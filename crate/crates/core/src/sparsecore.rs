//! Sparse SPD matrix storage, Matrix Market ingestion, l2-norm symmetric
//! prescaling, and the squeeze into an emulated 16-bit format.
//!
//! Matrices hold the lower triangle only, in compressed sparse column form
//! with the diagonal entry first in every column.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::halffloat::{self, FormatParams, HalfWord, RoundStatus};

#[derive(Debug, thiserror::Error)]
pub enum MatrixError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("matrix must be declared `coordinate real symmetric`, got `{0}`")]
    NotSymmetric(String),
    #[error("diagonal entry {index} is missing")]
    MissingDiagonal { index: usize },
    #[error("line {line}: diagonal entry {index} is not positive ({value})")]
    NonPositiveDiagonal { index: usize, value: f64, line: usize },
    #[error("row {index} is structurally zero; matrix is singular")]
    ZeroRow { index: usize },
    #[error("diagonal entry {index} flushed to zero at half precision; matrix numerically singular")]
    DiagonalFlushed { index: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Lower-triangular CSC storage of a symmetric positive definite matrix in
/// working precision. Row indices are strictly increasing within a column and
/// the diagonal entry is present (and first) in every column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSpd {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Diagonal of the symmetric scaling matrix S; all entries positive, finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleVector {
    pub s: Vec<f64>,
}

impl ScaleVector {
    pub fn ones(n: usize) -> Self {
        ScaleVector { s: vec![1.0; n] }
    }
}

/// Emulated 16-bit storage format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Half16Format {
    Fp16,
    Bf16,
}

impl Half16Format {
    pub fn params(self) -> FormatParams {
        match self {
            Half16Format::Fp16 => FormatParams::FP16,
            Half16Format::Bf16 => FormatParams::BF16,
        }
    }

    pub fn encode(self, x: f64) -> (u16, RoundStatus) {
        match self {
            Half16Format::Fp16 => {
                let (w, st) = halffloat::encode(x);
                (w.bits(), st)
            }
            Half16Format::Bf16 => halffloat::encode_bf16(x),
        }
    }

    pub fn decode(self, bits: u16) -> f64 {
        match self {
            Half16Format::Fp16 => halffloat::decode(HalfWord::from_bits(bits)),
            Half16Format::Bf16 => halffloat::decode_bf16(bits),
        }
    }
}

/// A scaled-and-squeezed matrix: same lower-triangular CSC structure as
/// [`SparseSpd`] with 16-bit payloads, plus the count of entries flushed to
/// zero (and removed structurally) during the squeeze.
#[derive(Debug, Clone)]
pub struct HalfMatrix {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<HalfWord>,
    pub n_dropped: usize,
    pub format: Half16Format,
}

impl HalfMatrix {
    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn value(&self, idx: usize) -> f64 {
        self.format.decode(self.values[idx].bits())
    }
}

/// Read access to a lower-triangular sparsity structure.
pub trait LowerStructure {
    fn dim(&self) -> usize;
    fn col_ptr(&self) -> &[usize];
    fn row_idx(&self) -> &[usize];
}

impl LowerStructure for SparseSpd {
    fn dim(&self) -> usize {
        self.n
    }
    fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }
    fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }
}

impl LowerStructure for HalfMatrix {
    fn dim(&self) -> usize {
        self.n
    }
    fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }
    fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }
}

impl SparseSpd {
    /// Assemble from (row, col, value) triplets of the symmetric matrix.
    /// Upper-triangle entries are mirrored onto the lower triangle and
    /// duplicates are summed. Explicit zeros are retained structurally.
    pub fn from_triplets(
        n: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<SparseSpd, MatrixError> {
        let mut by_col: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); n];
        for (i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(MatrixError::Invalid(format!(
                    "entry ({i},{j}) out of bounds for dimension {n}"
                )));
            }
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            *by_col[c].entry(r).or_insert(0.0) += v;
        }
        Self::from_column_maps(n, by_col, None)
    }

    fn from_column_maps(
        n: usize,
        by_col: Vec<std::collections::BTreeMap<usize, f64>>,
        diag_lines: Option<&[usize]>,
    ) -> Result<SparseSpd, MatrixError> {
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for (j, col) in by_col.iter().enumerate() {
            match col.get(&j) {
                None => return Err(MatrixError::MissingDiagonal { index: j + 1 }),
                Some(&d) if d <= 0.0 => {
                    return Err(MatrixError::NonPositiveDiagonal {
                        index: j + 1,
                        value: d,
                        line: diag_lines.map_or(0, |l| l[j]),
                    })
                }
                Some(_) => {}
            }
            for (&i, &v) in col {
                row_idx.push(i);
                values.push(v);
            }
            col_ptr.push(row_idx.len());
        }
        Ok(SparseSpd {
            n,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored (lower-triangular) entries.
    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn col_range(&self, j: usize) -> std::ops::Range<usize> {
        self.col_ptr[j]..self.col_ptr[j + 1]
    }

    pub fn entry(&self, idx: usize) -> (usize, f64) {
        (self.row_idx[idx], self.values[idx])
    }

    /// Stored value at (i, j) with i >= j, if present.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let r = self.col_range(j);
        self.row_idx[r.clone()]
            .binary_search(&i)
            .ok()
            .map(|k| self.values[r.start + k])
    }

    /// y = A x with the full symmetric matrix.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for j in 0..self.n {
            for idx in self.col_range(j) {
                let i = self.row_idx[idx];
                let v = self.values[idx];
                y[i] += v * x[j];
                if i != j {
                    y[j] += v * x[i];
                }
            }
        }
    }

    /// Infinity norm of the full symmetric matrix (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        let mut row_sums = vec![0.0f64; self.n];
        for j in 0..self.n {
            for idx in self.col_range(j) {
                let i = self.row_idx[idx];
                let v = self.values[idx].abs();
                row_sums[i] += v;
                if i != j {
                    row_sums[j] += v;
                }
            }
        }
        row_sums.into_iter().fold(0.0, f64::max)
    }

    /// Dense symmetric copy, for small-matrix oracles.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.n]; self.n];
        for j in 0..self.n {
            for idx in self.col_range(j) {
                let i = self.row_idx[idx];
                a[i][j] = self.values[idx];
                a[j][i] = self.values[idx];
            }
        }
        a
    }
}

/// Parse a Matrix Market coordinate file holding a real symmetric matrix.
///
/// The header must declare `matrix coordinate real symmetric` (the `integer`
/// field type is accepted and widened). Indices are 1-based; entries above
/// the diagonal are mirrored; duplicates are summed; explicit zeros are kept
/// structurally. Fails if any diagonal entry is absent or not positive.
pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<SparseSpd, MatrixError> {
    let file = File::open(path)?;
    parse_matrix_market(BufReader::new(file))
}

pub fn parse_matrix_market(reader: impl BufRead) -> Result<SparseSpd, MatrixError> {
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| MatrixError::Parse {
            line: 1,
            msg: "empty file".into(),
        })
        .and_then(|(k, r)| r.map(|s| (k, s)).map_err(MatrixError::from))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.first() != Some(&"%%MatrixMarket") {
        return Err(MatrixError::Parse {
            line: 1,
            msg: "missing %%MatrixMarket header".into(),
        });
    }
    let object = fields.get(1).copied().unwrap_or("");
    let format = fields.get(2).copied().unwrap_or("");
    let field = fields.get(3).copied().unwrap_or("");
    let symmetry = fields.get(4).copied().unwrap_or("");
    if object != "matrix" || format != "coordinate" {
        return Err(MatrixError::Parse {
            line: 1,
            msg: format!("unsupported header `{header}`; need `matrix coordinate`"),
        });
    }
    if field != "real" && field != "integer" {
        return Err(MatrixError::Parse {
            line: 1,
            msg: format!("unsupported field type `{field}`; need `real`"),
        });
    }
    if symmetry != "symmetric" {
        return Err(MatrixError::NotSymmetric(symmetry.to_string()));
    }

    // Size line: first non-comment, non-blank line.
    let mut size: Option<(usize, usize, usize)> = None;
    let mut size_line = 0;
    for (k, line) in lines.by_ref() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let mut it = t.split_whitespace();
        let parse = |s: Option<&str>, what: &str| -> Result<usize, MatrixError> {
            s.ok_or_else(|| MatrixError::Parse {
                line: k + 1,
                msg: format!("missing {what}"),
            })?
            .parse()
            .map_err(|_| MatrixError::Parse {
                line: k + 1,
                msg: format!("cannot parse {what}"),
            })
        };
        let m = parse(it.next(), "row count")?;
        let n = parse(it.next(), "column count")?;
        let nnz = parse(it.next(), "entry count")?;
        if m != n {
            return Err(MatrixError::Parse {
                line: k + 1,
                msg: format!("matrix must be square, got {m}x{n}"),
            });
        }
        size = Some((n, nnz, k + 1));
        size_line = k + 1;
        break;
    }
    let (n, nnz, _) = size.ok_or(MatrixError::Parse {
        line: size_line.max(1),
        msg: "missing size line".into(),
    })?;

    let mut by_col: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); n];
    let mut diag_lines = vec![0usize; n];
    let mut seen = 0usize;
    for (k, line) in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let mut it = t.split_whitespace();
        let bad = |msg: &str| MatrixError::Parse {
            line: k + 1,
            msg: msg.into(),
        };
        let i: usize = it
            .next()
            .ok_or_else(|| bad("missing row index"))?
            .parse()
            .map_err(|_| bad("cannot parse row index"))?;
        let j: usize = it
            .next()
            .ok_or_else(|| bad("missing column index"))?
            .parse()
            .map_err(|_| bad("cannot parse column index"))?;
        let v: f64 = it
            .next()
            .ok_or_else(|| bad("missing value"))?
            .parse()
            .map_err(|_| bad("cannot parse value"))?;
        if i < 1 || i > n || j < 1 || j > n {
            return Err(bad(&format!("index ({i},{j}) out of range 1..={n}")));
        }
        let (r, c) = if i >= j { (i - 1, j - 1) } else { (j - 1, i - 1) };
        if r == c {
            diag_lines[r] = k + 1;
        }
        *by_col[c].entry(r).or_insert(0.0) += v;
        seen += 1;
    }
    if seen != nnz {
        return Err(MatrixError::Invalid(format!(
            "size line promised {nnz} entries, file has {seen}"
        )));
    }
    SparseSpd::from_column_maps(n, by_col, Some(&diag_lines))
}

/// Symmetric l2-norm scaling: s_i = sqrt of the 2-norm of the full symmetric
/// row i, and a_ij is replaced by a_ij / (s_i s_j). Every entry of the scaled
/// matrix has absolute value at most 1 (up to roundoff).
pub fn scale_l2(a: &SparseSpd) -> Result<(ScaleVector, SparseSpd), MatrixError> {
    let n = a.n;
    let mut sq = vec![0.0f64; n];
    for j in 0..n {
        for idx in a.col_range(j) {
            let i = a.row_idx[idx];
            let v = a.values[idx];
            sq[i] += v * v;
            if i != j {
                sq[j] += v * v;
            }
        }
    }
    let mut s = vec![0.0f64; n];
    for i in 0..n {
        if sq[i] == 0.0 {
            return Err(MatrixError::ZeroRow { index: i + 1 });
        }
        // s_i = (row 2-norm)^{1/2}, so S^{-1} A S^{-1} has entries <= 1.
        s[i] = sq[i].sqrt().sqrt();
    }
    let mut scaled = a.clone();
    for j in 0..n {
        for idx in scaled.col_ptr[j]..scaled.col_ptr[j + 1] {
            let i = scaled.row_idx[idx];
            scaled.values[idx] /= s[i] * s[j];
        }
    }
    Ok((ScaleVector { s }, scaled))
}

/// Convert a scaled matrix to an emulated 16-bit format, flushing entries
/// with |value| below `flush_tol` to zero (structural removal).
pub fn squeeze(a_hat: &SparseSpd, flush_tol: f64) -> Result<HalfMatrix, MatrixError> {
    squeeze_as(a_hat, flush_tol, Half16Format::Fp16)
}

pub fn squeeze_as(
    a_hat: &SparseSpd,
    flush_tol: f64,
    format: Half16Format,
) -> Result<HalfMatrix, MatrixError> {
    let n = a_hat.n;
    let mut col_ptr = Vec::with_capacity(n + 1);
    let mut row_idx = Vec::new();
    let mut values = Vec::new();
    let mut n_dropped = 0usize;
    col_ptr.push(0);
    for j in 0..n {
        for idx in a_hat.col_range(j) {
            let i = a_hat.row_idx[idx];
            let v = a_hat.values[idx];
            if v.abs() < flush_tol && v != 0.0 {
                if i == j {
                    return Err(MatrixError::DiagonalFlushed { index: j + 1 });
                }
                n_dropped += 1;
                continue;
            }
            let (bits, status) = format.encode(v);
            debug_assert!(
                status != RoundStatus::Overflow,
                "squeeze input must be prescaled to |v| <= 1"
            );
            if status == RoundStatus::UnderflowFlushed {
                // Below the format's subnormal range even though above the
                // flush tolerance (possible only for tolerances below
                // x_min_subnormal); treat as a flush.
                if i == j {
                    return Err(MatrixError::DiagonalFlushed { index: j + 1 });
                }
                n_dropped += 1;
                continue;
            }
            row_idx.push(i);
            values.push(HalfWord::from_bits(bits));
        }
        col_ptr.push(row_idx.len());
    }
    Ok(HalfMatrix {
        n,
        col_ptr,
        row_idx,
        values,
        n_dropped,
        format,
    })
}

/// b = A * ones, computed in working precision on the unscaled matrix, so
/// that iterative refinement targets the true system.
pub fn make_rhs(a: &SparseSpd) -> Vec<f64> {
    let ones = vec![1.0; a.n];
    let mut b = vec![0.0; a.n];
    a.matvec(&ones, &mut b);
    b
}
