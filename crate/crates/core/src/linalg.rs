//! Dense matrix helpers, the matrix exponential and the block-exponential
//! integrals that every kernel inner product reduces to.
//!
//! For a square `A`, an output row `C` and a horizon `h`, the integrals
//!
//! ```text
//!     Wg(h) = ∫_0^h e^{-Aᵀτ} CᵀC e^{-Aτ} dτ
//!     Wc(h) = ∫_0^h e^{-Aᵀτ} AᵀCᵀC e^{-Aτ} dτ
//! ```
//!
//! are read off the upper blocks of `exp([[Aᵀ, Q], [0, -A]] h)` with
//! `Q = CᵀC` or `Q = AᵀCᵀC`: the result is `F22ᵀ F12`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Builds a matrix from row slices, rejecting ragged or non-finite input.
pub fn matrix_from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.as_ref().len());
    let mut data = Vec::with_capacity(nrows * ncols);
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != ncols {
            return Err(Error::Dimension(format!(
                "row {i} has {} entries, expected {ncols}",
                row.len()
            )));
        }
        data.extend_from_slice(row);
    }
    let m = Matrix::from_row_slice(nrows, ncols, &data);
    ensure_finite(&m, "matrix")?;
    Ok(m)
}

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

fn one_norm(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

// Padé coefficients and norm thresholds from Higham (2005), "The scaling and
// squaring method for the matrix exponential revisited".
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [f64; 4] = [
    1.495585217958292e-2,
    2.53939833006323e-1,
    9.504178996162932e-1,
    2.097847961257068,
];
const THETA13: f64 = 5.371920351148152;

/// Odd/even split `(U, V)` of a low-order Padé approximant.
fn pade_low(a: &Matrix, b: &[f64]) -> (Matrix, Matrix) {
    let n = a.nrows();
    let ident = Matrix::identity(n, n);
    let a2 = a * a;
    let mut u_inner = &ident * b[1];
    let mut v = &ident * b[0];
    let mut power = ident;
    for k in 1..b.len() / 2 {
        power = &power * &a2;
        u_inner += &power * b[2 * k + 1];
        v += &power * b[2 * k];
    }
    (a * u_inner, v)
}

fn pade13(a: &Matrix) -> (Matrix, Matrix) {
    let b = &PADE13;
    let n = a.nrows();
    let ident = Matrix::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_hi = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u_inner = &a6 * u_hi + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1];
    let u = a * u_inner;
    let v_hi = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * v_hi + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];
    (u, v)
}

/// Matrix exponential by scaling and squaring with a Padé approximant
/// (degree 13 once the scaled norm exceeds the low-order thresholds).
pub fn mat_exp(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "matrix exponential needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    ensure_finite(m, "matrix exponential argument")?;
    let n = m.nrows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }

    let norm = one_norm(m);
    let (u, v, squarings) = if norm <= THETA[0] {
        let (u, v) = pade_low(m, &PADE3);
        (u, v, 0)
    } else if norm <= THETA[1] {
        let (u, v) = pade_low(m, &PADE5);
        (u, v, 0)
    } else if norm <= THETA[2] {
        let (u, v) = pade_low(m, &PADE7);
        (u, v, 0)
    } else if norm <= THETA[3] {
        let (u, v) = pade_low(m, &PADE9);
        (u, v, 0)
    } else {
        let s = (norm / THETA13).log2().ceil().max(0.0) as i32;
        let scaled = m * 2f64.powi(-s);
        let (u, v) = pade13(&scaled);
        (u, v, s)
    };

    let numer = &v + &u;
    let denom = v - u;
    let mut result = denom
        .lu()
        .solve(&numer)
        .ok_or_else(|| Error::Domain("Padé denominator is singular".into()))?;
    for _ in 0..squarings {
        result = &result * &result;
    }
    ensure_finite(&result, "matrix exponential result")?;
    Ok(result)
}

/// Upper blocks of `exp([[Aᵀ, Q], [0, -A]] h)`.
#[derive(Debug, Clone)]
pub struct GramIntegralBlocks {
    /// `e^{Aᵀh}`.
    pub f11: Matrix,
    pub f12: Matrix,
    /// `e^{-Ah}`.
    pub f22: Matrix,
    pub h: f64,
}

impl GramIntegralBlocks {
    pub fn compute(a: &Matrix, top_right: &Matrix, h: f64) -> Result<Self> {
        let generator = block_generator(a, top_right)?;
        Self::from_generator(&generator, h)
    }

    pub(crate) fn from_generator(generator: &Matrix, h: f64) -> Result<Self> {
        if !(h >= 0.0) || !h.is_finite() {
            return Err(Error::Domain(format!(
                "integration horizon must be finite and non-negative, got {h}"
            )));
        }
        let e = mat_exp(&(generator * h))?;
        Ok(Self::split(&e, h))
    }

    pub(crate) fn split(e: &Matrix, h: f64) -> Self {
        let n = e.nrows() / 2;
        GramIntegralBlocks {
            f11: e.view((0, 0), (n, n)).into_owned(),
            f12: e.view((0, n), (n, n)).into_owned(),
            f22: e.view((n, n), (n, n)).into_owned(),
            h,
        }
    }

    /// `F22ᵀ F12`, the integral of the weighted integrand over `[0, h]`.
    pub fn integral(&self) -> Matrix {
        self.f22.transpose() * &self.f12
    }
}

/// `[[Aᵀ, Q], [0, -A]]`.
pub(crate) fn block_generator(a: &Matrix, top_right: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    if !a.is_square() || top_right.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "block generator needs A n×n and Q n×n, got A {:?} and Q {:?}",
            a.shape(),
            top_right.shape()
        )));
    }
    let mut g = Matrix::zeros(2 * n, 2 * n);
    g.view_mut((0, 0), (n, n)).copy_from(&a.transpose());
    g.view_mut((0, n), (n, n)).copy_from(top_right);
    g.view_mut((n, n), (n, n)).copy_from(&(-a));
    Ok(g)
}

fn check_output_row(a: &Matrix, c: &Matrix) -> Result<()> {
    if !a.is_square() || c.nrows() != 1 || c.ncols() != a.nrows() {
        return Err(Error::Dimension(format!(
            "expected A n×n and C 1×n, got A {:?} and C {:?}",
            a.shape(),
            c.shape()
        )));
    }
    Ok(())
}

/// `∫_0^h e^{-Aᵀτ} CᵀC e^{-Aτ} dτ`, symmetrized.
pub fn van_loan_gramian(a: &Matrix, c: &Matrix, h: f64) -> Result<Matrix> {
    check_output_row(a, c)?;
    let q = c.transpose() * c;
    let blocks = GramIntegralBlocks::compute(a, &q, h)?;
    Ok(symmetrize(&blocks.integral()))
}

/// `∫_0^h e^{-Aᵀτ} AᵀCᵀC e^{-Aτ} dτ`. Not symmetric in general.
pub fn van_loan_cross(a: &Matrix, c: &Matrix, h: f64) -> Result<Matrix> {
    check_output_row(a, c)?;
    let q = a.transpose() * c.transpose() * c;
    let blocks = GramIntegralBlocks::compute(a, &q, h)?;
    Ok(blocks.integral())
}

/// Row-major dense matrix for tall constraint blocks.
///
/// Grid constraints can run to millions of rows with only a handful of
/// columns, so products are computed row by row and the normal matrix is
/// accumulated in fixed-size chunks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct DenseRows {
    cols: usize,
    data: Vec<f64>,
}

const GRAM_CHUNK_ROWS: usize = 2048;

impl DenseRows {
    pub fn new(cols: usize) -> Self {
        DenseRows { cols, data: Vec::new() }
    }

    pub fn with_capacity(cols: usize, rows: usize) -> Self {
        DenseRows {
            cols,
            data: Vec::with_capacity(cols * rows),
        }
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        let mut rows = DenseRows::with_capacity(m.ncols(), m.nrows());
        for r in m.row_iter() {
            rows.data.extend(r.iter());
        }
        rows
    }

    pub fn nrows(&self) -> usize {
        self.data.len().checked_div(self.cols).unwrap_or(0)
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        self.data.chunks_exact(self.cols.max(1))
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::Dimension(format!(
                "row has {} entries, expected {}",
                row.len(),
                self.cols
            )));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn append(&mut self, other: &DenseRows) -> Result<()> {
        if other.cols != self.cols {
            return Err(Error::Dimension(format!(
                "cannot stack {} columns onto {}",
                other.cols, self.cols
            )));
        }
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    /// Keeps only the rows whose index is listed, in the given order.
    pub fn select_rows(&self, order: &[usize]) -> DenseRows {
        let mut out = DenseRows::with_capacity(self.cols, order.len());
        for &i in order {
            out.data.extend_from_slice(self.row(i));
        }
        out
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_row_slice(self.nrows(), self.cols, &self.data)
    }

    /// `A x`.
    pub fn mul_vec(&self, x: &Vector) -> Vector {
        debug_assert_eq!(x.len(), self.cols);
        Vector::from_iterator(
            self.nrows(),
            self.rows()
                .map(|r| r.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>()),
        )
    }

    /// `Aᵀ z`.
    pub fn tr_mul_vec(&self, z: &Vector) -> Vector {
        debug_assert_eq!(z.len(), self.nrows());
        let mut out = Vector::zeros(self.cols);
        for (r, &zi) in self.rows().zip(z.iter()) {
            if zi != 0.0 {
                for (o, a) in out.iter_mut().zip(r) {
                    *o += zi * a;
                }
            }
        }
        out
    }

    /// `Aᵀ diag(d) A` with non-negative weights `d`.
    pub fn weighted_gram(&self, d: &Vector) -> Matrix {
        debug_assert_eq!(d.len(), self.nrows());
        let n = self.cols;
        let mut out = Matrix::zeros(n, n);
        let mut chunk = Matrix::zeros(0, n);
        for (start, block) in self.data.chunks(GRAM_CHUNK_ROWS * n.max(1)).enumerate() {
            let rows = block.len() / n.max(1);
            if chunk.nrows() != rows {
                chunk = Matrix::zeros(rows, n);
            }
            let offset = start * GRAM_CHUNK_ROWS;
            for i in 0..rows {
                let w = d[offset + i].max(0.0).sqrt();
                for j in 0..n {
                    chunk[(i, j)] = w * block[i * n + j];
                }
            }
            out.gemm_tr(1.0, &chunk, &chunk, 1.0);
        }
        symmetrize(&out)
    }
}

impl TryFrom<Vec<Vec<f64>>> for DenseRows {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut out = DenseRows::with_capacity(cols, rows.len());
        for r in &rows {
            out.push_row(r)?;
        }
        Ok(out)
    }
}

impl From<DenseRows> for Vec<Vec<f64>> {
    fn from(rows: DenseRows) -> Self {
        rows.rows().map(<[f64]>::to_vec).collect()
    }
}
