//! Matrix-valued affine expressions in the decision vector.
//!
//! An [`Affine`] is `F_0 + Σ_i x_i F_i` where only the nonzero `F_i` are
//! stored. Expressions compose with constant matrices by left/right
//! multiplication, transposition and block assembly, so LMIs can be written
//! in the same shape as their mathematical statement.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub(crate) constant: DMatrix<f64>,
    pub(crate) terms: BTreeMap<usize, DMatrix<f64>>,
}

impl Affine {
    pub fn constant(m: DMatrix<f64>) -> Self {
        Affine { constant: m, terms: BTreeMap::new() }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(DMatrix::identity(n, n))
    }

    pub fn scalar(v: f64) -> Self {
        Self::constant(DMatrix::from_element(1, 1, v))
    }

    pub(crate) fn from_terms(rows: usize, cols: usize, terms: BTreeMap<usize, DMatrix<f64>>) -> Self {
        Affine { constant: DMatrix::zeros(rows, cols), terms }
    }

    pub fn rows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn cols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn constant_part(&self) -> &DMatrix<f64> {
        &self.constant
    }

    /// Coefficient matrices keyed by decision index.
    pub fn terms(&self) -> impl Iterator<Item = (usize, &DMatrix<f64>)> {
        self.terms.iter().map(|(k, v)| (*k, v))
    }

    /// Value at the decision vector `x`.
    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (k, f) in &self.terms {
            if x[*k] != 0.0 {
                out += f * x[*k];
            }
        }
        out
    }

    /// Scalar value of a 1x1 expression.
    pub fn eval_scalar(&self, x: &DVector<f64>) -> f64 {
        self.eval(x)[(0, 0)]
    }

    pub fn transpose(&self) -> Affine {
        Affine {
            constant: self.constant.transpose(),
            terms: self.terms.iter().map(|(k, f)| (*k, f.transpose())).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Affine {
        Affine { constant: &self.constant * s, terms: self.terms.iter().map(|(k, f)| (*k, f * s)).collect() }
    }

    /// `m · self`.
    pub fn left_mul(&self, m: &DMatrix<f64>) -> Affine {
        assert_eq!(m.ncols(), self.rows(), "left_mul: inner dimensions differ");
        Affine { constant: m * &self.constant, terms: self.terms.iter().map(|(k, f)| (*k, m * f)).collect() }
    }

    /// `self · m`.
    pub fn right_mul(&self, m: &DMatrix<f64>) -> Affine {
        assert_eq!(self.cols(), m.nrows(), "right_mul: inner dimensions differ");
        Affine { constant: &self.constant * m, terms: self.terms.iter().map(|(k, f)| (*k, f * m)).collect() }
    }

    /// Scalar trace of a square expression.
    pub fn trace(&self) -> Affine {
        Affine {
            constant: DMatrix::from_element(1, 1, self.constant.trace()),
            terms: self.terms.iter().map(|(k, f)| (*k, DMatrix::from_element(1, 1, f.trace()))).collect(),
        }
    }

    /// Assemble a block matrix. All blocks in a row share a row count and all
    /// blocks in a column share a column count.
    pub fn block(grid: &[Vec<Affine>]) -> Result<Affine> {
        if grid.is_empty() || grid[0].is_empty() {
            return Err(Error::dim("empty block grid"));
        }
        let rows: Vec<usize> = grid.iter().map(|r| r[0].rows()).collect();
        let cols: Vec<usize> = grid[0].iter().map(|b| b.cols()).collect();
        let (nr, nc) = (rows.iter().sum(), cols.iter().sum());
        let mut out = Affine::zeros(nr, nc);
        let mut i = 0;
        for (bi, row) in grid.iter().enumerate() {
            if row.len() != cols.len() {
                return Err(Error::dim("ragged block grid"));
            }
            let mut j = 0;
            for (bj, b) in row.iter().enumerate() {
                if b.rows() != rows[bi] || b.cols() != cols[bj] {
                    return Err(Error::dim(format!(
                        "block ({bi},{bj}) is {}x{}, expected {}x{}",
                        b.rows(),
                        b.cols(),
                        rows[bi],
                        cols[bj]
                    )));
                }
                out.constant.view_mut((i, j), (b.rows(), b.cols())).copy_from(&b.constant);
                for (k, f) in &b.terms {
                    let slot = out.terms.entry(*k).or_insert_with(|| DMatrix::zeros(nr, nc));
                    slot.view_mut((i, j), (b.rows(), b.cols())).copy_from(f);
                }
                j += cols[bj];
            }
            i += rows[bi];
        }
        Ok(out)
    }

    /// Symmetric block matrix from its upper triangle (`upper[i]` holds the
    /// blocks `(i, i..)`); lower blocks are filled by transposition.
    pub fn sym_block(upper: &[Vec<Affine>]) -> Result<Affine> {
        let n = upper.len();
        let mut grid: Vec<Vec<Affine>> = Vec::with_capacity(n);
        for i in 0..n {
            if upper[i].len() != n - i {
                return Err(Error::dim(format!(
                    "row {i} of symmetric block grid has {} blocks, expected {}",
                    upper[i].len(),
                    n - i
                )));
            }
            let mut row = Vec::with_capacity(n);
            for j in 0..n {
                if j < i {
                    row.push(upper[j][i - j].transpose());
                } else {
                    row.push(upper[i][j - i].clone());
                }
            }
            grid.push(row);
        }
        Self::block(&grid)
    }

    /// Horizontal concatenation.
    pub fn hstack(parts: &[Affine]) -> Result<Affine> {
        Self::block(&[parts.to_vec()])
    }

    /// Vertical concatenation.
    pub fn vstack(parts: &[Affine]) -> Result<Affine> {
        let grid: Vec<Vec<Affine>> = parts.iter().map(|p| vec![p.clone()]).collect();
        Self::block(&grid)
    }

    /// Block-diagonal concatenation.
    pub fn block_diag(parts: &[Affine]) -> Result<Affine> {
        let n = parts.len();
        let grid: Vec<Vec<Affine>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { parts[i].clone() } else { Affine::zeros(parts[i].rows(), parts[j].cols()) })
                    .collect()
            })
            .collect();
        Self::block(&grid)
    }

    fn combine(&self, other: &Affine, sign: f64) -> Affine {
        assert_eq!(
            (self.rows(), self.cols()),
            (other.rows(), other.cols()),
            "affine expressions have different shapes"
        );
        let mut out = self.clone();
        out.constant += &other.constant * sign;
        for (k, f) in &other.terms {
            match out.terms.get_mut(k) {
                Some(slot) => *slot += f * sign,
                None => {
                    out.terms.insert(*k, f * sign);
                }
            }
        }
        out
    }
}

impl Add<&Affine> for &Affine {
    type Output = Affine;
    fn add(self, rhs: &Affine) -> Affine {
        self.combine(rhs, 1.0)
    }
}

impl Add<Affine> for Affine {
    type Output = Affine;
    fn add(self, rhs: Affine) -> Affine {
        self.combine(&rhs, 1.0)
    }
}

impl Sub<&Affine> for &Affine {
    type Output = Affine;
    fn sub(self, rhs: &Affine) -> Affine {
        self.combine(rhs, -1.0)
    }
}

impl Sub<Affine> for Affine {
    type Output = Affine;
    fn sub(self, rhs: Affine) -> Affine {
        self.combine(&rhs, -1.0)
    }
}

impl Neg for &Affine {
    type Output = Affine;
    fn neg(self) -> Affine {
        self.scale(-1.0)
    }
}

impl Neg for Affine {
    type Output = Affine;
    fn neg(self) -> Affine {
        self.scale(-1.0)
    }
}

impl Mul<&Affine> for &DMatrix<f64> {
    type Output = Affine;
    fn mul(self, rhs: &Affine) -> Affine {
        rhs.left_mul(self)
    }
}

impl Mul<&DMatrix<f64>> for &Affine {
    type Output = Affine;
    fn mul(self, rhs: &DMatrix<f64>) -> Affine {
        self.right_mul(rhs)
    }
}

impl Mul<f64> for &Affine {
    type Output = Affine;
    fn mul(self, rhs: f64) -> Affine {
        self.scale(rhs)
    }
}

impl From<DMatrix<f64>> for Affine {
    fn from(m: DMatrix<f64>) -> Self {
        Affine::constant(m)
    }
}

impl From<&DMatrix<f64>> for Affine {
    fn from(m: &DMatrix<f64>) -> Self {
        Affine::constant(m.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(rows: usize, cols: usize, index: usize, at: (usize, usize)) -> Affine {
        let mut f = DMatrix::zeros(rows, cols);
        f[at] = 1.0;
        let mut terms = BTreeMap::new();
        terms.insert(index, f);
        Affine::from_terms(rows, cols, terms)
    }

    #[test]
    fn arithmetic_matches_evaluation() {
        let x = var(2, 2, 0, (0, 1));
        let y = var(2, 2, 1, (1, 1));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let e = &(&m * &x) + &(&y * &m);
        let e = &e - &Affine::identity(2);
        let xv = DVector::from_vec(vec![0.5, -2.0]);
        let xm = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.0, 0.0]);
        let ym = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -2.0]);
        let expected = &m * xm + ym * &m - DMatrix::identity(2, 2);
        assert_eq!(e.eval(&xv), expected);
        assert_eq!(e.transpose().eval(&xv), expected.transpose());
        assert_eq!(e.trace().eval_scalar(&xv), expected.trace());
    }

    #[test]
    fn sym_block_fills_lower_triangle() {
        let x = var(1, 2, 0, (0, 1));
        let blk = Affine::sym_block(&[vec![Affine::identity(1), x.clone()], vec![Affine::identity(2)]]).unwrap();
        let v = blk.eval(&DVector::from_vec(vec![3.0]));
        assert_eq!(v[(0, 2)], 3.0);
        assert_eq!(v[(2, 0)], 3.0);
        assert!(Affine::block(&[vec![Affine::zeros(1, 1)], vec![Affine::zeros(2, 2)]]).is_err());
    }
}
