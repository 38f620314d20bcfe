//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Largest absolute difference between `m` and its transpose.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(f64::NEG_INFINITY)
}

/// Symmetric square root of a positive semidefinite matrix. Small negative
/// eigenvalues (round-off) are clipped to zero.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    let eig = symmetrize(m).symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let mut d = eig.eigenvalues.clone();
    for v in d.iter_mut() {
        if *v < -1e-9 * scale.max(1e-300) {
            return Err(Error::invalid(format!("matrix is not positive semidefinite (eigenvalue {v:.3e})")));
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&d) * q.transpose())
}

/// Inverse of the symmetric square root of a positive definite matrix.
pub fn inv_sqrt_pd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = symmetrize(m).symmetric_eigen();
    let mut d = eig.eigenvalues.clone();
    for v in d.iter_mut() {
        if *v <= 0.0 {
            return Err(Error::invalid("matrix is not positive definite"));
        }
        *v = 1.0 / v.sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&d) * q.transpose())
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn inv_pd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = symmetrize(m).cholesky().ok_or_else(|| Error::numerical("matrix is not positive definite"))?;
    Ok(symmetrize(&chol.inverse()))
}

pub fn inv(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone().try_inverse().ok_or_else(|| Error::numerical("matrix is singular"))
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky_lower(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    symmetrize(m).cholesky().map(|c| c.l())
}

/// Block-diagonal concatenation.
pub fn block_diag(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let r: usize = parts.iter().map(|p| p.nrows()).sum();
    let c: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::zeros(r, c);
    let (mut i, mut j) = (0, 0);
    for p in parts {
        out.view_mut((i, j), (p.nrows(), p.ncols())).copy_from(*p);
        i += p.nrows();
        j += p.ncols();
    }
    out
}

/// Assemble a block matrix from a grid of equally-aligned blocks.
pub fn assemble(grid: &[Vec<DMatrix<f64>>]) -> Result<DMatrix<f64>> {
    let rows: Vec<usize> = grid.iter().map(|row| row[0].nrows()).collect();
    let cols: Vec<usize> = grid[0].iter().map(|b| b.ncols()).collect();
    let mut out = DMatrix::zeros(rows.iter().sum(), cols.iter().sum());
    let mut i = 0;
    for (bi, row) in grid.iter().enumerate() {
        if row.len() != cols.len() {
            return Err(Error::dim("ragged block grid"));
        }
        let mut j = 0;
        for (bj, b) in row.iter().enumerate() {
            if b.nrows() != rows[bi] || b.ncols() != cols[bj] {
                return Err(Error::dim(format!(
                    "block ({bi},{bj}) is {}x{}, expected {}x{}",
                    b.nrows(),
                    b.ncols(),
                    rows[bi],
                    cols[bj]
                )));
            }
            out.view_mut((i, j), (b.nrows(), b.ncols())).copy_from(b);
            j += cols[bj];
        }
        i += rows[bi];
    }
    Ok(out)
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues().iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Solve the discrete Lyapunov equation X = A X Aᵀ + Q for Schur-stable A.
///
/// Small systems use the Kronecker form with one step of iterative
/// refinement; larger ones use squared Smith iterations.
pub fn dlyap(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || q.nrows() != n || q.ncols() != n {
        return Err(Error::dim(format!("dlyap: A is {}x{}, Q is {}x{}", a.nrows(), a.ncols(), q.nrows(), q.ncols())));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let rho = spectral_radius(a);
    if rho >= 1.0 {
        return Err(Error::numerical(format!("dlyap: A is not Schur stable (spectral radius {rho:.6})")));
    }
    let x = if n <= 20 { dlyap_kron(a, q)? } else { dlyap_smith(a, q) };
    Ok(x)
}

fn dlyap_kron(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let k = DMatrix::identity(n * n, n * n) - a.kronecker(a);
    let lu = k.lu();
    let rhs = DVector::from_column_slice(q.as_slice());
    let mut v = lu.solve(&rhs).ok_or_else(|| Error::numerical("dlyap: singular Kronecker system"))?;
    let resid = &rhs - (&v - a.kronecker(a) * &v);
    if let Some(corr) = lu.solve(&resid) {
        v += corr;
    }
    let x = DMatrix::from_column_slice(n, n, v.as_slice());
    Ok(if asymmetry(q) == 0.0 { symmetrize(&x) } else { x })
}

fn dlyap_smith(a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let x = smith_sum(a, q);
    // one correction pass on the residual
    let r = &x - (a * &x * a.transpose() + q);
    x - smith_sum(a, &r)
}

fn smith_sum(a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = q.clone();
    let mut ak = a.clone();
    for _ in 0..80 {
        let step = &ak * &x * ak.transpose();
        let done = max_abs(&step) <= 1e-17 * max_abs(&x).max(1e-300);
        x += step;
        ak = &ak * &ak;
        if done {
            break;
        }
    }
    x
}
