//! Dense linear algebra on small row-major matrices.
//!
//! Everything here is sized for the `d x d` Gram matrices and the tall `n x d`
//! constraint matrices the solver touches. Symmetric eigendecompositions use
//! cyclic Jacobi rotations, which are accurate for the graded matrices that
//! barrier Hessians produce near the boundary.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{ErmError, Result};

/// Numerical tolerances used across the crate.
pub mod tol {
    /// Relative off-diagonal mass at which Jacobi sweeps stop.
    pub const JACOBI_REL: f64 = 1e-15;
    /// Maximum number of Jacobi sweeps.
    pub const JACOBI_MAX_SWEEPS: usize = 100;
    /// Relative asymmetry accepted by symmetric routines.
    pub const SYMMETRY_REL: f64 = 1e-9;
    /// Relative size below which negative eigenvalues are treated as rounding noise.
    pub const PSD_CLAMP_REL: f64 = 1e-10;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(ErmError::dims(
                "from_row_major",
                rows * cols,
                data.len(),
            ));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(ErmError::dims("from_rows", cols, r.len()));
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

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn set_row(&mut self, i: usize, v: &[f64]) {
        self.row_mut(i).copy_from_slice(v);
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Copy of rows `lo..hi`.
    pub fn row_block(&self, lo: usize, hi: usize) -> DenseMatrix {
        DenseMatrix {
            rows: hi - lo,
            cols: self.cols,
            data: self.data[lo * self.cols..hi * self.cols].to_vec(),
        }
    }

    pub fn push_row(&mut self, v: &[f64]) -> Result<()> {
        if self.rows == 0 && self.cols == 0 {
            self.cols = v.len();
        }
        if v.len() != self.cols {
            return Err(ErmError::dims("push_row", self.cols, v.len()));
        }
        self.data.extend_from_slice(v);
        self.rows += 1;
        Ok(())
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(ErmError::dims("matmul", self.cols, other.rows));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(ErmError::dims("matvec", self.cols, v.len()));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `self^T * v`.
    pub fn tr_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(ErmError::dims("tr_matvec", self.rows, v.len()));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                axpy(vi, self.row(i), &mut out);
            }
        }
        Ok(out)
    }

    /// `v^T self v` for square `self`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(self.rows, v.len());
        let mut s = 0.0;
        for i in 0..self.rows {
            s += v[i] * dot(self.row(i), v);
        }
        s
    }

    pub fn scaled(&self, a: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| a * x).collect(),
        }
    }

    pub fn add_scaled(&mut self, a: f64, other: &DenseMatrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(ErmError::dims(
                "add_scaled",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        axpy(a, &other.data, &mut self.data);
        Ok(())
    }

    pub fn add_diag(&mut self, a: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += a;
        }
    }

    /// Adds `w * v v^T`.
    pub fn add_outer(&mut self, w: f64, v: &[f64]) {
        debug_assert_eq!(self.rows, v.len());
        for i in 0..v.len() {
            let wi = w * v[i];
            if wi == 0.0 {
                continue;
            }
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, &vj) in row.iter_mut().zip(v) {
                *r += wi * vj;
            }
        }
    }

    pub fn frobenius(&self) -> f64 {
        norm(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn symmetrize(&mut self) {
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }

    fn check_symmetric(&self, op: &'static str) -> Result<()> {
        if self.rows != self.cols {
            return Err(ErmError::dims(op, "square matrix", format!("{}x{}", self.rows, self.cols)));
        }
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self[(i, j)] - self[(j, i)]).abs() > tol::SYMMETRY_REL * scale {
                    return Err(ErmError::InvalidArgument(format!(
                        "{op}: matrix is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        if !self.is_finite() {
            return Err(ErmError::Numerical(format!("{op}: non-finite entry")));
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// `y += a * x`.
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `A^T A + ridge * I`.
pub fn gram(a: &DenseMatrix, ridge: f64) -> DenseMatrix {
    let d = a.cols();
    let mut g = DenseMatrix::zeros(d, d);
    for i in 0..a.rows() {
        let r = a.row(i);
        for p in 0..d {
            let rp = r[p];
            if rp == 0.0 {
                continue;
            }
            for q in p..d {
                g.data[p * d + q] += rp * r[q];
            }
        }
    }
    for p in 0..d {
        for q in 0..p {
            g.data[p * d + q] = g.data[q * d + p];
        }
    }
    g.add_diag(ridge);
    g
}

/// `sum_i w_i a_i a_i^T`.
pub fn weighted_gram(a: &DenseMatrix, w: &[f64]) -> Result<DenseMatrix> {
    if w.len() != a.rows() {
        return Err(ErmError::dims("weighted_gram", a.rows(), w.len()));
    }
    let d = a.cols();
    let mut g = DenseMatrix::zeros(d, d);
    for (i, &wi) in w.iter().enumerate() {
        if wi != 0.0 {
            g.add_outer(wi, a.row(i));
        }
    }
    Ok(g)
}

/// Cholesky factor `G = L L^T` of a symmetric positive definite matrix.
#[derive(Clone, Debug)]
pub struct SpdFactorization {
    l: DenseMatrix,
}

impl SpdFactorization {
    pub fn new(g: &DenseMatrix) -> Result<Self> {
        g.check_symmetric("cholesky")?;
        let n = g.rows();
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut diag = g[(j, j)];
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(ErmError::NotPositiveDefinite {
                    pivot: j,
                    value: diag,
                });
            }
            let ljj = diag.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut v = g[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = v / ljj;
            }
        }
        Ok(SpdFactorization { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn lower(&self) -> &DenseMatrix {
        &self.l
    }

    /// Solves `L y = b` in place.
    pub fn forward_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let mut v = b[i];
            for k in 0..i {
                v -= self.l[(i, k)] * b[k];
            }
            b[i] = v / self.l[(i, i)];
        }
    }

    /// Solves `L^T x = y` in place.
    pub fn backward_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in (0..n).rev() {
            let mut v = b[i];
            for k in (i + 1)..n {
                v -= self.l[(k, i)] * b[k];
            }
            b[i] = v / self.l[(i, i)];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.dim() {
            return Err(ErmError::dims("solve", self.dim(), b.len()));
        }
        let mut x = b.to_vec();
        self.forward_in_place(&mut x);
        self.backward_in_place(&mut x);
        Ok(x)
    }

    pub fn inverse(&self) -> DenseMatrix {
        let n = self.dim();
        let mut inv = DenseMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[j] = 1.0;
            self.forward_in_place(&mut e);
            self.backward_in_place(&mut e);
            for i in 0..n {
                inv[(i, j)] = e[i];
            }
        }
        inv.symmetrize();
        inv
    }

    pub fn logdet(&self) -> f64 {
        (0..self.dim()).map(|i| 2.0 * self.l[(i, i)].ln()).sum()
    }

    /// `b^T G^{-1} b`.
    pub fn inv_quad(&self, b: &[f64]) -> f64 {
        let mut y = b.to_vec();
        self.forward_in_place(&mut y);
        norm_sq(&y)
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let lt = self.l.transpose();
        self.l.matmul(&lt).expect("square factor")
    }
}

pub fn cholesky(g: &DenseMatrix) -> Result<SpdFactorization> {
    SpdFactorization::new(g)
}

/// Eigendecomposition `M = V diag(values) V^T`; eigenvectors are the columns of `vectors`,
/// values ascending.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: DenseMatrix,
}

impl SymEigen {
    /// `V f(diag) V^T`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        let n = self.values.len();
        let fv: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += self.vectors[(i, k)] * fv[k] * self.vectors[(j, k)];
                }
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(f64::NAN)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(f64::NAN)
    }
}

pub fn sym_eigen(m: &DenseMatrix) -> Result<SymEigen> {
    m.check_symmetric("sym_eigen")?;
    let n = m.rows();
    let mut a = m.clone();
    a.symmetrize();
    let mut v = DenseMatrix::identity(n);
    let total = a.frobenius();
    if total > 0.0 {
        for _ in 0..tol::JACOBI_MAX_SWEEPS {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[(p, q)] * a[(p, q)];
                }
            }
            if off.sqrt() <= tol::JACOBI_REL * total {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = a[(p, p)];
                    let aqq = a[(q, q)];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, new)] = v[(k, old)];
        }
    }
    Ok(SymEigen { values, vectors })
}

/// `G^{-1/2}` for symmetric positive definite `G`.
pub fn inv_sqrt(g: &DenseMatrix) -> Result<DenseMatrix> {
    let e = sym_eigen(g)?;
    if let Some((i, &v)) = e.values.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(ErmError::NotPositiveDefinite { pivot: i, value: v });
    }
    Ok(e.map(|v| 1.0 / v.sqrt()))
}

/// Square root of a symmetric positive semidefinite matrix. Negative eigenvalues within
/// rounding noise are clamped to zero; the count of clamped values is returned.
pub fn sqrt_psd(g: &DenseMatrix) -> Result<(DenseMatrix, usize)> {
    let e = sym_eigen(g)?;
    let scale = e.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut clamped = 0;
    for &v in &e.values {
        if v < 0.0 {
            if -v > tol::PSD_CLAMP_REL * scale.max(1e-300) {
                return Err(ErmError::Numerical(format!(
                    "sqrt_psd: eigenvalue {v:e} is not within rounding of zero (scale {scale:e})"
                )));
            }
            clamped += 1;
        }
    }
    Ok((e.map(|v| v.max(0.0).sqrt()), clamped))
}

/// Eigenvalues of `M^{-1/2} N M^{-1/2}`, ascending.
pub fn relative_eigenvalues(m: &DenseMatrix, n: &DenseMatrix) -> Result<Vec<f64>> {
    if m.shape() != n.shape() {
        return Err(ErmError::dims(
            "relative_eigenvalues",
            format!("{:?}", m.shape()),
            format!("{:?}", n.shape()),
        ));
    }
    let mi = inv_sqrt(m)?;
    let mut c = mi.matmul(n)?.matmul(&mi)?;
    c.symmetrize();
    Ok(sym_eigen(&c)?.values)
}

/// `exp(-alpha) M <= N <= exp(alpha) M`.
pub fn loewner_approx(m: &DenseMatrix, n: &DenseMatrix, alpha: f64) -> Result<bool> {
    let ev = relative_eigenvalues(m, n)?;
    let lo = (-alpha).exp();
    let hi = alpha.exp();
    Ok(ev.iter().all(|&v| v >= lo * (1.0 - 1e-12) && v <= hi * (1.0 + 1e-12)))
}

/// Smallest `alpha` with `exp(-alpha) M <= N <= exp(alpha) M`.
pub fn loewner_distance(m: &DenseMatrix, n: &DenseMatrix) -> Result<f64> {
    let ev = relative_eigenvalues(m, n)?;
    let mut worst = 0.0f64;
    for v in ev {
        if !(v > 0.0) {
            return Ok(f64::INFINITY);
        }
        worst = worst.max(v.ln().abs());
    }
    Ok(worst)
}

/// Leverage scores `a_i^T (A^T A + ridge I)^{-1} a_i`.
pub fn exact_leverage(a: &DenseMatrix, ridge: f64) -> Result<Vec<f64>> {
    let f = cholesky(&gram(a, ridge))?;
    Ok((0..a.rows()).map(|i| f.inv_quad(a.row(i))).collect())
}

pub fn logdet(g: &DenseMatrix) -> Result<f64> {
    Ok(cholesky(g)?.logdet())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd3() -> DenseMatrix {
        DenseMatrix::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, 0.2],
            vec![0.5, 0.2, 2.0],
        ])
        .unwrap()
    }

    #[test]
    fn cholesky_reconstructs() {
        let g = spd3();
        let f = cholesky(&g).unwrap();
        let r = f.reconstruct();
        for i in 0..3 {
            for j in 0..3 {
                assert!((r[(i, j)] - g[(i, j)]).abs() < 1e-14);
            }
        }
        let x = f.solve(&[1.0, 2.0, 3.0]).unwrap();
        let back = g.matvec(&x).unwrap();
        assert!((back[2] - 3.0).abs() < 1e-13);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let g = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(
            cholesky(&g),
            Err(ErmError::NotPositiveDefinite { pivot: 1, .. })
        ));
    }

    #[test]
    fn eigen_diagonalizes() {
        let g = spd3();
        let e = sym_eigen(&g).unwrap();
        let back = e.map(|v| v);
        for i in 0..3 {
            for j in 0..3 {
                assert!((back[(i, j)] - g[(i, j)]).abs() < 1e-13);
            }
        }
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn inv_sqrt_squares_to_inverse() {
        let g = spd3();
        let s = inv_sqrt(&g).unwrap();
        let p = s.matmul(&g).unwrap().matmul(&s).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((p[(i, j)] - e).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn logdet_matches_eigen_sum() {
        let g = spd3();
        let e = sym_eigen(&g).unwrap();
        let want: f64 = e.values.iter().map(|v| v.ln()).sum();
        assert!((logdet(&g).unwrap() - want).abs() < 1e-13);
    }

    #[test]
    fn leverage_of_identity_rows() {
        let a = DenseMatrix::identity(3);
        let l = exact_leverage(&a, 0.0).unwrap();
        assert!(l.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn loewner_scaled_copy() {
        let g = spd3();
        assert!(loewner_approx(&g, &g.scaled(1.05), 0.05).unwrap());
        assert!(!loewner_approx(&g, &g.scaled(1.06), 0.05).unwrap());
        assert!((loewner_distance(&g, &g.scaled(2.0)).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sqrt_psd_clamps_rounding() {
        let v = [1.0, 2.0, 3.0];
        let mut g = DenseMatrix::zeros(3, 3);
        g.add_outer(1.0, &v);
        let (s, _) = sqrt_psd(&g).unwrap();
        let p = s.matmul(&s).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((p[(i, j)] - g[(i, j)]).abs() < 1e-12);
            }
        }
    }
}
