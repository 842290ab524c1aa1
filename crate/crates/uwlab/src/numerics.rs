//! Small dense linear algebra over `f64` and `Complex64`.
//!
//! Everything here is row-major and sized for this crate's problems
//! (dimensions ≤ 128): DFT matrices, Hermitian positive-definite Cholesky
//! solves, a pivoted LU solve for general square systems, Frobenius norms,
//! and the complex→real stacking used by the real-valued signal model.
//!
//! Non-goals: general BLAS coverage, FFTs (an explicit DFT matrix–vector
//! product is exact and fast enough at these sizes), and SIMD tuning.

use num_complex::Complex64;

use crate::{Error, Result};

/// Complex number shorthand used throughout the crate.
pub type C64 = Complex64;

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<C64>,
}

/// Dense row-major real matrix. Also serves as the tensor type of the
/// autodiff runtime (`nn::Tensor` is an alias of this type).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        CMatrix { rows: r, cols: c, data }
    }

    /// Matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, rhs.rows, "matmul dimension mismatch");
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                let lhs_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in lhs_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// Matrix–vector product `self · x`.
    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, x.len(), "matvec dimension mismatch");
        let mut out = vec![C64::new(0.0, 0.0); self.rows];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut acc = C64::new(0.0, 0.0);
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            out[i] = acc;
        }
        out
    }

    /// Conjugate transpose.
    pub fn hermitian(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    /// `selfᴴ · self` (Gram matrix), exploiting Hermitian symmetry.
    pub fn gram(&self) -> CMatrix {
        let n = self.cols;
        let mut out = CMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut acc = C64::new(0.0, 0.0);
                for r in 0..self.rows {
                    acc += self[(r, i)].conj() * self[(r, j)];
                }
                out[(i, j)] = acc;
                out[(j, i)] = acc.conj();
            }
        }
        out
    }

    /// `selfᴴ · x`.
    pub fn hermitian_matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(self.rows, x.len(), "hermitian_matvec dimension mismatch");
        let mut out = vec![C64::new(0.0, 0.0); self.cols];
        for r in 0..self.rows {
            let xr = x[r];
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, &a) in out.iter_mut().zip(row) {
                *o += a.conj() * xr;
            }
        }
        out
    }

    /// Add `c` to the diagonal in place.
    pub fn add_diagonal(&mut self, c: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            let v = self[(i, i)] + C64::new(c, 0.0);
            self[(i, i)] = v;
        }
    }

    /// Column `j` as a vector.
    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Copy of this matrix with column `j` removed.
    pub fn without_column(&self, j: usize) -> CMatrix {
        assert!(j < self.cols);
        let mut out = CMatrix::zeros(self.rows, self.cols - 1);
        for i in 0..self.rows {
            let mut c = 0;
            for jj in 0..self.cols {
                if jj != j {
                    out[(i, c)] = self[(i, jj)];
                    c += 1;
                }
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Scale every entry in place.
    pub fn scale(&mut self, c: f64) {
        for z in &mut self.data {
            *z *= c;
        }
    }

    /// Cholesky factorization; fails with [`Error::SingularMatrix`] when a
    /// pivot drops below `1e-12` times the largest diagonal entry (the matrix
    /// is then numerically singular or indefinite).
    pub fn cholesky(&self, context: &'static str) -> Result<CholeskyFactor> {
        assert_eq!(self.rows, self.cols, "cholesky needs a square matrix");
        let n = self.rows;
        let mut l = self.clone();
        let scale = (0..n)
            .map(|i| l[(i, i)].re.abs())
            .fold(0.0f64, f64::max)
            .max(1.0);
        for j in 0..n {
            let mut d = l[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if d <= 1e-12 * scale {
                return Err(Error::SingularMatrix {
                    context,
                    pivot: d,
                    index: j,
                });
            }
            let dj = d.sqrt();
            l[(j, j)] = C64::new(dj, 0.0);
            for i in (j + 1)..n {
                let mut s = l[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / dj;
            }
            for k in (j + 1)..n {
                l[(j, k)] = C64::new(0.0, 0.0);
            }
        }
        Ok(CholeskyFactor { l })
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Lower-triangular Cholesky factor `L` with `L·Lᴴ = A`.
pub struct CholeskyFactor {
    l: CMatrix,
}

impl CholeskyFactor {
    /// Solve `A x = b`.
    pub fn solve_vec(&self, b: &[C64]) -> Vec<C64> {
        let n = self.l.rows;
        assert_eq!(b.len(), n);
        // forward: L y = b
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        // backward: Lᴴ x = y
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)].conj() * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    /// Solve `A X = B` column by column.
    pub fn solve_mat(&self, b: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(b.rows, b.cols);
        for j in 0..b.cols {
            let col = b.column(j);
            let x = self.solve_vec(&col);
            for i in 0..b.rows {
                out[(i, j)] = x[i];
            }
        }
        out
    }

    /// `A⁻¹` (solve against the identity).
    pub fn inverse(&self) -> CMatrix {
        self.solve_mat(&CMatrix::identity(self.l.rows))
    }
}

/// Solve the general square complex system `A x = b` by LU with partial
/// pivoting. Needed where the coefficient matrix is not Hermitian (e.g. the
/// redundancy block inside the generator construction).
pub fn lu_solve(a: &CMatrix, b: &[C64], context: &'static str) -> Result<Vec<C64>> {
    assert_eq!(a.rows, a.cols, "lu_solve needs a square matrix");
    assert_eq!(a.rows, b.len(), "lu_solve rhs length mismatch");
    let n = a.rows;
    let mut lu = a.clone();
    let mut x = b.to_vec();
    let scale = lu.data.iter().map(|z| z.norm()).fold(0.0f64, f64::max).max(1.0);
    for col in 0..n {
        // pivot: largest magnitude on or below the diagonal
        let mut p = col;
        let mut pmag = lu[(col, col)].norm();
        for r in (col + 1)..n {
            let m = lu[(r, col)].norm();
            if m > pmag {
                pmag = m;
                p = r;
            }
        }
        if pmag <= 1e-13 * scale {
            return Err(Error::SingularMatrix {
                context,
                pivot: pmag,
                index: col,
            });
        }
        if p != col {
            for j in 0..n {
                let t = lu[(col, j)];
                lu[(col, j)] = lu[(p, j)];
                lu[(p, j)] = t;
            }
            x.swap(col, p);
        }
        let piv = lu[(col, col)];
        for r in (col + 1)..n {
            let f = lu[(r, col)] / piv;
            lu[(r, col)] = f;
            for j in (col + 1)..n {
                let v = lu[(r, j)] - f * lu[(col, j)];
                lu[(r, j)] = v;
            }
            let xc = x[col];
            x[r] -= f * xc;
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= lu[(i, j)] * x[j];
        }
        x[i] = s / lu[(i, i)];
    }
    Ok(x)
}

/// Solve `A X = B` for general square complex `A`.
pub fn lu_solve_mat(a: &CMatrix, b: &CMatrix, context: &'static str) -> Result<CMatrix> {
    let mut out = CMatrix::zeros(b.rows, b.cols);
    for j in 0..b.cols {
        let x = lu_solve(a, &b.column(j), context)?;
        for i in 0..b.rows {
            out[(i, j)] = x[i];
        }
    }
    Ok(out)
}

/// `n`-point DFT matrix with entries `exp(-i 2π k l / n)` (unnormalized):
/// multiplying a time-domain vector by it yields the frequency domain.
pub fn dft_matrix(n: usize) -> CMatrix {
    // exp(-i·2π·p/n) with exact values on the unit-circle axes, so the small
    // textbook matrices (n = 2, 4) come out bit-exact
    fn unit_phasor(p: usize, n: usize) -> C64 {
        if 4 * p == n {
            return C64::new(0.0, -1.0);
        }
        if 2 * p == n {
            return C64::new(-1.0, 0.0);
        }
        if 4 * p == 3 * n {
            return C64::new(0.0, 1.0);
        }
        if p == 0 {
            return C64::new(1.0, 0.0);
        }
        let e = -2.0 * std::f64::consts::PI * p as f64 / n as f64;
        C64::new(e.cos(), e.sin())
    }
    let mut f = CMatrix::zeros(n, n);
    for k in 0..n {
        for l in 0..n {
            f[(k, l)] = unit_phasor((k * l) % n, n);
        }
    }
    f
}

/// Inverse of [`dft_matrix`]: entries `exp(+i 2π k l / n) / n`.
pub fn idft_matrix(n: usize) -> CMatrix {
    let mut f = dft_matrix(n);
    let inv_n = 1.0 / n as f64;
    for z in &mut f.data {
        *z = z.conj() * inv_n;
    }
    f
}

/// Real stacking of a complex matrix:
/// `[[Re(A), -Im(A)], [Im(A), Re(A)]]` with the component order
/// (real parts first, then imaginary parts) shared by [`real_stack_vec`].
pub fn real_stack(a: &CMatrix) -> RMatrix {
    let (m, n) = (a.rows, a.cols);
    let mut out = RMatrix::zeros(2 * m, 2 * n);
    for i in 0..m {
        for j in 0..n {
            let z = a[(i, j)];
            out.set(i, j, z.re);
            out.set(i, j + n, -z.im);
            out.set(i + m, j, z.im);
            out.set(i + m, j + n, z.re);
        }
    }
    out
}

/// Real stacking of a complex vector: `[Re(x); Im(x)]`.
pub fn real_stack_vec(x: &[C64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * x.len());
    out.extend(x.iter().map(|z| z.re));
    out.extend(x.iter().map(|z| z.im));
    out
}

/// Inverse of [`real_stack_vec`].
pub fn unstack_vec(x: &[f64]) -> Vec<C64> {
    assert!(x.len().is_multiple_of(2), "stacked vector must have even length");
    let n = x.len() / 2;
    (0..n).map(|i| C64::new(x[i], x[i + n])).collect()
}

impl RMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "shape/data length mismatch");
        RMatrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &RMatrix) -> RMatrix {
        assert_eq!(self.cols, rhs.rows, "matmul dimension mismatch");
        let mut out = RMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// Matrix product `self · rhsᵀ`.
    pub fn matmul_transb(&self, rhs: &RMatrix) -> RMatrix {
        assert_eq!(self.cols, rhs.cols, "matmul_transb dimension mismatch");
        let mut out = RMatrix::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..rhs.rows {
                let b_row = rhs.row(j);
                let mut acc = 0.0;
                for (x, y) in a_row.iter().zip(b_row) {
                    acc += x * y;
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn transpose(&self) -> RMatrix {
        let mut out = RMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Real symmetric positive-definite Cholesky solve of `self · x = b`.
    pub fn cholesky_solve(&self, b: &[f64], context: &'static str) -> Result<Vec<f64>> {
        assert_eq!(self.rows, self.cols, "cholesky_solve needs a square matrix");
        let n = self.rows;
        let mut l = self.clone();
        let scale = (0..n)
            .map(|i| l.get(i, i).abs())
            .fold(0.0f64, f64::max)
            .max(1.0);
        for j in 0..n {
            let mut d = l.get(j, j);
            for k in 0..j {
                let v = l.get(j, k);
                d -= v * v;
            }
            if d <= 1e-12 * scale {
                return Err(Error::SingularMatrix {
                    context,
                    pivot: d,
                    index: j,
                });
            }
            let dj = d.sqrt();
            l.set(j, j, dj);
            for i in (j + 1)..n {
                let mut s = l.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / dj);
            }
        }
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l.get(i, k) * y[k];
            }
            y[i] = s / l.get(i, i);
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l.get(k, i) * y[k];
            }
            y[i] = s / l.get(i, i);
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn assert_c_close(a: C64, b: C64, tol: f64) {
        assert!(
            (a - b).norm() <= tol,
            "complex values differ: {a} vs {b} (tol {tol})"
        );
    }

    #[test]
    fn dft_matrix_two_point_is_exact() {
        let f = dft_matrix(2);
        let one = C64::new(1.0, 0.0);
        assert_eq!(f[(0, 0)], one);
        assert_eq!(f[(0, 1)], one);
        assert_eq!(f[(1, 0)], one);
        assert_eq!(f[(1, 1)], C64::new(-1.0, 0.0));
    }

    #[test]
    fn dft_matrix_is_unitary_up_to_n() {
        // Fᴴ F = n·I for the unnormalized convention
        for n in [4usize, 12, 64] {
            let f = dft_matrix(n);
            let g = f.hermitian().matmul(&f);
            for i in 0..n {
                for j in 0..n {
                    let expect = if i == j { n as f64 } else { 0.0 };
                    assert_c_close(g[(i, j)], C64::new(expect, 0.0), 1e-9);
                }
            }
        }
    }

    #[test]
    fn idft_inverts_dft() {
        let n = 12;
        let p = idft_matrix(n).matmul(&dft_matrix(n));
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_c_close(p[(i, j)], C64::new(expect, 0.0), 1e-12);
            }
        }
    }

    #[test]
    fn real_cholesky_solve_frozen_oracle() {
        // [[4,2],[2,3]] x = [1,1]  =>  x = [1/8, 1/4] exactly
        let a = RMatrix::from_vec(2, 2, vec![4.0, 2.0, 2.0, 3.0]);
        let x = a.cholesky_solve(&[1.0, 1.0], "test").unwrap();
        assert!((x[0] - 0.125).abs() < 1e-15);
        assert!((x[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn complex_cholesky_solve_frozen_oracle() {
        // [[2, 1-i],[1+i, 3]] x = [1, i]  =>  x = [1/2 - i/4, -1/4 + i/4]
        let a = CMatrix::from_rows(&[
            vec![C64::new(2.0, 0.0), C64::new(1.0, -1.0)],
            vec![C64::new(1.0, 1.0), C64::new(3.0, 0.0)],
        ]);
        let x = a
            .cholesky("test")
            .unwrap()
            .solve_vec(&[C64::new(1.0, 0.0), C64::new(0.0, 1.0)]);
        assert_c_close(x[0], C64::new(0.5, -0.25), 1e-14);
        assert_c_close(x[1], C64::new(-0.25, 0.25), 1e-14);
    }

    #[test]
    fn cholesky_rejects_singular_matrix() {
        let a = RMatrix::from_vec(2, 2, vec![1.0, 2.0, 2.0, 4.0]);
        match a.cholesky_solve(&[1.0, 1.0], "singular-test") {
            Err(Error::SingularMatrix { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected SingularMatrix, got {other:?}"),
        }
    }

    #[test]
    fn cholesky_residual_on_random_hpd_systems() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for n in [3usize, 8, 24, 48] {
            let mut m = CMatrix::zeros(n, n);
            for z in &mut m.data {
                *z = C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            }
            // A = MᴴM + I is Hermitian positive definite
            let mut a = m.hermitian().matmul(&m);
            a.add_diagonal(1.0);
            let b: Vec<C64> = (0..n)
                .map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                .collect();
            let x = a.cholesky("test").unwrap().solve_vec(&b);
            let r = a.matvec(&x);
            let resid: f64 = r
                .iter()
                .zip(&b)
                .map(|(u, v)| (u - v).norm_sqr())
                .sum::<f64>()
                .sqrt();
            let bnorm: f64 = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            assert!(resid <= 1e-10 * bnorm, "residual {resid} too large for n={n}");
        }
    }

    #[test]
    fn lu_solve_requires_pivoting_case() {
        // [[0,1],[1,0]] x = [1,2] => x = [2,1]; fails without row exchange
        let a = CMatrix::from_rows(&[
            vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
            vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        ]);
        let x = lu_solve(&a, &[C64::new(1.0, 0.0), C64::new(2.0, 0.0)], "test").unwrap();
        assert_c_close(x[0], C64::new(2.0, 0.0), 1e-15);
        assert_c_close(x[1], C64::new(1.0, 0.0), 1e-15);
    }

    #[test]
    fn lu_solve_complex_frozen_oracle() {
        // [[1+2i, 2-i],[3, -1+i]] x = [1+i, 2-3i]
        //   => x = [43/85 - 66/85 i, -49/85 + 8/85 i]
        let a = CMatrix::from_rows(&[
            vec![C64::new(1.0, 2.0), C64::new(2.0, -1.0)],
            vec![C64::new(3.0, 0.0), C64::new(-1.0, 1.0)],
        ]);
        let x = lu_solve(&a, &[C64::new(1.0, 1.0), C64::new(2.0, -3.0)], "test").unwrap();
        assert_c_close(x[0], C64::new(43.0 / 85.0, -66.0 / 85.0), 1e-14);
        assert_c_close(x[1], C64::new(-49.0 / 85.0, 8.0 / 85.0), 1e-14);
    }

    #[test]
    fn lu_solve_rejects_singular() {
        let a = CMatrix::from_rows(&[
            vec![C64::new(1.0, 0.0), C64::new(2.0, 0.0)],
            vec![C64::new(2.0, 0.0), C64::new(4.0, 0.0)],
        ]);
        assert!(matches!(
            lu_solve(&a, &[C64::new(1.0, 0.0), C64::new(1.0, 0.0)], "t"),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn real_stack_of_product_equals_product_of_stacks() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut a = CMatrix::zeros(3, 4);
        let mut b = CMatrix::zeros(4, 2);
        for z in a.data.iter_mut().chain(b.data.iter_mut()) {
            *z = C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        }
        let lhs = real_stack(&a.matmul(&b));
        let rhs = real_stack(&a).matmul(&real_stack(&b));
        for (x, y) in lhs.data.iter().zip(&rhs.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn real_stack_vec_respects_matvec() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let mut a = CMatrix::zeros(3, 3);
        for z in &mut a.data {
            *z = C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        }
        let x: Vec<C64> = (0..3)
            .map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let lhs = real_stack_vec(&a.matvec(&x));
        let rhs = real_stack(&a).matvec(&real_stack_vec(&x));
        for (u, v) in lhs.iter().zip(&rhs) {
            assert!((u - v).abs() < 1e-12);
        }
        // round trip
        let back = unstack_vec(&real_stack_vec(&x));
        for (u, v) in back.iter().zip(&x) {
            assert_eq!(u, v);
        }
    }

    #[test]
    fn rmatrix_products_match_naive_loops() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let a = RMatrix::from_vec(3, 5, (0..15).map(|_| rng.gen::<f64>() - 0.5).collect());
        let b = RMatrix::from_vec(5, 4, (0..20).map(|_| rng.gen::<f64>() - 0.5).collect());
        let c = a.matmul(&b);
        for i in 0..3 {
            for j in 0..4 {
                let mut acc = 0.0;
                for k in 0..5 {
                    acc += a.get(i, k) * b.get(k, j);
                }
                assert!((c.get(i, j) - acc).abs() < 1e-12);
            }
        }
        let d = a.matmul_transb(&b.transpose());
        for (x, y) in c.data.iter().zip(&d.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
