//! Dense row-major linear algebra, statistics and verification helpers.
//!
//! Everything here is double precision with a fixed accumulation order
//! (row-major, left to right), so results are bit-reproducible for a given
//! input regardless of thread scheduling.

#![allow(clippy::needless_range_loop)]

use std::ops::{Index, IndexMut};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Condition numbers above this are rejected by the least-squares routines.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Default central-difference step for unit-scale inputs.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(
                "Matrix::new",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
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

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("Matrix::from_rows", "ragged rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn random_uniform<R: Rng + ?Sized>(
        rows: usize,
        cols: usize,
        lo: f64,
        hi: f64,
        rng: &mut R,
    ) -> Self {
        Self::from_fn(rows, cols, |_, _| rng.gen_range(lo..hi))
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

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Matrix) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op: "dot",
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// New matrix made of the listed rows, in order.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::OutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: self.rows,
                });
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }

    /// Overwrites the listed rows with the rows of `src`, in order.
    pub fn scatter_rows(&mut self, indices: &[usize], src: &Matrix) -> Result<()> {
        if src.rows != indices.len() || src.cols != self.cols {
            return Err(Error::ShapeMismatch {
                op: "scatter_rows",
                left: (indices.len(), self.cols),
                right: src.shape(),
            });
        }
        for (k, &i) in indices.iter().enumerate() {
            if i >= self.rows {
                return Err(Error::OutOfRange {
                    op: "scatter_rows",
                    index: i,
                    len: self.rows,
                });
            }
            self.row_mut(i).copy_from_slice(src.row(k));
        }
        Ok(())
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for m in parts {
            if m.cols != cols {
                return Err(Error::ShapeMismatch {
                    op: "vstack",
                    left: (rows, cols),
                    right: m.shape(),
                });
            }
            rows += m.rows;
            data.extend_from_slice(&m.data);
        }
        Ok(Matrix { rows, cols, data })
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Matrix product `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_bt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::ShapeMismatch {
            op: "matmul_bt",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = arow.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    Ok(out)
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_at(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul_at",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let arow = a.row(k);
        let brow = b.row(k);
        for (i, &aki) in arow.iter().enumerate() {
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aki * bkj;
            }
        }
    }
    Ok(out)
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Scales every nonzero row to unit Euclidean norm. All-zero rows are left as-is.
pub fn l2_normalize_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
    out
}

/// Ordinary least-squares slope of `values` against their indices `0..n`.
pub fn trend_slope(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientData {
            op: "trend_slope",
            needed: 2,
            got: n,
        });
    }
    let x_mean = (n - 1) as f64 / 2.0;
    let y_mean = values.iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, &y) in values.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxy += dx * (y - y_mean);
        sxx += dx * dx;
    }
    Ok(sxy / sxx)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues (unsorted) and the matrix whose columns are the
/// corresponding eigenvectors.
pub fn symmetric_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = m.rows;
    if n != m.cols {
        return Err(Error::ShapeMismatch {
            op: "symmetric_eigen",
            left: m.shape(),
            right: m.shape(),
        });
    }
    let mut a = m.clone();
    let mut v = Matrix::identity(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        let scale: f64 = (0..n).map(|i| a[(i, i)] * a[(i, i)]).sum::<f64>() + off;
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
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
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig = (0..n).map(|i| a[(i, i)]).collect();
    Ok((eig, v))
}

/// 2-norm condition number of a symmetric positive semi-definite matrix.
/// Infinite when the smallest eigenvalue is not positive.
pub fn spd_condition(m: &Matrix) -> Result<f64> {
    let (eig, _) = symmetric_eigen(m)?;
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 || max <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(max / min)
}

/// Solves `a x = b` for symmetric positive definite `a` via Cholesky.
pub fn cholesky_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows;
    if a.cols != n || b.len() != n {
        return Err(Error::ShapeMismatch {
            op: "cholesky_solve",
            left: a.shape(),
            right: (b.len(), 1),
        });
    }
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::RankDeficient { op: "cholesky_solve" });
                }
                l[(i, i)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    Ok(x)
}

/// Moore-Penrose pseudo-inverse through the eigen-decomposition of the
/// smaller Gram matrix. Singular values below `rel_tol · σ_max` are dropped.
pub fn pseudo_inverse(m: &Matrix, rel_tol: f64) -> Result<Matrix> {
    // pinv(A) = V Σ⁻¹ Uᵀ; with G = AᵀA = V Σ² Vᵀ this is V Σ⁻² Vᵀ Aᵀ.
    let tall = m.rows >= m.cols;
    let gram = if tall { matmul_at(m, m)? } else { matmul_bt(m, m)? };
    let (eig, vecs) = symmetric_eigen(&gram)?;
    let lmax = eig.iter().copied().fold(0.0, f64::max);
    if lmax <= 0.0 {
        return Err(Error::RankDeficient { op: "pseudo_inverse" });
    }
    let cutoff = (rel_tol * lmax.sqrt()).powi(2);
    let k = gram.rows;
    let mut ginv = Matrix::zeros(k, k);
    for (e, &lambda) in eig.iter().enumerate() {
        if lambda <= cutoff {
            continue;
        }
        for i in 0..k {
            let vi = vecs[(i, e)] / lambda;
            for j in 0..k {
                ginv[(i, j)] += vi * vecs[(j, e)];
            }
        }
    }
    if tall {
        // (AᵀA)⁺ Aᵀ
        matmul_bt(&ginv, m)
    } else {
        // Aᵀ (AAᵀ)⁺
        matmul_at(m, &ginv)
    }
}

/// One monomial `coeff · x^x_pow · y^y_pow`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolyTerm {
    pub x_pow: usize,
    pub y_pow: usize,
    pub coeff: f64,
}

/// Bivariate polynomial of total degree `degree`, stored in the canonical
/// order `(0,0), (0,1), …, (0,d), (1,0), …, (d,0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyCoeffs2D {
    pub degree: usize,
    pub terms: Vec<PolyTerm>,
}

impl PolyCoeffs2D {
    pub fn zeros(degree: usize) -> Self {
        let terms = exponent_pairs(degree)
            .into_iter()
            .map(|(i, j)| PolyTerm {
                x_pow: i,
                y_pow: j,
                coeff: 0.0,
            })
            .collect();
        Self { degree, terms }
    }

    pub fn term_count(degree: usize) -> usize {
        (degree + 1) * (degree + 2) / 2
    }

    pub fn get(&self, x_pow: usize, y_pow: usize) -> f64 {
        self.terms
            .iter()
            .find(|t| t.x_pow == x_pow && t.y_pow == y_pow)
            .map_or(0.0, |t| t.coeff)
    }

    pub fn set(&mut self, x_pow: usize, y_pow: usize, coeff: f64) {
        if let Some(t) = self
            .terms
            .iter_mut()
            .find(|t| t.x_pow == x_pow && t.y_pow == y_pow)
        {
            t.coeff = coeff;
        }
    }
}

/// Exponent pairs `(i, j)` with `i + j <= degree`, in canonical order.
pub fn exponent_pairs(degree: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(PolyCoeffs2D::term_count(degree));
    for i in 0..=degree {
        for j in 0..=(degree - i) {
            out.push((i, j));
        }
    }
    out
}

/// Evaluates `Σ c_ij x^i y^j`.
///
/// Products and the sum are compensated, so at integer arguments (where the
/// monomials are exact) the only error left is the final rounding.
pub fn poly_eval_2d(c: &PolyCoeffs2D, x: f64, y: f64) -> f64 {
    let mut sum = 0.0;
    let mut err = 0.0;
    for t in &c.terms {
        let m = x.powi(t.x_pow as i32) * y.powi(t.y_pow as i32);
        let p = t.coeff * m;
        err += t.coeff.mul_add(m, -p);
        let s = sum + p;
        err += if sum.abs() >= p.abs() { (sum - s) + p } else { (p - s) + sum };
        sum = s;
    }
    sum + err
}

/// Result of a 2D polynomial least-squares fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyFit {
    pub coeffs: PolyCoeffs2D,
    /// Euclidean norm of the residual vector at the samples.
    pub residual_norm: f64,
    /// Condition number of the (standardized) normal matrix.
    pub condition: f64,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn center_scale(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 0.0 { sd } else { 1.0 })
}

/// Least-squares fit of `z ≈ Σ c_ij x^i y^j` over `i + j <= degree`.
///
/// Inputs are centered and scaled before forming the normal equations; the
/// solution is expanded back into raw monomial coefficients. The normal
/// matrix is rejected when its condition number exceeds [`CONDITION_LIMIT`].
pub fn polyfit_2d(samples: &[(f64, f64, f64)], degree: usize) -> Result<PolyFit> {
    let pairs = exponent_pairs(degree);
    let k = pairs.len();
    if samples.len() < k {
        return Err(Error::InsufficientData {
            op: "polyfit_2d",
            needed: k,
            got: samples.len(),
        });
    }
    if samples.iter().any(|(x, y, z)| !(x.is_finite() && y.is_finite() && z.is_finite())) {
        return Err(Error::NonFinite { op: "polyfit_2d" });
    }
    let (mx, sx) = center_scale(samples.iter().map(|s| s.0));
    let (my, sy) = center_scale(samples.iter().map(|s| s.1));

    let design = Matrix::from_fn(samples.len(), k, |r, c| {
        let (x, y, _) = samples[r];
        let (i, j) = pairs[c];
        ((x - mx) / sx).powi(i as i32) * ((y - my) / sy).powi(j as i32)
    });
    let normal = matmul_at(&design, &design)?;
    let condition = spd_condition(&normal)?;
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::IllConditioned {
            op: "polyfit_2d",
            condition,
            limit: CONDITION_LIMIT,
        });
    }
    let solve = |targets: &[f64]| -> Result<PolyCoeffs2D> {
        let rhs: Vec<f64> = (0..k)
            .map(|c| (0..samples.len()).map(|r| design[(r, c)] * targets[r]).sum())
            .collect();
        let scaled = cholesky_solve(&normal, &rhs)?;
        // (x - mx)^a = Σ_p C(a,p) x^p (-mx)^(a-p)
        let mut coeffs = PolyCoeffs2D::zeros(degree);
        for (&(a, b), &c_ab) in pairs.iter().zip(&scaled) {
            let base = c_ab / (sx.powi(a as i32) * sy.powi(b as i32));
            for p in 0..=a {
                for q in 0..=b {
                    let contrib = base
                        * binomial(a, p)
                        * binomial(b, q)
                        * (-mx).powi((a - p) as i32)
                        * (-my).powi((b - q) as i32);
                    let cur = coeffs.get(p, q);
                    coeffs.set(p, q, cur + contrib);
                }
            }
        }
        Ok(coeffs)
    };
    let residuals = |c: &PolyCoeffs2D| -> Vec<f64> {
        samples.iter().map(|&(x, y, z)| z - poly_eval_2d(c, x, y)).collect()
    };

    let targets: Vec<f64> = samples.iter().map(|s| s.2).collect();
    let mut coeffs = solve(&targets)?;
    // one round of refinement recovers digits lost in the raw-monomial expansion
    let correction = solve(&residuals(&coeffs))?;
    for (t, d) in coeffs.terms.iter_mut().zip(&correction.terms) {
        t.coeff += d.coeff;
    }
    let residual_norm = residuals(&coeffs).iter().map(|e| e * e).sum::<f64>().sqrt();
    Ok(PolyFit {
        coeffs,
        residual_norm,
        condition,
    })
}

/// Compares `analytic_grad` with a central-difference gradient of `f` at `at`.
///
/// Returns the largest entrywise relative error, using
/// `max(|a|, |b|, 1e-8)` as the denominator.
pub fn finite_diff_check<F>(f: F, analytic_grad: &Matrix, at: &Matrix, step: f64) -> Result<f64>
where
    F: Fn(&Matrix) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::invalid("finite_diff_check", "step must be positive"));
    }
    if analytic_grad.shape() != at.shape() {
        return Err(Error::ShapeMismatch {
            op: "finite_diff_check",
            left: analytic_grad.shape(),
            right: at.shape(),
        });
    }
    let mut probe = at.clone();
    let mut worst: f64 = 0.0;
    for idx in 0..at.data.len() {
        let orig = probe.data[idx];
        probe.data[idx] = orig + step;
        let plus = f(&probe);
        probe.data[idx] = orig - step;
        let minus = f(&probe);
        probe.data[idx] = orig;
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::NonFinite { op: "finite_diff_check" });
        }
        let numeric = (plus - minus) / (2.0 * step);
        let analytic = analytic_grad.data[idx];
        let denom = numeric.abs().max(analytic.abs()).max(1e-8);
        worst = worst.max((numeric - analytic).abs() / denom);
    }
    Ok(worst)
}
