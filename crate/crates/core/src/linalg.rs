//! Dense symmetric positive-definite factorization and triangular solves.
//!
//! Everything heavy is routed through `ndarray`'s matrix product so the
//! blocked kernels below run at GEMM speed. The factor is stored in a
//! row-major `Array2` with the strict upper triangle zeroed.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{GprError, Result};

const BLOCK: usize = 96;

/// Row block of the triangular solves. The dense diagonal products cost
/// `O(n·m·SOLVE_BLOCK)`, which at 96 rivals the `O(n·m²)` main term for
/// m in the hundreds. Diagonal sub-blocks of a triangular inverse are the
/// inverses of the diagonal sub-blocks, so slices of the stored 96-block
/// inverses serve directly.
const SOLVE_BLOCK: usize = 32;
const _: () = assert!(BLOCK % SOLVE_BLOCK == 0);

/// `Σ_i v_ij²` for every column, accumulated row by row so each sum runs in
/// the same order however many columns there are.
pub fn column_sq_norms(v: ArrayView2<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(v.ncols());
    for row in v.rows() {
        out.zip_mut_with(&row, |o, &r| *o += r * r);
    }
    out
}

/// Diagonal jitter escalation used when a Cholesky factorization fails.
///
/// Levels are relative to the mean of the matrix diagonal. The first attempt
/// always uses no jitter at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterPolicy {
    pub initial: f64,
    pub max: f64,
    pub growth: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        JitterPolicy {
            initial: 1e-10,
            max: 1e-4,
            growth: 10.0,
        }
    }
}

impl JitterPolicy {
    /// Relative jitter levels tried in order, starting with zero.
    pub fn levels(&self) -> Vec<f64> {
        let mut levels = vec![0.0];
        let mut level = self.initial;
        // tolerate rounding in the repeated product
        while level <= self.max * (1.0 + 1e-9) && level > 0.0 {
            levels.push(level);
            level *= self.growth;
        }
        levels
    }
}

/// Lower Cholesky factor `L` with `L Lᵀ = A + jitter·I`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    factor: Array2<f64>,
    // inverses of the diagonal blocks, reused by the blocked solves
    diag_inv: Vec<Array2<f64>>,
    jitter: f64,
}

impl Cholesky {
    /// Factor `a`, escalating diagonal jitter per `policy` on failure.
    pub fn factor(a: Array2<f64>, policy: &JitterPolicy) -> Result<Self> {
        let scale = if a.is_square() && a.nrows() > 0 {
            (a.diag().sum() / a.nrows() as f64).abs()
        } else {
            0.0
        };
        Self::factor_scaled(a, policy, scale)
    }

    /// As [`Cholesky::factor`] but with jitter levels relative to `scale`
    /// instead of the mean diagonal.
    pub fn factor_scaled(a: Array2<f64>, policy: &JitterPolicy, scale: f64) -> Result<Self> {
        let a = if a.is_standard_layout() {
            a
        } else {
            a.as_standard_layout().into_owned()
        };
        let n = a.nrows();
        if a.ncols() != n {
            return Err(GprError::DimensionMismatch {
                expected: n,
                got: a.ncols(),
            });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(GprError::NonFinite("matrix passed to Cholesky".into()));
        }
        if n == 0 {
            return Ok(Cholesky {
                factor: a,
                diag_inv: Vec::new(),
                jitter: 0.0,
            });
        }
        let levels = policy.levels();
        let mut attempted = Vec::with_capacity(levels.len());
        for &rel in &levels {
            let jitter = rel * scale;
            attempted.push(jitter);
            let mut work = a.clone();
            if jitter > 0.0 {
                work.diag_mut().mapv_inplace(|d| d + jitter);
            }
            if let Some(diag_inv) = factor_in_place(&mut work) {
                if jitter > 0.0 {
                    log::debug!("cholesky of order {n} needed jitter {jitter:e}");
                }
                return Ok(Cholesky {
                    factor: work,
                    diag_inv,
                    jitter,
                });
            }
        }
        Err(GprError::NotPositiveDefinite { order: n, attempted })
    }

    pub fn l(&self) -> &Array2<f64> {
        &self.factor
    }

    pub fn order(&self) -> usize {
        self.factor.nrows()
    }

    /// Absolute jitter that was added to the diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `log |A + jitter·I|`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.factor.diag().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solves `L x = b`.
    pub fn solve_lower_vec(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let n = self.order();
        assert_eq!(b.len(), n);
        let mut x = b.to_owned();
        let l = self.factor.as_slice().expect("standard layout");
        let xs = x.as_slice_mut().unwrap();
        for i in 0..n {
            let row = &l[i * n..i * n + i];
            let dot: f64 = row.iter().zip(&xs[..i]).map(|(a, b)| a * b).sum();
            xs[i] = (xs[i] - dot) / l[i * n + i];
        }
        x
    }

    /// Solves `Lᵀ x = b`.
    pub fn solve_upper_vec(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let n = self.order();
        assert_eq!(b.len(), n);
        let mut x = b.to_owned();
        let l = self.factor.as_slice().expect("standard layout");
        let xs = x.as_slice_mut().unwrap();
        for i in (0..n).rev() {
            xs[i] /= l[i * n + i];
            let xi = xs[i];
            let row = &l[i * n..i * n + i];
            for (xj, lij) in xs[..i].iter_mut().zip(row) {
                *xj -= lij * xi;
            }
        }
        x
    }

    /// Solves `(L Lᵀ) x = b`.
    pub fn solve_vec(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let z = self.solve_lower_vec(b);
        self.solve_upper_vec(z.view())
    }

    /// Inverse of the diagonal block `L[start..end, start..end]`, which must
    /// lie within one factorization block.
    fn diag_block_inv(&self, start: usize, end: usize) -> ArrayView2<'_, f64> {
        let off = start % BLOCK;
        self.diag_inv[start / BLOCK].slice(s![off..off + end - start, off..off + end - start])
    }

    /// Solves `L X = B` for a matrix right-hand side.
    pub fn solve_lower(&self, b: ArrayView2<f64>) -> Array2<f64> {
        self.solve_lower_owned(b.as_standard_layout().into_owned())
    }

    /// As [`Cholesky::solve_lower`], reusing the storage of `b`.
    pub fn solve_lower_owned(&self, b: Array2<f64>) -> Array2<f64> {
        let n = self.order();
        assert_eq!(b.nrows(), n);
        let mut x = if b.is_standard_layout() {
            b
        } else {
            b.as_standard_layout().into_owned()
        };
        for start in (0..n).step_by(SOLVE_BLOCK) {
            let end = (start + SOLVE_BLOCK).min(n);
            let (done, mut rest) = x.view_mut().split_at(Axis(0), start);
            let mut cur = rest.slice_mut(s![..end - start, ..]);
            if start > 0 {
                general_mat_mul(-1.0, &self.factor.slice(s![start..end, ..start]), &done, 1.0, &mut cur);
            }
            let solved = self.diag_block_inv(start, end).dot(&cur);
            cur.assign(&solved);
        }
        x
    }

    /// Solves `Lᵀ X = B` for a matrix right-hand side.
    pub fn solve_upper(&self, b: ArrayView2<f64>) -> Array2<f64> {
        let n = self.order();
        assert_eq!(b.nrows(), n);
        let mut x = b.as_standard_layout().into_owned();
        let starts: Vec<usize> = (0..n).step_by(SOLVE_BLOCK).collect();
        for &start in starts.iter().rev() {
            let end = (start + SOLVE_BLOCK).min(n);
            let (head, done) = x.view_mut().split_at(Axis(0), end);
            let mut cur = head.slice_move(s![start.., ..]);
            if end < n {
                general_mat_mul(
                    -1.0,
                    &self.factor.slice(s![end.., start..end]).t(),
                    &done,
                    1.0,
                    &mut cur,
                );
            }
            let solved = self.diag_block_inv(start, end).t().dot(&cur);
            cur.assign(&solved);
        }
        x
    }

    /// Solves `(L Lᵀ) X = B`.
    pub fn solve(&self, b: ArrayView2<f64>) -> Array2<f64> {
        let z = self.solve_lower(b);
        self.solve_upper(z.view())
    }

    /// `L⁻¹`, lower triangular.
    pub fn lower_inverse(&self) -> Array2<f64> {
        let n = self.order();
        let mut x = Array2::<f64>::zeros((n, n));
        for (bi, start) in (0..n).step_by(BLOCK).enumerate() {
            let end = (start + BLOCK).min(n);
            // rows start..end of L⁻¹ only have entries in columns < end
            let mut rhs = Array2::<f64>::zeros((end - start, end));
            for i in start..end {
                rhs[[i - start, i]] = 1.0;
            }
            if start > 0 {
                let (done, _) = x.view().split_at(Axis(0), start);
                general_mat_mul(
                    -1.0,
                    &self.factor.slice(s![start..end, ..start]),
                    &done.slice(s![.., ..end]),
                    1.0,
                    &mut rhs,
                );
            }
            let solved = self.diag_inv[bi].dot(&rhs);
            x.slice_mut(s![start..end, ..end]).assign(&solved);
        }
        x
    }

    /// `(L Lᵀ)⁻¹`, symmetric.
    pub fn inverse(&self) -> Array2<f64> {
        let n = self.order();
        let linv = self.lower_inverse();
        let mut out = Array2::<f64>::zeros((n, n));
        // (L⁻ᵀ L⁻¹)[J, K] = Σ_{I ≥ max(J,K)} X[I,J]ᵀ X[I,K]; fill J ≥ K blocks
        for jstart in (0..n).step_by(BLOCK) {
            let jend = (jstart + BLOCK).min(n);
            let lhs = linv.slice(s![jstart.., jstart..jend]);
            let rhs = linv.slice(s![jstart.., ..jend]);
            let mut dst = out.slice_mut(s![jstart..jend, ..jend]);
            general_mat_mul(1.0, &lhs.t(), &rhs, 0.0, &mut dst);
        }
        for i in 0..n {
            for j in i + 1..n {
                out[[i, j]] = out[[j, i]];
            }
        }
        out
    }
}

/// Blocked right-looking Cholesky on the lower triangle. Returns the inverses
/// of the diagonal blocks, or `None` if a non-positive pivot is met.
fn factor_in_place(a: &mut Array2<f64>) -> Option<Vec<Array2<f64>>> {
    let n = a.nrows();
    let mut diag_inv = Vec::with_capacity(n.div_ceil(BLOCK));
    for k in (0..n).step_by(BLOCK) {
        let kend = (k + BLOCK).min(n);
        let kb = kend - k;
        let mut l11 = a.slice(s![k..kend, k..kend]).to_owned();
        if !unblocked_cholesky(&mut l11) {
            return None;
        }
        let inv11 = lower_triangular_inverse(&l11);
        a.slice_mut(s![k..kend, k..kend]).assign(&l11);
        if kend < n {
            // panel: A21 ← A21 · L11⁻ᵀ
            let panel = a.slice(s![kend.., k..kend]).dot(&inv11.t());
            a.slice_mut(s![kend.., k..kend]).assign(&panel);
            // trailing lower trapezoid: A22 ← A22 − A21 A21ᵀ
            let (left, mut right) = a.multi_slice_mut((s![kend.., k..kend], s![kend.., kend..]));
            let left = left.view();
            let rest = n - kend;
            for c in (0..rest).step_by(BLOCK) {
                let cend = (c + BLOCK).min(rest);
                let mut dst = right.slice_mut(s![c.., c..cend]);
                general_mat_mul(
                    -1.0,
                    &left.slice(s![c.., ..]),
                    &left.slice(s![c..cend, ..]).t(),
                    1.0,
                    &mut dst,
                );
            }
        }
        debug_assert_eq!(inv11.nrows(), kb);
        diag_inv.push(inv11);
    }
    for i in 0..n {
        for j in i + 1..n {
            a[[i, j]] = 0.0;
        }
    }
    Some(diag_inv)
}

fn unblocked_cholesky(a: &mut Array2<f64>) -> bool {
    let n = a.nrows();
    for j in 0..n {
        let mut d = a[[j, j]];
        for p in 0..j {
            d -= a[[j, p]] * a[[j, p]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[[j, j]] = d;
        for i in j + 1..n {
            let mut v = a[[i, j]];
            for p in 0..j {
                v -= a[[i, p]] * a[[j, p]];
            }
            a[[i, j]] = v / d;
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            a[[i, j]] = 0.0;
        }
    }
    true
}

fn lower_triangular_inverse(l: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut inv = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        inv[[j, j]] = 1.0 / l[[j, j]];
        for i in j + 1..n {
            let mut v = 0.0;
            for p in j..i {
                v -= l[[i, p]] * inv[[p, j]];
            }
            inv[[i, j]] = v / l[[i, i]];
        }
    }
    inv
}
