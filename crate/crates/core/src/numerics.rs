//! Dense decomposition primitives used by the offline and online stages.
//!
//! All matrices are column-major [`nalgebra::DMatrix<f64>`]. Thresholds passed
//! to these routines are relative (to the first pivot or the largest singular
//! value) unless a function says otherwise.

use nalgebra::{DMatrix, DVector};

use crate::error::{RbError, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Singular values below this fraction of the largest are treated as zero by
/// [`least_squares`].
pub const LSTSQ_RCOND: f64 = 1e-12;

/// Squared ratio (downdated norm / reference norm)^2 below which a column
/// norm is recomputed from scratch during pivoted QR.
const NORM_RECOMPUTE_RATIO: f64 = 1e-7;

/// Result of a threshold-stopped column-pivoted QR factorization.
#[derive(Clone, Debug, PartialEq)]
pub struct CpqrSelection {
    /// Column indices in pivot order. Always a permutation of `0..cols`.
    pub permutation: Vec<usize>,
    /// Number of leading pivots that passed the threshold.
    pub kept: usize,
    /// Pivot magnitudes `|r_ii|` computed before the factorization halted,
    /// including the first one that failed the threshold (if any).
    pub diagonals: Vec<f64>,
}

impl CpqrSelection {
    /// The selected column indices, in pivot order.
    pub fn kept_indices(&self) -> &[usize] {
        &self.permutation[..self.kept]
    }
}

#[derive(Clone, Copy, Debug)]
enum StopRule {
    /// Keep pivots with `r_ii >= eps * r_11`.
    Relative(f64),
    /// Keep pivots with `r_ii >= tol`.
    Absolute(f64),
}

/// Column-pivoted QR that halts at the first pivot below `eps * r_11`.
pub fn cpqr_select(m: &Matrix, eps: f64) -> Result<CpqrSelection> {
    check_relative_threshold(eps)?;
    cpqr(m, StopRule::Relative(eps))
}

/// Column-pivoted QR that halts at the first pivot below the absolute level
/// `tol`. An all-zero input selects nothing.
pub fn cpqr_select_absolute(m: &Matrix, tol: f64) -> Result<CpqrSelection> {
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(RbError::InvalidArgument(format!(
            "absolute pivot tolerance must be positive and finite, got {tol}"
        )));
    }
    cpqr(m, StopRule::Absolute(tol))
}

fn check_relative_threshold(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(RbError::InvalidArgument(format!(
            "relative threshold must lie in (0, 1), got {eps}"
        )))
    }
}

fn cpqr(m: &Matrix, rule: StopRule) -> Result<CpqrSelection> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(RbError::DegenerateInput("empty matrix".into()));
    }
    let mut a = m.clone();
    let mut perm: Vec<usize> = (0..cols).collect();
    let mut norms: Vec<f64> = (0..cols).map(|j| a.column(j).norm()).collect();
    let mut reference = norms.clone();

    let max_norm = norms.iter().cloned().fold(0.0, f64::max);
    if max_norm == 0.0 {
        return match rule {
            StopRule::Relative(_) => Err(RbError::DegenerateInput(
                "all-zero matrix has no pivots".into(),
            )),
            StopRule::Absolute(_) => Ok(CpqrSelection {
                permutation: perm,
                kept: 0,
                diagonals: Vec::new(),
            }),
        };
    }

    let steps = rows.min(cols);
    let mut diagonals = Vec::with_capacity(steps);
    let mut kept = 0;
    let mut threshold = match rule {
        StopRule::Absolute(tol) => tol,
        StopRule::Relative(_) => 0.0,
    };
    let mut v = vec![0.0; rows];

    for k in 0..steps {
        // Largest remaining norm; ties go to the lowest original column index.
        let mut piv = k;
        for j in k + 1..cols {
            if norms[j] > norms[piv] || (norms[j] == norms[piv] && perm[j] < perm[piv]) {
                piv = j;
            }
        }
        if piv != k {
            a.swap_columns(k, piv);
            perm.swap(k, piv);
            norms.swap(k, piv);
            reference.swap(k, piv);
        }

        let x = a.view((k, k), (rows - k, 1));
        let xnorm = x.norm();
        if k == 0 {
            if let StopRule::Relative(eps) = rule {
                threshold = eps * xnorm;
            }
        }
        diagonals.push(xnorm);
        if xnorm < threshold || xnorm == 0.0 {
            break;
        }
        kept += 1;
        if k + 1 == steps {
            break;
        }

        // Householder reflector H = I - 2 v v^T / (v^T v) mapping x to alpha e1.
        let x0 = a[(k, k)];
        let alpha = if x0 >= 0.0 { -xnorm } else { xnorm };
        let len = rows - k;
        for i in 0..len {
            v[i] = a[(k + i, k)];
        }
        v[0] -= alpha;
        let vtv: f64 = v[..len].iter().map(|t| t * t).sum();
        a[(k, k)] = alpha;
        for i in 1..len {
            a[(k + i, k)] = 0.0;
        }
        if vtv > 0.0 {
            let scale = 2.0 / vtv;
            let vk = &v[..len];
            let data = a.as_mut_slice();
            for j in k + 1..cols {
                let col = &mut data[j * rows + k..(j + 1) * rows];
                let dot: f64 = vk.iter().zip(col.iter()).map(|(x, y)| x * y).sum();
                let f = dot * scale;
                if f != 0.0 {
                    for (c, x) in col.iter_mut().zip(vk) {
                        *c -= f * x;
                    }
                }
            }
        }

        for j in k + 1..cols {
            if norms[j] == 0.0 {
                continue;
            }
            let ratio = a[(k, j)].abs() / norms[j];
            let t = (1.0 - ratio * ratio).max(0.0);
            let rel = norms[j] / reference[j];
            if t * rel * rel <= NORM_RECOMPUTE_RATIO {
                let fresh = a.view((k + 1, j), (rows - k - 1, 1)).norm();
                norms[j] = fresh;
                reference[j] = fresh;
            } else {
                norms[j] *= t.sqrt();
            }
        }
    }

    Ok(CpqrSelection {
        permutation: perm,
        kept,
        diagonals,
    })
}

/// Orthonormal left singular vectors retained above a relative threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedBasis {
    pub basis: Matrix,
    pub singular_values: Vec<f64>,
}

impl TruncatedBasis {
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }
}

/// Thin SVD sorted in descending order: `(U, sigma, V)`.
fn sorted_svd(m: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let fm = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let svd = fm
        .thin_svd()
        .map_err(|e| RbError::Singular(format!("SVD did not converge: {e:?}")))?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let mut order: Vec<usize> = (0..s.nrows()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));
    let sigma: Vec<f64> = order.iter().map(|&i| s[i]).collect();
    let u_sorted = Matrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v_sorted = Matrix::from_fn(v.nrows(), order.len(), |r, c| v[(r, order[c])]);
    Ok((u_sorted, sigma, v_sorted))
}

/// Singular values of `m` in descending order.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    let fm = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let mut s = fm
        .singular_values()
        .map_err(|e| RbError::Singular(format!("SVD did not converge: {e:?}")))?;
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Left singular vectors of `m` whose singular values are at least
/// `eps * sigma_1`.
pub fn truncated_svd(m: &Matrix, eps: f64) -> Result<TruncatedBasis> {
    check_relative_threshold(eps)?;
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(RbError::DegenerateInput("empty matrix".into()));
    }
    if m.iter().all(|&x| x == 0.0) {
        return Err(RbError::DegenerateInput(
            "cannot build a basis from a zero matrix".into(),
        ));
    }
    let (u, sigma, _) = sorted_svd(m)?;
    let cutoff = eps * sigma[0];
    let keep = sigma
        .iter()
        .take_while(|&&s| s >= cutoff && s > 0.0)
        .count();
    Ok(TruncatedBasis {
        basis: u.columns(0, keep).into_owned(),
        singular_values: sigma[..keep].to_vec(),
    })
}

/// Minimum-norm solution of `min ||a X - b||_F`, treating singular values of
/// `a` below `LSTSQ_RCOND * sigma_1` as zero.
pub fn least_squares(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.nrows() != b.nrows() {
        return Err(RbError::DimensionMismatch(format!(
            "least squares: a has {} rows, b has {}",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.ncols() == 0 {
        return Err(RbError::DegenerateInput("least squares with no unknowns".into()));
    }
    if a.iter().all(|&x| x == 0.0) {
        return Ok(Matrix::zeros(a.ncols(), b.ncols()));
    }
    let (u, sigma, v) = sorted_svd(a)?;
    let cutoff = LSTSQ_RCOND * sigma[0];
    let rank = sigma.iter().take_while(|&&s| s > cutoff).count();
    let u_r = u.columns(0, rank);
    let mut coeffs = u_r.transpose() * b;
    for (k, mut row) in coeffs.row_iter_mut().enumerate() {
        row /= sigma[k];
    }
    Ok(v.columns(0, rank) * coeffs)
}

/// Removes from every column of `samples` its component in the column space
/// of `skeleton_cols` (modified Gram-Schmidt, applied twice).
pub fn project_out(samples: &Matrix, skeleton_cols: &Matrix) -> Result<Matrix> {
    if samples.nrows() != skeleton_cols.nrows() {
        return Err(RbError::DimensionMismatch(format!(
            "project_out: samples have {} rows, skeletons have {}",
            samples.nrows(),
            skeleton_cols.nrows()
        )));
    }
    let q = orthonormal_columns(skeleton_cols);
    let mut out = samples.clone();
    for mut col in out.column_iter_mut() {
        for _ in 0..2 {
            for qk in &q {
                let d = qk.dot(&col);
                col.axpy(-d, qk, 1.0);
            }
        }
    }
    Ok(out)
}

/// Orthonormal basis for the column space of `m` via MGS with
/// reorthogonalization. Columns that are dependent on earlier ones (relative
/// residual below `LSTSQ_RCOND` of the largest column) are dropped.
pub(crate) fn orthonormal_columns(m: &Matrix) -> Vec<Vector> {
    let scale = m.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut q: Vec<Vector> = Vec::new();
    if scale == 0.0 {
        return q;
    }
    for c in m.column_iter() {
        let mut v: Vector = c.into_owned();
        for _ in 0..2 {
            for qk in &q {
                let d = qk.dot(&v);
                v.axpy(-d, qk, 1.0);
            }
        }
        let nv = v.norm();
        if nv > LSTSQ_RCOND * scale {
            q.push(v / nv);
        }
    }
    q
}

/// LU factorization with partial pivoting, kept separate from nalgebra's so
/// that transposed solves are available for condition estimation.
#[derive(Clone, Debug)]
pub struct DenseLu {
    lu: Matrix,
    piv: Vec<usize>,
    norm1: f64,
}

impl DenseLu {
    pub fn new(a: &Matrix) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(RbError::DimensionMismatch(format!(
                "LU of non-square {}x{} matrix",
                a.nrows(),
                a.ncols()
            )));
        }
        let norm1 = a
            .column_iter()
            .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let mut lu = a.clone();
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = lu[(k, k)].abs();
            for i in k + 1..n {
                let v = lu[(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(RbError::Singular(format!("zero pivot at column {k}")));
            }
            if p != k {
                lu.swap_rows(k, p);
                piv.swap(k, p);
            }
            let d = lu[(k, k)];
            for i in k + 1..n {
                lu[(i, k)] /= d;
            }
            for j in k + 1..n {
                let f = lu[(k, j)];
                if f != 0.0 {
                    for i in k + 1..n {
                        let l = lu[(i, k)];
                        lu[(i, j)] -= l * f;
                    }
                }
            }
        }
        Ok(Self { lu, piv, norm1 })
    }

    pub fn dim(&self) -> usize {
        self.piv.len()
    }

    pub fn solve(&self, b: &Vector) -> Vector {
        let n = self.dim();
        let mut x = Vector::from_fn(n, |i, _| b[self.piv[i]]);
        for j in 0..n {
            let xj = x[j];
            for i in j + 1..n {
                x[i] -= self.lu[(i, j)] * xj;
            }
        }
        for j in (0..n).rev() {
            x[j] /= self.lu[(j, j)];
            let xj = x[j];
            for i in 0..j {
                x[i] -= self.lu[(i, j)] * xj;
            }
        }
        x
    }

    pub fn solve_transpose(&self, b: &Vector) -> Vector {
        let n = self.dim();
        let mut y = b.clone();
        // U^T y = b
        for j in 0..n {
            let mut s = y[j];
            for i in 0..j {
                s -= self.lu[(i, j)] * y[i];
            }
            y[j] = s / self.lu[(j, j)];
        }
        // L^T z = y
        for j in (0..n).rev() {
            let mut s = y[j];
            for i in j + 1..n {
                s -= self.lu[(i, j)] * y[i];
            }
            y[j] = s;
        }
        let mut x = Vector::zeros(n);
        for i in 0..n {
            x[self.piv[i]] = y[i];
        }
        x
    }

    /// Hager's estimate of the 1-norm condition number.
    pub fn condition_estimate(&self) -> f64 {
        let n = self.dim();
        if n == 0 {
            return 1.0;
        }
        let mut x = Vector::from_element(n, 1.0 / n as f64);
        let mut est = 0.0;
        for _ in 0..5 {
            let y = self.solve(&x);
            est = y.iter().map(|v| v.abs()).sum::<f64>();
            let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
            let z = self.solve_transpose(&xi);
            let (jmax, zmax) = z
                .iter()
                .enumerate()
                .fold((0, 0.0), |(bj, bv), (j, v)| if v.abs() > bv { (j, v.abs()) } else { (bj, bv) });
            if zmax <= z.dot(&x) {
                break;
            }
            x.fill(0.0);
            x[jmax] = 1.0;
        }
        est * self.norm1
    }
}

/// Solves a dense square system with partial-pivoting LU.
pub fn dense_solve(a: &Matrix, b: &Vector) -> Result<Vector> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() {
        return Err(RbError::DimensionMismatch(format!(
            "dense solve: {}x{} matrix with rhs of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or_else(|| RbError::Singular("dense system is singular".into()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(RbError::Singular("dense solve produced non-finite values".into()));
    }
    Ok(x)
}

/// Relative Frobenius distance `||a - b|| / ||b||`.
pub fn relative_frobenius(a: &Matrix, b: &Matrix) -> f64 {
    let denom = b.norm();
    let diff = (a - b).norm();
    if denom == 0.0 {
        diff
    } else {
        diff / denom
    }
}
