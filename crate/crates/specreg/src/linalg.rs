//! Dense matrix arithmetic, spectral-norm estimation via warm-started
//! power iteration, the analytic gradient of the squared spectral norm,
//! and an exact one-sided Jacobi SVD used as a test oracle and for
//! spectrum reports.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Hard cap on min(rows, cols) for the exact SVD.
pub const SVD_SIZE_LIMIT: usize = 512;

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix, validating shape and finiteness.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::DimMismatch {
                context: "Matrix::new".into(),
                expected: format!("{} values", rows * cols),
                actual: format!("{} values", data.len()),
            });
        }
        if let Some(bad) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("matrix entry {bad}")));
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
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = diag[i];
        }
        m
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimMismatch {
                context: "matvec".into(),
                expected: format!("vector of length {}", self.cols),
                actual: format!("length {}", x.len()),
            });
        }
        let mut y = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            y[r] = acc;
        }
        Ok(y)
    }

    /// y = A^T x
    pub fn matvec_t(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::DimMismatch {
                context: "matvec_t".into(),
                expected: format!("vector of length {}", self.rows),
                actual: format!("length {}", x.len()),
            });
        }
        let mut y = vec![0.0; self.cols];
        for r in 0..self.rows {
            let xr = x[r];
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (yc, a) in y.iter_mut().zip(row) {
                *yc += a * xr;
            }
        }
        Ok(y)
    }

    /// C = A B
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimMismatch {
                context: "matmul".into(),
                expected: format!("{} rows on rhs", self.cols),
                actual: format!("{} rows", other.rows),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self.data[i * self.cols + k];
                if aik == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += aik * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Outer product scale * u v^T.
    pub fn outer(scale: f64, u: &[f64], v: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(u.len(), v.len());
        for (r, ur) in u.iter().enumerate() {
            let s = scale * ur;
            for (c, vc) in v.iter().enumerate() {
                m.data[r * v.len() + c] = s * vc;
            }
        }
        m
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Sum of squared entries; equal to the sum of squared singular values.
pub fn frobenius_norm_sq(w: &Matrix) -> f64 {
    w.data.iter().map(|x| x * x).sum()
}

/// Threshold below which W v is treated as a dead direction.
const DEAD_DIRECTION_TOL: f64 = 1e-300;

/// Warm-started estimate of the dominant singular triple of one matrix.
///
/// Holds the right/left singular vector estimates and the current sigma.
/// `rerandomized` is set when the last step hit a dead direction (W v = 0)
/// and had to draw a fresh start vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerIterState {
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    pub sigma: f64,
    pub rerandomized: bool,
    /// Key for the deterministic re-randomization stream.
    pub reseed_key: u64,
    /// Number of re-randomizations performed so far.
    pub reseed_count: u64,
}

impl PowerIterState {
    /// Fresh state with v drawn from a standard Gaussian and normalized.
    pub fn init<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let reseed_key = rng.gen();
        let mut v: Vec<f64> = (0..cols).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm2(&v);
        if n > 0.0 {
            for x in &mut v {
                *x /= n;
            }
        } else {
            v[0] = 1.0;
        }
        Self {
            v,
            u: vec![0.0; rows],
            sigma: 0.0,
            rerandomized: false,
            reseed_key,
            reseed_count: 0,
        }
    }

    /// State with an explicit start vector (normalized internally).
    pub fn with_vector(rows: usize, v: Vec<f64>) -> Self {
        let n = norm2(&v);
        let v = if n > 0.0 {
            v.into_iter().map(|x| x / n).collect()
        } else {
            v
        };
        Self {
            v,
            u: vec![0.0; rows],
            sigma: 0.0,
            rerandomized: false,
            reseed_key: 0,
            reseed_count: 0,
        }
    }

    fn redraw_v(&mut self, cols: usize) {
        let mut rng = ChaCha20Rng::seed_from_u64(self.reseed_key.wrapping_add(self.reseed_count));
        self.reseed_count += 1;
        let mut v: Vec<f64> = (0..cols).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm2(&v);
        for x in &mut v {
            *x /= n;
        }
        self.v = v;
        self.rerandomized = true;
    }
}

/// One normalized power-iteration step:
/// u <- normalize(W v), v <- normalize(W^T u), sigma <- u^T W v.
///
/// If W v vanishes the direction is unidentifiable; v is re-randomized
/// from the state's deterministic stream and `rerandomized` is flagged.
pub fn power_iter_step(w: &Matrix, state: &PowerIterState) -> Result<PowerIterState> {
    if state.v.len() != w.cols() {
        return Err(Error::DimMismatch {
            context: "power_iter_step".into(),
            expected: format!("v of length {}", w.cols()),
            actual: format!("length {}", state.v.len()),
        });
    }
    let vnorm = norm2(&state.v);
    if vnorm == 0.0 {
        return Err(Error::InvalidArgument("power_iter_step: zero start vector".into()));
    }

    let mut next = state.clone();
    next.rerandomized = false;

    let mut u = w.matvec(&state.v)?;
    let unorm = norm2(&u);
    if unorm <= DEAD_DIRECTION_TOL {
        next.redraw_v(w.cols());
        next.sigma = 0.0;
        next.u = vec![0.0; w.rows()];
        return Ok(next);
    }
    for x in &mut u {
        *x /= unorm;
    }

    let mut v = w.matvec_t(&u)?;
    let vnorm = norm2(&v);
    if vnorm <= DEAD_DIRECTION_TOL {
        next.redraw_v(w.cols());
        next.sigma = 0.0;
        next.u = vec![0.0; w.rows()];
        return Ok(next);
    }
    for x in &mut v {
        *x /= vnorm;
    }

    let wv = w.matvec(&v)?;
    next.sigma = dot(&u, &wv);
    next.u = u;
    next.v = v;
    Ok(next)
}

/// Runs `iters` power-iteration steps and returns the sigma estimate with
/// the updated state for warm-starting the next call.
pub fn spectral_norm(w: &Matrix, iters: usize, state: &PowerIterState) -> Result<(f64, PowerIterState)> {
    if iters == 0 {
        return Err(Error::InvalidArgument("spectral_norm: iters must be >= 1".into()));
    }
    let mut s = state.clone();
    let mut flagged = false;
    for _ in 0..iters {
        s = power_iter_step(w, &s)?;
        flagged |= s.rerandomized;
    }
    s.rerandomized = flagged;
    Ok((s.sigma, s))
}

/// Gradient of sigma(W)^2 / 2 at the state's singular triple: sigma u v^T.
/// Requires u and v to be unit vectors, i.e. a completed power_iter_step.
pub fn spectral_sq_grad(w: &Matrix, state: &PowerIterState) -> Result<Matrix> {
    let du = (norm2(&state.u) - 1.0).abs();
    let dv = (norm2(&state.v) - 1.0).abs();
    if du > 1e-8 || dv > 1e-8 {
        return Err(Error::NonUnitSingularVectors(du.max(dv)));
    }
    if state.u.len() != w.rows() || state.v.len() != w.cols() {
        return Err(Error::DimMismatch {
            context: "spectral_sq_grad".into(),
            expected: format!("u len {}, v len {}", w.rows(), w.cols()),
            actual: format!("u len {}, v len {}", state.u.len(), state.v.len()),
        });
    }
    Ok(Matrix::outer(state.sigma, &state.u, &state.v))
}

/// Full SVD result: A = U diag(s) V^T with orthonormal U, V columns and
/// singular values sorted nonincreasing.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub singular_values: Vec<f64>,
    /// rows x k, columns are left singular vectors.
    pub left_vectors: Matrix,
    /// cols x k, columns are right singular vectors.
    pub right_vectors: Matrix,
}

/// Exact SVD by one-sided Jacobi rotations (Hestenes). Desk-scale oracle:
/// min(rows, cols) must not exceed `SVD_SIZE_LIMIT`.
pub fn svd_exact(a: &Matrix) -> Result<SvdResult> {
    let min_dim = a.rows().min(a.cols());
    if min_dim > SVD_SIZE_LIMIT {
        return Err(Error::SvdSizeLimit {
            min_dim,
            limit: SVD_SIZE_LIMIT,
        });
    }
    // Work on a tall matrix so we orthogonalize at most min_dim columns.
    if a.rows() < a.cols() {
        let r = svd_exact(&a.transpose())?;
        return Ok(SvdResult {
            singular_values: r.singular_values,
            left_vectors: r.right_vectors,
            right_vectors: r.left_vectors,
        });
    }

    let m = a.rows();
    let n = a.cols();
    // Column-major working copy of A; columns converge to u_i * sigma_i.
    let mut b: Vec<Vec<f64>> = (0..n).map(|c| (0..m).map(|r| a.get(r, c)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|c| (0..n).map(|r| if r == c { 1.0 } else { 0.0 }).collect())
        .collect();

    let fro = frobenius_norm_sq(a).sqrt();
    let tol = 1e-15 * fro.max(f64::MIN_POSITIVE);
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut converged = true;
        for i in 0..n {
            for j in (i + 1)..n {
                let aii = dot(&b[i], &b[i]);
                let ajj = dot(&b[j], &b[j]);
                let aij = dot(&b[i], &b[j]);
                if aij.abs() <= tol * tol || aij.abs() <= 1e-14 * (aii * ajj).sqrt() {
                    continue;
                }
                converged = false;
                // Jacobi rotation zeroing the (i,j) entry of B^T B.
                let tau = (ajj - aii) / (2.0 * aij);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for r in 0..m {
                    let bi = b[i][r];
                    let bj = b[j][r];
                    b[i][r] = cs * bi - sn * bj;
                    b[j][r] = sn * bi + cs * bj;
                }
                for r in 0..n {
                    let vi = v[i][r];
                    let vj = v[j][r];
                    v[i][r] = cs * vi - sn * vj;
                    v[j][r] = sn * vi + cs * vj;
                }
            }
        }
        if converged {
            break;
        }
    }

    // Extract sigmas, normalize U columns, complete zero columns to an
    // orthonormal set.
    let mut order: Vec<usize> = (0..n).collect();
    let sigmas: Vec<f64> = b.iter().map(|col| norm2(col)).collect();
    order.sort_by(|&x, &y| sigmas[y].partial_cmp(&sigmas[x]).unwrap());

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut s_sorted: Vec<f64> = Vec::with_capacity(n);
    let rank_tol = 1e-14 * fro.max(f64::MIN_POSITIVE);
    for &idx in &order {
        let s = sigmas[idx];
        s_sorted.push(s);
        v_cols.push(v[idx].clone());
        if s > rank_tol {
            u_cols.push(b[idx].iter().map(|x| x / s).collect());
        } else {
            u_cols.push(vec![0.0; m]);
        }
    }
    // Fill null-space U columns by Gram-Schmidt against the basis so far.
    for k in 0..n {
        if s_sorted[k] > rank_tol {
            continue;
        }
        'basis: for e in 0..m {
            let mut cand = vec![0.0; m];
            cand[e] = 1.0;
            for col in u_cols.iter().take(n) {
                let proj = dot(&cand, col);
                for (c, u) in cand.iter_mut().zip(col) {
                    *c -= proj * u;
                }
            }
            let nrm = norm2(&cand);
            if nrm > 1e-6 {
                for c in &mut cand {
                    *c /= nrm;
                }
                u_cols[k] = cand;
                break 'basis;
            }
        }
        s_sorted[k] = 0.0;
    }

    let mut left = Matrix::zeros(m, n);
    let mut right = Matrix::zeros(n, n);
    for c in 0..n {
        for r in 0..m {
            left.set(r, c, u_cols[c][r]);
        }
        for r in 0..n {
            right.set(r, c, v_cols[c][r]);
        }
    }
    Ok(SvdResult {
        singular_values: s_sorted,
        left_vectors: left,
        right_vectors: right,
    })
}
