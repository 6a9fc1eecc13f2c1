//! Dense real linear algebra: a row-major matrix type, a cyclic Jacobi
//! eigensolver for symmetric matrices, correlation statistics and PCA by
//! power iteration with deflation.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::{rng_from_seed, standard_normal};

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from a row-major buffer.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("matrix buffer", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            check_len("matrix row", cols, row.len())?;
            data.extend_from_slice(row);
        }
        Ok(Self {
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

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_len("matmul inner dimension", self.cols, other.rows)?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("matvec", self.cols, v.len())?;
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Square matrix whose entries are exactly symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    /// Symmetrizes `m` as `(m + mᵀ) / 2`.
    pub fn new(m: Matrix) -> Result<Self> {
        check_len("symmetric matrix", m.rows, m.cols)?;
        let n = m.rows;
        let mut out = m;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = (out.get(i, j) + out.get(j, i)) / 2.0;
                out.set(i, j, avg);
                out.set(j, i, avg);
            }
        }
        Ok(Self(out))
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        Self::new(Matrix::from_fn(dim, dim, f)).expect("square by construction")
    }

    pub fn diagonal(values: &[f64]) -> Self {
        Self::from_fn(values.len(), |i, j| if i == j { values[i] } else { 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// Eigendecomposition of a symmetric matrix, eigenpairs ordered by
/// decreasing eigenvalue magnitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the unit eigenvector of `eigenvalues[k]`.
    pub eigenvectors: Matrix,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvector(&self, k: usize) -> Vec<f64> {
        self.eigenvectors.column(k)
    }

    /// `U Λ Uᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.dim();
        let u = &self.eigenvectors;
        Matrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| u.get(i, k) * self.eigenvalues[k] * u.get(j, k))
                .sum()
        })
    }
}

pub const JACOBI_TOLERANCE: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows;
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            sum += a.get(i, j) * a.get(i, j);
        }
    }
    (2.0 * sum).sqrt()
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Sweeps stop once the off-diagonal Frobenius norm drops below
/// `1e-12 · max(1, ‖A‖_F)` or after 100 sweeps. Each eigenvector is signed so
/// that its largest-magnitude entry (first one on ties) is positive.
pub fn eigh_symmetric(input: &SymMatrix) -> Result<Spectrum> {
    let mut a = input.as_matrix().clone();
    if !a.is_finite() {
        return Err(Error::NonFinite("eigh_symmetric input"));
    }
    let n = a.rows;
    // Rows of `vt` are the eigenvectors being accumulated.
    let mut vt = Matrix::identity(n);
    let stop = JACOBI_TOLERANCE * a.frobenius_norm().max(1.0);

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&a) < stop {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.data[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a.data[p * n + p];
                let aqq = a.data[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a.data[p * n + k];
                    let akq = a.data[q * n + k];
                    let new_p = c * akp - s * akq;
                    let new_q = s * akp + c * akq;
                    a.data[p * n + k] = new_p;
                    a.data[q * n + k] = new_q;
                    a.data[k * n + p] = new_p;
                    a.data[k * n + q] = new_q;
                }
                a.data[p * n + p] = app - t * apq;
                a.data[q * n + q] = aqq + t * apq;
                a.data[p * n + q] = 0.0;
                a.data[q * n + p] = 0.0;
                let (head, tail) = vt.data.split_at_mut(q * n);
                let vp = &mut head[p * n..(p + 1) * n];
                let vq = &mut tail[..n];
                for (x, y) in vp.iter_mut().zip(vq.iter_mut()) {
                    let (xp, xq) = (*x, *y);
                    *x = c * xp - s * xq;
                    *y = s * xp + c * xq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).abs().total_cmp(&a.get(i, i).abs()));

    let eigenvalues = order.iter().map(|&i| a.get(i, i)).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = vt.row(src).to_vec();
        canonical_sign(&mut col);
        for (k, x) in col.into_iter().enumerate() {
            eigenvectors.set(k, dst, x);
        }
    }
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
    })
}

/// Flips `v` so that its largest-magnitude entry is positive.
pub fn canonical_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_len("pearson", x.len(), y.len())?;
    if x.len() < 2 {
        return Err(Error::InvalidArgument(
            "pearson needs at least two observations".into(),
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pearson input"));
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateVariance("pearson"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the average of their ranks.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_len("spearman", x.len(), y.len())?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Sample covariance of the rows of `x` with `1/(n-1)` normalization.
pub fn covariance(x: &Matrix) -> Result<(Vec<f64>, SymMatrix)> {
    let (n, d) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::InvalidArgument(
            "covariance needs at least two rows".into(),
        ));
    }
    let mut mu = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mu.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for i in 0..n {
        for ((c, v), m) in centered.iter_mut().zip(x.row(i)).zip(&mu) {
            *c = v - m;
        }
        for a in 0..d {
            let ca = centered[a];
            if ca == 0.0 {
                continue;
            }
            let row = &mut cov.data[a * d..(a + 1) * d];
            for (b, cb) in row.iter_mut().zip(&centered).skip(a) {
                *b += ca * cb;
            }
        }
    }
    let scale = 1.0 / (n - 1) as f64;
    for a in 0..d {
        for b in a..d {
            let val = cov.get(a, b) * scale;
            cov.set(a, b, val);
            cov.set(b, a, val);
        }
    }
    Ok((mu, SymMatrix(cov)))
}

/// Principal component model: projects onto the top-`k` covariance
/// eigenvectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k × d`; rows are orthonormal principal directions.
    pub components: Matrix,
    /// Covariance eigenvalue of each component.
    pub variances: Vec<f64>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    /// `components · (x − mean)`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("pca_project", self.mean.len(), x.len())?;
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        self.components.matvec(&centered)
    }
}

pub const PCA_TOLERANCE: f64 = 1e-9;
pub const PCA_MAX_ITERATIONS: usize = 1000;

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    // Two passes of classical Gram–Schmidt.
    for _ in 0..2 {
        for b in basis {
            let proj = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
    }
}

/// Fits a `k`-component PCA to the rows of `x` by power iteration with
/// Gram–Schmidt deflation.
pub fn pca_fit(x: &Matrix, k: usize) -> Result<PcaModel> {
    let (n, d) = (x.rows(), x.cols());
    if k == 0 || n <= k || d < k {
        return Err(Error::InvalidArgument(format!(
            "pca_fit needs n > k and d >= k >= 1 (n={n}, d={d}, k={k})"
        )));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("pca_fit input"));
    }
    let (mean, cov) = covariance(x)?;
    let cov = cov.as_matrix();
    let mut rng = rng_from_seed(0x5CA1_AB1E);
    let mut found: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);

    for _ in 0..k {
        let mut v: Vec<f64> = (0..d).map(|_| standard_normal(&mut rng)).collect();
        orthogonalize(&mut v, &found);
        normalize(&mut v);
        let mut converged = false;
        let mut residual = f64::INFINITY;
        for _ in 0..PCA_MAX_ITERATIONS {
            let mut w = cov.matvec(&v)?;
            orthogonalize(&mut w, &found);
            let len = norm2(&w);
            if len <= f64::EPSILON * cov.frobenius_norm().max(1.0) {
                // Remaining subspace carries no variance: any completion is
                // an eigenvector with eigenvalue zero.
                v = complete_basis(d, &found);
                converged = true;
                break;
            }
            w.iter_mut().for_each(|x| *x /= len);
            residual = w.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            v = w;
            if residual < PCA_TOLERANCE {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence {
                what: "pca power iteration",
                iterations: PCA_MAX_ITERATIONS,
                residual,
            });
        }
        let cv = cov.matvec(&v)?;
        variances.push(dot(&v, &cv));
        canonical_sign(&mut v);
        found.push(v);
    }

    let components = Matrix::from_rows(&found)?;
    Ok(PcaModel {
        mean,
        components,
        variances,
    })
}

pub fn pca_project(model: &PcaModel, x: &[f64]) -> Result<Vec<f64>> {
    model.project(x)
}

fn normalize(v: &mut [f64]) {
    let len = norm2(v);
    if len > 0.0 {
        v.iter_mut().for_each(|x| *x /= len);
    }
}

fn complete_basis(d: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    let mut best = vec![0.0; d];
    let mut best_len = -1.0;
    for axis in 0..d {
        let mut e = vec![0.0; d];
        e[axis] = 1.0;
        orthogonalize(&mut e, basis);
        let len = norm2(&e);
        if len > best_len + 1e-12 {
            best_len = len;
            best = e;
        }
    }
    normalize(&mut best);
    best
}
