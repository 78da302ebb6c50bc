//! Small dense kernels for the d×d matrices in the hot loops.
//!
//! All matrices are row-major `&[f64]` of length `d*d`. The heavier
//! decompositions (symmetric eigen, general inverse) go through nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

/// In-place lower Cholesky factorisation. Returns `false` when the matrix is
/// not numerically positive definite. The strict upper triangle is zeroed.
pub fn cholesky_in_place(m: &mut [f64], d: usize) -> bool {
    for j in 0..d {
        let mut diag = m[j * d + j];
        for k in 0..j {
            diag -= m[j * d + k] * m[j * d + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return false;
        }
        let ljj = diag.sqrt();
        m[j * d + j] = ljj;
        for i in (j + 1)..d {
            let mut s = m[i * d + j];
            for k in 0..j {
                s -= m[i * d + k] * m[j * d + k];
            }
            m[i * d + j] = s / ljj;
        }
        for i in 0..j {
            m[i * d + j] = 0.0;
        }
    }
    true
}

/// Cholesky with escalating diagonal jitter: first plain, then `jitter`,
/// `10·jitter`, ... up to `1e-6`. `work` receives the factor.
pub fn cholesky_with_jitter(src: &[f64], d: usize, jitter: f64, work: &mut [f64]) -> bool {
    work.copy_from_slice(src);
    if cholesky_in_place(work, d) {
        return true;
    }
    let mut eps = if jitter > 0.0 { jitter } else { 1e-10 };
    while eps <= 1e-6 * (1.0 + 1e-9) {
        work.copy_from_slice(src);
        for i in 0..d {
            work[i * d + i] += eps;
        }
        if cholesky_in_place(work, d) {
            return true;
        }
        eps *= 10.0;
    }
    false
}

/// `vᵀ (L Lᵀ)⁻¹ v` given the lower factor `l`. `scratch` has length `d`.
pub fn chol_quad_form(l: &[f64], d: usize, v: &[f64], scratch: &mut [f64]) -> f64 {
    // forward solve L z = v; quadratic form is |z|²
    let mut q = 0.0;
    for i in 0..d {
        let mut s = v[i];
        for k in 0..i {
            s -= l[i * d + k] * scratch[k];
        }
        let z = s / l[i * d + i];
        scratch[i] = z;
        q += z * z;
    }
    q
}

/// `log det (L Lᵀ)`.
pub fn chol_log_det(l: &[f64], d: usize) -> f64 {
    2.0 * (0..d).map(|i| l[i * d + i].ln()).sum::<f64>()
}

/// `out = a aᵀ` for `a` of shape d×r.
pub fn outer_self(a: &[f64], d: usize, r: usize, out: &mut [f64]) {
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..r).map(|k| a[i * r + k] * a[j * r + k]).sum();
            out[i * d + j] = s;
            out[j * d + i] = s;
        }
    }
}

pub fn to_dmatrix(m: &[f64], d: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, d, m)
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn symmetrize(m: &mut [f64], d: usize) {
    for i in 0..d {
        for j in 0..i {
            let s = 0.5 * (m[i * d + j] + m[j * d + i]);
            m[i * d + j] = s;
            m[j * d + i] = s;
        }
    }
}

/// Symmetric PSD repair: eigenvalues clipped at zero.
pub fn clip_psd(m: &[f64], d: usize) -> Vec<f64> {
    let mut s = m.to_vec();
    symmetrize(&mut s, d);
    let eig = SymmetricEigen::new(to_dmatrix(&s, d));
    if eig.eigenvalues.iter().all(|&v| v >= 0.0) {
        return s;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let mut out = from_dmatrix(&rebuilt);
    symmetrize(&mut out, d);
    out
}

/// Symmetric PSD square root via eigendecomposition, negative eigenvalues
/// clipped at zero.
pub fn psd_sqrt(m: &[f64], d: usize) -> Vec<f64> {
    let mut s = m.to_vec();
    symmetrize(&mut s, d);
    let eig = SymmetricEigen::new(to_dmatrix(&s, d));
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose();
    let mut out = from_dmatrix(&rebuilt);
    symmetrize(&mut out, d);
    out
}

pub fn min_eigenvalue(m: &[f64], d: usize) -> f64 {
    let eig = SymmetricEigen::new(to_dmatrix(m, d));
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Inverse of a symmetric positive definite matrix, `None` if not PD.
pub fn spd_inverse(m: &[f64], d: usize) -> Option<Vec<f64>> {
    let chol = to_dmatrix(m, d).cholesky()?;
    let mut inv = from_dmatrix(&chol.inverse());
    symmetrize(&mut inv, d);
    Some(inv)
}

/// Row-major product of two d×d matrices.
pub fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

pub fn trace(m: &[f64], d: usize) -> f64 {
    (0..d).map(|i| m[i * d + i]).sum()
}

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}
