//! Dense complex linear algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dynamically sized complex matrix.
pub type CMat = DMatrix<Complex64>;

/// Singular value decomposition with a complete right basis.
///
/// `v` is always `n × n` (all right singular vectors, including those of the
/// null space) and `s` holds `min(m, n)` singular values sorted nonincreasing.
/// Columns of `v` are phase-normalized so that each column's largest-magnitude
/// entry is real and positive; the matching columns of `u` absorb the phase.
#[derive(Debug, Clone)]
pub struct FullSvd {
    pub u: CMat,
    pub s: Vec<f64>,
    pub v: CMat,
}

impl FullSvd {
    pub fn new(a: &CMat) -> Result<Self> {
        let (m, n) = a.shape();
        if n == 0 {
            return Err(Error::InvalidArgument("SVD of a matrix with no columns".into()));
        }
        // Padding with zero rows leaves the right singular structure unchanged and
        // lets the thin SVD return the full n × n right basis.
        let padded;
        let work = if m < n {
            let mut p = CMat::zeros(n, n);
            p.view_mut((0, 0), (m, n)).copy_from(a);
            padded = p;
            &padded
        } else {
            a
        };
        let svd = SVD::try_new(work.clone(), true, true, f64::EPSILON, 0)
            .ok_or_else(|| Error::Numeric(format!("SVD of {m}x{n} matrix did not converge")))?;
        let u_all = svd.u.expect("u requested");
        let vt = svd.v_t.expect("v requested");
        let k = svd.singular_values.len();

        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| {
            svd.singular_values[j]
                .partial_cmp(&svd.singular_values[i])
                .unwrap_or(std::cmp::Ordering::Equal)
        });

        let rows_u = m;
        let mut u = CMat::zeros(rows_u, m.min(n));
        let mut v = CMat::zeros(n, k);
        let mut s = Vec::with_capacity(m.min(n));
        for (dst, &src) in order.iter().enumerate() {
            let mut vcol = vt.row(src).adjoint();
            let phase = dominant_phase(vcol.as_slice());
            vcol *= phase.conj();
            v.set_column(dst, &vcol);
            if dst < m.min(n) {
                let ucol = u_all.column(src).rows(0, rows_u) * phase.conj();
                u.set_column(dst, &ucol);
                s.push(svd.singular_values[src]);
            }
        }
        Ok(FullSvd { u, s, v })
    }

    /// Numeric rank using `τ = max(m, n)·ε·σ_max`.
    pub fn rank(&self, rows: usize, cols: usize) -> usize {
        numeric_rank(&self.s, rows, cols)
    }
}

/// Count singular values above `max(m, n)·ε·σ_max`.
pub fn numeric_rank(s: &[f64], rows: usize, cols: usize) -> usize {
    let smax = s.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let tau = rows.max(cols) as f64 * f64::EPSILON * smax;
    s.iter().filter(|&&x| x > tau).count()
}

/// Unit phasor `e^{iθ}` of the largest-magnitude entry (1 for a zero vector).
pub fn dominant_phase(col: &[Complex64]) -> Complex64 {
    let mut best = Complex64::new(0.0, 0.0);
    let mut best_mag = -1.0;
    for &z in col {
        // Strict comparison keeps the first index on ties.
        let mag = z.norm_sqr();
        if mag > best_mag * (1.0 + 1e-12) {
            best = z;
            best_mag = mag;
        }
    }
    if best_mag <= 0.0 {
        Complex64::new(1.0, 0.0)
    } else {
        best / best.norm()
    }
}

/// `(A + Aᴴ)/2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Hermitian PSD square root via eigendecomposition.
///
/// Eigenvalues in `[-1e-10·λ_max, 0)` are clamped to zero; anything more
/// negative is reported as an internal error.
pub fn hermitian_sqrt_psd(a: &CMat) -> Result<CMat> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::InvalidArgument(format!(
            "square root of non-square {}x{} matrix",
            n,
            a.ncols()
        )));
    }
    let eig = SymmetricEigen::try_new(hermitian_part(a), f64::EPSILON, 0)
        .ok_or_else(|| Error::Numeric("Hermitian eigendecomposition did not converge".into()))?;
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let tol = 1e-10 * lmax;
    let mut roots = Vec::with_capacity(n);
    for &l in eig.eigenvalues.iter() {
        if l < -tol {
            return Err(Error::Internal(format!(
                "matrix is not positive semidefinite: eigenvalue {l:.3e} (λ_max = {lmax:.3e})"
            )));
        }
        roots.push(Complex64::new(l.max(0.0).sqrt(), 0.0));
    }
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for (j, r) in roots.iter().enumerate() {
        scaled.column_mut(j).scale_mut(r.re);
    }
    Ok(hermitian_part(&(scaled * q.adjoint())))
}

/// `log₂ det(M)` for a Hermitian positive definite `M`.
///
/// Uses the Cholesky factor of the Hermitian part; falls back to the
/// eigenvalues when the factorization fails.
pub fn log2det_hpd(m: &CMat) -> Result<f64> {
    let h = hermitian_part(m);
    if let Some(chol) = Cholesky::new(h.clone()) {
        let l = chol.l_dirty();
        let mut acc = 0.0;
        for i in 0..l.nrows() {
            acc += l[(i, i)].re.ln();
        }
        return Ok(2.0 * acc / std::f64::consts::LN_2);
    }
    let eig = SymmetricEigen::try_new(h, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numeric("eigendecomposition in log-det did not converge".into()))?;
    let mut acc = 0.0;
    for &l in eig.eigenvalues.iter() {
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::Numeric(format!(
                "log-det argument not positive definite (eigenvalue {l:.3e})"
            )));
        }
        acc += l.log2();
    }
    Ok(acc)
}

/// Real eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &CMat) -> Result<Vec<f64>> {
    let eig = SymmetricEigen::try_new(hermitian_part(m), f64::EPSILON, 0)
        .ok_or_else(|| Error::Numeric("Hermitian eigendecomposition did not converge".into()))?;
    let mut v: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Ok(v)
}

/// Frobenius norm.
pub fn fro(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `‖AᴴA − I‖_max`, zero for orthonormal columns.
pub fn gram_residual(a: &CMat) -> f64 {
    let g = a.adjoint() * a;
    let mut worst: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - Complex64::new(target, 0.0)).norm());
        }
    }
    worst
}
