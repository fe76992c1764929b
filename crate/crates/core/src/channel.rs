//! Rayleigh broadcast channels with optional transmit correlation and CSI error.

use std::ops::Range;

use nalgebra::DMatrixView;
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_sqrt_psd, CMat};
use crate::rng::complex_normal;
use crate::scenario::SystemScenario;

/// Combined downlink channel and the transmitter's estimate of it.
///
/// Precoders are built from `h_est`; rates are evaluated on `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub h: CMat,
    pub h_est: CMat,
    user_offsets: Vec<Range<usize>>,
}

impl ChannelSet {
    /// Wrap a channel with perfect CSI. The row partition must cover all rows.
    pub fn new(h: CMat, n_rx_per_user: &[usize]) -> Result<Self> {
        let total: usize = n_rx_per_user.iter().sum();
        if total != h.nrows() {
            return Err(Error::InvalidArgument(format!(
                "user partition covers {total} rows but channel has {}",
                h.nrows()
            )));
        }
        if n_rx_per_user.contains(&0) {
            return Err(Error::InvalidArgument("user with zero receive antennas".into()));
        }
        let mut start = 0;
        let user_offsets = n_rx_per_user
            .iter()
            .map(|&n| {
                let r = start..start + n;
                start += n;
                r
            })
            .collect();
        Ok(ChannelSet {
            h_est: h.clone(),
            h,
            user_offsets,
        })
    }

    pub fn users(&self) -> usize {
        self.user_offsets.len()
    }

    pub fn n_tx(&self) -> usize {
        self.h.ncols()
    }

    pub fn n_rx_total(&self) -> usize {
        self.h.nrows()
    }

    pub fn user_offsets(&self) -> &[Range<usize>] {
        &self.user_offsets
    }

    pub fn n_rx_per_user(&self) -> Vec<usize> {
        self.user_offsets.iter().map(|r| r.len()).collect()
    }

    /// True channel block `H_j`.
    pub fn user_block(&self, j: usize) -> DMatrixView<'_, Complex64> {
        let r = &self.user_offsets[j];
        self.h.rows(r.start, r.len())
    }

    /// Estimated channel block `Ĥ_j`.
    pub fn est_block(&self, j: usize) -> DMatrixView<'_, Complex64> {
        let r = &self.user_offsets[j];
        self.h_est.rows(r.start, r.len())
    }
}

/// Draw an i.i.d. `CN(0, 1)` channel of shape `N_u × N_b`.
///
/// Entries are drawn in row-major order, real part first.
pub fn gen_channel<R: Rng + ?Sized>(scenario: &SystemScenario, rng: &mut R) -> ChannelSet {
    let (nu, nb) = (scenario.n_rx_total(), scenario.n_tx);
    let mut h = CMat::zeros(nu, nb);
    for i in 0..nu {
        for j in 0..nb {
            h[(i, j)] = complex_normal(rng);
        }
    }
    ChannelSet::new(h, &scenario.n_rx_per_user).expect("scenario partition matches channel")
}

/// Transmit correlation matrix with `R[i][j] = r^(j−i)` for `i ≤ j` and the
/// conjugate below the diagonal.
pub fn correlation_matrix(r: Complex64, n: usize) -> Result<CMat> {
    if !(r.norm() <= 1.0) {
        return Err(Error::InvalidArgument(format!("|r| = {} exceeds 1", r.norm())));
    }
    let mut m = CMat::zeros(n, n);
    let mut power = Complex64::new(1.0, 0.0);
    let mut powers = Vec::with_capacity(n);
    for _ in 0..n {
        powers.push(power);
        power *= r;
    }
    for i in 0..n {
        for j in i..n {
            let v = powers[j - i];
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
        m[(i, i)] = Complex64::new(1.0, 0.0);
    }
    Ok(m)
}

/// Replace the estimate with `Ĥ = H·R̃^{1/2} + E`, `E` i.i.d. `CN(0, σ_e²)`.
///
/// With `r = 0` the correlation factor is skipped (exact identity), and with
/// `σ_e² = 0` no error samples are drawn.
pub fn apply_csi_impairment<R: Rng + ?Sized>(
    mut channels: ChannelSet,
    r: Complex64,
    sigma_e2: f64,
    rng: &mut R,
) -> Result<ChannelSet> {
    if !(sigma_e2 >= 0.0 && sigma_e2.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma_e2 = {sigma_e2} must be >= 0")));
    }
    let mut est = if r == Complex64::new(0.0, 0.0) {
        channels.h.clone()
    } else {
        let root = hermitian_sqrt_psd(&correlation_matrix(r, channels.n_tx())?)?;
        &channels.h * root
    };
    if sigma_e2 > 0.0 {
        let sd = sigma_e2.sqrt();
        for i in 0..est.nrows() {
            for j in 0..est.ncols() {
                est[(i, j)] += complex_normal(rng) * sd;
            }
        }
    }
    channels.h_est = est;
    Ok(channels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::hermitian_eigenvalues;
    use crate::rng::trial_rng;
    use proptest::prelude::*;

    fn scenario(nu_per: Vec<usize>, nb: usize) -> SystemScenario {
        SystemScenario {
            n_tx: nb,
            n_rx_per_user: nu_per,
            snr_db_grid: vec![0.0],
            total_power: 1.0,
            bits: vec![3],
            corr_coeff: Complex64::new(0.0, 0.0),
            csi_error_var: 0.0,
            trials: 1,
            seed: 1,
        }
    }

    #[test]
    fn same_seed_same_channel() {
        let s = scenario(vec![2, 2], 8);
        let a = gen_channel(&s, &mut trial_rng(3, 0));
        let b = gen_channel(&s, &mut trial_rng(3, 0));
        assert_eq!(a.h, b.h);
        assert_eq!(a.h, a.h_est);
    }

    #[test]
    fn shape_and_offsets() {
        let s = scenario(vec![1, 1], 4);
        let c = gen_channel(&s, &mut trial_rng(0, 0));
        assert_eq!(c.h.shape(), (2, 4));
        assert_eq!(c.user_offsets(), &[0..1, 1..2]);
        assert_eq!(c.user_block(1).nrows(), 1);
    }

    #[test]
    fn entry_moments() {
        // 32×64 per draw, 10⁴ draws would be 2·10⁷ entries; 500 draws already
        // pins the variance far below the ±0.02 band.
        let s = scenario(vec![2; 16], 64);
        let mut rng = trial_rng(11, 0);
        let (mut sum, mut sq, mut re2, mut n) = (Complex64::new(0.0, 0.0), 0.0, 0.0, 0usize);
        for _ in 0..500 {
            let c = gen_channel(&s, &mut rng);
            for z in c.h.iter() {
                sum += z;
                sq += z.norm_sqr();
                re2 += z.re * z.re;
                n += 1;
            }
        }
        let nf = n as f64;
        let mean = sum / nf;
        assert!(mean.norm() < 3.0 / nf.sqrt(), "mean {mean}");
        let var = sq / nf;
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
        assert!((re2 / nf - 0.5).abs() < 0.01);
    }

    #[test]
    fn correlation_examples() {
        let id = correlation_matrix(Complex64::new(0.0, 0.0), 3).unwrap();
        assert_eq!(id, CMat::identity(3, 3));

        let m = correlation_matrix(Complex64::new(0.72, 0.0), 2).unwrap();
        assert_eq!(m[(0, 1)], Complex64::new(0.72, 0.0));
        assert_eq!(m[(1, 0)], Complex64::new(0.72, 0.0));

        let m = correlation_matrix(Complex64::new(0.91, 0.0), 3).unwrap();
        let expect = [[1.0, 0.91, 0.8281], [0.91, 1.0, 0.91], [0.8281, 0.91, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((m[(i, j)].re - expect[i][j]).abs() < 1e-15);
                assert_eq!(m[(i, j)].im, 0.0);
            }
        }
        assert!(correlation_matrix(Complex64::new(1.2, 0.0), 3).is_err());
    }

    #[test]
    fn complex_correlation_is_hermitian() {
        let r = Complex64::from_polar(0.8, 0.7);
        let m = correlation_matrix(r, 5).unwrap();
        assert_eq!(m, m.adjoint());
        assert!((m[(1, 3)] - r * r).norm() < 1e-15);
    }

    #[test]
    fn identity_impairment() {
        let s = scenario(vec![2, 2], 6);
        let c = gen_channel(&s, &mut trial_rng(1, 0));
        let out = apply_csi_impairment(c.clone(), Complex64::new(0.0, 0.0), 0.0, &mut trial_rng(1, 1))
            .unwrap();
        assert_eq!(out.h_est, c.h);
        assert_eq!(out.h, c.h);
    }

    #[test]
    fn error_variance_matches() {
        let s = scenario(vec![2; 8], 64);
        let mut rng = trial_rng(5, 0);
        let (mut acc, mut n) = (0.0, 0usize);
        let r = Complex64::new(0.72, 0.0);
        let root = hermitian_sqrt_psd(&correlation_matrix(r, 64).unwrap()).unwrap();
        while n < 100_000 {
            let c = gen_channel(&s, &mut rng);
            let out = apply_csi_impairment(c, r, 0.16, &mut rng).unwrap();
            let e = &out.h_est - &out.h * &root;
            acc += e.iter().map(|z| z.norm_sqr()).sum::<f64>();
            n += e.len();
        }
        let var = acc / n as f64;
        assert!((var - 0.16).abs() < 0.16 * 0.05, "{var}");
    }

    #[test]
    fn correlated_row_covariance() {
        let r = Complex64::new(0.72, 0.0);
        let target = correlation_matrix(r, 4).unwrap();
        let s = scenario(vec![1], 4);
        let mut rng = trial_rng(8, 0);
        let mut cov = CMat::zeros(4, 4);
        let draws = 10_000;
        for _ in 0..draws {
            let c = gen_channel(&s, &mut rng);
            let out = apply_csi_impairment(c, r, 0.0, &mut rng).unwrap();
            let row = out.h_est.row(0);
            // E[xᵀ x̄] for x = h R^{1/2} equals R^{1/2}ᴴ R^{1/2} = R (R^{1/2} Hermitian).
            cov += row.transpose() * row.map(|z| z.conj());
        }
        cov /= Complex64::new(draws as f64, 0.0);
        let cov = cov.map(|z| z.conj());
        let err = (0..16).map(|k| (cov[(k / 4, k % 4)] - target[(k / 4, k % 4)]).norm()).fold(0.0, f64::max);
        assert!(err < 0.05, "max covariance error {err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn correlation_is_psd(mag in 0.0f64..=1.0, phase in -3.2f64..3.2, n in 1usize..=256) {
            let m = correlation_matrix(Complex64::from_polar(mag, phase), n).unwrap();
            prop_assert_eq!(&m, &m.adjoint());
            let ev = hermitian_eigenvalues(&m).unwrap();
            prop_assert!(ev[0] >= -1e-10, "min eigenvalue {}", ev[0]);
        }
    }
}
