//! Achievable sum-rates and closed-form complexity counts.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_part, log2det_hpd, CMat};
use crate::power::{rate_objective, AllocationResult};
use crate::precoder::PrecoderResult;

/// Which signal covariance the Bussgang rate uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RateVariant {
    /// `log₂det[I + A((1−δ²)A + I)⁻¹]`, `A = (SNR/N_u)(HP)(HP)ᴴ`. The signal
    /// term carries no `δ²`, so the rate stays positive at `δ = 0`.
    #[default]
    UnitSignal,
    /// Signal term scaled by `δ²`: `log₂det[I + δ²A((1−δ²)A + I)⁻¹]`.
    ScaledSignal,
}

/// Sum-rate in bits per channel use of the linearized quantized link
/// `y = δHPs + Hf + n`, with `N_u = h.nrows()`.
pub fn sum_rate_bussgang(h: &CMat, p: &CMat, delta: f64, snr: f64, variant: RateVariant) -> Result<f64> {
    if h.ncols() != p.nrows() {
        return Err(Error::InvalidArgument(format!(
            "channel is {}x{} but precoder is {}x{}",
            h.nrows(),
            h.ncols(),
            p.nrows(),
            p.ncols()
        )));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidArgument(format!("Bussgang gain {delta} outside [0, 1]")));
    }
    if !(snr >= 0.0 && snr.is_finite()) {
        return Err(Error::InvalidArgument(format!("SNR {snr} must be finite and ≥ 0")));
    }
    let nu = h.nrows();
    let hp = h * p;
    let a = hermitian_part(&(&hp * hp.adjoint() * Complex64::new(snr / nu as f64, 0.0)));
    let c = 1.0 - delta * delta;
    let gain = match variant {
        RateVariant::UnitSignal => 1.0 + c,
        RateVariant::ScaledSignal => 1.0,
    };
    let eye = DMatrix::<Complex64>::identity(nu, nu);
    let num = log2det_hpd(&(&eye + &a * Complex64::new(gain, 0.0)))?;
    let den = log2det_hpd(&(&eye + &a * Complex64::new(c, 0.0)))?;
    let rate = num - den;
    if !rate.is_finite() {
        return Err(Error::Numeric(format!(
            "rate evaluated to {rate} (log-det terms {num:.6e}, {den:.6e})"
        )));
    }
    // Exact arithmetic gives rate ≥ 0; roundoff can leave a tiny negative.
    Ok(rate.max(0.0))
}

/// Per-stream surrogate rate over a block-diagonalizing precoder's spectrum.
pub fn sum_rate_blockwise(
    precoder: &PrecoderResult,
    allocation: &AllocationResult,
    delta: f64,
    noise_power: f64,
) -> Result<f64> {
    rate_objective(&allocation.omega, &precoder.spectrum().phi, delta, noise_power)
}

/// Precoder families with a closed-form operation count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlopsKind {
    Bd,
    Rbd,
    CqaBd { bits: u32 },
    CqaRbd { bits: u32 },
}

/// FLOPs charged per exponential or error-function evaluation.
pub const TRANSCENDENTAL_FLOPS: u64 = 25;

/// Cost of evaluating `α` and `δ` for a `bits`-bit DAC: `2(J−1)` terms.
pub fn flops_bussgang(bits: u32) -> u64 {
    2 * ((1u64 << bits) - 1) * TRANSCENDENTAL_FLOPS
}

/// `N_b²(32N_j + 8) + N_b(32N_u² + 72N_j²) + 64N_u²`, plus the Bussgang cost
/// for the quantization-aware kinds.
pub fn flops_precoder(kind: FlopsKind, n_tx: u64, n_rx_total: u64, n_rx_user: u64) -> u64 {
    let (nb, nu, nj) = (n_tx, n_rx_total, n_rx_user);
    let base = nb * nb * (32 * nj + 8) + nb * (32 * nu * nu + 72 * nj * nj) + 64 * nu * nu;
    match kind {
        FlopsKind::Bd | FlopsKind::Rbd => base,
        FlopsKind::CqaBd { bits } | FlopsKind::CqaRbd { bits } => base + flops_bussgang(bits),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AllocationMethod {
    WaterFilling,
    Maas,
}

/// Asymptotic cost class of an allocation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComplexityClass {
    /// Linear in the number of sub-channels.
    Linear,
}

impl fmt::Display for ComplexityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComplexityClass::Linear => f.write_str("O(N_u)"),
        }
    }
}

pub fn flops_allocation(method: AllocationMethod, _n: usize) -> ComplexityClass {
    match method {
        AllocationMethod::WaterFilling | AllocationMethod::Maas => ComplexityClass::Linear,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelSet;
    use crate::linalg::hermitian_eigenvalues;
    use crate::power::Allocator;
    use crate::precoder::{build_cqa_precoder, PrecoderKind};
    use crate::rng::{complex_normal, trial_rng};
    use proptest::prelude::*;

    fn random(rows: usize, cols: usize, seed: u64) -> CMat {
        let mut rng = trial_rng(seed, 1);
        CMat::from_fn(rows, cols, |_, _| complex_normal(&mut rng))
    }

    #[test]
    fn identity_examples() {
        let i2 = CMat::identity(2, 2);
        let r = sum_rate_bussgang(&i2, &i2, 1.0, 2.0, RateVariant::UnitSignal).unwrap();
        assert!((r - 2.0).abs() < 1e-14);
        let r = sum_rate_bussgang(&i2, &i2, 0.0, 2.0, RateVariant::UnitSignal).unwrap();
        assert!((r - 2.0 * 1.5f64.log2()).abs() < 1e-14);
        let r = sum_rate_bussgang(&i2, &i2, 0.0, 2.0, RateVariant::ScaledSignal).unwrap();
        assert!(r.abs() < 1e-14);
        assert_eq!(sum_rate_bussgang(&i2, &i2, 0.7, 0.0, RateVariant::UnitSignal).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        let i2 = CMat::identity(2, 2);
        assert!(sum_rate_bussgang(&i2, &CMat::identity(3, 3), 1.0, 1.0, RateVariant::UnitSignal).is_err());
        assert!(sum_rate_bussgang(&i2, &i2, 1.2, 1.0, RateVariant::UnitSignal).is_err());
        assert!(sum_rate_bussgang(&i2, &i2, 1.0, f64::NAN, RateVariant::UnitSignal).is_err());
    }

    #[test]
    fn spectral_evaluation_agrees() {
        for seed in 0..100 {
            let h = random(6, 10, seed);
            let p = random(10, 6, 1000 + seed) * Complex64::new(0.3, 0.0);
            let delta = 0.2 + 0.008 * seed as f64;
            let snr = 10f64.powf((seed % 7) as f64 / 2.0);
            let hp = &h * &p;
            let a = &hp * hp.adjoint() * Complex64::new(snr / 6.0, 0.0);
            let c = 1.0 - delta * delta;
            let want: f64 = hermitian_eigenvalues(&a)
                .unwrap()
                .into_iter()
                .map(|l| (1.0 + l / (c * l + 1.0)).log2())
                .sum();
            let got = sum_rate_bussgang(&h, &p, delta, snr, RateVariant::UnitSignal).unwrap();
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn blockwise_matches_full_rate_on_bd() {
        let h = random(6, 10, 3);
        let ch = ChannelSet::new(h, &[2, 2, 2]).unwrap();
        let snr = 10.0;
        for alloc in [Allocator::Equal, Allocator::WaterFilling] {
            let (pre, a) = build_cqa_precoder(&ch, PrecoderKind::Bd, snr, &alloc).unwrap();
            let blk = sum_rate_blockwise(&pre, &a, 1.0, 6.0 / snr).unwrap();
            let full = sum_rate_bussgang(&ch.h, &pre.p, 1.0, snr, RateVariant::UnitSignal).unwrap();
            assert!((blk - full).abs() <= 1e-6 * full, "{blk} vs {full}");
            let eq17 = rate_objective(&a.omega, &pre.spectrum().phi, 1.0, 6.0 / snr).unwrap();
            assert_eq!(blk, eq17);
        }
        let (pre, a) = build_cqa_precoder(&ch, PrecoderKind::Bd, snr, &Allocator::Equal).unwrap();
        let classical: f64 = pre.spectrum().phi.iter().map(|p| (1.0 + p * p / 0.6).log2()).sum();
        assert!((sum_rate_blockwise(&pre, &a, 1.0, 0.6).unwrap() - classical).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn monotone_in_delta(seed in any::<u64>(), snr_db in -5.0f64..30.0) {
            let h = random(4, 6, seed);
            let p = random(6, 4, seed ^ 0x5555) * Complex64::new(0.4, 0.0);
            let snr = 10f64.powf(snr_db / 10.0);
            let mut prev = -1.0;
            for k in 0..=16 {
                let d = 0.2 + 0.05 * k as f64;
                let r = sum_rate_bussgang(&h, &p, d.min(1.0), snr, RateVariant::UnitSignal).unwrap();
                prop_assert!(r.is_finite() && r >= 0.0);
                prop_assert!(r >= prev - 1e-10 * r.max(1.0));
                prev = r;
            }
        }

        #[test]
        fn flops_is_polynomial(nb in 1u64..512, nu in 1u64..128, nj in 1u64..8, bits in 1u32..12) {
            let f = |a, b, c| flops_precoder(FlopsKind::Bd, a, b, c);
            prop_assert_eq!(f(nb, nu, nj), flops_precoder(FlopsKind::Rbd, nb, nu, nj));
            prop_assert_eq!(
                flops_precoder(FlopsKind::CqaBd { bits }, nb, nu, nj) - f(nb, nu, nj),
                flops_bussgang(bits)
            );
            prop_assert_eq!(
                flops_precoder(FlopsKind::CqaRbd { bits }, nb, nu, nj),
                flops_precoder(FlopsKind::CqaBd { bits }, nb, nu, nj)
            );
            // Second difference in N_j is constant: 144·N_b.
            prop_assert_eq!(f(nb, nu, nj + 2) + f(nb, nu, nj) - 2 * f(nb, nu, nj + 1), 144 * nb);
            // Additive split into N_b-only, N_u-only and mixed terms.
            let mixed = f(nb, nu, nj) - f(nb, 0, nj) - f(0, nu, nj);
            prop_assert_eq!(mixed, 32 * nb * nu * nu);
        }
    }

    #[test]
    fn flops_reference_point() {
        assert_eq!(flops_precoder(FlopsKind::Bd, 64, 32, 2), 2_476_032);
        assert_eq!(flops_bussgang(3), 350);
        assert_eq!(
            flops_precoder(FlopsKind::CqaBd { bits: 3 }, 128, 32, 2) - flops_precoder(FlopsKind::Bd, 128, 32, 2),
            flops_precoder(FlopsKind::CqaBd { bits: 3 }, 64, 32, 2) - flops_precoder(FlopsKind::Bd, 64, 32, 2),
        );
        for m in [AllocationMethod::WaterFilling, AllocationMethod::Maas] {
            assert_eq!(flops_allocation(m, 32).to_string(), "O(N_u)");
        }
    }
}
