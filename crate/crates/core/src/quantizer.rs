//! Few-bit uniform DAC and its Bussgang linearization.
//!
//! Each real dimension is quantized by a symmetric midrise quantizer with
//! `J = 2^b` levels `γ(l − (J−1)/2)`, `l = 0..J−1`, and decision thresholds
//! `γ(l − J/2)`, `l = 1..J−1`. The output is scaled by `α` so the quantized
//! vector carries the total power `P` when the input per real dimension is
//! `N(0, P/(2N_b))`. Under that input the quantizer decomposes as
//! `Q(x) = δx + f` with `f` uncorrelated with `x`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::rng::complex_normal;
use crate::scenario::MAX_BITS;

/// How the quantizer step is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepPolicy {
    /// Step `γ` per real dimension, in input units.
    Explicit(f64),
    /// Minimize mean-square distortion for the Gaussian design input.
    MseOptimal,
}

/// Immutable DAC model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerModel {
    pub bits: u32,
    pub levels: u32,
    pub step: f64,
    pub total_power: f64,
    pub n_tx: usize,
    pub alpha: f64,
    pub delta: f64,
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn threshold_offsets(levels: u32) -> impl Iterator<Item = f64> {
    let half = levels as f64 / 2.0;
    (1..levels).map(move |l| l as f64 - half)
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
    }
}

/// Output normalization `α`.
///
/// `α = (2N_bγ²/P · [((J−1)/2)² − 2 Σ_{l=1}^{J−1} (l − J/2) Φ(√(2N_b/P)·γ·(l − J/2))])^{−1/2}`
/// where `Φ` is the standard normal CDF. The bracket is `E[y²]/γ²` for the
/// unscaled quantizer output `y` under the design input.
pub fn normalization_alpha(gamma: f64, levels: u32, n_tx: usize, power: f64) -> Result<f64> {
    check_positive("step", gamma)?;
    check_positive("power", power)?;
    if levels < 2 || n_tx == 0 {
        return Err(Error::InvalidArgument(format!(
            "need J >= 2 and N_b >= 1, got J = {levels}, N_b = {n_tx}"
        )));
    }
    let nb = n_tx as f64;
    let arg_scale = (2.0 * nb / power).sqrt() * gamma;
    let outer = (levels as f64 - 1.0) / 2.0;
    let tail: f64 = threshold_offsets(levels)
        .map(|c| c * normal_cdf(arg_scale * c))
        .sum();
    let bracket = outer * outer - 2.0 * tail;
    if !(bracket > 0.0) {
        return Err(Error::Internal(format!(
            "normalization bracket {bracket:.3e} <= 0 (step {gamma:.3e} out of range)"
        )));
    }
    Ok((2.0 * nb * gamma * gamma * bracket / power).powf(-0.5))
}

/// Bussgang gain `δ = αγ√(N_b/(πP)) Σ_{l=1}^{J−1} exp(−(N_bγ²/P)(l − J/2)²)`.
pub fn bussgang_delta(gamma: f64, levels: u32, n_tx: usize, power: f64, alpha: f64) -> f64 {
    let nb = n_tx as f64;
    let k = nb * gamma * gamma / power;
    let sum: f64 = threshold_offsets(levels).map(|c| (-k * c * c).exp()).sum();
    alpha * gamma * (nb / (PI * power)).sqrt() * sum
}

/// Mean-square error `E[(x − y)²]` of the unscaled quantizer for `x ~ N(0, σ²)`.
pub fn quantization_mse(step: f64, levels: u32, sigma: f64) -> f64 {
    let outer = (levels as f64 - 1.0) / 2.0;
    let (mut exy, mut tail) = (0.0, 0.0);
    for c in threshold_offsets(levels) {
        let t = step * c / sigma;
        exy += sigma * normal_pdf(t);
        tail += c * (1.0 - normal_cdf(t));
    }
    let exy = step * exy;
    let ey2 = step * step * (outer * outer + 2.0 * tail);
    sigma * sigma - 2.0 * exy + ey2
}

/// Golden-section search for the MSE-optimal step over `[1e−3σ, 10σ]`.
pub fn mse_optimal_step(levels: u32, sigma: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (1e-3 * sigma, 10.0 * sigma);
    let f = |g: f64| quantization_mse(g, levels, sigma);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a) > 1e-6 * 0.5 * (a + b) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Build a quantizer model for `bits` of resolution.
pub fn build_quantizer(
    bits: u32,
    total_power: f64,
    n_tx: usize,
    step_policy: StepPolicy,
) -> Result<QuantizerModel> {
    if bits == 0 {
        return Err(Error::InvalidArgument("bits must be at least 1".into()));
    }
    if bits > MAX_BITS {
        return Err(Error::InvalidArgument(format!(
            "bits = {bits} exceeds {MAX_BITS}; δ is indistinguishable from 1"
        )));
    }
    check_positive("total power", total_power)?;
    if n_tx == 0 {
        return Err(Error::InvalidArgument("n_tx must be at least 1".into()));
    }
    let levels = 1u32 << bits;
    let sigma = (total_power / (2.0 * n_tx as f64)).sqrt();
    let step = match step_policy {
        StepPolicy::Explicit(g) => {
            check_positive("step", g)?;
            g
        }
        StepPolicy::MseOptimal => mse_optimal_step(levels, sigma),
    };
    let alpha = normalization_alpha(step, levels, n_tx, total_power)?;
    let delta = bussgang_delta(step, levels, n_tx, total_power, alpha);
    Ok(QuantizerModel {
        bits,
        levels,
        step,
        total_power,
        n_tx,
        alpha,
        delta,
    })
}

impl QuantizerModel {
    /// Standard deviation of the design input per real dimension.
    pub fn sigma_real(&self) -> f64 {
        (self.total_power / (2.0 * self.n_tx as f64)).sqrt()
    }

    /// Level index `0..J` of a real input; a value on a threshold maps up.
    pub fn level_index(&self, v: f64) -> u32 {
        let k = (v / self.step + self.levels as f64 / 2.0).floor();
        k.clamp(0.0, (self.levels - 1) as f64) as u32
    }

    /// Unscaled level value `γ(l − (J−1)/2)`.
    pub fn level_value(&self, index: u32) -> f64 {
        self.step * (index as f64 - (self.levels as f64 - 1.0) / 2.0)
    }

    /// Quantize one real dimension, including the `α` scaling.
    pub fn quantize_real(&self, v: f64) -> f64 {
        self.alpha * self.level_value(self.level_index(v))
    }

    pub fn quantize_scalar(&self, z: Complex64) -> Complex64 {
        Complex64::new(self.quantize_real(z.re), self.quantize_real(z.im))
    }

    /// Element-wise quantization of a precoded vector.
    pub fn quantize(&self, x: &[Complex64]) -> Vec<Complex64> {
        x.iter().map(|&z| self.quantize_scalar(z)).collect()
    }
}

/// Monte Carlo estimate of the Bussgang constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BussgangEstimate {
    pub delta_hat: f64,
    /// Standard error of `delta_hat` (delta method on the ratio estimator).
    pub delta_stderr: f64,
    /// `N_b · E[|Q(x)|²]`, an estimate of the total transmit power.
    pub out_power: f64,
    pub samples: usize,
}

/// Estimate `δ` and the transmit power from `n_samples` design-input draws.
pub fn estimate_bussgang_mc<R: Rng + ?Sized>(
    model: &QuantizerModel,
    n_samples: usize,
    rng: &mut R,
) -> Result<BussgangEstimate> {
    if n_samples < 10_000 {
        return Err(Error::InvalidArgument(format!(
            "n_samples = {n_samples} below the 10^4 minimum"
        )));
    }
    let scale = (model.total_power / model.n_tx as f64).sqrt();
    let mut num = Vec::with_capacity(n_samples);
    let mut den = Vec::with_capacity(n_samples);
    let mut qpow = 0.0;
    for _ in 0..n_samples {
        let x = complex_normal(rng) * scale;
        let q = model.quantize_scalar(x);
        num.push((x.conj() * q).re);
        den.push(x.norm_sqr());
        qpow += q.norm_sqr();
    }
    let n = n_samples as f64;
    let mean_den = den.iter().sum::<f64>() / n;
    let delta_hat = num.iter().sum::<f64>() / n / mean_den;
    let resid_var = num
        .iter()
        .zip(&den)
        .map(|(a, b)| {
            let z = a - delta_hat * b;
            z * z
        })
        .sum::<f64>()
        / (n - 1.0);
    Ok(BussgangEstimate {
        delta_hat,
        delta_stderr: resid_var.sqrt() / (n.sqrt() * mean_den),
        out_power: model.n_tx as f64 * qpow / n,
        samples: n_samples,
    })
}

/// Correlation magnitudes `|corr(f_i, s_k)|` between the Bussgang residual
/// `f = Q(Ps) − δPs` and the symbols `s ~ CN(0, I)`.
///
/// Rows of `precoder` must each have squared norm `P/N_b` so every antenna
/// sees the design input variance.
pub fn residual_correlation<R: Rng + ?Sized>(
    model: &QuantizerModel,
    precoder: &CMat,
    n_samples: usize,
    rng: &mut R,
) -> Result<CMat> {
    let (nb, nu) = precoder.shape();
    if nb != model.n_tx {
        return Err(Error::InvalidArgument(format!(
            "precoder has {nb} rows but the quantizer models {} antennas",
            model.n_tx
        )));
    }
    let mut cross = CMat::zeros(nb, nu);
    let mut f_pow = vec![0.0; nb];
    let mut s_pow = vec![0.0; nu];
    let mut s = nalgebra::DVector::<Complex64>::zeros(nu);
    for _ in 0..n_samples {
        for k in 0..nu {
            s[k] = complex_normal(rng);
        }
        let x = precoder * &s;
        for i in 0..nb {
            let f = model.quantize_scalar(x[i]) - x[i] * model.delta;
            f_pow[i] += f.norm_sqr();
            for k in 0..nu {
                cross[(i, k)] += f * s[k].conj();
            }
        }
        for k in 0..nu {
            s_pow[k] += s[k].norm_sqr();
        }
    }
    Ok(CMat::from_fn(nb, nu, |i, k| {
        Complex64::new(cross[(i, k)].norm() / (f_pow[i] * s_pow[k]).sqrt(), 0.0)
    }))
}
