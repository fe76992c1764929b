//! Power loading over the `N_u` effective sub-channels.
//!
//! Three allocators are provided: equal loading, classical water-filling and
//! the quantization-aware active-set procedure [`cqa_maas`], which maximizes
//! the second-order sum-rate surrogate [`rate_objective`] under a total
//! power budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Concatenated effective-channel gains `φ_m` of all users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumView {
    pub phi: Vec<f64>,
    /// User index of each entry.
    pub owner: Vec<usize>,
}

impl SpectrumView {
    /// Spectrum owned by a single user.
    pub fn new(phi: Vec<f64>) -> Result<Self> {
        let owner = vec![0; phi.len()];
        let s = SpectrumView { phi, owner };
        s.validate()?;
        Ok(s)
    }

    pub fn from_blocks<I: IntoIterator<Item = Vec<f64>>>(blocks: I) -> Self {
        let mut phi = Vec::new();
        let mut owner = Vec::new();
        for (j, b) in blocks.into_iter().enumerate() {
            owner.extend(std::iter::repeat_n(j, b.len()));
            phi.extend(b);
        }
        SpectrumView { phi, owner }
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.phi.is_empty() {
            return Err(Error::InvalidArgument("empty spectrum".into()));
        }
        if self.owner.len() != self.phi.len() {
            return Err(Error::InvalidArgument(format!(
                "{} owners for {} spectrum entries",
                self.owner.len(),
                self.phi.len()
            )));
        }
        if let Some(x) = self.phi.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::InvalidArgument(format!("spectrum entry {x} is not a finite gain ≥ 0")));
        }
        if self.owner.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("owner indices must be grouped in user order".into()));
        }
        Ok(())
    }

    /// Indices of positive entries, strongest first. Ties keep input order.
    fn sorted_open(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.phi[i] > 0.0).collect();
        idx.sort_by(|&a, &b| self.phi[b].total_cmp(&self.phi[a]));
        idx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub omega: Vec<f64>,
    /// Final water level (`None` for equal loading).
    pub mu_opt: Option<f64>,
    /// Number of channels with `ω > 0`.
    pub active: usize,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub total: f64,
    /// Water-level solves performed.
    pub iterations: usize,
    /// True when the quantization-aware solve saturated and classical
    /// water-filling was used instead.
    pub saturated_fallback: bool,
}

impl AllocationResult {
    fn from_omega(omega: Vec<f64>, mu_opt: Option<f64>, iterations: usize) -> Self {
        let total = omega.iter().sum();
        let active = omega.iter().filter(|&&w| w > 0.0).count();
        AllocationResult {
            omega,
            mu_opt,
            active,
            c1: None,
            c2: None,
            total,
            iterations,
            saturated_fallback: false,
        }
    }
}

fn check_budget(p_total: f64) -> Result<()> {
    if p_total > 0.0 && p_total.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("power budget {p_total} must be positive and finite")))
    }
}

pub fn equal_allocation(n: usize, p_total: f64) -> Result<AllocationResult> {
    if n == 0 {
        return Err(Error::InvalidArgument("equal allocation over zero channels".into()));
    }
    check_budget(p_total)?;
    let mut r = AllocationResult::from_omega(vec![p_total / n as f64; n], None, 0);
    r.total = p_total;
    Ok(r)
}

/// Classical water-filling `ω_m = (μ − N_0/φ_m²)⁺` with `Σω = p_total`.
pub fn waterfilling(spectrum: &SpectrumView, noise_power: f64, p_total: f64) -> Result<AllocationResult> {
    spectrum.validate()?;
    check_budget(p_total)?;
    if !(noise_power > 0.0 && noise_power.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise power {noise_power} must be positive")));
    }
    let order = spectrum.sorted_open();
    if order.is_empty() {
        return Err(Error::InfeasibleAllocation("every channel gain is zero".into()));
    }
    let inv: Vec<f64> = order.iter().map(|&i| noise_power / spectrum.phi[i].powi(2)).collect();
    let mut n = order.len();
    let mut acc: f64 = inv.iter().sum();
    let mut iterations = 0;
    let mu = loop {
        iterations += 1;
        let mu = (p_total + acc) / n as f64;
        if mu > inv[n - 1] || n == 1 {
            break mu;
        }
        n -= 1;
        acc -= inv[n];
    };
    let mut omega = vec![0.0; spectrum.len()];
    for (k, &i) in order[..n].iter().enumerate() {
        omega[i] = mu - inv[k];
    }
    Ok(AllocationResult::from_omega(omega, Some(mu), iterations))
}

/// Distortion constants `(C_1, C_2)` of the quantization-aware water level.
pub fn cqa_constants(delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!("Bussgang gain {delta} outside (0, 1]")));
    }
    if delta == 1.0 {
        return Ok((-1.0, 0.0));
    }
    let d2 = delta * delta;
    let root = (4.0 - 3.0 * d2).sqrt();
    // δ − √(4−3δ²) = −4(1−δ²)/(δ + √(4−3δ²)) avoids cancellation as δ → 1.
    let c1 = -2.0 / (delta * (delta + root));
    let c2 = delta * (1.0 - d2) / root;
    Ok((c1, c2))
}

/// Which normalization of the water-level equation to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LevelNormalization {
    /// Normalization that makes the active powers sum to the budget and
    /// reduces to classical water-filling at `δ = 1`.
    #[default]
    Consistent,
    /// `n²` prefactor, `N_u²` inside the root and `n` in place of `N_u` in
    /// the per-channel power. It does not use the budget and does not
    /// reduce to water-filling once a channel closes.
    Unbudgeted,
}

/// What [`cqa_maas`] does when the water-level equation has no real root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SaturationPolicy {
    #[default]
    Error,
    /// Fall back to classical water-filling on the same spectrum.
    WaterFilling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MaasOptions {
    pub normalization: LevelNormalization,
    pub saturation: SaturationPolicy,
}

/// Water level over the active gains `phi_active` (all > 0).
///
/// `n_total` is `N_u`, `snr` is linear and `p_total` the budget. With the
/// consistent normalization the per-stream SNR is `s = SNR/N_u` and
///
/// `μ = n/(2C_2 s S)·(1 − √(1 + 4C_2 S (C_1 T − sP)/n²))`,
///
/// `S = Σφ²`, `T = Σφ⁻²`. The root is rationalized, so `C_2 → 0` needs no
/// special case.
pub fn cqa_mu_opt(
    phi_active: &[f64],
    n_total: usize,
    snr: f64,
    c1: f64,
    c2: f64,
    p_total: f64,
    normalization: LevelNormalization,
) -> Result<f64> {
    let n = phi_active.len();
    if n == 0 || n > n_total {
        return Err(Error::InvalidArgument(format!(
            "{n} active channels out of {n_total}"
        )));
    }
    if !(snr > 0.0 && snr.is_finite()) {
        return Err(Error::InvalidArgument(format!("SNR {snr} must be positive and finite")));
    }
    if c2 < 0.0 {
        return Err(Error::InvalidArgument(format!("C2 = {c2} must be ≥ 0")));
    }
    if phi_active.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::InvalidArgument("active channels must have positive gain".into()));
    }
    let s_sum: f64 = phi_active.iter().map(|p| p * p).sum();
    let t_sum: f64 = phi_active.iter().map(|p| 1.0 / (p * p)).sum();
    let nf = n as f64;
    let nu = n_total as f64;
    // μ = A/(2C₂)·(1 − √(1+ε)) with ε = C₂·B, so μ = −A·B/(2(1 + √(1+ε))).
    let (a_over_c2_b, eps) = match normalization {
        LevelNormalization::Consistent => {
            let s = snr / nu;
            let b = 4.0 * s_sum * (c1 * t_sum - s * p_total) / (nf * nf);
            (nf / (s * s_sum) * b, c2 * b)
        }
        LevelNormalization::Unbudgeted => {
            let b = 4.0 * s_sum * (c1 * t_sum - snr) / (nu * nu);
            (nf * nf / (snr * s_sum) * b, c2 * b)
        }
    };
    let radicand = 1.0 + eps;
    if radicand < 0.0 {
        return Err(Error::Saturated {
            radicand,
            active: n,
            snr,
            delta: f64::NAN,
        });
    }
    let mu = -a_over_c2_b / (2.0 * (1.0 + radicand.sqrt()));
    if !mu.is_finite() {
        return Err(Error::Numeric(format!("water level evaluated to {mu}")));
    }
    Ok(mu)
}

/// Quantization-aware power allocation by active-set iteration.
///
/// Channels are visited strongest first. Each pass solves the water level
/// over the open set and closes the channel with the most negative power,
/// until every open power is nonnegative. Zero gains are closed up front.
/// The result is scaled down if it exceeds `p_total` by more than `1e-9`
/// relative.
pub fn cqa_maas(
    spectrum: &SpectrumView,
    snr: f64,
    delta: f64,
    p_total: f64,
    options: MaasOptions,
) -> Result<AllocationResult> {
    spectrum.validate()?;
    check_budget(p_total)?;
    let (c1, c2) = cqa_constants(delta)?;
    let nu = spectrum.len();
    let mut open = spectrum.sorted_open();
    if open.is_empty() {
        return Err(Error::InfeasibleAllocation("every channel gain is zero".into()));
    }
    let mut iterations = 0;
    let (omega_open, mu) = loop {
        iterations += 1;
        let phi: Vec<f64> = open.iter().map(|&i| spectrum.phi[i]).collect();
        let mu = match cqa_mu_opt(&phi, nu, snr, c1, c2, p_total, options.normalization) {
            Ok(mu) => mu,
            Err(Error::Saturated { radicand, active, .. }) => match options.saturation {
                SaturationPolicy::Error => {
                    return Err(Error::Saturated {
                        radicand,
                        active,
                        snr,
                        delta,
                    })
                }
                SaturationPolicy::WaterFilling => {
                    let mut r = waterfilling(spectrum, nu as f64 / snr, p_total)?;
                    r.c1 = Some(c1);
                    r.c2 = Some(c2);
                    r.iterations += iterations;
                    r.saturated_fallback = true;
                    return Ok(r);
                }
            },
            Err(e) => return Err(e),
        };
        let scale = match options.normalization {
            LevelNormalization::Consistent => nu as f64,
            LevelNormalization::Unbudgeted => phi.len() as f64,
        };
        let w: Vec<f64> = phi
            .iter()
            .map(|p| {
                let g = p * p;
                c1 * scale / (snr * g) + mu - mu * mu * c2 * snr * g / scale
            })
            .collect();
        let (worst, min) = w
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (k, &v)| if v < acc.1 { (k, v) } else { acc });
        if min >= 0.0 {
            break (w, mu);
        }
        open.remove(worst);
        if open.is_empty() {
            return Err(Error::InfeasibleAllocation(format!(
                "all {nu} channels closed (snr = {snr}, delta = {delta})"
            )));
        }
    };
    let mut omega = vec![0.0; nu];
    for (&i, &w) in open.iter().zip(&omega_open) {
        omega[i] = w;
    }
    let total: f64 = omega.iter().sum();
    if total > p_total * (1.0 + 1e-9) {
        let f = p_total / total;
        omega.iter_mut().for_each(|w| *w *= f);
    }
    let mut r = AllocationResult::from_omega(omega, Some(mu), iterations);
    r.c1 = Some(c1);
    r.c2 = Some(c2);
    Ok(r)
}

/// Second-order sum-rate surrogate in bits:
/// `Σ_m log₂(1 + (δ²/N_0)φ²ω − (δ²(1−δ²)/N_0²)φ⁴ω²)`.
pub fn rate_objective(omega: &[f64], phi: &[f64], delta: f64, noise_power: f64) -> Result<f64> {
    if omega.len() != phi.len() {
        return Err(Error::InvalidArgument(format!(
            "{} powers for {} gains",
            omega.len(),
            phi.len()
        )));
    }
    if !(noise_power > 0.0) {
        return Err(Error::InvalidArgument(format!("noise power {noise_power} must be positive")));
    }
    let d2 = delta * delta;
    let mut total = 0.0;
    for (m, (&w, &p)) in omega.iter().zip(phi).enumerate() {
        if w < 0.0 {
            return Err(Error::InvalidArgument(format!("negative power {w} at channel {m}")));
        }
        let x = p * p * w / noise_power;
        let arg = 1.0 + d2 * x - d2 * (1.0 - d2) * x * x;
        if !(arg > 0.0) {
            return Err(Error::ModelValidity(format!(
                "log argument {arg:.3e} ≤ 0 at channel {m} (φ²ω/N0 = {x:.3e}, delta = {delta})"
            )));
        }
        total += arg.log2();
    }
    Ok(total)
}

/// Power-loading rule applied to a precoder's effective spectrum. Every
/// allocator uses the budget `N_u` and the effective noise `N_u/SNR`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Allocator {
    Equal,
    WaterFilling,
    Maas { delta: f64, options: MaasOptions },
}

impl Allocator {
    pub fn allocate(&self, spectrum: &SpectrumView, snr: f64) -> Result<AllocationResult> {
        let nu = spectrum.len();
        let budget = nu as f64;
        match self {
            Allocator::Equal => equal_allocation(nu, budget),
            Allocator::WaterFilling => waterfilling(spectrum, budget / snr, budget),
            Allocator::Maas { delta, options } => cqa_maas(spectrum, snr, *delta, budget, *options),
        }
    }
}
