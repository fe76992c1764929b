//! Block-diagonalization (BD) and regularized BD (RBD) precoders.
//!
//! Each user's precoder is a product `P_j = P_j^c · P_j^d`. The first factor
//! projects onto (BD) or regularizes towards (RBD) the null space of the
//! other users' stacked channel `H̄_j`; the second factor holds the right
//! singular vectors of the effective channel `H_j P_j^c` scaled by the
//! square root of the per-stream power loading.

use nalgebra::DMatrixView;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::linalg::{CMat, FullSvd};
use crate::power::{AllocationResult, Allocator, SpectrumView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrecoderKind {
    Bd,
    Rbd,
}

impl std::str::FromStr for PrecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bd" => Ok(PrecoderKind::Bd),
            "rbd" => Ok(PrecoderKind::Rbd),
            _ => Err(Error::InvalidArgument(format!("unknown precoder kind `{s}`"))),
        }
    }
}

/// Allocation-independent factors of one user's precoder.
#[derive(Debug, Clone, PartialEq)]
pub struct UserFactors {
    /// First factor `P_j^c`.
    pub p_c: CMat,
    /// First `Λ_e` right singular vectors of the effective channel.
    pub w1: CMat,
    /// Per-column scale making `P_j^c W^(1)` columns unit norm (all ones for BD).
    pub column_scale: Vec<f64>,
    /// Effective-channel gains per stream, nonincreasing, zero-padded to `N_j`.
    pub sv_effective: Vec<f64>,
    /// Number of streams `N_j` the user receives.
    pub n_rx: usize,
}

/// One user's share of an assembled precoder.
#[derive(Debug, Clone, PartialEq)]
pub struct UserPrecoder {
    pub p_c: CMat,
    pub p_d: CMat,
    pub sv_effective: Vec<f64>,
    pub w1: CMat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderResult {
    /// Assembled `N_b × N_u` precoder `[P_1 … P_K]`.
    pub p: CMat,
    pub per_user: Vec<UserPrecoder>,
    pub kind: PrecoderKind,
}

impl PrecoderResult {
    /// Concatenated per-user effective gains.
    pub fn spectrum(&self) -> SpectrumView {
        SpectrumView::from_blocks(self.per_user.iter().map(|u| u.sv_effective.clone()))
    }
}

/// Stack every user block except `j`, preserving order.
pub fn complement_channel(channels: &ChannelSet, j: usize) -> Result<CMat> {
    complement_of(&channels.h_est, channels.user_offsets(), j)
}

pub(crate) fn complement_of(h: &CMat, offsets: &[std::ops::Range<usize>], j: usize) -> Result<CMat> {
    if j >= offsets.len() {
        return Err(Error::InvalidArgument(format!(
            "user index {j} out of range for {} users",
            offsets.len()
        )));
    }
    let excluded = &offsets[j];
    let rows = h.nrows() - excluded.len();
    let mut out = CMat::zeros(rows, h.ncols());
    let mut dst = 0;
    for (k, r) in offsets.iter().enumerate() {
        if k == j {
            continue;
        }
        out.rows_mut(dst, r.len()).copy_from(&h.rows(r.start, r.len()));
        dst += r.len();
    }
    Ok(out)
}

/// SVD of a complement channel, shared by the BD and RBD first factors.
#[derive(Debug, Clone)]
pub struct ComplementSvd {
    /// Full `N_b × N_b` right singular basis `W̄_j`.
    pub v: CMat,
    /// Singular values, nonincreasing.
    pub s: Vec<f64>,
    pub rank: usize,
}

impl ComplementSvd {
    pub fn new(h_bar: &CMat, n_tx: usize) -> Result<Self> {
        if h_bar.ncols() != n_tx {
            return Err(Error::InvalidArgument(format!(
                "complement has {} columns, expected {n_tx}",
                h_bar.ncols()
            )));
        }
        if h_bar.nrows() == 0 {
            // Single user: nothing to null.
            return Ok(ComplementSvd {
                v: CMat::identity(n_tx, n_tx),
                s: Vec::new(),
                rank: 0,
            });
        }
        let svd = FullSvd::new(h_bar)?;
        let rank = svd.rank(h_bar.nrows(), h_bar.ncols());
        Ok(ComplementSvd {
            v: svd.v,
            s: svd.s,
            rank,
        })
    }

    /// `W̄_j^(0)`: right singular vectors of the zero singular values.
    pub fn null_basis(&self) -> Result<CMat> {
        let n = self.v.ncols();
        if self.rank >= n {
            return Err(Error::InfeasibleGeometry(format!(
                "complement channel has full rank {n}; its null space is empty"
            )));
        }
        Ok(self.v.columns(self.rank, n - self.rank).into_owned())
    }

    /// `W̄_j (Φ̄ᵀΦ̄ + χI)^{−1/2}` with the squared singular values zero-padded to `N_b`.
    pub fn regularized(&self, chi: f64) -> CMat {
        let mut out = self.v.clone();
        for k in 0..out.ncols() {
            let s2 = self.s.get(k).map_or(0.0, |s| s * s);
            out.column_mut(k).scale_mut(1.0 / (s2 + chi).sqrt());
        }
        out
    }
}

/// BD first factor: orthonormal basis of the null space of `h_bar`.
///
/// An empty `h_bar` (one user) yields the identity.
pub fn bd_first_factor(h_bar: &CMat, n_tx: usize) -> Result<CMat> {
    ComplementSvd::new(h_bar, n_tx)?.null_basis()
}

/// RBD first factor with `χ = N_u·N_0/P`.
pub fn rbd_first_factor(
    h_bar: &CMat,
    n_tx: usize,
    noise_power: f64,
    total_power: f64,
    n_rx_total: usize,
) -> Result<CMat> {
    if !(total_power > 0.0) {
        return Err(Error::InvalidArgument("total power must be positive".into()));
    }
    let chi = n_rx_total as f64 * noise_power / total_power;
    if !(chi > 0.0 && chi.is_finite()) {
        return Err(Error::InvalidArgument(format!("regularization χ = {chi} must be positive")));
    }
    Ok(ComplementSvd::new(h_bar, n_tx)?.regularized(chi))
}

/// SVD of the effective channel `H_e = H_j · P^c`.
#[derive(Debug, Clone)]
pub struct EffectiveChannel {
    pub h_e: CMat,
    pub u: CMat,
    /// All `min(N_j, cols)` singular values, nonincreasing.
    pub sv: Vec<f64>,
    /// First `Λ_e = rank(H_e)` right singular vectors.
    pub w1: CMat,
    /// Complete right basis (first `Λ_e` columns equal `w1`).
    pub w: CMat,
    pub rank: usize,
}

pub fn effective_channel(h_j: DMatrixView<'_, Complex64>, p_c: &CMat) -> Result<EffectiveChannel> {
    if h_j.ncols() != p_c.nrows() {
        return Err(Error::InvalidArgument(format!(
            "user block has {} columns but first factor has {} rows",
            h_j.ncols(),
            p_c.nrows()
        )));
    }
    let h_e = h_j * p_c;
    let svd = FullSvd::new(&h_e)?;
    let rank = svd.rank(h_e.nrows(), h_e.ncols());
    Ok(EffectiveChannel {
        w1: svd.v.columns(0, rank).into_owned(),
        w: svd.v,
        u: svd.u,
        sv: svd.s,
        rank,
        h_e,
    })
}

/// Factors of one user's precoder from a cached complement SVD.
pub fn user_factors(
    h_j: DMatrixView<'_, Complex64>,
    complement: &ComplementSvd,
    kind: PrecoderKind,
    chi: f64,
) -> Result<UserFactors> {
    let n_rx = h_j.nrows();
    let p_c = match kind {
        PrecoderKind::Bd => complement.null_basis()?,
        PrecoderKind::Rbd => complement.regularized(chi),
    };
    let eff = effective_channel(h_j, &p_c)?;
    let streams = eff.rank.min(n_rx);
    let w1 = eff.w1.columns(0, streams).into_owned();
    let mut sv_effective = vec![0.0; n_rx];
    let mut column_scale = vec![1.0; streams];
    match kind {
        PrecoderKind::Bd => sv_effective[..streams].copy_from_slice(&eff.sv[..streams]),
        PrecoderKind::Rbd => {
            // H_j P_c W1 D = U Φ D remains diagonal, so column scaling only
            // rescales the stream gains.
            let b = &p_c * &w1;
            for k in 0..streams {
                let norm = b.column(k).norm();
                column_scale[k] = 1.0 / norm;
                sv_effective[k] = eff.sv[k] / norm;
            }
            let mut order: Vec<usize> = (0..streams).collect();
            order.sort_by(|&a, &b| sv_effective[b].partial_cmp(&sv_effective[a]).unwrap());
            if order.iter().enumerate().any(|(i, &o)| i != o) {
                let w_sorted = CMat::from_fn(w1.nrows(), streams, |r, c| w1[(r, order[c])]);
                let sv_sorted: Vec<f64> = order.iter().map(|&o| sv_effective[o]).collect();
                let sc_sorted: Vec<f64> = order.iter().map(|&o| column_scale[o]).collect();
                sv_effective[..streams].copy_from_slice(&sv_sorted);
                column_scale = sc_sorted;
                return Ok(UserFactors {
                    p_c,
                    w1: w_sorted,
                    column_scale,
                    sv_effective,
                    n_rx,
                });
            }
        }
    }
    Ok(UserFactors {
        p_c,
        w1,
        column_scale,
        sv_effective,
        n_rx,
    })
}

/// Allocation-independent precoder factors for every user.
#[derive(Debug, Clone)]
pub struct PrecoderFactors {
    pub kind: PrecoderKind,
    pub users: Vec<UserFactors>,
}

impl PrecoderFactors {
    pub fn spectrum(&self) -> SpectrumView {
        SpectrumView::from_blocks(self.users.iter().map(|u| u.sv_effective.clone()))
    }

    pub fn n_tx(&self) -> usize {
        self.users.first().map_or(0, |u| u.p_c.nrows())
    }
}

/// Complement SVDs of all users on the estimated channel.
pub fn complement_svds(channels: &ChannelSet) -> Result<Vec<ComplementSvd>> {
    (0..channels.users())
        .map(|j| ComplementSvd::new(&complement_channel(channels, j)?, channels.n_tx()))
        .collect()
}

/// Build all users' factors. `snr` (linear) only enters RBD through `χ = N_u/SNR`.
pub fn factorize(
    channels: &ChannelSet,
    complements: &[ComplementSvd],
    kind: PrecoderKind,
    snr: f64,
) -> Result<PrecoderFactors> {
    let chi = channels.n_rx_total() as f64 / snr;
    if kind == PrecoderKind::Rbd && !(chi > 0.0 && chi.is_finite()) {
        return Err(Error::InvalidArgument(format!("RBD needs a finite positive SNR, got {snr}")));
    }
    let users = complements
        .iter()
        .enumerate()
        .map(|(j, c)| user_factors(channels.est_block(j), c, kind, chi))
        .collect::<Result<Vec<_>>>()?;
    Ok(PrecoderFactors { kind, users })
}

/// Assemble `P = [P_1^c P_1^d … P_K^c P_K^d]` from factors and per-stream powers.
///
/// `omega` lists the powers of all `N_u` streams in user order. Streams beyond
/// a user's effective rank produce zero columns.
pub fn assemble_precoder(factors: &PrecoderFactors, omega: &[f64]) -> Result<PrecoderResult> {
    let nu: usize = factors.users.iter().map(|u| u.n_rx).sum();
    if omega.len() != nu {
        return Err(Error::InvalidArgument(format!(
            "{} powers for {nu} streams",
            omega.len()
        )));
    }
    if let Some(w) = omega.iter().find(|&&w| !(w >= 0.0)) {
        return Err(Error::InvalidArgument(format!("negative power loading {w}")));
    }
    let nb = factors.n_tx();
    let mut p = CMat::zeros(nb, nu);
    let mut per_user = Vec::with_capacity(factors.users.len());
    let mut col = 0;
    for u in &factors.users {
        let streams = u.w1.ncols();
        let mut p_d = CMat::zeros(u.w1.nrows(), u.n_rx);
        for k in 0..streams {
            let g = u.column_scale[k] * omega[col + k].sqrt();
            p_d.set_column(k, &(u.w1.column(k) * Complex64::new(g, 0.0)));
        }
        let p_j = &u.p_c * &p_d;
        p.columns_mut(col, u.n_rx).copy_from(&p_j);
        per_user.push(UserPrecoder {
            p_c: u.p_c.clone(),
            p_d,
            sv_effective: u.sv_effective.clone(),
            w1: u.w1.clone(),
        });
        col += u.n_rx;
    }
    Ok(PrecoderResult {
        p,
        per_user,
        kind: factors.kind,
    })
}

/// Precoder construction end to end on the estimated channel: complement →
/// first factor → effective-channel SVD → power loading → assembly.
///
/// The returned allocation is the one used for `Ω`.
pub fn build_cqa_precoder(
    channels: &ChannelSet,
    kind: PrecoderKind,
    snr: f64,
    allocator: &Allocator,
) -> Result<(PrecoderResult, AllocationResult)> {
    let complements = complement_svds(channels)?;
    let factors = factorize(channels, &complements, kind, snr)?;
    let alloc = allocator.allocate(&factors.spectrum(), snr)?;
    let pre = assemble_precoder(&factors, &alloc.omega)?;
    Ok((pre, alloc))
}
