//! Monte Carlo sweeps over SNR, precoding method and DAC resolution.
//!
//! Every trial draws one channel (plus the CSI impairment, if configured)
//! from its own random substream, and all methods at all SNR points are
//! evaluated on that same draw. Per-trial rates are collected in trial order
//! and reduced with pairwise summation, so the result does not depend on how
//! trials were scheduled across threads.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channel::{apply_csi_impairment, gen_channel};
use crate::error::{Error, Result};
use crate::matio::write_atomic;
use crate::power::{Allocator, LevelNormalization, MaasOptions, SaturationPolicy};
use crate::precoder::{assemble_precoder, complement_svds, factorize, PrecoderKind};
use crate::quantizer::{build_quantizer, StepPolicy};
use crate::rate::{sum_rate_bussgang, RateVariant};
use crate::rng::trial_rng;
use crate::scenario::{default_snr_grid, SystemScenario};

/// Precoding and power-loading combinations compared in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Unquantized BD, equal power.
    BdFr,
    /// Unquantized BD, classical water-filling.
    BdFrWf,
    /// Quantized BD, equal power.
    CqaBd,
    /// Quantized RBD, equal power.
    CqaRbd,
    /// Quantized BD, quantization-aware allocation.
    CqaBdMaas,
    /// Quantized RBD, quantization-aware allocation.
    CqaRbdMaas,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::BdFr,
        Method::BdFrWf,
        Method::CqaBd,
        Method::CqaRbd,
        Method::CqaBdMaas,
        Method::CqaRbdMaas,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::BdFr => "BD-FR",
            Method::BdFrWf => "BD-FR+WF",
            Method::CqaBd => "CQA-BD",
            Method::CqaRbd => "CQA-RBD",
            Method::CqaBdMaas => "CQA-BD-MAAS",
            Method::CqaRbdMaas => "CQA-RBD-MAAS",
        }
    }

    /// Whether the method runs once per DAC resolution.
    pub fn is_quantized(self) -> bool {
        !matches!(self, Method::BdFr | Method::BdFrWf)
    }

    pub fn precoder(self) -> PrecoderKind {
        match self {
            Method::CqaRbd | Method::CqaRbdMaas => PrecoderKind::Rbd,
            _ => PrecoderKind::Bd,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                let known: Vec<_> = Method::ALL.iter().map(|m| m.label()).collect();
                Error::Config(format!("unknown method `{s}` (known: {})", known.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepOptions {
    /// Evaluate trials on the calling thread only.
    pub sequential: bool,
    pub saturation: SaturationPolicy,
    pub normalization: LevelNormalization,
    pub rate_variant: RateVariant,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            sequential: false,
            saturation: SaturationPolicy::WaterFilling,
            normalization: LevelNormalization::Consistent,
            rate_variant: RateVariant::UnitSignal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub method: Method,
    /// DAC resolution, `None` for unquantized methods.
    pub bits: Option<u32>,
    pub mean_rate: f64,
    pub stderr: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub scenario_digest: String,
    pub rows: Vec<SweepRow>,
    pub runtime_ms: u64,
}

impl SweepResult {
    pub fn row(&self, snr_db: f64, method: Method, bits: Option<u32>) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.snr_db == snr_db && r.method == method && r.bits == bits)
    }
}

/// Named scenarios. Every preset uses unit total power, 200 trials and the
/// default SNR grid.
pub fn preset(name: &str) -> Result<(SystemScenario, Vec<Method>)> {
    let base = |users: usize, bits: Vec<u32>| SystemScenario {
        n_tx: 64,
        n_rx_per_user: vec![2; users],
        snr_db_grid: default_snr_grid(),
        total_power: 1.0,
        bits,
        corr_coeff: num_complex::Complex64::new(0.0, 0.0),
        csi_error_var: 0.0,
        trials: 200,
        seed: 20_210_607,
    };
    let fig3 = vec![Method::CqaBd, Method::CqaBdMaas];
    match name {
        "fig2" => Ok((
            base(16, vec![2, 3, 4]),
            vec![Method::BdFr, Method::BdFrWf, Method::CqaBdMaas],
        )),
        "fig3-perfect" => Ok((base(8, vec![3, 6]), fig3)),
        "fig3-icsi" => {
            let mut s = base(8, vec![3, 6]);
            s.corr_coeff = num_complex::Complex64::new(0.72, 0.0);
            s.csi_error_var = 0.16;
            Ok((s, fig3))
        }
        _ => Err(Error::Config(format!(
            "unknown preset `{name}` (known: fig2, fig3-perfect, fig3-icsi)"
        ))),
    }
}

/// `(method, bits)` pairs in output order.
pub fn expand_methods(methods: &[Method], bits: &[u32]) -> Vec<(Method, Option<u32>)> {
    let mut methods = methods.to_vec();
    methods.sort_by_key(|m| m.label());
    methods.dedup();
    let mut bits = bits.to_vec();
    bits.sort_unstable();
    bits.dedup();
    let mut out = Vec::new();
    for m in methods {
        if m.is_quantized() {
            out.extend(bits.iter().map(|&b| (m, Some(b))));
        } else {
            out.push((m, None));
        }
    }
    out
}

struct Plan {
    snr: Vec<(f64, f64)>,
    combos: Vec<(Method, Option<u32>, f64)>,
    needs_rbd: bool,
}

fn one_trial(scenario: &SystemScenario, plan: &Plan, opts: &SweepOptions, trial: usize) -> Result<Vec<f64>> {
    let mut rng = trial_rng(scenario.seed, trial as u64);
    let mut channels = gen_channel(scenario, &mut rng);
    if scenario.has_impairment() {
        channels = apply_csi_impairment(channels, scenario.corr_coeff, scenario.csi_error_var, &mut rng)?;
    }
    log::trace!("trial {trial}: |H|_F = {:.12e}", channels.h.norm());
    let complements = complement_svds(&channels)?;
    let bd = factorize(&channels, &complements, PrecoderKind::Bd, 1.0)?;
    let mut out = Vec::with_capacity(plan.snr.len() * plan.combos.len());
    for &(_, snr) in &plan.snr {
        let rbd = if plan.needs_rbd {
            Some(factorize(&channels, &complements, PrecoderKind::Rbd, snr)?)
        } else {
            None
        };
        for &(method, _, delta) in &plan.combos {
            let factors = match method.precoder() {
                PrecoderKind::Bd => &bd,
                PrecoderKind::Rbd => rbd.as_ref().expect("RBD factors prepared"),
            };
            let allocator = match method {
                Method::BdFr | Method::CqaBd | Method::CqaRbd => Allocator::Equal,
                Method::BdFrWf => Allocator::WaterFilling,
                Method::CqaBdMaas | Method::CqaRbdMaas => Allocator::Maas {
                    delta,
                    options: MaasOptions {
                        normalization: opts.normalization,
                        saturation: opts.saturation,
                    },
                },
            };
            let alloc = allocator.allocate(&factors.spectrum(), snr)?;
            if alloc.saturated_fallback {
                log::debug!("trial {trial}: {method} at SNR {snr:.3} fell back to water-filling");
            }
            let pre = assemble_precoder(factors, &alloc.omega)?;
            out.push(sum_rate_bussgang(&channels.h, &pre.p, delta, snr, opts.rate_variant)?);
        }
    }
    Ok(out)
}

/// Sum in a balanced tree; the result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn run_sweep(scenario: &SystemScenario, methods: &[Method], opts: &SweepOptions) -> Result<SweepResult> {
    scenario.validate()?;
    if methods.is_empty() {
        return Err(Error::Config("no methods selected".into()));
    }
    let start = Instant::now();
    let combos: Vec<(Method, Option<u32>, f64)> = expand_methods(methods, &scenario.bits)
        .into_iter()
        .map(|(m, b)| {
            let delta = match b {
                Some(b) => build_quantizer(b, scenario.total_power, scenario.n_tx, StepPolicy::MseOptimal)?.delta,
                None => 1.0,
            };
            Ok((m, b, delta))
        })
        .collect::<Result<_>>()?;
    let mut snr_db = scenario.snr_db_grid.clone();
    snr_db.sort_by(f64::total_cmp);
    snr_db.dedup();
    let plan = Plan {
        snr: snr_db.iter().map(|&d| (d, SystemScenario::snr_linear(d))).collect(),
        needs_rbd: combos.iter().any(|c| c.0.precoder() == PrecoderKind::Rbd),
        combos,
    };

    let run = |t: usize| one_trial(scenario, &plan, opts, t).map_err(|e| Error::Trial { trial: t, source: Box::new(e) });
    let per_trial: Vec<Vec<f64>> = if opts.sequential {
        (0..scenario.trials).map(run).collect::<Result<_>>()?
    } else {
        use rayon::prelude::*;
        (0..scenario.trials).into_par_iter().map(run).collect::<Result<_>>()?
    };

    let mut rows = Vec::with_capacity(plan.snr.len() * plan.combos.len());
    let mut column = vec![0.0; scenario.trials];
    for (s, &(db, _)) in plan.snr.iter().enumerate() {
        for (c, &(method, bits, _)) in plan.combos.iter().enumerate() {
            let k = s * plan.combos.len() + c;
            for (t, rates) in per_trial.iter().enumerate() {
                column[t] = rates[k];
            }
            let (mean_rate, stderr) = mean_stderr(&column);
            rows.push(SweepRow {
                snr_db: db,
                method,
                bits,
                mean_rate,
                stderr,
                trials: scenario.trials,
            });
        }
    }
    Ok(SweepResult {
        scenario_digest: scenario.digest(),
        rows,
        runtime_ms: start.elapsed().as_millis() as u64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(Error::Config(format!("unknown output format `{s}` (csv or json)"))),
        }
    }
}

pub const CSV_HEADER: &str = "snr_db,method,bits,mean_rate_bits,stderr,trials";

pub fn results_csv(result: &SweepResult) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &result.rows {
        let bits = r.bits.map_or_else(|| "full".to_string(), |b| b.to_string());
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.snr_db, r.method, bits, r.mean_rate, r.stderr, r.trials
        ));
    }
    out
}

/// Write the table atomically, so a failed write leaves no partial file.
pub fn write_results(result: &SweepResult, path: &Path, format: OutputFormat) -> Result<()> {
    let text = match format {
        OutputFormat::Csv => results_csv(result),
        OutputFormat::Json => serde_json::to_string_pretty(result)
            .map_err(|e| Error::Internal(format!("serializing results: {e}")))?,
    };
    write_atomic(path, text.as_bytes())
}
