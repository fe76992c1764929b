//! Command-line front end: argument parsing and dispatch.
//!
//! SNR flags are in dB; they are converted to linear SNR here and nowhere
//! else on the command-line path.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use qprecode_core::channel::{apply_csi_impairment, gen_channel, ChannelSet};
use qprecode_core::harness::{self, run_sweep, write_results, Method, OutputFormat, SweepOptions};
use qprecode_core::matio::{read_matrix, read_vector, write_matrix};
use qprecode_core::power::{
    rate_objective, Allocator, LevelNormalization, MaasOptions, SaturationPolicy, SpectrumView,
};
use qprecode_core::precoder::{build_cqa_precoder, PrecoderKind};
use qprecode_core::quantizer::{build_quantizer, estimate_bussgang_mc, StepPolicy};
use qprecode_core::rate::{flops_precoder, sum_rate_bussgang, FlopsKind, RateVariant};
use qprecode_core::rng::trial_rng;
use qprecode_core::scenario::{apply_overrides, SystemScenario};
use qprecode_core::Error;

/// Environment variable giving the directory for relative output paths.
pub const OUT_DIR_ENV: &str = "QPRECODE_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "qprecode",
    version,
    about = "BD/RBD precoding with few-bit DACs: sweeps, allocation and complexity counts",
    after_help = "Exit codes: 0 success, 1 I/O error, 2 usage or config error, 3 numeric or model-validity error.\n\
                  Relative output paths are resolved against $QPRECODE_OUT_DIR when it is set."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo sum-rate sweep over SNR, method and DAC resolution.
    Sweep(SweepArgs),
    /// Compare the closed-form Bussgang gain with a Monte Carlo estimate.
    BussgangCheck(BussgangArgs),
    /// Allocate power over a spectrum of effective channel gains.
    Allocate(AllocateArgs),
    /// Build a precoder for a channel matrix file.
    Precode(PrecodeArgs),
    /// Print the closed-form FLOP count of a precoder.
    Flops(FlopsArgs),
    /// Write the channel drawn for one trial of a scenario.
    Channel(ChannelArgs),
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Named scenario: fig2, fig3-perfect or fig3-icsi.
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// TOML scenario file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a scenario key, e.g. --set n_tx=32 or --set 'snr_db_grid=[0,10]' (SNR in dB).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Number of Monte Carlo trials (count).
    #[arg(long)]
    pub trials: Option<usize>,
    /// Base seed of the per-trial random streams.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SaturationArg {
    /// Report the saturated regime as an error (exit 3).
    Error,
    /// Fall back to classical water-filling.
    Wf,
}

impl From<SaturationArg> for SaturationPolicy {
    fn from(s: SaturationArg) -> Self {
        match s {
            SaturationArg::Error => SaturationPolicy::Error,
            SaturationArg::Wf => SaturationPolicy::WaterFilling,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NormalizationArg {
    /// Active powers sum to the budget; reduces to water-filling at full resolution.
    Consistent,
    /// `N_u` kept inside the root; ignores the budget.
    Unbudgeted,
}

impl From<NormalizationArg> for LevelNormalization {
    fn from(n: NormalizationArg) -> Self {
        match n {
            NormalizationArg::Consistent => LevelNormalization::Consistent,
            NormalizationArg::Unbudgeted => LevelNormalization::Unbudgeted,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RateArg {
    /// Signal covariance without the δ² factor.
    UnitSignal,
    /// Signal covariance scaled by δ².
    ScaledSignal,
}

impl From<RateArg> for RateVariant {
    fn from(r: RateArg) -> Self {
        match r {
            RateArg::UnitSignal => RateVariant::UnitSignal,
            RateArg::ScaledSignal => RateVariant::ScaledSignal,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Comma-separated methods: BD-FR, BD-FR+WF, CQA-BD, CQA-RBD, CQA-BD-MAAS, CQA-RBD-MAAS.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format; inferred from the --out extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Run trials on one thread (bit-identical to the parallel result).
    #[arg(long)]
    pub sequential: bool,
    /// Handling of the saturated allocation regime.
    #[arg(long, value_enum, default_value = "wf")]
    pub saturation: SaturationArg,
    /// Normalization of the quantization-aware water level.
    #[arg(long, value_enum, default_value = "consistent")]
    pub normalization: NormalizationArg,
    /// Signal covariance of the rate expression.
    #[arg(long, value_enum, default_value = "unit-signal")]
    pub rate: RateArg,
}

#[derive(Debug, Args)]
pub struct BussgangArgs {
    /// DAC resolution in bits (1..=12).
    #[arg(long)]
    pub bits: u32,
    /// Transmit antennas N_b (count).
    #[arg(long, default_value_t = 64)]
    pub ntx: usize,
    /// Total transmit power P (linear).
    #[arg(long, default_value_t = 1.0)]
    pub power: f64,
    /// Quantizer step per real dimension (linear amplitude); MSE-optimal when omitted.
    #[arg(long)]
    pub step: Option<f64>,
    /// Monte Carlo samples (count, at least 10000).
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    /// Random seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AllocMethodArg {
    Equal,
    Wf,
    Maas,
}

#[derive(Debug, Args)]
pub struct AllocateArgs {
    /// File of effective channel gains φ (one per line or comma separated).
    #[arg(long)]
    pub spectrum: PathBuf,
    /// SNR in dB.
    #[arg(long, allow_hyphen_values = true)]
    pub snr_db: f64,
    /// DAC resolution in bits; sets δ from the MSE-optimal quantizer.
    #[arg(long, conflicts_with = "delta")]
    pub bits: Option<u32>,
    /// Bussgang gain δ in (0, 1] (linear); 1 when neither --bits nor --delta is given.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Allocation rule.
    #[arg(long, value_enum, default_value = "maas")]
    pub method: AllocMethodArg,
    /// Power budget (linear); defaults to the number of sub-channels.
    #[arg(long)]
    pub p_total: Option<f64>,
    /// Handling of the saturated allocation regime (maas only).
    #[arg(long, value_enum, default_value = "wf")]
    pub saturation: SaturationArg,
    #[arg(long, value_enum, default_value = "consistent")]
    pub normalization: NormalizationArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Bd,
    Rbd,
}

#[derive(Debug, Args)]
pub struct PrecodeArgs {
    /// Channel matrix file (.csv with interleaved re,im columns, or binary).
    #[arg(long)]
    pub channel: PathBuf,
    /// Receive antennas per user, comma separated (count each).
    #[arg(long, value_delimiter = ',', required = true)]
    pub users: Vec<usize>,
    #[arg(long, value_enum, default_value = "bd")]
    pub kind: KindArg,
    /// SNR in dB.
    #[arg(long, allow_hyphen_values = true, default_value_t = 10.0)]
    pub snr_db: f64,
    #[arg(long, value_enum, default_value = "equal")]
    pub method: AllocMethodArg,
    /// DAC resolution in bits for the rate and the quantization-aware allocation; unquantized when omitted.
    #[arg(long)]
    pub bits: Option<u32>,
    /// Write the precoder matrix here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FlopsKindArg {
    Bd,
    Rbd,
    CqaBd,
    CqaRbd,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    #[arg(long, value_enum)]
    pub kind: FlopsKindArg,
    /// Transmit antennas N_b (count).
    #[arg(long)]
    pub ntx: u64,
    /// Total receive antennas N_u (count).
    #[arg(long)]
    pub nrx: u64,
    /// Receive antennas per user N_j (count).
    #[arg(long)]
    pub nj: u64,
    /// DAC resolution in bits for the quantization-aware kinds.
    #[arg(long, default_value_t = 3)]
    pub bits: u32,
}

#[derive(Debug, Args)]
pub struct ChannelArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Trial index (count from 0).
    #[arg(long, default_value_t = 0)]
    pub trial: usize,
    /// Write the transmitter's estimate instead of the true channel.
    #[arg(long)]
    pub estimated: bool,
    /// Output matrix file (.csv or binary).
    #[arg(long)]
    pub out: PathBuf,
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    dispatch_to(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// [`parse_and_dispatch`] with explicit output streams.
pub fn dispatch_to<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    match run(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::Trial { source, .. } => exit_code(source),
        e if e.is_numeric() => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

fn resolve_out(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if path.is_relative() => PathBuf::from(dir).join(path),
        _ => path.to_path_buf(),
    }
}

fn load_scenario(args: &ScenarioArgs) -> Result<(SystemScenario, Option<Vec<Method>>), Error> {
    let (mut table, methods) = match (&args.preset, &args.config) {
        (Some(name), _) => {
            let (s, m) = harness::preset(name)?;
            (s.to_table(), Some(m))
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let table: toml::Table = text
                .parse()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            (table, None)
        }
        (None, None) => return Err(Error::Config("one of --preset or --config is required".into())),
    };
    apply_overrides(&mut table, &args.overrides)?;
    if let Some(t) = args.trials {
        table.insert("trials".into(), toml::Value::Integer(t as i64));
    }
    if let Some(s) = args.seed {
        let v = i64::try_from(s).map_err(|_| Error::Config(format!("seed {s} exceeds the config range")))?;
        table.insert("seed".into(), toml::Value::Integer(v));
    }
    let scenario = SystemScenario::from_table(&table)?;
    scenario.validate()?;
    Ok((scenario, methods))
}

fn bussgang_delta(bits: u32) -> Result<f64, Error> {
    // δ depends only on the resolution under the MSE-optimal step.
    Ok(build_quantizer(bits, 1.0, 1, StepPolicy::MseOptimal)?.delta)
}

fn emit_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    writeln!(out, "{text}").map_err(|e| Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    })
}

fn run(command: Command, out: &mut dyn Write) -> Result<(), Error> {
    match command {
        Command::Sweep(a) => sweep(a, out),
        Command::BussgangCheck(a) => bussgang_check(a, out),
        Command::Allocate(a) => allocate(a, out),
        Command::Precode(a) => precode(a, out),
        Command::Flops(a) => flops(a, out),
        Command::Channel(a) => channel(a),
    }
}

fn sweep(a: SweepArgs, out: &mut dyn Write) -> Result<(), Error> {
    let (scenario, preset_methods) = load_scenario(&a.scenario)?;
    let methods: Vec<Method> = match (&a.methods, preset_methods) {
        (Some(list), _) => list.iter().map(|m| m.parse()).collect::<Result<_, _>>()?,
        (None, Some(m)) => m,
        (None, None) => Method::ALL.to_vec(),
    };
    let format = match (a.format, &a.out) {
        (Some(FormatArg::Csv), _) => OutputFormat::Csv,
        (Some(FormatArg::Json), _) => OutputFormat::Json,
        (None, Some(p)) if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) => OutputFormat::Json,
        _ => OutputFormat::Csv,
    };
    let opts = SweepOptions {
        sequential: a.sequential,
        saturation: a.saturation.into(),
        normalization: a.normalization.into(),
        rate_variant: a.rate.into(),
    };
    log::info!(
        "sweep: {} trials, {} SNR points, scenario {}",
        scenario.trials,
        scenario.snr_db_grid.len(),
        &scenario.digest()[..12]
    );
    let result = run_sweep(&scenario, &methods, &opts)?;
    log::info!("sweep finished in {} ms", result.runtime_ms);
    match a.out {
        Some(p) => write_results(&result, &resolve_out(&p), format),
        None => match format {
            OutputFormat::Csv => write!(out, "{}", harness::results_csv(&result)).map_err(|e| Error::Io {
                path: PathBuf::from("<stdout>"),
                source: e,
            }),
            OutputFormat::Json => emit_json(out, &result),
        },
    }
}

#[derive(Serialize)]
struct BussgangReport {
    bits: u32,
    levels: u32,
    step: f64,
    alpha: f64,
    delta: f64,
    delta_mc: f64,
    delta_mc_stderr: f64,
    relative_error: f64,
    power: f64,
    power_mc: f64,
    samples: usize,
}

fn bussgang_check(a: BussgangArgs, out: &mut dyn Write) -> Result<(), Error> {
    let policy = a.step.map_or(StepPolicy::MseOptimal, StepPolicy::Explicit);
    let q = build_quantizer(a.bits, a.power, a.ntx, policy)?;
    let est = estimate_bussgang_mc(&q, a.samples, &mut trial_rng(a.seed, 0))?;
    emit_json(
        out,
        &BussgangReport {
            bits: q.bits,
            levels: q.levels,
            step: q.step,
            alpha: q.alpha,
            delta: q.delta,
            delta_mc: est.delta_hat,
            delta_mc_stderr: est.delta_stderr,
            relative_error: (q.delta - est.delta_hat).abs() / q.delta,
            power: q.total_power,
            power_mc: est.out_power,
            samples: est.samples,
        },
    )
}

#[derive(Serialize)]
struct AllocationReport {
    method: &'static str,
    snr_db: f64,
    delta: f64,
    p_total: f64,
    omega: Vec<f64>,
    mu_opt: Option<f64>,
    active: usize,
    total: f64,
    c1: Option<f64>,
    c2: Option<f64>,
    iterations: usize,
    saturated_fallback: bool,
    objective_bits: f64,
}

fn allocate(a: AllocateArgs, out: &mut dyn Write) -> Result<(), Error> {
    let phi = read_vector(&a.spectrum)?;
    let spectrum = SpectrumView::new(phi)?;
    let n = spectrum.len() as f64;
    let delta = match (a.bits, a.delta) {
        (Some(b), _) => bussgang_delta(b)?,
        (None, Some(d)) => d,
        (None, None) => 1.0,
    };
    let snr = SystemScenario::snr_linear(a.snr_db);
    let p_total = a.p_total.unwrap_or(n);
    let noise = p_total / snr;
    let (label, r) = match a.method {
        AllocMethodArg::Equal => ("equal", qprecode_core::power::equal_allocation(spectrum.len(), p_total)?),
        AllocMethodArg::Wf => ("wf", qprecode_core::power::waterfilling(&spectrum, noise, p_total)?),
        AllocMethodArg::Maas => {
            let options = MaasOptions {
                normalization: a.normalization.into(),
                saturation: a.saturation.into(),
            };
            // The water level is written in terms of N_u/SNR; rescale the SNR
            // so the effective noise stays p_total/SNR for any budget.
            let snr_eff = snr * n / p_total;
            ("maas", qprecode_core::power::cqa_maas(&spectrum, snr_eff, delta, p_total, options)?)
        }
    };
    let objective_bits = rate_objective(&r.omega, &spectrum.phi, delta, noise)?;
    emit_json(
        out,
        &AllocationReport {
            method: label,
            snr_db: a.snr_db,
            delta,
            p_total,
            mu_opt: r.mu_opt,
            active: r.active,
            total: r.total,
            c1: r.c1,
            c2: r.c2,
            iterations: r.iterations,
            saturated_fallback: r.saturated_fallback,
            objective_bits,
            omega: r.omega,
        },
    )
}

#[derive(Serialize)]
struct PrecodeReport {
    kind: PrecoderKind,
    n_tx: usize,
    n_rx_per_user: Vec<usize>,
    snr_db: f64,
    delta: f64,
    sv_effective: Vec<Vec<f64>>,
    omega: Vec<f64>,
    transmit_power: f64,
    sum_rate_bits: f64,
}

fn precode(a: PrecodeArgs, out: &mut dyn Write) -> Result<(), Error> {
    let h = read_matrix(&a.channel)?;
    let channels = ChannelSet::new(h, &a.users)?;
    let kind = match a.kind {
        KindArg::Bd => PrecoderKind::Bd,
        KindArg::Rbd => PrecoderKind::Rbd,
    };
    let delta = a.bits.map(bussgang_delta).transpose()?.unwrap_or(1.0);
    let snr = SystemScenario::snr_linear(a.snr_db);
    let allocator = match a.method {
        AllocMethodArg::Equal => Allocator::Equal,
        AllocMethodArg::Wf => Allocator::WaterFilling,
        AllocMethodArg::Maas => Allocator::Maas {
            delta,
            options: MaasOptions::default(),
        },
    };
    let (pre, alloc) = build_cqa_precoder(&channels, kind, snr, &allocator)?;
    let rate = sum_rate_bussgang(&channels.h, &pre.p, delta, snr, RateVariant::UnitSignal)?;
    if let Some(p) = &a.out {
        write_matrix(&resolve_out(p), &pre.p)?;
    }
    emit_json(
        out,
        &PrecodeReport {
            kind,
            n_tx: channels.n_tx(),
            n_rx_per_user: channels.n_rx_per_user(),
            snr_db: a.snr_db,
            delta,
            sv_effective: pre.per_user.iter().map(|u| u.sv_effective.clone()).collect(),
            omega: alloc.omega,
            transmit_power: pre.p.iter().map(|z| z.norm_sqr()).sum(),
            sum_rate_bits: rate,
        },
    )
}

fn flops(a: FlopsArgs, out: &mut dyn Write) -> Result<(), Error> {
    if a.bits == 0 || a.bits > qprecode_core::scenario::MAX_BITS {
        return Err(Error::InvalidArgument(format!("bits = {} outside 1..=12", a.bits)));
    }
    let kind = match a.kind {
        FlopsKindArg::Bd => FlopsKind::Bd,
        FlopsKindArg::Rbd => FlopsKind::Rbd,
        FlopsKindArg::CqaBd => FlopsKind::CqaBd { bits: a.bits },
        FlopsKindArg::CqaRbd => FlopsKind::CqaRbd { bits: a.bits },
    };
    writeln!(out, "{}", flops_precoder(kind, a.ntx, a.nrx, a.nj)).map_err(|e| Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    })
}

fn channel(a: ChannelArgs) -> Result<(), Error> {
    let (scenario, _) = load_scenario(&a.scenario)?;
    let mut rng = trial_rng(scenario.seed, a.trial as u64);
    let mut ch = gen_channel(&scenario, &mut rng);
    if scenario.has_impairment() {
        ch = apply_csi_impairment(ch, scenario.corr_coeff, scenario.csi_error_var, &mut rng)?;
    }
    let m = if a.estimated { &ch.h_est } else { &ch.h };
    write_matrix(&resolve_out(&a.out), m)
}
