//! Command-line front end: `mix`, `separate`, `eval`, and `bench`.

mod bench;
mod config;
mod pipeline;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bss_core::error::{BssError, Result};
use bss_core::metrics::evaluate;
use bss_core::mixgen;
use bss_core::signal::TimeDomainAudio;
use bss_core::wav;

use config::{load_run_config_file, Method, ReportFormat, RunConfig, RunConfigFile};

#[derive(Parser)]
#[command(
    name = "bss",
    about = "Determined blind source separation by primal-dual splitting",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a seeded mixture and its per-source references.
    Mix(MixArgs),
    /// Separate a multichannel WAV into per-source estimates.
    Separate(SeparateArgs),
    /// Score separated estimates against reference signals.
    Eval(EvalArgs),
    /// Run a method/lambda/kappa/seed benchmark grid.
    Bench(BenchArgs),
}

#[derive(Args)]
struct MixArgs {
    /// Built-in scenario name (det2-harmonic, det2-harmonic-convolutive) or
    /// path to a mix-spec TOML file.
    #[arg(long, default_value = "det2-harmonic")]
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SeparateArgs {
    /// Input mixture WAV (one channel per microphone).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Run configuration TOML; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    #[arg(long)]
    window_length: Option<usize>,
    #[arg(long)]
    hop: Option<usize>,
    #[arg(long)]
    fft_length: Option<usize>,
    #[arg(long)]
    mu1: Option<f64>,
    #[arg(long)]
    mu2: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    kappa: Option<u32>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    quefrency_length: Option<usize>,
    /// Reference microphone for back projection (0-based).
    #[arg(long)]
    ref_channel: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of estimate WAVs (sorted by file name).
    #[arg(long)]
    estimates: PathBuf,
    /// Directory of reference WAVs (sorted by file name).
    #[arg(long)]
    references: PathBuf,
    /// Unprocessed mixture WAV for SDR-improvement baselines.
    #[arg(long)]
    mixture: Option<PathBuf>,
    /// Channel of the mixture to use as the baseline.
    #[arg(long, default_value_t = 0)]
    mixture_channel: usize,
    #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
    format: ReportFormat,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Grid configuration TOML.
    #[arg(long)]
    grid: PathBuf,
    /// Long-form results CSV.
    #[arg(long)]
    out: PathBuf,
    /// Completed-cell index (default: <out>.index).
    #[arg(long)]
    index: Option<PathBuf>,
}

fn cmd_mix(args: &MixArgs) -> Result<()> {
    let seed = args.seed.unwrap_or(0);
    let spec = bench::scenario_spec(&args.scenario, seed)?;
    for w in spec.warnings(None) {
        log::warn!("{w}");
    }
    let out = mixgen::synthesize(&spec)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let mix_path = args.out_dir.join("mixture.wav");
    wav::write_wav(&out.mixture, &mix_path)?;
    for n in 0..out.references.channels() {
        let path = args.out_dir.join(format!("reference_{:02}.wav", n + 1));
        wav::write_wav(&out.references.channel(n)?, &path)?;
    }
    let spec_dump =
        toml::to_string_pretty(&spec).map_err(|e| BssError::InvalidConfig(e.to_string()))?;
    std::fs::write(args.out_dir.join("mix_spec.toml"), spec_dump)?;
    println!(
        "wrote {} and {} references to {}",
        mix_path.display(),
        out.references.channels(),
        args.out_dir.display()
    );
    Ok(())
}

fn separate_config(args: &SeparateArgs) -> Result<RunConfig> {
    let mut file = match &args.config {
        Some(path) => load_run_config_file(path)?,
        None => RunConfigFile::default(),
    };
    if args.method.is_some() {
        file.method = args.method;
    }
    macro_rules! override_field {
        ($section:ident . $field:ident) => {
            if args.$field.is_some() {
                file.$section.$field = args.$field;
            }
        };
    }
    override_field!(stft.window_length);
    override_field!(stft.hop);
    override_field!(stft.fft_length);
    override_field!(solver.mu1);
    override_field!(solver.mu2);
    override_field!(solver.alpha);
    override_field!(solver.iterations);
    override_field!(params.lambda);
    override_field!(params.kappa);
    override_field!(params.gamma);
    override_field!(params.epsilon);
    override_field!(params.p);
    override_field!(params.quefrency_length);
    if args.ref_channel.is_some() {
        file.ref_channel = args.ref_channel;
    }
    RunConfig::resolve(&file)
}

fn cmd_separate(args: &SeparateArgs) -> Result<()> {
    let cfg = separate_config(args)?;
    let input = wav::read_wav(&args.input)?;
    std::fs::create_dir_all(&args.out_dir)?;

    let result = match pipeline::run_separation(&input, &cfg) {
        Ok(r) => r,
        Err(BssError::Diverged { iteration, partial_trace }) => {
            // dump what we have before propagating the failure
            let path = args.out_dir.join("trace_partial.csv");
            report::write_trace_csv(&path, &partial_trace)?;
            return Err(BssError::Diverged { iteration, partial_trace });
        }
        Err(e) => return Err(e),
    };

    for n in 0..result.estimates.channels() {
        let path = args.out_dir.join(format!("estimate_{:02}.wav", n + 1));
        wav::write_wav(&result.estimates.channel(n)?, &path)?;
    }
    report::write_trace_csv(&args.out_dir.join("trace.csv"), &result.trace)?;

    // resolved configuration (defaults included) for provenance
    let resolved = serde_json::json!({
        "input": args.input.display().to_string(),
        "config": cfg,
        "operator_scale": result.operator_scale,
        "pseudo_inverse_bins": result.pseudo_inverse_bins,
    });
    std::fs::write(
        args.out_dir.join("run_config.json"),
        serde_json::to_string_pretty(&resolved).expect("config serializes"),
    )?;
    println!(
        "separated {} sources ({} iterations, method {}) into {}",
        result.estimates.channels(),
        cfg.iterations,
        cfg.method.as_str(),
        args.out_dir.display()
    );
    Ok(())
}

fn sorted_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(BssError::InvalidConfig(format!(
            "no .wav files in {}",
            dir.display()
        )));
    }
    Ok(paths)
}

fn stack_wavs(paths: &[PathBuf]) -> Result<TimeDomainAudio> {
    let mut rate = None;
    let mut rows: Vec<ndarray::Array1<f64>> = Vec::new();
    let mut len = usize::MAX;
    for p in paths {
        let audio = wav::read_wav(p)?;
        if *rate.get_or_insert(audio.sample_rate) != audio.sample_rate {
            return Err(BssError::InvalidConfig("mixed sample rates".into()));
        }
        len = len.min(audio.len());
        rows.push(audio.samples.row(0).to_owned());
    }
    let mut samples = ndarray::Array2::zeros((rows.len(), len));
    for (i, r) in rows.iter().enumerate() {
        for j in 0..len {
            samples[(i, j)] = r[j];
        }
    }
    TimeDomainAudio::new(samples, rate.expect("at least one file"))
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let estimates = stack_wavs(&sorted_wavs(&args.estimates)?)?;
    let references = stack_wavs(&sorted_wavs(&args.references)?)?;
    if estimates.len() != references.len() {
        return Err(BssError::DimensionMismatch(format!(
            "estimates are {} samples, references {}",
            estimates.len(),
            references.len()
        )));
    }
    let mixture = args
        .mixture
        .as_ref()
        .map(|p| -> Result<TimeDomainAudio> { wav::read_wav(p)?.channel(args.mixture_channel) })
        .transpose()?;
    let report = evaluate(&estimates, &references, mixture.as_ref())?;

    let rendered = match args.format {
        ReportFormat::Csv => {
            let mut buf = Vec::new();
            report::eval_report_csv(&mut buf, &report)?;
            String::from_utf8(buf).expect("csv is utf8")
        }
        ReportFormat::Json => serde_json::to_string_pretty(&report::eval_report_json(&report))
            .expect("report serializes"),
    };
    match &args.out {
        Some(path) => std::fs::write(path, rendered)?,
        None => print!("{rendered}"),
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let grid = bench::load_grid(&args.grid)?;
    let summary = bench::run_bench(&grid, &args.out, args.index.as_deref())?;
    println!(
        "bench complete: {} cells run, {} skipped (resume), {} failed -> {}",
        summary.completed,
        summary.skipped,
        summary.failed,
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Mix(args) => cmd_mix(args),
        Command::Separate(args) => cmd_separate(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
