//! Command-line front end: simulate comparator campaigns, analyze
//! recorded series, and persist reports and plot-ready CSV files.
//!
//! Exit codes: 0 success, 2 configuration problems, 3 data problems,
//! 4 runtime failures (lock loss, non-convergence).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use comparator_core::config::load_config;
use comparator_core::dsp::{
    allan_deviation, dft_bin_amplitude, flux_to_current, noise_slope_id, square_wave_extract,
    SquareWaveProtocol,
};
use comparator_core::error::Error;
use comparator_core::fit::{fit_frequency_response, fit_line, FitResult, ResponseModel};
use comparator_core::io::{
    emit_plotdata, load_report, load_timeseries, write_report, write_timeseries, ALLAN_HEADER,
};
use comparator_core::sim::{
    run_ac_campaign, simulate_measurement, AcCampaignOptions, ComparatorConfig, Drive,
};
use comparator_core::spectrum::amplitude_spectrum;

/// Environment variable supplying the default output directory.
const OUT_DIR_ENV: &str = "COMPARATOR_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "comparator",
    version,
    about = "NV-diamond current-comparator twin: simulation and ratio metrology"
)]
struct Cli {
    /// Print progress details to stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one measurement and write the raw series plus spectrum.
    Simulate(SimulateArgs),
    /// Extract a current difference from a recorded series.
    Analyze(AnalyzeArgs),
    /// Allan deviation of a recorded series.
    Allan(AllanArgs),
    /// Fit a two-column CSV with a named model.
    Fit(FitArgs),
    /// Frequency x amplitude AC campaign with linearity and response fits.
    Sweep(SweepArgs),
    /// Re-emit plot CSV files from a saved report.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Campaign configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to $COMPARATOR_OUT_DIR or '.'.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the configured random seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "ac")]
    drive: DriveKind,
    /// Excitation frequency for AC drives, Hz.
    #[arg(long, default_value_t = 67.0)]
    f0: f64,
    /// Drive amplitude, A.
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    /// Record length for AC drives, s.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    /// Square-wave half period for DC drives, s.
    #[arg(long, default_value_t = 1.0)]
    half_period: f64,
    /// Transient exclusion per half, s.
    #[arg(long, default_value_t = 0.5)]
    exclusion: f64,
    /// Square-wave cycle count for DC drives.
    #[arg(long, default_value_t = 30)]
    cycles: u32,
}

#[derive(Copy, Clone, ValueEnum)]
enum DriveKind {
    Ac,
    Dc,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Input series CSV (time_s, field_T).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    protocol: ProtocolKind,
    /// Excitation frequency for the AC protocol, Hz.
    #[arg(long, default_value_t = 67.0)]
    f0: f64,
    /// Flux-to-current conversion coefficient, pT/nA; computed from
    /// --config (or the calibrated defaults) when absent.
    #[arg(long)]
    coefficient: Option<f64>,
    /// Optional configuration for the conversion coefficient.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Square-wave half period, s (DC protocol).
    #[arg(long, default_value_t = 1.0)]
    half_period: f64,
    /// Transient exclusion per half, s (DC protocol).
    #[arg(long, default_value_t = 0.5)]
    exclusion: f64,
    /// Cycles evaluated (DC protocol); 0 means as many as fit.
    #[arg(long, default_value_t = 0)]
    cycles: u32,
    /// Write a JSON summary here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, ValueEnum)]
enum ProtocolKind {
    Ac,
    Dc,
}

#[derive(Args)]
struct AllanArgs {
    /// Input series CSV (time_s, field_T).
    #[arg(long)]
    input: PathBuf,
    /// Averaging times, comma-separated seconds.
    #[arg(long, value_delimiter = ',', required = true)]
    taus: Vec<f64>,
    /// Conversion coefficient, pT/nA, for the sigma_A column; computed
    /// from --config (or the calibrated defaults) when absent.
    #[arg(long)]
    coefficient: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for allan.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV with two numeric columns (x, y), header optional.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    model: FitModel,
    /// Write the fit result as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, ValueEnum)]
enum FitModel {
    /// Ratio error vs frequency: eps_h + eps_e * f.
    RatioFreq,
    /// Ordinary least-squares line.
    Line,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Frequencies, comma-separated Hz.
    #[arg(long, value_delimiter = ',', required = true)]
    freqs: Vec<f64>,
    /// Amplitudes, comma-separated A.
    #[arg(long, value_delimiter = ',', required = true)]
    amps: Vec<f64>,
    /// Extraction window, s.
    #[arg(long, default_value_t = 1.0)]
    window: f64,
    /// Windows averaged per grid point.
    #[arg(long, default_value_t = 100)]
    repeats: u32,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Saved report JSON.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Simulate(args) => simulate(cli, args),
        Command::Analyze(args) => analyze(cli, args),
        Command::Allan(args) => allan(cli, args),
        Command::Fit(args) => fit(cli, args),
        Command::Sweep(args) => sweep(cli, args),
        Command::Report(args) => report(cli, args),
    }
}

fn out_dir(requested: &Option<PathBuf>) -> Result<PathBuf, Error> {
    let dir = requested
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::config(format!("output dir {}: {e}", dir.display())))?;
    Ok(dir)
}

fn require_exists(path: &Path) -> Result<(), Error> {
    if !path.exists() {
        return Err(Error::data(format!("{} does not exist", path.display())));
    }
    Ok(())
}

fn load_config_with_warnings(cli: &Cli, path: &Path) -> Result<ComparatorConfig, Error> {
    require_exists(path)?;
    let loaded = load_config(path)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    if cli.verbose > 0 {
        eprintln!("loaded configuration from {}", path.display());
    }
    Ok(loaded.config)
}

/// pT/nA -> T/A.
fn coefficient_si(pt_per_na: f64) -> f64 {
    pt_per_na * 1e-3
}

fn resolve_coefficient(
    cli: &Cli,
    coefficient: &Option<f64>,
    config: &Option<PathBuf>,
    frequency: f64,
) -> Result<f64, Error> {
    if let Some(c) = coefficient {
        if !(*c > 0.0) {
            return Err(Error::config("coefficient must be positive"));
        }
        return Ok(coefficient_si(*c));
    }
    let cfg = match config {
        Some(path) => load_config_with_warnings(cli, path)?,
        None => ComparatorConfig::paper_defaults(),
    };
    let k = cfg.effective_coefficient(frequency)?;
    eprintln!(
        "using conversion coefficient {:.4} pT/nA at {frequency} Hz",
        k * 1e3
    );
    Ok(k)
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<(), Error> {
    let mut cfg = load_config_with_warnings(cli, &args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let (drive, duration) = match args.drive {
        DriveKind::Ac => (
            Drive::Ac {
                frequency_hz: args.f0,
                amplitude_a: args.amplitude,
            },
            args.duration,
        ),
        DriveKind::Dc => {
            let protocol = SquareWaveProtocol::new(args.half_period, args.exclusion, args.cycles)?;
            (
                Drive::DcSquare {
                    amplitude_a: args.amplitude,
                    protocol,
                },
                protocol.total_duration(),
            )
        }
    };
    let series = simulate_measurement(&cfg, &drive, duration)?;
    let dir = out_dir(&args.out)?;
    let ts_path = dir.join("timeseries.csv");
    write_timeseries(&series, &ts_path)?;
    let spec = amplitude_spectrum(&series)?;
    let spec_path = dir.join("spectrum.csv");
    {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(&spec_path)?);
        writeln!(w, "frequency_Hz,amplitude_T")?;
        for (f, a) in spec.frequencies.iter().zip(&spec.amplitudes) {
            writeln!(w, "{f},{a}")?;
        }
    }
    println!(
        "simulated {:.3} s at {} Hz (seed {}); wrote {} and {}",
        series.duration(),
        series.sample_rate(),
        cfg.seed,
        ts_path.display(),
        spec_path.display()
    );
    Ok(())
}

fn analyze(cli: &Cli, args: &AnalyzeArgs) -> Result<(), Error> {
    require_exists(&args.input)?;
    let series = load_timeseries(&args.input)?;
    if cli.verbose > 0 {
        eprintln!(
            "loaded {} samples at {} Hz",
            series.len(),
            series.sample_rate()
        );
    }
    let summary = match args.protocol {
        ProtocolKind::Ac => {
            let k = resolve_coefficient(cli, &args.coefficient, &args.config, args.f0)?;
            let amp = dft_bin_amplitude(&series, args.f0)?;
            let current = flux_to_current(amp, k)?;
            println!(
                "AC extraction at {} Hz: flux {:.4e} T, current difference {:.4e} A",
                args.f0, amp, current
            );
            serde_json::json!({
                "protocol": "ac",
                "f0_hz": args.f0,
                "flux_amplitude_t": amp,
                "current_diff_a": current,
                "coefficient_t_per_a": k,
            })
        }
        ProtocolKind::Dc => {
            let k = resolve_coefficient(cli, &args.coefficient, &args.config, 0.0)?;
            let cycles = if args.cycles > 0 {
                args.cycles
            } else {
                (series.duration() / (2.0 * args.half_period)).floor() as u32
            };
            let proto = SquareWaveProtocol::new(args.half_period, args.exclusion, cycles)?;
            let ex = square_wave_extract(&series, &proto)?;
            let current = flux_to_current(ex.mean_step, k)?;
            let se_current = ex.standard_error / k;
            println!(
                "DC extraction over {} cycles: step {:.4e} +/- {:.4e} T, current difference {:.4e} +/- {:.4e} A",
                cycles, ex.mean_step, ex.standard_error, current, se_current
            );
            serde_json::json!({
                "protocol": "dc",
                "cycles": cycles,
                "mean_step_t": ex.mean_step,
                "se_step_t": ex.standard_error,
                "off_mean_t": ex.off_mean,
                "current_diff_a": current,
                "se_current_diff_a": se_current,
                "coefficient_t_per_a": k,
            })
        }
    };
    if let Some(out) = &args.out {
        std::fs::write(out, serde_json::to_string_pretty(&summary)?)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn allan(cli: &Cli, args: &AllanArgs) -> Result<(), Error> {
    require_exists(&args.input)?;
    let series = load_timeseries(&args.input)?;
    let k = resolve_coefficient(cli, &args.coefficient, &args.config, 0.0)?;
    let curve = allan_deviation(&series, &args.taus)?;
    for tau in &curve.skipped_taus {
        eprintln!("warning: tau {tau} s skipped (series too short)");
    }
    let dir = out_dir(&args.out)?;
    let path = dir.join("allan.csv");
    {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(w, "{ALLAN_HEADER}")?;
        for i in 0..curve.taus.len() {
            writeln!(
                w,
                "{},{},{},{}",
                curve.taus[i],
                curve.sigmas[i],
                curve.sigmas[i] / k,
                curve.ci_rel(i)
            )?;
        }
    }
    match noise_slope_id(&curve) {
        Ok(slopes) => {
            for s in slopes {
                println!(
                    "decade 1e{} s: slope {:+.3} ({:?})",
                    s.decade_exp, s.slope, s.label
                );
            }
        }
        Err(e) => eprintln!("slope identification skipped: {e}"),
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn load_xy(path: &Path) -> Result<Vec<(f64, f64)>, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let row = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut fields = trimmed.split(',');
        let (a, b) = (fields.next().unwrap_or(""), fields.next().unwrap_or(""));
        match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
            (Ok(x), Ok(y)) => points.push((x, y)),
            _ if row == 1 => continue,
            _ => {
                return Err(Error::data(format!(
                    "row {row}: expected two numeric columns"
                )))
            }
        }
    }
    Ok(points)
}

fn print_fit(fit: &FitResult) {
    for p in &fit.parameters {
        println!("  {} = {:.6e} +/- {:.3e}", p.name, p.value, p.variance.sqrt());
    }
    println!("  residual norm {:.3e}", fit.residual_norm);
}

fn fit(cli: &Cli, args: &FitArgs) -> Result<(), Error> {
    require_exists(&args.input)?;
    let points = load_xy(&args.input)?;
    if cli.verbose > 0 {
        eprintln!("loaded {} points", points.len());
    }
    let result = match args.model {
        FitModel::RatioFreq => fit_frequency_response(&points, ResponseModel::RatioErrorAffine)?,
        FitModel::Line => fit_line(&points)?,
    };
    print_fit(&result);
    if let Some(out) = &args.out {
        std::fs::write(out, serde_json::to_string_pretty(&result)?)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn sweep(cli: &Cli, args: &SweepArgs) -> Result<(), Error> {
    let mut cfg = load_config_with_warnings(cli, &args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let opts = AcCampaignOptions {
        window_s: args.window,
        repeats: args.repeats,
    };
    let report = run_ac_campaign(&cfg, &args.freqs, &args.amps, &opts)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let dir = out_dir(&args.out)?;
    let report_path = dir.join("report.json");
    write_report(&report, &report_path)?;
    let files = emit_plotdata(&report, &dir)?;
    if let Some(ac) = &report.ac {
        for cell in &ac.cells {
            println!(
                "{:7.2} Hz {:5.2} A: current diff {:.4e} +/- {:.2e} A (ratio error {:.3e})",
                cell.frequency_hz,
                cell.amplitude_a,
                cell.mean_current_diff_a,
                cell.se_current_diff_a,
                cell.ratio_error
            );
        }
        for f in &ac.frequency_fits {
            println!("frequency response at {} A:", f.amplitude_a);
            print_fit(&f.fit);
        }
    }
    println!(
        "wrote {} and {} plot files",
        report_path.display(),
        files.len()
    );
    Ok(())
}

fn report(cli: &Cli, args: &ReportArgs) -> Result<(), Error> {
    require_exists(&args.input)?;
    let report = load_report(&args.input)?;
    if cli.verbose > 0 {
        eprintln!(
            "report from version {} (seed {})",
            report.software_version, report.seed
        );
    }
    let dir = out_dir(&args.out)?;
    let files = emit_plotdata(&report, &dir)?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    if files.is_empty() {
        eprintln!("report holds no plottable sections");
    }
    Ok(())
}
