//! `ppqme` command-line driver.

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ppqme::validate::{run_suite, ValidationOptions};
use ppqme::{Engine, Error, InitialState, PropagationOptions, WeightingFunction};

use config::RunConfig;
use output::{Diagnostics, RunMetadata, SweepRow};

#[derive(Parser)]
#[command(name = "ppqme", version, about = "Partially polaron-transformed second-order time-local master equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate one configuration and write the trajectory CSV and JSON metadata.
    Simulate(RunArgs),
    /// Run one trajectory per weighting parameter value and summarise the coherence metric.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values in cm^-1 (omega_h) or dimensionless (alpha).
        /// Defaults: omega_c x {0.1, 1, 10} for omega_h, {2, 3, 4} for alpha.
        #[arg(long)]
        values: Option<String>,
    },
    /// Write the correlation tables of a configuration without propagating.
    DumpCorrelations(RunArgs),
    /// Run the built-in invariant and oracle suite.
    Validate {
        /// Negative control: corrupt w_12 so that the w-consistency check fails.
        #[arg(long, hide = true)]
        corrupt_debye_waller: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory that relative output paths are resolved against.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accept smooth weightings with alpha <= 1.
    #[arg(long)]
    allow_divergent_alpha: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    #[value(name = "omega_h")]
    OmegaH,
    Alpha,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::OmegaH => "omega_h",
            SweepParam::Alpha => "alpha",
        }
    }
}

enum Failure {
    Config(String),
    Numerical(String),
    Validation,
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Validation => 4,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let text = format!("[{}] {e}", e.code());
        if e.is_config() {
            Failure::Config(text)
        } else {
            Failure::Numerical(text)
        }
    }
}

fn io_failure(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Config(format!("[output] cannot write {}: {e}", path.display()))
}

fn resolve(out: &Option<PathBuf>, p: &Path) -> PathBuf {
    match out {
        Some(dir) => dir.join(p),
        None => p.to_path_buf(),
    }
}

fn initial_note(cfg: &RunConfig) -> String {
    match cfg.initial_state() {
        InitialState::Site(j) if cfg.run.initial_site.is_none() && cfg.run.initial_matrix.is_none() => {
            format!("default |{0}><{0}| (assumed donor start)", j + 1)
        }
        InitialState::Site(j) => format!("|{0}><{0}|", j + 1),
        InitialState::Matrix(_) => "run.initial_matrix".into(),
    }
}

fn simulate(args: &RunArgs) -> Result<(), Failure> {
    let cfg = RunConfig::load(&args.config)?;
    let sigma0 = cfg.sigma0()?;
    let engine = Engine::build(&cfg.model(args.allow_divergent_alpha)?, cfg.grid()?, &sigma0)?;
    let opts = PropagationOptions { stride: cfg.run.stride, inhom_order: cfg.inhom_order()?, ..Default::default() };
    let tr = engine.propagate(&sigma0, &opts)?;

    let csv = resolve(&args.out, &cfg.output.csv_path);
    output::write_trajectory(&csv, &tr, engine.frame()).map_err(io_failure(&csv))?;
    let json = resolve(&args.out, &cfg.output.json_path);
    let meta = RunMetadata {
        engine_version: env!("CARGO_PKG_VERSION"),
        config: &cfg,
        initial_condition: initial_note(&cfg),
        frame: engine.frame_summary(),
        diagnostics: Diagnostics::new(&tr),
    };
    output::write_json(&json, &meta).map_err(io_failure(&json))?;
    eprintln!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn parse_values(text: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| Failure::Config(format!("[config] --values: `{s}`: {e}"))))
        .collect()
}

fn swept(base: WeightingFunction, param: SweepParam, value: f64) -> Result<WeightingFunction, Error> {
    match (base, param) {
        (WeightingFunction::Step { .. }, SweepParam::OmegaH) => Ok(WeightingFunction::Step { omega_h: value }),
        (WeightingFunction::Smooth { alpha, .. }, SweepParam::OmegaH) => Ok(WeightingFunction::Smooth { omega_h: value, alpha }),
        (WeightingFunction::Smooth { omega_h, .. }, SweepParam::Alpha) => Ok(WeightingFunction::Smooth { omega_h, alpha: value }),
        _ => Err(Error::config("weighting.kind", format!("cannot sweep {} for this weighting kind", param.name()))),
    }
}

fn sweep(args: &RunArgs, param: SweepParam, values: Option<&str>) -> Result<(), Failure> {
    let cfg = RunConfig::load(&args.config)?;
    let values = match values {
        Some(v) => parse_values(v)?,
        None => match param {
            SweepParam::OmegaH => [0.1, 1.0, 10.0].iter().map(|r| r * cfg.bath.omega_c_cm1).collect(),
            SweepParam::Alpha => vec![2.0, 3.0, 4.0],
        },
    };
    if values.is_empty() {
        eprintln!("warning: empty --values list, nothing to do");
        return Ok(());
    }
    let base = cfg.model(args.allow_divergent_alpha)?;
    swept(base.weighting, param, values[0])?;
    let sigma0 = cfg.sigma0()?;
    let grid = cfg.grid()?;
    let opts = PropagationOptions { stride: cfg.run.stride, inhom_order: cfg.inhom_order()?, ..Default::default() };
    let stem = |v: f64| format!("sweep_{}_{v}", param.name());

    let rows: Vec<SweepRow> = std::thread::scope(|s| {
        let handles: Vec<_> = values
            .iter()
            .map(|&value| {
                let (base, sigma0, cfg) = (&base, &sigma0, &cfg);
                s.spawn(move || -> Result<(f64, f64), String> {
                    let mut spec = base.clone();
                    spec.weighting = swept(base.weighting, param, value).map_err(|e| e.to_string())?;
                    let engine = Engine::build(&spec, grid, sigma0).map_err(|e| e.to_string())?;
                    let tr = engine.propagate(sigma0, &opts).map_err(|e| e.to_string())?;
                    let csv = resolve(&args.out, Path::new(&format!("{}.csv", stem(value))));
                    output::write_trajectory(&csv, &tr, engine.frame()).map_err(|e| e.to_string())?;
                    let mut echo = cfg.clone();
                    match param {
                        SweepParam::OmegaH => echo.weighting.omega_h_cm1 = Some(value),
                        SweepParam::Alpha => echo.weighting.alpha = Some(value),
                    }
                    echo.output.csv_path = csv.clone();
                    let json = csv.with_extension("json");
                    echo.output.json_path = json.clone();
                    let meta = RunMetadata {
                        engine_version: env!("CARGO_PKG_VERSION"),
                        config: &echo,
                        initial_condition: initial_note(cfg),
                        frame: engine.frame_summary(),
                        diagnostics: Diagnostics::new(&tr),
                    };
                    output::write_json(&json, &meta).map_err(|e| e.to_string())?;
                    let p1 = tr.samples.last().map_or(f64::NAN, |x| x.populations[0]);
                    Ok((tr.coherence_metric(0), p1))
                })
            })
            .collect();
        values
            .iter()
            .zip(handles)
            .map(|(&value, h)| SweepRow {
                value,
                outcome: h.join().unwrap_or_else(|_| Err("worker panicked".into())),
            })
            .collect()
    });

    let summary = resolve(&args.out, Path::new(&format!("sweep_{}_summary.csv", param.name())));
    output::write_sweep_summary(&summary, param.name(), &rows).map_err(io_failure(&summary))?;
    for r in &rows {
        match &r.outcome {
            Ok((metric, p1)) => eprintln!("{} = {}: coherence_metric {metric:.4}, P_1 final {p1:.4}", param.name(), r.value),
            Err(e) => eprintln!("{} = {}: failed: {e}", param.name(), r.value),
        }
    }
    eprintln!("wrote {}", summary.display());
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        return Err(Failure::Numerical(format!("{failed} of {} sweep points failed", rows.len())));
    }
    Ok(())
}

fn dump_correlations(args: &RunArgs) -> Result<(), Failure> {
    let cfg = RunConfig::load(&args.config)?;
    let sigma0 = cfg.sigma0()?;
    let engine = Engine::build(&cfg.model(args.allow_divergent_alpha)?, cfg.grid()?, &sigma0)?;
    let path = resolve(&args.out, &cfg.output.csv_path.with_file_name(correlations_name(&cfg.output.csv_path)));
    output::write_correlations(&path, engine.tables(), cfg.run.stride).map_err(io_failure(&path))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn correlations_name(csv: &Path) -> String {
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("trajectory");
    format!("{stem}_correlations.csv")
}

fn validate(corrupt_debye_waller: bool) -> Result<(), Failure> {
    let report = run_suite(ValidationOptions { corrupt_debye_waller });
    println!("{report}");
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure::Validation)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Sweep { run, param, values } => sweep(run, *param, values.as_deref()),
        Command::DumpCorrelations(args) => dump_correlations(args),
        Command::Validate { corrupt_debye_waller } => validate(*corrupt_debye_waller),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(m) | Failure::Numerical(m) => eprintln!("error: {m}"),
                Failure::Validation => eprintln!("error: validation failed"),
            }
            ExitCode::from(f.exit_code())
        }
    }
}
