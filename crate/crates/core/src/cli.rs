//! Command-line surface of the `memprof` binary.
//!
//! Exit codes: 0 success, 2 data error, 64 usage error. Output files are
//! written only once a command has fully succeeded.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::Error;
use crate::estimators::{estimate_profile_with_metric, EstimatorKind, MemorisationProfile};
use crate::inference::{
    apply_bands, bands_from_draws, bootstrap_draws, BandKind, BootstrapConfig, SeMethod,
    WeightFamily,
};
use crate::panel::load_panel;
use crate::profile::{
    instantaneous, persistent_average, persistent_average_with_bands, profile_correlation,
    residual, CorrelationMode, Series, SeriesKind,
};
use crate::report::{render_heatmap, sha256_hex, write_all_or_nothing, HeatmapOptions, Manifest};
use crate::synth::{generate_panel, monte_carlo, SynthConfig, MIN_REPLICATIONS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "MEMPROF_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "memprof",
    version,
    about = "Memorisation profiles from checkpoint panels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check that a panel CSV is well formed and balanced.
    Validate {
        #[arg(long)]
        panel: PathBuf,
    },
    /// Estimate a memorisation profile.
    Estimate {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long, default_value = "did")]
        kind: EstimatorKind,
        #[arg(long, default_value = "outcome")]
        metric: String,
        /// Profile CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Multiplier-bootstrap confidence bands for a profile.
    Bands {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long, default_value = "did")]
        kind: EstimatorKind,
        #[arg(long = "boot", default_value_t = 1000)]
        boot: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "rademacher")]
        weights: WeightFamily,
        /// Use the plain bootstrap sd instead of the rescaled IQR.
        #[arg(long)]
        sd: bool,
        /// Pointwise normal bands instead of simultaneous sup-t bands.
        #[arg(long)]
        pointwise: bool,
        /// Directory receiving `bands.json` and `profile_masked.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Instantaneous, persistent or residual series of a profile.
    Aggregate {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        mode: SeriesKind,
        /// Checkpoint for the residual view; defaults to the last one.
        #[arg(long)]
        at: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pearson correlation between two profiles over shared cells.
    Correlate {
        first: PathBuf,
        second: PathBuf,
        #[arg(long)]
        significant_only: bool,
    },
    /// Monte Carlo check of an estimator against a synthetic regime.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "did")]
        kind: EstimatorKind,
        #[arg(long, default_value_t = 2000)]
        replications: usize,
        /// Also compute bootstrap bands per replication and report coverage.
        #[arg(long)]
        bands: bool,
        #[arg(long = "boot", default_value_t = 1000)]
        boot: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Bootstrap seed; defaults to the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Monte Carlo report JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write one panel drawn from the config.
        #[arg(long)]
        emit_panel: Option<PathBuf>,
    },
    /// Profile, bands, series, heatmap and manifest in one directory.
    Report {
        #[arg(long, conflicts_with = "profile")]
        panel: Option<PathBuf>,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value = "did")]
        kind: EstimatorKind,
        #[arg(long, default_value = "outcome")]
        metric: String,
        #[arg(long = "boot", default_value_t = 1000)]
        boot: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epoch_boundary: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn init_threads() {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        // Fails only if the pool is already built, e.g. by an earlier call.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

/// Runs the CLI with explicit arguments and output streams; returns the
/// process exit code.
pub fn run<'a, I, T>(args: I, stdout: &'a mut dyn Write, stderr: &'a mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let sink = if code == EXIT_OK { stdout } else { stderr };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    init_threads();
    match dispatch(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(stderr, "usage error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_DATA
        }
    }
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> CmdResult {
    match command {
        Command::Validate { panel } => cmd_validate(&panel, stdout),
        Command::Estimate {
            panel,
            kind,
            metric,
            out,
        } => cmd_estimate(&panel, kind, &metric, out.as_deref(), stdout),
        Command::Bands {
            panel,
            profile,
            kind,
            boot,
            alpha,
            seed,
            weights,
            sd,
            pointwise,
            out,
        } => {
            let config = BootstrapConfig {
                draws: boot,
                alpha,
                seed,
                weights,
                se_method: if sd { SeMethod::Sd } else { SeMethod::Iqr },
                band: if pointwise {
                    BandKind::Pointwise
                } else {
                    BandKind::Simultaneous
                },
            };
            cmd_bands(&panel, &profile, kind, &checked(config)?, &out, stdout)
        }
        Command::Aggregate {
            profile,
            mode,
            at,
            out,
        } => cmd_aggregate(&profile, mode, at, out.as_deref(), stdout),
        Command::Correlate {
            first,
            second,
            significant_only,
        } => {
            let mode = if significant_only {
                CorrelationMode::SignificantOnly
            } else {
                CorrelationMode::AllCells
            };
            cmd_correlate(&first, &second, mode, stdout)
        }
        Command::Simulate {
            config,
            kind,
            replications,
            bands,
            boot,
            alpha,
            seed,
            out,
            emit_panel,
        } => {
            if replications < MIN_REPLICATIONS {
                return Err(Failure::Usage(format!(
                    "--replications must be at least {MIN_REPLICATIONS}, got {replications}"
                )));
            }
            if bands {
                checked(BootstrapConfig::new(boot, alpha, seed.unwrap_or(0)))?;
            }
            cmd_simulate(
                &config,
                kind,
                replications,
                bands.then_some((boot, alpha, seed)),
                out.as_deref(),
                emit_panel.as_deref(),
                stdout,
            )
        }
        Command::Report {
            panel,
            profile,
            kind,
            metric,
            boot,
            alpha,
            seed,
            epoch_boundary,
            out,
        } => {
            let source = match (panel, profile) {
                (Some(p), None) => {
                    let seed = seed.ok_or_else(|| {
                        Failure::Usage("--seed is required when reporting from a panel".into())
                    })?;
                    ReportSource::Panel {
                        path: p,
                        config: checked(BootstrapConfig::new(boot, alpha, seed))?,
                    }
                }
                (None, Some(p)) => ReportSource::Profile(p),
                _ => {
                    return Err(Failure::Usage(
                        "pass exactly one of --panel or --profile".into(),
                    ))
                }
            };
            cmd_report(source, kind, &metric, epoch_boundary, &out, stdout)
        }
    }
}

/// Bootstrap settings outside their valid range are usage errors.
fn checked(config: BootstrapConfig) -> std::result::Result<BootstrapConfig, Failure> {
    config
        .validate()
        .map(|()| config)
        .map_err(|e| Failure::Usage(e.to_string()))
}

fn read(path: &Path) -> std::result::Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| {
        Failure::Data(Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        )))
    })
}

fn emit(out: Option<&Path>, bytes: Vec<u8>, stdout: &mut dyn Write) -> CmdResult {
    match out {
        Some(path) => write_all_or_nothing(&[(path.to_path_buf(), bytes)])?,
        None => stdout.write_all(&bytes).map_err(Error::from)?,
    }
    Ok(())
}

fn cmd_validate(path: &Path, stdout: &mut dyn Write) -> CmdResult {
    let panel = load_panel(read(path)?.as_slice())?;
    let (n, c) = panel.shape();
    writeln!(
        stdout,
        "{n} instances, {c} checkpoints, {} groups + validation",
        panel.treatment_grid().len()
    )
    .map_err(Error::from)?;
    Ok(())
}

fn cmd_estimate(
    path: &Path,
    kind: EstimatorKind,
    metric: &str,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> CmdResult {
    let panel = load_panel(read(path)?.as_slice())?;
    let profile = estimate_profile_with_metric(&panel, kind, metric)?;
    emit(out, profile.to_csv_string()?.into_bytes(), stdout)
}

fn load_profile(
    path: &Path,
    kind: EstimatorKind,
) -> std::result::Result<MemorisationProfile, Failure> {
    Ok(MemorisationProfile::read_csv(
        read(path)?.as_slice(),
        kind,
        "outcome",
    )?)
}

/// Checks that a profile read from disk holds this panel's estimates.
fn check_profile_source(
    expected: &MemorisationProfile,
    found: &MemorisationProfile,
) -> std::result::Result<(), Failure> {
    let same = expected.len() == found.len()
        && expected.cells().iter().zip(found.cells()).all(|(a, b)| {
            a.key() == b.key()
                && (a.estimate - b.estimate).abs() <= 1e-9 * a.estimate.abs().max(1.0)
        });
    if same {
        Ok(())
    } else {
        Err(Failure::Data(Error::CellMismatch(format!(
            "profile does not hold the {} estimates of this panel",
            expected.kind()
        ))))
    }
}

fn cmd_bands(
    panel_path: &Path,
    profile_path: &Path,
    kind: EstimatorKind,
    config: &BootstrapConfig,
    out: &Path,
    stdout: &mut dyn Write,
) -> CmdResult {
    let panel = load_panel(read(panel_path)?.as_slice())?;
    let profile = load_profile(profile_path, kind)?;
    check_profile_source(
        &estimate_profile_with_metric(&panel, kind, "outcome")?,
        &profile,
    )?;
    let draws = bootstrap_draws(&panel, &profile, config)?;
    let bands = bands_from_draws(&draws, kind, config)?;
    let masked = apply_bands(&profile, &bands)?;
    fs::create_dir_all(out).map_err(Error::from)?;
    write_all_or_nothing(&[
        (out.join("bands.json"), bands.to_json()?.into_bytes()),
        (
            out.join("profile_masked.csv"),
            masked.to_csv_string()?.into_bytes(),
        ),
    ])?;
    let n_sig = masked
        .cells()
        .iter()
        .filter(|c| c.significant == Some(true))
        .count();
    writeln!(
        stdout,
        "crit {:.6}, {n_sig} of {} cells significant at alpha {}",
        bands.crit,
        masked.len(),
        config.alpha
    )
    .map_err(Error::from)?;
    Ok(())
}

fn series_for(
    profile: &MemorisationProfile,
    mode: SeriesKind,
    at: Option<u64>,
) -> std::result::Result<Series, Failure> {
    Ok(match mode {
        SeriesKind::Instantaneous => instantaneous(profile),
        SeriesKind::PersistentAvg => persistent_average(profile),
        SeriesKind::Residual => {
            let last = *profile
                .checkpoint_steps()
                .last()
                .expect("non-empty profile");
            residual(profile, at.unwrap_or(last))?
        }
    })
}

fn cmd_aggregate(
    path: &Path,
    mode: SeriesKind,
    at: Option<u64>,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> CmdResult {
    let profile = load_profile(path, EstimatorKind::Did)?;
    let series = series_for(&profile, mode, at)?;
    emit(out, series.to_csv_string()?.into_bytes(), stdout)
}

fn cmd_correlate(
    first: &Path,
    second: &Path,
    mode: CorrelationMode,
    stdout: &mut dyn Write,
) -> CmdResult {
    let a = load_profile(first, EstimatorKind::Did)?;
    let b = load_profile(second, EstimatorKind::Did)?;
    let r = profile_correlation(&a, &b, mode)?;
    writeln!(stdout, "{r:?}").map_err(Error::from)?;
    Ok(())
}

fn cmd_simulate(
    path: &Path,
    kind: EstimatorKind,
    replications: usize,
    bands: Option<(usize, f64, Option<u64>)>,
    out: Option<&Path>,
    emit_panel: Option<&Path>,
    stdout: &mut dyn Write,
) -> CmdResult {
    let text = String::from_utf8(read(path)?)
        .map_err(|_| Failure::Data(Error::Config("config is not UTF-8".into())))?;
    let config = SynthConfig::from_json(&text)?;
    let boot = bands.map(|(draws, alpha, seed)| {
        BootstrapConfig::new(draws, alpha, seed.unwrap_or(config.seed))
    });
    let report = monte_carlo(&config, kind, replications, boot.as_ref())?;

    let mut files = Vec::new();
    if let Some(path) = out {
        files.push((path.to_path_buf(), report.to_json()?.into_bytes()));
    }
    if let Some(path) = emit_panel {
        let (panel, _) = generate_panel(&config)?;
        files.push((path.to_path_buf(), panel.to_csv_string()?.into_bytes()));
    }
    write_all_or_nothing(&files)?;
    stdout
        .write_all(report.summary().as_bytes())
        .map_err(Error::from)?;
    Ok(())
}

enum ReportSource {
    Panel {
        path: PathBuf,
        config: BootstrapConfig,
    },
    Profile(PathBuf),
}

fn cmd_report(
    source: ReportSource,
    kind: EstimatorKind,
    metric: &str,
    epoch_boundary: Option<u64>,
    out: &Path,
    stdout: &mut dyn Write,
) -> CmdResult {
    let mut parameters = BTreeMap::new();
    parameters.insert("kind".to_string(), kind.to_string());
    parameters.insert("metric".to_string(), metric.to_string());
    if let Some(b) = epoch_boundary {
        parameters.insert("epoch_boundary".to_string(), b.to_string());
    }
    let mut inputs = BTreeMap::new();
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut seed = None;

    let (profile, persistent) = match source {
        ReportSource::Panel { path, config } => {
            let bytes = read(&path)?;
            inputs.insert("panel".to_string(), sha256_hex(&bytes));
            parameters.insert("boot".to_string(), config.draws.to_string());
            parameters.insert("alpha".to_string(), format!("{:?}", config.alpha));
            parameters.insert("weights".to_string(), config.weights.to_string());
            seed = Some(config.seed);

            let panel = load_panel(bytes.as_slice())?;
            let profile = estimate_profile_with_metric(&panel, kind, metric)?;
            let draws = bootstrap_draws(&panel, &profile, &config)?;
            let bands = bands_from_draws(&draws, kind, &config)?;
            let masked = apply_bands(&profile, &bands)?;
            let persistent = persistent_average_with_bands(&masked, &draws, &config)?;
            files.push(("bands.json".into(), bands.to_json()?.into_bytes()));
            (masked, persistent)
        }
        ReportSource::Profile(path) => {
            let bytes = read(&path)?;
            inputs.insert("profile".to_string(), sha256_hex(&bytes));
            let profile = MemorisationProfile::read_csv(bytes.as_slice(), kind, metric)?;
            let persistent = persistent_average(&profile);
            (profile, persistent)
        }
    };

    let last = *profile
        .checkpoint_steps()
        .last()
        .expect("non-empty profile");
    let options = HeatmapOptions {
        title: format!("Memorisation profile ({kind})"),
        epoch_boundary,
        mask_insignificant: true,
    };
    files.push(("profile.csv".into(), profile.to_csv_string()?.into_bytes()));
    files.push((
        "instantaneous.csv".into(),
        instantaneous(&profile).to_csv_string()?.into_bytes(),
    ));
    files.push((
        "persistent.csv".into(),
        persistent.to_csv_string()?.into_bytes(),
    ));
    files.push((
        "residual.csv".into(),
        residual(&profile, last)?.to_csv_string()?.into_bytes(),
    ));
    files.push((
        "heatmap.svg".into(),
        render_heatmap(&profile, &options).into_bytes(),
    ));

    let outputs: BTreeMap<String, String> = files
        .iter()
        .map(|(name, bytes)| (name.clone(), sha256_hex(bytes)))
        .collect();
    let manifest = Manifest::new(seed, parameters, inputs, outputs);
    files.push(("manifest.json".into(), manifest.to_json()?.into_bytes()));

    fs::create_dir_all(out).map_err(Error::from)?;
    let staged: Vec<(PathBuf, Vec<u8>)> = files
        .into_iter()
        .map(|(name, bytes)| (out.join(name), bytes))
        .collect();
    write_all_or_nothing(&staged)?;
    let n_sig = profile
        .cells()
        .iter()
        .filter(|c| c.significant == Some(true))
        .count();
    writeln!(
        stdout,
        "{} cells ({n_sig} significant) written to {}",
        profile.len(),
        out.display()
    )
    .map_err(Error::from)?;
    Ok(())
}
