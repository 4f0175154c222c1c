use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ptysim::format::{read_dataset, read_field, write_dataset, write_field};
use ptysim::forward::{poissonize, simulate_noiseless};
use ptysim::metrics::mtf_from_star;
use ptysim::probes::{build_probe, feature_size_nm, probe_fwhm, ProbeKind};
use ptysim::scan::ScanTrajectory;
use ptysim::solver::reconstruct;
use ptysim::wavefield::{dynamic_range_decades, far_field_intensity, radial_average, ComplexField};
use ptysim_cli::config::{ConfigError, ExperimentConfig, ProbeKindConfig};
use ptysim_cli::experiment::{
    build_object, build_trajectory, derive_seed, metric_radii, run_experiment, write_objective_csv,
    write_profile_csv, ExperimentError,
};
use ptysim_cli::io::write_atomic;
use serde::Deserialize;

#[derive(Parser, Debug)]
#[command(name = "ptysim", version, about = "Structured-illumination ptychography simulator")]
struct Cli {
    /// JSON configuration (experiment schema, or a probe file for `probe` commands).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallel trial jobs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Skip Poisson noise.
    #[arg(long, global = true)]
    no_noise: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Probe construction and far-field analysis.
    Probe {
        #[command(subcommand)]
        action: ProbeAction,
    },
    /// Object, probe and spiral scan to a PTYD dataset.
    Simulate {
        /// Probe id from the config (default: the first probe).
        #[arg(long)]
        probe_id: Option<String>,
        #[arg(long, default_value_t = 0)]
        flux_index: usize,
    },
    /// Recover the object from a dataset with a known probe.
    Reconstruct {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        probe: PathBuf,
    },
    /// Siemens-star MTF of a reconstruction.
    Mtf {
        #[arg(long)]
        reconstruction: PathBuf,
    },
    /// Full multi-probe, multi-trial comparison.
    Experiment,
}

#[derive(Subcommand, Debug)]
enum ProbeAction {
    /// Build a probe from a probe file and save it as CFLD.
    Gen,
    /// Radial far-field profile CSV and dynamic range.
    Farfield {
        /// Existing CFLD probe instead of a probe file.
        #[arg(long)]
        probe: Option<PathBuf>,
    },
}

/// Unknown keys are rejected by the flattened kind.
#[derive(Debug, Deserialize)]
struct ProbeFile {
    #[serde(flatten)]
    kind: ProbeKindConfig,
    width_nm: f64,
    #[serde(default = "d_pixel")]
    pixel_size_nm: f64,
    #[serde(default = "d_grid")]
    grid_size: usize,
    #[serde(default = "d_flux")]
    flux: f64,
}

fn d_pixel() -> f64 {
    10.0
}
fn d_grid() -> usize {
    128
}
fn d_flux() -> f64 {
    1.0
}

fn config_error(path: impl Into<String>, message: impl ToString) -> ExperimentError {
    ExperimentError::Config(ConfigError {
        path: path.into(),
        message: message.to_string(),
    })
}

fn require<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, ExperimentError> {
    v.as_deref().ok_or_else(|| config_error(flag, "is required"))
}

fn experiment_config(cli: &Cli) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if cli.no_noise {
        cfg.noise = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn probe_from_file(path: &Path) -> Result<(ProbeFile, ComplexField<f64>), ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|e| config_error(path.display().to_string(), e))?;
    let file: ProbeFile =
        serde_json::from_str(&text).map_err(|e| config_error(path.display().to_string(), e))?;
    let cfg = ExperimentConfig {
        pixel_size_nm: file.pixel_size_nm,
        probe_grid: file.grid_size,
        probe_width_nm: file.width_nm,
        ..ExperimentConfig::default()
    };
    let probe_cfg = ptysim_cli::config::ProbeConfig {
        id: "probe".into(),
        kind: file.kind.clone(),
        width_nm: None,
    };
    let spec = cfg.probe_spec(&probe_cfg, file.flux);
    let field = build_probe(&spec).map_err(|e| config_error("probe", e))?;
    Ok((file, field))
}

fn read_cfld(path: &Path) -> Result<ComplexField<f64>, ExperimentError> {
    Ok(read_field(BufReader::new(File::open(path)?))?)
}

fn run(cli: &Cli) -> Result<(), ExperimentError> {
    match &cli.command {
        Command::Probe { action: ProbeAction::Gen } => {
            let (file, field) = probe_from_file(require(&cli.config, "--config")?)?;
            let out = require(&cli.out, "--out")?;
            write_atomic(out, |w| Ok::<_, ExperimentError>(write_field(&field, w)?))?;
            if let ProbeKindConfig::Mura { length, absorption } = file.kind {
                let spec = ptysim::probes::ProbeSpec {
                    kind: ProbeKind::Mura { length, absorption },
                    width_nm: file.width_nm,
                    pixel_size_nm: file.pixel_size_nm,
                    grid_size: file.grid_size,
                    flux: file.flux,
                };
                let (size, small) = feature_size_nm(&spec)?;
                println!("feature_size_nm={size}");
                println!("sub_30nm_feature={small}");
            }
            println!("fwhm_nm={}", probe_fwhm(&field)?);
            println!("flux={}", field.flux());
        }
        Command::Probe {
            action: ProbeAction::Farfield { probe },
        } => {
            let field = match probe {
                Some(p) => read_cfld(p)?,
                None => probe_from_file(require(&cli.config, "--config")?)?.1,
            };
            let profile = radial_average(&far_field_intensity(&field));
            let out = require(&cli.out, "--out")?;
            write_atomic(out, |w| write_profile_csv(&profile, w))?;
            println!("dynamic_range_decades={}", dynamic_range_decades(&profile)?);
        }
        Command::Simulate { probe_id, flux_index } => {
            let cfg = experiment_config(cli)?;
            let out = require(&cli.out, "--out")?;
            let (index, probe_cfg) = match probe_id {
                Some(id) => cfg
                    .probes
                    .iter()
                    .enumerate()
                    .find(|(_, p)| &p.id == id)
                    .ok_or_else(|| config_error("--probe-id", format!("no probe {id:?}")))?,
                None => (0, &cfg.probes[0]),
            };
            let flux = *cfg
                .flux_levels
                .get(*flux_index)
                .ok_or_else(|| config_error("--flux-index", format!("{flux_index} out of range")))?;
            let object = build_object(&cfg)?;
            let trajectory = build_trajectory(&cfg, object.shape())?;
            let probe = build_probe(&cfg.probe_spec(probe_cfg, flux))
                .map_err(|e| config_error(format!("probes[{index}]"), e))?;
            let mut data = simulate_noiseless(&object, &probe, &trajectory)?;
            if cfg.noise {
                data = poissonize(&data, derive_seed(cfg.seed, &probe_cfg.id, *flux_index, 0))?;
            }
            write_atomic(&out.join("object.cfld"), |w| Ok::<_, ExperimentError>(write_field(&object, w)?))?;
            write_atomic(&out.join("probe.cfld"), |w| Ok::<_, ExperimentError>(write_field(&probe, w)?))?;
            write_atomic(&out.join("trajectory.csv"), |w| {
                Ok::<_, ExperimentError>(trajectory.write_csv(w)?)
            })?;
            write_atomic(&out.join("dataset.ptyd"), |w| Ok::<_, ExperimentError>(write_dataset(&data, w)?))?;
            println!("frames={}", data.frames.len());
            println!("noisy={}", data.noisy);
        }
        Command::Reconstruct {
            dataset,
            trajectory,
            probe,
        } => {
            let cfg = experiment_config(cli)?;
            let out = require(&cli.out, "--out")?;
            let probe = read_cfld(probe)?;
            let traj = ScanTrajectory::read_csv(BufReader::new(File::open(trajectory)?), probe.shape().0)?;
            let data = read_dataset::<f64>(BufReader::new(File::open(dataset)?), traj)?;
            let shape = build_object(&cfg)?.shape();
            let initial = ComplexField::ones(shape.0, shape.1, probe.pixel_size());
            let state = reconstruct(&data, &probe, &cfg.solver.to_solver(), initial)?;
            write_atomic(&out.join("reconstruction.cfld"), |w| {
                Ok::<_, ExperimentError>(write_field(&state.object_estimate, w)?)
            })?;
            write_atomic(&out.join("objective.csv"), |w| {
                write_objective_csv(&state.objective_history, w)
            })?;
            for (it, snap) in &state.checkpoints {
                write_atomic(&out.join(format!("checkpoint_{it:05}.cfld")), |w| {
                    Ok::<_, ExperimentError>(write_field(snap, w)?)
                })?;
            }
            println!("iterations={}", state.iteration);
            println!("stalled={}", state.stalled);
            if let Some(last) = state.objective_history.last() {
                println!("objective={last}");
            }
        }
        Command::Mtf { reconstruction } => {
            let cfg = experiment_config(cli)?;
            let star = cfg
                .star()
                .ok_or_else(|| config_error("object", "MTF needs a Siemens star object"))?;
            let out = require(&cli.out, "--out")?;
            let field = read_cfld(reconstruction)?;
            let curve = mtf_from_star(&field, &star, &metric_radii(&cfg, &star)?)?;
            write_atomic(out, |w| Ok::<_, ExperimentError>(curve.write_csv(w)?))?;
            let smooth = curve.smoothed(cfg.metrics.sg_window, cfg.metrics.sg_order)?;
            println!(
                "band_integral={}",
                smooth.band_integral(cfg.metrics.band[0], cfg.metrics.band[1])
            );
        }
        Command::Experiment => {
            let mut cfg = experiment_config(cli)?;
            if let Some(out) = &cli.out {
                cfg.output_dir = out.clone();
            }
            let report = run_experiment(&cfg)?;
            for e in &report.ensembles {
                println!(
                    "{} flux={} band_mean={} band_std={}",
                    e.probe_id, cfg.flux_levels[e.flux_index], e.band_mean, e.band_std
                );
            }
            for f in &report.failures {
                eprintln!("trial failed: {} f{} t{}: {}", f.probe_id, f.flux_index, f.trial, f.error);
            }
            println!("manifest={}", report.output_dir.join("manifest.json").display());
            if !report.failures.is_empty() {
                return Err(ExperimentError::TrialsFailed(report.failures.len()));
            }
        }
    }
    std::io::stdout().flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
