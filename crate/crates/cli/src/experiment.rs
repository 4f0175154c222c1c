//! Multi-probe, multi-flux, multi-trial comparison runs.

use std::io::Write;
use std::path::{Path, PathBuf};

use ptysim::format::{fmt_float, write_field};
use ptysim::forward::{poissonize, simulate_noiseless};
use ptysim::metrics::{
    aggregate_trials, default_radii, mtf_convergence, mtf_from_star, write_convergence_csv,
    ConvergencePoint, MtfCurve, TrialEnsemble,
};
use ptysim::phantom::{image_phantom, read_pgm, siemens_star, StarSpec};
use ptysim::probes::build_probe;
use ptysim::scan::{spiral_trajectory, ScanTrajectory};
use ptysim::solver::reconstruct;
use ptysim::wavefield::{dynamic_range_decades, far_field_intensity, radial_average, ComplexField, RadialProfile};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ConfigError, ExperimentConfig, ObjectConfig};
use crate::io::write_atomic;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] ptysim::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("{0} trials failed")]
    TrialsFailed(usize),
}

impl ExperimentError {
    pub fn is_config(&self) -> bool {
        matches!(self, ExperimentError::Config(_))
    }
}

type Result<T> = std::result::Result<T, ExperimentError>;

/// Noise seed: the first 8 bytes (little-endian) of SHA-256 over the base seed, the
/// length-prefixed probe id, the flux index and the trial index.
pub fn derive_seed(base: u64, probe_id: &str, flux_index: usize, trial: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update((probe_id.len() as u64).to_le_bytes());
    h.update(probe_id.as_bytes());
    h.update((flux_index as u64).to_le_bytes());
    h.update((trial as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRecord {
    pub id: String,
    pub flux_index: usize,
    pub flux: f64,
    /// Realized `Σ|P|²`.
    pub total_intensity: f64,
    pub dynamic_range_decades: f64,
    /// Mean radial far-field intensity over radii `[N/4, N/2)`.
    pub outer_half_mean: f64,
    #[serde(skip)]
    pub profile: RadialProfile<f64>,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub probe_id: String,
    pub flux_index: usize,
    pub trial: usize,
    pub seed: u64,
    pub iterations: usize,
    pub stalled: bool,
    pub objective_history: Vec<f64>,
    pub convergence: Vec<ConvergencePoint>,
    /// Smoothed final MTF; `None` for image objects.
    pub mtf: Option<MtfCurve>,
    pub band_integral: Option<f64>,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialFailure {
    pub probe_id: String,
    pub flux_index: usize,
    pub trial: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRecord {
    pub probe_id: String,
    pub flux_index: usize,
    pub ensemble: TrialEnsemble,
    /// Mean and sample standard deviation of the per-trial band integrals.
    pub band_mean: f64,
    pub band_std: f64,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub output_dir: PathBuf,
    pub config_hash: String,
    pub probes: Vec<ProbeRecord>,
    pub trials: Vec<TrialRecord>,
    pub failures: Vec<TrialFailure>,
    pub ensembles: Vec<EnsembleRecord>,
    /// Paths relative to `output_dir`, in creation order.
    pub artifacts: Vec<String>,
}

impl ExperimentReport {
    pub fn probe(&self, id: &str, flux_index: usize) -> Option<&ProbeRecord> {
        self.probes.iter().find(|p| p.id == id && p.flux_index == flux_index)
    }

    pub fn ensemble(&self, id: &str, flux_index: usize) -> Option<&EnsembleRecord> {
        self.ensembles
            .iter()
            .find(|e| e.probe_id == id && e.flux_index == flux_index)
    }

    pub fn trials_for<'a>(&'a self, id: &'a str, flux_index: usize) -> impl Iterator<Item = &'a TrialRecord> + 'a {
        self.trials
            .iter()
            .filter(move |t| t.probe_id == id && t.flux_index == flux_index)
    }
}

fn csv_err(e: ptysim::Error) -> ExperimentError {
    ExperimentError::Core(e)
}

fn write_artifact(
    root: &Path,
    rel: &str,
    artifacts: &mut Vec<String>,
    body: impl FnOnce(&mut dyn Write) -> Result<()>,
) -> Result<()> {
    write_atomic(&root.join(rel), body)?;
    artifacts.push(rel.to_string());
    Ok(())
}

pub fn write_profile_csv(profile: &RadialProfile<f64>, w: &mut dyn Write) -> std::io::Result<()> {
    writeln!(w, "radius_px,mean_intensity")?;
    for (r, m) in profile.radii.iter().zip(&profile.mean_intensity) {
        writeln!(w, "{r},{}", fmt_float(*m))?;
    }
    Ok(())
}

pub fn write_objective_csv(history: &[f64], w: &mut dyn Write) -> std::io::Result<()> {
    writeln!(w, "iteration,objective")?;
    for (i, v) in history.iter().enumerate() {
        writeln!(w, "{i},{}", fmt_float(*v))?;
    }
    Ok(())
}

/// Specimen described by the config.
pub fn build_object(cfg: &ExperimentConfig) -> Result<ComplexField<f64>> {
    match &cfg.object {
        ObjectConfig::Star { .. } => Ok(siemens_star(&cfg.star().expect("star object"))?),
        ObjectConfig::Image { path, phase_scale } => {
            let image = read_pgm(path).map_err(|e| ConfigError {
                path: "object.path".into(),
                message: e.to_string(),
            })?;
            Ok(image_phantom(&image, *phase_scale, cfg.pixel_size_nm)?)
        }
    }
}

pub fn build_trajectory(cfg: &ExperimentConfig, object_shape: (usize, usize)) -> Result<ScanTrajectory> {
    let (center, r_max) = cfg.spiral_geometry(object_shape.0.min(object_shape.1));
    spiral_trajectory(cfg.trajectory.n_points, center, r_max, cfg.probe_grid, object_shape).map_err(|e| {
        ExperimentError::Config(ConfigError {
            path: "trajectory".into(),
            message: e.to_string(),
        })
    })
}

pub fn metric_radii(cfg: &ExperimentConfig, star: &StarSpec<f64>) -> Result<Vec<f64>> {
    match &cfg.metrics.radii {
        Some(r) => Ok(r.clone()),
        None => default_radii(star, cfg.metrics.n_radii).map_err(|e| {
            ExperimentError::Config(ConfigError {
                path: "metrics.n_radii".into(),
                message: e.to_string(),
            })
        }),
    }
}

struct TrialJob<'a> {
    probe_id: &'a str,
    probe: &'a ComplexField<f64>,
    flux_index: usize,
    trial: usize,
}

#[derive(Serialize)]
struct ManifestTrial<'a> {
    probe_id: &'a str,
    flux_index: usize,
    trial: usize,
    seed: u64,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stalled: Option<bool>,
    artifacts: &'a [String],
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config_hash: &'a str,
    base_seed: u64,
    noise: bool,
    config: &'a ExperimentConfig,
    probes: &'a [ProbeRecord],
    trials: Vec<ManifestTrial<'a>>,
    artifacts: &'a [String],
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let root = cfg.output_dir.clone();
    std::fs::create_dir_all(&root)?;
    let mut artifacts = Vec::new();

    let object = build_object(cfg)?;
    let trajectory = build_trajectory(cfg, object.shape())?;
    let star = cfg.star();
    let radii = match &star {
        Some(s) => Some(metric_radii(cfg, s)?),
        None => None,
    };
    write_artifact(&root, "object.cfld", &mut artifacts, |w| Ok(write_field(&object, w)?))?;
    write_artifact(&root, "trajectory.csv", &mut artifacts, |w| {
        Ok(trajectory.write_csv(w)?)
    })?;

    let n = cfg.probe_grid as f64;
    let mut probes = Vec::new();
    let mut fields = Vec::new();
    for (k, &flux) in cfg.flux_levels.iter().enumerate() {
        for (i, p) in cfg.probes.iter().enumerate() {
            let field = build_probe(&cfg.probe_spec(p, flux)).map_err(|e| ConfigError {
                path: format!("probes[{i}]"),
                message: e.to_string(),
            })?;
            let profile = radial_average(&far_field_intensity(&field));
            let mut own = Vec::new();
            let stem = format!("probes/{}_f{k}", p.id);
            write_artifact(&root, &format!("{stem}.cfld"), &mut own, |w| Ok(write_field(&field, w)?))?;
            write_artifact(&root, &format!("{stem}_farfield.csv"), &mut own, |w| {
                Ok(write_profile_csv(&profile, w)?)
            })?;
            artifacts.extend(own.iter().cloned());
            probes.push(ProbeRecord {
                id: p.id.clone(),
                flux_index: k,
                flux,
                total_intensity: field.flux(),
                dynamic_range_decades: dynamic_range_decades(&profile)?,
                outer_half_mean: profile.band_mean(n / 4.0, n / 2.0).unwrap_or(0.0),
                profile,
                artifacts: own,
            });
            fields.push(field);
        }
    }

    let mut jobs = Vec::new();
    for k in 0..cfg.flux_levels.len() {
        for (i, p) in cfg.probes.iter().enumerate() {
            for t in 0..cfg.n_trials {
                jobs.push(TrialJob {
                    probe_id: &p.id,
                    probe: &fields[k * cfg.probes.len() + i],
                    flux_index: k,
                    trial: t,
                });
            }
        }
    }

    let solver = cfg.solver.to_solver();
    let run_one = |job: &TrialJob| -> std::result::Result<TrialRecord, (u64, String)> {
        let seed = derive_seed(cfg.seed, job.probe_id, job.flux_index, job.trial);
        let inner = || -> Result<TrialRecord> {
            let clean = simulate_noiseless(&object, job.probe, &trajectory)?;
            let data = if cfg.noise { poissonize(&clean, seed)? } else { clean };
            let initial = ComplexField::ones(object.shape().0, object.shape().1, object.pixel_size());
            let state = reconstruct(&data, job.probe, &solver, initial)?;
            let stem = format!("trials/{}_f{}_t{}", job.probe_id, job.flux_index, job.trial);
            let mut own = Vec::new();
            write_artifact(&root, &format!("{stem}_objective.csv"), &mut own, |w| {
                Ok(write_objective_csv(&state.objective_history, w)?)
            })?;
            let (mut convergence, mut mtf, mut band) = (Vec::new(), None, None);
            if let (Some(star), Some(radii)) = (&star, &radii) {
                convergence = mtf_convergence(&state.checkpoints, star, radii)?;
                let raw = mtf_from_star(&state.object_estimate, star, radii)?;
                let smooth = raw.smoothed(cfg.metrics.sg_window, cfg.metrics.sg_order)?;
                write_artifact(&root, &format!("{stem}_mtf.csv"), &mut own, |w| {
                    raw.write_csv(w).map_err(csv_err)
                })?;
                write_artifact(&root, &format!("{stem}_mtf_smoothed.csv"), &mut own, |w| {
                    smooth.write_csv(w).map_err(csv_err)
                })?;
                write_artifact(&root, &format!("{stem}_convergence.csv"), &mut own, |w| {
                    write_convergence_csv(&convergence, w).map_err(csv_err)
                })?;
                band = Some(smooth.band_integral(cfg.metrics.band[0], cfg.metrics.band[1]));
                mtf = Some(smooth);
            }
            if cfg.save_reconstructions {
                write_artifact(&root, &format!("{stem}_reconstruction.cfld"), &mut own, |w| {
                    Ok(write_field(&state.object_estimate, w)?)
                })?;
            }
            Ok(TrialRecord {
                probe_id: job.probe_id.to_string(),
                flux_index: job.flux_index,
                trial: job.trial,
                seed,
                iterations: state.iteration,
                stalled: state.stalled,
                objective_history: state.objective_history,
                convergence,
                mtf,
                band_integral: band,
                artifacts: own,
            })
        };
        inner().map_err(|e| (seed, e.to_string()))
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let outcomes: Vec<_> = pool.install(|| jobs.par_iter().map(run_one).collect());

    let mut trials = Vec::new();
    let mut failures = Vec::new();
    for (job, outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(t) => {
                artifacts.extend(t.artifacts.iter().cloned());
                trials.push(t);
            }
            Err((seed, error)) => failures.push(TrialFailure {
                probe_id: job.probe_id.to_string(),
                flux_index: job.flux_index,
                trial: job.trial,
                seed,
                error,
            }),
        }
    }

    let mut ensembles = Vec::new();
    for k in 0..cfg.flux_levels.len() {
        for p in &cfg.probes {
            let members: Vec<&TrialRecord> = trials
                .iter()
                .filter(|t| t.probe_id == p.id && t.flux_index == k)
                .collect();
            let curves: Vec<MtfCurve> = members.iter().filter_map(|t| t.mtf.clone()).collect();
            if curves.is_empty() {
                continue;
            }
            let ensemble = aggregate_trials(&curves)?;
            let bands: Vec<f64> = members.iter().filter_map(|t| t.band_integral).collect();
            let m = bands.len() as f64;
            let band_mean = bands.iter().sum::<f64>() / m;
            let band_std = if bands.len() > 1 {
                (bands.iter().map(|b| (b - band_mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
            } else {
                0.0
            };
            let mut own = Vec::new();
            write_artifact(&root, &format!("ensembles/{}_f{k}_mtf.csv", p.id), &mut own, |w| {
                ensemble.write_csv(w).map_err(csv_err)
            })?;
            artifacts.extend(own.iter().cloned());
            ensembles.push(EnsembleRecord {
                probe_id: p.id.clone(),
                flux_index: k,
                ensemble,
                band_mean,
                band_std,
                artifacts: own,
            });
        }
    }

    write_artifact(&root, "summary.csv", &mut artifacts, |w| {
        writeln!(
            w,
            "probe_id,flux,dynamic_range_decades,outer_half_mean,trials_ok,band_mean,band_std"
        )?;
        for pr in &probes {
            let e = ensembles
                .iter()
                .find(|e| e.probe_id == pr.id && e.flux_index == pr.flux_index);
            let ok = trials
                .iter()
                .filter(|t| t.probe_id == pr.id && t.flux_index == pr.flux_index)
                .count();
            let (bm, bs) = e.map_or((String::new(), String::new()), |e| {
                (fmt_float(e.band_mean), fmt_float(e.band_std))
            });
            writeln!(
                w,
                "{},{},{},{},{ok},{bm},{bs}",
                pr.id,
                fmt_float(pr.flux),
                fmt_float(pr.dynamic_range_decades),
                fmt_float(pr.outer_half_mean)
            )?;
        }
        Ok(())
    })?;

    let config_hash = cfg.hash_hex();
    let mut manifest_trials = Vec::new();
    for job in &jobs {
        if let Some(t) = trials
            .iter()
            .find(|t| t.probe_id == job.probe_id && t.flux_index == job.flux_index && t.trial == job.trial)
        {
            manifest_trials.push(ManifestTrial {
                probe_id: &t.probe_id,
                flux_index: t.flux_index,
                trial: t.trial,
                seed: t.seed,
                status: "ok",
                error: None,
                iterations: Some(t.iterations),
                stalled: Some(t.stalled),
                artifacts: &t.artifacts,
            });
        } else if let Some(f) = failures
            .iter()
            .find(|f| f.probe_id == job.probe_id && f.flux_index == job.flux_index && f.trial == job.trial)
        {
            manifest_trials.push(ManifestTrial {
                probe_id: &f.probe_id,
                flux_index: f.flux_index,
                trial: f.trial,
                seed: f.seed,
                status: "failed",
                error: Some(&f.error),
                iterations: None,
                stalled: None,
                artifacts: &[],
            });
        }
    }
    let manifest = Manifest {
        tool: "ptysim",
        version: env!("CARGO_PKG_VERSION"),
        config_hash: &config_hash,
        base_seed: cfg.seed,
        noise: cfg.noise,
        config: cfg,
        probes: &probes,
        trials: manifest_trials,
        artifacts: &artifacts,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic::<std::io::Error>(&root.join("manifest.json"), |w| {
        w.write_all(json.as_bytes())?;
        w.write_all(b"\n")
    })?;
    artifacts.push("manifest.json".into());

    Ok(ExperimentReport {
        output_dir: root,
        config_hash,
        probes,
        trials,
        failures,
        ensembles,
        artifacts,
    })
}
