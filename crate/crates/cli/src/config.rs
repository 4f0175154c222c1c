//! Experiment configuration: a JSON document with one section per pipeline stage.
//! Every field has a default, so `{}` is the desk-scale comparison.

use std::path::{Path, PathBuf};

use ptysim::coded_aperture::is_valid_mura_length;
use ptysim::phantom::StarSpec;
use ptysim::probes::{self, ProbeKind, ProbeSpec, ZonePlateParams};
use ptysim::solver::{LineSearchConfig, SolverConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Validation failure, located by a dotted field path.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

fn err<T>(path: impl Into<String>, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        path: path.into(),
        message: message.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectConfig {
    Star {
        #[serde(default = "d_object_grid")]
        grid_size: usize,
        #[serde(default = "d_spokes")]
        n_spokes: usize,
        #[serde(default = "d_one")]
        phase_offset: f64,
        /// Defaults to half the grid minus half the probe grid.
        #[serde(default)]
        outer_radius: Option<f64>,
    },
    Image {
        path: PathBuf,
        #[serde(default = "d_one")]
        phase_scale: f64,
    },
}

impl Default for ObjectConfig {
    fn default() -> Self {
        ObjectConfig::Star {
            grid_size: d_object_grid(),
            n_spokes: d_spokes(),
            phase_offset: 1.0,
            outer_radius: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZonePlateConfig {
    pub wavelength_nm: f64,
    pub aperture_diameter_nm: f64,
    pub focal_length_nm: f64,
    pub defocus_nm: f64,
}

impl From<ZonePlateConfig> for ZonePlateParams<f64> {
    fn from(z: ZonePlateConfig) -> Self {
        ZonePlateParams {
            wavelength: z.wavelength_nm,
            aperture_diameter: z.aperture_diameter_nm,
            focal_length: z.focal_length_nm,
            defocus: z.defocus_nm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProbeKindConfig {
    Mura {
        length: usize,
        #[serde(default = "d_absorption")]
        absorption: f64,
    },
    DefocusedZp {
        #[serde(default)]
        zone_plate: Option<ZonePlateConfig>,
    },
    RandomPhaseZp {
        #[serde(default)]
        zone_plate: Option<ZonePlateConfig>,
        #[serde(default = "d_phase_seed")]
        seed: u64,
        #[serde(default = "d_correlation")]
        correlation_px: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// File-name-safe identifier; also keys the noise seed.
    pub id: String,
    #[serde(flatten)]
    pub kind: ProbeKindConfig,
    /// Overrides the experiment-wide probe width.
    #[serde(default)]
    pub width_nm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub n_points: usize,
    /// Spiral center as a window top-left corner; defaults to the centered window.
    pub center: Option<[f64; 2]>,
    /// Defaults to the largest radius keeping every window inside the object.
    pub r_max: Option<f64>,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            n_points: 200,
            center: None,
            r_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub max_iterations: usize,
    pub checkpoint_every: usize,
    pub gradient_tolerance: f64,
    pub restart_threshold: f64,
    pub epsilon_mag: f64,
    pub armijo: f64,
    pub shrink: f64,
    pub max_halvings: usize,
    pub initial_step: f64,
    pub interpolate: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let s = SolverConfig::<f64>::default();
        Self {
            max_iterations: s.max_iterations,
            checkpoint_every: s.checkpoint_every,
            gradient_tolerance: s.gradient_tolerance,
            restart_threshold: s.restart_threshold,
            epsilon_mag: s.epsilon_mag,
            armijo: s.line_search.armijo,
            shrink: s.line_search.shrink,
            max_halvings: s.line_search.max_halvings,
            initial_step: s.line_search.initial_step,
            interpolate: s.line_search.interpolate,
        }
    }
}

impl SolverSettings {
    pub fn to_solver(&self) -> SolverConfig<f64> {
        SolverConfig {
            max_iterations: self.max_iterations,
            checkpoint_every: self.checkpoint_every,
            line_search: LineSearchConfig {
                shrink: self.shrink,
                armijo: self.armijo,
                max_halvings: self.max_halvings,
                initial_step: self.initial_step,
                interpolate: self.interpolate,
            },
            restart_threshold: self.restart_threshold,
            epsilon_mag: self.epsilon_mag,
            gradient_tolerance: self.gradient_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Explicit radii (pixels); otherwise `n_radii` log-spaced defaults.
    pub radii: Option<Vec<f64>>,
    pub n_radii: usize,
    pub sg_window: usize,
    pub sg_order: usize,
    /// Frequency band (cycles/px) for the integrated high-frequency MTF.
    pub band: [f64; 2],
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            radii: None,
            n_radii: ptysim::metrics::DEFAULT_RADIUS_COUNT,
            sg_window: ptysim::metrics::DEFAULT_SG_WINDOW,
            sg_order: ptysim::metrics::DEFAULT_SG_ORDER,
            band: [0.25, 0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub object: ObjectConfig,
    pub pixel_size_nm: f64,
    pub probe_grid: usize,
    pub probe_width_nm: f64,
    pub probes: Vec<ProbeConfig>,
    pub trajectory: TrajectoryConfig,
    /// Photons per frame; every probe is normalized to each level in turn.
    pub flux_levels: Vec<f64>,
    pub n_trials: usize,
    pub noise: bool,
    pub seed: u64,
    pub solver: SolverSettings,
    pub metrics: MetricsConfig,
    pub output_dir: PathBuf,
    pub jobs: usize,
    pub save_reconstructions: bool,
}

fn d_object_grid() -> usize {
    512
}
fn d_spokes() -> usize {
    64
}
fn d_one() -> f64 {
    1.0
}
fn d_absorption() -> f64 {
    0.9
}
fn d_phase_seed() -> u64 {
    1
}
fn d_correlation() -> f64 {
    probes::DEFAULT_PHASE_CORRELATION_PX
}

pub fn default_probes() -> Vec<ProbeConfig> {
    let mura = |l: usize| ProbeConfig {
        id: format!("mura{l}"),
        kind: ProbeKindConfig::Mura {
            length: l,
            absorption: d_absorption(),
        },
        width_nm: None,
    };
    vec![
        mura(17),
        mura(13),
        ProbeConfig {
            id: "defocused_zp".into(),
            kind: ProbeKindConfig::DefocusedZp { zone_plate: None },
            width_nm: None,
        },
        ProbeConfig {
            id: "random_phase_zp".into(),
            kind: ProbeKindConfig::RandomPhaseZp {
                zone_plate: None,
                seed: d_phase_seed(),
                correlation_px: d_correlation(),
            },
            width_nm: None,
        },
    ]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            object: ObjectConfig::default(),
            pixel_size_nm: 10.0,
            probe_grid: 128,
            probe_width_nm: 500.0,
            probes: default_probes(),
            trajectory: TrajectoryConfig::default(),
            flux_levels: vec![1e3, 1e6],
            n_trials: 5,
            noise: true,
            seed: 1,
            solver: SolverSettings::default(),
            metrics: MetricsConfig::default(),
            output_dir: PathBuf::from("ptysim-out"),
            jobs: 1,
            save_reconstructions: false,
        }
    }
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        err(path, format!("{v} must be positive and finite"))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError {
            path: "<document>".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    /// Canonical serialization; its SHA-256 identifies the run.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash_hex(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn object_grid(&self) -> usize {
        match &self.object {
            ObjectConfig::Star { grid_size, .. } => *grid_size,
            // Resolved on load; validation reads the image header.
            ObjectConfig::Image { .. } => 0,
        }
    }

    /// Star geometry, or `None` for image objects.
    pub fn star(&self) -> Option<StarSpec<f64>> {
        match &self.object {
            ObjectConfig::Star {
                grid_size,
                n_spokes,
                phase_offset,
                outer_radius,
            } => {
                let mut spec = StarSpec::with_probe_margin(*grid_size, self.probe_grid / 2, self.pixel_size_nm);
                spec.n_spokes = *n_spokes;
                spec.phase_offset = *phase_offset;
                if let Some(r) = outer_radius {
                    spec.outer_radius = *r;
                }
                Some(spec)
            }
            ObjectConfig::Image { .. } => None,
        }
    }

    pub fn probe_spec(&self, probe: &ProbeConfig, flux: f64) -> ProbeSpec<f64> {
        let kind = match &probe.kind {
            ProbeKindConfig::Mura { length, absorption } => ProbeKind::Mura {
                length: *length,
                absorption: *absorption,
            },
            ProbeKindConfig::DefocusedZp { zone_plate } => ProbeKind::DefocusedZonePlate {
                zone_plate: zone_plate.map(Into::into),
            },
            ProbeKindConfig::RandomPhaseZp {
                zone_plate,
                seed,
                correlation_px,
            } => ProbeKind::RandomPhaseZonePlate {
                zone_plate: zone_plate.map(Into::into),
                seed: *seed,
                correlation_px: *correlation_px,
            },
        };
        ProbeSpec {
            kind,
            width_nm: probe.width_nm.unwrap_or(self.probe_width_nm),
            pixel_size_nm: self.pixel_size_nm,
            grid_size: self.probe_grid,
            flux,
        }
    }

    /// Spiral center (window corner) and radius for an object of `object_grid` pixels.
    pub fn spiral_geometry(&self, object_grid: usize) -> ((f64, f64), f64) {
        let corner = (object_grid.saturating_sub(self.probe_grid)) as f64 / 2.0;
        let center = self
            .trajectory
            .center
            .map(|c| (c[0], c[1]))
            .unwrap_or((corner.floor(), corner.floor()));
        let r_max = self.trajectory.r_max.unwrap_or(corner.floor());
        (center, r_max)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("pixel_size_nm", self.pixel_size_nm)?;
        positive("probe_width_nm", self.probe_width_nm)?;
        if self.probe_grid < 2 {
            return err("probe_grid", "must be at least 2");
        }
        match &self.object {
            ObjectConfig::Star {
                grid_size,
                n_spokes,
                phase_offset,
                outer_radius,
            } => {
                if *grid_size < self.probe_grid {
                    return err(
                        "object.grid_size",
                        format!("{grid_size} is smaller than probe_grid {}", self.probe_grid),
                    );
                }
                if *n_spokes < 2 || n_spokes % 2 != 0 {
                    return err("object.n_spokes", format!("{n_spokes} must be even and at least 2"));
                }
                if !(phase_offset.is_finite() && *phase_offset != 0.0) {
                    return err("object.phase_offset", "must be finite and non-zero");
                }
                if let Some(r) = outer_radius {
                    positive("object.outer_radius", *r)?;
                }
                let star = self.star().expect("star object");
                if let Err(e) = star.validate() {
                    return err("object", e.to_string());
                }
            }
            ObjectConfig::Image { phase_scale, .. } => {
                if !phase_scale.is_finite() {
                    return err("object.phase_scale", "must be finite");
                }
            }
        }
        if self.probes.is_empty() {
            return err("probes", "at least one probe is required");
        }
        for (i, p) in self.probes.iter().enumerate() {
            let at = |f: &str| format!("probes[{i}].{f}");
            if p.id.is_empty()
                || !p.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return err(at("id"), format!("{:?} must be non-empty [A-Za-z0-9_-]", p.id));
            }
            if self.probes[..i].iter().any(|q| q.id == p.id) {
                return err(at("id"), format!("duplicate probe id {:?}", p.id));
            }
            if let Some(w) = p.width_nm {
                positive(&at("width_nm"), w)?;
            }
            match &p.kind {
                ProbeKindConfig::Mura { length, absorption } => {
                    if !is_valid_mura_length(*length) {
                        return err(
                            at("length"),
                            format!("{length} is not 1 or a prime congruent to 1 mod 4"),
                        );
                    }
                    if !(0.0..=1.0).contains(absorption) {
                        return err(at("absorption"), format!("{absorption} outside [0, 1]"));
                    }
                }
                ProbeKindConfig::RandomPhaseZp { correlation_px, .. } => {
                    if !(*correlation_px >= 0.0 && correlation_px.is_finite()) {
                        return err(at("correlation_px"), "must be non-negative");
                    }
                }
                ProbeKindConfig::DefocusedZp { .. } => {}
            }
            if let Err(e) = self.probe_spec(p, 1.0).validate() {
                return err(format!("probes[{i}]"), e.to_string());
            }
        }
        if self.flux_levels.is_empty() {
            return err("flux_levels", "at least one flux level is required");
        }
        for (i, f) in self.flux_levels.iter().enumerate() {
            positive(&format!("flux_levels[{i}]"), *f)?;
        }
        if self.n_trials == 0 {
            return err("n_trials", "must be at least 1");
        }
        if self.jobs == 0 {
            return err("jobs", "must be at least 1");
        }
        if self.trajectory.n_points < 2 {
            return err("trajectory.n_points", "must be at least 2");
        }
        if let Some(r) = self.trajectory.r_max {
            positive("trajectory.r_max", r)?;
        }
        if let Some(c) = self.trajectory.center {
            if !(c[0] >= 0.0 && c[1] >= 0.0 && c[0].is_finite() && c[1].is_finite()) {
                return err("trajectory.center", "must be non-negative");
            }
        }
        if let Err(e) = self.solver.to_solver().validate() {
            return err("solver", e.to_string());
        }
        let m = &self.metrics;
        if m.sg_window.is_multiple_of(2) || m.sg_window <= m.sg_order {
            return err("metrics.sg_window", format!("{} must be odd and exceed sg_order", m.sg_window));
        }
        if !(m.band[0] >= 0.0 && m.band[1] > m.band[0]) {
            return err("metrics.band", "must satisfy 0 ≤ low < high");
        }
        if m.radii.is_none() && m.n_radii < 2 {
            return err("metrics.n_radii", "must be at least 2");
        }
        if let Some(radii) = &m.radii {
            if radii.is_empty() {
                return err("metrics.radii", "must not be empty");
            }
            if let Some(star) = self.star() {
                if let Some((i, r)) = radii
                    .iter()
                    .enumerate()
                    .find(|(_, r)| !(**r > 0.0 && **r < star.outer_radius))
                {
                    return err(
                        format!("metrics.radii[{i}]"),
                        format!("{r} outside (0, {})", star.outer_radius),
                    );
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.star().unwrap().outer_radius, 192.0);
        assert_eq!(cfg.spiral_geometry(512), ((192.0, 192.0), 192.0));
    }

    #[test]
    fn errors_carry_field_paths() {
        let e = ExperimentConfig::from_json(r#"{"probes":[{"id":"a","kind":"mura","length":15}]}"#)
            .unwrap_err();
        assert_eq!(e.path, "probes[0].length");
        let e = ExperimentConfig::from_json(r#"{"n_trials":0}"#).unwrap_err();
        assert_eq!(e.path, "n_trials");
        let e = ExperimentConfig::from_json(r#"{"flux_levels":[1e3,-1]}"#).unwrap_err();
        assert_eq!(e.path, "flux_levels[1]");
        let e = ExperimentConfig::from_json(r#"{"bogus":1}"#).unwrap_err();
        assert_eq!(e.path, "<document>");
        let dup = r#"{"probes":[{"id":"a","kind":"defocused_zp"},{"id":"a","kind":"defocused_zp"}]}"#;
        assert_eq!(ExperimentConfig::from_json(dup).unwrap_err().path, "probes[1].id");
    }

    #[test]
    fn probe_kinds_parse() {
        let cfg = ExperimentConfig::from_json(
            r#"{"probes":[
                {"id":"m","kind":"mura","length":5,"absorption":0.5,"width_nm":300},
                {"id":"r","kind":"random_phase_zp","seed":9,"correlation_px":0}
            ]}"#,
        )
        .unwrap();
        let spec = cfg.probe_spec(&cfg.probes[0], 2.0);
        assert_eq!(spec.width_nm, 300.0);
        assert_eq!(spec.kind, ProbeKind::Mura { length: 5, absorption: 0.5 });
        assert!(matches!(
            cfg.probe_spec(&cfg.probes[1], 1.0).kind,
            ProbeKind::RandomPhaseZonePlate { seed: 9, .. }
        ));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash_hex(), b.hash_hex());
        b.seed = 2;
        assert_ne!(a.hash_hex(), b.hash_hex());
        assert_eq!(a.hash_hex().len(), 64);
    }
}
