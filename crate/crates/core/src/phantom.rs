//! Phase-only specimens: the Siemens star and image-derived phase maps.

use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex;

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;
use crate::wavefield::ComplexField;

/// Binary phase Siemens star. `n_spokes` counts phase-elevated wedges, so the angular
/// square wave has `n_spokes` periods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StarSpec<T: Real> {
    pub grid_size: usize,
    pub n_spokes: usize,
    pub phase_offset: T,
    pub outer_radius: T,
    pub pixel_size_nm: T,
}

impl<T: Real> StarSpec<T> {
    /// Star whose rim stays `probe_half_width` pixels inside the grid edge.
    pub fn with_probe_margin(grid_size: usize, probe_half_width: usize, pixel_size_nm: T) -> Self {
        Self {
            grid_size,
            n_spokes: 64,
            phase_offset: T::one(),
            outer_radius: T::from_usize_lossy(grid_size / 2 - probe_half_width.min(grid_size / 2 - 1)),
            pixel_size_nm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_spokes < 2 || !self.n_spokes.is_multiple_of(2) {
            return Err(invalid(format!("spoke count {} must be even and ≥ 2", self.n_spokes)));
        }
        let half = T::from_usize_lossy(self.grid_size) / T::lit(2.0);
        if !(self.outer_radius > T::zero() && self.outer_radius <= half) {
            return Err(invalid(format!(
                "outer radius {} must lie in (0, {}]",
                self.outer_radius, half
            )));
        }
        if !(self.pixel_size_nm > T::zero()) {
            return Err(invalid("pixel size must be positive"));
        }
        if !self.phase_offset.is_finite() {
            return Err(invalid("phase offset must be finite"));
        }
        Ok(())
    }

    /// Star center in pixel coordinates (between the middle pixels for even grids).
    pub fn center(&self) -> T {
        (T::from_usize_lossy(self.grid_size) - T::one()) / T::lit(2.0)
    }

    /// Local spoke frequency (cycles/pixel) on the circle of the given radius.
    pub fn frequency_at(&self, radius: T) -> T {
        T::from_usize_lossy(self.n_spokes) / (T::TAU() * radius)
    }

    /// Radius at which the local spoke frequency equals `frequency` (cycles/pixel).
    pub fn radius_for(&self, frequency: T) -> T {
        T::from_usize_lossy(self.n_spokes) / (T::TAU() * frequency)
    }

    /// Ideal phase at a continuous position.
    pub fn phase_at(&self, row: T, col: T) -> T {
        let c = self.center();
        let (dy, dx) = (row - c, col - c);
        if dy.hypot(dx) >= self.outer_radius {
            return T::zero();
        }
        let theta = dy.atan2(dx);
        let k = (theta * T::from_usize_lossy(self.n_spokes) / T::PI()).floor();
        if k.to_i64().unwrap_or(0).rem_euclid(2) == 0 {
            self.phase_offset
        } else {
            T::zero()
        }
    }
}

/// Phase-only Siemens star sampled at pixel centers.
pub fn siemens_star<T: Real>(spec: &StarSpec<T>) -> Result<ComplexField<T>> {
    spec.validate()?;
    let n = spec.grid_size;
    let data = Array2::from_shape_fn((n, n), |(r, c)| {
        Complex::from_polar(
            T::one(),
            spec.phase_at(T::from_usize_lossy(r), T::from_usize_lossy(c)),
        )
    });
    ComplexField::new(data, spec.pixel_size_nm)
}

/// Phase object `exp(i · phase_scale · image)` for an image with values in `[0, 1]`.
pub fn image_phantom<T: Real>(image: &Array2<T>, phase_scale: T, pixel_size_nm: T) -> Result<ComplexField<T>> {
    if image.is_empty() {
        return Err(invalid("image is empty"));
    }
    if let Some(v) = image.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
        return Err(invalid(format!("image value {v} outside [0, 1]")));
    }
    ComplexField::new(
        image.mapv(|v| Complex::from_polar(T::one(), phase_scale * v)),
        pixel_size_nm,
    )
}

/// Reads a binary (P5) 8-bit PGM, scaled to `[0, 1]` by its maxval.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_pgm(&bytes)
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Array2<f64>> {
    let bad = |reason: &str| Error::Format {
        format: "PGM",
        reason: reason.to_string(),
    };
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    if tokens[0] != "P5" {
        return Err(bad("only binary P5 graymaps are supported"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("non-numeric header field"));
    let (cols, rows, maxval) = (num(tokens[1])?, num(tokens[2])?, num(tokens[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("maxval must be in 1..=255"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let raster = bytes.get(pos..pos + rows * cols).ok_or_else(|| bad("truncated raster"))?;
    Ok(Array2::from_shape_fn((rows, cols), |(r, c)| {
        (raster[r * cols + c] as f64 / maxval as f64).min(1.0)
    }))
}
