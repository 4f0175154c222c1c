//! Illumination synthesis: MURA masks, defocused zone plates and random-phase zone plates.
//!
//! Every constructor returns a field on a `grid_size × grid_size` grid, flux-normalized to
//! `ProbeSpec::flux`.

use ndarray::Array2;
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;

use crate::coded_aperture::mura_2d;
use crate::error::{invalid, Error, Result};
use crate::fft::{freq_index, Fft2};
use crate::scalar::Real;
use crate::wavefield::{normalize_flux, propagate_angular_spectrum, ComplexField};

/// 10 keV photons.
pub const DEFAULT_WAVELENGTH_NM: f64 = 0.124;
/// Outermost zone width of the default zone plate; sets its numerical aperture.
pub const DEFAULT_OUTER_ZONE_NM: f64 = 50.0;
/// Default aperture diameter as a fraction of the probe grid extent.
pub const DEFAULT_APERTURE_FILL: f64 = 0.75;
/// Default correlation length (Gaussian σ, pixels) of the focal-plane random phase screen.
pub const DEFAULT_PHASE_CORRELATION_PX: f64 = 4.0;
/// Features narrower than this are flagged as hard to manufacture.
pub const SMALL_FEATURE_NM: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZonePlateParams<T: Real> {
    pub wavelength: T,
    pub aperture_diameter: T,
    pub focal_length: T,
    /// Distance past the focal plane.
    pub defocus: T,
}

impl<T: Real> ZonePlateParams<T> {
    fn validate(&self) -> Result<()> {
        let ok = |v: T| v > T::zero() && v.is_finite();
        if !(ok(self.wavelength) && ok(self.aperture_diameter) && ok(self.focal_length)) {
            return Err(invalid("zone plate wavelength, aperture and focal length must be positive"));
        }
        if !(self.defocus >= T::zero() && self.defocus.is_finite()) {
            return Err(invalid("zone plate defocus must be non-negative"));
        }
        Ok(())
    }

    /// Default zone plate for a `grid_size` grid, with the defocus tuned so that the
    /// defocused spot FWHM matches `width_nm`.
    pub fn tuned(width_nm: T, pixel_size_nm: T, grid_size: usize) -> Result<Self> {
        let wavelength = T::lit(DEFAULT_WAVELENGTH_NM);
        let aperture_diameter =
            T::lit(DEFAULT_APERTURE_FILL) * T::from_usize_lossy(grid_size) * pixel_size_nm;
        let focal_length = aperture_diameter * T::lit(DEFAULT_OUTER_ZONE_NM) / wavelength;
        let mut params = Self {
            wavelength,
            aperture_diameter,
            focal_length,
            defocus: T::zero(),
        };
        params.defocus = tune_defocus(&params, width_nm, pixel_size_nm, grid_size)?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeKind<T: Real> {
    Mura {
        length: usize,
        /// Intensity absorption of the mask cells where the MURA is +1.
        absorption: T,
    },
    DefocusedZonePlate {
        /// `None` selects [`ZonePlateParams::tuned`].
        zone_plate: Option<ZonePlateParams<T>>,
    },
    RandomPhaseZonePlate {
        zone_plate: Option<ZonePlateParams<T>>,
        seed: u64,
        /// Gaussian σ (pixels) of the phase screen correlation; 0 draws an independent phase per pixel.
        correlation_px: T,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSpec<T: Real> {
    pub kind: ProbeKind<T>,
    /// Target illumination width (nm).
    pub width_nm: T,
    pub pixel_size_nm: T,
    pub grid_size: usize,
    /// Total photons `Σ|P|²`.
    pub flux: T,
}

impl<T: Real> ProbeSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.width_nm > T::zero() && self.width_nm.is_finite()) {
            return Err(invalid("probe width must be positive"));
        }
        if !(self.pixel_size_nm > T::zero() && self.pixel_size_nm.is_finite()) {
            return Err(invalid("probe pixel size must be positive"));
        }
        if !(self.flux > T::zero() && self.flux.is_finite()) {
            return Err(invalid("probe flux must be positive"));
        }
        if self.grid_size == 0 {
            return Err(invalid("probe grid must be non-empty"));
        }
        match &self.kind {
            ProbeKind::Mura { absorption, .. } => {
                if !(*absorption >= T::zero() && *absorption <= T::one()) {
                    return Err(invalid(format!("absorption {absorption} outside [0, 1]")));
                }
            }
            ProbeKind::DefocusedZonePlate { zone_plate }
            | ProbeKind::RandomPhaseZonePlate { zone_plate, .. } => {
                if let Some(zp) = zone_plate {
                    zp.validate()?;
                }
            }
        }
        if let ProbeKind::RandomPhaseZonePlate { correlation_px, .. } = &self.kind {
            if !(*correlation_px >= T::zero() && correlation_px.is_finite()) {
                return Err(invalid("phase correlation length must be non-negative"));
            }
        }
        Ok(())
    }

    fn zone_plate(&self) -> Result<ZonePlateParams<T>> {
        match &self.kind {
            ProbeKind::DefocusedZonePlate { zone_plate }
            | ProbeKind::RandomPhaseZonePlate { zone_plate, .. } => match zone_plate {
                Some(zp) => Ok(*zp),
                None => ZonePlateParams::tuned(self.width_nm, self.pixel_size_nm, self.grid_size),
            },
            ProbeKind::Mura { .. } => Err(invalid("MURA probes have no zone plate")),
        }
    }
}

/// Builds the probe described by `spec`, whatever its kind.
pub fn build_probe<T: Real>(spec: &ProbeSpec<T>) -> Result<ComplexField<T>> {
    match spec.kind {
        ProbeKind::Mura { .. } => mura_probe(spec),
        ProbeKind::DefocusedZonePlate { .. } => zone_plate_probe(spec),
        ProbeKind::RandomPhaseZonePlate { .. } => random_phase_probe(spec),
    }
}

fn mura_params<T: Real>(spec: &ProbeSpec<T>) -> Result<(usize, T, usize)> {
    let ProbeKind::Mura { length, absorption } = spec.kind else {
        return Err(invalid("probe spec is not a MURA"));
    };
    let feature_px = (spec.width_nm / (T::from_usize_lossy(length) * spec.pixel_size_nm))
        .round()
        .to_usize()
        .unwrap_or(0);
    if feature_px == 0 {
        return Err(Error::ResolutionUnachievable {
            length,
            width_nm: spec.width_nm.as_f64(),
            pixel_nm: spec.pixel_size_nm.as_f64(),
        });
    }
    Ok((length, absorption, feature_px))
}

/// Realized MURA cell size in nm, and whether it falls below [`SMALL_FEATURE_NM`].
pub fn feature_size_nm<T: Real>(spec: &ProbeSpec<T>) -> Result<(T, bool)> {
    let (_, _, feature_px) = mura_params(spec)?;
    let size = T::from_usize_lossy(feature_px) * spec.pixel_size_nm;
    Ok((size, size < T::lit(SMALL_FEATURE_NM)))
}

/// Binary-absorption MURA mask, each cell rendered as a `feature_px` square block and the
/// mask centered on the grid.
pub fn mura_probe<T: Real>(spec: &ProbeSpec<T>) -> Result<ComplexField<T>> {
    spec.validate()?;
    let (length, absorption, feature_px) = mura_params(spec)?;
    let mask = mura_2d(length)?;
    let footprint = length * feature_px;
    let n = spec.grid_size;
    if footprint > n {
        return Err(invalid(format!(
            "MURA footprint of {footprint} px exceeds the {n} px probe grid"
        )));
    }
    let offset = (n - footprint) / 2;
    let dim = (T::one() - absorption).sqrt();
    let mut data = Array2::from_elem((n, n), Complex::new(T::zero(), T::zero()));
    for r in 0..footprint {
        for c in 0..footprint {
            let cell = mask.values()[(r / feature_px, c / feature_px)];
            let amp = if cell > 0 { dim } else { T::one() };
            data[(offset + r, offset + c)] = Complex::new(amp, T::zero());
        }
    }
    normalize_flux(&ComplexField::new(data, spec.pixel_size_nm)?, spec.flux)
}

fn check_sampling<T: Real>(zp: &ZonePlateParams<T>, pixel: T, grid: usize) -> Result<()> {
    let extent = T::from_usize_lossy(grid) * pixel;
    if zp.aperture_diameter > extent {
        return Err(Error::SamplingViolation(format!(
            "aperture of {} nm does not fit the {} nm grid",
            zp.aperture_diameter, extent
        )));
    }
    // Local frequency of exp(−iπr²/(λf)) at the rim must stay below Nyquist.
    let rim_freq = zp.aperture_diameter / (T::lit(2.0) * zp.wavelength * zp.focal_length);
    let nyquist = T::one() / (T::lit(2.0) * pixel);
    if rim_freq >= nyquist {
        return Err(Error::SamplingViolation(format!(
            "lens phase at the aperture rim ({rim_freq} cycles/nm) aliases on a {pixel} nm grid"
        )));
    }
    Ok(())
}

/// Field in the focal plane of an ideal lens with circular aperture.
fn focal_field<T: Real>(zp: &ZonePlateParams<T>, pixel: T, grid: usize) -> Result<ComplexField<T>> {
    check_sampling(zp, pixel, grid)?;
    let half = T::from_usize_lossy(grid / 2);
    let radius2 = (zp.aperture_diameter / T::lit(2.0)).powi(2);
    let lens = T::PI() / (zp.wavelength * zp.focal_length);
    let pupil = Array2::from_shape_fn((grid, grid), |(r, c)| {
        let y = (T::from_usize_lossy(r) - half) * pixel;
        let x = (T::from_usize_lossy(c) - half) * pixel;
        let rho2 = x * x + y * y;
        if rho2 <= radius2 {
            Complex::from_polar(T::one(), -lens * rho2)
        } else {
            Complex::new(T::zero(), T::zero())
        }
    });
    propagate_angular_spectrum(&ComplexField::new(pupil, pixel)?, zp.focal_length, zp.wavelength)
}

fn defocused_field<T: Real>(zp: &ZonePlateParams<T>, pixel: T, grid: usize) -> Result<ComplexField<T>> {
    let focus = focal_field(zp, pixel, grid)?;
    propagate_angular_spectrum(&focus, zp.defocus, zp.wavelength)
}

fn tune_defocus<T: Real>(zp: &ZonePlateParams<T>, width: T, pixel: T, grid: usize) -> Result<T> {
    let focus = focal_field(zp, pixel, grid)?;
    let spot = |dz: T| -> Result<T> {
        probe_fwhm(&propagate_angular_spectrum(&focus, dz, zp.wavelength)?)
    };
    if spot(T::zero())? >= width {
        return Ok(T::zero());
    }
    let mut lo = T::zero();
    let mut hi = width * zp.focal_length / zp.aperture_diameter;
    let mut grown = 0;
    while spot(hi)? < width {
        lo = hi;
        hi = hi * T::lit(2.0);
        grown += 1;
        if grown > 30 {
            return Err(invalid(format!("no defocus reaches a {width} nm spot on this grid")));
        }
    }
    for _ in 0..60 {
        let mid = (lo + hi) / T::lit(2.0);
        if spot(mid)? < width {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= T::lit(1e-9) * hi {
            break;
        }
    }
    Ok((lo + hi) / T::lit(2.0))
}

/// Ideal lens with circular aperture, propagated `focal_length + defocus`.
pub fn zone_plate_probe<T: Real>(spec: &ProbeSpec<T>) -> Result<ComplexField<T>> {
    spec.validate()?;
    if !matches!(spec.kind, ProbeKind::DefocusedZonePlate { .. }) {
        return Err(invalid("probe spec is not a defocused zone plate"));
    }
    let zp = spec.zone_plate()?;
    let field = defocused_field(&zp, spec.pixel_size_nm, spec.grid_size)?;
    normalize_flux(&field, spec.flux)
}

/// Unit-modulus screen whose phase is uniform on `[0, 2π)` at every pixel.
///
/// A white Gaussian field is smoothed by a Gaussian of σ = `correlation_px`, standardized,
/// and mapped through the normal CDF, so the phase `2π·Φ(g)` keeps a uniform marginal while
/// varying smoothly without phase vortices. With `correlation_px = 0` pixels are independent.
pub fn random_phase_screen<T: Real>(
    rows: usize,
    cols: usize,
    seed: u64,
    correlation_px: T,
) -> Array2<Complex<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = Array2::from_shape_simple_fn((rows, cols), || {
        Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0)
    });
    let sigma = correlation_px.as_f64();
    if sigma > 0.0 {
        let fft = Fft2::<f64>::new(rows, cols);
        fft.forward(&mut field);
        let s2 = 2.0 * std::f64::consts::PI.powi(2) * sigma * sigma;
        for ((r, c), z) in field.indexed_iter_mut() {
            let fy = freq_index(r, rows) as f64 / rows as f64;
            let fx = freq_index(c, cols) as f64 / cols as f64;
            *z *= (-s2 * (fx * fx + fy * fy)).exp();
        }
        fft.inverse(&mut field);
    }
    let n = field.len() as f64;
    let mean = field.iter().map(|z| z.re).sum::<f64>() / n;
    let var = field.iter().map(|z| (z.re - mean).powi(2)).sum::<f64>() / n;
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
    field.mapv(|z| {
        let g = (z.re - mean) / std;
        let u = 0.5 * libm::erfc(-g / std::f64::consts::SQRT_2);
        Complex::from_polar(T::one(), T::lit(std::f64::consts::TAU * u))
    })
}

/// Focal-plane field of the zone plate with randomized phase, propagated by the defocus.
pub fn random_phase_probe<T: Real>(spec: &ProbeSpec<T>) -> Result<ComplexField<T>> {
    spec.validate()?;
    let ProbeKind::RandomPhaseZonePlate {
        seed,
        correlation_px,
        ..
    } = spec.kind
    else {
        return Err(invalid("probe spec is not a random-phase zone plate"));
    };
    let zp = spec.zone_plate()?;
    let n = spec.grid_size;
    let mut focus = focal_field(&zp, spec.pixel_size_nm, n)?;
    let screen = random_phase_screen(n, n, seed, correlation_px);
    ndarray::Zip::from(focus.data_mut())
        .and(&screen)
        .for_each(|z, &s| *z = *z * s);
    let field = propagate_angular_spectrum(&focus, zp.defocus, zp.wavelength)?;
    normalize_flux(&field, spec.flux)
}

/// Full width at half maximum (nm) of the intensity through the centroid, averaged over the
/// row and column cuts. Widths use the outermost half-maximum crossings.
pub fn probe_fwhm<T: Real>(field: &ComplexField<T>) -> Result<T> {
    let intensity = field.intensity();
    let total: T = intensity.iter().copied().sum();
    let max = intensity.iter().copied().fold(T::zero(), T::max);
    let min = intensity.iter().copied().fold(T::infinity(), T::min);
    if !(total > T::zero()) || max == min {
        return Err(Error::Degenerate("FWHM of a flat or empty field".into()));
    }
    let (mut wr, mut wc) = (T::zero(), T::zero());
    for ((r, c), &v) in intensity.indexed_iter() {
        wr = wr + v * T::from_usize_lossy(r);
        wc = wc + v * T::from_usize_lossy(c);
    }
    let (rows, cols) = intensity.dim();
    let cr = (wr / total).round().to_usize().unwrap_or(0).min(rows - 1);
    let cc = (wc / total).round().to_usize().unwrap_or(0).min(cols - 1);
    let row: Vec<T> = intensity.row(cr).to_vec();
    let col: Vec<T> = intensity.column(cc).to_vec();
    let w = (cut_width(&row) + cut_width(&col)) / T::lit(2.0);
    Ok(w * field.pixel_size())
}

fn cut_width<T: Real>(profile: &[T]) -> T {
    let peak = profile.iter().copied().fold(T::zero(), T::max);
    if peak <= T::zero() {
        return T::zero();
    }
    let half = peak / T::lit(2.0);
    let first = profile.iter().position(|&v| v >= half).unwrap();
    let last = profile.iter().rposition(|&v| v >= half).unwrap();
    let left = if first == 0 {
        T::zero()
    } else {
        let (a, b) = (profile[first - 1], profile[first]);
        T::from_usize_lossy(first) - (b - half) / (b - a)
    };
    let right = if last + 1 == profile.len() {
        T::from_usize_lossy(last)
    } else {
        let (a, b) = (profile[last], profile[last + 1]);
        T::from_usize_lossy(last) + (a - half) / (a - b)
    };
    right - left
}
