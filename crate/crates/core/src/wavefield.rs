//! Complex wavefields and the Fourier-optics operations applied to them.
//!
//! DFT convention: the forward transform is unnormalized and the inverse carries `1/(rows*cols)`,
//! so `Σ|F{u}|² = rows·cols·Σ|u|²`.

use ndarray::{Array2, Zip};
use num_complex::Complex;

use crate::error::{invalid, Error, Result};
use crate::fft::{fftshift, freq_index, Fft2};
use crate::scalar::Real;

/// A rectangular grid of complex amplitudes sampled at `pixel_size` (nm).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField<T: Real> {
    data: Array2<Complex<T>>,
    pixel_size: T,
}

impl<T: Real> ComplexField<T> {
    pub fn new(data: Array2<Complex<T>>, pixel_size: T) -> Result<Self> {
        if !(pixel_size > T::zero() && pixel_size.is_finite()) {
            return Err(invalid(format!("pixel size must be positive, got {pixel_size}")));
        }
        if data.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(invalid("field contains non-finite amplitudes"));
        }
        Ok(Self { data, pixel_size })
    }

    pub fn zeros(rows: usize, cols: usize, pixel_size: T) -> Self {
        Self::filled(rows, cols, pixel_size, Complex::new(T::zero(), T::zero()))
    }

    pub fn ones(rows: usize, cols: usize, pixel_size: T) -> Self {
        Self::filled(rows, cols, pixel_size, Complex::new(T::one(), T::zero()))
    }

    fn filled(rows: usize, cols: usize, pixel_size: T, value: Complex<T>) -> Self {
        assert!(pixel_size > T::zero(), "pixel size must be positive");
        Self {
            data: Array2::from_elem((rows, cols), value),
            pixel_size,
        }
    }

    pub fn data(&self) -> &Array2<Complex<T>> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array2<Complex<T>> {
        &mut self.data
    }

    pub fn into_data(self) -> Array2<Complex<T>> {
        self.data
    }

    pub fn pixel_size(&self) -> T {
        self.pixel_size
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Total flux `Σ|u|²`.
    pub fn flux(&self) -> T {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn intensity(&self) -> Array2<T> {
        self.data.mapv(|z| z.norm_sqr())
    }

    pub fn phase(&self) -> Array2<T> {
        self.data.mapv(|z| z.arg())
    }

    /// Same grid, same pixel size, new samples.
    pub fn with_data(&self, data: Array2<Complex<T>>) -> Self {
        assert_eq!(data.dim(), self.data.dim());
        Self {
            data,
            pixel_size: self.pixel_size,
        }
    }

    /// Converts to another scalar precision.
    pub fn cast<U: Real>(&self) -> ComplexField<U> {
        ComplexField {
            data: self
                .data
                .mapv(|z| Complex::new(U::lit(z.re.as_f64()), U::lit(z.im.as_f64()))),
            pixel_size: U::lit(self.pixel_size.as_f64()),
        }
    }
}

/// Non-negative real grid (detector intensities). `centered` marks zero frequency at `(rows/2, cols/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityGrid<T: Real> {
    data: Array2<T>,
    centered: bool,
}

impl<T: Real> IntensityGrid<T> {
    pub fn new(data: Array2<T>, centered: bool) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| !(**v >= T::zero() && v.is_finite())) {
            return Err(invalid(format!(
                "intensity values must be finite and non-negative, found {v}"
            )));
        }
        Ok(Self { data, centered })
    }

    pub(crate) fn new_unchecked(data: Array2<T>, centered: bool) -> Self {
        Self { data, centered }
    }

    pub fn data(&self) -> &Array2<T> {
        &self.data
    }

    pub fn into_data(self) -> Array2<T> {
        self.data
    }

    pub fn centered(&self) -> bool {
        self.centered
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn total(&self) -> T {
        self.data.iter().copied().sum()
    }
}

/// Mean intensity in unit-width annuli around the grid center.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile<T: Real> {
    pub radii: Vec<T>,
    pub mean_intensity: Vec<T>,
    /// Pixels assigned to each annulus.
    pub counts: Vec<usize>,
}

impl<T: Real> RadialProfile<T> {
    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    /// Pixel-weighted mean intensity over annuli with `lo ≤ radius < hi`.
    pub fn band_mean(&self, lo: T, hi: T) -> Option<T> {
        let mut sum = T::zero();
        let mut n = 0usize;
        for ((&r, &m), &c) in self.radii.iter().zip(&self.mean_intensity).zip(&self.counts) {
            if r >= lo && r < hi {
                sum = sum + m * T::from_usize_lossy(c);
                n += c;
            }
        }
        (n > 0).then(|| sum / T::from_usize_lossy(n))
    }
}

/// Centered `|DFT(u)|²` (unnormalized forward transform).
pub fn far_field_intensity<T: Real>(field: &ComplexField<T>) -> IntensityGrid<T> {
    let (rows, cols) = field.shape();
    let mut spectrum = field.data().clone();
    Fft2::new(rows, cols).forward(&mut spectrum);
    IntensityGrid::new_unchecked(fftshift(&spectrum.mapv(|z| z.norm_sqr())), true)
}

/// Exact scalar free-space propagation by `distance` (nm) at `wavelength` (nm).
///
/// The constant piston phase `exp(i·2π·z/λ)` is dropped. Evanescent components decay as
/// `exp(−2π|z|·κ)`.
pub fn propagate_angular_spectrum<T: Real>(
    field: &ComplexField<T>,
    distance: T,
    wavelength: T,
) -> Result<ComplexField<T>> {
    if !(wavelength > T::zero() && wavelength.is_finite()) {
        return Err(invalid(format!("wavelength must be positive, got {wavelength}")));
    }
    if !distance.is_finite() {
        return Err(invalid("propagation distance must be finite"));
    }
    let (rows, cols) = field.shape();
    let fft = Fft2::new(rows, cols);
    let mut spectrum = field.data().clone();
    fft.forward(&mut spectrum);

    let two_pi = T::TAU();
    let k = T::one() / wavelength;
    let k2 = k * k;
    let dfy = T::one() / (T::from_usize_lossy(rows) * field.pixel_size());
    let dfx = T::one() / (T::from_usize_lossy(cols) * field.pixel_size());
    for ((r, c), z) in spectrum.indexed_iter_mut() {
        let fy = T::from_isize(freq_index(r, rows)).unwrap() * dfy;
        let fx = T::from_isize(freq_index(c, cols)).unwrap() * dfx;
        let f2 = fx * fx + fy * fy;
        let h = if f2 < k2 {
            // 2πz(√(k²−f²) − k) written without cancellation.
            let phase = -two_pi * distance * f2 / (k + (k2 - f2).sqrt());
            Complex::from_polar(T::one(), phase)
        } else {
            Complex::new((-two_pi * distance.abs() * (f2 - k2).sqrt()).exp(), T::zero())
        };
        *z = *z * h;
    }
    fft.inverse(&mut spectrum);
    Ok(field.with_data(spectrum))
}

/// Scales `field` so that `Σ|u|² = total_flux`.
pub fn normalize_flux<T: Real>(field: &ComplexField<T>, total_flux: T) -> Result<ComplexField<T>> {
    if !(total_flux > T::zero() && total_flux.is_finite()) {
        return Err(invalid(format!("target flux must be positive, got {total_flux}")));
    }
    let current = field.flux();
    if !(current > T::zero()) {
        return Err(Error::Degenerate("cannot normalize a field with zero flux".into()));
    }
    let scale = (total_flux / current).sqrt();
    Ok(field.with_data(field.data().mapv(|z| z * scale)))
}

/// Averages a centered intensity grid over unit-width annuli (nearest-integer radius).
///
/// Empty annuli are omitted, so `radii` is strictly increasing.
pub fn radial_average<T: Real>(intensity: &IntensityGrid<T>) -> RadialProfile<T> {
    let (rows, cols) = intensity.shape();
    let (cr, cc) = ((rows / 2) as f64, (cols / 2) as f64);
    let max_bin = ((cr.max(rows as f64 - 1.0 - cr)).hypot(cc.max(cols as f64 - 1.0 - cc)))
        .round() as usize;
    let mut sums = vec![T::zero(); max_bin + 1];
    let mut counts = vec![0usize; max_bin + 1];
    for ((r, c), &v) in intensity.data().indexed_iter() {
        let bin = (r as f64 - cr).hypot(c as f64 - cc).round() as usize;
        sums[bin] = sums[bin] + v;
        counts[bin] += 1;
    }
    let mut profile = RadialProfile {
        radii: Vec::new(),
        mean_intensity: Vec::new(),
        counts: Vec::new(),
    };
    for (b, (s, n)) in sums.into_iter().zip(counts).enumerate() {
        if n > 0 {
            profile.radii.push(T::from_usize_lossy(b));
            profile.mean_intensity.push(s / T::from_usize_lossy(n));
            profile.counts.push(n);
        }
    }
    profile
}

/// `log10(max / min positive)` over the profile bins.
pub fn dynamic_range_decades<T: Real>(profile: &RadialProfile<T>) -> Result<T> {
    let positive = profile.mean_intensity.iter().copied().filter(|&v| v > T::zero());
    let (lo, hi) = positive.fold((T::infinity(), T::zero()), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi <= T::zero() {
        return Err(Error::Degenerate("radial profile has no positive bin".into()));
    }
    Ok((hi / lo).log10())
}

/// Elementwise product of two equally shaped fields.
pub fn multiply<T: Real>(a: &ComplexField<T>, b: &ComplexField<T>) -> Result<ComplexField<T>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: a.shape(),
            found: b.shape(),
        });
    }
    let mut out = a.data().clone();
    Zip::from(&mut out).and(b.data()).for_each(|x, &y| *x = *x * y);
    Ok(a.with_data(out))
}
