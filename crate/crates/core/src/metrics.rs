//! Reconstruction scoring: Siemens-star MTF, Savitzky–Golay smoothing, trial statistics.

use std::io::Write;

use ndarray::Array2;
use num_complex::Complex;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::format::fmt_float;
use crate::phantom::StarSpec;
use crate::scalar::Real;
use crate::wavefield::ComplexField;

/// Gauge annulus spans `[outer_radius + GAUGE_INNER, outer_radius + GAUGE_OUTER]`.
const GAUGE_INNER: f64 = 2.0;
const GAUGE_OUTER: f64 = 10.0;
/// Samples per pixel of circumference.
const SAMPLES_PER_PX: f64 = 4.0;
pub const DEFAULT_SG_WINDOW: usize = 9;
pub const DEFAULT_SG_ORDER: usize = 2;
pub const DEFAULT_RADIUS_COUNT: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct MtfCurve {
    frequencies: Vec<f64>,
    modulation: Vec<f64>,
    n_spokes: usize,
}

impl MtfCurve {
    pub fn new(frequencies: Vec<f64>, modulation: Vec<f64>, n_spokes: usize) -> Result<Self> {
        if frequencies.len() != modulation.len() {
            return Err(invalid(format!(
                "{} frequencies for {} modulation values",
                frequencies.len(),
                modulation.len()
            )));
        }
        if frequencies.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("frequencies must be strictly increasing"));
        }
        Ok(Self {
            frequencies,
            modulation,
            n_spokes,
        })
    }

    /// Cycles per pixel, ascending.
    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn modulation(&self) -> &[f64] {
        &self.modulation
    }

    pub fn n_spokes(&self) -> usize {
        self.n_spokes
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// Same grid, smoothed modulation.
    pub fn smoothed(&self, window: usize, order: usize) -> Result<Self> {
        Ok(Self {
            frequencies: self.frequencies.clone(),
            modulation: savitzky_golay(&self.modulation, window, order)?,
            n_spokes: self.n_spokes,
        })
    }

    /// Trapezoidal integral of the piecewise-linear curve over `[lo, hi]`, clipped to the
    /// sampled range.
    pub fn band_integral(&self, lo: f64, hi: f64) -> f64 {
        band_integral(&self.frequencies, &self.modulation, lo, hi)
    }

    /// Mean modulation over frequencies at or above the midpoint of the sampled range.
    pub fn upper_half_mean(&self) -> f64 {
        let (Some(&first), Some(&last)) = (self.frequencies.first(), self.frequencies.last()) else {
            return 0.0;
        };
        let mid = 0.5 * (first + last);
        let (sum, count) = self
            .frequencies
            .iter()
            .zip(&self.modulation)
            .filter(|(f, _)| **f >= mid)
            .fold((0.0, 0usize), |(s, c), (_, m)| (s + m, c + 1));
        sum / count as f64
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "frequency_cpp,modulation")?;
        for (f, m) in self.frequencies.iter().zip(&self.modulation) {
            writeln!(w, "{},{}", fmt_float(*f), fmt_float(*m))?;
        }
        Ok(())
    }
}

/// Trapezoid rule over the linear interpolant of `(x, y)` restricted to `[lo, hi]`.
pub fn band_integral(x: &[f64], y: &[f64], lo: f64, hi: f64) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 || !(hi > lo) {
        return 0.0;
    }
    let mut total = 0.0;
    for k in 0..n - 1 {
        let (x0, x1) = (x[k], x[k + 1]);
        let a = x0.max(lo);
        let b = x1.min(hi);
        if b <= a {
            continue;
        }
        let at = |t: f64| y[k] + (y[k + 1] - y[k]) * (t - x0) / (x1 - x0);
        total += 0.5 * (at(a) + at(b)) * (b - a);
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialEnsemble {
    pub curves: Vec<MtfCurve>,
    pub mean: MtfCurve,
    /// Sample (n − 1) standard deviation per frequency; zero for a single curve.
    pub std: Vec<f64>,
}

impl TrialEnsemble {
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "frequency_cpp,mean,std")?;
        for ((f, m), s) in self.mean.frequencies.iter().zip(&self.mean.modulation).zip(&self.std) {
            writeln!(w, "{},{},{}", fmt_float(*f), fmt_float(*m), fmt_float(*s))?;
        }
        Ok(())
    }
}

pub fn aggregate_trials(curves: &[MtfCurve]) -> Result<TrialEnsemble> {
    let first = curves.first().ok_or_else(|| invalid("no curves to aggregate"))?;
    if let Some(i) = curves.iter().position(|c| c.frequencies != first.frequencies) {
        return Err(invalid(format!("curve {i} is on a different frequency grid")));
    }
    let n = curves.len() as f64;
    let len = first.len();
    let mut mean = vec![0.0; len];
    let mut std = vec![0.0; len];
    for k in 0..len {
        let m = curves.iter().map(|c| c.modulation[k]).sum::<f64>() / n;
        mean[k] = m;
        if curves.len() > 1 {
            let ss: f64 = curves.iter().map(|c| (c.modulation[k] - m).powi(2)).sum();
            std[k] = (ss / (n - 1.0)).sqrt();
        }
    }
    Ok(TrialEnsemble {
        curves: curves.to_vec(),
        mean: MtfCurve {
            frequencies: first.frequencies.clone(),
            modulation: mean,
            n_spokes: first.n_spokes,
        },
        std,
    })
}

/// Solves the square system `a·x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Weights giving the value at offset `at` of the degree-`order` least-squares polynomial
/// through samples at integer offsets `lo..=hi`.
fn sg_weights_at(lo: i64, hi: i64, at: i64, order: usize) -> Vec<f64> {
    let m = order + 1;
    // Offsets relative to the evaluation point keep the system well scaled.
    let xs: Vec<f64> = (lo..=hi).map(|x| (x - at) as f64).collect();
    let mut gram = vec![vec![0.0; m]; m];
    for (i, row) in gram.iter_mut().enumerate() {
        for (j, g) in row.iter_mut().enumerate() {
            *g = xs.iter().map(|x| x.powi((i + j) as i32)).sum();
        }
    }
    let mut e0 = vec![0.0; m];
    e0[0] = 1.0;
    // Fitted value at 0 is the constant coefficient: wᵀ = e0ᵀ G⁻¹ Vᵀ.
    let c = solve(gram, e0);
    xs.iter()
        .map(|x| c.iter().enumerate().map(|(p, cp)| cp * x.powi(p as i32)).sum())
        .collect()
}

fn check_sg(window: usize, order: usize) -> Result<()> {
    if window.is_multiple_of(2) || window <= order {
        return Err(invalid(format!(
            "Savitzky-Golay window {window} must be odd and exceed order {order}"
        )));
    }
    Ok(())
}

/// Interior (centered) Savitzky–Golay weights.
pub fn savitzky_golay_weights(window: usize, order: usize) -> Result<Vec<f64>> {
    check_sg(window, order)?;
    let h = (window / 2) as i64;
    Ok(sg_weights_at(-h, h, 0, order))
}

/// Least-squares polynomial smoothing. Near the ends the window is truncated to the
/// available samples (at least `order + 1` of them) and the fit is evaluated off-center.
pub fn savitzky_golay(values: &[f64], window: usize, order: usize) -> Result<Vec<f64>> {
    check_sg(window, order)?;
    let n = values.len() as i64;
    if n <= order as i64 {
        return Ok(values.to_vec());
    }
    let h = (window / 2) as i64;
    let interior = sg_weights_at(-h, h, 0, order);
    let min_len = order as i64 + 1;
    let out = (0..n)
        .map(|i| {
            let (mut lo, mut hi) = ((i - h).max(0), (i + h).min(n - 1));
            if lo == i - h && hi == i + h {
                return interior
                    .iter()
                    .zip(&values[lo as usize..=hi as usize])
                    .map(|(w, v)| w * v)
                    .sum();
            }
            while hi - lo + 1 < min_len {
                if lo > 0 {
                    lo -= 1;
                } else {
                    hi += 1;
                }
            }
            sg_weights_at(lo, hi, i, order)
                .iter()
                .zip(&values[lo as usize..=hi as usize])
                .map(|(w, v)| w * v)
                .sum()
        })
        .collect();
    Ok(out)
}

/// Keys cubic convolution kernel (a = −0.5).
fn keys(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Cubic-convolution sample at a continuous position; indices clamp at the borders.
pub fn sample_cubic(image: &Array2<f64>, row: f64, col: f64) -> f64 {
    let (rows, cols) = image.dim();
    let (r0, c0) = (row.floor() as i64, col.floor() as i64);
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut acc = 0.0;
    for i in -1..=2 {
        let rr = r0 + i;
        let wr = keys(row - rr as f64);
        if wr == 0.0 {
            continue;
        }
        for j in -1..=2 {
            let cc = c0 + j;
            acc += wr * keys(col - cc as f64) * image[(clamp(rr, rows), clamp(cc, cols))];
        }
    }
    acc
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Phase map with the global-phase gauge removed: the field is rotated by the argument of
/// its mean over the flat annulus just outside the star, then the median residual phase of
/// that annulus is subtracted.
pub fn gauge_aligned_phase<T: Real>(reconstruction: &ComplexField<T>, spec: &StarSpec<T>) -> Array2<f64> {
    let data = reconstruction.data();
    let n = spec.grid_size;
    let c = spec.center().as_f64();
    let r_out = spec.outer_radius.as_f64();
    let limit = c.min(n as f64 - 1.0 - c);
    let inner = (r_out + GAUGE_INNER).min(limit - 1.0);
    let outer = (r_out + GAUGE_OUTER).min(limit);
    let in_annulus = |r: usize, col: usize| {
        let d = (r as f64 - c).hypot(col as f64 - c);
        d >= inner && d <= outer
    };
    let mut sum = Complex::new(0.0, 0.0);
    for ((r, col), z) in data.indexed_iter() {
        if in_annulus(r, col) {
            sum += Complex::new(z.re.as_f64(), z.im.as_f64());
        }
    }
    let rot = if sum.norm() > 0.0 {
        Complex::from_polar(1.0, -sum.arg())
    } else {
        Complex::new(1.0, 0.0)
    };
    let phase = data.mapv(|z| (Complex::new(z.re.as_f64(), z.im.as_f64()) * rot).arg());
    let ring: Vec<f64> = phase
        .indexed_iter()
        .filter(|((r, col), _)| in_annulus(*r, *col))
        .map(|(_, p)| *p)
        .collect();
    let offset = median(ring);
    phase.mapv(|p| p - offset)
}

/// Spoke modulation along each circle, normalized by the fundamental `(2/π)·phase_offset`
/// of the ideal square wave.
pub fn mtf_from_star<T: Real>(
    reconstruction: &ComplexField<T>,
    spec: &StarSpec<T>,
    radii: &[f64],
) -> Result<MtfCurve> {
    spec.validate()?;
    let n = spec.grid_size;
    if reconstruction.shape() != (n, n) {
        return Err(invalid(format!(
            "reconstruction is {:?}, star grid is {n}x{n}",
            reconstruction.shape()
        )));
    }
    let r_out = spec.outer_radius.as_f64();
    if let Some(r) = radii.iter().find(|r| !(**r > 0.0 && **r < r_out)) {
        return Err(invalid(format!("radius {r} outside (0, {r_out})")));
    }
    let a_ref = 2.0 / std::f64::consts::PI * spec.phase_offset.as_f64();
    if a_ref == 0.0 {
        return Err(invalid("phase offset must be non-zero"));
    }
    let phase = gauge_aligned_phase(reconstruction, spec);
    let c = spec.center().as_f64();
    let spokes = spec.n_spokes;
    let mut points: Vec<(f64, f64)> = radii
        .par_iter()
        .map(|&r| {
            let m = (8 * spokes).max((std::f64::consts::TAU * r * SAMPLES_PER_PX).ceil() as usize);
            let (mut b, mut cc) = (0.0, 0.0);
            for k in 0..m {
                let t = std::f64::consts::TAU * k as f64 / m as f64;
                let v = sample_cubic(&phase, c + r * t.sin(), c + r * t.cos());
                let arg = spokes as f64 * t;
                b += v * arg.cos();
                cc += v * arg.sin();
            }
            // Uniform samples make {1, cos, sin} orthogonal, so the fit is a projection.
            b *= 2.0 / m as f64;
            cc *= 2.0 / m as f64;
            (spokes as f64 / (std::f64::consts::TAU * r), b.hypot(cc) / a_ref)
        })
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (frequencies, modulation) = points.into_iter().unzip();
    MtfCurve::new(frequencies, modulation, spokes)
}

/// `count` log-spaced radii from the radius sampling 0.5 cycles/px to two pixels inside
/// the rim.
pub fn default_radii<T: Real>(spec: &StarSpec<T>, count: usize) -> Result<Vec<f64>> {
    let lo = spec.radius_for(T::lit(0.5)).as_f64();
    let hi = spec.outer_radius.as_f64() - 2.0;
    if count < 2 || !(hi > lo) {
        return Err(invalid(format!(
            "cannot place {count} radii in [{lo}, {hi}]"
        )));
    }
    let (l0, l1) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|k| (l0 + (l1 - l0) * k as f64 / (count - 1) as f64).exp())
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergencePoint {
    pub iteration: usize,
    pub curve: MtfCurve,
    /// Upper-half-band mean modulation.
    pub summary: f64,
}

pub fn mtf_convergence<T: Real>(
    checkpoints: &[(usize, ComplexField<T>)],
    spec: &StarSpec<T>,
    radii: &[f64],
) -> Result<Vec<ConvergencePoint>> {
    checkpoints
        .iter()
        .map(|(iteration, object)| {
            let curve = mtf_from_star(object, spec, radii)?;
            Ok(ConvergencePoint {
                iteration: *iteration,
                summary: curve.upper_half_mean(),
                curve,
            })
        })
        .collect()
}

pub fn write_convergence_csv(points: &[ConvergencePoint], mut w: impl Write) -> Result<()> {
    writeln!(w, "iteration,summary")?;
    for p in points {
        writeln!(w, "{},{}", p.iteration, fmt_float(p.summary))?;
    }
    Ok(())
}

/// First iteration whose summary reaches `fraction` of the final summary.
pub fn iterations_to_fraction(points: &[ConvergencePoint], fraction: f64) -> Option<usize> {
    let last = points.last()?.summary;
    points
        .iter()
        .find(|p| p.summary >= fraction * last)
        .map(|p| p.iteration)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::siemens_star;

    #[test]
    fn keys_kernel_interpolates() {
        assert_eq!(keys(0.0), 1.0);
        assert_eq!(keys(1.0), 0.0);
        assert_eq!(keys(2.0), 0.0);
        let img = Array2::from_shape_fn((8, 8), |(r, c)| 2.0 * r as f64 - c as f64 + 3.0);
        assert!((sample_cubic(&img, 3.3, 4.6) - (2.0 * 3.3 - 4.6 + 3.0)).abs() < 1e-12);
        assert_eq!(sample_cubic(&img, 2.0, 5.0), img[(2, 5)]);
    }

    #[test]
    fn constant_field_has_no_modulation() {
        let spec = StarSpec::with_probe_margin(128, 16, 10.0);
        let flat = ComplexField::new(Array2::from_elem((128, 128), Complex::from_polar(1.0, 0.7)), 10.0)
            .unwrap();
        let radii = default_radii(&spec, 10).unwrap();
        let curve = mtf_from_star(&flat, &spec, &radii).unwrap();
        assert!(curve.modulation().iter().all(|m| m.abs() < 1e-6));
    }

    #[test]
    fn radius_and_shape_errors() {
        let spec = StarSpec::with_probe_margin(64, 8, 10.0);
        let star = siemens_star(&spec).unwrap();
        assert!(mtf_from_star(&star, &spec, &[0.0]).is_err());
        assert!(mtf_from_star(&star, &spec, &[spec.outer_radius]).is_err());
        let small = ComplexField::<f64>::ones(32, 32, 10.0);
        assert!(mtf_from_star(&small, &spec, &[10.0]).is_err());
    }

    #[test]
    fn frequency_axis_matches_radii() {
        let spec = StarSpec::with_probe_margin(256, 32, 10.0);
        let star = siemens_star(&spec).unwrap();
        let radii = default_radii(&spec, 16).unwrap();
        let curve = mtf_from_star(&star, &spec, &radii).unwrap();
        for (f, r) in curve.frequencies().iter().zip(radii.iter().rev()) {
            assert!((f * std::f64::consts::TAU * r - spec.n_spokes as f64).abs() < 1e-9);
        }
        assert!((curve.frequencies().last().unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_point_std() {
        let a = MtfCurve::new(vec![0.1, 0.2], vec![0.0, 2.0], 64).unwrap();
        let b = MtfCurve::new(vec![0.1, 0.2], vec![1.0, 2.0], 64).unwrap();
        let e = aggregate_trials(&[a.clone(), b]).unwrap();
        assert_eq!(e.mean.modulation(), &[0.5, 2.0]);
        assert!((e.std[0] - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(e.std[1], 0.0);
        let single = aggregate_trials(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single.std, vec![0.0, 0.0]);
        let c = MtfCurve::new(vec![0.1, 0.3], vec![0.0, 2.0], 64).unwrap();
        assert!(aggregate_trials(&[a, c]).is_err());
        assert!(aggregate_trials(&[]).is_err());
    }

    #[test]
    fn curve_validation() {
        assert!(MtfCurve::new(vec![0.2, 0.1], vec![1.0, 1.0], 4).is_err());
        assert!(MtfCurve::new(vec![0.1], vec![1.0, 1.0], 4).is_err());
    }

    #[test]
    fn band_integral_of_linear_curve() {
        let x = [0.0, 0.2, 0.4, 0.6];
        let y = [0.0, 0.2, 0.4, 0.6];
        // ∫ x dx over [0.25, 0.5]
        assert!((band_integral(&x, &y, 0.25, 0.5) - 0.5 * (0.25 - 0.0625)).abs() < 1e-15);
        assert_eq!(band_integral(&x, &y, 0.7, 0.9), 0.0);
    }

    #[test]
    fn sg_rejects_bad_parameters() {
        assert!(savitzky_golay(&[1.0; 10], 4, 2).is_err());
        assert!(savitzky_golay(&[1.0; 10], 3, 3).is_err());
        assert_eq!(savitzky_golay(&[1.0, 2.0], 5, 2).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn convergence_fraction() {
        let mk = |it, s| ConvergencePoint {
            iteration: it,
            curve: MtfCurve::new(vec![0.1], vec![s], 4).unwrap(),
            summary: s,
        };
        let pts = vec![mk(0, 0.0), mk(10, 0.5), mk(20, 0.95), mk(30, 1.0)];
        assert_eq!(iterations_to_fraction(&pts, 0.9), Some(20));
        assert_eq!(iterations_to_fraction(&[], 0.9), None);
    }
}
