//! Far-field ptychographic acquisition with optional Poisson photon noise.
//!
//! Detector frames hold expected photon counts `|F{P·O_j}|² / (rows·cols)`, so with the
//! unnormalized DFT each noiseless frame sums to `Σ|P·O_j|²` and a probe normalized to
//! `flux` delivers `flux` photons per frame through a phase-only object.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::fft::{fftshift, Fft2};
use crate::scalar::Real;
use crate::scan::ScanTrajectory;
use crate::wavefield::{ComplexField, IntensityGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct DiffractionDataset<T: Real> {
    pub frames: Vec<IntensityGrid<T>>,
    pub trajectory: ScanTrajectory,
    /// Photons per frame delivered by the probe (`Σ|P|²`).
    pub flux_per_frame: T,
    pub noisy: bool,
    /// Noise seed; 0 for noiseless data.
    pub seed: u64,
}

impl<T: Real> DiffractionDataset<T> {
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != self.trajectory.len() {
            return Err(invalid(format!(
                "{} frames for {} scan positions",
                self.frames.len(),
                self.trajectory.len()
            )));
        }
        let f = self.trajectory.frame_size();
        for (i, frame) in self.frames.iter().enumerate() {
            if frame.shape() != (f, f) {
                return Err(invalid(format!("frame {i} is {:?}, expected {f}x{f}", frame.shape())));
            }
        }
        Ok(())
    }
}

/// Expected detector counts for an exit wave: centered `|DFT|² / (rows·cols)`.
pub fn detector_intensity<T: Real>(exit_wave: &ComplexField<T>, fft: &Fft2<T>) -> IntensityGrid<T> {
    let mut spectrum = exit_wave.data().clone();
    fft.forward(&mut spectrum);
    let scale = T::one() / T::from_usize_lossy(spectrum.len());
    IntensityGrid::new_unchecked(fftshift(&spectrum.mapv(|z| z.norm_sqr() * scale)), true)
}

pub fn simulate_noiseless<T: Real>(
    object: &ComplexField<T>,
    probe: &ComplexField<T>,
    trajectory: &ScanTrajectory,
) -> Result<DiffractionDataset<T>> {
    let f = trajectory.frame_size();
    if probe.shape() != (f, f) {
        return Err(Error::ShapeMismatch {
            expected: (f, f),
            found: probe.shape(),
        });
    }
    trajectory.check_bounds(object.shape())?;
    let fft = Fft2::new(f, f);
    let frames = trajectory
        .positions()
        .par_iter()
        .map(|&(r, c)| {
            let patch = object.data().slice(ndarray::s![r..r + f, c..c + f]);
            let mut exit = probe.data().clone();
            exit.zip_mut_with(&patch, |p, &o| *p = *p * o);
            detector_intensity(&probe.with_data(exit), &fft)
        })
        .collect();
    Ok(DiffractionDataset {
        frames,
        trajectory: trajectory.clone(),
        flux_per_frame: probe.flux(),
        noisy: false,
        seed: 0,
    })
}

/// splitmix64 finalizer.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the RNG stream used for one frame.
pub fn frame_stream_seed(seed: u64, frame_index: usize) -> u64 {
    mix64(mix64(seed) ^ (frame_index as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

fn poisson_frame<T: Real>(frame: &Array2<T>, stream_seed: u64) -> Result<Array2<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    let mut out = Array2::zeros(frame.dim());
    for (o, &mean) in out.iter_mut().zip(frame.iter()) {
        let m = mean.as_f64();
        if !(m >= 0.0 && m.is_finite()) {
            return Err(invalid(format!("Poisson mean must be finite and non-negative, got {m}")));
        }
        *o = if m == 0.0 {
            T::zero()
        } else {
            let draw: f64 = Poisson::new(m)
                .map_err(|e| invalid(format!("Poisson mean {m}: {e}")))?
                .sample(&mut rng);
            T::lit(draw)
        };
    }
    Ok(out)
}

/// Replaces every expected count by a Poisson draw. Frame `j` uses its own RNG stream
/// derived from `(seed, j)`, so the result does not depend on scheduling.
pub fn poissonize<T: Real>(dataset: &DiffractionDataset<T>, seed: u64) -> Result<DiffractionDataset<T>> {
    if dataset.noisy {
        return Err(invalid("dataset already carries Poisson noise"));
    }
    let frames = dataset
        .frames
        .par_iter()
        .enumerate()
        .map(|(j, frame)| {
            let data = poisson_frame(frame.data(), frame_stream_seed(seed, j))?;
            Ok(IntensityGrid::new_unchecked(data, frame.centered()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DiffractionDataset {
        frames,
        trajectory: dataset.trajectory.clone(),
        flux_per_frame: dataset.flux_per_frame,
        noisy: true,
        seed,
    })
}
