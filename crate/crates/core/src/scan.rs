//! Spiral scan trajectories and the patch operators linking object space to probe space.

use std::io::{BufRead, Write};

use ndarray::s;

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;
use crate::wavefield::ComplexField;

/// Top-left corners (row, col) of successive probe windows, in acquisition order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanTrajectory {
    positions: Vec<(usize, usize)>,
    frame_size: usize,
}

impl ScanTrajectory {
    pub fn new(positions: Vec<(usize, usize)>, frame_size: usize) -> Result<Self> {
        if frame_size == 0 {
            return Err(invalid("frame size must be positive"));
        }
        Ok(Self {
            positions,
            frame_size,
        })
    }

    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    pub fn frame_size(&self) -> usize {
        self.frame_size
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Errors with the first position whose window leaves an object of the given shape.
    pub fn check_bounds(&self, object_shape: (usize, usize)) -> Result<()> {
        for (i, &(r, c)) in self.positions.iter().enumerate() {
            if r + self.frame_size > object_shape.0 || c + self.frame_size > object_shape.1 {
                return Err(invalid(format!(
                    "scan position {i} at ({r}, {c}) puts the {f}-px window outside the {}x{} object",
                    object_shape.0,
                    object_shape.1,
                    f = self.frame_size
                )));
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "index,row,col")?;
        for (i, (r, c)) in self.positions.iter().enumerate() {
            writeln!(w, "{i},{r},{c}")?;
        }
        Ok(())
    }

    pub fn read_csv(r: impl BufRead, frame_size: usize) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            format: "trajectory CSV",
            reason,
        };
        let mut lines = r.lines();
        let header = lines.next().transpose()?;
        if header.as_deref().map(str::trim) != Some("index,row,col") {
            return Err(bad("missing `index,row,col` header".into()));
        }
        let mut positions = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| bad(format!("line {}: bad integer {s:?}", n + 2)))
            };
            if fields.len() != 3 {
                return Err(bad(format!("line {}: expected 3 fields", n + 2)));
            }
            if parse(fields[0])? != positions.len() {
                return Err(bad(format!("line {}: indices must be consecutive", n + 2)));
            }
            positions.push((parse(fields[1])?, parse(fields[2])?));
        }
        Self::new(positions, frame_size)
    }
}

/// Arc length of the Archimedean spiral `r = a·θ` from 0 to `theta`.
fn arc_length(a: f64, theta: f64) -> f64 {
    0.5 * a * (theta * (1.0 + theta * theta).sqrt() + theta.asinh())
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    // f(lo) < 0 ≤ f(hi)
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi.abs().max(1e-300) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Continuous spiral samples: returns the spiral constant `a` and the angle of every point.
///
/// Points are equally spaced in arc length and the spiral pitch `2πa` equals that spacing,
/// so successive turns are as far apart as successive points. The last point lies at
/// radius `r_max`.
pub fn spiral_angles(n_points: usize, r_max: f64) -> Result<(f64, Vec<f64>)> {
    if n_points == 0 {
        return Err(invalid("spiral needs at least one point"));
    }
    if !(r_max > 0.0 && r_max.is_finite()) {
        return Err(invalid("spiral radius must be positive"));
    }
    if n_points == 1 {
        return Ok((r_max, vec![0.0]));
    }
    let steps = (n_points - 1) as f64;
    let mismatch = |a: f64| std::f64::consts::TAU * a - arc_length(a, r_max / a) / steps;
    let a = bisect(r_max * 1e-9, r_max, mismatch);
    let theta_max = r_max / a;
    let total = arc_length(a, theta_max);
    let thetas = (0..n_points)
        .map(|k| {
            if k + 1 == n_points {
                return theta_max;
            }
            let target = total * k as f64 / steps;
            bisect(0.0, theta_max, |t| arc_length(a, t) - target)
        })
        .collect();
    Ok((a, thetas))
}

/// Constant-linear-velocity Archimedean spiral around `center` (a window top-left corner),
/// rounded to whole pixels.
pub fn spiral_trajectory(
    n_points: usize,
    center: (f64, f64),
    r_max: f64,
    frame_size: usize,
    object_shape: (usize, usize),
) -> Result<ScanTrajectory> {
    let (a, thetas) = spiral_angles(n_points, r_max)?;
    let mut positions = Vec::with_capacity(n_points);
    for (i, &t) in thetas.iter().enumerate() {
        let r = a * t;
        let row = (center.0 + r * t.sin()).round();
        let col = (center.1 + r * t.cos()).round();
        if row < 0.0
            || col < 0.0
            || row as usize + frame_size > object_shape.0
            || col as usize + frame_size > object_shape.1
        {
            return Err(invalid(format!(
                "scan position {i} at ({row}, {col}) puts the {frame_size}-px window outside the {}x{} object",
                object_shape.0, object_shape.1
            )));
        }
        positions.push((row as usize, col as usize));
    }
    ScanTrajectory::new(positions, frame_size)
}

fn window_check(
    shape: (usize, usize),
    position: (usize, usize),
    size: (usize, usize),
) -> Result<()> {
    if position.0 + size.0 > shape.0 || position.1 + size.1 > shape.1 {
        return Err(invalid(format!(
            "window {size:?} at {position:?} exceeds the {shape:?} grid"
        )));
    }
    Ok(())
}

/// Copy of the `size × size` window at `position`.
pub fn extract_patch<T: Real>(
    object: &ComplexField<T>,
    position: (usize, usize),
    size: usize,
) -> Result<ComplexField<T>> {
    window_check(object.shape(), position, (size, size))?;
    let (r, c) = position;
    let data = object.data().slice(s![r..r + size, c..c + size]).to_owned();
    ComplexField::new(data, object.pixel_size())
}

/// Adds `patch` into the canvas window at `position`, in place.
pub fn embed_patch_into<T: Real>(
    canvas: &mut ComplexField<T>,
    patch: &ComplexField<T>,
    position: (usize, usize),
) -> Result<()> {
    let size = patch.shape();
    window_check(canvas.shape(), position, size)?;
    let (r, c) = position;
    let mut window = canvas.data_mut().slice_mut(s![r..r + size.0, c..c + size.1]);
    window.zip_mut_with(patch.data(), |a, &b| *a = *a + b);
    Ok(())
}

/// Canvas with `patch` accumulated at `position`; the adjoint of [`extract_patch`].
pub fn embed_patch<T: Real>(
    canvas: &ComplexField<T>,
    patch: &ComplexField<T>,
    position: (usize, usize),
) -> Result<ComplexField<T>> {
    let mut out = canvas.clone();
    embed_patch_into(&mut out, patch, position)?;
    Ok(out)
}
