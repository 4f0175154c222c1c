//! Little-endian binary containers: `CFLD` complex fields, `IGRD` intensity grids and
//! `PTYD` diffraction datasets. Values are stored as `f64` regardless of the scalar type.

use std::io::{Read, Write};

use ndarray::Array2;
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::forward::DiffractionDataset;
use crate::scalar::Real;
use crate::scan::ScanTrajectory;
use crate::wavefield::{ComplexField, IntensityGrid};

pub const FORMAT_VERSION: u16 = 1;

/// 17 significant digits, enough for an exact `f64` round trip.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn bad(format: &'static str, reason: impl Into<String>) -> Error {
    Error::Format {
        format,
        reason: reason.into(),
    }
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    Ok(u16::from_le_bytes(read_array(r)?))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn expect_magic(r: &mut impl Read, magic: &'static [u8; 4], name: &'static str) -> Result<()> {
    let found: [u8; 4] = read_array(r)?;
    if &found != magic {
        return Err(bad(name, format!("bad magic {found:?}")));
    }
    let version = read_u16(r)?;
    if version != FORMAT_VERSION {
        return Err(bad(name, format!("unsupported version {version}")));
    }
    Ok(())
}

struct GridHeader {
    rows: usize,
    cols: usize,
    pixel_size: f64,
}

fn write_header(w: &mut impl Write, magic: &[u8; 4], rows: usize, cols: usize, pixel: f64) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(rows as u32).to_le_bytes())?;
    w.write_all(&(cols as u32).to_le_bytes())?;
    w.write_all(&pixel.to_le_bytes())?;
    Ok(())
}

fn read_header(r: &mut impl Read, magic: &'static [u8; 4], name: &'static str) -> Result<GridHeader> {
    expect_magic(r, magic, name)?;
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    let pixel_size = read_f64(r)?;
    if rows == 0 || cols == 0 {
        return Err(bad(name, format!("empty grid {rows}x{cols}")));
    }
    if !(pixel_size.is_finite() && pixel_size >= 0.0) {
        return Err(bad(name, format!("invalid pixel size {pixel_size}")));
    }
    Ok(GridHeader {
        rows,
        cols,
        pixel_size,
    })
}

pub fn write_field<T: Real>(field: &ComplexField<T>, mut w: impl Write) -> Result<()> {
    let (rows, cols) = field.shape();
    write_header(&mut w, b"CFLD", rows, cols, field.pixel_size().as_f64())?;
    let mut bytes = Vec::with_capacity(rows * cols * 16);
    for z in field.data() {
        bytes.extend_from_slice(&z.re.as_f64().to_le_bytes());
        bytes.extend_from_slice(&z.im.as_f64().to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_field<T: Real>(mut r: impl Read) -> Result<ComplexField<T>> {
    let h = read_header(&mut r, b"CFLD", "CFLD")?;
    let values = read_f64s(&mut r, h.rows * h.cols * 2)?;
    let data = Array2::from_shape_fn((h.rows, h.cols), |(i, j)| {
        let k = 2 * (i * h.cols + j);
        Complex::new(T::lit(values[k]), T::lit(values[k + 1]))
    });
    ComplexField::new(data, T::lit(h.pixel_size))
}

pub fn write_intensity<T: Real>(grid: &IntensityGrid<T>, pixel_size: f64, mut w: impl Write) -> Result<()> {
    let (rows, cols) = grid.shape();
    write_header(&mut w, b"IGRD", rows, cols, pixel_size)?;
    let mut bytes = Vec::with_capacity(rows * cols * 8);
    for v in grid.data() {
        bytes.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

/// Reads an `IGRD` record as a centered grid, returning it with its pixel size.
pub fn read_intensity<T: Real>(mut r: impl Read) -> Result<(IntensityGrid<T>, f64)> {
    let h = read_header(&mut r, b"IGRD", "IGRD")?;
    let values = read_f64s(&mut r, h.rows * h.cols)?;
    let data = Array2::from_shape_vec((h.rows, h.cols), values.into_iter().map(T::lit).collect())
        .expect("length matches header");
    let grid = IntensityGrid::new(data, true).map_err(|e| bad("IGRD", e.to_string()))?;
    Ok((grid, h.pixel_size))
}

pub fn write_dataset<T: Real>(dataset: &DiffractionDataset<T>, mut w: impl Write) -> Result<()> {
    dataset.validate()?;
    let f = dataset.trajectory.frame_size();
    w.write_all(b"PTYD")?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(dataset.frames.len() as u32).to_le_bytes())?;
    w.write_all(&(f as u32).to_le_bytes())?;
    w.write_all(&(f as u32).to_le_bytes())?;
    w.write_all(&dataset.flux_per_frame.as_f64().to_le_bytes())?;
    w.write_all(&[u8::from(dataset.noisy)])?;
    w.write_all(&dataset.seed.to_le_bytes())?;
    for frame in &dataset.frames {
        write_intensity(frame, 0.0, &mut w)?;
    }
    Ok(())
}

/// Reads a `PTYD` container; positions come from `trajectory`, which must match the frame
/// count and size.
pub fn read_dataset<T: Real>(mut r: impl Read, trajectory: ScanTrajectory) -> Result<DiffractionDataset<T>> {
    expect_magic(&mut r, b"PTYD", "PTYD")?;
    let n_frames = read_u32(&mut r)? as usize;
    let rows = read_u32(&mut r)? as usize;
    let cols = read_u32(&mut r)? as usize;
    let flux = read_f64(&mut r)?;
    let noisy = match read_array::<1>(&mut r)?[0] {
        0 => false,
        1 => true,
        v => return Err(bad("PTYD", format!("noisy flag {v} is not 0 or 1"))),
    };
    let seed = read_u64(&mut r)?;
    if n_frames != trajectory.len() {
        return Err(bad(
            "PTYD",
            format!("{n_frames} frames but trajectory has {} positions", trajectory.len()),
        ));
    }
    let f = trajectory.frame_size();
    if (rows, cols) != (f, f) {
        return Err(bad("PTYD", format!("frames are {rows}x{cols}, trajectory expects {f}x{f}")));
    }
    let mut frames = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        let (grid, _) = read_intensity(&mut r)?;
        if grid.shape() != (rows, cols) {
            return Err(bad("PTYD", format!("frame shape {:?} differs from header", grid.shape())));
        }
        frames.push(grid);
    }
    Ok(DiffractionDataset {
        frames,
        trajectory,
        flux_per_frame: T::lit(flux),
        noisy,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_round_trip_is_exact() {
        let data = Array2::from_shape_fn((3, 5), |(r, c)| Complex::new(r as f64 / 3.0, -(c as f64).sqrt()));
        let field = ComplexField::new(data, 7.5).unwrap();
        let mut buf = Vec::new();
        write_field(&field, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"CFLD");
        assert_eq!(buf.len(), 4 + 2 + 4 + 4 + 8 + 15 * 16);
        let back: ComplexField<f64> = read_field(buf.as_slice()).unwrap();
        assert_eq!(back, field);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let field = ComplexField::<f64>::ones(2, 2, 1.0);
        let mut buf = Vec::new();
        write_field(&field, &mut buf).unwrap();
        assert!(read_intensity::<f64>(buf.as_slice()).is_err());
        assert!(read_field::<f64>(&buf[..buf.len() - 1]).is_err());
        let mut wrong = buf.clone();
        wrong[4] = 9;
        assert!(read_field::<f64>(wrong.as_slice()).is_err());
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, std::f64::consts::PI] {
            let s = fmt_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }
}
