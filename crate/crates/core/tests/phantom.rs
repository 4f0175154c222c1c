use ndarray::Array2;
use ptysim::phantom::{image_phantom, parse_pgm, siemens_star, StarSpec};

/// Star phase sampled on the pixel grid rotated by `delta` about the star center.
fn rotated_raster(spec: &StarSpec<f64>, delta: f64) -> Array2<f64> {
    let c = spec.center();
    let (s, co) = delta.sin_cos();
    Array2::from_shape_fn((spec.grid_size, spec.grid_size), |(r, col)| {
        let (dy, dx) = (r as f64 - c, col as f64 - c);
        spec.phase_at(c + dy * co - dx * s, c + dy * s + dx * co)
    })
}

#[test]
fn star_is_invariant_under_one_spoke_period_rotation() {
    let spec = StarSpec::<f64>::with_probe_margin(1024, 64, 10.0);
    let phase = siemens_star(&spec).unwrap().phase();
    let period = std::f64::consts::TAU / spec.n_spokes as f64;
    for k in [1.0, 3.0, 17.0] {
        let rotated = rotated_raster(&spec, k * period);
        let mismatched = phase.iter().zip(rotated.iter()).filter(|(a, b)| (*a - *b).abs() > 1e-12).count();
        let frac = mismatched as f64 / phase.len() as f64;
        assert!(frac < 0.01, "k={k}: {frac}");
    }
    // Half a period swaps spokes and gaps everywhere inside the rim.
    let half = rotated_raster(&spec, 0.5 * period);
    let c = spec.center();
    let (mut swapped, mut disc) = (0usize, 0usize);
    for ((r, col), a) in phase.indexed_iter() {
        if (r as f64 - c).hypot(col as f64 - c) < spec.outer_radius - 1.0 {
            disc += 1;
            swapped += usize::from((a - half[(r, col)]).abs() > 0.5);
        }
    }
    assert!(swapped as f64 > 0.99 * disc as f64, "{swapped} of {disc}");
}

#[test]
fn star_has_equal_spoke_and_gap_area() {
    let spec = StarSpec::<f64>::with_probe_margin(512, 64, 10.0);
    let star = siemens_star(&spec).unwrap();
    let c = spec.center();
    let (mut up, mut disc) = (0usize, 0usize);
    for ((r, col), z) in star.data().indexed_iter() {
        let d = (r as f64 - c).hypot(col as f64 - c);
        if d < spec.outer_radius {
            disc += 1;
            up += usize::from((z.arg() - spec.phase_offset).abs() < 1e-12);
        } else {
            assert!(z.arg().abs() < 1e-15);
        }
    }
    assert!((up as f64 / disc as f64 - 0.5).abs() < 0.01);
    assert!((spec.frequency_at(spec.radius_for(0.3)) - 0.3).abs() < 1e-15);
}

#[test]
fn image_phantom_scales_phase() {
    let img = Array2::from_shape_fn((4, 5), |(r, c)| (r * 5 + c) as f64 / 19.0);
    let f = image_phantom(&img, 2.0, 10.0).unwrap();
    for (z, v) in f.data().iter().zip(img.iter()) {
        assert!((z.norm() - 1.0).abs() < 1e-15);
        assert!((z.arg() - 2.0 * v).abs() < 1e-12);
    }
    assert!(image_phantom(&img.mapv(|v| v + 0.5), 1.0, 10.0).is_err());
}

#[test]
fn pgm_parsing() {
    let mut bytes = b"P5\n# comment\n3 2\n255\n".to_vec();
    bytes.extend([0, 51, 255, 102, 204, 153]);
    let img = parse_pgm(&bytes).unwrap();
    assert_eq!(img.dim(), (2, 3));
    assert_eq!(img[(0, 2)], 1.0);
    assert!((img[(1, 0)] - 0.4).abs() < 1e-15);
    assert!(parse_pgm(b"P2\n1 1\n255\n0").is_err());
    assert!(parse_pgm(b"P5\n2 2\n255\n\x00").is_err());
}
