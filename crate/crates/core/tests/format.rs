use ndarray::Array2;
use num_complex::Complex;
use proptest::prelude::*;
use ptysim::format::{fmt_float, read_dataset, read_field, read_intensity, write_dataset, write_field, write_intensity};
use ptysim::forward::DiffractionDataset;
use ptysim::scan::ScanTrajectory;
use ptysim::wavefield::{ComplexField, IntensityGrid};
use ptysim::Error;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e300f64..1e300, -1.0f64..1.0, Just(0.0), Just(-0.0), Just(f64::MIN_POSITIVE)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn field_round_trip(rows in 1usize..12, cols in 1usize..12, values in prop::collection::vec((finite(), finite()), 144), pixel in 0.1f64..100.0) {
        let data = Array2::from_shape_fn((rows, cols), |(r, c)| {
            let (a, b) = values[r * cols + c];
            Complex::new(a, b)
        });
        let field = ComplexField::new(data, pixel).unwrap();
        let mut buf = Vec::new();
        write_field(&field, &mut buf).unwrap();
        let back: ComplexField<f64> = read_field(&buf[..]).unwrap();
        prop_assert_eq!(back.shape(), field.shape());
        prop_assert_eq!(back.pixel_size().to_bits(), pixel.to_bits());
        for (a, b) in back.data().iter().zip(field.data()) {
            prop_assert_eq!(a.re.to_bits(), b.re.to_bits());
            prop_assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
    }

    #[test]
    fn intensity_round_trip(rows in 1usize..10, cols in 1usize..10, values in prop::collection::vec(0.0f64..1e12, 100)) {
        let grid = IntensityGrid::new(Array2::from_shape_fn((rows, cols), |(r, c)| values[r * cols + c]), true).unwrap();
        let mut buf = Vec::new();
        write_intensity(&grid, 3.5, &mut buf).unwrap();
        let (back, pixel): (IntensityGrid<f64>, f64) = read_intensity(&buf[..]).unwrap();
        prop_assert_eq!(pixel, 3.5);
        prop_assert_eq!(back, grid);
    }

    #[test]
    fn dataset_round_trip(n in 0usize..5, f in 1usize..6, seed in any::<u64>(), noisy in any::<bool>(), scale in 0.0f64..1e6) {
        let trajectory = ScanTrajectory::new((0..n).map(|i| (i, 2 * i)).collect(), f).unwrap();
        let frames = (0..n)
            .map(|j| IntensityGrid::new(Array2::from_shape_fn((f, f), |(r, c)| scale * (j + r * f + c) as f64), true).unwrap())
            .collect();
        let ds = DiffractionDataset { frames, trajectory: trajectory.clone(), flux_per_frame: scale, noisy, seed };
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back: DiffractionDataset<f64> = read_dataset(&buf[..], trajectory).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn decimal_rendering_round_trips(x in finite()) {
        prop_assert_eq!(fmt_float(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
    }
}

#[test]
fn corrupt_inputs_are_format_errors() {
    let field = ComplexField::<f64>::ones(3, 3, 1.0);
    let mut buf = Vec::new();
    write_field(&field, &mut buf).unwrap();
    assert!(matches!(read_field::<f64>(&buf[..buf.len() - 1]), Err(Error::Format { .. }) | Err(Error::Io(_))));
    let mut wrong = buf.clone();
    wrong[0] = b'X';
    assert!(matches!(read_field::<f64>(&wrong[..]), Err(Error::Format { .. })));
    let mut version = buf.clone();
    version[4] = 9;
    assert!(matches!(read_field::<f64>(&version[..]), Err(Error::Format { .. })));
    assert!(read_intensity::<f64>(&buf[..]).is_err());
}

#[test]
fn dataset_must_match_its_trajectory() {
    let t = ScanTrajectory::new(vec![(0, 0), (1, 1)], 2).unwrap();
    let ds = DiffractionDataset {
        frames: vec![IntensityGrid::new(Array2::<f64>::zeros((2, 2)), true).unwrap(); 2],
        trajectory: t,
        flux_per_frame: 1.0,
        noisy: false,
        seed: 0,
    };
    let mut buf = Vec::new();
    write_dataset(&ds, &mut buf).unwrap();
    assert!(read_dataset::<f64>(&buf[..], ScanTrajectory::new(vec![(0, 0)], 2).unwrap()).is_err());
    assert!(read_dataset::<f64>(&buf[..], ScanTrajectory::new(vec![(0, 0), (1, 1)], 3).unwrap()).is_err());
}
