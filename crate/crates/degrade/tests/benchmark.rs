use diip_core::image::{psnr, Image, Shape};
use diip_core::{io, rng};
use diip_degrade::jpeg::{compress, lattice_residual};
use diip_degrade::{apply, make_benchmark, make_benchmark_with, read_manifest, Degradation, DegradationSpec, Layout};
use proptest::prelude::*;

fn textured(seed: u64) -> Image {
    let mut r = rng::rng(seed);
    let phase = rng::normal(&mut r);
    let freq = 0.4 + 0.3 * rng::normal(&mut r).abs();
    Image::from_fn(Shape::new(16, 16, 1), |y, x, _| {
        0.5 + 0.35 * ((freq * x as f64 + phase).sin() * (0.7 * y as f64).cos())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn jpeg_is_idempotent(seed in 0u64..1000, quality in 1u32..=100) {
        let x = rng::normal_image(Shape::new(16, 16, 1), &mut rng::rng(seed)).map(|v| 0.5 + 0.2 * v);
        let once = compress(&x, quality).unwrap();
        let twice = compress(&once, quality).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        prop_assert!(lattice_residual(&once, quality).unwrap() < 1e-9);
    }

    #[test]
    fn blur_reduces_sharpness(seed in 0u64..1000) {
        let x = textured(seed);
        let spec = DegradationSpec::new(Degradation::GaussianBlur { size: 5, sigma: 1.5 }, seed).without_floor();
        let y = apply(&spec, &x).unwrap();
        let lv = diip_core::image::laplacian_variance;
        prop_assert!(lv(&y).unwrap() < lv(&x).unwrap());
    }
}

#[test]
fn twenty_images_three_specs() {
    let dir = tempfile::tempdir().unwrap();
    let images: Vec<Image> = (0..20).map(textured).collect();
    let specs = [
        DegradationSpec::new(Degradation::speckle_default(), 1),
        DegradationSpec::new(Degradation::GaussianBlur { size: 9, sigma: 2.0 }, 2),
        DegradationSpec::new(Degradation::JpegBlock { quality: 5 }, 3),
    ];
    let entries = make_benchmark(&images, &specs, dir.path()).unwrap();
    assert_eq!(entries.len(), 60);
    for e in &entries {
        let x = io::read_dimg(dir.path().join(&e.clean_path)).unwrap();
        let y = io::read_dimg(dir.path().join(e.degraded_path.as_ref().unwrap())).unwrap();
        let p = psnr(&y, &x, 1.0).unwrap();
        assert!(p < 35.0, "{:?}: {p} dB", e.spec);
    }
    assert_eq!(read_manifest(dir.path().join("manifest.csv")).unwrap(), entries);
}

#[test]
fn empty_spec_list_lists_clean_images() {
    let dir = tempfile::tempdir().unwrap();
    let entries = make_benchmark(&[textured(0), textured(1)], &[], dir.path()).unwrap();
    assert_eq!(entries.len(), 2);
    assert!(entries.iter().all(|e| e.degraded_path.is_none() && e.spec.is_none()));
    assert!(make_benchmark(&[], &[], dir.path()).is_err());
}

#[test]
fn fixed_seeds_give_identical_directories() {
    let images: Vec<Image> = (0..3).map(textured).collect();
    let specs = [
        DegradationSpec::new(Degradation::GaussianNoise { sigma: 0.1 }, 7),
        DegradationSpec::new(
            Degradation::SmoothWarp {
                amplitude: 1.5,
                correlation: 4.0,
            },
            8,
        ),
    ];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    make_benchmark(&images, &specs, a.path()).unwrap();
    make_benchmark(&images, &specs, b.path()).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 3 + 6 + 1);
    for n in names {
        assert_eq!(
            std::fs::read(a.path().join(&n)).unwrap(),
            std::fs::read(b.path().join(&n)).unwrap(),
            "{n:?}"
        );
    }
}

#[test]
fn cycle_layout_gives_one_input_per_image() {
    let dir = tempfile::tempdir().unwrap();
    let images: Vec<Image> = (0..5).map(textured).collect();
    let specs = [
        DegradationSpec::new(Degradation::speckle_default(), 1),
        DegradationSpec::new(Degradation::GaussianBlur { size: 5, sigma: 1.0 }, 2),
    ];
    let entries = make_benchmark_with(&images, &specs, dir.path(), Layout::Cycle).unwrap();
    let kinds: Vec<_> = entries.iter().map(|e| e.spec.unwrap().kind()).collect();
    assert_eq!(kinds, ["speckle_mix", "gaussian_blur", "speckle_mix", "gaussian_blur", "speckle_mix"]);
}
