use diip_core::image::{psnr, Image, Shape};
use diip_core::rng;
use diip_core::stopping::{StopConfig, StopObserver};
use diip_core::Error;
use diip_dip::{dip_run, dip_run_from, DipConfig, DipNet};

fn squares() -> Image {
    Image::from_fn(Shape::new(16, 16, 1), |r, c, _| if (r / 4 + c / 4) % 2 == 0 { 0.8 } else { 0.2 })
}

fn small() -> DipConfig {
    DipConfig {
        width1: 8,
        width2: 16,
        hidden: 32,
        max_iters: 300,
        seed: 5,
        ..DipConfig::default()
    }
}

#[test]
fn noisy_fit_passes_above_the_input() {
    let x = squares();
    let n = rng::normal_image(x.shape(), &mut rng::rng(1));
    let y = x.axpby(1.0, &n, 0.15).unwrap();
    let run = dip_run(&y, &small(), Some(&x), &mut []).unwrap();
    let best = run
        .trajectory
        .records()
        .iter()
        .filter_map(|r| r.psnr_ref)
        .fold(f64::NEG_INFINITY, f64::max);
    let input = psnr(&y, &x, 1.0).unwrap();
    assert!(best > input + 1.0, "best {best:.2} dB, input {input:.2} dB");
}

#[test]
fn same_seed_same_run_and_resume_from_net() {
    let y = squares();
    let cfg = DipConfig { max_iters: 20, ..small() };
    let a = dip_run(&y, &cfg, None, &mut []).unwrap();
    let b = dip_run_from(&y, DipNet::new(y.shape(), &cfg).unwrap(), &cfg, None, &mut []).unwrap();
    assert_eq!(a.trajectory.losses(), b.trajectory.losses());
    let other = dip_run(&y, &DipConfig { seed: 6, ..cfg }, None, &mut []).unwrap();
    assert_ne!(a.trajectory.losses(), other.trajectory.losses());
}

#[test]
fn stop_observer_halts_the_fit() {
    let y = squares();
    let mut obs = StopObserver::new(StopConfig {
        k_min: 2,
        eps: 1.0,
        ..StopConfig::default()
    });
    let run = dip_run(&y, &small(), None, &mut [&mut obs]).unwrap();
    assert!(run.halted);
    assert!(run.trajectory.len() < 301);
    assert!(obs.state.detection().is_some());
}

#[test]
fn shape_mismatch_is_reported_with_the_partial_trajectory() {
    let y = squares();
    let net = DipNet::new(Shape::new(8, 8, 1), &small()).unwrap();
    let err = dip_run_from(&y, net, &small(), None, &mut []).unwrap_err();
    assert!(matches!(err.error, Error::ShapeMismatch { .. }));
    assert!(err.trajectory.is_empty());
    let bad_ref = Image::zeros(Shape::new(4, 4, 1));
    assert!(dip_run(&y, &small(), Some(&bad_ref), &mut []).is_err());
}
