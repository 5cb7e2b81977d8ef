use diip_core::diffusion::{ddim_step, x0_hat_from, NoiseSchedule};
use diip_core::image::{self, convolve2d, Border, Image, Kernel2D, Shape};
use proptest::prelude::*;

fn img(h: usize, w: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0f64..1.0, h * w).prop_map(move |v| Image::from_vec(Shape::new(h, w, 1), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn convolution_is_linear(a in img(8, 8), b in img(8, 8), s in -2.0f64..2.0) {
        let k = Kernel2D::gaussian(3, 1.0).unwrap();
        let lhs = convolve2d(&a.axpby(1.0, &b, s).unwrap(), &k, Border::Reflect).unwrap();
        let ca = convolve2d(&a, &k, Border::Reflect).unwrap();
        let cb = convolve2d(&b, &k, Border::Reflect).unwrap();
        let rhs = ca.axpby(1.0, &cb, s).unwrap();
        prop_assert!(lhs.sum_sq_diff(&rhs).unwrap() < 1e-20);
    }

    #[test]
    fn normalized_blur_preserves_range(a in img(9, 9)) {
        let out = convolve2d(&a, &Kernel2D::gaussian(5, 1.5).unwrap(), Border::Reflect).unwrap();
        prop_assert!(out.data().iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
    }

    #[test]
    fn laplacian_variance_ignores_offsets(a in img(8, 8), c in -1.0f64..1.0) {
        let lv = image::laplacian_variance(&a).unwrap();
        let shifted = image::laplacian_variance(&a.map(|v| v + c)).unwrap();
        prop_assert!(lv >= 0.0);
        prop_assert!((lv - shifted).abs() <= 1e-10 * lv.max(1.0));
        let scaled = image::laplacian_variance(&a.scale(2.0)).unwrap();
        prop_assert!((scaled - 4.0 * lv).abs() <= 1e-10 * scaled.max(1.0));
    }

    #[test]
    fn psnr_and_ssim_are_symmetric(a in img(11, 11), b in img(11, 11)) {
        let p = (image::psnr(&a, &b, 1.0).unwrap(), image::psnr(&b, &a, 1.0).unwrap());
        prop_assert_eq!(p.0, p.1);
        let s = (image::ssim(&a, &b).unwrap(), image::ssim(&b, &a).unwrap());
        prop_assert!((s.0 - s.1).abs() < 1e-12);
        prop_assert!(s.0 <= 1.0 + 1e-12);
    }

    #[test]
    fn ddim_step_round_trips_through_x0(z in -3.0f64..3.0, e in -3.0f64..3.0, t in 1usize..10) {
        let s = NoiseSchedule::default();
        let one = Shape::new(1, 1, 1);
        let t = t * 100;
        let zi = Image::filled(one, z);
        let x0 = x0_hat_from(&zi, &Image::filled(one, e), t, &s).unwrap();
        // a full-length step lands exactly on the clean estimate
        let collapsed = ddim_step(&zi, &x0, t, t, &s).unwrap();
        prop_assert_eq!(collapsed.data()[0], x0.data()[0]);
        // a zero-noise prediction gives z / sqrt(alpha_bar)
        let x0z = x0_hat_from(&zi, &Image::filled(one, 0.0), t, &s).unwrap();
        prop_assert!((x0z.data()[0] - z / s.alpha_bar(t).sqrt()).abs() <= 1e-12 * (1.0 + x0z.data()[0].abs()));
    }
}
