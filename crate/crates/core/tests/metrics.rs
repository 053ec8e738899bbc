use pevc_core::metrics::{bd_rate, ms_ssim, mse, psnr, psnr_from_mse, QualityAxis, RdCurve, RdPoint};
use pevc_core::{Shape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn curve(label: &str, pts: &[(f64, f64, f64)]) -> RdCurve {
    RdCurve::new(
        label,
        pts.iter()
            .enumerate()
            .map(|(i, &(bpp, psnr, msssim))| RdPoint {
                label: label.into(),
                lambda: 0.01 * 2f64.powi(i as i32 - 3),
                bpp,
                psnr,
                msssim,
            })
            .collect(),
    )
}

fn anchor() -> RdCurve {
    curve(
        "anchor",
        &[
            (0.05, 28.1, 0.91),
            (0.11, 30.4, 0.94),
            (0.23, 32.9, 0.962),
            (0.47, 35.2, 0.977),
            (0.9, 37.6, 0.986),
        ],
    )
}

fn frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor<f32> {
    Tensor::from_fn(Shape::new(1, 3, h, w), |_, _, _, _| rng.gen_range(0..=255) as f32)
}

#[test]
fn psnr_closed_forms() {
    assert!((psnr_from_mse(65.025, 255.0) - 30.0).abs() < 1e-9);
    assert!((psnr_from_mse(1.0, 255.0) - 20.0 * 255f64.log10()).abs() < 1e-9);
    let a = Tensor::full(Shape::new(1, 3, 4, 4), 100.0f32);
    let b = Tensor::full(Shape::new(1, 3, 4, 4), 110.0f32);
    assert!((mse(&a, &b).unwrap() - 100.0).abs() < 1e-12);
    assert!((psnr(&a, &b, 255.0).unwrap() - 10.0 * (65025.0f64 / 100.0).log10()).abs() < 1e-9);
    assert!(psnr(&a, &a, 255.0).unwrap().is_infinite());
}

#[test]
fn psnr_falls_as_noise_grows() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let clean = Tensor::from_fn(Shape::new(1, 3, 32, 32), |_, c, y, x| {
        (60 + 3 * x + 2 * y + 10 * c) as f32
    });
    let noise: Vec<f32> = (0..clean.shape().numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let scores: Vec<f64> = [1.0f32, 2.0, 4.0, 8.0, 16.0]
        .iter()
        .map(|amp| {
            let noisy = Tensor::from_vec(
                clean.shape(),
                clean.data().iter().zip(&noise).map(|(v, n)| v + amp * n).collect(),
            )
            .unwrap();
            psnr(&clean, &noisy, 255.0).unwrap()
        })
        .collect();
    assert!(scores.windows(2).all(|p| p[1] < p[0]), "{scores:?}");
}

#[test]
fn ms_ssim_of_identical_frames_is_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (h, w) in [(64, 64), (48, 80), (16, 16)] {
        let a = frame(&mut rng, h, w);
        assert_eq!(ms_ssim(&a, &a, 5).unwrap(), 1.0);
    }
    let a = frame(&mut rng, 64, 64);
    let b = frame(&mut rng, 64, 64);
    let s = ms_ssim(&a, &b, 5).unwrap();
    assert!(s < 0.5, "{s}");
}

#[test]
fn bd_rate_of_a_curve_against_itself_is_zero() {
    let c = anchor();
    assert_eq!(bd_rate(&c, &c, QualityAxis::Psnr).unwrap(), 0.0);
    assert_eq!(bd_rate(&c, &c, QualityAxis::MsSsim).unwrap(), 0.0);
}

#[test]
fn uniform_rate_scaling_gives_its_percentage() {
    // Same quality at 0.9x the rate: log-rate gap is ln 0.9 everywhere,
    // so the average saving is exactly 10%.
    let a = anchor();
    for factor in [0.9, 1.25, 0.5] {
        let scaled: Vec<_> = a.points.iter().map(|p| (p.bpp * factor, p.psnr, p.msssim)).collect();
        let t = curve("test", &scaled);
        let want = (factor - 1.0) * 100.0;
        for axis in [QualityAxis::Psnr, QualityAxis::MsSsim] {
            let got = bd_rate(&a, &t, axis).unwrap();
            assert!((got - want).abs() < 1e-9, "{factor} {axis:?}: {got}");
        }
    }
}

#[test]
fn bd_rate_needs_overlap_and_points() {
    let a = anchor();
    let far = curve(
        "far",
        &[
            (0.1, 50.0, 0.999),
            (0.2, 51.0, 0.9992),
            (0.3, 52.0, 0.9994),
            (0.4, 53.0, 0.9996),
        ],
    );
    assert!(bd_rate(&a, &far, QualityAxis::Psnr).is_err());
    let short = curve("short", &[(0.1, 30.0, 0.9), (0.2, 31.0, 0.91)]);
    assert!(bd_rate(&a, &short, QualityAxis::Psnr).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ms_ssim_is_bounded_and_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = frame(&mut rng, 40, 40);
        let noise = frame(&mut rng, 40, 40);
        let b = a.zip_map(&noise, |v, n| (v + (n - 127.5) * 0.2).clamp(0.0, 255.0)).unwrap();
        let s = ms_ssim(&a, &b, 5).unwrap();
        prop_assert!(s.is_finite() && s <= 1.0);
        prop_assert!((s - ms_ssim(&b, &a, 5).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn better_test_curves_save_rate(shift in 0.1f64..1.5) {
        let a = anchor();
        let better: Vec<_> = a.points.iter().map(|p| (p.bpp, p.psnr + shift, p.msssim)).collect();
        prop_assert!(bd_rate(&a, &curve("t", &better), QualityAxis::Psnr).unwrap() < 0.0);
    }
}
