use evdecomp::metrics::{photometric_loss, psnr, smoothness_loss, ssim, Charbonnier, SsimParams};
use evdecomp::{FlowField, Grid};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn charbonnier_is_even_monotone_and_bounded(eps in 1e-4..1e-1f64, beta in 0.1..1.0f64, a in 0.0..10.0f64, b in 0.0..10.0f64) {
        let rho = Charbonnier::new(eps, beta).unwrap();
        prop_assert_eq!(rho.value(a), rho.value(-a));
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(rho.value(lo) <= rho.value(hi));
        prop_assert!(rho.value(a) >= eps.powf(2.0 * beta) * (1.0 - 1e-12));
    }

    #[test]
    fn affine_flow_is_perfectly_smooth(c in prop::collection::vec(-4i32..4, 6), w in 3usize..9, h in 3usize..9) {
        let c: Vec<f64> = c.into_iter().map(f64::from).collect();
        let flow = FlowField::from_fn(w, h, |x, y| {
            let (x, y) = (x as f64, y as f64);
            (c[0] + c[1] * x + c[2] * y, c[3] + c[4] * x + c[5] * y)
        });
        prop_assert_eq!(smoothness_loss(&flow).unwrap(), 0.0);
    }

    #[test]
    fn psnr_falls_as_noise_grows(pattern in prop::collection::vec(-1.0..1.0f64, 64), a in 0.001..0.05f64, extra in 0.001..0.05f64) {
        prop_assume!(pattern.iter().any(|p| p.abs() > 1e-3));
        let gt = Grid::from_fn(8, 8, 1, |x, y, _| 0.3 + 0.05 * ((x + y) % 3) as f64);
        let noisy = |amp: f64| Grid::new(8, 8, 1, gt.data().iter().zip(&pattern).map(|(g, p)| g + amp * p).collect()).unwrap();
        let p1 = psnr(&noisy(a), &gt, 1.0).unwrap();
        let p2 = psnr(&noisy(a + extra), &gt, 1.0).unwrap();
        prop_assert!(p2 < p1);
    }

    #[test]
    fn losses_are_finite_and_repeatable(a in prop::collection::vec(0.0..1.0f64, 144), b in prop::collection::vec(0.0..1.0f64, 144), u in -3.0..3.0f64, v in -3.0..3.0f64) {
        let (ga, gb) = (Grid::new(12, 12, 1, a).unwrap(), Grid::new(12, 12, 1, b).unwrap());
        let flow = FlowField::uniform(12, 12, u, v);
        let rho = Charbonnier::default();
        let l1 = photometric_loss(&ga, &gb, &flow, rho).unwrap();
        prop_assert!(l1.is_finite());
        prop_assert_eq!(l1.to_bits(), photometric_loss(&ga, &gb, &flow, rho).unwrap().to_bits());
        let s = ssim(&ga, &gb, SsimParams::default()).unwrap();
        prop_assert!(s.is_finite());
        prop_assert!((s - ssim(&gb, &ga, SsimParams::default()).unwrap()).abs() < 1e-12);
        prop_assert!(psnr(&ga, &gb, 1.0).unwrap().is_finite());
    }
}
