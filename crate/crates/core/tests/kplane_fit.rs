use evdecomp::grid::{Frame, FrameSequence, Grid};
use evdecomp::kplane::{
    fit, fit_gradient, fit_loss, DecoderKind, FitLoss, FitOptions, KPlaneConfig, KPlaneField,
};
use evdecomp::metrics::psnr;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_target(w: usize, h: usize, frames: usize, channels: usize, seed: u64) -> FrameSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seq = (0..frames)
        .map(|k| {
            let data = (0..w * h * channels).map(|_| rng.random_range(0.1..0.9)).collect();
            Frame::new(Grid::new(w, h, channels, data).unwrap(), k as f64 * 0.1).unwrap()
        })
        .collect();
    FrameSequence::new(seq).unwrap()
}

fn check_gradient(decoder: DecoderKind, loss: FitLoss, scales: usize) {
    let cfg = KPlaneConfig {
        scales,
        spatial_resolution: 5,
        temporal_resolution: 3,
        features: 2,
        outputs: 1,
        decoder,
    };
    let mut field = KPlaneField::init(&cfg, 7).unwrap();
    // spread the planes so products are not all near 1
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p: Vec<f64> = field
        .parameters()
        .iter()
        .map(|v| v + rng.random_range(-0.3..0.3))
        .collect();
    field.set_parameters(&p).unwrap();
    let target = random_target(5, 5, 3, 1, 11);
    let (_, grad) = fit_gradient(&field, &target, loss).unwrap();
    let eps = 1e-4;
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let mut plus = p.clone();
        plus[i] += eps;
        let mut minus = p.clone();
        minus[i] -= eps;
        let mut f = field.clone();
        f.set_parameters(&plus).unwrap();
        let lp = fit_loss(&f, &target, loss).unwrap();
        f.set_parameters(&minus).unwrap();
        let lm = fit_loss(&f, &target, loss).unwrap();
        let num = (lp - lm) / (2.0 * eps);
        let rel = (grad[i] - num).abs() / grad[i].abs().max(num.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-4, "{decoder:?} {loss:?}: worst relative error {worst:e}");
}

#[test]
fn gradients_match_finite_differences() {
    check_gradient(DecoderKind::Linear, FitLoss::L2, 1);
    check_gradient(DecoderKind::Linear, FitLoss::SmoothL1 { eps: 0.1 }, 2);
    check_gradient(DecoderKind::Mlp { hidden: 4 }, FitLoss::L2, 2);
}

#[test]
fn separable_video_fits_to_40_db() {
    let cfg = KPlaneConfig {
        scales: 1,
        spatial_resolution: 8,
        temporal_resolution: 6,
        features: 1,
        outputs: 1,
        decoder: DecoderKind::Linear,
    };
    let mut truth = KPlaneField::init(&cfg, 99).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = truth.plane_param_count();
    let mut p = truth.parameters();
    for v in &mut p[..n] {
        let a = 0.15;
        *v = rng.random_range(1.0 - a..1.0 + a);
    }
    p[n] = 0.6;
    p[n + 1] = 0.0;
    truth.set_parameters(&p).unwrap();
    let (w, h, nf) = (16, 16, 6);
    let frames = (0..nf)
        .map(|k| {
            let tau = k as f64 / (nf - 1) as f64;
            Frame::new(truth.render_frame(tau, w, h).unwrap(), tau).unwrap()
        })
        .collect();
    let target = FrameSequence::new(frames).unwrap();
    let mut field = KPlaneField::init(&cfg, 1).unwrap();
    let rep = fit(
        &mut field,
        &target,
        &FitOptions {
            loss: FitLoss::L2,
            steps: 2000,
            plane_step: 20.0,
            decoder_step: 0.5,
        },
    )
    .unwrap();
    let mut worst = f64::INFINITY;
    for f in target.frames() {
        let tau = f.timestamp();
        let r = Frame::new(field.render_frame(tau, w, h).unwrap(), tau).unwrap();
        worst = worst.min(psnr(&r, f, 1.0).unwrap());
    }
    assert!(rep.final_loss() <= rep.initial_loss());
    assert!(worst >= 40.0);
}
