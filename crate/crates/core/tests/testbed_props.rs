use evdecomp::testbed::{ground_truth_flow, ground_truth_tracks, render, SceneKind, SceneSpec};
use evdecomp::warp::backward_warp;
use proptest::prelude::*;

fn arb_kind() -> impl Strategy<Value = SceneKind> {
    prop::sample::select(SceneKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tracks_agree_with_flow(kind in arb_kind(), t0 in 0.0..0.25f64, t in 0.0..0.5f64, px in prop::collection::vec((0usize..32, 0usize..32), 1..10)) {
        let spec = SceneSpec::preset(kind, 32, 32, 0.5);
        let flow = ground_truth_flow(&spec, t0, t).unwrap();
        let tracks = ground_truth_tracks(&spec, t0, &px, &[t]).unwrap();
        for (&(x, y), track) in px.iter().zip(&tracks) {
            let (u, v) = flow.get(x, y);
            prop_assert!((track[0].0 - x as f64 - u).abs() <= 1e-12);
            prop_assert!((track[0].1 - y as f64 - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn smooth_scenes_satisfy_brightness_constancy(
        kind in prop::sample::select(vec![SceneKind::TranslatingGaussian, SceneKind::SinusoidalGratingOnCurvedPath]),
        t in 0.0..0.25f64,
    ) {
        let spec = SceneSpec::preset(kind, 48, 48, 0.25);
        let frames = render(&spec, &[0.0, t]).unwrap();
        let flow = ground_truth_flow(&spec, 0.0, t).unwrap();
        let warped = backward_warp(frames.frames()[1].grid(), &flow).unwrap();
        let first = frames.frames()[0].grid();
        for y in 8..40 {
            for x in 8..40 {
                let (u, v) = flow.get(x, y);
                let (sx, sy) = (x as f64 + u, y as f64 + v);
                if sx < 1.0 || sy < 1.0 || sx > 46.0 || sy > 46.0 {
                    continue;
                }
                prop_assert!((warped.image.get(x, y, 0) - first.get(x, y, 0)).abs() < 1e-2, "({x},{y})");
            }
        }
    }
}
