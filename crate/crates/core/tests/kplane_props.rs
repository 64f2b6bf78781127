use evdecomp::kplane::{Decoder, FeaturePlane, KPlaneField, PlaneAxes};
use proptest::prelude::*;

const RX: usize = 4;
const RY: usize = 3;
const RT: usize = 5;

fn arb_planes(f: usize) -> impl Strategy<Value = [FeaturePlane; 3]> {
    (
        prop::collection::vec(-2.0..2.0f64, RX * RY * f),
        prop::collection::vec(-2.0..2.0f64, RX * RT * f),
        prop::collection::vec(-2.0..2.0f64, RY * RT * f),
    )
        .prop_map(move |(a, b, c)| {
            [
                FeaturePlane::new(PlaneAxes::Xy, RX, RY, f, a).unwrap(),
                FeaturePlane::new(PlaneAxes::Xt, RX, RT, f, b).unwrap(),
                FeaturePlane::new(PlaneAxes::Yt, RY, RT, f, c).unwrap(),
            ]
        })
}

fn summing_field(planes: [FeaturePlane; 3], f: usize) -> KPlaneField {
    KPlaneField::new(vec![planes], Decoder::linear(f, 1, vec![1.0; f], vec![0.0]).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn separable_targets_are_exact_at_nodes(planes in arb_planes(3)) {
        let field = summing_field(planes.clone(), 3);
        let [xy, xt, yt] = &planes;
        for k in 0..RT {
            for j in 0..RY {
                for i in 0..RX {
                    let expect: f64 = (0..3).map(|f| xy.node(i, j)[f] * xt.node(i, k)[f] * yt.node(j, k)[f]).sum();
                    let q = [i as f64 / (RX - 1) as f64, j as f64 / (RY - 1) as f64, k as f64 / (RT - 1) as f64];
                    let got = field.query(q).unwrap()[0];
                    prop_assert!((got - expect).abs() <= 1e-12 * expect.abs().max(1.0), "node ({i},{j},{k})");
                }
            }
        }
    }

    #[test]
    fn query_is_linear_in_decoder_weights(
        planes in arb_planes(2),
        w1 in prop::collection::vec(-1.0..1.0f64, 3),
        w2 in prop::collection::vec(-1.0..1.0f64, 3),
        a in -2.0..2.0f64,
        b in -2.0..2.0f64,
        q in prop::array::uniform3(0.0..=1.0f64),
    ) {
        let at = |w: &[f64]| {
            let dec = Decoder::linear(2, 1, w[..2].to_vec(), vec![w[2]]).unwrap();
            KPlaneField::new(vec![planes.clone()], dec).unwrap().query(q).unwrap()[0]
        };
        let mixed: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| a * x + b * y).collect();
        let expect = a * at(&w1) + b * at(&w2);
        prop_assert!((at(&mixed) - expect).abs() <= 1e-9 * expect.abs().max(1.0));
    }

    #[test]
    fn bilinear_weights_partition_unity(planes in arb_planes(1), s in 0.0..=1.0f64, t in 0.0..=1.0f64) {
        for plane in &planes {
            let w: f64 = plane.corners(s, t).iter().map(|c| c.1).sum();
            prop_assert!((w - 1.0).abs() <= 1e-12);
            prop_assert!(plane.corners(s, t).iter().all(|c| c.1 >= -1e-15));
        }
    }
}
