mod common;

use ndarray::Array3;
use proptest::prelude::*;
use segrefine::metrics::{dice, hd95};

fn grid(n: usize) -> impl Strategy<Value = Array3<u8>> {
    (0.0f64..0.7, any::<u64>()).prop_map(move |(p, seed)| {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn((n, n, n), || u8::from(rng.random::<f64>() < p))
    })
}

fn spacing() -> impl Strategy<Value = [f64; 3]> {
    [0.5f64..3.0, 0.5f64..3.0, 0.5f64..3.0]
}

fn ball(n: usize, center: [f64; 3], r: f64) -> Array3<u8> {
    Array3::from_shape_fn((n, n, n), |(i, j, k)| {
        let d2 = (i as f64 - center[0]).powi(2) + (j as f64 - center[1]).powi(2) + (k as f64 - center[2]).powi(2);
        u8::from(d2 <= r * r)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_brute_force(p in grid(12), g in grid(12), s in spacing()) {
        let d = dice(p.view(), g.view()).unwrap();
        prop_assert!((d - common::dice_oracle(&p, &g)).abs() <= 1e-9);
        let h = hd95(p.view(), g.view(), s).unwrap();
        let want = common::hd95_oracle(&p, &g, s);
        prop_assert!((h - want).abs() <= 1e-9, "hd95 {} vs oracle {}", h, want);
    }

    #[test]
    fn symmetric(p in grid(8), g in grid(8), s in spacing()) {
        prop_assert_eq!(dice(p.view(), g.view()).unwrap(), dice(g.view(), p.view()).unwrap());
        prop_assert_eq!(hd95(p.view(), g.view(), s).unwrap(), hd95(g.view(), p.view(), s).unwrap());
    }

    #[test]
    fn doubling_spacing_doubles_hd95(p in grid(8), g in grid(8), s in spacing()) {
        prop_assume!(p.iter().any(|&v| v == 1) && g.iter().any(|&v| v == 1));
        let h1 = hd95(p.view(), g.view(), s).unwrap();
        let h2 = hd95(p.view(), g.view(), [2.0 * s[0], 2.0 * s[1], 2.0 * s[2]]).unwrap();
        prop_assert!((h2 - 2.0 * h1).abs() <= 1e-12 * h1.max(1.0));
    }

    #[test]
    fn growing_nested_ball_never_increases_hd95(r_gt in 3.0f64..5.5, frac in 0.2f64..0.8, dz in -1.0f64..1.0) {
        let n = 14;
        let c = [6.5, 6.5, 6.5 + dz];
        let gt = ball(n, [6.5, 6.5, 6.5], r_gt);
        let mut prev = f64::INFINITY;
        let mut r = frac * r_gt;
        while r <= r_gt {
            let pred = ball(n, c, r);
            let inside = pred.iter().zip(gt.iter()).all(|(a, b)| *a <= *b);
            if inside && pred.iter().any(|&v| v == 1) {
                let h = hd95(pred.view(), gt.view(), [1.0; 3]).unwrap();
                prop_assert!(h <= prev + 1e-12, "radius {}: {} after {}", r, h, prev);
                prev = h;
            }
            r += 0.25;
        }
    }
}

#[test]
fn identical_masks() {
    let a = ball(9, [4.0; 3], 3.0);
    assert_eq!(dice(a.view(), a.view()).unwrap(), 1.0);
    assert_eq!(hd95(a.view(), a.view(), [0.3, 2.0, 1.0]).unwrap(), 0.0);
}
