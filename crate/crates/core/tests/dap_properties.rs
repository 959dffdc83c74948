mod common;

use common::{naive_dap, random_maps};
use dana::autodiff::Tape;
use dana::dap::{dap_backward, dap_forward, pool_on_tape, DapParams, DapPlan, FeatureMaps};
use dana::gradcheck::{check_function, distinct_values, PRIMITIVE_STEP, PRIMITIVE_TOLERANCE};
use dana::tensor::Tensor;
use dana::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GRIDS: [(usize, usize); 5] = [(4, 6), (8, 6), (16, 3), (16, 9), (32, 1)];

fn maps(m: usize, w: usize, h: usize, seed: u64) -> FeatureMaps {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureMaps::new(m, w, h, random_maps(m * w * h, &mut rng)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn output_shape_is_fixed(grid in 0usize..5, scale in 0usize..=300, h in prop::sample::select(vec![3usize, 6, 9]), m in prop::sample::select(vec![1usize, 8, 32]), seed: u64) {
        let (gw, gh) = GRIDS[grid];
        let w = gw + scale * 3 * gw / 300;
        let out = dap_forward(&maps(m, w, h, seed), DapParams::new(gw, gh).unwrap()).unwrap();
        prop_assert_eq!(out.values.shape(), &[m, gw, gh][..]);
    }

    #[test]
    fn matches_nested_loop_reference(gw in 1usize..12, gh in 1usize..10, extra in 0usize..30, sensors in 1usize..4, axes in 1usize..4, m in 1usize..4, seed: u64) {
        let (w, h) = (gw + extra, sensors * axes);
        let fm = maps(m, w, h, seed);
        let params = DapParams::new(gw, gh).unwrap().with_axes_per_sensor(axes).unwrap();
        match (dap_forward(&fm, params), naive_dap(fm.data(), m, w, h, gw, gh, axes)) {
            (Ok(out), Some(expected)) => prop_assert_eq!(out.values.data(), &expected[..]),
            (Err(Error::UnsupportedDimensions(_)), None) => {}
            (got, expected) => prop_assert!(false, "{:?} vs {:?}", got.map(|o| o.values), expected),
        }
    }

    #[test]
    fn commutes_with_increasing_maps(w in 5usize..40, sensors in 1usize..4, seed: u64) {
        let fm = maps(2, w, 3 * sensors, seed);
        let params = DapParams::new(5, 6).unwrap();
        let f = |x: f64| x.tanh() + x * x * x;
        let mapped = FeatureMaps::new(2, w, 3 * sensors, fm.data().iter().map(|&x| f(x)).collect()).unwrap();
        let a = dap_forward(&mapped, params).unwrap().values;
        let b: Vec<f64> = dap_forward(&fm, params).unwrap().values.data().iter().map(|&x| f(x)).collect();
        prop_assert_eq!(a.data(), &b[..]);
    }

    #[test]
    fn windows_partition_the_map(gw in 1usize..20, gh in 1usize..10, extra in 0usize..40, hextra in 0usize..10) {
        let (w, h) = (gw + extra, gh + hextra);
        let plan = DapPlan::new(w, h, DapParams::new(gw, gh).unwrap()).unwrap();
        prop_assert_eq!(plan.replications(), 0);
        prop_assert_eq!(plan.row_window(0).0, 0);
        prop_assert_eq!(plan.row_window(gw - 1).1, w);
        for i in 1..gw {
            prop_assert_eq!(plan.row_window(i - 1).1, plan.row_window(i).0);
        }
        prop_assert_eq!(plan.col_window(0).0, 0);
        prop_assert_eq!(plan.col_window(gh - 1).1, h);
        for j in 1..gh {
            prop_assert_eq!(plan.col_window(j - 1).1, plan.col_window(j).0);
        }
    }

    #[test]
    fn backward_routes_upstream_mass(w in 5usize..30, sensors in 1usize..4, seed: u64) {
        let fm = maps(3, w, 3 * sensors, seed);
        let out = dap_forward(&fm, DapParams::new(5, 9).unwrap()).unwrap();
        let upstream = Tensor::new(vec![3, 5, 9], (0..135).map(|k| k as f64).collect()).unwrap();
        let grad = dap_backward(&fm, &out, &upstream).unwrap();
        let total: f64 = grad.data().iter().sum();
        prop_assert_eq!(total, upstream.data().iter().sum::<f64>());
    }
}

#[test]
fn worked_examples() {
    let p = DapParams::new(16, 3).unwrap();
    let full = DapPlan::new(128, 9, p).unwrap();
    let half = DapPlan::new(64, 3, p).unwrap();
    for i in 0..16 {
        assert_eq!(full.row_window(i), (8 * i, 8 * i + 8));
        assert_eq!(half.row_window(i), (4 * i, 4 * i + 4));
    }
    for j in 0..3 {
        assert_eq!(full.col_window(j), (3 * j, 3 * j + 3));
        assert_eq!(half.col_window(j), (j, j + 1));
    }
    let missing = DapPlan::new(32, 6, DapParams::new(16, 9).unwrap()).unwrap();
    assert_eq!(missing.replications(), 1);
    assert_eq!(missing.padded_streams(), 9);
    assert_eq!(missing.source_stream(7), 1);

    let fm = maps(32, 128, 9, 1);
    let out = dap_forward(&fm, p).unwrap();
    assert_eq!(out.values.shape(), &[32, 16, 3]);
    assert_eq!(out.values.data(), &naive_dap(fm.data(), 32, 128, 9, 16, 3, 3).unwrap()[..]);
}

#[test]
fn replicated_pooling_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (h, out_h) in [(3usize, 9usize), (6, 9), (3, 7)] {
        let inputs = [distinct_values(&[2, 2, 15, h], &mut rng)];
        let params = DapParams::new(4, out_h).unwrap();
        let r = check_function("dap", &inputs, PRIMITIVE_TOLERANCE, PRIMITIVE_STEP, 100, &mut rng, move |t: &mut Tape, v| {
            let y = pool_on_tape(t, v[0], params)?;
            let w = t.constant(Tensor::new(vec![2, 2, 4, out_h], (0..16 * out_h).map(|k| 1.0 + k as f64 / 7.0).collect())?);
            let y = t.mul(y, w)?;
            t.sum(y)
        })
        .unwrap();
        assert!(r.passed, "{h}->{out_h}: {}", r.max_rel_error);
    }
}

#[test]
fn unsupported_extents() {
    assert!(matches!(
        dap_forward(&maps(1, 3, 6, 0), DapParams::new(5, 6).unwrap()),
        Err(Error::UnsupportedDimensions(_))
    ));
    // two streams with three-axis sensors: one replication gives 4 < 9
    assert!(matches!(
        DapPlan::new(10, 2, DapParams::new(5, 9).unwrap()),
        Err(Error::UnsupportedDimensions(_))
    ));
}
