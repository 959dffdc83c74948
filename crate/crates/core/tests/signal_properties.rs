use dana::signal::{NormStats, TimeWindow};
use proptest::prelude::*;

fn window(data: Vec<f64>, samples: usize, rate: f64) -> TimeWindow {
    TimeWindow::new(data, samples, rate, vec![0], 1).unwrap()
}

proptest! {
    #[test]
    fn resampling_is_linear(a in prop::collection::vec(-10.0f64..10.0, 2..60), k in -3.0f64..3.0, target in 2usize..90) {
        let n = a.len();
        let b: Vec<f64> = a.iter().rev().copied().collect();
        let rate = n as f64;
        let ra = window(a.clone(), n, rate).resample(target as f64).unwrap();
        let rb = window(b.clone(), n, rate).resample(target as f64).unwrap();
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + k * y).collect();
        let rc = window(combo, n, rate).resample(target as f64).unwrap();
        prop_assert_eq!(rc.samples(), target);
        for i in 0..target {
            let expect = ra.data()[i] + k * rb.data()[i];
            prop_assert!((rc.data()[i] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn aligned_round_trip_restores_samples(a in prop::collection::vec(-10.0f64..10.0, 2..30), factor in 1usize..6) {
        let n = a.len();
        let up = (n - 1) * factor + 1;
        let w = TimeWindow::with_duration(a.clone(), n, n as f64, 1.0, vec![0], 1).unwrap();
        let hi = w.resample(up as f64).unwrap();
        prop_assert_eq!(hi.samples(), up);
        for (i, &v) in a.iter().enumerate() {
            prop_assert_eq!(hi.data()[i * factor], v);
        }
        let back = hi.resample(n as f64).unwrap();
        prop_assert_eq!(back.data(), &a[..]);
    }

    #[test]
    fn endpoints_survive_any_rate(a in prop::collection::vec(-10.0f64..10.0, 2..40), target in 2usize..80) {
        let n = a.len();
        let r = window(a.clone(), n, n as f64).resample(target as f64).unwrap();
        prop_assert_eq!(r.data()[0], a[0]);
        prop_assert_eq!(r.data()[target - 1], a[n - 1]);
    }

    #[test]
    fn select_then_copy_restores_present_blocks(keep in 0usize..3, seed in 0u64..1000) {
        let data: Vec<f64> = (0..10 * 9).map(|k| ((k as u64 * 2654435761 + seed) % 97) as f64).collect();
        let w = TimeWindow::new(data, 10, 50.0, vec![0, 1, 2], 3).unwrap();
        let one = w.select_sensors(&[keep]).unwrap();
        let filled = one.impute_copy(&[0, 1, 2]).unwrap();
        prop_assert_eq!(filled.streams(), 9);
        for block in 0..3 {
            for a in 0..3 {
                prop_assert_eq!(filled.stream(3 * block + a), w.stream(3 * keep + a));
            }
        }
    }
}

#[test]
fn four_samples_to_two() {
    let w = window(vec![0.0, 1.0, 2.0, 3.0], 4, 4.0);
    assert_eq!(w.resample(2.0).unwrap().data(), &[0.0, 3.0]);
}

#[test]
fn three_sensor_selection_concatenates_blocks() {
    let data: Vec<f64> = (0..2 * 9).map(f64::from).collect();
    let w = TimeWindow::new(data, 2, 50.0, vec![0, 1, 2], 3).unwrap();
    let s = w.select_sensors(&[0, 2]).unwrap();
    assert_eq!(s.streams(), 6);
    assert_eq!(s.sensors(), &[0, 2]);
    assert_eq!(s.data(), &[0.0, 1.0, 2.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 15.0, 16.0, 17.0]);
}

#[test]
fn mean_fill_uses_the_missing_sensor_means() {
    let stats = NormStats::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![1.0; 6]).unwrap();
    let w = TimeWindow::new(vec![9.0; 5 * 3], 5, 50.0, vec![0], 3).unwrap();
    let out = w.impute_mean(&[0, 1], &stats).unwrap();
    for (s, v) in [(3, 4.0), (4, 5.0), (5, 6.0)] {
        assert!(out.stream(s).iter().all(|&x| x == v));
    }
}
