#![allow(dead_code)]

use dana::signal::TimeWindow;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn round_half_up(num: usize, den: usize) -> usize {
    (num as f64 / den as f64 + 0.5).floor() as usize
}

/// Nested-loop adaptive max pooling. Materializes the tiled maps, then takes
/// each window's maximum. `None` when the grid cannot be filled.
pub fn naive_dap(data: &[f64], maps: usize, w: usize, h: usize, out_w: usize, out_h: usize, axes: usize) -> Option<Vec<f64>> {
    if w < out_w || h == 0 {
        return None;
    }
    let a = if out_h > h { (out_h - h + axes - 1) / axes } else { 0 };
    let tiled = h * (a + 1);
    let kept = h.max(out_h);
    if tiled < kept {
        return None;
    }
    let mut out = Vec::with_capacity(maps * out_w * out_h);
    for m in 0..maps {
        let map = &data[m * w * h..(m + 1) * w * h];
        let mut z = vec![vec![0.0; kept]; w];
        for (r, row) in z.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = map[r * h + c % h];
            }
        }
        let f = (a + 1) * h / out_h;
        for i in 0..out_w {
            let (r1, r2) = (round_half_up(i * w, out_w), round_half_up((i + 1) * w, out_w));
            for j in 0..out_h {
                let (c1, c2) = if a == 0 {
                    (round_half_up(j * h, out_h), round_half_up((j + 1) * h, out_h))
                } else {
                    (j * f, (j + 1) * f)
                };
                if c2 > kept || r2 > w || r1 >= r2 || c1 >= c2 {
                    return None;
                }
                let mut best = f64::NEG_INFINITY;
                for row in &z[r1..r2] {
                    for &v in &row[c1..c2] {
                        if v > best {
                            best = v;
                        }
                    }
                }
                out.push(best);
            }
        }
    }
    Some(out)
}

/// Values drawn from a small integer set half the time, so ties are common.
pub fn random_maps(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let ties = rng.random_bool(0.5);
    (0..n)
        .map(|_| if ties { rng.random_range(-3..=3) as f64 } else { rng.random_range(-1.0..1.0) })
        .collect()
}

/// Labelled random windows at 50 Hz with two sensors.
pub fn random_windows(n: usize, samples: usize, classes: usize, seed: u64) -> Vec<TimeWindow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let data = (0..samples * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
            TimeWindow::new(data, samples, 50.0, vec![0, 1], 3).unwrap().labeled(k % classes)
        })
        .collect()
}
