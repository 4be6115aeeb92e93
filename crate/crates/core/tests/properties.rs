use proptest::prelude::*;

use stmamba::autodiff::Tape;
use stmamba::data::{make_windows, split_dataset, window_count, SplitRatios, Standardizer, TrafficTensor};
use stmamba::mamba::{selective_scan_chunked, selective_scan_sequential, ScanElement, ScanInputs};
use stmamba::model::{st_mix, st_separate};
use stmamba::tensor::Tensor;
use stmamba::train::compute_metrics;

fn traffic(steps: usize, sensors: usize, features: usize, values: Vec<f32>) -> TrafficTensor {
    let names = (0..features).map(|f| format!("f{f}")).collect();
    TrafficTensor::new(Tensor::new(&[steps, sensors, features], values).unwrap(), 5, 0, names).unwrap()
}

fn tensor_strategy(max_len: usize) -> impl Strategy<Value = (usize, usize, usize, Vec<f64>)> {
    (1..6usize, 1..5usize, 1..max_len).prop_flat_map(|(a, b, c)| {
        prop::collection::vec(-100.0..100.0f64, a * b * c).prop_map(move |v| (a, b, c, v))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mix_then_separate_is_identity((h, n, d_h, v) in tensor_strategy(8)) {
        let x = Tensor::<f64>::new(&[h, n, d_h], v).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let mixed = st_mix(&mut tape, xv).unwrap();
        prop_assert_eq!(tape.shape(mixed), &[h * n, d_h][..]);
        let back = st_separate(&mut tape, mixed, n).unwrap();
        prop_assert_eq!(tape.value(back), &x);
    }

    #[test]
    fn standardizer_roundtrip(
        (steps, sensors, d, v) in tensor_strategy(4),
        offset in -1e3..1e3f64,
        scale in 1e-2..1e2f64,
    ) {
        prop_assume!(steps * sensors >= 2);
        let values: Vec<f32> = v.iter().map(|x| (x * scale + offset) as f32).collect();
        let data = traffic(steps, sensors, d, values);
        let stats = match Standardizer::fit(&data) {
            Ok(s) => s,
            Err(_) => return Ok(()),
        };
        let back = stats.destandardize(&stats.standardize(&data).unwrap()).unwrap();
        for (i, (a, b)) in data.values.data().iter().zip(back.values.data()).enumerate() {
            let f = i % d;
            let mag = (*a as f64).abs().max(stats.mean[f].abs() + stats.std[f]);
            prop_assert!(((*a - *b) as f64).abs() <= 1e-6 * mag, "{} vs {}", a, b);
        }
    }

    #[test]
    fn splits_partition_the_series(steps in 30..400usize, train in 0.3..0.7f64, val in 0.05..0.25f64) {
        let ratios = SplitRatios::new(train, val, 1.0 - train - val).unwrap();
        let values: Vec<f32> = (0..steps * 2).map(|i| i as f32).collect();
        let data = traffic(steps, 2, 1, values);
        let s = split_dataset(&data, ratios, 1).unwrap();
        prop_assert_eq!(s.train.steps() + s.val.steps() + s.test.steps(), steps);
        prop_assert_eq!(s.train.steps(), (train * steps as f64 + 1e-9).floor() as usize);
        let joined: Vec<f32> = [&s.train, &s.val, &s.test].iter().flat_map(|p| p.values.data().to_vec()).collect();
        prop_assert_eq!(&joined[..], data.values.data());
        prop_assert_eq!(s.val.time_of_day[0] as usize, s.train.steps() % 288);
    }

    #[test]
    fn windows_are_aligned(steps in 2..120usize, h in 1..12usize, z in 1..12usize) {
        prop_assume!(steps >= h + z);
        let data = traffic(steps, 1, 1, (0..steps).map(|i| i as f32).collect());
        let w = make_windows(&data, h, z).unwrap();
        prop_assert_eq!(w.len(), steps - h - z + 1);
        prop_assert_eq!(window_count(steps, h, z).unwrap(), w.len());
        for (i, p) in w.iter().enumerate() {
            prop_assert_eq!(p.history.data()[h - 1], (i + h - 1) as f32);
            prop_assert_eq!(p.target.data()[0], (i + h) as f32);
        }
    }

    #[test]
    fn scan_composition_is_associative(
        parts in prop::collection::vec(prop::collection::vec((0.0..1.0f64, -5.0..5.0f64), 3), 3),
    ) {
        let el: Vec<ScanElement<f64>> = parts
            .iter()
            .map(|p| ScanElement { decay: p.iter().map(|x| x.0).collect(), state: p.iter().map(|x| x.1).collect() })
            .collect();
        let left = el[0].then(&el[1]).then(&el[2]);
        let right = el[0].then(&el[1].then(&el[2]));
        for (a, b) in left.state.iter().zip(&right.state).chain(left.decay.iter().zip(&right.decay)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert_eq!(ScanElement::identity(3).then(&el[0]), el[0].clone());
    }

    #[test]
    fn chunked_scan_matches_sequential(steps in 1..80usize, chunk in 1..20usize, seed in any::<u64>()) {
        let mut rng = stmamba::rng::RngStream::new(seed, 0);
        let mut m = |shape: &[usize], lo: f64, hi: f64| Tensor::from_fn(shape, |_| rng.uniform_range(lo, hi));
        let (u, delta, a, b, c) = (
            m(&[steps, 3], -1.0, 1.0),
            m(&[steps, 3], 0.01, 0.5),
            m(&[3, 2], -2.0, -0.1),
            m(&[steps, 2], -1.0, 1.0),
            m(&[steps, 2], -1.0, 1.0),
        );
        let x = ScanInputs { u: &u, delta: &delta, a: &a, b: &b, c: &c };
        let seq = selective_scan_sequential(x).unwrap();
        let ch = selective_scan_chunked(x, chunk).unwrap();
        prop_assert!(seq.max_abs_diff(&ch) < 1e-12);
    }

    #[test]
    fn rmse_bounds_mae(
        (z, n, _, p) in tensor_strategy(2),
        noise in prop::collection::vec(-50.0..50.0f64, 32),
    ) {
        let pred: Vec<f32> = p.iter().map(|&x| x as f32).collect();
        let truth: Vec<f32> = p.iter().zip(noise.iter().cycle()).map(|(x, e)| (x + e) as f32).collect();
        let r = compute_metrics(
            &Tensor::new(&[z, n, 1], pred).unwrap(),
            &Tensor::new(&[z, n, 1], truth).unwrap(),
            1.0,
        ).unwrap();
        prop_assert!(r.rmse >= r.mae * (1.0 - 1e-12));
        prop_assert!(r.mae >= 0.0);
    }
}
