use proptest::prelude::*;

use hsrnet::degradation::{apply_spectral_response, blur_decimate, DegradationConfig};
use hsrnet::filters::{box_lowpass, highpass, FilterConfig};
use hsrnet::metrics;
use hsrnet::ops::{self, Border};
use hsrnet::trainer::{split_dataset, BatchSampler, Patch, PatchDataset};
use hsrnet::{HyperCube, SpectralResponse, Tensor};

fn cube_strategy(max_side: usize, max_bands: usize) -> impl Strategy<Value = HyperCube<f64>> {
    (1..=max_side, 1..=max_side, 1..=max_bands).prop_flat_map(|(h, w, s)| {
        prop::collection::vec(0.0f64..1.0, h * w * s)
            .prop_map(move |data| HyperCube::new(h, w, s, vec![0.0; s], data).expect("valid cube"))
    })
}

fn tensor_strategy() -> impl Strategy<Value = Tensor<f64>> {
    (1..3usize, 1..4usize, 1..10usize, 1..10usize).prop_flat_map(|(n, c, h, w)| {
        prop::collection::vec(-2.0f64..2.0, n * c * h * w)
            .prop_map(move |d| Tensor::from_vec([n, c, h, w], d).expect("shape"))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn blur_preserves_constants(c in 0.0f64..10.0, side in 1usize..6, f in 1usize..4) {
        let cube = HyperCube::<f64>::from_fn(side * f, side * f, 2, |_, _, _| c);
        let cfg = DegradationConfig { scale_factor: f, ..Default::default() };
        let y = blur_decimate(&cube, &cfg).unwrap();
        prop_assert_eq!((y.height, y.width, y.bands), (side, side, 2));
        for v in &y.data {
            prop_assert!((v - c).abs() <= 1e-12 * c.max(1.0));
        }
    }

    #[test]
    fn blur_stays_within_input_range(cube in cube_strategy(12, 3)) {
        let cfg = DegradationConfig { scale_factor: 1, ..Default::default() };
        let y = blur_decimate(&cube, &cfg).unwrap();
        let (lo, hi) = cube.data.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        for v in &y.data {
            prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
        }
    }

    #[test]
    fn spectral_response_is_linear(a in cube_strategy(6, 5), k in 0.1f64..3.0) {
        let s = a.bands;
        let rows: Vec<Vec<f64>> = (0..2).map(|j| (0..s).map(|b| 1.0 + (j * s + b) as f64).collect()).collect();
        let r = SpectralResponse::from_rows(rows).unwrap();
        let mut scaled = a.clone();
        scaled.data.iter_mut().for_each(|v| *v *= k);
        let za = apply_spectral_response(&a, &r).unwrap();
        let zs = apply_spectral_response(&scaled, &r).unwrap();
        for (x, y) in za.data.iter().zip(&zs.data) {
            prop_assert!((x * k - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn lowpass_plus_highpass_reconstructs(t in tensor_strategy()) {
        let cfg = FilterConfig::default();
        let (low, high) = (box_lowpass(&t, &cfg), highpass(&t, &cfg));
        for ((a, l), d) in t.data().iter().zip(low.data()).zip(high.data()) {
            prop_assert!((l + d - a).abs() <= 4.0 * f64::EPSILON * (a.abs() + l.abs()));
        }
    }

    #[test]
    fn highpass_of_constant_is_zero(c in -1e3f64..1e3, h in 1usize..12, w in 1usize..12) {
        let t = Tensor::<f64>::full([1, 2, h, w], c);
        prop_assert!(highpass(&t, &FilterConfig::default()).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn crop_inverts_replicate_pad(t in tensor_strategy(), px in 0usize..4) {
        let padded = ops::pad_replicate(&t, Border::uniform(px));
        prop_assert_eq!(ops::crop_border(&padded, Border::uniform(px)).unwrap(), t);
    }

    #[test]
    fn metrics_of_identical_cubes_are_ideal(cube in cube_strategy(14, 4)) {
        let mut cube = cube;
        cube.data.iter_mut().for_each(|v| *v += 0.01);
        prop_assert_eq!(metrics::psnr(&cube, &cube, 1.0).unwrap(), f64::INFINITY);
        prop_assert_eq!(metrics::ergas(&cube, &cube, 4.0).unwrap(), 0.0);
        if cube.bands >= 2 {
            prop_assert_eq!(metrics::sam(&cube, &cube).unwrap(), 0.0);
        }
        if cube.height >= 11 && cube.width >= 11 {
            prop_assert_eq!(metrics::ssim(&cube, &cube, 1.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn sam_ignores_spectral_scaling(cube in cube_strategy(5, 4), k in 0.1f64..10.0) {
        prop_assume!(cube.bands >= 2);
        let mut cube = cube;
        cube.data.iter_mut().for_each(|v| *v += 0.01);
        let mut scaled = cube.clone();
        scaled.data.iter_mut().for_each(|v| *v *= k);
        prop_assert!(metrics::sam(&cube, &scaled).unwrap() < 1e-5);
    }

    #[test]
    fn psnr_is_symmetric(a in cube_strategy(6, 3), noise in 0.001f64..0.5) {
        let mut b = a.clone();
        b.data.iter_mut().enumerate().for_each(|(i, v)| *v += if i % 2 == 0 { noise } else { -noise });
        let ab = metrics::psnr(&a, &b, 1.0).unwrap();
        let ba = metrics::psnr(&b, &a, 1.0).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((ab - -20.0 * noise.log10()).abs() < 1e-9);
    }

    #[test]
    fn split_partitions_the_dataset(n in 2usize..60, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let patch = |i: usize| Patch {
            hr: Tensor::zeros([1, 1, 1, 1]),
            lr: Tensor::zeros([1, 1, 1, 1]),
            msi: Tensor::zeros([1, 1, 1, 1]),
            source: i,
            row: 0,
            col: 0,
        };
        let ds = PatchDataset { patches: (0..n).map(patch).collect() };
        let (train, val) = split_dataset(&ds, frac, seed).unwrap();
        prop_assert_eq!(train.len() + val.len(), n);
        prop_assert!(!train.is_empty() && !val.is_empty());
        let mut ids: Vec<usize> = train.patches.iter().chain(&val.patches).map(|p| p.source).collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn sampler_visits_each_index_once_per_epoch(n in 1usize..40, batch in 1usize..8, seed in any::<u64>()) {
        let mut sampler = BatchSampler::new(n, batch, seed).unwrap();
        let epochs = 3;
        let steps = (epochs * n).div_ceil(batch);
        let seen: Vec<usize> = (0..steps).flat_map(|t| sampler.indices(t)).take(epochs * n).collect();
        for e in 0..epochs {
            let mut chunk = seen[e * n..(e + 1) * n].to_vec();
            chunk.sort_unstable();
            prop_assert_eq!(chunk, (0..n).collect::<Vec<_>>());
        }
        let mut again = BatchSampler::new(n, batch, seed).unwrap();
        prop_assert_eq!(again.indices(steps / 2), sampler.indices(steps / 2));
    }
}
