use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hsrnet::cube::{read_cube, write_cube};
use hsrnet::network::{backward, forward, init_network};
use hsrnet::ops::gradcheck::{check_all, tiny_network_config, GradCheckOptions};
use hsrnet::ops::ConvParams;
use hsrnet::trainer::{adam_step, load_checkpoint, save_checkpoint, AdamState, TrainConfig};
use hsrnet::{Error, HyperCube, NetworkParams, Tensor, Variant};

fn single_layer(values: &[f64], bias: &[f64]) -> NetworkParams<f64> {
    let weight = Tensor::from_vec([1, 1, 1, values.len()], values.to_vec()).unwrap();
    NetworkParams::from_layers(vec![(
        "w".into(),
        ConvParams::new(weight, bias.to_vec(), 1, 0),
    )])
}

/// Textbook scalar Adam with bias correction.
struct ScalarAdam {
    m: f64,
    v: f64,
    t: i32,
}

impl ScalarAdam {
    fn step(&mut self, theta: f64, g: f64, lr: f64, b1: f64, b2: f64, eps: f64) -> f64 {
        self.t += 1;
        self.m = b1 * self.m + (1.0 - b1) * g;
        self.v = b2 * self.v + (1.0 - b2) * g * g;
        let m_hat = self.m / (1.0 - b1.powi(self.t));
        let v_hat = self.v / (1.0 - b2.powi(self.t));
        theta - lr * m_hat / (v_hat.sqrt() + eps)
    }
}

#[test]
fn adam_matches_scalar_reference_over_two_steps() {
    let cfg = TrainConfig::default();
    let theta0 = [0.5, -1.25, 3.0, 0.0];
    let bias0 = [0.1, -0.2];
    let grads = [
        ([0.3, -2.0, 1e-3, 7.0], [0.5, -0.5]),
        ([-0.1, 4.0, 2e-3, -7.0], [0.0, 1.5]),
    ];
    let mut params = single_layer(&theta0, &bias0);
    let mut state = AdamState::new(&params);
    let mut reference: Vec<(f64, ScalarAdam)> = theta0
        .iter()
        .chain(&bias0)
        .map(|&t| {
            (
                t,
                ScalarAdam {
                    m: 0.0,
                    v: 0.0,
                    t: 0,
                },
            )
        })
        .collect();
    for (gw, gb) in &grads {
        adam_step(&mut params, &single_layer(gw, gb), &mut state, &cfg).unwrap();
        for ((theta, s), g) in reference.iter_mut().zip(gw.iter().chain(gb)) {
            *theta = s.step(
                *theta,
                *g,
                cfg.learning_rate,
                cfg.adam_beta1,
                cfg.adam_beta2,
                cfg.adam_eps,
            );
        }
    }
    let layer = params.layer("w").unwrap();
    let got: Vec<f64> = layer
        .weight
        .data()
        .iter()
        .chain(&layer.bias)
        .copied()
        .collect();
    for (g, (want, _)) in got.iter().zip(&reference) {
        assert!((g - want).abs() <= 1e-12, "{g} vs {want}");
    }
    assert_eq!(state.t, 2);
}

#[test]
fn adam_first_step_moves_by_learning_rate_in_gradient_sign() {
    let cfg = TrainConfig::default();
    let mut params = single_layer(&[1.0, 1.0, 1.0], &[]);
    let mut state = AdamState::new(&params);
    adam_step(
        &mut params,
        &single_layer(&[3.0, -0.02, 150.0], &[]),
        &mut state,
        &cfg,
    )
    .unwrap();
    let lr = cfg.learning_rate;
    for (v, sign) in params
        .layer("w")
        .unwrap()
        .weight
        .data()
        .iter()
        .zip([1.0, -1.0, 1.0])
    {
        let moved = 1.0 - v;
        assert!((moved - sign * lr).abs() <= 1e-6 * lr, "{moved}");
    }
}

#[test]
fn infinite_gradient_aborts_without_update() {
    let cfg = TrainConfig::default();
    let mut params = single_layer(&[1.0, 2.0], &[0.5]);
    let before = params.clone();
    let mut state = AdamState::new(&params);
    let err = adam_step(
        &mut params,
        &single_layer(&[0.0, 0.0], &[f64::INFINITY]),
        &mut state,
        &cfg,
    )
    .unwrap_err();
    assert!(
        matches!(&err, Error::NonFiniteGradient(name) if name == "w.bias"),
        "{err}"
    );
    assert_eq!(params, before);
    assert_eq!(state.t, 0);
}

#[test]
fn gradcheck_passes_across_seeds() {
    let options = GradCheckOptions::default();
    for seed in 0..20 {
        for r in check_all(seed * 1000, &options).unwrap() {
            assert!(r.passed, "seed {seed}: {}", r.row());
        }
    }
}

fn trained_state() -> (hsrnet::NetworkConfig, NetworkParams<f32>, AdamState<f32>) {
    let cfg = tiny_network_config(Variant::Full);
    let mut params = init_network::<f32>(&cfg, 4).unwrap();
    let mut state = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (s, m, f) = (cfg.hsi_bands, cfg.msi_bands, cfg.scale_factor);
    let y = Tensor::<f32>::from_fn([1, s, 4, 4], |_| rng.random_range(0.0..1.0));
    let z = Tensor::<f32>::from_fn([1, m, 4 * f, 4 * f], |_| rng.random_range(0.0..1.0));
    let x = Tensor::<f32>::from_fn([1, s, 4 * f, 4 * f], |_| rng.random_range(0.0..1.0));
    for _ in 0..3 {
        let out = forward(&params, &cfg, &y, &z, true).unwrap();
        let grads = backward(&params, &cfg, out.cache.as_ref().unwrap(), &x).unwrap();
        adam_step(&mut params, &grads, &mut state, &TrainConfig::default()).unwrap();
    }
    (cfg, params, state)
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let (cfg, params, state) = trained_state();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.hsck");
    save_checkpoint(&params, &state, 3, &cfg, &path).unwrap();
    let back = load_checkpoint(&path, &cfg).unwrap();
    assert_eq!(back.step, 3);
    assert_eq!(back.params, params);
    assert_eq!(back.adam.m, state.m);
    assert_eq!(back.adam.v, state.v);
    assert_eq!(back.adam.t, state.t);
    assert!(!dir.path().join("net.tmp").exists());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let (cfg, params, state) = trained_state();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.hsck");
    save_checkpoint(&params, &state, 3, &cfg, &path).unwrap();
    let good = fs::read(&path).unwrap();

    let bad = dir.path().join("bad.hsck");
    fs::write(&bad, &good[..good.len() - 7]).unwrap();
    assert!(matches!(
        load_checkpoint(&bad, &cfg),
        Err(Error::ShortRead { .. })
    ));

    let mut magic = good.clone();
    magic[0] = b'X';
    fs::write(&bad, &magic).unwrap();
    assert!(matches!(
        load_checkpoint(&bad, &cfg),
        Err(Error::BadMagic { .. })
    ));

    let mut version = good.clone();
    version[4] = 9;
    fs::write(&bad, &version).unwrap();
    assert!(matches!(
        load_checkpoint(&bad, &cfg),
        Err(Error::UnsupportedVersion { .. })
    ));

    let mut trailing = good.clone();
    trailing.push(0);
    fs::write(&bad, &trailing).unwrap();
    assert!(matches!(
        load_checkpoint(&bad, &cfg),
        Err(Error::Corrupt { .. })
    ));

    let mut other = cfg.clone();
    other.hsi_bands += 1;
    let msg = load_checkpoint(&path, &other).unwrap_err().to_string();
    assert!(msg.contains("trained with"), "{msg}");

    let missing = load_checkpoint(dir.path().join("none.hsck"), &cfg).unwrap_err();
    assert!(matches!(missing, Error::Io { .. }));
}

#[test]
fn cube_files_reject_damage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.hsc");
    let cube = HyperCube::<f32>::from_fn(3, 4, 2, |b, y, x| (b * 100 + y * 10 + x) as f32);
    write_cube(&cube, &path).unwrap();
    assert_eq!(read_cube(&path).unwrap(), cube);
    let good = fs::read(&path).unwrap();
    assert_eq!(good.len(), 20 + 4 * (2 + 24));

    let bad = dir.path().join("bad.hsc");
    type Damage = (Vec<u8>, fn(&Error) -> bool);
    let cases: Vec<Damage> = vec![
        (good[..good.len() - 1].to_vec(), |e| {
            matches!(e, Error::ShortRead { .. })
        }),
        (b"HSK1".iter().chain(&good[4..]).copied().collect(), |e| {
            matches!(e, Error::BadMagic { .. })
        }),
        (
            [&good[..4], &2u32.to_le_bytes()[..], &good[8..]].concat(),
            |e| matches!(e, Error::UnsupportedVersion { version: 2, .. }),
        ),
        ([&good[..], &[0u8; 4][..]].concat(), |e| {
            matches!(e, Error::Corrupt { .. })
        }),
        (
            [&good[..8], &0u32.to_le_bytes()[..], &good[12..]].concat(),
            |e| matches!(e, Error::Corrupt { .. }),
        ),
        (
            [&good[..good.len() - 4], &f32::NAN.to_le_bytes()[..]].concat(),
            |e| matches!(e, Error::Corrupt { .. }),
        ),
    ];
    for (i, (bytes, expected)) in cases.into_iter().enumerate() {
        fs::write(&bad, bytes).unwrap();
        let e = read_cube(&bad).unwrap_err();
        assert!(expected(&e), "case {i}: {e}");
    }
}
