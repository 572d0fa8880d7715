//! Central-difference verification of every backward pass.
//!
//! Each registered case exposes its differentiable arguments as flat `f64`
//! vectors, a forward map and a backward map. The check contracts the output
//! with a random projection `p` and compares `backward(p)` against
//! `(L(x + εe_i) − L(x − εe_i)) / 2ε` for every coordinate.
//!
//! Piecewise-linear operators (ReLU) also report their activation pattern.
//! When a perturbation flips the pattern the step is shrunk for that
//! coordinate, and if no step avoids the kink the coordinate is skipped.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::basic::{self, Border};
use super::conv::{self, ConvParams};
use crate::error::{Error, Result};
use crate::filters::{self, FilterConfig, InterleaveSpec};
use crate::network::{self, NetworkConfig, NetworkParams, Variant};
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const RELU_TOLERANCE: f64 = 1e-6;
const REL_FLOOR: f64 = 1e-8;
const KINK_RETRIES: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates skipped because every tried step crossed a kink.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn row(&self) -> String {
        format!(
            "{:<26} max_rel_error={:.3e} tol={:.0e} checked={} skipped={} {}",
            self.op_name,
            self.max_rel_error,
            self.tolerance,
            self.checked,
            self.skipped,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Scales every weight gradient by 1.01 so the check must fail.
    pub inject_fault: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            inject_fault: false,
        }
    }
}

pub const REGISTERED_OPS: &[&str] = &[
    "conv2d",
    "transposed_conv2d",
    "grouped_transposed_conv2d",
    "relu",
    "add",
    "concat_channels",
    "decimate",
    "crop_border",
    "pad_replicate",
    "box_lowpass",
    "highpass",
    "interleave",
    "loss_mse",
    "network_full",
    "network_no_highpass",
    "network_single_scale",
];

type Vars = [Vec<f64>];
type Forward = Box<dyn Fn(&Vars) -> Result<(Tensor<f64>, Vec<bool>)>>;
type Backward = Box<dyn Fn(&Vars, &Tensor<f64>) -> Result<Vec<Vec<f64>>>>;

struct Case {
    vars: Vec<Vec<f64>>,
    forward: Forward,
    backward: Backward,
    tolerance: f64,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn tensor(shape: [usize; 4], data: &[f64]) -> Result<Tensor<f64>> {
    Tensor::from_vec(shape, data.to_vec())
}

fn numel(shape: [usize; 4]) -> usize {
    shape.iter().product()
}

fn smooth(t: Tensor<f64>) -> Result<(Tensor<f64>, Vec<bool>)> {
    Ok((t, Vec::new()))
}

fn faulty(mut g: Vec<f64>, fault: bool) -> Vec<f64> {
    if fault {
        g.iter_mut().for_each(|v| *v *= 1.01);
    }
    g
}

fn conv_case(rng: &mut ChaCha8Rng, fault: bool) -> Case {
    let n = rng.random_range(1..=2);
    let c = rng.random_range(1..=3);
    let k = rng.random_range(1..=4);
    let kh = [1, 3][rng.random_range(0..2)];
    let stride = rng.random_range(1..=2);
    let padding = rng.random_range(0..=kh / 2);
    let out_side = rng.random_range(2..=4);
    let side = (out_side - 1) * stride + kh - 2 * padding;
    let in_shape = [n, c, side, side];
    let w_shape = [k, c, kh, kh];
    let vars = vec![
        uniform(rng, numel(in_shape)),
        uniform(rng, numel(w_shape)),
        uniform(rng, k),
    ];
    let params = move |v: &Vars| -> Result<ConvParams<f64>> {
        Ok(ConvParams::new(
            tensor(w_shape, &v[1])?,
            v[2].clone(),
            stride,
            padding,
        ))
    };
    let p2 = params;
    Case {
        vars,
        forward: Box::new(move |v| smooth(conv::conv2d(&tensor(in_shape, &v[0])?, &params(v)?)?)),
        backward: Box::new(move |v, g| {
            let (gi, gp) = conv::conv2d_backward(&tensor(in_shape, &v[0])?, &p2(v)?, g)?;
            Ok(vec![
                gi.into_vec(),
                faulty(gp.weight.into_vec(), fault),
                gp.bias,
            ])
        }),
        tolerance: DEFAULT_TOLERANCE,
    }
}

fn transposed_case(rng: &mut ChaCha8Rng, grouped: bool, fault: bool) -> Case {
    let n = rng.random_range(1..=2);
    let c = rng.random_range(1..=3);
    let stride = rng.random_range(1..=3);
    let kh = rng.random_range(stride..=2 * stride);
    let side = rng.random_range(2..=4);
    let (groups, out_per_group) = if grouped {
        (c, 1)
    } else {
        (1, rng.random_range(1..=3))
    };
    let in_shape = [n, c, side, side];
    let w_shape = [c, out_per_group, kh, kh];
    let bias_len = if grouped { 0 } else { out_per_group };
    let vars = vec![
        uniform(rng, numel(in_shape)),
        uniform(rng, numel(w_shape)),
        uniform(rng, bias_len),
    ];
    let params = move |v: &Vars| -> Result<ConvParams<f64>> {
        Ok(ConvParams::new(tensor(w_shape, &v[1])?, v[2].clone(), stride, 0).with_groups(groups))
    };
    let p2 = params;
    Case {
        vars,
        forward: Box::new(move |v| {
            smooth(conv::transposed_conv2d(
                &tensor(in_shape, &v[0])?,
                &params(v)?,
            )?)
        }),
        backward: Box::new(move |v, g| {
            let (gi, gp) = conv::transposed_conv2d_backward(&tensor(in_shape, &v[0])?, &p2(v)?, g)?;
            Ok(vec![
                gi.into_vec(),
                faulty(gp.weight.into_vec(), fault),
                gp.bias,
            ])
        }),
        tolerance: DEFAULT_TOLERANCE,
    }
}

fn random_shape(rng: &mut ChaCha8Rng) -> [usize; 4] {
    [
        rng.random_range(1..=2),
        rng.random_range(1..=3),
        rng.random_range(2..=5),
        rng.random_range(2..=5),
    ]
}

fn relu_case(rng: &mut ChaCha8Rng) -> Case {
    let shape = random_shape(rng);
    let x: Vec<f64> = (0..numel(shape))
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Case {
        vars: vec![x],
        forward: Box::new(move |v| {
            let x = tensor(shape, &v[0])?;
            let mask = v[0].iter().map(|&a| a > 0.0).collect();
            Ok((basic::relu(&x), mask))
        }),
        backward: Box::new(move |v, g| {
            Ok(vec![
                basic::relu_backward(&tensor(shape, &v[0])?, g)?.into_vec()
            ])
        }),
        tolerance: RELU_TOLERANCE,
    }
}

fn add_case(rng: &mut ChaCha8Rng) -> Case {
    let shape = random_shape(rng);
    let parts = rng.random_range(1..=3);
    Case {
        vars: (0..parts).map(|_| uniform(rng, numel(shape))).collect(),
        forward: Box::new(move |v| {
            let ts = v
                .iter()
                .map(|d| tensor(shape, d))
                .collect::<Result<Vec<_>>>()?;
            smooth(basic::add(&ts.iter().collect::<Vec<_>>())?)
        }),
        backward: Box::new(move |v, g| Ok(vec![g.data().to_vec(); v.len()])),
        tolerance: DEFAULT_TOLERANCE,
    }
}

fn concat_case(rng: &mut ChaCha8Rng) -> Case {
    let [n, _, h, w] = random_shape(rng);
    let channels: Vec<usize> = (0..rng.random_range(1..=3))
        .map(|_| rng.random_range(1..=3))
        .collect();
    let shapes: Vec<[usize; 4]> = channels.iter().map(|&c| [n, c, h, w]).collect();
    let s2 = shapes.clone();
    Case {
        vars: shapes.iter().map(|&s| uniform(rng, numel(s))).collect(),
        forward: Box::new(move |v| {
            let ts = v
                .iter()
                .zip(&shapes)
                .map(|(d, &s)| tensor(s, d))
                .collect::<Result<Vec<_>>>()?;
            smooth(basic::concat_channels(&ts.iter().collect::<Vec<_>>())?)
        }),
        backward: Box::new(move |_, g| {
            let sizes: Vec<usize> = s2.iter().map(|s| s[1]).collect();
            Ok(basic::split_channels_backward(g, &sizes)?
                .into_iter()
                .map(Tensor::into_vec)
                .collect())
        }),
        tolerance: DEFAULT_TOLERANCE,
    }
}

fn decimate_case(rng: &mut ChaCha8Rng) -> Case {
    let f = rng.random_range(1..=3);
    let [n, c, h, w] = random_shape(rng);
    let shape = [n, c, h.min(3) * f, w.min(3) * f];
    Case {
        vars: vec![uniform(rng, numel(shape))],
        forward: Box::new(move |v| smooth(basic::decimate(&tensor(shape, &v[0])?, f)?)),
        backward: Box::new(move |_, g| Ok(vec![basic::decimate_backward(g, shape, f)?.into_vec()])),
        tolerance: DEFAULT_TOLERANCE,
    }
}

fn random_border(rng: &mut ChaCha8Rng) -> Border {
    Border {
        left: rng.random_range(0..=2),
        right: rng.random_range(0..=2),
        top: rng.random_range(0..=2),
        bottom: rng.random_range(0..=2),
    }
}

fn crop_case(rng: &mut ChaCha8Rng) -> Case {
    let border = random_border(rng);
    let [n, c, h, w] = random_shape(rng);
    let shape = [
        n,
        c,
        h + border.top + border.bottom,
        w + border.left + border.right,
    ];
    Case {
        vars: vec![uniform(rng, numel(shape))],
        forward: Box::new(move |v| smooth(basic::crop_border(&tensor(shape, &v[0])?, border)?)),
        backward: Box::new(move |_, g| {
            Ok(vec![basic::crop_backward(g, shape, border)?.into_vec()])
        }),
        tolerance: DEFAULT_TOLERANCE,
    }
}

fn pad_case(rng: &mut ChaCha8Rng) -> Case {
    let border = random_border(rng);
    let shape = random_shape(rng);
    Case {
        vars: vec![uniform(rng, numel(shape))],
        forward: Box::new(move |v| smooth(basic::pad_replicate(&tensor(shape, &v[0])?, border))),
        backward: Box::new(move |_, g| {
            Ok(vec![
                basic::pad_replicate_backward(g, shape, border)?.into_vec()
            ])
        }),
        tolerance: DEFAULT_TOLERANCE,
    }
}

fn filter_case(rng: &mut ChaCha8Rng, high: bool) -> Case {
    let config = FilterConfig {
        lowpass_size: rng.random_range(1..=6),
    };
    let [n, c, _, _] = random_shape(rng);
    let shape = [n, c, rng.random_range(3..=8), rng.random_range(3..=8)];
    Case {
        vars: vec![uniform(rng, numel(shape))],
        forward: Box::new(move |v| {
            let x = tensor(shape, &v[0])?;
            smooth(if high {
                filters::highpass(&x, &config)
            } else {
                filters::box_lowpass(&x, &config)
            })
        }),
        backward: Box::new(move |_, g| {
            Ok(vec![if high {
                filters::highpass_backward(g, &config)
            } else {
                filters::box_lowpass_backward(g, &config)
            }
            .into_vec()])
        }),
        tolerance: DEFAULT_TOLERANCE,
    }
}

fn interleave_case(rng: &mut ChaCha8Rng) -> Case {
    let [n, _, h, w] = random_shape(rng);
    let base = rng.random_range(1..=6);
    let inserted = rng.random_range(0..=3);
    let spec = InterleaveSpec::default_for(base, inserted);
    let (bs, is) = ([n, base, h, w], [n, inserted, h, w]);
    let s2 = spec.clone();
    Case {
        vars: vec![uniform(rng, numel(bs)), uniform(rng, numel(is))],
        forward: Box::new(move |v| {
            smooth(filters::interleave(
                &tensor(bs, &v[0])?,
                &tensor(is, &v[1])?,
                &spec,
            )?)
        }),
        backward: Box::new(move |_, g| {
            let (gb, gi) = filters::interleave_backward(g, base, &s2)?;
            Ok(vec![gb.into_vec(), gi.into_vec()])
        }),
        tolerance: DEFAULT_TOLERANCE,
    }
}

fn loss_case(rng: &mut ChaCha8Rng) -> Case {
    let shape = random_shape(rng);
    Case {
        vars: vec![uniform(rng, numel(shape)), uniform(rng, numel(shape))],
        forward: Box::new(move |v| {
            let l = network::loss_mse(&tensor(shape, &v[0])?, &tensor(shape, &v[1])?)?;
            smooth(Tensor::full([1, 1, 1, 1], l))
        }),
        backward: Box::new(move |v, g| {
            let scale = g.data()[0];
            let d = network::loss_mse_grad(&tensor(shape, &v[0])?, &tensor(shape, &v[1])?)?
                .map(|x| x * scale)
                .into_vec();
            let neg = d.iter().map(|x| -x).collect();
            Ok(vec![d, neg])
        }),
        tolerance: DEFAULT_TOLERANCE,
    }
}

/// The end-to-end configuration used by the network cases: S=4, s=2, h=4,
/// f=2, one residual block, 8 feature channels.
pub fn tiny_network_config(variant: Variant) -> NetworkConfig {
    let mut c = NetworkConfig::new(4, 2)
        .with_features(8)
        .with_variant(variant);
    c.scale_factor = 2;
    c.num_blocks = 1;
    c
}

fn load_params(base: &NetworkParams<f64>, v: &Vars) -> NetworkParams<f64> {
    let mut p = base.clone();
    for ((_, dst), src) in p.tensors_mut().into_iter().zip(v) {
        dst.copy_from_slice(src);
    }
    p
}

fn activation_pattern(cache: &network::ForwardCache<f64>) -> Vec<bool> {
    cache
        .keys()
        .filter(|k| *k == "a0" || *k == "a1" || k.ends_with(".pre"))
        .filter_map(|k| cache.get(k).ok())
        .flat_map(|t| t.data().iter().map(|&a| a > 0.0).collect::<Vec<_>>())
        .collect()
}

fn network_case(rng: &mut ChaCha8Rng, variant: Variant, fault: bool) -> Result<Case> {
    let config = tiny_network_config(variant);
    let (h, f) = (4, config.scale_factor);
    let mut base = network::init_network::<f64>(&config, rng.random())?;
    for (name, t) in base.tensors_mut() {
        if name.ends_with(".bias") {
            t.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
    }
    let y = Tensor::from_vec(
        [1, config.hsi_bands, h, h],
        (0..config.hsi_bands * h * h)
            .map(|_| rng.random_range(0.0..1.0))
            .collect(),
    )?;
    let z = Tensor::from_vec(
        [1, config.msi_bands, h * f, h * f],
        (0..config.msi_bands * h * h * f * f)
            .map(|_| rng.random_range(0.0..1.0))
            .collect(),
    )?;
    let vars: Vec<Vec<f64>> = base
        .tensors()
        .into_iter()
        .map(|(_, _, d)| d.to_vec())
        .collect();
    let (b2, c2, y2, z2) = (base.clone(), config.clone(), y.clone(), z.clone());
    Ok(Case {
        vars,
        forward: Box::new(move |v| {
            let out = network::forward(&load_params(&base, v), &config, &y, &z, true)?;
            let pattern = activation_pattern(out.cache.as_ref().expect("retained"));
            Ok((out.output, pattern))
        }),
        backward: Box::new(move |v, g| {
            let params = load_params(&b2, v);
            let out = network::forward(&params, &c2, &y2, &z2, true)?;
            let grads =
                network::backward_from(&params, &c2, out.cache.as_ref().expect("retained"), g)?;
            Ok(grads
                .tensors()
                .into_iter()
                .map(|(name, _, d)| faulty(d.to_vec(), fault && name.ends_with(".weight")))
                .collect())
        }),
        tolerance: DEFAULT_TOLERANCE,
    })
}

fn build_case(op: &str, seed: u64, fault: bool) -> Result<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match op {
        "conv2d" => conv_case(&mut rng, fault),
        "transposed_conv2d" => transposed_case(&mut rng, false, fault),
        "grouped_transposed_conv2d" => transposed_case(&mut rng, true, fault),
        "relu" => relu_case(&mut rng),
        "add" => add_case(&mut rng),
        "concat_channels" => concat_case(&mut rng),
        "decimate" => decimate_case(&mut rng),
        "crop_border" => crop_case(&mut rng),
        "pad_replicate" => pad_case(&mut rng),
        "box_lowpass" => filter_case(&mut rng, false),
        "highpass" => filter_case(&mut rng, true),
        "interleave" => interleave_case(&mut rng),
        "loss_mse" => loss_case(&mut rng),
        "network_full" => network_case(&mut rng, Variant::Full, fault)?,
        "network_no_highpass" => network_case(&mut rng, Variant::NoHighpass, fault)?,
        "network_single_scale" => network_case(&mut rng, Variant::SingleScale, fault)?,
        other => {
            return Err(Error::Validation(format!(
                "unknown operator {other:?}; registered: {}",
                REGISTERED_OPS.join(", ")
            )))
        }
    })
}

fn project(out: &Tensor<f64>, p: &Tensor<f64>) -> f64 {
    out.data().iter().zip(p.data()).map(|(a, b)| a * b).sum()
}

/// Checks the backward pass of `op` on shapes and values drawn from `seed`.
pub fn finite_difference_check(
    op: &str,
    seed: u64,
    options: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let case = build_case(op, seed, options.inject_fault)?;
    let (out, pattern) = (case.forward)(&case.vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let p = Tensor::from_vec(out.shape(), uniform(&mut rng, out.len()))?;
    let analytic = (case.backward)(&case.vars, &p)?;
    if analytic.len() != case.vars.len()
        || analytic
            .iter()
            .zip(&case.vars)
            .any(|(a, v)| a.len() != v.len())
    {
        return Err(Error::Shape(format!(
            "{op}: backward returned mismatched gradient shapes"
        )));
    }

    // Rounding in the projected output, scaled by 1/(2ε), bounds how small a
    // gradient central differences can resolve; below it errors are judged
    // against that noise level instead of the gradient itself.
    let magnitude: f64 = out
        .data()
        .iter()
        .zip(p.data())
        .map(|(a, b)| (a * b).abs())
        .sum();
    let mut vars = case.vars.clone();
    let (mut max_rel, mut checked, mut skipped) = (0.0f64, 0usize, 0usize);
    for vi in 0..vars.len() {
        for i in 0..vars[vi].len() {
            let x0 = vars[vi][i];
            let mut numeric = None;
            let mut eps = options.epsilon;
            for _ in 0..KINK_RETRIES {
                vars[vi][i] = x0 + eps;
                let (plus, pat_plus) = (case.forward)(&vars)?;
                vars[vi][i] = x0 - eps;
                let (minus, pat_minus) = (case.forward)(&vars)?;
                vars[vi][i] = x0;
                if pat_plus == pattern && pat_minus == pattern {
                    let d = (project(&plus, &p) - project(&minus, &p)) / (2.0 * eps);
                    numeric = Some((d, f64::EPSILON * magnitude / (2.0 * eps)));
                    break;
                }
                eps /= 10.0;
            }
            let Some((numeric, noise)) = numeric else {
                skipped += 1;
                continue;
            };
            let a = analytic[vi][i];
            let floor = REL_FLOOR.max(noise / case.tolerance);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        op_name: op.to_string(),
        max_rel_error: max_rel,
        tolerance: case.tolerance,
        passed: max_rel <= case.tolerance && checked > 0,
        checked,
        skipped,
    })
}

/// Every registered operator, each on its own seed-derived sample.
pub fn check_all(seed: u64, options: &GradCheckOptions) -> Result<Vec<GradCheckReport>> {
    REGISTERED_OPS
        .iter()
        .enumerate()
        .map(|(i, op)| finite_difference_check(op, seed.wrapping_add(i as u64), options))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_passes_and_fault_fails() {
        let ok = finite_difference_check("conv2d", 3, &GradCheckOptions::default()).unwrap();
        assert!(ok.passed, "{}", ok.row());
        let bad = GradCheckOptions {
            inject_fault: true,
            ..Default::default()
        };
        let r = finite_difference_check("conv2d", 3, &bad).unwrap();
        assert!(!r.passed);
        assert!(r.max_rel_error > 5e-3);
    }

    #[test]
    fn relu_uses_tight_tolerance() {
        let r = finite_difference_check("relu", 1, &GradCheckOptions::default()).unwrap();
        assert_eq!(r.tolerance, RELU_TOLERANCE);
        assert!(r.passed, "{}", r.row());
        assert_eq!(r.skipped, 0);
    }

    #[test]
    fn unknown_op_rejected() {
        assert!(
            finite_difference_check("nope", 0, &GradCheckOptions::default())
                .unwrap_err()
                .is_validation()
        );
    }

    #[test]
    fn every_shape_op_passes() {
        for op in REGISTERED_OPS.iter().filter(|o| !o.starts_with("network")) {
            let r = finite_difference_check(op, 11, &GradCheckOptions::default()).unwrap();
            assert!(r.passed, "{}", r.row());
        }
    }

    #[test]
    fn network_variants_pass() {
        for op in [
            "network_full",
            "network_no_highpass",
            "network_single_scale",
        ] {
            let r = finite_difference_check(op, 5, &GradCheckOptions::default()).unwrap();
            eprintln!("{}", r.row());
            assert!(r.passed, "{}", r.row());
        }
    }
}
