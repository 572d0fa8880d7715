//! The two-branch fusion network.
//!
//! The output is `o = y_up + e`: `y_up` is the LR-HSI upsampled by a
//! per-band transposed convolution that starts out as bilinear
//! interpolation, and `e` is a residual predicted from high-pass details of
//! both inputs at two scales. Training minimizes the mean squared error
//! between `o` and the reference HR-HSI.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ensure, Error, Result};
use crate::filters::{self, FilterConfig, InterleaveSpec};
use crate::ops::{self, Border, ConvParams};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Variant {
    /// High-pass details at both scales.
    #[default]
    Full,
    /// Same graph fed with the raw images instead of their high-pass parts.
    NoHighpass,
    /// Only the full-resolution scale: the low-scale stack is replaced by
    /// upsampled HSI detail lifted to feature width.
    SingleScale,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoHighpass, Variant::SingleScale];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoHighpass => "no_highpass",
            Variant::SingleScale => "single_scale",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "unknown variant {s:?} (expected full, no_highpass or single_scale)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub hsi_bands: usize,
    pub msi_bands: usize,
    pub scale_factor: usize,
    pub feature_channels: usize,
    pub num_blocks: usize,
    pub conv_kernel: usize,
    /// Kernel of the learned feature upsampler between the two scales.
    pub upsample_kernel: usize,
    pub variant: Variant,
    /// Slots of the MSI detail bands in the low-scale stack.
    pub c0_interleave: InterleaveSpec,
    /// Slots of the MSI detail bands in the high-scale stack.
    pub c1_interleave: InterleaveSpec,
    pub filter: FilterConfig,
}

impl NetworkConfig {
    /// Defaults: ×4, 64 features, 6 residual blocks, 3×3 convs, 6×6 upsampler.
    pub fn new(hsi_bands: usize, msi_bands: usize) -> Self {
        Self {
            hsi_bands,
            msi_bands,
            scale_factor: 4,
            feature_channels: 64,
            num_blocks: 6,
            conv_kernel: 3,
            upsample_kernel: 6,
            variant: Variant::Full,
            c0_interleave: InterleaveSpec::default_for(hsi_bands, msi_bands),
            c1_interleave: InterleaveSpec::default_for(64, msi_bands),
            filter: FilterConfig::default(),
        }
    }

    /// Changes the feature width and re-derives the default high-scale interleave.
    pub fn with_features(mut self, feature_channels: usize) -> Self {
        self.feature_channels = feature_channels;
        self.c1_interleave = InterleaveSpec::default_for(feature_channels, self.msi_bands);
        self
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.hsi_bands > 0, Validation, "hsi_bands must be positive");
        ensure!(
            self.scale_factor >= 1,
            Validation,
            "scale_factor must be ≥ 1"
        );
        ensure!(
            self.feature_channels > 0,
            Validation,
            "feature_channels must be positive"
        );
        ensure!(
            self.conv_kernel % 2 == 1,
            Validation,
            "conv_kernel must be odd to preserve size, got {}",
            self.conv_kernel
        );
        ensure!(
            self.upsample_kernel >= self.scale_factor,
            Validation,
            "upsample_kernel {} is smaller than scale_factor {}",
            self.upsample_kernel,
            self.scale_factor
        );
        self.filter.validate()?;
        self.c0_interleave
            .validate(self.hsi_bands, self.msi_bands)?;
        self.c1_interleave
            .validate(self.feature_channels, self.msi_bands)?;
        Ok(())
    }

    fn same_padding(&self) -> usize {
        self.conv_kernel / 2
    }

    fn detail_crop(&self) -> Border {
        Border::symmetric(self.upsample_kernel - self.scale_factor)
    }
}

/// Kernel size of the bilinear per-band upsampler for factor `f`.
pub fn bilinear_kernel_size(f: usize) -> usize {
    2 * f - f % 2
}

/// Per-tap weights of the 1-D bilinear kernel for factor `f`.
pub fn bilinear_taps(f: usize) -> Vec<f64> {
    let k = bilinear_kernel_size(f);
    let centre = (k - 1) as f64 / 2.0;
    (0..k)
        .map(|x| 1.0 - (x as f64 - centre).abs() / f as f64)
        .collect()
}

/// The input is replicate-padded by one pixel, so after the transposed
/// convolution this many pixels come off each side.
fn bilinear_crop(f: usize) -> Border {
    Border::uniform(f + (bilinear_kernel_size(f) - f) / 2)
}

/// Ordered, named convolution layers. Gradients and optimizer moments use
/// the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    layers: Vec<(String, ConvParams<T>)>,
}

impl<T: Real> NetworkParams<T> {
    pub fn from_layers(layers: Vec<(String, ConvParams<T>)>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[(String, ConvParams<T>)] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Result<&ConvParams<T>> {
        self.layers
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Validation(format!("network has no layer {name:?}")))
    }

    pub fn layer_mut(&mut self, name: &str) -> Result<&mut ConvParams<T>> {
        self.layers
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Validation(format!("network has no layer {name:?}")))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|(n, p)| (n.clone(), p.zeros_like()))
                .collect(),
        }
    }

    /// Flat parameter tensors as `(name, shape, values)`, weights before biases.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (name, p) in &self.layers {
            out.push((
                format!("{name}.weight"),
                p.weight.shape().to_vec(),
                p.weight.data(),
            ));
            if p.has_bias() {
                out.push((format!("{name}.bias"), vec![p.bias.len()], &p.bias[..]));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (name, p) in &mut self.layers {
            out.push((format!("{name}.weight"), p.weight.data_mut()));
            if !p.bias.is_empty() {
                out.push((format!("{name}.bias"), &mut p.bias[..]));
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            layers: self
                .layers
                .iter()
                .map(|(n, p)| {
                    (
                        n.clone(),
                        ConvParams {
                            weight: p.weight.cast(),
                            bias: p.bias.iter().map(|b| U::of_f64(b.as_f64())).collect(),
                            stride: p.stride,
                            padding: p.padding,
                            groups: p.groups,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(_, p)| p.weight.is_finite() && p.bias.iter().all(|b| b.is_finite()))
    }
}

/// Exact number of learnable scalars.
pub fn count_parameters<T: Real>(params: &NetworkParams<T>) -> usize {
    params.layers.iter().map(|(_, p)| p.num_parameters()).sum()
}

struct LayerSpec {
    name: String,
    /// Conv: (out, in/groups); transposed: (in, out/groups).
    shape: [usize; 4],
    bias: bool,
    stride: usize,
    padding: usize,
    groups: usize,
    transposed: bool,
    bilinear: bool,
}

fn layer_specs(config: &NetworkConfig) -> Vec<LayerSpec> {
    let s_hsi = config.hsi_bands;
    let s_msi = config.msi_bands;
    let feat = config.feature_channels;
    let k = config.conv_kernel;
    let pad = config.same_padding();
    let f = config.scale_factor;
    let conv = |name: String, out: usize, inp: usize| LayerSpec {
        name,
        shape: [out, inp, k, k],
        bias: true,
        stride: 1,
        padding: pad,
        groups: 1,
        transposed: false,
        bilinear: false,
    };
    let bilinear_up = |name: &str| {
        let kb = bilinear_kernel_size(f);
        LayerSpec {
            name: name.to_string(),
            shape: [s_hsi, 1, kb, kb],
            bias: false,
            stride: f,
            padding: 0,
            groups: s_hsi,
            transposed: true,
            bilinear: true,
        }
    };

    let mut specs = Vec::new();
    match config.variant {
        Variant::Full | Variant::NoHighpass => {
            specs.push(conv("c0_conv".into(), feat, s_hsi + s_msi));
            specs.push(LayerSpec {
                name: "detail_up".into(),
                shape: [feat, feat, config.upsample_kernel, config.upsample_kernel],
                bias: true,
                stride: f,
                padding: 0,
                groups: 1,
                transposed: true,
                bilinear: false,
            });
        }
        Variant::SingleScale => {
            specs.push(bilinear_up("hp_up"));
            specs.push(conv("lift_conv".into(), feat, s_hsi));
        }
    }
    specs.push(conv("c1_conv".into(), feat, feat + s_msi));
    for b in 0..config.num_blocks {
        specs.push(conv(format!("block{b}.conv1"), feat, feat));
        specs.push(conv(format!("block{b}.conv2"), feat, feat));
    }
    specs.push(conv("tail_conv".into(), s_hsi, feat));
    specs.push(bilinear_up("spectral_up"));
    specs
}

/// He-normal weights, zero biases, bilinear weights for the per-band upsamplers.
pub fn init_network<T: Real>(config: &NetworkConfig, seed: u64) -> Result<NetworkParams<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let taps = bilinear_taps(config.scale_factor);
    let layers = layer_specs(config)
        .into_iter()
        .map(|spec| {
            let weight = if spec.bilinear {
                Tensor::from_fn(spec.shape, |[_, _, i, j]| T::of_f64(taps[i] * taps[j]))
            } else {
                // Fan-in is the number of inputs feeding one output: in
                // channels (per group) times the kernel area. For the
                // transposed layer the leading axis is the input side.
                let [a, b, kh, kw] = spec.shape;
                let fan_in = if spec.transposed { a } else { b } * kh * kw;
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                Tensor::from_fn(spec.shape, |_| T::of_f64(normal.sample(&mut rng)))
            };
            let out_channels = if spec.transposed {
                spec.shape[1] * spec.groups
            } else {
                spec.shape[0]
            };
            let bias = if spec.bias {
                vec![T::zero(); out_channels]
            } else {
                Vec::new()
            };
            let params =
                ConvParams::new(weight, bias, spec.stride, spec.padding).with_groups(spec.groups);
            (spec.name, params)
        })
        .collect();
    Ok(NetworkParams { layers })
}

/// Checks that `params` has exactly the layers and shapes `config` implies.
pub fn check_compatible<T: Real>(params: &NetworkParams<T>, config: &NetworkConfig) -> Result<()> {
    let specs = layer_specs(config);
    ensure!(
        specs.len() == params.layers.len(),
        Validation,
        "parameters have {} layers, configuration ({} variant, {} blocks) needs {}",
        params.layers.len(),
        config.variant,
        config.num_blocks,
        specs.len()
    );
    for (spec, (name, p)) in specs.iter().zip(&params.layers) {
        ensure!(
            spec.name == *name && spec.shape == p.weight.shape(),
            Validation,
            "layer {name} has weight shape {:?}; configuration (hsi_bands {}, msi_bands {}) expects {} {:?}",
            p.weight.shape(),
            config.hsi_bands,
            config.msi_bands,
            spec.name,
            spec.shape
        );
    }
    Ok(())
}

/// Intermediate activations retained for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardCache<T> {
    entries: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ForwardCache<T> {
    fn put(&mut self, key: impl Into<String>, t: &Tensor<T>) {
        self.entries.insert(key.into(), t.clone());
    }

    pub fn get(&self, key: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(key)
            .ok_or_else(|| Error::MissingCache(key.to_string()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    /// Fused estimate `o = y_up + e`.
    pub output: Tensor<T>,
    /// Learned residual `e`.
    pub residual: Tensor<T>,
    /// Spectral branch `y_up`.
    pub upsampled: Tensor<T>,
    pub cache: Option<ForwardCache<T>>,
}

/// Per-band upsampler: replicate pad, grouped transposed conv, crop.
fn bilinear_branch<T: Real>(
    input: &Tensor<T>,
    layer: &ConvParams<T>,
    factor: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let padded = ops::pad_replicate(input, Border::uniform(1));
    let raw = ops::transposed_conv2d(&padded, layer)?;
    let out = ops::crop_border(&raw, bilinear_crop(factor))?;
    Ok((padded, out))
}

fn bilinear_branch_grads<T: Real>(
    padded: &Tensor<T>,
    layer: &ConvParams<T>,
    factor: usize,
    grad_out: &Tensor<T>,
) -> Result<ConvParams<T>> {
    let [n, c, h, w] = padded.shape();
    let k = layer.weight.height();
    let raw_shape = [n, c, (h - 1) * factor + k, (w - 1) * factor + k];
    let d_raw = ops::crop_backward(grad_out, raw_shape, bilinear_crop(factor))?;
    Ok(ops::transposed_conv2d_backward(padded, layer, &d_raw)?.1)
}

/// Runs the network on `y` (N×S×h×w) and `z` (N×s×fh×fw).
pub fn forward<T: Real>(
    params: &NetworkParams<T>,
    config: &NetworkConfig,
    y: &Tensor<T>,
    z: &Tensor<T>,
    retain: bool,
) -> Result<ForwardOutput<T>> {
    config.validate()?;
    let f = config.scale_factor;
    let [n, s_hsi, h, w] = y.shape();
    ensure!(
        s_hsi == config.hsi_bands,
        Shape,
        "LR-HSI has {s_hsi} bands, network expects {}",
        config.hsi_bands
    );
    z.check_shape([n, config.msi_bands, h * f, w * f], "HR-MSI")?;

    let mut cache = ForwardCache::default();
    let mut keep = |key: &str, t: &Tensor<T>| {
        if retain {
            cache.put(key, t);
        }
    };

    let highpass = config.variant != Variant::NoHighpass;
    let detail = |img: &Tensor<T>| {
        if highpass {
            filters::highpass(img, &config.filter)
        } else {
            img.clone()
        }
    };
    let y_hp = detail(y);
    let z_hp = detail(z);

    let u = match config.variant {
        Variant::Full | Variant::NoHighpass => {
            let z_hp_d = ops::decimate(&z_hp, f)?;
            let c0 = filters::build_c0(&y_hp, &z_hp_d, &config.c0_interleave)?;
            let a0 = ops::conv2d(&c0, params.layer("c0_conv")?)?;
            let t = ops::relu(&a0);
            let raw = ops::transposed_conv2d(&t, params.layer("detail_up")?)?;
            keep("c0", &c0);
            keep("a0", &a0);
            keep("t", &t);
            ops::crop_border(&raw, config.detail_crop())?
        }
        Variant::SingleScale => {
            let (padded, v) = bilinear_branch(&y_hp, params.layer("hp_up")?, f)?;
            keep("hp_pad", &padded);
            keep("hp_up", &v);
            ops::conv2d(&v, params.layer("lift_conv")?)?
        }
    };

    let c1 = filters::build_c1(&u, &z_hp, &config.c1_interleave)?;
    let a1 = ops::conv2d(&c1, params.layer("c1_conv")?)?;
    let mut r = ops::relu(&a1);
    keep("c1", &c1);
    keep("a1", &a1);
    for b in 0..config.num_blocks {
        let pre = ops::conv2d(&r, params.layer(&format!("block{b}.conv1"))?)?;
        let mid = ops::relu(&pre);
        let out = ops::conv2d(&mid, params.layer(&format!("block{b}.conv2"))?)?;
        keep(&format!("block{b}.in"), &r);
        keep(&format!("block{b}.pre"), &pre);
        keep(&format!("block{b}.mid"), &mid);
        r = ops::add(&[&r, &out])?;
    }
    keep("features", &r);
    let residual = ops::conv2d(&r, params.layer("tail_conv")?)?;

    let (y_pad, upsampled) = bilinear_branch(y, params.layer("spectral_up")?, f)?;
    keep("y_pad", &y_pad);
    let output = ops::add(&[&upsampled, &residual])?;
    keep("output", &output);

    Ok(ForwardOutput {
        output,
        residual,
        upsampled,
        cache: retain.then_some(cache),
    })
}

/// Mean squared error over all elements, accumulated in f64.
pub fn loss_mse<T: Real>(output: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    target.check_shape(output.shape(), "loss target")?;
    ensure!(!output.is_empty(), Shape, "loss of an empty tensor");
    let sum: f64 = output
        .data()
        .iter()
        .zip(target.data())
        .map(|(o, x)| {
            let d = o.as_f64() - x.as_f64();
            d * d
        })
        .sum();
    Ok(sum / output.len() as f64)
}

/// Gradient of [`loss_mse`] with respect to `output`.
pub fn loss_mse_grad<T: Real>(output: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    target.check_shape(output.shape(), "loss target")?;
    let scale = T::of_f64(2.0 / output.len() as f64);
    let data = output
        .data()
        .iter()
        .zip(target.data())
        .map(|(&o, &x)| (o - x) * scale)
        .collect();
    Tensor::from_vec(output.shape(), data)
}

/// Gradient of `loss_mse(forward(..), target)` with respect to every parameter.
pub fn backward<T: Real>(
    params: &NetworkParams<T>,
    config: &NetworkConfig,
    cache: &ForwardCache<T>,
    target: &Tensor<T>,
) -> Result<NetworkParams<T>> {
    let output = cache.get("output")?;
    let d_out = loss_mse_grad(output, target)?;
    backward_from(params, config, cache, &d_out)
}

/// Back-propagates an arbitrary output gradient.
pub fn backward_from<T: Real>(
    params: &NetworkParams<T>,
    config: &NetworkConfig,
    cache: &ForwardCache<T>,
    d_out: &Tensor<T>,
) -> Result<NetworkParams<T>> {
    let f = config.scale_factor;
    let mut grads = params.zeros_like();

    *grads.layer_mut("spectral_up")? =
        bilinear_branch_grads(cache.get("y_pad")?, params.layer("spectral_up")?, f, d_out)?;

    let features = cache.get("features")?;
    let (mut d_r, g) = ops::conv2d_backward(features, params.layer("tail_conv")?, d_out)?;
    *grads.layer_mut("tail_conv")? = g;

    for b in (0..config.num_blocks).rev() {
        let conv1 = format!("block{b}.conv1");
        let conv2 = format!("block{b}.conv2");
        let (d_mid, g2) = ops::conv2d_backward(
            cache.get(&format!("block{b}.mid"))?,
            params.layer(&conv2)?,
            &d_r,
        )?;
        let d_pre = ops::relu_backward(cache.get(&format!("block{b}.pre"))?, &d_mid)?;
        let (d_in, g1) = ops::conv2d_backward(
            cache.get(&format!("block{b}.in"))?,
            params.layer(&conv1)?,
            &d_pre,
        )?;
        *grads.layer_mut(&conv1)? = g1;
        *grads.layer_mut(&conv2)? = g2;
        d_r = ops::add(&[&d_r, &d_in])?;
    }

    let d_a1 = ops::relu_backward(cache.get("a1")?, &d_r)?;
    let (d_c1, g) = ops::conv2d_backward(cache.get("c1")?, params.layer("c1_conv")?, &d_a1)?;
    *grads.layer_mut("c1_conv")? = g;
    let (d_u, _) =
        filters::interleave_backward(&d_c1, config.feature_channels, &config.c1_interleave)?;

    match config.variant {
        Variant::Full | Variant::NoHighpass => {
            let t = cache.get("t")?;
            let up = params.layer("detail_up")?;
            let k = up.weight.height();
            let [n, c, h, w] = t.shape();
            let raw_shape = [n, up.weight.channels(), (h - 1) * f + k, (w - 1) * f + k];
            debug_assert_eq!(c, up.weight.batch());
            let d_raw = ops::crop_backward(&d_u, raw_shape, config.detail_crop())?;
            let (d_t, g) = ops::transposed_conv2d_backward(t, up, &d_raw)?;
            *grads.layer_mut("detail_up")? = g;
            let d_a0 = ops::relu_backward(cache.get("a0")?, &d_t)?;
            let (_, g) = ops::conv2d_backward(cache.get("c0")?, params.layer("c0_conv")?, &d_a0)?;
            *grads.layer_mut("c0_conv")? = g;
        }
        Variant::SingleScale => {
            let (d_v, g) =
                ops::conv2d_backward(cache.get("hp_up")?, params.layer("lift_conv")?, &d_u)?;
            *grads.layer_mut("lift_conv")? = g;
            *grads.layer_mut("hp_up")? =
                bilinear_branch_grads(cache.get("hp_pad")?, params.layer("hp_up")?, f, &d_v)?;
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny(variant: Variant) -> NetworkConfig {
        let mut c = NetworkConfig::new(4, 2)
            .with_features(8)
            .with_variant(variant);
        c.scale_factor = 2;
        c.num_blocks = 1;
        c
    }

    fn random(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn default_parameter_count_matches_layer_sum() {
        let cfg = NetworkConfig::new(31, 3);
        let p = init_network::<f32>(&cfg, 0).unwrap();
        let (s, m, k) = (31usize, 3usize, 64usize);
        let conv = |i: usize, o: usize| o * i * 9 + o;
        let expected = conv(s + m, k)
            + (k * k * 36 + k)
            + conv(k + m, k)
            + 12 * conv(k, k)
            + conv(k, s)
            + s * 8 * 8;
        assert_eq!(count_parameters(&p), expected);
        let nh = init_network::<f32>(&cfg.clone().with_variant(Variant::NoHighpass), 0).unwrap();
        assert_eq!(count_parameters(&nh), expected);
    }

    #[test]
    fn single_conv_count() {
        let p = NetworkParams::from_layers(vec![(
            "c".into(),
            ConvParams::new(Tensor::<f32>::zeros([1, 1, 3, 3]), vec![0.0], 1, 1),
        )]);
        assert_eq!(count_parameters(&p), 10);
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = tiny(Variant::Full);
        let a = init_network::<f32>(&cfg, 42).unwrap();
        let b = init_network::<f32>(&cfg, 42).unwrap();
        let c = init_network::<f32>(&cfg, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn output_shape_for_every_variant() {
        for v in Variant::ALL {
            let mut cfg = NetworkConfig::new(5, 3).with_features(6).with_variant(v);
            cfg.num_blocks = 1;
            let p = init_network::<f32>(&cfg, 1).unwrap();
            let y = random([2, 5, 4, 4], 1).cast();
            let z = random([2, 3, 16, 16], 2).cast();
            let out = forward(&p, &cfg, &y, &z, false).unwrap();
            assert_eq!(out.output.shape(), [2, 5, 16, 16], "{v}");
        }
    }

    #[test]
    fn zero_inputs_give_zero_output() {
        let cfg = tiny(Variant::Full);
        let p = init_network::<f64>(&cfg, 3).unwrap();
        let out = forward(
            &p,
            &cfg,
            &Tensor::zeros([1, 4, 4, 4]),
            &Tensor::zeros([1, 2, 8, 8]),
            false,
        )
        .unwrap();
        assert!(out.output.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_inputs_leave_only_bias_driven_residual() {
        let cfg = tiny(Variant::Full);
        let mut p = init_network::<f64>(&cfg, 3).unwrap();
        let y = Tensor::full([1, 4, 4, 4], 0.4);
        let z = Tensor::full([1, 2, 8, 8], 0.7);
        // High-pass of constants is zero and biases are zero at init.
        let out = forward(&p, &cfg, &y, &z, false).unwrap();
        assert!(out.residual.data().iter().all(|&v| v == 0.0));
        // A changed input level cannot move e while details stay zero.
        p.layer_mut("tail_conv").unwrap().bias = vec![0.1, 0.2, 0.3, 0.4];
        let a = forward(&p, &cfg, &y, &z, false).unwrap().residual;
        let b = forward(&p, &cfg, &y.map(|v| v * 2.0), &z.map(|v| v * 0.5), false)
            .unwrap()
            .residual;
        assert_eq!(a, b);
        assert_eq!(a.at([0, 2, 3, 3]), 0.3);
    }

    #[test]
    fn zeroed_tail_leaves_spectral_branch() {
        let cfg = tiny(Variant::Full);
        let mut p = init_network::<f64>(&cfg, 5).unwrap();
        let tail = p.layer_mut("tail_conv").unwrap();
        *tail = tail.zeros_like();
        let out = forward(
            &p,
            &cfg,
            &random([1, 4, 4, 4], 7),
            &random([1, 2, 8, 8], 8),
            false,
        )
        .unwrap();
        assert!(out.residual.data().iter().all(|&v| v == 0.0));
        assert_eq!(out.output, out.upsampled);
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let cfg = tiny(Variant::Full);
        let p = init_network::<f32>(&cfg, 5).unwrap();
        let y = random([2, 4, 4, 4], 7).cast();
        let z = random([2, 2, 8, 8], 8).cast();
        let a = forward(&p, &cfg, &y, &z, false).unwrap().output;
        let b = forward(&p, &cfg, &y, &z, false).unwrap().output;
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_msi_rejected() {
        let cfg = tiny(Variant::Full);
        let p = init_network::<f32>(&cfg, 5).unwrap();
        let y = Tensor::zeros([1, 4, 4, 4]);
        assert!(forward(&p, &cfg, &y, &Tensor::zeros([1, 2, 9, 8]), false).is_err());
        assert!(forward(&p, &cfg, &y, &Tensor::zeros([1, 3, 8, 8]), false).is_err());
    }

    #[test]
    fn loss_values() {
        let x = random([1, 2, 3, 3], 1);
        assert_eq!(loss_mse(&x, &x).unwrap(), 0.0);
        assert!((loss_mse(&x.map(|v| v + 1.0), &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn backward_needs_cache_entries() {
        let cfg = tiny(Variant::Full);
        let p = init_network::<f64>(&cfg, 5).unwrap();
        let err = backward(
            &p,
            &cfg,
            &ForwardCache::default(),
            &Tensor::zeros([1, 4, 8, 8]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingCache(_)));
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let cfg = tiny(Variant::Full);
        let p = init_network::<f64>(&cfg, 5).unwrap();
        let out = forward(
            &p,
            &cfg,
            &random([1, 4, 4, 4], 7),
            &random([1, 2, 8, 8], 8),
            true,
        )
        .unwrap();
        let g = backward(&p, &cfg, out.cache.as_ref().unwrap(), &out.output).unwrap();
        assert!(g
            .tensors()
            .iter()
            .all(|(_, _, v)| v.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn check_compatible_names_band_counts() {
        let p = init_network::<f32>(&NetworkConfig::new(31, 3), 0).unwrap();
        let err = check_compatible(&p, &NetworkConfig::new(8, 3))
            .unwrap_err()
            .to_string();
        assert!(err.contains("hsi_bands 8"), "{err}");
        assert!(check_compatible(&p, &NetworkConfig::new(31, 3)).is_ok());
    }
}
