//! Cross-correlation and its adjoint (transposed convolution), both with
//! channel groups, lowered to im2col + GEMM.

use crate::error::{ensure, Result};
use crate::tensor::{Real, Tensor};

/// Weights and geometry of one convolution layer.
///
/// For [`conv2d`] the weight is laid out `(out, in / groups, kh, kw)`; for
/// [`transposed_conv2d`] it is `(in, out / groups, kh, kw)`, so one set of
/// parameters describes a convolution and its adjoint. `bias` is either empty
/// (no bias) or holds one value per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

/// Gradients with respect to a [`ConvParams`]: same layout, geometry copied.
pub type ConvGrads<T> = ConvParams<T>;

impl<T: Real> ConvParams<T> {
    pub fn new(weight: Tensor<T>, bias: Vec<T>, stride: usize, padding: usize) -> Self {
        Self {
            weight,
            bias,
            stride,
            padding,
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.height(), self.weight.width())
    }

    pub fn has_bias(&self) -> bool {
        !self.bias.is_empty()
    }

    pub fn num_parameters(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// All-zero parameters of identical layout.
    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Tensor::zeros(self.weight.shape()),
            bias: vec![T::zero(); self.bias.len()],
            stride: self.stride,
            padding: self.padding,
            groups: self.groups,
        }
    }

    fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel();
        ensure!(
            kh >= 1 && kw >= 1,
            Validation,
            "kernel must be at least 1×1"
        );
        ensure!(self.stride >= 1, Validation, "stride must be at least 1");
        ensure!(self.groups >= 1, Validation, "groups must be at least 1");
        Ok(())
    }

    /// Output channels when used as a convolution.
    fn conv_out_channels(&self) -> usize {
        self.weight.batch()
    }

    /// Output channels when used as a transposed convolution.
    fn transposed_out_channels(&self) -> usize {
        self.weight.channels() * self.groups
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }
    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Range of output columns `ox` whose source column `ox·stride + kj − pad`
/// lies inside `[0, width)`.
#[inline]
fn valid_cols(g: &Geometry, kj: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kj).div_ceil(g.stride);
    let limit = g.width + g.pad;
    let hi = if limit > kj {
        ((limit - kj - 1) / g.stride + 1).min(g.out_w)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unfold `channels` planes into a (C·kh·kw) × (out_h·out_w) matrix. Padding
/// positions read as zero.
fn im2col<T: Real>(src: &[T], g: &Geometry, cols: &mut [T]) {
    let n = g.cols();
    for c in 0..g.channels {
        let plane = &src[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &mut cols[((c * g.kh + ki) * g.kw + kj) * n..][..n];
                let (lo, hi) = valid_cols(g, kj);
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut row[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize || lo >= hi {
                        dst.fill(T::zero());
                        continue;
                    }
                    let line = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    let start = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        dst[lo..hi].copy_from_slice(&line[start..start + hi - lo]);
                    } else {
                        for (d, s) in dst[lo..hi]
                            .iter_mut()
                            .zip(line[start..].iter().step_by(g.stride))
                        {
                            *d = *s;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into planes.
fn col2im<T: Real>(cols: &[T], g: &Geometry, dst: &mut [T]) {
    let n = g.cols();
    for c in 0..g.channels {
        let plane = &mut dst[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &cols[((c * g.kh + ki) * g.kw + kj) * n..][..n];
                let (lo, hi) = valid_cols(g, kj);
                if lo >= hi {
                    continue;
                }
                let start = lo * g.stride + kj - g.pad;
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let src = &row[oy * g.out_w + lo..oy * g.out_w + hi];
                    if g.stride == 1 {
                        for (d, s) in line[start..start + hi - lo].iter_mut().zip(src) {
                            *d += *s;
                        }
                    } else {
                        for (d, s) in line[start..].iter_mut().step_by(g.stride).zip(src) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
}

fn conv_output_size(size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = size + 2 * pad;
    ensure!(
        padded >= k,
        Shape,
        "padded size {padded} is smaller than kernel {k}"
    );
    ensure!(
        (padded - k).is_multiple_of(stride),
        Shape,
        "output size ({size} + 2·{pad} − {k})/{stride} + 1 is not an integer"
    );
    Ok((padded - k) / stride + 1)
}

fn transposed_output_size(size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let raw = (size - 1) * stride + k;
    ensure!(
        raw > 2 * pad,
        Shape,
        "padding {pad} removes the whole transposed output"
    );
    Ok(raw - 2 * pad)
}

fn conv_geometry<T: Real>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Geometry> {
    params.validate()?;
    let [_, c, h, w] = input.shape();
    let (kh, kw) = params.kernel();
    ensure!(
        c.is_multiple_of(params.groups) && params.weight.batch().is_multiple_of(params.groups),
        Shape,
        "channels {c} → {} not divisible into {} groups",
        params.weight.batch(),
        params.groups
    );
    let cg = c / params.groups;
    ensure!(
        params.weight.channels() == cg,
        Shape,
        "conv weight expects {} input channels per group, input has {cg}",
        params.weight.channels()
    );
    ensure!(
        params.bias.is_empty() || params.bias.len() == params.conv_out_channels(),
        Shape,
        "bias length {} does not match {} output channels",
        params.bias.len(),
        params.conv_out_channels()
    );
    Ok(Geometry {
        channels: cg,
        height: h,
        width: w,
        kh,
        kw,
        stride: params.stride,
        pad: params.padding,
        out_h: conv_output_size(h, kh, params.stride, params.padding)?,
        out_w: conv_output_size(w, kw, params.stride, params.padding)?,
    })
}

/// Cross-correlation with zero padding (no kernel flip).
pub fn conv2d<T: Real>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    let g = conv_geometry(input, params)?;
    let n = input.batch();
    let k = params.conv_out_channels();
    let kg = k / params.groups;
    let (rows, ncols) = (g.rows(), g.cols());
    let mut out = Tensor::zeros([n, k, g.out_h, g.out_w]);
    let mut cols = vec![T::zero(); rows * ncols];
    let w = params.weight.data();
    let in_plane = g.height * g.width;
    for b in 0..n {
        let src = input.item(b);
        let dst = out.item_mut(b);
        for grp in 0..params.groups {
            im2col(&src[grp * g.channels * in_plane..], &g, &mut cols);
            T::gemm(
                kg,
                rows,
                ncols,
                T::one(),
                &w[grp * kg * rows..],
                (rows as isize, 1),
                &cols,
                (ncols as isize, 1),
                T::zero(),
                &mut dst[grp * kg * ncols..(grp + 1) * kg * ncols],
            );
        }
        if params.has_bias() {
            for (ch, &bias) in params.bias.iter().enumerate() {
                dst[ch * ncols..(ch + 1) * ncols]
                    .iter_mut()
                    .for_each(|v| *v += bias);
            }
        }
    }
    Ok(out)
}

fn bias_grad<T: Real>(grad_out: &Tensor<T>) -> Vec<T> {
    let mut g = vec![T::zero(); grad_out.channels()];
    for b in 0..grad_out.batch() {
        for (ch, acc) in g.iter_mut().enumerate() {
            *acc += grad_out.plane(b, ch).iter().copied().sum::<T>();
        }
    }
    g
}

/// Gradients of `Σ grad_out ⊙ conv2d(input, params)` with respect to the
/// input and every parameter.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, ConvGrads<T>)> {
    let g = conv_geometry(input, params)?;
    let n = input.batch();
    let k = params.conv_out_channels();
    let kg = k / params.groups;
    grad_out.check_shape([n, k, g.out_h, g.out_w], "conv2d grad_out")?;
    let (rows, ncols) = (g.rows(), g.cols());
    let in_plane = g.height * g.width;
    let w = params.weight.data();

    let mut grad_in = Tensor::zeros(input.shape());
    let mut grads = params.zeros_like();
    let mut cols = vec![T::zero(); rows * ncols];
    let mut gcols = vec![T::zero(); rows * ncols];
    for b in 0..n {
        let src = input.item(b);
        let go = grad_out.item(b);
        for grp in 0..params.groups {
            let go_g = &go[grp * kg * ncols..(grp + 1) * kg * ncols];
            im2col(&src[grp * g.channels * in_plane..], &g, &mut cols);
            // dW (kg × rows) += dY (kg × ncols) · colsᵀ
            T::gemm(
                kg,
                ncols,
                rows,
                T::one(),
                go_g,
                (ncols as isize, 1),
                &cols,
                (1, ncols as isize),
                T::one(),
                &mut grads.weight.data_mut()[grp * kg * rows..(grp + 1) * kg * rows],
            );
            // dcols (rows × ncols) = Wᵀ · dY
            T::gemm(
                rows,
                kg,
                ncols,
                T::one(),
                &w[grp * kg * rows..],
                (1, rows as isize),
                go_g,
                (ncols as isize, 1),
                T::zero(),
                &mut gcols,
            );
            col2im(
                &gcols,
                &g,
                &mut grad_in.item_mut(b)[grp * g.channels * in_plane..],
            );
        }
    }
    if params.has_bias() {
        grads.bias = bias_grad(grad_out);
    }
    Ok((grad_in, grads))
}

fn transposed_geometry<T: Real>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Geometry> {
    params.validate()?;
    let [_, c, h, w] = input.shape();
    let (kh, kw) = params.kernel();
    ensure!(
        params.weight.batch() == c,
        Shape,
        "transposed conv weight expects {} input channels, input has {c}",
        params.weight.batch()
    );
    ensure!(
        c % params.groups == 0,
        Shape,
        "{c} input channels not divisible into {} groups",
        params.groups
    );
    let cout = params.transposed_out_channels();
    ensure!(
        params.bias.is_empty() || params.bias.len() == cout,
        Shape,
        "bias length {} does not match {cout} output channels",
        params.bias.len()
    );
    ensure!(h >= 1 && w >= 1, Shape, "empty transposed conv input");
    // Geometry of the equivalent forward convolution: the output is the
    // "image" and the input is the column grid.
    Ok(Geometry {
        channels: params.weight.channels(),
        height: transposed_output_size(h, kh, params.stride, params.padding)?,
        width: transposed_output_size(w, kw, params.stride, params.padding)?,
        kh,
        kw,
        stride: params.stride,
        pad: params.padding,
        out_h: h,
        out_w: w,
    })
}

/// Transposed convolution (the adjoint of [`conv2d`] with the same weight).
/// Output size is `(H − 1)·stride + kh − 2·padding`; callers crop explicitly.
pub fn transposed_conv2d<T: Real>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    let g = transposed_geometry(input, params)?;
    let n = input.batch();
    let cin_g = input.channels() / params.groups;
    let cout = params.transposed_out_channels();
    let (rows, ncols) = (g.rows(), g.cols());
    let out_plane = g.height * g.width;
    let w = params.weight.data();
    let mut out = Tensor::zeros([n, cout, g.height, g.width]);
    let mut cols = vec![T::zero(); rows * ncols];
    for b in 0..n {
        let src = input.item(b);
        for grp in 0..params.groups {
            // cols (rows × ncols) = W_gᵀ · x_g
            T::gemm(
                rows,
                cin_g,
                ncols,
                T::one(),
                &w[grp * cin_g * rows..],
                (1, rows as isize),
                &src[grp * cin_g * ncols..],
                (ncols as isize, 1),
                T::zero(),
                &mut cols,
            );
            col2im(
                &cols,
                &g,
                &mut out.item_mut(b)[grp * g.channels * out_plane..],
            );
        }
        if params.has_bias() {
            let dst = out.item_mut(b);
            for (ch, &bias) in params.bias.iter().enumerate() {
                dst[ch * out_plane..(ch + 1) * out_plane]
                    .iter_mut()
                    .for_each(|v| *v += bias);
            }
        }
    }
    Ok(out)
}

pub fn transposed_conv2d_backward<T: Real>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, ConvGrads<T>)> {
    let g = transposed_geometry(input, params)?;
    let n = input.batch();
    let cin_g = input.channels() / params.groups;
    let cout = params.transposed_out_channels();
    grad_out.check_shape([n, cout, g.height, g.width], "transposed conv grad_out")?;
    let (rows, ncols) = (g.rows(), g.cols());
    let out_plane = g.height * g.width;
    let w = params.weight.data();

    let mut grad_in = Tensor::zeros(input.shape());
    let mut grads = params.zeros_like();
    let mut gcols = vec![T::zero(); rows * ncols];
    for b in 0..n {
        let src = input.item(b);
        let go = grad_out.item(b);
        for grp in 0..params.groups {
            im2col(&go[grp * g.channels * out_plane..], &g, &mut gcols);
            // dx_g (cin_g × ncols) = W_g · gcols
            T::gemm(
                cin_g,
                rows,
                ncols,
                T::one(),
                &w[grp * cin_g * rows..],
                (rows as isize, 1),
                &gcols,
                (ncols as isize, 1),
                T::zero(),
                &mut grad_in.item_mut(b)[grp * cin_g * ncols..(grp + 1) * cin_g * ncols],
            );
            // dW_g (cin_g × rows) += x_g · gcolsᵀ
            T::gemm(
                cin_g,
                ncols,
                rows,
                T::one(),
                &src[grp * cin_g * ncols..],
                (ncols as isize, 1),
                &gcols,
                (1, ncols as isize),
                T::one(),
                &mut grads.weight.data_mut()[grp * cin_g * rows..(grp + 1) * cin_g * rows],
            );
        }
    }
    if params.has_bias() {
        grads.bias = bias_grad(grad_out);
    }
    Ok((grad_in, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct nested-loop cross-correlation, groups = 1.
    fn reference_conv(x: &Tensor<f64>, p: &ConvParams<f64>) -> Tensor<f64> {
        let [n, c, h, w] = x.shape();
        let [k, _, kh, kw] = p.weight.shape();
        let (s, pad) = (p.stride, p.padding as isize);
        let oh = (h + 2 * p.padding - kh) / s + 1;
        let ow = (w + 2 * p.padding - kw) / s + 1;
        Tensor::from_fn([n, k, oh, ow], |[b, o, oy, ox]| {
            let mut acc = if p.has_bias() { p.bias[o] } else { 0.0 };
            for ci in 0..c {
                for i in 0..kh {
                    for j in 0..kw {
                        let iy = (oy * s + i) as isize - pad;
                        let ix = (ox * s + j) as isize - pad;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            acc += p.weight.at([o, ci, i, j])
                                * x.at([b, ci, iy as usize, ix as usize]);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn ones_kernel_counts_neighbours() {
        let x = Tensor::<f64>::full([1, 1, 3, 3], 1.0);
        let p = ConvParams::new(Tensor::full([1, 1, 3, 3], 1.0), vec![0.0], 1, 1);
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn identity_and_bias_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random([2, 1, 4, 5], &mut rng);
        let id = ConvParams::new(Tensor::full([1, 1, 1, 1], 1.0), vec![0.0], 1, 0);
        assert_eq!(conv2d(&x, &id).unwrap(), x);

        let bias_only = ConvParams::new(Tensor::zeros([3, 1, 3, 3]), vec![0.5; 3], 1, 1);
        let y = conv2d(&x, &bias_only).unwrap();
        assert_eq!(y.shape(), [2, 3, 4, 5]);
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn matches_nested_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let c = rng.random_range(1..=4);
            let k = rng.random_range(1..=3);
            let h = rng.random_range(3..=6);
            let w = rng.random_range(3..=6);
            let x = random([2, c, h, w], &mut rng);
            let weight = random([k, c, 3, 3], &mut rng);
            let p = ConvParams::new(weight, vec![0.0; k], 1, 0);
            let got = conv2d(&x, &p).unwrap();
            assert!(got.max_abs_diff(&reference_conv(&x, &p)) < 1e-12);
        }
    }

    #[test]
    fn strided_padded_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random([1, 2, 7, 7], &mut rng);
        let p = ConvParams::new(random([3, 2, 3, 3], &mut rng), vec![0.1, -0.2, 0.3], 2, 1);
        let got = conv2d(&x, &p).unwrap();
        assert_eq!(got.shape(), [1, 3, 4, 4]);
        assert!(got.max_abs_diff(&reference_conv(&x, &p)) < 1e-12);
    }

    #[test]
    fn rejects_non_integer_output_and_channel_mismatch() {
        let x = Tensor::<f64>::zeros([1, 1, 6, 6]);
        let p = ConvParams::new(Tensor::zeros([1, 1, 3, 3]), vec![], 2, 0);
        assert!(conv2d(&x, &p).is_err());
        let p = ConvParams::new(Tensor::zeros([1, 2, 3, 3]), vec![], 1, 0);
        assert!(conv2d(&x, &p).is_err());
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random([2, 3, 5, 5], &mut rng);
        let p = ConvParams::new(random([4, 3, 3, 3], &mut rng), vec![0.0; 4], 1, 1);
        let (gi, gp) = conv2d_backward(&x, &p, &Tensor::zeros([2, 4, 5, 5])).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
        assert!(gp.weight.data().iter().all(|&v| v == 0.0));
        assert!(gp.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_grad_is_channel_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random([2, 3, 5, 5], &mut rng);
        let p = ConvParams::new(random([4, 3, 3, 3], &mut rng), vec![0.0; 4], 1, 1);
        let go = random([2, 4, 5, 5], &mut rng);
        let (_, gp) = conv2d_backward(&x, &p, &go).unwrap();
        for ch in 0..4 {
            let s: f64 = (0..2).map(|b| go.plane(b, ch).iter().sum::<f64>()).sum();
            assert!((gp.bias[ch] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_single_tap_scatter() {
        let x = Tensor::from_vec([1, 1, 1, 1], vec![3.0]).unwrap();
        let w = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = ConvParams::new(w, vec![], 2, 0);
        let y = transposed_conv2d(&x, &p).unwrap();
        assert_eq!(y.data(), &[3.0, 6.0, 9.0, 12.0]);
    }

    #[test]
    fn transposed_raw_size() {
        let x = Tensor::<f32>::zeros([1, 2, 16, 16]);
        let p = ConvParams::new(Tensor::zeros([2, 2, 6, 6]), vec![0.0; 2], 4, 0);
        assert_eq!(transposed_conv2d(&x, &p).unwrap().shape(), [1, 2, 66, 66]);
    }

    #[test]
    fn transposed_is_adjoint_of_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(stride, groups) in &[(1, 1), (2, 1), (4, 1), (2, 2), (4, 3)] {
            let (c, k) = (3 * groups.max(1), 3 * groups.max(1));
            let x = random([2, c, 2 * stride + 6, stride + 6], &mut rng);
            let weight = random([k, c / groups, 6, 6], &mut rng);
            let p = ConvParams::new(weight, vec![], stride, 0).with_groups(groups);
            let y = conv2d(&x, &p);
            let Ok(y) = y else { continue };
            let probe = random(y.shape(), &mut rng);
            let lhs = y.dot(&probe);
            let back = transposed_conv2d(&probe, &p).unwrap();
            // Rows/cols the forward conv never reads come back as extra size.
            let rhs: f64 = Tensor::from_fn(x.shape(), |[b, ch, i, j]| {
                if i < back.height() && j < back.width() {
                    back.at([b, ch, i, j])
                } else {
                    0.0
                }
            })
            .dot(&x);
            assert!((lhs - rhs).abs() < 1e-10, "stride {stride} groups {groups}");
        }
    }

    #[test]
    fn grouped_conv_equals_blockwise_convs() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random([1, 4, 5, 5], &mut rng);
        let w = random([4, 2, 3, 3], &mut rng);
        let p = ConvParams::new(w.clone(), vec![0.0; 4], 1, 1).with_groups(2);
        let y = conv2d(&x, &p).unwrap();
        for grp in 0..2 {
            let xg = Tensor::from_fn([1, 2, 5, 5], |[b, c, i, j]| x.at([b, 2 * grp + c, i, j]));
            let wg = Tensor::from_fn([2, 2, 3, 3], |[o, c, i, j]| w.at([2 * grp + o, c, i, j]));
            let yg = reference_conv(&xg, &ConvParams::new(wg, vec![0.0; 2], 1, 1));
            for o in 0..2 {
                for (a, b) in y.plane(0, 2 * grp + o).iter().zip(yg.plane(0, o)) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
