//! Shape-manipulating and pointwise operators with their backward passes.

use crate::error::{ensure, Result};
use crate::tensor::{Real, Tensor};

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Masks `grad_out` by `input > 0`; the subgradient at 0 is 0.
pub fn relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.check_shape(input.shape(), "relu grad_out")?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Elementwise sum. The backward pass hands `grad_out` unchanged to every addend.
pub fn add<T: Real>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    ensure!(!inputs.is_empty(), Shape, "add needs at least one input");
    let mut out = inputs[0].clone();
    for t in &inputs[1..] {
        t.check_shape(out.shape(), "add")?;
        out.data_mut()
            .iter_mut()
            .zip(t.data())
            .for_each(|(a, &b)| *a += b);
    }
    Ok(out)
}

pub fn concat_channels<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    ensure!(!parts.is_empty(), Shape, "concat needs at least one part");
    let [n, _, h, w] = parts[0].shape();
    for p in parts {
        ensure!(
            p.batch() == n && p.height() == h && p.width() == w,
            Shape,
            "concat expects matching N, H, W; got {:?} and {:?}",
            parts[0].shape(),
            p.shape()
        );
    }
    let c: usize = parts.iter().map(|p| p.channels()).sum();
    let mut data = Vec::with_capacity(n * c * h * w);
    for b in 0..n {
        for p in parts {
            data.extend_from_slice(p.item(b));
        }
    }
    Tensor::from_vec([n, c, h, w], data)
}

/// Splits a channel-stacked gradient back into per-part gradients.
pub fn split_channels_backward<T: Real>(
    grad_out: &Tensor<T>,
    channels: &[usize],
) -> Result<Vec<Tensor<T>>> {
    let [n, c, h, w] = grad_out.shape();
    ensure!(
        channels.iter().sum::<usize>() == c,
        Shape,
        "split sizes {channels:?} do not sum to {c} channels"
    );
    let hw = h * w;
    let mut out: Vec<Tensor<T>> = channels
        .iter()
        .map(|&ci| Tensor::zeros([n, ci, h, w]))
        .collect();
    for b in 0..n {
        let src = grad_out.item(b);
        let mut offset = 0;
        for (part, &ci) in out.iter_mut().zip(channels) {
            part.item_mut(b)
                .copy_from_slice(&src[offset * hw..(offset + ci) * hw]);
            offset += ci;
        }
    }
    Ok(out)
}

/// Keeps rows and columns 0, f, 2f, ….
pub fn decimate<T: Real>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.shape();
    ensure!(factor >= 1, Validation, "decimation factor must be ≥ 1");
    ensure!(
        h % factor == 0 && w % factor == 0,
        Shape,
        "{h}×{w} is not divisible by decimation factor {factor}"
    );
    Ok(Tensor::from_fn(
        [n, c, h / factor, w / factor],
        |[b, ch, y, x]| input.at([b, ch, y * factor, x * factor]),
    ))
}

pub fn decimate_backward<T: Real>(
    grad_out: &Tensor<T>,
    input_shape: [usize; 4],
    factor: usize,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_shape;
    ensure!(
        factor >= 1 && h % factor == 0 && w % factor == 0,
        Shape,
        "{h}×{w} is not divisible by decimation factor {factor}"
    );
    grad_out.check_shape([n, c, h / factor, w / factor], "decimate grad_out")?;
    let mut g = Tensor::zeros(input_shape);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h / factor {
                for x in 0..w / factor {
                    g.set([b, ch, y * factor, x * factor], grad_out.at([b, ch, y, x]));
                }
            }
        }
    }
    Ok(g)
}

/// Pixels removed from each side by [`crop_border`] / added by [`pad_replicate`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Border {
    pub left: usize,
    pub right: usize,
    pub top: usize,
    pub bottom: usize,
}

impl Border {
    pub fn uniform(px: usize) -> Self {
        Self {
            left: px,
            right: px,
            top: px,
            bottom: px,
        }
    }

    /// Split `total` pixels as evenly as possible, the extra pixel going right/bottom.
    pub fn symmetric(total: usize) -> Self {
        let lo = total / 2;
        Self {
            left: lo,
            right: total - lo,
            top: lo,
            bottom: total - lo,
        }
    }
}

pub fn crop_border<T: Real>(input: &Tensor<T>, border: Border) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.shape();
    ensure!(
        border.top + border.bottom < h && border.left + border.right < w,
        Shape,
        "crop {border:?} removes all of {h}×{w}"
    );
    let oh = h - border.top - border.bottom;
    let ow = w - border.left - border.right;
    Ok(Tensor::from_fn([n, c, oh, ow], |[b, ch, y, x]| {
        input.at([b, ch, y + border.top, x + border.left])
    }))
}

/// Zero-pads the gradient back to the uncropped size.
pub fn crop_backward<T: Real>(
    grad_out: &Tensor<T>,
    input_shape: [usize; 4],
    border: Border,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_shape;
    ensure!(
        border.top + border.bottom < h && border.left + border.right < w,
        Shape,
        "crop {border:?} removes all of {h}×{w}"
    );
    let (oh, ow) = (
        h - border.top - border.bottom,
        w - border.left - border.right,
    );
    grad_out.check_shape([n, c, oh, ow], "crop grad_out")?;
    let mut g = Tensor::zeros(input_shape);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                let src = &grad_out.plane(b, ch)[y * ow..(y + 1) * ow];
                let row = (y + border.top) * w + border.left;
                g.plane_mut(b, ch)[row..row + ow].copy_from_slice(src);
            }
        }
    }
    Ok(g)
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Extends every plane by edge replication.
pub fn pad_replicate<T: Real>(input: &Tensor<T>, border: Border) -> Tensor<T> {
    let [n, c, h, w] = input.shape();
    let (oh, ow) = (
        h + border.top + border.bottom,
        w + border.left + border.right,
    );
    Tensor::from_fn([n, c, oh, ow], |[b, ch, y, x]| {
        let sy = clamp_index(y as isize - border.top as isize, h);
        let sx = clamp_index(x as isize - border.left as isize, w);
        input.at([b, ch, sy, sx])
    })
}

pub fn pad_replicate_backward<T: Real>(
    grad_out: &Tensor<T>,
    input_shape: [usize; 4],
    border: Border,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_shape;
    let (oh, ow) = (
        h + border.top + border.bottom,
        w + border.left + border.right,
    );
    grad_out.check_shape([n, c, oh, ow], "pad grad_out")?;
    let mut g = Tensor::zeros(input_shape);
    for b in 0..n {
        for ch in 0..c {
            let src = grad_out.plane(b, ch);
            let dst = g.plane_mut(b, ch);
            for y in 0..oh {
                let sy = clamp_index(y as isize - border.top as isize, h);
                for x in 0..ow {
                    let sx = clamp_index(x as isize - border.left as isize, w);
                    dst[sy * w + sx] += src[y * ow + x];
                }
            }
        }
    }
    Ok(g)
}
