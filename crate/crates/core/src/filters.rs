//! Fixed high-pass detail extraction and the band interleaving that builds
//! the two concatenated detail stacks fed to the network.

use crate::error::{ensure, Result};
use crate::ops::decimate;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FilterConfig {
    /// Side of the square averaging window.
    pub lowpass_size: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { lowpass_size: 6 }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.lowpass_size >= 1,
            Validation,
            "lowpass_size must be ≥ 1"
        );
        Ok(())
    }

    /// Window offsets relative to the output pixel; for even sizes the extra
    /// tap sits up/left (6 → −3..=2).
    pub fn offsets(&self) -> (isize, isize) {
        let n = self.lowpass_size as isize;
        (-(n / 2), (n - 1) / 2)
    }
}

#[inline]
fn clamp(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Per-channel mean filter with replicate borders, same output size.
///
/// Computed as `x(p) + mean(x(q) − x(p))` so constant planes come back
/// bit-identical and their high-pass is exactly zero.
pub fn box_lowpass<T: Real>(image: &Tensor<T>, config: &FilterConfig) -> Tensor<T> {
    let [n, c, h, w] = image.shape();
    let (lo, hi) = config.offsets();
    let scale = T::of_f64(1.0 / (config.lowpass_size * config.lowpass_size) as f64);
    let mut out = Tensor::zeros(image.shape());
    for b in 0..n {
        for ch in 0..c {
            let src = image.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..h {
                for x in 0..w {
                    let centre = src[y * w + x];
                    let mut acc = T::zero();
                    for dy in lo..=hi {
                        let row = &src[clamp(y as isize + dy, h) * w..][..w];
                        for dx in lo..=hi {
                            acc += row[clamp(x as isize + dx, w)] - centre;
                        }
                    }
                    dst[y * w + x] = centre + acc * scale;
                }
            }
        }
    }
    out
}

/// Adjoint of [`box_lowpass`].
pub fn box_lowpass_backward<T: Real>(grad_out: &Tensor<T>, config: &FilterConfig) -> Tensor<T> {
    let [n, c, h, w] = grad_out.shape();
    let (lo, hi) = config.offsets();
    let scale = T::of_f64(1.0 / (config.lowpass_size * config.lowpass_size) as f64);
    let mut out = Tensor::zeros(grad_out.shape());
    for b in 0..n {
        for ch in 0..c {
            let src = grad_out.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..h {
                for x in 0..w {
                    let g = src[y * w + x] * scale;
                    for dy in lo..=hi {
                        let row = clamp(y as isize + dy, h) * w;
                        for dx in lo..=hi {
                            dst[row + clamp(x as isize + dx, w)] += g;
                        }
                    }
                }
            }
        }
    }
    out
}

/// `image − box_lowpass(image)`.
pub fn highpass<T: Real>(image: &Tensor<T>, config: &FilterConfig) -> Tensor<T> {
    let low = box_lowpass(image, config);
    let data = image
        .data()
        .iter()
        .zip(low.data())
        .map(|(&x, &l)| x - l)
        .collect();
    Tensor::from_vec(image.shape(), data).expect("same shape")
}

pub fn highpass_backward<T: Real>(grad_out: &Tensor<T>, config: &FilterConfig) -> Tensor<T> {
    let through_low = box_lowpass_backward(grad_out, config);
    let data = grad_out
        .data()
        .iter()
        .zip(through_low.data())
        .map(|(&g, &l)| g - l)
        .collect();
    Tensor::from_vec(grad_out.shape(), data).expect("same shape")
}

/// High-pass detail of the HR-MSI brought down to the LR grid by plain
/// decimation.
pub fn downsampled_highpass<T: Real>(
    image: &Tensor<T>,
    config: &FilterConfig,
    factor: usize,
) -> Result<Tensor<T>> {
    decimate(&highpass(image, config), factor)
}

/// Output slots (head, middle, tail) where the multispectral detail bands
/// are inserted among the base channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InterleaveSpec {
    pub positions: Vec<usize>,
}

impl InterleaveSpec {
    /// Head / middle / tail for three inserted bands (middle = ⌈base/2⌉ + 1);
    /// evenly spread slots for any other count.
    pub fn default_for(base: usize, inserted: usize) -> Self {
        let total = base + inserted;
        let positions = match inserted {
            0 => vec![],
            1 => vec![0],
            3 if base >= 1 => vec![0, base.div_ceil(2) + 1, total - 1],
            _ => (0..inserted)
                .map(|i| ((i * (total - 1)) as f64 / (inserted - 1) as f64).round() as usize)
                .collect(),
        };
        Self { positions }
    }

    pub fn validate(&self, base: usize, inserted: usize) -> Result<()> {
        let total = base + inserted;
        ensure!(
            self.positions.len() == inserted,
            Validation,
            "interleave lists {} positions for {inserted} inserted bands",
            self.positions.len()
        );
        ensure!(
            self.positions.windows(2).all(|p| p[0] < p[1]),
            Validation,
            "interleave positions {:?} are not strictly increasing",
            self.positions
        );
        ensure!(
            self.positions.iter().all(|&p| p < total),
            Validation,
            "interleave positions {:?} exceed {total} output channels",
            self.positions
        );
        Ok(())
    }

    /// For each output channel, `Ok(i)` = base channel i, `Err(j)` = inserted band j.
    fn sources(&self, base: usize, inserted: usize) -> Vec<std::result::Result<usize, usize>> {
        let mut next_base = 0;
        let mut next_ins = 0;
        (0..base + inserted)
            .map(|slot| {
                if self.positions.get(next_ins) == Some(&slot) {
                    next_ins += 1;
                    Err(next_ins - 1)
                } else {
                    next_base += 1;
                    Ok(next_base - 1)
                }
            })
            .collect()
    }
}

/// Channel-interleaved concatenation of `base` and `inserted`.
pub fn interleave<T: Real>(
    base: &Tensor<T>,
    inserted: &Tensor<T>,
    spec: &InterleaveSpec,
) -> Result<Tensor<T>> {
    let [n, cb, h, w] = base.shape();
    ensure!(
        inserted.batch() == n && inserted.height() == h && inserted.width() == w,
        Shape,
        "interleave expects matching N, H, W; got {:?} and {:?}",
        base.shape(),
        inserted.shape()
    );
    let ci = inserted.channels();
    spec.validate(cb, ci)?;
    let sources = spec.sources(cb, ci);
    let mut out = Tensor::zeros([n, cb + ci, h, w]);
    for b in 0..n {
        for (slot, src) in sources.iter().enumerate() {
            let plane = match *src {
                Ok(i) => base.plane(b, i),
                Err(j) => inserted.plane(b, j),
            };
            out.plane_mut(b, slot).copy_from_slice(plane);
        }
    }
    Ok(out)
}

/// Routes an interleaved gradient back to `(base, inserted)`.
pub fn interleave_backward<T: Real>(
    grad_out: &Tensor<T>,
    base_channels: usize,
    spec: &InterleaveSpec,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, c, h, w] = grad_out.shape();
    ensure!(
        c >= base_channels,
        Shape,
        "gradient has {c} channels, fewer than {base_channels} base channels"
    );
    let ci = c - base_channels;
    spec.validate(base_channels, ci)?;
    let mut gb = Tensor::zeros([n, base_channels, h, w]);
    let mut gi = Tensor::zeros([n, ci, h, w]);
    let sources = spec.sources(base_channels, ci);
    for b in 0..n {
        for (slot, src) in sources.iter().enumerate() {
            let plane = grad_out.plane(b, slot);
            match *src {
                Ok(i) => gb.plane_mut(b, i).copy_from_slice(plane),
                Err(j) => gi.plane_mut(b, j).copy_from_slice(plane),
            }
        }
    }
    Ok((gb, gi))
}

/// Low-scale detail stack: HSI detail with the decimated MSI detail inserted.
pub fn build_c0<T: Real>(
    y_hp: &Tensor<T>,
    z_hp_d: &Tensor<T>,
    spec: &InterleaveSpec,
) -> Result<Tensor<T>> {
    interleave(y_hp, z_hp_d, spec)
}

/// High-scale detail stack: upsampled features with the full-resolution MSI
/// detail inserted.
pub fn build_c1<T: Real>(
    features: &Tensor<T>,
    z_hp: &Tensor<T>,
    spec: &InterleaveSpec,
) -> Result<Tensor<T>> {
    interleave(features, z_hp, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn constants_pass_through_lowpass_and_vanish_in_highpass() {
        let x = Tensor::<f32>::full([2, 3, 7, 9], 0.3721);
        assert_eq!(box_lowpass(&x, &FilterConfig::default()), x);
        assert!(highpass(&x, &FilterConfig::default())
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn interior_matches_window_mean() {
        let x = Tensor::from_fn([1, 1, 12, 12], |[_, _, y, x]| {
            (y * 12 + x) as f64 * 1.37 + 0.01 * (x * x) as f64
        });
        let low = box_lowpass(&x, &FilterConfig::default());
        for y in 3..10 {
            for xx in 3..10 {
                let mut s = 0.0;
                for dy in -3isize..=2 {
                    for dx in -3isize..=2 {
                        s += x.at([
                            0,
                            0,
                            (y as isize + dy) as usize,
                            (xx as isize + dx) as usize,
                        ]);
                    }
                }
                assert!((low.at([0, 0, y, xx]) - s / 36.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn size_one_is_identity() {
        let x = random([1, 2, 5, 4], 1);
        let cfg = FilterConfig { lowpass_size: 1 };
        assert_eq!(box_lowpass(&x, &cfg), x);
    }

    #[test]
    fn checkerboard_interior_is_all_detail() {
        let x = Tensor::from_fn(
            [1, 1, 8, 8],
            |[_, _, y, x]| if (x + y) % 2 == 0 { 1.0 } else { -1.0 },
        );
        let cfg = FilterConfig { lowpass_size: 2 };
        let hp = highpass(&x, &cfg);
        for y in 1..8 {
            for xx in 1..8 {
                assert_eq!(hp.at([0, 0, y, xx]), x.at([0, 0, y, xx]));
            }
        }
    }

    #[test]
    fn reassembly_is_within_rounding() {
        let x = random([2, 3, 9, 11], 4);
        let cfg = FilterConfig::default();
        let low = box_lowpass(&x, &cfg);
        let high = highpass(&x, &cfg);
        for ((l, h), v) in low.data().iter().zip(high.data()).zip(x.data()) {
            assert!((l + h - v).abs() < 1e-12);
            assert_eq!(*h, v - l);
        }
    }

    #[test]
    fn lowpass_backward_is_adjoint() {
        let cfg = FilterConfig::default();
        let x = random([1, 2, 7, 5], 2);
        let g = random([1, 2, 7, 5], 3);
        let lhs = box_lowpass(&x, &cfg).dot(&g);
        let rhs = x.dot(&box_lowpass_backward(&g, &cfg));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn c0_layout_for_rgb() {
        let spec = InterleaveSpec::default_for(31, 3);
        assert_eq!(spec.positions, vec![0, 17, 33]);
        let y = Tensor::from_fn([1, 31, 2, 2], |[_, c, _, _]| c as f64);
        let z = Tensor::from_fn([1, 3, 2, 2], |[_, c, _, _]| -(c as f64) - 1.0);
        let c0 = build_c0(&y, &z, &spec).unwrap();
        assert_eq!(c0.channels(), 34);
        assert_eq!(c0.at([0, 0, 0, 0]), -1.0);
        assert_eq!(c0.at([0, 17, 0, 0]), -2.0);
        assert_eq!(c0.at([0, 33, 0, 0]), -3.0);
        assert_eq!(c0.at([0, 1, 0, 0]), 0.0);
        assert_eq!(c0.at([0, 18, 0, 0]), 16.0);
        assert_eq!(c0.at([0, 32, 0, 0]), 30.0);
    }

    #[test]
    fn c1_layout_for_rgb() {
        let spec = InterleaveSpec::default_for(64, 3);
        assert_eq!(spec.positions, vec![0, 33, 66]);
        let f = Tensor::<f32>::zeros([1, 64, 2, 2]);
        let z = Tensor::<f32>::zeros([1, 3, 2, 2]);
        assert_eq!(build_c1(&f, &z, &spec).unwrap().channels(), 67);
    }

    #[test]
    fn no_inserted_bands_is_identity() {
        let y = random([1, 4, 3, 3], 5);
        let z = Tensor::zeros([1, 0, 3, 3]);
        let spec = InterleaveSpec::default_for(4, 0);
        assert_eq!(build_c0(&y, &z, &spec).unwrap(), y);
    }

    #[test]
    fn bad_positions_rejected() {
        let y = random([1, 4, 3, 3], 6);
        let z = random([1, 2, 3, 3], 7);
        for positions in [vec![0, 6], vec![3, 1], vec![0]] {
            assert!(build_c0(&y, &z, &InterleaveSpec { positions }).is_err());
        }
    }

    #[test]
    fn interleave_backward_restores_inputs() {
        let y = random([2, 5, 3, 3], 8);
        let z = random([2, 3, 3, 3], 9);
        let spec = InterleaveSpec::default_for(5, 3);
        let c = build_c0(&y, &z, &spec).unwrap();
        let (gy, gz) = interleave_backward(&c, 5, &spec).unwrap();
        assert_eq!(gy, y);
        assert_eq!(gz, z);
    }
}
