//! Observation model: a Gaussian-blurred, decimated copy of the scene gives
//! the low-resolution hyperspectral cube, and a spectral response applied
//! per pixel gives the high-resolution multispectral image.

use crate::cube::{HyperCube, SpectralResponse};
use crate::error::{ensure, Result};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationConfig {
    pub blur_kernel_size: usize,
    pub blur_sigma: f64,
    pub scale_factor: usize,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            blur_kernel_size: 3,
            blur_sigma: 0.5,
            scale_factor: 4,
        }
    }
}

impl DegradationConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.blur_kernel_size % 2 == 1,
            Validation,
            "blur_kernel_size must be odd, got {}",
            self.blur_kernel_size
        );
        ensure!(
            self.blur_sigma > 0.0 && self.blur_sigma.is_finite(),
            Validation,
            "blur_sigma must be positive, got {}",
            self.blur_sigma
        );
        ensure!(
            self.scale_factor >= 1,
            Validation,
            "scale_factor must be at least 1"
        );
        Ok(())
    }
}

/// Row-major `size × size` Gaussian on the integer grid centred at 0,
/// normalized to sum 1.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Vec<f64>> {
    ensure!(
        size % 2 == 1,
        Validation,
        "kernel size must be odd, got {size}"
    );
    ensure!(
        sigma > 0.0 && sigma.is_finite(),
        Validation,
        "sigma must be positive, got {sigma}"
    );
    let r = (size / 2) as f64;
    let mut k = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let (y, x) = (i as f64 - r, j as f64 - r);
            k.push((-(x * x + y * y) / (2.0 * sigma * sigma)).exp());
        }
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    Ok(k)
}

/// Blurs every band with replicate borders and keeps rows/columns 0, f, 2f, ….
/// Only the retained samples are computed.
pub fn blur_decimate<T: Real>(
    cube: &HyperCube<T>,
    config: &DegradationConfig,
) -> Result<HyperCube<T>> {
    config.validate()?;
    let f = config.scale_factor;
    let (h, w) = (cube.height, cube.width);
    ensure!(
        h % f == 0 && w % f == 0,
        Validation,
        "{h}×{w} is not divisible by scale factor {f}"
    );
    let n = config.blur_kernel_size;
    let kernel: Vec<T> = gaussian_kernel(n, config.blur_sigma)?
        .into_iter()
        .map(T::of_f64)
        .collect();
    let r = (n / 2) as isize;
    let clamp = |v: isize, len: usize| v.clamp(0, len as isize - 1) as usize;
    let (oh, ow) = (h / f, w / f);
    let mut out = HyperCube::zeros(oh, ow, cube.bands);
    out.wavelengths = cube.wavelengths.clone();
    for b in 0..cube.bands {
        let src = cube.band(b);
        let dst = out.band_mut(b);
        for oy in 0..oh {
            for ox in 0..ow {
                let (cy, cx) = ((oy * f) as isize, (ox * f) as isize);
                let mut acc = T::zero();
                for i in 0..n {
                    let y = clamp(cy + i as isize - r, h);
                    for j in 0..n {
                        let x = clamp(cx + j as isize - r, w);
                        acc += kernel[i * n + j] * src[y * w + x];
                    }
                }
                dst[oy * ow + ox] = acc;
            }
        }
    }
    Ok(out)
}

/// Per-pixel `out_j = Σ_b R[j][b] · cube_b`. Output wavelengths are the
/// response-weighted centres when all input wavelengths are known, else 0.
pub fn apply_spectral_response<T: Real>(
    cube: &HyperCube<T>,
    response: &SpectralResponse,
) -> Result<HyperCube<T>> {
    ensure!(
        response.in_bands == cube.bands,
        Shape,
        "response expects {} bands, cube has {}",
        response.in_bands,
        cube.bands
    );
    let mut out = HyperCube::zeros(cube.height, cube.width, response.out_bands);
    let known = cube.wavelengths.iter().all(|&l| l > 0.0);
    for j in 0..response.out_bands {
        let row = response.row(j);
        if known {
            out.wavelengths[j] = row
                .iter()
                .zip(&cube.wavelengths)
                .map(|(w, &l)| w * l as f64)
                .sum::<f64>() as f32;
        }
        let dst = out.band_mut(j);
        for (b, &wt) in row.iter().enumerate() {
            if wt == 0.0 {
                continue;
            }
            let wt = T::of_f64(wt);
            for (d, &s) in dst.iter_mut().zip(cube.band(b)) {
                *d += wt * s;
            }
        }
    }
    Ok(out)
}

/// `(lr_hsi, hr_msi)` synthesized from a high-resolution cube.
pub fn simulate_pair<T: Real>(
    hr: &HyperCube<T>,
    response: &SpectralResponse,
    config: &DegradationConfig,
) -> Result<(HyperCube<T>, HyperCube<T>)> {
    Ok((
        blur_decimate(hr, config)?,
        apply_spectral_response(hr, response)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_values() {
        assert_eq!(gaussian_kernel(1, 3.0).unwrap(), vec![1.0]);
        let k = gaussian_kernel(3, 0.5).unwrap();
        let norm = 1.0 + 4.0 * (-2.0f64).exp() + 4.0 * (-4.0f64).exp();
        assert!((norm - 1.614603).abs() < 1e-6);
        assert!((k[4] - 1.0 / norm).abs() < 1e-12);
        assert!((k[1] - 0.083822).abs() < 1e-5);
        assert!((k[0] - 0.011344).abs() < 1e-5);
        let big = gaussian_kernel(7, 2.0).unwrap();
        assert!((big.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(gaussian_kernel(4, 1.0).is_err());
        assert!(gaussian_kernel(3, 0.0).is_err());
    }

    #[test]
    fn constant_preserved() {
        let c = HyperCube::<f64>::from_fn(8, 8, 3, |_, _, _| 0.37);
        let r =
            SpectralResponse::from_rows(vec![vec![1.0, 2.0, 3.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let (lr, msi) = simulate_pair(&c, &r, &DegradationConfig::default()).unwrap();
        assert_eq!((lr.height, lr.width, lr.bands), (2, 2, 3));
        assert_eq!(msi.bands, 2);
        assert!(lr.data.iter().all(|v| (v - 0.37).abs() < 1e-15));
        assert!(msi.data.iter().all(|v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn indivisible_rejected() {
        let c = HyperCube::<f64>::zeros(8, 8, 1);
        let cfg = DegradationConfig {
            scale_factor: 3,
            ..Default::default()
        };
        assert!(blur_decimate(&c, &cfg).unwrap_err().is_validation());
    }

    #[test]
    fn identity_pair() {
        let c = HyperCube::<f64>::from_fn(4, 4, 2, |b, y, x| (b * 16 + y * 4 + x) as f64);
        let cfg = DegradationConfig {
            blur_kernel_size: 1,
            blur_sigma: 1.0,
            scale_factor: 1,
        };
        let (lr, msi) = simulate_pair(&c, &SpectralResponse::identity(2), &cfg).unwrap();
        assert_eq!(lr, c);
        assert_eq!(msi.data, c.data);
    }

    #[test]
    fn uniform_response_averages_bands() {
        let c = HyperCube::<f64>::from_fn(2, 2, 4, |b, _, _| b as f64);
        let r = SpectralResponse::from_rows(vec![vec![1.0; 4]]).unwrap();
        let z = apply_spectral_response(&c, &r).unwrap();
        assert!(z.data.iter().all(|v| (v - 1.5).abs() < 1e-15));
        assert!(apply_spectral_response(&HyperCube::<f64>::zeros(2, 2, 3), &r).is_err());
    }

    #[test]
    fn wavelengths_mapped() {
        let mut c = HyperCube::<f32>::zeros(4, 4, 2);
        c.wavelengths = vec![400.0, 600.0];
        let r = SpectralResponse::from_rows(vec![vec![1.0, 1.0]]).unwrap();
        let (lr, msi) = simulate_pair(&c, &r, &DegradationConfig::default()).unwrap();
        assert_eq!(lr.wavelengths, c.wavelengths);
        assert_eq!(msi.wavelengths, vec![500.0]);
    }
}
