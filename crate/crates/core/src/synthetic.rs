//! Seeded synthetic scenes for smoke runs and tests: piecewise-constant
//! material maps with smooth spectra, sharp edges and a mild texture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cube::{HyperCube, SpectralResponse};

/// Evenly spaced nominal wavelengths over 400–700 nm.
pub fn visible_wavelengths(bands: usize) -> Vec<f32> {
    if bands == 1 {
        return vec![550.0];
    }
    (0..bands)
        .map(|b| 400.0 + 300.0 * b as f32 / (bands - 1) as f32)
        .collect()
}

fn material_spectrum(rng: &mut ChaCha8Rng, bands: usize) -> Vec<f64> {
    let peaks = rng.random_range(1..=3);
    let params: Vec<(f64, f64, f64)> = (0..peaks)
        .map(|_| {
            (
                rng.random_range(0.0..1.0),
                rng.random_range(0.1..0.5),
                rng.random_range(0.2..0.8),
            )
        })
        .collect();
    let base = rng.random_range(0.05..0.2);
    (0..bands)
        .map(|b| {
            let t = if bands > 1 {
                b as f64 / (bands - 1) as f64
            } else {
                0.5
            };
            let v = base
                + params
                    .iter()
                    .map(|&(c, w, a)| a * (-(t - c) * (t - c) / (2.0 * w * w)).exp())
                    .sum::<f64>();
            v.min(1.0)
        })
        .collect()
}

/// A `height × width × bands` scene in [0, 1] built from random rectangles
/// and discs, each carrying its own smooth spectrum, over a textured
/// background.
pub fn synthetic_cube(height: usize, width: usize, bands: usize, seed: u64) -> HyperCube<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let materials: Vec<Vec<f64>> = (0..6).map(|_| material_spectrum(&mut rng, bands)).collect();
    let mut label = vec![0usize; height * width];
    let shapes = 4 + (height * width) / 512;
    for _ in 0..shapes {
        let m = rng.random_range(1..materials.len());
        let cy = rng.random_range(0.0..height as f64);
        let cx = rng.random_range(0.0..width as f64);
        let ry = rng.random_range(2.0..(height as f64 / 4.0).max(3.0));
        let rx = rng.random_range(2.0..(width as f64 / 4.0).max(3.0));
        let disc = rng.random_bool(0.5);
        for y in 0..height {
            for x in 0..width {
                let (dy, dx) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
                let inside = if disc {
                    dy * dy + dx * dx <= 1.0
                } else {
                    dy.abs() <= 1.0 && dx.abs() <= 1.0
                };
                if inside {
                    label[y * width + x] = m;
                }
            }
        }
    }
    let (fy, fx) = (rng.random_range(0.2..0.6), rng.random_range(0.2..0.6));
    let mut cube = HyperCube::from_fn(height, width, bands, |b, y, x| {
        let texture = 0.9 + 0.1 * ((fy * y as f64).sin() * (fx * x as f64).cos());
        (materials[label[y * width + x]][b] * texture).clamp(0.0, 1.0) as f32
    });
    cube.wavelengths = visible_wavelengths(bands);
    cube
}

/// Broad red, green and blue responses (Gaussians at 610, 540 and 460 nm)
/// sampled at the given wavelengths.
pub fn rgb_response(wavelengths: &[f32]) -> SpectralResponse {
    let rows = [610.0, 540.0, 460.0]
        .iter()
        .map(|&c: &f64| {
            wavelengths
                .iter()
                .map(|&l| {
                    let d = (l as f64 - c) / 50.0;
                    (-0.5 * d * d).exp() + 1e-6
                })
                .collect()
        })
        .collect();
    SpectralResponse::from_rows(rows).expect("positive rows")
}
