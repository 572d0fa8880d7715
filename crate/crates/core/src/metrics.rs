//! Full-reference quality indexes between a reference cube and an estimate.
//! All arithmetic is carried out in f64 regardless of the cube's sample type.

use std::fmt;

use crate::cube::HyperCube;
use crate::error::{ensure, Result};
use crate::tensor::Real;

fn check_pair<T: Real>(reference: &HyperCube<T>, estimate: &HyperCube<T>) -> Result<()> {
    ensure!(
        reference.same_shape(estimate),
        Shape,
        "reference is {}×{}×{}, estimate is {}×{}×{}",
        reference.height,
        reference.width,
        reference.bands,
        estimate.height,
        estimate.width,
        estimate.bands
    );
    Ok(())
}

fn band_mse<T: Real>(reference: &HyperCube<T>, estimate: &HyperCube<T>, b: usize) -> f64 {
    let r = reference.band(b);
    let e = estimate.band(b);
    r.iter()
        .zip(e)
        .map(|(a, b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum::<f64>()
        / r.len() as f64
}

/// Band-averaged PSNR in dB. Any exact band makes the result `+∞`.
pub fn psnr<T: Real>(reference: &HyperCube<T>, estimate: &HyperCube<T>, peak: f64) -> Result<f64> {
    check_pair(reference, estimate)?;
    let mut total = 0.0;
    for b in 0..reference.bands {
        let mse = band_mse(reference, estimate, b);
        if mse == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += 10.0 * (peak * peak / mse).log10();
    }
    Ok(total / reference.bands as f64)
}

/// Spectral vectors with a norm below this are skipped by [`sam`].
pub const SAM_MIN_NORM: f64 = 1e-8;

/// Mean spectral angle in degrees over pixels where both spectra are nonzero.
pub fn sam<T: Real>(reference: &HyperCube<T>, estimate: &HyperCube<T>) -> Result<f64> {
    check_pair(reference, estimate)?;
    ensure!(
        reference.bands >= 2,
        Validation,
        "spectral angle needs at least two bands"
    );
    let plane = reference.height * reference.width;
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in 0..plane {
        let (mut dot, mut nr, mut ne) = (0.0, 0.0, 0.0);
        for b in 0..reference.bands {
            let r = reference.data[b * plane + p].as_f64();
            let e = estimate.data[b * plane + p].as_f64();
            dot += r * e;
            nr += r * r;
            ne += e * e;
        }
        if nr.sqrt() < SAM_MIN_NORM || ne.sqrt() < SAM_MIN_NORM {
            continue;
        }
        // sqrt(a·a) rounds back to a, so identical spectra give exactly 1.
        sum += (dot / (nr * ne).sqrt()).clamp(-1.0, 1.0).acos();
        count += 1;
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok((sum / count as f64).to_degrees())
}

/// ERGAS: `100/ratio · sqrt(mean_b (RMSE_b / μ_b)²)`. Bands whose reference
/// mean is zero are skipped.
pub fn ergas<T: Real>(
    reference: &HyperCube<T>,
    estimate: &HyperCube<T>,
    ratio: f64,
) -> Result<f64> {
    check_pair(reference, estimate)?;
    ensure!(ratio > 0.0, Validation, "ERGAS ratio must be positive");
    let mut acc = 0.0;
    let mut used = 0usize;
    for b in 0..reference.bands {
        let r = reference.band(b);
        let mean = r.iter().map(|v| v.as_f64()).sum::<f64>() / r.len() as f64;
        if mean == 0.0 {
            continue;
        }
        acc += band_mse(reference, estimate, b) / (mean * mean);
        used += 1;
    }
    if used == 0 {
        return Ok(0.0);
    }
    Ok(100.0 / ratio * (acc / used as f64).sqrt())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// Normalized 11×11 Gaussian window, row-major.
fn ssim_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &g {
        for b in &g {
            w.push(a * b / (s * s));
        }
    }
    w
}

/// Single-scale SSIM per band over the valid (unpadded) window positions,
/// averaged over bands.
pub fn ssim<T: Real>(reference: &HyperCube<T>, estimate: &HyperCube<T>, peak: f64) -> Result<f64> {
    check_pair(reference, estimate)?;
    let (h, w) = (reference.height, reference.width);
    ensure!(
        h >= SSIM_WINDOW && w >= SSIM_WINDOW,
        Validation,
        "SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels, got {h}×{w}"
    );
    let win = ssim_window();
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for b in 0..reference.bands {
        let r = reference.band(b);
        let e = estimate.band(b);
        let mut band_sum = 0.0;
        for y in 0..oh {
            for x in 0..ow {
                let (mut mr, mut me, mut srr, mut see, mut sre) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let k = win[i * SSIM_WINDOW + j];
                        let a = r[(y + i) * w + x + j].as_f64();
                        let c = e[(y + i) * w + x + j].as_f64();
                        mr += k * a;
                        me += k * c;
                        srr += k * a * a;
                        see += k * c * c;
                        sre += k * a * c;
                    }
                }
                let vr = srr - mr * mr;
                let ve = see - me * me;
                let cov = sre - mr * me;
                band_sum += ((2.0 * mr * me + c1) * (2.0 * cov + c2))
                    / ((mr * mr + me * me + c1) * (vr + ve + c2));
            }
        }
        total += band_sum / (oh * ow) as f64;
    }
    Ok(total / reference.bands as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub psnr: f64,
    pub sam: f64,
    pub ergas: f64,
    pub ssim: f64,
    pub ratio: f64,
}

impl MetricsReport {
    /// `name,psnr_db,sam_deg,ergas,ssim`.
    pub fn csv_row(&self, name: &str) -> String {
        format!(
            "{name},{},{},{},{}",
            format_sig(self.psnr),
            format_sig(self.sam),
            format_sig(self.ergas),
            format_sig(self.ssim)
        )
    }

    pub const CSV_HEADER: &'static str = "name,psnr_db,sam_deg,ergas,ssim";
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "PSNR {} dB, SAM {}°, ERGAS {}, SSIM {}",
            format_sig(self.psnr),
            format_sig(self.sam),
            format_sig(self.ergas),
            format_sig(self.ssim)
        )
    }
}

/// All four indexes; PSNR and SSIM assume a peak of 1.
pub fn report<T: Real>(
    reference: &HyperCube<T>,
    estimate: &HyperCube<T>,
    ratio: f64,
) -> Result<MetricsReport> {
    Ok(MetricsReport {
        psnr: psnr(reference, estimate, 1.0)?,
        sam: sam(reference, estimate)?,
        ergas: ergas(reference, estimate, ratio)?,
        ssim: ssim(reference, estimate, 1.0)?,
        ratio,
    })
}

/// Six significant digits, trailing zeros dropped, `inf` for +∞ (like C's `%g`
/// but never switching to exponent notation for values in [1e-5, 1e6)).
pub fn format_sig(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-5..6).contains(&exp) {
        let s = format!("{:.5e}", v);
        let (mant, e) = s.split_once('e').expect("exponent form");
        let mant = mant.trim_end_matches('0').trim_end_matches('.');
        return format!("{mant}e{e}");
    }
    let decimals = (5 - exp).max(0) as usize;
    let s = format!("{:.*}", decimals, v);
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Parses one `name,psnr,sam,ergas,ssim` row.
pub fn parse_csv_row(line: &str) -> Result<(String, MetricsReport)> {
    let fields: Vec<&str> = line.trim().split(',').collect();
    ensure!(
        fields.len() == 5,
        Validation,
        "metrics row needs 5 fields, got {}: {line:?}",
        fields.len()
    );
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| crate::Error::Validation(format!("{s:?} is not a number")))
    };
    Ok((
        fields[0].to_string(),
        MetricsReport {
            psnr: num(fields[1])?,
            sam: num(fields[2])?,
            ergas: num(fields[3])?,
            ssim: num(fields[4])?,
            ratio: f64::NAN,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(
        h: usize,
        w: usize,
        s: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> HyperCube<f64> {
        HyperCube::from_fn(h, w, s, f)
    }

    #[test]
    fn ideal_values() {
        let r = cube(12, 12, 3, |b, y, x| 0.1 + 0.01 * (b + y * x) as f64);
        let rep = report(&r, &r, 4.0).unwrap();
        assert_eq!(rep.psnr, f64::INFINITY);
        assert_eq!(rep.sam, 0.0);
        assert_eq!(rep.ergas, 0.0);
        assert!((rep.ssim - 1.0).abs() < 1e-12);
        assert_eq!(rep.csv_row("x"), "x,inf,0,0,1");
    }

    #[test]
    fn psnr_uniform_and_two_band() {
        let r = cube(4, 4, 1, |_, _, _| 0.5);
        let e = cube(4, 4, 1, |_, _, _| 0.6);
        assert!((psnr(&r, &e, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let r2 = cube(4, 4, 2, |_, _, _| 0.5);
        let e2 = cube(4, 4, 2, |b, _, _| if b == 0 { 0.6 } else { 0.51 });
        assert!((psnr(&r2, &e2, 1.0).unwrap() - 30.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_one_exact_band_is_infinite() {
        let r = cube(4, 4, 2, |_, _, _| 0.5);
        let e = cube(4, 4, 2, |b, _, _| if b == 0 { 0.5 } else { 0.6 });
        assert_eq!(psnr(&r, &e, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn sam_cases() {
        let r = cube(3, 3, 2, |b, _, _| if b == 0 { 1.0 } else { 0.0 });
        let e = cube(3, 3, 2, |_, _, _| 1.0);
        assert!((sam(&r, &e).unwrap() - 45.0).abs() < 1e-12);
        let scaled = cube(3, 3, 2, |b, y, x| 2.5 * r.at(b, y, x));
        assert_eq!(sam(&r, &scaled).unwrap(), 0.0);
        let single = cube(3, 3, 1, |_, _, _| 1.0);
        assert!(sam(&single, &single).is_err());
    }

    #[test]
    fn sam_skips_zero_pixels() {
        let r = cube(1, 2, 2, |b, _, x| {
            if x == 0 {
                0.0
            } else if b == 0 {
                1.0
            } else {
                0.0
            }
        });
        let e = cube(1, 2, 2, |_, _, _| 1.0);
        assert!((sam(&r, &e).unwrap() - 45.0).abs() < 1e-12);
    }

    #[test]
    fn ergas_cases() {
        let r = cube(4, 4, 1, |_, _, _| 1.0);
        let e = cube(4, 4, 1, |_, _, _| 1.1);
        assert!((ergas(&r, &e, 4.0).unwrap() - 2.5).abs() < 1e-9);
        assert!((ergas(&r, &e, 8.0).unwrap() - 1.25).abs() < 1e-9);
    }

    #[test]
    fn ssim_mean_shift_degrades() {
        let r = cube(16, 16, 1, |_, y, x| ((y * 7 + x * 3) % 11) as f64 / 11.0);
        let e = cube(16, 16, 1, |b, y, x| r.at(b, y, x) + 0.5);
        assert!(ssim(&r, &e, 1.0).unwrap() < 1.0);
        let small = cube(10, 16, 1, |_, _, _| 0.0);
        assert!(ssim(&small, &small, 1.0).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = cube(12, 12, 2, |_, _, _| 1.0);
        let b = cube(12, 12, 3, |_, _, _| 1.0);
        assert!(report(&a, &b, 4.0).is_err());
    }

    #[test]
    fn sig_formatting() {
        assert_eq!(format_sig(0.0), "0");
        assert_eq!(format_sig(1.0), "1");
        assert_eq!(format_sig(44.01234567), "44.0123");
        assert_eq!(format_sig(0.9921), "0.9921");
        assert_eq!(format_sig(3.09), "3.09");
        assert_eq!(format_sig(123456.7), "123457");
        assert_eq!(format_sig(f64::INFINITY), "inf");
        assert_eq!(format_sig(1.5e-7), "1.5e-7");
        let (name, rep) = parse_csv_row("a,inf,0,0,1").unwrap();
        assert_eq!(name, "a");
        assert_eq!(rep.psnr, f64::INFINITY);
    }
}
