//! Hyperspectral cubes and their on-disk formats.
//!
//! HSC1 layout (little-endian): `"HSC1"`, version `u32 = 1`, height, width,
//! bands as `u32`, `bands` wavelengths as `f32`, then `height·width·bands`
//! `f32` samples ordered band, row, column (band slowest).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::tensor::{Real, Tensor};

pub const CUBE_MAGIC: [u8; 4] = *b"HSC1";
pub const CUBE_VERSION: u32 = 1;
const HEADER_BYTES: usize = 20;

/// An H×W×S spectral image stored band-sequentially.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperCube<T = f32> {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// Nanometres per band, 0 when unknown.
    pub wavelengths: Vec<f32>,
    pub data: Vec<T>,
}

impl<T: Real> HyperCube<T> {
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        wavelengths: Vec<f32>,
        data: Vec<T>,
    ) -> Result<Self> {
        let cube = Self {
            height,
            width,
            bands,
            wavelengths,
            data,
        };
        cube.validate()?;
        Ok(cube)
    }

    pub fn zeros(height: usize, width: usize, bands: usize) -> Self {
        Self {
            height,
            width,
            bands,
            wavelengths: vec![0.0; bands],
            data: vec![T::zero(); height * width * bands],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        bands: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * bands);
        for b in 0..bands {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(b, y, x));
                }
            }
        }
        Self {
            height,
            width,
            bands,
            wavelengths: vec![0.0; bands],
            data,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.height > 0 && self.width > 0 && self.bands > 0,
            Validation,
            "cube dimensions must be positive, got {}×{}×{}",
            self.height,
            self.width,
            self.bands
        );
        ensure!(
            self.data.len() == self.height * self.width * self.bands,
            Validation,
            "cube holds {} samples, {}×{}×{} needs {}",
            self.data.len(),
            self.height,
            self.width,
            self.bands,
            self.height * self.width * self.bands
        );
        ensure!(
            self.wavelengths.len() == self.bands,
            Validation,
            "{} wavelengths for {} bands",
            self.wavelengths.len(),
            self.bands
        );
        ensure!(
            self.wavelengths.iter().all(|w| w.is_finite() && *w >= 0.0),
            Validation,
            "wavelengths must be finite and nonnegative"
        );
        ensure!(
            self.data.iter().all(|v| v.is_finite()),
            Validation,
            "cube contains non-finite samples"
        );
        Ok(())
    }

    #[inline]
    pub fn at(&self, band: usize, row: usize, col: usize) -> T {
        self.data[(band * self.height + row) * self.width + col]
    }

    pub fn band(&self, b: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.height * self.width;
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn same_shape(&self, other: &HyperCube<T>) -> bool {
        self.height == other.height && self.width == other.width && self.bands == other.bands
    }

    /// Spatial window `[row, row+h) × [col, col+w)` over all bands.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Self> {
        ensure!(
            row + h <= self.height && col + w <= self.width,
            Validation,
            "window {h}×{w} at ({row}, {col}) exceeds {}×{}",
            self.height,
            self.width
        );
        let mut out = Self::from_fn(h, w, self.bands, |b, y, x| self.at(b, row + y, col + x));
        out.wavelengths = self.wavelengths.clone();
        Ok(out)
    }

    /// Divides by the maximum sample so values land in [0, 1]; returns the scale.
    pub fn normalize_max(&mut self) -> f64 {
        let max = self.data.iter().fold(0.0f64, |m, v| m.max(v.as_f64()));
        if max > 0.0 {
            let inv = T::of_f64(1.0 / max);
            self.data.iter_mut().for_each(|v| *v *= inv);
        }
        max
    }

    pub fn cast<U: Real>(&self) -> HyperCube<U> {
        HyperCube {
            height: self.height,
            width: self.width,
            bands: self.bands,
            wavelengths: self.wavelengths.clone(),
            data: self.data.iter().map(|v| U::of_f64(v.as_f64())).collect(),
        }
    }

    /// A 1×S×H×W tensor sharing the band-sequential layout.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::from_vec([1, self.bands, self.height, self.width], self.data.clone())
            .expect("cube invariant")
    }

    /// Batch item `n` of a tensor as a cube with the given wavelengths.
    pub fn from_tensor(t: &Tensor<T>, n: usize, wavelengths: Vec<f32>) -> Result<Self> {
        let [_, c, h, w] = t.shape();
        Self::new(h, w, c, wavelengths, t.item(n).to_vec())
    }
}

fn write_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn dim_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Validation(format!("{what} {v} does not fit in u32")))
}

/// Writes an HSC1 file.
pub fn write_cube(cube: &HyperCube<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    cube.validate()?;
    let mut buf = Vec::with_capacity(HEADER_BYTES + 4 * (cube.bands + cube.data.len()));
    buf.extend_from_slice(&CUBE_MAGIC);
    write_u32(&mut buf, CUBE_VERSION);
    write_u32(&mut buf, dim_u32(cube.height, "height")?);
    write_u32(&mut buf, dim_u32(cube.width, "width")?);
    write_u32(&mut buf, dim_u32(cube.bands, "bands")?);
    for w in &cube.wavelengths {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    for v in &cube.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    file.flush().map_err(|e| Error::io(path, e))
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self {
            bytes,
            pos: 0,
            path,
        }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::ShortRead {
                path: self.path.to_path_buf(),
                needed: self.pos.saturating_add(n) - self.bytes.len(),
            }),
        }
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let len = n.checked_mul(4).ok_or_else(|| Error::Corrupt {
            path: self.path.to_path_buf(),
            reason: format!("{n} samples overflow"),
        })?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

/// Reads an HSC1 file.
pub fn read_cube(path: impl AsRef<Path>) -> Result<HyperCube<f32>> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let mut r = ByteReader::new(&bytes, path);
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if magic != CUBE_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: magic,
            expected: CUBE_MAGIC,
        });
    }
    let version = r.u32()?;
    if version != CUBE_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let (h, w, s) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    if h == 0 || w == 0 || s == 0 {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            reason: format!("zero dimension {h}×{w}×{s}"),
        });
    }
    let wavelengths = r.f32s(s)?;
    let count = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(s))
        .ok_or_else(|| Error::Corrupt {
            path: path.to_path_buf(),
            reason: format!("dimensions {h}×{w}×{s} overflow"),
        })?;
    let data = r.f32s(count)?;
    if r.remaining() != 0 {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            reason: format!("{} trailing bytes", r.remaining()),
        });
    }
    HyperCube::new(h, w, s, wavelengths, data).map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Row-normalized s×S matrix mapping hyperspectral to multispectral bands.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralResponse {
    pub out_bands: usize,
    pub in_bands: usize,
    /// Row-major `out_bands × in_bands`.
    pub weights: Vec<f64>,
}

impl SpectralResponse {
    /// Normalizes every row of `weights` to sum 1.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        ensure!(
            !rows.is_empty(),
            Validation,
            "spectral response has no rows"
        );
        let in_bands = rows[0].len();
        ensure!(in_bands > 0, Validation, "spectral response has no columns");
        let mut weights = Vec::with_capacity(rows.len() * in_bands);
        for (j, row) in rows.iter().enumerate() {
            ensure!(
                row.len() == in_bands,
                Validation,
                "response row {j} has {} entries, expected {in_bands}",
                row.len()
            );
            ensure!(
                row.iter().all(|w| w.is_finite() && *w >= 0.0),
                Validation,
                "response row {j} has negative or non-finite weights"
            );
            let sum: f64 = row.iter().sum();
            ensure!(sum > 0.0, Validation, "response row {j} is all zero");
            weights.extend(row.iter().map(|w| w / sum));
        }
        Ok(Self {
            out_bands: rows.len(),
            in_bands,
            weights,
        })
    }

    pub fn identity(bands: usize) -> Self {
        Self::from_rows(
            (0..bands)
                .map(|j| (0..bands).map(|b| if b == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        )
        .expect("identity is a valid response")
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.in_bands..(j + 1) * self.in_bands]
    }
}

fn interpolate(xs: &[f64], ys: &[f64], q: f64) -> f64 {
    if q < xs[0] || q > xs[xs.len() - 1] {
        return 0.0;
    }
    let i = xs.partition_point(|&x| x <= q).clamp(1, xs.len() - 1);
    let (x0, x1, y0, y1) = (xs[i - 1], xs[i], ys[i - 1], ys[i]);
    y0 + (y1 - y0) * (q - x0) / (x1 - x0)
}

/// Parses a `wavelength,<name>,...` table and resamples each response curve
/// onto `cube_wavelengths` (zero outside the table), then row-normalizes.
pub fn parse_spectral_response(text: &str, cube_wavelengths: &[f32]) -> Result<SpectralResponse> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| Error::Validation("spectral response table is empty".into()))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    ensure!(
        names.len() >= 2 && names[0].eq_ignore_ascii_case("wavelength"),
        Validation,
        "header must be `wavelength,<name>,...`, got {header:?}"
    );
    let s = names.len() - 1;
    let mut xs = Vec::new();
    let mut curves = vec![Vec::new(); s];
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        ensure!(
            fields.len() == s + 1,
            Validation,
            "data row {} has {} fields, expected {}",
            i + 1,
            fields.len(),
            s + 1
        );
        let parse = |f: &str| {
            f.parse::<f64>().map_err(|_| {
                Error::Validation(format!("data row {}: {f:?} is not a number", i + 1))
            })
        };
        let wl = parse(fields[0])?;
        ensure!(
            xs.last().is_none_or(|&prev| wl > prev),
            Validation,
            "wavelengths must be strictly increasing (row {} has {wl})",
            i + 1
        );
        xs.push(wl);
        for (curve, f) in curves.iter_mut().zip(&fields[1..]) {
            let v = parse(f)?;
            ensure!(
                v >= 0.0 && v.is_finite(),
                Validation,
                "negative response {v} at wavelength {wl}"
            );
            curve.push(v);
        }
    }
    ensure!(
        xs.len() >= 2,
        Validation,
        "table needs at least two data rows"
    );
    let rows = curves
        .iter()
        .zip(&names[1..])
        .map(|(curve, name)| {
            let row: Vec<f64> = cube_wavelengths
                .iter()
                .map(|&q| interpolate(&xs, curve, q as f64))
                .collect();
            ensure!(
                row.iter().any(|&v| v > 0.0),
                Validation,
                "response {name:?} is zero at every cube wavelength"
            );
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    SpectralResponse::from_rows(rows)
}

pub fn load_spectral_response(
    path: impl AsRef<Path>,
    cube_wavelengths: &[f32],
) -> Result<SpectralResponse> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_spectral_response(&text, cube_wavelengths)
}

/// `clamp(v, 0, 1)·255`, rounded half up.
pub fn to_byte(v: f32) -> u8 {
    let c = if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0) as f64
    };
    (c * 255.0 + 0.5).floor() as u8
}

/// Writes bands `(r, g, b)` as an 8-bit RGB PNG.
pub fn export_pseudocolor(
    cube: &HyperCube<f32>,
    rgb: [usize; 3],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    for b in rgb {
        ensure!(
            b < cube.bands,
            Validation,
            "band index {b} out of range for {} bands",
            cube.bands
        );
    }
    let mut pixels = Vec::with_capacity(cube.height * cube.width * 3);
    for y in 0..cube.height {
        for x in 0..cube.width {
            for b in rgb {
                pixels.push(to_byte(cube.at(b, y, x)));
            }
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), cube.width as u32, cube.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&pixels).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_cube_file_is_forty_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.hsc");
        write_cube(&HyperCube::zeros(2, 2, 1), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 40);
        assert_eq!(&bytes[..4], b"HSC1");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
    }

    #[test]
    fn zero_height_rejected() {
        let cube = HyperCube::<f32> {
            height: 0,
            width: 2,
            bands: 1,
            wavelengths: vec![0.0],
            data: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            write_cube(&cube, dir.path().join("a.hsc")),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn bad_magic_version_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.hsc");
        let cube = HyperCube::from_fn(3, 2, 2, |b, y, x| (b + y + x) as f32 * 0.1);
        write_cube(&cube, &path).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(read_cube(&path), Err(Error::BadMagic { .. })));

        let mut bad = good.clone();
        bad[4] = 2;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            read_cube(&path),
            Err(Error::UnsupportedVersion { version: 2, .. })
        ));

        std::fs::write(&path, &good[..good.len() - 4]).unwrap();
        assert!(matches!(read_cube(&path), Err(Error::ShortRead { .. })));
    }

    #[test]
    fn uniform_response_normalizes() {
        let r = parse_spectral_response(
            "wavelength,gray\n400,1\n700,1\n",
            &[400.0, 500.0, 600.0, 700.0],
        )
        .unwrap();
        assert_eq!(r.out_bands, 1);
        assert_eq!(r.row(0), &[0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn midpoint_interpolation() {
        let xs = [400.0, 500.0];
        assert_eq!(interpolate(&xs, &[0.0, 1.0], 450.0), 0.5);
        assert_eq!(interpolate(&xs, &[0.0, 1.0], 399.0), 0.0);
        assert_eq!(interpolate(&xs, &[0.0, 1.0], 500.0), 1.0);
        let r = parse_spectral_response("wavelength,a\n400,0\n500,1\n", &[450.0, 500.0]).unwrap();
        // pre-normalization weights (0.5, 1.0)
        assert!((r.row(0)[0] - 0.5 / 1.5).abs() < 1e-15);
    }

    #[test]
    fn response_errors() {
        let wl = [450.0f32];
        assert!(parse_spectral_response("wavelength,a\n500,1\n400,1\n", &wl).is_err());
        assert!(parse_spectral_response("wavelength,a\n400,-1\n500,1\n", &wl).is_err());
        assert!(parse_spectral_response("wavelength,a\n600,1\n700,1\n", &wl).is_err());
        assert!(parse_spectral_response("wavelength,a\n400,1\n", &wl).is_err());
        assert!(parse_spectral_response("lambda,a\n400,1\n500,1\n", &wl).is_err());
    }

    #[test]
    fn byte_conversion() {
        assert_eq!(to_byte(1.0), 255);
        assert_eq!(to_byte(-0.2), 0);
        assert_eq!(to_byte(0.5), 128);
        assert_eq!(to_byte(7.0), 255);
    }

    #[test]
    fn pseudocolor_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgb.png");
        let cube = HyperCube::from_fn(2, 3, 4, |b, y, x| {
            (b as f32 * 0.3 + y as f32 * 0.1 + x as f32 * 0.05) - 0.2
        });
        assert!(export_pseudocolor(&cube, [3, 2, 4], &path).is_err());
        export_pseudocolor(&cube, [3, 2, 1], &path).unwrap();
        let decoder = png::Decoder::new(std::io::BufReader::new(File::open(&path).unwrap()));
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (3, 2));
        assert_eq!(info.color_type, png::ColorType::Rgb);
        assert_eq!(buf[0], to_byte(cube.at(3, 0, 0)));
        assert_eq!(buf[4], to_byte(cube.at(2, 0, 1)));
    }
}
