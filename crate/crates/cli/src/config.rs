//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored. Every key is a field of [`RunConfig`]; unknown keys are errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hsrnet::degradation::DegradationConfig;
use hsrnet::filters::{FilterConfig, InterleaveSpec};
use hsrnet::trainer::TrainConfig;
use hsrnet::{NetworkConfig, Variant};

use crate::Failure;

/// `count × height × width × bands` scenes from the synthetic generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
}

impl FromStr for SyntheticSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let dims: Vec<usize> = s
            .split('x')
            .map(|d| d.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| format!("expected COUNTxHEIGHTxWIDTHxBANDS, got {s:?}"))?;
        match dims[..] {
            [count, height, width, bands] if dims.iter().all(|&d| d > 0) => Ok(Self {
                count,
                height,
                width,
                bands,
            }),
            _ => Err(format!(
                "expected four positive sizes COUNTxHEIGHTxWIDTHxBANDS, got {s:?}"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    // degradation
    pub blur_kernel_size: usize,
    pub blur_sigma: f64,
    pub scale_factor: usize,
    pub border_mode: String,
    // filters
    pub lowpass_size: usize,
    // network
    pub feature_channels: usize,
    pub num_blocks: usize,
    pub conv_kernel: usize,
    pub upsample_kernel: usize,
    pub variant: Variant,
    pub c0_interleave: Option<Vec<usize>>,
    pub c1_interleave: Option<Vec<usize>>,
    // training
    pub patch_size: usize,
    pub patch_stride: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    // paths
    pub data_dir: Option<PathBuf>,
    pub response_file: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
    // extras
    pub synthetic: Option<SyntheticSpec>,
    pub pseudocolor_bands: Option<[usize; 3]>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let d = DegradationConfig::default();
        let t = TrainConfig::default();
        let n = NetworkConfig::new(1, 1);
        Self {
            blur_kernel_size: d.blur_kernel_size,
            blur_sigma: d.blur_sigma,
            scale_factor: d.scale_factor,
            border_mode: "replicate".into(),
            lowpass_size: FilterConfig::default().lowpass_size,
            feature_channels: n.feature_channels,
            num_blocks: n.num_blocks,
            conv_kernel: n.conv_kernel,
            upsample_kernel: n.upsample_kernel,
            variant: n.variant,
            c0_interleave: None,
            c1_interleave: None,
            patch_size: t.patch_size,
            patch_stride: t.patch_stride,
            batch_size: t.batch_size,
            iterations: t.iterations,
            learning_rate: t.learning_rate,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            val_fraction: t.val_fraction,
            seed: t.seed,
            checkpoint_every: t.checkpoint_every,
            data_dir: None,
            response_file: None,
            checkpoint: None,
            output_dir: PathBuf::from("."),
            synthetic: None,
            pseudocolor_bands: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "blur_kernel_size",
    "blur_sigma",
    "scale_factor",
    "border_mode",
    "lowpass_size",
    "feature_channels",
    "num_blocks",
    "conv_kernel",
    "upsample_kernel",
    "variant",
    "c0_interleave",
    "c1_interleave",
    "patch_size",
    "patch_stride",
    "batch_size",
    "iterations",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "val_fraction",
    "seed",
    "checkpoint_every",
    "data_dir",
    "response_file",
    "checkpoint",
    "output_dir",
    "synthetic",
    "pseudocolor_bands",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, Failure> {
    value
        .parse()
        .map_err(|_| Failure::Validation(format!("{key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, Failure> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s.trim()))
        .collect()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Failure> {
        let v = value.trim();
        match key {
            "blur_kernel_size" => self.blur_kernel_size = parse(key, v)?,
            "blur_sigma" => self.blur_sigma = parse(key, v)?,
            "scale_factor" => self.scale_factor = parse(key, v)?,
            "border_mode" => self.border_mode = v.to_string(),
            "lowpass_size" => self.lowpass_size = parse(key, v)?,
            "feature_channels" => self.feature_channels = parse(key, v)?,
            "num_blocks" => self.num_blocks = parse(key, v)?,
            "conv_kernel" => self.conv_kernel = parse(key, v)?,
            "upsample_kernel" => self.upsample_kernel = parse(key, v)?,
            "variant" => {
                self.variant = v
                    .parse()
                    .map_err(|e: hsrnet::Error| Failure::Validation(e.to_string()))?
            }
            "c0_interleave" => self.c0_interleave = Some(parse_list(key, v)?),
            "c1_interleave" => self.c1_interleave = Some(parse_list(key, v)?),
            "patch_size" => self.patch_size = parse(key, v)?,
            "patch_stride" => self.patch_stride = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "iterations" => self.iterations = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "adam_beta1" => self.adam_beta1 = parse(key, v)?,
            "adam_beta2" => self.adam_beta2 = parse(key, v)?,
            "adam_eps" => self.adam_eps = parse(key, v)?,
            "val_fraction" => self.val_fraction = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "data_dir" => self.data_dir = Some(PathBuf::from(v)),
            "response_file" => self.response_file = Some(PathBuf::from(v)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "output_dir" => self.output_dir = PathBuf::from(v),
            "synthetic" => {
                self.synthetic = Some(
                    v.parse()
                        .map_err(|e: String| Failure::Validation(format!("synthetic: {e}")))?,
                )
            }
            "pseudocolor_bands" => {
                let b = parse_list(key, v)?;
                let arr: [usize; 3] = b.try_into().map_err(|_| {
                    Failure::Validation(format!("pseudocolor_bands needs three indices, got {v:?}"))
                })?;
                self.pseudocolor_bands = Some(arr);
            }
            _ => {
                return Err(Failure::Validation(format!(
                    "unknown configuration key {key:?} (known keys: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), Failure> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Failure::Validation(format!("{origin}:{}: expected key = value", no + 1))
            })?;
            self.set(k.trim(), v).map_err(|e| {
                Failure::Validation(format!("{origin}:{}: {}", no + 1, e.message()))
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    /// `key = value` lines for every field, loadable by [`RunConfig::load`].
    pub fn to_text(&self) -> String {
        let list = |l: &[usize]| {
            l.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let mut lines = vec![
            format!("blur_kernel_size = {}", self.blur_kernel_size),
            format!("blur_sigma = {}", self.blur_sigma),
            format!("scale_factor = {}", self.scale_factor),
            format!("border_mode = {}", self.border_mode),
            format!("lowpass_size = {}", self.lowpass_size),
            format!("feature_channels = {}", self.feature_channels),
            format!("num_blocks = {}", self.num_blocks),
            format!("conv_kernel = {}", self.conv_kernel),
            format!("upsample_kernel = {}", self.upsample_kernel),
            format!("variant = {}", self.variant),
            format!("patch_size = {}", self.patch_size),
            format!("patch_stride = {}", self.patch_stride),
            format!("batch_size = {}", self.batch_size),
            format!("iterations = {}", self.iterations),
            format!("learning_rate = {}", self.learning_rate),
            format!("adam_beta1 = {}", self.adam_beta1),
            format!("adam_beta2 = {}", self.adam_beta2),
            format!("adam_eps = {}", self.adam_eps),
            format!("val_fraction = {}", self.val_fraction),
            format!("seed = {}", self.seed),
            format!("checkpoint_every = {}", self.checkpoint_every),
            format!("output_dir = {}", self.output_dir.display()),
        ];
        if let Some(l) = &self.c0_interleave {
            lines.push(format!("c0_interleave = {}", list(l)));
        }
        if let Some(l) = &self.c1_interleave {
            lines.push(format!("c1_interleave = {}", list(l)));
        }
        for (k, v) in [
            ("data_dir", path(&self.data_dir)),
            ("response_file", path(&self.response_file)),
            ("checkpoint", path(&self.checkpoint)),
        ] {
            if let Some(v) = v {
                lines.push(format!("{k} = {v}"));
            }
        }
        if let Some(s) = self.synthetic {
            lines.push(format!(
                "synthetic = {}x{}x{}x{}",
                s.count, s.height, s.width, s.bands
            ));
        }
        if let Some(b) = self.pseudocolor_bands {
            lines.push(format!("pseudocolor_bands = {}", list(&b)));
        }
        lines.join("\n") + "\n"
    }

    pub fn degradation(&self) -> Result<DegradationConfig, Failure> {
        if self.border_mode != "replicate" {
            return Err(Failure::Validation(format!(
                "border_mode {:?} is not supported (only replicate)",
                self.border_mode
            )));
        }
        let d = DegradationConfig {
            blur_kernel_size: self.blur_kernel_size,
            blur_sigma: self.blur_sigma,
            scale_factor: self.scale_factor,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn network(&self, hsi_bands: usize, msi_bands: usize) -> Result<NetworkConfig, Failure> {
        let mut n = NetworkConfig::new(hsi_bands, msi_bands)
            .with_features(self.feature_channels)
            .with_variant(self.variant);
        n.scale_factor = self.scale_factor;
        n.num_blocks = self.num_blocks;
        n.conv_kernel = self.conv_kernel;
        n.upsample_kernel = self.upsample_kernel;
        n.filter = FilterConfig {
            lowpass_size: self.lowpass_size,
        };
        if let Some(p) = &self.c0_interleave {
            n.c0_interleave = InterleaveSpec {
                positions: p.clone(),
            };
        }
        if let Some(p) = &self.c1_interleave {
            n.c1_interleave = InterleaveSpec {
                positions: p.clone(),
            };
        }
        n.validate()?;
        Ok(n)
    }

    pub fn training(&self) -> Result<TrainConfig, Failure> {
        let t = TrainConfig {
            patch_size: self.patch_size,
            patch_stride: self.patch_stride,
            scale_factor: self.scale_factor,
            batch_size: self.batch_size,
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            val_fraction: self.val_fraction,
            seed: self.seed,
            variant: self.variant,
            checkpoint_every: self.checkpoint_every,
        };
        t.validate()?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_text(
            "# comment\nvariant = single_scale\niterations=10\nsynthetic = 2x64x64x8\npseudocolor_bands = 5,3,1\n",
            "t",
        )
        .unwrap();
        assert_eq!(c.variant, Variant::SingleScale);
        assert_eq!(c.iterations, 10);
        let mut d = RunConfig::default();
        d.apply_text(&c.to_text(), "round").unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn unknown_and_bad_values_rejected() {
        let mut c = RunConfig::default();
        assert!(c.set("iterationz", "3").is_err());
        assert!(c.set("variant", "bogus").is_err());
        assert!(c.set("iterations", "-1").is_err());
        assert!(c.set("synthetic", "2x64").is_err());
        assert!(c.apply_text("no equals sign", "t").is_err());
    }

    #[test]
    fn every_key_is_settable() {
        let samples = [
            ("variant", "full"),
            ("border_mode", "replicate"),
            ("c0_interleave", "0,1"),
            ("c1_interleave", "0,1"),
            ("data_dir", "d"),
            ("response_file", "r"),
            ("checkpoint", "c"),
            ("output_dir", "o"),
            ("synthetic", "1x8x8x2"),
            ("pseudocolor_bands", "0,0,0"),
        ];
        for key in KEYS {
            let v = samples
                .iter()
                .find(|(k, _)| k == key)
                .map_or("1", |(_, v)| v);
            RunConfig::default().set(key, v).unwrap();
        }
    }
}
