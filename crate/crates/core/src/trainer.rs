//! Patch datasets, Adam, checkpoints and the training loop.
//!
//! Training is fully deterministic: the batch drawn at step `t` depends only
//! on `(seed, t)`, so a run resumed from a checkpoint replays the exact
//! sequence an uninterrupted run would have seen.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cube::{read_file, ByteReader, HyperCube, SpectralResponse};
use crate::degradation::{simulate_pair, DegradationConfig};
use crate::error::{ensure, Error, Result};
use crate::network::{self, check_compatible, init_network, NetworkConfig, NetworkParams, Variant};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub patch_stride: usize,
    pub scale_factor: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub variant: Variant,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            patch_size: 64,
            patch_stride: 32,
            scale_factor: 4,
            batch_size: 32,
            iterations: 100_000,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            val_fraction: 0.2,
            seed: 0,
            variant: Variant::Full,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.scale_factor >= 1 && self.patch_size.is_multiple_of(self.scale_factor),
            Validation,
            "patch_size {} is not divisible by scale_factor {}",
            self.patch_size,
            self.scale_factor
        );
        ensure!(
            self.patch_size > 0,
            Validation,
            "patch_size must be positive"
        );
        ensure!(
            self.patch_stride > 0,
            Validation,
            "patch_stride must be positive"
        );
        ensure!(
            self.batch_size > 0,
            Validation,
            "batch_size must be positive"
        );
        ensure!(
            self.val_fraction > 0.0 && self.val_fraction < 1.0,
            Validation,
            "val_fraction must lie in (0, 1), got {}",
            self.val_fraction
        );
        ensure!(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            Validation,
            "learning_rate must be positive"
        );
        ensure!(
            (0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2),
            Validation,
            "Adam betas must lie in [0, 1)"
        );
        ensure!(self.adam_eps > 0.0, Validation, "adam_eps must be positive");
        ensure!(
            self.checkpoint_every > 0,
            Validation,
            "checkpoint_every must be positive"
        );
        Ok(())
    }
}

/// One training triple. Tensors are 1×C×H×W.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub hr: Tensor<f32>,
    pub lr: Tensor<f32>,
    pub msi: Tensor<f32>,
    pub source: usize,
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PatchDataset {
    pub patches: Vec<Patch>,
}

impl PatchDataset {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Stacks the selected patches into `(lr, msi, hr)` batches.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>, Tensor<f32>)> {
        let pick = |f: fn(&Patch) -> &Tensor<f32>| {
            Tensor::stack(
                &indices
                    .iter()
                    .map(|&i| f(&self.patches[i]))
                    .collect::<Vec<_>>(),
            )
        };
        Ok((pick(|p| &p.lr)?, pick(|p| &p.msi)?, pick(|p| &p.hr)?))
    }

    /// `index,source,row,col` lines.
    pub fn provenance_csv(&self) -> String {
        let mut s = String::from("index,source,row,col\n");
        for (i, p) in self.patches.iter().enumerate() {
            let _ = writeln!(s, "{i},{},{},{}", p.source, p.row, p.col);
        }
        s
    }
}

fn window_starts(len: usize, size: usize, stride: usize) -> Vec<usize> {
    (0..=(len - size) / stride).map(|i| i * stride).collect()
}

/// Sliding-window HR patches in row-major order, each degraded to its LR-HSI
/// and HR-MSI counterparts.
pub fn extract_patches(
    cubes: &[HyperCube<f32>],
    response: &SpectralResponse,
    degrade: &DegradationConfig,
    config: &TrainConfig,
) -> Result<PatchDataset> {
    config.validate()?;
    ensure!(
        degrade.scale_factor == config.scale_factor,
        Validation,
        "degradation scale factor {} differs from training scale factor {}",
        degrade.scale_factor,
        config.scale_factor
    );
    let size = config.patch_size;
    let mut patches = Vec::new();
    for (source, cube) in cubes.iter().enumerate() {
        ensure!(
            cube.height >= size && cube.width >= size,
            Validation,
            "cube {source} is {}×{}, smaller than patch size {size}",
            cube.height,
            cube.width
        );
        for &row in &window_starts(cube.height, size, config.patch_stride) {
            for &col in &window_starts(cube.width, size, config.patch_stride) {
                let hr = cube.crop(row, col, size, size)?;
                let (lr, msi) = simulate_pair(&hr, response, degrade)?;
                patches.push(Patch {
                    hr: hr.to_tensor(),
                    lr: lr.to_tensor(),
                    msi: msi.to_tensor(),
                    source,
                    row,
                    col,
                });
            }
        }
    }
    Ok(PatchDataset { patches })
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Deterministic shuffled split; the validation part holds
/// `round(n · val_fraction)` patches, at least one and leaving at least one
/// for training when `n ≥ 2`.
pub fn split_dataset(
    dataset: &PatchDataset,
    val_fraction: f64,
    seed: u64,
) -> Result<(PatchDataset, PatchDataset)> {
    ensure!(
        val_fraction > 0.0 && val_fraction < 1.0,
        Validation,
        "val_fraction must lie in (0, 1), got {val_fraction}"
    );
    let n = dataset.len();
    ensure!(
        n >= 2,
        Validation,
        "cannot split {n} patches into train and validation"
    );
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let order = shuffled(n, seed);
    let take = |ids: &[usize]| PatchDataset {
        patches: ids.iter().map(|&i| dataset.patches[i].clone()).collect(),
    };
    Ok((take(&order[n_val..]), take(&order[..n_val])))
}

/// Epoch-shuffled sampling without replacement. The batch at step `t`
/// covers positions `t·B .. t·B+B` of the concatenated epoch permutations.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    len: usize,
    batch: usize,
    seed: u64,
    cached: Option<(usize, Vec<usize>)>,
}

impl BatchSampler {
    pub fn new(len: usize, batch: usize, seed: u64) -> Result<Self> {
        ensure!(
            len > 0,
            Validation,
            "cannot sample from an empty training set"
        );
        ensure!(batch > 0, Validation, "batch size must be positive");
        Ok(Self {
            len,
            batch,
            seed,
            cached: None,
        })
    }

    fn epoch_seed(&self, epoch: usize) -> u64 {
        self.seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(epoch as u64)
    }

    pub fn indices(&mut self, step: usize) -> Vec<usize> {
        (0..self.batch)
            .map(|j| {
                let pos = step * self.batch + j;
                let epoch = pos / self.len;
                if self.cached.as_ref().map(|c| c.0) != Some(epoch) {
                    self.cached = Some((epoch, shuffled(self.len, self.epoch_seed(epoch))));
                }
                self.cached.as_ref().expect("cached").1[pos % self.len]
            })
            .collect()
    }
}

/// First and second moments per parameter, same layout as the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: NetworkParams<T>,
    pub v: NetworkParams<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &NetworkParams<T>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One Adam update with bias correction. Rejects non-finite gradients before
/// touching anything, naming the offending tensor.
pub fn adam_step<T: Real>(
    params: &mut NetworkParams<T>,
    grads: &NetworkParams<T>,
    state: &mut AdamState<T>,
    config: &TrainConfig,
) -> Result<()> {
    let g_all = grads.tensors();
    for (name, _, g) in &g_all {
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    let mut p_all = params.tensors_mut();
    ensure!(
        p_all.len() == g_all.len()
            && p_all
                .iter()
                .zip(&g_all)
                .all(|(p, g)| p.0 == g.0 && p.1.len() == g.2.len()),
        Shape,
        "gradient layout does not match parameters"
    );
    state.t += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let (lr, eps) = (config.learning_rate, config.adam_eps);
    let mut m_all = state.m.tensors_mut();
    let mut v_all = state.v.tensors_mut();
    for (k, (_, p)) in p_all.iter_mut().enumerate() {
        let g = g_all[k].2;
        let m = &mut *m_all[k].1;
        let v = &mut *v_all[k].1;
        for i in 0..p.len() {
            let gi = g[i].as_f64();
            let mi = b1 * m[i].as_f64() + (1.0 - b1) * gi;
            let vi = b2 * v[i].as_f64() + (1.0 - b2) * gi * gi;
            m[i] = T::of_f64(mi);
            v[i] = T::of_f64(vi);
            let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
            p[i] = T::of_f64(p[i].as_f64() - update);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

pub const LOSS_LOG_HEADER: &str = "step,train_loss,val_loss";

pub fn loss_log_csv(records: &[LossRecord], header: bool) -> String {
    let mut s = String::new();
    if header {
        s.push_str(LOSS_LOG_HEADER);
        s.push('\n');
    }
    for r in records {
        let val = r.val_loss.map(|v| format!("{v:e}")).unwrap_or_default();
        let _ = writeln!(s, "{},{:e},{val}", r.step, r.train_loss);
    }
    s
}

/// Parses a loss log written by [`loss_log_csv`].
pub fn parse_loss_log(text: &str) -> Result<Vec<LossRecord>> {
    let mut lines = text.lines();
    ensure!(
        lines.next().map(str::trim) == Some(LOSS_LOG_HEADER),
        Validation,
        "loss log must start with {LOSS_LOG_HEADER:?}"
    );
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::Validation(format!("malformed loss log row {l:?}"));
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(LossRecord {
                step: f[0].parse().map_err(|_| bad())?,
                train_loss: f[1].parse().map_err(|_| bad())?,
                val_loss: if f[2].is_empty() {
                    None
                } else {
                    Some(f[2].parse().map_err(|_| bad())?)
                },
            })
        })
        .collect()
}

// Checkpoint file: "HSCK", version, step, record count, then per record the
// name (u32 length + UTF-8), the shape (u32 rank + u32 dims) and f32 data.

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HSCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const META_RECORD: &str = "meta/network";

fn meta_values(config: &NetworkConfig) -> Vec<f32> {
    let variant = Variant::ALL
        .iter()
        .position(|v| *v == config.variant)
        .expect("listed variant");
    [
        config.hsi_bands,
        config.msi_bands,
        config.scale_factor,
        config.feature_channels,
        config.num_blocks,
        variant,
    ]
    .iter()
    .map(|&v| v as f32)
    .collect()
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub params: NetworkParams<f32>,
    pub adam: AdamState<f32>,
}

pub fn save_checkpoint(
    params: &NetworkParams<f32>,
    state: &AdamState<f32>,
    step: usize,
    config: &NetworkConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let step = u32::try_from(step)
        .map_err(|_| Error::Validation(format!("step {step} does not fit in u32")))?;
    let meta = meta_values(config);
    let mut records: Vec<(String, Vec<usize>, &[f32])> =
        vec![(META_RECORD.to_string(), vec![meta.len()], &meta[..])];
    for (prefix, p) in [
        ("param", params),
        ("adam_m", &state.m),
        ("adam_v", &state.v),
    ] {
        for (name, shape, data) in p.tensors() {
            records.push((format!("{prefix}/{name}"), shape, data));
        }
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&step.to_le_bytes());
    buf.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, shape, data) in &records {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in *data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    // Write-then-rename keeps the previous checkpoint intact on failure.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint written for `config`. Architecture mismatches are
/// reported with both the stored and the requested settings.
pub fn load_checkpoint(path: impl AsRef<Path>, config: &NetworkConfig) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let mut r = ByteReader::new(&bytes, path);
    let corrupt = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: magic,
            expected: CHECKPOINT_MAGIC,
        });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let step = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut records = std::collections::BTreeMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| corrupt("record name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| corrupt(format!("shape of {name} overflows")))?;
        let data = r.f32s(numel)?;
        if !data.iter().all(|v| v.is_finite()) {
            return Err(corrupt(format!("record {name} holds non-finite values")));
        }
        records.insert(name, (shape, data));
    }
    if r.remaining() != 0 {
        return Err(corrupt(format!("{} trailing bytes", r.remaining())));
    }

    let (_, meta) = records
        .get(META_RECORD)
        .ok_or_else(|| corrupt("missing network description".into()))?;
    let wanted = meta_values(config);
    if *meta != wanted {
        let show = |m: &[f32]| {
            let name = Variant::ALL
                .get(m.get(5).copied().unwrap_or(-1.0) as usize)
                .map_or("?", |v| v.as_str());
            format!(
                "hsi_bands {}, msi_bands {}, scale_factor {}, feature_channels {}, num_blocks {}, variant {name}",
                m.first().copied().unwrap_or(f32::NAN),
                m.get(1).copied().unwrap_or(f32::NAN),
                m.get(2).copied().unwrap_or(f32::NAN),
                m.get(3).copied().unwrap_or(f32::NAN),
                m.get(4).copied().unwrap_or(f32::NAN),
            )
        };
        return Err(Error::Validation(format!(
            "checkpoint {} was trained with {}; configuration requests {}",
            path.display(),
            show(meta),
            show(&wanted)
        )));
    }

    let template = init_network::<f32>(config, 0)?;
    let mut fill = |prefix: &str| -> Result<NetworkParams<f32>> {
        let mut p = template.zeros_like();
        let shapes: Vec<Vec<usize>> = template.tensors().into_iter().map(|t| t.1).collect();
        for ((name, dst), shape) in p.tensors_mut().into_iter().zip(shapes) {
            let key = format!("{prefix}/{name}");
            let (stored, data) = records
                .remove(&key)
                .ok_or_else(|| corrupt(format!("missing record {key}")))?;
            if stored != shape {
                return Err(corrupt(format!(
                    "record {key} has shape {stored:?}, expected {shape:?}"
                )));
            }
            dst.copy_from_slice(&data);
        }
        Ok(p)
    };
    let params = fill("param")?;
    let m = fill("adam_m")?;
    let v = fill("adam_v")?;
    check_compatible(&params, config)?;
    Ok(Checkpoint {
        step,
        params,
        adam: AdamState {
            m,
            v,
            t: step as u64,
        },
    })
}

/// Where the trainer writes its artifacts, if anywhere.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct Trainer {
    pub net: NetworkConfig,
    pub config: TrainConfig,
    pub params: NetworkParams<f32>,
    pub adam: AdamState<f32>,
    pub step: usize,
    pub log: Vec<LossRecord>,
    sampler: BatchSampler,
    train: PatchDataset,
    val: PatchDataset,
}

impl Trainer {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(
        net: &NetworkConfig,
        config: &TrainConfig,
        train: PatchDataset,
        val: PatchDataset,
    ) -> Result<Self> {
        let params = init_network::<f32>(net, config.seed)?;
        let adam = AdamState::new(&params);
        Self::from_state(net, config, train, val, params, adam, 0)
    }

    pub fn resume(
        net: &NetworkConfig,
        config: &TrainConfig,
        train: PatchDataset,
        val: PatchDataset,
        checkpoint: Checkpoint,
    ) -> Result<Self> {
        Self::from_state(
            net,
            config,
            train,
            val,
            checkpoint.params,
            checkpoint.adam,
            checkpoint.step,
        )
    }

    fn from_state(
        net: &NetworkConfig,
        config: &TrainConfig,
        train: PatchDataset,
        val: PatchDataset,
        params: NetworkParams<f32>,
        adam: AdamState<f32>,
        step: usize,
    ) -> Result<Self> {
        config.validate()?;
        net.validate()?;
        ensure!(
            net.variant == config.variant,
            Validation,
            "network variant {} differs from training variant {}",
            net.variant,
            config.variant
        );
        ensure!(
            net.scale_factor == config.scale_factor,
            Validation,
            "network scale factor {} differs from training scale factor {}",
            net.scale_factor,
            config.scale_factor
        );
        check_compatible(&params, net)?;
        let sampler = BatchSampler::new(train.len(), config.batch_size, config.seed)?;
        Ok(Self {
            net: net.clone(),
            config: config.clone(),
            params,
            adam,
            step,
            log: Vec::new(),
            sampler,
            train,
            val,
        })
    }

    pub fn train_set(&self) -> &PatchDataset {
        &self.train
    }

    pub fn val_set(&self) -> &PatchDataset {
        &self.val
    }

    /// Patch indices of the batch consumed at `step`.
    pub fn batch_indices(&mut self, step: usize) -> Vec<usize> {
        self.sampler.indices(step)
    }

    /// Forward, loss, backward and one Adam update; returns the loss before
    /// the update.
    pub fn step_once(&mut self) -> Result<f64> {
        let idx = self.sampler.indices(self.step);
        let (y, z, x) = self.train.batch(&idx)?;
        let out = network::forward(&self.params, &self.net, &y, &z, true)?;
        let loss = network::loss_mse(&out.output, &x)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: self.step + 1,
                loss,
            });
        }
        let grads = network::backward(
            &self.params,
            &self.net,
            out.cache.as_ref().expect("retained"),
            &x,
        )?;
        adam_step(&mut self.params, &grads, &mut self.adam, &self.config)?;
        self.step += 1;
        Ok(loss)
    }

    /// Mean loss over `data` with the current parameters.
    pub fn evaluate_loss(&self, data: &PatchDataset) -> Result<f64> {
        ensure!(
            !data.is_empty(),
            Validation,
            "cannot evaluate an empty dataset"
        );
        let idx: Vec<usize> = (0..data.len()).collect();
        let mut total = 0.0;
        for chunk in idx.chunks(self.config.batch_size) {
            let (y, z, x) = data.batch(chunk)?;
            let out = network::forward(&self.params, &self.net, &y, &z, false)?;
            total += network::loss_mse(&out.output, &x)? * chunk.len() as f64;
        }
        Ok(total / data.len() as f64)
    }

    /// Steps until `config.iterations`, recording every step and validating
    /// and checkpointing every `checkpoint_every` steps.
    pub fn run(&mut self, outputs: &TrainOutputs) -> Result<()> {
        while self.step < self.config.iterations {
            let train_loss = self.step_once()?;
            let mut record = LossRecord {
                step: self.step,
                train_loss,
                val_loss: None,
            };
            let boundary = self.step.is_multiple_of(self.config.checkpoint_every)
                || self.step == self.config.iterations;
            if boundary {
                if !self.val.is_empty() {
                    record.val_loss = Some(self.evaluate_loss(&self.val)?);
                }
                if let Some(path) = &outputs.checkpoint {
                    save_checkpoint(&self.params, &self.adam, self.step, &self.net, path)?;
                }
            }
            self.log.push(record);
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step,
            params: self.params.clone(),
            adam: self.adam.clone(),
        }
    }
}

/// Splits `data`, trains from a fresh initialization and returns the final
/// parameters with the loss log.
pub fn train(
    data: &PatchDataset,
    net: &NetworkConfig,
    config: &TrainConfig,
    outputs: &TrainOutputs,
) -> Result<(NetworkParams<f32>, Vec<LossRecord>)> {
    let (train, val) = split_dataset(data, config.val_fraction, config.seed)?;
    let mut trainer = Trainer::new(net, config, train, val)?;
    trainer.run(outputs)?;
    Ok((trainer.params, trainer.log))
}
