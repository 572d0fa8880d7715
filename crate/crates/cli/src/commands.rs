use std::fs;
use std::path::{Path, PathBuf};

use hsrnet::cube::{export_pseudocolor, load_spectral_response, read_cube, write_cube};
use hsrnet::degradation::simulate_pair;
use hsrnet::metrics::{self, MetricsReport};
use hsrnet::network::{count_parameters, forward};
use hsrnet::ops::gradcheck::{check_all, GradCheckOptions};
use hsrnet::synthetic::{rgb_response, synthetic_cube};
use hsrnet::trainer::{
    extract_patches, load_checkpoint, loss_log_csv, split_dataset, PatchDataset, TrainOutputs,
    Trainer,
};
use hsrnet::{HyperCube, SpectralResponse, Tensor, Variant};

use crate::config::RunConfig;
use crate::Failure;

type CliResult<T = ()> = Result<T, Failure>;

struct Scene {
    name: String,
    cube: HyperCube<f32>,
    scale: f64,
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn ensure_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn require_file(path: &Path, what: &str) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Validation(format!(
            "{what} {} does not exist",
            path.display()
        )))
    }
}

/// Reference cubes in `data_dir` are `*.hsc` files that are not themselves
/// outputs of this tool.
fn is_reference_cube(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    name.ends_with(".hsc")
        && ![".lr.hsc", ".msi.hsc", ".fused.hsc", ".ref.hsc"]
            .iter()
            .any(|s| name.ends_with(s))
}

fn list_cubes(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    if cfg.synthetic.is_some() {
        return Ok(Vec::new());
    }
    let dir = cfg.data_dir.as_ref().ok_or_else(|| {
        Failure::Validation("set data_dir (or synthetic) to choose input cubes".into())
    })?;
    if !dir.is_dir() {
        return Err(Failure::Validation(format!(
            "data_dir {} is not a directory",
            dir.display()
        )));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_reference_cube(p))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::Validation(format!(
            "no cubes found in {} (expected *.hsc files)",
            dir.display()
        )));
    }
    Ok(paths)
}

/// Loads and max-normalizes every input cube.
fn load_scenes(cfg: &RunConfig, paths: &[PathBuf]) -> CliResult<Vec<Scene>> {
    if let Some(s) = cfg.synthetic {
        return Ok((0..s.count)
            .map(|i| Scene {
                name: format!("synthetic_{i}"),
                cube: synthetic_cube(s.height, s.width, s.bands, cfg.seed.wrapping_add(i as u64)),
                scale: 1.0,
            })
            .collect());
    }
    paths
        .iter()
        .map(|p| {
            let mut cube = read_cube(p)?;
            let scale = cube.normalize_max();
            let name = p
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("cube")
                .to_string();
            Ok(Scene { name, cube, scale })
        })
        .collect()
}

fn response_for(cfg: &RunConfig, scenes: &[Scene]) -> CliResult<SpectralResponse> {
    let first = &scenes[0].cube;
    for s in scenes {
        if s.cube.bands != first.bands || s.cube.wavelengths != first.wavelengths {
            return Err(Failure::Validation(format!(
                "{} has different bands than {}",
                s.name, scenes[0].name
            )));
        }
    }
    match &cfg.response_file {
        Some(path) => Ok(load_spectral_response(path, &first.wavelengths)?),
        None if first.wavelengths.iter().all(|&w| w > 0.0) => Ok(rgb_response(&first.wavelengths)),
        None => Err(Failure::Validation(
            "cube wavelengths are unknown; set response_file".into(),
        )),
    }
}

fn validate_pseudocolor(cfg: &RunConfig, bands: usize) -> CliResult {
    if let Some(b) = cfg.pseudocolor_bands {
        if b.iter().any(|&i| i >= bands) {
            return Err(Failure::Validation(format!(
                "pseudocolor_bands {b:?} out of range for {bands} bands"
            )));
        }
    }
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> CliResult {
    let degrade = cfg.degradation()?;
    let paths = list_cubes(cfg)?;
    if let Some(r) = &cfg.response_file {
        require_file(r, "response_file")?;
    }
    let scenes = load_scenes(cfg, &paths)?;
    let response = response_for(cfg, &scenes)?;
    for s in &scenes {
        let (h, w, f) = (s.cube.height, s.cube.width, degrade.scale_factor);
        if h % f != 0 || w % f != 0 {
            return Err(Failure::Validation(format!(
                "{} is {h}×{w}, not divisible by scale_factor {f}",
                s.name
            )));
        }
        validate_pseudocolor(cfg, s.cube.bands)?;
    }

    let out = &cfg.output_dir;
    ensure_dir(out)?;
    let mut scales = String::from("name,scale\n");
    for s in &scenes {
        let (lr, msi) = simulate_pair(&s.cube, &response, &degrade)?;
        write_cube(&s.cube, out.join(format!("{}.ref.hsc", s.name)))?;
        write_cube(&lr, out.join(format!("{}.lr.hsc", s.name)))?;
        write_cube(&msi, out.join(format!("{}.msi.hsc", s.name)))?;
        if let Some(bands) = cfg.pseudocolor_bands {
            export_pseudocolor(&s.cube, bands, out.join(format!("{}.ref.png", s.name)))?;
            export_pseudocolor(&lr, bands, out.join(format!("{}.lr.png", s.name)))?;
            let m = msi.bands;
            let rgb = if m >= 3 { [0, 1, 2] } else { [0, 0, 0] };
            export_pseudocolor(
                &msi,
                rgb.map(|b| b.min(m - 1)),
                out.join(format!("{}.msi.png", s.name)),
            )?;
        }
        scales.push_str(&format!("{},{:e}\n", s.name, s.scale));
        println!(
            "{}: {}×{}×{} -> lr {}×{}×{}, msi {}×{}×{}",
            s.name,
            s.cube.height,
            s.cube.width,
            s.cube.bands,
            lr.height,
            lr.width,
            lr.bands,
            msi.height,
            msi.width,
            msi.bands
        );
    }
    write_text(&out.join("normalization.csv"), &scales)
}

struct Prepared {
    train: PatchDataset,
    val: PatchDataset,
    hsi_bands: usize,
    msi_bands: usize,
    provenance: String,
}

fn prepare_data(cfg: &RunConfig) -> CliResult<Prepared> {
    let degrade = cfg.degradation()?;
    let tcfg = cfg.training()?;
    let paths = list_cubes(cfg)?;
    if let Some(r) = &cfg.response_file {
        require_file(r, "response_file")?;
    }
    let scenes = load_scenes(cfg, &paths)?;
    let response = response_for(cfg, &scenes)?;
    let cubes: Vec<HyperCube<f32>> = scenes.iter().map(|s| s.cube.clone()).collect();
    let data = extract_patches(&cubes, &response, &degrade, &tcfg)?;
    let (train, val) = split_dataset(&data, tcfg.val_fraction, tcfg.seed)?;
    let mut provenance = String::from("split,index,source,row,col\n");
    for (split, ds) in [("train", &train), ("val", &val)] {
        for (i, p) in ds.patches.iter().enumerate() {
            provenance.push_str(&format!(
                "{split},{i},{},{},{}\n",
                scenes[p.source].name, p.row, p.col
            ));
        }
    }
    Ok(Prepared {
        train,
        val,
        hsi_bands: cubes[0].bands,
        msi_bands: response.out_bands,
        provenance,
    })
}

pub fn train(cfg: &RunConfig, resume: bool) -> CliResult {
    let data = prepare_data(cfg)?;
    let net = cfg.network(data.hsi_bands, data.msi_bands)?;
    let tcfg = cfg.training()?;
    let out = &cfg.output_dir;
    let ckpt = cfg
        .checkpoint
        .clone()
        .unwrap_or_else(|| out.join("checkpoint.hsck"));
    let log_path = out.join("loss_log.csv");
    let mut trainer = if resume {
        require_file(&ckpt, "checkpoint")?;
        let c = load_checkpoint(&ckpt, &net)?;
        Trainer::resume(&net, &tcfg, data.train, data.val, c)?
    } else {
        Trainer::new(&net, &tcfg, data.train, data.val)?
    };
    ensure_dir(out)?;
    write_text(&out.join("run.cfg"), &cfg.to_text())?;
    write_text(&out.join("provenance.csv"), &data.provenance)?;
    println!(
        "training {} ({} parameters) on {} patches, validating on {}",
        net.variant,
        count_parameters(&trainer.params),
        trainer.train_set().len(),
        trainer.val_set().len()
    );
    let outputs = TrainOutputs {
        checkpoint: Some(ckpt.clone()),
    };
    let result = trainer.run(&outputs);
    let text = if resume && log_path.is_file() {
        let prev = fs::read_to_string(&log_path).map_err(|e| io_err(&log_path, e))?;
        prev + &loss_log_csv(&trainer.log, false)
    } else {
        loss_log_csv(&trainer.log, true)
    };
    write_text(&log_path, &text)?;
    result?;
    if let Some(last) = trainer.log.last() {
        println!(
            "step {}: train loss {:e}, checkpoint {}",
            last.step,
            last.train_loss,
            ckpt.display()
        );
    }
    Ok(())
}

fn stem_without(path: &Path, suffix: &str) -> String {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("cube")
        .trim_end_matches(".hsc");
    name.strip_suffix(suffix).unwrap_or(name).to_string()
}

pub fn fuse(
    cfg: &RunConfig,
    lr_path: &Path,
    msi_path: &Path,
    checkpoint: Option<&Path>,
) -> CliResult {
    require_file(lr_path, "LR-HSI")?;
    require_file(msi_path, "HR-MSI")?;
    let ckpt = checkpoint
        .map(Path::to_path_buf)
        .or_else(|| cfg.checkpoint.clone())
        .ok_or_else(|| {
            Failure::Validation("no checkpoint given (--checkpoint or checkpoint key)".into())
        })?;
    require_file(&ckpt, "checkpoint")?;
    let lr = read_cube(lr_path)?;
    let msi = read_cube(msi_path)?;
    let f = cfg.scale_factor;
    if msi.height != lr.height * f || msi.width != lr.width * f {
        return Err(Failure::Validation(format!(
            "HR-MSI is {}×{}, expected {}×{} for a {}×{} LR-HSI at scale {f}",
            msi.height,
            msi.width,
            lr.height * f,
            lr.width * f,
            lr.height,
            lr.width
        )));
    }
    let net = cfg.network(lr.bands, msi.bands)?;
    let params = load_checkpoint(&ckpt, &net)?.params;
    let out = forward(&params, &net, &lr.to_tensor(), &msi.to_tensor(), false)?;
    let fused = HyperCube::from_tensor(&out.output, 0, lr.wavelengths.clone())?;
    ensure_dir(&cfg.output_dir)?;
    let path = cfg
        .output_dir
        .join(format!("{}.fused.hsc", stem_without(lr_path, ".lr")));
    write_cube(&fused, &path)?;
    println!(
        "fused {}×{}×{} + {}×{}×{} -> {}×{}×{} ({})",
        lr.height,
        lr.width,
        lr.bands,
        msi.height,
        msi.width,
        msi.bands,
        fused.height,
        fused.width,
        fused.bands,
        path.display()
    );
    Ok(())
}

pub fn evaluate(cfg: &RunConfig, reference: &Path, estimate: &Path, header: bool) -> CliResult {
    require_file(reference, "reference")?;
    require_file(estimate, "estimate")?;
    let r = read_cube(reference)?;
    let e = read_cube(estimate)?;
    let report = metrics::report(&r, &e, cfg.scale_factor as f64)?;
    if header {
        println!("{}", MetricsReport::CSV_HEADER);
    }
    println!("{}", report.csv_row(&stem_without(estimate, ".fused")));
    Ok(())
}

/// Mean of each index over the patches of `data`.
fn validation_report(
    trainer: &Trainer,
    data: &PatchDataset,
    ratio: f64,
) -> CliResult<MetricsReport> {
    let mut acc = MetricsReport {
        psnr: 0.0,
        sam: 0.0,
        ergas: 0.0,
        ssim: 0.0,
        ratio,
    };
    for p in &data.patches {
        let out = forward(&trainer.params, &trainer.net, &p.lr, &p.msi, false)?;
        let reference = HyperCube::from_tensor(&p.hr, 0, vec![0.0; p.hr.channels()])?;
        let estimate = HyperCube::from_tensor(&out.output, 0, vec![0.0; p.hr.channels()])?;
        let r = metrics::report(&reference, &estimate, ratio)?;
        acc.psnr += r.psnr;
        acc.sam += r.sam;
        acc.ergas += r.ergas;
        acc.ssim += r.ssim;
    }
    let n = data.len() as f64;
    acc.psnr /= n;
    acc.sam /= n;
    acc.ergas /= n;
    acc.ssim /= n;
    Ok(acc)
}

fn batch_order_csv(trainer: &mut Trainer, iterations: usize) -> String {
    let mut s = String::from("step,indices\n");
    for step in 0..iterations {
        let idx: Vec<String> = trainer
            .batch_indices(step)
            .iter()
            .map(|i| i.to_string())
            .collect();
        s.push_str(&format!("{},{}\n", step + 1, idx.join(" ")));
    }
    s
}

pub fn ablate(cfg: &RunConfig) -> CliResult {
    let data = prepare_data(cfg)?;
    let mut configs = Vec::new();
    for v in Variant::ALL {
        let mut c = cfg.clone();
        c.variant = v;
        configs.push((v, c.network(data.hsi_bands, data.msi_bands)?, c.training()?));
    }
    let out = &cfg.output_dir;
    ensure_dir(out)?;
    write_text(&out.join("run.cfg"), &cfg.to_text())?;
    write_text(&out.join("provenance.csv"), &data.provenance)?;

    let ratio = cfg.scale_factor as f64;
    let mut table = format!("{}\n", MetricsReport::CSV_HEADER);
    println!("{}", MetricsReport::CSV_HEADER);
    for (variant, net, tcfg) in configs {
        let mut trainer = Trainer::new(&net, &tcfg, data.train.clone(), data.val.clone())?;
        write_text(
            &out.join(format!("{variant}.batches.csv")),
            &batch_order_csv(&mut trainer, tcfg.iterations),
        )?;
        let outputs = TrainOutputs {
            checkpoint: Some(out.join(format!("{variant}.hsck"))),
        };
        let result = trainer.run(&outputs);
        write_text(
            &out.join(format!("{variant}.loss_log.csv")),
            &loss_log_csv(&trainer.log, true),
        )?;
        let row = match result {
            Ok(()) => validation_report(&trainer, &data.val, ratio)?.csv_row(variant.as_str()),
            Err(e @ (hsrnet::Error::Diverged { .. } | hsrnet::Error::NonFiniteGradient(_))) => {
                format!("{variant},nan,nan,nan,nan # diverged: {e}")
            }
            Err(e) => return Err(e.into()),
        };
        println!("{row}");
        table.push_str(&row);
        table.push('\n');
    }
    write_text(&out.join("ablation.csv"), &table)
}

pub fn gradcheck(cfg: &RunConfig, inject_fault: bool) -> CliResult {
    let options = GradCheckOptions {
        inject_fault,
        ..Default::default()
    };
    let reports = check_all(cfg.seed, &options)?;
    for r in &reports {
        println!("{}", r.row());
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!(
        "{} of {} operators passed",
        reports.len() - failed,
        reports.len()
    );
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} gradient checks failed")));
    }
    // Keeps the f64 path exercised end to end even when the registry changes.
    debug_assert!(Tensor::<f64>::zeros([1, 1, 1, 1]).is_finite());
    Ok(())
}
