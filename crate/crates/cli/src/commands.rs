use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use dgf_core::checkpoint::{load_checkpoint, load_into_params};
use dgf_core::dataset::{load_dataset, load_image_tensor, make_dataset, save_image_tensor};
use dgf_core::generator::{build_generator, Generator, GeneratorConfig};
use dgf_core::metrics::{compute_report, report_to_csv, Luma};
use dgf_core::tensor::{no_grad, Tensor};
use dgf_core::train::train_loop;
use dgf_core::Error;

use crate::config::RunConfig;

pub enum CliError {
    Core(Error),
    Usage(String),
    EvalPairing { unpaired: Vec<String>, mismatched: Vec<String> },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(Error::EmptyDataset(_)) => 3,
            CliError::Core(Error::TrainAbort(_)) => 4,
            CliError::Core(Error::Checkpoint(_)) => 5,
            CliError::EvalPairing { .. } => 6,
            CliError::Core(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::EvalPairing { unpaired, mismatched } => {
                writeln!(f, "evaluation pairing failed")?;
                for name in unpaired {
                    writeln!(f, "  unpaired: {name}")?;
                }
                for name in mismatched {
                    writeln!(f, "  size mismatch: {name}")?;
                }
                Ok(())
            }
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult = Result<(), CliError>;

/// Worker pool sized by the DGF_THREADS env var (library default otherwise).
fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(n) = std::env::var("DGF_THREADS") {
        let n: usize = n
            .parse()
            .map_err(|_| CliError::Usage(format!("DGF_THREADS must be a number, got `{n}`")))?;
        builder = builder.num_threads(n.max(1));
    }
    builder
        .build()
        .map_err(|e| CliError::Core(Error::Config(format!("thread pool: {e}"))))
}

pub fn synth(
    src: &Path,
    out: &Path,
    count: usize,
    size: Option<usize>,
    seed: u64,
    config: Option<&Path>,
) -> CliResult {
    let mut cfg = RunConfig::load_or_default(config)?.synth;
    if let Some(size) = size {
        cfg.size = size;
    }
    let summary = make_dataset(src, out, count, &cfg, seed)?;
    println!("wrote {} pairs ({} sources skipped)", summary.written, summary.skipped_sources);
    println!("manifest: {}", summary.manifest_path.display());
    Ok(())
}

pub fn train(
    config: Option<&Path>,
    data: Option<&Path>,
    out: &Path,
    iterations: Option<u64>,
    seed: Option<u64>,
    resume: Option<&Path>,
) -> CliResult {
    let run = RunConfig::load_or_default(config)?;
    let mut train_cfg = run.train.clone();
    if let Some(iters) = iterations {
        train_cfg.iterations = iters;
    }
    if let Some(seed) = seed {
        train_cfg.seed = seed;
    }
    let data_dir = data
        .map(Path::to_path_buf)
        .or_else(|| train_cfg.data_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| CliError::Usage("no dataset: pass --data or set train.data_dir".into()))?;
    train_cfg.data_dir = Some(data_dir.display().to_string());

    let pairs = load_dataset(&data_dir)?;
    let outcome = train_loop(&train_cfg, &run.generator, &run.discriminator, &pairs, out, resume)?;
    println!("finished at iteration {}", outcome.final_iteration);
    println!("checkpoint: {}", outcome.checkpoint_path.display());
    println!("log: {}", outcome.log_path.display());
    Ok(())
}

fn generator_from_checkpoint(
    ckpt_path: &Path,
    config: Option<&Path>,
) -> Result<Generator<f32>, CliError> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let gen_cfg: GeneratorConfig = match config {
        Some(path) => RunConfig::load(path)?.generator,
        None => match ckpt.config.get("generator") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| CliError::Core(Error::Config(format!("checkpoint generator config: {e}"))))?,
            None => GeneratorConfig::default(),
        },
    };
    let gen = build_generator::<f32>(&gen_cfg, 0)?;
    load_into_params(&ckpt, &gen.named_parameters())?;
    Ok(gen)
}

fn deblur_one(gen: &Generator<f32>, input: &Path, output: &Path) -> Result<f64, CliError> {
    let image = load_image_tensor(input)?;
    let shape = image.shape().to_vec();
    let batched = Tensor::new(
        &[1, shape[0], shape[1], shape[2]],
        image.to_vec(),
        false,
    )
    .map_err(CliError::from)?;
    let start = Instant::now();
    let out = no_grad(|| gen.forward(&batched, false, 0)).map_err(CliError::from)?;
    let elapsed = start.elapsed().as_secs_f64();
    let out3 = Tensor::new(&shape, out.to_vec(), false).map_err(CliError::from)?;
    save_image_tensor(&out3, output)?;
    Ok(elapsed)
}

pub fn deblur(ckpt: &Path, input: &Path, out: &Path, config: Option<&Path>) -> CliResult {
    let gen = generator_from_checkpoint(ckpt, config)?;

    if input.is_dir() {
        std::fs::create_dir_all(out).map_err(Error::from)?;
        let mut files: Vec<PathBuf> = std::fs::read_dir(input)
            .map_err(Error::from)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        let pool = thread_pool()?;
        let results: Vec<Result<(), CliError>> = pool.install(|| {
            files
                .par_iter()
                .map(|file| {
                    let target = out.join(file.file_name().unwrap());
                    let secs = deblur_one(&gen, file, &target)?;
                    println!("{} -> {} ({secs:.3} s)", file.display(), target.display());
                    Ok(())
                })
                .collect()
        });
        for r in results {
            r?;
        }
    } else {
        let secs = deblur_one(&gen, input, out)?;
        println!("{} -> {} ({secs:.3} s)", input.display(), out.display());
    }
    Ok(())
}

pub fn eval(pred: &Path, reference: &Path, out: &Path, config: Option<&Path>) -> CliResult {
    let toggles = RunConfig::load_or_default(config)?.metrics;
    let list = |dir: &Path| -> Result<Vec<String>, CliError> {
        let mut names: Vec<String> = std::fs::read_dir(dir)
            .map_err(Error::from)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        names.sort();
        Ok(names)
    };
    let pred_names = list(pred)?;
    let ref_names = list(reference)?;

    let mut unpaired: Vec<String> = Vec::new();
    for n in &pred_names {
        if !ref_names.contains(n) {
            unpaired.push(format!("{} (no reference)", n));
        }
    }
    for n in &ref_names {
        if !pred_names.contains(n) {
            unpaired.push(format!("{} (no prediction)", n));
        }
    }
    if !unpaired.is_empty() {
        return Err(CliError::EvalPairing { unpaired, mismatched: Vec::new() });
    }
    if pred_names.is_empty() {
        return Err(CliError::Core(Error::EmptyDataset(format!(
            "no PNG files under {}",
            pred.display()
        ))));
    }

    let pool = thread_pool()?;
    let loaded: Vec<Result<(String, Luma, Luma), CliError>> = pool.install(|| {
        pred_names
            .par_iter()
            .map(|name| {
                let p = load_image_tensor(&pred.join(name))?;
                let r = load_image_tensor(&reference.join(name))?;
                Ok((name.clone(), Luma::from_tensor(&p)?, Luma::from_tensor(&r)?))
            })
            .collect()
    });

    let mut pairs = Vec::with_capacity(loaded.len());
    let mut mismatched = Vec::new();
    for item in loaded {
        let (name, p, r) = item?;
        if p.height != r.height || p.width != r.width {
            mismatched.push(name);
        } else {
            pairs.push((p, r));
        }
    }
    if !mismatched.is_empty() {
        return Err(CliError::EvalPairing { unpaired: Vec::new(), mismatched });
    }

    let report = compute_report(&pairs, &toggles)?;
    std::fs::create_dir_all(out).map_err(Error::from)?;
    let json_path = out.join("report.json");
    let csv_path = out.join("report.csv");
    std::fs::write(&json_path, serde_json::to_string_pretty(&report).map_err(Error::from)?)
        .map_err(Error::from)?;
    std::fs::write(&csv_path, report_to_csv(&report)).map_err(Error::from)?;

    for (name, series) in [
        ("psnr", &report.psnr),
        ("ssim", &report.ssim),
        ("ms_ssim", &report.ms_ssim),
        ("uiqi", &report.uiqi),
    ] {
        if let Some(s) = series {
            println!("{name}: mean {:.6} over {} images", s.mean, report.count);
        }
    }
    println!("report: {} / {}", json_path.display(), csv_path.display());
    Ok(())
}

pub fn config_cmd(emit_defaults: bool, file: Option<&Path>) -> CliResult {
    if emit_defaults {
        let cfg = RunConfig::default();
        println!("{}", serde_json::to_string_pretty(&cfg).map_err(Error::from)?);
        return Ok(());
    }
    if let Some(path) = file {
        RunConfig::load(path)?;
        println!("{} is a valid run config", path.display());
        return Ok(());
    }
    Err(CliError::Usage(
        "nothing to do: pass --emit-defaults or a config file to validate".into(),
    ))
}
