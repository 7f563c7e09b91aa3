//! Command implementations behind the binary's subcommands.
//!
//! Exit codes are stable API: 0 success, 2 configuration problem, 3
//! numeric failure (non-finite loss or a failed gradient check), 4
//! artifact mismatch (model blob incompatible). Run outputs land in a
//! fresh numbered directory under the configured output root, written
//! atomically, so re-running never overwrites earlier results.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::attack::{robust_accuracy, AttackConfig, AttackReport};
use crate::config::ExperimentConfig;
use crate::data::{load_cifar10_binary, load_idx, normalize, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::fdt::compose_batch;
use crate::gradcheck;
use crate::model::{atomic_write, reference_description, Model};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::train::{evaluate, train_run};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_ARTIFACT: i32 = 4;

/// Stable mapping from error kind to process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::Usage(_) => EXIT_ARTIFACT,
        _ => EXIT_FAILURE,
    }
}

/// Load one split of a dataset spec:
/// `synthetic:C:TRAIN:VAL:Y:X:NOISE` (seeded from the run seed),
/// `fmnist:DIR` (IDX pairs) or `cifar10:DIR` (binary batches).
pub fn load_split(spec: &str, split: Split, seed: u64) -> Result<LabeledDataset<f32>> {
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    match kind {
        "synthetic" => {
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() != 6 {
                return Err(Error::Config(format!(
                    "synthetic spec needs C:TRAIN:VAL:Y:X:NOISE, got '{rest}'"
                )));
            }
            let nums: Vec<f64> = parts
                .iter()
                .map(|p| {
                    p.parse::<f64>().map_err(|_| {
                        Error::Config(format!("synthetic spec: '{p}' is not a number"))
                    })
                })
                .collect::<Result<_>>()?;
            let (c, train_n, val_n, y, x, noise) = (
                nums[0] as usize,
                nums[1] as usize,
                nums[2] as usize,
                nums[3] as usize,
                nums[4] as usize,
                nums[5],
            );
            let (train, val) =
                crate::train::synthetic_split::<f32>(c, train_n, val_n, y, x, noise, seed)?;
            Ok(match split {
                Split::Train => train,
                Split::Validation => val,
            })
        }
        "fmnist" => {
            let dir = Path::new(rest);
            let (images, labels) = match split {
                Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
                Split::Validation => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
            };
            load_idx(&dir.join(images), &dir.join(labels), split, 10)
        }
        "cifar10" => {
            let dir = Path::new(rest);
            let names: Vec<PathBuf> = match split {
                Split::Train => (1..=5)
                    .map(|i| dir.join(format!("data_batch_{i}.bin")))
                    .filter(|p| p.exists())
                    .collect(),
                Split::Validation => vec![dir.join("test_batch.bin")],
            };
            if names.is_empty() {
                return Err(Error::Config(format!(
                    "no cifar10 batch files found under {}",
                    dir.display()
                )));
            }
            let refs: Vec<&Path> = names.iter().map(|p| p.as_path()).collect();
            load_cifar10_binary(&refs, split)
        }
        other => Err(Error::Config(format!(
            "unknown dataset kind '{other}' (expected synthetic, fmnist or cifar10)"
        ))),
    }
}

fn take_subset(ds: LabeledDataset<f32>, count: usize) -> Result<LabeledDataset<f32>> {
    if count == 0 || count >= ds.len() {
        Ok(ds)
    } else {
        ds.take(count)
    }
}

/// Next free `run-NNNN` directory under `base`.
pub fn next_run_dir(base: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(base)?;
    let mut max = 0usize;
    for entry in std::fs::read_dir(base)? {
        let name = entry?.file_name();
        if let Some(n) = name
            .to_str()
            .and_then(|s| s.strip_prefix("run-"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            max = max.max(n + 1);
        }
    }
    let dir = base.join(format!("run-{max:04}"));
    std::fs::create_dir(&dir)?;
    Ok(dir)
}

pub struct TrainArtifacts {
    pub run_dir: PathBuf,
    pub model_path: PathBuf,
    pub metrics_path: PathBuf,
    pub final_accuracy: f64,
}

/// Train per the config file and write model blob, metrics CSV and run
/// summary into a fresh run directory.
pub fn cmd_train(
    config_path: &Path,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
) -> Result<TrainArtifacts> {
    let mut config = ExperimentConfig::from_file(config_path)?;
    if let Some(seed) = seed_override {
        config.train.seed = seed;
    }
    if let Some(out) = out_override {
        config.out_dir = out;
    }

    let train_ds = take_subset(
        load_split(&config.dataset, Split::Train, config.train.seed)?,
        config.train_count,
    )?;
    let val_ds = take_subset(
        load_split(&config.dataset, Split::Validation, config.train.seed)?,
        config.val_count,
    )?;

    let description = config
        .model
        .clone()
        .unwrap_or_else(|| reference_description(train_ds.class_count()));

    println!("train: {} ({} train / {} val images)", config.dataset, train_ds.len(), val_ds.len());
    println!("model: {description}");
    println!("config: {}", config.train.header_line());

    let (model, log) = train_run::<f32>(
        &description,
        &train_ds,
        Some(&val_ds),
        &config.train,
        |entry| {
            println!(
                "epoch {:>3}  loss {:<10.6} acc {:<8.4} lr {:<8.5} {:.1}s",
                entry.epoch, entry.train_loss, entry.clean_accuracy, entry.lr, entry.wall_secs
            );
        },
    )?;

    let run_dir = next_run_dir(&config.out_dir)?;
    let model_path = run_dir.join("model.bin");
    let metrics_path = run_dir.join("metrics.csv");
    model.save(&model_path)?;
    atomic_write(&metrics_path, log.to_csv().as_bytes())?;

    let final_accuracy = log.entries.last().map(|e| e.clean_accuracy).unwrap_or(0.0);
    let mut summary = String::new();
    let _ = writeln!(summary, "command=train");
    let _ = writeln!(summary, "config_file={}", config_path.display());
    let _ = writeln!(summary, "dataset={}", config.dataset);
    let _ = writeln!(summary, "model={description}");
    let _ = writeln!(summary, "{}", log.header);
    let _ = writeln!(summary, "epochs_run={}", log.entries.len());
    let _ = writeln!(summary, "final_accuracy={final_accuracy}");
    let _ = writeln!(summary, "total_wall_secs={:.3}", log.total_wall_secs());
    atomic_write(&run_dir.join("summary.txt"), summary.as_bytes())?;

    println!("artifacts: {}", run_dir.display());
    Ok(TrainArtifacts {
        run_dir,
        model_path,
        metrics_path,
        final_accuracy,
    })
}

/// Clean accuracy of a stored model on a dataset's validation split.
pub fn cmd_eval(
    model_path: &Path,
    dataset: &str,
    count: usize,
    seed: u64,
    batch: usize,
) -> Result<f64> {
    let mut model: Model<f32> = Model::load(model_path)?;
    let ds = take_subset(load_split(dataset, Split::Validation, seed)?, count)?;
    let accuracy = evaluate(&mut model, &ds, &crate::config::default_augment(), batch)?;
    println!("clean_accuracy={accuracy} images={}", ds.len());
    Ok(accuracy)
}

/// Structured one-record-per-epsilon report text.
pub fn format_attack_report(reports: &[AttackReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let _ = writeln!(
            out,
            "epsilon={} robust_accuracy={} clean_accuracy={} images={} iterations={}",
            r.epsilon,
            r.robust_accuracy(),
            r.clean_accuracy(),
            r.images,
            r.iterations
        );
    }
    out
}

/// Attack a stored model at every epsilon and write one report record per
/// epsilon, in the order given.
#[allow(clippy::too_many_arguments)]
pub fn cmd_attack(
    model_path: &Path,
    dataset: &str,
    epsilons: &[f64],
    iterations: usize,
    count: usize,
    batch: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<Vec<AttackReport>> {
    if epsilons.is_empty() {
        return Err(Error::Config("need at least one epsilon".into()));
    }
    let mut model: Model<f32> = Model::load(model_path)?;
    let ds = take_subset(load_split(dataset, Split::Validation, seed)?, count)?;

    let mut reports = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let mut config: AttackConfig<f32> = AttackConfig::for_epsilon(eps);
        config.iterations = iterations;
        let report = robust_accuracy(
            &mut model,
            &ds,
            &crate::config::default_augment(),
            &config,
            batch,
        )?;
        println!(
            "epsilon={eps} robust_accuracy={} clean_accuracy={}",
            report.robust_accuracy(),
            report.clean_accuracy()
        );
        reports.push(report);
    }

    if let Some(path) = out {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        atomic_write(path, format_attack_report(&reports).as_bytes())?;
    }
    Ok(reports)
}

/// Run the double-precision finite-difference suite; one line per check.
pub fn cmd_gradcheck() -> Result<()> {
    let outcomes = gradcheck::run_suite();
    let mut failed = false;
    for o in &outcomes {
        let status = if o.passed() { "PASS" } else { "FAIL" };
        println!("{status}  {:<24} max_rel_err={:.3e}", o.name, o.max_rel_err);
        failed |= !o.passed();
    }
    if failed {
        return Err(Error::Numeric(0));
    }
    Ok(())
}

/// Dump composite examples as flat binary tensors with text sidecars.
///
/// Binary layout per file: z, y, x as little-endian u32, then the f32
/// pixel values in (z, y, x) row-major order.
pub fn cmd_compose(
    dataset: &str,
    count: usize,
    seed: u64,
    force_k: Option<usize>,
    out_dir: &Path,
) -> Result<()> {
    if count == 0 {
        return Err(Error::Config("compose count must be >= 1".into()));
    }
    let ds = load_split(dataset, Split::Train, seed)?;
    std::fs::create_dir_all(out_dir)?;

    let norm = crate::config::default_augment();
    let mut prep =
        |img: crate::tensor::Tensor<f32>, _: &mut Rng| Ok(normalize(&img, &norm));
    let mut rng = Rng::new(seed);
    let examples = compose_batch(&ds, count, &mut rng, force_k, &mut prep)?;

    for (i, ex) in examples.iter().enumerate() {
        let shape = ex.image.shape();
        let mut blob = Vec::new();
        for dim in [shape.z, shape.y, shape.x] {
            blob.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &v in ex.image.as_slice() {
            v.write_le(&mut blob);
        }
        atomic_write(&out_dir.join(format!("composite-{i:03}.bin")), &blob)?;

        let mut sidecar = String::new();
        for (&class, &factor) in ex.classes.iter().zip(ex.factors.as_slice()) {
            let _ = writeln!(sidecar, "class={class} factor={factor}");
        }
        let sum: f64 = ex.factors.as_slice().iter().sum();
        let _ = writeln!(sidecar, "k={} factor_sum={sum}", ex.classes.len());
        atomic_write(&out_dir.join(format!("composite-{i:03}.txt")), sidecar.as_bytes())?;
    }
    println!("wrote {count} composite examples to {}", out_dir.display());
    Ok(())
}
