use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use lowprec_core::ensemble::{self, EnsembleConfig, EnsembleMode, LossFamily};
use lowprec_core::experiment::{self, SubsetScheme, SweepConfig};
use lowprec_core::metrics::{diversity_report, Connectivity, LesionOptions};
use lowprec_core::segmenter::{ArchConfig, TrainConfig};
use lowprec_core::synth::{self, Dataset, LabeledScene, SceneConfig, Split};
use lowprec_core::{BinaryMask, GridFile};
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::benchmark;
use crate::error::CliError;
use crate::report;

pub fn version_text() -> String {
    format!(
        "lowprec {}\ngrid files: {} {}\nmodel files: {} v{}\ndataset manifest: v1\nensemble manifest: v1\n",
        lowprec_core::VERSION,
        lowprec_core::grid::MAGIC,
        lowprec_core::grid::VERSION,
        lowprec_core::segmenter::MODEL_FORMAT,
        lowprec_core::segmenter::MODEL_FORMAT_VERSION,
    )
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData(a) => gen_data(&a),
        Command::TrainPool(a) => train_pool(&a),
        Command::Predict(a) => predict(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Diversity(a) => diversity(&a),
        Command::SweepK(a) => sweep_k(&a),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn scene_config(a: &GenDataArgs) -> SceneConfig {
    SceneConfig {
        width: a.width,
        height: a.height,
        fg_radius_range: (a.radius_min, a.radius_max),
        n_distractors_range: (a.distractors_min, a.distractors_max),
        noise_sigma: a.noise_sigma,
        seed: a.seed,
        ..benchmark::scene_config()
    }
}

fn gen_data(a: &GenDataArgs) -> Result<(), CliError> {
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let split = match (a.train, a.val, a.test) {
        (None, None, None) => Split::proportional(a.n),
        (Some(train), Some(val), Some(test)) => Split { train, val, test },
        _ => return Err(usage("give all of --train, --val and --test, or none")),
    };
    let cfg = scene_config(a);
    cfg.validate()?;
    let dataset = synth::generate_dataset(&cfg, a.n, split)?;
    synth::write_dataset(&dataset, &a.out)?;
    println!(
        "wrote {} scenes ({}/{}/{}) to {}",
        a.n,
        split.train,
        split.val,
        split.test,
        a.out.display()
    );
    Ok(())
}

pub fn ensemble_config(a: &TrainPoolArgs) -> EnsembleConfig {
    let mode = match a.mode {
        Mode::Baseline => EnsembleMode::Baseline,
        Mode::LowprecFixed => EnsembleMode::LowPrecFixed,
        Mode::LowprecRandom => EnsembleMode::LowPrecRandom,
    };
    let base = EnsembleConfig::new(mode, a.m);
    EnsembleConfig {
        beta_range: (a.beta_lo, a.beta_hi),
        beta_fixed: a.beta,
        bag_fraction: a.bag_fraction,
        threshold: a.threshold.unwrap_or(base.threshold),
        master_seed: a.seed,
        loss_family: match a.loss {
            Loss::Tversky => LossFamily::Tversky,
            Loss::BalancedCe => LossFamily::BalancedCE,
        },
        arch: ArchConfig {
            hidden_channels: a.hidden,
            num_hidden_layers: a.layers,
            kernel_size: a.kernel,
            coord_channels: !a.no_coords,
            ..benchmark::arch()
        },
        train: TrainConfig {
            epochs: a.epochs,
            batch_size: a.batch_size,
            lr: a.lr,
            ..benchmark::train_config()
        },
        ..base
    }
}

fn train_pool(a: &TrainPoolArgs) -> Result<(), CliError> {
    let cfg = ensemble_config(a);
    cfg.validate()?;
    let dataset = synth::read_dataset(&a.data)?;
    let pairs = dataset.train_pairs();
    let report = experiment::train_pool(&pairs, &cfg, &a.out, |i, result| match result {
        Ok(m) => eprintln!(
            "member {i}: trained, beta {}",
            m.provenance.beta_used.map_or("-".into(), |b| format!("{b:.4}"))
        ),
        Err(e) => eprintln!("member {i}: failed: {e}"),
    })?;
    println!(
        "pool {}: {} trained, {} reused, {} failed",
        a.out.display(),
        report.trained.len(),
        report.reused.len(),
        report.failed.len()
    );
    if !report.failed.is_empty() {
        let detail: Vec<String> = report.failed.iter().map(|(i, e)| format!("member {i}: {e}")).collect();
        return Err(CliError::Numerical(format!(
            "{} of {} members failed ({})",
            report.failed.len(),
            cfg.k,
            detail.join("; ")
        )));
    }
    Ok(())
}

fn split_scenes(dataset: &Dataset, split: SplitName) -> (usize, &[LabeledScene]) {
    let s = dataset.split();
    let range = match split {
        SplitName::Train => s.train_range(),
        SplitName::Val => s.val_range(),
        SplitName::Test => s.test_range(),
        SplitName::All => 0..s.total(),
    };
    (range.start, &dataset.scenes[range])
}

fn load_pool(dir: &Path, threshold: Option<f64>) -> Result<ensemble::Ensemble, CliError> {
    let pool = experiment::read_pool(dir)?;
    Ok(match threshold {
        Some(t) => pool.with_threshold(t)?,
        None => pool,
    })
}

pub fn prob_file(i: usize) -> String {
    format!("scene_{i}.prob.lpg")
}

pub fn mask_file(i: usize) -> String {
    format!("scene_{i}.mask.lpg")
}

pub const PREDICTIONS_FILE: &str = "predictions.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionManifest {
    pub threshold: f64,
    pub members: usize,
    pub scenes: Vec<usize>,
}

fn predict(a: &PredictArgs) -> Result<(), CliError> {
    let dataset = synth::read_dataset(&a.data)?;
    let pool = load_pool(&a.pool, a.threshold)?;
    let (first, scenes) = split_scenes(&dataset, a.split);
    fs::create_dir_all(&a.out).map_err(|e| CliError::Io(format!("{}: {e}", a.out.display())))?;
    for (j, scene) in scenes.iter().enumerate() {
        let (avg, mask) = ensemble::predict(&pool, &scene.image)?;
        avg.save(a.out.join(prob_file(first + j)))?;
        mask.save(a.out.join(mask_file(first + j)))?;
    }
    let manifest = PredictionManifest {
        threshold: pool.config.threshold,
        members: pool.members.len(),
        scenes: (first..first + scenes.len()).collect(),
    };
    let path = a.out.join(PREDICTIONS_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    println!("wrote {} predictions to {}", scenes.len(), a.out.display());
    Ok(())
}

fn lesion_options(connectivity: u32, min_size: usize) -> Result<LesionOptions, CliError> {
    Ok(LesionOptions {
        connectivity: Connectivity::from_count(connectivity)?,
        min_size,
    })
}

fn open_out(path: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            Box::new(fs::File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?)
        }
        None => Box::new(std::io::stdout().lock()),
    })
}

fn evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let dataset = synth::read_dataset(&a.data)?;
    let (first, scenes) = split_scenes(&dataset, a.split);
    let masks: Vec<BinaryMask> = match (&a.pool, &a.pred_dir) {
        (Some(pool), _) => {
            let pool = load_pool(pool, a.threshold)?;
            scenes
                .iter()
                .map(|s| ensemble::predict(&pool, &s.image).map(|(_, m)| m))
                .collect::<Result<_, _>>()?
        }
        (None, Some(dir)) => {
            if a.threshold.is_some() {
                return Err(usage("--threshold applies to --pool, not to stored masks"));
            }
            (first..first + scenes.len())
                .map(|i| BinaryMask::load(dir.join(mask_file(i))))
                .collect::<Result<_, _>>()?
        }
        (None, None) => return Err(usage("give --pool or --pred-dir")),
    };
    let evals = experiment::evaluate_masks(&masks, scenes, first, lesion_options(a.connectivity, a.min_lesion_size)?)?;
    report::write_evaluation(&evals, open_out(&a.out)?)
}

fn diversity(a: &DiversityArgs) -> Result<(), CliError> {
    let dataset = synth::read_dataset(&a.data)?;
    let pool = load_pool(&a.pool, None)?;
    let (first, scenes) = split_scenes(&dataset, a.split);
    let per_scene = scenes
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let maps = ensemble::member_maps(&pool, &s.image)?;
            Ok((first + j, diversity_report(&maps, &s.gt)?))
        })
        .collect::<Result<Vec<_>, lowprec_core::Error>>()?;
    let reports: Vec<_> = per_scene.iter().map(|(_, r)| *r).collect();
    let mean = experiment::mean_diversity(&reports).ok_or_else(|| usage("the split has no scenes"))?;
    report::write_diversity(&per_scene, &mean, open_out(&a.out)?)
}

/// Splits `NAME=DIR` into its parts; a bare `DIR` has no name.
pub fn parse_pool_spec(spec: &str) -> (Option<&str>, &str) {
    match spec.split_once('=') {
        Some((name, dir)) if !name.is_empty() => (Some(name), dir),
        _ => (None, spec),
    }
}

pub const SWEEP_CSV: &str = "sweep.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SWEEP_SVG: &str = "sweep.svg";

fn sweep_k(a: &SweepArgs) -> Result<(), CliError> {
    let dataset = synth::read_dataset(&a.data)?;
    let (_, scenes) = split_scenes(&dataset, a.split);
    let config = SweepConfig {
        k_values: a.k_values.clone(),
        repetitions: a.repetitions,
        seed: a.seed,
        scheme: SubsetScheme::from_name(&a.subset_scheme)?,
    };
    let lesion = lesion_options(a.connectivity, a.min_lesion_size)?;
    let mut rows = Vec::new();
    for spec in &a.pool {
        let (name, dir) = parse_pool_spec(spec);
        let pool = load_pool(Path::new(dir), None)?;
        let method = name.unwrap_or(pool.config.mode.name());
        if rows.iter().any(|r: &experiment::SweepRow| r.method == method) {
            return Err(usage(format!("method tag {method:?} used twice; tag pools as NAME=DIR")));
        }
        eprintln!("sweeping {method} ({} members)", pool.members.len());
        rows.extend(experiment::sweep_k(method, &pool, scenes, pool.config.threshold, &config, lesion)?);
    }
    let summary = experiment::summarize(&rows);
    fs::create_dir_all(&a.out).map_err(|e| CliError::Io(format!("{}: {e}", a.out.display())))?;
    let create = |name: &str| {
        let p = a.out.join(name);
        fs::File::create(&p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
    };
    report::write_sweep(&rows, create(SWEEP_CSV)?)?;
    report::write_summary(&summary, create(SUMMARY_CSV)?)?;
    create(SWEEP_SVG)?.write_all(report::sweep_svg(&summary).as_bytes())?;
    println!("wrote {} sweep rows to {}", rows.len(), a.out.display());
    Ok(())
}
