//! Experiment protocol: member pools, test-set evaluation, and the
//! ensemble-size sweep.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{
    self, ensemble_average, member_file, threshold, Ensemble, EnsembleConfig, EnsembleManifest,
    ENSEMBLE_FILE,
};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, ImageGrid, ProbMap};
use crate::metrics::{
    diversity_report, lesion_metrics, pixel_metrics, DiversityReport, LesionMetrics, LesionOptions,
    PixelMetrics,
};
use crate::rng::{self, Purpose};
use crate::segmenter::{self, ModelParams};
use crate::synth::LabeledScene;

/// What `train_pool` did with each member slot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoolReport {
    pub trained: Vec<usize>,
    pub reused: Vec<usize>,
    pub failed: Vec<(usize, String)>,
}

/// True when the file at `path` holds member `i` of `config`.
fn member_matches(path: &Path, config: &EnsembleConfig, i: usize) -> bool {
    let Ok(m) = segmenter::load_model(path) else {
        return false;
    };
    let beta = match config.member_beta(i) {
        Ok(b) => b,
        Err(_) => return false,
    };
    m.arch == config.arch
        && m.provenance.init_seed == config.member_init_seed(i)
        && m.provenance.beta_used == Some(beta)
        && m.provenance.loss.map(|l| l.kind) == Some(config.loss_family.kind())
}

/// Trains the `config.k` members of a pool into `dir`, one file per member,
/// then writes the manifest. Members whose files already exist and match the
/// configuration are kept as they are. Failed members are reported and left
/// out of the manifest.
pub fn train_pool(
    dataset: &[(ImageGrid, BinaryMask)],
    config: &EnsembleConfig,
    dir: &Path,
    on_member: impl Fn(usize, &Result<ModelParams>) + Sync,
) -> Result<PoolReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidValue("training set is empty".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let outcomes: Vec<(usize, bool, Result<ModelParams>)> = (0..config.k)
        .into_par_iter()
        .map(|i| {
            let path = dir.join(member_file(i));
            if member_matches(&path, config, i) {
                return (i, false, segmenter::load_model(&path));
            }
            let result = ensemble::train_member(dataset, config, i)
                .and_then(|m| segmenter::save_model(&m, &path).map(|_| m));
            on_member(i, &result);
            (i, true, result)
        })
        .collect();

    let mut report = PoolReport::default();
    let mut kept = Vec::new();
    for (i, fresh, result) in outcomes {
        match result {
            Ok(m) => {
                if fresh {
                    report.trained.push(i);
                } else {
                    report.reused.push(i);
                }
                kept.push((i, m));
            }
            Err(e) => report.failed.push((i, e.to_string())),
        }
    }
    let mut manifest = EnsembleManifest::describe(config, &[]);
    for (i, m) in &kept {
        let mut entry = EnsembleManifest::describe(config, std::slice::from_ref(m)).members.remove(0);
        entry.index = *i;
        entry.file = member_file(*i);
        manifest.members.push(entry);
    }
    ensemble::write_manifest(&manifest, dir)?;
    Ok(report)
}

/// Loads a pool written by `train_pool` (or `write_ensemble`).
pub fn read_pool(dir: &Path) -> Result<Ensemble> {
    let ens = ensemble::read_ensemble(dir)?;
    if ens.members.is_empty() {
        return Err(Error::InvalidValue(format!(
            "{} lists no members",
            dir.join(ENSEMBLE_FILE).display()
        )));
    }
    Ok(ens)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneEval {
    pub scene: usize,
    pub pixel: PixelMetrics,
    pub lesion: LesionMetrics,
}

/// Means over scenes of the per-scene ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub dice: f64,
    pub recall: f64,
    pub precision: f64,
    pub l_recall: f64,
    pub l_precision: f64,
    pub lesion_accuracy: f64,
}

impl MeanMetrics {
    pub fn of(evals: &[SceneEval]) -> Self {
        let n = evals.len().max(1) as f64;
        let mean = |f: &dyn Fn(&SceneEval) -> f64| evals.iter().map(f).sum::<f64>() / n;
        MeanMetrics {
            dice: mean(&|e| e.pixel.dice),
            recall: mean(&|e| e.pixel.recall),
            precision: mean(&|e| e.pixel.precision),
            l_recall: mean(&|e| e.lesion.l_recall),
            l_precision: mean(&|e| e.lesion.l_precision),
            lesion_accuracy: mean(&|e| e.lesion.accuracy()),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.dice,
            self.recall,
            self.precision,
            self.l_recall,
            self.l_precision,
            self.lesion_accuracy,
        ]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        MeanMetrics {
            dice: v[0],
            recall: v[1],
            precision: v[2],
            l_recall: v[3],
            l_precision: v[4],
            lesion_accuracy: v[5],
        }
    }
}

/// Scores predicted masks against the scenes' ground truth. `masks[i]` belongs
/// to `scenes[i]`; `first_index` is the dataset index of `scenes[0]`.
pub fn evaluate_masks(
    masks: &[BinaryMask],
    scenes: &[LabeledScene],
    first_index: usize,
    lesion: LesionOptions,
) -> Result<Vec<SceneEval>> {
    if masks.len() != scenes.len() {
        return Err(Error::InvalidValue(format!(
            "{} masks for {} scenes",
            masks.len(),
            scenes.len()
        )));
    }
    masks
        .iter()
        .zip(scenes)
        .enumerate()
        .map(|(i, (mask, scene))| {
            Ok(SceneEval {
                scene: first_index + i,
                pixel: pixel_metrics(mask, &scene.gt)?,
                lesion: lesion_metrics(mask, &scene.gt, lesion)?,
            })
        })
        .collect()
}

/// Every member's map for every scene: `maps[scene][member]`.
pub fn member_maps_per_scene(ens: &Ensemble, scenes: &[LabeledScene]) -> Result<Vec<Vec<ProbMap>>> {
    scenes
        .iter()
        .map(|s| ensemble::member_maps(ens, &s.image))
        .collect()
}

/// Averaged maps and masks at `tau` for the members listed in `subset`.
pub fn combine(
    maps: &[Vec<ProbMap>],
    subset: &[usize],
    tau: f64,
) -> Result<Vec<(ProbMap, BinaryMask)>> {
    maps.iter()
        .map(|per_member| {
            let chosen: Vec<ProbMap> = subset.iter().map(|&m| per_member[m].clone()).collect();
            let avg = ensemble_average(&chosen)?;
            let mask = threshold(&avg, tau)?;
            Ok((avg, mask))
        })
        .collect()
}

/// Diversity averaged over scenes. Undefined-pair counts are summed.
pub fn mean_diversity(per_scene: &[DiversityReport]) -> Option<DiversityReport> {
    let first = per_scene.first()?;
    let n = per_scene.len() as f64;
    let mut out = DiversityReport {
        tp_similarity: 0.0,
        fp_similarity: 0.0,
        allpos_similarity: 0.0,
        pairs: first.pairs,
        tp_undefined: 0,
        fp_undefined: 0,
        allpos_undefined: 0,
    };
    for r in per_scene {
        out.tp_similarity += r.tp_similarity / n;
        out.fp_similarity += r.fp_similarity / n;
        out.allpos_similarity += r.allpos_similarity / n;
        out.tp_undefined += r.tp_undefined;
        out.fp_undefined += r.fp_undefined;
        out.allpos_undefined += r.allpos_undefined;
    }
    Some(out)
}

/// Diversity of the listed members over the scenes; `None` for fewer than two members.
pub fn subset_diversity(
    maps: &[Vec<ProbMap>],
    subset: &[usize],
    scenes: &[LabeledScene],
) -> Result<Option<DiversityReport>> {
    if subset.len() < 2 {
        return Ok(None);
    }
    let reports = maps
        .iter()
        .zip(scenes)
        .map(|(per_member, scene)| {
            let chosen: Vec<ProbMap> = subset.iter().map(|&m| per_member[m].clone()).collect();
            diversity_report(&chosen, &scene.gt)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_diversity(&reports))
}

/// How repetitions of the same ensemble size relate to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SubsetScheme {
    /// Each repetition is drawn on its own; two repetitions may pick the same subset.
    #[default]
    Independent,
    /// Repetitions of one size never repeat a subset while unused ones remain.
    Distinct,
}

impl SubsetScheme {
    pub fn name(self) -> &'static str {
        match self {
            SubsetScheme::Independent => "independent",
            SubsetScheme::Distinct => "distinct",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "independent" => Ok(SubsetScheme::Independent),
            "distinct" => Ok(SubsetScheme::Distinct),
            other => Err(Error::param("subset_scheme", format!("unknown scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub k_values: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
    pub scheme: SubsetScheme,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            k_values: (1..=10).collect(),
            repetitions: 10,
            seed: 0,
            scheme: SubsetScheme::Independent,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self, pool_size: usize) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::param("repetitions", "must be >= 1"));
        }
        if self.k_values.is_empty() {
            return Err(Error::param("k_values", "empty"));
        }
        for &k in &self.k_values {
            if k == 0 || k > pool_size {
                return Err(Error::param(
                    "k_values",
                    format!("K={k} outside 1..={pool_size} (pool size)"),
                ));
            }
        }
        Ok(())
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// The member subsets for ensemble size `k`, one per repetition, each sorted.
pub fn sweep_subsets(config: &SweepConfig, pool_size: usize, k: usize) -> Vec<Vec<usize>> {
    let mut seen: Vec<Vec<usize>> = Vec::new();
    let available = binomial(pool_size, k);
    (0..config.repetitions)
        .map(|rep| {
            let key = ((k as u64) << 32) | rep as u64;
            let mut rng = rng::stream(config.seed, key, Purpose::Subset);
            loop {
                let mut s = index::sample(&mut rng, pool_size, k).into_vec();
                s.sort_unstable();
                let fresh = !seen.contains(&s) || (seen.len() as u128) >= available;
                if config.scheme == SubsetScheme::Independent || fresh {
                    seen.push(s.clone());
                    return s;
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub k: usize,
    pub rep: usize,
    pub members: Vec<usize>,
    pub metrics: MeanMetrics,
    pub diversity: Option<DiversityReport>,
}

/// Evaluates `config.repetitions` random `K`-member ensembles drawn from the
/// pool for every `K`, on `scenes`, thresholding at `tau`.
pub fn sweep_k(
    method: &str,
    pool: &Ensemble,
    scenes: &[LabeledScene],
    tau: f64,
    config: &SweepConfig,
    lesion: LesionOptions,
) -> Result<Vec<SweepRow>> {
    config.validate(pool.members.len())?;
    let maps = member_maps_per_scene(pool, scenes)?;
    let jobs: Vec<(usize, usize, Vec<usize>)> = config
        .k_values
        .iter()
        .flat_map(|&k| {
            sweep_subsets(config, pool.members.len(), k)
                .into_iter()
                .enumerate()
                .map(move |(rep, s)| (k, rep, s))
        })
        .collect();
    jobs.into_par_iter()
        .map(|(k, rep, members)| {
            let masks: Vec<BinaryMask> = combine(&maps, &members, tau)?.into_iter().map(|(_, m)| m).collect();
            let evals = evaluate_masks(&masks, scenes, 0, lesion)?;
            Ok(SweepRow {
                method: method.to_string(),
                k,
                rep,
                metrics: MeanMetrics::of(&evals),
                diversity: subset_diversity(&maps, &members, scenes)?,
                members,
            })
        })
        .collect()
}

/// Mean and sample standard deviation of each metric, per `(method, K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub method: String,
    pub k: usize,
    pub n: usize,
    pub mean: MeanMetrics,
    pub std: MeanMetrics,
}

pub fn summarize(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut keys: Vec<(String, usize)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(m, k)| *m == r.method && *k == r.k) {
            keys.push((r.method.clone(), r.k));
        }
    }
    keys.into_iter()
        .map(|(method, k)| {
            let group: Vec<&MeanMetrics> = rows
                .iter()
                .filter(|r| r.method == method && r.k == k)
                .map(|r| &r.metrics)
                .collect();
            let n = group.len();
            let mut mean = [0.0; 6];
            let mut std = [0.0; 6];
            for j in 0..6 {
                let col: Vec<f64> = group.iter().map(|m| m.to_array()[j]).collect();
                mean[j] = col.iter().sum::<f64>() / n as f64;
                if n > 1 {
                    let ss: f64 = col.iter().map(|v| (v - mean[j]).powi(2)).sum();
                    std[j] = (ss / (n - 1) as f64).sqrt();
                }
            }
            SweepSummary {
                method,
                k,
                n,
                mean: MeanMetrics::from_array(mean),
                std: MeanMetrics::from_array(std),
            }
        })
        .collect()
}
