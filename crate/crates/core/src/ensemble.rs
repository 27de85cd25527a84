//! Building and applying segmenter ensembles.
//!
//! Each member `i` draws all of its randomness (loss `beta`, data bag,
//! initialization, shuffling) from streams keyed by `(master_seed, i)`, so
//! members can be trained in any order or concurrently with identical
//! results.

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Dims, ImageGrid, ProbMap};
use crate::loss::{LossKind, LossSpec};
use crate::rng::{self, Purpose};
use crate::segmenter::{self, ArchConfig, ModelParams, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnsembleMode {
    /// Members trained at `beta = 0.5` (Dice or cross-entropy), thresholded at 0.5.
    Baseline,
    /// Every member uses `beta_fixed`.
    LowPrecFixed,
    /// Each member draws `beta` uniformly from `beta_range`.
    LowPrecRandom,
}

impl EnsembleMode {
    pub fn name(self) -> &'static str {
        match self {
            EnsembleMode::Baseline => "baseline",
            EnsembleMode::LowPrecFixed => "lowprec-fixed",
            EnsembleMode::LowPrecRandom => "lowprec-random",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "baseline" => Ok(EnsembleMode::Baseline),
            "lowprec-fixed" => Ok(EnsembleMode::LowPrecFixed),
            "lowprec-random" => Ok(EnsembleMode::LowPrecRandom),
            other => Err(Error::param("mode", format!("unknown mode `{other}`"))),
        }
    }

    /// The aggregation threshold used when none is given.
    pub fn default_threshold(self) -> f64 {
        match self {
            EnsembleMode::Baseline => 0.5,
            EnsembleMode::LowPrecFixed | EnsembleMode::LowPrecRandom => 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossFamily {
    Tversky,
    BalancedCE,
}

impl LossFamily {
    pub fn kind(self) -> LossKind {
        match self {
            LossFamily::Tversky => LossKind::Tversky,
            LossFamily::BalancedCE => LossKind::BalancedCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub k: usize,
    pub mode: EnsembleMode,
    /// Half-open `[lo, hi)` range for `LowPrecRandom`.
    pub beta_range: (f64, f64),
    pub beta_fixed: f64,
    pub bag_fraction: f64,
    pub threshold: f64,
    pub master_seed: u64,
    pub loss_family: LossFamily,
    pub arch: ArchConfig,
    /// Template for member training; its loss kind and `beta` are replaced per member.
    pub train: TrainConfig,
}

impl EnsembleConfig {
    pub fn new(mode: EnsembleMode, k: usize) -> Self {
        EnsembleConfig {
            k,
            mode,
            beta_range: (0.9, 1.0),
            beta_fixed: 0.95,
            bag_fraction: 0.8,
            threshold: mode.default_threshold(),
            master_seed: 0,
            loss_family: LossFamily::Tversky,
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::param("k", "must be >= 1"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::param("threshold", format!("{} not in (0, 1)", self.threshold)));
        }
        if !(self.bag_fraction > 0.0 && self.bag_fraction <= 1.0) {
            return Err(Error::param("bag_fraction", format!("{} not in (0, 1]", self.bag_fraction)));
        }
        match self.mode {
            EnsembleMode::LowPrecRandom => {
                let (lo, hi) = self.beta_range;
                if !(0.5 <= lo && lo < hi && hi <= 1.0) {
                    return Err(Error::param(
                        "beta_range",
                        format!("[{lo}, {hi}) must satisfy 0.5 <= lo < hi <= 1"),
                    ));
                }
            }
            EnsembleMode::LowPrecFixed => {
                if !(0.0..1.0).contains(&self.beta_fixed) {
                    return Err(Error::param("beta_fixed", format!("{} not in [0, 1)", self.beta_fixed)));
                }
            }
            EnsembleMode::Baseline => {}
        }
        self.arch.validate()?;
        self.train.validate()
    }

    /// Loss `beta` for member `i` (0.5 for the baseline).
    pub fn member_beta(&self, member: usize) -> Result<f64> {
        match self.mode {
            EnsembleMode::Baseline => Ok(0.5),
            _ => sample_beta(self, member),
        }
    }

    pub fn member_init_seed(&self, member: usize) -> u64 {
        rng::derive_seed(self.master_seed, member as u64, Purpose::Init)
    }

    pub fn member_shuffle_seed(&self, member: usize) -> u64 {
        rng::derive_seed(self.master_seed, member as u64, Purpose::Shuffle)
    }
}

/// The loss asymmetry for a low-precision member.
pub fn sample_beta(config: &EnsembleConfig, member: usize) -> Result<f64> {
    match config.mode {
        EnsembleMode::Baseline => Err(Error::Mode {
            mode: config.mode.name().into(),
            what: "sample_beta".into(),
        }),
        EnsembleMode::LowPrecFixed => Ok(config.beta_fixed),
        EnsembleMode::LowPrecRandom => {
            let (lo, hi) = config.beta_range;
            if !(lo < hi) {
                return Err(Error::param("beta_range", format!("[{lo}, {hi}) is empty")));
            }
            let mut rng = rng::stream(config.master_seed, member as u64, Purpose::Beta);
            let beta = rng.random_range(lo..hi);
            // random_range may round up to `hi` for very narrow ranges.
            Ok(if beta < hi { beta } else { lo })
        }
    }
}

/// Splits `0..dataset_size` into a sorted training bag of
/// `round(bag_fraction * dataset_size)` indices and the sorted remainder.
pub fn make_bag(
    dataset_size: usize,
    config: &EnsembleConfig,
    member: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let f = config.bag_fraction;
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::param("bag_fraction", format!("{f} not in (0, 1]")));
    }
    if dataset_size < 2 {
        return Err(Error::param("dataset_size", format!("{dataset_size} is too small to bag")));
    }
    let take = (f * dataset_size as f64).round() as usize;
    if take == 0 {
        return Err(Error::param("bag_fraction", "bag would be empty"));
    }
    let mut rng = rng::stream(config.master_seed, member as u64, Purpose::Bag);
    let mut train = rand::seq::index::sample(&mut rng, dataset_size, take).into_vec();
    train.sort_unstable();
    let mut in_bag = vec![false; dataset_size];
    for &i in &train {
        in_bag[i] = true;
    }
    let heldout = (0..dataset_size).filter(|&i| !in_bag[i]).collect();
    Ok((train, heldout))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<ModelParams>,
    pub config: EnsembleConfig,
}

impl Ensemble {
    pub fn new(members: Vec<ModelParams>, config: EnsembleConfig) -> Result<Self> {
        if members.len() != config.k {
            return Err(Error::InvalidValue(format!(
                "{} members for an ensemble of size {}",
                members.len(),
                config.k
            )));
        }
        Ok(Ensemble { members, config })
    }

    /// A smaller ensemble made of the listed members (in the listed order).
    pub fn subset(&self, indices: &[usize]) -> Result<Ensemble> {
        let members = indices
            .iter()
            .map(|&i| {
                self.members.get(i).cloned().ok_or_else(|| {
                    Error::param("subset", format!("member {i} not in a pool of {}", self.members.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut config = self.config.clone();
        config.k = members.len();
        Ensemble::new(members, config)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Ensemble> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::param("threshold", format!("{threshold} not in (0, 1)")));
        }
        self.config.threshold = threshold;
        Ok(self)
    }
}

/// Trains member `member` of the ensemble described by `config`.
pub fn train_member(
    dataset: &[(ImageGrid, BinaryMask)],
    config: &EnsembleConfig,
    member: usize,
) -> Result<ModelParams> {
    let beta = config.member_beta(member)?;
    let bag: Vec<usize> = if config.bag_fraction < 1.0 {
        make_bag(dataset.len(), config, member)?.0
    } else {
        (0..dataset.len()).collect()
    };
    let subset: Vec<(ImageGrid, BinaryMask)> = bag.iter().map(|&i| dataset[i].clone()).collect();
    let train = TrainConfig {
        loss: LossSpec {
            kind: config.loss_family.kind(),
            beta,
            ..config.train.loss
        },
        shuffle_seed: config.member_shuffle_seed(member),
        ..config.train
    };
    let mut params = segmenter::train_model(&subset, &config.arch, &train, config.member_init_seed(member))?;
    params.provenance.beta_used = Some(beta);
    params.provenance.bag_indices = bag;
    Ok(params)
}

pub fn train_ensemble(dataset: &[(ImageGrid, BinaryMask)], config: &EnsembleConfig) -> Result<Ensemble> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidValue("training set is empty".into()));
    }
    let members = (0..config.k)
        .into_par_iter()
        .map(|i| {
            train_member(dataset, config, i).map_err(|e| Error::Member {
                member: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(members, config.clone())
}

/// Per-pixel mean of the maps, accumulated in list order.
pub fn ensemble_average(maps: &[ProbMap]) -> Result<ProbMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::param("maps", "cannot average an empty list"))?;
    let dims: Dims = first.dims();
    for m in maps {
        dims.ensure_same(m.dims())?;
    }
    let k = maps.len() as f64;
    let mut sum = vec![0.0; dims.len()];
    let mut lo = vec![1.0f64; dims.len()];
    let mut hi = vec![0.0f64; dims.len()];
    for m in maps {
        for (((s, l), h), &v) in sum.iter_mut().zip(&mut lo).zip(&mut hi).zip(m.values()) {
            *s += v;
            *l = l.min(v);
            *h = h.max(v);
        }
    }
    // Rounding in the sum can push a mean one ulp outside the member range.
    let mean = sum
        .iter()
        .zip(lo.iter().zip(&hi))
        .map(|(s, (&l, &h))| (s / k).clamp(l, h))
        .collect();
    Ok(ProbMap::from_trusted(dims, mean))
}

/// Foreground wherever the probability is at least `tau`.
pub fn threshold(map: &ProbMap, tau: f64) -> Result<BinaryMask> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::param("tau", format!("{tau} not in (0, 1)")));
    }
    BinaryMask::from_bools(
        map.width(),
        map.height(),
        map.values().iter().map(|&v| v >= tau).collect(),
    )
}

/// Every member's probability map for `image`, in member order.
pub fn member_maps(ensemble: &Ensemble, image: &ImageGrid) -> Result<Vec<ProbMap>> {
    ensemble
        .members
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            segmenter::forward(m, image).map_err(|e| Error::Member {
                member: i,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Averages member predictions and thresholds at the ensemble's `tau`.
pub fn predict(ensemble: &Ensemble, image: &ImageGrid) -> Result<(ProbMap, BinaryMask)> {
    let maps = member_maps(ensemble, image)?;
    let avg = ensemble_average(&maps)?;
    let mask = threshold(&avg, ensemble.config.threshold)?;
    Ok((avg, mask))
}

pub const ENSEMBLE_FILE: &str = "ensemble.json";

pub fn member_file(i: usize) -> String {
    format!("member_{i}.lpm")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberEntry {
    pub index: usize,
    pub file: String,
    pub beta: Option<f64>,
    pub init_seed: u64,
    pub bag_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub format_version: u32,
    pub config: EnsembleConfig,
    pub members: Vec<MemberEntry>,
}

impl EnsembleManifest {
    pub fn describe(config: &EnsembleConfig, members: &[ModelParams]) -> Self {
        EnsembleManifest {
            format_version: 1,
            config: config.clone(),
            members: members
                .iter()
                .enumerate()
                .map(|(i, m)| MemberEntry {
                    index: i,
                    file: member_file(i),
                    beta: m.provenance.beta_used,
                    init_seed: m.provenance.init_seed,
                    bag_size: m.provenance.bag_indices.len(),
                })
                .collect(),
        }
    }
}

pub fn write_manifest(manifest: &EnsembleManifest, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(ENSEMBLE_FILE);
    let json = serde_json::to_string_pretty(manifest)?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

/// Writes `ensemble.json` and one `member_<i>.lpm` file per member.
pub fn write_ensemble(ensemble: &Ensemble, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, m) in ensemble.members.iter().enumerate() {
        segmenter::save_model(m, dir.join(member_file(i)))?;
    }
    write_manifest(&EnsembleManifest::describe(&ensemble.config, &ensemble.members), dir)
}

pub fn read_ensemble(dir: impl AsRef<Path>) -> Result<Ensemble> {
    let dir = dir.as_ref();
    let path = dir.join(ENSEMBLE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: EnsembleManifest = serde_json::from_str(&text)?;
    let members = manifest
        .members
        .iter()
        .map(|entry| segmenter::load_model(dir.join(&entry.file)))
        .collect::<Result<Vec<_>>>()?;
    let mut config = manifest.config;
    config.k = members.len();
    Ensemble::new(members, config)
}
