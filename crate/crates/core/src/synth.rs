//! Seeded synthetic scenes in which the foreground structure and the
//! distractors look identical and differ only in where they are.
//!
//! Each scene holds one foreground disc whose centre lies left of the
//! vertical midline and one or more distractor discs whose centres lie on or
//! right of it. All discs share the same intensity distribution, so any
//! classifier must use position to separate them.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, GridFile, ImageGrid};
use crate::rng::{self, Purpose};

const MAX_PLACEMENT_TRIES: usize = 200;
/// Minimum background gap, in pixels, between any two discs.
const MIN_GAP: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LandmarkRule {
    /// The foreground disc is the one whose centre column is left of `width / 2`.
    LeftOfMidline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    /// Inclusive disc radius range.
    pub fg_radius_range: (usize, usize),
    /// Inclusive distractor count range.
    pub n_distractors_range: (usize, usize),
    pub noise_sigma: f64,
    pub intensity_fg: f64,
    pub intensity_bg: f64,
    pub landmark_rule: LandmarkRule,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 64,
            height: 64,
            fg_radius_range: (3, 6),
            n_distractors_range: (1, 3),
            noise_sigma: 0.2,
            intensity_fg: 1.0,
            intensity_bg: 0.0,
            landmark_rule: LandmarkRule::LeftOfMidline,
            seed: 7,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidDimension {
                width: self.width,
                height: self.height,
            });
        }
        let (rmin, rmax) = self.fg_radius_range;
        if rmin == 0 || rmin > rmax {
            return Err(Error::param("fg_radius_range", format!("({rmin}, {rmax}) is not a valid range")));
        }
        // A maximal disc must fit in either half of the grid.
        if 2 * rmax + 1 > self.width / 2 || 2 * rmax + 1 > self.height {
            return Err(Error::param("fg_radius_range", "discs do not fit inside the grid"));
        }
        let (dmin, dmax) = self.n_distractors_range;
        if dmin > dmax {
            return Err(Error::param("n_distractors_range", format!("({dmin}, {dmax}) is not a valid range")));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::param("noise_sigma", "must be finite and >= 0"));
        }
        if !(self.intensity_fg.is_finite() && self.intensity_bg.is_finite()) {
            return Err(Error::param("intensity", "must be finite"));
        }
        if self.intensity_fg == self.intensity_bg {
            return Err(Error::param("intensity_fg", "must differ from intensity_bg"));
        }
        Ok(())
    }

    fn midline(&self) -> usize {
        self.width / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub row: usize,
    pub col: usize,
    pub radius: usize,
    pub foreground: bool,
}

impl Blob {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        let dr = row as f64 - self.row as f64;
        let dc = col as f64 - self.col as f64;
        dr * dr + dc * dc <= (self.radius * self.radius) as f64
    }

    fn clear_of(&self, other: &Blob) -> bool {
        let dr = self.row as f64 - other.row as f64;
        let dc = self.col as f64 - other.col as f64;
        (dr * dr + dc * dc).sqrt() > (self.radius + other.radius) as f64 + MIN_GAP
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub index: usize,
    /// The foreground disc comes first.
    pub blobs: Vec<Blob>,
}

impl SceneMeta {
    pub fn foreground(&self) -> &Blob {
        &self.blobs[0]
    }

    pub fn distractors(&self) -> &[Blob] {
        &self.blobs[1..]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScene {
    pub image: ImageGrid,
    pub gt: BinaryMask,
    pub meta: SceneMeta,
}

fn place(
    rng: &mut impl Rng,
    cfg: &SceneConfig,
    cols: std::ops::Range<usize>,
    placed: &[Blob],
    foreground: bool,
) -> Option<Blob> {
    let (rmin, rmax) = cfg.fg_radius_range;
    for _ in 0..MAX_PLACEMENT_TRIES {
        let radius = rng.random_range(rmin..=rmax);
        let lo = cols.start.max(radius);
        let hi = cols.end.min(cfg.width - radius);
        if lo >= hi || radius >= cfg.height - radius {
            continue;
        }
        let blob = Blob {
            row: rng.random_range(radius..cfg.height - radius),
            col: rng.random_range(lo..hi),
            radius,
            foreground,
        };
        if placed.iter().all(|b| blob.clear_of(b)) {
            return Some(blob);
        }
    }
    None
}

/// Generates scene `scene_index` of the stream keyed by `config.seed`.
pub fn generate_scene(config: &SceneConfig, scene_index: usize) -> Result<LabeledScene> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, scene_index as u64, Purpose::Scene);
    let mid = config.midline();
    let fail = |what: &str| {
        Error::Generation(format!(
            "scene {scene_index}: could not place {what} after {MAX_PLACEMENT_TRIES} tries"
        ))
    };

    let (left, right) = match config.landmark_rule {
        LandmarkRule::LeftOfMidline => (0..mid, mid..config.width),
    };
    let mut blobs = Vec::new();
    let fg = place(&mut rng, config, left, &blobs, true).ok_or_else(|| fail("the foreground disc"))?;
    blobs.push(fg);
    let (dmin, dmax) = config.n_distractors_range;
    let n_distractors = rng.random_range(dmin..=dmax);
    for _ in 0..n_distractors {
        let d = place(&mut rng, config, right.clone(), &blobs, false).ok_or_else(|| fail("a distractor"))?;
        blobs.push(d);
    }

    let (w, h) = (config.width, config.height);
    let noise = Normal::new(0.0, config.noise_sigma)
        .map_err(|e| Error::param("noise_sigma", e.to_string()))?;
    let mut values = Vec::with_capacity(w * h);
    let mut gt = BinaryMask::empty(w, h)?;
    for row in 0..h {
        for col in 0..w {
            let owner = blobs.iter().find(|b| b.contains(row, col));
            let base = if owner.is_some() {
                config.intensity_fg
            } else {
                config.intensity_bg
            };
            if owner.is_some_and(|b| b.foreground) {
                gt.set(row, col, true);
            }
            values.push(base + noise.sample(&mut rng));
        }
    }
    normalize(&mut values);
    Ok(LabeledScene {
        image: ImageGrid::from_values(w, h, values)?,
        gt,
        meta: SceneMeta {
            index: scene_index,
            blobs,
        },
    })
}

/// Shifts and scales to zero mean and unit variance (population statistics).
fn normalize(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    for v in values.iter_mut() {
        *v -= mean;
        if sd > 0.0 {
            *v /= sd;
        }
    }
}

/// Contiguous index blocks for training, validation and test scenes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Split {
    /// The 48/12/16 proportions, scaled to `n` scenes (exact for `n = 76`).
    pub fn proportional(n: usize) -> Self {
        let train = (n * 48 + 38) / 76;
        let val = ((n * 12 + 38) / 76).min(n - train.min(n));
        let train = train.min(n);
        Split {
            train,
            val,
            test: n - train - val,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    pub fn train_range(&self) -> std::ops::Range<usize> {
        0..self.train
    }

    pub fn val_range(&self) -> std::ops::Range<usize> {
        self.train..self.train + self.val
    }

    pub fn test_range(&self) -> std::ops::Range<usize> {
        self.train + self.val..self.total()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: SceneConfig,
    pub n_scenes: usize,
    pub split: Split,
    pub scenes: Vec<SceneMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub scenes: Vec<LabeledScene>,
}

impl Dataset {
    pub fn split(&self) -> Split {
        self.manifest.split
    }

    pub fn train(&self) -> &[LabeledScene] {
        &self.scenes[self.split().train_range()]
    }

    pub fn val(&self) -> &[LabeledScene] {
        &self.scenes[self.split().val_range()]
    }

    pub fn test(&self) -> &[LabeledScene] {
        &self.scenes[self.split().test_range()]
    }

    /// Training pairs in the form the segmenter consumes.
    pub fn train_pairs(&self) -> Vec<(ImageGrid, BinaryMask)> {
        self.train()
            .iter()
            .map(|s| (s.image.clone(), s.gt.clone()))
            .collect()
    }
}

pub fn generate_dataset(config: &SceneConfig, n_scenes: usize, split: Split) -> Result<Dataset> {
    if n_scenes == 0 {
        return Err(Error::param("n_scenes", "must be >= 1"));
    }
    if split.total() != n_scenes {
        return Err(Error::param(
            "split",
            format!("{}+{}+{} does not sum to {n_scenes}", split.train, split.val, split.test),
        ));
    }
    let scenes = (0..n_scenes)
        .map(|i| generate_scene(config, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        manifest: Manifest {
            format_version: 1,
            config: config.clone(),
            n_scenes,
            split,
            scenes: scenes.iter().map(|s| s.meta.clone()).collect(),
        },
        scenes,
    })
}

pub fn scene_image_file(i: usize) -> String {
    format!("scene_{i}.img.lpg")
}

pub fn scene_gt_file(i: usize) -> String {
    format!("scene_{i}.gt.lpg")
}

/// Writes `manifest.json` plus one image and one ground-truth grid per scene.
pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, scene) in dataset.scenes.iter().enumerate() {
        scene.image.save(dir.join(scene_image_file(i)))?;
        scene.gt.save(dir.join(scene_gt_file(i)))?;
    }
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&dataset.manifest)?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

/// Reads a dataset directory. Images come from the grid files, so they carry
/// the `f32` precision of the on-disk format.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.scenes.len() != manifest.n_scenes || manifest.split.total() != manifest.n_scenes {
        return Err(Error::InvalidValue("manifest scene counts are inconsistent".into()));
    }
    let scenes = manifest
        .scenes
        .iter()
        .enumerate()
        .map(|(i, meta)| {
            let image = ImageGrid::load(dir.join(scene_image_file(i)))?;
            let gt = BinaryMask::load(dir.join(scene_gt_file(i)))?;
            image.dims().ensure_same(gt.dims())?;
            Ok(LabeledScene {
                image,
                gt,
                meta: meta.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { manifest, scenes })
}

/// Rounds scene images to the on-disk precision, so an in-memory dataset
/// behaves exactly like one read back from disk.
pub fn quantize_images(dataset: &mut Dataset) {
    for scene in &mut dataset.scenes {
        let w = scene.image.width();
        let h = scene.image.height();
        let vals = scene.image.values().iter().map(|&v| v as f32 as f64).collect();
        scene.image = ImageGrid::from_values(w, h, vals).expect("rounding keeps values finite");
    }
}
