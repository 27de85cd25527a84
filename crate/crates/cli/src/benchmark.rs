//! The shipped benchmark: scene generator settings, member architecture and
//! training schedule, and the three master seeds.

use lowprec_core::ensemble::{EnsembleConfig, EnsembleMode};
use lowprec_core::experiment::SweepConfig;
use lowprec_core::loss::LossSpec;
use lowprec_core::segmenter::{ArchConfig, TrainConfig};
use lowprec_core::synth::{SceneConfig, Split};

pub const DATA_SEED: u64 = 7;
pub const POOL_SEED: u64 = 2020;
pub const SWEEP_SEED: u64 = 12;

pub const N_SCENES: usize = 76;
pub const POOL_SIZE: usize = 12;

pub fn scene_config() -> SceneConfig {
    SceneConfig {
        seed: DATA_SEED,
        ..SceneConfig::default()
    }
}

pub fn split() -> Split {
    Split::proportional(N_SCENES)
}

pub fn arch() -> ArchConfig {
    ArchConfig::default()
}

pub fn train_config() -> TrainConfig {
    TrainConfig {
        loss: LossSpec::dice(),
        ..TrainConfig::default()
    }
}

pub fn ensemble_config(mode: EnsembleMode, k: usize) -> EnsembleConfig {
    EnsembleConfig {
        master_seed: POOL_SEED,
        arch: arch(),
        train: train_config(),
        ..EnsembleConfig::new(mode, k)
    }
}

pub fn sweep_config() -> SweepConfig {
    SweepConfig {
        k_values: (1..=10).collect(),
        repetitions: 10,
        seed: SWEEP_SEED,
        ..SweepConfig::default()
    }
}
