//! A small fully-convolutional segmenter.
//!
//! Architecture: `num_hidden_layers` same-padded `k x k` convolutions with
//! ReLU, then a `1 x 1` convolution to a single channel and a logistic
//! sigmoid. Optionally two fixed coordinate planes (normalized column and
//! row, each in `[-1, 1]`) are appended to the image as extra input channels
//! so that the network can condition on absolute position.
//!
//! # Weight layout
//!
//! Layer-major. Within a layer, the kernels come first, indexed
//! `[out_channel][in_channel][kernel_row][kernel_col]`, followed by one bias
//! per output channel.

mod adam;
mod file;
mod net;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::rng::{self, Purpose};

pub use adam::{adam_step, AdamState};
pub use file::{load_model, model_from_bytes, model_to_bytes, save_model, MODEL_FORMAT, MODEL_FORMAT_VERSION};
pub use net::{backward, forward, ForwardCache, Network};
pub use train::{train_model, train_model_with, EpochStats, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Image channels. Only single-channel images are supported.
    pub in_channels: usize,
    pub hidden_channels: usize,
    pub kernel_size: usize,
    pub num_hidden_layers: usize,
    /// Append normalized column/row coordinate planes to the input.
    pub coord_channels: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            in_channels: 1,
            hidden_channels: 16,
            kernel_size: 3,
            num_hidden_layers: 2,
            coord_channels: true,
        }
    }
}

/// Shape and offsets of one convolution layer inside the flat weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerShape {
    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn kernel_len(&self) -> usize {
        self.out_channels * self.fan_in()
    }

    pub fn end(&self) -> usize {
        self.bias_offset + self.out_channels
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 1 {
            return Err(Error::param("in_channels", "only single-channel input is supported"));
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::param("kernel_size", format!("{} must be odd", self.kernel_size)));
        }
        if self.hidden_channels == 0 {
            return Err(Error::param("hidden_channels", "must be >= 1"));
        }
        if self.num_hidden_layers == 0 {
            return Err(Error::param("num_hidden_layers", "must be >= 1"));
        }
        Ok(())
    }

    /// Channels actually fed to the first convolution.
    pub fn input_planes(&self) -> usize {
        self.in_channels + if self.coord_channels { 2 } else { 0 }
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::with_capacity(self.num_hidden_layers + 1);
        let mut offset = 0;
        let mut cin = self.input_planes();
        let mut push = |cin: usize, cout: usize, k: usize| {
            let shape = LayerShape {
                in_channels: cin,
                out_channels: cout,
                kernel: k,
                weight_offset: offset,
                bias_offset: offset + cout * cin * k * k,
            };
            offset = shape.end();
            shapes.push(shape);
        };
        for _ in 0..self.num_hidden_layers {
            push(cin, self.hidden_channels, self.kernel_size);
            cin = self.hidden_channels;
        }
        push(cin, 1, 1);
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layers().last().map_or(0, LayerShape::end)
    }
}

/// Where a set of weights came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub init_seed: u64,
    pub beta_used: Option<f64>,
    pub bag_indices: Vec<usize>,
    pub loss: Option<LossSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: ArchConfig,
    pub weights: Vec<f64>,
    pub provenance: Provenance,
}

impl ModelParams {
    /// Wraps a weight vector after checking it against the architecture.
    pub fn new(arch: ArchConfig, weights: Vec<f64>, provenance: Provenance) -> Result<Self> {
        arch.validate()?;
        if weights.len() != arch.param_count() {
            return Err(Error::InvalidValue(format!(
                "{} weights for an architecture with {} parameters",
                weights.len(),
                arch.param_count()
            )));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::InvalidValue(format!("weight {i} is not finite")));
        }
        Ok(ModelParams {
            arch,
            weights,
            provenance,
        })
    }

    /// Rounds every weight to the nearest `f32`, the precision of model files.
    pub fn quantize(&mut self) {
        for w in &mut self.weights {
            *w = *w as f32 as f64;
        }
    }
}

/// He-uniform initialization (`U(-sqrt(6 / fan_in), +sqrt(6 / fan_in))`) with zero biases.
pub fn init_params(arch: &ArchConfig, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = rng::stream(seed, 0, Purpose::Init);
    let mut weights = vec![0.0; arch.param_count()];
    for layer in arch.layers() {
        let bound = (6.0 / layer.fan_in() as f64).sqrt();
        for w in &mut weights[layer.weight_offset..layer.bias_offset] {
            *w = rng.random_range(-bound..bound);
        }
    }
    Ok(ModelParams {
        arch: *arch,
        weights,
        provenance: Provenance {
            init_seed: seed,
            beta_used: None,
            bag_indices: Vec::new(),
            loss: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain_arch() -> ArchConfig {
        ArchConfig {
            coord_channels: false,
            ..ArchConfig::default()
        }
    }

    #[test]
    fn param_count_matches_layout() {
        assert_eq!(plain_arch().param_count(), (16 * 9 + 16) + (16 * 16 * 9 + 16) + (16 + 1));
        assert_eq!(plain_arch().param_count(), 2497);
        assert_eq!(ArchConfig::default().param_count(), 2497 + 2 * 16 * 9);
    }

    #[test]
    fn layer_offsets_are_contiguous() {
        let layers = ArchConfig::default().layers();
        assert_eq!(layers[0].weight_offset, 0);
        for pair in layers.windows(2) {
            assert_eq!(pair[0].end(), pair[1].weight_offset);
        }
        assert_eq!(layers.last().unwrap().kernel, 1);
    }

    #[test]
    fn init_is_deterministic_and_seeded() {
        let a = init_params(&plain_arch(), 1).unwrap();
        let b = init_params(&plain_arch(), 1).unwrap();
        let c = init_params(&plain_arch(), 2).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_ne!(a.weights, c.weights);
        assert_eq!(a.provenance.init_seed, 1);
    }

    #[test]
    fn init_respects_bounds_and_zero_biases() {
        let p = init_params(&ArchConfig::default(), 9).unwrap();
        for layer in p.arch.layers() {
            let bound = (6.0 / layer.fan_in() as f64).sqrt();
            assert!(p.weights[layer.weight_offset..layer.bias_offset]
                .iter()
                .all(|w| w.abs() < bound));
            assert!(p.weights[layer.bias_offset..layer.end()].iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn invalid_arch_rejected() {
        for arch in [
            ArchConfig { kernel_size: 2, ..plain_arch() },
            ArchConfig { kernel_size: 0, ..plain_arch() },
            ArchConfig { hidden_channels: 0, ..plain_arch() },
            ArchConfig { num_hidden_layers: 0, ..plain_arch() },
            ArchConfig { in_channels: 3, ..plain_arch() },
        ] {
            assert!(init_params(&arch, 0).is_err());
        }
    }

    #[test]
    fn model_params_checks_length() {
        let arch = plain_arch();
        let prov = init_params(&arch, 0).unwrap().provenance;
        assert!(ModelParams::new(arch, vec![0.0; 10], prov.clone()).is_err());
        let mut w = vec![0.0; arch.param_count()];
        w[3] = f64::INFINITY;
        assert!(ModelParams::new(arch, w, prov).is_err());
    }
}
