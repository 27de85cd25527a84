//! Forward and reverse passes.
//!
//! Each hidden convolution is lowered to a matrix product: the input is
//! unfolded into a `(in_channels * k * k) x pixels` column matrix (zero for
//! taps that fall outside the image) and multiplied by the layer's
//! `out_channels x (in_channels * k * k)` kernel matrix.

use crate::error::{Error, Result};
use crate::grid::{Dims, ImageGrid, ProbMap};

use super::{LayerShape, ModelParams};

/// `c = a * b + c` for row-major dense operands with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: isize, cs: isize| {
        ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize
    };
    assert!(last(m, k, rsa, csa) < a.len());
    assert!(last(k, n, rsb, csb) < b.len());
    // SAFETY: the asserts above bound every element the kernel can touch,
    // and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Valid destination range along one axis for tap offset `d`.
#[inline]
fn span(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).clamp(0, len as isize) as usize;
    (lo, hi.max(lo))
}

fn im2col(src: &[f64], planes: usize, k: usize, dims: Dims, cols: &mut Vec<f64>) {
    let (w, h) = (dims.width, dims.height);
    let n = dims.len();
    let r = (k / 2) as isize;
    cols.clear();
    cols.resize(planes * k * k * n, 0.0);
    for i in 0..planes {
        let plane = &src[i * n..(i + 1) * n];
        for ky in 0..k {
            let dy = ky as isize - r;
            let (y0, y1) = span(h, dy);
            for kx in 0..k {
                let dx = kx as isize - r;
                let (x0, x1) = span(w, dx);
                let row = (i * k + ky) * k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let sx0 = (x0 as isize + dx) as usize;
                    dst[y * w + x0..y * w + x1]
                        .copy_from_slice(&plane[sy * w + sx0..sy * w + sx0 + (x1 - x0)]);
                }
            }
        }
    }
}

fn col2im_acc(cols: &[f64], planes: usize, k: usize, dims: Dims, dst: &mut [f64]) {
    let (w, h) = (dims.width, dims.height);
    let n = dims.len();
    let r = (k / 2) as isize;
    for i in 0..planes {
        let plane = &mut dst[i * n..(i + 1) * n];
        for ky in 0..k {
            let dy = ky as isize - r;
            let (y0, y1) = span(h, dy);
            for kx in 0..k {
                let dx = kx as isize - r;
                let (x0, x1) = span(w, dx);
                let row = (i * k + ky) * k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let sx0 = (x0 as isize + dx) as usize;
                    let out = &mut plane[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                    for (o, g) in out.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                        *o += g;
                    }
                }
            }
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Image plus coordinate planes, if the architecture asks for them.
fn input_planes(image: &ImageGrid, coords: bool) -> Vec<f64> {
    let dims = image.dims();
    let mut planes = image.values().to_vec();
    if coords {
        let norm = |i: usize, len: usize| {
            if len > 1 {
                2.0 * i as f64 / (len - 1) as f64 - 1.0
            } else {
                0.0
            }
        };
        planes.reserve(2 * dims.len());
        for _row in 0..dims.height {
            planes.extend((0..dims.width).map(|c| norm(c, dims.width)));
        }
        for row in 0..dims.height {
            let v = norm(row, dims.height);
            planes.extend(std::iter::repeat_n(v, dims.width));
        }
    }
    planes
}

/// Intermediate values retained by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    dims: Dims,
    /// Unfolded input of each hidden layer.
    cols: Vec<Vec<f64>>,
    /// Post-ReLU output of each hidden layer.
    acts: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl ForwardCache {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob_map(&self) -> ProbMap {
        ProbMap::from_trusted(self.dims, self.probs.clone())
    }
}

/// A parameter set bound to its layer geometry.
#[derive(Debug, Clone, Copy)]
pub struct Network<'a> {
    params: &'a ModelParams,
}

impl<'a> Network<'a> {
    pub fn new(params: &'a ModelParams) -> Result<Self> {
        params.arch.validate()?;
        if params.weights.len() != params.arch.param_count() {
            return Err(Error::InvalidValue(format!(
                "{} weights for an architecture with {} parameters",
                params.weights.len(),
                params.arch.param_count()
            )));
        }
        Ok(Network { params })
    }

    fn check_image(&self, image: &ImageGrid) -> Result<()> {
        let k = self.params.arch.kernel_size;
        if image.width() < k || image.height() < k {
            return Err(Error::InvalidDimension {
                width: image.width(),
                height: image.height(),
            });
        }
        Ok(())
    }

    pub fn forward_cached(&self, image: &ImageGrid) -> Result<ForwardCache> {
        self.check_image(image)?;
        let arch = &self.params.arch;
        let weights = &self.params.weights;
        let dims = image.dims();
        let n = dims.len();
        let layers = arch.layers();
        let (hidden, head) = layers.split_at(layers.len() - 1);
        let head = head[0];

        let mut cols = Vec::with_capacity(hidden.len());
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(hidden.len());
        let input = input_planes(image, arch.coord_channels);
        for layer in hidden {
            let src = acts.last().unwrap_or(&input);
            let mut col = Vec::new();
            im2col(src, layer.in_channels, layer.kernel, dims, &mut col);
            let mut out = vec![0.0; layer.out_channels * n];
            for (o, plane) in out.chunks_exact_mut(n).enumerate() {
                plane.fill(weights[layer.bias_offset + o]);
            }
            let kdim = layer.fan_in() as isize;
            gemm_acc(
                layer.out_channels,
                layer.fan_in(),
                n,
                &weights[layer.weight_offset..layer.bias_offset],
                (kdim, 1),
                &col,
                (n as isize, 1),
                &mut out,
            );
            for v in &mut out {
                *v = v.max(0.0);
            }
            cols.push(col);
            acts.push(out);
        }

        let last = acts.last().expect("at least one hidden layer");
        let mut z = vec![weights[head.bias_offset]; n];
        for c in 0..head.in_channels {
            let wc = weights[head.weight_offset + c];
            for (zp, a) in z.iter_mut().zip(&last[c * n..(c + 1) * n]) {
                *zp += wc * a;
            }
        }
        let probs = z.into_iter().map(sigmoid).collect();
        Ok(ForwardCache {
            dims,
            cols,
            acts,
            probs,
        })
    }

    /// Gradient of the loss with respect to every weight, given `dL/df` per pixel.
    pub fn backward_cached(&self, cache: &ForwardCache, grad_out: &[f64]) -> Result<Vec<f64>> {
        let dims = cache.dims;
        let n = dims.len();
        if grad_out.len() != n {
            return Err(Error::InvalidValue(format!(
                "gradient has {} entries for a {}x{} output",
                grad_out.len(),
                dims.width,
                dims.height
            )));
        }
        let weights = &self.params.weights;
        let layers = self.params.arch.layers();
        let (hidden, head) = layers.split_at(layers.len() - 1);
        let head: LayerShape = head[0];
        let mut grad = vec![0.0; weights.len()];

        let dz: Vec<f64> = grad_out
            .iter()
            .zip(&cache.probs)
            .map(|(g, p)| g * p * (1.0 - p))
            .collect();
        grad[head.bias_offset] = dz.iter().sum();
        let last = cache.acts.last().expect("at least one hidden layer");
        let mut dact = vec![0.0; head.in_channels * n];
        for c in 0..head.in_channels {
            let a = &last[c * n..(c + 1) * n];
            grad[head.weight_offset + c] = a.iter().zip(&dz).map(|(a, d)| a * d).sum();
            let wc = weights[head.weight_offset + c];
            for (da, d) in dact[c * n..(c + 1) * n].iter_mut().zip(&dz) {
                *da = wc * d;
            }
        }

        for (l, layer) in hidden.iter().enumerate().rev() {
            // ReLU: post-activation is positive exactly where the pre-activation was.
            for (d, a) in dact.iter_mut().zip(&cache.acts[l]) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
            for o in 0..layer.out_channels {
                grad[layer.bias_offset + o] = dact[o * n..(o + 1) * n].iter().sum();
            }
            let kdim = layer.fan_in();
            gemm_acc(
                layer.out_channels,
                n,
                kdim,
                &dact,
                (n as isize, 1),
                &cache.cols[l],
                (1, n as isize),
                &mut grad[layer.weight_offset..layer.bias_offset],
            );
            if l > 0 {
                let mut dcols = vec![0.0; kdim * n];
                gemm_acc(
                    kdim,
                    layer.out_channels,
                    n,
                    &weights[layer.weight_offset..layer.bias_offset],
                    (1, kdim as isize),
                    &dact,
                    (n as isize, 1),
                    &mut dcols,
                );
                let mut dprev = vec![0.0; layer.in_channels * n];
                col2im_acc(&dcols, layer.in_channels, layer.kernel, dims, &mut dprev);
                dact = dprev;
            }
        }
        Ok(grad)
    }
}

/// Runs the network on one image.
pub fn forward(params: &ModelParams, image: &ImageGrid) -> Result<ProbMap> {
    Ok(Network::new(params)?.forward_cached(image)?.prob_map())
}

/// Reverse-mode gradient of a loss with respect to all weights, given
/// `grad_out = dL/df` for the network's output on `image`.
pub fn backward(params: &ModelParams, image: &ImageGrid, grad_out: &[f64]) -> Result<Vec<f64>> {
    let net = Network::new(params)?;
    let cache = net.forward_cached(image)?;
    net.backward_cached(&cache, grad_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::{init_params, ArchConfig, Provenance};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> ImageGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageGrid::from_values(w, h, (0..w * h).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    fn prov() -> Provenance {
        Provenance {
            init_seed: 0,
            beta_used: None,
            bag_indices: vec![],
            loss: None,
        }
    }

    #[test]
    fn zero_network_outputs_half() {
        let arch = ArchConfig::default();
        let p = ModelParams::new(arch, vec![0.0; arch.param_count()], prov()).unwrap();
        let out = forward(&p, &random_image(7, 5, 1)).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.5));
        assert_eq!((out.width(), out.height()), (7, 5));
    }

    #[test]
    fn forward_is_pure() {
        let p = init_params(&ArchConfig::default(), 3).unwrap();
        let img = random_image(9, 9, 2);
        assert_eq!(forward(&p, &img).unwrap(), forward(&p, &img).unwrap());
    }

    #[test]
    fn image_smaller_than_kernel_rejected() {
        let arch = ArchConfig {
            kernel_size: 5,
            ..ArchConfig::default()
        };
        let p = init_params(&arch, 3).unwrap();
        assert!(matches!(
            forward(&p, &random_image(4, 8, 0)),
            Err(Error::InvalidDimension { .. })
        ));
    }

    /// Scalar reference for a 1-hidden-channel, 1-hidden-layer network.
    #[test]
    fn matches_scalar_reference() {
        let arch = ArchConfig {
            in_channels: 1,
            hidden_channels: 1,
            kernel_size: 3,
            num_hidden_layers: 1,
            coord_channels: false,
        };
        // Kernel with an identity-like centre tap plus small neighbours.
        let kernel = [0.1, -0.2, 0.0, 0.3, 1.0, -0.1, 0.0, 0.2, 0.05];
        let mut weights = kernel.to_vec();
        weights.push(0.15); // hidden bias
        weights.push(1.0); // 1x1 head weight
        weights.push(-0.25); // head bias
        let p = ModelParams::new(arch, weights, prov()).unwrap();
        let img = ImageGrid::from_values(3, 3, vec![0.5, -1.0, 2.0, 1.5, 0.0, -0.5, 1.0, 0.25, -2.0])
            .unwrap();
        let out = forward(&p, &img).unwrap();
        for r in 0..3i64 {
            for c in 0..3i64 {
                let mut acc = 0.15;
                for ky in 0..3i64 {
                    for kx in 0..3i64 {
                        let (sr, sc) = (r + ky - 1, c + kx - 1);
                        if (0..3).contains(&sr) && (0..3).contains(&sc) {
                            acc += kernel[(ky * 3 + kx) as usize] * img.get(sr as usize, sc as usize);
                        }
                    }
                }
                let expect = 1.0 / (1.0 + (-(acc.max(0.0) - 0.25)).exp());
                assert!((out.get(r as usize, c as usize) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn coordinate_planes_span_unit_interval() {
        let img = ImageGrid::new(5, 3, 7.0).unwrap();
        let planes = input_planes(&img, true);
        assert_eq!(planes.len(), 3 * 15);
        assert_eq!(&planes[15..20], &[-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(planes[30], -1.0);
        assert_eq!(planes[44], 1.0);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero() {
        let p = init_params(&ArchConfig::default(), 5).unwrap();
        let img = random_image(8, 8, 4);
        let g = backward(&p, &img, &vec![0.0; 64]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(backward(&p, &img, &[0.0; 10]).is_err());
    }

    #[test]
    fn backward_is_deterministic() {
        let p = init_params(&ArchConfig::default(), 5).unwrap();
        let img = random_image(8, 6, 4);
        let up: Vec<f64> = (0..48).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(backward(&p, &img, &up).unwrap(), backward(&p, &img, &up).unwrap());
    }

    #[test]
    fn outputs_in_open_unit_interval_for_random_weights() {
        let arch = ArchConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..5 {
            let w = (0..arch.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = ModelParams::new(arch, w, prov()).unwrap();
            let img = random_image(10 + trial, 7, trial as u64);
            let out = forward(&p, &img).unwrap();
            assert_eq!(out.dims(), img.dims());
            assert!(out.values().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}
