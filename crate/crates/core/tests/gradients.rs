//! Analytic gradients against central finite differences.

use lowprec_core::loss::{LossKind, LossSpec};
use lowprec_core::segmenter::{backward, forward, init_params, ArchConfig, ModelParams};
use lowprec_core::{BinaryMask, ImageGrid, ProbMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BETAS: [f64; 4] = [0.1, 0.5, 0.9, 0.99];
const KINDS: [LossKind; 4] = [
    LossKind::Dice,
    LossKind::CrossEntropy,
    LossKind::Tversky,
    LossKind::BalancedCE,
];

fn random_pair(rng: &mut ChaCha8Rng, w: usize, h: usize) -> (BinaryMask, Vec<f64>) {
    let y = BinaryMask::from_bools(w, h, (0..w * h).map(|_| rng.random_bool(0.5)).collect()).unwrap();
    let f = (0..w * h).map(|_| rng.random_range(0.05..0.95)).collect();
    (y, f)
}

fn loss_value(spec: &LossSpec, y: &BinaryMask, f: &[f64]) -> f64 {
    let map = ProbMap::from_values(y.width(), y.height(), f.to_vec()).unwrap();
    spec.evaluate(y, &map).unwrap().value
}

fn agrees(analytic: f64, numeric: f64, rel_tol: f64, abs_floor: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs_floor || diff <= rel_tol * analytic.abs().max(numeric.abs())
}

#[test]
fn loss_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-6;
    for kind in KINDS {
        for beta in BETAS {
            let spec = LossSpec::new(kind, beta);
            for _ in 0..3 {
                let (y, f) = random_pair(&mut rng, 8, 8);
                let map = ProbMap::from_values(8, 8, f.clone()).unwrap();
                let analytic = spec.evaluate(&y, &map).unwrap().grad;
                for j in 0..f.len() {
                    let mut up = f.clone();
                    let mut down = f.clone();
                    up[j] += h;
                    down[j] -= h;
                    let numeric = (loss_value(&spec, &y, &up) - loss_value(&spec, &y, &down)) / (2.0 * h);
                    let floor = if analytic[j].abs() < 1e-3 { 1e-7 } else { 0.0 };
                    assert!(
                        agrees(analytic[j], numeric, 1e-4, floor),
                        "{kind:?} beta={beta} pixel {j}: analytic {} numeric {numeric}",
                        analytic[j]
                    );
                }
            }
        }
    }
}

#[test]
fn bce_and_ce_gradients_are_proportional() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (y, f) = random_pair(&mut rng, 8, 8);
        let map = ProbMap::from_values(8, 8, f).unwrap();
        let bce = LossSpec::balanced_ce(0.5).evaluate(&y, &map).unwrap();
        let ce = LossSpec::cross_entropy().evaluate(&y, &map).unwrap();
        assert!((bce.value - 0.5 * ce.value).abs() <= 1e-9);
        for (b, c) in bce.grad.iter().zip(&ce.grad) {
            assert!((b - 0.5 * c).abs() <= 1e-12 * c.abs().max(1.0));
        }
    }
}

fn network_loss(params: &ModelParams, image: &ImageGrid, y: &BinaryMask, spec: &LossSpec) -> f64 {
    spec.evaluate(y, &forward(params, image).unwrap()).unwrap().value
}

fn check_network(arch: ArchConfig, seed: u64, spec: LossSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, hgt) = (8, 7);
    let image = ImageGrid::from_values(w, hgt, (0..w * hgt).map(|_| rng.random_range(-1.5..1.5)).collect())
        .unwrap();
    let y = BinaryMask::from_bools(w, hgt, (0..w * hgt).map(|_| rng.random_bool(0.4)).collect()).unwrap();
    let mut params = init_params(&arch, seed).unwrap();
    // Non-zero biases so every layer's bias gradient is exercised.
    for layer in arch.layers() {
        for b in &mut params.weights[layer.bias_offset..layer.end()] {
            *b = rng.random_range(-0.1..0.1);
        }
    }
    let out = forward(&params, &image).unwrap();
    let grad_out = spec.evaluate(&y, &out).unwrap().grad;
    let analytic = backward(&params, &image, &grad_out).unwrap();
    assert_eq!(analytic.len(), arch.param_count());

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..params.weights.len() {
        let mut p = params.clone();
        p.weights[i] = params.weights[i] + h;
        let up = network_loss(&p, &image, &y, &spec);
        p.weights[i] = params.weights[i] - h;
        let down = network_loss(&p, &image, &y, &spec);
        let numeric = (up - down) / (2.0 * h);
        let diff = (analytic[i] - numeric).abs();
        if diff > 1e-8 {
            worst = worst.max(diff / analytic[i].abs().max(numeric.abs()));
        }
        assert!(
            agrees(analytic[i], numeric, 1e-4, 1e-8),
            "{:?} weight {i}: analytic {} numeric {numeric}",
            spec.kind,
            analytic[i]
        );
    }
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

#[test]
fn network_gradient_plain_architecture() {
    let arch = ArchConfig {
        coord_channels: false,
        ..ArchConfig::default()
    };
    assert_eq!(arch.param_count(), 2497);
    check_network(arch, 1, LossSpec::dice());
}

#[test]
fn network_gradient_all_losses_with_coordinates() {
    for (i, kind) in KINDS.into_iter().enumerate() {
        for beta in BETAS {
            let arch = ArchConfig {
                hidden_channels: 4,
                num_hidden_layers: 2,
                ..ArchConfig::default()
            };
            check_network(arch, 10 + i as u64, LossSpec::new(kind, beta));
        }
    }
}

#[test]
fn network_gradient_deeper_wider_kernel() {
    let arch = ArchConfig {
        hidden_channels: 3,
        kernel_size: 5,
        num_hidden_layers: 3,
        ..ArchConfig::default()
    };
    check_network(arch, 77, LossSpec::tversky(0.9));
}
