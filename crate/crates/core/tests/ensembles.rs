//! Ensemble training and prediction on small pools.

use lowprec_core::ensemble::{
    member_maps, predict, threshold, train_ensemble, Ensemble, EnsembleConfig, EnsembleMode,
};
use lowprec_core::segmenter::{forward, ArchConfig, TrainConfig};
use lowprec_core::synth::{generate_dataset, SceneConfig, Split};
use lowprec_core::{BinaryMask, ImageGrid};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn data() -> Vec<(ImageGrid, BinaryMask)> {
    let cfg = SceneConfig {
        width: 24,
        height: 24,
        fg_radius_range: (2, 3),
        ..SceneConfig::default()
    };
    generate_dataset(&cfg, 6, Split { train: 6, val: 0, test: 0 }).unwrap().train_pairs()
}

fn config(mode: EnsembleMode, k: usize) -> EnsembleConfig {
    EnsembleConfig {
        arch: ArchConfig {
            hidden_channels: 3,
            ..ArchConfig::default()
        },
        train: TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        },
        ..EnsembleConfig::new(mode, k)
    }
}

#[test]
fn singleton_ensemble_is_its_member() {
    let d = data();
    let ens = train_ensemble(&d, &config(EnsembleMode::Baseline, 1)).unwrap();
    for (image, _) in &d {
        let (avg, mask) = predict(&ens, image).unwrap();
        let single = forward(&ens.members[0], image).unwrap();
        assert_eq!(avg, single);
        assert_eq!(mask, threshold(&single, 0.5).unwrap());
    }
}

#[test]
fn twelve_random_members_have_distinct_betas() {
    let d = data();
    let cfg = config(EnsembleMode::LowPrecRandom, 12);
    let ens = train_ensemble(&d, &cfg).unwrap();
    let betas: Vec<f64> = ens.members.iter().map(|m| m.provenance.beta_used.unwrap()).collect();
    for (i, a) in betas.iter().enumerate() {
        assert!((0.9..1.0).contains(a));
        assert!(betas[i + 1..].iter().all(|b| b != a));
    }
    assert_eq!(ens, train_ensemble(&d, &cfg).unwrap());
}

#[test]
fn mask_ignores_member_order() {
    let d = data();
    let ens = train_ensemble(&d, &config(EnsembleMode::LowPrecRandom, 6)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let mut members = ens.members.clone();
        members.shuffle(&mut rng);
        let shuffled = Ensemble::new(members, ens.config.clone()).unwrap();
        for (image, _) in &d {
            let (a, mask_a) = predict(&ens, image).unwrap();
            let (b, mask_b) = predict(&shuffled, image).unwrap();
            assert_eq!(mask_a, mask_b);
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() <= 1e-15);
            }
        }
    }
}

#[test]
fn identical_members_match_single_model() {
    let d = data();
    let ens = train_ensemble(&d, &config(EnsembleMode::LowPrecFixed, 1)).unwrap();
    let copies = Ensemble::new(vec![ens.members[0].clone(); 5], config(EnsembleMode::LowPrecFixed, 5)).unwrap();
    for (image, _) in &d {
        let single = threshold(&forward(&ens.members[0], image).unwrap(), 0.9).unwrap();
        assert_eq!(predict(&copies, image).unwrap().1, single);
        assert_eq!(member_maps(&copies, image).unwrap().len(), 5);
    }
}
