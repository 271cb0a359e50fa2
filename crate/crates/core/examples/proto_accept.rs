//! Scratch driver for tuning the end-to-end acceptance configurations.
//! Delete once the numbers are frozen into tests/acceptance.rs.

use std::time::Instant;

use gestauth_core::classifiers::{
    build_architecture, predict_proba_normalized, rf_predict, train_classifier,
    train_random_forest, training_norm_stats, ArchName, ArchSpec, ForestSpec, TrainConfig,
};
use gestauth_core::dataset::{
    apply_norm, fit_norm_stats, simulate_corpus, temporal_split, Gesture, SimUserProfile,
    SplitConfig,
};
use gestauth_core::distances::{LossKind, LossSpec};
use gestauth_core::eval::{auroc, tstr_auth_with_model, ScoreSet, TstrAuthConfig};
use gestauth_core::features::extract_features;
use gestauth_core::generative::{train_vae, SampleStrategy, VaeConfig, VaeTrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn corpus(users: usize, gestures: usize, non: usize, noise: f64, seed: u64) -> Vec<Gesture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profiles: Vec<SimUserProfile> = (0..users)
        .map(|i| SimUserProfile::random(&format!("user-{i}"), &mut rng, noise))
        .collect();
    simulate_corpus(&profiles, gestures, non, seed)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn c8(noise: f64, epochs: usize, lr: f64) {
    let raw = corpus(8, 20, 5, noise, 42);
    let target = "user-0";

    let t0 = Instant::now();
    let cfg = TrainConfig {
        lr,
        pos_weight: 4.0,
        patience: epochs,
        max_epochs: epochs,
        batch_size: 32,
        seed: 0,
        limited_fraction: None,
        split: SplitConfig::default(),
    };
    let mut model = build_architecture(&ArchSpec::new(ArchName::ComplexMix), 0).unwrap();
    let hist = train_classifier(&mut model, &raw, target, &cfg).unwrap();
    let (split, stats) = training_norm_stats(&raw, &cfg, target).unwrap();
    let test: Vec<&Gesture> = split
        .select(&raw, &split.test)
        .into_iter()
        .filter(|g| g.is_gesture)
        .collect();
    let scores = predict_proba_normalized(&model, &stats, &test).unwrap();
    let labels: Vec<bool> = test.iter().map(|g| g.user_id == target).collect();
    let s = ScoreSet::new(scores, labels.clone()).unwrap();
    let deep_auroc = auroc(&s).unwrap();
    let deep_secs = t0.elapsed().as_secs_f64();
    println!(
        "c8 deep: auroc {:.4}  best_epoch {}  {:.1}s",
        deep_auroc, hist.best_epoch, deep_secs
    );

    let t1 = Instant::now();
    let split = temporal_split(&raw, &SplitConfig::default()).unwrap();
    let trainval: Vec<&Gesture> = split
        .select(&raw, &split.train)
        .into_iter()
        .chain(split.select(&raw, &split.validation))
        .filter(|g| g.is_gesture)
        .collect();
    let feats: Vec<Vec<f64>> = trainval
        .iter()
        .map(|g| extract_features(&g.series).values().to_vec())
        .collect();
    let labels: Vec<bool> = trainval.iter().map(|g| g.user_id == target).collect();
    let forest = train_random_forest(&ForestSpec::new(100, 0), &feats, &labels).unwrap();
    let test: Vec<&Gesture> = split
        .select(&raw, &split.test)
        .into_iter()
        .filter(|g| g.is_gesture)
        .collect();
    let test_feats: Vec<Vec<f64>> = test
        .iter()
        .map(|g| extract_features(&g.series).values().to_vec())
        .collect();
    let scores = rf_predict(&forest, &test_feats).unwrap();
    let labels: Vec<bool> = test.iter().map(|g| g.user_id == target).collect();
    let s = ScoreSet::new(scores, labels).unwrap();
    println!(
        "c8 rf100: auroc {:.4}  {:.1}s",
        auroc(&s).unwrap(),
        t1.elapsed().as_secs_f64()
    );
}

fn c9(noise: f64, users: usize, gestures: usize, epochs: usize, lr: f64, batch: usize) {
    let mut base_far = Vec::new();
    let mut aug_far = Vec::new();
    let mut base_auroc = Vec::new();
    let mut aug_auroc = Vec::new();
    for s in 0..5u64 {
        let t0 = Instant::now();
        let raw = corpus(users, gestures, 0, noise, 100 + s);
        let stats = fit_norm_stats(&raw).unwrap();
        let norm: Vec<Gesture> = raw.iter().map(|g| apply_norm(g, &stats)).collect();
        let vae_cfg = VaeTrainConfig {
            model: VaeConfig {
                loss: LossSpec::for_kind(LossKind::Mse),
                ..VaeConfig::vae()
            },
            lr,
            batch_size: batch,
            max_epochs: epochs,
            patience: epochs,
            val_fraction: 0.2,
            seed: s,
            exclude_users: vec!["user-0".into()],
        };
        let (model, _) = train_vae(&norm, &vae_cfg).unwrap();
        let cfg = TstrAuthConfig {
            vae: vae_cfg.clone(),
            strategy: None,
            n_synthetic: 500,
            per_terminal: 2,
            include_real_negatives: false,
            forest: ForestSpec::new(100, s),
            seed: s,
        };
        let base = tstr_auth_with_model(&model, &norm, "user-0", &cfg).unwrap();
        let aug_cfg = TstrAuthConfig {
            strategy: Some(SampleStrategy::adversarial()),
            ..cfg
        };
        let aug = tstr_auth_with_model(&model, &norm, "user-0", &aug_cfg).unwrap();
        println!(
            "c9 seed {s}: base far@0 {:.3} auroc {:.3} | aug far@0 {:.3} auroc {:.3}  {:.0}s",
            base.far_at_zero,
            base.auroc,
            aug.far_at_zero,
            aug.auroc,
            t0.elapsed().as_secs_f64()
        );
        base_far.push(base.far_at_zero);
        aug_far.push(aug.far_at_zero);
        base_auroc.push(base.auroc);
        aug_auroc.push(aug.auroc);
    }
    println!(
        "c9 medians: base far@0 {:.3} auroc {:.3} | aug far@0 {:.3} auroc {:.3}",
        median(base_far),
        median(base_auroc),
        median(aug_far),
        median(aug_auroc)
    );
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let f = |i: usize| -> f64 { args[i].parse().unwrap() };
    let u = |i: usize| -> usize { args[i].parse().unwrap() };
    match args[1].as_str() {
        "c8" => c8(f(2), u(3), f(4)),
        "c9" => c9(f(2), u(3), u(4), u(5), f(6), u(7)),
        other => panic!("unknown mode {other}"),
    }
}
