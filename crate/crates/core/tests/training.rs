use ndarray::{Array2, Array3, Axis};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use vbones::data::{generate_synthetic, SyntheticMotionSpec};
use vbones::losses::LossWeights;
use vbones::nets::{LiftingModel, ModelConfig};
use vbones::skeleton::VirtualConfigName;
use vbones::train::{
    anchor_root, epoch_batches, pair_middle_frames, train, LabeledSequence, TrainingConfig, TrainingSet,
    WindowLabel,
};

fn small(vc: VirtualConfigName, width: usize) -> ModelConfig {
    ModelConfig {
        virtual_config: vc,
        receptive_field: 9,
        hidden_width: width,
        ..Default::default()
    }
}

fn normal(shape: (usize, usize, usize), sigma: f64, seed: u64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_simple_fn(shape, || {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * sigma
    })
}

fn clip(frames: usize, seed: u64) -> Vec<LabeledSequence<f64>> {
    let seq = generate_synthetic::<f64>(&SyntheticMotionSpec::new(frames, seed)).unwrap();
    vec![LabeledSequence {
        id: "S1/Walking/cam0".into(),
        action: "Walking".into(),
        camera_id: "cam0".into(),
        sequence: seq,
    }]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn learning_rate_decays_geometrically(lr in 1e-5f64..1e-1, decay in 0.5f64..1.0, k in 0usize..200) {
        let cfg = TrainingConfig { lr, lr_decay_per_epoch: decay, ..Default::default() };
        prop_assert!((cfg.lr_at(k) - lr * decay.powi(k as i32)).abs() <= 1e-15 * lr);
        prop_assert!(cfg.lr_at(k + 1) <= cfg.lr_at(k));
    }

    #[test]
    fn attention_is_a_simplex_and_directions_are_unit(seed in 0u64..1000) {
        let model = LiftingModel::<f64>::new(ModelConfig { seed, ..small(VirtualConfigName::VB23, 32) }).unwrap();
        let random = normal((10, 17, 2), 0.3, seed);
        let current = normal((1, 17, 2), 0.3, seed + 1);
        let out = model.length_net_forward(random.view(), current.index_axis(Axis(0), 0)).unwrap();
        for col in out.attention_weights.columns() {
            prop_assert!(col.iter().all(|w| *w >= 0.0));
            prop_assert!((col.sum() - 1.0).abs() < 1e-9);
        }
        prop_assert!(out.real_lengths.iter().all(|l| *l >= 0.0));
        prop_assert!(out.virtual_lengths.iter().all(|l| *l >= 0.0));
        let dirs = model.direction_net_forward(normal((9, 17, 2), 0.3, seed + 2).view()).unwrap();
        for row in dirs.rows() {
            prop_assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-9);
        }
        let joints = model.composer_forward(&out.real_lengths, &out.virtual_lengths, dirs.view()).unwrap();
        prop_assert!(joints.row(0).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn anchoring_adds_the_root(seed in 0u64..1000) {
        let pred = normal((5, 17, 3), 0.2, seed);
        let roots: Array2<f64> = normal((5, 1, 3), 3.0, seed + 1).index_axis(Axis(1), 0).to_owned();
        let anchored = anchor_root(pred.view(), roots.view()).unwrap();
        for t in 0..5 {
            for j in 0..17 {
                for k in 0..3 {
                    prop_assert_eq!(anchored[[t, j, k]], pred[[t, j, k]] + roots[[t, k]]);
                }
            }
        }
    }

    #[test]
    fn middle_frame_pairs_are_consecutive(middles in prop::collection::vec((0usize..3, 0usize..2, 0usize..12), 1..40)) {
        let labels: Vec<WindowLabel> = middles
            .iter()
            .map(|&(s, c, m)| WindowLabel { sequence: s, camera: format!("cam{c}"), middle: m })
            .collect();
        let pairs = pair_middle_frames(&labels);
        for &(i, j) in &pairs {
            prop_assert_eq!(labels[i].sequence, labels[j].sequence);
            prop_assert_eq!(&labels[i].camera, &labels[j].camera);
            prop_assert_eq!(labels[i].middle + 1, labels[j].middle);
        }
        let expected = labels
            .iter()
            .filter(|a| labels.iter().any(|b| b.sequence == a.sequence && b.camera == a.camera && b.middle == a.middle + 1))
            .count();
        prop_assert_eq!(pairs.len(), expected);
    }

    #[test]
    fn epoch_batches_cover_each_frame_once(lengths in prop::collection::vec(1usize..40, 1..5), bs in 2usize..33, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batches = epoch_batches(&lengths, bs, &mut rng);
        let mut seen: Vec<(usize, usize)> = batches.iter().flatten().map(|s| (s.sequence, s.frame)).collect();
        prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= bs + 1));
        seen.sort_unstable();
        let all: Vec<(usize, usize)> = lengths.iter().enumerate().flat_map(|(s, &n)| (0..n).map(move |f| (s, f))).collect();
        prop_assert_eq!(seen, all);
    }
}

#[test]
fn identical_seeds_give_identical_first_epoch() {
    let items = clip(64, 4);
    let run = || {
        let mut model = LiftingModel::<f64>::new(small(VirtualConfigName::VB23, 32)).unwrap();
        let set = TrainingSet::from_sequences(&items, model.bone_set()).unwrap();
        let cfg = TrainingConfig {
            epochs: 1,
            batch_size: Some(16),
            ..Default::default()
        };
        let report = train(&mut model, &set, &cfg, None).unwrap();
        (report.epochs[0].clone(), model.params().tensors().to_vec())
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a.total.to_bits(), b.total.to_bits());
    let bits = |c: &vbones::losses::LossComponents<f64>| c.values().map(f64::to_bits);
    assert_eq!(bits(&a.components), bits(&b.components));
    assert_eq!(pa, pb);
}

#[test]
fn fc_only_training_decreases_fc_every_epoch() {
    let items = clip(512, 1);
    let mut model = LiftingModel::<f64>::new(small(VirtualConfigName::VB23, 128)).unwrap();
    let set = TrainingSet::from_sequences(&items, model.bone_set()).unwrap();
    let weights = LossWeights {
        length: 0.0,
        attention: 0.0,
        direction: 0.0,
        joint_shift: 0.0,
        proj_dir: 0.0,
        proj_len: 0.0,
        fc: 1.0,
    };
    let cfg = TrainingConfig {
        epochs: 10,
        batch_size: Some(32),
        lr: 1e-3,
        loss_weights: weights,
        ..Default::default()
    };
    let report = train(&mut model, &set, &cfg, None).unwrap();
    let fc: Vec<f64> = report.epochs.iter().map(|e| e.components.fc).collect();
    assert!(fc.windows(2).all(|w| w[1] < w[0]), "fc per epoch: {fc:?}");
}

#[test]
fn training_writes_log_and_rotates_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let items = clip(40, 2);
    let mut model = LiftingModel::<f64>::new(small(VirtualConfigName::VB5, 16)).unwrap();
    let set = TrainingSet::from_sequences(&items, model.bone_set()).unwrap();
    let cfg = TrainingConfig {
        epochs: 3,
        batch_size: Some(8),
        ..Default::default()
    };
    let report = train(&mut model, &set, &cfg, Some(dir.path())).unwrap();
    assert_eq!(report.epochs.len(), 3);
    let log = std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
    let steps = report.epochs.iter().map(|e| e.steps).sum::<usize>();
    assert_eq!(log.lines().count(), steps);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["total"].as_f64().unwrap().is_finite());
    }
    let ckpts: Vec<_> = std::fs::read_dir(dir.path().join("checkpoints")).unwrap().collect();
    assert_eq!(ckpts.len(), 1);
    let last = report.last_checkpoint.unwrap();
    let restored = LiftingModel::<f64>::load(&last).unwrap();
    assert_eq!(restored.params().tensors(), model.params().tensors());
}
