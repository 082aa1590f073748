use ndarray::{Array1, Array2, Array3, Axis};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use vbones::data::{
    generate_synthetic, normalize_2d, denormalize_2d, sample_random_frames, sliding_windows, SyntheticMotionSpec,
};
use vbones::geometry::{
    bone_directions_from_joints, compose_joint_multi_path, compose_joint_single_path, displacements,
    project_pinhole, project_sequence, root_relative, CameraIntrinsics,
};
use vbones::losses::{
    attention_loss, direction_loss, fc_loss, joint_shift_loss, length_loss, projection_consistency_loss,
};
use vbones::metrics::{mpjpe, mpjve, n_mpjpe, p_mpjpe};
use vbones::skeleton::{
    bone_lengths_from_joints, default_topology, enumerate_paths, make_virtual_config, BoneSet, SkeletonTopology,
    VirtualBoneConfig, VirtualConfigName,
};

fn pose(seed: u64, frame: usize) -> Array2<f64> {
    let seq = generate_synthetic::<f64>(&SyntheticMotionSpec::new(frame + 1, seed)).unwrap();
    seq.joints3d.unwrap().index_axis(Axis(0), frame).to_owned()
}

fn clip(seed: u64, frames: usize) -> Array3<f64> {
    generate_synthetic::<f64>(&SyntheticMotionSpec::new(frames, seed))
        .unwrap()
        .joints3d
        .unwrap()
}

fn gaussian(shape: (usize, usize, usize), sigma: f64, seed: u64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_simple_fn(shape, || {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * sigma
    })
}

fn camera() -> CameraIntrinsics<f64> {
    CameraIntrinsics::new(1145.0, 1144.0, 512.0, 515.0).unwrap()
}

fn random_parents() -> impl Strategy<Value = Vec<i64>> {
    (2usize..24).prop_flat_map(|n| {
        (1..n)
            .map(|i| (0..i as i64).boxed())
            .collect::<Vec<_>>()
            .prop_map(|tail| std::iter::once(-1).chain(tail).collect())
    })
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("j{i}")).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_parent_array_builds_a_tree(parents in random_parents()) {
        let topo = SkeletonTopology::from_parents(names(parents.len()), &parents).unwrap();
        prop_assert_eq!(topo.num_real_bones(), parents.len() - 1);
        prop_assert_eq!(topo.root(), 0);
        for j in 1..parents.len() {
            prop_assert_eq!(topo.real_path(j).len(), topo.depth(j));
        }
        prop_assert_eq!(topo.parent_indices(), parents);
    }

    #[test]
    fn virtual_bones_never_duplicate_real_bones(parents in random_parents(), picks in prop::collection::vec((0usize..24, 0usize..24), 0..12)) {
        let n = parents.len();
        let topo = SkeletonTopology::from_parents(names(n), &parents).unwrap();
        let mut pairs: Vec<(usize, usize)> = picks
            .into_iter()
            .map(|(a, b)| (a % n, b % n))
            .filter(|&(a, b)| a != b && !topo.adjacent(a, b))
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        let cfg = VirtualBoneConfig::custom(VirtualConfigName::Custom, &pairs, &topo).unwrap();
        for &(a, b) in &cfg.pairs {
            prop_assert!(a < b && !topo.adjacent(a, b));
        }
        let set = BoneSet::new(topo.clone(), cfg);
        prop_assert_eq!(set.num_real(), n - 1);
        prop_assert_eq!(set.num_virtual(), pairs.len());
        if let Some(&(child, parent)) = topo.real_bones().first() {
            prop_assert!(VirtualBoneConfig::custom(VirtualConfigName::Custom, &[(parent, child)], &topo).is_err());
        }
    }

    #[test]
    fn path_enumeration_is_deterministic_and_bounded(target in 1usize..17, cap in 1usize..7) {
        let set = BoneSet::standard(VirtualConfigName::VB23).unwrap();
        if cap < set.topology().depth(target) {
            prop_assert!(enumerate_paths(&set, target, cap).is_err());
            return Ok(());
        }
        let a = enumerate_paths(&set, target, cap).unwrap();
        let b = enumerate_paths(&set, target, cap).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(!a.paths.is_empty());
        for path in &a.paths {
            prop_assert!(path.len() <= cap);
            let mut bones: Vec<usize> = path.iter().map(|s| s.bone).collect();
            bones.sort_unstable();
            bones.dedup();
            prop_assert_eq!(bones.len(), path.len());
        }
    }

    #[test]
    fn every_path_reaches_the_same_joint(seed in 0u64..10_000, frame in 0usize..4, target in 1usize..17) {
        let set = BoneSet::standard(VirtualConfigName::VB23).unwrap();
        let p = pose(seed, frame);
        let dirs = bone_directions_from_joints(p.view(), &set).unwrap();
        let lens = bone_lengths_from_joints(p.view(), &set).unwrap();
        let root = set.topology().root();
        let paths = enumerate_paths(&set, target, 5).unwrap();
        let scale = lens.iter().copied().fold(0.0, f64::max);
        for path in &paths.paths {
            let q = compose_joint_single_path(dirs.view(), lens.view(), path).unwrap();
            for k in 0..3 {
                prop_assert!((q[k] - (p[[target, k]] - p[[root, k]])).abs() <= 1e-9 * scale);
            }
        }
        let n = paths.paths.len();
        let w = vec![1.0 / n as f64; n];
        let fused = compose_joint_multi_path(dirs.view(), lens.view(), &paths, &w).unwrap();
        for k in 0..3 {
            prop_assert!((fused[k] - (p[[target, k]] - p[[root, k]])).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn projection_ignores_depth_scaling(x in -2e3f64..2e3, y in -2e3f64..2e3, z in 100f64..1e4, s in 0.1f64..10.0) {
        let cam = camera();
        let a = project_pinhole([x, y, z], &cam).unwrap();
        let b = project_pinhole([s * x, s * y, s * z], &cam).unwrap();
        prop_assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        prop_assert!(project_pinhole([x, y, -z], &cam).is_err());
    }

    #[test]
    fn displacements_ignore_constant_offsets(seed in 0u64..10_000, du in -500f64..500.0, dv in -500f64..500.0) {
        let seq = gaussian((6, 17, 2), 50.0, seed);
        let mut moved = seq.clone();
        moved.index_axis_mut(Axis(2), 0).mapv_inplace(|u| u + du);
        moved.index_axis_mut(Axis(2), 1).mapv_inplace(|v| v + dv);
        let a = displacements(seq.view()).unwrap();
        let b = displacements(moved.view()).unwrap();
        prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-9));
    }

    #[test]
    fn normalization_round_trips(seed in 0u64..10_000) {
        let cam = camera();
        let px = gaussian((3, 17, 2), 300.0, seed);
        let back = denormalize_2d(normalize_2d(px.view(), &cam).view(), &cam);
        prop_assert!(px.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn losses_are_nonnegative_and_zero_at_truth(seed in 0u64..10_000) {
        let topo = default_topology();
        let gt = pose(seed, 0);
        let est = &gt + &gaussian((1, 17, 3), 20.0, seed).index_axis(Axis(0), 0);
        let js = joint_shift_loss(est.view(), gt.view(), &topo).unwrap();
        prop_assert!(js >= 0.0);
        prop_assert_eq!(joint_shift_loss(gt.view(), gt.view(), &topo).unwrap(), 0.0);
        prop_assert!(length_loss(est.view(), gt.view()).unwrap() >= 0.0);
        prop_assert!(fc_loss(est.view(), gt.view()).unwrap() >= 0.0);
        prop_assert_eq!(fc_loss(gt.view(), gt.view()).unwrap(), 0.0);
        let set = BoneSet::standard(VirtualConfigName::VB23).unwrap();
        let d = bone_directions_from_joints(gt.view(), &set).unwrap();
        let de = bone_directions_from_joints(est.view(), &set).unwrap();
        prop_assert!(direction_loss(de.view(), d.view()).unwrap() >= 0.0);
        prop_assert_eq!(direction_loss(d.view(), d.view()).unwrap(), 0.0);
        let att = Array1::from_elem(10, 0.1);
        prop_assert_eq!(attention_loss(att.view(), att.view()).unwrap(), 0.0);
    }

    #[test]
    fn joint_shift_ignores_translation(seed in 0u64..10_000, t in prop::array::uniform3(-1e3f64..1e3)) {
        let topo = default_topology();
        let gt = pose(seed, 0);
        let est = &gt + &gaussian((1, 17, 3), 20.0, seed + 1).index_axis(Axis(0), 0);
        let shifted = &est + &Array1::from(t.to_vec());
        let a = joint_shift_loss(est.view(), gt.view(), &topo).unwrap();
        let b = joint_shift_loss(shifted.view(), gt.view(), &topo).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn projection_consistency_ignores_constant_pixel_offset(seed in 0u64..10_000, du in -80f64..80.0, dv in -80f64..80.0) {
        let cam = camera();
        let est = clip(seed, 6);
        let observed = project_sequence(est.view(), &cam).unwrap();
        let mut shifted = observed.clone();
        shifted.index_axis_mut(Axis(2), 0).mapv_inplace(|u| u + du);
        shifted.index_axis_mut(Axis(2), 1).mapv_inplace(|v| v + dv);
        let loss = projection_consistency_loss(est.view(), shifted.view(), &cam).unwrap();
        prop_assert!(loss.abs() < 1e-9);
        let noisy = &observed + &gaussian((6, 17, 2), 2.0, seed);
        prop_assert!(projection_consistency_loss(est.view(), noisy.view(), &cam).unwrap() > 0.0);
    }

    #[test]
    fn protocol_ordering_on_random_pairs(seed in 0u64..10_000, sigma in 5f64..80.0, scale in 0.8f64..1.2) {
        let gt = root_relative(clip(seed, 4).view(), 0);
        let pred = gt.mapv(|x| x * scale) + gaussian(gt.dim(), sigma, seed ^ 0x5eed);
        let p1 = mpjpe(pred.view(), gt.view()).unwrap();
        let p2 = p_mpjpe(pred.view(), gt.view()).unwrap();
        let n = n_mpjpe(pred.view(), gt.view()).unwrap();
        prop_assert!(p2 <= n + 1e-9, "p {} n {}", p2, n);
        prop_assert!(n <= p1 + 1e-9, "n {} mpjpe {}", n, p1);
    }

    #[test]
    fn aligned_metrics_are_invariant(seed in 0u64..10_000, s in 0.5f64..2.0, angle in -3.1f64..3.1, t in prop::array::uniform3(-500f64..500.0)) {
        let gt = root_relative(clip(seed, 3).view(), 0);
        let pred = &gt + &gaussian(gt.dim(), 30.0, seed + 7);
        let (c, si) = (angle.cos(), angle.sin());
        let mut moved = pred.clone();
        for mut p in moved.lanes_mut(Axis(2)) {
            let (x, y, z) = (p[0], p[1], p[2]);
            p[0] = s * (c * x + si * z) + t[0];
            p[1] = s * y + t[1];
            p[2] = s * (-si * x + c * z) + t[2];
        }
        let a = p_mpjpe(pred.view(), gt.view()).unwrap();
        let b = p_mpjpe(moved.view(), gt.view()).unwrap();
        prop_assert!((a - b).abs() <= 1e-6 * a.max(1.0));
        let scaled = pred.mapv(|x| x * s);
        let na = n_mpjpe(pred.view(), gt.view()).unwrap();
        let nb = n_mpjpe(scaled.view(), gt.view()).unwrap();
        prop_assert!((na - nb).abs() <= 1e-6 * na.max(1.0));
        let offset = &pred + &Array1::from(t.to_vec());
        let va = mpjve(pred.view(), gt.view()).unwrap();
        let vb = mpjve(offset.view(), gt.view()).unwrap();
        prop_assert!((va - vb).abs() <= 1e-9 * va.max(1.0));
    }

    #[test]
    fn synthetic_bones_keep_their_length(seed in 0u64..10_000) {
        let spec = SyntheticMotionSpec::new(40, seed);
        let seq = generate_synthetic::<f64>(&spec).unwrap();
        let j3 = seq.joints3d.as_ref().unwrap();
        let set = BoneSet::standard(VirtualConfigName::VB0).unwrap();
        let first = bone_lengths_from_joints(j3.index_axis(Axis(0), 0), &set).unwrap();
        for f in 1..40 {
            let l = bone_lengths_from_joints(j3.index_axis(Axis(0), f), &set).unwrap();
            prop_assert!(l.iter().zip(&first).all(|(a, b)| (a - b).abs() < 1e-6));
        }
        let projected = project_sequence(j3.view(), seq.camera.as_ref().unwrap()).unwrap();
        let j2 = seq.joints2d.as_ref().unwrap();
        prop_assert!(projected.iter().zip(j2).all(|(a, b)| (a - b).abs() < 1e-9));
        prop_assert!(j3.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn synthesis_is_seed_deterministic(seed in 0u64..10_000) {
        let mut spec = SyntheticMotionSpec::new(12, seed);
        spec.noise_sigma_2d = 1.5;
        let a = generate_synthetic::<f64>(&spec).unwrap();
        let b = generate_synthetic::<f64>(&spec).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn windows_cover_every_frame(frames in 9usize..120, rf_pow in 1u32..4) {
        let rf = 3usize.pow(rf_pow);
        prop_assume!(frames >= rf);
        let windows = sliding_windows(frames, rf).unwrap();
        prop_assert_eq!(windows.len(), frames);
        for (c, w) in windows.iter().enumerate() {
            prop_assert_eq!(w.center, c);
            prop_assert_eq!(w.frames.len(), rf);
            prop_assert_eq!(w.frames[rf / 2], c);
            prop_assert!(w.frames.iter().all(|&f| f < frames));
            prop_assert!(w.frames.windows(2).all(|p| p[0] <= p[1]));
        }
    }

    #[test]
    fn random_frames_are_distinct_and_in_range(frames in 10usize..400, f_len in 1usize..10, seed in any::<u64>()) {
        let idx = sample_random_frames(frames, f_len, seed).unwrap();
        prop_assert_eq!(idx.len(), f_len);
        prop_assert!(idx.windows(2).all(|p| p[0] < p[1]));
        prop_assert!(idx.iter().all(|&i| i < frames));
        prop_assert_eq!(idx, sample_random_frames(frames, f_len, seed).unwrap());
    }
}

#[test]
fn built_in_cardinalities() {
    let topo = default_topology();
    let count = |n| make_virtual_config(n, &topo).unwrap().len();
    assert_eq!(count(VirtualConfigName::VB0), 0);
    assert_eq!(count(VirtualConfigName::VB5), 5);
    assert_eq!(count(VirtualConfigName::VB10), 10);
    assert_eq!(count(VirtualConfigName::VB13), 13);
    assert_eq!(count(VirtualConfigName::VB23), 23);
    let mut union = make_virtual_config(VirtualConfigName::VB10, &topo).unwrap().pairs;
    union.extend(make_virtual_config(VirtualConfigName::VB13, &topo).unwrap().pairs);
    union.sort_unstable();
    assert_eq!(union, make_virtual_config(VirtualConfigName::VB23, &topo).unwrap().pairs);
}

#[test]
fn projection_loss_distinguishes_jitter_from_offset() {
    let cam = camera();
    let est = clip(3, 8);
    let observed = project_sequence(est.view(), &cam).unwrap();
    let mut alternating = observed.clone();
    for (t, mut frame) in alternating.outer_iter_mut().enumerate() {
        let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
        frame.index_axis_mut(Axis(1), 0).mapv_inplace(|u| u + sign * 3.0);
        frame.index_axis_mut(Axis(1), 1).mapv_inplace(|v| v + sign * 4.0);
    }
    let loss = projection_consistency_loss(est.view(), alternating.view(), &cam).unwrap();
    assert!((loss - 10.0).abs() < 1e-9, "{loss}");
}
