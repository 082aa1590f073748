//! Bone composition, pinhole projection and frame-to-frame displacements.
//!
//! Compositions are root-relative: a path of bones sums to the offset of its
//! end joint from the root, and callers add the root translation themselves.

use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::skeleton::{check_pose, BonePath, BoneSet, PathSet};
use crate::Scalar;

const UNIT_TOL: f64 = 1e-6;
const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Pinhole intrinsics in pixels: `fx = f/dx`, `fy = f/dy`, principal point `(u0, v0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub u0: T,
    pub v0: T,
}

impl<T: Scalar> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, u0: T, v0: T) -> Result<Self> {
        let cam = Self { fx, fy, u0, v0 };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.fx, self.fy, self.u0, self.v0]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite || self.fx <= T::zero() || self.fy <= T::zero() {
            return Err(validation(format!(
                "camera intrinsics must be finite with fx, fy > 0 (got fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> CameraIntrinsics<U> {
        CameraIntrinsics {
            fx: U::lit(self.fx.as_f64()),
            fy: U::lit(self.fy.as_f64()),
            u0: U::lit(self.u0.as_f64()),
            v0: U::lit(self.v0.as_f64()),
        }
    }
}

/// Time-indexed joints: 2D in pixels `[T, J, 2]` and/or 3D camera-frame mm `[T, J, 3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence<T> {
    pub joints2d: Option<Array3<T>>,
    pub joints3d: Option<Array3<T>>,
    pub camera: Option<CameraIntrinsics<T>>,
    pub frame_rate: f64,
}

impl<T: Scalar> PoseSequence<T> {
    pub fn num_frames(&self) -> usize {
        self.joints2d
            .as_ref()
            .map(|a| a.dim().0)
            .or_else(|| self.joints3d.as_ref().map(|a| a.dim().0))
            .unwrap_or(0)
    }

    pub fn num_joints(&self) -> usize {
        self.joints2d
            .as_ref()
            .map(|a| a.dim().1)
            .or_else(|| self.joints3d.as_ref().map(|a| a.dim().1))
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints2d.is_none() && self.joints3d.is_none() {
            return Err(validation("pose sequence holds neither 2D nor 3D joints"));
        }
        if let Some(j2) = &self.joints2d {
            if j2.dim().2 != 2 {
                return Err(validation("joints2d must have shape [T, J, 2]"));
            }
        }
        if let Some(j3) = &self.joints3d {
            if j3.dim().2 != 3 {
                return Err(validation("joints3d must have shape [T, J, 3]"));
            }
        }
        if let (Some(j2), Some(j3)) = (&self.joints2d, &self.joints3d) {
            if j2.dim().0 != j3.dim().0 || j2.dim().1 != j3.dim().1 {
                return Err(validation(format!(
                    "2D {:?} and 3D {:?} sequences disagree on frames or joints",
                    j2.dim(),
                    j3.dim()
                )));
            }
        }
        if self.num_frames() == 0 {
            return Err(validation("pose sequence has no frames"));
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(validation("frame rate must be positive"));
        }
        if let Some(cam) = &self.camera {
            cam.validate()?;
        }
        Ok(())
    }
}

fn check_bones<T: Scalar>(directions: ArrayView2<'_, T>, lengths: ArrayView1<'_, T>) -> Result<()> {
    if directions.ncols() != 3 || directions.nrows() != lengths.len() {
        return Err(validation(format!(
            "directions {:?} and lengths [{}] disagree",
            directions.dim(),
            lengths.len()
        )));
    }
    Ok(())
}

/// Root-relative endpoint of one path: `sum(sign * direction * length)`.
pub fn compose_joint_single_path<T: Scalar>(
    directions: ArrayView2<'_, T>,
    lengths: ArrayView1<'_, T>,
    path: &BonePath,
) -> Result<[T; 3]> {
    check_bones(directions, lengths)?;
    let mut acc = [T::zero(); 3];
    for step in path {
        let m = step.bone;
        if m >= lengths.len() {
            return Err(validation(format!("path references bone {m} out of range")));
        }
        let d = directions.row(m);
        let norm = d.iter().map(|&x| x * x).sum::<T>().sqrt();
        if (norm - T::one()).abs() > T::lit(UNIT_TOL) {
            return Err(validation(format!(
                "direction of bone {m} is not unit norm ({norm})"
            )));
        }
        if lengths[m] < T::zero() {
            return Err(validation(format!("bone {m} has negative length")));
        }
        let scale = if step.sign < 0 { -lengths[m] } else { lengths[m] };
        for k in 0..3 {
            acc[k] += d[k] * scale;
        }
    }
    Ok(acc)
}

/// Convex combination of single-path compositions over a path set.
pub fn compose_joint_multi_path<T: Scalar>(
    directions: ArrayView2<'_, T>,
    lengths: ArrayView1<'_, T>,
    path_set: &PathSet,
    weights: &[T],
) -> Result<[T; 3]> {
    if weights.len() != path_set.paths.len() {
        return Err(validation(format!(
            "{} weights for {} paths",
            weights.len(),
            path_set.paths.len()
        )));
    }
    if weights.iter().any(|&w| w < T::zero() || !w.is_finite()) {
        return Err(validation("path weights must be nonnegative"));
    }
    let total: T = weights.iter().copied().sum();
    if (total - T::one()).abs() > T::lit(WEIGHT_SUM_TOL) {
        return Err(validation(format!("path weights sum to {total}, expected 1")));
    }
    let mut acc = [T::zero(); 3];
    for (path, &w) in path_set.paths.iter().zip(weights) {
        let p = compose_joint_single_path(directions, lengths, path)?;
        for k in 0..3 {
            acc[k] += w * p[k];
        }
    }
    Ok(acc)
}

/// `u = fx X/Z + u0`, `v = fy Y/Z + v0`.
pub fn project_pinhole<T: Scalar>(point: [T; 3], camera: &CameraIntrinsics<T>) -> Result<[T; 2]> {
    let [x, y, z] = point;
    if !(z > T::zero()) {
        return Err(Error::BehindCamera { z: z.as_f64() });
    }
    Ok([camera.fx * x / z + camera.u0, camera.fy * y / z + camera.v0])
}

/// Projects a `[T, J, 3]` camera-frame sequence to `[T, J, 2]` pixels.
pub fn project_sequence<T: Scalar>(
    seq3d: ArrayView3<'_, T>,
    camera: &CameraIntrinsics<T>,
) -> Result<Array3<T>> {
    let (t, j, c) = seq3d.dim();
    if c != 3 {
        return Err(validation("expected [T, J, 3] joints"));
    }
    let mut out = Array3::zeros((t, j, 2));
    for f in 0..t {
        for k in 0..j {
            let p = seq3d.slice(s![f, k, ..]);
            let [u, v] = project_pinhole([p[0], p[1], p[2]], camera)?;
            out[[f, k, 0]] = u;
            out[[f, k, 1]] = v;
        }
    }
    Ok(out)
}

/// Forward differences `out[t] = seq[t + 1] - seq[t]` along the frame axis.
pub fn displacements<T: Scalar>(seq2d: ArrayView3<'_, T>) -> Result<Array3<T>> {
    let t = seq2d.len_of(Axis(0));
    if t < 2 {
        return Err(validation(format!("displacements need at least 2 frames, got {t}")));
    }
    Ok(&seq2d.slice(s![1.., .., ..]) - &seq2d.slice(s![..-1, .., ..]))
}

/// Unit direction `(to - from) / |to - from|` of every bone for one pose.
pub fn bone_directions_from_joints<T: Scalar>(
    joints3d: ArrayView2<'_, T>,
    bone_set: &BoneSet,
) -> Result<Array2<T>> {
    check_pose(joints3d, bone_set.topology().num_joints())?;
    let mut out = Array2::zeros((bone_set.len(), 3));
    for (i, b) in bone_set.bones().iter().enumerate() {
        let d = &joints3d.row(b.to) - &joints3d.row(b.from);
        let norm = d.iter().map(|&x| x * x).sum::<T>().sqrt();
        if norm <= T::zero() {
            return Err(Error::DegenerateBone { bone: i });
        }
        out.row_mut(i).assign(&(d / norm));
    }
    Ok(out)
}

/// Subtracts the root joint from every joint of a `[T, J, 3]` sequence.
pub fn root_relative<T: Scalar>(seq3d: ArrayView3<'_, T>, root: usize) -> Array3<T> {
    let root_traj = seq3d.slice(s![.., root..root + 1, ..]).to_owned();
    &seq3d - &root_traj
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{bone_lengths_from_joints, enumerate_paths, PathStep, VirtualConfigName};
    use ndarray::{array, Array1};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(1000.0, 1000.0, 500.0, 500.0).unwrap()
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((17, 3), |_| rng.random_range(-800.0..800.0))
    }

    #[test]
    fn single_path_trivial_cases() {
        let dirs = array![[0.0, 0.0, 1.0]];
        let lens = array![100.0];
        let p = compose_joint_single_path(dirs.view(), lens.view(), &vec![]).unwrap();
        assert_eq!(p, [0.0; 3]);
        let path = vec![PathStep { bone: 0, sign: 1 }];
        let p = compose_joint_single_path(dirs.view(), lens.view(), &path).unwrap();
        assert_eq!(p, [0.0, 0.0, 100.0]);
        let back = vec![PathStep { bone: 0, sign: -1 }];
        let p = compose_joint_single_path(dirs.view(), lens.view(), &back).unwrap();
        assert_eq!(p, [0.0, 0.0, -100.0]);
    }

    #[test]
    fn single_path_rejects_non_unit() {
        let dirs = array![[0.0, 0.0, 1.1]];
        let lens = array![1.0];
        let path = vec![PathStep { bone: 0, sign: 1 }];
        assert!(matches!(
            compose_joint_single_path(dirs.view(), lens.view(), &path),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn paths_from_gt_bones_reach_gt_joint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bs = BoneSet::standard(VirtualConfigName::VB23).unwrap();
        let pose = random_pose(&mut rng);
        let dirs = bone_directions_from_joints(pose.view(), &bs).unwrap();
        let lens = bone_lengths_from_joints(pose.view(), &bs).unwrap();
        for target in 0..17 {
            let ps = enumerate_paths(&bs, target, 5.max(bs.topology().depth(target))).unwrap();
            let expected = &pose.row(target) - &pose.row(0);
            let scale = expected.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
            for path in &ps.paths {
                let p = compose_joint_single_path(dirs.view(), lens.view(), path).unwrap();
                for k in 0..3 {
                    assert!((p[k] - expected[k]).abs() / scale <= 1e-9);
                }
            }
            // any convex weights
            let n = ps.paths.len();
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            let mut w: Vec<f64> = raw.iter().map(|x| x / sum).collect();
            let tail: f64 = w[..n - 1].iter().sum();
            w[n - 1] = 1.0 - tail;
            let p = compose_joint_multi_path(dirs.view(), lens.view(), &ps, &w).unwrap();
            for k in 0..3 {
                assert!((p[k] - expected[k]).abs() / scale <= 1e-9);
            }
        }
    }

    #[test]
    fn multi_path_linearity_and_weight_checks() {
        let dirs = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let lens = array![2.0, 4.0];
        let ps = PathSet {
            target: 1,
            paths: vec![
                vec![PathStep { bone: 0, sign: 1 }],
                vec![PathStep { bone: 1, sign: 1 }],
            ],
        };
        let p = compose_joint_multi_path(dirs.view(), lens.view(), &ps, &[0.5, 0.5]).unwrap();
        assert_eq!(p, [1.0, 2.0, 0.0]);
        assert!(compose_joint_multi_path(dirs.view(), lens.view(), &ps, &[0.5, 0.6]).is_err());
        assert!(compose_joint_multi_path(dirs.view(), lens.view(), &ps, &[1.5, -0.5]).is_err());
        let single = PathSet {
            target: 1,
            paths: vec![ps.paths[1].clone()],
        };
        assert_eq!(
            compose_joint_multi_path(dirs.view(), lens.view(), &single, &[1.0]).unwrap(),
            compose_joint_single_path(dirs.view(), lens.view(), &ps.paths[1]).unwrap()
        );
    }

    #[test]
    fn pinhole_cases() {
        let c = cam();
        assert_eq!(project_pinhole([0.0, 0.0, 3.0], &c).unwrap(), [500.0, 500.0]);
        assert_eq!(project_pinhole([1000.0, 0.0, 1000.0], &c).unwrap(), [1500.0, 500.0]);
        let a = project_pinhole([120.0, -40.0, 2500.0], &c).unwrap();
        let b = project_pinhole([240.0, -80.0, 5000.0], &c).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        assert!(matches!(
            project_pinhole([1.0, 1.0, 0.0], &c),
            Err(Error::BehindCamera { .. })
        ));
        assert!(project_pinhole([1.0, 1.0, -5.0], &c).is_err());
    }

    #[test]
    fn camera_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, f64::NAN, 0.0, 0.0).is_err());
    }

    #[test]
    fn displacement_cases() {
        let constant = Array3::from_elem((4, 17, 2), 7.0);
        assert!(displacements(constant.view()).unwrap().iter().all(|&x| x == 0.0));

        let v = [3.0, -1.5];
        let lin = Array3::from_shape_fn((6, 17, 2), |(t, j, c)| j as f64 + t as f64 * v[c]);
        let d = displacements(lin.view()).unwrap();
        assert_eq!(d.dim(), (5, 17, 2));
        for ((_, _, c), x) in d.indexed_iter() {
            assert!((x - v[c]).abs() < 1e-12);
        }
        assert!(displacements(Array3::<f64>::zeros((1, 17, 2)).view()).is_err());
    }

    #[test]
    fn displacements_match_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let seq = Array3::from_shape_fn((7, 17, 2), |_| rng.random_range(-500.0f64..500.0));
        let d = displacements(seq.view()).unwrap();
        for t in 0..6 {
            for j in 0..17 {
                for c in 0..2 {
                    assert_eq!(d[[t, j, c]], seq[[t + 1, j, c]] - seq[[t, j, c]]);
                }
            }
        }
        // time-constant offsets vanish
        let offset = Array2::from_shape_fn((17, 2), |_| rng.random_range(-50.0..50.0));
        let shifted = &seq + &offset.insert_axis(Axis(0));
        let d2 = displacements(shifted.view()).unwrap();
        for (a, b) in d.iter().zip(d2.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn directions_cases() {
        let bs = BoneSet::standard(VirtualConfigName::VB0).unwrap();
        let mut pose = Array2::<f64>::zeros((17, 3));
        for j in 0..17 {
            pose[[j, 2]] = 100.0 * j as f64;
        }
        let d = bone_directions_from_joints(pose.view(), &bs).unwrap();
        // bone 0: pelvis -> right_hip, (0,0,100)
        assert_eq!(d.row(0).to_vec(), vec![0.0, 0.0, 1.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pose = random_pose(&mut rng);
        let d1 = bone_directions_from_joints(pose.view(), &bs).unwrap();
        let d2 = bone_directions_from_joints((&pose * 3.5).view(), &bs).unwrap();
        for (a, b) in d1.iter().zip(d2.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for row in d1.rows() {
            let n: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }

        let mut degenerate = pose.clone();
        let r = degenerate.row(2).to_owned();
        degenerate.row_mut(3).assign(&r);
        match bone_directions_from_joints(degenerate.view(), &bs) {
            Err(Error::DegenerateBone { bone }) => assert_eq!(bone, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reversed_bone_negates_direction() {
        use crate::skeleton::{default_topology, VirtualBoneConfig};
        let topo = default_topology();
        let fwd = BoneSet::new(
            topo.clone(),
            VirtualBoneConfig::custom(VirtualConfigName::Custom, &[(0, 10)], &topo).unwrap(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pose = random_pose(&mut rng);
        let d = bone_directions_from_joints(pose.view(), &fwd).unwrap();
        let manual = &pose.row(0) - &pose.row(10);
        let n = manual.iter().map(|x| x * x).sum::<f64>().sqrt();
        let reversed: Array1<f64> = manual / n;
        for k in 0..3 {
            assert!((d[[16, k]] + reversed[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn sequence_validation() {
        let seq = PoseSequence::<f64> {
            joints2d: Some(Array3::zeros((3, 17, 2))),
            joints3d: Some(Array3::zeros((4, 17, 3))),
            camera: None,
            frame_rate: 50.0,
        };
        assert!(seq.validate().is_err());
        let ok = PoseSequence::<f64> {
            joints3d: Some(Array3::zeros((3, 17, 3))),
            ..seq
        };
        assert!(ok.validate().is_ok());
        assert_eq!(ok.num_frames(), 3);
    }
}
