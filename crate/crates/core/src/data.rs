//! Synthetic motion, dataset ingestion, input normalization and samplers.
//!
//! # Dataset layout
//!
//! A dataset is a directory holding one pose-sequence container per
//! (subject, action, camera) plus a top-level `index.json`:
//!
//! ```json
//! {
//!   "cameras": { "cam0": { "fx": 1145.0, "fy": 1143.8, "u0": 512.5, "v0": 515.4 } },
//!   "sequences": [
//!     { "subject": "S1", "action": "Walking", "camera": "cam0",
//!       "file": "S1_Walking_cam0.vbpose", "frames": 512 }
//!   ]
//! }
//! ```
//!
//! `joints3d` is in mm in the camera frame and `joints2d` in pixels (either
//! ground-truth projections or detector output).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Rotation3, Vector3};
use ndarray::{Array3, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::geometry::{project_pinhole, CameraIntrinsics, PoseSequence};
use crate::io::{read_pose_sequence, write_pose_sequence, SequenceMeta};
use crate::metrics::ACTIONS;
use crate::skeleton::{default_topology, SkeletonTopology};
use crate::Scalar;

pub const TRAIN_SUBJECTS: [&str; 5] = ["S1", "S5", "S6", "S7", "S8"];
pub const TEST_SUBJECTS: [&str; 2] = ["S9", "S11"];

/// Real-bone lengths in mm for the default skeleton, indexed by child joint
/// (root entry unused).
const DEFAULT_LENGTHS: [f64; 17] = [
    0.0, 132.9, 442.9, 454.2, 132.9, 442.9, 454.2, 233.4, 257.1, 121.1, 115.0, 151.0, 278.9,
    251.7, 151.0, 278.9, 251.7,
];

/// Rest-pose direction of the bone ending at each joint (camera axes:
/// x right, y down, z forward).
const REST_DIRECTIONS: [[f64; 3]; 17] = [
    [0.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, -1.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
];

/// Largest local rotation (rad) per joint; keeps poses humanlike.
const JOINT_RANGE: [f64; 17] = [
    0.0, 0.5, 0.9, 0.3, 0.5, 0.9, 0.3, 0.3, 0.3, 0.3, 0.2, 0.3, 1.2, 0.9, 0.3, 1.2, 0.9,
];

fn default_frame_rate() -> f64 {
    50.0
}
fn default_max_velocity() -> f64 {
    3.0
}
fn default_interval() -> f64 {
    0.5
}
fn default_camera() -> CameraIntrinsics<f64> {
    CameraIntrinsics {
        fx: 1145.0,
        fy: 1143.8,
        u0: 512.5,
        v0: 515.4,
    }
}

/// Root translation and heading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RootTrajectorySpec {
    /// Mean pelvis depth in mm.
    pub depth: f64,
    /// Half-range of lateral (x) and depth (z) wander in mm.
    pub wander: f64,
    /// Half-range of the heading angle about the vertical axis, rad.
    pub heading_range: f64,
}

impl Default for RootTrajectorySpec {
    fn default() -> Self {
        Self {
            depth: 5000.0,
            wander: 600.0,
            heading_range: std::f64::consts::PI,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMotionSpec {
    pub num_frames: usize,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    /// Per-real-bone lengths in mm, in bone order; default is adult-sized.
    #[serde(default)]
    pub bone_lengths: Option<Vec<f64>>,
    /// Peak joint angular velocity in rad/s.
    #[serde(default = "default_max_velocity")]
    pub max_angular_velocity: f64,
    /// Seconds between random waypoints of the joint-angle curves.
    #[serde(default = "default_interval")]
    pub waypoint_interval: f64,
    #[serde(default = "default_camera")]
    pub camera: CameraIntrinsics<f64>,
    #[serde(default)]
    pub root: RootTrajectorySpec,
    #[serde(default)]
    pub noise_sigma_2d: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticMotionSpec {
    pub fn new(num_frames: usize, seed: u64) -> Self {
        Self {
            num_frames,
            frame_rate: default_frame_rate(),
            bone_lengths: None,
            max_angular_velocity: default_max_velocity(),
            waypoint_interval: default_interval(),
            camera: default_camera(),
            root: RootTrajectorySpec::default(),
            noise_sigma_2d: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_frames == 0 {
            return Err(validation("num_frames must be >= 1"));
        }
        if !(self.noise_sigma_2d >= 0.0 && self.noise_sigma_2d.is_finite()) {
            return Err(validation("noise_sigma_2d must be finite and >= 0"));
        }
        if !(self.frame_rate > 0.0 && self.waypoint_interval > 0.0) {
            return Err(validation("frame_rate and waypoint_interval must be > 0"));
        }
        if !(self.max_angular_velocity >= 0.0 && self.max_angular_velocity.is_finite()) {
            return Err(validation("max_angular_velocity must be finite and >= 0"));
        }
        if let Some(l) = &self.bone_lengths {
            if l.len() != 16 || l.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(validation("bone_lengths must hold 16 positive values"));
            }
        }
        if !(self.root.depth.is_finite() && self.root.wander >= 0.0) {
            return Err(validation("invalid root trajectory"));
        }
        self.camera.validate()
    }

    /// Lengths in mm indexed by bone (real-bone order of the default skeleton).
    fn lengths(&self, topo: &SkeletonTopology) -> Vec<f64> {
        match &self.bone_lengths {
            Some(l) => l.clone(),
            None => topo.real_bones().iter().map(|&(c, _)| DEFAULT_LENGTHS[c]).collect(),
        }
    }
}

/// Uniform Catmull-Rom curve through random waypoints.
struct SmoothCurve {
    points: Vec<f64>,
    interval: f64,
}

impl SmoothCurve {
    fn random(rng: &mut ChaCha8Rng, duration: f64, interval: f64, amplitude: f64) -> Self {
        let n = (duration / interval).ceil() as usize + 4;
        let points = (0..n)
            .map(|_| {
                if amplitude > 0.0 {
                    rng.random_range(-amplitude..=amplitude)
                } else {
                    0.0
                }
            })
            .collect();
        Self { points, interval }
    }

    fn at(&self, t: f64) -> f64 {
        let x = t / self.interval;
        let i = x.floor() as usize;
        let s = x - i as f64;
        let p = &self.points[i..i + 4];
        0.5 * ((2.0 * p[1])
            + (-p[0] + p[2]) * s
            + (2.0 * p[0] - 5.0 * p[1] + 4.0 * p[2] - p[3]) * s * s
            + (-p[0] + 3.0 * p[1] - 3.0 * p[2] + p[3]) * s * s * s)
    }
}

/// Root-relative joints `[T, J, 3]` plus root translation `[T, 3]` in mm.
fn synthesize_motion(spec: &SyntheticMotionSpec, topo: &SkeletonTopology) -> (Array3<f64>, Vec<[f64; 3]>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let t_total = spec.num_frames as f64 / spec.frame_rate;
    let amp = spec.max_angular_velocity * spec.waypoint_interval / 2.5;
    let j = topo.num_joints();
    let curves: Vec<[SmoothCurve; 3]> = (0..j)
        .map(|k| {
            let a = amp.min(JOINT_RANGE[k]);
            [0, 1, 2].map(|_| SmoothCurve::random(&mut rng, t_total, spec.waypoint_interval, a))
        })
        .collect();
    let heading = SmoothCurve::random(&mut rng, t_total, spec.waypoint_interval * 4.0, spec.root.heading_range);
    let lean = SmoothCurve::random(&mut rng, t_total, spec.waypoint_interval * 2.0, 0.15);
    let wx = SmoothCurve::random(&mut rng, t_total, spec.waypoint_interval * 4.0, spec.root.wander);
    let wz = SmoothCurve::random(&mut rng, t_total, spec.waypoint_interval * 4.0, spec.root.wander);
    let lengths = spec.lengths(topo);

    let mut joints = Array3::zeros((spec.num_frames, j, 3));
    let mut roots = Vec::with_capacity(spec.num_frames);
    // parents precede children in the default ordering
    let order = topo_order(topo);
    for f in 0..spec.num_frames {
        let t = f as f64 / spec.frame_rate;
        let mut global = vec![Rotation3::identity(); j];
        global[topo.root()] = Rotation3::from_axis_angle(&Vector3::y_axis(), heading.at(t))
            * Rotation3::from_axis_angle(&Vector3::x_axis(), lean.at(t));
        let mut pos = vec![Vector3::zeros(); j];
        for &c in &order {
            let Some(p) = topo.parent(c) else { continue };
            let bone = topo.real_bone_index(c).expect("child has bone");
            let rest = Vector3::from(REST_DIRECTIONS[c]) * lengths[bone];
            pos[c] = pos[p] + global[p] * rest;
            let local = Vector3::new(curves[c][0].at(t), curves[c][1].at(t), curves[c][2].at(t));
            global[c] = global[p] * Rotation3::new(local);
        }
        for (k, p) in pos.iter().enumerate() {
            for d in 0..3 {
                joints[[f, k, d]] = p[d];
            }
        }
        roots.push([wx.at(t), 0.0, spec.root.depth + wz.at(t)]);
    }
    (joints, roots)
}

fn topo_order(topo: &SkeletonTopology) -> Vec<usize> {
    let mut order = vec![topo.root()];
    let mut i = 0;
    while i < order.len() {
        order.extend(topo.children(order[i]));
        i += 1;
    }
    order
}

/// Generates a sequence on the default skeleton: 3D in mm (camera frame),
/// projected 2D in pixels plus Gaussian noise, and the camera.
///
/// If a joint falls behind the camera the whole sequence is regenerated
/// with the root pushed 1 m deeper, at most 100 times.
pub fn generate_synthetic<T: Scalar>(spec: &SyntheticMotionSpec) -> Result<PoseSequence<T>> {
    spec.validate()?;
    let topo = default_topology();
    let (rel, roots) = synthesize_motion(spec, &topo);
    let cam = spec.camera;
    let (t, j) = (spec.num_frames, topo.num_joints());
    let mut extra = 0.0;
    let mut min_z = f64::INFINITY;
    for attempt in 0..100 {
        let mut abs = rel.clone();
        min_z = f64::INFINITY;
        for f in 0..t {
            for k in 0..j {
                for d in 0..3 {
                    abs[[f, k, d]] += roots[f][d] + if d == 2 { extra } else { 0.0 };
                }
                min_z = min_z.min(abs[[f, k, 2]]);
            }
        }
        if min_z <= 0.0 {
            log::debug!("synthetic attempt {attempt}: joint at z = {min_z:.1} mm, moving root deeper");
            extra += 1000.0;
            continue;
        }
        let mut uv = Array3::zeros((t, j, 2));
        let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
        let noise = Normal::new(0.0, spec.noise_sigma_2d.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::Internal(e.to_string()))?;
        for f in 0..t {
            for k in 0..j {
                let p = project_pinhole([abs[[f, k, 0]], abs[[f, k, 1]], abs[[f, k, 2]]], &cam)?;
                for d in 0..2 {
                    let n = if spec.noise_sigma_2d > 0.0 {
                        noise.sample(&mut noise_rng)
                    } else {
                        0.0
                    };
                    uv[[f, k, d]] = p[d] + n;
                }
            }
        }
        return Ok(PoseSequence {
            joints2d: Some(uv.mapv(T::lit)),
            joints3d: Some(abs.mapv(T::lit)),
            camera: Some(cam.cast()),
            frame_rate: spec.frame_rate,
        });
    }
    Err(Error::BehindCamera { z: min_z })
}

/// Maps pixels to camera-normalized coordinates `((u-u0)/fx, (v-v0)/fy)`.
pub fn normalize_2d<T: Scalar>(joints2d: ArrayView3<'_, T>, camera: &CameraIntrinsics<T>) -> Array3<T> {
    let mut out = joints2d.to_owned();
    out.index_axis_mut(Axis(2), 0)
        .mapv_inplace(|u| (u - camera.u0) / camera.fx);
    out.index_axis_mut(Axis(2), 1)
        .mapv_inplace(|v| (v - camera.v0) / camera.fy);
    out
}

pub fn denormalize_2d<T: Scalar>(normalized: ArrayView3<'_, T>, camera: &CameraIntrinsics<T>) -> Array3<T> {
    let mut out = normalized.to_owned();
    out.index_axis_mut(Axis(2), 0)
        .mapv_inplace(|x| x * camera.fx + camera.u0);
    out.index_axis_mut(Axis(2), 1)
        .mapv_inplace(|y| y * camera.fy + camera.v0);
    out
}

/// `f_len` distinct frame indices drawn uniformly from `0..num_frames`, sorted.
pub fn sample_random_frames(num_frames: usize, f_len: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_random_frames_with(num_frames, f_len, &mut rng)
}

pub fn sample_random_frames_with<R: Rng + ?Sized>(
    num_frames: usize,
    f_len: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if f_len == 0 || f_len > num_frames {
        return Err(validation(format!(
            "cannot sample {f_len} frames from a {num_frames}-frame sequence"
        )));
    }
    let mut idx = rand::seq::index::sample(rng, num_frames, f_len).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Frames feeding the prediction of one middle frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub center: usize,
    /// `receptive_field` frame indices, edge frames replicated.
    pub frames: Vec<usize>,
    pub padded: bool,
}

/// One window per frame, centered on it, replicate-padded at the ends.
pub fn sliding_windows(num_frames: usize, receptive_field: usize) -> Result<Vec<Window>> {
    if receptive_field.is_multiple_of(2) {
        return Err(validation("receptive field must be odd"));
    }
    if num_frames < receptive_field {
        return Err(validation(format!(
            "sequence of {num_frames} frames is shorter than the receptive field {receptive_field}"
        )));
    }
    let half = (receptive_field / 2) as isize;
    let last = num_frames as isize - 1;
    Ok((0..num_frames)
        .map(|c| window_at(c, half, last))
        .collect())
}

fn window_at(center: usize, half: isize, last: isize) -> Window {
    let c = center as isize;
    let frames = (c - half..=c + half)
        .map(|f| f.clamp(0, last) as usize)
        .collect();
    Window {
        center,
        frames,
        padded: c - half < 0 || c + half > last,
    }
}

/// Window around an arbitrary frame without the length precondition.
pub fn window_around(num_frames: usize, center: usize, receptive_field: usize) -> Window {
    window_at(
        center,
        (receptive_field / 2) as isize,
        num_frames as isize - 1,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    All,
}

impl Split {
    pub fn contains(&self, subject: &str) -> bool {
        match self {
            Split::Train => TRAIN_SUBJECTS.contains(&subject),
            Split::Test => TEST_SUBJECTS.contains(&subject),
            Split::All => true,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::All => "all",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "all" => Ok(Split::All),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub subject: String,
    pub action: String,
    pub camera: String,
    pub file: String,
    pub frames: usize,
}

/// Contents of `index.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexFile {
    pub cameras: BTreeMap<String, CameraIntrinsics<f64>>,
    pub sequences: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRef {
    /// `subject/action/camera`.
    pub id: String,
    pub subject: String,
    pub action: String,
    pub camera_id: String,
    pub camera: CameraIntrinsics<f64>,
    pub frames: std::ops::Range<usize>,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub split: Split,
    pub sequences: Vec<SequenceRef>,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn total_frames(&self) -> usize {
        self.sequences.iter().map(|s| s.frames.len()).sum()
    }

    /// Loads one sequence with the index's camera attached.
    pub fn load<T: Scalar>(&self, i: usize) -> Result<PoseSequence<T>> {
        let r = &self.sequences[i];
        let (mut seq, _) = read_pose_sequence::<T>(&r.path).map_err(|e| Error::Ingestion {
            sequence: r.id.clone(),
            reason: e.to_string(),
        })?;
        if seq.num_frames() != r.frames.len() {
            return Err(Error::Ingestion {
                sequence: r.id.clone(),
                reason: format!(
                    "index lists {} frames, file holds {}",
                    r.frames.len(),
                    seq.num_frames()
                ),
            });
        }
        seq.camera = Some(r.camera.cast());
        Ok(seq)
    }
}

/// Indexes a dataset directory, keeping the subjects of `split`, sorted by
/// (subject, action, camera).
pub fn ingest_h36m_format(root: &Path, split: Split) -> Result<DatasetIndex> {
    let index_path = root.join("index.json");
    if !index_path.exists() {
        log::warn!("{}: no index.json, dataset is empty", root.display());
        return Ok(DatasetIndex {
            split,
            sequences: Vec::new(),
        });
    }
    let text = std::fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let index: IndexFile = serde_json::from_str(&text)?;
    let mut seen = BTreeSet::new();
    let mut sequences = Vec::new();
    for e in index.sequences.iter().filter(|e| split.contains(&e.subject)) {
        let id = format!("{}/{}/{}", e.subject, e.action, e.camera);
        let camera = *index.cameras.get(&e.camera).ok_or_else(|| Error::Ingestion {
            sequence: id.clone(),
            reason: format!("no intrinsics for camera {:?}", e.camera),
        })?;
        camera.validate().map_err(|err| Error::Ingestion {
            sequence: id.clone(),
            reason: err.to_string(),
        })?;
        if !seen.insert(id.clone()) {
            return Err(Error::Ingestion {
                sequence: id,
                reason: "duplicate sequence id".into(),
            });
        }
        sequences.push(SequenceRef {
            id,
            subject: e.subject.clone(),
            action: e.action.clone(),
            camera_id: e.camera.clone(),
            camera,
            frames: 0..e.frames,
            path: root.join(&e.file),
        });
    }
    sequences.sort_by(|a, b| {
        (subject_key(&a.subject), &a.action, &a.camera_id).cmp(&(
            subject_key(&b.subject),
            &b.action,
            &b.camera_id,
        ))
    });
    if sequences.is_empty() {
        log::warn!("{}: no sequences for split {split}", root.display());
    }
    Ok(DatasetIndex { split, sequences })
}

/// Orders `S9` before `S11`.
fn subject_key(s: &str) -> (usize, String) {
    let digits: String = s.chars().filter(char::is_ascii_digit).collect();
    (digits.parse().unwrap_or(usize::MAX), s.to_string())
}

/// Writes sequences and their `index.json` into `root`.
pub fn write_dataset<T: Scalar>(
    root: &Path,
    cameras: &BTreeMap<String, CameraIntrinsics<f64>>,
    sequences: &[(SequenceMeta, PoseSequence<T>)],
) -> Result<()> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut index = IndexFile {
        cameras: cameras.clone(),
        sequences: Vec::new(),
    };
    for (meta, seq) in sequences {
        let camera = meta
            .camera_id
            .clone()
            .ok_or_else(|| validation("sequence without camera id"))?;
        let file = format!("{}_{}_{}.vbpose", meta.subject, meta.action, camera);
        write_pose_sequence(&root.join(&file), seq, meta)?;
        index.sequences.push(IndexEntry {
            subject: meta.subject.clone(),
            action: meta.action.clone(),
            camera,
            file,
            frames: seq.num_frames(),
        });
    }
    let path = root.join("index.json");
    std::fs::write(&path, serde_json::to_string_pretty(&index)?).map_err(|e| Error::io(&path, e))
}

/// Recipe for a whole synthetic dataset in the standard layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticDatasetSpec {
    pub subjects: Vec<String>,
    /// Actions per subject, taken in order from the standard action list.
    pub actions_per_subject: usize,
    pub cameras: usize,
    pub frames_per_sequence: usize,
    pub noise_sigma_2d: f64,
    pub max_angular_velocity: f64,
    pub seed: u64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self {
            subjects: TRAIN_SUBJECTS
                .iter()
                .chain(TEST_SUBJECTS.iter())
                .map(|s| s.to_string())
                .collect(),
            actions_per_subject: 2,
            cameras: 2,
            frames_per_sequence: 256,
            noise_sigma_2d: 0.0,
            max_angular_velocity: default_max_velocity(),
            seed: 0,
        }
    }
}

/// Camera `k` of a synthetic rig: slightly different intrinsics per camera.
pub fn synthetic_camera(k: usize) -> CameraIntrinsics<f64> {
    let base = default_camera();
    CameraIntrinsics {
        fx: base.fx + 4.0 * k as f64,
        fy: base.fy + 3.0 * k as f64,
        u0: base.u0 - 2.0 * k as f64,
        v0: base.v0 + 1.5 * k as f64,
    }
}

/// Generates every (subject, action, camera) sequence and writes the dataset.
/// Each camera views an independently generated motion.
pub fn synthesize_dataset(root: &Path, spec: &SyntheticDatasetSpec) -> Result<()> {
    if spec.cameras == 0 || spec.actions_per_subject == 0 || spec.actions_per_subject > ACTIONS.len() {
        return Err(validation("need >= 1 camera and 1..=15 actions per subject"));
    }
    let cameras: BTreeMap<String, CameraIntrinsics<f64>> = (0..spec.cameras)
        .map(|k| (format!("cam{k}"), synthetic_camera(k)))
        .collect();
    let mut out = Vec::new();
    let mut counter = 0u64;
    for subject in &spec.subjects {
        for (a, (action, _)) in ACTIONS.iter().take(spec.actions_per_subject).enumerate() {
            for (cam_id, cam) in &cameras {
                let mut m = SyntheticMotionSpec::new(spec.frames_per_sequence, 0);
                m.seed = spec
                    .seed
                    .wrapping_mul(1_000_003)
                    .wrapping_add(counter)
                    .wrapping_add(a as u64 * 7919);
                counter += 1;
                m.camera = *cam;
                m.noise_sigma_2d = spec.noise_sigma_2d;
                m.max_angular_velocity = spec.max_angular_velocity;
                let seq = generate_synthetic::<f64>(&m)?;
                out.push((
                    SequenceMeta {
                        subject: subject.clone(),
                        action: action.to_string(),
                        camera_id: Some(cam_id.clone()),
                    },
                    seq,
                ));
            }
        }
    }
    write_dataset(root, &cameras, &out)
}
