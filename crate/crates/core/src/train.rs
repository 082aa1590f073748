//! Training: batch assembly, the weighted objective, Adam with exponential
//! learning-rate decay, middle-frame pairing, root anchoring, gradient
//! checking, evaluation and the virtual-bone/PCL ablation.
//!
//! Loss values inside training are in meters (3D terms) and
//! camera-normalized image units (projection terms).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::{normalize_2d, sample_random_frames_with, window_around, DatasetIndex};
use crate::error::{validation, Error, Result};
use crate::geometry::{bone_directions_from_joints, root_relative, PoseSequence};
use crate::losses::{diff, joint_shift_pairs, total_loss, LossComponents, LossWeights};
use crate::metrics::EvalReport;
use crate::nets::{BatchInputs, ForwardVars, LiftingModel, ParamStore, MM_PER_UNIT};
use crate::skeleton::{bone_lengths_from_joints, BoneSet};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    /// Samples per step; `None` picks 2048 for a 9-frame model and 1024 otherwise.
    pub batch_size: Option<usize>,
    pub lr: f64,
    pub lr_decay_per_epoch: f64,
    pub loss_weights: LossWeights,
    pub seed: u64,
    pub deterministic: bool,
    /// Informational; only the CPU path exists.
    pub device: String,
    /// Keep every per-epoch checkpoint instead of only the latest.
    pub keep_all_checkpoints: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: None,
            lr: 0.001,
            lr_decay_per_epoch: 0.95,
            loss_weights: LossWeights::default(),
            seed: 0,
            deterministic: true,
            device: "cpu".into(),
            keep_all_checkpoints: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.lr_decay_per_epoch > 0.0 && self.lr_decay_per_epoch <= 1.0) {
            return Err(Error::Config("lr_decay_per_epoch must be in (0, 1]".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be finite and > 0".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        self.loss_weights.validate()
    }

    pub fn batch_size_for(&self, receptive_field: usize) -> usize {
        self.batch_size
            .unwrap_or(if receptive_field <= 9 { 2048 } else { 1024 })
    }

    /// Learning rate during epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay_per_epoch.powi(epoch as i32)
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Array2<T>> = params.tensors().iter().map(|t| Array2::zeros(t.raw_dim())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Array2<T>], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one, eps) = (T::one(), T::lit(self.eps));
        let step_size = T::lit(lr / c1);
        let c2 = T::lit(c2);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p -= step_size * *m / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

/// Adds the per-frame root position `[T, 3]` to every joint of `[T, J, 3]`.
pub fn anchor_root<T: Scalar>(pred_root_relative: ArrayView3<'_, T>, gt_root: ArrayView2<'_, T>) -> Result<Array3<T>> {
    let (t, _, c) = pred_root_relative.dim();
    if c != 3 || gt_root.dim() != (t, 3) {
        return Err(validation(format!(
            "cannot anchor {:?} with roots {:?}",
            pred_root_relative.dim(),
            gt_root.dim()
        )));
    }
    let mut out = pred_root_relative.to_owned();
    for (mut frame, root) in out.outer_iter_mut().zip(gt_root.outer_iter()) {
        frame += &root;
    }
    Ok(out)
}

/// Identifies the middle frame of one window in a batch.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WindowLabel {
    pub sequence: usize,
    pub camera: String,
    pub middle: usize,
}

/// `(i, j)` index pairs with the same sequence and camera where window `j`'s
/// middle frame directly follows window `i`'s. Each window starts at most
/// one pair, matched with the lowest such `j`.
pub fn pair_middle_frames(labels: &[WindowLabel]) -> Vec<(usize, usize)> {
    let mut first: HashMap<(usize, &str, usize), usize> = HashMap::new();
    for (j, l) in labels.iter().enumerate() {
        first.entry((l.sequence, l.camera.as_str(), l.middle)).or_insert(j);
    }
    labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| {
            first
                .get(&(l.sequence, l.camera.as_str(), l.middle + 1))
                .map(|&j| (i, j))
        })
        .collect()
}

/// One sequence prepared for training: normalized 2D, and 3D targets in meters.
#[derive(Debug, Clone)]
pub struct TrainingSequence<T> {
    pub id: String,
    pub action: String,
    pub camera_id: String,
    /// `[T, 2J]`.
    pub inputs2d: Array2<T>,
    /// `[T, 3J]` root-relative.
    pub joints3d: Array2<T>,
    /// `[T, 3]` camera-frame root.
    pub roots: Array2<T>,
    /// `[T, R]`.
    pub real_lengths: Array2<T>,
    /// `[T, 3B]`.
    pub directions: Array2<T>,
}

impl<T> TrainingSequence<T> {
    pub fn num_frames(&self) -> usize {
        self.inputs2d.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct TrainingSet<T> {
    pub sequences: Vec<TrainingSequence<T>>,
}

/// A sequence with its labels, as fed to [`TrainingSet::from_sequences`].
#[derive(Debug, Clone)]
pub struct LabeledSequence<T> {
    pub id: String,
    pub action: String,
    pub camera_id: String,
    pub sequence: PoseSequence<T>,
}

impl<T: Scalar> TrainingSet<T> {
    pub fn from_sequences(items: &[LabeledSequence<T>], bone_set: &BoneSet) -> Result<Self> {
        let topo = bone_set.topology();
        let j = topo.num_joints();
        let r = bone_set.num_real();
        let inv = T::lit(1.0 / MM_PER_UNIT);
        let mut sequences = Vec::with_capacity(items.len());
        for it in items {
            let seq = &it.sequence;
            let fail = |reason: String| Error::Ingestion {
                sequence: it.id.clone(),
                reason,
            };
            let (j2, j3, cam) = match (&seq.joints2d, &seq.joints3d, &seq.camera) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => return Err(fail("training needs 2D, 3D and camera".into())),
            };
            if j3.dim().1 != j {
                return Err(fail(format!("{} joints, skeleton has {j}", j3.dim().1)));
            }
            let t = j3.dim().0;
            let rel = root_relative(j3.view(), topo.root()).mapv(|x| x * inv);
            let mut lengths = Array2::zeros((t, r));
            let mut dirs = Array2::zeros((t, 3 * bone_set.len()));
            for f in 0..t {
                let pose = rel.index_axis(Axis(0), f);
                let l = bone_lengths_from_joints(pose, bone_set)?;
                lengths.row_mut(f).assign(&l.slice(s![..r]));
                let d = bone_directions_from_joints(pose, bone_set).map_err(|e| fail(format!("frame {f}: {e}")))?;
                dirs.row_mut(f).assign(&d.to_shape(3 * bone_set.len()).expect("contiguous"));
            }
            let norm = normalize_2d(j2.view(), cam);
            sequences.push(TrainingSequence {
                id: it.id.clone(),
                action: it.action.clone(),
                camera_id: it.camera_id.clone(),
                inputs2d: norm.to_shape((t, 2 * j)).expect("contiguous").to_owned(),
                joints3d: rel.to_shape((t, 3 * j)).expect("contiguous").to_owned(),
                roots: j3.index_axis(Axis(1), topo.root()).mapv(|x| x * inv),
                real_lengths: lengths,
                directions: dirs,
            });
        }
        Ok(Self { sequences })
    }

    pub fn from_index(index: &DatasetIndex, bone_set: &BoneSet) -> Result<Self> {
        let items = load_labeled(index)?;
        Self::from_sequences(&items, bone_set)
    }

    pub fn num_samples(&self) -> usize {
        self.sequences.iter().map(|s| s.num_frames()).sum()
    }
}

pub fn load_labeled<T: Scalar>(index: &DatasetIndex) -> Result<Vec<LabeledSequence<T>>> {
    (0..index.len())
        .map(|i| {
            let r = &index.sequences[i];
            Ok(LabeledSequence {
                id: r.id.clone(),
                action: r.action.clone(),
                camera_id: r.camera_id.clone(),
                sequence: index.load(i)?,
            })
        })
        .collect()
}

/// One training example: a frame of a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRef {
    pub sequence: usize,
    pub frame: usize,
}

/// Model inputs and targets of one batch.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub inputs: BatchInputs<T>,
    /// `[n * f_len, 3J]`.
    pub gt_random: Array2<T>,
    /// `[n, 3J]`.
    pub gt_current: Array2<T>,
    pub roots_random: Array2<T>,
    pub roots_current: Array2<T>,
    /// `[n, R]`.
    pub gt_lengths: Array2<T>,
    /// `[n, 3B]`.
    pub gt_directions: Array2<T>,
    pub labels: Vec<WindowLabel>,
}

pub fn assemble_batch<T: Scalar, R: Rng + ?Sized>(
    set: &TrainingSet<T>,
    samples: &[SampleRef],
    model: &LiftingModel<T>,
    rng: &mut R,
) -> Result<Batch<T>> {
    let cfg = model.config();
    let f = cfg.num_random_frames;
    let rf = cfg.receptive_field;
    let mut random_rows: Vec<(usize, usize)> = Vec::with_capacity(samples.len() * f);
    let mut window_rows: Vec<(usize, usize)> = Vec::with_capacity(samples.len() * rf);
    let mut labels = Vec::with_capacity(samples.len());
    for sr in samples {
        let seq = &set.sequences[sr.sequence];
        let t = seq.num_frames();
        for k in sample_random_frames_with(t, f, rng)? {
            random_rows.push((sr.sequence, k));
        }
        for k in window_around(t, sr.frame, rf).frames {
            window_rows.push((sr.sequence, k));
        }
        labels.push(WindowLabel {
            sequence: sr.sequence,
            camera: seq.camera_id.clone(),
            middle: sr.frame,
        });
    }
    let current: Vec<(usize, usize)> = samples.iter().map(|s| (s.sequence, s.frame)).collect();
    let gather = |rows: &[(usize, usize)], pick: fn(&TrainingSequence<T>) -> &Array2<T>| {
        let width = pick(&set.sequences[0]).ncols();
        let mut out = Array2::zeros((rows.len(), width));
        for (i, &(sq, fr)) in rows.iter().enumerate() {
            out.row_mut(i).assign(&pick(&set.sequences[sq]).row(fr));
        }
        out
    };
    Ok(Batch {
        inputs: BatchInputs {
            random2d: gather(&random_rows, |s| &s.inputs2d),
            current2d: gather(&current, |s| &s.inputs2d),
            windows2d: gather(&window_rows, |s| &s.inputs2d),
        },
        gt_random: gather(&random_rows, |s| &s.joints3d),
        gt_current: gather(&current, |s| &s.joints3d),
        roots_random: gather(&random_rows, |s| &s.roots),
        roots_current: gather(&current, |s| &s.roots),
        gt_lengths: gather(&current, |s| &s.real_lengths),
        gt_directions: gather(&current, |s| &s.directions),
        labels,
    })
}

/// Graph nodes of the objective.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub forward: ForwardVars,
    pub components: LossComponents<Var>,
    pub total: Var,
}

fn tile_roots<T: Scalar>(roots: &Array2<T>, j: usize) -> Array2<T> {
    let idx: Vec<usize> = (0..j).flat_map(|_| [0, 1, 2]).collect();
    roots.select(Axis(1), &idx)
}

/// Builds all seven losses and their weighted sum for one batch.
pub fn build_objective<T: Scalar>(
    model: &LiftingModel<T>,
    g: &mut Graph<T>,
    params: &[Var],
    batch: &Batch<T>,
    weights: &LossWeights,
) -> Result<Objective> {
    let fw = model.forward(g, params, &batch.inputs)?;
    let j = model.config().num_joints;
    let f = model.config().num_random_frames;
    let n = batch.inputs.batch_size();

    let coarse = g.concat_rows(&[fw.coarse_random, fw.coarse_current]);
    let coarse_gt = g.constant(ndarray::concatenate(Axis(0), &[batch.gt_random.view(), batch.gt_current.view()]).expect("width"));
    let length = diff::mean_joint_distance(g, coarse, coarse_gt);

    let gt_len = g.constant(batch.gt_lengths.clone());
    let attention = diff::mean_row_norm(g, fw.real_lengths, gt_len);

    let gt_dir = g.constant(batch.gt_directions.clone());
    let direction = diff::mean_row_norm(g, fw.directions, gt_dir);

    let gt_cur = g.constant(batch.gt_current.clone());
    let pairs = joint_shift_pairs(model.bone_set().topology());
    let joint_shift = diff::joint_shift(g, fw.joints, gt_cur, &pairs);
    let fc = diff::mean_joint_distance(g, fw.joints, gt_cur);

    let anchored = g.add_const(fw.joints, &tile_roots(&batch.roots_current, j));
    let mid_pairs = pair_middle_frames(&batch.labels);
    let proj_dir = diff::projection_consistency(g, anchored, &batch.inputs.current2d, &mid_pairs, j);

    let anchored_random = g.add_const(fw.coarse_random, &tile_roots(&batch.roots_random, j));
    let adjacent: Vec<(usize, usize)> = (0..n)
        .flat_map(|sm| (0..f.saturating_sub(1)).map(move |k| (sm * f + k, sm * f + k + 1)))
        .collect();
    let proj_len = diff::projection_consistency(g, anchored_random, &batch.inputs.random2d, &adjacent, j);

    let components = LossComponents {
        length,
        attention,
        direction,
        joint_shift,
        proj_dir,
        proj_len,
        fc,
    };
    let w = weights.as_components().values();
    let mut total: Option<Var> = None;
    for (c, wi) in components.values().into_iter().zip(w) {
        let term = g.scale(c, T::lit(wi));
        total = Some(match total {
            Some(t) => g.add(t, term),
            None => term,
        });
    }
    Ok(Objective {
        forward: fw,
        components,
        total: total.expect("seven terms"),
    })
}

/// One logged optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub components: LossComponents<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    /// Sample-weighted means over the epoch.
    pub total: f64,
    pub components: LossComponents<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochSummary>,
    /// Checkpoint written after the last completed epoch.
    pub last_checkpoint: Option<PathBuf>,
}

/// Shuffled batches of samples; frames `2k, 2k+1` of a sequence stay
/// together so consecutive middle frames share a batch.
pub fn epoch_batches(set_lengths: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<SampleRef>> {
    let mut units: Vec<Vec<SampleRef>> = Vec::new();
    for (sq, &t) in set_lengths.iter().enumerate() {
        for k in (0..t).step_by(2) {
            units.push(
                (k..(k + 2).min(t))
                    .map(|frame| SampleRef { sequence: sq, frame })
                    .collect(),
            );
        }
    }
    units.shuffle(rng);
    let mut batches = Vec::new();
    let mut cur = Vec::with_capacity(batch_size + 1);
    for u in units {
        cur.extend(u);
        if cur.len() >= batch_size {
            batches.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches
}

fn write_divergence_dump(dir: &Path, record: &StepRecord, last_good: Option<&PathBuf>) -> Result<()> {
    let path = dir.join("divergence.json");
    let finite = |x: f64| if x.is_finite() { serde_json::json!(x) } else { serde_json::json!(x.to_string()) };
    let comps: serde_json::Map<String, serde_json::Value> = record
        .components
        .named()
        .iter()
        .map(|(k, v)| (k.to_string(), finite(*v)))
        .collect();
    let dump = serde_json::json!({
        "epoch": record.epoch,
        "step": record.step,
        "lr": record.lr,
        "total": finite(record.total),
        "components": comps,
        "last_good_checkpoint": last_good.map(|p| p.display().to_string()),
    });
    std::fs::write(&path, serde_json::to_string_pretty(&dump)?).map_err(|e| Error::io(&path, e))
}

/// Minimizes the weighted objective with Adam.
///
/// With `out_dir`, writes `train_log.jsonl` (one [`StepRecord`] per line)
/// and `checkpoints/epoch_NNN.ckpt` after every epoch. A non-finite loss or
/// gradient aborts with [`Error::Divergence`] after writing
/// `divergence.json`; the previous epoch's checkpoint is left in place.
pub fn train<T: Scalar>(
    model: &mut LiftingModel<T>,
    set: &TrainingSet<T>,
    config: &TrainingConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    config.validate()?;
    if set.sequences.is_empty() {
        return Err(validation("training set is empty"));
    }
    let f = model.config().num_random_frames;
    if let Some(s) = set.sequences.iter().find(|s| s.num_frames() < f) {
        return Err(validation(format!(
            "sequence {} has {} frames, fewer than f_len = {f}",
            s.id,
            s.num_frames()
        )));
    }
    let batch_size = config.batch_size_for(model.config().receptive_field);
    let mut log = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("train_log.jsonl");
            Some(BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?))
        }
        None => None,
    };
    let lengths: Vec<usize> = set.sequences.iter().map(|s| s.num_frames()).collect();
    let mut adam = Adam::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = TrainReport::default();
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let batches = epoch_batches(&lengths, batch_size, &mut rng);
        let mut sums = [0.0f64; 7];
        let mut total_sum = 0.0;
        let mut count = 0usize;
        for samples in &batches {
            let batch = assemble_batch(set, samples, model, &mut rng)?;
            let mut g = Graph::new();
            let params = model.params().bind(&mut g, true);
            let obj = build_objective(model, &mut g, &params, &batch, &config.loss_weights)?;
            let values = obj.components.map(|v| g.scalar(v).as_f64());
            let record = StepRecord {
                epoch,
                step,
                lr,
                total: g.scalar(obj.total).as_f64(),
                components: values,
            };
            if let Some(w) = log.as_mut() {
                serde_json::to_writer(&mut *w, &record)?;
                writeln!(w).map_err(|e| Error::io("train_log.jsonl", e))?;
            }
            let diverged = |component: String| -> Error {
                if let Some(dir) = out_dir {
                    if let Err(e) = write_divergence_dump(dir, &record, report.last_checkpoint.as_ref()) {
                        log::error!("could not write divergence dump: {e}");
                    }
                }
                Error::Divergence {
                    epoch,
                    step,
                    component,
                }
            };
            if let Err(Error::Divergence { component, .. }) = total_loss(&values, &config.loss_weights) {
                if let Some(w) = log.as_mut() {
                    let _ = w.flush();
                }
                return Err(diverged(component));
            }
            let mut grads = g.backward(obj.total);
            let grads: Vec<Array2<T>> = params
                .iter()
                .zip(model.params().tensors())
                .map(|(v, t)| grads.take(*v).unwrap_or_else(|| Array2::zeros(t.raw_dim())))
                .collect();
            if let Some(i) = grads.iter().position(|g| g.iter().any(|x| !x.is_finite())) {
                if let Some(w) = log.as_mut() {
                    let _ = w.flush();
                }
                return Err(diverged(format!("gradient of {}", model.parameter_names()[i])));
            }
            adam.step(model.params_mut(), &grads, lr);
            let n = samples.len();
            for (s, v) in sums.iter_mut().zip(values.values()) {
                *s += v * n as f64;
            }
            total_sum += record.total * n as f64;
            count += n;
            step += 1;
        }
        let summary = EpochSummary {
            epoch,
            lr,
            steps: batches.len(),
            total: total_sum / count as f64,
            components: LossComponents::from_values(sums.map(|s| s / count as f64)),
        };
        log::info!(
            "epoch {epoch}: lr {lr:.3e} total {:.5} fc {:.5}",
            summary.total,
            summary.components.fc
        );
        if let Some(dir) = out_dir {
            if let Some(w) = log.as_mut() {
                w.flush().map_err(|e| Error::io(dir, e))?;
            }
            let path = dir.join("checkpoints").join(format!("epoch_{epoch:03}.ckpt"));
            model.save(&path)?;
            if !config.keep_all_checkpoints {
                if let Some(prev) = report.last_checkpoint.take() {
                    let _ = std::fs::remove_file(prev);
                }
            }
            report.last_checkpoint = Some(path);
        }
        report.epochs.push(summary);
    }
    Ok(report)
}

/// One sampled parameter coordinate of a gradient check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckedParameter {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheckReport {
    pub max_rel_error: f64,
    pub checked: Vec<CheckedParameter>,
}

impl GradientCheckReport {
    pub fn offending(&self, tol: f64) -> Vec<&CheckedParameter> {
        self.checked.iter().filter(|c| c.rel_error > tol).collect()
    }

    /// Fails with [`Error::GradientCheck`] when any coordinate exceeds `tol`.
    pub fn ensure(&self, tol: f64) -> Result<()> {
        let bad = self.offending(tol);
        if bad.is_empty() {
            return Ok(());
        }
        for b in &bad {
            log::error!(
                "gradient mismatch {}[{}]: analytic {:.6e} numeric {:.6e} rel {:.3e}",
                b.tensor,
                b.index,
                b.analytic,
                b.numeric,
                b.rel_error
            );
        }
        Err(Error::GradientCheck {
            max_rel_error: self.max_rel_error,
            offending: bad.len(),
        })
    }
}

/// Central-difference check of `loss` against reverse-mode gradients on
/// `num_params` randomly chosen scalar parameters.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check<F>(
    params: &mut ParamStore<f64>,
    loss: F,
    num_params: usize,
    eps: f64,
    seed: u64,
) -> Result<GradientCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(validation("eps must be finite and > 0"));
    }
    let total = params.num_scalars();
    if num_params == 0 || num_params > total {
        return Err(validation(format!("cannot check {num_params} of {total} parameters")));
    }
    let mut g = Graph::new();
    let vars = params.bind(&mut g, true);
    let out = loss(&mut g, &vars)?;
    let grads = g.backward(out);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, total, num_params).into_vec();
    let offsets: Vec<usize> = params
        .tensors()
        .iter()
        .scan(0, |acc, t| {
            let start = *acc;
            *acc += t.len();
            Some(start)
        })
        .collect();
    let eval = |params: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let vars = params.bind(&mut g, false);
        let out = loss(&mut g, &vars)?;
        Ok(g.scalar(out))
    };
    let mut checked = Vec::with_capacity(num_params);
    for flat in picks {
        let ti = offsets.partition_point(|&o| o <= flat) - 1;
        let idx = flat - offsets[ti];
        let analytic = grads
            .get(vars[ti])
            .map_or(0.0, |g| g.as_slice().expect("standard layout")[idx]);
        let orig = params.tensors()[ti].as_slice().expect("standard layout")[idx];
        params.tensors_mut()[ti].as_slice_mut().expect("standard layout")[idx] = orig + eps;
        let up = eval(params)?;
        params.tensors_mut()[ti].as_slice_mut().expect("standard layout")[idx] = orig - eps;
        let down = eval(params)?;
        params.tensors_mut()[ti].as_slice_mut().expect("standard layout")[idx] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let rel_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        checked.push(CheckedParameter {
            tensor: params.names()[ti].clone(),
            index: idx,
            analytic,
            numeric,
            rel_error,
        });
    }
    let max_rel_error = checked.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradientCheckReport {
        max_rel_error,
        checked,
    })
}

/// Small batch from a noisy synthetic clip, sized for gradient checks.
pub fn gradient_check_batch(model: &LiftingModel<f64>, seed: u64) -> Result<Batch<f64>> {
    let cfg = model.config();
    let frames = (cfg.num_random_frames + cfg.receptive_field).max(16);
    let mut spec = crate::data::SyntheticMotionSpec::new(frames, seed);
    spec.noise_sigma_2d = 1.0;
    let items = [LabeledSequence {
        id: "S1/check/cam0".into(),
        action: "Directions".into(),
        camera_id: "cam0".into(),
        sequence: crate::data::generate_synthetic(&spec)?,
    }];
    let set = TrainingSet::from_sequences(&items, model.bone_set())?;
    let samples: Vec<SampleRef> = (4..8).map(|frame| SampleRef { sequence: 0, frame }).collect();
    assemble_batch(&set, &samples, model, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Gradient check of the full weighted objective of `model` on `batch`.
pub fn check_objective_gradients(
    model: &LiftingModel<f64>,
    batch: &Batch<f64>,
    weights: &LossWeights,
    num_params: usize,
    eps: f64,
    seed: u64,
) -> Result<GradientCheckReport> {
    let mut params = model.params().clone();
    gradient_check(
        &mut params,
        |g, p| Ok(build_objective(model, g, p, batch, weights)?.total),
        num_params,
        eps,
        seed,
    )
}

/// Root-relative 3D ground truth `[T, J, 3]` in mm of a sequence.
fn gt_root_relative<T: Scalar>(seq: &PoseSequence<T>, root: usize) -> Result<Array3<T>> {
    let j3 = seq
        .joints3d
        .as_ref()
        .ok_or_else(|| validation("evaluation needs 3D ground truth"))?;
    Ok(root_relative(j3.view(), root))
}

/// Predicts every sequence and scores it against its 3D ground truth.
pub fn evaluate<T: Scalar>(model: &LiftingModel<T>, items: &[LabeledSequence<T>], seed: u64) -> Result<EvalReport> {
    let root = model.bone_set().topology().root();
    let mut preds = Vec::with_capacity(items.len());
    for (k, it) in items.iter().enumerate() {
        let seq = &it.sequence;
        let (j2, cam) = match (&seq.joints2d, &seq.camera) {
            (Some(a), Some(c)) => (a, c),
            _ => return Err(validation(format!("sequence {} lacks 2D input or camera", it.id))),
        };
        let pred = model.predict_sequence(j2.view(), cam, seed.wrapping_add(k as u64))?;
        preds.push((pred, gt_root_relative(seq, root)?));
    }
    EvalReport::from_sequences(
        items
            .iter()
            .zip(&preds)
            .map(|(it, (p, g))| (it.action.as_str(), p.view(), g.view())),
    )
}

/// One trained-and-evaluated ablation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub virtual_config: crate::skeleton::VirtualConfigName,
    pub pcl: bool,
    pub seed: u64,
    pub report: EvalReport,
}

/// Trains one (virtual config, PCL, seed) cell from scratch and evaluates it.
pub fn run_ablation_cell<T: Scalar>(
    base_model: &crate::nets::ModelConfig,
    base_train: &TrainingConfig,
    train_items: &[LabeledSequence<T>],
    test_items: &[LabeledSequence<T>],
    virtual_config: crate::skeleton::VirtualConfigName,
    pcl: bool,
    seed: u64,
) -> Result<AblationResult> {
    let mut mc = base_model.clone();
    mc.virtual_config = virtual_config;
    mc.seed = seed;
    let mut tc = base_train.clone();
    tc.seed = seed;
    if !pcl {
        tc.loss_weights = tc.loss_weights.without_projection();
    }
    let mut model = LiftingModel::<T>::new(mc)?;
    let set = TrainingSet::from_sequences(train_items, model.bone_set())?;
    train(&mut model, &set, &tc, None)?;
    let report = evaluate(&model, test_items, seed)?;
    log::info!(
        "ablation {virtual_config} pcl={pcl} seed={seed}: protocol1 {:.2} mm",
        report.aggregate.protocol1
    );
    Ok(AblationResult {
        virtual_config,
        pcl,
        seed,
        report,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median over seeds of each protocol for one (config, PCL) row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub virtual_config: crate::skeleton::VirtualConfigName,
    pub pcl: bool,
    pub seeds: usize,
    pub protocol1: f64,
    pub protocol2: f64,
    pub protocol3: f64,
    pub mpjve: f64,
}

pub fn ablation_rows(results: &[AblationResult]) -> Vec<AblationRow> {
    let mut keys: Vec<(crate::skeleton::VirtualConfigName, bool)> = Vec::new();
    for r in results {
        if !keys.contains(&(r.virtual_config, r.pcl)) {
            keys.push((r.virtual_config, r.pcl));
        }
    }
    keys.into_iter()
        .map(|(vc, pcl)| {
            let cell: Vec<&AblationResult> = results
                .iter()
                .filter(|r| r.virtual_config == vc && r.pcl == pcl)
                .collect();
            let med = |f: fn(&AblationResult) -> f64| median(cell.iter().map(|r| f(r)).collect());
            AblationRow {
                virtual_config: vc,
                pcl,
                seeds: cell.len(),
                protocol1: med(|r| r.report.aggregate.protocol1),
                protocol2: med(|r| r.report.aggregate.protocol2),
                protocol3: med(|r| r.report.aggregate.protocol3),
                mpjve: med(|r| r.report.aggregate.mpjve),
            }
        })
        .collect()
}

/// Text table with one row per (config, PCL) setting.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = format!(
        "{:<8}{:>6}{:>7}{:>13}{:>13}{:>13}{:>10}\n",
        "Bones", "PCL", "Seeds", "Protocol #1", "Protocol #2", "Protocol #3", "MPJVE"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<8}{:>6}{:>7}{:>13.2}{:>13.2}{:>13.2}{:>10.2}\n",
            r.virtual_config.as_str(),
            if r.pcl { "on" } else { "off" },
            r.seeds,
            r.protocol1,
            r.protocol2,
            r.protocol3,
            r.mpjve
        ));
    }
    out
}
