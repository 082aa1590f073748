//! The lifting model: a bone-length network with cross-frame attention, a
//! temporal convolutional bone-direction network, and a fully connected
//! composer from length-scaled bone vectors to joints.
//!
//! Internally the networks see camera-normalized 2D input and work in
//! meters; the array-level entry points ([`LiftingModel::length_net_forward`]
//! and friends) take and return mm.
//!
//! # Checkpoint format
//!
//! A container (see [`crate::io`]) with magic `VBCKPT01`. The JSON meta
//! holds `model` (the [`ModelConfig`]), `skeleton` (a
//! [`SkeletonDocument`], fixing the bone order) and `dtype`. One column per
//! parameter tensor, in [`LiftingModel::parameter_names`] order, each a
//! row-major `[rows, cols]` matrix (biases are `[1, cols]`) stored as
//! `f64le` or `f32le` according to the model's scalar type.

use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::{normalize_2d, sample_random_frames, window_around};
use crate::error::{validation, Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::io::{read_container, write_container, ColumnSpec, DType, CHECKPOINT_MAGIC};
use crate::skeleton::{enumerate_paths, BoneSet, SkeletonDocument, VirtualConfigName};
use crate::Scalar;

/// Millimeters per internal length unit.
pub const MM_PER_UNIT: f64 = 1000.0;

const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub num_joints: usize,
    pub virtual_config: VirtualConfigName,
    /// Frames sampled for the length network (`f_len`).
    pub num_random_frames: usize,
    /// Frames seen by the direction network; a power of 3.
    pub receptive_field: usize,
    /// Hidden width `c` of all three networks.
    pub hidden_width: usize,
    /// Residual blocks `n` in the length trunk.
    pub num_residual_blocks: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_joints: 17,
            virtual_config: VirtualConfigName::VB23,
            num_random_frames: 10,
            receptive_field: 9,
            hidden_width: 1024,
            num_residual_blocks: 2,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let rf = self.receptive_field;
        let mut p = rf;
        while p > 1 && p.is_multiple_of(3) {
            p /= 3;
        }
        if rf < 3 || p != 1 {
            return Err(Error::Config(format!(
                "receptive_field must be a power of 3 (9 or 243), got {rf}"
            )));
        }
        if self.num_random_frames < 1 {
            return Err(Error::Config("num_random_frames must be >= 1".into()));
        }
        if self.hidden_width < 8 {
            return Err(Error::Config("hidden_width must be >= 8".into()));
        }
        if self.num_residual_blocks < 1 {
            return Err(Error::Config("num_residual_blocks must be >= 1".into()));
        }
        if self.num_joints < 2 {
            return Err(Error::Config("num_joints must be >= 2".into()));
        }
        Ok(())
    }

    /// Dilations of the temporal convolutions: `1, 3, 9, ...`; the first
    /// belongs to the expand layer.
    pub fn dilations(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut d = 1;
        while d * 3 <= self.receptive_field {
            out.push(d);
            d *= 3;
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Affine {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    len_in: Affine,
    len_blocks: Vec<(Affine, Affine)>,
    len_out: Affine,
    len_att: Affine,
    dir_expand: Affine,
    dir_blocks: Vec<(Affine, Affine, usize)>,
    dir_out: Affine,
    comp_skip: usize,
    comp_hidden: Affine,
    comp_out: Affine,
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Array2<T>>,
}

impl<T: Scalar> ParamStore<T> {
    fn push(&mut self, name: String, value: Array2<T>) -> usize {
        self.names.push(name);
        self.tensors.push(value);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Array2<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Array2<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Registers every tensor on `g`, as parameters or constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }
}

/// Inputs for a batch of `n` samples, all camera-normalized.
#[derive(Debug, Clone)]
pub struct BatchInputs<T> {
    /// `[n * f_len, 2J]`, sample-major.
    pub random2d: Array2<T>,
    /// `[n, 2J]`.
    pub current2d: Array2<T>,
    /// `[n * receptive_field, 2J]`, sample-major, time ascending.
    pub windows2d: Array2<T>,
}

impl<T: Scalar> BatchInputs<T> {
    pub fn batch_size(&self) -> usize {
        self.current2d.nrows()
    }
}

/// Graph nodes produced by [`LiftingModel::forward`]; lengths in meters.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `[n * f_len, 3J]` coarse root-relative joints of the random frames.
    pub coarse_random: Var,
    /// `[n, 3J]`.
    pub coarse_current: Var,
    /// `[n * f_len, R]` real-bone lengths per random frame.
    pub lengths_random: Var,
    /// `[n * f_len, R]`.
    pub attention: Var,
    /// `[n, R]`.
    pub real_lengths: Var,
    /// `[n, V]`.
    pub virtual_lengths: Var,
    /// `[n, 3B]` unit bone directions.
    pub directions: Var,
    /// `[n, 3J]` composer output, root at the origin.
    pub joints: Var,
}

/// Length-network output for one sample, lengths and positions in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthNetOutput<T> {
    pub coarse3d_per_frame: Array3<T>,
    pub per_frame_real_lengths: Array2<T>,
    pub attention_weights: Array2<T>,
    pub real_lengths: Array1<T>,
    pub virtual_lengths: Array1<T>,
    pub coarse3d_current: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct LiftingModel<T> {
    config: ModelConfig,
    bone_set: BoneSet,
    params: ParamStore<T>,
    layout: Layout,
    bone_matrix: Array2<T>,
    root_insert: Vec<usize>,
}

fn normal_matrix<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<T> {
    let n = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || T::lit(n.sample(rng)))
}

impl<T: Scalar> LiftingModel<T> {
    /// Fresh model on the default skeleton with `config.virtual_config`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        if config.virtual_config == VirtualConfigName::Custom {
            return Err(Error::Config(
                "custom virtual bones need an explicit bone set".into(),
            ));
        }
        let bones = BoneSet::standard(config.virtual_config)?;
        Self::with_bone_set(config, bones)
    }

    /// Fresh model with deterministic initialization from `config.seed`.
    pub fn with_bone_set(config: ModelConfig, bone_set: BoneSet) -> Result<Self> {
        config.validate()?;
        let topo = bone_set.topology();
        if topo.num_joints() != config.num_joints {
            return Err(Error::Config(format!(
                "config has {} joints, skeleton has {}",
                config.num_joints,
                topo.num_joints()
            )));
        }
        if bone_set.virtual_config().name != config.virtual_config {
            return Err(Error::Config(format!(
                "config names {} but bone set is {}",
                config.virtual_config,
                bone_set.virtual_config().name
            )));
        }
        let j = config.num_joints;
        let c = config.hidden_width;
        let b = bone_set.len();
        let r = bone_set.num_real();
        let out_dim = 3 * (j - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut ps = ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        };
        let he = |fan_in: usize| (2.0 / fan_in as f64).sqrt();
        let affine = |ps: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, i: usize, o: usize, std: f64| {
            let w = if std > 0.0 {
                normal_matrix(rng, i, o, std)
            } else {
                Array2::zeros((i, o))
            };
            Affine {
                w: ps.push(format!("{name}.w"), w),
                b: ps.push(format!("{name}.b"), Array2::zeros((1, o))),
            }
        };
        let len_in = affine(&mut ps, &mut rng, "length.in", 2 * j, c, he(2 * j));
        let len_blocks = (0..config.num_residual_blocks)
            .map(|k| {
                let a = affine(&mut ps, &mut rng, &format!("length.block{k}.a"), c, c, he(c));
                let bb = affine(&mut ps, &mut rng, &format!("length.block{k}.b"), c, c, he(c) * 0.5);
                (a, bb)
            })
            .collect();
        let len_out = affine(&mut ps, &mut rng, "length.out", c, out_dim, (1.0 / c as f64).sqrt());
        let len_att = affine(&mut ps, &mut rng, "length.att", c, r, 0.0);
        let dil = config.dilations();
        let dir_expand = affine(&mut ps, &mut rng, "direction.expand", 3 * 2 * j, c, he(6 * j));
        let dir_blocks = dil[1..]
            .iter()
            .enumerate()
            .map(|(k, &d)| {
                let conv = affine(&mut ps, &mut rng, &format!("direction.block{k}.conv"), 3 * c, c, he(3 * c));
                let pw = affine(&mut ps, &mut rng, &format!("direction.block{k}.pw"), c, c, he(c) * 0.5);
                (conv, pw, d)
            })
            .collect();
        let dir_out = affine(&mut ps, &mut rng, "direction.out", c, 3 * b, (1.0 / c as f64).sqrt());

        // Skip weights average every root-to-joint path that is no longer
        // than the real tree path, so the untrained composer already fuses
        // the loop alternatives; without virtual bones this is the tree path.
        let nonroot: Vec<usize> = (0..j).filter(|&k| k != topo.root()).collect();
        let mut skip = Array2::<T>::zeros((3 * b, out_dim));
        for (col, &joint) in nonroot.iter().enumerate() {
            let paths = enumerate_paths(&bone_set, joint, topo.depth(joint))?.paths;
            let w = 1.0 / paths.len() as f64;
            for step in paths.iter().flatten() {
                for d in 0..3 {
                    skip[[3 * step.bone + d, 3 * col + d]] += T::lit(w * f64::from(step.sign));
                }
            }
        }
        let comp_skip = ps.push("composer.skip.w".into(), skip);
        let comp_hidden = affine(&mut ps, &mut rng, "composer.hidden", 3 * b, c, he(3 * b));
        let comp_out = affine(&mut ps, &mut rng, "composer.out", c, out_dim, 0.0);

        let layout = Layout {
            len_in,
            len_blocks,
            len_out,
            len_att,
            dir_expand,
            dir_blocks,
            dir_out,
            comp_skip,
            comp_hidden,
            comp_out,
        };

        let mut bone_matrix = Array2::<T>::zeros((3 * j, 3 * b));
        for (k, bone) in bone_set.bones().iter().enumerate() {
            for d in 0..3 {
                bone_matrix[[3 * bone.to + d, 3 * k + d]] = T::one();
                bone_matrix[[3 * bone.from + d, 3 * k + d]] = -T::one();
            }
        }
        // [root zeros | non-root outputs] -> joint order
        let mut root_insert = Vec::with_capacity(3 * j);
        for k in 0..j {
            let pos = if k == topo.root() {
                0
            } else {
                1 + nonroot.iter().position(|&x| x == k).expect("non-root")
            };
            root_insert.extend([3 * pos, 3 * pos + 1, 3 * pos + 2]);
        }

        Ok(Self {
            config,
            bone_set,
            params: ps,
            layout,
            bone_matrix,
            root_insert,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn bone_set(&self) -> &BoneSet {
        &self.bone_set
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn parameter_names(&self) -> &[String] {
        self.params.names()
    }

    fn affine(&self, g: &mut Graph<T>, p: &[Var], x: Var, a: Affine) -> Var {
        let y = g.matmul(x, p[a.w]);
        g.add_row(y, p[a.b])
    }

    fn with_root(&self, g: &mut Graph<T>, out: Var) -> Var {
        let rows = g.value(out).nrows();
        let zeros = g.zeros(rows, 3);
        let full = g.concat_cols(&[zeros, out]);
        g.gather_cols(full, self.root_insert.clone())
    }

    fn trunk(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> (Var, Var) {
        let l = &self.layout;
        let h = self.affine(g, p, x, l.len_in);
        let mut h = g.relu(h);
        for &(a, b) in &l.len_blocks {
            let y = self.affine(g, p, h, a);
            let y = g.relu(y);
            let y = self.affine(g, p, y, b);
            let y = g.relu(y);
            h = g.add(h, y);
        }
        let out = self.affine(g, p, h, l.len_out);
        (h, self.with_root(g, out))
    }

    /// Rows `t*d .. ` of each sample for a width-3 convolution tap.
    fn tap_rows(n: usize, len_in: usize, len_out: usize, offset: usize) -> Vec<usize> {
        (0..n)
            .flat_map(|s| (0..len_out).map(move |t| s * len_in + t + offset))
            .collect()
    }

    fn conv3(&self, g: &mut Graph<T>, p: &[Var], x: Var, n: usize, len_in: usize, d: usize, a: Affine) -> (Var, usize) {
        let len_out = len_in - 2 * d;
        let taps: Vec<Var> = (0..3)
            .map(|k| g.gather_rows(x, Self::tap_rows(n, len_in, len_out, k * d)))
            .collect();
        let stacked = g.concat_cols(&taps);
        let y = self.affine(g, p, stacked, a);
        (g.relu(y), len_out)
    }

    fn unit_rows(g: &mut Graph<T>, raw: Var) -> Var {
        let sq = g.mul(raw, raw);
        let s = g.sum_col_groups(sq, 3);
        let shape = g.value(s).raw_dim();
        let s = g.add_const(s, &Array2::from_elem(shape, T::lit(NORM_EPS)));
        let norms = g.sqrt(s);
        let b = g.value(norms).ncols();
        let expanded = g.gather_cols(norms, repeat3(b));
        g.div(raw, expanded)
    }

    /// Direction network on `[n * rf, 2J]` windows -> `[n, 3B]` unit rows.
    pub fn direction_forward(&self, g: &mut Graph<T>, p: &[Var], windows: Var) -> Var {
        let rf = self.config.receptive_field;
        let n = g.value(windows).nrows() / rf;
        let l = &self.layout;
        let (mut x, mut len) = self.conv3(g, p, windows, n, rf, 1, l.dir_expand);
        for &(conv, pw, d) in &l.dir_blocks {
            let (y, len_out) = self.conv3(g, p, x, n, len, d, conv);
            let y = self.affine(g, p, y, pw);
            let y = g.relu(y);
            let res = g.gather_rows(x, Self::tap_rows(n, len, len_out, d));
            x = g.add(res, y);
            len = len_out;
        }
        debug_assert_eq!(len, 1);
        let raw = self.affine(g, p, x, l.dir_out);
        Self::unit_rows(g, raw)
    }

    /// Composer on `[n, R]`, `[n, V]` lengths and `[n, 3B]` directions.
    pub fn composer_forward_graph(&self, g: &mut Graph<T>, p: &[Var], real: Var, virt: Var, dirs: Var) -> Var {
        let l = &self.layout;
        let lengths = g.concat_cols(&[real, virt]);
        let b = self.bone_set.len();
        let lexp = g.gather_cols(lengths, repeat3(b));
        let bv = g.mul(dirs, lexp);
        let skip = g.matmul(bv, p[l.comp_skip]);
        let h = self.affine(g, p, bv, l.comp_hidden);
        let h = g.relu(h);
        let y = self.affine(g, p, h, l.comp_out);
        let out = g.add(skip, y);
        self.with_root(g, out)
    }

    /// Full forward pass of a batch.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], inputs: &BatchInputs<T>) -> Result<ForwardVars> {
        let f = self.config.num_random_frames;
        let n = inputs.batch_size();
        let j2 = 2 * self.config.num_joints;
        let rf = self.config.receptive_field;
        if inputs.random2d.dim() != (n * f, j2)
            || inputs.current2d.ncols() != j2
            || inputs.windows2d.dim() != (n * rf, j2)
        {
            return Err(Error::Config(format!(
                "batch shapes random {:?}, current {:?}, windows {:?} do not match f_len {f}, receptive field {rf}, J {}",
                inputs.random2d.dim(),
                inputs.current2d.dim(),
                inputs.windows2d.dim(),
                self.config.num_joints
            )));
        }
        let r = self.bone_set.num_real();
        let b = self.bone_set.len();
        let x = g.constant(ndarray::concatenate(Axis(0), &[inputs.random2d.view(), inputs.current2d.view()]).expect("same width"));
        let (h, coarse) = self.trunk(g, p, x);
        let random_rows: Vec<usize> = (0..n * f).collect();
        let current_rows: Vec<usize> = (n * f..n * f + n).collect();
        let coarse_random = g.gather_rows(coarse, random_rows.clone());
        let coarse_current = g.gather_rows(coarse, current_rows);
        let bm = g.constant(self.bone_matrix.clone());
        let vec_random = g.matmul(coarse_random, bm);
        let len_random_all = g.group_norms(vec_random, 3);
        let lengths_random = g.gather_cols(len_random_all, (0..r).collect());
        let vec_current = g.matmul(coarse_current, bm);
        let len_current = g.group_norms(vec_current, 3);
        let virtual_lengths = g.gather_cols(len_current, (r..b).collect());

        let h_random = g.gather_rows(h, random_rows);
        let scores = self.affine(g, p, h_random, self.layout.len_att);
        let attention = g.softmax_row_groups(scores, f);
        let weighted = g.mul(attention, lengths_random);
        let real_lengths = g.sum_row_groups(weighted, f);

        let windows = g.constant(inputs.windows2d.clone());
        let directions = self.direction_forward(g, p, windows);
        let joints = self.composer_forward_graph(g, p, real_lengths, virtual_lengths, directions);
        Ok(ForwardVars {
            coarse_random,
            coarse_current,
            lengths_random,
            attention,
            real_lengths,
            virtual_lengths,
            directions,
            joints,
        })
    }

    fn inference_graph(&self) -> (Graph<T>, Vec<Var>) {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        (g, p)
    }

    fn check_joints2d(&self, a: &ArrayView2<'_, T>) -> Result<()> {
        if a.dim() != (self.config.num_joints, 2) {
            return Err(validation(format!(
                "expected [{}, 2] keypoints, got {:?}",
                self.config.num_joints,
                a.dim()
            )));
        }
        Ok(())
    }

    /// Length network on normalized 2D input; outputs in mm.
    pub fn length_net_forward(
        &self,
        x_random: ArrayView3<'_, T>,
        x_current: ArrayView2<'_, T>,
    ) -> Result<LengthNetOutput<T>> {
        let f = self.config.num_random_frames;
        let j = self.config.num_joints;
        if x_random.dim() != (f, j, 2) {
            return Err(Error::Config(format!(
                "length network expects [{f}, {j}, 2] random frames, got {:?}",
                x_random.dim()
            )));
        }
        self.check_joints2d(&x_current)?;
        let (mut g, p) = self.inference_graph();
        let random = x_random.to_shape((f, 2 * j)).expect("contiguous").to_owned();
        let current = x_current.to_shape((1, 2 * j)).expect("contiguous").to_owned();
        let rf = self.config.receptive_field;
        let inputs = BatchInputs {
            random2d: random,
            current2d: current.clone(),
            windows2d: Array2::zeros((rf, 2 * j)),
        };
        let out = self.forward(&mut g, &p, &inputs)?;
        let mm = T::lit(MM_PER_UNIT);
        let v = |x: Var| g.value(x).mapv(|a| a * mm);
        Ok(LengthNetOutput {
            coarse3d_per_frame: v(out.coarse_random).into_shape_with_order((f, j, 3)).expect("shape"),
            per_frame_real_lengths: v(out.lengths_random),
            attention_weights: g.value(out.attention).clone(),
            real_lengths: v(out.real_lengths).row(0).to_owned(),
            virtual_lengths: v(out.virtual_lengths).row(0).to_owned(),
            coarse3d_current: v(out.coarse_current).into_shape_with_order((j, 3)).expect("shape"),
        })
    }

    /// Unit bone directions `[B, 3]` for the middle frame of a normalized
    /// `[receptive_field, J, 2]` window.
    pub fn direction_net_forward(&self, x_window: ArrayView3<'_, T>) -> Result<Array2<T>> {
        let rf = self.config.receptive_field;
        let j = self.config.num_joints;
        if x_window.dim() != (rf, j, 2) {
            return Err(validation(format!(
                "direction network expects a [{rf}, {j}, 2] window, got {:?}",
                x_window.dim()
            )));
        }
        let (mut g, p) = self.inference_graph();
        let w = g.constant(x_window.to_shape((rf, 2 * j)).expect("contiguous").to_owned());
        let d = self.direction_forward(&mut g, &p, w);
        Ok(g.value(d).clone().into_shape_with_order((self.bone_set.len(), 3)).expect("shape"))
    }

    /// Root-relative joints `[J, 3]` in mm from lengths in mm and unit directions.
    pub fn composer_forward(
        &self,
        real_lengths: &Array1<T>,
        virtual_lengths: &Array1<T>,
        directions: ArrayView2<'_, T>,
    ) -> Result<Array2<T>> {
        let r = self.bone_set.num_real();
        let v = self.bone_set.num_virtual();
        if real_lengths.len() != r || virtual_lengths.len() != v || directions.dim() != (r + v, 3) {
            return Err(Error::Config(format!(
                "composer expects {r} real lengths, {v} virtual lengths and [{}, 3] directions",
                r + v
            )));
        }
        let (mut g, p) = self.inference_graph();
        let inv = T::lit(1.0 / MM_PER_UNIT);
        let rl = g.constant(real_lengths.mapv(|x| x * inv).insert_axis(Axis(0)));
        let vl = g.constant(virtual_lengths.mapv(|x| x * inv).insert_axis(Axis(0)));
        let d = g.constant(directions.to_shape((1, 3 * (r + v))).expect("contiguous").to_owned());
        let out = self.composer_forward_graph(&mut g, &p, rl, vl, d);
        let j = self.config.num_joints;
        Ok(g
            .value(out)
            .mapv(|x| x * T::lit(MM_PER_UNIT))
            .into_shape_with_order((j, 3))
            .expect("shape"))
    }

    /// Root-relative predictions `[T, J, 3]` in mm for a pixel sequence.
    ///
    /// The random frames for the length network are drawn once per sequence
    /// from `seed`; each frame gets a replicate-padded window.
    pub fn predict_sequence(
        &self,
        joints2d: ArrayView3<'_, T>,
        camera: &CameraIntrinsics<T>,
        seed: u64,
    ) -> Result<Array3<T>> {
        let (t, j, _) = joints2d.dim();
        if j != self.config.num_joints {
            return Err(validation(format!("expected {} joints, got {j}", self.config.num_joints)));
        }
        let f = self.config.num_random_frames;
        let rf = self.config.receptive_field;
        let norm = normalize_2d(joints2d, camera);
        let flat = norm.to_shape((t, 2 * j)).expect("contiguous").to_owned();
        let random_idx: Vec<usize> = if t >= f {
            sample_random_frames(t, f, seed)?
        } else {
            (0..f).map(|k| k * t / f).collect()
        };
        let random_rows = flat.select(Axis(0), &random_idx);
        let mut out = Array3::zeros((t, j, 3));
        const CHUNK: usize = 256;
        for start in (0..t).step_by(CHUNK) {
            let end = (start + CHUNK).min(t);
            let n = end - start;
            let mut win_idx = Vec::with_capacity(n * rf);
            for c in start..end {
                win_idx.extend(window_around(t, c, rf).frames);
            }
            let mut random = Array2::zeros((n * f, 2 * j));
            for s in 0..n {
                random
                    .slice_mut(ndarray::s![s * f..(s + 1) * f, ..])
                    .assign(&random_rows);
            }
            let inputs = BatchInputs {
                random2d: random,
                current2d: flat.slice(ndarray::s![start..end, ..]).to_owned(),
                windows2d: flat.select(Axis(0), &win_idx),
            };
            let (mut g, p) = self.inference_graph();
            let fv = self.forward(&mut g, &p, &inputs)?;
            let joints = g.value(fv.joints).mapv(|x| x * T::lit(MM_PER_UNIT));
            out.slice_mut(ndarray::s![start..end, .., ..])
                .assign(&joints.into_shape_with_order((n, j, 3)).expect("shape"));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let dtype = DType::of::<T>();
        let meta = serde_json::json!({
            "model": self.config,
            "skeleton": SkeletonDocument::from_bone_set(&self.bone_set),
            "dtype": dtype,
        });
        let data: Vec<Vec<f64>> = self
            .params
            .tensors
            .iter()
            .map(|t| t.iter().map(|x| x.as_f64()).collect())
            .collect();
        let cols: Vec<(ColumnSpec, &[f64])> = self
            .params
            .names
            .iter()
            .zip(&self.params.tensors)
            .zip(&data)
            .map(|((name, t), d)| {
                (
                    ColumnSpec {
                        name: name.clone(),
                        shape: vec![t.nrows(), t.ncols()],
                        dtype,
                    },
                    d.as_slice(),
                )
            })
            .collect();
        write_container(path, CHECKPOINT_MAGIC, meta, &cols)
    }

    /// Loads a checkpoint written with the same scalar type.
    pub fn load(path: &Path) -> Result<Self> {
        let c = read_container(path, CHECKPOINT_MAGIC)?;
        let config: ModelConfig = serde_json::from_value(c.meta["model"].clone())?;
        let doc: SkeletonDocument = serde_json::from_value(c.meta["skeleton"].clone())?;
        let dtype: DType = serde_json::from_value(c.meta["dtype"].clone())?;
        if dtype != DType::of::<T>() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "checkpoint stores {dtype:?}, model uses {:?}",
                DType::of::<T>()
            )));
        }
        let bones = doc.to_bone_set()?;
        let mut model = Self::with_bone_set(config, bones)
            .map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;
        if c.columns.len() != model.params.len() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "{} tensors stored, {} expected",
                c.columns.len(),
                model.params.len()
            )));
        }
        for (i, (spec, data)) in c.columns.into_iter().enumerate() {
            let want = &model.params.tensors[i];
            if spec.name != model.params.names[i] || spec.shape != [want.nrows(), want.ncols()] {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "tensor {i}: stored {} {:?}, expected {} {:?}",
                    spec.name,
                    spec.shape,
                    model.params.names[i],
                    want.shape()
                )));
            }
            model.params.tensors[i] =
                Array2::from_shape_vec(want.raw_dim(), data.into_iter().map(T::lit).collect())
                    .expect("shape checked");
        }
        Ok(model)
    }

    /// Loads a checkpoint and checks it was trained for `expected`.
    pub fn load_for(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let model = Self::load(path)?;
        let got = model.config();
        if got.virtual_config != expected.virtual_config
            || got.num_joints != expected.num_joints
            || got.receptive_field != expected.receptive_field
            || got.num_random_frames != expected.num_random_frames
            || got.hidden_width != expected.hidden_width
            || got.num_residual_blocks != expected.num_residual_blocks
        {
            return Err(Error::IncompatibleCheckpoint(format!(
                "checkpoint is {} rf={} c={} n={} f_len={}, requested {} rf={} c={} n={} f_len={}",
                got.virtual_config,
                got.receptive_field,
                got.hidden_width,
                got.num_residual_blocks,
                got.num_random_frames,
                expected.virtual_config,
                expected.receptive_field,
                expected.hidden_width,
                expected.num_residual_blocks,
                expected.num_random_frames
            )));
        }
        Ok(model)
    }
}

fn repeat3(n: usize) -> Vec<usize> {
    (0..n).flat_map(|k| [k, k, k]).collect()
}
