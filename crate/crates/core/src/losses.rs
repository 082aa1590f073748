//! Training losses and their weighted total.
//!
//! The free functions take plain arrays (3D in mm, 2D in pixels) and are the
//! reference definitions. [`diff`] rebuilds the same quantities on an
//! [`autodiff::Graph`](crate::autodiff::Graph) for training.

use ndarray::{ArrayView1, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::geometry::{displacements, project_sequence, CameraIntrinsics};
use crate::skeleton::SkeletonTopology;
use crate::Scalar;

/// Weights of the seven loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    #[serde(rename = "w_L")]
    pub length: f64,
    #[serde(rename = "w_att")]
    pub attention: f64,
    #[serde(rename = "w_d")]
    pub direction: f64,
    #[serde(rename = "w_js")]
    pub joint_shift: f64,
    #[serde(rename = "w_pd")]
    pub proj_dir: f64,
    #[serde(rename = "w_pl")]
    pub proj_len: f64,
    #[serde(rename = "w_fc")]
    pub fc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            length: 1.0,
            attention: 0.05,
            direction: 0.02,
            joint_shift: 0.1,
            proj_dir: 1.0,
            proj_len: 1.0,
            fc: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in self.as_components().named() {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!("loss weight {name} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Same weights with both projection-consistency terms disabled.
    pub fn without_projection(mut self) -> Self {
        self.proj_dir = 0.0;
        self.proj_len = 0.0;
        self
    }

    pub fn as_components(&self) -> LossComponents<f64> {
        LossComponents {
            length: self.length,
            attention: self.attention,
            direction: self.direction,
            joint_shift: self.joint_shift,
            proj_dir: self.proj_dir,
            proj_len: self.proj_len,
            fc: self.fc,
        }
    }
}

/// One value per loss term.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents<T> {
    pub length: T,
    pub attention: T,
    pub direction: T,
    pub joint_shift: T,
    pub proj_dir: T,
    pub proj_len: T,
    pub fc: T,
}

impl<T: Copy> LossComponents<T> {
    pub const NAMES: [&'static str; 7] = [
        "length",
        "attention",
        "direction",
        "joint_shift",
        "proj_dir",
        "proj_len",
        "fc",
    ];

    pub fn named(&self) -> [(&'static str, T); 7] {
        let v = self.values();
        std::array::from_fn(|i| (Self::NAMES[i], v[i]))
    }

    pub fn values(&self) -> [T; 7] {
        [
            self.length,
            self.attention,
            self.direction,
            self.joint_shift,
            self.proj_dir,
            self.proj_len,
            self.fc,
        ]
    }

    pub fn from_values(v: [T; 7]) -> Self {
        Self {
            length: v[0],
            attention: v[1],
            direction: v[2],
            joint_shift: v[3],
            proj_dir: v[4],
            proj_len: v[5],
            fc: v[6],
        }
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> LossComponents<U> {
        LossComponents::from_values(self.values().map(f))
    }
}

/// Weighted total with the per-term weighted contributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub weighted: LossComponents<T>,
}

fn same_shape<T>(a: &ArrayView2<'_, T>, b: &ArrayView2<'_, T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(validation(format!(
            "shape mismatch: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

fn mean_joint_distance<T: Scalar>(est: ArrayView2<'_, T>, gt: ArrayView2<'_, T>) -> Result<T> {
    same_shape(&est, &gt)?;
    if est.nrows() == 0 {
        return Err(validation("no joints"));
    }
    let total: T = est
        .rows()
        .into_iter()
        .zip(gt.rows())
        .map(|(e, g)| (&g - &e).iter().map(|&x| x * x).sum::<T>().sqrt())
        .sum();
    Ok(total / T::lit(est.nrows() as f64))
}

/// Mean per-joint distance between the length branch's 3D estimate and ground truth.
pub fn length_loss<T: Scalar>(est: ArrayView2<'_, T>, gt: ArrayView2<'_, T>) -> Result<T> {
    mean_joint_distance(est, gt)
}

/// Mean per-joint distance of the composer output.
pub fn fc_loss<T: Scalar>(est: ArrayView2<'_, T>, gt: ArrayView2<'_, T>) -> Result<T> {
    mean_joint_distance(est, gt)
}

/// `|L - L_hat|_2` over the real-bone lengths.
pub fn attention_loss<T: Scalar>(est: ArrayView1<'_, T>, gt: ArrayView1<'_, T>) -> Result<T> {
    if est.len() != gt.len() {
        return Err(validation(format!(
            "length vectors differ: {} vs {}",
            est.len(),
            gt.len()
        )));
    }
    Ok((&gt - &est).iter().map(|&x| x * x).sum::<T>().sqrt())
}

/// `|D - D_hat|_2` over the flattened `[B, 3]` direction residual.
pub fn direction_loss<T: Scalar>(est: ArrayView2<'_, T>, gt: ArrayView2<'_, T>) -> Result<T> {
    same_shape(&est, &gt)?;
    if est.ncols() != 3 {
        return Err(validation("directions must be [B, 3]"));
    }
    Ok((&gt - &est).iter().map(|&x| x * x).sum::<T>().sqrt())
}

/// Unordered joint pairs not joined by a real bone.
pub fn joint_shift_pairs(topology: &SkeletonTopology) -> Vec<(usize, usize)> {
    let n = topology.num_joints();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if !topology.adjacent(i, j) {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Sum over non-adjacent pairs of `|(P_i - P_j) - (P_hat_i - P_hat_j)|`.
pub fn joint_shift_loss<T: Scalar>(
    est: ArrayView2<'_, T>,
    gt: ArrayView2<'_, T>,
    topology: &SkeletonTopology,
) -> Result<T> {
    same_shape(&est, &gt)?;
    if est.dim() != (topology.num_joints(), 3) {
        return Err(validation("joint arrays must be [J, 3]"));
    }
    Ok(joint_shift_pairs(topology)
        .into_iter()
        .map(|(i, j)| {
            (0..3)
                .map(|k| {
                    let r = (gt[[i, k]] - gt[[j, k]]) - (est[[i, k]] - est[[j, k]]);
                    r * r
                })
                .sum::<T>()
                .sqrt()
        })
        .sum())
}

/// Mean over frame pairs and joints of the distance between projected and
/// observed 2D displacements.
///
/// `est3d` is `[T, J, 3]` in camera coordinates, `gt2d` is `[T, J, 2]` pixels.
pub fn projection_consistency_loss<T: Scalar>(
    est3d: ArrayView3<'_, T>,
    gt2d: ArrayView3<'_, T>,
    camera: &CameraIntrinsics<T>,
) -> Result<T> {
    let (t, j, _) = est3d.dim();
    if gt2d.dim() != (t, j, 2) || est3d.dim().2 != 3 {
        return Err(validation(format!(
            "estimate {:?} and observations {:?} disagree",
            est3d.dim(),
            gt2d.dim()
        )));
    }
    let projected = project_sequence(est3d, camera)?;
    let est_disp = displacements(projected.view())?;
    let obs_disp = displacements(gt2d)?;
    let residual = est_disp - obs_disp;
    let norms = residual.map_axis(Axis(2), |r| r.iter().map(|&x| x * x).sum::<T>().sqrt());
    Ok(norms.sum() / T::lit(norms.len() as f64))
}

/// Weighted sum of the seven terms.
pub fn total_loss<T: Scalar>(
    components: &LossComponents<T>,
    weights: &LossWeights,
) -> Result<LossBreakdown<T>> {
    for (name, v) in components.named() {
        if !v.is_finite() {
            return Err(Error::Divergence {
                epoch: 0,
                step: 0,
                component: name.to_string(),
            });
        }
    }
    let w = weights.as_components().values();
    let c = components.values();
    let weighted = LossComponents::from_values(std::array::from_fn(|i| T::lit(w[i]) * c[i]));
    let total = weighted.values().iter().copied().sum();
    Ok(LossBreakdown { total, weighted })
}

/// Differentiable versions of the losses over batched rows.
pub mod diff {
    use ndarray::Array2;

    use crate::autodiff::{Graph, Var};
    use crate::Scalar;

    fn triple_cols(pairs: impl Iterator<Item = usize>) -> Vec<usize> {
        pairs.flat_map(|j| [3 * j, 3 * j + 1, 3 * j + 2]).collect()
    }

    /// Mean over rows and joints of per-joint distance; rows are `[J*3]` poses.
    pub fn mean_joint_distance<T: Scalar>(g: &mut Graph<T>, est: Var, gt: Var) -> Var {
        let r = g.sub(est, gt);
        let n = g.group_norms(r, 3);
        g.mean(n)
    }

    /// Mean over rows of the Euclidean norm of each row's residual.
    pub fn mean_row_norm<T: Scalar>(g: &mut Graph<T>, est: Var, gt: Var) -> Var {
        let r = g.sub(est, gt);
        let cols = g.value(r).ncols();
        let n = g.group_norms(r, cols);
        g.mean(n)
    }

    /// Per-row joint-shift loss averaged over rows.
    pub fn joint_shift<T: Scalar>(
        g: &mut Graph<T>,
        est: Var,
        gt: Var,
        pairs: &[(usize, usize)],
    ) -> Var {
        let first = triple_cols(pairs.iter().map(|p| p.0));
        let second = triple_cols(pairs.iter().map(|p| p.1));
        let ei = g.gather_cols(est, first.clone());
        let ej = g.gather_cols(est, second.clone());
        let gi = g.gather_cols(gt, first);
        let gj = g.gather_cols(gt, second);
        let e = g.sub(ei, ej);
        let t = g.sub(gi, gj);
        let r = g.sub(t, e);
        let n = g.group_norms(r, 3);
        let per_row = g.sum_col_groups(n, pairs.len());
        g.mean(per_row)
    }

    /// Projects camera-frame rows `[n, J*3]` to normalized image coordinates
    /// `(X/Z, Y/Z)` as `[n, J*2]`.
    pub fn project_normalized<T: Scalar>(g: &mut Graph<T>, cam3d: Var, num_joints: usize) -> Var {
        let xs: Vec<usize> = (0..num_joints).map(|j| 3 * j).collect();
        let ys: Vec<usize> = (0..num_joints).map(|j| 3 * j + 1).collect();
        let zs: Vec<usize> = (0..num_joints).map(|j| 3 * j + 2).collect();
        let x = g.gather_cols(cam3d, xs);
        let y = g.gather_cols(cam3d, ys);
        let z = g.gather_cols(cam3d, zs);
        let u = g.div(x, z);
        let v = g.div(y, z);
        let uv = g.concat_cols(&[u, v]);
        // interleave to (u0, v0, u1, v1, ...)
        let order: Vec<usize> = (0..num_joints).flat_map(|j| [j, num_joints + j]).collect();
        g.gather_cols(uv, order)
    }

    /// Projection-consistency loss over explicit `(earlier, later)` row pairs.
    ///
    /// `cam3d` holds camera-frame joints `[n, J*3]`; `observed` holds the
    /// matching normalized 2D keypoints `[n, J*2]`. Returns a zero node when
    /// there are no pairs.
    pub fn projection_consistency<T: Scalar>(
        g: &mut Graph<T>,
        cam3d: Var,
        observed: &Array2<T>,
        pairs: &[(usize, usize)],
        num_joints: usize,
    ) -> Var {
        if pairs.is_empty() {
            return g.zeros(1, 1);
        }
        let proj = project_normalized(g, cam3d, num_joints);
        let a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let pa = g.gather_rows(proj, a.clone());
        let pb = g.gather_rows(proj, b.clone());
        let est_disp = g.sub(pb, pa);
        let obs_disp = &observed.select(ndarray::Axis(0), &b) - &observed.select(ndarray::Axis(0), &a);
        let r = g.add_const(est_disp, &obs_disp.mapv(|x| -x));
        let n = g.group_norms(r, 2);
        g.mean(n)
    }
}
