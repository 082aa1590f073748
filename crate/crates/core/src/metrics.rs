//! Evaluation protocols: MPJPE, Procrustes-aligned P-MPJPE, scale-aligned
//! N-MPJPE and the velocity error MPJVE.
//!
//! All inputs are `[T, J, 3]` arrays in mm. Results are `f64` regardless of
//! the input scalar; alignment is solved per frame in double precision.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::Scalar;

/// Column order and abbreviations of the per-action table.
pub const ACTIONS: [(&str, &str); 15] = [
    ("Directions", "Dir."),
    ("Discussion", "Disc."),
    ("Eating", "Eat"),
    ("Greeting", "Greet"),
    ("Phoning", "Phone"),
    ("Photo", "Photo"),
    ("Posing", "Pose"),
    ("Purchases", "Purch."),
    ("Sitting", "Sit"),
    ("SittingDown", "SitD."),
    ("Smoking", "Smoke"),
    ("Waiting", "Wait"),
    ("WalkDog", "WalkD."),
    ("Walking", "Walk"),
    ("WalkTogether", "WalkT."),
];

/// A metric value plus the number of frames whose alignment fell back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aligned {
    pub value: f64,
    pub degenerate_frames: usize,
}

fn check_pair<T: Scalar>(pred: &ArrayView3<'_, T>, gt: &ArrayView3<'_, T>) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(validation(format!(
            "shape mismatch: pred {:?} vs gt {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    if pred.shape()[2] != 3 {
        return Err(validation("poses must have 3 coordinates per joint"));
    }
    if pred.shape()[0] == 0 || pred.shape()[1] == 0 {
        return Err(validation("empty pose array"));
    }
    Ok(())
}

fn frame_f64<T: Scalar>(f: ArrayView2<'_, T>) -> Array2<f64> {
    f.mapv(|x| x.as_f64())
}

fn mean_distance(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = a.nrows() as f64;
    a.outer_iter()
        .zip(b.outer_iter())
        .map(|(p, q)| {
            let d = &p - &q;
            d.dot(&d).sqrt()
        })
        .sum::<f64>()
        / n
}

/// Mean per-joint position error.
pub fn mpjpe<T: Scalar>(pred: ArrayView3<'_, T>, gt: ArrayView3<'_, T>) -> Result<f64> {
    check_pair(&pred, &gt)?;
    let (t, j) = (pred.shape()[0], pred.shape()[1]);
    let mut total = 0.0;
    for (p, g) in pred.outer_iter().zip(gt.outer_iter()) {
        total += mean_distance(&frame_f64(p), &frame_f64(g)) * j as f64;
    }
    Ok(total / (t * j) as f64)
}

/// Optimal similarity transform of `pred` onto `gt` (`[J, 3]` each).
///
/// Returns the aligned prediction and a flag set when `pred` has no spread
/// (all joints coincide) and only a translation was solved.
pub fn procrustes_align(pred: &Array2<f64>, gt: &Array2<f64>) -> (Array2<f64>, bool) {
    let mu_p = pred.mean_axis(Axis(0)).expect("nonempty");
    let mu_g = gt.mean_axis(Axis(0)).expect("nonempty");
    let p0 = pred - &mu_p;
    let g0 = gt - &mu_g;
    let norm_p = p0.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_g = g0.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_p <= 1e-12 * (1.0 + mu_p.dot(&mu_p).sqrt()) || norm_g == 0.0 {
        let aligned = &p0 + &mu_g;
        return (aligned, true);
    }
    let mut h = Matrix3::<f64>::zeros();
    for (g, p) in g0.outer_iter().zip(p0.outer_iter()) {
        for r in 0..3 {
            for c in 0..3 {
                h[(r, c)] += g[r] * p[c] / (norm_g * norm_p);
            }
        }
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("u requested");
    let v = svd.v_t.expect("v_t requested").transpose();
    let mut s = svd.singular_values;
    // nalgebra returns singular values in descending order.
    let mut v_fixed = v;
    if (v * u.transpose()).determinant() < 0.0 {
        let last = v_fixed.column(2).clone_owned();
        v_fixed.set_column(2, &(-last));
        s[2] = -s[2];
    }
    let r = v_fixed * u.transpose();
    let scale = s.sum() * norm_g / norm_p;
    let mut out = Array2::zeros(pred.raw_dim());
    for (k, row) in pred.outer_iter().enumerate() {
        let x = Vector3::new(row[0] - mu_p[0], row[1] - mu_p[1], row[2] - mu_p[2]);
        let y = r.transpose() * x * scale;
        for c in 0..3 {
            out[[k, c]] = y[c] + mu_g[c];
        }
    }
    (out, false)
}

/// MPJPE after per-frame similarity alignment.
pub fn p_mpjpe_detailed<T: Scalar>(
    pred: ArrayView3<'_, T>,
    gt: ArrayView3<'_, T>,
) -> Result<Aligned> {
    check_pair(&pred, &gt)?;
    let t = pred.shape()[0];
    let mut total = 0.0;
    let mut degenerate = 0;
    for (p, g) in pred.outer_iter().zip(gt.outer_iter()) {
        let g = frame_f64(g);
        let (aligned, flag) = procrustes_align(&frame_f64(p), &g);
        degenerate += usize::from(flag);
        total += mean_distance(&aligned, &g);
    }
    if degenerate > 0 {
        log::warn!("p_mpjpe: {degenerate} degenerate frame(s) aligned by translation only");
    }
    Ok(Aligned {
        value: total / t as f64,
        degenerate_frames: degenerate,
    })
}

pub fn p_mpjpe<T: Scalar>(pred: ArrayView3<'_, T>, gt: ArrayView3<'_, T>) -> Result<f64> {
    p_mpjpe_detailed(pred, gt).map(|a| a.value)
}

/// MPJPE after the least-squares per-frame scale `<p,g>/<p,p>`.
pub fn n_mpjpe_detailed<T: Scalar>(
    pred: ArrayView3<'_, T>,
    gt: ArrayView3<'_, T>,
) -> Result<Aligned> {
    check_pair(&pred, &gt)?;
    let t = pred.shape()[0];
    let mut total = 0.0;
    let mut degenerate = 0;
    for (p, g) in pred.outer_iter().zip(gt.outer_iter()) {
        let (p, g) = (frame_f64(p), frame_f64(g));
        let pp: f64 = p.iter().map(|x| x * x).sum();
        let pg: f64 = p.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        let s = if pp > 0.0 {
            pg / pp
        } else {
            degenerate += 1;
            1.0
        };
        total += mean_distance(&(p * s), &g);
    }
    if degenerate > 0 {
        log::warn!("n_mpjpe: {degenerate} all-zero frame(s) evaluated at unit scale");
    }
    Ok(Aligned {
        value: total / t as f64,
        degenerate_frames: degenerate,
    })
}

pub fn n_mpjpe<T: Scalar>(pred: ArrayView3<'_, T>, gt: ArrayView3<'_, T>) -> Result<f64> {
    n_mpjpe_detailed(pred, gt).map(|a| a.value)
}

/// Mean per-joint velocity error in mm per frame.
pub fn mpjve<T: Scalar>(pred: ArrayView3<'_, T>, gt: ArrayView3<'_, T>) -> Result<f64> {
    check_pair(&pred, &gt)?;
    let t = pred.shape()[0];
    if t < 2 {
        return Err(validation("mpjve needs at least 2 frames"));
    }
    let mut total = 0.0;
    for k in 0..t - 1 {
        let dp = frame_f64(pred.index_axis(Axis(0), k + 1)) - frame_f64(pred.index_axis(Axis(0), k));
        let dg = frame_f64(gt.index_axis(Axis(0), k + 1)) - frame_f64(gt.index_axis(Axis(0), k));
        total += mean_distance(&dp, &dg);
    }
    Ok(total / (t - 1) as f64)
}

/// Values of the four protocols over some set of frames.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ProtocolValues {
    pub frames: usize,
    /// Number of frame differences contributing to `mpjve`.
    pub velocity_frames: usize,
    pub protocol1: f64,
    pub protocol2: f64,
    pub protocol3: f64,
    pub mpjve: f64,
}

impl ProtocolValues {
    /// Evaluates one sequence.
    pub fn from_sequence<T: Scalar>(pred: ArrayView3<'_, T>, gt: ArrayView3<'_, T>) -> Result<Self> {
        let t = pred.shape()[0];
        let (mpjve, velocity_frames) = if t >= 2 {
            (mpjve(pred, gt)?, t - 1)
        } else {
            (0.0, 0)
        };
        Ok(Self {
            frames: t,
            velocity_frames,
            protocol1: mpjpe(pred, gt)?,
            protocol2: p_mpjpe(pred, gt)?,
            protocol3: n_mpjpe(pred, gt)?,
            mpjve,
        })
    }

    /// Frame-weighted mean of several entries.
    pub fn combine<'a>(items: impl IntoIterator<Item = &'a ProtocolValues>) -> Self {
        let mut acc = ProtocolValues::default();
        let (mut w1, mut wv) = (0.0, 0.0);
        for it in items {
            let f = it.frames as f64;
            let v = it.velocity_frames as f64;
            acc.frames += it.frames;
            acc.velocity_frames += it.velocity_frames;
            acc.protocol1 += f * it.protocol1;
            acc.protocol2 += f * it.protocol2;
            acc.protocol3 += f * it.protocol3;
            acc.mpjve += v * it.mpjve;
            w1 += f;
            wv += v;
        }
        if w1 > 0.0 {
            acc.protocol1 /= w1;
            acc.protocol2 /= w1;
            acc.protocol3 /= w1;
        }
        if wv > 0.0 {
            acc.mpjve /= wv;
        }
        acc
    }
}

/// Per-action and aggregate protocol values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_action: BTreeMap<String, ProtocolValues>,
    pub aggregate: ProtocolValues,
}

impl EvalReport {
    /// Builds a report from `(action, pred, gt)` sequences.
    pub fn from_sequences<'a, T: Scalar>(
        items: impl IntoIterator<Item = (&'a str, ArrayView3<'a, T>, ArrayView3<'a, T>)>,
    ) -> Result<Self> {
        let mut grouped: BTreeMap<String, Vec<ProtocolValues>> = BTreeMap::new();
        for (action, pred, gt) in items {
            grouped
                .entry(action.to_string())
                .or_default()
                .push(ProtocolValues::from_sequence(pred, gt)?);
        }
        let per_action: BTreeMap<_, _> = grouped
            .into_iter()
            .map(|(k, v)| (k, ProtocolValues::combine(&v)))
            .collect();
        let aggregate = ProtocolValues::combine(per_action.values());
        Ok(Self {
            per_action,
            aggregate,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Fixed-width table: one column per standard action plus `Avg`,
    /// rows for the four protocols. Actions outside the standard list
    /// still count towards `Avg`.
    pub fn to_table(&self) -> String {
        let rows: [(&str, fn(&ProtocolValues) -> f64); 4] = [
            ("Protocol #1", |v| v.protocol1),
            ("Protocol #2", |v| v.protocol2),
            ("Protocol #3", |v| v.protocol3),
            ("MPJVE", |v| v.mpjve),
        ];
        let mut out = String::new();
        let _ = write!(out, "{:<12}", "");
        for (_, abbr) in ACTIONS {
            let _ = write!(out, "{abbr:>8}");
        }
        let _ = writeln!(out, "{:>8}", "Avg");
        for (label, get) in rows {
            let _ = write!(out, "{label:<12}");
            for (name, _) in ACTIONS {
                match self.per_action.get(name) {
                    Some(v) => {
                        let _ = write!(out, "{:>8.1}", get(v));
                    }
                    None => {
                        let _ = write!(out, "{:>8}", "-");
                    }
                }
            }
            let _ = writeln!(out, "{:>8.1}", get(&self.aggregate));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix4, Rotation3, SymmetricEigen};
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_poses(rng: &mut ChaCha8Rng, t: usize) -> Array3<f64> {
        Array3::from_shape_fn((t, 17, 3), |_| rng.random_range(-800.0..800.0))
    }

    /// Horn's closed-form quaternion solution for the rotation, then the
    /// least-squares scale.
    fn horn_align(pred: &Array2<f64>, gt: &Array2<f64>) -> Array2<f64> {
        let mp = pred.mean_axis(Axis(0)).unwrap();
        let mg = gt.mean_axis(Axis(0)).unwrap();
        let a = pred - &mp;
        let b = gt - &mg;
        let mut m = Matrix3::<f64>::zeros();
        for (x, y) in a.outer_iter().zip(b.outer_iter()) {
            for r in 0..3 {
                for c in 0..3 {
                    m[(r, c)] += x[r] * y[c];
                }
            }
        }
        let (sxx, sxy, sxz) = (m[(0, 0)], m[(0, 1)], m[(0, 2)]);
        let (syx, syy, syz) = (m[(1, 0)], m[(1, 1)], m[(1, 2)]);
        let (szx, szy, szz) = (m[(2, 0)], m[(2, 1)], m[(2, 2)]);
        let n = Matrix4::new(
            sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
            syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
            szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
            sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz,
        );
        let eig = SymmetricEigen::new(n);
        let k = eig.eigenvalues.imax();
        let q = eig.eigenvectors.column(k);
        let uq = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            q[0], q[1], q[2], q[3],
        ));
        let rot = uq.to_rotation_matrix();
        let mut num = 0.0;
        let mut den = 0.0;
        let mut rotated = Array2::zeros(a.raw_dim());
        for (i, x) in a.outer_iter().enumerate() {
            let rx = rot * Vector3::new(x[0], x[1], x[2]);
            for c in 0..3 {
                rotated[[i, c]] = rx[c];
                num += rx[c] * b[[i, c]];
                den += x[c] * x[c];
            }
        }
        rotated * (num / den) + &mg
    }

    #[test]
    fn mpjpe_uniform_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = random_poses(&mut rng, 3);
        let mut pred = gt.clone();
        pred.index_axis_mut(Axis(2), 2).mapv_inplace(|z| z + 10.0);
        assert!((mpjpe(pred.view(), gt.view()).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(mpjpe(gt.view(), gt.view()).unwrap(), 0.0);
    }

    #[test]
    fn mpjpe_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_poses(&mut rng, 4);
        let b = random_poses(&mut rng, 4);
        let mut s = 0.0;
        for t in 0..4 {
            for j in 0..17 {
                let d: f64 = (0..3).map(|c| (a[[t, j, c]] - b[[t, j, c]]).powi(2)).sum();
                s += d.sqrt();
            }
        }
        assert!((mpjpe(a.view(), b.view()).unwrap() - s / 68.0).abs() < 1e-9);
    }

    #[test]
    fn procrustes_matches_horn_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = random_poses(&mut rng, 1).index_axis(Axis(0), 0).to_owned();
            let g = random_poses(&mut rng, 1).index_axis(Axis(0), 0).to_owned();
            let (ours, flag) = procrustes_align(&p, &g);
            let oracle = horn_align(&p, &g);
            assert!(!flag);
            let diff = (&ours - &oracle).iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(diff < 1e-6, "diff {diff}");
        }
    }

    #[test]
    fn p_mpjpe_recovers_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt = random_poses(&mut rng, 5);
        let mut pred = gt.clone();
        for mut frame in pred.outer_iter_mut() {
            let rot = Rotation3::from_euler_angles(
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.5..1.5),
                rng.random_range(-3.0..3.0),
            );
            let s = rng.random_range(0.3..3.0);
            let tr = Vector3::new(rng.random_range(-1e3..1e3), 50.0, -20.0);
            for mut row in frame.outer_iter_mut() {
                let y = rot * Vector3::new(row[0], row[1], row[2]) * s + tr;
                row[0] = y[0];
                row[1] = y[1];
                row[2] = y[2];
            }
        }
        assert!(p_mpjpe(pred.view(), gt.view()).unwrap() < 1e-6);
    }

    #[test]
    fn reflection_is_not_used() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = random_poses(&mut rng, 1);
        let mut pred = gt.clone();
        pred.index_axis_mut(Axis(2), 0).mapv_inplace(|x| -x);
        assert!(p_mpjpe(pred.view(), gt.view()).unwrap() > 1.0);
    }

    #[test]
    fn degenerate_frames_flagged() {
        let gt = Array3::from_shape_fn((2, 17, 3), |(_, j, c)| (j * 3 + c) as f64);
        let pred = Array3::<f64>::zeros((2, 17, 3));
        let p = p_mpjpe_detailed(pred.view(), gt.view()).unwrap();
        assert_eq!(p.degenerate_frames, 2);
        assert!(p.value.is_finite());
        let n = n_mpjpe_detailed(pred.view(), gt.view()).unwrap();
        assert_eq!(n.degenerate_frames, 2);
        assert!((n.value - mpjpe(pred.view(), gt.view()).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn n_mpjpe_half_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let gt = random_poses(&mut rng, 3);
        let pred = &gt * 0.5;
        assert!(n_mpjpe(pred.view(), gt.view()).unwrap() < 1e-9);
    }

    #[test]
    fn n_mpjpe_matches_scalar_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_poses(&mut rng, 1);
        let b = random_poses(&mut rng, 1);
        let s = (&a * &b).sum() / (&a * &a).sum();
        let want = mpjpe((&a * s).view(), b.view()).unwrap();
        assert!((n_mpjpe(a.view(), b.view()).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn mpjve_constant_offset_and_short_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gt = random_poses(&mut rng, 6);
        let offset = random_poses(&mut rng, 1);
        let pred = &gt + &offset;
        assert!(mpjve(pred.view(), gt.view()).unwrap() < 1e-9);
        assert!(mpjve(gt.slice(ndarray::s![..1, .., ..]), gt.slice(ndarray::s![..1, .., ..])).is_err());
    }

    #[test]
    fn report_aggregate_is_frame_weighted() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let seqs: Vec<(&str, Array3<f64>, Array3<f64>)> = vec![
            ("Walking", random_poses(&mut rng, 3), random_poses(&mut rng, 3)),
            ("Eating", random_poses(&mut rng, 7), random_poses(&mut rng, 7)),
            ("Walking", random_poses(&mut rng, 2), random_poses(&mut rng, 2)),
        ];
        let report =
            EvalReport::from_sequences(seqs.iter().map(|(a, p, g)| (*a, p.view(), g.view()))).unwrap();
        let all_pred = ndarray::concatenate(Axis(0), &[seqs[0].1.view(), seqs[1].1.view(), seqs[2].1.view()]).unwrap();
        let all_gt = ndarray::concatenate(Axis(0), &[seqs[0].2.view(), seqs[1].2.view(), seqs[2].2.view()]).unwrap();
        assert_eq!(report.aggregate.frames, 12);
        assert!((report.aggregate.protocol1 - mpjpe(all_pred.view(), all_gt.view()).unwrap()).abs() < 1e-9);
        let table = report.to_table();
        assert_eq!(table.lines().count(), 5);
        assert!(table.lines().next().unwrap().trim_end().ends_with("Avg"));
        let back: EvalReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(back.per_action.len(), 2);
    }
}
