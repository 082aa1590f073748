//! `vbones` command-line driver.

mod manifest;
mod plots;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use vbones::data::{
    ingest_h36m_format, synthesize_dataset, DatasetIndex, Split, SyntheticDatasetSpec,
};
use vbones::geometry::root_relative;
use vbones::losses::projection_consistency_loss;
use vbones::metrics::EvalReport;
use vbones::nets::{LiftingModel, ModelConfig};
use vbones::skeleton::{enumerate_paths, BoneSet, BoneKind, SkeletonDocument, VirtualConfigName};
use vbones::train::{
    ablation_rows, ablation_table, check_objective_gradients, gradient_check_batch, load_labeled, train,
    AblationResult, LabeledSequence, StepRecord, TrainingConfig, TrainingSet,
};
use vbones::CameraIntrinsics64;

use manifest::{prepare_out_dir, write_manifest};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] vbones::Error),
    #[error("output directory {} is not empty; pass --force to overwrite", .0.display())]
    Overwrite(PathBuf),
    #[error("{0}")]
    Plot(String),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Overwrite(_) => "overwrite",
            CliError::Plot(_) => "plot",
            CliError::Usage(_) => "usage",
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "vbones", version, about = "3D pose lifting with virtual bones")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset in the standard on-disk layout.
    Synth(SynthArgs),
    /// Train a model and write checkpoints and a per-step log.
    Train(TrainArgs),
    /// Score a checkpoint or a prediction dataset against ground truth.
    Eval(EvalArgs),
    /// Train and score every virtual-bone configuration with and without the projection loss.
    Ablate(AblateArgs),
    /// Print the root-to-joint paths of a bone configuration.
    Paths(PathsArgs),
    /// Compare analytic and finite-difference gradients of the training objective.
    Gradcheck(GradcheckArgs),
    /// Render training curves, error plots and the projection-loss illustration.
    Plot(PlotArgs),
}

#[derive(Args)]
struct OutArgs {
    /// Output directory (created if absent).
    #[arg(long)]
    out: PathBuf,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

fn parse_frames(s: &str) -> Result<usize, String> {
    match s {
        "9" => Ok(9),
        "243" => Ok(243),
        _ => Err(format!("{s:?} is not one of 9, 243")),
    }
}

fn parse_virtual(s: &str) -> Result<VirtualConfigName, String> {
    match s.parse::<VirtualConfigName>() {
        Ok(VirtualConfigName::Custom) | Err(_) => Err(format!("{s:?} is not one of VB0, VB5, VB10, VB13, VB23")),
        Ok(v) => Ok(v),
    }
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    /// Force deterministic data order.
    #[arg(long)]
    deterministic: bool,
    /// Receptive field of the direction network.
    #[arg(long, value_parser = parse_frames)]
    frames: Option<usize>,
    #[arg(long = "virtual", value_parser = parse_virtual)]
    virtual_config: Option<VirtualConfigName>,
    /// Projection-consistency losses.
    #[arg(long, value_enum)]
    pcl: Option<OnOff>,
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic dataset spec (JSON); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Run config (JSON with `model` and `training` sections).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root containing `index.json`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "train")]
    split: Split,
    #[command(flatten)]
    overrides: Overrides,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset root with ground truth.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Trained checkpoint to run on the 2D inputs.
    #[arg(long, conflicts_with = "pred", required_unless_present = "pred")]
    checkpoint: Option<PathBuf>,
    /// Dataset root whose 3D joints are taken as predictions.
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Independent seeds per setting.
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_frames)]
    frames: Option<usize>,
    /// Run settings concurrently (thread count capped by VBONES_NUM_THREADS).
    #[arg(long)]
    parallel: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct PathsArgs {
    /// Built-in configuration name (VB0..VB23) or a skeleton JSON file.
    #[arg(long)]
    config: String,
    /// Joint name or index.
    #[arg(long)]
    joint: String,
    #[arg(long, default_value_t = 8)]
    max_edges: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Scalar parameters to sample.
    #[arg(long, default_value_t = 64)]
    num_params: usize,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Optional directory for the JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct PlotArgs {
    /// Training log (`train_log.jsonl`).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Output directory of `vbones eval`.
    #[arg(long)]
    eval: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

/// Model and training settings of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    model: ModelConfig,
    training: TrainingConfig,
}

impl RunConfig {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| vbones::Error::io(p, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| vbones::Error::Config(format!("{}: {e}", p.display())).into())
            }
        }
    }

    fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.model.seed = seed;
            self.training.seed = seed;
        }
        if o.deterministic {
            self.training.deterministic = true;
        }
        if let Some(f) = o.frames {
            self.model.receptive_field = f;
        }
        if let Some(v) = o.virtual_config {
            self.model.virtual_config = v;
        }
        if let Some(OnOff::Off) = o.pcl {
            self.training.loss_weights = self.training.loss_weights.without_projection();
        }
    }

    fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.training.validate()?;
        Ok(())
    }
}

fn to_value<T: Serialize>(v: &T) -> CliResult<Value> {
    Ok(serde_json::to_value(v).map_err(vbones::Error::from)?)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| vbones::Error::io(path, e))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(v).map_err(vbones::Error::from)?;
    write_text(path, &text)
}

fn load_index(root: &Path, split: Split) -> CliResult<DatasetIndex> {
    let index = ingest_h36m_format(root, split)?;
    if index.is_empty() {
        return Err(vbones::Error::Validation(format!("no {split} sequences under {}", root.display())).into());
    }
    Ok(index)
}

fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    let mut spec: SyntheticDatasetSpec = match &a.config {
        None => SyntheticDatasetSpec::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| vbones::Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| vbones::Error::Config(format!("{}: {e}", p.display())))?
        }
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    prepare_out_dir(&a.out.out, a.out.force)?;
    synthesize_dataset(&a.out.out, &spec)?;
    write_json(&a.out.out.join("synth_spec.json"), &spec)?;
    write_manifest(&a.out.out, "synth", Some(spec.seed), &to_value(&spec)?)?;
    println!("wrote synthetic dataset to {}", a.out.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    cfg.apply(&a.overrides);
    cfg.validate()?;
    let index = load_index(&a.data, a.split)?;
    prepare_out_dir(&a.out.out, a.out.force)?;
    let mut model = LiftingModel::<f64>::new(cfg.model.clone())?;
    let set = TrainingSet::from_index(&index, model.bone_set())?;
    log::info!(
        "training on {} sequences / {} frames, {} parameters",
        set.sequences.len(),
        set.num_samples(),
        model.params().num_scalars()
    );
    write_json(&a.out.out.join("config.json"), &cfg)?;
    let result = train(&mut model, &set, &cfg.training, Some(&a.out.out));
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            write_manifest(&a.out.out, "train", Some(cfg.training.seed), &to_value(&cfg)?)?;
            return Err(e.into());
        }
    };
    model.save(&a.out.out.join("model.ckpt"))?;
    write_json(&a.out.out.join("epochs.json"), &report.epochs)?;
    write_manifest(&a.out.out, "train", Some(cfg.training.seed), &to_value(&cfg)?)?;
    if let Some(last) = report.epochs.last() {
        println!(
            "trained {} epochs; final loss {:.6}, fc {:.2} mm",
            report.epochs.len(),
            last.total,
            last.components.fc * vbones::nets::MM_PER_UNIT
        );
    }
    Ok(())
}

/// Per-sequence predictions and ground truth, root-relative in mm.
struct Scored {
    id: String,
    action: String,
    pred: ndarray::Array3<f64>,
    gt: ndarray::Array3<f64>,
}

fn gt_relative(seq: &LabeledSequence<f64>, root: usize) -> CliResult<ndarray::Array3<f64>> {
    let j3 = seq
        .sequence
        .joints3d
        .as_ref()
        .ok_or_else(|| vbones::Error::Validation(format!("{} has no 3D ground truth", seq.id)))?;
    Ok(root_relative(j3.view(), root))
}

fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let gt_index = load_index(&a.data, a.split)?;
    let items = load_labeled::<f64>(&gt_index)?;
    let root = vbones::skeleton::default_topology().root();
    let mut scored = Vec::with_capacity(items.len());
    let config: Value;
    if let Some(ck) = &a.checkpoint {
        let model = LiftingModel::<f64>::load(ck)?;
        config = serde_json::json!({"checkpoint": ck, "model": to_value(model.config())?, "seed": a.seed});
        for (k, it) in items.iter().enumerate() {
            let (j2, cam) = match (&it.sequence.joints2d, &it.sequence.camera) {
                (Some(j2), Some(c)) => (j2, c),
                _ => return Err(vbones::Error::Validation(format!("{} lacks 2D input or camera", it.id)).into()),
            };
            scored.push(Scored {
                id: it.id.clone(),
                action: it.action.clone(),
                pred: model.predict_sequence(j2.view(), cam, a.seed.wrapping_add(k as u64))?,
                gt: gt_relative(it, root)?,
            });
        }
    } else {
        let pred_root = a.pred.as_ref().expect("clap requires --checkpoint or --pred");
        config = serde_json::json!({"pred": pred_root, "seed": a.seed});
        let pred_index = ingest_h36m_format(pred_root, a.split)?;
        let preds: BTreeMap<String, usize> = pred_index
            .sequences
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.clone(), i))
            .collect();
        for it in &items {
            let i = *preds
                .get(&it.id)
                .ok_or_else(|| vbones::Error::Validation(format!("no prediction for {}", it.id)))?;
            let p = pred_index.load::<f64>(i)?;
            let labeled = LabeledSequence {
                id: it.id.clone(),
                action: it.action.clone(),
                camera_id: it.camera_id.clone(),
                sequence: p,
            };
            scored.push(Scored {
                id: it.id.clone(),
                action: it.action.clone(),
                pred: gt_relative(&labeled, root)?,
                gt: gt_relative(it, root)?,
            });
        }
    }
    let report = EvalReport::from_sequences(scored.iter().map(|s| (s.action.as_str(), s.pred.view(), s.gt.view())))?;

    prepare_out_dir(&a.out.out, a.out.force)?;
    write_text(&a.out.out.join("report.json"), &report.to_json()?)?;
    write_text(&a.out.out.join("report.txt"), &report.to_table())?;

    let names = vbones::skeleton::default_topology().joint_names().to_vec();
    let mut joint_sum = vec![0.0; names.len()];
    let mut frames = 0usize;
    let mut per_frame = String::from("sequence,frame,mpjpe_mm\n");
    for s in &scored {
        let diff = &s.pred - &s.gt;
        let dist = diff.map_axis(ndarray::Axis(2), |v| v.dot(&v).sqrt());
        for (j, col) in dist.columns().into_iter().enumerate() {
            joint_sum[j] += col.sum();
        }
        frames += dist.nrows();
        for (f, row) in dist.rows().into_iter().enumerate() {
            per_frame.push_str(&format!("{},{f},{:.6}\n", s.id, row.mean().unwrap_or(0.0)));
        }
    }
    let mut per_joint = String::from("joint,mpjpe_mm\n");
    for (n, sum) in names.iter().zip(&joint_sum) {
        per_joint.push_str(&format!("{n},{:.6}\n", sum / frames.max(1) as f64));
    }
    write_text(&a.out.out.join("per_joint.csv"), &per_joint)?;
    write_text(&a.out.out.join("per_frame.csv"), &per_frame)?;
    write_manifest(&a.out.out, "eval", Some(a.seed), &config)?;
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_ablate(a: &AblateArgs) -> CliResult<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(f) = a.frames {
        cfg.model.receptive_field = f;
    }
    cfg.validate()?;
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be >= 1".into()));
    }
    let train_items = load_labeled::<f64>(&load_index(&a.data, Split::Train)?)?;
    let test_items = load_labeled::<f64>(&load_index(&a.data, Split::Test)?)?;
    prepare_out_dir(&a.out.out, a.out.force)?;

    let cells: Vec<(VirtualConfigName, bool, u64)> = VirtualConfigName::BUILT_IN
        .iter()
        .flat_map(|&vc| [false, true].map(move |pcl| (vc, pcl)))
        .flat_map(|(vc, pcl)| (a.seed..a.seed + a.seeds).map(move |s| (vc, pcl, s)))
        .collect();
    let run = |&(vc, pcl, seed): &(VirtualConfigName, bool, u64)| {
        vbones::train::run_ablation_cell(&cfg.model, &cfg.training, &train_items, &test_items, vc, pcl, seed)
    };
    let results: Vec<AblationResult> = if a.parallel {
        cells.par_iter().map(run).collect::<Result<_, _>>()?
    } else {
        cells.iter().map(run).collect::<Result<_, _>>()?
    };
    let rows = ablation_rows(&results);
    let table = ablation_table(&rows);
    write_json(
        &a.out.out.join("ablation.json"),
        &serde_json::json!({"rows": rows, "runs": results}),
    )?;
    write_text(&a.out.out.join("ablation.txt"), &table)?;
    write_manifest(&a.out.out, "ablate", Some(a.seed), &to_value(&cfg)?)?;
    print!("{table}");
    Ok(())
}

fn resolve_bone_set(config: &str) -> CliResult<BoneSet> {
    if let Ok(name) = parse_virtual(config) {
        return Ok(BoneSet::standard(name)?);
    }
    let path = Path::new(config);
    if path.exists() {
        let text = fs::read_to_string(path).map_err(|e| vbones::Error::io(path, e))?;
        return Ok(SkeletonDocument::from_json(&text)?.to_bone_set()?);
    }
    Err(vbones::Error::Config(format!("{config:?} is neither a built-in configuration nor a skeleton file")).into())
}

fn cmd_paths(a: &PathsArgs) -> CliResult<()> {
    let bones = resolve_bone_set(&a.config)?;
    let topo = bones.topology();
    let joint = match a.joint.parse::<usize>() {
        Ok(i) => i,
        Err(_) => topo
            .joint_index(&a.joint)
            .ok_or_else(|| vbones::Error::Validation(format!("unknown joint {:?}", a.joint)))?,
    };
    let set = enumerate_paths(&bones, joint, a.max_edges)?;
    let names = topo.joint_names();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for path in &set.paths {
        let mut at = topo.root();
        let mut line = names[at].clone();
        for step in path {
            let bone = &bones.bones()[step.bone];
            at = if step.sign > 0 { bone.to } else { bone.from };
            let arrow = match bone.kind {
                BoneKind::Real => " -> ",
                BoneKind::Virtual => " ~> ",
            };
            line.push_str(arrow);
            line.push_str(&names[at]);
        }
        writeln!(out, "{line}").map_err(|e| vbones::Error::io("<stdout>", e))?;
    }
    log::info!("{} paths to {}", set.paths.len(), names[joint]);
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> CliResult<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    cfg.apply(&a.overrides);
    cfg.validate()?;
    let model = LiftingModel::<f64>::new(cfg.model.clone())?;
    let batch = gradient_check_batch(&model, cfg.model.seed)?;
    let report = check_objective_gradients(
        &model,
        &batch,
        &cfg.training.loss_weights,
        a.num_params.min(model.params().num_scalars()),
        a.eps,
        cfg.model.seed,
    )?;
    if let Some(dir) = &a.out {
        prepare_out_dir(dir, a.force)?;
        write_json(&dir.join("gradcheck.json"), &report)?;
        write_manifest(
            dir,
            "gradcheck",
            Some(cfg.model.seed),
            &serde_json::json!({"run": to_value(&cfg)?, "num_params": a.num_params, "eps": a.eps, "tol": a.tol}),
        )?;
    }
    println!(
        "checked {} parameters: max relative error {:.3e} (tol {:.1e})",
        report.checked.len(),
        report.max_rel_error,
        a.tol
    );
    report.ensure(a.tol)?;
    Ok(())
}

fn read_csv_rows(path: &Path) -> CliResult<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| vbones::Error::io(path, e))?;
    Ok(text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect())
}

fn parse_num(s: &str, path: &Path) -> CliResult<f64> {
    s.trim()
        .parse()
        .map_err(|_| vbones::Error::Format(format!("{}: bad number {s:?}", path.display())).into())
}

/// Two 2D trajectories with the same per-frame error: a constant offset
/// (zero projection-consistency loss) and an alternating one.
fn projection_cases() -> CliResult<Vec<plots::TrajectoryPanel>> {
    let cam = CameraIntrinsics64::new(1000.0, 1000.0, 500.0, 500.0)?;
    let t = 8;
    let d = [12.0, -6.0];
    let observed: Vec<[f64; 2]> = (0..t)
        .map(|k| {
            let s = k as f64 / (t - 1) as f64;
            [300.0 + 400.0 * s, 500.0 + 120.0 * (std::f64::consts::PI * s).sin()]
        })
        .collect();
    let depth = 4000.0;
    let mut panels = Vec::new();
    for (title, alternating) in [("constant offset", false), ("alternating offset", true)] {
        let projected: Vec<[f64; 2]> = observed
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let sgn = if alternating && k % 2 == 1 { -1.0 } else { 1.0 };
                [p[0] + sgn * d[0], p[1] + sgn * d[1]]
            })
            .collect();
        let est3d = ndarray::Array3::from_shape_fn((t, 1, 3), |(k, _, c)| match c {
            0 => (projected[k][0] - cam.u0) / cam.fx * depth,
            1 => (projected[k][1] - cam.v0) / cam.fy * depth,
            _ => depth,
        });
        let gt2d = ndarray::Array3::from_shape_fn((t, 1, 2), |(k, _, c)| observed[k][c]);
        let loss = projection_consistency_loss(est3d.view(), gt2d.view(), &cam)?;
        let err = observed
            .iter()
            .zip(&projected)
            .map(|(o, p)| (o[0] - p[0]).hypot(o[1] - p[1]))
            .sum::<f64>()
            / t as f64;
        panels.push(plots::TrajectoryPanel {
            title: format!("{title}: 2D error {err:.1} px, loss {loss:.1} px"),
            observed: observed.iter().map(|p| (p[0], p[1])).collect(),
            projected: projected.iter().map(|p| (p[0], p[1])).collect(),
        });
    }
    Ok(panels)
}

fn cmd_plot(a: &PlotArgs) -> CliResult<()> {
    prepare_out_dir(&a.out.out, a.out.force)?;
    let text = plots::init_font();
    if let Some(log_path) = &a.log {
        let raw = fs::read_to_string(log_path).map_err(|e| vbones::Error::io(log_path, e))?;
        let records: Vec<StepRecord> = raw
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()
            .map_err(vbones::Error::from)?;
        let mut series = vec![("total".to_string(), records.iter().map(|r| r.total).collect::<Vec<_>>())];
        for (k, name) in vbones::losses::LossComponents::<f64>::NAMES.iter().enumerate() {
            series.push((name.to_string(), records.iter().map(|r| r.components.values()[k]).collect()));
        }
        plots::training_curves(&series, &a.out.out.join("training_curves.png"), text)?;
    }
    if let Some(eval_dir) = &a.eval {
        let pj = eval_dir.join("per_joint.csv");
        let joints = read_csv_rows(&pj)?
            .into_iter()
            .map(|r| Ok((r[0].clone(), parse_num(r.get(1).map_or("", String::as_str), &pj)?)))
            .collect::<CliResult<Vec<_>>>()?;
        plots::per_joint_bars(&joints, &a.out.out.join("per_joint_error.png"), text)?;
        let pf = eval_dir.join("per_frame.csv");
        let mut traces: Vec<(String, Vec<f64>)> = Vec::new();
        for r in read_csv_rows(&pf)? {
            let v = parse_num(r.get(2).map_or("", String::as_str), &pf)?;
            match traces.last_mut() {
                Some((id, vals)) if *id == r[0] => vals.push(v),
                _ => traces.push((r[0].clone(), vec![v])),
            }
        }
        plots::per_frame_traces(&traces, &a.out.out.join("per_frame_error.png"), text)?;
    }
    plots::trajectory_panels(&projection_cases()?, &a.out.out.join("projection_cases.png"), text)?;
    write_manifest(
        &a.out.out,
        "plot",
        None,
        &serde_json::json!({"log": a.log, "eval": a.eval}),
    )?;
    println!("wrote plots to {}", a.out.out.display());
    Ok(())
}

fn init_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("VBONES_NUM_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| vbones::Error::Config(format!("VBONES_NUM_THREADS={v:?} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| vbones::Error::Internal(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Paths(a) => cmd_paths(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error: kind={} msg={msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
