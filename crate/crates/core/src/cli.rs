//! The `dvps` command line.
//!
//! Exit status is 0 on success, 1 for usage or validation errors and 2 for
//! I/O failures.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::dataset_io::{
    self, load_depth, load_json, load_panoptic, load_point_cloud, save_depth, save_float_raster, save_json,
    save_panoptic, save_semantic, save_visualization, write_atomic, CameraModel, FrameRecord, LoadedManifest,
    Preset, SequenceManifest,
};
use crate::error::Error;
use crate::fusion::{fuse_pair, fuse_single, FusionParams};
use crate::metrics_depth::{DepthAccumulator, DepthEvalResult, DEFAULT_EVAL_MAX, DEFAULT_EVAL_MIN};
use crate::metrics_panoptic::{
    dvpq_table_multi, pq_stats, vpq_stats_multi, MatchStats, MetricReport, DEFAULT_LAMBDAS,
};
use crate::stitch::{stitch_sequence, PairPrediction, StitchOptions};
use crate::synth::{self, generate_scene, perturb, IdSwap, PerturbationSpec, SceneConfig};
use crate::types::{LabelSpec, Sequence};

#[derive(Parser, Debug)]
#[command(name = "dvps", version, about = "Depth-aware video panoptic segmentation toolkit")]
struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "DVPS_JOBS", default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fuse per-frame head outputs into P/R panoptic pairs.
    Fuse(FuseArgs),
    /// Propagate instance ids across fused pairs.
    Stitch(StitchArgs),
    /// Score predictions against ground truth.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Lidar-to-image label conversion steps.
    #[command(subcommand)]
    Convert(ConvertCommand),
    /// Write a synthetic scene as manifests.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Serialize)]
struct FuseArgs {
    /// Manifest listing semantic, heatmap and offsets per frame.
    #[arg(long)]
    heads: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    threshold: f32,
    #[arg(long, default_value_t = 7)]
    nms_window: usize,
    #[arg(long, default_value_t = 200)]
    top_k: usize,
}

#[derive(Args, Debug, Serialize)]
struct StitchArgs {
    /// Manifest of fused pairs (`panoptic` and `next_panoptic`).
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    min_iou: f64,
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    /// Image panoptic quality.
    Pq(EvalArgs),
    /// Video panoptic quality.
    Vpq(EvalArgs),
    /// Depth-aware video panoptic quality.
    Dvpq(EvalArgs),
    /// Monocular depth metrics.
    Depth(EvalArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Text,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum PresetArg {
    Cityscapes,
    Semkitti,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Cityscapes => Preset::Cityscapes,
            PresetArg::Semkitti => Preset::Semkitti,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    /// Prediction manifest; repeat for several sequences.
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    /// Ground-truth manifest, paired with `--pred` by position.
    #[arg(long, required = true)]
    gt: Vec<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Window sizes, comma separated or repeated.
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    lambda: Vec<f64>,
    /// Also void pixels with gt depth but no predicted depth.
    #[arg(long)]
    strict: bool,
    #[arg(long, default_value_t = DEFAULT_EVAL_MIN)]
    min_depth: f64,
    #[arg(long, default_value_t = DEFAULT_EVAL_MAX)]
    max_depth: f64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum ConvertCommand {
    /// Project a labelled point cloud into depth and panoptic PNGs.
    Project(ProjectArgs),
    /// Drop projected depths that disagree with a reference depth.
    Check(CheckArgs),
    /// Drop background points occluded by nearby foreground points.
    Suppress(SuppressArgs),
}

#[derive(Args, Debug, Serialize)]
struct ProjectArgs {
    /// Text file of `x y z class instance` lines.
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out_depth: PathBuf,
    #[arg(long)]
    out_panoptic: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct CheckArgs {
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    threshold: f64,
}

#[derive(Args, Debug, Serialize)]
struct SuppressArgs {
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    panoptic: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out_depth: PathBuf,
    #[arg(long)]
    out_panoptic: PathBuf,
    #[arg(long, default_value_t = 7)]
    patch: usize,
    #[arg(long, default_value_t = 0.0)]
    margin: f64,
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Scene description; a random scene from `--seed` when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    erosion: usize,
    /// `FRAME:A:B`, swapping instances A and B from FRAME (0-based) on.
    #[arg(long)]
    swap: Option<String>,
    #[arg(long, value_delimiter = ',')]
    drop: Vec<u32>,
    #[arg(long, default_value_t = 1.0)]
    depth_factor: f64,
    #[arg(long, default_value_t = 0)]
    jitter: usize,
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start {} worker threads: {e}", cli.jobs);
            return 1;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return if err.is_io() { 2 } else { 1 };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Fuse(a) => fuse(a),
        Command::Stitch(a) => stitch(a),
        Command::Eval(EvalCommand::Pq(a)) => eval_panoptic(a, "pq", cli.jobs),
        Command::Eval(EvalCommand::Vpq(a)) => eval_panoptic(a, "vpq", cli.jobs),
        Command::Eval(EvalCommand::Dvpq(a)) => eval_dvpq(a, cli.jobs),
        Command::Eval(EvalCommand::Depth(a)) => eval_depth(a, cli.jobs),
        Command::Convert(ConvertCommand::Project(a)) => convert_project(a),
        Command::Convert(ConvertCommand::Check(a)) => convert_check(a),
        Command::Convert(ConvertCommand::Suppress(a)) => convert_suppress(a),
        Command::Synth(a) => synth_cmd(a),
    }
}

fn resolve_labels(flag: Option<&Path>, manifests: &[&LoadedManifest]) -> anyhow::Result<LabelSpec> {
    if let Some(path) = flag {
        return Ok(load_json(path)?);
    }
    manifests
        .iter()
        .find_map(|m| m.manifest.labels.clone())
        .ok_or_else(|| anyhow!(Error::Validation("no label set: pass --labels or embed one in the manifest".into())))
}

fn file_name(t: usize, what: &str, ext: &str) -> PathBuf {
    PathBuf::from(format!("frames/{t:06}_{what}.{ext}"))
}

/// Copies a frame's depth into `out` when the source manifest lists one.
fn carry_depth(src: &LoadedManifest, rec: &FrameRecord, t: usize, out: &Path) -> anyhow::Result<Option<PathBuf>> {
    let Some(depth) = &rec.depth else { return Ok(None) };
    let rel = file_name(t, "depth", "png");
    let from = src.resolve(depth);
    let bytes = fs::read(&from).map_err(|e| Error::Io { path: from, source: e })?;
    write_atomic(&out.join(&rel), &bytes)?;
    Ok(Some(rel))
}

fn fuse(a: &FuseArgs) -> anyhow::Result<()> {
    let params = FusionParams {
        threshold: a.threshold,
        nms_window: a.nms_window,
        top_k: a.top_k,
    };
    params.validate()?;
    let heads = LoadedManifest::load(&a.heads)?;
    let spec = resolve_labels(a.labels.as_deref(), &[&heads])?;
    let n = heads.manifest.frames.len();
    let outputs = (0..n).map(|t| heads.load_heads(t)).collect::<Result<Vec<_>, _>>()?;
    let mut frames = Vec::with_capacity(n);
    for (t, rec) in heads.manifest.frames.iter().enumerate() {
        let mut out = FrameRecord {
            index: rec.index,
            panoptic: Some(file_name(t, "p", "png")),
            depth: carry_depth(&heads, rec, t, &a.out)?,
            ..Default::default()
        };
        if t + 1 < n {
            let next_offsets = heads.load_next_offsets(t)?;
            let (cur, nxt) = (&outputs[t], &outputs[t + 1]);
            let (p, r) = fuse_pair(
                &cur.semantic,
                &nxt.semantic,
                &cur.heatmap,
                &cur.offsets,
                &next_offsets,
                &spec,
                &params,
            )?;
            let r_path = file_name(t, "r", "png");
            save_panoptic(&a.out.join(out.panoptic.as_ref().unwrap()), &p)?;
            save_panoptic(&a.out.join(&r_path), &r)?;
            out.next_panoptic = Some(r_path);
        } else {
            let p = fuse_single(&outputs[t], &spec, &params)?;
            save_panoptic(&a.out.join(out.panoptic.as_ref().unwrap()), &p)?;
        }
        frames.push(out);
    }
    let manifest = SequenceManifest {
        sequence_id: heads.manifest.sequence_id.clone(),
        preset: heads.manifest.preset,
        labels: Some(spec),
        frames,
    };
    save_json(&a.out.join("pairs.json"), &manifest)?;
    Ok(())
}

fn stitch(a: &StitchArgs) -> anyhow::Result<()> {
    let src = LoadedManifest::load(&a.pred)?;
    let spec = resolve_labels(a.labels.as_deref(), &[&src])?;
    let pairs: Vec<PairPrediction> = src.load_pairs(&spec)?;
    let stitched = stitch_sequence(&pairs, &spec, &StitchOptions { min_iou: a.min_iou })?;
    let mut frames = Vec::with_capacity(stitched.len());
    for (t, (map, rec)) in stitched.iter().zip(&src.manifest.frames).enumerate() {
        let rel = file_name(t, "panoptic", "png");
        save_panoptic(&a.out.join(&rel), map)?;
        frames.push(FrameRecord {
            index: rec.index,
            panoptic: Some(rel),
            depth: carry_depth(&src, rec, t, &a.out)?,
            ..Default::default()
        });
    }
    let manifest = SequenceManifest {
        sequence_id: src.manifest.sequence_id.clone(),
        preset: src.manifest.preset,
        labels: Some(spec),
        frames,
    };
    save_json(&a.out.join("stitched.json"), &manifest)?;
    Ok(())
}

#[derive(Serialize)]
struct InputDigest {
    path: PathBuf,
    sha256: String,
    /// Digest over the digests of every file the manifest references.
    #[serde(skip_serializing_if = "Option::is_none")]
    contents_sha256: Option<String>,
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn manifest_digest(m: &LoadedManifest, path: &Path) -> anyhow::Result<InputDigest> {
    let mut h = Sha256::new();
    for rec in &m.manifest.frames {
        let paths = [
            &rec.image,
            &rec.panoptic,
            &rec.depth,
            &rec.next_panoptic,
            &rec.semantic,
            &rec.heatmap,
            &rec.offsets,
            &rec.next_offsets,
        ];
        for p in paths.into_iter().flatten() {
            h.update(p.to_string_lossy().as_bytes());
            h.update(sha256_file(&m.resolve(p))?.as_bytes());
        }
    }
    Ok(InputDigest {
        path: path.to_path_buf(),
        sha256: sha256_file(path)?,
        contents_sha256: Some(hex::encode(h.finalize())),
    })
}

fn provenance(command: &str, config: &impl Serialize, inputs: Vec<InputDigest>, jobs: usize) -> serde_json::Value {
    json!({
        "tool": "dvps",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
        "jobs": jobs,
        "inputs": inputs,
    })
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes())?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).context("writing report to stdout")?;
        }
    }
    Ok(())
}

fn emit_json(out: Option<&Path>, value: &serde_json::Value) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit(out, &text)
}

struct EvalInputs {
    spec: LabelSpec,
    preds: Vec<Sequence>,
    gts: Vec<Sequence>,
    digests: Vec<InputDigest>,
    preset: Option<Preset>,
}

fn load_eval_inputs(a: &EvalArgs, with_depth: bool) -> anyhow::Result<EvalInputs> {
    if a.pred.len() != a.gt.len() {
        bail!(Error::Validation(format!(
            "{} --pred manifests but {} --gt manifests",
            a.pred.len(),
            a.gt.len()
        )));
    }
    let pred_m = a.pred.iter().map(|p| LoadedManifest::load(p)).collect::<Result<Vec<_>, _>>()?;
    let gt_m = a.gt.iter().map(|p| LoadedManifest::load(p)).collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&LoadedManifest> = gt_m.iter().chain(&pred_m).collect();
    let spec = resolve_labels(a.labels.as_deref(), &refs)?;
    let preset = a.preset.map(Preset::from).or_else(|| gt_m.iter().find_map(|m| m.manifest.preset));
    let preds = pred_m
        .par_iter()
        .map(|m| m.load_sequence(&spec, with_depth))
        .collect::<Result<Vec<_>, _>>()?;
    let gts = gt_m
        .par_iter()
        .map(|m| m.load_sequence(&spec, with_depth))
        .collect::<Result<Vec<_>, _>>()?;
    let mut digests = Vec::new();
    for (m, p) in pred_m.iter().zip(&a.pred).chain(gt_m.iter().zip(&a.gt)) {
        digests.push(manifest_digest(m, p)?);
    }
    Ok(EvalInputs {
        spec,
        preds,
        gts,
        digests,
        preset,
    })
}

fn window_sizes(a: &EvalArgs, preset: Option<Preset>, command: &str) -> anyhow::Result<Vec<usize>> {
    if command == "pq" {
        if !a.k.is_empty() && a.k != [1] {
            bail!(Error::Validation("pq is image-level; use `eval vpq` for --k".into()));
        }
        return Ok(vec![1]);
    }
    if !a.k.is_empty() {
        return Ok(a.k.clone());
    }
    preset
        .map(Preset::ks)
        .ok_or_else(|| anyhow!(Error::Validation("no window sizes: pass --k or --preset".into())))
}

fn eval_panoptic(a: &EvalArgs, command: &str, jobs: usize) -> anyhow::Result<()> {
    let inputs = load_eval_inputs(a, false)?;
    let ks = window_sizes(a, inputs.preset, command)?;
    let spec = &inputs.spec;
    let per_sequence = inputs
        .preds
        .par_iter()
        .zip(inputs.gts.par_iter())
        .map(|(p, g)| {
            if command == "pq" {
                let pm: Vec<_> = p.maps().collect();
                let gm: Vec<_> = g.maps().collect();
                pq_stats(&pm, &gm, spec).map(|s| vec![s])
            } else {
                vpq_stats_multi(p, g, &ks, spec)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let reports: Vec<MetricReport> = ks
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let mut stats = MatchStats::new();
            for s in &per_sequence {
                stats.merge(&s[j]);
            }
            MetricReport::from_stats(&stats, spec, k, None)
        })
        .collect();
    match a.format {
        Format::Json => emit_json(
            a.out.as_deref(),
            &json!({
                "provenance": provenance(&format!("eval {command}"), a, inputs.digests, jobs),
                "reports": reports,
            }),
        ),
        Format::Text => emit(
            a.out.as_deref(),
            &reports.iter().map(MetricReport::render_text).collect::<Vec<_>>().join("\n"),
        ),
        Format::Csv => {
            let mut csv = String::new();
            for (i, r) in reports.iter().enumerate() {
                let body = r.to_csv();
                csv.push_str(if i == 0 { &body } else { body.split_once('\n').map_or("", |x| x.1) });
            }
            emit(a.out.as_deref(), &csv)
        }
    }
}

fn eval_dvpq(a: &EvalArgs, jobs: usize) -> anyhow::Result<()> {
    let inputs = load_eval_inputs(a, true)?;
    let ks = window_sizes(a, inputs.preset, "dvpq")?;
    let lambdas = if a.lambda.is_empty() {
        DEFAULT_LAMBDAS.to_vec()
    } else {
        a.lambda.clone()
    };
    let pairs: Vec<(&Sequence, &Sequence)> = inputs.preds.iter().zip(&inputs.gts).collect();
    let table = dvpq_table_multi(&pairs, &ks, &lambdas, a.strict, &inputs.spec)?;
    match a.format {
        Format::Json => emit_json(
            a.out.as_deref(),
            &json!({
                "provenance": provenance("eval dvpq", a, inputs.digests, jobs),
                "table": table,
            }),
        ),
        Format::Text => emit(a.out.as_deref(), &table.render_text()),
        Format::Csv => emit(a.out.as_deref(), &table.to_csv()),
    }
}

fn depth_text(r: &DepthEvalResult) -> String {
    let rows = [
        ("SILog", r.silog),
        ("AbsRel", r.abs_rel),
        ("SqRel", r.sq_rel),
        ("RMSE", r.rmse),
        ("RMSElog", r.rmse_log),
        ("iRMSE", r.irmse),
        ("delta<1.25", r.delta1),
        ("delta<1.25^2", r.delta2),
        ("delta<1.25^3", r.delta3),
    ];
    let mut out: String = rows.iter().map(|(k, v)| format!("{k:<14}{v:>12.5}\n")).collect();
    out.push_str(&format!("{:<14}{:>12}\n", "pixels", r.n));
    out
}

fn eval_depth(a: &EvalArgs, jobs: usize) -> anyhow::Result<()> {
    let inputs = load_eval_inputs(a, true)?;
    let partials = inputs
        .preds
        .par_iter()
        .zip(inputs.gts.par_iter())
        .map(|(p, g)| {
            if p.len() != g.len() {
                return Err(Error::Dimension(format!("{} vs {} frames", p.len(), g.len())));
            }
            let mut acc = DepthAccumulator::default();
            for (pf, gf) in p.frames().iter().zip(g.frames()) {
                let (Some(pd), Some(gd)) = (&pf.depth, &gf.depth) else {
                    unreachable!("sequences were loaded with depth")
                };
                acc.add_maps(pd, gd, a.min_depth, a.max_depth)?;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut acc = DepthAccumulator::default();
    for part in &partials {
        acc.merge(part);
    }
    let result = acc.finish()?;
    match a.format {
        Format::Json => emit_json(
            a.out.as_deref(),
            &json!({
                "provenance": provenance("eval depth", a, inputs.digests, jobs),
                "depth": result,
            }),
        ),
        Format::Text => emit(a.out.as_deref(), &depth_text(&result)),
        Format::Csv => emit(
            a.out.as_deref(),
            &format!(
                "silog,abs_rel,sq_rel,rmse,rmse_log,irmse,delta1,delta2,delta3,n\n{},{},{},{},{},{},{},{},{},{}\n",
                result.silog,
                result.abs_rel,
                result.sq_rel,
                result.rmse,
                result.rmse_log,
                result.irmse,
                result.delta1,
                result.delta2,
                result.delta3,
                result.n
            ),
        ),
    }
}

fn convert_project(a: &ProjectArgs) -> anyhow::Result<()> {
    let spec: LabelSpec = load_json(&a.labels)?;
    let cam: CameraModel = load_json(&a.camera)?;
    let cloud = load_point_cloud(&a.cloud)?;
    let (depth, pano) = dataset_io::project_points(&cloud, &cam, &spec)?;
    save_depth(&a.out_depth, &depth)?;
    save_panoptic(&a.out_panoptic, &pano)?;
    println!("projected {} of {} points", depth.present_count(), cloud.len());
    Ok(())
}

fn convert_check(a: &CheckArgs) -> anyhow::Result<()> {
    let depth = load_depth(&a.depth)?;
    let reference = load_depth(&a.reference)?;
    let (out, mask) = dataset_io::disparity_consistency_check(&depth, &reference, a.threshold)?;
    save_depth(&a.out, &out)?;
    println!("removed {} of {} points", mask.count(), depth.present_count());
    Ok(())
}

fn convert_suppress(a: &SuppressArgs) -> anyhow::Result<()> {
    let spec: LabelSpec = load_json(&a.labels)?;
    let depth = load_depth(&a.depth)?;
    let pano = load_panoptic(&a.panoptic, &spec)?;
    let (d, p, mask) = dataset_io::non_foreground_suppression(&depth, &pano, &spec, a.patch, a.margin)?;
    save_depth(&a.out_depth, &d)?;
    save_panoptic(&a.out_panoptic, &p)?;
    println!("removed {} of {} points", mask.count(), depth.present_count());
    Ok(())
}

fn parse_swap(s: &str) -> anyhow::Result<IdSwap> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || anyhow!(Error::Validation(format!("--swap expects FRAME:A:B, got `{s}`")));
    if parts.len() != 3 {
        return Err(bad());
    }
    Ok(IdSwap {
        from_frame: parts[0].parse().map_err(|_| bad())?,
        a: parts[1].parse().map_err(|_| bad())?,
        b: parts[2].parse().map_err(|_| bad())?,
    })
}

fn synth_cmd(a: &SynthArgs) -> anyhow::Result<()> {
    let spec = synth::default_labels();
    let cfg = match &a.config {
        Some(path) => load_json::<SceneConfig>(path)?,
        None => SceneConfig::random(a.seed),
    };
    let knobs = PerturbationSpec {
        erosion: a.erosion,
        id_swap: a.swap.as_deref().map(parse_swap).transpose()?,
        drop: a.drop.clone(),
        depth_factor: a.depth_factor,
        center_jitter: a.jitter,
        seed: a.seed,
    };
    let scene = generate_scene(&cfg, &spec)?;
    let pred = perturb(&scene.gt, &spec, &knobs)?;
    let out = &a.out;
    let n = scene.gt.len();

    let mut gt_frames = Vec::with_capacity(n);
    let mut pred_frames = Vec::with_capacity(n);
    let mut head_frames = Vec::with_capacity(n);
    for t in 0..n {
        let index = t as u64;
        let gt = &scene.gt.frames()[t];
        let pf = &pred.frames()[t];
        let rec = FrameRecord {
            index,
            image: Some(file_name(t, "image", "png")),
            panoptic: Some(file_name(t, "gt_panoptic", "png")),
            depth: Some(file_name(t, "gt_depth", "png")),
            ..Default::default()
        };
        save_visualization(&out.join(rec.image.as_ref().unwrap()), &gt.panoptic, &spec)?;
        save_panoptic(&out.join(rec.panoptic.as_ref().unwrap()), &gt.panoptic)?;
        save_depth(&out.join(rec.depth.as_ref().unwrap()), gt.depth.as_ref().expect("synthetic depth"))?;
        gt_frames.push(rec);

        let pred_depth = file_name(t, "pred_depth", "png");
        save_depth(&out.join(&pred_depth), pf.depth.as_ref().expect("synthetic depth"))?;
        let rec = FrameRecord {
            index,
            panoptic: Some(file_name(t, "pred_panoptic", "png")),
            depth: Some(pred_depth.clone()),
            ..Default::default()
        };
        save_panoptic(&out.join(rec.panoptic.as_ref().unwrap()), &pf.panoptic)?;
        pred_frames.push(rec);

        let heads = &scene.heads[t];
        let rec = FrameRecord {
            index,
            depth: Some(pred_depth),
            semantic: Some(file_name(t, "semantic", "png")),
            heatmap: Some(file_name(t, "heatmap", "dvpr")),
            offsets: Some(file_name(t, "offsets", "dvpr")),
            next_offsets: (t + 1 < n).then(|| file_name(t, "next_offsets", "dvpr")),
            ..Default::default()
        };
        save_semantic(&out.join(rec.semantic.as_ref().unwrap()), &heads.semantic)?;
        save_float_raster(&out.join(rec.heatmap.as_ref().unwrap()), &heads.heatmap.to_raster())?;
        save_float_raster(&out.join(rec.offsets.as_ref().unwrap()), &heads.offsets.to_raster())?;
        if let Some(p) = &rec.next_offsets {
            save_float_raster(&out.join(p), &scene.pair_offsets[t].to_raster())?;
        }
        head_frames.push(rec);
    }
    let id = scene.gt.id().to_string();
    let preset = (n >= 4).then_some(Preset::Cityscapes);
    let manifest = |frames| SequenceManifest {
        sequence_id: id.clone(),
        preset,
        labels: Some(spec.clone()),
        frames,
    };
    save_json(&out.join("gt.json"), &manifest(gt_frames))?;
    save_json(&out.join("pred.json"), &manifest(pred_frames))?;
    save_json(&out.join("heads.json"), &manifest(head_frames))?;
    save_json(&out.join("scene.json"), &cfg)?;
    save_json(&out.join("perturbation.json"), &knobs)?;
    save_json(&out.join("labels.json"), &spec)?;
    Ok(())
}
