//! `hopose`: batch front end for the synthetic generator, pseudo-label
//! filter, camera fitting, PnP, evaluation, gradient checks and losses.
//!
//! Exit status: 0 success, 1 usage error, 2 data error, 3 numerical
//! failure.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hopose::attention::{gradcheck, Checkpoint, ContextReasoning, FeatureMap, QueryMode};
use hopose::filter::{filter_corpus, spatial_check, FilterConfig, FilterSummary, SequenceRecord};
use hopose::geometry::{fit_weak_camera, weak_residual, PerspectiveCamera};
use hopose::hand::HandTemplate;
use hopose::io::{
    ground_truth_sequence, parse_filter_config, read_jsonl, read_sequence, set_filter_key, write_jsonl, write_sequence, DecisionLine,
    FrameLine, LabelLine, PoseDocument,
};
use hopose::metrics::evaluate;
use hopose::object::ObjectModel;
use hopose::synth::{generate_corpus, NoiseConfig, SynthConfig};
use hopose::Vec2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

mod losses;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<hopose::Error> for CliError {
    fn from(e: hopose::Error) -> Self {
        match e {
            hopose::Error::DegenerateConfiguration(_) | hopose::Error::NotConverged { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Parser)]
#[command(name = "hopose", version, about = "Hand-object pose toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic frame files, clean ground truth and corruption labels.
    Generate(GenerateArgs),
    /// Select pseudo-labels from frame files.
    Filter(FilterArgs),
    /// Fit the weak-perspective camera of every frame.
    FitCamera(FitCameraArgs),
    /// Recover an object pose from 21 control-point detections.
    SolvePnp(SolvePnpArgs),
    /// Compare predicted and ground-truth frame files.
    Eval(EvalArgs),
    /// Check the attention backward pass against finite differences.
    Gradcheck(GradcheckArgs),
    /// Evaluate the training losses on a fixture.
    Losses(LossesArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Hand template JSON; the embedded template when absent.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    sequences: usize,
    #[arg(long, default_value_t = 100)]
    frames: usize,
    #[arg(long, default_value_t = 5)]
    keyframes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Total corruption rate, split evenly over the five modes.
    #[arg(long, default_value_t = 0.0)]
    corruption_rate: f64,
}

#[derive(Args)]
struct FilterArgs {
    /// Hand template JSON; the embedded template when absent.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Frame files, one sequence each.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// key = value threshold file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Threshold override `key=value`, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Decision JSON-lines output.
    #[arg(long)]
    out: PathBuf,
    /// Summary report JSON output.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct FitCameraArgs {
    /// Hand template JSON; the embedded template when absent.
    #[arg(long)]
    template: Option<PathBuf>,
    input: PathBuf,
    /// JSON-lines output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolvePnpArgs {
    /// JSON document `{"points2d": [[x, y] x 21], "camera": {"fx", "fy", "cx", "cy"}}`.
    #[arg(long)]
    points: PathBuf,
    /// Object model JSON.
    #[arg(long)]
    object: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted frame files; repeat for several sequences.
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    /// Ground-truth frame files, paired with `--pred` in order.
    #[arg(long, required = true)]
    gt: Vec<PathBuf>,
    /// Restrict to frames accepted in this decision file.
    #[arg(long)]
    decisions: Option<PathBuf>,
    /// Report JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Named-tensor checkpoint; a seeded random module when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "h+o+")]
    mode: QueryMode,
    #[arg(long, default_value_t = 8)]
    channels: usize,
    #[arg(long, default_value_t = 4)]
    height: usize,
    #[arg(long, default_value_t = 4)]
    width: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Write the module that was checked as a checkpoint.
    #[arg(long)]
    save_checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct LossesArgs {
    fixture: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Filter(a) => filter(a),
        Command::FitCamera(a) => fit_camera(a),
        Command::SolvePnp(a) => solve_pnp(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Losses(a) => losses::run(&a.fixture),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn load_template(path: Option<&Path>) -> CliResult<HandTemplate> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            HandTemplate::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
        }
        None => Ok(HandTemplate::embedded()),
    }
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(io_err(path))?))
}

fn read_frames(path: &Path) -> CliResult<SequenceRecord> {
    read_sequence(open(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Data(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn generate(a: GenerateArgs) -> CliResult<()> {
    let cfg = SynthConfig {
        n_frames: a.frames,
        keyframe_count: a.keyframes,
        noise: NoiseConfig::uniform(a.corruption_rate),
        seed: a.seed,
        ..Default::default()
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let template = load_template(a.template.as_deref())?;
    let corpus = generate_corpus(&cfg, &template, a.sequences)?;
    let cam = cfg.camera()?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;

    let mut labels = Vec::new();
    for (i, s) in corpus.iter().enumerate() {
        let frames_path = a.out.join(format!("seq_{i:04}.jsonl"));
        let mut w = create(&frames_path)?;
        write_sequence(&mut w, &s.sequence).and_then(|_| w.flush()).map_err(io_err(&frames_path))?;
        let gt_path = a.out.join(format!("seq_{i:04}.gt.jsonl"));
        let mut w = create(&gt_path)?;
        write_sequence(&mut w, &ground_truth_sequence(s, &cam)?).and_then(|_| w.flush()).map_err(io_err(&gt_path))?;
        for (f, l) in s.sequence.frames().iter().zip(&s.labels) {
            labels.push(LabelLine { sequence_id: s.sequence.sequence_id.clone(), frame_index: f.frame_index, corruption: *l });
        }
    }
    let labels_path = a.out.join("labels.jsonl");
    let mut w = create(&labels_path)?;
    write_jsonl(&mut w, &labels).and_then(|_| w.flush()).map_err(io_err(&labels_path))?;
    write_json(&a.out.join("synth_config.json"), &cfg)?;
    let corrupted = labels.iter().filter(|l| l.corruption.is_some()).count();
    println!("wrote {} sequences, {} frames ({corrupted} corrupted) to {}", corpus.len(), labels.len(), a.out.display());
    Ok(())
}

fn filter_config(config: Option<&Path>, overrides: &[String]) -> CliResult<FilterConfig> {
    let mut cfg = match config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            parse_filter_config(&text, FilterConfig::default()).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => FilterConfig::default(),
    };
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| CliError::Usage(format!("override `{o}` is not key=value")))?;
        let v: f64 = v.trim().parse().map_err(|e| CliError::Usage(format!("override `{o}`: {e}")))?;
        set_filter_key(&mut cfg, k.trim(), v).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

#[derive(Serialize)]
struct FilterReport<'a> {
    config: &'a FilterConfig,
    summary: &'a FilterSummary,
}

fn filter(a: FilterArgs) -> CliResult<()> {
    let cfg = filter_config(a.config.as_deref(), &a.overrides)?;
    let template = load_template(a.template.as_deref())?;
    let seqs = a.inputs.iter().map(|p| read_frames(p)).collect::<CliResult<Vec<_>>>()?;
    let decisions = filter_corpus(&seqs, &template, &cfg)?;

    let mut summary = FilterSummary::default();
    let mut lines = Vec::new();
    for (s, d) in seqs.iter().zip(&decisions) {
        summary.add_sequence(d);
        lines.extend(d.iter().map(|d| DecisionLine { sequence_id: s.sequence_id.clone(), decision: d.clone() }));
    }
    let mut w = create(&a.out)?;
    write_jsonl(&mut w, &lines).and_then(|_| w.flush()).map_err(io_err(&a.out))?;
    if let Some(p) = &a.summary {
        write_json(p, &FilterReport { config: &cfg, summary: &summary })?;
    }
    print!("{}", summary.to_table());
    Ok(())
}

#[derive(Serialize)]
struct CameraLine {
    sequence_id: String,
    frame_index: u64,
    scale: Option<f64>,
    translation: Option<[f64; 2]>,
    /// Root-mean-square joint reprojection distance in px.
    rms_px: Option<f64>,
    iou: Option<f64>,
    error: Option<String>,
}

fn fit_camera(a: FitCameraArgs) -> CliResult<()> {
    let seq = read_frames(&a.input)?;
    let template = load_template(a.template.as_deref())?;
    let cfg = FilterConfig::default();
    let mut lines = Vec::new();
    for f in seq.frames() {
        let p = &f.prediction;
        let mut line = CameraLine {
            sequence_id: seq.sequence_id.clone(),
            frame_index: f.frame_index,
            scale: None,
            translation: None,
            rms_px: None,
            iou: None,
            error: None,
        };
        match fit_weak_camera(&p.j3d, &p.j2d) {
            Ok(cam) => {
                line.scale = Some(cam.scale());
                line.translation = Some([cam.translation().x, cam.translation().y]);
                line.rms_px = Some((weak_residual(&cam, &p.j3d, &p.j2d) / p.j2d.len() as f64).sqrt());
                if p.vertices.len() == template.vertex_count() {
                    line.iou = spatial_check(f, &template, &cfg)?.iou;
                }
            }
            Err(e @ hopose::Error::DegenerateConfiguration(_)) => line.error = Some(e.to_string()),
            Err(e) => return Err(e.into()),
        }
        lines.push(line);
    }
    match &a.out {
        Some(path) => {
            let mut w = create(path)?;
            write_jsonl(&mut w, &lines).and_then(|_| w.flush()).map_err(io_err(path))
        }
        None => match write_jsonl(std::io::stdout().lock(), &lines) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Data(e.to_string())),
            _ => Ok(()),
        },
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PointsDocument {
    points2d: Vec<[f64; 2]>,
    camera: PerspectiveCamera,
}

#[derive(Serialize)]
struct PnpReport {
    pose: PoseDocument,
    residual_px2: f64,
    iterations: usize,
}

fn solve_pnp(a: SolvePnpArgs) -> CliResult<()> {
    let text = fs::read_to_string(&a.points).map_err(io_err(&a.points))?;
    let doc: PointsDocument = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", a.points.display())))?;
    doc.camera.validate()?;
    let model_text = fs::read_to_string(&a.object).map_err(io_err(&a.object))?;
    let model = ObjectModel::from_json(&model_text).map_err(|e| CliError::Data(format!("{}: {e}", a.object.display())))?;
    let pts: Vec<Vec2> = doc.points2d.iter().map(|p| Vec2::from(*p)).collect();
    if pts.len() != model.control_points().len() {
        return Err(CliError::Data(format!("expected {} points, got {}", model.control_points().len(), pts.len())));
    }
    let sol = hopose::geometry::solve_pnp_detailed(model.control_points(), &pts, &doc.camera, None)?;
    let report = PnpReport { pose: PoseDocument::from_pose(&sol.pose), residual_px2: sol.residual, iterations: sol.iterations };
    match &a.out {
        Some(p) => write_json(p, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report).map_err(|e| CliError::Data(e.to_string()))?);
            Ok(())
        }
    }
}

fn eval(a: EvalArgs) -> CliResult<()> {
    if a.pred.len() != a.gt.len() {
        return Err(CliError::Usage(format!("{} --pred files but {} --gt files", a.pred.len(), a.gt.len())));
    }
    let accepted: Option<BTreeSet<(String, u64)>> = match &a.decisions {
        Some(p) => {
            let lines: Vec<DecisionLine> = read_jsonl(open(p)?).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            Some(lines.into_iter().filter(|l| l.decision.accepted).map(|l| (l.sequence_id, l.decision.frame_index)).collect())
        }
        None => None,
    };
    let mut p_out = Vec::new();
    let mut g_out = Vec::new();
    for (pp, gp) in a.pred.iter().zip(&a.gt) {
        let pred = read_frames(pp)?;
        let gt: BTreeMap<u64, FrameLine> = read_frames(gp)?.frames().iter().map(|f| (f.frame_index, FrameLine::from_record(f))).collect();
        for f in pred.frames() {
            if let Some(acc) = &accepted {
                if !acc.contains(&(pred.sequence_id.clone(), f.frame_index)) {
                    continue;
                }
            }
            let g =
                gt.get(&f.frame_index).ok_or_else(|| CliError::Data(format!("frame {} missing from {}", f.frame_index, gp.display())))?;
            p_out.push(FrameLine::from_record(f).hand_output());
            g_out.push(g.hand_output());
        }
    }
    let report = evaluate(&p_out, &g_out)?;
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    print!("{}", report.to_table());
    Ok(())
}

fn random_map(h: usize, w: usize, c: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
    FeatureMap::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0))
}

#[derive(Serialize)]
struct GradcheckOutput {
    mode: QueryMode,
    shape: [usize; 3],
    coordinates: usize,
    max_rel_error: f64,
    worst_coordinate: String,
    worst_analytic: f64,
    worst_numeric: f64,
    kink_retries: usize,
    tolerance: f64,
    passed: bool,
}

fn run_gradcheck(a: GradcheckArgs) -> CliResult<()> {
    if a.height == 0 || a.width == 0 {
        return Err(CliError::Usage("height and width must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let module = match &a.checkpoint {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            Checkpoint::from_json(&text)?.to_module()?
        }
        None => {
            if a.channels == 0 {
                return Err(CliError::Usage("channels must be positive".into()));
            }
            ContextReasoning::random(a.mode, a.channels, &mut rng)
        }
    };
    let c = module.hand_block().or(module.object_block()).map_or(0, |b| b.channels());
    let (h, w) = (a.height, a.width);
    let hand = random_map(h, w, c, &mut rng);
    let object = random_map(h, w, c, &mut rng);
    let inter = random_map(h, w, c, &mut rng);
    let up_h = random_map(h, w, c, &mut rng);
    let up_o = random_map(h, w, c, &mut rng);
    if let Some(p) = &a.save_checkpoint {
        let mut wr = create(p)?;
        wr.write_all(Checkpoint::from_module(&module).to_json().as_bytes()).and_then(|_| wr.flush()).map_err(io_err(p))?;
    }
    let r = gradcheck(&module, &hand, &object, &inter, &up_h, &up_o)?;
    let out = GradcheckOutput {
        mode: r.mode,
        shape: [h, w, c],
        coordinates: r.coordinates,
        max_rel_error: r.max_rel_error,
        worst_coordinate: r.worst_coordinate.clone(),
        worst_analytic: r.worst_analytic,
        worst_numeric: r.worst_numeric,
        kink_retries: r.kink_retries,
        tolerance: a.tolerance,
        passed: r.max_rel_error < a.tolerance,
    };
    println!("{}", serde_json::to_string_pretty(&out).map_err(|e| CliError::Data(e.to_string()))?);
    if !out.passed {
        return Err(CliError::Numerical(format!("max relative error {:.3e} exceeds {:.1e}", r.max_rel_error, a.tolerance)));
    }
    Ok(())
}
