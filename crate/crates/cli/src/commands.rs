use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use imore::dataset::{generate_dataset, load_motions, motion_path, DatasetManifest, QAExample, Split};
use imore::diff::{GradCheckConfig, Graph, Scalar};
use imore::model::{ImoreModel, LevelId, MemoryTrace, ModelConfig, RunScore};
use imore::motion::{generate_sequence, write_motion, MotionSequence, SynthConfig};
use imore::oracle::{execute_traced, ExecTrace};
use imore::train::{
    build_model, curve_csv, evaluate, majority_baseline, run_ablation, train_with, AblationVariant, EvalOptions,
    EvalReport, InferenceMode, Precision, ProgramSource, TrainConfig,
};
use imore::vocab::ConceptVocabulary;
use serde::Serialize;

use crate::config::RunConfig;
use crate::{Coded, EXIT_CONFIG, EXIT_IO, EXIT_VALIDATION};

fn require_dataset(dir: &Path) -> anyhow::Result<()> {
    for f in ["manifest.json", "dataset.jsonl"] {
        if !dir.join(f).is_file() {
            bail!(Coded::new(EXIT_IO, format!("{} is not a dataset directory (missing {f})", dir.display())));
        }
    }
    Ok(())
}

fn require_file(path: &Path) -> anyhow::Result<()> {
    if !path.is_file() {
        bail!(Coded::new(EXIT_IO, format!("{} does not exist", path.display())));
    }
    Ok(())
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Coded::new(EXIT_IO, format!("cannot create {}: {e}", dir.display())))?;
    Ok(())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn to_json<S: Serialize>(value: &S) -> String {
    serde_json::to_string_pretty(value).expect("value serializes")
}

fn load_dataset(dir: &Path) -> anyhow::Result<(DatasetManifest, HashMap<String, MotionSequence>)> {
    require_dataset(dir)?;
    let manifest = DatasetManifest::read(dir)?;
    let motions = load_motions(dir, &manifest)?;
    Ok((manifest, motions))
}

/// Seed of the `index`-th motion of a dataset generated with `seed`.
fn motion_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Synthesizes `count` motions with ids `m00000..`, split over `workers` threads.
pub fn synthesize(synth: &SynthConfig, count: usize, seed: u64, workers: usize) -> anyhow::Result<Vec<MotionSequence>> {
    let workers = workers.clamp(1, count.max(1));
    let chunk = count.div_ceil(workers).max(1);
    let make = |i: usize| -> anyhow::Result<MotionSequence> {
        let mut m = generate_sequence(motion_seed(seed, i), synth)?;
        m.id = format!("m{i:05}");
        Ok(m)
    };
    let parts: Vec<anyhow::Result<Vec<MotionSequence>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..count)
            .step_by(chunk)
            .map(|lo| s.spawn(move || (lo..(lo + chunk).min(count)).map(make).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("generation thread panicked")).collect()
    });
    let mut out = Vec::with_capacity(count);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn gen(config: Option<&Path>, seed: Option<u64>, out: &Path, workers: usize) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(config)?;
    let seed = cfg.resolve_seed(seed)?;
    cfg.seed = Some(seed);
    if cfg.motions == 0 {
        bail!(Coded::new(EXIT_CONFIG, "motions must be positive"));
    }
    create_dir(&out.join("motions"))?;
    let motions = synthesize(&cfg.synth, cfg.motions, seed, workers)?;
    let manifest = generate_dataset(&motions, seed, &cfg.dataset)?;
    for m in &motions {
        write_motion(&motion_path(out, &m.id), m)?;
    }
    manifest.write(out)?;
    write(&out.join("run_config.toml"), toml::to_string(&cfg).context("serializing config")?)?;
    let counts: Vec<String> = manifest.meta.split_counts.iter().map(|(s, n)| format!("{s} {n}")).collect();
    println!("generated {} motions, {} questions ({})", motions.len(), manifest.examples.len(), counts.join(", "));
    println!("dataset config hash {}", manifest.meta.config_hash);
    Ok(())
}

pub fn oracle(data: &Path) -> anyhow::Result<()> {
    let (manifest, motions) = load_dataset(data)?;
    let violations = manifest.violations(&motions);
    for v in violations.iter().take(20) {
        eprintln!("{v}");
    }
    if !violations.is_empty() {
        bail!(Coded::new(EXIT_VALIDATION, format!("{} of {} examples failed", violations.len(), manifest.examples.len())));
    }
    println!("all {} examples match the symbolic oracle", manifest.examples.len());
    Ok(())
}

fn train_typed<T: Scalar>(
    manifest: &DatasetManifest,
    motions: &HashMap<String, MotionSequence>,
    cfg: &TrainConfig,
    out_ckpt: &Path,
) -> anyhow::Result<()> {
    let dump_dir = out_ckpt.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let outcome = train_with::<T>(manifest, motions, cfg, Some(dump_dir), |e| {
        let val = e.val_accuracy.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        println!("epoch {:>3} loss {:.4} train {:.4} val {val}", e.epoch, e.train_loss, e.train_accuracy);
    })?;
    let extra = serde_json::json!({
        "train": cfg,
        "train_config_hash": cfg.hash(),
        "dataset_config_hash": manifest.meta.config_hash,
        "dataset_seed": manifest.meta.seed,
        "best_epoch": outcome.best_epoch,
        "best_val": outcome.best_val,
    });
    outcome.model.save(out_ckpt, extra)?;
    write(&curve_path(out_ckpt), curve_csv(&outcome.curve))?;
    println!("best epoch {} written to {}", outcome.best_epoch, out_ckpt.display());
    Ok(())
}

pub fn curve_path(ckpt: &Path) -> PathBuf {
    let mut name = ckpt.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".curve.csv");
    ckpt.with_file_name(name)
}

pub fn train(data: &Path, config: Option<&Path>, out_ckpt: &Path, seed: Option<u64>) -> anyhow::Result<()> {
    let run = RunConfig::load(config)?;
    let mut cfg = run.train_config()?;
    cfg.seed = match seed.or(run.seed) {
        Some(s) => s,
        None if run.train.contains_key("seed") => cfg.seed,
        None => run.resolve_seed(None)?,
    };
    cfg.validate().map_err(|e| Coded::new(EXIT_CONFIG, e.to_string()))?;
    require_dataset(data)?;
    if let Some(parent) = out_ckpt.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let (manifest, motions) = load_dataset(data)?;
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(&manifest, &motions, &cfg, out_ckpt),
        Precision::F64 => train_typed::<f64>(&manifest, &motions, &cfg, out_ckpt),
    }
}

/// A checkpoint loaded at the precision it was trained in.
enum Loaded {
    F32(ImoreModel<f32>),
    F64(ImoreModel<f64>),
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Loaded> {
    require_file(path)?;
    let (model, meta) = ImoreModel::<f32>::load(path).with_context(|| format!("loading {}", path.display()))?;
    let f64_trained = meta.extra.get("train").and_then(|t| t.get("precision")).and_then(|p| p.as_str()) == Some("f64");
    if f64_trained {
        let (model, _) = ImoreModel::<f64>::load(path)?;
        Ok(Loaded::F64(model))
    } else {
        Ok(Loaded::F32(model))
    }
}

pub struct EvalArgs {
    pub split: Split,
    pub mode: InferenceMode,
    pub programs: ProgramSource,
    pub runs: usize,
    pub run_score: RunScore,
    pub seed: Option<u64>,
    pub workers: usize,
}

fn write_report(dir: &Path, stem: &str, report: &EvalReport) -> anyhow::Result<()> {
    write(&dir.join(format!("{stem}.json")), to_json(report))?;
    write(&dir.join(format!("{stem}.txt")), report.to_text())?;
    write(&dir.join(format!("{stem}.tsv")), report.to_table())
}

pub fn eval(ckpt: &Path, data: &Path, report_dir: &Path, args: EvalArgs) -> anyhow::Result<()> {
    require_file(ckpt)?;
    require_dataset(data)?;
    if args.runs == 0 {
        bail!(Coded::new(EXIT_CONFIG, "--runs must be positive"));
    }
    create_dir(report_dir)?;
    let seed = RunConfig::default().resolve_seed(args.seed)?;
    let opts = EvalOptions {
        split: args.split,
        mode: args.mode,
        runs: args.runs,
        run_score: args.run_score,
        programs: args.programs,
        seed,
        workers: args.workers.max(1),
    };
    let (manifest, motions) = load_dataset(data)?;
    let report = match load_checkpoint(ckpt)? {
        Loaded::F32(m) => evaluate(&m, &manifest, &motions, &opts)?,
        Loaded::F64(m) => evaluate(&m, &manifest, &motions, &opts)?,
    };
    let majority = majority_baseline(&manifest, &opts)?;
    write_report(report_dir, "report", &report)?;
    write_report(report_dir, "majority", &majority)?;
    print!("{}", report.to_table());
    println!("accuracy {:.4} ({}/{}), majority baseline {:.4}", report.accuracy, report.correct, report.total, majority.accuracy);
    Ok(())
}

/// Read mass of every step attributed to annotated segments, by frame overlap.
#[derive(Debug, Clone, Serialize)]
struct TraceExport {
    example_id: String,
    question: String,
    program: String,
    answer: String,
    predicted: String,
    levels: Vec<LevelId>,
    /// Step labels, one per row of the matrices below.
    steps: Vec<String>,
    /// Steps x levels: read mass per pool level.
    level_selection: Vec<Vec<f64>>,
    /// Segment labels, one per column of `concept_localization`.
    segments: Vec<String>,
    /// Steps x segments: read mass landing on each annotated segment.
    concept_localization: Vec<Vec<f64>>,
    memory: MemoryTrace,
    oracle: ExecTrace,
}

fn trace_typed<T: Scalar>(model: &ImoreModel<T>, example: &QAExample, motion: &MotionSequence) -> anyhow::Result<TraceExport> {
    let windows = model.mode_i_windows(motion)?;
    let mut g = Graph::<T>::new();
    let fwd = model.forward(&mut g, &windows, &example.question, &example.program)?;
    let logits: Vec<f64> = g.value(fwd.logits).data().iter().map(|x| x.to_f64c()).collect();
    let best = (0..logits.len()).fold(0, |b, i| if logits[i] > logits[b] { i } else { b });
    let predicted = model.answers.labels(example.question_type)[best].clone();
    let memory = fwd.trace(&g, &example.program);
    let (_, oracle) = execute_traced(motion, &example.program);

    let (patch, np) = (model.config.patch, model.config.patches_per_window());
    let per_window = model.config.tokens_per_window();
    let t = motion.num_frames();
    let segment_of = |frame: usize| motion.segments.iter().position(|s| (s.start_frame..s.end_frame).contains(&(frame % t)));
    let localize = |weights: &[f64]| {
        let mut mass = vec![0.0; motion.segments.len()];
        for (p, w) in weights.iter().enumerate() {
            let (win, local) = (p / per_window, p % per_window);
            let first = windows[win].start + (local % np) * patch;
            for f in first..first + patch {
                if let Some(s) = segment_of(f) {
                    mass[s] += w / patch as f64;
                }
            }
        }
        mass
    };
    let concept_localization = memory
        .steps
        .iter()
        .map(|s| {
            let mut total = vec![0.0; motion.segments.len()];
            for level in &s.position_weights {
                for (acc, m) in total.iter_mut().zip(localize(level)) {
                    *acc += m;
                }
            }
            total
        })
        .collect();
    Ok(TraceExport {
        example_id: example.id.clone(),
        question: example.question.clone(),
        program: example.program.to_text(),
        answer: example.answer.label.clone(),
        predicted,
        levels: memory.levels.clone(),
        steps: memory
            .steps
            .iter()
            .map(|s| match &s.concept {
                Some(c) => format!("{}({c})", s.func),
                None => s.func.clone(),
            })
            .collect(),
        level_selection: memory.steps.iter().map(|s| s.level_weights.clone()).collect(),
        segments: motion
            .segments
            .iter()
            .map(|s| format!("{}[{}..{})", s.action.label, s.start_frame, s.end_frame))
            .collect(),
        concept_localization,
        memory,
        oracle,
    })
}

fn trace_text(t: &TraceExport) -> String {
    let mut out = String::new();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    writeln!(out, "example {}: {}", t.example_id, t.question).ok();
    writeln!(out, "program: {}", t.program).ok();
    writeln!(out, "answer: {}  predicted: {}", t.answer, t.predicted).ok();
    let levels: Vec<String> = t.levels.iter().map(|l| l.to_string()).collect();
    writeln!(out, "\nlevel selection (rows steps, columns {})", levels.join(" ")).ok();
    for (s, row) in t.steps.iter().zip(&t.level_selection) {
        writeln!(out, "  {s}: {}", fmt(row)).ok();
    }
    writeln!(out, "\nconcept localization (rows steps, columns {})", t.segments.join(" ")).ok();
    for (s, row) in t.steps.iter().zip(&t.concept_localization) {
        writeln!(out, "  {s}: {}", fmt(row)).ok();
    }
    writeln!(out, "\nsymbolic execution:").ok();
    for s in &t.oracle.steps {
        writeln!(out, "  step {} {} -> {:?}", s.step, s.func.name(), s.output).ok();
    }
    writeln!(out, "\n{}", t.memory.to_text()).ok();
    out
}

pub fn trace(ckpt: &Path, data: &Path, example_id: &str, out: &Path) -> anyhow::Result<()> {
    require_file(ckpt)?;
    require_dataset(data)?;
    create_dir(out)?;
    let manifest = DatasetManifest::read(data)?;
    let example = manifest
        .examples
        .iter()
        .find(|e| e.id == example_id)
        .ok_or_else(|| Coded::new(EXIT_VALIDATION, format!("no example `{example_id}` in {}", data.display())))?;
    let motion = imore::motion::read_motion(&motion_path(data, &example.motion_id))?;
    let export = match load_checkpoint(ckpt)? {
        Loaded::F32(m) => trace_typed(&m, example, &motion)?,
        Loaded::F64(m) => trace_typed(&m, example, &motion)?,
    };
    write(&out.join("trace.json"), to_json(&export))?;
    let text = trace_text(&export);
    write(&out.join("trace.txt"), &text)?;
    print!("{text}");
    Ok(())
}

/// Model sizes for the gradient check, parsed from `key=value` pairs.
fn parse_dims(spec: &str) -> anyhow::Result<ModelConfig> {
    let mut cfg = ModelConfig { d: 16, blocks: 2, heads: 2, window: 64, patch: 8, dropout: 0.0, ..ModelConfig::default() };
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Coded::new(EXIT_CONFIG, format!("bad dims entry `{part}` (expected key=value)")))?;
        let v: usize = v.parse().map_err(|_| Coded::new(EXIT_CONFIG, format!("bad value in `{part}`")))?;
        match k {
            "d" => cfg.d = v,
            "blocks" => cfg.blocks = v,
            "heads" => cfg.heads = v,
            "window" => cfg.window = v,
            "patch" => cfg.patch = v,
            _ => bail!(Coded::new(EXIT_CONFIG, format!("unknown dims key `{k}` (expected d, blocks, heads, window, patch)"))),
        }
    }
    cfg.levels = vec![LevelId::Block(0), LevelId::Block(cfg.blocks.min(1)), LevelId::Final];
    cfg.levels.dedup();
    cfg.validate().map_err(|e| Coded::new(EXIT_CONFIG, e.to_string()))?;
    Ok(cfg)
}

pub fn gradcheck(dims: &str, seed: Option<u64>, samples: usize, tol: f64) -> anyhow::Result<()> {
    let model_cfg = parse_dims(dims)?;
    let seed = RunConfig::default().resolve_seed(seed)?;
    let frames = model_cfg.window.div_ceil(4).max(2);
    let synth = SynthConfig {
        segments_per_seq: 4,
        min_segment_frames: frames,
        max_segment_frames: frames,
        vocab: ConceptVocabulary::compact(),
        ..SynthConfig::default()
    };
    let motions = synthesize(&synth, 16, seed, 1)?;
    let manifest = generate_dataset(&motions, seed, &imore::dataset::GenConfig { per_type_quota: 12, ..Default::default() })?;
    let cfg = TrainConfig { seed, model: model_cfg, ..TrainConfig::default() };
    let model = build_model::<f64>(&manifest, &cfg)?;
    let example = manifest
        .split(Split::Train)
        .filter(|e| e.program.len() <= 4)
        .max_by_key(|e| e.program.len())
        .ok_or_else(|| Coded::new(EXIT_VALIDATION, "no training example with at most 4 steps"))?;
    let motion = motions.iter().find(|m| m.id == example.motion_id).expect("motion of example");
    let windows = model.mode_i_windows(motion)?;
    let check = GradCheckConfig { tol, samples_per_tensor: samples, seed, ..GradCheckConfig::default() };
    let report = model.grad_check(&windows, &example.question, &example.program, &example.answer.label, check)?;
    println!("program: {} ({} steps), pool levels {}", example.program.to_text(), example.program.len(), model.config.pool_levels().len());
    for t in &report.tensors {
        println!(
            "{:<28} checked {:>3} max_rel_err {:.3e} {}",
            t.name,
            t.checked,
            t.max_rel_err,
            if t.max_rel_err < tol { "ok" } else { "FAIL" }
        );
    }
    println!("max relative error {:.3e} over {} tensors (tol {tol:e})", report.max_rel_err(), report.tensors.len());
    if !report.passed() {
        bail!(Coded::new(EXIT_VALIDATION, format!("gradient check failed: {}", report.failing().join(", "))));
    }
    println!("PASS");
    Ok(())
}

pub fn ablate(
    data: &Path,
    seeds: &[u64],
    config: Option<&Path>,
    variants: &[String],
    out: Option<&Path>,
    workers: usize,
) -> anyhow::Result<()> {
    let run = RunConfig::load(config)?;
    let base = run.train_config()?;
    if seeds.len() < 3 {
        bail!(Coded::new(EXIT_CONFIG, format!("ablations need at least 3 seeds, got {}", seeds.len())));
    }
    let variants: Vec<AblationVariant> = if variants.is_empty() {
        AblationVariant::ALL.to_vec()
    } else {
        variants
            .iter()
            .map(|v| {
                AblationVariant::from_name(v)
                    .ok_or_else(|| Coded::new(EXIT_CONFIG, format!("unknown variant `{v}`")).into())
            })
            .collect::<anyhow::Result<_>>()?
    };
    require_dataset(data)?;
    if let Some(dir) = out {
        create_dir(dir)?;
    }
    let (manifest, motions) = load_dataset(data)?;
    let eval = EvalOptions {
        split: run.eval.split,
        mode: run.eval.mode,
        runs: run.eval.runs,
        run_score: run.eval.run_score,
        programs: run.eval.programs,
        seed: run.resolve_seed(None)?,
        workers: workers.max(1),
    };
    let on_run = |v: AblationVariant, s: u64, r: &EvalReport| println!("{} seed {s}: {:.4}", v.name(), r.accuracy);
    let table = match base.precision {
        Precision::F32 => run_ablation::<f32>(&manifest, &motions, &base, seeds, &variants, &eval, on_run)?,
        Precision::F64 => run_ablation::<f64>(&manifest, &motions, &base, seeds, &variants, &eval, on_run)?,
    };
    let text = table.to_table();
    print!("{text}");
    if let Some(dir) = out {
        write(&dir.join("ablation.tsv"), &text)?;
        write(&dir.join("ablation.json"), to_json(&table))?;
    }
    Ok(())
}
