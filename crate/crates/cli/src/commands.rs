use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use groundkit::dataset::{
    extract_entity_pairs, video_multilabels, ExtractConfig, PluralNormalizer,
};
use groundkit::grounding::{
    build_examples, grounding_accuracy, predict_for_gold, random_baseline, train_mil, train_recon,
    upper_bound, GroundingConfig, GroundingModel,
};
use groundkit::ingest::{
    parse_ctm, parse_embeddings, parse_vocabulary, read_frame_vectors, read_gold, read_pairs,
    read_proposal_frames, write_embeddings, write_frame_vectors, write_gold, write_pairs,
    write_proposal_frames, EmbeddingTable, FrameVector,
};
use groundkit::recognition::{
    average_precision_at_k, map_at_k, rank_frames, top_k_accuracy, train_classifier,
    ClassifierModel, Mode, RecognitionConfig,
};
use groundkit::report::Table;
use groundkit::synth::{gen_classification_corpus, gen_grounding_corpus, SynthSpec};
use groundkit::tensorcore::{Checkpoint, Rng};
use groundkit::verify::{gradcheck_task, GradTask};
use serde_json::json;

use crate::manifest::{beside, RunManifest};
use crate::{
    CliError, EvalArgs, EvalTask, ExtractArgs, GradcheckArgs, SynthArgs, SynthKind, TrainArgs,
    TrainTask,
};

type CliResult<T> = Result<T, CliError>;

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Run a reader over `path`, prefixing errors with the file name.
fn load<T>(
    path: &Path,
    read: impl FnOnce(BufReader<File>) -> groundkit::Result<T>,
) -> CliResult<T> {
    read(open(path)?).map_err(|e| {
        let mut err = CliError::from(e);
        err.msg = format!("{}: {}", path.display(), err.msg);
        err
    })
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn save(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<File>) -> groundkit::Result<()>,
) -> CliResult<()> {
    let mut w = create(path)?;
    write(&mut w)?;
    w.flush()
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    save(path, |w| w.write_all(text.as_bytes()).map_err(Into::into))
}

pub fn extract(a: ExtractArgs) -> CliResult<()> {
    let start = Instant::now();
    let mut m = RunManifest::new("extract");
    let mut tokens = Vec::new();
    for path in &a.ctm {
        tokens.extend(load(path, parse_ctm)?);
        m.input(path)?;
    }
    let vocab = load(&a.vocab, parse_vocabulary)?;
    m.input(&a.vocab)?;
    let norm = match &a.lexicon {
        Some(p) => {
            m.input(p)?;
            load(p, PluralNormalizer::parse_lexicon)?
        }
        None => PluralNormalizer::new(),
    };
    let cfg = ExtractConfig {
        min_count: a.min_count,
        merge_plural: !a.no_merge_plural,
    };
    let (pairs, summary) = extract_entity_pairs(&tokens, &vocab, &cfg, &norm)?;
    save(&a.out, |w| write_pairs(&pairs, w))?;
    match &a.summary {
        Some(p) => write_text(p, &summary.table())?,
        None => print!("{}", summary.table()),
    }
    m.param("min_count", a.min_count);
    m.param("merge_plural", cfg.merge_plural);
    m.param("out", &a.out);
    m.duration_s = start.elapsed().as_secs_f64();
    m.write(&beside(&a.out, ".manifest.json"))
}

/// One labelled frame vector per pair; frames without a pair are unused.
fn labelled_frames(
    frames: Vec<FrameVector>,
    pairs: &[groundkit::EntityFramePair],
) -> CliResult<Vec<FrameVector>> {
    let by_id: HashMap<&str, &FrameVector> =
        frames.iter().map(|f| (f.frame_id.as_str(), f)).collect();
    pairs
        .iter()
        .map(|p| {
            let f = by_id.get(p.frame_id.as_str()).ok_or_else(|| {
                CliError::from(groundkit::Error::MissingFrame(p.frame_id.clone()))
            })?;
            Ok(FrameVector {
                frame_id: f.frame_id.clone(),
                video_id: p.video_id.clone(),
                entity: Some(p.entity.clone()),
                feature: f.feature.clone(),
            })
        })
        .collect()
}

fn write_trace(out: &Path, trace: &[f64]) -> CliResult<()> {
    let mut text = String::from("epoch\tloss\n");
    for (i, l) in trace.iter().enumerate() {
        text.push_str(&format!("{}\t{l}\n", i + 1));
    }
    write_text(&beside(out, ".loss.tsv"), &text)
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let start = Instant::now();
    let mut m = RunManifest::new("train");
    let pairs = load(&a.pairs, read_pairs)?;
    m.input(&a.features)?;
    m.input(&a.pairs)?;

    let (ckpt, trace, lr) = match a.task {
        TrainTask::ClsSingle | TrainTask::ClsMulti => {
            let mode = if a.task == TrainTask::ClsSingle {
                Mode::Single
            } else {
                Mode::Multi
            };
            let cfg = RecognitionConfig {
                batch_size: a.batch,
                lr: a.lr.unwrap_or(1e-4),
                epochs: a.epochs,
                seed: a.seed,
                hidden_dim: a.hidden_dim.unwrap_or(256),
                dropout: a.dropout.unwrap_or(0.5),
            };
            let frames = labelled_frames(load(&a.features, read_frame_vectors)?, &pairs)?;
            let trained = train_classifier(&frames, &video_multilabels(&pairs), &cfg, mode)?;
            m.param("hidden_dim", cfg.hidden_dim);
            m.param("dropout", cfg.dropout);
            (
                trained.model.to_checkpoint(a.seed, a.epochs),
                trained.loss_trace,
                cfg.lr,
            )
        }
        TrainTask::Mil | TrainTask::Recon => {
            let emb_path = a
                .embeddings
                .as_ref()
                .ok_or_else(|| CliError::input("--embeddings is required for grounding tasks"))?;
            m.input(emb_path)?;
            let embeddings = load(emb_path, parse_embeddings)?;
            let frames = load(&a.features, read_proposal_frames)?;
            let examples = build_examples(&pairs, &frames, &embeddings)?;
            let base = if a.task == TrainTask::Mil {
                GroundingConfig::mil()
            } else {
                GroundingConfig::recon()
            };
            let cfg = GroundingConfig {
                delta: a.delta,
                lr: a.lr.unwrap_or(base.lr),
                epochs: a.epochs,
                batch_size: a.batch,
                seed: a.seed,
                embed_dim: a.embed_dim,
                hidden_dim: a.hidden_dim.unwrap_or(base.hidden_dim),
                dropout: a.dropout.unwrap_or(base.dropout),
                freeze_target: a.freeze_target,
            };
            m.param("delta", cfg.delta);
            m.param("embed_dim", cfg.embed_dim);
            let (model, trace) = if a.task == TrainTask::Mil {
                m.param("hidden_dim", cfg.hidden_dim);
                m.param("dropout", cfg.dropout);
                let t = train_mil(&examples, &cfg)?;
                (GroundingModel::Mil(t.model), t.loss_trace)
            } else {
                m.param("freeze_target", cfg.freeze_target);
                let t = train_recon(&examples, &cfg)?;
                (GroundingModel::Recon(t.model), t.loss_trace)
            };
            (model.to_checkpoint(a.seed, a.epochs), trace, cfg.lr)
        }
    };

    save(&a.out, |w| ckpt.write(w))?;
    write_trace(&a.out, &trace)?;
    let task = match a.task {
        TrainTask::ClsSingle => "cls-single",
        TrainTask::ClsMulti => "cls-multi",
        TrainTask::Mil => "mil",
        TrainTask::Recon => "recon",
    };
    m.param("task", task);
    m.param("epochs", a.epochs);
    m.param("lr", lr);
    m.param("batch", a.batch);
    m.param("out", &a.out);
    m.seed = Some(a.seed);
    m.duration_s = start.elapsed().as_secs_f64();
    m.write(&beside(&a.out, ".manifest.json"))
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    load(path, Checkpoint::read)
}

/// Row labels, disambiguated by file stem when two checkpoints share a name.
fn row_labels(names: &[String], paths: &[PathBuf]) -> Vec<String> {
    names
        .iter()
        .zip(paths)
        .map(|(n, p)| {
            if names.iter().filter(|o| *o == n).count() > 1 {
                format!(
                    "{n} ({})",
                    p.file_stem().unwrap_or_default().to_string_lossy()
                )
            } else {
                n.clone()
            }
        })
        .collect()
}

fn finish_report(
    a: &EvalArgs,
    text: &str,
    metrics: &[serde_json::Value],
    m: &mut RunManifest,
    start: Instant,
) -> CliResult<()> {
    let mut lines = String::new();
    for v in metrics {
        lines.push_str(&serde_json::to_string(v).expect("metrics serialize"));
        lines.push('\n');
    }
    match &a.report {
        Some(path) => {
            write_text(path, text)?;
            write_text(&beside(path, ".jsonl"), &lines)?;
            m.duration_s = start.elapsed().as_secs_f64();
            m.write(&beside(path, ".manifest.json"))?;
        }
        None => {
            print!("{text}");
            print!("{lines}");
        }
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    let start = Instant::now();
    let mut m = RunManifest::new("eval");
    m.input(&a.features)?;
    m.input(&a.gold)?;
    for c in &a.ckpt {
        m.input(c)?;
    }
    m.seed = Some(a.seed);
    let gold = load(&a.gold, read_gold)?;
    match a.task {
        EvalTask::Cls => eval_cls(&a, &gold, &mut m, start),
        EvalTask::Ground => eval_ground(&a, &gold, &mut m, start),
    }
}

fn eval_cls(
    a: &EvalArgs,
    gold: &[groundkit::GoldAnnotation],
    m: &mut RunManifest,
    start: Instant,
) -> CliResult<()> {
    if a.topk.contains(&0) {
        return Err(CliError::input("--topk values must be positive"));
    }
    m.param("task", "cls");
    m.param("topk", &a.topk);
    // Top-k uses the first gold entity of a frame; MAP uses all of them.
    let mut first: HashMap<String, String> = HashMap::new();
    let mut sets: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for g in gold {
        first
            .entry(g.frame_id.clone())
            .or_insert_with(|| g.entity.clone());
        sets.entry(g.frame_id.clone())
            .or_default()
            .insert(g.entity.clone());
    }
    let features = load(&a.features, read_frame_vectors)?;
    let present: HashSet<&str> = features.iter().map(|f| f.frame_id.as_str()).collect();
    if let Some(missing) = sets.keys().find(|id| !present.contains(id.as_str())) {
        return Err(groundkit::Error::MissingFrame(missing.clone()).into());
    }
    let frames: Vec<FrameVector> = features
        .into_iter()
        .filter(|f| sets.contains_key(&f.frame_id))
        .collect();

    let mut models = Vec::new();
    for p in &a.ckpt {
        models.push(ClassifierModel::from_checkpoint(&load_checkpoint(p)?)?);
    }
    let names: Vec<String> = models
        .iter()
        .map(|c| match c.mode {
            Mode::Single => "single-label".to_string(),
            Mode::Multi => "multi-label".to_string(),
        })
        .collect();
    let labels = row_labels(&names, &a.ckpt);

    let cols: Vec<String> = a.topk.iter().map(|k| format!("top-{k}")).collect();
    let map_cols: Vec<String> = a.topk.iter().map(|k| format!("MAP@{k}")).collect();
    let mut acc = Table::new("Top-k accuracy (%)", "model", cols);
    let mut map = Table::new("Mean average precision", "model", map_cols);
    let mut metrics = Vec::new();
    for (model, label) in models.iter().zip(&labels) {
        let ranked = rank_frames(model, &frames)?;
        let mut accs = Vec::new();
        let mut maps = Vec::new();
        for &k in &a.topk {
            let v = top_k_accuracy(&ranked, &first, k)?;
            let aps: Vec<Option<f64>> = ranked
                .iter()
                .map(|(id, r)| average_precision_at_k(r, &sets[id], k))
                .collect();
            let mr = map_at_k(&aps);
            metrics.push(json!({"model": label, "metric": "top_k_accuracy", "k": k, "value": v, "n_frames": ranked.len()}));
            metrics.push(json!({"model": label, "metric": "map_at_k", "k": k, "value": mr.map, "n_images": mr.n_images, "n_excluded": mr.n_excluded}));
            accs.push(Some(v));
            maps.push(Some(mr.map));
        }
        acc.push(label.clone(), accs);
        map.push(label.clone(), maps);
    }
    let text = format!("{acc}\n{map}");
    finish_report(a, &text, &metrics, m, start)
}

fn eval_ground(
    a: &EvalArgs,
    gold: &[groundkit::GoldAnnotation],
    m: &mut RunManifest,
    start: Instant,
) -> CliResult<()> {
    m.param("task", "ground");
    m.param("iou", &a.iou);
    m.param("with_upperbound", a.with_upperbound);
    m.param("with_random", a.with_random);
    m.param("trials", a.trials);
    let emb_path = a
        .embeddings
        .as_ref()
        .ok_or_else(|| CliError::input("--embeddings is required for grounding evaluation"))?;
    m.input(emb_path)?;
    let embeddings: EmbeddingTable = load(emb_path, parse_embeddings)?;
    let frames = load(&a.features, read_proposal_frames)?;
    let boxed: Vec<groundkit::GoldAnnotation> = gold
        .iter()
        .filter(|g| !g.boxes.is_empty())
        .cloned()
        .collect();
    let excluded = gold.len() - boxed.len();

    let cols: Vec<String> = a.iou.iter().map(|t| format!("IoU {t}")).collect();
    let mut table = Table::new("Grounding accuracy (%)", "model", cols);
    let mut metrics = Vec::new();

    if a.with_upperbound {
        let mut row = Vec::new();
        for &t in &a.iou {
            let r = upper_bound(&frames, gold, t)?;
            metrics.push(json!({"model": "upperbound", "threshold": t, "value": r.accuracy, "n_evaluated": r.n_evaluated, "n_excluded": r.n_excluded}));
            row.push(Some(r.accuracy));
        }
        table.push("upperbound", row);
    }
    if a.with_random {
        let mut row = Vec::new();
        for &t in &a.iou {
            // Same draws at every threshold so the row is comparable across columns.
            let mut rng = Rng::new(a.seed);
            let r = random_baseline(&frames, gold, t, &mut rng, a.trials)?;
            metrics.push(json!({"model": "random", "threshold": t, "value": r.mean, "std": r.std, "trials": r.trials, "n_evaluated": r.n_evaluated, "n_excluded": r.n_excluded}));
            row.push(Some(r.mean));
        }
        table.push("random", row);
    }

    let mut models = Vec::new();
    for p in &a.ckpt {
        models.push(GroundingModel::from_checkpoint(&load_checkpoint(p)?)?);
    }
    let names: Vec<String> = models.iter().map(|g| g.name().to_string()).collect();
    let labels = row_labels(&names, &a.ckpt);
    for (model, label) in models.iter().zip(&labels) {
        let preds = predict_for_gold(model, &frames, &boxed, &embeddings)?;
        let mut row = Vec::new();
        for &t in &a.iou {
            let r = grounding_accuracy(&preds, &boxed, t)?;
            metrics.push(json!({"model": label, "threshold": t, "value": r.accuracy, "n_evaluated": r.n_evaluated, "n_excluded": excluded}));
            row.push(Some(r.accuracy));
        }
        table.push(label.clone(), row);
    }
    let mut text = table.to_string();
    if excluded > 0 {
        text.push_str(&format!(
            "{excluded} gold frame(s) without boxes excluded\n"
        ));
    }
    finish_report(a, &text, &metrics, m, start)
}

pub fn synth(a: SynthArgs) -> CliResult<()> {
    let start = Instant::now();
    let spec = SynthSpec {
        n_entities: a.entities,
        proposals_per_frame: a.proposals,
        frames_per_entity: a.frames,
        frames_per_video: a.frames_per_video,
        visual_dim: a.visual_dim,
        embed_dim: a.embed_dim,
        noise_sigma: a.noise,
        canvas: (a.canvas_width, a.canvas_height),
        seed: a.seed,
    };
    fs::create_dir_all(&a.out).map_err(|e| CliError::input(format!("{}: {e}", a.out.display())))?;
    let mut m = RunManifest::new("synth");
    match a.kind {
        SynthKind::Grounding => {
            let c = gen_grounding_corpus(&spec)?;
            save(&a.out.join("proposals.jsonl"), |w| {
                write_proposal_frames(&c.frames, spec.visual_dim, w)
            })?;
            save(&a.out.join("gold.jsonl"), |w| write_gold(&c.gold, w))?;
            save(&a.out.join("pairs.jsonl"), |w| write_pairs(&c.pairs, w))?;
            save(&a.out.join("embeddings.txt"), |w| {
                write_embeddings(&c.embeddings, w)
            })?;
            m.param("kind", "grounding");
        }
        SynthKind::Classification => {
            let c = gen_classification_corpus(&spec)?;
            save(&a.out.join("frames.jsonl"), |w| {
                write_frame_vectors(&c.frames, spec.visual_dim, w)
            })?;
            save(&a.out.join("pairs.jsonl"), |w| write_pairs(&c.pairs, w))?;
            // Every frame's own entity doubles as its recognition gold.
            let gold: Vec<groundkit::GoldAnnotation> = c
                .pairs
                .iter()
                .map(|p| groundkit::GoldAnnotation {
                    frame_id: p.frame_id.clone(),
                    entity: p.entity.clone(),
                    boxes: vec![],
                })
                .collect();
            save(&a.out.join("gold.jsonl"), |w| write_gold(&gold, w))?;
            m.param("kind", "classification");
        }
    }
    m.param("entities", spec.n_entities);
    m.param("proposals", spec.proposals_per_frame);
    m.param("frames", spec.frames_per_entity);
    m.param("frames_per_video", spec.frames_per_video);
    m.param("visual_dim", spec.visual_dim);
    m.param("embed_dim", spec.embed_dim);
    m.param("noise", spec.noise_sigma);
    m.param("canvas", [spec.canvas.0, spec.canvas.1]);
    m.seed = Some(spec.seed);
    m.duration_s = start.elapsed().as_secs_f64();
    m.write(&a.out.join("manifest.json"))
}

pub fn gradcheck(a: GradcheckArgs) -> CliResult<()> {
    let tasks: Vec<GradTask> = match a.task.as_str() {
        "all" => GradTask::ALL.to_vec(),
        "cls" => vec![GradTask::ClsSingle, GradTask::ClsMulti],
        other => vec![other.parse()?],
    };
    if let Some(t) = a.tolerance {
        if !(t >= 0.0) {
            return Err(CliError::input("--tolerance must be non-negative"));
        }
    }
    let mut failed = Vec::new();
    for task in tasks {
        let tol = a.tolerance.unwrap_or(task.default_tolerance());
        let s = gradcheck_task(task, a.trials, tol, a.seed)?;
        let w = &s.worst;
        println!(
            "{:<10} {} trials={} failed={} tol={:e} worst_rel_err={:.3e} param={} analytic={:.6e} numeric={:.6e}",
            task,
            if s.passed() { "PASS" } else { "FAIL" },
            s.trials,
            s.failed,
            tol,
            w.max_rel_error,
            w.worst_index,
            w.worst_analytic,
            w.worst_numeric,
        );
        if !s.passed() {
            failed.push(task.to_string());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::check(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}
