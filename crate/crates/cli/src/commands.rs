//! The pipeline stages. Each reads the previous stage's artifacts from the
//! work directory and writes its own.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use respire_core::audio::{build_clip_set, read_clip_metadata, read_wav_file, write_clip_set, Clip, ClipMeta};
use respire_core::dataset::{filter_quality, parse_filename, scan_corpus, write_manifest, AnnotatedRecording, EventLabel, RecordLabel};
use respire_core::embed::{
    embed_batch, load_dataset, persist_dataset, EmbeddingMatrix, EmbeddingProvider, HttpEmbeddingProvider, SurrogateEmbedder,
};
use respire_core::eval::{
    barcode_data, emit_plots, evaluate as eval_model, export_misclassified, pca_project, stratified_split, EvalReport,
    MetricsFile, PcaScatter,
};
use respire_core::models::{fit, load_model, save_model, ClassifierKind, Diagnostics};
use respire_core::review::{apply_verdicts, ApplySummary};
use respire_core::{Label, TARGET_RATE};
use serde::{Deserialize, Serialize};

use crate::config::{GroupBy, PipelineConfig, ProviderKind};
use crate::error::{io, CliError, ExitKind, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub recordings: usize,
    pub kept: usize,
    pub poor_quality: usize,
    pub events: usize,
    pub warnings: Vec<String>,
}

fn scan(cfg: &PipelineConfig) -> Result<(Vec<AnnotatedRecording>, Vec<String>)> {
    let root = &cfg.corpus_root;
    if !root.is_dir() {
        return Err(CliError::msg(
            ExitKind::Corpus,
            format!("corpus root {} does not exist", root.display()),
        ));
    }
    let outcome = scan_corpus(root, &cfg.corpus.layout, &cfg.corpus.schema)?;
    for w in &outcome.warnings {
        warn!("{w}");
    }
    Ok((outcome.recordings, outcome.warnings))
}

/// Scans the corpus, drops poor-quality recordings and writes `manifest.csv`.
pub fn ingest(cfg: &PipelineConfig) -> Result<IngestSummary> {
    let (all, warnings) = scan(cfg)?;
    let total = all.len();
    let poor = all.iter().filter(|r| r.record_label == RecordLabel::PoorQuality).count();
    let kept = filter_quality(all);
    if kept.is_empty() {
        warn!("no usable recordings: all {total} are flagged as poor quality or none were paired");
    }
    let paths = cfg.paths();
    std::fs::create_dir_all(&paths.root).map_err(io(&paths.root))?;
    write_manifest(&paths.manifest, &kept)?;
    let summary = IngestSummary {
        recordings: total,
        kept: kept.len(),
        poor_quality: poor,
        events: kept.iter().map(|r| r.events.len()).sum(),
        warnings,
    };
    info!(
        "ingest: {} recordings ({} poor quality dropped), {} events",
        summary.kept, summary.poor_quality, summary.events
    );
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SegmentSummary {
    pub clips: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Cuts every usable event into 2 s clips under `asthma_clips/` and writes
/// `clips_metadata.csv`.
pub fn segment(cfg: &PipelineConfig) -> Result<SegmentSummary> {
    let (all, _) = scan(cfg)?;
    let recordings = filter_quality(all);
    let set = build_clip_set(&recordings, &cfg.segment.params(), cfg.segment.crackle_policy)?;
    let paths = cfg.paths();
    std::fs::create_dir_all(&paths.root).map_err(io(&paths.root))?;
    write_clip_set(&set, &paths.root)?;
    let positive = set.clips.iter().filter(|c| c.label.is_positive()).count();
    let summary = SegmentSummary {
        clips: set.clips.len(),
        positive,
        negative: set.clips.len() - positive,
    };
    info!("segment: {} clips ({} positive, {} negative)", summary.clips, positive, summary.negative);
    Ok(summary)
}

fn missing(path: &Path, stage: &str) -> CliError {
    CliError::msg(
        ExitKind::Data,
        format!("{} not found; run `respire {stage}` first", path.display()),
    )
}

fn load_clip(clips_dir: &Path, meta: &ClipMeta) -> Result<Clip> {
    let path = clips_dir.join(format!("{}.wav", meta.clip_id));
    let wave = read_wav_file(&path)?;
    if wave.sample_rate != TARGET_RATE || wave.channels != 1 {
        return Err(CliError::msg(
            ExitKind::Data,
            format!("{}: expected mono {TARGET_RATE} Hz audio", path.display()),
        ));
    }
    let event_label = EventLabel::parse(&meta.event_label)
        .ok_or_else(|| CliError::msg(ExitKind::Data, format!("unknown event label {:?}", meta.event_label)))?;
    Ok(Clip {
        samples: wave.samples,
        label: meta.binary_label,
        event_label,
        source: meta.source.clone(),
        event_index: meta.event_index,
        window_offset_ms: meta.window_offset_ms,
        padded_samples: meta.padded_samples,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EmbedSummary {
    pub rows: usize,
    pub provider: String,
}

/// Embeds the clips in `clips_metadata.csv` order and persists the dataset.
pub fn embed(cfg: &PipelineConfig) -> Result<EmbedSummary> {
    let paths = cfg.paths();
    if !paths.clips_metadata.is_file() {
        return Err(missing(&paths.clips_metadata, "segment"));
    }
    let metas = read_clip_metadata(&paths.clips_metadata)?;
    if metas.is_empty() {
        return Err(CliError::msg(ExitKind::Data, "no clips to embed"));
    }
    let clips: Vec<Clip> = metas.iter().map(|m| load_clip(&paths.clips_dir, m)).collect::<Result<_>>()?;
    let mut embed_cfg = cfg.embed.clone();
    embed_cfg.apply_env();
    let provider: Box<dyn EmbeddingProvider> = match embed_cfg.provider {
        ProviderKind::Surrogate => Box::new(SurrogateEmbedder),
        ProviderKind::Remote => Box::new(HttpEmbeddingProvider::new(&embed_cfg.http())),
    };
    let m = embed_batch(provider.as_ref(), &clips, &embed_cfg.batch())?;
    persist_dataset(&m, &paths.dataset_dir)?;
    let provider = match embed_cfg.provider {
        ProviderKind::Surrogate => "surrogate".to_string(),
        ProviderKind::Remote => embed_cfg.endpoint.clone(),
    };
    info!("embed: {} x {} matrix from {provider}", m.len(), m.dim());
    Ok(EmbedSummary { rows: m.len(), provider })
}

/// Train/test assignment by clip id, shared by `train` and `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub seed: u64,
    pub train_ratio: f64,
    pub group_by: GroupBy,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

fn load_embeddings(cfg: &PipelineConfig) -> Result<EmbeddingMatrix> {
    let dir = cfg.paths().dataset_dir;
    if !dir.join("embeddings.npy").is_file() {
        return Err(missing(&dir.join("embeddings.npy"), "embed"));
    }
    Ok(load_dataset(&dir)?)
}

fn groups(cfg: &PipelineConfig, m: &EmbeddingMatrix) -> Result<Option<Vec<String>>> {
    if cfg.split.group_by == GroupBy::None {
        return Ok(None);
    }
    let paths = cfg.paths();
    if !paths.clips_metadata.is_file() {
        return Err(missing(&paths.clips_metadata, "segment"));
    }
    let source: HashMap<String, String> = read_clip_metadata(&paths.clips_metadata)?
        .into_iter()
        .map(|c| (c.clip_id, c.source))
        .collect();
    m.clip_ids()
        .iter()
        .map(|id| {
            let src = source
                .get(id)
                .ok_or_else(|| CliError::msg(ExitKind::Data, format!("clip {id} missing from clips_metadata.csv")))?;
            Ok(match cfg.split.group_by {
                GroupBy::Patient => parse_filename(src, &cfg.corpus.schema)?.patient_id,
                _ => src.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

pub fn make_split(cfg: &PipelineConfig, m: &EmbeddingMatrix) -> Result<SplitRecord> {
    let g = groups(cfg, m)?;
    let s = stratified_split(m.labels(), cfg.split.train_ratio, cfg.seed, g.as_deref())?;
    let ids = |idx: &[usize]| idx.iter().map(|&i| m.clip_ids()[i].clone()).collect();
    Ok(SplitRecord {
        seed: cfg.seed,
        train_ratio: cfg.split.train_ratio,
        group_by: cfg.split.group_by,
        train: ids(&s.train),
        test: ids(&s.test),
    })
}

fn indices(m: &EmbeddingMatrix, ids: &[String]) -> Result<Vec<usize>> {
    let pos: HashMap<&str, usize> = m.clip_ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    ids.iter()
        .map(|id| {
            pos.get(id.as_str()).copied().ok_or_else(|| {
                CliError::msg(
                    ExitKind::Data,
                    format!("split refers to clip {id}, which is not in the dataset; rerun `respire train`"),
                )
            })
        })
        .collect()
}

fn write_diagnostics(path: &Path, d: &Diagnostics) -> Result<()> {
    let mut out = String::new();
    for r in &d.history {
        out.push_str(&serde_json::to_string(r).expect("record serialises"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(io(path))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainedSummary {
    pub kind: ClassifierKind,
    pub path: PathBuf,
    pub final_loss: f64,
    pub iterations: usize,
}

/// Splits the dataset, trains every requested kind on the training part and
/// writes one model file plus a JSON-lines diagnostics file per kind.
pub fn train(cfg: &PipelineConfig, kinds: &[ClassifierKind]) -> Result<Vec<TrainedSummary>> {
    let m = load_embeddings(cfg)?;
    let split = make_split(cfg, &m)?;
    let paths = cfg.paths();
    std::fs::create_dir_all(&paths.models_dir).map_err(io(&paths.models_dir))?;
    let text = serde_json::to_string_pretty(&split).expect("split serialises");
    std::fs::write(&paths.split, text + "\n").map_err(io(&paths.split))?;

    let train_idx = indices(&m, &split.train)?;
    let x = m.to_matrix().select_rows(&train_idx);
    let y: Vec<Label> = train_idx.iter().map(|&i| m.labels()[i]).collect();
    let tc = cfg.train_config();

    let fitted: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = kinds
            .iter()
            .map(|&k| {
                let (x, y, tc) = (&x, &y, &tc);
                s.spawn(move || (k, fit(k, x, y, tc)))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });

    let mut out = Vec::new();
    for (kind, model) in fitted {
        let model = model?;
        let path = paths.model_file(kind);
        save_model(&model, &path)?;
        write_diagnostics(&paths.diagnostics_file(kind), &model.diagnostics)?;
        info!(
            "train: {kind} final loss {:.5} after {} iterations",
            model.diagnostics.final_loss, model.diagnostics.iterations
        );
        out.push(TrainedSummary {
            kind,
            path,
            final_loss: model.diagnostics.final_loss,
            iterations: model.diagnostics.iterations,
        });
    }
    Ok(out)
}

/// Kinds with a model file in the work directory, in canonical order.
pub fn trained_kinds(cfg: &PipelineConfig) -> Vec<ClassifierKind> {
    let paths = cfg.paths();
    ClassifierKind::ALL
        .into_iter()
        .filter(|&k| paths.model_file(k).is_file())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluatedSummary {
    pub kind: ClassifierKind,
    pub accuracy: f64,
    pub auc: f64,
    pub misclassified: usize,
}

/// Scores the held-out clips with every requested model and writes the
/// `results/` tree: metrics, confusion figures, ROC overlay, PCA scatter,
/// barcode heatmap, misclassification lists and `series.json`.
pub fn evaluate(cfg: &PipelineConfig, kinds: Option<&[ClassifierKind]>) -> Result<Vec<EvaluatedSummary>> {
    let paths = cfg.paths();
    let m = load_embeddings(cfg)?;
    if !paths.split.is_file() {
        return Err(missing(&paths.split, "train"));
    }
    let text = std::fs::read_to_string(&paths.split).map_err(io(&paths.split))?;
    let split: SplitRecord = serde_json::from_str(&text)
        .map_err(|e| CliError::msg(ExitKind::Data, format!("{}: {e}", paths.split.display())))?;
    let test_idx = indices(&m, &split.test)?;
    let all = m.to_matrix();
    let x = all.select_rows(&test_idx);
    let y: Vec<Label> = test_idx.iter().map(|&i| m.labels()[i]).collect();
    let ids: Vec<String> = test_idx.iter().map(|&i| m.clip_ids()[i].clone()).collect();

    let kinds: Vec<ClassifierKind> = match kinds {
        Some(k) => k.to_vec(),
        None => trained_kinds(cfg),
    };
    if kinds.is_empty() {
        return Err(missing(&paths.models_dir, "train"));
    }
    std::fs::create_dir_all(&paths.results_dir).map_err(io(&paths.results_dir))?;

    let mut reports: Vec<EvalReport> = Vec::new();
    for &kind in &kinds {
        let file = paths.model_file(kind);
        if !file.is_file() {
            return Err(missing(&file, "train"));
        }
        let model = load_model(&file)?;
        if model.kind != kind {
            return Err(CliError::msg(
                ExitKind::Data,
                format!("{} holds a {} model", file.display(), model.kind),
            ));
        }
        let report = eval_model(&model, &x, &y, &ids)?;
        report.write_metrics(&paths.metrics_file(kind))?;
        export_misclassified(&report, &paths.clips_dir, &paths.misclassified_file(kind))?;
        info!(
            "evaluate: {kind} accuracy {:.4} auc {:.4} ({} misclassified)",
            report.metrics.accuracy,
            report.roc.auc,
            report.misclassified.len()
        );
        reports.push(report);
    }

    let pca = pca_project(&all, 2)?;
    let scatter = PcaScatter::from_pca(&pca, m.labels());
    let barcode = barcode_data(&m, cfg.eval.barcode_per_class, cfg.seed)?;
    emit_plots(&reports, &scatter, &barcode, &paths.results_dir)?;

    Ok(reports
        .iter()
        .map(|r| EvaluatedSummary {
            kind: r.model_kind,
            accuracy: r.metrics.accuracy,
            auc: r.roc.auc,
            misclassified: r.misclassified.len(),
        })
        .collect())
}

/// Reads `results/metrics_<kind>.json`.
pub fn read_metrics(cfg: &PipelineConfig, kind: ClassifierKind) -> Result<MetricsFile> {
    let path = cfg.paths().metrics_file(kind);
    let text = std::fs::read_to_string(&path).map_err(|_| missing(&path, "evaluate"))?;
    serde_json::from_str(&text).map_err(|e| CliError::msg(ExitKind::Data, format!("{}: {e}", path.display())))
}

/// The evaluated kind with the highest test accuracy; ties go to the earlier kind.
pub fn best_model(cfg: &PipelineConfig) -> Result<ClassifierKind> {
    let mut best: Option<(ClassifierKind, f64)> = None;
    for kind in ClassifierKind::ALL {
        if !cfg.paths().metrics_file(kind).is_file() {
            continue;
        }
        let acc = read_metrics(cfg, kind)?.accuracy;
        if best.is_none_or(|(_, b)| acc > b) {
            best = Some((kind, acc));
        }
    }
    best.map(|(k, _)| k)
        .ok_or_else(|| missing(&cfg.paths().results_dir, "evaluate"))
}

/// Applies the review verdicts to `labels.npy`.
pub fn review_apply(cfg: &PipelineConfig, verdicts: Option<&Path>) -> Result<ApplySummary> {
    let paths = cfg.paths();
    let verdicts = verdicts.map(Path::to_path_buf).unwrap_or(paths.verdicts.clone());
    if !paths.dataset_dir.join("labels.npy").is_file() {
        return Err(missing(&paths.dataset_dir.join("labels.npy"), "embed"));
    }
    let summary = apply_verdicts(&verdicts, &paths.dataset_dir)?;
    info!(
        "review apply: {} labels changed, {} confirmed; backup at {}",
        summary.changes.len(),
        summary.confirmed,
        summary.backup.display()
    );
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunAllSummary {
    pub ingest: IngestSummary,
    pub segment: SegmentSummary,
    pub embed: EmbedSummary,
    pub train: Vec<TrainedSummary>,
    pub evaluate: Vec<EvaluatedSummary>,
}

/// ingest, segment, embed, train and evaluate in sequence.
pub fn run_all(cfg: &PipelineConfig, kinds: &[ClassifierKind]) -> Result<RunAllSummary> {
    Ok(RunAllSummary {
        ingest: ingest(cfg)?,
        segment: segment(cfg)?,
        embed: embed(cfg)?,
        train: train(cfg, kinds)?,
        evaluate: evaluate(cfg, Some(kinds))?,
    })
}
