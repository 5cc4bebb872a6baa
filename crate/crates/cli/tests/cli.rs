//! The `respire` binary: stage artifacts, idempotence and exit codes.

mod common;

use std::collections::HashSet;
use std::sync::OnceLock;

use common::{code, path_arg, respire, synth_setup, write_config};
use respire_cli::commands::{self, SplitRecord};
use respire_cli::config::{GroupBy, PipelineConfig};
use respire_core::audio::read_clip_metadata;
use respire_core::embed::load_dataset;
use respire_core::models::ClassifierKind;
use respire_core::synth::{generate_corpus, SynthConfig};
use tempfile::TempDir;

const FAST: [ClassifierKind; 2] = [ClassifierKind::SvmLinear, ClassifierKind::LogisticRegression];

/// Small corpus carried through evaluation once per test binary.
fn shared() -> &'static (TempDir, PipelineConfig) {
    static CELL: OnceLock<(TempDir, PipelineConfig)> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synth_setup(dir.path(), 12, 42);
        commands::run_all(&cfg, &FAST).unwrap();
        (dir, cfg)
    })
}

#[test]
fn stages_write_their_artifacts() {
    let (_, cfg) = shared();
    let p = cfg.paths();
    for f in [&p.manifest, &p.clips_metadata, &p.split] {
        assert!(f.is_file(), "{}", f.display());
    }
    for f in ["embeddings.npy", "labels.npy", "filenames.txt"] {
        assert!(p.dataset_dir.join(f).is_file(), "{f}");
    }
    for k in FAST {
        assert!(p.model_file(k).is_file());
        assert!(p.metrics_file(k).is_file());
        assert!(p.misclassified_file(k).is_file());
        let diag = std::fs::read_to_string(p.diagnostics_file(k)).unwrap();
        assert!(diag.lines().count() > 1);
        for line in diag.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v["loss"].as_f64().unwrap().is_finite());
        }
    }
    for f in ["roc_all.svg", "pca.svg", "barcode.svg", "series.json"] {
        assert!(p.results_dir.join(f).is_file(), "{f}");
    }

    let meta = read_clip_metadata(&p.clips_metadata).unwrap();
    let m = load_dataset(&p.dataset_dir).unwrap();
    assert_eq!(m.len(), meta.len());
    let ids: Vec<&str> = meta.iter().map(|c| c.clip_id.as_str()).collect();
    assert_eq!(m.clip_ids().iter().map(String::as_str).collect::<Vec<_>>(), ids);
    for c in &meta {
        assert!(p.clips_dir.join(format!("{}.wav", c.clip_id)).is_file());
    }

    let split: SplitRecord = serde_json::from_str(&std::fs::read_to_string(&p.split).unwrap()).unwrap();
    assert_eq!(split.train.len() + split.test.len(), m.len());
    let train: HashSet<&String> = split.train.iter().collect();
    assert!(split.test.iter().all(|id| !train.contains(id)));
}

#[test]
fn ingest_and_segment_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_setup(dir.path(), 6, 3);
    let p = cfg.paths();
    commands::ingest(&cfg).unwrap();
    commands::segment(&cfg).unwrap();
    let manifest = std::fs::read(&p.manifest).unwrap();
    let meta = std::fs::read(&p.clips_metadata).unwrap();
    let first_clip = read_clip_metadata(&p.clips_metadata).unwrap()[0].clip_id.clone();
    let wav = std::fs::read(p.clips_dir.join(format!("{first_clip}.wav"))).unwrap();

    commands::ingest(&cfg).unwrap();
    commands::segment(&cfg).unwrap();
    assert_eq!(std::fs::read(&p.manifest).unwrap(), manifest);
    assert_eq!(std::fs::read(&p.clips_metadata).unwrap(), meta);
    assert_eq!(std::fs::read(p.clips_dir.join(format!("{first_clip}.wav"))).unwrap(), wav);
}

#[test]
fn all_poor_quality_gives_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    generate_corpus(
        &corpus,
        &SynthConfig {
            recordings: 3,
            poor_quality: 3,
            ..SynthConfig::default()
        },
    )
    .unwrap();
    let work = dir.path().join("work");
    let out = respire(&["ingest", "--corpus-root", path_arg(&corpus), "--work-dir", path_arg(&work)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["kept"], 0);
    assert_eq!(summary["poor_quality"], 3);
    let manifest = std::fs::read_to_string(work.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1, "header only");
}

#[test]
fn missing_corpus_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = respire(&["ingest", "--corpus-root", path_arg(&missing), "--work-dir", path_arg(dir.path())]);
    assert_eq!(code(&out), 2);

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = respire(&["segment", "--corpus-root", path_arg(&empty), "--work-dir", path_arg(dir.path())]);
    assert_eq!(code(&out), 2);
}

#[test]
fn usage_and_config_errors_exit_1() {
    assert_eq!(code(&respire(&["frobnicate"])), 1);
    assert_eq!(code(&respire(&["train", "--models", "svm,perceptron", "--work-dir", "/nonexistent"])), 1);
    assert_eq!(code(&respire(&["--help"])), 0);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = \"forty-two\"\n").unwrap();
    assert_eq!(code(&respire(&["ingest", "--config", path_arg(&bad)])), 1);
    assert_eq!(code(&respire(&["ingest", "--config", path_arg(&dir.path().join("absent.toml"))])), 1);
}

#[test]
fn stages_out_of_order_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let w = path_arg(dir.path());
    assert_eq!(code(&respire(&["embed", "--work-dir", w])), 4);
    assert_eq!(code(&respire(&["train", "--work-dir", w])), 4);
    assert_eq!(code(&respire(&["evaluate", "--work-dir", w])), 4);
    assert_eq!(code(&respire(&["review", "serve", "--work-dir", w, "--port", "0"])), 4);
}

#[test]
fn unreachable_embedding_service_exits_3() {
    let (_, shared_cfg) = shared();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = shared_cfg.clone();
    cfg.work_dir = dir.path().join("work");
    commands::ingest(&cfg).unwrap();
    commands::segment(&cfg).unwrap();
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    cfg.embed.endpoint = format!("http://127.0.0.1:{port}");
    cfg.embed.retry_base_ms = 1;
    let config = write_config(dir.path(), &cfg);
    let out = respire(&["embed", "--provider", "remote", "--config", path_arg(&config)]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn busy_review_port_exits_5() {
    let (_, cfg) = shared();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), cfg);
    let out = respire(&["review", "serve", "--config", path_arg(&config), "--port", &port]);
    assert_eq!(code(&out), 5, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn seed_flag_overrides_config() {
    let (_, shared_cfg) = shared();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = shared_cfg.clone();
    cfg.work_dir = dir.path().to_path_buf();
    let src = shared_cfg.paths();
    std::fs::create_dir_all(dir.path().join("embeddings")).unwrap();
    for f in ["embeddings.npy", "labels.npy", "filenames.txt"] {
        std::fs::copy(src.dataset_dir.join(f), dir.path().join("embeddings").join(f)).unwrap();
    }
    let config = write_config(dir.path(), &cfg);
    let out = respire(&["train", "--config", path_arg(&config), "--models", "logreg", "--seed", "9"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let split: SplitRecord = serde_json::from_str(&std::fs::read_to_string(cfg.paths().split).unwrap()).unwrap();
    assert_eq!(split.seed, 9);
    let original: SplitRecord = serde_json::from_str(&std::fs::read_to_string(src.split).unwrap()).unwrap();
    assert_eq!(original.seed, 42);
}

#[test]
fn group_split_keeps_recordings_together() {
    let (_, shared_cfg) = shared();
    for group_by in [GroupBy::Recording, GroupBy::Patient] {
        let mut cfg = shared_cfg.clone();
        cfg.split.group_by = group_by;
        let m = load_dataset(&cfg.paths().dataset_dir).unwrap();
        let split = commands::make_split(&cfg, &m).unwrap();
        let meta = read_clip_metadata(&cfg.paths().clips_metadata).unwrap();
        let source = |id: &String| meta.iter().find(|c| &c.clip_id == id).unwrap().source.clone();
        let train: HashSet<String> = split.train.iter().map(source).collect();
        let test: HashSet<String> = split.test.iter().map(source).collect();
        assert!(train.is_disjoint(&test), "{group_by:?}");
        assert!(!test.is_empty());
    }
}

#[test]
fn best_model_prefers_accuracy_then_order() {
    let (_, cfg) = shared();
    let best = commands::best_model(cfg).unwrap();
    let acc = |k| commands::read_metrics(cfg, k).unwrap().accuracy;
    let top = FAST.iter().map(|&k| acc(k)).fold(f64::MIN, f64::max);
    assert_eq!(acc(best), top);
    let first = FAST.into_iter().find(|&k| acc(k) == top).unwrap();
    assert_eq!(best, first);
}
