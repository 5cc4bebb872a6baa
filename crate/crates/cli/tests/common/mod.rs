#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Output;

use respire_cli::config::PipelineConfig;
use respire_core::synth::{generate_corpus, SynthConfig};

pub fn respire(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_respire"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn path_arg(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// A synthetic corpus under `dir/corpus` and a config pointing at `dir/work`.
pub fn synth_setup(dir: &Path, recordings: usize, seed: u64) -> PipelineConfig {
    let corpus = dir.join("corpus");
    generate_corpus(
        &corpus,
        &SynthConfig {
            recordings,
            seed,
            ..SynthConfig::default()
        },
    )
    .unwrap();
    PipelineConfig {
        corpus_root: corpus,
        work_dir: dir.join("work"),
        seed,
        ..PipelineConfig::default()
    }
}

pub fn write_config(dir: &Path, cfg: &PipelineConfig) -> PathBuf {
    let path = dir.join("respire.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}
