#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use vadagent::engine::{Engine, VideoRun};
use vadagent::trace::{TIMELINE_FILE, TRACE_FILE};
use vadagent::video::write_synthetic_video;
use vadagent::{FrameStore, RunConfig, ScriptedBackend, UserQuery, VideoSource};

pub const GOLDEN_FRAMES: usize = 60;
pub const GOLDEN_DARK: std::ops::Range<usize> = 15..20;

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

pub fn golden_config() -> RunConfig {
    RunConfig::load(&golden_dir().join("run.toml")).expect("golden config loads")
}

pub fn golden_video(dir: &Path) -> VideoSource {
    write_synthetic_video(
        &dir.join("golden"),
        "golden",
        GOLDEN_FRAMES,
        1.0,
        (64, 48),
        GOLDEN_DARK,
    )
    .expect("synthetic video is written")
}

pub struct GoldenRun {
    pub run: VideoRun,
    pub backend: Arc<ScriptedBackend>,
    pub trace: String,
    pub timeline: String,
    pub elapsed: Duration,
}

/// Builds the knowledge base, then runs the golden video. The call log is
/// cleared after the knowledge build so it holds only the video's calls.
pub fn run_golden(mut config: RunConfig) -> GoldenRun {
    let tmp = tempfile::tempdir().unwrap();
    config.kb_path = Some(tmp.path().join("kb.jsonl"));
    let video = golden_video(tmp.path());
    let query = UserQuery::parse(config.query.as_deref().expect("golden config has a query"));

    let started = Instant::now();
    let backend =
        Arc::new(ScriptedBackend::from_file(config.backend.script.as_deref().unwrap()).unwrap());
    let engine =
        Engine::with_backend(config, backend.clone(), Arc::new(FrameStore::new())).unwrap();
    let knowledge = engine.knowledge_for_run(&query).unwrap();
    backend.reset();
    let run = engine
        .run_video(&video, &query, knowledge.as_ref(), None)
        .unwrap();
    let out = tmp.path().join("out");
    run.write(&out).unwrap();
    let elapsed = started.elapsed();

    GoldenRun {
        trace: std::fs::read_to_string(out.join(TRACE_FILE)).unwrap(),
        timeline: std::fs::read_to_string(out.join(TIMELINE_FILE)).unwrap(),
        run,
        backend,
        elapsed,
    }
}

pub fn expected(name: &str) -> String {
    std::fs::read_to_string(golden_dir().join("expected").join(name))
        .unwrap_or_else(|e| panic!("missing expected golden file {name}: {e}"))
}
