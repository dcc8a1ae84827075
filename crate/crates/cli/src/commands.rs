use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use vadagent::config::RunConfig;
use vadagent::eval::{emit_report, evaluate, smooth, AnnotationFormat, Annotations, EvalSeries};
use vadagent::frames::frame_file_name;
use vadagent::knowledge::KnowledgeError;
use vadagent::trace::{
    find_runs, read_json, read_trace, render_trace, RUN_FILE, TIMELINE_FILE, TRACE_FILE,
};
use vadagent::{
    Engine, ExperienceArchive, KnowledgeIndex, Mode, RunRecord, ScoreTimeline, UserQuery, VideoRun,
    VideoSource,
};

use crate::Finish;

fn resolve_query(flag: Option<String>, config: &RunConfig) -> Result<UserQuery> {
    let text = flag
        .or_else(|| config.query.clone())
        .ok_or_else(|| anyhow!("no query given; pass --query or set `query` in the config"))?;
    let query = UserQuery::parse(&text);
    if query.categories.is_empty() {
        tracing::warn!(query = %text, "the query names no anomaly category");
    }
    Ok(query)
}

/// The knowledge base lives next to the outputs unless configured.
fn default_kb_path(config: &mut RunConfig, out: &Path) -> Result<()> {
    if config.kb_path.is_none() {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        config.kb_path = Some(out.join("kb.jsonl"));
    }
    Ok(())
}

pub fn kb_build(mut config: RunConfig, query: Option<String>, out: &Path) -> Result<Finish> {
    let query = resolve_query(query, &config)?;
    default_kb_path(&mut config, out)?;
    let path = config.kb_path.clone().expect("set above");
    let engine = Engine::from_config(config)?;
    match engine.build_knowledge(&query) {
        Ok(index) => {
            let kb = index.knowledge_base();
            println!("knowledge base: {} entries -> {}", kb.len(), path.display());
            for (category, count) in &kb.per_type_count {
                println!("  {category}: {count}");
            }
            Ok(Finish::Ok)
        }
        Err(KnowledgeError::PartialBuild {
            kb,
            shortfalls,
            wanted,
        }) => {
            println!(
                "knowledge base: {} entries -> {} (incomplete)",
                kb.len(),
                path.display()
            );
            for (category, missing) in shortfalls {
                println!("  {category}: {} of {wanted}", wanted - missing);
            }
            Ok(Finish::Partial)
        }
        Err(e) => Err(e.into()),
    }
}

fn is_frame_dir(dir: &Path) -> bool {
    dir.join(frame_file_name(0)).is_file()
}

/// Each argument is a frame directory or a directory of frame directories.
fn discover_videos(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for path in paths {
        if is_frame_dir(path) {
            dirs.push(path.clone());
            continue;
        }
        let mut children: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| format!("reading {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| is_frame_dir(p))
            .collect();
        if children.is_empty() {
            bail!(
                "{} holds no frames ({} expected)",
                path.display(),
                frame_file_name(0)
            );
        }
        children.sort();
        dirs.extend(children);
    }
    Ok(dirs)
}

fn summarize(run: &VideoRun) -> String {
    if let Some(failure) = &run.run.failure {
        return format!("{}: FAILED ({failure})", run.run.video_id);
    }
    let clips = &run.timeline.per_clip;
    let reflected = clips.iter().filter(|c| c.reflected).count();
    let peak = clips.iter().map(|c| c.score).fold(0.0, f64::max);
    format!(
        "{}: {} clips, {reflected} reflected, peak score {peak:.3}",
        run.run.video_id,
        clips.len()
    )
}

pub fn run(
    mut config: RunConfig,
    query: Option<String>,
    videos: &[PathBuf],
    out: &Path,
    workers: usize,
) -> Result<Finish> {
    let query = resolve_query(query, &config)?;
    default_kb_path(&mut config, out)?;
    let dirs = discover_videos(videos)?;

    let mut sources = Vec::new();
    let mut failures = 0usize;
    for dir in &dirs {
        match VideoSource::open(dir, config.fallback_fps) {
            Ok(v) => sources.push(v),
            Err(e) => {
                eprintln!("{}: {e}", dir.display());
                failures += 1;
            }
        }
    }
    let mut ids = BTreeSet::new();
    for v in &sources {
        if !ids.insert(v.video_id.as_str()) {
            bail!("two inputs share the video id `{}`", v.video_id);
        }
    }

    let cross_video = config.cross_video_memory;
    let engine = Engine::from_config(config)?;
    let knowledge = engine.knowledge_for_run(&query)?;
    let knowledge = knowledge.as_ref();

    let finish = |result: Result<VideoRun>| -> bool {
        let run = match result {
            Ok(run) => run,
            Err(e) => {
                eprintln!("error: {e:#}");
                return false;
            }
        };
        let dir = out.join(&run.run.video_id);
        if let Err(e) = run.write(&dir) {
            eprintln!("error: writing {}: {e}", dir.display());
            return false;
        }
        println!("{}", summarize(&run));
        !run.failed()
    };

    if cross_video {
        if workers > 1 {
            tracing::warn!("cross-video memory is on; running one video at a time");
        }
        let mut archive = ExperienceArchive::default();
        for video in &sources {
            match run_one(&engine, video, &query, knowledge, Some(&archive)) {
                Ok(run) => {
                    let long = run.long.clone();
                    failures += usize::from(!finish(Ok(run)));
                    archive = long.into_archive(archive);
                }
                Err(e) => failures += usize::from(!finish(Err(e))),
            }
        }
    } else {
        let next = AtomicUsize::new(0);
        let failed = Mutex::new(0usize);
        let stdout = Mutex::new(());
        std::thread::scope(|scope| {
            for _ in 0..workers.clamp(1, sources.len().max(1)) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(video) = sources.get(i) else { break };
                    let result = run_one(&engine, video, &query, knowledge, None);
                    let _guard = stdout.lock().unwrap();
                    if !finish(result) {
                        *failed.lock().unwrap() += 1;
                    }
                });
            }
        });
        failures += failed.into_inner().unwrap();
    }

    let total = dirs.len();
    match failures {
        0 => Ok(Finish::Ok),
        f if f < total => {
            eprintln!(
                "{f} of {total} videos failed; results for the others are in {}",
                out.display()
            );
            Ok(Finish::Partial)
        }
        _ => bail!("all {total} videos failed"),
    }
}

fn run_one(
    engine: &Engine,
    video: &VideoSource,
    query: &UserQuery,
    knowledge: Option<&KnowledgeIndex>,
    archive: Option<&ExperienceArchive>,
) -> Result<VideoRun> {
    engine
        .run_video(video, query, knowledge, archive)
        .with_context(|| format!("video {}", video.video_id))
}

fn metric(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.6}"))
}

pub fn eval(
    config: &RunConfig,
    run_dir: &Path,
    annotations: &Path,
    format: Option<&str>,
    out: &Path,
) -> Result<Finish> {
    let format = match format {
        Some(f) => f.parse::<AnnotationFormat>().map_err(|e| anyhow!(e))?,
        None => AnnotationFormat::from_path(annotations),
    };
    let annotations = Annotations::load(annotations, format)?;
    let dirs = find_runs(run_dir).with_context(|| format!("reading {}", run_dir.display()))?;
    if dirs.is_empty() {
        bail!(
            "no run outputs ({TIMELINE_FILE}) under {}",
            run_dir.display()
        );
    }

    let mut series = Vec::new();
    let mut digests = BTreeSet::new();
    let mut smoothed = false;
    let mut skipped = 0;
    for dir in &dirs {
        let timeline: ScoreTimeline = read_json(&dir.join(TIMELINE_FILE))?;
        let run: RunRecord = read_json(&dir.join(RUN_FILE))?;
        if run.failure.is_some() || timeline.per_frame.is_empty() {
            eprintln!("{}: skipped, the run did not finish", timeline.video_id);
            skipped += 1;
            continue;
        }
        digests.insert(run.config_digest.clone());
        let scores = match run.mode {
            Mode::Offline => {
                smoothed = true;
                smooth(&timeline.per_frame, config.smooth_window)
            }
            Mode::Online => timeline.per_frame.clone(),
        };
        let labels = annotations
            .labels_for(&timeline.video_id, scores.len())?
            .labels;
        series.push(EvalSeries {
            video_id: timeline.video_id,
            scores,
            labels,
        });
    }
    if series.is_empty() {
        bail!("no finished runs to evaluate");
    }
    if digests.len() > 1 {
        tracing::warn!(
            count = digests.len(),
            "runs were produced with different configurations"
        );
    }
    let digest = digests.into_iter().collect::<Vec<_>>().join(",");
    let window = smoothed.then_some(config.smooth_window);
    let report = evaluate(&series, &digest, window)?;
    emit_report(&report, &series, out)?;

    for (video, m) in &report.per_video {
        println!(
            "{video}: frames {} AUC {} AP {}",
            m.frames,
            metric(m.auc),
            metric(m.ap)
        );
    }
    println!("aggregate AUC: {}", metric(report.aggregate_auc));
    println!("aggregate AP: {}", metric(report.aggregate_ap));
    println!("report: {}", out.join("report.json").display());
    Ok(if skipped > 0 {
        Finish::Partial
    } else {
        Finish::Ok
    })
}

pub fn trace(path: &Path) -> Result<Finish> {
    let (trace_path, run_path) = if path.is_dir() {
        (path.join(TRACE_FILE), path.join(RUN_FILE))
    } else {
        let dir = path.parent().unwrap_or(Path::new("."));
        (path.to_path_buf(), dir.join(RUN_FILE))
    };
    let records =
        read_trace(&trace_path).with_context(|| format!("reading {}", trace_path.display()))?;
    let run: Option<RunRecord> = if run_path.is_file() {
        Some(read_json(&run_path)?)
    } else {
        None
    };
    print!("{}", render_trace(run.as_ref(), &records));
    Ok(Finish::Ok)
}
