//! Per-video run artifacts: the clip trace (JSON lines), run metadata and
//! the score timeline, plus a human-readable rendering of a trace.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::canonical::{to_canonical_json, to_canonical_line};
use crate::knowledge::RuleSet;
use crate::planner::{EnvInfo, Mode, StrategyPlan};
use crate::reasoning::{ReasoningResult, ScoreTimeline, Status};
use crate::reflection::ReflectionRound;

pub const TRACE_FILE: &str = "trace.jsonl";
pub const RUN_FILE: &str = "run.json";
pub const TIMELINE_FILE: &str = "timeline.json";
pub const LONG_MEMORY_FILE: &str = "long_com.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub t: usize,
    pub frame_indices: Vec<usize>,
    pub applied_ops: Vec<String>,
    pub initial: ReasoningResult,
    pub status: Status,
    pub score: f64,
    pub reason: String,
    pub reflected: bool,
    pub rounds_used: usize,
    /// Tool names across all rounds, in invocation order.
    pub tool_calls: Vec<String>,
    pub rounds: Vec<ReflectionRound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub video_id: String,
    pub mode: Mode,
    pub frame_count: usize,
    pub source_fps: f64,
    pub stride: usize,
    pub s: usize,
    pub keyframes: Vec<usize>,
    pub env_info: Option<EnvInfo>,
    pub rules: RuleSet,
    pub plan: Option<StrategyPlan>,
    pub plan_fallback: Option<String>,
    /// Set when the video aborted before clip reasoning.
    pub failure: Option<String>,
    pub config_digest: String,
}

pub fn write_trace(path: &Path, records: &[ClipRecord]) -> io::Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&to_canonical_line(r));
        out.push('\n');
    }
    fs::write(path, out)
}

pub fn read_trace(path: &Path) -> io::Result<Vec<ClipRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}:{}: {e}", path.display(), n + 1),
            )
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> io::Result<()> {
    fs::write(path, to_canonical_json(value) + "\n")
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> io::Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        io::Error::new(
            io::ErrorKind::InvalidData,
            format!("{}: {e}", path.display()),
        )
    })
}

/// Video directories under `root` holding a timeline, sorted by name.
pub fn find_runs(root: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if root.join(TIMELINE_FILE).is_file() {
        out.push(root.to_path_buf());
    }
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        if path.join(TIMELINE_FILE).is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn frame_span(indices: &[usize]) -> String {
    match (indices.first(), indices.last()) {
        (Some(a), Some(b)) if a != b => format!("frames {a}-{b}"),
        (Some(a), _) => format!("frame {a}"),
        _ => "no frames".into(),
    }
}

fn verdict(r: &ReasoningResult) -> String {
    format!("{} {:.3} ({})", r.status, r.score, r.reason)
}

/// Readable reasoning/reflection chain, one block per clip.
pub fn render_trace(run: Option<&RunRecord>, records: &[ClipRecord]) -> String {
    let mut out = String::new();
    if let Some(run) = run {
        let _ = writeln!(
            out,
            "video {} ({} mode, {} frames at {} fps, stride {}, {} per clip)",
            run.video_id, run.mode, run.frame_count, run.source_fps, run.stride, run.s
        );
        if let Some(f) = &run.failure {
            let _ = writeln!(out, "FAILED: {f}");
        }
        if let Some(env) = &run.env_info {
            let _ = writeln!(out, "scene: {}", env.scene_overview);
        }
        if let Some(plan) = &run.plan {
            let ops: Vec<_> = plan
                .preprocessing
                .iter()
                .filter_map(|s| s.op.tool_name())
                .collect();
            let _ = writeln!(
                out,
                "plan: preprocessing [{}], anomalies [{}]{}",
                ops.join(", "),
                plan.potential_anomalies.join(", "),
                if run.plan_fallback.is_some() {
                    " (fallback)"
                } else {
                    ""
                }
            );
        }
        out.push('\n');
    }
    for r in records {
        let _ = writeln!(
            out,
            "clip {} [{}] -> {} {:.3}{}",
            r.t,
            frame_span(&r.frame_indices),
            r.status,
            r.score,
            if r.reflected {
                format!(
                    " (reflected, {} round{})",
                    r.rounds_used,
                    if r.rounds_used == 1 { "" } else { "s" }
                )
            } else {
                String::new()
            }
        );
        if !r.applied_ops.is_empty() {
            let _ = writeln!(out, "  preprocessing: {}", r.applied_ops.join(", "));
        }
        let _ = writeln!(out, "  reasoning: {}", verdict(&r.initial));
        for round in &r.rounds {
            let _ = writeln!(
                out,
                "  round {}: insufficient reason: {}",
                round.round, round.reflection.insufficient_reason
            );
            if let Some(t) = round.experience_t {
                let _ = writeln!(out, "    experience from clip {t}");
            }
            if round.calls.is_empty() {
                let _ = writeln!(out, "    tools: none");
            }
            for call in &round.calls {
                let params: Vec<_> = call
                    .params
                    .iter()
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect();
                let _ = writeln!(
                    out,
                    "    tool {}({}) {}",
                    call.name,
                    params.join(", "),
                    if call.ok { "ok" } else { "FAILED" }
                );
            }
            if !round.reflection.new_anomaly_rule.is_empty() {
                let _ = writeln!(out, "    new rule: {}", round.reflection.new_anomaly_rule);
            }
            if !round.reflection.new_heuristic_prompt.is_empty() {
                let _ = writeln!(
                    out,
                    "    new heuristic: {}",
                    round.reflection.new_heuristic_prompt
                );
            }
            let _ = writeln!(out, "    refined: {}", verdict(&round.result));
        }
    }
    out
}

/// Files of one finished video.
pub fn write_run(
    dir: &Path,
    run: &RunRecord,
    records: &[ClipRecord],
    timeline: &ScoreTimeline,
) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join(RUN_FILE), run)?;
    write_trace(&dir.join(TRACE_FILE), records)?;
    write_json(&dir.join(TIMELINE_FILE), timeline)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reflection::{ReflectionResult, ToolCallRecord};

    fn record() -> ClipRecord {
        let insufficient = ReasoningResult::new(Status::Insufficient, 0.5, "too dark");
        let abnormal = ReasoningResult::new(Status::Abnormal, 0.9, "fire");
        ClipRecord {
            t: 3,
            frame_indices: vec![15, 16, 17, 18, 19],
            applied_ops: vec![],
            initial: insufficient.clone(),
            status: Status::Abnormal,
            score: 0.9,
            reason: "fire".into(),
            reflected: true,
            rounds_used: 1,
            tool_calls: vec!["brighten".into()],
            rounds: vec![ReflectionRound {
                round: 1,
                experience_t: None,
                reflection: ReflectionResult::empty("too dark"),
                calls: vec![ToolCallRecord {
                    name: "brighten".into(),
                    params: Default::default(),
                    ok: true,
                    note: String::new(),
                }],
                result: abnormal,
            }],
        }
    }

    #[test]
    fn trace_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(TRACE_FILE);
        write_trace(&path, &[record()]).unwrap();
        assert_eq!(read_trace(&path).unwrap(), [record()]);
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.contains("\"score\":0.900000"));
    }

    #[test]
    fn rendering_names_tools() {
        let text = render_trace(None, &[record()]);
        assert!(text.contains("clip 3 [frames 15-19] -> Abnormal 0.900 (reflected, 1 round)"));
        assert!(text.contains("tool brighten() ok"));
    }
}
