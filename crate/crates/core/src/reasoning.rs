//! Clip iteration, plan-directed preprocessing and tri-state clip reasoning.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::frames::{FrameRef, FrameStore};
use crate::gateway::{Gateway, Role, SchemaName, StructuredValue};
use crate::knowledge::RuleSet;
use crate::memory::ShortCoM;
use crate::planner::{EnvInfo, StrategyPlan};
use crate::prompts::{PromptSet, TemplateError};
use crate::query::UserQuery;
use crate::tools::{transform_frames, ToolRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    Normal,
    Abnormal,
    Insufficient,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Normal => "Normal",
            Status::Abnormal => "Abnormal",
            Status::Insufficient => "Insufficient",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Status {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(Status::Normal),
            "abnormal" => Ok(Status::Abnormal),
            "insufficient" => Ok(Status::Insufficient),
            other => Err(format!("unknown status `{other}`")),
        }
    }
}

pub const UNPARSEABLE_REASON: &str = "unparseable model output";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningResult {
    pub status: Status,
    pub score: f64,
    pub reason: String,
}

impl ReasoningResult {
    pub fn new(status: Status, score: f64, reason: impl Into<String>) -> Self {
        let reason = reason.into();
        Self {
            status,
            score: if score.is_finite() {
                score.clamp(0.0, 1.0)
            } else {
                0.5
            },
            reason: if reason.trim().is_empty() {
                "(no reason given)".into()
            } else {
                reason
            },
        }
    }

    /// Reads a validated `reasoning_result` payload.
    pub fn from_structured(value: &StructuredValue) -> Self {
        let status = value
            .str_field("status")
            .and_then(|s| s.parse().ok())
            .unwrap_or(Status::Insufficient);
        let score = value
            .payload
            .get("score")
            .and_then(|v| v.as_f64())
            .unwrap_or(0.5);
        let reason = value
            .str_field("reason")
            .unwrap_or_default()
            .trim()
            .to_string();
        let result = Self::new(status, score, reason);
        if result.status == Status::Abnormal && result.score < 0.5 {
            tracing::warn!(
                score = result.score,
                "Abnormal verdict with a score below 0.5"
            );
        }
        result
    }

    /// Stand-in when the model output could not be used.
    pub fn unusable(detail: Option<&str>) -> Self {
        let reason = match detail {
            Some(d) => format!("{UNPARSEABLE_REASON}: {d}"),
            None => UNPARSEABLE_REASON.to_string(),
        };
        Self::new(Status::Insufficient, 0.5, reason)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipWindow {
    pub t: usize,
    pub frame_indices: Vec<usize>,
    pub sampled_fps: f64,
}

impl ClipWindow {
    pub fn last_frame(&self) -> usize {
        *self
            .frame_indices
            .last()
            .expect("clip windows are non-empty")
    }
}

/// Sampling stride in source frames: `max(1, round(source_fps / sample_fps))`.
pub fn frame_stride(source_fps: f64, sample_fps: f64) -> usize {
    ((source_fps / sample_fps).round() as usize).max(1)
}

/// Samples every `stride`-th source frame and tiles the samples into
/// windows of `s`; the final window may be shorter.
pub fn iter_clips(
    frame_count: usize,
    source_fps: f64,
    sample_fps: f64,
    s: usize,
) -> Vec<ClipWindow> {
    let stride = frame_stride(source_fps, sample_fps);
    let sampled: Vec<usize> = (0..frame_count).step_by(stride).collect();
    sampled
        .chunks(s.max(1))
        .enumerate()
        .map(|(t, chunk)| ClipWindow {
            t,
            frame_indices: chunk.to_vec(),
            sampled_fps: source_fps / stride as f64,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancedClip {
    pub base: ClipWindow,
    pub enhanced_frame_refs: Vec<FrameRef>,
    pub applied_ops: Vec<String>,
}

impl EnhancedClip {
    pub fn passthrough(base: ClipWindow, video_id: &str) -> Self {
        let refs = base
            .frame_indices
            .iter()
            .map(|&i| FrameRef::source(video_id, i))
            .collect();
        Self {
            base,
            enhanced_frame_refs: refs,
            applied_ops: Vec::new(),
        }
    }
}

/// Applies the plan's preprocessing steps in order. A failing step is
/// logged and skipped.
pub fn preprocess_clip(
    clip: &ClipWindow,
    video_id: &str,
    plan: &StrategyPlan,
    registry: &ToolRegistry,
    frames: &FrameStore,
) -> EnhancedClip {
    let mut out = EnhancedClip::passthrough(clip.clone(), video_id);
    for step in &plan.preprocessing {
        let Some(name) = step.op.tool_name() else {
            continue;
        };
        let result = registry
            .get(name)
            .ok_or_else(|| format!("tool `{name}` is not registered"))
            .and_then(|tool| {
                let op = tool
                    .pixel_op()
                    .ok_or_else(|| format!("tool `{name}` does not transform frames"))?;
                let params = tool
                    .spec()
                    .resolve(&step.params)
                    .map_err(|e| e.to_string())?;
                transform_frames(frames, name, op, &out.enhanced_frame_refs, &params)
                    .map_err(|e| e.to_string())
            });
        match result {
            Ok(refs) => {
                out.enhanced_frame_refs = refs;
                out.applied_ops.push(name.to_string());
            }
            Err(error) => {
                tracing::warn!(t = clip.t, op = name, %error, "skipping preprocessing step")
            }
        }
    }
    out
}

/// Planning-time context shared by every clip of one video, plus the rules
/// and reasoning steps learned through reflection so far.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoContext {
    pub query: UserQuery,
    pub env: EnvInfo,
    pub plan: StrategyPlan,
    pub rules: RuleSet,
    pub learned_rules: Vec<String>,
    pub learned_heuristics: Vec<String>,
}

impl VideoContext {
    pub fn new(query: UserQuery, env: EnvInfo, plan: StrategyPlan, rules: RuleSet) -> Self {
        Self {
            query,
            env,
            plan,
            rules,
            learned_rules: Vec::new(),
            learned_heuristics: Vec::new(),
        }
    }

    pub fn learn(&mut self, rule: &str, heuristic: &str) {
        let add = |list: &mut Vec<String>, item: &str| {
            let item = item.trim();
            if !item.is_empty() && !list.iter().any(|x| x == item) {
                list.push(item.to_string());
            }
        };
        add(&mut self.learned_rules, rule);
        add(&mut self.learned_heuristics, heuristic);
    }

    pub fn render_rules(&self) -> String {
        let mut out = self.rules.render();
        if !self.learned_rules.is_empty() {
            out.push_str("\nLearned from reflection:");
            for r in &self.learned_rules {
                out.push_str(&format!("\n- {r}"));
            }
        }
        out
    }

    pub fn render_heuristics(&self) -> String {
        let mut out = self.plan.render_heuristics();
        if !self.learned_heuristics.is_empty() {
            out.push_str("\nLearned from reflection:");
            for h in &self.learned_heuristics {
                out.push_str(&format!("\n- {h}"));
            }
        }
        out
    }
}

/// Text for the prompt's enhancement section before any reflection.
pub fn base_enhancement(clip: &EnhancedClip) -> String {
    if clip.applied_ops.is_empty() {
        "Preprocessing applied: none".into()
    } else {
        format!("Preprocessing applied: {}", clip.applied_ops.join(", "))
    }
}

pub fn reasoning_vars(
    clip: &EnhancedClip,
    memory: &ShortCoM,
    ctx: &VideoContext,
    enhancement: &str,
) -> BTreeMap<&'static str, String> {
    let indices: Vec<_> = clip
        .base
        .frame_indices
        .iter()
        .map(usize::to_string)
        .collect();
    BTreeMap::from([
        ("user_query", ctx.query.text.clone()),
        ("clip_index", clip.base.t.to_string()),
        ("frame_indices", indices.join(", ")),
        ("memory", memory.render_text()),
        ("potential_anomalies", ctx.plan.render_anomalies()),
        ("rules", ctx.render_rules()),
        ("heuristic_prompts", ctx.render_heuristics()),
        ("enhancement", enhancement.to_string()),
    ])
}

/// One reasoning call. Attached images are `frames` then the visual memory.
/// Output that cannot be used becomes an Insufficient verdict.
pub fn reason_with(
    frames: &[FrameRef],
    vars: &BTreeMap<&'static str, String>,
    memory: &ShortCoM,
    prompts: &PromptSet,
    gateway: &Gateway,
) -> Result<ReasoningResult, TemplateError> {
    let prompt = prompts.render(Role::Reasoning, vars)?;
    let request = gateway
        .request(Role::Reasoning, prompt.system, prompt.user)
        .with_images(frames.iter().cloned().chain(memory.visual_frames()));
    Ok(
        match gateway.complete_structured(&request, SchemaName::ReasoningResult) {
            Ok(value) => ReasoningResult::from_structured(&value),
            Err(e) if e.is_output_error() => {
                tracing::warn!(error = %e, "reasoning output unusable");
                ReasoningResult::unusable(None)
            }
            Err(e) => {
                tracing::warn!(error = %e, "reasoning call failed");
                ReasoningResult::unusable(Some(&e.to_string()))
            }
        },
    )
}

pub fn reason_clip(
    clip: &EnhancedClip,
    memory: &ShortCoM,
    ctx: &VideoContext,
    prompts: &PromptSet,
    gateway: &Gateway,
) -> Result<ReasoningResult, TemplateError> {
    let vars = reasoning_vars(clip, memory, ctx, &base_enhancement(clip));
    reason_with(&clip.enhanced_frame_refs, &vars, memory, prompts, gateway)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipScore {
    pub t: usize,
    pub score: f64,
    pub status: Status,
    pub reflected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTimeline {
    pub video_id: String,
    pub per_clip: Vec<ClipScore>,
    /// Clip scores expanded to every source frame.
    pub per_frame: Vec<f64>,
}
