//! Bounded reflection over Insufficient verdicts: experience lookup, a
//! reflection plan, tool invocation and refined reasoning, for at most `r`
//! rounds per clip.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::frames::{FrameRef, FrameStore};
use crate::gateway::{Gateway, Role, SchemaName, StructuredValue};
use crate::memory::{LongCoM, MemoryUnit, ShortCoM};
use crate::prompts::{PromptSet, TemplateError};
use crate::reasoning::{
    base_enhancement, reason_with, reasoning_vars, EnhancedClip, ReasoningResult, Status,
    VideoContext,
};
use crate::tools::{FrameEmbedder, ToolContext, ToolEffect, ToolRegistry};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    #[serde(default)]
    pub params: Map<String, Value>,
}

/// `name(k=v,...)` with keys in map order.
impl fmt::Display for ToolCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let params: Vec<_> = self
            .params
            .iter()
            .map(|(k, v)| match v {
                Value::String(s) => format!("{k}={s}"),
                other => format!("{k}={other}"),
            })
            .collect();
        write!(f, "{}({})", self.name, params.join(","))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReflectionResult {
    pub insufficient_reason: String,
    #[serde(default)]
    pub tools_to_use: Vec<ToolCall>,
    #[serde(default)]
    pub new_anomaly_rule: String,
    #[serde(default)]
    pub new_heuristic_prompt: String,
}

impl ReflectionResult {
    /// Result used when the reflection reply is unusable.
    pub fn empty(insufficient_reason: &str) -> Self {
        Self {
            insufficient_reason: insufficient_reason.to_string(),
            ..Default::default()
        }
    }

    /// Reads a reflection payload, dropping tools absent from `registry`.
    /// An empty reason falls back to `initial_reason`.
    pub fn from_structured(
        value: &StructuredValue,
        registry: &ToolRegistry,
        initial_reason: &str,
    ) -> Self {
        let text = |key: &str| match value.payload.get(key) {
            Some(Value::String(s)) => s.trim().to_string(),
            Some(Value::Null) | None => String::new(),
            Some(other) => other.to_string(),
        };
        let mut tools_to_use = Vec::new();
        if let Some(Value::Array(items)) = value.payload.get("tools_to_use") {
            for item in items {
                let call = match item {
                    Value::String(name) => ToolCall {
                        name: name.trim().to_string(),
                        params: Map::new(),
                    },
                    Value::Object(o) => ToolCall {
                        name: o
                            .get("name")
                            .or_else(|| o.get("tool"))
                            .and_then(Value::as_str)
                            .unwrap_or_default()
                            .trim()
                            .to_string(),
                        params: o
                            .get("params")
                            .and_then(Value::as_object)
                            .cloned()
                            .unwrap_or_default(),
                    },
                    _ => continue,
                };
                if registry.contains(&call.name) {
                    tools_to_use.push(call);
                } else {
                    tracing::warn!(tool = %call.name, "dropping unknown tool from reflection plan");
                }
            }
        }
        let mut insufficient_reason = text("insufficient_reason");
        if insufficient_reason.is_empty() {
            insufficient_reason = initial_reason.to_string();
        }
        Self {
            insufficient_reason,
            tools_to_use,
            new_anomaly_rule: text("new_anomaly_rule"),
            new_heuristic_prompt: text("new_heuristic_prompt"),
        }
    }

    pub fn summary(&self) -> String {
        let tools: Vec<_> = self.tools_to_use.iter().map(ToString::to_string).collect();
        format!(
            "reason={} tools=[{}]",
            self.insufficient_reason.replace('\n', " "),
            tools.join(", ")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRecord {
    pub name: String,
    /// Parameters after schema resolution, or as requested when resolution failed.
    pub params: Map<String, Value>,
    pub ok: bool,
    pub note: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ToolOutput {
    pub text_enhancement_info: String,
    pub enhanced_clip_refs: Vec<FrameRef>,
    pub retrieved_frame_refs: Vec<FrameRef>,
    pub calls: Vec<ToolCallRecord>,
}

impl ToolOutput {
    pub fn is_empty(&self) -> bool {
        self.text_enhancement_info.is_empty()
            && self.enhanced_clip_refs.is_empty()
            && self.retrieved_frame_refs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionBudget {
    pub r: usize,
    pub rounds_used: usize,
}

impl ReflectionBudget {
    pub fn new(r: usize) -> Self {
        Self {
            r: r.max(1),
            rounds_used: 0,
        }
    }

    pub fn exhausted(&self) -> bool {
        self.rounds_used >= self.r
    }
}

/// What tools need beyond the clip itself.
pub struct ToolDeps<'a> {
    pub registry: &'a ToolRegistry,
    pub frames: &'a FrameStore,
    pub frame_embedder: &'a dyn FrameEmbedder,
    pub top_s: usize,
}

/// Runs `calls` in order. Frame transforms chain on the clip; other tools
/// contribute text and retrieved frames. Failures are noted and skipped.
pub fn invoke_tools(
    calls: &[ToolCall],
    clip: &[FrameRef],
    visual_memory: &[FrameRef],
    default_query: &str,
    default_categories: &[String],
    deps: &ToolDeps<'_>,
) -> ToolOutput {
    let mut out = ToolOutput::default();
    let mut current = clip.to_vec();
    let mut notes = Vec::new();
    for call in calls {
        let Some(tool) = deps.registry.get(&call.name) else {
            notes.push(format!("{} failed: no such tool", call.name));
            out.calls.push(ToolCallRecord {
                name: call.name.clone(),
                params: call.params.clone(),
                ok: false,
                note: "no such tool".into(),
            });
            continue;
        };
        let ctx = ToolContext {
            frames: deps.frames,
            clip: &current,
            visual_memory,
            frame_embedder: deps.frame_embedder,
            default_query,
            default_categories,
            top_s: deps.top_s,
        };
        let resolved = tool.spec().resolve(&call.params);
        let record_params = resolved
            .as_ref()
            .map(|p| p.0.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
            .unwrap_or_else(|_| call.params.clone());
        let outcome = resolved.and_then(|params| tool.invoke(&ctx, &params));
        let (ok, note) = match outcome {
            Ok(ToolEffect::Frames { frames, note }) => {
                current = frames;
                out.enhanced_clip_refs = current.clone();
                (true, note)
            }
            Ok(ToolEffect::Retrieved { frames, note }) => {
                for f in frames {
                    if !out.retrieved_frame_refs.contains(&f) {
                        out.retrieved_frame_refs.push(f);
                    }
                }
                (true, note)
            }
            Ok(ToolEffect::Text(text)) => (true, text),
            Err(e) => {
                tracing::warn!(tool = %call.name, error = %e, "tool failed");
                (false, format!("{} failed: {e}", call.name))
            }
        };
        notes.push(note.clone());
        out.calls.push(ToolCallRecord {
            name: call.name.clone(),
            params: record_params,
            ok,
            note,
        });
    }
    out.text_enhancement_info = notes.join("\n");
    out
}

/// Everything one clip's reflection needs besides the clip and memories.
pub struct ReflectionEnv<'a> {
    pub tools: ToolDeps<'a>,
    pub prompts: &'a PromptSet,
    pub gateway: &'a Gateway,
}

/// One reflection call. An unusable reply yields an empty plan.
pub fn reflect(
    clip_t: usize,
    insufficient_reason: &str,
    experience: Option<&MemoryUnit>,
    memory: &ShortCoM,
    ctx: &VideoContext,
    env: &ReflectionEnv<'_>,
) -> Result<ReflectionResult, TemplateError> {
    let tools: Vec<_> = env.tools.registry.specs().map(|s| s.describe()).collect();
    let vars = BTreeMap::from([
        ("user_query", ctx.query.text.clone()),
        ("clip_index", clip_t.to_string()),
        ("env_info", ctx.env.serialize()),
        ("plan", ctx.plan.render()),
        ("rules", ctx.render_rules()),
        ("memory", memory.render_text()),
        ("reflection_history", memory.render_reflections()),
        ("insufficient_reason", insufficient_reason.to_string()),
        (
            "experience",
            experience
                .map(MemoryUnit::render_experience)
                .unwrap_or_default(),
        ),
        ("tools", tools.join("\n")),
    ]);
    let prompt = env.prompts.render(Role::Reflection, &vars)?;
    let request = env
        .gateway
        .request(Role::Reflection, prompt.system, prompt.user);
    Ok(
        match env
            .gateway
            .complete_structured(&request, SchemaName::ReflectionResult)
        {
            Ok(value) => {
                ReflectionResult::from_structured(&value, env.tools.registry, insufficient_reason)
            }
            Err(e) => {
                tracing::warn!(t = clip_t, error = %e, "reflection unusable; continuing without tools");
                ReflectionResult::empty(insufficient_reason)
            }
        },
    )
}

/// Enhancement section of a refined prompt: the base section, summaries of
/// earlier rounds, then this round's reflection and tool results.
pub fn refined_enhancement(
    clip: &EnhancedClip,
    round: usize,
    r: usize,
    earlier: &[ReflectionRound],
    reflection: &ReflectionResult,
    output: &ToolOutput,
) -> String {
    let mut s = base_enhancement(clip);
    if !earlier.is_empty() {
        s.push_str("\nEarlier reflection rounds:");
        for e in earlier {
            let tools: Vec<_> = e.calls.iter().map(|c| c.name.as_str()).collect();
            s.push_str(&format!(
                "\n- round {}: tools [{}]; verdict {} ({})",
                e.round,
                tools.join(", "),
                e.result.status,
                e.result.reason.replace('\n', " ")
            ));
            for call in &e.calls {
                s.push_str(&format!("\n  {}", call.note.replace('\n', "\n  ")));
            }
        }
    }
    s.push_str(&format!("\nReflection round {round} of {r}:"));
    s.push_str(&format!(
        "\nInsufficient reason: {}",
        reflection.insufficient_reason
    ));
    s.push_str("\nTool results:");
    if output.text_enhancement_info.is_empty() {
        s.push_str(" (none)");
    } else {
        s.push('\n');
        s.push_str(&output.text_enhancement_info);
    }
    if !reflection.new_anomaly_rule.is_empty() {
        s.push_str(&format!(
            "\nNew anomaly rule: {}",
            reflection.new_anomaly_rule
        ));
    }
    if !reflection.new_heuristic_prompt.is_empty() {
        s.push_str(&format!(
            "\nNew heuristic prompt: {}",
            reflection.new_heuristic_prompt
        ));
    }
    s
}

/// Reasoning call over the re-enhanced clip plus retrieved frames.
#[allow(clippy::too_many_arguments)]
pub fn refined_reason(
    clip: &EnhancedClip,
    output: &ToolOutput,
    round: usize,
    r: usize,
    earlier: &[ReflectionRound],
    reflection: &ReflectionResult,
    memory: &ShortCoM,
    ctx: &VideoContext,
    prompts: &PromptSet,
    gateway: &Gateway,
) -> Result<ReasoningResult, TemplateError> {
    let enhancement = refined_enhancement(clip, round, r, earlier, reflection, output);
    let vars = reasoning_vars(clip, memory, ctx, &enhancement);
    let clip_frames = if output.enhanced_clip_refs.is_empty() {
        &clip.enhanced_frame_refs
    } else {
        &output.enhanced_clip_refs
    };
    let mut frames = clip_frames.clone();
    frames.extend(output.retrieved_frame_refs.iter().cloned());
    reason_with(&frames, &vars, memory, prompts, gateway)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionRound {
    pub round: usize,
    pub experience_t: Option<usize>,
    pub reflection: ReflectionResult,
    pub calls: Vec<ToolCallRecord>,
    pub result: ReasoningResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    /// Final verdict; Insufficient with the default score when exhausted.
    pub result: ReasoningResult,
    pub rounds: Vec<ReflectionRound>,
    pub budget: ReflectionBudget,
}

impl Resolution {
    pub fn last_reflection(&self) -> Option<&ReflectionResult> {
        self.rounds.last().map(|r| &r.reflection)
    }

    pub fn last_refined(&self) -> Option<&ReasoningResult> {
        self.rounds.last().map(|r| &r.result)
    }
}

/// Up to `r` rounds of reflect → invoke tools → refined reasoning; stops at
/// the first decided verdict. The final round's new rule and heuristic are
/// added to `ctx` for later clips.
#[allow(clippy::too_many_arguments)]
pub fn resolve_insufficient(
    initial: &ReasoningResult,
    clip: &EnhancedClip,
    memory: &mut ShortCoM,
    long: &LongCoM,
    ctx: &mut VideoContext,
    env: &ReflectionEnv<'_>,
    r: usize,
    default_score: f64,
) -> Result<Resolution, TemplateError> {
    let mut budget = ReflectionBudget::new(r);
    let mut rounds: Vec<ReflectionRound> = Vec::new();
    let mut reason = initial.reason.clone();
    let visual_memory: Vec<FrameRef> = memory.visual_frames().collect();

    while !budget.exhausted() {
        budget.rounds_used += 1;
        let round = budget.rounds_used;
        let experience = long.retrieve_experience(&reason);
        let reflection = reflect(clip.base.t, &reason, experience, memory, ctx, env)?;
        memory.push_reflection(reflection.clone());
        let output = invoke_tools(
            &reflection.tools_to_use,
            &clip.enhanced_frame_refs,
            &visual_memory,
            &reflection.insufficient_reason,
            &ctx.plan.potential_anomalies,
            &env.tools,
        );
        let result = refined_reason(
            clip,
            &output,
            round,
            budget.r,
            &rounds,
            &reflection,
            memory,
            ctx,
            env.prompts,
            env.gateway,
        )?;
        reason = result.reason.clone();
        let decided = result.status != Status::Insufficient;
        rounds.push(ReflectionRound {
            round,
            experience_t: experience.map(MemoryUnit::t),
            reflection,
            calls: output.calls,
            result,
        });
        if decided {
            break;
        }
    }

    if let Some(last) = rounds.last() {
        ctx.learn(
            &last.reflection.new_anomaly_rule,
            &last.reflection.new_heuristic_prompt,
        );
    }
    let last = &rounds.last().expect("at least one round runs").result;
    let result = if last.status == Status::Insufficient {
        ReasoningResult::new(Status::Insufficient, default_score, last.reason.clone())
    } else {
        last.clone()
    };
    Ok(Resolution {
        result,
        rounds,
        budget,
    })
}
