//! Keyframe sampling, environment perception and strategy planning.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::frames::FrameRef;
use crate::gateway::{Gateway, GatewayError, Role, SchemaName, StructuredValue};
use crate::knowledge::{split_list, RuleSet};
use crate::prompts::{PromptSet, TemplateError};
use crate::query::UserQuery;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Offline,
    Online,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Offline => "offline",
            Mode::Online => "online",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "offline" => Ok(Mode::Offline),
            "online" => Ok(Mode::Online),
            other => Err(format!(
                "unknown mode `{other}` (expected offline or online)"
            )),
        }
    }
}

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("no keyframes to perceive")]
    NoKeyframes,
    #[error("perception failed: {0}")]
    Perception(#[source] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyframeSet {
    pub indices: Vec<usize>,
    pub m: usize,
}

/// Offline: `round(i·(N−1)/(M−1))` for `i in 0..M` (halves round up),
/// duplicates removed. Online: the first `min(M, N)` frames.
pub fn sample_keyframes(frame_count: usize, m: usize, mode: Mode) -> KeyframeSet {
    let m = m.max(1);
    let indices = match mode {
        Mode::Online => (0..m.min(frame_count)).collect(),
        Mode::Offline if frame_count == 0 => Vec::new(),
        Mode::Offline if m == 1 => vec![0],
        Mode::Offline => {
            let (span, steps) = (frame_count - 1, m - 1);
            let mut out: Vec<usize> = (0..m)
                .map(|i| (2 * i * span + steps) / (2 * steps))
                .collect();
            out.dedup();
            out
        }
    };
    KeyframeSet { indices, m }
}

pub const UNKNOWN: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvInfo {
    pub scene_overview: String,
    pub potential_anomalies: Vec<String>,
    pub weather_condition: String,
    pub video_quality: String,
}

impl EnvInfo {
    /// Reads the four fields; absent or empty ones become `"unknown"` and are
    /// named in the second return value.
    pub fn from_structured(value: &StructuredValue) -> (Self, Vec<&'static str>) {
        let mut missing = Vec::new();
        let mut text = |key: &'static str| match value.payload.get(key).map(value_text) {
            Some(s) if !s.is_empty() => s,
            _ => {
                missing.push(key);
                UNKNOWN.to_string()
            }
        };
        let scene_overview = text("scene_overview");
        let weather_condition = text("weather_condition");
        let video_quality = text("video_quality");
        let potential_anomalies = value
            .payload
            .get("potential_anomalies")
            .map(value_list)
            .unwrap_or_default();
        if potential_anomalies.is_empty() {
            missing.push("potential_anomalies");
        }
        (
            Self {
                scene_overview,
                potential_anomalies,
                weather_condition,
                video_quality,
            },
            missing,
        )
    }

    /// Fixed-order serialization; the query text for rule retrieval.
    pub fn serialize(&self) -> String {
        format!(
            "scene_overview: {}\npotential_anomalies: {}\nweather_condition: {}\nvideo_quality: {}",
            self.scene_overview,
            if self.potential_anomalies.is_empty() {
                UNKNOWN.to_string()
            } else {
                self.potential_anomalies.join(", ")
            },
            self.weather_condition,
            self.video_quality
        )
    }
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.trim().to_string(),
        Value::Null => String::new(),
        Value::Array(items) => items
            .iter()
            .map(value_text)
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(", "),
        other => other.to_string(),
    }
}

fn value_list(v: &Value) -> Vec<String> {
    let raw = match v {
        Value::Array(items) => items.iter().map(value_text).collect(),
        Value::String(s) => split_list(s),
        _ => Vec::new(),
    };
    let mut out: Vec<String> = Vec::new();
    for item in raw {
        if !item.is_empty() && !out.iter().any(|o| o.eq_ignore_ascii_case(&item)) {
            out.push(item);
        }
    }
    out
}

/// One perception call over the keyframes.
pub fn perceive(
    keyframes: &[FrameRef],
    query: &UserQuery,
    prompts: &PromptSet,
    gateway: &Gateway,
) -> Result<EnvInfo, PlannerError> {
    if keyframes.is_empty() {
        return Err(PlannerError::NoKeyframes);
    }
    let vars = BTreeMap::from([
        ("user_query", query.text.clone()),
        ("keyframe_count", keyframes.len().to_string()),
    ]);
    let prompt = prompts.render(Role::Perception, &vars)?;
    let request = gateway
        .request(Role::Perception, prompt.system, prompt.user)
        .with_images(keyframes.iter().cloned());
    let value = gateway
        .complete_structured(&request, SchemaName::EnvInfo)
        .map_err(PlannerError::Perception)?;
    let (env, missing) = EnvInfo::from_structured(&value);
    if !missing.is_empty() {
        tracing::warn!(
            ?missing,
            "perception reply lacked fields; filled with \"unknown\""
        );
    }
    Ok(env)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessOp {
    Brighten,
    Denoise,
    Deblur,
    SuperResolve,
    None,
}

impl PreprocessOp {
    pub fn tool_name(self) -> Option<&'static str> {
        match self {
            PreprocessOp::Brighten => Some("brighten"),
            PreprocessOp::Denoise => Some("denoise"),
            PreprocessOp::Deblur => Some("deblur"),
            PreprocessOp::SuperResolve => Some("super_resolve"),
            PreprocessOp::None => None,
        }
    }
}

impl FromStr for PreprocessOp {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s
            .trim()
            .to_ascii_lowercase()
            .replace([' ', '-'], "_")
            .as_str()
        {
            "brighten" | "brightness" => Ok(Self::Brighten),
            "denoise" => Ok(Self::Denoise),
            "deblur" => Ok(Self::Deblur),
            "super_resolve" | "super_resolution" => Ok(Self::SuperResolve),
            "none" | "" => Ok(Self::None),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessStep {
    pub op: PreprocessOp,
    #[serde(default)]
    pub params: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyPlan {
    pub preprocessing: Vec<PreprocessStep>,
    pub potential_anomalies: Vec<String>,
    pub heuristic_prompts: BTreeMap<String, Vec<String>>,
}

impl StrategyPlan {
    /// No preprocessing and one generic reasoning step per anomaly.
    pub fn minimal(anomalies: &[String]) -> Self {
        Self {
            preprocessing: Vec::new(),
            potential_anomalies: anomalies.to_vec(),
            heuristic_prompts: anomalies
                .iter()
                .map(|a| {
                    (
                        a.clone(),
                        vec![format!("Look for visual evidence of {a} and check it against the anomaly rules.")],
                    )
                })
                .collect(),
        }
    }

    /// Builds a plan from a planning reply, enforcing the plan invariants.
    /// `fallback_anomalies` fill in an empty anomaly list.
    pub fn from_structured(value: &StructuredValue, fallback_anomalies: &[String]) -> Self {
        let mut preprocessing = Vec::new();
        let steps = match value.payload.get("preprocessing") {
            Some(Value::Array(items)) => items.clone(),
            Some(Value::String(s)) => split_list(s).into_iter().map(Value::from).collect(),
            _ => Vec::new(),
        };
        for step in steps {
            let (name, params) = match &step {
                Value::String(s) => (s.clone(), Map::new()),
                Value::Object(o) => (
                    o.get("op")
                        .or_else(|| o.get("name"))
                        .map(value_text)
                        .unwrap_or_default(),
                    o.get("params")
                        .and_then(Value::as_object)
                        .cloned()
                        .unwrap_or_default(),
                ),
                _ => continue,
            };
            match name.parse::<PreprocessOp>() {
                Ok(PreprocessOp::None) => {}
                Ok(op) => preprocessing.push(PreprocessStep { op, params }),
                Err(()) => tracing::warn!(op = %name, "dropping unknown preprocessing op"),
            }
        }

        let mut potential_anomalies = value
            .payload
            .get("potential_anomalies")
            .map(value_list)
            .unwrap_or_default();
        if potential_anomalies.is_empty() {
            potential_anomalies = fallback_anomalies.to_vec();
        }

        let mut heuristic_prompts = BTreeMap::new();
        match value.payload.get("heuristic_prompts") {
            Some(Value::Object(map)) => {
                for (key, steps) in map {
                    let Some(anomaly) = potential_anomalies
                        .iter()
                        .find(|a| a.eq_ignore_ascii_case(key.trim()))
                    else {
                        tracing::warn!(%key, "dropping heuristic prompt for an anomaly outside the plan");
                        continue;
                    };
                    let steps = value_steps(steps);
                    if !steps.is_empty() {
                        heuristic_prompts.insert(anomaly.clone(), steps);
                    }
                }
            }
            Some(flat @ (Value::Array(_) | Value::String(_))) => {
                let steps = value_steps(flat);
                if !steps.is_empty() {
                    for a in &potential_anomalies {
                        heuristic_prompts.insert(a.clone(), steps.clone());
                    }
                }
            }
            _ => {}
        }
        Self {
            preprocessing,
            potential_anomalies,
            heuristic_prompts,
        }
    }

    pub fn render_anomalies(&self) -> String {
        if self.potential_anomalies.is_empty() {
            "(none)".into()
        } else {
            self.potential_anomalies.join(", ")
        }
    }

    /// Per-anomaly numbered steps, anomalies in plan order.
    pub fn render_heuristics(&self) -> String {
        let mut out = Vec::new();
        for a in &self.potential_anomalies {
            if let Some(steps) = self.heuristic_prompts.get(a) {
                out.push(format!("{a}:"));
                out.extend(
                    steps
                        .iter()
                        .enumerate()
                        .map(|(i, s)| format!("  {}. {s}", i + 1)),
                );
            }
        }
        if out.is_empty() {
            "(none)".into()
        } else {
            out.join("\n")
        }
    }

    pub fn render(&self) -> String {
        let ops: Vec<_> = self
            .preprocessing
            .iter()
            .filter_map(|s| s.op.tool_name())
            .collect();
        format!(
            "preprocessing: {}\npotential_anomalies: {}\nheuristic_prompts:\n{}",
            if ops.is_empty() {
                "(none)".to_string()
            } else {
                ops.join(", ")
            },
            self.render_anomalies(),
            self.render_heuristics()
        )
    }
}

fn value_steps(v: &Value) -> Vec<String> {
    match v {
        Value::Array(items) => items
            .iter()
            .map(value_text)
            .filter(|s| !s.is_empty())
            .collect(),
        Value::String(s) => s
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect(),
        _ => Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub plan: StrategyPlan,
    /// Why the minimal plan was used, when it was.
    pub fallback: Option<String>,
}

/// One planning call. Any model failure yields [`StrategyPlan::minimal`]
/// over the perceived anomalies (or the query's categories when perception
/// listed none).
pub fn plan_strategy(
    query: &UserQuery,
    env: &EnvInfo,
    rules: &RuleSet,
    prompts: &PromptSet,
    gateway: &Gateway,
) -> Result<PlanOutcome, PlannerError> {
    let anomalies = if env.potential_anomalies.is_empty() {
        query.categories.clone()
    } else {
        env.potential_anomalies.clone()
    };
    let vars = BTreeMap::from([
        ("user_query", query.text.clone()),
        ("env_info", env.serialize()),
        ("rules", rules.render()),
    ]);
    let prompt = prompts.render(Role::Planning, &vars)?;
    let request = gateway.request(Role::Planning, prompt.system, prompt.user);
    Ok(
        match gateway.complete_structured(&request, SchemaName::StrategyPlan) {
            Ok(value) => PlanOutcome {
                plan: StrategyPlan::from_structured(&value, &anomalies),
                fallback: None,
            },
            Err(e) => {
                tracing::warn!(error = %e, "planning failed; using the minimal plan");
                PlanOutcome {
                    plan: StrategyPlan::minimal(&anomalies),
                    fallback: Some(e.to_string()),
                }
            }
        },
    )
}
