//! Enhancement and analysis tools available to preprocessing and reflection.
//!
//! The default registry carries eight tools: four deterministic pixel
//! operations (`brighten`, `denoise`, `deblur`, `zoom`), `super_resolve`
//! backed by an external service, `image_retrieve` over the visual memory,
//! and the external `object_detect` and `web_search` services. External
//! services have file-backed stubs so the engine runs offline.

mod external;
mod pixel;
mod retrieve;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::frames::{FrameError, FrameRef, FrameStore};

pub use external::{
    object_detect, validate_detections, web_search, BicubicSuperResolver, Detection, Detector,
    HttpDetector, HttpSearch, HttpSuperResolver, SearchHit, StubDetector, StubSearch,
    SuperResolver, WebSearch,
};
pub use pixel::{brighten, deblur, denoise, gaussian_kernel, zoom, PixelOp};
pub use retrieve::{image_retrieve, CaptionEmbedder, FrameEmbedder};

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("tool `{0}` is already registered")]
    DuplicateName(String),
    #[error("no tool named `{0}`")]
    NotFound(String),
    #[error("bad parameters for `{tool}`: {message}")]
    BadParams { tool: String, message: String },
    #[error("tool `{0}` does not transform frames")]
    NotPixel(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("visual memory is empty")]
    EmptyMemory,
    #[error("service failure: {0}")]
    Network(String),
    #[error("{0}")]
    Failed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    Pixel,
    Retrieval,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    Float,
    Int,
    Text,
    TextList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    #[serde(rename = "type")]
    pub ty: ParamType,
    pub default: Value,
    /// Inclusive numeric bounds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub range: Option<(f64, f64)>,
    /// Exhaustive legal values, when the parameter is discrete.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<f64>>,
}

impl ParamSpec {
    pub fn float(default: f64, lo: f64, hi: f64) -> Self {
        Self {
            ty: ParamType::Float,
            default: Value::from(default),
            range: Some((lo, hi)),
            choices: None,
        }
    }

    pub fn int(default: i64, lo: i64, hi: i64) -> Self {
        Self {
            ty: ParamType::Int,
            default: Value::from(default),
            range: Some((lo as f64, hi as f64)),
            choices: None,
        }
    }

    pub fn int_choice(default: i64, choices: &[i64]) -> Self {
        Self {
            ty: ParamType::Int,
            default: Value::from(default),
            range: None,
            choices: Some(choices.iter().map(|&c| c as f64).collect()),
        }
    }

    pub fn text(default: &str) -> Self {
        Self {
            ty: ParamType::Text,
            default: Value::from(default),
            range: None,
            choices: None,
        }
    }

    pub fn text_list() -> Self {
        Self {
            ty: ParamType::TextList,
            default: Value::Array(Vec::new()),
            range: None,
            choices: None,
        }
    }

    fn coerce(&self, raw: &Value) -> Result<Value, String> {
        match self.ty {
            ParamType::Float | ParamType::Int => {
                let x = match raw {
                    Value::Number(n) => n.as_f64(),
                    Value::String(s) => s.trim().parse().ok(),
                    _ => None,
                }
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| format!("expected a number, got {raw}"))?;
                if self.ty == ParamType::Int && x.fract() != 0.0 {
                    return Err(format!("expected an integer, got {x}"));
                }
                if let Some((lo, hi)) = self.range {
                    if !(lo..=hi).contains(&x) {
                        return Err(format!("{x} outside [{lo}, {hi}]"));
                    }
                }
                if let Some(choices) = &self.choices {
                    if !choices.contains(&x) {
                        return Err(format!("{x} not one of {choices:?}"));
                    }
                }
                Ok(if self.ty == ParamType::Int {
                    Value::from(x as i64)
                } else {
                    Value::from(x)
                })
            }
            ParamType::Text => match raw {
                Value::String(s) => Ok(Value::from(s.clone())),
                Value::Number(_) | Value::Bool(_) => Ok(Value::from(raw.to_string())),
                _ => Err(format!("expected text, got {raw}")),
            },
            ParamType::TextList => match raw {
                Value::Array(items) => Ok(Value::Array(
                    items
                        .iter()
                        .filter_map(Value::as_str)
                        .map(|s| Value::from(s.trim()))
                        .collect(),
                )),
                Value::String(s) => Ok(Value::Array(
                    crate::knowledge::split_list(s)
                        .into_iter()
                        .map(Value::from)
                        .collect(),
                )),
                _ => Err(format!("expected a list of text, got {raw}")),
            },
        }
    }
}

/// Fully resolved parameters: every schema key present and validated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Params(pub BTreeMap<String, Value>);

impl Params {
    pub fn f64(&self, key: &str) -> f64 {
        self.0.get(key).and_then(Value::as_f64).unwrap_or(0.0)
    }

    pub fn usize(&self, key: &str) -> usize {
        self.0.get(key).and_then(Value::as_u64).unwrap_or(0) as usize
    }

    pub fn text(&self, key: &str) -> &str {
        self.0.get(key).and_then(Value::as_str).unwrap_or("")
    }

    pub fn list(&self, key: &str) -> Vec<String> {
        self.0
            .get(key)
            .and_then(Value::as_array)
            .map(|a| {
                a.iter()
                    .filter_map(Value::as_str)
                    .map(str::to_string)
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// `k=v` pairs in key order; part of derived frame refs.
impl fmt::Display for Params {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (k, v) in &self.0 {
            if !first {
                f.write_str(",")?;
            }
            first = false;
            match v {
                Value::String(s) => write!(f, "{k}={s}")?,
                other => write!(f, "{k}={other}")?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub kind: ToolKind,
    pub description: String,
    pub param_schema: BTreeMap<String, ParamSpec>,
}

impl ToolSpec {
    pub fn new(
        name: &str,
        kind: ToolKind,
        description: &str,
        params: impl IntoIterator<Item = (&'static str, ParamSpec)>,
    ) -> Self {
        Self {
            name: name.to_string(),
            kind,
            description: description.to_string(),
            param_schema: params
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }
    }

    /// Validates `raw` against the schema and fills defaults. Keys outside
    /// the schema are ignored.
    pub fn resolve(&self, raw: &Map<String, Value>) -> Result<Params, ToolError> {
        let mut out = BTreeMap::new();
        for (name, spec) in &self.param_schema {
            let value = match raw.get(name) {
                None | Some(Value::Null) => spec.default.clone(),
                Some(v) => spec.coerce(v).map_err(|message| ToolError::BadParams {
                    tool: self.name.clone(),
                    message: format!("`{name}`: {message}"),
                })?,
            };
            out.insert(name.clone(), value);
        }
        for key in raw.keys().filter(|k| !self.param_schema.contains_key(*k)) {
            tracing::warn!(tool = %self.name, %key, "ignoring unknown tool parameter");
        }
        Ok(Params(out))
    }

    /// One-line description for prompts.
    pub fn describe(&self) -> String {
        let params: Vec<_> = self
            .param_schema
            .iter()
            .map(|(k, p)| match (p.range, &p.choices) {
                (Some((lo, hi)), _) => format!("{k} in [{lo}, {hi}], default {}", p.default),
                (_, Some(c)) => format!("{k} one of {c:?}, default {}", p.default),
                _ => format!("{k}, default {}", p.default),
            })
            .collect();
        format!(
            "- {}: {} Params: {}",
            self.name,
            self.description,
            if params.is_empty() {
                "none".into()
            } else {
                params.join("; ")
            }
        )
    }
}

/// Everything a tool may read while running on one clip.
pub struct ToolContext<'a> {
    pub frames: &'a FrameStore,
    /// The clip as currently enhanced; frame transforms chain on these.
    pub clip: &'a [FrameRef],
    pub visual_memory: &'a [FrameRef],
    pub frame_embedder: &'a dyn FrameEmbedder,
    /// Fallback text for query-style tools (the insufficient reason).
    pub default_query: &'a str,
    /// Fallback categories for detection (the plan's potential anomalies).
    pub default_categories: &'a [String],
    /// Number of frames `image_retrieve` returns by default.
    pub top_s: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ToolEffect {
    /// The clip's frames after a transform, same length as the input clip.
    Frames {
        frames: Vec<FrameRef>,
        note: String,
    },
    /// Frames pulled from memory plus a summary of why.
    Retrieved {
        frames: Vec<FrameRef>,
        note: String,
    },
    Text(String),
}

pub trait Tool: Send + Sync {
    fn spec(&self) -> &ToolSpec;

    fn invoke(&self, ctx: &ToolContext<'_>, params: &Params) -> Result<ToolEffect, ToolError>;

    /// Present for tools that map one frame to one frame.
    fn pixel_op(&self) -> Option<&dyn PixelOp> {
        None
    }
}

/// Adapts a [`PixelOp`] into a clip-level tool; outputs are cached in the
/// frame store under derived refs.
pub struct FrameTransformTool {
    spec: ToolSpec,
    op: Box<dyn PixelOp>,
}

impl FrameTransformTool {
    pub fn new(spec: ToolSpec, op: Box<dyn PixelOp>) -> Self {
        Self { spec, op }
    }
}

/// Applies `op` to every frame of `clip`, reusing cached results.
pub fn transform_frames(
    store: &FrameStore,
    name: &str,
    op: &dyn PixelOp,
    clip: &[FrameRef],
    params: &Params,
) -> Result<Vec<FrameRef>, ToolError> {
    let rendered = params.to_string();
    clip.iter()
        .map(|frame| {
            let derived = frame.derive(name, &rendered);
            if !store.contains(&derived) {
                let input = store.get(frame)?;
                store.insert(derived.clone(), op.apply(&input, params)?);
            }
            Ok(derived)
        })
        .collect()
}

impl Tool for FrameTransformTool {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn invoke(&self, ctx: &ToolContext<'_>, params: &Params) -> Result<ToolEffect, ToolError> {
        let frames = transform_frames(
            ctx.frames,
            &self.spec.name,
            self.op.as_ref(),
            ctx.clip,
            params,
        )?;
        Ok(ToolEffect::Frames {
            note: format!(
                "{}({params}) applied to {} frames",
                self.spec.name,
                frames.len()
            ),
            frames,
        })
    }

    fn pixel_op(&self) -> Option<&dyn PixelOp> {
        Some(self.op.as_ref())
    }
}

struct DetectTool {
    spec: ToolSpec,
    client: Arc<dyn Detector>,
}

impl Tool for DetectTool {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn invoke(&self, ctx: &ToolContext<'_>, params: &Params) -> Result<ToolEffect, ToolError> {
        let mut categories = params.list("categories");
        if categories.is_empty() {
            categories = ctx.default_categories.to_vec();
        }
        let images = ctx
            .clip
            .iter()
            .map(|r| Ok((r.clone(), ctx.frames.get(r)?)))
            .collect::<Result<Vec<_>, ToolError>>()?;
        let detections = object_detect(&images, &categories, self.client.as_ref())?;
        let mut text = format!("object_detect [{}]:", categories.join(", "));
        if detections.is_empty() {
            text.push_str(" no detections");
        }
        for d in &detections {
            text.push_str(&format!(
                "\n- frame {}: {} (confidence {:.2}) at x={:.0} y={:.0} w={:.0} h={:.0}",
                d.frame_index, d.category, d.confidence, d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3]
            ));
        }
        Ok(ToolEffect::Text(text))
    }
}

struct SearchTool {
    spec: ToolSpec,
    client: Arc<dyn WebSearch>,
}

impl Tool for SearchTool {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn invoke(&self, ctx: &ToolContext<'_>, params: &Params) -> Result<ToolEffect, ToolError> {
        let query = match params.text("query") {
            "" => ctx.default_query,
            q => q,
        };
        Ok(ToolEffect::Text(web_search(query, self.client.as_ref())?))
    }
}

struct RetrieveTool {
    spec: ToolSpec,
}

impl Tool for RetrieveTool {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn invoke(&self, ctx: &ToolContext<'_>, params: &Params) -> Result<ToolEffect, ToolError> {
        let query = match params.text("query") {
            "" => ctx.default_query,
            q => q,
        };
        let top_s = match params.usize("top_s") {
            0 => ctx.top_s,
            n => n,
        };
        let hits = image_retrieve(
            query,
            ctx.visual_memory,
            top_s,
            ctx.frames,
            ctx.frame_embedder,
        )?;
        let listed: Vec<_> = hits
            .iter()
            .map(|(r, s)| format!("{} ({s:.3})", r.index()))
            .collect();
        Ok(ToolEffect::Retrieved {
            note: format!("image_retrieve \"{query}\": frames {}", listed.join(", ")),
            frames: hits.into_iter().map(|(r, _)| r).collect(),
        })
    }
}

/// External services behind the non-pixel tools.
#[derive(Clone)]
pub struct ToolClients {
    pub detector: Arc<dyn Detector>,
    pub search: Arc<dyn WebSearch>,
    pub super_resolver: Arc<dyn SuperResolver>,
}

impl Default for ToolClients {
    fn default() -> Self {
        Self {
            detector: Arc::new(StubDetector::default()),
            search: Arc::new(StubSearch::default()),
            super_resolver: Arc::new(BicubicSuperResolver),
        }
    }
}

pub const DEFAULT_TOOL_NAMES: [&str; 8] = [
    "brighten",
    "deblur",
    "denoise",
    "image_retrieve",
    "object_detect",
    "super_resolve",
    "web_search",
    "zoom",
];

#[derive(Clone, Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, Arc<dyn Tool>>,
}

impl fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.tools.keys()).finish()
    }
}

impl ToolRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_defaults(clients: ToolClients) -> Self {
        let mut reg = Self::empty();
        let pixel = |name: &str,
                     desc: &str,
                     params: Vec<(&'static str, ParamSpec)>,
                     op: Box<dyn PixelOp>| {
            Arc::new(FrameTransformTool::new(
                ToolSpec::new(name, ToolKind::Pixel, desc, params),
                op,
            )) as Arc<dyn Tool>
        };
        let tools: Vec<Arc<dyn Tool>> = vec![
            pixel(
                "brighten",
                "Contrast-limited adaptive histogram equalization of the lightness channel; for dark or washed-out footage.",
                vec![("clip_limit", ParamSpec::float(2.0, 0.1, 40.0)), ("tile", ParamSpec::int(8, 1, 32))],
                Box::new(pixel::Brighten),
            ),
            pixel(
                "denoise",
                "Fast non-local means denoising; for grainy or noisy footage.",
                vec![("strength", ParamSpec::float(10.0, 1.0, 50.0))],
                Box::new(pixel::Denoise),
            ),
            pixel(
                "deblur",
                "Unsharp masking (frame plus alpha times frame minus its Gaussian blur); for motion or focus blur.",
                vec![("alpha", ParamSpec::float(1.0, 0.0, 5.0)), ("sigma", ParamSpec::float(1.0, 0.1, 10.0))],
                Box::new(pixel::Deblur),
            ),
            pixel(
                "zoom",
                "Bicubic magnification of the whole frame by a factor; for small or distant activity.",
                vec![("factor", ParamSpec::float(2.0, 1.0, 4.0))],
                Box::new(pixel::Zoom),
            ),
            Arc::new(FrameTransformTool::new(
                ToolSpec::new(
                    "super_resolve",
                    ToolKind::External,
                    "Learned super-resolution of low-resolution frames.",
                    [("scale", ParamSpec::int_choice(2, &[2, 4]))],
                ),
                Box::new(external::SuperResolveOp(Arc::clone(&clients.super_resolver))),
            )),
            Arc::new(RetrieveTool {
                spec: ToolSpec::new(
                    "image_retrieve",
                    ToolKind::Retrieval,
                    "Finds the remembered frames most similar to a text query.",
                    [("query", ParamSpec::text("")), ("top_s", ParamSpec::int(0, 0, 64))],
                ),
            }),
            Arc::new(DetectTool {
                spec: ToolSpec::new(
                    "object_detect",
                    ToolKind::External,
                    "Open-vocabulary detection of the given categories, returning boxes and labels.",
                    [("categories", ParamSpec::text_list())],
                ),
                client: clients.detector,
            }),
            Arc::new(SearchTool {
                spec: ToolSpec::new(
                    "web_search",
                    ToolKind::External,
                    "Searches the web about an unfamiliar or uncertain event and summarizes the results.",
                    [("query", ParamSpec::text(""))],
                ),
                client: clients.search,
            }),
        ];
        for tool in tools {
            reg.register(tool).expect("default tool names are unique");
        }
        reg
    }

    pub fn register(&mut self, tool: Arc<dyn Tool>) -> Result<(), ToolError> {
        let name = tool.spec().name.clone();
        if self.tools.contains_key(&name) {
            return Err(ToolError::DuplicateName(name));
        }
        self.tools.insert(name, tool);
        Ok(())
    }

    pub fn lookup(&self, name: &str) -> Result<&ToolSpec, ToolError> {
        self.tools
            .get(name)
            .map(|t| t.spec())
            .ok_or_else(|| ToolError::NotFound(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Tool>> {
        self.tools.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(String::as_str)
    }

    pub fn specs(&self) -> impl Iterator<Item = &ToolSpec> {
        self.tools.values().map(|t| t.spec())
    }

    /// Applies a frame-transforming tool to a single image.
    pub fn apply_pixel_tool(
        &self,
        name: &str,
        frame: &image::RgbImage,
        raw_params: &Map<String, Value>,
    ) -> Result<image::RgbImage, ToolError> {
        let tool = self
            .get(name)
            .ok_or_else(|| ToolError::NotFound(name.to_string()))?;
        let op = tool
            .pixel_op()
            .ok_or_else(|| ToolError::NotPixel(name.to_string()))?;
        let params = tool.spec().resolve(raw_params)?;
        op.apply(frame, &params)
    }
}
