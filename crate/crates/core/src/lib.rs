//! Training-free video anomaly detection driven by a multimodal model:
//! scene-aware planning over a retrieved rule base, tri-state clip
//! reasoning, bounded tool-augmented reflection and chained memory, plus
//! the frame-level evaluation protocol.
//!
//! All model calls go through [`gateway::Gateway`]; the scripted backend
//! makes every run reproducible offline.

pub mod canonical;
pub mod config;
pub mod engine;
pub mod eval;
pub mod frames;
pub mod gateway;
pub mod knowledge;
pub mod memory;
pub mod planner;
pub mod prompts;
pub mod query;
pub mod reasoning;
pub mod reflection;
pub mod tools;
pub mod trace;
pub mod video;

pub use config::{AblationConfig, BackendKind, RunConfig};
pub use engine::{Engine, EngineError, VideoRun};
pub use eval::{average_precision, evaluate, roc_auc, smooth, Annotations, EvalReport, EvalSeries};
pub use frames::{FrameRef, FrameStore};
pub use gateway::{ChatRequest, Gateway, GatewayError, ModelBackend, Role, ScriptedBackend};
pub use knowledge::{Embedder, HashEmbedder, KnowledgeBase, KnowledgeIndex, RuleSet};
pub use memory::{ExperienceArchive, LongCoM, MemoryUnit, ShortCoM};
pub use planner::{EnvInfo, Mode, StrategyPlan};
pub use query::UserQuery;
pub use reasoning::{ClipScore, ClipWindow, ReasoningResult, ScoreTimeline, Status};
pub use reflection::{ReflectionResult, ToolCall};
pub use trace::{ClipRecord, RunRecord};
pub use video::VideoSource;
