//! The per-video loop: perceive, retrieve rules, plan, then reason over
//! each clip with reflection on Insufficient verdicts and chained memory.

use std::collections::HashSet;
use std::fs;
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::config::{BackendKind, ConfigError, EmbedderKind, RunConfig, ENV_API_KEY};
use crate::eval::{expand_scores, EvalError};
use crate::frames::{FrameRef, FrameStore};
use crate::gateway::{Gateway, GatewayError, HttpBackend, ModelBackend, ScriptedBackend};
use crate::knowledge::{
    build_knowledge_base, Embedder, HashEmbedder, HttpEmbedder, KnowledgeError, KnowledgeIndex,
    RuleSet,
};
use crate::memory::{trace_text, ExperienceArchive, LongCoM, MemoryError, MemoryUnit, ShortCoM};
use crate::planner::{perceive, plan_strategy, sample_keyframes, Mode, PlannerError, StrategyPlan};
use crate::prompts::{PromptSet, TemplateError};
use crate::query::UserQuery;
use crate::reasoning::{
    frame_stride, iter_clips, preprocess_clip, reason_clip, ClipScore, ReasoningResult,
    ScoreTimeline, Status, VideoContext,
};
use crate::reflection::{resolve_insufficient, ReflectionEnv, ToolDeps};
use crate::tools::{
    BicubicSuperResolver, CaptionEmbedder, HttpDetector, HttpSearch, HttpSuperResolver,
    StubDetector, StubSearch, ToolClients, ToolError, ToolRegistry,
};
use crate::trace::{write_run, ClipRecord, RunRecord, LONG_MEMORY_FILE};
use crate::video::VideoSource;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Search results requested from a web-search service unless configured.
const DEFAULT_SEARCH_RESULTS: usize = 5;

/// Everything a run needs, built once and shared by all videos.
pub struct Engine {
    config: RunConfig,
    gateway: Gateway,
    prompts: PromptSet,
    registry: ToolRegistry,
    embedder: Arc<dyn Embedder>,
    frame_embedder: CaptionEmbedder,
    frames: Arc<FrameStore>,
}

/// Output of one video.
pub struct VideoRun {
    pub timeline: ScoreTimeline,
    pub long: LongCoM,
    pub records: Vec<ClipRecord>,
    pub run: RunRecord,
}

impl VideoRun {
    pub fn failed(&self) -> bool {
        self.run.failure.is_some()
    }

    /// Writes run.json, trace.jsonl, timeline.json and long_com.jsonl.
    pub fn write(&self, dir: &Path) -> Result<(), EngineError> {
        write_run(dir, &self.run, &self.records, &self.timeline)?;
        let file = fs::File::create(dir.join(LONG_MEMORY_FILE))?;
        self.long.write_jsonl(BufWriter::new(file))?;
        Ok(())
    }
}

fn env_key(var: Option<&str>) -> Option<String> {
    std::env::var(var.unwrap_or(ENV_API_KEY))
        .ok()
        .filter(|k| !k.is_empty())
}

fn tool_clients(config: &RunConfig) -> Result<ToolClients, EngineError> {
    let t = &config.tools;
    let key = env_key(t.api_key_env.as_deref());
    let mut clients = ToolClients::default();
    if let Some(ep) = &t.detector_endpoint {
        clients.detector = Arc::new(HttpDetector::new(ep, key.clone()));
    } else if let Some(path) = &t.detector_fixture {
        clients.detector = Arc::new(StubDetector::from_file(path)?);
    }
    if let Some(ep) = &t.search_endpoint {
        let max = t.search_max_results.unwrap_or(DEFAULT_SEARCH_RESULTS);
        clients.search = Arc::new(HttpSearch::new(ep, key.clone(), max));
    } else if let Some(path) = &t.search_fixture {
        clients.search = Arc::new(StubSearch::from_file(path)?);
    }
    clients.super_resolver = match &t.super_resolve_endpoint {
        Some(ep) => Arc::new(HttpSuperResolver::new(ep, key)),
        None => Arc::new(BicubicSuperResolver),
    };
    Ok(clients)
}

fn embedder(config: &RunConfig) -> Result<Arc<dyn Embedder>, EngineError> {
    let e = &config.embedder;
    Ok(match e.kind {
        EmbedderKind::Hash => Arc::new(HashEmbedder::new(e.dim, e.seed)),
        EmbedderKind::Http => {
            let endpoint = e.endpoint.clone().ok_or_else(|| {
                ConfigError::Invalid("`embedder.endpoint` is required for the http embedder".into())
            })?;
            let model = e.model.clone().unwrap_or_else(|| "default".into());
            Arc::new(HttpEmbedder::new(
                endpoint,
                model,
                e.dim,
                env_key(e.api_key_env.as_deref()),
            ))
        }
    })
}

impl Engine {
    /// Builds the model backend named by the configuration.
    pub fn from_config(config: RunConfig) -> Result<Self, EngineError> {
        let frames = Arc::new(FrameStore::new());
        let backend: Arc<dyn ModelBackend> = match config.backend.kind {
            BackendKind::Scripted => {
                let path = config.backend.script.as_deref().ok_or_else(|| {
                    ConfigError::Invalid(
                        "the scripted backend needs a script file (`backend.script` or --script)"
                            .into(),
                    )
                })?;
                Arc::new(ScriptedBackend::from_file(path)?)
            }
            BackendKind::Http => Arc::new(HttpBackend::new(
                config.backend.http.clone(),
                Some(Arc::clone(&frames)),
            )?),
        };
        Self::with_backend(config, backend, frames)
    }

    /// Uses `backend` for every model call; `frames` must be the store the
    /// backend reads attachments from, if it reads any.
    pub fn with_backend(
        config: RunConfig,
        backend: Arc<dyn ModelBackend>,
        frames: Arc<FrameStore>,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let prompts = match &config.prompts_dir {
            Some(dir) => PromptSet::with_overrides(dir)?,
            None => PromptSet::builtin(),
        };
        let gateway = Gateway::new(backend)
            .with_schema_retries(config.schema_retries)
            .with_temperature(config.temperature);
        let registry = ToolRegistry::with_defaults(tool_clients(&config)?);
        let embedder = embedder(&config)?;
        let frame_embedder = CaptionEmbedder::new(Arc::clone(&embedder));
        Ok(Self {
            config,
            gateway,
            prompts,
            registry,
            embedder,
            frame_embedder,
            frames,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn frames(&self) -> &Arc<FrameStore> {
        &self.frames
    }

    pub fn registry(&self) -> &ToolRegistry {
        &self.registry
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    /// Builds (or reloads from `kb_path`) the knowledge base for `query` and
    /// indexes it. An incomplete build is an error carrying the partial base.
    pub fn build_knowledge(&self, query: &UserQuery) -> Result<KnowledgeIndex, KnowledgeError> {
        let kb = build_knowledge_base(
            query,
            &self.prompts,
            &self.gateway,
            self.config.h,
            self.embedder.as_ref(),
            self.config.kb_path.as_deref(),
        )?;
        KnowledgeIndex::build(kb, Arc::clone(&self.embedder))
    }

    /// Knowledge for planning, accepting a partial build with a warning.
    pub fn knowledge_for_run(
        &self,
        query: &UserQuery,
    ) -> Result<Option<KnowledgeIndex>, KnowledgeError> {
        if !self.config.ablation.planning {
            return Ok(None);
        }
        match self.build_knowledge(query) {
            Ok(index) => Ok(Some(index)),
            Err(KnowledgeError::PartialBuild { kb, shortfalls, .. }) => {
                tracing::warn!(
                    ?shortfalls,
                    "knowledge base is incomplete; planning with what was built"
                );
                KnowledgeIndex::build(*kb, Arc::clone(&self.embedder)).map(Some)
            }
            Err(KnowledgeError::NoCategories) => {
                tracing::warn!("query names no anomaly category; planning without rules");
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    fn empty_run(&self, video: &VideoSource, stride: usize, keyframes: Vec<usize>) -> VideoRun {
        VideoRun {
            timeline: ScoreTimeline {
                video_id: video.video_id.clone(),
                per_clip: Vec::new(),
                per_frame: Vec::new(),
            },
            long: LongCoM::new(Arc::clone(&self.embedder)),
            records: Vec::new(),
            run: RunRecord {
                video_id: video.video_id.clone(),
                mode: self.config.mode,
                frame_count: video.frame_count,
                source_fps: video.source_fps,
                stride,
                s: self.config.s,
                keyframes,
                env_info: None,
                rules: RuleSet::default(),
                plan: None,
                plan_fallback: None,
                failure: None,
                config_digest: self.config.digest(),
            },
        }
    }

    /// Runs one video start to finish. A perception failure ends the video
    /// with an empty timeline and `run.failure` set; it is not an `Err`.
    pub fn run_video(
        &self,
        video: &VideoSource,
        query: &UserQuery,
        knowledge: Option<&KnowledgeIndex>,
        archive: Option<&ExperienceArchive>,
    ) -> Result<VideoRun, EngineError> {
        let result = self.run_video_inner(video, query, knowledge, archive);
        self.frames.release_video(&video.video_id);
        result
    }

    fn run_video_inner(
        &self,
        video: &VideoSource,
        query: &UserQuery,
        knowledge: Option<&KnowledgeIndex>,
        archive: Option<&ExperienceArchive>,
    ) -> Result<VideoRun, EngineError> {
        let cfg = &self.config;
        let vid = video.video_id.as_str();
        self.frames.register_source(vid, &video.frame_dir);
        let stride = frame_stride(video.source_fps, cfg.sample_fps);
        let clips = iter_clips(video.frame_count, video.source_fps, cfg.sample_fps, cfg.s);

        let mut keyframes = sample_keyframes(video.frame_count, cfg.m(), cfg.mode).indices;
        if cfg.mode == Mode::Online {
            // Nothing past the first clip may be seen before it is reasoned.
            let limit = clips.first().map_or(0, |c| c.last_frame());
            keyframes.retain(|&i| i <= limit);
        }
        let mut out = self.empty_run(video, stride, keyframes.clone());
        let keyframe_refs: Vec<FrameRef> = keyframes.iter().map(|&i| video.frame_ref(i)).collect();

        let env = match perceive(&keyframe_refs, query, &self.prompts, &self.gateway) {
            Ok(env) => env,
            Err(PlannerError::Template(e)) => return Err(e.into()),
            Err(e) => {
                tracing::error!(video = vid, error = %e, "perception failed; skipping video");
                out.run.failure = Some(e.to_string());
                return Ok(out);
            }
        };
        out.run.env_info = Some(env.clone());

        let anomalies = if env.potential_anomalies.is_empty() {
            query.categories.clone()
        } else {
            env.potential_anomalies.clone()
        };
        let (rules, plan) =
            if cfg.ablation.planning {
                let rules = match knowledge {
                Some(kb) => kb.retrieve_top_k(&env.serialize(), cfg.k).unwrap_or_else(|e| {
                    tracing::warn!(error = %e, "rule retrieval failed; planning without rules");
                    RuleSet::default()
                }),
                None => RuleSet::default(),
            };
                let outcome = plan_strategy(query, &env, &rules, &self.prompts, &self.gateway)?;
                out.run.plan_fallback = outcome.fallback;
                (rules, outcome.plan)
            } else {
                (RuleSet::default(), StrategyPlan::minimal(&anomalies))
            };
        out.run.rules = rules.clone();
        out.run.plan = Some(plan.clone());
        let mut ctx = VideoContext::new(query.clone(), env, plan, rules);

        let memory_on = cfg.ablation.memory;
        let mut short = ShortCoM::new(if memory_on { cfg.l } else { 0 });
        let mut long = match archive {
            Some(a) if memory_on => LongCoM::with_archive(Arc::clone(&self.embedder), a),
            _ => LongCoM::new(Arc::clone(&self.embedder)),
        };
        // Experience lookup goes here when memory is switched off.
        let no_experience = LongCoM::new(Arc::clone(&self.embedder));
        let reflection_env = ReflectionEnv {
            tools: ToolDeps {
                registry: &self.registry,
                frames: &self.frames,
                frame_embedder: &self.frame_embedder,
                top_s: cfg.top_s,
            },
            prompts: &self.prompts,
            gateway: &self.gateway,
        };

        for clip in &clips {
            let enhanced = preprocess_clip(clip, vid, &ctx.plan, &self.registry, &self.frames);
            let initial = reason_clip(&enhanced, &short, &ctx, &self.prompts, &self.gateway)?;
            let mut resolution = None;
            let outcome = if initial.status != Status::Insufficient {
                initial.clone()
            } else if cfg.ablation.reflection {
                let lookup = if memory_on { &long } else { &no_experience };
                let res = resolve_insufficient(
                    &initial,
                    &enhanced,
                    &mut short,
                    lookup,
                    &mut ctx,
                    &reflection_env,
                    cfg.r,
                    cfg.default_insufficient_score,
                )?;
                let result = res.result.clone();
                resolution = Some(res);
                result
            } else {
                ReasoningResult::new(
                    Status::Insufficient,
                    cfg.default_insufficient_score,
                    initial.reason.clone(),
                )
            };

            let unit = MemoryUnit::new(
                clip.t,
                initial.clone(),
                resolution
                    .as_ref()
                    .and_then(|r| r.last_reflection().cloned()),
                resolution.as_ref().and_then(|r| r.last_refined().cloned()),
            )?;
            long.append_long(unit)?;

            for frame in &enhanced.enhanced_frame_refs {
                self.frames
                    .set_caption(frame, format!("clip {}: {}", clip.t, outcome.reason));
            }
            short.push_step(
                trace_text(clip.t, &outcome),
                enhanced.enhanced_frame_refs.clone(),
            );
            let keep: HashSet<FrameRef> = short.visual_frames().collect();
            self.frames.retain_video(vid, &keep);

            let rounds = resolution.map(|r| r.rounds).unwrap_or_default();
            out.timeline.per_clip.push(ClipScore {
                t: clip.t,
                score: outcome.score,
                status: outcome.status,
                reflected: !rounds.is_empty(),
            });
            out.records.push(ClipRecord {
                t: clip.t,
                frame_indices: clip.frame_indices.clone(),
                applied_ops: enhanced.applied_ops.clone(),
                initial,
                status: outcome.status,
                score: outcome.score,
                reason: outcome.reason,
                reflected: !rounds.is_empty(),
                rounds_used: rounds.len(),
                tool_calls: rounds
                    .iter()
                    .flat_map(|r| r.calls.iter().map(|c| c.name.clone()))
                    .collect(),
                rounds,
            });
        }

        let scores: Vec<f64> = out.timeline.per_clip.iter().map(|c| c.score).collect();
        out.timeline.per_frame = expand_scores(&scores, video.frame_count, stride, cfg.s)?;
        out.long = long;
        Ok(out)
    }
}
