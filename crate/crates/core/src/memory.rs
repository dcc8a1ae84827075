//! Short and long chain-of-memory.
//!
//! The short memory is a window over the last `l` reasoning steps (trace
//! text plus the frames each step saw) and the last `l` reflections. The
//! long memory keeps every clip's [`MemoryUnit`] for the video and indexes
//! the insufficient reasons of reflected clips for experience retrieval.

use std::collections::VecDeque;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::FrameRef;
use crate::knowledge::{Embedder, VectorIndex};
use crate::reasoning::ReasoningResult;
use crate::reflection::ReflectionResult;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("timestep {got} appended where {expected} was due")]
    NonDenseTimestep { expected: usize, got: usize },
    #[error("a refined result requires a reflection")]
    RefinedWithoutReflection,
    #[error("memory file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `t=<t> status=<status> score=<score> reason=<reason>`, score to 3 places.
pub fn trace_text(t: usize, result: &ReasoningResult) -> String {
    format!(
        "t={t} status={} score={:.3} reason={}",
        result.status,
        result.score,
        result.reason.replace('\n', " ")
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShortCoM {
    l: usize,
    text_window: VecDeque<String>,
    visual_window: VecDeque<Vec<FrameRef>>,
    reflection_history: VecDeque<ReflectionResult>,
}

impl ShortCoM {
    pub fn new(l: usize) -> Self {
        Self {
            l,
            text_window: VecDeque::with_capacity(l + 1),
            visual_window: VecDeque::with_capacity(l + 1),
            reflection_history: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.l
    }

    pub fn len(&self) -> usize {
        self.text_window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.text_window.is_empty()
    }

    /// Appends one step to both windows, evicting the oldest beyond `l`.
    pub fn push_step(&mut self, trace_text: impl Into<String>, frame_refs: Vec<FrameRef>) {
        if self.l == 0 {
            return;
        }
        self.text_window.push_back(trace_text.into());
        self.visual_window.push_back(frame_refs);
        while self.text_window.len() > self.l {
            self.text_window.pop_front();
            self.visual_window.pop_front();
        }
    }

    /// Records a reflection; only the latest `l` are kept.
    pub fn push_reflection(&mut self, reflection: ReflectionResult) {
        if self.l == 0 {
            return;
        }
        self.reflection_history.push_back(reflection);
        while self.reflection_history.len() > self.l {
            self.reflection_history.pop_front();
        }
    }

    pub fn text_window(&self) -> impl Iterator<Item = &str> {
        self.text_window.iter().map(String::as_str)
    }

    pub fn visual_window(&self) -> impl Iterator<Item = &[FrameRef]> {
        self.visual_window.iter().map(Vec::as_slice)
    }

    /// Every remembered frame, oldest step first.
    pub fn visual_frames(&self) -> impl Iterator<Item = FrameRef> + '_ {
        self.visual_window.iter().flatten().cloned()
    }

    pub fn reflection_history(&self) -> impl Iterator<Item = &ReflectionResult> {
        self.reflection_history.iter()
    }

    pub fn render_text(&self) -> String {
        if self.text_window.is_empty() {
            return "(none yet)".into();
        }
        self.text_window
            .iter()
            .cloned()
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn render_reflections(&self) -> String {
        if self.reflection_history.is_empty() {
            return "(none yet)".into();
        }
        self.reflection_history
            .iter()
            .map(ReflectionResult::summary)
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// One clip's outcome: the initial verdict and, when reflection ran, the
/// final round's reflection and refined verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryUnit {
    t: usize,
    reasoning: ReasoningResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    reflection: Option<ReflectionResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    refined: Option<ReasoningResult>,
}

#[derive(Deserialize)]
struct RawUnit {
    t: usize,
    reasoning: ReasoningResult,
    #[serde(default)]
    reflection: Option<ReflectionResult>,
    #[serde(default)]
    refined: Option<ReasoningResult>,
}

impl<'de> Deserialize<'de> for MemoryUnit {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawUnit::deserialize(d)?;
        MemoryUnit::new(raw.t, raw.reasoning, raw.reflection, raw.refined)
            .map_err(serde::de::Error::custom)
    }
}

impl MemoryUnit {
    pub fn new(
        t: usize,
        reasoning: ReasoningResult,
        reflection: Option<ReflectionResult>,
        refined: Option<ReasoningResult>,
    ) -> Result<Self, MemoryError> {
        if refined.is_some() && reflection.is_none() {
            return Err(MemoryError::RefinedWithoutReflection);
        }
        Ok(Self {
            t,
            reasoning,
            reflection,
            refined,
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn reasoning(&self) -> &ReasoningResult {
        &self.reasoning
    }

    pub fn reflection(&self) -> Option<&ReflectionResult> {
        self.reflection.as_ref()
    }

    pub fn refined(&self) -> Option<&ReasoningResult> {
        self.refined.as_ref()
    }

    /// The verdict the clip ended with.
    pub fn outcome(&self) -> &ReasoningResult {
        self.refined.as_ref().unwrap_or(&self.reasoning)
    }

    fn experience_key(&self) -> Option<&str> {
        let reflection = self.reflection.as_ref()?;
        Some(if reflection.insufficient_reason.trim().is_empty() {
            &self.reasoning.reason
        } else {
            &reflection.insufficient_reason
        })
    }

    /// Prompt block describing this unit as a past case.
    pub fn render_experience(&self) -> String {
        let mut out = format!("Most similar past case (clip {}):", self.t);
        if let Some(r) = &self.reflection {
            out.push_str(&format!("\nInsufficient reason: {}", r.insufficient_reason));
            let tools: Vec<_> = r.tools_to_use.iter().map(|c| c.to_string()).collect();
            out.push_str(&format!(
                "\nTools used: {}",
                if tools.is_empty() {
                    "none".into()
                } else {
                    tools.join(", ")
                }
            ));
            if !r.new_anomaly_rule.is_empty() {
                out.push_str(&format!("\nNew anomaly rule: {}", r.new_anomaly_rule));
            }
            if !r.new_heuristic_prompt.is_empty() {
                out.push_str(&format!(
                    "\nNew heuristic prompt: {}",
                    r.new_heuristic_prompt
                ));
            }
        }
        if let Some(refined) = &self.refined {
            out.push_str(&format!(
                "\nRefined outcome: {} (score {:.3}): {}",
                refined.status, refined.score, refined.reason
            ));
        }
        out
    }
}

/// Reflected units carried over from earlier videos for experience lookup.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperienceArchive {
    pub units: Vec<MemoryUnit>,
}

/// Append-only history of one video.
#[derive(Clone)]
pub struct LongCoM {
    units: Vec<MemoryUnit>,
    reason_index: VectorIndex,
    /// Units behind each index row: archived first, then this video's.
    indexed: Vec<MemoryUnit>,
    embedder: Arc<dyn Embedder>,
}

impl std::fmt::Debug for LongCoM {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LongCoM")
            .field("units", &self.units.len())
            .field("indexed", &self.indexed.len())
            .finish()
    }
}

impl LongCoM {
    pub fn new(embedder: Arc<dyn Embedder>) -> Self {
        Self {
            units: Vec::new(),
            reason_index: VectorIndex::new(embedder.dim()),
            indexed: Vec::new(),
            embedder,
        }
    }

    /// Starts a video's memory whose experience lookup also sees `archive`.
    pub fn with_archive(embedder: Arc<dyn Embedder>, archive: &ExperienceArchive) -> Self {
        let mut long = Self::new(embedder);
        for unit in &archive.units {
            long.index(unit);
        }
        long
    }

    pub fn units(&self) -> &[MemoryUnit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn indexed_len(&self) -> usize {
        self.reason_index.len()
    }

    fn index(&mut self, unit: &MemoryUnit) {
        let Some(key) = unit.experience_key() else {
            return;
        };
        match self.embedder.embed(key) {
            Ok(v) => {
                let id = self.indexed.len() as u64;
                if let Err(e) = self.reason_index.insert(id, v) {
                    tracing::warn!(error = %e, "could not index reflection experience");
                    return;
                }
                self.indexed.push(unit.clone());
            }
            Err(e) => tracing::warn!(error = %e, "could not embed reflection experience"),
        }
    }

    pub fn append_long(&mut self, unit: MemoryUnit) -> Result<(), MemoryError> {
        if unit.t != self.units.len() {
            return Err(MemoryError::NonDenseTimestep {
                expected: self.units.len(),
                got: unit.t,
            });
        }
        self.index(&unit);
        self.units.push(unit);
        Ok(())
    }

    /// The indexed unit whose insufficient reason is most cosine-similar to
    /// `insufficient_reason`; earlier units win ties.
    pub fn retrieve_experience(&self, insufficient_reason: &str) -> Option<&MemoryUnit> {
        if self.reason_index.is_empty() {
            return None;
        }
        let q = self.embedder.embed(insufficient_reason).ok()?;
        let hit = self.reason_index.top_k(&q, 1).ok()?.into_iter().next()?;
        self.indexed.get(hit.position)
    }

    /// This video's reflected units, for carrying into the next video.
    pub fn into_archive(self, mut archive: ExperienceArchive) -> ExperienceArchive {
        archive
            .units
            .extend(self.units.into_iter().filter(|u| u.reflection.is_some()));
        archive
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<(), MemoryError> {
        for unit in &self.units {
            serde_json::to_writer(&mut out, unit)
                .map_err(|e| MemoryError::Format(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(
        input: impl BufRead,
        embedder: Arc<dyn Embedder>,
    ) -> Result<Self, MemoryError> {
        let mut long = Self::new(embedder);
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let unit: MemoryUnit = serde_json::from_str(&line)
                .map_err(|e| MemoryError::Format(format!("line {}: {e}", n + 1)))?;
            long.append_long(unit)?;
        }
        Ok(long)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::HashEmbedder;
    use crate::reasoning::Status;

    fn result(reason: &str) -> ReasoningResult {
        ReasoningResult::new(Status::Insufficient, 0.5, reason)
    }

    fn reflection(reason: &str) -> ReflectionResult {
        ReflectionResult {
            insufficient_reason: reason.into(),
            ..Default::default()
        }
    }

    fn long() -> LongCoM {
        LongCoM::new(Arc::new(HashEmbedder::new(32, 0)))
    }

    #[test]
    fn window_keeps_the_latest_l_steps() {
        let mut m = ShortCoM::new(5);
        for t in 1..=7 {
            m.push_step(format!("step {t}"), vec![FrameRef::source("v", t)]);
        }
        assert_eq!(
            m.text_window().collect::<Vec<_>>(),
            ["step 3", "step 4", "step 5", "step 6", "step 7"]
        );
        assert_eq!(m.visual_window().next().unwrap()[0].index(), 3);
        let mut one = ShortCoM::new(5);
        one.push_step("s", vec![]);
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn trace_text_format() {
        let r = ReasoningResult::new(Status::Abnormal, 0.9, "smoke rising");
        assert_eq!(
            trace_text(3, &r),
            "t=3 status=Abnormal score=0.900 reason=smoke rising"
        );
    }

    #[test]
    fn append_requires_dense_timesteps() {
        let mut l = long();
        for t in 0..3 {
            l.append_long(MemoryUnit::new(t, result("r"), None, None).unwrap())
                .unwrap();
        }
        assert_eq!(l.len(), 3);
        assert!(matches!(
            l.append_long(MemoryUnit::new(5, result("r"), None, None).unwrap()),
            Err(MemoryError::NonDenseTimestep {
                expected: 3,
                got: 5
            })
        ));
    }

    #[test]
    fn reflected_units_are_indexed() {
        let mut l = long();
        l.append_long(MemoryUnit::new(0, result("a"), None, None).unwrap())
            .unwrap();
        assert_eq!(l.indexed_len(), 0);
        assert!(l.retrieve_experience("dark scene").is_none());
        l.append_long(
            MemoryUnit::new(
                1,
                result("b"),
                Some(reflection("too dark to see the people")),
                None,
            )
            .unwrap(),
        )
        .unwrap();
        l.append_long(
            MemoryUnit::new(
                2,
                result("c"),
                Some(reflection("subject too small to identify")),
                None,
            )
            .unwrap(),
        )
        .unwrap();
        assert_eq!(l.indexed_len(), 2);
        assert_eq!(
            l.retrieve_experience("subject too small to identify")
                .unwrap()
                .t(),
            2
        );
    }

    #[test]
    fn refined_requires_reflection() {
        assert!(matches!(
            MemoryUnit::new(0, result("a"), None, Some(result("b"))),
            Err(MemoryError::RefinedWithoutReflection)
        ));
        let bad = r#"{"t":0,"reasoning":{"status":"Normal","score":0.1,"reason":"x"},"refined":{"status":"Normal","score":0.1,"reason":"x"}}"#;
        assert!(serde_json::from_str::<MemoryUnit>(bad).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let mut l = long();
        l.append_long(MemoryUnit::new(0, result("a"), None, None).unwrap())
            .unwrap();
        l.append_long(
            MemoryUnit::new(
                1,
                result("b"),
                Some(reflection("blur")),
                Some(ReasoningResult::new(Status::Abnormal, 0.9, "fight")),
            )
            .unwrap(),
        )
        .unwrap();
        let mut buf = Vec::new();
        l.write_jsonl(&mut buf).unwrap();
        let back = LongCoM::read_jsonl(buf.as_slice(), Arc::new(HashEmbedder::new(32, 0))).unwrap();
        assert_eq!(back.units(), l.units());
        assert_eq!(back.indexed_len(), 1);
    }

    #[test]
    fn archive_extends_experience_across_videos() {
        let mut first = long();
        first
            .append_long(
                MemoryUnit::new(
                    0,
                    result("a"),
                    Some(reflection("smoke hides the scene")),
                    None,
                )
                .unwrap(),
            )
            .unwrap();
        let archive = first.into_archive(ExperienceArchive::default());
        let second = LongCoM::with_archive(Arc::new(HashEmbedder::new(32, 0)), &archive);
        assert!(second.is_empty());
        assert_eq!(second.retrieve_experience("smoke").unwrap().t(), 0);
    }
}
