//! The anomaly knowledge base and the retrieval primitives built on it.
//!
//! The knowledge base holds `H` rule/scene entries per requested anomaly
//! category. It is generated once per query by the multimodal model,
//! persisted as JSON lines with a metadata sidecar, and embedded into a
//! [`VectorIndex`] for exact cosine top-k lookup.

mod embed;
mod index;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use embed::{normalize, EmbedError, Embedder, HashEmbedder, HttpEmbedder};
pub use index::{Hit, IndexError, VectorIndex};

use crate::gateway::{Gateway, GatewayError, Role, SchemaName};
use crate::prompts::{PromptSet, TemplateError};
use crate::query::UserQuery;

/// Rule/scene entries requested per anomaly category.
pub const DEFAULT_RULES_PER_TYPE: usize = 20;

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("the user query names no anomaly category")]
    NoCategories,
    #[error("knowledge construction incomplete: {shortfalls:?} (wanted {wanted} per type)")]
    PartialBuild {
        kb: Box<KnowledgeBase>,
        shortfalls: BTreeMap<String, usize>,
        wanted: usize,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("knowledge base file {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub event_type: String,
    pub anomaly_rule: String,
    pub application_scenes: Vec<String>,
}

impl KnowledgeEntry {
    /// Text that represents the entry in the index.
    pub fn index_text(&self) -> String {
        format!(
            "{}: {} Scenes: {}",
            self.event_type,
            self.anomaly_rule,
            self.application_scenes.join(", ")
        )
    }

    fn from_value(event_type: &str, value: &Value) -> Option<Self> {
        let obj = value.as_object()?;
        let field = |names: &[&str]| names.iter().find_map(|n| obj.get(*n));
        let rule = field(&[
            "anomaly_rule",
            "rule",
            "anomaly_rules",
            "Anomaly Rule",
            "Anomaly Rules",
        ])?
        .as_str()?
        .trim()
        .to_string();
        if rule.is_empty() {
            return None;
        }
        let scenes = match field(&["application_scenes", "scenes", "Application Scenes"]) {
            Some(Value::Array(items)) => items
                .iter()
                .filter_map(Value::as_str)
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
            Some(Value::String(s)) => split_list(s),
            _ => Vec::new(),
        };
        Some(Self {
            event_type: event_type.to_string(),
            anomaly_rule: rule,
            application_scenes: scenes,
        })
    }
}

pub(crate) fn split_list(s: &str) -> Vec<String> {
    s.split([',', ';'])
        .map(|x| x.trim().to_string())
        .filter(|x| !x.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub entries: Vec<KnowledgeEntry>,
    pub per_type_count: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeMeta {
    pub query_hash: String,
    #[serde(rename = "H")]
    pub rules_per_type: usize,
    #[serde(rename = "D")]
    pub dim: usize,
    pub embedder_id: String,
}

impl KnowledgeBase {
    pub fn from_entries(entries: Vec<KnowledgeEntry>) -> Self {
        let mut per_type_count = BTreeMap::new();
        for e in &entries {
            *per_type_count.entry(e.event_type.clone()).or_insert(0) += 1;
        }
        Self {
            entries,
            per_type_count,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Categories of `query` holding fewer than `wanted` entries.
    pub fn shortfalls(&self, query: &UserQuery, wanted: usize) -> BTreeMap<String, usize> {
        query
            .categories
            .iter()
            .map(|c| (c.clone(), self.per_type_count.get(c).copied().unwrap_or(0)))
            .filter(|(_, n)| *n < wanted)
            .collect()
    }

    /// Writes `path` (one entry per line) and `<path>.meta.json`.
    pub fn persist(&self, path: &Path, meta: &KnowledgeMeta) -> Result<(), KnowledgeError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let mut out = BufWriter::new(fs::File::create(path)?);
        for entry in &self.entries {
            serde_json::to_writer(&mut out, entry).expect("entries serialize");
            out.write_all(b"\n")?;
        }
        out.flush()?;
        fs::write(
            meta_path(path),
            serde_json::to_string_pretty(meta).expect("meta serializes") + "\n",
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, KnowledgeMeta), KnowledgeError> {
        let format_err = |message: String| KnowledgeError::Format {
            path: path.to_path_buf(),
            message,
        };
        let reader = BufReader::new(fs::File::open(path)?);
        let mut entries = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(
                serde_json::from_str(&line)
                    .map_err(|e| format_err(format!("line {}: {e}", n + 1)))?,
            );
        }
        let meta_text = fs::read_to_string(meta_path(path))?;
        let meta =
            serde_json::from_str(&meta_text).map_err(|e| format_err(format!("metadata: {e}")))?;
        Ok((Self::from_entries(entries), meta))
    }
}

pub fn meta_path(kb_path: &Path) -> PathBuf {
    let mut name = kb_path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Asks the multimodal model for `rules_per_type` entries per category.
///
/// When `persist_to` names an existing knowledge base built for the same
/// query and `rules_per_type`, it is loaded instead and no model call is made.
pub fn build_knowledge_base(
    query: &UserQuery,
    prompts: &PromptSet,
    gateway: &Gateway,
    rules_per_type: usize,
    embedder: &dyn Embedder,
    persist_to: Option<&Path>,
) -> Result<KnowledgeBase, KnowledgeError> {
    if query.categories.is_empty() {
        return Err(KnowledgeError::NoCategories);
    }
    let meta = KnowledgeMeta {
        query_hash: query.digest(),
        rules_per_type,
        dim: embedder.dim(),
        embedder_id: embedder.id(),
    };

    if let Some(path) = persist_to.filter(|p| p.exists() && meta_path(p).exists()) {
        let (kb, stored) = KnowledgeBase::load(path)?;
        if stored.query_hash == meta.query_hash && stored.rules_per_type == rules_per_type {
            tracing::info!(path = %path.display(), "reusing persisted knowledge base");
            return check_complete(kb, query, rules_per_type);
        }
    }

    let mut entries = Vec::new();
    for category in &query.categories {
        let vars = BTreeMap::from([
            ("user_query", query.text.clone()),
            ("category", category.clone()),
            ("count", rules_per_type.to_string()),
        ]);
        let prompt = prompts.render(Role::Knowledge, &vars)?;
        let request = gateway.request(Role::Knowledge, prompt.system, prompt.user);
        let value = gateway.complete_structured(&request, SchemaName::KnowledgeBase)?;
        let mut seen = BTreeSet::new();
        let parsed: Vec<_> = value.payload["entries"]
            .as_array()
            .into_iter()
            .flatten()
            .filter_map(|v| KnowledgeEntry::from_value(category, v))
            .filter(|e| seen.insert(e.anomaly_rule.clone()))
            .take(rules_per_type)
            .collect();
        if parsed.len() < rules_per_type {
            tracing::warn!(%category, got = parsed.len(), wanted = rules_per_type, "short knowledge reply");
        }
        entries.extend(parsed);
    }

    let kb = KnowledgeBase::from_entries(entries);
    if let Some(path) = persist_to {
        kb.persist(path, &meta)?;
    }
    check_complete(kb, query, rules_per_type)
}

fn check_complete(
    kb: KnowledgeBase,
    query: &UserQuery,
    wanted: usize,
) -> Result<KnowledgeBase, KnowledgeError> {
    let shortfalls = kb.shortfalls(query, wanted);
    if shortfalls.is_empty() {
        Ok(kb)
    } else {
        Err(KnowledgeError::PartialBuild {
            kb: Box::new(kb),
            shortfalls,
            wanted,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntry {
    pub entry: KnowledgeEntry,
    pub similarity: f64,
}

/// Retrieved rules, most similar first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub rules: Vec<ScoredEntry>,
}

impl RuleSet {
    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    /// Numbered listing used inside prompts.
    pub fn render(&self) -> String {
        if self.rules.is_empty() {
            return "(none)".into();
        }
        self.rules
            .iter()
            .enumerate()
            .map(|(i, r)| {
                format!(
                    "{}. [{}] {} (scenes: {})",
                    i + 1,
                    r.entry.event_type,
                    r.entry.anomaly_rule,
                    r.entry.application_scenes.join(", ")
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn to_json(&self) -> Value {
        json!(self
            .rules
            .iter()
            .map(
                |r| json!({"event_type": r.entry.event_type, "anomaly_rule": r.entry.anomaly_rule})
            )
            .collect::<Vec<_>>())
    }
}

/// A knowledge base embedded for retrieval. Immutable once built.
#[derive(Clone)]
pub struct KnowledgeIndex {
    kb: KnowledgeBase,
    index: VectorIndex,
    embedder: Arc<dyn Embedder>,
}

impl std::fmt::Debug for KnowledgeIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KnowledgeIndex")
            .field("entries", &self.kb.len())
            .field("embedder", &self.embedder.id())
            .finish()
    }
}

impl KnowledgeIndex {
    pub fn build(kb: KnowledgeBase, embedder: Arc<dyn Embedder>) -> Result<Self, KnowledgeError> {
        let mut index = VectorIndex::new(embedder.dim());
        for (i, entry) in kb.entries.iter().enumerate() {
            index.insert(i as u64, embedder.embed(&entry.index_text())?)?;
        }
        Ok(Self {
            kb,
            index,
            embedder,
        })
    }

    pub fn knowledge_base(&self) -> &KnowledgeBase {
        &self.kb
    }

    pub fn vectors(&self) -> &VectorIndex {
        &self.index
    }

    /// Global top-k over all entries by cosine similarity to `query_text`.
    pub fn retrieve_top_k(&self, query_text: &str, k: usize) -> Result<RuleSet, KnowledgeError> {
        let q = self.embedder.embed(query_text)?;
        let hits = self.index.top_k(&q, k)?;
        Ok(RuleSet {
            rules: hits
                .into_iter()
                .map(|h| ScoredEntry {
                    entry: self.kb.entries[h.id as usize].clone(),
                    similarity: h.similarity,
                })
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Matcher, ScriptRule, ScriptedBackend};

    fn entries_reply(category: &str, n: usize) -> String {
        let entries: Vec<_> = (0..n)
            .map(|i| json!({"event_type": category, "anomaly_rule": format!("{category} rule {i}"), "application_scenes": ["street", "shop"]}))
            .collect();
        format!("Here you go:\n{}", json!({ "entries": entries }))
    }

    fn gateway(rules: Vec<ScriptRule>) -> (Gateway, Arc<ScriptedBackend>) {
        let b = Arc::new(ScriptedBackend::new(rules, ""));
        (Gateway::new(b.clone()), b)
    }

    fn embedder() -> HashEmbedder {
        HashEmbedder::new(8, 0)
    }

    #[test]
    fn builds_h_entries_per_category() {
        let (gw, backend) = gateway(vec![
            ScriptRule::new(
                Matcher::Substring("\"fighting\"".into()),
                None,
                entries_reply("fighting", 20),
            ),
            ScriptRule::new(
                Matcher::Substring("\"arson\"".into()),
                None,
                entries_reply("arson", 25),
            ),
        ]);
        let q = UserQuery::new("detect", ["fighting", "arson"]);
        let kb =
            build_knowledge_base(&q, &PromptSet::builtin(), &gw, 20, &embedder(), None).unwrap();
        assert_eq!(kb.per_type_count["fighting"], 20);
        assert_eq!(kb.per_type_count["arson"], 20);
        assert_eq!(backend.call_count(), 2);
        assert!(backend.call_log().iter().all(|r| r.role == Role::Knowledge));
    }

    #[test]
    fn no_categories_is_rejected() {
        let (gw, _) = gateway(vec![]);
        let q = UserQuery::new("detect", Vec::<String>::new());
        assert!(matches!(
            build_knowledge_base(&q, &PromptSet::builtin(), &gw, 20, &embedder(), None),
            Err(KnowledgeError::NoCategories)
        ));
    }

    #[test]
    fn short_replies_yield_partial_build() {
        let (gw, _) = gateway(vec![ScriptRule::new(
            Matcher::Any,
            None,
            entries_reply("fighting", 3),
        )]);
        let q = UserQuery::new("detect", ["fighting"]);
        match build_knowledge_base(&q, &PromptSet::builtin(), &gw, 20, &embedder(), None) {
            Err(KnowledgeError::PartialBuild { kb, shortfalls, .. }) => {
                assert_eq!(kb.entries.len(), 3);
                assert_eq!(shortfalls["fighting"], 3);
            }
            other => panic!("expected partial build, got {other:?}"),
        }
    }

    #[test]
    fn persisted_kb_is_reused_for_the_same_query() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("kb.jsonl");
        let (gw, backend) = gateway(vec![ScriptRule::new(
            Matcher::Any,
            None,
            entries_reply("fighting", 4),
        )]);
        let q = UserQuery::new("detect", ["fighting"]);
        let kb = build_knowledge_base(&q, &PromptSet::builtin(), &gw, 4, &embedder(), Some(&path))
            .unwrap();
        let again =
            build_knowledge_base(&q, &PromptSet::builtin(), &gw, 4, &embedder(), Some(&path))
                .unwrap();
        assert_eq!(kb, again);
        assert_eq!(backend.call_count(), 1);

        let other = UserQuery::new("detect", ["fighting", "arson"]);
        let _ = build_knowledge_base(
            &other,
            &PromptSet::builtin(),
            &gw,
            4,
            &embedder(),
            Some(&path),
        );
        assert_eq!(backend.call_count(), 3);
    }

    #[test]
    fn persist_load_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("nested/kb.jsonl");
        let kb = KnowledgeBase::from_entries(vec![
            KnowledgeEntry {
                event_type: "a".into(),
                anomaly_rule: "rule \"quoted\"\nmultiline".into(),
                application_scenes: vec![],
            },
            KnowledgeEntry {
                event_type: "b".into(),
                anomaly_rule: "r".into(),
                application_scenes: vec!["x".into()],
            },
        ]);
        let meta = KnowledgeMeta {
            query_hash: "h".into(),
            rules_per_type: 20,
            dim: 8,
            embedder_id: "e".into(),
        };
        kb.persist(&path, &meta).unwrap();
        let (loaded, loaded_meta) = KnowledgeBase::load(&path).unwrap();
        assert_eq!(loaded, kb);
        assert_eq!(loaded_meta, meta);
    }

    #[test]
    fn entry_text_retrieves_itself_first() {
        let kb = KnowledgeBase::from_entries(
            (0..10)
                .map(|i| KnowledgeEntry {
                    event_type: "fighting".into(),
                    anomaly_rule: format!("people {i} punching kicking variant {}", i * 7),
                    application_scenes: vec![format!("scene{i}")],
                })
                .collect(),
        );
        let idx = KnowledgeIndex::build(kb.clone(), Arc::new(HashEmbedder::new(64, 3))).unwrap();
        let probe = kb.entries[4].index_text();
        let rules = idx.retrieve_top_k(&probe, 5).unwrap();
        assert_eq!(rules.rules[0].entry, kb.entries[4]);
        assert!((rules.rules[0].similarity - 1.0).abs() < 1e-6);
        assert!(rules
            .rules
            .windows(2)
            .all(|w| w[0].similarity >= w[1].similarity));
        assert_eq!(idx.retrieve_top_k(&probe, 50).unwrap().len(), 10);
    }
}
