//! Deterministic rule-driven backend for offline runs and tests.
//!
//! Script files are JSON, either a bare list of rules or
//! `{"default_reply": "...", "rules": [...]}`. A rule is
//! `{"match": "<text>", "regex": false, "role": "reasoning", "reply": "..."}`;
//! `"replies": [...]` may replace `"reply"` to answer successive matching
//! calls in order (the last reply repeats once the list is used up).

use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use regex::Regex;
use serde::Deserialize;

use super::{ChatRequest, GatewayError, ModelBackend, ModelReply, Role};

#[derive(Debug, Clone)]
pub enum Matcher {
    Substring(String),
    Regex(Regex),
    Any,
}

impl Matcher {
    fn is_match(&self, text: &str) -> bool {
        match self {
            Matcher::Substring(s) => text.contains(s.as_str()),
            Matcher::Regex(re) => re.is_match(text),
            Matcher::Any => true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptRule {
    pub matcher: Matcher,
    pub role: Option<Role>,
    pub replies: Vec<String>,
}

impl ScriptRule {
    pub fn new(matcher: Matcher, role: Option<Role>, reply: impl Into<String>) -> Self {
        Self {
            matcher,
            role,
            replies: vec![reply.into()],
        }
    }

    pub fn sequence(matcher: Matcher, role: Option<Role>, replies: Vec<String>) -> Self {
        assert!(
            !replies.is_empty(),
            "a script rule needs at least one reply"
        );
        Self {
            matcher,
            role,
            replies,
        }
    }

    fn matches(&self, request: &ChatRequest) -> bool {
        self.role.is_none_or(|r| r == request.role) && self.matcher.is_match(&request.user_text)
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ScriptFile {
    Rules(Vec<RawRule>),
    Full {
        #[serde(default)]
        default_reply: String,
        rules: Vec<RawRule>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    #[serde(rename = "match", default)]
    pattern: Option<String>,
    #[serde(default)]
    regex: bool,
    #[serde(default)]
    role: Option<String>,
    #[serde(default)]
    reply: Option<String>,
    #[serde(default)]
    replies: Option<Vec<String>>,
}

impl TryFrom<RawRule> for ScriptRule {
    type Error = GatewayError;

    fn try_from(raw: RawRule) -> Result<Self, Self::Error> {
        let matcher = match (raw.pattern, raw.regex) {
            (None, _) => Matcher::Any,
            (Some(p), true) => Matcher::Regex(
                Regex::new(&p)
                    .map_err(|e| GatewayError::Script(format!("bad regex `{p}`: {e}")))?,
            ),
            (Some(p), false) => Matcher::Substring(p),
        };
        let role = raw.role.map(|r| r.parse()).transpose()?;
        let replies = match (raw.reply, raw.replies) {
            (Some(r), None) => vec![r],
            (None, Some(rs)) if !rs.is_empty() => rs,
            _ => {
                return Err(GatewayError::Script(
                    "each rule needs exactly one of `reply` or a non-empty `replies`".into(),
                ))
            }
        };
        Ok(ScriptRule {
            matcher,
            role,
            replies,
        })
    }
}

#[derive(Debug, Default)]
struct ScriptState {
    cursors: Vec<usize>,
    log: Vec<ChatRequest>,
}

/// First matching rule wins; unmatched requests get `default_reply`.
#[derive(Debug)]
pub struct ScriptedBackend {
    id: String,
    rules: Vec<ScriptRule>,
    default_reply: String,
    state: Mutex<ScriptState>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>, default_reply: impl Into<String>) -> Self {
        let state = ScriptState {
            cursors: vec![0; rules.len()],
            log: Vec::new(),
        };
        Self {
            id: "scripted".into(),
            rules,
            default_reply: default_reply.into(),
            state: Mutex::new(state),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        let file: ScriptFile =
            serde_json::from_str(text).map_err(|e| GatewayError::Script(e.to_string()))?;
        let (default_reply, raw) = match file {
            ScriptFile::Rules(rules) => (String::new(), rules),
            ScriptFile::Full {
                default_reply,
                rules,
            } => (default_reply, rules),
        };
        let rules = raw
            .into_iter()
            .map(ScriptRule::try_from)
            .collect::<Result<_, _>>()?;
        Ok(Self::new(rules, default_reply))
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Script(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn call_log(&self) -> Vec<ChatRequest> {
        self.state.lock().unwrap().log.clone()
    }

    pub fn call_count(&self) -> usize {
        self.state.lock().unwrap().log.len()
    }

    /// Clears the call log and rewinds every reply sequence.
    pub fn reset(&self) {
        let mut state = self.state.lock().unwrap();
        state.log.clear();
        state.cursors.iter_mut().for_each(|c| *c = 0);
    }
}

impl ModelBackend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<ModelReply, GatewayError> {
        let started = Instant::now();
        let mut state = self.state.lock().unwrap();
        state.log.push(request.clone());
        let raw_text = match self.rules.iter().position(|r| r.matches(request)) {
            Some(i) => {
                let rule = &self.rules[i];
                let cursor = state.cursors[i];
                state.cursors[i] = cursor + 1;
                rule.replies[cursor.min(rule.replies.len() - 1)].clone()
            }
            None => self.default_reply.clone(),
        };
        Ok(ModelReply {
            raw_text,
            backend_id: self.id.clone(),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(role: Role, text: &str) -> ChatRequest {
        ChatRequest::new(role, "", text)
    }

    #[test]
    fn substring_rule_matches() {
        let b = ScriptedBackend::new(
            vec![ScriptRule::new(
                Matcher::Substring("fighting".into()),
                None,
                "ABNORMAL",
            )],
            "NORMAL",
        );
        let r = b
            .complete(&req(Role::Reasoning, "two men fighting"))
            .unwrap();
        assert_eq!(r.raw_text, "ABNORMAL");
        let r = b.complete(&req(Role::Reasoning, "empty street")).unwrap();
        assert_eq!(r.raw_text, "NORMAL");
    }

    #[test]
    fn call_log_records_every_request_in_order() {
        let b = ScriptedBackend::new(vec![], "x");
        for text in ["a", "b", "c"] {
            b.complete(&req(Role::Planning, text)).unwrap();
        }
        let texts: Vec<_> = b.call_log().into_iter().map(|r| r.user_text).collect();
        assert_eq!(texts, ["a", "b", "c"]);
    }

    #[test]
    fn role_filter_and_first_rule_wins() {
        let b = ScriptedBackend::from_json(
            r#"{"default_reply": "d", "rules": [
                {"match": "x", "role": "reflection", "reply": "refl"},
                {"match": "x", "reply": "first"},
                {"match": "x", "reply": "second"}
            ]}"#,
        )
        .unwrap();
        assert_eq!(
            b.complete(&req(Role::Reflection, "x")).unwrap().raw_text,
            "refl"
        );
        assert_eq!(
            b.complete(&req(Role::Reasoning, "x")).unwrap().raw_text,
            "first"
        );
    }

    #[test]
    fn sequences_advance_then_stick() {
        let b = ScriptedBackend::from_json(
            r#"[{"match": "^clip 3$", "regex": true, "replies": ["one", "two"]}]"#,
        )
        .unwrap();
        let got: Vec<_> = (0..3)
            .map(|_| {
                b.complete(&req(Role::Reasoning, "clip 3"))
                    .unwrap()
                    .raw_text
            })
            .collect();
        assert_eq!(got, ["one", "two", "two"]);
        b.reset();
        assert_eq!(
            b.complete(&req(Role::Reasoning, "clip 3"))
                .unwrap()
                .raw_text,
            "one"
        );
        assert_eq!(b.call_count(), 1);
    }

    #[test]
    fn invalid_scripts_are_rejected() {
        assert!(ScriptedBackend::from_json(r#"[{"match": "x"}]"#).is_err());
        assert!(
            ScriptedBackend::from_json(r#"[{"match": "(", "regex": true, "reply": "r"}]"#).is_err()
        );
        assert!(ScriptedBackend::from_json(r#"[{"role": "dreaming", "reply": "r"}]"#).is_err());
    }

    #[test]
    fn identical_request_sequences_replay_identically() {
        let script = r#"[{"match": "a", "replies": ["1", "2"]}, {"match": "b", "reply": "3"}]"#;
        let seq = ["a", "b", "a", "c", "a"];
        let run = || {
            let b = ScriptedBackend::from_json(script).unwrap();
            seq.iter()
                .map(|t| b.complete(&req(Role::Reasoning, t)).unwrap().raw_text)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
