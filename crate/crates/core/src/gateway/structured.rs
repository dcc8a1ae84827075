//! Pulling structured objects out of free-form model output.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{GatewayError, ModelReply};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaName {
    EnvInfo,
    KnowledgeBase,
    StrategyPlan,
    ReasoningResult,
    ReflectionResult,
}

impl SchemaName {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemaName::EnvInfo => "env_info",
            SchemaName::KnowledgeBase => "knowledge_base",
            SchemaName::StrategyPlan => "strategy_plan",
            SchemaName::ReasoningResult => "reasoning_result",
            SchemaName::ReflectionResult => "reflection_result",
        }
    }

    pub fn required_keys(self) -> &'static [&'static str] {
        match self {
            // The remaining perception fields degrade to "unknown".
            SchemaName::EnvInfo => &["scene_overview"],
            SchemaName::KnowledgeBase => &["entries"],
            SchemaName::StrategyPlan => {
                &["preprocessing", "potential_anomalies", "heuristic_prompts"]
            }
            SchemaName::ReasoningResult => &["status", "score", "reason"],
            SchemaName::ReflectionResult => &["insufficient_reason", "tools_to_use"],
        }
    }

    fn aliases(self) -> &'static [(&'static str, &'static str)] {
        match self {
            SchemaName::StrategyPlan => &[("heuristic_prompt", "heuristic_prompts")],
            SchemaName::ReflectionResult => &[("tools", "tools_to_use")],
            _ => &[],
        }
    }
}

impl fmt::Display for SchemaName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A validated top-level object for one schema. Keys are normalized to
/// `snake_case`; `status` and `score` of reasoning results are canonical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredValue {
    pub schema: SchemaName,
    pub payload: Map<String, Value>,
}

impl StructuredValue {
    pub fn str_field(&self, key: &str) -> Option<&str> {
        self.payload.get(key).and_then(Value::as_str)
    }
}

pub fn extract_structured(
    reply: &ModelReply,
    schema: SchemaName,
) -> Result<StructuredValue, GatewayError> {
    let object = first_balanced_object(&reply.raw_text).ok_or(GatewayError::Parse)?;
    let mut payload = Map::new();
    for (key, value) in object {
        let mut key = normalize_key(&key);
        if let Some((_, canonical)) = schema.aliases().iter().find(|(alias, _)| *alias == key) {
            key = (*canonical).to_string();
        }
        payload.entry(key).or_insert(value);
    }
    for key in schema.required_keys() {
        if payload.get(*key).is_none_or(Value::is_null) {
            return Err(GatewayError::schema(schema, format!("missing key `{key}`")));
        }
    }
    if schema == SchemaName::ReasoningResult {
        coerce_reasoning(&mut payload)?;
    }
    if schema == SchemaName::ReflectionResult && !payload["tools_to_use"].is_array() {
        return Err(GatewayError::schema(
            schema,
            "`tools_to_use` must be a list",
        ));
    }
    if schema == SchemaName::KnowledgeBase && !payload["entries"].is_array() {
        return Err(GatewayError::schema(schema, "`entries` must be a list"));
    }
    Ok(StructuredValue { schema, payload })
}

fn coerce_reasoning(payload: &mut Map<String, Value>) -> Result<(), GatewayError> {
    let schema = SchemaName::ReasoningResult;
    let status = payload["status"]
        .as_str()
        .ok_or_else(|| GatewayError::schema(schema, "`status` must be a string"))?;
    let canonical = match status.trim().to_ascii_lowercase().as_str() {
        "normal" => "Normal",
        "abnormal" => "Abnormal",
        "insufficient" => "Insufficient",
        other => {
            return Err(GatewayError::schema(
                schema,
                format!("illegal status `{other}`"),
            ));
        }
    };
    let score = match &payload["score"] {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    }
    .filter(|s| !s.is_nan())
    .ok_or_else(|| GatewayError::schema(schema, "`score` must be a number"))?;
    let reason = match &payload["reason"] {
        Value::String(s) if !s.trim().is_empty() => s.clone(),
        _ => {
            return Err(GatewayError::schema(
                schema,
                "`reason` must be a non-empty string",
            ))
        }
    };
    payload.insert("status".into(), Value::from(canonical));
    payload.insert("score".into(), Value::from(score.clamp(0.0, 1.0)));
    payload.insert("reason".into(), Value::from(reason));
    Ok(())
}

fn normalize_key(key: &str) -> String {
    key.trim()
        .chars()
        .map(|c| match c {
            ' ' | '-' => '_',
            c => c.to_ascii_lowercase(),
        })
        .collect()
}

/// The first `{...}` span (string-literal aware) that parses as a JSON object.
fn first_balanced_object(text: &str) -> Option<Map<String, Value>> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(offset) = text[start..].find('{') {
        let open = start + offset;
        if let Some(close) = matching_brace(bytes, open) {
            if let Ok(Value::Object(map)) = serde_json::from_str(&text[open..=close]) {
                return Some(map);
            }
        }
        start = open + 1;
    }
    None
}

fn matching_brace(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reply(text: &str) -> ModelReply {
        ModelReply {
            raw_text: text.to_string(),
            backend_id: "test".into(),
            latency_ms: 0,
        }
    }

    #[test]
    fn embedded_object_is_found() {
        let v = extract_structured(
            &reply(r#"Sure! {"status":"Normal","score":0.1,"reason":"street walking"}"#),
            SchemaName::ReasoningResult,
        )
        .unwrap();
        assert_eq!(v.payload["status"], "Normal");
        assert_eq!(v.payload["score"], 0.1);
        assert_eq!(v.str_field("reason"), Some("street walking"));
    }

    #[test]
    fn score_is_clamped() {
        let v = extract_structured(
            &reply(r#"{"status":"Abnormal","score":1.7,"reason":"x"}"#),
            SchemaName::ReasoningResult,
        )
        .unwrap();
        assert_eq!(v.payload["score"], 1.0);
        let v = extract_structured(
            &reply(r#"{"status":"abnormal","score":"-0.3","reason":"x"}"#),
            SchemaName::ReasoningResult,
        )
        .unwrap();
        assert_eq!(v.payload["score"], 0.0);
        assert_eq!(v.payload["status"], "Abnormal");
    }

    #[test]
    fn no_braces_is_a_parse_error() {
        let err = extract_structured(
            &reply("Normal, nothing to see"),
            SchemaName::ReasoningResult,
        )
        .unwrap_err();
        assert!(matches!(err, GatewayError::Parse));
    }

    #[test]
    fn illegal_status_and_missing_key_are_schema_errors() {
        let err = extract_structured(
            &reply(r#"{"status":"Maybe","score":0.5,"reason":"x"}"#),
            SchemaName::ReasoningResult,
        )
        .unwrap_err();
        assert!(matches!(err, GatewayError::Schema { .. }));
        let err = extract_structured(
            &reply(r#"{"status":"Normal","reason":"x"}"#),
            SchemaName::ReasoningResult,
        )
        .unwrap_err();
        assert!(matches!(err, GatewayError::Schema { .. }));
    }

    #[test]
    fn keys_are_normalized() {
        let v = extract_structured(
            &reply(
                r#"```json
{"Insufficient Reason": "too dark", "Tools to Use": [], "New Anomaly Rule": "r"}
```"#,
            ),
            SchemaName::ReflectionResult,
        )
        .unwrap();
        assert_eq!(v.str_field("insufficient_reason"), Some("too dark"));
        assert_eq!(v.str_field("new_anomaly_rule"), Some("r"));
    }

    #[test]
    fn braces_inside_strings_do_not_confuse_the_scanner() {
        let v = extract_structured(
            &reply(r#"note {not json} then {"status":"Normal","score":0,"reason":"a } b \" {"}"#),
            SchemaName::ReasoningResult,
        )
        .unwrap();
        assert_eq!(v.str_field("reason"), Some("a } b \" {"));
    }

    #[test]
    fn unbalanced_text_is_a_parse_error() {
        let err = extract_structured(&reply(r#"{"status":"Normal""#), SchemaName::ReasoningResult)
            .unwrap_err();
        assert!(matches!(err, GatewayError::Parse));
    }

    proptest! {
        #[test]
        fn extraction_inverts_serialization(
            prefix in "[a-zA-Z0-9 .,:!?\n]{0,40}",
            suffix in "[a-zA-Z0-9 .,:!?\n]{0,40}",
            status in prop::sample::select(vec!["Normal", "Abnormal", "Insufficient"]),
            score in 0.0f64..=1.0,
            reason in "[a-zA-Z0-9 {}\"\\\\]{1,30}",
        ) {
            prop_assume!(!reason.trim().is_empty());
            let mut payload = Map::new();
            payload.insert("reason".into(), Value::from(reason));
            payload.insert("score".into(), Value::from(score));
            payload.insert("status".into(), Value::from(status));
            let text = format!("{prefix}{}{suffix}", serde_json::to_string(&payload).unwrap());
            let v = extract_structured(&reply(&text), SchemaName::ReasoningResult).unwrap();
            prop_assert_eq!(v.payload, payload);
        }

        #[test]
        fn parsed_score_is_always_in_unit_interval(score in -1e6f64..1e6) {
            let text = format!(r#"{{"status":"Normal","score":{score},"reason":"r"}}"#);
            let v = extract_structured(&reply(&text), SchemaName::ReasoningResult).unwrap();
            let s = v.payload["score"].as_f64().unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }
}
