use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// What the operator asked the agent to detect.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserQuery {
    pub text: String,
    /// Anomaly categories, lowercase, deduplicated, in first-seen order.
    pub categories: Vec<String>,
}

impl UserQuery {
    pub fn new(
        text: impl Into<String>,
        categories: impl IntoIterator<Item = impl AsRef<str>>,
    ) -> Self {
        let mut out: Vec<String> = Vec::new();
        for c in categories {
            let c = c.as_ref().trim().to_lowercase();
            if !c.is_empty() && !out.contains(&c) {
                out.push(c);
            }
        }
        Self {
            text: text.into(),
            categories: out,
        }
    }

    /// Reads categories out of free text such as
    /// `"Detect anomalies: fighting, arson and robbery"`: everything after
    /// the last colon is split on `,`, `;`, ` and ` and ` or `.
    pub fn parse(text: &str) -> Self {
        let list = text.rsplit(':').next().unwrap_or(text);
        let normalized = list
            .replace(" and ", ",")
            .replace(" or ", ",")
            .replace(';', ",");
        Self::new(text.trim(), normalized.split(','))
    }

    /// Digest over the text and categories; keys the persisted knowledge base.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.text.as_bytes());
        for c in &self.categories {
            h.update([0u8]);
            h.update(c.as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
