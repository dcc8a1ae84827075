//! Prompt templates keyed by role.
//!
//! A template file holds a `[system]` section followed by a `[user]`
//! section; `{{name}}` placeholders are substituted at render time. Built-in
//! templates are compiled in and may be overridden from a directory holding
//! `<role>.txt` files.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::gateway::Role;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template for role `{role}` is missing its `{section}` section")]
    MissingSection { role: Role, section: &'static str },
    #[error("template for role `{role}` references unknown variable `{name}`")]
    UnknownVariable { role: Role, name: String },
    #[error("template for role `{role}` has an unterminated placeholder")]
    Unterminated { role: Role },
    #[error("failed to read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    role: Role,
    system: String,
    user: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

impl Template {
    pub fn parse(role: Role, text: &str) -> Result<Self, TemplateError> {
        let sys_at = text
            .find("[system]\n")
            .ok_or(TemplateError::MissingSection {
                role,
                section: "system",
            })?;
        let user_at = text.find("[user]\n").ok_or(TemplateError::MissingSection {
            role,
            section: "user",
        })?;
        if user_at < sys_at {
            return Err(TemplateError::MissingSection {
                role,
                section: "system",
            });
        }
        Ok(Self {
            role,
            system: text[sys_at + "[system]\n".len()..user_at]
                .trim_end()
                .to_string(),
            user: text[user_at + "[user]\n".len()..].trim_end().to_string(),
        })
    }

    pub fn render(&self, vars: &BTreeMap<&str, String>) -> Result<RenderedPrompt, TemplateError> {
        Ok(RenderedPrompt {
            system: substitute(self.role, &self.system, vars)?,
            user: substitute(self.role, &self.user, vars)?,
        })
    }
}

fn substitute(
    role: Role,
    text: &str,
    vars: &BTreeMap<&str, String>,
) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let close = after
            .find("}}")
            .ok_or(TemplateError::Unterminated { role })?;
        let name = after[..close].trim();
        let value = vars
            .get(name)
            .ok_or_else(|| TemplateError::UnknownVariable {
                role,
                name: name.to_string(),
            })?;
        out.push_str(value);
        rest = &after[close + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<Role, Template>,
}

impl PromptSet {
    pub fn builtin() -> Self {
        let sources = [
            (Role::Knowledge, include_str!("../prompts/knowledge.txt")),
            (Role::Perception, include_str!("../prompts/perception.txt")),
            (Role::Planning, include_str!("../prompts/planning.txt")),
            (Role::Reasoning, include_str!("../prompts/reasoning.txt")),
            (Role::Reflection, include_str!("../prompts/reflection.txt")),
        ];
        let templates = sources
            .into_iter()
            .map(|(role, text)| {
                (
                    role,
                    Template::parse(role, text).expect("built-in template is well formed"),
                )
            })
            .collect();
        Self { templates }
    }

    /// Built-ins, with any `<role>.txt` found in `dir` taking precedence.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::builtin();
        for role in Role::ALL {
            let path = dir.join(format!("{role}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                set.templates.insert(role, Template::parse(role, &text)?);
            }
        }
        Ok(set)
    }

    pub fn get(&self, role: Role) -> &Template {
        &self.templates[&role]
    }

    pub fn render(
        &self,
        role: Role,
        vars: &BTreeMap<&str, String>,
    ) -> Result<RenderedPrompt, TemplateError> {
        self.get(role).render(vars)
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}
