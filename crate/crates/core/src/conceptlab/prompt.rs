// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cases::Case;
use crate::error::{Error, Result};

const BUILTIN_CONSTRUCT: &str = include_str!("../../templates/construct.v1.txt");
const BUILTIN_VERIFY: &str = include_str!("../../templates/verify.v1.txt");
pub const BUILTIN_VERSION: &str = "v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

/// A one-shot chat template: system text, an example exchange and the
/// query. Section bodies may hold `{{name}}` placeholders.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    pub system: String,
    pub example_query: String,
    pub example_answer: String,
    pub query: String,
}

impl Template {
    /// Parses `[section]` blocks. Lines starting with `#` before the first
    /// section are comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, Vec<&str>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for line in text.lines() {
            let t = line.trim_end();
            if t.starts_with('[') && t.ends_with(']') && t.len() > 2 && !t.contains(' ') {
                let name = t[1..t.len() - 1].to_string();
                if sections.contains_key(&name) {
                    return Err(Error::Template(format!("duplicate section [{name}]")));
                }
                sections.insert(name.clone(), Vec::new());
                current = Some(name);
            } else if let Some(name) = &current {
                sections.get_mut(name).expect("section exists").push(line);
            } else if !(t.is_empty() || t.starts_with('#')) {
                return Err(Error::Template(format!("text outside a section: {t:?}")));
            }
        }
        let mut take = |name: &str| -> Result<String> {
            let lines = sections
                .remove(name)
                .ok_or_else(|| Error::Template(format!("missing section [{name}]")))?;
            Ok(lines.join("\n").trim().to_string())
        };
        let template = Self {
            system: take("system")?,
            example_query: take("example_query")?,
            example_answer: take("example_answer")?,
            query: take("query")?,
        };
        if let Some(extra) = sections.keys().next() {
            return Err(Error::Template(format!("unknown section [{extra}]")));
        }
        Ok(template)
    }

    /// The chat messages with placeholders in every section filled.
    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<Vec<ChatMessage>> {
        Ok(vec![
            ChatMessage::new(Role::System, fill(&self.system, values)?),
            ChatMessage::new(Role::User, fill(&self.example_query, values)?),
            ChatMessage::new(Role::Assistant, fill(&self.example_answer, values)?),
            ChatMessage::new(Role::User, fill(&self.query, values)?),
        ])
    }
}

/// Replaces `{{name}}` in one left-to-right pass. Substituted text is never
/// rescanned; unknown names are an error.
pub fn fill(text: &str, values: &BTreeMap<&str, String>) -> Result<String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| Error::Template("unterminated placeholder".into()))?;
        let name = after[..end].trim();
        let value = values
            .get(name)
            .ok_or_else(|| Error::Template(format!("no value for placeholder {{{{{name}}}}}")))?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Construction and verification templates of one version.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemplateSet {
    pub version: String,
    pub construct: Template,
    pub verify: Template,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self {
            version: BUILTIN_VERSION.to_string(),
            construct: Template::parse(BUILTIN_CONSTRUCT).expect("builtin construct template parses"),
            verify: Template::parse(BUILTIN_VERIFY).expect("builtin verify template parses"),
        }
    }

    /// Reads `construct.<version>.txt` and `verify.<version>.txt` from `dir`.
    pub fn load(dir: &Path, version: &str) -> Result<Self> {
        let read = |kind: &str| -> Result<Template> {
            let path = dir.join(format!("{kind}.{version}.txt"));
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::Template(format!("cannot read {}: {e}", path.display())))?;
            Template::parse(&text)
        };
        Ok(Self {
            version: version.to_string(),
            construct: read("construct")?,
            verify: read("verify")?,
        })
    }
}

/// One case block. The level line is included only when `with_level`.
pub fn render_case(index: usize, case: &Case, with_level: bool) -> String {
    let mut block = format!(
        "Case {index}:\nHistory: {}\nPredicted item: {}",
        case.history_titles.join(" | "),
        case.predicted_title
    );
    if !case.predicted_categories.is_empty() {
        block.push_str(&format!(" [{}]", case.predicted_categories.join(", ")));
    }
    if with_level {
        block.push_str(&format!("\nActivation level: {}", case.level));
    }
    block
}

/// Single-line form used in exports.
pub fn render_case_line(case: &Case) -> String {
    let mut line = format!(
        "History: {} => Predicted: {}",
        case.history_titles.join(" | "),
        case.predicted_title
    );
    if !case.predicted_categories.is_empty() {
        line.push_str(&format!(" [{}]", case.predicted_categories.join(", ")));
    }
    line
}

pub fn construction_prompt(templates: &TemplateSet, cases: &[Case]) -> Result<Vec<ChatMessage>> {
    let blocks: Vec<String> = cases
        .iter()
        .enumerate()
        .map(|(i, c)| render_case(i + 1, c, true))
        .collect();
    let values = BTreeMap::from([("n", cases.len().to_string()), ("cases", blocks.join("\n\n"))]);
    templates.construct.render(&values)
}

pub fn verification_prompt(templates: &TemplateSet, description: &str, case: &Case) -> Result<Vec<ChatMessage>> {
    let values = BTreeMap::from([
        ("description", crate::corpus::flatten_text(description)),
        ("case", render_case(1, case, false)),
    ]);
    templates.verify.render(&values)
}
