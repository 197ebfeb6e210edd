//! Sectioned prompt templates with `{Slot}` placeholders.
//!
//! A template file is a sequence of `[Section]:` blocks. `{Name}` marks a
//! slot; `{{` and `}}` stand for literal braces. Bound values are inserted
//! verbatim and never rescanned.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::llm::{Agent, Message};

pub const SECTIONS: [&str; 5] = ["Role", "Task", "Functional Instructions", "Output Instructions", "Input"];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template {origin}: missing section [{0}]", origin = .1)]
    MissingSection(String, String),
    #[error("template {origin}: unknown section [{0}]", origin = .1)]
    UnknownSection(String, String),
    #[error("template {origin}: text before the first section")]
    Preamble { origin: String },
    #[error("template {origin}: unterminated slot starting at byte {at}")]
    Unterminated { origin: String, at: usize },
    #[error("template {origin}: cannot read: {message}")]
    Read { origin: String, message: String },
    #[error("unbound slot `{0}`")]
    Unbound(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub agent: Agent,
    /// Section name and raw body, in file order.
    pub sections: Vec<(String, String)>,
    pub slots: BTreeSet<String>,
    parsed: Vec<Vec<Piece>>,
}

/// System and user message text produced by rendering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

impl RenderedPrompt {
    pub fn messages(&self) -> Vec<Message> {
        vec![Message::system(&self.system), Message::user(&self.user)]
    }
}

fn section_header(line: &str) -> Option<(&str, &str)> {
    let rest = line.strip_prefix('[')?;
    let close = rest.find(']')?;
    let name = &rest[..close];
    let after = rest[close + 1..].strip_prefix(':')?;
    Some((name.trim(), after.strip_prefix(' ').unwrap_or(after)))
}

fn split_pieces(body: &str, origin: &str, offset: usize) -> Result<Vec<Piece>, TemplateError> {
    let mut pieces = Vec::new();
    let mut text = String::new();
    let bytes = body.as_bytes();
    let mut i = 0;
    while i < body.len() {
        let rest = &body[i..];
        if rest.starts_with("{{") {
            text.push('{');
            i += 2;
        } else if rest.starts_with("}}") {
            text.push('}');
            i += 2;
        } else if bytes[i] == b'{' {
            let close = rest.find('}').ok_or(TemplateError::Unterminated {
                origin: origin.to_string(),
                at: offset + i,
            })?;
            let name = &rest[1..close];
            let plausible = !name.is_empty()
                && name.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
                && name.chars().all(|c| c.is_ascii_alphanumeric() || c == ' ' || c == '-' || c == '_');
            if plausible {
                if !text.is_empty() {
                    pieces.push(Piece::Text(std::mem::take(&mut text)));
                }
                pieces.push(Piece::Slot(name.to_string()));
            } else {
                text.push_str(&rest[..=close]);
            }
            i += close + 1;
        } else {
            let c = rest.chars().next().expect("in bounds");
            text.push(c);
            i += c.len_utf8();
        }
    }
    if !text.is_empty() {
        pieces.push(Piece::Text(text));
    }
    Ok(pieces)
}

impl PromptTemplate {
    pub fn parse(agent: Agent, text: &str, origin: &str) -> Result<Self, TemplateError> {
        let mut sections: Vec<(String, String)> = Vec::new();
        let mut offsets = Vec::new();
        let mut pos = 0;
        for line in text.split_inclusive('\n') {
            let bare = line.trim_end_matches(['\n', '\r']);
            if let Some((name, first)) = section_header(bare) {
                if !SECTIONS.contains(&name) {
                    return Err(TemplateError::UnknownSection(name.into(), origin.into()));
                }
                let header_len = line.len() - first.len() - (line.len() - bare.len());
                sections.push((name.to_string(), String::new()));
                offsets.push(pos + header_len);
                sections.last_mut().expect("pushed").1.push_str(&line[header_len..]);
            } else if let Some(last) = sections.last_mut() {
                last.1.push_str(line);
            } else if !line.trim().is_empty() {
                return Err(TemplateError::Preamble { origin: origin.into() });
            }
            pos += line.len();
        }
        for s in &mut sections {
            let trimmed = s.1.trim_end().to_string();
            s.1 = trimmed;
        }
        for required in SECTIONS {
            if !sections.iter().any(|(n, _)| n == required) {
                return Err(TemplateError::MissingSection(required.into(), origin.into()));
            }
        }
        let mut parsed = Vec::new();
        let mut slots = BTreeSet::new();
        for ((_, body), off) in sections.iter().zip(offsets) {
            let pieces = split_pieces(body, origin, off)?;
            for p in &pieces {
                if let Piece::Slot(s) = p {
                    slots.insert(s.clone());
                }
            }
            parsed.push(pieces);
        }
        Ok(Self {
            agent,
            sections,
            slots,
            parsed,
        })
    }

    pub fn load(agent: Agent, path: &Path) -> Result<Self, TemplateError> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| TemplateError::Read {
            origin: origin.clone(),
            message: e.to_string(),
        })?;
        Self::parse(agent, &text, &origin)
    }

    /// Renders every section. The Role section becomes the system message;
    /// the remaining sections, each under its `[Name]:` label, the user one.
    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<RenderedPrompt, TemplateError> {
        if let Some(missing) = self.slots.iter().find(|s| !bindings.contains_key(*s)) {
            return Err(TemplateError::Unbound(missing.clone()));
        }
        let mut system = String::new();
        let mut user_parts = Vec::new();
        for ((name, _), pieces) in self.sections.iter().zip(&self.parsed) {
            let mut out = String::new();
            for p in pieces {
                match p {
                    Piece::Text(t) => out.push_str(t),
                    Piece::Slot(s) => out.push_str(&bindings[s]),
                }
            }
            if name == "Role" {
                system = out;
            } else {
                user_parts.push(format!("[{name}]: {out}"));
            }
        }
        Ok(RenderedPrompt {
            system,
            user: user_parts.join("\n\n"),
        })
    }
}

/// Convenience for building a binding map from string pairs.
pub fn bindings<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const T: &str = "[Role]: You know {Language}.\n[Task]: Work on {Tag}.\n[Functional Instructions]: 1. Keep {{braces}}.\n2. More.\n[Output Instructions]: Plain text.\n[Input]: Code:\n{Bug-Triggering Code}\n";

    #[test]
    fn parses_sections_and_slots() {
        let t = PromptTemplate::parse(Agent::Invention, T, "t").unwrap();
        assert_eq!(t.sections.len(), 5);
        let slots: Vec<_> = t.slots.iter().map(String::as_str).collect();
        assert_eq!(slots, ["Bug-Triggering Code", "Language", "Tag"]);
    }

    #[test]
    fn renders_without_rescanning_values() {
        let t = PromptTemplate::parse(Agent::Invention, T, "t").unwrap();
        let r = t
            .render(&bindings([("Language", "Rust"), ("Tag", "I-ICE"), ("Bug-Triggering Code", "fn f() { {Tag} }")]))
            .unwrap();
        assert_eq!(r.system, "You know Rust.");
        assert!(r.user.starts_with("[Task]: Work on I-ICE."));
        assert!(r.user.contains("Keep {braces}"));
        assert!(r.user.ends_with("Code:\nfn f() { {Tag} }"));
    }

    #[test]
    fn missing_binding_and_section() {
        let t = PromptTemplate::parse(Agent::Invention, T, "t").unwrap();
        assert_eq!(t.render(&bindings([("Language", "Rust")])), Err(TemplateError::Unbound("Bug-Triggering Code".into())));
        let broken = T.replace("[Task]", "[Tusk]");
        assert!(matches!(PromptTemplate::parse(Agent::Invention, &broken, "t"), Err(TemplateError::UnknownSection(..))));
        let missing = T.replace("[Output Instructions]: Plain text.\n", "");
        assert!(matches!(PromptTemplate::parse(Agent::Invention, &missing, "t"), Err(TemplateError::MissingSection(..))));
    }

    proptest! {
        #[test]
        fn rendering_is_total(lang in "[ -z|~]{0,40}", tag in "[ -z|~\n]{0,40}", code in "[ -z|~\n]{0,80}") {
            let t = PromptTemplate::parse(Agent::Invention, T, "t").unwrap();
            let r = t.render(&bindings([("Language", lang), ("Tag", tag), ("Bug-Triggering Code", code)])).unwrap();
            let all = format!("{}\n{}", r.system, r.user);
            for s in &t.slots {
                let needle = format!("{{{s}}}");
                prop_assert!(!all.contains(&needle));
            }
        }
    }
}
