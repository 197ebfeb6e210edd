//! Mutator specifications and their labeled-section text format.

use serde::{Deserialize, Serialize};

use crate::corpus::ProgramText;
use crate::store::Keyed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutatorSpec {
    pub spec_id: String,
    pub source_report_id: String,
    pub name: String,
    pub target_construct: String,
    pub description: String,
    #[serde(default)]
    pub constraints: String,
    pub before_example: ProgramText,
    pub after_example: ProgramText,
}

impl Keyed for MutatorSpec {
    fn key(&self) -> &str {
        &self.spec_id
    }
}

/// Spec fields as parsed from an agent response, before ids are assigned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecFields {
    pub name: String,
    pub target_construct: String,
    pub description: String,
    pub constraints: String,
    pub before_example: String,
    pub after_example: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("specification lacks required section(s): {}", missing.join(", "))]
pub struct SpecParseError {
    pub missing: Vec<&'static str>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Name,
    Target,
    Description,
    Constraints,
    Before,
    After,
}

/// Accepted labels, longest first so that prefixes do not shadow.
const LABELS: &[(&str, Field)] = &[
    ("syntax correctness constraints", Field::Constraints),
    ("mutation operator name", Field::Name),
    ("syntax constraints", Field::Constraints),
    ("target construct", Field::Target),
    ("before mutation", Field::Before),
    ("after mutation", Field::After),
    ("before example", Field::Before),
    ("after example", Field::After),
    ("mutator name", Field::Name),
    ("operator name", Field::Name),
    ("applicability", Field::Target),
    ("description", Field::Description),
    ("constraints", Field::Constraints),
    ("target", Field::Target),
    ("before", Field::Before),
    ("after", Field::After),
    ("name", Field::Name),
];

/// Recognizes `Label: rest`, tolerating list markers, heading hashes and
/// bold markers. A label alone on its line needs no colon.
fn label_line(line: &str) -> Option<(Field, &str)> {
    let indent = line.len() - line.trim_start().len();
    if indent > 3 || line.starts_with('\t') {
        return None;
    }
    let stripped = line
        .trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '#' | '-' | '*' | '>' | '_'))
        .trim_start_matches(|c: char| c.is_ascii_digit());
    let stripped = stripped
        .strip_prefix(['.', ')'])
        .unwrap_or(stripped)
        .trim_start()
        .trim_start_matches(['*', '_']);
    let lower = stripped.to_ascii_lowercase();
    for (label, field) in LABELS {
        if !lower.starts_with(label) {
            continue;
        }
        let after = stripped[label.len()..].trim_start_matches(['*', '_']);
        let after_trim = after.trim_start();
        if let Some(rest) = after_trim.strip_prefix(':') {
            return Some((*field, rest.trim_start_matches(['*', '_']).trim()));
        }
        if after_trim.trim_end_matches(['*', '_', ' ']).is_empty() {
            return Some((*field, ""));
        }
    }
    None
}

/// Removes one surrounding code fence, keeping the inner lines byte-exact.
/// Text that does not start with a fence is returned unchanged.
pub fn strip_fence(text: &str) -> &str {
    let trimmed = text.trim();
    if !trimmed.starts_with("```") {
        return text;
    }
    let Some(first_nl) = trimmed.find('\n') else { return text };
    let inner = &trimmed[first_nl + 1..];
    match inner.rfind("```") {
        Some(close) if inner[close..].trim() == "```" && (close == 0 || inner[..close].ends_with('\n')) => {
            &inner[..close]
        }
        _ => inner,
    }
}

/// Parses labeled sections; name and constraints are optional, the other
/// four must be non-empty.
pub fn parse_spec(text: &str) -> Result<SpecFields, SpecParseError> {
    let mut current: Option<Field> = None;
    let mut buckets: Vec<(Field, String)> = Vec::new();
    let mut in_fence = false;
    for line in text.lines() {
        let fence = line.trim_start().starts_with("```");
        let label = if in_fence { None } else { label_line(line) };
        if fence {
            in_fence = !in_fence;
        }
        if let Some((field, rest)) = label {
            // First occurrence wins; a repeated label continues the text.
            if !buckets.iter().any(|(f, _)| *f == field) {
                buckets.push((field, String::new()));
            }
            current = Some(field);
            if !rest.is_empty() {
                append(&mut buckets, field, rest);
            }
            continue;
        }
        if let Some(field) = current {
            append(&mut buckets, field, line);
        }
    }
    let get = |f: Field| -> String {
        buckets
            .iter()
            .find(|(x, _)| *x == f)
            .map(|(_, s)| s.trim().to_string())
            .unwrap_or_default()
    };
    let fields = SpecFields {
        name: get(Field::Name),
        target_construct: get(Field::Target),
        description: get(Field::Description),
        constraints: get(Field::Constraints),
        before_example: strip_fence(&get(Field::Before)).trim_end().to_string(),
        after_example: strip_fence(&get(Field::After)).trim_end().to_string(),
    };
    let mut missing = Vec::new();
    for (value, label) in [
        (&fields.target_construct, "Target"),
        (&fields.description, "Description"),
        (&fields.before_example, "Before"),
        (&fields.after_example, "After"),
    ] {
        if value.trim().is_empty() {
            missing.push(label);
        }
    }
    if missing.is_empty() {
        Ok(fields)
    } else {
        Err(SpecParseError { missing })
    }
}

fn append(buckets: &mut [(Field, String)], field: Field, line: &str) {
    let slot = &mut buckets.iter_mut().find(|(f, _)| *f == field).expect("bucket exists").1;
    if !slot.is_empty() {
        slot.push('\n');
    }
    slot.push_str(line);
}

impl MutatorSpec {
    /// The labeled-section text handed to the synthesis agent; parses back
    /// to the same fields.
    pub fn render_text(&self) -> String {
        let name = if self.name.is_empty() { "unnamed" } else { &self.name };
        format!(
            "Name: {name}\nTarget: {}\nDescription: {}\nConstraints: {}\nBefore:\n{}\nAfter:\n{}\n",
            self.target_construct,
            self.description,
            self.constraints,
            self.before_example.text,
            self.after_example.text
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG_STYLE: &str = "\
Mutation Operator Specification
Name: Duplicate Generic In Tuple
Target Construct: struct fields whose type is a generic parameter of the struct
Description: Replace the first field type `T` with `(T, T)` so that layout
computation sees a tuple built from the generic parameter.
Syntax Correctness Constraints: Only rewrite fields whose type is exactly a
declared type parameter.
Before:
struct S<T> { a: T }
After:
struct S<T> { a: (T, T) }
";

    #[test]
    fn parses_labeled_layout() {
        let f = parse_spec(FIG_STYLE).unwrap();
        assert_eq!(f.name, "Duplicate Generic In Tuple");
        assert!(f.target_construct.starts_with("struct fields"));
        assert!(f.description.ends_with("generic parameter."));
        assert!(f.constraints.contains("declared type parameter"));
        assert_eq!(f.before_example, "struct S<T> { a: T }");
        assert_eq!(f.after_example, "struct S<T> { a: (T, T) }");
    }

    #[test]
    fn tolerant_label_forms() {
        let text = "1. **Name**: X\n## Target\nloops\n- description: does y\n**Before:**\n```rust\nfn a() {}\n```\n**After**:\n```\nfn b() {}\n```\n";
        let f = parse_spec(text).unwrap();
        assert_eq!(f.name, "X");
        assert_eq!(f.target_construct, "loops");
        assert_eq!(f.description, "does y");
        assert_eq!(f.before_example, "fn a() {}");
        assert_eq!(f.after_example, "fn b() {}");
    }

    #[test]
    fn code_lines_are_not_labels() {
        let text = "Target: structs\nDescription: d\nBefore:\n```\nstruct S {\n    target: u8,\n}\n```\nAfter:\nstruct S {\n    name: u8,\n}\n";
        let f = parse_spec(text).unwrap();
        assert_eq!(f.before_example, "struct S {\n    target: u8,\n}");
        assert_eq!(f.after_example, "struct S {\n    name: u8,\n}");
        assert_eq!(f.target_construct, "structs");
    }

    #[test]
    fn missing_after_is_an_error() {
        let text = FIG_STYLE.split("After:").next().unwrap();
        assert_eq!(parse_spec(text).unwrap_err().missing, vec!["After"]);
    }

    #[test]
    fn render_round_trips() {
        let f = parse_spec(FIG_STYLE).unwrap();
        let spec = MutatorSpec {
            spec_id: "s".into(),
            source_report_id: "r".into(),
            name: f.name.clone(),
            target_construct: f.target_construct.clone(),
            description: f.description.clone(),
            constraints: f.constraints.clone(),
            before_example: ProgramText::new(f.before_example.clone()),
            after_example: ProgramText::new(f.after_example.clone()),
        };
        assert_eq!(parse_spec(&spec.render_text()).unwrap(), f);
    }

    #[test]
    fn fence_stripping_is_byte_exact() {
        assert_eq!(strip_fence("```rust\nfn f() {\n    x\n}\n```\n"), "fn f() {\n    x\n}\n");
        assert_eq!(strip_fence("plain\n"), "plain\n");
        assert_eq!(strip_fence("```\nopen\nends"), "open\nends");
    }
}
