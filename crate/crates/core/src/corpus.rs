//! Bug-report mining: issue-tracker client, fenced code extraction and the
//! line-delimited report corpus.

use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::http::{send_with_retry, HttpRequest, HttpTransport, RetryFailure, RetryPolicy};
use crate::store::{self, Keyed, StoreError};

/// Source code lifted from a report or test suite.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProgramText {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language_hint: Option<String>,
}

impl ProgramText {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            language_hint: None,
        }
    }

    pub fn with_hint(text: impl Into<String>, hint: Option<&str>) -> Self {
        Self {
            text: text.into(),
            language_hint: hint.map(str::to_string),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportStatus {
    Fixed,
    Resolved,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugReport {
    pub report_id: String,
    pub source_repo: String,
    pub title: String,
    #[serde(default)]
    pub labels: Vec<String>,
    pub body: String,
    #[serde(default)]
    pub snippets: Vec<ProgramText>,
    #[serde(default)]
    pub diagnostics: String,
    pub status: ReportStatus,
    /// Fields written by other tools; carried through load/store untouched.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Keyed for BugReport {
    fn key(&self) -> &str {
        &self.report_id
    }
}

impl BugReport {
    /// Builds a report from raw issue parts, splitting fenced blocks into
    /// program snippets and diagnostic excerpts.
    pub fn from_parts(
        report_id: impl Into<String>,
        source_repo: impl Into<String>,
        title: impl Into<String>,
        labels: Vec<String>,
        body: impl Into<String>,
        status: ReportStatus,
    ) -> Self {
        let body = body.into();
        let mut snippets = Vec::new();
        let mut diagnostics = Vec::new();
        for block in extract_programs(&body) {
            if looks_like_diagnostics(&block) {
                diagnostics.push(block.text);
            } else {
                snippets.push(block);
            }
        }
        Self {
            report_id: report_id.into(),
            source_repo: source_repo.into(),
            title: title.into(),
            labels,
            body,
            snippets,
            diagnostics: diagnostics.join("\n\n"),
            status,
            extra: Map::new(),
        }
    }
}

const CODE_HINTS: &[&str] = &[
    "rust", "rs", "c", "cpp", "c++", "cc", "cxx", "h", "hpp", "objc", "cuda", "llvm",
];
const DIAG_HINTS: &[&str] = &[
    "console", "text", "txt", "log", "stderr", "output", "plain", "plaintext", "shell", "sh",
    "bash", "shell-session",
];

fn diagnostic_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?m)^\s*(error|warning)(\[E\d+\])?:|internal compiler error|panicked at|stack backtrace:|Stack dump:|PLEASE submit a bug report|Segmentation fault|^\s*#?\d+:?\s+0x[0-9a-fA-F]+",
        )
        .expect("diagnostic regex")
    })
}

/// Whether a fenced block carries compiler output rather than a program.
pub fn looks_like_diagnostics(block: &ProgramText) -> bool {
    let hint = block.language_hint.as_deref().map(str::to_ascii_lowercase);
    match hint.as_deref() {
        Some(h) if CODE_HINTS.contains(&h) => false,
        Some(h) if DIAG_HINTS.contains(&h) => true,
        _ => diagnostic_re().is_match(&block.text),
    }
}

fn fence_open(line: &str) -> Option<(usize, &str)> {
    let indent = line.len() - line.trim_start_matches(' ').len();
    if indent > 3 {
        return None;
    }
    let rest = &line[indent..];
    let ticks = rest.len() - rest.trim_start_matches('`').len();
    if ticks < 3 {
        return None;
    }
    let info = rest[ticks..].trim();
    // Backticks in the info string mean this is inline code, not a fence.
    if info.contains('`') {
        return None;
    }
    Some((ticks, info))
}

fn fence_close(line: &str, open_ticks: usize) -> bool {
    let indent = line.len() - line.trim_start_matches(' ').len();
    if indent > 3 {
        return false;
    }
    let rest = &line[indent..];
    let ticks = rest.len() - rest.trim_start_matches('`').len();
    ticks >= open_ticks && rest[ticks..].trim().is_empty()
}

/// Returns every triple-backtick fenced block in `body`, in order.
///
/// Each snippet is a contiguous slice of `body` with trailing whitespace
/// trimmed; whitespace-only blocks are dropped. An unclosed fence runs to the
/// end of the body. Indented code blocks are not recognised.
pub fn extract_programs(body: &str) -> Vec<ProgramText> {
    let mut out = Vec::new();
    let mut open: Option<(usize, Option<String>, usize)> = None;
    let mut offset = 0;
    for raw in body.split_inclusive('\n') {
        let line = raw.trim_end_matches(['\n', '\r']);
        match &open {
            None => {
                if let Some((ticks, info)) = fence_open(line) {
                    let hint = info.split_whitespace().next().map(str::to_string);
                    open = Some((ticks, hint, offset + raw.len()));
                }
            }
            Some((ticks, hint, start)) => {
                if fence_close(line, *ticks) {
                    push_block(&mut out, &body[*start..offset], hint.clone());
                    open = None;
                }
            }
        }
        offset += raw.len();
    }
    if let Some((_, hint, start)) = open {
        push_block(&mut out, &body[start.min(body.len())..], hint);
    }
    out
}

fn push_block(out: &mut Vec<ProgramText>, region: &str, hint: Option<String>) {
    let text = region.trim_end();
    if !text.trim().is_empty() {
        out.push(ProgramText {
            text: text.to_string(),
            language_hint: hint,
        });
    }
}

pub fn store_corpus(path: &Path, reports: &[BugReport]) -> Result<(), StoreError> {
    store::write_records(path, reports)
}

pub fn load_corpus(path: &Path) -> Result<Vec<BugReport>, StoreError> {
    store::read_records(path)
}

#[derive(Debug, thiserror::Error)]
pub enum MineError {
    #[error("network failure fetching {url} (status {status:?}): {message}")]
    Network {
        url: String,
        status: Option<u16>,
        message: String,
        retriable: bool,
    },
    #[error("malformed issue payload: field `{field}`: {message}")]
    Parse { field: String, message: String },
}

/// Which reports to keep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFilter {
    #[serde(default = "default_statuses")]
    pub statuses: Vec<ReportStatus>,
    /// Keep only issues carrying at least one of these labels (empty: all).
    #[serde(default)]
    pub labels: Vec<String>,
    /// Labels that mark a closed issue as fixed.
    #[serde(default)]
    pub fixed_labels: Vec<String>,
}

fn default_statuses() -> Vec<ReportStatus> {
    vec![ReportStatus::Fixed, ReportStatus::Resolved]
}

impl Default for ReportFilter {
    fn default() -> Self {
        Self {
            statuses: default_statuses(),
            labels: Vec::new(),
            fixed_labels: Vec::new(),
        }
    }
}

impl ReportFilter {
    /// Maps tracker state to a report status. Closed issues carrying an
    /// allowlisted label are fixed; other issues closed as completed are
    /// resolved; everything else is `Other`.
    pub fn status_of(&self, state: &str, state_reason: Option<&str>, labels: &[String]) -> ReportStatus {
        if state != "closed" {
            return ReportStatus::Other;
        }
        let fixed = labels
            .iter()
            .any(|l| self.fixed_labels.iter().any(|f| f.eq_ignore_ascii_case(l)));
        if fixed {
            ReportStatus::Fixed
        } else if matches!(state_reason, None | Some("completed")) {
            ReportStatus::Resolved
        } else {
            ReportStatus::Other
        }
    }

    pub fn accepts(&self, report: &BugReport) -> bool {
        self.statuses.contains(&report.status)
            && (self.labels.is_empty()
                || report
                    .labels
                    .iter()
                    .any(|l| self.labels.iter().any(|f| f.eq_ignore_ascii_case(l))))
    }
}

/// Issue-tracker client speaking the GitHub REST issue-listing API.
pub struct TrackerClient<'a> {
    pub transport: &'a dyn HttpTransport,
    pub api_base: String,
    pub token: Option<String>,
    pub retry: RetryPolicy,
    pub per_page: usize,
}

impl<'a> TrackerClient<'a> {
    pub fn new(transport: &'a dyn HttpTransport, api_base: impl Into<String>) -> Self {
        Self {
            transport,
            api_base: api_base.into().trim_end_matches('/').to_string(),
            token: None,
            retry: RetryPolicy::default(),
            per_page: 100,
        }
    }

    pub fn first_page_url(&self, repo: &str, filter: &ReportFilter, since: Option<&str>) -> String {
        let only_closed = filter.statuses.iter().all(|s| *s != ReportStatus::Other);
        let state = if only_closed { "closed" } else { "all" };
        let mut url = format!(
            "{}/repos/{}/issues?state={}&per_page={}&sort=created&direction=asc",
            self.api_base, repo, state, self.per_page
        );
        if let Some(since) = since {
            url.push_str("&since=");
            url.push_str(since);
        }
        url
    }

    fn get(&self, url: &str) -> Result<crate::http::HttpResponse, MineError> {
        let mut req = HttpRequest::get(url)
            .header("Accept", "application/vnd.github+json")
            .header("User-Agent", "mutforge-miner");
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let resp = send_with_retry(self.transport, &req, self.retry).map_err(|f| match f {
            RetryFailure::Transport(e) => MineError::Network {
                url: url.to_string(),
                status: None,
                message: e.message,
                retriable: true,
            },
            RetryFailure::Status(r) => MineError::Network {
                url: url.to_string(),
                status: Some(r.status),
                message: truncate(&r.body, 200),
                retriable: true,
            },
        })?;
        if !resp.is_success() {
            return Err(MineError::Network {
                url: url.to_string(),
                status: Some(resp.status),
                message: truncate(&resp.body, 200),
                retriable: false,
            });
        }
        Ok(resp)
    }

    /// Fetches up to `limit` matching reports in API order, following
    /// pagination links. Pull requests are skipped.
    pub fn fetch_reports(
        &self,
        repo: &str,
        filter: &ReportFilter,
        limit: usize,
        since: Option<&str>,
    ) -> Result<Vec<BugReport>, MineError> {
        let mut out = Vec::new();
        if limit == 0 {
            return Ok(out);
        }
        let mut next = Some(self.first_page_url(repo, filter, since));
        while let Some(url) = next.take() {
            let resp = self.get(&url)?;
            let page: Value = serde_json::from_str(&resp.body).map_err(|e| MineError::Parse {
                field: "<root>".into(),
                message: e.to_string(),
            })?;
            let items = page.as_array().ok_or_else(|| MineError::Parse {
                field: "<root>".into(),
                message: "expected an array of issues".into(),
            })?;
            if items.is_empty() {
                break;
            }
            for (idx, item) in items.iter().enumerate() {
                if item.get("pull_request").is_some() {
                    continue;
                }
                let report = parse_issue(repo, item, filter)
                    .map_err(|(field, message)| MineError::Parse {
                        field: format!("[{idx}].{field}"),
                        message,
                    })?;
                if filter.accepts(&report) {
                    out.push(report);
                    if out.len() >= limit {
                        return Ok(out);
                    }
                }
            }
            next = resp.header("link").and_then(next_link);
        }
        Ok(out)
    }
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}…", &s[..i]),
        None => s.to_string(),
    }
}

fn next_link(header: &str) -> Option<String> {
    header.split(',').find_map(|part| {
        let (url, rel) = part.split_once(';')?;
        if rel.contains("rel=\"next\"") {
            Some(url.trim().trim_start_matches('<').trim_end_matches('>').to_string())
        } else {
            None
        }
    })
}

fn parse_issue(repo: &str, item: &Value, filter: &ReportFilter) -> Result<BugReport, (String, String)> {
    let field = |name: &str, msg: &str| (name.to_string(), msg.to_string());
    let number = item
        .get("number")
        .and_then(Value::as_u64)
        .ok_or_else(|| field("number", "missing or not an integer"))?;
    let title = item
        .get("title")
        .and_then(Value::as_str)
        .ok_or_else(|| field("title", "missing or not a string"))?;
    let body = match item.get("body") {
        None | Some(Value::Null) => "",
        Some(Value::String(s)) => s.as_str(),
        Some(_) => return Err(field("body", "not a string")),
    };
    let state = item
        .get("state")
        .and_then(Value::as_str)
        .ok_or_else(|| field("state", "missing or not a string"))?;
    let state_reason = item.get("state_reason").and_then(Value::as_str);
    let labels = match item.get("labels") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, l)| match l {
                Value::String(s) => Ok(s.clone()),
                Value::Object(o) => o
                    .get("name")
                    .and_then(Value::as_str)
                    .map(str::to_string)
                    .ok_or_else(|| field(&format!("labels[{i}].name"), "missing")),
                _ => Err(field(&format!("labels[{i}]"), "unexpected label shape")),
            })
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(field("labels", "not an array")),
    };
    let status = filter.status_of(state, state_reason, &labels);
    let mut report = BugReport::from_parts(
        format!("{repo}#{number}"),
        repo,
        title,
        labels,
        body,
        status,
    );
    if let Some(url) = item.get("html_url").and_then(Value::as_str) {
        report.extra.insert("url".into(), Value::String(url.into()));
    }
    if let Some(ts) = item.get("updated_at").and_then(Value::as_str) {
        report.extra.insert("updated_at".into(), Value::String(ts.into()));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::{FixtureExchange, FixtureTransport, HttpResponse, Method};
    use std::time::Duration;

    #[test]
    fn no_fences() {
        assert!(extract_programs("just prose\n    indented code\n").is_empty());
    }

    #[test]
    fn two_blocks_in_order() {
        let body = "a\n```rust\nfn a() {}\n```\ntext\n```\nB\n```\n";
        let got = extract_programs(body);
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].text, "fn a() {}");
        assert_eq!(got[0].language_hint.as_deref(), Some("rust"));
        assert_eq!(got[1].text, "B");
        assert_eq!(got[1].language_hint, None);
    }

    #[test]
    fn empty_blocks_dropped_and_unclosed_runs_to_end() {
        let body = "```\n   \n```\n````c\nint x;\n```\nstill\n";
        let got = extract_programs(body);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].text, "int x;\n```\nstill");
    }

    #[test]
    fn crlf_bodies() {
        let got = extract_programs("x\r\n```rust\r\nfn f() {}\r\n```\r\n");
        assert_eq!(got[0].text, "fn f() {}");
    }

    #[test]
    fn inline_triple_ticks_are_not_fences() {
        assert!(extract_programs("use ```a``` inline\n").is_empty());
    }

    #[test]
    fn report_splits_diagnostics() {
        let body = "Title\n```rust\nfn main() {}\n```\n```\nerror: internal compiler error: boom\n```\n";
        let r = BugReport::from_parts("r#1", "r", "t", vec![], body, ReportStatus::Fixed);
        assert_eq!(r.snippets.len(), 1);
        assert_eq!(r.diagnostics, "error: internal compiler error: boom");
        assert_eq!(r.body, body);
    }

    #[test]
    fn status_mapping() {
        let f = ReportFilter {
            fixed_labels: vec!["fixed-by-pr".into()],
            ..Default::default()
        };
        let labels = vec!["Fixed-By-PR".to_string()];
        assert_eq!(f.status_of("closed", Some("completed"), &labels), ReportStatus::Fixed);
        assert_eq!(f.status_of("closed", Some("completed"), &[]), ReportStatus::Resolved);
        assert_eq!(f.status_of("closed", Some("not_planned"), &[]), ReportStatus::Other);
        assert_eq!(f.status_of("open", None, &labels), ReportStatus::Other);
    }

    #[test]
    fn link_header_parsing() {
        let h = r#"<https://api/x?page=2>; rel="next", <https://api/x?page=9>; rel="last""#;
        assert_eq!(next_link(h).as_deref(), Some("https://api/x?page=2"));
        assert_eq!(next_link(r#"<https://api/x?page=1>; rel="prev""#), None);
    }

    #[test]
    fn limit_zero_makes_no_request() {
        let t = FixtureTransport::new(vec![]);
        let client = TrackerClient::new(&t, "https://api.example");
        let got = client
            .fetch_reports("o/r", &ReportFilter::default(), 0, None)
            .unwrap();
        assert!(got.is_empty());
        assert!(t.requests().is_empty());
    }

    #[test]
    fn malformed_payload_names_field() {
        let client_t = FixtureTransport::new(vec![FixtureExchange {
            method: Method::Get,
            url: "https://api.example/repos/o/r/issues?state=closed&per_page=100&sort=created&direction=asc".into(),
            response: HttpResponse {
                status: 200,
                headers: vec![],
                body: r#"[{"number": 1, "title": 5, "state": "closed"}]"#.into(),
            },
        }]);
        let client = TrackerClient::new(&client_t, "https://api.example");
        match client.fetch_reports("o/r", &ReportFilter::default(), 10, None) {
            Err(MineError::Parse { field, .. }) => assert_eq!(field, "[0].title"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn http_failure_carries_status() {
        let url = "https://api.example/repos/o/r/issues?state=closed&per_page=100&sort=created&direction=asc";
        let resp = |s| FixtureExchange {
            method: Method::Get,
            url: url.into(),
            response: HttpResponse {
                status: s,
                headers: vec![],
                body: "slow down".into(),
            },
        };
        let t = FixtureTransport::new(vec![resp(429), resp(429), resp(429)]);
        let mut client = TrackerClient::new(&t, "https://api.example");
        client.retry = RetryPolicy {
            attempts: 3,
            base_delay: Duration::ZERO,
        };
        match client.fetch_reports("o/r", &ReportFilter::default(), 10, None) {
            Err(MineError::Network { status, retriable, .. }) => {
                assert_eq!(status, Some(429));
                assert!(retriable);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
