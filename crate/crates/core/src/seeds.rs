//! Seed programs: collection from reports and test suites, identifier
//! replacement enhancement, and compile filtering.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BugReport, ProgramText};
use crate::fuzz::{compile_and_classify, CompileOutcome, CompilerTarget, OracleError};
use crate::store::{self, Keyed, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedOrigin {
    Report,
    Testsuite,
    Enhanced,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedProgram {
    pub seed_id: String,
    pub origin: SeedOrigin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    #[serde(flatten)]
    pub text: ProgramText,
}

impl Keyed for SeedProgram {
    fn key(&self) -> &str {
        &self.seed_id
    }
}

impl SeedProgram {
    /// A non-enhanced seed whose id is derived from its bytes.
    pub fn from_text(text: ProgramText, origin: SeedOrigin) -> Self {
        Self {
            seed_id: content_id(&text.text),
            origin,
            parent_id: None,
            text,
        }
    }
}

pub fn content_id(text: &str) -> String {
    format!("s-{}", &crate::sha256_hex(text)[..16])
}

#[derive(Debug, thiserror::Error)]
pub enum SeedError {
    #[error("target count {target} is below the {available} input seeds")]
    TargetTooSmall { target: usize, available: usize },
    #[error("no seeds to enhance")]
    NoSeeds,
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Which snippets and test-suite files belong to the target language.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LangFilter {
    /// File extensions (without dot) accepted from test-suite directories.
    pub extensions: Vec<String>,
    /// Fence info words accepted for report snippets; unlabeled fences always
    /// pass, and an empty list accepts everything.
    #[serde(default)]
    pub fence_hints: Vec<String>,
}

impl LangFilter {
    pub fn for_language(language: &str) -> Self {
        let (ext, hints): (&[&str], &[&str]) = match language {
            "rust" => (&["rs"], &["rust", "rs"]),
            "cpp" | "c++" => (
                &["cpp", "cc", "cxx", "c++", "C"],
                &["cpp", "c++", "cc", "cxx", "c"],
            ),
            "c" => (&["c"], &["c"]),
            _ => (&[], &[]),
        };
        Self {
            extensions: ext.iter().map(|s| s.to_string()).collect(),
            fence_hints: hints.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn accepts_hint(&self, hint: Option<&str>) -> bool {
        let Some(hint) = hint else { return true };
        if self.fence_hints.is_empty() {
            return true;
        }
        let word = hint
            .split(|c: char| c == ',' || c.is_whitespace())
            .next()
            .unwrap_or("")
            .to_ascii_lowercase();
        self.fence_hints.iter().any(|h| h.eq_ignore_ascii_case(&word))
    }

    fn accepts_path(&self, path: &Path) -> bool {
        path.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| self.extensions.iter().any(|x| x == e))
    }
}

/// One seed per report snippet and per matching test-suite file, collapsed
/// by content. Unreadable files are skipped with a warning.
pub fn collect(reports: &[BugReport], testsuite_dirs: &[PathBuf], filter: &LangFilter) -> Vec<SeedProgram> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut push = |text: ProgramText, origin| {
        if text.text.trim().is_empty() {
            return;
        }
        let seed = SeedProgram::from_text(text, origin);
        if seen.insert(seed.seed_id.clone()) {
            out.push(seed);
        }
    };
    for report in reports {
        for snippet in &report.snippets {
            if filter.accepts_hint(snippet.language_hint.as_deref()) {
                push(snippet.clone(), SeedOrigin::Report);
            }
        }
    }
    for dir in testsuite_dirs {
        let walk = walkdir::WalkDir::new(dir).sort_by_file_name();
        for entry in walk {
            let entry = match entry {
                Ok(e) => e,
                Err(e) => {
                    log::warn!("skipping unreadable entry under {}: {e}", dir.display());
                    continue;
                }
            };
            if !entry.file_type().is_file() || !filter.accepts_path(entry.path()) {
                continue;
            }
            match fs::read(entry.path()).map(String::from_utf8) {
                Ok(Ok(text)) => push(ProgramText::new(text), SeedOrigin::Testsuite),
                Ok(Err(_)) => log::warn!("skipping non-UTF-8 file {}", entry.path().display()),
                Err(e) => log::warn!("skipping unreadable file {}: {e}", entry.path().display()),
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenClass {
    TypeLike,
    ValueLike,
    LifetimeLike,
    Other,
}

/// A lexical token as a byte span. `class` is set iff the token is a
/// replaceable identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub start: usize,
    pub end: usize,
    pub class: Option<TokenClass>,
}

impl Token {
    pub fn text<'a>(&self, src: &'a str) -> &'a str {
        &src[self.start..self.end]
    }
}

/// Splits a program into tokens covering every byte, in order.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<Token>;
}

/// Language-agnostic lexer with keyword-context and capitalization rules.
#[derive(Debug, Clone)]
pub struct LexicalTokenizer {
    keywords: HashSet<String>,
    type_intro: HashSet<String>,
    builtin_types: HashSet<String>,
    lifetimes: bool,
}

const RUST_KEYWORDS: &[&str] = &[
    "as", "async", "await", "break", "const", "continue", "crate", "dyn", "else", "enum", "extern",
    "false", "fn", "for", "if", "impl", "in", "let", "loop", "match", "mod", "move", "mut", "pub",
    "ref", "return", "self", "Self", "static", "struct", "super", "trait", "true", "type", "union",
    "unsafe", "use", "where", "while", "macro_rules", "yield", "gen", "try",
];
const RUST_TYPE_INTRO: &[&str] = &["struct", "enum", "trait", "type", "union", "impl", "dyn"];
const RUST_BUILTIN_TYPES: &[&str] = &[
    "i8", "i16", "i32", "i64", "i128", "isize", "u8", "u16", "u32", "u64", "u128", "usize", "f16",
    "f32", "f64", "f128", "bool", "char", "str",
];
const CPP_KEYWORDS: &[&str] = &[
    "alignas", "alignof", "auto", "bool", "break", "case", "catch", "char", "char8_t", "char16_t",
    "char32_t", "class", "co_await", "co_return", "co_yield", "concept", "const", "consteval",
    "constexpr", "constinit", "const_cast", "continue", "decltype", "default", "delete", "do",
    "double", "dynamic_cast", "else", "enum", "explicit", "export", "extern", "false", "float",
    "for", "friend", "goto", "if", "inline", "int", "long", "mutable", "namespace", "new",
    "noexcept", "nullptr", "operator", "private", "protected", "public", "register",
    "reinterpret_cast", "requires", "return", "short", "signed", "sizeof", "static",
    "static_assert", "static_cast", "struct", "switch", "template", "this", "thread_local",
    "throw", "true", "try", "typedef", "typeid", "typename", "union", "unsigned", "using",
    "virtual", "void", "volatile", "wchar_t", "while",
];
const CPP_TYPE_INTRO: &[&str] = &["class", "struct", "enum", "union", "typename", "concept"];

fn set(words: &[&str]) -> HashSet<String> {
    words.iter().map(|s| s.to_string()).collect()
}

impl LexicalTokenizer {
    pub fn rust() -> Self {
        Self {
            keywords: set(RUST_KEYWORDS),
            type_intro: set(RUST_TYPE_INTRO),
            builtin_types: set(RUST_BUILTIN_TYPES),
            lifetimes: true,
        }
    }

    pub fn cpp() -> Self {
        Self {
            keywords: set(CPP_KEYWORDS),
            type_intro: set(CPP_TYPE_INTRO),
            builtin_types: set(&["size_t", "int8_t", "int16_t", "int32_t", "int64_t", "uint8_t", "uint16_t", "uint32_t", "uint64_t"]),
            lifetimes: false,
        }
    }

    /// Keywords of both Rust and C++, no lifetimes.
    pub fn generic() -> Self {
        let mut keywords = set(RUST_KEYWORDS);
        keywords.extend(set(CPP_KEYWORDS));
        let mut type_intro = set(RUST_TYPE_INTRO);
        type_intro.extend(set(CPP_TYPE_INTRO));
        Self {
            keywords,
            type_intro,
            builtin_types: HashSet::new(),
            lifetimes: false,
        }
    }

    pub fn for_language(language: &str) -> Self {
        match language {
            "rust" => Self::rust(),
            "cpp" | "c++" | "c" => Self::cpp(),
            _ => Self::generic(),
        }
    }
}

fn is_ident_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_ident_continue(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

/// Byte scanner over a str that only stops on char boundaries.
struct Scan<'a> {
    s: &'a str,
    pos: usize,
}

impl Scan<'_> {
    fn peek_at(&self, i: usize) -> Option<char> {
        self.s.get(i..).and_then(|r| r.chars().next())
    }

    fn ident_end(&self, from: usize) -> usize {
        let mut end = from;
        for c in self.s[from..].chars() {
            if !is_ident_continue(c) {
                break;
            }
            end += c.len_utf8();
        }
        end
    }

    /// End of a quoted literal starting at `open` (the quote), honoring
    /// backslash escapes; `None` when unterminated (or, with
    /// `stop_at_newline`, when a newline comes first).
    fn quoted_end(&self, open: usize, quote: char, stop_at_newline: bool) -> Option<usize> {
        let mut escaped = false;
        for (off, c) in self.s[open + 1..].char_indices() {
            if stop_at_newline && c == '\n' {
                return None;
            }
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == quote {
                return Some(open + 1 + off + 1);
            }
        }
        None
    }

    /// Rust `r"..."`, `r#"..."#`, `b"..."`, `br"..."` and `b'x'` literals.
    fn prefixed_literal_end(&self, at: usize) -> Option<usize> {
        let b = self.s.as_bytes();
        match (b[at], b.get(at + 1)) {
            (b'r', _) => self.raw_string_end(at),
            (b'b', Some(b'r')) => self.raw_string_end(at + 1),
            (b'b', Some(b'"')) => self.quoted_end(at + 1, '"', false),
            (b'b', Some(b'\'')) => self.quoted_end(at + 1, '\'', true),
            _ => None,
        }
    }

    /// Rust raw string `r#*"..."#*` starting at `at` (the `r`).
    fn raw_string_end(&self, at: usize) -> Option<usize> {
        let rest = &self.s[at + 1..];
        let hashes = rest.bytes().take_while(|&b| b == b'#').count();
        if rest.as_bytes().get(hashes) != Some(&b'"') {
            return None;
        }
        let body_start = at + 1 + hashes + 1;
        let closing = format!("\"{}", "#".repeat(hashes));
        self.s[body_start..]
            .find(&closing)
            .map(|i| body_start + i + closing.len())
    }
}

impl Tokenizer for LexicalTokenizer {
    fn tokenize(&self, text: &str) -> Vec<Token> {
        let mut scan = Scan { s: text, pos: 0 };
        let mut raw: Vec<(usize, usize, Option<&'static str>)> = Vec::new();
        // Kinds: "ws", "comment", "lit", "punct", "ident", "lifetime".
        while scan.pos < text.len() {
            let start = scan.pos;
            let c = scan.peek_at(start).expect("in bounds");
            let next = scan.peek_at(start + c.len_utf8());
            let (end, kind) = if c.is_whitespace() {
                let mut end = start;
                for ch in text[start..].chars() {
                    if !ch.is_whitespace() {
                        break;
                    }
                    end += ch.len_utf8();
                }
                (end, "ws")
            } else if c == '/' && next == Some('/') {
                (text[start..].find('\n').map_or(text.len(), |i| start + i), "comment")
            } else if c == '/' && next == Some('*') {
                (text[start + 2..].find("*/").map_or(text.len(), |i| start + 2 + i + 2), "comment")
            } else if c == '"' {
                (scan.quoted_end(start, '"', false).unwrap_or(text.len()), "lit")
            } else if let Some(end) = self.lifetimes.then(|| scan.prefixed_literal_end(start)).flatten() {
                (end, "lit")
            } else if c == '\'' {
                match next {
                    Some(n) if self.lifetimes && is_ident_start(n) => {
                        let id_end = scan.ident_end(start + 1);
                        if text[id_end..].starts_with('\'') {
                            (id_end + 1, "lit")
                        } else {
                            (id_end, "lifetime")
                        }
                    }
                    _ => match scan.quoted_end(start, '\'', true) {
                        Some(e) => (e, "lit"),
                        None => (start + 1, "punct"),
                    },
                }
            } else if c.is_ascii_digit() {
                let mut end = start;
                let bytes = text.as_bytes();
                while end < text.len() {
                    let b = bytes[end];
                    let more = b.is_ascii_alphanumeric()
                        || b == b'_'
                        || (b == b'.' && bytes.get(end + 1).is_some_and(u8::is_ascii_digit));
                    if !more {
                        break;
                    }
                    end += 1;
                }
                (end, "lit")
            } else if is_ident_start(c) {
                (scan.ident_end(start), "ident")
            } else {
                (start + c.len_utf8(), "punct")
            };
            raw.push((start, end, Some(kind)));
            scan.pos = end;
        }

        let significant: Vec<usize> = raw
            .iter()
            .enumerate()
            .filter(|(_, (_, _, k))| !matches!(k, Some("ws") | Some("comment")))
            .map(|(i, _)| i)
            .collect();
        let prev_sig: HashMap<usize, usize> =
            significant.windows(2).map(|w| (w[1], w[0])).collect();

        raw.iter()
            .enumerate()
            .map(|(i, &(start, end, kind))| {
                let word = &text[start..end];
                let class = match kind {
                    Some("lifetime") if word != "'static" && word != "'_" => Some(TokenClass::LifetimeLike),
                    Some("ident") if !self.keywords.contains(word) && word != "_" => {
                        let prev = prev_sig.get(&i).map(|&p| &text[raw[p].0..raw[p].1]);
                        let after = &text[end..];
                        let macro_bang = after.starts_with('!') && !after.starts_with("!=");
                        Some(if prev == Some("#") || macro_bang {
                            TokenClass::Other
                        } else if prev.is_some_and(|p| self.type_intro.contains(p))
                            || self.builtin_types.contains(word)
                            || word.chars().next().is_some_and(char::is_uppercase)
                        {
                            TokenClass::TypeLike
                        } else {
                            TokenClass::ValueLike
                        })
                    }
                    _ => None,
                };
                Token { start, end, class }
            })
            .collect()
    }
}

/// Identifier pools per class, in sorted order.
pub fn identifier_pools(text: &str, tokens: &[Token]) -> BTreeMap<TokenClass, Vec<String>> {
    let mut pools: BTreeMap<TokenClass, BTreeSet<&str>> = BTreeMap::new();
    for t in tokens {
        if let Some(class) = t.class {
            pools.entry(class).or_default().insert(t.text(text));
        }
    }
    pools
        .into_iter()
        .map(|(k, v)| (k, v.into_iter().map(str::to_string).collect()))
        .collect()
}

/// Replaces every identifier with a uniformly drawn member of its class pool.
pub fn replace_identifiers(text: &str, tokenizer: &dyn Tokenizer, rng: &mut impl Rng) -> String {
    let tokens = tokenizer.tokenize(text);
    let pools = identifier_pools(text, &tokens);
    let mut out = String::with_capacity(text.len());
    for t in &tokens {
        match t.class {
            Some(class) => {
                let pool = &pools[&class];
                let pick = if pool.len() == 1 { 0 } else { rng.random_range(0..pool.len()) };
                out.push_str(&pool[pick]);
            }
            None => out.push_str(t.text(text)),
        }
    }
    out
}

/// Returns the originals followed by enhanced variants up to `target_count`.
/// Parents are drawn uniformly from the input; output is a pure function of
/// the arguments.
pub fn enhance(
    seeds: &[SeedProgram],
    target_count: usize,
    tokenizer: &dyn Tokenizer,
    rng_seed: u64,
) -> Result<Vec<SeedProgram>, SeedError> {
    if target_count < seeds.len() {
        return Err(SeedError::TargetTooSmall {
            target: target_count,
            available: seeds.len(),
        });
    }
    if seeds.is_empty() {
        return if target_count == 0 { Ok(Vec::new()) } else { Err(SeedError::NoSeeds) };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = seeds.to_vec();
    let mut ids: HashSet<String> = seeds.iter().map(|s| s.seed_id.clone()).collect();
    let mut counters = vec![0usize; seeds.len()];
    while out.len() < target_count {
        let pi = rng.random_range(0..seeds.len());
        let parent = &seeds[pi];
        let text = replace_identifiers(&parent.text.text, tokenizer, &mut rng);
        let seed_id = loop {
            counters[pi] += 1;
            let id = format!("{}-e{}", parent.seed_id, counters[pi]);
            if ids.insert(id.clone()) {
                break id;
            }
        };
        out.push(SeedProgram {
            seed_id,
            origin: SeedOrigin::Enhanced,
            parent_id: Some(parent.seed_id.clone()),
            text: ProgramText {
                text,
                language_hint: parent.text.language_hint.clone(),
            },
        });
    }
    Ok(out)
}

/// Keeps the seeds the compiler accepts, in input order.
pub fn compile_filter(
    seeds: &[SeedProgram],
    compiler: &CompilerTarget,
    work_dir: &Path,
    workers: usize,
) -> Result<Vec<SeedProgram>, SeedError> {
    compiler.validate()?;
    let verdicts: Vec<Mutex<Option<Result<bool, OracleError>>>> =
        seeds.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = |w: usize| loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= seeds.len() {
            break;
        }
        let dir = work_dir.join(format!("w{w}"));
        let verdict = compile_and_classify(compiler, &seeds[i].text, &dir)
            .map(|o| matches!(o, CompileOutcome::Ok { .. }));
        let failed = verdict.is_err();
        *verdicts[i].lock().expect("verdict lock") = Some(verdict);
        if failed {
            next.store(seeds.len(), Ordering::SeqCst);
        }
    };
    thread::scope(|s| {
        for w in 0..workers.clamp(1, seeds.len().max(1)) {
            let work = &work;
            s.spawn(move || work(w));
        }
    });
    let _ = fs::remove_dir_all(work_dir);
    let mut out = Vec::new();
    for (seed, verdict) in seeds.iter().zip(verdicts) {
        match verdict.into_inner().expect("verdict lock") {
            Some(Ok(true)) => out.push(seed.clone()),
            Some(Ok(false)) => {}
            Some(Err(e)) => return Err(e.into()),
            None => {}
        }
    }
    Ok(out)
}

pub fn store_seeds(path: &Path, seeds: &[SeedProgram]) -> Result<(), StoreError> {
    store::write_records(path, seeds)
}

pub fn load_seeds(path: &Path) -> Result<Vec<SeedProgram>, StoreError> {
    store::read_records(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes(text: &str, tk: &LexicalTokenizer) -> Vec<(String, Option<TokenClass>)> {
        tk.tokenize(text)
            .into_iter()
            .filter(|t| !t.text(text).trim().is_empty())
            .map(|t| (t.text(text).to_string(), t.class))
            .collect()
    }

    #[test]
    fn tokens_cover_input() {
        let src = "fn main<'a>(x: &'a str) { let c = 'c'; println!(\"{x} \\\" \"); /* c */ // e\n 1.5e3 }";
        let tk = LexicalTokenizer::rust();
        let toks = tk.tokenize(src);
        let mut pos = 0;
        for t in &toks {
            assert_eq!(t.start, pos);
            pos = t.end;
        }
        assert_eq!(pos, src.len());
    }

    #[test]
    fn classifies_identifiers() {
        use TokenClass::*;
        let src = "struct foo; fn bar<'a>(x: &'a Baz) -> i32 { println!(\"s\"); x }";
        let got: Vec<_> = classes(src, &LexicalTokenizer::rust())
            .into_iter()
            .filter(|(_, c)| c.is_some())
            .collect();
        let want = [
            ("foo", TypeLike),
            ("bar", ValueLike),
            ("'a", LifetimeLike),
            ("x", ValueLike),
            ("'a", LifetimeLike),
            ("Baz", TypeLike),
            ("i32", TypeLike),
            ("println", Other),
            ("x", ValueLike),
        ];
        let want: Vec<_> = want.iter().map(|(s, c)| (s.to_string(), Some(*c))).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn char_literals_and_strings_are_opaque() {
        let tk = LexicalTokenizer::rust();
        let got = classes("let c = 'x'; let s = \"a b\"; let r = r#\"q\"#;", &tk);
        assert!(got.contains(&("'x'".into(), None)));
        assert!(got.contains(&("\"a b\"".into(), None)));
        assert!(got.contains(&("r#\"q\"#".into(), None)));
    }

    #[test]
    fn cpp_preprocessor_names_are_other() {
        let got = classes("#include <vector>\nint main() { return 0; }", &LexicalTokenizer::cpp());
        assert!(got.contains(&("include".into(), Some(TokenClass::Other))));
        assert!(got.contains(&("int".into(), None)));
        assert!(got.contains(&("main".into(), Some(TokenClass::ValueLike))));
    }

    fn seed(text: &str) -> SeedProgram {
        SeedProgram::from_text(ProgramText::new(text), SeedOrigin::Report)
    }

    #[test]
    fn single_identifier_program_unchanged() {
        let s = seed("x + 1;");
        let out = enhance(std::slice::from_ref(&s), 3, &LexicalTokenizer::rust(), 7).unwrap();
        assert_eq!(out.len(), 3);
        for v in &out[1..] {
            assert_eq!(v.text.text, s.text.text);
            assert_eq!(v.parent_id.as_deref(), Some(s.seed_id.as_str()));
            assert_eq!(v.origin, SeedOrigin::Enhanced);
        }
    }

    #[test]
    fn target_equal_to_input_is_identity() {
        let seeds = vec![seed("a"), seed("b")];
        assert_eq!(enhance(&seeds, 2, &LexicalTokenizer::rust(), 1).unwrap(), seeds);
        assert!(matches!(
            enhance(&seeds, 1, &LexicalTokenizer::rust(), 1),
            Err(SeedError::TargetTooSmall { .. })
        ));
    }

    #[test]
    fn collect_dedups_and_walks_dirs() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.rs"), "fn a() {}").unwrap();
        fs::write(dir.path().join("b.rs"), "fn b() {}").unwrap();
        fs::write(dir.path().join("dup.rs"), "fn s1() {}").unwrap();
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let report = BugReport::from_parts(
            "r#1",
            "o/r",
            "t",
            vec![],
            "```rust\nfn s1() {}\n```\n```\nfn s2() {}\n```\n```python\nprint(1)\n```",
            crate::corpus::ReportStatus::Fixed,
        );
        let seeds = collect(&[report], &[dir.path().to_path_buf()], &LangFilter::for_language("rust"));
        let texts: Vec<_> = seeds.iter().map(|s| s.text.text.as_str()).collect();
        assert_eq!(texts, ["fn s1() {}", "fn s2() {}", "fn a() {}", "fn b() {}"]);
        assert!(collect(&[], &[], &LangFilter::for_language("rust")).is_empty());
    }
}
