//! Subprocess execution with stdin feeding, output capture and a wall-clock
//! timeout. Children are started in their own process group so a timeout
//! kills the whole tree (shell wrappers included).

use std::io::{Read, Write};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use wait_timeout::ChildExt;

#[derive(Debug, thiserror::Error)]
pub enum SpawnError {
    #[error("program not found: {program}")]
    NotFound { program: String },
    #[error("failed to run {program}: {source}")]
    Io {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("empty command line")]
    EmptyCommand,
}

/// A fully substituted command line.
#[derive(Debug, Clone)]
pub struct CommandLine {
    pub program: String,
    pub args: Vec<String>,
    pub cwd: Option<PathBuf>,
    pub env: Vec<(String, String)>,
}

impl CommandLine {
    pub fn new(argv: &[String]) -> Result<Self, SpawnError> {
        let (program, args) = argv.split_first().ok_or(SpawnError::EmptyCommand)?;
        Ok(Self {
            program: program.clone(),
            args: args.to_vec(),
            cwd: None,
            env: Vec::new(),
        })
    }

    pub fn cwd(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cwd = Some(dir.into());
        self
    }

    pub fn env(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.env.push((key.into(), value.into()));
        self
    }

    /// Shell-quoted rendering for reproduction scripts.
    pub fn display(&self) -> String {
        std::iter::once(&self.program)
            .chain(self.args.iter())
            .map(|a| shell_quote(a))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn shell_quote(arg: &str) -> String {
    let safe = !arg.is_empty()
        && arg
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b"-_./=:,+@%".contains(&b));
    if safe {
        arg.to_string()
    } else {
        format!("'{}'", arg.replace('\'', "'\\''"))
    }
}

/// Substitutes `{name}` placeholders in every argument.
pub fn substitute(template: &[String], vars: &[(&str, &str)]) -> Vec<String> {
    template
        .iter()
        .map(|arg| {
            let mut out = arg.clone();
            for (name, value) in vars {
                out = out.replace(&format!("{{{name}}}"), value);
            }
            out
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessOutput {
    pub code: Option<i32>,
    pub signal: Option<i32>,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub timed_out: bool,
    pub elapsed: Duration,
}

impl ProcessOutput {
    pub fn success(&self) -> bool {
        !self.timed_out && self.code == Some(0)
    }

    pub fn stderr_text(&self) -> String {
        String::from_utf8_lossy(&self.stderr).into_owned()
    }

    pub fn stdout_text(&self) -> String {
        String::from_utf8_lossy(&self.stdout).into_owned()
    }
}

fn spawn_reader<R: Read + Send + 'static>(mut src: R) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = src.read_to_end(&mut buf);
        buf
    })
}

/// Runs `cmd`, feeding `stdin` and killing the process group after `timeout`.
pub fn run(
    cmd: &CommandLine,
    stdin: Option<&[u8]>,
    timeout: Duration,
) -> Result<ProcessOutput, SpawnError> {
    let mut command = Command::new(&cmd.program);
    command
        .args(&cmd.args)
        .stdin(if stdin.is_some() {
            Stdio::piped()
        } else {
            Stdio::null()
        })
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    if let Some(dir) = &cmd.cwd {
        command.current_dir(dir);
    }
    for (k, v) in &cmd.env {
        command.env(k, v);
    }

    let start = Instant::now();
    let mut spawned = command.spawn();
    // ETXTBSY: another thread forked while a freshly written executable was
    // still open for writing. The window closes once that fork execs.
    for _ in 0..20 {
        match &spawned {
            Err(e) if e.raw_os_error() == Some(libc::ETXTBSY) => {
                thread::sleep(Duration::from_millis(10));
                spawned = command.spawn();
            }
            _ => break,
        }
    }
    let mut child = spawned.map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound
            || source.kind() == std::io::ErrorKind::PermissionDenied
        {
            SpawnError::NotFound {
                program: cmd.program.clone(),
            }
        } else {
            SpawnError::Io {
                program: cmd.program.clone(),
                source,
            }
        }
    })?;
    let pid = child.id() as i32;

    let writer = match (stdin, child.stdin.take()) {
        (Some(data), Some(mut pipe)) => {
            let data = data.to_vec();
            Some(thread::spawn(move || {
                // EPIPE is expected when the child exits without reading.
                let _ = pipe.write_all(&data);
            }))
        }
        _ => None,
    };
    let out_reader = spawn_reader(child.stdout.take().expect("piped stdout"));
    let err_reader = spawn_reader(child.stderr.take().expect("piped stderr"));

    let waited = child.wait_timeout(timeout).map_err(|source| SpawnError::Io {
        program: cmd.program.clone(),
        source,
    })?;
    let (status, timed_out) = match waited {
        Some(status) => {
            // Reap stragglers that still hold our pipes open.
            kill_group(pid);
            (status, false)
        }
        None => {
            kill_group(pid);
            let status = child.wait().map_err(|source| SpawnError::Io {
                program: cmd.program.clone(),
                source,
            })?;
            (status, true)
        }
    };
    if let Some(w) = writer {
        let _ = w.join();
    }
    let stdout = out_reader.join().unwrap_or_default();
    let stderr = err_reader.join().unwrap_or_default();

    Ok(ProcessOutput {
        code: status.code(),
        signal: status.signal(),
        stdout,
        stderr,
        timed_out,
        elapsed: start.elapsed(),
    })
}

fn kill_group(pid: i32) {
    // SAFETY: signalling a process group we created; failure (ESRCH) is benign.
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
}

/// Sets the owner/group/other execute bits.
pub fn make_executable(path: &Path) -> std::io::Result<()> {
    use std::os::unix::fs::PermissionsExt;
    let mut perms = std::fs::metadata(path)?.permissions();
    perms.set_mode(perms.mode() | 0o111);
    std::fs::set_permissions(path, perms)
}

/// Resolves `program` against `base` when it is a relative path with a
/// directory component (`fixtures/cc.sh`), leaving bare names for `$PATH`.
pub fn resolve_program(program: &str, base: &Path) -> String {
    let p = Path::new(program);
    if p.is_relative() && p.components().count() > 1 {
        base.join(p).to_string_lossy().into_owned()
    } else {
        program.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(script: &str) -> CommandLine {
        CommandLine::new(&["sh".into(), "-c".into(), script.into()]).unwrap()
    }

    #[test]
    fn captures_output_and_code() {
        let out = run(&sh("echo hi; echo err >&2; exit 3"), None, Duration::from_secs(5)).unwrap();
        assert_eq!(out.code, Some(3));
        assert_eq!(out.stdout, b"hi\n");
        assert_eq!(out.stderr, b"err\n");
        assert!(!out.timed_out);
    }

    #[test]
    fn feeds_stdin() {
        let out = run(&sh("cat"), Some(b"a+b"), Duration::from_secs(5)).unwrap();
        assert_eq!(out.stdout, b"a+b");
    }

    #[test]
    fn timeout_kills_tree() {
        let start = Instant::now();
        let out = run(&sh("sleep 30; echo late"), None, Duration::from_millis(300)).unwrap();
        assert!(out.timed_out);
        assert!(start.elapsed() < Duration::from_secs(5));
        assert!(out.stdout.is_empty());
    }

    #[test]
    fn signal_reported() {
        let out = run(&sh("kill -SEGV $$"), None, Duration::from_secs(5)).unwrap();
        assert_eq!(out.signal, Some(libc::SIGSEGV));
        assert_eq!(out.code, None);
    }

    #[test]
    fn missing_program() {
        let cmd = CommandLine::new(&["/nonexistent/tool".into()]).unwrap();
        assert!(matches!(
            run(&cmd, None, Duration::from_secs(1)),
            Err(SpawnError::NotFound { .. })
        ));
    }

    #[test]
    fn substitution_and_quote() {
        let argv = substitute(
            &["cc".into(), "{src}".into(), "-o{out}".into()],
            &[("src", "a b.c"), ("out", "x")],
        );
        assert_eq!(argv, vec!["cc", "a b.c", "-ox"]);
        assert_eq!(shell_quote("a b"), "'a b'");
        assert_eq!(shell_quote("plain/path.c"), "plain/path.c");
    }
}
