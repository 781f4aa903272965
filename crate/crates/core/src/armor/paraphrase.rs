//! Text rewriting to break exact-match trigger sequences.
//!
//! The built-in transform is a deterministic normalizer: NFC fold, removal
//! of invisible control characters, whitespace collapse, and sentence
//! reordering by a stable sort key. It is idempotent, so repeated
//! application is safe. Plugins with stronger (e.g. model-backed)
//! paraphrasing implement the same contract as external executables.

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use unicode_normalization::UnicodeNormalization;

use super::sanitize::is_invisible_control;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransformError {
    #[error("transform {name:?} failed: {message}")]
    Failed { name: String, message: String },
}

/// Transform contract shared by the built-in normalizer and plugins.
pub trait TextTransform: Send + Sync {
    fn name(&self) -> &str;
    fn transform(&self, text: &str) -> Result<String, TransformError>;
}

/// Apply the transform. Callers treat failure as "leave text unchanged and
/// record the event".
pub fn paraphrase(text: &str, transform: &dyn TextTransform) -> Result<String, TransformError> {
    transform.transform(text)
}

/// NFC fold, invisible-character strip, whitespace collapse, and sentence
/// reordering by lexicographic key. Deterministic and idempotent.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalizingTransform;

impl NormalizingTransform {
    fn normalize(text: &str) -> String {
        let folded: String = text
            .nfc()
            .filter(|c| !is_invisible_control(*c))
            .collect();
        let collapsed = folded.split_whitespace().collect::<Vec<_>>().join(" ");
        reorder_sentences(&collapsed)
    }
}

/// Split into sentences (a sentence ends at a run of `.`, `!`, `?`), sort
/// terminated sentences lexicographically, and keep a trailing unterminated
/// fragment last so the join re-splits into the same pieces.
fn reorder_sentences(text: &str) -> String {
    let mut sentences: Vec<String> = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if matches!(c, '.' | '!' | '?') {
            // Consume the whole terminator run.
            while let Some(&next) = chars.peek() {
                if matches!(next, '.' | '!' | '?') {
                    current.push(next);
                    chars.next();
                } else {
                    break;
                }
            }
            let trimmed = current.trim().to_string();
            if !trimmed.is_empty() {
                sentences.push(trimmed);
            }
            current.clear();
        }
    }
    let fragment = current.trim().to_string();
    sentences.sort();
    if !fragment.is_empty() {
        sentences.push(fragment);
    }
    sentences.join(" ")
}

impl TextTransform for NormalizingTransform {
    fn name(&self) -> &str {
        "builtin-normalizer"
    }

    fn transform(&self, text: &str) -> Result<String, TransformError> {
        Ok(Self::normalize(text))
    }
}

/// External transform executable: text on stdin, transformed text on stdout.
pub struct ExternalTransform {
    pub command: PathBuf,
    pub timeout: Duration,
}

impl ExternalTransform {
    pub fn new(command: impl Into<PathBuf>) -> Self {
        Self {
            command: command.into(),
            timeout: Duration::from_secs(5),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn failed(&self, message: impl Into<String>) -> TransformError {
        TransformError::Failed {
            name: self.command.display().to_string(),
            message: message.into(),
        }
    }
}

impl TextTransform for ExternalTransform {
    fn name(&self) -> &str {
        self.command.to_str().unwrap_or("external")
    }

    fn transform(&self, text: &str) -> Result<String, TransformError> {
        let mut child = Command::new(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| self.failed(e.to_string()))?;

        let mut stdin = child.stdin.take().expect("piped stdin");
        let mut stdout = child.stdout.take().expect("piped stdout");
        let input = text.to_string();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let result = stdin.write_all(input.as_bytes()).and_then(|_| {
                drop(stdin);
                let mut out = String::new();
                stdout.read_to_string(&mut out).map(|_| out)
            });
            let _ = tx.send(result);
        });

        let output = match rx.recv_timeout(self.timeout) {
            Ok(Ok(out)) => out,
            Ok(Err(e)) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(self.failed(e.to_string()));
            }
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(self.failed(format!("timed out after {:?}", self.timeout)));
            }
        };
        let status = child.wait().map_err(|e| self.failed(e.to_string()))?;
        if !status.success() {
            return Err(self.failed(format!("exit status {status}")));
        }
        Ok(output)
    }
}
