//! Injection detection: a weighted-rule engine plus a plugin seam for an
//! external judge.
//!
//! The built-in rules cover instruction-override phrases, role-marker
//! injection, canary-extraction asks, placeholder-syntax probing, and
//! exfiltration verbs paired with URLs. A report's score is the sum of the
//! weights of the distinct rules that matched; thresholds turn the score
//! into Clean / Suspicious / Malicious.
//!
//! External detectors are executables fed the text on stdin that print an
//! [`InjectionReport`] as JSON on stdout. A failing or slow plugin yields
//! [`DetectorError::Unavailable`]; callers fall back to the built-in engine
//! and record the fallback.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

/// Classification of a scanned text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionVerdict {
    Clean,
    Suspicious,
    Malicious,
}

/// One rule match. The excerpt is capped at 80 characters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionFinding {
    pub rule_id: String,
    pub span: (usize, usize),
    pub excerpt: String,
}

/// Scan outcome: weighted score, every match, and the thresholded verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionReport {
    pub score: f64,
    pub findings: Vec<InjectionFinding>,
    pub verdict: InjectionVerdict,
}

impl InjectionReport {
    pub fn clean() -> Self {
        Self {
            score: 0.0,
            findings: Vec::new(),
            verdict: InjectionVerdict::Clean,
        }
    }

    pub fn is_malicious(&self) -> bool {
        self.verdict == InjectionVerdict::Malicious
    }
}

/// Score cutoffs; Suspicious at or above `suspicious`, Malicious at or
/// above `malicious`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorThresholds {
    pub suspicious: f64,
    pub malicious: f64,
}

impl Default for DetectorThresholds {
    fn default() -> Self {
        // Calibrated against the committed benign corpus: a single weak
        // signal (e.g. a link next to "visit") stays Clean.
        Self {
            suspicious: 3.0,
            malicious: 6.0,
        }
    }
}

impl DetectorThresholds {
    pub fn verdict_for(&self, score: f64) -> InjectionVerdict {
        if score >= self.malicious {
            InjectionVerdict::Malicious
        } else if score >= self.suspicious {
            InjectionVerdict::Suspicious
        } else {
            InjectionVerdict::Clean
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DetectorError {
    #[error("detector {name:?} unavailable: {message}")]
    Unavailable { name: String, message: String },
}

/// Detector contract shared by the built-in engine and external plugins.
pub trait InjectionDetector: Send + Sync {
    fn name(&self) -> &str;
    fn scan(&self, text: &str) -> Result<InjectionReport, DetectorError>;
}

/// Scan text with the given detector.
pub fn detect_injection(
    text: &str,
    detector: &dyn InjectionDetector,
) -> Result<InjectionReport, DetectorError> {
    detector.scan(text)
}

struct WeightedRule {
    id: &'static str,
    weight: f64,
    pattern: Regex,
}

/// The built-in weighted-rule engine.
pub struct RuleEngine {
    rules: Vec<WeightedRule>,
    thresholds: DetectorThresholds,
}

impl RuleEngine {
    pub fn new(thresholds: DetectorThresholds) -> Self {
        let rule = |id: &'static str, weight: f64, pattern: &str| WeightedRule {
            id,
            weight,
            pattern: Regex::new(pattern).expect("builtin rule pattern"),
        };
        let rules = vec![
            rule(
                "override-instructions",
                4.0,
                r"(?i)\b(ignore|forget|disregard|abandon|discard)\b[^.\n]{0,60}\b(previous|prior|earlier|original|above|ultimate)\b[^.\n]{0,40}\b(task|instructions?|rules?|objectives?|prompts?)\b",
            ),
            rule(
                "new-task-directive",
                3.0,
                r#"(?i)\byour (new |real |true |actual )?ultimate task is\b|\bnew (task|objective|instructions?)\s*[:=]"#,
            ),
            rule(
                "role-marker",
                3.0,
                r"\b(SystemMessage|HumanMessage|AIMessage|ToolMessage)\b|(?im)^\s*system\s*:",
            ),
            rule(
                "canary-extraction",
                5.0,
                r"(?i)\b(extract|collect|gather|harvest|combine|list)\b[^.\n]{0,80}\b(canary|secrets?|tokens?|credentials?|passwords?|placeholders?)\b",
            ),
            rule("secret-tag-syntax", 3.0, r"(?i)<secret>[^<>]{0,80}</secret>"),
            rule(
                "exfil-verb-url",
                2.0,
                r"(?i)\b(visit|go to|navigate to|open|send( \w+)? to|post|submit|upload|curl|fetch)\b[^\n]{0,120}https?://",
            ),
            rule(
                "agent-flow-directive",
                2.0,
                r"(?i)\b(stop everything|use the done action|in the next step to complete)\b",
            ),
        ];
        Self { rules, thresholds }
    }

    pub fn thresholds(&self) -> DetectorThresholds {
        self.thresholds
    }
}

impl Default for RuleEngine {
    fn default() -> Self {
        Self::new(DetectorThresholds::default())
    }
}

fn excerpt_of(text: &str) -> String {
    if text.chars().count() <= 80 {
        text.to_string()
    } else {
        text.chars().take(80).collect()
    }
}

impl InjectionDetector for RuleEngine {
    fn name(&self) -> &str {
        "builtin-rules"
    }

    fn scan(&self, text: &str) -> Result<InjectionReport, DetectorError> {
        let mut findings = Vec::new();
        let mut score = 0.0;
        for rule in &self.rules {
            let mut matched = false;
            for m in rule.pattern.find_iter(text) {
                matched = true;
                findings.push(InjectionFinding {
                    rule_id: rule.id.to_string(),
                    span: (m.start(), m.end()),
                    excerpt: excerpt_of(m.as_str()),
                });
            }
            if matched {
                score += rule.weight;
            }
        }
        Ok(InjectionReport {
            score,
            verdict: self.thresholds.verdict_for(score),
            findings,
        })
    }
}

/// External detector executable: text on stdin, JSON report on stdout.
pub struct ExternalDetector {
    pub command: PathBuf,
    pub timeout: Duration,
}

impl ExternalDetector {
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

    fn unavailable(&self, message: impl Into<String>) -> DetectorError {
        DetectorError::Unavailable {
            name: self.command.display().to_string(),
            message: message.into(),
        }
    }
}

impl InjectionDetector for ExternalDetector {
    fn name(&self) -> &str {
        self.command.to_str().unwrap_or("external")
    }

    fn scan(&self, text: &str) -> Result<InjectionReport, DetectorError> {
        let mut child = Command::new(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| self.unavailable(e.to_string()))?;

        let mut stdin = child.stdin.take().expect("piped stdin");
        let mut stdout = child.stdout.take().expect("piped stdout");
        let input = text.to_string();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let result = stdin
                .write_all(input.as_bytes())
                .and_then(|_| {
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
                return Err(self.unavailable(e.to_string()));
            }
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(self.unavailable(format!("timed out after {:?}", self.timeout)));
            }
        };

        let status = child.wait().map_err(|e| self.unavailable(e.to_string()))?;
        if !status.success() {
            return Err(self.unavailable(format!("exit status {status}")));
        }

        let report: InjectionReport = serde_json::from_str(&output)
            .map_err(|e| self.unavailable(format!("malformed report: {e}")))?;
        // Minimal contract check: score zero exactly when nothing was found.
        if (report.score == 0.0) != report.findings.is_empty() {
            return Err(self.unavailable("report violates score/findings invariant"));
        }
        Ok(report)
    }
}
