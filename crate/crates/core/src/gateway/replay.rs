//! Offline re-checking of recorded action traces.
//!
//! A trace is JSON-lines, one self-contained action per line: tool,
//! argument values (secrets as placeholders, never raw), taint labels, and
//! optionally the verdict recorded at capture time. Replay runs every
//! action through the full pipeline and reports verdict deltas.

use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Duration;

use crate::action::ActionRequest;
use crate::flow::{Datum, Decision, LabelSet, TaintLabel};
use crate::session::{AuditLog, Clock, SessionState};

use super::config::GatewayConfig;
use super::pipeline::Pipeline;

pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceArg {
    pub name: String,
    pub value: String,
    /// Labels as `trusted`, `untrusted:<origin>`, or `secret:<name>`.
    #[serde(default)]
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub format_version: u32,
    pub step: u64,
    pub tool: String,
    #[serde(default)]
    pub args: Vec<TraceArg>,
    #[serde(default)]
    pub session_id: Option<String>,
    /// Decision recorded when the trace was captured, if any.
    #[serde(default)]
    pub recorded_decision: Option<Decision>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("io error reading trace: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace format error at line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Replay result for one action.
#[derive(Debug, Clone, Serialize)]
pub struct ReplayedAction {
    pub line: usize,
    pub step: u64,
    pub tool: String,
    pub stage: String,
    pub decision: Decision,
    pub reason: String,
    /// Present when the recorded decision differs from the replayed one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplayReport {
    pub actions: Vec<ReplayedAction>,
    pub denials: usize,
    pub deltas: usize,
}

fn parse_label(token: &str, line: usize) -> Result<TaintLabel, TraceError> {
    if token == "trusted" {
        return Ok(TaintLabel::Trusted);
    }
    if let Some(origin) = token.strip_prefix("untrusted:") {
        return Ok(TaintLabel::untrusted(origin));
    }
    if let Some(name) = token.strip_prefix("secret:") {
        return Ok(TaintLabel::secret(name));
    }
    Err(TraceError::Format {
        line,
        message: format!("unknown label {token:?}"),
    })
}

/// Parse one trace line into an action request.
fn record_to_action(
    record: &TraceRecord,
    line: usize,
    pipeline: &Pipeline<'_>,
) -> Result<ActionRequest, TraceError> {
    if record.format_version != TRACE_FORMAT_VERSION {
        return Err(TraceError::Format {
            line,
            message: format!(
                "format_version {} unsupported (expected {TRACE_FORMAT_VERSION})",
                record.format_version
            ),
        });
    }
    if !pipeline.registry.is_registered(&record.tool) {
        return Err(TraceError::Format {
            line,
            message: format!("unregistered tool {:?}", record.tool),
        });
    }
    let session = record.session_id.clone().unwrap_or_else(|| "replay".to_string());
    let mut action = ActionRequest::new(record.tool.clone(), session, record.step);
    for arg in &record.args {
        let labels = arg
            .labels
            .iter()
            .map(|t| parse_label(t, line))
            .collect::<Result<Vec<_>, _>>()?;
        let datum = Datum::new(&arg.value, LabelSet::from_labels(labels));
        action = action.with_arg(arg.name.clone(), arg.value.clone(), datum);
    }
    Ok(action)
}

/// Re-check every recorded action through the pipeline.
pub fn replay_trace(
    path: impl AsRef<Path>,
    config: &GatewayConfig,
    log: &AuditLog,
    clock: &dyn Clock,
) -> Result<ReplayReport, TraceError> {
    let text = std::fs::read_to_string(path)?;
    let mut pipeline = Pipeline::new(config, log, clock);
    let mut session = SessionState::new("replay", &config.limits, clock.now_ms());
    let mut actions = Vec::new();
    let mut denials = 0;
    let mut deltas = 0;

    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord =
            serde_json::from_str(raw_line).map_err(|e| TraceError::Format {
                line,
                message: e.to_string(),
            })?;
        let action = record_to_action(&record, line, &pipeline)?;
        pipeline.advance_time(Duration::from_millis(100));
        let staged = pipeline.check(&action, &mut session);
        if staged.verdict.decision != Decision::Allow {
            denials += 1;
        }
        let delta = match record.recorded_decision {
            Some(recorded) if recorded != staged.verdict.decision => Some(format!(
                "recorded {recorded:?}, replayed {:?}",
                staged.verdict.decision
            )),
            _ => None,
        };
        if delta.is_some() {
            deltas += 1;
        }
        actions.push(ReplayedAction {
            line,
            step: record.step,
            tool: record.tool,
            stage: staged.stage,
            decision: staged.verdict.decision,
            reason: staged.verdict.reason,
            delta,
        });
    }

    Ok(ReplayReport {
        actions,
        denials,
        deltas,
    })
}
