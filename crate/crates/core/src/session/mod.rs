//! Post-exploitation containment: session reset, per-class token-bucket
//! throttling, safe-mode action filtering, memory inspection, and the
//! hash-chained audit log.

mod audit;
mod memory;

pub use audit::{
    audit_verify, digest_payload, AuditEvent, AuditKind, AuditLog, Clock, SystemClock, TickClock,
    VerifyError, VerifyOutcome, AUDIT_FORMAT_VERSION, GENESIS_PREV_HASH, HASH_ALGORITHM,
};
pub use memory::{percentile, BandFlag, BandSide, MemoryScore, ScoreBand, TrigramModel};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Duration;

use crate::action::{ActionClass, ActionRequest, ToolRegistry};
use crate::flow::{Decision, LabelSet, Verdict};
use crate::threat::ThreatClass;

/// Token-millis per token: bucket arithmetic is exact integer math so
/// decisions are reproducible against a discrete-event simulation.
const TOKEN_SCALE: u64 = 60_000;

/// Capacity and refill for one action class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketConfig {
    pub capacity: u64,
    pub per_minute: u64,
}

impl BucketConfig {
    pub fn new(capacity: u64, per_minute: u64) -> Self {
        Self { capacity, per_minute }
    }
}

/// Default limits per class; config-overridable.
pub fn default_limits() -> BTreeMap<ActionClass, BucketConfig> {
    BTreeMap::from([
        (ActionClass::Navigate, BucketConfig::new(10, 10)),
        (ActionClass::FormMutation, BucketConfig::new(6, 6)),
        (ActionClass::Egress, BucketConfig::new(3, 3)),
        (ActionClass::Other, BucketConfig::new(60, 60)),
    ])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TokenBucket {
    capacity: u64,
    per_minute: u64,
    /// Tokens scaled by [`TOKEN_SCALE`].
    scaled_tokens: u64,
    last_update_ms: u64,
}

impl TokenBucket {
    fn new(config: BucketConfig) -> Self {
        Self {
            capacity: config.capacity,
            per_minute: config.per_minute,
            scaled_tokens: config.capacity * TOKEN_SCALE,
            last_update_ms: 0,
        }
    }

    fn refill(&mut self, now_ms: u64) {
        let elapsed = now_ms.saturating_sub(self.last_update_ms);
        let gained = elapsed.saturating_mul(self.per_minute);
        self.scaled_tokens = (self.scaled_tokens + gained).min(self.capacity * TOKEN_SCALE);
        self.last_update_ms = now_ms;
    }

    fn take(&mut self, now_ms: u64) -> ThrottleDecision {
        self.refill(now_ms);
        if self.scaled_tokens >= TOKEN_SCALE {
            self.scaled_tokens -= TOKEN_SCALE;
            ThrottleDecision::Allow
        } else {
            let deficit = TOKEN_SCALE - self.scaled_tokens;
            let retry_ms = deficit.div_ceil(self.per_minute.max(1));
            ThrottleDecision::Throttled {
                retry_after: Duration::from_millis(retry_ms),
            }
        }
    }

    fn reset(&mut self) {
        self.scaled_tokens = self.capacity * TOKEN_SCALE;
    }
}

/// Throttle outcome. `Throttled` consumes nothing and reports the time
/// until one token accrues.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThrottleDecision {
    Allow,
    Throttled { retry_after: Duration },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("action class {0} has no configured bucket")]
    UnknownActionClass(String),
}

/// Normal operation or locked-down safe mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    Normal,
    SafeMode,
}

/// One remembered observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub content: String,
    pub labels: LabelSet,
    pub step: u64,
}

/// Per-session mutable state, owned by exactly one worker at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub session_id: String,
    pub mode: SessionMode,
    buckets: BTreeMap<ActionClass, TokenBucket>,
    pub memory: Vec<MemoryEntry>,
    pub created_at_ms: i64,
    /// Why safe mode was entered, when it was.
    pub safe_mode_reason: Option<String>,
}

impl SessionState {
    pub fn new(
        session_id: impl Into<String>,
        limits: &BTreeMap<ActionClass, BucketConfig>,
        created_at_ms: i64,
    ) -> Self {
        let buckets = limits
            .iter()
            .map(|(class, config)| (*class, TokenBucket::new(*config)))
            .collect();
        Self {
            session_id: session_id.into(),
            mode: SessionMode::Normal,
            buckets,
            memory: Vec::new(),
            created_at_ms,
            safe_mode_reason: None,
        }
    }

    pub fn with_default_limits(session_id: impl Into<String>) -> Self {
        Self::new(session_id, &default_limits(), 0)
    }

    pub fn remember(&mut self, content: impl Into<String>, labels: LabelSet, step: u64) {
        self.memory.push(MemoryEntry {
            content: content.into(),
            labels,
            step,
        });
    }

    pub fn in_safe_mode(&self) -> bool {
        self.mode == SessionMode::SafeMode
    }
}

/// Token-bucket check for one action class at a monotonic timestamp.
pub fn throttle(
    action_class: ActionClass,
    state: &mut SessionState,
    now: Duration,
) -> Result<ThrottleDecision, SessionError> {
    let bucket = state
        .buckets
        .get_mut(&action_class)
        .ok_or_else(|| SessionError::UnknownActionClass(action_class.name().to_string()))?;
    Ok(bucket.take(now.as_millis() as u64))
}

/// Wipe memory, refill buckets, return to normal mode; the session id is
/// kept. Emits a mode-change audit event.
pub fn reset_session(
    state: &mut SessionState,
    log: &AuditLog,
    clock: &dyn Clock,
) -> std::io::Result<AuditEvent> {
    state.memory.clear();
    for bucket in state.buckets.values_mut() {
        bucket.reset();
    }
    let was = state.mode.clone();
    state.mode = SessionMode::Normal;
    state.safe_mode_reason = None;
    log.append(
        &state.session_id,
        AuditKind::ModeChanged,
        &serde_json::json!({ "from": was, "to": "normal", "cause": "reset" }),
        clock,
    )
}

/// Switch to safe mode and record why.
pub fn enter_safe_mode(
    state: &mut SessionState,
    reason: impl Into<String>,
    log: &AuditLog,
    clock: &dyn Clock,
) -> std::io::Result<AuditEvent> {
    let reason = reason.into();
    let was = state.mode.clone();
    state.mode = SessionMode::SafeMode;
    state.safe_mode_reason = Some(reason.clone());
    log.append(
        &state.session_id,
        AuditKind::ModeChanged,
        &serde_json::json!({ "from": was, "to": "safe_mode", "cause": reason }),
        clock,
    )
}

/// Safe-mode action filter. In normal mode everything passes. In safe mode
/// mutating tools are denied, navigation requires approval, and read-only
/// tools pass.
pub fn filter_action_safe_mode(
    action: &ActionRequest,
    registry: &ToolRegistry,
    mode: &SessionMode,
) -> Verdict {
    if *mode == SessionMode::Normal {
        return Verdict::allow("normal mode");
    }
    match registry.get(&action.tool) {
        Some(spec) if spec.mutating => Verdict {
            decision: Decision::Deny,
            rule_id: None,
            reason: format!("safe mode restricts mutating tool {}", action.tool),
            threat_class: Some(ThreatClass::SecurityCompliance),
        },
        Some(spec) if spec.class == ActionClass::Navigate => Verdict {
            decision: Decision::RequireApproval,
            rule_id: None,
            reason: "safe mode requires approval for navigation".to_string(),
            threat_class: Some(ThreatClass::SecurityCompliance),
        },
        Some(_) => Verdict::allow("read-only tool permitted in safe mode"),
        None => Verdict {
            decision: Decision::Deny,
            rule_id: None,
            reason: format!("unregistered tool {}", action.tool),
            threat_class: Some(ThreatClass::AgentFrameworks),
        },
    }
}

/// Score every memory entry against the reference model and band.
pub fn scan_memory(
    state: &SessionState,
    model: &TrigramModel,
    band: ScoreBand,
) -> Vec<MemoryScore> {
    state
        .memory
        .iter()
        .enumerate()
        .map(|(entry_index, entry)| {
            let score = model.score(&entry.content);
            MemoryScore {
                entry_index,
                score,
                flag: band.classify(score),
            }
        })
        .collect()
}
