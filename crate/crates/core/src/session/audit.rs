//! Hash-chained, append-only audit log.
//!
//! One JSON event per line after a header line that names the hash
//! algorithm and the genesis constant, so verification is self-describing.
//! Each event's `this_hash` covers the previous hash and a canonical
//! serialization of every other field; flipping any byte of any persisted
//! event breaks the chain at that sequence number. Events carry payload
//! digests, never payloads, so secret values cannot end up in the log.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Mutex;

/// Fixed prev_hash of the first event.
pub const GENESIS_PREV_HASH: &str =
    "0000000000000000000000000000000000000000000000000000000000000000";

/// The digest this build chains with; recorded in the log header.
pub const HASH_ALGORITHM: &str = "sha-256";

pub const AUDIT_FORMAT_VERSION: u32 = 1;

/// Millisecond clock. Injected so tests and replays are deterministic.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> i64;
}

/// Wall clock.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> i64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0)
    }
}

/// Strictly increasing fake clock for tests.
#[derive(Debug, Default)]
pub struct TickClock(AtomicI64);

impl Clock for TickClock {
    fn now_ms(&self) -> i64 {
        self.0.fetch_add(1, Ordering::Relaxed)
    }
}

/// Event kinds the gateway emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    ActionChecked,
    VerdictIssued,
    SecretEgressBlocked,
    ModeChanged,
    MemoryFlagged,
    Fallback,
}

impl fmt::Display for AuditKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(kind_token(*self))
    }
}

/// One chained event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seq: u64,
    pub timestamp_ms: i64,
    pub session_id: String,
    pub kind: AuditKind,
    /// SHA-256 of the event payload; the payload itself is never stored.
    pub payload_digest: String,
    pub prev_hash: String,
    pub this_hash: String,
}

fn kind_token(kind: AuditKind) -> &'static str {
    match kind {
        AuditKind::ActionChecked => "action_checked",
        AuditKind::VerdictIssued => "verdict_issued",
        AuditKind::SecretEgressBlocked => "secret_egress_blocked",
        AuditKind::ModeChanged => "mode_changed",
        AuditKind::MemoryFlagged => "memory_flagged",
        AuditKind::Fallback => "fallback",
    }
}

/// `H(prev_hash ‖ canonical fields)`, hex-encoded.
fn chain_hash(
    prev_hash: &str,
    seq: u64,
    timestamp_ms: i64,
    session_id: &str,
    kind: AuditKind,
    payload_digest: &str,
) -> String {
    let canonical = format!(
        "{prev_hash}\n{seq}\n{timestamp_ms}\n{session_id}\n{}\n{payload_digest}",
        kind_token(kind)
    );
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Digest an arbitrary payload for inclusion in an event.
pub fn digest_payload(payload: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(payload.to_string().as_bytes()))
}

#[derive(Debug, Serialize, Deserialize)]
struct AuditHeader {
    format_version: u32,
    hash_alg: String,
    genesis: String,
}

struct LogInner {
    next_seq: u64,
    head_hash: String,
    events: Vec<AuditEvent>,
    writer: Option<BufWriter<File>>,
}

/// Serializing writer over the hash chain. Appends from any number of
/// sessions are totally ordered; sequence numbers are assigned under the
/// lock.
pub struct AuditLog {
    inner: Mutex<LogInner>,
    path: Option<PathBuf>,
}

impl AuditLog {
    /// Chain kept only in memory (tests, dry runs).
    pub fn in_memory() -> Self {
        Self {
            inner: Mutex::new(LogInner {
                next_seq: 1,
                head_hash: GENESIS_PREV_HASH.to_string(),
                events: Vec::new(),
                writer: None,
            }),
            path: None,
        }
    }

    /// Create (truncate) a log file and write the header line.
    pub fn create(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)?;
        let mut writer = BufWriter::new(file);
        let header = AuditHeader {
            format_version: AUDIT_FORMAT_VERSION,
            hash_alg: HASH_ALGORITHM.to_string(),
            genesis: GENESIS_PREV_HASH.to_string(),
        };
        writeln!(writer, "{}", serde_json::to_string(&header)?)?;
        writer.flush()?;
        Ok(Self {
            inner: Mutex::new(LogInner {
                next_seq: 1,
                head_hash: GENESIS_PREV_HASH.to_string(),
                events: Vec::new(),
                writer: Some(writer),
            }),
            path: Some(path),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Append one event; computes the chain hash and persists the line when
    /// the log is file-backed.
    pub fn append(
        &self,
        session_id: &str,
        kind: AuditKind,
        payload: &serde_json::Value,
        clock: &dyn Clock,
    ) -> std::io::Result<AuditEvent> {
        let mut inner = self.inner.lock().unwrap();
        let seq = inner.next_seq;
        let timestamp_ms = clock.now_ms();
        let payload_digest = digest_payload(payload);
        let prev_hash = inner.head_hash.clone();
        let this_hash = chain_hash(&prev_hash, seq, timestamp_ms, session_id, kind, &payload_digest);
        let event = AuditEvent {
            seq,
            timestamp_ms,
            session_id: session_id.to_string(),
            kind,
            payload_digest,
            prev_hash,
            this_hash: this_hash.clone(),
        };
        if let Some(writer) = inner.writer.as_mut() {
            writeln!(writer, "{}", serde_json::to_string(&event)?)?;
            writer.flush()?;
        }
        inner.head_hash = this_hash;
        inner.next_seq = seq + 1;
        inner.events.push(event.clone());
        Ok(event)
    }

    /// Events appended through this handle (not re-read from disk).
    pub fn events(&self) -> Vec<AuditEvent> {
        self.inner.lock().unwrap().events.clone()
    }

    pub fn event_count(&self) -> u64 {
        self.inner.lock().unwrap().next_seq - 1
    }
}

/// Verification outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum VerifyOutcome {
    Ok { events: u64 },
    /// First sequence number whose stored fields fail re-hashing.
    TamperedAt { seq: u64 },
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("io error reading audit log: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing or malformed header line")]
    BadHeader,
    #[error("unsupported hash algorithm {0:?}")]
    UnsupportedAlgorithm(String),
}

/// Recompute every link of a persisted chain.
pub fn audit_verify(path: impl AsRef<Path>) -> Result<VerifyOutcome, VerifyError> {
    let file = File::open(path.as_ref())?;
    let mut lines = BufReader::new(file).lines();

    let header_line = lines.next().ok_or(VerifyError::BadHeader)??;
    let header: AuditHeader =
        serde_json::from_str(&header_line).map_err(|_| VerifyError::BadHeader)?;
    if header.hash_alg != HASH_ALGORITHM {
        return Err(VerifyError::UnsupportedAlgorithm(header.hash_alg));
    }

    let mut prev_hash = header.genesis;
    let mut expected_seq = 1u64;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: AuditEvent = match serde_json::from_str(&line) {
            Ok(e) => e,
            Err(_) => return Ok(VerifyOutcome::TamperedAt { seq: expected_seq }),
        };
        let recomputed = chain_hash(
            &event.prev_hash,
            event.seq,
            event.timestamp_ms,
            &event.session_id,
            event.kind,
            &event.payload_digest,
        );
        if event.seq != expected_seq
            || event.prev_hash != prev_hash
            || recomputed != event.this_hash
        {
            return Ok(VerifyOutcome::TamperedAt { seq: expected_seq });
        }
        prev_hash = event.this_hash;
        expected_seq += 1;
    }
    Ok(VerifyOutcome::Ok {
        events: expected_seq - 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn payload(n: u64) -> serde_json::Value {
        serde_json::json!({ "n": n })
    }

    #[test]
    fn append_then_verify_ok() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let log = AuditLog::create(&path).unwrap();
        let clock = TickClock::default();
        for n in 0..3 {
            log.append("s1", AuditKind::ActionChecked, &payload(n), &clock)
                .unwrap();
        }
        assert_eq!(audit_verify(&path).unwrap(), VerifyOutcome::Ok { events: 3 });
    }

    #[test]
    fn flipping_a_payload_digest_byte_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let log = AuditLog::create(&path).unwrap();
        let clock = TickClock::default();
        for n in 0..3 {
            log.append("s1", AuditKind::VerdictIssued, &payload(n), &clock)
                .unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        // Event with seq 2 is line index 2 (after the header).
        let target = &lines[2];
        let mut event: AuditEvent = serde_json::from_str(target).unwrap();
        let mut digest = event.payload_digest.into_bytes();
        digest[0] = if digest[0] == b'0' { b'1' } else { b'0' };
        event.payload_digest = String::from_utf8(digest).unwrap();
        lines[2] = serde_json::to_string(&event).unwrap();
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();

        assert_eq!(
            audit_verify(&path).unwrap(),
            VerifyOutcome::TamperedAt { seq: 2 }
        );
    }

    #[test]
    fn interleaved_sessions_share_one_chain() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let log = AuditLog::create(&path).unwrap();
        let clock = TickClock::default();
        for n in 0..10 {
            let session = if n % 3 == 0 { "s-a" } else { "s-b" };
            log.append(session, AuditKind::ActionChecked, &payload(n), &clock)
                .unwrap();
        }
        assert_eq!(audit_verify(&path).unwrap(), VerifyOutcome::Ok { events: 10 });
    }

    #[test]
    fn seq_numbers_are_strictly_increasing() {
        let log = AuditLog::in_memory();
        let clock = TickClock::default();
        let seqs: Vec<u64> = (0..5)
            .map(|n| {
                log.append("s", AuditKind::Fallback, &payload(n), &clock)
                    .unwrap()
                    .seq
            })
            .collect();
        assert_eq!(seqs, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn payloads_are_digested_not_stored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let log = AuditLog::create(&path).unwrap();
        let clock = TickClock::default();
        let secretish = serde_json::json!({ "value": "arimlabs_password" });
        log.append("s1", AuditKind::SecretEgressBlocked, &secretish, &clock)
            .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains("arimlabs_password"));
    }
}
