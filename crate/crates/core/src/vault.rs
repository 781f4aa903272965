//! Secret anonymization: redact values into canary placeholders before text
//! reaches a model, rehydrate placeholders only at approved sinks, and scan
//! egress for leaks.
//!
//! Placeholders render as `<secret>name</secret>`. Redaction is a single
//! left-to-right pass that prefers the longest matching value at each
//! position, so `"password"` never decays into a shorter secret's
//! placeholder plus a raw fragment. Rehydration is all-or-nothing: one
//! denied placeholder aborts the whole substitution.
//!
//! Raw secret values never appear in errors, findings, or log output; only
//! names and spans do.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Renders the canonical placeholder token for a secret name.
pub fn placeholder_for(name: &str) -> String {
    format!("<secret>{name}</secret>")
}

/// One secret: name, value, and the placeholder that stands in for it.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretRecord {
    pub name: String,
    value: String,
    pub placeholder: String,
}

impl SecretRecord {
    pub fn new(name: impl Into<String>, value: impl Into<String>) -> Self {
        let name = name.into();
        let placeholder = placeholder_for(&name);
        Self {
            name,
            value: value.into(),
            placeholder,
        }
    }

    /// Deliberate access point for the raw value; call sites are the
    /// rehydration path and nothing else.
    pub(crate) fn raw_value(&self) -> &str {
        &self.value
    }

    pub fn value_len(&self) -> usize {
        self.value.len()
    }
}

// Never expose the value through Debug.
impl fmt::Debug for SecretRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SecretRecord")
            .field("name", &self.name)
            .field("value", &"<redacted>")
            .field("placeholder", &self.placeholder)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VaultError {
    #[error("duplicate secret name {name:?}")]
    DuplicateName { name: String },
    #[error("secret {name:?} has an empty value")]
    EmptyValue { name: String },
    #[error("secret {name:?} has an empty name")]
    EmptyName { name: String },
    #[error("value of secret {name:?} collides with the placeholder of {other:?}")]
    ValueIsPlaceholder { name: String, other: String },
}

/// Immutable collection of secrets, ordered longest value first.
#[derive(Debug, Clone, Default)]
pub struct Vault {
    records: Vec<SecretRecord>,
}

impl Vault {
    pub fn new(records: Vec<SecretRecord>) -> Result<Self, VaultError> {
        let mut vault = Vault { records: Vec::new() };
        for record in records {
            vault.insert(record)?;
        }
        Ok(vault)
    }

    /// Insert while keeping the longest-value-first ordering invariant.
    fn insert(&mut self, record: SecretRecord) -> Result<(), VaultError> {
        if record.name.is_empty() {
            return Err(VaultError::EmptyName { name: record.name });
        }
        if record.value.is_empty() {
            return Err(VaultError::EmptyValue { name: record.name });
        }
        if self.records.iter().any(|r| r.name == record.name) {
            return Err(VaultError::DuplicateName { name: record.name });
        }
        for existing in &self.records {
            if existing.value == record.placeholder {
                return Err(VaultError::ValueIsPlaceholder {
                    name: existing.name.clone(),
                    other: record.name.clone(),
                });
            }
            if record.value == existing.placeholder {
                return Err(VaultError::ValueIsPlaceholder {
                    name: record.name.clone(),
                    other: existing.name.clone(),
                });
            }
        }
        let at = self
            .records
            .iter()
            .position(|r| r.value.len() < record.value.len())
            .unwrap_or(self.records.len());
        self.records.insert(at, record);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Records in descending value-length order.
    pub fn records(&self) -> &[SecretRecord] {
        &self.records
    }

    pub fn get(&self, name: &str) -> Option<&SecretRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.name.as_str())
    }
}

/// Replace every occurrence of every secret value with its placeholder.
///
/// Single left-to-right pass; at each position the longest matching value
/// wins. The output contains no vault value as a substring.
pub fn redact(text: &str, vault: &Vault) -> String {
    if vault.is_empty() || text.is_empty() {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let bytes = text.as_bytes();
    let mut i = 0;
    'outer: while i < bytes.len() {
        // Records are longest-first, so the first match is the longest.
        for record in &vault.records {
            let value = record.raw_value().as_bytes();
            if bytes[i..].starts_with(value) {
                out.push_str(&record.placeholder);
                i += value.len();
                continue 'outer;
            }
        }
        // Advance one full character, not one byte.
        let ch_len = text[i..].chars().next().map(char::len_utf8).unwrap_or(1);
        out.push_str(&text[i..i + ch_len]);
        i += ch_len;
    }
    out
}

/// Whether a sink may receive a given secret.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinkDecision {
    Allow,
    Deny,
}

/// Consulted once per placeholder during rehydration; typically backed by
/// the flow-policy check for the target sink.
pub trait SinkVerdictSource {
    fn decide(&self, secret_name: &str, sink: &SinkDescriptor) -> SinkDecision;
}

/// Blanket allow/deny sources for tests and simple callers.
pub struct AllowAllSinks;

impl SinkVerdictSource for AllowAllSinks {
    fn decide(&self, _secret_name: &str, _sink: &SinkDescriptor) -> SinkDecision {
        SinkDecision::Allow
    }
}

pub struct DenyAllSinks;

impl SinkVerdictSource for DenyAllSinks {
    fn decide(&self, _secret_name: &str, _sink: &SinkDescriptor) -> SinkDecision {
        SinkDecision::Deny
    }
}

impl<F> SinkVerdictSource for F
where
    F: Fn(&str, &SinkDescriptor) -> SinkDecision,
{
    fn decide(&self, secret_name: &str, sink: &SinkDescriptor) -> SinkDecision {
        self(secret_name, sink)
    }
}

/// Where text is headed: the tool about to run and, when known, the target
/// host it touches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SinkDescriptor {
    pub tool: String,
    pub target_host: Option<String>,
    pub trust: SinkTrust,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinkTrust {
    /// Target passed the domain allowlist (or is the user channel).
    Trusted,
    Untrusted,
}

impl SinkDescriptor {
    pub fn new(tool: impl Into<String>, target_host: Option<String>, trust: SinkTrust) -> Self {
        Self {
            tool: tool.into(),
            target_host,
            trust,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RehydrateError {
    /// A placeholder was bound for a sink the policy denies; nothing was
    /// substituted.
    #[error("secret {secret_name:?} may not flow to sink {tool:?}")]
    SecretToUntrustedSink { secret_name: String, tool: String },
    #[error("placeholder {name:?} has no vault record")]
    UnknownPlaceholder { name: String },
}

/// Find every well-formed placeholder token in the text. Returns
/// (byte_start, byte_end, name).
pub fn placeholder_spans(text: &str) -> Vec<(usize, usize, String)> {
    const OPEN: &str = "<secret>";
    const CLOSE: &str = "</secret>";
    let mut found = Vec::new();
    let mut from = 0;
    while let Some(rel) = text[from..].find(OPEN) {
        let start = from + rel;
        let name_start = start + OPEN.len();
        match text[name_start..].find(CLOSE) {
            Some(close_rel) => {
                let name = &text[name_start..name_start + close_rel];
                let end = name_start + close_rel + CLOSE.len();
                // A nested '<' means this open tag was a decoy; resume after it.
                if name.contains('<') {
                    from = start + OPEN.len();
                    continue;
                }
                found.push((start, end, name.to_string()));
                from = end;
            }
            None => break,
        }
    }
    found
}

/// Substitute placeholders with their values, consulting the verdict source
/// per placeholder. All-or-nothing: any denied or unknown placeholder
/// returns an error and no partially substituted text.
pub fn rehydrate(
    text: &str,
    vault: &Vault,
    sink: &SinkDescriptor,
    verdicts: &dyn SinkVerdictSource,
) -> Result<String, RehydrateError> {
    let spots = placeholder_spans(text);
    if spots.is_empty() {
        return Ok(text.to_string());
    }

    // Decide every placeholder before substituting anything.
    for (_, _, name) in &spots {
        let record = vault
            .get(name)
            .ok_or_else(|| RehydrateError::UnknownPlaceholder { name: name.clone() })?;
        if verdicts.decide(&record.name, sink) == SinkDecision::Deny {
            return Err(RehydrateError::SecretToUntrustedSink {
                secret_name: record.name.clone(),
                tool: sink.tool.clone(),
            });
        }
    }

    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for (start, end, name) in &spots {
        out.push_str(&text[cursor..*start]);
        out.push_str(vault.get(name).unwrap().raw_value());
        cursor = *end;
    }
    out.push_str(&text[cursor..]);
    Ok(out)
}

/// What leaked, and where.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakKind {
    /// A raw secret value appeared in egress text. Always a finding.
    RawValue,
    /// A placeholder was headed to an untrusted sink, where rehydration or
    /// the token itself would hand the attacker the secret.
    PlaceholderAtUntrustedSink,
}

/// A single leak occurrence in an action's arguments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakFinding {
    pub kind: LeakKind,
    pub secret_name: String,
    /// Which argument the span indexes into.
    pub arg_name: String,
    /// Byte offsets within that argument's text.
    pub span: (usize, usize),
    pub sink: SinkDescriptor,
}

fn scan_one_text(
    arg_name: &str,
    text: &str,
    vault: &Vault,
    sink: &SinkDescriptor,
    findings: &mut Vec<LeakFinding>,
) {
    for record in vault.records() {
        let value = record.raw_value();
        let mut from = 0;
        while let Some(rel) = text[from..].find(value) {
            let start = from + rel;
            findings.push(LeakFinding {
                kind: LeakKind::RawValue,
                secret_name: record.name.clone(),
                arg_name: arg_name.to_string(),
                span: (start, start + value.len()),
                sink: sink.clone(),
            });
            from = start + value.len();
        }
    }
    if sink.trust == SinkTrust::Untrusted {
        for (start, end, name) in placeholder_spans(text) {
            if vault.get(&name).is_some() {
                findings.push(LeakFinding {
                    kind: LeakKind::PlaceholderAtUntrustedSink,
                    secret_name: name,
                    arg_name: arg_name.to_string(),
                    span: (start, end),
                    sink: sink.clone(),
                });
            }
        }
    }
}

/// Scan an action's argument texts for leaks: raw values anywhere, and
/// placeholders whenever the sink is untrusted. Empty result means clean.
pub fn scan_egress(
    args: &[(String, String)],
    vault: &Vault,
    sink: &SinkDescriptor,
) -> Vec<LeakFinding> {
    let mut findings = Vec::new();
    for (arg_name, text) in args {
        scan_one_text(arg_name, text, vault, sink, &mut findings);
    }
    findings
}
