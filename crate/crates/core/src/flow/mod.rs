//! Information-flow control: taint labels, provenance propagation, and
//! rule-based action checks.
//!
//! Every piece of content is a [`Datum`]: a content digest plus a set of
//! [`TaintLabel`]s. Labels only accumulate — propagation unions the labels
//! of an action's inputs into its outputs, and nothing ever removes one.
//! A [`Policy`] (see [`dsl`]) is an ordered list of first-match-wins rules
//! over action sinks and label predicates.
//!
//! The `origin_in` / `origin_not_in` predicates quantify over every origin
//! an action touches: the origins of its untrusted data labels plus, for
//! url-bearing actions, the target host itself.

pub mod dsl;

pub use dsl::{parse_policy, pretty_print, PolicySyntaxError};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::action::ActionRequest;
use crate::threat::ThreatClass;
use crate::urlguard::{parse_url, Host};

/// Provenance marker attached to data.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaintLabel {
    /// The identity element: absorbed when unioned with any other label.
    Trusted,
    Untrusted { origin: String },
    Secret { name: String },
    /// A composite that flattens to the union of its ancestors' base labels.
    Derived { parents: Vec<TaintLabel> },
}

impl TaintLabel {
    pub fn untrusted(origin: impl Into<String>) -> Self {
        TaintLabel::Untrusted { origin: origin.into() }
    }

    pub fn secret(name: impl Into<String>) -> Self {
        TaintLabel::Secret { name: name.into() }
    }
}

impl fmt::Display for TaintLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaintLabel::Trusted => f.write_str("trusted"),
            TaintLabel::Untrusted { origin } => write!(f, "untrusted:{origin}"),
            TaintLabel::Secret { name } => write!(f, "secret:{name}"),
            TaintLabel::Derived { parents } => {
                f.write_str("derived[")?;
                for (i, p) in parents.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{p}")?;
                }
                f.write_str("]")
            }
        }
    }
}

/// Canonical, non-empty set of base labels.
///
/// `Derived` labels are flattened on insertion and `Trusted` is kept only
/// when no other label is present, so two sets built along different union
/// orders compare equal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelSet(BTreeSet<TaintLabel>);

impl LabelSet {
    pub fn trusted() -> Self {
        let mut set = BTreeSet::new();
        set.insert(TaintLabel::Trusted);
        LabelSet(set)
    }

    pub fn from_labels<I: IntoIterator<Item = TaintLabel>>(labels: I) -> Self {
        let mut out = LabelSet::trusted();
        for label in labels {
            out.insert(label);
        }
        out
    }

    pub fn insert(&mut self, label: TaintLabel) {
        match label {
            TaintLabel::Derived { parents } => {
                for p in parents {
                    self.insert(p);
                }
            }
            TaintLabel::Trusted => {}
            other => {
                self.0.remove(&TaintLabel::Trusted);
                self.0.insert(other);
            }
        }
    }

    pub fn union(&self, other: &LabelSet) -> LabelSet {
        let mut out = self.clone();
        for label in &other.0 {
            out.insert(label.clone());
        }
        out
    }

    pub fn is_trusted_only(&self) -> bool {
        self.0.len() == 1 && self.0.contains(&TaintLabel::Trusted)
    }

    pub fn has_secret(&self) -> bool {
        self.0.iter().any(|l| matches!(l, TaintLabel::Secret { .. }))
    }

    pub fn has_untrusted(&self) -> bool {
        self.0.iter().any(|l| matches!(l, TaintLabel::Untrusted { .. }))
    }

    pub fn untrusted_origins(&self) -> impl Iterator<Item = &str> {
        self.0.iter().filter_map(|l| match l {
            TaintLabel::Untrusted { origin } => Some(origin.as_str()),
            _ => None,
        })
    }

    pub fn secret_names(&self) -> impl Iterator<Item = &str> {
        self.0.iter().filter_map(|l| match l {
            TaintLabel::Secret { name } => Some(name.as_str()),
            _ => None,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = &TaintLabel> {
        self.0.iter()
    }

    pub fn contains(&self, label: &TaintLabel) -> bool {
        self.0.contains(label)
    }

    pub fn is_superset(&self, other: &LabelSet) -> bool {
        other.0.iter().all(|l| self.0.contains(l) || *l == TaintLabel::Trusted)
    }
}

impl Default for LabelSet {
    fn default() -> Self {
        LabelSet::trusted()
    }
}

/// Content digest plus labels; the unit of provenance tracking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Datum {
    /// Hex SHA-256 of the content. Stable under identical content.
    pub content_digest: String,
    pub labels: LabelSet,
}

impl Datum {
    pub fn new(content: &str, labels: LabelSet) -> Self {
        Self {
            content_digest: digest_content(content),
            labels,
        }
    }

    pub fn trusted(content: &str) -> Self {
        Self::new(content, LabelSet::trusted())
    }
}

/// Hex SHA-256 digest of a content string.
pub fn digest_content(content: &str) -> String {
    hex::encode(Sha256::digest(content.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FlowError {
    #[error("unknown datum {digest}")]
    UnknownDatum { digest: String },
}

/// Output produced by an executed action.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub content: String,
    /// When the content was extracted from a page, the page's origin host;
    /// the output gains `Untrusted(origin)` on top of the inherited labels.
    pub extracted_from: Option<String>,
}

/// Per-session provenance map from content digests to labels. Append-only:
/// labels are only ever unioned in.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaintState {
    data: BTreeMap<String, LabelSet>,
}

impl TaintState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a datum, unioning labels if the digest is already present.
    pub fn register(&mut self, datum: &Datum) {
        self.data
            .entry(datum.content_digest.clone())
            .and_modify(|existing| *existing = existing.union(&datum.labels))
            .or_insert_with(|| datum.labels.clone());
    }

    pub fn labels_of(&self, digest: &str) -> Option<&LabelSet> {
        self.data.get(digest)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Propagate labels across one executed action: every output datum gets
    /// the union of all input labels, plus `Untrusted(origin)` for content
    /// extracted from a page. Inputs must already be registered.
    pub fn propagate(
        &mut self,
        action: &ActionRequest,
        outputs: &[StepOutput],
    ) -> Result<Vec<Datum>, FlowError> {
        let mut inherited = LabelSet::trusted();
        for arg in &action.args {
            let labels = self
                .data
                .get(&arg.datum.content_digest)
                .ok_or_else(|| FlowError::UnknownDatum {
                    digest: arg.datum.content_digest.clone(),
                })?;
            inherited = inherited.union(labels);
        }

        let mut produced = Vec::with_capacity(outputs.len());
        for output in outputs {
            let mut labels = inherited.clone();
            if let Some(origin) = &output.extracted_from {
                labels.insert(TaintLabel::untrusted(origin.clone()));
            }
            let datum = Datum::new(&output.content, labels);
            self.register(&datum);
            // Read back the union in case the digest was already known.
            let merged = self.data.get(&datum.content_digest).unwrap().clone();
            produced.push(Datum {
                content_digest: datum.content_digest,
                labels: merged,
            });
        }
        Ok(produced)
    }

    /// Union of the labels of every argument of an action, consulting the
    /// state first and falling back to the labels carried on the datum.
    pub fn combined_action_labels(&self, action: &ActionRequest) -> LabelSet {
        let mut combined = LabelSet::trusted();
        for arg in &action.args {
            match self.data.get(&arg.datum.content_digest) {
                Some(labels) => combined = combined.union(labels),
                None => combined = combined.union(&arg.datum.labels),
            }
        }
        combined
    }
}

/// Rule effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    Deny,
    RequireApproval,
    Allow,
}

impl Effect {
    fn keyword(self) -> &'static str {
        match self {
            Effect::Deny => "deny",
            Effect::RequireApproval => "approve",
            Effect::Allow => "allow",
        }
    }
}

/// Boolean combination over the four label atoms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelPredicate {
    HasSecret,
    HasUntrusted,
    OriginIn(String),
    OriginNotIn(String),
    And(Box<LabelPredicate>, Box<LabelPredicate>),
    Or(Box<LabelPredicate>, Box<LabelPredicate>),
    Not(Box<LabelPredicate>),
}

/// What an action must look like for a rule to apply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SinkPattern {
    pub tool: String,
    /// Optional constraint: the action's `url` argument host must fall in
    /// this named set. Actions without a parseable `url` never match.
    pub url_host_in: Option<String>,
    /// Optional constraint: the action must carry an argument of this name.
    pub requires_arg: Option<String>,
}

impl SinkPattern {
    pub fn tool(tool: impl Into<String>) -> Self {
        Self {
            tool: tool.into(),
            url_host_in: None,
            requires_arg: None,
        }
    }
}

/// One first-match rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub sink: SinkPattern,
    pub predicate: LabelPredicate,
    pub effect: Effect,
    /// Threat tag attached to verdicts this rule produces. Defaults to L6.
    pub threat_class: ThreatClass,
}

/// Ordered rule list with named host sets; first match wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub format_version: u32,
    pub sets: BTreeMap<String, BTreeSet<String>>,
    pub rules: Vec<Rule>,
    pub default_effect: Effect,
}

impl Default for Policy {
    fn default() -> Self {
        Self {
            format_version: dsl::POLICY_FORMAT_VERSION,
            sets: BTreeMap::new(),
            rules: Vec::new(),
            default_effect: Effect::Allow,
        }
    }
}

impl Policy {
    pub fn empty() -> Self {
        Self::default()
    }
}

/// The universal enforcement outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Allow,
    Deny,
    RequireApproval,
    Sanitize,
    SafeMode,
}

/// Enforcement outcome with provenance: which rule, why, and the threat tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Decision,
    pub rule_id: Option<String>,
    pub reason: String,
    pub threat_class: Option<ThreatClass>,
}

impl Verdict {
    pub fn allow(reason: impl Into<String>) -> Self {
        Self {
            decision: Decision::Allow,
            rule_id: None,
            reason: reason.into(),
            threat_class: None,
        }
    }

    pub fn deny(reason: impl Into<String>, threat: ThreatClass) -> Self {
        Self {
            decision: Decision::Deny,
            rule_id: None,
            reason: reason.into(),
            threat_class: Some(threat),
        }
    }

    pub fn with_rule(mut self, rule_id: impl Into<String>) -> Self {
        self.rule_id = Some(rule_id.into());
        self
    }

    pub fn is_allow(&self) -> bool {
        self.decision == Decision::Allow
    }
}

/// Hosts an action touches: untrusted-label origins plus the target host of
/// a url-bearing action.
fn action_origins(action: &ActionRequest, labels: &LabelSet) -> Vec<String> {
    let mut origins: Vec<String> = labels
        .untrusted_origins()
        .map(|s| s.to_string())
        .collect();
    if let Some(url) = action.url_arg() {
        if let Ok(parsed) = parse_url(url) {
            origins.push(parsed.host.to_string());
        }
    }
    origins
}

/// Host-in-set membership uses the same label-boundary suffix rule as the
/// domain allowlist: `host == entry` or host ends with `"." + entry`.
fn host_in_set(host: &str, set: &BTreeSet<String>) -> bool {
    set.iter().any(|entry| {
        host == entry.as_str() || host.ends_with(&format!(".{entry}"))
    })
}

fn eval_predicate(
    pred: &LabelPredicate,
    labels: &LabelSet,
    origins: &[String],
    sets: &BTreeMap<String, BTreeSet<String>>,
) -> bool {
    match pred {
        LabelPredicate::HasSecret => labels.has_secret(),
        LabelPredicate::HasUntrusted => labels.has_untrusted(),
        LabelPredicate::OriginIn(set_name) => {
            let set = sets.get(set_name);
            match set {
                Some(set) => origins.iter().any(|o| host_in_set(o, set)),
                None => false,
            }
        }
        LabelPredicate::OriginNotIn(set_name) => {
            let set = sets.get(set_name);
            match set {
                Some(set) => origins.iter().any(|o| !host_in_set(o, set)),
                None => !origins.is_empty(),
            }
        }
        LabelPredicate::And(a, b) => {
            eval_predicate(a, labels, origins, sets) && eval_predicate(b, labels, origins, sets)
        }
        LabelPredicate::Or(a, b) => {
            eval_predicate(a, labels, origins, sets) || eval_predicate(b, labels, origins, sets)
        }
        LabelPredicate::Not(inner) => !eval_predicate(inner, labels, origins, sets),
    }
}

fn sink_matches(sink: &SinkPattern, action: &ActionRequest, sets: &BTreeMap<String, BTreeSet<String>>) -> bool {
    if sink.tool != action.tool {
        return false;
    }
    if let Some(arg_name) = &sink.requires_arg {
        if action.arg(arg_name).is_none() {
            return false;
        }
    }
    if let Some(set_name) = &sink.url_host_in {
        let Some(set) = sets.get(set_name) else {
            return false;
        };
        let Some(url) = action.url_arg() else {
            return false;
        };
        let Ok(parsed) = parse_url(url) else {
            return false;
        };
        let host = match &parsed.host {
            Host::DnsName(_) | Host::Ipv4(_) | Host::Ipv6(_) => parsed.host.to_string(),
        };
        if !host_in_set(&host, set) {
            return false;
        }
    }
    true
}

/// Evaluate an action against the policy: the first rule whose sink pattern
/// and label predicate both match decides; otherwise the default effect.
pub fn check_action(action: &ActionRequest, state: &TaintState, policy: &Policy) -> Verdict {
    let labels = state.combined_action_labels(action);
    let origins = action_origins(action, &labels);

    for rule in &policy.rules {
        if !sink_matches(&rule.sink, action, &policy.sets) {
            continue;
        }
        if !eval_predicate(&rule.predicate, &labels, &origins, &policy.sets) {
            continue;
        }
        let decision = match rule.effect {
            Effect::Deny => Decision::Deny,
            Effect::RequireApproval => Decision::RequireApproval,
            Effect::Allow => Decision::Allow,
        };
        let threat = (decision != Decision::Allow).then_some(rule.threat_class);
        return Verdict {
            decision,
            rule_id: Some(rule.id.clone()),
            reason: format!("rule {} matched {}", rule.id, action.tool),
            threat_class: threat,
        };
    }

    match policy.default_effect {
        Effect::Allow => Verdict::allow("no rule matched; policy default"),
        Effect::Deny => Verdict::deny(
            "no rule matched; policy default",
            ThreatClass::SecurityCompliance,
        ),
        Effect::RequireApproval => Verdict {
            decision: Decision::RequireApproval,
            rule_id: None,
            reason: "no rule matched; policy default".to_string(),
            threat_class: Some(ThreatClass::SecurityCompliance),
        },
    }
}
