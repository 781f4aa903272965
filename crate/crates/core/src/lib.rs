//! Guardrail library for LLM browsing agents.
//!
//! Defense in depth over an agent's tool calls: URL allowlist validation
//! with an unambiguous authority parser ([`urlguard`]), secret redaction
//! and canary placeholders ([`vault`]), prompt encapsulation and injection
//! detection ([`armor`]), taint tracking with a rule DSL ([`flow`]),
//! post-exploitation session safeguards ([`session`]), planner-executor
//! isolation ([`isolation`]), and the gateway pipeline that composes the
//! layers ([`gateway`]).

pub mod action;
pub mod armor;
pub mod flow;
pub mod gateway;
pub mod isolation;
pub mod session;
pub mod threat;
pub mod urlguard;
pub mod vault;

pub use action::{ActionClass, ActionRequest, ToolRegistry};
pub use flow::{check_action, parse_policy, Datum, Decision, LabelSet, Policy, TaintLabel, TaintState, Verdict};
pub use threat::ThreatClass;
pub use urlguard::{is_url_allowed_flawed, is_url_allowed_secure, parse_url, DomainPolicy, ParsedUrl, UrlVerdict};
pub use vault::{redact, rehydrate, scan_egress, SecretRecord, Vault};
