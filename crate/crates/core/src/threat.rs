//! Threat taxonomy tags attached to verdicts and audit events.
//!
//! The seven layers follow the MAESTRO threat-model decomposition of an
//! agent stack, from the foundation model up to the multi-agent ecosystem.
//! Tags are metadata only; no enforcement logic branches on them.

use serde::{Deserialize, Serialize};
use std::fmt;

/// MAESTRO layer tag, L1 through L7.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ThreatClass {
    /// L1 — foundation models (prompt injection, jailbreaks, backdoor triggers).
    #[serde(rename = "L1")]
    FoundationModel,
    /// L2 — data operations (DOM poisoning, encoding smuggling, cookie tampering).
    #[serde(rename = "L2")]
    DataOperations,
    /// L3 — agent frameworks (tool misuse, template tampering, memory poisoning).
    #[serde(rename = "L3")]
    AgentFrameworks,
    /// L4 — deployment and infrastructure (sandbox escape, debug-port exposure).
    #[serde(rename = "L4")]
    DeploymentInfra,
    /// L5 — evaluation and observability (telemetry leakage, log spoofing).
    #[serde(rename = "L5")]
    Observability,
    /// L6 — security and compliance (allowlist bypass, rate-limit evasion, vault compromise).
    #[serde(rename = "L6")]
    SecurityCompliance,
    /// L7 — agent ecosystem (rogue peers, delegation abuse, prompt reflection).
    #[serde(rename = "L7")]
    AgentEcosystem,
}

impl ThreatClass {
    /// Numeric layer index, 1..=7.
    pub fn layer(self) -> u8 {
        match self {
            ThreatClass::FoundationModel => 1,
            ThreatClass::DataOperations => 2,
            ThreatClass::AgentFrameworks => 3,
            ThreatClass::DeploymentInfra => 4,
            ThreatClass::Observability => 5,
            ThreatClass::SecurityCompliance => 6,
            ThreatClass::AgentEcosystem => 7,
        }
    }

    /// Parse the short tag form ("L1".."L7").
    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "L1" => Some(ThreatClass::FoundationModel),
            "L2" => Some(ThreatClass::DataOperations),
            "L3" => Some(ThreatClass::AgentFrameworks),
            "L4" => Some(ThreatClass::DeploymentInfra),
            "L5" => Some(ThreatClass::Observability),
            "L6" => Some(ThreatClass::SecurityCompliance),
            "L7" => Some(ThreatClass::AgentEcosystem),
            _ => None,
        }
    }
}

impl fmt::Display for ThreatClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.layer())
    }
}
