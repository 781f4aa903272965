//! Gateway configuration: a TOML file naming the allowlist, secret
//! environment references, the policy file, limits, armor thresholds, and
//! the memory band.
//!
//! Loading is all-or-nothing and aggregates every problem into one error:
//! unreadable policy files, unset environment variables, bad patterns, and
//! malformed values are reported together. Secret values are read from the
//! named environment variables and live only inside the constructed
//! [`Vault`]; they never appear in the config structure afterwards.

use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::action::ActionClass;
use crate::armor::{ArmorConfig, DetectorThresholds};
use crate::flow::{parse_policy, Policy};
use crate::isolation::IsolationMode;
use crate::session::{default_limits, BucketConfig, ScoreBand};
use crate::urlguard::{DomainPolicy, EmptyListMode};
use crate::vault::{SecretRecord, Vault};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

/// Default memory band: the 1st and 99th percentile of per-entry trigram
/// scores over the committed benign calibration corpus. The calibration
/// suite recomputes these from the corpus and asserts they still hold.
pub const DEFAULT_MEMORY_BAND_LOW: f64 = 1.578838613381269;
pub const DEFAULT_MEMORY_BAND_HIGH: f64 = 2.432259932087858;

#[derive(Debug, Deserialize)]
struct SecretRef {
    env: String,
}

#[derive(Debug, Deserialize)]
struct RawBucket {
    capacity: u64,
    per_minute: u64,
}

#[derive(Debug, Default, Deserialize)]
struct RawArmor {
    suspicious_threshold: Option<f64>,
    malicious_threshold: Option<f64>,
    nonce_bits: Option<u32>,
    detector_plugin: Option<PathBuf>,
    transform_plugin: Option<PathBuf>,
    plugin_timeout_secs: Option<u64>,
    #[serde(default)]
    marker_lexicon: Vec<String>,
}

#[derive(Debug, Default, Deserialize)]
struct RawBand {
    low: Option<f64>,
    high: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
struct RawMemory {
    #[serde(default)]
    band: RawBand,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    format_version: u32,
    #[serde(default)]
    allowed_domains: Vec<String>,
    #[serde(default)]
    empty_list_mode: Option<String>,
    #[serde(default)]
    allow_ip_hosts: bool,
    #[serde(default)]
    allow_userinfo: bool,
    #[serde(default)]
    policy_path: Option<PathBuf>,
    #[serde(default)]
    audit_log_path: Option<PathBuf>,
    #[serde(default)]
    isolation_mode: Option<String>,
    #[serde(default)]
    secrets: BTreeMap<String, SecretRef>,
    #[serde(default)]
    limits: BTreeMap<String, RawBucket>,
    #[serde(default)]
    armor: RawArmor,
    #[serde(default)]
    memory: RawMemory,
}

/// Fully validated runtime configuration.
#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub domain_policy: DomainPolicy,
    /// The raw pattern list, as fed to the flawed validator in differential
    /// runs.
    pub allowed_domains: Vec<String>,
    pub vault: Vault,
    pub policy: Policy,
    pub limits: BTreeMap<ActionClass, BucketConfig>,
    pub armor: ArmorConfig,
    pub detector_plugin: Option<PathBuf>,
    pub transform_plugin: Option<PathBuf>,
    pub plugin_timeout_secs: u64,
    pub memory_band: ScoreBand,
    pub isolation_mode: IsolationMode,
    pub audit_log_path: Option<PathBuf>,
}

impl GatewayConfig {
    /// A minimal config for library callers: allowlist only, no secrets,
    /// empty policy, defaults everywhere else.
    pub fn minimal(allowed_domains: &[&str]) -> Self {
        let domains: Vec<String> = allowed_domains.iter().map(|s| s.to_string()).collect();
        Self {
            domain_policy: DomainPolicy::new(&domains).expect("valid patterns"),
            allowed_domains: domains,
            vault: Vault::default(),
            policy: Policy::empty(),
            limits: default_limits(),
            armor: ArmorConfig::default(),
            detector_plugin: None,
            transform_plugin: None,
            plugin_timeout_secs: 5,
            memory_band: ScoreBand::new(DEFAULT_MEMORY_BAND_LOW, DEFAULT_MEMORY_BAND_HIGH),
            isolation_mode: IsolationMode::Isolated,
            audit_log_path: None,
        }
    }

    pub fn with_vault(mut self, vault: Vault) -> Self {
        self.vault = vault;
        self
    }

    pub fn with_policy(mut self, policy: Policy) -> Self {
        self.policy = policy;
        self
    }
}

/// Every problem found while loading, reported together.
#[derive(Debug, thiserror::Error)]
#[error("config invalid: {}", problems.join("; "))]
pub struct ConfigError {
    pub problems: Vec<String>,
}

/// Load and validate a config file, resolving secret environment
/// references and parsing the policy file.
pub fn load_config(path: impl AsRef<Path>) -> Result<GatewayConfig, ConfigError> {
    let path = path.as_ref();
    let mut problems = Vec::new();

    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            return Err(ConfigError {
                problems: vec![format!("cannot read {}: {e}", path.display())],
            })
        }
    };
    let raw: RawConfig = match toml::from_str(&text) {
        Ok(r) => r,
        Err(e) => {
            return Err(ConfigError {
                problems: vec![format!("cannot parse {}: {e}", path.display())],
            })
        }
    };

    if raw.format_version != CONFIG_FORMAT_VERSION {
        problems.push(format!(
            "format_version {} unsupported (expected {CONFIG_FORMAT_VERSION})",
            raw.format_version
        ));
    }

    let domain_policy = match DomainPolicy::new(&raw.allowed_domains) {
        Ok(mut dp) => {
            match raw.empty_list_mode.as_deref() {
                None | Some("deny_all") => {}
                Some("allow_all") => dp = dp.with_empty_list_mode(EmptyListMode::AllowAll),
                Some(other) => {
                    problems.push(format!("empty_list_mode {other:?} is not allow_all|deny_all"))
                }
            }
            dp = dp.with_allow_ip_hosts(raw.allow_ip_hosts);
            dp = dp.with_allow_userinfo(raw.allow_userinfo);
            Some(dp)
        }
        Err(e) => {
            problems.push(e.to_string());
            None
        }
    };

    let mut records = Vec::new();
    for (name, secret_ref) in &raw.secrets {
        match std::env::var(&secret_ref.env) {
            Ok(value) if !value.is_empty() => records.push(SecretRecord::new(name, value)),
            Ok(_) => problems.push(format!(
                "secrets.{name}.env: variable {} is empty",
                secret_ref.env
            )),
            Err(_) => problems.push(format!(
                "secrets.{name}.env: variable {} is not set",
                secret_ref.env
            )),
        }
    }
    let vault = match Vault::new(records) {
        Ok(v) => Some(v),
        Err(e) => {
            problems.push(format!("vault: {e}"));
            None
        }
    };

    let base_dir = path.parent().unwrap_or_else(|| Path::new("."));
    let policy = match &raw.policy_path {
        None => Some(Policy::empty()),
        Some(rel) => {
            let policy_file = base_dir.join(rel);
            match std::fs::read_to_string(&policy_file) {
                Err(e) => {
                    problems.push(format!("policy_path {}: {e}", policy_file.display()));
                    None
                }
                Ok(policy_text) => match parse_policy(&policy_text) {
                    Ok(p) => Some(p),
                    Err(e) => {
                        problems.push(format!("policy {}: {e}", policy_file.display()));
                        None
                    }
                },
            }
        }
    };

    let mut limits = default_limits();
    for (class_name, bucket) in &raw.limits {
        match ActionClass::from_name(class_name) {
            Some(class) => {
                limits.insert(class, BucketConfig::new(bucket.capacity, bucket.per_minute));
            }
            None => problems.push(format!("limits.{class_name}: unknown action class")),
        }
    }

    let mut thresholds = DetectorThresholds::default();
    if let Some(s) = raw.armor.suspicious_threshold {
        thresholds.suspicious = s;
    }
    if let Some(m) = raw.armor.malicious_threshold {
        thresholds.malicious = m;
    }
    if thresholds.suspicious > thresholds.malicious {
        problems.push(format!(
            "armor thresholds inverted: suspicious {} > malicious {}",
            thresholds.suspicious, thresholds.malicious
        ));
    }
    let mut armor = ArmorConfig {
        thresholds,
        ..ArmorConfig::default()
    };
    if let Some(bits) = raw.armor.nonce_bits {
        if bits < 128 {
            problems.push(format!("armor.nonce_bits {bits} below the 128-bit minimum"));
        } else {
            armor.nonce_bits = bits;
        }
    }
    if !raw.armor.marker_lexicon.is_empty() {
        armor.marker_lexicon.extend(raw.armor.marker_lexicon.iter().cloned());
    }

    let memory_band = ScoreBand::new(
        raw.memory.band.low.unwrap_or(DEFAULT_MEMORY_BAND_LOW),
        raw.memory.band.high.unwrap_or(DEFAULT_MEMORY_BAND_HIGH),
    );
    if memory_band.low > memory_band.high {
        problems.push(format!(
            "memory.band inverted: low {} > high {}",
            memory_band.low, memory_band.high
        ));
    }

    let isolation_mode = match raw.isolation_mode.as_deref() {
        None | Some("isolated") => IsolationMode::Isolated,
        Some("baseline") => IsolationMode::Baseline,
        Some(other) => {
            problems.push(format!("isolation_mode {other:?} is not baseline|isolated"));
            IsolationMode::Isolated
        }
    };

    let detector_plugin = raw.armor.detector_plugin.as_ref().map(|p| base_dir.join(p));
    if let Some(plugin) = &detector_plugin {
        if !plugin.exists() {
            problems.push(format!("armor.detector_plugin {} does not exist", plugin.display()));
        }
    }
    let transform_plugin = raw.armor.transform_plugin.as_ref().map(|p| base_dir.join(p));
    if let Some(plugin) = &transform_plugin {
        if !plugin.exists() {
            problems.push(format!("armor.transform_plugin {} does not exist", plugin.display()));
        }
    }

    if !problems.is_empty() {
        return Err(ConfigError { problems });
    }

    Ok(GatewayConfig {
        domain_policy: domain_policy.expect("validated"),
        allowed_domains: raw.allowed_domains,
        vault: vault.expect("validated"),
        policy: policy.expect("validated"),
        limits,
        armor,
        detector_plugin,
        transform_plugin,
        plugin_timeout_secs: raw.armor.plugin_timeout_secs.unwrap_or(5),
        memory_band,
        isolation_mode,
        audit_log_path: raw.audit_log_path.map(|p| base_dir.join(p)),
    })
}
