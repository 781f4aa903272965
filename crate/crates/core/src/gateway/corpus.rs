//! Attack-corpus regression runs.
//!
//! A corpus is a directory with an `entries.jsonl` file and a `scenarios/`
//! subdirectory. Each entry names a scenario, the task to run, a threat
//! tag, and its expectation: whether the undefended baseline gets hijacked
//! and which defense layer must block (or, for benign entries, that the
//! full pipeline completes the task). The runner executes every entry in
//! every requested mode and aggregates per-layer block statistics.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::armor::{
    detect_injection, ExternalTransform, InjectionDetector, NormalizingTransform, RuleEngine,
    TextTransform,
};
use crate::isolation::{
    run_episode, EpisodeEnv, EpisodeOutcome, HijackMarker, IsolationMode, PermissiveHooks,
    Scenario, SecurityMonitor,
};
use crate::session::{AuditLog, Clock, SessionState, TrigramModel};
use crate::threat::ThreatClass;

use super::config::GatewayConfig;
use super::pipeline::{GuardedHooks, Pipeline};

pub const CORPUS_FORMAT_VERSION: u32 = 1;

/// Defense layer credited with a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockLayer {
    UrlGuard,
    Armor,
    FlowPolicy,
    SessionGuard,
    Isolation,
}

/// Stage names (pipeline stages and episode events) map onto layers for
/// expectation accounting.
pub fn stage_to_layer(stage: &str) -> Option<BlockLayer> {
    match stage {
        "url_guard" => Some(BlockLayer::UrlGuard),
        "task_scan" => Some(BlockLayer::Armor),
        "secret_egress" | "flow_policy" => Some(BlockLayer::FlowPolicy),
        "safe_mode" | "throttle" | "memory" => Some(BlockLayer::SessionGuard),
        "summary" => Some(BlockLayer::Isolation),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expectation {
    pub expect_hijack_baseline: bool,
    /// None means the entry is benign: the full pipeline must complete it
    /// without any blocking event.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_block_layer: Option<BlockLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub format_version: u32,
    pub id: String,
    /// Scenario file path, relative to the corpus directory.
    pub scenario: String,
    pub task: String,
    pub expectation: Expectation,
    pub threat_class: ThreatClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hijack_marker: Option<HijackMarker>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error reading corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus entry at line {line}: {message}")]
    Entry { line: usize, message: String },
    #[error("entry {id}: {message}")]
    Run { id: String, message: String },
}

/// Outcome of one entry in one mode.
#[derive(Debug, Clone, Serialize)]
pub struct EntryReport {
    pub id: String,
    pub mode: IsolationMode,
    pub outcome: EpisodeOutcome,
    pub block_layers: Vec<BlockLayer>,
    pub egress_blocks: usize,
    pub executed_leaks: usize,
    pub threat_class: ThreatClass,
    pub expectation_met: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ModeTotals {
    pub completed: usize,
    pub blocked: usize,
    pub hijacked: usize,
    /// Egress attempts stopped because they carried secret material.
    pub egress_blocks: usize,
    /// Secrets released to untrusted sinks by executed actions.
    pub executed_leaks: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub format_version: u32,
    pub entries: Vec<EntryReport>,
    pub totals: BTreeMap<String, ModeTotals>,
    pub blocks_per_layer: BTreeMap<BlockLayer, usize>,
    pub corpus_size: usize,
    pub all_expectations_met: bool,
}

impl RunReport {
    pub fn mode_totals(&self, mode: IsolationMode) -> &ModeTotals {
        &self.totals[mode_key(mode)]
    }
}

fn mode_key(mode: IsolationMode) -> &'static str {
    match mode {
        IsolationMode::Baseline => "baseline",
        IsolationMode::Isolated => "isolated",
    }
}

/// Load corpus entries from `<dir>/entries.jsonl`.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<CorpusEntry>, CorpusError> {
    let path = dir.as_ref().join("entries.jsonl");
    let text = std::fs::read_to_string(&path)?;
    let mut entries = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: CorpusEntry = serde_json::from_str(line).map_err(|e| CorpusError::Entry {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if entry.format_version != CORPUS_FORMAT_VERSION {
            return Err(CorpusError::Entry {
                line: idx + 1,
                message: format!("format_version {} unsupported", entry.format_version),
            });
        }
        if !seen.insert(entry.id.clone()) {
            return Err(CorpusError::Entry {
                line: idx + 1,
                message: format!("duplicate entry id {:?}", entry.id),
            });
        }
        entries.push(entry);
    }
    Ok(entries)
}

fn run_entry(
    entry: &CorpusEntry,
    scenario: &Scenario,
    mode: IsolationMode,
    config: &GatewayConfig,
    model: Option<&TrigramModel>,
    log: &AuditLog,
    clock: &dyn Clock,
) -> Result<EntryReport, CorpusError> {
    let session_id = format!("{}::{}", entry.id, mode_key(mode));
    let mut session = SessionState::new(&session_id, &config.limits, clock.now_ms());
    let placeholder_names: Vec<String> = config.vault.names().map(str::to_string).collect();

    // Configured plugins (with builtin fallback) when present, the builtin
    // engine otherwise.
    let detector: Box<dyn InjectionDetector> = match &config.detector_plugin {
        Some(path) => Box::new(super::pipeline::FallbackDetector {
            primary: Some(Box::new(
                crate::armor::ExternalDetector::new(path)
                    .with_timeout(std::time::Duration::from_secs(config.plugin_timeout_secs)),
            )),
            builtin: RuleEngine::new(config.armor.thresholds),
            log,
            clock,
            session_id: session_id.clone(),
        }),
        None => Box::new(RuleEngine::new(config.armor.thresholds)),
    };
    let transform: Box<dyn TextTransform> = match &config.transform_plugin {
        Some(path) => Box::new(
            ExternalTransform::new(path)
                .with_timeout(std::time::Duration::from_secs(config.plugin_timeout_secs)),
        ),
        None => Box::new(NormalizingTransform),
    };

    let env = EpisodeEnv {
        scenario,
        mode,
        marker: entry.hijack_marker.as_ref(),
        armor: &config.armor,
        detector: detector.as_ref(),
        transform: transform.as_ref(),
        monitor: SecurityMonitor::new(log, clock, session_id.clone()),
        placeholder_names,
    };

    let (trace, block_stages, egress_blocks, executed_leaks) = match mode {
        IsolationMode::Baseline => {
            let mut hooks = PermissiveHooks {
                vault: &config.vault,
            };
            let trace = run_episode(&entry.task, &env, &mut session, &mut hooks)
                .map_err(|e| CorpusError::Run {
                    id: entry.id.clone(),
                    message: e.to_string(),
                })?;
            (trace, Vec::new(), 0, 0)
        }
        IsolationMode::Isolated => {
            // Pre-flight scan of the task itself: a poisoned task never
            // reaches the planner.
            let task_report = detect_injection(&entry.task, detector.as_ref())
                .unwrap_or_else(|_| {
                    RuleEngine::new(config.armor.thresholds)
                        .scan(&entry.task)
                        .expect("builtin engine is total")
                });
            if task_report.is_malicious() {
                let outcome = EpisodeOutcome::Blocked {
                    stage: "task_scan".to_string(),
                    rule_id: None,
                };
                let block_layers = vec![BlockLayer::Armor];
                let expectation_met =
                    entry.expectation.expect_block_layer == Some(BlockLayer::Armor);
                return Ok(EntryReport {
                    id: entry.id.clone(),
                    mode,
                    outcome,
                    block_layers,
                    egress_blocks: 0,
                    executed_leaks: 0,
                    threat_class: entry.threat_class,
                    expectation_met,
                    detail: format!(
                        "task blocked pre-flight (score {:.1})",
                        task_report.score
                    ),
                });
            }

            let pipeline = Pipeline::new(config, log, clock);
            let mut hooks = GuardedHooks::new(pipeline, model);
            let trace = run_episode(&entry.task, &env, &mut session, &mut hooks)
                .map_err(|e| CorpusError::Run {
                    id: entry.id.clone(),
                    message: e.to_string(),
                })?;
            let stages: Vec<String> = hooks.block_events.iter().map(|(s, _)| s.clone()).collect();
            (
                trace,
                stages,
                hooks.pipeline.egress_block_findings,
                hooks.pipeline.executed_leaks,
            )
        }
    };

    let mut block_layers: Vec<BlockLayer> =
        block_stages.iter().filter_map(|s| stage_to_layer(s)).collect();
    block_layers.dedup();

    let expectation_met = match mode {
        IsolationMode::Baseline => {
            let hijacked = matches!(trace.outcome, EpisodeOutcome::Hijacked { .. });
            hijacked == entry.expectation.expect_hijack_baseline
        }
        IsolationMode::Isolated => {
            let hijacked = matches!(trace.outcome, EpisodeOutcome::Hijacked { .. });
            match entry.expectation.expect_block_layer {
                None => {
                    matches!(trace.outcome, EpisodeOutcome::Completed)
                        && block_layers.is_empty()
                        && egress_blocks == 0
                }
                Some(layer) => !hijacked && block_layers.contains(&layer),
            }
        }
    };

    Ok(EntryReport {
        id: entry.id.clone(),
        mode,
        outcome: trace.outcome.clone(),
        block_layers,
        egress_blocks,
        executed_leaks,
        threat_class: entry.threat_class,
        expectation_met,
        detail: format!("{} steps", trace.steps.len()),
    })
}

/// Run every corpus entry in every requested mode.
pub fn run_corpus(
    dir: impl AsRef<Path>,
    config: &GatewayConfig,
    modes: &[IsolationMode],
    model: Option<&TrigramModel>,
    log: &AuditLog,
    clock: &dyn Clock,
) -> Result<RunReport, CorpusError> {
    let dir = dir.as_ref();
    let entries = load_corpus(dir)?;
    let mut reports = Vec::new();
    let mut totals: BTreeMap<String, ModeTotals> = BTreeMap::new();
    let mut blocks_per_layer: BTreeMap<BlockLayer, usize> = BTreeMap::new();

    for mode in modes {
        totals.insert(mode_key(*mode).to_string(), ModeTotals::default());
    }

    for entry in &entries {
        let scenario_path = dir.join(&entry.scenario);
        let scenario = Scenario::load(&scenario_path).map_err(|e| CorpusError::Run {
            id: entry.id.clone(),
            message: format!("scenario {}: {e}", scenario_path.display()),
        })?;
        for mode in modes {
            let report = run_entry(entry, &scenario, *mode, config, model, log, clock)?;
            let bucket = totals.get_mut(mode_key(*mode)).expect("initialized");
            match &report.outcome {
                EpisodeOutcome::Completed => bucket.completed += 1,
                EpisodeOutcome::Blocked { .. } => bucket.blocked += 1,
                EpisodeOutcome::Hijacked { .. } => bucket.hijacked += 1,
            }
            bucket.egress_blocks += report.egress_blocks;
            bucket.executed_leaks += report.executed_leaks;
            if *mode == IsolationMode::Isolated {
                for layer in &report.block_layers {
                    *blocks_per_layer.entry(*layer).or_insert(0) += 1;
                }
            }
            reports.push(report);
        }
    }

    let all_expectations_met = reports.iter().all(|r| r.expectation_met);
    Ok(RunReport {
        format_version: CORPUS_FORMAT_VERSION,
        entries: reports,
        totals,
        blocks_per_layer,
        corpus_size: entries.len(),
        all_expectations_met,
    })
}
