//! Operational shell: configuration, the staged check pipeline, trace
//! replay, and attack-corpus regression runs.

mod config;
mod corpus;
mod pipeline;
mod replay;

pub use config::{
    load_config, ConfigError, GatewayConfig, CONFIG_FORMAT_VERSION, DEFAULT_MEMORY_BAND_HIGH,
    DEFAULT_MEMORY_BAND_LOW,
};
pub use corpus::{
    load_corpus, run_corpus, stage_to_layer, BlockLayer, CorpusEntry, CorpusError, EntryReport,
    Expectation, ModeTotals, RunReport, CORPUS_FORMAT_VERSION,
};
pub use pipeline::{
    ApprovalHook, FallbackDetector, GuardedHooks, NonInteractiveApproval, Pipeline, PipelineStage,
    StagedVerdict,
};
pub use replay::{
    replay_trace, ReplayReport, ReplayedAction, TraceArg, TraceError, TraceRecord,
    TRACE_FORMAT_VERSION,
};
