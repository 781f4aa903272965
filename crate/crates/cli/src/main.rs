//! Command-line gateway: URL checks, prompt scanning, policy evaluation,
//! trace replay, corpus regression runs, and audit-chain verification.
//!
//! Exit codes: 0 ok, 1 expectation or verification failure, 2 deny,
//! 3 parse or config error.

use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use portcullis_core::action::ActionRequest;
use portcullis_core::flow::{
    check_action, parse_policy, Datum, Decision, LabelSet, TaintLabel, TaintState,
};
use portcullis_core::gateway::{load_config, replay_trace, run_corpus, GatewayConfig, TraceError};
use portcullis_core::isolation::IsolationMode;
use portcullis_core::session::{audit_verify, AuditLog, SystemClock, TrigramModel, VerifyOutcome};
use portcullis_core::urlguard::{
    is_url_allowed_flawed, is_url_allowed_secure, parse_url, DomainPolicy,
};
use portcullis_core::vault::{scan_egress, SecretRecord, SinkDescriptor, SinkTrust, Vault};

const EXIT_OK: u8 = 0;
const EXIT_EXPECTATION: u8 = 1;
const EXIT_DENY: u8 = 2;
const EXIT_PARSE: u8 = 3;

#[derive(Parser)]
#[command(name = "portcullis", version, about = "Guardrail gateway for LLM browsing agents")]
struct Cli {
    /// Gateway config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Machine-readable JSON output where a command offers both forms.
    #[arg(long, global = true)]
    json: bool,

    /// Seed for reproducible runs. Nonce security ignores the seed unless
    /// --deterministic-unsafe is also passed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Test-only: let --seed drive nonce generation too.
    #[arg(long, global = true)]
    deterministic_unsafe: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a URL against a domain allowlist.
    CheckUrl(CheckUrlArgs),
    /// Scan text from stdin (or a file) for secret leaks.
    ScanPrompt(ScanPromptArgs),
    /// Policy-file operations.
    Policy {
        #[command(subcommand)]
        command: PolicyCommand,
    },
    /// Re-check a recorded action trace through the full pipeline.
    Replay(ReplayArgs),
    /// Corpus regression runs.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
    /// Audit-log operations.
    Audit {
        #[command(subcommand)]
        command: AuditCommand,
    },
}

#[derive(Args)]
struct CheckUrlArgs {
    /// Comma-separated allowlist patterns.
    #[arg(long)]
    allowlist: String,
    /// Use the vulnerable reference validator instead of the secure one.
    #[arg(long)]
    flawed: bool,
    url: String,
}

#[derive(Args)]
struct ScanPromptArgs {
    /// Secret definitions as name=ENV_VAR; values come from the named
    /// environment variables. May repeat. Merged with config secrets.
    #[arg(long = "vault-env")]
    vault_env: Vec<String>,
    /// Read from this file instead of stdin.
    input: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PolicyCommand {
    /// Evaluate every action of a JSONL trace against a policy file.
    Check {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        trace: PathBuf,
    },
}

#[derive(Args)]
struct ReplayArgs {
    trace: PathBuf,
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Run corpus entries in the requested modes and check expectations.
    Run {
        dir: PathBuf,
        /// Comma-separated subset of baseline,isolated.
        #[arg(long, default_value = "baseline,isolated")]
        modes: String,
        /// Audit log file for the run (defaults to in-memory).
        #[arg(long)]
        audit_log: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AuditCommand {
    /// Recompute the hash chain of a log file.
    Verify { file: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.seed.is_some() && !cli.deterministic_unsafe {
        eprintln!("note: --seed does not affect nonce security without --deterministic-unsafe");
    }
    let code = match run(cli) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            EXIT_PARSE
        }
    };
    ExitCode::from(code)
}

fn run(cli: Cli) -> Result<u8, String> {
    match cli.command {
        Command::CheckUrl(args) => check_url(args),
        Command::ScanPrompt(args) => scan_prompt(args, cli.config.as_deref()),
        Command::Policy {
            command: PolicyCommand::Check { policy, trace },
        } => policy_check(&policy, &trace, cli.json),
        Command::Replay(args) => replay(args, cli.config.as_deref(), cli.json),
        Command::Corpus {
            command:
                CorpusCommand::Run {
                    dir,
                    modes,
                    audit_log,
                },
        } => corpus_run(&dir, &modes, audit_log, cli.config.as_deref(), cli.json),
        Command::Audit {
            command: AuditCommand::Verify { file },
        } => audit_verify_cmd(&file, cli.json),
    }
}

fn check_url(args: CheckUrlArgs) -> Result<u8, String> {
    let allowlist: Vec<String> = args
        .allowlist
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();

    if args.flawed {
        let allowed = is_url_allowed_flawed(&args.url, &allowlist);
        println!(
            "{}",
            serde_json::json!({ "validator": "flawed", "url": args.url, "allowed": allowed })
        );
        return Ok(if allowed { EXIT_OK } else { EXIT_DENY });
    }

    let policy = DomainPolicy::new(&allowlist).map_err(|e| e.to_string())?;
    match parse_url(&args.url) {
        Err(e) => {
            println!(
                "{}",
                serde_json::json!({
                    "validator": "secure", "url": args.url,
                    "allowed": false, "reason": "parse_error",
                    "detail": e.to_string(),
                })
            );
            Ok(EXIT_PARSE)
        }
        Ok(parsed) => {
            let verdict = is_url_allowed_secure(&parsed, &policy);
            println!(
                "{}",
                serde_json::json!({
                    "validator": "secure", "url": args.url,
                    "allowed": verdict.allowed,
                    "reason": verdict.reason,
                    "matched_pattern": verdict.matched_pattern,
                    "host": parsed.host.to_string(),
                })
            );
            Ok(if verdict.allowed { EXIT_OK } else { EXIT_DENY })
        }
    }
}

fn vault_from_args(specs: &[String], config: Option<&std::path::Path>) -> Result<Vault, String> {
    let mut records = Vec::new();
    if let Some(path) = config {
        let config = load_config(path).map_err(|e| e.to_string())?;
        for record in config.vault.records() {
            records.push(record.clone());
        }
    }
    for spec in specs {
        let (name, env_var) = spec
            .split_once('=')
            .ok_or_else(|| format!("--vault-env {spec:?} is not name=ENV_VAR"))?;
        let value = std::env::var(env_var)
            .map_err(|_| format!("environment variable {env_var} is not set"))?;
        records.push(SecretRecord::new(name, value));
    }
    Vault::new(records).map_err(|e| e.to_string())
}

fn scan_prompt(args: ScanPromptArgs, config: Option<&std::path::Path>) -> Result<u8, String> {
    let vault = vault_from_args(&args.vault_env, config)?;
    if vault.is_empty() {
        return Err("no secrets defined; use --vault-env name=ENV_VAR or a config file".into());
    }
    let text = match &args.input {
        Some(path) => std::fs::read_to_string(path).map_err(|e| e.to_string())?,
        None => {
            let mut buf = String::new();
            std::io::stdin()
                .read_to_string(&mut buf)
                .map_err(|e| e.to_string())?;
            buf
        }
    };
    // A prompt is model-facing text: placeholders belong there, raw values
    // never do.
    let sink = SinkDescriptor::new("prompt", None, SinkTrust::Trusted);
    let findings = scan_egress(&[("prompt".to_string(), text)], &vault, &sink);
    for finding in &findings {
        println!("{}", serde_json::to_string(finding).unwrap());
    }
    Ok(if findings.is_empty() { EXIT_OK } else { EXIT_DENY })
}

fn parse_label_token(token: &str) -> Option<TaintLabel> {
    if token == "trusted" {
        return Some(TaintLabel::Trusted);
    }
    token
        .strip_prefix("untrusted:")
        .map(TaintLabel::untrusted)
        .or_else(|| token.strip_prefix("secret:").map(TaintLabel::secret))
}

fn policy_check(
    policy_path: &std::path::Path,
    trace_path: &std::path::Path,
    json: bool,
) -> Result<u8, String> {
    let policy_text = std::fs::read_to_string(policy_path).map_err(|e| e.to_string())?;
    let policy = parse_policy(&policy_text).map_err(|e| e.to_string())?;
    let trace_text = std::fs::read_to_string(trace_path).map_err(|e| e.to_string())?;

    let mut denials = 0usize;
    for (idx, line) in trace_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: portcullis_core::gateway::TraceRecord =
            serde_json::from_str(line).map_err(|e| format!("trace line {}: {e}", idx + 1))?;
        let mut state = TaintState::new();
        let mut action = ActionRequest::new(record.tool.clone(), "policy-check", record.step);
        for arg in &record.args {
            let labels: Result<Vec<TaintLabel>, String> = arg
                .labels
                .iter()
                .map(|t| {
                    parse_label_token(t)
                        .ok_or_else(|| format!("trace line {}: unknown label {t:?}", idx + 1))
                })
                .collect();
            let datum = Datum::new(&arg.value, LabelSet::from_labels(labels?));
            state.register(&datum);
            action = action.with_arg(arg.name.clone(), arg.value.clone(), datum);
        }
        let verdict = check_action(&action, &state, &policy);
        if verdict.decision == Decision::Deny {
            denials += 1;
        }
        if json {
            println!("{}", serde_json::to_string(&verdict).unwrap());
        } else {
            println!(
                "line {} {}: {:?} {}",
                idx + 1,
                record.tool,
                verdict.decision,
                verdict.rule_id.as_deref().unwrap_or("-")
            );
        }
    }
    Ok(if denials > 0 { EXIT_DENY } else { EXIT_OK })
}

fn require_config(config: Option<&std::path::Path>) -> Result<GatewayConfig, String> {
    let path = config.ok_or("--config is required for this command")?;
    load_config(path).map_err(|e| e.to_string())
}

fn replay(args: ReplayArgs, config: Option<&std::path::Path>, json: bool) -> Result<u8, String> {
    let config = require_config(config)?;
    let log = match &config.audit_log_path {
        Some(path) => AuditLog::create(path).map_err(|e| e.to_string())?,
        None => AuditLog::in_memory(),
    };
    let clock = SystemClock;
    match replay_trace(&args.trace, &config, &log, &clock) {
        Ok(report) => {
            if json {
                println!("{}", serde_json::to_string_pretty(&report).unwrap());
            } else {
                for action in &report.actions {
                    println!(
                        "line {} {} -> {:?} at {} {}",
                        action.line,
                        action.tool,
                        action.decision,
                        action.stage,
                        action.delta.as_deref().unwrap_or("")
                    );
                }
                println!(
                    "{} action(s), {} denial(s), {} delta(s)",
                    report.actions.len(),
                    report.denials,
                    report.deltas
                );
            }
            if report.deltas > 0 {
                Ok(EXIT_EXPECTATION)
            } else if report.denials > 0 {
                Ok(EXIT_DENY)
            } else {
                Ok(EXIT_OK)
            }
        }
        Err(TraceError::Format { line, message }) => {
            Err(format!("trace format error at line {line}: {message}"))
        }
        Err(other) => Err(other.to_string()),
    }
}

fn parse_modes(modes: &str) -> Result<Vec<IsolationMode>, String> {
    modes
        .split(',')
        .map(str::trim)
        .filter(|m| !m.is_empty())
        .map(|m| match m {
            "baseline" => Ok(IsolationMode::Baseline),
            "isolated" => Ok(IsolationMode::Isolated),
            other => Err(format!("unknown mode {other:?} (expected baseline|isolated)")),
        })
        .collect()
}

fn corpus_run(
    dir: &std::path::Path,
    modes: &str,
    audit_log: Option<PathBuf>,
    config: Option<&std::path::Path>,
    json: bool,
) -> Result<u8, String> {
    let config = require_config(config)?;
    let modes = parse_modes(modes)?;
    if modes.is_empty() {
        return Err("at least one mode is required".into());
    }

    // The reference memory model trains on the benign texts shipped next to
    // the entries, when present.
    let benign_path = dir.join("benign_corpus.jsonl");
    let model = if benign_path.exists() {
        let text = std::fs::read_to_string(&benign_path).map_err(|e| e.to_string())?;
        let texts: Vec<String> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str::<serde_json::Value>(l)
                    .map_err(|e| e.to_string())
                    .map(|v| v["text"].as_str().unwrap_or_default().to_string())
            })
            .collect::<Result<_, _>>()?;
        Some(TrigramModel::train(texts.iter().map(String::as_str)))
    } else {
        None
    };

    let log = match audit_log.or_else(|| config.audit_log_path.clone()) {
        Some(path) => AuditLog::create(&path).map_err(|e| e.to_string())?,
        None => AuditLog::in_memory(),
    };
    let clock = SystemClock;
    let report =
        run_corpus(dir, &config, &modes, model.as_ref(), &log, &clock).map_err(|e| e.to_string())?;

    if json {
        println!("{}", serde_json::to_string_pretty(&report).unwrap());
    } else {
        for entry in &report.entries {
            println!(
                "{:9} {:28} {:44} layers={:?} {}",
                format!("{:?}", entry.mode).to_lowercase(),
                entry.id,
                format!("{:?}", entry.outcome),
                entry.block_layers,
                if entry.expectation_met {
                    "ok"
                } else {
                    "EXPECTATION VIOLATED"
                }
            );
        }
        for (mode, totals) in &report.totals {
            println!(
                "{mode}: completed={} blocked={} hijacked={} egress_blocks={} executed_leaks={}",
                totals.completed,
                totals.blocked,
                totals.hijacked,
                totals.egress_blocks,
                totals.executed_leaks
            );
        }
        println!("blocks per layer: {:?}", report.blocks_per_layer);
    }
    Ok(if report.all_expectations_met {
        EXIT_OK
    } else {
        EXIT_EXPECTATION
    })
}

fn audit_verify_cmd(file: &std::path::Path, json: bool) -> Result<u8, String> {
    match audit_verify(file) {
        Ok(outcome) => {
            if json {
                println!("{}", serde_json::to_string(&outcome).unwrap());
            } else {
                match &outcome {
                    VerifyOutcome::Ok { events } => println!("ok: {events} event(s), chain intact"),
                    VerifyOutcome::TamperedAt { seq } => println!("TAMPERED at seq {seq}"),
                }
            }
            Ok(match outcome {
                VerifyOutcome::Ok { .. } => EXIT_OK,
                VerifyOutcome::TamperedAt { .. } => EXIT_EXPECTATION,
            })
        }
        Err(e) => Err(e.to_string()),
    }
}
