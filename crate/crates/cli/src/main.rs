//! Operator surface for the biography-reconstruction pipeline.
//!
//! Stages compose through files only: `extract` writes per-official run
//! artifacts, `cgt` consolidates pooled biographies, `score`/`report`
//! aggregate results, and `replay` verifies that a recorded run reproduces
//! byte-for-byte. Every emitted artifact embeds (schema_version, seed,
//! config hash); outputs are written atomically via temp file + rename.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use polibio_core::biography::{Biography, OfficialId, Provenance};
use polibio_core::cgt::{assemble_cgt, PoolSpec};
use polibio_core::claims::{extract_claims, NormalizationRules};
use polibio_core::coder::{build_corpus, code_biography, CorpusInputs, CorpusMode};
use polibio_core::evaluation::{
    aggregate_report, classify_url, compute_prf, default_url_rules, entrywise_to_prf,
    parse_entrywise_judgment, report_to_csv, OfficialResult, DEFAULT_RECOVERED_THRESHOLD,
    DEFAULT_TP_THRESHOLD,
};
use polibio_core::fixtures;
use polibio_core::gateways::{
    compute_cost, PricingTable, ScriptedGateway, ScriptedTranscript, UsageByModel,
};
use polibio_core::orchestrator::{
    run_extraction, Budgets, Gateways, ResearchRequest, RunMode, RunOptions,
};

const ARTIFACT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
enum CliError {
    #[error("CONFIG_INVALID: {0}")]
    ConfigInvalid(String),
    #[error("ROSTER_EMPTY: roster lists no officials")]
    RosterEmpty,
    #[error("SCHEMA_MISMATCH: artifact has schema_version {got}, this build expects {expected}")]
    SchemaMismatch { got: u32, expected: u32 },
    #[error("STAGE_INPUT_MISSING: {0}")]
    StageInputMissing(String),
    #[error("{0}")]
    Stage(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io { path: path.display().to_string(), source }
    }
}

#[derive(Parser)]
#[command(name = "polibio", about = "Structured-biography extraction pipeline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scripted extractions for every official on the roster.
    Extract {
        #[arg(long)]
        config: PathBuf,
        /// Restrict to one official id.
        #[arg(long)]
        official: Option<String>,
    },
    /// Consolidate a biography pool into a ground-truth claim set.
    Cgt {
        #[arg(long)]
        config: PathBuf,
        /// Pool file: 4 agent + 4 llm-wiki + 1 human biography.
        #[arg(long)]
        pool: PathBuf,
        /// Scripted transcript supplying fact-check verdicts for disputed
        /// claims.
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score one candidate biography against a reference biography.
    Score {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Pre-recorded entrywise judgment JSON; when given, judge-path
        /// metrics are reported alongside the set-based ones.
        #[arg(long)]
        judgment: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate per-official results into the summary table.
    Report {
        #[arg(long)]
        config: PathBuf,
        /// JSON list of per-official scored results.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify URLs (one per line) into source categories.
    ClassifyUrls {
        #[arg(long)]
        urls: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute dollar costs from recorded token usage.
    Cost {
        #[arg(long)]
        usage: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay the shipped recorded run and verify byte-identical artifacts.
    Replay {
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelRoles {
    supervisor: String,
    searcher: String,
    coder: String,
    judge: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunConfig {
    schema_version: u32,
    roster: PathBuf,
    mode: RunMode,
    models: ModelRoles,
    budgets: Budgets,
    output_dir: PathBuf,
    seed: u64,
    #[serde(default)]
    pricing: Option<PathBuf>,
    #[serde(default)]
    blocklist: Option<PathBuf>,
    current_date: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RosterEntry {
    official_id: String,
    official_name: String,
    /// Scripted transcript replaying this official's run.
    transcript: PathBuf,
    #[serde(default)]
    country_clause: Option<String>,
    #[serde(default)]
    occupation_clause: Option<String>,
    #[serde(default)]
    year_clause: Option<String>,
    codebook: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    seed: u64,
    config_hash: String,
    official_id: String,
    mode: RunMode,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Atomic write: temp file in the destination directory, then rename.
fn atomic_write(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact")
    ));
    fs::write(&tmp, contents).map_err(CliError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(CliError::io(path))?;
    Ok(())
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::StageInputMissing(path.display().to_string())
        } else {
            CliError::Io { path: path.display().to_string(), source: e }
        }
    })
}

fn check_schema(value: &serde_json::Value, what: &str) -> Result<(), CliError> {
    let got = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| CliError::Stage(format!("{what} carries no schema_version")))?
        as u32;
    if got != ARTIFACT_SCHEMA_VERSION {
        return Err(CliError::SchemaMismatch { got, expected: ARTIFACT_SCHEMA_VERSION });
    }
    Ok(())
}

fn load_config(path: &Path) -> Result<(RunConfig, String), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::ConfigInvalid(format!("{}: {e}", path.display())))?;
    let config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::ConfigInvalid(format!("{}: {e}", path.display())))?;
    if config.schema_version != ARTIFACT_SCHEMA_VERSION {
        return Err(CliError::SchemaMismatch {
            got: config.schema_version,
            expected: ARTIFACT_SCHEMA_VERSION,
        });
    }
    if !config.roster.exists() {
        return Err(CliError::ConfigInvalid(format!(
            "roster path does not exist: {}",
            config.roster.display()
        )));
    }
    for optional in [&config.pricing, &config.blocklist] {
        if let Some(p) = optional {
            if !p.exists() {
                return Err(CliError::ConfigInvalid(format!(
                    "referenced path does not exist: {}",
                    p.display()
                )));
            }
        }
    }
    config
        .budgets
        .validate()
        .map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
    let hash = sha256_hex(text.as_bytes());
    Ok((config, hash))
}

fn request_for(entry: &RosterEntry, mode: RunMode) -> ResearchRequest {
    ResearchRequest {
        official_id: OfficialId::from(entry.official_id.as_str()),
        official_name: entry.official_name.clone(),
        country_clause: entry.country_clause.clone(),
        occupation_clause: entry.occupation_clause.clone(),
        year_clause: entry.year_clause.clone(),
        codebook: entry.codebook.clone(),
        mode,
    }
}

/// Runs one official end to end against its scripted transcript and writes
/// the five run artifacts. Returns the error instead of aborting the batch.
fn extract_one(
    entry: &RosterEntry,
    config: &RunConfig,
    config_hash: &str,
) -> Result<(), CliError> {
    let transcript_text = read_file(&entry.transcript)?;
    let transcript = ScriptedTranscript::from_jsonl(&transcript_text)
        .map_err(|e| CliError::Stage(format!("{}: {e}", entry.transcript.display())))?;
    let gw = ScriptedGateway::new(transcript);
    let gws = Gateways { chat: &gw, search: &gw, fetch: &gw };
    let opts = RunOptions {
        current_date: config.current_date.clone(),
        model: config.models.supervisor.clone(),
    };
    let request = request_for(entry, config.mode);
    let outcome = run_extraction(&request, &config.budgets, &opts, &gws)
        .map_err(|e| CliError::Stage(format!("extraction failed: {e}")))?;

    let dir = config.output_dir.join(&entry.official_id);
    let manifest = Manifest {
        schema_version: ARTIFACT_SCHEMA_VERSION,
        seed: config.seed,
        config_hash: config_hash.to_string(),
        official_id: entry.official_id.clone(),
        mode: config.mode,
    };
    atomic_write(
        &dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap().as_bytes(),
    )?;
    atomic_write(&dir.join("transcript.jsonl"), transcript_text.as_bytes())?;
    atomic_write(&dir.join("archive.jsonl"), outcome.archive.to_jsonl().as_bytes())?;
    atomic_write(&dir.join("final_report.txt"), outcome.final_report.as_bytes())?;
    let telemetry = serde_json::json!({
        "schema_version": ARTIFACT_SCHEMA_VERSION,
        "seed": config.seed,
        "config_hash": config_hash,
        "telemetry": outcome.telemetry,
        "forced_finish": outcome.forced_finish,
    });
    atomic_write(
        &dir.join("telemetry.json"),
        serde_json::to_string_pretty(&telemetry).unwrap().as_bytes(),
    )?;
    Ok(())
}

fn cmd_extract(config_path: &Path, official: Option<&str>) -> Result<(), CliError> {
    let (config, config_hash) = load_config(config_path)?;
    let roster: Vec<RosterEntry> = serde_json::from_str(&read_file(&config.roster)?)
        .map_err(|e| CliError::ConfigInvalid(format!("roster: {e}")))?;
    let selected: Vec<&RosterEntry> = roster
        .iter()
        .filter(|e| official.is_none_or(|id| e.official_id == id))
        .collect();
    if selected.is_empty() {
        return Err(CliError::RosterEmpty);
    }
    // Per-official isolation: one failure never aborts the batch.
    let mut failures = Vec::new();
    for entry in selected {
        if let Err(e) = extract_one(entry, &config, &config_hash) {
            eprintln!("official {} failed: {e}", entry.official_id);
            failures.push(entry.official_id.clone());
        } else {
            println!("official {}: artifacts written", entry.official_id);
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Stage(format!("{} official(s) failed: {}", failures.len(), failures.join(", "))))
    }
}

#[derive(Debug, Deserialize)]
struct PoolFile {
    schema_version: u32,
    official_id: String,
    official_name: String,
    agent: Vec<String>,
    llm_wiki: Vec<String>,
    human: String,
}

fn parse_bio(
    id: &OfficialId,
    name: &str,
    provenance: Provenance,
    text: &str,
) -> Result<Biography, CliError> {
    Biography::parse_text(id.clone(), name, provenance, text)
        .map_err(|e| CliError::Stage(format!("pool biography: {e}")))
}

fn cmd_cgt(
    config_path: &Path,
    pool_path: &Path,
    transcript: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let (config, config_hash) = load_config(config_path)?;
    let pool_value: serde_json::Value = serde_json::from_str(&read_file(pool_path)?)
        .map_err(|e| CliError::Stage(format!("pool file: {e}")))?;
    check_schema(&pool_value, "pool file")?;
    let pool: PoolFile = serde_json::from_value(pool_value)
        .map_err(|e| CliError::Stage(format!("pool file: {e}")))?;
    let id = OfficialId::from(pool.official_id.as_str());
    let spec = PoolSpec {
        agent_bios: pool
            .agent
            .iter()
            .enumerate()
            .map(|(i, t)| {
                parse_bio(&id, &pool.official_name, Provenance::AgentReport(format!("agent-{i}")), t)
            })
            .collect::<Result<_, _>>()?,
        llm_wiki_bios: pool
            .llm_wiki
            .iter()
            .enumerate()
            .map(|(i, t)| {
                parse_bio(&id, &pool.official_name, Provenance::Wiki(format!("wiki-{i}")), t)
            })
            .collect::<Result<_, _>>()?,
        human_wiki_bio: parse_bio(&id, &pool.official_name, Provenance::Human("human".into()), &pool.human)?,
    };
    let scripted = transcript
        .map(|p| {
            let text = read_file(p)?;
            ScriptedTranscript::from_jsonl(&text)
                .map_err(|e| CliError::Stage(format!("{}: {e}", p.display())))
        })
        .transpose()?
        .unwrap_or_default();
    let gw = ScriptedGateway::new(scripted);
    let rules = NormalizationRules::default();
    let cgt = assemble_cgt(&spec, &[], &rules, &config.models.judge, &gw)
        .map_err(|e| CliError::Stage(format!("consolidation failed: {e}")))?;
    let artifact = serde_json::json!({
        "schema_version": ARTIFACT_SCHEMA_VERSION,
        "seed": config.seed,
        "config_hash": config_hash,
        "official_id": pool.official_id,
        "cgt": cgt,
    });
    atomic_write(out, serde_json::to_string_pretty(&artifact).unwrap().as_bytes())?;
    println!(
        "cgt written: {} high-confidence, {} validated, {} excluded",
        cgt.high_confidence.len(),
        cgt.validated_low_confidence.len(),
        cgt.excluded.len()
    );
    let _ = pool.schema_version;
    Ok(())
}

fn cmd_score(
    config_path: &Path,
    candidate: &Path,
    reference: &Path,
    judgment: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let (config, config_hash) = load_config(config_path)?;
    let rules = NormalizationRules::default();
    let id = OfficialId::from("score");
    let cand = parse_bio(&id, "candidate", Provenance::AgentReport("score".into()), &read_file(candidate)?)?;
    let reference_bio = parse_bio(&id, "reference", Provenance::Human("score".into()), &read_file(reference)?)?;
    let cand_claims = extract_claims(&cand, &rules);
    let ref_claims = extract_claims(&reference_bio, &rules);
    let set_prf = compute_prf(&cand_claims, &ref_claims, &rules)
        .map_err(|e| CliError::Stage(format!("scoring failed: {e}")))?;
    let judge_prf = judgment
        .map(|p| {
            let result = parse_entrywise_judgment(&read_file(p)?)
                .map_err(|e| CliError::Stage(format!("{}: {e}", p.display())))?;
            Ok::<_, CliError>(entrywise_to_prf(
                &result,
                DEFAULT_TP_THRESHOLD,
                DEFAULT_RECOVERED_THRESHOLD,
            ))
        })
        .transpose()?;
    let artifact = serde_json::json!({
        "schema_version": ARTIFACT_SCHEMA_VERSION,
        "seed": config.seed,
        "config_hash": config_hash,
        "set_based": set_prf,
        "judge_based": judge_prf,
    });
    atomic_write(out, serde_json::to_string_pretty(&artifact).unwrap().as_bytes())?;
    println!(
        "set-based precision {:.4} recall {:.4} f1 {:.4}",
        set_prf.precision, set_prf.recall, set_prf.f1
    );
    Ok(())
}

fn cmd_report(config_path: &Path, results: &Path, out: &Path) -> Result<(), CliError> {
    let (config, config_hash) = load_config(config_path)?;
    let value: serde_json::Value = serde_json::from_str(&read_file(results)?)
        .map_err(|e| CliError::Stage(format!("results file: {e}")))?;
    check_schema(&value, "results file")?;
    let results: Vec<OfficialResult> = serde_json::from_value(value["results"].clone())
        .map_err(|e| CliError::Stage(format!("results file: {e}")))?;
    let rows = aggregate_report(&results, &default_url_rules());
    atomic_write(out, report_to_csv(&rows).as_bytes())?;
    let json_out = out.with_extension("json");
    let artifact = serde_json::json!({
        "schema_version": ARTIFACT_SCHEMA_VERSION,
        "seed": config.seed,
        "config_hash": config_hash,
        "rows": rows,
    });
    atomic_write(&json_out, serde_json::to_string_pretty(&artifact).unwrap().as_bytes())?;
    println!("{} report rows written", rows.len());
    Ok(())
}

fn cmd_classify_urls(urls: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let rules = default_url_rules();
    let mut lines = Vec::new();
    for url in read_file(urls)?.lines().filter(|l| !l.trim().is_empty()) {
        let category = classify_url(url.trim(), &rules)
            .map(|c| format!("{c:?}"))
            .unwrap_or_else(|_| "UNPARSEABLE".into());
        lines.push(format!("{},{category}", url.trim()));
    }
    let body = format!("url,category\n{}\n", lines.join("\n"));
    match out {
        Some(path) => atomic_write(path, body.as_bytes())?,
        None => print!("{body}"),
    }
    Ok(())
}

fn cmd_cost(usage_path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let value: serde_json::Value = serde_json::from_str(&read_file(usage_path)?)
        .map_err(|e| CliError::Stage(format!("usage file: {e}")))?;
    check_schema(&value, "usage file")?;
    let usage: Vec<UsageByModel> = serde_json::from_value(value["usage"].clone())
        .map_err(|e| CliError::Stage(format!("usage file: {e}")))?;
    let report = compute_cost(&usage, &PricingTable::implied_defaults())
        .map_err(|e| CliError::Stage(format!("cost recomputation failed: {e}")))?;
    let body = serde_json::to_string_pretty(&serde_json::json!({
        "schema_version": ARTIFACT_SCHEMA_VERSION,
        "report": report,
    }))
    .unwrap();
    match out {
        Some(path) => atomic_write(path, body.as_bytes())?,
        None => println!("{body}"),
    }
    for row in &report.rows {
        println!(
            "{} {}: ${:.2} total{}",
            row.model,
            row.label,
            row.total_cost,
            row.per_official
                .map(|p| format!(" (${p:.3}/official)"))
                .unwrap_or_default()
        );
    }
    Ok(())
}

/// Replays the shipped recorded run twice and verifies the runs agree
/// byte-for-byte, echoing the recorded telemetry.
fn cmd_replay(out_dir: Option<&Path>) -> Result<(), CliError> {
    let run = || -> Result<(String, String, polibio_core::orchestrator::RunTelemetry), CliError> {
        let gw = ScriptedGateway::new(fixtures::solheim_transcript());
        let gws = Gateways { chat: &gw, search: &gw, fetch: &gw };
        let opts = RunOptions { current_date: "2025-11-25".into(), model: "grok-4-fast".into() };
        let request = fixtures::solheim_request();
        let outcome = run_extraction(&request, &fixtures::SOLHEIM_BUDGETS, &opts, &gws)
            .map_err(|e| CliError::Stage(format!("replay failed: {e}")))?;
        let corpus = build_corpus(
            CorpusMode::RefinedReport,
            &CorpusInputs {
                final_report: Some(&outcome.final_report),
                archive: Some(&outcome.archive),
                ..Default::default()
            },
        )
        .map_err(|e| CliError::Stage(format!("corpus build failed: {e}")))?;
        let bio = code_biography(&corpus, &request, "grok-4-fast", &gw)
            .map_err(|e| CliError::Stage(format!("coding failed: {e}")))?;
        Ok((outcome.archive.to_jsonl(), bio.entries_text(), outcome.telemetry))
    };

    let (archive_a, bio_a, telemetry) = run()?;
    let (archive_b, bio_b, telemetry_b) = run()?;
    for (name, a, b) in [("archive", &archive_a, &archive_b), ("biography", &bio_a, &bio_b)] {
        if a != b {
            let at = a
                .bytes()
                .zip(b.bytes())
                .position(|(x, y)| x != y)
                .unwrap_or_else(|| a.len().min(b.len()));
            return Err(CliError::Stage(format!(
                "replay divergence in {name} at byte {at}"
            )));
        }
    }
    if telemetry != telemetry_b {
        return Err(CliError::Stage("replay divergence in telemetry".into()));
    }
    let expected = fixtures::solheim_expected_telemetry();
    if telemetry != expected {
        return Err(CliError::Stage(format!(
            "telemetry drifted from the recorded run: {telemetry:?}"
        )));
    }
    if let Some(dir) = out_dir {
        atomic_write(&dir.join("archive.jsonl"), archive_a.as_bytes())?;
        atomic_write(&dir.join("candidate.txt"), bio_a.as_bytes())?;
    }
    println!("replay verdict: identical");
    println!(
        "api_calls {} | searches {} | results {} | documents {} | chunks {} | tokens {} in / {} out / {} total",
        telemetry.api_calls,
        telemetry.searches,
        telemetry.results_returned,
        telemetry.urls_retrieved,
        telemetry.chunks_archived,
        telemetry.tokens_in,
        telemetry.tokens_out,
        telemetry.tokens_total(),
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Extract { config, official } => cmd_extract(config, official.as_deref()),
        Command::Cgt { config, pool, transcript, out } => {
            cmd_cgt(config, pool, transcript.as_deref(), out)
        }
        Command::Score { config, candidate, reference, judgment, out } => {
            cmd_score(config, candidate, reference, judgment.as_deref(), out)
        }
        Command::Report { config, results, out } => cmd_report(config, results, out),
        Command::ClassifyUrls { urls, out } => cmd_classify_urls(urls, out.as_deref()),
        Command::Cost { usage, out } => cmd_cost(usage, out.as_deref()),
        Command::Replay { out_dir } => cmd_replay(out_dir.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (CliError::ConfigInvalid(_) | CliError::SchemaMismatch { .. })) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
