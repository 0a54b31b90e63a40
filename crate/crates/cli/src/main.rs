use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aegis_core::crypto::sha3_256;
use aegis_core::daemon::{Daemon, DaemonClient, DaemonRequest, DaemonResponse};
use aegis_core::egress::EgressMediator;
use aegis_core::ekm::GateError;
use aegis_core::iepl::{self, seal};
use aegis_core::ilk::{
    export_cscr, parse_cscr, parse_log, read_log, verify_chain, verify_cscr, AuditKeys,
    ChainVerificationReport, CscrStyle,
};
use aegis_core::senatus::{execute_passage, run_votes, TallyOutcome, ValidatorRegistry};
use aegis_core::state::{
    InitOptions, ProposalStatus, RosterEntry, RoundRecord, StateDirectory, StateError,
    DAEMON_ADDR_FILE, LOG_FILE,
};
use aegis_core::{
    canonical, ActionProposal, AmendmentEdit, AmendmentProposal, PublicKey, PublishOutcome,
    QuorumConfig, ShutdownCertificate, SigningKey, Timestamp,
};
use aegis_harness::report::{to_json, write_json};
use aegis_harness::{run_experiment, run_tamper_trial, CompareConfig, TamperConfig};
use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

const EXIT_VETO: u8 = 2;
const EXIT_LOCKDOWN: u8 = 3;
const EXIT_VERIFY: u8 = 4;
const EXIT_USAGE: u8 = 64;

/// Runtime governance gate: sealed policy, proof-gated publishing,
/// hash-chained audit log and quorum amendments.
#[derive(Parser)]
#[command(name = "aegis", version)]
struct Cli {
    /// State directory (default: $AEGIS_STATE_DIR, then ./aegis-state).
    #[arg(long, global = true)]
    state: Option<PathBuf>,
    /// Indented output instead of canonical JSON.
    #[arg(long, global = true)]
    pretty: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Seal a charter and declare the unit's trust root.
    GenesisInit {
        #[arg(long)]
        charter: PathBuf,
        /// Founding authority key; created here if the file does not exist.
        #[arg(long)]
        auctor_key: Option<PathBuf>,
        /// Number of simulated validators to provision.
        #[arg(long, default_value_t = 5)]
        validators: usize,
    },
    /// Verify the trust root and serve publish requests on loopback.
    Run {
        /// Listen address; overrides the config file.
        #[arg(long)]
        addr: Option<String>,
    },
    /// Ask the running daemon to stop.
    Stop,
    /// Submit an action for publication.
    Submit { action_file: PathBuf },
    /// Policy amendments.
    Amend {
        #[command(subcommand)]
        cmd: AmendCmd,
    },
    /// Render log entries as CSCR blocks.
    ExportCscr {
        #[arg(long, default_value_t = 0)]
        from: u64,
        #[arg(long, default_value_t = u64::MAX)]
        to: u64,
        /// Log file to export; defaults to the state directory's log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Verify a structured log or a CSCR export. Needs no unit state.
    VerifyLog {
        file: PathBuf,
        /// Unit public key; checks entry proofs and seals as well as hashes.
        #[arg(long)]
        unit_key: Option<PublicKey>,
        /// Roster file; checks quorum certificates on governance entries.
        #[arg(long)]
        roster: Option<PathBuf>,
        /// Structured log to check a CSCR export against.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Experiments.
    Bench {
        #[command(subcommand)]
        cmd: BenchCmd,
    },
    /// Gate mode, counters and hashes.
    Status,
    /// Write a new signing key and print its public half.
    Keygen { out: PathBuf },
}

#[derive(Subcommand)]
enum AmendCmd {
    /// Record a proposal against the sealed charter.
    Propose {
        edits_file: PathBuf,
    },
    Status {
        id: String,
    },
    /// Collect votes from the simulated validators; on passage, redeclare.
    RunVotes {
        id: String,
    },
}

#[derive(Subcommand)]
enum BenchCmd {
    Tamper {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0xe1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Compare {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        episodes: usize,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = 1)]
        tampers: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Error carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

fn fail(code: u8, message: impl Into<String>) -> anyhow::Error {
    Failure {
        code,
        message: message.into(),
    }
    .into()
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(f) = e.downcast_ref::<Failure>() {
        return f.code;
    }
    match e.downcast_ref::<StateError>() {
        Some(StateError::Gate(GateError::GenesisHalt(_))) => EXIT_VERIFY,
        Some(StateError::NotInitialized(_) | StateError::AlreadyInitialized(_)) => EXIT_USAGE,
        _ => 1,
    }
}

/// Edits file for `amend propose`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EditsFile {
    #[serde(default)]
    proposal_id: Option<String>,
    edits: Vec<AmendmentEdit>,
    #[serde(default)]
    justification: String,
}

/// Short form accepted by `submit` besides a full action proposal.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionFile {
    action_id: String,
    category: String,
    #[serde(default)]
    payload: String,
    #[serde(default)]
    tags: BTreeSet<String>,
    #[serde(default)]
    resource: String,
    #[serde(default)]
    risk: Option<f64>,
}

struct Ctx {
    state_root: PathBuf,
    pretty: bool,
}

impl Ctx {
    fn print<T: Serialize>(&self, value: &T) -> anyhow::Result<()> {
        println!("{}", to_json(value, self.pretty)?);
        Ok(())
    }

    fn state(&self) -> anyhow::Result<StateDirectory> {
        Ok(StateDirectory::open(&self.state_root)?)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    serde_json::from_str(&text).map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let ctx = Ctx {
        state_root: StateDirectory::resolve(cli.state.as_deref()),
        pretty: cli.pretty,
    };
    match dispatch(&ctx, cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("aegis: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(ctx: &Ctx, cmd: Cmd) -> anyhow::Result<u8> {
    match cmd {
        Cmd::GenesisInit {
            charter,
            auctor_key,
            validators,
        } => genesis_init(ctx, &charter, auctor_key.as_deref(), validators),
        Cmd::Run { addr } => run_daemon(ctx, addr),
        Cmd::Stop => {
            let mut client = connect(ctx)?.ok_or_else(|| fail(1, "no daemon is running"))?;
            client.request(&DaemonRequest::Shutdown)?;
            Ok(0)
        }
        Cmd::Submit { action_file } => submit(ctx, &action_file),
        Cmd::Amend { cmd } => amend(ctx, cmd),
        Cmd::ExportCscr { from, to, log } => {
            let path = match log {
                Some(p) => p,
                None => ctx.state()?.path(LOG_FILE),
            };
            let entries = read_log(&path)?;
            print!("{}", export_cscr(&entries, from..=to, CscrStyle::Full)?);
            Ok(0)
        }
        Cmd::VerifyLog {
            file,
            unit_key,
            roster,
            log,
        } => verify_log(ctx, &file, unit_key, roster.as_deref(), log.as_deref()),
        Cmd::Bench { cmd } => bench(ctx, cmd),
        Cmd::Status => status(ctx),
        Cmd::Keygen { out } => {
            if out.exists() {
                return Err(fail(EXIT_USAGE, format!("{} exists", out.display())));
            }
            let key = SigningKey::generate();
            key.write_file(&out)?;
            println!("{}", key.public_key().to_hex());
            Ok(0)
        }
    }
}

fn genesis_init(
    ctx: &Ctx,
    charter: &Path,
    auctor_key: Option<&Path>,
    validators: usize,
) -> anyhow::Result<u8> {
    let bytes = fs::read(charter).with_context(|| charter.display().to_string())?;
    let doc = iepl::parse(bytes.trim_ascii_end())
        .map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", charter.display())))?;
    let key = match auctor_key {
        Some(p) if p.exists() => Some(SigningKey::read_file(p)?),
        Some(p) => {
            let k = SigningKey::generate();
            k.write_file(p)?;
            Some(k)
        }
        None => None,
    };
    fs::create_dir_all(&ctx.state_root)?;
    let opts = InitOptions {
        roster_size: validators,
        auctor_key: key,
        ..InitOptions::default()
    };
    let (sd, lock) = StateDirectory::init(&ctx.state_root, &doc, opts).map_err(|e| match e {
        StateError::AlreadyInitialized(p) => fail(
            EXIT_USAGE,
            format!("trust root already declared in {}", p.display()),
        ),
        e => e.into(),
    })?;
    #[derive(Serialize)]
    struct Out {
        state_dir: String,
        policy_hash: String,
        lock_digest: String,
        auctor_public_key: String,
        unit_public_key: String,
    }
    ctx.print(&Out {
        state_dir: ctx.state_root.display().to_string(),
        policy_hash: lock.policy_hash.to_hex(),
        lock_digest: lock.digest().to_hex(),
        auctor_public_key: lock.auctor_public_key.to_hex(),
        unit_public_key: sd.unit_key()?.public_key().to_hex(),
    })?;
    Ok(0)
}

fn load_clients(sd: &StateDirectory) -> anyhow::Result<BTreeMap<String, PublicKey>> {
    let path = sd.path("clients.json");
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    read_json(&path)
}

fn run_daemon(ctx: &Ctx, addr: Option<String>) -> anyhow::Result<u8> {
    let sd = ctx.state()?;
    let _guard = sd.writer_lock()?;
    let cfg = sd.config()?;
    let gate = sd.gate(None)?;
    let mediator = EgressMediator::new(load_clients(&sd)?, cfg.non_attested_threshold);
    let daemon = Daemon::bind(addr.as_deref().unwrap_or(&cfg.daemon_addr))?;
    let local = daemon.local_addr()?.to_string();
    fs::write(sd.path(DAEMON_ADDR_FILE), format!("{local}\n"))?;
    println!("listening {local}");
    std::io::stdout().flush()?;
    let served = daemon.serve(gate, mediator, None);
    let _ = fs::remove_file(sd.path(DAEMON_ADDR_FILE));
    let gate = served?;
    sd.persist(&gate)?;
    Ok(0)
}

fn connect(ctx: &Ctx) -> anyhow::Result<Option<DaemonClient>> {
    let Ok(sd) = ctx.state() else {
        return Ok(None);
    };
    match sd.daemon_addr() {
        Some(addr) => Ok(Some(
            DaemonClient::connect(addr.as_str()).with_context(|| format!("daemon at {addr}"))?,
        )),
        None => Ok(None),
    }
}

fn parse_action(path: &Path) -> anyhow::Result<ActionProposal> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    if let Ok(a) = serde_json::from_str::<ActionProposal>(&text) {
        return Ok(a);
    }
    let f: ActionFile = serde_json::from_str(&text)
        .map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", path.display())))?;
    let mut a = ActionProposal::new(&f.action_id, &f.category, f.payload.as_bytes());
    a.tags = f.tags;
    a.resource = f.resource;
    a.declared_risk = f.risk;
    Ok(a)
}

fn save_certificate(sd: &StateDirectory, cert: &ShutdownCertificate) -> anyhow::Result<PathBuf> {
    let dir = sd.path("certificates");
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{}.cert", cert.digest().to_hex()));
    fs::write(&path, canonical::to_canonical_string(cert)? + "\n")?;
    Ok(path)
}

fn submit(ctx: &Ctx, action_file: &Path) -> anyhow::Result<u8> {
    let action = parse_action(action_file)?;
    action
        .check()
        .map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", action_file.display())))?;
    let outcome = match connect(ctx)? {
        Some(mut client) => match client.request(&DaemonRequest::Publish { action })? {
            DaemonResponse::Outcome { outcome } => outcome,
            DaemonResponse::Error { message } => return Err(fail(1, message)),
            other => return Err(fail(1, format!("unexpected reply {other:?}"))),
        },
        None => {
            let sd = ctx.state()?;
            let _guard = sd.writer_lock()?;
            sd.gate(None)?.publish(&action)
        }
    };
    #[derive(Serialize)]
    struct Out<'a> {
        outcome: &'a PublishOutcome,
        #[serde(skip_serializing_if = "Option::is_none")]
        certificate_path: Option<String>,
    }
    let mut out = Out {
        outcome: &outcome,
        certificate_path: None,
    };
    let code = match &outcome {
        PublishOutcome::Committed { .. } => 0,
        PublishOutcome::Vetoed { .. } => EXIT_VETO,
        PublishOutcome::Lockdown { certificate } => {
            let path = save_certificate(&ctx.state()?, certificate)?;
            eprintln!("shutdown certificate: {}", path.display());
            out.certificate_path = Some(path.display().to_string());
            EXIT_LOCKDOWN
        }
    };
    ctx.print(&out)?;
    Ok(code)
}

fn amend(ctx: &Ctx, cmd: AmendCmd) -> anyhow::Result<u8> {
    match cmd {
        AmendCmd::Propose { edits_file } => {
            let sd = ctx.state()?;
            let f: EditsFile = read_json(&edits_file)?;
            let current = sd.charter()?;
            let base_hash = seal(&current)?;
            let proposed_at = Timestamp::now();
            let proposal_id = f.proposal_id.unwrap_or_else(|| {
                let body = serde_json::to_vec(&f.edits).unwrap_or_default();
                let d = sha3_256(&[body, proposed_at.to_string().into_bytes()].concat());
                format!("am-{}", &d.to_hex()[..12])
            });
            if sd.proposal(&proposal_id).is_ok() {
                return Err(fail(EXIT_USAGE, format!("proposal {proposal_id} exists")));
            }
            let proposal = AmendmentProposal {
                proposal_id,
                base_hash,
                edits: f.edits,
                justification: f.justification,
                proposed_at,
            };
            if proposal.edits.is_empty() {
                return Err(fail(EXIT_USAGE, "amendment has no edits"));
            }
            sd.save_proposal(&proposal)?;
            ctx.print(&proposal)?;
            Ok(0)
        }
        AmendCmd::Status { id } => {
            let sd = ctx.state()?;
            let proposal = sd.proposal(&id)?;
            #[derive(Serialize)]
            struct Out {
                proposal: AmendmentProposal,
                status: ProposalStatus,
                round: Option<RoundRecord>,
            }
            let round = sd.round(&id)?;
            ctx.print(&Out {
                proposal,
                status: round.as_ref().map_or(ProposalStatus::Pending, |r| r.status),
                round,
            })?;
            Ok(0)
        }
        AmendCmd::RunVotes { id } => run_amendment_votes(ctx, &id),
    }
}

fn run_amendment_votes(ctx: &Ctx, id: &str) -> anyhow::Result<u8> {
    let sd = ctx.state()?;
    if sd.daemon_addr().is_some() {
        return Err(fail(
            1,
            "a daemon holds this state directory; stop it before running votes",
        ));
    }
    let _guard = sd.writer_lock()?;
    let mut gate = sd.gate(None)?;
    let proposal = sd.proposal(id)?;
    let cfg = sd.config()?;
    let current = gate.sealed_policy().clone();
    let lock = gate.lock().clone();
    let now = Timestamp::now();
    let mut bus = sd.inbox()?;
    let pool = gate
        .pool_mut()
        .ok_or_else(|| fail(1, "gate has no validator pool"))?;
    let round = run_votes(
        pool,
        &proposal,
        &current,
        &mut bus,
        cfg.max_vote_rounds,
        now,
    )?;
    let registry = pool.registry();
    let mut record = RoundRecord {
        proposal_id: id.to_string(),
        status: ProposalStatus::Rejected,
        votes: round.votes.clone(),
        approve: 0,
        reject: 0,
        recuse: 0,
        discarded: 0,
        new_lock_digest: None,
        error: None,
    };
    let code = match round.outcome {
        TallyOutcome::Rejected(c) => {
            record.approve = c.approve;
            record.reject = c.reject;
            record.recuse = c.recuse;
            record.discarded = c.discarded;
            EXIT_VETO
        }
        TallyOutcome::Passed(cert) => {
            record.approve = cert.approving_votes.len();
            let adopted = execute_passage(
                &cert,
                &proposal,
                &current,
                &lock,
                &sd.auctor_key()?,
                &registry,
                now,
            )
            .map_err(anyhow::Error::from)
            .and_then(|(doc, new_lock)| {
                let digest = new_lock.digest();
                gate.adopt_redeclaration(new_lock, doc)?;
                Ok(digest)
            });
            match adopted {
                Ok(d) => {
                    sd.persist(&gate)?;
                    record.status = ProposalStatus::Passed;
                    record.new_lock_digest = Some(d);
                    0
                }
                Err(e) => {
                    record.status = ProposalStatus::Failed;
                    record.error = Some(format!("{e:#}"));
                    1
                }
            }
        }
    };
    sd.save_round(&record)?;
    ctx.print(&record)?;
    Ok(code)
}

fn load_roster(path: &Path) -> anyhow::Result<ValidatorRegistry> {
    let roster: Vec<RosterEntry> = read_json(path)?;
    Ok(roster
        .into_iter()
        .map(|r| (r.validator_id, r.public_key))
        .collect())
}

fn verify_log(
    ctx: &Ctx,
    file: &Path,
    unit_key: Option<PublicKey>,
    roster: Option<&Path>,
    log: Option<&Path>,
) -> anyhow::Result<u8> {
    let text = fs::read_to_string(file).with_context(|| file.display().to_string())?;
    let keys = match unit_key {
        Some(k) => {
            let mut keys = AuditKeys::unit(k);
            if let Some(r) = roster {
                keys.validators = Some((load_roster(r)?, QuorumConfig::default()));
            }
            Some(keys)
        }
        None if roster.is_some() => {
            return Err(fail(EXIT_USAGE, "--roster needs --unit-key"));
        }
        None => None,
    };
    let is_structured = text.trim_start().starts_with('{');
    let report: ChainVerificationReport = if is_structured {
        verify_chain(&parse_log(&text)?, keys.as_ref())
    } else {
        let blocks = parse_cscr(&text)?;
        let Some(log) = log else {
            return Err(fail(
                EXIT_USAGE,
                "a CSCR export is checked against its structured log: pass --log <ilk.log>",
            ));
        };
        verify_cscr(&blocks, &read_log(log)?, keys.as_ref())
    };
    ctx.print(&report)?;
    if report.intact {
        eprintln!("intact");
        Ok(0)
    } else {
        eprintln!(
            "broken at sequence {}",
            report
                .first_broken_sequence
                .map_or_else(|| "?".into(), |s| s.to_string())
        );
        Ok(EXIT_VERIFY)
    }
}

fn bench(ctx: &Ctx, cmd: BenchCmd) -> anyhow::Result<u8> {
    match cmd {
        BenchCmd::Tamper { trials, seed, out } => {
            let r = run_tamper_trial(&TamperConfig {
                trials,
                seed,
                ..TamperConfig::default()
            })?;
            eprintln!(
                "{}/{} certified; verification median {:.3} ms (MAD {:.3}); reference {} ± {} ms",
                r.certificates,
                trials,
                r.verification_latency_ms.median,
                r.verification_latency_ms.mad,
                r.reference_median_verification_ms,
                r.reference_dispersion_ms
            );
            emit(ctx, &r, out.as_deref())
        }
        BenchCmd::Compare {
            seed,
            episodes,
            runs,
            tampers,
            out,
        } => {
            if runs == 0 {
                return Err(fail(EXIT_USAGE, "--runs must be at least 1"));
            }
            let r = run_experiment(&CompareConfig {
                seed,
                episodes,
                runs,
                tampers_per_run: tampers,
                ..CompareConfig::default()
            })?;
            eprintln!(
                "retention {} / {}; veto {} / {}; recovery {} / {}; overhead {} ms",
                r.governed.alignment_retention_pct,
                r.baseline.alignment_retention_pct,
                r.governed.veto_rate_pct,
                r.baseline.veto_rate_pct,
                r.governed.recovery_episodes,
                r.baseline.recovery_episodes,
                r.median_publish_overhead_ms
            );
            emit(ctx, &r, out.as_deref())
        }
    }
}

fn emit<T: Serialize>(ctx: &Ctx, value: &T, out: Option<&Path>) -> anyhow::Result<u8> {
    match out {
        Some(p) => write_json(p, value, ctx.pretty)?,
        None => ctx.print(value)?,
    }
    Ok(0)
}

fn status(ctx: &Ctx) -> anyhow::Result<u8> {
    let state = match connect(ctx)? {
        Some(mut client) => match client.request(&DaemonRequest::Status)? {
            DaemonResponse::Status { state } => state,
            other => return Err(fail(1, format!("unexpected reply {other:?}"))),
        },
        None => {
            let sd = ctx.state()?;
            let _guard = sd.writer_lock()?;
            sd.gate(None)?.state()
        }
    };
    ctx.print(&state)?;
    Ok(0)
}
