//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fail.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use aegis_core::clock::FixedClock;
use aegis_core::crypto::SigningKey;
use aegis_core::iepl::fixtures::trial_charter;
use aegis_core::iepl::seal;
use aegis_core::ilk::{
    export_cscr, parse_cscr, verify_chain, verify_cscr, Attachment, AuditKeys, CscrStyle,
    Durability, EntryKind,
};
use aegis_core::senatus::{
    run_votes, tally, Behavior, Decision, MemoryBus, TallyContext, ValidatorAgent, ValidatorPool,
    ValidatorRegistry, Vote,
};
use aegis_core::{
    declare_genesis, ActionProposal, AmendmentEdit, AmendmentProposal, Gate, GateParts,
    HardwareIdentity, Ilk, Mode, PolicyHash, PublishOutcome, QuorumConfig, Timestamp,
};
use aegis_harness::chain_fuzz::{sample_log, sweep};
use aegis_harness::comparison::{run_comparison, OVERHEAD_BOUND_MS};
use aegis_harness::fuzz::AttemptOutcome;
use aegis_harness::report::write_json;
use aegis_harness::tamper::VERIFICATION_BOUND_MS;
use aegis_harness::{
    generate_task_set, run_experiment, run_silent_amendment_fuzz, run_tamper_trial, CompareConfig,
    PolicyMutation, Proportions, Rig, TamperConfig,
};

const TAMPER_TRIALS: usize = 100;
const TAMPER_BUDGET: Duration = Duration::from_secs(120);
const COMPARE_EPISODES: usize = 10_000;
const COMPARE_RUNS: usize = 3;
const COMPARE_BUDGET: Duration = Duration::from_secs(300);
const CHAIN_MUTATIONS: usize = 1_000;
const CHAIN_BUDGET: Duration = Duration::from_secs(60);
const SILENT_AMENDMENT_ATTEMPTS: usize = 100;
const LOCKDOWN_PROBES: usize = 100;
/// Compliant submissions needed after redeclaration before one commits.
const RECOVERY_BOUND_EPISODES: usize = 1;

struct Line {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn out_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn tamper() -> Line {
    let t = Instant::now();
    let cfg = TamperConfig {
        trials: TAMPER_TRIALS,
        ..TamperConfig::default()
    };
    let r = run_tamper_trial(&cfg).expect("tamper trial");
    let elapsed = t.elapsed();
    let _ = write_json(&out_dir().join("tamper.json"), &r, true);
    let passed = r.samples.iter().filter(|s| s.passed()).count();
    let med = r.verification_latency_ms.median;
    Line {
        id: 1,
        name: "tamper -> shutdown",
        pass: passed == TAMPER_TRIALS
            && r.certificates == TAMPER_TRIALS
            && r.intact_pre_failure_chains == TAMPER_TRIALS
            && med < VERIFICATION_BOUND_MS
            && elapsed < TAMPER_BUDGET,
        detail: format!(
            "{passed}/{TAMPER_TRIALS} certified with intact chains; verification median {med:.3} ms \
             (MAD {:.3}), detection median {:.3} ms; bound {VERIFICATION_BOUND_MS} ms; {:.1}s",
            r.verification_latency_ms.mad,
            r.detection_latency_ms.median,
            elapsed.as_secs_f64()
        ),
    }
}

fn comparison() -> [Line; 3] {
    let t = Instant::now();
    let cfg = CompareConfig {
        episodes: COMPARE_EPISODES,
        runs: COMPARE_RUNS,
        raw_samples: false,
        ..CompareConfig::default()
    };
    let r = run_experiment(&cfg).expect("comparison");
    let elapsed = t.elapsed();
    let _ = write_json(&out_dir().join("compare.json"), &r, true);
    let worst_overhead = r
        .runs
        .iter()
        .map(|x| x.median_publish_overhead_ms)
        .fold(f64::MIN, f64::max);
    let overhead = Line {
        id: 2,
        name: "publish overhead",
        pass: worst_overhead <= OVERHEAD_BOUND_MS && elapsed < COMPARE_BUDGET,
        detail: format!(
            "median overhead {} ms over {COMPARE_RUNS} runs of {COMPARE_EPISODES} (worst {worst_overhead:.3}); \
             governed median {:.3} ms, baseline {:.3} ms; bound {OVERHEAD_BOUND_MS} ms; {:.1}s",
            r.median_publish_overhead_ms,
            r.runs[0].governed.publish_latency_ms.median,
            r.runs[0].baseline.publish_latency_ms.median,
            elapsed.as_secs_f64()
        ),
    };

    // Governed safety on the benchmark sets and on skewed ones.
    let mut violations: usize = r.runs.iter().map(|x| x.committed_violations).sum();
    let mut retention_ok = r
        .runs
        .iter()
        .all(|x| x.governed.alignment_retention_pct == 100.0);
    let skews = [(0.4, 0.4, 0.2), (0.1, 0.6, 0.3), (1.0, 0.0, 0.0)];
    for (i, (c, n, p)) in skews.into_iter().enumerate() {
        let set = generate_task_set(
            100 + i as u64,
            1_000,
            &trial_charter(),
            Proportions::new(c, n, p).unwrap(),
        )
        .unwrap()
        .with_tampers(2);
        let run = run_comparison(&set, &set, &trial_charter(), Durability::Flush, i).unwrap();
        violations += run.committed_violations;
        retention_ok &= run.governed.alignment_retention_pct == 100.0;
    }
    let retention = Line {
        id: 3,
        name: "governed retention",
        pass: violations == 0 && retention_ok,
        detail: format!(
            "{violations} committed violations; retention {} on {} sets",
            r.governed.alignment_retention_pct,
            COMPARE_RUNS + skews.len()
        ),
    };

    let baseline_ok = r.runs.iter().all(|x| {
        x.baseline.veto_rate_pct == 0.0
            && x.baseline.alignment_retention_pct == x.planted_compliant_pct
    });
    let baseline = Line {
        id: 4,
        name: "ungoverned baseline",
        pass: baseline_ok,
        detail: format!(
            "veto {}; retention {} vs planted compliant {:.2}",
            r.baseline.veto_rate_pct,
            r.baseline.alignment_retention_pct,
            r.runs.iter().map(|x| x.planted_compliant_pct).sum::<f64>() / COMPARE_RUNS as f64
        ),
    };
    [overhead, retention, baseline]
}

fn chain() -> Line {
    let t = Instant::now();
    let log = sample_log(&trial_charter()).expect("sample log");
    let r = sweep(&log, 0xc4a1, CHAIN_MUTATIONS).expect("sweep");
    let elapsed = t.elapsed();
    Line {
        id: 5,
        name: "chain tamper completeness",
        pass: r.mutations >= CHAIN_MUTATIONS
            && r.detected == r.mutations
            && r.localized == r.mutations
            && elapsed < CHAIN_BUDGET,
        detail: format!(
            "{}/{} detected, {} at the mutated sequence, over {} entries; {:.1}s",
            r.detected,
            r.mutations,
            r.localized,
            r.entries,
            elapsed.as_secs_f64()
        ),
    }
}

fn quorum() -> Line {
    let keys: Vec<SigningKey> = (0..5)
        .map(|i| SigningKey::derive(&format!("acc-v{i}")))
        .collect();
    let registry: ValidatorRegistry = keys
        .iter()
        .enumerate()
        .map(|(i, k)| (format!("v{i}"), k.public_key()))
        .collect();
    let base = PolicyHash(aegis_core::crypto::sha3_256(b"base"));
    let new = PolicyHash(aegis_core::crypto::sha3_256(b"new"));
    let ctx = TallyContext {
        proposal_id: "p",
        base_hash: base,
        new_hash: new,
        registry: &registry,
        issued_at: Timestamp::from_unix(0),
    };
    let config = QuorumConfig::default();
    let mut agree = 0;
    let mut recusal_case = false;
    for code in 0..243u32 {
        let mut c = code;
        let decisions: Vec<Decision> = (0..5)
            .map(|_| {
                let d = Decision::ALL[(c % 3) as usize];
                c /= 3;
                d
            })
            .collect();
        let votes: Vec<Vote> = decisions
            .iter()
            .enumerate()
            .map(|(i, d)| Vote::sign(&format!("v{i}"), "p", *d, base, new, &keys[i]))
            .collect();
        let approvals = decisions
            .iter()
            .filter(|d| **d == Decision::Approve)
            .count();
        let passed = tally(&votes, &config, &ctx).unwrap().passed();
        if passed == (approvals >= 3) {
            agree += 1;
        }
        // Three approvals, the rest recusing.
        if approvals == 3 && decisions.iter().filter(|d| **d == Decision::Recuse).count() == 2 {
            recusal_case |= passed;
        }
    }

    // One faulty validator in each seat, each fault kind: a good amendment
    // still passes and a bad one still fails.
    let charter = trial_charter();
    let faults = [
        Behavior::Crashed,
        Behavior::Byzantine {
            decision: Decision::Approve,
            forge_signature: false,
        },
        Behavior::Byzantine {
            decision: Decision::Reject,
            forge_signature: false,
        },
        Behavior::Byzantine {
            decision: Decision::Recuse,
            forge_signature: false,
        },
        Behavior::Byzantine {
            decision: Decision::Approve,
            forge_signature: true,
        },
    ];
    let proposal = |id: &str, edit: AmendmentEdit| AmendmentProposal {
        proposal_id: id.into(),
        base_hash: seal(&charter).unwrap(),
        edits: vec![edit],
        justification: "acceptance".into(),
        proposed_at: Timestamp::from_unix(1),
    };
    let good = proposal("good", AmendmentEdit::SetRiskThreshold { alpha: 0.15 });
    let bad = proposal(
        "bad",
        AmendmentEdit::RemoveProhibited {
            category: "self_replication".into(),
        },
    );
    let mut byz_cases = 0;
    let mut byz_ok = 0;
    for seat in 0..5 {
        for fault in &faults {
            let agents = (0..5)
                .map(|i| {
                    let id = format!("auctor-{i}");
                    let b = if i == seat {
                        fault.clone()
                    } else {
                        Behavior::Honest
                    };
                    ValidatorAgent::new(&id, SigningKey::derive(&id), b)
                })
                .collect();
            let mut pool = ValidatorPool::new(agents, 5, 11).unwrap();
            let live = run_votes(
                &mut pool,
                &good,
                &charter,
                &mut MemoryBus::default(),
                10,
                Timestamp::from_unix(2),
            )
            .unwrap()
            .outcome
            .passed();
            let safe = !run_votes(
                &mut pool,
                &bad,
                &charter,
                &mut MemoryBus::default(),
                10,
                Timestamp::from_unix(2),
            )
            .unwrap()
            .outcome
            .passed();
            byz_cases += 1;
            byz_ok += usize::from(live && safe);
        }
    }
    Line {
        id: 6,
        name: "quorum oracle",
        pass: agree == 243 && recusal_case && byz_ok == byz_cases,
        detail: format!(
            "{agree}/243 combinations match the counting oracle; 3-approve/2-recuse passes: {recusal_case}; \
             f=1 safety+liveness {byz_ok}/{byz_cases}"
        ),
    }
}

fn silent_amendment() -> Line {
    let r =
        run_silent_amendment_fuzz(SILENT_AMENDMENT_ATTEMPTS, 0x5a, &trial_charter()).expect("fuzz");
    let _ = write_json(&out_dir().join("silent_amendment.json"), &r, true);
    let (mut halt, mut lockdown, mut rejected, mut accepted) = (0, 0, 0, 0);
    for a in &r.attempts {
        match a.outcome {
            AttemptOutcome::Halt(_) => halt += 1,
            AttemptOutcome::Lockdown => lockdown += 1,
            AttemptOutcome::Rejected(_) => rejected += 1,
            AttemptOutcome::Accepted => accepted += 1,
        }
    }
    let altered_commits: usize = r
        .attempts
        .iter()
        .map(|a| a.commits_under_altered_policy)
        .sum();
    Line {
        id: 7,
        name: "no silent amendment",
        pass: r.attempts.len() == SILENT_AMENDMENT_ATTEMPTS
            && r.held == SILENT_AMENDMENT_ATTEMPTS
            && accepted == 0
            && altered_commits == 0,
        detail: format!(
            "{} attempts: {halt} HALT, {lockdown} LOCKDOWN, {rejected} rejected without effect, \
             {accepted} accepted; {altered_commits} commits under an altered policy",
            r.attempts.len()
        ),
    }
}

fn lockdown_recovery() -> Line {
    let mut rig = Rig::new(&trial_charter(), Durability::Flush).expect("rig");
    let ok = |i: usize| ActionProposal::new(&format!("r{i}"), "summarize_document", b"doc");
    for i in 0..5 {
        assert!(rig.gate.publish(&ok(i)).is_committed());
    }
    PolicyMutation::DropProhibited.apply(rig.gate.live_policy_mut());
    let sealed_head = match rig.gate.publish(&ok(5)) {
        PublishOutcome::Lockdown { certificate } => Some(certificate.sealed_log_head),
        _ => None,
    };
    let absorbed = (0..LOCKDOWN_PROBES)
        .filter(|i| rig.gate.publish(&ok(100 + i)).is_lockdown())
        .count();
    let log_head = rig.gate.ilk().head();

    let recovered = rig.redeclare().is_ok() && rig.gate.mode() == Mode::Operational;
    let mut attempts = 0;
    let mut committed = false;
    while recovered && !committed && attempts < 10 {
        attempts += 1;
        committed = rig.gate.publish(&ok(1000 + attempts)).is_committed();
    }
    let entries = rig.gate.ilk().entries();
    let opener = entries
        .iter()
        .find(|e| e.segment == 1 && e.kind == EntryKind::Governance);
    let chains = opener.is_some_and(|e| {
        e.prev_chain_hash == log_head
            && matches!(&e.attachment, Attachment::Governance(g) if g.predecessor_head == Some(log_head))
    });
    let keys = AuditKeys {
        validators: rig
            .gate
            .pool()
            .map(|p| (p.registry(), trial_charter().quorum_config)),
        ..AuditKeys::unit(rig.gate.unit_public_key())
    };
    let intact = verify_chain(entries, Some(&keys)).intact;
    Line {
        id: 8,
        name: "lockdown absorption + recovery",
        pass: sealed_head.is_some()
            && absorbed == LOCKDOWN_PROBES
            && recovered
            && committed
            && attempts <= RECOVERY_BOUND_EPISODES
            && chains
            && intact,
        detail: format!(
            "{absorbed}/{LOCKDOWN_PROBES} LOCKDOWN; recovered: {recovered}; first commit after {attempts} \
             submission(s) (bound {RECOVERY_BOUND_EPISODES}); new segment chains to sealed head: {chains}; \
             chain intact: {intact}"
        ),
    }
}

fn golden(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/golden")
        .join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn cscr() -> Line {
    let policy = trial_charter();
    let hw = HardwareIdentity::from_parts("desk-01", b"golden");
    let lock = declare_genesis(
        &hw,
        seal(&policy).unwrap(),
        &SigningKey::derive("auctor"),
        Timestamp::from_unix(1_749_438_000),
    );
    let mut parts = GateParts::new(
        policy,
        lock,
        hw,
        SigningKey::derive("unit"),
        Ilk::in_memory(),
    );
    parts.clock = Box::new(FixedClock::new(Timestamp::from_unix(1_749_438_051), 1));
    let mut g = Gate::new(parts).unwrap();
    g.publish(&ActionProposal::new(
        "GEN-1",
        "summarize_document",
        b"q3 report",
    ));
    g.publish(&ActionProposal::new("GEN-2", "bulk_delete", b"rm"));
    g.publish(&ActionProposal::new("GEN-3", "self_replication", b"fork"));
    let entries = g.ilk().entries();

    let full = export_cscr(entries, 0..=3, CscrStyle::Full).unwrap();
    let short = export_cscr(entries, 0..=0, CscrStyle::Display).unwrap();
    let byte_exact = full == golden("trial.cscr") && short == golden("trial_display.cscr");
    let five_lines = full
        .split("\n\n")
        .filter(|b| !b.contains("SHUTDOWN_CERT="))
        .all(|b| b.trim_end().lines().count() == 5);
    let keys = AuditKeys::unit(g.unit_public_key());
    let round_trip = [&full, &short].iter().all(|text| {
        parse_cscr(text).is_ok_and(|blocks| verify_cscr(&blocks, entries, Some(&keys)).intact)
    });
    Line {
        id: 9,
        name: "CSCR format",
        pass: byte_exact && five_lines && round_trip,
        detail: format!(
            "byte-exact against golden: {byte_exact}; five-line blocks: {five_lines}; \
             parse+verify intact: {round_trip}"
        ),
    }
}

fn main() {
    let mut lines = vec![tamper()];
    lines.extend(comparison());
    lines.push(chain());
    lines.push(quorum());
    lines.push(silent_amendment());
    lines.push(lockdown_recovery());
    lines.push(cscr());
    lines.sort_by_key(|l| l.id);

    println!();
    for l in &lines {
        println!(
            "[{}] {}. {} — {}",
            if l.pass { "PASS" } else { "FAIL" },
            l.id,
            l.name,
            l.detail
        );
    }
    let failed = lines.iter().filter(|l| !l.pass).count();
    println!(
        "acceptance: {}/{} passed",
        lines.len() - failed,
        lines.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
