//! Attempts to change the governing policy without a quorum.

use aegis_core::ekm::GateError;
use aegis_core::iepl::QuorumConfig;
use aegis_core::ilk::{verify_chain, Attachment, AuditKeys, ChainedLogEntry, Durability};
use aegis_core::senatus::{
    run_votes, Decision, MemoryBus, QuorumCertificate, TallyOutcome, ValidatorRegistry, Vote,
};
use aegis_core::state::{StateError, CHARTER_FILE, HISTORY_FILE, LOCK_FILE};
use aegis_core::{
    canonical, declare_genesis, ActionProposal, AmendmentEdit, AmendmentProposal, GenesisLock,
    PolicyDocument, PolicyHash, PublishOutcome, SigningKey, Timestamp,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mutation::PolicyMutation;
use crate::rig::Rig;
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attack {
    /// Edit the charter file and reboot.
    FileEdit,
    /// Edit the charter and the lock's policy hash without re-signing.
    FileEditLockHash,
    /// Edit the charter and re-sign the lock with a stranger's key.
    ForeignKeyLock,
    /// Edit the charter and declare a fresh root with the real authority key.
    RivalRoot,
    /// Redeclare with a certificate whose votes are not validator-signed.
    ForgedCertificate,
    /// Edit the policy in memory while running.
    InMemoryEdit,
    /// Propose an amendment against a policy hash that is not in force.
    StaleHashAmendment,
    /// Hand the running gate a forged redeclaration.
    InMemoryForgedRedeclaration,
}

impl Attack {
    pub const ALL: [Attack; 8] = [
        Attack::FileEdit,
        Attack::FileEditLockHash,
        Attack::ForeignKeyLock,
        Attack::RivalRoot,
        Attack::ForgedCertificate,
        Attack::InMemoryEdit,
        Attack::StaleHashAmendment,
        Attack::InMemoryForgedRedeclaration,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttemptOutcome {
    Halt(String),
    Lockdown,
    Rejected(String),
    /// The altered policy came into force. Always a failure.
    Accepted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: usize,
    pub attack: Attack,
    pub mutation: PolicyMutation,
    pub outcome: AttemptOutcome,
    pub commits_under_altered_policy: usize,
    /// Every policy-hash change in the log is carried by a certified
    /// governance entry.
    pub log_scan_clean: bool,
}

impl AttemptRecord {
    pub fn held(&self) -> bool {
        !matches!(self.outcome, AttemptOutcome::Accepted)
            && self.commits_under_altered_policy == 0
            && self.log_scan_clean
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FuzzReport {
    pub attempts: Vec<AttemptRecord>,
    pub held: usize,
}

/// First sequence at which the log's policy hash changes without a
/// governance entry carrying a valid certificate from `current` to the new hash.
pub fn uncertified_policy_change(
    entries: &[ChainedLogEntry],
    validators: &ValidatorRegistry,
    quorum: &QuorumConfig,
) -> Option<u64> {
    let mut current = entries.first()?.policy_hash;
    for e in entries {
        if e.policy_hash == current {
            continue;
        }
        match &e.attachment {
            Attachment::Governance(g)
                if g.certificate.base_hash == current
                    && g.certificate.new_hash == e.policy_hash
                    && g.certificate.verify(validators, quorum).is_ok() =>
            {
                current = e.policy_hash;
            }
            _ => return Some(e.sequence),
        }
    }
    None
}

fn write_file<T: Serialize>(rig: &Rig, name: &str, value: &T) -> Result<(), HarnessError> {
    let mut bytes =
        canonical::to_canonical_bytes(value).map_err(|e| HarnessError::Setup(e.to_string()))?;
    bytes.push(b'\n');
    std::fs::write(rig.state.path(name), bytes).map_err(|e| HarnessError::Setup(e.to_string()))
}

fn probe(i: usize) -> ActionProposal {
    ActionProposal::new(&format!("probe-{i}"), "summarize_document", b"probe")
}

fn forged_certificate(
    proposal_id: &str,
    base: PolicyHash,
    new: PolicyHash,
    ids: &[String],
) -> QuorumCertificate {
    let votes: Vec<Vote> = ids
        .iter()
        .take(3)
        .map(|id| {
            let key = SigningKey::derive(&format!("impostor:{id}"));
            Vote::sign(id, proposal_id, Decision::Approve, base, new, &key)
        })
        .collect();
    QuorumCertificate {
        proposal_id: proposal_id.into(),
        base_hash: base,
        new_hash: new,
        approving_votes: votes,
        issued_at: Timestamp::now(),
    }
}

fn forged_redeclaration(rig: &Rig, altered: PolicyHash) -> Result<GenesisLock, HarnessError> {
    let current = rig.gate.lock().clone();
    let ids: Vec<String> = rig
        .gate
        .pool()
        .map(|p| p.active().to_vec())
        .unwrap_or_default();
    let cert = forged_certificate("forged", current.policy_hash, altered, &ids);
    let mut lock = declare_genesis(
        &current.hardware,
        altered,
        &SigningKey::derive("scratch"),
        Timestamp::now(),
    );
    lock.redeclaration_of = Some(current.digest());
    lock.quorum_certificate = Some(cert);
    let auctor = rig
        .state
        .auctor_key()
        .map_err(|e| HarnessError::Setup(e.to_string()))?;
    lock.resign(&auctor);
    Ok(lock)
}

fn reboot_outcome(rig: &mut Rig) -> AttemptOutcome {
    match rig.state.gate(None) {
        Err(StateError::Gate(GateError::GenesisHalt(r))) => AttemptOutcome::Halt(r.to_string()),
        Err(e) => AttemptOutcome::Rejected(e.to_string()),
        Ok(g) => {
            rig.gate = g;
            AttemptOutcome::Accepted
        }
    }
}

fn attempt(
    attempt: usize,
    attack: Attack,
    mutation: PolicyMutation,
    charter: &PolicyDocument,
) -> Result<AttemptRecord, HarnessError> {
    let mut rig = Rig::new(charter, Durability::Flush)?;
    for i in 0..3 {
        rig.gate.publish(&probe(i));
    }
    let original = rig.gate.sealed_policy().clone();
    let mut altered = original.clone();
    mutation.apply(&mut altered);
    let altered_hash = aegis_core::eva::observed_policy_hash(&altered);
    let lock = rig.gate.lock().clone();

    let outcome = match attack {
        Attack::FileEdit => {
            write_file(&rig, CHARTER_FILE, &altered)?;
            reboot_outcome(&mut rig)
        }
        Attack::FileEditLockHash => {
            write_file(&rig, CHARTER_FILE, &altered)?;
            let mut l = lock.clone();
            l.policy_hash = altered_hash;
            write_file(&rig, LOCK_FILE, &l)?;
            reboot_outcome(&mut rig)
        }
        Attack::ForeignKeyLock => {
            write_file(&rig, CHARTER_FILE, &altered)?;
            let mut l = lock.clone();
            l.policy_hash = altered_hash;
            l.resign(&SigningKey::derive(&format!("intruder-{attempt}")));
            write_file(&rig, LOCK_FILE, &l)?;
            reboot_outcome(&mut rig)
        }
        Attack::RivalRoot => {
            write_file(&rig, CHARTER_FILE, &altered)?;
            let auctor = rig
                .state
                .auctor_key()
                .map_err(|e| HarnessError::Setup(e.to_string()))?;
            let l = declare_genesis(&lock.hardware, altered_hash, &auctor, Timestamp::now());
            write_file(&rig, LOCK_FILE, &l)?;
            reboot_outcome(&mut rig)
        }
        Attack::ForgedCertificate => {
            let l = forged_redeclaration(&rig, altered_hash)?;
            write_file(&rig, CHARTER_FILE, &altered)?;
            write_file(&rig, HISTORY_FILE, &vec![lock.clone()])?;
            write_file(&rig, LOCK_FILE, &l)?;
            reboot_outcome(&mut rig)
        }
        Attack::InMemoryEdit => {
            *rig.gate.live_policy_mut() = altered.clone();
            match rig.gate.publish(&probe(100)) {
                PublishOutcome::Lockdown { .. } => AttemptOutcome::Lockdown,
                _ => AttemptOutcome::Accepted,
            }
        }
        Attack::StaleHashAmendment => {
            let proposal = AmendmentProposal {
                proposal_id: format!("stale-{attempt}"),
                base_hash: altered_hash,
                edits: vec![AmendmentEdit::SetRiskThreshold { alpha: 0.5 }],
                justification: "stale base".into(),
                proposed_at: Timestamp::now(),
            };
            let pool = rig.gate.pool_mut().expect("rig has a pool");
            match run_votes(
                pool,
                &proposal,
                &original,
                &mut MemoryBus::default(),
                10,
                Timestamp::now(),
            ) {
                Ok(r) => match r.outcome {
                    TallyOutcome::Rejected(c) => {
                        AttemptOutcome::Rejected(format!("{} approvals", c.approve))
                    }
                    TallyOutcome::Passed(_) => AttemptOutcome::Accepted,
                },
                Err(e) => AttemptOutcome::Rejected(e.to_string()),
            }
        }
        Attack::InMemoryForgedRedeclaration => {
            let l = forged_redeclaration(&rig, altered_hash)?;
            match rig.gate.adopt_redeclaration(l, altered.clone()) {
                Ok(_) => AttemptOutcome::Accepted,
                Err(e) => AttemptOutcome::Rejected(e.to_string()),
            }
        }
    };

    // Whatever state the unit is left in, keep submitting work.
    let mut commits_under_altered = 0;
    for i in 0..3 {
        if rig.gate.publish(&probe(200 + i)).is_committed()
            && rig.gate.ilk().entries().last().map(|e| e.policy_hash) == Some(altered_hash)
        {
            commits_under_altered += 1;
        }
    }
    let entries = rig.gate.ilk().entries();
    let registry = rig.gate.pool().map(|p| p.registry()).unwrap_or_default();
    let log_scan_clean = uncertified_policy_change(entries, &registry, &charter.quorum_config)
        .is_none()
        && verify_chain(entries, Some(&AuditKeys::unit(rig.gate.unit_public_key()))).intact;

    Ok(AttemptRecord {
        attempt,
        attack,
        mutation,
        outcome,
        commits_under_altered_policy: commits_under_altered,
        log_scan_clean,
    })
}

/// First mutation from `start` (cyclically) that leaves `charter` well-formed,
/// so attacks are judged on authority rather than on parse errors.
fn well_formed_mutation(
    start: u64,
    charter: &PolicyDocument,
) -> Result<PolicyMutation, HarnessError> {
    (0..PolicyMutation::ALL.len())
        .map(|k| PolicyMutation::from_index(start.wrapping_add(k as u64)))
        .find(|m| {
            let mut d = charter.clone();
            m.apply(&mut d);
            d.validate().is_ok()
        })
        .ok_or_else(|| HarnessError::Config("no mutation keeps the charter well-formed".into()))
}

/// `attempts` attacks cycling through [`Attack::ALL`], each on a fresh unit
/// with a seeded policy mutation.
pub fn run_silent_amendment_fuzz(
    attempts: usize,
    seed: u64,
    charter: &PolicyDocument,
) -> Result<FuzzReport, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(attempts);
    for i in 0..attempts {
        let attack = Attack::ALL[i % Attack::ALL.len()];
        let mutation = well_formed_mutation(rng.gen(), charter)?;
        records.push(attempt(i, attack, mutation, charter)?);
    }
    Ok(FuzzReport {
        held: records.iter().filter(|r| r.held()).count(),
        attempts: records,
    })
}
