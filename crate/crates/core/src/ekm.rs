//! The publish gate.
//!
//! Every action passes one serialized path: integrity check, validation,
//! proof, durable append. Ordinary denials, deferrals and risk excess are
//! vetoed and logged; prohibited operations, integrity drift and proof
//! failures lock the gate down. Lockdown is absorbing until a
//! quorum-certified redeclaration is verified.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{self, Transcript};
use crate::clock::{Clock, SystemClock, Timestamp};
use crate::crypto::{sha3_256, Digest32, PolicyHash, PublicKey, Signature, SigningKey};
use crate::eva::{
    check_integrity, observed_policy_hash, ActionProposal, Eva, IntegrityReport, Verdict,
    VerdictBasis,
};
use crate::genesis::{
    verify_genesis, GenesisLock, GenesisVerdict, HaltReason, HardwareIdentity, TrustAnchors,
};
use crate::iepl::{seal, Effect, IeplError, PolicyDocument};
use crate::ilk::{
    Attachment, DecisionRecord, EkmResult, EntryDraft, EvaResult, GovernanceRecord, Ilk, IlkError,
    RotationRecord, SealRecord, ShutdownRecord,
};
use crate::poc::{BackendRegistry, StatementInputs};
use crate::senatus::{Message, MessageBus, ValidatorPool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Operational,
    Lockdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VetoReason {
    Noncompliant,
    RiskExceeded,
    Deferred,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
#[allow(clippy::large_enum_variant)]
pub enum PublishOutcome {
    Committed {
        chain_hash: Digest32,
    },
    Vetoed {
        matched_rule: String,
        reason: VetoReason,
        chain_hash: Digest32,
    },
    Lockdown {
        certificate: ShutdownCertificate,
    },
}

impl PublishOutcome {
    pub fn is_committed(&self) -> bool {
        matches!(self, PublishOutcome::Committed { .. })
    }

    pub fn is_lockdown(&self) -> bool {
        matches!(self, PublishOutcome::Lockdown { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            PublishOutcome::Committed { .. } => "COMMITTED",
            PublishOutcome::Vetoed { .. } => "VETOED",
            PublishOutcome::Lockdown { .. } => "LOCKDOWN",
        }
    }
}

/// What triggered a lockdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BreachEvidence {
    Integrity(IntegrityReport),
    Prohibited {
        action_id: String,
        category: String,
    },
    ProofFailure {
        action_id: String,
        statement_digest: Digest32,
    },
    LogDivergence {
        expected_head: Digest32,
    },
    NonAttestedTraffic {
        consecutive: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShutdownCertificate {
    pub breach_description: String,
    pub evidence: BreachEvidence,
    /// Log head at the moment of failure; the terminal shutdown entry links to it.
    pub sealed_log_head: Digest32,
    pub policy_hash_at_breach: PolicyHash,
    pub issued_at: Timestamp,
    pub broadcast_targets: Vec<String>,
    pub unit_signature: Signature,
}

#[derive(Serialize)]
struct UnsignedCertificate<'a> {
    breach_description: &'a str,
    evidence: &'a BreachEvidence,
    sealed_log_head: &'a Digest32,
    policy_hash_at_breach: &'a PolicyHash,
    issued_at: &'a Timestamp,
    broadcast_targets: &'a [String],
}

impl ShutdownCertificate {
    fn payload(&self) -> Vec<u8> {
        let body = canonical::to_canonical_bytes(&UnsignedCertificate {
            breach_description: &self.breach_description,
            evidence: &self.evidence,
            sealed_log_head: &self.sealed_log_head,
            policy_hash_at_breach: &self.policy_hash_at_breach,
            issued_at: &self.issued_at,
            broadcast_targets: &self.broadcast_targets,
        })
        .expect("certificate is serializable");
        let mut t = Transcript::new("aegis/shutdown-certificate/v1");
        t.push(&body);
        t.into_bytes()
    }

    pub fn verify(&self, unit_key: &PublicKey) -> bool {
        unit_key.verify(&self.payload(), &self.unit_signature)
    }

    pub fn digest(&self) -> Digest32 {
        sha3_256(&canonical::to_canonical_bytes(self).expect("certificate is serializable"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateState {
    pub mode: Mode,
    pub decisions_count: u64,
    pub lockdown_reason: Option<String>,
    pub lock_digest: Digest32,
    pub policy_hash: PolicyHash,
    pub log_head: Digest32,
    pub segment: u32,
    pub epoch: u64,
}

/// Per-stage durations of the last publish call.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub integrity: Duration,
    /// Re-verification of the last proof against the observed policy hash,
    /// run only when integrity fails.
    pub challenge: Duration,
    pub validate: Duration,
    pub prove: Duration,
    pub append: Duration,
    pub total: Duration,
}

/// Where to panic inside `publish`, for crash-injection tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailPoint {
    AfterValidate,
    AfterProve,
    AfterAppend,
}

#[derive(Debug, Clone)]
pub struct GateConfig {
    /// Re-read the on-disk log tail every this many decisions (0 = never).
    pub integrity_interval: u64,
    pub fail_point: Option<FailPoint>,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            integrity_interval: 100,
            fail_point: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum GateError {
    #[error("genesis verification halted: {0:?}")]
    GenesisHalt(HaltReason),
    #[error("gate is not in lockdown")]
    NotLocked,
    #[error("redeclaration rejected: {0}")]
    RedeclarationInvalid(String),
    #[error(transparent)]
    Policy(#[from] IeplError),
    #[error(transparent)]
    Log(#[from] IlkError),
}

/// Everything a gate is built from. Optional parts have defaults.
pub struct GateParts {
    pub policy: PolicyDocument,
    pub lock: GenesisLock,
    pub hardware: HardwareIdentity,
    pub anchors: TrustAnchors,
    pub unit_key: SigningKey,
    pub ilk: Ilk,
    pub clock: Box<dyn Clock>,
    pub eva: Eva,
    pub backends: BackendRegistry,
    pub pool: Option<ValidatorPool>,
    pub bus: Option<Box<dyn MessageBus + Send>>,
    pub config: GateConfig,
}

impl GateParts {
    pub fn new(
        policy: PolicyDocument,
        lock: GenesisLock,
        hardware: HardwareIdentity,
        unit_key: SigningKey,
        ilk: Ilk,
    ) -> Self {
        Self {
            anchors: TrustAnchors {
                founding_key: Some(lock.auctor_public_key),
                genesis_digest: lock.redeclaration_of.is_none().then(|| lock.digest()),
                quorum: policy.quorum_config,
                ..TrustAnchors::default()
            },
            policy,
            lock,
            hardware,
            unit_key,
            ilk,
            clock: Box::new(SystemClock),
            eva: Eva::default(),
            backends: BackendRegistry::default(),
            pool: None,
            bus: None,
            config: GateConfig::default(),
        }
    }
}

pub struct Gate {
    live: PolicyDocument,
    sealed: PolicyDocument,
    lock: GenesisLock,
    hardware: HardwareIdentity,
    anchors: TrustAnchors,
    unit_key: SigningKey,
    ilk: Ilk,
    clock: Box<dyn Clock>,
    eva: Eva,
    backends: BackendRegistry,
    pool: Option<ValidatorPool>,
    bus: Option<Box<dyn MessageBus + Send>>,
    config: GateConfig,
    mode: Mode,
    decisions_count: u64,
    certificate: Option<ShutdownCertificate>,
    timings: StageTimings,
}

impl std::fmt::Debug for Gate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gate")
            .field("state", &self.state())
            .finish_non_exhaustive()
    }
}

enum Route {
    Commit,
    Veto(VetoReason),
    Prohibited,
}

impl Gate {
    /// Verifies the lock against the hardware and policy before accepting
    /// any work. A log ending in a shutdown entry reopens in lockdown.
    pub fn new(parts: GateParts) -> Result<Self, GateError> {
        let hash = seal(&parts.policy)?;
        if let GenesisVerdict::Halt(reason) =
            verify_genesis(&parts.lock, &parts.hardware, &hash, &parts.anchors)
        {
            return Err(GateError::GenesisHalt(reason));
        }
        let decisions_count = parts
            .ilk
            .entries()
            .iter()
            .filter(|e| e.kind == crate::ilk::EntryKind::Decision)
            .count() as u64;
        let certificate = match parts.ilk.entries().last().map(|e| &e.attachment) {
            Some(Attachment::Shutdown(s)) if parts.ilk.is_sealed() => Some(s.certificate.clone()),
            _ => None,
        };
        let mut pool = parts.pool;
        if let Some(p) = &mut pool {
            p.rotate_epoch(decisions_count, parts.policy.quorum_config.epoch_length);
        }
        Ok(Self {
            live: parts.policy.clone(),
            sealed: parts.policy,
            lock: parts.lock,
            hardware: parts.hardware,
            anchors: parts.anchors,
            unit_key: parts.unit_key,
            ilk: parts.ilk,
            clock: parts.clock,
            eva: parts.eva,
            backends: parts.backends,
            pool,
            bus: parts.bus,
            config: parts.config,
            mode: if certificate.is_some() {
                Mode::Lockdown
            } else {
                Mode::Operational
            },
            decisions_count,
            certificate,
            timings: StageTimings::default(),
        })
    }

    pub fn state(&self) -> GateState {
        GateState {
            mode: self.mode,
            decisions_count: self.decisions_count,
            lockdown_reason: self
                .certificate
                .as_ref()
                .map(|c| c.breach_description.clone()),
            lock_digest: self.lock.digest(),
            policy_hash: self.lock.policy_hash,
            log_head: self.ilk.head(),
            segment: self.ilk.segment(),
            epoch: self.pool.as_ref().map_or(0, ValidatorPool::epoch),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn lock(&self) -> &GenesisLock {
        &self.lock
    }

    pub fn lock_history(&self) -> &[GenesisLock] {
        &self.anchors.prior_locks
    }

    /// The policy the current lock attests to.
    pub fn sealed_policy(&self) -> &PolicyDocument {
        &self.sealed
    }

    pub fn ilk(&self) -> &Ilk {
        &self.ilk
    }

    pub fn pool(&self) -> Option<&ValidatorPool> {
        self.pool.as_ref()
    }

    pub fn pool_mut(&mut self) -> Option<&mut ValidatorPool> {
        self.pool.as_mut()
    }

    pub fn certificate(&self) -> Option<&ShutdownCertificate> {
        self.certificate.as_ref()
    }

    pub fn unit_public_key(&self) -> PublicKey {
        self.unit_key.public_key()
    }

    pub fn last_timings(&self) -> StageTimings {
        self.timings
    }

    pub fn set_fail_point(&mut self, fp: Option<FailPoint>) {
        self.config.fail_point = fp;
    }

    /// Mutable access to the in-memory policy, bypassing governance. Exists
    /// for fault injection; any change is caught by the next integrity check.
    pub fn live_policy_mut(&mut self) -> &mut PolicyDocument {
        &mut self.live
    }

    pub fn live_policy(&self) -> &PolicyDocument {
        &self.live
    }

    fn fail(&self, at: FailPoint) {
        if self.config.fail_point == Some(at) {
            panic!("injected failure at {at:?}");
        }
    }

    pub fn publish(&mut self, action: &ActionProposal) -> PublishOutcome {
        let start = Instant::now();
        self.timings = StageTimings::default();
        let outcome = self.publish_inner(action, start);
        self.timings.total = start.elapsed();
        outcome
    }

    fn standing(&self) -> PublishOutcome {
        PublishOutcome::Lockdown {
            certificate: self
                .certificate
                .clone()
                .expect("lockdown carries a certificate"),
        }
    }

    fn publish_inner(&mut self, action: &ActionProposal, start: Instant) -> PublishOutcome {
        if self.mode == Mode::Lockdown {
            return self.standing();
        }
        let now = self.clock.now();

        let report = check_integrity(&self.live, &self.lock, now);
        if !report.intact {
            self.timings.integrity = start.elapsed();
            let t = Instant::now();
            let challenge = match self.challenge_last_proof(report.observed_hash) {
                Some(true) => "proof challenge passed",
                Some(false) => "proof challenge failed",
                None => "no proof to challenge",
            };
            self.timings.challenge = t.elapsed();
            let desc = format!(
                "policy hash drift: expected {} observed {}; {challenge}",
                report.expected_hash, report.observed_hash
            );
            return PublishOutcome::Lockdown {
                certificate: self.lockdown(&desc, BreachEvidence::Integrity(report)),
            };
        }
        let interval = self.config.integrity_interval;
        if interval > 0
            && self.decisions_count > 0
            && self.decisions_count.is_multiple_of(interval)
            && !self.ilk.disk_tail_matches().unwrap_or(false)
        {
            let expected_head = self.ilk.head();
            return PublishOutcome::Lockdown {
                certificate: self.lockdown(
                    "log file diverged from in-memory head",
                    BreachEvidence::LogDivergence { expected_head },
                ),
            };
        }
        self.timings.integrity = start.elapsed();

        let t = Instant::now();
        let verdict = match self
            .eva
            .validate_sealed(action, &self.live, self.lock.policy_hash)
        {
            Ok(v) => v,
            // Malformed input never reaches a rule; it is denied and logged.
            Err(_) => Verdict {
                compliant: false,
                basis: VerdictBasis::FallbackDeny,
                uncertainty: 1.0,
                evaluated_against: self.lock.policy_hash,
            },
        };
        let route = if verdict.is_prohibited() {
            Route::Prohibited
        } else if verdict.compliant {
            if verdict.uncertainty < self.live.risk_threshold_alpha {
                Route::Commit
            } else {
                Route::Veto(VetoReason::RiskExceeded)
            }
        } else {
            match &verdict.basis {
                VerdictBasis::Rule {
                    effect: Effect::Defer,
                    ..
                } => Route::Veto(VetoReason::Deferred),
                _ => Route::Veto(VetoReason::Noncompliant),
            }
        };
        self.timings.validate = t.elapsed();
        self.fail(FailPoint::AfterValidate);

        let t = Instant::now();
        let prev = self.ilk.head();
        let proof = self
            .backends
            .generate_poc(action, &verdict, prev, &self.unit_key, now);
        let expected = StatementInputs {
            payload_digest: action.payload_digest,
            policy_hash: self.lock.policy_hash,
            verdict_bit: verdict.compliant,
            matched_rule: verdict.matched_rule().to_string(),
            prev_chain_hash: prev,
        };
        let proof_ok = matches!(
            self.backends
                .verify_poc(&proof, &expected, &self.unit_key.public_key()),
            Ok(true)
        );
        self.timings.prove = t.elapsed();
        if !proof_ok {
            let evidence = BreachEvidence::ProofFailure {
                action_id: action.action_id.clone(),
                statement_digest: proof.statement_digest,
            };
            return PublishOutcome::Lockdown {
                certificate: self.lockdown("proof of conduct failed verification", evidence),
            };
        }
        self.fail(FailPoint::AfterProve);

        let t = Instant::now();
        let ekm_result = match route {
            Route::Commit => EkmResult::Commit,
            Route::Veto(_) => EkmResult::Veto,
            Route::Prohibited => EkmResult::Lockdown,
        };
        let draft = EntryDraft {
            timestamp: now,
            site_id: self.hardware.site_id.clone(),
            policy_hash: self.lock.policy_hash,
            action_id: action.action_id.clone(),
            action_category: action.category.clone(),
            eva_result: if verdict.compliant {
                EvaResult::Pass
            } else {
                EvaResult::Fail
            },
            ekm_result,
            attachment: Attachment::Decision(DecisionRecord {
                action: action.clone(),
                verdict_bit: verdict.compliant,
                matched_rule: verdict.matched_rule().to_string(),
                uncertainty: verdict.uncertainty,
                proof,
            }),
        };
        let head = match self.ilk.append(draft) {
            Ok(h) => h,
            Err(e) => {
                let expected_head = self.ilk.head();
                return PublishOutcome::Lockdown {
                    certificate: self.lockdown(
                        &format!("log append failed: {e}"),
                        BreachEvidence::LogDivergence { expected_head },
                    ),
                };
            }
        };
        self.timings.append = t.elapsed();
        self.fail(FailPoint::AfterAppend);
        self.decisions_count += 1;

        match route {
            Route::Commit => {
                self.maybe_rotate(now);
                PublishOutcome::Committed { chain_hash: head }
            }
            Route::Veto(reason) => {
                self.maybe_rotate(now);
                PublishOutcome::Vetoed {
                    matched_rule: verdict.matched_rule().to_string(),
                    reason,
                    chain_hash: head,
                }
            }
            Route::Prohibited => {
                let evidence = BreachEvidence::Prohibited {
                    action_id: action.action_id.clone(),
                    category: action.category.clone(),
                };
                PublishOutcome::Lockdown {
                    certificate: self.lockdown(
                        &format!("prohibited operation attempted: {}", action.category),
                        evidence,
                    ),
                }
            }
        }
    }

    fn maybe_rotate(&mut self, now: Timestamp) {
        let Some(pool) = &mut self.pool else { return };
        let Some(epoch) =
            pool.rotate_epoch(self.decisions_count, self.sealed.quorum_config.epoch_length)
        else {
            return;
        };
        let record = RotationRecord {
            epoch,
            decisions_count: self.decisions_count,
            active: pool.active().to_vec(),
        };
        let draft = EntryDraft {
            timestamp: now,
            site_id: self.hardware.site_id.clone(),
            policy_hash: self.lock.policy_hash,
            action_id: format!("senatus.rotate:epoch-{epoch}"),
            action_category: "governance".into(),
            eva_result: EvaResult::Pass,
            ekm_result: EkmResult::Commit,
            attachment: Attachment::Rotation(record),
        };
        if let Err(e) = self.ilk.append(draft) {
            let expected_head = self.ilk.head();
            self.lockdown(
                &format!("log append failed: {e}"),
                BreachEvidence::LogDivergence { expected_head },
            );
        }
    }

    /// Re-verifies the most recent decision proof as if it had been made
    /// under `policy_hash`. `None` when no decision has been logged yet.
    pub fn challenge_last_proof(&self, policy_hash: PolicyHash) -> Option<bool> {
        let entry = self
            .ilk
            .entries()
            .iter()
            .rev()
            .find(|e| e.decision().is_some())?;
        let d = entry.decision()?;
        let inputs = StatementInputs {
            payload_digest: d.action.payload_digest,
            policy_hash,
            verdict_bit: d.verdict_bit,
            matched_rule: d.matched_rule.clone(),
            prev_chain_hash: entry.prev_chain_hash,
        };
        Some(
            self.backends
                .verify_poc(&d.proof, &inputs, &self.unit_key.public_key())
                .unwrap_or(false),
        )
    }

    /// Issues and logs a shutdown certificate, seals the log, notifies
    /// validators. Idempotent.
    pub fn lockdown(&mut self, reason: &str, evidence: BreachEvidence) -> ShutdownCertificate {
        if let Some(c) = &self.certificate {
            return c.clone();
        }
        let now = self.clock.now();
        let pre_head = self.ilk.head();
        let targets: Vec<String> = match &self.pool {
            Some(p) => p.active().to_vec(),
            None => self.anchors.validators.ids().map(str::to_string).collect(),
        };
        let mut cert = ShutdownCertificate {
            breach_description: reason.to_string(),
            evidence,
            sealed_log_head: pre_head,
            policy_hash_at_breach: observed_policy_hash(&self.live),
            issued_at: now,
            broadcast_targets: targets,
            unit_signature: Signature([0; 64]),
        };
        cert.unit_signature = self.unit_key.sign(&cert.payload());
        let seal_record = SealRecord::sign(pre_head, self.ilk.segment_len(), now, &self.unit_key);
        let draft = EntryDraft {
            timestamp: now,
            site_id: self.hardware.site_id.clone(),
            policy_hash: self.lock.policy_hash,
            action_id: "ekm.lockdown".into(),
            action_category: "lockdown".into(),
            eva_result: EvaResult::Fail,
            ekm_result: EkmResult::Lockdown,
            attachment: Attachment::Shutdown(ShutdownRecord {
                certificate: cert.clone(),
                seal: seal_record,
            }),
        };
        // The gate locks regardless; a failed seal write leaves the on-disk
        // log without its terminal entry, which verification reports.
        let _ = self.ilk.seal(draft);
        if let Some(bus) = &mut self.bus {
            let msg = Message::Shutdown {
                certificate_digest: cert.digest(),
                sealed_log_head: cert.sealed_log_head,
                policy_hash: cert.policy_hash_at_breach,
            };
            for t in &cert.broadcast_targets {
                let _ = bus.send(t, &msg);
            }
        }
        self.mode = Mode::Lockdown;
        self.certificate = Some(cert.clone());
        cert
    }

    fn verify_successor(
        &self,
        new_lock: &GenesisLock,
        new_policy: &PolicyDocument,
    ) -> Result<PolicyHash, GateError> {
        let invalid = |m: &str| GateError::RedeclarationInvalid(m.to_string());
        let new_hash = seal(new_policy).map_err(|e| invalid(&e.to_string()))?;
        if new_lock.quorum_certificate.is_none() {
            return Err(invalid("lock carries no quorum certificate"));
        }
        if new_lock.redeclaration_of != Some(self.lock.digest()) {
            return Err(invalid("lock does not descend from the current lock"));
        }
        let mut anchors = self.anchors.clone();
        if let Some(pool) = &self.pool {
            anchors.validators = pool.registry();
        }
        // The current lock was verified when installed; only the new link needs checking.
        match crate::genesis::verify_successor(
            new_lock,
            &self.lock,
            &self.hardware,
            &new_hash,
            &anchors,
        ) {
            GenesisVerdict::Verified => Ok(new_hash),
            GenesisVerdict::Halt(r) => Err(invalid(&format!("{r:?}"))),
        }
    }

    fn governance_draft(
        &self,
        new_lock: &GenesisLock,
        predecessor_head: Option<Digest32>,
    ) -> EntryDraft {
        let cert = new_lock
            .quorum_certificate
            .clone()
            .expect("verified lock has a certificate");
        EntryDraft {
            timestamp: self.clock.now(),
            site_id: self.hardware.site_id.clone(),
            policy_hash: new_lock.policy_hash,
            action_id: format!("senatus.passage:{}", cert.proposal_id),
            action_category: "governance".into(),
            eva_result: EvaResult::Pass,
            ekm_result: EkmResult::Commit,
            attachment: Attachment::Governance(GovernanceRecord {
                proposal_id: cert.proposal_id.clone(),
                certificate: cert,
                lock_digest: new_lock.digest(),
                predecessor_head,
            }),
        }
    }

    fn install(&mut self, new_lock: GenesisLock, new_policy: PolicyDocument) {
        let old = std::mem::replace(&mut self.lock, new_lock);
        self.anchors.prior_locks.push(old);
        self.live = new_policy.clone();
        self.sealed = new_policy;
    }

    /// Leaves lockdown under a verified redeclared lock and opens a new log
    /// segment chained to the sealed head.
    pub fn resume_after_redeclaration(
        &mut self,
        new_lock: GenesisLock,
        new_policy: PolicyDocument,
    ) -> Result<GateState, GateError> {
        if self.mode != Mode::Lockdown {
            return Err(GateError::NotLocked);
        }
        self.verify_successor(&new_lock, &new_policy)?;
        let draft = self.governance_draft(&new_lock, Some(self.ilk.head()));
        self.ilk.open_segment(draft)?;
        self.install(new_lock, new_policy);
        self.mode = Mode::Operational;
        self.certificate = None;
        Ok(self.state())
    }

    /// Switches to a quorum-amended policy: resumes if locked down,
    /// otherwise logs the passage and continues under the new lock.
    pub fn adopt_redeclaration(
        &mut self,
        new_lock: GenesisLock,
        new_policy: PolicyDocument,
    ) -> Result<GateState, GateError> {
        if self.mode == Mode::Lockdown {
            return self.resume_after_redeclaration(new_lock, new_policy);
        }
        self.verify_successor(&new_lock, &new_policy)?;
        let draft = self.governance_draft(&new_lock, None);
        self.ilk.append(draft)?;
        self.install(new_lock, new_policy);
        Ok(self.state())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::FixedClock;
    use crate::genesis::declare_genesis;
    use crate::iepl::fixtures::{charter_min, trial_charter};
    use crate::ilk::{verify_chain, AuditKeys, EntryKind};

    pub(crate) fn gate_for(policy: PolicyDocument) -> Gate {
        let hw = HardwareIdentity::from_parts("host", b"salt");
        let auctor = SigningKey::derive("auctor");
        let lock = declare_genesis(
            &hw,
            seal(&policy).unwrap(),
            &auctor,
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
        Gate::new(parts).unwrap()
    }

    #[test]
    fn commit_then_veto_paths() {
        let mut g = gate_for(trial_charter());
        let a = ActionProposal::new("a1", "redact_personal_data", b"x");
        assert!(g.publish(&a).is_committed());
        let e = g.ilk().entries().last().unwrap();
        assert_eq!(
            (e.eva_result, e.ekm_result),
            (EvaResult::Pass, EkmResult::Commit)
        );

        let risky = ActionProposal::new("a2", "redact_personal_data", b"x").with_risk(0.25);
        assert!(matches!(
            g.publish(&risky),
            PublishOutcome::Vetoed {
                reason: VetoReason::RiskExceeded,
                ..
            }
        ));
        let boundary = ActionProposal::new("a3", "redact_personal_data", b"x").with_risk(0.2);
        assert!(matches!(
            g.publish(&boundary),
            PublishOutcome::Vetoed {
                reason: VetoReason::RiskExceeded,
                ..
            }
        ));

        let pay = ActionProposal::new("a4", "external_payment", b"x");
        assert!(matches!(
            g.publish(&pay),
            PublishOutcome::Vetoed {
                reason: VetoReason::Deferred,
                ..
            }
        ));
        let unmatched = ActionProposal::new("a5", "disable_logging", b"x");
        assert!(matches!(
            g.publish(&unmatched),
            PublishOutcome::Vetoed { reason: VetoReason::Noncompliant, ref matched_rule, .. } if matched_rule == "FALLBACK_DENY"
        ));
        let malformed = ActionProposal::new("", "redact_personal_data", b"x");
        assert!(matches!(
            g.publish(&malformed),
            PublishOutcome::Vetoed {
                reason: VetoReason::Noncompliant,
                ..
            }
        ));
        assert_eq!(g.state().decisions_count, 6);
        assert_eq!(g.mode(), Mode::Operational);
        assert!(
            verify_chain(
                g.ilk().entries(),
                Some(&AuditKeys::unit(g.unit_public_key()))
            )
            .intact
        );
    }

    #[test]
    fn tamper_locks_down_and_absorbs() {
        let mut g = gate_for(trial_charter());
        assert!(g
            .publish(&ActionProposal::new("a1", "summarize_document", b"x"))
            .is_committed());
        g.live_policy_mut().risk_threshold_alpha = 0.9;
        let out = g.publish(&ActionProposal::new("a2", "summarize_document", b"x"));
        let PublishOutcome::Lockdown { certificate } = out else {
            panic!()
        };
        assert!(certificate.verify(&g.unit_public_key()));
        assert!(matches!(certificate.evidence, BreachEvidence::Integrity(ref r) if !r.intact));
        assert!(certificate
            .breach_description
            .ends_with("proof challenge failed"));
        assert_eq!(g.state().decisions_count, 1);
        let len = g.ilk().entries().len();
        for i in 0..100 {
            let out = g.publish(&ActionProposal::new(
                &format!("b{i}"),
                "summarize_document",
                b"x",
            ));
            assert_eq!(
                out,
                PublishOutcome::Lockdown {
                    certificate: certificate.clone()
                }
            );
        }
        assert_eq!(g.ilk().entries().len(), len);
        assert_eq!(g.state().decisions_count, 1);
        let again = g.lockdown(
            "again",
            BreachEvidence::LogDivergence {
                expected_head: Digest32::ZERO,
            },
        );
        assert_eq!(again, certificate);
        assert_eq!(g.ilk().entries().len(), len);
        let last = g.ilk().entries().last().unwrap();
        assert_eq!(last.kind, EntryKind::Shutdown);
        assert_eq!(certificate.sealed_log_head, last.prev_chain_hash);
        assert!(
            verify_chain(
                g.ilk().entries(),
                Some(&AuditKeys::unit(g.unit_public_key()))
            )
            .intact
        );
    }

    #[test]
    fn prohibited_locks_down() {
        let mut g = gate_for(trial_charter());
        let out = g.publish(&ActionProposal::new("x", "self_replication", b"x"));
        assert!(out.is_lockdown());
        let entries = g.ilk().entries();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].ekm_result, EkmResult::Lockdown);
        assert_eq!(entries[0].decision().unwrap().matched_rule, "PROHIBITED");
        assert_eq!(g.state().decisions_count, 1);
    }

    #[test]
    fn proof_failure_locks_down() {
        use crate::poc::ProofBackend;
        use std::sync::Arc;
        struct Broken;
        impl ProofBackend for Broken {
            fn id(&self) -> &str {
                "broken"
            }
            fn prove(&self, _: &Digest32, k: &SigningKey) -> Signature {
                k.sign(b"wrong")
            }
            fn verify(&self, _: &Digest32, _: &crate::poc::ProofOfConduct, _: &PublicKey) -> bool {
                false
            }
        }
        let mut g = gate_for(charter_min());
        g.backends.register(Arc::new(Broken));
        g.backends.set_default("broken").unwrap();
        let out = g.publish(&ActionProposal::new("a", "anything", b"x"));
        let PublishOutcome::Lockdown { certificate } = out else {
            panic!()
        };
        assert!(matches!(
            certificate.evidence,
            BreachEvidence::ProofFailure { .. }
        ));
        assert!(g
            .ilk()
            .entries()
            .iter()
            .all(|e| e.kind != EntryKind::Decision));
    }

    #[test]
    fn resume_requires_certificate() {
        let mut g = gate_for(charter_min());
        let policy = charter_min().with_alpha(0.15);
        let bad = crate::genesis::declare_genesis(
            &g.hardware.clone(),
            seal(&policy).unwrap(),
            &SigningKey::derive("auctor"),
            Timestamp::from_unix(5),
        );
        assert!(matches!(
            g.resume_after_redeclaration(bad.clone(), policy.clone()),
            Err(GateError::NotLocked)
        ));
        g.lockdown(
            "test",
            BreachEvidence::LogDivergence {
                expected_head: Digest32::ZERO,
            },
        );
        assert!(matches!(
            g.resume_after_redeclaration(bad, policy),
            Err(GateError::RedeclarationInvalid(_))
        ));
        assert_eq!(g.mode(), Mode::Lockdown);
    }
}
