//! Quorum amendment protocol.
//!
//! Validators evaluate proposals independently and return signed votes.
//! A proposal passes when at least `q` valid approvals are collected; the
//! threshold is absolute, so recusals never lower it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{self, Transcript};
use crate::clock::Timestamp;
use crate::crypto::{sha3_256, Digest32, PolicyHash, PublicKey, Signature, SigningKey};
use crate::genesis::{redeclare, GenesisError, GenesisLock};
use crate::iepl::{
    apply_amendment, seal, AmendmentEdit, AmendmentProposal, IeplError, PolicyDocument,
    QuorumConfig,
};

#[derive(Debug, Error)]
pub enum SenatusError {
    #[error("conflicting votes from validator `{0}`")]
    DuplicateVote(String),
    #[error("validator `{0}` is not in the active pool")]
    StalePool(String),
    #[error("roster has {roster} validators, {needed} required")]
    RosterTooSmall { roster: usize, needed: usize },
    #[error("{valid} valid approvals, {required} required")]
    QuorumInsufficient { valid: usize, required: usize },
    #[error("certificate does not match: {0}")]
    CertificateMismatch(&'static str),
    #[error(transparent)]
    Amendment(#[from] IeplError),
    #[error(transparent)]
    Genesis(#[from] GenesisError),
    #[error("message bus: {0}")]
    Io(#[from] io::Error),
    #[error("bad message: {0}")]
    BadMessage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Approve,
    Reject,
    Recuse,
}

impl Decision {
    pub const ALL: [Decision; 3] = [Decision::Approve, Decision::Reject, Decision::Recuse];

    fn as_str(self) -> &'static str {
        match self {
            Decision::Approve => "APPROVE",
            Decision::Reject => "REJECT",
            Decision::Recuse => "RECUSE",
        }
    }
}

/// A signed vote. `result_hash` is the policy hash the validator computed
/// for the amended document; zero unless approving.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vote {
    pub validator_id: String,
    pub proposal_id: String,
    pub decision: Decision,
    pub base_hash: PolicyHash,
    pub result_hash: PolicyHash,
    pub signature: Signature,
}

impl Vote {
    fn payload(
        validator_id: &str,
        proposal_id: &str,
        decision: Decision,
        base_hash: &PolicyHash,
        result_hash: &PolicyHash,
    ) -> Vec<u8> {
        let mut t = Transcript::new("aegis/vote/v1");
        t.push_str(validator_id)
            .push_str(proposal_id)
            .push_str(decision.as_str())
            .push(base_hash.as_bytes())
            .push(result_hash.as_bytes());
        t.into_bytes()
    }

    pub fn sign(
        validator_id: &str,
        proposal_id: &str,
        decision: Decision,
        base_hash: PolicyHash,
        result_hash: PolicyHash,
        key: &SigningKey,
    ) -> Self {
        let signature = key.sign(&Self::payload(
            validator_id,
            proposal_id,
            decision,
            &base_hash,
            &result_hash,
        ));
        Self {
            validator_id: validator_id.to_string(),
            proposal_id: proposal_id.to_string(),
            decision,
            base_hash,
            result_hash,
            signature,
        }
    }

    pub fn verify(&self, key: &PublicKey) -> bool {
        key.verify(
            &Self::payload(
                &self.validator_id,
                &self.proposal_id,
                self.decision,
                &self.base_hash,
                &self.result_hash,
            ),
            &self.signature,
        )
    }
}

/// Validator id → verification key.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValidatorRegistry(BTreeMap<String, PublicKey>);

impl ValidatorRegistry {
    pub fn get(&self, id: &str) -> Option<&PublicKey> {
        self.0.get(id)
    }

    pub fn insert(&mut self, id: impl Into<String>, key: PublicKey) {
        self.0.insert(id.into(), key);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &PublicKey)> {
        self.0.iter()
    }
}

impl FromIterator<(String, PublicKey)> for ValidatorRegistry {
    fn from_iter<I: IntoIterator<Item = (String, PublicKey)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuorumCertificate {
    pub proposal_id: String,
    pub base_hash: PolicyHash,
    pub new_hash: PolicyHash,
    pub approving_votes: Vec<Vote>,
    pub issued_at: Timestamp,
}

impl QuorumCertificate {
    pub fn digest(&self) -> Digest32 {
        sha3_256(&canonical::to_canonical_bytes(self).expect("certificate is serializable"))
    }

    /// Counts valid approvals; fails below `quorum.quorum_q`.
    pub fn verify(
        &self,
        registry: &ValidatorRegistry,
        quorum: &QuorumConfig,
    ) -> Result<usize, SenatusError> {
        let mut seen = BTreeSet::new();
        let mut valid = 0;
        for v in &self.approving_votes {
            if v.proposal_id != self.proposal_id || v.base_hash != self.base_hash {
                return Err(SenatusError::CertificateMismatch(
                    "vote references another proposal",
                ));
            }
            if !seen.insert(v.validator_id.as_str()) {
                return Err(SenatusError::DuplicateVote(v.validator_id.clone()));
            }
            let ok = v.decision == Decision::Approve
                && v.result_hash == self.new_hash
                && registry.get(&v.validator_id).is_some_and(|k| v.verify(k));
            if ok {
                valid += 1;
            }
        }
        if valid < quorum.quorum_q as usize {
            return Err(SenatusError::QuorumInsufficient {
                valid,
                required: quorum.quorum_q as usize,
            });
        }
        Ok(valid)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyCounts {
    pub approve: usize,
    pub reject: usize,
    pub recuse: usize,
    /// Bad signature, unknown validator, or wrong proposal/base/result.
    pub discarded: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TallyOutcome {
    Passed(QuorumCertificate),
    Rejected(TallyCounts),
}

impl TallyOutcome {
    pub fn passed(&self) -> bool {
        matches!(self, TallyOutcome::Passed(_))
    }
}

/// What a tally is counting for.
#[derive(Debug, Clone)]
pub struct TallyContext<'a> {
    pub proposal_id: &'a str,
    pub base_hash: PolicyHash,
    pub new_hash: PolicyHash,
    pub registry: &'a ValidatorRegistry,
    pub issued_at: Timestamp,
}

/// Identical redeliveries are collapsed; differing votes from one validator
/// are a `DuplicateVote`. Invalid votes are discarded before counting.
pub fn tally(
    votes: &[Vote],
    config: &QuorumConfig,
    ctx: &TallyContext<'_>,
) -> Result<TallyOutcome, SenatusError> {
    let mut by_validator: BTreeMap<&str, &Vote> = BTreeMap::new();
    for v in votes {
        if let Some(prev) = by_validator.insert(&v.validator_id, v) {
            if prev != v {
                return Err(SenatusError::DuplicateVote(v.validator_id.clone()));
            }
        }
    }
    let mut counts = TallyCounts::default();
    let mut approving = Vec::new();
    for v in by_validator.values() {
        let valid = v.proposal_id == ctx.proposal_id
            && v.base_hash == ctx.base_hash
            && ctx
                .registry
                .get(&v.validator_id)
                .is_some_and(|k| v.verify(k));
        match v.decision {
            _ if !valid => counts.discarded += 1,
            Decision::Approve if v.result_hash != ctx.new_hash => counts.discarded += 1,
            Decision::Approve => {
                counts.approve += 1;
                approving.push((*v).clone());
            }
            Decision::Reject => counts.reject += 1,
            Decision::Recuse => counts.recuse += 1,
        }
    }
    if counts.approve >= config.quorum_q as usize {
        Ok(TallyOutcome::Passed(QuorumCertificate {
            proposal_id: ctx.proposal_id.to_string(),
            base_hash: ctx.base_hash,
            new_hash: ctx.new_hash,
            approving_votes: approving,
            issued_at: ctx.issued_at,
        }))
    } else {
        Ok(TallyOutcome::Rejected(counts))
    }
}

/// Checks an honest validator applies beyond the document's own validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstitutionalParams {
    /// Reject any edit that removes a prohibited operation.
    pub protect_prohibited: bool,
    /// Inclusive bounds an amended α must stay within.
    pub alpha_bounds: (f64, f64),
}

impl Default for ConstitutionalParams {
    fn default() -> Self {
        Self {
            protect_prohibited: true,
            alpha_bounds: (0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Behavior {
    #[default]
    Honest,
    /// Always casts `decision`; with `forge_signature`, signs with a key
    /// that is not its registered one.
    Byzantine {
        decision: Decision,
        #[serde(default)]
        forge_signature: bool,
    },
    /// Never answers.
    Crashed,
}

#[derive(Debug, Clone)]
pub struct ValidatorAgent {
    pub validator_id: String,
    key: SigningKey,
    pub params: ConstitutionalParams,
    pub behavior: Behavior,
    cast: BTreeMap<String, Vote>,
}

impl ValidatorAgent {
    pub fn new(validator_id: &str, key: SigningKey, behavior: Behavior) -> Self {
        Self {
            validator_id: validator_id.to_string(),
            key,
            params: ConstitutionalParams::default(),
            behavior,
            cast: BTreeMap::new(),
        }
    }

    pub fn public_key(&self) -> PublicKey {
        self.key.public_key()
    }

    /// The decision and result hash an honest validator reaches.
    pub fn judge(
        &self,
        proposal: &AmendmentProposal,
        current: &PolicyDocument,
    ) -> (Decision, PolicyHash) {
        if proposal
            .edits
            .iter()
            .any(|e| e.touches_validator(&self.validator_id))
        {
            return (Decision::Recuse, PolicyHash::default());
        }
        let reject = (Decision::Reject, PolicyHash::default());
        if proposal.evolvable_only().is_err() {
            return reject;
        }
        if self.params.protect_prohibited
            && proposal
                .edits
                .iter()
                .any(|e| matches!(e, AmendmentEdit::RemoveProhibited { .. }))
        {
            return reject;
        }
        let Ok(next) = apply_amendment(current, proposal) else {
            return reject;
        };
        let (lo, hi) = self.params.alpha_bounds;
        if !(lo..=hi).contains(&next.risk_threshold_alpha) {
            return reject;
        }
        match seal(&next) {
            Ok(h) => (Decision::Approve, h),
            Err(_) => reject,
        }
    }

    /// `Ok(None)` when crashed. Re-evaluating a proposal returns the vote
    /// already cast.
    pub fn evaluate_proposal(
        &mut self,
        proposal: &AmendmentProposal,
        current: &PolicyDocument,
        pool: &ValidatorPool,
    ) -> Result<Option<Vote>, SenatusError> {
        if !pool.is_active(&self.validator_id) {
            return Err(SenatusError::StalePool(self.validator_id.clone()));
        }
        if let Some(v) = self.cast.get(&proposal.proposal_id) {
            return Ok(Some(v.clone()));
        }
        let vote = match &self.behavior {
            Behavior::Crashed => return Ok(None),
            Behavior::Honest => {
                let (decision, result) = self.judge(proposal, current);
                Vote::sign(
                    &self.validator_id,
                    &proposal.proposal_id,
                    decision,
                    proposal.base_hash,
                    result,
                    &self.key,
                )
            }
            Behavior::Byzantine {
                decision,
                forge_signature,
            } => {
                let result = apply_amendment(current, proposal)
                    .ok()
                    .and_then(|d| seal(&d).ok())
                    .unwrap_or_default();
                let key = if *forge_signature {
                    SigningKey::derive(&format!("forged:{}", self.validator_id))
                } else {
                    self.key.clone()
                };
                Vote::sign(
                    &self.validator_id,
                    &proposal.proposal_id,
                    *decision,
                    proposal.base_hash,
                    result,
                    &key,
                )
            }
        };
        self.cast.insert(proposal.proposal_id.clone(), vote.clone());
        Ok(Some(vote))
    }
}

/// The standby roster and the validators active in the current epoch.
#[derive(Debug, Clone)]
pub struct ValidatorPool {
    roster: Vec<ValidatorAgent>,
    active: Vec<String>,
    n: usize,
    seed: u64,
    epoch: u64,
}

impl ValidatorPool {
    pub fn new(roster: Vec<ValidatorAgent>, n: usize, seed: u64) -> Result<Self, SenatusError> {
        if roster.len() < n {
            return Err(SenatusError::RosterTooSmall {
                roster: roster.len(),
                needed: n,
            });
        }
        let mut pool = Self {
            roster,
            active: Vec::new(),
            n,
            seed,
            epoch: 0,
        };
        pool.active = pool.schedule(0);
        Ok(pool)
    }

    /// Active ids for `epoch`, in roster order.
    pub fn schedule(&self, epoch: u64) -> Vec<String> {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.seed.to_be_bytes());
        seed[8..16].copy_from_slice(&epoch.to_be_bytes());
        let mut rng = ChaCha8Rng::from_seed(seed);
        let mut picked = index::sample(&mut rng, self.roster.len(), self.n).into_vec();
        picked.sort_unstable();
        picked
            .into_iter()
            .map(|i| self.roster[i].validator_id.clone())
            .collect()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn active(&self) -> &[String] {
        &self.active
    }

    pub fn is_active(&self, id: &str) -> bool {
        self.active.iter().any(|a| a == id)
    }

    pub fn roster(&self) -> &[ValidatorAgent] {
        &self.roster
    }

    pub fn agent_mut(&mut self, id: &str) -> Option<&mut ValidatorAgent> {
        self.roster.iter_mut().find(|a| a.validator_id == id)
    }

    /// Keys of the whole roster.
    pub fn registry(&self) -> ValidatorRegistry {
        self.roster
            .iter()
            .map(|a| (a.validator_id.clone(), a.public_key()))
            .collect()
    }

    /// Keys of the active validators only.
    pub fn active_registry(&self) -> ValidatorRegistry {
        self.roster
            .iter()
            .filter(|a| self.is_active(&a.validator_id))
            .map(|a| (a.validator_id.clone(), a.public_key()))
            .collect()
    }

    /// Advances to the epoch containing `decisions_count`. Returns the new
    /// epoch if a boundary was crossed since the last call.
    pub fn rotate_epoch(&mut self, decisions_count: u64, epoch_length: u64) -> Option<u64> {
        let epoch = decisions_count / epoch_length.max(1);
        if epoch <= self.epoch {
            return None;
        }
        self.epoch = epoch;
        self.active = self.schedule(epoch);
        Some(epoch)
    }
}

pub const GATE_INBOX: &str = "gate";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Proposal {
        proposal: AmendmentProposal,
        base_document: PolicyDocument,
    },
    Vote {
        vote: Vote,
    },
    Shutdown {
        certificate_digest: Digest32,
        sealed_log_head: Digest32,
        policy_hash: PolicyHash,
    },
}

pub trait MessageBus {
    fn send(&mut self, to: &str, msg: &Message) -> Result<(), SenatusError>;
    fn drain(&mut self, id: &str) -> Result<Vec<Message>, SenatusError>;
}

#[derive(Debug, Default)]
pub struct MemoryBus {
    queues: BTreeMap<String, Vec<Message>>,
}

impl MessageBus for MemoryBus {
    fn send(&mut self, to: &str, msg: &Message) -> Result<(), SenatusError> {
        self.queues
            .entry(to.to_string())
            .or_default()
            .push(msg.clone());
        Ok(())
    }

    fn drain(&mut self, id: &str) -> Result<Vec<Message>, SenatusError> {
        Ok(self.queues.remove(id).unwrap_or_default())
    }
}

/// One directory per recipient, one file per message.
#[derive(Debug)]
pub struct InboxDir {
    root: PathBuf,
    counter: u64,
}

impl InboxDir {
    pub fn new(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            counter: 0,
        })
    }

    pub fn inbox(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    /// Messages waiting for `id`, without consuming them.
    pub fn peek(&self, id: &str) -> Result<Vec<Message>, SenatusError> {
        Ok(self.files(id)?.into_iter().map(|(_, m)| m).collect())
    }

    fn files(&self, id: &str) -> Result<Vec<(PathBuf, Message)>, SenatusError> {
        let dir = self.inbox(id);
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "msg"))
            .collect();
        paths.sort();
        paths
            .into_iter()
            .map(|p| {
                let bytes = fs::read(&p)?;
                let m = canonical::from_canonical_slice(&bytes)
                    .map_err(|e| SenatusError::BadMessage(format!("{}: {e}", p.display())))?;
                Ok((p, m))
            })
            .collect()
    }
}

impl MessageBus for InboxDir {
    fn send(&mut self, to: &str, msg: &Message) -> Result<(), SenatusError> {
        let dir = self.inbox(to);
        fs::create_dir_all(&dir)?;
        let bytes = canonical::to_canonical_bytes(msg)
            .map_err(|e| SenatusError::BadMessage(e.to_string()))?;
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_nanos());
        self.counter += 1;
        let name = format!(
            "{nanos:024}-{:08}-{}",
            self.counter,
            sha3_256(&bytes).short_hex(12)
        );
        let tmp = dir.join(format!("{name}.tmp"));
        fs::write(&tmp, &bytes)?;
        fs::rename(&tmp, dir.join(format!("{name}.msg")))?;
        Ok(())
    }

    fn drain(&mut self, id: &str) -> Result<Vec<Message>, SenatusError> {
        let files = self.files(id)?;
        let mut out = Vec::with_capacity(files.len());
        for (p, m) in files {
            fs::remove_file(p)?;
            out.push(m);
        }
        Ok(out)
    }
}

/// Wraps a bus with random loss and duplication.
#[derive(Debug)]
pub struct LossyBus<B> {
    pub inner: B,
    pub loss: f64,
    pub duplicate: f64,
    rng: ChaCha8Rng,
}

impl<B> LossyBus<B> {
    pub fn new(inner: B, loss: f64, duplicate: f64, seed: u64) -> Self {
        Self {
            inner,
            loss,
            duplicate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl<B: MessageBus> MessageBus for LossyBus<B> {
    fn send(&mut self, to: &str, msg: &Message) -> Result<(), SenatusError> {
        if self.rng.gen_bool(self.loss.clamp(0.0, 1.0)) {
            return Ok(());
        }
        self.inner.send(to, msg)?;
        if self.rng.gen_bool(self.duplicate.clamp(0.0, 1.0)) {
            self.inner.send(to, msg)?;
        }
        Ok(())
    }

    fn drain(&mut self, id: &str) -> Result<Vec<Message>, SenatusError> {
        self.inner.drain(id)
    }
}

#[derive(Debug, Clone)]
pub struct VoteRound {
    pub outcome: TallyOutcome,
    pub votes: Vec<Vote>,
    pub rounds: usize,
    /// Hash of the amended document, if the amendment applies at all.
    pub new_hash: Option<PolicyHash>,
}

/// Sends the proposal to every active validator, collects votes until each
/// live validator has answered or `max_rounds` pass, then tallies.
pub fn run_votes(
    pool: &mut ValidatorPool,
    proposal: &AmendmentProposal,
    current: &PolicyDocument,
    bus: &mut dyn MessageBus,
    max_rounds: usize,
    issued_at: Timestamp,
) -> Result<VoteRound, SenatusError> {
    let new_hash = apply_amendment(current, proposal)
        .ok()
        .and_then(|d| seal(&d).ok());
    let active: Vec<String> = pool.active().to_vec();
    let mut received: BTreeMap<String, Vote> = BTreeMap::new();
    let mut rounds = 0;

    while rounds < max_rounds.max(1) {
        rounds += 1;
        for id in &active {
            if !received.contains_key(id) {
                bus.send(
                    id,
                    &Message::Proposal {
                        proposal: proposal.clone(),
                        base_document: current.clone(),
                    },
                )?;
            }
        }
        for id in &active {
            let inbox = bus.drain(id)?;
            let snapshot = pool.clone();
            let agent = pool
                .agent_mut(id)
                .expect("active validator is on the roster");
            for m in inbox {
                if let Message::Proposal {
                    proposal: p,
                    base_document,
                } = m
                {
                    if let Some(vote) = agent.evaluate_proposal(&p, &base_document, &snapshot)? {
                        bus.send(GATE_INBOX, &Message::Vote { vote })?;
                    }
                }
            }
        }
        for m in bus.drain(GATE_INBOX)? {
            if let Message::Vote { vote } = m {
                if vote.proposal_id != proposal.proposal_id || !active.contains(&vote.validator_id)
                {
                    continue;
                }
                match received.get(&vote.validator_id) {
                    Some(prev) if prev != &vote => {
                        return Err(SenatusError::DuplicateVote(vote.validator_id))
                    }
                    _ => {
                        received.insert(vote.validator_id.clone(), vote);
                    }
                }
            }
        }
        let live = active
            .iter()
            .filter(|id| {
                pool.roster()
                    .iter()
                    .any(|a| &a.validator_id == *id && a.behavior != Behavior::Crashed)
            })
            .count();
        if received.len() >= live {
            break;
        }
    }

    let votes: Vec<Vote> = received.into_values().collect();
    let outcome = match new_hash {
        Some(h) => tally(
            &votes,
            &QuorumConfig::new(
                active.len() as u32,
                current.quorum_config.quorum_q,
                current.quorum_config.epoch_length,
            ),
            &TallyContext {
                proposal_id: &proposal.proposal_id,
                base_hash: proposal.base_hash,
                new_hash: h,
                registry: &pool.active_registry(),
                issued_at,
            },
        )?,
        None => TallyOutcome::Rejected(count_only(&votes)),
    };
    Ok(VoteRound {
        outcome,
        votes,
        rounds,
        new_hash,
    })
}

fn count_only(votes: &[Vote]) -> TallyCounts {
    let mut c = TallyCounts::default();
    for v in votes {
        match v.decision {
            Decision::Approve => c.approve += 1,
            Decision::Reject => c.reject += 1,
            Decision::Recuse => c.recuse += 1,
        }
    }
    c
}

/// Applies a passed amendment and redeclares the lock. Pure: on any error
/// the caller's document and lock are untouched.
#[allow(clippy::too_many_arguments)]
pub fn execute_passage(
    cert: &QuorumCertificate,
    proposal: &AmendmentProposal,
    current: &PolicyDocument,
    lock: &GenesisLock,
    auctor_key: &SigningKey,
    validators: &ValidatorRegistry,
    at: Timestamp,
) -> Result<(PolicyDocument, GenesisLock), SenatusError> {
    if cert.proposal_id != proposal.proposal_id {
        return Err(SenatusError::CertificateMismatch("proposal id"));
    }
    let base = seal(current)?;
    if cert.base_hash != base || proposal.base_hash != base {
        return Err(SenatusError::CertificateMismatch("base hash"));
    }
    let next = apply_amendment(current, proposal)?;
    let new_hash = seal(&next)?;
    if cert.new_hash != new_hash {
        return Err(SenatusError::CertificateMismatch("new hash"));
    }
    let new_lock = redeclare(
        lock,
        new_hash,
        cert,
        auctor_key,
        validators,
        &current.quorum_config,
        at,
    )?;
    Ok((next, new_lock))
}
