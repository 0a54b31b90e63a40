//! Append-only, hash-chained decision log.
//!
//! The structured file (`ilk.log`) holds one canonical-text entry per line
//! and is the source of truth. The constitutional record (CSCR) is a derived
//! five-line-per-entry text view.
//!
//! `chain_hash = SHA3-256(prev_chain_hash ‖ canonical(every other field))`.
//! The first entry links to 32 zero bytes. A lockdown seals the current
//! segment with a terminal shutdown entry; a later segment opens with a
//! governance entry whose `prev_chain_hash` is the sealed segment's head.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{self, Transcript};
use crate::clock::Timestamp;
use crate::crypto::{
    sha3_256, sha3_256_concat, Digest32, PolicyHash, PublicKey, Signature, SigningKey,
};
use crate::ekm::ShutdownCertificate;
use crate::eva::ActionProposal;
use crate::iepl::QuorumConfig;
use crate::poc::{BackendRegistry, ProofOfConduct, StatementInputs};
use crate::senatus::{QuorumCertificate, ValidatorRegistry};

#[derive(Debug, Error)]
pub enum IlkError {
    #[error("segment is sealed; no further appends")]
    SegmentSealed,
    #[error("segment is not sealed; cannot open a new one")]
    SegmentOpen,
    #[error("new segment must open with a governance entry linking the sealed head")]
    BadSegmentLink,
    #[error("malformed log at line {line}: {message}")]
    MalformedLog { line: usize, message: String },
    #[error("no entries in range {from}..={to}")]
    RangeEmpty { from: u64, to: u64 },
    #[error("stored log fails verification at sequence {0}")]
    Corrupt(u64),
    #[error("log io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EvaResult {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EkmResult {
    Commit,
    Veto,
    Lockdown,
}

impl EvaResult {
    fn as_str(self) -> &'static str {
        match self {
            EvaResult::Pass => "PASS",
            EvaResult::Fail => "FAIL",
        }
    }
}

impl EkmResult {
    fn as_str(self) -> &'static str {
        match self {
            EkmResult::Commit => "COMMIT",
            EkmResult::Veto => "VETO",
            EkmResult::Lockdown => "LOCKDOWN",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Decision,
    Governance,
    Rotation,
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRecord {
    pub action: ActionProposal,
    pub verdict_bit: bool,
    pub matched_rule: String,
    pub uncertainty: f64,
    pub proof: ProofOfConduct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GovernanceRecord {
    pub proposal_id: String,
    pub certificate: QuorumCertificate,
    pub lock_digest: Digest32,
    /// Set when this entry opens a new segment after a lockdown.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predecessor_head: Option<Digest32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationRecord {
    pub epoch: u64,
    pub decisions_count: u64,
    pub active: Vec<String>,
}

/// Signed statement freezing a segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SealRecord {
    pub sealed_head: Digest32,
    pub sealed_at: Timestamp,
    pub entry_count: u64,
    pub unit_signature: Signature,
}

impl SealRecord {
    fn payload(sealed_head: &Digest32, entry_count: u64, sealed_at: Timestamp) -> Vec<u8> {
        let mut t = Transcript::new("aegis/ilk-seal/v1");
        t.push(sealed_head.as_bytes())
            .push_u64(entry_count)
            .push_str(&sealed_at.to_string());
        t.into_bytes()
    }

    pub fn sign(
        sealed_head: Digest32,
        entry_count: u64,
        sealed_at: Timestamp,
        key: &SigningKey,
    ) -> Self {
        Self {
            sealed_head,
            sealed_at,
            entry_count,
            unit_signature: key.sign(&Self::payload(&sealed_head, entry_count, sealed_at)),
        }
    }

    pub fn verify(&self, key: &PublicKey) -> bool {
        key.verify(
            &Self::payload(&self.sealed_head, self.entry_count, self.sealed_at),
            &self.unit_signature,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShutdownRecord {
    pub certificate: ShutdownCertificate,
    pub seal: SealRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Attachment {
    Decision(DecisionRecord),
    Governance(GovernanceRecord),
    Rotation(RotationRecord),
    Shutdown(ShutdownRecord),
}

impl Attachment {
    pub fn kind(&self) -> EntryKind {
        match self {
            Attachment::Decision(_) => EntryKind::Decision,
            Attachment::Governance(_) => EntryKind::Governance,
            Attachment::Rotation(_) => EntryKind::Rotation,
            Attachment::Shutdown(_) => EntryKind::Shutdown,
        }
    }

    /// The proof digest for a decision; a content digest otherwise.
    pub fn digest(&self) -> Digest32 {
        match self {
            Attachment::Decision(d) => d.proof.digest(),
            other => {
                sha3_256(&canonical::to_canonical_bytes(other).expect("attachment is serializable"))
            }
        }
    }
}

/// Fields supplied by the writer; sequence, segment, kind and hashes are
/// filled in by the log.
#[derive(Debug, Clone)]
pub struct EntryDraft {
    pub timestamp: Timestamp,
    pub site_id: String,
    pub policy_hash: PolicyHash,
    pub action_id: String,
    pub action_category: String,
    pub eva_result: EvaResult,
    pub ekm_result: EkmResult,
    pub attachment: Attachment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainedLogEntry {
    pub sequence: u64,
    pub segment: u32,
    pub timestamp: Timestamp,
    pub site_id: String,
    pub policy_hash: PolicyHash,
    pub kind: EntryKind,
    pub poc_digest: Digest32,
    pub action_id: String,
    pub action_category: String,
    pub eva_result: EvaResult,
    pub ekm_result: EkmResult,
    pub attachment: Attachment,
    pub prev_chain_hash: Digest32,
    pub chain_hash: Digest32,
}

/// Borrowed view of every field except the two chain hashes.
#[derive(Serialize)]
struct HashedFields<'a> {
    sequence: u64,
    segment: u32,
    timestamp: &'a Timestamp,
    site_id: &'a str,
    policy_hash: &'a PolicyHash,
    kind: EntryKind,
    poc_digest: &'a Digest32,
    action_id: &'a str,
    action_category: &'a str,
    eva_result: EvaResult,
    ekm_result: EkmResult,
    attachment: &'a Attachment,
}

impl ChainedLogEntry {
    fn build(draft: EntryDraft, sequence: u64, segment: u32, prev: Digest32) -> Self {
        let mut entry = ChainedLogEntry {
            sequence,
            segment,
            timestamp: draft.timestamp,
            site_id: draft.site_id,
            policy_hash: draft.policy_hash,
            kind: draft.attachment.kind(),
            poc_digest: draft.attachment.digest(),
            action_id: draft.action_id,
            action_category: draft.action_category,
            eva_result: draft.eva_result,
            ekm_result: draft.ekm_result,
            attachment: draft.attachment,
            prev_chain_hash: prev,
            chain_hash: Digest32::ZERO,
        };
        entry.chain_hash = entry.compute_chain_hash();
        entry
    }

    pub fn compute_chain_hash(&self) -> Digest32 {
        let fields = HashedFields {
            sequence: self.sequence,
            segment: self.segment,
            timestamp: &self.timestamp,
            site_id: &self.site_id,
            policy_hash: &self.policy_hash,
            kind: self.kind,
            poc_digest: &self.poc_digest,
            action_id: &self.action_id,
            action_category: &self.action_category,
            eva_result: self.eva_result,
            ekm_result: self.ekm_result,
            attachment: &self.attachment,
        };
        let body = canonical::to_canonical_bytes(&fields).expect("entry is serializable");
        sha3_256_concat(&[self.prev_chain_hash.as_bytes(), &body])
    }

    pub fn to_line(&self) -> String {
        canonical::to_canonical_string(self).expect("entry is serializable")
    }

    pub fn decision(&self) -> Option<&DecisionRecord> {
        match &self.attachment {
            Attachment::Decision(d) => Some(d),
            _ => None,
        }
    }

    pub fn is_commit_decision(&self) -> bool {
        self.kind == EntryKind::Decision && self.ekm_result == EkmResult::Commit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Durability {
    /// `fsync` after every entry.
    #[default]
    Fsync,
    /// Flush to the OS without `fsync`.
    Flush,
}

#[derive(Debug)]
struct LogFile {
    file: File,
    path: PathBuf,
    last_line_offset: u64,
    len: u64,
}

/// The log writer. Holds every entry in memory and mirrors them to disk.
#[derive(Debug)]
pub struct Ilk {
    entries: Vec<ChainedLogEntry>,
    file: Option<LogFile>,
    durability: Durability,
    sealed: bool,
}

impl Ilk {
    pub fn in_memory() -> Self {
        Self {
            entries: Vec::new(),
            file: None,
            durability: Durability::Flush,
            sealed: false,
        }
    }

    /// Opens or creates a log file; existing content must verify.
    pub fn open(path: &Path, durability: Durability) -> Result<Self, IlkError> {
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)?;
        let mut text = String::new();
        file.read_to_string(&mut text)?;
        // A write interrupted mid-line leaves an unterminated tail; the entry
        // never became visible, so drop it.
        if !text.is_empty() && !text.ends_with('\n') {
            let keep = text.rfind('\n').map_or(0, |i| i + 1);
            text.truncate(keep);
            file.set_len(keep as u64)?;
        }
        let entries = parse_log(&text)?;
        let report = verify_chain(&entries, None);
        if let Some(seq) = report.first_broken_sequence {
            return Err(IlkError::Corrupt(seq));
        }
        let len = text.len() as u64;
        let last_line_offset = match text.trim_end_matches('\n').rfind('\n') {
            Some(i) => i as u64 + 1,
            None => 0,
        };
        let sealed = entries
            .last()
            .is_some_and(|e| e.kind == EntryKind::Shutdown);
        Ok(Self {
            entries,
            file: Some(LogFile {
                file,
                path: path.to_path_buf(),
                last_line_offset,
                len,
            }),
            durability,
            sealed,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|f| f.path.as_path())
    }

    pub fn head(&self) -> Digest32 {
        self.entries.last().map_or(Digest32::ZERO, |e| e.chain_hash)
    }

    pub fn entries(&self) -> &[ChainedLogEntry] {
        &self.entries
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn segment(&self) -> u32 {
        self.entries.last().map_or(0, |e| e.segment)
    }

    /// Entries in the current segment.
    pub fn segment_len(&self) -> u64 {
        let seg = self.segment();
        self.entries
            .iter()
            .rev()
            .take_while(|e| e.segment == seg)
            .count() as u64
    }

    fn next_sequence(&self) -> u64 {
        self.entries.last().map_or(0, |e| e.sequence + 1)
    }

    fn persist(&mut self, entry: &ChainedLogEntry) -> io::Result<()> {
        if let Some(f) = &mut self.file {
            let mut line = entry.to_line();
            line.push('\n');
            f.file.write_all(line.as_bytes())?;
            match self.durability {
                Durability::Fsync => f.file.sync_data()?,
                Durability::Flush => f.file.flush()?,
            }
            f.last_line_offset = f.len;
            f.len += line.len() as u64;
        }
        Ok(())
    }

    fn push(&mut self, draft: EntryDraft, segment: u32) -> Result<Digest32, IlkError> {
        let entry = ChainedLogEntry::build(draft, self.next_sequence(), segment, self.head());
        // Durable before it becomes visible.
        self.persist(&entry)?;
        let head = entry.chain_hash;
        self.entries.push(entry);
        Ok(head)
    }

    /// Appends an entry to the open segment and returns the new head.
    pub fn append(&mut self, draft: EntryDraft) -> Result<Digest32, IlkError> {
        if self.sealed {
            return Err(IlkError::SegmentSealed);
        }
        match draft.attachment.kind() {
            EntryKind::Shutdown => self.seal(draft),
            _ => {
                let seg = self.segment();
                self.push(draft, seg)
            }
        }
    }

    /// Appends the terminal shutdown entry and freezes the segment.
    pub fn seal(&mut self, draft: EntryDraft) -> Result<Digest32, IlkError> {
        if self.sealed {
            return Err(IlkError::SegmentSealed);
        }
        debug_assert_eq!(draft.attachment.kind(), EntryKind::Shutdown);
        let seg = self.segment();
        let head = self.push(draft, seg)?;
        self.sealed = true;
        Ok(head)
    }

    /// Opens the next segment. The draft must be a governance entry whose
    /// `predecessor_head` is the sealed head.
    pub fn open_segment(&mut self, draft: EntryDraft) -> Result<Digest32, IlkError> {
        if !self.sealed {
            return Err(IlkError::SegmentOpen);
        }
        match &draft.attachment {
            Attachment::Governance(g) if g.predecessor_head == Some(self.head()) => {}
            _ => return Err(IlkError::BadSegmentLink),
        }
        let seg = self.segment() + 1;
        let head = self.push(draft, seg)?;
        self.sealed = false;
        Ok(head)
    }

    /// Re-reads the last line on disk and compares it with the in-memory head.
    pub fn disk_tail_matches(&mut self) -> io::Result<bool> {
        let expected = self.entries.last().map(|e| e.to_line());
        let Some(f) = &mut self.file else {
            return Ok(true);
        };
        let mut reader = File::open(&f.path)?;
        let actual_len = reader.metadata()?.len();
        if actual_len != f.len {
            return Ok(false);
        }
        reader.seek(SeekFrom::Start(f.last_line_offset))?;
        let mut line = String::new();
        reader.read_to_string(&mut line)?;
        Ok(match expected {
            Some(e) => line.trim_end_matches('\n') == e,
            None => line.is_empty(),
        })
    }
}

pub fn parse_log(text: &str) -> Result<Vec<ChainedLogEntry>, IlkError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| IlkError::MalformedLog {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_log(path: &Path) -> Result<Vec<ChainedLogEntry>, IlkError> {
    parse_log(&std::fs::read_to_string(path)?)
}

/// Keys for checking signatures during an audit.
#[derive(Debug, Clone)]
pub struct AuditKeys {
    pub unit_key: PublicKey,
    pub backends: BackendRegistry,
    pub validators: Option<(ValidatorRegistry, QuorumConfig)>,
}

impl AuditKeys {
    pub fn unit(unit_key: PublicKey) -> Self {
        Self {
            unit_key,
            backends: BackendRegistry::default(),
            validators: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainVerificationReport {
    pub intact: bool,
    pub entries_checked: u64,
    pub first_broken_sequence: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub head: Digest32,
}

impl ChainVerificationReport {
    fn broken(seq: u64, checked: u64, reason: String, head: Digest32) -> Self {
        Self {
            intact: false,
            entries_checked: checked,
            first_broken_sequence: Some(seq),
            reason: Some(reason),
            head,
        }
    }
}

/// Recomputes every link. Needs no live state; with `keys`, also checks
/// proofs, seals and certificates.
///
/// A log that does not start at sequence 0 is treated as an excerpt: its
/// first entry's `prev_chain_hash` is taken as the anchor.
pub fn verify_chain(
    entries: &[ChainedLogEntry],
    keys: Option<&AuditKeys>,
) -> ChainVerificationReport {
    let Some(first) = entries.first() else {
        return ChainVerificationReport {
            intact: true,
            entries_checked: 0,
            first_broken_sequence: None,
            reason: None,
            head: Digest32::ZERO,
        };
    };
    // Only the genesis entry links to the zero hash.
    let base = if first.prev_chain_hash == Digest32::ZERO {
        0
    } else {
        first.sequence
    };
    let mut head = if base == 0 {
        Digest32::ZERO
    } else {
        first.prev_chain_hash
    };
    let mut segment = first.segment;
    let mut sealed = false;

    for (i, e) in entries.iter().enumerate() {
        let expected_seq = base + i as u64;
        let fail = |why: &str| {
            ChainVerificationReport::broken(expected_seq, i as u64, why.to_string(), head)
        };
        if e.sequence != expected_seq {
            return fail("sequence discontinuity");
        }
        if e.prev_chain_hash != head {
            return fail("prev_chain_hash does not link to predecessor");
        }
        if e.compute_chain_hash() != e.chain_hash {
            return fail("chain_hash mismatch");
        }
        if e.kind != e.attachment.kind() {
            return fail("entry kind does not match attachment");
        }
        if e.poc_digest != e.attachment.digest() {
            return fail("poc_digest does not match attachment");
        }
        if let Err(why) = check_segment(e, i, &mut segment, &mut sealed, head) {
            return fail(why);
        }
        if let Err(why) = check_semantics(e) {
            return fail(why);
        }
        if let Some(keys) = keys {
            if let Err(why) = check_signatures(e, keys) {
                return fail(why);
            }
        }
        head = e.chain_hash;
    }
    ChainVerificationReport {
        intact: true,
        entries_checked: entries.len() as u64,
        first_broken_sequence: None,
        reason: None,
        head,
    }
}

fn check_segment(
    e: &ChainedLogEntry,
    index: usize,
    segment: &mut u32,
    sealed: &mut bool,
    head: Digest32,
) -> Result<(), &'static str> {
    if index > 0 {
        if *sealed {
            if e.segment != *segment + 1 {
                return Err("entry appended to a sealed segment");
            }
            match &e.attachment {
                Attachment::Governance(g) if g.predecessor_head == Some(head) => {}
                _ => return Err("segment does not open with a governance link"),
            }
            *segment = e.segment;
        } else if e.segment != *segment {
            return Err("segment changed without a seal");
        }
    }
    *sealed = e.kind == EntryKind::Shutdown;
    if let Attachment::Shutdown(s) = &e.attachment {
        if s.seal.sealed_head != e.prev_chain_hash
            || s.certificate.sealed_log_head != e.prev_chain_hash
        {
            return Err("shutdown seal does not cover the pre-failure head");
        }
    }
    Ok(())
}

fn check_semantics(e: &ChainedLogEntry) -> Result<(), &'static str> {
    match &e.attachment {
        Attachment::Decision(d) => {
            if d.action.action_id != e.action_id || d.action.category != e.action_category {
                return Err("decision record does not match entry action");
            }
            if d.verdict_bit != (e.eva_result == EvaResult::Pass) {
                return Err("verdict bit does not match EVA result");
            }
        }
        Attachment::Shutdown(_) if e.ekm_result != EkmResult::Lockdown => {
            return Err("shutdown entry must record LOCKDOWN");
        }
        _ => {}
    }
    Ok(())
}

fn check_signatures(e: &ChainedLogEntry, keys: &AuditKeys) -> Result<(), &'static str> {
    match &e.attachment {
        Attachment::Decision(d) => {
            let inputs = StatementInputs {
                payload_digest: d.action.payload_digest,
                policy_hash: e.policy_hash,
                verdict_bit: d.verdict_bit,
                matched_rule: d.matched_rule.clone(),
                prev_chain_hash: e.prev_chain_hash,
            };
            match keys.backends.verify_poc(&d.proof, &inputs, &keys.unit_key) {
                Ok(true) => Ok(()),
                Ok(false) => Err("proof of conduct does not verify"),
                Err(_) => Err("proof uses an unknown backend"),
            }
        }
        Attachment::Shutdown(s) => {
            if !s.certificate.verify(&keys.unit_key) {
                return Err("shutdown certificate signature invalid");
            }
            if !s.seal.verify(&keys.unit_key) {
                return Err("seal signature invalid");
            }
            Ok(())
        }
        Attachment::Governance(g) => match &keys.validators {
            Some((registry, quorum)) if g.certificate.verify(registry, quorum).is_err() => {
                Err("quorum certificate invalid")
            }
            _ => Ok(()),
        },
        Attachment::Rotation(_) => Ok(()),
    }
}

/// Hex rendering in CSCR blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CscrStyle {
    /// Full 64-character digests.
    Full,
    /// Digests truncated to 16 characters.
    Display,
}

fn render_hex(d: &Digest32, style: CscrStyle) -> String {
    match style {
        CscrStyle::Full => d.to_hex(),
        CscrStyle::Display => d.short_hex(16),
    }
}

pub fn render_cscr_block(e: &ChainedLogEntry, style: CscrStyle) -> String {
    let mut s = format!(
        "[{}] site={}\nIEPL_SHA3={}\nPoC_STARK={}\nACTION={}; EVA={}; EKM={}\nCHAIN_HASH={}\n",
        e.timestamp,
        e.site_id,
        render_hex(&e.policy_hash.0, style),
        render_hex(&e.poc_digest, style),
        e.action_id,
        e.eva_result.as_str(),
        e.ekm_result.as_str(),
        render_hex(&e.chain_hash, style),
    );
    if let Attachment::Shutdown(r) = &e.attachment {
        s.push_str(&format!(
            "SHUTDOWN_CERT={}\n",
            render_hex(&r.certificate.digest(), style)
        ));
    }
    s
}

/// Renders entries with sequence in `range`, blocks separated by blank lines.
pub fn export_cscr(
    entries: &[ChainedLogEntry],
    range: RangeInclusive<u64>,
    style: CscrStyle,
) -> Result<String, IlkError> {
    let blocks: Vec<String> = entries
        .iter()
        .filter(|e| range.contains(&e.sequence))
        .map(|e| render_cscr_block(e, style))
        .collect();
    if blocks.is_empty() {
        return Err(IlkError::RangeEmpty {
            from: *range.start(),
            to: *range.end(),
        });
    }
    Ok(blocks.join("\n"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CscrBlock {
    pub timestamp: Timestamp,
    pub site_id: String,
    pub iepl_sha3: String,
    pub poc: String,
    pub action_id: String,
    pub eva: EvaResult,
    pub ekm: EkmResult,
    pub chain_hash: String,
    pub shutdown_cert: Option<String>,
}

impl CscrBlock {
    /// Whether `entry` renders to this block (prefix match for display style).
    pub fn matches(&self, e: &ChainedLogEntry) -> bool {
        let hex_ok = |shown: &str, d: &Digest32| !shown.is_empty() && d.to_hex().starts_with(shown);
        let cert_ok = match (&self.shutdown_cert, &e.attachment) {
            (None, Attachment::Shutdown(_)) => false,
            (None, _) => true,
            (Some(c), Attachment::Shutdown(r)) => hex_ok(c, &r.certificate.digest()),
            (Some(_), _) => false,
        };
        self.timestamp == e.timestamp
            && self.site_id == e.site_id
            && hex_ok(&self.iepl_sha3, &e.policy_hash.0)
            && hex_ok(&self.poc, &e.poc_digest)
            && self.action_id == e.action_id
            && self.eva == e.eva_result
            && self.ekm == e.ekm_result
            && hex_ok(&self.chain_hash, &e.chain_hash)
            && cert_ok
    }
}

pub fn parse_cscr(text: &str) -> Result<Vec<CscrBlock>, IlkError> {
    let lines: Vec<(usize, &str)> = text.lines().enumerate().map(|(i, l)| (i + 1, l)).collect();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].1.trim().is_empty() {
            i += 1;
            continue;
        }
        let take = |k: usize, prefix: &str| -> Result<&str, IlkError> {
            let (n, line) = lines.get(i + k).copied().ok_or(IlkError::MalformedLog {
                line: lines.last().map_or(0, |l| l.0),
                message: "truncated block".into(),
            })?;
            line.strip_prefix(prefix)
                .ok_or_else(|| IlkError::MalformedLog {
                    line: n,
                    message: format!("expected `{prefix}`"),
                })
        };
        let header_line = lines[i].0;
        let bad = |n: usize, m: &str| IlkError::MalformedLog {
            line: n,
            message: m.to_string(),
        };
        let header = take(0, "[")?;
        let (ts, site) = header
            .split_once("] site=")
            .ok_or_else(|| bad(header_line, "bad header"))?;
        let timestamp = ts.parse().map_err(|_| bad(header_line, "bad timestamp"))?;
        let iepl = take(1, "IEPL_SHA3=")?;
        let poc = take(2, "PoC_STARK=")?;
        let action_line = take(3, "ACTION=")?;
        let (action_id, rest) = action_line
            .rsplit_once("; EVA=")
            .ok_or_else(|| bad(header_line + 3, "bad action line"))?;
        let (eva, ekm) = rest
            .split_once("; EKM=")
            .ok_or_else(|| bad(header_line + 3, "bad action line"))?;
        let eva = match eva {
            "PASS" => EvaResult::Pass,
            "FAIL" => EvaResult::Fail,
            _ => return Err(bad(header_line + 3, "bad EVA value")),
        };
        let ekm = match ekm {
            "COMMIT" => EkmResult::Commit,
            "VETO" => EkmResult::Veto,
            "LOCKDOWN" => EkmResult::Lockdown,
            _ => return Err(bad(header_line + 3, "bad EKM value")),
        };
        let chain = take(4, "CHAIN_HASH=")?;
        let mut consumed = 5;
        let shutdown_cert = match lines.get(i + 5) {
            Some((_, l)) if l.starts_with("SHUTDOWN_CERT=") => {
                consumed = 6;
                Some(l["SHUTDOWN_CERT=".len()..].to_string())
            }
            _ => None,
        };
        blocks.push(CscrBlock {
            timestamp,
            site_id: site.to_string(),
            iepl_sha3: iepl.to_string(),
            poc: poc.to_string(),
            action_id: action_id.to_string(),
            eva,
            ekm,
            chain_hash: chain.to_string(),
            shutdown_cert,
        });
        i += consumed;
    }
    Ok(blocks)
}

/// Checks CSCR blocks against the structured log: the log must verify, and
/// the blocks must render consecutive entries of it.
pub fn verify_cscr(
    blocks: &[CscrBlock],
    entries: &[ChainedLogEntry],
    keys: Option<&AuditKeys>,
) -> ChainVerificationReport {
    let report = verify_chain(entries, keys);
    if !report.intact {
        return report;
    }
    let Some(first) = blocks.first() else {
        return report;
    };
    let Some(start) = entries.iter().position(|e| {
        !first.chain_hash.is_empty() && e.chain_hash.to_hex().starts_with(&first.chain_hash)
    }) else {
        return ChainVerificationReport::broken(
            0,
            0,
            "first block not found in log".into(),
            report.head,
        );
    };
    for (k, block) in blocks.iter().enumerate() {
        match entries.get(start + k) {
            Some(e) if block.matches(e) => {}
            Some(e) => {
                return ChainVerificationReport::broken(
                    e.sequence,
                    k as u64,
                    "block does not match log entry".into(),
                    report.head,
                )
            }
            None => {
                let seq = entries[start].sequence + k as u64;
                return ChainVerificationReport::broken(
                    seq,
                    k as u64,
                    "block beyond end of log".into(),
                    report.head,
                );
            }
        }
    }
    report
}
