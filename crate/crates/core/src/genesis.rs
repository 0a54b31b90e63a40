//! The Genesis Lock: trust root binding host identity, the sealed charter and
//! the founding authority's signature. Verified at every boot; a failed check
//! halts the unit.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{self, Transcript};
use crate::clock::Timestamp;
use crate::crypto::{sha3_256, Digest32, PolicyHash, PublicKey, Signature, SigningKey};
use crate::iepl::QuorumConfig;
use crate::senatus::{QuorumCertificate, ValidatorRegistry};

pub const SALT_FILE: &str = "host.salt";
const LOCK_DOMAIN: &str = "aegis/genesis-lock/v1";

/// Stable host identity: digest over hostname and a persisted random salt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardwareIdentity {
    pub fingerprint: Digest32,
    pub site_id: String,
}

impl HardwareIdentity {
    pub fn from_parts(hostname: &str, salt: &[u8]) -> Self {
        let mut t = Transcript::new("aegis/hardware-identity/v1");
        t.push_str(hostname).push(salt);
        Self::from_fingerprint(sha3_256(t.as_bytes()))
    }

    pub fn from_fingerprint(fingerprint: Digest32) -> Self {
        Self {
            site_id: fingerprint.short_hex(8),
            fingerprint,
        }
    }

    /// Reads the salt file in `state_dir`, creating it if absent.
    pub fn load_or_create(state_dir: &Path) -> io::Result<Self> {
        let path = state_dir.join(SALT_FILE);
        if !path.exists() {
            let mut salt = [0u8; 32];
            rand::thread_rng().fill_bytes(&mut salt);
            fs::write(&path, format!("{}\n", hex::encode(salt)))?;
        }
        Self::load(state_dir)
    }

    /// Reads the salt file; a missing salt is an error, not a fresh identity.
    pub fn load(state_dir: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(state_dir.join(SALT_FILE))?;
        let salt =
            hex::decode(text.trim()).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        let host = gethostname::gethostname();
        Ok(Self::from_parts(&host.to_string_lossy(), &salt))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenesisLock {
    pub hardware: HardwareIdentity,
    pub policy_hash: PolicyHash,
    pub auctor_public_key: PublicKey,
    pub declaration_timestamp: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub redeclaration_of: Option<Digest32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quorum_certificate: Option<QuorumCertificate>,
    pub auctor_signature: Signature,
}

impl GenesisLock {
    /// Bytes covered by the Auctor signature: fingerprint, policy hash and
    /// timestamp, plus the prior-lock digest and certificate digest for a
    /// redeclaration.
    fn signing_payload(
        hardware: &HardwareIdentity,
        policy_hash: &PolicyHash,
        at: Timestamp,
        redeclaration: Option<(&Digest32, &QuorumCertificate)>,
    ) -> Vec<u8> {
        let mut t = Transcript::new(LOCK_DOMAIN);
        t.push(hardware.fingerprint.as_bytes())
            .push(policy_hash.as_bytes())
            .push_str(&at.to_string());
        if let Some((prior, cert)) = redeclaration {
            t.push(prior.as_bytes()).push(cert.digest().as_bytes());
        }
        t.into_bytes()
    }

    fn payload(&self) -> Vec<u8> {
        let redecl = match (&self.redeclaration_of, &self.quorum_certificate) {
            (Some(p), Some(c)) => Some((p, c)),
            _ => None,
        };
        Self::signing_payload(
            &self.hardware,
            &self.policy_hash,
            self.declaration_timestamp,
            redecl,
        )
    }

    pub fn signature_valid(&self) -> bool {
        self.auctor_public_key
            .verify(&self.payload(), &self.auctor_signature)
    }

    /// Signs the lock's current fields with `key`, replacing the authority.
    /// Genuine locks come from [`declare_genesis`] and [`redeclare`]; this
    /// exists to build forgeries for verification tests.
    pub fn resign(&mut self, key: &SigningKey) {
        self.auctor_public_key = key.public_key();
        self.auctor_signature = key.sign(&self.payload());
    }

    /// Digest identifying this lock, used by `redeclaration_of` links.
    pub fn digest(&self) -> Digest32 {
        sha3_256(&canonical::to_canonical_bytes(self).expect("lock is serializable"))
    }

    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(self).expect("lock is serializable")
    }

    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, canonical::CanonicalError> {
        canonical::from_canonical_slice(bytes)
    }
}

pub fn declare_genesis(
    hardware: &HardwareIdentity,
    policy_hash: PolicyHash,
    auctor_key: &SigningKey,
    at: Timestamp,
) -> GenesisLock {
    let payload = GenesisLock::signing_payload(hardware, &policy_hash, at, None);
    GenesisLock {
        hardware: hardware.clone(),
        policy_hash,
        auctor_public_key: auctor_key.public_key(),
        declaration_timestamp: at,
        redeclaration_of: None,
        quorum_certificate: None,
        auctor_signature: auctor_key.sign(&payload),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HaltReason {
    InvalidSignature,
    UnknownAuthority,
    HardwareMismatch,
    PolicyHashMismatch,
    MissingQuorumCertificate,
    UnknownPriorLock,
    AuthorityChanged,
    LineageMismatch,
    QuorumInsufficient,
    RootMismatch,
}

impl fmt::Display for HaltReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit enum");
        f.write_str(s.as_str().unwrap_or("HALT"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenesisVerdict {
    Verified,
    Halt(HaltReason),
}

impl GenesisVerdict {
    pub fn is_verified(&self) -> bool {
        matches!(self, GenesisVerdict::Verified)
    }
}

/// What verification needs beyond the lock itself.
#[derive(Debug, Clone, Default)]
pub struct TrustAnchors {
    /// When set, the lock must be signed by this key.
    pub founding_key: Option<PublicKey>,
    /// When set, the redeclaration chain must end at the lock with this digest.
    pub genesis_digest: Option<Digest32>,
    /// Earlier locks, looked up by digest when following redeclarations.
    pub prior_locks: Vec<GenesisLock>,
    /// Keys of every validator that may sign a quorum certificate.
    pub validators: ValidatorRegistry,
    pub quorum: QuorumConfig,
}

/// Total: every failure is a `Halt` naming the first check that failed.
pub fn verify_genesis(
    lock: &GenesisLock,
    current_hw: &HardwareIdentity,
    current_policy_hash: &PolicyHash,
    anchors: &TrustAnchors,
) -> GenesisVerdict {
    match check_lock(lock, current_hw, current_policy_hash, anchors)
        .and_then(|()| verify_redeclaration_chain(lock, anchors))
    {
        Ok(()) => GenesisVerdict::Verified,
        Err(reason) => GenesisVerdict::Halt(reason),
    }
}

/// As [`verify_genesis`], but trusts `prior` as already verified and checks
/// only the single link from `lock` to it.
pub fn verify_successor(
    lock: &GenesisLock,
    prior: &GenesisLock,
    current_hw: &HardwareIdentity,
    current_policy_hash: &PolicyHash,
    anchors: &TrustAnchors,
) -> GenesisVerdict {
    let result = check_lock(lock, current_hw, current_policy_hash, anchors).and_then(|()| {
        match (&lock.redeclaration_of, &lock.quorum_certificate) {
            (Some(d), Some(cert)) if *d == prior.digest() => check_link(lock, prior, cert, anchors),
            (Some(_), Some(_)) => Err(HaltReason::UnknownPriorLock),
            _ => Err(HaltReason::MissingQuorumCertificate),
        }
    });
    match result {
        Ok(()) => GenesisVerdict::Verified,
        Err(reason) => GenesisVerdict::Halt(reason),
    }
}

fn check_lock(
    lock: &GenesisLock,
    current_hw: &HardwareIdentity,
    current_policy_hash: &PolicyHash,
    anchors: &TrustAnchors,
) -> Result<(), HaltReason> {
    if !lock.signature_valid() {
        return Err(HaltReason::InvalidSignature);
    }
    if let Some(key) = &anchors.founding_key {
        if key != &lock.auctor_public_key {
            return Err(HaltReason::UnknownAuthority);
        }
    }
    if lock.hardware.fingerprint != current_hw.fingerprint {
        return Err(HaltReason::HardwareMismatch);
    }
    if &lock.policy_hash != current_policy_hash {
        return Err(HaltReason::PolicyHashMismatch);
    }
    Ok(())
}

fn check_link(
    current: &GenesisLock,
    prior: &GenesisLock,
    cert: &QuorumCertificate,
    anchors: &TrustAnchors,
) -> Result<(), HaltReason> {
    if !prior.signature_valid() {
        return Err(HaltReason::InvalidSignature);
    }
    if prior.auctor_public_key != current.auctor_public_key {
        return Err(HaltReason::AuthorityChanged);
    }
    if prior.hardware != current.hardware {
        return Err(HaltReason::HardwareMismatch);
    }
    if cert.base_hash != prior.policy_hash || cert.new_hash != current.policy_hash {
        return Err(HaltReason::LineageMismatch);
    }
    if cert.verify(&anchors.validators, &anchors.quorum).is_err() {
        return Err(HaltReason::QuorumInsufficient);
    }
    Ok(())
}

/// Follows `redeclaration_of` links back to the genesis declaration, checking
/// each link's certificate and signature.
fn verify_redeclaration_chain(
    lock: &GenesisLock,
    anchors: &TrustAnchors,
) -> Result<(), HaltReason> {
    let digests: Vec<Digest32> = anchors
        .prior_locks
        .iter()
        .map(GenesisLock::digest)
        .collect();
    let mut current = lock;
    // A chain longer than the history would have to revisit a lock.
    for _ in 0..=anchors.prior_locks.len() {
        let (prior_digest, cert) = match (&current.redeclaration_of, &current.quorum_certificate) {
            (None, None) => {
                return match anchors.genesis_digest {
                    Some(root) if root != current.digest() => Err(HaltReason::RootMismatch),
                    _ => Ok(()),
                }
            }
            (Some(p), Some(c)) => (p, c),
            _ => return Err(HaltReason::MissingQuorumCertificate),
        };
        let idx = digests
            .iter()
            .position(|d| d == prior_digest)
            .ok_or(HaltReason::UnknownPriorLock)?;
        let prior = &anchors.prior_locks[idx];
        check_link(current, prior, cert, anchors)?;
        current = prior;
    }
    Err(HaltReason::UnknownPriorLock)
}

/// Number of redeclaration links from `lock` back to its genesis declaration.
pub fn redeclaration_depth(lock: &GenesisLock, history: &[GenesisLock]) -> Option<usize> {
    let mut current = lock;
    for depth in 0..=history.len() {
        match &current.redeclaration_of {
            None => return Some(depth),
            Some(d) => current = history.iter().find(|l| &l.digest() == d)?,
        }
    }
    None
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenesisError {
    #[error("quorum certificate does not carry enough valid approvals")]
    QuorumInsufficient,
    #[error("certificate base hash {cert_base} does not match prior lock policy {prior}")]
    LineageMismatch {
        cert_base: PolicyHash,
        prior: PolicyHash,
    },
    #[error("redeclaration must be signed by the founding authority")]
    AuthorityMismatch,
}

/// Reseals the trust root under a quorum-approved policy hash.
pub fn redeclare(
    prior: &GenesisLock,
    new_policy_hash: PolicyHash,
    cert: &QuorumCertificate,
    auctor_key: &SigningKey,
    validators: &ValidatorRegistry,
    quorum: &QuorumConfig,
    at: Timestamp,
) -> Result<GenesisLock, GenesisError> {
    if auctor_key.public_key() != prior.auctor_public_key {
        return Err(GenesisError::AuthorityMismatch);
    }
    if cert.base_hash != prior.policy_hash {
        return Err(GenesisError::LineageMismatch {
            cert_base: cert.base_hash,
            prior: prior.policy_hash,
        });
    }
    if cert.new_hash != new_policy_hash {
        return Err(GenesisError::LineageMismatch {
            cert_base: cert.new_hash,
            prior: new_policy_hash,
        });
    }
    cert.verify(validators, quorum)
        .map_err(|_| GenesisError::QuorumInsufficient)?;

    let prior_digest = prior.digest();
    let payload = GenesisLock::signing_payload(
        &prior.hardware,
        &new_policy_hash,
        at,
        Some((&prior_digest, cert)),
    );
    Ok(GenesisLock {
        hardware: prior.hardware.clone(),
        policy_hash: new_policy_hash,
        auctor_public_key: prior.auctor_public_key,
        declaration_timestamp: at,
        redeclaration_of: Some(prior_digest),
        quorum_certificate: Some(cert.clone()),
        auctor_signature: auctor_key.sign(&payload),
    })
}
