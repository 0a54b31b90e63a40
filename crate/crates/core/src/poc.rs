//! Proof of Conduct: a non-interactive attestation that one decision was
//! evaluated against one sealed policy at one chain position.
//!
//! Backends are pluggable. The default `attest-v1` backend is a hash
//! commitment signed by the unit's runtime key; it is externally verifiable
//! from digests and public keys alone, but it is not zero-knowledge.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::Transcript;
use crate::clock::Timestamp;
use crate::crypto::{sha3_256, Digest32, PolicyHash, PublicKey, Signature, SigningKey};
use crate::eva::{ActionProposal, Verdict};

pub const ATTEST_V1: &str = "attest-v1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PocError {
    #[error("unknown proof backend `{0}`")]
    UnknownBackend(String),
}

/// The inputs a proof statement commits to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementInputs {
    pub payload_digest: Digest32,
    pub policy_hash: PolicyHash,
    pub verdict_bit: bool,
    pub matched_rule: String,
    pub prev_chain_hash: Digest32,
}

impl StatementInputs {
    pub fn new(action: &ActionProposal, verdict: &Verdict, prev_chain_hash: Digest32) -> Self {
        Self {
            payload_digest: action.payload_digest,
            policy_hash: verdict.evaluated_against,
            verdict_bit: verdict.compliant,
            matched_rule: verdict.matched_rule().to_string(),
            prev_chain_hash,
        }
    }

    /// SHA3-256 over payload digest, policy hash, verdict bit, matched rule
    /// and previous chain hash.
    pub fn digest(&self) -> Digest32 {
        let mut t = Transcript::new("aegis/poc-statement/v1");
        t.push(self.payload_digest.as_bytes())
            .push(self.policy_hash.as_bytes())
            .push(&[u8::from(self.verdict_bit)])
            .push_str(&self.matched_rule)
            .push(self.prev_chain_hash.as_bytes());
        sha3_256(t.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProofOfConduct {
    pub statement_digest: Digest32,
    pub unit_signature: Signature,
    pub backend_id: String,
    pub created_at: Timestamp,
}

impl ProofOfConduct {
    /// Digest shown as `PoC_STARK` in the constitutional record.
    pub fn digest(&self) -> Digest32 {
        let mut t = Transcript::new("aegis/poc/v1");
        t.push_str(&self.backend_id)
            .push(self.statement_digest.as_bytes())
            .push(&self.unit_signature.0)
            .push_str(&self.created_at.to_string());
        sha3_256(t.as_bytes())
    }
}

pub trait ProofBackend: Send + Sync {
    fn id(&self) -> &str;
    fn prove(&self, statement: &Digest32, unit_key: &SigningKey) -> Signature;
    fn verify(&self, statement: &Digest32, proof: &ProofOfConduct, unit_key: &PublicKey) -> bool;
}

/// Commitment plus Ed25519 signature.
#[derive(Debug, Default, Clone, Copy)]
pub struct AttestV1;

impl AttestV1 {
    fn message(statement: &Digest32) -> Vec<u8> {
        let mut t = Transcript::new("aegis/attest-v1");
        t.push(statement.as_bytes());
        t.into_bytes()
    }
}

impl ProofBackend for AttestV1 {
    fn id(&self) -> &str {
        ATTEST_V1
    }

    fn prove(&self, statement: &Digest32, unit_key: &SigningKey) -> Signature {
        unit_key.sign(&Self::message(statement))
    }

    fn verify(&self, statement: &Digest32, proof: &ProofOfConduct, unit_key: &PublicKey) -> bool {
        &proof.statement_digest == statement
            && unit_key.verify(&Self::message(statement), &proof.unit_signature)
    }
}

#[derive(Clone)]
pub struct BackendRegistry {
    backends: BTreeMap<String, Arc<dyn ProofBackend>>,
    default_id: String,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        let mut r = Self {
            backends: BTreeMap::new(),
            default_id: ATTEST_V1.to_string(),
        };
        r.register(Arc::new(AttestV1));
        r
    }
}

impl fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendRegistry")
            .field("backends", &self.backends.keys().collect::<Vec<_>>())
            .field("default", &self.default_id)
            .finish()
    }
}

impl BackendRegistry {
    pub fn register(&mut self, backend: Arc<dyn ProofBackend>) {
        self.backends.insert(backend.id().to_string(), backend);
    }

    pub fn set_default(&mut self, id: &str) -> Result<(), PocError> {
        if !self.backends.contains_key(id) {
            return Err(PocError::UnknownBackend(id.to_string()));
        }
        self.default_id = id.to_string();
        Ok(())
    }

    fn backend(&self, id: &str) -> Result<&Arc<dyn ProofBackend>, PocError> {
        self.backends
            .get(id)
            .ok_or_else(|| PocError::UnknownBackend(id.to_string()))
    }

    /// Generates a proof with the default backend. Needs no verifier input.
    pub fn generate_poc(
        &self,
        action: &ActionProposal,
        verdict: &Verdict,
        prev_chain_hash: Digest32,
        unit_key: &SigningKey,
        at: Timestamp,
    ) -> ProofOfConduct {
        let inputs = StatementInputs::new(action, verdict, prev_chain_hash);
        self.generate_for(&inputs, unit_key, at)
    }

    pub fn generate_for(
        &self,
        inputs: &StatementInputs,
        unit_key: &SigningKey,
        at: Timestamp,
    ) -> ProofOfConduct {
        let backend = self
            .backend(&self.default_id)
            .expect("default backend registered");
        let statement = inputs.digest();
        ProofOfConduct {
            statement_digest: statement,
            unit_signature: backend.prove(&statement, unit_key),
            backend_id: backend.id().to_string(),
            created_at: at,
        }
    }

    /// True iff the statement recomputes from `expected` and the backend
    /// accepts the proof under `unit_key`.
    pub fn verify_poc(
        &self,
        poc: &ProofOfConduct,
        expected: &StatementInputs,
        unit_key: &PublicKey,
    ) -> Result<bool, PocError> {
        let backend = self.backend(&poc.backend_id)?;
        let statement = expected.digest();
        Ok(poc.statement_digest == statement && backend.verify(&statement, poc, unit_key))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eva::Eva;
    use crate::iepl::fixtures::charter_min;
    use proptest::prelude::*;

    fn setup() -> (ActionProposal, Verdict, SigningKey) {
        let action = ActionProposal::new("a1", "redact_personal_data", b"hello");
        let verdict = Eva::default()
            .validate_action(&action, &charter_min())
            .unwrap();
        (action, verdict, SigningKey::derive("unit"))
    }

    #[test]
    fn roundtrip() {
        let (a, v, k) = setup();
        let reg = BackendRegistry::default();
        let poc = reg.generate_poc(&a, &v, Digest32::ZERO, &k, Timestamp::from_unix(1));
        let inputs = StatementInputs::new(&a, &v, Digest32::ZERO);
        assert!(reg.verify_poc(&poc, &inputs, &k.public_key()).unwrap());
        assert!(!reg
            .verify_poc(&poc, &inputs, &SigningKey::derive("other").public_key())
            .unwrap());
    }

    #[test]
    fn flipped_verdict_fails() {
        let (a, v, k) = setup();
        let reg = BackendRegistry::default();
        let poc = reg.generate_poc(&a, &v, Digest32::ZERO, &k, Timestamp::from_unix(1));
        let mut inputs = StatementInputs::new(&a, &v, Digest32::ZERO);
        inputs.verdict_bit = !inputs.verdict_bit;
        assert!(!reg.verify_poc(&poc, &inputs, &k.public_key()).unwrap());
    }

    #[test]
    fn tampered_policy_hash_fails() {
        let (a, v, k) = setup();
        let reg = BackendRegistry::default();
        let poc = reg.generate_poc(&a, &v, Digest32::ZERO, &k, Timestamp::from_unix(1));
        let mut inputs = StatementInputs::new(&a, &v, Digest32::ZERO);
        inputs.policy_hash = crate::iepl::seal(&charter_min().with_alpha(0.9)).unwrap();
        assert!(!reg.verify_poc(&poc, &inputs, &k.public_key()).unwrap());
    }

    #[test]
    fn unknown_backend() {
        let (a, v, k) = setup();
        let reg = BackendRegistry::default();
        let mut poc = reg.generate_poc(&a, &v, Digest32::ZERO, &k, Timestamp::from_unix(1));
        poc.backend_id = "stark-v9".into();
        let inputs = StatementInputs::new(&a, &v, Digest32::ZERO);
        assert_eq!(
            reg.verify_poc(&poc, &inputs, &k.public_key()),
            Err(PocError::UnknownBackend("stark-v9".into()))
        );
        let mut reg = reg;
        assert!(reg.set_default("stark-v9").is_err());
    }

    #[test]
    fn chain_position_changes_statement() {
        let (a, v, k) = setup();
        let reg = BackendRegistry::default();
        let prev2 = sha3_256(b"some earlier entry");
        let p1 = reg.generate_poc(&a, &v, Digest32::ZERO, &k, Timestamp::from_unix(1));
        let p2 = reg.generate_poc(&a, &v, prev2, &k, Timestamp::from_unix(1));
        assert_ne!(p1.statement_digest, p2.statement_digest);
    }

    proptest! {
        #[test]
        fn complete_and_sound(
            payload in prop::collection::vec(any::<u8>(), 0..64),
            prev in any::<[u8; 32]>(),
            bit in any::<bool>(),
            rule in "[a-z-]{1,12}",
            which in 0usize..5,
            flip in 0usize..256,
        ) {
            let reg = BackendRegistry::default();
            let key = SigningKey::derive("unit");
            let inputs = StatementInputs {
                payload_digest: sha3_256(&payload),
                policy_hash: PolicyHash(sha3_256(b"policy")),
                verdict_bit: bit,
                matched_rule: rule,
                prev_chain_hash: Digest32(prev),
            };
            let poc = reg.generate_for(&inputs, &key, Timestamp::from_unix(0));
            prop_assert!(reg.verify_poc(&poc, &inputs, &key.public_key()).unwrap());

            let mut m = inputs.clone();
            let (byte, bitpos) = (flip / 8 % 32, flip % 8);
            match which {
                0 => m.payload_digest.0[byte] ^= 1 << bitpos,
                1 => m.policy_hash.0 .0[byte] ^= 1 << bitpos,
                2 => m.verdict_bit = !m.verdict_bit,
                3 => m.matched_rule.push('x'),
                _ => m.prev_chain_hash.0[byte] ^= 1 << bitpos,
            }
            prop_assert!(!reg.verify_poc(&poc, &m, &key.public_key()).unwrap());
        }
    }
}
