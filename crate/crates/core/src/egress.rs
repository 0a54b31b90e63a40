//! Egress mediation for third-party emissions.
//!
//! Each emission must carry a client attestation: a signature over the
//! action, the policy hash the client believes is in force, and a fresh
//! nonce. Non-attested traffic is dropped; `threshold` consecutive drops
//! lock the gate down.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::canonical::Transcript;
use crate::crypto::{PolicyHash, PublicKey, Signature, SigningKey};
use crate::ekm::{BreachEvidence, Gate, PublishOutcome, ShutdownCertificate};
use crate::eva::{ActionProposal, Origin};

pub const DEFAULT_NON_ATTESTED_THRESHOLD: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attestation {
    pub client_id: String,
    pub claimed_policy_hash: PolicyHash,
    pub nonce: u64,
    pub signature: Signature,
}

impl Attestation {
    fn payload(
        client_id: &str,
        action: &ActionProposal,
        claimed: &PolicyHash,
        nonce: u64,
    ) -> Vec<u8> {
        let mut t = Transcript::new("aegis/egress-attestation/v1");
        t.push_str(client_id)
            .push(&action.to_canonical_bytes())
            .push(claimed.as_bytes())
            .push_u64(nonce);
        t.into_bytes()
    }

    pub fn sign(
        client_id: &str,
        action: &ActionProposal,
        claimed: PolicyHash,
        nonce: u64,
        key: &SigningKey,
    ) -> Self {
        Self {
            client_id: client_id.to_string(),
            claimed_policy_hash: claimed,
            nonce,
            signature: key.sign(&Self::payload(client_id, action, &claimed, nonce)),
        }
    }

    pub fn verify(&self, action: &ActionProposal, key: &PublicKey) -> bool {
        key.verify(
            &Self::payload(
                &self.client_id,
                action,
                &self.claimed_policy_hash,
                self.nonce,
            ),
            &self.signature,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgressRequest {
    pub action: ActionProposal,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attestation: Option<Attestation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DropReason {
    MissingAttestation,
    UnknownClient,
    BadSignature,
    ReplayedNonce,
    StalePolicyHash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MediationOutcome {
    Published {
        outcome: PublishOutcome,
    },
    Dropped {
        reason: DropReason,
        consecutive: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lockdown: Option<ShutdownCertificate>,
    },
}

#[derive(Debug, Clone)]
pub struct EgressMediator {
    clients: BTreeMap<String, PublicKey>,
    seen: BTreeSet<(String, u64)>,
    threshold: u32,
    consecutive: u32,
    dropped_total: u64,
}

impl EgressMediator {
    pub fn new(clients: BTreeMap<String, PublicKey>, threshold: u32) -> Self {
        Self {
            clients,
            seen: BTreeSet::new(),
            threshold: threshold.max(1),
            consecutive: 0,
            dropped_total: 0,
        }
    }

    pub fn dropped_total(&self) -> u64 {
        self.dropped_total
    }

    pub fn consecutive(&self) -> u32 {
        self.consecutive
    }

    fn check(&self, req: &EgressRequest, gate: &Gate) -> Result<(), DropReason> {
        let att = req
            .attestation
            .as_ref()
            .ok_or(DropReason::MissingAttestation)?;
        let key = self
            .clients
            .get(&att.client_id)
            .ok_or(DropReason::UnknownClient)?;
        if !att.verify(&req.action, key) {
            return Err(DropReason::BadSignature);
        }
        if self.seen.contains(&(att.client_id.clone(), att.nonce)) {
            return Err(DropReason::ReplayedNonce);
        }
        if att.claimed_policy_hash != gate.lock().policy_hash {
            return Err(DropReason::StalePolicyHash);
        }
        Ok(())
    }

    pub fn mediate(&mut self, gate: &mut Gate, req: &EgressRequest) -> MediationOutcome {
        match self.check(req, gate) {
            Ok(()) => {
                let att = req.attestation.as_ref().expect("checked");
                self.seen.insert((att.client_id.clone(), att.nonce));
                self.consecutive = 0;
                let mut action = req.action.clone();
                action.origin = Origin::ThirdParty;
                MediationOutcome::Published {
                    outcome: gate.publish(&action),
                }
            }
            Err(reason) => {
                self.consecutive += 1;
                self.dropped_total += 1;
                let lockdown = (self.consecutive >= self.threshold).then(|| {
                    gate.lockdown(
                        &format!("{} consecutive non-attested emissions", self.consecutive),
                        BreachEvidence::NonAttestedTraffic {
                            consecutive: self.consecutive,
                        },
                    )
                });
                MediationOutcome::Dropped {
                    reason,
                    consecutive: self.consecutive,
                    lockdown,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::Timestamp;
    use crate::ekm::{GateParts, Mode};
    use crate::genesis::{declare_genesis, HardwareIdentity};
    use crate::iepl::{fixtures::trial_charter, seal};
    use crate::ilk::Ilk;

    fn setup() -> (Gate, EgressMediator, SigningKey) {
        let policy = trial_charter();
        let hw = HardwareIdentity::from_parts("h", b"s");
        let lock = declare_genesis(
            &hw,
            seal(&policy).unwrap(),
            &SigningKey::derive("auctor"),
            Timestamp::from_unix(0),
        );
        let gate = Gate::new(GateParts::new(
            policy,
            lock,
            hw,
            SigningKey::derive("unit"),
            Ilk::in_memory(),
        ))
        .unwrap();
        let client = SigningKey::derive("client");
        let med = EgressMediator::new(
            [("c1".to_string(), client.public_key())]
                .into_iter()
                .collect(),
            DEFAULT_NON_ATTESTED_THRESHOLD,
        );
        (gate, med, client)
    }

    fn attested(gate: &Gate, key: &SigningKey, id: &str, nonce: u64) -> EgressRequest {
        let action = ActionProposal::new(id, "summarize_document", id.as_bytes());
        let att = Attestation::sign("c1", &action, gate.lock().policy_hash, nonce, key);
        EgressRequest {
            action,
            attestation: Some(att),
        }
    }

    #[test]
    fn attested_passes_and_resets() {
        let (mut gate, mut med, key) = setup();
        let bare = EgressRequest {
            action: ActionProposal::new("x", "summarize_document", b"x"),
            attestation: None,
        };
        assert!(matches!(
            med.mediate(&mut gate, &bare),
            MediationOutcome::Dropped { consecutive: 1, .. }
        ));
        assert!(matches!(
            med.mediate(&mut gate, &bare),
            MediationOutcome::Dropped { consecutive: 2, .. }
        ));
        let ok = attested(&gate, &key, "a1", 1);
        assert!(matches!(
            med.mediate(&mut gate, &ok),
            MediationOutcome::Published {
                outcome: PublishOutcome::Committed { .. }
            }
        ));
        assert_eq!(med.consecutive(), 0);
        assert!(matches!(
            med.mediate(&mut gate, &ok),
            MediationOutcome::Dropped {
                reason: DropReason::ReplayedNonce,
                ..
            }
        ));
        assert_eq!(gate.mode(), Mode::Operational);
    }

    #[test]
    fn threshold_triggers_lockdown() {
        let (mut gate, mut med, key) = setup();
        let mut forged = attested(&gate, &key, "a1", 1);
        forged.action.category = "query_database".into();
        let mut outcomes = Vec::new();
        for _ in 0..3 {
            outcomes.push(med.mediate(&mut gate, &forged));
        }
        assert!(matches!(
            outcomes[2],
            MediationOutcome::Dropped {
                reason: DropReason::BadSignature,
                consecutive: 3,
                lockdown: Some(_)
            }
        ));
        assert_eq!(gate.mode(), Mode::Lockdown);
        let ok = attested(&gate, &key, "a2", 2);
        assert!(matches!(
            med.mediate(&mut gate, &ok),
            MediationOutcome::Published {
                outcome: PublishOutcome::Lockdown { .. }
            }
        ));
    }
}
