//! Action validation against the sealed charter, risk scoring, and runtime
//! integrity checks (policy-hash drift).

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::clock::Timestamp;
use crate::crypto::{sha3_256, Digest32, PolicyHash};
use crate::genesis::GenesisLock;
use crate::iepl::{self, Effect, PolicyDocument};

pub const FALLBACK_DENY: &str = "FALLBACK_DENY";
pub const PROHIBITED: &str = "PROHIBITED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Origin {
    #[default]
    Internal,
    ThirdParty,
}

/// A candidate emission. Only the payload's commitment enters the gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionProposal {
    pub action_id: String,
    pub category: String,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    #[serde(default)]
    pub resource: String,
    pub payload_digest: Digest32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_risk: Option<f64>,
    #[serde(default)]
    pub origin: Origin,
}

impl ActionProposal {
    pub fn new(action_id: &str, category: &str, payload: &[u8]) -> Self {
        Self {
            action_id: action_id.to_string(),
            category: category.to_string(),
            tags: BTreeSet::new(),
            resource: String::new(),
            payload_digest: sha3_256(payload),
            declared_risk: None,
            origin: Origin::Internal,
        }
    }

    pub fn with_risk(mut self, risk: f64) -> Self {
        self.declared_risk = Some(risk);
        self
    }

    pub fn with_resource(mut self, resource: &str) -> Self {
        self.resource = resource.to_string();
        self
    }

    pub fn with_tags(mut self, tags: &[&str]) -> Self {
        self.tags = tags.iter().map(|t| t.to_string()).collect();
        self
    }

    pub fn check(&self) -> Result<(), EvaError> {
        if self.action_id.is_empty() {
            return Err(EvaError::MalformedAction("action_id is empty".into()));
        }
        if self.category.is_empty() {
            return Err(EvaError::MalformedAction("category is empty".into()));
        }
        if let Some(r) = self.declared_risk {
            if !(0.0..=1.0).contains(&r) {
                return Err(EvaError::MalformedAction(format!(
                    "declared_risk {r} outside [0,1]"
                )));
            }
        }
        Ok(())
    }

    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(self).expect("action is serializable")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EvaError {
    #[error("malformed action: {0}")]
    MalformedAction(String),
    #[error(transparent)]
    Policy(#[from] iepl::IeplError),
}

/// Which part of the charter decided a verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "basis", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerdictBasis {
    Rule { rule_id: String, effect: Effect },
    Prohibited { category: String },
    FallbackDeny,
}

impl VerdictBasis {
    /// Label written into proofs and log entries.
    pub fn matched_rule(&self) -> &str {
        match self {
            VerdictBasis::Rule { rule_id, .. } => rule_id,
            VerdictBasis::Prohibited { .. } => PROHIBITED,
            VerdictBasis::FallbackDeny => FALLBACK_DENY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub compliant: bool,
    pub basis: VerdictBasis,
    pub uncertainty: f64,
    pub evaluated_against: PolicyHash,
}

impl Verdict {
    pub fn matched_rule(&self) -> &str {
        self.basis.matched_rule()
    }

    pub fn is_prohibited(&self) -> bool {
        matches!(self.basis, VerdictBasis::Prohibited { .. })
    }
}

/// Prohibited categories dominate; otherwise the first matching rule decides;
/// otherwise deny.
pub fn evaluate_rules(action: &ActionProposal, doc: &PolicyDocument) -> (bool, VerdictBasis) {
    if doc.prohibited_operations.contains(&action.category) {
        return (
            false,
            VerdictBasis::Prohibited {
                category: action.category.clone(),
            },
        );
    }
    for rule in &doc.rules {
        if rule
            .matcher
            .matches(&action.category, &action.tags, &action.resource)
        {
            let basis = VerdictBasis::Rule {
                rule_id: rule.rule_id.clone(),
                effect: rule.effect,
            };
            return (rule.effect == Effect::Allow, basis);
        }
    }
    (false, VerdictBasis::FallbackDeny)
}

/// Source of the uncertainty score when an action declares none.
pub trait RiskScorer: Send + Sync {
    fn score(&self, action: &ActionProposal) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantScorer(pub f64);

impl RiskScorer for ConstantScorer {
    fn score(&self, _action: &ActionProposal) -> f64 {
        self.0
    }
}

pub struct Eva {
    scorer: Box<dyn RiskScorer>,
}

impl Default for Eva {
    fn default() -> Self {
        Self::new(Box::new(ConstantScorer(0.0)))
    }
}

impl fmt::Debug for Eva {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Eva").finish_non_exhaustive()
    }
}

impl Eva {
    pub fn new(scorer: Box<dyn RiskScorer>) -> Self {
        Self { scorer }
    }

    pub fn uncertainty(&self, action: &ActionProposal) -> f64 {
        action
            .declared_risk
            .unwrap_or_else(|| self.scorer.score(action))
            .clamp(0.0, 1.0)
    }

    pub fn validate_action(
        &self,
        action: &ActionProposal,
        doc: &PolicyDocument,
    ) -> Result<Verdict, EvaError> {
        let sealed = iepl::seal(doc)?;
        self.validate_sealed(action, doc, sealed)
    }

    /// As [`Eva::validate_action`] with the document's seal already computed.
    pub fn validate_sealed(
        &self,
        action: &ActionProposal,
        doc: &PolicyDocument,
        sealed: PolicyHash,
    ) -> Result<Verdict, EvaError> {
        action.check()?;
        let (compliant, basis) = evaluate_rules(action, doc);
        Ok(Verdict {
            compliant,
            basis,
            uncertainty: self.uncertainty(action),
            evaluated_against: sealed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrityReport {
    pub expected_hash: PolicyHash,
    pub observed_hash: PolicyHash,
    pub intact: bool,
    pub checked_at: Timestamp,
}

/// Hash of the live document as it stands, without validating it first: a
/// tampered document may no longer be well-formed.
pub fn observed_policy_hash(doc: &PolicyDocument) -> PolicyHash {
    match canonical::to_canonical_bytes(doc) {
        Ok(bytes) => PolicyHash(sha3_256(&bytes)),
        Err(_) => PolicyHash(Digest32([0xff; 32])),
    }
}

pub fn check_integrity(
    live_policy: &PolicyDocument,
    lock: &GenesisLock,
    at: Timestamp,
) -> IntegrityReport {
    let observed = observed_policy_hash(live_policy);
    IntegrityReport {
        expected_hash: lock.policy_hash,
        observed_hash: observed,
        intact: observed == lock.policy_hash,
        checked_at: at,
    }
}
