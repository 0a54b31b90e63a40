//! Policy charter model: ordered first-match rules, prohibited operation
//! categories, the risk threshold, quorum parameters and amendment lineage.
//!
//! Charters are stored as canonical text (`.iepl`). The seal of a charter is
//! SHA3-256 over that text, and every downstream signature binds to it.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{self, CanonicalError};
use crate::clock::Timestamp;
use crate::crypto::{sha3_256, PolicyHash, PublicKey};

pub const DEFAULT_ALPHA: f64 = 0.2;
pub const DEFAULT_VALIDATORS: u32 = 5;
pub const DEFAULT_QUORUM: u32 = 3;
pub const DEFAULT_EPOCH_LENGTH: u64 = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum IeplError {
    #[error("malformed policy document: {0}")]
    MalformedDocument(String),
    #[error("amendment base hash {proposed} does not match current seal {current}")]
    BaseHashMismatch {
        proposed: PolicyHash,
        current: PolicyHash,
    },
    #[error("amendment edits immutable field `{0}`")]
    ImmutableFieldEdit(&'static str),
    #[error("amendment has no edits")]
    EmptyAmendment,
    #[error("amendment references unknown rule `{0}`")]
    UnknownRule(String),
}

impl From<CanonicalError> for IeplError {
    fn from(e: CanonicalError) -> Self {
        IeplError::MalformedDocument(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Effect {
    Allow,
    Deny,
    Defer,
}

/// Predicate over action fields. Absent fields match anything; `tags` must be
/// a subset of the action's tags; `resource` is a glob pattern.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleMatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub tags: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource: Option<String>,
}

impl RuleMatch {
    pub fn any() -> Self {
        Self::default()
    }

    pub fn category(category: &str) -> Self {
        Self {
            category: Some(category.to_string()),
            ..Self::default()
        }
    }

    pub fn matches(&self, category: &str, tags: &BTreeSet<String>, resource: &str) -> bool {
        if let Some(c) = &self.category {
            if c != category {
                return false;
            }
        }
        if !self.tags.is_subset(tags) {
            return false;
        }
        match &self.resource {
            // Patterns are checked by validate(); an invalid one never matches.
            Some(pat) => glob::Pattern::new(pat)
                .map(|p| p.matches(resource))
                .unwrap_or(false),
            None => true,
        }
    }
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyRule {
    pub rule_id: String,
    #[serde(rename = "match")]
    pub matcher: RuleMatch,
    pub effect: Effect,
    /// Evolvable weighting. Carried and sealed with the rule; it does not
    /// change evaluation order or outcome.
    #[serde(default = "default_weight")]
    pub weight: f64,
}

impl PolicyRule {
    pub fn new(rule_id: &str, matcher: RuleMatch, effect: Effect) -> Self {
        Self {
            rule_id: rule_id.to_string(),
            matcher,
            effect,
            weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuorumConfig {
    pub n_validators: u32,
    pub quorum_q: u32,
    pub epoch_length: u64,
    pub byzantine_bound_f: u32,
}

impl QuorumConfig {
    pub fn new(n_validators: u32, quorum_q: u32, epoch_length: u64) -> Self {
        Self {
            n_validators,
            quorum_q,
            epoch_length,
            byzantine_bound_f: n_validators.saturating_sub(1) / 3,
        }
    }

    fn validate(&self) -> Result<(), IeplError> {
        let bad = |m: &str| Err(IeplError::MalformedDocument(m.to_string()));
        if self.n_validators == 0 || self.quorum_q == 0 || self.epoch_length == 0 {
            return bad("quorum parameters must be positive");
        }
        if self.quorum_q > self.n_validators {
            return bad("quorum_q exceeds n_validators");
        }
        if self.byzantine_bound_f != (self.n_validators - 1) / 3 {
            return bad("byzantine_bound_f must equal floor((N-1)/3)");
        }
        Ok(())
    }
}

impl Default for QuorumConfig {
    fn default() -> Self {
        Self::new(DEFAULT_VALIDATORS, DEFAULT_QUORUM, DEFAULT_EPOCH_LENGTH)
    }
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDocument {
    pub charter_id: String,
    pub version: u64,
    pub rules: Vec<PolicyRule>,
    #[serde(default)]
    pub prohibited_operations: BTreeSet<String>,
    #[serde(default = "default_alpha")]
    pub risk_threshold_alpha: f64,
    #[serde(default)]
    pub quorum_config: QuorumConfig,
    #[serde(default)]
    pub lineage: Vec<PolicyHash>,
}

impl PolicyDocument {
    /// A version-1 charter with no lineage.
    pub fn genesis(charter_id: &str, rules: Vec<PolicyRule>) -> Self {
        Self {
            charter_id: charter_id.to_string(),
            version: 1,
            rules,
            prohibited_operations: BTreeSet::new(),
            risk_threshold_alpha: DEFAULT_ALPHA,
            quorum_config: QuorumConfig::default(),
            lineage: Vec::new(),
        }
    }

    pub fn with_prohibited(mut self, categories: &[&str]) -> Self {
        self.prohibited_operations
            .extend(categories.iter().map(|c| c.to_string()));
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.risk_threshold_alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<(), IeplError> {
        let bad = |m: String| Err(IeplError::MalformedDocument(m));
        if self.charter_id.is_empty() {
            return bad("charter_id is empty".into());
        }
        if self.version == 0 {
            return bad("version starts at 1".into());
        }
        if self.rules.is_empty() {
            return bad("rules list is empty".into());
        }
        let mut ids = BTreeSet::new();
        for rule in &self.rules {
            if rule.rule_id.is_empty() {
                return bad("empty rule_id".into());
            }
            if !ids.insert(rule.rule_id.as_str()) {
                return bad(format!("duplicate rule_id `{}`", rule.rule_id));
            }
            if !rule.weight.is_finite() {
                return bad(format!("rule `{}` has non-finite weight", rule.rule_id));
            }
            if let Some(pat) = &rule.matcher.resource {
                if let Err(e) = glob::Pattern::new(pat) {
                    return bad(format!("rule `{}` resource pattern: {e}", rule.rule_id));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.risk_threshold_alpha) {
            return bad(format!(
                "risk_threshold_alpha {} outside [0,1]",
                self.risk_threshold_alpha
            ));
        }
        self.quorum_config.validate()?;
        if self.lineage.len() as u64 != self.version - 1 {
            return bad(format!(
                "lineage length {} != version - 1 ({})",
                self.lineage.len(),
                self.version - 1
            ));
        }
        Ok(())
    }

    pub fn rule(&self, rule_id: &str) -> Option<&PolicyRule> {
        self.rules.iter().find(|r| r.rule_id == rule_id)
    }
}

/// Canonical bytes of a well-formed document.
pub fn canonicalize(doc: &PolicyDocument) -> Result<Vec<u8>, IeplError> {
    doc.validate()?;
    Ok(canonical::to_canonical_bytes(doc)?)
}

pub fn seal(doc: &PolicyDocument) -> Result<PolicyHash, IeplError> {
    Ok(PolicyHash(sha3_256(&canonicalize(doc)?)))
}

/// Parses charter text and checks the document invariants.
pub fn parse(bytes: &[u8]) -> Result<PolicyDocument, IeplError> {
    let doc: PolicyDocument = canonical::from_canonical_slice(bytes)?;
    doc.validate()?;
    Ok(doc)
}

/// A single field-level change proposed by an amendment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum AmendmentEdit {
    AddRule {
        rule: PolicyRule,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        index: Option<usize>,
    },
    RemoveRule {
        rule_id: String,
    },
    ReplaceRule {
        rule: PolicyRule,
    },
    SetRiskThreshold {
        alpha: f64,
    },
    SetEpochLength {
        epoch_length: u64,
    },
    SetRuleWeight {
        rule_id: String,
        weight: f64,
    },
    AddProhibited {
        category: String,
    },
    RemoveProhibited {
        category: String,
    },
    /// Replaces a validator's verification key in the roster. Carries no
    /// document change beyond the version bump.
    RotateValidatorKey {
        validator_id: String,
        public_key: PublicKey,
    },
    SetCharterId {
        charter_id: String,
    },
    SetQuorum {
        n_validators: u32,
        quorum_q: u32,
    },
}

impl AmendmentEdit {
    /// Name of the immutable field this edit touches, if any.
    pub fn immutable_field(&self) -> Option<&'static str> {
        match self {
            AmendmentEdit::SetCharterId { .. } => Some("charter_id"),
            AmendmentEdit::SetQuorum { .. } => Some("quorum_config"),
            _ => None,
        }
    }

    pub fn touches_validator(&self, validator_id: &str) -> bool {
        matches!(self, AmendmentEdit::RotateValidatorKey { validator_id: v, .. } if v == validator_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmendmentProposal {
    pub proposal_id: String,
    pub base_hash: PolicyHash,
    pub edits: Vec<AmendmentEdit>,
    pub justification: String,
    pub proposed_at: Timestamp,
}

impl AmendmentProposal {
    pub fn evolvable_only(&self) -> Result<(), IeplError> {
        match self.edits.iter().find_map(AmendmentEdit::immutable_field) {
            Some(field) => Err(IeplError::ImmutableFieldEdit(field)),
            None => Ok(()),
        }
    }
}

/// Applies an amendment, returning the next version. The input is untouched.
pub fn apply_amendment(
    doc: &PolicyDocument,
    amendment: &AmendmentProposal,
) -> Result<PolicyDocument, IeplError> {
    let current = seal(doc)?;
    if amendment.base_hash != current {
        return Err(IeplError::BaseHashMismatch {
            proposed: amendment.base_hash,
            current,
        });
    }
    amendment.evolvable_only()?;
    if amendment.edits.is_empty() {
        return Err(IeplError::EmptyAmendment);
    }

    let mut next = doc.clone();
    for edit in &amendment.edits {
        match edit {
            AmendmentEdit::AddRule { rule, index } => {
                let at = index.unwrap_or(next.rules.len()).min(next.rules.len());
                next.rules.insert(at, rule.clone());
            }
            AmendmentEdit::RemoveRule { rule_id } => {
                let pos = rule_position(&next, rule_id)?;
                next.rules.remove(pos);
            }
            AmendmentEdit::ReplaceRule { rule } => {
                let pos = rule_position(&next, &rule.rule_id)?;
                next.rules[pos] = rule.clone();
            }
            AmendmentEdit::SetRiskThreshold { alpha } => next.risk_threshold_alpha = *alpha,
            AmendmentEdit::SetEpochLength { epoch_length } => {
                next.quorum_config.epoch_length = *epoch_length
            }
            AmendmentEdit::SetRuleWeight { rule_id, weight } => {
                let pos = rule_position(&next, rule_id)?;
                next.rules[pos].weight = *weight;
            }
            AmendmentEdit::AddProhibited { category } => {
                next.prohibited_operations.insert(category.clone());
            }
            AmendmentEdit::RemoveProhibited { category } => {
                next.prohibited_operations.remove(category);
            }
            AmendmentEdit::RotateValidatorKey { .. } => {}
            AmendmentEdit::SetCharterId { .. } | AmendmentEdit::SetQuorum { .. } => {
                unreachable!("rejected by evolvable_only")
            }
        }
    }
    next.version += 1;
    next.lineage.push(current);
    next.validate()?;
    Ok(next)
}

fn rule_position(doc: &PolicyDocument, rule_id: &str) -> Result<usize, IeplError> {
    doc.rules
        .iter()
        .position(|r| r.rule_id == rule_id)
        .ok_or_else(|| IeplError::UnknownRule(rule_id.to_string()))
}

/// Checks that `lineage` links each version to its predecessor: `history[i]`
/// must seal to `current.lineage[i]` and carry lineage `current.lineage[..i]`.
pub fn verify_lineage(current: &PolicyDocument, history: &[PolicyDocument]) -> bool {
    if history.len() != current.lineage.len() {
        return false;
    }
    history.iter().enumerate().all(|(i, prior)| {
        prior.version == i as u64 + 1
            && prior.lineage == current.lineage[..i]
            && seal(prior)
                .map(|h| h == current.lineage[i])
                .unwrap_or(false)
    })
}

/// Charters used by tests, examples and the experiment harness.
pub mod fixtures {
    use super::*;

    /// One allow-all rule, alpha 0.2, N=5 / q=3.
    pub fn charter_min() -> PolicyDocument {
        PolicyDocument::genesis(
            "charter_min",
            vec![PolicyRule::new(
                "allow-all",
                RuleMatch::any(),
                Effect::Allow,
            )],
        )
    }

    /// Categories referenced by [`trial_charter`].
    pub const ALLOWED_CATEGORIES: &[&str] = &[
        "redact_personal_data",
        "summarize_document",
        "send_notification",
        "query_database",
    ];
    pub const DENIED_CATEGORIES: &[&str] = &["exfiltrate_credentials", "bulk_delete"];
    pub const DEFERRED_CATEGORIES: &[&str] = &["external_payment"];
    pub const UNMATCHED_CATEGORIES: &[&str] = &["modify_own_policy", "disable_logging"];
    pub const PROHIBITED_CATEGORIES: &[&str] = &["irreversible_logic", "self_replication"];

    /// A charter with allow, deny and defer rules, two prohibited categories
    /// and default-deny for anything unmatched.
    pub fn trial_charter() -> PolicyDocument {
        let mut rules = vec![
            PolicyRule::new(
                "deny-pii-export",
                RuleMatch {
                    category: Some("send_notification".into()),
                    tags: ["pii".to_string()].into(),
                    resource: Some("external/*".into()),
                },
                Effect::Deny,
            ),
            PolicyRule::new(
                "deny-exfiltration",
                RuleMatch::category("exfiltrate_credentials"),
                Effect::Deny,
            ),
            PolicyRule::new(
                "deny-bulk-delete",
                RuleMatch::category("bulk_delete"),
                Effect::Deny,
            ),
            PolicyRule::new(
                "defer-payment",
                RuleMatch::category("external_payment"),
                Effect::Defer,
            ),
        ];
        for c in ALLOWED_CATEGORIES {
            rules.push(PolicyRule::new(
                &format!("allow-{c}"),
                RuleMatch::category(c),
                Effect::Allow,
            ));
        }
        PolicyDocument::genesis("civitas-trial", rules).with_prohibited(PROHIBITED_CATEGORIES)
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn proposal(doc: &PolicyDocument, edits: Vec<AmendmentEdit>) -> AmendmentProposal {
        AmendmentProposal {
            proposal_id: "p1".into(),
            base_hash: seal(doc).unwrap(),
            edits,
            justification: "test".into(),
            proposed_at: Timestamp::from_unix(0),
        }
    }

    #[test]
    fn genesis_bytes_contain_version_one() {
        let bytes = canonicalize(&charter_min()).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains("\"version\":1"));
        assert!(text.contains("\"lineage\":[]"));
    }

    #[test]
    fn field_order_does_not_change_bytes() {
        let a = r#"{"version":1,"charter_id":"c","rules":[{"rule_id":"r","match":{},"effect":"ALLOW"}],"lineage":[],"risk_threshold_alpha":0.2,"prohibited_operations":["b","a"],"quorum_config":{"n_validators":5,"quorum_q":3,"epoch_length":10000,"byzantine_bound_f":1}}"#;
        let b = r#"{"charter_id":"c","quorum_config":{"byzantine_bound_f":1,"epoch_length":10000,"quorum_q":3,"n_validators":5},"risk_threshold_alpha":0.2,"lineage":[],"prohibited_operations":["a","b"],"rules":[{"effect":"ALLOW","match":{},"rule_id":"r"}],"version":1}"#;
        let da = parse(a.as_bytes()).unwrap();
        let db = parse(b.as_bytes()).unwrap();
        assert_eq!(canonicalize(&da).unwrap(), canonicalize(&db).unwrap());
    }

    #[test]
    fn alpha_defaults_when_absent() {
        let text = r#"{"charter_id":"c","version":1,"rules":[{"rule_id":"r","match":{},"effect":"DENY"}]}"#;
        let doc = parse(text.as_bytes()).unwrap();
        assert_eq!(doc.risk_threshold_alpha, 0.2);
        assert_eq!(doc.quorum_config, QuorumConfig::default());
    }

    #[test]
    fn invariants_enforced() {
        let mut d = charter_min();
        d.rules.clear();
        assert!(matches!(
            canonicalize(&d),
            Err(IeplError::MalformedDocument(_))
        ));

        let mut d = charter_min();
        d.rules.push(d.rules[0].clone());
        assert!(seal(&d).is_err());

        assert!(seal(&charter_min().with_alpha(1.5)).is_err());
        assert!(seal(&charter_min().with_alpha(1.0)).is_ok());

        let mut d = charter_min();
        d.version = 2;
        assert!(seal(&d).is_err());

        let mut d = charter_min();
        d.quorum_config.quorum_q = 6;
        assert!(seal(&d).is_err());

        let mut d = charter_min();
        d.quorum_config.byzantine_bound_f = 2;
        assert!(seal(&d).is_err());
    }

    #[test]
    fn seal_deterministic_and_sensitive() {
        let d = charter_min();
        assert_eq!(seal(&d).unwrap(), seal(&d).unwrap());
        assert_ne!(seal(&d).unwrap(), seal(&d.clone().with_alpha(0.3)).unwrap());
        assert_eq!(seal(&d).unwrap().to_hex().len(), 64);
    }

    #[test]
    fn amendment_adds_rule() {
        let v1 = charter_min();
        let p = proposal(
            &v1,
            vec![AmendmentEdit::AddRule {
                rule: PolicyRule::new("deny-x", RuleMatch::category("x"), Effect::Deny),
                index: Some(0),
            }],
        );
        let v2 = apply_amendment(&v1, &p).unwrap();
        assert_eq!(v2.version, 2);
        assert_eq!(v2.lineage, vec![seal(&v1).unwrap()]);
        assert_eq!(v2.rules[0].rule_id, "deny-x");
        assert_eq!(v1, charter_min());
        assert_ne!(seal(&v1).unwrap(), seal(&v2).unwrap());
        assert!(verify_lineage(&v2, &[v1]));
    }

    #[test]
    fn stale_base_hash_rejected() {
        let v1 = charter_min();
        let mut p = proposal(&v1, vec![AmendmentEdit::SetRiskThreshold { alpha: 0.1 }]);
        let v2 = apply_amendment(&v1, &p).unwrap();
        p.proposal_id = "p2".into();
        assert!(matches!(
            apply_amendment(&v2, &p),
            Err(IeplError::BaseHashMismatch { .. })
        ));
    }

    #[test]
    fn immutable_edits_rejected() {
        let v1 = charter_min();
        let p = proposal(
            &v1,
            vec![AmendmentEdit::SetCharterId {
                charter_id: "other".into(),
            }],
        );
        assert_eq!(
            apply_amendment(&v1, &p),
            Err(IeplError::ImmutableFieldEdit("charter_id"))
        );
        let p = proposal(
            &v1,
            vec![AmendmentEdit::SetQuorum {
                n_validators: 7,
                quorum_q: 2,
            }],
        );
        assert_eq!(
            apply_amendment(&v1, &p),
            Err(IeplError::ImmutableFieldEdit("quorum_config"))
        );
    }

    #[test]
    fn empty_and_invalid_amendments() {
        let v1 = charter_min();
        assert_eq!(
            apply_amendment(&v1, &proposal(&v1, vec![])),
            Err(IeplError::EmptyAmendment)
        );
        let p = proposal(
            &v1,
            vec![AmendmentEdit::RemoveRule {
                rule_id: "nope".into(),
            }],
        );
        assert_eq!(
            apply_amendment(&v1, &p),
            Err(IeplError::UnknownRule("nope".into()))
        );
        // removing the only rule leaves an invalid document
        let p = proposal(
            &v1,
            vec![AmendmentEdit::RemoveRule {
                rule_id: "allow-all".into(),
            }],
        );
        assert!(matches!(
            apply_amendment(&v1, &p),
            Err(IeplError::MalformedDocument(_))
        ));
    }

    #[test]
    fn rule_match_predicate() {
        let m = RuleMatch {
            category: Some("send_notification".into()),
            tags: ["pii".to_string()].into(),
            resource: Some("external/*".into()),
        };
        let tags: BTreeSet<String> = ["pii".to_string(), "urgent".to_string()].into();
        assert!(m.matches("send_notification", &tags, "external/mail"));
        assert!(!m.matches("send_notification", &tags, "internal/mail"));
        assert!(!m.matches("send_notification", &BTreeSet::new(), "external/mail"));
        assert!(!m.matches("other", &tags, "external/mail"));
        assert!(RuleMatch::any().matches("x", &BTreeSet::new(), ""));
    }

    #[test]
    fn trial_charter_is_valid() {
        trial_charter().validate().unwrap();
    }
}
