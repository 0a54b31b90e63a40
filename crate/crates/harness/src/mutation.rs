//! Runtime edits to a live policy that bypass governance.

use aegis_core::iepl::{Effect, PolicyRule, RuleMatch};
use aegis_core::PolicyDocument;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMutation {
    RaiseAlpha,
    LowerAlpha,
    DropProhibited,
    AddProhibited,
    FlipFirstEffect,
    PrependAllowAll,
    RemoveLastRule,
    RenameRule,
    ReweightRule,
    BumpVersion,
}

impl PolicyMutation {
    pub const ALL: [PolicyMutation; 10] = [
        PolicyMutation::RaiseAlpha,
        PolicyMutation::LowerAlpha,
        PolicyMutation::DropProhibited,
        PolicyMutation::AddProhibited,
        PolicyMutation::FlipFirstEffect,
        PolicyMutation::PrependAllowAll,
        PolicyMutation::RemoveLastRule,
        PolicyMutation::RenameRule,
        PolicyMutation::ReweightRule,
        PolicyMutation::BumpVersion,
    ];

    pub fn from_index(i: u64) -> Self {
        Self::ALL[(i % Self::ALL.len() as u64) as usize]
    }

    /// Applies the edit in place. Every variant changes the document.
    pub fn apply(self, doc: &mut PolicyDocument) {
        match self {
            PolicyMutation::RaiseAlpha => {
                doc.risk_threshold_alpha = (doc.risk_threshold_alpha + 0.5).min(1.0);
                if doc.risk_threshold_alpha == 1.0 {
                    doc.risk_threshold_alpha = 0.999;
                }
            }
            PolicyMutation::LowerAlpha => doc.risk_threshold_alpha /= 2.0,
            PolicyMutation::DropProhibited => {
                if doc.prohibited_operations.pop_first().is_none() {
                    doc.prohibited_operations
                        .insert("nothing_prohibited".into());
                }
            }
            PolicyMutation::AddProhibited => {
                doc.prohibited_operations.insert("injected_category".into());
            }
            PolicyMutation::FlipFirstEffect => match doc.rules.first_mut() {
                Some(r) => {
                    r.effect = match r.effect {
                        Effect::Allow => Effect::Deny,
                        Effect::Deny | Effect::Defer => Effect::Allow,
                    }
                }
                None => PolicyMutation::PrependAllowAll.apply(doc),
            },
            PolicyMutation::PrependAllowAll => doc.rules.insert(
                0,
                PolicyRule::new("injected-allow-all", RuleMatch::any(), Effect::Allow),
            ),
            PolicyMutation::RemoveLastRule => {
                if doc.rules.pop().is_none() {
                    PolicyMutation::PrependAllowAll.apply(doc);
                }
            }
            PolicyMutation::RenameRule => match doc.rules.first_mut() {
                Some(r) => r.rule_id.push_str("-renamed"),
                None => PolicyMutation::PrependAllowAll.apply(doc),
            },
            PolicyMutation::ReweightRule => match doc.rules.first_mut() {
                Some(r) => r.weight += 1.0,
                None => PolicyMutation::PrependAllowAll.apply(doc),
            },
            PolicyMutation::BumpVersion => doc.version += 1,
        }
    }
}
