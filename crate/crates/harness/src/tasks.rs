//! Seeded task sets with ground-truth labels.

use aegis_core::crypto::{sha3_256, Digest32};
use aegis_core::iepl::{Effect, PolicyRule};
use aegis_core::{canonical, ActionProposal, Eva, PolicyDocument};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mutation::PolicyMutation;
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    Compliant,
    Noncompliant,
    Prohibited,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportions {
    pub compliant: f64,
    pub noncompliant: f64,
    pub prohibited: f64,
}

impl Default for Proportions {
    fn default() -> Self {
        Self {
            compliant: 0.85,
            noncompliant: 0.12,
            prohibited: 0.03,
        }
    }
}

impl Proportions {
    pub fn new(compliant: f64, noncompliant: f64, prohibited: f64) -> Result<Self, HarnessError> {
        let p = Self {
            compliant,
            noncompliant,
            prohibited,
        };
        let parts = [compliant, noncompliant, prohibited];
        if parts.iter().any(|x| !x.is_finite() || *x < 0.0)
            || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(HarnessError::Config(format!(
                "proportions must be non-negative and sum to 1, got {parts:?}"
            )));
        }
        Ok(p)
    }

    fn draw(&self, u: f64) -> Label {
        if u < self.compliant {
            Label::Compliant
        } else if u < self.compliant + self.noncompliant {
            Label::Noncompliant
        } else {
            Label::Prohibited
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledAction {
    pub action: ActionProposal,
    pub label: Label,
    /// Rule (or fallback) the offline evaluation matched.
    pub matched_rule: String,
    /// Allowed by the rules but at or above the risk threshold.
    pub risk_exceeded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEpisode {
    pub episode_id: u64,
    pub candidate: LabeledAction,
    /// Live-policy edit applied just before this episode's publish.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tamper_injection: Option<PolicyMutation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub seed: u64,
    pub proportions: Proportions,
    pub episodes: Vec<TaskEpisode>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub compliant: usize,
    pub noncompliant: usize,
    pub prohibited: usize,
    pub risk_exceeded: usize,
}

impl TaskSet {
    /// Digest of the canonical encoding; equal digests mean byte-identical sets.
    pub fn digest(&self) -> Digest32 {
        sha3_256(&canonical::to_canonical_bytes(self).expect("task set is serializable"))
    }

    pub fn counts(&self) -> LabelCounts {
        let mut c = LabelCounts::default();
        for e in &self.episodes {
            match e.candidate.label {
                Label::Compliant => c.compliant += 1,
                Label::Noncompliant => c.noncompliant += 1,
                Label::Prohibited => c.prohibited += 1,
            }
            c.risk_exceeded += usize::from(e.candidate.risk_exceeded);
        }
        c
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Plants a tamper on `count` compliant episodes spread evenly through
    /// the set. Mutations cycle through the catalogue.
    pub fn with_tampers(mut self, count: usize) -> Self {
        if count == 0 || self.episodes.is_empty() {
            return self;
        }
        let stride = (self.episodes.len() / (count + 1)).max(1);
        let mut planted = 0;
        let mut i = stride;
        while planted < count && i < self.episodes.len() {
            if let Some(e) = self.episodes[i..]
                .iter_mut()
                .find(|e| e.candidate.label == Label::Compliant && e.tamper_injection.is_none())
            {
                e.tamper_injection = Some(PolicyMutation::from_index(self.seed + planted as u64));
                planted += 1;
            }
            i += stride;
        }
        self
    }
}

/// Labels an action by evaluating it offline against `charter`.
pub fn label_action(action: &ActionProposal, charter: &PolicyDocument) -> LabeledAction {
    let eva = Eva::default();
    match eva.validate_action(action, charter) {
        Ok(v) => {
            let label = if v.is_prohibited() {
                Label::Prohibited
            } else if v.compliant && v.uncertainty < charter.risk_threshold_alpha {
                Label::Compliant
            } else {
                Label::Noncompliant
            };
            LabeledAction {
                action: action.clone(),
                label,
                matched_rule: v.matched_rule().to_string(),
                risk_exceeded: v.compliant && label == Label::Noncompliant,
            }
        }
        Err(_) => LabeledAction {
            action: action.clone(),
            label: Label::Noncompliant,
            matched_rule: aegis_core::eva::FALLBACK_DENY.into(),
            risk_exceeded: false,
        },
    }
}

fn from_rule(id: &str, rule: &PolicyRule, category: Option<&str>) -> ActionProposal {
    let cat = rule
        .matcher
        .category
        .as_deref()
        .or(category)
        .unwrap_or("generic_operation");
    let mut a = ActionProposal::new(id, cat, id.as_bytes());
    a.tags = rule.matcher.tags.clone();
    if let Some(pat) = &rule.matcher.resource {
        a.resource = pat.replace('*', "target").replace('?', "x");
    }
    a
}

fn candidate(
    rng: &mut ChaCha8Rng,
    id: &str,
    want: Label,
    charter: &PolicyDocument,
) -> Option<ActionProposal> {
    let alpha = charter.risk_threshold_alpha;
    let of = |e: Effect| -> Vec<&PolicyRule> {
        charter.rules.iter().filter(|r| r.effect == e).collect()
    };
    match want {
        Label::Compliant => {
            let rule = of(Effect::Allow).choose(rng).copied()?;
            let risk = rng.gen_range(0.0..alpha);
            Some(from_rule(id, rule, None).with_risk(risk))
        }
        Label::Noncompliant => match rng.gen_range(0..4) {
            0 => Some(from_rule(id, of(Effect::Deny).choose(rng).copied()?, None)),
            1 => Some(from_rule(id, of(Effect::Defer).choose(rng).copied()?, None)),
            2 => Some(ActionProposal::new(
                id,
                &format!("unlisted_operation_{}", rng.gen_range(0..8)),
                id.as_bytes(),
            )),
            _ => {
                let rule = of(Effect::Allow).choose(rng).copied()?;
                let risk = rng.gen_range(alpha..=1.0);
                Some(from_rule(id, rule, None).with_risk(risk))
            }
        },
        Label::Prohibited => {
            let cats: Vec<&String> = charter.prohibited_operations.iter().collect();
            let cat = cats.choose(rng)?;
            Some(ActionProposal::new(id, cat, id.as_bytes()))
        }
    }
}

/// Deterministic in `seed`. Each episode's class is drawn from `proportions`;
/// the action is built to realise that class and then labelled offline, so
/// labels are always the evaluation outcome.
pub fn generate_task_set(
    seed: u64,
    n_episodes: usize,
    charter: &PolicyDocument,
    proportions: Proportions,
) -> Result<TaskSet, HarnessError> {
    if n_episodes == 0 {
        return Err(HarnessError::Config("n_episodes must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut episodes = Vec::with_capacity(n_episodes);
    for i in 0..n_episodes {
        let want = proportions.draw(rng.gen::<f64>());
        let id = format!("ep{seed}-{i:06}");
        let mut labeled = None;
        for _ in 0..32 {
            let Some(a) = candidate(&mut rng, &id, want, charter) else {
                break;
            };
            let l = label_action(&a, charter);
            if l.label == want {
                labeled = Some(l);
                break;
            }
        }
        let labeled = labeled.ok_or_else(|| {
            HarnessError::Config(format!(
                "charter {} cannot realise {want:?} episodes",
                charter.charter_id
            ))
        })?;
        episodes.push(TaskEpisode {
            episode_id: i as u64,
            candidate: labeled,
            tamper_injection: None,
        });
    }
    Ok(TaskSet {
        seed,
        proportions,
        episodes,
    })
}
