use aegis_core::iepl::seal;
use aegis_core::ilk::Durability;
use aegis_core::senatus::{execute_passage, run_votes, MemoryBus, TallyOutcome};
use aegis_core::state::{Config, InitOptions, StateDirectory};
use aegis_core::{AmendmentEdit, AmendmentProposal, Gate, PolicyDocument, SigningKey, Timestamp};
use tempfile::TempDir;

use crate::HarnessError;

/// A freshly initialised unit in its own temporary state directory.
pub struct Rig {
    pub state: StateDirectory,
    pub gate: Gate,
    auctor: SigningKey,
    amendments: u64,
    _dir: TempDir,
}

impl Rig {
    pub fn new(charter: &PolicyDocument, durability: Durability) -> Result<Self, HarnessError> {
        let dir = tempfile::tempdir().map_err(|e| HarnessError::Setup(e.to_string()))?;
        let opts = InitOptions {
            config: Config {
                durability,
                ..Config::default()
            },
            ..InitOptions::default()
        };
        let setup = |e: aegis_core::state::StateError| HarnessError::Setup(e.to_string());
        let (state, _) = StateDirectory::init(dir.path(), charter, opts).map_err(setup)?;
        let gate = state.gate(None).map_err(setup)?;
        let auctor = state.auctor_key().map_err(setup)?;
        Ok(Self {
            state,
            gate,
            auctor,
            amendments: 0,
            _dir: dir,
        })
    }

    /// Carries a weight-only amendment through a vote and redeclares the
    /// lock. From lockdown this resumes operation in a new log segment.
    pub fn redeclare(&mut self) -> Result<(), HarnessError> {
        self.amendments += 1;
        let current = self.gate.sealed_policy().clone();
        let rule_id = current
            .rules
            .first()
            .map(|r| r.rule_id.clone())
            .ok_or_else(|| HarnessError::Recovery("charter has no rules".into()))?;
        let now = Timestamp::now();
        let proposal = AmendmentProposal {
            proposal_id: format!("recover-{}", self.amendments),
            base_hash: seal(&current).map_err(|e| HarnessError::Recovery(e.to_string()))?,
            edits: vec![AmendmentEdit::SetRuleWeight {
                rule_id,
                weight: 1.0 + self.amendments as f64,
            }],
            justification: "restore validated state".into(),
            proposed_at: now,
        };
        let lock = self.gate.lock().clone();
        let pool = self
            .gate
            .pool_mut()
            .ok_or_else(|| HarnessError::Recovery("gate has no validator pool".into()))?;
        let round = run_votes(
            pool,
            &proposal,
            &current,
            &mut MemoryBus::default(),
            10,
            now,
        )
        .map_err(|e| HarnessError::Recovery(e.to_string()))?;
        let TallyOutcome::Passed(cert) = round.outcome else {
            return Err(HarnessError::Recovery(format!(
                "amendment rejected: {:?}",
                round.outcome
            )));
        };
        let registry = pool.registry();
        let (doc, new_lock) = execute_passage(
            &cert,
            &proposal,
            &current,
            &lock,
            &self.auctor,
            &registry,
            now,
        )
        .map_err(|e| HarnessError::Recovery(e.to_string()))?;
        self.gate
            .adopt_redeclaration(new_lock, doc)
            .map_err(|e| HarnessError::Recovery(e.to_string()))?;
        Ok(())
    }
}
