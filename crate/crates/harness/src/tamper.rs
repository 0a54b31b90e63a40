//! Runtime policy tamper → shutdown trials.

use std::time::{Duration, Instant};

use aegis_core::ilk::{read_log, verify_chain, AuditKeys, Durability, EntryKind};
use aegis_core::{ActionProposal, Mode, PolicyDocument, PublishOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mutation::PolicyMutation;
use crate::rig::Rig;
use crate::stats::{summarize, Summary};
use crate::HarnessError;

/// Published figures for another backend; shown alongside ours.
pub const REFERENCE_MEDIAN_VERIFICATION_MS: f64 = 238.0;
pub const REFERENCE_DISPERSION_MS: f64 = 17.0;
pub const VERIFICATION_BOUND_MS: f64 = 250.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TamperConfig {
    pub trials: usize,
    pub seed: u64,
    /// Compliant decisions logged before the mutation; each trial draws
    /// from `1..=max_warmup`.
    pub max_warmup: usize,
    /// Publishes attempted after the lockdown to confirm it absorbs.
    pub probes_after: usize,
    pub durability: Durability,
    pub charter: PolicyDocument,
}

impl Default for TamperConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 0xe1,
            max_warmup: 20,
            probes_after: 5,
            durability: Durability::Fsync,
            charter: aegis_core::iepl::fixtures::trial_charter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TamperSample {
    pub trial: usize,
    pub mutation: Option<PolicyMutation>,
    pub warmup_decisions: usize,
    /// Mutation instant to the failing integrity report.
    pub detection_latency_ms: f64,
    /// Duration of the failing publish: integrity check, proof challenge,
    /// certificate signing and log seal.
    pub verification_latency_ms: f64,
    pub lockdown: bool,
    pub certificate_issued: bool,
    pub certificate_verified: bool,
    /// Every entry before the mutation still verifies, with signatures, from
    /// the file on disk.
    pub pre_failure_chain_intact: bool,
    /// The certificate and seal name the last pre-mutation head.
    pub seal_covers_pre_failure_head: bool,
    pub post_mutation_commits: usize,
    pub lockdown_responses_after: usize,
}

impl TamperSample {
    pub fn passed(&self) -> bool {
        self.lockdown
            && self.certificate_issued
            && self.certificate_verified
            && self.pre_failure_chain_intact
            && self.seal_covers_pre_failure_head
            && self.post_mutation_commits == 0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TamperTrialResult {
    pub config: TamperConfig,
    pub samples: Vec<TamperSample>,
    pub control: TamperSample,
    pub certificates: usize,
    pub intact_pre_failure_chains: usize,
    pub detection_latency_ms: Summary,
    pub verification_latency_ms: Summary,
    pub reference_median_verification_ms: f64,
    pub reference_dispersion_ms: f64,
    pub wall_clock_s: f64,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn compliant(trial: usize, i: usize) -> ActionProposal {
    ActionProposal::new(
        &format!("t{trial}-w{i}"),
        "summarize_document",
        format!("doc {trial}/{i}").as_bytes(),
    )
}

/// One trial in a fresh state directory. `mutation = None` is the control.
pub fn run_one(
    cfg: &TamperConfig,
    trial: usize,
    warmup: usize,
    mutation: Option<PolicyMutation>,
) -> Result<TamperSample, HarnessError> {
    let mut rig = Rig::new(&cfg.charter, cfg.durability)?;
    for i in 0..warmup {
        if !rig.gate.publish(&compliant(trial, i)).is_committed() {
            return Err(HarnessError::Setup(format!(
                "warm-up decision {i} did not commit"
            )));
        }
    }
    let pre_len = rig.gate.ilk().entries().len();
    let pre_head = rig.gate.ilk().head();

    let t0 = Instant::now();
    if let Some(m) = mutation {
        m.apply(rig.gate.live_policy_mut());
    }
    let start = Instant::now();
    let outcome = rig.gate.publish(&compliant(trial, warmup));
    let timings = rig.gate.last_timings();
    let detection = start.duration_since(t0) + timings.integrity;

    let mut post_commits = usize::from(outcome.is_committed() && mutation.is_some());
    let mut lockdown_after = 0;
    for k in 0..cfg.probes_after {
        let out = rig.gate.publish(&compliant(trial, warmup + 1 + k));
        post_commits += usize::from(out.is_committed() && mutation.is_some());
        lockdown_after += usize::from(out.is_lockdown());
    }

    let unit = rig.gate.unit_public_key();
    let keys = AuditKeys::unit(unit);
    let path = rig
        .gate
        .ilk()
        .path()
        .ok_or_else(|| HarnessError::Setup("log is not file-backed".into()))?
        .to_path_buf();
    let on_disk = read_log(&path).map_err(|e| HarnessError::Setup(e.to_string()))?;
    let pre_intact = on_disk.len() >= pre_len
        && on_disk[..pre_len]
            .last()
            .map_or(pre_len == 0, |e| e.chain_hash == pre_head)
        && verify_chain(&on_disk[..pre_len], Some(&keys)).intact
        && verify_chain(&on_disk, Some(&keys)).intact;

    let cert = match &outcome {
        PublishOutcome::Lockdown { certificate } => Some(certificate),
        _ => None,
    };
    let seal_covers = cert.is_some_and(|c| c.sealed_log_head == pre_head)
        && on_disk
            .last()
            .is_some_and(|e| e.kind == EntryKind::Shutdown && e.prev_chain_hash == pre_head);

    Ok(TamperSample {
        trial,
        mutation,
        warmup_decisions: warmup,
        detection_latency_ms: ms(detection),
        verification_latency_ms: ms(timings.total),
        lockdown: rig.gate.mode() == Mode::Lockdown,
        certificate_issued: rig.gate.certificate().is_some(),
        certificate_verified: cert.is_some_and(|c| c.verify(&unit)),
        pre_failure_chain_intact: pre_intact,
        seal_covers_pre_failure_head: seal_covers,
        post_mutation_commits: post_commits,
        lockdown_responses_after: lockdown_after,
    })
}

pub fn run_tamper_trial(cfg: &TamperConfig) -> Result<TamperTrialResult, HarnessError> {
    let wall = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let warmup = rng.gen_range(1..=cfg.max_warmup.max(1));
        let mutation = PolicyMutation::from_index(rng.gen());
        samples.push(run_one(cfg, trial, warmup, Some(mutation))?);
    }
    let control = run_one(cfg, cfg.trials, cfg.max_warmup.max(1), None)?;
    let det: Vec<f64> = samples.iter().map(|s| s.detection_latency_ms).collect();
    let ver: Vec<f64> = samples.iter().map(|s| s.verification_latency_ms).collect();
    Ok(TamperTrialResult {
        certificates: samples.iter().filter(|s| s.certificate_verified).count(),
        intact_pre_failure_chains: samples
            .iter()
            .filter(|s| s.pre_failure_chain_intact)
            .count(),
        detection_latency_ms: summarize(&det),
        verification_latency_ms: summarize(&ver),
        reference_median_verification_ms: REFERENCE_MEDIAN_VERIFICATION_MS,
        reference_dispersion_ms: REFERENCE_DISPERSION_MS,
        wall_clock_s: wall.elapsed().as_secs_f64(),
        config: cfg.clone(),
        samples,
        control,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_and_control() {
        let cfg = TamperConfig {
            trials: 4,
            max_warmup: 3,
            durability: Durability::Flush,
            ..TamperConfig::default()
        };
        let r = run_tamper_trial(&cfg).unwrap();
        assert_eq!(r.certificates, 4);
        assert!(
            r.samples.iter().all(TamperSample::passed),
            "{:?}",
            r.samples
        );
        assert!(r.samples.iter().all(|s| s.lockdown_responses_after == 5));
        assert!(!r.control.lockdown && !r.control.certificate_issued);
        assert!(r.control.pre_failure_chain_intact);
    }
}
