//! Single-field mutations of a recorded log, each of which the chain
//! verifier must catch at the mutated entry.

use aegis_core::ilk::{verify_chain, AuditKeys, ChainedLogEntry, Durability, EntryKind};
use aegis_core::{ActionProposal, PolicyDocument};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::mutation::PolicyMutation;
use crate::rig::Rig;
use crate::HarnessError;

/// A log with commits, vetoes, epoch rotations, a shutdown and a governance
/// entry opening a second segment, plus the keys to audit it.
pub struct SampleLog {
    pub entries: Vec<ChainedLogEntry>,
    pub keys: AuditKeys,
}

pub fn sample_log(charter: &PolicyDocument) -> Result<SampleLog, HarnessError> {
    let mut charter = charter.clone();
    charter.quorum_config.epoch_length = 6;
    let mut rig = Rig::new(&charter, Durability::Flush)?;
    let publish_mix = |rig: &mut Rig, tag: &str| {
        for i in 0..8 {
            let a = if i % 3 == 2 {
                ActionProposal::new(&format!("{tag}-v{i}"), "bulk_delete", b"rows")
            } else {
                ActionProposal::new(&format!("{tag}-c{i}"), "summarize_document", b"doc")
            };
            rig.gate.publish(&a);
        }
    };
    publish_mix(&mut rig, "s0");
    PolicyMutation::RaiseAlpha.apply(rig.gate.live_policy_mut());
    rig.gate
        .publish(&ActionProposal::new("tamper", "summarize_document", b"x"));
    rig.redeclare()?;
    publish_mix(&mut rig, "s1");

    let entries = rig.gate.ilk().entries().to_vec();
    for kind in [
        EntryKind::Decision,
        EntryKind::Rotation,
        EntryKind::Shutdown,
        EntryKind::Governance,
    ] {
        if !entries.iter().any(|e| e.kind == kind) {
            return Err(HarnessError::Setup(format!("sample log lacks {kind:?}")));
        }
    }
    let pool = rig
        .gate
        .pool()
        .ok_or_else(|| HarnessError::Setup("no validator pool".into()))?;
    let keys = AuditKeys {
        validators: Some((pool.registry(), charter.quorum_config)),
        ..AuditKeys::unit(rig.gate.unit_public_key())
    };
    Ok(SampleLog { entries, keys })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationCase {
    pub sequence: u64,
    /// JSON pointer of the mutated leaf.
    pub field: String,
    pub detected: bool,
    pub first_broken_sequence: Option<u64>,
}

impl MutationCase {
    pub fn localized(&self) -> bool {
        self.detected && self.first_broken_sequence == Some(self.sequence)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub seed: u64,
    pub entries: usize,
    pub mutations: usize,
    pub detected: usize,
    pub localized: usize,
    pub cases: Vec<MutationCase>,
}

fn leaves(v: &Value, path: String, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                leaves(x, format!("{path}/{k}"), out);
            }
        }
        Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                leaves(x, format!("{path}/{i}"), out);
            }
        }
        Value::Null => {}
        _ => out.push(path),
    }
}

fn mutate_string(s: &str, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = s.chars().collect();
    let hex: Vec<usize> = (0..chars.len())
        .filter(|&i| chars[i].is_ascii_hexdigit())
        .collect();
    match hex.choose(rng) {
        Some(&i) => {
            let d = chars[i].to_digit(16).expect("hex digit") ^ rng.gen_range(1..16);
            let c = char::from_digit(d, 16).expect("nibble");
            chars[i] = if chars[i].is_ascii_uppercase() {
                c.to_ascii_uppercase()
            } else {
                c
            };
            chars.into_iter().collect()
        }
        None => format!("{s}~"),
    }
}

fn mutate_leaf(v: &mut Value, rng: &mut ChaCha8Rng) {
    *v = match v.take() {
        Value::Bool(b) => Value::Bool(!b),
        Value::Number(n) => match (n.as_u64(), n.as_i64(), n.as_f64()) {
            (Some(u), _, _) => Value::from(u.wrapping_add(1)),
            (None, Some(i), _) => Value::from(i.wrapping_add(1)),
            (_, _, Some(f)) => Value::from(f + 1.0),
            _ => Value::from(0),
        },
        Value::String(s) => Value::String(mutate_string(&s, rng)),
        other => other,
    };
}

/// One mutated copy of `entries[idx]`: a leaf that still parses as a log
/// entry and differs from the original. `None` if 64 tries fail.
pub fn mutate_entry(
    entry: &ChainedLogEntry,
    rng: &mut ChaCha8Rng,
) -> Option<(String, ChainedLogEntry)> {
    let original = serde_json::to_value(entry).ok()?;
    let mut paths = Vec::new();
    leaves(&original, String::new(), &mut paths);
    for _ in 0..64 {
        let path = paths.choose(rng)?;
        let mut v = original.clone();
        mutate_leaf(v.pointer_mut(path)?, rng);
        if let Ok(m) = serde_json::from_value::<ChainedLogEntry>(v) {
            if &m != entry {
                return Some((path.clone(), m));
            }
        }
    }
    None
}

pub fn sweep(log: &SampleLog, seed: u64, n: usize) -> Result<SweepReport, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(n);
    while cases.len() < n {
        let idx = rng.gen_range(0..log.entries.len());
        let Some((field, m)) = mutate_entry(&log.entries[idx], &mut rng) else {
            continue;
        };
        let mut entries = log.entries.clone();
        entries[idx] = m;
        let r = verify_chain(&entries, Some(&log.keys));
        cases.push(MutationCase {
            sequence: log.entries[idx].sequence,
            field,
            detected: !r.intact,
            first_broken_sequence: r.first_broken_sequence,
        });
    }
    if !verify_chain(&log.entries, Some(&log.keys)).intact {
        return Err(HarnessError::Setup(
            "unmutated sample log does not verify".into(),
        ));
    }
    Ok(SweepReport {
        seed,
        entries: log.entries.len(),
        mutations: cases.len(),
        detected: cases.iter().filter(|c| c.detected).count(),
        localized: cases.iter().filter(|c| c.localized()).count(),
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use aegis_core::iepl::fixtures::trial_charter;

    #[test]
    fn small_sweep_is_fully_localized() {
        let log = sample_log(&trial_charter()).unwrap();
        let r = sweep(&log, 3, 200).unwrap();
        let missed: Vec<_> = r.cases.iter().filter(|c| !c.localized()).collect();
        assert!(missed.is_empty(), "{missed:?}");
    }
}
