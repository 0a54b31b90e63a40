use aegis_core::clock::FixedClock;
use aegis_core::crypto::{sha3_256, SigningKey};
use aegis_core::iepl::fixtures::trial_charter;
use aegis_core::iepl::seal;
use aegis_core::{
    declare_genesis, ActionProposal, Gate, GateParts, HardwareIdentity, Ilk, Timestamp,
};
use serde_json::Value;
use tiny_keccak::{Hasher, Sha3};

fn keccak(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha3::v256();
    for p in parts {
        h.update(p);
    }
    let mut out = [0u8; 32];
    h.finalize(&mut out);
    out
}

fn transcript(domain: &str, fields: &[&[u8]]) -> Vec<u8> {
    let mut out = Vec::new();
    for f in std::iter::once(&domain.as_bytes()).chain(fields.iter()) {
        out.extend_from_slice(&(f.len() as u32).to_be_bytes());
        out.extend_from_slice(f);
    }
    out
}

fn unhex(s: &str) -> Vec<u8> {
    hex::decode(s).unwrap()
}

fn gate() -> Gate {
    let policy = trial_charter();
    let hw = HardwareIdentity::from_parts("oracle-host", b"salt");
    let lock = declare_genesis(
        &hw,
        seal(&policy).unwrap(),
        &SigningKey::derive("auctor"),
        Timestamp::from_unix(1_749_438_000),
    );
    let mut parts = GateParts::new(
        policy,
        lock,
        hw,
        SigningKey::derive("unit"),
        Ilk::in_memory(),
    );
    parts.clock = Box::new(FixedClock::new(Timestamp::from_unix(1_749_438_051), 1));
    Gate::new(parts).unwrap()
}

#[test]
fn sha3_known_answers() {
    assert_eq!(
        sha3_256(b"").to_hex(),
        "a7ffc6f8bf1ed76651c14756a061d662f580ff4de43b49fa82d80a4b80f8434a"
    );
    assert_eq!(
        sha3_256(b"abc").to_hex(),
        "3a985da74fe225b2045c172d6bd390bd855f086e3e9d525b46bfe24511431532"
    );
}

#[test]
fn ed25519_rfc8032_vector_one() {
    let seed: [u8; 32] = unhex("9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60")
        .try_into()
        .unwrap();
    let key = SigningKey::from_seed(seed);
    assert_eq!(
        key.public_key().to_hex(),
        "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a"
    );
    let sig = key.sign(b"");
    assert_eq!(
        sig.to_hex(),
        "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e06522490155\
         5fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b"
    );
    assert!(key.public_key().verify(b"", &sig));
    assert!(!key.public_key().verify(b"x", &sig));
}

/// Chain hashes recomputed from the stored lines with a different SHA3
/// implementation and serde_json's own key ordering.
#[test]
fn head_fold_matches_independent_recompute() {
    let mut g = gate();
    for (i, cat) in ["summarize_document", "bulk_delete", "query_database"]
        .iter()
        .enumerate()
    {
        g.publish(&ActionProposal::new(&format!("a{i}"), cat, b"payload"));
    }
    let entries = g.ilk().entries();
    assert_eq!(entries.len(), 3);

    let mut head = [0u8; 32];
    for e in entries {
        let mut v: Value = serde_json::from_str(&e.to_line()).unwrap();
        let obj = v.as_object_mut().unwrap();
        assert_eq!(unhex(obj["prev_chain_hash"].as_str().unwrap()), head);
        let stored = unhex(obj.remove("chain_hash").unwrap().as_str().unwrap());
        obj.remove("prev_chain_hash");
        let body = serde_json::to_string(&v).unwrap();
        head = keccak(&[&head, body.as_bytes()]);
        assert_eq!(head.to_vec(), stored, "entry {}", e.sequence);
    }
    assert_eq!(head, g.ilk().head().0);
}

/// Proof statement and proof digests recomputed from their definitions.
#[test]
fn poc_digests_match_independent_recompute() {
    let mut g = gate();
    g.publish(&ActionProposal::new("a0", "summarize_document", b"hello"));
    g.publish(&ActionProposal::new("a1", "exfiltrate_credentials", b"x"));
    let unit = SigningKey::derive("unit").public_key();
    for e in g.ilk().entries() {
        let d = e.decision().unwrap();
        let payload = keccak(&[b"hello"]);
        if e.action_id == "a0" {
            assert_eq!(d.action.payload_digest.0, payload);
        }
        let statement = keccak(&[&transcript(
            "aegis/poc-statement/v1",
            &[
                &d.action.payload_digest.0,
                &e.policy_hash.0 .0,
                &[u8::from(d.verdict_bit)],
                d.matched_rule.as_bytes(),
                &e.prev_chain_hash.0,
            ],
        )]);
        assert_eq!(d.proof.statement_digest.0, statement);
        let proof = keccak(&[&transcript(
            "aegis/poc/v1",
            &[
                b"attest-v1",
                &statement,
                &d.proof.unit_signature.0,
                d.proof.created_at.to_string().as_bytes(),
            ],
        )]);
        assert_eq!(e.poc_digest.0, proof);
        let msg = transcript("aegis/attest-v1", &[&statement]);
        assert!(unit.verify(&msg, &d.proof.unit_signature));
    }
}
