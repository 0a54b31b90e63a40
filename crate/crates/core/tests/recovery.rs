use aegis_core::clock::FixedClock;
use aegis_core::ekm::BreachEvidence;
use aegis_core::genesis::TrustAnchors;
use aegis_core::iepl::fixtures::trial_charter;
use aegis_core::iepl::seal;
use aegis_core::ilk::{verify_chain, Attachment, AuditKeys, EntryKind};
use aegis_core::senatus::{
    execute_passage, run_votes, Behavior, MemoryBus, TallyOutcome, ValidatorAgent, ValidatorPool,
};
use aegis_core::{
    declare_genesis, ActionProposal, AmendmentEdit, AmendmentProposal, Gate, GateParts,
    HardwareIdentity, Ilk, Mode, PublishOutcome, SigningKey, Timestamp,
};

fn pool(behaviors: &[Behavior]) -> ValidatorPool {
    let agents = behaviors
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let id = format!("auctor-{i}");
            ValidatorAgent::new(&id, SigningKey::derive(&id), b.clone())
        })
        .collect();
    ValidatorPool::new(agents, 5, 7).unwrap()
}

fn gate(behaviors: &[Behavior]) -> Gate {
    let policy = trial_charter();
    let hw = HardwareIdentity::from_parts("desk-01", b"recovery");
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
    parts.pool = Some(pool(behaviors));
    Gate::new(parts).unwrap()
}

fn alpha_proposal(g: &Gate, id: &str, alpha: f64) -> AmendmentProposal {
    AmendmentProposal {
        proposal_id: id.into(),
        base_hash: seal(g.sealed_policy()).unwrap(),
        edits: vec![AmendmentEdit::SetRiskThreshold { alpha }],
        justification: "tighten risk gate".into(),
        proposed_at: Timestamp::from_unix(1_749_500_000),
    }
}

/// Runs a vote and, on passage, redeclares and hands the result to the gate.
fn pass(g: &mut Gate, proposal: &AmendmentProposal) -> Result<(), String> {
    let current = g.sealed_policy().clone();
    let lock = g.lock().clone();
    let pool = g.pool_mut().unwrap();
    let round = run_votes(
        pool,
        proposal,
        &current,
        &mut MemoryBus::default(),
        10,
        Timestamp::from_unix(1_749_500_100),
    )
    .map_err(|e| e.to_string())?;
    let TallyOutcome::Passed(cert) = round.outcome else {
        return Err(format!("rejected: {:?}", round.outcome));
    };
    let registry = pool.registry();
    let (doc, new_lock) = execute_passage(
        &cert,
        proposal,
        &current,
        &lock,
        &SigningKey::derive("auctor"),
        &registry,
        Timestamp::from_unix(1_749_500_200),
    )
    .map_err(|e| e.to_string())?;
    g.adopt_redeclaration(new_lock, doc)
        .map(|_| ())
        .map_err(|e| e.to_string())
}

fn compliant(i: usize) -> ActionProposal {
    ActionProposal::new(&format!("c{i}"), "summarize_document", b"doc")
}

#[test]
fn lockdown_absorbs_then_quorum_redeclaration_recovers() {
    let mut g = gate(&vec![Behavior::Honest; 5]);
    for i in 0..10 {
        assert!(g.publish(&compliant(i)).is_committed());
    }
    g.live_policy_mut().risk_threshold_alpha = 0.95;
    let PublishOutcome::Lockdown { certificate } = g.publish(&compliant(10)) else {
        panic!("tamper not detected");
    };
    assert!(certificate.verify(&g.unit_public_key()));
    let sealed_head = g.ilk().head();

    for i in 0..100 {
        assert!(g.publish(&compliant(100 + i)).is_lockdown());
    }
    assert_eq!(g.ilk().head(), sealed_head);

    let proposal = alpha_proposal(&g, "restore-1", 0.15);
    pass(&mut g, &proposal).unwrap();
    assert_eq!(g.mode(), Mode::Operational);
    assert_eq!(g.sealed_policy().risk_threshold_alpha, 0.15);

    let opening = g.ilk().entries().last().unwrap();
    assert_eq!(opening.kind, EntryKind::Governance);
    assert_eq!(opening.segment, 1);
    assert_eq!(opening.prev_chain_hash, sealed_head);
    let Attachment::Governance(gov) = &opening.attachment else {
        unreachable!()
    };
    assert_eq!(gov.predecessor_head, Some(sealed_head));

    // Recovery is immediate: the first compliant action after resumption commits.
    assert!(g.publish(&compliant(1000)).is_committed());
    let risky = ActionProposal::new("r", "summarize_document", b"x").with_risk(0.17);
    assert!(matches!(g.publish(&risky), PublishOutcome::Vetoed { .. }));

    let keys = AuditKeys {
        validators: Some((
            g.pool().unwrap().registry(),
            g.sealed_policy().quorum_config,
        )),
        ..AuditKeys::unit(g.unit_public_key())
    };
    let report = verify_chain(g.ilk().entries(), Some(&keys));
    assert!(report.intact, "{report:?}");
}

#[test]
fn redeclaration_chain_survives_restart() {
    let mut g = gate(&vec![Behavior::Honest; 5]);
    for k in 0..4 {
        let p = alpha_proposal(&g, &format!("p{k}"), 0.19 - 0.01 * k as f64);
        pass(&mut g, &p).unwrap();
        if k % 2 == 1 {
            g.lockdown(
                "drill",
                BreachEvidence::LogDivergence {
                    expected_head: g.ilk().head(),
                },
            );
        }
    }
    assert_eq!(g.lock_history().len(), 4);
    assert_eq!(g.mode(), Mode::Lockdown);

    // A fresh gate built from the persisted pieces must accept the chain.
    let policy = g.sealed_policy().clone();
    let hw = HardwareIdentity::from_parts("desk-01", b"recovery");
    let mut parts = GateParts::new(
        policy,
        g.lock().clone(),
        hw,
        SigningKey::derive("unit"),
        Ilk::in_memory(),
    );
    parts.anchors = TrustAnchors {
        founding_key: Some(SigningKey::derive("auctor").public_key()),
        genesis_digest: Some(g.lock_history()[0].digest()),
        prior_locks: g.lock_history().to_vec(),
        validators: g.pool().unwrap().registry(),
        quorum: trial_charter().quorum_config,
    };
    let mut forked = GateParts::new(
        g.sealed_policy().clone(),
        g.lock().clone(),
        HardwareIdentity::from_parts("desk-01", b"recovery"),
        SigningKey::derive("unit"),
        Ilk::in_memory(),
    );
    forked.anchors = parts.anchors.clone();
    assert!(Gate::new(parts).is_ok());

    // Pinned to some other root, the same chain halts.
    forked.anchors.genesis_digest = Some(g.lock_history()[1].digest());
    assert!(matches!(
        Gate::new(forked),
        Err(aegis_core::ekm::GateError::GenesisHalt(
            aegis_core::genesis::HaltReason::RootMismatch
        ))
    ));
}

#[test]
fn byzantine_minority_cannot_block_recovery_but_majority_can() {
    let byz = Behavior::Byzantine {
        decision: aegis_core::senatus::Decision::Reject,
        forge_signature: false,
    };
    let mut behaviors = vec![Behavior::Honest; 5];
    behaviors[0] = byz.clone();
    let mut g = gate(&behaviors);
    g.lockdown(
        "drill",
        BreachEvidence::LogDivergence {
            expected_head: g.ilk().head(),
        },
    );
    let p = alpha_proposal(&g, "p", 0.1);
    pass(&mut g, &p).unwrap();
    assert_eq!(g.mode(), Mode::Operational);

    let mut behaviors = vec![Behavior::Honest; 5];
    for b in behaviors.iter_mut().take(3) {
        *b = byz.clone();
    }
    let mut g = gate(&behaviors);
    g.lockdown(
        "drill",
        BreachEvidence::LogDivergence {
            expected_head: g.ilk().head(),
        },
    );
    let before = seal(g.sealed_policy()).unwrap();
    let p = alpha_proposal(&g, "p", 0.1);
    assert!(pass(&mut g, &p).unwrap_err().starts_with("rejected"));
    assert_eq!(g.mode(), Mode::Lockdown);
    assert_eq!(seal(g.sealed_policy()).unwrap(), before);
}
