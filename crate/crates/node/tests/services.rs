mod common;

use std::collections::BTreeSet;
use std::time::Duration;

use common::Rig;
use psfe_core::crypto::{hash, Digest};
use psfe_core::dataset::fixtures::{table1, table1_value_terms, TABLE1_NUMERIC_VARIABLES};
use psfe_core::wire::{
    ErrorClass, FunctionDescriptor, IndexList, MessageKind, Payload, ProtocolMessage, QueryId, WireError,
};
use psfe_node::csp::EDS_FILE;
use psfe_node::ma::{JOURNAL_FILE, LISTS_FILE};
use psfe_node::{MaStep, NoiseMode, Progress, QueryOutcome, ServiceError, ServiceOptions};

fn payload(bytes: &[u8]) -> Payload {
    ProtocolMessage::decode(bytes).unwrap().payload
}

/// Sends a token for (value, variable) and returns the query id and M6.
fn token(rig: &Rig, value: &str, variable: &str, f: FunctionDescriptor) -> (QueryId, Vec<u8>) {
    let (_, m5) = rig.analyst.token(value, variable, f).unwrap();
    rig.ma.handle_token(&m5).unwrap()
}

#[test]
fn csp_acknowledges_the_curators_digest() {
    let mut rig = Rig::new(NoiseMode::Fixed(0));
    let bundle = rig.bundle();
    let m3 = rig.csp.handle_setup(&bundle.m1).unwrap();
    assert_eq!(payload(&m3), Payload::M3 { dataset_digest: bundle.dataset_digest });
    rig.curator.check_csp_ack(&bundle, &m3).unwrap();
}

#[test]
fn stale_setup_persists_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let opts = ServiceOptions { storage: Some(dir.path().to_owned()), ..ServiceOptions::default() };
    let mut rig = Rig::with(NoiseMode::Fixed(0), opts, ServiceOptions::default());
    let bundle = rig.bundle();
    rig.clock.advance(Duration::from_secs(31));
    let err = rig.csp.handle_setup(&bundle.m1).unwrap_err();
    assert!(matches!(err, ServiceError::Wire(WireError::StaleTimestamp { .. })));
    assert!(!rig.csp.has_dataset());
    assert!(!dir.path().join(EDS_FILE).exists());
}

#[test]
fn second_setup_is_a_duplicate() {
    let mut rig = Rig::new(NoiseMode::Fixed(0));
    rig.setup();
    let again = rig.bundle();
    assert!(matches!(rig.csp.handle_setup(&again.m1), Err(ServiceError::DuplicateSetup)));
    assert!(matches!(rig.ma.handle_setup(&again.m2), Err(ServiceError::DuplicateSetup)));
}

#[test]
fn ma_setup_examples() {
    let mut rig = Rig::new(NoiseMode::Fixed(0));
    let bundle = rig.bundle();

    // Re-sign M2 around a tampered envelope: the signature holds, the AEAD does not.
    let curator = rig.signer(&rig.keys.curator);
    let Payload::M2 { lists: mut env } = payload(&bundle.m2) else { panic!() };
    env.ciphertext[3] ^= 1;
    let tampered = curator.sign_bytes(Payload::M2 { lists: env }).unwrap();
    assert!(matches!(rig.ma.handle_setup(&tampered), Err(ServiceError::Decryption)));
    assert!(!rig.ma.has_lists());

    let m4 = rig.ma.handle_setup(&bundle.m2).unwrap();
    rig.curator.check_ma_ack(&bundle, &m4).unwrap();
    assert!(rig.ma.has_lists());
    let err = rig.ma.handle_setup(&bundle.m2).unwrap_err();
    assert!(matches!(err, ServiceError::Wire(WireError::ReplayDetected)));
}

#[test]
fn token_resolves_to_salted_sets() {
    let mut rig = Rig::new(NoiseMode::Fixed(0));
    rig.setup();
    let (query, m6) = token(&rig, "flu", "Age", FunctionDescriptor::Sum);
    let Payload::M6 { query: q, values, variables, function, analyst } = payload(&m6) else { panic!() };
    assert_eq!(q, query);
    assert_eq!(values.len(), 2);
    assert_eq!(variables.len(), 1);
    assert_eq!(function, FunctionDescriptor::Sum);
    assert_eq!(analyst, rig.keys.directory.analysts[0].verification.fingerprint());
    assert!(!values.contains(&hash(b"flu")));
    assert!(!variables.contains(&hash(b"Age")));

    let (_, m6) = token(&rig, "malaria", "Age", FunctionDescriptor::Sum);
    let Payload::M6 { values, variables, .. } = payload(&m6) else { panic!() };
    assert!(values.is_empty());
    assert_eq!(variables.len(), 1);
    let reply = rig.csp.handle_search(&m6).unwrap();
    assert_eq!(MessageKind::peek(&reply), Some(MessageKind::NoResults));
}

#[test]
fn replayed_token_is_rejected() {
    let mut rig = Rig::new(NoiseMode::Fixed(0));
    rig.setup();
    let (_, m5) = rig.analyst.token("flu", "Age", FunctionDescriptor::Sum).unwrap();
    rig.ma.handle_token(&m5).unwrap();
    let err = rig.ma.handle_token(&m5).unwrap_err();
    assert!(matches!(err, ServiceError::Wire(WireError::ReplayDetected)));
    assert_eq!(rig.ma.budget()[0].spent(), 1.0);
}

#[test]
fn search_collects_matching_cells() {
    let mut rig = Rig::new(NoiseMode::Fixed(0));
    rig.setup();
    for (value, variable) in [("flu", "Age"), ("mild", "sbp")] {
        let (query, m6) = token(&rig, value, variable, FunctionDescriptor::Sum);
        let m8 = rig.csp.handle_search(&m6).unwrap();
        let Payload::M8 { query: q, indices, .. } = payload(&m8) else { panic!("expected M8") };
        assert_eq!(q, query);
        assert_eq!(indices.0.len(), 2);

        let m7 = rig.csp.handle_fetch(&rig.analyst.fetch(query).unwrap()).unwrap();
        let Payload::M7 { result, .. } = payload(&m7) else { panic!("expected M7") };
        assert_eq!(result.indices(), indices);
    }
}

#[test]
fn fetch_is_single_use_and_bound_to_the_analyst() {
    let mut rig = Rig::new(NoiseMode::Fixed(0));
    rig.setup();
    let (query, m6) = token(&rig, "flu", "Age", FunctionDescriptor::Sum);
    rig.csp.handle_search(&m6).unwrap();
    // A second copy of the MA's search for the same query is refused.
    let ma = rig.signer(&rig.keys.ma);
    rig.tick();
    let again = ma.sign_bytes(payload(&m6)).unwrap();
    assert!(matches!(rig.csp.handle_search(&again), Err(ServiceError::ProtocolState(_))));

    rig.csp.handle_fetch(&rig.analyst.fetch(query).unwrap()).unwrap();
    rig.tick();
    assert!(matches!(
        rig.csp.handle_fetch(&rig.analyst.fetch(query).unwrap()),
        Err(ServiceError::ProtocolState(_))
    ));
}

#[test]
fn empty_value_set_yields_no_results() {
    let mut rig = Rig::new(NoiseMode::Fixed(0));
    rig.setup();
    let ma = rig.signer(&rig.keys.ma);
    let query = QueryId([4; 16]);
    let m6 = ma
        .sign_bytes(Payload::M6 {
            query,
            analyst: Digest::default(),
            values: BTreeSet::new(),
            variables: BTreeSet::new(),
            function: FunctionDescriptor::Sum,
        })
        .unwrap();
    assert_eq!(payload(&rig.csp.handle_search(&m6).unwrap()), Payload::NoResults { query });
}

#[test]
fn indices_become_an_exact_key_without_noise() {
    let mut rig = Rig::new(NoiseMode::Fixed(0));
    rig.setup();
    let (token_, m5) = rig.analyst.token("flu", "Age", FunctionDescriptor::Sum).unwrap();
    let (query, m6) = rig.ma.handle_token(&m5).unwrap();
    let m8 = rig.csp.handle_search(&m6).unwrap();
    let m9 = rig.ma.handle_csp_reply(query, &m8).unwrap();
    assert!(rig.ma.pending().is_empty());
    assert_eq!(rig.analyst.accept_ma_reply(&token_, &m9).unwrap(), Progress::Waiting(query));
    let m7 = rig.csp.handle_fetch(&rig.analyst.fetch(query).unwrap()).unwrap();
    let Progress::Done(QueryOutcome::Answer(a)) = rig.analyst.accept_csp_reply(&m7).unwrap() else { panic!() };
    let (oracle, count) = table1().plaintext_sum("flu", "Age").unwrap();
    assert_eq!((a.sum, a.count), (oracle, count));
    assert_eq!(a.sum, 99);
    assert_eq!(a.sensitivity, 120.0);
    assert_eq!(a.epsilon, 1.0);
}

#[test]
fn fabricated_index_raises_the_tamper_alarm() {
    let mut rig = Rig::new(NoiseMode::Fixed(0));
    rig.setup();
    let (query, m6) = token(&rig, "flu", "Age", FunctionDescriptor::Sum);
    let m8 = rig.csp.handle_search(&m6).unwrap();
    let Payload::M8 { indices, function, .. } = payload(&m8) else { panic!() };
    let mut forged = indices.0.clone();
    forged[1] = hash(b"not a key");
    // Signed by the CSP itself, so only the key-map lookup can catch it.
    let csp = rig.signer(&rig.keys.csp);
    let m8 = csp.sign_bytes(Payload::M8 { query, indices: IndexList(forged), function }).unwrap();
    let err = rig.ma.handle_csp_reply(query, &m8).unwrap_err();
    assert!(matches!(err, ServiceError::UnknownKeyIndex(_)));
    assert!(rig.ma.pending().is_empty());
    assert_eq!(rig.ma.events().rejections(), vec![ErrorClass::UnknownKeyIndex]);
}

#[test]
fn m8_after_completion_is_rejected() {
    let mut rig = Rig::new(NoiseMode::Fixed(0));
    rig.setup();
    let (query, m6) = token(&rig, "flu", "Age", FunctionDescriptor::Sum);
    let m8 = rig.csp.handle_search(&m6).unwrap();
    rig.ma.handle_csp_reply(query, &m8).unwrap();

    let err = rig.ma.handle_csp_reply(query, &m8).unwrap_err();
    assert!(matches!(err, ServiceError::Wire(WireError::ReplayDetected)));

    let csp = rig.signer(&rig.keys.csp);
    rig.tick();
    let resigned = csp.sign_bytes(payload(&m8)).unwrap();
    assert!(matches!(rig.ma.handle_csp_reply(query, &resigned), Err(ServiceError::ProtocolState(_))));
}

#[test]
fn exhausted_budget_is_refused() {
    let clock_opts = ServiceOptions::default();
    let mut rig = Rig::with(NoiseMode::Fixed(0), clock_opts.clone(), clock_opts);
    rig.ma = psfe_node::MaService::new(
        common::copy_keys(&rig.keys.ma),
        rig.keys.directory.clone(),
        ServiceOptions { clock: rig.clock.clone(), ..ServiceOptions::default() },
        psfe_node::MaPolicy {
            epsilon: 0.6,
            budget: psfe_core::budget::BudgetCap::Limited(1.0),
            noise: NoiseMode::Fixed(0),
            seed: Some(1),
        },
    )
    .unwrap();
    rig.setup();
    let (_, m5) = rig.analyst.token("flu", "Age", FunctionDescriptor::Sum).unwrap();
    assert!(matches!(rig.ma.respond(&m5), MaStep::Forward { .. }));
    let (t, m5) = rig.analyst.token("flu", "Age", FunctionDescriptor::Sum).unwrap();
    let MaStep::Reply(refusal) = rig.ma.respond(&m5) else { panic!("expected a refusal") };
    let Progress::Done(QueryOutcome::Refused { class, .. }) = rig.analyst.accept_ma_reply(&t, &refusal).unwrap()
    else {
        panic!()
    };
    assert_eq!(class, ErrorClass::BudgetExhausted);
}

#[test]
fn rejected_messages_leave_state_unchanged() {
    let mut rig = Rig::new(NoiseMode::Fixed(0));
    let bundle = rig.setup();
    let (query, m6) = token(&rig, "flu", "Age", FunctionDescriptor::Sum);
    let m8 = rig.csp.handle_search(&m6).unwrap();
    let (_, fresh_m5) = rig.analyst.token("mild", "sbp", FunctionDescriptor::Avg).unwrap();
    let (_, fresh_m6) = {
        let ma = rig.signer(&rig.keys.ma);
        let Payload::M6 { analyst, values, variables, function, .. } = payload(&m6) else { panic!() };
        let q = QueryId([8; 16]);
        (q, ma.sign_bytes(Payload::M6 { query: q, analyst, values, variables, function }).unwrap())
    };

    let csp_before = rig.csp.state_digest();
    let ma_before = rig.ma.state_digest();
    let flip = |bytes: &[u8], at: usize| {
        let mut b = bytes.to_vec();
        let at = at % b.len();
        b[at] ^= 0x20;
        b
    };
    for at in [0usize, 5, 20, 60, 200, 10_000] {
        assert!(rig.csp.handle_setup(&flip(&bundle.m1, at)).is_err());
        assert!(rig.csp.handle_search(&flip(&fresh_m6, at)).is_err());
        assert!(rig.ma.handle_setup(&flip(&bundle.m2, at)).is_err());
        assert!(rig.ma.handle_token(&flip(&fresh_m5, at)).is_err());
        assert!(rig.ma.handle_csp_reply(query, &flip(&m8, at)).is_err());
    }
    // Replays and wrong kinds.
    assert!(rig.csp.handle_setup(&bundle.m1).is_err());
    assert!(rig.ma.handle_setup(&bundle.m2).is_err());
    assert!(rig.csp.handle_search(&m6).is_err());
    assert!(rig.ma.handle_token(&m6).is_err());
    assert_eq!(rig.csp.state_digest(), csp_before);
    assert_eq!(rig.ma.state_digest(), ma_before);

    let classes: BTreeSet<_> = rig.ma.events().rejections().into_iter().map(|c| c.as_str()).collect();
    assert!(classes.contains("bad-signature"));
    assert!(classes.contains("replay-detected"));
    assert!(classes.contains("kind-mismatch"));
}

#[test]
fn services_only_see_their_share() {
    let mut rig = Rig::new(NoiseMode::Fixed(0));
    rig.setup();
    let ds = table1();
    let unsalted: BTreeSet<Digest> = table1_value_terms()
        .iter()
        .map(|t| hash(t.as_bytes()))
        .chain(ds.schema().variables().iter().map(|v| hash(v.name.as_bytes())))
        .collect();
    for value in table1_value_terms() {
        for variable in TABLE1_NUMERIC_VARIABLES {
            let (query, m6) = token(&rig, value, variable, FunctionDescriptor::Sum);
            // Everything the CSP receives from the MA is salted.
            let Payload::M6 { values, variables, .. } = payload(&m6) else { panic!() };
            assert!(values.is_disjoint(&unsalted) && variables.is_disjoint(&unsalted));
            // Everything the MA receives from the CSP is key indices, never
            // masked values.
            let m8 = rig.csp.handle_search(&m6).unwrap();
            if let Payload::M8 { indices, .. } = payload(&m8) {
                let m7 = rig.csp.handle_fetch(&rig.analyst.fetch(query).unwrap()).unwrap();
                let Payload::M7 { result, .. } = payload(&m7) else { panic!() };
                for cell in &result.0 {
                    assert!(!m8.windows(8).any(|w| w == cell.masked.to_le_bytes()));
                }
                assert_eq!(indices, result.indices());
            }
            rig.ma.abort(query);
        }
    }
}

#[test]
fn services_reload_persisted_state() {
    let csp_dir = tempfile::tempdir().unwrap();
    let ma_dir = tempfile::tempdir().unwrap();
    let csp_opts = ServiceOptions { storage: Some(csp_dir.path().to_owned()), ..ServiceOptions::default() };
    let ma_opts = ServiceOptions { storage: Some(ma_dir.path().to_owned()), ..ServiceOptions::default() };
    let mut rig = Rig::with(NoiseMode::Fixed(0), csp_opts.clone(), ma_opts.clone());
    rig.setup();
    token(&rig, "flu", "Age", FunctionDescriptor::Sum);
    token(&rig, "mild", "Age", FunctionDescriptor::Sum);
    assert!(csp_dir.path().join(EDS_FILE).exists());
    assert!(ma_dir.path().join(LISTS_FILE).exists());
    assert_eq!(std::fs::read_to_string(ma_dir.path().join(JOURNAL_FILE)).unwrap().lines().count(), 2);
    let spent = rig.ma.budget();

    let rig2 = Rig::with(NoiseMode::Fixed(0), csp_opts, ma_opts);
    assert!(rig2.csp.has_dataset());
    assert!(rig2.ma.has_lists());
    assert_eq!(rig2.ma.budget(), spent);
    assert_eq!(rig2.ma.budget()[0].spent(), 2.0);
}
