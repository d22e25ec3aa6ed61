use psfe_core::dataset::fixtures::{table1, TABLE1_NUMERIC_VARIABLES, TABLE1_ROWS};
use psfe_core::wire::{ErrorClass, FunctionDescriptor, MessageKind};
use psfe_harness::attack::{expectation, run_attack, run_campaign, AttackName, InterposedDeployment, Victim};
use psfe_harness::proxy::{Link, Strategy};
use rand::rngs::StdRng;
use rand::SeedableRng;

#[tokio::test]
async fn passthrough_is_transparent() {
    let dep = InterposedDeployment::start(Strategy::Passthrough, &mut StdRng::seed_from_u64(4)).await.unwrap();
    dep.adversary.arm();
    let ds = table1();
    for value in TABLE1_ROWS.iter().flat_map(|r| [r.0, r.1]) {
        for variable in TABLE1_NUMERIC_VARIABLES {
            let outcome = dep.read(value, variable, FunctionDescriptor::Sum).await.unwrap();
            let answer = outcome.answer().unwrap();
            assert_eq!((answer.sum, answer.count), ds.plaintext_sum(value, variable).unwrap());
        }
    }
    let transcript = dep.adversary.transcript();
    assert_eq!(dep.adversary.altered(), 0);
    // M5, M9 on the MA link; fetch and M7 on the CSP link; M6, M8 between them.
    assert_eq!(transcript.len(), 24 * 6);
    for link in [Link::AnalystMa, Link::AnalystCsp, Link::MaCsp] {
        assert_eq!(transcript.iter().filter(|o| o.link == link).count(), 48);
    }
    assert!(dep.ma.events().rejections().is_empty());
}

#[tokio::test]
async fn each_strategy_is_detected_by_its_victim() {
    for strategy in Strategy::ALL.into_iter().filter(|s| *s != Strategy::Passthrough) {
        let (victim, classes) = expectation(strategy).unwrap();
        for seed in 0..8 {
            let verdict = run_attack(strategy, seed).await.unwrap();
            assert!(verdict.detected, "{strategy} seed {seed}: {verdict:?}");
            assert_eq!(verdict.rejected_by, Some(victim));
            assert!(classes.contains(&verdict.class.unwrap()));
            assert!(verdict.transcript.iter().any(|o| o.altered), "{strategy}: nothing was rewritten");
            assert_eq!(verdict.answer, None);
        }
    }
}

#[tokio::test]
async fn replays_are_caught_fresh_or_stale() {
    let mut seen = Vec::new();
    for seed in 0..16 {
        let verdict = run_attack(Strategy::Replay(MessageKind::M7), seed).await.unwrap();
        let expected = if verdict.stale { ErrorClass::StaleTimestamp } else { ErrorClass::ReplayDetected };
        assert_eq!(verdict.class, Some(expected), "seed {seed}");
        seen.push(verdict.stale);
    }
    assert!(seen.contains(&true) && seen.contains(&false));
}

#[tokio::test]
async fn tampered_m8_is_rejected_by_the_ma() {
    for strategy in [Strategy::TamperIndices, Strategy::TamperFunction] {
        let verdict = run_attack(strategy, 77).await.unwrap();
        assert_eq!(verdict.rejected_by, Some(Victim::Ma));
        assert_eq!(verdict.class, Some(ErrorClass::BadSignature));
    }
}

#[tokio::test]
async fn campaigns_report_pass_and_control() {
    let control = run_campaign(Strategy::Passthrough, 5, 9).await.unwrap();
    assert!(control.passed);
    assert_eq!(control.detected, 0);
    let attack = run_campaign(Strategy::TamperKey, 5, 9).await.unwrap();
    assert!(attack.passed);
    assert_eq!(attack.detected, 5);
    assert_eq!(attack.classes.get("bad-signature"), Some(&5));
}

#[test]
fn attack_names_group_strategies() {
    assert_eq!(AttackName::of(Strategy::SubstituteResult), Some(AttackName::ResultSubstitution));
    assert_eq!(AttackName::of(Strategy::Replay(MessageKind::M9)), Some(AttackName::KeySubstitution));
    assert_eq!(AttackName::of(Strategy::Passthrough), None);
    assert_eq!("key-substitution".parse::<AttackName>().unwrap(), AttackName::KeySubstitution);
}
