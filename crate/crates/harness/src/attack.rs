//! Result and key substitution attacks over real TCP links.
//!
//! Each run builds a fresh deployment with the adversary on all three
//! analyst and MA links, performs one clean read so the adversary can
//! capture traffic, arms it and performs a second read.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use psfe_core::crypto::gen_party_keys;
use psfe_core::dataset::fixtures::{table1, TABLE1_NUMERIC_VARIABLES, TABLE1_ROWS};
use psfe_core::wire::{Clock, ErrorClass, FunctionDescriptor, ManualClock, MessageKind, Timestamp, DEFAULT_WINDOW};
use psfe_node::net::{run_query, run_setup, spawn_csp, spawn_ma, MaNode};
use psfe_node::{
    AnalystSession, CspService, CuratorSession, Directory, MaPolicy, MaService, NoiseMode, QueryOutcome,
    ServiceOptions,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Serialize, Serializer};
use tokio::task::JoinHandle;

use crate::proxy::{Adversary, Link, Observed, Strategy};
use crate::HarnessError;

const TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackName {
    /// The analyst is handed a result list other than the CSP's answer.
    ResultSubstitution,
    /// The analyst is handed a functional key other than the one for its query.
    KeySubstitution,
}

impl AttackName {
    pub fn strategies(self) -> &'static [Strategy] {
        match self {
            AttackName::ResultSubstitution => &[Strategy::Replay(MessageKind::M7), Strategy::SubstituteResult],
            AttackName::KeySubstitution => &[
                Strategy::TamperKey,
                Strategy::TamperIndices,
                Strategy::TamperFunction,
                Strategy::Replay(MessageKind::M9),
            ],
        }
    }

    pub fn of(strategy: Strategy) -> Option<Self> {
        [AttackName::ResultSubstitution, AttackName::KeySubstitution]
            .into_iter()
            .find(|a| a.strategies().contains(&strategy))
    }
}

impl fmt::Display for AttackName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackName::ResultSubstitution => "result-substitution",
            AttackName::KeySubstitution => "key-substitution",
        })
    }
}

impl FromStr for AttackName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "result-substitution" => Ok(AttackName::ResultSubstitution),
            "key-substitution" => Ok(AttackName::KeySubstitution),
            _ => Err(format!("unknown attack {s:?}")),
        }
    }
}

/// The party that rejected a tampered read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Victim {
    Analyst,
    Ma,
    Csp,
}

/// Who should reject a strategy's rewrite, and with which classes.
pub fn expectation(strategy: Strategy) -> Option<(Victim, &'static [ErrorClass])> {
    use ErrorClass::*;
    Some(match strategy {
        Strategy::Passthrough => return None,
        Strategy::Replay(MessageKind::M8) => (Victim::Ma, &[StaleTimestamp, ReplayDetected]),
        Strategy::Replay(_) => (Victim::Analyst, &[StaleTimestamp, ReplayDetected]),
        Strategy::SubstituteResult => (Victim::Analyst, &[BadSignature]),
        Strategy::TamperKey => (Victim::Analyst, &[BadSignature, DecryptionFailed]),
        Strategy::TamperIndices => (Victim::Ma, &[BadSignature, UnknownKeyIndex]),
        Strategy::TamperFunction => (Victim::Ma, &[BadSignature]),
    })
}

fn class_names<S: Serializer>(classes: &[ErrorClass], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(classes.iter().map(|c| c.as_str()))
}

fn class_name<S: Serializer>(class: &Option<ErrorClass>, s: S) -> Result<S::Ok, S::Error> {
    match class {
        Some(c) => s.serialize_str(c.as_str()),
        None => s.serialize_none(),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AttackVerdict {
    pub attack: Option<AttackName>,
    pub strategy: String,
    /// The victim rejected with one of the expected classes. For the
    /// passthrough control: something was rejected at all.
    pub detected: bool,
    /// Who rejected the second read, if anyone.
    pub rejected_by: Option<Victim>,
    #[serde(serialize_with = "class_name")]
    pub class: Option<ErrorClass>,
    #[serde(serialize_with = "class_names")]
    pub expected: Vec<ErrorClass>,
    /// The clock was moved past the freshness window before the replay.
    pub stale: bool,
    pub query: (String, String),
    /// Exact answer to the second read, when it completed.
    pub answer: Option<i64>,
    pub truth: i64,
    pub transcript: Vec<Observed>,
}

struct Tasks(Vec<JoinHandle<()>>);

impl Drop for Tasks {
    fn drop(&mut self) {
        for t in &self.0 {
            t.abort();
        }
    }
}

fn random_query<R: Rng + ?Sized>(rng: &mut R) -> (&'static str, &'static str) {
    let row = TABLE1_ROWS[rng.gen_range(0..TABLE1_ROWS.len())];
    let value = if rng.gen() { row.0 } else { row.1 };
    (value, TABLE1_NUMERIC_VARIABLES[rng.gen_range(0..TABLE1_NUMERIC_VARIABLES.len())])
}

/// Fresh services and clients on a shared manual clock, with the
/// adversary on every analyst and MA link. Dropping it stops the services.
pub struct InterposedDeployment {
    pub clock: Arc<ManualClock>,
    pub adversary: Arc<Adversary>,
    pub ma: Arc<MaService>,
    pub analyst: AnalystSession,
    to_ma: String,
    to_csp: String,
    _tasks: Tasks,
}

impl InterposedDeployment {
    /// Deploys and runs setup with Table 1; noise is off so answers are exact.
    pub async fn start<R: Rng + ?Sized>(strategy: Strategy, rng: &mut R) -> Result<Self, HarnessError> {
        let manual = Arc::new(ManualClock::new(Timestamp(1_700_000_000_000 + rng.gen_range(0..1_000_000_000))));
        let clock: Arc<dyn Clock> = manual.clone();
        let mut key_rng = StdRng::seed_from_u64(rng.gen());
        let (curator, csp_keys, ma_keys, analyst) = (
            gen_party_keys(&mut key_rng),
            gen_party_keys(&mut key_rng),
            gen_party_keys(&mut key_rng),
            gen_party_keys(&mut key_rng),
        );
        let directory = Directory {
            curator: curator.public(),
            csp: csp_keys.public(),
            ma: ma_keys.public(),
            analysts: vec![analyst.public()],
        };
        let options = ServiceOptions { storage: None, clock: clock.clone(), window: DEFAULT_WINDOW };
        let service = |e: psfe_node::ServiceError| HarnessError::Deployment(e.to_string());

        let csp = CspService::new(csp_keys, directory.clone(), options.clone()).map_err(service)?;
        let (csp_addr, csp_task) = spawn_csp(Arc::new(csp), "127.0.0.1:0").await?;
        let adversary = Adversary::new(strategy, rng.gen());
        let (ma_csp, link_task) = adversary.interpose(Link::MaCsp, csp_addr).await?;
        let policy = MaPolicy { noise: NoiseMode::Fixed(0), seed: Some(rng.gen()), ..MaPolicy::default() };
        let ma = Arc::new(MaService::new(ma_keys, directory.clone(), options, policy).map_err(service)?);
        let node = MaNode::new(ma.clone(), ma_csp.to_string(), TIMEOUT);
        let (ma_addr, ma_task) = spawn_ma(Arc::new(node), "127.0.0.1:0").await?;
        let (to_ma, a_task) = adversary.interpose(Link::AnalystMa, ma_addr).await?;
        let (to_csp, b_task) = adversary.interpose(Link::AnalystCsp, csp_addr).await?;
        let tasks = Tasks(vec![csp_task, link_task, ma_task, a_task, b_task]);

        let curator =
            CuratorSession::new(curator.signing, directory.csp, directory.ma, clock.clone(), DEFAULT_WINDOW);
        let report = run_setup(&curator, &table1(), &csp_addr.to_string(), &ma_addr.to_string(), TIMEOUT).await?;
        if !report.is_complete() {
            return Err(HarnessError::Deployment(report.to_line()));
        }
        let analyst =
            AnalystSession::new(analyst, directory.csp.verification, directory.ma.verification, clock, DEFAULT_WINDOW);
        Ok(Self {
            clock: manual,
            adversary,
            ma,
            analyst,
            to_ma: to_ma.to_string(),
            to_csp: to_csp.to_string(),
            _tasks: tasks,
        })
    }

    /// One read through the adversary.
    pub async fn read(
        &self,
        value: &str,
        variable: &str,
        function: FunctionDescriptor,
    ) -> Result<QueryOutcome, psfe_node::ClientError> {
        run_query(&self.analyst, value, variable, function, &self.to_ma, &self.to_csp, TIMEOUT).await
    }
}

/// One attack run against a fresh deployment.
pub async fn run_attack(strategy: Strategy, seed: u64) -> Result<AttackVerdict, HarnessError> {
    let mut rng = StdRng::seed_from_u64(seed);
    let dep = InterposedDeployment::start(strategy, &mut rng).await?;

    let (value, variable) = random_query(&mut rng);
    match dep.read(value, variable, FunctionDescriptor::Sum).await? {
        QueryOutcome::Answer(_) => {}
        other => return Err(HarnessError::Deployment(format!("clean read failed: {other:?}"))),
    }

    let stale = matches!(strategy, Strategy::Replay(_)) && rng.gen();
    let pause = if stale {
        DEFAULT_WINDOW + Duration::from_millis(rng.gen_range(1..5_000))
    } else {
        Duration::from_millis(rng.gen_range(1..50))
    };
    dep.clock.advance(pause);
    dep.adversary.arm();

    let (value, variable) = random_query(&mut rng);
    let (truth, _) = table1().plaintext_sum(value, variable).expect("fixture terms have rows");
    let ma_rejections = dep.ma.events().rejections().len();
    let second = dep.read(value, variable, FunctionDescriptor::Sum).await;
    let (rejected_by, class, answer) = match second {
        Ok(QueryOutcome::Answer(a)) => (None, None, Some(a.sum)),
        Ok(QueryOutcome::NoResults) => (None, None, None),
        Ok(QueryOutcome::Refused { class, .. }) => {
            // A refusal the MA relays may originate at the CSP.
            let logged = dep.ma.events().rejections().get(ma_rejections..).is_some_and(|r| r.contains(&class));
            (Some(if logged { Victim::Ma } else { Victim::Csp }), Some(class), None)
        }
        Err(e) => (Some(Victim::Analyst), e.class(), None),
    };

    let expected = expectation(strategy);
    let detected = match expected {
        None => rejected_by.is_some() || answer != Some(truth),
        Some((victim, classes)) => rejected_by == Some(victim) && class.is_some_and(|c| classes.contains(&c)),
    };
    Ok(AttackVerdict {
        attack: AttackName::of(strategy),
        strategy: strategy.to_string(),
        detected,
        rejected_by,
        class,
        expected: expected.map(|(_, c)| c.to_vec()).unwrap_or_default(),
        stale,
        query: (value.to_owned(), variable.to_owned()),
        answer,
        truth,
        transcript: dep.adversary.transcript(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CampaignReport {
    pub strategy: String,
    pub runs: usize,
    pub detected: usize,
    /// Histogram of rejection classes.
    pub classes: BTreeMap<String, usize>,
    /// Every run detected, or none for the passthrough control.
    pub passed: bool,
    /// Runs that did not go as expected.
    pub failures: Vec<AttackVerdict>,
}

/// `runs` independent attack runs with seeds derived from `seed`.
pub async fn run_campaign(strategy: Strategy, runs: usize, seed: u64) -> Result<CampaignReport, HarnessError> {
    let control = strategy == Strategy::Passthrough;
    let mut report = CampaignReport {
        strategy: strategy.to_string(),
        runs,
        detected: 0,
        classes: BTreeMap::new(),
        passed: true,
        failures: Vec::new(),
    };
    for i in 0..runs {
        let verdict = run_attack(strategy, seed.wrapping_mul(1_000_003).wrapping_add(i as u64)).await?;
        let name = verdict.class.map_or("none", ErrorClass::as_str);
        *report.classes.entry(name.to_owned()).or_default() += 1;
        report.detected += usize::from(verdict.detected);
        if verdict.detected == control {
            report.passed = false;
            report.failures.push(verdict);
        }
    }
    Ok(report)
}
