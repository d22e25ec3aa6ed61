//! All four parties in one process, exchanging the same signed messages
//! they would send over TCP.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use psfe_core::crypto::gen_party_keys;
use psfe_core::dataset::PlainDataset;
use psfe_core::wire::{Clock, FunctionDescriptor, SystemClock, DEFAULT_WINDOW};
use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::analyst::{AnalystSession, Progress, QueryOutcome};
use crate::csp::CspService;
use crate::curator::{CuratorSession, SetupReport};
use crate::error::ClientError;
use crate::identity::Directory;
use crate::ma::{MaPolicy, MaService, MaStep};
use crate::ServiceOptions;

#[derive(Clone, Debug)]
pub struct LocalOptions {
    pub policy: MaPolicy,
    /// Seed for party keys and dataset encryption.
    pub seed: u64,
    pub analysts: usize,
    pub clock: Arc<dyn Clock>,
    pub window: Duration,
}

impl Default for LocalOptions {
    fn default() -> Self {
        Self {
            policy: MaPolicy::default(),
            seed: 0,
            analysts: 1,
            clock: Arc::new(SystemClock),
            window: DEFAULT_WINDOW,
        }
    }
}

#[derive(Debug)]
pub struct LocalDeployment {
    pub csp: CspService,
    pub ma: MaService,
    pub curator: CuratorSession,
    pub analysts: Vec<AnalystSession>,
    rng: Mutex<StdRng>,
}

impl LocalDeployment {
    pub fn new(options: LocalOptions) -> Self {
        let mut rng = StdRng::seed_from_u64(options.seed);
        let curator = gen_party_keys(&mut rng);
        let csp = gen_party_keys(&mut rng);
        let ma = gen_party_keys(&mut rng);
        let analysts: Vec<_> = (0..options.analysts).map(|_| gen_party_keys(&mut rng)).collect();
        let directory = Directory {
            curator: curator.public(),
            csp: csp.public(),
            ma: ma.public(),
            analysts: analysts.iter().map(|a| a.public()).collect(),
        };
        let service_opts = ServiceOptions { storage: None, clock: options.clock.clone(), window: options.window };
        let (csp_id, ma_id) = (directory.csp, directory.ma);
        Self {
            csp: CspService::new(csp, directory.clone(), service_opts.clone()).expect("no storage to load"),
            ma: MaService::new(ma, directory, service_opts, options.policy).expect("valid policy"),
            curator: CuratorSession::new(curator.signing, csp_id, ma_id, options.clock.clone(), options.window),
            analysts: analysts
                .into_iter()
                .map(|keys| {
                    AnalystSession::new(
                        keys,
                        csp_id.verification,
                        ma_id.verification,
                        options.clock.clone(),
                        options.window,
                    )
                })
                .collect(),
            rng: Mutex::new(rng),
        }
    }

    pub fn setup(&self, ds: &PlainDataset) -> Result<SetupReport, ClientError> {
        let bundle = self.curator.prepare(ds, &mut *self.rng.lock().expect("rng poisoned"))?;
        let csp = self.curator.check_csp_ack(&bundle, &self.csp.respond(&bundle.m1));
        let ma = match self.ma.respond(&bundle.m2) {
            MaStep::Reply(reply) => self.curator.check_ma_ack(&bundle, &reply),
            MaStep::Forward { .. } => Err(ClientError::ProtocolState("MA forwarded a setup message".into())),
        };
        Ok(SetupReport::new(csp, ma))
    }

    /// One full read by analyst 0.
    pub fn query(&self, value: &str, variable: &str, function: FunctionDescriptor) -> Result<QueryOutcome, ClientError> {
        self.query_as(0, value, variable, function)
    }

    pub fn query_as(
        &self,
        analyst: usize,
        value: &str,
        variable: &str,
        function: FunctionDescriptor,
    ) -> Result<QueryOutcome, ClientError> {
        let session = &self.analysts[analyst];
        let (token, m5) = session.token(value, variable, function)?;
        let reply = match self.ma.respond(&m5) {
            MaStep::Reply(reply) => reply,
            MaStep::Forward { query, m6 } => self.ma.relay(query, Ok(self.csp.respond(&m6))),
        };
        match session.accept_ma_reply(&token, &reply)? {
            Progress::Done(outcome) => Ok(outcome),
            Progress::Waiting(query) => match session.accept_csp_reply(&self.csp.respond(&session.fetch(query)?)) {
                Ok(Progress::Done(outcome)) => Ok(outcome),
                Ok(Progress::Waiting(_)) => Err(ClientError::ProtocolState("result leg did not complete".into())),
                Err(e) => {
                    session.abandon(query);
                    Err(e)
                }
            },
        }
    }
}
