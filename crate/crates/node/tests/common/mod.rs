#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use psfe_core::crypto::{gen_party_keys, EncryptionKeyPair, PartyKeys, SigningKeyPair};
use psfe_core::dataset::fixtures::table1;
use psfe_core::wire::{Clock, ManualClock, MessageSigner, Timestamp, DEFAULT_WINDOW};
use psfe_node::{
    AnalystSession, CspService, CuratorSession, Directory, MaPolicy, MaService, NoiseMode, ServiceOptions,
    SetupBundle,
};
use rand::rngs::StdRng;
use rand::SeedableRng;

pub const T0: Timestamp = Timestamp(1_750_000_000_000);

pub fn copy_keys(k: &PartyKeys) -> PartyKeys {
    PartyKeys {
        signing: SigningKeyPair::from_seed(k.signing.seed()),
        encryption: EncryptionKeyPair::from_secret(k.encryption.secret_bytes()),
    }
}

pub struct Keys {
    pub curator: PartyKeys,
    pub csp: PartyKeys,
    pub ma: PartyKeys,
    pub analyst: PartyKeys,
    pub directory: Directory,
}

pub fn keys(seed: u64) -> Keys {
    let mut rng = StdRng::seed_from_u64(seed);
    let (curator, csp, ma, analyst) =
        (gen_party_keys(&mut rng), gen_party_keys(&mut rng), gen_party_keys(&mut rng), gen_party_keys(&mut rng));
    let directory =
        Directory { curator: curator.public(), csp: csp.public(), ma: ma.public(), analysts: vec![analyst.public()] };
    Keys { curator, csp, ma, analyst, directory }
}

/// Services and clients wired by hand, on a shared manual clock, with
/// spare signers so tests can forge well-signed messages.
pub struct Rig {
    pub clock: Arc<ManualClock>,
    pub keys: Keys,
    pub csp: CspService,
    pub ma: MaService,
    pub curator: CuratorSession,
    pub analyst: AnalystSession,
    pub rng: StdRng,
}

impl Rig {
    pub fn new(noise: NoiseMode) -> Self {
        Self::with(noise, ServiceOptions::default(), ServiceOptions::default())
    }

    pub fn with(noise: NoiseMode, csp_opts: ServiceOptions, ma_opts: ServiceOptions) -> Self {
        let clock = Arc::new(ManualClock::new(T0));
        let keys = keys(11);
        let dyn_clock: Arc<dyn Clock> = clock.clone();
        let csp = CspService::new(
            copy_keys(&keys.csp),
            keys.directory.clone(),
            ServiceOptions { clock: dyn_clock.clone(), ..csp_opts },
        )
        .unwrap();
        let policy = MaPolicy { noise, seed: Some(5), ..MaPolicy::default() };
        let ma = MaService::new(
            copy_keys(&keys.ma),
            keys.directory.clone(),
            ServiceOptions { clock: dyn_clock.clone(), ..ma_opts },
            policy,
        )
        .unwrap();
        let curator = CuratorSession::new(
            copy_keys(&keys.curator).signing,
            keys.directory.csp,
            keys.directory.ma,
            dyn_clock.clone(),
            DEFAULT_WINDOW,
        );
        let analyst = AnalystSession::new(
            copy_keys(&keys.analyst),
            keys.directory.csp.verification,
            keys.directory.ma.verification,
            dyn_clock,
            DEFAULT_WINDOW,
        );
        Self { clock, keys, csp, ma, curator, analyst, rng: StdRng::seed_from_u64(99) }
    }

    pub fn signer(&self, keys: &PartyKeys) -> MessageSigner {
        MessageSigner::new(copy_keys(keys).signing, self.clock.clone())
    }

    pub fn bundle(&mut self) -> SetupBundle {
        self.curator.prepare(&table1(), &mut self.rng).unwrap()
    }

    /// Runs setup with Table 1 and checks both acknowledgements.
    pub fn setup(&mut self) -> SetupBundle {
        let bundle = self.bundle();
        let m3 = self.csp.handle_setup(&bundle.m1).unwrap();
        self.curator.check_csp_ack(&bundle, &m3).unwrap();
        let m4 = self.ma.handle_setup(&bundle.m2).unwrap();
        self.curator.check_ma_ack(&bundle, &m4).unwrap();
        bundle
    }

    pub fn tick(&self) {
        self.clock.advance(Duration::from_millis(1));
    }
}
