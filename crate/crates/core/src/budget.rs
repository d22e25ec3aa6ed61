//! Per-analyst privacy budget accounting (sequential composition of pure ε).

use std::collections::HashMap;
use std::sync::Mutex;

use thiserror::Error;

use crate::crypto::Digest;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BudgetCap {
    Unlimited,
    Limited(f64),
}

impl BudgetCap {
    fn admits(self, total: f64) -> bool {
        match self {
            BudgetCap::Unlimited => true,
            // small slack so ten charges of 0.1 fit a cap of 1.0
            BudgetCap::Limited(cap) => total <= cap + 1e-9,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BudgetError {
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidCharge(f64),
    #[error("privacy budget exhausted: spent {spent}, requested {requested}, cap {cap}")]
    Exhausted { spent: f64, requested: f64, cap: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BudgetAccount {
    analyst: Digest,
    spent: f64,
    cap: BudgetCap,
}

impl BudgetAccount {
    pub fn new(analyst: Digest, cap: BudgetCap) -> Self {
        Self { analyst, spent: 0.0, cap }
    }

    pub fn analyst(&self) -> Digest {
        self.analyst
    }

    pub fn spent(&self) -> f64 {
        self.spent
    }

    pub fn cap(&self) -> BudgetCap {
        self.cap
    }

    /// Adds `epsilon` to the spent total, or leaves the account untouched and
    /// reports exhaustion.
    pub fn charge(&mut self, epsilon: f64) -> Result<(), BudgetError> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(BudgetError::InvalidCharge(epsilon));
        }
        let total = self.spent + epsilon;
        if !self.cap.admits(total) {
            let cap = match self.cap {
                BudgetCap::Limited(c) => c,
                BudgetCap::Unlimited => f64::INFINITY,
            };
            return Err(BudgetError::Exhausted { spent: self.spent, requested: epsilon, cap });
        }
        self.spent = total;
        Ok(())
    }
}

/// All accounts held by one authority. Charges are atomic per call.
#[derive(Debug)]
pub struct BudgetLedger {
    cap: BudgetCap,
    accounts: Mutex<HashMap<Digest, BudgetAccount>>,
}

impl BudgetLedger {
    pub fn new(cap: BudgetCap) -> Self {
        Self { cap, accounts: Mutex::new(HashMap::new()) }
    }

    pub fn cap(&self) -> BudgetCap {
        self.cap
    }

    pub fn charge(&self, analyst: Digest, epsilon: f64) -> Result<f64, BudgetError> {
        let mut accounts = self.accounts.lock().expect("budget lock poisoned");
        let account = accounts
            .entry(analyst)
            .or_insert_with(|| BudgetAccount::new(analyst, self.cap));
        account.charge(epsilon)?;
        Ok(account.spent())
    }

    /// Records spending that already happened, ignoring the cap. Used when
    /// replaying a persisted journal.
    pub fn restore(&self, analyst: Digest, epsilon: f64) {
        let mut accounts = self.accounts.lock().expect("budget lock poisoned");
        let account = accounts
            .entry(analyst)
            .or_insert_with(|| BudgetAccount::new(analyst, self.cap));
        account.spent += epsilon;
    }

    pub fn spent(&self, analyst: &Digest) -> f64 {
        self.accounts
            .lock()
            .expect("budget lock poisoned")
            .get(analyst)
            .map_or(0.0, BudgetAccount::spent)
    }

    /// Accounts sorted by analyst, for persistence and state digests.
    pub fn snapshot(&self) -> Vec<BudgetAccount> {
        let mut all: Vec<_> = self.accounts.lock().expect("budget lock poisoned").values().cloned().collect();
        all.sort_by_key(|a| a.analyst);
        all
    }
}
