//! PINQ-style privacy-budget accounting.
//!
//! Every granted query spends its ε additively. A [`BudgetLedger`] either
//! shares one budget across the whole dataset ([`LedgerMode::Global`]) or
//! keeps an independent budget per record ([`LedgerMode::PerRecord`]).
//! Denied charges spend nothing.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::concern::ConcernScore;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    capacity: f64,
    spent: f64,
}

impl PrivacyBudget {
    pub fn new(capacity: f64) -> Result<Self> {
        if !(capacity >= 0.0 && capacity.is_finite()) {
            return Err(invalid(format!(
                "capacity must be a nonnegative finite number, got {capacity}"
            )));
        }
        Ok(Self {
            capacity,
            spent: 0.0,
        })
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn spent(&self) -> f64 {
        self.spent
    }

    pub fn remaining(&self) -> f64 {
        self.capacity - self.spent
    }

    pub fn can_afford(&self, eps: f64) -> bool {
        self.spent + eps <= self.capacity
    }

    fn try_spend(&mut self, eps: f64) -> bool {
        if self.can_afford(eps) {
            self.spent += eps;
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedgerMode {
    Global,
    PerRecord,
}

/// How capacities are supplied to [`BudgetLedger::new`].
#[derive(Debug, Clone, PartialEq)]
pub enum Capacities {
    /// The same capacity everywhere (the shared capacity in Global mode).
    Uniform(f64),
    /// One capacity per record id. PerRecord mode only.
    PerRecord(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeEntry {
    pub query: u64,
    pub eps: f64,
    pub granted: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChargeOutcome {
    pub granted: Vec<String>,
    pub denied: Vec<String>,
}

/// Accounting state for one dataset.
///
/// Single writer: `charge` takes `&mut self`, reads take `&self`.
#[derive(Debug, Clone)]
pub struct BudgetLedger {
    mode: LedgerMode,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    // One entry in Global mode, one per record otherwise.
    budgets: Vec<PrivacyBudget>,
    charges: Vec<ChargeEntry>,
}

impl BudgetLedger {
    pub fn new(mode: LedgerMode, record_ids: &[String], capacities: &Capacities) -> Result<Self> {
        let mut index = HashMap::with_capacity(record_ids.len());
        for (i, id) in record_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(invalid(format!("duplicate record id `{id}`")));
            }
        }
        let budgets = match (mode, capacities) {
            (LedgerMode::Global, Capacities::Uniform(c)) => vec![PrivacyBudget::new(*c)?],
            (LedgerMode::Global, Capacities::PerRecord(_)) => {
                return Err(invalid("global ledger takes a single capacity"))
            }
            (LedgerMode::PerRecord, Capacities::Uniform(c)) => {
                vec![PrivacyBudget::new(*c)?; record_ids.len()]
            }
            (LedgerMode::PerRecord, Capacities::PerRecord(map)) => {
                if let Some(extra) = map.keys().find(|k| !index.contains_key(*k)) {
                    return Err(invalid(format!("capacity given for unknown record `{extra}`")));
                }
                record_ids
                    .iter()
                    .map(|id| {
                        let c = map
                            .get(id)
                            .ok_or_else(|| invalid(format!("no capacity for record `{id}`")))?;
                        PrivacyBudget::new(*c)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        Ok(Self {
            mode,
            ids: record_ids.to_vec(),
            index,
            budgets,
            charges: Vec::new(),
        })
    }

    pub fn mode(&self) -> LedgerMode {
        self.mode
    }

    pub fn record_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn charges(&self) -> &[ChargeEntry] {
        &self.charges
    }

    fn slot(&self, id: &str) -> Result<usize> {
        let i = *self
            .index
            .get(id)
            .ok_or_else(|| invalid(format!("unknown record `{id}`")))?;
        Ok(match self.mode {
            LedgerMode::Global => 0,
            LedgerMode::PerRecord => i,
        })
    }

    /// The budget governing `id` (the shared one in Global mode).
    pub fn budget(&self, id: &str) -> Result<&PrivacyBudget> {
        Ok(&self.budgets[self.slot(id)?])
    }

    /// Charges `eps` against every requested record.
    ///
    /// A record is granted iff its governing budget can still afford `eps`.
    /// In Global mode the request is granted or denied as a whole and the
    /// shared budget is charged once.
    pub fn charge(&mut self, record_ids: &[String], eps: f64) -> Result<ChargeOutcome> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(invalid(format!("charge must be positive, got {eps}")));
        }
        let slots = record_ids
            .iter()
            .map(|id| self.slot(id))
            .collect::<Result<Vec<_>>>()?;

        let mut outcome = ChargeOutcome::default();
        match self.mode {
            LedgerMode::Global => {
                if !record_ids.is_empty() && self.budgets[0].try_spend(eps) {
                    outcome.granted = record_ids.to_vec();
                } else {
                    outcome.denied = record_ids.to_vec();
                }
            }
            LedgerMode::PerRecord => {
                for (id, slot) in record_ids.iter().zip(slots) {
                    if self.budgets[slot].try_spend(eps) {
                        outcome.granted.push(id.clone());
                    } else {
                        outcome.denied.push(id.clone());
                    }
                }
            }
        }
        self.charges.push(ChargeEntry {
            query: self.charges.len() as u64,
            eps,
            granted: outcome.granted.clone(),
        });
        Ok(outcome)
    }

    pub fn remaining(&self, id: &str) -> Result<f64> {
        Ok(self.budget(id)?.remaining())
    }

    /// Sum of `spent` over the ledger's budget entries.
    pub fn total_spent(&self) -> f64 {
        self.budgets.iter().map(|b| b.spent).sum()
    }

    /// Records that cannot afford a further charge of `eps_next`.
    pub fn oobudget_count(&self, eps_next: f64) -> usize {
        match self.mode {
            LedgerMode::Global if !self.budgets[0].can_afford(eps_next) => self.ids.len(),
            LedgerMode::Global => 0,
            LedgerMode::PerRecord => self
                .budgets
                .iter()
                .filter(|b| !b.can_afford(eps_next))
                .count(),
        }
    }

    /// Fraction of records that cannot afford a further charge of `eps_next`.
    pub fn oobudget_ratio(&self, eps_next: f64) -> f64 {
        if self.ids.is_empty() {
            return 0.0;
        }
        self.oobudget_count(eps_next) as f64 / self.ids.len() as f64
    }

    pub fn dump(&self) -> LedgerDump {
        LedgerDump {
            mode: self.mode,
            records: self
                .ids
                .iter()
                .map(|id| {
                    let b = self.budget(id).expect("ids are indexed");
                    RecordDump {
                        id: id.clone(),
                        capacity: b.capacity,
                        spent: b.spent,
                    }
                })
                .collect(),
            charges: self.charges.clone(),
        }
    }
}

/// JSON form of a ledger's state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerDump {
    pub mode: LedgerMode,
    pub records: Vec<RecordDump>,
    pub charges: Vec<ChargeEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordDump {
    pub id: String,
    pub capacity: f64,
    pub spent: f64,
}

/// Affine map from concern score to budget capacity:
/// `capacity = b_min + (b_max − b_min)·(1 − r)`. Higher concern, less budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetMap {
    pub b_min: f64,
    pub b_max: f64,
}

impl Default for BudgetMap {
    fn default() -> Self {
        Self {
            b_min: 1.0,
            b_max: 5.0,
        }
    }
}

impl BudgetMap {
    pub fn new(b_min: f64, b_max: f64) -> Result<Self> {
        if !(b_min >= 0.0 && b_min <= b_max && b_max.is_finite()) {
            return Err(invalid(format!(
                "need 0 <= b_min <= b_max, got b_min={b_min}, b_max={b_max}"
            )));
        }
        Ok(Self { b_min, b_max })
    }

    pub fn capacity(&self, score: ConcernScore) -> f64 {
        self.b_min + (self.b_max - self.b_min) * (1.0 - score.value())
    }
}

/// Per-record capacities from concern scores.
pub fn assign_personalized(
    scores: &BTreeMap<String, f64>,
    b_min: f64,
    b_max: f64,
) -> Result<BTreeMap<String, f64>> {
    let map = BudgetMap::new(b_min, b_max)?;
    scores
        .iter()
        .map(|(id, &r)| {
            let score = ConcernScore::new(r)
                .map_err(|_| invalid(format!("score {r} for `{id}` is outside [0, 1]")))?;
            Ok((id.clone(), map.capacity(score)))
        })
        .collect()
}
