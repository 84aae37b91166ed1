use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{Conversation, LlmBackend, LlmError, TemplateId};
use crate::model::{Budget, QueryId};

/// Prices per 1,000 tokens.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rates {
    pub input_per_1k: f64,
    pub output_per_1k: f64,
}

impl Rates {
    pub fn cost(&self, tokens_in: u64, tokens_out: u64) -> f64 {
        tokens_in as f64 * self.input_per_1k / 1000.0 + tokens_out as f64 * self.output_per_1k / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub template_id: TemplateId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<QueryId>,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub cost: f64,
    pub latency: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageTotals {
    pub calls: u64,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub cost: f64,
    pub latency: f64,
    pub calls_by_template: BTreeMap<TemplateId, u64>,
}

/// Every model call goes through here: validation, retries, budget debits
/// and the usage ledger.
pub struct LlmGateway {
    backend: Arc<dyn LlmBackend>,
    rates: Rates,
    max_retries: u32,
    backoff: Duration,
    ledger: Mutex<Vec<UsageRecord>>,
}

impl LlmGateway {
    pub fn new(backend: Arc<dyn LlmBackend>, rates: Rates) -> Self {
        LlmGateway {
            backend,
            rates,
            max_retries: 2,
            backoff: Duration::from_millis(500),
            ledger: Mutex::new(Vec::new()),
        }
    }

    pub fn with_retries(mut self, max_retries: u32, backoff: Duration) -> Self {
        self.max_retries = max_retries;
        self.backoff = backoff;
        self
    }

    pub fn rates(&self) -> Rates {
        self.rates
    }

    /// Sends `conversation` and returns the assistant text.
    ///
    /// Fails with `BudgetExhausted` before calling out if any of `budgets` is
    /// spent. Transport errors are retried with exponential backoff.
    pub fn complete(
        &self,
        template: TemplateId,
        conversation: &Conversation,
        budgets: &[&Budget],
        query: Option<&QueryId>,
    ) -> Result<String, LlmError> {
        conversation.validate()?;
        if budgets.iter().any(|b| b.exhausted()) {
            return Err(LlmError::BudgetExhausted);
        }
        let mut attempt = 0;
        loop {
            let started = Instant::now();
            match self.backend.chat(template, conversation) {
                Ok(reply) => {
                    let latency = reply.latency.unwrap_or_else(|| started.elapsed()).as_secs_f64();
                    let cost = self.rates.cost(reply.tokens_in, reply.tokens_out);
                    for b in budgets {
                        b.charge_llm(latency, cost);
                    }
                    self.ledger.lock().push(UsageRecord {
                        template_id: template,
                        query_id: query.cloned(),
                        tokens_in: reply.tokens_in,
                        tokens_out: reply.tokens_out,
                        cost,
                        latency,
                    });
                    return Ok(reply.text);
                }
                Err(e) if e.is_retryable() && attempt < self.max_retries => {
                    log::warn!("llm call failed ({e}), retrying");
                    std::thread::sleep(self.backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    pub fn ledger(&self) -> Vec<UsageRecord> {
        self.ledger.lock().clone()
    }

    pub fn calls(&self) -> usize {
        self.ledger.lock().len()
    }

    /// Aggregates the ledger. Costs are summed in sorted order so the total
    /// does not depend on call interleaving.
    pub fn totals(&self) -> UsageTotals {
        totals_of(&self.ledger.lock())
    }
}

pub(crate) fn totals_of(records: &[UsageRecord]) -> UsageTotals {
    let mut t = UsageTotals::default();
    let mut costs: Vec<f64> = Vec::with_capacity(records.len());
    let mut lats: Vec<f64> = Vec::with_capacity(records.len());
    for r in records {
        t.calls += 1;
        t.tokens_in += r.tokens_in;
        t.tokens_out += r.tokens_out;
        costs.push(r.cost);
        lats.push(r.latency);
        *t.calls_by_template.entry(r.template_id).or_default() += 1;
    }
    costs.sort_by(f64::total_cmp);
    lats.sort_by(f64::total_cmp);
    t.cost = costs.iter().sum();
    t.latency = lats.iter().sum();
    t
}
