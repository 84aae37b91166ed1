//! The rewrite loop: rounds of suggest, correct and evaluate over a workload,
//! feeding the rule repository and stopping on convergence or budget.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::corrector::{CorrectionTrace, Corrector, CorrectorConfig};
use crate::embed::{EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::evaluator::{Classification, EquivalenceCheck, Evaluator, PerformanceVerdict};
use crate::llm::{self, Bindings, LlmError, LlmGateway, TemplateId};
use crate::model::{
    Budget, CandidateRewrite, Explanation, Query, QueryId, RewriteOutcome, DEFAULT_QUERY_SECONDS,
    DEFAULT_THETA,
};
use crate::report::{RepoDelta, RunReport, StopReason};
use crate::repo::{HintSelection, RepoServices, RuleId, RuleRepository, DEFAULT_GROUP_CANDIDATES, DEFAULT_K_GROUPS, DEFAULT_K_NEIGHBORS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub zero_shot_rounds: u32,
    pub max_total_rounds: u32,
    pub theta: f64,
    /// Time allowance per query, shared across rounds.
    #[serde(with = "unbounded")]
    pub per_query_seconds: f64,
    #[serde(with = "unbounded")]
    pub global_seconds: f64,
    #[serde(with = "unbounded")]
    pub global_money: f64,
    pub k_neighbors: usize,
    pub k_groups: usize,
    pub group_candidates: usize,
    pub max_iter: u32,
    pub context_chars: usize,
    pub workers: usize,
    /// Keep accepted queries in the pending set to look for better rewrites.
    pub requeue_accepted: bool,
}

/// Infinite allowances travel as `null`.
mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let corr = CorrectorConfig::default();
        RunConfig {
            zero_shot_rounds: 4,
            max_total_rounds: 5,
            theta: DEFAULT_THETA,
            per_query_seconds: DEFAULT_QUERY_SECONDS,
            global_seconds: f64::INFINITY,
            global_money: f64::INFINITY,
            k_neighbors: DEFAULT_K_NEIGHBORS,
            k_groups: DEFAULT_K_GROUPS,
            group_candidates: DEFAULT_GROUP_CANDIDATES,
            max_iter: corr.max_iter,
            context_chars: corr.context_chars,
            workers: 1,
            requeue_accepted: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.max_total_rounds == 0 {
            return bad("max_total_rounds must be at least 1");
        }
        if self.zero_shot_rounds > self.max_total_rounds {
            return bad("zero_shot_rounds cannot exceed max_total_rounds");
        }
        if !self.theta.is_finite() || self.theta < 1.0 {
            return bad("theta must be a finite number >= 1");
        }
        if self.per_query_seconds.is_nan() || self.global_seconds.is_nan() || self.global_money.is_nan() {
            return bad("budgets must be numbers");
        }
        if self.max_iter == 0 || self.workers == 0 {
            return bad("max_iter and workers must be at least 1");
        }
        Ok(())
    }

    fn corrector(&self) -> CorrectorConfig {
        CorrectorConfig {
            max_iter: self.max_iter,
            context_chars: self.context_chars,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Diagnosis {
    SyntaxStuck,
    Inequivalent,
    Regression,
    NoImprovement,
    NoSuggestion,
    Unexplained,
    Budget,
    Error,
}

/// Everything that happened to one query in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryAttempt {
    pub round: u32,
    pub query_id: QueryId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<TemplateId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hints: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggested_sql: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_sql: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<Explanation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped_rules: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub corrections: Vec<CorrectionTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equivalence: Option<EquivalenceCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub performance: Option<PerformanceVerdict>,
    pub novel: bool,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnosis: Option<Diagnosis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl QueryAttempt {
    fn new(round: u32, query_id: QueryId) -> Self {
        QueryAttempt {
            round,
            query_id,
            template: None,
            hints: Vec::new(),
            suggested_sql: None,
            final_sql: None,
            explanation: None,
            dropped_rules: Vec::new(),
            corrections: Vec::new(),
            equivalence: None,
            performance: None,
            novel: false,
            accepted: false,
            diagnosis: None,
            detail: None,
        }
    }

    fn fail(mut self, d: Diagnosis, detail: impl Into<String>) -> Self {
        self.diagnosis = Some(d);
        self.detail = Some(detail.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: u32,
    pub hinted: bool,
    pub attempted: Vec<QueryId>,
    pub accepted: Vec<QueryId>,
    pub res_changed: bool,
    pub novel_candidates: usize,
}

/// A rewrite suggestion with its self-reported rules.
#[derive(Debug, Clone, PartialEq)]
pub struct Suggestion {
    pub template: TemplateId,
    pub candidate: CandidateRewrite,
    pub explanation: Explanation,
    pub dropped_rules: Vec<String>,
}

/// The collaborators a run needs.
pub struct Workbench<'a> {
    pub llm: &'a LlmGateway,
    pub embedder: &'a dyn EmbeddingProvider,
    pub evaluator: &'a Evaluator,
    pub config: RunConfig,
}

pub struct RunState {
    pub queries: Vec<Query>,
    pub pending: Vec<QueryId>,
    /// Best accepted outcome per query.
    pub results: BTreeMap<QueryId, RewriteOutcome>,
    pub round_index: u32,
    pub hinted_phase: bool,
    pub rounds: Vec<RoundSummary>,
    pub attempts: Vec<QueryAttempt>,
    pub truncated: bool,
    pub global_budget: Budget,
    query_budgets: HashMap<QueryId, Budget>,
    embeddings: HashMap<QueryId, EmbeddingVector>,
    seen: HashMap<QueryId, BTreeSet<String>>,
}

impl RunState {
    pub fn new(queries: Vec<Query>, config: &RunConfig, embedder: &dyn EmbeddingProvider) -> Result<Self> {
        if queries.is_empty() {
            return Err(Error::InvalidInput("workload has no queries".into()));
        }
        let mut ids = BTreeSet::new();
        let mut embeddings = HashMap::new();
        let mut query_budgets = HashMap::new();
        let mut seen = HashMap::new();
        for q in &queries {
            if !ids.insert(q.id.clone()) {
                return Err(Error::InvalidInput(format!("duplicate query id {}", q.id)));
            }
            embeddings.insert(q.id.clone(), embedder.embed(&q.canonical_sql)?);
            query_budgets.insert(q.id.clone(), Budget::new(config.per_query_seconds, f64::INFINITY));
            seen.insert(q.id.clone(), BTreeSet::from([q.canonical_sql.clone()]));
        }
        Ok(RunState {
            pending: queries.iter().map(|q| q.id.clone()).collect(),
            queries,
            results: BTreeMap::new(),
            round_index: 0,
            hinted_phase: false,
            rounds: Vec::new(),
            attempts: Vec::new(),
            truncated: false,
            global_budget: Budget::new(config.global_seconds, config.global_money),
            query_budgets,
            embeddings,
            seen,
        })
    }

    fn query(&self, id: &QueryId) -> &Query {
        self.queries.iter().find(|q| &q.id == id).expect("pending ids come from the workload")
    }

    fn budgets_for(&self, id: &QueryId) -> Vec<Budget> {
        vec![self.query_budgets[id].clone(), self.global_budget.clone()]
    }

    fn out_of_budget(&self, id: &QueryId) -> bool {
        self.global_budget.exhausted() || self.query_budgets[id].exhausted()
    }

    fn res_key(&self) -> BTreeSet<(QueryId, String)> {
        self.results
            .iter()
            .map(|(id, o)| (id.clone(), o.rewrite.canonical_sql()))
            .collect()
    }
}

/// Output of the parallel part of a round, before evaluation.
struct Proposal {
    attempt: QueryAttempt,
    corrected: Option<(CandidateRewrite, Explanation)>,
    syntax_ok: bool,
}

fn llm_diagnosis(e: &LlmError) -> Diagnosis {
    match e {
        LlmError::BudgetExhausted => Diagnosis::Budget,
        LlmError::NoSqlFound => Diagnosis::NoSuggestion,
        _ => Diagnosis::Error,
    }
}

impl<'a> Workbench<'a> {
    pub fn new(llm: &'a LlmGateway, embedder: &'a dyn EmbeddingProvider, evaluator: &'a Evaluator, config: RunConfig) -> Self {
        Workbench {
            llm,
            embedder,
            evaluator,
            config,
        }
    }

    /// Asks for a rewrite (hinted when `hints` is non-empty), strips rules that
    /// name the query's own identifiers, and elicits an applicability
    /// condition for every rule the repository does not know yet.
    pub fn suggest_and_explain(
        &self,
        query: &Query,
        hints: &[String],
        repo: &RuleRepository,
        budgets: &[Budget],
    ) -> Result<Suggestion, LlmError> {
        let refs: Vec<&Budget> = budgets.iter().collect();
        let (template, conv) = llm::suggestion_prompt(&query.sql, hints)?;
        let reply = self.llm.complete(template, &conv, &refs, Some(&query.id))?;
        let parsed = llm::parse_rewrite_response(&reply)?;
        let mut explanation = Explanation::new(parsed.rules);
        let dropped_rules = explanation.strip_query_specific(&query.sql);
        for i in 0..explanation.rules.len() {
            if repo.find_by_description(&explanation.rules[i]).is_some() {
                continue;
            }
            let mut b = Bindings::new();
            b.insert("rule", explanation.rules[i].as_str().into());
            let conv = llm::render(TemplateId::ConditionElicit, &b)?;
            match self.llm.complete(TemplateId::ConditionElicit, &conv, &refs, Some(&query.id)) {
                Ok(text) => {
                    let cond = text.split_whitespace().collect::<Vec<_>>().join(" ");
                    explanation.conditions[i] = (!cond.is_empty()).then_some(cond);
                }
                Err(LlmError::BudgetExhausted) => break,
                Err(e) => return Err(e),
            }
        }
        Ok(Suggestion {
            template,
            candidate: CandidateRewrite::suggested(query.id.clone(), parsed.sql),
            explanation,
            dropped_rules,
        })
    }

    fn hints_for(&self, state: &RunState, repo: &RuleRepository, id: &QueryId) -> HintSelection {
        if !state.hinted_phase || !repo.has_grouped_rules() {
            return HintSelection::default();
        }
        repo.select_hints(&state.embeddings[id], self.config.k_neighbors, self.config.k_groups)
    }

    fn propose(&self, state: &RunState, repo: &RuleRepository, id: &QueryId) -> Proposal {
        let query = state.query(id);
        let mut attempt = QueryAttempt::new(state.round_index, id.clone());
        let none = |attempt| Proposal {
            attempt,
            corrected: None,
            syntax_ok: false,
        };
        if state.out_of_budget(id) {
            return none(attempt.fail(Diagnosis::Budget, "budget exhausted before suggestion"));
        }
        let budgets = state.budgets_for(id);
        let hints = self.hints_for(state, repo, id).descriptions();
        attempt.hints = hints.clone();
        let s = match self.suggest_and_explain(query, &hints, repo, &budgets) {
            Ok(s) => s,
            Err(e) => return none(attempt.fail(llm_diagnosis(&e), e.to_string())),
        };
        attempt.template = Some(s.template);
        attempt.suggested_sql = Some(s.candidate.sql.clone());
        attempt.explanation = Some(s.explanation.clone());
        attempt.dropped_rules = s.dropped_rules;
        let mut corrector = Corrector::new(self.llm, self.evaluator.benchmark());
        corrector.budgets = budgets;
        corrector.query_id = Some(id.clone());
        corrector.config = self.config.corrector();
        match corrector.correct(query, s.candidate) {
            Ok((candidate, traces)) => {
                let syntax_ok = traces[1].converged;
                let budget_hit = traces.iter().any(|t| t.note.as_deref() == Some("budget"));
                attempt.final_sql = Some(candidate.sql.clone());
                attempt.corrections = traces.to_vec();
                if budget_hit && !syntax_ok {
                    return none(attempt.fail(Diagnosis::Budget, "budget exhausted during correction"));
                }
                Proposal {
                    attempt,
                    corrected: Some((candidate, s.explanation)),
                    syntax_ok,
                }
            }
            Err(Error::Llm(e)) => none(attempt.fail(llm_diagnosis(&e), e.to_string())),
            Err(e) => none(attempt.fail(Diagnosis::Error, e.to_string())),
        }
    }

    fn propose_all(&self, state: &RunState, repo: &RuleRepository) -> Vec<Proposal> {
        let ids = state.pending.clone();
        if self.config.workers <= 1 || ids.len() <= 1 {
            return ids.iter().map(|id| self.propose(state, repo, id)).collect();
        }
        let next = AtomicUsize::new(0);
        let mut slots: Vec<Option<Proposal>> = (0..ids.len()).map(|_| None).collect();
        let done: Vec<(usize, Proposal)> = std::thread::scope(|s| {
            let workers: Vec<_> = (0..self.config.workers.min(ids.len()))
                .map(|_| {
                    s.spawn(|| {
                        let mut out = Vec::new();
                        loop {
                            let i = next.fetch_add(1, Ordering::SeqCst);
                            if i >= ids.len() {
                                break;
                            }
                            out.push((i, self.propose(state, repo, &ids[i])));
                        }
                        out
                    })
                })
                .collect();
            workers.into_iter().flat_map(|w| w.join().expect("worker panicked")).collect()
        });
        for (i, p) in done {
            slots[i] = Some(p);
        }
        slots.into_iter().map(|p| p.expect("every slot filled")).collect()
    }

    /// Evaluates a corrected candidate and applies repository updates.
    fn settle(&self, state: &mut RunState, repo: &mut RuleRepository, p: Proposal) -> QueryAttempt {
        let mut attempt = p.attempt;
        let Some((candidate, explanation)) = p.corrected else {
            return attempt;
        };
        let id = attempt.query_id.clone();
        let query = state.query(&id).clone();
        let canonical = candidate.canonical_sql();
        attempt.novel = state.seen.get_mut(&id).expect("known query").insert(canonical.clone());
        if !p.syntax_ok {
            return attempt.fail(Diagnosis::SyntaxStuck, "candidate still fails EXPLAIN after correction");
        }
        if canonical == query.canonical_sql {
            return attempt.fail(Diagnosis::NoImprovement, "rewrite is identical to the original");
        }
        if state.out_of_budget(&id) {
            return attempt.fail(Diagnosis::Budget, "budget exhausted before evaluation");
        }
        let budgets = state.budgets_for(&id);
        let refs: Vec<&Budget> = budgets.iter().collect();
        let eq = self.evaluator.check_equivalence(&query.sql, &candidate.sql, &refs);
        attempt.equivalence = Some(eq.clone());
        if !eq.equivalent {
            let why = eq.witness.map(|w| format!("seed {}: {}", w.seed, w.summary)).unwrap_or_default();
            return attempt.fail(Diagnosis::Inequivalent, why);
        }
        let perf = match self.evaluator.measure_speedup(&query.sql, &candidate.sql, &refs) {
            Ok(p) => p,
            Err(e) => return attempt.fail(Diagnosis::Error, e.to_string()),
        };
        attempt.performance = Some(perf.clone());
        if let Err(e) = self.record_rules(state, repo, &query, &explanation, perf.speedup) {
            log::warn!("repository update for {id} failed: {e}");
        }
        let outcome = RewriteOutcome::evaluated(query, candidate, explanation, true, perf.speedup, self.config.theta);
        if outcome.accepted {
            attempt.accepted = true;
            let better = state.results.get(&id).is_none_or(|o| outcome.speedup > o.speedup);
            if better {
                state.results.insert(id.clone(), outcome);
            }
            return attempt;
        }
        match perf.classification {
            Classification::Regression => attempt.fail(Diagnosis::Regression, format!("speedup {:.4}", perf.speedup)),
            _ if outcome.explanation.rules.is_empty() && perf.speedup > self.config.theta => {
                attempt.fail(Diagnosis::Unexplained, "no query-independent rules were given")
            }
            _ => attempt.fail(Diagnosis::NoImprovement, format!("speedup {:.4}", perf.speedup)),
        }
    }

    fn record_rules(
        &self,
        state: &RunState,
        repo: &mut RuleRepository,
        query: &Query,
        explanation: &Explanation,
        speedup: f64,
    ) -> Result<()> {
        let mut services = RepoServices::new(self.embedder, self.llm);
        services.budgets = vec![state.global_budget.clone()];
        services.group_candidates = self.config.group_candidates;
        let mut linked: Vec<RuleId> = Vec::new();
        for (i, rule) in explanation.rules.iter().enumerate() {
            let existing = repo.find_by_description(rule).map(|r| r.rule_id.clone());
            let id = match existing {
                Some(rid) => {
                    repo.update_benefit(&rid, speedup)?;
                    rid
                }
                None => repo.add_rule(&services, rule, explanation.condition(i), &query.id, speedup)?.rule_id,
            };
            linked.push(id);
        }
        if !linked.is_empty() {
            repo.record_query(&query.id, &state.embeddings[&query.id], &linked)?;
        }
        Ok(())
    }

    /// One round over the pending queries. Suggestion and correction may run
    /// in parallel; evaluation and repository updates run in query order.
    pub fn run_round(&self, state: &mut RunState, repo: &mut RuleRepository) -> RoundSummary {
        state.round_index += 1;
        if state.round_index > self.config.zero_shot_rounds {
            state.hinted_phase = true;
        }
        let hinted = state.hinted_phase && repo.has_grouped_rules();
        let parked = repo.parked().len();
        if parked > 0 {
            let mut services = RepoServices::new(self.embedder, self.llm);
            services.budgets = vec![state.global_budget.clone()];
            services.group_candidates = self.config.group_candidates;
            repo.regroup_parked(&services);
        }
        let before = state.res_key();
        let proposals = self.propose_all(state, repo);
        let mut summary = RoundSummary {
            round: state.round_index,
            hinted,
            attempted: state.pending.clone(),
            accepted: Vec::new(),
            res_changed: false,
            novel_candidates: 0,
        };
        for p in proposals {
            let attempt = self.settle(state, repo, p);
            if attempt.novel {
                summary.novel_candidates += 1;
            }
            if attempt.accepted {
                summary.accepted.push(attempt.query_id.clone());
            }
            if attempt.diagnosis == Some(Diagnosis::Budget) {
                state.truncated = true;
            }
            state.attempts.push(attempt);
        }
        if !self.config.requeue_accepted {
            state.pending.retain(|id| !state.results.contains_key(id));
        }
        summary.res_changed = state.res_key() != before;
        state.rounds.push(summary.clone());
        summary
    }

    /// Runs rounds until the workload is solved, nothing new turns up, the
    /// budget runs out or the round limit is hit.
    pub fn rewrite_workload(&self, queries: Vec<Query>, repo: &mut RuleRepository) -> Result<RunOutput> {
        self.config.validate()?;
        let repo_before = repo.stats();
        let mut state = RunState::new(queries, &self.config, self.embedder)?;
        let stop = loop {
            if state.pending.is_empty() {
                break StopReason::AllAccepted;
            }
            if state.global_budget.exhausted() || state.pending.iter().all(|id| state.out_of_budget(id)) {
                state.truncated = true;
                break StopReason::BudgetExhausted;
            }
            if state.round_index >= self.config.max_total_rounds {
                break StopReason::MaxRounds;
            }
            let summary = self.run_round(&mut state, repo);
            if state.global_budget.exhausted() || state.pending.iter().all(|id| state.out_of_budget(id)) {
                continue;
            }
            if summary.res_changed || summary.novel_candidates > 0 {
                continue;
            }
            if !state.hinted_phase && repo.has_grouped_rules() {
                state.hinted_phase = true;
                continue;
            }
            if state.pending.is_empty() {
                break StopReason::AllAccepted;
            }
            break StopReason::Converged;
        };
        let outcomes: Vec<RewriteOutcome> = state
            .queries
            .iter()
            .map(|q| {
                state
                    .results
                    .get(&q.id)
                    .cloned()
                    .unwrap_or_else(|| RewriteOutcome::fallback(q.clone()))
            })
            .collect();
        let repo_after = repo.stats();
        let report = RunReport::build(
            &self.config,
            self.evaluator.config.mode,
            &state,
            &outcomes,
            self.llm.totals(),
            repo_after.clone(),
            RepoDelta::between(&repo_before, &repo_after),
            stop,
        );
        Ok(RunOutput { outcomes, report })
    }
}

impl RunState {
    /// The last diagnosis recorded for every query that ended unaccepted.
    pub fn failures(&self) -> Vec<(QueryId, Diagnosis, Option<String>)> {
        self.queries
            .iter()
            .filter(|q| !self.results.contains_key(&q.id))
            .map(|q| {
                let last = self.attempts.iter().rev().find(|a| a.query_id == q.id);
                match last {
                    Some(a) => (
                        q.id.clone(),
                        a.diagnosis.unwrap_or(Diagnosis::NoImprovement),
                        a.detail.clone(),
                    ),
                    None => (q.id.clone(), Diagnosis::Budget, Some("never attempted".into())),
                }
            })
            .collect()
    }
}

pub struct RunOutput {
    /// One per workload query, in input order; unaccepted queries fall back
    /// to the original at speedup 1.0.
    pub outcomes: Vec<RewriteOutcome>,
    pub report: RunReport,
}
