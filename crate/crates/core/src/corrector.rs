//! Two-stage correction of candidate rewrites: a semantic loop driven by the
//! model's own equivalence analysis, then a syntax loop driven by EXPLAIN
//! errors.

use serde::{Deserialize, Serialize};

use crate::db::SqlEngine;
use crate::error::Result;
use crate::llm::{self, Bindings, Conversation, EquivalenceVerdict, LlmError, LlmGateway, TemplateId};
use crate::model::{Budget, CandidateRewrite, Query, QueryId, Stage};

pub const DEFAULT_MAX_ITER: u32 = 5;

/// Past this many characters the semantic conversation restarts from the
/// latest candidate.
pub const DEFAULT_CONTEXT_CHARS: usize = 48_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionStage {
    Semantic,
    Syntax,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepOutcome {
    Equivalent,
    NotEquivalent { analysis: String },
    ExplainOk,
    ExplainError { message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionStep {
    pub candidate_sql: String,
    pub outcome: StepOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revised_sql: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionTrace {
    pub stage: CorrectionStage,
    pub iterations: Vec<CorrectionStep>,
    pub converged: bool,
    pub iterations_used: u32,
    /// Why the loop stopped early, when it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CorrectionTrace {
    fn new(stage: CorrectionStage) -> Self {
        CorrectionTrace {
            stage,
            iterations: Vec::new(),
            converged: false,
            iterations_used: 0,
            note: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectorConfig {
    pub max_iter: u32,
    pub context_chars: usize,
}

impl Default for CorrectorConfig {
    fn default() -> Self {
        CorrectorConfig {
            max_iter: DEFAULT_MAX_ITER,
            context_chars: DEFAULT_CONTEXT_CHARS,
        }
    }
}

pub struct Corrector<'a> {
    pub llm: &'a LlmGateway,
    pub engine: &'a dyn SqlEngine,
    pub budgets: Vec<Budget>,
    pub query_id: Option<QueryId>,
    pub config: CorrectorConfig,
}

/// How an LLM failure inside a loop is handled: budget exhaustion ends the
/// loop quietly, anything else propagates.
fn stop_or_raise(trace: &mut CorrectionTrace, e: LlmError) -> Result<()> {
    match e {
        LlmError::BudgetExhausted => {
            trace.note = Some("budget".into());
            Ok(())
        }
        other => Err(other.into()),
    }
}

impl<'a> Corrector<'a> {
    pub fn new(llm: &'a LlmGateway, engine: &'a dyn SqlEngine) -> Self {
        Corrector {
            llm,
            engine,
            budgets: Vec::new(),
            query_id: None,
            config: CorrectorConfig::default(),
        }
    }

    fn complete(&self, template: TemplateId, conv: &Conversation) -> Result<String, LlmError> {
        let budgets: Vec<&Budget> = self.budgets.iter().collect();
        self.llm.complete(template, conv, &budgets, self.query_id.as_ref())
    }

    fn check_prompt(original: &Query, candidate: &str) -> Result<Conversation, LlmError> {
        let mut b = Bindings::new();
        b.insert("original", original.sql.as_str().into());
        b.insert("candidate", candidate.into());
        llm::render(TemplateId::SemanticCheck, &b)
    }

    /// Semantic loop: check, and on a negative verdict ask for a fix in the
    /// same conversation. Each iteration costs one check call plus one fix
    /// call when the verdict is negative.
    pub fn correct_semantics(
        &self,
        original: &Query,
        candidate: CandidateRewrite,
    ) -> Result<(CandidateRewrite, CorrectionTrace)> {
        let mut trace = CorrectionTrace::new(CorrectionStage::Semantic);
        let mut current = candidate;
        let mut conv = Conversation::new();
        while trace.iterations_used < self.config.max_iter {
            let check = Self::check_prompt(original, &current.sql)?;
            if !conv.is_empty() && conv.total_chars() + check.total_chars() > self.config.context_chars {
                conv = Conversation::new();
            }
            conv.extend(check);
            let reply = match self.complete(TemplateId::SemanticCheck, &conv) {
                Ok(r) => r,
                Err(e) => {
                    stop_or_raise(&mut trace, e)?;
                    break;
                }
            };
            conv.push_assistant(reply.clone());
            trace.iterations_used += 1;
            let verdict = llm::parse_equivalence_verdict(&reply);
            let analysis = match verdict {
                EquivalenceVerdict::Equivalent => {
                    trace.iterations.push(CorrectionStep {
                        candidate_sql: current.sql.clone(),
                        outcome: StepOutcome::Equivalent,
                        revised_sql: None,
                    });
                    trace.converged = true;
                    break;
                }
                EquivalenceVerdict::NotEquivalent(a) => a,
            };
            let mut step = CorrectionStep {
                candidate_sql: current.sql.clone(),
                outcome: StepOutcome::NotEquivalent { analysis },
                revised_sql: None,
            };
            let fix = llm::render(TemplateId::SemanticFix, &Bindings::new())?;
            conv.extend(fix);
            let fixed = match self.complete(TemplateId::SemanticFix, &conv) {
                Ok(r) => r,
                Err(e) => {
                    trace.iterations.push(step);
                    stop_or_raise(&mut trace, e)?;
                    break;
                }
            };
            conv.push_assistant(fixed.clone());
            match llm::extract_sql(&fixed) {
                Some(sql) => {
                    step.revised_sql = Some(sql.clone());
                    trace.iterations.push(step);
                    current = current.revised(sql);
                }
                None => {
                    trace.iterations.push(step);
                    trace.note = Some("fix reply contained no SQL".into());
                    break;
                }
            }
        }
        if trace.converged {
            current = current.advance(Stage::SemanticallyCorrected);
        }
        Ok((current, trace))
    }

    /// Syntax loop: EXPLAIN the candidate and, on failure, ask for a fix
    /// carrying the engine error verbatim.
    pub fn correct_syntax(
        &self,
        original: &Query,
        candidate: CandidateRewrite,
    ) -> Result<(CandidateRewrite, CorrectionTrace)> {
        let mut trace = CorrectionTrace::new(CorrectionStage::Syntax);
        let mut current = candidate;
        while trace.iterations_used < self.config.max_iter {
            trace.iterations_used += 1;
            let probe = self.engine.explain(&current.sql)?;
            if probe.ok {
                trace.iterations.push(CorrectionStep {
                    candidate_sql: current.sql.clone(),
                    outcome: StepOutcome::ExplainOk,
                    revised_sql: None,
                });
                trace.converged = true;
                break;
            }
            let message = probe.error_message.unwrap_or_default();
            let mut step = CorrectionStep {
                candidate_sql: current.sql.clone(),
                outcome: StepOutcome::ExplainError {
                    message: message.clone(),
                },
                revised_sql: None,
            };
            let mut b = Bindings::new();
            b.insert("original", original.sql.as_str().into());
            b.insert("candidate", current.sql.as_str().into());
            b.insert("error", message.into());
            let conv = llm::render(TemplateId::SyntaxFix, &b)?;
            let fixed = match self.complete(TemplateId::SyntaxFix, &conv) {
                Ok(r) => r,
                Err(e) => {
                    trace.iterations.push(step);
                    stop_or_raise(&mut trace, e)?;
                    break;
                }
            };
            match llm::extract_sql(&fixed) {
                Some(sql) => {
                    step.revised_sql = Some(sql.clone());
                    trace.iterations.push(step);
                    current = current.revised(sql);
                }
                None => {
                    trace.iterations.push(step);
                    trace.note = Some("fix reply contained no SQL".into());
                    break;
                }
            }
        }
        if trace.converged {
            current = current.advance(Stage::SyntaxCorrected);
        }
        Ok((current, trace))
    }

    /// Semantic stage, then syntax stage. A candidate the semantic stage
    /// could not settle is still forwarded; the trace records it.
    pub fn correct(
        &self,
        original: &Query,
        candidate: CandidateRewrite,
    ) -> Result<(CandidateRewrite, [CorrectionTrace; 2])> {
        let (sem_out, mut sem) = self.correct_semantics(original, candidate)?;
        if !sem.converged && sem.note.is_none() {
            sem.note = Some("unconverged; forwarded to syntax stage".into());
        }
        if sem.note.as_deref() == Some("budget") {
            let syn = CorrectionTrace {
                note: Some("budget".into()),
                ..CorrectionTrace::new(CorrectionStage::Syntax)
            };
            return Ok((sem_out, [sem, syn]));
        }
        let (out, syn) = self.correct_syntax(original, sem_out)?;
        Ok((out, [sem, syn]))
    }
}
