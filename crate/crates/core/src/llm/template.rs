use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Conversation, LlmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    ZeroShotRewrite,
    HintedRewrite,
    GroupPredict,
    SemanticCheck,
    SemanticFix,
    ConditionElicit,
    SyntaxFix,
}

impl TemplateId {
    pub const ALL: [TemplateId; 7] = [
        TemplateId::ZeroShotRewrite,
        TemplateId::HintedRewrite,
        TemplateId::GroupPredict,
        TemplateId::SemanticCheck,
        TemplateId::SemanticFix,
        TemplateId::ConditionElicit,
        TemplateId::SyntaxFix,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::ZeroShotRewrite => "zero_shot_rewrite",
            TemplateId::HintedRewrite => "hinted_rewrite",
            TemplateId::GroupPredict => "group_predict",
            TemplateId::SemanticCheck => "semantic_check",
            TemplateId::SemanticFix => "semantic_fix",
            TemplateId::ConditionElicit => "condition_elicit",
            TemplateId::SyntaxFix => "syntax_fix",
        }
    }

    pub fn slots(self) -> &'static [&'static str] {
        match self {
            TemplateId::ZeroShotRewrite => &["query"],
            TemplateId::HintedRewrite => &["query", "hints"],
            TemplateId::GroupPredict => &["rule", "candidates"],
            TemplateId::SemanticCheck => &["original", "candidate"],
            TemplateId::SemanticFix => &[],
            TemplateId::ConditionElicit => &["rule"],
            TemplateId::SyntaxFix => &["original", "candidate", "error"],
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlotValue {
    Text(String),
    List(Vec<String>),
}

impl From<&str> for SlotValue {
    fn from(s: &str) -> Self {
        SlotValue::Text(s.to_string())
    }
}

impl From<String> for SlotValue {
    fn from(s: String) -> Self {
        SlotValue::Text(s)
    }
}

impl From<Vec<String>> for SlotValue {
    fn from(v: Vec<String>) -> Self {
        SlotValue::List(v)
    }
}

pub type Bindings = BTreeMap<&'static str, SlotValue>;

const REWRITE_INSTRUCTION: &str = "Rewrite this query to improve performance.";
const RULE_REQUEST: &str = "Describe the rewrite rules you are using (you must not include any specific query details in the rules, e.g., table names, column names, etc). Be concise.";
const HINTS_INTRO: &str = "Here are some hints that you might consider when rewriting the query:";
const GROUP_INSTRUCTION: &str = "Please select the rewrite rule that is strictly the same as the above rule and give your explanation (just give one answer). If not, please select the first item \u{201c}Unseen rule\u{201d}.";
pub(crate) const UNSEEN_RULE: &str = "Unseen rule";
const SEMANTIC_CHECK_BODY: &str = "q1 is the original query, q2 is the rewritten query of q1.\nFor q1, break it down step by step and then describe what it does in one sentence. Do the same for q2.\nGive an example, using tables, to show that these two queries are not equivalent if there's any such case. Otherwise, just say they are equivalent.";
const SEMANTIC_FIX: &str = "Based on your analysis, which part of q2 should be modified so that it becomes equivalent to q1? Show the modified version of q2.";
const CONDITION_REQUEST: &str = "Specify the conditions for applying the rule. Be concise.";
const SYNTAX_FIX_INSTRUCTION: &str = "Fix the rewritten query so that it executes without errors and stays equivalent to the original query. Return the corrected SQL only.";

fn text<'a>(b: &'a Bindings, slot: &str) -> Result<&'a str, LlmError> {
    match b.get(slot) {
        Some(SlotValue::Text(t)) => Ok(t),
        _ => Err(LlmError::MissingSlot(slot.to_string())),
    }
}

fn list<'a>(b: &'a Bindings, slot: &str) -> Result<&'a [String], LlmError> {
    match b.get(slot) {
        Some(SlotValue::List(v)) if !v.is_empty() => Ok(v),
        _ => Err(LlmError::MissingSlot(slot.to_string())),
    }
}

/// Renders `id` with `bindings` into a single-user-turn conversation.
pub fn render(id: TemplateId, bindings: &Bindings) -> Result<Conversation, LlmError> {
    let body = match id {
        TemplateId::ZeroShotRewrite => {
            format!("{}\n{}", text(bindings, "query")?, REWRITE_INSTRUCTION)
        }
        TemplateId::HintedRewrite => {
            let query = text(bindings, "query")?;
            let hints = list(bindings, "hints")?;
            let mut s = format!("{query}\n{REWRITE_INSTRUCTION} {RULE_REQUEST}\n{HINTS_INTRO}");
            for h in hints {
                s.push_str("\n- ");
                s.push_str(h);
            }
            s
        }
        TemplateId::GroupPredict => {
            let rule = text(bindings, "rule")?;
            let candidates = list(bindings, "candidates")?;
            let mut s = format!("{rule}\n{GROUP_INSTRUCTION}\nOptions:\n1. {UNSEEN_RULE}");
            for (i, c) in candidates.iter().enumerate() {
                s.push_str(&format!("\n{}. {}", i + 2, c));
            }
            s
        }
        TemplateId::SemanticCheck => format!(
            "q1:{}\nq2:{}\n{}",
            text(bindings, "original")?,
            text(bindings, "candidate")?,
            SEMANTIC_CHECK_BODY
        ),
        TemplateId::SemanticFix => SEMANTIC_FIX.to_string(),
        TemplateId::ConditionElicit => {
            format!("Rule: {}\n{}", text(bindings, "rule")?, CONDITION_REQUEST)
        }
        TemplateId::SyntaxFix => format!(
            "Original query:\n{}\nRewritten query:\n{}\nThe rewritten query fails on the database with this error:\n{}\n{}",
            text(bindings, "original")?,
            text(bindings, "candidate")?,
            text(bindings, "error")?,
            SYNTAX_FIX_INSTRUCTION
        ),
    };
    Ok(Conversation::with_user(body))
}

/// The rewrite-suggestion prompt: hinted when `hints` is non-empty, otherwise
/// the zero-shot prompt with the rule-description request appended.
pub fn suggestion_prompt(query: &str, hints: &[String]) -> Result<(TemplateId, Conversation), LlmError> {
    let mut b = Bindings::new();
    b.insert("query", query.into());
    if hints.is_empty() {
        let zero = render(TemplateId::ZeroShotRewrite, &b)?;
        let body = format!("{} {}", zero.turns()[0].text, RULE_REQUEST);
        Ok((TemplateId::ZeroShotRewrite, Conversation::with_user(body)))
    } else {
        b.insert("hints", hints.to_vec().into());
        Ok((TemplateId::HintedRewrite, render(TemplateId::HintedRewrite, &b)?))
    }
}
