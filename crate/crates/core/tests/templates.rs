use llm_rewrite::llm::{
    parse_equivalence_verdict, parse_group_selection, parse_rewrite_response, render, suggestion_prompt, Bindings,
    EquivalenceVerdict, LlmError, Role, TemplateId,
};

const Q: &str = "select name from emp where id in (select emp_id from bonus)";
const R: &str = "select e.name from emp e join bonus b on b.emp_id = e.id";

fn only_text(id: TemplateId, b: &Bindings) -> String {
    let c = render(id, b).unwrap();
    assert_eq!(c.len(), 1);
    assert_eq!(c.turns()[0].role, Role::User);
    c.turns()[0].text.clone()
}

#[test]
fn golden_semantic_check() {
    let mut b = Bindings::new();
    b.insert("original", Q.into());
    b.insert("candidate", R.into());
    assert_eq!(
        only_text(TemplateId::SemanticCheck, &b),
        format!(
            "q1:{Q}\nq2:{R}\n\
             q1 is the original query, q2 is the rewritten query of q1.\n\
             For q1, break it down step by step and then describe what it does in one sentence. Do the same for q2.\n\
             Give an example, using tables, to show that these two queries are not equivalent if there's any such case. Otherwise, just say they are equivalent."
        )
    );
}

#[test]
fn golden_semantic_fix_takes_no_slots() {
    assert_eq!(
        only_text(TemplateId::SemanticFix, &Bindings::new()),
        "Based on your analysis, which part of q2 should be modified so that it becomes equivalent to q1? Show the modified version of q2."
    );
}

#[test]
fn golden_condition_elicit() {
    let mut b = Bindings::new();
    b.insert("rule", "Replace IN subqueries with joins".into());
    assert_eq!(
        only_text(TemplateId::ConditionElicit, &b),
        "Rule: Replace IN subqueries with joins\nSpecify the conditions for applying the rule. Be concise."
    );
}

#[test]
fn golden_syntax_fix() {
    let mut b = Bindings::new();
    b.insert("original", Q.into());
    b.insert("candidate", "select em.name from emp e".into());
    b.insert("error", "missing FROM-clause entry for table \"em\"".into());
    let t = only_text(TemplateId::SyntaxFix, &b);
    assert_eq!(
        t,
        format!(
            "Original query:\n{Q}\nRewritten query:\nselect em.name from emp e\n\
             The rewritten query fails on the database with this error:\nmissing FROM-clause entry for table \"em\"\n\
             Fix the rewritten query so that it executes without errors and stays equivalent to the original query. Return the corrected SQL only."
        )
    );
}

#[test]
fn golden_suggestion_prompts() {
    let (id, zero) = suggestion_prompt(Q, &[]).unwrap();
    assert_eq!(id, TemplateId::ZeroShotRewrite);
    assert_eq!(
        zero.turns()[0].text,
        format!(
            "{Q}\nRewrite this query to improve performance. Describe the rewrite rules you are using (you must not include any specific query details in the rules, e.g., table names, column names, etc). Be concise."
        )
    );
    let hints = vec!["Replace IN subqueries with joins".to_string(), "Push filters below joins".to_string()];
    let (id, hinted) = suggestion_prompt(Q, &hints).unwrap();
    assert_eq!(id, TemplateId::HintedRewrite);
    let t = &hinted.turns()[0].text;
    assert!(t.starts_with(&zero.turns()[0].text));
    assert!(t.ends_with(
        "\nHere are some hints that you might consider when rewriting the query:\n- Replace IN subqueries with joins\n- Push filters below joins"
    ));
}

#[test]
fn missing_slots_are_named() {
    for id in TemplateId::ALL {
        if let Some(slot) = id.slots().first() {
            let err = render(id, &Bindings::new()).unwrap_err();
            assert!(matches!(err, LlmError::MissingSlot(ref s) if s == slot), "{id}: {err:?}");
        }
    }
}

#[test]
fn rewrite_responses_in_common_shapes() {
    let fenced = "Here is a faster version:\n```sql\nselect e.name\nfrom emp e join bonus b on b.emp_id = e.id;\n```\nRules:\n1. **Replace IN subqueries with joins**\n2. Use   table aliases";
    let p = parse_rewrite_response(fenced).unwrap();
    assert_eq!(p.sql, "select e.name\nfrom emp e join bonus b on b.emp_id = e.id");
    assert_eq!(p.rules, vec!["Replace IN subqueries with joins", "Use table aliases"]);

    let bare = "- Replace IN subqueries with joins\n\nWITH b AS (select emp_id from bonus)\nselect name from emp join b on b.emp_id = emp.id";
    let p = parse_rewrite_response(bare).unwrap();
    assert!(p.sql.starts_with("WITH b AS"));
    assert_eq!(p.rules, vec!["Replace IN subqueries with joins"]);

    assert!(matches!(parse_rewrite_response("I cannot help with that."), Err(LlmError::NoSqlFound)));
}

#[test]
fn verdicts_are_conservative() {
    assert!(parse_equivalence_verdict("They are equivalent.").is_equivalent());
    assert!(parse_equivalence_verdict("**Answer:** The two queries are equivalent.\nq1 ...").is_equivalent());
    for text in [
        "They are not equivalent: q2 drops duplicates.",
        "The queries are non-equivalent.",
        "They might be equivalent.",
        "Are they equivalent?",
        "q1 selects names of employees with a bonus.",
        "",
    ] {
        assert!(
            matches!(parse_equivalence_verdict(text), EquivalenceVerdict::NotEquivalent(ref a) if a == text),
            "{text:?}"
        );
    }
}

#[test]
fn group_selection_by_number_or_text() {
    let candidates = vec!["Replace subqueries with join".to_string(), "Use a CTE".to_string()];
    assert_eq!(parse_group_selection("2. Replace subqueries with join, because ...", &candidates), Some(0));
    assert_eq!(parse_group_selection("Option 3", &candidates), Some(1));
    assert_eq!(parse_group_selection("1. Unseen rule", &candidates), None);
    assert_eq!(parse_group_selection("Unseen rule", &candidates), None);
    assert_eq!(parse_group_selection("Use a CTE", &candidates), Some(1));
}
