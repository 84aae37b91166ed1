//! Canonical SQL, rendered prompts and response parsing, all offline.

use llm_rewrite::llm::{parse_equivalence_verdict, parse_rewrite_response, suggestion_prompt};
use llm_rewrite::model::canonicalize_sql;

fn main() {
    let sql = "SELECT name -- who\n  FROM   emp\n WHERE id IN (SELECT emp_id FROM bonus);";
    println!("canonical: {}", canonicalize_sql(sql));

    let (id, zero) = suggestion_prompt(sql, &[]).unwrap();
    println!("\n[{id}]\n{}", zero.turns()[0].text);
    let hints = vec!["Replace IN subqueries with joins".to_string()];
    let (id, hinted) = suggestion_prompt(sql, &hints).unwrap();
    println!("\n[{id}]\n{}", hinted.turns()[0].text);

    let reply = "```sql\nselect e.name from emp e join bonus b on b.emp_id = e.id\n```\n- Replace IN subqueries with joins";
    let parsed = parse_rewrite_response(reply).unwrap();
    println!("\nparsed sql: {}\nparsed rules: {:?}", parsed.sql, parsed.rules);

    for verdict in ["They are equivalent.", "They are not equivalent when bonus has duplicates."] {
        println!("{verdict:?} -> equivalent = {}", parse_equivalence_verdict(verdict).is_equivalent());
    }
}
