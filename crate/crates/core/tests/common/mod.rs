#![allow(dead_code)]

use std::sync::Arc;

use llm_rewrite::db::{DbTarget, TargetRole};
use llm_rewrite::llm::{Conversation, LlmGateway, Rates, ResponderBackend, TemplateId};

pub const PG_URL_ENV: &str = "REWRITE_PG_URL";

/// Admin connection for the local server, or `None` when it is unreachable.
///
/// `REWRITE_PG_URL` takes `host:port` (user `postgres`, database `postgres`).
pub fn pg_admin() -> Option<DbTarget> {
    let (host, port) = match std::env::var(PG_URL_ENV) {
        Ok(v) => {
            let (h, p) = v.rsplit_once(':')?;
            (h.to_string(), p.parse().ok()?)
        }
        Err(_) => ("127.0.0.1".to_string(), 5432),
    };
    let target = DbTarget::new(&host, port, "postgres", "postgres", TargetRole::Benchmark);
    let mut cfg = target.pg_config().ok()?;
    cfg.connect_timeout(std::time::Duration::from_secs(2));
    cfg.connect(postgres::NoTls).ok()?;
    Some(target)
}

/// Prints a skip line for tests that need the local server.
pub fn skip(test: &str) {
    eprintln!("SKIP {test}: no PostgreSQL reachable (set {PG_URL_ENV}=host:port)");
}

pub fn responder(
    f: impl Fn(TemplateId, &Conversation) -> Option<String> + Send + Sync + 'static,
) -> LlmGateway {
    LlmGateway::new(Arc::new(ResponderBackend::new(f)), Rates::default()).with_retries(0, Default::default())
}

pub fn fenced(sql: &str, rules: &[&str]) -> String {
    let mut s = format!("```sql\n{sql}\n```\n");
    for r in rules {
        s.push_str("- ");
        s.push_str(r);
        s.push('\n');
    }
    s
}

pub const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

pub const UNION_RULE: &str =
    "Replace a UNION ALL of filtered scans over one relation with a single scan and a combined filter";
pub const AGG_RULE: &str = "Aggregate over the base relation directly instead of over a derived union";
pub const UNION_CONDITION: &str = "The union branches read the same relation and differ only in their filters.";

pub const Q74_REWRITE: &str =
    "select customer_id, year, sum(net_paid) as paid from sales where channel in ('s', 'w') group by customer_id, year";
pub const Q4_REWRITE: &str = "select c.name, sum(s.net_paid) as paid from customer c join sales s on c.id = s.customer_id where s.channel in ('s', 'c', 'w') group by c.name";
pub const Q11_REWRITE: &str =
    "select year, count(*) as big_orders from sales where channel in ('s', 'w') and net_paid > 100 group by year";

/// Copies the transfer workload into `dir` and returns the manifest path.
pub fn copy_transfer_fixture(dir: &std::path::Path) -> std::path::PathBuf {
    let src = std::path::Path::new(FIXTURES).join("transfer");
    for entry in std::fs::read_dir(&src).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), dir.join(entry.file_name())).unwrap();
    }
    dir.join("manifest.toml")
}

/// Scripted model for the transfer workload: only the q74 shape gets a
/// zero-shot rewrite; q4 and q11 are rewritten once the union hint shows up.
pub fn transfer_reply(template: TemplateId, conv: &Conversation) -> Option<String> {
    let prompt = conv.last_user_text()?;
    let which = if prompt.contains("channel = 'c'") {
        "q4"
    } else if prompt.contains("big_orders") {
        "q11"
    } else {
        "q74"
    };
    match template {
        TemplateId::ZeroShotRewrite => Some(match which {
            "q74" => fenced(Q74_REWRITE, &[UNION_RULE, AGG_RULE]),
            // Echo the query back: nothing better found without a hint.
            _ => {
                let sql = prompt.rsplit_once('\n').map(|(q, _)| q).unwrap_or(prompt);
                fenced(sql, &[])
            }
        }),
        TemplateId::HintedRewrite if prompt.contains(UNION_RULE) => match which {
            "q4" => Some(fenced(Q4_REWRITE, &[UNION_RULE, AGG_RULE])),
            "q11" => Some(fenced(Q11_REWRITE, &[UNION_RULE, AGG_RULE])),
            _ => None,
        },
        TemplateId::SemanticCheck => Some("They are equivalent.".into()),
        TemplateId::ConditionElicit => Some(UNION_CONDITION.into()),
        TemplateId::GroupPredict => Some("1. Unseen rule".into()),
        _ => None,
    }
}
