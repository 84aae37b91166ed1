//! Acceptance harness: one PASS/FAIL/SKIP line per criterion.
//!
//! Runs with `harness = false`, so `cargo test --test acceptance` prints the
//! table directly. Criteria that need PostgreSQL report SKIP when no server
//! is reachable; the live-model criterion never gates the exit code.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use llm_rewrite::cli::{prepare_databases, FileConfig, WorkloadManifest};
use llm_rewrite::corrector::{CorrectionStage, Corrector};
use llm_rewrite::db::{
    build_instance, build_instances, CacheReset, DbError, DbTarget, FixtureAnswer, FixtureEngine, NoopReset, PgEngine,
    SeedSpec, SqlEngine,
};
use llm_rewrite::embed::{EmbedError, EmbeddingProvider, EmbeddingVector, HashingEmbedder, IndexEntry, VectorIndex};
use llm_rewrite::evaluator::{Classification, Evaluator, EvaluatorConfig, MeasureMode};
use llm_rewrite::llm::{LlmGateway, Rates, RecordingBackend, ResponderBackend, TemplateId};
use llm_rewrite::model::{CandidateRewrite, Query, QueryId};
use llm_rewrite::orchestrator::{Diagnosis, RunConfig, Workbench};
use llm_rewrite::report::{RunReport, StopReason, BUCKETS};
use llm_rewrite::repo::{geometric_mean, RepoServices, RuleRepository};

use common::*;

enum Failure {
    Fail(String),
    Skip(String),
}

type Check = Result<String, Failure>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(Failure::Fail(format!($($msg)+)));
        }
    };
}

fn fail(e: impl std::fmt::Display) -> Failure {
    Failure::Fail(e.to_string())
}

fn need_pg() -> Result<DbTarget, Failure> {
    pg_admin().ok_or_else(|| Failure::Skip(format!("no PostgreSQL reachable (set {PG_URL_ENV}=host:port)")))
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

// ---------------------------------------------------------------------------
// 1. Scoring oracle
// ---------------------------------------------------------------------------

/// Embeddings looked up from a prepared table.
struct TableEmbedder {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

impl EmbeddingProvider for TableEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let v = self
            .table
            .get(text)
            .ok_or_else(|| EmbedError::Provider(format!("no embedding for {text:?}")))?;
        EmbeddingVector::new(v.clone())
    }
}

fn label_of(text: &str) -> Option<&str> {
    let start = text.find('[')?;
    let end = text[start..].find(']')? + start;
    Some(&text[start..=end])
}

/// Arbitration by label: a rule joins the listed option carrying its label.
fn label_arbiter() -> LlmGateway {
    responder(|template, conv| {
        if template != TemplateId::GroupPredict {
            return None;
        }
        let prompt = conv.last_user_text()?;
        let rule_label = label_of(prompt.lines().next()?)?;
        for line in prompt.lines().skip_while(|l| !l.starts_with("Options:")).skip(1) {
            let (n, desc) = line.split_once(". ")?;
            if label_of(desc) == Some(rule_label) {
                return Some(n.to_string());
            }
        }
        Some("1. Unseen rule".into())
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

struct OracleRanking {
    neighbors: Vec<(String, f64)>,
    scores: BTreeMap<String, f64>,
}

fn brute_force_scores(repo: &RuleRepository, target: &[f64], k: usize) -> OracleRanking {
    let group_of: HashMap<&str, &str> = repo
        .rules()
        .iter()
        .filter_map(|r| r.group_id.as_ref().map(|g| (r.rule_id.0.as_str(), g.0.as_str())))
        .collect();
    let mut benefit: HashMap<&str, (f64, usize)> = HashMap::new();
    for r in repo.rules() {
        if let Some(g) = &r.group_id {
            let e = benefit.entry(g.0.as_str()).or_insert((0.0, 0));
            for s in &r.observed_speedups {
                e.0 += s.ln();
                e.1 += 1;
            }
        }
    }
    let mut eligible: Vec<(f64, usize, &str)> = repo
        .query_records()
        .iter()
        .enumerate()
        .filter(|(_, q)| q.rules.iter().any(|r| group_of.contains_key(r.0.as_str())))
        .map(|(i, q)| (dist(q.embedding.values(), target), i, q.query_id.0.as_str()))
        .collect();
    eligible.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    eligible.truncate(k);
    let inv_total: f64 = eligible.iter().map(|e| 1.0 / e.0).sum();
    let mut scores = BTreeMap::new();
    let mut neighbors = Vec::new();
    for (d, i, id) in &eligible {
        let w = (1.0 / d) / inv_total;
        neighbors.push((id.to_string(), w));
        let used: BTreeSet<&str> = repo.query_records()[*i]
            .rules
            .iter()
            .filter_map(|r| group_of.get(r.0.as_str()).copied())
            .collect();
        for g in used {
            let (sum, n) = benefit[g];
            *scores.entry(g.to_string()).or_insert(0.0) += w * (sum / n as f64).exp();
        }
    }
    OracleRanking { neighbors, scores }
}

fn c1_scoring_oracle() -> Check {
    let started = Instant::now();
    let dim = 24;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5c0e);
    let mut ties = 0;
    for case in 0..200 {
        let groups = rng.random_range(1..=20usize);
        let mut table = HashMap::new();
        let mut rules: Vec<(String, usize)> = Vec::new();
        for g in 0..groups {
            for r in 0..rng.random_range(1..=3usize) {
                let desc = format!("[g{g}] rule {r}");
                let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.01..0.01)).collect();
                v[g] += 1.0;
                table.insert(desc.clone(), v);
                rules.push((desc, g));
            }
        }
        let embedder = TableEmbedder { dim, table };
        let llm = label_arbiter();
        let services = RepoServices::new(&embedder, &llm);
        let mut repo = RuleRepository::new(dim);
        let mut ids = Vec::new();
        // Every fourth case uses one speedup everywhere so group scores tie.
        let flat = case % 4 == 0;
        let speedup = |rng: &mut ChaCha8Rng| if flat { 2.0 } else { rng.random_range(0.5..20.0) };
        for (desc, _) in &rules {
            let s = speedup(&mut rng);
            let added = repo
                .add_rule(&services, desc, None, &QueryId::new("src"), s)
                .map_err(fail)?;
            for _ in 0..rng.random_range(0..3usize) {
                let s = speedup(&mut rng);
                repo.update_benefit(&added.rule_id, s).map_err(fail)?;
            }
            ids.push(added.rule_id);
        }
        ensure!(
            repo.groups().len() == groups,
            "case {case}: label arbitration built {} groups, expected {groups}",
            repo.groups().len()
        );
        for qi in 0..rng.random_range(1..=30usize) {
            let emb: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let linked: Vec<_> = (0..rng.random_range(1..=if flat { 6 } else { 3 }))
                .map(|_| ids[rng.random_range(0..ids.len())].clone())
                .collect();
            repo.record_query(&QueryId::new(format!("q{qi}")), &EmbeddingVector::new(emb).unwrap(), &linked)
                .map_err(fail)?;
        }
        let target: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k = rng.random_range(1..=10usize);
        let got = repo.select_hints(&EmbeddingVector::new(target.clone()).unwrap(), k, groups);
        let want = brute_force_scores(&repo, &target, k);

        let wsum: f64 = got.neighbors.iter().map(|n| n.weight).sum();
        ensure!((wsum - 1.0).abs() <= 1e-9, "case {case}: weights sum to {wsum}");
        let got_ids: Vec<&str> = got.neighbors.iter().map(|n| n.query_id.0.as_str()).collect();
        let want_ids: Vec<&str> = want.neighbors.iter().map(|n| n.0.as_str()).collect();
        ensure!(got_ids == want_ids, "case {case}: neighbors {got_ids:?} vs oracle {want_ids:?}");
        for (n, (_, w)) in got.neighbors.iter().zip(&want.neighbors) {
            ensure!(rel_err(n.weight, *w) <= 1e-12, "case {case}: weight {} vs {w}", n.weight);
        }
        ensure!(
            got.ranking.len() == want.scores.len(),
            "case {case}: {} ranked groups vs {}",
            got.ranking.len(),
            want.scores.len()
        );
        let mut sorted: Vec<f64> = want.scores.values().copied().collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        for (i, gs) in got.ranking.iter().enumerate() {
            let own = want.scores[&gs.group_id.0];
            ensure!(rel_err(gs.score, own) <= 1e-9, "case {case}: {} scored {} vs {own}", gs.group_id, gs.score);
            // Position i must hold the i-th best oracle score; equal scores
            // may appear in any order.
            ensure!(
                rel_err(gs.score, sorted[i]) <= 1e-9,
                "case {case}: rank {i} holds {} ({}), oracle expects score {}",
                gs.group_id,
                gs.score,
                sorted[i]
            );
        }
        if sorted.windows(2).any(|w| rel_err(w[0], w[1]) <= 1e-9) {
            ties += 1;
        }
        let hint_groups: Vec<_> = got.hints.iter().map(|h| &h.group_id).collect();
        let top: Vec<_> = got.ranking.iter().take(groups).map(|g| &g.group_id).collect();
        ensure!(hint_groups == top, "case {case}: hints do not follow the ranking");
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("200 repositories match the brute-force ranking ({ties} with ties), {elapsed:.2?}"))
}

// ---------------------------------------------------------------------------
// 2. Geometric-mean oracle
// ---------------------------------------------------------------------------

fn plain_log_mean_exp(xs: &[f64]) -> f64 {
    (xs.iter().fold(0.0, |acc, x| acc + x.ln()) / xs.len() as f64).exp()
}

fn benefit_through_repo(xs: &[f64]) -> Result<f64, Failure> {
    let emb = HashingEmbedder::new(16);
    let llm = responder(|_, _| None);
    let services = RepoServices::new(&emb, &llm);
    let mut repo = RuleRepository::new(16);
    let added = repo
        .add_rule(&services, "Push filters below joins", None, &QueryId::new("q"), xs[0])
        .map_err(fail)?;
    for x in &xs[1..] {
        repo.update_benefit(&added.rule_id, *x).map_err(fail)?;
    }
    Ok(repo.group(added.group_id.as_ref().unwrap()).unwrap().benefit)
}

fn c2_geometric_mean() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6e0);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let n = rng.random_range(1..=40usize);
        let xs: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(-3.0..3.0))).collect();
        let want = plain_log_mean_exp(&xs);
        let direct = geometric_mean(&xs).unwrap();
        let via_repo = benefit_through_repo(&xs)?;
        let e = rel_err(direct, want).max(rel_err(via_repo, want));
        worst = worst.max(e);
        ensure!(e <= 1e-12, "case {case}: {direct} / {via_repo} vs {want} (rel {e:e})");
    }
    let fixture = benefit_through_repo(&[4.0, 1.0, 0.25])?;
    ensure!(rel_err(fixture, 1.0) <= 1e-12, "{{4, 1, 0.25}} gave {fixture}");
    for x in [3.7, 0.1, 1e-3, 1234.5678] {
        let single = benefit_through_repo(&[x])?;
        ensure!(single == x, "singleton {x} gave {single}");
    }
    ensure!(geometric_mean(&[]).is_none(), "empty set has a mean");
    Ok(format!("1000 sets within {worst:.1e} relative; {{4, 1, 0.25}} -> {fixture}; singletons exact"))
}

// ---------------------------------------------------------------------------
// 3. Grouping fixture and kNN dedup
// ---------------------------------------------------------------------------

const JOIN_RULES: [&str; 6] = [
    "Use explicit join syntax instead of comma-separated tables in the FROM clause.",
    "Replace implicit joins with explicit joins.",
    "Use JOIN instead of WHERE for linking tables.",
    "Use JOIN instead of WHERE for combining tables.",
    "Use explicit join conditions.",
    "Move conditions from WHERE clause to ON clause in JOINs.",
];
const OTHER_RULES: [&str; 2] = [
    "Pre-aggregate rows in a subquery before joining",
    "Replace correlated subqueries with window functions",
];

fn join_arbiter() -> LlmGateway {
    responder(|template, conv| {
        if template != TemplateId::GroupPredict {
            return None;
        }
        let prompt = conv.last_user_text()?;
        let rule = prompt.lines().next()?;
        if JOIN_RULES.contains(&rule) {
            for line in prompt.lines().skip_while(|l| !l.starts_with("Options:")).skip(1) {
                let (n, desc) = line.split_once(". ")?;
                if JOIN_RULES.contains(&desc) {
                    return Some(format!("{n}. {desc}"));
                }
            }
        }
        Some("1. Unseen rule".into())
    })
}

fn knn_oracle(entries: &[IndexEntry], target: &EmbeddingVector, k: usize) -> Vec<String> {
    let mut scored: Vec<(f64, usize)> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| (dist(e.vector.values(), target.values()), i))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut seen = BTreeSet::new();
    scored
        .into_iter()
        .map(|(_, i)| &entries[i])
        .filter(|e| e.dedup_key.as_ref().is_none_or(|k| seen.insert(k.clone())))
        .take(k)
        .map(|e| e.id.clone())
        .collect()
}

fn c3_grouping() -> Check {
    let started = Instant::now();
    let emb = HashingEmbedder::default();
    let llm = join_arbiter();
    let services = RepoServices::new(&emb, &llm);
    let mut repo = RuleRepository::new(emb.dim());
    let order = [
        JOIN_RULES[0],
        JOIN_RULES[1],
        OTHER_RULES[0],
        JOIN_RULES[2],
        JOIN_RULES[3],
        OTHER_RULES[1],
        JOIN_RULES[4],
        JOIN_RULES[5],
    ];
    for (i, rule) in order.iter().enumerate() {
        repo.add_rule(&services, rule, None, &QueryId::new(format!("q{i}")), 2.0)
            .map_err(fail)?;
    }
    let partition = repo.partition();
    let mut sizes: Vec<usize> = partition.iter().map(Vec::len).collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    ensure!(sizes == vec![6, 1, 1], "group sizes {sizes:?}: {partition:?}");
    let mut joins: Vec<String> = JOIN_RULES.iter().map(|s| s.to_string()).collect();
    joins.sort();
    ensure!(partition.contains(&joins), "the six join rules are split: {partition:?}");
    ensure!(repo.parked().is_empty(), "parked rules: {:?}", repo.parked());
    ensure!(llm.calls() == 7, "{} arbitration calls, expected 7", llm.calls());

    let mut rng = ChaCha8Rng::seed_from_u64(0xd3d);
    for case in 0..500 {
        let dim = rng.random_range(1..=8usize);
        let index = VectorIndex::new(dim);
        let keys = rng.random_range(1..=10usize);
        let n = rng.random_range(0..=60usize);
        for i in 0..n {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dedup_key = (!rng.random_bool(0.2)).then(|| format!("k{}", rng.random_range(0..keys)));
            index
                .insert(IndexEntry {
                    id: format!("e{i}"),
                    vector: EmbeddingVector::new(v).unwrap(),
                    dedup_key,
                })
                .map_err(fail)?;
        }
        let target = EmbeddingVector::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let k = rng.random_range(0..=15usize);
        let got = index.knn(&target, k, true);
        let got_ids: Vec<String> = got.iter().map(|n| n.id.clone()).collect();
        let want = knn_oracle(&index.entries(), &target, k);
        ensure!(got_ids == want, "case {case}: {got_ids:?} vs oracle {want:?}");
        let keyed: Vec<&String> = got.iter().filter_map(|n| n.dedup_key.as_ref()).collect();
        let distinct: BTreeSet<&String> = keyed.iter().copied().collect();
        ensure!(keyed.len() == distinct.len(), "case {case}: duplicate keys in {got_ids:?}");
        ensure!(
            got.windows(2).all(|w| w[0].distance <= w[1].distance),
            "case {case}: results out of order"
        );
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("groups of sizes 6/1/1 after 7 arbitrations; 500 indexes match the dedup oracle, {elapsed:.2?}"))
}

// ---------------------------------------------------------------------------
// 4. Correction-loop bounds
// ---------------------------------------------------------------------------

/// Says "not equivalent" until the `converge_at`-th check; each fix returns
/// `select <n> as v` for the n-th fix.
fn semantic_script(converge_at: Option<usize>) -> LlmGateway {
    let checks = AtomicUsize::new(0);
    let fixes = AtomicUsize::new(0);
    responder(move |template, _| match template {
        TemplateId::SemanticCheck => {
            let n = checks.fetch_add(1, Ordering::SeqCst) + 1;
            Some(if Some(n) == converge_at {
                "They are equivalent.".into()
            } else {
                "They are not equivalent: q2 drops rows that q1 keeps.".into()
            })
        }
        TemplateId::SemanticFix => {
            let n = fixes.fetch_add(1, Ordering::SeqCst) + 1;
            Some(fenced(&format!("select {n} as v"), &[]))
        }
        _ => None,
    })
}

fn c4_correction_bounds(admin: Option<DbTarget>) -> Check {
    let engine = FixtureEngine::new(|_| Ok(FixtureAnswer::scalar("1")));
    let original = Query::new("c4", "select 1 as v").unwrap();
    let mut lines = Vec::new();
    for (converge_at, iterations, calls, final_sql, converged) in [
        (Some(1), 1, 1, "select 0 as v", true),
        (Some(3), 3, 5, "select 2 as v", true),
        (Some(5), 5, 9, "select 4 as v", true),
        (None, 5, 10, "select 5 as v", false),
    ] {
        let llm = semantic_script(converge_at);
        let corrector = Corrector::new(&llm, &engine);
        let candidate = CandidateRewrite::suggested(original.id.clone(), "select 0 as v");
        let (out, trace) = corrector.correct_semantics(&original, candidate).map_err(fail)?;
        ensure!(trace.stage == CorrectionStage::Semantic, "wrong stage");
        ensure!(
            trace.iterations_used == iterations && llm.calls() == calls && trace.converged == converged,
            "convergence at {converge_at:?}: {} iterations, {} calls, converged={} (want {iterations}, {calls}, {converged})",
            trace.iterations_used,
            llm.calls(),
            trace.converged
        );
        ensure!(out.sql == final_sql, "convergence at {converge_at:?}: final {:?}", out.sql);
        lines.push(format!("{iterations}it/{calls}calls"));
    }

    let Some(admin) = admin else {
        return Err(Failure::Skip(format!(
            "semantic bounds ok ({}); syntax fixture needs PostgreSQL",
            lines.join(", ")
        )));
    };
    let spec = SeedSpec::from_toml("seeds = [1]\ndefault_rows = 20").map_err(fail)?;
    let target = build_instance(
        &admin,
        "acc_syntax",
        "create table employee (id integer primary key, name text, salary integer)",
        &spec,
        1,
    )
    .map_err(fail)?;
    let pg = PgEngine::connect(&target).map_err(fail)?;
    let fixed = "select emp.name, emp.salary from employee emp where emp.salary > 10";
    let llm = responder(move |template, conv| {
        let prompt = conv.last_user_text()?;
        (template == TemplateId::SyntaxFix && prompt.contains("missing FROM-clause entry for table \"em\""))
            .then(|| fenced(fixed, &[]))
    });
    let original = Query::new("alias", "select e.name, e.salary from employee e where e.salary > 10").unwrap();
    let candidate = CandidateRewrite::suggested(
        original.id.clone(),
        "select em.name, em.salary from employee emp where em.salary > 10",
    );
    let corrector = Corrector::new(&llm, &pg);
    let (out, trace) = corrector.correct_syntax(&original, candidate).map_err(fail)?;
    ensure!(trace.converged, "syntax loop did not converge: {trace:?}");
    ensure!(trace.iterations_used <= 2, "syntax loop used {} iterations", trace.iterations_used);
    ensure!(out.sql == fixed && llm.calls() == 1, "final {:?} after {} calls", out.sql, llm.calls());
    Ok(format!(
        "semantic {}; misspelled alias fixed in {} iterations on PostgreSQL",
        lines.join(", "),
        trace.iterations_used
    ))
}

// ---------------------------------------------------------------------------
// 5. Differential equivalence
// ---------------------------------------------------------------------------

const EQ_SCHEMA: &str = "
create table department (id integer primary key, name text);
create table employee (id integer primary key, name text, salary integer, dept_id integer);
";
const EQ_SEEDS: &str = r#"
seeds = [1, 2, 3]

[tables.department]
rows = 20
[tables.department.columns.name]
distinct = 15

[tables.employee]
rows = 1000
[tables.employee.columns.salary]
min = 1
max = 500
[tables.employee.columns.dept_id]
min = 1
max = 25
"#;

const SECOND_HIGHEST_CROSS: &str =
    "select max(a.salary) as xxx from employee as a, employee as b where a.salary < b.salary";
const SECOND_HIGHEST_SUB: &str =
    "select max(salary) as xxx from employee where salary < (select max(salary) from employee)";

const MUTANTS: [(&str, &str, &str); 10] = [
    ("dropped predicate", SECOND_HIGHEST_SUB, "select max(salary) as xxx from employee"),
    (
        "dropped join predicate",
        SECOND_HIGHEST_CROSS,
        "select max(a.salary) as xxx from employee as a, employee as b",
    ),
    (
        "wrong aggregate",
        SECOND_HIGHEST_SUB,
        "select min(salary) as xxx from employee where salary < (select max(salary) from employee)",
    ),
    (
        "wrong aggregate over join",
        SECOND_HIGHEST_CROSS,
        "select count(a.salary) as xxx from employee as a, employee as b where a.salary < b.salary",
    ),
    (
        "boundary",
        SECOND_HIGHEST_SUB,
        "select max(salary) as xxx from employee where salary <= (select max(salary) from employee)",
    ),
    (
        "missing join",
        "select count(*) as n from employee e join department d on e.dept_id = d.id where e.salary > 250",
        "select count(*) as n from employee e where e.salary > 250",
    ),
    (
        "missing join condition",
        "select e.name, d.name as dept from employee e join department d on e.dept_id = d.id where e.salary > 480",
        "select e.name, d.name as dept from employee e, department d where e.salary > 480",
    ),
    (
        "duplicates: distinct dropped",
        "select distinct d.name from employee e join department d on e.dept_id = d.id",
        "select d.name from employee e join department d on e.dept_id = d.id",
    ),
    (
        "duplicates: union vs union all",
        "select dept_id from employee where salary > 400 union select dept_id from employee where salary < 100",
        "select dept_id from employee where salary > 400 union all select dept_id from employee where salary < 100",
    ),
    (
        "duplicates: semi-join vs join",
        "select d.id from department d where d.id in (select dept_id from employee)",
        "select d.id from department d join employee e on e.dept_id = d.id",
    ),
];

fn c5_differential(admin: DbTarget) -> Check {
    let started = Instant::now();
    let spec = SeedSpec::from_toml(EQ_SEEDS).map_err(fail)?;
    let mut samples: Vec<(u64, Arc<dyn SqlEngine>)> = Vec::new();
    for (seed, t) in build_instances(&admin, "acc_equiv", EQ_SCHEMA, &spec).map_err(fail)? {
        samples.push((seed, Arc::new(PgEngine::connect(&t).map_err(fail)?)));
    }
    let bench = samples[0].1.clone();
    let rows = bench
        .execute_rows("select count(*) from employee", Duration::from_secs(10))
        .map_err(fail)?;
    ensure!(rows.rows[0][0].as_deref() == Some("1000"), "employee has {:?} rows", rows.rows);
    let ev = Evaluator::new(bench, samples, Arc::new(NoopReset), EvaluatorConfig::default());
    let eq = ev.check_equivalence(SECOND_HIGHEST_CROSS, SECOND_HIGHEST_SUB, &[]);
    ensure!(
        eq.equivalent && eq.instances_tested == 3,
        "second-highest pair judged {eq:?}"
    );
    for (kind, reference, mutant) in MUTANTS {
        let eq = ev.check_equivalence(reference, mutant, &[]);
        ensure!(!eq.equivalent, "{kind} mutant not caught");
        let w = eq.witness.as_ref();
        ensure!(
            w.is_some_and(|w| [1, 2, 3].contains(&w.seed) && !w.summary.is_empty()),
            "{kind} mutant caught without a witness"
        );
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("pair equivalent on 3 instances; 10/10 mutants caught with witnesses, {elapsed:.2?}"))
}

// ---------------------------------------------------------------------------
// 6. End-to-end determinism and knowledge transfer
// ---------------------------------------------------------------------------

fn transfer_config(dir: &Path, admin: &DbTarget, mode: &str, llm: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    let text = format!(
        r#"mode = "{mode}"
llm_mode = "{llm}"

[run]
zero_shot_rounds = 1
max_total_rounds = 3

[database]
host = "{host}"
port = {port}
benchmark_db = "acc_transfer_bench"
benchmark_seed = 7
benchmark_rows = 5000
sample_prefix = "acc_transfer"
"#,
        host = admin.host,
        port = admin.port
    );
    std::fs::write(&path, text).unwrap();
    path
}

/// Runs the workload once with the scripted model to record a transcript.
fn record_transfer_transcript(config: &Path, manifest: &Path, out: &Path) -> Result<(), Failure> {
    let cfg = FileConfig::load(Some(config)).map_err(fail)?;
    let manifest = WorkloadManifest::load(manifest).map_err(fail)?;
    let (bench, samples) = prepare_databases(&cfg, &manifest).map_err(fail)?;
    let evaluator = Evaluator::new(
        bench,
        samples,
        Arc::new(NoopReset),
        cfg.evaluator_config(MeasureMode::ExplainCost, cfg.run.theta),
    );
    let recorder = Arc::new(RecordingBackend::new(Arc::new(ResponderBackend::new(transfer_reply))));
    let llm = LlmGateway::new(recorder.clone(), Rates::default());
    let embedder = cfg.embedder().map_err(fail)?;
    let mut repo = RuleRepository::new(embedder.dim());
    Workbench::new(&llm, embedder.as_ref(), &evaluator, cfg.run)
        .rewrite_workload(manifest.queries(), &mut repo)
        .map_err(fail)?;
    recorder.write_transcript(out).map_err(fail)
}

fn run_cli(args: &[&str]) -> Result<std::process::Output, Failure> {
    Command::new(env!("CARGO_BIN_EXE_llm-rewrite"))
        .args(args)
        .output()
        .map_err(fail)
}

fn c6_transfer(admin: DbTarget) -> Check {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(fail)?;
    let manifest = copy_transfer_fixture(dir.path());
    let config = transfer_config(dir.path(), &admin, "explain-cost", "scripted");
    let transcript = dir.path().join("transcript.jsonl");

    let empty = RuleRepository::new(HashingEmbedder::default().dim());
    let probe = HashingEmbedder::default().embed("select 1").map_err(fail)?;
    ensure!(empty.select_hints(&probe, 5, 3).hints.is_empty(), "empty repository produced hints");

    record_transfer_transcript(&config, &manifest, &transcript)?;
    let db_time = started.elapsed();

    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = run_cli(&[
            "rewrite",
            "--manifest",
            manifest.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--transcript",
            transcript.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
        ])?;
        ensure!(
            out.status.success(),
            "run {run} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let json = std::fs::read(out_dir.join("report.json")).map_err(fail)?;
        let md = std::fs::read_to_string(out_dir.join("report.md")).map_err(fail)?;
        reports.push((json, md));
    }
    ensure!(reports[0].0 == reports[1].0, "report.json differs between replays");
    ensure!(reports[0].1 == reports[1].1, "report.md differs between replays");

    let report: RunReport = serde_json::from_slice(&reports[0].0).map_err(fail)?;
    ensure!(report.stop_reason == StopReason::AllAccepted, "stopped with {:?}", report.stop_reason);
    ensure!(report.rounds.len() == 2, "{} rounds", report.rounds.len());
    let first: Vec<_> = report.attempts.iter().filter(|a| a.round == 1).collect();
    ensure!(
        !report.rounds[0].hinted
            && first.iter().all(|a| a.hints.is_empty() && a.template == Some(TemplateId::ZeroShotRewrite)),
        "zero-shot round saw hints"
    );
    ensure!(
        report.rounds[0].accepted == vec![QueryId::new("q74")],
        "round 1 accepted {:?}",
        report.rounds[0].accepted
    );
    let q74 = report.outcomes.iter().find(|o| o.query_id.0 == "q74").unwrap();
    ensure!(q74.rules == vec![UNION_RULE.to_string(), AGG_RULE.to_string()], "q74 rules {:?}", q74.rules);
    ensure!(
        report.repo.rules == 2 && report.repo_delta.rules_added == 2,
        "repository holds {} rules",
        report.repo.rules
    );
    for id in ["q4", "q11"] {
        let a = report
            .attempts
            .iter()
            .find(|a| a.round == 2 && a.query_id.0 == id)
            .ok_or_else(|| fail(format!("{id} not attempted in round 2")))?;
        ensure!(
            a.accepted && a.template == Some(TemplateId::HintedRewrite) && a.hints.contains(&UNION_RULE.to_string()),
            "{id} in round 2: accepted={} template={:?} hints={:?}",
            a.accepted,
            a.template,
            a.hints
        );
    }
    ensure!(report.outcomes.iter().all(|o| o.accepted), "not every query was rewritten");

    let speedups: Vec<f64> = report.outcomes.iter().map(|o| o.speedup).collect();
    for (threshold, label) in BUCKETS {
        let count = speedups.iter().filter(|s| **s > threshold).count();
        let line = format!("| {label} | {count} | {:.1}% |", 100.0 * count as f64 / speedups.len() as f64);
        ensure!(reports[0].1.contains(&line), "report.md lacks bucket row {line:?}");
    }
    for id in ["q74", "q4", "q11"] {
        ensure!(
            dir.path().join(format!("{id}.rewritten.sql")).is_file(),
            "{id}.rewritten.sql missing"
        );
    }
    let replay_time = started.elapsed() - db_time;
    Ok(format!(
        "two replays byte-identical; q74 zero-shot, q4/q11 hinted; speedups {:?}, {replay_time:.2?} for replays",
        speedups.iter().map(|s| format!("{s:.2}")).collect::<Vec<_>>()
    ))
}

// ---------------------------------------------------------------------------
// 7. Measurement contract
// ---------------------------------------------------------------------------

struct CountingReset(AtomicUsize);

impl CacheReset for CountingReset {
    fn reset(&self) -> Result<(), DbError> {
        self.0.fetch_add(1, Ordering::SeqCst);
        Ok(())
    }
}

fn c7_measurement(admin: DbTarget) -> Check {
    let spec = SeedSpec::from_toml("seeds = [1]\n[tables.big]\nrows = 100000\nnull_fraction = 0.0").map_err(fail)?;
    let target = build_instance(
        &admin,
        "acc_measure",
        "create table big (id integer primary key, v integer, pad text)",
        &spec,
        1,
    )
    .map_err(fail)?;
    let engine: Arc<dyn SqlEngine> = Arc::new(PgEngine::connect(&target).map_err(fail)?);
    let scan = "select v, pad from big where id + 0 = 4242";
    let indexed = "select v, pad from big where id = 4242";

    let resets = Arc::new(CountingReset(AtomicUsize::new(0)));
    let latency = Evaluator::new(engine.clone(), Vec::new(), resets.clone(), EvaluatorConfig::default());
    latency.original_metric(scan, &[]).map_err(fail)?;
    let after_original = resets.0.load(Ordering::SeqCst);
    let v = latency.measure_speedup(scan, indexed, &[]).map_err(fail)?;
    let total = resets.0.load(Ordering::SeqCst);
    ensure!(
        after_original == 3 && total == 6,
        "cache reset ran {after_original} times for the original and {} for the rewrite",
        total - after_original
    );
    ensure!(v.speedup > 2.0, "latency speedup {:.2}", v.speedup);

    let cost = Evaluator::new(
        engine,
        Vec::new(),
        Arc::new(NoopReset),
        EvaluatorConfig {
            mode: MeasureMode::ExplainCost,
            ..EvaluatorConfig::default()
        },
    );
    let fwd = cost.measure_speedup(scan, indexed, &[]).map_err(fail)?;
    let bwd = cost.measure_speedup(indexed, scan, &[]).map_err(fail)?;
    ensure!(fwd.speedup > 1.0, "cost ratio {}", fwd.speedup);
    ensure!(
        fwd.original_metric == bwd.rewrite_metric && fwd.rewrite_metric == bwd.original_metric,
        "metrics do not swap: {fwd:?} vs {bwd:?}"
    );
    ensure!(
        fwd.speedup == fwd.original_metric / fwd.rewrite_metric
            && bwd.speedup == fwd.rewrite_metric / fwd.original_metric,
        "speedups are not the metric ratios"
    );
    ensure!(
        fwd.classification == Classification::Improved && bwd.classification == Classification::Regression,
        "classifications {:?} / {:?}",
        fwd.classification,
        bwd.classification
    );
    Ok(format!(
        "latency {:.1}x with 3 resets per query; cost ratio {:.1} and its exact inverse",
        v.speedup, fwd.speedup
    ))
}

// ---------------------------------------------------------------------------
// 8. Budget and fallback
// ---------------------------------------------------------------------------

fn fixture_evaluator() -> Evaluator {
    let answer = |sql: &str| Ok(FixtureAnswer::scalar("1").with_cost(if sql.contains("fast") { 1.0 } else { 10.0 }));
    let samples: Vec<(u64, Arc<dyn SqlEngine>)> = vec![(1, Arc::new(FixtureEngine::new(answer)))];
    Evaluator::new(
        Arc::new(FixtureEngine::new(answer)),
        samples,
        Arc::new(NoopReset),
        EvaluatorConfig {
            mode: MeasureMode::ExplainCost,
            ..EvaluatorConfig::default()
        },
    )
}

fn budget_workload() -> Vec<Query> {
    (1..=3)
        .map(|i| Query::new(format!("b{i}"), format!("select {i} as slow")).unwrap())
        .collect()
}

fn budget_reply(template: TemplateId, conv: &llm_rewrite::llm::Conversation) -> Option<String> {
    match template {
        TemplateId::ZeroShotRewrite | TemplateId::HintedRewrite => {
            let n = conv.last_user_text()?.split_whitespace().nth(1)?.to_string();
            Some(fenced(&format!("select {n} as fast"), &["Prefer the cheaper projection"]))
        }
        TemplateId::SemanticCheck => Some("They are equivalent.".into()),
        TemplateId::ConditionElicit => Some("Always.".into()),
        _ => None,
    }
}

fn c8_budget() -> Check {
    let evaluator = fixture_evaluator();
    let embedder = HashingEmbedder::default();

    let llm = responder(budget_reply);
    let config = RunConfig {
        per_query_seconds: 0.0,
        ..RunConfig::default()
    };
    let mut repo = RuleRepository::new(embedder.dim());
    let out = Workbench::new(&llm, &embedder, &evaluator, config)
        .rewrite_workload(budget_workload(), &mut repo)
        .map_err(fail)?;
    ensure!(llm.calls() == 0, "{} model calls with a zero budget", llm.calls());
    ensure!(
        out.outcomes.iter().all(|o| o.speedup == 1.0 && !o.accepted && o.rewrite.sql == o.query.sql),
        "zero budget did not fall back to the originals"
    );
    ensure!(
        out.report.rounds.is_empty() && out.report.stop_reason == StopReason::BudgetExhausted && out.report.truncated,
        "zero budget ran {} rounds, stop {:?}",
        out.report.rounds.len(),
        out.report.stop_reason
    );

    // One call's worth of money: the first suggestion succeeds, the next
    // call finds the budget spent.
    let llm = LlmGateway::new(
        Arc::new(ResponderBackend::new(budget_reply)),
        Rates {
            input_per_1k: 1.0,
            output_per_1k: 1.0,
        },
    );
    let config = RunConfig {
        global_money: 0.001,
        ..RunConfig::default()
    };
    let mut repo = RuleRepository::new(embedder.dim());
    let out = Workbench::new(&llm, &embedder, &evaluator, config)
        .rewrite_workload(budget_workload(), &mut repo)
        .map_err(fail)?;
    let r = &out.report;
    ensure!(llm.calls() == 1, "{} calls before exhaustion", llm.calls());
    ensure!(r.truncated && r.stop_reason == StopReason::BudgetExhausted, "stop {:?}", r.stop_reason);
    ensure!(r.rounds.len() == 1, "{} rounds", r.rounds.len());
    ensure!(
        r.failures.len() == 3 && r.failures.iter().all(|f| f.diagnosis == Diagnosis::Budget),
        "failures {:?}",
        r.failures
    );
    ensure!(r.to_json().contains("\"budget\""), "report JSON lacks the budget diagnosis");
    ensure!(out.outcomes.iter().all(|o| o.speedup == 1.0), "fallback speedups differ from 1.0");
    Ok("zero budget: 0 calls, all at 1.0; money exhausted after 1 call: truncated, 3 x budget".into())
}

// ---------------------------------------------------------------------------
// 9. Live model (optional)
// ---------------------------------------------------------------------------

fn c9_live(admin: Option<DbTarget>) -> Check {
    let (Ok(_), Ok(endpoint), Ok(model)) = (
        std::env::var("LLM_API_KEY"),
        std::env::var("REWRITE_LLM_ENDPOINT"),
        std::env::var("REWRITE_LLM_MODEL"),
    ) else {
        return Err(Failure::Skip(
            "set LLM_API_KEY, REWRITE_LLM_ENDPOINT and REWRITE_LLM_MODEL to run".into(),
        ));
    };
    let admin = admin.ok_or_else(|| Failure::Skip("no PostgreSQL reachable".into()))?;
    let dir = tempfile::tempdir().map_err(fail)?;
    let manifest = copy_transfer_fixture(dir.path());
    let config = transfer_config(dir.path(), &admin, "latency", "live");
    let mut text = std::fs::read_to_string(&config).map_err(fail)?;
    text = text.replace("max_total_rounds = 3", "max_total_rounds = 5");
    text = text.replace("benchmark_rows = 5000", "benchmark_rows = 200000");
    text.push_str(&format!("\n[llm]\nendpoint = \"{endpoint}\"\nmodel = \"{model}\"\n"));
    std::fs::write(&config, text).map_err(fail)?;
    let out = run_cli(&[
        "rewrite",
        "--manifest",
        manifest.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ])?;
    ensure!(out.status.success(), "live run failed: {}", String::from_utf8_lossy(&out.stderr));
    let report: RunReport =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).map_err(fail)?).map_err(fail)?;
    let best = report
        .accepted()
        .filter(|o| ["q74", "q11"].contains(&o.query_id.0.as_str()))
        .map(|o| o.speedup)
        .fold(0.0, f64::max);
    ensure!(best > 1.5, "best union-shaped speedup {best:.2}");
    Ok(format!("live model reached {best:.2}x"))
}

// ---------------------------------------------------------------------------

fn main() {
    let admin = pg_admin();
    let pg = || need_pg();
    let criteria: Vec<(u32, &str, bool, Box<dyn Fn() -> Check>)> = vec![
        (1, "scoring oracle", true, Box::new(c1_scoring_oracle)),
        (2, "geometric-mean oracle", true, Box::new(c2_geometric_mean)),
        (3, "grouping fixture and kNN dedup", true, Box::new(c3_grouping)),
        (4, "correction-loop bounds", true, Box::new(|| c4_correction_bounds(pg().ok()))),
        (5, "differential equivalence", true, Box::new(|| c5_differential(pg()?))),
        (6, "determinism and knowledge transfer", true, Box::new(|| c6_transfer(pg()?))),
        (7, "measurement contract", true, Box::new(|| c7_measurement(pg()?))),
        (8, "budget and fallback", true, Box::new(c8_budget)),
        (9, "live model (optional)", false, Box::new(|| c9_live(pg().ok()))),
    ];
    if admin.is_none() {
        eprintln!("note: PostgreSQL unreachable; database criteria will SKIP");
    }
    let mut failed = 0;
    for (id, name, gating, run) in criteria {
        let started = Instant::now();
        let verdict = std::panic::catch_unwind(AssertUnwindSafe(&*run))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(Failure::Fail(format!("panicked: {msg}")))
            });
        let secs = started.elapsed().as_secs_f64();
        let (tag, detail) = match verdict {
            Ok(d) => ("PASS", d),
            Err(Failure::Skip(d)) => ("SKIP", d),
            Err(Failure::Fail(d)) => {
                if gating {
                    failed += 1;
                }
                ("FAIL", d)
            }
        };
        println!("{tag} {id}. {name} [{secs:.1}s]: {detail}");
    }
    if failed > 0 {
        println!("{failed} gating criteria failed");
        std::process::exit(1);
    }
}
