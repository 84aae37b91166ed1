//! The rule repository: natural-language rewrite rules, their semantic
//! groups with pooled benefit, the queries they helped, and hint selection.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddingProvider, EmbeddingVector, IndexEntry, VectorIndex};
use crate::error::{Error, Result};
use crate::llm::{self, Bindings, LlmError, LlmGateway, TemplateId};
use crate::model::{Budget, QueryId};

pub const DEFAULT_GROUP_CANDIDATES: usize = 4;
pub const DEFAULT_K_NEIGHBORS: usize = 5;
pub const DEFAULT_K_GROUPS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleId(pub String);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(pub String);

impl std::fmt::Display for RuleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::fmt::Display for GroupId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nlr2 {
    pub rule_id: RuleId,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
    pub source_query_id: QueryId,
    /// `None` while the rule is parked awaiting group arbitration.
    pub group_id: Option<GroupId>,
    pub observed_speedups: Vec<f64>,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleGroup {
    pub group_id: GroupId,
    pub representative: RuleId,
    pub members: Vec<RuleId>,
    pub benefit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: QueryId,
    pub embedding: EmbeddingVector,
    pub rules: Vec<RuleId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum StoredRecord {
    Rule(Nlr2),
    Group(RuleGroup),
    QueryRecord(QueryRecord),
}

/// Geometric mean via a compensated sum of logarithms.
pub fn geometric_mean<'a>(values: impl IntoIterator<Item = &'a f64>) -> Option<f64> {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    let mut n = 0usize;
    let mut first = 0.0;
    for v in values {
        if n == 0 {
            first = *v;
        }
        let x = v.ln();
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
        n += 1;
    }
    match n {
        0 => None,
        1 => Some(first),
        _ => Some(((sum + comp) / n as f64).exp()),
    }
}

/// What the repository needs to embed rules and arbitrate groups.
pub struct RepoServices<'a> {
    pub embedder: &'a dyn EmbeddingProvider,
    pub llm: &'a LlmGateway,
    pub budgets: Vec<Budget>,
    /// Candidate groups shown to the model per new rule.
    pub group_candidates: usize,
}

impl<'a> RepoServices<'a> {
    pub fn new(embedder: &'a dyn EmbeddingProvider, llm: &'a LlmGateway) -> Self {
        RepoServices {
            embedder,
            llm,
            budgets: Vec::new(),
            group_candidates: DEFAULT_GROUP_CANDIDATES,
        }
    }

    fn budget_refs(&self) -> Vec<&Budget> {
        self.budgets.iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AddedRule {
    pub rule_id: RuleId,
    /// `None` when arbitration failed and the rule was parked.
    pub group_id: Option<GroupId>,
    pub new_group: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedNeighbor {
    pub query_id: QueryId,
    pub distance: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub group_id: GroupId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hint {
    pub rule_id: RuleId,
    pub group_id: GroupId,
    pub description: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HintSelection {
    pub neighbors: Vec<WeightedNeighbor>,
    /// Every touched group, best first.
    pub ranking: Vec<GroupScore>,
    pub hints: Vec<Hint>,
}

impl HintSelection {
    pub fn descriptions(&self) -> Vec<String> {
        self.hints.iter().map(|h| h.description.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group_id: GroupId,
    pub representative: String,
    pub size: usize,
    pub observations: usize,
    pub benefit: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RepoStats {
    pub rules: usize,
    pub groups: usize,
    pub parked: usize,
    pub query_records: usize,
    pub observations: usize,
    /// Sorted by descending benefit, then group id.
    pub group_details: Vec<GroupStats>,
}

#[derive(Debug)]
pub struct RuleRepository {
    dim: usize,
    rules: Vec<Nlr2>,
    rule_pos: HashMap<RuleId, usize>,
    groups: Vec<RuleGroup>,
    group_pos: HashMap<GroupId, usize>,
    queries: Vec<QueryRecord>,
    query_pos: HashMap<QueryId, usize>,
    rule_index: VectorIndex,
    query_index: VectorIndex,
    next_rule: u64,
    next_group: u64,
}

impl RuleRepository {
    pub fn new(dim: usize) -> Self {
        RuleRepository {
            dim,
            rules: Vec::new(),
            rule_pos: HashMap::new(),
            groups: Vec::new(),
            group_pos: HashMap::new(),
            queries: Vec::new(),
            query_pos: HashMap::new(),
            rule_index: VectorIndex::new(dim),
            query_index: VectorIndex::new(dim),
            next_rule: 1,
            next_group: 1,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rules(&self) -> &[Nlr2] {
        &self.rules
    }

    pub fn groups(&self) -> &[RuleGroup] {
        &self.groups
    }

    pub fn query_records(&self) -> &[QueryRecord] {
        &self.queries
    }

    pub fn rule(&self, id: &RuleId) -> Option<&Nlr2> {
        self.rule_pos.get(id).map(|&i| &self.rules[i])
    }

    pub fn group(&self, id: &GroupId) -> Option<&RuleGroup> {
        self.group_pos.get(id).map(|&i| &self.groups[i])
    }

    pub fn query_record(&self, id: &QueryId) -> Option<&QueryRecord> {
        self.query_pos.get(id).map(|&i| &self.queries[i])
    }

    pub fn find_by_description(&self, description: &str) -> Option<&Nlr2> {
        let wanted = description.trim();
        self.rules.iter().find(|r| r.description == wanted)
    }

    pub fn has_grouped_rules(&self) -> bool {
        !self.groups.is_empty()
    }

    pub fn parked(&self) -> Vec<RuleId> {
        self.rules
            .iter()
            .filter(|r| r.group_id.is_none())
            .map(|r| r.rule_id.clone())
            .collect()
    }

    /// Adds a rule observed on an equivalent rewrite and files it into a group.
    pub fn add_rule(
        &mut self,
        services: &RepoServices<'_>,
        description: &str,
        condition: Option<&str>,
        source_query_id: &QueryId,
        speedup: f64,
    ) -> Result<AddedRule> {
        check_speedup(speedup)?;
        self.insert_rule(services, description, condition, source_query_id, vec![speedup])
    }

    fn insert_rule(
        &mut self,
        services: &RepoServices<'_>,
        description: &str,
        condition: Option<&str>,
        source_query_id: &QueryId,
        observations: Vec<f64>,
    ) -> Result<AddedRule> {
        let description = description.trim();
        if description.is_empty() {
            return Err(Error::InvalidInput("rule description is empty".into()));
        }
        let embedding = services.embedder.embed(description)?;
        if embedding.dim() != self.dim {
            return Err(crate::embed::EmbedError::DimensionMismatch {
                expected: self.dim,
                got: embedding.dim(),
            }
            .into());
        }
        let rule_id = RuleId(format!("r{}", self.next_rule));
        self.next_rule += 1;
        self.rule_pos.insert(rule_id.clone(), self.rules.len());
        self.rules.push(Nlr2 {
            rule_id: rule_id.clone(),
            description: description.to_string(),
            condition: condition.map(|c| c.trim().to_string()).filter(|c| !c.is_empty()),
            source_query_id: source_query_id.clone(),
            group_id: None,
            observed_speedups: observations,
            embedding,
        });
        match self.assign_group(services, &rule_id) {
            Ok((group_id, new_group)) => Ok(AddedRule {
                rule_id,
                group_id: Some(group_id),
                new_group,
            }),
            Err(e) => {
                log::warn!("rule {rule_id} parked: {e}");
                Ok(AddedRule {
                    rule_id,
                    group_id: None,
                    new_group: false,
                })
            }
        }
    }

    /// Candidate groups for a rule: nearest grouped rules, one per group.
    pub fn group_candidates(&self, embedding: &EmbeddingVector, k: usize) -> Vec<(GroupId, String)> {
        self.rule_index
            .knn(embedding, k, true)
            .into_iter()
            .filter_map(|n| {
                let gid = GroupId(n.dedup_key?);
                let g = self.group(&gid)?;
                let rep = self.rule(&g.representative)?;
                Some((gid, rep.description.clone()))
            })
            .collect()
    }

    fn assign_group(&mut self, services: &RepoServices<'_>, rule_id: &RuleId) -> Result<(GroupId, bool), LlmError> {
        let idx = self.rule_pos[rule_id];
        let candidates = self.group_candidates(&self.rules[idx].embedding, services.group_candidates);
        let chosen = if candidates.is_empty() {
            None
        } else {
            predict_group(services, &self.rules[idx].description, &candidates)?
        };
        let (gid, new_group) = match chosen {
            Some(g) => {
                let gi = self.group_pos[&g];
                self.groups[gi].members.push(rule_id.clone());
                (g, false)
            }
            None => {
                let gid = GroupId(format!("g{}", self.next_group));
                self.next_group += 1;
                self.group_pos.insert(gid.clone(), self.groups.len());
                self.groups.push(RuleGroup {
                    group_id: gid.clone(),
                    representative: rule_id.clone(),
                    members: vec![rule_id.clone()],
                    benefit: 1.0,
                });
                (gid, true)
            }
        };
        self.rules[idx].group_id = Some(gid.clone());
        self.rule_index
            .insert(IndexEntry {
                id: rule_id.0.clone(),
                vector: self.rules[idx].embedding.clone(),
                dedup_key: Some(gid.0.clone()),
            })
            .expect("rule ids are unique and dimensions checked on insert");
        self.recompute_benefit(&gid);
        Ok((gid, new_group))
    }

    /// Retries arbitration for parked rules; returns how many got a group.
    pub fn regroup_parked(&mut self, services: &RepoServices<'_>) -> usize {
        let mut grouped = 0;
        for rid in self.parked() {
            if self.assign_group(services, &rid).is_ok() {
                grouped += 1;
            }
        }
        grouped
    }

    /// Records one more observed speedup for `rule_id` and returns the
    /// refreshed group benefit (`None` for a parked rule).
    pub fn update_benefit(&mut self, rule_id: &RuleId, speedup: f64) -> Result<Option<f64>> {
        check_speedup(speedup)?;
        let idx = *self
            .rule_pos
            .get(rule_id)
            .ok_or_else(|| Error::UnknownRule(rule_id.0.clone()))?;
        self.rules[idx].observed_speedups.push(speedup);
        Ok(self.rules[idx].group_id.clone().map(|g| self.recompute_benefit(&g)))
    }

    fn recompute_benefit(&mut self, gid: &GroupId) -> f64 {
        let gi = self.group_pos[gid];
        let benefit = geometric_mean(
            self.groups[gi]
                .members
                .iter()
                .flat_map(|m| self.rules[self.rule_pos[m]].observed_speedups.iter()),
        )
        .unwrap_or(1.0);
        self.groups[gi].benefit = benefit;
        benefit
    }

    /// Links `rules` to a query, creating its record on first use.
    pub fn record_query(&mut self, query_id: &QueryId, embedding: &EmbeddingVector, rules: &[RuleId]) -> Result<()> {
        for r in rules {
            if !self.rule_pos.contains_key(r) {
                return Err(Error::UnknownRule(r.0.clone()));
            }
        }
        let idx = match self.query_pos.get(query_id) {
            Some(&i) => i,
            None => {
                self.query_index.insert(IndexEntry {
                    id: query_id.0.clone(),
                    vector: embedding.clone(),
                    dedup_key: None,
                })?;
                self.query_pos.insert(query_id.clone(), self.queries.len());
                self.queries.push(QueryRecord {
                    query_id: query_id.clone(),
                    embedding: embedding.clone(),
                    rules: Vec::new(),
                });
                self.queries.len() - 1
            }
        };
        for r in rules {
            if !self.queries[idx].rules.contains(r) {
                self.queries[idx].rules.push(r.clone());
            }
        }
        Ok(())
    }

    fn grouped_rules_of<'a>(&'a self, record: &'a QueryRecord) -> impl Iterator<Item = (&'a RuleId, &'a GroupId)> + 'a {
        record.rules.iter().filter_map(|r| {
            let rule = self.rule(r)?;
            rule.group_id.as_ref().map(|g| (r, g))
        })
    }

    /// Picks up to `k_groups` hints for a query with embedding `target`.
    ///
    /// Neighbor weights are normalized inverse distances; a group scores
    /// `sum_i weight_i * [neighbor i used the group] * benefit`. One rule per
    /// group is returned, taken from the closest neighbor that used it.
    pub fn select_hints(&self, target: &EmbeddingVector, k_neighbors: usize, k_groups: usize) -> HintSelection {
        let eligible: HashSet<&str> = self
            .queries
            .iter()
            .filter(|q| self.grouped_rules_of(q).next().is_some())
            .map(|q| q.query_id.0.as_str())
            .collect();
        if eligible.is_empty() || k_neighbors == 0 {
            return HintSelection::default();
        }
        let found = self
            .query_index
            .knn_filtered(target, k_neighbors, false, |e| eligible.contains(e.id.as_str()));
        let distances: Vec<f64> = found.iter().map(|n| n.distance).collect();
        let weights = neighbor_weights(&distances);
        let neighbors: Vec<WeightedNeighbor> = found
            .iter()
            .zip(&weights)
            .map(|(n, &w)| WeightedNeighbor {
                query_id: QueryId(n.id.clone()),
                distance: n.distance,
                weight: w,
            })
            .collect();

        // First-touch order doubles as the tie-break.
        let mut order: Vec<GroupId> = Vec::new();
        let mut scores: HashMap<GroupId, f64> = HashMap::new();
        let mut pick: HashMap<GroupId, RuleId> = HashMap::new();
        for n in &neighbors {
            let record = self.query_record(&n.query_id).expect("indexed query has a record");
            let mut touched = HashSet::new();
            for (rid, gid) in self.grouped_rules_of(record) {
                if !touched.insert(gid.clone()) {
                    continue;
                }
                let benefit = self.group(gid).map(|g| g.benefit).unwrap_or(1.0);
                if !scores.contains_key(gid) {
                    order.push(gid.clone());
                    pick.insert(gid.clone(), rid.clone());
                }
                *scores.entry(gid.clone()).or_insert(0.0) += n.weight * benefit;
            }
        }
        let mut ranking: Vec<GroupScore> = order
            .iter()
            .map(|g| GroupScore {
                group_id: g.clone(),
                score: scores[g],
            })
            .collect();
        ranking.sort_by(|a, b| b.score.total_cmp(&a.score));
        let hints = ranking
            .iter()
            .take(k_groups)
            .map(|gs| {
                let rid = pick[&gs.group_id].clone();
                Hint {
                    description: self.rule(&rid).expect("picked rule exists").description.clone(),
                    rule_id: rid,
                    group_id: gs.group_id.clone(),
                    score: gs.score,
                }
            })
            .collect();
        HintSelection {
            neighbors,
            ranking,
            hints,
        }
    }

    pub fn stats(&self) -> RepoStats {
        let mut group_details: Vec<GroupStats> = self
            .groups
            .iter()
            .map(|g| GroupStats {
                group_id: g.group_id.clone(),
                representative: self.rule(&g.representative).map(|r| r.description.clone()).unwrap_or_default(),
                size: g.members.len(),
                observations: g
                    .members
                    .iter()
                    .filter_map(|m| self.rule(m))
                    .map(|r| r.observed_speedups.len())
                    .sum(),
                benefit: g.benefit,
            })
            .collect();
        group_details.sort_by(|a, b| {
            b.benefit
                .total_cmp(&a.benefit)
                .then_with(|| group_order(&a.group_id).cmp(&group_order(&b.group_id)))
        });
        RepoStats {
            rules: self.rules.len(),
            groups: self.groups.len(),
            parked: self.rules.iter().filter(|r| r.group_id.is_none()).count(),
            query_records: self.queries.len(),
            observations: self.rules.iter().map(|r| r.observed_speedups.len()).sum(),
            group_details,
        }
    }

    /// The partition as sets of rule descriptions, for comparing repositories.
    pub fn partition(&self) -> Vec<Vec<String>> {
        let mut p: Vec<Vec<String>> = self
            .groups
            .iter()
            .map(|g| {
                let mut d: Vec<String> = g
                    .members
                    .iter()
                    .filter_map(|m| self.rule(m))
                    .map(|r| r.description.clone())
                    .collect();
                d.sort();
                d
            })
            .collect();
        p.sort();
        p
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        for r in &self.rules {
            writeln!(f, "{}", serde_json::to_string(&StoredRecord::Rule(r.clone()))?)?;
        }
        for g in &self.groups {
            writeln!(f, "{}", serde_json::to_string(&StoredRecord::Group(g.clone()))?)?;
        }
        for q in &self.queries {
            writeln!(f, "{}", serde_json::to_string(&StoredRecord::QueryRecord(q.clone()))?)?;
        }
        f.sync_all()?;
        Ok(())
    }

    /// Loads a repository file. A missing file yields an empty repository.
    pub fn load(path: &Path, dim: usize) -> Result<Self> {
        let mut repo = RuleRepository::new(dim);
        if !path.exists() {
            return Ok(repo);
        }
        let malformed = |line: usize, message: String| Error::Malformed {
            path: path.display().to_string(),
            line,
            message,
        };
        let file = File::open(path)?;
        let mut group_lines = Vec::new();
        let mut query_lines = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let rec: StoredRecord = serde_json::from_str(&line).map_err(|e| malformed(lineno, e.to_string()))?;
            match rec {
                StoredRecord::Rule(r) => {
                    if r.embedding.dim() != dim {
                        return Err(malformed(lineno, format!("embedding has {} dimensions, expected {dim}", r.embedding.dim())));
                    }
                    if r.description.trim().is_empty() {
                        return Err(malformed(lineno, "empty rule description".into()));
                    }
                    if r.observed_speedups.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                        return Err(malformed(lineno, "speedups must be positive".into()));
                    }
                    if repo.rule_pos.contains_key(&r.rule_id) {
                        return Err(malformed(lineno, format!("duplicate rule {}", r.rule_id)));
                    }
                    repo.next_rule = repo.next_rule.max(id_number(&r.rule_id.0) + 1);
                    repo.rule_pos.insert(r.rule_id.clone(), repo.rules.len());
                    repo.rules.push(r);
                }
                StoredRecord::Group(g) => group_lines.push((lineno, g)),
                StoredRecord::QueryRecord(q) => query_lines.push((lineno, q)),
            }
        }
        for (lineno, g) in group_lines {
            if g.members.is_empty() || !g.members.contains(&g.representative) {
                return Err(malformed(lineno, format!("group {} has no valid representative", g.group_id)));
            }
            for m in &g.members {
                let Some(&ri) = repo.rule_pos.get(m) else {
                    return Err(malformed(lineno, format!("group {} references unknown rule {m}", g.group_id)));
                };
                if repo.rules[ri].group_id.as_ref() != Some(&g.group_id) {
                    return Err(malformed(lineno, format!("rule {m} does not belong to group {}", g.group_id)));
                }
            }
            repo.next_group = repo.next_group.max(id_number(&g.group_id.0) + 1);
            repo.group_pos.insert(g.group_id.clone(), repo.groups.len());
            repo.groups.push(g);
        }
        for r in &repo.rules {
            if let Some(g) = &r.group_id {
                let ok = repo.group(g).is_some_and(|grp| grp.members.contains(&r.rule_id));
                if !ok {
                    return Err(malformed(0, format!("rule {} claims missing group {g}", r.rule_id)));
                }
                repo.rule_index.insert(IndexEntry {
                    id: r.rule_id.0.clone(),
                    vector: r.embedding.clone(),
                    dedup_key: Some(g.0.clone()),
                })?;
            }
        }
        let gids: Vec<GroupId> = repo.groups.iter().map(|g| g.group_id.clone()).collect();
        for g in gids {
            repo.recompute_benefit(&g);
        }
        for (lineno, q) in query_lines {
            if q.embedding.dim() != dim {
                return Err(malformed(lineno, "query embedding dimension mismatch".into()));
            }
            repo.record_query(&q.query_id, &q.embedding, &q.rules)
                .map_err(|e| malformed(lineno, e.to_string()))?;
        }
        Ok(repo)
    }

    /// Merges another repository's rules into this one, re-arbitrating each
    /// rule against the local groups. Returns the number of rules imported.
    pub fn import(&mut self, services: &RepoServices<'_>, other: &RuleRepository) -> Result<usize> {
        let mut remap: BTreeMap<RuleId, RuleId> = BTreeMap::new();
        // Group by group so each imported group keeps its members adjacent.
        let mut ordered: Vec<&Nlr2> = Vec::new();
        for g in other.groups() {
            ordered.extend(g.members.iter().filter_map(|m| other.rule(m)));
        }
        ordered.extend(other.rules().iter().filter(|r| r.group_id.is_none()));
        for r in ordered {
            let added = self.insert_rule(
                services,
                &r.description,
                r.condition.as_deref(),
                &r.source_query_id,
                r.observed_speedups.clone(),
            )?;
            remap.insert(r.rule_id.clone(), added.rule_id);
        }
        for q in other.query_records() {
            if q.embedding.dim() != self.dim {
                continue;
            }
            let rules: Vec<RuleId> = q.rules.iter().filter_map(|r| remap.get(r).cloned()).collect();
            self.record_query(&q.query_id, &q.embedding, &rules)?;
        }
        Ok(remap.len())
    }
}

fn id_number(id: &str) -> u64 {
    id.trim_start_matches(|c: char| !c.is_ascii_digit()).parse().unwrap_or(0)
}

fn group_order(g: &GroupId) -> u64 {
    id_number(&g.0)
}

fn check_speedup(speedup: f64) -> Result<()> {
    if speedup.is_finite() && speedup > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("speedup must be positive, got {speedup}")))
    }
}

/// Normalized inverse-distance weights. Zero-distance neighbors share the
/// whole mass evenly.
pub fn neighbor_weights(distances: &[f64]) -> Vec<f64> {
    if distances.is_empty() {
        return Vec::new();
    }
    let zeros = distances.iter().filter(|d| **d == 0.0).count();
    if zeros > 0 {
        let w = 1.0 / zeros as f64;
        return distances.iter().map(|d| if *d == 0.0 { w } else { 0.0 }).collect();
    }
    let inv: Vec<f64> = distances.iter().map(|d| 1.0 / d).collect();
    let total: f64 = inv.iter().sum();
    inv.iter().map(|x| x / total).collect()
}

/// Asks the model which candidate group (if any) `rule` belongs to.
pub fn predict_group(
    services: &RepoServices<'_>,
    rule: &str,
    candidates: &[(GroupId, String)],
) -> Result<Option<GroupId>, LlmError> {
    let options: Vec<String> = candidates.iter().map(|(_, d)| d.clone()).collect();
    let mut b = Bindings::new();
    b.insert("rule", rule.into());
    b.insert("candidates", options.clone().into());
    let conv = llm::render(TemplateId::GroupPredict, &b)?;
    let reply = services
        .llm
        .complete(TemplateId::GroupPredict, &conv, &services.budget_refs(), None)?;
    Ok(llm::parse_group_selection(&reply, &options).map(|i| candidates[i].0.clone()))
}
