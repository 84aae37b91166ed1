//! Command-line layer: manifest and config loading, `rewrite` and `repo`.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::db::{
    build_instance, build_instances, CacheReset, DbTarget, NoopReset, PgEngine, SeedSpec, ShellReset, SqlEngine,
    TargetRole,
};
use crate::embed::{EmbeddingProvider, HashingEmbedder, HttpEmbedder, HttpEmbedderConfig};
use crate::error::{Error, Result};
use crate::evaluator::{Evaluator, EvaluatorConfig, MeasureMode};
use crate::llm::{HttpBackend, HttpBackendConfig, LlmBackend, LlmGateway, Rates, RecordingBackend, ScriptedBackend};
use crate::model::Query;
use crate::orchestrator::{RunConfig, Workbench};
use crate::repo::{RepoServices, RuleRepository};

#[derive(Debug, Parser)]
#[command(name = "llm-rewrite", version, about = "Rewrite SQL workloads with an LLM and a rule repository")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rewrite every query of a workload manifest.
    Rewrite(RewriteArgs),
    /// Export, import or inspect a rule repository.
    Repo {
        #[command(subcommand)]
        action: RepoAction,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Latency,
    #[value(name = "explain-cost")]
    ExplainCost,
}

impl From<ModeArg> for MeasureMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Latency => MeasureMode::Latency,
            ModeArg::ExplainCost => MeasureMode::ExplainCost,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LlmMode {
    Live,
    Scripted,
}

#[derive(Debug, Clone, Default, Args)]
pub struct LlmArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub llm: Option<LlmMode>,
    /// Replay file for `--llm scripted`; recording target for `--llm live`.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RewriteArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub llm: LlmArgs,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub rounds: Option<u32>,
    #[arg(long)]
    pub zero_shot_rounds: Option<u32>,
    #[arg(long)]
    pub theta: Option<f64>,
    /// Seconds allowed per query across all rounds.
    #[arg(long)]
    pub budget_seconds: Option<f64>,
    /// Money allowed for the whole run.
    #[arg(long)]
    pub budget_money: Option<f64>,
    #[arg(long)]
    pub repo: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum RepoAction {
    /// Write the repository as line-delimited JSON.
    Export {
        #[arg(long)]
        repo: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Merge rules from another repository file into `--repo`.
    Import {
        #[arg(long)]
        repo: PathBuf,
        file: PathBuf,
        #[command(flatten)]
        llm: LlmArgs,
    },
    /// Print groups, sizes and benefits.
    Inspect {
        path: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub mode: Option<ModeArg>,
    pub llm_mode: Option<LlmMode>,
    pub transcript: Option<PathBuf>,
    pub repo: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub run: RunConfig,
    pub llm: LlmSection,
    pub embedding: EmbeddingSection,
    pub database: DatabaseSection,
    pub evaluation: EvaluationSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub timeout_secs: Option<u64>,
    pub input_per_1k: f64,
    pub output_per_1k: f64,
    pub max_retries: Option<u32>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    /// `hashing` (built in) or `http`.
    pub kind: String,
    pub dim: usize,
    pub endpoint: Option<String>,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        EmbeddingSection {
            kind: "hashing".into(),
            dim: crate::embed::DEFAULT_HASH_DIM,
            endpoint: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatabaseSection {
    pub host: String,
    pub port: u16,
    pub user: String,
    pub password_env: Option<String>,
    /// Database used for EXPLAIN probes and timing.
    pub benchmark_db: String,
    /// When set, the benchmark database is rebuilt from the seed spec with
    /// this seed before the run.
    pub benchmark_seed: Option<u64>,
    /// Row count override for a rebuilt benchmark database.
    pub benchmark_rows: Option<usize>,
    pub sample_prefix: String,
    pub admin_db: String,
}

impl Default for DatabaseSection {
    fn default() -> Self {
        DatabaseSection {
            host: "127.0.0.1".into(),
            port: 5432,
            user: "postgres".into(),
            password_env: None,
            benchmark_db: "rewrite_bench".into(),
            benchmark_seed: None,
            benchmark_rows: None,
            sample_prefix: "rewrite_sample".into(),
            admin_db: "postgres".into(),
        }
    }
}

impl DatabaseSection {
    fn target(&self, database: &str, role: TargetRole) -> DbTarget {
        let mut t = DbTarget::new(&self.host, self.port, database, &self.user, role);
        t.password_env = self.password_env.clone();
        t
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub repetitions: Option<usize>,
    pub timeout_factor: Option<f64>,
    pub timeout_floor_secs: Option<f64>,
    pub timeout_cap_secs: Option<f64>,
    pub sample_timeout_secs: Option<f64>,
    pub cache_reset_command: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn embedder(&self) -> Result<Box<dyn EmbeddingProvider>> {
        if self.embedding.dim == 0 {
            return Err(Error::Config("embedding.dim must be positive".into()));
        }
        match self.embedding.kind.as_str() {
            "hashing" => Ok(Box::new(HashingEmbedder::new(self.embedding.dim))),
            "http" => {
                let endpoint = self
                    .embedding
                    .endpoint
                    .clone()
                    .ok_or_else(|| Error::Config("embedding.endpoint is required for kind = \"http\"".into()))?;
                Ok(Box::new(HttpEmbedder::new(HttpEmbedderConfig {
                    endpoint,
                    dim: self.embedding.dim,
                    timeout_secs: 60,
                })?))
            }
            other => Err(Error::Config(format!("unknown embedding kind {other:?}"))),
        }
    }

    pub fn evaluator_config(&self, mode: MeasureMode, theta: f64) -> EvaluatorConfig {
        let d = EvaluatorConfig::default();
        let e = &self.evaluation;
        let secs = |v: Option<f64>, dflt: Duration| v.map(Duration::from_secs_f64).unwrap_or(dflt);
        EvaluatorConfig {
            mode,
            theta,
            repetitions: e.repetitions.unwrap_or(d.repetitions),
            timeout_factor: e.timeout_factor.unwrap_or(d.timeout_factor),
            timeout_floor: secs(e.timeout_floor_secs, d.timeout_floor),
            timeout_cap: secs(e.timeout_cap_secs, d.timeout_cap),
            sample_timeout: secs(e.sample_timeout_secs, d.sample_timeout),
        }
    }

    fn cache_reset(&self) -> Arc<dyn CacheReset> {
        match &self.evaluation.cache_reset_command {
            Some(c) if !c.trim().is_empty() => Arc::new(ShellReset { command: c.clone() }),
            _ => Arc::new(NoopReset),
        }
    }
}

/// A sample instance and its seed.
pub type SampleEngine = (u64, Arc<dyn SqlEngine>);

type Recorder = Option<(Arc<RecordingBackend>, PathBuf)>;

/// The LLM backend chosen by flags and config, plus a recorder to flush
/// when running live with `--transcript`.
fn make_backend(args: &LlmArgs, cfg: &FileConfig) -> Result<(Arc<dyn LlmBackend>, Recorder)> {
    let mode = args.llm.or(cfg.llm_mode).unwrap_or(LlmMode::Scripted);
    let transcript = args.transcript.clone().or_else(|| cfg.transcript.clone());
    match mode {
        LlmMode::Scripted => {
            let path = transcript.ok_or_else(|| Error::Config("--llm scripted needs --transcript".into()))?;
            Ok((Arc::new(ScriptedBackend::load(&path)?), None))
        }
        LlmMode::Live => {
            let endpoint = cfg
                .llm
                .endpoint
                .clone()
                .ok_or_else(|| Error::Config("llm.endpoint must be set for --llm live".into()))?;
            let model = cfg
                .llm
                .model
                .clone()
                .ok_or_else(|| Error::Config("llm.model must be set for --llm live".into()))?;
            let http = HttpBackend::from_env(HttpBackendConfig {
                endpoint,
                model,
                temperature: cfg.llm.temperature,
                timeout_secs: cfg.llm.timeout_secs.unwrap_or(120),
            })?;
            match transcript {
                Some(path) => {
                    let rec = Arc::new(RecordingBackend::new(Arc::new(http)));
                    Ok((rec.clone(), Some((rec, path))))
                }
                None => Ok((Arc::new(http), None)),
            }
        }
    }
}

fn make_gateway(backend: Arc<dyn LlmBackend>, cfg: &FileConfig) -> LlmGateway {
    let gw = LlmGateway::new(
        backend,
        Rates {
            input_per_1k: cfg.llm.input_per_1k,
            output_per_1k: cfg.llm.output_per_1k,
        },
    );
    match cfg.llm.max_retries {
        Some(n) => gw.with_retries(n, Duration::from_millis(500)),
        None => gw,
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    schema: PathBuf,
    seed_spec: PathBuf,
    #[serde(default, rename = "query")]
    queries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
}

/// A workload: queries with their source files, the schema DDL and the
/// row-generator spec. Relative paths resolve against the manifest.
#[derive(Debug, Clone)]
pub struct WorkloadManifest {
    pub path: PathBuf,
    pub entries: Vec<(Query, PathBuf)>,
    pub schema_ddl: String,
    pub seed_spec: SeedSpec,
}

impl WorkloadManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        let m: ManifestFile = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let read = |p: &Path, what: &str| {
            let full = base.join(p);
            std::fs::read_to_string(&full)
                .map_err(|e| Error::Config(format!("cannot read {what} {}: {e}", full.display())))
                .map(|t| (t, full))
        };
        if m.queries.is_empty() {
            return Err(Error::Config(format!("{}: no [[query]] entries", path.display())));
        }
        let (schema_ddl, _) = read(&m.schema, "schema")?;
        let (spec_text, _) = read(&m.seed_spec, "seed spec")?;
        let seed_spec = SeedSpec::from_toml(&spec_text).map_err(|e| Error::Config(e.to_string()))?;
        let mut ids = BTreeSet::new();
        let mut entries = Vec::new();
        for q in m.queries {
            if !ids.insert(q.id.clone()) {
                return Err(Error::Config(format!("duplicate query id {}", q.id)));
            }
            let (sql, full) = read(&q.path, "query")?;
            entries.push((Query::new(q.id, sql)?, full));
        }
        Ok(WorkloadManifest {
            path: path.to_path_buf(),
            entries,
            schema_ddl,
            seed_spec,
        })
    }

    pub fn queries(&self) -> Vec<Query> {
        self.entries.iter().map(|(q, _)| q.clone()).collect()
    }
}

/// Connects to the benchmark database and builds the sample instances.
pub fn prepare_databases(
    cfg: &FileConfig,
    manifest: &WorkloadManifest,
) -> Result<(Arc<dyn SqlEngine>, Vec<SampleEngine>)> {
    let db = &cfg.database;
    let admin = db.target(&db.admin_db, TargetRole::Benchmark);
    let bench_target = match db.benchmark_seed {
        Some(seed) => {
            let mut spec = manifest.seed_spec.clone();
            if let Some(rows) = db.benchmark_rows {
                spec.default_rows = rows;
                for t in spec.tables.values_mut() {
                    t.rows = Some(rows);
                    t.empty_in_seeds.clear();
                }
            }
            let mut t = build_instance(&admin, &db.benchmark_db, &manifest.schema_ddl, &spec, seed)?;
            t.role = TargetRole::Benchmark;
            t
        }
        None => db.target(&db.benchmark_db, TargetRole::Benchmark),
    };
    let bench: Arc<dyn SqlEngine> = Arc::new(PgEngine::connect(&bench_target)?);
    let mut samples: Vec<(u64, Arc<dyn SqlEngine>)> = Vec::new();
    for (seed, target) in build_instances(&admin, &db.sample_prefix, &manifest.schema_ddl, &manifest.seed_spec)? {
        samples.push((seed, Arc::new(PgEngine::connect(&target)?)));
    }
    Ok((bench, samples))
}

fn apply_flags(args: &RewriteArgs, cfg: &FileConfig) -> RunConfig {
    let mut run = cfg.run;
    if let Some(r) = args.rounds {
        run.max_total_rounds = r;
        run.zero_shot_rounds = run.zero_shot_rounds.min(r.saturating_sub(1));
    }
    if let Some(z) = args.zero_shot_rounds {
        run.zero_shot_rounds = z;
    }
    if let Some(t) = args.theta {
        run.theta = t;
    }
    if let Some(s) = args.budget_seconds {
        run.per_query_seconds = s;
    }
    if let Some(m) = args.budget_money {
        run.global_money = m;
    }
    if let Some(w) = args.workers {
        run.workers = w;
    }
    run
}

pub fn cmd_rewrite(args: &RewriteArgs) -> Result<()> {
    let manifest = WorkloadManifest::load(&args.manifest)?;
    let cfg = FileConfig::load(args.llm.config.as_deref())?;
    let run = apply_flags(args, &cfg);
    run.validate()?;
    let mode: MeasureMode = args.mode.or(cfg.mode).unwrap_or(ModeArg::Latency).into();
    let (backend, recorder) = make_backend(&args.llm, &cfg)?;
    let llm = make_gateway(backend, &cfg);
    let embedder = cfg.embedder()?;
    let (bench, samples) = prepare_databases(&cfg, &manifest)?;
    let evaluator = Evaluator::new(bench, samples, cfg.cache_reset(), cfg.evaluator_config(mode, run.theta));
    let repo_path = args.repo.clone().or_else(|| cfg.repo.clone());
    let mut repo = match &repo_path {
        Some(p) => RuleRepository::load(p, embedder.dim())?,
        None => RuleRepository::new(embedder.dim()),
    };
    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| manifest.path.parent().unwrap_or(Path::new(".")).to_path_buf());
    std::fs::create_dir_all(&out_dir)?;

    let bench = Workbench::new(&llm, embedder.as_ref(), &evaluator, run);
    let output = bench.rewrite_workload(manifest.queries(), &mut repo)?;

    if let Some(p) = &repo_path {
        repo.save(p)?;
    }
    if let Some((rec, path)) = recorder {
        rec.write_transcript(&path)?;
    }
    std::fs::write(out_dir.join("report.json"), output.report.to_json())?;
    std::fs::write(out_dir.join("report.md"), output.report.to_markdown())?;
    for (o, (_, src)) in output.outcomes.iter().zip(&manifest.entries) {
        if o.accepted {
            let dir = src.parent().unwrap_or(Path::new("."));
            let mut sql = o.rewrite.sql.trim_end().to_string();
            sql.push_str(";\n");
            std::fs::write(dir.join(format!("{}.rewritten.sql", o.query.id)), sql)?;
        }
    }
    let accepted = output.report.accepted().count();
    println!(
        "{} of {} queries rewritten in {} rounds; report in {}",
        accepted,
        output.outcomes.len(),
        output.report.rounds.len(),
        out_dir.join("report.json").display()
    );
    Ok(())
}

fn repo_dim(config: Option<&Path>) -> Result<usize> {
    Ok(FileConfig::load(config)?.embedding.dim)
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("repository file {} does not exist", path.display())))
    }
}

pub fn inspect_text(repo: &RuleRepository) -> String {
    let stats = repo.stats();
    let mut out = format!(
        "{} rules, {} groups, {} parked, {} query records\n",
        stats.rules, stats.groups, stats.parked, stats.query_records
    );
    for g in &stats.group_details {
        out.push_str(&format!(
            "{}\tsize={}\tobservations={}\tbenefit={:.6}\t{}\n",
            g.group_id, g.size, g.observations, g.benefit, g.representative
        ));
    }
    out
}

pub fn cmd_repo(action: &RepoAction) -> Result<()> {
    match action {
        RepoAction::Export { repo, out, config } => {
            require_file(repo)?;
            let r = RuleRepository::load(repo, repo_dim(config.as_deref())?)?;
            r.save(out)?;
            println!("exported {} rules to {}", r.rules().len(), out.display());
        }
        RepoAction::Import { repo, file, llm } => {
            let cfg = FileConfig::load(llm.config.as_deref())?;
            let embedder = cfg.embedder()?;
            require_file(file)?;
            let other = RuleRepository::load(file, embedder.dim())?;
            let mut local = RuleRepository::load(repo, embedder.dim())?;
            let (backend, recorder) = make_backend(llm, &cfg)?;
            let gw = make_gateway(backend, &cfg);
            let n = local.import(&RepoServices::new(embedder.as_ref(), &gw), &other)?;
            local.save(repo)?;
            if let Some((rec, path)) = recorder {
                rec.write_transcript(&path)?;
            }
            println!("imported {n} rules; repository now has {} groups", local.groups().len());
        }
        RepoAction::Inspect { path, config } => {
            require_file(path)?;
            let r = RuleRepository::load(path, repo_dim(config.as_deref())?)?;
            print!("{}", inspect_text(&r));
        }
    }
    Ok(())
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Rewrite(a) => cmd_rewrite(a),
        Command::Repo { action } => cmd_repo(action),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
