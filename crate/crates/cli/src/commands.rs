use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use clap::Args;

use webrecycle::analysis::{curve_jsonl, curve_svg};
use webrecycle::clients::{map_bounded, recycle_pool, score_dataman, JudgeCache, ServiceClient, ServiceEndpoint, ServiceKind};
use webrecycle::config::{BudgetStep, FilterStep, RunConfig};
use webrecycle::corpus::{ingest_path, load_pool, manifest_path_for, save_pool, Pool, PoolManifest, TokenCounter};
use webrecycle::filter::{assemble_final, budget_threshold, rl_data_filter, select_by_threshold_with, BudgetSpec, ScoreTable};
use webrecycle::grpo::{run_lab, TaskKind};
use webrecycle::Exec;

use crate::{analyze, Cli, Command, Global};

/// Settings shared by every command after flags and config are merged.
pub struct Context {
    pub config: RunConfig,
    pub exec: Exec,
    pub workers: usize,
    pub out: Option<PathBuf>,
}

impl Context {
    fn from_global(g: Global) -> Result<Self> {
        let mut config = match &g.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = g.seed {
            config.seed = seed;
            config.grpo.seed = seed;
        }
        if let Some(c) = &g.counter {
            config.counter = c.parse::<TokenCounter>()?;
        }
        for spec in &g.endpoints {
            config.set_endpoint(parse_endpoint(spec)?);
        }
        config.validate()?;

        let available = std::thread::available_parallelism().map_or(1, |n| n.get());
        let workers = match g.parallel {
            Some(0) => bail!("--parallel must be at least 1"),
            Some(n) => {
                // Ignore the error if a pool was already installed (tests).
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                n
            }
            None => available,
        };
        let exec = if workers > 1 { Exec::Parallel } else { Exec::Sequential };
        Ok(Context {
            config,
            exec,
            workers,
            out: g.out,
        })
    }

    pub fn out(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| anyhow!("--out is required for this command"))
    }

    pub fn counter(&self) -> TokenCounter {
        self.config.counter
    }

    pub fn client(&self, kind: ServiceKind) -> Result<ServiceClient> {
        let endpoint = self.config.endpoint(kind);
        ServiceClient::connect(endpoint).with_context(|| format!("connecting to the {kind} endpoint"))
    }

    /// Loads a pool written by an earlier stage, refusing to mix counters.
    pub fn load(&self, path: &Path) -> Result<Pool> {
        let sidecar = manifest_path_for(path);
        if sidecar.exists() {
            let stored = PoolManifest::read_from(&sidecar)?;
            if stored.counter != self.counter() {
                bail!(
                    "{} was counted with {}; rerun with --counter {}",
                    path.display(),
                    stored.counter,
                    stored.counter
                );
            }
        }
        let label = path.file_stem().map_or_else(|| "pool".into(), |s| s.to_string_lossy().into_owned());
        load_pool(path, self.counter(), &label).with_context(|| format!("loading {}", path.display()))
    }

    pub fn save(&self, pool: &Pool) -> Result<PathBuf> {
        let out = self.out()?.to_path_buf();
        ensure_parent(&out)?;
        save_pool(pool, &out)?;
        Ok(out)
    }
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

/// `KIND=TRANSPORT:ADDRESS`; the address may be empty for builtin.
pub fn parse_endpoint(spec: &str) -> Result<ServiceEndpoint> {
    let (kind, rest) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("endpoint `{spec}` is not KIND=TRANSPORT:ADDRESS"))?;
    let (transport, address) = rest.split_once(':').unwrap_or((rest, ""));
    Ok(ServiceEndpoint::new(kind.trim().parse()?, transport.trim().parse()?, address))
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Context::from_global(cli.global)?;
    match cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Score(a) => score(&ctx, a),
        Command::Filter(a) => filter(&ctx, a),
        Command::Recycle(a) => recycle(&ctx, a),
        Command::Assemble(a) => assemble(&ctx, a),
        Command::Analyze(a) => analyze::run(&ctx, a),
        Command::GrpoLab(a) => grpo_lab(&ctx, a),
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Line-delimited JSON records with `id` and `text`.
    #[arg(long)]
    pub input: PathBuf,
    /// Source label recorded in the manifest.
    #[arg(long, default_value = "organic")]
    pub label: String,
}

fn ingest(ctx: &Context, a: IngestArgs) -> Result<()> {
    let pool = ingest_path(&a.input, ctx.counter(), &a.label)?;
    let out = ctx.save(&pool)?;
    eprintln!("{}: {} documents, {} tokens", out.display(), pool.len(), pool.total_tokens());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub pool: PathBuf,
    /// Scorer name written into every record.
    #[arg(long, default_value = "dataman")]
    pub scorer: String,
    /// Judge reply cache (line-delimited); read if present, then updated.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

fn load_cache(path: Option<&Path>) -> Result<JudgeCache> {
    Ok(match path {
        Some(p) => JudgeCache::load(p)?,
        None => JudgeCache::new(),
    })
}

fn score(ctx: &Context, a: ScoreArgs) -> Result<()> {
    let pool = ctx.load(&a.pool)?;
    let client = ctx.client(ServiceKind::ScoreDataman)?;
    let cache = load_cache(a.cache.as_deref())?;
    let results = map_bounded(pool.documents(), ctx.workers, |d| score_dataman(&client, Some(&cache), &d.text));
    let mut table = ScoreTable::new(&a.scorer);
    for (doc, r) in pool.documents().iter().zip(results) {
        let s = r.with_context(|| format!("scoring `{}`", doc.id))?;
        table.insert(doc.id.clone(), f64::from(s.overall))?;
    }
    let out = ctx.out()?;
    ensure_parent(out)?;
    table.write_path(out)?;
    if let Some(p) = &a.cache {
        cache.save(p)?;
    }
    eprintln!("{}: {} scores", out.display(), table.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub pool: PathBuf,
    /// Score table (line-delimited `doc_id`, `scorer`, `value` records).
    #[arg(long)]
    pub scores: PathBuf,
    /// Which scorer's records to use.
    #[arg(long, default_value = "dataman")]
    pub scorer: String,
    /// Keep documents scoring at least this value.
    #[arg(long, conflicts_with_all = ["budget", "rl_data"])]
    pub tau: Option<f64>,
    /// Total token budget; the selection must supply budget minus the
    /// high-quality organic tokens.
    #[arg(long, conflicts_with = "rl_data")]
    pub budget: Option<u64>,
    /// High-quality organic token count for --budget.
    #[arg(long, conflicts_with = "org_hq")]
    pub org_hq_tokens: Option<u64>,
    /// High-quality organic pool whose token total is used for --budget.
    #[arg(long)]
    pub org_hq: Option<PathBuf>,
    /// Config step supplying the rule when neither --tau nor --budget is given.
    #[arg(long, default_value = "organic", value_parser = ["organic", "recycled"])]
    pub step: String,
    /// Keep documents whose DataMan score is below 5 (RL training data).
    #[arg(long)]
    pub rl_data: bool,
}

fn filter(ctx: &Context, a: FilterArgs) -> Result<()> {
    let pool = ctx.load(&a.pool)?;
    let scores = ScoreTable::read_path(&a.scores, &a.scorer)?;
    let out = if a.rl_data {
        rl_data_filter(&pool, &scores)?
    } else {
        let step = match (a.tau, a.budget) {
            (Some(t), _) => FilterStep {
                tau: Some(t),
                budget: None,
            },
            (None, Some(b)) => FilterStep {
                tau: None,
                budget: Some(BudgetStep {
                    total_budget: b,
                    org_hq_tokens: a.org_hq_tokens,
                }),
            },
            (None, None) if a.step == "recycled" => ctx.config.filter.recycled,
            (None, None) => ctx.config.filter.organic,
        };
        step.validate(&a.step)?;
        match (step.tau, step.budget) {
            (Some(tau), _) => select_by_threshold_with(&pool, &scores, tau, ctx.exec)?,
            (None, Some(b)) => {
                let org_hq_tokens = match (b.org_hq_tokens, &a.org_hq) {
                    (Some(n), _) => n,
                    (None, Some(p)) => ctx.load(p)?.total_tokens(),
                    (None, None) => bail!("--budget needs --org-hq-tokens or --org-hq"),
                };
                let spec = BudgetSpec::new(b.total_budget, org_hq_tokens)?;
                let sel = budget_threshold(&pool, &scores, spec.recycled_target())?;
                if sel.shortfall > 0 {
                    log::warn!("budget not met: {} tokens short", sel.shortfall);
                }
                sel.selected
            }
            (None, None) => unreachable!("validated"),
        }
    };
    let path = ctx.save(&out)?;
    eprintln!("{}: kept {} of {} documents, {} tokens", path.display(), out.len(), pool.len(), out.total_tokens());
    Ok(())
}

#[derive(Debug, Args)]
pub struct RecycleArgs {
    #[arg(long)]
    pub pool: PathBuf,
}

fn recycle(ctx: &Context, a: RecycleArgs) -> Result<()> {
    let pool = ctx.load(&a.pool)?;
    let client = ctx.client(ServiceKind::Rephrase)?;
    let out = recycle_pool(&pool, &client, ctx.config.chunk_tokens)?;
    let path = ctx.save(&out)?;
    let failed = out.manifest().failures.len();
    eprintln!("{}: {} rephrased, {failed} failed", path.display(), out.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct AssembleArgs {
    #[arg(long)]
    pub org_hq: PathBuf,
    #[arg(long)]
    pub rec_hq: PathBuf,
}

fn assemble(ctx: &Context, a: AssembleArgs) -> Result<()> {
    let org = ctx.load(&a.org_hq)?;
    let rec = ctx.load(&a.rec_hq)?;
    let out = assemble_final(&org, &rec)?;
    let path = ctx.save(&out)?;
    eprintln!(
        "{}: {} documents, {} tokens ({} organic + {} recycled)",
        path.display(),
        out.len(),
        out.total_tokens(),
        org.total_tokens(),
        rec.total_tokens()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct GrpoLabArgs {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// target-token or rephrase.
    #[arg(long, value_parser = ["target-token", "rephrase"])]
    pub task: Option<String>,
}

fn grpo_lab(ctx: &Context, a: GrpoLabArgs) -> Result<()> {
    let mut lab = ctx.config.grpo.clone();
    if let Some(s) = a.steps {
        lab.steps = s;
    }
    if let Some(lr) = a.learning_rate {
        lab.learning_rate = lr;
    }
    if let Some(t) = a.task.as_deref() {
        lab.task = if t == "rephrase" { TaskKind::Rephrase } else { TaskKind::TargetToken };
    }
    let run = run_lab(&lab, &ctx.config.reward, ctx.exec)?;
    let dir = ctx.out()?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write(&dir.join("curve.jsonl"), curve_jsonl(&run.curve).as_bytes())?;
    write(&dir.join("curve.svg"), curve_svg(&run.curve).as_bytes())?;
    let mut steps = String::new();
    for s in &run.steps {
        steps.push_str(&serde_json::to_string(s)?);
        steps.push('\n');
    }
    write(&dir.join("steps.jsonl"), steps.as_bytes())?;
    let (first, last) = (run.curve.first(), run.curve.last());
    if let (Some(f), Some(l)) = (first, last) {
        eprintln!(
            "validation reward {:.4} -> {:.4} over {} steps (attainable range {:?})",
            f.total, l.total, lab.steps, run.attainable_range
        );
    }
    Ok(())
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
