use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context as _, Result};
use clap::Args;
use serde::Serialize;
use sha2::{Digest, Sha256};

use webrecycle::analysis::{
    categorize_operations, emit_report, length_ratio_distribution, score_histogram, similarity_histogram,
    structure_distribution, svg_charts, KeywordTable, Report, ReportFormat, ReportHeader, DEFAULT_RATIO_BIN,
    DEFAULT_SIMILARITY_BIN,
};
use webrecycle::bertscore::text_similarity;
use webrecycle::clients::{
    classify_structure, extract_operations, judge_structure, score_dataman, JudgeCache, Operation, ServiceClient,
    ServiceEmbedder, ServiceKind, RECYCLED_SUFFIX,
};
use webrecycle::corpus::{Document, Pool};
use webrecycle::reward::{evaluate_pair, write_breakdowns, DataManDelta, PairSignals, RewardBreakdown, StructureVerdict};

use crate::commands::{write, Context};

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Organic pool the recycled documents were made from.
    #[arg(long)]
    pub organic: PathBuf,
    /// Recycled pool; each document names its organic parent.
    #[arg(long)]
    pub recycled: PathBuf,
    /// Analyze a seeded sample of this many pairs instead of all of them.
    #[arg(long)]
    pub sample: Option<usize>,
    /// Run identifier written into the report header.
    #[arg(long)]
    pub run_id: Option<String>,
    #[arg(long, default_value_t = DEFAULT_SIMILARITY_BIN)]
    pub similarity_bin: f64,
    #[arg(long, default_value_t = DEFAULT_RATIO_BIN)]
    pub ratio_bin: f64,
}

struct Clients {
    dataman: ServiceClient,
    embed: ServiceClient,
    structure: ServiceClient,
    classify: ServiceClient,
}

struct PairResult {
    score_organic: u8,
    score_recycled: u8,
    similarity: f64,
    verdict: StructureVerdict,
    class_organic: String,
    class_recycled: String,
    operations: Vec<Operation>,
    lengths: (u64, u64),
    breakdown: RewardBreakdown,
}

#[derive(Serialize)]
struct PairFailure<'a> {
    organic_id: &'a str,
    recycled_id: &'a str,
    error: String,
}

fn parent_id(doc: &Document) -> String {
    match doc.extra.get("organic_id").and_then(|v| v.as_str()) {
        Some(id) => id.to_string(),
        None => doc.id.strip_suffix(RECYCLED_SUFFIX).unwrap_or(&doc.id).to_string(),
    }
}

fn sample_key(seed: u64, id: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    h.finalize().into()
}

fn run_id(ctx: &Context, org: &Pool, rec: &Pool, sample: Option<usize>) -> String {
    let mut h = Sha256::new();
    h.update(ctx.config.digest().as_bytes());
    for p in [org, rec] {
        h.update(serde_json::to_vec(p.manifest()).expect("manifest serializes"));
    }
    h.update(ctx.config.seed.to_le_bytes());
    h.update(format!("{sample:?}").as_bytes());
    hex::encode(&h.finalize()[..8])
}

fn analyze_pair(ctx: &Context, c: &Clients, cache: &JudgeCache, org: &Document, rec: &Document) -> Result<PairResult> {
    let cache = Some(cache);
    let score_organic = score_dataman(&c.dataman, cache, &org.text)?.overall;
    let score_recycled = score_dataman(&c.dataman, cache, &rec.text)?.overall;
    let embedder = ServiceEmbedder::new(&c.embed)?;
    let similarity = text_similarity(&org.text, &rec.text, &embedder)?.f1;
    let verdict = judge_structure(&c.structure, cache, &org.text, &rec.text)?;
    let class_organic = classify_structure(&c.classify, cache, &org.text)?;
    let class_recycled = classify_structure(&c.classify, cache, &rec.text)?;
    let operations = extract_operations(&c.classify, cache, &org.text, &rec.text)?;
    let lengths = (org.token_count, rec.token_count);
    let signals = PairSignals {
        quality_organic: f64::from(score_organic),
        quality_recycled: f64::from(score_recycled),
        similarity,
        structure: verdict,
        len_organic: lengths.0,
        len_recycled: lengths.1,
    };
    let breakdown = evaluate_pair(&org.id, &rec.id, &signals, &DataManDelta, &ctx.config.reward)?;
    Ok(PairResult {
        score_organic,
        score_recycled,
        similarity,
        verdict,
        class_organic,
        class_recycled,
        operations,
        lengths,
        breakdown,
    })
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> Option<f64> {
    let n = values.len();
    (n > 0).then(|| values.sum::<f64>() / n as f64)
}

pub fn run(ctx: &Context, a: AnalyzeArgs) -> Result<()> {
    let org = ctx.load(&a.organic)?;
    let rec = ctx.load(&a.recycled)?;
    let dir = ctx.out()?.to_path_buf();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let by_id: HashMap<&str, &Document> = org.documents().iter().map(|d| (d.id.as_str(), d)).collect();
    let mut pairs = Vec::new();
    let mut failures = Vec::new();
    for r in rec.documents() {
        let parent = parent_id(r);
        match by_id.get(parent.as_str()) {
            Some(o) => pairs.push((*o, r)),
            None => failures.push(PairFailure {
                organic_id: "",
                recycled_id: &r.id,
                error: format!("organic parent `{parent}` not found"),
            }),
        }
    }
    if let Some(n) = a.sample.filter(|&n| n < pairs.len()) {
        let seed = ctx.config.seed;
        pairs.sort_by_cached_key(|(o, _)| sample_key(seed, &o.id));
        pairs.truncate(n);
        pairs.sort_by(|x, y| x.1.id.cmp(&y.1.id));
    }
    if pairs.is_empty() {
        bail!("no organic/recycled pairs to analyze");
    }

    let clients = Clients {
        dataman: ctx.client(ServiceKind::ScoreDataman)?,
        embed: ctx.client(ServiceKind::Embed)?,
        structure: ctx.client(ServiceKind::JudgeStructure)?,
        classify: ctx.client(ServiceKind::Classify)?,
    };
    let cache_path = dir.join("judge_cache.jsonl");
    let cache = JudgeCache::load(&cache_path)?;
    let results = webrecycle::clients::map_bounded(&pairs, ctx.workers, |(o, r)| {
        analyze_pair(ctx, &clients, &cache, o, r)
    });
    cache.save(&cache_path)?;

    let mut ok = Vec::new();
    for ((o, r), res) in pairs.iter().zip(results) {
        match res {
            Ok(p) => ok.push(p),
            Err(e) => {
                log::warn!("pair `{}` / `{}` failed: {e:#}", o.id, r.id);
                failures.push(PairFailure {
                    organic_id: &o.id,
                    recycled_id: &r.id,
                    error: format!("{e:#}"),
                });
            }
        }
    }

    let mut report = Report::new(ReportHeader {
        run_id: a.run_id.clone().unwrap_or_else(|| run_id(ctx, &org, &rec, a.sample)),
        config_digest: ctx.config.digest(),
        counter: ctx.counter().to_string(),
    });
    let mut h = score_histogram(&ok.iter().map(|p| p.score_organic).collect::<Vec<_>>())?;
    h.name = "dataman_organic".into();
    report.histograms.push(h);
    let mut h = score_histogram(&ok.iter().map(|p| p.score_recycled).collect::<Vec<_>>())?;
    h.name = "dataman_recycled".into();
    report.histograms.push(h);
    let sims: Vec<f64> = ok.iter().map(|p| p.similarity).collect();
    let sim = similarity_histogram(&sims, a.similarity_bin)?;
    report.histograms.push(sim.histogram);
    let mut h = structure_distribution(&ok.iter().map(|p| p.class_organic.as_str()).collect::<Vec<_>>());
    h.name = "structure_organic".into();
    report.histograms.push(h);
    let mut h = structure_distribution(&ok.iter().map(|p| p.class_recycled.as_str()).collect::<Vec<_>>());
    h.name = "structure_recycled".into();
    report.histograms.push(h);
    let lengths: Vec<(u64, u64)> = ok.iter().map(|p| p.lengths).collect();
    let len = length_ratio_distribution(&lengths, ctx.config.reward.tau_length, a.ratio_bin)?;
    report.histograms.push(len.histogram);
    let ops = categorize_operations(
        &ok.iter().map(|p| p.operations.clone()).collect::<Vec<_>>(),
        KeywordTable::shipped(),
    );
    report.histograms.push(ops.histogram());

    report.summary("pairs", Some(ok.len() as f64));
    report.summary("failures", Some(failures.len() as f64));
    report.summary("mean_dataman_organic", mean(ok.iter().map(|p| f64::from(p.score_organic))));
    report.summary("mean_dataman_recycled", mean(ok.iter().map(|p| f64::from(p.score_recycled))));
    report.summary("mean_similarity", sim.mean);
    report.summary(
        "structure_preserved",
        mean(ok.iter().map(|p| f64::from(u8::from(p.verdict == StructureVerdict::Preserved)))),
    );
    report.summary("mean_length_ratio", len.mean_ratio);
    report.summary("length_within_tau", len.fraction_within);
    report.summary("operations_total", Some(ops.total_operations as f64));
    report.summary("mean_reward", mean(ok.iter().map(|p| p.breakdown.total)));

    for fmt in [ReportFormat::TableText, ReportFormat::Delimited] {
        write(&dir.join(format!("report.{}", fmt.extension())), &emit_report(&report, fmt))?;
    }
    write(&dir.join("report.svg"), &emit_report(&report, ReportFormat::Svg))?;
    for (name, bytes) in svg_charts(&report) {
        write(&dir.join(format!("{name}.svg")), &bytes)?;
    }
    let rows: Vec<RewardBreakdown> = ok.into_iter().map(|p| p.breakdown).collect();
    let mut buf = Vec::new();
    let rewards_path = dir.join("rewards.jsonl");
    write_breakdowns(&rows, &mut buf, &rewards_path)?;
    write(&rewards_path, &buf)?;
    let mut buf = String::new();
    for f in &failures {
        buf.push_str(&serde_json::to_string(f)?);
        buf.push('\n');
    }
    write(&dir.join("failures.jsonl"), buf.as_bytes())?;
    eprintln!("{}: {} pairs analyzed, {} failed", dir.display(), rows.len(), failures.len());
    Ok(())
}
