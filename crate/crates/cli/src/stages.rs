//! Pipeline stages. Each reads its inputs from disk and writes one
//! self-describing output file, so any stage can be rerun on its own.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use vpr_core::{
    aggregate, build_index, feature_file_name, load_index, load_manifest, read_feature_file,
    recall_at_k, save_index, subsample_queries, Aggregation, Descriptor, EvalReport, ImageRecord,
    Index, PoseTable, RankedList, RankingMethod, Split,
};
use vpr_refiner::{
    refine_query, HttpBackend, MllmBackend, MllmClient, MockBackend, MockMode, ParseStatus,
    PromptTemplate, TemplateSet, Transcript,
};

use crate::config::{RefinerKind, RunConfig};

pub const RETRIEVAL_FORMAT: &str = "vpr-retrieval";
pub const RERANK_FORMAT: &str = "vpr-rerank";
pub const STAGE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalHeader {
    pub format: String,
    pub version: u32,
    pub aggregation: Aggregation,
    pub k: usize,
    pub n_queries: usize,
    pub n_references: usize,
    pub subsample_n: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoredCandidate {
    pub rank: usize,
    pub image_id: String,
    pub score: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalRecord {
    pub query_id: String,
    pub candidates: Vec<ScoredCandidate>,
}

impl RetrievalRecord {
    pub fn ids(&self) -> Vec<String> {
        self.candidates.iter().map(|c| c.image_id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerankHeader {
    pub format: String,
    pub version: u32,
    pub refiner: String,
    pub model_id: String,
    pub n_queries: usize,
    pub n_parsed: usize,
    pub n_fallback: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerankRecord {
    pub query_id: String,
    pub order: Vec<String>,
    pub parse_status: ParseStatus,
    /// Relative to the output directory.
    pub rationale_path: String,
}

/// Writes a header line and one line per record in a single write.
pub fn write_jsonl<H: Serialize, R: Serialize>(
    path: &Path,
    header: &H,
    records: &[R],
) -> Result<()> {
    let mut out = serde_json::to_string(header)?;
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn read_jsonl<H: DeserializeOwned, R: DeserializeOwned>(path: &Path) -> Result<(H, Vec<R>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or_else(|| anyhow!("{}: empty file", path.display()))?;
    let header = serde_json::from_str(first)
        .with_context(|| format!("{}: bad header, line 1", path.display()))?;
    let records = lines
        .map(|(i, l)| {
            serde_json::from_str(l)
                .with_context(|| format!("{}: bad record, line {}", path.display(), i + 1))
        })
        .collect::<Result<Vec<R>>>()?;
    Ok((header, records))
}

pub fn read_retrieval(path: &Path) -> Result<(RetrievalHeader, Vec<RetrievalRecord>)> {
    let (header, records): (RetrievalHeader, _) = read_jsonl(path)?;
    ensure!(
        header.format == RETRIEVAL_FORMAT && header.version == STAGE_VERSION,
        "{}: not a {RETRIEVAL_FORMAT} v{STAGE_VERSION} file",
        path.display()
    );
    Ok((header, records))
}

pub fn read_rerank(path: &Path) -> Result<(RerankHeader, Vec<RerankRecord>)> {
    let (header, records): (RerankHeader, _) = read_jsonl(path)?;
    ensure!(
        header.format == RERANK_FORMAT && header.version == STAGE_VERSION,
        "{}: not a {RERANK_FORMAT} v{STAGE_VERSION} file",
        path.display()
    );
    Ok((header, records))
}

fn pool(config: &RunConfig) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = config.workers {
        builder = builder.num_threads(n);
    }
    Ok(builder.build()?)
}

fn manifest(config: &RunConfig) -> Result<Vec<ImageRecord>> {
    load_manifest(&config.manifest)
        .with_context(|| format!("loading manifest {}", config.manifest.display()))
}

fn feature_path(config: &RunConfig, id: &str) -> PathBuf {
    config.features_dir.join(feature_file_name(id))
}

/// Reads and pools one image's features under the configured aggregation.
pub fn descriptor_for(config: &RunConfig, id: &str) -> Result<Descriptor> {
    let path = feature_path(config, id);
    let features = read_feature_file(&path)
        .with_context(|| format!("features for {id} ({})", path.display()))?;
    ensure!(
        features.image_id == id,
        "{} holds features for {:?}, expected {id:?}",
        path.display(),
        features.image_id
    );
    aggregate(&features, &config.aggregation).with_context(|| format!("aggregating {id}"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexSummary {
    pub path: PathBuf,
    pub count: usize,
    pub dim: usize,
}

pub fn cmd_index(config: &RunConfig) -> Result<IndexSummary> {
    config.validate()?;
    let records = manifest(config)?;
    let refs: Vec<&ImageRecord> = records
        .iter()
        .filter(|r| r.split == Split::Reference)
        .collect();
    ensure!(!refs.is_empty(), "manifest has no reference images");
    let descriptors = pool(config)?.install(|| {
        refs.par_iter()
            .map(|r| descriptor_for(config, &r.id))
            .collect::<Result<Vec<_>>>()
    })?;
    let index = build_index(descriptors)?;
    fs::create_dir_all(&config.out_dir)
        .with_context(|| format!("creating {}", config.out_dir.display()))?;
    let path = config.index_path();
    save_index(&index, &path)?;
    log::info!("indexed {} references, dim {}", index.len(), index.dim());
    Ok(IndexSummary {
        path,
        count: index.len(),
        dim: index.dim(),
    })
}

pub fn cmd_retrieve(config: &RunConfig) -> Result<(RetrievalHeader, Vec<RetrievalRecord>)> {
    config.validate()?;
    let index: Index = load_index(config.index_path())
        .with_context(|| format!("loading index {}", config.index_path().display()))?;
    let records = manifest(config)?;
    let mut queries: Vec<&ImageRecord> =
        records.iter().filter(|r| r.split == Split::Query).collect();
    if let Some(n) = config.eval.subsample_n {
        queries = subsample_queries(&queries, n, config.eval.seed)?;
    }
    if queries.is_empty() {
        return Err(vpr_core::Error::EmptyQuerySet.into());
    }
    let results = pool(config)?.install(|| {
        queries
            .par_iter()
            .map(|q| {
                let desc = descriptor_for(config, &q.id)?;
                let found = index
                    .retrieve_topk(&desc, config.k)
                    .with_context(|| format!("retrieving for {}", q.id))?;
                Ok(RetrievalRecord {
                    query_id: q.id.clone(),
                    candidates: found
                        .candidates
                        .into_iter()
                        .map(|c| ScoredCandidate {
                            rank: c.rank,
                            image_id: c.image_id,
                            score: c.score,
                        })
                        .collect(),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let header = RetrievalHeader {
        format: RETRIEVAL_FORMAT.into(),
        version: STAGE_VERSION,
        aggregation: index.aggregation(),
        k: config.k,
        n_queries: results.len(),
        n_references: index.len(),
        subsample_n: config.eval.subsample_n,
        seed: config.eval.seed,
    };
    write_jsonl(&config.retrieval_path(), &header, &results)?;
    log::info!("retrieved top-{} for {} queries", config.k, results.len());
    Ok((header, results))
}

fn backend(
    config: &RunConfig,
    records: &[ImageRecord],
    retrieval: &[RetrievalRecord],
) -> Result<Box<dyn MllmBackend>> {
    Ok(match config.refiner {
        RefinerKind::Live => Box::new(HttpBackend::from_config(&config.client)?),
        RefinerKind::Mock(MockMode::Identity) => Box::new(MockBackend::identity()),
        RefinerKind::Mock(MockMode::DistanceOracle) => Box::new(MockBackend::distance_oracle(
            PoseTable::from_records(records),
        )?),
        RefinerKind::Mock(MockMode::SimilarityOracle) => {
            let index: Index = load_index(config.index_path())?;
            let mut descriptors = HashMap::new();
            for r in retrieval {
                descriptors.insert(r.query_id.clone(), descriptor_for(config, &r.query_id)?.vec);
                for c in &r.candidates {
                    let v = index
                        .get(&c.image_id)
                        .ok_or_else(|| anyhow!("{} is not in the index", c.image_id))?;
                    descriptors.insert(c.image_id.clone(), v.to_vec());
                }
            }
            Box::new(MockBackend::similarity_oracle(descriptors))
        }
        RefinerKind::Mock(MockMode::Scripted) => {
            let path = config
                .transcript
                .as_ref()
                .ok_or_else(|| anyhow!("mock:scripted needs a transcript file"))?;
            Box::new(MockBackend::scripted(Transcript::load(path)?))
        }
    })
}

pub fn prompt_template(config: &RunConfig) -> Result<PromptTemplate> {
    let set = match &config.templates_dir {
        Some(dir) => TemplateSet::with_overrides(dir)?,
        None => TemplateSet::builtin(),
    };
    Ok(PromptTemplate::compose(&set, config.scene, config.prompt)?)
}

/// File-name-safe form of an image id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineSummary {
    pub n_queries: usize,
    pub n_parsed: usize,
    pub n_fallback: usize,
    pub backend_calls: usize,
    pub cached_descriptions: usize,
}

pub fn cmd_refine(config: &RunConfig) -> Result<RefineSummary> {
    config.validate()?;
    let (_, retrieval) = read_retrieval(&config.retrieval_path())?;
    let records = manifest(config)?;
    let by_id: HashMap<&str, &ImageRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let lookup = |id: &str| {
        by_id
            .get(id)
            .copied()
            .ok_or_else(|| anyhow!("{id} is not in the manifest"))
    };
    let template = prompt_template(config)?;
    let mut client_config = config.client.clone();
    client_config.cache_dir = Some(config.cache_dir());
    let client = MllmClient::new(backend(config, &records, &retrieval)?, client_config)?;

    let refined = pool(config)?.install(|| {
        retrieval
            .par_iter()
            .map(|r| {
                let query = lookup(&r.query_id)?;
                let candidates = r
                    .candidates
                    .iter()
                    .map(|c| lookup(&c.image_id).cloned())
                    .collect::<Result<Vec<_>>>()?;
                refine_query(&client, &template, query, &candidates)
                    .with_context(|| format!("refining {}", r.query_id))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let artifacts = config.artifacts_dir();
    if artifacts.exists() {
        fs::remove_dir_all(&artifacts)
            .with_context(|| format!("clearing {}", artifacts.display()))?;
    }
    let mut rows = Vec::with_capacity(refined.len());
    let mut cached_descriptions = 0;
    for q in &refined {
        let stem = file_stem(&q.result.query_id);
        let dir = artifacts.join(&stem);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for d in &q.descriptions {
            cached_descriptions += usize::from(d.cached);
            let name = format!(
                "pair_{:02}_{}.txt",
                d.candidate_rank_in_coarse,
                file_stem(&d.candidate_id)
            );
            fs::write(dir.join(&name), &d.text)?;
        }
        fs::write(dir.join("rerank.txt"), &q.result.rationale)?;
        rows.push(RerankRecord {
            query_id: q.result.query_id.clone(),
            order: q.result.order.clone(),
            parse_status: q.result.parse_status,
            rationale_path: format!("artifacts/{stem}/rerank.txt"),
        });
    }
    let n_parsed = rows
        .iter()
        .filter(|r| r.parse_status == ParseStatus::Parsed)
        .count();
    let header = RerankHeader {
        format: RERANK_FORMAT.into(),
        version: STAGE_VERSION,
        refiner: config.refiner.to_string(),
        model_id: client.model_id().to_string(),
        n_queries: rows.len(),
        n_parsed,
        n_fallback: rows.len() - n_parsed,
    };
    write_jsonl(&config.rerank_path(), &header, &rows)?;
    log::info!(
        "refined {} queries ({} parsed, {} fallback), {} backend calls",
        rows.len(),
        n_parsed,
        rows.len() - n_parsed,
        client.backend_calls()
    );
    Ok(RefineSummary {
        n_queries: rows.len(),
        n_parsed,
        n_fallback: header.n_fallback,
        backend_calls: client.backend_calls(),
        cached_descriptions,
    })
}

pub fn report_path(config: &RunConfig, method: RankingMethod) -> PathBuf {
    config
        .out_dir
        .join(format!("eval_{}.jsonl", method.as_str()))
}

/// Scores the retrieval file and, if present, the rerank file.
pub fn cmd_eval(config: &RunConfig) -> Result<EvalReport> {
    config.validate()?;
    let (_, retrieval) = read_retrieval(&config.retrieval_path())?;
    if retrieval.is_empty() {
        return Err(vpr_core::Error::EmptyQuerySet.into());
    }
    let poses = PoseTable::from_records(&manifest(config)?);
    let coarse_lists: Vec<RankedList> = retrieval
        .iter()
        .map(|r| RankedList::new(r.query_id.clone(), r.ids()))
        .collect();
    let coarse = recall_at_k(&coarse_lists, &poses, &config.eval)?;

    let rerank_path = config.rerank_path();
    let (refined, n_parsed, n_fallback) = if rerank_path.exists() {
        let (header, rows) = read_rerank(&rerank_path)?;
        ensure!(
            rows.len() == retrieval.len(),
            "rerank file covers {} queries, retrieval file {}",
            rows.len(),
            retrieval.len()
        );
        let mut lists = Vec::with_capacity(rows.len());
        for (row, r) in rows.iter().zip(&retrieval) {
            ensure!(
                row.query_id == r.query_id,
                "rerank file lists {} where retrieval has {}; rerun refine",
                row.query_id,
                r.query_id
            );
            let coarse_ids: HashSet<&str> =
                r.candidates.iter().map(|c| c.image_id.as_str()).collect();
            let order_ids: HashSet<&str> = row.order.iter().map(String::as_str).collect();
            if row.order.len() != coarse_ids.len() || order_ids != coarse_ids {
                bail!(
                    "rerank order for {} is not a permutation of its candidates; rerun refine",
                    row.query_id
                );
            }
            lists.push(RankedList::new(row.query_id.clone(), row.order.clone()));
        }
        (
            Some(recall_at_k(&lists, &poses, &config.eval)?),
            header.n_parsed,
            header.n_fallback,
        )
    } else {
        (None, 0, 0)
    };

    let report = EvalReport {
        threshold_m: config.eval.threshold_m,
        ks: config.eval.ks.clone(),
        n_queries: retrieval.len(),
        n_parsed,
        n_fallback,
        coarse,
        refined,
    };
    for method in [RankingMethod::Coarse, RankingMethod::Refined] {
        if let Some(text) = report.to_jsonl(method) {
            let path = report_path(config, method);
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(report)
}

/// All stages in order; a failure names the stage.
pub fn cmd_run(config: &RunConfig) -> Result<EvalReport> {
    config.validate()?;
    cmd_index(config).context("index stage failed")?;
    cmd_retrieve(config).context("retrieve stage failed")?;
    cmd_refine(config).context("refine stage failed")?;
    cmd_eval(config).context("eval stage failed")
}
