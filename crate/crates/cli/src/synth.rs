//! Deterministic synthetic world with a controlled coarse-retrieval mistake
//! rate.
//!
//! References sit on a square grid. Every query is taken a few meters from
//! its target reference, so the target is its only correct match. Query
//! descriptors are small perturbations of the target's. For a chosen share
//! of queries, two far-away references are overwritten with near-copies of
//! the query, which pushes the target down to coarse rank 3.
//!
//! Patch tokens are positive multiples of the CLS vector, so CLS and GeM
//! pooling yield the same direction.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vpr_core::{
    aggregate, build_index, feature_file_name, write_feature_file, write_manifest,
    AggregationConfig, EvalConfig, FeatureSet, ImageRecord, Pose, Split,
};
use vpr_refiner::{MockMode, TranscriptEntry};

use crate::config::{RefinerKind, RunConfig};

const ORIGIN_EASTING: f64 = 500_000.0;
const ORIGIN_NORTHING: f64 = 4_000_000.0;
/// Distractors are kept at least this far from their query.
const DISTRACTOR_MIN_M: f64 = 100.0;
const IMAGE_SIDE: u32 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_references: usize,
    pub n_queries: usize,
    /// Share of queries whose target is planted at coarse rank 3.
    pub rank3_fraction: f64,
    pub dim: usize,
    pub n_patches: usize,
    pub spacing_m: f64,
    /// Maximum offset of a query from its target.
    pub jitter_m: f64,
    /// Candidates per query in the generated run config and transcript.
    pub k: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_references: 2000,
            n_queries: 200,
            rank3_fraction: 0.4,
            dim: 64,
            n_patches: 4,
            spacing_m: 50.0,
            jitter_m: 5.0,
            k: 10,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub dir: PathBuf,
    pub n_references: usize,
    pub n_queries: usize,
    pub n_rank3: usize,
    /// Coarse R@1 implied by the construction.
    pub expected_coarse_r1: f64,
    pub config_path: PathBuf,
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Multiplies each component by `1 + scale * u`, u uniform in [-1, 1].
fn perturb(rng: &mut ChaCha8Rng, v: &[f64], scale: f64) -> Vec<f64> {
    unit(
        v.iter()
            .map(|x| x * (1.0 + scale * rng.random_range(-1.0..=1.0)))
            .collect(),
    )
}

fn utm(pose: &Pose) -> (f64, f64) {
    match *pose {
        Pose::Utm { easting, northing } => (easting, northing),
        Pose::Wgs84 { .. } => unreachable!("synthetic poses are planar"),
    }
}

fn planar_distance(a: &Pose, b: &Pose) -> f64 {
    let ((ax, ay), (bx, by)) = (utm(a), utm(b));
    (ax - bx).hypot(ay - by)
}

fn features(rng: &mut ChaCha8Rng, id: &str, v: &[f64], n_patches: usize) -> Result<FeatureSet> {
    let cls: Vec<f32> = v.iter().map(|&x| x as f32).collect();
    let mut patches = Vec::with_capacity(v.len() * n_patches);
    for _ in 0..n_patches {
        let c: f64 = rng.random_range(0.5..=2.0);
        patches.extend(v.iter().map(|&x| (c * x) as f32));
    }
    Ok(FeatureSet::new(id, v.len(), cls, patches)?)
}

fn write_image(path: &Path, pose: &Pose, seed: u8) -> Result<()> {
    let (e, n) = utm(pose);
    let img = image::RgbImage::from_fn(IMAGE_SIDE, IMAGE_SIDE, |x, y| {
        image::Rgb([
            (e as u64 % 251) as u8 ^ (x as u8 * 16),
            (n as u64 % 241) as u8 ^ (y as u8 * 16),
            seed,
        ])
    });
    img.save(path)
        .with_context(|| format!("writing {}", path.display()))
}

/// Writes `manifest.jsonl`, `features/`, `images/`, `transcript.jsonl` and
/// a ready-to-run `config.toml` into `dir`.
pub fn generate(dir: &Path, cfg: &SynthConfig) -> Result<SynthSummary> {
    let n_rank3 = (cfg.n_queries as f64 * cfg.rank3_fraction).round() as usize;
    ensure!(cfg.n_queries > 0, "need at least one query");
    ensure!(
        cfg.dim >= 2 && cfg.n_patches >= 1,
        "dim >= 2 and n_patches >= 1 required"
    );
    ensure!(
        (0.0..=1.0).contains(&cfg.rank3_fraction),
        "rank3_fraction must lie in [0, 1]"
    );
    ensure!(cfg.k >= 3, "k must be at least 3 to hold a rank-3 target");
    ensure!(
        cfg.n_queries + 2 * n_rank3 <= cfg.n_references,
        "not enough references for {} targets and {} distractors",
        cfg.n_queries,
        2 * n_rank3
    );
    let threshold = EvalConfig::default().threshold_m;
    ensure!(
        cfg.jitter_m <= threshold && cfg.spacing_m - cfg.jitter_m > threshold,
        "queries must lie within {threshold} m of their target and farther from every other reference"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cols = (cfg.n_references as f64).sqrt().ceil() as usize;
    let mut records = Vec::with_capacity(cfg.n_references + cfg.n_queries);
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_references + cfg.n_queries);
    for i in 0..cfg.n_references {
        let pose = Pose::Utm {
            easting: ORIGIN_EASTING + cfg.spacing_m * (i % cols) as f64,
            northing: ORIGIN_NORTHING + cfg.spacing_m * (i / cols) as f64,
        };
        records.push(ImageRecord {
            id: format!("r{i:05}"),
            path: format!("images/r{i:05}.png").into(),
            split: Split::Reference,
            pose,
        });
        vectors.push(unit(
            (0..cfg.dim).map(|_| rng.random_range(0.05..1.0)).collect(),
        ));
    }

    let mut order: Vec<usize> = (0..cfg.n_references).collect();
    order.shuffle(&mut rng);
    let targets: Vec<usize> = order[..cfg.n_queries].to_vec();
    let mut spare: Vec<usize> = order[cfg.n_queries..].to_vec();
    let mut planted = vec![false; cfg.n_queries];
    for p in planted.iter_mut().take(n_rank3) {
        *p = true;
    }
    planted.shuffle(&mut rng);

    let mut transcript_plan = Vec::with_capacity(cfg.n_queries);
    for (j, &t) in targets.iter().enumerate() {
        let (te, tn) = utm(&records[t].pose);
        let r = cfg.jitter_m * rng.random_range(0.0f64..=1.0).sqrt();
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let pose = Pose::Utm {
            easting: te + r * theta.cos(),
            northing: tn + r * theta.sin(),
        };
        let q = perturb(&mut rng, &vectors[t], 0.05);
        if planted[j] {
            for _ in 0..2 {
                let pos = spare
                    .iter()
                    .position(|&s| planar_distance(&records[s].pose, &pose) >= DISTRACTOR_MIN_M)
                    .context("ran out of distractor references")?;
                let s = spare.swap_remove(pos);
                vectors[s] = perturb(&mut rng, &q, 0.002);
            }
        }
        records.push(ImageRecord {
            id: format!("q{j:04}"),
            path: format!("images/q{j:04}.png").into(),
            split: Split::Query,
            pose,
        });
        vectors.push(q);
        transcript_plan.push((cfg.n_references + j, t, if planted[j] { 3 } else { 1 }));
    }

    let features_dir = dir.join("features");
    let images_dir = dir.join("images");
    for d in [&features_dir, &images_dir] {
        std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let mut feature_sets = Vec::with_capacity(records.len());
    for (i, (record, v)) in records.iter().zip(&vectors).enumerate() {
        let fs = features(&mut rng, &record.id, v, cfg.n_patches)?;
        write_feature_file(&fs, features_dir.join(feature_file_name(&record.id)))?;
        write_image(&dir.join(&record.path), &record.pose, (i % 256) as u8)?;
        feature_sets.push(fs);
    }
    write_manifest(&records, dir.join("manifest.jsonl"))?;

    // Check the planted ranks through the real aggregation and search path.
    let mut transcript = String::new();
    for agg in [AggregationConfig::default(), AggregationConfig::cls()] {
        let index = build_index(
            feature_sets[..cfg.n_references]
                .iter()
                .map(|f| aggregate::<f32>(f, &agg))
                .collect::<vpr_core::Result<Vec<_>>>()?,
        )?;
        for &(qi, t, rank) in &transcript_plan {
            let query = aggregate::<f32>(&feature_sets[qi], &agg)?;
            let found = index.retrieve_topk(&query, cfg.k)?;
            let got = found
                .ids()
                .position(|id| id == records[t].id)
                .map(|p| p + 1);
            if got != Some(rank) {
                bail!(
                    "{}: target {} landed at coarse rank {got:?} under {}, planned {rank}",
                    records[qi].id,
                    records[t].id,
                    agg.aggregation()
                );
            }
            if agg == AggregationConfig::default() {
                transcript.push_str(&transcript_lines(
                    &records,
                    qi,
                    &found.ids().collect::<Vec<_>>(),
                    t,
                )?);
            }
        }
    }
    std::fs::write(dir.join("transcript.jsonl"), transcript)?;

    let run = RunConfig {
        manifest: "manifest.jsonl".into(),
        features_dir: "features".into(),
        out_dir: "out".into(),
        k: cfg.k,
        refiner: RefinerKind::Mock(MockMode::DistanceOracle),
        transcript: Some("transcript.jsonl".into()),
        eval: EvalConfig {
            ks: vec![1, 5, 10].into_iter().filter(|&k| k <= cfg.k).collect(),
            ..EvalConfig::default()
        },
        ..RunConfig::default()
    };
    let config_path = dir.join("config.toml");
    std::fs::write(&config_path, run.to_toml())?;

    Ok(SynthSummary {
        dir: dir.to_path_buf(),
        n_references: cfg.n_references,
        n_queries: cfg.n_queries,
        n_rank3,
        expected_coarse_r1: (cfg.n_queries - n_rank3) as f64 / cfg.n_queries as f64,
        config_path,
    })
}

/// Recorded answers that describe each pair and rank the target first.
fn transcript_lines(
    records: &[ImageRecord],
    qi: usize,
    coarse: &[&str],
    target: usize,
) -> Result<String> {
    let query = &records[qi];
    let mut out = String::new();
    let mut ranking = Vec::with_capacity(coarse.len());
    for (pos, &id) in coarse.iter().enumerate() {
        let same = id == records[target].id;
        let text = if same {
            "SIMILARITIES:\n- the same storefront and street layout\nDISSIMILARITIES:\n- a slightly shifted viewpoint"
        } else {
            "SIMILARITIES:\n- a similar building style\nDISSIMILARITIES:\n- different signage and a different street layout"
        };
        let entry = TranscriptEntry::Describe {
            query_id: query.id.clone(),
            candidate_id: id.to_string(),
            text: text.into(),
        };
        out.push_str(&serde_json::to_string(&entry)?);
        out.push('\n');
        if same {
            ranking.insert(0, pos + 1);
        } else {
            ranking.push(pos + 1);
        }
    }
    let list: Vec<String> = ranking.iter().map(usize::to_string).collect();
    let entry = TranscriptEntry::Rerank {
        query_id: query.id.clone(),
        text: format!(
            "Only one candidate shows the same storefront.\nFINAL_RANKING: {}",
            list.join(", ")
        ),
    };
    out.push_str(&serde_json::to_string(&entry)?);
    out.push('\n');
    Ok(out)
}
