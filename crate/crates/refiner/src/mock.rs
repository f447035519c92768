//! Deterministic stand-ins for a remote model.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use vpr_core::PoseTable;

use crate::client::{Completion, MllmBackend};
use crate::error::{Error, Result, TransportError};
use crate::prompt::{DISSIMILARITIES_HEADER, RANKING_MARKER, SIMILARITIES_HEADER};
use crate::request::{MllmRequest, RequestContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockMode {
    /// Keeps the coarse order.
    Identity,
    /// Ranks by true distance to the query, nearest first.
    DistanceOracle,
    /// Ranks by descriptor cosine similarity, highest first.
    SimilarityOracle,
    /// Replays a recorded transcript.
    Scripted,
}

impl MockMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MockMode::Identity => "identity",
            MockMode::DistanceOracle => "distance_oracle",
            MockMode::SimilarityOracle => "similarity_oracle",
            MockMode::Scripted => "scripted",
        }
    }
}

impl fmt::Display for MockMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MockMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(MockMode::Identity),
            "distance_oracle" => Ok(MockMode::DistanceOracle),
            "similarity_oracle" => Ok(MockMode::SimilarityOracle),
            "scripted" => Ok(MockMode::Scripted),
            other => Err(Error::InvalidConfig(format!("unknown mock mode {other:?}"))),
        }
    }
}

/// One recorded model answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TranscriptEntry {
    Describe {
        query_id: String,
        candidate_id: String,
        text: String,
    },
    Rerank {
        query_id: String,
        text: String,
    },
}

/// Recorded answers keyed by request subject.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    describe: HashMap<(String, String), String>,
    rerank: HashMap<String, String>,
}

impl Transcript {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// One JSON entry per line; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Self::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry =
                serde_json::from_str(line).map_err(|e| Error::Transcript {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            out.insert(entry).map_err(|reason| Error::Transcript {
                line: i + 1,
                reason,
            })?;
        }
        Ok(out)
    }

    pub fn insert(&mut self, entry: TranscriptEntry) -> std::result::Result<(), String> {
        match entry {
            TranscriptEntry::Describe {
                query_id,
                candidate_id,
                text,
            } => {
                let key = (query_id, candidate_id);
                if self.describe.contains_key(&key) {
                    return Err(format!("duplicate describe entry {}/{}", key.0, key.1));
                }
                self.describe.insert(key, text);
            }
            TranscriptEntry::Rerank { query_id, text } => {
                if self.rerank.contains_key(&query_id) {
                    return Err(format!("duplicate rerank entry {query_id}"));
                }
                self.rerank.insert(query_id, text);
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.describe.len() + self.rerank.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

enum Oracle {
    Identity,
    Distance(PoseTable),
    Similarity(HashMap<String, Vec<f32>>),
    Scripted(Transcript),
}

pub struct MockBackend {
    model_id: String,
    oracle: Oracle,
}

impl MockBackend {
    fn with(mode: MockMode, oracle: Oracle) -> Self {
        Self {
            model_id: format!("mock:{mode}"),
            oracle,
        }
    }

    pub fn identity() -> Self {
        Self::with(MockMode::Identity, Oracle::Identity)
    }

    pub fn distance_oracle(poses: PoseTable) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::MissingPose(
                "distance oracle needs ground-truth poses".into(),
            ));
        }
        Ok(Self::with(
            MockMode::DistanceOracle,
            Oracle::Distance(poses),
        ))
    }

    /// `descriptors` must cover every query and candidate that will be asked about.
    pub fn similarity_oracle(descriptors: HashMap<String, Vec<f32>>) -> Self {
        Self::with(MockMode::SimilarityOracle, Oracle::Similarity(descriptors))
    }

    pub fn scripted(transcript: Transcript) -> Self {
        Self::with(MockMode::Scripted, Oracle::Scripted(transcript))
    }

    /// Pair score and how it is phrased; higher means better match.
    fn score(
        &self,
        query: &str,
        candidate: &str,
    ) -> std::result::Result<(f64, String), TransportError> {
        let reject = |e: &dyn fmt::Display| TransportError::Rejected(e.to_string());
        match &self.oracle {
            Oracle::Distance(poses) => {
                let d = poses.distance(query, candidate).map_err(|e| reject(&e))?;
                Ok((-d, format!("the two views are {d:.2} m apart")))
            }
            Oracle::Similarity(desc) => {
                let get = |id: &str| {
                    desc.get(id)
                        .ok_or_else(|| reject(&Error::MissingDescriptor(id.into())))
                };
                let s = vpr_core::cosine_similarity(get(query)?, get(candidate)?)
                    .map_err(|e| reject(&e))?;
                Ok((s as f64, format!("descriptor similarity {s:.6}")))
            }
            Oracle::Identity | Oracle::Scripted(_) => Ok((0.0, "no measurement".into())),
        }
    }

    fn describe(
        &self,
        query: &str,
        candidate: &str,
    ) -> std::result::Result<String, TransportError> {
        if let Oracle::Scripted(t) = &self.oracle {
            return t
                .describe
                .get(&(query.to_string(), candidate.to_string()))
                .cloned()
                .ok_or_else(|| {
                    TransportError::Rejected(format!(
                        "transcript has no description for {query}/{candidate}"
                    ))
                });
        }
        let (_, note) = self.score(query, candidate)?;
        Ok(format!(
            "{SIMILARITIES_HEADER}\n- {} comparison of query {query} with candidate {candidate}: {note}\n{DISSIMILARITIES_HEADER}\n- none recorded",
            self.model_id
        ))
    }

    fn rerank(
        &self,
        query: &str,
        candidates: &[String],
    ) -> std::result::Result<String, TransportError> {
        if let Oracle::Scripted(t) = &self.oracle {
            return t.rerank.get(query).cloned().ok_or_else(|| {
                TransportError::Rejected(format!("transcript has no ranking for {query}"))
            });
        }
        let mut scored = Vec::with_capacity(candidates.len());
        for (i, c) in candidates.iter().enumerate() {
            scored.push((i + 1, self.score(query, c)?.0));
        }
        // Stable: equal scores keep their coarse order.
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        let list: Vec<String> = scored.iter().map(|(i, _)| i.to_string()).collect();
        Ok(format!(
            "Ranked {} candidates for query {query} with {}.\n{RANKING_MARKER} {}",
            candidates.len(),
            self.model_id,
            list.join(", ")
        ))
    }
}

impl MllmBackend for MockBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn needs_images(&self) -> bool {
        false
    }

    fn is_remote(&self) -> bool {
        false
    }

    fn complete(&self, request: &MllmRequest) -> std::result::Result<Completion, TransportError> {
        let text = match &request.context {
            RequestContext::Describe {
                query_id,
                candidate_id,
                ..
            } => self.describe(query_id, candidate_id)?,
            RequestContext::Rerank {
                query_id,
                candidate_ids,
            } => self.rerank(query_id, candidate_ids)?,
        };
        Ok(Completion { text, usage: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transcript_rejects_duplicates_with_line() {
        let text = r#"{"kind":"rerank","query_id":"q","text":"a"}

{"kind":"rerank","query_id":"q","text":"b"}"#;
        assert!(matches!(
            Transcript::parse(text),
            Err(Error::Transcript { line: 3, .. })
        ));
    }

    #[test]
    fn transcript_rejects_unknown_kind() {
        let text = r#"{"kind":"summary","query_id":"q","text":"a"}"#;
        assert!(matches!(
            Transcript::parse(text),
            Err(Error::Transcript { line: 1, .. })
        ));
    }

    #[test]
    fn distance_oracle_needs_poses() {
        assert!(matches!(
            MockBackend::distance_oracle(PoseTable::default()),
            Err(Error::MissingPose(_))
        ));
    }

    #[test]
    fn mode_names_roundtrip() {
        for m in [
            MockMode::Identity,
            MockMode::DistanceOracle,
            MockMode::SimilarityOracle,
            MockMode::Scripted,
        ] {
            assert_eq!(m.as_str().parse::<MockMode>().unwrap(), m);
        }
        assert!("oracle".parse::<MockMode>().is_err());
    }
}
