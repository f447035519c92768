//! Describe each query/candidate pair, then rerank from the descriptions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vpr_core::ImageRecord;

use crate::client::MllmClient;
use crate::error::{Error, Result};
use crate::prompt::PromptTemplate;
use crate::ranking::{resolve_ranking, RerankResult};
use crate::request::{build_pair_prompt, MllmRequest, PromptContent, RequestContext};

/// Model text describing how one candidate differs from the query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairDescription {
    pub query_id: String,
    pub candidate_id: String,
    /// 1-based position in the coarse list.
    pub candidate_rank_in_coarse: usize,
    pub text: String,
    pub model_id: String,
    pub cached: bool,
}

fn read_image(record: &ImageRecord) -> Result<Vec<u8>> {
    std::fs::read(&record.path).map_err(|e| Error::io(&record.path, e))
}

pub fn describe_delta(
    client: &MllmClient,
    template: &PromptTemplate,
    query: &ImageRecord,
    candidate: &ImageRecord,
    candidate_rank_in_coarse: usize,
) -> Result<PairDescription> {
    let content = if client.needs_images() {
        build_pair_prompt(
            template,
            &read_image(query)?,
            &read_image(candidate)?,
            client.config().image_max_side,
        )
        .map_err(|e| match e {
            Error::ImageDecode { reason, .. } => Error::ImageDecode {
                path: format!("{} or {}", query.path.display(), candidate.path.display()),
                reason,
            },
            other => other,
        })?
    } else {
        template.validate()?;
        PromptContent {
            text: template.description_prompt_text.clone(),
            images: Vec::new(),
        }
    };
    let request = MllmRequest {
        content,
        context: RequestContext::Describe {
            query_id: query.id.clone(),
            candidate_id: candidate.id.clone(),
            coarse_rank: candidate_rank_in_coarse,
        },
    };
    let response = client.complete(&request)?;
    Ok(PairDescription {
        query_id: query.id.clone(),
        candidate_id: candidate.id.clone(),
        candidate_rank_in_coarse,
        text: response.text,
        model_id: response.model_id,
        cached: response.cached,
    })
}

/// Rerank instruction followed by the descriptions labeled in coarse order.
pub fn rerank_prompt(template: &PromptTemplate, descriptions: &[PairDescription]) -> String {
    let mut text = template.rerank_text(descriptions.len());
    for (i, d) in descriptions.iter().enumerate() {
        text.push_str(&format!("\n\nCandidate {}:\n{}", i + 1, d.text.trim()));
    }
    text
}

pub fn rerank(
    client: &MllmClient,
    template: &PromptTemplate,
    descriptions: &[PairDescription],
    coarse_order: &[String],
) -> Result<RerankResult> {
    let first = descriptions
        .first()
        .ok_or_else(|| Error::InvalidInput("no candidates".into()))?;
    if descriptions.len() != coarse_order.len() {
        return Err(Error::InvalidInput(format!(
            "{} descriptions for {} candidates",
            descriptions.len(),
            coarse_order.len()
        )));
    }
    for (i, (d, id)) in descriptions.iter().zip(coarse_order).enumerate() {
        if &d.candidate_id != id || d.query_id != first.query_id {
            return Err(Error::InvalidInput(format!(
                "description {} is for {}/{}, expected {}/{id}",
                i + 1,
                d.query_id,
                d.candidate_id,
                first.query_id
            )));
        }
    }
    let request = MllmRequest {
        content: PromptContent {
            text: rerank_prompt(template, descriptions),
            images: Vec::new(),
        },
        context: RequestContext::Rerank {
            query_id: first.query_id.clone(),
            candidate_ids: coarse_order.to_vec(),
        },
    };
    let response = client.complete(&request)?;
    Ok(resolve_ranking(
        &first.query_id,
        &response.text,
        coarse_order,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryRefinement {
    pub descriptions: Vec<PairDescription>,
    pub result: RerankResult,
}

/// Describes all pairs concurrently, then reranks once they are all in.
pub fn refine_query(
    client: &MllmClient,
    template: &PromptTemplate,
    query: &ImageRecord,
    candidates: &[ImageRecord],
) -> Result<QueryRefinement> {
    let descriptions = candidates
        .par_iter()
        .enumerate()
        .map(|(i, c)| describe_delta(client, template, query, c, i + 1))
        .collect::<Result<Vec<_>>>()?;
    let coarse: Vec<String> = candidates.iter().map(|c| c.id.clone()).collect();
    let result = rerank(client, template, &descriptions, &coarse)?;
    Ok(QueryRefinement {
        descriptions,
        result,
    })
}
