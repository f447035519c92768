//! Extraction of the final ranking line from free-form model output.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::RANKING_MARKER;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ParseFailure {
    #[error("no ranking line")]
    NoRankingLine,
    #[error("ranking is not a permutation of 1..={k}")]
    NotAPermutation { k: usize },
}

/// Reads the last line carrying the ranking marker followed by a list of
/// integers and accepts it only if it is a permutation of `1..=k`.
///
/// Markdown emphasis around the marker or list and one trailing period are
/// tolerated. Lines where the marker is followed by anything other than an
/// integer list are ignored.
pub fn parse_final_ranking(text: &str, k: usize) -> Result<Vec<usize>, ParseFailure> {
    let ranking = text
        .lines()
        .rev()
        .find_map(ranking_on_line)
        .ok_or(ParseFailure::NoRankingLine)?;
    if k == 0 || ranking.len() != k {
        return Err(ParseFailure::NotAPermutation { k });
    }
    let mut seen = vec![false; k];
    let mut order = Vec::with_capacity(k);
    for n in ranking {
        if n == 0 || n > k as u64 || seen[n as usize - 1] {
            return Err(ParseFailure::NotAPermutation { k });
        }
        seen[n as usize - 1] = true;
        order.push(n as usize);
    }
    Ok(order)
}

fn ranking_on_line(line: &str) -> Option<Vec<u64>> {
    let (_, rest) = line.rsplit_once(RANKING_MARKER)?;
    let rest = rest
        .trim()
        .trim_matches(|c| c == '*' || c == '`' || c == '_')
        .trim();
    let rest = rest.strip_suffix('.').unwrap_or(rest).trim_end();
    if rest.is_empty() {
        return None;
    }
    let mut out = Vec::new();
    for chunk in rest.split(',') {
        let mut tokens = chunk.split_whitespace().peekable();
        tokens.peek()?;
        for token in tokens {
            if !token.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            // Overlong numbers are out of range rather than unparseable.
            out.push(token.parse().unwrap_or(u64::MAX));
        }
    }
    Some(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Parsed,
    FallbackCoarse,
}

/// Final order for one query with the model's full reasoning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankResult {
    pub query_id: String,
    pub order: Vec<String>,
    pub rationale: String,
    pub parse_status: ParseStatus,
}

/// Applies the model's ranking to the coarse candidates, keeping the coarse
/// order when the output cannot be parsed.
pub fn resolve_ranking(query_id: &str, text: &str, coarse: &[String]) -> RerankResult {
    let (order, parse_status) = match parse_final_ranking(text, coarse.len()) {
        Ok(perm) => (
            perm.iter().map(|&i| coarse[i - 1].clone()).collect(),
            ParseStatus::Parsed,
        ),
        Err(_) => (coarse.to_vec(), ParseStatus::FallbackCoarse),
    };
    RerankResult {
        query_id: query_id.to_string(),
        order,
        rationale: text.to_string(),
        parse_status,
    }
}
