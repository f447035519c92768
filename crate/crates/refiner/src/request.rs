//! Model-agnostic request content and image preparation.

use std::io::Cursor;

use base64::Engine;
use image::imageops::FilterType;
use image::ImageFormat;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::prompt::PromptTemplate;

pub const DEFAULT_IMAGE_MAX_SIDE: u32 = 768;

/// An image ready for transmission: RGB, PNG-encoded, bounded in size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedImage {
    pub png: Vec<u8>,
    pub width: u32,
    pub height: u32,
}

impl EncodedImage {
    pub fn sha256(&self) -> [u8; 32] {
        Sha256::digest(&self.png).into()
    }

    pub fn data_uri(&self) -> String {
        format!(
            "data:image/png;base64,{}",
            base64::engine::general_purpose::STANDARD.encode(&self.png)
        )
    }
}

/// Decodes `bytes`, shrinks so the longer side is at most `max_side`
/// (aspect preserved, never upscaled) and re-encodes as PNG.
pub fn prepare_image(bytes: &[u8], max_side: u32, label: &str) -> Result<EncodedImage> {
    let decoded = image::load_from_memory(bytes).map_err(|e| Error::ImageDecode {
        path: label.to_string(),
        reason: e.to_string(),
    })?;
    let resized = if decoded.width().max(decoded.height()) > max_side {
        decoded.resize(max_side, max_side, FilterType::Triangle)
    } else {
        decoded
    };
    let rgb = image::DynamicImage::ImageRgb8(resized.to_rgb8());
    let mut png = Vec::new();
    rgb.write_to(&mut Cursor::new(&mut png), ImageFormat::Png)
        .map_err(|e| Error::ImageEncode(e.to_string()))?;
    Ok(EncodedImage {
        png,
        width: rgb.width(),
        height: rgb.height(),
    })
}

/// Text plus images, in the order they are sent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptContent {
    pub text: String,
    pub images: Vec<EncodedImage>,
}

/// What a request is about. Mock backends answer from this; it is not sent
/// over the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RequestContext {
    Describe {
        query_id: String,
        candidate_id: String,
        coarse_rank: usize,
    },
    Rerank {
        query_id: String,
        candidate_ids: Vec<String>,
    },
}

impl RequestContext {
    pub fn query_id(&self) -> &str {
        match self {
            RequestContext::Describe { query_id, .. } | RequestContext::Rerank { query_id, .. } => {
                query_id
            }
        }
    }

    /// Stable identity folded into the cache key.
    pub(crate) fn subject(&self) -> String {
        match self {
            RequestContext::Describe {
                query_id,
                candidate_id,
                ..
            } => format!("describe\n{query_id}\n{candidate_id}"),
            RequestContext::Rerank {
                query_id,
                candidate_ids,
            } => format!("rerank\n{query_id}\n{}", candidate_ids.join("\n")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MllmRequest {
    pub content: PromptContent,
    pub context: RequestContext,
}

/// Description prompt for one query/candidate pair, query image first.
pub fn build_pair_prompt(
    template: &PromptTemplate,
    query_image: &[u8],
    candidate_image: &[u8],
    max_side: u32,
) -> Result<PromptContent> {
    template.validate()?;
    Ok(PromptContent {
        text: template.description_prompt_text.clone(),
        images: vec![
            prepare_image(query_image, max_side, "query")?,
            prepare_image(candidate_image, max_side, "candidate")?,
        ],
    })
}
