//! Language-based reranking of coarse retrieval candidates.
//!
//! For each query, a multimodal model describes how every candidate differs
//! from the query image; a second prompt reasons over all descriptions and
//! ends with a `FINAL_RANKING:` line. Responses are cached by content hash
//! so reruns are free and reproducible, and mock backends stand in for the
//! model in offline runs.

pub mod cache;
pub mod client;
pub mod error;
pub mod http;
pub mod limiter;
pub mod mock;
pub mod prompt;
pub mod ranking;
pub mod refine;
pub mod request;

pub use cache::{cache_key, ResponseCache, Usage};
pub use client::{Completion, MllmBackend, MllmClient, MllmClientConfig, Response};
pub use error::{Error, Result, TransportError};
pub use http::HttpBackend;
pub use limiter::{Clock, FakeClock, RateLimiter, SystemClock};
pub use mock::{MockBackend, MockMode, Transcript, TranscriptEntry};
pub use prompt::{PromptComponents, PromptTemplate, SceneKind, TemplateSet};
pub use ranking::{parse_final_ranking, resolve_ranking, ParseFailure, ParseStatus, RerankResult};
pub use refine::{
    describe_delta, refine_query, rerank, rerank_prompt, PairDescription, QueryRefinement,
};
pub use request::{
    build_pair_prompt, prepare_image, EncodedImage, MllmRequest, PromptContent, RequestContext,
};
