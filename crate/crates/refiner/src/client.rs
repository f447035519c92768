//! Backend-agnostic model client: cache, pacing and retries.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::cache::{cache_key, ResponseCache, Usage};
use crate::error::{Error, Result, TransportError};
use crate::limiter::{Clock, RateLimiter, SystemClock};
use crate::request::{MllmRequest, DEFAULT_IMAGE_MAX_SIDE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MllmClientConfig {
    pub base_url: String,
    pub model_id: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_s: f64,
    pub max_retries: usize,
    pub backoff_base_s: f64,
    pub max_requests_per_minute: usize,
    pub max_in_flight: usize,
    pub image_max_side: u32,
    pub cache_dir: Option<PathBuf>,
}

impl Default for MllmClientConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model_id: "gpt-4o".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_s: 120.0,
            max_retries: 3,
            backoff_base_s: 2.0,
            max_requests_per_minute: 60,
            max_in_flight: 4,
            image_max_side: DEFAULT_IMAGE_MAX_SIDE,
            cache_dir: None,
        }
    }
}

impl MllmClientConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return bad("timeout_s must be positive");
        }
        if !(self.backoff_base_s.is_finite() && self.backoff_base_s >= 0.0) {
            return bad("backoff_base_s must be non-negative");
        }
        if self.max_requests_per_minute == 0 {
            return bad("max_requests_per_minute must be positive");
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be positive");
        }
        if self.image_max_side == 0 {
            return bad("image_max_side must be positive");
        }
        if self.model_id.is_empty() {
            return bad("model_id is empty");
        }
        Ok(())
    }

    pub fn backoff(&self, attempt: usize) -> Duration {
        let factor = 2f64.powi(attempt.min(30) as i32);
        Duration::from_secs_f64(self.backoff_base_s * factor)
    }
}

/// One completion as returned by a backend.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Completion {
    pub text: String,
    pub usage: Option<Usage>,
}

/// Something that answers prompts: a remote model or a mock.
pub trait MllmBackend: Send + Sync {
    fn model_id(&self) -> &str;

    /// Whether requests must carry the pair images.
    fn needs_images(&self) -> bool {
        true
    }

    /// In-process backends are not paced by the rate limiter.
    fn is_remote(&self) -> bool {
        true
    }

    fn complete(&self, request: &MllmRequest) -> std::result::Result<Completion, TransportError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub text: String,
    pub model_id: String,
    pub cached: bool,
}

/// Shareable across threads; the cache and limiter are the only shared state.
pub struct MllmClient {
    backend: Box<dyn MllmBackend>,
    config: MllmClientConfig,
    cache: Option<ResponseCache>,
    limiter: RateLimiter,
    clock: Arc<dyn Clock>,
    backend_calls: AtomicUsize,
}

impl MllmClient {
    pub fn new(backend: Box<dyn MllmBackend>, config: MllmClientConfig) -> Result<Self> {
        Self::with_clock(backend, config, Arc::new(SystemClock::default()))
    }

    pub fn with_clock(
        backend: Box<dyn MllmBackend>,
        config: MllmClientConfig,
        clock: Arc<dyn Clock>,
    ) -> Result<Self> {
        config.validate()?;
        let cache = config
            .cache_dir
            .as_ref()
            .map(ResponseCache::open)
            .transpose()?;
        Ok(Self {
            limiter: RateLimiter::new(config.max_requests_per_minute, config.max_in_flight),
            backend,
            config,
            cache,
            clock,
            backend_calls: AtomicUsize::new(0),
        })
    }

    pub fn model_id(&self) -> &str {
        self.backend.model_id()
    }

    pub fn needs_images(&self) -> bool {
        self.backend.needs_images()
    }

    pub fn config(&self) -> &MllmClientConfig {
        &self.config
    }

    /// Requests that reached the backend, retries included.
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn complete(&self, request: &MllmRequest) -> Result<Response> {
        let model_id = self.backend.model_id().to_string();
        let key = self.cache.as_ref().map(|_| cache_key(&model_id, request));
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(text) = cache.get(key)? {
                cache.log(key, &model_id, true, None)?;
                return Ok(Response {
                    text,
                    model_id,
                    cached: true,
                });
            }
        }

        let completion = self.call_with_retries(request)?;
        if completion.text.trim().is_empty() {
            return Err(Error::EmptyResponse);
        }
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            cache.put(key, &completion.text)?;
            cache.log(key, &model_id, false, completion.usage)?;
        }
        Ok(Response {
            text: completion.text,
            model_id,
            cached: false,
        })
    }

    fn call_with_retries(&self, request: &MllmRequest) -> Result<Completion> {
        let mut attempt = 0;
        loop {
            let outcome = {
                let _permit = self
                    .backend
                    .is_remote()
                    .then(|| self.limiter.acquire(self.clock.as_ref()));
                self.backend_calls.fetch_add(1, Ordering::SeqCst);
                self.backend.complete(request)
            };
            let err = match outcome {
                Ok(c) => return Ok(c),
                Err(e) => e,
            };
            let attempts = attempt + 1;
            if !err.is_retryable() || attempt >= self.config.max_retries {
                return Err(if err.is_rate_limit() {
                    Error::RateLimited { attempts }
                } else {
                    Error::Transport {
                        attempts,
                        source: err,
                    }
                });
            }
            let wait = self.config.backoff(attempt);
            log::warn!("attempt {attempts} failed ({err}); retrying in {wait:?}");
            self.clock.sleep(wait);
            attempt += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limiter::FakeClock;
    use crate::request::{PromptContent, RequestContext};
    use std::sync::Mutex;

    struct Flaky {
        failures: Mutex<Vec<TransportError>>,
    }

    impl MllmBackend for Flaky {
        fn model_id(&self) -> &str {
            "flaky"
        }

        fn complete(&self, _: &MllmRequest) -> std::result::Result<Completion, TransportError> {
            match self.failures.lock().unwrap().pop() {
                Some(e) => Err(e),
                None => Ok(Completion {
                    text: "ok".into(),
                    usage: None,
                }),
            }
        }
    }

    fn request() -> MllmRequest {
        MllmRequest {
            content: PromptContent {
                text: "hi".into(),
                images: vec![],
            },
            context: RequestContext::Rerank {
                query_id: "q".into(),
                candidate_ids: vec!["a".into()],
            },
        }
    }

    fn client(failures: Vec<TransportError>, max_retries: usize) -> (MllmClient, Arc<FakeClock>) {
        let clock = Arc::new(FakeClock::new());
        let config = MllmClientConfig {
            max_retries,
            backoff_base_s: 0.5,
            ..Default::default()
        };
        let backend = Box::new(Flaky {
            failures: Mutex::new(failures),
        });
        (
            MllmClient::with_clock(backend, config, clock.clone()).unwrap(),
            clock,
        )
    }

    #[test]
    fn non_retryable_fails_immediately() {
        let (c, clock) = client(
            vec![TransportError::Status {
                code: 400,
                body: "bad".into(),
            }],
            3,
        );
        let err = c.complete(&request()).unwrap_err();
        assert!(matches!(err, Error::Transport { attempts: 1, .. }), "{err}");
        assert!(clock.sleeps().is_empty());
    }

    #[test]
    fn exhausted_429_is_rate_limited() {
        let busy = TransportError::Status {
            code: 429,
            body: String::new(),
        };
        let (c, clock) = client(vec![busy; 3], 2);
        assert!(matches!(
            c.complete(&request()),
            Err(Error::RateLimited { attempts: 3 })
        ));
        assert_eq!(
            clock.sleeps(),
            [Duration::from_millis(500), Duration::from_secs(1)]
        );
        assert_eq!(c.backend_calls(), 3);
    }

    #[test]
    fn invalid_limits_rejected() {
        let config = MllmClientConfig {
            max_in_flight: 0,
            ..Default::default()
        };
        assert!(config.validate().is_err());
    }
}
