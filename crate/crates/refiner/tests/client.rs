use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use vpr_core::{ImageRecord, Pose, Split};
use vpr_refiner::{
    describe_delta, Clock, Completion, Error, FakeClock, MllmBackend, MllmClient, MllmClientConfig,
    MllmRequest, MockBackend, PromptContent, PromptTemplate, RequestContext, SystemClock,
    Transcript, TransportError,
};

fn record(id: &str) -> ImageRecord {
    ImageRecord {
        id: id.into(),
        path: format!("/nonexistent/{id}.png").into(),
        split: Split::Reference,
        pose: Pose::Utm {
            easting: 0.0,
            northing: 0.0,
        },
    }
}

fn request(i: usize) -> MllmRequest {
    MllmRequest {
        content: PromptContent {
            text: format!("prompt {i}"),
            images: vec![],
        },
        context: RequestContext::Rerank {
            query_id: format!("q{i}"),
            candidate_ids: vec!["a".into()],
        },
    }
}

/// Fails with the queued errors first, then answers.
struct Scripted {
    failures: Mutex<Vec<TransportError>>,
    calls: AtomicUsize,
}

impl Scripted {
    fn new(mut failures: Vec<TransportError>) -> Self {
        failures.reverse();
        Self {
            failures: Mutex::new(failures),
            calls: AtomicUsize::new(0),
        }
    }
}

impl MllmBackend for Scripted {
    fn model_id(&self) -> &str {
        "scripted-transport"
    }

    fn needs_images(&self) -> bool {
        false
    }

    fn complete(&self, request: &MllmRequest) -> Result<Completion, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match self.failures.lock().unwrap().pop() {
            Some(e) => Err(e),
            None => Ok(Completion {
                text: format!("answer to {}", request.content.text),
                usage: None,
            }),
        }
    }
}

fn config(max_retries: usize) -> MllmClientConfig {
    MllmClientConfig {
        max_retries,
        backoff_base_s: 1.0,
        ..Default::default()
    }
}

#[test]
fn two_failures_then_success_with_three_retries() {
    let clock = Arc::new(FakeClock::new());
    let backend = Scripted::new(vec![
        TransportError::Timeout,
        TransportError::Status {
            code: 503,
            body: "busy".into(),
        },
    ]);
    let client = MllmClient::with_clock(Box::new(backend), config(3), clock.clone()).unwrap();
    let r = client.complete(&request(0)).unwrap();
    assert_eq!(r.text, "answer to prompt 0");
    assert!(!r.cached);
    assert_eq!(client.backend_calls(), 3);
    assert_eq!(
        clock.sleeps(),
        [Duration::from_secs(1), Duration::from_secs(2)]
    );
}

#[test]
fn retries_exhausted_reports_transport_error() {
    let clock = Arc::new(FakeClock::new());
    let backend = Scripted::new(vec![TransportError::Timeout; 3]);
    let client = MllmClient::with_clock(Box::new(backend), config(2), clock).unwrap();
    let err = client.complete(&request(0)).unwrap_err();
    assert!(
        matches!(
            err,
            Error::Transport {
                attempts: 3,
                source: TransportError::Timeout
            }
        ),
        "{err}"
    );
}

#[test]
fn second_identical_call_is_served_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = MllmClientConfig {
        cache_dir: Some(dir.path().to_path_buf()),
        ..config(0)
    };
    let client = MllmClient::new(Box::new(Scripted::new(vec![])), cfg.clone()).unwrap();
    let first = client.complete(&request(1)).unwrap();
    let second = client.complete(&request(1)).unwrap();
    assert_eq!(client.backend_calls(), 1);
    assert!(!first.cached && second.cached);
    assert_eq!(first.text, second.text);

    // A fresh client over the same directory makes no calls either.
    let warm = MllmClient::new(Box::new(Scripted::new(vec![])), cfg).unwrap();
    assert!(warm.complete(&request(1)).unwrap().cached);
    assert_eq!(warm.backend_calls(), 0);
    assert!(!warm.complete(&request(2)).unwrap().cached);
    let log = std::fs::read_to_string(dir.path().join("requests.log")).unwrap();
    assert_eq!(log.lines().count(), 4);
}

#[test]
fn failed_responses_are_not_cached() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = MllmClientConfig {
        cache_dir: Some(dir.path().to_path_buf()),
        ..config(0)
    };
    let backend = Scripted::new(vec![TransportError::Timeout]);
    let client = MllmClient::new(Box::new(backend), cfg).unwrap();
    assert!(client.complete(&request(1)).is_err());
    assert!(!client.complete(&request(1)).unwrap().cached);
}

struct Empty;

impl MllmBackend for Empty {
    fn model_id(&self) -> &str {
        "empty"
    }

    fn complete(&self, _: &MllmRequest) -> Result<Completion, TransportError> {
        Ok(Completion {
            text: " \n".into(),
            usage: None,
        })
    }
}

#[test]
fn empty_response_is_an_error() {
    let client = MllmClient::new(Box::new(Empty), config(3)).unwrap();
    assert!(matches!(
        client.complete(&request(0)),
        Err(Error::EmptyResponse)
    ));
}

/// Records the clock time at which each call starts.
struct Recording {
    clock: Arc<FakeClock>,
    starts: Mutex<Vec<Duration>>,
}

impl MllmBackend for Recording {
    fn model_id(&self) -> &str {
        "recording"
    }

    fn complete(&self, _: &MllmRequest) -> Result<Completion, TransportError> {
        self.starts.lock().unwrap().push(self.clock.now());
        self.clock.advance(Duration::from_millis(700));
        Ok(Completion {
            text: "ok".into(),
            usage: None,
        })
    }
}

struct Shared(Arc<Recording>);

impl MllmBackend for Shared {
    fn model_id(&self) -> &str {
        self.0.model_id()
    }

    fn complete(&self, r: &MllmRequest) -> Result<Completion, TransportError> {
        self.0.complete(r)
    }
}

#[test]
fn no_sixty_second_window_exceeds_the_limit() {
    for per_minute in [1, 7, 25] {
        let clock = Arc::new(FakeClock::new());
        let rec = Arc::new(Recording {
            clock: clock.clone(),
            starts: Mutex::default(),
        });
        let cfg = MllmClientConfig {
            max_requests_per_minute: per_minute,
            ..config(0)
        };
        let client = MllmClient::with_clock(Box::new(Shared(rec.clone())), cfg, clock).unwrap();
        for i in 0..100 {
            client.complete(&request(i)).unwrap();
        }
        let starts = rec.starts.lock().unwrap().clone();
        assert_eq!(starts.len(), 100);
        for (i, &t) in starts.iter().enumerate() {
            let in_window = starts[i..]
                .iter()
                .take_while(|&&u| u < t + Duration::from_secs(60))
                .count();
            assert!(
                in_window <= per_minute,
                "limit {per_minute}: {in_window} from {t:?}"
            );
        }
        // The limiter only waits as long as needed.
        let expected_end = Duration::from_secs(60 * (99 / per_minute) as u64);
        assert!(*starts.last().unwrap() <= expected_end + Duration::from_secs(70));
    }
}

/// Counts concurrent calls and sleeps in real time.
struct Concurrency {
    current: AtomicUsize,
    peak: AtomicUsize,
}

impl MllmBackend for Concurrency {
    fn model_id(&self) -> &str {
        "concurrency"
    }

    fn complete(&self, _: &MllmRequest) -> Result<Completion, TransportError> {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        SystemClock::default().sleep(Duration::from_millis(15));
        self.current.fetch_sub(1, Ordering::SeqCst);
        Ok(Completion {
            text: "ok".into(),
            usage: None,
        })
    }
}

#[test]
fn in_flight_requests_are_capped() {
    let backend = Arc::new(Concurrency {
        current: AtomicUsize::new(0),
        peak: AtomicUsize::new(0),
    });
    struct Wrap(Arc<Concurrency>);
    impl MllmBackend for Wrap {
        fn model_id(&self) -> &str {
            "wrap"
        }
        fn complete(&self, r: &MllmRequest) -> Result<Completion, TransportError> {
            self.0.complete(r)
        }
    }
    let cfg = MllmClientConfig {
        max_in_flight: 3,
        max_requests_per_minute: 10_000,
        ..config(0)
    };
    let client = MllmClient::new(Box::new(Wrap(backend.clone())), cfg).unwrap();
    std::thread::scope(|s| {
        for t in 0..12 {
            let client = &client;
            s.spawn(move || {
                for i in 0..4 {
                    client.complete(&request(t * 10 + i)).unwrap();
                }
            });
        }
    });
    assert_eq!(client.backend_calls(), 48);
    assert_eq!(backend.peak.load(Ordering::SeqCst), 3);
}

#[test]
fn canned_description_passes_through() {
    let canned = "SIMILARITIES: the same red awning\nDISSIMILARITIES: a missing sign";
    let mut transcript = Transcript::default();
    transcript
        .insert(vpr_refiner::TranscriptEntry::Describe {
            query_id: "q".into(),
            candidate_id: "r".into(),
            text: canned.into(),
        })
        .unwrap();
    let client = MllmClient::new(Box::new(MockBackend::scripted(transcript)), config(0)).unwrap();
    let d = describe_delta(
        &client,
        &PromptTemplate::default(),
        &record("q"),
        &record("r"),
        1,
    )
    .unwrap();
    assert_eq!(d.text, canned);
    assert_eq!(d.model_id, "mock:scripted");
    assert_eq!(d.candidate_rank_in_coarse, 1);
    assert!(!d.cached);
}

#[test]
fn second_describe_is_cached_without_backend_calls() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = MllmClientConfig {
        cache_dir: Some(dir.path().to_path_buf()),
        ..config(0)
    };
    let client = MllmClient::new(Box::new(MockBackend::identity()), cfg).unwrap();
    let t = PromptTemplate::default();
    let a = describe_delta(&client, &t, &record("q"), &record("r"), 1).unwrap();
    let b = describe_delta(&client, &t, &record("q"), &record("r"), 1).unwrap();
    assert_eq!(client.backend_calls(), 1);
    assert!(!a.cached && b.cached);
    assert_eq!(a.text, b.text);
}
