use std::collections::HashMap;

use vpr_core::{ImageRecord, Pose, PoseTable, Split};
use vpr_refiner::{
    refine_query, rerank, Error, MllmClient, MllmClientConfig, MockBackend, PairDescription,
    ParseStatus, PromptTemplate, Transcript,
};

fn record(id: &str, easting: f64) -> ImageRecord {
    ImageRecord {
        id: id.into(),
        path: format!("/nonexistent/{id}.png").into(),
        split: if id.starts_with('q') {
            Split::Query
        } else {
            Split::Reference
        },
        pose: Pose::Utm {
            easting,
            northing: 0.0,
        },
    }
}

fn client(backend: MockBackend) -> MllmClient {
    MllmClient::new(Box::new(backend), MllmClientConfig::default()).unwrap()
}

fn scene() -> (ImageRecord, Vec<ImageRecord>) {
    // Coarse order r1, r2, r3; only r3 is within 25 m of the query.
    let query = record("q1", 0.0);
    let candidates = vec![record("r1", 80.0), record("r2", 300.0), record("r3", 4.0)];
    (query, candidates)
}

#[test]
fn identity_keeps_coarse_order() {
    let (query, candidates) = scene();
    let out = refine_query(
        &client(MockBackend::identity()),
        &PromptTemplate::default(),
        &query,
        &candidates,
    )
    .unwrap();
    assert_eq!(out.result.order, ["r1", "r2", "r3"]);
    assert_eq!(out.result.parse_status, ParseStatus::Parsed);
    assert_eq!(out.descriptions.len(), 3);
    for (i, d) in out.descriptions.iter().enumerate() {
        assert_eq!(d.candidate_rank_in_coarse, i + 1);
        assert_eq!(d.candidate_id, candidates[i].id);
        assert!(d.text.contains("SIMILARITIES:"));
    }
}

#[test]
fn distance_oracle_promotes_the_true_match() {
    let (query, candidates) = scene();
    let mut all = candidates.clone();
    all.push(query.clone());
    let backend = MockBackend::distance_oracle(PoseTable::from_records(&all)).unwrap();
    let out = refine_query(
        &client(backend),
        &PromptTemplate::default(),
        &query,
        &candidates,
    )
    .unwrap();
    assert_eq!(out.result.order, ["r3", "r1", "r2"]);
    assert_eq!(out.result.parse_status, ParseStatus::Parsed);
}

#[test]
fn distance_oracle_without_a_pose_fails() {
    let (query, candidates) = scene();
    let backend = MockBackend::distance_oracle(PoseTable::from_records(&candidates)).unwrap();
    let err = refine_query(
        &client(backend),
        &PromptTemplate::default(),
        &query,
        &candidates,
    )
    .unwrap_err();
    assert!(chain(&err).contains("q1"), "{}", chain(&err));
}

fn chain(err: &dyn std::error::Error) -> String {
    let mut text = err.to_string();
    let mut next = err.source();
    while let Some(e) = next {
        text = format!("{text}: {e}");
        next = e.source();
    }
    text
}

#[test]
fn similarity_oracle_ranks_by_descriptor() {
    let (query, candidates) = scene();
    let descriptors: HashMap<String, Vec<f32>> = [
        ("q1", vec![1.0, 0.0]),
        ("r1", vec![0.0, 1.0]),
        ("r2", vec![0.6, 0.8]),
        ("r3", vec![0.8, 0.6]),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let backend = MockBackend::similarity_oracle(descriptors);
    let out = refine_query(
        &client(backend),
        &PromptTemplate::default(),
        &query,
        &candidates,
    )
    .unwrap();
    assert_eq!(out.result.order, ["r3", "r2", "r1"]);
}

const TRANSCRIPT: &str = r#"{"kind":"describe","query_id":"q1","candidate_id":"r1","text":"SIMILARITIES: tram lines\nDISSIMILARITIES: no clock tower"}
{"kind":"describe","query_id":"q1","candidate_id":"r2","text":"SIMILARITIES: none\nDISSIMILARITIES: different street"}
{"kind":"describe","query_id":"q1","candidate_id":"r3","text":"SIMILARITIES: clock tower, tram lines\nDISSIMILARITIES: parked van"}
{"kind":"rerank","query_id":"q1","text":"Candidate 3 shares the clock tower.\nFINAL_RANKING: 3, 1, 2"}
"#;

#[test]
fn scripted_runs_are_reproducible() {
    let (query, candidates) = scene();
    let run = || {
        let t = Transcript::parse(TRANSCRIPT).unwrap();
        refine_query(
            &client(MockBackend::scripted(t)),
            &PromptTemplate::default(),
            &query,
            &candidates,
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(
        serde_json::to_string(&a.descriptions).unwrap(),
        serde_json::to_string(&b.descriptions).unwrap()
    );
    assert_eq!(a.result, b.result);
    assert_eq!(a.result.order, ["r3", "r1", "r2"]);
    assert_eq!(
        a.descriptions[2].text,
        "SIMILARITIES: clock tower, tram lines\nDISSIMILARITIES: parked van"
    );
}

#[test]
fn unparseable_ranking_falls_back_to_coarse() {
    let (query, candidates) = scene();
    for reply in ["the best is candidate 2", "FINAL_RANKING: 1, 1, 2"] {
        let text = TRANSCRIPT.replace(
            "Candidate 3 shares the clock tower.\\nFINAL_RANKING: 3, 1, 2",
            reply,
        );
        let backend = MockBackend::scripted(Transcript::parse(&text).unwrap());
        let out = refine_query(
            &client(backend),
            &PromptTemplate::default(),
            &query,
            &candidates,
        )
        .unwrap();
        assert_eq!(out.result.order, ["r1", "r2", "r3"]);
        assert_eq!(out.result.parse_status, ParseStatus::FallbackCoarse);
        assert_eq!(out.result.rationale, reply);
    }
}

#[test]
fn missing_transcript_entry_is_an_error() {
    let (query, candidates) = scene();
    let partial: String = TRANSCRIPT.lines().skip(1).collect::<Vec<_>>().join("\n");
    let backend = MockBackend::scripted(Transcript::parse(&partial).unwrap());
    let err = refine_query(
        &client(backend),
        &PromptTemplate::default(),
        &query,
        &candidates,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Transport { .. }), "{err}");
}

#[test]
fn rerank_checks_descriptions_match_candidates() {
    let d = |c: &str| PairDescription {
        query_id: "q1".into(),
        candidate_id: c.into(),
        candidate_rank_in_coarse: 1,
        text: "x".into(),
        model_id: "m".into(),
        cached: false,
    };
    let c = client(MockBackend::identity());
    let t = PromptTemplate::default();
    let coarse = vec!["r1".to_string(), "r2".to_string()];
    assert!(matches!(
        rerank(&c, &t, &[], &[]),
        Err(Error::InvalidInput(_))
    ));
    assert!(matches!(
        rerank(&c, &t, &[d("r1")], &coarse),
        Err(Error::InvalidInput(_))
    ));
    assert!(matches!(
        rerank(&c, &t, &[d("r2"), d("r1")], &coarse),
        Err(Error::InvalidInput(_))
    ));
    assert_eq!(
        rerank(&c, &t, &[d("r1"), d("r2")], &coarse).unwrap().order,
        coarse
    );
}

#[test]
fn rerank_prompt_labels_candidates_in_coarse_order() {
    let t = PromptTemplate::default();
    let ds: Vec<PairDescription> = ["first", "second"]
        .iter()
        .enumerate()
        .map(|(i, text)| PairDescription {
            query_id: "q".into(),
            candidate_id: format!("r{i}"),
            candidate_rank_in_coarse: i + 1,
            text: text.to_string(),
            model_id: "m".into(),
            cached: false,
        })
        .collect();
    let prompt = vpr_refiner::rerank_prompt(&t, &ds);
    assert!(prompt.starts_with(&t.rerank_text(2)));
    assert!(prompt.ends_with("Candidate 1:\nfirst\n\nCandidate 2:\nsecond"));
}
