use std::path::PathBuf;

use proptest::prelude::*;
use vpr_core::{
    load_index, read_feature_file, save_index, write_feature_file, Aggregation, Descriptor, Error,
    FeatureSet, Index,
};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn golden_features() -> FeatureSet {
    FeatureSet::new("golden", 2, vec![1.0, 0.0], vec![1.0, 2.0, 3.0, 4.0]).unwrap()
}

#[test]
fn golden_vprf_reads_exactly() {
    let fs = read_feature_file(fixture("golden.vprf")).unwrap();
    assert_eq!(fs, golden_features());
    assert_eq!(fs.patch(1), &[3.0, 4.0]);
}

#[test]
fn golden_vprf_written_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("golden.vprf");
    write_feature_file(&golden_features(), &out).unwrap();
    assert_eq!(
        std::fs::read(out).unwrap(),
        std::fs::read(fixture("golden.vprf")).unwrap()
    );
}

#[test]
fn truncated_vprf_file() {
    let bytes = std::fs::read(fixture("golden.vprf")).unwrap();
    let err = FeatureSet::from_bytes(&bytes[..30]).unwrap_err();
    assert!(
        matches!(
            err,
            Error::Truncated {
                expected: 47,
                actual: 30
            }
        ),
        "{err}"
    );
    // Inside the header only the header length is known.
    let err = FeatureSet::from_bytes(&bytes[..20]).unwrap_err();
    assert!(
        matches!(
            err,
            Error::Truncated {
                expected: 23,
                actual: 20
            }
        ),
        "{err}"
    );
}

#[derive(serde::Deserialize)]
struct GoldenQuery {
    query_id: String,
    vec: Vec<f64>,
    ids: Vec<String>,
    scores: Vec<f64>,
}

fn golden_queries() -> Vec<GoldenQuery> {
    serde_json::from_str(&std::fs::read_to_string(fixture("golden_retrieval.json")).unwrap())
        .unwrap()
}

#[test]
fn golden_index_gives_golden_retrieval() {
    let index: Index = load_index(fixture("golden.vpri")).unwrap();
    assert_eq!(index.len(), 6);
    assert_eq!(index.aggregation(), Aggregation::Gem { p: 3.0 });
    for q in golden_queries() {
        let query = Descriptor {
            image_id: q.query_id.clone(),
            aggregation: Aggregation::Gem { p: 3.0 },
            vec: q.vec.iter().map(|&x| x as f32).collect(),
        };
        let got = index.retrieve_topk(&query, 6).unwrap();
        assert_eq!(got.ids().collect::<Vec<_>>(), q.ids, "{}", q.query_id);
        for (c, s) in got.candidates.iter().zip(&q.scores) {
            assert!((c.score as f64 - s).abs() < 1e-6);
        }
    }
}

#[test]
fn golden_index_reencodes_to_same_bytes() {
    let bytes = std::fs::read(fixture("golden.vpri")).unwrap();
    let index = Index::from_bytes(&bytes).unwrap();
    assert_eq!(index.to_bytes(), bytes);
}

#[test]
fn index_save_load_preserves_retrieval() {
    let index: Index = load_index(fixture("golden.vpri")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("copy.vpri");
    save_index(&index, &path).unwrap();
    let reloaded: Index = load_index(&path).unwrap();
    for q in golden_queries() {
        let query = Descriptor {
            image_id: q.query_id,
            aggregation: Aggregation::Gem { p: 3.0 },
            vec: q.vec.iter().map(|&x| x as f32).collect(),
        };
        assert_eq!(
            index.retrieve_topk(&query, 4).unwrap(),
            reloaded.retrieve_topk(&query, 4).unwrap()
        );
    }
}

#[test]
fn truncated_index_file() {
    let bytes = std::fs::read(fixture("golden.vpri")).unwrap();
    for cut in [3, 10, 30, bytes.len() - 1] {
        let err = Index::from_bytes(&bytes[..cut]).unwrap_err();
        assert!(
            matches!(err, Error::Truncated { .. } | Error::BadMagic { .. }),
            "cut {cut}: {err}"
        );
    }
    let mut extra = bytes.clone();
    extra.push(7);
    assert!(matches!(
        Index::from_bytes(&extra),
        Err(Error::TrailingBytes { count: 1 })
    ));
}

fn feature_sets() -> impl Strategy<Value = FeatureSet> {
    (1usize..=64, 1usize..=128, "[a-z0-9_-]{1,24}").prop_flat_map(|(dim, n, id)| {
        (
            prop::collection::vec(
                prop::num::f32::NORMAL | prop::num::f32::ZERO | prop::num::f32::SUBNORMAL,
                dim,
            ),
            prop::collection::vec(
                prop::num::f32::NORMAL | prop::num::f32::ZERO | prop::num::f32::SUBNORMAL,
                dim * n,
            ),
        )
            .prop_map(move |(cls, patches)| FeatureSet::new(id.clone(), dim, cls, patches).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn feature_sets_roundtrip_bit_exact(fs in feature_sets()) {
        let bytes = fs.to_bytes().unwrap();
        prop_assert_eq!(bytes.len(), fs.encoded_len());
        let back = FeatureSet::from_bytes(&bytes).unwrap();
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back.cls), bits(&fs.cls));
        prop_assert_eq!(bits(&back.patches), bits(&fs.patches));
        prop_assert_eq!(back, fs);
    }
}
