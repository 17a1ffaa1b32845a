use std::collections::HashSet;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use kgx_core::analysis::single_analysis;
use kgx_core::bucketizer::FeatureSpec;
use kgx_core::confidence::CiConfig;
use kgx_core::sysout::{parse_bytes, Direction, RankBasis};
use kgx_core::{ExampleRecord, Metric, SystemHeader, SystemOutput};
use kgx_server::{AnalysisRequest, Fault, Store, StoreError};
use proptest::prelude::*;

fn fixture(name: &str) -> Vec<u8> {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name);
    fs::read(p).unwrap()
}

fn output(name: &str, ranks: &[f64]) -> SystemOutput {
    let mut s = SystemOutput::new(SystemHeader::new(name, "toy", RankBasis::Filtered));
    s.records = ranks
        .iter()
        .enumerate()
        .map(|(i, &r)| ExampleRecord::new(format!("{i}-tail"), format!("h{i}"), "r", format!("t{i}"), Direction::TailQuery, r))
        .collect();
    s
}

fn entries_on_disk(store: &Store) -> usize {
    fs::read_dir(store.root().join("systems")).unwrap().count()
}

fn staged(store: &Store) -> usize {
    fs::read_dir(store.root().join("tmp")).unwrap().count()
}

#[test]
fn empty_store_lists_nothing() {
    let dir = tempfile::tempdir().unwrap();
    assert!(Store::open(dir.path()).unwrap().list().unwrap().is_empty());
}

#[test]
fn put_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let (a, created_a) = store.put_bytes(&fixture("system_a.jsonl")).unwrap();
    let (b, created_b) = store.put_bytes(&fixture("system_a.jsonl")).unwrap();
    assert_eq!(a, b);
    assert!(created_a && !created_b);
    assert_eq!(store.list().unwrap().len(), 1);
    assert_eq!(entries_on_disk(&store), 1);
}

#[test]
fn equivalent_encodings_share_an_id() {
    // Same content, different whitespace and key order.
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let raw = fixture("four_ranks.jsonl");
    let canonical = parse_bytes(&raw).unwrap().to_bytes().unwrap();
    assert_ne!(raw, canonical);
    assert_eq!(store.put_bytes(&raw).unwrap().0, store.put_bytes(&canonical).unwrap().0);
}

#[test]
fn get_returns_equal_content() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let s = parse_bytes(&fixture("system_b.jsonl")).unwrap();
    let (id, _) = store.put(&s).unwrap();
    assert_eq!(store.get(&id).unwrap(), s);
    let e = store.entry(&id).unwrap();
    assert_eq!(e.header, s.header);
    assert_eq!(e.record_count, 40);
}

#[test]
fn invalid_output_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    assert!(matches!(store.put_bytes(b"{\"not\": \"a header\"}\n"), Err(StoreError::Validation(_))));
    assert!(matches!(store.put(&output("bad", &[0.5])), Err(StoreError::Validation(_))));
    assert_eq!(entries_on_disk(&store), 0);
}

#[test]
fn list_keeps_insertion_order() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let ids: Vec<String> = ["c", "a", "b"].iter().map(|n| store.put(&output(n, &[1.0, 2.0])).unwrap().0).collect();
    let listed: Vec<String> = store.list().unwrap().into_iter().map(|e| e.id).collect();
    assert_eq!(listed, ids);
}

#[test]
fn delete_then_get_is_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let (id, _) = store.put(&output("a", &[1.0])).unwrap();
    store.delete(&id).unwrap();
    assert!(matches!(store.get(&id), Err(StoreError::NotFound(_))));
    assert!(matches!(store.delete(&id), Err(StoreError::NotFound(_))));
    assert_eq!(entries_on_disk(&store), 0);
    assert_eq!(staged(&store), 0);
}

#[test]
fn crash_before_rename_leaves_old_state() {
    let dir = tempfile::tempdir().unwrap();
    let (kept, lost) = (output("kept", &[1.0, 3.0]), output("lost", &[2.0]));
    let kept_id = {
        let store = Store::open(dir.path()).unwrap();
        let (kept_id, _) = store.put(&kept).unwrap();
        store.set_fault(Some(Fault::BeforeRename));
        assert!(matches!(store.put(&lost), Err(StoreError::Injected(Fault::BeforeRename))));
        // Staged files exist but are invisible.
        assert_eq!(staged(&store), 1);
        assert_eq!(store.list().unwrap().len(), 1);
        let lost_id = kgx_server::store::content_id(&lost.to_bytes().unwrap());
        assert!(matches!(store.get(&lost_id), Err(StoreError::NotFound(_))));
        kept_id
    };
    // Restart after the crash: staging is cleared, old state intact, and the
    // write can be retried.
    let store = Store::open(dir.path()).unwrap();
    assert_eq!(staged(&store), 0);
    assert_eq!(store.get(&kept_id).unwrap(), kept);
    let (lost_id, created) = store.put(&lost).unwrap();
    assert!(created);
    assert_eq!(store.get(&lost_id).unwrap(), lost);
}

#[test]
fn cache_hits_skip_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let (id, _) = store.put_bytes(&fixture("system_a.jsonl")).unwrap();
    let cfg = CiConfig {
        resamples: 200,
        ..CiConfig::default()
    };
    let req = store.request_for(&id, &FeatureSpec::parse_list("group,relation-label"), &[Metric::Mrr], Some(cfg)).unwrap();
    let (_, first) = store.analysis_cached(&id, &req).unwrap();
    assert_eq!(store.compute_count(), 1);
    let (_, second) = store.analysis_cached(&id, &req).unwrap();
    assert_eq!(store.compute_count(), 1);
    assert_eq!(first, second);

    let reseeded = AnalysisRequest {
        ci: Some(CiConfig { seed: 99, ..cfg }),
        ..req.clone()
    };
    store.analysis_cached(&id, &reseeded).unwrap();
    assert_eq!(store.compute_count(), 2);

    // A fresh store on the same root reads the persisted cache.
    let reopened = Store::open(dir.path()).unwrap();
    assert_eq!(reopened.analysis_cached(&id, &req).unwrap().1, first);
    assert_eq!(reopened.compute_count(), 0);
}

#[test]
fn cached_report_equals_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let (id, _) = store.put_bytes(&fixture("system_b.jsonl")).unwrap();
    let req = store.request_for(&id, &[], &[], Some(CiConfig::default())).unwrap();
    store.analysis_cached(&id, &req).unwrap();
    let (cached, text) = store.analysis_cached(&id, &req).unwrap();
    let s = store.get(&id).unwrap();
    let fresh = single_analysis(&s, &req.feature_specs(), &req.metrics, req.ci.as_ref(), store.resources()).unwrap();
    assert_eq!(cached, fresh);
    assert_eq!(text, fresh.to_json());
}

#[test]
fn delete_invalidates_cache() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let bytes = fixture("system_a.jsonl");
    let (id, _) = store.put_bytes(&bytes).unwrap();
    let req = store.request_for(&id, &[], &[], None).unwrap();
    store.analysis_cached(&id, &req).unwrap();
    store.delete(&id).unwrap();
    assert!(matches!(store.analysis_cached(&id, &req), Err(StoreError::NotFound(_))));
    store.put_bytes(&bytes).unwrap();
    store.analysis_cached(&id, &req).unwrap();
    assert_eq!(store.compute_count(), 2);
}

#[test]
fn concurrent_puts_of_one_content_create_one_entry() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(Store::open(dir.path()).unwrap());
    let s = parse_bytes(&fixture("system_a.jsonl")).unwrap();
    let results: Vec<(String, bool)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..8).map(|_| scope.spawn(|| store.put(&s).unwrap())).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(results.iter().map(|r| &r.0).collect::<HashSet<_>>().len(), 1);
    assert_eq!(results.iter().filter(|r| r.1).count(), 1);
    assert_eq!(entries_on_disk(&store), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn size_equals_distinct_live_contents(ops in prop::collection::vec((0u8..5, any::<bool>()), 1..25)) {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let mut live = HashSet::new();
        for (k, is_put) in ops {
            let s = output(&format!("s{k}"), &[1.0 + k as f64]);
            let id = kgx_server::store::content_id(&s.to_bytes().unwrap());
            if is_put {
                store.put(&s).unwrap();
                live.insert(id);
            } else if live.remove(&id) {
                store.delete(&id).unwrap();
            } else {
                prop_assert!(matches!(store.delete(&id), Err(StoreError::NotFound(_))));
            }
            prop_assert_eq!(store.list().unwrap().len(), live.len());
        }
    }
}
