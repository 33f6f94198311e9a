mod common;

use std::collections::{HashMap, HashSet};

use common::*;
use ddup::catalog::IndexParams;
use ddup::formats::PairLabel;
use ddup::{CatalogStore, ServiceError};
use ddup_core::{brute_force_search, EmbeddingVector, Metric, PcaModel};

fn random_vec(dim: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f32> {
    noisy(&vec![0.0; dim], 1.0, rng)
}

fn line(id: &str, v: &[f32]) -> String {
    serde_json::json!({ "id": id, "text_vec": v, "image_vec": null, "category": null }).to_string()
}

#[test]
fn empty_stream_ingests_nothing() {
    let mut store = CatalogStore::new(8).unwrap();
    let r = store.ingest("".as_bytes()).unwrap();
    assert_eq!((r.lines, r.accepted, r.rejects.len()), (0, 0, 0));
    assert_eq!(store.len(), 0);
}

#[test]
fn raw_line_is_reduced_by_the_fitted_pca() {
    let mut rng = rng(1);
    let raw: Vec<EmbeddingVector> = (0..300).map(|_| EmbeddingVector::new(random_vec(768, &mut rng)).unwrap()).collect();
    let mut store = CatalogStore::new(128).unwrap();
    store.fit_pca(&raw, &[], 128).unwrap();
    let x = random_vec(768, &mut rng);
    let r = store.ingest(line("x", &x).as_bytes()).unwrap();
    assert_eq!(r.accepted, 1, "{:?}", r.rejects);

    // components · (x − mean), summed in f64
    let pca: &PcaModel = store.pca_text().unwrap();
    let mean = pca.mean();
    let want: Vec<f64> = (0..128)
        .map(|k| {
            pca.component(k)
                .iter()
                .zip(x.iter().zip(mean.iter()))
                .map(|(&c, (&xi, &mi))| c as f64 * (xi as f64 - mi as f64))
                .sum()
        })
        .collect();
    let got = &store.record("x").unwrap().text_vec;
    assert_eq!(got.dim(), 128);
    for (g, w) in got.iter().zip(&want) {
        assert!((*g as f64 - w).abs() <= 1e-4 * (1.0 + w.abs()), "{g} vs {w}");
    }
}

#[test]
fn accepted_plus_rejected_is_lines_read() {
    let mut rng = rng(2);
    let good = |id: &str, rng: &mut _| line(id, &random_vec(8, rng));
    let text = [
        good("a", &mut rng),
        String::new(),
        "not json".to_string(),
        good("a", &mut rng),
        line("short", &[1.0, 2.0]),
        line("zero", &[0.0; 8]),
        r#"{"id":"nan","text_vec":[1,2,3,4,5,6,7,null]}"#.to_string(),
        line("", &[1.0; 8]),
        good("b", &mut rng),
    ]
    .join("\n");
    let mut store = CatalogStore::new(8).unwrap();
    let r = store.ingest(text.as_bytes()).unwrap();
    assert_eq!(r.lines, 8);
    assert_eq!(r.accepted, 2);
    assert_eq!(r.accepted + r.rejects.len(), r.lines);
    let ids: Vec<_> = r.rejects.iter().map(|x| x.id.as_deref()).collect();
    assert_eq!(ids, [None, Some("a"), Some("short"), Some("zero"), Some("nan"), Some("")]);
    assert_eq!(r.rejects[0].line, 3);
}

#[test]
fn single_product_has_no_candidates() {
    let mut store = CatalogStore::new(4).unwrap();
    store.insert(record("only", vec![1.0, 0.0, 0.0, 0.0])).unwrap();
    store.build_index(IndexParams::default()).unwrap();
    assert!(store.find_candidates("only", 10, None).unwrap().is_empty());
}

#[test]
fn exact_duplicate_is_first_candidate() {
    let mut rng = rng(3);
    let mut store = CatalogStore::new(16).unwrap();
    let base = random_vec(16, &mut rng);
    for i in 0..200 {
        store.insert(record(&format!("r{i:03}"), random_vec(16, &mut rng))).unwrap();
    }
    store.insert(record("orig", base.clone())).unwrap();
    store.insert(record("copy", base)).unwrap();
    store
        .build_index(IndexParams {
            nlist: Some(8),
            ..IndexParams::default()
        })
        .unwrap();
    let c = store.find_candidates("orig", 5, Some(1)).unwrap();
    assert_eq!((c[0].id.as_str(), c[0].rank), ("copy", 1));
}

#[test]
fn full_probe_matches_brute_force() {
    let mut rng = rng(4);
    for metric in [Metric::Cosine, Metric::L2, Metric::InnerProduct] {
        let mut store = CatalogStore::new(12).unwrap();
        for i in 0..400 {
            store.insert(record(&format!("r{i:03}"), random_vec(12, &mut rng))).unwrap();
        }
        store
            .build_index(IndexParams {
                nlist: Some(10),
                metric,
                seed: 7,
                nprobe: None,
            })
            .unwrap();
        let all: Vec<(String, EmbeddingVector)> =
            store.records().iter().map(|r| (r.id.clone(), r.text_vec.clone())).collect();
        for q in store.records().iter().step_by(37) {
            let got = store.find_candidates(&q.id, 15, Some(10)).unwrap();
            let others: Vec<_> = all.iter().filter(|(id, _)| *id != q.id).cloned().collect();
            let want = brute_force_search(&others, &q.text_vec, 15, metric).unwrap();
            let g: Vec<_> = got.iter().map(|r| &r.id).collect();
            let w: Vec<_> = want.iter().map(|r| &r.id).collect();
            assert_eq!(g, w, "{metric}");
        }
    }
}

#[test]
fn empty_candidate_list_scores_nothing() {
    let (store, _) = synthetic_store(50, 0.1, 5, 4);
    let id = store.records()[0].id.clone();
    assert!(store.score_candidates(&id, &[], 0.5).unwrap().is_empty());
}

#[test]
fn small_noise_duplicate_is_a_match_with_canonical_ids() {
    let (mut store, _) = synthetic_store(300, 0.0, 6, 8);
    let mut rng = rng(6);
    let src = store.records()[17].clone();
    let dup = noisy(&src.text_vec, SIGMA, &mut rng);
    let img = noisy(src.image_vec.as_ref().unwrap(), SIGMA, &mut rng);
    store
        .insert(ddup_core::ProductRecord {
            id: "a-dup".to_string(),
            text_vec: EmbeddingVector::new(dup).unwrap(),
            image_vec: Some(EmbeddingVector::new(img).unwrap()),
            category: None,
        })
        .unwrap();
    let cands = store.find_candidates("a-dup", 10, None).unwrap();
    assert_eq!(cands[0].id, src.id);
    let decisions = store.score_candidates("a-dup", &cands, 0.5).unwrap();
    assert_eq!(decisions.len(), cands.len());
    assert_eq!(decisions[0].label, PairLabel::Match, "{:?}", decisions[0]);
    assert_eq!((decisions[0].id_a.as_str(), decisions[0].id_b.as_str()), ("a-dup", src.id.as_str()));
    for d in &decisions {
        assert!(d.id_a < d.id_b);
    }
    // the direct score agrees regardless of argument order
    let ab = store.score_pair("a-dup", &src.id, 0.5).unwrap();
    let ba = store.score_pair(&src.id, "a-dup", 0.5).unwrap();
    assert_eq!(ab, ba);
    assert_eq!(ab.probability, decisions[0].probability);
    assert_eq!(ab.retrieval_rank, 0);
}

#[test]
fn no_duplicates_gives_no_groups() {
    let (store, truth) = synthetic_store(400, 0.0, 7, 8);
    assert!(truth.is_empty());
    let out = store.dedupe(10, 0.5, None).unwrap();
    assert!(out.groups.is_empty(), "{:?}", out.groups);
    assert!(!out.decisions.is_empty());
}

#[test]
fn three_observations_form_one_group() {
    let (mut store, _) = synthetic_store(300, 0.0, 8, 8);
    let mut rng = rng(8);
    let src = store.records()[3].clone();
    for k in 0..3 {
        let mut r = record(&format!("trio{k}"), noisy(&src.text_vec, SIGMA, &mut rng));
        r.image_vec = Some(EmbeddingVector::new(noisy(src.image_vec.as_ref().unwrap(), SIGMA, &mut rng)).unwrap());
        store.insert(r).unwrap();
    }
    let out = store.dedupe(10, 0.5, None).unwrap();
    let group = out.groups.iter().find(|g| g.members.contains(&"trio0".to_string())).unwrap();
    let mut want = vec![src.id.clone(), "trio0".into(), "trio1".into(), "trio2".into()];
    want.sort();
    assert_eq!(group.members, want);
    assert_eq!(group.representative, want[0]);
    assert_eq!(out.groups.len(), 1, "{:?}", out.groups);
}

#[test]
fn dedupe_is_idempotent_and_groups_are_consistent() {
    let (store, _) = synthetic_store(600, 0.1, 9, 12);
    let a = store.dedupe(8, 0.5, None).unwrap();
    let b = store.dedupe(8, 0.5, None).unwrap();
    assert_eq!(a, b);

    let mut group_of: HashMap<&str, usize> = HashMap::new();
    for (g, grp) in a.groups.iter().enumerate() {
        assert!(grp.members.len() >= 2);
        assert!(grp.members.windows(2).all(|w| w[0] < w[1]));
        for m in &grp.members {
            assert!(group_of.insert(m, g).is_none(), "{m} in two groups");
        }
    }
    let mut seen = HashSet::new();
    for d in &a.decisions {
        assert!(d.id_a < d.id_b);
        assert!(seen.insert((&d.id_a, &d.id_b)), "pair scored twice");
        let (ga, gb) = (group_of.get(d.id_a.as_str()), group_of.get(d.id_b.as_str()));
        if d.label == PairLabel::Match {
            assert!(ga.is_some() && ga == gb);
        }
    }
    // every group member is connected to the group by a Match
    let matched: HashSet<&str> = a
        .decisions
        .iter()
        .filter(|d| d.label == PairLabel::Match)
        .flat_map(|d| [d.id_a.as_str(), d.id_b.as_str()])
        .collect();
    assert!(group_of.keys().all(|m| matched.contains(m)));
}

#[test]
fn missing_pieces_are_reported() {
    let mut store = CatalogStore::new(4).unwrap();
    store.insert(record("a", vec![1.0, 0.0, 0.0, 0.0])).unwrap();
    store.insert(record("b", vec![0.0, 1.0, 0.0, 0.0])).unwrap();
    assert!(matches!(store.find_candidates("a", 1, None), Err(ServiceError::IndexNotBuilt)));
    assert!(matches!(store.score_pair("a", "b", 0.5), Err(ServiceError::NoDecider)));
    store.build_index(IndexParams::default()).unwrap();
    assert!(matches!(store.find_candidates("zz", 1, None), Err(ServiceError::UnknownId(_))));
    assert!(store.find_candidates("a", 0, None).is_err());
    assert!(store.find_candidates("a", 1, Some(99)).is_err());
    assert!(matches!(store.dedupe(5, 0.5, None), Err(ServiceError::NoDecider)));
    store.set_decider(ddup_core::DeciderModel::new(small_decider_config(4)).unwrap()).unwrap();
    for t in [0.0, 1.0, -0.1, f64::NAN] {
        assert!(store.score_pair("a", "b", t).is_err());
    }
    assert!(store.set_decider(ddup_core::DeciderModel::new(small_decider_config(5)).unwrap()).is_err());
}

#[test]
fn inserts_after_indexing_are_searchable() {
    let mut rng = rng(10);
    let mut store = CatalogStore::new(8).unwrap();
    for i in 0..50 {
        store.insert(record(&format!("r{i}"), random_vec(8, &mut rng))).unwrap();
    }
    store.build_index(IndexParams::default()).unwrap();
    let v = random_vec(8, &mut rng);
    store.insert(record("late", v.clone())).unwrap();
    store.insert(record("late2", v)).unwrap();
    let nlist = store.index().unwrap().nlist();
    let c = store.find_candidates("late", 1, Some(nlist)).unwrap();
    assert_eq!(c[0].id, "late2");
    assert_eq!(store.stats().index.unwrap().indexed, 52);
}
