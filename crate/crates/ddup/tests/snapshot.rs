mod common;

use common::*;
use ddup::catalog::IndexParams;
use ddup::snapshot::{self, SnapshotError, MAGIC, VERSION};
use ddup::{CatalogStore, ServiceError};
use ddup_core::{EmbeddingVector, PcaModel, ProductRecord};

fn full_store() -> CatalogStore {
    let (mut store, _) = synthetic_store(300, 0.1, 21, 8);
    let mut rng = rng(21);
    let raw: Vec<EmbeddingVector> =
        (0..40).map(|_| EmbeddingVector::new(noisy(&[0.0; 24], 1.0, &mut rng)).unwrap()).collect();
    let pca = PcaModel::fit(&raw, DIM).unwrap();
    store.set_pca(Some(pca.clone()), Some(pca)).unwrap();
    store
}

fn header_and_table_len(bytes: &[u8]) -> usize {
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    12 + 20 * count + 4
}

#[test]
fn header_layout() {
    let bytes = snapshot::to_bytes(&full_store());
    assert_eq!(&bytes[..4], MAGIC);
    assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), VERSION);
    // meta, records, centroids, lists, two PCA models, decider
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 7);
}

#[test]
fn round_trip_is_exact_and_dedupe_is_unchanged() {
    let store = full_store();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/s.snap");
    snapshot::save(&store, &path).unwrap();
    let back = snapshot::load(&path).unwrap();
    assert_eq!(back, store);
    assert_eq!(snapshot::to_bytes(&back), snapshot::to_bytes(&store));
    assert_eq!(back.dedupe(10, 0.5, None).unwrap(), store.dedupe(10, 0.5, None).unwrap());
    assert!(!dir.path().join("nested/s.snap.tmp").exists());
}

#[test]
fn every_corrupted_byte_is_detected() {
    let bytes = snapshot::to_bytes(&full_store());
    let framing = header_and_table_len(&bytes);
    let step = (bytes.len() / 4000).max(1);
    let positions = (0..framing).chain((framing..bytes.len()).step_by(step)).chain([bytes.len() - 1]);
    for pos in positions {
        let mut bad = bytes.clone();
        bad[pos] ^= 0x5a;
        let err = snapshot::from_bytes(&bad).expect_err(&format!("byte {pos}"));
        let ServiceError::Snapshot(e) = err else {
            panic!("byte {pos}: {err:?}")
        };
        match pos {
            0..4 => assert_eq!(e, SnapshotError::BadMagic),
            4..6 => assert!(matches!(e, SnapshotError::VersionMismatch { .. })),
            p if p >= framing => assert!(matches!(e, SnapshotError::Checksum(_)), "byte {pos}: {e:?}"),
            _ => {}
        }
    }
}

#[test]
fn corrupted_file_fails_to_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.snap");
    snapshot::save(&full_store(), &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] = bytes[mid].wrapping_add(1);
    std::fs::write(&path, &bytes).unwrap();
    let err = snapshot::load(&path).unwrap_err();
    assert!(matches!(err, ServiceError::Snapshot(SnapshotError::Checksum(_))), "{err:?}");
    assert_eq!(err.code(), "snapshot_error");
}

#[test]
fn ten_thousand_by_128_is_near_raw_size() {
    let mut rng = rng(22);
    let mut store = CatalogStore::new(128).unwrap();
    for i in 0..10_000 {
        store
            .insert(ProductRecord {
                id: format!("p{i:07}"),
                text_vec: EmbeddingVector::new(noisy(&[0.0; 128], 1.0, &mut rng)).unwrap(),
                image_vec: Some(EmbeddingVector::new(noisy(&[0.0; 128], 1.0, &mut rng)).unwrap()),
                category: None,
            })
            .unwrap();
    }
    store
        .build_index(IndexParams {
            nlist: Some(100),
            ..IndexParams::default()
        })
        .unwrap();
    let raw = 10_000 * 2 * 128 * 4;
    let size = snapshot::to_bytes(&store).len();
    let rel = (size as f64 - raw as f64).abs() / raw as f64;
    assert!(rel <= 0.15, "{size} bytes vs {raw}");
}

#[test]
fn truncation_anywhere_fails() {
    let bytes = snapshot::to_bytes(&full_store());
    for cut in [0, 5, 12, 40, bytes.len() / 3, bytes.len() - 4, bytes.len() - 1] {
        assert!(snapshot::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(snapshot::from_bytes(&longer).is_err());
}
