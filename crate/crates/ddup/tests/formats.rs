use ddup::catalog::{DuplicateGroup, MatchDecision};
use ddup::formats::{self, PairLabel, PairLine, ProductLine};
use ddup_core::decider::EpochRecord;
use ddup_core::image::{content_bbox, ms_ssim, structured_patches};
use ddup_core::{EmbeddingVector, Image, ProductRecord};

fn gradient_rgb(w: usize, h: usize) -> Image {
    let px = (0..w * h).flat_map(|i| [(i % 251) as u8, (i * 7 % 256) as u8, (i / w * 3 % 256) as u8]).collect();
    Image::new(w, h, 3, px).unwrap()
}

#[test]
fn png_round_trip_keeps_channels() {
    let dir = tempfile::tempdir().unwrap();
    let rgb = gradient_rgb(37, 21);
    let gray = Image::new(5, 4, 1, (0..20).map(|i| i as u8 * 12).collect()).unwrap();
    for (name, img) in [("rgb.png", &rgb), ("gray.png", &gray)] {
        let p = dir.path().join(name);
        formats::write_image(&p, img).unwrap();
        assert_eq!(&formats::read_image(&p).unwrap(), img);
    }
}

#[test]
fn ppm_is_binary_p6() {
    let dir = tempfile::tempdir().unwrap();
    let img = gradient_rgb(6, 3);
    let p = dir.path().join("x.ppm");
    formats::write_image(&p, &img).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    // four whitespace-separated tokens, one whitespace byte, raw samples
    let data_start = bytes.len() - img.pixels().len();
    let header = std::str::from_utf8(&bytes[..data_start]).unwrap();
    assert!(header.ends_with(|c: char| c.is_ascii_whitespace()));
    assert_eq!(header.split_ascii_whitespace().collect::<Vec<_>>(), ["P6", "6", "3", "255"]);
    assert_eq!(&bytes[data_start..], img.pixels());
    assert_eq!(formats::read_image(&p).unwrap(), img);

    // a hand-written file with a comment and single spaces
    let mut hand = b"P6 # made by hand\n2 1 255\n".to_vec();
    hand.extend([1, 2, 3, 250, 251, 252]);
    let q = dir.path().join("hand.ppm");
    std::fs::write(&q, hand).unwrap();
    assert_eq!(formats::read_image(&q).unwrap(), Image::new(2, 1, 3, vec![1, 2, 3, 250, 251, 252]).unwrap());

    let gray = Image::new(2, 2, 1, vec![0, 50, 100, 150]).unwrap();
    let g = dir.path().join("g.ppm");
    formats::write_image(&g, &gray).unwrap();
    let back = formats::read_image(&g).unwrap();
    assert_eq!(back.channels(), 3);
    assert_eq!(back.pixel(1, 1), &[150, 150, 150]);
}

#[test]
fn unknown_image_extension_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(formats::write_image(&dir.path().join("x.jpg"), &gradient_rgb(2, 2)).is_err());
    assert!(formats::read_image(&dir.path().join("missing.png")).is_err());
}

#[test]
fn image_pipeline_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut img = Image::filled(60, 45, &[255, 255, 255]).unwrap();
    for y in 10..30 {
        for x in 20..41 {
            img.pixel_mut(x, y).copy_from_slice(&[200, 30, 30]);
        }
    }
    let p = dir.path().join("product.png");
    formats::write_image(&p, &img).unwrap();
    let back = formats::read_image(&p).unwrap();
    let b = content_bbox(&back, ddup_core::image::DEFAULT_TOLERANCE);
    assert_eq!((b.x_min, b.y_min, b.x_max, b.y_max), (20, 10, 40, 29));
    let set = structured_patches(&back, 4).unwrap();
    assert!(set.is_well_formed());
    assert!((ms_ssim(&back, &img, 2).unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn product_jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let recs = vec![
        ProductRecord {
            id: "a".into(),
            text_vec: EmbeddingVector::new(vec![0.1, -2.5e-7, 3.0]).unwrap(),
            image_vec: Some(EmbeddingVector::new(vec![1.0, 2.0, 3.0]).unwrap()),
            category: Some("shoes".into()),
        },
        ProductRecord {
            id: "b".into(),
            text_vec: EmbeddingVector::new(vec![f32::MIN_POSITIVE, 1.0, f32::MAX]).unwrap(),
            image_vec: None,
            category: None,
        },
    ];
    let p = dir.path().join("sub/p.jsonl");
    formats::write_products(&p, &recs).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().contains("\"image_vec\":null"));
    let lines: Vec<ProductLine> = formats::read_jsonl(&p).unwrap();
    let back: Vec<ProductRecord> = lines.into_iter().map(|l| l.into_record().unwrap()).collect();
    assert_eq!(back, recs);
}

#[test]
fn truth_decisions_and_groups_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let truth = vec![("p1".to_string(), "p2".to_string())];
    let tp = dir.path().join("t.jsonl");
    formats::write_truth(&tp, &truth).unwrap();
    let lines: Vec<PairLine> = formats::read_jsonl(&tp).unwrap();
    assert_eq!((lines[0].id_a.as_str(), lines[0].id_b.as_str(), lines[0].label), ("p1", "p2", PairLabel::Match));
    let lines: Vec<PairLine> = {
        std::fs::write(&tp, "{\"id_a\":\"x\",\"id_b\":\"y\",\"label\":\"not_match\"}\n\n").unwrap();
        formats::read_jsonl(&tp).unwrap()
    };
    assert_eq!(lines[0].label, PairLabel::NotMatch);

    let decisions = vec![MatchDecision {
        id_a: "p1".into(),
        id_b: "p2".into(),
        probability: 0.123456789012345,
        label: PairLabel::NotMatch,
        retrieval_rank: 3,
        retrieval_score: -0.5,
    }];
    let dp = dir.path().join("d.jsonl");
    formats::write_decisions(&dp, &decisions).unwrap();
    let back: Vec<MatchDecision> = formats::read_jsonl(&dp).unwrap();
    assert_eq!(back, decisions);

    let groups = vec![DuplicateGroup {
        representative: "p1".into(),
        members: vec!["p1".into(), "p2".into()],
    }];
    let gp = dir.path().join("g.json");
    formats::write_groups(&gp, &groups).unwrap();
    assert_eq!(formats::read_groups(&gp).unwrap(), groups);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&gp).unwrap()).unwrap();
    assert!(v["groups"].is_array());
}

#[test]
fn history_csv_has_the_four_columns() {
    let dir = tempfile::tempdir().unwrap();
    let h = vec![
        EpochRecord {
            epoch: 1,
            train_loss: 0.69,
            val_loss: 0.7,
            lr: 1e-4,
        },
        EpochRecord {
            epoch: 2,
            train_loss: 0.5,
            val_loss: 0.55,
            lr: 5e-5,
        },
    ];
    let p = dir.path().join("h.csv");
    formats::write_history(&p, &h).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().next().unwrap(), "epoch,train_loss,val_loss,lr");
    assert_eq!(text.lines().count(), 3);
    assert_eq!(formats::read_history(&p).unwrap(), h);
}

#[test]
fn malformed_jsonl_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.jsonl");
    std::fs::write(&p, "{\"id_a\":\"x\",\"id_b\":\"y\"}\n{oops\n").unwrap();
    let err = formats::read_jsonl::<PairLine>(&p).unwrap_err().to_string();
    assert!(err.contains('2'), "{err}");
}
