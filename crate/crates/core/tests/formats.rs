mod common;

use std::path::Path;

use rand::Rng;
use rrid_core::head::{FeatureMap, HeadConfig};
use rrid_core::io::{
    decode_feature, encode_feature, load_manifest, read_embeddings, read_feature, write_embeddings, write_feature,
    EmbeddingMeta, EmbeddingSet, Split,
};
use rrid_core::training::{Checkpoint, Model, TrainConfig};
use rrid_core::Error;

fn sample_map(seed: u64) -> FeatureMap {
    let mut rng = common::rng(seed);
    FeatureMap::new(6, 2, 3, (0..36).map(|_| common::normal(&mut rng)).collect()).unwrap()
}

fn format_offset(e: &Error) -> u64 {
    match e {
        Error::Format { offset, .. } => *offset,
        other => panic!("expected a format error, got {other}"),
    }
}

#[test]
fn feature_files_roundtrip_and_reject_every_truncation() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("x.ridf");
    let map = sample_map(1);
    write_feature(&path, &map).unwrap();
    assert_eq!(read_feature(&path).unwrap(), map);

    let bytes = encode_feature(&map).unwrap();
    assert_eq!(bytes.len(), 20 + 4 * 36);
    for cut in 0..bytes.len() {
        let e = decode_feature(&bytes[..cut], &path).unwrap_err();
        assert!(format_offset(&e) <= cut as u64);
        assert!(e.to_string().contains("x.ridf"));
    }
    let mut long = bytes.clone();
    long.push(0);
    assert_eq!(format_offset(&decode_feature(&long, &path).unwrap_err()), bytes.len() as u64);
}

#[test]
fn feature_header_corruption_is_located() {
    let bytes = encode_feature(&sample_map(2)).unwrap();
    let path = Path::new("f.ridf");
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert_eq!(format_offset(&decode_feature(&bad, path).unwrap_err()), 0);
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert_eq!(format_offset(&decode_feature(&bad, path).unwrap_err()), 4);
    let mut bad = bytes.clone();
    bad[8..12].copy_from_slice(&0u32.to_le_bytes());
    assert_eq!(format_offset(&decode_feature(&bad, path).unwrap_err()), 8);
    // a geometry that promises more payload than the file holds
    let mut bad = bytes;
    bad[16..20].copy_from_slice(&4u32.to_le_bytes());
    assert_eq!(format_offset(&decode_feature(&bad, path).unwrap_err()), 20);
}

#[test]
fn random_byte_damage_never_panics() {
    let bytes = encode_feature(&sample_map(3)).unwrap();
    let mut rng = common::rng(4);
    for _ in 0..2000 {
        let mut b = bytes.clone();
        for _ in 0..rng.gen_range(1..4) {
            let i = rng.gen_range(0..b.len());
            b[i] = rng.gen();
        }
        let _ = decode_feature(&b, Path::new("fuzz.ridf"));
    }
}

fn embedding_set(n: usize, dim: usize) -> EmbeddingSet {
    let meta = EmbeddingMeta {
        ids: (0..n).map(|i| format!("e{i}")).collect(),
        person_ids: (0..n as i64).collect(),
        camera_ids: vec![0; n],
        split: Split::Query,
        config: serde_json::json!({"reduced_channels": 4}),
    };
    let rows = (0..n).map(|i| (0..dim).map(|k| (i * dim + k) as f32).collect()).collect();
    EmbeddingSet::new(dim, rows, meta).unwrap()
}

#[test]
fn embedding_files_and_sidecars() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("q.ride");
    let set = embedding_set(3, 4);
    write_embeddings(&path, &set).unwrap();
    let back = read_embeddings(&path).unwrap();
    assert_eq!(back.values, set.values);
    assert_eq!(back.meta.config, set.meta.config);

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
    assert_eq!(format_offset(&read_embeddings(&path).unwrap_err()), 12);
    std::fs::write(&path, &bytes).unwrap();

    // sidecar disagreeing with the row count
    let side = tmp.path().join("q.ride.json");
    let mut meta: serde_json::Value = serde_json::from_slice(&std::fs::read(&side).unwrap()).unwrap();
    meta["person_ids"] = serde_json::json!([0, 1]);
    std::fs::write(&side, serde_json::to_vec(&meta).unwrap()).unwrap();
    let e = read_embeddings(&path).unwrap_err();
    assert!(e.to_string().contains("q.ride.json"), "{e}");

    std::fs::remove_file(&side).unwrap();
    assert!(matches!(read_embeddings(&path), Err(Error::Io { .. })));
}

#[test]
fn checkpoints_roundtrip_and_reject_damage() {
    let tmp = tempfile::tempdir().unwrap();
    let head = HeadConfig {
        scales: vec![2],
        channels: 8,
        reduced_channels: 4,
        ..HeadConfig::default()
    };
    let model = Model::new(head, 3, 9).unwrap();
    let ck = model.to_checkpoint(&TrainConfig::default(), 0, "0".into());
    let path = tmp.path().join("m.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.to_bytes().unwrap(), ck.to_bytes().unwrap());
    let rebuilt = Model::from_checkpoint(&back).unwrap();
    let map = FeatureMap::new(4, 1, 8, (0..32).map(|i| i as f32 / 7.0).collect()).unwrap();
    assert_eq!(rebuilt.embed(&[&map]).unwrap(), model.embed(&[&map]).unwrap());

    let bytes = ck.to_bytes().unwrap();
    for cut in (0..bytes.len()).step_by(97) {
        let e = Checkpoint::from_bytes(&bytes[..cut], &path).unwrap_err();
        assert!(format_offset(&e) <= cut as u64);
    }

    let mut renamed = back.clone();
    renamed.params[0].0 = "p2.nonsense".into();
    assert!(Model::from_checkpoint(&renamed).is_err());
}

#[test]
fn manifest_errors_name_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_feature(&dir.join("a.ridf"), &sample_map(5)).unwrap();
    let good = r#"{"id":"a","feature_path":"a.ridf","person_id":1,"camera_id":0,"split":"train"}"#;
    let cases = [
        (format!("{good}\n{{\"id\":\"b\"}}"), ":2:"),
        (format!("{good}\n\n{good}"), ":3:"),
        (good.replace("a.ridf", "missing.ridf"), ":1:"),
        (good.replace("\"train\"", "\"validation\""), ":1:"),
        (good.replace("\"person_id\":1", "\"person_id\":-1"), ":1:"),
    ];
    for (text, needle) in cases {
        let path = dir.join("manifest.jsonl");
        std::fs::write(&path, text).unwrap();
        let e = load_manifest(&path).unwrap_err();
        assert!(matches!(e, Error::Manifest { .. }), "{e}");
        assert!(e.to_string().contains(needle), "{e}");
    }
}
