use proptest::prelude::*;
use sopforge::agents::AgentId;
use sopforge::selfmod::{oracle_dataset, train, ChainState, TrainConfig};
use sopforge::store::*;
use sopforge::video::{Frame, Video};

fn video_strategy() -> impl Strategy<Value = Video> {
    (1usize..=5, 1usize..=9, 1usize..=9).prop_flat_map(|(t, h, w)| {
        prop::collection::vec(-1.0f64..=1.0, t * h * w).prop_map(move |px| {
            Video::from_frames(px.chunks(h * w).map(|c| Frame::new(h, w, c.to_vec()).unwrap()).collect()).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn tvid_roundtrip_is_bitwise(v in video_strategy()) {
        let bytes = encode_tvid(&v);
        let back = decode_tvid(&bytes).unwrap();
        prop_assert_eq!(encode_tvid(&back), bytes.clone());
        for (a, b) in v.flat().zip(back.flat()) {
            prop_assert_eq!((a as f32).to_bits(), (b as f32).to_bits());
            prop_assert_eq!(b, a as f32 as f64);
        }
        prop_assert_eq!(decode_tvid_b64(&encode_tvid_b64(&v)).unwrap(), back);
    }

    #[test]
    fn truncated_streams_are_rejected(v in video_strategy(), cut in 1usize..40) {
        let bytes = encode_tvid(&v);
        let cut = cut.min(bytes.len());
        prop_assert!(decode_tvid(&bytes[..bytes.len() - cut]).is_err());
    }
}

#[test]
fn tvid_header_layout() {
    let v = Video::from_frames(vec![Frame::filled(2, 3, 0.5).unwrap(); 4]).unwrap();
    let b = encode_tvid(&v);
    assert_eq!(&b[..6], b"TVID1\0");
    assert_eq!(u16::from_le_bytes([b[6], b[7]]), 1);
    let dims: Vec<u32> = (0..3).map(|i| u32::from_le_bytes(b[8 + 4 * i..12 + 4 * i].try_into().unwrap())).collect();
    assert_eq!(dims, [4, 2, 3]);
    assert_eq!(b.len(), 20 + 4 * 2 * 3 * 4);
    assert_eq!(&b[20..24], &0.5f32.to_le_bytes());
}

#[test]
fn tvid_error_kinds() {
    let good = encode_tvid(&Video::single(Frame::zeros(8, 8)));
    let mut magic = good.clone();
    magic[1] = b'X';
    assert!(matches!(decode_tvid(&magic), Err(StoreError::BadMagic)));
    let mut version = good.clone();
    version[6] = 2;
    assert!(matches!(decode_tvid(&version), Err(StoreError::BadVersion(2))));
    let mut empty = good.clone();
    empty[8..12].copy_from_slice(&0u32.to_le_bytes());
    assert!(matches!(decode_tvid(&empty), Err(StoreError::EmptyHeader)));
    let mut long = good.clone();
    long.extend_from_slice(&[0; 4]);
    assert!(matches!(decode_tvid(&long), Err(StoreError::TruncatedPayload { .. })));
    let mut nan = good.clone();
    nan[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(decode_tvid(&nan), Err(StoreError::InvalidPixels(_))));
    assert!(matches!(decode_tvid_b64("!!"), Err(StoreError::Base64(_))));
}

#[test]
fn tvid_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clip.tvid");
    let v = Video::from_frames(vec![Frame::filled(8, 8, -0.25).unwrap(); 3]).unwrap();
    save_tvid(&v, &path).unwrap();
    assert_eq!(load_tvid(&path).unwrap(), v);
    assert!(matches!(load_tvid(&dir.path().join("none.tvid")), Err(StoreError::Io(_))));
}

fn trained(chain: Vec<AgentId>) -> (ChainState, TrainConfig) {
    let cfg = TrainConfig {
        chain,
        epochs: 3,
        ..TrainConfig::default()
    };
    let data = oracle_dataset(1, 8, cfg.t_frames, None).unwrap();
    (train(&data, &cfg).unwrap().state, cfg)
}

#[test]
fn checkpoint_roundtrip_is_bitwise() {
    for chain in [
        vec![AgentId::TextToImage, AgentId::ImageToVideo],
        vec![AgentId::TextToImage, AgentId::ImageToImage, AgentId::ImageToVideo],
    ] {
        let (state, cfg) = trained(chain);
        let meta = TrainMeta { iteration: 2, epoch: 3, seed: cfg.seed };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_checkpoint(&state, &cfg.chain, meta, a.path()).unwrap();
        let ck = read_checkpoint(a.path()).unwrap();
        assert_eq!(ck.chain, cfg.chain);
        assert_eq!(ck.meta, meta);
        assert_eq!(ck.state, state);
        write_checkpoint(&ck.state, &ck.chain, ck.meta, b.path()).unwrap();
        for f in [MANIFEST_FILE, WEIGHTS_FILE] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }
}

#[test]
fn checkpoint_rejects_tampering() {
    let (state, cfg) = trained(vec![AgentId::TextToImage, AgentId::ImageToVideo]);
    let (manifest, weights) = encode_checkpoint(&state, &cfg.chain, TrainMeta::default()).unwrap();
    assert!(decode_checkpoint(&manifest, &weights[..weights.len() - 4]).is_err());
    let mut wrong_format = manifest.clone();
    wrong_format.format_version = 9;
    assert!(matches!(decode_checkpoint(&wrong_format, &weights), Err(StoreError::ManifestMismatch(_))));
    let mut wrong_shape = manifest.clone();
    wrong_shape.tensors[0].shape = vec![1, 1];
    assert!(decode_checkpoint(&wrong_shape, &weights).is_err());
}

#[test]
fn history_log_roundtrip() {
    let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
    let data = oracle_dataset(0, 8, cfg.t_frames, None).unwrap();
    let out = train(&data, &cfg).unwrap();
    let mut log = Vec::new();
    for r in &out.history.records {
        append_history(r, &mut log).unwrap();
    }
    assert_eq!(log.iter().filter(|b| **b == b'\n').count(), out.history.records.len());
    assert_eq!(read_history(&log[..]).unwrap(), out.history.records);
}

#[test]
fn canonical_json_is_stable() {
    let v = serde_json::json!({"b": 0.1, "a": [1.0e-300, -0.0]});
    let a = canonical_json(&v).unwrap();
    let back: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(canonical_json(&back).unwrap(), a);
}
