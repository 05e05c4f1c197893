use cxa_core::batch::Batch;
use cxa_core::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, TrainingMeta, MAGIC};
use cxa_core::gradcheck_suite::synthetic_samples;
use cxa_core::{CoreError, Model, ModelConfig, ModelKind};

fn model(kind: ModelKind) -> Model {
    Model::new(ModelConfig::tiny(kind, "y+p+s".parse().unwrap()), 42).unwrap()
}

fn meta() -> TrainingMeta {
    TrainingMeta { epoch: 12, seed: 42 }
}

#[test]
fn save_load_reproduces_outputs_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let samples = synthetic_samples(3, 3, 7, 1);
    let refs: Vec<_> = samples.iter().collect();
    for kind in [ModelKind::Cxa, ModelKind::TripleLstm, ModelKind::LipLstm] {
        let mut original = model(kind);
        // move away from the seeded initialization so loading cannot cheat
        for t in original.params.tensors_mut() {
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v += 1e-3 * (i % 7) as f64 - 1.7e-17;
            }
        }
        let path = dir.path().join(format!("{kind:?}.ckpt"));
        save_checkpoint(&path, &original, &meta()).unwrap();
        let (loaded, m) = load_checkpoint(&path).unwrap();
        assert_eq!(m, meta());
        assert_eq!(loaded.config, original.config);
        assert_eq!(loaded.params, original.params);
        let batch = Batch::assemble(&refs, original.config.modalities).unwrap();
        let (a, b) = (original.predict(&batch).unwrap(), loaded.predict(&batch).unwrap());
        let bits = |t: &cxa_tensor::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}

#[test]
fn tiny_checkpoint_is_small() {
    let m = model(ModelKind::Cxa);
    let bytes = encode_checkpoint(&m, &meta());
    assert!(bytes.len() < 1 << 20);
    assert!(bytes.len() >= 8 * m.params.num_values());
}

#[test]
fn wrong_magic_and_version_are_distinct_errors() {
    let mut bytes = encode_checkpoint(&model(ModelKind::Cxa), &meta());
    assert_eq!(&bytes[..4], MAGIC);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad), Err(CoreError::BadMagic)));
    bytes[4] = 9;
    assert!(matches!(
        decode_checkpoint(&bytes),
        Err(CoreError::VersionMismatch { found: 9, .. })
    ));
}

#[test]
fn truncation_is_detected_everywhere() {
    let bytes = encode_checkpoint(&model(ModelKind::LipLstm), &meta());
    for cut in [5, 12, 40, bytes.len() - 8, bytes.len() - 1] {
        let err = decode_checkpoint(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, CoreError::TruncatedCheckpoint(_)), "cut at {cut}: {err}");
    }
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(decode_checkpoint(&longer).is_err());
}

#[test]
fn corrupted_header_is_rejected() {
    let bytes = encode_checkpoint(&model(ModelKind::Cxa), &meta());
    let header_len = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
    let header = String::from_utf8(bytes[13..13 + header_len].to_vec()).unwrap();

    let mut garbled = bytes.clone();
    garbled[13] = b'#';
    assert!(matches!(decode_checkpoint(&garbled), Err(CoreError::CorruptHeader(_))));

    // same length, so only the semantic checks can catch it
    let renamed = header.replacen("decoder.head.weight", "decoder.head.wEight", 1);
    let mut swapped = bytes[..13].to_vec();
    swapped.extend_from_slice(renamed.as_bytes());
    swapped.extend_from_slice(&bytes[13 + header_len..]);
    assert!(matches!(decode_checkpoint(&swapped), Err(CoreError::CorruptHeader(_))));

    let reshaped = header.replacen("[8,7]", "[7,8]", 1);
    assert_ne!(reshaped, header);
    let mut wrong = bytes[..13].to_vec();
    wrong.extend_from_slice(reshaped.as_bytes());
    wrong.extend_from_slice(&bytes[13 + header_len..]);
    assert!(matches!(decode_checkpoint(&wrong), Err(CoreError::ParameterShape { .. })));
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_checkpoint(dir.path().join("none.ckpt")), Err(CoreError::Io(_))));
}
