use std::sync::OnceLock;

use proptest::prelude::*;
use tempfile::TempDir;

use fpd::data::artifact::{decode_stack, encode_stack};
use fpd::data::{load_csv, load_stack, save_stack, write_csv, DatasetManifest, Resolution, SeriesBatch, SourceKind};
use fpd::hierarchy::{ExtractorStack, StackConfig};
use fpd::pipeline::{synth_corpus, train_stack};
use fpd::training::TrainConfig;
use fpd::Error;

fn trained() -> &'static (Vec<u8>, Vec<SeriesBatch>) {
    static STACK: OnceLock<(Vec<u8>, Vec<SeriesBatch>)> = OnceLock::new();
    STACK.get_or_init(|| {
        let corpus = synth_corpus(&[SourceKind::Solar, SourceKind::Wind], 8, 4).unwrap();
        let config = StackConfig {
            channels: 4,
            width: 8,
            blocks: 1,
            classes: vec!["solar".into(), "wind".into()],
            ..StackConfig::default()
        };
        let cfg = TrainConfig { epochs: 2, seed: 1, ..TrainConfig::default() };
        let (stack, _) = train_stack::<f64>(config, &corpus, &cfg).unwrap();
        (encode_stack(&stack).unwrap(), corpus)
    })
}

fn resealed(mut body: Vec<u8>) -> Vec<u8> {
    body.truncate(body.len() - 4);
    let crc = crc32(&body);
    body.extend_from_slice(&crc.to_le_bytes());
    body
}

// bitwise CRC-32 (IEEE), independent of the crate's implementation
fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            crc = if crc & 1 == 1 { (crc >> 1) ^ 0xEDB8_8320 } else { crc >> 1 };
        }
    }
    !crc
}

#[test]
fn save_load_extract_is_exact() {
    let (bytes, corpus) = trained();
    let stack: ExtractorStack<f64> = decode_stack(bytes).unwrap();
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("model.fpd");
    save_stack(&stack, &path).unwrap();
    assert_eq!(&std::fs::read(&path).unwrap(), bytes);
    let loaded: ExtractorStack<f64> = load_stack(&path).unwrap();
    assert_eq!(loaded.version(), stack.version());
    assert_eq!(encode_stack(&loaded).unwrap(), *bytes);
    for x in corpus {
        let a = stack.extract_hierarchical(x, Resolution::FiveMin, Resolution::Daily).unwrap();
        let b = loaded.extract_hierarchical(x, Resolution::FiveMin, Resolution::Daily).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn trailer_is_a_standard_crc32() {
    let (bytes, _) = trained();
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    assert_eq!(u32::from_le_bytes(tail.try_into().unwrap()), crc32(body));
    assert_eq!(&bytes[..8], b"FPDSTACK");
}

#[test]
fn unfinalized_stacks_are_not_saved() {
    let stack = ExtractorStack::<f64>::new(StackConfig::default()).unwrap();
    assert!(encode_stack(&stack).is_err());
}

#[test]
fn newer_format_version_is_refused() {
    let (bytes, _) = trained();
    let mut v = bytes.clone();
    v[8..12].copy_from_slice(&2u32.to_le_bytes());
    match decode_stack::<f64>(&resealed(v)) {
        Err(Error::Version { found: 2, supported: 1 }) => {}
        other => panic!("expected a version error, got {:?}", other.err()),
    }
}

#[test]
fn bad_magic_and_truncation_are_refused() {
    let (bytes, _) = trained();
    let mut v = bytes.clone();
    v[0] = b'X';
    assert!(matches!(decode_stack::<f64>(&v), Err(Error::Artifact(_))));
    assert!(decode_stack::<f64>(&bytes[..bytes.len() / 2]).is_err());
    assert!(decode_stack::<f64>(&bytes[..6]).is_err());
    let mut extended = bytes[..bytes.len() - 4].to_vec();
    extended.extend_from_slice(&[0; 8]);
    extended.extend_from_slice(&[0; 4]);
    assert!(matches!(decode_stack::<f64>(&resealed(extended)), Err(Error::Artifact(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn any_flipped_byte_is_detected(pos in 8usize.., bit in 0u8..8) {
        let (bytes, _) = trained();
        let pos = 8 + pos % (bytes.len() - 8);
        let mut v = bytes.clone();
        v[pos] ^= 1 << bit;
        let detected = matches!(decode_stack::<f64>(&v), Err(Error::Checksum { .. }));
        prop_assert!(detected, "flip at byte {} went unnoticed", pos);
    }

    #[test]
    fn csv_round_trip_is_exact(
        days in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 24), 1..5),
        label in "[a-z]{1,8}",
    ) {
        let dir = TempDir::new().unwrap();
        let batch = SeriesBatch::from_windows(Resolution::Hourly, &days).unwrap();
        let csv = dir.path().join("x.csv");
        write_csv(&batch, &csv, fpd::data::csv_io::default_start()).unwrap();
        let mut manifest = DatasetManifest::new(csv.to_string_lossy().into_owned(), Resolution::Hourly);
        manifest.label = Some(label.clone());
        let (loaded, report) = load_csv(&manifest).unwrap();
        prop_assert_eq!(loaded.as_slice(), batch.as_slice());
        prop_assert_eq!(loaded.source.as_deref(), Some(label.as_str()));
        prop_assert_eq!(report.rows_dropped, 0);
    }
}
