use std::path::Path;

use entd::checkpoint::{decode, decode_raw, encode, load, save, FORMAT_VERSION};
use entd::Error;
use entd_core::tensor::SynthSpec;
use entd_core::trainer::fit;
use entd_core::{ModelKind, SparseTensor, TrainConfig};
use tempfile::TempDir;

fn data(count: bool) -> SparseTensor {
    let mut spec = SynthSpec::new(vec![7, 6, 5], 2, 3);
    if count {
        spec.signal = 0.5;
        spec.count(20.0).unwrap().tensor
    } else {
        spec.signal = 4.0;
        spec.binary().unwrap().tensor
    }
}

fn trained(model: ModelKind, count: bool) -> (TrainConfig, Vec<u8>) {
    let cfg = TrainConfig {
        model,
        rank: 2,
        inducing_u: 6,
        inducing_v: 4,
        batch_size: 40,
        epochs: 2,
        lr: 1e-2,
        learn_bandwidth: true,
        seed: 5,
        ..Default::default()
    };
    let (_, factors, state) = fit(&cfg, &data(count)).unwrap();
    let bytes = encode(&cfg, &factors, &state);
    (cfg, bytes)
}

fn cases() -> Vec<(ModelKind, bool)> {
    vec![
        (ModelKind::GptfProbit, false),
        (ModelKind::GptfPg, false),
        (ModelKind::GptfPg, true),
        (ModelKind::Ented, false),
        (ModelKind::Ented, true),
    ]
}

fn here() -> &'static Path {
    Path::new("mem")
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    for (model, count) in cases() {
        let (_, bytes) = trained(model, count);
        let p = dir.path().join("a.ckpt");
        std::fs::write(&p, &bytes).unwrap();
        let c = load(&p).unwrap();
        assert_eq!(c.state.kind(), model);
        let q = dir.path().join("b.ckpt");
        save(&q, &c.config, &c.factors, &c.state).unwrap();
        assert_eq!(std::fs::read(&q).unwrap(), bytes, "{model:?}");
        assert_eq!(load(&q).unwrap(), c);
    }
}

#[test]
fn the_configuration_is_echoed() {
    let (cfg, bytes) = trained(ModelKind::Ented, true);
    let c = decode(&bytes, here()).unwrap();
    assert_eq!(c.config, cfg);
    assert_eq!(c.state.zeta(), cfg.zeta);
}

#[test]
fn manifest_lists_every_array_once() {
    let expected: [(ModelKind, &[&str]); 3] = [
        (ModelKind::GptfProbit, &["inducing_u", "q_u.mean", "q_u.chol"]),
        (ModelKind::GptfPg, &["inducing_u", "q_u.eta1", "q_u.eta2"]),
        (ModelKind::Ented, &["inducing_u", "inducing_v", "q_u.eta1", "q_u.eta2", "q_v.eta1", "q_v.eta2"]),
    ];
    for (model, names) in expected {
        let (_, bytes) = trained(model, false);
        let (manifest, arrays) = decode_raw(&bytes, here()).unwrap();
        assert_eq!(manifest.version, FORMAT_VERSION);
        let mut want: Vec<String> = vec!["factor.0".into(), "factor.1".into(), "factor.2".into(), "bandwidth".into()];
        want.extend(names.iter().map(|s| s.to_string()));
        let got: Vec<String> = manifest.arrays.iter().map(|a| a.name.clone()).collect();
        assert_eq!(got, want);
        assert_eq!(arrays.len(), want.len());
    }
}

fn format_error(bytes: &[u8]) -> String {
    match decode(bytes, here()) {
        Err(e @ Error::Format { .. }) => e.to_string(),
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn damaged_files_are_rejected() {
    let (_, bytes) = trained(ModelKind::Ented, false);
    assert!(format_error(&bytes[..bytes.len() - 8]).contains("payload"));
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(format_error(&longer).contains("payload"));
    assert!(format_error(&bytes[..4]).contains("too short"));
    let mut huge = bytes.clone();
    huge[..8].copy_from_slice(&u64::MAX.to_le_bytes());
    assert!(format_error(&huge).contains("exceeds"));
    assert!(format_error(b"12345678garbage").contains("manifest"));
}

fn with_manifest(bytes: &[u8], edit: impl Fn(&mut serde_json::Value)) -> Vec<u8> {
    let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let mut manifest: serde_json::Value = serde_json::from_slice(&bytes[8..8 + len]).unwrap();
    edit(&mut manifest);
    let json = serde_json::to_vec(&manifest).unwrap();
    let mut out = (json.len() as u64).to_le_bytes().to_vec();
    out.extend(json);
    out.extend_from_slice(&bytes[8 + len..]);
    out
}

#[test]
fn version_and_content_mismatches_are_rejected() {
    let (_, bytes) = trained(ModelKind::GptfPg, false);
    let newer = with_manifest(&bytes, |m| m["version"] = serde_json::json!(FORMAT_VERSION + 1));
    assert!(format_error(&newer).contains("version"));
    let other = with_manifest(&bytes, |m| m["format"] = serde_json::json!("npy"));
    assert!(format_error(&other).contains("not a checkpoint"));
    let renamed = with_manifest(&bytes, |m| m["arrays"][4]["name"] = serde_json::json!("inducing_w"));
    assert!(format_error(&renamed).contains("missing array"));
    let twice = with_manifest(&bytes, |m| m["arrays"][1]["name"] = serde_json::json!("factor.0"));
    assert!(format_error(&twice).contains("twice"));
}

#[test]
fn a_flipped_natural_precision_is_rejected() {
    let (_, bytes) = trained(ModelKind::GptfPg, false);
    let (manifest, arrays) = decode_raw(&bytes, here()).unwrap();
    let offset: usize = 8
        + u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize
        + arrays.iter().take_while(|(n, _)| n != "q_u.eta2").map(|(_, m)| m.as_slice().len() * 8).sum::<usize>();
    assert_eq!(manifest.arrays.last().unwrap().name, "q_u.eta2");
    let mut flipped = bytes.clone();
    for chunk in flipped[offset..].chunks_exact_mut(8) {
        let v = -f64::from_le_bytes(chunk.try_into().unwrap());
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    assert!(matches!(decode(&flipped, here()), Err(Error::Core(_))));
}
