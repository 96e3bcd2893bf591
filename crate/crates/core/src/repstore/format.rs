//! `SPINREPS` v1 reader and writer.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! [8]  magic "SPINREPS"
//! u32  version (1)
//! u8   rep_kind (0 = hidden_states, 1 = activations)
//! u32  n_layers, u32 dim, u32 n_classes, u32 n_sentences
//! u32  manifest_len, then manifest_len bytes of `key=value\n` UTF-8 text
//! per sentence: u32 n_tokens, u32 label, n_layers*n_tokens*dim f32 in [layer][token][dim] order
//! ```

use std::path::Path;

use super::{DumpManifest, RepKind, RepresentationDump, SentenceRecord, Split};
use crate::codec::{check_magic, ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const DUMP_MAGIC: &[u8; 8] = b"SPINREPS";
pub const DUMP_VERSION: u32 = 1;

const RESERVED_KEYS: [&str; 4] = ["model_name", "dataset_name", "split", "created_by"];

pub fn write_dump(dump: &RepresentationDump, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_dump(dump)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<RepresentationDump> {
    let bytes = std::fs::read(path)?;
    decode_dump(&bytes)
}

pub fn encode_dump(dump: &RepresentationDump) -> Result<Vec<u8>> {
    dump.validate()?;
    let manifest = manifest_text(&dump.manifest)?;

    let mut w = ByteWriter::new();
    w.bytes(DUMP_MAGIC);
    w.u32(DUMP_VERSION);
    w.u8(dump.rep_kind.code());
    w.len_u32(dump.n_layers)?;
    w.len_u32(dump.dim)?;
    w.len_u32(dump.manifest.n_classes)?;
    w.len_u32(dump.sentences.len())?;
    w.len_u32(manifest.len())?;
    w.bytes(manifest.as_bytes());
    for s in &dump.sentences {
        w.len_u32(s.n_tokens)?;
        w.len_u32(s.label)?;
        for &v in &s.data {
            w.f32(v);
        }
    }
    Ok(w.into_inner())
}

pub fn decode_dump(bytes: &[u8]) -> Result<RepresentationDump> {
    let mut r = ByteReader::new(bytes);
    check_magic(&mut r, DUMP_MAGIC)?;
    let version = r.u32()?;
    if version != DUMP_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let kind_code = r.u8()?;
    let rep_kind = RepKind::from_code(kind_code)
        .ok_or_else(|| Error::InvalidDump(format!("unknown rep_kind code {kind_code}")))?;
    let n_layers = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let n_classes = r.u32()? as usize;
    let n_sentences = r.u32()? as usize;
    let manifest_len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(manifest_len)?)
        .map_err(|e| Error::InvalidDump(format!("manifest is not UTF-8: {e}")))?;
    let manifest = parse_manifest(text, n_classes)?;

    // at least 8 bytes of per-sentence header each
    r.ensure(n_sentences.checked_mul(8))?;
    let mut sentences = Vec::with_capacity(n_sentences);
    for _ in 0..n_sentences {
        let n_tokens = r.u32()? as usize;
        let label = r.u32()? as usize;
        let n_values = n_layers
            .checked_mul(n_tokens)
            .and_then(|v| v.checked_mul(dim));
        r.ensure(n_values.and_then(|n| n.checked_mul(4)))?;
        let n_values = n_values.unwrap_or_default();
        let mut data = Vec::with_capacity(n_values);
        for _ in 0..n_values {
            data.push(r.f32()?);
        }
        sentences.push(SentenceRecord {
            n_tokens,
            label,
            data,
        });
    }
    r.finish()?;

    let dump = RepresentationDump {
        rep_kind,
        n_layers,
        dim,
        sentences,
        manifest,
    };
    dump.validate()?;
    Ok(dump)
}

fn check_field(kind: &str, s: &str) -> Result<()> {
    if s.contains('\n') || s.contains('\r') {
        return Err(Error::InvalidDump(format!("manifest {kind} {s:?} contains a line break")));
    }
    Ok(())
}

fn manifest_text(m: &DumpManifest) -> Result<String> {
    let mut out = String::new();
    let fixed = [
        ("model_name", m.model_name.as_str()),
        ("dataset_name", m.dataset_name.as_str()),
        ("split", m.split.as_str()),
        ("created_by", m.created_by.as_str()),
    ];
    for (k, v) in fixed {
        check_field("value", v)?;
        out.push_str(&format!("{k}={v}\n"));
    }
    for (k, v) in &m.extra {
        if k.is_empty() || k.contains('=') || RESERVED_KEYS.contains(&k.as_str()) {
            return Err(Error::InvalidDump(format!("invalid manifest key {k:?}")));
        }
        check_field("key", k)?;
        check_field("value", v)?;
        out.push_str(&format!("{k}={v}\n"));
    }
    Ok(out)
}

fn parse_manifest(text: &str, n_classes: usize) -> Result<DumpManifest> {
    let mut model_name = None;
    let mut dataset_name = None;
    let mut split = None;
    let mut created_by = None;
    let mut extra = std::collections::BTreeMap::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidDump(format!("manifest line without '=': {line:?}")))?;
        match k {
            "model_name" => model_name = Some(v.to_string()),
            "dataset_name" => dataset_name = Some(v.to_string()),
            "split" => split = Some(v.parse::<Split>().map_err(|e| Error::InvalidDump(e.to_string()))?),
            "created_by" => created_by = Some(v.to_string()),
            _ => {
                extra.insert(k.to_string(), v.to_string());
            }
        }
    }
    let missing = |k: &str| Error::InvalidDump(format!("manifest is missing {k:?}"));
    Ok(DumpManifest {
        model_name: model_name.ok_or_else(|| missing("model_name"))?,
        dataset_name: dataset_name.ok_or_else(|| missing("dataset_name"))?,
        split: split.ok_or_else(|| missing("split"))?,
        n_classes,
        created_by: created_by.unwrap_or_default(),
        extra,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dump(n_sentences: usize) -> RepresentationDump {
        let n_layers = 2;
        let dim = 3;
        let sentences = (0..n_sentences)
            .map(|i| {
                let n_tokens = 1 + i % 3;
                SentenceRecord {
                    n_tokens,
                    label: i % 2,
                    data: (0..n_layers * n_tokens * dim).map(|v| (v as f32) * 0.5 - i as f32).collect(),
                }
            })
            .collect();
        let mut manifest = DumpManifest::new("tiny", "unit", Split::Validation, 2);
        manifest.extra.insert("capture".into(), "block_output".into());
        RepresentationDump {
            rep_kind: RepKind::Activations,
            n_layers,
            dim,
            sentences,
            manifest,
        }
    }

    #[test]
    fn round_trip_small_dump() {
        let d = dump(3);
        let bytes = encode_dump(&d).unwrap();
        assert_eq!(&bytes[..8], b"SPINREPS");
        assert_eq!(decode_dump(&bytes).unwrap(), d);
    }

    #[test]
    fn write_and_read_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.spin");
        let d = dump(3);
        write_dump(&d, &path).unwrap();
        assert_eq!(read_dump(&path).unwrap(), d);
    }

    #[test]
    fn nan_is_rejected_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.spin");
        let mut d = dump(3);
        d.sentences[2].data[4] = f32::NAN;
        let err = write_dump(&d, &path).unwrap_err();
        assert_eq!(err.to_string(), "non-finite value at (2,0,1,1)");
        assert!(!path.exists());
    }

    #[test]
    fn empty_dump_is_rejected() {
        let d = dump(0);
        let err = encode_dump(&d).unwrap_err();
        assert_eq!(err.to_string(), "dump must contain at least one sentence");
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_dump(&dump(2)).unwrap();
        bytes[..8].copy_from_slice(b"XXXXXXXX");
        let err = decode_dump(&bytes).unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }));
        assert!(err.to_string().starts_with("bad magic"));
    }

    #[test]
    fn unsupported_version() {
        let mut bytes = encode_dump(&dump(2)).unwrap();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode_dump(&bytes), Err(Error::UnsupportedVersion(2))));
    }

    #[test]
    fn truncated_mid_tensor() {
        let bytes = encode_dump(&dump(3)).unwrap();
        let cut = bytes.len() - 6;
        let err = decode_dump(&bytes[..cut]).unwrap_err();
        assert_eq!(err.to_string(), format!("unexpected end of file at byte offset {cut}"));
    }

    #[test]
    fn huge_declared_sizes_fail_without_allocating() {
        let mut bytes = encode_dump(&dump(1)).unwrap();
        // n_sentences lives at offset 8 + 4 + 1 + 12
        bytes[25..29].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_dump(&bytes), Err(Error::UnexpectedEof { .. })));
    }

    #[test]
    fn trailing_bytes_are_an_error() {
        let mut bytes = encode_dump(&dump(1)).unwrap();
        bytes.push(0);
        assert!(matches!(decode_dump(&bytes), Err(Error::TrailingBytes { count: 1, .. })));
    }

    #[test]
    fn non_finite_in_file() {
        let mut bytes = encode_dump(&dump(1)).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_dump(&bytes), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn manifest_rejects_line_breaks() {
        let mut d = dump(1);
        d.manifest.model_name = "a\nb".into();
        assert!(encode_dump(&d).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn round_trip_is_identity(
            n_layers in 1usize..4,
            dim in 1usize..5,
            tokens in prop::collection::vec(1usize..4, 1..5),
            seed in any::<u32>(),
        ) {
            let sentences = tokens.iter().enumerate().map(|(i, &t)| SentenceRecord {
                n_tokens: t,
                label: i % 3,
                data: (0..n_layers * t * dim)
                    .map(|v| ((v as u32).wrapping_mul(2654435761).wrapping_add(seed) % 1000) as f32 / 7.0 - 50.0)
                    .collect(),
            }).collect();
            let d = RepresentationDump {
                rep_kind: RepKind::HiddenStates,
                n_layers,
                dim,
                sentences,
                manifest: DumpManifest::new("p", "q", Split::Test, 3),
            };
            let bytes = encode_dump(&d).unwrap();
            let back = decode_dump(&bytes).unwrap();
            prop_assert_eq!(&back, &d);
            prop_assert_eq!(encode_dump(&back).unwrap(), bytes);
        }
    }
}
