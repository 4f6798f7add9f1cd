//! Feature archive and normalization-statistics files.
//!
//! Archive layout, all integers `u32` little-endian:
//!
//! ```text
//! "FBK1" version header_len header(UTF-8 key=value lines) count
//! per utterance:
//!   id_len id T channels bins  T·channels·bins f32 values
//!   "LBL1" T u32 labels   |   "NONE"
//! ```

use std::path::Path;

use densenet_core::{CmvnStats, UtteranceFeatures};

use crate::codec::{read_file, write_atomic, Decoder, Encoder};
use crate::error::{Error, FormatError, Result};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"FBK1";
pub const ARCHIVE_VERSION: u32 = 1;
const LABEL_TAG: &[u8; 4] = b"LBL1";
const NO_LABEL_TAG: &[u8; 4] = b"NONE";

pub const CMVN_MAGIC: &[u8; 4] = b"CMVN";
pub const CMVN_VERSION: u32 = 1;

/// Decoded archive: provenance header and utterances in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    /// `key=value` pairs describing how the features were made.
    pub header: Vec<(String, String)>,
    pub utterances: Vec<UtteranceFeatures>,
}

impl Archive {
    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn encode_archive(header: &[(String, String)], utts: &[UtteranceFeatures]) -> Vec<u8> {
    let mut e = Encoder::default();
    e.bytes(ARCHIVE_MAGIC);
    e.u32(ARCHIVE_VERSION);
    let text: String = header.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    e.str(&text);
    e.len(utts.len());
    for u in utts {
        e.str(u.id());
        e.len(u.num_frames());
        e.len(u.channels());
        e.len(u.bins());
        e.f32s(u.values());
        match u.labels() {
            Some(l) => {
                e.bytes(LABEL_TAG);
                e.u32s(l);
            }
            None => e.bytes(NO_LABEL_TAG),
        }
    }
    e.buf
}

pub fn decode_archive(bytes: &[u8]) -> Result<Archive, FormatError> {
    let mut d = Decoder::new(bytes);
    d.magic(ARCHIVE_MAGIC, "archive magic")?;
    let at = d.offset();
    let version = d.u32("version")?;
    if version != ARCHIVE_VERSION {
        return Err(d.error_at(at, format!("unsupported archive version {version}, expected {ARCHIVE_VERSION}")));
    }
    let text = d.str("header")?;
    let header = text
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            let (k, v) = l.split_once('=').unwrap_or((l, ""));
            (k.to_string(), v.to_string())
        })
        .collect();
    let count = d.len("utterance count")?;
    let mut utterances = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        d.record = Some(i);
        let start = d.offset();
        let id = d.str("utterance id")?;
        let t = d.len("frame count")?;
        let c = d.len("channel count")?;
        let b = d.len("bin count")?;
        let n = t
            .checked_mul(c)
            .and_then(|v| v.checked_mul(b))
            .ok_or_else(|| d.error(format!("utterance {id}: {t}x{c}x{b} overflows")))?;
        let values = d.f32s(n, "feature values")?;
        let tag_at = d.offset();
        let labels = match d.take(4, "label tag")? {
            tag if tag == LABEL_TAG => Some(d.u32s(t, "labels")?),
            tag if tag == NO_LABEL_TAG => None,
            _ => return Err(d.error_at(tag_at, "expected label tag LBL1 or NONE")),
        };
        let utt = UtteranceFeatures::new(id, values, t, c, b, labels)
            .map_err(|e| d.error_at(start, format!("invalid utterance: {e}")))?;
        utterances.push(utt);
    }
    d.record = None;
    d.finish("last utterance")?;
    Ok(Archive { header, utterances })
}

pub fn write_archive(path: &Path, header: &[(String, String)], utts: &[UtteranceFeatures]) -> Result<()> {
    write_atomic(path, &encode_archive(header, utts))
}

pub fn read_archive(path: &Path) -> Result<Archive> {
    decode_archive(&read_file(path)?).map_err(|e| Error::format(path, e))
}

/// `"CMVN" version channels bins mean[f64] var[f64]`.
pub fn encode_cmvn(stats: &CmvnStats) -> Vec<u8> {
    let mut e = Encoder::default();
    e.bytes(CMVN_MAGIC);
    e.u32(CMVN_VERSION);
    e.len(stats.channels);
    e.len(stats.bins);
    e.f64s(&stats.mean);
    e.f64s(&stats.var);
    e.buf
}

pub fn decode_cmvn(bytes: &[u8]) -> Result<CmvnStats, FormatError> {
    let mut d = Decoder::new(bytes);
    d.magic(CMVN_MAGIC, "cmvn magic")?;
    let at = d.offset();
    let version = d.u32("version")?;
    if version != CMVN_VERSION {
        return Err(d.error_at(at, format!("unsupported cmvn version {version}")));
    }
    let channels = d.len("channels")?;
    let bins = d.len("bins")?;
    let n = channels.checked_mul(bins).ok_or_else(|| d.error("dimension overflows"))?;
    let mean = d.f64s(n, "means")?;
    let var = d.f64s(n, "variances")?;
    d.finish("variances")?;
    let stats = CmvnStats { channels, bins, mean, var };
    stats.validate().map_err(|e| d.error_at(0, e.to_string()))?;
    Ok(stats)
}

pub fn write_cmvn(path: &Path, stats: &CmvnStats) -> Result<()> {
    write_atomic(path, &encode_cmvn(stats))
}

pub fn read_cmvn(path: &Path) -> Result<CmvnStats> {
    decode_cmvn(&read_file(path)?).map_err(|e| Error::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn utt(id: &str, t: usize, labels: bool, seed: u32) -> UtteranceFeatures {
        let v = (0..t * 3 * 4).map(|i| ((i as u32).wrapping_mul(2654435761) ^ seed) as f32 / 1e9 - 2.0).collect();
        let l = labels.then(|| (0..t as u32).map(|x| x * 7 % 5).collect());
        UtteranceFeatures::new(id, v, t, 3, 4, l).unwrap()
    }

    fn header() -> Vec<(String, String)> {
        vec![("sample_rate".into(), "16000".into()), ("note".into(), "a=b".into())]
    }

    #[test]
    fn empty_archive() {
        let bytes = encode_archive(&[], &[]);
        let a = decode_archive(&bytes).unwrap();
        assert!(a.utterances.is_empty() && a.header.is_empty());
    }

    #[test]
    fn round_trip_with_and_without_labels() {
        let us = vec![utt("a", 3, true, 1), utt("b", 1, false, 2), utt("ü", 5, true, 3)];
        let bytes = encode_archive(&header(), &us);
        let a = decode_archive(&bytes).unwrap();
        assert_eq!(a.utterances, us);
        assert_eq!(a.header_value("note"), Some("a=b"));
        assert_eq!(encode_archive(&a.header, &a.utterances), bytes);
    }

    #[test]
    fn truncation_names_the_record() {
        let us = vec![utt("a", 3, true, 1), utt("b", 4, false, 2), utt("c", 2, true, 3)];
        let bytes = encode_archive(&header(), &us);
        let second_start = encode_archive(&header(), &us[..1]).len() + 10;
        let err = decode_archive(&bytes[..second_start]).unwrap_err();
        assert_eq!(err.record, Some(1));
        assert!(err.msg.contains("truncated"));
        let err = decode_archive(&bytes[..bytes.len() - 1]).unwrap_err();
        assert_eq!(err.record, Some(2));
    }

    #[test]
    fn bad_magic_version_and_trailing() {
        let mut bytes = encode_archive(&header(), &[utt("a", 2, true, 0)]);
        assert!(decode_archive(b"FBK2xxxx").unwrap_err().msg.contains("magic"));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        let err = decode_archive(&v2).unwrap_err();
        assert_eq!(err.offset, 4);
        assert!(err.msg.contains("version"));
        bytes.push(0);
        assert!(decode_archive(&bytes).unwrap_err().msg.contains("trailing"));
    }

    #[test]
    fn cmvn_round_trip() {
        let s = CmvnStats { channels: 1, bins: 3, mean: vec![0.1, -2.0, 3.5], var: vec![1.0, 1e-8, 7.25] };
        assert_eq!(decode_cmvn(&encode_cmvn(&s)).unwrap(), s);
        let mut bad = encode_cmvn(&s);
        bad.truncate(bad.len() - 3);
        assert!(decode_cmvn(&bad).is_err());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.fbk");
        let us = vec![utt("a", 3, true, 9)];
        write_archive(&p, &header(), &us).unwrap();
        assert_eq!(read_archive(&p).unwrap().utterances, us);
        assert!(!dir.path().join("x.fbk.tmp").exists());
        assert!(matches!(read_archive(&dir.path().join("nope")), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(vals in prop::collection::vec(prop::num::f32::NORMAL | prop::num::f32::SUBNORMAL | prop::num::f32::ZERO, 1..60)) {
            let t = vals.len();
            let u = UtteranceFeatures::new("p", vals, t, 1, 1, Some((0..t as u32).collect())).unwrap();
            let a = decode_archive(&encode_archive(&[], core::slice::from_ref(&u))).unwrap();
            let got: Vec<u32> = a.utterances[0].values().iter().map(|v| v.to_bits()).collect();
            let want: Vec<u32> = u.values().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(got, want);
        }
    }
}
