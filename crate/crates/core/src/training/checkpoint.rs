//! Binary checkpoints.
//!
//! Layout (little endian):
//! `"QGRL"` | u32 version | u64 body length | body | u64 checksum.
//! The body is a u32-length-prefixed JSON header followed by u64 array
//! count and array records `u32 name len | name | u32 rank | u64 dims | f64
//! data`. The checksum is the first 8 bytes of SHA-256 of the body.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::das::{DasConfig, DasModel, PREFIX as DAS_PREFIX};
use crate::error::{Error, Result};
use crate::numcore::{DenseArray, ParamStore};
use crate::qgmodel::{ModelConfig, QgModel};
use crate::textdata::{FeatureVocab, Vocabulary};

pub const MAGIC: &[u8; 4] = b"QGRL";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to resume generation or scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Snapshot of the run configuration.
    pub config: serde_json::Value,
    /// Generator and pointer networks with their `gen.`/`ptr.` parameters.
    pub generator: Option<(QgModel, ParamStore)>,
    pub das: Option<DasModel>,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    config: ModelConfig,
    vocab: Vocabulary,
    features: FeatureVocab,
}

/// Configuration and vocabulary of a stored DAS model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DasSection {
    pub config: DasConfig,
    pub vocab: Vocabulary,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: serde_json::Value,
    model: Option<ModelHeader>,
    das: Option<DasSection>,
}

fn checksum(body: &[u8]) -> u64 {
    let digest = Sha256::digest(body);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn encode_body(ck: &Checkpoint) -> Result<Vec<u8>> {
    let header = Header {
        config: ck.config.clone(),
        model: ck.generator.as_ref().map(|(m, _)| ModelHeader {
            config: m.config.clone(),
            vocab: m.vocab.clone(),
            features: m.fvocab.clone(),
        }),
        das: ck.das.as_ref().map(|d| DasSection {
            config: d.config,
            vocab: d.vocab.clone(),
        }),
    };
    let json = serde_json::to_vec(&header)?;
    let mut body = Vec::new();
    body.extend_from_slice(&(json.len() as u32).to_le_bytes());
    body.extend_from_slice(&json);
    let mut arrays: Vec<(&str, &DenseArray)> = Vec::new();
    if let Some((_, store)) = &ck.generator {
        arrays.extend(store.iter().map(|(n, p)| (n, &p.value)));
    }
    if let Some(d) = &ck.das {
        arrays.extend(d.store.iter().map(|(n, p)| (n, &p.value)));
    }
    body.extend_from_slice(&(arrays.len() as u64).to_le_bytes());
    for (name, a) in arrays {
        body.extend_from_slice(&(name.len() as u32).to_le_bytes());
        body.extend_from_slice(name.as_bytes());
        body.extend_from_slice(&(a.rank() as u32).to_le_bytes());
        for &d in a.shape() {
            body.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in a.data() {
            body.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(body)
}

pub fn to_bytes(ck: &Checkpoint) -> Result<Vec<u8>> {
    let body = encode_body(ck)?;
    let mut out = Vec::with_capacity(body.len() + 24);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&checksum(&body).to_le_bytes());
    Ok(out)
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let bytes = to_bytes(ck)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Argument(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp-{}", file_name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    from_bytes(&fs::read(path)?)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Integrity(format!(
                "body truncated: need {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Integrity(format!("size {v} overflows")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..bytes.len().min(4)]),
            std::str::from_utf8(MAGIC).expect("ascii")
        )));
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let version = r
        .u32()
        .map_err(|_| Error::Format("file ends before the version field".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "file has format version {version}, this build reads version {FORMAT_VERSION}"
        )));
    }
    let body_len = r.usize()?;
    let have = bytes.len() - r.pos;
    if have != body_len + 8 {
        return Err(Error::Integrity(format!(
            "header declares a {body_len}-byte body plus 8-byte checksum, found {have} bytes"
        )));
    }
    let body = r.take(body_len)?;
    let stored = r.u64()?;
    let actual = checksum(body);
    if stored != actual {
        return Err(Error::Integrity(format!(
            "checksum mismatch: stored {stored:016x}, computed {actual:016x}"
        )));
    }
    decode_body(body)
}

fn decode_body(body: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: body, pos: 0 };
    let hlen = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(hlen)?)
        .map_err(|e| Error::Format(format!("unreadable checkpoint header: {e}")))?;
    let count = r.usize()?;
    let mut gen = ParamStore::new();
    let mut das = ParamStore::new();
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|e| Error::Integrity(format!("array name is not UTF-8: {e}")))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|n| n.checked_mul(8).is_some())
            .ok_or_else(|| Error::Integrity(format!("array `{name}` has absurd shape {shape:?}")))?;
        let raw = r.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let value = DenseArray::new(shape, data)?;
        let target = if name.starts_with(DAS_PREFIX) {
            &mut das
        } else {
            &mut gen
        };
        target.insert(name, value)?;
    }
    if r.pos != body.len() {
        return Err(Error::Integrity(format!(
            "{} trailing bytes after arrays",
            body.len() - r.pos
        )));
    }

    let generator = match header.model {
        Some(h) => {
            let model = QgModel::new(h.config, h.vocab, h.features)?;
            check_layout("generator", &model.init_store(0)?, &gen)?;
            Some((model, gen))
        }
        None if gen.is_empty() => None,
        None => return Err(Error::Format("generator arrays without a model header".into())),
    };
    let das = match header.das {
        Some(h) => {
            let mut model = DasModel::new(h.vocab, h.config, &mut crate::numcore::Rng::new(0))?;
            check_layout("das", &model.store, &das)?;
            model.store = das;
            Some(model)
        }
        None if das.is_empty() => None,
        None => return Err(Error::Format("DAS arrays without a DAS header".into())),
    };
    Ok(Checkpoint {
        config: header.config,
        generator,
        das,
    })
}

fn check_layout(section: &str, expected: &ParamStore, found: &ParamStore) -> Result<()> {
    let want: Vec<(&str, &[usize])> = expected.iter().map(|(n, p)| (n, p.value.shape())).collect();
    let got: Vec<(&str, &[usize])> = found.iter().map(|(n, p)| (n, p.value.shape())).collect();
    if want != got {
        let missing: Vec<_> = want.iter().filter(|w| !got.contains(w)).map(|w| w.0).collect();
        let extra: Vec<_> = got.iter().filter(|g| !want.contains(g)).map(|g| g.0).collect();
        return Err(Error::Format(format!(
            "{section} arrays do not match the stored configuration (missing or reshaped: {missing:?}; unexpected: {extra:?})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textdata::{build_vocab, synth_corpus};

    fn sample() -> Checkpoint {
        let exs = synth_corpus(2, 6);
        let model = QgModel::new(
            ModelConfig::tiny(),
            build_vocab(&exs, 30).unwrap(),
            FeatureVocab::from_examples(&exs),
        )
        .unwrap();
        let store = model.init_store(4).unwrap();
        let das = DasModel::new(
            DasModel::vocab_for(&exs).unwrap(),
            DasConfig {
                emb_dim: 3,
                hidden: 4,
                out_dim: 2,
            },
            &mut crate::numcore::Rng::new(1),
        )
        .unwrap();
        Checkpoint {
            config: serde_json::json!({"seed": 4}),
            generator: Some((model, store)),
            das: Some(das),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.qgrl");
        save_checkpoint(&path, &ck).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.config, ck.config);
        let (m0, s0) = ck.generator.as_ref().unwrap();
        let (m1, s1) = back.generator.as_ref().unwrap();
        assert_eq!(m0, m1);
        assert!(s0.values_bitwise_eq(s1));
        assert!(ck
            .das
            .as_ref()
            .unwrap()
            .store
            .values_bitwise_eq(&back.das.as_ref().unwrap().store));
        assert_eq!(to_bytes(&back).unwrap(), fs::read(&path).unwrap());
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = to_bytes(&sample()).unwrap();

        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x10;
        assert!(matches!(from_bytes(&flipped), Err(Error::Integrity(_))));

        assert!(matches!(
            from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Integrity(_))
        ));

        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(from_bytes(&magic), Err(Error::Format(_))));

        let mut ver = bytes.clone();
        ver[4..8].copy_from_slice(&7u32.to_le_bytes());
        let msg = from_bytes(&ver).unwrap_err().to_string();
        assert!(msg.contains('7') && msg.contains(&FORMAT_VERSION.to_string()), "{msg}");
    }

    #[test]
    fn failed_save_leaves_no_partial_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing").join("m.qgrl");
        assert!(save_checkpoint(&path, &sample()).is_err());
        assert!(!path.exists());
    }
}
