//! Binary artifact formats: datastore (NKDS), neighbor cache (NKNC),
//! checkpoint (NKCP), plus the corpus TSV files.
//!
//! Everything is little-endian with a 4-byte magic, a u32 format version,
//! and a trailing CRC32 over all preceding bytes. Encoders are
//! deterministic: the same in-memory value always produces the same bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use dnkd_core::corpus::{ParallelCorpus, SentencePair};
use dnkd_core::datastore::{Datastore, DatastoreError, Origin};
use dnkd_core::seq2seq::{ModelConfig, Parameters, Seq2SeqError};
use dnkd_core::teacher::NeighborCache;

pub const DATASTORE_MAGIC: [u8; 4] = *b"NKDS";
pub const CACHE_MAGIC: [u8; 4] = *b"NKNC";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"NKCP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic (expected {expected:?})")]
    BadMagic { expected: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("file truncated")]
    Truncated,
    #[error("trailing bytes after payload")]
    TrailingBytes,
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
    #[error("cache position {origin} has {got} neighbors, the format needs exactly k = {k}")]
    ShortNeighborSet { origin: Origin, got: usize, k: usize },
    #[error(transparent)]
    Store(#[from] DatastoreError),
    #[error(transparent)]
    Model(#[from] Seq2SeqError),
}

fn io_err(path: &Path, source: std::io::Error) -> FormatError {
    FormatError::Io { path: path.display().to_string(), source }
}

// ---------------------------------------------------------------------------
// little-endian buffer primitives
// ---------------------------------------------------------------------------

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    /// Append the CRC32 of everything written so far and return (bytes, crc).
    fn finish(mut self) -> (Vec<u8>, u32) {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        (self.buf, crc)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.pos + n > self.buf.len() {
            return Err(FormatError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn done(&self) -> Result<(), FormatError> {
        if self.pos != self.buf.len() {
            return Err(FormatError::TrailingBytes);
        }
        Ok(())
    }
}

/// Validate header and trailing CRC; returns the payload reader (magic and
/// version consumed) and the stored CRC.
fn open_payload<'a>(bytes: &'a [u8], magic: &[u8; 4]) -> Result<(Reader<'a>, u32), FormatError> {
    if bytes.len() < 12 {
        return Err(FormatError::Truncated);
    }
    if &bytes[..4] != magic {
        return Err(FormatError::BadMagic { expected: *magic });
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(FormatError::ChecksumMismatch { stored, computed });
    }
    let mut r = Reader::new(body);
    r.take(4)?; // magic
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::VersionMismatch { expected: FORMAT_VERSION, found: version });
    }
    Ok((r, stored))
}

// ---------------------------------------------------------------------------
// datastore (NKDS)
// ---------------------------------------------------------------------------

/// magic, version, dim u32, vocab u32, count u64, then per entry
/// `[key dim×f32][value u32][origin 2×u32]`, CRC32.
pub fn encode_datastore(store: &Datastore) -> (Vec<u8>, u32) {
    let mut w = Writer::new();
    w.bytes(&DATASTORE_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(store.dim() as u32);
    w.u32(store.vocab_size());
    w.u64(store.len() as u64);
    for i in 0..store.len() {
        for &k in store.key(i) {
            w.f32(k);
        }
        w.u32(store.value(i));
        let o = store.origin(i);
        w.u32(o.sentence);
        w.u32(o.position);
    }
    w.finish()
}

/// Returns the datastore and its file CRC (the provenance identity other
/// artifacts embed).
pub fn decode_datastore(bytes: &[u8]) -> Result<(Datastore, u32), FormatError> {
    let (mut r, crc) = open_payload(bytes, &DATASTORE_MAGIC)?;
    let dim = r.u32()? as usize;
    let vocab = r.u32()?;
    let count = r.u64()?;
    let mut store = Datastore::new(dim, vocab)?;
    let mut key = vec![0.0f32; dim];
    for _ in 0..count {
        for k in key.iter_mut() {
            *k = r.f32()?;
        }
        let value = r.u32()?;
        let sentence = r.u32()?;
        let position = r.u32()?;
        store.add_entry(&key, value, Origin::new(sentence, position))?;
    }
    r.done()?;
    Ok((store, crc))
}

pub fn save_datastore(store: &Datastore, path: &Path) -> Result<u32, FormatError> {
    let (bytes, crc) = encode_datastore(store);
    fs::write(path, bytes).map_err(|e| io_err(path, e))?;
    Ok(crc)
}

pub fn load_datastore(path: &Path) -> Result<(Datastore, u32), FormatError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode_datastore(&bytes)
}

// ---------------------------------------------------------------------------
// neighbor cache (NKNC)
// ---------------------------------------------------------------------------

/// magic, version, k u32, datastore CRC u32, position count u64, then per
/// position `[sentence u32, position u32][k × (distance f64, token u32)]`,
/// CRC32. Positions are sorted by origin.
pub fn encode_neighbor_cache(cache: &NeighborCache) -> Result<(Vec<u8>, u32), FormatError> {
    let mut w = Writer::new();
    w.bytes(&CACHE_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(cache.k() as u32);
    w.u32(cache.store_checksum());
    w.u64(cache.len() as u64);
    for (origin, pairs) in cache.iter() {
        if pairs.len() != cache.k() {
            return Err(FormatError::ShortNeighborSet { origin, got: pairs.len(), k: cache.k() });
        }
        w.u32(origin.sentence);
        w.u32(origin.position);
        for &(d, t) in pairs {
            w.f64(d);
            w.u32(t);
        }
    }
    Ok(w.finish())
}

pub fn decode_neighbor_cache(bytes: &[u8]) -> Result<NeighborCache, FormatError> {
    let (mut r, _) = open_payload(bytes, &CACHE_MAGIC)?;
    let k = r.u32()? as usize;
    let store_crc = r.u32()?;
    let count = r.u64()?;
    let mut positions = std::collections::BTreeMap::new();
    for _ in 0..count {
        let sentence = r.u32()?;
        let position = r.u32()?;
        let mut pairs = Vec::with_capacity(k);
        for _ in 0..k {
            let d = r.f64()?;
            let t = r.u32()?;
            pairs.push((d, t));
        }
        if positions.insert(Origin::new(sentence, position), pairs).is_some() {
            return Err(FormatError::Malformed {
                what: "neighbor cache",
                detail: format!("duplicate origin ({sentence}, {position})"),
            });
        }
    }
    r.done()?;
    Ok(NeighborCache::from_parts(k, store_crc, positions))
}

pub fn save_neighbor_cache(cache: &NeighborCache, path: &Path) -> Result<u32, FormatError> {
    let (bytes, crc) = encode_neighbor_cache(cache)?;
    fs::write(path, bytes).map_err(|e| io_err(path, e))?;
    Ok(crc)
}

pub fn load_neighbor_cache(path: &Path) -> Result<NeighborCache, FormatError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode_neighbor_cache(&bytes)
}

// ---------------------------------------------------------------------------
// checkpoint (NKCP)
// ---------------------------------------------------------------------------

/// magic, version, config block (u32 length + sorted key=value UTF-8 lines),
/// tensor count u32, then per tensor `[name len u32][name][rank u32]`
/// `[dims rank×u32][data numel×f32]`, CRC32.
///
/// The config block carries the model config plus free-form provenance
/// entries (corpus CRC, training mode, seed). Tensor data is stored in f32;
/// loading widens back to f64.
pub fn encode_checkpoint(params: &Parameters, extra: &BTreeMap<String, String>) -> (Vec<u8>, u32) {
    let mut w = Writer::new();
    w.bytes(&CHECKPOINT_MAGIC);
    w.u32(FORMAT_VERSION);

    let cfg = &params.config;
    let mut entries: BTreeMap<String, String> = extra.clone();
    entries.insert("vocab_size_src".into(), cfg.vocab_size_src.to_string());
    entries.insert("vocab_size_tgt".into(), cfg.vocab_size_tgt.to_string());
    entries.insert("hidden_dim".into(), cfg.hidden_dim.to_string());
    entries.insert("num_layers".into(), cfg.num_layers.to_string());
    entries.insert("num_heads".into(), cfg.num_heads.to_string());
    entries.insert("ffn_dim".into(), cfg.ffn_dim.to_string());
    entries.insert("seed".into(), cfg.seed.to_string());
    let block: String = entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    w.u32(block.len() as u32);
    w.bytes(block.as_bytes());

    let tensors = params.tensors();
    w.u32(tensors.len() as u32);
    for t in &tensors {
        w.u32(t.name.len() as u32);
        w.bytes(t.name.as_bytes());
        w.u32(t.dims.len() as u32);
        for &d in &t.dims {
            w.u32(d as u32);
        }
        for &v in t.data {
            w.f32(v as f32);
        }
    }
    w.finish()
}

fn block_get<'a>(block: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str, FormatError> {
    block.get(key).map(|s| s.as_str()).ok_or(FormatError::Malformed {
        what: "checkpoint config",
        detail: format!("missing key {key}"),
    })
}

fn block_parse<T: core::str::FromStr>(
    block: &BTreeMap<String, String>,
    key: &str,
) -> Result<T, FormatError> {
    block_get(block, key)?.parse().map_err(|_| FormatError::Malformed {
        what: "checkpoint config",
        detail: format!("invalid value for {key}"),
    })
}

pub fn decode_checkpoint(
    bytes: &[u8],
) -> Result<(Parameters, BTreeMap<String, String>), FormatError> {
    let (mut r, _) = open_payload(bytes, &CHECKPOINT_MAGIC)?;
    let block_len = r.u32()? as usize;
    let block_bytes = r.take(block_len)?;
    let block_text = std::str::from_utf8(block_bytes).map_err(|_| FormatError::Malformed {
        what: "checkpoint config",
        detail: "config block is not UTF-8".into(),
    })?;
    let mut block: BTreeMap<String, String> = BTreeMap::new();
    for line in block_text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(FormatError::Malformed {
            what: "checkpoint config",
            detail: format!("line without '=': {line}"),
        })?;
        block.insert(k.trim().to_string(), v.trim().to_string());
    }
    let config = ModelConfig {
        vocab_size_src: block_parse(&block, "vocab_size_src")?,
        vocab_size_tgt: block_parse(&block, "vocab_size_tgt")?,
        hidden_dim: block_parse(&block, "hidden_dim")?,
        num_layers: block_parse(&block, "num_layers")?,
        num_heads: block_parse(&block, "num_heads")?,
        ffn_dim: block_parse(&block, "ffn_dim")?,
        seed: block_parse(&block, "seed")?,
    };

    let mut params = Parameters::zeros(&config);
    let expected: Vec<(String, Vec<usize>)> =
        params.tensors().iter().map(|t| (t.name.clone(), t.dims.clone())).collect();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(FormatError::Malformed {
            what: "checkpoint",
            detail: format!("{} tensors stored, model needs {}", count, expected.len()),
        });
    }
    {
        let mut slots = params.data_mut();
        for (i, (name, dims)) in expected.iter().enumerate() {
            let name_len = r.u32()? as usize;
            let stored_name =
                std::str::from_utf8(r.take(name_len)?).map_err(|_| FormatError::Malformed {
                    what: "checkpoint",
                    detail: "tensor name is not UTF-8".into(),
                })?;
            if stored_name != name {
                return Err(FormatError::Malformed {
                    what: "checkpoint",
                    detail: format!("tensor {i} is {stored_name}, expected {name}"),
                });
            }
            let rank = r.u32()? as usize;
            let mut stored_dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                stored_dims.push(r.u32()? as usize);
            }
            if &stored_dims != dims {
                return Err(FormatError::Malformed {
                    what: "checkpoint",
                    detail: format!("tensor {name} dims {stored_dims:?}, expected {dims:?}"),
                });
            }
            let slot = &mut slots[i];
            for v in slot.iter_mut() {
                *v = r.f32()? as f64;
            }
        }
    }
    r.done()?;
    Ok((params, block))
}

pub fn save_checkpoint(
    params: &Parameters,
    extra: &BTreeMap<String, String>,
    path: &Path,
) -> Result<u32, FormatError> {
    let (bytes, crc) = encode_checkpoint(params, extra);
    fs::write(path, bytes).map_err(|e| io_err(path, e))?;
    Ok(crc)
}

pub fn load_checkpoint(path: &Path) -> Result<(Parameters, BTreeMap<String, String>), FormatError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode_checkpoint(&bytes)
}

// ---------------------------------------------------------------------------
// corpus TSV
// ---------------------------------------------------------------------------

/// One sentence pair per line: space-separated source ids, a tab,
/// space-separated target ids.
pub fn corpus_to_tsv(corpus: &ParallelCorpus) -> String {
    let mut out = String::new();
    for pair in &corpus.pairs {
        let src: Vec<String> = pair.src.iter().map(|t| t.to_string()).collect();
        let tgt: Vec<String> = pair.tgt.iter().map(|t| t.to_string()).collect();
        out.push_str(&src.join(" "));
        out.push('\t');
        out.push_str(&tgt.join(" "));
        out.push('\n');
    }
    out
}

pub fn corpus_from_tsv(text: &str) -> Result<ParallelCorpus, FormatError> {
    let mut pairs = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (src, tgt) = line.split_once('\t').ok_or(FormatError::Malformed {
            what: "corpus tsv",
            detail: format!("line {} has no tab separator", ln + 1),
        })?;
        let parse_ids = |s: &str| -> Result<Vec<u32>, FormatError> {
            s.split_whitespace()
                .map(|tok| {
                    tok.parse::<u32>().map_err(|_| FormatError::Malformed {
                        what: "corpus tsv",
                        detail: format!("line {}: bad token id {tok:?}", ln + 1),
                    })
                })
                .collect()
        };
        pairs.push(SentencePair { src: parse_ids(src)?, tgt: parse_ids(tgt)? });
    }
    Ok(ParallelCorpus { pairs })
}

pub fn save_corpus(corpus: &ParallelCorpus, path: &Path) -> Result<(), FormatError> {
    fs::write(path, corpus_to_tsv(corpus)).map_err(|e| io_err(path, e))
}

pub fn load_corpus(path: &Path) -> Result<ParallelCorpus, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    corpus_from_tsv(&text)
}

/// CRC32 of the canonical TSV encoding, used for provenance tracking.
pub fn corpus_crc(corpus: &ParallelCorpus) -> u32 {
    crc32fast::hash(corpus_to_tsv(corpus).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_store(n: u32, dim: usize, seed: u64) -> Datastore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = Datastore::new(dim, 30).unwrap();
        for i in 0..n {
            let key: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            store.add_entry(&key, rng.random_range(0..30), Origin::new(i, i % 7)).unwrap();
        }
        store
    }

    #[test]
    fn datastore_roundtrip_bitwise() {
        let store = sample_store(3, 4, 1);
        let (bytes, crc) = encode_datastore(&store);
        let (loaded, crc2) = decode_datastore(&bytes).unwrap();
        assert_eq!(crc, crc2);
        let (bytes2, _) = encode_datastore(&loaded);
        assert_eq!(bytes, bytes2);
        for i in 0..store.len() {
            assert_eq!(store.key(i), loaded.key(i));
            assert_eq!(store.value(i), loaded.value(i));
            assert_eq!(store.origin(i), loaded.origin(i));
        }
    }

    #[test]
    fn datastore_corruption_detected() {
        let store = sample_store(5, 3, 2);
        let (mut bytes, _) = encode_datastore(&store);
        // magic
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_datastore(&bad).unwrap_err(), FormatError::BadMagic { .. }));
        // version (fix up the CRC so the version check is what fires)
        let mut bad = bytes.clone();
        bad[4] = 9;
        let n = bad.len();
        let crc = crc32fast::hash(&bad[..n - 4]);
        bad[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            decode_datastore(&bad).unwrap_err(),
            FormatError::VersionMismatch { found: 9, .. }
        ));
        // truncation
        assert!(matches!(
            decode_datastore(&bytes[..bytes.len() - 6]).unwrap_err(),
            FormatError::ChecksumMismatch { .. } | FormatError::Truncated
        ));
        assert!(matches!(decode_datastore(&bytes[..6]).unwrap_err(), FormatError::Truncated));
        // payload flip
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        assert!(matches!(
            decode_datastore(&bytes).unwrap_err(),
            FormatError::ChecksumMismatch { .. }
        ));
    }

    #[test]
    fn million_entry_roundtrip_preserves_queries() {
        let store = sample_store(1_000_000, 8, 3);
        let (bytes, _) = encode_datastore(&store);
        let (loaded, _) = decode_datastore(&bytes).unwrap();
        assert_eq!(store.len(), loaded.len());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let q: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            assert_eq!(store.query(&q, 8, None).unwrap(), loaded.query(&q, 8, None).unwrap());
        }
    }

    #[test]
    fn cache_roundtrip_and_errors() {
        let store = sample_store(50, 4, 5);
        let records: Vec<dnkd_core::datastore::KeyRecord> = (0..store.len())
            .map(|i| dnkd_core::datastore::KeyRecord {
                origin: store.origin(i),
                key: store.key(i).to_vec(),
                value: store.value(i),
            })
            .collect();
        let mut cache =
            dnkd_core::teacher::precompute_neighbor_cache(&store, &records, 4, true).unwrap();
        cache.set_store_checksum(0xdead_beef);
        let (bytes, _) = encode_neighbor_cache(&cache).unwrap();
        let loaded = decode_neighbor_cache(&bytes).unwrap();
        assert_eq!(loaded, cache);
        let (bytes2, _) = encode_neighbor_cache(&loaded).unwrap();
        assert_eq!(bytes, bytes2);

        let mut corrupt = bytes.clone();
        let mid = corrupt.len() / 2;
        corrupt[mid] ^= 1;
        assert!(matches!(
            decode_neighbor_cache(&corrupt).unwrap_err(),
            FormatError::ChecksumMismatch { .. }
        ));
    }

    #[test]
    fn cache_with_short_position_cannot_encode() {
        // k = 60 exceeds the 49 eligible entries under self-exclusion
        let store = sample_store(50, 4, 6);
        let records: Vec<dnkd_core::datastore::KeyRecord> = (0..store.len())
            .map(|i| dnkd_core::datastore::KeyRecord {
                origin: store.origin(i),
                key: store.key(i).to_vec(),
                value: store.value(i),
            })
            .collect();
        let cache =
            dnkd_core::teacher::precompute_neighbor_cache(&store, &records, 60, true).unwrap();
        assert!(matches!(
            encode_neighbor_cache(&cache).unwrap_err(),
            FormatError::ShortNeighborSet { .. }
        ));
    }

    #[test]
    fn checkpoint_roundtrip_bitwise() {
        let cfg = ModelConfig {
            vocab_size_src: 9,
            vocab_size_tgt: 11,
            hidden_dim: 8,
            num_layers: 1,
            num_heads: 2,
            ffn_dim: 12,
            seed: 77,
        };
        let params = Parameters::init(&cfg).unwrap();
        let mut extra = BTreeMap::new();
        extra.insert("mode".to_string(), "ce".to_string());
        extra.insert("corpus_crc32".to_string(), "0x12345678".to_string());
        let (bytes, _) = encode_checkpoint(&params, &extra);
        let (loaded, block) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(loaded.config, cfg);
        assert_eq!(block.get("mode").unwrap(), "ce");
        // f64 -> f32 -> f64 is lossy once, then stable
        let (bytes2, _) = encode_checkpoint(&loaded, &extra);
        assert_eq!(bytes, bytes2);

        let mut corrupt = bytes.clone();
        corrupt[1] = b'!';
        assert!(matches!(decode_checkpoint(&corrupt).unwrap_err(), FormatError::BadMagic { .. }));
    }

    #[test]
    fn corpus_tsv_roundtrip() {
        let corpus = ParallelCorpus {
            pairs: vec![
                SentencePair { src: vec![1, 2, 3], tgt: vec![9, 8] },
                SentencePair { src: vec![0], tgt: vec![4, 5, 6] },
            ],
        };
        let text = corpus_to_tsv(&corpus);
        assert_eq!(text, "1 2 3\t9 8\n0\t4 5 6\n");
        assert_eq!(corpus_from_tsv(&text).unwrap(), corpus);
        assert!(corpus_from_tsv("1 2 3 no tab").is_err());
        assert!(corpus_from_tsv("1 x\t2").is_err());
        assert_ne!(corpus_crc(&corpus), 0);
    }
}
