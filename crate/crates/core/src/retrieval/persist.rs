//! Knowledge-base file format.
//!
//! ```text
//! "RIDDEKB1"  u32 version  u32 T  u32 L  u32 d  u64 n  [u8; 32] encoder hash
//! n × (u64 id, T×f64 context, L×f64 horizon, d×f64 embedding)
//! u64 CRC-64/XZ of everything above
//! ```
//!
//! All integers and floats are little-endian. A JSON sidecar next to the
//! file (`<path>.json`) mirrors the header and lists each entry's source.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{crc64, expect_magic, hex, ByteReader, ByteWriter};
use crate::data::SourceId;
use crate::error::{Error, Result};
use crate::retrieval::kb::{KbEntry, KnowledgeBase};
use crate::scalar::Scalar;

pub const KB_MAGIC: &[u8; 8] = b"RIDDEKB1";
pub const KB_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 * 4 + 8 + 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KbManifest {
    pub magic: String,
    pub version: u32,
    pub context_len: u32,
    pub horizon_len: u32,
    pub dim: u32,
    pub n: u64,
    pub encoder_hash: String,
    pub crc64: String,
    pub sources: Vec<Option<SourceId>>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Config(format!("{what} {v} does not fit the file format")))
}

pub fn encode_kb<S: Scalar>(kb: &KnowledgeBase<S>) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.bytes(KB_MAGIC);
    w.u32(KB_VERSION);
    w.u32(to_u32(kb.context_len(), "context length")?);
    w.u32(to_u32(kb.horizon_len(), "horizon length")?);
    w.u32(to_u32(kb.dim(), "embedding dim")?);
    w.u64(kb.len() as u64);
    w.bytes(kb.encoder_hash());
    for e in kb.entries() {
        w.u64(e.id);
        w.f64s(e.context.iter().map(|v| v.widen()));
        w.f64s(e.horizon.iter().map(|v| v.widen()));
        w.f64s(e.embedding.iter().map(|v| v.widen()));
    }
    Ok(w.finish())
}

pub fn decode_kb<S: Scalar>(bytes: &[u8]) -> Result<KnowledgeBase<S>> {
    let mut r = ByteReader::new(bytes);
    expect_magic(&mut r, KB_MAGIC)?;
    let version = r.u32()?;
    if version != KB_VERSION {
        return Err(Error::VersionMismatch {
            expected: KB_VERSION,
            found: version,
        });
    }
    let t = r.u32()? as usize;
    let l = r.u32()? as usize;
    let d = r.u32()? as usize;
    let n = r.u64()?;
    let mut hash = [0u8; 32];
    hash.copy_from_slice(r.take(32)?);

    let record = 8 + 8 * (t + l + d) as u64;
    let needed = n
        .checked_mul(record)
        .and_then(|b| b.checked_add(8))
        .ok_or_else(|| Error::Corrupt(format!("entry count {n} overflows")))?;
    if (r.remaining() as u64) < needed {
        return Err(Error::Truncated {
            offset: bytes.len(),
            needed: (needed - r.remaining() as u64) as usize,
        });
    }

    let cast = |v: Vec<f64>| v.into_iter().map(S::of).collect::<Vec<S>>();
    let mut entries = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let id = r.u64()?;
        let context = cast(r.f64s(t)?);
        let horizon = cast(r.f64s(l)?);
        let embedding = cast(r.f64s(d)?);
        entries.push(KbEntry {
            id,
            context,
            horizon,
            embedding,
            source_id: None,
        });
    }
    r.verify_trailer()?;
    debug_assert_eq!(r.position(), HEADER_LEN + (n * record) as usize + 8);
    KnowledgeBase::from_entries(t, l, d, hash, entries)
}

pub fn manifest<S: Scalar>(kb: &KnowledgeBase<S>, bytes: &[u8]) -> KbManifest {
    KbManifest {
        magic: String::from_utf8_lossy(KB_MAGIC).into_owned(),
        version: KB_VERSION,
        context_len: kb.context_len() as u32,
        horizon_len: kb.horizon_len() as u32,
        dim: kb.dim() as u32,
        n: kb.len() as u64,
        encoder_hash: hex(kb.encoder_hash()),
        crc64: format!("{:016x}", crc64(&bytes[..bytes.len() - 8])),
        sources: kb.entries().iter().map(|e| e.source_id).collect(),
    }
}

/// Writes the binary file and its JSON sidecar.
pub fn save_kb<S: Scalar>(kb: &KnowledgeBase<S>, path: &Path) -> Result<()> {
    let bytes = encode_kb(kb)?;
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&manifest(kb, &bytes)).map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))?;
    Ok(())
}

/// Loads and verifies a knowledge base. Source ids are restored from the
/// sidecar when it exists and agrees with the binary header.
pub fn load_kb<S: Scalar>(path: &Path) -> Result<KnowledgeBase<S>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut kb = decode_kb::<S>(&bytes)?;
    let side = sidecar_path(path);
    if let Ok(text) = std::fs::read_to_string(&side) {
        let m: KbManifest = serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", side.display())))?;
        if m.n != kb.len() as u64 || m.encoder_hash != hex(kb.encoder_hash()) {
            return Err(Error::Corrupt(format!("sidecar {} does not describe {}", side.display(), path.display())));
        }
        kb.set_sources(&m.sources)?;
    }
    Ok(kb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::kb::tests::random_kb;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> KnowledgeBase<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        random_kb(&mut rng, 12, 4)
    }

    #[test]
    fn header_layout_is_bit_exact() {
        let kb = sample();
        let bytes = encode_kb(&kb).unwrap();
        assert_eq!(&bytes[..8], b"RIDDEKB1");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 4);
        assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 12);
        assert_eq!(bytes.len(), HEADER_LEN + 12 * (8 + 8 * (2 + 1 + 4)) + 8);
        let body = &bytes[..bytes.len() - 8];
        assert_eq!(u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap()), crc64(body));
    }

    #[test]
    fn file_round_trip_with_sources() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.bin");
        let kb = sample();
        save_kb(&kb, &path).unwrap();
        let back: KnowledgeBase<f64> = load_kb(&path).unwrap();
        assert_eq!(back, kb);
        assert_eq!(back.id_for_source(&SourceId { channel: 0, start: 5 }), Some(5));
        assert_eq!(encode_kb(&back).unwrap(), std::fs::read(&path).unwrap());
    }

    #[test]
    fn empty_round_trip() {
        let kb = KnowledgeBase::<f64>::from_entries(8, 2, 3, [1; 32], vec![]).unwrap();
        let back: KnowledgeBase<f64> = decode_kb(&encode_kb(&kb).unwrap()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 3);
    }

    #[test]
    fn corruption_errors_are_distinct() {
        let bytes = encode_kb(&sample()).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_kb::<f64>(&bad), Err(Error::BadMagic { .. })));

        let mut bad = bytes.clone();
        bad[8] = 2;
        assert!(matches!(decode_kb::<f64>(&bad), Err(Error::VersionMismatch { expected: 1, found: 2 })));

        let mut bad = bytes.clone();
        bad[HEADER_LEN + 20] ^= 0x10;
        assert!(matches!(decode_kb::<f64>(&bad), Err(Error::Checksum { .. })));

        for cut in [4, 30, HEADER_LEN + 3, bytes.len() - 1] {
            assert!(matches!(decode_kb::<f64>(&bytes[..cut]), Err(Error::Truncated { .. })), "cut {cut}");
        }
    }
}
