//! Bloom-filter deduplication and inconsistent-translation removal.
//!
//! The filter is sized from a capacity `n` and target false-positive rate `p`:
//! `m = ceil(-n ln p / (ln 2)^2)` bits and `k = max(1, round(m/n ln 2))`
//! hash functions. Indices come from double hashing over a seeded 128-bit
//! XXH3 digest: `h1` and `h2` are its low and high halves and
//! `index_i = (h1 + i*h2) mod m`, evaluated in 128-bit arithmetic.
//!
//! Inserts take `&mut self` (single writer); lookups take `&self` and are
//! safe from any number of reader threads.

use std::collections::hash_map::Entry;
use std::collections::{HashMap, HashSet};
use std::io::{self, Read, Write};

use log::warn;
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_128_with_seed;

use crate::corpus::{DropReason, FilterOutcome, LangCode, MonoRecord, SentencePair};
use crate::textnorm::collapse_whitespace;

#[derive(Debug, Error)]
pub enum DedupError {
    #[error("invalid Bloom parameters: {0}")]
    InvalidParams(String),
    #[error("bad magic bytes in Bloom filter file")]
    BadMagic,
    #[error("truncated Bloom filter file")]
    Truncated,
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub const BLOOM_MAGIC: &[u8; 4] = b"BLM1";

/// Bit count and hash count for capacity `n` at false-positive rate `p`.
pub fn bloom_sizing(capacity: u64, fp_rate: f64) -> Result<(u64, u32), DedupError> {
    if capacity < 1 {
        return Err(DedupError::InvalidParams("capacity must be >= 1".into()));
    }
    if !(fp_rate > 0.0 && fp_rate < 1.0) {
        return Err(DedupError::InvalidParams(format!("fp_rate must be in (0,1), got {fp_rate}")));
    }
    let ln2 = std::f64::consts::LN_2;
    let n = capacity as f64;
    let m = (-n * fp_rate.ln() / (ln2 * ln2)).ceil().max(1.0);
    let k = ((m / n) * ln2).round().max(1.0);
    Ok((m as u64, k as u32))
}

/// False-positive probability `(1 - e^(-kn/m))^k` after `n` inserts.
pub fn analytic_fp_rate(m: u64, k: u32, n: u64) -> f64 {
    (1.0 - (-(k as f64) * n as f64 / m as f64).exp()).powi(k as i32)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BloomFilter {
    words: Vec<u64>,
    m: u64,
    k: u32,
    seed: u64,
    n_inserted: u64,
    capacity: u64,
}

impl BloomFilter {
    pub fn new(capacity: u64, fp_rate: f64, seed: u64) -> Result<Self, DedupError> {
        let (m, k) = bloom_sizing(capacity, fp_rate)?;
        Ok(Self::with_size(m, k, seed, capacity))
    }

    fn with_size(m: u64, k: u32, seed: u64, capacity: u64) -> Self {
        BloomFilter { words: vec![0; m.div_ceil(64) as usize], m, k, seed, n_inserted: 0, capacity }
    }

    pub fn num_bits(&self) -> u64 {
        self.m
    }

    pub fn num_hashes(&self) -> u32 {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> u64 {
        self.n_inserted
    }

    pub fn is_empty(&self) -> bool {
        self.n_inserted == 0
    }

    /// Capacity the filter was sized for. For a loaded filter this is
    /// reconstructed from `m` and `k`.
    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn over_capacity(&self) -> bool {
        self.n_inserted > self.capacity
    }

    pub fn popcount(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    fn indices(&self, key: &[u8]) -> impl Iterator<Item = u64> {
        let digest = xxh3_128_with_seed(key, self.seed);
        let h1 = digest as u64 as u128;
        let h2 = (digest >> 64) as u64 as u128;
        let m = self.m as u128;
        (0..self.k as u128).map(move |i| ((h1 + i * h2) % m) as u64)
    }

    /// Inserts `key`; returns `true` if it was possibly present already.
    pub fn insert(&mut self, key: &[u8]) -> bool {
        let mut present = true;
        for idx in self.indices(key).collect::<Vec<_>>() {
            let (word, bit) = ((idx / 64) as usize, idx % 64);
            let mask = 1u64 << bit;
            if self.words[word] & mask == 0 {
                present = false;
                self.words[word] |= mask;
            }
        }
        if !present {
            self.n_inserted += 1;
        }
        present
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        self.indices(key).all(|idx| self.words[(idx / 64) as usize] & (1u64 << (idx % 64)) != 0)
    }

    /// `BLM1`, u64 m, u32 k, u64 seed, u64 n_inserted, then `ceil(m/8)` bytes
    /// of bits; bit `i` lives in byte `i/8` at position `i%8`. All integers
    /// little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(BLOOM_MAGIC)?;
        w.write_all(&self.m.to_le_bytes())?;
        w.write_all(&self.k.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.n_inserted.to_le_bytes())?;
        let n_bytes = self.m.div_ceil(8) as usize;
        let mut remaining = n_bytes;
        for word in &self.words {
            let bytes = word.to_le_bytes();
            let take = remaining.min(8);
            w.write_all(&bytes[..take])?;
            remaining -= take;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, DedupError> {
        fn exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N], DedupError> {
            let mut buf = [0u8; N];
            r.read_exact(&mut buf).map_err(|e| match e.kind() {
                io::ErrorKind::UnexpectedEof => DedupError::Truncated,
                _ => DedupError::Io(e),
            })?;
            Ok(buf)
        }
        if &exact::<R, 4>(&mut r)? != BLOOM_MAGIC {
            return Err(DedupError::BadMagic);
        }
        let m = u64::from_le_bytes(exact(&mut r)?);
        let k = u32::from_le_bytes(exact(&mut r)?);
        let seed = u64::from_le_bytes(exact(&mut r)?);
        let n_inserted = u64::from_le_bytes(exact(&mut r)?);
        if m == 0 || k == 0 {
            return Err(DedupError::InvalidParams(format!("m={m}, k={k}")));
        }
        let capacity = ((m as f64 * std::f64::consts::LN_2 / k as f64).round() as u64).max(1);
        let mut filter = Self::with_size(m, k, seed, capacity);
        filter.n_inserted = n_inserted;
        let n_bytes = m.div_ceil(8) as usize;
        let mut bytes = vec![0u8; n_bytes];
        r.read_exact(&mut bytes).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => DedupError::Truncated,
            _ => DedupError::Io(e),
        })?;
        for (word, chunk) in filter.words.iter_mut().zip(bytes.chunks(8)) {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            *word = u64::from_le_bytes(buf);
        }
        Ok(filter)
    }
}

/// Trims and collapses whitespace runs before keying.
pub fn canonical_text(text: &str) -> String {
    collapse_whitespace(text)
}

/// Key of a whole pair: languages and canonical texts joined by tabs (text
/// fields never contain tabs, so the join is unambiguous).
pub fn pair_key(pair: &SentencePair) -> Vec<u8> {
    format!(
        "{}\t{}\t{}\t{}",
        pair.src_lang,
        pair.tgt_lang,
        canonical_text(&pair.src),
        canonical_text(&pair.tgt)
    )
    .into_bytes()
}

pub fn mono_key(rec: &MonoRecord) -> Vec<u8> {
    format!("{}\t{}", rec.lang, canonical_text(&rec.text)).into_bytes()
}

fn side_key(src_lang: LangCode, tgt_lang: LangCode, text: &str) -> Vec<u8> {
    format!("{src_lang}\t{tgt_lang}\t{}", canonical_text(text)).into_bytes()
}

/// Keep-first exact deduplication over a stream, backed by a Bloom filter.
#[derive(Debug)]
pub struct ExactDeduper {
    filter: BloomFilter,
    warned: bool,
}

impl ExactDeduper {
    pub fn new(filter: BloomFilter) -> Self {
        ExactDeduper { filter, warned: false }
    }

    pub fn filter(&self) -> &BloomFilter {
        &self.filter
    }

    pub fn into_filter(self) -> BloomFilter {
        self.filter
    }

    /// `true` once more keys were inserted than the filter was sized for.
    /// Processing continues; the false-positive rate grows past its target.
    pub fn capacity_exceeded(&self) -> bool {
        self.filter.over_capacity()
    }

    /// Returns `true` for the first occurrence of `key`.
    pub fn admit(&mut self, key: &[u8]) -> bool {
        let seen = self.filter.insert(key);
        if !self.warned && self.filter.over_capacity() {
            self.warned = true;
            warn!(
                "Bloom filter capacity {} exceeded; false-positive rate now above target",
                self.filter.capacity()
            );
        }
        !seen
    }

    pub fn check<T>(&mut self, record: T, key: &[u8]) -> FilterOutcome<T> {
        if self.admit(key) {
            FilterOutcome::keep(record)
        } else {
            FilterOutcome::Drop(DropReason::Duplicate)
        }
    }
}

/// Lazily deduplicates a stream, keeping first occurrences.
pub fn dedup_exact<'a, T, I, K>(
    records: I,
    deduper: &'a mut ExactDeduper,
    key: K,
) -> impl Iterator<Item = FilterOutcome<T>> + 'a
where
    I: IntoIterator<Item = T>,
    I::IntoIter: 'a,
    K: Fn(&T) -> Vec<u8> + 'a,
{
    records.into_iter().map(move |r| {
        let k = key(&r);
        deduper.check(r, &k)
    })
}

#[derive(Debug)]
enum Backend {
    Exact { by_src: HashMap<Vec<u8>, Vec<u8>>, tgt_seen: HashSet<Vec<u8>> },
    Bloom { src: BloomFilter, tgt: BloomFilter, pairs: BloomFilter },
}

/// Removes pairs whose source (or target) was already seen with a different
/// translation. The first pair for a key survives.
///
/// Keys are scoped by translation direction, so the same English sentence may
/// appear once per target language.
#[derive(Debug)]
pub struct InconsistencyFilter {
    backend: Backend,
}

impl InconsistencyFilter {
    /// Hash-map backend: exact, memory grows with the stream.
    pub fn exact() -> Self {
        InconsistencyFilter {
            backend: Backend::Exact { by_src: HashMap::new(), tgt_seen: HashSet::new() },
        }
    }

    /// Bounded-memory backend; may over-drop at roughly `fp_rate`.
    pub fn bloom(capacity: u64, fp_rate: f64, seed: u64) -> Result<Self, DedupError> {
        Ok(InconsistencyFilter {
            backend: Backend::Bloom {
                src: BloomFilter::new(capacity, fp_rate, seed)?,
                tgt: BloomFilter::new(capacity, fp_rate, seed ^ 0x9E37_79B9_7F4A_7C15)?,
                pairs: BloomFilter::new(capacity, fp_rate, seed ^ 0xD1B5_4A32_D192_ED03)?,
            },
        })
    }

    pub fn check(&mut self, pair: SentencePair) -> FilterOutcome<SentencePair> {
        let src_key = side_key(pair.src_lang, pair.tgt_lang, &pair.src);
        let tgt_key = side_key(pair.src_lang, pair.tgt_lang, &pair.tgt);
        match &mut self.backend {
            Backend::Exact { by_src, tgt_seen } => match by_src.entry(src_key) {
                Entry::Occupied(e) => {
                    if *e.get() == tgt_key {
                        FilterOutcome::Drop(DropReason::Duplicate)
                    } else {
                        FilterOutcome::Drop(DropReason::InconsistentTranslation)
                    }
                }
                Entry::Vacant(e) => {
                    if tgt_seen.contains(&tgt_key) {
                        return FilterOutcome::Drop(DropReason::InconsistentTranslation);
                    }
                    tgt_seen.insert(tgt_key.clone());
                    e.insert(tgt_key);
                    FilterOutcome::keep(pair)
                }
            },
            Backend::Bloom { src, tgt, pairs } => {
                let key = pair_key(&pair);
                if pairs.contains(&key) {
                    return FilterOutcome::Drop(DropReason::Duplicate);
                }
                if src.contains(&src_key) || tgt.contains(&tgt_key) {
                    return FilterOutcome::Drop(DropReason::InconsistentTranslation);
                }
                pairs.insert(&key);
                src.insert(&src_key);
                tgt.insert(&tgt_key);
                FilterOutcome::keep(pair)
            }
        }
    }
}

pub fn dedup_inconsistent<'a, I>(
    pairs: I,
    filter: &'a mut InconsistencyFilter,
) -> impl Iterator<Item = FilterOutcome<SentencePair>> + 'a
where
    I: IntoIterator<Item = SentencePair>,
    I::IntoIter: 'a,
{
    pairs.into_iter().map(move |p| filter.check(p))
}
