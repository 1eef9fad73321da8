//! Shuffling of newline-delimited datasets that do not fit in memory.
//!
//! [`StreamShuffler`] keeps a buffer of `B` records fed by `P` read pointers,
//! each owning a contiguous shard of the input. While the buffer has room, a
//! uniformly chosen live pointer reads its next record into it; once the
//! buffer is full (or every pointer is exhausted) a uniformly chosen buffered
//! record is emitted. Every input record is emitted exactly once.
//!
//! [`static_shuffle`] reorders a whole file by a keyed hash of each record's
//! index, spilling hash-range buckets to disk.
//!
//! All randomness comes from ChaCha8 seeded with `seed_from_u64`, with
//! indices drawn by `rand`'s uniform integer sampler; both are fixed by the
//! lockfile, so a seed gives the same order on every platform.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_64_with_seed;

#[derive(Debug, Error)]
pub enum ShuffleError {
    #[error("input is empty")]
    EmptyFile,
    #[error("invalid shuffle config: {0}")]
    InvalidConfig(String),
    #[error("length mismatch: {0} input positions vs {1} output positions")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Environment variable overriding where spill files are written.
pub const TMPDIR_ENV: &str = "CORPUSPREP_TMPDIR";

pub fn temp_dir() -> PathBuf {
    std::env::var_os(TMPDIR_ENV).map(PathBuf::from).unwrap_or_else(std::env::temp_dir)
}

/// A byte-addressable input, such as a local file or an in-memory blob.
pub trait RangeSource: Send + Sync {
    fn size(&self) -> io::Result<u64>;
    /// Reader over bytes `[start, end)`.
    fn open_range(&self, start: u64, end: u64) -> io::Result<Box<dyn BufRead + Send>>;
}

#[derive(Debug, Clone)]
pub struct FileSource {
    path: PathBuf,
}

impl FileSource {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        FileSource { path: path.into() }
    }
}

impl RangeSource for FileSource {
    fn size(&self) -> io::Result<u64> {
        Ok(std::fs::metadata(&self.path)?.len())
    }

    fn open_range(&self, start: u64, end: u64) -> io::Result<Box<dyn BufRead + Send>> {
        let mut file = File::open(&self.path)?;
        file.seek(SeekFrom::Start(start))?;
        Ok(Box::new(BufReader::with_capacity(64 * 1024, file.take(end.saturating_sub(start)))))
    }
}

#[derive(Debug, Clone)]
pub struct MemorySource(pub Arc<Vec<u8>>);

impl MemorySource {
    pub fn new(bytes: Vec<u8>) -> Self {
        MemorySource(Arc::new(bytes))
    }
}

impl RangeSource for MemorySource {
    fn size(&self) -> io::Result<u64> {
        Ok(self.0.len() as u64)
    }

    fn open_range(&self, start: u64, end: u64) -> io::Result<Box<dyn BufRead + Send>> {
        let data = Arc::clone(&self.0);
        let end = (end as usize).min(data.len());
        let start = (start as usize).min(end);
        let mut cursor = io::Cursor::new(ArcSlice(data, end));
        cursor.set_position(start as u64);
        Ok(Box::new(cursor))
    }
}

struct ArcSlice(Arc<Vec<u8>>, usize);

impl AsRef<[u8]> for ArcSlice {
    fn as_ref(&self) -> &[u8] {
        &self.0[..self.1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shard {
    pub start: u64,
    pub end: u64,
}

/// Contiguous byte ranges covering `[0, size)`; each starts at a record boundary.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ShardPlan {
    pub shards: Vec<Shard>,
}

/// First record start at or after `pos`.
fn snap_forward(source: &dyn RangeSource, pos: u64, size: u64) -> io::Result<u64> {
    if pos == 0 || pos >= size {
        return Ok(pos.min(size));
    }
    let mut reader = source.open_range(pos - 1, size)?;
    let mut skipped = Vec::new();
    let n = reader.read_until(b'\n', &mut skipped)?;
    Ok(pos - 1 + n as u64)
}

/// Splits the source into at most `pointers` near-equal shards.
pub fn plan_shards(source: &dyn RangeSource, pointers: usize) -> Result<ShardPlan, ShuffleError> {
    if pointers == 0 {
        return Err(ShuffleError::InvalidConfig("number of pointers must be >= 1".into()));
    }
    let size = source.size()?;
    if size == 0 {
        return Err(ShuffleError::EmptyFile);
    }
    let mut cuts = vec![0u64];
    for i in 1..pointers as u64 {
        let target = ((size as u128 * i as u128) / pointers as u128) as u64;
        let cut = snap_forward(source, target, size)?;
        if cut > *cuts.last().unwrap() && cut < size {
            cuts.push(cut);
        }
    }
    cuts.push(size);
    let shards = cuts.windows(2).map(|w| Shard { start: w[0], end: w[1] }).collect();
    Ok(ShardPlan { shards })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShuffleConfig {
    pub pointers: usize,
    pub buffer: usize,
    pub seed: u64,
}

impl Default for ShuffleConfig {
    fn default() -> Self {
        ShuffleConfig { pointers: 5000, buffer: 1_000_000, seed: 0 }
    }
}

impl ShuffleConfig {
    pub fn validate(&self) -> Result<(), ShuffleError> {
        if self.pointers == 0 || self.buffer == 0 {
            return Err(ShuffleError::InvalidConfig("pointers and buffer must be >= 1".into()));
        }
        Ok(())
    }
}

/// Splits `total` pointers across sources proportionally to their size,
/// at least one per non-empty source.
fn allocate_pointers(sizes: &[u64], total: usize) -> Vec<usize> {
    let sum: u128 = sizes.iter().map(|&s| s as u128).sum();
    let mut alloc: Vec<usize> = sizes
        .iter()
        .map(|&s| if s == 0 { 0 } else { ((s as u128 * total as u128) / sum).max(1) as usize })
        .collect();
    let mut assigned: usize = alloc.iter().sum();
    // Hand out the remainder to the largest sources first.
    let mut order: Vec<usize> = (0..sizes.len()).filter(|&i| sizes[i] > 0).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut i = 0;
    while assigned < total && !order.is_empty() {
        alloc[order[i % order.len()]] += 1;
        assigned += 1;
        i += 1;
    }
    alloc
}

struct Pointer {
    reader: Box<dyn BufRead + Send>,
    /// Records read so far from this pointer.
    taken: u64,
}

struct Buffered {
    data: Vec<u8>,
    pointer: u32,
    seq: u64,
}

/// Iterator over shuffled records (without their trailing newline).
pub struct StreamShuffler {
    pointers: Vec<Pointer>,
    live: Vec<usize>,
    buffer: Vec<Buffered>,
    capacity: usize,
    rng: ChaCha8Rng,
    pending_error: Option<io::Error>,
    finished: bool,
    track: bool,
    origins: Vec<(u32, u64)>,
}

impl StreamShuffler {
    pub fn new(sources: &[&dyn RangeSource], cfg: &ShuffleConfig) -> Result<Self, ShuffleError> {
        cfg.validate()?;
        let sizes = sources.iter().map(|s| s.size()).collect::<io::Result<Vec<_>>>()?;
        if sizes.iter().all(|&s| s == 0) {
            return Err(ShuffleError::EmptyFile);
        }
        let alloc = allocate_pointers(&sizes, cfg.pointers);
        let mut pointers = Vec::new();
        for (source, &n) in sources.iter().zip(&alloc) {
            if n == 0 {
                continue;
            }
            for shard in plan_shards(*source, n)?.shards {
                pointers.push(Pointer { reader: source.open_range(shard.start, shard.end)?, taken: 0 });
            }
        }
        Ok(StreamShuffler {
            live: (0..pointers.len()).collect(),
            pointers,
            buffer: Vec::with_capacity(cfg.buffer.min(1 << 20)),
            capacity: cfg.buffer,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            pending_error: None,
            finished: false,
            track: false,
            origins: Vec::new(),
        })
    }

    /// Records where each emitted record came from, for [`Self::input_positions`].
    pub fn track_positions(mut self, on: bool) -> Self {
        self.track = on;
        self
    }

    pub fn num_pointers(&self) -> usize {
        self.pointers.len()
    }

    /// Reads one record from a randomly chosen live pointer into the buffer.
    fn admit_one(&mut self) {
        let slot = self.rng.random_range(0..self.live.len());
        let p = self.live[slot];
        let pointer = &mut self.pointers[p];
        let mut line = Vec::new();
        match pointer.reader.read_until(b'\n', &mut line) {
            Ok(0) => {
                self.live.remove(slot);
            }
            Ok(_) => {
                if line.last() == Some(&b'\n') {
                    line.pop();
                }
                self.buffer.push(Buffered { data: line, pointer: p as u32, seq: pointer.taken });
                pointer.taken += 1;
            }
            Err(e) => {
                self.pending_error = Some(e);
                self.live.clear();
            }
        }
    }

    /// Global input index of every emitted record, in emission order. Only
    /// meaningful after the stream is exhausted with tracking enabled.
    pub fn input_positions(&self) -> Vec<u64> {
        let mut offsets = Vec::with_capacity(self.pointers.len());
        let mut acc = 0u64;
        for p in &self.pointers {
            offsets.push(acc);
            acc += p.taken;
        }
        self.origins.iter().map(|&(p, seq)| offsets[p as usize] + seq).collect()
    }
}

impl Iterator for StreamShuffler {
    type Item = io::Result<Vec<u8>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.finished {
            return None;
        }
        while self.buffer.len() < self.capacity && !self.live.is_empty() {
            self.admit_one();
        }
        if self.buffer.is_empty() {
            self.finished = true;
            return self.pending_error.take().map(Err);
        }
        let idx = self.rng.random_range(0..self.buffer.len());
        let rec = self.buffer.swap_remove(idx);
        if self.track {
            self.origins.push((rec.pointer, rec.seq));
        }
        Some(Ok(rec.data))
    }
}

/// Convenience wrapper: shuffle files on disk into `out`, newline-terminating
/// every record. Returns the number of records written.
pub fn stream_shuffle_files<W: Write>(
    inputs: &[PathBuf],
    cfg: &ShuffleConfig,
    out: W,
) -> Result<(u64, Vec<u64>), ShuffleError> {
    let sources: Vec<FileSource> = inputs.iter().map(FileSource::new).collect();
    let refs: Vec<&dyn RangeSource> = sources.iter().map(|s| s as &dyn RangeSource).collect();
    let mut shuffler = StreamShuffler::new(&refs, cfg)?.track_positions(true);
    let mut out = BufWriter::new(out);
    let mut n = 0u64;
    for rec in shuffler.by_ref() {
        out.write_all(&rec?)?;
        out.write_all(b"\n")?;
        n += 1;
    }
    out.flush()?;
    Ok((n, shuffler.input_positions()))
}

#[derive(Debug, Clone, Copy)]
pub struct StaticShuffleOptions {
    /// Approximate bytes of records held in memory per bucket.
    pub memory_budget: u64,
}

impl Default for StaticShuffleOptions {
    fn default() -> Self {
        StaticShuffleOptions { memory_budget: 256 << 20 }
    }
}

fn record_key(seed: u64, index: u64) -> u64 {
    xxh3_64_with_seed(&index.to_le_bytes(), seed)
}

/// Writes the records of `input` to `output` ordered by ascending
/// `xxh3_64(seed, record_index)`, ties by index. Returns the record count.
pub fn static_shuffle(
    input: &Path,
    output: &Path,
    seed: u64,
    opts: &StaticShuffleOptions,
) -> Result<u64, ShuffleError> {
    let size = std::fs::metadata(input)?.len();
    let buckets = size.div_ceil(opts.memory_budget.max(1)).max(1);
    let spill = tempfile::Builder::new().prefix("static-shuffle").tempdir_in(temp_dir())?;

    let mut writers = (0..buckets)
        .map(|b| File::create(spill.path().join(format!("bucket-{b}"))).map(BufWriter::new))
        .collect::<io::Result<Vec<_>>>()?;
    let mut reader = BufReader::new(File::open(input)?);
    let mut line = Vec::new();
    let mut index = 0u64;
    loop {
        line.clear();
        if reader.read_until(b'\n', &mut line)? == 0 {
            break;
        }
        if line.last() == Some(&b'\n') {
            line.pop();
        }
        let key = record_key(seed, index);
        let bucket = ((key as u128 * buckets as u128) >> 64) as usize;
        let w = &mut writers[bucket];
        w.write_all(&key.to_le_bytes())?;
        w.write_all(&index.to_le_bytes())?;
        w.write_all(&(line.len() as u64).to_le_bytes())?;
        w.write_all(&line)?;
        index += 1;
    }
    for w in &mut writers {
        w.flush()?;
    }
    drop(writers);

    let mut out = BufWriter::new(File::create(output)?);
    for b in 0..buckets {
        let mut data = Vec::new();
        File::open(spill.path().join(format!("bucket-{b}")))?.read_to_end(&mut data)?;
        let mut records: Vec<(u64, u64, &[u8])> = Vec::new();
        let mut pos = 0;
        while pos < data.len() {
            let word = |at: usize| u64::from_le_bytes(data[at..at + 8].try_into().unwrap());
            let (key, idx, len) = (word(pos), word(pos + 8), word(pos + 16) as usize);
            pos += 24;
            records.push((key, idx, &data[pos..pos + len]));
            pos += len;
        }
        records.sort_unstable_by_key(|&(key, idx, _)| (key, idx));
        for (_, _, rec) in records {
            out.write_all(rec)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(index)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Shuffledness {
    pub spearman_rho: f64,
    pub mean_normalized_displacement: f64,
}

fn ranks(values: &[u64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by_key(|&i| values[i]);
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j - 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Rank correlation and mean displacement between paired positions:
/// record `i` was at `input[i]` and ended up at `output[i]`.
pub fn shuffledness(input: &[u64], output: &[u64]) -> Result<Shuffledness, ShuffleError> {
    if input.len() != output.len() {
        return Err(ShuffleError::LengthMismatch(input.len(), output.len()));
    }
    let n = input.len();
    if n < 2 {
        return Ok(Shuffledness { spearman_rho: 1.0, mean_normalized_displacement: 0.0 });
    }
    let (ra, rb) = (ranks(input), ranks(output));
    let mean = (n as f64 - 1.0) / 2.0;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (a, b) in ra.iter().zip(&rb) {
        cov += (a - mean) * (b - mean);
        va += (a - mean) * (a - mean);
        vb += (b - mean) * (b - mean);
    }
    let rho = if va == 0.0 || vb == 0.0 { 0.0 } else { cov / (va.sqrt() * vb.sqrt()) };
    let disp: f64 = input.iter().zip(output).map(|(&a, &b)| a.abs_diff(b) as f64).sum();
    Ok(Shuffledness { spearman_rho: rho, mean_normalized_displacement: disp / (n as f64 * n as f64) })
}

/// `emitted[j]` is the input index of the `j`-th emitted record.
pub fn shuffledness_of_order(emitted: &[u64]) -> Shuffledness {
    let out: Vec<u64> = (0..emitted.len() as u64).collect();
    shuffledness(emitted, &out).expect("equal lengths")
}
