//! Config-driven pipeline with per-stage drop statistics.
//!
//! Input is read in chunks. Within a chunk, stateless stages (cleaning,
//! thresholds, language id, MDL, tagging) run as an order-preserving parallel
//! map; stateful stages (deduplication) consume the chunk sequentially. Chunks
//! are processed in input order, so the output depends only on the config and
//! the input bytes, not on the number of workers.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    parse_bitext_line, parse_mono_line, serialize_mono, serialize_pair, split_pair_to_mono, ColumnSpec,
    DropReason, FilterOutcome, MonoRecord, SentencePair,
};
use crate::dedup::{bloom_sizing, mono_key, pair_key, BloomFilter, ExactDeduper, InconsistencyFilter};
use crate::mdl::{is_noisy, MdlParams};
use crate::routing::{tag_pair, TagFormat};
use crate::rules::{
    clean_mono, clean_pair, langid_filter_mono, langid_filter_pair, threshold_filter, threshold_filter_mono,
    EchoIdentifier, LanguageIdentifier, RuleConfig, ScoreColumnIdentifier, ScoreThresholds,
};
use crate::shuffle::{stream_shuffle_files, temp_dir, ShuffleConfig};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("bad report {path}: {msg}")]
    BadReport { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn invalid(msg: impl Into<String>) -> PipelineError {
    PipelineError::ConfigInvalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Bitext,
    Mono,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdentifierKind {
    /// Confidence from the `src_lang_score`/`tgt_lang_score`/`lang_score` columns.
    #[default]
    ScoreColumn,
    /// Accepts every record.
    Echo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LangIdStage {
    pub identifier: IdentifierKind,
    pub min_confidence: f64,
}

impl Default for LangIdStage {
    fn default() -> Self {
        LangIdStage { identifier: IdentifierKind::ScoreColumn, min_confidence: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupExactStage {
    pub capacity: u64,
    pub fp_rate: f64,
    /// Hash seed; the pipeline seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Where to write the final filter, if anywhere.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub save_filter: Option<PathBuf>,
}

impl Default for DedupExactStage {
    fn default() -> Self {
        DedupExactStage { capacity: 10_000_000, fp_rate: 1e-3, seed: None, save_filter: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InconsistencyBackend {
    #[default]
    Exact,
    Bloom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupInconsistentStage {
    pub backend: InconsistencyBackend,
    /// Bloom backend only.
    pub capacity: u64,
    /// Bloom backend only.
    pub fp_rate: f64,
}

impl Default for DedupInconsistentStage {
    fn default() -> Self {
        DedupInconsistentStage { backend: InconsistencyBackend::Exact, capacity: 10_000_000, fp_rate: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShuffleStage {
    pub pointers: usize,
    pub buffer: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for ShuffleStage {
    fn default() -> Self {
        let d = ShuffleConfig::default();
        ShuffleStage { pointers: d.pointers, buffer: d.buffer, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Empty {}

/// One pipeline stage; the `op` key selects the operation and the remaining
/// keys of the table configure it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum StageSpec {
    CleanPair(RuleConfig),
    CleanMono(RuleConfig),
    Threshold(ScoreThresholds),
    Langid(LangIdStage),
    Mdl(MdlParams),
    DedupExact(DedupExactStage),
    DedupInconsistent(DedupInconsistentStage),
    SplitMono(Empty),
    Tag(TagFormat),
    Shuffle(ShuffleStage),
}

impl StageSpec {
    pub const OPS: [&'static str; 10] = [
        "clean-pair",
        "clean-mono",
        "threshold",
        "langid",
        "mdl",
        "dedup-exact",
        "dedup-inconsistent",
        "split-mono",
        "tag",
        "shuffle",
    ];

    pub fn op(&self) -> &'static str {
        match self {
            StageSpec::CleanPair(_) => "clean-pair",
            StageSpec::CleanMono(_) => "clean-mono",
            StageSpec::Threshold(_) => "threshold",
            StageSpec::Langid(_) => "langid",
            StageSpec::Mdl(_) => "mdl",
            StageSpec::DedupExact(_) => "dedup-exact",
            StageSpec::DedupInconsistent(_) => "dedup-inconsistent",
            StageSpec::SplitMono(_) => "split-mono",
            StageSpec::Tag(_) => "tag",
            StageSpec::Shuffle(_) => "shuffle",
        }
    }

    /// Every op with its default configuration, in [`StageSpec::OPS`] order.
    pub fn all_defaults() -> Vec<StageSpec> {
        vec![
            StageSpec::CleanPair(RuleConfig::default()),
            StageSpec::CleanMono(RuleConfig::default()),
            StageSpec::Threshold(ScoreThresholds::default()),
            StageSpec::Langid(LangIdStage::default()),
            StageSpec::Mdl(MdlParams::default()),
            StageSpec::DedupExact(DedupExactStage::default()),
            StageSpec::DedupInconsistent(DedupInconsistentStage::default()),
            StageSpec::SplitMono(Empty {}),
            StageSpec::Tag(TagFormat::default()),
            StageSpec::Shuffle(ShuffleStage::default()),
        ]
    }

    fn validate(&self) -> Result<(), PipelineError> {
        let err = |e: &dyn std::fmt::Display| invalid(format!("stage {}: {e}", self.op()));
        match self {
            StageSpec::CleanPair(c) | StageSpec::CleanMono(c) => c.validate().map_err(|e| err(&e)),
            StageSpec::Threshold(t) => t.validate().map_err(|e| err(&e)),
            StageSpec::Langid(l) if !l.min_confidence.is_finite() => Err(err(&"min_confidence must be finite")),
            StageSpec::Mdl(p) => p.validate().map_err(|e| err(&e)),
            StageSpec::DedupExact(d) => bloom_sizing(d.capacity, d.fp_rate).map(drop).map_err(|e| err(&e)),
            StageSpec::DedupInconsistent(d) if d.backend == InconsistencyBackend::Bloom => {
                bloom_sizing(d.capacity, d.fp_rate).map(drop).map_err(|e| err(&e))
            }
            StageSpec::Tag(f) => TagFormat::new(&f.prefix, &f.suffix).map(drop).map_err(|e| err(&e)),
            StageSpec::Shuffle(s) => {
                ShuffleConfig { pointers: s.pointers, buffer: s.buffer, seed: 0 }.validate().map_err(|e| err(&e))
            }
            _ => Ok(()),
        }
    }

    /// Record kind after this stage, or an error if the stage cannot take `kind`.
    fn output_kind(&self, kind: Format) -> Result<Format, PipelineError> {
        let need = match self {
            StageSpec::CleanPair(_) | StageSpec::DedupInconsistent(_) | StageSpec::SplitMono(_) | StageSpec::Tag(_) => {
                Some(Format::Bitext)
            }
            StageSpec::CleanMono(_) => Some(Format::Mono),
            _ => None,
        };
        if let Some(need) = need {
            if need != kind {
                return Err(invalid(format!(
                    "stage {} needs {need:?} records but receives {kind:?} records",
                    self.op()
                )));
            }
        }
        Ok(match self {
            StageSpec::SplitMono(_) => Format::Mono,
            _ => kind,
        })
    }
}

fn default_chunk_size() -> usize {
    8192
}

fn default_columns() -> String {
    ColumnSpec::default().to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    /// Read in order and concatenated.
    pub input: Vec<PathBuf>,
    pub output: PathBuf,
    #[serde(default)]
    pub format: Format,
    /// Bitext column order, e.g. `src_lang,tgt_lang,src,tgt,laser_score`.
    #[serde(default = "default_columns")]
    pub columns: String,
    /// Dropped records with their reason appended as the last column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropped_out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    /// Worker threads for stateless stages; 0 uses all cores.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
    #[serde(default, rename = "stage")]
    pub stages: Vec<StageSpec>,
}

impl Default for PipelineConfig {
    /// dedup-exact, clean-pair, mdl, threshold, dedup-inconsistent.
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            input: vec![PathBuf::from("input.tsv")],
            output: PathBuf::from("output.tsv"),
            format: Format::Bitext,
            columns: default_columns(),
            dropped_out: None,
            report: None,
            workers: 0,
            chunk_size: default_chunk_size(),
            stages: vec![
                StageSpec::DedupExact(DedupExactStage::default()),
                StageSpec::CleanPair(RuleConfig::default()),
                StageSpec::Mdl(MdlParams::default()),
                StageSpec::Threshold(ScoreThresholds::default()),
                StageSpec::DedupInconsistent(DedupInconsistentStage::default()),
            ],
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The default config followed by every other op's defaults as
    /// commented-out stage tables.
    pub fn default_toml_annotated() -> String {
        let cfg = PipelineConfig::default();
        let mut out = cfg.to_toml();
        out.push_str("\n# Other stages, with their defaults:\n");
        for spec in StageSpec::all_defaults() {
            if cfg.stages.iter().any(|s| s.op() == spec.op()) {
                continue;
            }
            let one = PipelineConfig { stages: vec![spec], ..PipelineConfig::default() };
            let text = one.to_toml();
            let table = &text[text.find("[[stage]]").expect("stage table")..];
            out.push('\n');
            for line in table.lines() {
                out.push_str("# ");
                out.push_str(line);
                out.push('\n');
            }
        }
        out
    }

    pub fn column_spec(&self) -> Result<ColumnSpec, PipelineError> {
        self.columns.parse().map_err(|e| invalid(format!("columns: {e}")))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.input.is_empty() {
            return Err(invalid("no input files"));
        }
        if self.chunk_size == 0 {
            return Err(invalid("chunk_size must be >= 1"));
        }
        self.column_spec()?;
        let mut kind = self.format;
        for (i, stage) in self.stages.iter().enumerate() {
            stage.validate()?;
            kind = stage.output_kind(kind)?;
            if matches!(stage, StageSpec::Shuffle(_)) && i + 1 != self.stages.len() {
                return Err(invalid("shuffle must be the last stage"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub op: String,
    pub input: u64,
    pub kept: u64,
    pub modified: u64,
    /// Records passed on; differs from `kept` only for split-mono.
    pub output: u64,
    pub dropped: BTreeMap<String, u64>,
    pub elapsed_secs: f64,
    pub throughput: f64,
}

impl StageReport {
    fn new(op: &str) -> Self {
        StageReport {
            op: op.to_string(),
            input: 0,
            kept: 0,
            modified: 0,
            output: 0,
            dropped: BTreeMap::new(),
            elapsed_secs: 0.0,
            throughput: 0.0,
        }
    }

    pub fn dropped_total(&self) -> u64 {
        self.dropped.values().sum()
    }

    /// `input == kept + dropped`.
    pub fn conserves(&self) -> bool {
        self.input == self.kept + self.dropped_total()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub seed: u64,
    /// The first entry is the `read` stage, which drops malformed lines.
    pub stages: Vec<StageReport>,
    pub records_in: u64,
    pub records_out: u64,
    pub records_dropped: u64,
    pub wall_time_secs: f64,
    pub throughput: f64,
}

impl RunReport {
    /// A copy with every timing field zeroed, for run-to-run comparison.
    pub fn without_timings(&self) -> RunReport {
        let mut r = self.clone();
        r.wall_time_secs = 0.0;
        r.throughput = 0.0;
        for s in &mut r.stages {
            s.elapsed_secs = 0.0;
            s.throughput = 0.0;
        }
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn dropped_by_reason(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        for s in &self.stages {
            for (k, v) in &s.dropped {
                *out.entry(k.clone()).or_insert(0) += v;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
enum Rec {
    Pair(SentencePair),
    Mono(MonoRecord),
}

fn pair_of(rec: &Rec) -> &SentencePair {
    match rec {
        Rec::Pair(p) => p,
        Rec::Mono(_) => unreachable!("record kinds are validated before the run"),
    }
}

fn map_outcome<T>(o: FilterOutcome<T>, wrap: fn(T) -> Rec) -> FilterOutcome<Rec> {
    match o {
        FilterOutcome::Keep { record, modified } => FilterOutcome::Keep { record: wrap(record), modified },
        FilterOutcome::Drop(r) => FilterOutcome::Drop(r),
    }
}

type RecordFn = Box<dyn Fn(&Rec) -> FilterOutcome<Rec> + Send + Sync>;

enum Runner {
    Stateless(RecordFn),
    Exact(ExactDeduper, Option<PathBuf>),
    Inconsistent(InconsistencyFilter),
    Split,
    Shuffle(ShuffleConfig),
}

fn build_runner(
    spec: &StageSpec,
    seed: u64,
    identifier: Option<Arc<dyn LanguageIdentifier>>,
) -> Result<Runner, PipelineError> {
    let stateless = |f: RecordFn| Ok(Runner::Stateless(f));
    match spec.clone() {
        StageSpec::CleanPair(cfg) => stateless(Box::new(move |r| map_outcome(clean_pair(pair_of(r), &cfg), Rec::Pair))),
        StageSpec::CleanMono(cfg) => stateless(Box::new(move |r| match r {
            Rec::Mono(m) => map_outcome(clean_mono(m, &cfg), Rec::Mono),
            Rec::Pair(_) => unreachable!("record kinds are validated before the run"),
        })),
        StageSpec::Threshold(th) => stateless(Box::new(move |r| match r {
            Rec::Pair(p) => map_outcome(threshold_filter(p, &th), Rec::Pair),
            Rec::Mono(m) => map_outcome(threshold_filter_mono(m, &th), Rec::Mono),
        })),
        StageSpec::Langid(cfg) => {
            let id: Arc<dyn LanguageIdentifier> = match identifier {
                Some(id) => id,
                None => match cfg.identifier {
                    IdentifierKind::ScoreColumn => Arc::new(ScoreColumnIdentifier),
                    IdentifierKind::Echo => Arc::new(EchoIdentifier),
                },
            };
            // Identifier failures are per-record and count as LangIdFail.
            stateless(Box::new(move |r| match r {
                Rec::Pair(p) => langid_filter_pair(p, id.as_ref(), cfg.min_confidence)
                    .map(|o| map_outcome(o, Rec::Pair))
                    .unwrap_or(FilterOutcome::Drop(DropReason::LangIdFail)),
                Rec::Mono(m) => langid_filter_mono(m, id.as_ref(), cfg.min_confidence)
                    .map(|o| map_outcome(o, Rec::Mono))
                    .unwrap_or(FilterOutcome::Drop(DropReason::LangIdFail)),
            }))
        }
        StageSpec::Mdl(params) => stateless(Box::new(move |r| {
            let texts: Vec<&str> = match r {
                Rec::Pair(p) => vec![&p.src, &p.tgt],
                Rec::Mono(m) => vec![&m.text],
            };
            // Validated params and non-empty texts make errors unreachable;
            // treat any as not noisy rather than losing the record.
            if texts.iter().any(|t| is_noisy(t, &params).unwrap_or(false)) {
                FilterOutcome::Drop(DropReason::MdlNoisy)
            } else {
                FilterOutcome::keep(r.clone())
            }
        })),
        StageSpec::Tag(format) => stateless(Box::new(move |r| match tag_pair(pair_of(r), &format) {
            Ok(p) => FilterOutcome::Keep { record: Rec::Pair(p), modified: true },
            Err(_) => FilterOutcome::Drop(DropReason::MalformedLine),
        })),
        StageSpec::DedupExact(d) => {
            let filter = BloomFilter::new(d.capacity, d.fp_rate, d.seed.unwrap_or(seed)).map_err(|e| invalid(e.to_string()))?;
            Ok(Runner::Exact(ExactDeduper::new(filter), d.save_filter))
        }
        StageSpec::DedupInconsistent(d) => Ok(Runner::Inconsistent(match d.backend {
            InconsistencyBackend::Exact => InconsistencyFilter::exact(),
            InconsistencyBackend::Bloom => {
                InconsistencyFilter::bloom(d.capacity, d.fp_rate, seed).map_err(|e| invalid(e.to_string()))?
            }
        })),
        StageSpec::SplitMono(_) => Ok(Runner::Split),
        StageSpec::Shuffle(s) => Ok(Runner::Shuffle(ShuffleConfig {
            pointers: s.pointers,
            buffer: s.buffer,
            seed: s.seed.unwrap_or(seed),
        })),
    }
}

struct Sink {
    out: Option<BufWriter<File>>,
    columns: ColumnSpec,
}

impl Sink {
    fn line(&self, rec: &Rec) -> String {
        match rec {
            Rec::Pair(p) => serialize_pair(p, &self.columns),
            Rec::Mono(m) => serialize_mono(m),
        }
    }

    fn drop_rec(&mut self, rec: &Rec, reason: DropReason) -> io::Result<()> {
        if self.out.is_some() {
            let line = self.line(rec);
            self.drop_raw(&line, reason)?;
        }
        Ok(())
    }

    fn drop_raw(&mut self, line: &str, reason: DropReason) -> io::Result<()> {
        if let Some(w) = &mut self.out {
            writeln!(w, "{line}\t{reason}")?;
        }
        Ok(())
    }
}

fn tally(report: &mut StageReport, reason: DropReason) {
    *report.dropped.entry(reason.as_str().to_string()).or_insert(0) += 1;
}

/// Runs the pipeline described by `config`, writing the output, the optional
/// dropped-record file and the optional JSON report.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport, PipelineError> {
    Pipeline::new(config.clone())?.run()
}

pub struct Pipeline {
    config: PipelineConfig,
    identifier: Option<Arc<dyn LanguageIdentifier>>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Pipeline { config, identifier: None })
    }

    /// Replaces the configured identifier of every langid stage.
    pub fn with_identifier(mut self, id: Arc<dyn LanguageIdentifier>) -> Self {
        self.identifier = Some(id);
        self
    }

    pub fn run(&self) -> Result<RunReport, PipelineError> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if self.config.workers > 0 {
            builder = builder.num_threads(self.config.workers);
        }
        let pool = builder.build().map_err(|e| invalid(e.to_string()))?;
        pool.install(|| self.run_inner())
    }

    fn run_inner(&self) -> Result<RunReport, PipelineError> {
        let cfg = &self.config;
        let started = Instant::now();
        let columns = cfg.column_spec()?;
        let mut runners = cfg
            .stages
            .iter()
            .map(|s| build_runner(s, cfg.seed, self.identifier.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let mut reports: Vec<StageReport> = std::iter::once("read")
            .chain(cfg.stages.iter().map(StageSpec::op))
            .map(StageReport::new)
            .collect();

        let mut sink = Sink {
            out: cfg.dropped_out.as_ref().map(|p| File::create(p).map(BufWriter::new)).transpose()?,
            columns: columns.clone(),
        };
        let shuffle_cfg = match runners.last() {
            Some(Runner::Shuffle(c)) => Some(*c),
            _ => None,
        };
        let staging = match shuffle_cfg {
            Some(_) => Some(tempfile::Builder::new().prefix("pipeline-shuffle").tempfile_in(temp_dir())?),
            None => None,
        };
        let mut out = BufWriter::new(match &staging {
            Some(tmp) => tmp.reopen()?,
            None => File::create(&cfg.output)?,
        });
        let mut records_out = 0u64;

        let mut lines = Lines::new(&cfg.input);
        loop {
            let raw = lines.next_chunk(cfg.chunk_size)?;
            if raw.is_empty() {
                break;
            }
            let t0 = Instant::now();
            let parsed: Vec<Result<Rec, ()>> = raw
                .par_iter()
                .map(|line| {
                    let text = std::str::from_utf8(line).map_err(drop)?;
                    match cfg.format {
                        Format::Bitext => parse_bitext_line(text, &columns).map(Rec::Pair).map_err(drop),
                        Format::Mono => parse_mono_line(text).map(Rec::Mono).map_err(drop),
                    }
                })
                .collect();
            let read = &mut reports[0];
            let mut recs = Vec::with_capacity(parsed.len());
            for (line, p) in raw.iter().zip(parsed) {
                read.input += 1;
                match p {
                    Ok(r) => {
                        read.kept += 1;
                        recs.push(r);
                    }
                    Err(()) => {
                        tally(read, DropReason::MalformedLine);
                        sink.drop_raw(&String::from_utf8_lossy(line), DropReason::MalformedLine)?;
                    }
                }
            }
            read.output = read.kept;
            read.elapsed_secs += t0.elapsed().as_secs_f64();

            for (runner, report) in runners.iter_mut().zip(reports.iter_mut().skip(1)) {
                let t0 = Instant::now();
                report.input += recs.len() as u64;
                recs = apply(runner, recs, report, &mut sink)?;
                report.output += recs.len() as u64;
                report.elapsed_secs += t0.elapsed().as_secs_f64();
            }
            for r in &recs {
                out.write_all(sink.line(r).as_bytes())?;
                out.write_all(b"\n")?;
            }
            records_out += recs.len() as u64;
        }
        out.flush()?;
        drop(out);
        if let Some(w) = &mut sink.out {
            w.flush()?;
        }

        for runner in runners {
            if let Runner::Exact(deduper, Some(path)) = runner {
                deduper.into_filter().write_to(BufWriter::new(File::create(path)?))?;
            }
        }

        if let (Some(shuffle), Some(tmp)) = (shuffle_cfg, &staging) {
            let t0 = Instant::now();
            let out = File::create(&cfg.output)?;
            if records_out > 0 {
                let (n, _) = stream_shuffle_files(&[tmp.path().to_path_buf()], &shuffle, out)
                    .map_err(|e| io::Error::other(e.to_string()))?;
                debug_assert_eq!(n, records_out);
            }
            let report = reports.last_mut().expect("shuffle stage report");
            report.elapsed_secs += t0.elapsed().as_secs_f64();
        }

        for r in &mut reports {
            r.throughput = if r.elapsed_secs > 0.0 { r.input as f64 / r.elapsed_secs } else { 0.0 };
        }
        let wall = started.elapsed().as_secs_f64();
        let records_in = reports[0].input;
        let report = RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            seed: cfg.seed,
            records_dropped: reports.iter().map(StageReport::dropped_total).sum(),
            stages: reports,
            records_in,
            records_out,
            wall_time_secs: wall,
            throughput: if wall > 0.0 { records_in as f64 / wall } else { 0.0 },
        };
        if let Some(path) = &cfg.report {
            std::fs::write(path, report.to_json() + "\n")?;
        }
        Ok(report)
    }
}

fn apply(runner: &mut Runner, recs: Vec<Rec>, report: &mut StageReport, sink: &mut Sink) -> Result<Vec<Rec>, PipelineError> {
    let mut next = Vec::with_capacity(recs.len());
    let mut settle = |rec: &Rec, outcome: FilterOutcome<Rec>, next: &mut Vec<Rec>| -> io::Result<()> {
        match outcome {
            FilterOutcome::Keep { record, modified } => {
                report.kept += 1;
                report.modified += modified as u64;
                next.push(record);
            }
            FilterOutcome::Drop(reason) => {
                tally(report, reason);
                sink.drop_rec(rec, reason)?;
            }
        }
        Ok(())
    };
    match runner {
        Runner::Stateless(f) => {
            let outcomes: Vec<FilterOutcome<Rec>> = recs.par_iter().map(&**f).collect();
            for (rec, o) in recs.iter().zip(outcomes) {
                settle(rec, o, &mut next)?;
            }
        }
        Runner::Exact(deduper, _) => {
            for rec in recs {
                let key = match &rec {
                    Rec::Pair(p) => pair_key(p),
                    Rec::Mono(m) => mono_key(m),
                };
                if deduper.admit(&key) {
                    settle(&rec, FilterOutcome::keep(rec.clone()), &mut next)?;
                } else {
                    settle(&rec, FilterOutcome::Drop(DropReason::Duplicate), &mut next)?;
                }
            }
        }
        Runner::Inconsistent(filter) => {
            for rec in recs {
                let o = map_outcome(filter.check(pair_of(&rec).clone()), Rec::Pair);
                settle(&rec, o, &mut next)?;
            }
        }
        Runner::Split => {
            for rec in recs {
                let (a, b) = split_pair_to_mono(pair_of(&rec));
                report.kept += 1;
                next.push(Rec::Mono(a));
                next.push(Rec::Mono(b));
            }
        }
        Runner::Shuffle(_) => {
            report.kept += recs.len() as u64;
            next = recs;
        }
    }
    Ok(next)
}

/// Newline-delimited records across several files, read as raw bytes.
struct Lines<'a> {
    paths: &'a [PathBuf],
    next_path: usize,
    reader: Option<BufReader<File>>,
}

impl<'a> Lines<'a> {
    fn new(paths: &'a [PathBuf]) -> Self {
        Lines { paths, next_path: 0, reader: None }
    }

    fn next_chunk(&mut self, max: usize) -> io::Result<Vec<Vec<u8>>> {
        let mut chunk = Vec::with_capacity(max.min(1 << 16));
        while chunk.len() < max {
            let reader = match &mut self.reader {
                Some(r) => r,
                None => {
                    let Some(path) = self.paths.get(self.next_path) else { break };
                    self.next_path += 1;
                    let file = File::open(path)
                        .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
                    self.reader.insert(BufReader::with_capacity(1 << 16, file))
                }
            };
            let mut line = Vec::new();
            if reader.read_until(b'\n', &mut line)? == 0 {
                self.reader = None;
                continue;
            }
            if line.last() == Some(&b'\n') {
                line.pop();
            }
            if line.last() == Some(&b'\r') {
                line.pop();
            }
            chunk.push(line);
        }
        Ok(chunk)
    }
}

/// Reason counts summed over several run reports.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AggregateStats {
    pub schema_version: u32,
    pub runs: usize,
    pub records_in: u64,
    pub records_out: u64,
    pub dropped: BTreeMap<String, u64>,
}

pub fn aggregate_reports(reports: &[RunReport]) -> AggregateStats {
    let mut agg = AggregateStats { schema_version: REPORT_SCHEMA_VERSION, ..Default::default() };
    for r in reports {
        agg.runs += 1;
        agg.records_in += r.records_in;
        agg.records_out += r.records_out;
        for (k, v) in r.dropped_by_reason() {
            *agg.dropped.entry(k).or_insert(0) += v;
        }
    }
    agg
}

pub fn load_report(path: &Path) -> Result<RunReport, PipelineError> {
    let bad = |msg: String| PipelineError::BadReport { path: path.display().to_string(), msg };
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let report: RunReport = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if report.schema_version != REPORT_SCHEMA_VERSION {
        return Err(bad(format!("unsupported schema_version {}", report.schema_version)));
    }
    Ok(report)
}

impl AggregateStats {
    /// Aligned two-column text table.
    pub fn render_table(&self) -> String {
        let mut rows: Vec<(String, u64)> = vec![
            ("runs".into(), self.runs as u64),
            ("records_in".into(), self.records_in),
            ("records_out".into(), self.records_out),
        ];
        rows.extend(self.dropped.iter().map(|(k, v)| (format!("dropped.{k}"), *v)));
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let num = rows.iter().map(|(_, v)| v.to_string().len()).max().unwrap_or(0);
        rows.iter().map(|(k, v)| format!("{k:<width$}  {v:>num$}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
        let annotated = PipelineConfig::default_toml_annotated();
        assert_eq!(PipelineConfig::from_toml(&annotated).unwrap(), cfg);
        for op in StageSpec::OPS {
            assert!(annotated.contains(&format!("op = \"{op}\"")), "{op}");
        }
    }

    #[test]
    fn all_ops_parse_with_defaults() {
        for (spec, op) in StageSpec::all_defaults().iter().zip(StageSpec::OPS) {
            assert_eq!(spec.op(), op);
            let text = format!("input = [\"a\"]\noutput = \"b\"\nformat = \"mono\"\n[[stage]]\nop = \"{op}\"\n");
            let parsed: PipelineConfig = toml::from_str(&text).unwrap();
            assert_eq!(&parsed.stages[0], spec);
        }
    }

    #[test]
    fn config_validation() {
        let base = "input = [\"a\"]\noutput = \"b\"\n";
        let bad = [
            "[[stage]]\nop = \"clean-pair\"\nmin_chars = 5\nbogus = 1\n",
            "[[stage]]\nop = \"no-such-op\"\n",
            "[[stage]]\nop = \"clean-mono\"\n",
            "[[stage]]\nop = \"split-mono\"\n[[stage]]\nop = \"tag\"\n",
            "[[stage]]\nop = \"shuffle\"\n[[stage]]\nop = \"mdl\"\n",
            "[[stage]]\nop = \"mdl\"\nc = -1.0\n",
            "[[stage]]\nop = \"dedup-exact\"\nfp_rate = 2.0\n",
            "[[stage]]\nop = \"shuffle\"\npointers = 0\n",
            "[[stage]]\nop = \"tag\"\nprefix = \"\"\nsuffix = \"\"\n",
            "columns = \"src,tgt\"\n",
        ];
        for b in bad {
            let text = if b.starts_with("columns") { format!("{b}{base}") } else { format!("{base}{b}") };
            assert!(PipelineConfig::from_toml(&text).is_err(), "{b}");
        }
        let ok = format!("{base}[[stage]]\nop = \"clean-pair\"\nmin_chars = 5\n[[stage]]\nop = \"split-mono\"\n[[stage]]\nop = \"clean-mono\"\n[[stage]]\nop = \"shuffle\"\n");
        let cfg = PipelineConfig::from_toml(&ok).unwrap();
        assert!(matches!(&cfg.stages[0], StageSpec::CleanPair(c) if c.min_chars == 5 && c.max_word_chars == 100));
    }

    #[test]
    fn aggregate() {
        let mk = |pairs: &[(&str, u64)]| RunReport {
            schema_version: 1,
            seed: 0,
            stages: vec![StageReport {
                dropped: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
                ..StageReport::new("dedup-exact")
            }],
            records_in: 10,
            records_out: 2,
            records_dropped: 0,
            wall_time_secs: 0.0,
            throughput: 0.0,
        };
        let a = mk(&[("Duplicate", 3)]);
        let b = mk(&[("Duplicate", 5), ("TooShort", 1)]);
        let agg = aggregate_reports(&[a.clone(), b]);
        assert_eq!(agg.dropped["Duplicate"], 8);
        assert_eq!(agg.dropped["TooShort"], 1);
        assert_eq!(agg.records_in, 20);
        assert_eq!(aggregate_reports(std::slice::from_ref(&a)).dropped, a.dropped_by_reason());
        let table = agg.render_table();
        let row: Vec<&str> = table.lines().find(|l| l.starts_with("dropped.Duplicate")).unwrap().split_whitespace().collect();
        assert_eq!(row, ["dropped.Duplicate", "8"]);
        let widths: Vec<usize> = table.lines().map(str::len).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]), "{table}");
    }
}
