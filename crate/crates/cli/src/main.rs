use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use corpusprep::ckpt::average_checkpoint_files;
use corpusprep::corpus::LangCode;
use corpusprep::mdl::MdlParams;
use corpusprep::pipeline::{
    aggregate_reports, load_report, run_pipeline, DedupExactStage, DedupInconsistentStage, Empty, Format,
    InconsistencyBackend, PipelineConfig, RunReport, StageSpec,
};
use corpusprep::routing::{plan_route, RoutingTable, TagFormat};
use corpusprep::rules::{RuleConfig, ScoreThresholds};
use corpusprep::shuffle::{shuffledness_of_order, static_shuffle, stream_shuffle_files, ShuffleConfig, StaticShuffleOptions, TMPDIR_ENV};
use corpusprep::vocab::{merge_vocab, verify_invariance, MergeConfig, UnigramVocab};

#[derive(Parser)]
#[command(name = "corpusprep", version, about = "Parallel-corpus preparation toolkit")]
struct Cli {
    /// Directory for temporary spill files.
    #[arg(long, global = true, env = TMPDIR_ENV)]
    tmpdir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Heuristic cleaning rules followed by score thresholds.
    Clean {
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        rules: RuleArgs,
        #[command(flatten)]
        thresholds: ThresholdArgs,
    },
    /// Drop records with MDL-detected repeat patterns.
    MdlFilter {
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        mdl: MdlArgs,
    },
    /// Keep-first exact deduplication, optionally followed by removal of
    /// inconsistent translations.
    Dedup {
        #[command(flatten)]
        io: IoArgs,
        #[arg(long, default_value_t = DedupExactStage::default().capacity)]
        capacity: u64,
        #[arg(long, default_value_t = DedupExactStage::default().fp_rate)]
        fp_rate: f64,
        /// Write the final Bloom filter here.
        #[arg(long)]
        save_filter: Option<PathBuf>,
        #[arg(long)]
        inconsistent: bool,
        #[arg(long, value_enum, default_value = "exact")]
        inconsistent_backend: BackendArg,
    },
    /// Streaming shuffle with P file pointers and a B-record buffer.
    Shuffle {
        #[arg(long = "in", required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = ShuffleConfig::default().pointers)]
        pointers: usize,
        #[arg(long, default_value_t = ShuffleConfig::default().buffer)]
        buffer: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Full external shuffle keyed by a seeded hash of the record index.
    StaticShuffle {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        memory_budget_mb: u64,
    },
    /// Add non-composable pieces of a new vocabulary to an old one.
    VocabMerge {
        #[arg(long)]
        old: PathBuf,
        #[arg(long)]
        new: PathBuf,
        #[arg(long, default_value_t = MergeConfig::default().delta)]
        delta: f64,
        #[arg(long, default_value_t = MergeConfig::default().unk_logprob)]
        unk_logprob: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check that a merged vocabulary segments old-coverable text as before.
    /// Exits with status 1 on any mismatch.
    VocabVerify {
        #[arg(long)]
        old: PathBuf,
        #[arg(long)]
        merged: PathBuf,
        /// One text per line.
        #[arg(long)]
        text: PathBuf,
        #[arg(long, default_value_t = MergeConfig::default().unk_logprob)]
        unk_logprob: f64,
    },
    /// Average the last K checkpoints.
    AvgCkpt {
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        /// Keep the given order instead of sorting names naturally.
        #[arg(long)]
        no_sort: bool,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Print the translation route for a direction as JSON.
    Route {
        #[arg(long)]
        src: String,
        #[arg(long)]
        tgt: String,
        /// Override file: `src<TAB>tgt<TAB>direct` or `src<TAB>tgt<TAB>pivot<TAB>via`.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, default_value = "eng")]
        pivot: String,
        #[arg(long, value_delimiter = ',', default_value = "eng,fra")]
        hubs: Vec<String>,
    },
    /// Prepend the target-language token to both sides of every pair.
    Tag {
        #[command(flatten)]
        io: IoArgs,
        #[arg(long, default_value = "<")]
        prefix: String,
        #[arg(long, default_value = ">")]
        suffix: String,
    },
    /// Split bitext into `lang<TAB>text` monolingual records.
    SplitMono {
        #[command(flatten)]
        io: IoArgs,
    },
    /// Sum drop counts across run reports.
    Stats {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Run a pipeline config.
    Run {
        config: Option<PathBuf>,
        /// Print the default config with every stage's defaults and exit.
        #[arg(long)]
        dump_default_config: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        dropped: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Bitext,
    Mono,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Exact,
    Bloom,
}

#[derive(Args)]
struct IoArgs {
    #[arg(long = "in", required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Dropped records, reason appended as the last column.
    #[arg(long)]
    dropped: Option<PathBuf>,
    /// JSON run report.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "bitext")]
    format: FormatArg,
    #[arg(long, default_value = "src_lang,tgt_lang,src,tgt")]
    columns: String,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl IoArgs {
    fn config(&self, stages: Vec<StageSpec>) -> PipelineConfig {
        PipelineConfig {
            seed: self.seed,
            input: self.input.clone(),
            output: self.out.clone(),
            format: self.format(),
            columns: self.columns.clone(),
            dropped_out: self.dropped.clone(),
            report: self.report.clone(),
            workers: self.workers,
            stages,
            ..PipelineConfig::default()
        }
    }

    fn format(&self) -> Format {
        match self.format {
            FormatArg::Bitext => Format::Bitext,
            FormatArg::Mono => Format::Mono,
        }
    }
}

#[derive(Args)]
struct RuleArgs {
    #[arg(long)]
    min_chars: Option<usize>,
    #[arg(long)]
    max_word_chars: Option<usize>,
    /// Replaces the default code keywords; repeat for several.
    #[arg(long = "code-keyword")]
    code_keywords: Vec<String>,
    #[arg(long)]
    no_url_email: bool,
    #[arg(long)]
    no_paren_rule: bool,
    #[arg(long)]
    no_number_rule: bool,
    #[arg(long)]
    no_punct_rule: bool,
}

impl RuleArgs {
    fn config(&self) -> RuleConfig {
        let d = RuleConfig::default();
        RuleConfig {
            min_chars: self.min_chars.unwrap_or(d.min_chars),
            max_word_chars: self.max_word_chars.unwrap_or(d.max_word_chars),
            code_keywords: if self.code_keywords.is_empty() { d.code_keywords } else { self.code_keywords.clone() },
            url_email_detection: !self.no_url_email,
            apply_paren_rule: !self.no_paren_rule,
            apply_number_rule: !self.no_number_rule,
            apply_punct_rule: !self.no_punct_rule,
        }
    }
}

#[derive(Args)]
struct ThresholdArgs {
    #[arg(long, default_value_t = ScoreThresholds::default().min_laser)]
    min_laser: f64,
    #[arg(long, default_value_t = ScoreThresholds::default().min_lang_score)]
    min_lang_score: f64,
    #[arg(long)]
    no_thresholds: bool,
}

#[derive(Args)]
struct MdlArgs {
    #[arg(long, default_value_t = MdlParams::default().c)]
    mdl_c: f64,
    #[arg(long, default_value_t = MdlParams::default().t)]
    mdl_t: f64,
    #[arg(long, default_value_t = MdlParams::default().max_candidate_len)]
    mdl_max_candidate_len: usize,
    #[arg(long, default_value_t = MdlParams::default().min_candidate_count)]
    mdl_min_candidate_count: usize,
    #[arg(long, default_value_t = MdlParams::default().max_iterations)]
    mdl_max_iterations: usize,
}

impl MdlArgs {
    fn params(&self) -> MdlParams {
        MdlParams {
            c: self.mdl_c,
            t: self.mdl_t,
            max_candidate_len: self.mdl_max_candidate_len,
            min_candidate_count: self.mdl_min_candidate_count,
            max_iterations: self.mdl_max_iterations,
        }
    }
}

fn run_and_print(cfg: PipelineConfig) -> Result<()> {
    cfg.validate()?;
    let report = run_pipeline(&cfg)?;
    print_report(&report);
    Ok(())
}

fn print_report(report: &RunReport) {
    println!("{}", report.to_json());
}

fn lang(code: &str) -> Result<LangCode> {
    LangCode::new(code).with_context(|| format!("language code {code:?}"))
}

/// Sort key that orders embedded digit runs numerically (`ckpt9` < `ckpt10`).
fn natural_key(path: &Path) -> Vec<(u8, u128, String)> {
    let name = path.to_string_lossy();
    let mut key = Vec::new();
    let mut chars = name.chars().peekable();
    while let Some(&c) = chars.peek() {
        let digit = c.is_ascii_digit();
        let mut run = String::new();
        while let Some(&c) = chars.peek() {
            if c.is_ascii_digit() != digit {
                break;
            }
            run.push(c);
            chars.next();
        }
        if digit {
            key.push((0, run.parse().unwrap_or(u128::MAX), run));
        } else {
            key.push((1, 0, run));
        }
    }
    key
}

fn read_vocab(path: &Path) -> Result<UnigramVocab> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    UnigramVocab::read(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Clean { io, rules, thresholds } => {
            let clean = match io.format() {
                Format::Bitext => StageSpec::CleanPair(rules.config()),
                Format::Mono => StageSpec::CleanMono(rules.config()),
            };
            let mut stages = vec![clean];
            if !thresholds.no_thresholds {
                stages.push(StageSpec::Threshold(ScoreThresholds {
                    min_laser: thresholds.min_laser,
                    min_lang_score: thresholds.min_lang_score,
                }));
            }
            run_and_print(io.config(stages))?;
        }
        Command::MdlFilter { io, mdl } => run_and_print(io.config(vec![StageSpec::Mdl(mdl.params())]))?,
        Command::Dedup { io, capacity, fp_rate, save_filter, inconsistent, inconsistent_backend } => {
            let mut stages = vec![StageSpec::DedupExact(DedupExactStage { capacity, fp_rate, seed: None, save_filter })];
            if inconsistent {
                let backend = match inconsistent_backend {
                    BackendArg::Exact => InconsistencyBackend::Exact,
                    BackendArg::Bloom => InconsistencyBackend::Bloom,
                };
                stages.push(StageSpec::DedupInconsistent(DedupInconsistentStage { backend, capacity, fp_rate }));
            }
            run_and_print(io.config(stages))?;
        }
        Command::Shuffle { input, out, pointers, buffer, seed } => {
            let cfg = ShuffleConfig { pointers, buffer, seed };
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            let (records, positions) = stream_shuffle_files(&input, &cfg, file)?;
            let metrics = shuffledness_of_order(&positions);
            let summary = json!({
                "records": records,
                "pointers": pointers,
                "buffer": buffer,
                "seed": seed,
                "spearman_rho": metrics.spearman_rho,
                "mean_normalized_displacement": metrics.mean_normalized_displacement,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::StaticShuffle { input, out, seed, memory_budget_mb } => {
            let opts = StaticShuffleOptions { memory_budget: memory_budget_mb.max(1) << 20 };
            let records = static_shuffle(&input, &out, seed, &opts)?;
            println!("{}", serde_json::to_string_pretty(&json!({ "records": records, "seed": seed }))?);
        }
        Command::VocabMerge { old, new, delta, unk_logprob, out } => {
            let (old_vocab, new_vocab) = (read_vocab(&old)?, read_vocab(&new)?);
            let merged = merge_vocab(&old_vocab, &new_vocab, &MergeConfig { delta, unk_logprob })?;
            let mut w = BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
            merged.write(&mut w)?;
            w.flush()?;
            let summary = json!({
                "old": old_vocab.len(),
                "new": new_vocab.len(),
                "merged": merged.len(),
                "added": merged.len() - old_vocab.len(),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::VocabVerify { old, merged, text, unk_logprob } => {
            let (old_vocab, merged_vocab) = (read_vocab(&old)?, read_vocab(&merged)?);
            let reader = BufReader::new(File::open(&text).with_context(|| format!("opening {}", text.display()))?);
            let lines = reader.lines().collect::<Result<Vec<_>, _>>()?;
            let report = verify_invariance(&lines, &old_vocab, &merged_vocab, unk_logprob);
            println!("{}", serde_json::to_string_pretty(&report)?);
            if report.mismatches > 0 {
                return Ok(ExitCode::from(1));
            }
        }
        Command::AvgCkpt { k, out, no_sort, mut files } => {
            if !no_sort {
                files.sort_by_cached_key(|p| natural_key(p));
            }
            let avg = average_checkpoint_files(&files, k)?;
            avg.save(&out).with_context(|| format!("writing {}", out.display()))?;
            let summary = json!({
                "k": k,
                "sources": avg.metadata.get("avg.sources"),
                "tensors": avg.len(),
                "out": out,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Route { src, tgt, table, pivot, hubs } => {
            let hubs = hubs.iter().map(|h| lang(h)).collect::<Result<Vec<_>>>()?;
            let mut routing = RoutingTable::new(lang(&pivot)?, hubs)?;
            if let Some(path) = table {
                let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
                routing.load_overrides(BufReader::new(file))?;
            }
            let route = plan_route(lang(&src)?, lang(&tgt)?, &routing)?;
            println!("{}", serde_json::to_string(&route)?);
        }
        Command::Tag { io, prefix, suffix } => {
            if io.format() != Format::Bitext {
                bail!("tag needs bitext input");
            }
            let format = TagFormat::new(&prefix, &suffix)?;
            run_and_print(io.config(vec![StageSpec::Tag(format)]))?;
        }
        Command::SplitMono { io } => {
            if io.format() != Format::Bitext {
                bail!("split-mono needs bitext input");
            }
            run_and_print(io.config(vec![StageSpec::SplitMono(Empty {})]))?;
        }
        Command::Stats { reports, json } => {
            let loaded = reports.iter().map(|p| load_report(p)).collect::<Result<Vec<_>, _>>()?;
            let agg = aggregate_reports(&loaded);
            if json {
                println!("{}", serde_json::to_string_pretty(&agg)?);
            } else {
                print!("{}", agg.render_table());
            }
        }
        Command::Run { config, dump_default_config, seed, workers, output, report, dropped } => {
            if dump_default_config {
                print!("{}", PipelineConfig::default_toml_annotated());
                return Ok(ExitCode::SUCCESS);
            }
            let Some(path) = config else { bail!("a config file is required (or --dump-default-config)") };
            let mut cfg = PipelineConfig::load(&path).with_context(|| format!("loading {}", path.display()))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(o) = output {
                cfg.output = o;
            }
            if report.is_some() {
                cfg.report = report;
            }
            if dropped.is_some() {
                cfg.dropped_out = dropped;
            }
            run_and_print(cfg)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(dir) = &cli.tmpdir {
        std::env::set_var(TMPDIR_ENV, dir);
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
