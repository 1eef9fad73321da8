//! Unigram vocabularies: Viterbi segmentation and merging a new-language
//! vocabulary into an existing one without changing old segmentations.
//!
//! Merging keeps every old entry untouched, drops new pieces that can be
//! spelled as two or more old pieces, and gives each remaining new piece the
//! log-probability `min(old) - delta`. Whether old-language text still
//! segments identically is then measured with [`verify_invariance`].

use std::collections::HashMap;
use std::io::{self, BufRead, Write};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate piece {0:?}")]
    DuplicatePiece(String),
    #[error("invalid log-probability {logprob} for piece {piece:?}")]
    BadLogProb { piece: String, logprob: f64 },
    #[error("empty piece")]
    EmptyPiece,
    #[error("invalid merge config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Control symbols of common unigram vocabulary dumps; they never take part in
/// segmentation and are skipped when reading.
pub const CONTROL_SYMBOLS: [&str; 4] = ["<unk>", "<s>", "</s>", "<pad>"];

/// Map from piece to log-probability, in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UnigramVocab {
    pieces: Vec<(String, f64)>,
    index: HashMap<String, usize>,
    max_piece_chars: usize,
}

impl UnigramVocab {
    /// Validates the entries: non-empty unique pieces, log-probabilities
    /// below zero (zero is allowed only for a single-piece vocabulary).
    pub fn from_entries<I, S>(entries: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut vocab = UnigramVocab::default();
        for (piece, logprob) in entries {
            vocab.push(piece.into(), logprob)?;
        }
        if vocab.len() > 1 {
            if let Some((piece, lp)) = vocab.pieces.iter().find(|(_, lp)| *lp >= 0.0) {
                return Err(VocabError::BadLogProb { piece: piece.clone(), logprob: *lp });
            }
        }
        Ok(vocab)
    }

    fn push(&mut self, piece: String, logprob: f64) -> Result<(), VocabError> {
        if piece.is_empty() {
            return Err(VocabError::EmptyPiece);
        }
        if !logprob.is_finite() || logprob > 0.0 {
            return Err(VocabError::BadLogProb { piece, logprob });
        }
        if self.index.contains_key(&piece) {
            return Err(VocabError::DuplicatePiece(piece));
        }
        self.max_piece_chars = self.max_piece_chars.max(piece.chars().count());
        self.index.insert(piece.clone(), self.pieces.len());
        self.pieces.push((piece, logprob));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn get(&self, piece: &str) -> Option<f64> {
        self.index.get(piece).map(|&i| self.pieces[i].1)
    }

    pub fn contains(&self, piece: &str) -> bool {
        self.index.contains_key(piece)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.pieces.iter().map(|(p, lp)| (p.as_str(), *lp))
    }

    pub fn min_logprob(&self) -> Option<f64> {
        self.pieces.iter().map(|(_, lp)| *lp).reduce(f64::min)
    }

    /// Reads `piece<TAB>logprob` lines. Control symbols are skipped.
    pub fn read<R: BufRead>(reader: R) -> Result<Self, VocabError> {
        let mut vocab = UnigramVocab::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 {
                return Err(VocabError::Parse {
                    line: lineno,
                    msg: format!("expected 2 tab-separated fields, found {}", fields.len()),
                });
            }
            let (piece, score) = (fields[0], fields[1]);
            if piece.contains("\\t") {
                return Err(VocabError::Parse { line: lineno, msg: "escaped tab in piece".into() });
            }
            if CONTROL_SYMBOLS.contains(&piece) {
                continue;
            }
            let logprob: f64 = score.trim().parse().map_err(|_| VocabError::Parse {
                line: lineno,
                msg: format!("bad log-probability {score:?}"),
            })?;
            vocab.push(piece.to_string(), logprob)?;
        }
        Ok(vocab)
    }

    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (piece, lp) in &self.pieces {
            writeln!(w, "{piece}\t{lp}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Token {
    pub text: String,
    /// Set for single characters not covered by the vocabulary.
    pub unknown: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentationResult {
    pub pieces: Vec<Token>,
    pub total_logprob: f64,
    pub contains_unknown: bool,
}

impl SegmentationResult {
    pub fn texts(&self) -> Vec<&str> {
        self.pieces.iter().map(|t| t.text.as_str()).collect()
    }
}

const SCORE_EPS: f64 = 1e-9;

/// Best cover of `text` by vocabulary pieces, maximizing summed log-probability.
///
/// A character with no single-character piece falls back to an unknown token
/// scored `unk_logprob`, so every text has a cover. Ties prefer fewer pieces,
/// then the longer piece at the leftmost point of difference.
pub fn viterbi_segment(text: &str, vocab: &UnigramVocab, unk_logprob: f64) -> SegmentationResult {
    let bounds: Vec<usize> = text.char_indices().map(|(i, _)| i).chain([text.len()]).collect();
    let n = bounds.len() - 1;

    // Suffix DP: best[i] describes the optimal cover of text[bounds[i]..].
    #[derive(Clone, Copy)]
    struct Cell {
        score: f64,
        pieces: usize,
        step: usize,
        unknown: bool,
    }
    let mut best: Vec<Option<Cell>> = vec![None; n + 1];
    best[n] = Some(Cell { score: 0.0, pieces: 0, step: 0, unknown: false });
    for i in (0..n).rev() {
        let mut cell: Option<Cell> = None;
        let max_len = vocab.max_piece_chars.min(n - i);
        // Longest first so equal (score, pieces) keeps the longer piece.
        for len in (1..=max_len).rev() {
            let piece = &text[bounds[i]..bounds[i + len]];
            let Some(lp) = vocab.get(piece) else { continue };
            let Some(rest) = best[i + len] else { continue };
            let cand = Cell { score: lp + rest.score, pieces: rest.pieces + 1, step: len, unknown: false };
            if better(&cand, &cell) {
                cell = Some(cand);
            }
        }
        if !vocab.contains(&text[bounds[i]..bounds[i + 1]]) {
            let rest = best[i + 1].expect("suffix always covered");
            let cand = Cell { score: unk_logprob + rest.score, pieces: rest.pieces + 1, step: 1, unknown: true };
            if better(&cand, &cell) {
                cell = Some(cand);
            }
        }
        best[i] = cell;

        fn better(cand: &Cell, cur: &Option<Cell>) -> bool {
            match cur {
                None => true,
                Some(c) => {
                    cand.score > c.score + SCORE_EPS
                        || ((cand.score - c.score).abs() <= SCORE_EPS && cand.pieces < c.pieces)
                }
            }
        }
    }

    let mut pieces = Vec::new();
    let mut i = 0;
    let mut contains_unknown = false;
    while i < n {
        let cell = best[i].expect("reachable");
        pieces.push(Token { text: text[bounds[i]..bounds[i + cell.step]].to_string(), unknown: cell.unknown });
        contains_unknown |= cell.unknown;
        i += cell.step;
    }
    SegmentationResult { pieces, total_logprob: best[0].map_or(0.0, |c| c.score), contains_unknown }
}

/// Whether `piece` can be spelled as two or more pieces of `old`.
pub fn is_composable(piece: &str, old: &UnigramVocab) -> bool {
    let bounds: Vec<usize> = piece.char_indices().map(|(i, _)| i).chain([piece.len()]).collect();
    let n = bounds.len() - 1;
    if n < 2 {
        return false;
    }
    // reach[j]: piece[..j] is a concatenation of one or more old pieces.
    let mut reach = vec![false; n + 1];
    for j in 1..=n {
        let lo = j.saturating_sub(old.max_piece_chars);
        reach[j] = (lo..j).any(|i| (i == 0 || reach[i]) && old.contains(&piece[bounds[i]..bounds[j]]));
    }
    (1..n).any(|i| reach[i] && old.contains(&piece[bounds[i]..bounds[n]]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    /// Log-space penalty below the least likely old piece.
    pub delta: f64,
    pub unk_logprob: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig { delta: 10.0, unk_logprob: -20.0 }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<(), VocabError> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(VocabError::InvalidConfig(format!("delta must be positive, got {}", self.delta)));
        }
        if !self.unk_logprob.is_finite() {
            return Err(VocabError::InvalidConfig("unk_logprob must be finite".into()));
        }
        Ok(())
    }
}

pub fn merge_vocab(
    old: &UnigramVocab,
    new: &UnigramVocab,
    cfg: &MergeConfig,
) -> Result<UnigramVocab, VocabError> {
    cfg.validate()?;
    let floor = old.min_logprob().unwrap_or(0.0) - cfg.delta;
    let mut merged = old.clone();
    for (piece, _) in new.iter() {
        if old.contains(piece) || is_composable(piece, old) {
            continue;
        }
        merged.push(piece.to_string(), floor)?;
    }
    Ok(merged)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MismatchExample {
    pub text: String,
    pub old: Vec<String>,
    pub merged: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct InvarianceReport {
    pub checked: usize,
    /// Lines the old vocabulary cannot cover without unknowns.
    pub skipped: usize,
    pub mismatches: usize,
    pub examples: Vec<MismatchExample>,
}

pub const MAX_MISMATCH_EXAMPLES: usize = 10;

/// Compares old and merged segmentations on every old-coverable line.
pub fn verify_invariance<I, S>(
    corpus: I,
    old: &UnigramVocab,
    merged: &UnigramVocab,
    unk_logprob: f64,
) -> InvarianceReport
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut report = InvarianceReport::default();
    for line in corpus {
        let text = line.as_ref();
        if text.is_empty() {
            continue;
        }
        let before = viterbi_segment(text, old, unk_logprob);
        if before.contains_unknown {
            report.skipped += 1;
            continue;
        }
        report.checked += 1;
        let after = viterbi_segment(text, merged, unk_logprob);
        if before.pieces != after.pieces {
            report.mismatches += 1;
            if report.examples.len() < MAX_MISMATCH_EXAMPLES {
                report.examples.push(MismatchExample {
                    text: text.to_string(),
                    old: before.texts().iter().map(|s| s.to_string()).collect(),
                    merged: after.texts().iter().map(|s| s.to_string()).collect(),
                });
            }
        }
    }
    report
}
