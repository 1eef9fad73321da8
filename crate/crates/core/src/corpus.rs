//! Record types and the line-oriented file formats.
//!
//! Bitext lines are tab-separated with a configurable [`ColumnSpec`]; the
//! default order is `src_lang, tgt_lang, src, tgt` followed by optional score
//! columns. Monolingual lines are `lang<TAB>text`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("malformed line: expected {expected} fields, found {found}")]
    MalformedLine { expected: usize, found: usize },
    #[error("empty text field")]
    EmptyText,
    #[error("bad language code {0:?}: expected 3 lowercase ASCII letters")]
    BadLangCode(String),
    #[error("bad score in column {column}: {value:?}")]
    BadScore { column: String, value: String },
    #[error("bad column spec: {0}")]
    BadColumnSpec(String),
}

/// Three-letter lowercase language code such as `eng` or `fuv`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LangCode([u8; 3]);

impl LangCode {
    pub fn new(code: &str) -> Result<Self, CorpusError> {
        let bytes = code.as_bytes();
        if bytes.len() != 3 || !bytes.iter().all(u8::is_ascii_lowercase) {
            return Err(CorpusError::BadLangCode(code.to_string()));
        }
        Ok(LangCode([bytes[0], bytes[1], bytes[2]]))
    }

    pub fn as_str(&self) -> &str {
        // Construction guarantees ASCII.
        std::str::from_utf8(&self.0).expect("ascii lang code")
    }
}

impl FromStr for LangCode {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LangCode::new(s)
    }
}

impl fmt::Display for LangCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for LangCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_str())
    }
}

impl Serialize for LangCode {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for LangCode {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        LangCode::new(&s).map_err(serde::de::Error::custom)
    }
}

/// Named quality scores attached to a record (`laser_score`, `src_lang_score`, ...).
pub type Scores = BTreeMap<String, f64>;

pub const LASER_SCORE: &str = "laser_score";
pub const SRC_LANG_SCORE: &str = "src_lang_score";
pub const TGT_LANG_SCORE: &str = "tgt_lang_score";
pub const LANG_SCORE: &str = "lang_score";

/// Replaces tabs, carriage returns and newlines with single spaces so the
/// text can live inside one TSV field.
pub fn sanitize_text(text: &str) -> String {
    if !text.contains(['\t', '\n', '\r']) {
        return text.to_string();
    }
    text.chars()
        .map(|c| if matches!(c, '\t' | '\n' | '\r') { ' ' } else { c })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentencePair {
    pub src_lang: LangCode,
    pub tgt_lang: LangCode,
    pub src: String,
    pub tgt: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scores: Scores,
}

impl SentencePair {
    /// Builds a pair, sanitizing embedded tabs/newlines. Fails on empty text.
    pub fn new(
        src_lang: LangCode,
        tgt_lang: LangCode,
        src: &str,
        tgt: &str,
    ) -> Result<Self, CorpusError> {
        let src = sanitize_text(src);
        let tgt = sanitize_text(tgt);
        if src.trim().is_empty() || tgt.trim().is_empty() {
            return Err(CorpusError::EmptyText);
        }
        Ok(SentencePair { src_lang, tgt_lang, src, tgt, scores: Scores::new() })
    }

    pub fn with_score(mut self, name: &str, value: f64) -> Self {
        self.scores.insert(name.to_string(), value);
        self
    }

    pub fn swapped(&self) -> SentencePair {
        SentencePair {
            src_lang: self.tgt_lang,
            tgt_lang: self.src_lang,
            src: self.tgt.clone(),
            tgt: self.src.clone(),
            scores: self.scores.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonoRecord {
    pub lang: LangCode,
    pub text: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scores: Scores,
}

impl MonoRecord {
    pub fn new(lang: LangCode, text: &str) -> Result<Self, CorpusError> {
        let text = sanitize_text(text);
        if text.trim().is_empty() {
            return Err(CorpusError::EmptyText);
        }
        Ok(MonoRecord { lang, text, scores: Scores::new() })
    }
}

/// Why a record was removed. The set is closed; every stage reports one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DropReason {
    TooShort,
    NumberMismatch,
    PunctMismatch,
    UrlOrEmail,
    LongWord,
    CodeLike,
    LangIdFail,
    LaserBelowThreshold,
    LangScoreBelowThreshold,
    MdlNoisy,
    Duplicate,
    InconsistentTranslation,
    MalformedLine,
}

impl DropReason {
    pub const ALL: [DropReason; 13] = [
        DropReason::TooShort,
        DropReason::NumberMismatch,
        DropReason::PunctMismatch,
        DropReason::UrlOrEmail,
        DropReason::LongWord,
        DropReason::CodeLike,
        DropReason::LangIdFail,
        DropReason::LaserBelowThreshold,
        DropReason::LangScoreBelowThreshold,
        DropReason::MdlNoisy,
        DropReason::Duplicate,
        DropReason::InconsistentTranslation,
        DropReason::MalformedLine,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DropReason::TooShort => "TooShort",
            DropReason::NumberMismatch => "NumberMismatch",
            DropReason::PunctMismatch => "PunctMismatch",
            DropReason::UrlOrEmail => "UrlOrEmail",
            DropReason::LongWord => "LongWord",
            DropReason::CodeLike => "CodeLike",
            DropReason::LangIdFail => "LangIdFail",
            DropReason::LaserBelowThreshold => "LaserBelowThreshold",
            DropReason::LangScoreBelowThreshold => "LangScoreBelowThreshold",
            DropReason::MdlNoisy => "MdlNoisy",
            DropReason::Duplicate => "Duplicate",
            DropReason::InconsistentTranslation => "InconsistentTranslation",
            DropReason::MalformedLine => "MalformedLine",
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DropReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DropReason::ALL
            .iter()
            .find(|r| r.as_str() == s)
            .copied()
            .ok_or_else(|| format!("unknown drop reason {s:?}"))
    }
}

/// Verdict of a filter on one record.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterOutcome<T> {
    /// The record survives; `modified` is set when a repair rule rewrote it.
    Keep { record: T, modified: bool },
    Drop(DropReason),
}

impl<T> FilterOutcome<T> {
    pub fn keep(record: T) -> Self {
        FilterOutcome::Keep { record, modified: false }
    }

    pub fn is_keep(&self) -> bool {
        matches!(self, FilterOutcome::Keep { .. })
    }

    pub fn drop_reason(&self) -> Option<DropReason> {
        match self {
            FilterOutcome::Drop(r) => Some(*r),
            FilterOutcome::Keep { .. } => None,
        }
    }

    pub fn into_record(self) -> Option<T> {
        match self {
            FilterOutcome::Keep { record, .. } => Some(record),
            FilterOutcome::Drop(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Column {
    SrcLang,
    TgtLang,
    Src,
    Tgt,
    Score(String),
}

impl Column {
    fn name(&self) -> &str {
        match self {
            Column::SrcLang => "src_lang",
            Column::TgtLang => "tgt_lang",
            Column::Src => "src",
            Column::Tgt => "tgt",
            Column::Score(name) => name,
        }
    }
}

/// Ordered column layout of a bitext TSV file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSpec(Vec<Column>);

impl Default for ColumnSpec {
    fn default() -> Self {
        ColumnSpec(vec![Column::SrcLang, Column::TgtLang, Column::Src, Column::Tgt])
    }
}

impl ColumnSpec {
    pub fn new(columns: Vec<Column>) -> Result<Self, CorpusError> {
        for required in [Column::SrcLang, Column::TgtLang, Column::Src, Column::Tgt] {
            let n = columns.iter().filter(|c| **c == required).count();
            if n != 1 {
                return Err(CorpusError::BadColumnSpec(format!(
                    "column {} must appear exactly once",
                    required.name()
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for c in &columns {
            if !seen.insert(c.name().to_string()) {
                return Err(CorpusError::BadColumnSpec(format!("duplicate column {}", c.name())));
            }
        }
        Ok(ColumnSpec(columns))
    }

    /// Default layout followed by the given score columns.
    pub fn with_scores<S: AsRef<str>>(scores: &[S]) -> Result<Self, CorpusError> {
        let mut cols = ColumnSpec::default().0;
        cols.extend(scores.iter().map(|s| Column::Score(s.as_ref().to_string())));
        ColumnSpec::new(cols)
    }

    pub fn columns(&self) -> &[Column] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromStr for ColumnSpec {
    type Err = CorpusError;

    /// Parses a comma-separated list such as `src_lang,tgt_lang,src,tgt,laser_score`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let columns = s
            .split(',')
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .map(|c| match c {
                "src_lang" => Column::SrcLang,
                "tgt_lang" => Column::TgtLang,
                "src" => Column::Src,
                "tgt" => Column::Tgt,
                other => Column::Score(other.to_string()),
            })
            .collect();
        ColumnSpec::new(columns)
    }
}

impl fmt::Display for ColumnSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(Column::name).collect();
        f.write_str(&names.join(","))
    }
}

fn strip_eol(line: &str) -> &str {
    let line = line.strip_suffix('\n').unwrap_or(line);
    line.strip_suffix('\r').unwrap_or(line)
}

pub fn parse_bitext_line(line: &str, spec: &ColumnSpec) -> Result<SentencePair, CorpusError> {
    let line = strip_eol(line);
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != spec.len() {
        return Err(CorpusError::MalformedLine { expected: spec.len(), found: fields.len() });
    }
    let mut src_lang = None;
    let mut tgt_lang = None;
    let mut src = "";
    let mut tgt = "";
    let mut scores = Scores::new();
    for (column, field) in spec.columns().iter().zip(&fields) {
        match column {
            Column::SrcLang => src_lang = Some(LangCode::new(field)?),
            Column::TgtLang => tgt_lang = Some(LangCode::new(field)?),
            Column::Src => src = field,
            Column::Tgt => tgt = field,
            Column::Score(_) if field.trim().is_empty() => {}
            Column::Score(name) => {
                let value: f64 = field.trim().parse().map_err(|_| CorpusError::BadScore {
                    column: name.clone(),
                    value: field.to_string(),
                })?;
                scores.insert(name.clone(), value);
            }
        }
    }
    // ColumnSpec::new guarantees both language columns are present.
    let mut pair = SentencePair::new(src_lang.unwrap(), tgt_lang.unwrap(), src, tgt)?;
    pair.scores = scores;
    Ok(pair)
}

/// Writes the pair as one TSV line (without the trailing newline).
///
/// Score columns missing from the pair are written as empty fields; scores
/// not named in `spec` are omitted.
pub fn serialize_pair(pair: &SentencePair, spec: &ColumnSpec) -> String {
    let mut out = String::with_capacity(pair.src.len() + pair.tgt.len() + 16);
    for (i, column) in spec.columns().iter().enumerate() {
        if i > 0 {
            out.push('\t');
        }
        match column {
            Column::SrcLang => out.push_str(pair.src_lang.as_str()),
            Column::TgtLang => out.push_str(pair.tgt_lang.as_str()),
            Column::Src => out.push_str(&sanitize_text(&pair.src)),
            Column::Tgt => out.push_str(&sanitize_text(&pair.tgt)),
            Column::Score(name) => {
                if let Some(v) = pair.scores.get(name) {
                    out.push_str(&v.to_string());
                }
            }
        }
    }
    out
}

/// Parses a `lang<TAB>text` monolingual line.
pub fn parse_mono_line(line: &str) -> Result<MonoRecord, CorpusError> {
    let line = strip_eol(line);
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 2 {
        return Err(CorpusError::MalformedLine { expected: 2, found: fields.len() });
    }
    MonoRecord::new(LangCode::new(fields[0])?, fields[1])
}

/// Parses a plain text line whose language comes from the caller.
pub fn parse_plain_line(line: &str, lang: LangCode) -> Result<MonoRecord, CorpusError> {
    MonoRecord::new(lang, strip_eol(line))
}

pub fn serialize_mono(rec: &MonoRecord) -> String {
    format!("{}\t{}", rec.lang, sanitize_text(&rec.text))
}

/// Splits a pair into its two monolingual sides; scores are copied to both.
pub fn split_pair_to_mono(pair: &SentencePair) -> (MonoRecord, MonoRecord) {
    let src = MonoRecord { lang: pair.src_lang, text: pair.src.clone(), scores: pair.scores.clone() };
    let tgt = MonoRecord { lang: pair.tgt_lang, text: pair.tgt.clone(), scores: pair.scores.clone() };
    (src, tgt)
}
