//! Heuristic cleaning rules for bitext and monolingual records, score
//! thresholds for mined corpora, and language-identification filtering.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    DropReason, FilterOutcome, LangCode, MonoRecord, Scores, SentencePair, LANG_SCORE,
    LASER_SCORE, SRC_LANG_SCORE, TGT_LANG_SCORE,
};
use crate::textnorm::{extract_numbers, final_punct_class, paren_profile, remove_paren_spans};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuleError {
    #[error("language identifier unavailable: {0}")]
    IdentifierUnavailable(String),
    #[error("invalid rule config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleConfig {
    /// Minimum sentence length in code points, spaces included.
    pub min_chars: usize,
    pub max_word_chars: usize,
    pub code_keywords: Vec<String>,
    pub url_email_detection: bool,
    pub apply_paren_rule: bool,
    pub apply_number_rule: bool,
    pub apply_punct_rule: bool,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            min_chars: 30,
            max_word_chars: 100,
            code_keywords: vec!["if (".into(), "==".into(), ".getAttribute".into()],
            url_email_detection: true,
            apply_paren_rule: true,
            apply_number_rule: true,
            apply_punct_rule: true,
        }
    }
}

impl RuleConfig {
    pub fn validate(&self) -> Result<(), RuleError> {
        if self.max_word_chars < 1 {
            return Err(RuleError::InvalidConfig("max_word_chars must be >= 1".into()));
        }
        if self.code_keywords.iter().any(String::is_empty) {
            return Err(RuleError::InvalidConfig("code keywords must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreThresholds {
    pub min_laser: f64,
    pub min_lang_score: f64,
}

impl Default for ScoreThresholds {
    fn default() -> Self {
        ScoreThresholds { min_laser: 1.06, min_lang_score: 0.95 }
    }
}

impl ScoreThresholds {
    pub fn validate(&self) -> Result<(), RuleError> {
        if !self.min_laser.is_finite() || !self.min_lang_score.is_finite() {
            return Err(RuleError::InvalidConfig("thresholds must be finite".into()));
        }
        Ok(())
    }
}

fn has_url_or_email(text: &str) -> bool {
    let lower = text.to_ascii_lowercase();
    if lower.contains("http://") || lower.contains("https://") || lower.contains("www.") {
        return true;
    }
    text.split_whitespace().any(|token| match token.find('@') {
        Some(at) => token[at + 1..].contains('.'),
        None => false,
    })
}

/// Rules 4-7 in order: length, URL/email, long word, code keyword. Each
/// rule is checked on every given side before the next rule runs.
fn single_side_rules(texts: &[&str], cfg: &RuleConfig) -> Option<DropReason> {
    if texts.iter().any(|t| t.chars().count() < cfg.min_chars) {
        return Some(DropReason::TooShort);
    }
    if cfg.url_email_detection && texts.iter().any(|t| has_url_or_email(t)) {
        return Some(DropReason::UrlOrEmail);
    }
    if texts
        .iter()
        .any(|t| t.split_whitespace().any(|w| w.chars().count() > cfg.max_word_chars))
    {
        return Some(DropReason::LongWord);
    }
    if texts.iter().any(|t| cfg.code_keywords.iter().any(|k| t.contains(k.as_str()))) {
        return Some(DropReason::CodeLike);
    }
    None
}

/// Applies the pair rules in fixed order; the first triggered rule decides.
///
/// 1. differing parenthesis counts: strip balanced spans from both sides and continue
/// 2. number multisets differ: `NumberMismatch`
/// 3. watched terminal punctuation differs: `PunctMismatch`
/// 4. either side shorter than `min_chars`: `TooShort`
/// 5. URL or email on either side: `UrlOrEmail`
/// 6. a whitespace token longer than `max_word_chars`: `LongWord`
/// 7. a code keyword on either side: `CodeLike`
pub fn clean_pair(pair: &SentencePair, cfg: &RuleConfig) -> FilterOutcome<SentencePair> {
    let mut src = std::borrow::Cow::Borrowed(pair.src.as_str());
    let mut tgt = std::borrow::Cow::Borrowed(pair.tgt.as_str());
    let mut modified = false;

    if cfg.apply_paren_rule {
        let (ps, pt) = (paren_profile(&src), paren_profile(&tgt));
        if ps.open_count + ps.close_count != pt.open_count + pt.close_count {
            let (ns, nt) = (remove_paren_spans(&src), remove_paren_spans(&tgt));
            modified = ns != *src || nt != *tgt;
            src = ns.into();
            tgt = nt.into();
        }
    }
    if src.trim().is_empty() || tgt.trim().is_empty() {
        return FilterOutcome::Drop(DropReason::TooShort);
    }
    if cfg.apply_number_rule && extract_numbers(&src) != extract_numbers(&tgt) {
        return FilterOutcome::Drop(DropReason::NumberMismatch);
    }
    if cfg.apply_punct_rule && final_punct_class(&src) != final_punct_class(&tgt) {
        return FilterOutcome::Drop(DropReason::PunctMismatch);
    }
    if let Some(reason) = single_side_rules(&[&src, &tgt], cfg) {
        return FilterOutcome::Drop(reason);
    }

    if modified {
        let mut out = pair.clone();
        out.src = src.into_owned();
        out.tgt = tgt.into_owned();
        FilterOutcome::Keep { record: out, modified: true }
    } else {
        FilterOutcome::keep(pair.clone())
    }
}

/// Single-sided rules (length, URL/email, long word, code keyword) for one text.
pub fn clean_mono(rec: &MonoRecord, cfg: &RuleConfig) -> FilterOutcome<MonoRecord> {
    if let Some(reason) = single_side_rules(&[&rec.text], cfg) {
        return FilterOutcome::Drop(reason);
    }
    FilterOutcome::keep(rec.clone())
}

fn below(scores: &Scores, key: &str, min: f64) -> bool {
    scores.get(key).is_some_and(|v| *v < min)
}

/// Mined-corpus thresholds. Missing score keys skip their rule.
pub fn threshold_filter(pair: &SentencePair, th: &ScoreThresholds) -> FilterOutcome<SentencePair> {
    if below(&pair.scores, LASER_SCORE, th.min_laser) {
        return FilterOutcome::Drop(DropReason::LaserBelowThreshold);
    }
    if below(&pair.scores, SRC_LANG_SCORE, th.min_lang_score)
        || below(&pair.scores, TGT_LANG_SCORE, th.min_lang_score)
    {
        return FilterOutcome::Drop(DropReason::LangScoreBelowThreshold);
    }
    FilterOutcome::keep(pair.clone())
}

/// Monolingual records are judged on their language score only (`lang_score`).
pub fn threshold_filter_mono(rec: &MonoRecord, th: &ScoreThresholds) -> FilterOutcome<MonoRecord> {
    if below(&rec.scores, LANG_SCORE, th.min_lang_score) {
        return FilterOutcome::Drop(DropReason::LangScoreBelowThreshold);
    }
    FilterOutcome::keep(rec.clone())
}

/// What an identifier sees for one text.
#[derive(Debug, Clone, Copy)]
pub struct LangIdQuery<'a> {
    pub text: &'a str,
    pub declared: LangCode,
    /// Precomputed language-id confidence for this side, when the record carries one.
    pub precomputed: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Identification {
    pub lang: LangCode,
    pub confidence: f64,
}

/// Pluggable language identifier. Implementations are shared across worker
/// threads, so `identify` takes `&self` and the trait requires `Sync`.
pub trait LanguageIdentifier: Send + Sync {
    fn identify(&self, query: &LangIdQuery<'_>) -> Result<Identification, RuleError>;
}

/// Trusts the declared language with full confidence.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoIdentifier;

impl LanguageIdentifier for EchoIdentifier {
    fn identify(&self, query: &LangIdQuery<'_>) -> Result<Identification, RuleError> {
        Ok(Identification { lang: query.declared, confidence: 1.0 })
    }
}

/// Reads identification confidence from score columns computed upstream.
///
/// A record without the relevant column is treated as confidently identified.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScoreColumnIdentifier;

impl LanguageIdentifier for ScoreColumnIdentifier {
    fn identify(&self, query: &LangIdQuery<'_>) -> Result<Identification, RuleError> {
        Ok(Identification { lang: query.declared, confidence: query.precomputed.unwrap_or(1.0) })
    }
}

fn accepts(
    id: &dyn LanguageIdentifier,
    query: LangIdQuery<'_>,
    min_conf: f64,
) -> Result<bool, RuleError> {
    let ident = id.identify(&query)?;
    Ok(ident.lang == query.declared && ident.confidence >= min_conf)
}

pub fn langid_filter_pair(
    pair: &SentencePair,
    id: &dyn LanguageIdentifier,
    min_conf: f64,
) -> Result<FilterOutcome<SentencePair>, RuleError> {
    let src = LangIdQuery {
        text: &pair.src,
        declared: pair.src_lang,
        precomputed: pair.scores.get(SRC_LANG_SCORE).copied(),
    };
    let tgt = LangIdQuery {
        text: &pair.tgt,
        declared: pair.tgt_lang,
        precomputed: pair.scores.get(TGT_LANG_SCORE).copied(),
    };
    if accepts(id, src, min_conf)? && accepts(id, tgt, min_conf)? {
        Ok(FilterOutcome::keep(pair.clone()))
    } else {
        Ok(FilterOutcome::Drop(DropReason::LangIdFail))
    }
}

pub fn langid_filter_mono(
    rec: &MonoRecord,
    id: &dyn LanguageIdentifier,
    min_conf: f64,
) -> Result<FilterOutcome<MonoRecord>, RuleError> {
    let query = LangIdQuery {
        text: &rec.text,
        declared: rec.lang,
        precomputed: rec.scores.get(LANG_SCORE).copied(),
    };
    if accepts(id, query, min_conf)? {
        Ok(FilterOutcome::keep(rec.clone()))
    } else {
        Ok(FilterOutcome::Drop(DropReason::LangIdFail))
    }
}
