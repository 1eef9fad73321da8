//! Target-language tagging and pivot route planning.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LangCode, SentencePair};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("source and target are both {0}")]
    SameLanguage(LangCode),
    #[error("pivot {via} must differ from source and target")]
    PivotIsEndpoint { via: LangCode },
    #[error("pivot language {0} is not a hub language")]
    PivotNotHub(LangCode),
    #[error("text is already tagged with {0}")]
    AlreadyTagged(LangCode),
    #[error("text carries no tag token")]
    NotTagged,
    #[error("invalid tag format: {0}")]
    BadTagFormat(String),
    #[error("routing table line {line}: {msg}")]
    BadTable { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "route", rename_all = "lowercase")]
pub enum Route {
    Direct { src: LangCode, tgt: LangCode },
    Pivot { src: LangCode, via: LangCode, tgt: LangCode },
}

impl Route {
    pub fn direct(src: LangCode, tgt: LangCode) -> Result<Self, RoutingError> {
        if src == tgt {
            return Err(RoutingError::SameLanguage(src));
        }
        Ok(Route::Direct { src, tgt })
    }

    pub fn pivot(src: LangCode, via: LangCode, tgt: LangCode) -> Result<Self, RoutingError> {
        if src == tgt {
            return Err(RoutingError::SameLanguage(src));
        }
        if via == src || via == tgt {
            return Err(RoutingError::PivotIsEndpoint { via });
        }
        Ok(Route::Pivot { src, via, tgt })
    }

    pub fn endpoints(&self) -> (LangCode, LangCode) {
        match *self {
            Route::Direct { src, tgt } | Route::Pivot { src, tgt, .. } => (src, tgt),
        }
    }

    pub fn via(&self) -> Option<LangCode> {
        match *self {
            Route::Direct { .. } => None,
            Route::Pivot { via, .. } => Some(via),
        }
    }

    /// The translation legs in order.
    pub fn legs(&self) -> Vec<(LangCode, LangCode)> {
        match *self {
            Route::Direct { src, tgt } => vec![(src, tgt)],
            Route::Pivot { src, via, tgt } => vec![(src, via), (via, tgt)],
        }
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Route::Direct { src, tgt } => write!(f, "{src}->{tgt}"),
            Route::Pivot { src, via, tgt } => write!(f, "{src}->{via}->{tgt}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingTable {
    pivot: LangCode,
    hubs: BTreeSet<LangCode>,
    overrides: BTreeMap<(LangCode, LangCode), Route>,
}

impl Default for RoutingTable {
    fn default() -> Self {
        let eng = LangCode::new("eng").unwrap();
        let fra = LangCode::new("fra").unwrap();
        RoutingTable { pivot: eng, hubs: [eng, fra].into(), overrides: BTreeMap::new() }
    }
}

impl RoutingTable {
    pub fn new(pivot: LangCode, hubs: impl IntoIterator<Item = LangCode>) -> Result<Self, RoutingError> {
        let hubs: BTreeSet<LangCode> = hubs.into_iter().collect();
        if !hubs.contains(&pivot) {
            return Err(RoutingError::PivotNotHub(pivot));
        }
        Ok(RoutingTable { pivot, hubs, overrides: BTreeMap::new() })
    }

    pub fn pivot(&self) -> LangCode {
        self.pivot
    }

    pub fn hubs(&self) -> &BTreeSet<LangCode> {
        &self.hubs
    }

    pub fn overrides(&self) -> impl Iterator<Item = &Route> {
        self.overrides.values()
    }

    /// Routes are validated on construction, so any `Route` is acceptable here.
    pub fn set_override(&mut self, route: Route) {
        self.overrides.insert(route.endpoints(), route);
    }

    /// Reads override lines `src<TAB>tgt<TAB>direct` or
    /// `src<TAB>tgt<TAB>pivot<TAB>via` into this table. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn load_overrides<R: BufRead>(&mut self, reader: R) -> Result<(), RoutingError> {
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let bad = |msg: String| RoutingError::BadTable { line: lineno, msg };
            let line = line.map_err(|e| bad(e.to_string()))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let lang = |s: &str| LangCode::new(s.trim()).map_err(|e| bad(e.to_string()));
            let route = match fields.as_slice() {
                [src, tgt, kind] if kind.trim() == "direct" => Route::direct(lang(src)?, lang(tgt)?),
                [src, tgt, kind, via] if kind.trim() == "pivot" => Route::pivot(lang(src)?, lang(via)?, lang(tgt)?),
                _ => return Err(bad(format!("expected `src tgt direct` or `src tgt pivot via`, got {line:?}"))),
            }
            .map_err(|e| bad(e.to_string()))?;
            self.set_override(route);
        }
        Ok(())
    }

    pub fn write_overrides(&self) -> String {
        let mut out = String::new();
        for route in self.overrides.values() {
            match route {
                Route::Direct { src, tgt } => out.push_str(&format!("{src}\t{tgt}\tdirect\n")),
                Route::Pivot { src, via, tgt } => out.push_str(&format!("{src}\t{tgt}\tpivot\t{via}\n")),
            }
        }
        out
    }
}

/// Overrides win. Otherwise a pair of non-hub languages pivots through the
/// pivot language, a non-hub source into a non-pivot hub (X to French)
/// pivots too, and everything else (hub sources, X to the pivot) is direct.
pub fn plan_route(src: LangCode, tgt: LangCode, table: &RoutingTable) -> Result<Route, RoutingError> {
    if src == tgt {
        return Err(RoutingError::SameLanguage(src));
    }
    if let Some(route) = table.overrides.get(&(src, tgt)) {
        return Ok(*route);
    }
    let src_hub = table.hubs.contains(&src);
    let tgt_hub = table.hubs.contains(&tgt);
    if !src_hub && (!tgt_hub || tgt != table.pivot) {
        Route::pivot(src, table.pivot, tgt)
    } else {
        Route::direct(src, tgt)
    }
}

/// Surface form of a language tag: `prefix + code + suffix`, followed by one
/// space when prepended to text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TagFormat {
    pub prefix: String,
    pub suffix: String,
}

impl Default for TagFormat {
    fn default() -> Self {
        TagFormat { prefix: "<".into(), suffix: ">".into() }
    }
}

impl TagFormat {
    pub fn new(prefix: &str, suffix: &str) -> Result<Self, RoutingError> {
        if prefix.is_empty() && suffix.is_empty() {
            return Err(RoutingError::BadTagFormat("prefix and suffix are both empty".into()));
        }
        if prefix.chars().chain(suffix.chars()).any(|c| c.is_whitespace() || c.is_ascii_lowercase()) {
            return Err(RoutingError::BadTagFormat("prefix/suffix may not contain whitespace or lowercase ASCII".into()));
        }
        Ok(TagFormat { prefix: prefix.into(), suffix: suffix.into() })
    }

    pub fn token(&self, lang: LangCode) -> String {
        format!("{}{}{}", self.prefix, lang, self.suffix)
    }

    /// The language of a leading tag token, if `text` starts with one.
    pub fn leading_tag(&self, text: &str) -> Option<LangCode> {
        let rest = text.strip_prefix(self.prefix.as_str())?;
        let code = rest.get(..3)?;
        let after = rest[3..].strip_prefix(self.suffix.as_str())?;
        if !(after.is_empty() || after.starts_with(' ')) {
            return None;
        }
        LangCode::new(code).ok()
    }

    pub fn tag(&self, lang: LangCode, text: &str) -> Result<String, RoutingError> {
        if let Some(existing) = self.leading_tag(text) {
            return Err(RoutingError::AlreadyTagged(existing));
        }
        Ok(format!("{} {}", self.token(lang), text))
    }

    pub fn detag<'a>(&self, text: &'a str) -> Result<(LangCode, &'a str), RoutingError> {
        let lang = self.leading_tag(text).ok_or(RoutingError::NotTagged)?;
        let skip = self.token(lang).len();
        let rest = &text[skip..];
        Ok((lang, rest.strip_prefix(' ').unwrap_or(rest)))
    }
}

/// Prepends the target-language token to both sides. The source language is
/// never written.
pub fn tag_for_training(pair: &SentencePair, format: &TagFormat) -> Result<(String, String), RoutingError> {
    let enc = format.tag(pair.tgt_lang, &pair.src)?;
    let dec = format.tag(pair.tgt_lang, &pair.tgt)?;
    Ok((enc, dec))
}

/// [`tag_for_training`] returning a pair with both text fields replaced.
pub fn tag_pair(pair: &SentencePair, format: &TagFormat) -> Result<SentencePair, RoutingError> {
    let (src, tgt) = tag_for_training(pair, format)?;
    Ok(SentencePair { src, tgt, ..pair.clone() })
}

impl FromStr for Route {
    type Err = RoutingError;

    /// Parses `src->tgt` or `src->via->tgt`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RoutingError::BadTable { line: 0, msg: format!("bad route {s:?}") };
        let parts: Vec<LangCode> = s.split("->").map(|p| LangCode::new(p.trim()).map_err(|_| bad())).collect::<Result<_, _>>()?;
        match parts.as_slice() {
            [src, tgt] => Route::direct(*src, *tgt),
            [src, via, tgt] => Route::pivot(*src, *via, *tgt),
            _ => Err(bad()),
        }
    }
}
