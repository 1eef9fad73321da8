//! Minimum-description-length detection of repeat-pattern noise.
//!
//! A sentence `s` is cut into coding entries `w1 .. wn`. Its description
//! length is the codebook cost `C * sum(|w| for distinct w)` plus the bits
//! needed to encode the entry sequence under a sentence-local bigram model,
//! `-sum(log2 p(wi | wi-1))` with `p(b | a) = #ab / #a`. A sentinel BOS with
//! count 1 precedes `w1`, and `#a` counts every occurrence of `a` as a token,
//! including the final position.
//!
//! `MDL(s)` is the minimum over all segmentations. A sentence whose entries are
//! all distinct pays at least `C * len(s)`, so with threshold `T = C` text
//! without repeats is never flagged; `MDL(s) / len(s) < T` marks it noisy.
//!
//! [`mdl_exact`] enumerates every segmentation (short inputs only) and serves
//! as the oracle for the hill-climbing minimizer [`mdl_score`].

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdlError {
    #[error("empty segmentation")]
    EmptySegmentation,
    #[error("empty sentence")]
    EmptySentence,
    #[error("sentence of {len} code points exceeds the exact-search limit of {max}")]
    TooLongForExact { len: usize, max: usize },
    #[error("invalid MDL parameters: {0}")]
    InvalidParams(String),
    #[error("segmentation contains an empty entry")]
    EmptyEntry,
}

/// Longest input accepted by [`mdl_exact`] (2^15 segmentations).
pub const MAX_EXACT_LEN: usize = 16;

const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdlParams {
    /// Codebook weight.
    pub c: f64,
    /// Noise threshold on bits per code point.
    pub t: f64,
    pub max_candidate_len: usize,
    pub min_candidate_count: usize,
    pub max_iterations: usize,
}

impl Default for MdlParams {
    fn default() -> Self {
        MdlParams { c: 2.0, t: 2.0, max_candidate_len: 20, min_candidate_count: 2, max_iterations: 10 }
    }
}

impl MdlParams {
    pub fn validate(&self) -> Result<(), MdlError> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(MdlError::InvalidParams(format!("C must be positive, got {}", self.c)));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(MdlError::InvalidParams(format!("T must be positive, got {}", self.t)));
        }
        if self.max_candidate_len < 1 {
            return Err(MdlError::InvalidParams("max_candidate_len must be >= 1".into()));
        }
        Ok(())
    }
}

/// Ordered coding entries whose concatenation is the sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    pub entries: Vec<String>,
}

impl Segmentation {
    pub fn new<S: Into<String>>(entries: impl IntoIterator<Item = S>) -> Self {
        Segmentation { entries: entries.into_iter().map(Into::into).collect() }
    }

    pub fn sentence(&self) -> String {
        self.entries.concat()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdlResult {
    pub mdl_bits: f64,
    pub segmentation: Segmentation,
    /// `mdl_bits` per code point.
    pub ratio: f64,
    pub noisy: bool,
}

impl MdlResult {
    fn new(mdl_bits: f64, segmentation: Segmentation, len: usize, params: &MdlParams) -> Self {
        let ratio = mdl_bits / len as f64;
        MdlResult { mdl_bits, segmentation, ratio, noisy: ratio < params.t }
    }
}

/// Description length of tokens given as dense ids `0..lens.len()`, numbered
/// in order of first appearance. `lens[id]` is the entry length in code points.
fn objective_dense(tokens: &[u32], lens: &[usize], c: f64) -> f64 {
    let vocab = lens.len();
    let bos = vocab as u32;
    let mut counts = vec![0u32; vocab + 1];
    counts[vocab] = 1;
    let mut pairs = Vec::with_capacity(tokens.len());
    let mut prev = bos;
    for &t in tokens {
        counts[t as usize] += 1;
        pairs.push(((prev as u64) << 32) | t as u64);
        prev = t;
    }
    pairs.sort_unstable();

    let codebook: usize = lens.iter().sum();
    let mut bits = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i + 1;
        while j < pairs.len() && pairs[j] == pairs[i] {
            j += 1;
        }
        let pair_count = (j - i) as f64;
        let prev_count = counts[(pairs[i] >> 32) as usize] as f64;
        bits += pair_count * (prev_count / pair_count).log2();
        i = j;
    }
    c * codebook as f64 + bits
}

/// Maps `(start, end)` char ranges of `chars` to dense ids and evaluates them.
fn objective_ranges(chars: &[char], bounds: &[usize], c: f64) -> f64 {
    let mut ids: HashMap<&[char], u32> = HashMap::new();
    let mut lens = Vec::new();
    let mut tokens = Vec::with_capacity(bounds.len());
    for w in bounds.windows(2) {
        let piece = &chars[w[0]..w[1]];
        let next = ids.len() as u32;
        let id = *ids.entry(piece).or_insert_with(|| {
            lens.push(piece.len());
            next
        });
        tokens.push(id);
    }
    objective_dense(&tokens, &lens, c)
}

/// Description length in bits of one particular segmentation.
pub fn objective(seg: &Segmentation, params: &MdlParams) -> Result<f64, MdlError> {
    if seg.is_empty() {
        return Err(MdlError::EmptySegmentation);
    }
    let mut ids: HashMap<&str, u32> = HashMap::new();
    let mut lens = Vec::new();
    let mut tokens = Vec::with_capacity(seg.len());
    for entry in &seg.entries {
        if entry.is_empty() {
            return Err(MdlError::EmptyEntry);
        }
        let next = ids.len() as u32;
        let id = *ids.entry(entry.as_str()).or_insert_with(|| {
            lens.push(entry.chars().count());
            next
        });
        tokens.push(id);
    }
    Ok(objective_dense(&tokens, &lens, params.c))
}

fn segmentation_from_bounds(chars: &[char], bounds: &[usize]) -> Segmentation {
    Segmentation {
        entries: bounds.windows(2).map(|w| chars[w[0]..w[1]].iter().collect()).collect(),
    }
}

/// Exact minimum by enumerating all `2^(n-1)` segmentations.
///
/// Ties go to fewer entries, then to the lexicographically smallest entry list.
pub fn mdl_exact(sentence: &str, params: &MdlParams) -> Result<MdlResult, MdlError> {
    params.validate()?;
    let chars: Vec<char> = sentence.chars().collect();
    let n = chars.len();
    if n == 0 {
        return Err(MdlError::EmptySentence);
    }
    if n > MAX_EXACT_LEN {
        return Err(MdlError::TooLongForExact { len: n, max: MAX_EXACT_LEN });
    }

    // Dense id per substring so each evaluation avoids hashing.
    let mut substring_id = vec![vec![0u32; n + 1]; n + 1];
    {
        let mut seen: HashMap<&[char], u32> = HashMap::new();
        for i in 0..n {
            for j in i + 1..=n {
                let next = seen.len() as u32;
                substring_id[i][j] = *seen.entry(&chars[i..j]).or_insert(next);
            }
        }
    }

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut bounds = Vec::with_capacity(n + 1);
    let mut tokens = Vec::with_capacity(n);
    let mut dense: HashMap<u32, u32> = HashMap::new();
    let mut lens = Vec::with_capacity(n);
    for mask in 0u32..(1u32 << (n - 1)) {
        bounds.clear();
        bounds.push(0);
        for cut in 1..n {
            if mask & (1 << (cut - 1)) != 0 {
                bounds.push(cut);
            }
        }
        bounds.push(n);

        tokens.clear();
        dense.clear();
        lens.clear();
        for w in bounds.windows(2) {
            let global = substring_id[w[0]][w[1]];
            let next = dense.len() as u32;
            let id = *dense.entry(global).or_insert_with(|| {
                lens.push(w[1] - w[0]);
                next
            });
            tokens.push(id);
        }
        let bits = objective_dense(&tokens, &lens, params.c);

        let better = match &best {
            None => true,
            Some((best_bits, best_bounds)) => {
                if bits < best_bits - TIE_EPS {
                    true
                } else if bits <= best_bits + TIE_EPS {
                    let (a, b) = (bounds.len(), best_bounds.len());
                    a < b || (a == b && entries_lex_less(&chars, &bounds, best_bounds))
                } else {
                    false
                }
            }
        };
        if better {
            best = Some((bits, bounds.clone()));
        }
    }
    let (bits, bounds) = best.expect("at least one segmentation");
    Ok(MdlResult::new(bits, segmentation_from_bounds(&chars, &bounds), n, params))
}

fn entries_lex_less(chars: &[char], a: &[usize], b: &[usize]) -> bool {
    let ea = a.windows(2).map(|w| &chars[w[0]..w[1]]);
    let eb = b.windows(2).map(|w| &chars[w[0]..w[1]]);
    ea.lt(eb)
}

/// Entry set driving a leftmost-longest greedy segmentation.
struct EntrySet {
    entries: HashSet<Vec<char>>,
    max_len: usize,
}

impl EntrySet {
    fn empty() -> Self {
        EntrySet { entries: HashSet::new(), max_len: 1 }
    }

    fn contains_all(&self, cand: &[Vec<char>]) -> bool {
        cand.iter().all(|e| self.entries.contains(e))
    }

    fn with(&self, cand: &[Vec<char>]) -> EntrySet {
        let mut entries = self.entries.clone();
        let mut max_len = self.max_len;
        for e in cand {
            max_len = max_len.max(e.len());
            entries.insert(e.clone());
        }
        EntrySet { entries, max_len }
    }

    /// Leftmost-longest cover using the entries, single characters as fallback.
    fn segment(&self, chars: &[char]) -> Vec<usize> {
        let n = chars.len();
        let mut bounds = Vec::with_capacity(n + 1);
        bounds.push(0);
        let mut i = 0;
        while i < n {
            let mut step = 1;
            for len in (2..=self.max_len.min(n - i)).rev() {
                if self.entries.contains(&chars[i..i + len]) {
                    step = len;
                    break;
                }
            }
            i += step;
            bounds.push(i);
        }
        bounds
    }
}

/// Candidate entry groups tried by the hill climb, in a fixed order.
fn candidates(chars: &[char], params: &MdlParams) -> Vec<Vec<Vec<char>>> {
    let n = chars.len();
    let mut out: Vec<Vec<Vec<char>>> = Vec::new();

    // Repeated substrings, ordered by first occurrence then longest first.
    let max_len = params.max_candidate_len.min(n);
    let mut counts: HashMap<&[char], (usize, usize)> = HashMap::new();
    for len in 2..=max_len {
        for start in 0..=n - len {
            let e = counts.entry(&chars[start..start + len]).or_insert((0, start));
            e.0 += 1;
        }
    }
    let mut repeated: Vec<(usize, usize, &[char])> = counts
        .into_iter()
        .filter(|(_, (count, _))| *count >= params.min_candidate_count.max(1))
        .map(|(s, (_, first))| (first, s.len(), s))
        .collect();
    repeated.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    out.extend(repeated.into_iter().map(|(_, _, s)| vec![s.to_vec()]));

    // Whitespace tokens (words and whitespace runs) as one group.
    let mut words: Vec<Vec<char>> = Vec::new();
    let mut start = 0;
    for i in 1..=n {
        if i == n || chars[i].is_whitespace() != chars[start].is_whitespace() {
            if i - start >= 2 && !words.iter().any(|w| w[..] == chars[start..i]) {
                words.push(chars[start..i].to_vec());
            }
            start = i;
        }
    }
    if !words.is_empty() {
        out.push(words);
    }

    if n >= 2 {
        out.push(vec![chars.to_vec()]);
    }
    out
}

/// Heuristic minimizer; exact objective, greedy search over entry sets.
///
/// Starts from the character-level segmentation and repeatedly adds the
/// candidate entry (or seed group) whose greedy re-segmentation lowers the
/// objective most, stopping when nothing improves or after `max_iterations`.
pub fn mdl_score(sentence: &str, params: &MdlParams) -> Result<MdlResult, MdlError> {
    params.validate()?;
    let chars: Vec<char> = sentence.chars().collect();
    let n = chars.len();
    if n == 0 {
        return Err(MdlError::EmptySentence);
    }

    let mut current = EntrySet::empty();
    let mut bounds = current.segment(&chars);
    let mut bits = objective_ranges(&chars, &bounds, params.c);

    let cands = candidates(&chars, params);
    for _ in 0..params.max_iterations {
        let mut best: Option<(f64, usize, Vec<usize>)> = None;
        for (idx, cand) in cands.iter().enumerate() {
            if current.contains_all(cand) {
                continue;
            }
            let trial = current.with(cand);
            let trial_bounds = trial.segment(&chars);
            let trial_bits = objective_ranges(&chars, &trial_bounds, params.c);
            let better = match &best {
                None => true,
                Some((b, _, bb)) => {
                    trial_bits < b - TIE_EPS
                        || (trial_bits <= b + TIE_EPS && trial_bounds.len() < bb.len())
                }
            };
            if better {
                best = Some((trial_bits, idx, trial_bounds));
            }
        }
        match best {
            Some((trial_bits, idx, trial_bounds)) if trial_bits < bits - TIE_EPS => {
                current = current.with(&cands[idx]);
                bits = trial_bits;
                bounds = trial_bounds;
            }
            _ => break,
        }
    }
    Ok(MdlResult::new(bits, segmentation_from_bounds(&chars, &bounds), n, params))
}

pub fn is_noisy(sentence: &str, params: &MdlParams) -> Result<bool, MdlError> {
    Ok(mdl_score(sentence, params)?.noisy)
}
