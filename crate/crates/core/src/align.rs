//! Locating a known string (book title, author line, ...) among OCR tokens.
//!
//! Metadata usually arrives without boxes, while OCR splits it into words,
//! merges neighbouring words or misreads characters. Alignment searches token
//! runs in reading order, optionally skipping a few tokens, for the run whose
//! joined text is closest to the reference under normalized edit distance,
//! and answers with the union of the matched boxes.

use std::cmp::Ordering;

use crate::geometry::union;
use crate::notation::GroundedSpan;
use crate::ocr::{reading_order_indices, OcrDocument, DEFAULT_LINE_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignConfig {
    /// Tokens that may be skipped inside a matched run, in total.
    pub max_gap: usize,
    /// Largest accepted normalized edit distance.
    pub max_norm_edit: f64,
    pub line_tolerance: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            max_gap: 2,
            max_norm_edit: 0.3,
            line_tolerance: DEFAULT_LINE_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub span: GroundedSpan,
    /// Matched token indices (into `doc.tokens`) in reading order.
    pub tokens: Vec<usize>,
    pub edits: usize,
    pub length: usize,
}

impl Alignment {
    pub fn distance(&self) -> f64 {
        normalized(self.edits, self.length)
    }
}

/// Lowercases, collapses whitespace and trims punctuation off each word.
pub fn canonicalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        let word = word.trim_matches(is_punct).to_lowercase();
        if word.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&word);
    }
    out
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{2026}' | '\u{2013}' | '\u{2014}'
        )
}

/// Character-level Levenshtein distance.
pub fn levenshtein(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn normalized(edits: usize, length: usize) -> f64 {
    if length == 0 {
        0.0
    } else {
        edits as f64 / length as f64
    }
}

/// Compares `e1/l1` with `e2/l2` exactly.
fn cmp_ratio((e1, l1): (usize, usize), (e2, l2): (usize, usize)) -> Ordering {
    let a = e1 as u128 * l2.max(1) as u128;
    let b = e2 as u128 * l1.max(1) as u128;
    a.cmp(&b)
}

struct Candidate {
    edits: usize,
    length: usize,
    /// Positions in reading order.
    positions: Vec<usize>,
}

impl Candidate {
    fn better_than(&self, other: &Candidate) -> bool {
        cmp_ratio((self.edits, self.length), (other.edits, other.length))
            .then(self.positions.len().cmp(&other.positions.len()))
            .then(self.positions[0].cmp(&other.positions[0]))
            .then_with(|| self.positions.cmp(&other.positions))
            == Ordering::Less
    }
}

/// Aligns `reference` against `doc`; `None` when nothing is close enough.
pub fn align_metadata(doc: &OcrDocument, reference: &str, cfg: &AlignConfig) -> Option<GroundedSpan> {
    align_detailed(doc, reference, cfg).map(|a| a.span)
}

/// Like [`align_metadata`] but also reports the matched tokens and distance.
///
/// Ties on distance go to fewer tokens, then the earliest start, then the
/// lexicographically smallest token positions.
pub fn align_detailed(doc: &OcrDocument, reference: &str, cfg: &AlignConfig) -> Option<Alignment> {
    let target: Vec<char> = canonicalize(reference).chars().collect();
    if target.is_empty() || doc.tokens.is_empty() {
        return None;
    }
    let order = reading_order_indices(&doc.tokens, cfg.line_tolerance);
    let pieces: Vec<Vec<char>> = order
        .iter()
        .map(|&i| canonicalize(&doc.tokens[i].text).chars().collect())
        .collect();
    let n = pieces.len();
    let tlen = target.len();

    let mut best: Option<Candidate> = None;
    let mut skips = Vec::with_capacity(cfg.max_gap);
    for start in 0..n {
        // Running length lower bound for any candidate starting here: window
        // length minus the largest `max_gap` interior pieces.
        let mut interior: Vec<usize> = Vec::new();
        for end in start..n {
            if end > start + 1 {
                interior.push(pieces[end - 1].len());
            }
            if end > start && lower_bound_exceeds(pieces[start].len(), &interior, cfg, tlen) {
                break;
            }
            let inner: Vec<usize> = (start + 1..end).collect();
            let max_skip = cfg.max_gap.min(inner.len());
            for k in 0..=max_skip {
                for_each_combination(&inner, k, &mut skips, &mut |skipped| {
                    let positions: Vec<usize> = (start..=end)
                        .filter(|p| !skipped.contains(p))
                        .collect();
                    let joined = join_pieces(&pieces, &positions);
                    let edits = levenshtein(&joined, &target);
                    let cand = Candidate {
                        edits,
                        length: joined.len().max(tlen),
                        positions,
                    };
                    if best.as_ref().is_none_or(|b| cand.better_than(b)) {
                        best = Some(cand);
                    }
                });
            }
        }
    }

    let best = best?;
    if normalized(best.edits, best.length) > cfg.max_norm_edit + 1e-12 {
        return None;
    }
    let tokens: Vec<usize> = best.positions.iter().map(|&p| order[p]).collect();
    let boxes: Vec<_> = tokens.iter().map(|&i| doc.tokens[i].bbox).collect();
    let span = GroundedSpan::new(reference, union(&boxes).ok()?).ok()?;
    Some(Alignment {
        span,
        tokens,
        edits: best.edits,
        length: best.length,
    })
}

fn lower_bound_exceeds(start_len: usize, interior: &[usize], cfg: &AlignConfig, tlen: usize) -> bool {
    let mut sorted = interior.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let removable: usize = sorted.iter().take(cfg.max_gap).sum();
    let lb = start_len + interior.iter().sum::<usize>() - removable;
    lb > tlen && (lb - tlen) as f64 > cfg.max_norm_edit * lb as f64 + 1e-9
}

fn join_pieces(pieces: &[Vec<char>], positions: &[usize]) -> Vec<char> {
    let mut out = Vec::new();
    for &p in positions {
        if pieces[p].is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend_from_slice(&pieces[p]);
    }
    out
}

fn for_each_combination(
    items: &[usize],
    k: usize,
    buf: &mut Vec<usize>,
    f: &mut impl FnMut(&[usize]),
) {
    fn rec(items: &[usize], k: usize, from: usize, buf: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if buf.len() == k {
            f(buf);
            return;
        }
        for i in from..items.len() {
            buf.push(items[i]);
            rec(items, k, i + 1, buf, f);
            buf.pop();
        }
    }
    buf.clear();
    rec(items, k, 0, buf, f);
}
