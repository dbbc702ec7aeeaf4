//! Reference implementations shared by the oracle and acceptance tests.
#![allow(dead_code)]

use std::ops::Range;

use groundforge::geometry::BBox;
use groundforge::ocr::{reading_order_indices, OcrDocument, OcrToken};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

pub fn bx(a: f64, b: f64, c: f64, d: f64) -> BBox {
    BBox::new(a, b, c, d).unwrap()
}

/// The PaddleOCR result of the book-cover example: four title words plus a sign.
pub fn cover_document() -> OcrDocument {
    OcrDocument {
        id: "cover-paddle".into(),
        image_ref: "cover.png".into(),
        width: 1024,
        height: 1024,
        engine: "PaddleOCR".into(),
        tokens: vec![
            OcrToken::new("BABIES", bx(0.084, 0.067, 0.496, 0.190)),
            OcrToken::new("COME", bx(0.504, 0.049, 0.711, 0.130)),
            OcrToken::new("FROM", bx(0.150, 0.193, 0.367, 0.270)),
            OcrToken::new("AIRPORTS", bx(0.350, 0.138, 0.934, 0.298)),
            OcrToken::new("Arrivals=", bx(0.128, 0.318, 0.381, 0.400)),
        ],
    }
}

// ---- span grammar ----

pub type RefSpan = (String, [i64; 4], Range<usize>);

struct Grammar {
    ascii: Regex,
    typographic: Regex,
    bare: Regex,
}

fn grammar() -> Grammar {
    let num = r"([0-9]+(?:\.[0-9]+)?|\.[0-9]+)";
    let ws = r"[ \t\n\r]*";
    let tuple = format!(r"\[{ws}{num}{ws},{ws}{num}{ws},{ws}{num}{ws},{ws}{num}{ws}\]");
    Grammar {
        ascii: Regex::new(&format!("^\"([^\"\n]*)\"{tuple}")).unwrap(),
        typographic: Regex::new(&format!("^\u{201C}([^\u{201D}\n]*)\u{201D}{tuple}")).unwrap(),
        bare: Regex::new(&format!("^{tuple}")).unwrap(),
    }
}

fn milli(v: f64) -> i64 {
    (v * 1000.0).round() as i64
}

fn valid_coords(caps: &regex::Captures<'_>, first: usize) -> Option<[i64; 4]> {
    let v: Vec<f64> = (first..first + 4).map(|i| caps[i].parse().unwrap()).collect();
    if v.iter().any(|c| !(0.0..=1.0).contains(c)) || v[0] > v[2] || v[1] > v[3] {
        return None;
    }
    Some([milli(v[0]), milli(v[1]), milli(v[2]), milli(v[3])])
}

/// Scans left to right. At each position a quoted candidate (or, at `[`, a
/// bare tuple) defined by the regular grammar is tried; valid matches are
/// taken whole, otherwise the scan moves one character on.
pub fn reference_parse(s: &str) -> Vec<RefSpan> {
    let g = grammar();
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < s.len() {
        let rest = &s[pos..];
        let quoted = if rest.starts_with('"') {
            Some(&g.ascii)
        } else if rest.starts_with('\u{201C}') {
            Some(&g.typographic)
        } else {
            None
        };
        let hit = match quoted {
            Some(re) => re.captures(rest).and_then(|c| {
                let text = c[1].to_string();
                let ok = !text.trim().is_empty() && !text.contains('"') && !text.contains('\r');
                let coords = valid_coords(&c, 2)?;
                ok.then(|| (text, coords, pos..pos + c[0].len()))
            }),
            None if rest.starts_with('[') => g
                .bare
                .captures(rest)
                .and_then(|c| valid_coords(&c, 1).map(|coords| (String::new(), coords, pos..pos + c[0].len()))),
            None => None,
        };
        match hit {
            Some(h) => {
                pos = h.2.end;
                out.push(h);
            }
            None => pos += rest.chars().next().unwrap().len_utf8(),
        }
    }
    out
}

// ---- alignment ----

fn canon(text: &str) -> Vec<char> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
        .chars()
        .collect()
}

/// Best run found by exhaustive search: (edits, normalizing length, token indices).
#[derive(Debug, Clone, PartialEq)]
pub struct OracleMatch {
    pub edits: usize,
    pub length: usize,
    pub tokens: Vec<usize>,
}

impl OracleMatch {
    pub fn distance(&self) -> f64 {
        self.edits as f64 / self.length as f64
    }
}

/// Every run of reading-order positions `start..=end` with at most `max_gap`
/// interior positions left out, scored by Levenshtein distance over the
/// longer of the two strings. Ties: fewer tokens, then earliest start, then
/// smallest positions.
pub fn brute_force_align(doc: &OcrDocument, reference: &str, max_gap: usize) -> Option<OracleMatch> {
    let target: String = canon(reference).into_iter().collect();
    let order = reading_order_indices(&doc.tokens, 0.5);
    let n = order.len();
    let mut best: Option<(usize, usize, Vec<usize>)> = None;
    for start in 0..n {
        for end in start..n {
            let interior = end.saturating_sub(start + 1);
            for mask in 0u32..(1 << interior) {
                if mask.count_ones() as usize > max_gap {
                    continue;
                }
                let positions: Vec<usize> = (start..=end)
                    .filter(|&p| p == start || p == end || mask & (1 << (p - start - 1)) == 0)
                    .collect();
                let joined = positions
                    .iter()
                    .map(|&p| canon(&doc.tokens[order[p]].text).into_iter().collect::<String>())
                    .filter(|s| !s.is_empty())
                    .collect::<Vec<_>>()
                    .join(" ");
                let edits = strsim::levenshtein(&joined, &target);
                let length = joined.chars().count().max(target.chars().count());
                let better = match &best {
                    None => true,
                    Some((be, bl, bp)) => {
                        let lhs = edits as u128 * *bl as u128;
                        let rhs = *be as u128 * length as u128;
                        lhs < rhs || (lhs == rhs && (positions.len(), &positions) < (bp.len(), bp))
                    }
                };
                if better {
                    best = Some((edits, length, positions));
                }
            }
        }
    }
    best.map(|(edits, length, positions)| OracleMatch {
        edits,
        length,
        tokens: positions.iter().map(|&p| order[p]).collect(),
    })
}

const VOCAB: [&str; 12] = [
    "the", "grand", "hotel", "coffee", "garden", "river", "north", "market", "open", "daily", "fresh", "bread",
];

fn noisy(word: &str, rate: f64, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::new();
    for c in word.chars() {
        if rng.random_bool(rate) {
            match rng.random_range(0..3u32) {
                0 => out.push(rng.random_range(b'a'..=b'z') as char),
                1 => {}
                _ => {
                    out.push(c);
                    out.push(rng.random_range(b'a'..=b'z') as char);
                }
            }
        } else {
            out.push(c);
        }
    }
    if out.is_empty() {
        out.push(word.chars().next().unwrap());
    }
    out
}

/// A document of at most 12 tokens laid out in lines, containing a noisy
/// copy (character edit rate 0.1) of a 1 to 4 word reference among
/// distractor words.
pub fn noisy_case(rng: &mut ChaCha8Rng, idx: usize) -> (OcrDocument, String) {
    let ref_len = rng.random_range(1..=4usize);
    let reference: Vec<String> = (0..ref_len)
        .map(|_| {
            let w = VOCAB[rng.random_range(0..VOCAB.len() as u32) as usize];
            if rng.random_bool(0.5) { w.to_uppercase() } else { w.to_string() }
        })
        .collect();
    let mut words: Vec<String> = reference.iter().map(|w| noisy(w, 0.1, rng)).collect();
    if words.len() > 1 && rng.random_bool(0.2) {
        // OCR merged two neighbouring words
        let i = rng.random_range(0..(words.len() - 1) as u32) as usize;
        let merged = format!("{}{}", words[i], words[i + 1]);
        words.splice(i..=i + 1, [merged]);
    }
    if words.len() > 2 && rng.random_bool(0.2) {
        // stray token inside the reference run
        let i = rng.random_range(1..(words.len()) as u32) as usize;
        words.insert(i, "|".to_string());
    }
    let budget = 12 - words.len();
    let before = rng.random_range(0..=budget.min(5) as u32) as usize;
    let after = rng.random_range(0..=(budget - before).min(5) as u32) as usize;
    let distractor = |rng: &mut ChaCha8Rng| VOCAB[rng.random_range(0..VOCAB.len() as u32) as usize].to_string();
    let mut texts: Vec<String> = (0..before).map(|_| distractor(rng)).collect();
    texts.extend(words);
    texts.extend((0..after).map(|_| distractor(rng)));

    let mut tokens = Vec::new();
    let (mut x, mut line) = (0.02, 0usize);
    for t in texts {
        let w = 0.015 * t.chars().count() as f64 + 0.02;
        if x + w > 0.98 {
            x = 0.02;
            line += 1;
        }
        let y = 0.05 + 0.08 * line as f64;
        tokens.push(OcrToken::new(t, groundforge::quantize(bx(x, y, (x + w).min(1.0), y + 0.05))));
        x += w + 0.01;
    }
    let doc = OcrDocument {
        id: format!("noisy-{idx}"),
        image_ref: format!("noisy-{idx}.png"),
        width: 1000,
        height: 1000,
        engine: "synthetic".into(),
        tokens,
    };
    (doc, reference.join(" "))
}

#[derive(Debug, Default)]
pub struct AlignmentTally {
    pub cases: usize,
    /// Cases whose oracle distance is within the acceptance threshold.
    pub eligible: usize,
    pub agreed: usize,
    /// Cases above the threshold where alignment correctly declined.
    pub declined: usize,
    pub disagreements: Vec<String>,
}

/// Runs `n` seeded noisy cases through both the aligner and the oracle.
pub fn alignment_tally(n: usize, seed: u64) -> AlignmentTally {
    use groundforge::align::{align_detailed, AlignConfig};
    let cfg = AlignConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = AlignmentTally::default();
    for idx in 0..n {
        let (doc, reference) = noisy_case(&mut rng, idx);
        tally.cases += 1;
        let oracle = brute_force_align(&doc, &reference, cfg.max_gap).expect("non-empty document");
        let got = align_detailed(&doc, &reference, &cfg);
        if oracle.distance() <= cfg.max_norm_edit {
            tally.eligible += 1;
            let want_box = groundforge::union(
                &oracle.tokens.iter().map(|&i| doc.tokens[i].bbox).collect::<Vec<_>>(),
            )
            .unwrap();
            match got {
                Some(a) if a.tokens == oracle.tokens && *a.span.bbox() == want_box && a.edits * oracle.length == oracle.edits * a.length => {
                    tally.agreed += 1
                }
                other => tally.disagreements.push(format!(
                    "{}: reference {reference:?}, oracle {oracle:?}, aligner {:?}",
                    doc.id,
                    other.map(|a| (a.edits, a.length, a.tokens))
                )),
            }
        } else if got.is_none() {
            tally.declined += 1;
        } else {
            tally.disagreements.push(format!("{}: aligner accepted a case above the threshold", doc.id));
        }
    }
    tally
}
