//! Grounded-span notation: `"text"[x_min, y_min, x_max, y_max]`.
//!
//! Output is canonical: ASCII quotes, `, ` separators and minimal decimals.
//! The parser is lenient about what models actually emit. It accepts
//! typographic quotes, any whitespace around commas and brackets, and bare
//! bracketed tuples without a quoted label. It never fails; fragments that do
//! not form a valid box are skipped.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::NotationError;
use crate::geometry::{format_box, quantize, BBox};

/// A text string tied to the (quantized) region that evidences it.
///
/// Spans recovered from bare tuples carry empty text; see [`GroundedSpan::bare`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpan")]
pub struct GroundedSpan {
    text: String,
    #[serde(rename = "box")]
    bbox: BBox,
}

#[derive(Deserialize)]
struct RawSpan {
    text: String,
    #[serde(rename = "box")]
    bbox: BBox,
}

impl TryFrom<RawSpan> for GroundedSpan {
    type Error = NotationError;

    fn try_from(raw: RawSpan) -> Result<Self, Self::Error> {
        if raw.text.is_empty() {
            return Ok(GroundedSpan::bare(raw.bbox));
        }
        GroundedSpan::new(raw.text, raw.bbox)
    }
}

impl GroundedSpan {
    pub fn new(text: impl Into<String>, bbox: BBox) -> Result<Self, NotationError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(NotationError::EmptyText);
        }
        if text.contains('"') {
            return Err(NotationError::QuoteInText(text));
        }
        if text.contains(['\n', '\r']) {
            return Err(NotationError::LineBreak(text));
        }
        Ok(Self {
            text,
            bbox: quantize(bbox),
        })
    }

    /// A box with no label, as produced by a bare `[..]` tuple.
    pub fn bare(bbox: BBox) -> Self {
        Self {
            text: String::new(),
            bbox: quantize(bbox),
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }

    pub fn is_bare(&self) -> bool {
        self.text.is_empty()
    }
}

/// Canonical notation for a span. Bare spans serialize as the tuple alone.
pub fn serialize_span(span: &GroundedSpan) -> Result<String, NotationError> {
    if span.text.contains('"') {
        return Err(NotationError::QuoteInText(span.text.clone()));
    }
    let coords = format_box(&span.bbox);
    if span.is_bare() {
        return Ok(coords);
    }
    Ok(format!("\"{}\"{}", span.text, coords))
}

/// A span found in free text together with the byte range it occupied.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSpan {
    pub span: GroundedSpan,
    pub range: Range<usize>,
}

/// Extracts every grounded span from `response`, left to right, without overlap.
///
/// Ranges are byte offsets into `response`.
pub fn parse_spans(response: &str) -> Vec<ParsedSpan> {
    let bytes = response.as_bytes();
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < response.len() {
        let rest = &response[pos..];
        let hit = if rest.starts_with('"') {
            quoted_at(response, pos, '"', '"')
        } else if rest.starts_with('\u{201C}') {
            quoted_at(response, pos, '\u{201C}', '\u{201D}')
        } else if bytes[pos] == b'[' {
            tuple_at(response, pos).map(|(bbox, end)| ParsedSpan {
                span: GroundedSpan::bare(bbox),
                range: pos..end,
            })
        } else {
            None
        };
        match hit {
            Some(found) => {
                pos = found.range.end;
                out.push(found);
            }
            None => pos += rest.chars().next().map_or(1, char::len_utf8),
        }
    }
    out
}

fn quoted_at(s: &str, start: usize, open: char, close: char) -> Option<ParsedSpan> {
    let body_start = start + open.len_utf8();
    let body_len = s[body_start..].find(close)?;
    let text = &s[body_start..body_start + body_len];
    if text.contains('\n') {
        return None;
    }
    let after = body_start + body_len + close.len_utf8();
    if !s[after..].starts_with('[') {
        return None;
    }
    let (bbox, end) = tuple_at(s, after)?;
    let span = GroundedSpan::new(text, bbox).ok()?;
    Some(ParsedSpan {
        span,
        range: start..end,
    })
}

/// Parses `[n, n, n, n]` starting at `start` (which must hold `[`).
fn tuple_at(s: &str, start: usize) -> Option<(BBox, usize)> {
    let b = s.as_bytes();
    let mut i = start + 1;
    let mut coords = [0.0; 4];
    for (k, slot) in coords.iter_mut().enumerate() {
        i = skip_ws(b, i);
        let (value, next) = number_at(s, i)?;
        *slot = value;
        i = skip_ws(b, next);
        let sep = if k == 3 { b']' } else { b',' };
        if b.get(i) != Some(&sep) {
            return None;
        }
        i += 1;
    }
    let bbox = BBox::new(coords[0], coords[1], coords[2], coords[3]).ok()?;
    Some((quantize(bbox), i))
}

fn skip_ws(b: &[u8], mut i: usize) -> usize {
    while matches!(b.get(i), Some(b' ' | b'\t' | b'\n' | b'\r')) {
        i += 1;
    }
    i
}

/// `digits [ '.' digits ] | '.' digits`
fn number_at(s: &str, start: usize) -> Option<(f64, usize)> {
    let b = s.as_bytes();
    let digits = |mut i: usize| {
        while b.get(i).is_some_and(u8::is_ascii_digit) {
            i += 1;
        }
        i
    };
    let int_end = digits(start);
    let mut end = int_end;
    if b.get(int_end) == Some(&b'.') {
        let frac_end = digits(int_end + 1);
        if frac_end > int_end + 1 {
            end = frac_end;
        }
    }
    if end == start {
        return None;
    }
    s[start..end].parse().ok().map(|v| (v, end))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(a: f64, b: f64, c: f64, d: f64) -> BBox {
        BBox::new(a, b, c, d).unwrap()
    }

    #[test]
    fn serialize_examples() {
        let s = GroundedSpan::new("LOVE YOUR NEIGHBOR", bx(0.114, 0.153, 0.9, 0.616)).unwrap();
        assert_eq!(
            serialize_span(&s).unwrap(),
            "\"LOVE YOUR NEIGHBOR\"[0.114, 0.153, 0.9, 0.616]"
        );
        let s = GroundedSpan::new("X", BBox::unit()).unwrap();
        assert_eq!(serialize_span(&s).unwrap(), "\"X\"[0, 0, 1, 1]");
        let s = GroundedSpan::new("Arrivals", bx(0.12, 0.31, 0.34, 0.398)).unwrap();
        assert_eq!(serialize_span(&s).unwrap(), "\"Arrivals\"[0.12, 0.31, 0.34, 0.398]");
    }

    #[test]
    fn rejects_quote_and_empty_text() {
        assert!(matches!(
            GroundedSpan::new("say \"hi\"", BBox::unit()),
            Err(NotationError::QuoteInText(_))
        ));
        assert!(matches!(
            GroundedSpan::new("  ", BBox::unit()),
            Err(NotationError::EmptyText)
        ));
        assert!(matches!(
            GroundedSpan::new("two\nlines", BBox::unit()),
            Err(NotationError::LineBreak(_))
        ));
    }

    #[test]
    fn parses_typographic_quotes() {
        let r = "The main title in the image is \u{201C}BABIES COME FROM AIRPORTS\u{201D}[0.084, 0.049, 0.934, 0.298].";
        let spans = parse_spans(r);
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].span.text(), "BABIES COME FROM AIRPORTS");
        assert_eq!(spans[0].span.bbox().to_array(), [0.084, 0.049, 0.934, 0.298]);
        assert_eq!(&r[spans[0].range.clone()].chars().last(), &Some(']'));
    }

    #[test]
    fn parses_ascii_quotes_and_bare_tuples() {
        let r = "see \"A\"[0.1,0.2 , 0.3,0.4] and [ 0, 0, 1, 1 ]";
        let spans = parse_spans(r);
        assert_eq!(spans.len(), 2);
        assert_eq!(spans[0].span.text(), "A");
        assert_eq!(&r[spans[0].range.clone()], "\"A\"[0.1,0.2 , 0.3,0.4]");
        assert!(spans[1].span.is_bare());
        assert_eq!(*spans[1].span.bbox(), BBox::unit());
    }

    #[test]
    fn skips_malformed_candidates() {
        assert!(parse_spans("no boxes here").is_empty());
        let r = "\"A\"[0.1, 0.2, 0.3, 0.4] then [0.1, 0.2, 0.3] then \"B\"[0.5, 0.5, 0.6, 0.6]";
        let texts: Vec<_> = parse_spans(r).into_iter().map(|p| p.span.text().to_string()).collect();
        assert_eq!(texts, ["A", "B"]);
        // out of range, negative, inverted
        assert!(parse_spans("\"A\"[0.1, 0.2, 1.3, 0.4]").is_empty());
        assert!(parse_spans("\"A\"[-0.1, 0.2, 0.3, 0.4]").is_empty());
        assert!(parse_spans("\"A\"[0.5, 0.2, 0.3, 0.4]").is_empty());
        assert!(parse_spans("[a, b, c, d]").is_empty());
    }

    #[test]
    fn quote_not_followed_by_tuple_falls_back_to_bare() {
        let spans = parse_spans("\"A\" [0.1, 0.2, 0.3, 0.4]");
        assert_eq!(spans.len(), 1);
        assert!(spans[0].span.is_bare());
    }

    #[test]
    fn parse_quantizes_long_decimals() {
        let spans = parse_spans("\"A\"[0.1234, 0.5, 0.9, 0.6166]");
        assert_eq!(spans[0].span.bbox().to_array(), [0.123, 0.5, 0.9, 0.617]);
    }

    #[test]
    fn bare_span_round_trips() {
        let s = GroundedSpan::bare(bx(0.1, 0.2, 0.3, 0.4));
        let text = serialize_span(&s).unwrap();
        assert_eq!(text, "[0.1, 0.2, 0.3, 0.4]");
        assert_eq!(parse_spans(&text)[0].span, s);
    }
}
