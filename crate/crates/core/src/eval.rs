//! Scoring of model responses on text-rich VQA and KIE benchmarks:
//! containment accuracy, grounded-span diagnostics and SVG overlays.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::BufRead;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, GeometryError};
use crate::exec::{map_ordered, Execution};
use crate::geometry::{iou, BBox};
use crate::notation::{parse_spans, GroundedSpan};

pub const GROUNDING_SUFFIX: &str = "Support your reasoning with the coordinates [x_min, y_min, x_max, y_max]";

/// Characters stripped from the edges of each word before matching.
pub const EDGE_PUNCTUATION: &[char] = &['.', ',', ';', ':', '!', '?', '"', '\'', '(', ')', '[', ']'];

/// Appends the grounding request to a benchmark question. Already-suffixed
/// questions are returned unchanged.
pub fn append_grounding_suffix(question: &str) -> Result<String, EvalError> {
    let q = question.trim_end();
    if q.trim().is_empty() {
        return Err(EvalError::EmptyQuestion);
    }
    if q.ends_with(GROUNDING_SUFFIX) {
        return Ok(q.to_string());
    }
    Ok(format!("{q} {GROUNDING_SUFFIX}"))
}

/// Casefolds, collapses whitespace and trims [`EDGE_PUNCTUATION`] from both
/// ends of every word. Words that are pure punctuation disappear.
pub fn canonicalize_answer(text: &str) -> String {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower
        .split_whitespace()
        .map(|w| w.trim_matches(EDGE_PUNCTUATION))
        .filter(|w| !w.is_empty())
        .collect();
    words.join(" ")
}

/// True when any answer, canonicalized, occurs inside the canonicalized
/// response. Answers that canonicalize to nothing never match.
pub fn contains_answer(response: &str, answers: &[String]) -> bool {
    let resp = canonicalize_answer(response);
    answers.iter().any(|a| {
        let a = canonicalize_answer(a);
        !a.is_empty() && resp.contains(&a)
    })
}

/// Best IoU between any emitted span and any ground-truth box.
pub fn grounding_quality(spans: &[GroundedSpan], gt_boxes: &[BBox]) -> Option<f64> {
    if spans.is_empty() || gt_boxes.is_empty() {
        return None;
    }
    let best = spans
        .iter()
        .flat_map(|s| gt_boxes.iter().map(move |g| iou(s.bbox(), g)))
        .fold(0.0, f64::max);
    Some(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub qid: String,
    #[serde(rename = "image")]
    pub image_ref: String,
    pub question: String,
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_boxes: Option<Vec<BBox>>,
    /// Pixel size, used only for overlays.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_height: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub qid: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub qid: String,
    pub correct: bool,
    /// False when no response was supplied for the question.
    pub answered: bool,
    pub spans: Vec<GroundedSpan>,
    pub best_iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub total: usize,
    pub correct: usize,
    pub incorrect: usize,
    pub missing: usize,
    pub accuracy: f64,
    /// Fraction of questions whose response contains at least one span.
    pub span_emission_rate: f64,
    pub questions_with_gt: usize,
    /// Mean best IoU over questions with ground-truth boxes; a response
    /// without spans scores 0 there.
    pub mean_best_iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aggregate: Aggregate,
    pub per_question: Vec<QuestionResult>,
}

fn read_records<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>, EvalError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let err = |message: String| EvalError::Record {
            line: idx + 1,
            message,
        };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| err(e.to_string()))?);
    }
    Ok(out)
}

/// Reads line-delimited `{qid, image, question, answers, gt_boxes?}` records.
pub fn load_benchmark<R: BufRead>(reader: R) -> Result<Vec<BenchmarkRecord>, EvalError> {
    read_records(reader)
}

/// Reads line-delimited `{qid, response}` records.
pub fn load_responses<R: BufRead>(reader: R) -> Result<Vec<ModelResponse>, EvalError> {
    read_records(reader)
}

/// Scores every benchmark question. Questions without a response are
/// incorrect. Results are ordered by qid.
pub fn evaluate(
    benchmark: &[BenchmarkRecord],
    responses: &[ModelResponse],
    exec: Execution,
) -> Result<EvalReport, EvalError> {
    let mut by_qid: BTreeMap<&str, &BenchmarkRecord> = BTreeMap::new();
    for rec in benchmark {
        if rec.answers.is_empty() {
            return Err(EvalError::NoAnswers(rec.qid.clone()));
        }
        if by_qid.insert(&rec.qid, rec).is_some() {
            return Err(EvalError::DuplicateBenchmark(rec.qid.clone()));
        }
    }
    let mut answer_for: BTreeMap<&str, &str> = BTreeMap::new();
    let mut unknown = Vec::new();
    for r in responses {
        if !by_qid.contains_key(r.qid.as_str()) {
            unknown.push(r.qid.clone());
        } else if answer_for.insert(&r.qid, &r.response).is_some() {
            return Err(EvalError::DuplicateResponse(r.qid.clone()));
        }
    }
    if !unknown.is_empty() {
        let mut seen = HashSet::new();
        unknown.retain(|q| seen.insert(q.clone()));
        return Err(EvalError::UnknownQids(unknown));
    }

    let records: Vec<&BenchmarkRecord> = by_qid.values().copied().collect();
    let per_question = map_ordered(&records, exec, |_, rec| {
        score(rec, answer_for.get(rec.qid.as_str()).copied())
    });
    let aggregate = aggregate(&records, &per_question);
    Ok(EvalReport {
        aggregate,
        per_question,
    })
}

fn score(rec: &BenchmarkRecord, response: Option<&str>) -> QuestionResult {
    let Some(text) = response else {
        return QuestionResult {
            qid: rec.qid.clone(),
            correct: false,
            answered: false,
            spans: Vec::new(),
            best_iou: None,
        };
    };
    let spans: Vec<GroundedSpan> = parse_spans(text).into_iter().map(|p| p.span).collect();
    let best_iou = grounding_quality(&spans, rec.gt_boxes.as_deref().unwrap_or(&[]));
    QuestionResult {
        qid: rec.qid.clone(),
        correct: contains_answer(text, &rec.answers),
        answered: true,
        spans,
        best_iou,
    }
}

fn aggregate(records: &[&BenchmarkRecord], results: &[QuestionResult]) -> Aggregate {
    let total = results.len();
    let correct = results.iter().filter(|r| r.correct).count();
    let emitting = results.iter().filter(|r| !r.spans.is_empty()).count();
    let frac = |n: usize| if total == 0 { 0.0 } else { n as f64 / total as f64 };
    let gt_scores: Vec<f64> = records
        .iter()
        .zip(results)
        .filter(|(rec, _)| rec.gt_boxes.as_ref().is_some_and(|g| !g.is_empty()))
        .map(|(_, r)| r.best_iou.unwrap_or(0.0))
        .collect();
    let mean_best_iou = (!gt_scores.is_empty()).then(|| gt_scores.iter().sum::<f64>() / gt_scores.len() as f64);
    Aggregate {
        total,
        correct,
        incorrect: total - correct,
        missing: results.iter().filter(|r| !r.answered).count(),
        accuracy: frac(correct),
        span_emission_rate: frac(emitting),
        questions_with_gt: gt_scores.len(),
        mean_best_iou,
    }
}

fn escape_xml(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn px(v: f64) -> String {
    let r = (v * 1000.0).round() / 1000.0;
    let s = format!("{r:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

const PRED_STYLE: &str = r##"fill="none" stroke="#e4572e" stroke-width="3""##;
const GT_STYLE: &str = r##"fill="none" stroke="#2e86de" stroke-width="3" stroke-dasharray="8 4""##;

/// SVG overlay of predicted spans (class `pred`, labelled with their text)
/// and optional ground-truth boxes (class `gt`) on the referenced image.
pub fn emit_overlay(
    image_ref: &str,
    width: u32,
    height: u32,
    spans: &[GroundedSpan],
    gt_boxes: Option<&[BBox]>,
) -> Result<String, GeometryError> {
    if width == 0 || height == 0 {
        return Err(GeometryError::DegenerateImage {
            width: width as f64,
            height: height as f64,
        });
    }
    let (w, h) = (width as f64, height as f64);
    let rect = |b: &BBox| {
        format!(
            r#"x="{}" y="{}" width="{}" height="{}""#,
            px(b.x_min() * w),
            px(b.y_min() * h),
            px(b.width() * w),
            px(b.height() * h)
        )
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        svg,
        r#"  <image href="{}" x="0" y="0" width="{width}" height="{height}"/>"#,
        escape_xml(image_ref)
    );
    for b in gt_boxes.unwrap_or(&[]) {
        let _ = writeln!(svg, r#"  <rect class="gt" {} {GT_STYLE}/>"#, rect(b));
    }
    for s in spans {
        let b = s.bbox();
        let _ = writeln!(svg, r#"  <rect class="pred" {} {PRED_STYLE}/>"#, rect(b));
        if !s.is_bare() {
            let _ = writeln!(
                svg,
                r##"  <text class="pred" x="{}" y="{}" fill="#e4572e" font-family="sans-serif" font-size="16">{}</text>"##,
                px(b.x_min() * w),
                px((b.y_min() * h - 4.0).max(14.0)),
                escape_xml(s.text())
            );
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
