//! Conversation data: prompts for the generating chat model, parsing of its
//! completions, and automated cleanup of the returned conversations.

use serde::{Deserialize, Serialize};

use super::{ConversationTurn, InstructionSample, Role, SampleTask};
use crate::error::DatasetError;
use crate::geometry::{iou, union, BBox};
use crate::notation::{parse_spans, serialize_span, GroundedSpan};
use crate::ocr::{reading_order_indices, OcrDocument, DEFAULT_LINE_TOLERANCE};

pub const CAPTIONS_HEADING: &str = "Captions generated by BLIP-2";

/// Generation instructions appended to every prompt. Configurable; the
/// original wording used for the published data is not available.
pub const DEFAULT_GENERATION_INSTRUCTIONS: &str = "\
The captions and OCR results above describe the same image. Using them, write a multi-turn conversation between a user who asks about the image and an assistant who answers as if looking at the image directly.
Focus the questions on the textual content of the image. When a question concerns text, ask for the supporting text and its bounding box.
Every answer that relies on text in the image must quote that text immediately followed by its bounding box, in the form \"text\"[x_min, y_min, x_max, y_max], using normalized coordinates taken from the OCR results (merge boxes when the text spans several results).
Do not mention the captions, the OCR tools or their names.
Write each turn on its own line, prefixed Q1:, A1:, Q2:, A2:, and so on.";

pub const DEFAULT_BANNED_PHRASES: [&str; 2] = ["based on the paddleocr", "according to the ocr"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrBlock {
    pub engine: String,
    pub spans: Vec<GroundedSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPayload {
    pub image_id: String,
    pub captions: Vec<String>,
    pub ocr_blocks: Vec<OcrBlock>,
}

impl PromptPayload {
    /// One block per document, spans in the engine's own output order.
    /// Tokens whose text cannot be written in span notation are left out.
    pub fn from_documents<'a>(
        image_id: impl Into<String>,
        captions: Vec<String>,
        docs: impl IntoIterator<Item = &'a OcrDocument>,
    ) -> Self {
        let ocr_blocks = docs
            .into_iter()
            .map(|d| OcrBlock {
                engine: d.engine.clone(),
                spans: d
                    .tokens
                    .iter()
                    .filter_map(|t| GroundedSpan::new(t.text.clone(), t.bbox).ok())
                    .collect(),
            })
            .collect();
        Self {
            image_id: image_id.into(),
            captions,
            ocr_blocks,
        }
    }
}

/// Renders the captions, one `<engine> Results` block per OCR source and the
/// generation instructions, in that order.
pub fn build_finetune_prompt(payload: &PromptPayload, instructions: &str) -> Result<String, DatasetError> {
    if payload.captions.is_empty() {
        return Err(DatasetError::Precondition(format!(
            "{}: payload has no captions",
            payload.image_id
        )));
    }
    if payload.ocr_blocks.is_empty() {
        return Err(DatasetError::Precondition(format!(
            "{}: payload has no OCR results",
            payload.image_id
        )));
    }
    let mut out = String::new();
    out.push_str(CAPTIONS_HEADING);
    out.push('\n');
    for c in &payload.captions {
        out.push('"');
        out.push_str(c.trim());
        out.push_str("\"\n");
    }
    for block in &payload.ocr_blocks {
        out.push('\n');
        out.push_str(&block.engine);
        out.push_str(" Results\n");
        for span in &block.spans {
            let line = serialize_span(span).map_err(|e| DatasetError::Precondition(e.to_string()))?;
            out.push_str(&line);
            out.push('\n');
        }
    }
    out.push('\n');
    out.push_str(instructions.trim_end());
    out.push('\n');
    Ok(out)
}

fn turn_marker(line: &str) -> Option<(Role, &str)> {
    let line = line.trim_start_matches(|c: char| c == '*' || c == '-' || c == '#' || c.is_whitespace());
    let colon = line.find(':')?;
    let head = line[..colon].trim_end_matches('*').trim().to_ascii_lowercase();
    let rest = line[colon + 1..].trim_start_matches('*').trim();
    let numbered = |prefix: &str| {
        head.strip_prefix(prefix)
            .is_some_and(|n| n.trim().chars().all(|c| c.is_ascii_digit()))
    };
    let role = if numbered("q") || numbered("question") || matches!(head.as_str(), "user" | "human") {
        Role::User
    } else if numbered("a") || numbered("answer") || matches!(head.as_str(), "assistant" | "gpt") {
        Role::Assistant
    } else {
        return None;
    };
    Some((role, rest))
}

/// Splits a raw completion into turns.
///
/// Turns start at lines prefixed `Q1:`/`A1:`, `Q:`/`A:`, `Question:`/`Answer:`,
/// `User:`/`Assistant:` or `Human:`/`GPT:` (case-insensitive, optional
/// markdown emphasis). Following unprefixed lines continue the current turn;
/// text before the first marker is ignored.
pub fn parse_conversation(
    raw: &str,
    id: impl Into<String>,
    image_ref: impl Into<String>,
) -> Result<InstructionSample, DatasetError> {
    let id = id.into();
    let mut turns: Vec<ConversationTurn> = Vec::new();
    for line in raw.lines() {
        if let Some((role, rest)) = turn_marker(line) {
            turns.push(ConversationTurn {
                role,
                text: rest.to_string(),
            });
        } else if let Some(last) = turns.last_mut() {
            let line = line.trim();
            if !line.is_empty() {
                if !last.text.is_empty() {
                    last.text.push(' ');
                }
                last.text.push_str(line);
            }
        }
    }
    if turns.is_empty() {
        return Err(DatasetError::Structure(format!("{id}: no conversation turns found")));
    }
    Ok(InstructionSample {
        id,
        image_ref: image_ref.into(),
        task: SampleTask::Conversation,
        turns,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SanitizeConfig {
    /// Matched case-insensitively.
    pub banned_phrases: Vec<String>,
    /// Minimum best IoU an answer box needs against OCR evidence.
    pub iou_floor: f64,
    /// Longest run of reading-order-consecutive tokens merged into evidence boxes.
    pub max_merge: usize,
    pub line_tolerance: f64,
}

impl Default for SanitizeConfig {
    fn default() -> Self {
        Self {
            banned_phrases: DEFAULT_BANNED_PHRASES.iter().map(|s| s.to_string()).collect(),
            iou_floor: 0.3,
            max_merge: 4,
            line_tolerance: DEFAULT_LINE_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SanitizeReport {
    pub removed_phrases: usize,
    pub dropped_turn_pairs: usize,
    pub invalid_boxes: usize,
    pub kept: bool,
}

/// Strips banned phrases and drops question/answer pairs whose answer boxes
/// are not supported by the OCR evidence.
///
/// Evidence boxes are every token box plus the union of every run of 2 to
/// `max_merge` tokens that are consecutive in reading order. An answer box is
/// invalid when its best IoU against all evidence is below `iou_floor`.
pub fn sanitize_conversation(
    conv: &InstructionSample,
    ocr: &[OcrDocument],
    cfg: &SanitizeConfig,
) -> Result<(InstructionSample, SanitizeReport), DatasetError> {
    conv.check_alternation()?;
    let evidence = evidence_boxes(ocr, cfg);
    let mut report = SanitizeReport::default();

    let mut turns = Vec::with_capacity(conv.turns.len());
    for pair in conv.turns.chunks(2) {
        let [question, answer] = pair else {
            // trailing question without an answer
            report.dropped_turn_pairs += 1;
            continue;
        };
        let (q_text, q_removed) = remove_phrases(&question.text, &cfg.banned_phrases);
        let (a_text, a_removed) = remove_phrases(&answer.text, &cfg.banned_phrases);
        report.removed_phrases += q_removed + a_removed;

        let invalid = parse_spans(&a_text)
            .iter()
            .filter(|p| best_iou(p.span.bbox(), &evidence) < cfg.iou_floor)
            .count();
        if invalid > 0 {
            report.invalid_boxes += invalid;
            report.dropped_turn_pairs += 1;
            continue;
        }
        turns.push(ConversationTurn::user(q_text));
        turns.push(ConversationTurn::assistant(a_text));
    }
    report.kept = !turns.is_empty();
    Ok((
        InstructionSample {
            id: conv.id.clone(),
            image_ref: conv.image_ref.clone(),
            task: conv.task,
            turns,
        },
        report,
    ))
}

fn evidence_boxes(ocr: &[OcrDocument], cfg: &SanitizeConfig) -> Vec<BBox> {
    let mut out = Vec::new();
    for doc in ocr {
        let boxes: Vec<BBox> = reading_order_indices(&doc.tokens, cfg.line_tolerance)
            .into_iter()
            .map(|i| doc.tokens[i].bbox)
            .collect();
        for start in 0..boxes.len() {
            for len in 1..=cfg.max_merge.max(1) {
                if let Some(run) = boxes.get(start..start + len) {
                    out.push(union(run).expect("non-empty run"));
                }
            }
        }
    }
    out
}

fn best_iou(b: &BBox, evidence: &[BBox]) -> f64 {
    evidence.iter().map(|e| iou(b, e)).fold(0.0, f64::max)
}

/// Removes every case-insensitive occurrence of the phrases and tidies the
/// punctuation and spacing left behind. Returns the count removed.
fn remove_phrases(text: &str, phrases: &[String]) -> (String, usize) {
    let mut out = text.to_string();
    let mut removed = 0;
    let mut at_start = false;
    loop {
        // ASCII lowercasing keeps byte offsets aligned with `out`.
        let lower = out.to_ascii_lowercase();
        let hit = phrases
            .iter()
            .filter(|p| !p.is_empty())
            .filter_map(|p| lower.find(&p.to_ascii_lowercase()).map(|at| (at, p.len())))
            .min();
        let Some((at, len)) = hit else { break };
        if out[..at].trim().is_empty() {
            at_start = true;
        }
        out.replace_range(at..at + len, "");
        removed += 1;
    }
    if removed == 0 {
        return (out, 0);
    }
    // collapsing whitespace can join fragments into a fresh occurrence
    let (out, more) = remove_phrases(&tidy(&out, at_start), phrases);
    (out, removed + more)
}

fn tidy(text: &str, capitalize: bool) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.split('\n') {
        if !out.is_empty() || text.starts_with('\n') {
            out.push('\n');
        }
        let mut l = line.split([' ', '\t']).filter(|w| !w.is_empty()).collect::<Vec<_>>().join(" ");
        while l.contains(" ,") || l.contains(",,") {
            l = l.replace(" ,", ",").replace(",,", ",");
        }
        out.push_str(&l);
    }
    let mut out = out
        .trim_start_matches([',', ';', ':', ' '])
        .to_string();
    if capitalize {
        if let Some(first) = out.chars().next() {
            let upper: String = first.to_uppercase().collect();
            out.replace_range(..first.len_utf8(), &upper);
        }
    }
    out
}
