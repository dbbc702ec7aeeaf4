//! Detection, recognition and spotting samples from OCR documents.

use std::collections::{BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ConversationTurn, InstructionSample};
use crate::dedup::content_hash;
use crate::error::DatasetError;
use crate::exec::{map_ordered, Execution};
use crate::geometry::format_box;
use crate::notation::{serialize_span, GroundedSpan};
use crate::ocr::{reading_order_indices, OcrDocument, OcrToken, DEFAULT_LINE_TOLERANCE};
use crate::templates::{instantiate, Bindings, Placeholder, Task, TemplateSet};

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub seed: u64,
    pub tasks: BTreeSet<Task>,
    /// Distinct texts turned into detection samples per document.
    pub detection_cap: Option<usize>,
    /// Tokens sampled for recognition per document.
    pub recognition_cap: Option<usize>,
    pub line_tolerance: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tasks: Task::ALL.into_iter().collect(),
            detection_cap: Some(10),
            recognition_cap: Some(10),
            line_tolerance: DEFAULT_LINE_TOLERANCE,
        }
    }
}

/// Tokens whose text can be written in span notation, in reading order.
fn spannable(doc: &OcrDocument, line_tolerance: f64) -> Vec<(&OcrToken, GroundedSpan)> {
    reading_order_indices(&doc.tokens, line_tolerance)
        .into_iter()
        .filter_map(|i| {
            let tok = &doc.tokens[i];
            match GroundedSpan::new(tok.text.clone(), tok.bbox) {
                Ok(span) => Some((tok, span)),
                Err(e) => {
                    log::debug!("{}: token {i} not usable as a span: {e}", doc.id);
                    None
                }
            }
        })
        .collect()
}

fn span_lines<'a>(spans: impl IntoIterator<Item = &'a GroundedSpan>) -> String {
    spans
        .into_iter()
        .map(|s| serialize_span(s).expect("span text validated on construction"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn sample(doc: &OcrDocument, id: String, task: Task, user: String, assistant: String) -> InstructionSample {
    InstructionSample {
        id,
        image_ref: doc.image_ref.clone(),
        task: task.into(),
        turns: vec![ConversationTurn::user(user), ConversationTurn::assistant(assistant)],
    }
}

/// One sample per distinct token text (first `cap` in reading order); the
/// answer lists every token carrying that text.
pub fn build_detection<R: Rng + ?Sized>(
    doc: &OcrDocument,
    templates: &TemplateSet,
    rng: &mut R,
    cap: Option<usize>,
    line_tolerance: f64,
) -> Result<Vec<InstructionSample>, DatasetError> {
    let tokens = spannable(doc, line_tolerance);
    let mut seen = HashSet::new();
    let texts: Vec<&str> = tokens
        .iter()
        .map(|(t, _)| t.text.as_str())
        .filter(|t| seen.insert(*t))
        .take(cap.unwrap_or(usize::MAX))
        .collect();

    let mut out = Vec::with_capacity(texts.len());
    for (n, text) in texts.into_iter().enumerate() {
        let template = templates.pick(Task::Detection, rng);
        let bindings = Bindings::from([(Placeholder::Text, text.to_string())]);
        let user = instantiate(template, &bindings)?;
        let answer = span_lines(tokens.iter().filter(|(t, _)| t.text == text).map(|(_, s)| s));
        out.push(sample(doc, format!("{}-det-{n}", doc.id), Task::Detection, user, answer));
    }
    Ok(out)
}

/// Samples up to `cap` tokens uniformly; each becomes a box-to-text question.
pub fn build_recognition<R: Rng + ?Sized>(
    doc: &OcrDocument,
    templates: &TemplateSet,
    rng: &mut R,
    cap: Option<usize>,
    line_tolerance: f64,
) -> Result<Vec<InstructionSample>, DatasetError> {
    let order = reading_order_indices(&doc.tokens, line_tolerance);
    let k = cap.unwrap_or(usize::MAX).min(order.len());
    let mut positions: Vec<usize> = (0..order.len()).collect();
    // partial Fisher-Yates; u32 draws keep the sequence platform independent
    for i in 0..k {
        let j = i + rng.random_range(0..(positions.len() - i) as u32) as usize;
        positions.swap(i, j);
    }
    let mut chosen = positions[..k].to_vec();
    chosen.sort_unstable();

    let mut out = Vec::with_capacity(k);
    for (n, p) in chosen.into_iter().enumerate() {
        let tok = &doc.tokens[order[p]];
        let template = templates.pick(Task::Recognition, rng);
        let bindings = Bindings::from([(Placeholder::Box, format_box(&tok.bbox))]);
        let user = instantiate(template, &bindings)?;
        out.push(sample(
            doc,
            format!("{}-rec-{n}", doc.id),
            Task::Recognition,
            user,
            tok.text.clone(),
        ));
    }
    Ok(out)
}

/// Every token as a span, one per line, in reading order.
pub fn build_spotting<R: Rng + ?Sized>(
    doc: &OcrDocument,
    templates: &TemplateSet,
    rng: &mut R,
    line_tolerance: f64,
) -> Result<InstructionSample, DatasetError> {
    let tokens = spannable(doc, line_tolerance);
    if tokens.is_empty() {
        return Err(DatasetError::EmptyDocument(doc.id.clone()));
    }
    let user = instantiate(templates.pick(Task::Spotting, rng), &Bindings::new())?;
    let answer = span_lines(tokens.iter().map(|(_, s)| s));
    Ok(sample(doc, format!("{}-spot", doc.id), Task::Spotting, user, answer))
}

/// Output of the pre-training builder: a sample, or a document that was skipped.
#[derive(Debug, Clone, PartialEq)]
pub enum PretrainItem {
    Sample(InstructionSample),
    Skipped { doc_id: String, reason: String },
}

pub struct PretrainBuilder<'a> {
    templates: &'a TemplateSet,
    config: PretrainConfig,
}

impl<'a> PretrainBuilder<'a> {
    pub fn new(templates: &'a TemplateSet, config: PretrainConfig) -> Self {
        Self { templates, config }
    }

    pub fn config(&self) -> &PretrainConfig {
        &self.config
    }

    /// Generator for one document. The stream is keyed by the document id so
    /// a document's samples do not depend on its position in the corpus.
    fn rng_for(&self, doc: &OcrDocument) -> ChaCha8Rng {
        let digest = content_hash(doc.id.as_bytes());
        let stream = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(stream);
        rng
    }

    /// All enabled tasks for one document: detection, recognition, spotting.
    pub fn samples_for(&self, doc: &OcrDocument) -> Result<Vec<InstructionSample>, DatasetError> {
        if doc.tokens.is_empty() {
            return Err(DatasetError::EmptyDocument(doc.id.clone()));
        }
        let cfg = &self.config;
        let mut rng = self.rng_for(doc);
        let mut out = Vec::new();
        for task in &cfg.tasks {
            match task {
                Task::Detection => out.extend(build_detection(
                    doc,
                    self.templates,
                    &mut rng,
                    cfg.detection_cap,
                    cfg.line_tolerance,
                )?),
                Task::Recognition => out.extend(build_recognition(
                    doc,
                    self.templates,
                    &mut rng,
                    cfg.recognition_cap,
                    cfg.line_tolerance,
                )?),
                Task::Spotting => out.push(build_spotting(
                    doc,
                    self.templates,
                    &mut rng,
                    cfg.line_tolerance,
                )?),
            }
        }
        Ok(out)
    }

    fn items_for(&self, doc: &OcrDocument) -> Vec<PretrainItem> {
        match self.samples_for(doc) {
            Ok(samples) => samples.into_iter().map(PretrainItem::Sample).collect(),
            Err(e) => {
                log::warn!("skipping document {}: {e}", doc.id);
                vec![PretrainItem::Skipped {
                    doc_id: doc.id.clone(),
                    reason: e.to_string(),
                }]
            }
        }
    }

    /// Lazily yields items document by document.
    pub fn stream<'b, I>(&'b self, docs: I) -> impl Iterator<Item = PretrainItem> + 'b
    where
        I: IntoIterator<Item = &'b OcrDocument>,
        I::IntoIter: 'b,
    {
        docs.into_iter().flat_map(move |d| self.items_for(d))
    }

    /// Builds a whole corpus; output order matches [`PretrainBuilder::stream`].
    pub fn build_batch(&self, docs: &[OcrDocument], exec: Execution) -> Vec<PretrainItem> {
        map_ordered(docs, exec, |_, d| self.items_for(d))
            .into_iter()
            .flatten()
            .collect()
    }
}
