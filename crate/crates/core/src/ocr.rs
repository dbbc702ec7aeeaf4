//! OCR engine output: documents, the line-delimited ingestion format, the
//! minimum-area corpus filter and reading order.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::IngestError;
use crate::geometry::{area_micro, normalize, quantize, BBox, PixelRect};

/// Default minimum share of the image covered by the largest text block.
pub const DEFAULT_MIN_AREA: f64 = 0.05;
/// Default line-grouping tolerance for [`reading_order`].
pub const DEFAULT_LINE_TOLERANCE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrToken {
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl OcrToken {
    pub fn new(text: impl Into<String>, bbox: BBox) -> Self {
        Self {
            text: text.into(),
            bbox,
            confidence: None,
        }
    }
}

/// One engine's output for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct OcrDocument {
    pub id: String,
    pub image_ref: String,
    pub width: u32,
    pub height: u32,
    pub engine: String,
    pub tokens: Vec<OcrToken>,
}

#[derive(Serialize)]
struct DocumentRecord<'a> {
    id: &'a str,
    image: &'a str,
    image_width: u32,
    image_height: u32,
    engine: &'a str,
    pixel_coords: bool,
    tokens: &'a [OcrToken],
}

/// Reads documents from the line-delimited ingestion format.
///
/// Blank lines are ignored. Pixel-space boxes (`"pixel_coords": true`) are
/// normalized against the record's image size; every box ends up quantized.
pub fn load_ocr<R: BufRead>(reader: R) -> Result<Vec<OcrDocument>, IngestError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = parse_record(&line, line_no)?;
        if !seen.insert(doc.id.clone()) {
            return Err(IngestError::DuplicateId {
                line: line_no,
                id: doc.id,
            });
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Writes documents in the ingestion format with normalized coordinates.
pub fn save_ocr<W: Write>(docs: &[OcrDocument], mut writer: W) -> std::io::Result<()> {
    for doc in docs {
        let record = DocumentRecord {
            id: &doc.id,
            image: &doc.image_ref,
            image_width: doc.width,
            image_height: doc.height,
            engine: &doc.engine,
            pixel_coords: false,
            tokens: &doc.tokens,
        };
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

fn record_err(line: usize, message: impl Into<String>) -> IngestError {
    IngestError::Record {
        line,
        message: message.into(),
    }
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str, line: usize) -> Result<&'a Value, IngestError> {
    obj.get(name)
        .filter(|v| !v.is_null())
        .ok_or_else(|| record_err(line, format!("missing field {name}")))
}

fn str_field(obj: &Map<String, Value>, name: &str, line: usize) -> Result<String, IngestError> {
    field(obj, name, line)?
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| record_err(line, format!("field {name} must be a string")))
}

fn dim_field(obj: &Map<String, Value>, name: &str, line: usize) -> Result<u32, IngestError> {
    field(obj, name, line)?
        .as_u64()
        .filter(|&v| v > 0)
        .and_then(|v| u32::try_from(v).ok())
        .ok_or_else(|| record_err(line, format!("field {name} must be a positive integer")))
}

fn parse_record(line: &str, line_no: usize) -> Result<OcrDocument, IngestError> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| record_err(line_no, format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| record_err(line_no, "record must be a JSON object"))?;

    let id = str_field(obj, "id", line_no)?;
    let image_ref = str_field(obj, "image", line_no)?;
    let width = dim_field(obj, "image_width", line_no)?;
    let height = dim_field(obj, "image_height", line_no)?;
    let engine = str_field(obj, "engine", line_no)?;
    let pixel = match obj.get("pixel_coords") {
        None | Some(Value::Null) => false,
        Some(v) => v
            .as_bool()
            .ok_or_else(|| record_err(line_no, "field pixel_coords must be a boolean"))?,
    };
    let raw_tokens = field(obj, "tokens", line_no)?
        .as_array()
        .ok_or_else(|| record_err(line_no, "field tokens must be a list"))?;

    let mut tokens = Vec::with_capacity(raw_tokens.len());
    for (t, raw) in raw_tokens.iter().enumerate() {
        let tok_err = |what: &str| record_err(line_no, format!("token {t}: {what}"));
        let tobj = raw.as_object().ok_or_else(|| tok_err("must be an object"))?;
        let text = tobj
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| tok_err("missing field text"))?;
        if text.trim().is_empty() {
            return Err(IngestError::EmptyToken {
                line: line_no,
                token: t,
            });
        }
        let coords: Vec<f64> = tobj
            .get("box")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_f64).collect())
            .filter(|c: &Vec<f64>| c.len() == 4)
            .ok_or_else(|| tok_err("field box must be a list of 4 numbers"))?;
        let bbox = if pixel {
            normalize(
                PixelRect::new(coords[0], coords[1], coords[2], coords[3]),
                f64::from(width),
                f64::from(height),
            )
        } else {
            BBox::new(coords[0], coords[1], coords[2], coords[3]).map(quantize)
        }
        .map_err(|source| IngestError::TokenBox {
            line: line_no,
            token: t,
            source,
        })?;
        let confidence = match tobj.get("confidence") {
            None | Some(Value::Null) => None,
            Some(v) => Some(
                v.as_f64()
                    .filter(|c| (0.0..=1.0).contains(c))
                    .ok_or_else(|| tok_err("confidence must be a number in [0, 1]"))?,
            ),
        };
        tokens.push(OcrToken {
            text: text.to_owned(),
            bbox,
            confidence,
        });
    }

    Ok(OcrDocument {
        id,
        image_ref,
        width,
        height,
        engine,
        tokens,
    })
}

/// True when some token covers at least `threshold` of the image.
///
/// The comparison is done on the 3-decimal grid in exact integer arithmetic,
/// so a box of area exactly `threshold` passes.
pub fn passes_area_filter(doc: &OcrDocument, threshold: f64) -> bool {
    let needed = (threshold * 1e6).round() as i64;
    doc.tokens
        .iter()
        .map(|t| area_micro(&quantize(t.bbox)))
        .max()
        .is_some_and(|best| best >= needed)
}

/// Reading order as indices into `tokens`.
///
/// Tokens are visited top edge first and grouped greedily into lines: a token
/// joins the current line when its vertical center lies within
/// `line_tolerance` times the line's median token height of the line's mean
/// center. Lines are ordered by top edge, tokens within a line by `x_min`.
pub fn reading_order_indices(tokens: &[OcrToken], line_tolerance: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..tokens.len()).collect();
    order.sort_by(|&a, &b| {
        let (ba, bb) = (&tokens[a].bbox, &tokens[b].bbox);
        ba.y_min()
            .total_cmp(&bb.y_min())
            .then(ba.x_min().total_cmp(&bb.x_min()))
            .then(a.cmp(&b))
    });

    struct Line {
        members: Vec<usize>,
        heights: Vec<f64>,
        center_sum: f64,
        top: f64,
    }

    let mut lines: Vec<Line> = Vec::new();
    for i in order {
        let b = &tokens[i].bbox;
        if let Some(line) = lines.last_mut() {
            let center = line.center_sum / line.members.len() as f64;
            if (b.center_y() - center).abs() <= line_tolerance * median(&line.heights) {
                line.members.push(i);
                line.heights.push(b.height());
                line.center_sum += b.center_y();
                line.top = line.top.min(b.y_min());
                continue;
            }
        }
        lines.push(Line {
            members: vec![i],
            heights: vec![b.height()],
            center_sum: b.center_y(),
            top: b.y_min(),
        });
    }

    lines.sort_by(|a, b| a.top.total_cmp(&b.top).then(a.members[0].cmp(&b.members[0])));
    lines
        .into_iter()
        .flat_map(|mut line| {
            line.members.sort_by(|&a, &b| {
                let (ba, bb) = (&tokens[a].bbox, &tokens[b].bbox);
                ba.x_min()
                    .total_cmp(&bb.x_min())
                    .then(ba.y_min().total_cmp(&bb.y_min()))
                    .then(a.cmp(&b))
            });
            line.members
        })
        .collect()
}

/// Tokens in reading order.
pub fn reading_order(tokens: &[OcrToken], line_tolerance: f64) -> Vec<&OcrToken> {
    reading_order_indices(tokens, line_tolerance)
        .into_iter()
        .map(|i| &tokens[i])
        .collect()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
