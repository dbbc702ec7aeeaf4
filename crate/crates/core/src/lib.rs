//! Grounded instruction data for text-rich document images.
//!
//! The crate covers the whole data path around text grounding, the pairing of
//! a text string with the normalized box that evidences it:
//!
//! - [`geometry`] and [`notation`]: boxes on a 3-decimal grid and the
//!   `"text"[x_min, y_min, x_max, y_max]` notation used in prompts and answers.
//! - [`ocr`], [`dedup`] and [`align`]: ingesting OCR output, corpus filtering
//!   and recovering boxes for metadata strings.
//! - [`templates`] and [`dataset`]: detection / recognition / spotting samples,
//!   conversation prompts, sanitization and training-string rendering.
//! - [`client`]: the chat-completion boundary with retries and an offline stub.
//! - [`eval`]: containment accuracy and grounding diagnostics for model answers.
//! - [`pipeline`]: file-level runs used by the command-line front end.

pub mod align;
pub mod client;
pub mod config;
pub mod dataset;
pub mod dedup;
pub mod error;
pub mod eval;
pub mod exec;
pub mod geometry;
pub mod notation;
pub mod ocr;
pub mod pipeline;
pub mod templates;

pub use error::Error;
pub use geometry::{area, iou, normalize, quantize, union, BBox, PixelRect};
pub use notation::{parse_spans, serialize_span, GroundedSpan, ParsedSpan};
pub use ocr::{OcrDocument, OcrToken};
pub use templates::Task;
