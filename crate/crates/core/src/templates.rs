//! Instruction templates for the detection, recognition and spotting tasks.
//!
//! Templates carry two markers. `<text>` is always a substitution slot.
//! `[xmin, ymin, xmax, ymax]` is a substitution slot when a box binding is
//! supplied (recognition), and otherwise stays in place as the coordinate
//! format hint the detection and spotting prompts show the model.

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::TemplateError;

pub const TEXT_MARKER: &str = "<text>";
pub const BOX_MARKER: &str = "[xmin, ymin, xmax, ymax]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Detection,
    Recognition,
    Spotting,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Detection, Task::Recognition, Task::Spotting];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Detection => "detection",
            Task::Recognition => "recognition",
            Task::Spotting => "spotting",
        }
    }

    /// Marker every template of this task must contain.
    fn required_marker(self) -> Option<&'static str> {
        match self {
            Task::Detection => Some(TEXT_MARKER),
            Task::Recognition => Some(BOX_MARKER),
            Task::Spotting => None,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "detection" => Ok(Task::Detection),
            "recognition" => Ok(Task::Recognition),
            "spotting" => Ok(Task::Spotting),
            other => Err(format!("unknown task {other:?}")),
        }
    }
}

const DETECTION: [&str; 10] = [
    "Can you furnish the bounding box coordinates [xmin, ymin, xmax, ymax] for the text <text> in the image?",
    "Please supply the coordinates [xmin, ymin, xmax, ymax] for the text <text> within the image.",
    "Could you kindly provide the bounding box or coordinates [xmin, ymin, xmax, ymax] for the text <text> in the image?",
    "I would like to know the coordinates [xmin, ymin, xmax, ymax] for the text <text> in the image, please.",
    "Please identify the bounding box coordinates [xmin, ymin, xmax, ymax] for the text <text> within the image.",
    "Can you please give me the coordinates [xmin, ymin, xmax, ymax] for the text <text> in the image?",
    "Kindly provide the bounding box coordinates [xmin, ymin, xmax, ymax] for the text <text> within the image.",
    "Please retrieve the coordinates [xmin, ymin, xmax, ymax] for the text <text> in the image.",
    "I'm looking for the bounding box coordinates [xmin, ymin, xmax, ymax] for the text <text> in the image, could you provide them?",
    "Please locate and share the bounding box coordinates [xmin, ymin, xmax, ymax] for the text <text> within the image.",
];

const RECOGNITION: [&str; 10] = [
    "Please recognize and supply the text enclosed within the given bounding box [xmin, ymin, xmax, ymax].",
    "Can you identify and provide the text that falls within the specified coordinates [xmin, ymin, xmax, ymax]?",
    "I'd like you to detect and furnish the text contained within the provided bounding box [xmin, ymin, xmax, ymax].",
    "Could you please extract and share the text within the defined coordinates [xmin, ymin, xmax, ymax]?",
    "Please locate and provide the text that is encompassed by the given bounding box [xmin, ymin, xmax, ymax].",
    "Can you recognize and output the text enclosed within the specified coordinates [xmin, ymin, xmax, ymax]?",
    "I'm looking for you to identify and deliver the text found within the provided bounding box [xmin, ymin, xmax, ymax].",
    "Could you extract and share the text within the defined coordinates [xmin, ymin, xmax, ymax], if available?",
    "Please recognize and provide the text contained within the specified bounding box [xmin, ymin, xmax, ymax].",
    "Can you identify and furnish the text that falls within the provided coordinates [xmin, ymin, xmax, ymax]?",
];

const SPOTTING: [&str; 10] = [
    "Could you locate the text in the image and furnish the coordinates [xmin, ymin, xmax, ymax] for each text block?",
    "Please recognize all the text within the image and supply the coordinates [xmin, ymin, xmax, ymax] for each text element.",
    "Can you identify and extract all the text from the image, and include the coordinates [xmin, ymin, xmax, ymax] for each text block?",
    "I would like you to recognize the text within the image and provide the bounding box [xmin, ymin, xmax, ymax] for each piece of text.",
    "Kindly identify and extract text from the image, and supply the coordinates [xmin, ymin, xmax, ymax] for each text portion.",
    "Can you recognize all the text present in the image and provide the corresponding bounding boxes or coordinates [xmin, ymin, xmax, ymax]?",
    "I'm looking for you to detect and list all text within the image, accompanied by their bounding box coordinates [xmin, ymin, xmax, ymax].",
    "Please analyze the image for text, and for each text segment, provide the bounding box coordinates [xmin, ymin, xmax, ymax].",
    "I'd appreciate it if you could identify and provide the coordinates [xmin, ymin, xmax, ymax] for all text found in the image.",
    "Kindly pinpoint the text in the image and provide the coordinates [xmin, ymin, xmax, ymax] for each text block.",
];

/// Task -> ordered templates. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    by_task: BTreeMap<Task, Vec<String>>,
}

/// The 30 built-in templates, ten per task.
pub fn builtin_templates() -> TemplateSet {
    let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
    TemplateSet {
        by_task: BTreeMap::from([
            (Task::Detection, own(&DETECTION)),
            (Task::Recognition, own(&RECOGNITION)),
            (Task::Spotting, own(&SPOTTING)),
        ]),
    }
}

#[derive(Deserialize)]
struct ExtensionRecord {
    task: String,
    template: String,
}

impl TemplateSet {
    /// Builds a set from explicit lists, validating each task's markers.
    pub fn new(by_task: BTreeMap<Task, Vec<String>>) -> Result<Self, TemplateError> {
        for task in Task::ALL {
            let list = by_task.get(&task).map(Vec::as_slice).unwrap_or_default();
            if list.is_empty() {
                return Err(TemplateError::EmptyTask {
                    task: task.to_string(),
                });
            }
            for t in list {
                check_template(task, t)?;
            }
        }
        Ok(Self { by_task })
    }

    pub fn templates(&self, task: Task) -> &[String] {
        self.by_task.get(&task).map(Vec::as_slice).unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.by_task.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends templates from a line-delimited `{task, template}` file.
    pub fn extend_from_reader<R: BufRead>(&mut self, reader: R) -> Result<usize, TemplateError> {
        let mut added = 0;
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let err = |message: String| TemplateError::Record {
                line: line_no,
                message,
            };
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ExtensionRecord =
                serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
            let task: Task = rec.task.parse().map_err(err)?;
            check_template(task, &rec.template)?;
            self.by_task.entry(task).or_default().push(rec.template);
            added += 1;
        }
        Ok(added)
    }

    /// Uniform draw among the task's templates.
    pub fn pick<R: Rng + ?Sized>(&self, task: Task, rng: &mut R) -> &str {
        let list = self.templates(task);
        assert!(!list.is_empty(), "template set has no {task} templates");
        // u32 keeps the draw identical on 32- and 64-bit targets.
        let i = rng.random_range(0..list.len() as u32) as usize;
        &list[i]
    }

    /// Stable digest over every template, in task and list order.
    pub fn checksum(&self) -> String {
        let mut buf = String::new();
        for (task, list) in &self.by_task {
            for t in list {
                buf.push_str(task.as_str());
                buf.push('\t');
                buf.push_str(t);
                buf.push('\n');
            }
        }
        crate::dedup::content_hash(buf.as_bytes())
    }
}

fn check_template(task: Task, template: &str) -> Result<(), TemplateError> {
    match task.required_marker() {
        Some(marker) if !template.contains(marker) => Err(TemplateError::MissingPlaceholder {
            task: task.to_string(),
            placeholder: marker.to_string(),
            template: template.to_string(),
        }),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Placeholder {
    Text,
    Box,
}

impl Placeholder {
    pub fn marker(self) -> &'static str {
        match self {
            Placeholder::Text => TEXT_MARKER,
            Placeholder::Box => BOX_MARKER,
        }
    }
}

pub type Bindings = BTreeMap<Placeholder, String>;

/// Substitutes placeholders in `template`.
///
/// A `<text>` marker without a binding is an error. The box marker is
/// replaced only when bound. Bindings whose marker does not occur are
/// reported with a warning.
pub fn instantiate(template: &str, bindings: &Bindings) -> Result<String, TemplateError> {
    if template.contains(TEXT_MARKER) && !bindings.contains_key(&Placeholder::Text) {
        return Err(TemplateError::Unresolved(TEXT_MARKER.to_string()));
    }
    for p in bindings.keys() {
        if !template.contains(p.marker()) {
            log::warn!("unused binding {} for template {template:?}", p.marker());
        }
    }
    // Substitute in one left-to-right pass so bound values are never rescanned.
    let mut out = String::with_capacity(template.len() + 32);
    let mut rest = template;
    loop {
        let next = bindings
            .iter()
            .filter_map(|(p, v)| rest.find(p.marker()).map(|at| (at, p.marker(), v)))
            .min_by_key(|(at, _, _)| *at);
        match next {
            Some((at, marker, value)) => {
                out.push_str(&rest[..at]);
                out.push_str(value);
                rest = &rest[at + marker.len()..];
            }
            None => {
                out.push_str(rest);
                return Ok(out);
            }
        }
    }
}
