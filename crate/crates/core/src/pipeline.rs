//! File-level runs behind each command-line subcommand.
//!
//! Every output is written to a temporary file beside its destination and
//! renamed into place only after the whole run succeeded.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::client::{request_many, ChatClient, RequestOptions, RetryPolicy};
use crate::config::ForgeConfig;
use crate::dataset::{
    parse_conversation, read_samples, render_training_string, sanitize_conversation, stats, write_samples,
    InstructionSample, PretrainBuilder, PretrainItem, PromptPayload, SanitizeReport,
    DEFAULT_GENERATION_INSTRUCTIONS,
};
use crate::dataset::build_finetune_prompt;
use crate::dedup::{content_hash, dedup, hash_files, write_manifest, DedupEntry, ManifestRecord};
use crate::error::Error;
use crate::eval::{
    append_grounding_suffix, emit_overlay, evaluate, load_benchmark, load_responses, Aggregate, BenchmarkRecord,
};
use crate::exec::Execution;
use crate::ocr::{load_ocr, passes_area_filter, OcrDocument};
use crate::templates::{builtin_templates, TemplateSet};

fn open(path: &Path) -> Result<BufReader<File>, Error> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Writes `path` through a temporary sibling that replaces it on success.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), Error> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(tmp);
    f(&mut w).map_err(|e| Error::io(path, e))?;
    let tmp = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn write_json_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<(), Error> {
    write_atomic(path, |w| {
        for item in items {
            serde_json::to_writer(&mut *w, item)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")
    })
}

pub fn read_ocr_files(paths: &[PathBuf]) -> Result<Vec<OcrDocument>, Error> {
    let mut docs = Vec::new();
    for path in paths {
        let loaded = load_ocr(open(path)?).map_err(|source| Error::Ingest {
            path: path.clone(),
            source,
        })?;
        docs.extend(loaded);
    }
    Ok(docs)
}

/// Builtin templates plus any configured extension file.
pub fn load_templates(cfg: &ForgeConfig) -> Result<TemplateSet, Error> {
    let mut set = builtin_templates();
    if let Some(path) = &cfg.templates {
        set.extend_from_reader(open(path)?)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    }
    Ok(set)
}

fn file_digest(path: &Path) -> Result<String, Error> {
    std::fs::read(path)
        .map(|b| content_hash(&b))
        .map_err(|e| Error::io(path, e))
}

/// Sidecar written next to generated datasets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_digest: String,
    pub template_checksum: Option<String>,
    /// Input path and its MD5.
    pub inputs: Vec<(String, String)>,
    pub records: usize,
}

impl Provenance {
    fn new(command: &str, cfg: &ForgeConfig, inputs: &[PathBuf], records: usize) -> Result<Self, Error> {
        let inputs = inputs
            .iter()
            .map(|p| Ok((p.display().to_string(), file_digest(p)?)))
            .collect::<Result<_, Error>>()?;
        Ok(Self {
            tool: "groundforge".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: cfg.seed,
            config_digest: cfg.digest(),
            template_checksum: None,
            inputs,
            records,
        })
    }
}

/// `<out>.provenance.json`
pub fn provenance_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".provenance.json");
    out.with_file_name(name)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PretrainSummary {
    pub documents: usize,
    pub below_area: usize,
    pub not_retained: usize,
    pub samples: usize,
    pub skipped: Vec<(String, String)>,
}

fn kept_images(manifest: &Path) -> Result<HashSet<String>, Error> {
    let mut kept = HashSet::new();
    for (idx, line) in io::BufRead::lines(open(manifest)?).enumerate() {
        let line = line.map_err(|e| Error::io(manifest, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}: line {}: {e}", manifest.display(), idx + 1)))?;
        if rec.kept {
            kept.insert(rec.image);
        }
    }
    Ok(kept)
}

/// Ingest, filter by retained images and token area, build samples, emit.
pub fn run_pretrain(
    cfg: &ForgeConfig,
    ocr: &[PathBuf],
    manifest: Option<&Path>,
    out: &Path,
    exec: Execution,
) -> Result<PretrainSummary, Error> {
    if cfg.tasks.is_empty() {
        return Err(Error::Usage("no pre-training tasks enabled".into()));
    }
    let templates = load_templates(cfg)?;
    let docs = read_ocr_files(ocr)?;
    let documents = docs.len();

    let kept = manifest.map(kept_images).transpose()?;
    let (docs, not_retained): (Vec<_>, Vec<_>) = docs
        .into_iter()
        .partition(|d| kept.as_ref().is_none_or(|k| k.contains(&d.image_ref)));
    let (docs, below): (Vec<_>, Vec<_>) = docs.into_iter().partition(|d| passes_area_filter(d, cfg.min_area));

    let builder = PretrainBuilder::new(&templates, cfg.pretrain());
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for item in builder.build_batch(&docs, exec) {
        match item {
            PretrainItem::Sample(s) => samples.push(s),
            PretrainItem::Skipped { doc_id, reason } => skipped.push((doc_id, reason)),
        }
    }

    let mut inputs = ocr.to_vec();
    inputs.extend(manifest.map(Path::to_path_buf));
    let mut prov = Provenance::new("pretrain", cfg, &inputs, samples.len())?;
    prov.template_checksum = Some(templates.checksum());
    write_atomic(out, |w| write_samples(&samples, w))?;
    write_json(&provenance_path(out), &prov)?;
    Ok(PretrainSummary {
        documents,
        below_area: below.len(),
        not_retained: not_retained.len(),
        samples: samples.len(),
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DedupSummary {
    pub entries: usize,
    pub kept: usize,
    pub dropped: usize,
    pub unreadable: usize,
}

/// Hashes the image of every OCR record (paths relative to `image_root`) and
/// writes the manifest. Unreadable images are listed with an error and not kept.
pub fn run_dedup(ocr: &[PathBuf], image_root: &Path, out: &Path, exec: Execution) -> Result<DedupSummary, Error> {
    let docs = read_ocr_files(ocr)?;
    let paths: Vec<PathBuf> = docs.iter().map(|d| image_root.join(&d.image_ref)).collect();
    let digests = hash_files(&paths, exec);

    let mut entries = Vec::new();
    let mut failures = BTreeMap::new();
    for (doc, digest) in docs.iter().zip(digests) {
        match digest {
            Ok(digest) => entries.push(DedupEntry {
                id: doc.id.clone(),
                digest,
                image_ref: doc.image_ref.clone(),
            }),
            Err(e) => {
                log::warn!("{}: {e}", doc.id);
                failures.insert(doc.id.clone(), e);
            }
        }
    }
    let manifest = dedup(entries)?;
    let mut hashed = manifest.records().into_iter();
    let records: Vec<ManifestRecord> = docs
        .iter()
        .map(|doc| match failures.remove(&doc.id) {
            Some(error) => ManifestRecord {
                id: doc.id.clone(),
                digest: None,
                image: doc.image_ref.clone(),
                kept: false,
                duplicate_of: None,
                error: Some(error),
            },
            None => hashed.next().expect("one record per hashed document"),
        })
        .collect();
    write_atomic(out, |w| write_manifest(&records, w))?;
    Ok(DedupSummary {
        entries: records.len(),
        kept: manifest.unique_ids.len(),
        dropped: manifest.dropped.len(),
        unreadable: records.len() - manifest.entries.len(),
    })
}

/// Line of a captions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    /// Image reference matched against OCR records; defaults to `image_id`.
    #[serde(default)]
    pub image: Option<String>,
    pub captions: Vec<String>,
}

/// Line of a prompts file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub image_id: String,
    pub image: String,
    pub prompt: String,
}

/// Line of a completions file; also the stub client's input format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub image_id: String,
    #[serde(default)]
    pub image: Option<String>,
    pub completion: String,
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, Error> {
    let mut out = Vec::new();
    for (idx, line) in io::BufRead::lines(open(path)?).enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}: line {}: {e}", path.display(), idx + 1)))?,
        );
    }
    Ok(out)
}

fn by_image(docs: &[OcrDocument]) -> BTreeMap<&str, Vec<&OcrDocument>> {
    let mut map: BTreeMap<&str, Vec<&OcrDocument>> = BTreeMap::new();
    for d in docs {
        map.entry(d.image_ref.as_str()).or_default().push(d);
    }
    map
}

fn instructions(cfg: &ForgeConfig) -> Result<String, Error> {
    match &cfg.instructions {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e)),
        None => Ok(DEFAULT_GENERATION_INSTRUCTIONS.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptSummary {
    pub prompts: usize,
    pub without_ocr: Vec<String>,
    pub completions: Option<usize>,
}

/// Assembles one prompt per captioned image; with a client, also requests the
/// completions and writes them to `completions_out`.
pub fn run_finetune_prompts(
    cfg: &ForgeConfig,
    captions: &Path,
    ocr: &[PathBuf],
    out: &Path,
    request: Option<(&dyn ChatClient, &Path)>,
) -> Result<PromptSummary, Error> {
    let caption_records: Vec<CaptionRecord> = read_lines(captions)?;
    let docs = read_ocr_files(ocr)?;
    let grouped = by_image(&docs);
    let instructions = instructions(cfg)?;

    let mut payloads = Vec::new();
    let mut images = Vec::new();
    let mut without_ocr = Vec::new();
    for rec in caption_records {
        let image = rec.image.clone().unwrap_or_else(|| rec.image_id.clone());
        let Some(found) = grouped.get(image.as_str()) else {
            log::warn!("{}: no OCR results for image {image}", rec.image_id);
            without_ocr.push(rec.image_id);
            continue;
        };
        payloads.push(PromptPayload::from_documents(rec.image_id, rec.captions, found.iter().copied()));
        images.push(image);
    }
    let prompts = payloads
        .iter()
        .zip(&images)
        .map(|(p, image)| {
            Ok(PromptRecord {
                image_id: p.image_id.clone(),
                image: image.clone(),
                prompt: build_finetune_prompt(p, &instructions)?,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;

    let mut completions = None;
    if let Some((client, completions_out)) = request {
        let opts = RequestOptions {
            model: cfg.model.clone(),
            temperature: cfg.temperature,
            instructions: instructions.clone(),
            retry: RetryPolicy {
                max_attempts: cfg.max_attempts,
                ..RetryPolicy::default()
            },
        };
        let results = request_many(&payloads, client, &opts, cfg.max_in_flight);
        let records = payloads
            .iter()
            .zip(&images)
            .zip(results)
            .map(|((p, image), r)| {
                Ok(CompletionRecord {
                    image_id: p.image_id.clone(),
                    image: Some(image.clone()),
                    completion: r?,
                })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        write_json_lines(completions_out, &records)?;
        completions = Some(records.len());
    }
    write_json_lines(out, &prompts)?;
    Ok(PromptSummary {
        prompts: prompts.len(),
        without_ocr,
        completions,
    })
}

/// Per-conversation line of the optional sanitization report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanitizeRecord {
    pub image_id: String,
    #[serde(flatten)]
    pub report: SanitizeReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FinetuneSummary {
    pub completions: usize,
    pub kept: usize,
    pub rejected: usize,
    pub removed_phrases: usize,
    pub dropped_turn_pairs: usize,
    pub invalid_boxes: usize,
}

/// Parses raw completions, sanitizes them against the image's OCR results and
/// writes the kept conversations.
pub fn run_finetune_build(
    cfg: &ForgeConfig,
    completions: &Path,
    ocr: &[PathBuf],
    out: &Path,
    report: Option<&Path>,
) -> Result<FinetuneSummary, Error> {
    let records: Vec<CompletionRecord> = read_lines(completions)?;
    let docs = read_ocr_files(ocr)?;
    let grouped = by_image(&docs);
    let sanitize_cfg = cfg.sanitize();

    let mut kept = Vec::new();
    let mut rows = Vec::new();
    let mut summary = FinetuneSummary {
        completions: records.len(),
        kept: 0,
        rejected: 0,
        removed_phrases: 0,
        dropped_turn_pairs: 0,
        invalid_boxes: 0,
    };
    for rec in &records {
        let image = rec.image.clone().unwrap_or_else(|| rec.image_id.clone());
        let ocr_docs: Vec<OcrDocument> = grouped
            .get(image.as_str())
            .map(|v| v.iter().map(|d| (*d).clone()).collect())
            .unwrap_or_default();
        let outcome = parse_conversation(&rec.completion, rec.image_id.clone(), image)
            .and_then(|conv| sanitize_conversation(&conv, &ocr_docs, &sanitize_cfg));
        match outcome {
            Ok((sample, r)) => {
                summary.removed_phrases += r.removed_phrases;
                summary.dropped_turn_pairs += r.dropped_turn_pairs;
                summary.invalid_boxes += r.invalid_boxes;
                if r.kept {
                    kept.push(sample);
                } else {
                    summary.rejected += 1;
                }
                rows.push(SanitizeRecord {
                    image_id: rec.image_id.clone(),
                    report: r,
                    error: None,
                });
            }
            Err(e) => {
                log::warn!("{}: {e}", rec.image_id);
                summary.rejected += 1;
                rows.push(SanitizeRecord {
                    image_id: rec.image_id.clone(),
                    report: SanitizeReport::default(),
                    error: Some(e.to_string()),
                });
            }
        }
    }
    summary.kept = kept.len();
    write_atomic(out, |w| write_samples(&kept, w))?;
    if let Some(path) = report {
        write_json_lines(path, &rows)?;
    }
    let mut inputs = vec![completions.to_path_buf()];
    inputs.extend_from_slice(ocr);
    write_json(&provenance_path(out), &Provenance::new("finetune-build", cfg, &inputs, kept.len())?)?;
    Ok(summary)
}

/// Line of a suffixed-questions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub qid: String,
    pub image: String,
    pub question: String,
}

pub struct EvalOutputs<'a> {
    pub responses: Option<&'a Path>,
    pub report: Option<&'a Path>,
    pub questions: Option<&'a Path>,
    pub overlays: Option<&'a Path>,
}

fn overlay_name(qid: &str) -> String {
    let safe: String = qid
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    format!("{safe}.svg")
}

/// Writes grounding-suffixed questions and, given responses, the scored report
/// and optional per-question overlays.
pub fn run_eval(benchmark: &Path, outputs: &EvalOutputs<'_>, exec: Execution) -> Result<Option<Aggregate>, Error> {
    let bench: Vec<BenchmarkRecord> =
        load_benchmark(open(benchmark)?).map_err(|e| Error::Format(format!("{}: {e}", benchmark.display())))?;

    if let Some(path) = outputs.questions {
        let questions = bench
            .iter()
            .map(|r| {
                Ok(QuestionRecord {
                    qid: r.qid.clone(),
                    image: r.image_ref.clone(),
                    question: append_grounding_suffix(&r.question)
                        .map_err(|e| Error::Format(format!("{}: {e}", r.qid)))?,
                })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        write_json_lines(path, &questions)?;
    }

    let Some(responses_path) = outputs.responses else {
        return Ok(None);
    };
    let responses = load_responses(open(responses_path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", responses_path.display())))?;
    let report = evaluate(&bench, &responses, exec)?;
    if let Some(path) = outputs.report {
        write_json(path, &report)?;
    }
    if let Some(dir) = outputs.overlays {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let by_qid: BTreeMap<&str, &BenchmarkRecord> = bench.iter().map(|r| (r.qid.as_str(), r)).collect();
        for q in &report.per_question {
            let rec = by_qid[q.qid.as_str()];
            let (Some(w), Some(h)) = (rec.image_width, rec.image_height) else {
                log::debug!("{}: no image size, overlay skipped", q.qid);
                continue;
            };
            let svg = emit_overlay(&rec.image_ref, w, h, &q.spans, rec.gt_boxes.as_deref())
                .map_err(|e| Error::Format(format!("{}: {e}", q.qid)))?;
            write_atomic(&dir.join(overlay_name(&q.qid)), |out| out.write_all(svg.as_bytes()))?;
        }
    }
    Ok(Some(report.aggregate))
}

fn load_samples(path: &Path) -> Result<Vec<InstructionSample>, Error> {
    read_samples(open(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Line of a rendered-strings file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedRecord {
    pub id: String,
    pub text: String,
}

pub fn run_render(samples: &Path, out: &Path) -> Result<usize, Error> {
    let samples = load_samples(samples)?;
    let rendered: Vec<RenderedRecord> = samples
        .iter()
        .map(|s| RenderedRecord {
            id: s.id.clone(),
            text: render_training_string(s),
        })
        .collect();
    write_json_lines(out, &rendered)?;
    Ok(rendered.len())
}

pub fn run_stats(dataset: &Path, out: &Path) -> Result<usize, Error> {
    let samples = load_samples(dataset)?;
    let report = stats(&samples);
    write_json(out, &report)?;
    Ok(report.conversations)
}
