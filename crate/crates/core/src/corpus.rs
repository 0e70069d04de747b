//! Trace data model, on-disk corpus format, validation and editor-label import.
//!
//! A corpus lives in two files:
//!
//! - a JSON-lines manifest: one header object, then one object per trace;
//! - a binary sidecar next to it (same stem, `.bin` extension) holding every
//!   hidden-state row as little-endian `f32`.
//!
//! Sidecar layout:
//!
//! ```text
//! "HCC1" | version: u32 LE | dim: u32 LE | total_rows: u64 LE | rows (dim x f32 LE, row-major)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "hcc-corpus";
pub const FORMAT_VERSION: u32 = 1;
pub const SIDECAR_MAGIC: &[u8; 4] = b"HCC1";
pub const SIDECAR_VERSION: u32 = 1;
const SIDECAR_HEADER_LEN: usize = 4 + 4 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    /// Natural-log probability of the emitted token; never positive.
    pub logprob: f64,
    /// Predictive entropy at that position, in nats.
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceRecord {
    pub text: String,
    pub token_count: usize,
    pub token_scores: Vec<TokenScore>,
}

impl SentenceRecord {
    pub fn new(text: impl Into<String>, token_scores: Vec<TokenScore>) -> Self {
        SentenceRecord {
            text: text.into(),
            token_count: token_scores.len(),
            token_scores,
        }
    }
}

/// Token-averaged answer scores after appending the first `prefix` sentences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnswerScore {
    pub prefix: usize,
    pub nll: f64,
    pub entropy: f64,
}

/// Sentence-boundary hidden states. Row 0 is the state after the question,
/// row `t` the state after sentence `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenTrack {
    dim: usize,
    states: Vec<f32>,
}

impl HiddenTrack {
    pub fn new(dim: usize, states: Vec<f32>) -> Result<Self> {
        if dim == 0 || !states.len().is_multiple_of(dim) {
            return Err(Error::Dimension(format!(
                "{} values do not form rows of width {}",
                states.len(),
                dim
            )));
        }
        Ok(HiddenTrack { dim, states })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension("ragged hidden-state rows".into()));
        }
        let states = rows.iter().flatten().map(|&v| v as f32).collect();
        HiddenTrack::new(dim, states)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.states[index * self.dim..(index + 1) * self.dim]
    }

    /// Row widened to `f64`.
    pub fn row_f64(&self, index: usize) -> Vec<f64> {
        self.row(index).iter().map(|&v| f64::from(v)).collect()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.states
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.states
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub id: String,
    pub question: String,
    pub sentences: Vec<SentenceRecord>,
    pub final_answer: String,
    pub answer_token_count: usize,
    pub answer_scores: Vec<AnswerScore>,
    pub hidden: HiddenTrack,
}

impl TraceRecord {
    /// Number of reasoning sentences `T`.
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn total_tokens(&self) -> usize {
        self.sentences.iter().map(|s| s.token_count).sum()
    }
}

/// Per-sentence deletion labels (1 = delete) and the last retained index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditorAnnotation {
    pub labels: Vec<u8>,
    pub boundary: usize,
}

impl EditorAnnotation {
    /// Suffix annotation removing every sentence after `boundary`.
    pub fn from_boundary(boundary: usize, len: usize) -> Result<Self> {
        if boundary > len {
            return Err(Error::Boundary { boundary, len });
        }
        let labels = (1..=len).map(|t| u8::from(t > boundary)).collect();
        Ok(EditorAnnotation { labels, boundary })
    }

    pub fn removed(&self) -> usize {
        self.labels.len() - self.boundary
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    /// Reject anything that is not a retained prefix followed by a deleted suffix.
    Strict,
    /// Collapse to the last retained sentence and rewrite the labels.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImport {
    pub annotation: EditorAnnotation,
    /// Labels rewritten by lenient import.
    pub flipped: usize,
}

/// Turn raw editor deletion marks into a suffix annotation.
pub fn import_editor_labels(
    trace: &TraceRecord,
    raw_labels: &[u8],
    mode: LabelMode,
) -> Result<LabelImport> {
    let len = trace.len();
    if raw_labels.len() != len {
        return Err(Error::Labels(format!(
            "trace {}: {} labels for {} sentences",
            trace.id,
            raw_labels.len(),
            len
        )));
    }
    if let Some(pos) = raw_labels.iter().position(|&y| y > 1) {
        return Err(Error::Labels(format!(
            "trace {}: label {} at sentence {} is not 0/1",
            trace.id,
            raw_labels[pos],
            pos + 1
        )));
    }
    let boundary = raw_labels
        .iter()
        .rposition(|&y| y == 0)
        .map_or(0, |p| p + 1);
    let annotation = EditorAnnotation::from_boundary(boundary, len)?;
    let flipped = raw_labels
        .iter()
        .zip(&annotation.labels)
        .filter(|(a, b)| a != b)
        .count();
    if flipped > 0 && mode == LabelMode::Strict {
        let first_delete = raw_labels.iter().position(|&y| y == 1).unwrap_or(0);
        return Err(Error::Labels(format!(
            "trace {}: sentence {} is deleted but sentence {} is retained",
            trace.id,
            first_delete + 1,
            boundary
        )));
    }
    Ok(LabelImport {
        annotation,
        flipped,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusMeta {
    pub source: String,
    pub dim: usize,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub traces: Vec<TraceRecord>,
    pub annotations: BTreeMap<String, EditorAnnotation>,
    pub meta: CorpusMeta,
}

impl Corpus {
    pub fn empty(source: impl Into<String>, dim: usize) -> Self {
        Corpus {
            traces: Vec::new(),
            annotations: BTreeMap::new(),
            meta: CorpusMeta {
                source: source.into(),
                dim,
                version: FORMAT_VERSION,
            },
        }
    }

    pub fn annotation(&self, id: &str) -> Option<&EditorAnnotation> {
        self.annotations.get(id)
    }

    /// Traces that carry an annotation, in corpus order.
    pub fn annotated(&self) -> impl Iterator<Item = (&TraceRecord, &EditorAnnotation)> {
        self.traces
            .iter()
            .filter_map(|t| self.annotations.get(&t.id).map(|a| (t, a)))
    }

    /// Split into the first `n` traces and the rest, keeping annotations with their traces.
    pub fn split_at(&self, n: usize) -> (Corpus, Corpus) {
        let n = n.min(self.traces.len());
        let part = |traces: &[TraceRecord]| {
            let annotations = traces
                .iter()
                .filter_map(|t| self.annotations.get_key_value(&t.id))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            Corpus {
                traces: traces.to_vec(),
                annotations,
                meta: self.meta.clone(),
            }
        };
        (part(&self.traces[..n]), part(&self.traces[n..]))
    }
}

/// A single invariant violation found by [`validate_trace`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    fn push(&mut self, field: String, message: impl Into<String>) {
        self.violations.push(Violation {
            field,
            message: message.into(),
        });
    }
}

/// Check every type invariant of a trace. Sentence and token indices in the
/// report are 1-based; hidden rows are numbered from 0 (the question state).
pub fn validate_trace(trace: &TraceRecord) -> ValidationReport {
    let mut report = ValidationReport::default();
    let len = trace.len();

    if trace.id.is_empty() {
        report.push("id".into(), "is empty");
    }
    if len == 0 {
        report.push("sentences".into(), "must contain at least one sentence");
    }
    if trace.final_answer.is_empty() {
        report.push("final_answer".into(), "is empty");
    }
    if trace.answer_token_count == 0 {
        report.push("answer_token_count".into(), "must be positive");
    }

    for (i, sentence) in trace.sentences.iter().enumerate() {
        let t = i + 1;
        if sentence.text.is_empty() {
            report.push(format!("sentences[{t}].text"), "is empty");
        }
        if sentence.token_count == 0 {
            report.push(format!("sentences[{t}].token_count"), "must be positive");
        }
        if sentence.token_count != sentence.token_scores.len() {
            report.push(
                format!("sentences[{t}].token_count"),
                format!(
                    "is {} but {} token scores are present",
                    sentence.token_count,
                    sentence.token_scores.len()
                ),
            );
        }
        for (j, score) in sentence.token_scores.iter().enumerate() {
            let k = j + 1;
            if !score.logprob.is_finite() || score.logprob > 0.0 {
                report.push(
                    format!("sentences[{t}].tokens[{k}].logprob"),
                    format!("must be finite and <= 0, got {}", score.logprob),
                );
            }
            if !score.entropy.is_finite() || score.entropy < 0.0 {
                report.push(
                    format!("sentences[{t}].tokens[{k}].entropy"),
                    format!("must be finite and >= 0, got {}", score.entropy),
                );
            }
        }
    }

    if trace.answer_scores.len() != len + 1 {
        report.push(
            "answer_scores".into(),
            format!(
                "answer score count must equal T+1 ({}), got {}",
                len + 1,
                trace.answer_scores.len()
            ),
        );
    }
    for (i, score) in trace.answer_scores.iter().enumerate() {
        if score.prefix != i {
            report.push(
                format!("answer_scores[{i}].t"),
                format!("expected prefix index {i}, got {}", score.prefix),
            );
        }
        if !score.nll.is_finite() || score.nll < 0.0 {
            report.push(
                format!("answer_scores[{i}].nll"),
                format!("must be finite and >= 0, got {}", score.nll),
            );
        }
        if !score.entropy.is_finite() || score.entropy < 0.0 {
            report.push(
                format!("answer_scores[{i}].entropy"),
                format!("must be finite and >= 0, got {}", score.entropy),
            );
        }
    }

    if trace.hidden.rows() != len + 1 {
        report.push(
            "hidden.states".into(),
            format!(
                "row count must equal T+1 ({}), got {}",
                len + 1,
                trace.hidden.rows()
            ),
        );
    }
    for row in 0..trace.hidden.rows() {
        if trace.hidden.row(row).iter().any(|v| !v.is_finite()) {
            report.push(format!("hidden.states[{row}]"), "non-finite");
        }
    }
    report
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestHeader {
    format: String,
    version: u32,
    dim: usize,
    source: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestSentence {
    text: String,
    token_count: usize,
    logprobs: Vec<f64>,
    entropies: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestAnswerScore {
    t: usize,
    nll: f64,
    entropy: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestTrace {
    id: String,
    question: String,
    final_answer: String,
    answer_token_count: usize,
    sentences: Vec<ManifestSentence>,
    answer_scores: Vec<ManifestAnswerScore>,
    hidden_offset: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<u8>>,
}

/// Path of the hidden-state sidecar belonging to a manifest.
pub fn sidecar_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

struct Sidecar {
    dim: usize,
    rows: u64,
    data: Vec<f32>,
}

fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let err = |message: String| Error::Sidecar {
        path: path.to_path_buf(),
        message,
    };
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < SIDECAR_HEADER_LEN {
        return Err(err("truncated header".into()));
    }
    if &bytes[..4] != SIDECAR_MAGIC {
        return Err(err("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != SIDECAR_VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let rows = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let payload = &bytes[SIDECAR_HEADER_LEN..];
    let expected = (rows as usize)
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| err("row count overflow".into()))?;
    if payload.len() != expected {
        return Err(err(format!(
            "payload has {} bytes, header implies {} ({} rows x {} dims)",
            payload.len(),
            expected,
            rows,
            dim
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(err(format!(
            "non-finite value at row {}, column {}",
            pos / dim.max(1),
            pos % dim.max(1)
        )));
    }
    Ok(Sidecar { dim, rows, data })
}

/// Read and validate a corpus manifest plus its sidecar.
pub fn parse_corpus(manifest_path: &Path) -> Result<Corpus> {
    parse_corpus_with(manifest_path, LabelMode::Strict)
}

pub fn parse_corpus_with(manifest_path: &Path, mode: LabelMode) -> Result<Corpus> {
    read_manifest(manifest_path, mode, true).map(|(corpus, _)| corpus)
}

/// A problem with one manifest line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineViolation {
    pub line: usize,
    pub id: String,
    pub message: String,
}

/// Read a manifest collecting every per-trace problem instead of stopping at
/// the first. Offending traces are left out of the returned corpus; file-level
/// problems (header, sidecar) are still errors.
pub fn check_corpus(manifest_path: &Path, mode: LabelMode) -> Result<(Corpus, Vec<LineViolation>)> {
    read_manifest(manifest_path, mode, false)
}

fn read_manifest(
    manifest_path: &Path,
    mode: LabelMode,
    fail_fast: bool,
) -> Result<(Corpus, Vec<LineViolation>)> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: manifest_path.to_path_buf(),
        line,
        message,
    };
    let file = File::open(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let header: ManifestHeader = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::io(manifest_path, e))?;
            serde_json::from_str(&line).map_err(|e| parse_err(1, format!("bad header: {e}")))?
        }
        None => return Err(parse_err(1, "missing header line".into())),
    };
    if header.format != FORMAT_NAME {
        return Err(parse_err(1, format!("unknown format {:?}", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(parse_err(
            1,
            format!("unsupported format version {}", header.version),
        ));
    }

    let side_path = sidecar_path(manifest_path);
    if !side_path.exists() {
        return Err(Error::Sidecar {
            path: side_path,
            message: "missing sidecar".into(),
        });
    }
    let sidecar = read_sidecar(&side_path)?;
    if sidecar.dim != header.dim {
        return Err(Error::Dimension(format!(
            "manifest declares dim {} but sidecar has dim {}",
            header.dim, sidecar.dim
        )));
    }

    let mut corpus = Corpus::empty(header.source, header.dim);
    let mut violations = Vec::new();
    let mut seen = BTreeSet::new();
    for (index, line) in lines {
        let line_no = index + 1;
        let line = line.map_err(|e| Error::io(manifest_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut problems: Vec<String> = Vec::new();
        let mut id = String::new();
        let mut accepted = None;
        match serde_json::from_str::<ManifestTrace>(&line) {
            Err(e) => problems.push(e.to_string()),
            Ok(raw) => {
                id = raw.id.clone();
                match trace_from_manifest(raw, &sidecar) {
                    Err(message) => problems.push(message),
                    Ok((trace, labels)) => {
                        problems.extend(
                            validate_trace(&trace)
                                .violations
                                .iter()
                                .map(|v| v.to_string()),
                        );
                        if !seen.insert(trace.id.clone()) {
                            problems.push(format!("duplicate trace id {}", trace.id));
                        }
                        let mut annotation = None;
                        if problems.is_empty() {
                            if let Some(labels) = labels {
                                match import_editor_labels(&trace, &labels, mode) {
                                    Ok(import) => annotation = Some(import.annotation),
                                    Err(e) => problems.push(e.to_string()),
                                }
                            }
                        }
                        accepted = Some((trace, annotation));
                    }
                }
            }
        }
        if let Some(first) = problems.first() {
            if fail_fast {
                return Err(parse_err(line_no, first.clone()));
            }
            violations.extend(problems.into_iter().map(|message| LineViolation {
                line: line_no,
                id: id.clone(),
                message,
            }));
            continue;
        }
        let (trace, annotation) = accepted.expect("trace accepted when no problems");
        if let Some(a) = annotation {
            corpus.annotations.insert(trace.id.clone(), a);
        }
        corpus.traces.push(trace);
    }
    Ok((corpus, violations))
}

fn trace_from_manifest(
    raw: ManifestTrace,
    sidecar: &Sidecar,
) -> std::result::Result<(TraceRecord, Option<Vec<u8>>), String> {
    let mut sentences = Vec::with_capacity(raw.sentences.len());
    for (i, s) in raw.sentences.into_iter().enumerate() {
        if s.logprobs.len() != s.entropies.len() {
            return Err(format!(
                "sentence {}: {} logprobs but {} entropies",
                i + 1,
                s.logprobs.len(),
                s.entropies.len()
            ));
        }
        let token_scores = s
            .logprobs
            .iter()
            .zip(&s.entropies)
            .map(|(&logprob, &entropy)| TokenScore { logprob, entropy })
            .collect();
        sentences.push(SentenceRecord {
            text: s.text,
            token_count: s.token_count,
            token_scores,
        });
    }
    let answer_scores = raw
        .answer_scores
        .iter()
        .map(|a| AnswerScore {
            prefix: a.t,
            nll: a.nll,
            entropy: a.entropy,
        })
        .collect();

    let rows = sentences.len() as u64 + 1;
    let end = raw
        .hidden_offset
        .checked_add(rows)
        .filter(|&end| end <= sidecar.rows)
        .ok_or_else(|| {
            format!(
                "hidden rows {}..{} exceed sidecar row count {}",
                raw.hidden_offset,
                raw.hidden_offset.saturating_add(rows),
                sidecar.rows
            )
        })?;
    let start = raw.hidden_offset as usize * sidecar.dim;
    let states = sidecar.data[start..end as usize * sidecar.dim].to_vec();
    let hidden = HiddenTrack::new(sidecar.dim, states).map_err(|e| e.to_string())?;

    Ok((
        TraceRecord {
            id: raw.id,
            question: raw.question,
            sentences,
            final_answer: raw.final_answer,
            answer_token_count: raw.answer_token_count,
            answer_scores,
            hidden,
        },
        raw.labels,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteSummary {
    pub traces: usize,
    pub manifest_bytes: u64,
    pub sidecar_bytes: u64,
}

/// Write `corpus` as a manifest at `out_path` plus its sidecar.
pub fn write_corpus(corpus: &Corpus, out_path: &Path) -> Result<WriteSummary> {
    let dim = corpus.meta.dim;
    for trace in &corpus.traces {
        if trace.hidden.dim() != dim {
            return Err(Error::Dimension(format!(
                "trace {} has hidden dim {}, corpus dim is {}",
                trace.id,
                trace.hidden.dim(),
                dim
            )));
        }
    }
    if let Some(id) = corpus
        .annotations
        .keys()
        .find(|id| !corpus.traces.iter().any(|t| &t.id == *id))
    {
        return Err(Error::InvalidTrace {
            id: id.clone(),
            message: "annotation refers to a missing trace".into(),
        });
    }

    let mut manifest = Vec::new();
    let header = ManifestHeader {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        dim,
        source: corpus.meta.source.clone(),
    };
    serde_json::to_writer(&mut manifest, &header)?;
    manifest.push(b'\n');

    let total_rows: u64 = corpus.traces.iter().map(|t| t.hidden.rows() as u64).sum();
    let mut sidecar = Vec::with_capacity(SIDECAR_HEADER_LEN + total_rows as usize * dim * 4);
    sidecar.extend_from_slice(SIDECAR_MAGIC);
    sidecar.extend_from_slice(&SIDECAR_VERSION.to_le_bytes());
    sidecar.extend_from_slice(&(dim as u32).to_le_bytes());
    sidecar.extend_from_slice(&total_rows.to_le_bytes());

    let mut offset = 0u64;
    for trace in &corpus.traces {
        let line = ManifestTrace {
            id: trace.id.clone(),
            question: trace.question.clone(),
            final_answer: trace.final_answer.clone(),
            answer_token_count: trace.answer_token_count,
            sentences: trace
                .sentences
                .iter()
                .map(|s| ManifestSentence {
                    text: s.text.clone(),
                    token_count: s.token_count,
                    logprobs: s.token_scores.iter().map(|x| x.logprob).collect(),
                    entropies: s.token_scores.iter().map(|x| x.entropy).collect(),
                })
                .collect(),
            answer_scores: trace
                .answer_scores
                .iter()
                .map(|a| ManifestAnswerScore {
                    t: a.prefix,
                    nll: a.nll,
                    entropy: a.entropy,
                })
                .collect(),
            hidden_offset: offset,
            labels: corpus.annotations.get(&trace.id).map(|a| a.labels.clone()),
        };
        serde_json::to_writer(&mut manifest, &line)?;
        manifest.push(b'\n');
        for v in trace.hidden.as_slice() {
            sidecar.extend_from_slice(&v.to_le_bytes());
        }
        offset += trace.hidden.rows() as u64;
    }

    write_file(out_path, &manifest)?;
    write_file(&sidecar_path(out_path), &sidecar)?;
    Ok(WriteSummary {
        traces: corpus.traces.len(),
        manifest_bytes: manifest.len() as u64,
        sidecar_bytes: sidecar.len() as u64,
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(bytes)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}
