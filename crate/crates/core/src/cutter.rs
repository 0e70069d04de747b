//! Suffix cuts that keep the original prefix and the final answer verbatim.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{write_file, Corpus, TraceRecord};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CutResult {
    pub id: String,
    pub boundary: usize,
    pub kept: usize,
    pub removed: usize,
    pub removed_tokens: usize,
    /// Kept sentences in order followed by the final answer.
    pub text: String,
}

fn join_pieces<'a>(pieces: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = String::new();
    for piece in pieces {
        if !out.is_empty() && !out.ends_with('\n') {
            out.push(' ');
        }
        out.push_str(piece);
    }
    out
}

pub fn apply_cut(trace: &TraceRecord, boundary: usize) -> Result<CutResult> {
    let len = trace.len();
    if boundary > len {
        return Err(Error::Boundary { boundary, len });
    }
    let kept = &trace.sentences[..boundary];
    let removed = &trace.sentences[boundary..];
    let text = join_pieces(
        kept.iter()
            .map(|s| s.text.as_str())
            .chain(std::iter::once(trace.final_answer.as_str())),
    );
    Ok(CutResult {
        id: trace.id.clone(),
        boundary,
        kept: kept.len(),
        removed: removed.len(),
        removed_tokens: removed.iter().map(|s| s.token_count).sum(),
        text,
    })
}

/// How `random_cut` settles boundaries whose removed length is equally close
/// to the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// Keep more of the trace.
    #[default]
    LessRemoval,
    /// Pick uniformly among the tied boundaries.
    Seeded(u64),
}

/// Removed-token count for every boundary `0..=T`.
pub fn suffix_tokens(trace: &TraceRecord) -> Vec<usize> {
    let len = trace.len();
    let mut out = vec![0; len + 1];
    for b in (0..len).rev() {
        out[b] = out[b + 1] + trace.sentences[b].token_count;
    }
    out
}

/// Cut the sentence-complete suffix whose token count is closest to `target`.
pub fn random_cut(trace: &TraceRecord, target_removed_tokens: f64, tie: TieBreak) -> CutResult {
    let removed = suffix_tokens(trace);
    let gap = |b: usize| (removed[b] as f64 - target_removed_tokens.max(0.0)).abs();
    let best = (0..removed.len()).map(gap).fold(f64::INFINITY, f64::min);
    let tied: Vec<usize> = (0..removed.len()).filter(|&b| gap(b) == best).collect();
    let boundary = match tie {
        TieBreak::LessRemoval => *tied.last().expect("at least one boundary"),
        TieBreak::Seeded(seed) => {
            let key = trace
                .id
                .bytes()
                .fold(0u64, |h, b| rng::derive_seed(h, u64::from(b)));
            tied[rng::index(&mut rng::stream(seed, key), tied.len())]
        }
    };
    apply_cut(trace, boundary).expect("boundary within trace")
}

/// Per-trace removal target for a corpus-wide random cut.
#[derive(Debug, Clone, PartialEq)]
pub enum CutTarget {
    /// The same target for every trace, e.g. the mean removal of another cutter.
    CorpusMean(f64),
    /// Match each trace's own reference removal.
    PerTrace(BTreeMap<String, f64>),
}

pub fn random_cut_corpus(
    corpus: &Corpus,
    target: &CutTarget,
    tie: TieBreak,
) -> Result<Vec<CutResult>> {
    corpus
        .traces
        .iter()
        .map(|trace| {
            let t = match target {
                CutTarget::CorpusMean(m) => *m,
                CutTarget::PerTrace(map) => {
                    *map.get(&trace.id).ok_or_else(|| Error::InvalidTrace {
                        id: trace.id.clone(),
                        message: "no random-cut target".into(),
                    })?
                }
            };
            Ok(random_cut(trace, t, tie))
        })
        .collect()
}

pub fn mean_removed_tokens(cuts: &[CutResult]) -> f64 {
    if cuts.is_empty() {
        return 0.0;
    }
    cuts.iter().map(|c| c.removed_tokens as f64).sum::<f64>() / cuts.len() as f64
}

#[derive(Debug, Serialize)]
struct SftRecord<'a> {
    id: &'a str,
    prompt: &'a str,
    response: &'a str,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SftSummary {
    pub count: usize,
    pub mean_kept_sentences: f64,
    pub mean_kept_tokens: f64,
}

/// Write `{"id", "prompt", "response"}` JSON lines ordered by id.
pub fn export_sft(
    corpus: &Corpus,
    cuts: &BTreeMap<String, CutResult>,
    path: &Path,
) -> Result<SftSummary> {
    let mut traces: Vec<&TraceRecord> = corpus.traces.iter().collect();
    traces.sort_by(|a, b| a.id.cmp(&b.id));
    let mut out = Vec::new();
    let mut kept_sentences = 0usize;
    let mut kept_tokens = 0usize;
    for trace in &traces {
        let cut = cuts.get(&trace.id).ok_or_else(|| Error::InvalidTrace {
            id: trace.id.clone(),
            message: "no cut for trace".into(),
        })?;
        serde_json::to_writer(
            &mut out,
            &SftRecord {
                id: &trace.id,
                prompt: &trace.question,
                response: &cut.text,
            },
        )?;
        out.push(b'\n');
        kept_sentences += cut.kept;
        kept_tokens += trace.total_tokens() - cut.removed_tokens;
    }
    write_file(path, &out)?;
    let n = traces.len().max(1) as f64;
    Ok(SftSummary {
        count: traces.len(),
        mean_kept_sentences: kept_sentences as f64 / n,
        mean_kept_tokens: kept_tokens as f64 / n,
    })
}

/// Row of the cut-summary CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutSummaryRow {
    pub id: String,
    pub boundary: usize,
    pub removed_tokens: usize,
}

impl From<&CutResult> for CutSummaryRow {
    fn from(c: &CutResult) -> Self {
        CutSummaryRow {
            id: c.id.clone(),
            boundary: c.boundary,
            removed_tokens: c.removed_tokens,
        }
    }
}

pub fn read_cut_summary(path: &Path) -> Result<Vec<CutSummaryRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let rows = reader
        .deserialize()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(rows)
}

/// Re-apply summary boundaries to the corpus they were computed on.
pub fn cuts_from_summary(
    corpus: &Corpus,
    rows: &[CutSummaryRow],
) -> Result<BTreeMap<String, CutResult>> {
    let by_id: BTreeMap<&str, &TraceRecord> =
        corpus.traces.iter().map(|t| (t.id.as_str(), t)).collect();
    rows.iter()
        .map(|row| {
            let trace = by_id
                .get(row.id.as_str())
                .ok_or_else(|| Error::InvalidTrace {
                    id: row.id.clone(),
                    message: "cut refers to a trace missing from the corpus".into(),
                })?;
            Ok((row.id.clone(), apply_cut(trace, row.boundary)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AnswerScore, HiddenTrack, SentenceRecord, TokenScore};

    fn trace(tokens: &[usize]) -> TraceRecord {
        TraceRecord {
            id: "x".into(),
            question: "q?".into(),
            sentences: tokens
                .iter()
                .enumerate()
                .map(|(i, &n)| {
                    SentenceRecord::new(
                        format!("S{}.", i + 1),
                        vec![
                            TokenScore {
                                logprob: -1.0,
                                entropy: 1.0
                            };
                            n
                        ],
                    )
                })
                .collect(),
            final_answer: "\\boxed{7}".into(),
            answer_token_count: 2,
            answer_scores: (0..=tokens.len())
                .map(|t| AnswerScore {
                    prefix: t,
                    nll: 1.0,
                    entropy: 1.0,
                })
                .collect(),
            hidden: HiddenTrack::new(1, vec![0.0; tokens.len() + 1]).unwrap(),
        }
    }

    #[test]
    fn identity_and_full_cuts() {
        let t = trace(&[3, 3, 3, 3]);
        let full = apply_cut(&t, 4).unwrap();
        assert_eq!(full.removed, 0);
        assert_eq!(full.text, "S1. S2. S3. S4. \\boxed{7}");
        let none = apply_cut(&t, 0).unwrap();
        assert_eq!((none.kept, none.text.as_str()), (0, "\\boxed{7}"));
        assert!(apply_cut(&t, 5).is_err());
    }

    #[test]
    fn removed_tokens_counted() {
        let c = apply_cut(&trace(&[3, 3, 3, 3]), 2).unwrap();
        assert_eq!((c.kept, c.removed, c.removed_tokens), (2, 2, 6));
        assert!(c.text.ends_with("\\boxed{7}"));
    }

    #[test]
    fn newline_terminated_sentences_join_without_space() {
        let mut t = trace(&[1, 1]);
        t.sentences[0].text = "Line one\n".into();
        assert_eq!(apply_cut(&t, 2).unwrap().text, "Line one\nS2. \\boxed{7}");
    }

    #[test]
    fn random_cut_targets() {
        let t = trace(&[5, 5, 5]);
        assert_eq!(random_cut(&t, 0.0, TieBreak::LessRemoval).boundary, 3);
        assert_eq!(random_cut(&t, 5.0, TieBreak::LessRemoval).boundary, 2);
        assert_eq!(random_cut(&t, 100.0, TieBreak::LessRemoval).boundary, 0);
        // 7.5 is equidistant from 5 and 10 tokens
        assert_eq!(random_cut(&t, 7.5, TieBreak::LessRemoval).boundary, 2);
        let seeded = random_cut(&t, 7.5, TieBreak::Seeded(3)).boundary;
        assert!(seeded == 1 || seeded == 2);
    }
}
