//! Sentence- and answer-level uncertainty diagnostics.
//!
//! Sentence scores are token averages of the stored per-token log-probs and
//! entropies. Answer scores are stored already token-averaged for every
//! prefix `P_0..P_T`; `delta_ans(t) = nll(P_{t-1}) - nll(P_t)`.

use serde::Serialize;

use crate::corpus::{Corpus, EditorAnnotation, SentenceRecord, TraceRecord};
use crate::error::{Error, Result};
use crate::stats::{summarize, Summary};

/// Token-averaged `(nll, entropy)` of one sentence. The sentence must carry
/// at least one token score.
pub fn sentence_uncertainty(sentence: &SentenceRecord) -> (f64, f64) {
    let n = sentence.token_scores.len() as f64;
    let (lp, ent) = sentence
        .token_scores
        .iter()
        .fold((0.0, 0.0), |(lp, ent), s| (lp + s.logprob, ent + s.entropy));
    (-lp / n, ent / n)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UncertaintySeries {
    pub sent_nll: Vec<f64>,
    pub sent_entropy: Vec<f64>,
    /// `nll(P_t)` for `t = 1..=T`.
    pub answer_nll: Vec<f64>,
    pub answer_entropy: Vec<f64>,
    pub delta_ans: Vec<f64>,
    /// `nll(P_0)`, the question-only answer score.
    pub initial_answer_nll: f64,
}

impl UncertaintySeries {
    pub fn len(&self) -> usize {
        self.sent_nll.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sent_nll.is_empty()
    }
}

pub fn uncertainty_series(trace: &TraceRecord) -> UncertaintySeries {
    let (sent_nll, sent_entropy) = trace.sentences.iter().map(sentence_uncertainty).unzip();
    let scores = &trace.answer_scores;
    UncertaintySeries {
        sent_nll,
        sent_entropy,
        answer_nll: scores[1..].iter().map(|s| s.nll).collect(),
        answer_entropy: scores[1..].iter().map(|s| s.entropy).collect(),
        delta_ans: scores.windows(2).map(|w| w[0].nll - w[1].nll).collect(),
        initial_answer_nll: scores[0].nll,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Retained,
    Removed,
}

impl Segment {
    pub fn name(self) -> &'static str {
        match self {
            Segment::Retained => "retained",
            Segment::Removed => "removed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinStat {
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean: Option<f64>,
    pub stderr: Option<f64>,
}

impl BinStat {
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentCurves {
    pub segment: Segment,
    pub answer_entropy: Vec<BinStat>,
    pub answer_nll: Vec<BinStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProgressiveCurves {
    pub bins: usize,
    pub retained: SegmentCurves,
    pub removed: SegmentCurves,
}

/// Normalized position of the `rank`-th (1-based) sentence in a segment of
/// `len` sentences, and its bin. Bins are left-closed; the last is closed on
/// both sides.
pub fn position_bin(rank: usize, len: usize, bins: usize) -> (f64, usize) {
    let pos = if len <= 1 {
        0.0
    } else {
        (rank - 1) as f64 / (len - 1) as f64
    };
    let bin = ((pos * bins as f64).floor() as usize).min(bins - 1);
    (pos, bin)
}

/// Binned answer entropy / NLL against normalized position, separately for
/// retained reasoning and removed continuation.
pub fn progressive_curves(corpus: &Corpus, bins: usize) -> Result<ProgressiveCurves> {
    if bins < 2 {
        return Err(Error::Config(format!(
            "bins must be at least 2, got {bins}"
        )));
    }
    if corpus.annotated().next().is_none() {
        return Err(Error::Insufficient("corpus has no annotated traces".into()));
    }
    let mut buckets = vec![vec![Vec::new(); bins]; 4];
    for (trace, ann) in corpus.annotated() {
        let len = trace.len();
        for t in 1..=len {
            let (seg, rank, seg_len) = if t <= ann.boundary {
                (0, t, ann.boundary)
            } else {
                (1, t - ann.boundary, len - ann.boundary)
            };
            let (_, bin) = position_bin(rank, seg_len, bins);
            let score = trace.answer_scores[t];
            buckets[seg * 2][bin].push(score.entropy);
            buckets[seg * 2 + 1][bin].push(score.nll);
        }
    }
    let stat = |values: &Vec<Vec<f64>>| -> Vec<BinStat> {
        values
            .iter()
            .enumerate()
            .map(|(bin, vals)| {
                let summary = summarize(vals);
                BinStat {
                    bin,
                    lo: bin as f64 / bins as f64,
                    hi: (bin + 1) as f64 / bins as f64,
                    count: vals.len(),
                    mean: summary.map(|s| s.mean),
                    stderr: summary.map(|s| s.stderr),
                }
            })
            .collect()
    };
    Ok(ProgressiveCurves {
        bins,
        retained: SegmentCurves {
            segment: Segment::Retained,
            answer_entropy: stat(&buckets[0]),
            answer_nll: stat(&buckets[1]),
        },
        removed: SegmentCurves {
            segment: Segment::Removed,
            answer_entropy: stat(&buckets[2]),
            answer_nll: stat(&buckets[3]),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundaryPosition {
    K1,
    KT,
    C1,
    CT,
}

impl BoundaryPosition {
    pub const ALL: [BoundaryPosition; 4] = [
        BoundaryPosition::K1,
        BoundaryPosition::KT,
        BoundaryPosition::C1,
        BoundaryPosition::CT,
    ];

    /// 1-based sentence index for a trace of length `len` cut at `boundary`.
    pub fn index(self, boundary: usize, len: usize) -> usize {
        match self {
            BoundaryPosition::K1 => 1,
            BoundaryPosition::KT => boundary,
            BoundaryPosition::C1 => boundary + 1,
            BoundaryPosition::CT => len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMetric {
    SentenceEntropy,
    EntropyChange,
    SentenceNll,
    ReductionChange,
}

impl BoundaryMetric {
    pub const ALL: [BoundaryMetric; 4] = [
        BoundaryMetric::SentenceEntropy,
        BoundaryMetric::EntropyChange,
        BoundaryMetric::SentenceNll,
        BoundaryMetric::ReductionChange,
    ];

    /// Value at 1-based sentence `t`, or `None` when the metric needs a
    /// predecessor that does not exist.
    fn value(self, series: &UncertaintySeries, t: usize) -> Option<f64> {
        let i = t - 1;
        match self {
            BoundaryMetric::SentenceEntropy => Some(series.sent_entropy[i]),
            BoundaryMetric::SentenceNll => Some(series.sent_nll[i]),
            BoundaryMetric::EntropyChange => {
                (t > 1).then(|| series.sent_entropy[i] - series.sent_entropy[i - 1])
            }
            BoundaryMetric::ReductionChange => {
                (t > 1).then(|| series.delta_ans[i] - series.delta_ans[i - 1])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadrupleCell {
    pub position: BoundaryPosition,
    pub metric: BoundaryMetric,
    pub summary: Option<Summary>,
    /// Eligible traces lacking the predecessor sentence this cell needs.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryQuadruple {
    pub eligible: usize,
    /// Annotated traces with boundary 0 or T.
    pub excluded: usize,
    pub cells: Vec<QuadrupleCell>,
}

impl BoundaryQuadruple {
    pub fn cell(&self, position: BoundaryPosition, metric: BoundaryMetric) -> &QuadrupleCell {
        self.cells
            .iter()
            .find(|c| c.position == position && c.metric == metric)
            .expect("every position/metric pair has a cell")
    }
}

fn is_interior(trace: &TraceRecord, ann: &EditorAnnotation) -> bool {
    ann.boundary > 0 && ann.boundary < trace.len()
}

/// Mean ± standard error of the four uncertainty quantities at the first and
/// last sentences of both segments.
pub fn boundary_quadruple(corpus: &Corpus) -> Result<BoundaryQuadruple> {
    let mut excluded = 0;
    let mut eligible = Vec::new();
    for (trace, ann) in corpus.annotated() {
        if is_interior(trace, ann) {
            eligible.push((uncertainty_series(trace), ann.boundary, trace.len()));
        } else {
            excluded += 1;
        }
    }
    if eligible.is_empty() {
        return Err(Error::Insufficient(
            "no annotated trace has a boundary strictly inside the trace".into(),
        ));
    }
    let mut cells = Vec::with_capacity(16);
    for position in BoundaryPosition::ALL {
        for metric in BoundaryMetric::ALL {
            let mut values = Vec::with_capacity(eligible.len());
            let mut skipped = 0;
            for (series, boundary, len) in &eligible {
                match metric.value(series, position.index(*boundary, *len)) {
                    Some(v) => values.push(v),
                    None => skipped += 1,
                }
            }
            cells.push(QuadrupleCell {
                position,
                metric,
                summary: summarize(&values),
                skipped,
            });
        }
    }
    Ok(BoundaryQuadruple {
        eligible: eligible.len(),
        excluded,
        cells,
    })
}

/// Per-sentence answer perturbations split by segment, ready for ECDFs.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PerturbationStats {
    /// `|nll(P_t) - nll(P_{t-1})|`.
    pub retained_nll: Vec<f64>,
    pub removed_nll: Vec<f64>,
    /// Mean absolute change of answer-token log-probability. Answer scores are
    /// stored token-averaged, so this has the same magnitude as the NLL change.
    pub retained_logprob: Vec<f64>,
    pub removed_logprob: Vec<f64>,
}

pub fn perturbation_stats(corpus: &Corpus) -> PerturbationStats {
    let mut out = PerturbationStats::default();
    for (trace, ann) in corpus.annotated() {
        for (i, w) in trace.answer_scores.windows(2).enumerate() {
            let nll_change = (w[1].nll - w[0].nll).abs();
            let logprob_change = ((-w[1].nll) - (-w[0].nll)).abs();
            if i < ann.boundary {
                out.retained_nll.push(nll_change);
                out.retained_logprob.push(logprob_change);
            } else {
                out.removed_nll.push(nll_change);
                out.removed_logprob.push(logprob_change);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub segment: &'static str,
    pub metric: &'static str,
    pub bin: usize,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
    pub mean: Option<f64>,
    pub stderr: Option<f64>,
    pub empty: bool,
}

impl ProgressiveCurves {
    /// Columns: segment, metric, bin, bin_lo, bin_hi, count, mean, stderr, empty.
    pub fn rows(&self) -> Vec<CurveRow> {
        let mut rows = Vec::new();
        for seg in [&self.retained, &self.removed] {
            for (metric, stats) in [
                ("answer_entropy", &seg.answer_entropy),
                ("answer_nll", &seg.answer_nll),
            ] {
                rows.extend(stats.iter().map(|b| CurveRow {
                    segment: seg.segment.name(),
                    metric,
                    bin: b.bin,
                    bin_lo: b.lo,
                    bin_hi: b.hi,
                    count: b.count,
                    mean: b.mean,
                    stderr: b.stderr,
                    empty: b.is_empty(),
                }));
            }
        }
        rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadrupleRow {
    pub position: BoundaryPosition,
    pub metric: BoundaryMetric,
    pub count: usize,
    pub mean: Option<f64>,
    pub stderr: Option<f64>,
    pub skipped: usize,
}

impl BoundaryQuadruple {
    /// Columns: position, metric, count, mean, stderr, skipped.
    pub fn rows(&self) -> Vec<QuadrupleRow> {
        self.cells
            .iter()
            .map(|c| QuadrupleRow {
                position: c.position,
                metric: c.metric,
                count: c.summary.map_or(0, |s| s.count),
                mean: c.summary.map(|s| s.mean),
                stderr: c.summary.map(|s| s.stderr),
                skipped: c.skipped,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationRow {
    pub group: &'static str,
    pub kind: &'static str,
    pub value: f64,
}

impl PerturbationStats {
    /// Columns: group, kind, value.
    pub fn rows(&self) -> Vec<PerturbationRow> {
        let mut rows = Vec::new();
        for (group, kind, values) in [
            ("retained", "nll", &self.retained_nll),
            ("removed", "nll", &self.removed_nll),
            ("retained", "logprob", &self.retained_logprob),
            ("removed", "logprob", &self.removed_logprob),
        ] {
            rows.extend(
                values
                    .iter()
                    .map(|&value| PerturbationRow { group, kind, value }),
            );
        }
        rows
    }
}
