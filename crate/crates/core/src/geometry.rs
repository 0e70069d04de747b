//! Hidden-state trajectory metrics over sentence-boundary states.
//!
//! With `Δh_t = h_t - h_{t-1}` and the remaining direction `r_t = h_T - h_{t-1}`:
//!
//! - displacement `D_t = ‖Δh_t‖`
//! - forward progress `G_t = ⟨Δh_t, r_t⟩ / (‖r_t‖ + ε)`
//! - efficiency `E_t = G_t / (D_t + ε)`
//! - per-token variants `D_t / n_t`, `G_t / n_t`
//! - curvature `1 - ⟨Δh_{t-1}, Δh_t⟩ / (‖Δh_{t-1}‖‖Δh_t‖ + ε)` for `t > 1`
//!
//! At `t = T` the remaining direction is `Δh_T` itself, so `G_T ≈ D_T`.

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Corpus, EditorAnnotation, HiddenTrack, TraceRecord};

pub const DEFAULT_EPSILON: f64 = 1e-8;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `Δh_t` for `t = 1..=T`.
pub fn state_updates(hidden: &HiddenTrack) -> Vec<Vec<f64>> {
    (1..hidden.rows())
        .map(|t| {
            hidden
                .row(t)
                .iter()
                .zip(hidden.row(t - 1))
                .map(|(&a, &b)| f64::from(a) - f64::from(b))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeometrySeries {
    pub epsilon: f64,
    pub displacement: Vec<f64>,
    pub forward_progress: Vec<f64>,
    pub efficiency: Vec<f64>,
    pub displacement_per_token: Vec<f64>,
    pub progress_per_token: Vec<f64>,
    /// `None` at `t = 1`.
    pub curvature: Vec<Option<f64>>,
}

impl GeometrySeries {
    pub fn len(&self) -> usize {
        self.displacement.len()
    }

    pub fn is_empty(&self) -> bool {
        self.displacement.is_empty()
    }

    pub fn metric(&self, metric: GeometryMetric, t: usize) -> Option<f64> {
        let i = t - 1;
        match metric {
            GeometryMetric::Displacement => Some(self.displacement[i]),
            GeometryMetric::ForwardProgress => Some(self.forward_progress[i]),
            GeometryMetric::Efficiency => Some(self.efficiency[i]),
            GeometryMetric::DisplacementPerToken => Some(self.displacement_per_token[i]),
            GeometryMetric::ProgressPerToken => Some(self.progress_per_token[i]),
            GeometryMetric::Curvature => self.curvature[i],
        }
    }
}

pub fn geometry_series(trace: &TraceRecord, epsilon: f64) -> GeometrySeries {
    let hidden = &trace.hidden;
    let len = hidden.rows() - 1;
    let updates = state_updates(hidden);
    let terminal = hidden.row_f64(len);

    let mut out = GeometrySeries {
        epsilon,
        displacement: Vec::with_capacity(len),
        forward_progress: Vec::with_capacity(len),
        efficiency: Vec::with_capacity(len),
        displacement_per_token: Vec::with_capacity(len),
        progress_per_token: Vec::with_capacity(len),
        curvature: Vec::with_capacity(len),
    };
    let mut remaining = vec![0.0; hidden.dim()];
    for (i, delta) in updates.iter().enumerate() {
        for ((r, &end), &prev) in remaining.iter_mut().zip(&terminal).zip(hidden.row(i)) {
            *r = end - f64::from(prev);
        }
        let d = norm(delta);
        // rounding guard: Cauchy-Schwarz bounds |G| by D
        let g = (dot(delta, &remaining) / (norm(&remaining) + epsilon)).clamp(-d, d);
        let tokens = trace.sentences[i].token_count as f64;
        out.displacement.push(d);
        out.forward_progress.push(g);
        out.efficiency.push(g / (d + epsilon));
        out.displacement_per_token.push(d / tokens);
        out.progress_per_token.push(g / tokens);
        out.curvature.push((i > 0).then(|| {
            let prev = &updates[i - 1];
            let cos = dot(prev, delta) / (norm(prev) * d + epsilon);
            (1.0 - cos).clamp(0.0, 2.0)
        }));
    }
    out
}

/// Series for every trace, in corpus order.
pub fn corpus_geometry(corpus: &Corpus, epsilon: f64) -> Vec<GeometrySeries> {
    corpus
        .traces
        .par_iter()
        .map(|t| geometry_series(t, epsilon))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryMetric {
    Displacement,
    ForwardProgress,
    Efficiency,
    DisplacementPerToken,
    ProgressPerToken,
    Curvature,
}

impl GeometryMetric {
    pub const ALL: [GeometryMetric; 6] = [
        GeometryMetric::Displacement,
        GeometryMetric::ForwardProgress,
        GeometryMetric::Efficiency,
        GeometryMetric::DisplacementPerToken,
        GeometryMetric::ProgressPerToken,
        GeometryMetric::Curvature,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GeometryMetric::Displacement => "hidden_displacement",
            GeometryMetric::ForwardProgress => "forward_progress",
            GeometryMetric::Efficiency => "progress_efficiency",
            GeometryMetric::DisplacementPerToken => "hidden_displacement_per_token",
            GeometryMetric::ProgressPerToken => "forward_progress_per_token",
            GeometryMetric::Curvature => "curvature",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

/// Per-metric segment means for one trace; `None` where the segment has no
/// sentence carrying the metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupGeometryMeans {
    pub retained: Vec<(GeometryMetric, Option<f64>)>,
    pub removed: Vec<(GeometryMetric, Option<f64>)>,
}

impl GroupGeometryMeans {
    pub fn retained(&self, metric: GeometryMetric) -> Option<f64> {
        lookup(&self.retained, metric)
    }

    pub fn removed(&self, metric: GeometryMetric) -> Option<f64> {
        lookup(&self.removed, metric)
    }
}

fn lookup(v: &[(GeometryMetric, Option<f64>)], metric: GeometryMetric) -> Option<f64> {
    v.iter().find(|(m, _)| *m == metric).and_then(|(_, x)| *x)
}

pub fn group_means(series: &GeometrySeries, annotation: &EditorAnnotation) -> GroupGeometryMeans {
    let len = series.len();
    let boundary = annotation.boundary.min(len);
    let mean_over = |metric: GeometryMetric, range: std::ops::RangeInclusive<usize>| {
        let values: Vec<f64> = range.filter_map(|t| series.metric(metric, t)).collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    };
    GroupGeometryMeans {
        retained: GeometryMetric::ALL
            .iter()
            .map(|&m| (m, mean_over(m, 1..=boundary)))
            .collect(),
        removed: GeometryMetric::ALL
            .iter()
            .map(|&m| (m, mean_over(m, boundary + 1..=len)))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesRow<'a> {
    pub id: &'a str,
    pub t: usize,
    pub tokens: usize,
    pub segment: Option<&'static str>,
    pub hidden_displacement: f64,
    pub forward_progress: f64,
    pub progress_efficiency: f64,
    pub hidden_displacement_per_token: f64,
    pub forward_progress_per_token: f64,
    pub curvature: Option<f64>,
}

/// One row per sentence. Columns: id, t, tokens, segment, hidden_displacement,
/// forward_progress, progress_efficiency, hidden_displacement_per_token,
/// forward_progress_per_token, curvature.
pub fn series_rows<'a>(
    trace: &'a TraceRecord,
    series: &GeometrySeries,
    annotation: Option<&EditorAnnotation>,
) -> Vec<SeriesRow<'a>> {
    (1..=series.len())
        .map(|t| SeriesRow {
            id: &trace.id,
            t,
            tokens: trace.sentences[t - 1].token_count,
            segment: annotation.map(|a| {
                if t <= a.boundary {
                    "retained"
                } else {
                    "removed"
                }
            }),
            hidden_displacement: series.displacement[t - 1],
            forward_progress: series.forward_progress[t - 1],
            progress_efficiency: series.efficiency[t - 1],
            hidden_displacement_per_token: series.displacement_per_token[t - 1],
            forward_progress_per_token: series.progress_per_token[t - 1],
            curvature: series.curvature[t - 1],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupMeansRow<'a> {
    pub id: &'a str,
    pub metric: &'static str,
    pub retained_mean: Option<f64>,
    pub removed_mean: Option<f64>,
}

/// Columns: id, metric, retained_mean, removed_mean.
pub fn group_rows<'a>(id: &'a str, means: &GroupGeometryMeans) -> Vec<GroupMeansRow<'a>> {
    GeometryMetric::ALL
        .iter()
        .map(|&m| GroupMeansRow {
            id,
            metric: m.name(),
            retained_mean: means.retained(m),
            removed_mean: means.removed(m),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AnswerScore, SentenceRecord, TokenScore};

    fn trace_from(rows: &[Vec<f64>], tokens: &[usize]) -> TraceRecord {
        let len = rows.len() - 1;
        TraceRecord {
            id: "g".into(),
            question: "q".into(),
            sentences: tokens
                .iter()
                .map(|&n| {
                    SentenceRecord::new(
                        "s.",
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
            final_answer: "a".into(),
            answer_token_count: 1,
            answer_scores: (0..=len)
                .map(|t| AnswerScore {
                    prefix: t,
                    nll: 1.0,
                    entropy: 1.0,
                })
                .collect(),
            hidden: HiddenTrack::from_rows(rows).unwrap(),
        }
    }

    #[test]
    fn updates_are_row_differences() {
        let h = HiddenTrack::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(state_updates(&h), vec![vec![1.0, 2.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn aligned_update() {
        let t = trace_from(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]], &[1, 1]);
        let s = geometry_series(&t, 1e-8);
        assert_eq!(s.displacement[0], 1.0);
        assert!((s.forward_progress[0] - 1.0).abs() < 1e-7);
        assert!((s.efficiency[0] - 1.0).abs() < 1e-7);
        assert_eq!(s.curvature[0], None);
    }

    #[test]
    fn orthogonal_and_reversed_curvature() {
        let t = trace_from(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]], &[1, 1]);
        assert!((geometry_series(&t, 1e-8).curvature[1].unwrap() - 1.0).abs() < 1e-12);
        let t = trace_from(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 0.0]], &[1, 1]);
        assert!((geometry_series(&t, 1e-8).curvature[1].unwrap() - 2.0).abs() < 1e-7);
    }

    #[test]
    fn group_means_split_at_boundary() {
        let t = trace_from(&[vec![0.0], vec![2.0], vec![6.0]], &[1, 1]);
        let s = geometry_series(&t, 1e-8);
        let m = group_means(&s, &EditorAnnotation::from_boundary(1, 2).unwrap());
        assert_eq!(m.retained(GeometryMetric::Displacement), Some(2.0));
        assert_eq!(m.removed(GeometryMetric::Displacement), Some(4.0));
        assert_eq!(m.retained(GeometryMetric::Curvature), None);
        let all = group_means(&s, &EditorAnnotation::from_boundary(2, 2).unwrap());
        assert_eq!(all.removed(GeometryMetric::Displacement), None);
        assert_eq!(all.retained(GeometryMetric::Displacement), Some(3.0));
    }

    #[test]
    fn constant_metric_gives_equal_means() {
        let rows: Vec<Vec<f64>> = (0..6).map(|t| vec![t as f64 * 0.5, 0.0]).collect();
        let t = trace_from(&rows, &[1; 5]);
        let s = geometry_series(&t, 1e-8);
        let m = group_means(&s, &EditorAnnotation::from_boundary(2, 5).unwrap());
        assert_eq!(m.retained(GeometryMetric::Displacement), Some(0.5));
        assert_eq!(m.removed(GeometryMetric::Displacement), Some(0.5));
    }
}
