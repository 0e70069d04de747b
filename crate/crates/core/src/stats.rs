//! Paired comparisons with percentile-bootstrap intervals, ECDFs and the
//! detector-based self-consistency rates.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::geometry::{GeometryMetric, GroupGeometryMeans};
use crate::rng;

pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(count)`; 0 for a single value.
    pub stderr: f64,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stderr = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Some(Summary {
        count: values.len(),
        mean,
        stderr,
    })
}

/// Per-trace `(removed, retained)` group means for one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricPairs {
    pub metric: String,
    pub pairs: Vec<(Option<f64>, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedRow {
    pub metric: String,
    pub n: usize,
    /// Traces dropped because one segment had no value.
    pub excluded: usize,
    pub removed_mean: f64,
    pub retained_mean: f64,
    pub delta_mean: f64,
    pub frac_removed_lower: f64,
    pub frac_removed_higher: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Percentile bounds of the bootstrap distribution of the mean of `deltas`.
///
/// Resample `b` draws its indices from stream `b` of `seed`, so bounds are
/// identical for any thread count. With sorted resample means `m`, the bounds
/// are `m[floor(a B)]` and `m[ceil((1 - a) B) - 1]` where `a = (1 - level) / 2`.
pub fn bootstrap_mean_ci(deltas: &[f64], resamples: usize, seed: u64, level: f64) -> (f64, f64) {
    let n = deltas.len();
    let mut means: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(seed, b as u64);
            let sum: f64 = (0..n).map(|_| deltas[rng::index(&mut r, n)]).sum();
            sum / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let lo = ((alpha * resamples as f64).floor() as usize).min(resamples - 1);
    let hi = (((1.0 - alpha) * resamples as f64).ceil() as usize)
        .saturating_sub(1)
        .min(resamples - 1);
    (means[lo], means[hi])
}

pub fn paired_table(
    metrics: &[MetricPairs],
    resamples: usize,
    seed: u64,
    level: f64,
) -> Result<Vec<PairedRow>> {
    if resamples < 100 {
        return Err(Error::Config(format!(
            "at least 100 bootstrap resamples required, got {resamples}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!(
            "level must lie in (0, 1), got {level}"
        )));
    }
    let mut rows = Vec::with_capacity(metrics.len());
    for m in metrics {
        let complete: Vec<(f64, f64)> = m
            .pairs
            .iter()
            .filter_map(|&(a, b)| Some((a?, b?)))
            .collect();
        let n = complete.len();
        if n < 2 {
            return Err(Error::Insufficient(format!(
                "{}: {} traces with both segments, need at least 2",
                m.metric, n
            )));
        }
        let nf = n as f64;
        let deltas: Vec<f64> = complete.iter().map(|(a, b)| a - b).collect();
        let (ci_low, ci_high) = bootstrap_mean_ci(&deltas, resamples, seed, level);
        rows.push(PairedRow {
            metric: m.metric.clone(),
            n,
            excluded: m.pairs.len() - n,
            removed_mean: complete.iter().map(|p| p.0).sum::<f64>() / nf,
            retained_mean: complete.iter().map(|p| p.1).sum::<f64>() / nf,
            delta_mean: deltas.iter().sum::<f64>() / nf,
            frac_removed_lower: deltas.iter().filter(|&&d| d < 0.0).count() as f64 / nf,
            frac_removed_higher: deltas.iter().filter(|&&d| d > 0.0).count() as f64 / nf,
            ci_low,
            ci_high,
        });
    }
    Ok(rows)
}

/// Gather geometry group means into one [`MetricPairs`] per metric.
pub fn geometry_pairs(means: &[GroupGeometryMeans]) -> Vec<MetricPairs> {
    GeometryMetric::ALL
        .iter()
        .map(|&metric| MetricPairs {
            metric: metric.name().to_string(),
            pairs: means
                .iter()
                .map(|g| (g.removed(metric), g.retained(metric)))
                .collect(),
        })
        .collect()
}

/// Fixed-width text rendering of a paired table.
pub fn render_table(rows: &[PairedRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<32} {:>12} {:>12} {:>8} {:>8} {:>26}",
        "metric", "removed", "retained", "lower", "higher", "ci"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<32} {:>12.4} {:>12.4} {:>8.2} {:>8.2} {:>26}",
            r.metric,
            r.removed_mean,
            r.retained_mean,
            r.frac_removed_lower,
            r.frac_removed_higher,
            format!("[{:.4}, {:.4}]", r.ci_low, r.ci_high)
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EcdfPoint {
    pub x: f64,
    pub fraction: f64,
}

/// Right-continuous empirical CDF with tied values merged.
pub fn ecdf(values: &[f64]) -> Result<Vec<EcdfPoint>> {
    if values.is_empty() {
        return Err(Error::Insufficient("ECDF of an empty sample".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut points: Vec<EcdfPoint> = Vec::new();
    for (i, &x) in sorted.iter().enumerate() {
        let fraction = (i + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.x == x => last.fraction = fraction,
            _ => points.push(EcdfPoint { x, fraction }),
        }
    }
    Ok(points)
}

/// A detector's verdict for one trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TracePrediction {
    pub id: String,
    pub boundary: usize,
    pub delete_flags: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelfConsistencyReport {
    pub traces: usize,
    /// Fraction of traces predicted to contain a removable continuation.
    pub phase_rate: f64,
    /// Mean fraction of sentences after the predicted boundary.
    pub sentence_ratio: f64,
    /// Mean total sentence token count.
    pub avg_len: f64,
}

pub fn self_consistency(
    predictions: &[TracePrediction],
    corpus: &Corpus,
) -> Result<SelfConsistencyReport> {
    if corpus.traces.is_empty() {
        return Err(Error::Insufficient(
            "self-consistency over an empty corpus".into(),
        ));
    }
    let by_id: BTreeMap<&str, &TracePrediction> =
        predictions.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut phase = 0usize;
    let mut ratio = 0.0;
    let mut tokens = 0usize;
    for trace in &corpus.traces {
        let p = by_id
            .get(trace.id.as_str())
            .ok_or_else(|| Error::InvalidTrace {
                id: trace.id.clone(),
                message: "no prediction for trace".into(),
            })?;
        let len = trace.len();
        if p.boundary > len {
            return Err(Error::Boundary {
                boundary: p.boundary,
                len,
            });
        }
        if p.delete_flags.len() != len {
            return Err(Error::InvalidTrace {
                id: trace.id.clone(),
                message: format!(
                    "{} delete flags for {} sentences",
                    p.delete_flags.len(),
                    len
                ),
            });
        }
        if p.boundary < len {
            phase += 1;
        }
        ratio += (len - p.boundary) as f64 / len as f64;
        tokens += trace.total_tokens();
    }
    let n = corpus.traces.len() as f64;
    Ok(SelfConsistencyReport {
        traces: corpus.traces.len(),
        phase_rate: phase as f64 / n,
        sentence_ratio: ratio / n,
        avg_len: tokens as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(v: &[(f64, f64)]) -> MetricPairs {
        MetricPairs {
            metric: "m".into(),
            pairs: v.iter().map(|&(a, b)| (Some(a), Some(b))).collect(),
        }
    }

    #[test]
    fn summary_of_one_value() {
        let s = summarize(&[3.0]).unwrap();
        assert_eq!((s.count, s.mean, s.stderr), (1, 3.0, 0.0));
        assert!(summarize(&[]).is_none());
    }

    #[test]
    fn two_pair_table() {
        let rows = paired_table(&[pairs(&[(1.0, 3.0), (2.0, 4.0)])], 1000, 1, 0.95).unwrap();
        let r = &rows[0];
        assert_eq!((r.removed_mean, r.retained_mean), (1.5, 3.5));
        assert_eq!((r.frac_removed_lower, r.frac_removed_higher), (1.0, 0.0));
        assert_eq!(r.delta_mean, -2.0);
        assert_eq!((r.ci_low, r.ci_high), (-2.0, -2.0));
    }

    #[test]
    fn equal_pairs_degenerate() {
        let rows = paired_table(
            &[pairs(&[(1.0, 1.0), (2.0, 2.0), (5.0, 5.0)])],
            500,
            9,
            0.95,
        )
        .unwrap();
        let r = &rows[0];
        assert_eq!((r.frac_removed_lower, r.frac_removed_higher), (0.0, 0.0));
        assert_eq!((r.ci_low, r.ci_high), (0.0, 0.0));
    }

    #[test]
    fn absent_groups_are_excluded_and_counted() {
        let m = MetricPairs {
            metric: "m".into(),
            pairs: vec![
                (Some(1.0), Some(2.0)),
                (None, Some(1.0)),
                (Some(0.0), Some(3.0)),
            ],
        };
        let rows = paired_table(&[m], 200, 0, 0.9).unwrap();
        assert_eq!((rows[0].n, rows[0].excluded), (2, 1));
    }

    #[test]
    fn too_few_pairs_or_resamples() {
        assert!(paired_table(&[pairs(&[(1.0, 2.0)])], 1000, 0, 0.95).is_err());
        assert!(paired_table(&[pairs(&[(1.0, 2.0), (0.0, 1.0)])], 99, 0, 0.95).is_err());
    }

    #[test]
    fn bootstrap_is_deterministic_and_bounded() {
        let deltas: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64 - 6.0).collect();
        let a = bootstrap_mean_ci(&deltas, 2000, 42, 0.95);
        let b = bootstrap_mean_ci(&deltas, 2000, 42, 0.95);
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1.to_bits(), b.1.to_bits());
        assert!(a.0 <= a.1);
        let min = deltas.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = deltas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(a.0 >= min && a.1 <= max);
        assert_ne!(bootstrap_mean_ci(&deltas, 2000, 43, 0.95), a);
    }

    #[test]
    fn ecdf_merges_ties() {
        let e = ecdf(&[2.0, 1.0, 2.0]).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!((e[0].x, e[0].fraction), (1.0, 1.0 / 3.0));
        assert_eq!((e[1].x, e[1].fraction), (2.0, 1.0));
        assert_eq!(
            ecdf(&[7.5]).unwrap(),
            vec![EcdfPoint {
                x: 7.5,
                fraction: 1.0
            }]
        );
        assert!(ecdf(&[]).is_err());
    }
}
