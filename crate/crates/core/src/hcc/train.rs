//! Feature construction, Adam training and inference.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Corpus, EditorAnnotation, TraceRecord};
use crate::error::{Error, Result};
use crate::geometry::{geometry_series, state_updates};
use crate::rng;
use crate::uncertainty::sentence_uncertainty;

use super::config::{HccConfig, UncertaintyTarget};
use super::model::{forward, gradients, LossBreakdown, Mode, TraceFeatures, TraceTargets};
use super::params::{init_params, HccParameters};

/// Input scale and target standardization fitted on a training corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    /// Root-mean-square coordinate of the hidden-state updates.
    pub input_scale: f64,
    pub uncertainty_mean: f64,
    pub uncertainty_std: f64,
    pub progress_mean: f64,
    pub progress_std: f64,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer {
            input_scale: 1.0,
            uncertainty_mean: 0.0,
            uncertainty_std: 1.0,
            progress_mean: 0.0,
            progress_std: 1.0,
        }
    }
}

fn raw_targets(trace: &TraceRecord, config: &HccConfig) -> (Vec<f64>, Vec<f64>) {
    let unc = trace
        .sentences
        .iter()
        .map(|s| {
            let (nll, ent) = sentence_uncertainty(s);
            match config.uncertainty_target {
                UncertaintyTarget::SentenceNll => nll,
                UncertaintyTarget::SentenceEntropy => ent,
            }
        })
        .collect();
    let geo = geometry_series(trace, config.epsilon);
    let prog = (1..=trace.len())
        .map(|t| geo.metric(config.progress_target, t).unwrap_or(0.0))
        .collect();
    (unc, prog)
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

impl Normalizer {
    pub fn fit(traces: &[&TraceRecord], config: &HccConfig) -> Self {
        let mut sq = 0.0;
        let mut count = 0usize;
        let mut unc = Vec::new();
        let mut prog = Vec::new();
        for trace in traces {
            for u in state_updates(&trace.hidden) {
                sq += u.iter().map(|v| v * v).sum::<f64>();
                count += u.len();
            }
            let (a, b) = raw_targets(trace, config);
            unc.extend(a);
            prog.extend(b);
        }
        let rms = (sq / count.max(1) as f64).sqrt();
        let (uncertainty_mean, uncertainty_std) = mean_std(unc.iter().copied());
        let (progress_mean, progress_std) = mean_std(prog.iter().copied());
        Normalizer {
            input_scale: if rms > 0.0 && rms.is_finite() {
                rms
            } else {
                1.0
            },
            uncertainty_mean,
            uncertainty_std,
            progress_mean,
            progress_std,
        }
    }

    /// Scaled hidden-state updates as inputs, z-scored targets.
    pub fn features(&self, trace: &TraceRecord, config: &HccConfig) -> TraceFeatures {
        let inputs = state_updates(&trace.hidden)
            .into_iter()
            .map(|u| u.into_iter().map(|v| v / self.input_scale).collect())
            .collect();
        let (unc, prog) = raw_targets(trace, config);
        TraceFeatures {
            inputs,
            uncertainty: unc
                .into_iter()
                .map(|v| (v - self.uncertainty_mean) / self.uncertainty_std)
                .collect(),
            progress: prog
                .into_iter()
                .map(|v| (v - self.progress_mean) / self.progress_std)
                .collect(),
        }
    }
}

/// Everything needed to run a trained proxy.
#[derive(Debug, Clone, PartialEq)]
pub struct HccModel {
    pub config: HccConfig,
    pub normalizer: Normalizer,
    pub params: HccParameters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Predicted last retained sentence.
    pub boundary: usize,
    pub cut_logits: Vec<f64>,
    pub delete_probs: Vec<f64>,
    /// Regression outputs in the original target units.
    pub uncertainty_estimate: Vec<f64>,
    pub progress_estimate: Vec<f64>,
}

/// Index of the largest value; ties go to the earliest index.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl HccModel {
    pub fn features(&self, trace: &TraceRecord) -> Result<TraceFeatures> {
        if trace.hidden.dim() != self.config.input_dim {
            return Err(Error::Dimension(format!(
                "trace {} has hidden dim {}, model expects {}",
                trace.id,
                trace.hidden.dim(),
                self.config.input_dim
            )));
        }
        Ok(self.normalizer.features(trace, &self.config))
    }

    pub fn predict(&self, trace: &TraceRecord) -> Result<Prediction> {
        let features = self.features(trace)?;
        let out = forward(&self.params, &self.config, &features, Mode::Infer)?;
        let n = &self.normalizer;
        Ok(Prediction {
            boundary: argmax_first(&out.cut_logits),
            delete_probs: out.delete_probs,
            uncertainty_estimate: out
                .uncertainty_estimate
                .iter()
                .map(|v| v * n.uncertainty_std + n.uncertainty_mean)
                .collect(),
            progress_estimate: out
                .progress_estimate
                .iter()
                .map(|v| v * n.progress_std + n.progress_mean)
                .collect(),
            cut_logits: out.cut_logits,
        })
    }

    pub fn predict_corpus(&self, corpus: &Corpus) -> Result<Vec<Prediction>> {
        corpus.traces.par_iter().map(|t| self.predict(t)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub cut: f64,
    pub delete: f64,
    pub kl: f64,
    pub uncertainty: f64,
    pub progress: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: HccModel,
    pub history: Vec<EpochRecord>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

pub fn targets_from(annotation: &EditorAnnotation) -> TraceTargets {
    TraceTargets {
        boundary: annotation.boundary,
        labels: annotation.labels.clone(),
    }
}

/// Fit the proxy on every trace of `corpus`; all traces must be annotated.
pub fn train(corpus: &Corpus, config: &HccConfig) -> Result<TrainOutcome> {
    if corpus.traces.is_empty() {
        return Err(Error::Insufficient("training corpus is empty".into()));
    }
    let mut config = config.clone();
    if config.input_dim == 0 {
        config.input_dim = corpus.meta.dim;
    } else if config.input_dim != corpus.meta.dim {
        return Err(Error::Dimension(format!(
            "config input_dim {} but corpus dim {}",
            config.input_dim, corpus.meta.dim
        )));
    }
    config.validate()?;
    let mut annotated = Vec::with_capacity(corpus.traces.len());
    for trace in &corpus.traces {
        let ann = corpus
            .annotation(&trace.id)
            .ok_or_else(|| Error::InvalidTrace {
                id: trace.id.clone(),
                message: "no editor annotation".into(),
            })?;
        annotated.push((trace, ann));
    }
    let traces: Vec<&TraceRecord> = annotated.iter().map(|(t, _)| *t).collect();
    let normalizer = Normalizer::fit(&traces, &config);
    let examples: Vec<(TraceFeatures, TraceTargets)> = annotated
        .par_iter()
        .map(|(t, a)| (normalizer.features(t, &config), targets_from(a)))
        .collect();

    let mut params = init_params(&config, config.seed)?;
    let mut adam = Adam::new(params.len());
    let shuffle_seed = rng::derive_seed(config.seed, 1);
    let noise_seed = rng::derive_seed(config.seed, 2);
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..examples.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng::stream(shuffle_seed, epoch as u64));
        let epoch_seed = rng::derive_seed(noise_seed, epoch as u64);
        let mut sum = LossBreakdown::default();
        for batch in order.chunks(config.batch_size) {
            let results: Vec<Result<(LossBreakdown, HccParameters)>> = batch
                .par_iter()
                .map(|&i| {
                    let (f, t) = &examples[i];
                    let mode = Mode::Train(rng::derive_seed(epoch_seed, i as u64));
                    gradients(&params, &config, f, t, mode)
                })
                .collect();
            let mut total = HccParameters::zeros(&config);
            for (&i, r) in batch.iter().zip(results) {
                let non_finite = || Error::NonFiniteLoss {
                    epoch,
                    id: traces[i].id.clone(),
                };
                let (l, g) = match r {
                    Ok(v) => v,
                    Err(Error::NonFinite { .. }) => return Err(non_finite()),
                    Err(e) => return Err(e),
                };
                if !l.total.is_finite() || !g.all_finite() {
                    return Err(non_finite());
                }
                sum.cut += l.cut;
                sum.delete += l.delete;
                sum.kl += l.kl;
                sum.uncertainty += l.uncertainty;
                sum.progress += l.progress;
                sum.total += l.total;
                total.add_assign(&g);
            }
            total.scale(1.0 / batch.len() as f64);
            let norm = total.norm();
            if config.grad_clip > 0.0 && norm > config.grad_clip {
                total.scale(config.grad_clip / norm);
            }
            adam.update(
                params.as_mut_slice(),
                total.as_slice(),
                config.learning_rate,
            );
        }
        let n = examples.len() as f64;
        history.push(EpochRecord {
            epoch: epoch + 1,
            cut: sum.cut / n,
            delete: sum.delete / n,
            kl: sum.kl / n,
            uncertainty: sum.uncertainty / n,
            progress: sum.progress / n,
            total: sum.total / n,
        });
    }
    Ok(TrainOutcome {
        model: HccModel {
            config,
            normalizer,
            params,
        },
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_first() {
        assert_eq!(argmax_first(&[0.0, 3.0, 1.0]), 1);
        assert_eq!(argmax_first(&[0.0, 1.0, 5.0, 2.0, 5.0]), 2);
        assert_eq!(argmax_first(&[7.0]), 0);
    }

    #[test]
    fn argmax_shift_invariant() {
        let v = [0.3, -1.2, 2.5, 2.4];
        let shifted: Vec<f64> = v.iter().map(|x| x + 100.0).collect();
        assert_eq!(argmax_first(&v), argmax_first(&shifted));
    }
}
