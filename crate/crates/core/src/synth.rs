//! Synthetic corpora with planted post-conclusion boundaries.
//!
//! Retained sentences push the hidden state along a per-trace direction with
//! little noise, become cheaper to predict and lower the answer NLL. Removed
//! sentences move an attenuated distance with more isotropic noise, carry
//! higher token NLL/entropy and raise the answer NLL. All of this holds in
//! expectation only; individual sentences from the two groups overlap.

use std::fmt::Write as _;

use crate::corpus::{
    AnswerScore, Corpus, EditorAnnotation, HiddenTrack, SentenceRecord, TokenScore, TraceRecord,
};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub traces: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub dim: usize,
    /// Planted boundary as a fraction of T, drawn uniformly from this range.
    pub boundary_min_frac: f64,
    pub boundary_max_frac: f64,
    /// Mean step length of retained sentences along the progress direction.
    pub drift: f64,
    /// Per-trace drift is `drift * (1 + U(-jitter, jitter))`.
    pub drift_jitter: f64,
    /// How far each trace's direction strays from the corpus direction.
    pub direction_spread: f64,
    /// Per-coordinate noise of retained steps.
    pub noise: f64,
    /// Drift multiplier for removed steps, in (0, 1).
    pub attenuation: f64,
    /// Per-coordinate noise of removed steps.
    pub removed_noise: f64,
    pub initial_state_scale: f64,
    pub retained_nll: f64,
    pub removed_nll: f64,
    pub retained_entropy: f64,
    pub removed_entropy: f64,
    pub answer_nll_start: f64,
    pub answer_nll_decrease: f64,
    pub answer_nll_increase: f64,
    pub answer_noise: f64,
    /// Answer entropy is this multiple of the answer NLL, plus noise.
    pub answer_entropy_ratio: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            traces: 200,
            min_sentences: 12,
            max_sentences: 40,
            dim: 32,
            boundary_min_frac: 0.5,
            boundary_max_frac: 0.9,
            drift: 1.0,
            drift_jitter: 0.4,
            direction_spread: 0.5,
            noise: 0.05,
            attenuation: 0.3,
            removed_noise: 0.1,
            initial_state_scale: 1.0,
            retained_nll: 0.8,
            removed_nll: 1.3,
            retained_entropy: 1.0,
            removed_entropy: 1.5,
            answer_nll_start: 3.0,
            answer_nll_decrease: 0.06,
            answer_nll_increase: 0.04,
            answer_noise: 0.02,
            answer_entropy_ratio: 0.6,
            min_tokens: 8,
            max_tokens: 40,
            seed: 0,
        }
    }
}

const KEYS: &[&str] = &[
    "traces",
    "min_sentences",
    "max_sentences",
    "dim",
    "boundary_min_frac",
    "boundary_max_frac",
    "drift",
    "drift_jitter",
    "direction_spread",
    "noise",
    "attenuation",
    "removed_noise",
    "initial_state_scale",
    "retained_nll",
    "removed_nll",
    "retained_entropy",
    "removed_entropy",
    "answer_nll_start",
    "answer_nll_decrease",
    "answer_nll_increase",
    "answer_noise",
    "answer_entropy_ratio",
    "min_tokens",
    "max_tokens",
    "seed",
];

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.min_sentences < 4 {
            return fail(format!(
                "min_sentences must be >= 4, got {}",
                self.min_sentences
            ));
        }
        if self.min_sentences > self.max_sentences {
            return fail(format!(
                "min_sentences {} exceeds max_sentences {}",
                self.min_sentences, self.max_sentences
            ));
        }
        if self.dim == 0 {
            return fail("dim must be positive".into());
        }
        if !(0.0 < self.boundary_min_frac
            && self.boundary_min_frac <= self.boundary_max_frac
            && self.boundary_max_frac < 1.0)
        {
            return fail("boundary fractions must satisfy 0 < min <= max < 1".into());
        }
        if !(0.0 < self.attenuation && self.attenuation < 1.0) {
            return fail(format!(
                "attenuation must lie in (0, 1), got {}",
                self.attenuation
            ));
        }
        if self.removed_nll <= self.retained_nll || self.removed_entropy <= self.retained_entropy {
            return fail("removed NLL/entropy levels must exceed retained levels".into());
        }
        if self.retained_nll <= 0.0 || self.retained_entropy <= 0.0 {
            return fail("sentence NLL/entropy levels must be positive".into());
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return fail("token range must satisfy 0 < min_tokens <= max_tokens".into());
        }
        if !(0.0..1.0).contains(&self.drift_jitter) {
            return fail("drift_jitter must lie in [0, 1)".into());
        }
        let nonneg = [
            self.drift,
            self.direction_spread,
            self.noise,
            self.removed_noise,
            self.initial_state_scale,
            self.answer_nll_start,
            self.answer_nll_decrease,
            self.answer_nll_increase,
            self.answer_noise,
            self.answer_entropy_ratio,
        ];
        if nonneg.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return fail("scales and levels must be finite and non-negative".into());
        }
        Ok(())
    }

    /// Every field as `key = value`, in declaration order.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("traces", self.traces.to_string());
        put("min_sentences", self.min_sentences.to_string());
        put("max_sentences", self.max_sentences.to_string());
        put("dim", self.dim.to_string());
        put("boundary_min_frac", self.boundary_min_frac.to_string());
        put("boundary_max_frac", self.boundary_max_frac.to_string());
        put("drift", self.drift.to_string());
        put("drift_jitter", self.drift_jitter.to_string());
        put("direction_spread", self.direction_spread.to_string());
        put("noise", self.noise.to_string());
        put("attenuation", self.attenuation.to_string());
        put("removed_noise", self.removed_noise.to_string());
        put("initial_state_scale", self.initial_state_scale.to_string());
        put("retained_nll", self.retained_nll.to_string());
        put("removed_nll", self.removed_nll.to_string());
        put("retained_entropy", self.retained_entropy.to_string());
        put("removed_entropy", self.removed_entropy.to_string());
        put("answer_nll_start", self.answer_nll_start.to_string());
        put("answer_nll_decrease", self.answer_nll_decrease.to_string());
        put("answer_nll_increase", self.answer_nll_increase.to_string());
        put("answer_noise", self.answer_noise.to_string());
        put(
            "answer_entropy_ratio",
            self.answer_entropy_ratio.to_string(),
        );
        put("min_tokens", self.min_tokens.to_string());
        put("max_tokens", self.max_tokens.to_string());
        put("seed", self.seed.to_string());
        s
    }

    /// Defaults overridden by whatever keys `kv` carries.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        kv.check_keys(KEYS)?;
        let mut c = SynthConfig::default();
        kv.apply("traces", &mut c.traces)?;
        kv.apply("min_sentences", &mut c.min_sentences)?;
        kv.apply("max_sentences", &mut c.max_sentences)?;
        kv.apply("dim", &mut c.dim)?;
        kv.apply("boundary_min_frac", &mut c.boundary_min_frac)?;
        kv.apply("boundary_max_frac", &mut c.boundary_max_frac)?;
        kv.apply("drift", &mut c.drift)?;
        kv.apply("drift_jitter", &mut c.drift_jitter)?;
        kv.apply("direction_spread", &mut c.direction_spread)?;
        kv.apply("noise", &mut c.noise)?;
        kv.apply("attenuation", &mut c.attenuation)?;
        kv.apply("removed_noise", &mut c.removed_noise)?;
        kv.apply("initial_state_scale", &mut c.initial_state_scale)?;
        kv.apply("retained_nll", &mut c.retained_nll)?;
        kv.apply("removed_nll", &mut c.removed_nll)?;
        kv.apply("retained_entropy", &mut c.retained_entropy)?;
        kv.apply("removed_entropy", &mut c.removed_entropy)?;
        kv.apply("answer_nll_start", &mut c.answer_nll_start)?;
        kv.apply("answer_nll_decrease", &mut c.answer_nll_decrease)?;
        kv.apply("answer_nll_increase", &mut c.answer_nll_increase)?;
        kv.apply("answer_noise", &mut c.answer_noise)?;
        kv.apply("answer_entropy_ratio", &mut c.answer_entropy_ratio)?;
        kv.apply("min_tokens", &mut c.min_tokens)?;
        kv.apply("max_tokens", &mut c.max_tokens)?;
        kv.apply("seed", &mut c.seed)?;
        Ok(c)
    }
}

/// Report header: a comment line followed by the machine-readable fields.
pub fn describe(config: &SynthConfig) -> String {
    format!(
        "# synthetic corpus: {} traces, T in [{}, {}], dim {}, seed {}\n{}",
        config.traces,
        config.min_sentences,
        config.max_sentences,
        config.dim,
        config.seed,
        config.to_kv()
    )
}

fn unit_vector(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

pub fn generate(config: &SynthConfig) -> Result<Corpus> {
    config.validate()?;
    let dim = config.dim;
    let mut base = rng::stream(config.seed, 0);
    let mut corpus_dir: Vec<f64> = (0..dim).map(|_| rng::normal(&mut base)).collect();
    unit_vector(&mut corpus_dir);

    let mut corpus = Corpus::empty(format!("synth-seed-{}", config.seed), dim);
    let width = config.traces.max(1).to_string().len();
    for i in 0..config.traces {
        let id = format!("synth-{i:0width$}");
        let mut r = rng::stream(config.seed, i as u64 + 1);
        let (trace, boundary) = generate_trace(config, &corpus_dir, id, &mut r)?;
        corpus.annotations.insert(
            trace.id.clone(),
            EditorAnnotation::from_boundary(boundary, trace.len())?,
        );
        corpus.traces.push(trace);
    }
    Ok(corpus)
}

fn generate_trace<R: rand::RngCore>(
    c: &SynthConfig,
    corpus_dir: &[f64],
    id: String,
    r: &mut R,
) -> Result<(TraceRecord, usize)> {
    let dim = c.dim;
    let len = rng::int_inclusive(r, c.min_sentences, c.max_sentences);
    let frac = rng::uniform(r, c.boundary_min_frac, c.boundary_max_frac);
    let boundary = ((frac * len as f64).round() as usize).clamp(1, len - 1);

    let spread = c.direction_spread / (dim as f64).sqrt();
    let mut dir: Vec<f64> = corpus_dir
        .iter()
        .map(|&x| x + spread * rng::normal(r))
        .collect();
    unit_vector(&mut dir);
    let drift = c.drift * (1.0 + rng::uniform(r, -c.drift_jitter, c.drift_jitter));

    let mut state: Vec<f64> = (0..dim)
        .map(|_| c.initial_state_scale * rng::normal(r))
        .collect();
    let mut rows = Vec::with_capacity(len + 1);
    rows.push(state.clone());
    let mut sentences = Vec::with_capacity(len);
    let mut answer_nll = c.answer_nll_start;
    let mut answer_scores = Vec::with_capacity(len + 1);
    let answer_score = |prefix: usize, nll: f64, r: &mut R| AnswerScore {
        prefix,
        nll,
        entropy: (c.answer_entropy_ratio * nll + c.answer_noise * rng::normal(r)).max(0.0),
    };
    answer_scores.push(answer_score(0, answer_nll, r));

    for t in 1..=len {
        let retained = t <= boundary;
        let (step, noise, nll_level, ent_level) = if retained {
            (drift, c.noise, c.retained_nll, c.retained_entropy)
        } else {
            (
                drift * c.attenuation,
                c.removed_noise,
                c.removed_nll,
                c.removed_entropy,
            )
        };
        for (s, d) in state.iter_mut().zip(&dir) {
            *s += step * d + noise * rng::normal(r);
        }
        rows.push(state.clone());

        let tokens = rng::int_inclusive(r, c.min_tokens, c.max_tokens);
        let token_scores = (0..tokens)
            .map(|_| TokenScore {
                // exponential with mean nll_level, as a non-positive log-prob
                logprob: nll_level * (1.0 - rng::unit(r)).ln(),
                entropy: ent_level * rng::uniform(r, 0.5, 1.5),
            })
            .collect();
        sentences.push(SentenceRecord::new(
            format!("Synthetic reasoning step {t}."),
            token_scores,
        ));

        let trend = if retained {
            -c.answer_nll_decrease
        } else {
            c.answer_nll_increase
        };
        answer_nll = (answer_nll + trend + c.answer_noise * rng::normal(r)).max(0.0);
        answer_scores.push(answer_score(t, answer_nll, r));
    }

    let answer = rng::int_inclusive(r, 1, 999);
    Ok((
        TraceRecord {
            question: format!("Synthetic question for {id}?"),
            id,
            sentences,
            final_answer: format!("The answer is \\boxed{{{answer}}}."),
            answer_token_count: 6,
            answer_scores,
            hidden: HiddenTrack::from_rows(&rows)?,
        },
        boundary,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_trace;

    fn small() -> SynthConfig {
        SynthConfig {
            traces: 20,
            seed: 5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = SynthConfig { seed: 6, ..small() };
        assert_ne!(generate(&small()).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn every_trace_is_valid_and_annotated() {
        let c = generate(&small()).unwrap();
        assert_eq!(c.traces.len(), 20);
        for t in &c.traces {
            assert!(validate_trace(t).is_empty(), "{:?}", validate_trace(t));
            let a = c.annotation(&t.id).unwrap();
            assert!(a.boundary >= 1 && a.boundary < t.len());
            assert!((12..=40).contains(&t.len()));
        }
    }

    #[test]
    fn infeasible_configs_rejected() {
        let bad = [
            SynthConfig {
                min_sentences: 50,
                ..small()
            },
            SynthConfig {
                min_sentences: 3,
                max_sentences: 3,
                ..small()
            },
            SynthConfig {
                attenuation: 1.0,
                ..small()
            },
            SynthConfig {
                removed_nll: 0.5,
                ..small()
            },
        ];
        for c in bad {
            assert!(generate(&c).is_err());
        }
    }

    #[test]
    fn describe_round_trips_and_names_seed() {
        let c = SynthConfig {
            seed: 123456789,
            drift: 0.7,
            ..SynthConfig::default()
        };
        let text = describe(&c);
        assert!(text.contains("seed = 123456789"));
        for key in KEYS {
            assert!(text.contains(&format!("{key} = ")), "{key}");
        }
        let back = SynthConfig::from_kv(&KvMap::parse(&text).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
