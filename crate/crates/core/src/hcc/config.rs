use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{GeometryMetric, DEFAULT_EPSILON};
use crate::kv::KvMap;

/// Per-sentence uncertainty quantity regressed by the uncertainty head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UncertaintyTarget {
    SentenceNll,
    SentenceEntropy,
}

impl UncertaintyTarget {
    pub fn name(self) -> &'static str {
        match self {
            UncertaintyTarget::SentenceNll => "sentence_nll",
            UncertaintyTarget::SentenceEntropy => "sentence_entropy",
        }
    }
}

impl FromStr for UncertaintyTarget {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sentence_nll" => Ok(UncertaintyTarget::SentenceNll),
            "sentence_entropy" => Ok(UncertaintyTarget::SentenceEntropy),
            _ => Err(format!(
                "expected sentence_nll or sentence_entropy, got {s}"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HccConfig {
    /// Hidden-state width; 0 means "take it from the training corpus".
    pub input_dim: usize,
    pub encoder_dim: usize,
    /// Run the recurrence in both directions, each with `encoder_dim / 2` units.
    pub bidirectional: bool,
    pub latent_dim: usize,
    pub context_dim: usize,
    pub lambda_del: f64,
    pub lambda_kl: f64,
    pub lambda_ent: f64,
    pub lambda_geo: f64,
    pub huber_delta: f64,
    pub logvar_min: f64,
    pub logvar_max: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub uncertainty_target: UncertaintyTarget,
    pub progress_target: GeometryMetric,
    pub epsilon: f64,
}

impl Default for HccConfig {
    fn default() -> Self {
        HccConfig {
            input_dim: 0,
            encoder_dim: 256,
            bidirectional: true,
            latent_dim: 16,
            context_dim: 32,
            lambda_del: 1.0,
            lambda_kl: 0.01,
            lambda_ent: 0.1,
            lambda_geo: 0.1,
            huber_delta: 1.0,
            logvar_min: -8.0,
            logvar_max: 8.0,
            learning_rate: 2e-3,
            epochs: 30,
            batch_size: 8,
            seed: 0,
            grad_clip: 5.0,
            uncertainty_target: UncertaintyTarget::SentenceNll,
            progress_target: GeometryMetric::ProgressPerToken,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

const KEYS: &[&str] = &[
    "input_dim",
    "encoder_dim",
    "bidirectional",
    "latent_dim",
    "context_dim",
    "lambda_del",
    "lambda_kl",
    "lambda_ent",
    "lambda_geo",
    "huber_delta",
    "logvar_min",
    "logvar_max",
    "learning_rate",
    "epochs",
    "batch_size",
    "seed",
    "grad_clip",
    "uncertainty_target",
    "progress_target",
    "epsilon",
];

impl HccConfig {
    /// Units per recurrence direction.
    pub fn units(&self) -> usize {
        if self.bidirectional {
            self.encoder_dim / 2
        } else {
            self.encoder_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.input_dim == 0
            || self.encoder_dim == 0
            || self.latent_dim == 0
            || self.context_dim == 0
        {
            return fail("all dimensions must be positive".into());
        }
        if self.bidirectional && !self.encoder_dim.is_multiple_of(2) {
            return fail(format!(
                "bidirectional encoder_dim must be even, got {}",
                self.encoder_dim
            ));
        }
        let lambdas = [
            self.lambda_del,
            self.lambda_kl,
            self.lambda_ent,
            self.lambda_geo,
        ];
        if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return fail("loss weights must be finite and non-negative".into());
        }
        if !(self.huber_delta.is_finite() && self.huber_delta > 0.0) {
            return fail("huber_delta must be positive".into());
        }
        if self.logvar_min.partial_cmp(&self.logvar_max) != Some(std::cmp::Ordering::Less) {
            return fail("logvar_min must be below logvar_max".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail("learning_rate must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            return fail("grad_clip must be non-negative".into());
        }
        if self.progress_target == GeometryMetric::Curvature {
            return fail("curvature is undefined at t = 1 and cannot be a progress target".into());
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return fail("epsilon must be positive".into());
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("input_dim", &self.input_dim);
        put("encoder_dim", &self.encoder_dim);
        put("bidirectional", &self.bidirectional);
        put("latent_dim", &self.latent_dim);
        put("context_dim", &self.context_dim);
        put("lambda_del", &self.lambda_del);
        put("lambda_kl", &self.lambda_kl);
        put("lambda_ent", &self.lambda_ent);
        put("lambda_geo", &self.lambda_geo);
        put("huber_delta", &self.huber_delta);
        put("logvar_min", &self.logvar_min);
        put("logvar_max", &self.logvar_max);
        put("learning_rate", &self.learning_rate);
        put("epochs", &self.epochs);
        put("batch_size", &self.batch_size);
        put("seed", &self.seed);
        put("grad_clip", &self.grad_clip);
        put("uncertainty_target", &self.uncertainty_target.name());
        put("progress_target", &self.progress_target.name());
        put("epsilon", &self.epsilon);
        s
    }

    /// Apply the keys present in `kv` on top of `self`.
    pub fn merge_kv(mut self, kv: &KvMap) -> Result<Self> {
        kv.check_keys(KEYS)?;
        kv.apply("input_dim", &mut self.input_dim)?;
        kv.apply("encoder_dim", &mut self.encoder_dim)?;
        kv.apply("bidirectional", &mut self.bidirectional)?;
        kv.apply("latent_dim", &mut self.latent_dim)?;
        kv.apply("context_dim", &mut self.context_dim)?;
        kv.apply("lambda_del", &mut self.lambda_del)?;
        kv.apply("lambda_kl", &mut self.lambda_kl)?;
        kv.apply("lambda_ent", &mut self.lambda_ent)?;
        kv.apply("lambda_geo", &mut self.lambda_geo)?;
        kv.apply("huber_delta", &mut self.huber_delta)?;
        kv.apply("logvar_min", &mut self.logvar_min)?;
        kv.apply("logvar_max", &mut self.logvar_max)?;
        kv.apply("learning_rate", &mut self.learning_rate)?;
        kv.apply("epochs", &mut self.epochs)?;
        kv.apply("batch_size", &mut self.batch_size)?;
        kv.apply("seed", &mut self.seed)?;
        kv.apply("grad_clip", &mut self.grad_clip)?;
        kv.apply("uncertainty_target", &mut self.uncertainty_target)?;
        if let Some(name) = kv.get::<String>("progress_target")? {
            self.progress_target = GeometryMetric::from_name(&name)
                .ok_or_else(|| Error::Config(format!("unknown progress_target {name}")))?;
        }
        kv.apply("epsilon", &mut self.epsilon)?;
        Ok(self)
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        HccConfig::default().merge_kv(kv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let c = HccConfig {
            input_dim: 6,
            lambda_kl: 0.125,
            learning_rate: 3.3e-4,
            seed: u64::MAX,
            progress_target: GeometryMetric::Efficiency,
            uncertainty_target: UncertaintyTarget::SentenceEntropy,
            bidirectional: false,
            ..HccConfig::default()
        };
        let back = HccConfig::from_kv(&KvMap::parse(&c.to_kv()).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_configs() {
        let ok = HccConfig {
            input_dim: 4,
            ..HccConfig::default()
        };
        assert!(ok.validate().is_ok());
        assert!(HccConfig::default().validate().is_err());
        for bad in [
            HccConfig {
                lambda_del: -1.0,
                ..ok.clone()
            },
            HccConfig {
                logvar_min: 8.0,
                ..ok.clone()
            },
            HccConfig {
                encoder_dim: 7,
                ..ok.clone()
            },
            HccConfig {
                huber_delta: 0.0,
                ..ok.clone()
            },
            HccConfig {
                progress_target: GeometryMetric::Curvature,
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
        assert!(HccConfig::from_kv(&KvMap::parse("bogus = 1").unwrap()).is_err());
    }
}
