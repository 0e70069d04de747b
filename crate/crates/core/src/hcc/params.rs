//! Named parameter tensors stored in one flat buffer.

use crate::error::{Error, Result};
use crate::rng;

use super::config::HccConfig;

/// Tensor ids, in storage order.
pub mod tensor {
    pub const ENC_FWD_W: usize = 0;
    pub const ENC_FWD_U: usize = 1;
    pub const ENC_FWD_B: usize = 2;
    pub const ENC_BWD_W: usize = 3;
    pub const ENC_BWD_U: usize = 4;
    pub const ENC_BWD_B: usize = 5;
    pub const POST_MU_W: usize = 6;
    pub const POST_MU_B: usize = 7;
    pub const POST_LV_W: usize = 8;
    pub const POST_LV_B: usize = 9;
    pub const PRIOR_MU_W: usize = 10;
    pub const PRIOR_MU_B: usize = 11;
    pub const PRIOR_LV_W: usize = 12;
    pub const PRIOR_LV_B: usize = 13;
    pub const PRIOR0_MU: usize = 14;
    pub const PRIOR0_LV: usize = 15;
    pub const LAT_W: usize = 16;
    pub const LAT_B: usize = 17;
    pub const ENT_W: usize = 18;
    pub const ENT_B: usize = 19;
    pub const ENT_V: usize = 20;
    pub const ENT_C: usize = 21;
    pub const GEO_W: usize = 22;
    pub const GEO_B: usize = 23;
    pub const GEO_V: usize = 24;
    pub const GEO_C: usize = 25;
    pub const ALPHA_GEO: usize = 26;
    pub const ALPHA_ENT: usize = 27;
    pub const LN_SCALE: usize = 28;
    pub const LN_SHIFT: usize = 29;
    pub const M0: usize = 30;
    pub const CUT_W: usize = 31;
    pub const CUT_B: usize = 32;
    pub const DEL_W: usize = 33;
    pub const DEL_B: usize = 34;
    pub const COUNT: usize = 35;

    pub const NAMES: [&str; COUNT] = [
        "encoder.fwd.w",
        "encoder.fwd.u",
        "encoder.fwd.b",
        "encoder.bwd.w",
        "encoder.bwd.u",
        "encoder.bwd.b",
        "posterior.mu.w",
        "posterior.mu.b",
        "posterior.logvar.w",
        "posterior.logvar.b",
        "prior.mu.w",
        "prior.mu.b",
        "prior.logvar.w",
        "prior.logvar.b",
        "prior.initial.mu",
        "prior.initial.logvar",
        "latent.w",
        "latent.b",
        "uncertainty.w",
        "uncertainty.b",
        "uncertainty.v",
        "uncertainty.c",
        "progress.w",
        "progress.b",
        "progress.v",
        "progress.c",
        "gate.progress",
        "gate.uncertainty",
        "norm.scale",
        "norm.shift",
        "start_state",
        "cut.w",
        "cut.b",
        "delete.w",
        "delete.b",
    ];

    /// Tensors that only feed the auxiliary regression and KL losses.
    pub const AUXILIARY_ONLY: [usize; 10] = [
        PRIOR_MU_W, PRIOR_MU_B, PRIOR_LV_W, PRIOR_LV_B, PRIOR0_MU, PRIOR0_LV, ENT_V, ENT_C, GEO_V,
        GEO_C,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorShape {
    pub rows: usize,
    pub cols: usize,
}

impl TensorShape {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Shape of every tensor implied by a config. The backward-direction encoder
/// tensors have zero rows when the encoder is unidirectional.
pub fn layout(config: &HccConfig) -> Vec<TensorShape> {
    use tensor::*;
    let d = config.input_dim;
    let h = config.units();
    let hb = if config.bidirectional { h } else { 0 };
    let e = config.encoder_dim;
    let l = config.latent_dim;
    let c = config.context_dim;
    let s = |rows, cols| TensorShape { rows, cols };
    let mut out = vec![s(0, 0); COUNT];
    out[ENC_FWD_W] = s(3 * h, d);
    out[ENC_FWD_U] = s(3 * h, h);
    out[ENC_FWD_B] = s(3 * h, 1);
    out[ENC_BWD_W] = s(3 * hb, d);
    out[ENC_BWD_U] = s(3 * hb, hb);
    out[ENC_BWD_B] = s(3 * hb, 1);
    for (w, b) in [
        (POST_MU_W, POST_MU_B),
        (POST_LV_W, POST_LV_B),
        (PRIOR_MU_W, PRIOR_MU_B),
        (PRIOR_LV_W, PRIOR_LV_B),
    ] {
        out[w] = s(l, e);
        out[b] = s(l, 1);
    }
    out[PRIOR0_MU] = s(l, 1);
    out[PRIOR0_LV] = s(l, 1);
    out[LAT_W] = s(c, l);
    out[LAT_B] = s(c, 1);
    for (w, b, v, k) in [(ENT_W, ENT_B, ENT_V, ENT_C), (GEO_W, GEO_B, GEO_V, GEO_C)] {
        out[w] = s(c, e);
        out[b] = s(c, 1);
        out[v] = s(c, 1);
        out[k] = s(1, 1);
    }
    out[ALPHA_GEO] = s(1, 1);
    out[ALPHA_ENT] = s(1, 1);
    out[LN_SCALE] = s(c, 1);
    out[LN_SHIFT] = s(c, 1);
    out[M0] = s(c, 1);
    out[CUT_W] = s(c, 1);
    out[CUT_B] = s(1, 1);
    out[DEL_W] = s(c, 1);
    out[DEL_B] = s(1, 1);
    out
}

/// All learnable weights. Gradients use the same type and layout.
#[derive(Debug, Clone, PartialEq)]
pub struct HccParameters {
    shapes: Vec<TensorShape>,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl HccParameters {
    pub fn zeros(config: &HccConfig) -> Self {
        Self::from_shapes(layout(config))
    }

    fn from_shapes(shapes: Vec<TensorShape>) -> Self {
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut total = 0;
        for s in &shapes {
            offsets.push(total);
            total += s.len();
        }
        HccParameters {
            shapes,
            offsets,
            values: vec![0.0; total],
        }
    }

    /// Rebuild from a stored shape table, checking it against `config`.
    pub fn from_parts(
        config: &HccConfig,
        shapes: Vec<TensorShape>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let expected = layout(config);
        if shapes != expected {
            return Err(Error::Checkpoint(
                "shape table inconsistent with config".into(),
            ));
        }
        let mut p = Self::from_shapes(shapes);
        if values.len() != p.values.len() {
            return Err(Error::Checkpoint(format!(
                "shape table implies {} weights, found {}",
                p.values.len(),
                values.len()
            )));
        }
        p.values = values;
        Ok(p)
    }

    pub fn shapes(&self) -> &[TensorShape] {
        &self.shapes
    }

    pub fn shape(&self, id: usize) -> TensorShape {
        self.shapes[id]
    }

    pub fn get(&self, id: usize) -> &[f64] {
        let o = self.offsets[id];
        &self.values[o..o + self.shapes[id].len()]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut [f64] {
        let o = self.offsets[id];
        let n = self.shapes[id].len();
        &mut self.values[o..o + n]
    }

    pub fn scalar(&self, id: usize) -> f64 {
        self.get(id)[0]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// (tensor id, index within tensor) for a flat position.
    pub fn locate(&self, flat: usize) -> (usize, usize) {
        let id = (0..self.shapes.len())
            .find(|&i| self.offsets[i] <= flat && flat < self.offsets[i] + self.shapes[i].len())
            .expect("flat index within parameters");
        (id, flat - self.offsets[id])
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &HccParameters) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.values.iter_mut().for_each(|v| *v *= k);
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Weights and biases uniform in `±1/sqrt(fan_in)`, where `fan_in` is the
/// width of the input the tensor multiplies (1 for free vectors). The initial
/// prior starts at a standard normal, gates at 1, the normalization affine at
/// identity.
pub fn init_params(config: &HccConfig, seed: u64) -> Result<HccParameters> {
    use tensor::*;
    config.validate()?;
    let mut p = HccParameters::zeros(config);
    let h = config.units();
    let fan_in = |id: usize| -> usize {
        match id {
            ENC_FWD_W | ENC_FWD_U | ENC_FWD_B | ENC_BWD_W | ENC_BWD_U | ENC_BWD_B => h,
            POST_MU_W | POST_MU_B | POST_LV_W | POST_LV_B | PRIOR_MU_W | PRIOR_MU_B
            | PRIOR_LV_W | PRIOR_LV_B | ENT_W | ENT_B | GEO_W | GEO_B => config.encoder_dim,
            LAT_W | LAT_B => config.latent_dim,
            _ => config.context_dim,
        }
    };
    for id in 0..COUNT {
        let mut r = rng::stream(seed, id as u64);
        let fill = match id {
            PRIOR0_MU | PRIOR0_LV | LN_SHIFT => Some(0.0),
            ALPHA_GEO | ALPHA_ENT | LN_SCALE => Some(1.0),
            _ => None,
        };
        let k = 1.0 / (fan_in(id) as f64).sqrt();
        for v in p.get_mut(id) {
            *v = fill.unwrap_or_else(|| rng::uniform(&mut r, -k, k));
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> HccConfig {
        HccConfig {
            input_dim: 6,
            encoder_dim: 8,
            latent_dim: 8,
            context_dim: 8,
            ..HccConfig::default()
        }
    }

    #[test]
    fn init_deterministic_and_seed_sensitive() {
        let a = init_params(&cfg(), 1).unwrap();
        assert_eq!(a, init_params(&cfg(), 1).unwrap());
        assert_ne!(a, init_params(&cfg(), 2).unwrap());
        assert!(a.all_finite());
    }

    #[test]
    fn shapes_follow_config() {
        use tensor::*;
        let p = init_params(&cfg(), 0).unwrap();
        assert_eq!(p.shape(ENC_FWD_W), TensorShape { rows: 12, cols: 6 });
        assert_eq!(p.shape(ENC_FWD_U), TensorShape { rows: 12, cols: 4 });
        assert_eq!(p.shape(POST_MU_W), TensorShape { rows: 8, cols: 8 });
        assert_eq!(p.shape(LAT_W), TensorShape { rows: 8, cols: 8 });
        let gru = 2 * (12 * 6 + 12 * 4 + 12);
        let heads = 4 * (8 * 8 + 8) + 2 * 8 + (8 * 8 + 8) + 2 * (8 * 8 + 8 + 8 + 1);
        let fusion = 2 + 3 * 8 + 2 * (8 + 1);
        assert_eq!(p.len(), gru + heads + fusion);
        assert_eq!(p.get(ALPHA_GEO), &[1.0]);
        assert!(p.get(LN_SCALE).iter().all(|&v| v == 1.0));
        assert!(p.get(LN_SHIFT).iter().all(|&v| v == 0.0));

        let uni = HccConfig {
            bidirectional: false,
            ..cfg()
        };
        let q = init_params(&uni, 0).unwrap();
        assert!(q.shape(ENC_BWD_U).is_empty());
        assert_eq!(q.shape(ENC_FWD_U), TensorShape { rows: 24, cols: 8 });
    }

    #[test]
    fn locate_skips_empty_tensors() {
        let uni = HccConfig {
            bidirectional: false,
            ..cfg()
        };
        let p = init_params(&uni, 0).unwrap();
        let first_post = 24 * 6 + 24 * 8 + 24;
        assert_eq!(p.locate(first_post), (tensor::POST_MU_W, 0));
        assert_eq!(p.locate(0), (tensor::ENC_FWD_W, 0));
    }
}
