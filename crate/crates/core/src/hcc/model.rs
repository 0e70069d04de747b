//! Forward pass, losses and reverse-mode gradients of the boundary proxy.

use crate::error::{Error, Result};
use crate::rng;

use super::config::HccConfig;
use super::params::{tensor::*, HccParameters};

/// Encoder inputs and normalized regression targets for one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFeatures {
    /// One row of `input_dim` values per sentence.
    pub inputs: Vec<Vec<f64>>,
    pub uncertainty: Vec<f64>,
    pub progress: Vec<f64>,
}

impl TraceFeatures {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceTargets {
    /// Last retained sentence, in `0..=T`.
    pub boundary: usize,
    /// Deletion label per sentence.
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Sample `z = mu + sigma * eta`; `eta` at step `t` comes from stream `t` of the seed.
    Train(u64),
    /// Use the posterior mean.
    Infer,
}

#[derive(Debug, Clone)]
struct GruStep {
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
    h: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct Cache {
    fwd: Vec<GruStep>,
    /// In processing order, i.e. `bwd[k]` is sentence `T - k`.
    bwd: Vec<GruStep>,
    eta: Vec<Vec<f64>>,
    post_logvar_raw: Vec<Vec<f64>>,
    prior_logvar_raw: Vec<Vec<f64>>,
    normed: Vec<Vec<f64>>,
    spread: Vec<f64>,
    delete_clamped: Vec<bool>,
}

/// Every intermediate of one forward pass. Per-sentence vectors are indexed
/// by `t - 1`; `fused` and `cut_logits` start at position 0.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub encoded: Vec<Vec<f64>>,
    pub post_mu: Vec<Vec<f64>>,
    pub post_logvar: Vec<Vec<f64>>,
    pub prior_mu: Vec<Vec<f64>>,
    pub prior_logvar: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub latent_context: Vec<Vec<f64>>,
    pub uncertainty_state: Vec<Vec<f64>>,
    pub uncertainty_estimate: Vec<f64>,
    pub progress_state: Vec<Vec<f64>>,
    pub progress_estimate: Vec<f64>,
    pub fused: Vec<Vec<f64>>,
    pub cut_logits: Vec<f64>,
    pub delete_probs: Vec<f64>,
    pub kl: Vec<f64>,
    cache: Cache,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub cut: f64,
    pub delete: f64,
    pub kl: f64,
    pub uncertainty: f64,
    pub progress: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn compose(
        cut: f64,
        delete: f64,
        kl: f64,
        uncertainty: f64,
        progress: f64,
        c: &HccConfig,
    ) -> Self {
        LossBreakdown {
            cut,
            delete,
            kl,
            uncertainty,
            progress,
            total: cut
                + c.lambda_del * delete
                + c.lambda_kl * kl
                + c.lambda_ent * uncertainty
                + c.lambda_geo * progress,
        }
    }
}

pub const DELETE_PROB_CLAMP: f64 = 1e-7;
const NORM_EPS: f64 = 1e-5;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out = W x + b` with `W` row-major of shape `out.len() x x.len()`.
fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(i, bi)| bi + dot(&w[i * cols..(i + 1) * cols], x))
        .collect()
}

/// `out += W^T v` with `W` of shape `v.len() x out.len()`.
fn matvec_t_acc(w: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        for (o, wij) in out.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
            *o += wij * vi;
        }
    }
}

/// `g += a b^T`.
fn outer_acc(g: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        for (gij, bj) in g[i * cols..(i + 1) * cols].iter_mut().zip(b) {
            *gij += ai * bj;
        }
    }
}

fn add_acc(g: &mut [f64], a: &[f64]) {
    for (x, y) in g.iter_mut().zip(a) {
        *x += y;
    }
}

fn scaled_acc(g: &mut [f64], k: f64, a: &[f64]) {
    for (x, y) in g.iter_mut().zip(a) {
        *x += k * y;
    }
}

pub fn huber(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        0.5 * r * r
    } else {
        delta * (r.abs() - 0.5 * delta)
    }
}

fn huber_grad(r: f64, delta: f64) -> f64 {
    r.clamp(-delta, delta)
}

/// Closed-form KL between diagonal Gaussians, summed over dimensions.
pub fn kl_gaussians(mu_q: &[f64], logvar_q: &[f64], mu_p: &[f64], logvar_p: &[f64]) -> f64 {
    let mut kl = 0.0;
    for i in 0..mu_q.len() {
        let d = mu_q[i] - mu_p[i];
        kl += 0.5
            * (logvar_p[i] - logvar_q[i] + (logvar_q[i].exp() + d * d) / logvar_p[i].exp() - 1.0);
    }
    // exact zero is the minimum; rounding can dip below it
    kl.max(0.0)
}

fn gru_run<'a>(
    w: &[f64],
    u: &[f64],
    b: &[f64],
    units: usize,
    inputs: impl Iterator<Item = &'a Vec<f64>>,
) -> Vec<GruStep> {
    let mut steps: Vec<GruStep> = Vec::new();
    let zero = vec![0.0; units];
    for x in inputs {
        let hp = steps.last().map_or(&zero, |s| &s.h);
        let gx = affine(w, b, x);
        let h2 = 2 * units;
        let gh: Vec<f64> = (0..h2)
            .map(|i| dot(&u[i * units..(i + 1) * units], hp))
            .collect();
        let z: Vec<f64> = (0..units).map(|i| sigmoid(gx[i] + gh[i])).collect();
        let r: Vec<f64> = (0..units)
            .map(|i| sigmoid(gx[units + i] + gh[units + i]))
            .collect();
        let rh: Vec<f64> = r.iter().zip(hp).map(|(a, b)| a * b).collect();
        let un = &u[h2 * units..];
        let n: Vec<f64> = (0..units)
            .map(|i| (gx[h2 + i] + dot(&un[i * units..(i + 1) * units], &rh)).tanh())
            .collect();
        let h = (0..units)
            .map(|i| (1.0 - z[i]) * n[i] + z[i] * hp[i])
            .collect();
        steps.push(GruStep { z, r, n, rh, h });
    }
    steps
}

/// Backpropagate through one recurrence step; returns the gradient with
/// respect to the previous hidden state.
#[allow(clippy::too_many_arguments)]
fn gru_step_backward(
    u: &[f64],
    step: &GruStep,
    hp: &[f64],
    x: &[f64],
    dh: &[f64],
    gw: &mut [f64],
    gu: &mut [f64],
    gb: &mut [f64],
) -> Vec<f64> {
    let units = dh.len();
    let h2 = 2 * units;
    let mut da = vec![0.0; 3 * units];
    let mut dhp: Vec<f64> = dh.iter().zip(&step.z).map(|(d, z)| d * z).collect();
    for i in 0..units {
        let dn = dh[i] * (1.0 - step.z[i]);
        let dz = dh[i] * (hp[i] - step.n[i]);
        da[i] = dz * step.z[i] * (1.0 - step.z[i]);
        da[h2 + i] = dn * (1.0 - step.n[i] * step.n[i]);
    }
    let mut drh = vec![0.0; units];
    matvec_t_acc(&u[h2 * units..], &da[h2..], &mut drh);
    for i in 0..units {
        let dr = drh[i] * hp[i];
        dhp[i] += drh[i] * step.r[i];
        da[units + i] = dr * step.r[i] * (1.0 - step.r[i]);
    }
    outer_acc(gw, &da, x);
    add_acc(gb, &da);
    outer_acc(&mut gu[..h2 * units], &da[..h2], hp);
    outer_acc(&mut gu[h2 * units..], &da[h2..], &step.rh);
    matvec_t_acc(&u[..h2 * units], &da[..h2], &mut dhp);
    dhp
}

fn check(values: &[f64], head: &'static str, step: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { head, step })
    }
}

fn check_features(config: &HccConfig, features: &TraceFeatures) -> Result<()> {
    let len = features.len();
    if len == 0 {
        return Err(Error::Dimension("trace has no sentences".into()));
    }
    if let Some(row) = features.inputs.iter().find(|r| r.len() != config.input_dim) {
        return Err(Error::Dimension(format!(
            "input row has {} values, config expects {}",
            row.len(),
            config.input_dim
        )));
    }
    if features.uncertainty.len() != len || features.progress.len() != len {
        return Err(Error::Dimension(format!(
            "{} sentences but {} uncertainty and {} progress targets",
            len,
            features.uncertainty.len(),
            features.progress.len()
        )));
    }
    Ok(())
}

pub fn forward(
    params: &HccParameters,
    config: &HccConfig,
    features: &TraceFeatures,
    mode: Mode,
) -> Result<ForwardOutput> {
    check_features(config, features)?;
    let len = features.len();
    let units = config.units();
    let latent = config.latent_dim;
    let (lo, hi) = (config.logvar_min, config.logvar_max);

    let fwd = gru_run(
        params.get(ENC_FWD_W),
        params.get(ENC_FWD_U),
        params.get(ENC_FWD_B),
        units,
        features.inputs.iter(),
    );
    let bwd = if config.bidirectional {
        gru_run(
            params.get(ENC_BWD_W),
            params.get(ENC_BWD_U),
            params.get(ENC_BWD_B),
            units,
            features.inputs.iter().rev(),
        )
    } else {
        Vec::new()
    };
    let mut encoded = Vec::with_capacity(len);
    for i in 0..len {
        let mut e = fwd[i].h.clone();
        if config.bidirectional {
            e.extend_from_slice(&bwd[len - 1 - i].h);
        }
        check(&e, "encoder", i + 1)?;
        encoded.push(e);
    }

    let mut out = ForwardOutput {
        encoded,
        post_mu: Vec::with_capacity(len),
        post_logvar: Vec::with_capacity(len),
        prior_mu: Vec::with_capacity(len),
        prior_logvar: Vec::with_capacity(len),
        z: Vec::with_capacity(len),
        latent_context: Vec::with_capacity(len),
        uncertainty_state: Vec::with_capacity(len),
        uncertainty_estimate: Vec::with_capacity(len),
        progress_state: Vec::with_capacity(len),
        progress_estimate: Vec::with_capacity(len),
        fused: Vec::with_capacity(len + 1),
        cut_logits: Vec::with_capacity(len + 1),
        delete_probs: Vec::with_capacity(len),
        kl: Vec::with_capacity(len),
        cache: Cache {
            fwd,
            bwd,
            ..Cache::default()
        },
    };

    let m0 = params.get(M0).to_vec();
    out.cut_logits
        .push(dot(params.get(CUT_W), &m0) + params.scalar(CUT_B));
    out.fused.push(m0);
    check(&out.cut_logits, "cut", 0)?;

    let alpha_geo = params.scalar(ALPHA_GEO);
    let alpha_ent = params.scalar(ALPHA_ENT);
    for i in 0..len {
        let t = i + 1;
        let h = &out.encoded[i];
        let mu = affine(params.get(POST_MU_W), params.get(POST_MU_B), h);
        let lv_raw = affine(params.get(POST_LV_W), params.get(POST_LV_B), h);
        let lv: Vec<f64> = lv_raw.iter().map(|v| v.clamp(lo, hi)).collect();
        check(&mu, "posterior", t)?;
        check(&lv_raw, "posterior", t)?;

        let (pmu, plv_raw) = if i == 0 {
            (
                params.get(PRIOR0_MU).to_vec(),
                params.get(PRIOR0_LV).to_vec(),
            )
        } else {
            let hp = &out.encoded[i - 1];
            (
                affine(params.get(PRIOR_MU_W), params.get(PRIOR_MU_B), hp),
                affine(params.get(PRIOR_LV_W), params.get(PRIOR_LV_B), hp),
            )
        };
        let plv: Vec<f64> = plv_raw.iter().map(|v| v.clamp(lo, hi)).collect();
        check(&pmu, "prior", t)?;
        check(&plv_raw, "prior", t)?;

        let z: Vec<f64> = match mode {
            Mode::Infer => mu.clone(),
            Mode::Train(seed) => {
                let mut r = rng::stream(seed, t as u64);
                let eta: Vec<f64> = (0..latent).map(|_| rng::normal(&mut r)).collect();
                let z = (0..latent)
                    .map(|k| mu[k] + (0.5 * lv[k]).exp() * eta[k])
                    .collect();
                out.cache.eta.push(eta);
                z
            }
        };
        let b = affine(params.get(LAT_W), params.get(LAT_B), &z);
        check(&b, "latent", t)?;

        let s_ent: Vec<f64> = affine(params.get(ENT_W), params.get(ENT_B), h)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let t_hat = dot(params.get(ENT_V), &s_ent) + params.scalar(ENT_C);
        check(&[t_hat], "uncertainty", t)?;
        let s_geo: Vec<f64> = affine(params.get(GEO_W), params.get(GEO_B), h)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let g_hat = dot(params.get(GEO_V), &s_geo) + params.scalar(GEO_C);
        check(&[g_hat], "progress", t)?;

        let pre: Vec<f64> = (0..b.len())
            .map(|k| b[k] + alpha_geo * s_geo[k] + alpha_ent * s_ent[k])
            .collect();
        let c = pre.len() as f64;
        let mean = pre.iter().sum::<f64>() / c;
        let sd = (pre.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c).sqrt();
        let normed: Vec<f64> = pre.iter().map(|v| (v - mean) / (sd + NORM_EPS)).collect();
        let m: Vec<f64> = normed
            .iter()
            .zip(params.get(LN_SCALE).iter().zip(params.get(LN_SHIFT)))
            .map(|(n, (g, s))| g * n + s)
            .collect();
        check(&m, "fusion", t)?;

        let logit = dot(params.get(CUT_W), &m) + params.scalar(CUT_B);
        check(&[logit], "cut", t)?;
        let raw = sigmoid(dot(params.get(DEL_W), &m) + params.scalar(DEL_B));
        check(&[raw], "delete", t)?;
        let p = raw.clamp(DELETE_PROB_CLAMP, 1.0 - DELETE_PROB_CLAMP);

        let kl = kl_gaussians(&mu, &lv, &pmu, &plv);
        check(&[kl], "kl", t)?;

        out.kl.push(kl);
        out.cut_logits.push(logit);
        out.delete_probs.push(p);
        out.cache.delete_clamped.push(p != raw);
        out.cache.normed.push(normed);
        out.cache.spread.push(sd);
        out.cache.post_logvar_raw.push(lv_raw);
        out.cache.prior_logvar_raw.push(plv_raw);
        out.fused.push(m);
        out.post_mu.push(mu);
        out.post_logvar.push(lv);
        out.prior_mu.push(pmu);
        out.prior_logvar.push(plv);
        out.z.push(z);
        out.latent_context.push(b);
        out.uncertainty_state.push(s_ent);
        out.uncertainty_estimate.push(t_hat);
        out.progress_state.push(s_geo);
        out.progress_estimate.push(g_hat);
    }
    Ok(out)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn check_targets(out: &ForwardOutput, targets: &TraceTargets) -> Result<()> {
    let len = out.delete_probs.len();
    if targets.boundary > len {
        return Err(Error::Boundary {
            boundary: targets.boundary,
            len,
        });
    }
    if targets.labels.len() != len {
        return Err(Error::Labels(format!(
            "{} labels for {} sentences",
            targets.labels.len(),
            len
        )));
    }
    Ok(())
}

pub fn loss(
    out: &ForwardOutput,
    features: &TraceFeatures,
    targets: &TraceTargets,
    config: &HccConfig,
) -> Result<LossBreakdown> {
    check_targets(out, targets)?;
    let max = out
        .cut_logits
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + out
            .cut_logits
            .iter()
            .map(|l| (l - max).exp())
            .sum::<f64>()
            .ln();
    let cut = lse - out.cut_logits[targets.boundary];
    let delete = out
        .delete_probs
        .iter()
        .zip(&targets.labels)
        .map(|(&p, &y)| if y == 1 { -p.ln() } else { -(1.0 - p).ln() })
        .sum();
    let kl = out.kl.iter().sum();
    let d = config.huber_delta;
    let unc = out
        .uncertainty_estimate
        .iter()
        .zip(&features.uncertainty)
        .map(|(e, t)| huber(e - t, d))
        .sum();
    let prog = out
        .progress_estimate
        .iter()
        .zip(&features.progress)
        .map(|(e, t)| huber(e - t, d))
        .sum();
    Ok(LossBreakdown::compose(
        cut.max(0.0),
        delete,
        kl,
        unc,
        prog,
        config,
    ))
}

/// Loss and its exact gradient with respect to every parameter.
pub fn gradients(
    params: &HccParameters,
    config: &HccConfig,
    features: &TraceFeatures,
    targets: &TraceTargets,
    mode: Mode,
) -> Result<(LossBreakdown, HccParameters)> {
    let out = forward(params, config, features, mode)?;
    let breakdown = loss(&out, features, targets, config)?;
    Ok((
        breakdown,
        backward(params, config, features, targets, &out, mode),
    ))
}

fn backward(
    params: &HccParameters,
    config: &HccConfig,
    features: &TraceFeatures,
    targets: &TraceTargets,
    out: &ForwardOutput,
    mode: Mode,
) -> HccParameters {
    let len = features.len();
    let units = config.units();
    let ctx = config.context_dim;
    let (lo, hi) = (config.logvar_min, config.logvar_max);
    let delta = config.huber_delta;
    let mut g = HccParameters::zeros(config);

    let mut dpi = softmax(&out.cut_logits);
    dpi[targets.boundary] -= 1.0;
    let cut_w = params.get(CUT_W).to_vec();
    let del_w = params.get(DEL_W).to_vec();
    let alpha_geo = params.scalar(ALPHA_GEO);
    let alpha_ent = params.scalar(ALPHA_ENT);

    scaled_acc(g.get_mut(CUT_W), dpi[0], &out.fused[0]);
    g.get_mut(CUT_B)[0] += dpi[0];
    scaled_acc(g.get_mut(M0), dpi[0], &cut_w);

    let mut d_enc = vec![vec![0.0; config.encoder_dim]; len];
    for i in 0..len {
        let t = i + 1;
        let m = &out.fused[t];
        let d_logit = if out.cache.delete_clamped[i] {
            0.0
        } else {
            config.lambda_del * (out.delete_probs[i] - f64::from(targets.labels[i]))
        };
        let dm: Vec<f64> = (0..ctx)
            .map(|k| dpi[t] * cut_w[k] + d_logit * del_w[k])
            .collect();
        scaled_acc(g.get_mut(CUT_W), dpi[t], m);
        g.get_mut(CUT_B)[0] += dpi[t];
        scaled_acc(g.get_mut(DEL_W), d_logit, m);
        g.get_mut(DEL_B)[0] += d_logit;

        // normalization
        let normed = &out.cache.normed[i];
        let sd = out.cache.spread[i];
        let s = sd + NORM_EPS;
        let gamma = params.get(LN_SCALE);
        let dn: Vec<f64> = (0..ctx).map(|k| dm[k] * gamma[k]).collect();
        for k in 0..ctx {
            g.get_mut(LN_SCALE)[k] += dm[k] * normed[k];
        }
        add_acc(g.get_mut(LN_SHIFT), &dm);
        let centered: Vec<f64> = normed.iter().map(|n| n * s).collect();
        let proj = if sd > 0.0 {
            dot(&dn, &centered) / (ctx as f64 * sd * s * s)
        } else {
            0.0
        };
        let dc: Vec<f64> = (0..ctx).map(|k| dn[k] / s - centered[k] * proj).collect();
        let mean_dc = dc.iter().sum::<f64>() / ctx as f64;
        let du: Vec<f64> = dc.iter().map(|v| v - mean_dc).collect();

        let s_ent = &out.uncertainty_state[i];
        let s_geo = &out.progress_state[i];
        g.get_mut(ALPHA_GEO)[0] += dot(&du, s_geo);
        g.get_mut(ALPHA_ENT)[0] += dot(&du, s_ent);

        let h = &out.encoded[i];
        for (state, est, target, lambda, alpha, (w, b, v, c)) in [
            (
                s_ent,
                out.uncertainty_estimate[i],
                features.uncertainty[i],
                config.lambda_ent,
                alpha_ent,
                (ENT_W, ENT_B, ENT_V, ENT_C),
            ),
            (
                s_geo,
                out.progress_estimate[i],
                features.progress[i],
                config.lambda_geo,
                alpha_geo,
                (GEO_W, GEO_B, GEO_V, GEO_C),
            ),
        ] {
            let dr = lambda * huber_grad(est - target, delta);
            scaled_acc(g.get_mut(v), dr, state);
            g.get_mut(c)[0] += dr;
            let vv = params.get(v);
            let da: Vec<f64> = (0..ctx)
                .map(|k| (alpha * du[k] + dr * vv[k]) * (1.0 - state[k] * state[k]))
                .collect();
            outer_acc(g.get_mut(w), &da, h);
            add_acc(g.get_mut(b), &da);
            matvec_t_acc(params.get(w), &da, &mut d_enc[i]);
        }

        // latent path
        let db = &du;
        outer_acc(g.get_mut(LAT_W), db, &out.z[i]);
        add_acc(g.get_mut(LAT_B), db);
        let mut dmu = vec![0.0; config.latent_dim];
        matvec_t_acc(params.get(LAT_W), db, &mut dmu);
        let lv = &out.post_logvar[i];
        let mut dlv: Vec<f64> = match mode {
            Mode::Infer => vec![0.0; dmu.len()],
            Mode::Train(_) => (0..dmu.len())
                .map(|k| dmu[k] * out.cache.eta[i][k] * 0.5 * (0.5 * lv[k]).exp())
                .collect(),
        };

        // KL
        let lambda_kl = config.lambda_kl;
        let mu = &out.post_mu[i];
        let pmu = &out.prior_mu[i];
        let plv = &out.prior_logvar[i];
        let mut dpmu = vec![0.0; dmu.len()];
        let mut dplv = vec![0.0; dmu.len()];
        for k in 0..dmu.len() {
            let diff = mu[k] - pmu[k];
            let inv = (-plv[k]).exp();
            dmu[k] += lambda_kl * diff * inv;
            dpmu[k] = -lambda_kl * diff * inv;
            dlv[k] += lambda_kl * 0.5 * (lv[k].exp() * inv - 1.0);
            dplv[k] = lambda_kl * 0.5 * (1.0 - (lv[k].exp() + diff * diff) * inv);
        }
        let mask = |d: &mut Vec<f64>, raw: &[f64]| {
            for (dk, r) in d.iter_mut().zip(raw) {
                if *r < lo || *r > hi {
                    *dk = 0.0;
                }
            }
        };
        mask(&mut dlv, &out.cache.post_logvar_raw[i]);
        mask(&mut dplv, &out.cache.prior_logvar_raw[i]);

        outer_acc(g.get_mut(POST_MU_W), &dmu, h);
        add_acc(g.get_mut(POST_MU_B), &dmu);
        matvec_t_acc(params.get(POST_MU_W), &dmu, &mut d_enc[i]);
        outer_acc(g.get_mut(POST_LV_W), &dlv, h);
        add_acc(g.get_mut(POST_LV_B), &dlv);
        matvec_t_acc(params.get(POST_LV_W), &dlv, &mut d_enc[i]);

        if i == 0 {
            add_acc(g.get_mut(PRIOR0_MU), &dpmu);
            add_acc(g.get_mut(PRIOR0_LV), &dplv);
        } else {
            let hp = &out.encoded[i - 1];
            outer_acc(g.get_mut(PRIOR_MU_W), &dpmu, hp);
            add_acc(g.get_mut(PRIOR_MU_B), &dpmu);
            outer_acc(g.get_mut(PRIOR_LV_W), &dplv, hp);
            add_acc(g.get_mut(PRIOR_LV_B), &dplv);
            let (before, _) = d_enc.split_at_mut(i);
            matvec_t_acc(params.get(PRIOR_MU_W), &dpmu, &mut before[i - 1]);
            matvec_t_acc(params.get(PRIOR_LV_W), &dplv, &mut before[i - 1]);
        }
    }

    // encoder, forward direction: sentences T..1
    let zero = vec![0.0; units];
    let mut carry = vec![0.0; units];
    let mut gw = vec![0.0; params.shape(ENC_FWD_W).len()];
    let mut gu = vec![0.0; params.shape(ENC_FWD_U).len()];
    let mut gb = vec![0.0; params.shape(ENC_FWD_B).len()];
    for i in (0..len).rev() {
        let dh: Vec<f64> = (0..units).map(|k| d_enc[i][k] + carry[k]).collect();
        let hp = if i == 0 {
            &zero
        } else {
            &out.cache.fwd[i - 1].h
        };
        carry = gru_step_backward(
            params.get(ENC_FWD_U),
            &out.cache.fwd[i],
            hp,
            &features.inputs[i],
            &dh,
            &mut gw,
            &mut gu,
            &mut gb,
        );
    }
    g.get_mut(ENC_FWD_W).copy_from_slice(&gw);
    g.get_mut(ENC_FWD_U).copy_from_slice(&gu);
    g.get_mut(ENC_FWD_B).copy_from_slice(&gb);

    if config.bidirectional {
        // processing step k saw sentence len - 1 - k
        let mut carry = vec![0.0; units];
        let mut gw = vec![0.0; params.shape(ENC_BWD_W).len()];
        let mut gu = vec![0.0; params.shape(ENC_BWD_U).len()];
        let mut gb = vec![0.0; params.shape(ENC_BWD_B).len()];
        for k in (0..len).rev() {
            let i = len - 1 - k;
            let dh: Vec<f64> = (0..units).map(|j| d_enc[i][units + j] + carry[j]).collect();
            let hp = if k == 0 {
                &zero
            } else {
                &out.cache.bwd[k - 1].h
            };
            carry = gru_step_backward(
                params.get(ENC_BWD_U),
                &out.cache.bwd[k],
                hp,
                &features.inputs[i],
                &dh,
                &mut gw,
                &mut gu,
                &mut gb,
            );
        }
        g.get_mut(ENC_BWD_W).copy_from_slice(&gw);
        g.get_mut(ENC_BWD_U).copy_from_slice(&gu);
        g.get_mut(ENC_BWD_B).copy_from_slice(&gb);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hcc::params::init_params;

    fn cfg() -> HccConfig {
        HccConfig {
            input_dim: 3,
            encoder_dim: 6,
            latent_dim: 4,
            context_dim: 5,
            ..HccConfig::default()
        }
    }

    fn features(len: usize) -> TraceFeatures {
        TraceFeatures {
            inputs: (0..len)
                .map(|t| (0..3).map(|k| ((t * 3 + k) as f64 * 0.7).sin()).collect())
                .collect(),
            uncertainty: (0..len).map(|t| t as f64 * 0.1).collect(),
            progress: (0..len).map(|t| 1.0 - t as f64 * 0.2).collect(),
        }
    }

    #[test]
    fn kl_hand_values() {
        assert_eq!(kl_gaussians(&[0.3], &[0.2], &[0.3], &[0.2]), 0.0);
        assert!((kl_gaussians(&[1.0], &[0.0], &[0.0], &[0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn huber_branches() {
        assert_eq!(huber(0.5, 1.0), 0.125);
        assert_eq!(huber(2.0, 1.0), 1.5);
        assert_eq!(huber(-2.0, 1.0), 1.5);
    }

    #[test]
    fn single_sentence_shapes() {
        let c = cfg();
        let p = init_params(&c, 3).unwrap();
        let out = forward(&p, &c, &features(1), Mode::Infer).unwrap();
        assert_eq!(out.cut_logits.len(), 2);
        assert_eq!(out.delete_probs.len(), 1);
        assert_eq!(out.fused.len(), 2);
    }

    #[test]
    fn infer_is_repeatable_and_train_depends_on_seed() {
        let c = cfg();
        let p = init_params(&c, 3).unwrap();
        let f = features(5);
        let a = forward(&p, &c, &f, Mode::Infer).unwrap();
        let b = forward(&p, &c, &f, Mode::Infer).unwrap();
        assert_eq!(a.cut_logits, b.cut_logits);
        assert_eq!(a.z, a.post_mu);
        let s1 = forward(&p, &c, &f, Mode::Train(1)).unwrap();
        let s2 = forward(&p, &c, &f, Mode::Train(2)).unwrap();
        assert_ne!(s1.z, s2.z);
        assert_eq!(s1.z, forward(&p, &c, &f, Mode::Train(1)).unwrap().z);
    }

    #[test]
    fn output_invariants() {
        let c = cfg();
        let p = init_params(&c, 9).unwrap();
        let out = forward(&p, &c, &features(7), Mode::Train(4)).unwrap();
        let s: f64 = softmax(&out.cut_logits).iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
        assert!(out.delete_probs.iter().all(|&p| p > 0.0 && p < 1.0));
        assert!(out.kl.iter().all(|&k| k >= 0.0));
    }

    #[test]
    fn matching_posterior_and_prior_give_zero_kl() {
        let c = cfg();
        let mut p = init_params(&c, 2).unwrap();
        for id in [POST_MU_W, POST_LV_W, PRIOR_MU_W, PRIOR_LV_W] {
            p.get_mut(id).fill(0.0);
        }
        let mu_b = p.get(POST_MU_B).to_vec();
        let lv_b = p.get(POST_LV_B).to_vec();
        p.get_mut(PRIOR_MU_B).copy_from_slice(&mu_b);
        p.get_mut(PRIOR_LV_B).copy_from_slice(&lv_b);
        p.get_mut(PRIOR0_MU).copy_from_slice(&mu_b);
        p.get_mut(PRIOR0_LV).copy_from_slice(&lv_b);
        let out = forward(&p, &c, &features(5), Mode::Infer).unwrap();
        assert_eq!(out.kl.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn uniform_logits_give_log_count() {
        let c = cfg();
        let mut p = init_params(&c, 2).unwrap();
        p.get_mut(CUT_W).fill(0.0);
        let f = features(3);
        let out = forward(&p, &c, &f, Mode::Infer).unwrap();
        let targets = TraceTargets {
            boundary: 2,
            labels: vec![0, 0, 1],
        };
        let l = loss(&out, &f, &targets, &c).unwrap();
        assert!((l.cut - 4f64.ln()).abs() < 1e-12);
        let recomposed = l.cut
            + c.lambda_del * l.delete
            + c.lambda_kl * l.kl
            + c.lambda_ent * l.uncertainty
            + c.lambda_geo * l.progress;
        assert_eq!(l.total, recomposed);
    }

    #[test]
    fn bad_targets_rejected() {
        let c = cfg();
        let p = init_params(&c, 2).unwrap();
        let f = features(3);
        let out = forward(&p, &c, &f, Mode::Infer).unwrap();
        let far = TraceTargets {
            boundary: 4,
            labels: vec![0; 3],
        };
        assert!(matches!(
            loss(&out, &f, &far, &c),
            Err(Error::Boundary { .. })
        ));
        let short = TraceTargets {
            boundary: 1,
            labels: vec![0; 2],
        };
        assert!(loss(&out, &f, &short, &c).is_err());
    }

    #[test]
    fn non_finite_input_names_the_head() {
        let c = cfg();
        let p = init_params(&c, 2).unwrap();
        let mut f = features(3);
        f.inputs[1][0] = f64::NAN;
        match forward(&p, &c, &f, Mode::Infer) {
            Err(Error::NonFinite { head, step }) => assert_eq!((head, step), ("encoder", 1)),
            other => panic!("{other:?}"),
        }
    }
}
