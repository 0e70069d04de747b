use hcc_core::hcc::params::tensor;
use hcc_core::hcc::{
    forward, gradients, init_params, loss, HccConfig, HccParameters, Mode, TraceFeatures,
    TraceTargets,
};
use hcc_core::rng;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;
/// Denominator floor. Central differences at step 1e-5 carry up to ~1e-9 of
/// rounding noise, and some gradients are exactly zero (the cut bias, since
/// softmax ignores a shared shift), so errors are relative to at least this.
const FLOOR: f64 = 1e-5;

struct Case {
    config: HccConfig,
    params: HccParameters,
    features: TraceFeatures,
    targets: TraceTargets,
    mode: Mode,
}

fn case(seed: u64, bidirectional: bool) -> Case {
    let mut r = rng::stream(seed, 999);
    let config = HccConfig {
        input_dim: 6,
        encoder_dim: 8,
        latent_dim: 8,
        context_dim: 8,
        bidirectional,
        lambda_del: rng::uniform(&mut r, 0.2, 1.5),
        lambda_kl: rng::uniform(&mut r, 0.2, 1.5),
        lambda_ent: rng::uniform(&mut r, 0.2, 1.5),
        lambda_geo: rng::uniform(&mut r, 0.2, 1.5),
        huber_delta: rng::uniform(&mut r, 0.5, 2.0),
        ..HccConfig::default()
    };
    let mut params = init_params(&config, seed).unwrap();
    // move gates, normalization and the initial prior off their neutral starts
    for id in [
        tensor::ALPHA_GEO,
        tensor::ALPHA_ENT,
        tensor::LN_SCALE,
        tensor::LN_SHIFT,
        tensor::PRIOR0_MU,
        tensor::PRIOR0_LV,
    ] {
        for v in params.get_mut(id) {
            *v += rng::uniform(&mut r, -0.5, 0.5);
        }
    }
    let len = 5;
    let features = TraceFeatures {
        inputs: (0..len)
            .map(|_| (0..6).map(|_| rng::normal(&mut r)).collect())
            .collect(),
        uncertainty: (0..len).map(|_| 2.0 * rng::normal(&mut r)).collect(),
        progress: (0..len).map(|_| 2.0 * rng::normal(&mut r)).collect(),
    };
    let boundary = rng::int_inclusive(&mut r, 0, len);
    let targets = TraceTargets {
        boundary,
        labels: (1..=len).map(|t| u8::from(t > boundary)).collect(),
    };
    Case {
        config,
        params,
        features,
        targets,
        mode: Mode::Train(seed.wrapping_mul(31) + 7),
    }
}

fn total_loss(c: &Case, params: &HccParameters) -> f64 {
    let out = forward(params, &c.config, &c.features, c.mode).unwrap();
    loss(&out, &c.features, &c.targets, &c.config)
        .unwrap()
        .total
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Largest relative error over every parameter, with its location.
fn worst_error(c: &Case) -> (f64, String) {
    let (_, grad) = gradients(&c.params, &c.config, &c.features, &c.targets, c.mode).unwrap();
    let mut worst = (0.0, String::new());
    let mut p = c.params.clone();
    for i in 0..p.len() {
        let orig = p.as_slice()[i];
        p.as_mut_slice()[i] = orig + STEP;
        let up = total_loss(c, &p);
        p.as_mut_slice()[i] = orig - STEP;
        let down = total_loss(c, &p);
        p.as_mut_slice()[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let analytic = grad.as_slice()[i];
        let e = relative_error(analytic, numeric);
        if e > worst.0 {
            let (id, k) = p.locate(i);
            worst = (
                e,
                format!(
                    "{}[{k}] analytic {analytic:e} numeric {numeric:e}",
                    tensor::NAMES[id]
                ),
            );
        }
    }
    worst
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let start = std::time::Instant::now();
    let mut checked = 0;
    for seed in 0..24u64 {
        let c = case(seed, seed % 4 != 3);
        let (err, at) = worst_error(&c);
        assert!(
            err <= TOLERANCE,
            "seed {seed}: relative error {err:e} at {at}"
        );
        checked += 1;
    }
    assert!(checked >= 20);
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn infer_mode_gradients_match_finite_differences() {
    for seed in 100..104u64 {
        let mut c = case(seed, true);
        c.mode = Mode::Infer;
        let (err, at) = worst_error(&c);
        assert!(
            err <= TOLERANCE,
            "seed {seed}: relative error {err:e} at {at}"
        );
    }
}

#[test]
fn auxiliary_only_parameters_have_zero_gradient_without_auxiliary_losses() {
    let mut c = case(7, true);
    c.config.lambda_kl = 0.0;
    c.config.lambda_ent = 0.0;
    c.config.lambda_geo = 0.0;
    let (_, grad) = gradients(&c.params, &c.config, &c.features, &c.targets, c.mode).unwrap();
    for id in tensor::AUXILIARY_ONLY {
        assert!(
            grad.get(id).iter().all(|&g| g == 0.0),
            "{} has nonzero gradient",
            tensor::NAMES[id]
        );
    }
    // the regression states still reach the fused state
    assert!(grad.get(tensor::ENT_W).iter().any(|&g| g != 0.0));
    assert!(grad.get(tensor::GEO_W).iter().any(|&g| g != 0.0));
}

#[test]
fn uncertainty_gate_gradient_matches_directional_difference() {
    let c = case(3, true);
    let (_, grad) = gradients(&c.params, &c.config, &c.features, &c.targets, c.mode).unwrap();
    let analytic = grad.scalar(tensor::ALPHA_ENT);
    let mut p = c.params.clone();
    let base = p.scalar(tensor::ALPHA_ENT);
    p.get_mut(tensor::ALPHA_ENT)[0] = base + STEP;
    let up = total_loss(&c, &p);
    p.get_mut(tensor::ALPHA_ENT)[0] = base - STEP;
    let down = total_loss(&c, &p);
    let numeric = (up - down) / (2.0 * STEP);
    assert!(relative_error(analytic, numeric) <= TOLERANCE);
}
