use hcc_core::corpus::Corpus;
use hcc_core::hcc::{train, HccConfig};
use hcc_core::synth::{generate, SynthConfig};
use hcc_core::Error;

fn tiny() -> HccConfig {
    HccConfig {
        encoder_dim: 16,
        latent_dim: 4,
        context_dim: 8,
        epochs: 5,
        batch_size: 4,
        seed: 9,
        ..HccConfig::default()
    }
}

fn corpus(traces: usize) -> Corpus {
    generate(&SynthConfig {
        traces,
        seed: 17,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn single_trace_is_memorized() {
    let c = corpus(1);
    let config = HccConfig {
        epochs: 200,
        batch_size: 1,
        ..tiny()
    };
    let out = train(&c, &config).unwrap();
    let last = out.history.last().unwrap();
    assert!(last.cut < 0.1, "final cut loss {}", last.cut);
    assert_eq!(out.history.len(), 200);
}

#[test]
fn same_seed_same_parameters() {
    let c = corpus(12);
    let a = train(&c, &tiny()).unwrap();
    let b = train(&c, &tiny()).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.history, b.history);
    let other = train(&c, &HccConfig { seed: 10, ..tiny() }).unwrap();
    assert_ne!(a.model.params, other.model.params);
}

#[test]
fn thread_count_does_not_change_results() {
    let c = corpus(12);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train(&c, &tiny()).unwrap())
    };
    assert_eq!(run(1).model, run(4).model);
}

#[test]
fn history_records_composed_totals() {
    let c = corpus(6);
    let config = tiny();
    let out = train(&c, &config).unwrap();
    for h in &out.history {
        assert!(h.cut >= 0.0 && h.delete >= 0.0 && h.kl >= 0.0);
        let recomposed = h.cut
            + config.lambda_del * h.delete
            + config.lambda_kl * h.kl
            + config.lambda_ent * h.uncertainty
            + config.lambda_geo * h.progress;
        assert!((h.total - recomposed).abs() <= 1e-9 * h.total.abs().max(1.0));
    }
}

#[test]
fn rejects_empty_and_unannotated_corpora() {
    let empty = Corpus::empty("none", 32);
    assert!(matches!(
        train(&empty, &tiny()),
        Err(Error::Insufficient(_))
    ));
    let mut c = corpus(3);
    c.annotations.clear();
    assert!(matches!(
        train(&c, &tiny()),
        Err(Error::InvalidTrace { .. })
    ));
    let wrong_dim = HccConfig {
        input_dim: 5,
        ..tiny()
    };
    assert!(matches!(
        train(&corpus(2), &wrong_dim),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn predictions_are_deterministic_and_well_formed() {
    let c = corpus(6);
    let out = train(&c, &tiny()).unwrap();
    for t in &c.traces {
        let a = out.model.predict(t).unwrap();
        let b = out.model.predict(t).unwrap();
        assert_eq!(a, b);
        assert!(a.boundary <= t.len());
        assert_eq!(a.cut_logits.len(), t.len() + 1);
        assert!(a.delete_probs.iter().all(|&p| p > 0.0 && p < 1.0));
    }
}
