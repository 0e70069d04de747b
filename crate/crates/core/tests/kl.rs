use hcc_core::hcc::kl_gaussians;
use hcc_core::rng;

type Case<'a> = (&'a [f64], &'a [f64], &'a [f64], &'a [f64]);

/// Monte-Carlo estimate of KL(q || p) as the mean of log q(x) - log p(x), x ~ q.
fn sampled_kl(mu_q: &[f64], lv_q: &[f64], mu_p: &[f64], lv_p: &[f64], n: usize, seed: u64) -> f64 {
    let mut r = rng::stream(seed, 0);
    let log_density = |x: f64, mu: f64, lv: f64| -0.5 * (lv + (x - mu).powi(2) / lv.exp());
    let mut total = 0.0;
    for _ in 0..n {
        for k in 0..mu_q.len() {
            let x = mu_q[k] + (0.5 * lv_q[k]).exp() * rng::normal(&mut r);
            total += log_density(x, mu_q[k], lv_q[k]) - log_density(x, mu_p[k], lv_p[k]);
        }
    }
    total / n as f64
}

#[test]
fn closed_form_matches_sampling() {
    let cases: [Case; 3] = [
        (&[1.0], &[0.0], &[0.0], &[0.0]),
        (
            &[0.3, -0.7, 1.2],
            &[-0.5, 0.4, 0.0],
            &[0.0, 0.2, 0.9],
            &[0.3, -0.2, 0.6],
        ),
        (&[2.0, 0.0], &[1.0, -1.5], &[-1.0, 0.5], &[0.5, 0.0]),
    ];
    for (i, (mq, lq, mp, lp)) in cases.iter().enumerate() {
        let exact = kl_gaussians(mq, lq, mp, lp);
        let mc = sampled_kl(mq, lq, mp, lp, 1_000_000, i as u64);
        assert!(
            (exact - mc).abs() <= 1e-2,
            "case {i}: closed form {exact}, sampled {mc}"
        );
    }
}

#[test]
fn hand_values() {
    assert!((kl_gaussians(&[1.0], &[0.0], &[0.0], &[0.0]) - 0.5).abs() < 1e-15);
    assert_eq!(
        kl_gaussians(&[0.2, -3.0], &[1.0, -2.0], &[0.2, -3.0], &[1.0, -2.0]),
        0.0
    );
    // variance ratio only: 0.5 * (ln 4 + 1/4 - 1)
    let expected = 0.5 * (4f64.ln() + 0.25 - 1.0);
    assert!((kl_gaussians(&[0.0], &[0.0], &[0.0], &[4f64.ln()]) - expected).abs() < 1e-15);
}
