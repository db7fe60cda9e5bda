mod support;

use diagmeta_core::likelihood::{
    loglik_mtm_accuracy, loglik_mtm_full, loglik_mtm_prevalence, AccuracyParams,
    LikelihoodSettings, ModelKind, ModelLikelihood, PrevalenceParams, UnconstrainedParams,
};
use diagmeta_core::optim::numeric_gradient;
use diagmeta_core::{estimate_prevalences, gauss_hermite_rule, LinkFunction, QuadratureScheme};
use rand::Rng;
use support::{oracle_loglik, random_dataset, random_theta, rng};

#[test]
fn toy_example_matches_simpson_oracle() {
    let ds = support::random_dataset(&mut rng(0), 3, 5);
    let theta = AccuracyParams::new(0.5, 1.0, 0.3, 0.3, 0.2).unwrap();
    let rule = gauss_hermite_rule(21).unwrap();
    let gh = loglik_mtm_accuracy(&theta, &ds, LinkFunction::Logit, &rule, QuadratureScheme::Centered).unwrap();
    let oracle = oracle_loglik(&ds, LinkFunction::Logit, &theta);
    assert!((gh - oracle).abs() < 1e-6, "{gh} vs {oracle}");
}

#[test]
fn random_toy_datasets_match_simpson_oracle() {
    let rule = gauss_hermite_rule(21).unwrap();
    let mut r = rng(1);
    for link in LinkFunction::ALL {
        for _ in 0..20 {
            let n = r.gen_range(2..=3);
            let ds = random_dataset(&mut r, n, 5);
            let theta = random_theta(&mut r);
            let gh = loglik_mtm_accuracy(&theta, &ds, link, &rule, QuadratureScheme::Centered).unwrap();
            let oracle = oracle_loglik(&ds, link, &theta);
            assert!((gh - oracle).abs() < 1e-6, "{link} {theta:?}: {gh} vs {oracle}");
        }
    }
}

#[test]
fn node_count_m_and_2m_minus_1_agree_on_toy_data() {
    let mut r = rng(2);
    let ds = random_dataset(&mut r, 3, 5);
    for m in [21] {
        let a = gauss_hermite_rule(m).unwrap();
        let b = gauss_hermite_rule(2 * m - 1).unwrap();
        for link in LinkFunction::ALL {
            for _ in 0..10 {
                let theta = random_theta(&mut r);
                let la = loglik_mtm_accuracy(&theta, &ds, link, &a, QuadratureScheme::Centered).unwrap();
                let lb = loglik_mtm_accuracy(&theta, &ds, link, &b, QuadratureScheme::Centered).unwrap();
                assert!((la - lb).abs() < 1e-6, "m={m} {link}: {la} vs {lb}");
            }
        }
    }
}

#[test]
fn full_likelihood_separates_on_random_datasets() {
    let rule = gauss_hermite_rule(21).unwrap();
    let mut r = rng(3);
    for _ in 0..100 {
        let n = r.gen_range(2..=8);
        let ds = random_dataset(&mut r, n, 40);
        let theta = random_theta(&mut r);
        let link = LinkFunction::ALL[r.gen_range(0..3)];
        let pi = PrevalenceParams::new((0..n).map(|_| r.gen_range(0.05..0.95)).collect()).unwrap();
        for scheme in [QuadratureScheme::Centered, QuadratureScheme::FixedGrid] {
            let full = loglik_mtm_full(&pi, &theta, &ds, link, &rule, scheme).unwrap();
            let parts = loglik_mtm_prevalence(&pi, &ds).unwrap()
                + loglik_mtm_accuracy(&theta, &ds, link, &rule, scheme).unwrap();
            assert!((full - parts).abs() <= 1e-12 * full.abs().max(1.0), "{full} vs {parts}");
        }
        for (s, p) in ds.iter().zip(estimate_prevalences(&ds)) {
            assert_eq!(p.estimate, s.positives() as f64 / s.total() as f64);
        }
    }
}

#[test]
fn gradients_are_stable_under_step_halving() {
    let mut r = rng(4);
    let ds = random_dataset(&mut r, 5, 30);
    for kind in [ModelKind::Approx, ModelKind::Mtm, ModelKind::MtmFixed] {
        for link in LinkFunction::ALL {
            let lik = ModelLikelihood::new(kind, &ds, link, &LikelihoodSettings::default()).unwrap();
            for _ in 0..5 {
                let u: Vec<f64> = match kind {
                    ModelKind::MtmFixed => vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)],
                    _ => UnconstrainedParams::from_natural(&random_theta(&mut r)).0.to_vec(),
                };
                let f = |v: &[f64]| lik.total(v);
                let g1 = numeric_gradient(f, &u, 1e-5);
                let g2 = numeric_gradient(f, &u, 5e-6);
                assert!(g1.iter().all(|v| v.is_finite()));
                let diff: f64 = g1.iter().zip(&g2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let norm: f64 = g2.iter().map(|b| b * b).sum::<f64>().sqrt();
                assert!(diff < 1e-3 * norm.max(1e-8), "{kind} {link}: {g1:?} vs {g2:?}");
            }
        }
    }
}

#[test]
fn dropping_a_study_removes_exactly_its_term() {
    let mut r = rng(5);
    let ds = random_dataset(&mut r, 4, 20);
    let rest = diagmeta_core::MetaDataset::new(ds.studies()[1..].to_vec()).unwrap();
    let settings = LikelihoodSettings::default();
    let u = UnconstrainedParams::from_natural(&random_theta(&mut r)).0;
    for kind in [ModelKind::Approx, ModelKind::Mtm] {
        let full = ModelLikelihood::new(kind, &ds, LinkFunction::Logit, &settings).unwrap();
        let part = ModelLikelihood::new(kind, &rest, LinkFunction::Logit, &settings).unwrap();
        let terms = full.per_study(&u).unwrap();
        assert!((full.total(&u) - part.total(&u) - terms[0]).abs() < 1e-10);
    }
}
