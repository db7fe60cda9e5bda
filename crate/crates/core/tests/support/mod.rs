#![allow(dead_code)]

use diagmeta_core::likelihood::AccuracyParams;
use diagmeta_core::{LinkFunction, MetaDataset, StudyRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DELIRIUM_CSV: &str = include_str!("../../../../data/delirium.csv");

pub fn delirium() -> MetaDataset {
    MetaDataset::from_csv(DELIRIUM_CSV).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random dataset with `n` studies and cells in `0..=max_cell`, both
/// margins nonempty.
pub fn random_dataset(rng: &mut impl Rng, n: usize, max_cell: u64) -> MetaDataset {
    let studies = (0..n)
        .map(|i| loop {
            let c: [u64; 4] = std::array::from_fn(|_| rng.gen_range(0..=max_cell));
            if let Ok(s) = StudyRecord::new((i + 1).to_string(), c[0], c[1], c[2], c[3]) {
                break s;
            }
        })
        .collect();
    MetaDataset::new(studies).unwrap()
}

/// Parameters on the scale of the toy example: variances up to 0.3. Larger
/// variances make small-count kernels narrow relative to the random-effects
/// law, and 21 nodes then miss 1e-6 for probit and cloglog.
pub fn random_theta(rng: &mut impl Rng) -> AccuracyParams {
    AccuracyParams::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(0.05..0.3),
        rng.gen_range(0.05..0.3),
        rng.gen_range(-0.8..0.8),
    )
    .unwrap()
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
    let m = 0.5 * (a + b);
    let fm = f(m);
    (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
}

#[allow(clippy::too_many_arguments)]
fn adapt(
    f: &impl Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    m: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    floor: f64,
    depth: u32,
) -> f64 {
    let (lm, flm, left) = simpson(f, a, fa, m, fm);
    let (rm, frm, right) = simpson(f, m, fm, b, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    let tol = (0.5 * tol).max(floor);
    adapt(f, a, fa, m, fm, lm, flm, left, tol, floor, depth - 1)
        + adapt(f, m, fm, b, fb, rm, frm, right, tol, floor, depth - 1)
}

/// Adaptive Simpson quadrature on `[a, b]`, relative tolerance `rel`.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> f64 {
    const PIECES: usize = 32;
    let h = (b - a) / PIECES as f64;
    let xs: Vec<f64> = (0..=PIECES).map(|i| a + h * i as f64).collect();
    let fs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let coarse: Vec<(f64, f64, f64)> = (0..PIECES)
        .map(|i| simpson(&f, xs[i], fs[i], xs[i + 1], fs[i + 1]))
        .collect();
    let scale: f64 = coarse.iter().map(|c| c.2.abs()).sum();
    let tol = rel * scale / PIECES as f64;
    // below this the Simpson difference is rounding noise
    let floor = 8.0 * f64::EPSILON * scale;
    (0..PIECES)
        .map(|i| {
            let (m, fm, whole) = coarse[i];
            adapt(&f, xs[i], fs[i], xs[i + 1], fs[i + 1], m, fm, whole, tol, floor, 40)
        })
        .sum()
}

fn log_density(theta: &AccuracyParams, eta: f64, xi: f64) -> f64 {
    let (se, sx) = (theta.var_eta.sqrt(), theta.var_xi.sqrt());
    let (a, b) = ((eta - theta.eta_bar) / se, (xi - theta.xi_bar) / sx);
    let r = theta.rho;
    let q = (a * a - 2.0 * r * a * b + b * b) / (1.0 - r * r);
    -(2.0 * std::f64::consts::PI * se * sx * (1.0 - r * r).sqrt()).ln() - 0.5 * q
}

fn log_kernel(s: &StudyRecord, link: LinkFunction, eta: f64, xi: f64) -> f64 {
    let p = link.inverse(eta).unwrap();
    let c = link.inverse(xi).unwrap();
    let term = |k: u64, v: f64| if k == 0 { 0.0 } else { k as f64 * v.ln() };
    term(s.tp(), p) + term(s.fn_(), 1.0 - p) + term(s.fp(), 1.0 - c) + term(s.tn(), c)
}

/// log ∫∫ kernel · φ₂ over `[-8, 8]²` by nested adaptive Simpson.
pub fn oracle_study_loglik(s: &StudyRecord, link: LinkFunction, theta: &AccuracyParams) -> f64 {
    let inner = |eta: f64| {
        adaptive_simpson(
            |xi| (log_kernel(s, link, eta, xi) + log_density(theta, eta, xi)).exp(),
            -8.0,
            8.0,
            1e-11,
        )
    };
    adaptive_simpson(inner, -8.0, 8.0, 1e-11).ln()
}

pub fn oracle_loglik(ds: &MetaDataset, link: LinkFunction, theta: &AccuracyParams) -> f64 {
    ds.iter().map(|s| oracle_study_loglik(s, link, theta)).sum()
}
