//! Oracles shared by the integration tests. They do not call into the
//! library's samplers or integrators.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use survplan_core::survmodels::{Family, SurvivalModel};

/// Event time by explicit inversion of `S(t) = u`.
pub fn invert_survival(m: &SurvivalModel, u: f64) -> f64 {
    let h = -u.ln();
    match m.family() {
        Family::Exponential => h / m.scale(),
        Family::Weibull => (h / m.scale()).powf(1.0 / m.shape().unwrap()),
        Family::Gompertz => {
            let a = m.shape().unwrap();
            (1.0 + a * h / m.scale()).ln() / a
        }
    }
}

/// Entry-time law for the Monte Carlo oracle.
#[derive(Clone, Copy, Debug)]
pub enum Entry {
    Uniform,
    TruncExp(f64),
}

fn entry_time(e: Entry, u: f64, r: f64) -> f64 {
    match e {
        Entry::Uniform => u * r,
        Entry::TruncExp(g) => -(1.0 - u * (1.0 - (-g * r).exp())).ln() / g,
    }
}

/// Monte Carlo estimate of the event probability and its binomial SE.
pub fn mc_event_fraction(
    m: &SurvivalModel,
    phi: f64,
    tf: f64,
    r: f64,
    entry: Entry,
    n: usize,
    seed: u64,
) -> (f64, f64) {
    const CHUNK: usize = 50_000;
    let chunks = n.div_ceil(CHUNK);
    let events: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(c as u64));
            let len = CHUNK.min(n - c * CHUNK);
            (0..len)
                .filter(|_| {
                    let entry = entry_time(entry, rng.random::<f64>(), r);
                    let t0 = invert_survival(m, 1.0 - rng.random::<f64>());
                    let c = if phi > 0.0 { -(1.0 - rng.random::<f64>()).ln() / phi } else { f64::INFINITY };
                    t0 <= c && t0 <= tf + r - entry
                })
                .count()
        })
        .sum();
    let p = events as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

/// Random design parameters for a family: (model, phi, tf, r).
pub fn random_scenario(family: Family, rng: &mut ChaCha8Rng) -> (SurvivalModel, f64, f64, f64) {
    let m = match family {
        Family::Exponential => SurvivalModel::exponential(rng.random_range(0.05..1.0)).unwrap(),
        Family::Weibull => SurvivalModel::weibull(rng.random_range(0.05..1.0), rng.random_range(0.4..2.5)).unwrap(),
        Family::Gompertz => SurvivalModel::gompertz(rng.random_range(0.02..0.5), rng.random_range(0.05..1.0)).unwrap(),
    };
    let phi = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.01..0.3) };
    (m, phi, rng.random_range(0.5..10.0), rng.random_range(0.5..5.0))
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
