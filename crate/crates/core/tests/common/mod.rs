#![allow(dead_code)]

use delayspace::synth::{BaseLatencyModel, ClusterSpec, PlantedAnomaly, SyntheticSpec};
use delayspace::tags::Continent;
use delayspace::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `L0 = A * B` with standard-normal factors, plus `S0` on a uniformly
/// random `fraction` of cells with values `+-magnitude`.
pub fn gaussian_planted(
    m: usize,
    n: usize,
    rank: usize,
    fraction: f64,
    magnitude: f64,
    seed: u64,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::<f64>::from_fn(m, rank, |_, _| rng.sample(StandardNormal));
    let b = DMatrix::<f64>::from_fn(rank, n, |_, _| rng.sample(StandardNormal));
    let l0 = &a * &b;
    let mut s0 = DMatrix::<f64>::zeros(m, n);
    let support = (fraction * (m * n) as f64).round() as usize;
    for k in index::sample(&mut rng, m * n, support) {
        s0[(k / n, k % n)] = if rng.random_bool(0.5) { magnitude } else { -magnitude };
    }
    let x = &l0 + &s0;
    (x, l0, s0)
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// 16 French sources and 4 in Tokyo against 40 Paris prefixes; one Tokyo
/// source is inflated by 40-56 ms on 7 of the prefixes.
pub fn tokyo_row(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_sources: 20,
        n_prefixes: 40,
        row_clusters: vec![
            ClusterSpec::new(3215, "Paris", "FR", Continent::EU, 8),
            ClusterSpec::new(12322, "Lyon", "FR", Continent::EU, 8),
            ClusterSpec::new(2516, "Tokyo", "JP", Continent::AS, 4),
        ],
        col_clusters: vec![
            ClusterSpec::new(3215, "Paris", "FR", Continent::EU, 20),
            ClusterSpec::new(5410, "Paris", "FR", Continent::EU, 20),
        ],
        base_latency: BaseLatencyModel::Explicit {
            means_ms: vec![vec![2.0, 4.5], vec![8.5, 10.0], vec![210.0, 222.0]],
            jitter_ms: 0.5,
        },
        anomalies: (0..7)
            .map(|k| PlantedAnomaly {
                row: 16,
                col: 3 * k,
                inflation_ms: 40.0 + 16.0 * k as f64 / 6.0,
            })
            .collect(),
        random_anomalies: None,
        missing_fraction: 0.0,
        seed,
        allow_missing_anomalies: false,
        sweep_seeds: Vec::new(),
    }
}
