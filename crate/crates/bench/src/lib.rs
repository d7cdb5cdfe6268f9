//! Inputs shared by the benchmarks.

use std::net::Ipv4Addr;

use delayspace::prefix::{parse_prefix_table, PrefixTable};
use delayspace::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `U V^T` with uniform factors plus a few large positive spikes.
pub fn low_rank_plus_spikes(m: usize, n: usize, rank: usize, spikes: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = DMatrix::from_fn(m, rank, |_, _| rng.random_range(1.0..10.0));
    let v = DMatrix::from_fn(rank, n, |_, _| rng.random_range(1.0..10.0));
    let mut x = u * v;
    for _ in 0..spikes {
        let (i, j) = (rng.random_range(0..m), rng.random_range(0..n));
        x[(i, j)] += 100.0;
    }
    x
}

/// `count` random prefixes between /8 and /28.
pub fn random_table(count: usize, seed: u64) -> PrefixTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lines: String = (0..count)
        .map(|_| {
            let addr = Ipv4Addr::from(rng.random::<u32>());
            format!("{addr}/{},{}\n", rng.random_range(8..=28), rng.random_range(1..65000u32))
        })
        .collect();
    parse_prefix_table(lines.as_bytes()).expect("generated table parses")
}

pub fn random_ips(count: usize, seed: u64) -> Vec<Ipv4Addr> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| Ipv4Addr::from(rng.random::<u32>())).collect()
}
