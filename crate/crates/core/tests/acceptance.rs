//! Acceptance criteria. Run with `cargo test -p delayspace --test acceptance`;
//! prints one PASS/FAIL line per criterion and fails if any criterion fails.

mod common;

use std::net::Ipv4Addr;
use std::time::{Duration, Instant};

use common::{gaussian_planted, rel_err};
use delayspace::anomaly::{absolute_filter, ratio_filter};
use delayspace::matrix::{interpolate_missing, Level};
use delayspace::prefix::PrefixTable;
use delayspace::rpca::{decompose, decompose_matrix, singular_value_threshold, soft_threshold, Decomposition};
use delayspace::synth::{
    baseline_two_sigma, benchmark, fixtures, generate, BenchConfig, Detector, SigmaScope,
};
use delayspace::tags::{AxisLabel, Continent, EndpointTag};
use delayspace::{CellState, DMatrix, FilterConfig, LatencyMatrix, SolverOptions};
use ipnet::Ipv4Net;
use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn pcp_recovery() -> Outcome {
    let mut recovered = 0;
    let mut slowest = Duration::ZERO;
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (x, l0, _) = gaussian_planted(200, 200, 10, 0.05, 10.0, seed);
        let started = Instant::now();
        let d = decompose(&x, &SolverOptions::default()).unwrap();
        slowest = slowest.max(started.elapsed());
        let err = rel_err(&d.low_rank, &l0);
        worst = worst.max(err);
        recovered += usize::from(err <= 1e-4);
    }
    outcome(
        recovered >= 19 && slowest <= Duration::from_secs(30),
        format!("{recovered}/20 seeds within 1e-4 (worst {worst:.1e}), slowest run {slowest:.2?}"),
    )
}

fn rank_equals_clusters() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (k, col_clusters) in [(1, 1), (3, 3), (8, 8), (26, 40)] {
        let hits: usize = (0..20u64)
            .into_par_iter()
            .map(|seed| {
                let (x, _) = generate(&fixtures::planted_rank(k, 3, col_clusters, 80, seed)).unwrap();
                let d = decompose_matrix(&x, &SolverOptions::default()).unwrap();
                usize::from(d.rank == k)
            })
            .sum();
        pass &= hits >= 19;
        parts.push(format!("k={k}: {hits}/20"));
    }
    outcome(pass, parts.join(", "))
}

fn tag(asn: u32, city: &str, country: &str, continent: Continent) -> Option<EndpointTag> {
    Some(EndpointTag::new(asn, city, country, continent).unwrap())
}

fn ratio_arithmetic() -> Outcome {
    // row 0: the four French cells, row 1: Tokyo to Paris
    let l = [0.9, 1.1, 12.3, 9.87, 5.0, 210.0, 210.0, 210.0, 210.0, 210.0];
    let s = [15.3, 20.0, 12.6, 12.07, 0.0, 0.0, 0.0, 0.0, 0.0, 45.0];
    let d = Decomposition {
        low_rank: DMatrix::from_row_slice(2, 5, &l),
        sparse: DMatrix::from_row_slice(2, 5, &s),
        rank: 2,
        iterations: 0,
        residual: 0.0,
        lambda_used: 0.0,
        converged: true,
        residual_history: Vec::new(),
    };
    let rows = vec![
        AxisLabel::new("paris-src", tag(3215, "Paris", "FR", Continent::EU)),
        AxisLabel::new("tokyo-src", tag(2516, "Tokyo", "JP", Continent::AS)),
    ];
    let cols = (0..5)
        .map(|j| AxisLabel::new(format!("p{j}"), tag(3215, "Paris", "FR", Continent::EU)))
        .collect();
    let x = LatencyMatrix::from_dense(&d.low_rank + &d.sparse, rows, cols, Level::Prefix).unwrap();
    let cfg = FilterConfig::default();

    let ratio = ratio_filter(&d, &x, &cfg).unwrap();
    let expected = [17.0, 18.18, 1.024, 1.223];
    let mut pass = ratio.len() == 4;
    for (j, want) in expected.iter().enumerate() {
        let got = ratio.iter().find(|c| c.cell() == (0, j)).map(|c| c.ratio);
        pass &= got.is_some_and(|r| (r - want).abs() <= 0.01);
    }
    let absolute: Vec<_> = absolute_filter(&d, &x, &cfg).unwrap().iter().map(|c| c.cell()).collect();
    let far_ratio = cfg.ratio(210.0, 45.0);
    pass &= absolute == vec![(1, 4)] && ratio.iter().all(|c| c.cell() != (1, 4));
    let shown: Vec<String> = ratio.iter().map(|c| format!("{:.3}", c.ratio)).collect();
    outcome(
        pass,
        format!(
            "ratios [{}]; (210, 45) ratio {far_ratio:.3}, absolute flags {absolute:?}",
            shown.join(", ")
        ),
    )
}

fn mean_rpca(rows: &[delayspace::synth::ScoreRow]) -> (f64, f64) {
    let rpca: Vec<_> = rows.iter().filter(|r| r.detector == Detector::Rpca).collect();
    let n = rpca.len() as f64;
    (
        rpca.iter().map(|r| r.score.recall).sum::<f64>() / n,
        rpca.iter().map(|r| r.score.precision).sum::<f64>() / n,
    )
}

fn planted_detection() -> Outcome {
    let mut spec = fixtures::fr_like(0);
    spec.sweep_seeds = (0..20).collect();
    let rows = benchmark(&spec, &BenchConfig::default()).unwrap();
    let (recall, precision) = mean_rpca(&rows);
    outcome(
        recall >= 0.9 && precision >= 0.8,
        format!("mean recall {recall:.3}, mean precision {precision:.3} over 20 seeds"),
    )
}

fn missing_data_pipeline() -> Outcome {
    let mut worst_after: f64 = 0.0;
    let mut modified = 0usize;
    for seed in 0..20 {
        let mut spec = fixtures::fr_like(seed);
        spec.missing_fraction = 0.15;
        let (x, _) = generate(&spec).unwrap();
        let (y, report) = interpolate_missing(&x);
        worst_after = worst_after.max(report.missing_fraction_after);
        let (m, n) = x.shape();
        for i in 0..m {
            for j in 0..n {
                if x.state(i, j) == CellState::Observed
                    && (y.state(i, j) != CellState::Observed || y.values()[(i, j)].to_bits() != x.values()[(i, j)].to_bits())
                {
                    modified += 1;
                }
            }
        }
    }
    let mut spec = fixtures::fr_like(0);
    spec.missing_fraction = 0.15;
    spec.sweep_seeds = (0..20).collect();
    let rows = benchmark(&spec, &BenchConfig::default()).unwrap();
    let (recall, _) = mean_rpca(&rows);
    outcome(
        worst_after <= 0.01 && recall >= 0.8 && modified == 0,
        format!(
            "15% -> at most {:.2}% missing, mean recall {recall:.3}, {modified} observed cells modified",
            100.0 * worst_after
        ),
    )
}

fn baseline_separation() -> Outcome {
    let mut separated = 0;
    let mut ratios = Vec::new();
    for seed in 0..20 {
        let spec = fixtures::subtle_detour(seed).unwrap();
        let (x, truth) = generate(&spec).unwrap();
        let a = spec.anomalies[0];
        let cell = (a.row, a.col);
        let row_mean = x.values().row(a.row).mean();
        ratios.push(x.values()[cell] / row_mean);
        assert!(truth.sparse[cell] >= 10.0 && truth.sparse[cell] / truth.low_rank[cell] >= 1.2);
        let d = decompose_matrix(&x, &SolverOptions::default()).unwrap();
        let by_ratio = ratio_filter(&d, &x, &FilterConfig::default())
            .unwrap()
            .iter()
            .any(|c| c.cell() == cell);
        let by_sigma = baseline_two_sigma(&x, SigmaScope::Row)
            .iter()
            .any(|f| (f.row, f.col) == cell);
        separated += usize::from(by_ratio && !by_sigma);
    }
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    outcome(
        separated >= 18,
        format!("{separated}/20 seeds flagged by ratio filter and missed by 2-sigma (measured / row mean {lo:.2}-{hi:.2})"),
    )
}

fn scan(table: &[(Ipv4Net, Option<u32>)], ip: Ipv4Addr) -> Option<Ipv4Net> {
    table
        .iter()
        .filter(|(net, _)| net.contains(&ip))
        .map(|(net, _)| *net)
        .max_by_key(|net| net.prefix_len())
}

fn lpm_oracle(queries: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut agree = 0;
    let mut done = 0;
    while done < queries {
        let entries: Vec<(Ipv4Net, Option<u32>)> = (0..rng.random_range(1..300))
            .map(|_| {
                let base = (rng.random_range(1u32..4) << 24) | rng.random_range(0..(1u32 << 24));
                let net = Ipv4Net::new(Ipv4Addr::from(base), rng.random_range(4..=32)).unwrap().trunc();
                (net, Some(rng.random_range(1..65_000)))
            })
            .collect();
        let table = PrefixTable::from_entries(entries.clone());
        for _ in 0..100 {
            let ip = if rng.random_bool(0.8) {
                let (net, _) = entries[rng.random_range(0..entries.len())];
                let span = 1u64 << (32 - net.prefix_len());
                Ipv4Addr::from(u32::from(net.network()) + rng.random_range(0..span) as u32)
            } else {
                Ipv4Addr::from(rng.random::<u32>())
            };
            agree += usize::from(table.lookup(ip).map(|e| e.prefix) == scan(&entries, ip));
            done += 1;
        }
    }
    agree
}

fn shrinkage_oracles() -> bool {
    let m = DMatrix::from_row_slice(2, 2, &[5.0, -0.5, 0.0, 2.0]);
    let mut ok = soft_threshold(&m, 1.0).unwrap() == DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let r = DMatrix::<f64>::from_fn(8, 8, |_, _| rng.random_range(-1.0..1.0));
    let out = soft_threshold(&r, 0.3).unwrap();
    for (a, x) in out.iter().zip(r.iter()) {
        let want = if *x > 0.3 {
            x - 0.3
        } else if *x < -0.3 {
            x + 0.3
        } else {
            0.0
        };
        ok &= (a - want).abs() == 0.0;
    }

    let (diag, count) = singular_value_threshold(&DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![5.0, 2.0, 0.1])), 1.0).unwrap();
    ok &= count == 2 && (diag - DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 1.0, 0.0]))).amax() < 1e-12;

    // spectral oracle: singular values from the eigenvalues of M^T M
    let m = DMatrix::<f64>::from_fn(10, 6, |_, _| rng.random_range(-2.0..2.0));
    let sigma: Vec<f64> = SymmetricEigen::new(m.transpose() * &m)
        .eigenvalues
        .iter()
        .map(|e| e.max(0.0).sqrt())
        .collect();
    let (out, count) = singular_value_threshold(&m, 0.5).unwrap();
    let want: f64 = sigma.iter().map(|s| (s - 0.5).max(0.0)).sum();
    let got: f64 = SymmetricEigen::new(out.transpose() * &out)
        .eigenvalues
        .iter()
        .map(|e| e.max(0.0).sqrt())
        .sum();
    ok &= (got - want).abs() <= 1e-9 * want && count == sigma.iter().filter(|s| **s > 0.5).count();
    ok
}

fn permute(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn invariant_suite() -> Outcome {
    let opts = SolverOptions::default();
    let mut worst_residual: f64 = 0.0;
    let mut converged_runs = 0;
    let mut inputs: Vec<DMatrix<f64>> = (0..6).map(|s| gaussian_planted(60, 50, 3, 0.05, 10.0, s).0).collect();
    for seed in 0..4 {
        inputs.push(generate(&fixtures::fr_like(seed)).unwrap().0.values().clone());
    }
    for x in &inputs {
        let d = decompose(x, &opts).unwrap();
        if d.converged {
            converged_runs += 1;
            worst_residual = worst_residual.max((x - &d.low_rank - &d.sparse).norm() / x.norm());
        }
    }

    let x = &inputs[0];
    let base = decompose(x, &opts).unwrap();
    let mut equivariant = true;
    for c in [0.1, 7.5] {
        let d = decompose(&(x * c), &opts).unwrap();
        let bound = 10.0 * opts.tolerance * (x * c).norm();
        equivariant &= (&d.low_rank - &base.low_rank * c).norm() <= bound;
        equivariant &= (&d.sparse - &base.sparse * c).norm() <= bound;
    }
    let rows: Vec<usize> = (0..60).map(|i| (i * 7 + 3) % 60).collect();
    let cols: Vec<usize> = (0..50).rev().collect();
    let d = decompose(&permute(x, &rows, &cols), &opts).unwrap();
    let bound = 10.0 * opts.tolerance * x.norm();
    equivariant &= (&d.low_rank - permute(&base.low_rank, &rows, &cols)).norm() <= bound;
    equivariant &= (&d.sparse - permute(&base.sparse, &rows, &cols)).norm() <= bound;

    let agree = lpm_oracle(10_000);
    let oracles = shrinkage_oracles();
    outcome(
        worst_residual <= 1e-6 && converged_runs == inputs.len() && equivariant && agree == 10_000 && oracles,
        format!(
            "worst residual {worst_residual:.1e} over {converged_runs} converged runs, equivariance {}, LPM {agree}/10000, shrinkage oracles {}",
            if equivariant { "ok" } else { "broken" },
            if oracles { "ok" } else { "broken" }
        ),
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 7] = [
        ("1 PCP recovery, 200x200 rank 10", pcp_recovery),
        ("2 rank equals cluster count", rank_equals_clusters),
        ("3 ratio-filter arithmetic", ratio_arithmetic),
        ("4 planted-detour detection", planted_detection),
        ("5 missing-data pipeline", missing_data_pipeline),
        ("6 baseline separation", baseline_separation),
        ("7 invariant suite", invariant_suite),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let o = run();
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
