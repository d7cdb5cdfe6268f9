//! Planted delay spaces with known ground truth, and detector scoring.
//!
//! A generated matrix has a block structure: every (row cluster, column
//! cluster) pair shares a base latency, perturbed by a small uniform jitter.
//! Planted inflations are added on top and a fraction of the remaining cells
//! is masked out.

use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use nalgebra::{DMatrix, SVD};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anomaly::{self, AnomalyCandidate, FilterConfig};
use crate::error::{Error, Result};
use crate::matrix::{interpolate_missing, CellState, LatencyMatrix, Level};
use crate::measurement::MeasurementRecord;
use crate::prefix::PrefixTable;
use crate::rpca::{numerical_rank, Decomposition, SolverOptions};
use crate::tags::{AxisLabel, Continent, DestinationTags, EndpointTag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub asn: u32,
    pub city: String,
    pub country: String,
    pub continent: Continent,
    pub members: usize,
}

impl ClusterSpec {
    pub fn new(asn: u32, city: &str, country: &str, continent: Continent, members: usize) -> Self {
        Self {
            asn,
            city: city.to_string(),
            country: country.to_string(),
            continent,
            members,
        }
    }

    fn tag(&self) -> Result<EndpointTag> {
        EndpointTag::new(self.asn, &self.city, &self.country, self.continent)
            .map_err(|e| Error::InvalidSpec(e.to_string()))
    }
}

/// Base latency per (row cluster, column cluster) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseLatencyModel {
    /// `means_ms[row_cluster][col_cluster]`.
    Explicit { means_ms: Vec<Vec<f64>>, jitter_ms: f64 },
    /// Means drawn uniformly from `[min_ms, max_ms)` using the spec seed.
    Uniform {
        min_ms: f64,
        max_ms: f64,
        jitter_ms: f64,
    },
}

impl BaseLatencyModel {
    pub fn jitter_ms(&self) -> f64 {
        match self {
            BaseLatencyModel::Explicit { jitter_ms, .. } | BaseLatencyModel::Uniform { jitter_ms, .. } => {
                *jitter_ms
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedAnomaly {
    pub row: usize,
    pub col: usize,
    pub inflation_ms: f64,
}

/// Inflations planted on cells chosen by the generator. Each gets
/// `max(min_inflation_ms, ratio * L0)` with `ratio` uniform in
/// `[min_ratio, max_ratio]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomAnomalies {
    pub count: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub min_inflation_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_sources: usize,
    pub n_prefixes: usize,
    pub row_clusters: Vec<ClusterSpec>,
    pub col_clusters: Vec<ClusterSpec>,
    pub base_latency: BaseLatencyModel,
    #[serde(default)]
    pub anomalies: Vec<PlantedAnomaly>,
    #[serde(default)]
    pub random_anomalies: Option<RandomAnomalies>,
    #[serde(default)]
    pub missing_fraction: f64,
    pub seed: u64,
    /// Let the missing mask hit planted anomalies.
    #[serde(default)]
    pub allow_missing_anomalies: bool,
    /// Seeds for benchmark sweeps; empty means just `seed`.
    #[serde(default)]
    pub sweep_seeds: Vec<u64>,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidSpec(msg));
        if self.n_sources == 0 || self.n_prefixes == 0 {
            return invalid("matrix dimensions must be positive".into());
        }
        let row_total: usize = self.row_clusters.iter().map(|c| c.members).sum();
        let col_total: usize = self.col_clusters.iter().map(|c| c.members).sum();
        if row_total != self.n_sources {
            return invalid(format!("row cluster members sum to {row_total}, expected {}", self.n_sources));
        }
        if col_total != self.n_prefixes {
            return invalid(format!("column cluster members sum to {col_total}, expected {}", self.n_prefixes));
        }
        if self.n_prefixes > 65_536 {
            return invalid("at most 65536 prefixes are supported".into());
        }
        for c in self.row_clusters.iter().chain(&self.col_clusters) {
            if c.members == 0 {
                return invalid(format!("cluster {} {} has no members", c.asn, c.city));
            }
            c.tag()?;
        }
        let jitter = self.base_latency.jitter_ms();
        if !(jitter.is_finite() && jitter >= 0.0) {
            return invalid(format!("jitter must be non-negative, got {jitter}"));
        }
        let min_mean = match &self.base_latency {
            BaseLatencyModel::Explicit { means_ms, .. } => {
                if means_ms.len() != self.row_clusters.len()
                    || means_ms.iter().any(|r| r.len() != self.col_clusters.len())
                {
                    return invalid(format!(
                        "means must be {}x{}",
                        self.row_clusters.len(),
                        self.col_clusters.len()
                    ));
                }
                means_ms.iter().flatten().cloned().fold(f64::INFINITY, f64::min)
            }
            BaseLatencyModel::Uniform { min_ms, max_ms, .. } => {
                if !(max_ms.is_finite() && max_ms >= min_ms) {
                    return invalid(format!("bad mean range [{min_ms}, {max_ms})"));
                }
                *min_ms
            }
        };
        if !(min_mean.is_finite() && min_mean > jitter) {
            return invalid(format!(
                "cluster-pair means must be positive and exceed the jitter ({min_mean} vs {jitter})"
            ));
        }
        for a in &self.anomalies {
            if a.row >= self.n_sources || a.col >= self.n_prefixes {
                return invalid(format!("anomaly at ({}, {}) is out of range", a.row, a.col));
            }
            if !(a.inflation_ms.is_finite() && a.inflation_ms > 0.0) {
                return invalid(format!("anomaly inflation must be positive, got {}", a.inflation_ms));
            }
        }
        if let Some(r) = &self.random_anomalies {
            if !(r.min_ratio > 0.0 && r.max_ratio >= r.min_ratio && r.max_ratio.is_finite()) {
                return invalid("random anomaly ratios must satisfy 0 < min <= max".into());
            }
            if !(r.min_inflation_ms.is_finite() && r.min_inflation_ms >= 0.0) {
                return invalid("random anomaly min_inflation_ms must be non-negative".into());
            }
            if r.count + self.anomalies.len() > self.n_sources * self.n_prefixes {
                return invalid("more anomalies than cells".into());
            }
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return invalid(format!("missing_fraction must be in [0, 1), got {}", self.missing_fraction));
        }
        Ok(())
    }

    /// The seeds a benchmark sweep runs over.
    pub fn seeds(&self) -> Vec<u64> {
        if self.sweep_seeds.is_empty() {
            vec![self.seed]
        } else {
            self.sweep_seeds.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub low_rank: DMatrix<f64>,
    pub sparse: DMatrix<f64>,
    /// Cells with a planted inflation.
    pub anomalies: BTreeSet<(usize, usize)>,
    /// `true` where the generated matrix has a value.
    pub observed: DMatrix<bool>,
    /// Jitter-free mean latency per (row cluster, column cluster).
    pub cluster_means: DMatrix<f64>,
}

impl GroundTruth {
    pub fn rank(&self, rank_tolerance: f64) -> Result<usize> {
        numerical_rank(&self.low_rank, rank_tolerance)
    }

    /// Rank of the cluster structure, ignoring jitter.
    pub fn planted_rank(&self, rank_tolerance: f64) -> Result<usize> {
        numerical_rank(&self.cluster_means, rank_tolerance)
    }
}

fn assignments(clusters: &[ClusterSpec]) -> Vec<usize> {
    clusters
        .iter()
        .enumerate()
        .flat_map(|(k, c)| std::iter::repeat_n(k, c.members))
        .collect()
}

pub fn source_id(row: usize) -> String {
    format!("src-{row:03}")
}

/// Synthetic /24 for column `col`: `10.<hi>.<lo>.0/24`.
pub fn prefix_id(col: usize) -> String {
    format!("10.{}.{}.0/24", col / 256, col % 256)
}

/// Generates a matrix and its ground truth. Identical specs give bitwise
/// identical output.
pub fn generate(spec: &SyntheticSpec) -> Result<(LatencyMatrix, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (m, n) = (spec.n_sources, spec.n_prefixes);
    let (kr, kc) = (spec.row_clusters.len(), spec.col_clusters.len());

    let means = match &spec.base_latency {
        BaseLatencyModel::Explicit { means_ms, .. } => DMatrix::from_fn(kr, kc, |a, b| means_ms[a][b]),
        BaseLatencyModel::Uniform { min_ms, max_ms, .. } => {
            if max_ms > min_ms {
                DMatrix::from_fn(kr, kc, |_, _| rng.random_range(*min_ms..*max_ms))
            } else {
                DMatrix::from_element(kr, kc, *min_ms)
            }
        }
    };
    let jitter = spec.base_latency.jitter_ms();
    let row_of = assignments(&spec.row_clusters);
    let col_of = assignments(&spec.col_clusters);

    let low_rank = DMatrix::from_fn(m, n, |i, j| {
        let base = means[(row_of[i], col_of[j])];
        if jitter > 0.0 {
            base + rng.random_range(-jitter..=jitter)
        } else {
            base
        }
    });

    let mut sparse = DMatrix::zeros(m, n);
    let mut anomalies = BTreeSet::new();
    for a in &spec.anomalies {
        if anomalies.insert((a.row, a.col)) {
            sparse[(a.row, a.col)] = a.inflation_ms;
        }
    }
    if let Some(plan) = &spec.random_anomalies {
        let free: Vec<usize> = (0..m * n)
            .filter(|&k| !anomalies.contains(&(k / n, k % n)))
            .collect();
        for pick in index::sample(&mut rng, free.len(), plan.count).into_iter() {
            let k = free[pick];
            let (i, j) = (k / n, k % n);
            let ratio = if plan.max_ratio > plan.min_ratio {
                rng.random_range(plan.min_ratio..=plan.max_ratio)
            } else {
                plan.min_ratio
            };
            sparse[(i, j)] = (ratio * low_rank[(i, j)]).max(plan.min_inflation_ms);
            anomalies.insert((i, j));
        }
    }

    let mut observed = DMatrix::from_element(m, n, true);
    let eligible: Vec<usize> = (0..m * n)
        .filter(|&k| spec.allow_missing_anomalies || !anomalies.contains(&(k / n, k % n)))
        .collect();
    let to_mask = ((spec.missing_fraction * (m * n) as f64).round() as usize).min(eligible.len());
    for pick in index::sample(&mut rng, eligible.len(), to_mask).into_iter() {
        let k = eligible[pick];
        observed[(k / n, k % n)] = false;
    }

    let values = &low_rank + &sparse;
    let cells = observed.map(|o| if o { CellState::Observed } else { CellState::Missing });
    let row_tags: Vec<EndpointTag> = spec.row_clusters.iter().map(ClusterSpec::tag).collect::<Result<_>>()?;
    let col_tags: Vec<EndpointTag> = spec.col_clusters.iter().map(ClusterSpec::tag).collect::<Result<_>>()?;
    let rows = (0..m)
        .map(|i| AxisLabel::new(source_id(i), Some(row_tags[row_of[i]].clone())))
        .collect();
    let cols = (0..n)
        .map(|j| AxisLabel::new(prefix_id(j), Some(col_tags[col_of[j]].clone())))
        .collect();
    let matrix = LatencyMatrix::new(values, cells, rows, cols, Level::Prefix)?;
    Ok((
        matrix,
        GroundTruth {
            low_rank,
            sparse,
            anomalies,
            observed,
            cluster_means: means,
        },
    ))
}

/// Raw inputs equivalent to a generated matrix.
#[derive(Debug, Clone)]
pub struct MeasurementBundle {
    pub records: Vec<MeasurementRecord>,
    pub prefixes: PrefixTable,
    pub source_tags: std::collections::BTreeMap<String, EndpointTag>,
    pub destination_tags: DestinationTags,
}

/// Expands a prefix-level matrix into probe records.
///
/// Each column must be an IPv4 /24 or shorter prefix. Each prefix gets
/// `ips_per_prefix` hosts. For every observed cell one host carries the cell
/// value as its minimum and the rest sit slightly above it; every host gets
/// three probes whose minimum is its RTT, and one extra source-destination
/// pair per row is only ever incomplete. Collapsing and aggregating the
/// records reproduces the matrix.
pub fn to_measurements(x: &LatencyMatrix, ips_per_prefix: usize, seed: u64) -> Result<MeasurementBundle> {
    if ips_per_prefix == 0 || ips_per_prefix > 250 {
        return Err(Error::InvalidInput("ips_per_prefix must be in 1..=250".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nets: Vec<ipnet::Ipv4Net> = x
        .cols()
        .iter()
        .map(|c| {
            c.id.parse::<ipnet::Ipv4Net>()
                .ok()
                .filter(|n| n.prefix_len() <= 24)
                .ok_or_else(|| Error::InvalidInput(format!("column {} is not a /24-or-shorter prefix", c.id)))
        })
        .collect::<Result<_>>()?;
    let host = |net: &ipnet::Ipv4Net, k: usize| Ipv4Addr::from(u32::from(net.network()) + 1 + k as u32);

    let mut records = Vec::new();
    let (m, n) = x.shape();
    for i in 0..m {
        let source = &x.rows()[i].id;
        for (j, net) in nets.iter().enumerate().take(n) {
            let Some(value) = x.get(i, j) else { continue };
            if value <= 0.0 {
                return Err(Error::InvalidInput("measurement values must be positive".into()));
            }
            let exact = rng.random_range(0..ips_per_prefix);
            for k in 0..ips_per_prefix {
                let rtt = if k == exact { value } else { value + rng.random_range(0.5..5.0) };
                let probes = [rtt, rtt + rng.random_range(0.0..3.0), rtt + rng.random_range(0.0..3.0)];
                for (p, v) in probes.iter().enumerate() {
                    records.push(MeasurementRecord::complete(source, host(net, k), *v, p as u8 + 1));
                }
            }
        }
        if let Some(net) = nets.first() {
            // an unreachable host: all probes incomplete
            let dead = Ipv4Addr::from(u32::from(net.broadcast()));
            for p in 1..=3 {
                records.push(MeasurementRecord::incomplete(source, dead, p));
            }
        }
    }
    let prefixes = PrefixTable::from_entries(
        nets.iter()
            .zip(x.cols())
            .map(|(net, label)| (*net, label.tag.as_ref().map(|t| t.asn))),
    );
    let source_tags = x
        .rows()
        .iter()
        .filter_map(|l| l.tag.clone().map(|t| (l.id.clone(), t)))
        .collect();
    let destination_tags = DestinationTags::from_entries(
        x.cols().iter().filter_map(|l| l.tag.clone().map(|t| (l.id.clone(), t))),
    );
    Ok(MeasurementBundle {
        records,
        prefixes,
        source_tags,
        destination_tags,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Scores flagged cells against the planted anomalies.
///
/// Only planted anomalies with inflation of at least `min_inflation_ms`
/// count as positives. Flagged anomalies below that cutoff are neither true
/// nor false positives. `0/0` precision or recall is 1.
pub fn score_detection(
    flagged: impl IntoIterator<Item = (usize, usize)>,
    truth: &GroundTruth,
    min_inflation_ms: f64,
) -> DetectionScore {
    let qualifying: BTreeSet<(usize, usize)> = truth
        .anomalies
        .iter()
        .copied()
        .filter(|&(i, j)| truth.sparse[(i, j)] >= min_inflation_ms)
        .collect();
    let flagged: BTreeSet<(usize, usize)> = flagged.into_iter().collect();
    let tp = flagged.intersection(&qualifying).count();
    let fp = flagged.iter().filter(|c| !truth.anomalies.contains(c)).count();
    let fn_ = qualifying.len() - tp;
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    DetectionScore {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaScope {
    Row,
    Column,
}

/// A cell flagged by the 2-sigma baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaFlag {
    pub row: usize,
    pub col: usize,
    pub measured_ms: f64,
    pub threshold_ms: f64,
}

/// Flags cells exceeding `mean + 2 * stddev` of the other usable cells in
/// their row or column.
///
/// The statistics leave the tested cell out, so a single outlier cannot
/// raise its own threshold. Vectors with fewer than three usable cells are
/// skipped.
pub fn baseline_two_sigma(x: &LatencyMatrix, scope: SigmaScope) -> Vec<SigmaFlag> {
    let (m, n) = x.shape();
    let (outer, inner) = match scope {
        SigmaScope::Row => (m, n),
        SigmaScope::Column => (n, m),
    };
    let cell = |o: usize, k: usize| match scope {
        SigmaScope::Row => (o, k),
        SigmaScope::Column => (k, o),
    };
    let mut flags = Vec::new();
    for o in 0..outer {
        let present: Vec<(usize, f64)> = (0..inner)
            .filter_map(|k| {
                let (i, j) = cell(o, k);
                x.get(i, j).map(|v| (k, v))
            })
            .collect();
        if present.len() < 3 {
            continue;
        }
        let count = (present.len() - 1) as f64;
        let sum: f64 = present.iter().map(|(_, v)| v).sum();
        let sum_sq: f64 = present.iter().map(|(_, v)| v * v).sum();
        for &(k, v) in &present {
            let mean = (sum - v) / count;
            let var = ((sum_sq - v * v) / count - mean * mean).max(0.0);
            let threshold = mean + 2.0 * var.sqrt();
            // rounding in the running sums can leave a tiny variance on a
            // constant vector
            if v > threshold + 1e-9 * threshold.abs().max(1.0) {
                let (row, col) = cell(o, k);
                flags.push(SigmaFlag {
                    row,
                    col,
                    measured_ms: v,
                    threshold_ms: threshold,
                });
            }
        }
    }
    flags.sort_by_key(|f| (f.row, f.col));
    flags
}

/// Best rank-`rank_k` approximation by truncated SVD, packaged as a
/// decomposition so the same filters apply.
pub fn pca_decomposition(x: &DMatrix<f64>, rank_k: usize) -> Result<Decomposition> {
    let (m, n) = x.shape();
    if rank_k == 0 || rank_k >= m.min(n) {
        return Err(Error::InvalidInput(format!(
            "PCA rank must be in 1..{}, got {rank_k}",
            m.min(n)
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix contains non-finite entries".into()));
    }
    let svd = SVD::try_new(x.clone(), true, true, crate::rpca::SVD_EPS, crate::rpca::SVD_MAX_SWEEPS).ok_or(Error::SvdFailure)?;
    let (u, v_t) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut low_rank = DMatrix::<f64>::zeros(m, n);
    for &k in order.iter().take(rank_k) {
        let col = u.column(k).into_owned();
        let row = v_t.row(k).into_owned();
        low_rank += (col * row) * svd.singular_values[k];
    }
    let sparse = x - &low_rank;
    Ok(Decomposition {
        low_rank,
        sparse,
        rank: rank_k,
        iterations: 1,
        residual: 0.0,
        lambda_used: 0.0,
        converged: true,
        residual_history: vec![0.0],
    })
}

/// Smallest k whose leading singular values hold `energy` of the squared
/// spectrum.
pub fn energy_elbow_rank(x: &DMatrix<f64>, energy: f64) -> Result<usize> {
    let mut values: Vec<f64> = SVD::try_new(x.clone(), false, false, crate::rpca::SVD_EPS, crate::rpca::SVD_MAX_SWEEPS)
        .ok_or(Error::SvdFailure)?
        .singular_values
        .iter()
        .map(|s| s * s)
        .collect();
    values.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = values.iter().sum();
    if total == 0.0 {
        return Ok(0);
    }
    let mut acc = 0.0;
    for (k, v) in values.iter().enumerate() {
        acc += v;
        if acc >= energy * total {
            return Ok(k + 1);
        }
    }
    Ok(values.len())
}

/// Plain-PCA detector: fit a rank-`rank_k` approximation, treat the residual
/// as inflation and run the usual filters over it.
pub fn baseline_pca(x: &LatencyMatrix, rank_k: usize, cfg: &FilterConfig) -> Result<Vec<AnomalyCandidate>> {
    let d = pca_decomposition(x.values(), rank_k)?;
    anomaly::filter_decomposition(&d, x, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    Rpca,
    TwoSigma,
    Pca,
}

impl Detector {
    pub fn name(self) -> &'static str {
        match self {
            Detector::Rpca => "rpca",
            Detector::TwoSigma => "two_sigma",
            Detector::Pca => "pca",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRow {
    pub seed: u64,
    pub detector: Detector,
    pub score: DetectionScore,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub solver: SolverOptions,
    pub filter: FilterConfig,
    pub sigma_scope: SigmaScope,
    /// `None` uses the rank of the planted cluster means.
    pub pca_rank: Option<usize>,
    pub min_inflation_ms: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            filter: FilterConfig::default(),
            sigma_scope: SigmaScope::Column,
            pca_rank: None,
            min_inflation_ms: 0.0,
        }
    }
}

/// Scores the three detectors on one generated instance. Missing cells are
/// interpolated before any detector runs.
pub fn benchmark_seed(spec: &SyntheticSpec, cfg: &BenchConfig) -> Result<Vec<ScoreRow>> {
    let (x, truth) = generate(spec)?;
    let (x, _) = interpolate_missing(&x);
    let detection = anomaly::detect(&x, &cfg.solver, &cfg.filter)?;
    let rpca_cells = detection.candidates.iter().map(AnomalyCandidate::cell);

    let sigma_cells: Vec<(usize, usize)> = baseline_two_sigma(&x, cfg.sigma_scope)
        .iter()
        .map(|f| (f.row, f.col))
        .collect();

    let (m, n) = x.shape();
    let pca_rank = match cfg.pca_rank {
        Some(k) => k,
        None => truth.planted_rank(cfg.solver.rank_tolerance)?,
    }
    .clamp(1, m.min(n).saturating_sub(1).max(1));
    let pca = baseline_pca(&x, pca_rank, &cfg.filter)?;

    let min = cfg.min_inflation_ms;
    Ok(vec![
        ScoreRow {
            seed: spec.seed,
            detector: Detector::Rpca,
            score: score_detection(rpca_cells, &truth, min),
        },
        ScoreRow {
            seed: spec.seed,
            detector: Detector::TwoSigma,
            score: score_detection(sigma_cells, &truth, min),
        },
        ScoreRow {
            seed: spec.seed,
            detector: Detector::Pca,
            score: score_detection(pca.iter().map(AnomalyCandidate::cell), &truth, min),
        },
    ])
}

/// Runs [`benchmark_seed`] for every seed of the spec's sweep.
pub fn benchmark(spec: &SyntheticSpec, cfg: &BenchConfig) -> Result<Vec<ScoreRow>> {
    use rayon::prelude::*;
    let seeds = spec.seeds();
    let per_seed: Vec<Result<Vec<ScoreRow>>> = seeds
        .par_iter()
        .map(|&seed| benchmark_seed(&spec.with_seed(seed), cfg))
        .collect();
    let mut rows = Vec::new();
    for r in per_seed {
        rows.extend(r?);
    }
    Ok(rows)
}

pub fn write_scores_csv<W: std::io::Write>(writer: W, rows: &[ScoreRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["seed", "detector", "tp", "fp", "fn", "precision", "recall"])?;
    for r in rows {
        wtr.write_record([
            r.seed.to_string(),
            r.detector.name().to_string(),
            r.score.true_positives.to_string(),
            r.score.false_positives.to_string(),
            r.score.false_negatives.to_string(),
            r.score.precision.to_string(),
            r.score.recall.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Ready-made planted fixtures.
pub mod fixtures {
    use super::*;

    const CITIES: &[(&str, &str, Continent)] = &[
        ("Paris", "FR", Continent::EU),
        ("Aubervilliers", "FR", Continent::EU),
        ("Lyon", "FR", Continent::EU),
        ("Marseille", "FR", Continent::EU),
        ("Amsterdam", "NL", Continent::EU),
        ("Frankfurt", "DE", Continent::EU),
        ("London", "GB", Continent::EU),
        ("Zurich", "CH", Continent::EU),
        ("Tokyo", "JP", Continent::AS),
        ("San Jose", "US", Continent::NA),
    ];

    /// `count` distinct (AS, city) clusters with the given member counts.
    /// Cluster `k` uses city `k % 10` and AS `base_asn + k`.
    pub fn clusters(members: &[usize], base_asn: u32) -> Vec<ClusterSpec> {
        members
            .iter()
            .enumerate()
            .map(|(k, &size)| {
                let (city, country, continent) = CITIES[k % CITIES.len()];
                ClusterSpec::new(base_asn + k as u32, city, country, continent, size)
            })
            .collect()
    }

    /// Splits `total` members over `count` clusters as evenly as possible.
    pub fn even_split(total: usize, count: usize) -> Vec<usize> {
        (0..count)
            .map(|k| total / count + usize::from(k < total % count))
            .collect()
    }

    /// Zero-jitter, anomaly-free fixture with `k` row clusters of
    /// `members_per_cluster` sources and `col_clusters` column clusters over
    /// `n_prefixes` columns.
    pub fn planted_rank(k: usize, members_per_cluster: usize, col_clusters: usize, n_prefixes: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_sources: k * members_per_cluster,
            n_prefixes,
            row_clusters: clusters(&vec![members_per_cluster; k], 64_500),
            col_clusters: clusters(&even_split(n_prefixes, col_clusters), 65_000),
            base_latency: BaseLatencyModel::Uniform {
                min_ms: 5.0,
                max_ms: 200.0,
                jitter_ms: 0.0,
            },
            anomalies: Vec::new(),
            random_anomalies: None,
            missing_fraction: 0.0,
            seed,
            allow_missing_anomalies: false,
            sweep_seeds: Vec::new(),
        }
    }

    /// Low-rank base (4 x 6 clusters over 32 x 60) with 8 large detours, the
    /// setting where an l2 fit smears spike energy into neighbouring cells.
    pub fn pca_contrast(seed: u64) -> SyntheticSpec {
        let mut spec = planted_rank(4, 8, 6, 60, seed);
        spec.base_latency = BaseLatencyModel::Uniform {
            min_ms: 5.0,
            max_ms: 30.0,
            jitter_ms: 0.5,
        };
        spec.random_anomalies = Some(RandomAnomalies {
            count: 8,
            min_ratio: 5.0,
            max_ratio: 20.0,
            min_inflation_ms: 10.0,
        });
        spec
    }

    /// 48 x 80 (8 row clusters of 6, 20 column clusters, 15-45 ms, +-0.5 ms
    /// jitter) with a single planted detour that stays close to its row: the
    /// cell with the lowest expected latency in the first row that allows it
    /// is raised to 1.2x the mean of the rest of its row, provided that gives
    /// inflation >= 10 ms and a ratio >= 1.2.
    pub fn subtle_detour(seed: u64) -> Result<SyntheticSpec> {
        let mut spec = planted_rank(8, 6, 20, 80, seed);
        spec.base_latency = BaseLatencyModel::Uniform {
            min_ms: 15.0,
            max_ms: 45.0,
            jitter_ms: 0.5,
        };
        let (_, truth) = generate(&spec)?;
        let l0 = &truth.low_rank;
        let n = l0.ncols();
        for i in 0..l0.nrows() {
            let row_sum: f64 = l0.row(i).iter().sum();
            let (j, low) = l0
                .row(i)
                .iter()
                .copied()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty row");
            let target = 1.2 * (row_sum - low) / (n - 1) as f64;
            let inflation = target - low;
            if inflation >= 10.0 && inflation / low >= 1.2 {
                spec.anomalies = vec![PlantedAnomaly {
                    row: i,
                    col: j,
                    inflation_ms: inflation,
                }];
                return Ok(spec);
            }
        }
        Err(Error::InvalidSpec("no row admits a subtle detour".into()))
    }

    /// 47 sources in 26 (AS, city) groups by 80 prefixes in 20 groups, with
    /// +-0.5 ms jitter and 10 planted detours (inflation >= 1.5x expected and
    /// >= 10 ms).
    pub fn fr_like(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_sources: 47,
            n_prefixes: 80,
            row_clusters: clusters(&even_split(47, 26), 64_500),
            col_clusters: clusters(&even_split(80, 20), 65_000),
            base_latency: BaseLatencyModel::Uniform {
                min_ms: 15.0,
                max_ms: 45.0,
                jitter_ms: 0.5,
            },
            anomalies: Vec::new(),
            random_anomalies: Some(RandomAnomalies {
                count: 10,
                min_ratio: 1.5,
                max_ratio: 3.0,
                min_inflation_ms: 10.0,
            }),
            missing_fraction: 0.0,
            seed,
            allow_missing_anomalies: false,
            sweep_seeds: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> SyntheticSpec {
        SyntheticSpec {
            n_sources: 4,
            n_prefixes: 5,
            row_clusters: fixtures::clusters(&[4], 1),
            col_clusters: fixtures::clusters(&[5], 100),
            base_latency: BaseLatencyModel::Explicit {
                means_ms: vec![vec![12.5]],
                jitter_ms: 0.0,
            },
            anomalies: vec![],
            random_anomalies: None,
            missing_fraction: 0.0,
            seed: 1,
            allow_missing_anomalies: false,
            sweep_seeds: vec![],
        }
    }

    #[test]
    fn single_cluster_is_constant_rank_one() {
        let (x, truth) = generate(&tiny_spec()).unwrap();
        assert!(x.values().iter().all(|&v| v == 12.5));
        assert_eq!(truth.rank(1e-6).unwrap(), 1);
        assert!(truth.anomalies.is_empty());
    }

    #[test]
    fn twenty_six_clusters_give_rank_26() {
        let spec = fixtures::planted_rank(26, 2, 30, 80, 3);
        let (_, truth) = generate(&spec).unwrap();
        assert_eq!(truth.rank(1e-6).unwrap(), 26);
        let spec = fixtures::planted_rank(26, 2, 20, 80, 3);
        let (_, truth) = generate(&spec).unwrap();
        assert_eq!(truth.rank(1e-6).unwrap(), 20);
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let mut spec = fixtures::fr_like(42);
        spec.missing_fraction = 0.15;
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate(&spec.with_seed(43)).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn planted_structure_holds() {
        let mut spec = fixtures::fr_like(5);
        spec.missing_fraction = 0.15;
        spec.anomalies = vec![
            PlantedAnomaly { row: 0, col: 0, inflation_ms: 30.0 },
            PlantedAnomaly { row: 0, col: 0, inflation_ms: 99.0 },
        ];
        let (x, truth) = generate(&spec).unwrap();
        assert_eq!(truth.anomalies.len(), 11);
        assert_eq!(truth.sparse[(0, 0)], 30.0);
        for i in 0..47 {
            for j in 0..80 {
                if truth.observed[(i, j)] {
                    assert_eq!(x.get(i, j), Some(truth.low_rank[(i, j)] + truth.sparse[(i, j)]));
                } else {
                    assert_eq!(x.get(i, j), None);
                    assert!(!truth.anomalies.contains(&(i, j)));
                }
                let planted = truth.sparse[(i, j)] > 0.0;
                assert_eq!(planted, truth.anomalies.contains(&(i, j)));
            }
        }
        for &(i, j) in &truth.anomalies {
            if (i, j) != (0, 0) {
                assert!(truth.sparse[(i, j)] >= 10.0);
                assert!(truth.sparse[(i, j)] >= 1.5 * truth.low_rank[(i, j)] - 1e-12);
            }
        }
        assert_eq!(x.count(CellState::Missing), (0.15f64 * 47.0 * 80.0).round() as usize);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = tiny_spec();
        spec.n_sources = 5;
        assert!(matches!(generate(&spec), Err(Error::InvalidSpec(_))));
        let mut spec = tiny_spec();
        spec.anomalies = vec![PlantedAnomaly { row: 0, col: 0, inflation_ms: -1.0 }];
        assert!(generate(&spec).is_err());
        let mut spec = tiny_spec();
        spec.base_latency = BaseLatencyModel::Explicit { means_ms: vec![vec![0.0]], jitter_ms: 0.0 };
        assert!(generate(&spec).is_err());
        let mut spec = tiny_spec();
        spec.missing_fraction = 1.0;
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = fixtures::fr_like(7);
        let text = serde_json::to_string_pretty(&spec).unwrap();
        let back: SyntheticSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }

    fn truth_with(anomalies: &[(usize, usize, f64)]) -> GroundTruth {
        let mut sparse = DMatrix::zeros(20, 20);
        for &(i, j, v) in anomalies {
            sparse[(i, j)] = v;
        }
        GroundTruth {
            low_rank: DMatrix::zeros(20, 20),
            sparse,
            anomalies: anomalies.iter().map(|&(i, j, _)| (i, j)).collect(),
            observed: DMatrix::from_element(20, 20, true),
            cluster_means: DMatrix::zeros(1, 1),
        }
    }

    #[test]
    fn scoring_arithmetic() {
        let planted: Vec<(usize, usize, f64)> = (0..10).map(|k| (k, k, 20.0)).collect();
        let truth = truth_with(&planted);
        let all: Vec<_> = (0..10).map(|k| (k, k)).collect();
        let s = score_detection(all.clone(), &truth, 0.0);
        assert_eq!((s.precision, s.recall), (1.0, 1.0));

        let mut flagged: Vec<_> = all[..9].to_vec();
        flagged.extend([(0, 1), (0, 2), (0, 3)]);
        let s = score_detection(flagged, &truth, 0.0);
        assert_eq!((s.true_positives, s.false_positives, s.false_negatives), (9, 3, 1));
        assert_eq!(s.precision, 0.75);
        assert_eq!(s.recall, 0.9);

        let s = score_detection(Vec::new(), &truth_with(&[]), 0.0);
        assert_eq!((s.precision, s.recall), (1.0, 1.0));
    }

    #[test]
    fn scoring_min_inflation_excludes_small_anomalies() {
        let truth = truth_with(&[(0, 0, 5.0), (1, 1, 20.0)]);
        let s = score_detection(vec![(0, 0), (1, 1)], &truth, 10.0);
        assert_eq!((s.true_positives, s.false_positives, s.false_negatives), (1, 0, 0));
    }

    fn column_matrix(values: &[f64]) -> LatencyMatrix {
        LatencyMatrix::unlabeled(DMatrix::from_column_slice(values.len(), 1, values)).unwrap()
    }

    #[test]
    fn two_sigma_flags_outlier() {
        let x = column_matrix(&[10.0, 10.0, 10.0, 10.0, 40.0]);
        let flags = baseline_two_sigma(&x, SigmaScope::Column);
        assert_eq!(flags.len(), 1);
        assert_eq!((flags[0].row, flags[0].col), (4, 0));
    }

    #[test]
    fn two_sigma_constant_and_short_vectors() {
        assert!(baseline_two_sigma(&column_matrix(&[7.3; 6]), SigmaScope::Column).is_empty());
        assert!(baseline_two_sigma(&column_matrix(&[1.0, 100.0]), SigmaScope::Column).is_empty());
    }

    #[test]
    fn two_sigma_row_scope_misses_subtle_detour() {
        // row mean around 18.3 ms; the inflated cell reads 21.94 ms
        let row = [12.0, 25.0, 14.5, 21.94, 19.0, 16.0, 24.0, 13.0, 22.0, 15.6];
        let x = LatencyMatrix::unlabeled(DMatrix::from_row_slice(1, row.len(), &row)).unwrap();
        let mean: f64 = row.iter().sum::<f64>() / row.len() as f64;
        assert!((mean - 18.3).abs() < 0.1);
        assert!(baseline_two_sigma(&x, SigmaScope::Row).is_empty());
    }

    #[test]
    fn pca_rank_one_noiseless_has_no_residual() {
        let u = nalgebra::DVector::from_fn(6, |i, _| 1.0 + i as f64);
        let v = nalgebra::DVector::from_fn(5, |j, _| 2.0 + j as f64);
        let x = LatencyMatrix::unlabeled(&u * v.transpose()).unwrap();
        let d = pca_decomposition(x.values(), 1).unwrap();
        assert!(d.sparse.amax() < 1e-10, "{}", d.sparse.amax());
        let cfg = FilterConfig {
            absolute_scope: anomaly::AbsoluteScope::AllCells,
            ..Default::default()
        };
        assert!(baseline_pca(&x, 1, &cfg).unwrap().is_empty());
    }

    #[test]
    fn pca_spike_leaks_into_low_rank() {
        let (mut x, truth) = generate(&fixtures::planted_rank(3, 4, 5, 20, 1)).unwrap();
        let spike = 500.0;
        let mut values = x.values().clone();
        values[(2, 3)] += spike;
        x = LatencyMatrix::from_dense(values, x.rows().to_vec(), x.cols().to_vec(), Level::Prefix).unwrap();
        let d = pca_decomposition(x.values(), 3).unwrap();
        let residual = d.sparse[(2, 3)];
        // oracle: the rank-3 fit must move away from the truth at the spike
        let leaked = d.low_rank[(2, 3)] - truth.low_rank[(2, 3)];
        assert!(residual < spike, "residual {residual}");
        assert!(leaked > 1.0, "leaked {leaked}");
        assert!((residual + leaked - spike).abs() < 1e-8);
    }

    #[test]
    fn pca_rank_bounds() {
        let x = DMatrix::from_element(3, 4, 1.0);
        assert!(pca_decomposition(&x, 0).is_err());
        assert!(pca_decomposition(&x, 3).is_err());
    }

    #[test]
    fn energy_elbow() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![10.0, 3.0, 1.0]));
        // energies 100, 9, 1 -> 100/110 = 0.909
        assert_eq!(energy_elbow_rank(&d, 0.9).unwrap(), 1);
        assert_eq!(energy_elbow_rank(&d, 0.95).unwrap(), 2);
    }

    #[test]
    fn measurements_reproduce_matrix() {
        let mut spec = fixtures::fr_like(9);
        spec.n_sources = 6;
        spec.row_clusters = fixtures::clusters(&[3, 3], 64_500);
        spec.n_prefixes = 4;
        spec.col_clusters = fixtures::clusters(&[2, 2], 65_000);
        spec.random_anomalies = None;
        spec.missing_fraction = 0.2;
        let (x, _) = generate(&spec).unwrap();
        let bundle = to_measurements(&x, 10, 1).unwrap();
        let collapsed = crate::measurement::collapse_replicates(&bundle.records);
        let back = crate::matrix::aggregate_to_prefix(
            &collapsed,
            &bundle.prefixes,
            &bundle.source_tags,
            &bundle.destination_tags,
            10,
        )
        .unwrap();
        assert_eq!(back, x);
    }
}
