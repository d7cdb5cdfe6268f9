//! Delay-space dimensionality: rank of the expected-latency component versus
//! the number of distinct endpoint features.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::LatencyMatrix;
use crate::rpca::{decompose_matrix, SolverOptions};
use crate::tags::EndpointTag;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeoGranularity {
    #[default]
    City,
    Country,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureCount {
    pub unique_geos: usize,
    pub unique_asns: usize,
    pub unique_geo_asn_pairs: usize,
}

pub fn unique_feature_counts<'a>(
    tags: impl IntoIterator<Item = &'a EndpointTag>,
    granularity: GeoGranularity,
) -> FeatureCount {
    let mut geos = BTreeSet::new();
    let mut asns = BTreeSet::new();
    let mut pairs = BTreeSet::new();
    for tag in tags {
        let geo = match granularity {
            GeoGranularity::City => tag.city.as_str(),
            GeoGranularity::Country => tag.country.as_str(),
        };
        geos.insert(geo);
        asns.insert(tag.asn);
        pairs.insert((geo, tag.asn));
    }
    FeatureCount {
        unique_geos: geos.len(),
        unique_asns: asns.len(),
        unique_geo_asn_pairs: pairs.len(),
    }
}

/// Draws `count` random submatrices. Each one takes `r` rows and `c`
/// columns, with `r` uniform in `[min_dim, m]` and `c` uniform in
/// `[min_dim, n]`, chosen without replacement and kept in their original
/// order.
pub fn submatrix_sample(x: &LatencyMatrix, count: usize, min_dim: usize, seed: u64) -> Result<Vec<LatencyMatrix>> {
    let (m, n) = x.shape();
    if min_dim == 0 || m < min_dim || n < min_dim {
        return Err(Error::InvalidInput(format!(
            "cannot sample submatrices of at least {min_dim}x{min_dim} from a {m}x{n} matrix"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |total: usize, rng: &mut ChaCha8Rng| {
        let size = rng.random_range(min_dim..=total);
        let mut chosen = index::sample(rng, total, size).into_vec();
        chosen.sort_unstable();
        chosen
    };
    Ok((0..count)
        .map(|_| {
            let rows = pick(m, &mut rng);
            let cols = pick(n, &mut rng);
            x.select(&rows, &cols)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub matrix_id: String,
    pub rows: usize,
    pub cols: usize,
    pub rank_l: usize,
    pub converged: bool,
    pub row_features: FeatureCount,
    pub col_features: FeatureCount,
    pub min_geos: usize,
    pub min_asns: usize,
    pub min_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankFailure {
    pub matrix_id: String,
    pub error: String,
}

/// Pearson correlation of `rank_L` with each feature minimum. `None` when
/// fewer than two rows or a column has zero variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RankCorrelation {
    pub min_geos: Option<f64>,
    pub min_asns: Option<f64>,
    pub min_pairs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub rank_tolerance: f64,
    pub granularity: GeoGranularity,
    pub rows: Vec<RankRow>,
    pub failures: Vec<RankFailure>,
    pub correlation: RankCorrelation,
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn tags_of(labels: &[crate::tags::AxisLabel]) -> impl Iterator<Item = &EndpointTag> {
    labels.iter().filter_map(|l| l.tag.as_ref())
}

/// Decomposes every matrix and relates the rank of its `L` to its feature
/// counts. Solver failures are listed in `failures` without stopping the
/// batch. Rows are ordered by matrix id.
pub fn rank_feature_report(
    matrices: &[(String, LatencyMatrix)],
    opts: &SolverOptions,
    granularity: GeoGranularity,
) -> RankReport {
    let results: Vec<std::result::Result<RankRow, RankFailure>> = matrices
        .par_iter()
        .map(|(id, x)| {
            let d = decompose_matrix(x, opts).map_err(|e| RankFailure {
                matrix_id: id.clone(),
                error: e.to_string(),
            })?;
            let row_features = unique_feature_counts(tags_of(x.rows()), granularity);
            let col_features = unique_feature_counts(tags_of(x.cols()), granularity);
            Ok(RankRow {
                matrix_id: id.clone(),
                rows: x.shape().0,
                cols: x.shape().1,
                rank_l: d.rank,
                converged: d.converged,
                min_geos: row_features.unique_geos.min(col_features.unique_geos),
                min_asns: row_features.unique_asns.min(col_features.unique_asns),
                min_pairs: row_features
                    .unique_geo_asn_pairs
                    .min(col_features.unique_geo_asn_pairs),
                row_features,
                col_features,
            })
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(f) => failures.push(f),
        }
    }
    rows.sort_by(|a, b| a.matrix_id.cmp(&b.matrix_id));
    failures.sort_by(|a, b| a.matrix_id.cmp(&b.matrix_id));

    let ranks: Vec<f64> = rows.iter().map(|r| r.rank_l as f64).collect();
    let column = |f: fn(&RankRow) -> usize| rows.iter().map(|r| f(r) as f64).collect::<Vec<_>>();
    let correlation = RankCorrelation {
        min_geos: pearson(&ranks, &column(|r| r.min_geos)),
        min_asns: pearson(&ranks, &column(|r| r.min_asns)),
        min_pairs: pearson(&ranks, &column(|r| r.min_pairs)),
    };
    RankReport {
        rank_tolerance: opts.rank_tolerance,
        granularity,
        rows,
        failures,
        correlation,
    }
}

pub const REPORT_HEADER: [&str; 11] = [
    "matrix_id", "rows", "cols", "rank_L", "row_geos", "row_asns", "row_pairs", "col_geos", "col_asns", "col_pairs",
    "min_pairs",
];

impl RankReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(REPORT_HEADER)?;
        for r in &self.rows {
            wtr.write_record([
                r.matrix_id.clone(),
                r.rows.to_string(),
                r.cols.to_string(),
                r.rank_l.to_string(),
                r.row_features.unique_geos.to_string(),
                r.row_features.unique_asns.to_string(),
                r.row_features.unique_geo_asn_pairs.to_string(),
                r.col_features.unique_geos.to_string(),
                r.col_features.unique_asns.to_string(),
                r.col_features.unique_geo_asn_pairs.to_string(),
                r.min_pairs.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Scatter data: one point per matrix.
    pub fn write_scatter_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["matrix_id", "rank_L", "min_geos", "min_asns", "min_pairs", "row_pairs"])?;
        for r in &self.rows {
            wtr.write_record([
                r.matrix_id.clone(),
                r.rank_l.to_string(),
                r.min_geos.to_string(),
                r.min_asns.to_string(),
                r.min_pairs.to_string(),
                r.row_features.unique_geo_asn_pairs.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{fixtures, generate};
    use crate::tags::Continent;

    fn tag(asn: u32, city: &str) -> EndpointTag {
        EndpointTag::new(asn, city, "FR", Continent::EU).unwrap()
    }

    #[test]
    fn feature_counts() {
        let tags = [tag(1, "Paris"), tag(1, "Paris"), tag(2, "Paris")];
        let c = unique_feature_counts(&tags, GeoGranularity::City);
        assert_eq!(c, FeatureCount { unique_geos: 1, unique_asns: 2, unique_geo_asn_pairs: 2 });
        assert_eq!(unique_feature_counts(&[], GeoGranularity::City), FeatureCount::default());

        let tags = [tag(1, "Paris"), tag(1, "Lyon")];
        let c = unique_feature_counts(&tags, GeoGranularity::Country);
        assert_eq!(c.unique_geos, 1);
        assert_eq!(c.unique_geo_asn_pairs, 1);
    }

    #[test]
    fn sampling_bounds_and_determinism() {
        let (x, _) = generate(&fixtures::fr_like(1)).unwrap();
        let a = submatrix_sample(&x, 500, 5, 7).unwrap();
        assert_eq!(a.len(), 500);
        for s in &a {
            let (r, c) = s.shape();
            assert!((5..=47).contains(&r) && (5..=80).contains(&c));
            assert_eq!(s.rows().len(), r);
        }
        assert_eq!(a, submatrix_sample(&x, 500, 5, 7).unwrap());
    }

    #[test]
    fn forced_full_selection() {
        let (x, _) = generate(&fixtures::planted_rank(2, 3, 6, 6, 1)).unwrap();
        let s = submatrix_sample(&x, 1, 6, 3).unwrap();
        assert_eq!(s[0], x);
        assert!(submatrix_sample(&x, 1, 7, 3).is_err());
    }

    #[test]
    fn single_cluster_has_rank_one() {
        let (x, _) = generate(&fixtures::planted_rank(1, 6, 1, 10, 2)).unwrap();
        let report = rank_feature_report(&[("full".into(), x)], &SolverOptions::default(), GeoGranularity::City);
        assert_eq!(report.rows[0].rank_l, 1);
        assert_eq!(report.rows[0].min_pairs, 1);
    }

    #[test]
    fn failures_do_not_abort_batch() {
        let (good, _) = generate(&fixtures::planted_rank(2, 3, 4, 8, 2)).unwrap();
        let empty = good.select(&[], &[]);
        let report = rank_feature_report(
            &[("b".into(), empty), ("a".into(), good)],
            &SolverOptions::default(),
            GeoGranularity::City,
        );
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].matrix_id, "b");
    }

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(pearson(&[1.0, 1.0], &[2.0, 3.0]).is_none());
    }
}
