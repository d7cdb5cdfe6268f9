use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use delayspace::matrix::{aggregate_to_prefix, interpolate_missing};
use delayspace::measurement::{collapse_replicates, parse_measurements};
use delayspace::prefix::parse_prefix_table;
use delayspace::report::ConfigEcho;
use delayspace::tags::{parse_destination_tags, parse_source_tags, DestinationTags};
use delayspace::{CellState, LatencyMatrix};

use crate::args::Input;
use crate::failure::Failure;
use crate::run::Run;

fn open(path: &Path, run: &mut Run) -> Result<File, Failure> {
    run.manifest.inputs.push(path.to_path_buf());
    File::open(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn in_file<T>(path: &Path, r: delayspace::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn default_mask(matrix: &Path) -> Option<PathBuf> {
    let stem = matrix.file_stem()?.to_str()?;
    let candidate = matrix.with_file_name(format!("{stem}.mask.csv"));
    candidate.is_file().then_some(candidate)
}

/// Loads the input matrix, applies tags and optionally interpolates.
/// Returns the matrix and an id derived from the input file name.
pub fn load(input: &Input, cfg: &ConfigEcho, run: &mut Run) -> Result<(LatencyMatrix, String), Failure> {
    let sources = match &input.source_tags {
        Some(p) => {
            let f = open(p, run)?;
            in_file(p, parse_source_tags(f))?
        }
        None => BTreeMap::new(),
    };
    let destinations = match &input.dest_tags {
        Some(p) => {
            let f = open(p, run)?;
            in_file(p, parse_destination_tags(f))?
        }
        None => DestinationTags::default(),
    };

    let (mut x, origin) = match (&input.matrix, &input.measurements, &input.prefixes) {
        (Some(path), None, None) => {
            let values = open(path, run)?;
            let mask_path = input.mask.clone().or_else(|| default_mask(path));
            let mask = match &mask_path {
                Some(p) => Some(open(p, run)?),
                None => None,
            };
            let mut x = in_file(path, LatencyMatrix::read_csv(values, mask))?;
            x.apply_tags(&sources, &destinations);
            (x, path.clone())
        }
        (None, Some(mpath), Some(ppath)) => {
            let f = open(mpath, run)?;
            let parsed = in_file(mpath, parse_measurements(f))?;
            for r in &parsed.rejects {
                run.warn(format!("{} line {}: rejected: {}", mpath.display(), r.line, r.reason));
            }
            let f = open(ppath, run)?;
            let table = in_file(ppath, parse_prefix_table(f))?;
            let collapsed = collapse_replicates(&parsed.records);
            let x = aggregate_to_prefix(&collapsed, &table, &sources, &destinations, cfg.min_ips)?;
            run.manifest.note("records", parsed.records.len());
            run.manifest.note("rejected_rows", parsed.rejects.len());
            (x, mpath.clone())
        }
        _ => {
            return Err(Failure::input(
                "give either --matrix or both --measurements and --prefixes",
            ))
        }
    };
    if x.is_empty() {
        return Err(Failure::input(format!("{}: matrix has no rows or no columns", origin.display())));
    }
    let (m, n) = x.shape();
    run.manifest.note("shape", [m, n]);
    run.manifest.note("missing_fraction_before", x.missing_fraction());

    if cfg.interpolate {
        let (y, report) = interpolate_missing(&x);
        for (row, col) in &report.unfilled {
            run.warn(format!("no interpolation donor for ({row}, {col}); cell stays missing"));
        }
        run.manifest.note("interpolation", &report);
        x = y;
    }
    let missing = x.count(CellState::Missing);
    if missing > 0 {
        run.warn(format!("{missing} missing cells enter the solver as 0 and are never reported"));
    }
    run.manifest.note("missing_fraction_after", x.missing_fraction());

    let id = origin
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("matrix")
        .to_string();
    Ok((x, id))
}
