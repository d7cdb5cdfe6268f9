use std::fs::File;
use std::path::Path;

use delayspace::anomaly::AbsoluteScope;
use delayspace::report::ConfigEcho;
use delayspace::{FilterConfig, SolverOptions};
use serde::Deserialize;

use crate::args::Common;
use crate::failure::Failure;

pub const DEFAULT_MIN_IPS: usize = 10;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    solver: SolverOptions,
    filter: FilterConfig,
    min_ips: Option<usize>,
    interpolate: Option<bool>,
    seed: Option<u64>,
}

fn read_config(path: &Path) -> Result<ConfigFile, Failure> {
    let file = File::open(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(file).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

/// Flags over config file over defaults. Also returns the seed when one was
/// given explicitly, so that synth can tell it apart from the default.
pub fn resolve(common: &Common) -> Result<(ConfigEcho, Option<u64>), Failure> {
    let file = match &common.config {
        Some(path) => read_config(path)?,
        None => ConfigFile::default(),
    };
    let mut solver = file.solver;
    if common.lambda.is_some() {
        solver.lambda = common.lambda;
    }
    if let Some(t) = common.tolerance {
        solver.tolerance = t;
    }
    if let Some(n) = common.max_iters {
        solver.max_iterations = n;
    }
    let mut filter = file.filter;
    if let Some(t) = common.tau {
        filter.tau = t;
    }
    if let Some(a) = common.abs_ms {
        filter.cross_continent_abs_ms = a;
    }
    if let Some(f) = common.severity_floor_ms {
        filter.severity_floor_ms = f;
    }
    if common.abs_all {
        filter.absolute_scope = AbsoluteScope::AllCells;
    }

    let mut problems = Vec::new();
    if let Err(e) = solver.validate() {
        problems.push(e.to_string());
    }
    if let Err(e) = filter.validate() {
        problems.push(e.to_string());
    }
    let min_ips = common.min_ips.or(file.min_ips).unwrap_or(DEFAULT_MIN_IPS);
    if min_ips == 0 {
        problems.push("min_ips must be at least 1".into());
    }
    if !problems.is_empty() {
        return Err(Failure::Input(problems));
    }
    let seed = common.seed.or(file.seed);
    let echo = ConfigEcho {
        solver,
        filter,
        min_ips,
        interpolate: common.interpolate || file.interpolate.unwrap_or(false),
        seed: seed.unwrap_or(0),
    };
    Ok((echo, seed))
}
