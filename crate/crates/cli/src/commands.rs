use std::fs::File;
use std::io::Write;
use std::process::ExitCode;

use delayspace::anomaly::detect as run_detection;
use delayspace::rank::{rank_feature_report, submatrix_sample, GeoGranularity};
use delayspace::report::{shared_max, write_pgm, CandidateReport};
use delayspace::rpca::decompose_matrix;
use delayspace::synth::{benchmark, generate, to_measurements, write_scores_csv, BenchConfig, Detector, SyntheticSpec};
use delayspace::tags::write_tags;
use delayspace::Decomposition;

use crate::args::{DecomposeArgs, DetectArgs, Granularity, RankArgs, SynthArgs};
use crate::config;
use crate::failure::Failure;
use crate::input;
use crate::run::Run;

fn note_solver(run: &mut Run, d: &Decomposition) {
    run.manifest.note("rank", d.rank);
    run.manifest.note("iterations", d.iterations);
    run.manifest.note("residual", d.residual);
    run.manifest.note("lambda", d.lambda_used);
    run.manifest.note("converged", d.converged);
    if !d.converged {
        run.warn(format!(
            "solver did not converge after {} iterations (relative residual {:.3e})",
            d.iterations, d.residual
        ));
    }
}

fn convergence_code(converged: bool) -> ExitCode {
    if converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    }
}

pub fn decompose(args: &DecomposeArgs) -> Result<ExitCode, Failure> {
    let (cfg, _) = config::resolve(&args.common)?;
    let mut run = Run::start("decompose", cfg.clone(), &args.common.out_dir)?;
    let (x, _) = input::load(&args.input, &cfg, &mut run)?;
    let d = decompose_matrix(&x, &cfg.solver)?;
    note_solver(&mut run, &d);

    run.write("X.csv", |w| Ok(x.write_csv(w)?))?;
    run.write("X.mask.csv", |w| Ok(x.write_mask_csv(w)?))?;
    run.write("L.csv", |w| Ok(x.write_dense_csv(w, &d.low_rank)?))?;
    run.write("S.csv", |w| Ok(x.write_dense_csv(w, &d.sparse)?))?;

    let triple = [("X.pgm", x.values()), ("L.pgm", &d.low_rank), ("S.pgm", &d.sparse)];
    let shared = shared_max(triple.iter().map(|(_, m)| *m));
    let mut scales = serde_json::Map::new();
    for (name, m) in triple {
        let max = if args.per_file_scale { shared_max([m]) } else { shared };
        scales.insert(name.into(), max.into());
        run.write(name, |w| Ok(write_pgm(w, m, max)?))?;
    }
    run.manifest.note("gray_scale_max", scales);

    run.finish()?;
    Ok(convergence_code(d.converged))
}

pub fn detect(args: &DetectArgs) -> Result<ExitCode, Failure> {
    let (cfg, _) = config::resolve(&args.common)?;
    let mut run = Run::start("detect", cfg.clone(), &args.common.out_dir)?;
    let (x, id) = input::load(&args.input, &cfg, &mut run)?;
    let found = run_detection(&x, &cfg.solver, &cfg.filter)?;
    note_solver(&mut run, &found.decomposition);
    let report = CandidateReport {
        matrix_id: args.matrix_id.clone().unwrap_or(id),
        config: cfg.filter,
        candidates: found.candidates,
    };
    run.manifest.note("candidates", report.candidates.len());
    run.manifest.note(
        "below_floor",
        report.candidates.iter().filter(|c| c.below_floor).count(),
    );
    run.write("candidates.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        writeln!(w)?;
        Ok(())
    })?;
    run.write("candidates.csv", |w| Ok(report.write_csv(w)?))?;
    run.finish()?;
    Ok(convergence_code(found.decomposition.converged))
}

pub fn rank_analysis(args: &RankArgs) -> Result<ExitCode, Failure> {
    let (cfg, _) = config::resolve(&args.common)?;
    let mut run = Run::start("rank-analysis", cfg.clone(), &args.common.out_dir)?;
    let (x, id) = input::load(&args.input, &cfg, &mut run)?;
    let named = if args.submatrices == 0 {
        vec![(id, x)]
    } else {
        let width = args.submatrices.to_string().len();
        submatrix_sample(&x, args.submatrices, args.min_dim, cfg.seed)?
            .into_iter()
            .enumerate()
            .map(|(k, s)| (format!("sub-{k:0width$}"), s))
            .collect()
    };
    let granularity = match args.granularity {
        Granularity::City => GeoGranularity::City,
        Granularity::Country => GeoGranularity::Country,
    };
    let report = rank_feature_report(&named, &cfg.solver, granularity);
    for f in &report.failures {
        run.warn(format!("{}: {}", f.matrix_id, f.error));
    }
    let unconverged = report.rows.iter().filter(|r| !r.converged).count();
    if unconverged > 0 {
        run.warn(format!("{unconverged} matrices did not converge; their ranks are reported as is"));
    }
    run.manifest.note("matrices", report.rows.len());
    run.manifest.note("correlation", report.correlation);

    run.write("rank_report.csv", |w| Ok(report.write_csv(w)?))?;
    run.write("rank_report.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        writeln!(w)?;
        Ok(())
    })?;
    run.write("rank_scatter.csv", |w| Ok(report.write_scatter_csv(w)?))?;
    run.finish()?;
    Ok(ExitCode::SUCCESS)
}

fn read_spec(path: &std::path::Path) -> Result<SyntheticSpec, Failure> {
    let file = File::open(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let spec: SyntheticSpec =
        serde_json::from_reader(file).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    spec.validate()
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    Ok(spec)
}

pub fn synth(args: &SynthArgs) -> Result<ExitCode, Failure> {
    let (mut cfg, seed) = config::resolve(&args.common)?;
    let mut spec = read_spec(&args.spec)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    cfg.seed = spec.seed;
    let mut run = Run::start("synth", cfg.clone(), &args.common.out_dir)?;
    run.manifest.inputs.push(args.spec.clone());

    let (x, truth) = generate(&spec)?;
    let (m, n) = x.shape();
    run.manifest.note("shape", [m, n]);
    run.manifest.note("truth_rank", truth.rank(cfg.solver.rank_tolerance)?);
    run.manifest.note("planted_rank", truth.planted_rank(cfg.solver.rank_tolerance)?);
    run.manifest.note("anomalies", truth.anomalies.len());
    run.manifest.note("missing_fraction", x.missing_fraction());

    run.write("X.csv", |w| Ok(x.write_csv(w)?))?;
    run.write("X.mask.csv", |w| Ok(x.write_mask_csv(w)?))?;
    run.write("source_tags.csv", |w| Ok(write_tags(w, "source_id", x.rows())?))?;
    run.write("dest_tags.csv", |w| Ok(write_tags(w, "prefix_or_ip", x.cols())?))?;
    run.write("truth_L.csv", |w| Ok(x.write_dense_csv(w, &truth.low_rank)?))?;
    run.write("truth_S.csv", |w| Ok(x.write_dense_csv(w, &truth.sparse)?))?;
    run.write("anomalies.csv", |w| {
        writeln!(w, "row,col,row_id,col_id,inflation_ms")?;
        for &(i, j) in &truth.anomalies {
            writeln!(w, "{i},{j},{},{},{}", x.rows()[i].id, x.cols()[j].id, truth.sparse[(i, j)])?;
        }
        Ok(())
    })?;

    if args.ips_per_prefix < cfg.min_ips {
        run.warn(format!(
            "--ips-per-prefix {} is below min_ips {}; re-ingesting the bundle with these settings drops every column",
            args.ips_per_prefix, cfg.min_ips
        ));
    }
    let bundle = to_measurements(&x, args.ips_per_prefix, spec.seed)?;
    run.write("measurements.csv", |w| {
        Ok(delayspace::measurement::write_measurements(w, &bundle.records)?)
    })?;
    run.write("prefixes.txt", |w| {
        for e in bundle.prefixes.entries() {
            match e.origin_asn {
                Some(asn) => writeln!(w, "{},{asn}", e.prefix)?,
                None => writeln!(w, "{}", e.prefix)?,
            }
        }
        Ok(())
    })?;

    if args.sweep {
        let bench = BenchConfig {
            solver: cfg.solver,
            filter: cfg.filter,
            min_inflation_ms: args.min_inflation_ms,
            ..BenchConfig::default()
        };
        let rows = benchmark(&spec, &bench)?;
        let mut means = serde_json::Map::new();
        for det in [Detector::Rpca, Detector::TwoSigma, Detector::Pca] {
            let picked: Vec<_> = rows.iter().filter(|r| r.detector == det).collect();
            let k = picked.len().max(1) as f64;
            means.insert(
                det.name().into(),
                serde_json::json!({
                    "precision": picked.iter().map(|r| r.score.precision).sum::<f64>() / k,
                    "recall": picked.iter().map(|r| r.score.recall).sum::<f64>() / k,
                }),
            );
        }
        run.manifest.note("seeds", spec.seeds());
        run.manifest.note("mean_scores", means);
        run.write("scores.csv", |w| Ok(write_scores_csv(w, &rows)?))?;
    }
    run.finish()?;
    Ok(ExitCode::SUCCESS)
}
