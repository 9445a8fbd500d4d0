//! Job execution, CSV emission and manifests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dtc_core::dense::{run_dense_qsse, run_lindblad_markov};
use dtc_core::engine::{run_floquet, AveragedSeries, MagnetizationSeries};
use dtc_core::model::sample_disorder;
use rayon::prelude::*;

use crate::config::{Engine, ExperimentFile, ExperimentSpec, Point};
use crate::error::{HarnessError, Result};

/// Name of the manifest written next to the CSVs.
pub const MANIFEST: &str = "manifest.toml";

#[derive(Clone, Debug, PartialEq)]
pub struct PointResult {
    pub point: Point,
    pub series: AveragedSeries,
}

fn run_one(spec: &ExperimentSpec, point: &Point, realization: u64) -> Result<MagnetizationSeries> {
    let p = &point.params;
    let d = sample_disorder(p, realization);
    let series = match spec.engine {
        Engine::Comb => run_floquet(p, &d, &spec.run)?,
        Engine::DenseQsse => run_dense_qsse(p, &d, &spec.run, point.mode.reservoir())?,
        Engine::Lindblad => run_lindblad_markov(p, &d, &spec.run)?,
    };
    Ok(series)
}

/// Runs every (point, realization) job on a pool of `workers` threads
/// (all cores when `None`). Results do not depend on the worker count.
pub fn execute(spec: &ExperimentSpec, workers: Option<usize>) -> Result<Vec<PointResult>> {
    spec.validate()?;
    let points = spec.points()?;
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|i| (0..spec.realizations as u64).map(move |r| (i, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::Resource(format!("cannot start worker pool: {e}")))?;
    let runs = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, r)| run_one(spec, &points[i], r))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut out = Vec::with_capacity(points.len());
    for (point, chunk) in points.into_iter().zip(runs.chunks(spec.realizations)) {
        let series = AveragedSeries::from_runs(chunk)?;
        check_bounded(&point.label, &series)?;
        out.push(PointResult { point, series });
    }
    Ok(out)
}

/// `|m_mean| <= 1 + 10 norm_error` on every row.
fn check_bounded(label: &str, s: &AveragedSeries) -> Result<()> {
    for (k, (m, e)) in s.m_mean.iter().zip(&s.norm_error).enumerate() {
        if !(m.abs() <= 1.0 + 10.0 * e) {
            return Err(HarnessError::Numerical(format!(
                "{label}: |M| = {} at period {} exceeds the truncation budget ({e:e})",
                m.abs(),
                s.periods[k]
            )));
        }
    }
    Ok(())
}

fn num(out: &mut String, x: f64) {
    write!(out, "{x:.16e}").unwrap();
}

/// CSV text for one averaged series.
pub fn series_csv(s: &AveragedSeries, record_sz: bool) -> String {
    let mut out = String::from("period,time,m_mean,m_std,norm_error,max_bond");
    let n = s.sz_mean.first().map_or(0, Vec::len);
    if record_sz {
        for i in 0..n {
            write!(out, ",sz_{i}").unwrap();
        }
    }
    out.push('\n');
    for t in 0..s.periods.len() {
        write!(out, "{},", s.periods[t]).unwrap();
        for x in [s.times[t], s.m_mean[t], s.m_std[t], s.norm_error[t]] {
            num(&mut out, x);
            out.push(',');
        }
        write!(out, "{}", s.max_bond[t]).unwrap();
        if record_sz {
            for &z in &s.sz_mean[t] {
                out.push(',');
                num(&mut out, z);
            }
        }
        out.push('\n');
    }
    out
}

/// `|M_v - M_ref|` for every non-reference sweep value, one file per mode.
fn delta_csvs(spec: &ExperimentSpec, results: &[PointResult]) -> Vec<(String, String)> {
    let Some(sweep) = &spec.sweep else {
        return Vec::new();
    };
    let Some(reference) = sweep.reference else {
        return Vec::new();
    };
    let mut files = Vec::new();
    for &mode in &spec.modes {
        let of_mode: Vec<&PointResult> = results.iter().filter(|r| r.point.mode == mode).collect();
        let Some(base) = of_mode.iter().find(|r| r.point.sweep_value == Some(reference)) else {
            continue;
        };
        let others: Vec<&&PointResult> = of_mode.iter().filter(|r| r.point.sweep_value != Some(reference)).collect();
        let mut out = String::from("period,time");
        for r in &others {
            write!(out, ",dm_{}_{}", sweep.parameter, r.point.sweep_value.unwrap()).unwrap();
        }
        out.push('\n');
        let b = &base.series;
        for t in 0..b.periods.len() {
            write!(out, "{},", b.periods[t]).unwrap();
            num(&mut out, b.times[t]);
            for r in &others {
                out.push(',');
                num(&mut out, (r.series.m_mean[t] - b.m_mean[t]).abs());
            }
            out.push('\n');
        }
        files.push((format!("delta_m_{}.csv", mode.name()), out));
    }
    files
}

/// Re-runnable description of `spec` with its provenance in comments.
pub fn manifest_text(spec: &ExperimentSpec) -> Result<String> {
    let mut out = String::new();
    out.push_str("# dtc experiment manifest; reproduce with `dtc run <this file>`\n");
    writeln!(out, "# resolved from preset {}", spec.preset).unwrap();
    out.push_str("# units: energies in J^z, times in 1/J^z, phases in radians\n");
    writeln!(
        out,
        "# disorder: realizations 0..{} drawn from seed {}",
        spec.realizations, spec.params.seed
    )
    .unwrap();
    if spec.preset == crate::config::Preset::Fig1 {
        out.push_str("# choice: coupling values 0, 0.3 and 1.0 J^z are a bracketing choice, not read from the figure\n");
    }
    out.push('\n');
    let body = toml::to_string(&ExperimentFile::from_spec(spec))
        .map_err(|e| HarnessError::config(format!("cannot serialize manifest: {e}")))?;
    out.push_str(&body);
    Ok(out)
}

/// Runs the experiment and writes one CSV per point, the delta files, and
/// the manifest into `spec.output`. On failure nothing is left behind.
pub fn run_experiment(spec: &ExperimentSpec, workers: Option<usize>) -> Result<Vec<PathBuf>> {
    let results = execute(spec, workers)?;
    let mut files: Vec<(String, String)> = results
        .iter()
        .map(|r| (format!("{}.csv", r.point.label), series_csv(&r.series, spec.record_sz)))
        .collect();
    files.extend(delta_csvs(spec, &results));
    files.push((MANIFEST.to_string(), manifest_text(spec)?));
    write_all(&spec.output, &files)
}

fn write_all(dir: &Path, files: &[(String, String)]) -> Result<Vec<PathBuf>> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| HarnessError::Io { path, source }
    };
    let created_dir = !dir.exists();
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, text).map_err(io(&path)) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            let _ = fs::remove_file(&path);
            if created_dir {
                let _ = fs::remove_dir(dir);
            }
            return Err(e);
        }
        written.push(path);
    }
    Ok(written)
}
