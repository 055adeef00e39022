//! Trajectory, sweep and correlation CSV writers and the run JSON sidecar.

use std::fs;
use std::io::Write;
use std::path::Path;

use ppqme::correlations::CorrelationSource;
use ppqme::propagator::TrajectoryDiagnostics;
use ppqme::units::HBAR_CM_FS;
use ppqme::{CorrelationTables, FrameSummary, PolaronFrame, Trajectory, C64};
use serde::Serialize;

use crate::config::RunConfig;

pub type IoResult = std::io::Result<()>;

fn create_parent(path: &Path) -> IoResult {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir),
        _ => Ok(()),
    }
}

fn writer(path: &Path) -> std::io::Result<csv::Writer<fs::File>> {
    create_parent(path)?;
    Ok(csv::Writer::from_path(path)?)
}

/// Shortest round-trip text, so identical runs give identical bytes.
fn num(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else if (1e-4..1e15).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// One row per sample: populations, eigenbasis coherences σ̃_pq for p < q in
/// the Schrödinger picture, trace and the minimum eigenvalue of σ̃.
pub fn write_trajectory(path: &Path, tr: &Trajectory, frame: &PolaronFrame) -> IoResult {
    let n = frame.n_sites();
    let mut w = writer(path)?;
    let mut header = vec!["t_fs".to_string()];
    header.extend((1..=n).map(|j| format!("P_{j}")));
    for p in 0..n {
        for q in p + 1..n {
            header.push(format!("Re_S_{}{}", p + 1, q + 1));
            header.push(format!("Im_S_{}{}", p + 1, q + 1));
        }
    }
    header.push("trace".into());
    header.push("min_eigenvalue".into());
    w.write_record(&header)?;
    for s in &tr.samples {
        let mut row = vec![num(s.t_fs)];
        row.extend(s.populations.iter().map(|&p| num(p)));
        for p in 0..n {
            for q in p + 1..n {
                let v = s.eigen_state[(p, q)] * C64::from_polar(1.0, -frame.gap(p, q) * s.t_fs / HBAR_CM_FS);
                row.push(num(v.re));
                row.push(num(v.im));
            }
        }
        row.push(num(s.trace.re));
        row.push(num(s.min_eigenvalue));
        w.write_record(&row)?;
    }
    w.flush()
}

#[derive(Serialize)]
pub struct RunMetadata<'a> {
    pub engine_version: &'static str,
    pub config: &'a RunConfig,
    /// How σ(0) was chosen; the default is an assumed donor start.
    pub initial_condition: String,
    pub frame: FrameSummary,
    pub diagnostics: Diagnostics,
}

#[derive(Serialize)]
pub struct Diagnostics {
    pub samples: usize,
    pub max_trace_drift: f64,
    pub max_hermiticity_defect: f64,
    pub min_eigenvalue: f64,
    pub max_population_imaginary: f64,
    pub coherence_metric: f64,
    pub final_populations: Vec<f64>,
}

impl Diagnostics {
    pub fn new(tr: &Trajectory) -> Self {
        let TrajectoryDiagnostics { max_trace_drift, max_hermiticity_defect, min_eigenvalue, max_population_imaginary } =
            tr.diagnostics();
        Self {
            samples: tr.samples.len(),
            max_trace_drift,
            max_hermiticity_defect,
            min_eigenvalue,
            max_population_imaginary,
            coherence_metric: tr.coherence_metric(0),
            final_populations: tr.samples.last().map(|s| s.populations.clone()).unwrap_or_default(),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> IoResult {
    create_parent(path)?;
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)
}

pub struct SweepRow {
    pub value: f64,
    pub outcome: Result<(f64, f64), String>,
}

/// value, coherence_metric, P_1 at t_max, status.
pub fn write_sweep_summary(path: &Path, param: &str, rows: &[SweepRow]) -> IoResult {
    let mut w = writer(path)?;
    w.write_record([param, "coherence_metric", "P_1_final", "status"])?;
    for r in rows {
        match &r.outcome {
            Ok((metric, p1)) => w.write_record([num(r.value), num(*metric), num(*p1), "ok".into()])?,
            Err(e) => w.write_record([num(r.value), String::new(), String::new(), format!("error: {e}")])?,
        }
    }
    w.flush()
}

/// Every table the run uses, as Re/Im columns on the whole-step grid.
pub fn write_correlations(path: &Path, tables: &CorrelationTables, stride: usize) -> IoResult {
    let n = tables.n_sites();
    let pairs: Vec<(usize, usize)> = tables.pairs().to_vec();
    type Series<'a> = (String, Box<dyn Fn(usize) -> C64 + 'a>);
    let mut series: Vec<Series> = Vec::new();
    for &(j, k) in &pairs {
        for &(jp, kp) in &pairs {
            series.push((format!("K_{}{}_{}{}", j + 1, k + 1, jp + 1, kp + 1), Box::new(move |m| tables.k(m, j, k, jp, kp))));
        }
    }
    for i in 0..n {
        for &(jp, kp) in &pairs {
            series.push((format!("M_{}_{}{}", i + 1, jp + 1, kp + 1), Box::new(move |m| tables.m(m, i, jp, kp))));
        }
    }
    for j in 0..n {
        for jp in 0..n {
            series.push((format!("C_{}_{}", j + 1, jp + 1), Box::new(move |m| tables.c(m, j, jp))));
        }
    }
    for &(j, k) in &pairs {
        for kp in 0..n {
            series.push((format!("f_{}{}_{}", j + 1, k + 1, kp + 1), Box::new(move |m| tables.f(m, j, k, kp))));
        }
    }
    for j in 0..n {
        for kp in 0..n {
            series.push((format!("h_{}_{}", j + 1, kp + 1), Box::new(move |m| C64::new(tables.h(m, j, kp), 0.0))));
        }
    }

    let mut w = writer(path)?;
    let mut header = vec!["t_fs".to_string()];
    for (name, _) in &series {
        header.push(format!("Re_{name}"));
        header.push(format!("Im_{name}"));
    }
    w.write_record(&header)?;
    let grid = tables.grid();
    for m in (0..grid.n_half()).step_by(2 * stride) {
        let mut row = vec![num(grid.time(m))];
        for (_, f) in &series {
            let v = f(m);
            row.push(num(v.re));
            row.push(num(v.im));
        }
        w.write_record(&row)?;
    }
    w.flush()
}
