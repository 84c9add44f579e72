//! Time-series CSV, JSON summaries and optional SVG plots.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use plotters::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::Thrusts;

use super::{ExperimentConfig, RunMetrics, RunOutput, StepRecord};

/// Header of `timeseries.csv`, in column order.
pub const CSV_COLUMNS: [&str; 39] = [
    "t",
    "p_x", "p_y", "p_z",
    "rot_x", "rot_y", "rot_z",
    "v_x", "v_y", "v_z",
    "w_x", "w_y", "w_z",
    "e_p_x", "e_p_y", "e_p_z",
    "e_ori_x", "e_ori_y", "e_ori_z",
    "u_cmd_0", "u_cmd_1", "u_cmd_2", "u_cmd_3", "u_cmd_4", "u_cmd_5", "u_cmd_6", "u_cmd_7",
    "u_act_0", "u_act_1", "u_act_2", "u_act_3", "u_act_4", "u_act_5", "u_act_6", "u_act_7",
    "x_0", "x_1",
    "bound_violation",
    "solver_iterations",
];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    }
}

fn row(r: &StepRecord) -> Vec<String> {
    // `Display` for f64 prints the shortest representation that parses back exactly.
    let mut out = Vec::with_capacity(CSV_COLUMNS.len());
    out.push(r.t.to_string());
    for v in [r.position, r.rotation, r.velocity, r.angular_velocity, r.e_p, r.e_ori] {
        out.extend(v.iter().map(f64::to_string));
    }
    out.extend(r.u_cmd.iter().map(f64::to_string));
    out.extend(r.u_act.iter().map(f64::to_string));
    out.extend(r.x.iter().map(f64::to_string));
    out.push(r.bound_violation.to_string());
    out.push(r.solver_iterations.to_string());
    out
}

pub fn write_timeseries(path: &Path, log: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(CSV_COLUMNS).map_err(|e| csv_err(path, e))?;
    for r in log {
        w.write_record(row(r)).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_timeseries(path: &Path) -> Result<Vec<StepRecord>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rd.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(Error::Config(format!("{}: unexpected CSV header", path.display())));
    }
    let mut log = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let v3 = |i: usize| Vector3::new(vals[i], vals[i + 1], vals[i + 2]);
        log.push(StepRecord {
            t: vals[0],
            position: v3(1),
            rotation: v3(4),
            velocity: v3(7),
            angular_velocity: v3(10),
            e_p: v3(13),
            e_ori: v3(16),
            u_cmd: Thrusts::from_column_slice(&vals[19..27]),
            u_act: Thrusts::from_column_slice(&vals[27..35]),
            x: Vector2::new(vals[35], vals[36]),
            bound_violation: vals[37],
            solver_iterations: vals[38],
        });
    }
    Ok(log)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    use std::io::Write;
    writeln!(w).map_err(|e| Error::io(path, e))
}

/// Content of `metrics.json`. Contains nothing run-dependent besides the metrics, so
/// identical runs produce identical files.
#[derive(Debug, Serialize)]
struct MetricsFile<'a> {
    allocator: &'a str,
    seed: u64,
    dt: f64,
    duration: f64,
    metrics: &'a RunMetrics,
}

/// Writes `timeseries.csv`, `metrics.json`, `cycles.json` (receding horizon only) and,
/// with `plots`, three SVG figures. Returns the written paths.
pub fn emit_outputs(
    run: &RunOutput,
    cfg: &ExperimentConfig,
    dir: &Path,
    plots: bool,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let csv = dir.join("timeseries.csv");
    write_timeseries(&csv, &run.log)?;
    written.push(csv);

    let metrics = dir.join("metrics.json");
    write_json(
        &metrics,
        &MetricsFile {
            allocator: run.allocator.as_str(),
            seed: cfg.seed,
            dt: cfg.dt,
            duration: cfg.duration,
            metrics: &run.metrics,
        },
    )?;
    written.push(metrics);

    if !run.cycles.is_empty() {
        let cycles = dir.join("cycles.json");
        write_json(&cycles, &run.cycles)?;
        written.push(cycles);
    }

    if plots {
        let t: Vec<f64> = run.log.iter().map(|r| r.t).collect();
        let u_act: Vec<Vec<f64>> = (0..crate::N_ROTORS)
            .map(|i| run.log.iter().map(|r| r.u_act[i]).collect())
            .collect();
        let delta: Vec<Vec<f64>> = u_act
            .iter()
            .map(|s| {
                std::iter::once(0.0)
                    .chain(s.windows(2).map(|w| w[1] - w[0]))
                    .collect()
            })
            .collect();
        let errors = vec![
            run.log.iter().map(|r| r.e_p.norm()).collect(),
            run.log.iter().map(|r| r.e_ori.norm()).collect(),
        ];
        let figures = [
            ("u_act.svg", "motor thrust [N]", u_act, motor_labels()),
            ("delta_u.svg", "thrust change per step [N]", delta, motor_labels()),
            (
                "errors.svg",
                "tracking error norm [m, rad]",
                errors,
                vec!["position".into(), "orientation".into()],
            ),
        ];
        for (name, ylabel, series, labels) in figures {
            let path = dir.join(name);
            line_plot(&path, ylabel, &t, &series, &labels)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn motor_labels() -> Vec<String> {
    (0..crate::N_ROTORS).map(|i| format!("motor {i}")).collect()
}

fn line_plot(
    path: &Path,
    ylabel: &str,
    t: &[f64],
    series: &[Vec<f64>],
    labels: &[String],
) -> Result<()> {
    let plot_err = |e: String| Error::Config(format!("{}: plotting failed: {e}", path.display()));
    let (t0, t1) = match (t.first(), t.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        _ => (0.0, 1.0),
    };
    let (mut lo, mut hi) = series
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
        lo -= 1.0;
        hi += 1.0;
        if !(lo.is_finite() && hi.is_finite()) {
            (lo, hi) = (-1.0, 1.0);
        }
    }
    let root = SVGBackend::new(path, (960, 540)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(t0..t1, lo..hi)
        .map_err(|e| plot_err(e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc("time [s]")
        .y_desc(ylabel)
        .draw()
        .map_err(|e| plot_err(e.to_string()))?;
    for (i, (s, label)) in series.iter().zip(labels).enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(t.iter().copied().zip(s.iter().copied()), color))
            .map_err(|e| plot_err(e.to_string()))?
            .label(label.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(e.to_string()))?;
    root.present().map_err(|e| plot_err(e.to_string()))?;
    Ok(())
}
