use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{coverage_entropy, GridBounds};
use crate::error::{Error, Result};
use crate::pipeline::{read_evaluation_csv, write_atomic, RunDir};

/// Histogram resolution per dimension for coverage reports.
pub const COVERAGE_BINS: usize = 20;

/// Formats `x` with 6 significant digits, trailing zeros removed.
pub fn fmt_sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa.to_string()), exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Renders a line plot as a standalone SVG document.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 150.0, 40.0, 50.0);
    let pts = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 <= 0.0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 <= 0.0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            svg,
            r#"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="black"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
            top + ph,
            top + ph + 5.0,
            top + ph + 18.0,
            fmt_sig6(xv)
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{py:.2}" x2="{left}" y2="{py:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 5.0,
            left - 8.0,
            py + 4.0,
            fmt_sig6(yv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = top + 16.0 * i as f64 + 8.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{0}" y1="{ly}" x2="{1}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{2}" y="{3}">{4}</text>"#,
            w - right + 10.0,
            w - right + 30.0,
            w - right + 35.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(header)?;
    for r in rows {
        wtr.write_record(r)?;
    }
    wtr.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Copies a CSV, re-rendering every numeric cell with 6 significant digits.
fn rerender_csv(src: &Path) -> Result<Vec<u8>> {
    let mut rdr = csv::Reader::from_path(src)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| {
            Ok(r?
                .iter()
                .map(|cell| match cell.parse::<f64>() {
                    Ok(v) => fmt_sig6(v),
                    Err(_) => cell.to_string(),
                })
                .collect())
        })
        .collect::<Result<Vec<Vec<String>>>>()?;
    csv_bytes(&header, &rows)
}

/// Writes `reports/` for a run: reward and coverage curves (CSV and SVG)
/// plus formatted calibration and timing tables when those artifacts exist.
/// Output bytes depend only on the run artifacts.
pub fn report(dir: &RunDir) -> Result<Vec<String>> {
    let missing: Vec<String> = [dir.config(), dir.buffer()]
        .iter()
        .filter(|p| !p.exists())
        .map(|p| p.file_name().expect("file path").to_string_lossy().into_owned())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing.join(", ")));
    }
    let cfg = dir.read_config()?;
    let buffer = dir.read_buffer()?;
    let reports = dir.reports();
    fs::create_dir_all(&reports)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, bytes: &[u8]| -> Result<()> {
        write_atomic(&reports.join(name), bytes)?;
        written.push(name.to_string());
        Ok(())
    };

    let n_eval = cfg.counters.n_eval.max(1);
    let mut steps: Vec<usize> = (1..=buffer.len() / n_eval).map(|k| k * n_eval).collect();
    if buffer.len() % n_eval != 0 {
        steps.push(buffer.len());
    }
    let bounds = GridBounds::for_env(&cfg.env.name);
    let mut cov_rows = Vec::new();
    let mut cov_points = Vec::new();
    for &n in &steps {
        let states: Vec<&[f64]> = buffer[..n].iter().map(|z| z.s_next.as_slice()).collect();
        let h = if states.first().is_some_and(|s| s.len() >= 2) {
            coverage_entropy(&states, COVERAGE_BINS, bounds)?
        } else {
            f64::NAN
        };
        cov_rows.push(vec![n.to_string(), fmt_sig6(h)]);
        cov_points.push((n as f64, h));
    }
    emit(
        "coverage.csv",
        &csv_bytes(&["step".into(), "coverage_entropy".into()], &cov_rows)?,
    )?;
    emit(
        "coverage.svg",
        line_plot_svg(
            "State coverage",
            "exploration steps",
            "coverage entropy (nats)",
            &[Series {
                name: "coverage".into(),
                points: cov_points,
            }],
        )
        .as_bytes(),
    )?;

    if dir.evaluation().exists() {
        let rows = read_evaluation_csv(fs::File::open(dir.evaluation())?)?;
        let mut tasks: Vec<String> = Vec::new();
        let mut snaps: Vec<u64> = Vec::new();
        for r in &rows {
            if !tasks.contains(&r.task) {
                tasks.push(r.task.clone());
            }
            if !snaps.contains(&r.snapshot_step) {
                snaps.push(r.snapshot_step);
            }
        }
        snaps.sort_unstable();
        let mean = |step: u64, task: &str| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.snapshot_step == step && r.task == task)
                .filter_map(|r| r.value)
                .collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let header: Vec<String> = std::iter::once("step".to_string())
            .chain(tasks.iter().cloned())
            .collect();
        let table: Vec<Vec<String>> = snaps
            .iter()
            .map(|&st| {
                std::iter::once(st.to_string())
                    .chain(tasks.iter().map(|t| mean(st, t).map(fmt_sig6).unwrap_or_default()))
                    .collect()
            })
            .collect();
        emit("rewards.csv", &csv_bytes(&header, &table)?)?;
        let series: Vec<Series> = tasks
            .iter()
            .map(|t| Series {
                name: t.clone(),
                points: snaps
                    .iter()
                    .filter_map(|&st| mean(st, t).map(|m| (st as f64, m)))
                    .collect(),
            })
            .collect();
        emit(
            "rewards.svg",
            line_plot_svg(
                "Downstream task reward",
                "exploration steps",
                "mean episode reward",
                &series,
            )
            .as_bytes(),
        )?;
    }
    if dir.calibration().exists() {
        emit("calibration.csv", &rerender_csv(&dir.calibration())?)?;
    }
    if dir.timing().exists() {
        emit("timing.csv", &rerender_csv(&dir.timing())?)?;
    }
    Ok(written)
}
