//! Static SVG charts and the plain-text summary of a finished sweep.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use prl_core::diagnostics::MetricRecord;
use prl_core::prune::PruneSchedule;

use crate::error::{HarnessError, Result};
use crate::sweep::{read_metrics, run_dir, ResultTable};

const PALETTE: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Data range padded so flat series still get a visible axis.
fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// An SVG document assembled from panels.
pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Self {
            width,
            height,
            body: String::new(),
        }
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }

    fn axes(
        &mut self,
        x0: f64,
        y0: f64,
        w: f64,
        h: f64,
        title: &str,
        xr: (f64, f64),
        yr: (f64, f64),
    ) {
        let b = &mut self.body;
        let _ = writeln!(
            b,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">{}</text>",
            x0 + w / 2.0,
            y0 - 8.0,
            esc(title)
        );
        let _ = writeln!(b, "<rect x=\"{x0}\" y=\"{y0}\" width=\"{w}\" height=\"{h}\" fill=\"none\" stroke=\"#444\"/>");
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let y = y0 + h - f * h;
            let x = x0 + f * w;
            let _ = writeln!(
                b,
                "<line x1=\"{x0}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#ddd\"/>",
                x0 + w
            );
            let _ = writeln!(
                b,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
                x0 - 4.0,
                y + 4.0,
                fmt_tick(yr.0 + f * (yr.1 - yr.0))
            );
            if xr.1 > xr.0 {
                let _ = writeln!(
                    b,
                    "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
                    y0 + h + 14.0,
                    fmt_tick(xr.0 + f * (xr.1 - xr.0))
                );
            }
        }
    }

    /// Line plot of `series` inside the box at `(x0, y0)`.
    pub fn line_panel(
        &mut self,
        x0: f64,
        y0: f64,
        w: f64,
        h: f64,
        title: &str,
        series: &[Series],
        legend: bool,
    ) {
        let xr = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
        let yr = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
        self.axes(x0, y0, w, h, title, xr, yr);
        let sx = |x: f64| x0 + (x - xr.0) / (xr.1 - xr.0) * w;
        let sy = |y: f64| y0 + h - (y - yr.0) / (yr.1 - yr.0) * h;
        for (i, s) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                self.body,
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
                pts.join(" ")
            );
            if legend {
                let ly = y0 + 12.0 + 13.0 * i as f64;
                let _ = writeln!(
                    self.body,
                    "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"3\" fill=\"{color}\"/>",
                    x0 + w + 10.0,
                    ly - 4.0
                );
                let _ = writeln!(
                    self.body,
                    "<text x=\"{}\" y=\"{ly}\">{}</text>",
                    x0 + w + 24.0,
                    esc(&s.name)
                );
            }
        }
    }

    /// Bars with optional `(low, high)` whiskers.
    pub fn bar_panel(
        &mut self,
        x0: f64,
        y0: f64,
        w: f64,
        h: f64,
        title: &str,
        bars: &[(String, f64, Option<(f64, f64)>)],
    ) {
        let yr = range(
            bars.iter()
                .flat_map(|(_, v, ci)| [Some(*v), ci.map(|c| c.0), ci.map(|c| c.1)])
                .flatten()
                .chain(std::iter::once(0.0)),
        );
        self.axes(x0, y0, w, h, title, (0.0, 0.0), yr);
        let sy = |y: f64| y0 + h - (y - yr.0) / (yr.1 - yr.0) * h;
        let slot = w / bars.len().max(1) as f64;
        for (i, (name, v, ci)) in bars.iter().enumerate() {
            let cx = x0 + slot * (i as f64 + 0.5);
            let (top, base) = (sy(v.max(0.0)), sy(v.min(0.0)));
            let color = PALETTE[i % PALETTE.len()];
            let _ = writeln!(self.body, "<rect x=\"{:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\"/>", cx - slot * 0.35, slot * 0.7, base - top);
            if let Some((lo, hi)) = ci {
                let _ = writeln!(self.body, "<line x1=\"{cx:.2}\" y1=\"{:.2}\" x2=\"{cx:.2}\" y2=\"{:.2}\" stroke=\"black\"/>", sy(*lo), sy(*hi));
                for y in [sy(*lo), sy(*hi)] {
                    let _ = writeln!(self.body, "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"black\"/>", cx - 5.0, cx + 5.0);
                }
            }
            let _ = writeln!(
                self.body,
                "<text transform=\"translate({cx:.2},{}) rotate(35)\">{}</text>",
                y0 + h + 12.0,
                esc(name)
            );
        }
    }

    /// Heat map of a square matrix with values in [-1, 1].
    pub fn heatmap_panel(&mut self, x0: f64, y0: f64, size: f64, title: &str, m: &[Vec<f64>]) {
        let n = m.len().max(1);
        let cell = size / n as f64;
        let _ = writeln!(
            self.body,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">{}</text>",
            x0 + size / 2.0,
            y0 - 8.0,
            esc(title)
        );
        for (i, row) in m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let v = v.clamp(-1.0, 1.0);
                let (r, g, b) = if v >= 0.0 {
                    (255.0, 255.0 * (1.0 - v), 255.0 * (1.0 - v))
                } else {
                    (255.0 * (1.0 + v), 255.0 * (1.0 + v), 255.0)
                };
                let _ = writeln!(
                    self.body,
                    "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"rgb({:.0},{:.0},{:.0})\"/>",
                    x0 + j as f64 * cell,
                    y0 + i as f64 * cell,
                    cell,
                    cell,
                    r,
                    g,
                    b
                );
            }
        }
    }
}

pub fn summary_text(table: &ResultTable) -> String {
    let mut s = String::new();
    let failed = table.rows.iter().filter(|r| !r.is_ok()).count();
    let _ = writeln!(s, "runs: {} ({} failed)", table.rows.len(), failed);
    let groups = table.aggregate();
    if groups.is_empty() {
        return s;
    }
    let _ = writeln!(
        s,
        "\n{:<40} {:>5} {:>9} {:>21} {:>9}",
        "group", "runs", "IQM", "95% CI", "sparsity"
    );
    for g in &groups {
        let iqm = g.iqm.map_or("-".into(), |v| format!("{v:.4}"));
        let ci =
            g.ci.map_or("-".into(), |(lo, hi)| format!("[{lo:.4}, {hi:.4}]"));
        let _ = writeln!(
            s,
            "{:<40} {:>5} {:>9} {:>21} {:>9.4}",
            g.group, g.runs, iqm, ci, g.mean_final_sparsity
        );
    }
    for r in table.rows.iter().filter(|r| !r.is_ok()) {
        let _ = writeln!(
            s,
            "failed: {} seed {}: {:?}",
            r.cell.label(),
            r.seed,
            r.status
        );
    }
    s
}

/// Mean of each field over seeds, aligned by row index.
fn mean_curve(runs: &[Vec<MetricRecord>], field: fn(&MetricRecord) -> f64) -> Vec<(f64, f64)> {
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let step = runs[0][i].step as f64;
            let mean = runs.iter().map(|r| field(&r[i])).sum::<f64>() / runs.len() as f64;
            (step, mean)
        })
        .collect()
}

const DIAGNOSTICS: &[(&str, fn(&MetricRecord) -> f64)] = &[
    ("Q-target variance", |r| r.q_variance),
    ("parameter norm", |r| r.params_norm),
    ("Q norm", |r| r.q_norm),
    ("srank", |r| r.srank as f64),
    ("dormant fraction", |r| r.dormant_fraction),
    ("loss", |r| r.loss),
];

/// Render charts for the sweep in `out` (reading `results.csv` and the
/// per-run metrics). Returns the files written. Charts whose inputs are
/// missing are skipped with a warning on stderr.
pub fn emit_report(out: &Path) -> Result<Vec<PathBuf>> {
    let results = out.join("results.csv");
    let table = if results.exists() {
        ResultTable::load(&results)?
    } else {
        eprintln!(
            "warning: {} not found, writing an empty summary",
            results.display()
        );
        ResultTable::default()
    };
    let mut written = Vec::new();
    let mut write = |name: &str, body: String| -> Result<()> {
        let p = out.join(name);
        fs::write(&p, body).map_err(|e| HarnessError::io(&p, e))?;
        written.push(p);
        Ok(())
    };
    write("summary.txt", summary_text(&table))?;
    if !table.rows.is_empty() {
        let groups = table.aggregate();
        let bars: Vec<(String, f64, Option<(f64, f64)>)> = groups
            .iter()
            .filter_map(|g| g.iqm.map(|v| (g.group.clone(), v, g.ci)))
            .collect();
        if !bars.is_empty() {
            let mut svg = Svg::new(120.0 + 70.0 * bars.len() as f64, 420.0);
            svg.bar_panel(
                60.0,
                40.0,
                70.0 * bars.len() as f64,
                260.0,
                "final IQM (normalised) with 95% CI",
                &bars,
            );
            write("iqm.svg", svg.finish())?;
        }

        // Per-cell seed-averaged curves.
        let mut cells: Vec<(String, Vec<Vec<MetricRecord>>)> = Vec::new();
        for r in table.rows.iter().filter(|r| r.is_ok()) {
            let path = run_dir(out, &r.cell, r.seed).join("metrics.csv");
            match read_metrics(&path) {
                Ok(m) if !m.is_empty() => {
                    match cells.iter_mut().find(|(k, _)| *k == r.cell.label()) {
                        Some((_, v)) => v.push(m),
                        None => cells.push((r.cell.label(), vec![m])),
                    }
                }
                Ok(_) => eprintln!("warning: {} is empty, skipped", path.display()),
                Err(e) => eprintln!("warning: skipping {}: {e}", path.display()),
            }
        }
        if !cells.is_empty() {
            let curves = |field: fn(&MetricRecord) -> f64| -> Vec<Series> {
                cells
                    .iter()
                    .map(|(name, runs)| Series {
                        name: name.clone(),
                        points: mean_curve(runs, field),
                    })
                    .collect()
            };
            let legend_w = 260.0;
            let mut svg = Svg::new(560.0 + legend_w, 340.0);
            svg.line_panel(
                60.0,
                40.0,
                480.0,
                260.0,
                "normalised return",
                &curves(|r| r.normalized_return),
                true,
            );
            write("learning_curves.svg", svg.finish())?;

            let mut svg = Svg::new(560.0 + legend_w, 340.0);
            svg.line_panel(
                60.0,
                40.0,
                480.0,
                260.0,
                "realised sparsity",
                &curves(|r| r.sparsity),
                true,
            );
            write("sparsity.svg", svg.finish())?;

            let mut svg = Svg::new(3.0 * 300.0 + legend_w, 2.0 * 260.0 + 20.0);
            for (i, (title, field)) in DIAGNOSTICS.iter().enumerate() {
                let (col, row) = ((i % 3) as f64, (i / 3) as f64);
                svg.line_panel(
                    60.0 + 300.0 * col,
                    40.0 + 260.0 * row,
                    220.0,
                    190.0,
                    title,
                    &curves(*field),
                    i == 2,
                );
            }
            write("diagnostics.svg", svg.finish())?;
        }
    }

    let cov_dir = out.join("covariance");
    if cov_dir.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(&cov_dir)
            .map_err(|e| HarnessError::io(&cov_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        entries.sort();
        for p in entries {
            match read_square_csv(&p) {
                Ok(m) => {
                    let stem = p
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .unwrap_or("covariance")
                        .to_string();
                    let mut svg = Svg::new(360.0, 380.0);
                    svg.heatmap_panel(20.0, 40.0, 320.0, &stem, &m);
                    write(&format!("covariance/{stem}.svg"), svg.finish())?;
                }
                Err(e) => eprintln!("warning: skipping {}: {e}", p.display()),
            }
        }
    }
    Ok(written)
}

pub fn write_square_csv(m: &prl_core::Matrix) -> String {
    let mut s = String::new();
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

fn read_square_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
        })
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| HarnessError::format(path, e.to_string()))?;
    if rows.iter().any(|r| r.len() != rows.len()) {
        return Err(HarnessError::format(path, "matrix is not square"));
    }
    Ok(rows)
}

/// `t,sparsity` rows of a schedule at every step in `0..=total`, thinned to
/// at most `max_rows` evenly spaced points.
pub fn schedule_csv(sched: &PruneSchedule, total: u64, max_rows: u64) -> String {
    let stride = (total / max_rows.max(1)).max(1);
    let mut s = String::from("t,sparsity\n");
    let mut t = 0;
    while t <= total {
        let _ = writeln!(s, "{t},{}", sched.sparsity_at(t));
        t += stride;
    }
    if (total % stride) != 0 {
        let _ = writeln!(s, "{total},{}", sched.sparsity_at(total));
    }
    s
}

pub fn schedule_svg(sched: &PruneSchedule, total: u64) -> String {
    let points: Vec<(f64, f64)> = (0..=200)
        .map(|i| {
            let t = total * i / 200;
            (t as f64, sched.sparsity_at(t))
        })
        .collect();
    let mut svg = Svg::new(560.0, 340.0);
    svg.line_panel(
        60.0,
        40.0,
        460.0,
        260.0,
        "sparsity schedule",
        &[Series {
            name: "schedule".into(),
            points,
        }],
        false,
    );
    svg.finish()
}
