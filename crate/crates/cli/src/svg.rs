//! Deterministic CSV-to-SVG plotting.
//!
//! The input is a numeric CSV table: a header line, then data rows. The
//! first column is the x axis; every further column becomes one polyline.
//! Rendering is a pure function of the input bytes, so plots are byte-stable
//! across runs and machines. The emitted SVG is standalone (no external
//! resources).

use std::path::Path;

use crate::{CliError, CliResult};

/// Plot kind: linear axes, or log-log axes with decade gridlines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    LogLog,
    Series,
}

impl PlotKind {
    pub fn parse(s: &str) -> CliResult<Self> {
        match s {
            "loglog" => Ok(PlotKind::LogLog),
            "series" => Ok(PlotKind::Series),
            other => Err(CliError::Config(format!(
                "unknown plot kind '{other}' (expected loglog or series)"
            ))),
        }
    }
}

struct Table {
    headers: Vec<String>,
    /// Column-major data.
    columns: Vec<Vec<f64>>,
}

fn parse_table(csv: &str) -> CliResult<Table> {
    let mut lines = csv.lines().filter(|l| !l.trim().is_empty());
    let header_line = lines
        .next()
        .ok_or_else(|| CliError::Config("csv is empty".into()))?;
    let headers: Vec<String> = header_line.split(',').map(|s| s.trim().to_string()).collect();
    if headers.len() < 2 {
        return Err(CliError::Config(
            "csv needs an x column and at least one series column".into(),
        ));
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    let mut rows = 0usize;
    for (lineno, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != headers.len() {
            return Err(CliError::Config(format!(
                "csv data row {} has {} cells, header has {}",
                lineno + 1,
                cells.len(),
                headers.len()
            )));
        }
        for (c, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                CliError::Config(format!(
                    "csv data row {}: '{}' is not a number",
                    lineno + 1,
                    cell.trim()
                ))
            })?;
            columns[c].push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::Config("csv has no data rows".into()));
    }
    Ok(Table { headers, columns })
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 560.0;
const ML: f64 = 80.0;
const MR: f64 = 24.0;
const MT: f64 = 24.0;
const MB: f64 = 56.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn fmt_px(v: f64) -> String {
    format!("{v:.2}")
}

/// Render a CSV table to a standalone SVG plot.
pub fn render_csv_plot(csv_text: &str, kind: PlotKind) -> CliResult<String> {
    let table = parse_table(csv_text)?;
    let xs = &table.columns[0];

    // Per-series drawable points in plot coordinates (log10 on loglog axes).
    let mut series: Vec<(usize, Vec<(f64, f64)>)> = Vec::new();
    for s in 1..table.columns.len() {
        let mut pts = Vec::new();
        for (&x, &y) in xs.iter().zip(&table.columns[s]) {
            match kind {
                PlotKind::Series => pts.push((x, y)),
                PlotKind::LogLog => {
                    if x > 0.0 && y > 0.0 {
                        pts.push((x.log10(), y.log10()));
                    }
                }
            }
        }
        if !pts.is_empty() {
            series.push((s, pts));
        }
    }
    if series.is_empty() {
        return Err(CliError::Config(match kind {
            PlotKind::LogLog => "log-log plot has no positive data points".into(),
            PlotKind::Series => "plot has no data points".into(),
        }));
    }

    let mut umin = f64::INFINITY;
    let mut umax = f64::NEG_INFINITY;
    let mut vmin = f64::INFINITY;
    let mut vmax = f64::NEG_INFINITY;
    for (_, pts) in &series {
        for &(u, v) in pts {
            if !u.is_finite() || !v.is_finite() {
                return Err(CliError::Config("plot data must be finite".into()));
            }
            umin = umin.min(u);
            umax = umax.max(u);
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
    }
    let expand = |lo: &mut f64, hi: &mut f64| {
        if *hi - *lo < 1e-12 {
            *lo -= 0.5;
            *hi += 0.5;
        } else {
            let pad = 0.05 * (*hi - *lo);
            *lo -= pad;
            *hi += pad;
        }
    };
    expand(&mut umin, &mut umax);
    expand(&mut vmin, &mut vmax);

    let px = |u: f64| ML + (u - umin) / (umax - umin) * (WIDTH - ML - MR);
    let py = |v: f64| HEIGHT - MB - (v - vmin) / (vmax - vmin) * (HEIGHT - MT - MB);

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"monospace\" font-size=\"12\">\n"
    ));
    out.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));

    // Gridlines and tick labels.
    match kind {
        PlotKind::LogLog => {
            let mut k = umin.ceil() as i64;
            while (k as f64) <= umax {
                let x = px(k as f64);
                out.push_str(&format!(
                    "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"#dddddd\" \
                     stroke-width=\"1\"/>\n",
                    fmt_px(x),
                    fmt_px(MT),
                    fmt_px(HEIGHT - MB)
                ));
                out.push_str(&format!(
                    "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"#444444\">1e{k}</text>\n",
                    fmt_px(x),
                    fmt_px(HEIGHT - MB + 18.0)
                ));
                k += 1;
            }
            let mut k = vmin.ceil() as i64;
            while (k as f64) <= vmax {
                let y = py(k as f64);
                out.push_str(&format!(
                    "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"#dddddd\" \
                     stroke-width=\"1\"/>\n",
                    fmt_px(ML),
                    fmt_px(y),
                    fmt_px(WIDTH - MR)
                ));
                out.push_str(&format!(
                    "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" fill=\"#444444\">1e{k}</text>\n",
                    fmt_px(ML - 6.0),
                    fmt_px(y + 4.0)
                ));
                k += 1;
            }
        }
        PlotKind::Series => {
            for i in 0..=4 {
                let f = i as f64 / 4.0;
                let u = umin + f * (umax - umin);
                let v = vmin + f * (vmax - vmin);
                let x = px(u);
                let y = py(v);
                out.push_str(&format!(
                    "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"#eeeeee\" \
                     stroke-width=\"1\"/>\n",
                    fmt_px(x),
                    fmt_px(MT),
                    fmt_px(HEIGHT - MB)
                ));
                out.push_str(&format!(
                    "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"#444444\">{u:.3e}</text>\n",
                    fmt_px(x),
                    fmt_px(HEIGHT - MB + 18.0)
                ));
                out.push_str(&format!(
                    "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"#eeeeee\" \
                     stroke-width=\"1\"/>\n",
                    fmt_px(ML),
                    fmt_px(y),
                    fmt_px(WIDTH - MR)
                ));
                out.push_str(&format!(
                    "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" fill=\"#444444\">{v:.3e}</text>\n",
                    fmt_px(ML - 6.0),
                    fmt_px(y + 4.0)
                ));
            }
        }
    }

    // Frame and x-axis name.
    out.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333333\" \
         stroke-width=\"1\"/>\n",
        fmt_px(ML),
        fmt_px(MT),
        fmt_px(WIDTH - ML - MR),
        fmt_px(HEIGHT - MT - MB)
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"#000000\">{}</text>\n",
        fmt_px(ML + 0.5 * (WIDTH - ML - MR)),
        fmt_px(HEIGHT - 12.0),
        escape_xml(&table.headers[0])
    ));

    // Polylines, one per series, plus a legend entry.
    for (slot, (s, pts)) in series.iter().enumerate() {
        let color = PALETTE[slot % PALETTE.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|&(u, v)| format!("{},{}", fmt_px(px(u)), fmt_px(py(v))))
            .collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            coords.join(" ")
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>\n",
            fmt_px(ML + 10.0),
            fmt_px(MT + 16.0 + 16.0 * slot as f64),
            escape_xml(&table.headers[*s])
        ));
    }

    out.push_str("</svg>\n");
    Ok(out)
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Read a CSV file, render it, and write the SVG next to it (or to `out`).
pub fn plot_file(csv_path: &Path, kind: PlotKind, out_path: &Path) -> CliResult<()> {
    let text = std::fs::read_to_string(csv_path).map_err(|e| {
        CliError::Config(format!("cannot read csv '{}': {e}", csv_path.display()))
    })?;
    let svg = render_csv_plot(&text, kind)?;
    std::fs::write(out_path, svg)?;
    Ok(())
}
