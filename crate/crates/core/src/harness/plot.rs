use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::runlog::{columns, Table};
use crate::error::{Error, Result};

const LOSS_COLUMNS: [&str; 5] = ["total", "fuse", "sep", "rel", "proto"];
const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `step` plus the named columns, copied verbatim (blank cells stay blank).
fn trajectory(table: &Table, cols: &[String]) -> Result<String> {
    let mut idx = vec![table.require("step")?];
    for c in cols {
        idx.push(table.require(c)?);
    }
    let mut out = String::from("step");
    for c in cols {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for row in &table.rows {
        let cells: Vec<&str> = idx.iter().map(|&i| row.get(i).map_or("", String::as_str)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Line chart of the given columns against `step`; blank cells break the line.
fn chart(table: &Table, cols: &[String], path: &Path) -> Result<()> {
    let steps: Vec<f64> = (0..table.rows.len())
        .map(|r| table.float(r, "step"))
        .collect::<Result<_>>()?;
    let mut series = Vec::new();
    for c in cols {
        let ys: Vec<Option<f64>> = (0..table.rows.len())
            .map(|r| table.opt_float(r, c))
            .collect::<Result<_>>()?;
        series.push(ys);
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in series.iter().flatten().flatten() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let x_max = steps.last().copied().unwrap_or(1.0).max(1.0);
    let plot_err = |e: String| Error::Internal(format!("plot {}: {e}", path.display()));
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (800, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| plot_err(e.to_string()))?;
        let mut ctx = ChartBuilder::on(&root)
            .margin(20)
            .build_cartesian_2d(0.0..x_max, lo..hi)
            .map_err(|e| plot_err(e.to_string()))?;
        for (k, ys) in series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let mut segment = Vec::new();
            for (x, y) in steps.iter().zip(ys) {
                match y {
                    Some(y) => segment.push((*x, *y)),
                    None => {
                        if segment.len() > 1 {
                            ctx.draw_series(LineSeries::new(segment.clone(), &color))
                                .map_err(|e| plot_err(e.to_string()))?;
                        }
                        segment.clear();
                    }
                }
            }
            if !segment.is_empty() {
                ctx.draw_series(LineSeries::new(segment, &color))
                    .map_err(|e| plot_err(e.to_string()))?;
            }
        }
        root.present().map_err(|e| plot_err(e.to_string()))?;
    }
    write(path, &svg)
}

/// Trajectory CSVs and charts from a run log. Returns the files written.
pub fn plot_runlog(log: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let table = Table::read(log)?;
    let m = (0..)
        .take_while(|i| table.index(&format!("present_{i}")).is_some())
        .count();
    for c in columns(m) {
        table.require(&c)?;
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let per = |prefix: &str| (0..m).map(|i| format!("{prefix}_{i}")).collect::<Vec<_>>();
    let groups: Vec<(&str, Vec<String>)> = vec![
        ("losses", LOSS_COLUMNS.iter().map(|s| s.to_string()).collect()),
        ("weights", per("w")),
        ("gamma", per("gamma")),
        ("gaps", per("gap")),
    ];
    let mut written = Vec::new();
    for (name, cols) in groups {
        let csv_path = out_dir.join(format!("{name}.csv"));
        write(&csv_path, &trajectory(&table, &cols)?)?;
        let svg_path = out_dir.join(format!("{name}.svg"));
        chart(&table, &cols, &svg_path)?;
        written.push(csv_path);
        written.push(svg_path);
    }
    Ok(written)
}

/// Markdown rendering of a `combinations.csv` report.
pub fn plot_report(report: &Path, out_dir: &Path) -> Result<PathBuf> {
    let table = Table::read(report)?;
    for c in ["dsc_mean", "hd_mean", "n_samples"] {
        table.require(c)?;
    }
    let m = (0..)
        .take_while(|i| table.index(&format!("m{i}")).is_some())
        .count();
    if m == 0 {
        return Err(Error::MissingColumn("m0".into()));
    }
    let mut text = String::from("| ");
    text.push_str(&table.header.join(" | "));
    text.push_str(" |\n|");
    text.push_str(&"---|".repeat(table.header.len()));
    text.push('\n');
    for row in &table.rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if i < m {
                    if v == "1" { "●".into() } else { "○".into() }
                } else {
                    match v.parse::<f64>() {
                        Ok(x) if v.contains('.') => format!("{x:.4}"),
                        _ => v.clone(),
                    }
                }
            })
            .collect();
        text.push_str("| ");
        text.push_str(&cells.join(" | "));
        text.push_str(" |\n");
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("combinations.md");
    write(&path, &text)?;
    Ok(path)
}
