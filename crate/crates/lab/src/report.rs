//! Render metric tables into Markdown and SVG. Nothing here recomputes a
//! metric; every number comes from a CSV under `metrics/`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{LabError, Result};
use crate::io::read_csv_table;
use crate::run::RunDir;

type Table = (Vec<String>, Vec<Vec<String>>);

pub fn markdown_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut s = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for r in rows {
        s += &format!("| {} |\n", r.join(" | "));
    }
    s
}

fn column(t: &Table, name: &str) -> Result<usize> {
    t.0.iter().position(|h| h == name).ok_or_else(|| LabError::Internal(format!("column {name} missing")))
}

fn num(s: &str) -> Option<f64> {
    s.parse().ok()
}

/// Points `(x, y)` grouped by the value of column `group`.
fn series(t: &Table, group: &str, x: &str, y: &str) -> Result<BTreeMap<String, Vec<(f64, f64)>>> {
    let (g, xi, yi) = (column(t, group)?, column(t, x)?, column(t, y)?);
    let mut out: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &t.1 {
        if let (Some(a), Some(b)) = (num(&r[xi]), num(&r[yi])) {
            out.entry(r[g].clone()).or_default().push((a, b));
        }
    }
    for pts in out.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    Ok(out)
}

const PALETTE: [RGBColor; 6] = [RGBColor(31, 119, 180), RGBColor(214, 39, 40), RGBColor(44, 160, 44), RGBColor(255, 127, 14), RGBColor(148, 103, 189), RGBColor(127, 127, 127)];

/// Line plot with a y range of [0, 1.05].
pub fn line_plot(path: &Path, title: &str, x_desc: &str, y_desc: &str, lines: &[(String, Vec<(f64, f64)>)], log_x: bool) -> Result<()> {
    let err = |e: &dyn std::fmt::Display| LabError::Internal(format!("{}: {e}", path.display()));
    let xs = lines.iter().flat_map(|(_, p)| p.iter().map(|q| q.0));
    let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        return Err(LabError::Internal(format!("{}: nothing to plot", path.display())));
    }
    let tx = |x: f64| if log_x { x.log2() } else { x };
    let (lo, hi) = (tx(lo), tx(hi));
    let pad = if hi > lo { (hi - lo) * 0.05 } else { 1.0 };
    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(lo - pad..hi + pad, 0f64..1.05)
        .map_err(|e| err(&e))?;
    chart
        .configure_mesh()
        .x_desc(if log_x { format!("{x_desc} (log2)") } else { x_desc.to_string() })
        .y_desc(y_desc)
        .draw()
        .map_err(|e| err(&e))?;
    for (i, (name, pts)) in lines.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (tx(x), y)).collect();
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
            .map_err(|e| err(&e))?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        chart.draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled()))).map_err(|e| err(&e))?;
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::UpperRight)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| err(&e))?;
    root.present().map_err(|e| err(&e))?;
    Ok(())
}

fn plot_corruption(t: &Table, out: &Path) -> Result<()> {
    let mut lines: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for (side, pts) in series(t, "side", "rate", "solve_rate")? {
        lines.push((format!("{side} solve rate"), pts));
    }
    if let Some(bound) = series(t, "side", "rate", "bound")?.remove("false-positive") {
        lines.push(("false-positive bound".into(), bound));
    }
    line_plot(out, "Solve rate under verifier corruption", "corruption rate", "solve rate", &lines, false)
}

fn plot_star(t: &Table, out: &Path) -> Result<()> {
    let mut lines: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for (f, pts) in series(t, "format", "k", "all_correct")? {
        lines.push((format!("{f} measured"), pts));
    }
    for (f, pts) in series(t, "format", "k", "predicted")? {
        lines.push((format!("{f} r^k"), pts));
    }
    line_plot(out, "All-correct verification on star trees", "k", "accuracy", &lines, true)
}

fn plot_mc(t: &Table, out: &Path) -> Result<()> {
    let (a, s, an) = (column(t, "alpha")?, column(t, "survival")?, column(t, "analytic")?);
    let pick = |j: usize| t.1.iter().filter_map(|r| Some((num(&r[a])?, num(&r[j])?))).collect::<Vec<_>>();
    let lines = vec![("Monte Carlo".to_string(), pick(s)), ("(1 - alpha)^m".to_string(), pick(an))];
    line_plot(out, "Single-path survival", "alpha", "survival", &lines, false)
}

/// Render every metric table under `metrics/` into `report.md` and the
/// matching plots under `plots/`.
pub fn render(run: &RunDir) -> Result<Vec<PathBuf>> {
    let dir = run.metrics();
    let rd = std::fs::read_dir(&dir).map_err(|e| LabError::io(&dir, e))?;
    let mut files: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "csv")).collect();
    files.sort();
    if files.is_empty() {
        return Err(LabError::Missing(format!("no metric tables under {}", dir.display())));
    }
    let mut md = String::from("# Run report\n");
    let mut outputs = Vec::new();
    run.ensure(&run.plots())?;
    for f in &files {
        let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let t = read_csv_table(f)?;
        md += &format!("\n## {stem}\n\n{}", markdown_table(&t.0, &t.1));
        let plot: Option<fn(&Table, &Path) -> Result<()>> = match stem.as_str() {
            "corruption" => Some(plot_corruption),
            "star_sweep" => Some(plot_star),
            "threshold_mc" => Some(plot_mc),
            _ => None,
        };
        if let Some(p) = plot {
            let svg = run.plots().join(format!("{stem}.svg"));
            p(&t, &svg)?;
            md += &format!("\n![{stem}](plots/{stem}.svg)\n");
            outputs.push(svg);
        }
    }
    let path = run.root.join("report.md");
    std::fs::write(&path, md).map_err(|e| LabError::io(&path, e))?;
    outputs.push(path);
    Ok(outputs)
}
