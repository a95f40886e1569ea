//! Static SVG overlays of episode trajectories, one file per state coordinate.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::records::Table;

const PALETTE: [RGBColor; 5] = [RGBColor(200, 30, 30), RGBColor(30, 80, 200), RGBColor(230, 140, 0), RGBColor(120, 40, 160), RGBColor(90, 90, 90)];

/// One labeled episode CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub table: Table,
}

impl Series {
    pub fn read(path: &Path) -> Result<Self> {
        let table = Table::read(path)?;
        if table.rows.is_empty() {
            return Err(Error::Format(format!("{}: no rows", path.display())));
        }
        let label = path
            .parent()
            .and_then(|d| d.file_name())
            .map(|d| format!("{}/{}", d.to_string_lossy(), path.file_stem().unwrap_or_default().to_string_lossy()))
            .unwrap_or_else(|| path.display().to_string());
        Ok(Self { label, table })
    }
}

fn bounds(lines: &[(String, Vec<(f64, f64)>)]) -> (f64, f64, f64, f64) {
    let pts = lines.iter().flat_map(|(_, l)| l.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    let pad = 0.05 * (y1 - y0).max(1e-9);
    (x0, x1.max(x0 + 1.0), y0 - pad, y1 + pad)
}

/// Writes `state_<i>.svg` into `out_dir` for every state coordinate; the
/// reference is taken from the first series.
pub fn plot_episodes(series: &[Series], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let first = series.first().ok_or_else(|| Error::Usage("plot needs at least one episode CSV".into()))?;
    let n = first.table.indexed_count("ref");
    if n == 0 {
        return Err(Error::Format(format!("{}: missing column ref_0", first.label)));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for i in 0..n {
        let t = first.table.column("t")?;
        let mut lines = vec![("reference".to_string(), t.iter().copied().zip(first.table.column(&format!("ref_{i}"))?).collect::<Vec<_>>())];
        for s in series {
            let t = s.table.column("t")?;
            lines.push((s.label.clone(), t.into_iter().zip(s.table.column(&format!("s_{i}"))?).collect()));
        }
        let path = out_dir.join(format!("state_{i}.svg"));
        draw(&path, &format!("state {i}"), &lines).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}

fn draw(path: &Path, title: &str, lines: &[(String, Vec<(f64, f64)>)]) -> std::result::Result<(), Box<dyn std::error::Error>> {
    let root = SVGBackend::new(path, (800, 450)).into_drawing_area();
    root.fill(&WHITE)?;
    let (x0, x1, y0, y1) = bounds(lines);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(30)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)?;
    chart.configure_mesh().x_desc("t").draw()?;
    for (k, (label, pts)) in lines.iter().enumerate() {
        let color = if k == 0 { RGBColor(20, 150, 40) } else { PALETTE[(k - 1) % PALETTE.len()] };
        chart
            .draw_series(LineSeries::new(pts.iter().copied().filter(|(_, y)| y.is_finite()), color.stroke_width(2)))?
            .label(label.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
    root.present()?;
    Ok(())
}
