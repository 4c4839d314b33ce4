use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::ThermoSeries;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

/// Columns plotted by [`write_plots`] when present.
pub const PLOT_COLUMNS: [&str; 3] = ["Temp", "TotEng", "Press"];

/// Line chart of `column` against `Step` (or row index when there is no
/// `Step` column) as a standalone SVG document. Non-finite points are
/// skipped and split the polyline.
pub fn render_svg(series: &ThermoSeries, column: &str) -> Option<String> {
    let y_idx = series.column_index(column)?;
    let x_idx = series.column_index("Step");
    let points: Vec<Option<(f64, f64)>> = series
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let x = x_idx.map_or(i as f64, |xi| row[xi]);
            let y = row[y_idx];
            (x.is_finite() && y.is_finite()).then_some((x, y))
        })
        .collect();
    let finite: Vec<(f64, f64)> = points.iter().flatten().copied().collect();
    if finite.is_empty() {
        return None;
    }
    let (x_lo, x_hi) = bounds(finite.iter().map(|p| p.0));
    let (y_lo, y_hi) = bounds(finite.iter().map(|p| p.1));
    let sx = |x: f64| MARGIN + (x - x_lo) / (x_hi - x_lo) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    svg.push_str(r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = write!(
        svg,
        r##"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="#444"/><line x1="{m}" y1="{m}" x2="{m}" y2="{b}" stroke="#444"/>"##,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    let _ = write!(svg, r#"<text x="{}" y="24" font-family="sans-serif" font-size="14">{}</text>"#, MARGIN, escape(column));
    let _ = write!(
        svg,
        r#"<text x="4" y="{}" font-family="sans-serif" font-size="10">{:.4e}</text><text x="4" y="{}" font-family="sans-serif" font-size="10">{:.4e}</text>"#,
        MARGIN,
        y_hi,
        HEIGHT - MARGIN,
        y_lo
    );
    for run in points.split(Option::is_none) {
        let coords: Vec<String> = run.iter().flatten().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        if coords.is_empty() {
            continue;
        }
        let _ = write!(svg, r##"<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{}"/>"##, coords.join(" "));
    }
    svg.push_str("</svg>\n");
    Some(svg)
}

/// Writes `<column>.svg` into `dir` for each of [`PLOT_COLUMNS`] present in
/// the series. Returns the written paths.
pub fn write_plots(series: &ThermoSeries, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for column in PLOT_COLUMNS {
        if let Some(svg) = render_svg(series, column) {
            let path = dir.join(format!("{}.svg", column.to_lowercase()));
            std::fs::write(&path, svg)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi - lo > 0.0 {
        (lo, hi)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
