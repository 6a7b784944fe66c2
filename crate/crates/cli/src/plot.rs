//! Static SVG charts.

use std::path::Path;

use plotters::prelude::*;

use crate::config::{CliError, CliResult};

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn plot_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Plot(e.to_string())
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn finite_range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    (lo <= hi).then_some((lo, hi))
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
    (lo - pad, hi + pad)
}

/// Line chart of each series; non-finite points are skipped.
pub fn line_chart(path: &Path, title: &str, x_desc: &str, y_desc: &str, series: &[Series]) -> CliResult<()> {
    let all = || series.iter().flat_map(|s| s.points.iter().filter(|p| p.1.is_finite()));
    let (x0, x1) = finite_range(all().map(|p| p.0)).unwrap_or((0.0, 1.0));
    let (y0, y1) = finite_range(all().map(|p| p.1)).unwrap_or((0.0, 1.0));
    let (y0, y1) = padded(y0, y1);
    let root = SVGBackend::new(path, (900, 520)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1.max(x0 + 1.0), y0..y1)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw().map_err(plot_err)?;
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(|p| p.1.is_finite()).collect();
        chart
            .draw_series(LineSeries::new(pts, color.stroke_width(2)))
            .map_err(plot_err)?
            .label(s.name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .position(SeriesLabelPosition::LowerRight)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

pub struct Bar {
    pub group: String,
    pub label: String,
    pub mean: f64,
    pub std: f64,
}

/// Grouped bars with ±std whiskers. Bars sharing a `label` share a colour.
pub fn bar_chart(path: &Path, title: &str, y_desc: &str, bars: &[Bar]) -> CliResult<()> {
    let mut groups: Vec<&str> = Vec::new();
    let mut labels: Vec<&str> = Vec::new();
    for b in bars {
        if !groups.contains(&b.group.as_str()) {
            groups.push(&b.group);
        }
        if !labels.contains(&b.label.as_str()) {
            labels.push(&b.label);
        }
    }
    let top = finite_range(bars.iter().map(|b| b.mean + b.std.max(0.0))).map_or(1.0, |r| r.1.max(1e-9) * 1.1);
    let root = SVGBackend::new(path, (900, 520)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let n_groups = groups.len().max(1) as f64;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..n_groups, 0.0..top)
        .map_err(plot_err)?;
    let group_names: Vec<String> = groups.iter().map(|g| g.to_string()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(groups.len().max(1) * 2 + 1)
        .x_label_formatter(&|x| {
            let k = x.floor() as usize;
            if (x - k as f64 - 0.5).abs() < 1e-6 {
                group_names.get(k).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .y_desc(y_desc)
        .draw()
        .map_err(plot_err)?;
    let width = 0.8 / labels.len().max(1) as f64;
    for (li, label) in labels.iter().enumerate() {
        let color = PALETTE[li % PALETTE.len()];
        let mine: Vec<&Bar> = bars.iter().filter(|b| b.label == *label && b.mean.is_finite()).collect();
        let x_of = |b: &Bar| groups.iter().position(|g| *g == b.group).unwrap_or(0) as f64 + 0.1 + li as f64 * width;
        chart
            .draw_series(mine.iter().map(|b| {
                let x = x_of(b);
                Rectangle::new([(x, 0.0), (x + width * 0.9, b.mean)], color.filled())
            }))
            .map_err(plot_err)?
            .label(label.to_string())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.filled()));
        chart
            .draw_series(mine.iter().filter(|b| b.std.is_finite()).map(|b| {
                let x = x_of(b) + width * 0.45;
                PathElement::new(vec![(x, (b.mean - b.std).max(0.0)), (x, b.mean + b.std)], BLACK.stroke_width(1))
            }))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .position(SeriesLabelPosition::UpperRight)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let line = dir.path().join("l.svg");
        line_chart(
            &line,
            "t",
            "x",
            "y",
            &[Series {
                name: "s".into(),
                points: vec![(0.0, 1.0), (1.0, f64::NAN), (2.0, 3.0)],
            }],
        )
        .unwrap();
        assert!(std::fs::read_to_string(&line).unwrap().contains("<svg"));
        let bars = dir.path().join("b.svg");
        bar_chart(
            &bars,
            "t",
            "y",
            &[Bar {
                group: "dice".into(),
                label: "run".into(),
                mean: 0.8,
                std: 0.1,
            }],
        )
        .unwrap();
        assert!(std::fs::read_to_string(&bars).unwrap().contains("<svg"));
    }
}
