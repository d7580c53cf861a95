//! SVG charts.

use std::path::Path;

use anyhow::{anyhow, Result};
use plotters::prelude::*;

const SIZE: (u32, u32) = (800, 480);

fn plot_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow!("plotting: {e:?}")
}

/// Loss per step.
pub fn loss_curve(path: &Path, title: &str, losses: &[f64]) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let finite: Vec<f64> = losses.iter().copied().filter(|v| v.is_finite()).collect();
    let hi = finite.iter().copied().fold(0.0f64, f64::max).max(1e-6) * 1.05;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(0usize..losses.len().max(2), 0.0..hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("step")
        .y_desc("loss")
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(
            losses.iter().enumerate().filter(|(_, v)| v.is_finite()).map(|(i, &v)| (i, v)),
            &BLUE,
        ))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// One bar per labelled count.
pub fn bar_chart(path: &Path, title: &str, labels: &[String], counts: &[usize]) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let hi = counts.iter().copied().max().unwrap_or(0).max(1) as f64 * 1.1;
    let n = counts.len().max(1);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(if labels.iter().any(|l| l.len() > 6) { 120 } else { 36 })
        .y_label_area_size(56)
        .build_cartesian_2d((0..n).into_segmented(), 0.0..hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n)
        .x_label_formatter(&|v| match v {
            SegmentValue::CenterOf(i) => labels.get(*i).cloned().unwrap_or_default(),
            _ => String::new(),
        })
        .x_label_style(("sans-serif", 11).into_font().transform(FontTransform::Rotate90))
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(
            Histogram::vertical(&chart)
                .style(BLUE.filled())
                .margin(4)
                .data(counts.iter().enumerate().map(|(i, &c)| (i, c as f64))),
        )
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Histogram given as bin edges and counts; bars are labelled by range.
pub fn histogram(path: &Path, title: &str, edges: &[f64], counts: &[usize]) -> Result<()> {
    let labels: Vec<String> = edges
        .windows(2)
        .map(|w| format!("{}–{}", short(w[0]), short(w[1])))
        .collect();
    bar_chart(path, title, &labels, counts)
}

fn short(v: f64) -> String {
    if v >= 1e8 {
        "∞".into()
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}").trim_end_matches('0').to_string()
    }
}
