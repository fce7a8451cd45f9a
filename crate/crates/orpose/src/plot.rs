//! Static SVG line charts.

use std::path::Path;

use std::ops::Range;

use plotters::coord::ranged1d::{DefaultFormatting, KeyPointHint};
use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Exact x tick positions; six even ticks when `None`.
    pub x_ticks: Option<Vec<f64>>,
}

/// Linear f64 axis whose key points are given explicitly.
struct TickedAxis {
    range: Range<f64>,
    ticks: Vec<f64>,
}

impl Ranged for TickedAxis {
    type FormatOption = DefaultFormatting;
    type ValueType = f64;

    fn map(&self, v: &f64, limit: (i32, i32)) -> i32 {
        let t = (v - self.range.start) / (self.range.end - self.range.start);
        limit.0 + (t * (limit.1 - limit.0) as f64).round() as i32
    }

    fn key_points<H: KeyPointHint>(&self, _hint: H) -> Vec<f64> {
        self.ticks.clone()
    }

    fn range(&self) -> Range<f64> {
        self.range.clone()
    }
}

fn span(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

impl LineChart {
    pub fn x_tick_positions(&self) -> Vec<f64> {
        if let Some(t) = &self.x_ticks {
            return t.clone();
        }
        let (lo, hi) = span(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
        (0..6).map(|i| lo + (hi - lo) * i as f64 / 5.0).collect()
    }

    pub fn render_svg(&self) -> Result<String> {
        let err = |e: &dyn std::fmt::Display| Error::Config(format!("plot {:?}: {e}", self.title));
        let ticks = self.x_tick_positions();
        let (mut x0, mut x1) = span(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).chain(ticks.iter().copied()));
        if self.x_ticks.is_some() {
            let half = ticks.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min) / 2.0;
            if half.is_finite() {
                x0 = ticks[0] - half;
                x1 = ticks[ticks.len() - 1] + half;
            }
        }
        let (y0, y1) = span(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
        let mut out = String::new();
        {
            let root = SVGBackend::with_string(&mut out, (800, 500)).into_drawing_area();
            root.fill(&WHITE).map_err(|e| err(&e))?;
            let mut chart = ChartBuilder::on(&root)
                .caption(&self.title, ("sans-serif", 22))
                .margin(12)
                .x_label_area_size(40)
                .y_label_area_size(56)
                .build_cartesian_2d(TickedAxis { range: x0..x1, ticks: ticks.clone() }, y0..y1)
                .map_err(|e| err(&e))?;
            chart
                .configure_mesh()
                .x_desc(self.x_label.as_str())
                .y_desc(self.y_label.as_str())
                .x_labels(ticks.len())
                .x_label_formatter(&|v| {
                    let r = (v * 1000.0).round() / 1000.0;
                    if r.fract() == 0.0 {
                        format!("{}", r as i64)
                    } else {
                        format!("{r}")
                    }
                })
                .draw()
                .map_err(|e| err(&e))?;
            for (i, s) in self.series.iter().enumerate() {
                let color = Palette99::pick(i).to_rgba();
                let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(|p| p.1.is_finite()).collect();
                chart
                    .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
                    .map_err(|e| err(&e))?
                    .label(s.name.as_str())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
                chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled()))).map_err(|e| err(&e))?;
            }
            if self.series.len() > 1 {
                chart
                    .configure_series_labels()
                    .background_style(WHITE.mix(0.85))
                    .border_style(BLACK)
                    .draw()
                    .map_err(|e| err(&e))?;
            }
            root.present().map_err(|e| err(&e))?;
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fsutil::write_bytes(path, self.render_svg()?.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_with_fixed_ticks() {
        let c = LineChart {
            title: "pck".into(),
            x_label: "severity".into(),
            y_label: "PCK".into(),
            series: vec![Series { name: "a".into(), points: (1..=5).map(|s| (s as f64, 80.0 - s as f64)).collect() }],
            x_ticks: Some((1..=5).map(f64::from).collect()),
        };
        let svg = c.render_svg().unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(c.x_tick_positions().len(), 5);
    }

    #[test]
    fn empty_and_flat_series_do_not_panic() {
        let mut c = LineChart { title: "t".into(), x_label: "x".into(), y_label: "y".into(), series: vec![], x_ticks: None };
        c.render_svg().unwrap();
        c.series.push(Series { name: "flat".into(), points: vec![(0.0, 1.0), (1.0, 1.0)] });
        c.render_svg().unwrap();
    }
}
