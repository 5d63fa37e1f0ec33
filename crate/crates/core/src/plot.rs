//! Static SVG figures: learning curves and 2-d sample histograms.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};

const SIZE: (u32, u32) = (800, 520);
const PALETTE: [RGBColor; 9] = [
    RGBColor(0, 0, 0),
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(23, 190, 207),
];

/// `10·log10(x)`.
pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[derive(Debug, Clone)]
pub struct Series {
    /// An empty label keeps the series out of the legend.
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
    /// Palette slot, 0 is black; series sharing a slot share a colour.
    pub colour: usize,
}

impl Series {
    pub fn solid(label: impl Into<String>, colour: usize, points: Vec<(f64, f64)>) -> Self {
        Self { label: label.into(), points, dashed: false, colour }
    }

    pub fn dashed(label: impl Into<String>, colour: usize, points: Vec<(f64, f64)>) -> Self {
        Self { label: label.into(), points, dashed: true, colour }
    }
}

fn plot_error<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

fn bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        return None;
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5_f64.max(0.05 * lo.abs()) };
    Some((lo - pad, hi + pad))
}

/// Renders line series to an SVG document.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String> {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (x_lo, x_hi) = bounds(all().map(|p| p.0)).ok_or_else(|| Error::Plot("no finite points".into()))?;
    let (y_lo, y_hi) = bounds(all().map(|p| p.1)).ok_or_else(|| Error::Plot("no finite points".into()))?;

    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_error)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(45)
            .y_label_area_size(60)
            .build_cartesian_2d(x_lo..x_hi, y_lo..y_hi)
            .map_err(plot_error)?;
        chart
            .configure_mesh()
            .x_desc(x_label)
            .y_desc(y_label)
            .x_label_formatter(&|x| format!("{x:.0}"))
            .light_line_style(WHITE.mix(0.0))
            .draw()
            .map_err(plot_error)?;

        for s in series {
            let colour = PALETTE[s.colour % PALETTE.len()];
            let pts = s.points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite());
            let style = colour.stroke_width(if s.dashed { 2 } else { 1 });
            let drawn = if s.dashed {
                chart.draw_series(DashedLineSeries::new(pts, 6, 4, style))
            } else {
                chart.draw_series(LineSeries::new(pts, style))
            }
            .map_err(plot_error)?;
            if s.label.is_empty() {
                continue;
            }
            let dashed = s.dashed;
            drawn.label(s.label.as_str()).legend(move |(x, y)| {
                let end = if dashed { x + 8 } else { x + 20 };
                PathElement::new(vec![(x, y), (end, y)], colour.stroke_width(2))
            });
        }
        chart
            .configure_series_labels()
            .position(SeriesLabelPosition::UpperRight)
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .draw()
            .map_err(plot_error)?;
        root.present().map_err(plot_error)?;
    }
    Ok(svg)
}

pub fn write_line_chart(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    let svg = line_chart_svg(title, x_label, y_label, series)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

/// Square-binned counts of 2-d samples over their bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2d {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    /// `counts[ix][iy]`.
    pub counts: Vec<Vec<u64>>,
}

impl Histogram2d {
    pub fn new(samples: &[[f64; 2]], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Input("histogram needs at least one bin".into()));
        }
        let edges = |k: usize| -> Result<Vec<f64>> {
            let (lo, hi) = samples
                .iter()
                .map(|s| s[k])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::Input("histogram samples must be finite and non-empty".into()));
            }
            let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
            Ok((0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect())
        };
        let x_edges = edges(0)?;
        let y_edges = edges(1)?;
        let bin_of = |v: f64, e: &[f64]| {
            let t = (v - e[0]) / (e[bins] - e[0]) * bins as f64;
            (t.floor().max(0.0) as usize).min(bins - 1)
        };
        let mut counts = vec![vec![0u64; bins]; bins];
        for s in samples {
            counts[bin_of(s[0], &x_edges)][bin_of(s[1], &y_edges)] += 1;
        }
        Ok(Self { x_edges, y_edges, counts })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// Renders a histogram as a grey-scale heat map.
pub fn heatmap_svg(title: &str, x_label: &str, y_label: &str, hist: &Histogram2d) -> Result<String> {
    let bins = hist.bins();
    let peak = hist.counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let x_range = hist.x_edges[0]..hist.x_edges[bins];
    let y_range = hist.y_edges[0]..hist.y_edges[bins];

    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (600, 560)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_error)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(45)
            .y_label_area_size(65)
            .build_cartesian_2d(x_range, y_range)
            .map_err(plot_error)?;
        chart
            .configure_mesh()
            .disable_mesh()
            .x_desc(x_label)
            .y_desc(y_label)
            .draw()
            .map_err(plot_error)?;
        let cells = (0..bins).flat_map(|i| (0..bins).map(move |j| (i, j))).filter_map(|(i, j)| {
            let c = hist.counts[i][j];
            if c == 0 {
                return None;
            }
            let shade = (235.0 * (1.0 - c as f64 / peak)) as u8;
            Some(Rectangle::new(
                [(hist.x_edges[i], hist.y_edges[j]), (hist.x_edges[i + 1], hist.y_edges[j + 1])],
                RGBColor(shade, shade, shade).filled(),
            ))
        });
        chart.draw_series(cells).map_err(plot_error)?;
        root.present().map_err(plot_error)?;
    }
    Ok(svg)
}

pub fn write_heatmap(path: &Path, title: &str, x_label: &str, y_label: &str, hist: &Histogram2d) -> Result<()> {
    let svg = heatmap_svg(title, x_label, y_label, hist)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn db_convention() {
        assert_eq!(to_db(1.0), 0.0);
        assert!((to_db(0.09) - (-10.457574905606752)).abs() < 1e-12);
    }

    #[test]
    fn line_chart_is_deterministic_svg() {
        let s = vec![
            Series::solid("empirical", 0, (1..50).map(|n| (n as f64, (n as f64).ln())).collect()),
            Series::dashed("theory", 0, (1..50).map(|n| (n as f64, (n as f64).ln() + 0.1)).collect()),
        ];
        let a = line_chart_svg("curves", "n", "dB", &s).unwrap();
        let b = line_chart_svg("curves", "n", "dB", &s).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.contains("empirical") && a.contains("theory"));
    }

    #[test]
    fn line_chart_needs_points() {
        let s = vec![Series::solid("empty", 0, vec![(1.0, f64::NAN)])];
        assert!(matches!(line_chart_svg("t", "x", "y", &s), Err(Error::Plot(_))));
    }

    #[test]
    fn histogram_counts_every_sample() {
        let samples: Vec<[f64; 2]> = (0..1000).map(|i| [(i % 37) as f64, (i % 11) as f64 * 0.1]).collect();
        let h = Histogram2d::new(&samples, 10).unwrap();
        assert_eq!(h.total(), 1000);
        assert_eq!(h.x_edges.len(), 11);
        assert_eq!(h.x_edges[0], 0.0);
        assert_eq!(h.x_edges[10], 36.0);
        // the maximum lands in the last bin
        assert!(h.counts[9].iter().sum::<u64>() > 0);
    }

    #[test]
    fn histogram_of_constant_column() {
        let h = Histogram2d::new(&[[1.0, 2.0], [1.0, 3.0]], 4).unwrap();
        assert_eq!(h.total(), 2);
        assert!(Histogram2d::new(&[], 4).is_err());
        assert!(Histogram2d::new(&[[0.0, 0.0]], 0).is_err());
    }

    #[test]
    fn heatmap_renders() {
        let samples: Vec<[f64; 2]> = (0..200).map(|i| [(i as f64).sin(), (i as f64 * 0.7).cos()]).collect();
        let h = Histogram2d::new(&samples, 8).unwrap();
        let svg = heatmap_svg("pair", "a", "b", &h).unwrap();
        assert!(svg.contains("<rect"));
    }
}
