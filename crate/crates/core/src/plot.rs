//! Self-contained SVG line plots for run and screening reports.
//!
//! Deliberately minimal: linear axes, polyline series, optional shaded
//! bands (seed mean +/- std), and a legend. The output carries no
//! timestamps or other volatile metadata, so identical inputs produce
//! byte-identical files.

use std::path::Path;

use crate::error::{Error, Result};

pub const PALETTE: [&str; 7] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub color: String,
    pub points: Vec<(f64, f64)>,
}

/// A shaded region between a lower and an upper boundary sharing x
/// coordinates, drawn behind the series.
#[derive(Debug, Clone)]
pub struct BandSeries {
    pub color: String,
    pub lower: Vec<(f64, f64)>,
    pub upper: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub bands: Vec<BandSeries>,
    pub width: u32,
    pub height: u32,
}

impl LinePlot {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        LinePlot {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
            bands: Vec::new(),
            width: 860,
            height: 480,
        }
    }

    pub fn add_series(&mut self, label: impl Into<String>, points: Vec<(f64, f64)>) {
        let color = PALETTE[self.series.len() % PALETTE.len()].to_string();
        self.series.push(Series {
            label: label.into(),
            color,
            points,
        });
    }

    pub fn add_band(&mut self, color: impl Into<String>, lower: Vec<(f64, f64)>, upper: Vec<(f64, f64)>) {
        self.bands.push(BandSeries {
            color: color.into(),
            lower,
            upper,
        });
    }

    fn data_bounds(&self) -> Option<(f64, f64, f64, f64)> {
        let mut pts = self
            .series
            .iter()
            .flat_map(|s| s.points.iter())
            .chain(self.bands.iter().flat_map(|b| b.lower.iter()))
            .chain(self.bands.iter().flat_map(|b| b.upper.iter()))
            .filter(|(x, y)| x.is_finite() && y.is_finite());
        let first = pts.next()?;
        let (mut x0, mut y0, mut x1, mut y1) = (first.0, first.1, first.0, first.1);
        for &(x, y) in pts {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        Some((x0, y0, x1, y1))
    }

    pub fn to_svg(&self) -> Result<String> {
        let (x0, y0, x1, y1) = self
            .data_bounds()
            .ok_or_else(|| Error::Degenerate("plot has no finite points".into()))?;
        let pad_x = if (x1 - x0).abs() < 1e-300 { 1.0 } else { (x1 - x0) * 0.04 };
        let pad_y = if (y1 - y0).abs() < 1e-300 { 1.0 } else { (y1 - y0) * 0.08 };
        let (x0, x1) = (x0 - pad_x, x1 + pad_x);
        let (y0, y1) = (y0 - pad_y, y1 + pad_y);
        let (w, h) = (self.width as f64, self.height as f64);
        let (ml, mr, mt, mb) = (64.0, 16.0, 36.0, 48.0);
        let sx = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
        let sy = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);

        let mut svg = String::new();
        svg.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
            self.width, self.height, self.width, self.height
        ));
        svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"22\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
            w / 2.0,
            xml_escape(&self.title)
        ));

        // axes with 5 ticks per side
        for i in 0..=4 {
            let fx = x0 + (x1 - x0) * i as f64 / 4.0;
            let fy = y0 + (y1 - y0) * i as f64 / 4.0;
            let px = sx(fx);
            let py = sy(fy);
            svg.push_str(&format!(
                "<line x1=\"{px:.1}\" y1=\"{:.1}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"#dddddd\"/>\n",
                sy(y1),
                sy(y0)
            ));
            svg.push_str(&format!(
                "<line x1=\"{:.1}\" y1=\"{py:.1}\" x2=\"{:.1}\" y2=\"{py:.1}\" stroke=\"#dddddd\"/>\n",
                sx(x0),
                sx(x1)
            ));
            svg.push_str(&format!(
                "<text x=\"{px:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
                h - mb + 16.0,
                format_tick(fx)
            ));
            svg.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
                ml - 6.0,
                py + 4.0,
                format_tick(fy)
            ));
        }
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
            sx(x0), sy(y0), sx(x1), sy(y0)
        ));
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
            sx(x0), sy(y0), sx(x0), sy(y1)
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
            (ml + w - mr) / 2.0,
            h - 10.0,
            xml_escape(&self.x_label)
        ));
        svg.push_str(&format!(
            "<text x=\"14\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">{}</text>\n",
            (mt + h - mb) / 2.0,
            (mt + h - mb) / 2.0,
            xml_escape(&self.y_label)
        ));

        for band in &self.bands {
            if band.lower.is_empty() || band.upper.is_empty() {
                continue;
            }
            let mut d = String::from("M");
            for &(x, y) in &band.lower {
                d.push_str(&format!(" {:.2},{:.2}", sx(x), sy(y)));
            }
            for &(x, y) in band.upper.iter().rev() {
                d.push_str(&format!(" L {:.2},{:.2}", sx(x), sy(y)));
            }
            d.push_str(" Z");
            svg.push_str(&format!(
                "<path d=\"{d}\" fill=\"{}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n",
                band.color
            ));
        }

        for s in &self.series {
            if s.points.is_empty() {
                continue;
            }
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
                pts.join(" "),
                s.color
            ));
        }

        // legend, top-right
        for (i, s) in self.series.iter().enumerate() {
            let ly = mt + 8.0 + i as f64 * 16.0;
            svg.push_str(&format!(
                "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
                w - mr - 150.0,
                w - mr - 126.0,
                s.color
            ));
            svg.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
                w - mr - 120.0,
                ly + 4.0,
                xml_escape(&s.label)
            ));
        }
        svg.push_str("</svg>\n");
        Ok(svg)
    }

    pub fn write_svg(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_svg()?)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (0.001..10000.0).contains(&a) {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.2e}")
    }
}

/// Downsamples a series to at most `max_points` by fixed stride, always
/// keeping the final point. Plot files stay small; analysis always uses
/// the full CSV data.
pub fn thin_points(points: &[(f64, f64)], max_points: usize) -> Vec<(f64, f64)> {
    if points.len() <= max_points.max(2) {
        return points.to_vec();
    }
    let stride = points.len().div_ceil(max_points);
    let mut out: Vec<(f64, f64)> = points.iter().step_by(stride).copied().collect();
    if let (Some(&last), Some(&kept)) = (points.last(), out.last()) {
        if kept != last {
            out.push(last);
        }
    }
    out
}
