use std::fmt::Write as _;
use std::path::Path;

use crate::diagnostics::{UpdateHistogram, HIST_BINS, HIST_MIN_EXP};
use crate::error::{Error, Result};
use crate::harness::GridTable;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 90.0;
const TOP: f64 = 40.0;
const PLOT_W: f64 = 560.0;
const PLOT_H: f64 = 320.0;

/// A named polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy)]
pub enum SvgData<'a> {
    /// Metric per `(α, λ)` cell with the best cell circled. Cells are laid
    /// out by index, i.e. log-spaced for the usual log-spaced axes.
    Heatmap(&'a GridTable),
    /// Curves over steps; the y axis is logarithmic when every plotted value
    /// is positive. Non-finite points are skipped.
    Curves { series: &'a [Series], title: &'a str },
    /// The 29 octave bins of an update histogram.
    Histogram { hist: &'a UpdateHistogram, title: &'a str },
}

pub fn emit_svg(data: SvgData<'_>, path: &Path) -> Result<()> {
    std::fs::write(path, render_svg(data)?)?;
    Ok(())
}

pub fn render_svg(data: SvgData<'_>) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    match data {
        SvgData::Heatmap(t) => heatmap(&mut out, t)?,
        SvgData::Curves { series, title } => curves(&mut out, series, title)?,
        SvgData::Histogram { hist, title } => histogram(&mut out, hist, title),
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn short(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if (1e-3..1e4).contains(&v.abs()) {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}

fn title(out: &mut String, text: &str) {
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + PLOT_W / 2.0,
        esc(text)
    );
}

/// Blue (0) to yellow (1).
fn ramp(u: f64) -> String {
    let lerp = |a: f64, b: f64| (a + (b - a) * u).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(40.0, 250.0), lerp(30.0, 230.0), lerp(120.0, 40.0))
}

fn heatmap(out: &mut String, t: &GridTable) -> Result<()> {
    let (na, nl) = (t.alphas.len(), t.lambdas.len());
    if t.cells.len() != na * nl || t.cells.is_empty() {
        return Err(Error::NonRectangularGrid {
            expected: na * nl,
            found: t.cells.len(),
        });
    }
    title(out, "metric over (alpha, lambda); circle marks the best cell");
    let finite: Vec<f64> = t.cells.iter().map(|c| c.metric).filter(|m| m.is_finite()).collect();
    let use_log = !finite.is_empty() && finite.iter().all(|&m| m > 0.0);
    let tr = |m: f64| if use_log { m.log10() } else { m };
    let lo = finite.iter().map(|&m| tr(m)).fold(f64::INFINITY, f64::min);
    let hi = finite.iter().map(|&m| tr(m)).fold(f64::NEG_INFINITY, f64::max);
    let (cw, ch) = (PLOT_W / nl as f64, PLOT_H / na as f64);
    for (k, c) in t.cells.iter().enumerate() {
        let (i, j) = t.coords(k);
        let (x, y) = (LEFT + j as f64 * cw, TOP + i as f64 * ch);
        let fill = if c.metric.is_finite() {
            ramp(if hi > lo { (tr(c.metric) - lo) / (hi - lo) } else { 0.0 })
        } else {
            "#bbbbbb".into()
        };
        let _ = writeln!(
            out,
            r#"<rect class="cell" x="{x:.2}" y="{y:.2}" width="{cw:.2}" height="{ch:.2}" fill="{fill}" stroke="white"/>"#
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" fill="black" font-size="10">{}</text>"#,
            x + cw / 2.0,
            y + ch / 2.0 + 4.0,
            short(c.metric)
        );
    }
    let (bi, bj) = t.coords(t.best);
    let _ = writeln!(
        out,
        r#"<circle class="best" cx="{:.2}" cy="{:.2}" r="{:.2}" fill="none" stroke="black" stroke-width="3"/>"#,
        LEFT + (bj as f64 + 0.5) * cw,
        TOP + (bi as f64 + 0.5) * ch,
        0.35 * cw.min(ch)
    );
    for (j, l) in t.lambdas.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + (j as f64 + 0.5) * cw,
            TOP + PLOT_H + 18.0,
            short(*l)
        );
    }
    for (i, a) in t.alphas.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 8.0,
            TOP + (i as f64 + 0.5) * ch + 4.0,
            short(*a)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">lambda</text>"#,
        LEFT + PLOT_W / 2.0,
        TOP + PLOT_H + 40.0
    );
    let _ = writeln!(
        out,
        r#"<text x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">alpha</text>"#,
        TOP + PLOT_H / 2.0,
        TOP + PLOT_H / 2.0
    );
    Ok(())
}

fn curves(out: &mut String, series: &[Series], text: &str) -> Result<()> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    if pts.is_empty() {
        return Err(Error::ConfigInvalid("no finite points to plot".into()));
    }
    let log_y = pts.iter().all(|p| p.1 > 0.0);
    let ty = |y: f64| if log_y { y.log10() } else { y };
    let span = |v: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 1.0, hi + 1.0)
        }
    };
    let (x0, x1) = span(&mut pts.iter().map(|p| p.0));
    let (y0, y1) = span(&mut pts.iter().map(|p| ty(p.1)));
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * PLOT_W;
    let py = |y: f64| TOP + PLOT_H - (ty(y) - y0) / (y1 - y0) * PLOT_H;
    title(out, text);
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{PLOT_W}" height="{PLOT_H}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let u = k as f64 / 4.0;
        let xv = x0 + u * (x1 - x0);
        let yv = y0 + u * (y1 - y0);
        let ylab = if log_y { format!("1e{yv:.1}") } else { short(yv) };
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + u * PLOT_W,
            TOP + PLOT_H + 18.0,
            short(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            TOP + PLOT_H - u * PLOT_H + 4.0,
            ylab
        );
    }
    for (n, s) in series.iter().enumerate() {
        let color = PALETTE[n % PALETTE.len()];
        let finite: Vec<(f64, f64)> = s
            .points
            .iter()
            .copied()
            .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_y || *y > 0.0))
            .collect();
        if finite.len() == 1 {
            let _ = writeln!(
                out,
                r#"<circle class="marker" cx="{:.2}" cy="{:.2}" r="4" fill="{color}"/>"#,
                px(finite[0].0),
                py(finite[0].1)
            );
        } else if !finite.is_empty() {
            let path: Vec<String> = finite.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(
                out,
                r#"<polyline class="curve" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            );
        }
        let ly = TOP + 16.0 + 16.0 * n as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{ly:.2}" fill="{color}" text-anchor="end">{}</text>"#,
            LEFT + PLOT_W - 8.0,
            esc(&s.label)
        );
    }
    Ok(())
}

fn histogram(out: &mut String, h: &UpdateHistogram, text: &str) {
    title(out, text);
    let max = h.counts().iter().copied().max().unwrap_or(0).max(1) as f64;
    let bw = PLOT_W / HIST_BINS as f64;
    for (k, &c) in h.counts().iter().enumerate() {
        let bh = c as f64 / max * PLOT_H;
        let _ = writeln!(
            out,
            r#"<rect class="bar" x="{:.2}" y="{:.2}" width="{:.2}" height="{bh:.2}" fill="{}"><title>{c}</title></rect>"#,
            LEFT + k as f64 * bw + 1.0,
            TOP + PLOT_H - bh,
            bw - 2.0,
            PALETTE[0]
        );
        if k % 4 == 0 || k == HIST_BINS - 1 {
            let label = match k {
                0 => format!("&lt;=2^{HIST_MIN_EXP}"),
                k if k == HIST_BINS - 1 => "&gt;=1".to_string(),
                k => format!("2^{}", HIST_MIN_EXP + k as i32 - 1),
            };
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="10">{label}</text>"#,
                LEFT + (k as f64 + 0.5) * bw,
                TOP + PLOT_H + 16.0
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">|update| / alpha</text>"#,
        LEFT + PLOT_W / 2.0,
        TOP + PLOT_H + 40.0
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::GridCell;

    fn table() -> GridTable {
        let cells = (0..6)
            .map(|k| GridCell {
                alpha: [1e-4, 1e-3][k / 3],
                lambda: [0.0, 1e-5, 1e-4][k % 3],
                metric: [3.0, 2.0, f64::INFINITY, 0.5, 1.0, 4.0][k],
                error: None,
            })
            .collect();
        GridTable::new(vec![1e-4, 1e-3], vec![0.0, 1e-5, 1e-4], cells, false).unwrap()
    }

    #[test]
    fn heatmap_circles_the_best_cell() {
        let svg = render_svg(SvgData::Heatmap(&table())).unwrap();
        assert_eq!(svg.matches(r#"class="cell""#).count(), 6);
        assert_eq!(svg.matches(r#"class="best""#).count(), 1);
        // best is (α index 1, λ index 0): cell centre (LEFT + cw/2, TOP + 1.5 ch)
        let cx = LEFT + PLOT_W / 3.0 / 2.0;
        let cy = TOP + 1.5 * PLOT_H / 2.0;
        assert!(svg.contains(&format!(r#"cx="{cx:.2}" cy="{cy:.2}""#)), "{svg}");
        assert!(svg.contains("#bbbbbb"));
        let mut ragged = table();
        ragged.cells.pop();
        assert!(matches!(render_svg(SvgData::Heatmap(&ragged)), Err(Error::NonRectangularGrid { .. })));
    }

    #[test]
    fn single_point_curve_is_a_marker() {
        let s = [Series {
            label: "gd".into(),
            points: vec![(1.0, 0.5)],
        }];
        let svg = render_svg(SvgData::Curves { series: &s, title: "one" }).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches(r#"class="marker""#).count(), 1);
        assert_eq!(svg.matches(r#"class="curve""#).count(), 0);
        let empty = [Series {
            label: "x".into(),
            points: vec![(1.0, f64::NAN)],
        }];
        assert!(render_svg(SvgData::Curves { series: &empty, title: "" }).is_err());
    }

    #[test]
    fn histogram_has_29_bars() {
        let mut h = UpdateHistogram::new();
        h.record(0.01).unwrap();
        let svg = render_svg(SvgData::Histogram { hist: &h, title: "a<b" }).unwrap();
        assert_eq!(svg.matches(r#"class="bar""#).count(), 29);
        assert!(svg.contains("a&lt;b"));
    }
}
