//! Minimal SVG line and bar charts.

use std::fmt::Write as _;
use std::path::Path;

use super::results::{column_name, COLUMN_ORDER};
use super::{io_err, ExperimentError, Result, SweepResult};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, x_label: &str, y_label: &str) {
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        out,
        r#"<path d="M{x0},{y1} V{y0} H{x1}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

/// Screen y for a value in `[0, max]`.
fn y_of(v: f64, max: f64) -> f64 {
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    y0 - (v / max).clamp(0.0, 1.0) * (y0 - y1)
}

fn y_ticks(out: &mut String, max: f64, fmt: impl Fn(f64) -> String) {
    for i in 0..=5 {
        let v = max * i as f64 / 5.0;
        let y = y_of(v, max);
        let _ = writeln!(
            out,
            r##"<line x1="{}" y1="{y}" x2="{LEFT}" y2="{y}" stroke="black"/><text x="{}" y="{}" text-anchor="end">{}</text>"##,
            LEFT - 5.0,
            LEFT - 8.0,
            y + 4.0,
            fmt(v)
        );
    }
}

/// mIoU-vs-SNR chart with one polyline per pipeline column that has any
/// defined value. With several results, legend entries are suffixed with
/// the modulation (or the result's position).
pub fn render_plot(results: &[SweepResult]) -> Result<String> {
    if results.is_empty() {
        return Err(ExperimentError::Plot("no results to plot".into()));
    }
    let snrs: Vec<f64> = results.iter().flat_map(|r| r.snr()).collect();
    if snrs.is_empty() {
        return Err(ExperimentError::Plot("results have no rows".into()));
    }
    let lo = snrs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = snrs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x_of = |s: f64| LEFT + (s - lo) / span * (WIDTH - LEFT - RIGHT);

    let mut out = String::new();
    header(&mut out, "mIoU vs SNR");
    axes(&mut out, "SNR dB", "mIoU %");
    y_ticks(&mut out, 1.0, |v| format!("{:.0}", 100.0 * v));
    let mut ticks: Vec<f64> = snrs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for s in ticks {
        let x = x_of(s);
        let y = HEIGHT - BOTTOM;
        let _ = writeln!(
            out,
            r#"<line x1="{x}" y1="{y}" x2="{x}" y2="{}" stroke="black"/><text x="{x}" y="{}" text-anchor="middle">{s}</text>"#,
            y + 5.0,
            y + 18.0
        );
    }

    let mut series = 0;
    for (ri, result) in results.iter().enumerate() {
        let suffix = match (results.len(), result.modulation()) {
            (1, _) => String::new(),
            (_, Some(m)) => format!(", {}", m.name()),
            (_, None) => format!(", #{}", ri + 1),
        };
        for p in COLUMN_ORDER {
            let pts: Vec<String> = result
                .rows
                .iter()
                .filter_map(|r| {
                    r.miou
                        .get(p)
                        .map(|v| format!("{},{}", x_of(r.snr_db), y_of(v, 1.0)))
                })
                .collect();
            if pts.is_empty() {
                continue;
            }
            let color = COLORS[series % COLORS.len()];
            let label = format!("{} ({}){suffix}", p.label(), column_name(p));
            let _ = writeln!(
                out,
                r#"<polyline data-column="{}" points="{}" fill="none" stroke="{color}" stroke-width="2"><title>{}</title></polyline>"#,
                column_name(p),
                pts.join(" "),
                escape(&label)
            );
            let ly = TOP + 10.0 + 20.0 * series as f64;
            let lx = WIDTH - RIGHT + 10.0;
            let _ = writeln!(
                out,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                lx + 20.0,
                lx + 25.0,
                ly + 4.0,
                escape(&label)
            );
            series += 1;
        }
    }
    if series == 0 {
        return Err(ExperimentError::Plot("every series is undefined".into()));
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn write_plot(results: &[SweepResult], path: &Path) -> Result<()> {
    let svg = render_plot(results)?;
    std::fs::write(path, svg).map_err(io_err(path))
}

/// Vertical bar chart of labeled non-negative values.
pub fn render_bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> Result<String> {
    if bars.is_empty() {
        return Err(ExperimentError::Plot("no bars to plot".into()));
    }
    if bars.iter().any(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
        return Err(ExperimentError::Plot(
            "bar values must be finite and non-negative".into(),
        ));
    }
    let max = bars.iter().map(|b| b.1).fold(0.0, f64::max);
    let max = if max > 0.0 { max * 1.1 } else { 1.0 };
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, "", y_label);
    y_ticks(&mut out, max, |v| format!("{v:.3}"));
    let slot = (WIDTH - LEFT - RIGHT) / bars.len() as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = LEFT + slot * (i as f64 + 0.15);
        let y = y_of(*v, max);
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{y}" width="{}" height="{}" fill="{}"><title>{}</title></rect>"#,
            slot * 0.7,
            HEIGHT - BOTTOM - y,
            COLORS[i % COLORS.len()],
            escape(&format!("{label}: {v}"))
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            x + slot * 0.35,
            HEIGHT - BOTTOM + 18.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{PerPipeline, SweepRow};

    fn result(vals: &[[Option<f64>; 3]]) -> SweepResult {
        SweepResult {
            rows: vals
                .iter()
                .enumerate()
                .map(|(i, v)| SweepRow {
                    snr_db: 5.0 * (i + 1) as f64,
                    miou: PerPipeline {
                        full_tx: v[0],
                        traditional: v[1],
                        split: v[2],
                    },
                    extra: None,
                })
                .collect(),
            meta: None,
        }
    }

    fn polylines(svg: &str) -> Vec<Vec<(f64, f64)>> {
        let doc = roxmltree::Document::parse(svg).unwrap();
        doc.descendants()
            .filter(|n| n.has_tag_name("polyline"))
            .map(|n| {
                n.attribute("points")
                    .unwrap()
                    .split(' ')
                    .map(|p| {
                        let (x, y) = p.split_once(',').unwrap();
                        (x.parse().unwrap(), y.parse().unwrap())
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn three_pipelines_three_polylines() {
        let r = result(&[
            [Some(0.2), Some(0.1), Some(0.3)],
            [Some(0.5), Some(0.4), Some(0.6)],
            [Some(0.9), Some(0.8), Some(1.0)],
        ]);
        let svg = render_plot(std::slice::from_ref(&r)).unwrap();
        let lines = polylines(&svg);
        assert_eq!(lines.len(), 3);
        for l in &lines {
            // Rising values map to falling screen y.
            assert!(l.windows(2).all(|w| w[1].1 < w[0].1 && w[1].0 > w[0].0));
        }
        assert!(svg.contains(">SNR dB<") && svg.contains(">mIoU %<"));
        assert!(svg.contains("(miou_f)") && svg.contains("(miou_n)") && svg.contains("(miou_s)"));
        assert_eq!(polylines(&render_plot(&[r.clone(), r]).unwrap()).len(), 6);
    }

    #[test]
    fn undefined_columns_are_skipped() {
        let r = result(&[[None, Some(0.5), None], [None, Some(0.7), Some(0.1)]]);
        let lines = polylines(&render_plot(&[r]).unwrap());
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].len(), 1);
        assert!(render_plot(&[result(&[[None, None, None]])]).is_err());
        assert!(render_plot(&[]).is_err());
    }

    #[test]
    fn bars_are_well_formed() {
        let svg = render_bar_chart(
            "Bit rate",
            "Mbps",
            &[
                ("Traditional".into(), 25.1),
                ("Full <Sem>".into(), 5.2),
                ("Split".into(), 1.0),
            ],
        )
        .unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(
            doc.descendants().filter(|n| n.has_tag_name("rect")).count(),
            4
        );
        assert!(render_bar_chart("t", "y", &[]).is_err());
        assert!(render_bar_chart("t", "y", &[("a".into(), f64::NAN)]).is_err());
    }
}
