//! Minimal SVG line charts rendered from the experiment CSVs.

use std::fmt::Write as _;

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};
use crate::experiments::{curve_means, DynamicsRow, SweepRow};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub width: u32,
    pub height: u32,
    pub log_x: bool,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / n.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil();
    (0..)
        .map(|i| (first + f64::from(i)) * step)
        .take_while(|t| *t <= hi + 1e-9 * span)
        .map(|t| if t.abs() < 1e-12 * step { 0.0 } else { t })
        .collect()
}

/// Render `series` as an SVG document.
pub fn line_chart(series: &[Series], spec: &ChartSpec) -> String {
    let (w, h) = (f64::from(spec.width), f64::from(spec.height));
    let (left, right, top, bottom) = (60.0, 140.0, 30.0, 45.0);
    let pw = (w - left - right).max(10.0);
    let ph = (h - top - bottom).max(10.0);
    let tx = |x: f64| if spec.log_x { x.max(1e-12).log10() } else { x };
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(tx(x));
        x1 = x1.max(tx(x));
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y1) = (0.0, 1.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| left + (tx(x) - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        left + pw / 2.0,
        escape(&spec.title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for t in nice_ticks(y0, y1, 5) {
        let y = sy(t);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            left + pw,
            left - 5.0,
            y + 4.0,
            fmt_tick(t)
        );
    }
    for t in nice_ticks(x0, x1, 6) {
        let x = left + (t - x0) / (x1 - x0) * pw;
        let label = if spec.log_x { fmt_tick(10f64.powf(t)) } else { fmt_tick(t) };
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
            top + ph + 15.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 8.0,
        escape(&spec.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(15,{:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        top + ph / 2.0,
        escape(&spec.y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            path.join(" ")
        );
        let ly = top + 12.0 + 16.0 * i as f64;
        let lx = left + pw + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            lx + 22.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    let t = format!("{v:.3}");
    let t = t.trim_end_matches('0').trim_end_matches('.');
    if t == "-0" {
        "0".into()
    } else {
        t.to_string()
    }
}

fn parse<T: DeserializeOwned>(csv_text: &str) -> Result<Vec<T>> {
    csv::Reader::from_reader(csv_text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::Io(e.to_string()))
}

/// Mean error per axis value against `l_ts`. `metric` is `cot_error` or
/// `icl_error`.
pub fn sweep_chart(csv_text: &str, metric: &str, width: u32, height: u32) -> Result<String> {
    let rows: Vec<SweepRow> = parse(csv_text)?;
    let f: fn(&SweepRow) -> f64 = match metric {
        "cot_error" => |r| r.cot_error,
        "icl_error" => |r| r.icl_error,
        other => return Err(Error::InvalidParameter(format!("unknown metric {other}"))),
    };
    let axis = rows.first().map_or("value", |r| r.axis.as_str()).to_string();
    let series = curve_means(&rows, f)
        .into_iter()
        .map(|(v, pts)| Series {
            label: format!("{axis} = {v}"),
            points: pts.into_iter().map(|(l, e)| (l as f64, e)).collect(),
        })
        .collect::<Vec<_>>();
    Ok(line_chart(
        &series,
        &ChartSpec {
            title: format!("{metric} vs testing examples"),
            x_label: "l_ts".into(),
            y_label: metric.into(),
            width,
            height,
            log_x: false,
        },
    ))
}

/// The four attention cells over training for the first seed in the file.
pub fn dynamics_chart(csv_text: &str, width: u32, height: u32) -> Result<String> {
    let rows: Vec<DynamicsRow> = parse(csv_text)?;
    let seed = rows.first().map(|r| r.seed);
    let rows: Vec<&DynamicsRow> = rows.iter().filter(|r| Some(r.seed) == seed).collect();
    let cell = |label: &str, f: fn(&DynamicsRow) -> f64| Series {
        label: label.into(),
        points: rows.iter().map(|r| (r.iter as f64, f(r))).collect(),
    };
    let series = vec![
        cell("same pattern, same step", |r| r.attn_same_pat_same_step),
        cell("same pattern, diff step", |r| r.attn_same_pat_diff_step),
        cell("diff pattern, same step", |r| r.attn_diff_pat_same_step),
        cell("diff pattern, diff step", |r| r.attn_diff_pat_diff_step),
    ];
    Ok(line_chart(
        &series,
        &ChartSpec {
            title: "attention mass during training".into(),
            x_label: "iteration".into(),
            y_label: "attention".into(),
            width,
            height,
            log_x: false,
        },
    ))
}

/// CoT and ICL error for the violating and holding models, log-scaled x.
pub fn dichotomy_chart(csv_text: &str, width: u32, height: u32) -> Result<String> {
    let rows: Vec<SweepRow> = parse(csv_text)?;
    let mut series = Vec::new();
    for (name, f) in [
        ("CoT", (|r: &SweepRow| r.cot_error) as fn(&SweepRow) -> f64),
        ("ICL", |r: &SweepRow| r.icl_error),
    ] {
        for (v, pts) in curve_means(&rows, f) {
            let which = if v == 1.0 { "holding" } else { "violating" };
            series.push(Series {
                label: format!("{name}, {which}"),
                points: pts.into_iter().map(|(l, e)| (l as f64, e)).collect(),
            });
        }
    }
    Ok(line_chart(
        &series,
        &ChartSpec {
            title: "CoT vs ICL".into(),
            x_label: "l_ts".into(),
            y_label: "error".into(),
            width,
            height,
            log_x: true,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_contains_one_polyline_per_series() {
        let s = vec![
            Series { label: "a".into(), points: vec![(1.0, 0.5), (2.0, 0.25)] },
            Series { label: "b<c".into(), points: vec![(1.0, 0.4), (2.0, 0.1)] },
        ];
        let spec = ChartSpec {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            width: 400,
            height: 300,
            log_x: false,
        };
        let svg = line_chart(&s, &spec);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("b&lt;c"));
        assert!(svg.starts_with("<svg"));
    }

    #[test]
    fn empty_chart_renders() {
        let spec = ChartSpec {
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
            width: 200,
            height: 200,
            log_x: true,
        };
        assert!(line_chart(&[], &spec).ends_with("</svg>\n"));
    }

    #[test]
    fn ticks_are_round() {
        let t: Vec<String> = nice_ticks(0.0, 1.0, 5).into_iter().map(fmt_tick).collect();
        assert_eq!(t, ["0", "0.2", "0.4", "0.6", "0.8", "1"]);
    }
}
