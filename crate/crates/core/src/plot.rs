//! SVG line plots of precision, recall and OSR against foliage density.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::error::{Error, Result};
use crate::eval::{EvalReport, EvalRow};

const PANEL_W: f64 = 260.0;
const PANEL_H: f64 = 220.0;
const MARGIN_L: f64 = 48.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 40.0;
const LEGEND_H: f64 = 28.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// Mean of each metric per (method, density), pooled over tree types.
fn series(rows: &[EvalRow]) -> BTreeMap<&str, BTreeMap<u8, [f64; 3]>> {
    let mut acc: BTreeMap<&str, BTreeMap<u8, ([f64; 3], usize)>> = BTreeMap::new();
    for r in rows {
        let EvalReport {
            precision,
            recall,
            osr,
            ..
        } = r.report;
        let cell = acc
            .entry(&r.method)
            .or_default()
            .entry(r.density)
            .or_insert(([0.0; 3], 0));
        for (s, v) in cell.0.iter_mut().zip([precision, recall, osr]) {
            *s += v;
        }
        cell.1 += 1;
    }
    acc.into_iter()
        .map(|(m, by_d)| {
            let means = by_d
                .into_iter()
                .map(|(d, (sum, n))| (d, sum.map(|s| s / n as f64)))
                .collect();
            (m, means)
        })
        .collect()
}

/// Three panels side by side, one line per method.
pub fn density_plot_svg(rows: &[EvalRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("no evaluation rows to plot"));
    }
    let data = series(rows);
    let mut densities: Vec<u8> = rows.iter().map(|r| r.density).collect();
    densities.sort_unstable();
    densities.dedup();
    let (dmin, dmax) = (
        f64::from(densities[0]),
        f64::from(*densities.last().expect("non-empty")),
    );

    let width = 3.0 * (MARGIN_L + PANEL_W) + 16.0;
    let height = MARGIN_T + PANEL_H + MARGIN_B + LEGEND_H;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{width}" height="{height}" fill="white"/>"#
    );

    for (panel, title) in ["Precision", "Recall", "OSR"].into_iter().enumerate() {
        let x0 = MARGIN_L + panel as f64 * (MARGIN_L + PANEL_W);
        let y0 = MARGIN_T;
        let px = |d: f64| {
            if dmax > dmin {
                x0 + 12.0 + (d - dmin) / (dmax - dmin) * (PANEL_W - 24.0)
            } else {
                x0 + PANEL_W / 2.0
            }
        };
        let py = |v: f64| y0 + (1.0 - v.clamp(0.0, 1.0)) * PANEL_H;

        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{title}</text>"#,
            x0 + PANEL_W / 2.0,
            y0 - 14.0
        );
        for i in 0..=5 {
            let v = i as f64 / 5.0;
            let y = py(v);
            let _ = writeln!(
                svg,
                r##"<line x1="{x0}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{v:.1}</text>"##,
                x0 + PANEL_W,
                x0 - 6.0,
                y + 4.0
            );
        }
        for &d in &densities {
            let x = px(f64::from(d));
            let _ = writeln!(
                svg,
                r#"<text x="{x}" y="{}" text-anchor="middle">{d}</text>"#,
                y0 + PANEL_H + 16.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<rect x="{x0}" y="{y0}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">foliage density</text>"#,
            x0 + PANEL_W / 2.0,
            y0 + PANEL_H + 32.0
        );

        for (i, by_d) in data.values().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let pts: Vec<String> = by_d
                .iter()
                .map(|(&d, m)| format!("{:.2},{:.2}", px(f64::from(d)), py(m[panel])))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                pts.join(" ")
            );
            for p in &pts {
                let (x, y) = p.split_once(',').expect("formatted pair");
                let _ = writeln!(svg, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
            }
        }
    }

    let ly = MARGIN_T + PANEL_H + MARGIN_B + LEGEND_H / 2.0;
    for (i, method) in data.keys().enumerate() {
        let x = MARGIN_L + i as f64 * 120.0;
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(
            svg,
            r#"<line x1="{x}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{method}</text>"#,
            x + 24.0,
            x + 30.0,
            ly + 4.0
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
