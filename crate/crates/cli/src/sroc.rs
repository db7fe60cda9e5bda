//! SROC plot as a plain SVG document.

use std::fmt::Write;

use anyhow::{anyhow, Result};
use diagmeta_core::likelihood::AccuracyParams;
use diagmeta_core::summary::{region_points, specificity_grid, sroc_points};

use crate::report::{FitReport, LEVEL};

const SIZE: f64 = 560.0;
const MARGIN: f64 = 70.0;
const COLORS: [&str; 4] = ["#1f4e9c", "#b8341b", "#2e7d32", "#6a3d9a"];
const CURVE_POINTS: usize = 199;
const REGION_POINTS: usize = 120;

pub struct Layer {
    pub label: String,
    pub curve: Vec<(f64, f64)>,
    pub point: (f64, f64),
    pub region: Vec<(f64, f64)>,
}

/// Curve, summary point and region for one report. A model without
/// between-study variances has no curve.
pub fn layer(report: &FitReport) -> Result<Layer> {
    let value = |name: &str| {
        report
            .estimate(name)
            .map(|e| e.estimate)
            .ok_or_else(|| anyhow!("report has no estimate for {name}"))
    };
    let link = report.link;
    let (eta, xi) = (value("eta_bar")?, value("xi_bar")?);
    let curve = match (value("var_eta"), value("var_xi"), value("rho")) {
        (Ok(ve), Ok(vx), Ok(r)) => {
            let theta = AccuracyParams::new(eta, xi, ve, vx, r)?;
            sroc_points(link, &theta, &specificity_grid(0.005, 0.995, CURVE_POINTS))?
        }
        _ => Vec::new(),
    };
    let cov = report
        .mean_covariance()
        .ok_or_else(|| anyhow!("report has no covariance for the summary point"))?;
    let region = region_points(link, [eta, xi], cov, LEVEL, REGION_POINTS)?;
    Ok(Layer {
        label: format!("{} ({})", report.model, link),
        curve,
        point: (1.0 - link.inverse(xi)?, link.inverse(eta)?),
        region,
    })
}

fn sx(fpr: f64) -> f64 {
    MARGIN + fpr.clamp(0.0, 1.0) * (SIZE - 2.0 * MARGIN)
}

fn sy(sens: f64) -> f64 {
    SIZE - MARGIN - sens.clamp(0.0, 1.0) * (SIZE - 2.0 * MARGIN)
}

fn path(points: &[(f64, f64)]) -> String {
    points
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn render(layers: &[Layer]) -> String {
    let mut s = String::new();
    let (lo, hi) = (MARGIN, SIZE - MARGIN);
    writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="13" data-schema-version="{}">
<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="white"/>
<g id="axes" stroke="black" stroke-width="1">
<line x1="{lo}" y1="{hi}" x2="{hi}" y2="{hi}"/>
<line x1="{lo}" y1="{hi}" x2="{lo}" y2="{lo}"/>"#,
        crate::report::SCHEMA_VERSION
    )
    .unwrap();
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{hi}" x2="{x:.2}" y2="{:.2}"/><line x1="{lo}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}"/>"#,
            hi + 5.0,
            lo - 5.0,
            x = sx(t),
            y = sy(t)
        )
        .unwrap();
    }
    s.push_str("</g>\n<g id=\"ticks\">\n");
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{t:.1}</text><text x="{:.2}" y="{:.2}" text-anchor="end">{t:.1}</text>"#,
            sx(t),
            hi + 20.0,
            lo - 9.0,
            sy(t) + 4.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"</g>
<text x="{:.2}" y="{:.2}" text-anchor="middle">1 - specificity</text>
<text x="{:.2}" y="{:.2}" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">sensitivity</text>"#,
        0.5 * SIZE,
        SIZE - 25.0,
        25.0,
        0.5 * SIZE,
        25.0,
        0.5 * SIZE
    )
    .unwrap();

    for (k, l) in layers.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        writeln!(s, r#"<g id="fit-{k}">"#).unwrap();
        writeln!(
            s,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="{color}" stroke-dasharray="4 3"/>"#,
            path(&l.region)
        )
        .unwrap();
        if !l.curve.is_empty() {
            writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                path(&l.curve)
            )
            .unwrap();
        }
        writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{color}"/>"#,
            sx(l.point.0),
            sy(l.point.1)
        )
        .unwrap();
        s.push_str("</g>\n");
    }

    s.push_str("<g id=\"legend\">\n");
    for (k, l) in layers.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let y = SIZE - MARGIN - 20.0 - 20.0 * (layers.len() - 1 - k) as f64;
        let x = SIZE - MARGIN - 150.0;
        writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            x + 24.0,
            x + 30.0,
            y + 4.0,
            escape(&l.label)
        )
        .unwrap();
    }
    s.push_str("</g>\n</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
