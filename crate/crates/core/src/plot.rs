//! Predicted-versus-ground-truth scatter plots as SVG.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const SIZE: f64 = 480.0;
const MARGIN: f64 = 48.0;

/// Renders `(gt, pred)` pairs on the unit square with the identity line.
/// Values outside [0, 1] are clamped to the frame. Output depends only on
/// the input.
pub fn scatter_svg(pairs: &[(f64, f64)], title: &str) -> Result<String> {
    if pairs.is_empty() {
        return Err(Error::Invalid("scatter plot needs at least one point".into()));
    }
    if pairs.iter().any(|(g, p)| !g.is_finite() || !p.is_finite()) {
        return Err(Error::NonFinite("scatter point"));
    }
    let span = SIZE - 2.0 * MARGIN;
    let px = |v: f64| MARGIN + v.clamp(0.0, 1.0) * span;
    let py = |v: f64| SIZE - MARGIN - v.clamp(0.0, 1.0) * span;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{span}" height="{span}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{v:.2}</text>"#,
            px(v),
            SIZE - MARGIN + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{v:.2}</text>"#,
            MARGIN - 6.0,
            py(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line id="identity" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="red" stroke-width="1.5"/>"#,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    let _ = writeln!(s, r#"<g fill="steelblue" fill-opacity="0.6">"#);
    for &(g, p) in pairs {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3"/>"#, px(g), py(p));
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">ground truth</text>"#,
        SIZE / 2.0,
        SIZE - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 14 {:.2})">prediction</text>"#,
        SIZE / 2.0,
        SIZE / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="28" font-size="14" text-anchor="middle">{}</text>"#,
        SIZE / 2.0,
        escape(title)
    );
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn emit_scatter(pairs: &[(f64, f64)], title: &str, path: &Path) -> Result<()> {
    let svg = scatter_svg(pairs, title)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_lies_on_identity() {
        let svg = scatter_svg(&[(0.5, 0.5)], "x").unwrap();
        assert!(svg.contains(r#"<circle cx="240.00" cy="240.00" r="3"/>"#));
    }

    #[test]
    fn deterministic_and_rejects_empty() {
        let pts = [(0.1, 0.2), (0.7, 0.65)];
        assert_eq!(scatter_svg(&pts, "a<b").unwrap(), scatter_svg(&pts, "a<b").unwrap());
        assert!(scatter_svg(&[], "").is_err());
    }
}
