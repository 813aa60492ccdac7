//! Minimal SVG polyline renderer: one frame, two axes, a legend.

use std::fmt::Write as _;

use crate::metrics::Centerline2D;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Render `curves` with equal axis scaling, y pointing up.
pub fn render_svg(title: &str, curves: &[Centerline2D]) -> String {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in curves.iter().flat_map(|c| &c.points) {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    if !lo[0].is_finite() {
        lo = [0.0, 0.0];
        hi = [1.0, 1.0];
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
    let pad = 0.05 * span;
    let scale = ((WIDTH - 2.0 * MARGIN) / (hi[0] - lo[0] + 2.0 * pad))
        .min((HEIGHT - 2.0 * MARGIN) / (hi[1] - lo[1] + 2.0 * pad));
    let x0 = lo[0] - pad;
    let y0 = lo[1] - pad;
    let sx = |x: f64| MARGIN + (x - x0) * scale;
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) * scale;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let (ax, ay) = (MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        out,
        r#"<path d="M{ax} {} L{ax} {ay} L{} {ay}" stroke="black" fill="none"/>"#,
        MARGIN,
        WIDTH - MARGIN
    );
    let _ = writeln!(out, r#"<text x="{ax}" y="{}">{}</text>"#, ay + 16.0, fmt_mm(x0));
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
        WIDTH - MARGIN,
        ay + 16.0,
        fmt_mm(x0 + (WIDTH - 2.0 * MARGIN) / scale)
    );
    let _ = writeln!(out, r#"<text x="{}" y="{ay}" text-anchor="end">{}</text>"#, ax - 4.0, fmt_mm(y0));
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
        ax - 4.0,
        MARGIN + 4.0,
        fmt_mm(y0 + (HEIGHT - 2.0 * MARGIN) / scale)
    );
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">x (mm)</text>"#, WIDTH / 2.0, HEIGHT - 12.0);
    let _ = writeln!(out, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">y (mm)</text>"#, HEIGHT / 2.0, HEIGHT / 2.0);

    for (i, curve) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p[0]), sy(p[1])))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" stroke="{color}" stroke-width="2" fill="none"/>"#,
            pts.join(" ")
        );
        let ly = MARGIN + 8.0 + 16.0 * i as f64;
        let lx = WIDTH - MARGIN - 120.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&curve.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn fmt_mm(v: f64) -> String {
    format!("{:.1}", v * 1e3)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_polyline_per_curve() {
        let a = Centerline2D::new("sim", vec![[0.0, 0.0], [0.1, -0.02]]).unwrap();
        let b = Centerline2D::new("ref <a&b>", vec![[0.0, 0.0], [0.1, -0.03]]).unwrap();
        let svg = render_svg("tip", &[a, b]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("ref &lt;a&amp;b&gt;"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn empty_plot_is_still_valid() {
        let svg = render_svg("empty", &[]);
        assert!(svg.starts_with("<svg"));
        assert!(!svg.contains("NaN"));
    }
}
