//! Minimal SVG rendering of a gap histogram: one bar per bin, a solid rule
//! at the mean and dotted rules one standard deviation either side.

use std::fmt::Write;

use lesion_bench_core::ranking_analysis::GapHistogram;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 40.0;

pub fn gap_histogram_svg(h: &GapHistogram) -> String {
    let lo = h
        .bins
        .first()
        .map_or(-h.bin_width, |b| b.lower)
        .min(h.mean - h.sd);
    let hi = h
        .bins
        .last()
        .map_or(h.bin_width, |b| b.upper)
        .max(h.mean + h.sd);
    let span = if hi > lo { hi - lo } else { h.bin_width };
    let max_count = h.bins.iter().map(|b| b.count).max().unwrap_or(0).max(1) as f64;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let x = |v: f64| MARGIN + (v - lo) / span * plot_w;
    let base = HEIGHT - MARGIN;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        s,
        "<title>{} gap (internal - external)</title>",
        escape(&h.metric)
    );
    for b in &h.bins {
        let bh = b.count as f64 / max_count * plot_h;
        let _ = writeln!(
            s,
            r##"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="#888" stroke="#000"/>"##,
            x(b.lower),
            base - bh,
            x(b.upper) - x(b.lower),
            bh
        );
    }
    let _ = writeln!(
        s,
        r##"<line x1="{MARGIN}" y1="{base}" x2="{:.3}" y2="{base}" stroke="#000"/>"##,
        WIDTH - MARGIN
    );
    let rule = |s: &mut String, v: f64, dotted: bool| {
        let dash = if dotted {
            r#" stroke-dasharray="2,3""#
        } else {
            ""
        };
        let _ = writeln!(
            s,
            r##"<line x1="{0:.3}" y1="{MARGIN}" x2="{0:.3}" y2="{base}" stroke="#c00"{dash}/>"##,
            x(v)
        );
    };
    rule(&mut s, h.mean, false);
    rule(&mut s, h.mean - h.sd, true);
    rule(&mut s, h.mean + h.sd, true);
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="{:.3}" font-size="12">{lo:.3}</text>"#,
        HEIGHT - MARGIN / 3.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.3}" y="{:.3}" font-size="12" text-anchor="end">{hi:.3}</text>"#,
        WIDTH - MARGIN,
        HEIGHT - MARGIN / 3.0
    );
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
