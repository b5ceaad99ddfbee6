//! Minimal self-contained SVG charts. Coordinates are printed with fixed
//! precision so identical data always yields identical bytes.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(title: &str, desc: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(s, "<desc>{}</desc>", escape(desc));
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    s
}

fn finite_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// Line plot of `values` against their index, with a horizontal zero line
/// and an optional vertical marker at index `marker`.
pub fn line_chart(title: &str, desc: &str, x_label: &str, y_label: &str, values: &[f64], marker: Option<usize>) -> String {
    let mut s = header(title, desc);
    let (lo, hi) = finite_range(values.iter().copied().chain([0.0]));
    let n = values.len().max(2) - 1;
    let px = |i: usize| MARGIN + (W - 2.0 * MARGIN) * i as f64 / n as f64;
    let py = |v: f64| H - MARGIN - (H - 2.0 * MARGIN) * (v.clamp(lo, hi) - lo) / (hi - lo);
    axes(&mut s, x_label, y_label, lo, hi);
    let _ = writeln!(
        s,
        r##"<line x1="{:.1}" y1="{:.2}" x2="{:.1}" y2="{:.2}" stroke="#888" stroke-dasharray="4 3"/>"##,
        MARGIN,
        py(0.0),
        W - MARGIN,
        py(0.0)
    );
    if let Some(m) = marker {
        let x = px(m.min(n));
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{:.1}" x2="{x:.2}" y2="{:.1}" stroke="#c33"/>"##,
            MARGIN,
            H - MARGIN
        );
    }
    let mut points = String::new();
    for (i, &v) in values.iter().enumerate() {
        let _ = write!(points, "{:.2},{:.2} ", px(i), py(v));
    }
    let _ = writeln!(
        s,
        r##"<polyline fill="none" stroke="#1f5fbf" stroke-width="1.5" points="{}"/>"##,
        points.trim_end()
    );
    s.push_str("</svg>\n");
    s
}

/// Vertical bars, one per label, values in `[0, 1]`.
pub fn bar_chart(title: &str, desc: &str, y_label: &str, labels: &[String], values: &[f64]) -> String {
    let mut s = header(title, desc);
    axes(&mut s, "", y_label, 0.0, 1.0);
    let n = labels.len().max(1) as f64;
    let slot = (W - 2.0 * MARGIN) / n;
    for (i, (label, &v)) in labels.iter().zip(values).enumerate() {
        let h = (H - 2.0 * MARGIN) * v.clamp(0.0, 1.0);
        let x = MARGIN + slot * i as f64 + slot * 0.15;
        let _ = writeln!(
            s,
            r##"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="#1f5fbf"/>"##,
            H - MARGIN - h,
            slot * 0.7
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x + slot * 0.35,
            H - MARGIN + 16.0,
            escape(label)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{:.1}%</text>"#,
            x + slot * 0.35,
            H - MARGIN - h - 4.0,
            100.0 * v
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Heat map of `values[row][col]` in `[0, 1]`, white to dark blue.
pub fn heatmap(title: &str, desc: &str, rows: &[String], cols: &[String], values: &[Vec<f64>]) -> String {
    let mut s = header(title, desc);
    let (nr, nc) = (rows.len().max(1) as f64, cols.len().max(1) as f64);
    let left = MARGIN * 2.0;
    let cw = (W - left - MARGIN) / nc;
    let ch = (H - 2.0 * MARGIN) / nr;
    for (i, row) in values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let t = v.clamp(0.0, 1.0);
            let shade = |full: f64| (255.0 - (255.0 - full) * t).round() as u8;
            let _ = writeln!(
                s,
                r##"<rect x="{:.2}" y="{:.2}" width="{cw:.2}" height="{ch:.2}" fill="#{:02x}{:02x}{:02x}" stroke="#fff"/>"##,
                left + cw * j as f64,
                MARGIN + ch * i as f64,
                shade(16.0),
                shade(64.0),
                shade(160.0)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" fill="{}">{:.2}</text>"#,
                left + cw * (j as f64 + 0.5),
                MARGIN + ch * (i as f64 + 0.5) + 4.0,
                if t > 0.5 { "white" } else { "black" },
                v
            );
        }
    }
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 6.0,
            MARGIN + ch * (i as f64 + 0.5) + 4.0,
            escape(r)
        );
    }
    for (j, c) in cols.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.1}" text-anchor="middle">{}</text>"#,
            left + cw * (j as f64 + 0.5),
            H - MARGIN + 16.0,
            escape(c)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn axes(s: &mut String, x_label: &str, y_label: &str, lo: f64, hi: f64) {
    let _ = writeln!(
        s,
        r#"<path d="M{MARGIN} {MARGIN} V{} H{}" fill="none" stroke="black"/>"#,
        H - MARGIN,
        W - MARGIN
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 16.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{hi:.2}</text>"#, MARGIN - 4.0, MARGIN + 4.0);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{lo:.2}</text>"#, MARGIN - 4.0, H - MARGIN);
}
