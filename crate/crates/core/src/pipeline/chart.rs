//! Self-contained SVG bar chart for model comparisons, generated without a
//! plotting dependency.

use std::fmt::Write as _;

const WIDTH: usize = 640;
const BAR_HEIGHT: usize = 28;
const BAR_GAP: usize = 14;
const LABEL_WIDTH: usize = 200;
const TOP: usize = 48;
const VALUE_SPACE: usize = 64;

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Horizontal bars, one per row, scaled to the `[0, 1]` metric range.
pub fn bar_chart_svg(title: &str, rows: &[(String, f64)]) -> String {
    let height = TOP + rows.len() * (BAR_HEIGHT + BAR_GAP) + 24;
    let plot_width = WIDTH - LABEL_WIDTH - VALUE_SPACE;

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        WIDTH, height, WIDTH, height
    )
    .unwrap();
    writeln!(
        svg,
        r#"  <rect width="{}" height="{}" fill="white"/>"#,
        WIDTH, height
    )
    .unwrap();
    writeln!(
        svg,
        r#"  <text x="{}" y="24" font-family="sans-serif" font-size="16" font-weight="bold">{}</text>"#,
        LABEL_WIDTH,
        xml_escape(title)
    )
    .unwrap();

    for (i, (label, value)) in rows.iter().enumerate() {
        let y = TOP + i * (BAR_HEIGHT + BAR_GAP);
        let clamped = value.clamp(0.0, 1.0);
        let bar = (clamped * plot_width as f64).round() as usize;
        writeln!(
            svg,
            r#"  <text x="{}" y="{}" font-family="sans-serif" font-size="13" text-anchor="end">{}</text>"#,
            LABEL_WIDTH - 8,
            y + BAR_HEIGHT / 2 + 5,
            xml_escape(label)
        )
        .unwrap();
        writeln!(
            svg,
            r##"  <rect x="{}" y="{}" width="{}" height="{}" fill="#2f6f4f"/>"##,
            LABEL_WIDTH, y, bar, BAR_HEIGHT
        )
        .unwrap();
        writeln!(
            svg,
            r#"  <text x="{}" y="{}" font-family="sans-serif" font-size="13">{:.3}</text>"#,
            LABEL_WIDTH + bar + 8,
            y + BAR_HEIGHT / 2 + 5,
            value
        )
        .unwrap();
    }

    // baseline axis
    writeln!(
        svg,
        r##"  <line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#333" stroke-width="1"/>"##,
        LABEL_WIDTH,
        TOP - 6,
        LABEL_WIDTH,
        TOP + rows.len() * (BAR_HEIGHT + BAR_GAP) - BAR_GAP + 6
    )
    .unwrap();
    writeln!(svg, "</svg>").unwrap();
    svg
}
