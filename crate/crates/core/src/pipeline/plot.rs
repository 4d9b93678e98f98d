use std::fmt::Write;

use crate::explain::escape_xml;
use crate::time::Timestamp;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 40.0;

/// Actual and predicted load as two polylines. Long series are reduced to
/// `max_points` buckets, each drawn at its hour of highest actual load so
/// peaks survive downsampling.
pub fn forecast_svg(title: &str, at: &[Timestamp], actual: &[f64], predicted: &[f64], max_points: usize) -> String {
    let n = actual.len().min(predicted.len()).min(at.len());
    let buckets = n.min(max_points.max(2));
    let picks: Vec<usize> = (0..buckets)
        .filter_map(|b| {
            let lo = b * n / buckets;
            let hi = ((b + 1) * n / buckets).max(lo + 1).min(n);
            (lo..hi).max_by(|&i, &j| actual[i].total_cmp(&actual[j]).then(j.cmp(&i)))
        })
        .collect();

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &i in &picks {
        lo = lo.min(actual[i]).min(predicted[i]);
        hi = hi.max(actual[i]).max(predicted[i]);
    }
    if !(hi > lo) {
        lo -= 1.0;
        hi += 1.0;
    }
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x = |k: usize| LEFT + plot_w * k as f64 / (picks.len().max(2) - 1) as f64;
    let y = |v: f64| TOP + plot_h * (hi - v) / (hi - lo);
    let line = |series: &[f64]| {
        picks.iter().enumerate().map(|(k, &i)| format!("{:.1},{:.1}", x(k), y(series[i]))).collect::<Vec<_>>().join(" ")
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="10" y="22" font-size="15" font-weight="bold">{}</text>"#, escape_xml(title));
    let _ = writeln!(
        svg,
        r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#999"/>"##
    );
    for t in 0..=4 {
        let v = lo + (hi - lo) * t as f64 / 4.0;
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.0}</text>"#, LEFT - 6.0, y(v) + 4.0);
    }
    if let (Some(&first), Some(&last)) = (picks.first(), picks.last()) {
        let _ = writeln!(svg, r#"<text x="{LEFT}" y="{:.1}">{}</text>"#, HEIGHT - 14.0, at[first]);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            WIDTH - RIGHT,
            HEIGHT - 14.0,
            at[last]
        );
    }
    let _ = writeln!(
        svg,
        r##"<polyline fill="none" stroke="#222" stroke-width="1.2" points="{}"/>"##,
        line(actual)
    );
    let _ = writeln!(
        svg,
        r##"<polyline fill="none" stroke="#d9622b" stroke-width="1.2" points="{}"/>"##,
        line(predicted)
    );
    let _ = writeln!(svg, r##"<text x="{:.1}" y="22" fill="#222">actual</text>"##, WIDTH - 160.0);
    let _ = writeln!(svg, r##"<text x="{:.1}" y="22" fill="#d9622b">predicted</text>"##, WIDTH - 100.0);
    svg.push_str("</svg>\n");
    svg
}
