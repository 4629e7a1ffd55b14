//! Minimal SVG line charts with shaded ±1 std bands.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 170.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders accuracy-vs-round curves; the y axis is fixed to `[0, 1]`.
pub fn accuracy_chart(title: &str, series: &[Series]) -> String {
    let rounds = series.iter().map(|s| s.mean.len()).max().unwrap_or(0).max(2);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let x = |t: usize| MARGIN_L + plot_w * t as f64 / (rounds - 1) as f64;
    let y = |v: f64| MARGIN_T + plot_h * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        MARGIN_L + plot_w / 2.0,
        escape(title)
    );

    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN_L}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="#ddd"/><text x="{2}" y="{3:.2}" text-anchor="end">{v:.1}</text>"##,
            y(v),
            MARGIN_L + plot_w,
            MARGIN_L - 6.0,
            y(v) + 4.0
        );
    }
    for k in 0..=4 {
        let t = (rounds - 1) * k / 4;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{t}</text>"#,
            x(t),
            MARGIN_T + plot_h + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">round</text>"#,
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">mean test accuracy</text>"#,
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0
    );

    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if ser.mean.is_empty() {
            continue;
        }
        let mut band = String::new();
        for (t, (m, sd)) in ser.mean.iter().zip(&ser.std).enumerate() {
            let _ = write!(band, "{}{:.2},{:.2} ", if t == 0 { 'M' } else { 'L' }, x(t), y(m + sd));
        }
        for (t, (m, sd)) in ser.mean.iter().zip(&ser.std).enumerate().rev() {
            let _ = write!(band, "L{:.2},{:.2} ", x(t), y(m - sd));
        }
        let _ = writeln!(
            s,
            r#"<path d="{}Z" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band
        );

        let pts: Vec<String> = ser
            .mean
            .iter()
            .enumerate()
            .map(|(t, m)| format!("{:.2},{:.2}", x(t), y(*m)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        let ly = MARGIN_T + 14.0 + 18.0 * k as f64;
        let lx = MARGIN_L + plot_w + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_has_one_band_and_line_per_series() {
        let series = vec![
            Series {
                label: "mode=dcm".into(),
                mean: vec![0.1, 0.5, 0.7],
                std: vec![0.0, 0.1, 0.05],
            },
            Series {
                label: "a<b".into(),
                mean: vec![0.2, 0.3, 0.4],
                std: vec![0.0; 3],
            },
        ];
        let svg = accuracy_chart("acc", &series);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("fill-opacity").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.ends_with("</svg>\n"));
    }
}
