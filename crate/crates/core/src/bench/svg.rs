//! Minimal standalone SVG bar charts.
//!
//! One bar per `(label, value)`, values drawn from zero on a linear axis
//! that spans `[min(0, lowest), max(0, highest)]`. No fonts are embedded;
//! labels use the viewer's default sans-serif.

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn bar_chart(title: &str, bars: &[(String, f64)]) -> String {
    let lo = bars.iter().map(|b| b.1).fold(0.0_f64, f64::min);
    let hi = bars.iter().map(|b| b.1).fold(0.0_f64, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let y_of = |v: f64| MARGIN + (hi - v) / span * plot_h;
    let zero = y_of(0.0);
    let slot = (WIDTH - 2.0 * MARGIN) / bars.len().max(1) as f64;

    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        WIDTH / 2.0,
        MARGIN / 2.0,
        escape(title)
    ));
    out.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{zero:.2}\" x2=\"{}\" y2=\"{zero:.2}\" stroke=\"black\"/>\n",
        WIDTH - MARGIN
    ));
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = MARGIN + i as f64 * slot + slot * 0.15;
        let top = y_of(v.max(0.0));
        let h = (y_of(v.min(0.0)) - top).max(0.0);
        out.push_str(&format!(
            "<rect x=\"{x:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{h:.2}\" fill=\"steelblue\"/>\n",
            slot * 0.7
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{v:.3}</text>\n",
            x + slot * 0.35,
            top - 4.0
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            x + slot * 0.35,
            HEIGHT - MARGIN / 2.0,
            escape(label)
        ));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_rect_per_bar_and_escaped_labels() {
        let s = bar_chart("t", &[("a<b".into(), 0.5), ("c".into(), -0.25)]);
        assert_eq!(s.matches("<rect").count(), 2);
        assert!(s.contains("a&lt;b"));
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
    }
}
