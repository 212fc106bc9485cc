//! Tiny SVG emitters for the fertility and ablation tables: static bar and
//! line charts, no interactivity.

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"16\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One bar per (label, value); values are assumed non-negative.
pub fn bar_chart(title: &str, data: &[(String, f64)]) -> String {
    let mut svg = header(title);
    let max = data.iter().map(|(_, v)| *v).fold(0.0f64, f64::max).max(1e-12);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let slot = plot_w / data.len().max(1) as f64;
    let bar_w = slot * 0.7;
    for (i, (label, value)) in data.iter().enumerate() {
        let h = plot_h * value / max;
        let x = MARGIN + i as f64 * slot + (slot - bar_w) / 2.0;
        let y = HEIGHT - MARGIN - h;
        svg.push_str(&format!(
            "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{bar_w:.1}\" height=\"{h:.1}\" \
             fill=\"#4878a8\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"11\">{}</text>\n\
             <text x=\"{:.1}\" y=\"{y:.1}\" dy=\"-4\" text-anchor=\"middle\" \
             font-family=\"sans-serif\" font-size=\"10\">{value:.3}</text>\n",
            x + bar_w / 2.0,
            HEIGHT - MARGIN + 16.0,
            escape(label),
            x + bar_w / 2.0,
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// One polyline through (x, y) points, with axes scaled to the data range.
pub fn line_chart(title: &str, points: &[(f64, f64)]) -> String {
    let mut svg = header(title);
    if !points.is_empty() {
        let (x_min, x_max) = points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (x, _)| (lo.min(*x), hi.max(*x)));
        let (y_min, y_max) = points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, y)| (lo.min(*y), hi.max(*y)));
        let x_span = (x_max - x_min).max(1e-12);
        let y_span = (y_max - y_min).max(1e-12);
        let plot_w = WIDTH - 2.0 * MARGIN;
        let plot_h = HEIGHT - 2.0 * MARGIN;
        let coords: Vec<String> = points
            .iter()
            .map(|(x, y)| {
                let px = MARGIN + (x - x_min) / x_span * plot_w;
                let py = HEIGHT - MARGIN - (y - y_min) / y_span * plot_h;
                format!("{px:.1},{py:.1}")
            })
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#4878a8\" stroke-width=\"2\"/>\n\
             <text x=\"{MARGIN}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\">{y_max:.3}</text>\n\
             <text x=\"{MARGIN}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\">{y_min:.3}</text>\n",
            coords.join(" "),
            MARGIN,
            HEIGHT - MARGIN,
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
