//! Minimal self-contained SVG line charts.
//!
//! The CSV and JSON outputs are the data contract; these plots exist for
//! a quick visual check, so the writer stays deliberately small: linear
//! axes, fixed canvas, one polyline per series. Output depends only on
//! the input data, keeping repeated runs byte-identical.

/// One polyline. Coordinates are in data units.
pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 540.0;
const MARGIN_L: f64 = 78.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 46.0;
const MARGIN_B: f64 = 58.0;

/// Default stroke palette, cycled by series index.
pub const PALETTE: [&str; 6] = [
    "#1668a8", "#c23b22", "#2e8540", "#8050a0", "#b58900", "#50585f",
];

fn bounds(series: &[Series]) -> ((f64, f64), (f64, f64)) {
    let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ys = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                xs = (xs.0.min(x), xs.1.max(x));
                ys = (ys.0.min(y), ys.1.max(y));
            }
        }
    }
    if !xs.0.is_finite() {
        xs = (0.0, 1.0);
        ys = (0.0, 1.0);
    }
    let pad = |lo: f64, hi: f64| {
        if hi > lo {
            let p = 0.04 * (hi - lo);
            (lo - p, hi + p)
        } else {
            (lo - 1.0, hi + 1.0)
        }
    };
    (pad(xs.0, xs.1), pad(ys.0, ys.1))
}

fn ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
        .collect()
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e5).contains(&a) {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the chart as an SVG document string.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let ((x_lo, x_hi), (y_lo, y_hi)) = bounds(series);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| MARGIN_T + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"13\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        MARGIN_L + plot_w / 2.0,
        escape(title)
    ));

    for tx in ticks(x_lo, x_hi, 6) {
        let px = sx(tx);
        svg.push_str(&format!(
            "<line x1=\"{px:.1}\" y1=\"{:.1}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"#dddddd\"/>\n",
            MARGIN_T,
            MARGIN_T + plot_h
        ));
        svg.push_str(&format!(
            "<text x=\"{px:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            MARGIN_T + plot_h + 20.0,
            fmt_tick(tx)
        ));
    }
    for ty in ticks(y_lo, y_hi, 6) {
        let py = sy(ty);
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{py:.1}\" x2=\"{:.1}\" y2=\"{py:.1}\" stroke=\"#dddddd\"/>\n",
            MARGIN_L,
            MARGIN_L + plot_w
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            MARGIN_L - 8.0,
            py + 4.0,
            fmt_tick(ty)
        ));
    }
    svg.push_str(&format!(
        "<rect x=\"{MARGIN_L:.1}\" y=\"{MARGIN_T:.1}\" width=\"{plot_w:.1}\" height=\"{plot_h:.1}\" \
         fill=\"none\" stroke=\"#333333\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 14.0,
        escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"20\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 20 {:.1})\">{}</text>\n",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        escape(y_label)
    ));

    for s in series {
        if s.points.len() < 2 {
            continue;
        }
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.4\"/>\n",
            path.join(" "),
            s.color
        ));
    }

    let labeled: Vec<&Series> = series.iter().filter(|s| !s.label.is_empty()).collect();
    if labeled.len() > 1 && labeled.len() <= 6 {
        for (k, s) in labeled.iter().enumerate() {
            let ly = MARGIN_T + 16.0 + 18.0 * k as f64;
            let lx = MARGIN_L + plot_w - 150.0;
            svg.push_str(&format!(
                "<line x1=\"{lx:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
                ly - 4.0,
                lx + 22.0,
                ly - 4.0,
                s.color
            ));
            svg.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{ly:.1}\">{}</text>\n",
                lx + 28.0,
                escape(s.label)
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}
