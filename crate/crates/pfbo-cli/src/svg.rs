//! Self-contained SVG plot writer: axes, optional log-scale y, median lines,
//! and interquartile bands. No external plotting dependency; output is plain
//! text suitable for diffing.

const WIDTH: f64 = 840.0;
const HEIGHT: f64 = 520.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 180.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub color: String,
    /// Center line, usually the per-step median.
    pub line: Vec<(f64, f64)>,
    /// Optional (lower, upper) band around the line.
    pub band: Option<(Vec<(f64, f64)>, Vec<(f64, f64)>)>,
}

#[derive(Debug, Clone)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

impl Plot {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Plot {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_y: false,
            series: Vec::new(),
        }
    }

    fn y_value(&self, y: f64) -> f64 {
        if self.log_y {
            y.max(1e-12).log10()
        } else {
            y
        }
    }

    pub fn render(&self) -> String {
        let mut xs: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for s in &self.series {
            for &(x, y) in &s.line {
                xs.push(x);
                ys.push(self.y_value(y));
            }
            if let Some((lo, hi)) = &s.band {
                for &(x, y) in lo.iter().chain(hi.iter()) {
                    xs.push(x);
                    ys.push(self.y_value(y));
                }
            }
        }
        let (x_min, x_max) = bounds(&xs);
        let (y_min, y_max) = bounds(&ys);
        let x_span = (x_max - x_min).max(1e-12);
        let y_span = (y_max - y_min).max(1e-12);
        let px = |x: f64| MARGIN_L + (x - x_min) / x_span * (WIDTH - MARGIN_L - MARGIN_R);
        let py = |y: f64| HEIGHT - MARGIN_B - (self.y_value(y) - y_min) / y_span * (HEIGHT - MARGIN_T - MARGIN_B);

        let mut out = String::new();
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n",
            w = WIDTH,
            h = HEIGHT
        ));
        out.push_str(&format!(
            "<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"white\"/>\n",
            WIDTH, HEIGHT
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
            (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
            escape(&self.title)
        ));

        // axes box
        out.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
            MARGIN_L,
            MARGIN_T,
            WIDTH - MARGIN_L - MARGIN_R,
            HEIGHT - MARGIN_T - MARGIN_B
        ));

        // ticks
        for i in 0..=5 {
            let x = x_min + x_span * i as f64 / 5.0;
            let sx = px(x);
            out.push_str(&format!(
                "<line x1=\"{sx}\" y1=\"{}\" x2=\"{sx}\" y2=\"{}\" stroke=\"black\"/>\n",
                HEIGHT - MARGIN_B,
                HEIGHT - MARGIN_B + 5.0
            ));
            out.push_str(&format!(
                "<text x=\"{sx}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
                HEIGHT - MARGIN_B + 18.0,
                fmt_tick(x)
            ));
        }
        let y_ticks: Vec<f64> = if self.log_y {
            let lo = y_min.floor() as i64;
            let hi = y_max.ceil() as i64;
            (lo..=hi).map(|e| e as f64).collect()
        } else {
            (0..=5).map(|i| y_min + y_span * i as f64 / 5.0).collect()
        };
        for &yt in &y_ticks {
            let sy = HEIGHT - MARGIN_B - (yt - y_min) / y_span * (HEIGHT - MARGIN_T - MARGIN_B);
            if !(MARGIN_T..=HEIGHT - MARGIN_B).contains(&sy) {
                continue;
            }
            out.push_str(&format!(
                "<line x1=\"{}\" y1=\"{sy}\" x2=\"{}\" y2=\"{sy}\" stroke=\"black\"/>\n",
                MARGIN_L - 5.0,
                MARGIN_L
            ));
            let label = if self.log_y { format!("1e{}", yt as i64) } else { fmt_tick(yt) };
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
                MARGIN_L - 8.0,
                sy + 4.0,
                label
            ));
        }

        // axis labels
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
            (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        ));
        out.push_str(&format!(
            "<text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>\n",
            (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
            (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
            escape(&self.y_label)
        ));

        // bands under lines
        for s in &self.series {
            if let Some((lo, hi)) = &s.band {
                let mut path = String::new();
                for (i, &(x, y)) in lo.iter().enumerate() {
                    path.push_str(if i == 0 { "M" } else { "L" });
                    path.push_str(&format!("{:.2},{:.2} ", px(x), py(y)));
                }
                for &(x, y) in hi.iter().rev() {
                    path.push_str(&format!("L{:.2},{:.2} ", px(x), py(y)));
                }
                path.push('Z');
                out.push_str(&format!(
                    "<path d=\"{}\" fill=\"{}\" fill-opacity=\"0.18\" stroke=\"none\"/>\n",
                    path, s.color
                ));
            }
        }
        for s in &self.series {
            let pts: Vec<String> =
                s.line.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            out.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.8\"/>\n",
                pts.join(" "),
                s.color
            ));
        }

        // legend
        for (i, s) in self.series.iter().enumerate() {
            let ly = MARGIN_T + 16.0 + 20.0 * i as f64;
            let lx = WIDTH - MARGIN_R + 12.0;
            out.push_str(&format!(
                "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
                lx + 22.0,
                s.color
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
                lx + 28.0,
                ly + 4.0,
                escape(&s.label)
            ));
        }
        out.push_str("</svg>\n");
        out
    }
}

fn bounds(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 1.0);
    }
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{:.1e}", v)
    } else {
        format!("{:.2}", v)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
