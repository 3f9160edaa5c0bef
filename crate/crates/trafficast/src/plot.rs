//! Small self-contained SVG plots for the report artifacts.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 56.0;

const PALETTE: [&str; 6] = [
    "#2563eb", "#dc2626", "#16a34a", "#9333ea", "#ea580c", "#0891b2",
];

fn axis_bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi <= lo {
        return (lo - 0.5, lo + 0.5);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(
        s,
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Multi-series line plot with labeled axes and a legend.
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<(String, Vec<(f64, f64)>)>,
}

impl LinePlot {
    pub fn to_svg(&self) -> String {
        let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let (x_lo, x_hi) = axis_bounds(
            self.series
                .iter()
                .flat_map(|(_, pts)| pts.iter().map(|p| p.0)),
        );
        let (y_lo, y_hi) = axis_bounds(
            self.series
                .iter()
                .flat_map(|(_, pts)| pts.iter().map(|p| p.1)),
        );
        let to_x = |x: f64| MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
        let to_y = |y: f64| MARGIN_TOP + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;

        let mut s = header(&self.title);
        // axes and ticks
        let _ = writeln!(
            s,
            "<rect x=\"{MARGIN_LEFT}\" y=\"{MARGIN_TOP}\" width=\"{plot_w}\" height=\"{plot_h}\" \
             fill=\"none\" stroke=\"#444\"/>"
        );
        for i in 0..=4 {
            let fx = x_lo + (x_hi - x_lo) * i as f64 / 4.0;
            let fy = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
            let px = to_x(fx);
            let py = to_y(fy);
            let _ = writeln!(
                s,
                "<line x1=\"{px}\" y1=\"{}\" x2=\"{px}\" y2=\"{}\" stroke=\"#ccc\"/>\
                 <text x=\"{px}\" y=\"{}\" text-anchor=\"middle\">{fx:.3}</text>",
                MARGIN_TOP,
                MARGIN_TOP + plot_h,
                MARGIN_TOP + plot_h + 18.0
            );
            let _ = writeln!(
                s,
                "<line x1=\"{MARGIN_LEFT}\" y1=\"{py}\" x2=\"{}\" y2=\"{py}\" stroke=\"#ccc\"/>\
                 <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{fy:.3}</text>",
                MARGIN_LEFT + plot_w,
                MARGIN_LEFT - 6.0,
                py + 4.0
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            MARGIN_LEFT + plot_w / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
            MARGIN_TOP + plot_h / 2.0,
            MARGIN_TOP + plot_h / 2.0,
            escape(&self.y_label)
        );
        for (idx, (name, points)) in self.series.iter().enumerate() {
            let color = PALETTE[idx % PALETTE.len()];
            let path: Vec<String> = points
                .iter()
                .map(|(x, y)| format!("{:.2},{:.2}", to_x(*x), to_y(*y)))
                .collect();
            let _ = writeln!(
                s,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                path.join(" ")
            );
            let ly = MARGIN_TOP + 14.0 + idx as f64 * 16.0;
            let _ = writeln!(
                s,
                "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\
                 <text x=\"{}\" y=\"{}\">{}</text>",
                MARGIN_LEFT + plot_w - 150.0,
                MARGIN_LEFT + plot_w - 126.0,
                MARGIN_LEFT + plot_w - 120.0,
                ly + 4.0,
                escape(name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Grouped bar chart: one cluster of bars per label, one bar per series.
pub struct BarChart {
    pub title: String,
    pub y_label: String,
    pub group_labels: Vec<String>,
    /// (series name, one value per group)
    pub series: Vec<(String, Vec<f64>)>,
}

impl BarChart {
    pub fn to_svg(&self) -> String {
        let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let all = self.series.iter().flat_map(|(_, v)| v.iter().copied());
        let (mut y_lo, y_hi) = axis_bounds(all.chain(std::iter::once(0.0)));
        y_lo = y_lo.min(0.0);
        let to_y = |y: f64| MARGIN_TOP + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;

        let groups = self.group_labels.len().max(1);
        let bars = self.series.len().max(1);
        let group_w = plot_w / groups as f64;
        let bar_w = (group_w * 0.8) / bars as f64;

        let mut s = header(&self.title);
        let _ = writeln!(
            s,
            "<rect x=\"{MARGIN_LEFT}\" y=\"{MARGIN_TOP}\" width=\"{plot_w}\" height=\"{plot_h}\" \
             fill=\"none\" stroke=\"#444\"/>"
        );
        for i in 0..=4 {
            let fy = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
            let py = to_y(fy);
            let _ = writeln!(
                s,
                "<line x1=\"{MARGIN_LEFT}\" y1=\"{py}\" x2=\"{}\" y2=\"{py}\" stroke=\"#ccc\"/>\
                 <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{fy:.3}</text>",
                MARGIN_LEFT + plot_w,
                MARGIN_LEFT - 6.0,
                py + 4.0
            );
        }
        let zero_y = to_y(0.0);
        for (g, label) in self.group_labels.iter().enumerate() {
            let gx = MARGIN_LEFT + g as f64 * group_w;
            for (bi, (_, values)) in self.series.iter().enumerate() {
                let v = values.get(g).copied().unwrap_or(0.0);
                let x = gx + group_w * 0.1 + bi as f64 * bar_w;
                let top = to_y(v.max(0.0));
                let height = (zero_y - to_y(v.abs())).abs();
                let color = PALETTE[bi % PALETTE.len()];
                let _ = writeln!(
                    s,
                    "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{height:.2}\" fill=\"{color}\"/>",
                    if v >= 0.0 { top } else { zero_y },
                    bar_w * 0.92,
                );
            }
            let _ = writeln!(
                s,
                "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
                gx + group_w / 2.0,
                MARGIN_TOP + plot_h + 18.0,
                escape(label)
            );
        }
        for (bi, (name, _)) in self.series.iter().enumerate() {
            let color = PALETTE[bi % PALETTE.len()];
            let ly = MARGIN_TOP + 14.0 + bi as f64 * 16.0;
            let _ = writeln!(
                s,
                "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{color}\"/>\
                 <text x=\"{}\" y=\"{}\">{}</text>",
                MARGIN_LEFT + plot_w - 150.0,
                ly - 8.0,
                MARGIN_LEFT + plot_w - 132.0,
                ly + 3.0,
                escape(name)
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
            MARGIN_TOP + plot_h / 2.0,
            MARGIN_TOP + plot_h / 2.0,
            escape(&self.y_label)
        );
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_is_valid_svg_with_all_series() {
        let plot = LinePlot {
            title: "acf".into(),
            x_label: "lag".into(),
            y_label: "r".into(),
            series: vec![
                ("acf".into(), (1..=20).map(|i| (i as f64, 1.0 / i as f64)).collect()),
                ("band".into(), vec![(1.0, 0.1), (20.0, 0.1)]),
            ],
        };
        let svg = plot.to_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn bar_chart_draws_every_bar() {
        let chart = BarChart {
            title: "mre".into(),
            y_label: "MRE".into(),
            group_labels: vec!["g1".into(), "g2".into(), "g3".into()],
            series: vec![
                ("GM".into(), vec![0.04, 0.05, 0.06]),
                ("IM".into(), vec![0.05, 0.06, 0.07]),
            ],
        };
        let svg = chart.to_svg();
        // 6 bars plus 2 legend swatches
        assert_eq!(svg.matches("<rect").count(), 6 + 2 + 2); // + frame + background
    }

    #[test]
    fn degenerate_ranges_do_not_panic() {
        let plot = LinePlot {
            title: "flat".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![("s".into(), vec![(1.0, 2.0), (2.0, 2.0)])],
        };
        let svg = plot.to_svg();
        assert!(svg.contains("polyline"));
    }
}
