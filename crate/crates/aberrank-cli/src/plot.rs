//! Static SVG rendering of gamma-indexed curves. Batch output only: fixed
//! canvas, probability-scaled y axis, no interactivity.

use std::path::Path;

use crate::CliError;

/// A family of curves over a shared gamma grid.
pub struct PlotSeries {
    pub title: String,
    pub y_label: String,
    pub gammas: Vec<f64>,
    /// Labeled y-vectors, each aligned with `gammas`.
    pub series: Vec<(String, Vec<f64>)>,
    /// Optional horizontal reference line, e.g. the test level.
    pub reference: Option<(String, f64)>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 62.0;
const MARGIN_RIGHT: f64 = 18.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 52.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub fn write_svg(path: &Path, plot: &PlotSeries) -> Result<(), CliError> {
    std::fs::write(path, render(plot)?)?;
    Ok(())
}

fn render(plot: &PlotSeries) -> Result<String, CliError> {
    if plot.gammas.is_empty() || plot.series.is_empty() {
        return Err(CliError::Invalid("nothing to plot".into()));
    }
    for (label, ys) in &plot.series {
        if ys.len() != plot.gammas.len() {
            return Err(CliError::Invalid(format!(
                "series `{label}` has {} points for {} gammas",
                ys.len(),
                plot.gammas.len()
            )));
        }
    }

    let (x_lo, x_hi) = {
        let lo = plot.gammas.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = plot.gammas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // A single grid point still deserves a visible axis.
        if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x = |g: f64| MARGIN_LEFT + (g - x_lo) / (x_hi - x_lo) * plot_w;
    // Levels, p-values, and rejection rates all live in [0, 1].
    let y = |v: f64| MARGIN_TOP + (1.0 - v.clamp(0.0, 1.0)) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "  <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        WIDTH / 2.0,
        escape(&plot.title)
    ));

    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let yy = y(v);
        svg.push_str(&format!(
            "  <line x1=\"{}\" y1=\"{yy}\" x2=\"{}\" y2=\"{yy}\" stroke=\"#dddddd\"/>\n",
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v:.2}</text>\n",
            MARGIN_LEFT - 8.0,
            yy + 4.0
        ));
    }
    let x_ticks = 5.min(plot.gammas.len().max(2));
    for k in 0..x_ticks {
        let g = x_lo + (x_hi - x_lo) * k as f64 / (x_ticks - 1) as f64;
        let xx = x(g);
        svg.push_str(&format!(
            "  <line x1=\"{xx}\" y1=\"{}\" x2=\"{xx}\" y2=\"{}\" stroke=\"#999999\"/>\n",
            MARGIN_TOP + plot_h,
            MARGIN_TOP + plot_h + 5.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{xx}\" y=\"{}\" text-anchor=\"middle\">{g:.2}</text>\n",
            MARGIN_TOP + plot_h + 20.0
        ));
    }
    svg.push_str(&format!(
        "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        MARGIN_LEFT,
        MARGIN_TOP,
        MARGIN_LEFT,
        MARGIN_TOP + plot_h
    ));
    svg.push_str(&format!(
        "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        MARGIN_LEFT,
        MARGIN_TOP + plot_h,
        MARGIN_LEFT + plot_w,
        MARGIN_TOP + plot_h
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">gamma</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    ));
    svg.push_str(&format!(
        "  <text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(&plot.y_label)
    ));

    if let Some((label, level)) = &plot.reference {
        let yy = y(*level);
        svg.push_str(&format!(
            "  <line x1=\"{}\" y1=\"{yy}\" x2=\"{}\" y2=\"{yy}\" stroke=\"#888888\" stroke-dasharray=\"6 4\"/>\n",
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"end\" fill=\"#666666\">{} = {level}</text>\n",
            MARGIN_LEFT + plot_w - 4.0,
            yy - 5.0,
            escape(label)
        ));
    }

    for (idx, (label, ys)) in plot.series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let points: Vec<String> = plot
            .gammas
            .iter()
            .zip(ys)
            .map(|(&g, &v)| format!("{:.2},{:.2}", x(g), y(v)))
            .collect();
        svg.push_str(&format!(
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        let ly = MARGIN_TOP + 14.0 * idx as f64 + 6.0;
        svg.push_str(&format!(
            "  <line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            MARGIN_LEFT + plot_w - 120.0,
            MARGIN_LEFT + plot_w - 96.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\">{}</text>\n",
            MARGIN_LEFT + plot_w - 90.0,
            ly + 4.0,
            escape(label)
        ));
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_one_polyline_per_series_inside_the_canvas() {
        let plot = PlotSeries {
            title: "power of the adaptive test".into(),
            y_label: "rejection rate".into(),
            gammas: vec![1.0, 2.0, 3.0],
            series: vec![
                ("adaptive".into(), vec![0.9, 0.5, 0.1]),
                ("mh".into(), vec![0.8, 0.3, 0.05]),
            ],
            reference: Some(("alpha".into(), 0.05)),
        };
        let svg = render(&plot).unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.contains("alpha = 0.05"));

        // Monotone decreasing data must render with increasing y pixels.
        let points = svg
            .split("points=\"")
            .nth(1)
            .unwrap()
            .split('"')
            .next()
            .unwrap();
        let ys: Vec<f64> = points
            .split(' ')
            .map(|p| p.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert!(ys[0] < ys[1] && ys[1] < ys[2]);
    }

    #[test]
    fn rejects_misaligned_series_and_escapes_markup() {
        let plot = PlotSeries {
            title: "a < b".into(),
            y_label: "level".into(),
            gammas: vec![1.0, 2.0],
            series: vec![("bad".into(), vec![0.5])],
            reference: None,
        };
        assert!(render(&plot).is_err());

        let plot = PlotSeries {
            series: vec![("ok".into(), vec![0.5, 0.4])],
            ..plot
        };
        let svg = render(&plot).unwrap();
        assert!(svg.contains("a &lt; b"));
    }
}
