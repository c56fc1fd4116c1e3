//! Dependency-free SVG line charts of simulation results: empirical MSE
//! against sample size, one polyline per estimator. The output embeds the
//! raw data values as attributes so tests can parse coordinates instead
//! of comparing bytes.

use crate::estimate::EstimatorKind;
use crate::mc::SimReport;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 130.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

const COLORS: &[(&str, &str)] = &[
    ("ht", "#1f77b4"),
    ("greg-linear", "#d62728"),
    ("greg-tree", "#2ca02c"),
];

fn color_for(kind: EstimatorKind) -> &'static str {
    COLORS
        .iter()
        .find(|(k, _)| *k == kind.to_string())
        .map(|(_, c)| *c)
        .unwrap_or("#555555")
}

/// Render the MSE-vs-n chart for one study variable.
/// Returns None if the report has no cells for the variable.
pub fn mse_chart(report: &SimReport, variable: &str) -> Option<String> {
    let cells: Vec<_> = report
        .cells
        .iter()
        .filter(|c| c.variable == variable)
        .collect();
    if cells.is_empty() {
        return None;
    }
    let mut estimators: Vec<EstimatorKind> = Vec::new();
    for c in &cells {
        if !estimators.contains(&c.estimator) {
            estimators.push(c.estimator);
        }
    }
    let mut ns: Vec<usize> = cells.iter().map(|c| c.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let (n_min, n_max) = (*ns.first().unwrap() as f64, *ns.last().unwrap() as f64);
    let mse_max = cells.iter().map(|c| c.mse).fold(0.0f64, f64::max).max(1e-300);

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let x_of = |n: f64| {
        if n_max > n_min {
            MARGIN_L + (n - n_min) / (n_max - n_min) * plot_w
        } else {
            MARGIN_L + plot_w / 2.0
        }
    };
    let y_of = |mse: f64| MARGIN_T + plot_h - (mse / mse_max) * plot_h;

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <title>empirical MSE vs sample size: {variable}</title>\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    );
    // Axes.
    svg.push_str(&format!(
        "<line class=\"axis\" x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line class=\"axis\" x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n",
        l = MARGIN_L,
        r = WIDTH - MARGIN_R,
        t = MARGIN_T,
        b = HEIGHT - MARGIN_B,
    ));
    // X tick labels at each sample size.
    for &n in &ns {
        let x = x_of(n as f64);
        svg.push_str(&format!(
            "<text class=\"xtick\" x=\"{x}\" y=\"{y}\" text-anchor=\"middle\" \
             font-size=\"12\">{n}</text>\n",
            y = HEIGHT - MARGIN_B + 18.0,
        ));
    }
    // Y axis extremes.
    svg.push_str(&format!(
        "<text class=\"ytick\" x=\"{x}\" y=\"{y0}\" text-anchor=\"end\" font-size=\"12\">0</text>\n\
         <text class=\"ytick\" x=\"{x}\" y=\"{y1}\" text-anchor=\"end\" font-size=\"12\">{mse_max:.3e}</text>\n",
        x = MARGIN_L - 6.0,
        y0 = HEIGHT - MARGIN_B,
        y1 = MARGIN_T + 4.0,
    ));
    svg.push_str(&format!(
        "<text x=\"{x}\" y=\"{y}\" text-anchor=\"middle\" font-size=\"13\">sample size n</text>\n",
        x = MARGIN_L + plot_w / 2.0,
        y = HEIGHT - 10.0,
    ));

    for (six, &kind) in estimators.iter().enumerate() {
        let mut pts = Vec::new();
        let mut raw = Vec::new();
        for &n in &ns {
            if let Some(c) = cells.iter().find(|c| c.n == n && c.estimator == kind) {
                pts.push(format!("{:.2},{:.2}", x_of(n as f64), y_of(c.mse)));
                raw.push(format!("{n}:{}", c.mse));
            }
        }
        let color = color_for(kind);
        svg.push_str(&format!(
            "<polyline class=\"series\" data-estimator=\"{kind}\" data-values=\"{}\" \
             points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            raw.join(" "),
            pts.join(" "),
        ));
        // Legend entry.
        let ly = MARGIN_T + 16.0 * six as f64;
        svg.push_str(&format!(
            "<line x1=\"{x0}\" y1=\"{ly}\" x2=\"{x1}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text class=\"legend\" x=\"{xt}\" y=\"{yt}\" font-size=\"12\">{kind}</text>\n",
            x0 = WIDTH - MARGIN_R + 10.0,
            x1 = WIDTH - MARGIN_R + 30.0,
            xt = WIDTH - MARGIN_R + 36.0,
            yt = ly + 4.0,
        ));
    }
    svg.push_str("</svg>\n");
    Some(svg)
}

/// Parse the `data-values` attribute of every series back out of a chart,
/// as (estimator name, (n, mse) pairs). Used by tests to diff charts
/// structurally.
pub fn parse_series(svg: &str) -> Vec<(String, Vec<(usize, f64)>)> {
    let mut out = Vec::new();
    for chunk in svg.split("<polyline class=\"series\"").skip(1) {
        let attr = |name: &str| -> Option<&str> {
            let key = format!("{name}=\"");
            let start = chunk.find(&key)? + key.len();
            let end = chunk[start..].find('"')? + start;
            Some(&chunk[start..end])
        };
        let (Some(est), Some(values)) = (attr("data-estimator"), attr("data-values")) else {
            continue;
        };
        let pairs = values
            .split_whitespace()
            .filter_map(|p| {
                let (n, mse) = p.split_once(':')?;
                Some((n.parse().ok()?, mse.parse().ok()?))
            })
            .collect();
        out.push((est.to_string(), pairs));
    }
    out
}
