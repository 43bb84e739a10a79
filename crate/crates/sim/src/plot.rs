//! Static SVG plot of loss-vs-step curves.
//!
//! Hand-rolled polylines keep the output a deterministic function of the
//! runs, with no font rasterization or plotting-library dependency.

use crate::train::TrainRun;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 540.0;
const MARGIN: f64 = 60.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

/// Mean-train-loss curves for every run, one polyline per run, labeled
/// `policy@keep` in the legend. Returns a complete SVG document.
pub fn loss_curves_svg(runs: &[TrainRun]) -> String {
    let mut points_by_run: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    let mut max_step: f64 = 1.0;
    let mut min_loss = f64::INFINITY;
    let mut max_loss = f64::NEG_INFINITY;
    for run in runs {
        let label = format!("{}@{}", run.policy.kind.name(), run.policy.config.keep_fraction);
        let points: Vec<(f64, f64)> = run
            .records
            .iter()
            .filter_map(|r| r.mean_train_loss.map(|l| (r.step as f64, l)))
            .collect();
        for &(s, l) in &points {
            max_step = max_step.max(s);
            min_loss = min_loss.min(l);
            max_loss = max_loss.max(l);
        }
        points_by_run.push((label, points));
    }
    if !min_loss.is_finite() {
        min_loss = 0.0;
        max_loss = 1.0;
    }
    if max_loss - min_loss < 1e-12 {
        max_loss = min_loss + 1.0;
    }

    let x_of = |step: f64| MARGIN + (step - 1.0) / (max_step - 1.0).max(1.0) * (WIDTH - 2.0 * MARGIN);
    let y_of =
        |loss: f64| HEIGHT - MARGIN - (loss - min_loss) / (max_loss - min_loss) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    ));
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN
    ));
    svg.push_str(&format!(
        "<text x=\"{x}\" y=\"{y}\" font-size=\"14\" text-anchor=\"middle\">step</text>\n",
        x = WIDTH / 2.0,
        y = HEIGHT - MARGIN / 3.0
    ));
    svg.push_str(&format!(
        "<text x=\"{x}\" y=\"{y}\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 {x} {y})\">mean train loss</text>\n",
        x = MARGIN / 3.0,
        y = HEIGHT / 2.0
    ));
    // y-axis range labels
    svg.push_str(&format!(
        "<text x=\"{x}\" y=\"{y}\" font-size=\"12\" text-anchor=\"end\">{v:.3}</text>\n",
        x = MARGIN - 6.0,
        y = HEIGHT - MARGIN,
        v = min_loss
    ));
    svg.push_str(&format!(
        "<text x=\"{x}\" y=\"{y}\" font-size=\"12\" text-anchor=\"end\">{v:.3}</text>\n",
        x = MARGIN - 6.0,
        y = MARGIN + 4.0,
        v = max_loss
    ));

    for (index, (label, points)) in points_by_run.iter().enumerate() {
        let color = PALETTE[index % PALETTE.len()];
        if !points.is_empty() {
            let path: Vec<String> = points
                .iter()
                .map(|&(s, l)| format!("{:.2},{:.2}", x_of(s), y_of(l)))
                .collect();
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                path.join(" ")
            ));
        }
        let legend_y = MARGIN + 16.0 * index as f64;
        svg.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y}\" width=\"12\" height=\"3\" fill=\"{color}\"/>\n",
            x = WIDTH - MARGIN - 150.0,
            y = legend_y
        ));
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{y}\" font-size=\"12\">{label}</text>\n",
            x = WIDTH - MARGIN - 132.0,
            y = legend_y + 5.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
