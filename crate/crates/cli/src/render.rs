//! Human-readable report rendering and standalone SVG plots.

use plepi_core::metrics::MetricsReport;
use plepi_core::train::RoundRecord;

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.4}"),
        None => "undefined".to_string(),
    }
}

/// Fixed-width text table of the headline metrics and counts.
pub fn report_text(report: &MetricsReport) -> String {
    let c = &report.counts;
    let mut out = String::new();
    out.push_str("metric                        value\n");
    out.push_str("-----------------------------------\n");
    out.push_str(&format!("abundance R² (counts)         {}\n", fmt_opt(report.r2)));
    out.push_str(&format!(
        "abundance R² (frequencies)    {}\n",
        fmt_opt(c.r2_frequency)
    ));
    out.push_str(&format!(
        "abundance R² (cell level)     {}\n",
        fmt_opt(c.r2_cell_level)
    ));
    out.push_str(&format!(
        "cell recovery rate            {}\n",
        fmt_opt(report.cell_recovery_rate)
    ));
    out.push_str(&format!(
        "PPV (cell / spot)             {} / {}\n",
        fmt_opt(report.ppv_cell),
        fmt_opt(report.ppv_spot)
    ));
    out.push_str(&format!(
        "FDR_trick (cell / spot)       {} / {}\n",
        fmt_opt(report.fdr_trick_cell),
        fmt_opt(report.fdr_trick_spot)
    ));
    out.push_str(&format!(
        "FDR_other (cell / spot)       {} / {}\n",
        fmt_opt(report.fdr_other_cell),
        fmt_opt(report.fdr_other_spot)
    ));
    out.push_str(&format!(
        "FDR_trick rate-normalized     {} / {}\n",
        fmt_opt(c.fdr_trick_rate_normalized_cell),
        fmt_opt(c.fdr_trick_rate_normalized_spot)
    ));
    out.push('\n');
    out.push_str("counts\n");
    out.push_str("------\n");
    out.push_str(&format!("cells total / assigned        {} / {}\n", c.total_cells, c.assigned_cells));
    out.push_str(&format!(
        "spot calls total / assigned   {} / {}\n",
        c.total_spot_calls, c.assigned_spot_calls
    ));
    out.push_str(&format!("spot calls abstained          {}\n", c.abstained_spot_calls));
    out.push_str(&format!(
        "cell calls t/k/o              {} / {} / {}\n",
        c.cell.targeted, c.cell.trick, c.cell.other
    ));
    out.push_str(&format!(
        "spot calls t/k/o              {} / {} / {}\n",
        c.spot.targeted, c.spot.trick, c.spot.other
    ));
    out
}

const SVG_W: f64 = 480.0;
const SVG_H: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn svg_header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n\
         <rect width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{title}</text>\n",
        SVG_W / 2.0
    )
}

fn axes() -> String {
    format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = SVG_H - MARGIN,
        r = SVG_W - MARGIN / 2.0,
        t = MARGIN / 2.0
    )
}

/// Scatter of called vs reference abundance: exactly one point per
/// targeted barcode of the reference/called union, plus the identity
/// line.
pub fn abundance_scatter_svg(report: &MetricsReport) -> String {
    let keys: std::collections::BTreeSet<_> = report
        .called_abundance
        .keys()
        .chain(report.reference_abundance.keys())
        .collect();
    let max_v = keys
        .iter()
        .map(|k| {
            let r = *report.reference_abundance.get(k).unwrap_or(&0);
            let c = *report.called_abundance.get(k).unwrap_or(&0);
            r.max(c)
        })
        .max()
        .unwrap_or(1)
        .max(1) as f64;

    let sx = |v: f64| MARGIN + (v / max_v) * (SVG_W - 1.5 * MARGIN);
    let sy = |v: f64| (SVG_H - MARGIN) - (v / max_v) * (SVG_H - 1.5 * MARGIN);

    let mut svg = svg_header(&format!(
        "Called vs reference abundance (R² = {})",
        fmt_opt(report.r2)
    ));
    svg.push_str(&axes());
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n",
        sx(0.0),
        sy(0.0),
        sx(max_v),
        sy(max_v)
    ));
    for k in keys {
        let r = *report.reference_abundance.get(k).unwrap_or(&0) as f64;
        let c = *report.called_abundance.get(k).unwrap_or(&0) as f64;
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\" fill-opacity=\"0.7\"><title>{k}: ref {r}, called {c}</title></circle>\n",
            sx(r),
            sy(c)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">reference count</text>\n",
        SVG_W / 2.0,
        SVG_H - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(-90 14 {})\">called count</text>\n",
        SVG_H / 2.0,
        SVG_H / 2.0
    ));
    svg.push_str("</svg>\n");
    svg
}

/// Per-round monitoring curve from the training history: accuracy when
/// recorded, pseudo-label volume otherwise.
pub fn history_curve_svg(history: &[RoundRecord]) -> String {
    let accuracy: Vec<(usize, f64)> = history
        .iter()
        .filter_map(|r| r.holdout_accuracy.map(|a| (r.round, a)))
        .collect();
    let (title, points, y_max) = if accuracy.is_empty() {
        let pts: Vec<(usize, f64)> = history
            .iter()
            .map(|r| (r.round, (r.n_confident_labels + r.n_fused_labels) as f64))
            .collect();
        let y_max = pts.iter().map(|p| p.1).fold(1.0, f64::max);
        ("Pseudo-labels per round".to_string(), pts, y_max)
    } else {
        ("Monitoring accuracy per round".to_string(), accuracy, 1.0)
    };

    let x_max = points.iter().map(|p| p.0).max().unwrap_or(1).max(1) as f64;
    let sx = |v: f64| MARGIN + (v / x_max) * (SVG_W - 1.5 * MARGIN);
    let sy = |v: f64| (SVG_H - MARGIN) - (v / y_max) * (SVG_H - 1.5 * MARGIN);

    let mut svg = svg_header(&title);
    svg.push_str(&axes());
    let path: Vec<String> = points
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            format!(
                "{}{:.2},{:.2}",
                if i == 0 { "M" } else { "L" },
                sx(x as f64),
                sy(y)
            )
        })
        .collect();
    svg.push_str(&format!(
        "<path d=\"{}\" fill=\"none\" stroke=\"firebrick\" stroke-width=\"1.5\"/>\n",
        path.join(" ")
    ));
    for &(x, y) in &points {
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"firebrick\"><title>round {x}: {y:.4}</title></circle>\n",
            sx(x as f64),
            sy(y)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">round</text>\n",
        SVG_W / 2.0,
        SVG_H - 12.0
    ));
    svg.push_str("</svg>\n");
    svg
}
