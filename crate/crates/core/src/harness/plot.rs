//! Static SVG plots: accuracy progression and the PCA scatter of a defense
//! round.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::fl::RoundRecord;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;

fn svg_header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"16\">{title}</text>\n",
        WIDTH / 2.0
    )
}

fn polyline(points: &[(f64, f64)], color: &str) -> String {
    let mut path = String::new();
    for (x, y) in points {
        let _ = write!(path, "{x:.2},{y:.2} ");
    }
    format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{path}\"/>\n")
}

/// Global- and backdoor-accuracy curves over rounds.
pub fn plot_progress(records: &[RoundRecord], path: &Path) -> Result<()> {
    let n = records.len().max(2);
    let x_of = |i: usize| MARGIN + (WIDTH - 2.0 * MARGIN) * i as f64 / (n - 1) as f64;
    let y_of = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * v.clamp(0.0, 1.0);

    let mut svg = svg_header("Accuracy per round");
    // Axes and gridlines at 0.25 steps.
    for step in 0..=4 {
        let v = step as f64 * 0.25;
        let y = y_of(v);
        let _ = write!(
            svg,
            "<line x1=\"{MARGIN}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{v:.2}</text>\n",
            WIDTH - MARGIN,
            MARGIN - 6.0,
            y + 4.0
        );
    }
    let _ = write!(
        svg,
        "<line x1=\"{MARGIN}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
         <line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
         <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\">round</text>\n",
        HEIGHT - MARGIN,
        WIDTH - MARGIN,
        HEIGHT - MARGIN,
        HEIGHT - MARGIN,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );

    let ga: Vec<(f64, f64)> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (x_of(i), y_of(r.global_accuracy)))
        .collect();
    let ba: Vec<(f64, f64)> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (x_of(i), y_of(r.backdoor_accuracy)))
        .collect();
    svg.push_str(&polyline(&ga, "steelblue"));
    svg.push_str(&polyline(&ba, "crimson"));
    let _ = write!(
        svg,
        "<text x=\"{:.1}\" y=\"40\" font-family=\"sans-serif\" font-size=\"12\" \
         fill=\"steelblue\">global accuracy</text>\n\
         <text x=\"{:.1}\" y=\"56\" font-family=\"sans-serif\" font-size=\"12\" \
         fill=\"crimson\">backdoor accuracy</text>\n",
        WIDTH - 190.0,
        WIDTH - 190.0
    );
    svg.push_str("</svg>\n");
    fs::write(path, svg)?;
    Ok(())
}

/// Scatter of PCA-projected mean predictions for the most recent defense
/// round, majority vs minority, with selected adversaries ringed. Returns
/// false when no round carries defense details.
pub fn plot_pca_scatter(records: &[RoundRecord], path: &Path) -> Result<bool> {
    let Some(record) = records.iter().rev().find(|r| r.defense.is_some()) else {
        return Ok(false);
    };
    let detail = record.defense.as_ref().unwrap();
    let projection = detail
        .projections
        .iter()
        .find(|p| !p.minority.is_empty())
        .or_else(|| detail.projections.first());
    let Some(projection) = projection else {
        return Ok(false);
    };

    let xs: Vec<f64> = projection.points.iter().map(|p| p[0]).collect();
    let ys: Vec<f64> = projection
        .points
        .iter()
        .map(|p| if p.len() > 1 { p[1] } else { 0.0 })
        .collect();
    let (min_x, max_x) = bounds(&xs);
    let (min_y, max_y) = bounds(&ys);
    let sx = |v: f64| MARGIN + (WIDTH - 2.0 * MARGIN) * (v - min_x) / (max_x - min_x);
    let sy = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (v - min_y) / (max_y - min_y);

    let mut svg = svg_header(&format!(
        "PCA projection, round {}, class {}",
        record.round_index, projection.class_id
    ));
    for (pos, agent) in detail.scores.agent_ids.iter().enumerate() {
        let x = sx(xs[pos]);
        let y = sy(ys[pos]);
        let color = if projection.minority.contains(&pos) {
            "crimson"
        } else {
            "steelblue"
        };
        let _ = writeln!(
            svg,
            "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"6\" fill=\"{color}\"/>"
        );
        if record.adversary_ids_selected.contains(agent) {
            let _ = writeln!(
                svg,
                "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"10\" fill=\"none\" \
                 stroke=\"black\" stroke-width=\"2\"/>"
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" \
             font-size=\"10\">{agent}</text>",
            x + 10.0,
            y - 6.0
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{MARGIN}\" y=\"40\" font-family=\"sans-serif\" font-size=\"12\" \
         fill=\"steelblue\">majority</text>\n\
         <text x=\"{MARGIN}\" y=\"56\" font-family=\"sans-serif\" font-size=\"12\" \
         fill=\"crimson\">minority</text>\n\
         <text x=\"{MARGIN}\" y=\"72\" font-family=\"sans-serif\" font-size=\"12\">\
         ring = selected adversary</text>\n"
    );
    svg.push_str("</svg>\n");
    fs::write(path, svg)?;
    Ok(true)
}

fn bounds(values: &[f64]) -> (f64, f64) {
    let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = (hi - lo) * 0.1;
    (lo - pad, hi + pad)
}
