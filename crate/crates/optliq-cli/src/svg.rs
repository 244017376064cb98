//! Minimal self-contained SVG emitters: line charts and heatmaps, with the
//! plotted numbers embedded as a comment for provenance.

use std::fmt::Write as _;

const W: f64 = 840.0;
const H: f64 = 560.0;
const MARGIN: f64 = 64.0;

fn axis_bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn header(title: &str, data_comment: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"monospace\" font-size=\"13\">\n\
         <!-- data\n{data_comment}\n-->\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"28\" font-size=\"16\">{title}</text>\n",
        MARGIN
    )
}

fn axes(x_label: &str, y_label: &str, xb: (f64, f64), yb: (f64, f64)) -> String {
    let mut s = String::new();
    let x0 = MARGIN;
    let x1 = W - MARGIN;
    let y0 = H - MARGIN;
    let y1 = MARGIN;
    let _ = write!(
        s,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\
         <text x=\"{}\" y=\"{}\">{x_label}</text>\
         <text x=\"12\" y=\"{}\" transform=\"rotate(-90 12 {})\">{y_label}</text>",
        (x0 + x1) / 2.0 - 30.0,
        H - 20.0,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = xb.0 + f * (xb.1 - xb.0);
        let yv = yb.0 + f * (yb.1 - yb.0);
        let xp = x0 + f * (x1 - x0);
        let yp = y0 - f * (y0 - y1);
        let _ = write!(
            s,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\">{:.4}</text>\
             <text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{:.4}</text>",
            xp - 14.0,
            y0 + 18.0,
            xv,
            x0 - 6.0,
            yp + 4.0,
            yv
        );
    }
    s
}

/// Multi-series line chart.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    let xb = axis_bounds(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)));
    let yb = axis_bounds(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)));
    let mut comment = String::new();
    for (name, pts) in series {
        let _ = writeln!(comment, "# {name}");
        for (x, y) in pts {
            let _ = writeln!(comment, "{x},{y}");
        }
    }
    let mut svg = header(title, &comment);
    svg.push_str(&axes(x_label, y_label, xb, yb));
    let colors = ["#1f6fb2", "#c23b22", "#2e8b57", "#8a2be2", "#b8860b"];
    for (si, (name, pts)) in series.iter().enumerate() {
        let color = colors[si % colors.len()];
        let mut d = String::new();
        for (i, (x, y)) in pts.iter().enumerate().filter(|(_, p)| p.1.is_finite()) {
            let xp = MARGIN + (x - xb.0) / (xb.1 - xb.0) * (W - 2.0 * MARGIN);
            let yp = H - MARGIN - (y - yb.0) / (yb.1 - yb.0) * (H - 2.0 * MARGIN);
            let _ = write!(d, "{}{xp:.2},{yp:.2} ", if i == 0 { "M" } else { "L" });
        }
        let _ = write!(
            svg,
            "<path d=\"{d}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"/>\
             <text x=\"{}\" y=\"{}\" fill=\"{color}\">{name}</text>",
            W - MARGIN - 180.0,
            MARGIN + 18.0 * (si as f64 + 1.0),
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Heatmap over a regular lattice; `values[i][j]` maps row `i` (y) and
/// column `j` (x). Non-finite cells render grey.
pub fn heatmap(
    title: &str,
    x_label: &str,
    y_label: &str,
    x_coords: &[f64],
    y_coords: &[f64],
    values: &[Vec<f64>],
) -> String {
    let mut comment = String::new();
    for (i, row) in values.iter().enumerate() {
        let _ = writeln!(
            comment,
            "{}: {}",
            y_coords[i],
            row.iter()
                .map(|v| format!("{v:.6e}"))
                .collect::<Vec<_>>()
                .join(",")
        );
    }
    let (lo, hi) = axis_bounds(values.iter().flatten().cloned());
    let mut svg = header(title, &comment);
    svg.push_str(&axes(
        x_label,
        y_label,
        (x_coords[0], *x_coords.last().unwrap()),
        (y_coords[0], *y_coords.last().unwrap()),
    ));
    let cw = (W - 2.0 * MARGIN) / x_coords.len() as f64;
    let ch = (H - 2.0 * MARGIN) / y_coords.len() as f64;
    for (i, row) in values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let color = if !v.is_finite() {
                "#bbbbbb".to_string()
            } else {
                let f = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
                // Blue-to-red ramp.
                format!(
                    "rgb({},{},{})",
                    (40.0 + 200.0 * f) as u8,
                    (60.0 + 60.0 * (1.0 - (2.0 * f - 1.0).abs())) as u8,
                    (220.0 - 180.0 * f) as u8
                )
            };
            let xp = MARGIN + j as f64 * cw;
            let yp = H - MARGIN - (i as f64 + 1.0) * ch;
            let _ = write!(
                svg,
                "<rect x=\"{xp:.2}\" y=\"{yp:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\"/>",
                cw + 0.5,
                ch + 0.5
            );
        }
    }
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"11\">range [{lo:.4e}, {hi:.4e}]</text>",
        MARGIN,
        MARGIN - 8.0
    );
    svg.push_str("</svg>\n");
    svg
}
