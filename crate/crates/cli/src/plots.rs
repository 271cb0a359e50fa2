//! Static SVG emitters for run reports. All output is a pure function of the
//! plotted data: no timestamps, generator banners or random identifiers, so
//! reruns produce byte-identical files.

use std::fmt::Write as _;

use gestauth_core::eval::RocPoint;
use gestauth_core::TimeSeries;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

/// Maps data coordinates into a pixel rectangle (y axis flipped).
struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Frame {
    fn new(x0: f64, y0: f64, w: f64, h: f64, xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Frame {
        let xspan = if xmax > xmin { xmax - xmin } else { 1.0 };
        let yspan = if ymax > ymin { ymax - ymin } else { 1.0 };
        Frame {
            x0,
            y0,
            w,
            h,
            xmin,
            xmax: xmin + xspan,
            ymin,
            ymax: ymin + yspan,
        }
    }

    fn px(&self, x: f64) -> f64 {
        self.x0 + (x - self.xmin) / (self.xmax - self.xmin) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        self.y0 + self.h - (y - self.ymin) / (self.ymax - self.ymin) * self.h
    }
}

fn svg_open(out: &mut String, w: f64, h: f64) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w:.0} {h:.0}\" \
         font-family=\"sans-serif\" font-size=\"13\">\n\
         <rect width=\"{w:.0}\" height=\"{h:.0}\" fill=\"white\"/>\n"
    );
}

fn polyline(out: &mut String, pts: &[(f64, f64)], stroke: &str, width: f64, dash: Option<&str>) {
    if pts.is_empty() {
        return;
    }
    let mut d = String::new();
    for (i, (x, y)) in pts.iter().enumerate() {
        let _ = write!(d, "{}{x:.2},{y:.2}", if i == 0 { "" } else { " " });
    }
    let dash = dash.map(|d| format!(" stroke-dasharray=\"{d}\"")).unwrap_or_default();
    let _ = write!(
        out,
        "<polyline points=\"{d}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"{width}\"{dash}/>\n"
    );
}

fn text(out: &mut String, x: f64, y: f64, anchor: &str, content: &str, extra: &str) {
    let _ = write!(
        out,
        "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\"{extra}>{content}</text>\n"
    );
}

/// Axes with 0/0.25/0.5/0.75/1 ticks for unit-square metric plots.
fn unit_axes(out: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let _ = write!(
        out,
        "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#333\"/>\n",
        f.x0, f.y0, f.w, f.h
    );
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let label = format!("{v:.2}");
        text(out, f.px(v), f.y0 + f.h + 18.0, "middle", &label, "");
        text(out, f.x0 - 8.0, f.py(v) + 4.0, "end", &label, "");
        polyline(out, &[(f.px(v), f.y0 + f.h), (f.px(v), f.y0 + f.h + 4.0)], "#333", 1.0, None);
        polyline(out, &[(f.x0 - 4.0, f.py(v)), (f.x0, f.py(v))], "#333", 1.0, None);
    }
    text(out, f.x0 + f.w / 2.0, f.y0 + f.h + 40.0, "middle", xlabel, "");
    let x = f.x0 - 40.0;
    let y = f.y0 + f.h / 2.0;
    text(
        out,
        x,
        y,
        "middle",
        ylabel,
        &format!(" transform=\"rotate(-90 {x:.1} {y:.1})\""),
    );
}

/// ROC curve (true accept rate against false accept rate) with the random
/// classifier diagonal for reference.
pub fn roc_svg(roc: &[RocPoint], title: &str) -> String {
    let mut out = String::new();
    svg_open(&mut out, WIDTH, HEIGHT);
    let f = Frame::new(70.0, 50.0, WIDTH - 110.0, HEIGHT - 130.0, 0.0, 1.0, 0.0, 1.0);
    text(&mut out, WIDTH / 2.0, 28.0, "middle", title, " font-size=\"16\"");
    unit_axes(&mut out, &f, "false accept rate", "true accept rate");
    polyline(
        &mut out,
        &[(f.px(0.0), f.py(0.0)), (f.px(1.0), f.py(1.0))],
        "#999",
        1.0,
        Some("4 4"),
    );
    let pts: Vec<(f64, f64)> = roc.iter().map(|p| (f.px(p.far), f.py(p.tar))).collect();
    polyline(&mut out, &pts, PALETTE[0], 2.0, None);
    out.push_str("</svg>\n");
    out
}

/// Top-2 principal axes of the rows (symmetric Jacobi eigensolver), for the
/// latent scatter projection. Falls back to the first two raw coordinates
/// when the input is degenerate.
pub fn principal_plane(rows: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let n = rows.len();
    if n == 0 {
        return Vec::new();
    }
    let d = rows[0].len();
    if n < 2 || d < 2 {
        return rows
            .iter()
            .map(|r| (r.first().copied().unwrap_or(0.0), r.get(1).copied().unwrap_or(0.0)))
            .collect();
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    // Covariance, then cyclic Jacobi rotations until off-diagonal mass dies.
    let mut c = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                c[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    for row in &mut c {
        for v in row.iter_mut() {
            *v /= (n - 1) as f64;
        }
    }
    let mut vecs = vec![vec![0.0; d]; d];
    for (i, row) in vecs.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..50 {
        let mut off = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                off += c[p][q] * c[p][q];
            }
        }
        if off < 1e-18 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                if c[p][q].abs() < 1e-15 {
                    continue;
                }
                let theta = 0.5 * (2.0 * c[p][q]).atan2(c[p][p] - c[q][q]);
                let (s, co) = theta.sin_cos();
                for k in 0..d {
                    let (ckp, ckq) = (c[k][p], c[k][q]);
                    c[k][p] = co * ckp + s * ckq;
                    c[k][q] = -s * ckp + co * ckq;
                }
                for k in 0..d {
                    let (cpk, cqk) = (c[p][k], c[q][k]);
                    c[p][k] = co * cpk + s * cqk;
                    c[q][k] = -s * cpk + co * cqk;
                }
                for row in vecs.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = co * vp + s * vq;
                    row[q] = -s * vp + co * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| c[b][b].partial_cmp(&c[a][a]).unwrap_or(std::cmp::Ordering::Equal));
    let mut axes = [vec![0.0; d], vec![0.0; d]];
    for (slot, &idx) in axes.iter_mut().zip(order.iter().take(2)) {
        for k in 0..d {
            slot[k] = vecs[k][idx];
        }
        // Fix the sign so the projection is reproducible across runs.
        let lead = slot
            .iter()
            .cloned()
            .max_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap_or(1.0);
        if lead < 0.0 {
            for v in slot.iter_mut() {
                *v = -*v;
            }
        }
    }
    rows.iter()
        .map(|r| {
            let centered: Vec<f64> = r.iter().zip(&mean).map(|(v, m)| v - m).collect();
            let dot = |axis: &[f64]| centered.iter().zip(axis).map(|(a, b)| a * b).sum::<f64>();
            (dot(&axes[0]), dot(&axes[1]))
        })
        .collect()
}

/// Scatter of projected latent embeddings, one color per class label.
pub fn scatter_svg(points: &[(f64, f64)], class_of: &[usize], classes: &[String], title: &str) -> String {
    let mut out = String::new();
    svg_open(&mut out, WIDTH, HEIGHT);
    text(&mut out, WIDTH / 2.0, 28.0, "middle", title, " font-size=\"16\"");
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    if points.is_empty() {
        (xmin, xmax, ymin, ymax) = (0.0, 1.0, 0.0, 1.0);
    }
    let pad_x = 0.05 * (xmax - xmin).max(1e-9);
    let pad_y = 0.05 * (ymax - ymin).max(1e-9);
    let f = Frame::new(
        70.0,
        50.0,
        WIDTH - 110.0,
        HEIGHT - 130.0,
        xmin - pad_x,
        xmax + pad_x,
        ymin - pad_y,
        ymax + pad_y,
    );
    let _ = write!(
        out,
        "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#333\"/>\n",
        f.x0, f.y0, f.w, f.h
    );
    text(&mut out, f.x0 + f.w / 2.0, f.y0 + f.h + 30.0, "middle", "component 1", "");
    let (lx, ly) = (f.x0 - 30.0, f.y0 + f.h / 2.0);
    text(
        &mut out,
        lx,
        ly,
        "middle",
        "component 2",
        &format!(" transform=\"rotate(-90 {lx:.1} {ly:.1})\""),
    );
    for (&(x, y), &cls) in points.iter().zip(class_of) {
        let _ = write!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{}\" fill-opacity=\"0.75\"/>\n",
            f.px(x),
            f.py(y),
            PALETTE[cls % PALETTE.len()]
        );
    }
    for (i, name) in classes.iter().enumerate() {
        let y = 55.0 + 18.0 * i as f64;
        let _ = write!(
            out,
            "<circle cx=\"{:.1}\" cy=\"{y:.1}\" r=\"4\" fill=\"{}\"/>\n",
            f.x0 + f.w - 120.0,
            PALETTE[i % PALETTE.len()]
        );
        text(&mut out, f.x0 + f.w - 110.0, y + 4.0, "start", name, "");
    }
    out.push_str("</svg>\n");
    out
}

/// Channel-by-channel overlay of original windows (solid) and their paired
/// reconstructions or synthetics (dashed). One column per window pair.
pub fn overlay_svg(pairs: &[(String, &TimeSeries, &TimeSeries)], title: &str) -> String {
    let mut out = String::new();
    let cols = pairs.len().max(1);
    let channels = pairs.first().map(|(_, a, _)| a.cols()).unwrap_or(1);
    let cell_w = 240.0;
    let cell_h = 90.0;
    let (x0, y0) = (60.0, 60.0);
    let width = x0 + cols as f64 * (cell_w + 20.0) + 20.0;
    let height = y0 + channels as f64 * (cell_h + 12.0) + 40.0;
    svg_open(&mut out, width, height);
    text(&mut out, width / 2.0, 28.0, "middle", title, " font-size=\"16\"");
    for (col, (name, real, synth)) in pairs.iter().enumerate() {
        let cx = x0 + col as f64 * (cell_w + 20.0);
        text(&mut out, cx + cell_w / 2.0, y0 - 10.0, "middle", name, "");
        for ch in 0..channels {
            let cy = y0 + ch as f64 * (cell_h + 12.0);
            let series_min_max = |ts: &TimeSeries| {
                ts.column(ch)
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    })
            };
            let (alo, ahi) = series_min_max(real);
            let (blo, bhi) = series_min_max(synth);
            let (lo, hi) = (alo.min(blo), ahi.max(bhi));
            let len = real.rows().max(synth.rows()).max(2);
            let f = Frame::new(cx, cy, cell_w, cell_h, 0.0, (len - 1) as f64, lo, hi);
            let _ = write!(
                out,
                "<rect x=\"{cx:.1}\" y=\"{cy:.1}\" width=\"{cell_w}\" height=\"{cell_h}\" fill=\"none\" stroke=\"#ccc\"/>\n"
            );
            if col == 0 {
                text(&mut out, cx - 8.0, cy + cell_h / 2.0 + 4.0, "end", &format!("ch {ch}"), "");
            }
            let to_pts = |ts: &TimeSeries| -> Vec<(f64, f64)> {
                ts.column(ch)
                    .iter()
                    .enumerate()
                    .map(|(t, &v)| (f.px(t as f64), f.py(v)))
                    .collect()
            };
            polyline(&mut out, &to_pts(real), PALETTE[0], 1.5, None);
            polyline(&mut out, &to_pts(synth), PALETTE[1], 1.5, Some("5 3"));
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Enrolment-sweep curves: FAR at zero false rejections (solid) and AUROC
/// (dashed) for the baseline and augmented arms.
pub fn sweep_svg(rows: &[(usize, f64, f64, f64, f64)], title: &str) -> String {
    // rows: (count, baseline_far0, augmented_far0, baseline_auroc, augmented_auroc)
    let mut out = String::new();
    svg_open(&mut out, WIDTH, HEIGHT);
    text(&mut out, WIDTH / 2.0, 28.0, "middle", title, " font-size=\"16\"");
    let xmax = rows.iter().map(|r| r.0).max().unwrap_or(1) as f64;
    let f = Frame::new(70.0, 50.0, WIDTH - 110.0, HEIGHT - 130.0, 0.0, xmax.max(1.0), 0.0, 1.0);
    unit_axes(&mut out, &f, "gestures per terminal", "metric value");
    let series = |sel: fn(&(usize, f64, f64, f64, f64)) -> f64| -> Vec<(f64, f64)> {
        rows.iter().map(|r| (f.px(r.0 as f64), f.py(sel(r)))).collect()
    };
    polyline(&mut out, &series(|r| r.1), PALETTE[0], 2.0, None);
    polyline(&mut out, &series(|r| r.2), PALETTE[1], 2.0, None);
    polyline(&mut out, &series(|r| r.3), PALETTE[0], 2.0, Some("6 4"));
    polyline(&mut out, &series(|r| r.4), PALETTE[1], 2.0, Some("6 4"));
    let legend = [
        (PALETTE[0], "baseline FAR@0 (solid) / AUROC (dashed)"),
        (PALETTE[1], "augmented FAR@0 (solid) / AUROC (dashed)"),
    ];
    for (i, (color, label)) in legend.iter().enumerate() {
        let y = 60.0 + 20.0 * i as f64;
        polyline(&mut out, &[(f.x0 + 10.0, y), (f.x0 + 40.0, y)], color, 3.0, None);
        text(&mut out, f.x0 + 48.0, y + 4.0, "start", label, "");
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn principal_plane_recovers_a_planted_axis() {
        // Points spread along (1,1,0)/sqrt(2): component 1 must carry nearly
        // all the variance and order the points by their position on it.
        let rows: Vec<Vec<f64>> = (0..9)
            .map(|i| {
                let t = i as f64 - 4.0;
                vec![t, t, 0.001 * (i % 3) as f64]
            })
            .collect();
        let proj = principal_plane(&rows);
        assert_eq!(proj.len(), 9);
        for w in proj.windows(2) {
            assert!(
                (w[1].0 - w[0].0).abs() > 1.0,
                "component 1 should separate consecutive points"
            );
        }
        let spread1: f64 = proj.iter().map(|p| p.0 * p.0).sum();
        let spread2: f64 = proj.iter().map(|p| p.1 * p.1).sum();
        assert!(spread1 > 100.0 * spread2, "{spread1} vs {spread2}");
    }

    #[test]
    fn svg_output_is_deterministic_and_well_formed() {
        let rows = vec![(1usize, 1.0, 0.8, 0.7, 0.75), (2, 0.9, 0.6, 0.8, 0.85)];
        let a = sweep_svg(&rows, "sweep");
        let b = sweep_svg(&rows, "sweep");
        assert_eq!(a, b);
        assert!(a.starts_with("<svg "));
        assert!(a.trim_end().ends_with("</svg>"));
    }
}
