//! Minimal SVG output: polylines, markers and the table outline.

use std::fmt::Write as _;

use crate::camgeom::TableModel;
use crate::synthbench::{EvalReport, ViewName};

const PX_PER_M: f64 = 100.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

struct Panel {
    x0: f64,
    y0: f64,
    /// World range on the horizontal and vertical axes, m.
    h: [f64; 2],
    v: [f64; 2],
}

impl Panel {
    fn width(&self) -> f64 {
        (self.h[1] - self.h[0]) * PX_PER_M
    }

    fn height(&self) -> f64 {
        (self.v[1] - self.v[0]) * PX_PER_M
    }

    fn map(&self, h: f64, v: f64) -> (f64, f64) {
        (self.x0 + (h - self.h[0]) * PX_PER_M, self.y0 + (self.v[1] - v) * PX_PER_M)
    }

    fn polyline(&self, s: &mut String, pts: impl Iterator<Item = (f64, f64)>, style: &str) {
        let coords: Vec<String> = pts
            .map(|(h, v)| {
                let (x, y) = self.map(h, v);
                format!("{x:.1},{y:.1}")
            })
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" {style}/>"#, coords.join(" "));
    }

    fn frame(&self, s: &mut String, title: &str) {
        let _ = writeln!(
            s,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#ccc"/>"##,
            self.x0,
            self.y0,
            self.width(),
            self.height()
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="14">{title}</text>"#, self.x0 + 4.0, self.y0 - 6.0);
    }
}

/// Top-down (x-y) and side (y-z) views of 3D paths given as `[t, x, y, z]` rows.
pub fn trajectories_svg(paths: &[Vec<[f64; 4]>], table: &TableModel) -> String {
    let margin = 30.0;
    let (hl, hw) = (table.length / 2.0, table.width / 2.0);
    let top = Panel { x0: margin, y0: margin, h: [-2.0, 2.0], v: [-3.5, 3.5] };
    let side = Panel { x0: 2.0 * margin + top.width(), y0: margin, h: [-3.5, 3.5], v: [0.0, 3.0] };
    let w = 3.0 * margin + top.width() + side.width();
    let h = 2.0 * margin + top.height();
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n"
    );
    top.frame(&mut s, "top (x, y)");
    side.frame(&mut s, "side (y, z)");
    let table_style = r##"fill="#e8f0e8" stroke="#2a6f2a" stroke-width="2""##;
    top.polyline(&mut s, [(-hw, -hl), (hw, -hl), (hw, hl), (-hw, hl), (-hw, -hl)].into_iter(), table_style);
    top.polyline(&mut s, [(-hw, 0.0), (hw, 0.0)].into_iter(), r##"stroke="#2a6f2a""##);
    side.polyline(&mut s, [(-hl, table.height), (hl, table.height)].into_iter(), r##"stroke="#2a6f2a" stroke-width="3""##);
    side.polyline(
        &mut s,
        [(0.0, table.height), (0.0, table.height + 0.1525)].into_iter(),
        r##"stroke="#555" stroke-width="2""##,
    );
    for (k, path) in paths.iter().enumerate() {
        let style = format!(r#"fill="none" stroke="{}" stroke-width="1.5""#, COLORS[k % COLORS.len()]);
        top.polyline(&mut s, path.iter().map(|r| (r[1], r[2])), &style);
        side.polyline(&mut s, path.iter().map(|r| (r[2], r[3])), &style);
    }
    s += "</svg>\n";
    s
}

/// Per-trajectory MAE of successful reconstructions, one column per view
/// and noise setting.
pub fn mae_scatter_svg(report: &EvalReport) -> String {
    let mut columns: Vec<(ViewName, bool)> = Vec::new();
    for r in &report.records {
        if !columns.contains(&(r.view, r.noisy)) {
            columns.push((r.view, r.noisy));
        }
    }
    columns.sort();
    let maes: Vec<f64> = report.records.iter().filter_map(|r| r.mae_cm.filter(|_| r.success)).collect();
    let y_max = maes.iter().copied().fold(1.0, f64::max).ceil();
    let (left, top, col_w, plot_h) = (60.0, 30.0, 110.0, 400.0);
    let w = left + col_w * columns.len().max(1) as f64 + 20.0;
    let h = top + plot_h + 50.0;
    let y_of = |m: f64| top + plot_h * (1.0 - m / y_max);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n"
    );
    let _ = writeln!(
        s,
        r##"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.1}" stroke="#000"/>"##,
        top + plot_h
    );
    for k in 0..=4 {
        let m = y_max * k as f64 / 4.0;
        let y = y_of(m);
        let _ = writeln!(
            s,
            r##"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{m:.1}</text><line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#eee"/>"##,
            left - 4.0,
            y + 4.0,
            w - 20.0
        );
    }
    let _ = writeln!(s, r#"<text x="12" y="{:.1}" font-size="12" transform="rotate(-90 12 {:.1})">MAE [cm]</text>"#, top + plot_h / 2.0, top + plot_h / 2.0);
    for (c, &(view, noisy)) in columns.iter().enumerate() {
        let cx = left + col_w * (c as f64 + 0.5);
        let color = if noisy { COLORS[1] } else { COLORS[0] };
        let label = format!("{} {}", view.as_str(), if noisy { "noisy" } else { "clean" });
        let _ = writeln!(s, r#"<text x="{cx:.1}" y="{:.1}" font-size="12" text-anchor="middle">{label}</text>"#, top + plot_h + 20.0);
        for r in report.records.iter().filter(|r| r.view == view && r.noisy == noisy && r.success) {
            if let Some(m) = r.mae_cm {
                // fixed spread by trajectory index keeps the output deterministic
                let dx = ((r.index * 37) % 61) as f64 - 30.0;
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}" fill-opacity="0.6"/>"#,
                    cx + dx,
                    y_of(m)
                );
            }
        }
    }
    s += "</svg>\n";
    s
}
