//! Aggregate CSV and static SVG box plots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Result;
use coi_core::prompting::Mode;

use crate::analysis::{Analysis, Metric};
use crate::artifacts::{AGGREGATE, PLOTS_DIR};
use crate::pipeline::ItemRecord;

pub const CSV_HEADER: [&str; 11] = [
    "model",
    "mode",
    "metric",
    "median",
    "mean",
    "ci_lo",
    "ci_hi",
    "p_one_sided",
    "p_bh_adjusted",
    "dz",
    "n",
];

const NA: &str = "NA";

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| format!("{x:.6}"))
}

/// One row per (model, mode, metric). Test columns are filled on rag_coi
/// rows, which carry the rag_coi-vs-rag comparison.
pub fn summary_rows(analysis: &Analysis) -> Vec<[String; 11]> {
    let mut rows = Vec::new();
    for model in &analysis.models {
        for &mode in &analysis.modes {
            for metric in Metric::ALL {
                let Some(d) = analysis.descriptive(model, mode, metric) else {
                    continue;
                };
                let cmp = (mode == Mode::RagCoi)
                    .then(|| analysis.comparison(model, metric))
                    .flatten();
                let test = cmp.and_then(|c| c.test.as_ref());
                rows.push([
                    model.clone(),
                    mode.to_string(),
                    metric.to_string(),
                    num(d.median),
                    num(d.mean),
                    num(d.ci95.map(|c| c.0)),
                    num(d.ci95.map(|c| c.1)),
                    num(test.map(|t| t.p_one_sided)),
                    num(cmp.and_then(|c| c.p_bh_adjusted)),
                    num(test.and_then(|t| t.effect_size)),
                    d.n.to_string(),
                ]);
            }
        }
    }
    rows
}

pub fn write_report(out: &Path, analysis: &Analysis, items: &[ItemRecord], plots: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(out.join(AGGREGATE))?;
    w.write_record(CSV_HEADER)?;
    for row in summary_rows(analysis) {
        w.write_record(&row)?;
    }
    w.flush()?;
    if plots {
        let dir = out.join(PLOTS_DIR);
        fs::create_dir_all(&dir)?;
        for metric in Metric::ALL {
            fs::write(dir.join(format!("{metric}.svg")), box_plot_svg(analysis, items, metric))?;
        }
    }
    Ok(())
}

struct BoxStats {
    lo: f64,
    q1: f64,
    median: f64,
    q3: f64,
    hi: f64,
    outliers: Vec<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, j) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[i] + (sorted[j] - sorted[i]) * (pos - i as f64)
}

fn box_stats(values: &[f64]) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&s, 0.25), quantile(&s, 0.5), quantile(&s, 0.75));
    let fence = 1.5 * (q3 - q1);
    let inside: Vec<f64> = s.iter().copied().filter(|v| *v >= q1 - fence && *v <= q3 + fence).collect();
    Some(BoxStats {
        lo: inside.first().copied().unwrap_or(q1),
        q1,
        median,
        q3,
        hi: inside.last().copied().unwrap_or(q3),
        outliers: s.iter().copied().filter(|v| *v < q1 - fence || *v > q3 + fence).collect(),
    })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One box per (model, mode) with whiskers at 1.5 IQR.
pub fn box_plot_svg(analysis: &Analysis, items: &[ItemRecord], metric: Metric) -> String {
    let groups: Vec<(String, Vec<f64>)> = analysis
        .models
        .iter()
        .flat_map(|m| analysis.modes.iter().map(move |&mode| (m, mode)))
        .map(|(m, mode)| {
            let v = items
                .iter()
                .filter(|it| &it.report.model_id == m && it.report.mode == mode)
                .map(|it| metric.value(it))
                .collect();
            (format!("{m} / {mode}"), v)
        })
        .collect();
    let all: Vec<f64> = groups.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    let (mut ymin, mut ymax) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if all.is_empty() {
        (ymin, ymax) = (0.0, 1.0);
    }
    if ymax - ymin < 1e-9 {
        ymin -= 0.5;
        ymax += 0.5;
    }
    let (left, top, plot_h, slot) = (60.0, 40.0, 240.0, 90.0);
    let width = left + slot * groups.len().max(1) as f64 + 20.0;
    let height = top + plot_h + 80.0;
    let y = |v: f64| top + plot_h * (1.0 - (v - ymin) / (ymax - ymin));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{left}" y="20" font-size="14">{}</text>"#, metric);
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.2}" stroke="black"/>"#,
        top + plot_h
    );
    for k in 0..=4 {
        let v = ymin + (ymax - ymin) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            left - 6.0,
            y(v) + 4.0
        );
    }
    for (i, (label, values)) in groups.iter().enumerate() {
        let cx = left + slot * (i as f64 + 0.5);
        if let Some(b) = box_stats(values) {
            let (x0, x1) = (cx - 20.0, cx + 20.0);
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
                y(b.hi),
                y(b.q3)
            );
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
                y(b.q1),
                y(b.lo)
            );
            let _ = writeln!(
                s,
                r##"<rect x="{x0:.2}" y="{:.2}" width="40" height="{:.2}" fill="#9ecae1" stroke="black"/>"##,
                y(b.q3),
                (y(b.q1) - y(b.q3)).max(0.5)
            );
            let _ = writeln!(
                s,
                r#"<line x1="{x0:.2}" y1="{:.2}" x2="{x1:.2}" y2="{:.2}" stroke="black" stroke-width="2"/>"#,
                y(b.median),
                y(b.median)
            );
            for o in b.outliers {
                let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{:.2}" r="2.5" fill="none" stroke="black"/>"#, y(o));
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="end" transform="rotate(-30 {cx:.2} {:.2})">{}</text>"#,
            top + plot_h + 16.0,
            top + plot_h + 16.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}
