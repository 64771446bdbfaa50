//! Tables and plots over finished runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dprandp_core::pipeline::RunReport;

use crate::error::{usage, Result};
use crate::runs::SweepCsvRow;

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub epsilon: f64,
    pub runs: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub ema_accuracy_mean: f64,
    pub ema_accuracy_std: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Every `report.json` below `dir`, in path order.
pub fn find_reports(dir: &Path) -> Result<Vec<(PathBuf, RunReport)>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n == "report.json") {
                let report: RunReport = serde_json::from_str(&fs::read_to_string(&p)?)?;
                out.push((p, report));
            }
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// Mean and sample std of accuracy per (method, ε), ordered by method then ε.
pub fn summarize(reports: &[RunReport]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, u64), Vec<&RunReport>> = BTreeMap::new();
    for r in reports {
        // Ordering key: ε as its bit pattern keeps positive values ordered.
        groups
            .entry((r.method.clone(), r.plan.epsilon_total.to_bits()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((method, bits), rs)| {
            let acc: Vec<f64> = rs.iter().map(|r| r.final_accuracy).collect();
            let ema: Vec<f64> = rs.iter().map(|r| r.ema_accuracy).collect();
            let (accuracy_mean, accuracy_std) = mean_std(&acc);
            let (ema_accuracy_mean, ema_accuracy_std) = mean_std(&ema);
            SummaryRow {
                method,
                epsilon: f64::from_bits(bits),
                runs: rs.len(),
                accuracy_mean,
                accuracy_std,
                ema_accuracy_mean,
                ema_accuracy_std,
            }
        })
        .collect()
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "method",
        "epsilon",
        "runs",
        "accuracy_mean",
        "accuracy_std",
        "ema_accuracy_mean",
        "ema_accuracy_std",
    ])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            if r.epsilon.is_finite() { r.epsilon.to_string() } else { "inf".into() },
            r.runs.to_string(),
            format!("{:.6}", r.accuracy_mean),
            format!("{:.6}", r.accuracy_std),
            format!("{:.6}", r.ema_accuracy_mean),
            format!("{:.6}", r.ema_accuracy_std),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean EMA accuracy per N₁ over the seeds that finished.
pub fn sweep_curve(rows: &[SweepCsvRow]) -> Vec<(u64, f64, f64, usize)> {
    let mut by_n1: BTreeMap<u64, (Option<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        if let (Some(acc), None) = (r.ema_accuracy, &r.error) {
            let e = by_n1.entry(r.n1).or_default();
            e.0 = e.0.or(r.epsilon1_fraction);
            e.1.push(acc);
        }
    }
    by_n1
        .into_iter()
        .map(|(n1, (frac, accs))| (n1, frac.unwrap_or(f64::NAN), mean_std(&accs).0, accs.len()))
        .collect()
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    (0..=4).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A self-contained SVG line plot. Non-finite points are dropped.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h, ml, mr, mt, mb) = (640.0, 420.0, 70.0, 160.0, 40.0, 60.0);
    let pts = || series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1) = pts().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (mut y0, mut y1) = pts().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        (x0, x1) = (x0 - 0.5, x1 + 0.5);
    }
    if y1 - y0 < 1e-12 {
        (y0, y1) = (y0 - 0.05, y1 + 0.05);
    }
    let pw = w - ml - mr;
    let ph = h - mt - mb;
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, ml + pw / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for t in ticks(x0, x1) {
        let x = sx(t);
        let _ = writeln!(svg, r##"<line x1="{x:.1}" y1="{mt}" x2="{x:.1}" y2="{:.1}" stroke="#ddd"/>"##, mt + ph);
        let _ = writeln!(svg, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{t:.3}</text>"#, mt + ph + 18.0);
    }
    for t in ticks(y0, y1) {
        let y = sy(t);
        let _ = writeln!(svg, r##"<line x1="{ml}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##, ml + pw);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{t:.3}</text>"#, ml - 6.0, y + 4.0);
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        ml + pw / 2.0,
        h - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut p: Vec<(f64, f64)> = s.points.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
        p.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        if path.len() > 1 {
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                path.join(" ")
            );
        }
        for &(x, y) in &p {
            let _ = writeln!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, sx(x), sy(y));
        }
        let ly = mt + 10.0 + 18.0 * i as f64;
        let lx = ml + pw + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&s.name));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `summary.csv` and `accuracy_vs_epsilon.svg` for the runs below
/// `dir`, plus `allocation.csv` and `allocation.svg` when `dir/sweep.csv`
/// exists. Returns the files written.
pub fn report(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return usage(format!("{} is not a directory", dir.display()));
    }
    let reports: Vec<RunReport> = find_reports(dir)?.into_iter().map(|(_, r)| r).collect();
    let sweep_path = dir.join("sweep.csv");
    if reports.is_empty() && !sweep_path.exists() {
        return usage(format!("no run reports or sweep table under {}", dir.display()));
    }
    let mut written = Vec::new();
    if !reports.is_empty() {
        let rows = summarize(&reports);
        let csv_path = dir.join("summary.csv");
        write_summary_csv(&csv_path, &rows)?;
        written.push(csv_path);

        let mut by_method: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.epsilon.is_finite()) {
            by_method.entry(&r.method).or_default().push((r.epsilon, r.ema_accuracy_mean));
        }
        let series: Vec<Series> = by_method
            .into_iter()
            .map(|(name, points)| Series {
                name: name.into(),
                points,
            })
            .collect();
        let svg_path = dir.join("accuracy_vs_epsilon.svg");
        fs::write(&svg_path, line_plot("Accuracy vs privacy budget", "epsilon", "EMA accuracy", &series))?;
        written.push(svg_path);
    }
    if sweep_path.exists() {
        let mut rd = csv::Reader::from_path(&sweep_path)?;
        let rows: Vec<SweepCsvRow> = rd.deserialize().collect::<std::result::Result<_, _>>()?;
        let curve = sweep_curve(&rows);
        let csv_path = dir.join("allocation.csv");
        let mut w = csv::Writer::from_path(&csv_path)?;
        w.write_record(["n1", "epsilon1_fraction", "ema_accuracy_mean", "runs"])?;
        for (n1, f, a, k) in &curve {
            w.write_record([n1.to_string(), format!("{f:.6}"), format!("{a:.6}"), k.to_string()])?;
        }
        w.flush()?;
        written.push(csv_path);
        let series = [Series {
            name: "dp_randp".into(),
            points: curve.iter().map(|&(_, f, a, _)| (f, a)).collect(),
        }];
        let svg_path = dir.join("allocation.svg");
        fs::write(
            &svg_path,
            line_plot("Budget share of the linear-probe phase", "epsilon_1 / epsilon", "EMA accuracy", &series),
        )?;
        written.push(svg_path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_sample_std() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_curve_skips_failed_rows() {
        let row = |seed, n1, acc: Option<f64>, err: Option<&str>| SweepCsvRow {
            seed,
            n1,
            epsilon1_fraction: Some(n1 as f64 / 10.0),
            accuracy: acc,
            ema_accuracy: acc,
            closed_epsilon: Some(1.0),
            error: err.map(str::to_string),
        };
        let rows = [
            row(0, 0, Some(0.5), None),
            row(1, 0, Some(0.7), None),
            row(0, 5, None, Some("boom")),
            row(1, 5, Some(0.9), None),
        ];
        let c = sweep_curve(&rows);
        assert_eq!(c.len(), 2);
        assert!((c[0].2 - 0.6).abs() < 1e-12 && c[0].3 == 2);
        assert_eq!((c[1].2, c[1].3), (0.9, 1));
    }

    #[test]
    fn plots_are_well_formed() {
        let svg = line_plot(
            "t <1>",
            "x",
            "y",
            &[Series {
                name: "a&b".into(),
                points: vec![(1.0, 0.5), (0.0, 0.4), (f64::NAN, 1.0)],
            }],
        );
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("t &lt;1&gt;") && svg.contains("a&amp;b"));
        assert_eq!(svg.matches("<circle").count(), 2);
        // A single point or no points still renders.
        assert!(line_plot("", "", "", &[]).contains("</svg>"));
    }
}
