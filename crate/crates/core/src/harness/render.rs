//! Report writers: JSONL records, text tables, timing sidecar and SVG curves.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::lab::{summarize, Outcome, Record, Summary, Timing};
use crate::{Result, TqrError};

/// One record per line, in run order.
pub fn records_jsonl(records: &[Record]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| TqrError::invalid(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_records(src: &str) -> Result<Vec<Record>> {
    src.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| TqrError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

fn timings_jsonl(timings: &[Timing]) -> Result<String> {
    let mut out = String::new();
    for t in timings {
        out.push_str(&serde_json::to_string(t).map_err(|e| TqrError::invalid(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

const COLUMNS: [(&str, usize); 6] = [
    ("all", 1),
    ("complex", 1),
    ("simple", 1),
    ("all", 10),
    ("complex", 10),
    ("simple", 10),
];

/// Fixed-width table of mean Hits@1 and Hits@10.
pub fn table(summaries: &[Summary]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<28} {:<14} {:<28} {:>3}", "experiment", "setting", "variant", "n");
    for (g, k) in COLUMNS {
        let _ = write!(out, " {:>10}", format!("{g}@{k}"));
    }
    out.push('\n');
    for s in summaries {
        let _ = write!(out, "{:<28} {:<14} {:<28} {:>3}", s.experiment, s.setting, s.variant, s.repeats);
        for (g, k) in COLUMNS {
            match s.mean(g, k) {
                Some(v) => {
                    let _ = write!(out, " {:>10.3}", v);
                }
                None => {
                    let _ = write!(out, " {:>10}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Per question type breakdown at Hits@1.
pub fn type_table(summaries: &[Summary]) -> String {
    let mut groups: Vec<String> = summaries
        .iter()
        .flat_map(|s| s.means.keys())
        .filter_map(|k| k.strip_suffix("@1"))
        .filter(|g| !matches!(*g, "all" | "complex" | "simple" | "entity" | "time"))
        .map(String::from)
        .collect();
    groups.sort();
    groups.dedup();
    let mut out = String::new();
    for s in summaries {
        let _ = writeln!(out, "{} {} {}", s.experiment, s.setting, s.variant);
        for g in &groups {
            if let Some(v) = s.mean(g, 1) {
                let _ = writeln!(out, "  {:<34} {:.3}", g, v);
            }
        }
    }
    out
}

const PALETTE: [&str; 8] = ["#1b6ca8", "#d1495b", "#edae49", "#00798c", "#30638e", "#66a182", "#8d5a97", "#444444"];

/// Line plot of `group@k` against each summary's x, one line per variant.
pub fn svg_curve(summaries: &[Summary], group: &str, k: usize, title: &str) -> String {
    let (w, h, m) = (640.0, 400.0, 50.0);
    let mut variants: Vec<&str> = Vec::new();
    for s in summaries {
        if !variants.contains(&s.variant.as_str()) {
            variants.push(&s.variant);
        }
    }
    let xs: Vec<f64> = summaries.iter().filter_map(|s| s.x).collect();
    let (x0, x1) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = if x1 > x0 { x1 - x0 } else { 1.0 };
    let px = |x: f64| m + (x - x0) / span * (w - 2.0 * m);
    let py = |y: f64| h - m - y * (h - 2.0 * m);

    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(out, r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - m, w - m, h - m);
    let _ = writeln!(out, r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#, h - m);
    for i in 0..=4 {
        let y = i as f64 / 4.0;
        let _ = writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end">{y:.2}</text>"#, m - 6.0, py(y) + 4.0);
    }
    let mut ticks = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in ticks {
        let _ = writeln!(out, r#"<text x="{:.1}" y="{}" text-anchor="middle">{x}</text>"#, px(x), h - m + 16.0);
    }
    for (i, v) in variants.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts: Vec<(f64, f64)> = summaries
            .iter()
            .filter(|s| s.variant == *v)
            .filter_map(|s| Some((s.x?, s.mean(group, k)?)))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" "));
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            w - m - 150.0,
            m + 16.0 * i as f64,
            escape(v)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Write `<name>.jsonl`, `<name>.txt`, `<name>.timing.jsonl` and, with
/// `plot` and an x axis, `<name>.svg` under `dir`. Returns the written paths.
pub fn write_reports(dir: &Path, name: &str, outcome: &Outcome, plot: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| TqrError::io(dir, e))?;
    let summaries = summarize(&outcome.records);
    let mut written = Vec::new();
    let mut put = |file: String, body: String| -> Result<()> {
        let p = dir.join(file);
        fs::write(&p, body).map_err(|e| TqrError::io(&p, e))?;
        written.push(p);
        Ok(())
    };
    put(format!("{name}.jsonl"), records_jsonl(&outcome.records)?)?;
    put(format!("{name}.txt"), format!("{}\n{}", table(&summaries), type_table(&summaries)))?;
    put(format!("{name}.timing.jsonl"), timings_jsonl(&outcome.timings)?)?;
    if plot && summaries.iter().any(|s| s.x.is_some()) {
        put(format!("{name}.svg"), svg_curve(&summaries, "complex", 1, &format!("{name}: complex Hits@1")))?;
    }
    Ok(written)
}
