//! Plain-text and SVG rendering of evaluation reports and ablation tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::ablation::AblationTable;
use crate::error::{Error, Result};
use crate::eval::EvalReport;

pub const ABLATION_FILE: &str = "ablation.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// One value per row for the bar plot.
    pub values: Vec<f64>,
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// One row per run plus a mean row.
pub fn eval_table(runs: &[(String, EvalReport)]) -> Result<Table> {
    if runs.is_empty() {
        return Err(Error::Report("no evaluation reports".into()));
    }
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for (name, r) in runs {
        rows.push(vec![
            name.clone(),
            r.task.clone(),
            r.n_examples.to_string(),
            pct(r.accuracy),
            r.macro_accuracy.map_or("-".into(), pct),
        ]);
        values.push(r.accuracy);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    rows.push(vec!["mean".into(), "".into(), "".into(), pct(mean), "".into()]);
    values.push(mean);
    Ok(Table {
        title: "Evaluation results (accuracy, %)".into(),
        header: ["run", "task", "n", "accuracy", "macro"].map(String::from).to_vec(),
        rows,
        values,
    })
}

/// Variant rows with per-seed accuracy and mean ± stddev.
pub fn ablation_table(t: &AblationTable) -> Result<Table> {
    if t.rows.is_empty() {
        return Err(Error::Report(format!("ablation {} has no rows", t.suite)));
    }
    let mut header = vec!["variant".to_string()];
    header.extend(t.seeds.iter().map(|s| format!("seed {s}")));
    header.push("mean ± std".into());
    let rows = t
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![r.variant.clone()];
            row.extend(r.reports.iter().map(|rep| pct(rep.accuracy)));
            row.push(format!("{} ± {}", pct(r.mean), pct(r.stddev)));
            row
        })
        .collect();
    Ok(Table {
        title: format!("Ablation {} on held-out task {} (accuracy, %)", t.suite, t.task),
        header,
        rows,
        values: t.rows.iter().map(|r| r.mean).collect(),
    })
}

impl Table {
    pub fn to_text(&self) -> String {
        let ncol = self.header.len();
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String]| -> String {
            let parts: Vec<String> = (0..ncol)
                .map(|i| {
                    let c = cells.get(i).map_or("", String::as_str);
                    let pad = widths[i] - c.chars().count();
                    if i == 0 {
                        format!("{c}{}", " ".repeat(pad))
                    } else {
                        format!("{}{c}", " ".repeat(pad))
                    }
                })
                .collect();
            parts.join("  ").trim_end().to_string() + "\n"
        };
        let mut s = format!("{}\n", self.title);
        s.push_str(&line(&self.header));
        let total: usize = widths.iter().sum::<usize>() + 2 * (ncol - 1);
        s.push_str(&"-".repeat(total));
        s.push('\n');
        for row in &self.rows {
            s.push_str(&line(row));
        }
        s
    }

    pub fn to_svg(&self) -> String {
        let col_w = 110;
        let row_h = 22;
        let width = col_w * self.header.len() + 20;
        let height = row_h * (self.rows.len() + 2) + 20;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="monospace" font-size="12">"#
        );
        let _ = writeln!(s, r#"<text x="10" y="18" font-weight="bold">{}</text>"#, escape(&self.title));
        for (r, cells) in std::iter::once(&self.header).chain(&self.rows).enumerate() {
            let y = 18 + row_h * (r + 1);
            let weight = if r == 0 { r#" font-weight="bold""# } else { "" };
            for (c, cell) in cells.iter().enumerate() {
                let x = 10 + col_w * c;
                let _ = writeln!(s, r#"<text x="{x}" y="{y}"{weight}>{}</text>"#, escape(cell));
            }
        }
        s.push_str("</svg>\n");
        s
    }

    /// Horizontal bars of `values` against row labels.
    pub fn to_bar_svg(&self) -> String {
        let bar_max = 300.0;
        let row_h = 24;
        let height = row_h * self.values.len() + 40;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="520" height="{height}" font-family="monospace" font-size="12">"#
        );
        let _ = writeln!(s, r#"<text x="10" y="18" font-weight="bold">{}</text>"#, escape(&self.title));
        for (i, (row, v)) in self.rows.iter().zip(&self.values).enumerate() {
            let y = 30 + row_h * i;
            let w = (v.clamp(0.0, 1.0) * bar_max).round() as i64;
            let _ = writeln!(s, r#"<text x="10" y="{}">{}</text>"#, y + 14, escape(&row[0]));
            let _ = writeln!(s, r##"<rect x="130" y="{y}" width="{w}" height="18" fill="#4a78b5"/>"##);
            let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, 136 + w, y + 14, pct(*v));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: PathBuf, body: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Renders every ablation table and one combined evaluation table found in
/// `run_dirs` into `out`. Returns the written paths.
pub fn report(run_dirs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    let mut evals = Vec::new();
    let mut ablations = Vec::new();
    for dir in run_dirs {
        let name = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        let abl = dir.join(ABLATION_FILE);
        if abl.exists() {
            let t: AblationTable =
                serde_json::from_str(&read(&abl)?).map_err(|e| Error::Format(format!("{}: {e}", abl.display())))?;
            ablations.push(t);
        }
        let rep = dir.join(REPORT_FILE);
        if rep.exists() {
            let r: EvalReport =
                serde_json::from_str(&read(&rep)?).map_err(|e| Error::Format(format!("{}: {e}", rep.display())))?;
            evals.push((name, r));
        }
    }
    if evals.is_empty() && ablations.is_empty() {
        return Err(Error::Report("no reports found in the given run directories".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    let mut text = String::new();
    if !evals.is_empty() {
        let t = eval_table(&evals)?;
        text.push_str(&t.to_text());
        write(out.join("eval_table.svg"), &t.to_svg(), &mut written)?;
        write(out.join("eval_plot.svg"), &t.to_bar_svg(), &mut written)?;
    }
    for a in &ablations {
        let t = ablation_table(a)?;
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(&t.to_text());
        write(out.join(format!("ablation_{}.svg", a.suite)), &t.to_svg(), &mut written)?;
        write(out.join(format!("ablation_{}_plot.svg", a.suite)), &t.to_bar_svg(), &mut written)?;
    }
    write(out.join("tables.txt"), &text, &mut written)?;
    Ok(written)
}
