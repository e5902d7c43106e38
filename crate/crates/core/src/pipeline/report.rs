//! Consolidates evaluation tables from several work directories.

use std::path::{Path, PathBuf};

use super::eval::EVAL_CSV;
use super::stages::csv_err;
use super::workspace::Stamp;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub csv: Vec<u8>,
    pub text: String,
    /// Non-fatal problems, such as runs from differing configurations.
    pub warnings: Vec<String>,
}

struct Run {
    hash: String,
    /// (system, group, FER, TER)
    rows: Vec<(String, String, String, String)>,
}

fn load_run(dir: &Path) -> Result<Run> {
    let stamp_path = dir.join("stamps/evaluate.json");
    let stamp: Stamp = serde_json::from_str(&std::fs::read_to_string(&stamp_path).map_err(|_| Error::Dependency {
        stage: "evaluate".into(),
        detail: format!("no evaluation found in {}", dir.display()),
    })?)
    .map_err(|e| Error::format(&stamp_path, e.to_string()))?;
    let csv_path = dir.join(EVAL_CSV);
    let mut r = csv::Reader::from_path(&csv_path).map_err(csv_err)?;
    let headers = r.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format(&csv_path, format!("missing column {name}")))
    };
    let (cs, cg, cf, ct) = (col("system")?, col("group")?, col("FER")?, col("TER")?);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        rows.push((
            rec[cs].to_owned(),
            rec[cg].to_owned(),
            rec[cf].to_owned(),
            rec[ct].to_owned(),
        ));
    }
    Ok(Run {
        hash: stamp.config_hash,
        rows,
    })
}

/// One row per (run, system); one FER and one TER column per group seen in
/// any run. Missing cells stay blank.
pub fn report(dirs: &[PathBuf]) -> Result<Report> {
    if dirs.is_empty() {
        return Err(Error::Usage("report needs at least one run directory".into()));
    }
    let runs: Vec<Run> = dirs.iter().map(|d| load_run(d)).collect::<Result<_>>()?;
    let mut warnings = Vec::new();
    let first = &runs[0].hash;
    if runs.iter().any(|r| &r.hash != first) {
        let list: Vec<String> = runs
            .iter()
            .zip(dirs)
            .map(|(r, d)| format!("{} ({})", r.hash, d.display()))
            .collect();
        warnings.push(format!("runs come from different configurations: {}", list.join(", ")));
    }
    let mut groups: Vec<String> = Vec::new();
    for run in &runs {
        for (_, g, _, _) in &run.rows {
            if !groups.contains(g) {
                groups.push(g.clone());
            }
        }
    }
    let mut header = vec!["run".to_string(), "system".into()];
    for g in &groups {
        header.push(format!("{g} FER"));
        header.push(format!("{g} TER"));
    }
    let mut table: Vec<Vec<String>> = Vec::new();
    for run in &runs {
        let mut systems: Vec<&str> = Vec::new();
        for (s, _, _, _) in &run.rows {
            if !systems.contains(&s.as_str()) {
                systems.push(s);
            }
        }
        for s in systems {
            let mut row = vec![run.hash.clone(), s.to_owned()];
            for g in &groups {
                match run.rows.iter().find(|(rs, rg, _, _)| rs == s && rg == g) {
                    Some((_, _, f, t)) => {
                        row.push(f.clone());
                        row.push(t.clone());
                    }
                    None => {
                        row.push(String::new());
                        row.push(String::new());
                    }
                }
            }
            table.push(row);
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(csv_err)?;
    for row in &table {
        w.write_record(row).map_err(csv_err)?;
    }
    let csv = w.into_inner().map_err(|e| Error::Data(format!("csv: {e}")))?;
    Ok(Report {
        csv,
        text: text_table(&header, &table),
        warnings,
    })
}

fn text_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    out.push_str(&(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  ") + "\n"));
    for r in rows {
        out.push_str(&line(r));
    }
    out
}
