//! Summary table over the runs of a results directory.

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{Manifest, Summary};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct ReportRow {
    pub name: String,
    pub command: String,
    pub method: String,
    #[serde(flatten)]
    pub summary: Summary,
}

fn read_manifest(dir: &Path) -> Result<Option<Manifest>> {
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map(Some).map_err(|e| Error::Schema {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Collects the runs under `dir` (or `dir` itself if it is a run), prints
/// nothing, and returns the table text; the JSON twin is written to
/// `dir/report.json`.
pub fn report(dir: &Path) -> Result<(String, Vec<ReportRow>)> {
    if !dir.is_dir() {
        return Err(Error::Schema {
            path: dir.display().to_string(),
            message: "results directory not found".into(),
        });
    }
    let mut manifests = Vec::new();
    if let Some(m) = read_manifest(dir)? {
        manifests.push(m);
    } else {
        let mut entries: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        entries.sort();
        for sub in entries {
            match read_manifest(&sub)? {
                Some(m) => manifests.push(m),
                None if has_artifacts(&sub)? => {
                    return Err(Error::Schema {
                        path: sub.join("manifest.json").display().to_string(),
                        message: "run directory without manifest".into(),
                    })
                }
                None => {}
            }
        }
    }
    let mut rows: Vec<ReportRow> = manifests
        .into_iter()
        .map(|m| ReportRow {
            name: m.name,
            command: m.command,
            method: m.method,
            summary: m.summary,
        })
        .collect();
    rows.sort_by(|a, b| a.name.cmp(&b.name).then(a.command.cmp(&b.command)));
    let path = dir.join("report.json");
    fs::write(&path, serde_json::to_string_pretty(&rows)?).map_err(|e| Error::io(&path, e))?;
    if rows.is_empty() {
        return Ok(("no runs\n".into(), rows));
    }
    Ok((table(&rows), rows))
}

/// CSV or JSON files directly inside `dir`.
fn has_artifacts(dir: &Path) -> Result<bool> {
    Ok(fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .any(|e| {
            let p = e.path();
            p.is_file() && matches!(p.extension().and_then(|x| x.to_str()), Some("csv" | "json"))
        }))
}

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4e}")).unwrap_or_else(|| "-".into())
}

fn int(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "-".into())
}

fn table(rows: &[ReportRow]) -> String {
    let with_delta = rows.iter().any(|r| !r.summary.delta_tilde.is_empty());
    let mut header = vec!["name", "command", "method", "worst", "mean", "beta", "mu", "K", "n", "m"];
    if with_delta {
        header.push("delta_tilde");
    }
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let s = &r.summary;
            let m = if s.m_of_n.is_empty() {
                int(s.m)
            } else {
                s.m_of_n.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
            };
            let mut row = vec![
                r.name.clone(),
                r.command.clone(),
                r.method.clone(),
                num(s.worst),
                num(s.mean),
                num(s.beta),
                num(s.mu),
                int(s.k),
                int(s.n),
                m,
            ];
            if with_delta {
                row.push(
                    s.delta_tilde
                        .iter()
                        .map(|(sig, d)| format!("{sig:.1e}:{d:.3e}"))
                        .collect::<Vec<_>>()
                        .join(" "),
                );
            }
            row
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| body.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: Vec<String>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header.iter().map(|h| h.to_string()).collect());
    out.push('\n');
    for r in body {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}
