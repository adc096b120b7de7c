//! Artifact writers. Every file starts with a `#` provenance line.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ehpc::model::Family;
use ehpc::sim::{CellResult, EvalReport, LossSummary, Scheme, CSV_COLUMNS};

use crate::config::Experiment;

fn csv_writer(path: &Path, provenance: &str) -> anyhow::Result<csv::Writer<fs::File>> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "# {provenance}")?;
    Ok(csv::Writer::from_writer(f))
}

pub fn write_cells(path: &Path, exp: &Experiment, report: &EvalReport) -> anyhow::Result<()> {
    let mut w = csv_writer(path, &exp.provenance())?;
    w.write_record(CSV_COLUMNS)?;
    for c in &report.cells {
        w.write_record(c.csv_fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_losses(path: &Path, provenance: &str, losses: &[LossSummary]) -> anyhow::Result<()> {
    let mut w = csv_writer(path, provenance)?;
    w.write_record(["scheme", "average_pct", "maximum_pct", "cells"])?;
    for l in losses {
        w.write_record([l.scheme.to_string(), l.average.to_string(), l.maximum.to_string(), l.cells.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn series_name(family: Family, nmcr: f64) -> String {
    format!("omf_{family}_nmcr{nmcr}.csv")
}

/// One file per (family, NMCR): `nsnr_db` then one OMF column per scheme.
pub fn write_series(dir: &Path, exp: &Experiment, report: &EvalReport) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let schemes = &exp.plan.schemes;
    let mut paths = Vec::new();
    for &family in &exp.plan.families {
        for &nmcr in &exp.plan.nmcr {
            let path = dir.join(series_name(family, nmcr));
            let mut w = csv_writer(&path, &exp.provenance())?;
            let mut header = vec!["nsnr_db".to_string()];
            header.extend(schemes.iter().map(|s| s.to_string()));
            w.write_record(&header)?;
            for &db in &exp.plan.nsnr_db {
                let mut row = vec![db.to_string()];
                for &s in schemes {
                    let omf = report.cell(s, family, nmcr, db).and_then(|c| c.omf);
                    row.push(omf.map(|v| v.to_string()).unwrap_or_default());
                }
                w.write_record(&row)?;
            }
            w.flush()?;
            paths.push(path);
        }
    }
    Ok(paths)
}

pub fn write_summary(path: &Path, exp: &Experiment, report: &EvalReport) -> anyhow::Result<()> {
    let doc = serde_json::json!({
        "version": ehpc::VERSION,
        "config_hash": exp.config_hash,
        "seed": exp.plan.seed,
        "preset": exp.preset,
        "plan": exp.plan,
        "report": report,
    });
    fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

/// Reads a cells CSV back; returns the provenance line and the rows.
pub fn read_cells(path: &Path) -> anyhow::Result<(String, Vec<CellResult>)> {
    let text = fs::read_to_string(path)?;
    let provenance = text.lines().next().and_then(|l| l.strip_prefix("# ")).unwrap_or_default().to_string();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    anyhow::ensure!(header == CSV_COLUMNS, "{}: unexpected columns {header:?}", path.display());
    let opt = |s: &str| -> anyhow::Result<Option<f64>> {
        Ok(if s.is_empty() { None } else { Some(s.parse()?) })
    };
    let mut cells = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        cells.push(CellResult {
            scheme: rec[0].parse::<Scheme>()?,
            family: rec[1].parse()?,
            nmcr: rec[2].parse()?,
            nsnr_db: rec[3].parse()?,
            throughput: rec[4].parse()?,
            stderr: rec[5].parse()?,
            episodes: 0,
            g_star: opt(&rec[6])?,
            omf: opt(&rec[7])?,
            loss_pct: opt(&rec[8])?,
        });
    }
    Ok((provenance, cells))
}

/// Table-7-style text table.
pub fn loss_table(losses: &[LossSummary]) -> String {
    let mut s = format!("{:<10} {:>10} {:>10} {:>6}\n", "scheme", "avg loss%", "max loss%", "cells");
    for l in losses {
        s += &format!("{:<10} {:>10.3} {:>10.3} {:>6}\n", l.scheme.as_str(), l.average, l.maximum, l.cells);
    }
    s
}

/// Mean OMF per scheme, for schemes without a matched baseline.
pub fn mean_omf(cells: &[CellResult]) -> BTreeMap<Scheme, f64> {
    let mut acc: BTreeMap<Scheme, (f64, usize)> = BTreeMap::new();
    for c in cells {
        if let Some(v) = c.omf {
            let e = acc.entry(c.scheme).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}
