//! SVG rendering of OMF-vs-NSNR series.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;

use crate::commands::plot_dir;
use crate::config::{parse_schemes, ExperimentConfig, Overrides};
use crate::CliError;

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Series files; defaults to every CSV under `<out>/series`.
    series: Vec<PathBuf>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 11] = [
    "#000000", "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf", "#7f7f7f",
    "#bcbd22",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub title: String,
    pub provenance: String,
    pub nsnr_db: Vec<f64>,
    /// `(scheme, OMF per NSNR)`; gaps are `None`.
    pub curves: Vec<(String, Vec<Option<f64>>)>,
}

pub fn read_series(path: &Path) -> anyhow::Result<Series> {
    let text = fs::read_to_string(path)?;
    let provenance = text.lines().next().and_then(|l| l.strip_prefix("# ")).unwrap_or_default().to_string();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    anyhow::ensure!(header.first().map(String::as_str) == Some("nsnr_db"), "{}: first column must be nsnr_db", path.display());
    let mut nsnr_db = Vec::new();
    let mut curves: Vec<(String, Vec<Option<f64>>)> = header[1..].iter().map(|h| (h.clone(), Vec::new())).collect();
    for rec in r.records() {
        let rec = rec?;
        nsnr_db.push(rec[0].parse()?);
        for (k, (_, v)) in curves.iter_mut().enumerate() {
            let s = &rec[k + 1];
            v.push(if s.is_empty() { None } else { Some(s.parse()?) });
        }
    }
    let title = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Series { title, provenance, nsnr_db, curves })
}

/// Vertical range: always covers [0.8, 1.05], widened in steps of 0.05.
pub fn y_range(series: &Series) -> (f64, f64) {
    let vals = series.curves.iter().flat_map(|(_, v)| v.iter().flatten().copied());
    let (lo, hi) = vals.fold((0.8f64, 1.05f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    ((lo / 0.05).floor() * 0.05, (hi / 0.05 - 1e-9).ceil() * 0.05)
}

pub fn render(series: &Series) -> String {
    let (x0, x1) = series
        .nsnr_db
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let (x0, x1) = if x1 > x0 { (x0, x1) } else { (x0 - 1.0, x0 + 1.0) };
    let (y0, y1) = y_range(series);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, "<!-- {} -->", series.provenance);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" data-x-range="{x0} {x1}" data-y-range="{y0} {y1}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, series.title);
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let ny = ((y1 - y0) / 0.05).round() as usize;
    for k in 0..=ny {
        let y = y0 + k as f64 * 0.05;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" x2="{}" y1="{py:.2}" y2="{py:.2}" stroke="#dddddd"/><text x="{}" y="{:.2}" text-anchor="end">{y:.2}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            py(y) + 4.0,
            py = py(y)
        );
    }
    for &x in &series.nsnr_db {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{x}</text>"#,
            px(x),
            TOP + ph + 18.0
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">NSNR (dB)</text>"#, LEFT + pw / 2.0, HEIGHT - 16.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">OMF</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    for (k, (name, vals)) in series.curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = series
            .nsnr_db
            .iter()
            .zip(vals)
            .filter_map(|(&x, v)| v.map(|y| format!("{:.2},{:.2}", px(x), py(y))))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{name}</title></polyline>"#, pts.join(" "));
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let lx = LEFT + pw + 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{name}</text>"#,
            lx + 22.0,
            lx + 28.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn plot(file: &ExperimentConfig, flags: &Overrides, args: &PlotArgs) -> Result<(), CliError> {
    let out = plot_dir(file, flags);
    let filter = match &flags.schemes {
        Some(names) => {
            let list = parse_schemes(names)?;
            if list.is_empty() {
                return Err(CliError::Config("schemes: the list is empty".into()));
            }
            Some(list.iter().map(|s| s.to_string()).collect::<Vec<_>>())
        }
        None => None,
    };
    let files: Vec<PathBuf> = if args.series.is_empty() {
        let dir = out.join("series");
        let mut v: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| CliError::Other(anyhow::anyhow!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        v.sort();
        v
    } else {
        args.series.clone()
    };
    let plots = out.join("plots");
    let mut written = 0;
    for path in &files {
        if !path.exists() {
            log::warn!("series file {} not found; skipped", path.display());
            eprintln!("warning: missing series {}", path.display());
            continue;
        }
        let mut series = read_series(path)?;
        if let Some(keep) = &filter {
            series.curves.retain(|(name, _)| keep.contains(name));
        }
        if series.curves.is_empty() {
            return Err(CliError::Config(format!("{}: no schemes to plot", path.display())));
        }
        fs::create_dir_all(&plots)?;
        let target = plots.join(format!("{}.svg", series.title));
        fs::write(&target, render(&series))?;
        println!("{}", target.display());
        written += 1;
    }
    if written == 0 {
        log::warn!("no plots written");
    }
    Ok(())
}
