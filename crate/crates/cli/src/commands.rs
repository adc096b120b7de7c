use std::fs;
use std::path::PathBuf;

use clap::Args;
use ehpc::mdp::{cache::solve_cached, Lookahead, MdpError};
use ehpc::model::Family;
use ehpc::sim::{evaluate, performance_loss, EvalReport};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Overrides};
use crate::{output, CliError};

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Restrict to these families (repeatable).
    #[arg(long)]
    family: Vec<Family>,
    /// Restrict to these NMCR values (repeatable).
    #[arg(long)]
    nmcr: Vec<f64>,
    /// Restrict to these NSNR values in dB (repeatable).
    #[arg(long)]
    nsnr: Vec<f64>,
    /// Lookahead mode: none, energy, channel or all.
    #[arg(long, default_value = "none")]
    lookahead: String,
}

fn output_dir(file: &ExperimentConfig, flags: &Overrides) -> PathBuf {
    flags.output_dir.clone().or_else(|| file.output_dir.clone()).unwrap_or_else(|| "out".into())
}

pub fn solve(file: &ExperimentConfig, flags: &Overrides, args: &SolveArgs) -> Result<(), CliError> {
    let mut file = file.clone();
    if !args.family.is_empty() {
        file.families = Some(args.family.clone());
    }
    if !args.nmcr.is_empty() {
        file.nmcr = Some(args.nmcr.clone());
    }
    if !args.nsnr.is_empty() {
        file.nsnr_db = Some(args.nsnr.clone());
    }
    let modes: Vec<Lookahead> = if args.lookahead.eq_ignore_ascii_case("all") {
        vec![Lookahead::None, Lookahead::Energy, Lookahead::Channel]
    } else {
        vec![args.lookahead.parse().map_err(|e: MdpError| CliError::Config(format!("lookahead: {e}")))?]
    };
    let exp = file.resolve(flags)?;
    for &la in &modes {
        exp.plan.grids.get(la).validate(la).map_err(|e| CliError::Config(e.to_string()))?;
    }
    let cache = exp.plan.cache_dir.clone().unwrap_or_else(|| exp.output_dir.join("cache"));
    fs::create_dir_all(&cache)?;
    let scenarios = exp.plan.scenarios().map_err(|e| CliError::Config(e.to_string()))?;
    let jobs: Vec<_> = scenarios.iter().flat_map(|s| modes.iter().map(move |&la| (s, la))).collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(s, la)| solve_cached(Some(&cache), s, exp.plan.grids.get(la), la, &exp.plan.solve))
        .collect();

    println!("# {}", exp.provenance());
    println!("{:<12} {:>6} {:>8} {:>9} {:>14} {:>6} {:>7}", "family", "nmcr", "nsnr_db", "lookahead", "gain", "iters", "source");
    let mut failed = Vec::new();
    for (&(s, la), r) in jobs.iter().zip(results) {
        match r {
            Ok((sol, hit)) => println!(
                "{:<12} {:>6} {:>8} {:>9} {:>14.9} {:>6} {:>7}",
                s.family.as_str(),
                s.nmcr,
                s.nsnr_db,
                la.as_str(),
                sol.gain,
                sol.iterations,
                if hit { "cache" } else { "solved" }
            ),
            Err(MdpError::NoConvergence { iterations, last }) => failed.push(format!(
                "{} {}: no convergence after {iterations} iterations (last gain {}, gain history {:?})",
                s.label(),
                la.as_str(),
                last.gain,
                last.gain_history
            )),
            Err(e) => failed.push(format!("{} {}: {e}", s.label(), la.as_str())),
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Solver(failed.join("\n")))
    }
}

pub fn sweep(exp: &crate::config::Experiment) -> Result<(), CliError> {
    let out = &exp.output_dir;
    fs::create_dir_all(out)?;
    log::info!("sweep: {} scenarios × {} schemes", exp.plan.scenarios().map(|v| v.len()).unwrap_or(0), exp.plan.schemes.len());
    let report: EvalReport = evaluate(&exp.plan).map_err(|e| CliError::Config(e.to_string()))?;
    output::write_cells(&out.join("cells.csv"), exp, &report)?;
    output::write_losses(&out.join("losses.csv"), &exp.provenance(), &report.losses)?;
    output::write_series(&out.join("series"), exp, &report)?;
    output::write_summary(&out.join("summary.json"), exp, &report)?;
    print!("{}", output::loss_table(&report.losses));
    for f in &report.failures {
        eprintln!("failed: {} {}: {}", f.scheme, f.scenario, f.error);
    }
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Partial(report.failures.len()))
    }
}

pub fn report(file: &ExperimentConfig, flags: &Overrides) -> Result<(), CliError> {
    let path = output_dir(file, flags).join("cells.csv");
    let (provenance, cells) = output::read_cells(&path).map_err(|e| CliError::Other(e.context(path.display().to_string())))?;
    let report = EvalReport { cells, losses: Vec::new(), pi_gains: Vec::new(), failures: Vec::new() };
    let losses = performance_loss(&report);
    println!("# {provenance}");
    print!("{}", output::loss_table(&losses));
    println!("{:<10} {:>10}", "scheme", "mean OMF");
    for (s, v) in output::mean_omf(&report.cells) {
        println!("{:<10} {:>10.4}", s.as_str(), v);
    }
    Ok(())
}

pub fn plot_dir(file: &ExperimentConfig, flags: &Overrides) -> PathBuf {
    output_dir(file, flags)
}
