//! `sweep` subcommands: run a configured learning-rate grid and analyze
//! record tables into per-configuration optima plus a width-scaling fit.

use std::path::{Path, PathBuf};

use lvlab_core::sweep::{
    fit_slope, optimal_lr, run_sweep, write_optimal_csv, write_slopes_json, write_sweep_csv,
    OptimalLr, SweepConfig, SweepError, SweepRecord,
};

use crate::{manifest, CliError, CliResult, SweepAnalyzeArgs, SweepRunArgs};

/// Warn when the width-scaling fit explains less than this share of variance.
pub const R_SQUARED_FLAG: f64 = 0.8;

fn usage(err: impl std::fmt::Display) -> CliError {
    CliError::Usage(err.to_string())
}

/// Runs the grid described by the JSON config and writes `sweep.csv` plus
/// the analysis artifacts. Exits 1 when a configuration diverged everywhere.
pub fn run_sweep_cmd(out_dir: &Path, args: &SweepRunArgs) -> CliResult<()> {
    let body = std::fs::read_to_string(&args.config)
        .map_err(|e| usage(format!("cannot read {}: {e}", args.config.display())))?;
    let config: SweepConfig = serde_json::from_str(&body)
        .map_err(|e| usage(format!("invalid sweep config {}: {e}", args.config.display())))?;
    config.validate().map_err(usage)?;
    let records = run_sweep(&config).map_err(usage)?;

    let sweep_path = out_dir.join("sweep.csv");
    let mut buf = Vec::new();
    write_sweep_csv(&records, &mut buf)?;
    std::fs::write(&sweep_path, buf)?;

    let (mut artifacts, all_ok) =
        analyze_records(&records, lvlab_core::sweep::OPTIMAL_BAND, out_dir)?;
    artifacts.insert(0, sweep_path);
    let seed = config.seeds.first().copied();
    let refs: Vec<&PathBuf> = artifacts.iter().collect();
    manifest::write_manifest(out_dir, seed, &refs)?;
    if all_ok {
        Ok(())
    } else {
        Err(CliError::CheckFailed(
            "at least one configuration diverged at every grid point".into(),
        ))
    }
}

/// Re-analyzes a previously written record table.
pub fn run_analyze_cmd(out_dir: &Path, args: &SweepAnalyzeArgs) -> CliResult<()> {
    if !(args.threshold >= 0.0 && args.threshold.is_finite()) {
        return Err(usage("--threshold must be finite and nonnegative"));
    }
    let records = read_sweep_csv(&args.records)?;
    let (artifacts, all_ok) = analyze_records(&records, args.threshold, out_dir)?;
    let refs: Vec<&PathBuf> = artifacts.iter().collect();
    manifest::write_manifest(out_dir, None, &refs)?;
    if all_ok {
        Ok(())
    } else {
        Err(CliError::CheckFailed(
            "at least one configuration diverged at every grid point".into(),
        ))
    }
}

/// Groups records by (d, m) in first-appearance order, writes
/// `optimal.csv` (all-diverged groups become explicit `NaN` rows) and,
/// when at least three widths produced optima, `slopes.json`.
///
/// Returns the artifact paths and whether every group produced an optimum.
fn analyze_records(
    records: &[SweepRecord],
    threshold: f64,
    out_dir: &Path,
) -> CliResult<(Vec<PathBuf>, bool)> {
    if records.is_empty() {
        return Err(usage("record table is empty"));
    }
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for r in records {
        if !groups.contains(&(r.d, r.m)) {
            groups.push((r.d, r.m));
        }
    }
    let mut optima = Vec::with_capacity(groups.len());
    let mut all_ok = true;
    for (d, m) in groups {
        let group: Vec<SweepRecord> = records
            .iter()
            .filter(|r| r.d == d && r.m == m)
            .cloned()
            .collect();
        match optimal_lr(&group, threshold) {
            Ok(opt) => optima.push(opt),
            Err(SweepError::AllDiverged { d, m }) => {
                all_ok = false;
                eprintln!("configuration (d={d}, m={m}) diverged at every grid point");
                optima.push(OptimalLr {
                    d,
                    m,
                    eta_opt: f64::NAN,
                    n_qualifying: 0,
                    best_mean_loss: f64::INFINITY,
                });
            }
            Err(other) => return Err(usage(other)),
        }
    }

    let optimal_path = out_dir.join("optimal.csv");
    let mut buf = Vec::new();
    write_optimal_csv(&optima, &mut buf)?;
    std::fs::write(&optimal_path, buf)?;
    let mut artifacts = vec![optimal_path];

    let per_d: Vec<(usize, f64)> = optima
        .iter()
        .filter(|o| o.eta_opt.is_finite())
        .map(|o| (o.d, o.eta_opt))
        .collect();
    match fit_slope(&per_d) {
        Ok(fit) => {
            if fit.r_squared < R_SQUARED_FLAG {
                eprintln!(
                    "warning: width-scaling fit has r_squared = {} (< {R_SQUARED_FLAG}); \
                     the power-law read is unreliable",
                    fit.r_squared
                );
            }
            let (to_zero, to_minus_half, to_minus_one) = fit.ref_distances();
            println!(
                "slope={} r_squared={} ref_distances: 0 -> {}, -1/2 -> {}, -1 -> {}",
                fit.slope, fit.r_squared, to_zero, to_minus_half, to_minus_one
            );
            let slopes_path = out_dir.join("slopes.json");
            let mut buf = Vec::new();
            write_slopes_json(&fit, &mut buf)?;
            std::fs::write(&slopes_path, buf)?;
            artifacts.push(slopes_path);
        }
        Err(SweepError::NotEnoughWidths) => {
            eprintln!("note: fewer than 3 widths produced optima; skipping the slope fit");
        }
        Err(other) => return Err(usage(other)),
    }
    Ok((artifacts, all_ok))
}

/// Parses a `d,m,eta_E,seed,final_loss,diverged` table written by
/// `write_sweep_csv`, reporting malformed lines by number.
pub fn read_sweep_csv(path: &Path) -> CliResult<Vec<SweepRecord>> {
    const HEADER: &str = "d,m,eta_E,seed,final_loss,diverged";
    let body = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = body.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == HEADER => {}
        _ => {
            return Err(usage(format!(
                "{}: expected header `{HEADER}`",
                path.display()
            )))
        }
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut field = |name: &str| {
            fields.next().ok_or_else(|| {
                usage(format!(
                    "{} line {}: missing field `{name}`",
                    path.display(),
                    idx + 1
                ))
            })
        };
        let parse_err = |name: &str, value: &str| {
            usage(format!(
                "{} line {}: cannot parse `{name}` from {value:?}",
                path.display(),
                idx + 1
            ))
        };
        let d_raw = field("d")?;
        let m_raw = field("m")?;
        let eta_raw = field("eta_E")?;
        let seed_raw = field("seed")?;
        let loss_raw = field("final_loss")?;
        let diverged_raw = field("diverged")?;
        records.push(SweepRecord {
            d: d_raw.parse().map_err(|_| parse_err("d", d_raw))?,
            m: m_raw.parse().map_err(|_| parse_err("m", m_raw))?,
            eta_e: eta_raw.parse().map_err(|_| parse_err("eta_E", eta_raw))?,
            seed: seed_raw.parse().map_err(|_| parse_err("seed", seed_raw))?,
            final_loss: loss_raw
                .parse()
                .map_err(|_| parse_err("final_loss", loss_raw))?,
            diverged: diverged_raw
                .parse()
                .map_err(|_| parse_err("diverged", diverged_raw))?,
        });
    }
    if records.is_empty() {
        return Err(usage(format!("{}: no data rows", path.display())));
    }
    Ok(records)
}
