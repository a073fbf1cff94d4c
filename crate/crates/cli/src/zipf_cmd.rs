//! `zipf` subcommands: sampling, exponent fitting, and partial-sum scans.

use std::path::Path;

use lvlab_core::montecarlo::RngStream;
use lvlab_core::zipf::{
    fit_exponent, lemma1_scan, read_counts, sample_counts, write_counts, zipf_distribution,
};

use crate::{manifest, CliError, CliResult, ZipfFitArgs, ZipfGenArgs, ZipfLemma1Args};

fn usage(err: impl std::fmt::Display) -> CliError {
    CliError::Usage(err.to_string())
}

/// Fits a power-law exponent to a counts table and writes `zipf_fit.csv`
/// with a single `a_hat,r_squared` row.
pub fn run_fit(out_dir: &Path, args: &ZipfFitArgs) -> CliResult<()> {
    let counts = read_counts(&args.counts).map_err(usage)?;
    let (a_hat, r_squared) = fit_exponent(&counts).map_err(usage)?;
    let path = out_dir.join("zipf_fit.csv");
    std::fs::write(&path, format!("a_hat,r_squared\n{a_hat},{r_squared}\n"))?;
    manifest::write_manifest(out_dir, None, &[&path])?;
    println!("a_hat={a_hat} r_squared={r_squared}");
    Ok(())
}

/// Samples token draws from a Zipf distribution and writes `counts.txt`.
pub fn run_gen(out_dir: &Path, args: &ZipfGenArgs) -> CliResult<()> {
    if args.draws == 0 {
        return Err(CliError::Usage("--draws must be at least 1".into()));
    }
    let dist = zipf_distribution(args.m, args.a).map_err(usage)?;
    let stream = RngStream::new(args.seed, 0);
    let counts = sample_counts(&dist, args.draws, &stream);
    let path = out_dir.join("counts.txt");
    write_counts(&path, &counts).map_err(usage)?;
    manifest::write_manifest(out_dir, Some(args.seed), &[&path])?;
    println!(
        "wrote {} ranks from {} draws to {}",
        counts.len(),
        args.draws,
        path.display()
    );
    Ok(())
}

/// Tabulates the partial sums controlling the mean squared frequency over
/// power-of-two vocabulary sizes and writes `lemma1.csv` (`m,value` rows).
pub fn run_lemma1(out_dir: &Path, args: &ZipfLemma1Args) -> CliResult<()> {
    if args.max_m < 16 {
        return Err(CliError::Usage("--max-m must be at least 16".into()));
    }
    let mut m_values = Vec::new();
    let mut m = 16usize;
    while m <= args.max_m {
        m_values.push(m);
        match m.checked_mul(2) {
            Some(next) => m = next,
            None => break,
        }
    }
    let scan = lemma1_scan(args.a, &m_values, args.normalized).map_err(usage)?;
    let mut body = String::from("m,value\n");
    for (m, value) in &scan {
        body.push_str(&format!("{m},{value}\n"));
    }
    let path = out_dir.join("lemma1.csv");
    std::fs::write(&path, body)?;
    manifest::write_manifest(out_dir, None, &[&path])?;
    for (m, value) in &scan {
        println!("m={m} value={value}");
    }
    Ok(())
}
