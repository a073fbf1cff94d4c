//! Learning-rate grid sweeps across (width, vocabulary) configurations:
//! optimal-LR extraction by the 20%-of-best band rule, scaling-exponent
//! fits against the reference slopes 0, -1/2, and -1, and CSV/JSON
//! artifact emission.

use crate::fitting::linear_fit;
use crate::model::{train, HpSpec, ModelError, OptimizerKind, TrainConfig};
use crate::montecarlo::RngStream;
use crate::parametrization::{Exponent, ParametrizationError};
use crate::zipf::{zipf_distribution, ZipfError};
use serde::{Deserialize, Serialize};
use std::io;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fraction above the best mean loss within which a grid LR still counts
/// as optimal.
pub const OPTIMAL_BAND: f64 = 0.20;

/// Errors from sweep configuration, execution, and analysis.
#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("LR grid needs at least 5 strictly increasing positive points")]
    InvalidGrid,
    #[error("sweep needs at least one (d, m) configuration and one seed")]
    EmptyConfiguration,
    #[error("every learning rate diverged for d={d}, m={m}")]
    AllDiverged { d: usize, m: usize },
    #[error("slope fit needs at least 3 distinct widths")]
    NotEnoughWidths,
    #[error(transparent)]
    Zipf(#[from] ZipfError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Parametrization(#[from] ParametrizationError),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

/// Per-width learning-rate rule eta(d) = base_eta * d^exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrRule {
    pub base_eta: f64,
    pub exponent: f64,
}

impl LrRule {
    pub fn resolve(&self, d: usize) -> Result<f64, ParametrizationError> {
        Ok(self.base_eta * Exponent::try_from_f64(self.exponent)?.apply(d))
    }
}

/// Init-scale rule sigma(d) = d^(exponent/2) applied to both E and W.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitRule {
    pub variance_exponent: f64,
}

impl InitRule {
    pub fn resolve(&self, d: usize) -> Result<f64, ParametrizationError> {
        Ok(Exponent::try_from_f64(self.variance_exponent)?.apply(d).sqrt())
    }
}

/// Full description of one grid sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// (d, m) pairs; the default family is m = 8d but any pairs are allowed.
    pub configurations: Vec<(usize, usize)>,
    /// Embedding learning rates, strictly increasing, at least 5.
    pub lr_grid: Vec<f64>,
    /// Projection learning-rate rule, resolved per width.
    pub hidden_lr: LrRule,
    /// Embedding init-variance rule, resolved per width.
    pub embedding_init: InitRule,
    /// Projection init-variance rule, resolved per width.
    pub output_init: InitRule,
    pub seeds: Vec<u64>,
    pub steps: usize,
    pub optimizer: OptimizerKind,
    pub zipf_exponent: f64,
}

impl SweepConfig {
    /// Validates grid shape and nonemptiness.
    pub fn validate(&self) -> Result<(), SweepError> {
        if self.lr_grid.len() < 5
            || self.lr_grid.iter().any(|&x| !(x > 0.0) || !x.is_finite())
            || self.lr_grid.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(SweepError::InvalidGrid);
        }
        if self.configurations.is_empty() || self.seeds.is_empty() {
            return Err(SweepError::EmptyConfiguration);
        }
        Ok(())
    }

    /// The desk-scale default protocol: widths {64, 128, 256, 512} with
    /// m = 8d, Zipf exponent 1, init scales d^(-1/2), projection LR
    /// base_eta/d, 3 seeds, 300 SignSGD steps, and a 13-point grid spanning
    /// 4 decades centered on the LVP embedding-LR prediction at the
    /// geometric-mean width.
    pub fn desk_default(base_eta: f64) -> SweepConfig {
        let widths = [64usize, 128, 256, 512];
        let log_mid = widths.iter().map(|&d| (d as f64).ln()).sum::<f64>() / widths.len() as f64;
        let center = base_eta * (-0.5 * log_mid).exp();
        SweepConfig {
            configurations: widths.iter().map(|&d| (d, 8 * d)).collect(),
            lr_grid: geometric_grid(center * 1e-2, center * 1e2, 13),
            hidden_lr: LrRule {
                base_eta,
                exponent: -1.0,
            },
            embedding_init: InitRule {
                variance_exponent: -1.0,
            },
            output_init: InitRule {
                variance_exponent: -1.0,
            },
            seeds: vec![0, 1, 2],
            steps: 300,
            optimizer: OptimizerKind::SignSgd,
            zipf_exponent: 1.0,
        }
    }
}

/// Geometric grid of `points` values from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2 && lo > 0.0 && hi > lo, "grid needs 2+ points and 0 < lo < hi");
    let step = (hi / lo).powf(1.0 / (points - 1) as f64);
    (0..points).map(|k| lo * step.powi(k as i32)).collect()
}

/// One training outcome within a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub d: usize,
    pub m: usize,
    pub eta_e: f64,
    pub seed: u64,
    pub final_loss: f64,
    pub diverged: bool,
}

fn run_cell(config: &SweepConfig, d: usize, m: usize, eta_e: f64, seed: u64) -> Result<SweepRecord, SweepError> {
    let dist = zipf_distribution(m, config.zipf_exponent)?;
    let traj = train(&TrainConfig {
        dist,
        d,
        hp: HpSpec::Explicit {
            sigma_e: config.embedding_init.resolve(d)?,
            sigma_w: config.output_init.resolve(d)?,
            eta_e,
            eta_w: config.hidden_lr.resolve(d)?,
        },
        optimizer: config.optimizer,
        steps: config.steps,
        rng: RngStream::new(seed, 0),
    })?;
    Ok(SweepRecord {
        d,
        m,
        eta_e,
        seed,
        final_loss: if traj.diverged {
            f64::INFINITY
        } else {
            traj.final_loss()
        },
        diverged: traj.diverged,
    })
}

fn cell_list(config: &SweepConfig) -> Vec<(usize, usize, f64, u64)> {
    let mut cells = Vec::new();
    for &(d, m) in &config.configurations {
        for &eta in &config.lr_grid {
            for &seed in &config.seeds {
                cells.push((d, m, eta, seed));
            }
        }
    }
    cells
}

/// Runs one train() per (configuration, grid LR, seed) cell, in parallel
/// when the `parallel` feature is enabled. Records arrive in deterministic
/// (configuration, LR, seed) order; individual divergences are recorded,
/// never fatal.
pub fn run_sweep(config: &SweepConfig) -> Result<Vec<SweepRecord>, SweepError> {
    config.validate()?;
    let cells = cell_list(config);
    #[cfg(feature = "parallel")]
    {
        cells
            .into_par_iter()
            .map(|(d, m, eta, seed)| run_cell(config, d, m, eta, seed))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        cells
            .into_iter()
            .map(|(d, m, eta, seed)| run_cell(config, d, m, eta, seed))
            .collect()
    }
}

/// Single-threaded variant of `run_sweep` with identical output.
pub fn run_sweep_sequential(config: &SweepConfig) -> Result<Vec<SweepRecord>, SweepError> {
    config.validate()?;
    cell_list(config)
        .into_iter()
        .map(|(d, m, eta, seed)| run_cell(config, d, m, eta, seed))
        .collect()
}

/// Optimal LR for one (d, m) group plus how many grid points qualified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalLr {
    pub d: usize,
    pub m: usize,
    pub eta_opt: f64,
    pub n_qualifying: usize,
    pub best_mean_loss: f64,
}

/// Extracts the optimal LR from one (d, m) group of records: averages the
/// final loss across seeds per LR, finds the best mean L*, and returns the
/// geometric mean of all grid LRs whose mean loss is within `threshold`
/// (relative) of L*. LRs with any diverged seed carry an infinite mean and
/// never qualify.
pub fn optimal_lr(records: &[SweepRecord], threshold: f64) -> Result<OptimalLr, SweepError> {
    assert!(!records.is_empty(), "optimal_lr needs at least one record");
    let (d, m) = (records[0].d, records[0].m);
    assert!(
        records.iter().all(|r| r.d == d && r.m == m),
        "optimal_lr expects records from a single (d, m) group"
    );
    let mut lrs: Vec<f64> = records.iter().map(|r| r.eta_e).collect();
    lrs.sort_by(|a, b| a.partial_cmp(b).expect("finite LR"));
    lrs.dedup();
    let mean_of = |lr: f64| {
        let group: Vec<f64> = records
            .iter()
            .filter(|r| r.eta_e == lr)
            .map(|r| r.final_loss)
            .collect();
        group.iter().sum::<f64>() / group.len() as f64
    };
    let means: Vec<f64> = lrs.iter().map(|&lr| mean_of(lr)).collect();
    let best = means.iter().copied().fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(SweepError::AllDiverged { d, m });
    }
    let cutoff = (1.0 + threshold) * best;
    let qualifying: Vec<f64> = lrs
        .iter()
        .zip(&means)
        .filter(|(_, &mean)| mean <= cutoff)
        .map(|(&lr, _)| lr)
        .collect();
    let log_mean = qualifying.iter().map(|x| x.ln()).sum::<f64>() / qualifying.len() as f64;
    Ok(OptimalLr {
        d,
        m,
        eta_opt: log_mean.exp(),
        n_qualifying: qualifying.len(),
        best_mean_loss: best,
    })
}

/// Least-squares fit of log2(optimal LR) against log2(width), with
/// distances to the reference slopes 0, -1/2, and -1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub per_d_optimal: Vec<(usize, f64)>,
}

impl SlopeFit {
    /// Absolute distances to the reference slopes (0, -1/2, -1).
    pub fn ref_distances(&self) -> (f64, f64, f64) {
        (
            (self.slope).abs(),
            (self.slope + 0.5).abs(),
            (self.slope + 1.0).abs(),
        )
    }
}

/// Fits the width-scaling exponent of the optimal LR over at least 3
/// distinct widths.
pub fn fit_slope(per_d_optimal: &[(usize, f64)]) -> Result<SlopeFit, SweepError> {
    let mut widths: Vec<usize> = per_d_optimal.iter().map(|&(d, _)| d).collect();
    widths.sort_unstable();
    widths.dedup();
    if widths.len() < 3 {
        return Err(SweepError::NotEnoughWidths);
    }
    let x: Vec<f64> = per_d_optimal.iter().map(|&(d, _)| (d as f64).log2()).collect();
    let y: Vec<f64> = per_d_optimal.iter().map(|&(_, e)| e.log2()).collect();
    let (slope, intercept, r_squared) = linear_fit(&x, &y);
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
        per_d_optimal: per_d_optimal.to_vec(),
    })
}

/// Groups records by (d, m) in first-appearance order, extracts each
/// group's optimal LR, and fits the width-scaling slope.
pub fn analyze(records: &[SweepRecord], threshold: f64) -> Result<(Vec<OptimalLr>, SlopeFit), SweepError> {
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for r in records {
        if !groups.contains(&(r.d, r.m)) {
            groups.push((r.d, r.m));
        }
    }
    let mut optima = Vec::with_capacity(groups.len());
    for (d, m) in groups {
        let group: Vec<SweepRecord> = records
            .iter()
            .filter(|r| r.d == d && r.m == m)
            .cloned()
            .collect();
        optima.push(optimal_lr(&group, threshold)?);
    }
    let per_d: Vec<(usize, f64)> = optima.iter().map(|o| (o.d, o.eta_opt)).collect();
    let fit = fit_slope(&per_d)?;
    Ok((optima, fit))
}

/// Tunes the base LR constant by a coarse pre-sweep at one width: each
/// candidate base eta is tried with the LVP tying eta_E = eta/sqrt(d),
/// eta_W = eta/d, and the winner is extracted by the same band rule as
/// `optimal_lr`.
pub fn tune_base_eta(
    d: usize,
    m: usize,
    config: &SweepConfig,
    base_grid: &[f64],
) -> Result<f64, SweepError> {
    let records: Vec<SweepRecord> = base_grid
        .iter()
        .flat_map(|&base| config.seeds.iter().map(move |&s| (base, s)))
        .map(|(base, seed)| -> Result<SweepRecord, SweepError> {
            let dist = zipf_distribution(m, config.zipf_exponent)?;
            let traj = train(&TrainConfig {
                dist,
                d,
                hp: HpSpec::Explicit {
                    sigma_e: config.embedding_init.resolve(d)?,
                    sigma_w: config.output_init.resolve(d)?,
                    eta_e: base / (d as f64).sqrt(),
                    eta_w: base / d as f64,
                },
                optimizer: config.optimizer,
                steps: config.steps,
                rng: RngStream::new(seed, 0),
            })?;
            Ok(SweepRecord {
                d,
                m,
                eta_e: base,
                seed,
                final_loss: if traj.diverged {
                    f64::INFINITY
                } else {
                    traj.final_loss()
                },
                diverged: traj.diverged,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(optimal_lr(&records, OPTIMAL_BAND)?.eta_opt)
}

/// Writes records as CSV with header `d,m,eta_E,seed,final_loss,diverged`.
pub fn write_sweep_csv<W: io::Write>(records: &[SweepRecord], out: &mut W) -> io::Result<()> {
    writeln!(out, "d,m,eta_E,seed,final_loss,diverged")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.d, r.m, r.eta_e, r.seed, r.final_loss, r.diverged
        )?;
    }
    Ok(())
}

/// Writes per-configuration optima as CSV with header
/// `d,m,eta_opt,n_qualifying`.
pub fn write_optimal_csv<W: io::Write>(optima: &[OptimalLr], out: &mut W) -> io::Result<()> {
    writeln!(out, "d,m,eta_opt,n_qualifying")?;
    for o in optima {
        writeln!(out, "{},{},{},{}", o.d, o.m, o.eta_opt, o.n_qualifying)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SlopeReport<'a> {
    slope: f64,
    r_squared: f64,
    ref_distances: RefDistances,
    per_d_optimal: &'a [(usize, f64)],
}

#[derive(Serialize)]
struct RefDistances {
    to_zero: f64,
    to_minus_half: f64,
    to_minus_one: f64,
}

/// Writes the slope fit as JSON: {slope, r_squared, ref_distances, ...}.
pub fn write_slopes_json<W: io::Write>(fit: &SlopeFit, out: &mut W) -> io::Result<()> {
    let (to_zero, to_minus_half, to_minus_one) = fit.ref_distances();
    let report = SlopeReport {
        slope: fit.slope,
        r_squared: fit.r_squared,
        ref_distances: RefDistances {
            to_zero,
            to_minus_half,
            to_minus_one,
        },
        per_d_optimal: &fit.per_d_optimal,
    };
    serde_json::to_writer_pretty(&mut *out, &report)?;
    out.write_all(b"\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tiny_config() -> SweepConfig {
        SweepConfig {
            configurations: vec![(8, 64)],
            lr_grid: geometric_grid(1e-3, 1e-1, 5),
            hidden_lr: LrRule {
                base_eta: 0.1,
                exponent: -1.0,
            },
            embedding_init: InitRule {
                variance_exponent: -1.0,
            },
            output_init: InitRule {
                variance_exponent: -1.0,
            },
            seeds: vec![0],
            steps: 5,
            optimizer: OptimizerKind::SignSgd,
            zipf_exponent: 1.0,
        }
    }

    fn record(d: usize, eta_e: f64, seed: u64, final_loss: f64) -> SweepRecord {
        SweepRecord {
            d,
            m: 8 * d,
            eta_e,
            seed,
            final_loss,
            diverged: !final_loss.is_finite(),
        }
    }

    #[test]
    fn single_cell_produces_one_record() {
        let mut config = tiny_config();
        config.lr_grid = vec![1e-3; 1];
        assert!(config.validate().is_err(), "1-point grid fails validation");
        config.lr_grid = geometric_grid(1e-3, 1e-1, 5);
        config.lr_grid.truncate(5);
        let records = run_sweep(&config).unwrap();
        assert_eq!(records.len(), 5);
    }

    #[test]
    fn record_count_is_product_of_dimensions() {
        let mut config = tiny_config();
        config.configurations = vec![(8, 64), (16, 128)];
        config.seeds = vec![0, 1, 2];
        let records = run_sweep(&config).unwrap();
        assert_eq!(records.len(), 2 * 5 * 3);
    }

    #[test]
    fn reruns_are_identical() {
        let config = tiny_config();
        let a = run_sweep(&config).unwrap();
        let b = run_sweep(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parallel_matches_sequential() {
        let config = tiny_config();
        let par = run_sweep(&config).unwrap();
        let seq = run_sweep_sequential(&config).unwrap();
        assert_eq!(par, seq);
    }

    #[test]
    fn validation_rejects_bad_grids() {
        let mut config = tiny_config();
        config.lr_grid = vec![0.1, 0.2, 0.2, 0.4, 0.8];
        assert!(matches!(config.validate(), Err(SweepError::InvalidGrid)));
        config.lr_grid = vec![0.1, 0.2, 0.4, 0.8, -1.0];
        assert!(matches!(config.validate(), Err(SweepError::InvalidGrid)));
        config.lr_grid = geometric_grid(0.01, 1.0, 5);
        config.seeds.clear();
        assert!(matches!(
            config.validate(),
            Err(SweepError::EmptyConfiguration)
        ));
    }

    #[test]
    fn band_rule_takes_geometric_mean_of_qualifiers() {
        let records = vec![
            record(64, 0.1, 0, 1.0),
            record(64, 0.2, 0, 1.1),
            record(64, 0.4, 0, 2.0),
        ];
        let opt = optimal_lr(&records, 0.20).unwrap();
        assert_relative_eq!(opt.eta_opt, (0.1f64 * 0.2).sqrt(), max_relative = 1e-12);
        assert_eq!(opt.n_qualifying, 2);
        assert_eq!(opt.best_mean_loss, 1.0);
    }

    #[test]
    fn single_grid_point_is_its_own_optimum() {
        let records = vec![record(64, 0.05, 0, 0.3)];
        let opt = optimal_lr(&records, 0.20).unwrap();
        assert_relative_eq!(opt.eta_opt, 0.05, max_relative = 1e-12);
        assert_eq!(opt.n_qualifying, 1);
    }

    #[test]
    fn zero_threshold_returns_the_argmin() {
        let records = vec![
            record(64, 0.1, 0, 2.0),
            record(64, 0.2, 0, 1.0),
            record(64, 0.4, 0, 1.5),
        ];
        let opt = optimal_lr(&records, 0.0).unwrap();
        assert_relative_eq!(opt.eta_opt, 0.2, max_relative = 1e-12);
    }

    #[test]
    fn seeds_average_before_banding() {
        let records = vec![
            record(64, 0.1, 0, 1.0),
            record(64, 0.1, 1, 3.0),
            record(64, 0.2, 0, 1.6),
            record(64, 0.2, 1, 1.6),
        ];
        let opt = optimal_lr(&records, 0.20).unwrap();
        assert_relative_eq!(opt.eta_opt, 0.2, max_relative = 1e-12);
        assert_eq!(opt.best_mean_loss, 1.6);
    }

    #[test]
    fn diverged_learning_rates_never_qualify() {
        let records = vec![
            record(64, 0.1, 0, 1.0),
            record(64, 0.2, 0, f64::INFINITY),
        ];
        let opt = optimal_lr(&records, 10.0).unwrap();
        assert_relative_eq!(opt.eta_opt, 0.1, max_relative = 1e-12);
    }

    #[test]
    fn all_diverged_is_an_explicit_error() {
        let records = vec![
            record(64, 0.1, 0, f64::INFINITY),
            record(64, 0.2, 0, f64::INFINITY),
        ];
        assert!(matches!(
            optimal_lr(&records, 0.20),
            Err(SweepError::AllDiverged { d: 64, m: 512 })
        ));
    }

    #[test]
    fn band_is_invariant_under_loss_scaling() {
        let base = vec![
            record(64, 0.1, 0, 1.0),
            record(64, 0.2, 0, 1.15),
            record(64, 0.4, 0, 1.9),
        ];
        let scaled: Vec<SweepRecord> = base
            .iter()
            .map(|r| record(r.d, r.eta_e, r.seed, r.final_loss * 7.3))
            .collect();
        let a = optimal_lr(&base, 0.20).unwrap();
        let b = optimal_lr(&scaled, 0.20).unwrap();
        assert_eq!(a.eta_opt, b.eta_opt);
        assert_eq!(a.n_qualifying, b.n_qualifying);
    }

    #[test]
    fn exact_power_laws_recover_reference_slopes() {
        let widths = [64usize, 128, 256, 512];
        for (target, rule) in [
            (-0.5, (|d: f64| 0.3 * d.powf(-0.5)) as fn(f64) -> f64),
            (0.0, |_| 0.3),
            (-1.0, |d| 0.3 / d),
        ] {
            let pts: Vec<(usize, f64)> = widths.iter().map(|&d| (d, rule(d as f64))).collect();
            let fit = fit_slope(&pts).unwrap();
            assert!(
                (fit.slope - target).abs() < 1e-9,
                "slope {} should be {target}",
                fit.slope
            );
            assert!(fit.r_squared > 1.0 - 1e-9);
        }
    }

    #[test]
    fn slope_is_invariant_under_lr_scaling() {
        let pts: Vec<(usize, f64)> = [64usize, 128, 256]
            .iter()
            .map(|&d| (d, 0.2 * (d as f64).powf(-0.4)))
            .collect();
        let scaled: Vec<(usize, f64)> = pts.iter().map(|&(d, e)| (d, 5.0 * e)).collect();
        let a = fit_slope(&pts).unwrap();
        let b = fit_slope(&scaled).unwrap();
        assert_relative_eq!(a.slope, b.slope, epsilon = 1e-12);
        assert!(b.intercept > a.intercept);
    }

    #[test]
    fn fit_requires_three_distinct_widths() {
        assert!(matches!(
            fit_slope(&[(64, 0.1), (64, 0.2), (64, 0.3)]),
            Err(SweepError::NotEnoughWidths)
        ));
        assert!(matches!(
            fit_slope(&[(64, 0.1), (128, 0.2)]),
            Err(SweepError::NotEnoughWidths)
        ));
    }

    #[test]
    fn ref_distances_order_the_references() {
        let fit = SlopeFit {
            slope: -0.45,
            intercept: 0.0,
            r_squared: 1.0,
            per_d_optimal: vec![],
        };
        let (z, h, o) = fit.ref_distances();
        assert!(h < z && h < o, "slope -0.45 sits closest to -1/2");
    }

    #[test]
    fn analyze_pipeline_runs_end_to_end() {
        let mut config = tiny_config();
        config.configurations = vec![(8, 64), (16, 128), (32, 256)];
        let records = run_sweep(&config).unwrap();
        let (optima, fit) = analyze(&records, OPTIMAL_BAND).unwrap();
        assert_eq!(optima.len(), 3);
        assert!(fit.slope.is_finite());
        assert_eq!(fit.per_d_optimal.len(), 3);
    }

    #[test]
    fn sweep_csv_is_stable_and_parseable() {
        let config = tiny_config();
        let records = run_sweep(&config).unwrap();
        let mut a = Vec::new();
        write_sweep_csv(&records, &mut a).unwrap();
        let mut b = Vec::new();
        write_sweep_csv(&run_sweep(&config).unwrap(), &mut b).unwrap();
        assert_eq!(a, b, "rerun must produce byte-identical CSV");
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("d,m,eta_E,seed,final_loss,diverged\n"));
        assert_eq!(text.lines().count(), 1 + records.len());
        for line in text.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 6);
            fields[2].parse::<f64>().unwrap();
            fields[4].parse::<f64>().unwrap();
        }
    }

    #[test]
    fn optimal_csv_and_slopes_json_emit() {
        let optima = vec![OptimalLr {
            d: 64,
            m: 512,
            eta_opt: 0.0125,
            n_qualifying: 4,
            best_mean_loss: 0.13,
        }];
        let mut csv = Vec::new();
        write_optimal_csv(&optima, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text, "d,m,eta_opt,n_qualifying\n64,512,0.0125,4\n");

        let fit = SlopeFit {
            slope: -0.5,
            intercept: -2.0,
            r_squared: 0.95,
            per_d_optimal: vec![(64, 0.0125)],
        };
        let mut json = Vec::new();
        write_slopes_json(&fit, &mut json).unwrap();
        let value: serde_json::Value = serde_json::from_slice(&json).unwrap();
        assert_eq!(value["slope"], -0.5);
        assert_eq!(value["ref_distances"]["to_minus_half"], 0.0);
    }

    #[test]
    fn desk_default_is_valid_and_centered() {
        let config = SweepConfig::desk_default(0.1);
        config.validate().unwrap();
        assert_eq!(config.configurations.len(), 4);
        assert!(config.configurations.iter().all(|&(d, m)| m == 8 * d));
        assert_eq!(config.lr_grid.len(), 13);
        let center = config.lr_grid[6];
        let log_mid = [64f64, 128.0, 256.0, 512.0]
            .iter()
            .map(|d| d.ln())
            .sum::<f64>()
            / 4.0;
        let expected = 0.1 * (-0.5 * log_mid).exp();
        assert_relative_eq!(center, expected, max_relative = 1e-9);
        let span = config.lr_grid[12] / config.lr_grid[0];
        assert_relative_eq!(span, 1e4, max_relative = 1e-6);
    }

    #[test]
    fn config_json_round_trip() {
        let config = SweepConfig::desk_default(0.2);
        let json = serde_json::to_string_pretty(&config).unwrap();
        let back: SweepConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn tune_base_eta_smoke() {
        let config = tiny_config();
        let grid = geometric_grid(1e-2, 1e2, 5);
        let eta = tune_base_eta(8, 64, &config, &grid).unwrap();
        assert!(eta > 0.0 && eta.is_finite());
    }
}
