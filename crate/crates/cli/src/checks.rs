//! `verify` subcommands: each runs a closed-form prediction against its
//! oracle and emits one CSV row per comparison.
//!
//! Row semantics: `ratio` is `empirical / theory` when the prediction is a
//! nonzero magnitude, and `|empirical| / (factor * se)` for mean-zero checks
//! (pass iff at most 1). Tolerances are pinned as constants below.

use std::path::Path;

use lvlab_core::feature_learning::{
    delta_e_scaling, idealized_hetero, idealized_sign_product, measure_delta_norms,
    one_step_decomposition, regime_report, stein_check, DeltaNormConfig, DominantTerm,
};
use lvlab_core::model::{init_model, make_targets};
use lvlab_core::montecarlo::{uniform01, RngStream};
use lvlab_core::parametrization::preset;
use lvlab_core::zipf::zipf_distribution;

use crate::{CliError, CliResult, CovarianceArgs, HeteroArgs, OneStepArgs, RegimesArgs, SteinArgs};

/// Mean-style estimates pass within this many standard errors of the target.
pub const MEAN_SE_FACTOR: f64 = 4.0;
/// Relative tolerance on the uniform-weight sign-product coordinate variance.
pub const COVARIANCE_TOL: f64 = 0.02;
/// Relative tolerance on the frequency-weighted coordinate variance.
pub const HETERO_TOL: f64 = 0.03;
/// Maximum relative error for the one-step reconstruction identity.
pub const RECONSTRUCTION_TOL: f64 = 1e-10;
/// Concentration band for measured/predicted update-norm ratios.
pub const BAND_LO: f64 = 0.7;
pub const BAND_HI: f64 = 1.4;
/// Tolerance around the predicted scaling exponents (1 and 1/2).
pub const SLOPE_TOL: f64 = 0.1;
/// Width-uniformity bound on the balanced-parametrization term ratio.
pub const LVP_SPREAD_BOUND: f64 = 2.0;

/// Gap between per-row stream ids; no row consumes anywhere near 2^40 ids.
const STREAM_GAP: u64 = 1 << 40;

/// One comparison between an empirical quantity and its prediction.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub check: String,
    pub d: Option<usize>,
    pub m: Option<usize>,
    pub token: Option<usize>,
    pub empirical: f64,
    pub se: Option<f64>,
    pub theory: f64,
    pub ratio: f64,
    pub pass: bool,
}

impl CheckRow {
    pub fn console_line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        format!(
            "{verdict} {}: empirical={} theory={} ratio={}",
            self.check, self.empirical, self.theory, self.ratio
        )
    }
}

fn fmt_opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes rows as `check,d,m,token,empirical,se,theory,ratio,pass`.
///
/// Floats use the shortest round-trip decimal form, so the bytes are a pure
/// function of the computed values.
pub fn write_check_csv(path: &Path, rows: &[CheckRow]) -> CliResult<()> {
    let mut out = String::from("check,d,m,token,empirical,se,theory,ratio,pass\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.check,
            fmt_opt_usize(row.d),
            fmt_opt_usize(row.m),
            fmt_opt_usize(row.token),
            row.empirical,
            row.se.map(|s| s.to_string()).unwrap_or_default(),
            row.theory,
            row.ratio,
            row.pass
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn usage(msg: String) -> CliError {
    CliError::Usage(msg)
}

fn internal(err: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("computation failed: {err}"))
}

/// Sampled sign-Gaussian product mean against `sqrt(2/pi) * rho`.
pub fn run_stein(args: &SteinArgs) -> CliResult<Vec<CheckRow>> {
    if args.trials == 0 {
        return Err(usage("--trials must be at least 1".into()));
    }
    if args.rhos.is_empty() {
        return Err(usage("at least one --rho is required".into()));
    }
    for &rho in &args.rhos {
        if !rho.is_finite() || !(-1.0..=1.0).contains(&rho) {
            return Err(usage(format!("--rho {rho} outside [-1, 1]")));
        }
    }
    let mut rows = Vec::new();
    for (idx, &rho) in args.rhos.iter().enumerate() {
        let stream = RngStream::new(args.seed, idx as u64 * STREAM_GAP);
        let (estimate, theory) = stein_check(rho, args.trials, &stream).map_err(internal)?;
        let se = estimate.standard_error();
        let empirical = estimate.mean();
        let (ratio, pass) = if theory != 0.0 {
            let ratio = empirical / theory;
            (ratio, (empirical - theory).abs() <= MEAN_SE_FACTOR * se)
        } else {
            let ratio = empirical.abs() / (MEAN_SE_FACTOR * se);
            (ratio, ratio <= 1.0)
        };
        rows.push(CheckRow {
            check: format!("stein_rho_{rho}"),
            d: None,
            m: None,
            token: None,
            empirical,
            se: Some(se),
            theory,
            ratio,
            pass,
        });
    }
    Ok(rows)
}

/// Builds the mean/variance row pair shared by the sign-product checks.
fn sign_product_rows(
    check: &str,
    d: usize,
    m: usize,
    token: Option<usize>,
    result: lvlab_core::feature_learning::SignProductCheck,
    var_tol: f64,
) -> Vec<CheckRow> {
    let var = &result.coordinate_variance;
    let var_ratio = var.mean() / result.theory_variance;
    let mean = &result.coordinate_mean;
    let mean_se = mean.standard_error();
    let mean_ratio = mean.mean().abs() / (MEAN_SE_FACTOR * mean_se);
    vec![
        CheckRow {
            check: format!("{check}_variance"),
            d: Some(d),
            m: Some(m),
            token,
            empirical: var.mean(),
            se: Some(var.standard_error()),
            theory: result.theory_variance,
            ratio: var_ratio,
            pass: (var_ratio - 1.0).abs() <= var_tol,
        },
        CheckRow {
            check: format!("{check}_mean"),
            d: Some(d),
            m: Some(m),
            token,
            empirical: mean.mean(),
            se: Some(mean_se),
            theory: 0.0,
            ratio: mean_ratio,
            pass: mean_ratio <= 1.0,
        },
    ]
}

/// Sign-product coordinate statistics for the independent uniform-weight batch.
pub fn run_covariance(args: &CovarianceArgs) -> CliResult<Vec<CheckRow>> {
    if args.d == 0 || args.m == 0 {
        return Err(usage("--d and --m must be at least 1".into()));
    }
    if args.trials == 0 {
        return Err(usage("--trials must be at least 1".into()));
    }
    let stream = RngStream::new(args.seed, 0);
    let result =
        idealized_sign_product(args.d, args.m, 1.0, args.trials, &stream).map_err(internal)?;
    Ok(sign_product_rows(
        "covariance",
        args.d,
        args.m,
        None,
        result,
        COVARIANCE_TOL,
    ))
}

/// Frequency-weighted sign-product statistics, one row pair per token rank.
pub fn run_hetero(args: &HeteroArgs) -> CliResult<Vec<CheckRow>> {
    if args.d == 0 || args.m == 0 {
        return Err(usage("--d and --m must be at least 1".into()));
    }
    if args.trials == 0 {
        return Err(usage("--trials must be at least 1".into()));
    }
    if args.tokens.is_empty() {
        return Err(usage("at least one --token is required".into()));
    }
    for &token in &args.tokens {
        if token == 0 || token > args.m {
            return Err(usage(format!("--token {token} outside 1..={}", args.m)));
        }
    }
    let dist =
        zipf_distribution(args.m, args.zipf_a).map_err(|e| usage(format!("--zipf-a: {e}")))?;
    let mut rows = Vec::new();
    for (idx, &token) in args.tokens.iter().enumerate() {
        let stream = RngStream::new(args.seed, idx as u64 * STREAM_GAP);
        let result = idealized_hetero(args.d, args.m, &dist, token, args.trials, &stream)
            .map_err(internal)?;
        rows.extend(sign_product_rows(
            "hetero",
            args.d,
            args.m,
            Some(token),
            result,
            HETERO_TOL,
        ));
    }
    Ok(rows)
}

/// One-step checks: exact reconstruction on random instances, then
/// update-norm concentration bands over the (width, vocab, token) lattice.
pub fn run_one_step(args: &OneStepArgs) -> CliResult<Vec<CheckRow>> {
    if args.trials == 0 && args.inits == 0 {
        return Err(usage("--trials and --inits cannot both be 0".into()));
    }
    if args.inits > 0 {
        if args.widths.iter().any(|&d| d == 0) || args.vocabs.iter().any(|&m| m == 0) {
            return Err(usage("--d and --m must be at least 1".into()));
        }
        for &token in &args.tokens {
            let max_m = args.vocabs.iter().copied().max().unwrap_or(0);
            if token == 0 || args.vocabs.iter().any(|&m| token > m) {
                return Err(usage(format!(
                    "--token {token} outside 1..={max_m} for some --m"
                )));
            }
        }
    }
    let mut rows = Vec::new();

    // Exact expansion identity on random instances (m <= 256, d <= 64).
    let mut rng = RngStream::new(args.seed, 0).rng();
    for case in 0..args.trials {
        let m = 2 + (uniform01(&mut rng) * 255.0) as usize;
        let d = 1 + (uniform01(&mut rng) * 64.0) as usize;
        let eta_e = 10f64.powf(-2.0 * uniform01(&mut rng));
        let eta_w = 10f64.powf(-2.0 * uniform01(&mut rng));
        let token = 1 + (uniform01(&mut rng) * (m - 1) as f64) as usize;
        let stream = RngStream::new(args.seed, (case + 1) * STREAM_GAP);
        let state = init_model(m, d, 1.0, 1.0, &stream).map_err(internal)?;
        let dist = zipf_distribution(m, args.zipf_a).map_err(internal)?;
        let targets = make_targets(&state, &stream.substream(2)).map_err(internal)?;
        let dec = one_step_decomposition(&state, &dist, &targets, eta_e, eta_w, token);
        let err = dec.max_relative_error();
        rows.push(CheckRow {
            check: format!("reconstruction_{case}"),
            d: Some(d),
            m: Some(m),
            token: Some(token),
            empirical: err,
            se: None,
            theory: RECONSTRUCTION_TOL,
            ratio: err / RECONSTRUCTION_TOL,
            pass: err <= RECONSTRUCTION_TOL,
        });
    }

    // Update-norm concentration bands at unit scales and learning rates.
    if args.inits > 0 {
        let mut cell = 0u64;
        for &m in &args.vocabs {
            let dist = zipf_distribution(m, args.zipf_a).map_err(internal)?;
            for &d in &args.widths {
                for &token in &args.tokens {
                    cell += 1;
                    let config = DeltaNormConfig {
                        d,
                        token,
                        eta_e: 1.0,
                        eta_w: 1.0,
                        sigma_e: 1.0,
                        sigma_w: 1.0,
                        inits: args.inits,
                    };
                    let stream = RngStream::new(args.seed, ((1 << 20) + cell) * STREAM_GAP);
                    let measurement =
                        measure_delta_norms(&dist, &config, &stream).map_err(internal)?;
                    for (name, report) in [
                        ("embedding_norm_band", &measurement.embedding),
                        ("projection_norm_band", &measurement.projection),
                    ] {
                        rows.push(CheckRow {
                            check: name.to_string(),
                            d: Some(d),
                            m: Some(m),
                            token: Some(token),
                            empirical: report.empirical.mean(),
                            se: Some(report.empirical.standard_error()),
                            theory: report.theory,
                            ratio: report.ratio,
                            pass: (BAND_LO..=BAND_HI).contains(&report.ratio),
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// Deterministic regime diagnostics: scaling slopes of the embedding-term
/// prediction, radical-term dominance, and balanced-parametrization spread.
pub fn run_regimes(_args: &RegimesArgs) -> CliResult<Vec<CheckRow>> {
    let widths: Vec<usize> = (4..=10).map(|k| 1usize << k).collect();
    let mut rows = Vec::new();

    // Fixed vocabulary: the prediction approaches linear growth in width.
    let fixed = delta_e_scaling(&widths, |_| 64);
    rows.push(CheckRow {
        check: "embedding_slope_fixed_vocab".into(),
        d: Some(1 << 10),
        m: Some(64),
        token: None,
        empirical: fixed.endpoint_slope,
        se: None,
        theory: 1.0,
        ratio: fixed.endpoint_slope,
        pass: (fixed.endpoint_slope - 1.0).abs() <= SLOPE_TOL,
    });

    // Cubic vocabulary growth: the prediction grows like sqrt(width).
    let cubic = delta_e_scaling(&widths, |d| d * d * d);
    rows.push(CheckRow {
        check: "embedding_slope_cubic_vocab".into(),
        d: Some(1 << 10),
        m: Some(1 << 30),
        token: None,
        empirical: cubic.endpoint_slope,
        se: None,
        theory: 0.5,
        ratio: cubic.endpoint_slope / 0.5,
        pass: (cubic.endpoint_slope - 0.5).abs() <= SLOPE_TOL,
    });

    // Radical-term dominance: ratio of the cross term to the direct term.
    for (check, d, m, expect_cross_dominant) in [
        ("radical_ratio_fixed_vocab", 4096usize, 64usize, true),
        ("radical_ratio_cubic_vocab", 16, 4096, false),
    ] {
        let dist = zipf_distribution(m, 1.0).map_err(internal)?;
        let param = preset("mup").map_err(internal)?;
        let report = regime_report(d, m, &dist, &param, 1).map_err(internal)?;
        let (df, mf) = (d as f64, m as f64);
        let cross_over_direct = 2.0 * (df - 1.0) / (std::f64::consts::PI * mf);
        let dominant_matches = match report.dominant_term_e {
            DominantTerm::MuP => expect_cross_dominant,
            DominantTerm::LargeVocab => !expect_cross_dominant,
        };
        rows.push(CheckRow {
            check: check.into(),
            d: Some(d),
            m: Some(m),
            token: Some(1),
            empirical: cross_over_direct,
            se: None,
            theory: 1.0,
            ratio: cross_over_direct,
            pass: dominant_matches
                && if expect_cross_dominant {
                    cross_over_direct > 1.0
                } else {
                    cross_over_direct < 1.0
                },
        });
    }

    // Balanced parametrization: the term ratio stays width-stable along the
    // proportional-vocabulary ladder.
    let param = preset("lvp").map_err(internal)?;
    let mut ratios = Vec::new();
    for k in 6..=10 {
        let d = 1usize << k;
        let m = 8 * d;
        let dist = zipf_distribution(m, 1.0).map_err(internal)?;
        let report = regime_report(d, m, &dist, &param, 1).map_err(internal)?;
        ratios.push(report.balance_ratio);
    }
    let spread = ratios.iter().cloned().fold(f64::MIN, f64::max)
        / ratios.iter().cloned().fold(f64::MAX, f64::min);
    rows.push(CheckRow {
        check: "lvp_balance_spread".into(),
        d: Some(1 << 10),
        m: Some(8 << 10),
        token: Some(1),
        empirical: spread,
        se: None,
        theory: LVP_SPREAD_BOUND,
        ratio: spread / LVP_SPREAD_BOUND,
        pass: spread < LVP_SPREAD_BOUND,
    });

    Ok(rows)
}
