//! One-step sign-descent analysis: the exact decomposition of a token
//! output update into projection-driven, embedding-driven, and interaction
//! parts; closed-form magnitude predictions for the first two; and the
//! idealized sign-Gaussian constructions (Stein product, independent-vector
//! covariance, frequency-weighted covariance) that those predictions rest
//! on, each paired with a seeded Monte Carlo oracle.

use crate::fitting::linear_fit;
use crate::linalg::matmul_tn;
use crate::model::{
    forward, infinite_batch_gradients, init_model, make_targets, sign_map, ModelError, ModelState,
    Optimizer, OptimizerKind, Targets,
};
use crate::montecarlo::{
    fill_gaussian, gaussian_matrix, run_trials, standard_normal, Estimate, MonteCarloError,
    RngStream,
};
use crate::parametrization::{resolve, Parametrization, ParametrizationError};
use crate::zipf::{frequency_stats, TokenDistribution};
use ndarray::Array1;
use std::f64::consts::PI;
use std::fmt;

/// Errors from the Monte Carlo oracles and parametrization resolution.
#[derive(Debug, thiserror::Error)]
pub enum FeatureLearningError {
    #[error("correlation {0} outside [-1, 1]")]
    InvalidCorrelation(f64),
    #[error(transparent)]
    MonteCarlo(#[from] MonteCarloError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Parametrization(#[from] ParametrizationError),
}

/// One token's output update under a single sign-descent step, split into
/// the three bilinear terms: `output_after` equals
/// `output_before - delta_w - delta_e + delta_we` up to rounding.
#[derive(Debug, Clone)]
pub struct OneStepDecomposition {
    pub token: usize,
    /// Projection-update term: eta_W * E_i * sign(dW).
    pub delta_w: Array1<f64>,
    /// Embedding-update term: eta_E * sign(dE)_i * W.
    pub delta_e: Array1<f64>,
    /// Second-order interaction: eta_E * eta_W * sign(dE)_i * sign(dW).
    pub delta_we: Array1<f64>,
    pub output_before: Array1<f64>,
    /// Row output recomputed from the actually stepped matrices.
    pub output_after: Array1<f64>,
}

impl OneStepDecomposition {
    /// The output the three-term expansion predicts.
    pub fn reconstructed_output(&self) -> Array1<f64> {
        &self.output_before - &self.delta_w - &self.delta_e + &self.delta_we
    }

    /// Worst entrywise deviation between the stepped output and the
    /// expansion, relative to the largest magnitude participating in it.
    pub fn max_relative_error(&self) -> f64 {
        let recon = self.reconstructed_output();
        let inf = |v: &Array1<f64>| v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        let scale = inf(&self.output_before)
            .max(inf(&self.output_after))
            .max(inf(&self.delta_w))
            .max(inf(&self.delta_e))
            .max(inf(&self.delta_we));
        let err = self
            .output_after
            .iter()
            .zip(recon.iter())
            .fold(0.0f64, |acc, (a, r)| acc.max((a - r).abs()));
        if err == 0.0 {
            0.0
        } else {
            err / scale
        }
    }
}

/// Per-coordinate root-mean-square magnitude, `||v|| / sqrt(len)`.
pub fn average_norm(v: &Array1<f64>) -> f64 {
    (v.dot(v) / v.len() as f64).sqrt()
}

/// Splits one sign-descent step on the given state into the three update
/// terms for `token`, and verifies them against an actually stepped model.
///
/// Both learning rates must be finite and nonnegative; the token is 1-based.
pub fn one_step_decomposition(
    state: &ModelState,
    dist: &TokenDistribution,
    targets: &Targets,
    eta_e: f64,
    eta_w: f64,
    token: usize,
) -> OneStepDecomposition {
    assert!(
        (1..=state.vocab_size()).contains(&token),
        "token {token} outside 1..={}",
        state.vocab_size()
    );
    assert!(
        eta_e >= 0.0 && eta_e.is_finite() && eta_w >= 0.0 && eta_w.is_finite(),
        "learning rates must be finite and nonnegative"
    );
    let grads = infinite_batch_gradients(state, dist, targets);
    let sign_de = sign_map(&grads.d_e);
    let sign_dw = sign_map(&grads.d_w);
    let row = token - 1;
    let sign_de_i = sign_de.row(row);
    let e_i = state.e().row(row);

    let delta_e = sign_de_i.dot(state.w()) * eta_e;
    let delta_w = e_i.dot(&sign_dw) * eta_w;
    let delta_we = sign_de_i.dot(&sign_dw) * (eta_e * eta_w);
    let output_before = forward(state, token);

    let mut stepped = state.clone();
    Optimizer::new(OptimizerKind::SignSgd).step(&mut stepped, &grads, eta_e, eta_w);
    let output_after = forward(&stepped, token);

    OneStepDecomposition {
        token,
        delta_w,
        delta_e,
        delta_we,
        output_before,
        output_after,
    }
}

/// Predicted average norm of the embedding-update term:
/// `eta_E * sigma_W * sqrt(d + 2d(d-1)/(pi m))`.
pub fn theory_delta_e(eta_e: f64, sigma_w: f64, d: usize, m: usize) -> f64 {
    assert!(d >= 1 && m >= 1, "dimensions must be at least 1");
    let (df, mf) = (d as f64, m as f64);
    eta_e * sigma_w * (df + 2.0 * df * (df - 1.0) / (PI * mf)).sqrt()
}

/// Predicted average norm of the projection-update term:
/// `eta_W * sigma_E * sqrt(d + (alpha_i^2/msf) * 2d(d-1)/(pi m))`, where
/// `msf` is the mean squared token frequency.
pub fn theory_delta_w(
    eta_w: f64,
    sigma_e: f64,
    d: usize,
    m: usize,
    alpha_i: f64,
    mean_sq_freq: f64,
) -> f64 {
    assert!(d >= 1 && m >= 1, "dimensions must be at least 1");
    assert!(
        mean_sq_freq > 0.0,
        "mean squared frequency must be positive"
    );
    let (df, mf) = (d as f64, m as f64);
    let amplification = alpha_i * alpha_i / mean_sq_freq;
    eta_w * sigma_e * (df + amplification * 2.0 * df * (df - 1.0) / (PI * mf)).sqrt()
}

/// Measured average norm of one update term against its prediction.
#[derive(Debug, Clone)]
pub struct AvgNormReport {
    pub token: usize,
    pub d: usize,
    pub m: usize,
    /// Per-init observations of `||delta|| / sqrt(m)`.
    pub empirical: Estimate,
    pub theory: f64,
    /// Empirical mean over theory.
    pub ratio: f64,
}

impl AvgNormReport {
    fn new(token: usize, d: usize, m: usize, empirical: Estimate, theory: f64) -> Self {
        assert!(theory > 0.0, "prediction must be positive");
        let ratio = empirical.mean() / theory;
        assert!(ratio.is_finite(), "empirical/theory ratio must be finite");
        AvgNormReport {
            token,
            d,
            m,
            empirical,
            theory,
            ratio,
        }
    }
}

/// Hyperparameters for a delta-norm measurement; the vocabulary size comes
/// from the distribution.
#[derive(Debug, Clone, Copy)]
pub struct DeltaNormConfig {
    pub d: usize,
    pub token: usize,
    pub eta_e: f64,
    pub eta_w: f64,
    pub sigma_e: f64,
    pub sigma_w: f64,
    pub inits: u64,
}

/// Delta-norm measurements for both predicted terms plus the interaction
/// term, which is reported without a closed-form prediction.
#[derive(Debug, Clone)]
pub struct DeltaNormMeasurement {
    pub embedding: AvgNormReport,
    pub projection: AvgNormReport,
    pub interaction: Estimate,
}

/// Measures average norms of the three one-step terms over independent
/// inits with matched random-signal targets, and compares the embedding and
/// projection terms to their predictions.
///
/// Each init consumes three stream ids starting at `3 * trial_index`.
pub fn measure_delta_norms(
    dist: &TokenDistribution,
    config: &DeltaNormConfig,
    stream: &RngStream,
) -> Result<DeltaNormMeasurement, FeatureLearningError> {
    let m = dist.vocab_size();
    let observations: Vec<Result<(f64, f64, f64), ModelError>> =
        run_trials(config.inits, |t| {
            let base = stream.substream(3 * t);
            let state = init_model(m, config.d, config.sigma_e, config.sigma_w, &base)?;
            let targets = make_targets(&state, &base.substream(2))?;
            let dec = one_step_decomposition(
                &state,
                dist,
                &targets,
                config.eta_e,
                config.eta_w,
                config.token,
            );
            Ok((
                average_norm(&dec.delta_e),
                average_norm(&dec.delta_w),
                average_norm(&dec.delta_we),
            ))
        });
    let mut emb = Estimate::new();
    let mut proj = Estimate::new();
    let mut inter = Estimate::new();
    for obs in observations {
        let (e, w, we) = obs?;
        emb.accumulate(e)?;
        proj.accumulate(w)?;
        inter.accumulate(we)?;
    }
    let freq = frequency_stats(dist);
    let theory_e = theory_delta_e(config.eta_e, config.sigma_w, config.d, m);
    let theory_w = theory_delta_w(
        config.eta_w,
        config.sigma_e,
        config.d,
        m,
        dist.alpha(config.token),
        freq.mean_squared_frequency,
    );
    Ok(DeltaNormMeasurement {
        embedding: AvgNormReport::new(config.token, config.d, m, emb, theory_e),
        projection: AvgNormReport::new(config.token, config.d, m, proj, theory_w),
        interaction: inter,
    })
}

/// Samples `E[sign(Z) G]` for a correlated standard Gaussian pair and
/// returns the estimate next to the closed form `sqrt(2/pi) * rho`.
///
/// Each trial consumes one stream id.
pub fn stein_check(
    rho: f64,
    trials: u64,
    stream: &RngStream,
) -> Result<(Estimate, f64), FeatureLearningError> {
    if !rho.is_finite() || !(-1.0..=1.0).contains(&rho) {
        return Err(FeatureLearningError::InvalidCorrelation(rho));
    }
    let cross = (1.0 - rho * rho).sqrt();
    let observations = run_trials(trials, |t| {
        let mut rng = stream.substream(t).rng();
        let z = standard_normal(&mut rng);
        let g = rho * z + cross * standard_normal(&mut rng);
        if z >= 0.0 {
            g
        } else {
            -g
        }
    });
    let mut estimate = Estimate::new();
    for obs in observations {
        estimate.accumulate(obs)?;
    }
    Ok((estimate, (2.0 / PI).sqrt() * rho))
}

/// Monte Carlo summary of an idealized sign-product construction.
#[derive(Debug, Clone)]
pub struct SignProductCheck {
    /// Per-trial observations of the coordinate average of X.
    pub coordinate_mean: Estimate,
    /// Per-trial observations of `||X||^2 / m`, the pooled coordinate
    /// second moment.
    pub coordinate_variance: Estimate,
    pub theory_variance: f64,
}

fn pooled_observation(x: &Array1<f64>) -> (f64, f64) {
    let m = x.len() as f64;
    (x.sum() / m, x.dot(x) / m)
}

fn collect_sign_product(
    observations: Vec<Result<(f64, f64), MonteCarloError>>,
    theory_variance: f64,
) -> Result<SignProductCheck, FeatureLearningError> {
    let mut coordinate_mean = Estimate::new();
    let mut coordinate_variance = Estimate::new();
    for obs in observations {
        let (mean, second) = obs?;
        coordinate_mean.accumulate(mean)?;
        coordinate_variance.accumulate(second)?;
    }
    Ok(SignProductCheck {
        coordinate_mean,
        coordinate_variance,
        theory_variance,
    })
}

/// Samples `X = sum_j sign(<v, W_j>) W_j` with `W_j ~ N(0, sigma_W^2 I_m)`
/// rows independent of `v ~ N(0, I_m)`, whose coordinates have mean zero
/// and variance exactly `sigma_W^2 (d + 2d(d-1)/(pi m))`.
///
/// Each trial consumes two stream ids.
pub fn idealized_sign_product(
    d: usize,
    m: usize,
    sigma_w: f64,
    trials: u64,
    stream: &RngStream,
) -> Result<SignProductCheck, FeatureLearningError> {
    assert!(d >= 1 && m >= 1, "dimensions must be at least 1");
    let observations = run_trials(trials, |t| {
        let w = gaussian_matrix(d, m, sigma_w, &stream.substream(2 * t))?;
        let mut v = Array1::zeros(m);
        fill_gaussian(
            v.as_slice_mut().expect("fresh array"),
            1.0,
            &mut stream.substream(2 * t + 1).rng(),
        );
        let signs = w.dot(&v).mapv(|s| if s >= 0.0 { 1.0 } else { -1.0 });
        Ok(pooled_observation(&signs.dot(&w)))
    });
    let (df, mf) = (d as f64, m as f64);
    let theory = sigma_w * sigma_w * (df + 2.0 * df * (df - 1.0) / (PI * mf));
    collect_sign_product(observations, theory)
}

/// Samples `X = E_i sign(E^T M)` with `E` standard Gaussian (m x d) and `M`
/// (m x m) having row `j ~ N(0, alpha_j^2)`, the frequency-weighted variant
/// where the outer row also feeds the sign. The prediction plugs the mean
/// squared frequency into the cross term:
/// `d + (2/pi)(alpha_i^2/msf) d(d-1)/m`.
///
/// The plug-in step is only exact for uniform frequencies; for ranked
/// frequencies the weighted square sum inside the sign correlation does not
/// concentrate, so the prediction visibly overshoots on the top token (see
/// `plugin_variance_overshoots_on_top_token`).
///
/// Each trial consumes two stream ids.
pub fn idealized_hetero(
    d: usize,
    m: usize,
    dist: &TokenDistribution,
    token: usize,
    trials: u64,
    stream: &RngStream,
) -> Result<SignProductCheck, FeatureLearningError> {
    assert!(d >= 1, "width must be at least 1");
    assert_eq!(
        dist.vocab_size(),
        m,
        "distribution must cover the vocabulary"
    );
    let alpha_i = dist.alpha(token);
    let observations = run_trials(trials, |t| {
        let e = gaussian_matrix(m, d, 1.0, &stream.substream(2 * t))?;
        let mut weighted = gaussian_matrix(m, m, 1.0, &stream.substream(2 * t + 1))?;
        for (j, mut row) in weighted.rows_mut().into_iter().enumerate() {
            row *= dist.alpha(j + 1);
        }
        let signs = sign_map(&matmul_tn(&e.view(), &weighted.view()));
        let x = e.row(token - 1).dot(&signs);
        Ok(pooled_observation(&x))
    });
    let freq = frequency_stats(dist);
    let (df, mf) = (d as f64, m as f64);
    let amplification = alpha_i * alpha_i / freq.mean_squared_frequency;
    let theory = df + (2.0 / PI) * amplification * df * (df - 1.0) / mf;
    collect_sign_product(observations, theory)
}

/// Which addend dominates the embedding-term radical `d + 2d(d-1)/(pi m)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DominantTerm {
    /// The `2d(d-1)/(pi m)` addend dominates: vocabulary is small relative
    /// to width, the fixed-vocabulary muP regime.
    MuP,
    /// The `d` addend dominates: the large-vocabulary regime.
    LargeVocab,
}

impl fmt::Display for DominantTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DominantTerm::MuP => write!(f, "muP-term"),
            DominantTerm::LargeVocab => write!(f, "LV-term"),
        }
    }
}

/// Closed-form magnitudes of both update terms under a preset resolved at
/// width d (unit base learning rate), plus which radical addend dominates.
#[derive(Debug, Clone)]
pub struct RegimeReport {
    pub d: usize,
    pub m: usize,
    pub token: usize,
    pub delta_e_theory: f64,
    pub delta_w_theory: f64,
    /// delta_e_theory / delta_w_theory; base learning rate cancels.
    pub balance_ratio: f64,
    pub dominant_term_e: DominantTerm,
}

/// Evaluates both magnitude predictions for a parametrization at width d.
pub fn regime_report(
    d: usize,
    m: usize,
    dist: &TokenDistribution,
    param: &Parametrization,
    token: usize,
) -> Result<RegimeReport, FeatureLearningError> {
    assert_eq!(
        dist.vocab_size(),
        m,
        "distribution must cover the vocabulary"
    );
    let hp = resolve(param, d, 1.0)?;
    let freq = frequency_stats(dist);
    let delta_e_theory = theory_delta_e(hp.eta_e, hp.sigma_w_out, d, m);
    let delta_w_theory = theory_delta_w(
        hp.eta_w_out,
        hp.sigma_e,
        d,
        m,
        dist.alpha(token),
        freq.mean_squared_frequency,
    );
    let (df, mf) = (d as f64, m as f64);
    let mu_term = 2.0 * df * (df - 1.0) / (PI * mf);
    Ok(RegimeReport {
        d,
        m,
        token,
        delta_e_theory,
        delta_w_theory,
        balance_ratio: delta_e_theory / delta_w_theory,
        dominant_term_e: if mu_term > df {
            DominantTerm::MuP
        } else {
            DominantTerm::LargeVocab
        },
    })
}

/// Log-log width scaling of the embedding-term prediction along a
/// vocabulary growth path.
#[derive(Debug, Clone)]
pub struct ScalingSlopes {
    /// (width, prediction at unit learning rate and init scale).
    pub per_width: Vec<(usize, f64)>,
    /// Local slope between the two largest widths; the asymptotic exponent
    /// estimate.
    pub endpoint_slope: f64,
    /// Least-squares slope over the whole ladder, reported for contrast
    /// (it lags the endpoint while the radical is still bending).
    pub least_squares_slope: f64,
}

/// Evaluates `theory_delta_e(1, 1, d, vocab_of(d))` over the width ladder
/// and fits its scaling exponent both locally and globally.
pub fn delta_e_scaling<F: Fn(usize) -> usize>(widths: &[usize], vocab_of: F) -> ScalingSlopes {
    assert!(
        widths.len() >= 2 && widths.windows(2).all(|w| w[0] < w[1]),
        "need at least 2 strictly increasing widths"
    );
    let per_width: Vec<(usize, f64)> = widths
        .iter()
        .map(|&d| (d, theory_delta_e(1.0, 1.0, d, vocab_of(d))))
        .collect();
    let x: Vec<f64> = per_width.iter().map(|&(d, _)| (d as f64).log2()).collect();
    let y: Vec<f64> = per_width.iter().map(|&(_, v)| v.log2()).collect();
    let n = x.len();
    let endpoint_slope = (y[n - 1] - y[n - 2]) / (x[n - 1] - x[n - 2]);
    let (least_squares_slope, _, _) = linear_fit(&x, &y);
    ScalingSlopes {
        per_width,
        endpoint_slope,
        least_squares_slope,
    }
}
