//! The two-matrix linear network f(x) = x'EW with lookup-style embedding:
//! population loss under a token distribution, infinite- and finite-batch
//! gradients, optimizer steps (SignSGD, Adam, SGD), and a training loop
//! that records a loss trajectory with divergence flagging.

use crate::linalg::{matmul_nn, matmul_nt, matmul_tn};
use crate::montecarlo::{gaussian_matrix, MonteCarloError, RngStream};
use crate::parametrization::{resolve, Parametrization, ParametrizationError};
use crate::zipf::{sample_token, TokenDistribution};
use ndarray::{Array1, Array2};
use std::io;

/// Loss value at or above which a run is declared diverged.
pub const DIVERGENCE_LOSS: f64 = 1e12;

/// Errors from model construction and training.
#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    MonteCarlo(#[from] MonteCarloError),
    #[error(transparent)]
    Parametrization(#[from] ParametrizationError),
    #[error("distribution covers {dist_m} tokens but the model has {model_m}")]
    VocabularyMismatch { dist_m: usize, model_m: usize },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

/// Embedding matrix E (m x d), projection matrix W (d x m), and the init
/// scales they were drawn with.
#[derive(Debug, Clone)]
pub struct ModelState {
    e: Array2<f64>,
    w: Array2<f64>,
    m: usize,
    d: usize,
    sigma_e: f64,
    sigma_w: f64,
}

impl ModelState {
    /// Wraps explicit matrices, checking shape consistency and finiteness.
    pub fn from_parts(e: Array2<f64>, w: Array2<f64>, sigma_e: f64, sigma_w: f64) -> Self {
        let (m, d) = e.dim();
        assert_eq!(
            w.dim(),
            (d, m),
            "W must be d x m transposed-shape of E (m x d)"
        );
        assert!(
            e.iter().chain(w.iter()).all(|x| x.is_finite()),
            "model entries must be finite"
        );
        ModelState {
            e,
            w,
            m,
            d,
            sigma_e,
            sigma_w,
        }
    }

    pub fn e(&self) -> &Array2<f64> {
        &self.e
    }

    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn vocab_size(&self) -> usize {
        self.m
    }

    pub fn width(&self) -> usize {
        self.d
    }

    pub fn sigma_e(&self) -> f64 {
        self.sigma_e
    }

    pub fn sigma_w(&self) -> f64 {
        self.sigma_w
    }
}

/// Target matrix Z, one row per token.
#[derive(Debug, Clone)]
pub struct Targets {
    z: Array2<f64>,
}

impl Targets {
    /// Wraps an explicit m x m target matrix.
    pub fn from_matrix(z: Array2<f64>) -> Self {
        assert_eq!(z.nrows(), z.ncols(), "target matrix must be square");
        Targets { z }
    }

    pub fn z(&self) -> &Array2<f64> {
        &self.z
    }
}

/// Gradients with respect to E (m x d) and W (d x m).
#[derive(Debug, Clone)]
pub struct GradientPair {
    pub d_e: Array2<f64>,
    pub d_w: Array2<f64>,
}

/// Which constant-factor convention the gradients carry.
///
/// `TrueDerivative` is the exact derivative of `population_loss`, including
/// the 1/m factor from the (2m)^-1 loss normalization. `RawResidual` drops
/// that factor, giving dE = D_a (EW - Z) W' and dW = E' D_a (EW - Z);
/// sign-based optimizers are unaffected since the factor is positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    TrueDerivative,
    RawResidual,
}

/// Draws E and W with i.i.d. Gaussian entries of the given scales.
///
/// Consumes stream ids `rng` and `rng+1` (E then W).
pub fn init_model(
    m: usize,
    d: usize,
    sigma_e: f64,
    sigma_w: f64,
    rng: &RngStream,
) -> Result<ModelState, ModelError> {
    let e = gaussian_matrix(m, d, sigma_e, rng)?;
    let w = gaussian_matrix(d, m, sigma_w, &rng.substream(1))?;
    Ok(ModelState {
        e,
        w,
        m,
        d,
        sigma_e,
        sigma_w,
    })
}

/// Random-signal-at-initialization targets: Z = EW - G with G i.i.d.
/// standard Gaussian, so the initial residual EW - Z equals G exactly.
pub fn make_targets(state: &ModelState, rng: &RngStream) -> Result<Targets, ModelError> {
    let mut z = matmul_nn(&state.e.view(), &state.w.view());
    let g = gaussian_matrix(state.m, state.m, 1.0, rng)?;
    z -= &g;
    Ok(Targets { z })
}

/// Noiseless testing hook: Z = EW, so the loss is exactly zero at init.
pub fn make_targets_noiseless(state: &ModelState) -> Targets {
    Targets {
        z: matmul_nn(&state.e.view(), &state.w.view()),
    }
}

/// Output vector for one token: E_i W, the lookup row projected.
///
/// Panics when `token` is outside 1..=m.
pub fn forward(state: &ModelState, token: usize) -> Array1<f64> {
    assert!(
        token >= 1 && token <= state.m,
        "token {token} outside 1..={}",
        state.m
    );
    state.e.row(token - 1).dot(&state.w)
}

fn residual(state: &ModelState, targets: &Targets) -> Array2<f64> {
    let mut r = matmul_nn(&state.e.view(), &state.w.view());
    r -= &targets.z;
    r
}

fn loss_of_residual(r: &Array2<f64>, weights: &[f64]) -> f64 {
    let m = r.ncols() as f64;
    let mut loss = 0.0;
    for (row, &w) in r.rows().into_iter().zip(weights) {
        let sq: f64 = row.iter().map(|x| x * x).sum();
        loss += w * sq;
    }
    loss / (2.0 * m)
}

/// Shares one residual computation between the loss and both gradients.
fn gradients_and_loss(
    state: &ModelState,
    weights: &[f64],
    targets: &Targets,
    mode: GradientMode,
) -> (GradientPair, f64) {
    assert_eq!(
        weights.len(),
        state.m,
        "weight vector must cover the vocabulary"
    );
    let mut r = residual(state, targets);
    let loss = loss_of_residual(&r, weights);
    let scale = match mode {
        GradientMode::TrueDerivative => 1.0 / state.m as f64,
        GradientMode::RawResidual => 1.0,
    };
    for (mut row, &w) in r.rows_mut().into_iter().zip(weights) {
        row.mapv_inplace(|x| x * w * scale);
    }
    let d_e = matmul_nt(&r.view(), &state.w.view());
    let d_w = matmul_tn(&state.e.view(), &r.view());
    (GradientPair { d_e, d_w }, loss)
}

/// Population loss sum_i alpha_i (2m)^-1 ||E_i W - z_i||^2.
pub fn population_loss(state: &ModelState, dist: &TokenDistribution, targets: &Targets) -> f64 {
    assert_eq!(
        dist.vocab_size(),
        state.m,
        "distribution must cover the vocabulary"
    );
    loss_of_residual(&residual(state, targets), dist.alphas())
}

/// Gradients under an arbitrary nonnegative weight diagonal D_w, without
/// requiring the weights to be normalized frequencies.
pub fn weighted_gradients(
    state: &ModelState,
    weights: &[f64],
    targets: &Targets,
    mode: GradientMode,
) -> GradientPair {
    gradients_and_loss(state, weights, targets, mode).0
}

/// Population-frequency gradients: dE = m^-1 D_a (EW - Z) W' and
/// dW = m^-1 E' D_a (EW - Z), the exact derivatives of `population_loss`.
pub fn infinite_batch_gradients(
    state: &ModelState,
    dist: &TokenDistribution,
    targets: &Targets,
) -> GradientPair {
    infinite_batch_gradients_mode(state, dist, targets, GradientMode::TrueDerivative)
}

/// As `infinite_batch_gradients` with an explicit constant-factor mode.
pub fn infinite_batch_gradients_mode(
    state: &ModelState,
    dist: &TokenDistribution,
    targets: &Targets,
    mode: GradientMode,
) -> GradientPair {
    assert_eq!(
        dist.vocab_size(),
        state.m,
        "distribution must cover the vocabulary"
    );
    weighted_gradients(state, dist.alphas(), targets, mode)
}

/// Gradients with empirical frequencies from N multinomial token draws.
pub fn finite_batch_gradients(
    state: &ModelState,
    dist: &TokenDistribution,
    targets: &Targets,
    n: usize,
    rng: &RngStream,
) -> GradientPair {
    assert!(n >= 1, "batch size must be at least 1");
    assert_eq!(
        dist.vocab_size(),
        state.m,
        "distribution must cover the vocabulary"
    );
    let mut gen = rng.rng();
    let mut counts = vec![0usize; state.m];
    for _ in 0..n {
        counts[sample_token(dist, &mut gen) - 1] += 1;
    }
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    weighted_gradients(state, &weights, targets, GradientMode::TrueDerivative)
}

/// Entrywise sign with ties at zero mapped to +1.
pub fn sign_map(m: &Array2<f64>) -> Array2<f64> {
    m.mapv(|x| if x >= 0.0 { 1.0 } else { -1.0 })
}

/// Optimizer family: sign descent, Adam, or plain gradient descent.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SignSgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
    Sgd,
}

impl OptimizerKind {
    /// Adam with the community-standard moments (0.9, 0.999, 1e-8).
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct AdamMoments {
    m_e: Array2<f64>,
    v_e: Array2<f64>,
    m_w: Array2<f64>,
    v_w: Array2<f64>,
}

/// Optimizer kind plus per-parameter moment state for Adam.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    moments: Option<AdamMoments>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        if let OptimizerKind::Adam {
            beta1,
            beta2,
            epsilon,
        } = kind
        {
            assert!(
                (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2),
                "Adam betas must lie in [0, 1)"
            );
            assert!(epsilon > 0.0, "Adam epsilon must be positive");
        }
        Optimizer {
            kind,
            moments: None,
            t: 0,
        }
    }

    /// Applies one update in place: SignSGD subtracts eta times the gradient
    /// sign, SGD subtracts eta times the gradient, Adam applies the
    /// bias-corrected element-wise normalized update.
    pub fn step(
        &mut self,
        state: &mut ModelState,
        grads: &GradientPair,
        eta_e: f64,
        eta_w: f64,
    ) {
        assert_eq!(
            grads.d_e.dim(),
            state.e.dim(),
            "gradient shape must match E"
        );
        assert_eq!(
            grads.d_w.dim(),
            state.w.dim(),
            "gradient shape must match W"
        );
        match self.kind {
            OptimizerKind::SignSgd => {
                apply_sign(&mut state.e, &grads.d_e, eta_e);
                apply_sign(&mut state.w, &grads.d_w, eta_w);
            }
            OptimizerKind::Sgd => {
                state.e.scaled_add(-eta_e, &grads.d_e);
                state.w.scaled_add(-eta_w, &grads.d_w);
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let mom = self.moments.get_or_insert_with(|| AdamMoments {
                    m_e: Array2::zeros(grads.d_e.dim()),
                    v_e: Array2::zeros(grads.d_e.dim()),
                    m_w: Array2::zeros(grads.d_w.dim()),
                    v_w: Array2::zeros(grads.d_w.dim()),
                });
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                adam_update(
                    &mut state.e,
                    &grads.d_e,
                    &mut mom.m_e,
                    &mut mom.v_e,
                    beta1,
                    beta2,
                    epsilon,
                    eta_e,
                    c1,
                    c2,
                );
                adam_update(
                    &mut state.w,
                    &grads.d_w,
                    &mut mom.m_w,
                    &mut mom.v_w,
                    beta1,
                    beta2,
                    epsilon,
                    eta_w,
                    c1,
                    c2,
                );
            }
        }
    }
}

fn apply_sign(param: &mut Array2<f64>, grad: &Array2<f64>, eta: f64) {
    ndarray::Zip::from(param).and(grad).for_each(|p, &g| {
        *p -= eta * if g >= 0.0 { 1.0 } else { -1.0 };
    });
}

#[allow(clippy::too_many_arguments)]
fn adam_update(
    param: &mut Array2<f64>,
    grad: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    eta: f64,
    bias1: f64,
    bias2: f64,
) {
    ndarray::Zip::from(param)
        .and(grad)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= eta * m_hat / (v_hat.sqrt() + epsilon);
        });
}

/// Hyperparameters for a training run: either a parametrization preset
/// resolved at the run's width, or explicit values. The embedding role maps
/// to E and the output role to W.
#[derive(Debug, Clone)]
pub enum HpSpec {
    Preset {
        param: Parametrization,
        base_eta: f64,
    },
    Explicit {
        sigma_e: f64,
        sigma_w: f64,
        eta_e: f64,
        eta_w: f64,
    },
}

impl HpSpec {
    /// (sigma_e, sigma_w, eta_e, eta_w) at width `d`.
    pub fn resolve(&self, d: usize) -> Result<(f64, f64, f64, f64), ModelError> {
        match self {
            HpSpec::Preset { param, base_eta } => {
                let hp = resolve(param, d, *base_eta)?;
                Ok((hp.sigma_e, hp.sigma_w_out, hp.eta_e, hp.eta_w_out))
            }
            HpSpec::Explicit {
                sigma_e,
                sigma_w,
                eta_e,
                eta_w,
            } => Ok((*sigma_e, *sigma_w, *eta_e, *eta_w)),
        }
    }
}

/// Configuration for one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub dist: TokenDistribution,
    pub d: usize,
    pub hp: HpSpec,
    pub optimizer: OptimizerKind,
    pub steps: usize,
    pub rng: RngStream,
}

/// Loss trajectory of a run: `losses[t]` is the population loss after t
/// steps (entry 0 is the initial loss). After a divergence is detected the
/// run stops and remaining entries hold the +infinity sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub losses: Vec<f64>,
    pub diverged: bool,
}

impl Trajectory {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("trajectory is never empty")
    }
}

/// Trains for `steps` SignSGD/Adam/SGD updates on infinite-batch gradients,
/// recording the population loss at every step.
///
/// Consumes stream ids `rng..rng+2` (E, W, targets). Divergence (loss above
/// the 1e12 sentinel threshold or non-finite) flags the trajectory and fills
/// the remaining entries with +infinity rather than failing.
pub fn train(config: &TrainConfig) -> Result<Trajectory, ModelError> {
    let m = config.dist.vocab_size();
    let (sigma_e, sigma_w, eta_e, eta_w) = config.hp.resolve(config.d)?;
    let mut state = init_model(m, config.d, sigma_e, sigma_w, &config.rng)?;
    let targets = make_targets(&state, &config.rng.substream(2))?;
    let mut opt = Optimizer::new(config.optimizer);
    let weights = config.dist.alphas();

    let mut losses = Vec::with_capacity(config.steps + 1);
    let mut diverged = false;
    losses.push(loss_of_residual(&residual(&state, &targets), weights));
    for _ in 0..config.steps {
        if diverged {
            losses.push(f64::INFINITY);
            continue;
        }
        let (grads, _) =
            gradients_and_loss(&state, weights, &targets, GradientMode::TrueDerivative);
        opt.step(&mut state, &grads, eta_e, eta_w);
        let loss = loss_of_residual(&residual(&state, &targets), weights);
        if !loss.is_finite() || loss >= DIVERGENCE_LOSS {
            diverged = true;
            losses.push(f64::INFINITY);
        } else {
            losses.push(loss);
        }
    }
    if let Some(last) = losses.last_mut() {
        if diverged {
            *last = f64::INFINITY;
        }
    }
    Ok(Trajectory { losses, diverged })
}

/// Writes a trajectory as CSV with header `step,loss,diverged`; the
/// diverged column marks sentinel rows.
pub fn write_trajectory_csv<W: io::Write>(traj: &Trajectory, out: &mut W) -> io::Result<()> {
    writeln!(out, "step,loss,diverged")?;
    for (t, &loss) in traj.losses.iter().enumerate() {
        let flagged = !loss.is_finite() || loss >= DIVERGENCE_LOSS;
        writeln!(out, "{t},{loss},{flagged}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montecarlo::Estimate;
    use crate::zipf::zipf_distribution;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn stream(id: u64) -> RngStream {
        RngStream::new(2024, id)
    }

    fn dist(m: usize) -> TokenDistribution {
        zipf_distribution(m, 1.0).expect("zipf distribution")
    }

    #[test]
    fn zero_sigma_init_gives_zero_outputs() {
        let state = init_model(4, 3, 0.0, 0.0, &stream(0)).unwrap();
        for token in 1..=4 {
            assert!(forward(&state, token).iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn init_entry_variance_matches_sigma() {
        let state = init_model(512, 64, 1.0, 1.0, &stream(1)).unwrap();
        let n = (512 * 64) as f64;
        let mean = state.e().sum() / n;
        let var = state.e().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        assert!(
            (var - 1.0).abs() < 0.02,
            "E entry variance {var} deviates more than 2% from 1"
        );
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_model(32, 8, 0.5, 0.25, &stream(2)).unwrap();
        let b = init_model(32, 8, 0.5, 0.25, &stream(2)).unwrap();
        assert_eq!(a.e(), b.e());
        assert_eq!(a.w(), b.w());
        assert_ne!(a.e().as_slice(), b.w().t().to_owned().as_slice());
    }

    #[test]
    fn targets_leave_standard_gaussian_residual() {
        let m = 512;
        let state = init_model(m, 16, 1.0, 1.0, &stream(3)).unwrap();
        let targets = make_targets(&state, &stream(77)).unwrap();
        let r = residual(&state, &targets);
        let n = (m * m) as f64;
        let mean = r.sum() / n;
        let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        assert!(
            mean.abs() < 4.0 / m as f64,
            "residual mean {mean} exceeds 4/m"
        );
        assert!(
            (var - 1.0).abs() < 0.02,
            "residual variance {var} deviates more than 2% from 1"
        );
    }

    #[test]
    fn noiseless_targets_give_zero_loss() {
        let state = init_model(16, 4, 1.0, 1.0, &stream(4)).unwrap();
        let targets = make_targets_noiseless(&state);
        let dist = zipf_distribution(16, 1.0).unwrap();
        assert_eq!(population_loss(&state, &dist, &targets), 0.0);
    }

    #[test]
    fn forward_is_lookup_projection() {
        let state = ModelState::from_parts(array![[2.0]], array![[3.0]], 1.0, 1.0);
        assert_eq!(forward(&state, 1)[0], 6.0);
    }

    #[test]
    fn forward_matches_one_hot_product() {
        let mut gen = stream(5).rng();
        for case in 0..100 {
            let m = 2 + (crate::montecarlo::uniform01(&mut gen) * 14.0) as usize;
            let d = 1 + (crate::montecarlo::uniform01(&mut gen) * 7.0) as usize;
            let token = 1 + (crate::montecarlo::uniform01(&mut gen) * m as f64) as usize;
            let token = token.min(m);
            let state = init_model(m, d, 1.0, 1.0, &stream(100 + case)).unwrap();
            let mut one_hot = Array1::zeros(m);
            one_hot[token - 1] = 1.0;
            let expected = one_hot.dot(state.e()).dot(state.w());
            let got = forward(&state, token);
            for (a, b) in got.iter().zip(expected.iter()) {
                assert_relative_eq!(a, b, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn zero_embedding_row_gives_zero_output() {
        let mut state = init_model(8, 4, 1.0, 1.0, &stream(6)).unwrap();
        state.e.row_mut(2).fill(0.0);
        assert!(forward(&state, 3).iter().all(|&x| x == 0.0));
    }

    #[test]
    #[should_panic(expected = "outside")]
    fn forward_rejects_out_of_range_token() {
        let state = init_model(4, 2, 1.0, 1.0, &stream(7)).unwrap();
        forward(&state, 5);
    }

    #[test]
    fn single_token_loss_is_half_square() {
        let state = ModelState::from_parts(array![[2.0]], array![[3.0]], 1.0, 1.0);
        let targets = Targets::from_matrix(array![[6.0 - 0.4]]);
        let d1 = dist(1);
        assert_relative_eq!(
            population_loss(&state, &d1, &targets),
            0.4 * 0.4 / 2.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn assumption_two_loss_concentrates_at_half() {
        let m = 128;
        let dist = dist(m);
        let mut est = Estimate::new();
        for trial in 0..200 {
            let state = init_model(m, 32, 1.0, 1.0, &stream(300 + trial)).unwrap();
            let targets = make_targets(&state, &stream(600 + trial)).unwrap();
            est.accumulate(population_loss(&state, &dist, &targets))
                .unwrap();
        }
        let dev = (est.mean() - 0.5).abs();
        assert!(
            dev <= 3.0 * est.standard_error(),
            "mean loss {} deviates from 1/2 by {dev}, over 3 SE = {}",
            est.mean(),
            3.0 * est.standard_error()
        );
    }

    #[test]
    fn gradient_rows_match_per_token_formula() {
        let m = 12;
        let d = 5;
        let dist = zipf_distribution(m, 1.0).unwrap();
        let state = init_model(m, d, 1.0, 1.0, &stream(8)).unwrap();
        let targets = make_targets(&state, &stream(9)).unwrap();
        let grads = infinite_batch_gradients(&state, &dist, &targets);
        let r = residual(&state, &targets);
        for i in 0..m {
            let expected = r.row(i).dot(&state.w().t()) * (dist.alpha(i + 1) / m as f64);
            for (a, b) in grads.d_e.row(i).iter().zip(expected.iter()) {
                assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn zero_weight_token_gets_zero_gradient_row() {
        let m = 6;
        let state = init_model(m, 3, 1.0, 1.0, &stream(10)).unwrap();
        let targets = make_targets(&state, &stream(11)).unwrap();
        let mut weights = vec![1.0 / m as f64; m];
        weights[4] = 0.0;
        let grads = weighted_gradients(&state, &weights, &targets, GradientMode::TrueDerivative);
        assert!(grads.d_e.row(4).iter().all(|&x| x == 0.0));
        assert!(grads.d_e.row(0).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn raw_residual_mode_scales_by_vocab_size() {
        let m = 10;
        let dist = zipf_distribution(m, 1.0).unwrap();
        let state = init_model(m, 4, 1.0, 1.0, &stream(12)).unwrap();
        let targets = make_targets(&state, &stream(13)).unwrap();
        let truth = infinite_batch_gradients_mode(
            &state,
            &dist,
            &targets,
            GradientMode::TrueDerivative,
        );
        let raw =
            infinite_batch_gradients_mode(&state, &dist, &targets, GradientMode::RawResidual);
        for (a, b) in raw.d_e.iter().zip(truth.d_e.iter()) {
            assert_relative_eq!(*a, m as f64 * b, max_relative = 1e-12, epsilon = 1e-15);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = 16;
        let d = 8;
        let dist = zipf_distribution(m, 1.0).unwrap();
        let state = init_model(m, d, 1.0, 1.0, &stream(14)).unwrap();
        let targets = make_targets(&state, &stream(15)).unwrap();
        let grads = infinite_batch_gradients(&state, &dist, &targets);
        let h = 1e-6;

        let mut probe = state.clone();
        for i in 0..m {
            for k in 0..d {
                let saved = probe.e[[i, k]];
                probe.e[[i, k]] = saved + h;
                let plus = population_loss(&probe, &dist, &targets);
                probe.e[[i, k]] = saved - h;
                let minus = population_loss(&probe, &dist, &targets);
                probe.e[[i, k]] = saved;
                let fd = (plus - minus) / (2.0 * h);
                assert_relative_eq!(
                    grads.d_e[[i, k]],
                    fd,
                    max_relative = 1e-5,
                    epsilon = 1e-10
                );
            }
        }
        for k in 0..d {
            for j in 0..m {
                let saved = probe.w[[k, j]];
                probe.w[[k, j]] = saved + h;
                let plus = population_loss(&probe, &dist, &targets);
                probe.w[[k, j]] = saved - h;
                let minus = population_loss(&probe, &dist, &targets);
                probe.w[[k, j]] = saved;
                let fd = (plus - minus) / (2.0 * h);
                assert_relative_eq!(
                    grads.d_w[[k, j]],
                    fd,
                    max_relative = 1e-5,
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn frequency_scaling_scales_gradient_row_exactly() {
        let m = 8;
        let state = init_model(m, 4, 1.0, 1.0, &stream(16)).unwrap();
        let targets = make_targets(&state, &stream(17)).unwrap();
        let base: Vec<f64> = (1..=m).map(|i| 1.0 / i as f64).collect();
        let mut scaled = base.clone();
        scaled[3] *= 4.0;
        let g0 = weighted_gradients(&state, &base, &targets, GradientMode::RawResidual);
        let g1 = weighted_gradients(&state, &scaled, &targets, GradientMode::RawResidual);
        for (a, b) in g1.d_e.row(3).iter().zip(g0.d_e.row(3).iter()) {
            assert_eq!(*a, 4.0 * b, "scaled row must scale exactly");
        }
        for (a, b) in g1.d_e.row(0).iter().zip(g0.d_e.row(0).iter()) {
            assert_eq!(a, b, "unscaled rows must not move");
        }
    }

    #[test]
    fn single_draw_batch_touches_one_row() {
        let m = 16;
        let dist = zipf_distribution(m, 1.0).unwrap();
        let state = init_model(m, 4, 1.0, 1.0, &stream(18)).unwrap();
        let targets = make_targets(&state, &stream(19)).unwrap();
        let grads = finite_batch_gradients(&state, &dist, &targets, 1, &stream(20));
        let nonzero_rows = (0..m)
            .filter(|&i| grads.d_e.row(i).iter().any(|&x| x != 0.0))
            .count();
        assert_eq!(nonzero_rows, 1, "one draw must update exactly one row");
    }

    #[test]
    fn finite_batch_is_deterministic() {
        let m = 16;
        let dist = zipf_distribution(m, 1.0).unwrap();
        let state = init_model(m, 4, 1.0, 1.0, &stream(21)).unwrap();
        let targets = make_targets(&state, &stream(22)).unwrap();
        let a = finite_batch_gradients(&state, &dist, &targets, 1000, &stream(23));
        let b = finite_batch_gradients(&state, &dist, &targets, 1000, &stream(23));
        assert_eq!(a.d_e, b.d_e);
        assert_eq!(a.d_w, b.d_w);
    }

    #[test]
    fn large_batch_approaches_infinite_batch() {
        let m = 16;
        let n = 1_000_000usize;
        let dist = zipf_distribution(m, 1.0).unwrap();
        let state = init_model(m, 4, 1.0, 1.0, &stream(24)).unwrap();
        let targets = make_targets(&state, &stream(25)).unwrap();
        let inf = infinite_batch_gradients(&state, &dist, &targets);
        let fin = finite_batch_gradients(&state, &dist, &targets, n, &stream(26));
        for i in 0..m {
            let alpha = dist.alpha(i + 1);
            let se = (alpha * (1.0 - alpha) / n as f64).sqrt();
            for (f, g) in fin.d_e.row(i).iter().zip(inf.d_e.row(i).iter()) {
                let bound = 4.0 * se * (g / alpha).abs() + 1e-12;
                assert!(
                    (f - g).abs() <= bound,
                    "row {i}: |{f} - {g}| exceeds multinomial bound {bound}"
                );
            }
        }
    }

    #[test]
    fn batch_deviation_shrinks_like_root_n() {
        let m = 16;
        let dist = zipf_distribution(m, 1.0).unwrap();
        let state = init_model(m, 4, 1.0, 1.0, &stream(27)).unwrap();
        let targets = make_targets(&state, &stream(28)).unwrap();
        let inf = infinite_batch_gradients(&state, &dist, &targets);
        let mut log_n = Vec::new();
        let mut log_dev = Vec::new();
        let mut prev = f64::INFINITY;
        for (k, &n) in [1_000usize, 10_000, 100_000, 1_000_000].iter().enumerate() {
            let fin = finite_batch_gradients(&state, &dist, &targets, n, &stream(29 + k as u64));
            let dev = fin
                .d_e
                .iter()
                .zip(inf.d_e.iter())
                .chain(fin.d_w.iter().zip(inf.d_w.iter()))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(
                dev < prev,
                "deviation must shrink as the batch grows (n={n}: {dev} vs {prev})"
            );
            prev = dev;
            log_n.push((n as f64).ln());
            log_dev.push(dev.ln());
        }
        let (slope, _, _) = crate::fitting::linear_fit(&log_n, &log_dev);
        assert!(
            (slope + 0.5).abs() <= 0.15,
            "batch-noise decay slope {slope} outside -0.5 +/- 0.15"
        );
    }

    #[test]
    fn sign_map_ties_and_idempotence() {
        let m = array![[0.0, -3.2], [1.5, -0.0]];
        let s = sign_map(&m);
        assert_eq!(s, array![[1.0, -1.0], [1.0, 1.0]]);
        assert_eq!(sign_map(&s), s);
    }

    #[test]
    fn signsgd_step_moves_entries_by_eta() {
        let mut state = init_model(4, 3, 1.0, 1.0, &stream(30)).unwrap();
        let before = state.e().clone();
        let grads = GradientPair {
            d_e: Array2::from_elem((4, 3), 2.5),
            d_w: Array2::from_elem((3, 4), 2.5),
        };
        let mut opt = Optimizer::new(OptimizerKind::SignSgd);
        opt.step(&mut state, &grads, 0.1, 0.2);
        for (a, b) in state.e().iter().zip(before.iter()) {
            assert_eq!(*a, b - 0.1, "every E entry must decrease by exactly eta");
        }
    }

    #[test]
    fn sgd_with_zero_eta_is_identity() {
        let mut state = init_model(4, 3, 1.0, 1.0, &stream(31)).unwrap();
        let before = state.clone();
        let grads = infinite_batch_gradients(
            &state,
            &dist(4),
            &make_targets(&state, &stream(32)).unwrap(),
        );
        let mut opt = Optimizer::new(OptimizerKind::Sgd);
        opt.step(&mut state, &grads, 0.0, 0.0);
        assert_eq!(state.e(), before.e());
        assert_eq!(state.w(), before.w());
    }

    #[test]
    fn memoryless_adam_matches_sign_direction() {
        let mut adam_state = init_model(6, 4, 1.0, 1.0, &stream(33)).unwrap();
        let mut sign_state = adam_state.clone();
        let targets = make_targets(&adam_state, &stream(34)).unwrap();
        let grads = infinite_batch_gradients(&adam_state, &dist(6), &targets);
        assert!(grads.d_e.iter().all(|&g| g != 0.0), "test needs nonzero gradients");

        let mut adam = Optimizer::new(OptimizerKind::Adam {
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 1e-300,
        });
        adam.step(&mut adam_state, &grads, 0.05, 0.05);
        let mut sign = Optimizer::new(OptimizerKind::SignSgd);
        sign.step(&mut sign_state, &grads, 0.05, 0.05);
        for (a, b) in adam_state.e().iter().zip(sign_state.e().iter()) {
            assert_relative_eq!(a, b, max_relative = 1e-9);
        }
    }

    #[test]
    fn zero_eta_training_is_flat() {
        let dist = zipf_distribution(8, 1.0).unwrap();
        let traj = train(&TrainConfig {
            dist,
            d: 4,
            hp: HpSpec::Explicit {
                sigma_e: 1.0,
                sigma_w: 1.0,
                eta_e: 0.0,
                eta_w: 0.0,
            },
            optimizer: OptimizerKind::SignSgd,
            steps: 10,
            rng: stream(35),
        })
        .unwrap();
        assert_eq!(traj.losses.len(), 11);
        assert!(!traj.diverged);
        for &l in &traj.losses {
            assert_eq!(l, traj.losses[0], "zero LR must leave the loss unchanged");
        }
    }

    #[test]
    fn small_sgd_descends_monotonically() {
        let dist = zipf_distribution(16, 1.0).unwrap();
        let traj = train(&TrainConfig {
            dist,
            d: 8,
            hp: HpSpec::Explicit {
                sigma_e: 1.0,
                sigma_w: 1.0,
                eta_e: 0.05,
                eta_w: 0.05,
            },
            optimizer: OptimizerKind::Sgd,
            steps: 50,
            rng: stream(36),
        })
        .unwrap();
        assert!(!traj.diverged);
        for t in 1..=50 {
            assert!(
                traj.losses[t] < traj.losses[t - 1],
                "SGD loss must decrease at step {t}: {} vs {}",
                traj.losses[t],
                traj.losses[t - 1]
            );
        }
    }

    #[test]
    fn huge_eta_is_flagged_divergent_with_sentinel() {
        let dist = zipf_distribution(8, 1.0).unwrap();
        let traj = train(&TrainConfig {
            dist,
            d: 4,
            hp: HpSpec::Explicit {
                sigma_e: 1.0,
                sigma_w: 1.0,
                eta_e: 1e8,
                eta_w: 1e8,
            },
            optimizer: OptimizerKind::SignSgd,
            steps: 10,
            rng: stream(37),
        })
        .unwrap();
        assert!(traj.diverged, "1e8 LR must diverge");
        assert_eq!(traj.losses.len(), 11);
        assert_eq!(traj.final_loss(), f64::INFINITY);
    }

    #[test]
    fn training_is_deterministic() {
        let config = TrainConfig {
            dist: zipf_distribution(16, 1.0).unwrap(),
            d: 8,
            hp: HpSpec::Preset {
                param: crate::parametrization::preset("LVP").unwrap(),
                base_eta: 0.1,
            },
            optimizer: OptimizerKind::SignSgd,
            steps: 20,
            rng: stream(38),
        };
        let a = train(&config).unwrap();
        let b = train(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adam_training_reduces_loss() {
        let dist = zipf_distribution(16, 1.0).unwrap();
        let traj = train(&TrainConfig {
            dist,
            d: 8,
            hp: HpSpec::Explicit {
                sigma_e: 1.0,
                sigma_w: 1.0,
                eta_e: 0.01,
                eta_w: 0.01,
            },
            optimizer: OptimizerKind::adam_default(),
            steps: 100,
            rng: stream(39),
        })
        .unwrap();
        assert!(!traj.diverged);
        assert!(
            traj.final_loss() < 0.5 * traj.losses[0],
            "Adam should at least halve the loss: {} -> {}",
            traj.losses[0],
            traj.final_loss()
        );
    }

    #[test]
    fn trajectory_csv_has_header_and_flags() {
        let traj = Trajectory {
            losses: vec![0.5, 0.25, f64::INFINITY],
            diverged: true,
        };
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,loss,diverged");
        assert_eq!(lines[1], "0,0.5,false");
        assert_eq!(lines[2], "1,0.25,false");
        assert_eq!(lines[3], "2,inf,true");
    }
}
