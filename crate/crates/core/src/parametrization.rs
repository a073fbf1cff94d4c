//! Width-scaling rules for initialization variance and Adam-family learning
//! rates: SP, MUP, LVP, and the MUP_TEXT variant, resolved to concrete
//! hyperparameters at a given width `d`.
//!
//! Exponents are half-integers stored as an integer count of halves, so
//! `d^e` is evaluated as an exact integer power times at most one square
//! root. For power-of-two widths this keeps resolved learning-rate ratios
//! bit-stable across runs and platforms.

use serde::{Deserialize, Serialize};

/// Errors from preset lookup, config parsing, and resolution.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ParametrizationError {
    #[error("unknown parametrization preset `{0}`")]
    UnknownPreset(String),
    #[error("width must be at least 1")]
    ZeroWidth,
    #[error("base learning rate must be positive and finite, got {0}")]
    InvalidBaseEta(f64),
    #[error("exponent {0} is not a half-integer in [-16, 16]")]
    NotHalfInteger(f64),
}

/// A width exponent restricted to half-integers, stored as `halves / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Exponent {
    halves: i32,
}

impl Exponent {
    pub const ZERO: Exponent = Exponent { halves: 0 };

    /// Exponent `halves / 2`.
    pub fn from_halves(halves: i32) -> Self {
        Exponent { halves }
    }

    /// Integer exponent `n`.
    pub fn integer(n: i32) -> Self {
        Exponent { halves: 2 * n }
    }

    /// Validates that `x` is a representable half-integer.
    pub fn try_from_f64(x: f64) -> Result<Self, ParametrizationError> {
        let doubled = 2.0 * x;
        if !x.is_finite() || doubled.fract() != 0.0 || doubled.abs() > 32.0 {
            return Err(ParametrizationError::NotHalfInteger(x));
        }
        Ok(Exponent {
            halves: doubled as i32,
        })
    }

    /// The exponent as a real number.
    pub fn value(self) -> f64 {
        f64::from(self.halves) / 2.0
    }

    /// Evaluates `d^e` as integer power times optional square root, with a
    /// single terminal reciprocal for negative exponents.
    pub fn apply(self, d: usize) -> f64 {
        let x = d as f64;
        let n = self.halves.unsigned_abs();
        let mut mag = int_pow(x, n / 2);
        if n % 2 == 1 {
            mag *= x.sqrt();
        }
        if self.halves < 0 {
            1.0 / mag
        } else {
            mag
        }
    }
}

impl std::ops::Sub for Exponent {
    type Output = Exponent;

    fn sub(self, rhs: Exponent) -> Exponent {
        Exponent {
            halves: self.halves - rhs.halves,
        }
    }
}

fn int_pow(x: f64, n: u32) -> f64 {
    let mut acc = 1.0;
    for _ in 0..n {
        acc *= x;
    }
    acc
}

/// Scaling rule for one weight role: init variance `d^c`, LR `eta * d^e`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoleRule {
    pub init_variance_exponent: Exponent,
    pub lr_exponent: Exponent,
}

/// A named triple of role rules in (embedding, output, hidden) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Parametrization {
    pub name: String,
    pub embedding: RoleRule,
    pub output: RoleRule,
    pub hidden: RoleRule,
}

fn rule(var_halves: i32, lr_halves: i32) -> RoleRule {
    RoleRule {
        init_variance_exponent: Exponent::from_halves(var_halves),
        lr_exponent: Exponent::from_halves(lr_halves),
    }
}

/// Looks up a shipped preset by name (case-insensitive).
///
/// In (embedding, output, hidden) order:
/// SP has init variances (1, d^-1, d^-1) and LRs (eta, eta, eta);
/// MUP has init variances (1, d^-2, d^-1) and LRs (eta, eta/d, eta/d);
/// LVP has init variances (d^-1, d^-1, d^-1) and LRs
/// (eta/sqrt(d), eta/d, eta/d).
/// MUP_TEXT is MUP with output init variance d^-1 instead of d^-2.
pub fn preset(name: &str) -> Result<Parametrization, ParametrizationError> {
    let canonical = name.trim().to_ascii_uppercase();
    let (embedding, output, hidden) = match canonical.as_str() {
        "SP" => (rule(0, 0), rule(-2, 0), rule(-2, 0)),
        "MUP" => (rule(0, 0), rule(-4, -2), rule(-2, -2)),
        "LVP" => (rule(-2, -1), rule(-2, -2), rule(-2, -2)),
        "MUP_TEXT" => (rule(0, 0), rule(-2, -2), rule(-2, -2)),
        _ => return Err(ParametrizationError::UnknownPreset(name.to_string())),
    };
    Ok(Parametrization {
        name: canonical,
        embedding,
        output,
        hidden,
    })
}

/// Concrete hyperparameters at width `d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedHp {
    pub d: usize,
    pub sigma_e: f64,
    pub sigma_w_out: f64,
    pub sigma_hidden: f64,
    pub eta_e: f64,
    pub eta_w_out: f64,
    pub eta_hidden: f64,
    pub base_eta: f64,
    lr_ratio: f64,
}

impl ResolvedHp {
    /// Embedding-to-hidden learning-rate ratio, evaluated from the exponent
    /// difference so preset identities (sqrt(d) for LVP, d for MUP, 1 for
    /// SP) hold exactly.
    pub fn lr_ratio(&self) -> f64 {
        self.lr_ratio
    }
}

/// Applies a parametrization's exponents at width `d` with base LR constant
/// `base_eta`. Sigma fields are square roots of the resolved variances.
pub fn resolve(
    param: &Parametrization,
    d: usize,
    base_eta: f64,
) -> Result<ResolvedHp, ParametrizationError> {
    if d == 0 {
        return Err(ParametrizationError::ZeroWidth);
    }
    if !base_eta.is_finite() || base_eta <= 0.0 {
        return Err(ParametrizationError::InvalidBaseEta(base_eta));
    }
    let ratio_exponent = param.embedding.lr_exponent - param.hidden.lr_exponent;
    Ok(ResolvedHp {
        d,
        sigma_e: param.embedding.init_variance_exponent.apply(d).sqrt(),
        sigma_w_out: param.output.init_variance_exponent.apply(d).sqrt(),
        sigma_hidden: param.hidden.init_variance_exponent.apply(d).sqrt(),
        eta_e: base_eta * param.embedding.lr_exponent.apply(d),
        eta_w_out: base_eta * param.output.lr_exponent.apply(d),
        eta_hidden: base_eta * param.hidden.lr_exponent.apply(d),
        base_eta,
        lr_ratio: ratio_exponent.apply(d),
    })
}

/// Overridable exponent fields for sweep experiments.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub embedding_lr_exponent: Option<f64>,
    pub output_lr_exponent: Option<f64>,
    pub hidden_lr_exponent: Option<f64>,
    pub embedding_init_exponent: Option<f64>,
    pub output_init_exponent: Option<f64>,
    pub hidden_init_exponent: Option<f64>,
}

/// JSON config fragment selecting a preset, base LR, and optional exponent
/// overrides: `{"parametrization": "LVP", "base_eta": 0.2, "overrides":
/// {"embedding_lr_exponent": -0.5}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametrizationConfig {
    pub parametrization: String,
    pub base_eta: f64,
    #[serde(default)]
    pub overrides: Overrides,
}

impl ParametrizationConfig {
    /// Builds the parametrization with overrides applied and validates the
    /// base LR.
    pub fn build(&self) -> Result<(Parametrization, f64), ParametrizationError> {
        if !self.base_eta.is_finite() || self.base_eta <= 0.0 {
            return Err(ParametrizationError::InvalidBaseEta(self.base_eta));
        }
        let mut param = preset(&self.parametrization)?;
        let o = &self.overrides;
        if let Some(x) = o.embedding_lr_exponent {
            param.embedding.lr_exponent = Exponent::try_from_f64(x)?;
        }
        if let Some(x) = o.output_lr_exponent {
            param.output.lr_exponent = Exponent::try_from_f64(x)?;
        }
        if let Some(x) = o.hidden_lr_exponent {
            param.hidden.lr_exponent = Exponent::try_from_f64(x)?;
        }
        if let Some(x) = o.embedding_init_exponent {
            param.embedding.init_variance_exponent = Exponent::try_from_f64(x)?;
        }
        if let Some(x) = o.output_init_exponent {
            param.output.init_variance_exponent = Exponent::try_from_f64(x)?;
        }
        if let Some(x) = o.hidden_init_exponent {
            param.hidden.init_variance_exponent = Exponent::try_from_f64(x)?;
        }
        Ok((param, self.base_eta))
    }

    /// Convenience: build and resolve at width `d` in one step.
    pub fn resolve(&self, d: usize) -> Result<ResolvedHp, ParametrizationError> {
        let (param, base_eta) = self.build()?;
        resolve(&param, d, base_eta)
    }
}
