//! Ranked token-frequency distributions and their summary statistics.
//!
//! Frequencies follow a power law in rank, `alpha_i proportional to i^(-a)`,
//! normalized to a probability vector. The module also provides the two
//! quantities the magnitude predictions need — the mean squared frequency
//! and per-token amplification ratios — plus exponent recovery from counts
//! and a boundedness scan of `m * mean_squared_frequency` over vocabulary
//! sizes.

use crate::fitting::linear_fit;
use crate::montecarlo::{uniform01, RngStream, StreamRng};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

/// Exponents at or below this sit outside the regime where the average
/// squared frequency vanishes with vocabulary size; constructing such a
/// distribution logs a warning but is allowed.
pub const MIN_DECAY_EXPONENT: f64 = 0.5;

/// Minimum number of nonzero ranks required for a meaningful exponent fit.
pub const MIN_FIT_POINTS: usize = 10;

#[derive(Debug, Error)]
pub enum ZipfError {
    #[error("vocabulary size must be at least 1")]
    EmptyVocabulary,
    #[error("exponent must be finite and positive, got {0}")]
    InvalidExponent(f64),
    #[error("need at least {required} nonzero counts for a fit, got {found}")]
    NotEnoughNonzeroCounts { found: usize, required: usize },
    #[error("counts file line {line}: {message}")]
    CountsFile { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A vocabulary of `m` tokens ranked by frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    m: usize,
    exponent: f64,
    alphas: Vec<f64>,
    cumulative: Vec<f64>,
}

/// Moments of a [`TokenDistribution`] used by the magnitude predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyStats {
    /// `(1/m) * sum_k alpha_k^2`.
    pub mean_squared_frequency: f64,
    /// `alpha_i^2 / mean_squared_frequency`, one entry per rank.
    pub amplification: Vec<f64>,
}

/// Build the ranked power-law distribution `alpha_i = i^(-a) / H(m, a)`.
pub fn zipf_distribution(m: usize, a: f64) -> Result<TokenDistribution, ZipfError> {
    if m == 0 {
        return Err(ZipfError::EmptyVocabulary);
    }
    if !a.is_finite() || a <= 0.0 {
        return Err(ZipfError::InvalidExponent(a));
    }
    if a <= MIN_DECAY_EXPONENT {
        log::warn!("frequency exponent a = {a} is at or below {MIN_DECAY_EXPONENT}; average squared frequency no longer vanishes with vocabulary size");
    }
    let mut alphas: Vec<f64> = (1..=m).map(|i| (i as f64).powf(-a)).collect();
    let h: f64 = alphas.iter().sum();
    let mut cumulative = Vec::with_capacity(m);
    let mut acc = 0.0;
    for alpha in alphas.iter_mut() {
        *alpha /= h;
        acc += *alpha;
        cumulative.push(acc);
    }
    Ok(TokenDistribution {
        m,
        exponent: a,
        alphas,
        cumulative,
    })
}

impl TokenDistribution {
    pub fn vocab_size(&self) -> usize {
        self.m
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    /// All frequencies, most frequent first.
    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Frequency of the 1-based token rank.
    pub fn alpha(&self, token: usize) -> f64 {
        assert!(
            (1..=self.m).contains(&token),
            "token rank {token} outside 1..={}",
            self.m
        );
        self.alphas[token - 1]
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }
}

/// Mean squared frequency and per-token amplification ratios.
pub fn frequency_stats(dist: &TokenDistribution) -> FrequencyStats {
    let m = dist.m as f64;
    let mean_squared_frequency = dist.alphas.iter().map(|a| a * a).sum::<f64>() / m;
    let amplification = dist
        .alphas
        .iter()
        .map(|a| a * a / mean_squared_frequency)
        .collect();
    FrequencyStats {
        mean_squared_frequency,
        amplification,
    }
}

/// Scan `m * mean_squared_frequency` over vocabulary sizes.
///
/// In unnormalized mode the frequencies are the raw `i^(-a)` weights, so the
/// scanned value is the partial sum `sum_{i<=m} i^(-2a)`, which stays bounded
/// for `a > 1/2`. In normalized mode the probability frequencies from
/// [`zipf_distribution`] are used instead; the two modes scale differently in
/// `m` once `a < 1`, which is exactly why both are exposed.
pub fn lemma1_scan(a: f64, m_values: &[usize], normalized: bool) -> Result<Vec<(usize, f64)>, ZipfError> {
    if !a.is_finite() || a <= 0.0 {
        return Err(ZipfError::InvalidExponent(a));
    }
    let mut out = Vec::with_capacity(m_values.len());
    for &m in m_values {
        if m == 0 {
            return Err(ZipfError::EmptyVocabulary);
        }
        let value = if normalized {
            let dist = zipf_distribution(m, a)?;
            m as f64 * frequency_stats(&dist).mean_squared_frequency
        } else {
            // m * (1/m) * sum i^(-2a) = the bare partial sum.
            (1..=m).map(|i| (i as f64).powf(-2.0 * a)).sum()
        };
        out.push((m, value));
    }
    Ok(out)
}

/// Recover the decay exponent from token counts.
///
/// Counts are stable-sorted descending (ties keep input order), zero counts
/// dropped, and `log(count)` regressed on `log(rank)`. Returns the negated
/// slope and the r-squared of the fit.
pub fn fit_exponent(counts: &[u64]) -> Result<(f64, f64), ZipfError> {
    let mut sorted: Vec<u64> = counts.iter().copied().filter(|&c| c > 0).collect();
    if sorted.len() < MIN_FIT_POINTS {
        return Err(ZipfError::NotEnoughNonzeroCounts {
            found: sorted.len(),
            required: MIN_FIT_POINTS,
        });
    }
    sorted.sort_by(|a, b| b.cmp(a));
    let log_rank: Vec<f64> = (1..=sorted.len()).map(|r| (r as f64).ln()).collect();
    let log_count: Vec<f64> = sorted.iter().map(|&c| (c as f64).ln()).collect();
    let (slope, _, r_squared) = linear_fit(&log_rank, &log_count);
    Ok((-slope, r_squared))
}

/// Draw one token; `P(rank = i) = alpha_i`. Returns a 1-based rank.
pub fn sample_token(dist: &TokenDistribution, rng: &mut StreamRng) -> usize {
    let u = uniform01(rng);
    let idx = dist.cumulative.partition_point(|&c| c <= u);
    idx.min(dist.m - 1) + 1
}

/// Multinomial counts from `draws` independent tokens.
pub fn sample_counts(dist: &TokenDistribution, draws: u64, stream: &RngStream) -> Vec<u64> {
    let mut counts = vec![0u64; dist.m];
    let mut rng = stream.rng();
    for _ in 0..draws {
        counts[sample_token(dist, &mut rng) - 1] += 1;
    }
    counts
}

/// Parse a token-count file: one `<rank-or-id><TAB><count>` record per line,
/// `#` comments and blank lines ignored. Only the count column is used.
pub fn read_counts(path: &Path) -> Result<Vec<u64>, ZipfError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut counts = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split('\t');
        let _id = fields.next();
        let count_field = fields.next().ok_or_else(|| ZipfError::CountsFile {
            line: idx + 1,
            message: "expected <rank-or-id><TAB><count>".into(),
        })?;
        let count: u64 = count_field
            .trim()
            .parse()
            .map_err(|e| ZipfError::CountsFile {
                line: idx + 1,
                message: format!("invalid count {count_field:?}: {e}"),
            })?;
        counts.push(count);
    }
    Ok(counts)
}

/// Write counts in the same `<rank><TAB><count>` format, ranks 1-based.
pub fn write_counts(path: &Path, counts: &[u64]) -> Result<(), ZipfError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# rank\tcount")?;
    for (i, c) in counts.iter().enumerate() {
        writeln!(out, "{}\t{}", i + 1, c)?;
    }
    out.flush()?;
    Ok(())
}
