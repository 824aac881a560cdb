//! Relative-belief inference over a finite (or gridded) hypothesis set.
//!
//! Likelihoods are handled in natural-log space throughout; profile
//! likelihoods of realistic datasets sit far below `f64` underflow, so only
//! ratios are ever exponentiated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `|log RB| <= INCONCLUSIVE_LOG_TOL` is the inconclusive case `RB = 1`.
pub const INCONCLUSIVE_LOG_TOL: f64 = 1e-12;

const PRIOR_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSet {
    labels: Vec<f64>,
    priors: Vec<f64>,
}

impl HypothesisSet {
    pub fn new(labels: Vec<f64>, priors: Vec<f64>) -> Result<Self> {
        if labels.is_empty() || labels.len() != priors.len() {
            return Err(Error::InvalidArgument("labels and priors must be nonempty and equally long".into()));
        }
        if labels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("labels must be strictly increasing".into()));
        }
        if priors.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument("priors must be strictly positive".into()));
        }
        let sum: f64 = priors.iter().sum();
        if (sum - 1.0).abs() > PRIOR_SUM_TOL {
            return Err(Error::InvalidArgument(format!("priors sum to {sum}")));
        }
        Ok(Self { labels, priors })
    }

    /// Normalizes arbitrary positive weights into priors.
    pub fn from_weights(labels: Vec<f64>, weights: &[f64]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::InvalidArgument("prior weights must have positive sum".into()));
        }
        Self::new(labels, weights.iter().map(|w| w / sum).collect())
    }

    pub fn uniform(labels: Vec<f64>) -> Result<Self> {
        let w = vec![1.0; labels.len()];
        Self::from_weights(labels, &w)
    }

    /// Prior proportional to `exp(-((label - center) / width)^2)`.
    pub fn gaussian(labels: Vec<f64>, center: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::InvalidArgument("gaussian prior width must be positive".into()));
        }
        let w: Vec<f64> = labels.iter().map(|x| (-((x - center) / width).powi(2)).exp()).collect();
        Self::from_weights(labels, &w)
    }

    pub fn from_counts(labels: &[usize], priors: Vec<f64>) -> Result<Self> {
        Self::new(labels.iter().map(|&l| l as f64).collect(), priors)
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Natural-log likelihood per hypothesis; `-inf` marks an exactly zero likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLikelihoods(pub Vec<f64>);

impl LogLikelihoods {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    fn check(&self, hyps_len: usize) -> Result<()> {
        if self.0.len() != hyps_len {
            return Err(Error::DimensionMismatch(format!(
                "{} log-likelihoods for {} hypotheses",
                self.0.len(),
                hyps_len
            )));
        }
        if self.0.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::InvalidArgument("log-likelihoods must be finite or -inf".into()));
        }
        if self.0.iter().all(|v| *v == f64::NEG_INFINITY) {
            return Err(Error::ZeroEvidence);
        }
        Ok(())
    }
}

/// `log sum_k pr(k) L_k`.
fn log_evidence(priors: &[f64], ll: &[f64]) -> f64 {
    let m = ll.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = priors.iter().zip(ll).map(|(p, l)| p * (l - m).exp()).sum();
    m + s.ln()
}

/// `log RB(k) = log L_k - log sum_k' pr(k') L_k'`, snapped to zero inside the
/// inconclusive band.
pub fn log_rb_ratios(hyps: &HypothesisSet, ll: &LogLikelihoods) -> Result<Vec<f64>> {
    ll.check(hyps.len())?;
    let z = log_evidence(&hyps.priors, &ll.0);
    Ok(ll
        .0
        .iter()
        .map(|l| {
            let v = l - z;
            if v.abs() <= INCONCLUSIVE_LOG_TOL {
                0.0
            } else {
                v
            }
        })
        .collect())
}

pub fn rb_ratios(hyps: &HypothesisSet, ll: &LogLikelihoods) -> Result<Vec<f64>> {
    Ok(log_rb_ratios(hyps, ll)?.into_iter().map(f64::exp).collect())
}

pub fn posterior(hyps: &HypothesisSet, ll: &LogLikelihoods) -> Result<Vec<f64>> {
    ll.check(hyps.len())?;
    let z = log_evidence(&hyps.priors, &ll.0);
    let post: Vec<f64> = hyps.priors.iter().zip(&ll.0).map(|(p, l)| p * (l - z).exp()).collect();
    let s: f64 = post.iter().sum();
    Ok(post.into_iter().map(|p| p / s).collect())
}

/// `E(k)`: posterior mass of the other hypotheses whose RB does not exceed `RB(k)`.
pub fn evidence_strength(report: &RbReport) -> Vec<f64> {
    evidence_from(&report.log_rb, &report.posteriors)
}

fn evidence_from(log_rb: &[f64], posteriors: &[f64]) -> Vec<f64> {
    (0..log_rb.len())
        .map(|k| (0..log_rb.len()).filter(|&j| j != k && log_rb[j] <= log_rb[k]).map(|j| posteriors[j]).sum())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbReport {
    pub posteriors: Vec<f64>,
    pub rb_ratios: Vec<f64>,
    pub log_rb: Vec<f64>,
    pub evidence: Vec<f64>,
    /// `RB(k) > 1`.
    pub plausible: Vec<bool>,
    /// Plausible hypothesis of smallest likelihood.
    pub k_eff: Option<usize>,
}

impl RbReport {
    pub fn compute(hyps: &HypothesisSet, ll: &LogLikelihoods) -> Result<Self> {
        Self::from_ratios_posteriors(log_rb_ratios(hyps, ll)?, posterior(hyps, ll)?)
    }

    /// Builds a report from explicit RB values and posteriors.
    pub fn from_parts(rb_ratios: Vec<f64>, posteriors: Vec<f64>) -> Result<Self> {
        if rb_ratios.len() != posteriors.len() {
            return Err(Error::DimensionMismatch("rb ratios vs posteriors".into()));
        }
        Self::from_ratios_posteriors(rb_ratios.iter().map(|r| r.ln()).collect(), posteriors)
    }

    fn from_ratios_posteriors(log_rb: Vec<f64>, posteriors: Vec<f64>) -> Result<Self> {
        let plausible: Vec<bool> = log_rb.iter().map(|&v| v > 0.0).collect();
        let k_eff = (0..log_rb.len())
            .filter(|&k| plausible[k])
            .min_by(|&a, &b| log_rb[a].total_cmp(&log_rb[b]).then(a.cmp(&b)));
        let evidence = evidence_from(&log_rb, &posteriors);
        Ok(Self { rb_ratios: log_rb.iter().map(|v| v.exp()).collect(), log_rb, posteriors, evidence, plausible, k_eff })
    }

    /// Index of the smallest-label plausible hypothesis.
    pub fn smallest_plausible(&self) -> Option<usize> {
        self.plausible.iter().position(|&p| p)
    }

    pub fn len(&self) -> usize {
        self.posteriors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posteriors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlausibleInterval {
    pub delta: usize,
    pub members: Vec<f64>,
    pub size_prior: f64,
    pub credibility: f64,
}

/// Hypotheses ranked by increasing likelihood, ties broken by original index.
pub fn likelihood_order(report: &RbReport) -> Vec<usize> {
    let mut order: Vec<usize> = (0..report.len()).collect();
    order.sort_by(|&a, &b| report.log_rb[a].total_cmp(&report.log_rb[b]).then(a.cmp(&b)));
    order
}

/// `{y_keff, ..., y_keff+delta}` in likelihood order, clipped at the end.
pub fn plausible_interval(hyps: &HypothesisSet, report: &RbReport, delta: usize) -> Result<PlausibleInterval> {
    if report.len() != hyps.len() {
        return Err(Error::DimensionMismatch("report vs hypotheses".into()));
    }
    let k_eff = report.k_eff.ok_or(Error::NoPlausibleHypothesis)?;
    let order = likelihood_order(report);
    let start = order.iter().position(|&k| k == k_eff).expect("k_eff is a valid index");
    let end = (start + delta).min(order.len() - 1);
    let members_idx = &order[start..=end];
    Ok(PlausibleInterval {
        delta,
        members: members_idx.iter().map(|&k| hyps.labels[k]).collect(),
        size_prior: members_idx.iter().map(|&k| hyps.priors[k]).sum(),
        credibility: members_idx.iter().map(|&k| report.posteriors[k]).sum(),
    })
}

/// Type-I and type-II error probabilities against a set of true labels.
/// `RB = 1` contributes to neither.
pub fn error_probabilities(hyps: &HypothesisSet, report: &RbReport, truth: &[f64]) -> Result<(f64, f64)> {
    if truth.is_empty() {
        return Err(Error::InvalidArgument("truth set is empty".into()));
    }
    if truth.iter().any(|t| !hyps.labels.contains(t)) {
        return Err(Error::InvalidArgument("truth labels must be hypothesis labels".into()));
    }
    let mut eps_i = 0.0;
    let mut eps_ii = 0.0;
    for (k, label) in hyps.labels.iter().enumerate() {
        let lr = report.log_rb[k];
        if truth.contains(label) {
            if lr < 0.0 {
                eps_ii += hyps.priors[k];
            }
        } else if lr > 0.0 {
            eps_i += hyps.priors[k];
        }
    }
    Ok((eps_i, eps_ii))
}

/// Gridded continuous hypotheses; `weights` are prior density times quadrature weight.
#[derive(Debug, Clone, PartialEq)]
pub struct GridHypotheses {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GridHypotheses {
    pub fn new(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::InvalidArgument("grid points and weights must match".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidArgument("grid weights must be positive".into()));
        }
        Ok(Self { points, weights })
    }

    /// Midpoint rule for a density on `[lo, hi]`.
    pub fn midpoint(lo: f64, hi: f64, n: usize, density: impl Fn(f64) -> f64) -> Result<Self> {
        let h = (hi - lo) / n as f64;
        let points: Vec<f64> = (0..n).map(|i| lo + (i as f64 + 0.5) * h).collect();
        let weights = points.iter().map(|&x| density(x) * h).collect();
        Self::new(points, weights)
    }
}

/// `RB(x_i) = L(x_i) / sum_j w_j L(x_j)` with a Riemann-sum denominator.
pub fn rb_continuous(grid: &GridHypotheses, ll: &LogLikelihoods) -> Result<Vec<f64>> {
    ll.check(grid.points.len())?;
    let z = log_evidence(&grid.weights, &ll.0);
    Ok(ll.0.iter().map(|l| (l - z).exp()).collect())
}
