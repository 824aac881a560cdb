//! Dimension and interaction-model certification built on relative belief,
//! plus the penalized-likelihood family `I = alpha kappa_d - log L_d`.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{
    log_likelihood_from_probs, profile_likelihoods, sample_multinomial_with, Dataset, MlConfig, ProfileFit,
};
use crate::inference::{
    error_probabilities, plausible_interval, HypothesisSet, LogLikelihoods, PlausibleInterval, RbReport,
};
use crate::linalg::{born_probabilities, DensityMatrix, Povm};
use crate::optimize::{minimize_box, OptimizerConfig};
use crate::rng::SeededRng;

/// Minima of `I` closer than this are equal.
pub const IC_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformationCriterion {
    pub name: String,
    pub alpha: f64,
    pub kappa: Vec<f64>,
}

impl InformationCriterion {
    pub fn new(name: impl Into<String>, alpha: f64, kappa: Vec<f64>) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha must be finite and nonnegative, got {alpha}")));
        }
        if kappa.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("kappa must be strictly increasing".into()));
        }
        Ok(Self { name: name.into(), alpha, kappa })
    }

    pub fn aic(kappa: Vec<f64>) -> Result<Self> {
        Self::new("AIC", 1.0, kappa)
    }

    pub fn bic(kappa: Vec<f64>, n: u64) -> Result<Self> {
        Self::new("BIC", (n as f64).ln() / 2.0, kappa)
    }
}

/// `kappa_d = d^2 - 1`, the free parameters of a `d`-dimensional state.
pub fn kappa_full_tomography(dims: &[usize]) -> Vec<f64> {
    dims.iter().map(|&d| (d * d) as f64 - 1.0).collect()
}

/// `kappa_d = d - 1`, the free diagonal elements.
pub fn kappa_diagonal(dims: &[usize]) -> Vec<f64> {
    dims.iter().map(|&d| d as f64 - 1.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcResult {
    pub name: String,
    pub alpha: f64,
    pub values: Vec<f64>,
    pub d_index: usize,
    pub d_label: f64,
}

/// Values of `I` and the largest label attaining its global minimum.
pub fn information_criterion_select(
    ll: &LogLikelihoods,
    labels: &[f64],
    ic: &InformationCriterion,
) -> Result<IcResult> {
    if ll.0.len() != labels.len() || ic.kappa.len() != labels.len() || labels.is_empty() {
        return Err(Error::DimensionMismatch("likelihoods, labels and kappa must have equal nonzero length".into()));
    }
    let values: Vec<f64> = ic.kappa.iter().zip(&ll.0).map(|(k, l)| ic.alpha * k - l).collect();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::InvalidArgument("no finite criterion value".into()));
    }
    let tie = IC_TIE_TOL * min.abs().max(1.0);
    let d_index = values.iter().rposition(|&v| v <= min + tie).expect("minimum exists");
    Ok(IcResult { name: ic.name.clone(), alpha: ic.alpha, values, d_index, d_label: labels[d_index] })
}

pub fn aic(ll: &LogLikelihoods, labels: &[f64], kappa: Vec<f64>) -> Result<IcResult> {
    information_criterion_select(ll, labels, &InformationCriterion::aic(kappa)?)
}

pub fn bic(ll: &LogLikelihoods, labels: &[f64], kappa: Vec<f64>, n: u64) -> Result<IcResult> {
    information_criterion_select(ll, labels, &InformationCriterion::bic(kappa, n)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub labels: Vec<f64>,
    pub priors: Vec<f64>,
    /// `None` encodes `-inf`.
    pub log_likelihoods: Vec<Option<f64>>,
    pub rb: RbReport,
    /// Smallest plausible label.
    pub d_rb: Option<f64>,
    /// Only the largest tested label is plausible.
    pub extend_recommended: bool,
    /// A single hypothesis was tested, so its posterior equals its prior.
    pub degenerate: bool,
    pub plausible_intervals: Vec<PlausibleInterval>,
    pub ic_results: BTreeMap<String, IcResult>,
}

impl CertificationReport {
    pub fn from_likelihoods(hyps: &HypothesisSet, ll: &LogLikelihoods) -> Result<Self> {
        let rb = RbReport::compute(hyps, ll)?;
        let k = hyps.len();
        let degenerate = k == 1;
        let d_rb = if degenerate { Some(hyps.labels()[0]) } else { rb.smallest_plausible().map(|i| hyps.labels()[i]) };
        let extend_recommended = degenerate || rb.smallest_plausible() == Some(k - 1);
        let plausible_intervals = if rb.k_eff.is_some() {
            (0..k).map(|delta| plausible_interval(hyps, &rb, delta)).collect::<Result<_>>()?
        } else {
            vec![]
        };
        Ok(Self {
            labels: hyps.labels().to_vec(),
            priors: hyps.priors().to_vec(),
            log_likelihoods: ll.0.iter().map(|&v| v.is_finite().then_some(v)).collect(),
            rb,
            d_rb,
            extend_recommended,
            degenerate,
            plausible_intervals,
            ic_results: BTreeMap::new(),
        })
    }

    pub fn log_likelihood_values(&self) -> LogLikelihoods {
        LogLikelihoods(self.log_likelihoods.iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)).collect())
    }

    pub fn add_criterion(&mut self, ic: &InformationCriterion) -> Result<&IcResult> {
        let res = information_criterion_select(&self.log_likelihood_values(), &self.labels, ic)?;
        let name = res.name.clone();
        self.ic_results.insert(name.clone(), res);
        Ok(&self.ic_results[&name])
    }

    pub fn rb_of(&self, label: f64) -> Option<f64> {
        self.labels.iter().position(|&l| l == label).map(|i| self.rb.rb_ratios[i])
    }
}

#[derive(Debug, Clone)]
pub struct RbdcRun {
    pub report: CertificationReport,
    pub fits: Vec<ProfileFit>,
}

/// Truncates the POVM to each `dims[k]`, maximizes the likelihood there and
/// runs the relative-belief pipeline on the hypothesis labels.
pub fn run_rbdc(povm: &Povm, data: &Dataset, dims: &[usize], hyps: &HypothesisSet, cfg: &MlConfig) -> Result<RbdcRun> {
    if dims.len() != hyps.len() {
        return Err(Error::DimensionMismatch("dims vs hypotheses".into()));
    }
    let (ll, fits) = profile_likelihoods(povm, data, dims, cfg)?;
    Ok(RbdcRun { report: CertificationReport::from_likelihoods(hyps, &ll)?, fits })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub d_rb: Option<f64>,
    pub d_aic: f64,
    pub d_bic: f64,
    pub eps_i: Option<f64>,
    pub eps_ii: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservativenessResult {
    pub trials: usize,
    pub n: u64,
    pub aic_fraction: f64,
    pub bic_fraction: f64,
    pub mean_eps_i: Option<f64>,
    pub mean_eps_ii: Option<f64>,
    pub records: Vec<TrialRecord>,
}

/// Monte Carlo settings shared by conservativeness and error-rate studies.
#[derive(Debug, Clone)]
pub struct TrialSpec<'a> {
    pub state: &'a DensityMatrix,
    pub povm: &'a Povm,
    pub n: u64,
    pub dims: &'a [usize],
    pub hyps: &'a HypothesisSet,
    pub kappa: Vec<f64>,
    /// True labels for error probabilities; skipped when `None`.
    pub truth: Option<Vec<f64>>,
    pub ml: MlConfig,
}

/// Fraction of seeded datasets with `d_RB >= d_I` for AIC and BIC. Trial `t`
/// draws from `SeededRng::substream(seed, t)`.
pub fn conservativeness_trial(spec: &TrialSpec<'_>, trials: usize, seed: u64) -> Result<ConservativenessResult> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let probs = born_probabilities(spec.state, spec.povm)?;
    let sum: f64 = probs.iter().sum();
    let probs: Vec<f64> = probs.iter().map(|p| p / sum).collect();
    let aic_ic = InformationCriterion::aic(spec.kappa.clone())?;
    let bic_ic = InformationCriterion::bic(spec.kappa.clone(), spec.n)?;
    let records: Vec<TrialRecord> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = SeededRng::substream(seed, t);
            let data = Dataset::new(sample_multinomial_with(&probs, spec.n, &mut rng)?, "trial");
            let run = run_rbdc(spec.povm, &data, spec.dims, spec.hyps, &spec.ml)?;
            let ll = run.report.log_likelihood_values();
            let d_aic = information_criterion_select(&ll, &run.report.labels, &aic_ic)?.d_label;
            let d_bic = information_criterion_select(&ll, &run.report.labels, &bic_ic)?.d_label;
            let (eps_i, eps_ii) = match &spec.truth {
                Some(truth) => {
                    let (a, b) = error_probabilities(spec.hyps, &run.report.rb, truth)?;
                    (Some(a), Some(b))
                }
                None => (None, None),
            };
            Ok(TrialRecord { trial: t, d_rb: run.report.d_rb, d_aic, d_bic, eps_i, eps_ii })
        })
        .collect::<Result<_>>()?;
    let frac = |pick: fn(&TrialRecord) -> f64| {
        records.iter().filter(|r| r.d_rb.is_some_and(|d| d >= pick(r))).count() as f64 / trials as f64
    };
    let mean = |pick: fn(&TrialRecord) -> Option<f64>| {
        let v: Option<Vec<f64>> = records.iter().map(pick).collect();
        v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    Ok(ConservativenessResult {
        trials,
        n: spec.n,
        aic_fraction: frac(|r| r.d_aic),
        bic_fraction: frac(|r| r.d_bic),
        mean_eps_i: mean(|r| r.eps_i),
        mean_eps_ii: mean(|r| r.eps_ii),
        records,
    })
}

/// Per-copy Kullback-Leibler gap `(log L_sat - log L_d) / N` of each truncated
/// fit to exact probabilities, evaluated with `n_virtual` virtual copies.
pub fn asymptotic_profile_gaps(
    state: &DensityMatrix,
    povm: &Povm,
    dims: &[usize],
    n_virtual: u64,
    cfg: &MlConfig,
) -> Result<Vec<f64>> {
    let probs = born_probabilities(state, povm)?;
    let data = Dataset::asymptotic(&probs, n_virtual, "asymptotic");
    let n = data.total() as f64;
    let freqs: Vec<f64> = data.counts().iter().map(|&c| c as f64 / n).collect();
    let saturated = log_likelihood_from_probs(&freqs, data.counts());
    let (ll, _) = profile_likelihoods(povm, &data, dims, cfg)?;
    Ok(ll.0.iter().map(|l| (saturated - l) / n).collect())
}

/// Labels whose truncated space reproduces the exact probabilities, i.e.
/// asymptotic gap below `kl_tol`.
pub fn asymptotic_truth_set(gaps: &[f64], labels: &[f64], kl_tol: f64) -> Vec<f64> {
    gaps.iter().zip(labels).filter(|(g, _)| **g < kl_tol).map(|(_, &l)| l).collect()
}

pub type StateBuilder = Arc<dyn Fn(&[f64]) -> Result<DensityMatrix> + Send + Sync>;

/// One interaction order with its coupling box and reduced-state map.
#[derive(Clone)]
pub struct ParametricModel {
    pub order: usize,
    pub bounds: Vec<(f64, f64)>,
    builder: StateBuilder,
}

impl std::fmt::Debug for ParametricModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParametricModel").field("order", &self.order).field("bounds", &self.bounds).finish()
    }
}

impl ParametricModel {
    pub fn new(order: usize, bounds: Vec<(f64, f64)>, builder: StateBuilder) -> Self {
        Self { order, bounds, builder }
    }

    pub fn build(&self, g: &[f64]) -> Result<DensityMatrix> {
        if g.len() != self.bounds.len() {
            return Err(Error::DimensionMismatch(format!("{} couplings for order {}", g.len(), self.order)));
        }
        (self.builder)(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub order: usize,
    pub couplings: Vec<f64>,
    pub effective_coupling: f64,
    pub log_likelihood: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCertification {
    pub report: CertificationReport,
    pub fits: Vec<ModelFit>,
}

/// Maximizes the likelihood over each model's couplings and certifies the
/// orders with relative belief. Labels of `hyps` are the model orders.
pub fn run_model_certification(
    models: &[ParametricModel],
    povm: &Povm,
    data: &Dataset,
    hyps: &HypothesisSet,
    opt: &OptimizerConfig,
) -> Result<ModelCertification> {
    if models.len() != hyps.len() {
        return Err(Error::DimensionMismatch("models vs hypotheses".into()));
    }
    if data.len() != povm.len() {
        return Err(Error::DimensionMismatch("dataset vs POVM".into()));
    }
    let fits: Vec<ModelFit> = models
        .par_iter()
        .map(|m| {
            let objective = |g: &[f64]| -> f64 {
                match m.build(g).and_then(|rho| born_probabilities(&rho, povm)) {
                    Ok(p) => -log_likelihood_from_probs(&p, data.counts()),
                    Err(_) => f64::INFINITY,
                }
            };
            let best = minimize_box(&objective, &m.bounds, opt);
            let rho = m.build(&best.x)?;
            let ll = log_likelihood_from_probs(&born_probabilities(&rho, povm)?, data.counts());
            Ok(ModelFit {
                order: m.order,
                effective_coupling: best.x.iter().map(|v| v * v).sum::<f64>().sqrt(),
                couplings: best.x,
                log_likelihood: ll,
                evaluations: best.evaluations,
                converged: best.converged,
            })
        })
        .collect::<Result<_>>()?;
    let ll = LogLikelihoods(fits.iter().map(|f| f.log_likelihood).collect());
    Ok(ModelCertification { report: CertificationReport::from_likelihoods(hyps, &ll)?, fits })
}
