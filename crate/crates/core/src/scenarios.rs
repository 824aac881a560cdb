//! Named end-to-end scenarios: configuration, data simulation and
//! certification, with tabular output for plotting.
//!
//! A configuration names one scenario and may carry a table of parameters
//! under the scenario's own name. Every omitted value takes the default of
//! the corresponding figure; [`ScenarioConfig::resolve`] fills them in so the
//! echoed configuration is complete.

use std::collections::BTreeMap;

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::certification::{
    asymptotic_profile_gaps, asymptotic_truth_set, conservativeness_trial, kappa_diagonal, kappa_full_tomography,
    run_model_certification, CertificationReport, InformationCriterion, ModelFit, TrialSpec,
};
use crate::error::{Error, Result};
use crate::estimation::{
    profile_likelihoods, profile_likelihoods_by, sample_by_groups, simulate_dataset, MlConfig, ProfileFit,
};
use crate::inference::{HypothesisSet, LogLikelihoods};
use crate::interactions::{
    atom_field_reduced_state, atom_plus_state, homodyne_povm, model_builders_atom_field, model_builders_field_absorber,
    parse_atom_povm, povm_from_vectors, tavis_cummings_reduced_state, CouplingRow, HomodyneConfig, ATOM_POVM,
};
use crate::linalg::{born_probabilities, fidelity, random_von_neumann_bases, ComplexMatrix, DensityMatrix, C64};
use crate::optimize::OptimizerConfig;
use crate::photonics::{
    double_mode_povm, herald_single_mode, heralding_rate, parse_settings, polarimetric_povm, tmsv_ket, PnrdConfig,
    PolarizationSpace, WavePlatePair, SETTINGS_N0_3, SETTINGS_N0_8,
};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    RbdcToy,
    SourceSingle,
    SourceDouble,
    ModelAtomField,
    ModelFieldAbsorber,
    Conservativeness,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::RbdcToy => "rbdc-toy",
            Self::SourceSingle => "source-single",
            Self::SourceDouble => "source-double",
            Self::ModelAtomField => "model-atom-field",
            Self::ModelFieldAbsorber => "model-field-absorber",
            Self::Conservativeness => "conservativeness",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorSpec {
    Uniform,
    /// Weights `exp(-((x - center) / width)^2)`, renormalized over the set.
    Gaussian {
        center: f64,
        width: f64,
    },
}

impl PriorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::Gaussian { .. } => "gaussian",
        }
    }

    pub fn build(&self, labels: Vec<f64>) -> Result<HypothesisSet> {
        match *self {
            Self::Uniform => HypothesisSet::uniform(labels),
            Self::Gaussian { center, width } => HypothesisSet::gaussian(labels, center, width),
        }
    }
}

/// Inclusive label range. Labels are dimensions for `rbdc-toy` and
/// `conservativeness`, photon numbers per mode for the sources and
/// interaction orders for the models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisRange {
    pub min: usize,
    pub max: usize,
}

impl HypothesisRange {
    pub fn labels(&self) -> Vec<usize> {
        (self.min..=self.max).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KappaKind {
    /// `d - 1`, for one basis that only probes diagonal entries.
    Diagonal,
    /// `d^2 - 1`.
    Full,
    /// Number of free couplings of each model order.
    Parameters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct IcSettings {
    pub kappa: Option<KappaKind>,
    /// Extra criterion with this penalty weight next to AIC and BIC.
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyParams {
    /// Unnormalized eigenvalues of the diagonal true state.
    pub spectrum: Vec<f64>,
    pub bases: usize,
    /// Seed of the fixed random bases, separate from the data seed.
    pub basis_seed: u64,
}

impl Default for ToyParams {
    fn default() -> Self {
        Self { spectrum: vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0], bases: 11, basis_seed: 11 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CopyCounting {
    /// `n_copies` pump pulses per setting; heralded copies are binomial.
    PumpPulses,
    /// `n_copies` heralded copies per setting.
    Heralded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSingleParams {
    pub tau: f64,
    pub eta: f64,
    pub n0: usize,
    /// Largest total photon number of the simulated polarization space.
    pub max_total: usize,
    /// Wave-plate settings file; the frozen set when absent.
    pub settings_file: Option<String>,
    pub counting: CopyCounting,
}

impl Default for SourceSingleParams {
    fn default() -> Self {
        Self {
            tau: (2.0 + 3f64.sqrt()).ln() / 2.0,
            eta: 0.9,
            n0: 8,
            max_total: 16,
            settings_file: None,
            counting: CopyCounting::PumpPulses,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceDoubleParams {
    pub tau: f64,
    pub eta: f64,
    pub n0: usize,
    /// Largest photon number per spatial mode kept in the squeezed state.
    pub n_total_max: usize,
    pub tail_tol: f64,
    pub settings_file: Option<String>,
}

impl Default for SourceDoubleParams {
    fn default() -> Self {
        Self { tau: 0.2418, eta: 0.9, n0: 3, n_total_max: 8, tail_tol: 1e-8, settings_file: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtomFieldParams {
    /// True couplings of the simulated interaction.
    pub couplings: Vec<f64>,
    /// Atom POVM file; the frozen four-outcome POVM when absent.
    pub povm_file: Option<String>,
}

impl Default for AtomFieldParams {
    fn default() -> Self {
        Self { couplings: vec![1.0, 1.0, 1.0], povm_file: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldAbsorberParams {
    pub initial_fock: usize,
    pub couplings: Vec<f64>,
    pub homodyne: HomodyneConfig,
}

impl Default for FieldAbsorberParams {
    fn default() -> Self {
        Self { initial_fock: 4, couplings: vec![1.0, 1.0], homodyne: HomodyneConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConservativenessParams {
    pub spectrum: Vec<f64>,
    pub bases: usize,
    pub basis_seed: u64,
    pub trials: usize,
    /// Copy numbers of the sweep; `n_copies` alone when empty.
    pub n_values: Vec<u64>,
    /// Virtual copies of the asymptotic fits that define the true labels.
    pub asymptotic_copies: u64,
    /// Per-copy likelihood gap below which a label counts as true.
    pub kl_tol: f64,
}

impl Default for ConservativenessParams {
    fn default() -> Self {
        Self {
            spectrum: ToyParams::default().spectrum,
            bases: 1,
            basis_seed: 5,
            trials: 100,
            n_values: vec![100, 1000, 10000],
            asymptotic_copies: 1_000_000_000_000,
            kl_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub seed: u64,
    /// Copies per setting for the sources, total copies otherwise.
    pub n_copies: Option<u64>,
    pub priors: Option<Vec<PriorSpec>>,
    pub hypotheses: Option<HypothesisRange>,
    pub ml: Option<MlConfig>,
    pub optimizer: Option<OptimizerConfig>,
    pub ic: Option<IcSettings>,
    #[serde(rename = "rbdc-toy", skip_serializing_if = "Option::is_none")]
    pub rbdc_toy: Option<ToyParams>,
    #[serde(rename = "source-single", skip_serializing_if = "Option::is_none")]
    pub source_single: Option<SourceSingleParams>,
    #[serde(rename = "source-double", skip_serializing_if = "Option::is_none")]
    pub source_double: Option<SourceDoubleParams>,
    #[serde(rename = "model-atom-field", skip_serializing_if = "Option::is_none")]
    pub model_atom_field: Option<AtomFieldParams>,
    #[serde(rename = "model-field-absorber", skip_serializing_if = "Option::is_none")]
    pub model_field_absorber: Option<FieldAbsorberParams>,
    #[serde(rename = "conservativeness", skip_serializing_if = "Option::is_none")]
    pub conservativeness: Option<ConservativenessParams>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ScenarioConfig {
    /// Defaults for `kind` with every field filled.
    pub fn defaults(kind: ScenarioKind, seed: u64) -> Self {
        Self {
            scenario: kind,
            seed,
            n_copies: None,
            priors: None,
            hypotheses: None,
            ml: None,
            optimizer: None,
            ic: None,
            rbdc_toy: None,
            source_single: None,
            source_double: None,
            model_atom_field: None,
            model_field_absorber: None,
            conservativeness: None,
        }
        .resolve()
        .expect("defaults are valid")
    }

    /// Fills omitted values with scenario defaults and validates ranges.
    pub fn resolve(mut self) -> Result<Self> {
        use ScenarioKind::*;
        let kind = self.scenario;
        let present = [
            (RbdcToy, self.rbdc_toy.is_some()),
            (SourceSingle, self.source_single.is_some()),
            (SourceDouble, self.source_double.is_some()),
            (ModelAtomField, self.model_atom_field.is_some()),
            (ModelFieldAbsorber, self.model_field_absorber.is_some()),
            (Conservativeness, self.conservativeness.is_some()),
        ];
        if let Some((other, _)) = present.iter().find(|(k, p)| *p && *k != kind) {
            return Err(config_err(format!("table [{}] does not apply to scenario {}", other.name(), kind.name())));
        }
        let gauss = |center: f64| PriorSpec::Gaussian { center, width: 1.0 };
        let (n, priors, range) = match kind {
            RbdcToy => (10_000, vec![PriorSpec::Uniform], HypothesisRange { min: 2, max: 10 }),
            Conservativeness => (1000, vec![PriorSpec::Uniform], HypothesisRange { min: 2, max: 10 }),
            SourceSingle => (10_000, vec![PriorSpec::Uniform, gauss(1.0)], HypothesisRange { min: 0, max: 8 }),
            SourceDouble => (10_000, vec![PriorSpec::Uniform, gauss(1.0)], HypothesisRange { min: 0, max: 3 }),
            ModelAtomField => (1000, vec![PriorSpec::Uniform, gauss(0.0)], HypothesisRange { min: 0, max: 4 }),
            ModelFieldAbsorber => (1_000_000, vec![PriorSpec::Uniform, gauss(0.0)], HypothesisRange { min: 0, max: 4 }),
        };
        self.n_copies.get_or_insert(n);
        self.priors.get_or_insert(priors);
        self.hypotheses.get_or_insert(range);
        self.ml.get_or_insert_with(MlConfig::default);
        self.optimizer.get_or_insert_with(OptimizerConfig::default);
        let ic = self.ic.get_or_insert_with(IcSettings::default);
        match kind {
            RbdcToy => {
                let toy = self.rbdc_toy.get_or_insert_with(ToyParams::default);
                let diag = toy.bases == 1;
                ic.kappa.get_or_insert(if diag { KappaKind::Diagonal } else { KappaKind::Full });
            }
            Conservativeness => {
                let c = self.conservativeness.get_or_insert_with(ConservativenessParams::default);
                if c.n_values.is_empty() {
                    c.n_values = vec![self.n_copies.unwrap_or(n)];
                }
                let diag = c.bases == 1;
                ic.kappa.get_or_insert(if diag { KappaKind::Diagonal } else { KappaKind::Full });
            }
            SourceSingle => {
                self.source_single.get_or_insert_with(SourceSingleParams::default);
                ic.kappa.get_or_insert(KappaKind::Full);
            }
            SourceDouble => {
                self.source_double.get_or_insert_with(SourceDoubleParams::default);
                ic.kappa.get_or_insert(KappaKind::Full);
            }
            ModelAtomField => {
                self.model_atom_field.get_or_insert_with(AtomFieldParams::default);
                ic.kappa.get_or_insert(KappaKind::Parameters);
            }
            ModelFieldAbsorber => {
                self.model_field_absorber.get_or_insert_with(FieldAbsorberParams::default);
                ic.kappa.get_or_insert(KappaKind::Parameters);
            }
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_copies.unwrap_or(0);
        if n == 0 {
            return Err(config_err("n_copies must be positive"));
        }
        let range = self.hypotheses.expect("resolved");
        if range.min > range.max {
            return Err(config_err(format!("hypotheses.min {} exceeds max {}", range.min, range.max)));
        }
        let priors = self.priors.as_deref().unwrap_or_default();
        if priors.is_empty() {
            return Err(config_err("at least one prior is required"));
        }
        for p in priors {
            if let PriorSpec::Gaussian { width, center } = p {
                if !(*width > 0.0 && width.is_finite() && center.is_finite()) {
                    return Err(config_err("gaussian prior needs a finite center and positive width"));
                }
            }
        }
        let names: Vec<&str> = priors.iter().map(PriorSpec::name).collect();
        if (1..names.len()).any(|i| names[..i].contains(&names[i])) {
            return Err(config_err("priors must have distinct kinds"));
        }
        let ml = self.ml.expect("resolved");
        if !(ml.tol > 0.0) || ml.max_iter == 0 || ml.check_every == 0 {
            return Err(config_err("ml needs tol > 0, max_iter > 0 and check_every > 0"));
        }
        let spectrum_ok = |s: &[f64]| s.iter().all(|v| *v >= 0.0 && v.is_finite()) && s.iter().sum::<f64>() > 0.0;
        let check_dims = |d: usize, what: &str| {
            if range.min == 0 || range.max > d {
                Err(config_err(format!("dimension labels must lie in 1..={d} for {what}")))
            } else {
                Ok(())
            }
        };
        let eta_ok = |eta: f64| eta > 0.0 && eta <= 1.0;
        let check_couplings = |g: &[f64]| {
            if g.is_empty() || g.iter().any(|v| !v.is_finite()) {
                Err(config_err("couplings must be a nonempty list of finite values"))
            } else {
                Ok(())
            }
        };
        match self.scenario {
            ScenarioKind::RbdcToy => {
                let t = self.rbdc_toy.as_ref().expect("resolved");
                if !spectrum_ok(&t.spectrum) || t.bases == 0 {
                    return Err(config_err("rbdc-toy needs a nonnegative spectrum and at least one basis"));
                }
                check_dims(t.spectrum.len(), "rbdc-toy")?;
            }
            ScenarioKind::Conservativeness => {
                let c = self.conservativeness.as_ref().expect("resolved");
                if !spectrum_ok(&c.spectrum) || c.bases == 0 || c.trials == 0 || c.n_values.contains(&0) {
                    return Err(config_err("conservativeness needs a valid spectrum, bases, trials and copy numbers"));
                }
                check_dims(c.spectrum.len(), "conservativeness")?;
            }
            ScenarioKind::SourceSingle => {
                let s = self.source_single.as_ref().expect("resolved");
                if !(s.tau > 0.0) || !eta_ok(s.eta) || s.n0 == 0 {
                    return Err(config_err("source-single needs tau > 0, eta in (0, 1] and n0 >= 1"));
                }
                if 2 * range.max > s.max_total {
                    return Err(config_err(format!(
                        "hypotheses.max {} needs max_total >= {}",
                        range.max,
                        2 * range.max
                    )));
                }
            }
            ScenarioKind::SourceDouble => {
                let s = self.source_double.as_ref().expect("resolved");
                if !(s.tau > 0.0) || !eta_ok(s.eta) || s.n0 == 0 || !(s.tail_tol > 0.0) {
                    return Err(config_err("source-double needs tau > 0, eta in (0, 1], n0 >= 1, tail_tol > 0"));
                }
                if 2 * range.max > s.n_total_max {
                    return Err(config_err(format!(
                        "hypotheses.max {} needs n_total_max >= {}",
                        range.max,
                        2 * range.max
                    )));
                }
            }
            ScenarioKind::ModelAtomField => {
                let a = self.model_atom_field.as_ref().expect("resolved");
                check_couplings(&a.couplings)?;
                if range.max == 0 {
                    return Err(config_err("model set needs hypotheses.max >= 1"));
                }
            }
            ScenarioKind::ModelFieldAbsorber => {
                let f = self.model_field_absorber.as_ref().expect("resolved");
                check_couplings(&f.couplings)?;
                f.homodyne.validate().map_err(|e| config_err(e.to_string()))?;
                if f.initial_fock >= f.homodyne.d {
                    return Err(config_err("initial Fock state must fit in the homodyne dimension"));
                }
                if range.max == 0 {
                    return Err(config_err("model set needs hypotheses.max >= 1"));
                }
                if n % f.homodyne.n_angles as u64 != 0 {
                    return Err(config_err("n_copies must split evenly over the homodyne angles"));
                }
            }
        }
        Ok(())
    }
}

/// Rows of one plot panel; cells are already formatted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotTable {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl PlotTable {
    fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Self { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".into()
    } else if a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub total: u64,
    pub outcomes: usize,
    pub settings: usize,
}

/// Per-hypothesis fit diagnostics, for both state and model fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub label: f64,
    /// Hilbert-space dimension of the hypothesis.
    pub dim: usize,
    pub log_likelihood: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub lifted_from_smaller: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorReport {
    pub prior: String,
    pub report: CertificationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservativenessSummary {
    pub n: u64,
    pub trials: usize,
    pub true_labels: Vec<f64>,
    pub aic_fraction: f64,
    pub bic_fraction: f64,
    pub mean_eps_i: Option<f64>,
    pub mean_eps_ii: Option<f64>,
}

/// Deterministic part of a run: equal configuration and seed give equal
/// bodies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunBody {
    pub config: ScenarioConfig,
    pub dataset: Option<DatasetSummary>,
    pub fits: Vec<FitSummary>,
    pub certifications: Vec<PriorReport>,
    pub model_fits: Vec<ModelFit>,
    /// Fidelity with the ideal state, per hypothesis.
    pub fidelities: Vec<Option<f64>>,
    pub conservativeness: Vec<ConservativenessSummary>,
    pub diagnostics: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl RunBody {
    fn new(config: ScenarioConfig) -> Self {
        Self {
            config,
            dataset: None,
            fits: Vec::new(),
            certifications: Vec::new(),
            model_fits: Vec::new(),
            fidelities: Vec::new(),
            conservativeness: Vec::new(),
            diagnostics: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    /// Report under the first configured prior.
    pub fn primary(&self) -> Option<&CertificationReport> {
        self.certifications.first().map(|p| &p.report)
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub body: RunBody,
    pub tables: Vec<PlotTable>,
    /// Counts of the simulated dataset, absent for Monte Carlo studies.
    pub counts: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Add AIC, BIC and the configured extra criterion to every report.
    pub compare_ic: bool,
}

/// Runs a resolved configuration.
pub fn run_scenario(cfg: &ScenarioConfig, opts: RunOptions) -> Result<ScenarioOutcome> {
    let cfg = cfg.clone().resolve()?;
    match cfg.scenario {
        ScenarioKind::RbdcToy => run_toy(cfg, opts),
        ScenarioKind::SourceSingle => run_source_single(cfg, opts),
        ScenarioKind::SourceDouble => run_source_double(cfg, opts),
        ScenarioKind::ModelAtomField | ScenarioKind::ModelFieldAbsorber => run_model(cfg, opts),
        ScenarioKind::Conservativeness => run_conservativeness(cfg),
    }
}

fn read_fixture(path: &Option<String>, builtin: &str) -> Result<String> {
    match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| config_err(format!("cannot read {p}: {e}"))),
        None => Ok(builtin.to_string()),
    }
}

fn kappa_for(kind: KappaKind, dims: &[usize], params: &[usize]) -> Vec<f64> {
    match kind {
        KappaKind::Diagonal => kappa_diagonal(dims),
        KappaKind::Full => kappa_full_tomography(dims),
        KappaKind::Parameters => params.iter().map(|&k| k as f64).collect(),
    }
}

struct Certified {
    fits: Vec<FitSummary>,
    lls: LogLikelihoods,
    dims: Vec<usize>,
    params: Vec<usize>,
}

fn certify(
    body: &mut RunBody,
    tables: &mut Vec<PlotTable>,
    c: &Certified,
    n_total: u64,
    opts: RunOptions,
) -> Result<()> {
    let cfg = body.config.clone();
    let labels: Vec<f64> = c.fits.iter().map(|f| f.label).collect();
    let ic = cfg.ic.clone().unwrap_or_default();
    let kappa = kappa_for(ic.kappa.unwrap_or(KappaKind::Full), &c.dims, &c.params);
    let mut ll_table = PlotTable::new("loglik", &["label", "dim", "log_likelihood", "converged", "lifted"]);
    for f in &c.fits {
        ll_table.push(vec![
            num(f.label),
            f.dim.to_string(),
            opt_num(f.log_likelihood),
            f.converged.to_string(),
            f.lifted_from_smaller.to_string(),
        ]);
        if !f.converged {
            body.warnings.push(format!("fit for label {} stopped before convergence", f.label));
        }
    }
    tables.push(ll_table);
    for prior in cfg.priors.as_deref().unwrap_or_default() {
        let hyps = prior.build(labels.clone())?;
        let mut report = CertificationReport::from_likelihoods(&hyps, &c.lls)?;
        if opts.compare_ic {
            report.add_criterion(&InformationCriterion::aic(kappa.clone())?)?;
            report.add_criterion(&InformationCriterion::bic(kappa.clone(), n_total)?)?;
            if let Some(alpha) = ic.alpha {
                report.add_criterion(&InformationCriterion::new(format!("alpha={alpha}"), alpha, kappa.clone())?)?;
            }
        }
        let name = prior.name();
        let mut rb = PlotTable::new(format!("rb_{name}"), &RB_COLUMNS);
        for k in 0..labels.len() {
            rb.push(vec![
                num(labels[k]),
                num(report.priors[k]),
                num(report.rb.posteriors[k]),
                num(report.rb.rb_ratios[k]),
                num(report.rb.evidence[k]),
                report.rb.plausible[k].to_string(),
            ]);
        }
        tables.push(rb);
        let mut iv = PlotTable::new(format!("intervals_{name}"), &["delta", "members", "size_prior", "credibility"]);
        for p in &report.plausible_intervals {
            let members: Vec<String> = p.members.iter().map(|m| num(*m)).collect();
            iv.push(vec![p.delta.to_string(), members.join(" "), num(p.size_prior), num(p.credibility)]);
        }
        tables.push(iv);
        if opts.compare_ic {
            let mut header = vec!["label".to_string(), "kappa".to_string(), "log_likelihood".to_string()];
            header.extend(report.ic_results.keys().cloned());
            let mut t = PlotTable { name: format!("ic_{name}"), header, rows: Vec::new() };
            for k in 0..labels.len() {
                let mut row = vec![num(labels[k]), num(kappa[k]), num(c.lls.0[k])];
                row.extend(report.ic_results.values().map(|r| num(r.values[k])));
                t.push(row);
            }
            tables.push(t);
        }
        body.certifications.push(PriorReport { prior: name.to_string(), report });
    }
    Ok(())
}

/// Column names of every RB table.
pub const RB_COLUMNS: [&str; 6] = ["label", "prior", "posterior", "rb_ratio", "evidence", "plausible"];

fn profile_summaries(labels: &[usize], fits: &[ProfileFit]) -> Vec<FitSummary> {
    labels
        .iter()
        .zip(fits)
        .map(|(&l, f)| FitSummary {
            label: l as f64,
            dim: f.dim,
            log_likelihood: Some(f.fit.log_likelihood).filter(|v| v.is_finite()),
            iterations: f.fit.iterations,
            converged: f.fit.converged,
            lifted_from_smaller: f.lifted_from_smaller,
        })
        .collect()
}

fn run_toy(cfg: ScenarioConfig, opts: RunOptions) -> Result<ScenarioOutcome> {
    let toy = cfg.rbdc_toy.clone().expect("resolved");
    let n = cfg.n_copies.expect("resolved");
    let state = DensityMatrix::diagonal(&toy.spectrum)?;
    let povm = random_von_neumann_bases(state.dim(), toy.bases, toy.basis_seed)?;
    let mut rng = SeededRng::from_seed(cfg.seed);
    let data = simulate_dataset(&state, &povm, n, &mut rng, "von-neumann")?;
    let dims = cfg.hypotheses.expect("resolved").labels();
    let (lls, fits) = profile_likelihoods(&povm, &data, &dims, &cfg.ml.expect("resolved"))?;
    let mut body = RunBody::new(cfg);
    body.dataset = Some(DatasetSummary { total: data.total(), outcomes: data.len(), settings: toy.bases });
    body.fits = profile_summaries(&dims, &fits);
    let mut tables = Vec::new();
    let c = Certified { fits: body.fits.clone(), lls, dims: dims.clone(), params: dims.clone() };
    certify(&mut body, &mut tables, &c, data.total(), opts)?;
    Ok(ScenarioOutcome { body, tables, counts: Some(data.counts().to_vec()) })
}

/// `<psi| rho |psi>` for a sparse ket given by `(index, amplitude)`.
fn pure_overlap(rho: &ComplexMatrix, ket: &[(usize, C64)]) -> f64 {
    let mut acc = C64::new(0.0, 0.0);
    for &(i, a) in ket {
        for &(j, b) in ket {
            acc += a.conj() * rho[(i, j)] * b;
        }
    }
    acc.re
}

fn fidelity_table(labels: &[f64], fids: &[Option<f64>]) -> PlotTable {
    let mut t = PlotTable::new("fidelity", &["label", "fidelity"]);
    for (l, f) in labels.iter().zip(fids) {
        t.push(vec![num(*l), opt_num(*f)]);
    }
    t
}

fn load_settings(path: &Option<String>, builtin: &str) -> Result<Vec<WavePlatePair>> {
    parse_settings(&read_fixture(path, builtin)?).map_err(|e| config_err(e.to_string()))
}

fn run_source_single(cfg: ScenarioConfig, opts: RunOptions) -> Result<ScenarioOutcome> {
    let p = cfg.source_single.clone().expect("resolved");
    let n = cfg.n_copies.expect("resolved");
    let settings = load_settings(&p.settings_file, SETTINGS_N0_8)?;
    let det = PnrdConfig::new(p.eta, p.n0)?;
    let space = PolarizationSpace::new(p.max_total)?;
    let povm = polarimetric_povm(&settings, &det, &space)?;
    let herald = herald_single_mode(p.tau, p.eta, &space)?;
    let probs = born_probabilities(&herald.state, &povm)?;
    let mut rng = SeededRng::from_seed(cfg.seed);
    let copies: Vec<u64> = match p.counting {
        CopyCounting::Heralded => vec![n; settings.len()],
        CopyCounting::PumpPulses => {
            let b = Binomial::new(n, herald.probability.min(1.0))
                .map_err(|e| Error::InvalidArgument(format!("heralding draw: {e}")))?;
            (0..settings.len()).map(|_| b.sample(&mut rng)).collect()
        }
    };
    let width = povm.len() / settings.len();
    let groups: Vec<usize> = (0..povm.len()).map(|j| j / width).collect();
    let data = sample_by_groups(&probs, &groups, &copies, &mut rng, "polarimetric")?;
    let ns = cfg.hypotheses.expect("resolved").labels();
    let dims: Vec<usize> = ns.iter().map(|&k| space.per_mode_dim(k)).collect::<Result<_>>()?;
    let (lls, fits) = profile_likelihoods(&povm, &data, &dims, &cfg.ml.expect("resolved"))?;
    let ideal = [(space.index(1, 0), 1.0), (space.index(0, 1), -1.0)];
    let fids: Vec<Option<f64>> = fits
        .iter()
        .map(|f| {
            let ket: Vec<(usize, C64)> = ideal
                .iter()
                .filter_map(|&(i, s)| i.filter(|&i| i < f.dim).map(|i| (i, C64::new(s / 2f64.sqrt(), 0.0))))
                .collect();
            Some(pure_overlap(f.fit.estimate.matrix(), &ket))
        })
        .collect();
    let mut body = RunBody::new(cfg);
    body.dataset = Some(DatasetSummary { total: data.total(), outcomes: data.len(), settings: settings.len() });
    body.diagnostics.insert("heralding_probability".into(), herald.probability);
    body.diagnostics.insert("heralding_rate_lossless".into(), heralding_rate(p.tau));
    body.diagnostics.insert("herald_tail".into(), herald.tail);
    body.fits = profile_summaries(&ns, &fits);
    let labels: Vec<f64> = ns.iter().map(|&k| k as f64).collect();
    let mut tables = vec![fidelity_table(&labels, &fids)];
    body.fidelities = fids;
    let c = Certified { fits: body.fits.clone(), lls, dims: dims.clone(), params: dims };
    certify(&mut body, &mut tables, &c, data.total(), opts)?;
    Ok(ScenarioOutcome { body, tables, counts: Some(data.counts().to_vec()) })
}

fn run_source_double(cfg: ScenarioConfig, opts: RunOptions) -> Result<ScenarioOutcome> {
    let p = cfg.source_double.clone().expect("resolved");
    let n = cfg.n_copies.expect("resolved");
    let settings = load_settings(&p.settings_file, SETTINGS_N0_3)?;
    let det = PnrdConfig::new(p.eta, p.n0)?;
    let tmsv = tmsv_ket(p.tau, p.n_total_max, p.tail_tol)?;
    let space = tmsv.space.clone();
    let povm = double_mode_povm(&settings, &det, &space)?;
    let probs = povm.probabilities(&tmsv.ket.to_density_matrix())?;
    let (a, b) = povm.factors();
    let (wa, wb) = (a.len() / settings.len(), b.len() / settings.len());
    let lb = b.len();
    let groups: Vec<usize> = (0..povm.len()).map(|j| (j / lb / wa) * settings.len() + (j % lb) / wb).collect();
    let pairs = settings.len() * settings.len();
    let mut rng = SeededRng::from_seed(cfg.seed);
    let data = sample_by_groups(&probs, &groups, &vec![n; pairs], &mut rng, "polarimetric-pair")?;
    let ns = cfg.hypotheses.expect("resolved").labels();
    let per_mode: Vec<usize> = ns.iter().map(|&k| space.per_mode_dim(k)).collect::<Result<_>>()?;
    let dims: Vec<usize> = per_mode.iter().map(|d| d * d).collect();
    let ml = cfg.ml.expect("resolved");
    let (lls, fits) = profile_likelihoods_by(
        &dims,
        |d| {
            let s = per_mode[dims.iter().position(|&x| x == d).expect("listed dimension")];
            povm.truncate_factors(s, s)
        },
        &data,
        &ml,
    )?;
    let fids: Vec<Option<f64>> = fits
        .iter()
        .zip(&per_mode)
        .map(|(f, &s)| {
            // Drop the joint vacuum, renormalize, then overlap with the ideal pair.
            let mut rho = f.fit.estimate.matrix().clone();
            for k in 0..rho.nrows() {
                rho[(0, k)] = C64::new(0.0, 0.0);
                rho[(k, 0)] = C64::new(0.0, 0.0);
            }
            let tr: f64 = (0..rho.nrows()).map(|k| rho[(k, k)].re).sum();
            if tr <= 0.0 {
                return None;
            }
            let (h, v) = (space.index(1, 0).expect("in space"), space.index(0, 1).expect("in space"));
            if h >= s || v >= s {
                return Some(0.0);
            }
            let amp = 1.0 / 2f64.sqrt();
            let ket = [(h * s + v, C64::new(amp, 0.0)), (v * s + h, C64::new(-amp, 0.0))];
            Some(pure_overlap(&rho, &ket) / tr)
        })
        .collect();
    let mut body = RunBody::new(cfg);
    body.dataset = Some(DatasetSummary { total: data.total(), outcomes: data.len(), settings: pairs });
    body.diagnostics.insert("tmsv_retained".into(), tmsv.retained);
    body.fits = profile_summaries(&ns, &fits);
    let labels: Vec<f64> = ns.iter().map(|&k| k as f64).collect();
    let mut tables = vec![fidelity_table(&labels, &fids)];
    body.fidelities = fids;
    let c = Certified { fits: body.fits.clone(), lls, dims: dims.clone(), params: dims };
    certify(&mut body, &mut tables, &c, data.total(), opts)?;
    Ok(ScenarioOutcome { body, tables, counts: Some(data.counts().to_vec()) })
}

fn run_model(cfg: ScenarioConfig, opts: RunOptions) -> Result<ScenarioOutcome> {
    let n = cfg.n_copies.expect("resolved");
    let range = cfg.hypotheses.expect("resolved");
    let mut rng = SeededRng::from_seed(cfg.seed);
    let (rho0, models, povm, data) = match cfg.scenario {
        ScenarioKind::ModelAtomField => {
            let p = cfg.model_atom_field.clone().expect("resolved");
            let rho0 = atom_plus_state();
            let truth = atom_field_reduced_state(&rho0, &CouplingRow::new(p.couplings.clone())?)?;
            let vectors =
                parse_atom_povm(&read_fixture(&p.povm_file, ATOM_POVM)?).map_err(|e| config_err(e.to_string()))?;
            let povm = povm_from_vectors(&vectors)?;
            let data = simulate_dataset(&truth, &povm, n, &mut rng, "atom")?;
            let models = model_builders_atom_field(range.max, &rho0)?;
            (rho0, models, povm, data)
        }
        _ => {
            let p = cfg.model_field_absorber.clone().expect("resolved");
            let rho0 = DensityMatrix::fock(p.homodyne.d, p.initial_fock);
            let truth = tavis_cummings_reduced_state(&rho0, &CouplingRow::new(p.couplings.clone())?)?;
            let povm = homodyne_povm(&p.homodyne)?;
            let probs = born_probabilities(&truth, &povm)?;
            let per_angle = povm.len() / p.homodyne.n_angles;
            let groups: Vec<usize> = (0..povm.len()).map(|j| j / per_angle).collect();
            let copies = vec![n / p.homodyne.n_angles as u64; p.homodyne.n_angles];
            let data = sample_by_groups(&probs, &groups, &copies, &mut rng, "homodyne")?;
            let models = model_builders_field_absorber(range.max, &rho0)?;
            (rho0, models, povm, data)
        }
    };
    let models: Vec<_> = models.into_iter().filter(|m| m.order >= range.min).collect();
    let orders: Vec<usize> = models.iter().map(|m| m.order).collect();
    let labels: Vec<f64> = orders.iter().map(|&k| k as f64).collect();
    let primary = cfg.priors.as_deref().unwrap_or_default()[0].build(labels.clone())?;
    let opt = cfg.optimizer.expect("resolved");
    let cert = run_model_certification(&models, &povm, &data, &primary, &opt)?;
    let fids: Vec<Option<f64>> = models
        .iter()
        .zip(&cert.fits)
        .map(|(m, f)| m.build(&f.couplings).and_then(|rho| fidelity(&rho0, &rho)).ok())
        .collect();
    let mut body = RunBody::new(cfg);
    body.dataset = Some(DatasetSummary {
        total: data.total(),
        outcomes: data.len(),
        settings: match body.config.scenario {
            ScenarioKind::ModelAtomField => 1,
            _ => body.config.model_field_absorber.as_ref().expect("resolved").homodyne.n_angles,
        },
    });
    body.fits = cert
        .fits
        .iter()
        .map(|f| FitSummary {
            label: f.order as f64,
            dim: povm.dim(),
            log_likelihood: Some(f.log_likelihood).filter(|v| v.is_finite()),
            iterations: f.evaluations,
            converged: f.converged,
            lifted_from_smaller: false,
        })
        .collect();
    let mut tables = vec![fidelity_table(&labels, &fids)];
    let mut ct = PlotTable::new("couplings", &["order", "log_likelihood", "effective_coupling", "couplings"]);
    for f in &cert.fits {
        let g: Vec<String> = f.couplings.iter().map(|v| num(*v)).collect();
        ct.push(vec![f.order.to_string(), num(f.log_likelihood), num(f.effective_coupling), g.join(" ")]);
    }
    tables.push(ct);
    body.fidelities = fids;
    body.model_fits = cert.fits.clone();
    let lls = LogLikelihoods(cert.fits.iter().map(|f| f.log_likelihood).collect());
    let dims = vec![povm.dim(); orders.len()];
    let c = Certified { fits: body.fits.clone(), lls, dims, params: orders };
    certify(&mut body, &mut tables, &c, data.total(), opts)?;
    Ok(ScenarioOutcome { body, tables, counts: Some(data.counts().to_vec()) })
}

fn run_conservativeness(cfg: ScenarioConfig) -> Result<ScenarioOutcome> {
    let p = cfg.conservativeness.clone().expect("resolved");
    let state = DensityMatrix::diagonal(&p.spectrum)?;
    let povm = random_von_neumann_bases(state.dim(), p.bases, p.basis_seed)?;
    let dims = cfg.hypotheses.expect("resolved").labels();
    let labels: Vec<f64> = dims.iter().map(|&d| d as f64).collect();
    let ml = cfg.ml.expect("resolved");
    let hyps = cfg.priors.as_deref().unwrap_or_default()[0].build(labels.clone())?;
    let gaps = asymptotic_profile_gaps(&state, &povm, &dims, p.asymptotic_copies, &ml)?;
    let truth = asymptotic_truth_set(&gaps, &labels, p.kl_tol);
    if truth.is_empty() {
        return Err(config_err("no tested dimension reproduces the true probabilities"));
    }
    let kind = cfg.ic.as_ref().and_then(|i| i.kappa).unwrap_or(KappaKind::Diagonal);
    let kappa = kappa_for(kind, &dims, &dims);
    let mut body = RunBody::new(cfg.clone());
    let mut summary = PlotTable::new(
        "conservativeness",
        &["n", "trials", "aic_fraction", "bic_fraction", "mean_eps_i", "mean_eps_ii"],
    );
    let mut tables = Vec::new();
    for &n in &p.n_values {
        let spec = TrialSpec {
            state: &state,
            povm: &povm,
            n,
            dims: &dims,
            hyps: &hyps,
            kappa: kappa.clone(),
            truth: Some(truth.clone()),
            ml,
        };
        let r = conservativeness_trial(&spec, p.trials, cfg.seed)?;
        summary.push(vec![
            n.to_string(),
            r.trials.to_string(),
            num(r.aic_fraction),
            num(r.bic_fraction),
            opt_num(r.mean_eps_i),
            opt_num(r.mean_eps_ii),
        ]);
        let mut t = PlotTable::new(format!("trials_n{n}"), &["trial", "d_rb", "d_aic", "d_bic", "eps_i", "eps_ii"]);
        for rec in &r.records {
            t.push(vec![
                rec.trial.to_string(),
                opt_num(rec.d_rb),
                num(rec.d_aic),
                num(rec.d_bic),
                opt_num(rec.eps_i),
                opt_num(rec.eps_ii),
            ]);
        }
        tables.push(t);
        body.conservativeness.push(ConservativenessSummary {
            n,
            trials: r.trials,
            true_labels: truth.clone(),
            aic_fraction: r.aic_fraction,
            bic_fraction: r.bic_fraction,
            mean_eps_i: r.mean_eps_i,
            mean_eps_ii: r.mean_eps_ii,
        });
    }
    let mut gap_table = PlotTable::new("asymptotic_gaps", &["label", "gap"]);
    for (l, g) in labels.iter().zip(&gaps) {
        gap_table.push(vec![num(*l), num(*g)]);
    }
    tables.insert(0, gap_table);
    tables.insert(0, summary);
    Ok(ScenarioOutcome { body, tables, counts: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_for_every_scenario() {
        for kind in [
            ScenarioKind::RbdcToy,
            ScenarioKind::SourceSingle,
            ScenarioKind::SourceDouble,
            ScenarioKind::ModelAtomField,
            ScenarioKind::ModelFieldAbsorber,
            ScenarioKind::Conservativeness,
        ] {
            let c = ScenarioConfig::defaults(kind, 1);
            assert!(c.n_copies.is_some() && c.priors.is_some() && c.ml.is_some());
        }
    }

    #[test]
    fn foreign_table_is_rejected() {
        let mut c = ScenarioConfig::defaults(ScenarioKind::RbdcToy, 1);
        c.source_double = Some(SourceDoubleParams::default());
        assert!(matches!(c.resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_ranges_are_config_errors() {
        let mut c = ScenarioConfig::defaults(ScenarioKind::RbdcToy, 1);
        c.hypotheses = Some(HypothesisRange { min: 2, max: 11 });
        assert!(matches!(c.resolve(), Err(Error::Config(_))));
        let mut c = ScenarioConfig::defaults(ScenarioKind::ModelFieldAbsorber, 1);
        c.n_copies = Some(1001);
        assert!(matches!(c.resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn toy_run_is_deterministic() {
        let mut c = ScenarioConfig::defaults(ScenarioKind::RbdcToy, 3);
        c.n_copies = Some(2000);
        c.hypotheses = Some(HypothesisRange { min: 2, max: 4 });
        let a = run_scenario(&c, RunOptions { compare_ic: true }).unwrap();
        let b = run_scenario(&c, RunOptions { compare_ic: true }).unwrap();
        assert_eq!(a.body, b.body);
        assert_eq!(a.tables, b.tables);
        let r = a.body.primary().unwrap();
        assert!(r.ic_results.contains_key("AIC") && r.ic_results.contains_key("BIC"));
        assert!(a.tables.iter().any(|t| t.name == "rb_uniform" && t.header == RB_COLUMNS));
    }
}
