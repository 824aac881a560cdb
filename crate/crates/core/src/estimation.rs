//! Multinomial likelihoods, maximum-likelihood states on truncated spaces and
//! dataset simulation.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::LogLikelihoods;
use crate::linalg::{
    c, sqrtm_psd, trace_norm_hermitian, trace_product_hermitian, BlockLayout, BlockOperator, ComplexMatrix,
    DensityMatrix, Povm, ProductPovm,
};
use crate::rng::SeededRng;

/// Click counts for one POVM.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    counts: Vec<u64>,
    total: u64,
    pub povm_id: String,
}

impl Dataset {
    pub fn new(counts: Vec<u64>, povm_id: impl Into<String>) -> Self {
        let total = counts.iter().sum();
        Self { counts, total, povm_id: povm_id.into() }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Counts `round(N p_j)`; the infinite-sample limit used by asymptotic checks.
    pub fn asymptotic(probs: &[f64], n: u64, povm_id: impl Into<String>) -> Self {
        Self::new(probs.iter().map(|p| (p * n as f64).round() as u64).collect(), povm_id)
    }

    fn check(&self, povm: &Povm) -> Result<()> {
        if self.counts.len() != povm.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} counts for {} POVM outcomes",
                self.counts.len(),
                povm.len()
            )));
        }
        Ok(())
    }
}

/// `sum_j n_j log p_j` with `0 log 0 = 0`.
pub fn log_likelihood_from_probs(probs: &[f64], counts: &[u64]) -> f64 {
    let mut acc = 0.0;
    for (&p, &n) in probs.iter().zip(counts) {
        if n == 0 {
            continue;
        }
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += n as f64 * p.min(1.0).ln();
    }
    acc
}

pub fn log_likelihood(rho: &DensityMatrix, povm: &Povm, data: &Dataset) -> Result<f64> {
    data.check(povm)?;
    let probs = crate::linalg::born_probabilities(rho, povm)?;
    Ok(log_likelihood_from_probs(&probs, data.counts()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlConfig {
    /// Bound on `||R rho R - rho||_1` at convergence.
    pub tol: f64,
    pub max_iter: usize,
    /// Iterations between residual evaluations.
    pub check_every: usize,
}

impl Default for MlConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 100_000, check_every: 10 }
    }
}

#[derive(Debug, Clone)]
pub struct MlResult {
    pub estimate: DensityMatrix,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
}

/// Probabilities below this are floored inside `R` only.
const P_FLOOR: f64 = 1e-300;
/// Squared Frobenius norm below which a truncated outcome counts as zero.
pub const ZERO_OPERATOR: f64 = 1e-28;

/// Linear map from block-diagonal states to outcome probabilities.
pub trait Measurement: Sync {
    fn layout(&self) -> &Arc<BlockLayout>;
    fn outcome_count(&self) -> usize;
    /// `Re tr(rho Pi_j)` for every outcome, `rho` given by layout blocks.
    fn probabilities_of(&self, rho: &[ComplexMatrix]) -> Vec<f64>;
    /// `sum_j w_j Pi_j` as layout blocks.
    fn weighted_sum(&self, weights: &[f64]) -> Vec<ComplexMatrix>;
    fn zero_outcomes(&self) -> Vec<bool>;
    /// Places a state of a smaller nested truncation into this space.
    fn embed_state(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        rho.embed(self.layout().dim())
    }
}

impl Measurement for Povm {
    fn layout(&self) -> &Arc<BlockLayout> {
        Povm::layout(self)
    }

    fn outcome_count(&self) -> usize {
        self.len()
    }

    fn probabilities_of(&self, rho: &[ComplexMatrix]) -> Vec<f64> {
        self.outcomes()
            .iter()
            .map(|o| o.blocks().iter().zip(rho).map(|(a, b)| trace_product_hermitian(a, b)).sum::<f64>())
            .collect()
    }

    fn weighted_sum(&self, weights: &[f64]) -> Vec<ComplexMatrix> {
        let mut r: Vec<ComplexMatrix> =
            Povm::layout(self).blocks().iter().map(|b| DMatrix::zeros(b.len(), b.len())).collect();
        for (o, &w) in self.outcomes().iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            for (acc, b) in r.iter_mut().zip(o.blocks()) {
                for (x, y) in acc.as_mut_slice().iter_mut().zip(b.as_slice()) {
                    *x += y * w;
                }
            }
        }
        r
    }

    fn zero_outcomes(&self) -> Vec<bool> {
        self.outcomes().iter().map(|o| o.frobenius_norm_sq() <= ZERO_OPERATOR).collect()
    }
}

impl Measurement for ProductPovm {
    fn layout(&self) -> &Arc<BlockLayout> {
        ProductPovm::layout(self)
    }

    fn outcome_count(&self) -> usize {
        self.len()
    }

    fn probabilities_of(&self, rho: &[ComplexMatrix]) -> Vec<f64> {
        self.probabilities_blocks(rho)
    }

    fn weighted_sum(&self, weights: &[f64]) -> Vec<ComplexMatrix> {
        self.weighted_sum_blocks(weights)
    }

    fn zero_outcomes(&self) -> Vec<bool> {
        ProductPovm::zero_outcomes(self, ZERO_OPERATOR)
    }

    /// Both factors are prefix truncations of equal dimension.
    fn embed_state(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        let (a, b) = self.factors();
        let small = (rho.dim() as f64).sqrt().round() as usize;
        if small * small != rho.dim() || a.dim() != b.dim() || small > a.dim() {
            return Err(Error::DimensionMismatch("product embedding needs equal square factors".into()));
        }
        let big = a.dim();
        let idx = |i: usize| (i / small) * big + i % small;
        let n = self.dim();
        let mut m = ComplexMatrix::zeros(n, n);
        for r in 0..rho.dim() {
            for col in 0..rho.dim() {
                m[(idx(r), idx(col))] = rho.matrix()[(r, col)];
            }
        }
        DensityMatrix::new(m)
    }
}

struct Solver<'a, M: Measurement + ?Sized> {
    measurement: &'a M,
    /// Counts on usable outcomes, zero elsewhere.
    counts: Vec<f64>,
    n_active: f64,
}

impl<M: Measurement + ?Sized> Solver<'_, M> {
    fn probs(&self, rho: &[ComplexMatrix]) -> Vec<f64> {
        self.measurement.probabilities_of(rho)
    }

    fn loglik(&self, probs: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (&p, &n) in probs.iter().zip(&self.counts) {
            if n == 0.0 {
                continue;
            }
            if p <= 0.0 {
                return f64::NEG_INFINITY;
            }
            acc += n * p.ln();
        }
        acc
    }

    /// `log L(new) - log L(old)`, accurate to the size of the difference.
    fn gain(&self, old: &[f64], new: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((&p, &q), &n) in old.iter().zip(new).zip(&self.counts) {
            if n == 0.0 {
                continue;
            }
            if q <= 0.0 {
                return f64::NEG_INFINITY;
            }
            acc += n * ((q - p) / p).ln_1p();
        }
        acc
    }

    fn r_operator(&self, probs: &[f64]) -> Vec<ComplexMatrix> {
        let w: Vec<f64> = probs
            .iter()
            .zip(&self.counts)
            .map(|(&p, &n)| if n == 0.0 { 0.0 } else { n / self.n_active / p.max(P_FLOOR) })
            .collect();
        self.measurement.weighted_sum(&w)
    }
}

const MAX_STEP: f64 = 64.0;

fn fixed_point_residual(r: &[ComplexMatrix], rho: &[ComplexMatrix]) -> f64 {
    r.iter().zip(rho).map(|(rb, pb)| trace_norm_hermitian(&(rb * pb * rb - pb))).sum()
}

/// Factor of `G rho G / tr` with `G = I + t (R - I)`.
fn diluted_step(r: &[ComplexMatrix], factor: &[ComplexMatrix], t: f64) -> Vec<ComplexMatrix> {
    let mut next: Vec<ComplexMatrix> = r
        .iter()
        .zip(factor)
        .map(|(rb, ab)| if t == 1.0 { rb * ab } else { rb * ab * c(t, 0.0) + ab * c(1.0 - t, 0.0) })
        .collect();
    normalize_factor(&mut next);
    next
}

fn gram(factor: &[ComplexMatrix]) -> Vec<ComplexMatrix> {
    factor.iter().map(|a| a * a.adjoint()).collect()
}

fn normalize_factor(blocks: &mut [ComplexMatrix]) {
    let tr: f64 = blocks.iter().map(|b| b.norm_squared()).sum();
    let s = c(1.0 / tr.sqrt(), 0.0);
    for b in blocks.iter_mut() {
        *b *= s;
    }
}

/// Maximum-likelihood state over the POVM's space, started from `I/d`.
pub fn ml_state(povm: &Povm, data: &Dataset, cfg: &MlConfig) -> Result<MlResult> {
    ml_fit(povm, data, cfg, None, None)
}

/// [`ml_state`] from `init`. With `trace` supplied, the log-likelihood of
/// every accepted iterate is appended.
pub fn ml_state_from(
    povm: &Povm,
    data: &Dataset,
    cfg: &MlConfig,
    init: &DensityMatrix,
    trace: Option<&mut Vec<f64>>,
) -> Result<MlResult> {
    ml_fit(povm, data, cfg, Some(init), trace)
}

/// Diluted `R rho R` ascent for any [`Measurement`]. Each iteration
/// brackets the dilution `t` by doubling or halving so the likelihood never
/// decreases beyond rounding.
pub fn ml_fit<M: Measurement + ?Sized>(
    measurement: &M,
    data: &Dataset,
    cfg: &MlConfig,
    init: Option<&DensityMatrix>,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<MlResult> {
    let layout = measurement.layout().clone();
    if data.len() != measurement.outcome_count() {
        return Err(Error::DimensionMismatch(format!(
            "{} counts for {} outcomes",
            data.len(),
            measurement.outcome_count()
        )));
    }
    if data.total() == 0 {
        return Err(Error::InvalidArgument("dataset has no counts".into()));
    }
    // The iterate is kept as a factor `A` with `rho = A A^dag`, so rounding
    // can never push it out of the positive cone.
    let mut factor: Vec<ComplexMatrix> = match init {
        Some(s) => {
            if s.dim() != layout.dim() {
                return Err(Error::DimensionMismatch("initial state vs POVM".into()));
            }
            BlockOperator::from_dense(layout.clone(), s.matrix()).blocks().iter().map(sqrtm_psd).collect()
        }
        None => layout
            .blocks()
            .iter()
            .map(|b| ComplexMatrix::identity(b.len(), b.len()) / c((layout.dim() as f64).sqrt(), 0.0))
            .collect(),
    };
    normalize_factor(&mut factor);
    let mut rho = gram(&factor);
    let zero = measurement.zero_outcomes();
    let impossible = data.counts().iter().zip(&zero).any(|(&n, &z)| n > 0 && z);
    let counts: Vec<f64> = data.counts().iter().zip(&zero).map(|(&n, &z)| if z { 0.0 } else { n as f64 }).collect();
    let n_active: f64 = counts.iter().sum();
    let finish = |rho: Vec<ComplexMatrix>, iterations, converged, residual| -> Result<MlResult> {
        let estimate = DensityMatrix::project_psd_blocks(&BlockOperator::new(layout.clone(), rho)?)?;
        let blocks = BlockOperator::from_dense(layout.clone(), estimate.matrix());
        // Reported from exact (unfloored) probabilities of the estimate.
        let probs: Vec<f64> =
            measurement.probabilities_of(blocks.blocks()).into_iter().map(|p| p.clamp(0.0, 1.0)).collect();
        let log_likelihood =
            if impossible { f64::NEG_INFINITY } else { log_likelihood_from_probs(&probs, data.counts()) };
        Ok(MlResult { estimate, log_likelihood, iterations, converged, residual })
    };
    if n_active == 0.0 {
        return finish(rho, 0, true, 0.0);
    }
    let solver = Solver { measurement, counts, n_active };
    let mut probs = solver.probs(&rho);
    let mut ll = solver.loglik(&probs);
    if let Some(t) = trace.as_deref_mut() {
        t.push(ll);
    }
    let mut step = 1.0f64;
    let mut converged = false;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let check_every = cfg.check_every.max(1);
    // Rounding bound on a computed gain; steps within it count as ascent.
    let noise = 64.0 * f64::EPSILON * solver.n_active;

    while iterations < cfg.max_iter {
        let r = solver.r_operator(&probs);
        if iterations % check_every == 0 {
            residual = fixed_point_residual(&r, &rho);
            if residual < cfg.tol {
                converged = true;
                break;
            }
        }
        let eval = |t: f64| {
            let next = diluted_step(&r, &factor, t);
            let state = gram(&next);
            let p = solver.probs(&state);
            let gain = solver.gain(&probs, &p);
            (next, state, p, gain)
        };
        // Bracket the step length by doubling or halving around the last one.
        let mut best = eval(step);
        let mut best_t = step;
        let mut halvings = 0;
        while best.3 < -noise && halvings < 60 {
            best_t *= 0.5;
            best = eval(best_t);
            halvings += 1;
        }
        if halvings == 0 {
            while best_t < MAX_STEP {
                let cand = eval(best_t * 2.0);
                if cand.3 > best.3 {
                    best = cand;
                    best_t *= 2.0;
                } else {
                    break;
                }
            }
            if best_t == step {
                let mut t = step;
                while t > 1e-6 {
                    let cand = eval(t * 0.5);
                    if cand.3 > best.3 {
                        best = cand;
                        t *= 0.5;
                        best_t = t;
                    } else {
                        break;
                    }
                }
            }
        }
        iterations += 1;
        if !(best.3 >= -noise) {
            // No ascent direction at floating-point resolution.
            if let Some(t) = trace.as_deref_mut() {
                t.push(ll);
            }
            break;
        }
        step = best_t;
        factor = best.0;
        rho = best.1;
        probs = best.2;
        ll += best.3;
        if let Some(t) = trace.as_deref_mut() {
            t.push(ll);
        }
    }
    if !converged {
        residual = fixed_point_residual(&solver.r_operator(&probs), &rho);
        converged = residual < cfg.tol;
    }
    finish(rho, iterations, converged, residual)
}

#[derive(Debug, Clone)]
pub struct ProfileFit {
    pub dim: usize,
    pub fit: MlResult,
    /// The fit was replaced by the embedded estimate of the previous
    /// dimension because the solver had not climbed past it.
    pub lifted_from_smaller: bool,
}

/// `log L_d` for every `d` in `dims` (increasing) from the outcome-wise
/// truncated POVM.
pub fn profile_likelihoods(
    povm: &Povm,
    data: &Dataset,
    dims: &[usize],
    cfg: &MlConfig,
) -> Result<(LogLikelihoods, Vec<ProfileFit>)> {
    if dims.last().is_some_and(|&d| d > povm.dim()) {
        return Err(Error::DimensionMismatch("tested dimension exceeds POVM dimension".into()));
    }
    profile_likelihoods_by(dims, |d| povm.truncate(d), data, cfg)
}

/// Profile over nested measurements `build(d)`. Dimensions are solved
/// independently; a value below the previous dimension's is replaced by the
/// embedded smaller estimate, which is feasible in the larger space and
/// reproduces the same probabilities.
pub fn profile_likelihoods_by<M, F>(
    dims: &[usize],
    build: F,
    data: &Dataset,
    cfg: &MlConfig,
) -> Result<(LogLikelihoods, Vec<ProfileFit>)>
where
    M: Measurement + Send,
    F: Fn(usize) -> Result<M> + Sync,
{
    if dims.is_empty() || dims.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("dims must be nonempty and nondecreasing".into()));
    }
    let fits: Vec<(M, MlResult)> = dims
        .par_iter()
        .map(|&d| {
            let m = build(d)?;
            let fit = ml_fit(&m, data, cfg, None, None)?;
            Ok((m, fit))
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<ProfileFit> = Vec::with_capacity(fits.len());
    for (&d, (m, fit)) in dims.iter().zip(fits) {
        let mut pf = ProfileFit { dim: d, fit, lifted_from_smaller: false };
        if let Some(prev) = out.last() {
            if pf.fit.log_likelihood < prev.fit.log_likelihood {
                pf = ProfileFit {
                    dim: d,
                    fit: MlResult {
                        estimate: m.embed_state(&prev.fit.estimate)?,
                        log_likelihood: prev.fit.log_likelihood,
                        ..pf.fit
                    },
                    lifted_from_smaller: true,
                };
            }
        }
        out.push(pf);
    }
    let ll = LogLikelihoods(out.iter().map(|f| f.fit.log_likelihood).collect());
    Ok((ll, out))
}

const PROB_SUM_TOL: f64 = 1e-8;
const NEGATIVE_PROB_TOL: f64 = 1e-10;

/// Exact multinomial draw by sequential conditional binomials.
pub fn sample_multinomial_with(probs: &[f64], n: u64, rng: &mut SeededRng) -> Result<Vec<u64>> {
    if let Some(p) = probs.iter().find(|&&p| p < -NEGATIVE_PROB_TOL || !p.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid probability {p}")));
    }
    let clipped: Vec<f64> = probs.iter().map(|p| p.max(0.0)).collect();
    let sum: f64 = clipped.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::InvalidArgument(format!("probabilities sum to {sum}")));
    }
    let mut counts = vec![0u64; probs.len()];
    let mut remaining = n;
    let mut mass = sum;
    for (j, &p) in clipped.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if j + 1 == clipped.len() {
            counts[j] = remaining;
            break;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let k = if q >= 1.0 {
            remaining
        } else if q <= 0.0 {
            0
        } else {
            Binomial::new(remaining, q).expect("valid binomial").sample(rng)
        };
        counts[j] = k;
        remaining -= k;
        mass -= p;
    }
    Ok(counts)
}

pub fn sample_multinomial(probs: &[f64], n: u64, seed: u64, povm_id: &str) -> Result<Dataset> {
    let mut rng = SeededRng::from_seed(seed);
    Ok(Dataset::new(sample_multinomial_with(probs, n, &mut rng)?, povm_id))
}

/// Samples `n` copies of `rho` measured with `povm`.
pub fn simulate_dataset(
    rho: &DensityMatrix,
    povm: &Povm,
    n: u64,
    rng: &mut SeededRng,
    povm_id: &str,
) -> Result<Dataset> {
    let probs = crate::linalg::born_probabilities(rho, povm)?;
    let sum: f64 = probs.iter().sum();
    let normed: Vec<f64> = probs.iter().map(|p| p / sum).collect();
    Ok(Dataset::new(sample_multinomial_with(&normed, n, rng)?, povm_id))
}

/// `n` copies for each of `groups` equal-length contiguous outcome groups
/// (one per measurement setting), each group renormalized before sampling.
pub fn sample_per_setting(probs: &[f64], groups: usize, n: u64, rng: &mut SeededRng, povm_id: &str) -> Result<Dataset> {
    if groups == 0 || probs.len() % groups != 0 {
        return Err(Error::InvalidArgument(format!("{} outcomes do not split into {groups} settings", probs.len())));
    }
    let width = probs.len() / groups;
    let ids: Vec<usize> = (0..probs.len()).map(|j| j / width).collect();
    sample_by_groups(probs, &ids, &vec![n; groups], rng, povm_id)
}

/// `copies[g]` copies for setting `g`, where outcome `j` belongs to setting
/// `group_of[j]`. Settings are sampled in increasing id order.
pub fn sample_by_groups(
    probs: &[f64],
    group_of: &[usize],
    copies: &[u64],
    rng: &mut SeededRng,
    povm_id: &str,
) -> Result<Dataset> {
    if group_of.len() != probs.len() {
        return Err(Error::DimensionMismatch(format!("{} group ids for {} outcomes", group_of.len(), probs.len())));
    }
    let groups = copies.len();
    if group_of.iter().any(|&g| g >= groups) {
        return Err(Error::InvalidArgument("group id without a copy count".into()));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); groups];
    for (j, &g) in group_of.iter().enumerate() {
        members[g].push(j);
    }
    let mut counts = vec![0u64; probs.len()];
    for (idx, &n) in members.iter().zip(copies).filter(|(m, _)| !m.is_empty()) {
        let mass: f64 = idx.iter().map(|&j| probs[j].max(0.0)).sum();
        if mass <= 0.0 {
            return Err(Error::InvalidArgument("setting with zero probability mass".into()));
        }
        let normed: Vec<f64> = idx.iter().map(|&j| probs[j].max(0.0) / mass).collect();
        for (&j, k) in idx.iter().zip(sample_multinomial_with(&normed, n, rng)?) {
            counts[j] = k;
        }
    }
    Ok(Dataset::new(counts, povm_id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{
        diag_real, fidelity, haar_unitary, max_abs, random_von_neumann_bases, random_von_neumann_basis,
    };

    fn toy_state() -> DensityMatrix {
        DensityMatrix::diagonal(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn likelihood_closed_forms() {
        let povm = Povm::computational_basis(2);
        let rho = DensityMatrix::fock(2, 0);
        assert_eq!(log_likelihood(&rho, &povm, &Dataset::new(vec![9, 0], "z")).unwrap(), 0.0);
        assert_eq!(log_likelihood(&rho, &povm, &Dataset::new(vec![9, 1], "z")).unwrap(), f64::NEG_INFINITY);
        let mixed = DensityMatrix::maximally_mixed(2);
        let v = log_likelihood(&mixed, &povm, &Dataset::new(vec![7, 3], "z")).unwrap();
        assert!((v - 10.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!(log_likelihood(&mixed, &povm, &Dataset::new(vec![7, 3, 1], "z")).is_err());
    }

    #[test]
    fn ml_single_basis_is_frequencies() {
        let u = haar_unitary(2, &mut SeededRng::from_seed(8));
        let povm = Povm::from_basis(&u, "b").unwrap();
        let data = Dataset::new(vec![60, 40], "b");
        let fit = ml_state(&povm, &data, &MlConfig::default()).unwrap();
        assert!(fit.converged, "{} {}", fit.residual, fit.iterations);
        let in_basis = u.adjoint() * fit.estimate.matrix() * &u;
        assert!(max_abs(&(in_basis - diag_real(&[0.6, 0.4]))) < 1e-8);
        assert!((fit.log_likelihood - (60.0 * 0.6f64.ln() + 40.0 * 0.4f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn ml_pure_outcome() {
        let povm = Povm::computational_basis(2);
        let fit = ml_state(&povm, &Dataset::new(vec![500, 0], "z"), &MlConfig::default()).unwrap();
        assert!((fit.estimate.matrix()[(0, 0)].re - 1.0).abs() < 1e-6);
        assert!(fit.log_likelihood.abs() < 1e-5);
    }

    #[test]
    fn ml_monotone_and_asymptotic_fidelity() {
        // Informationally complete on d = 3 with a full-rank target.
        let povm = random_von_neumann_bases(3, 4, 21).unwrap();
        let target = DensityMatrix::diagonal(&[0.5, 0.3, 0.2]).unwrap();
        let u = haar_unitary(3, &mut SeededRng::from_seed(2));
        let target = target.conjugate(&u).unwrap();
        let probs = crate::linalg::born_probabilities(&target, &povm).unwrap();
        let data = Dataset::asymptotic(&probs, 1_000_000_000, "ic");
        let mut trace = Vec::new();
        let fit =
            ml_state_from(&povm, &data, &MlConfig::default(), &DensityMatrix::maximally_mixed(3), Some(&mut trace))
                .unwrap();
        assert!(fit.converged, "residual {}", fit.residual);
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-11 * w[0].abs().max(1.0));
        }
        assert!(fidelity(&fit.estimate, &target).unwrap() > 1.0 - 1e-6);
    }

    #[test]
    fn ml_basis_covariance() {
        let povm = random_von_neumann_bases(3, 4, 5).unwrap();
        let data = Dataset::new((0..12).map(|j| 10 + 7 * (j % 5) as u64).collect(), "x");
        let u = haar_unitary(3, &mut SeededRng::from_seed(77));
        let a = ml_state(&povm, &data, &MlConfig::default()).unwrap();
        let b = ml_state(&povm.conjugate(&u).unwrap(), &data, &MlConfig::default()).unwrap();
        let rotated = a.estimate.conjugate(&u).unwrap();
        assert!(max_abs(&(rotated.matrix() - b.estimate.matrix())) < 1e-7);
    }

    #[test]
    fn profile_repeated_and_degenerate_dims() {
        let povm = random_von_neumann_bases(10, 2, 3).unwrap();
        let probs = crate::linalg::born_probabilities(&toy_state(), &povm).unwrap();
        let data = sample_multinomial(&probs, 2000, 1, "toy").unwrap();
        let cfg = MlConfig { tol: 1e-8, max_iter: 20_000, check_every: 10 };
        let (ll, _) = profile_likelihoods(&povm, &data, &[4, 4], &cfg).unwrap();
        assert_eq!(ll.0[0], ll.0[1]);

        // Diagonal POVM, last diagonal element zero: d = full and full-1 agree.
        let diag = Povm::computational_basis(4);
        let d = Dataset::new(vec![30, 50, 20, 0], "z");
        let (ll, _) = profile_likelihoods(&diag, &d, &[3, 4], &MlConfig::default()).unwrap();
        assert!((ll.0[0] - ll.0[1]).abs() < 1e-8);
    }

    #[test]
    fn multinomial_cases() {
        assert_eq!(sample_multinomial(&[0.5, 0.5], 0, 1, "x").unwrap().counts(), &[0, 0]);
        assert_eq!(sample_multinomial(&[1.0, 0.0, 0.0], 17, 1, "x").unwrap().counts(), &[17, 0, 0]);
        let a = sample_multinomial(&[0.2, 0.3, 0.5], 1000, 9, "x").unwrap();
        let b = sample_multinomial(&[0.2, 0.3, 0.5], 1000, 9, "x").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total(), 1000);
        let n = 1_000_000u64;
        let probs = [0.2, 0.3, 0.5];
        let big = sample_multinomial(&probs, n, 4, "x").unwrap();
        for (k, p) in big.counts().iter().zip(probs) {
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((*k as f64 / n as f64 - p).abs() < 4.0 * sigma);
        }
        assert!(sample_multinomial(&[1.1, -0.1], 10, 0, "x").is_err());
    }

    #[test]
    fn zero_operator_outcomes_give_neg_infinity() {
        let povm = random_von_neumann_basis(4, 3).unwrap();
        let comp = Povm::computational_basis(4).truncate(2).unwrap();
        let _ = povm;
        let data = Dataset::new(vec![5, 5, 1, 0], "z");
        let fit = ml_state(&comp, &data, &MlConfig::default()).unwrap();
        assert_eq!(fit.log_likelihood, f64::NEG_INFINITY);
    }
}
