//! Interaction models whose reduced states feed model certification: a
//! two-level atom coupled to several field modes, a field mode coupled to
//! several absorbers, and binned homodyne detection of a single mode.
//!
//! Atomic basis order is `(|g>, |e>)`. Evolution time is fixed to 1.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::legendre::GaussLegendre;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::certification::ParametricModel;
use crate::error::{Error, Result};
use crate::linalg::{
    c, expm_hermitian, hermitize, BlockLayout, BlockOperator, ComplexMatrix, ComplexVector, DensityMatrix, Povm, C64,
};
use crate::rng::SeededRng;

/// Coupling strengths `(g_1, ..., g_k)`; empty means order 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingRow(Vec<f64>);

impl CouplingRow {
    pub fn new(g: Vec<f64>) -> Result<Self> {
        if let Some(v) = g.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("coupling {v} must be finite and nonnegative")));
        }
        Ok(Self(g))
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// `sqrt(sum g_j^2)`.
pub fn effective_coupling(g: &CouplingRow) -> f64 {
    g.0.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Atom-field Hamiltonian on `|g,vac>, |e,vac>, |g,1_1>, ..., |g,1_k>`,
/// the sector reachable from vacuum fields.
pub fn atom_field_hamiltonian(g: &CouplingRow) -> ComplexMatrix {
    let k = g.order();
    let mut h = ComplexMatrix::zeros(k + 2, k + 2);
    for (j, &gj) in g.values().iter().enumerate() {
        h[(1, j + 2)] = c(gj, 0.0);
        h[(j + 2, 1)] = c(gj, 0.0);
    }
    h
}

/// Atom state after `exp(-i H)` with every field mode starting in vacuum,
/// fields traced out.
pub fn atom_field_reduced_state(rho0: &DensityMatrix, g: &CouplingRow) -> Result<DensityMatrix> {
    if rho0.dim() != 2 {
        return Err(Error::DimensionMismatch(format!("atom state has dimension {}", rho0.dim())));
    }
    if g.order() == 0 {
        return Ok(rho0.clone());
    }
    let d = g.order() + 2;
    let u = expm_hermitian(&atom_field_hamiltonian(g), 1.0);
    let mut joint = ComplexMatrix::zeros(d, d);
    joint.view_mut((0, 0), (2, 2)).copy_from(rho0.matrix());
    let out = &u * joint * u.adjoint();
    let mut red = ComplexMatrix::zeros(2, 2);
    red[(0, 0)] = out[(0, 0)] + (2..d).map(|i| out[(i, i)]).sum::<C64>();
    red[(1, 1)] = out[(1, 1)];
    red[(0, 1)] = out[(0, 1)];
    red[(1, 0)] = out[(1, 0)];
    DensityMatrix::from_numerical(hermitize(&red))
}

/// Largest joint basis the field-absorber model will build.
pub const TC_STATE_LIMIT: usize = 1 << 16;

/// Field state after `exp(-i H)` with every absorber starting in `|g>`,
/// absorbers traced out. Evolution is exponentiated per total-excitation
/// sector.
pub fn tavis_cummings_reduced_state(rho0: &DensityMatrix, g: &CouplingRow) -> Result<DensityMatrix> {
    let k = g.order();
    if k == 0 {
        return Ok(rho0.clone());
    }
    if k >= usize::BITS as usize - 1 {
        return Err(Error::SpaceTooLarge { dim: k, limit: usize::BITS as usize - 2 });
    }
    let d = rho0.dim();
    let top = (0..d).rev().find(|&n| rho0.matrix()[(n, n)].re > 0.0).unwrap_or(0);
    // Sector E: states (n, mask) with n + popcount(mask) = E, n < d.
    let mut states_total = 0;
    let mut sectors: Vec<Vec<(usize, usize)>> = Vec::with_capacity(top + 1);
    for e in 0..=top {
        let states: Vec<(usize, usize)> = (0..1usize << k)
            .filter_map(|mask| {
                let exc = mask.count_ones() as usize;
                (exc <= e && e - exc < d).then(|| (e - exc, mask))
            })
            .collect();
        states_total += states.len();
        if states_total > TC_STATE_LIMIT {
            return Err(Error::SpaceTooLarge { dim: states_total, limit: TC_STATE_LIMIT });
        }
        sectors.push(states);
    }
    // Column of exp(-i H_E) for the initial state |E, g...g>.
    let evolved: Vec<Vec<C64>> = sectors
        .iter()
        .enumerate()
        .map(|(e, states)| {
            let index: BTreeMap<(usize, usize), usize> = states.iter().enumerate().map(|(i, &s)| (s, i)).collect();
            let m = states.len();
            let mut h = ComplexMatrix::zeros(m, m);
            for (i, &(n, mask)) in states.iter().enumerate() {
                for (j, &gj) in g.values().iter().enumerate() {
                    // sigma_{-,j} a^dag: absorber j decays, one photon added.
                    if mask & (1 << j) != 0 {
                        if let Some(&t) = index.get(&(n + 1, mask & !(1 << j))) {
                            let amp = gj * ((n + 1) as f64).sqrt();
                            h[(t, i)] += c(amp, 0.0);
                            h[(i, t)] += c(amp, 0.0);
                        }
                    }
                }
            }
            let u = expm_hermitian(&h, 1.0);
            let start = index[&(e, 0)];
            u.column(start).iter().copied().collect()
        })
        .collect();
    let mut out = ComplexMatrix::zeros(d, d);
    for n in 0..=top {
        for m in 0..=top {
            let w = rho0.matrix()[(n, m)];
            if w == c(0.0, 0.0) {
                continue;
            }
            for (a, &(pn, mask)) in sectors[n].iter().enumerate() {
                for (b, &(pm, mask_b)) in sectors[m].iter().enumerate() {
                    if mask == mask_b {
                        out[(pn, pm)] += w * evolved[n][a] * evolved[m][b].conj();
                    }
                }
            }
        }
    }
    DensityMatrix::from_numerical(hermitize(&out))
}

/// Equally weighted random-phase binned homodyne measurement on `d` Fock levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomodyneConfig {
    pub n_angles: usize,
    pub d: usize,
    pub x_range: (f64, f64),
    pub n_bins: usize,
    /// Gauss-Legendre order per bin.
    pub quadrature_order: usize,
    /// Outer limit of the two tail bins.
    pub tail_extent: f64,
}

impl Default for HomodyneConfig {
    fn default() -> Self {
        Self { n_angles: 10, d: 9, x_range: (-6.0, 6.0), n_bins: 101, quadrature_order: 16, tail_extent: 16.0 }
    }
}

impl HomodyneConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.x_range;
        if self.d == 0 || self.n_angles < self.d {
            return Err(Error::InvalidArgument(format!(
                "{} angles cannot resolve dimension {}",
                self.n_angles, self.d
            )));
        }
        if !(lo < hi) || self.n_bins < 2 || self.quadrature_order == 0 {
            return Err(Error::InvalidArgument("quadrature window needs x_min < x_max and at least two bins".into()));
        }
        if !(self.tail_extent > hi.max(-lo)) {
            return Err(Error::InvalidArgument("tail extent must exceed the window".into()));
        }
        Ok(())
    }

    /// Interior bin edges, `n_bins + 1` values.
    pub fn edges(&self) -> Vec<f64> {
        let (lo, hi) = self.x_range;
        (0..=self.n_bins).map(|i| lo + (hi - lo) * i as f64 / self.n_bins as f64).collect()
    }
}

/// `<n|x>` for `n < d` with `x = (a + a^dag)/sqrt 2`.
pub fn hermite_functions(x: f64, d: usize) -> Vec<f64> {
    let mut psi = Vec::with_capacity(d);
    if d == 0 {
        return psi;
    }
    psi.push(std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp());
    if d > 1 {
        psi.push(std::f64::consts::SQRT_2 * x * psi[0]);
    }
    for n in 1..d.saturating_sub(1) {
        let next = (2.0 / (n + 1) as f64).sqrt() * x * psi[n] - (n as f64 / (n + 1) as f64).sqrt() * psi[n - 1];
        psi.push(next);
    }
    psi
}

/// `int_a^b <n|x><x|m> dx` by Gauss-Legendre panels of width at most `panel`.
fn overlap_matrix(a: f64, b: f64, d: usize, rule: &GaussLegendre, panel: f64) -> Vec<f64> {
    let pieces = ((b - a) / panel).ceil().max(1.0) as usize;
    let mut acc = vec![0.0; d * d];
    for p in 0..pieces {
        let lo = a + (b - a) * p as f64 / pieces as f64;
        let hi = a + (b - a) * (p + 1) as f64 / pieces as f64;
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        for &(node, weight) in rule.as_node_weight_pairs() {
            let psi = hermite_functions(mid + half * node, d);
            for n in 0..d {
                for m in 0..d {
                    acc[n * d + m] += half * weight * psi[n] * psi[m];
                }
            }
        }
    }
    acc
}

/// Outcomes `int_bin e^{i theta N}|x><x|e^{-i theta N} dx` for angles
/// `theta_k = k pi / n_angles`, labelled `angle:bin`; bin 0 and the last bin
/// are the lower and upper tails.
pub fn homodyne_povm(cfg: &HomodyneConfig) -> Result<Povm> {
    cfg.validate()?;
    let d = cfg.d;
    let rule = GaussLegendre::new(NonZeroUsize::new(cfg.quadrature_order).expect("order checked"));
    let edges = cfg.edges();
    let width = edges[1] - edges[0];
    let mut bins = Vec::with_capacity(cfg.n_bins + 2);
    bins.push(overlap_matrix(-cfg.tail_extent, edges[0], d, &rule, width));
    for w in edges.windows(2) {
        bins.push(overlap_matrix(w[0], w[1], d, &rule, width));
    }
    bins.push(overlap_matrix(edges[cfg.n_bins], cfg.tail_extent, d, &rule, width));
    let layout = Arc::new(BlockLayout::single(d));
    let mut groups = Vec::with_capacity(cfg.n_angles);
    for k in 0..cfg.n_angles {
        let theta = std::f64::consts::PI * k as f64 / cfg.n_angles as f64;
        let mut outcomes = Vec::with_capacity(bins.len());
        let mut labels = Vec::with_capacity(bins.len());
        for (b, ov) in bins.iter().enumerate() {
            let m = ComplexMatrix::from_fn(d, d, |n, mm| {
                let phase = theta * (n as f64 - mm as f64);
                c(phase.cos(), phase.sin()) * ov[n * d + mm]
            });
            outcomes.push(BlockOperator::new(layout.clone(), vec![m])?);
            labels.push(format!("{k}:{b}"));
        }
        let group = Povm::new_unchecked(layout.clone(), outcomes, labels)?;
        let err = group.completeness_error();
        if err > 1e-8 {
            return Err(Error::Integration(format!("angle {k} bins sum to identity only within {err:e}")));
        }
        groups.push(group);
    }
    Povm::combine_equally(&groups)
}

/// Bin edges and tail limits, one value per line after a comment header.
pub fn format_homodyne_grid(cfg: &HomodyneConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# homodyne bin edges: first and last lines bound the tail bins");
    let _ = writeln!(out, "# angles {} dim {} order {}", cfg.n_angles, cfg.d, cfg.quadrature_order);
    let _ = writeln!(out, "{:.16e}", -cfg.tail_extent);
    for e in cfg.edges() {
        let _ = writeln!(out, "{e:.16e}");
    }
    let _ = writeln!(out, "{:.16e}", cfg.tail_extent);
    out
}

/// Reads edges written by [`format_homodyne_grid`].
pub fn parse_homodyne_grid(text: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.parse::<f64>().map_err(|e| Error::Fixture(format!("bad edge {l:?}: {e}"))))
        .collect::<Result<_>>()?;
    if values.len() < 4 || values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Fixture("edges must be increasing with at least two interior bins".into()));
    }
    Ok(values)
}

/// Four rank-one qubit outcomes `w_k w_k^dag` with `w_k = S^{-1/2} v_k`,
/// `S = sum v v^dag`, for Gaussian random `v_k`.
pub fn random_rank_one_qubit_povm(count: usize, seed: u64) -> Result<Vec<ComplexVector>> {
    if count < 4 {
        return Err(Error::InvalidArgument("an informationally complete qubit POVM has at least 4 outcomes".into()));
    }
    let mut rng = SeededRng::from_seed(seed);
    let vs: Vec<ComplexVector> = (0..count)
        .map(|_| ComplexVector::from_fn(2, |_, _| c(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))))
        .collect();
    let s = vs.iter().fold(ComplexMatrix::zeros(2, 2), |acc, v| acc + v * v.adjoint());
    let inv_sqrt = crate::linalg::hermitian_function(&s, |x| c(1.0 / x.sqrt(), 0.0));
    Ok(vs.iter().map(|v| &inv_sqrt * v).collect())
}

pub fn povm_from_vectors(vectors: &[ComplexVector]) -> Result<Povm> {
    let outcomes = vectors.iter().map(|w| w * w.adjoint()).collect();
    let labels = (0..vectors.len()).map(|k| format!("atom{k}")).collect();
    Povm::from_dense(outcomes, labels)
}

/// `re0 im0 re1 im1` per outcome vector.
pub fn format_atom_povm(vectors: &[ComplexVector]) -> String {
    let mut out = String::from("# rank-one atom outcomes w w^dag, w = (re0 + i im0, re1 + i im1), basis (g, e)\n");
    for w in vectors {
        let _ = writeln!(out, "{:.16e} {:.16e} {:.16e} {:.16e}", w[0].re, w[0].im, w[1].re, w[1].im);
    }
    out
}

pub fn parse_atom_povm(text: &str) -> Result<Vec<ComplexVector>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let v: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::Fixture(format!("bad value {t:?}: {e}"))))
                .collect::<Result<_>>()?;
            if v.len() != 4 {
                return Err(Error::Fixture(format!("expected 4 values, got {}", v.len())));
            }
            Ok(ComplexVector::from_vec(vec![c(v[0], v[1]), c(v[2], v[3])]))
        })
        .collect()
}

/// Frozen atom POVM, seed 7.
pub const ATOM_POVM: &str = include_str!("../fixtures/atom_povm.txt");
/// Frozen homodyne grid for the default configuration.
pub const HOMODYNE_GRID: &str = include_str!("../fixtures/homodyne_grid.txt");

pub const COUPLING_MAX: f64 = 3.0;

/// Orders `0..=k_max` of the atom-field model around `rho0`.
pub fn model_builders_atom_field(k_max: usize, rho0: &DensityMatrix) -> Result<Vec<ParametricModel>> {
    if k_max == 0 {
        return Err(Error::InvalidArgument("model set needs K >= 1".into()));
    }
    Ok((0..=k_max)
        .map(|k| {
            let rho0 = rho0.clone();
            ParametricModel::new(
                k,
                vec![(0.0, COUPLING_MAX); k],
                Arc::new(move |g: &[f64]| atom_field_reduced_state(&rho0, &CouplingRow::new(g.to_vec())?)),
            )
        })
        .collect())
}

/// Orders `0..=k_max` of the field-absorber model around `rho0` (dimension `d`).
pub fn model_builders_field_absorber(k_max: usize, rho0: &DensityMatrix) -> Result<Vec<ParametricModel>> {
    if k_max == 0 {
        return Err(Error::InvalidArgument("model set needs K >= 1".into()));
    }
    Ok((0..=k_max)
        .map(|k| {
            let rho0 = rho0.clone();
            ParametricModel::new(
                k,
                vec![(0.0, COUPLING_MAX); k],
                Arc::new(move |g: &[f64]| tavis_cummings_reduced_state(&rho0, &CouplingRow::new(g.to_vec())?)),
            )
        })
        .collect())
}

/// `(|g> + |e>) / sqrt 2`.
pub fn atom_plus_state() -> DensityMatrix {
    let s = 1.0 / 2f64.sqrt();
    DensityMatrix::new(ComplexMatrix::from_element(2, 2, c(s * s, 0.0))).expect("pure state")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{born_probabilities, max_abs, trace_distance};
    use rand::Rng;

    fn random_qubit(rng: &mut SeededRng) -> DensityMatrix {
        let g = ComplexMatrix::from_fn(2, 2, |_, _| c(StandardNormal.sample(rng), StandardNormal.sample(rng)));
        DensityMatrix::from_numerical(&g * g.adjoint()).unwrap()
    }

    #[test]
    fn atom_field_trivial_cases() {
        let mut rng = SeededRng::from_seed(3);
        let rho = random_qubit(&mut rng);
        let same = atom_field_reduced_state(&rho, &CouplingRow::new(vec![]).unwrap()).unwrap();
        assert_eq!(same.matrix(), rho.matrix());
        let ground = DensityMatrix::fock(2, 0);
        let out = atom_field_reduced_state(&ground, &CouplingRow::new(vec![0.7, 2.0]).unwrap()).unwrap();
        assert!(max_abs(&(out.matrix() - ground.matrix())) < 1e-14);
    }

    #[test]
    fn atom_field_depends_on_norm_only() {
        let rho = atom_plus_state();
        let a = atom_field_reduced_state(&rho, &CouplingRow::new(vec![1.0, 0.5, 0.1]).unwrap()).unwrap();
        let b = atom_field_reduced_state(&rho, &CouplingRow::new(vec![1.26f64.sqrt()]).unwrap()).unwrap();
        assert!(max_abs(&(a.matrix() - b.matrix())) < 1e-10);
        // Closed form of the single-mode model.
        let gp = 1.26f64.sqrt();
        let (cs, sn) = (gp.cos(), gp.sin());
        assert!((a.matrix()[(1, 1)].re - 0.5 * cs * cs).abs() < 1e-12);
        assert!((a.matrix()[(0, 0)].re - 0.5 * (1.0 + sn * sn)).abs() < 1e-12);
        assert!((a.matrix()[(0, 1)] - c(0.5 * cs, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn effective_couplings() {
        assert!((effective_coupling(&CouplingRow::new(vec![1.0, 1.0, 1.0]).unwrap()) - 1.7321).abs() < 1e-4);
        assert_eq!(effective_coupling(&CouplingRow::new(vec![]).unwrap()), 0.0);
        assert!((effective_coupling(&CouplingRow::new(vec![0.6, 0.8]).unwrap()) - 1.0).abs() < 1e-15);
        assert!(CouplingRow::new(vec![-0.1]).is_err());
    }

    #[test]
    fn tavis_cummings_cases() {
        let four = DensityMatrix::fock(9, 4);
        let out = tavis_cummings_reduced_state(&four, &CouplingRow::new(vec![1.0, 1.0]).unwrap()).unwrap();
        let expect = [0.0, 0.0, 0.8159, 0.1822, 0.0019, 0.0, 0.0, 0.0, 0.0];
        for (got, want) in out.diagonal_real().iter().zip(expect) {
            assert!((got - want).abs() < 1e-3, "{:?}", out.diagonal_real());
        }
        let vac = DensityMatrix::fock(9, 0);
        let same = tavis_cummings_reduced_state(&vac, &CouplingRow::new(vec![1.0, 2.0]).unwrap()).unwrap();
        assert!(max_abs(&(same.matrix() - vac.matrix())) < 1e-14);
        let states: Vec<DensityMatrix> = (1..=3)
            .map(|k| tavis_cummings_reduced_state(&four, &CouplingRow::new(vec![1.0; k]).unwrap()).unwrap())
            .collect();
        for i in 0..3 {
            for j in i + 1..3 {
                assert!(trace_distance(&states[i], &states[j]).unwrap() > 0.01);
            }
        }
    }

    #[test]
    fn tavis_cummings_single_absorber_closed_form() {
        // |n, g> -> cos(g sqrt n)|n, g> - i sin(g sqrt n)|n-1, e>.
        let g = 0.8f64;
        let out =
            tavis_cummings_reduced_state(&DensityMatrix::fock(6, 3), &CouplingRow::new(vec![g]).unwrap()).unwrap();
        let w = (g * 3f64.sqrt()).cos().powi(2);
        assert!((out.matrix()[(3, 3)].re - w).abs() < 1e-12);
        assert!((out.matrix()[(2, 2)].re - (1.0 - w)).abs() < 1e-12);
    }

    #[test]
    fn coherent_superposition_keeps_coherence_structure() {
        let mut v = ComplexVector::zeros(5);
        v[1] = c(0.6, 0.0);
        v[3] = c(0.0, 0.8);
        let rho = DensityMatrix::new(&v * v.adjoint()).unwrap();
        let out = tavis_cummings_reduced_state(&rho, &CouplingRow::new(vec![0.4, 0.9]).unwrap()).unwrap();
        assert!((out.matrix().trace().re - 1.0).abs() < 1e-12);
        assert!(out.purity() < 1.0);
    }

    #[test]
    fn hermite_functions_orthonormal() {
        let rule = GaussLegendre::new(NonZeroUsize::new(16).unwrap());
        let ov = overlap_matrix(-16.0, 16.0, 9, &rule, 0.25);
        for n in 0..9 {
            for m in 0..9 {
                let want = if n == m { 1.0 } else { 0.0 };
                assert!((ov[n * 9 + m] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn homodyne_vacuum_and_single_photon() {
        let cfg = HomodyneConfig { n_angles: 3, d: 3, ..Default::default() };
        let povm = homodyne_povm(&cfg).unwrap();
        assert!(povm.completeness_error() < 1e-8);
        let edges = cfg.edges();
        let erf_cdf = |x: f64| 0.5 * (1.0 + libm::erf(x));
        let vac = born_probabilities(&DensityMatrix::fock(3, 0), &povm).unwrap();
        let one = born_probabilities(&DensityMatrix::fock(3, 1), &povm).unwrap();
        let per = cfg.n_bins + 2;
        for k in 0..3 {
            for b in 0..cfg.n_bins {
                // Vacuum density exp(-x^2)/sqrt(pi) has CDF (1 + erf x)/2.
                let want = (erf_cdf(edges[b + 1]) - erf_cdf(edges[b])) / 3.0;
                assert!((vac[k * per + b + 1] - want).abs() < 1e-12, "{k} {b} {} {want}", vac[k * per + b + 1]);
                // |1>: density 2 x^2 exp(-x^2)/sqrt(pi), CDF (1 + erf x)/2 - x exp(-x^2)/sqrt(pi).
                let cdf1 = |x: f64| erf_cdf(x) - x * (-x * x).exp() / std::f64::consts::PI.sqrt();
                let want1 = (cdf1(edges[b + 1]) - cdf1(edges[b])) / 3.0;
                assert!((one[k * per + b + 1] - want1).abs() < 1e-12);
            }
            let total: f64 = vac[k * per..(k + 1) * per].iter().sum();
            assert!((total - 1.0 / 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn homodyne_probabilities_valid_for_random_states() {
        let povm = homodyne_povm(&HomodyneConfig::default()).unwrap();
        assert!(povm.completeness_error() < 1e-8);
        let mut rng = SeededRng::from_seed(9);
        for _ in 0..5 {
            let g = ComplexMatrix::from_fn(9, 9, |_, _| {
                c(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
            });
            let rho = DensityMatrix::from_numerical(&g * g.adjoint()).unwrap();
            let p = born_probabilities(&rho, &povm).unwrap();
            assert!(p.iter().all(|&v| v >= -1e-12));
            for chunk in p.chunks(103) {
                assert!((chunk.iter().sum::<f64>() - 0.1).abs() < 1e-9);
            }
        }
        assert!(HomodyneConfig { n_angles: 5, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn fixtures_round_trip() {
        let atom = parse_atom_povm(ATOM_POVM).unwrap();
        assert_eq!(atom.len(), 4);
        let povm = povm_from_vectors(&atom).unwrap();
        assert!(povm.completeness_error() < 1e-12);
        assert_eq!(crate::linalg::rank_of_outcome_set(&povm, 1e-10), 4);
        assert_eq!(parse_atom_povm(&format_atom_povm(&atom)).unwrap(), atom);
        let fresh = random_rank_one_qubit_povm(4, 7).unwrap();
        for (a, b) in atom.iter().zip(&fresh) {
            assert!((a - b).norm() < 1e-15);
        }
        let grid = parse_homodyne_grid(HOMODYNE_GRID).unwrap();
        let cfg = HomodyneConfig::default();
        assert_eq!(grid.len(), cfg.n_bins + 3);
        assert_eq!(grid[1..grid.len() - 1], cfg.edges()[..]);
    }

    #[test]
    fn builders_produce_states() {
        let mut rng = SeededRng::from_seed(5);
        let af = model_builders_atom_field(4, &atom_plus_state()).unwrap();
        let fa = model_builders_field_absorber(3, &DensityMatrix::fock(9, 4)).unwrap();
        assert_eq!(af[0].build(&[]).unwrap().matrix(), atom_plus_state().matrix());
        for m in af.iter().chain(&fa) {
            for _ in 0..100 {
                let g: Vec<f64> = (0..m.order).map(|_| rng.random::<f64>() * COUPLING_MAX).collect();
                let s = m.build(&g).unwrap();
                assert!((s.matrix().trace().re - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn hamiltonians_conserve_excitations() {
        let h = atom_field_hamiltonian(&CouplingRow::new(vec![0.3, 1.1, 2.0]).unwrap());
        // Excitation numbers of the basis: 0, 1, 1, 1, 1.
        let n = crate::linalg::diag_real(&[0.0, 1.0, 1.0, 1.0, 1.0]);
        assert!(max_abs(&(&h * &n - &n * &h)) < 1e-12);
        let u = expm_hermitian(&h, 1.0);
        assert!(max_abs(&(u.adjoint() * &u - ComplexMatrix::identity(5, 5))) < 1e-10);
    }
}
