//! Photon counting, wave-plate polarimetry and down-conversion sources.
//!
//! Two polarization modes `(H, V)` of one spatial mode are represented on
//! [`PolarizationSpace`]: all Fock pairs `|h, v>` with `h + v <= max_total`,
//! ordered by `max(h, v)` so that the per-mode cutoff `n` is the prefix of
//! length `(n + 1)^2`. Every operator here conserves `h + v`, so states and
//! outcomes are stored blockwise by total photon number.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    c, expm_hermitian, rank_of_outcome_set, BlockLayout, BlockOperator, ComplexMatrix, ComplexVector, DensityMatrix,
    KetVector, Povm, ProductPovm,
};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FockSpace {
    pub cutoff: usize,
    pub tail_tol: f64,
}

impl FockSpace {
    pub fn new(cutoff: usize) -> Result<Self> {
        if cutoff == 0 {
            return Err(Error::InvalidArgument("Fock cutoff must be at least 1".into()));
        }
        Ok(Self { cutoff, tail_tol: 1e-8 })
    }

    pub fn dim(&self) -> usize {
        self.cutoff + 1
    }
}

/// Lowering operator with `<n-1| a |n> = sqrt(n)`.
pub fn annihilation(space: &FockSpace) -> ComplexMatrix {
    let d = space.dim();
    ComplexMatrix::from_fn(d, d, |r, col| if col == r + 1 { c((col as f64).sqrt(), 0.0) } else { c(0.0, 0.0) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PnrdConfig {
    pub eta: f64,
    pub n0: usize,
}

impl PnrdConfig {
    pub fn new(eta: f64, n0: usize) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::InvalidArgument(format!("efficiency {eta} outside (0, 1]")));
        }
        if n0 == 0 {
            return Err(Error::InvalidArgument("resolution n0 must be at least 1".into()));
        }
        Ok(Self { eta, n0 })
    }
}

/// `<m| Pi_n |m>` for `m = 0..=max_photons`: the chance that `m` photons,
/// each lost with probability `1 - eta` and otherwise sent to one of `n0`
/// on-off detectors, fire exactly `n` of them.
pub fn pnrd_diagonal(n: usize, cfg: &PnrdConfig, max_photons: usize) -> Result<Vec<f64>> {
    if n > cfg.n0 {
        return Err(Error::InvalidArgument(format!("outcome {n} exceeds resolution {}", cfg.n0)));
    }
    let n0 = cfg.n0 as f64;
    // occ[j]: probability that j detectors have fired so far.
    let mut occ = vec![0.0; cfg.n0 + 1];
    occ[0] = 1.0;
    let mut out = Vec::with_capacity(max_photons + 1);
    out.push(occ[n]);
    for _ in 0..max_photons {
        let mut next = vec![0.0; cfg.n0 + 1];
        for (j, &p) in occ.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let fresh = cfg.eta * (n0 - j as f64) / n0;
            next[j] += p * (1.0 - fresh);
            if j < cfg.n0 {
                next[j + 1] += p * fresh;
            }
        }
        occ = next;
        out.push(occ[n]);
    }
    Ok(out)
}

/// The same diagonal from the alternating binomial sum
/// `C(n0, n) sum_k C(n, k) (-1)^k [1 - eta (1 + (k - n)/n0)]^m`.
pub fn pnrd_diagonal_binomial(n: usize, cfg: &PnrdConfig, max_photons: usize) -> Result<Vec<f64>> {
    if n > cfg.n0 {
        return Err(Error::InvalidArgument(format!("outcome {n} exceeds resolution {}", cfg.n0)));
    }
    let n0 = cfg.n0 as f64;
    Ok((0..=max_photons)
        .map(|m| {
            let s: f64 = (0..=n)
                .map(|k| {
                    let base = 1.0 - cfg.eta * (1.0 + (k as f64 - n as f64) / n0);
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    sign * binomial(n, k) * if m == 0 { 1.0 } else { base.powi(m as i32) }
                })
                .sum();
            binomial(cfg.n0, n) * s
        })
        .collect())
}

pub fn pnrd_outcome(n: usize, cfg: &PnrdConfig, space: &FockSpace) -> Result<ComplexMatrix> {
    let d = pnrd_diagonal(n, cfg, space.cutoff)?;
    Ok(ComplexMatrix::from_diagonal(&ComplexVector::from_iterator(d.len(), d.iter().map(|&v| c(v, 0.0)))))
}

/// `C(n, k)` as a float.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Fock pairs `|h, v>` with `h + v <= max_total`.
#[derive(Debug, Clone)]
pub struct PolarizationSpace {
    max_total: usize,
    states: Vec<(usize, usize)>,
    layout: Arc<BlockLayout>,
    /// `block_h[S][p]`: photon number in `H` of the `p`-th state of sector `S`.
    block_h: Vec<Vec<usize>>,
}

impl PolarizationSpace {
    pub fn new(max_total: usize) -> Result<Self> {
        let mut states: Vec<(usize, usize)> = (0..=max_total).flat_map(|s| (0..=s).map(move |h| (h, s - h))).collect();
        states.sort_by_key(|&(h, v)| (h.max(v), h + v, h));
        let mut blocks = vec![Vec::new(); max_total + 1];
        let mut block_h = vec![Vec::new(); max_total + 1];
        for (i, &(h, v)) in states.iter().enumerate() {
            blocks[h + v].push(i);
            block_h[h + v].push(h);
        }
        let layout = Arc::new(BlockLayout::new(states.len(), blocks)?);
        Ok(Self { max_total, states, layout, block_h })
    }

    pub fn max_total(&self) -> usize {
        self.max_total
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[(usize, usize)] {
        &self.states
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn index(&self, h: usize, v: usize) -> Option<usize> {
        self.states.iter().position(|&s| s == (h, v))
    }

    /// Prefix dimension `(n + 1)^2` holding every state with `h, v <= n`.
    pub fn per_mode_dim(&self, n: usize) -> Result<usize> {
        if 2 * n > self.max_total {
            return Err(Error::SpaceTooLarge { dim: 2 * n, limit: self.max_total });
        }
        Ok((n + 1) * (n + 1))
    }

    pub fn ket(&self, amplitudes: &[((usize, usize), crate::linalg::C64)]) -> Result<KetVector> {
        let mut v = ComplexVector::zeros(self.dim());
        for &((h, vv), a) in amplitudes {
            let i = self.index(h, vv).ok_or_else(|| Error::InvalidArgument(format!("|{h},{vv}> outside space")))?;
            v[i] += a;
        }
        KetVector::normalized(v)
    }

    /// Total photon number of each basis state.
    pub fn totals(&self) -> Vec<usize> {
        self.states.iter().map(|&(h, v)| h + v).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavePlatePair {
    pub theta: f64,
    pub phi: f64,
}

/// `J2` and the diagonal of `J3` on the sector basis `|h, S - h>`, `h = 0..=S`.
pub fn sector_generators(total: usize) -> (ComplexMatrix, Vec<f64>) {
    let d = total + 1;
    let mut j2 = ComplexMatrix::zeros(d, d);
    for h in 0..total {
        // a_H^dag a_V |h, S-h> = sqrt((h+1)(S-h)) |h+1, S-h-1>
        let amp = (((h + 1) * (total - h)) as f64).sqrt() / 2.0;
        j2[(h + 1, h)] = c(0.0, -amp);
        j2[(h, h + 1)] = c(0.0, amp);
    }
    let j3 = (0..d).map(|h| h as f64 - total as f64 / 2.0).collect();
    (j2, j3)
}

/// `exp(-i phi J3) exp(-i theta J2)` on the sector basis `|h, S - h>`.
pub fn waveplate_sector_unitary(wp: &WavePlatePair, total: usize) -> ComplexMatrix {
    let (j2, j3) = sector_generators(total);
    let mut u = expm_hermitian(&j2, wp.theta);
    for (h, &m) in j3.iter().enumerate() {
        let phase = C64Ext::cis(-wp.phi * m);
        for col in 0..u.ncols() {
            u[(h, col)] *= phase;
        }
    }
    u
}

/// `exp(-i theta J2) exp(-i phi J3)`: the phase plate acts first, so the
/// detected operator `V^dag D V` depends on both angles.
pub fn analyzer_sector_unitary(wp: &WavePlatePair, total: usize) -> ComplexMatrix {
    let (j2, j3) = sector_generators(total);
    let mut u = expm_hermitian(&j2, wp.theta);
    for (h, &m) in j3.iter().enumerate() {
        let phase = C64Ext::cis(-wp.phi * m);
        for r in 0..u.nrows() {
            u[(r, h)] *= phase;
        }
    }
    u
}

struct C64Ext;

impl C64Ext {
    fn cis(x: f64) -> crate::linalg::C64 {
        c(x.cos(), x.sin())
    }
}

/// Sector matrix permuted into the order of the layout block.
fn to_block_order(m: &ComplexMatrix, hs: &[usize]) -> ComplexMatrix {
    ComplexMatrix::from_fn(hs.len(), hs.len(), |r, col| m[(hs[r], hs[col])])
}

/// Wave-plate unitary as a block operator on `space`.
pub fn waveplate_unitary(wp: &WavePlatePair, space: &PolarizationSpace) -> BlockOperator {
    let blocks =
        space.block_h.iter().enumerate().map(|(s, hs)| to_block_order(&waveplate_sector_unitary(wp, s), hs)).collect();
    BlockOperator::new(space.layout.clone(), blocks).expect("sector shapes match layout")
}

/// Outcomes `V^dag (Pi_{nH} (x) Pi_{nV}) V` of one setting, labelled `nH,nV`,
/// with `V` from [`analyzer_sector_unitary`].
pub fn polarimetric_setting_povm(wp: &WavePlatePair, cfg: &PnrdConfig, space: &PolarizationSpace) -> Result<Povm> {
    let diag: Vec<Vec<f64>> = (0..=cfg.n0).map(|n| pnrd_diagonal(n, cfg, space.max_total)).collect::<Result<_>>()?;
    let unitaries: Vec<ComplexMatrix> = (0..=space.max_total).map(|s| analyzer_sector_unitary(wp, s)).collect();
    let mut outcomes = Vec::with_capacity((cfg.n0 + 1).pow(2));
    let mut labels = Vec::with_capacity(outcomes.capacity());
    for nh in 0..=cfg.n0 {
        for nv in 0..=cfg.n0 {
            let blocks = unitaries
                .iter()
                .enumerate()
                .map(|(s, u)| {
                    let d: Vec<f64> = (0..=s).map(|h| diag[nh][h] * diag[nv][s - h]).collect();
                    let mut du = u.clone();
                    for (h, &w) in d.iter().enumerate() {
                        for col in 0..du.ncols() {
                            du[(h, col)] *= w;
                        }
                    }
                    let o = crate::linalg::hermitize(&(u.adjoint() * du));
                    to_block_order(&o, &space.block_h[s])
                })
                .collect();
            outcomes.push(BlockOperator::new(space.layout.clone(), blocks)?);
            labels.push(format!("{nh},{nv}"));
        }
    }
    Povm::new(space.layout.clone(), outcomes, labels)
}

/// All settings, each group weighted `1 / settings.len()`.
pub fn polarimetric_povm(settings: &[WavePlatePair], cfg: &PnrdConfig, space: &PolarizationSpace) -> Result<Povm> {
    if settings.is_empty() {
        return Err(Error::InvalidArgument("at least one wave-plate setting is required".into()));
    }
    let groups: Vec<Povm> =
        settings.iter().map(|wp| polarimetric_setting_povm(wp, cfg, space)).collect::<Result<_>>()?;
    Povm::combine_equally(&groups)
}

/// Upper bound on linearly independent polarimetric outcomes,
/// `(n0 + 1)(2 n0^2 + 4 n0 + 3) / 3`.
pub fn m_pol(n0: u64) -> u64 {
    (n0 + 1) * (2 * n0 * n0 + 4 * n0 + 3) / 3
}

/// Rank of the outcome set on the per-mode space `h, v <= n0`.
pub fn polarimetric_rank(settings: &[WavePlatePair], cfg: &PnrdConfig, tol: f64) -> Result<usize> {
    let space = PolarizationSpace::new(2 * cfg.n0)?;
    let povm = polarimetric_povm(settings, cfg, &space)?.truncate(space.per_mode_dim(cfg.n0)?)?;
    Ok(rank_of_outcome_set(&povm, tol))
}

/// Uniform angles `theta in [0, pi]`, `phi in [0, 2 pi]`.
pub fn random_settings(count: usize, rng: &mut SeededRng) -> Vec<WavePlatePair> {
    (0..count)
        .map(|_| WavePlatePair {
            theta: rng.random::<f64>() * std::f64::consts::PI,
            phi: rng.random::<f64>() * 2.0 * std::f64::consts::PI,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingSearch {
    pub settings: Vec<WavePlatePair>,
    pub rank: usize,
}

/// Draws `start` seeded settings and appends more, one at a time, until the
/// rank reaches `target` or `max` settings are in use.
pub fn search_settings(
    cfg: &PnrdConfig,
    target: usize,
    start: usize,
    max: usize,
    seed: u64,
    tol: f64,
) -> Result<SettingSearch> {
    let mut rng = SeededRng::from_seed(seed);
    let mut settings = random_settings(start, &mut rng);
    loop {
        let rank = polarimetric_rank(&settings, cfg, tol)?;
        if rank >= target {
            return Ok(SettingSearch { settings, rank });
        }
        if settings.len() >= max {
            return Err(Error::RankDeficient { rank, target, settings: settings.len() });
        }
        settings.extend(random_settings(1, &mut rng));
    }
}

/// One `theta phi` pair per line, radians, 17 significant digits.
pub fn format_settings(settings: &[WavePlatePair]) -> String {
    let mut out = String::new();
    for wp in settings {
        let _ = writeln!(out, "{:.16e} {:.16e}", wp.theta, wp.phi);
    }
    out
}

pub fn parse_settings(text: &str) -> Result<Vec<WavePlatePair>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let mut it = l.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(theta)), Some(Ok(phi)), None) => Ok(WavePlatePair { theta, phi }),
                _ => Err(Error::Fixture(format!("bad settings line {l:?}"))),
            }
        })
        .collect()
}

/// Frozen settings reaching rank 489 for `n0 = 8`.
pub const SETTINGS_N0_8: &str = include_str!("../fixtures/waveplates_n0_8.txt");
/// Frozen settings reaching per-mode rank 44 for `n0 = 3`.
pub const SETTINGS_N0_3: &str = include_str!("../fixtures/waveplates_n0_3.txt");

/// Squeezed vacuum on spatial modes `a` and `b`, joint index `i_a * dim + i_b`.
#[derive(Debug, Clone)]
pub struct Tmsv {
    pub ket: KetVector,
    pub space: PolarizationSpace,
    /// Norm squared of the truncated series before renormalization.
    pub retained: f64,
}

/// `sum_n sum_m (-1)^m tanh^n / cosh^2 |n-m, m>_a |m, n-m>_b` for `n <= n_total_max`.
pub fn tmsv_ket(tau: f64, n_total_max: usize, tail_tol: f64) -> Result<Tmsv> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("squeezing {tau} must be nonnegative")));
    }
    let space = PolarizationSpace::new(n_total_max)?;
    let d = space.dim();
    let (t, ch2) = (tau.tanh(), tau.cosh().powi(2));
    let mut v = ComplexVector::zeros(d * d);
    let mut retained = 0.0;
    for n in 0..=n_total_max {
        let amp = t.powi(n as i32) / ch2;
        for m in 0..=n {
            let ia = space.index(n - m, m).expect("state in space");
            let ib = space.index(m, n - m).expect("state in space");
            v[ia * d + ib] = c(if m % 2 == 0 { amp } else { -amp }, 0.0);
            retained += amp * amp;
        }
    }
    let tail = 1.0 - retained;
    if tail > tail_tol {
        return Err(Error::TailTooLarge { tail, tol: tail_tol });
    }
    Ok(Tmsv { ket: KetVector::normalized(v)?, space, retained })
}

/// Overlap of the truncated series with `exp(-i H t)|vac>`, where
/// `H = g (i L+ - i L-)`, `L+ = a_H^dag b_V^dag - a_V^dag b_H^dag`, `g t = tau`,
/// exponentiated on `|p, q, q, p>` with `p, q <= cutoff`.
pub fn tmsv_oracle_overlap(tau: f64, cutoff: usize) -> Result<f64> {
    let d = cutoff + 1;
    let idx = |p: usize, q: usize| p * d + q;
    let mut h = ComplexMatrix::zeros(d * d, d * d);
    for p in 0..d {
        for q in 0..d {
            // i L+ |p,q,q,p> = i (p+1) |p+1,q,q,p+1> - i (q+1) |p,q+1,q+1,p>
            if p + 1 < d {
                h[(idx(p + 1, q), idx(p, q))] += c(0.0, (p + 1) as f64);
            }
            if q + 1 < d {
                h[(idx(p, q + 1), idx(p, q))] += c(0.0, -((q + 1) as f64));
            }
        }
    }
    let h = &h + h.adjoint();
    let u = expm_hermitian(&h, tau);
    let evolved = u.column(idx(0, 0)).into_owned();
    let series = tmsv_ket(tau, 2 * cutoff, 1.0)?;
    let sp = &series.space;
    let amp = series.ket.amplitudes();
    let dim = sp.dim();
    let mut overlap = c(0.0, 0.0);
    for p in 0..d {
        for q in 0..d {
            let ia = sp.index(p, q).expect("state in space");
            let ib = sp.index(q, p).expect("state in space");
            overlap += amp[ia * dim + ib].conj() * evolved[idx(p, q)];
        }
    }
    Ok(overlap.norm_sqr())
}

/// `(tanh tau / cosh^2 tau)^2`, the weight of each one-pair term.
pub fn heralding_rate(tau: f64) -> f64 {
    (tau.tanh() / tau.cosh().powi(2)).powi(2)
}

/// Kraus operators `A_k = sum_n sqrt(C(n,k) eta^(n-k) (1-eta)^k) |n-k><n|`.
pub fn loss_kraus(eta: f64, cutoff: usize) -> Vec<ComplexMatrix> {
    let d = cutoff + 1;
    (0..d)
        .map(|k| {
            ComplexMatrix::from_fn(d, d, |r, col| {
                if col >= k && r == col - k {
                    let n = col;
                    c((binomial(n, k) * eta.powi((n - k) as i32) * (1.0 - eta).powi(k as i32)).sqrt(), 0.0)
                } else {
                    c(0.0, 0.0)
                }
            })
        })
        .collect()
}

/// Photon loss with transmissivity `eta` on tensor factor `mode`.
pub fn loss_channel(rho: &DensityMatrix, eta: f64, mode: usize, factor_dims: &[usize]) -> Result<DensityMatrix> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidArgument(format!("efficiency {eta} outside (0, 1]")));
    }
    if mode >= factor_dims.len() {
        return Err(Error::InvalidArgument(format!("mode {mode} out of range")));
    }
    if factor_dims.iter().product::<usize>() != rho.dim() {
        return Err(Error::DimensionMismatch("factor dims vs state".into()));
    }
    let left: usize = factor_dims[..mode].iter().product();
    let right: usize = factor_dims[mode + 1..].iter().product();
    let il = ComplexMatrix::identity(left, left);
    let ir = ComplexMatrix::identity(right, right);
    let mut out = ComplexMatrix::zeros(rho.dim(), rho.dim());
    for a in loss_kraus(eta, factor_dims[mode] - 1) {
        let k = crate::linalg::tensor_product(&crate::linalg::tensor_product(&il, &a), &ir);
        out += &k * rho.matrix() * k.adjoint();
    }
    DensityMatrix::from_numerical(out)
}

/// Heisenberg image of `|n><n|` under loss: coefficients on `|l><l|`,
/// `eta^n C(l, n) (1 - eta)^(l - n)` for `l = 0..=cutoff`.
pub fn lossy_fock_effect(n: usize, eta: f64, cutoff: usize) -> Vec<f64> {
    (0..=cutoff)
        .map(|l| if l < n { 0.0 } else { eta.powi(n as i32) * binomial(l, n) * (1.0 - eta).powi((l - n) as i32) })
        .collect()
}

#[derive(Debug, Clone)]
pub struct HeraldedState {
    pub state: DensityMatrix,
    pub probability: f64,
    /// Herald probability carried by photon numbers beyond the space.
    pub tail: f64,
}

/// Spatial mode `a` conditioned on a diagonal-polarization click in mode `b`
/// seen through detectors of efficiency `eta`. Loss enters through the herald
/// effect only; detection loss in mode `a` belongs to its measurement.
pub fn herald_single_mode(tau: f64, eta: f64, space: &PolarizationSpace) -> Result<HeraldedState> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidArgument(format!("efficiency {eta} outside (0, 1]")));
    }
    let (t, ch2) = (tau.tanh(), tau.cosh().powi(2));
    let amp = |n: usize, m: usize| if m % 2 == 0 { 1.0 } else { -1.0 } * t.powi(n as i32) / ch2;
    let keep = |k: usize| (1.0 - eta).powf(k as f64 / 2.0);
    let d = space.dim();
    let mut rho = ComplexMatrix::zeros(d, d);
    let mut inside = 0.0;
    let mut outside = 0.0;
    // Kraus pair (k, l) removes k photons from b_H and l from b_V, leaving |1,0> or |0,1>.
    let extra = 60;
    for total in 1..=space.max_total() + extra {
        for k in 0..total {
            let l = total - 1 - k;
            // |l, k+1>_a with b = |k+1, l> -> |1, 0>
            let a1 = amp(total, k + 1) * ((k + 1) as f64 * eta).sqrt() * keep(k) * keep(l) / 2f64.sqrt();
            // |l+1, k>_a with b = |k, l+1> -> |0, 1>
            let a2 = amp(total, k) * keep(k) * ((l + 1) as f64 * eta).sqrt() * keep(l) / 2f64.sqrt();
            let w = a1 * a1 + a2 * a2;
            if total > space.max_total() {
                outside += w;
                continue;
            }
            inside += w;
            let i1 = space.index(l, k + 1).expect("state in space");
            let i2 = space.index(l + 1, k).expect("state in space");
            let mut phi = ComplexVector::zeros(d);
            phi[i1] = c(a1, 0.0);
            phi[i2] = c(a2, 0.0);
            rho += &phi * phi.adjoint();
        }
    }
    if inside <= 0.0 {
        return Err(Error::ZeroHeraldingProbability);
    }
    Ok(HeraldedState {
        state: DensityMatrix::from_numerical(rho)?,
        probability: inside + outside,
        tail: outside / (inside + outside),
    })
}

/// `(|1,0> - |0,1>) / sqrt 2` on `space`.
pub fn single_photon_minus(space: &PolarizationSpace) -> Result<KetVector> {
    let s = 1.0 / 2f64.sqrt();
    space.ket(&[((1, 0), c(s, 0.0)), ((0, 1), c(-s, 0.0))])
}

/// `(|1,0,0,1> - |0,1,1,0>) / sqrt 2` in the product of two copies of `space`.
pub fn two_photon_ket(space: &PolarizationSpace) -> Result<KetVector> {
    let d = space.dim();
    let idx = |h, v| space.index(h, v).ok_or_else(|| Error::InvalidArgument("space too small".into()));
    let mut v = ComplexVector::zeros(d * d);
    let s = 1.0 / 2f64.sqrt();
    v[idx(1, 0)? * d + idx(0, 1)?] = c(s, 0.0);
    v[idx(0, 1)? * d + idx(1, 0)?] = c(-s, 0.0);
    KetVector::new(v)
}

/// Double-mode measurement: the same settings list on both spatial modes.
pub fn double_mode_povm(
    settings: &[WavePlatePair],
    cfg: &PnrdConfig,
    space: &PolarizationSpace,
) -> Result<ProductPovm> {
    let single = polarimetric_povm(settings, cfg, space)?;
    ProductPovm::new(single.clone(), single)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{born_probabilities, fidelity, max_abs};

    #[test]
    fn annihilation_action() {
        let s = FockSpace::new(5).unwrap();
        let a = annihilation(&s);
        let n = a.adjoint() * &a;
        for k in 0..6 {
            assert!((n[(k, k)].re - k as f64).abs() < 1e-12);
        }
        let comm = &a * a.adjoint() - a.adjoint() * &a;
        for k in 0..5 {
            assert!((comm[(k, k)].re - 1.0).abs() < 1e-12);
        }
        assert!((comm[(5, 5)].re + 5.0).abs() < 1e-12);
    }

    #[test]
    fn pnrd_dp_matches_binomial_sum_and_is_complete() {
        for &eta in &[0.5, 0.9, 1.0] {
            for &n0 in &[1usize, 2, 3, 8] {
                let cfg = PnrdConfig::new(eta, n0).unwrap();
                let mut total = vec![0.0; 21];
                for n in 0..=n0 {
                    let dp = pnrd_diagonal(n, &cfg, 20).unwrap();
                    let bin = pnrd_diagonal_binomial(n, &cfg, 20).unwrap();
                    for m in 0..=20 {
                        assert!((dp[m] - bin[m]).abs() < 1e-9, "eta {eta} n0 {n0} n {n} m {m}");
                        assert!(dp[m] >= -1e-12 && dp[m] <= 1.0 + 1e-12);
                        total[m] += dp[m];
                    }
                }
                assert!(total.iter().all(|t| (t - 1.0).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn pnrd_ideal_special_cases() {
        let on_off = PnrdConfig::new(1.0, 1).unwrap();
        let p0 = pnrd_diagonal(0, &on_off, 10).unwrap();
        assert_eq!(p0[0], 1.0);
        assert!(p0[1..].iter().all(|&v| v == 0.0));
        let two = PnrdConfig::new(1.0, 2).unwrap();
        let p1 = pnrd_diagonal(1, &two, 10).unwrap();
        let p2 = pnrd_diagonal(2, &two, 10).unwrap();
        for m in 0..=10 {
            let vac = if m == 0 { 1.0 } else { 0.0 };
            let half = 0.5f64.powi(m as i32);
            assert!((p1[m] - 2.0 * (half - vac)).abs() < 1e-12);
            assert!((p2[m] - (1.0 - 2.0 * half + vac)).abs() < 1e-12);
        }
        assert!(pnrd_diagonal(3, &two, 4).is_err());
    }

    #[test]
    fn m_pol_values() {
        assert_eq!(m_pol(1), 6);
        assert_eq!(m_pol(2), 19);
        assert_eq!(m_pol(8), 489);
        for n0 in 1..10u64 {
            let explicit: u64 = 2 * (0..n0).map(|k| (k + 1).pow(2)).sum::<u64>() + (n0 + 1).pow(2);
            assert_eq!(m_pol(n0), explicit);
        }
    }

    #[test]
    fn space_ordering_gives_prefix_truncations() {
        let sp = PolarizationSpace::new(8).unwrap();
        for n in 0..=4 {
            let d = sp.per_mode_dim(n).unwrap();
            assert!(sp.states()[..d].iter().all(|&(h, v)| h <= n && v <= n));
        }
        assert!(sp.per_mode_dim(5).is_err());
    }

    #[test]
    fn waveplates() {
        let sp = PolarizationSpace::new(6).unwrap();
        let id = waveplate_unitary(&WavePlatePair { theta: 0.0, phi: 0.0 }, &sp);
        assert!(max_abs(&(id.to_dense() - ComplexMatrix::identity(sp.dim(), sp.dim()))) < 1e-14);
        let wp = WavePlatePair { theta: 1.1, phi: 2.3 };
        let u = waveplate_unitary(&wp, &sp).to_dense();
        assert!(max_abs(&(u.adjoint() * &u - ComplexMatrix::identity(sp.dim(), sp.dim()))) < 1e-12);

        // Single-photon sector against exp(-i phi s3/2) exp(-i theta s2/2), basis (|0,1>, |1,0>).
        let u1 = waveplate_sector_unitary(&wp, 1);
        let (ct, st) = ((wp.theta / 2.0).cos(), (wp.theta / 2.0).sin());
        let ry = ComplexMatrix::from_row_slice(2, 2, &[c(ct, 0.0), c(-st, 0.0), c(st, 0.0), c(ct, 0.0)]);
        // In h order (V first): sigma_y has opposite sign, sigma_z is diag(-1, 1).
        let ry_h = ComplexMatrix::from_row_slice(2, 2, &[ry[(1, 1)], ry[(1, 0)], ry[(0, 1)], ry[(0, 0)]]);
        let rz = ComplexMatrix::from_diagonal(&ComplexVector::from_vec(vec![
            C64Ext::cis(wp.phi / 2.0),
            C64Ext::cis(-wp.phi / 2.0),
        ]));
        let expect = rz * ry_h;
        assert!(max_abs(&(u1 - expect)) < 1e-12);
    }

    #[test]
    fn polarimetric_outcomes_structure() {
        let sp = PolarizationSpace::new(6).unwrap();
        let cfg = PnrdConfig::new(0.9, 3).unwrap();
        let wp = [WavePlatePair { theta: 0.4, phi: 1.3 }, WavePlatePair { theta: 2.0, phi: 5.1 }];
        let povm = polarimetric_povm(&wp, &cfg, &sp).unwrap();
        assert_eq!(povm.len(), 32);
        assert!(povm.completeness_error() < 1e-10);
        // Commutes with total photon number.
        let ntot = ComplexMatrix::from_diagonal(&ComplexVector::from_iterator(
            sp.dim(),
            sp.totals().iter().map(|&t| c(t as f64, 0.0)),
        ));
        for j in 0..povm.len() {
            let o = povm.outcome_dense(j);
            assert!(max_abs(&(&o * &ntot - &ntot * &o)) < 1e-10);
            assert!(crate::linalg::eigh(&o).0[0] > -1e-10);
        }
    }

    #[test]
    fn small_resolution_ranks() {
        for n0 in 1..=2u64 {
            let cfg = PnrdConfig::new(0.9, n0 as usize).unwrap();
            let found = search_settings(&cfg, m_pol(n0) as usize, 3, 20, 5, 1e-8).unwrap();
            assert_eq!(found.rank, m_pol(n0) as usize);
            let mut doubled = found.settings.clone();
            doubled.extend(found.settings.iter().copied());
            assert_eq!(polarimetric_rank(&doubled, &cfg, 1e-8).unwrap(), found.rank);
        }
    }

    #[test]
    fn fixtures_reach_their_ranks() {
        let s3 = parse_settings(SETTINGS_N0_3).unwrap();
        assert_eq!(s3.len(), 7);
        assert_eq!(polarimetric_rank(&s3, &PnrdConfig::new(0.9, 3).unwrap(), 1e-8).unwrap(), 44);
        let round = parse_settings(&format_settings(&s3)).unwrap();
        assert_eq!(round, s3);
    }

    #[test]
    fn tmsv_properties() {
        let vac = tmsv_ket(0.0, 3, 1e-8).unwrap();
        assert!((vac.ket.amplitudes()[0].re - 1.0).abs() < 1e-15);
        let t = 0.2418f64;
        let tm = tmsv_ket(t, 8, 1e-8).unwrap();
        let series: f64 = (0..=8).map(|n| (n + 1) as f64 * t.tanh().powi(2 * n) / t.cosh().powi(4)).sum();
        assert!((tm.retained - series).abs() < 1e-14);
        assert!(tmsv_ket(t, 6, 1e-8).is_err());
        assert!(tmsv_ket(0.658, 8, 1e-8).is_err());
        assert!(tmsv_oracle_overlap(t, 6).unwrap() > 1.0 - 1e-8);
        // Sign alternation on one-pair terms.
        let d = tm.space.dim();
        let i10 = tm.space.index(1, 0).unwrap();
        let i01 = tm.space.index(0, 1).unwrap();
        let amp = tm.ket.amplitudes();
        assert!(amp[i10 * d + i01].re > 0.0 && amp[i01 * d + i10].re < 0.0);
    }

    #[test]
    fn heralding_rates() {
        let tau = (2.0 + 3f64.sqrt()).ln() / 2.0;
        assert!((heralding_rate(tau) - 4.0 / 27.0).abs() < 1e-12);
        assert!((heralding_rate(tau) - 0.148).abs() < 1e-3);
        assert_eq!(heralding_rate(0.0), 0.0);
        assert!((heralding_rate(0.2418) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn loss_channel_cases() {
        let one = DensityMatrix::fock(4, 1);
        let out = loss_channel(&one, 0.7, 0, &[4]).unwrap();
        assert!((out.matrix()[(0, 0)].re - 0.3).abs() < 1e-12);
        assert!((out.matrix()[(1, 1)].re - 0.7).abs() < 1e-12);
        let same = loss_channel(&one, 1.0, 0, &[4]).unwrap();
        assert!(max_abs(&(same.matrix() - one.matrix())) < 1e-14);
        let mut sum = ComplexMatrix::zeros(6, 6);
        for a in loss_kraus(0.35, 5) {
            sum += a.adjoint() * &a;
        }
        assert!(max_abs(&(sum - ComplexMatrix::identity(6, 6))) < 1e-12);
        // Heisenberg picture: <l| A^dag |n><n| A |l> summed over Kraus index.
        let (n, eta) = (2usize, 0.6);
        let coeff = lossy_fock_effect(n, eta, 7);
        for l in 0..=7 {
            let adj: f64 = loss_kraus(eta, 7).iter().map(|a| a[(n, l)].norm_sqr()).sum();
            assert!((adj - coeff[l]).abs() < 1e-12);
        }
        assert!(loss_channel(&one, 0.5, 1, &[4]).is_err());
    }

    #[test]
    fn heralded_states() {
        let sp = PolarizationSpace::new(8).unwrap();
        let tau = (2.0 + 3f64.sqrt()).ln() / 2.0;
        let ideal = herald_single_mode(tau, 1.0, &sp).unwrap();
        assert!((ideal.probability - heralding_rate(tau)).abs() < 1e-12);
        let target = single_photon_minus(&sp).unwrap().to_density_matrix();
        assert!((fidelity(&ideal.state, &target).unwrap() - 1.0).abs() < 1e-10);

        let lossy = herald_single_mode(tau, 0.9, &sp).unwrap();
        assert!((lossy.state.matrix().trace().re - 1.0).abs() < 1e-12);
        let multi: f64 =
            sp.totals().iter().zip(lossy.state.diagonal_real()).filter(|(t, _)| **t >= 2).map(|(_, p)| p).sum();
        assert!(multi > 1e-3);
        assert!(lossy.tail < 1e-8);
    }

    #[test]
    fn double_mode_probabilities_match_dense() {
        let sp = PolarizationSpace::new(2).unwrap();
        let cfg = PnrdConfig::new(0.9, 1).unwrap();
        let wp = [WavePlatePair { theta: 0.7, phi: 0.2 }, WavePlatePair { theta: 1.9, phi: 4.0 }];
        let single = polarimetric_povm(&wp, &cfg, &sp).unwrap();
        let prod = double_mode_povm(&wp, &cfg, &sp).unwrap();
        let tm = tmsv_ket(0.3, 2, 1.0).unwrap();
        let rho = tm.ket.to_density_matrix();
        let p = prod.probabilities(&rho).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let dense: Vec<ComplexMatrix> = (0..single.len())
            .flat_map(|a| {
                let s = &single;
                (0..s.len()).map(move |b| crate::linalg::tensor_product(&s.outcome_dense(a), &s.outcome_dense(b)))
            })
            .collect();
        let dense_povm = Povm::from_dense(dense, (0..p.len()).map(|j| j.to_string()).collect()).unwrap();
        let q = born_probabilities(&rho, &dense_povm).unwrap();
        for (x, y) in p.iter().zip(&q) {
            assert!((x - y).abs() < 1e-13);
        }
        // Weighted sums agree with the dense construction.
        let w: Vec<f64> = (0..p.len()).map(|j| (j % 7) as f64 * 0.1).collect();
        let r = prod.weighted_sum_blocks(&w);
        let r_dense = BlockOperator::new(prod.layout().clone(), r).unwrap().to_dense();
        let mut expect = ComplexMatrix::zeros(rho.dim(), rho.dim());
        for (j, wj) in w.iter().enumerate() {
            expect += dense_povm.outcome_dense(j) * c(*wj, 0.0);
        }
        assert!(max_abs(&(r_dense - expect)) < 1e-12);
    }
}
