//! Bounded derivative-free minimization: Nelder-Mead from Halton starts.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub starts: usize,
    /// Stop once the simplex diameter falls below this.
    pub xtol: f64,
    pub max_evals_per_start: usize,
    /// Initial simplex edge as a fraction of each box width.
    pub initial_step: f64,
    /// Optima within this objective distance of the best are ties, resolved
    /// toward the smallest Euclidean norm.
    pub tie_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { starts: 8, xtol: 1e-6, max_evals_per_start: 4000, initial_step: 0.15, tie_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut out = 0.0;
    let mut f = inv;
    while index > 0 {
        out += (index % base) as f64 * f;
        index /= base;
        f *= inv;
    }
    out
}

/// Halton point `index` (starting at 1) in the unit cube of dimension `dim <= 8`.
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    assert!(dim <= PRIMES.len(), "halton dimension above {}", PRIMES.len());
    PRIMES[..dim].iter().map(|&b| radical_inverse(index, b)).collect()
}

fn clamp_into(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

/// Nelder-Mead on the box `bounds`; trial points are projected into the box.
pub fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, start: &[f64], bounds: &[(f64, f64)], cfg: &OptimizerConfig) -> Optimum {
    let n = start.len();
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    if n == 0 {
        let value = eval(&[]);
        return Optimum { x: vec![], value, evaluations: 1, converged: true };
    }
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut x0 = start.to_vec();
    clamp_into(&mut x0, bounds);
    simplex.push(x0.clone());
    for i in 0..n {
        let (lo, hi) = bounds[i];
        let h = cfg.initial_step * (hi - lo).max(1e-12);
        let mut x = x0.clone();
        // Step inward when the start sits on the upper face.
        x[i] = if x[i] + h <= hi { x[i] + h } else { x[i] - h };
        simplex.push(x);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();
    let mut converged = false;

    while evals.get() < cfg.max_evals_per_start {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let diameter = simplex[1..]
            .iter()
            .map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        if diameter < cfg.xtol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n).map(|k| simplex[..n].iter().map(|x| x[k]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| {
            let mut x: Vec<f64> = centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (c - w)).collect();
            clamp_into(&mut x, bounds);
            x
        };
        let xr = along(1.0);
        let fr = eval(&xr);
        if fr < values[0] {
            let xe = along(2.0);
            let fe = eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let x = along(0.5);
            let v = eval(&x);
            (x, v)
        } else {
            let x = along(-0.5);
            let v = eval(&x);
            (x, v)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        // Shrink toward the best vertex.
        for i in 1..=n {
            let x: Vec<f64> = simplex[i].iter().zip(&simplex[0]).map(|(a, b)| b + 0.5 * (a - b)).collect();
            values[i] = eval(&x);
            simplex[i] = x;
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).expect("nonempty simplex");
    Optimum { x: simplex[best].clone(), value: values[best], evaluations: evals.get(), converged }
}

/// Multistart minimization over a box. Each start is refined by a restart
/// from its own optimum; ties within `tie_tol` go to the smallest-norm point.
pub fn minimize_box(f: &(dyn Fn(&[f64]) -> f64 + Sync), bounds: &[(f64, f64)], cfg: &OptimizerConfig) -> Optimum {
    let dim = bounds.len();
    if dim == 0 {
        return nelder_mead(f, &[], bounds, cfg);
    }
    let mut results = Vec::with_capacity(cfg.starts.max(1));
    let mut evaluations = 0;
    for s in 1..=cfg.starts.max(1) as u64 {
        let start: Vec<f64> = halton(s, dim).iter().zip(bounds).map(|(u, &(lo, hi))| lo + u * (hi - lo)).collect();
        let first = nelder_mead(f, &start, bounds, cfg);
        let restart_cfg = OptimizerConfig { initial_step: cfg.initial_step * 0.1, ..*cfg };
        let second = nelder_mead(f, &first.x, bounds, &restart_cfg);
        evaluations += first.evaluations + second.evaluations;
        results.push(if second.value <= first.value { second } else { first });
    }
    let best_value = results.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    let chosen = results
        .into_iter()
        .filter(|r| r.value <= best_value + cfg.tie_tol)
        .min_by(|a, b| norm(&a.x).total_cmp(&norm(&b.x)))
        .expect("at least one start");
    Optimum { evaluations, ..chosen }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_first_points() {
        assert_eq!(halton(1, 2), vec![0.5, 1.0 / 3.0]);
        assert_eq!(halton(2, 2), vec![0.25, 2.0 / 3.0]);
        assert!((radical_inverse(3, 2) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn quadratic_interior_and_boundary_minima() {
        let cfg = OptimizerConfig::default();
        let f = |x: &[f64]| (x[0] - 1.2).powi(2) + 3.0 * (x[1] - 0.4).powi(2);
        let r = minimize_box(&f, &[(0.0, 3.0), (0.0, 3.0)], &cfg);
        assert!(r.converged);
        assert!((r.x[0] - 1.2).abs() < 1e-5 && (r.x[1] - 0.4).abs() < 1e-5);

        let g = |x: &[f64]| (x[0] + 1.0).powi(2);
        let r = minimize_box(&g, &[(0.0, 3.0)], &cfg);
        assert!(r.x[0].abs() < 1e-6);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let cfg = OptimizerConfig { max_evals_per_start: 20_000, ..Default::default() };
        let r = minimize_box(&f, &[(0.0, 3.0), (0.0, 3.0)], &cfg);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn ties_resolve_to_smallest_norm() {
        // Equal minima at 1 and 2.5.
        let f = |x: &[f64]| ((x[0] - 1.0) * (x[0] - 2.5)).powi(2);
        let r = minimize_box(&f, &[(0.0, 3.0)], &OptimizerConfig::default());
        assert!((r.x[0] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }
}
