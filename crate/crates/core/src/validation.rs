//! Built-in invariant checks run by the `validate` command.

use rand::Rng;
use serde::Serialize;

use crate::interactions::{
    atom_field_reduced_state, atom_plus_state, format_homodyne_grid, homodyne_povm, parse_homodyne_grid,
    tavis_cummings_reduced_state, CouplingRow, HomodyneConfig, HOMODYNE_GRID,
};
use crate::linalg::{trace_norm_hermitian, DensityMatrix};
use crate::photonics::{
    m_pol, parse_settings, pnrd_diagonal, polarimetric_povm, polarimetric_rank, tmsv_oracle_overlap, PnrdConfig,
    PolarizationSpace, SETTINGS_N0_3, SETTINGS_N0_8,
};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_string(), passed, detail }
    }

    fn failed(name: &str, err: impl std::fmt::Display) -> Self {
        Self::new(name, false, format!("error: {err}"))
    }
}

/// Diagonal of the two-absorber reduced state of `|4>` at unit couplings.
pub const ABSORBER_DIAGONAL: [f64; 9] = [0.0, 0.0, 0.8159, 0.1822, 0.0019, 0.0, 0.0, 0.0, 0.0];

pub fn pnrd_completeness() -> Check {
    let name = "pnrd completeness";
    let mut worst = 0.0f64;
    for eta in [0.5, 0.9, 1.0] {
        for n0 in [1usize, 2, 3, 8] {
            let cfg = match PnrdConfig::new(eta, n0) {
                Ok(c) => c,
                Err(e) => return Check::failed(name, e),
            };
            let mut total = vec![0.0; 21];
            for n in 0..=n0 {
                match pnrd_diagonal(n, &cfg, 20) {
                    Ok(d) => total.iter_mut().zip(d).for_each(|(t, v)| *t += v),
                    Err(e) => return Check::failed(name, e),
                }
            }
            worst = total.iter().fold(worst, |w, t| w.max((t - 1.0).abs()));
        }
    }
    Check::new(name, worst < 1e-10, format!("max |sum - 1| = {worst:.2e} (tol 1e-10)"))
}

pub fn polarimetric_completeness() -> Check {
    let name = "polarimetric completeness";
    let run = || -> crate::error::Result<f64> {
        let settings = parse_settings(SETTINGS_N0_3)?;
        let povm = polarimetric_povm(&settings, &PnrdConfig::new(0.9, 3)?, &PolarizationSpace::new(8)?)?;
        Ok(povm.completeness_error())
    };
    match run() {
        Ok(err) => Check::new(name, err < 1e-8, format!("completeness error {err:.2e} (tol 1e-8)")),
        Err(e) => Check::failed(name, e),
    }
}

pub fn m_pol_counts() -> Check {
    let got = [m_pol(1), m_pol(2), m_pol(8)];
    Check::new("m_pol", got == [6, 19, 489], format!("m_pol(1, 2, 8) = {}, {}, {}", got[0], got[1], got[2]))
}

/// Numerical rank of the frozen settings for `n0 = 3` and `n0 = 8`.
pub fn polarimetric_ranks() -> Check {
    let name = "polarimetric rank";
    let run = || -> crate::error::Result<(usize, usize)> {
        let r3 = polarimetric_rank(&parse_settings(SETTINGS_N0_3)?, &PnrdConfig::new(0.9, 3)?, 1e-8)?;
        let r8 = polarimetric_rank(&parse_settings(SETTINGS_N0_8)?, &PnrdConfig::new(0.9, 8)?, 1e-8)?;
        Ok((r3, r8))
    };
    match run() {
        Ok((r3, r8)) => Check::new(
            name,
            r3 as u64 == m_pol(3) && r8 as u64 == m_pol(8),
            format!("rank {r3} of {} (n0 = 3), {r8} of {} (n0 = 8)", m_pol(3), m_pol(8)),
        ),
        Err(e) => Check::failed(name, e),
    }
}

pub fn tmsv_oracle() -> Check {
    match tmsv_oracle_overlap(0.2418, 6) {
        Ok(o) => Check::new("tmsv oracle", o > 1.0 - 1e-8, format!("overlap {o:.12} (need > 1 - 1e-8)")),
        Err(e) => Check::failed("tmsv oracle", e),
    }
}

/// Reduced atom states for `cases` random coupling rows against the single
/// mode with the norm of the row.
pub fn effective_coupling_equivalence(cases: usize, seed: u64) -> Check {
    let name = "effective coupling equivalence";
    let rho0 = atom_plus_state();
    let mut rng = SeededRng::from_seed(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let k = rng.random_range(1..=4);
        let g: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..3.0)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let pair = CouplingRow::new(g)
            .and_then(|row| atom_field_reduced_state(&rho0, &row))
            .and_then(|a| Ok((a, atom_field_reduced_state(&rho0, &CouplingRow::new(vec![norm])?)?)));
        match pair {
            Ok((a, b)) => worst = worst.max(trace_norm_hermitian(&(a.matrix() - b.matrix()))),
            Err(e) => return Check::failed(name, e),
        }
    }
    Check::new(name, worst < 1e-10, format!("max trace norm {worst:.2e} over {cases} rows (tol 1e-10)"))
}

pub fn absorber_diagonal() -> Check {
    let name = "absorber state diagonal";
    let out =
        CouplingRow::new(vec![1.0, 1.0]).and_then(|g| tavis_cummings_reduced_state(&DensityMatrix::fock(9, 4), &g));
    match out {
        Ok(rho) => {
            let diag = rho.diagonal_real();
            let worst = diag.iter().zip(ABSORBER_DIAGONAL).fold(0.0f64, |w, (a, b)| w.max((a - b).abs()));
            let shown: Vec<String> = diag.iter().map(|v| format!("{v:.4}")).collect();
            Check::new(name, worst < 1e-3, format!("diag ({}) max dev {worst:.1e} (tol 1e-3)", shown.join(", ")))
        }
        Err(e) => Check::failed(name, e),
    }
}

pub fn homodyne_grid() -> Check {
    let name = "homodyne povm";
    let cfg = HomodyneConfig::default();
    let run = || -> crate::error::Result<(f64, bool)> {
        let povm = homodyne_povm(&cfg)?;
        let fixture = parse_homodyne_grid(HOMODYNE_GRID)?;
        let fresh = parse_homodyne_grid(&format_homodyne_grid(&cfg))?;
        Ok((povm.completeness_error(), fixture == fresh))
    };
    match run() {
        Ok((err, same)) => Check::new(
            name,
            err < 1e-8 && same,
            format!("completeness error {err:.2e}, grid fixture {}", if same { "matches" } else { "differs" }),
        ),
        Err(e) => Check::failed(name, e),
    }
}

pub fn fixtures_round_trip() -> Check {
    let run = || -> crate::error::Result<bool> {
        let mut ok = true;
        for text in [SETTINGS_N0_3, SETTINGS_N0_8] {
            let s = parse_settings(text)?;
            ok &= parse_settings(&crate::photonics::format_settings(&s))? == s;
        }
        Ok(ok)
    };
    match run() {
        Ok(ok) => Check::new("settings fixtures", ok, "parse/format round trip".into()),
        Err(e) => Check::failed("settings fixtures", e),
    }
}

/// Every built-in check, in reporting order.
pub fn run_all() -> Vec<Check> {
    vec![
        pnrd_completeness(),
        polarimetric_completeness(),
        m_pol_counts(),
        polarimetric_ranks(),
        tmsv_oracle(),
        effective_coupling_equivalence(1000, 21),
        absorber_diagonal(),
        homodyne_grid(),
        fixtures_round_trip(),
    ]
}
