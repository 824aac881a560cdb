//! Acceptance harness: one pass/fail line per criterion.
//!
//! Exits 0 after printing the table so the workspace test run reports the
//! outcome without aborting; set `RBCERT_ACCEPTANCE_STRICT=1` to exit
//! nonzero when any criterion fails.

use std::time::{Duration, Instant};

use rand::Rng;
use rbcert::certification::CertificationReport;
use rbcert::inference::{error_probabilities, plausible_interval, HypothesisSet, LogLikelihoods, RbReport};
use rbcert::interactions::tavis_cummings_reduced_state;
use rbcert::interactions::CouplingRow;
use rbcert::linalg::{max_abs, DensityMatrix};
use rbcert::photonics::{m_pol, parse_settings, pnrd_outcome, polarimetric_rank, FockSpace, PnrdConfig};
use rbcert::photonics::{SETTINGS_N0_3, SETTINGS_N0_8};
use rbcert::rng::SeededRng;
use rbcert::scenarios::{run_scenario, RunOptions, ScenarioConfig, ScenarioKind, ScenarioOutcome};
use rbcert::validation::{effective_coupling_equivalence, ABSORBER_DIAGONAL};

const SEEDS: std::ops::RangeInclusive<u64> = 1..=10;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

fn run(cfg: &ScenarioConfig, compare_ic: bool) -> (ScenarioOutcome, Duration) {
    let t = Instant::now();
    let out = run_scenario(cfg, RunOptions { compare_ic }).expect("scenario runs");
    (out, t.elapsed())
}

fn report<'a>(out: &'a ScenarioOutcome, prior: &str) -> &'a CertificationReport {
    &out.body.certifications.iter().find(|p| p.prior == prior).expect("prior present").report
}

fn rb_at(rep: &CertificationReport, label: f64) -> f64 {
    rep.rb_of(label).expect("label present")
}

fn toy(seed: u64) -> ScenarioConfig {
    ScenarioConfig::defaults(ScenarioKind::RbdcToy, seed)
}

fn fig3(seed: u64) -> ScenarioConfig {
    let mut cfg = toy(seed);
    cfg.n_copies = Some(1000);
    let p = cfg.rbdc_toy.as_mut().unwrap();
    p.bases = 1;
    p.basis_seed = 5;
    cfg.ic = None;
    cfg.resolve().unwrap()
}

fn conservativeness(n_values: Vec<u64>) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::defaults(ScenarioKind::Conservativeness, 1);
    let p = cfg.conservativeness.as_mut().unwrap();
    p.trials = 100;
    p.n_values = n_values;
    cfg
}

fn seconds(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn criterion_1() -> Verdict {
    let mut hits = 0;
    let mut worst = Duration::ZERO;
    let mut seen = Vec::new();
    for seed in SEEDS {
        let (out, t) = run(&toy(seed), false);
        worst = worst.max(t);
        let rep = report(&out, "uniform");
        let low_ok = (2..6).all(|d| rb_at(rep, d as f64) < 1e-3);
        let high_ok = (6..=10).all(|d| rb_at(rep, d as f64) > 1.0);
        if rep.d_rb == Some(6.0) && low_ok && high_ok {
            hits += 1;
        }
        seen.push(format!("{}", rep.d_rb.map_or(-1.0, |d| d)));
    }
    verdict(
        hits >= 9 && worst < Duration::from_secs(60),
        format!(
            "d_RB = 6 with the RB pattern in {hits}/10 seeds (need 9); d_RB per seed [{}]; max {} per seed",
            seen.join(", "),
            seconds(worst)
        ),
    )
}

fn criterion_2() -> Verdict {
    let mut cfg = toy(1);
    cfg.hypotheses = Some(rbcert::scenarios::HypothesisRange { min: 2, max: 4 });
    let (out, _) = run(&cfg, false);
    let rep = report(&out, "uniform");
    let (r2, r3, r4) = (rb_at(rep, 2.0), rb_at(rep, 3.0), rb_at(rep, 4.0));
    verdict(
        r2 < 1e-3 && r3 < 1e-3 && r4 > 1.0 && rep.extend_recommended,
        format!("RB(2) = {r2:.2e}, RB(3) = {r3:.2e}, RB(4) = {r4:.3}, extend = {}", rep.extend_recommended),
    )
}

fn criterion_3() -> Verdict {
    let t = Instant::now();
    let (out, _) = run(&fig3(1), true);
    let rep = report(&out, "uniform");
    let d_rb = rep.d_rb.unwrap_or(f64::NAN);
    let (aic, bic) = (rep.ic_results["AIC"].d_label, rep.ic_results["BIC"].d_label);
    let (cons, _) = run(&conservativeness(vec![1000]), false);
    let c = &cons.body.conservativeness[0];
    let total = t.elapsed();
    verdict(
        aic == bic && aic <= d_rb && c.aic_fraction >= 0.95 && c.bic_fraction >= 0.95 && total < Duration::from_secs(300),
        format!(
            "seed 1: d_RB = {d_rb}, d_AIC = {aic}, d_BIC = {bic}; over {} trials P(d_RB >= d_AIC) = {}, P(d_RB >= d_BIC) = {}; {}",
            c.trials,
            c.aic_fraction,
            c.bic_fraction,
            seconds(total)
        ),
    )
}

fn criterion_4() -> Verdict {
    let space = FockSpace::new(20).unwrap();
    let dim = space.dim();
    let mut completeness = 0.0f64;
    for eta in [0.5, 0.9, 1.0] {
        for n0 in [1usize, 2, 3, 8] {
            let cfg = PnrdConfig::new(eta, n0).unwrap();
            let mut sum = rbcert::linalg::ComplexMatrix::zeros(dim, dim);
            for n in 0..=n0 {
                sum += pnrd_outcome(n, &cfg, &space).unwrap();
            }
            sum -= rbcert::linalg::ComplexMatrix::identity(dim, dim);
            completeness = completeness.max(max_abs(&sum));
        }
    }
    let diag = rbcert::linalg::diag_real;
    let vac: Vec<f64> = (0..dim).map(|m| if m == 0 { 1.0 } else { 0.0 }).collect();
    let on_off = PnrdConfig::new(1.0, 1).unwrap();
    let e8 = max_abs(&(pnrd_outcome(0, &on_off, &space).unwrap() - diag(&vac))).max(max_abs(
        &(pnrd_outcome(1, &on_off, &space).unwrap() - diag(&vac.iter().map(|v| 1.0 - v).collect::<Vec<_>>())),
    ));
    let two = PnrdConfig::new(1.0, 2).unwrap();
    let expect: Vec<f64> = (0..dim).map(|m| 2.0 * (0.5f64.powi(m as i32) - vac[m])).collect();
    let e9 = max_abs(&(pnrd_outcome(1, &two, &space).unwrap() - diag(&expect)));
    verdict(
        completeness < 1e-10 && e8 < 1e-12 && e9 < 1e-12,
        format!(
            "completeness {completeness:.1e} (tol 1e-10); on-off case {e8:.1e}, two-detector case {e9:.1e} (tol 1e-12)"
        ),
    )
}

fn criterion_5() -> Verdict {
    let counts = [m_pol(1), m_pol(2), m_pol(8)];
    let r3 =
        polarimetric_rank(&parse_settings(SETTINGS_N0_3).unwrap(), &PnrdConfig::new(0.9, 3).unwrap(), 1e-8).unwrap();
    let r8 =
        polarimetric_rank(&parse_settings(SETTINGS_N0_8).unwrap(), &PnrdConfig::new(0.9, 8).unwrap(), 1e-8).unwrap();
    verdict(
        counts == [6, 19, 489] && r3 == 44 && r8 == 489,
        format!("m_pol(1, 2, 8) = {:?}; rank {r3} (n0 = 3), {r8} (n0 = 8) at 1e-8", counts),
    )
}

fn criterion_6() -> Verdict {
    let mut gauss_hits = 0;
    let mut uni_hits = 0;
    let mut rate = f64::NAN;
    let mut worst = Duration::ZERO;
    let mut seen = Vec::new();
    for seed in SEEDS {
        let (out, t) = run(&ScenarioConfig::defaults(ScenarioKind::SourceSingle, seed), false);
        worst = worst.max(t);
        rate = out.body.diagnostics["heralding_probability"];
        let g = report(&out, "gaussian").d_rb;
        let u = report(&out, "uniform").d_rb;
        gauss_hits += (g == Some(3.0)) as usize;
        uni_hits += (u == Some(4.0)) as usize;
        seen.push(format!("{}/{}", u.map_or(-1.0, |v| v), g.map_or(-1.0, |v| v)));
    }
    verdict(
        (rate - 0.148).abs() <= 0.001 && gauss_hits >= 8 && uni_hits >= 8 && worst < Duration::from_secs(600),
        format!(
            "heralding {:.3}%; gaussian n = 3 in {gauss_hits}/10, uniform n = 4 in {uni_hits}/10 (uniform/gaussian per seed [{}]); max {} per seed",
            100.0 * rate,
            seen.join(", "),
            seconds(worst)
        ),
    )
}

fn criterion_7() -> Verdict {
    let mut hits = 0;
    let mut seen = Vec::new();
    for seed in SEEDS {
        let (out, _) = run(&ScenarioConfig::defaults(ScenarioKind::SourceDouble, seed), false);
        let u = report(&out, "uniform").d_rb;
        let g = report(&out, "gaussian").d_rb;
        hits += (u == Some(2.0) && g == Some(2.0)) as usize;
        seen.push(format!("{}/{}", u.map_or(-1.0, |v| v), g.map_or(-1.0, |v| v)));
    }
    verdict(
        hits >= 8,
        format!("n = 2 under both priors in {hits}/10 seeds (uniform/gaussian per seed [{}])", seen.join(", ")),
    )
}

fn criterion_8() -> Verdict {
    let eq = effective_coupling_equivalence(1000, 21);
    let (out, _) = run(&ScenarioConfig::defaults(ScenarioKind::ModelAtomField, 1), false);
    let fits = &out.body.model_fits;
    let lls: Vec<f64> = fits.iter().filter(|f| (1..=4).contains(&f.order)).map(|f| f.log_likelihood).collect();
    let spread = lls.iter().cloned().fold(f64::MIN, f64::max) - lls.iter().cloned().fold(f64::MAX, f64::min);
    let target = 3f64.sqrt();
    let g: Vec<f64> = fits.iter().filter(|f| f.order >= 1).map(|f| f.effective_coupling).collect();
    let g_dev = g.iter().map(|v| (v - target).abs() / target).fold(0.0f64, f64::max);
    verdict(
        eq.passed && lls.len() == 4 && spread < 0.5 && g_dev < 0.02,
        format!(
            "{}; max log-likelihood spread over orders 1..4 = {spread:.2e}; g' = [{}] worst deviation {:.2}% from sqrt(3) (tol 2%)",
            eq.detail,
            g.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", "),
            100.0 * g_dev
        ),
    )
}

fn criterion_9() -> Verdict {
    let rho =
        tavis_cummings_reduced_state(&DensityMatrix::fock(9, 4), &CouplingRow::new(vec![1.0, 1.0]).unwrap()).unwrap();
    let dev = rho.diagonal_real().iter().zip(ABSORBER_DIAGONAL).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
    let mut hits = 0;
    let mut worst = Duration::ZERO;
    let mut seen = Vec::new();
    for seed in SEEDS {
        let (out, t) = run(&ScenarioConfig::defaults(ScenarioKind::ModelFieldAbsorber, seed), false);
        worst = worst.max(t);
        let u = report(&out, "uniform").d_rb;
        let g = report(&out, "gaussian").d_rb;
        hits += (u == Some(2.0) && g == Some(2.0)) as usize;
        seen.push(format!("{}/{}", u.map_or(-1.0, |v| v), g.map_or(-1.0, |v| v)));
    }
    verdict(
        dev < 1e-3 && hits >= 8 && worst < Duration::from_secs(1800),
        format!(
            "diagonal max deviation {dev:.1e} (tol 1e-3); n_abs = 2 under both priors in {hits}/10 seeds (uniform/gaussian per seed [{}]); max {} per seed",
            seen.join(", "),
            seconds(worst)
        ),
    )
}

fn criterion_10() -> Verdict {
    let mut rng = SeededRng::from_seed(10);
    let mut worst_sum = 0.0f64;
    let mut worst_post = 0.0f64;
    let mut ml_fail = 0;
    let mut interval_fail = 0;
    let mut interval_checked = 0;
    let mut sep_fail = 0;
    let cases = 10_000;
    for _ in 0..cases {
        let k = rng.random_range(2..12);
        let labels: Vec<f64> = (0..k).map(|i| i as f64).collect();
        let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let hyps = HypothesisSet::from_weights(labels.clone(), &weights).unwrap();
        let ll = LogLikelihoods((0..k).map(|_| rng.random_range(-50.0..0.0)).collect());
        let rep = RbReport::compute(&hyps, &ll).unwrap();
        let s: f64 = hyps.priors().iter().zip(&rep.rb_ratios).map(|(p, r)| p * r).sum();
        worst_sum = worst_sum.max((s - 1.0).abs());
        worst_post = worst_post.max((rep.posteriors.iter().sum::<f64>() - 1.0).abs());
        let best = (0..k).max_by(|&a, &b| ll.0[a].total_cmp(&ll.0[b])).unwrap();
        if ll.0.iter().any(|&v| v != ll.0[best]) && rep.rb_ratios[best] <= 1.0 {
            ml_fail += 1;
        }
        for delta in 0..k {
            let iv = plausible_interval(&hyps, &rep, delta).unwrap();
            let all_plausible = iv.members.iter().all(|m| rep.plausible[*m as usize]);
            if all_plausible && iv.size_prior < 1.0 {
                interval_checked += 1;
                interval_fail += (iv.credibility <= iv.size_prior) as usize;
            }
        }
        let truth_len = rng.random_range(1..k);
        let truth: Vec<f64> = labels[..truth_len].to_vec();
        let sep = LogLikelihoods((0..k).map(|i| if i < truth_len { 0.0 } else { f64::NEG_INFINITY }).collect());
        let sep_rep = RbReport::compute(&hyps, &sep).unwrap();
        let (ei, eii) = error_probabilities(&hyps, &sep_rep, &truth).unwrap();
        sep_fail += (ei != 0.0 || eii != 0.0) as usize;
    }
    verdict(
        worst_sum <= 1e-10 && worst_post <= 1e-10 && ml_fail == 0 && interval_fail == 0 && sep_fail == 0,
        format!(
            "{cases} cases: |sum pr RB - 1| <= {worst_sum:.1e}, |sum post - 1| <= {worst_post:.1e}, RB(k_ML) <= 1 in {ml_fail}, C <= S in {interval_fail} of {interval_checked} all-plausible intervals, nonzero separated errors in {sep_fail}"
        ),
    )
}

fn criterion_11() -> Verdict {
    let (out, _) = run(&conservativeness(vec![100, 1000, 10_000]), false);
    let rows = &out.body.conservativeness;
    let ei: Vec<f64> = rows.iter().map(|r| r.mean_eps_i.unwrap_or(f64::NAN)).collect();
    let eii: Vec<f64> = rows.iter().map(|r| r.mean_eps_ii.unwrap_or(f64::NAN)).collect();
    let nonincreasing = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0]);
    verdict(
        rows.len() == 3 && nonincreasing(&ei) && nonincreasing(&eii) && ei[2] < 0.05 && eii[2] < 0.05,
        format!(
            "truth {:?}; N = 1e2, 1e3, 1e4: eps_I = {ei:.4?}, eps_II = {eii:.4?}",
            rows.first().map(|r| &r.true_labels)
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 11] = [
        ("toy state, eleven bases", criterion_1),
        ("restricted dimension set", criterion_2),
        ("single basis ordering", criterion_3),
        ("pnrd suite", criterion_4),
        ("linear-independence counts", criterion_5),
        ("single-mode source", criterion_6),
        ("double-mode source", criterion_7),
        ("effective coupling", criterion_8),
        ("absorber state", criterion_9),
        ("inference identities", criterion_10),
        ("error-probability convergence", criterion_11),
    ];
    let only: Option<Vec<usize>> = std::env::var("RBCERT_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let idx = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&idx)) {
            continue;
        }
        let t = Instant::now();
        let v = f();
        failed += (!v.passed) as usize;
        println!(
            "criterion {idx:>2} [{}] {name}: {} ({})",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail,
            seconds(t.elapsed())
        );
    }
    println!("acceptance: {failed} criteria failed");
    if failed > 0 && std::env::var("RBCERT_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
