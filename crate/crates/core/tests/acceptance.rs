//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Reference scenario: B = 10, M = 3, tau = 0.5 ms, D = 10 ms (W = 20),
//! S = 23 dBm, A = 36 /m, beta = 3, T = 2.3 dB, gamma = 1.15, R = 200 m.
//! Pinned here: phi = 0.05 /m, sigma = 1e-13 W.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use mode2::analytic::{
    capacity, link_terms, loss_recursion, plr, plr_at, plr_truncated, success_prob, RecursionInputs,
};
use mode2::link::{
    eesm_receive, exclusion_radius, sinr_no_interference, sinr_single_interferer, ExclusionProfile,
    ExclusionRadius,
};
use mode2::overlap::{overlap_distribution, overlap_distribution_oracle};
use mode2::sim::{run, SimConfig};
use mode2::{Scenario, ScenarioConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PHI: f64 = 0.05;
const SIGMA: f64 = 1e-13;

fn reference() -> ScenarioConfig {
    ScenarioConfig {
        phi: PHI,
        noise_sigma: SIGMA,
        ..ScenarioConfig::default()
    }
}

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// 1. Closed-form overlap distribution equals enumeration for 1 <= M <= B <= 32.
fn overlap_closure() -> Outcome {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for b in 1..=32u32 {
        for m in 1..=b {
            let closed = overlap_distribution(b, m).unwrap().probs();
            let brute = overlap_distribution_oracle(b, m).unwrap().probs();
            for (x, y) in closed.iter().zip(&brute) {
                worst = worst.max((x - y).abs());
            }
            cases += 1;
        }
    }
    check(
        worst <= 1e-12,
        format!("{cases} (B, M) pairs, max |closed - brute| = {worst:.1e} (tol 1e-12)"),
    )
}

/// 2. Degenerate recursion identities.
fn degenerate_recursion() -> Outcome {
    let mut worst_hd = 0.0f64;
    for nu in 0..=3 {
        for lambda in [1.0, 10.0, 60.0] {
            let sc = Scenario::new(reference().with_repetitions(nu).with_lambda(lambda)).unwrap();
            let inputs = RecursionInputs {
                success: 1.0,
                noncollision: 1.0,
                ..RecursionInputs::new(&sc, link_terms(100.0, &sc))
            };
            let v = loss_recursion(inputs).loss();
            worst_hd = worst_hd.max((v - sc.p().powi(nu as i32 + 1)).abs());
        }
    }
    let mut geometric_ok = true;
    let mut worst_gap = 0.0f64;
    for lambda in [5.0, 50.0, 150.0] {
        let sc = Scenario::new(reference().with_repetitions(0).with_lambda(lambda)).unwrap();
        let (p, k) = (sc.p(), sc.derived().truncation_k);
        for ps in [0.2, 0.7, 0.99] {
            let inputs = RecursionInputs {
                success: ps,
                ..RecursionInputs::new(&sc, link_terms(100.0, &sc))
            };
            let v = loss_recursion(inputs).loss();
            let truncated = p + (1.0 - ps) * (1.0 - p.powi(k as i32));
            let gap = (v - (p + 1.0 - ps)).abs();
            worst_gap = worst_gap.max(gap / p.powi(k as i32));
            geometric_ok &= (v - truncated).abs() < 1e-12 && gap <= p.powi(k as i32) + 1e-15;
        }
    }
    check(
        worst_hd <= 1e-12 && geometric_ok,
        format!(
            "max |V - p^(nu+1)| = {worst_hd:.1e} (tol 1e-12); nu = 0 gap / p^K <= {worst_gap:.3}"
        ),
    )
}

/// Series form of the success probability with an explicit truncation radius
/// `r_bar`: Poisson(2 phi r_bar) UEs within `r_bar`, each transmitting with
/// probability p and independently harmless with probability Q1.
fn success_series(r: f64, sc: &Scenario, r_bar: f64) -> f64 {
    let cfg = sc.config();
    let profile = ExclusionProfile::new(r, cfg);
    let overlap = sc.overlap();
    let q1 = 1.0
        - (1..=cfg.packet_width_m as usize)
            .map(|m| overlap.prob(m) * profile.get(m).meters())
            .sum::<f64>()
            / r_bar;
    let mean = 2.0 * cfg.phi * r_bar;
    let p = sc.p();
    let n_max = (mean + 40.0 * mean.sqrt() + 60.0) as usize;
    let mut ln_fact = vec![0.0f64; n_max + 1];
    for n in 1..=n_max {
        ln_fact[n] = ln_fact[n - 1] + (n as f64).ln();
    }
    let mut total = 0.0;
    for n in 0..=n_max {
        let poisson = (-mean + n as f64 * mean.ln() - ln_fact[n]).exp();
        let mut inner = 0.0;
        for k in 0..=n {
            let ln_binom = ln_fact[n] - ln_fact[k] - ln_fact[n - k];
            let g = (ln_binom + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp();
            inner += g * q1.powi(k as i32);
        }
        total += poisson * inner;
    }
    total
}

/// 3. The truncation radius cancels from the success probability.
fn radius_cancellation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut draws = 0;
    while draws < 20 {
        let cfg = ScenarioConfig {
            phi: rng.gen_range(0.005..0.2),
            lambda_rate: rng.gen_range(0.5..60.0),
            repetitions_nu: rng.gen_range(0..6),
            num_subchannels_b: rng.gen_range(3..16),
            ..reference()
        };
        let sc = Scenario::new(cfg).unwrap();
        let r = rng.gen_range(1.0..sc.config().range_r);
        let profile = ExclusionProfile::new(r, sc.config());
        if profile.radii().iter().any(|x| x.is_infinite())
            || sinr_no_interference(r, sc.config()) <= sc.config().sinr_threshold_t
        {
            continue;
        }
        let max_rho = profile
            .radii()
            .iter()
            .map(|x| x.meters())
            .fold(0.0, f64::max);
        let r_bar = max_rho * rng.gen_range(1.01..3.0) + 1.0;
        let closed = success_prob(r, &sc);
        let series = success_series(r, &sc, r_bar);
        worst = worst.max((closed - series).abs());
        draws += 1;
    }
    check(
        worst <= 1e-9,
        format!("20 draws, max |closed - series| = {worst:.1e} (tol 1e-9)"),
    )
}

/// 4. A single interferer just outside or inside the exclusion radius
///    flips EESM reception.
fn eesm_radius_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = reference();
    let width = cfg.packet_width_m;
    let mut checked = 0;
    let mut mismatches = 0;
    while checked < 100 {
        let r = rng.gen_range(1.0..cfg.range_r);
        let m = rng.gen_range(1..=width);
        let ExclusionRadius::Finite(rho) = exclusion_radius(r, m, &cfg) else {
            continue;
        };
        if rho <= 0.0 {
            continue;
        }
        let outcome = |r_int: f64| {
            let mut sinr = vec![sinr_no_interference(r, &cfg); width as usize];
            let s1 = sinr_single_interferer(r, r_int, &cfg);
            sinr[..m as usize].iter_mut().for_each(|s| *s = s1);
            eesm_receive(&sinr, &cfg).unwrap().success
        };
        if !outcome(rho * (1.0 + 1e-6)) || outcome(rho * (1.0 - 1e-6)) {
            mismatches += 1;
        }
        checked += 1;
    }
    check(
        mismatches == 0,
        format!("{checked} random (r, m), {mismatches} mismatches"),
    )
}

/// 5. Analytic vs simulated PLR for nu = 0, 1, 2.
fn analytic_vs_simulation() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for nu in 0..=2u32 {
        for target in [3e-2, 1e-2, 3e-3] {
            let cfg = reference().with_repetitions(nu).with_plr_target(target);
            let lambda = capacity(&cfg).unwrap().lambda_rate;
            let analytic = plr_at(&cfg, lambda).unwrap().plr;
            let base = SimConfig::new(cfg.with_lambda(lambda));
            // fewer transmissions per slot without repetitions
            let measured = if nu == 0 { 60_000 } else { 20_000 };
            let sim = SimConfig {
                num_slots: base.warmup_slots + measured,
                replications: 8,
                seed: 0x5eed + u64::from(nu),
                ..base
            };
            let report = run(&sim).unwrap();
            let ratio = analytic / report.plr_estimate;
            let rel_ci = report.confidence_interval_95 / report.plr_estimate;
            let good =
                (1e-3..=1e-1).contains(&analytic) && (0.5..=2.0).contains(&ratio) && rel_ci < 0.3;
            ok &= good;
            lines.push(format!(
                "nu={nu} lambda={lambda:.3} analytic={analytic:.3e} sim={:.3e} ratio={ratio:.3} ci={:.0}%{}",
                report.plr_estimate,
                100.0 * rel_ci,
                if good { "" } else { " <-" }
            ));
        }
    }
    check(
        ok,
        format!(
            "ratio in [0.5, 2], CI < 30%\n      {}",
            lines.join("\n      ")
        ),
    )
}

fn capacity_by_nu(base: &ScenarioConfig) -> Vec<f64> {
    (0..=8)
        .map(|nu| capacity(&base.with_repetitions(nu)).unwrap().lambda_rate)
        .collect()
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap()
}

/// 6. Capacity-maximizing number of repetitions at B = 10.
fn optimal_repetitions() -> Outcome {
    let loose = capacity_by_nu(&reference().with_plr_target(1e-2));
    let strict = capacity_by_nu(&reference().with_plr_target(1e-5));
    let (a, b) = (argmax(&loose), argmax(&strict));
    check(
        [3, 4].contains(&a) && [6, 7].contains(&b),
        format!(
            "argmax nu = {a} at 1e-2 (want 3|4), {b} at 1e-5 (want 6|7); C(1e-2) = {:.3?}, C(1e-5) = {:.4?}",
            loose, strict
        ),
    )
}

fn best_capacity(base: &ScenarioConfig, b: u32) -> f64 {
    capacity_by_nu(&base.with_subchannels(b))
        .into_iter()
        .fold(0.0, f64::max)
}

/// 7. Capacity versus bandwidth, best nu per B. With M = 3 the smallest
///    valid band is B = 3.
fn capacity_shape() -> Outcome {
    let strict = reference().with_plr_target(1e-5);
    let c10 = best_capacity(&strict, 10);
    let small: Vec<f64> = (3..6).map(|b| best_capacity(&strict, b) / c10).collect();
    let near_zero = small.iter().all(|&x| x < 0.05);

    let loose = reference().with_plr_target(1e-2);
    let curve: Vec<f64> = (4..=12).map(|b| best_capacity(&loose, b)).collect();
    let diffs: Vec<f64> = curve.windows(2).map(|w| w[1] - w[0]).collect();
    let superlinear = diffs.windows(2).all(|d| d[1] > d[0]);
    check(
        near_zero && superlinear,
        format!(
            "1e-5: C(B)/C(10) for B = 3, 4, 5 = {small:.3?} (want < 0.05) {}; \
             1e-2: C(B = 4..12) differences = {diffs:.3?} (want increasing) {}",
            if near_zero { "ok" } else { "FAIL" },
            if superlinear { "ok" } else { "FAIL" },
        ),
    )
}

/// 8. Monotonicity, truncation and quadrature stability, determinism.
fn property_suite() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    // PLR nondecreasing in lambda
    let grid: Vec<f64> = (0..12).map(|i| 0.1 * 1.8f64.powi(i)).collect();
    for nu in 0..=4 {
        let cfg = reference().with_repetitions(nu);
        let values: Vec<f64> = grid.iter().map(|&l| plr_at(&cfg, l).unwrap().plr).collect();
        if values.windows(2).any(|w| w[1] < w[0]) {
            ok = false;
            notes.push(format!("PLR not monotone for nu = {nu}: {values:?}"));
        }
    }

    // truncation doubling and quadrature refinement
    let mut worst_trunc = 0.0f64;
    let mut worst_quad = 0.0f64;
    for (nu, target) in [(0, 1e-2), (2, 1e-2), (3, 1e-2), (6, 1e-5), (7, 1e-5)] {
        let cfg = reference().with_repetitions(nu).with_plr_target(target);
        let lambda = capacity(&cfg).unwrap().lambda_rate;
        let sc = Scenario::new(cfg.with_lambda(lambda)).unwrap();
        let k = sc.derived().truncation_k;
        let base = plr(&sc);
        let doubled = plr_truncated(&sc, 2 * k);
        worst_trunc = worst_trunc.max((doubled.plr - base.plr).abs() / (target / 10.0));
        worst_quad = worst_quad.max(base.error_estimate / base.plr / 1e-3);
    }
    ok &= worst_trunc < 1.0 && worst_quad < 1.0;
    notes.push(format!(
        "truncation doubling uses {:.2} of its bound, quadrature refinement {:.2}",
        worst_trunc, worst_quad
    ));

    // V nonincreasing in t
    let mut v_ok = true;
    for nu in 0..=6 {
        for lambda in [1.0, 10.0, 40.0] {
            let sc = Scenario::new(reference().with_repetitions(nu).with_lambda(lambda)).unwrap();
            for r in [20.0, 100.0, 190.0] {
                let table = loss_recursion(RecursionInputs::new(&sc, link_terms(r, &sc)));
                for t in 1..=(nu as usize + 1) {
                    for (c, v) in table.row(t).iter().enumerate() {
                        v_ok &= *v <= table.row(t - 1)[c] + 1e-15;
                    }
                }
            }
        }
    }
    ok &= v_ok;
    notes.push(format!("V[t][c] nonincreasing in t: {v_ok}"));

    // determinism under different thread counts
    let base = SimConfig::new(reference().with_lambda(15.0));
    let sim = SimConfig {
        num_ues: 400,
        num_slots: base.warmup_slots + 4000,
        replications: 4,
        seed: 99,
        ..base
    };
    let in_pool = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                (
                    run(&sim).unwrap(),
                    plr(&Scenario::new(reference()).unwrap()),
                )
            })
    };
    let one = in_pool(1);
    let four = in_pool(4);
    let same = one == four;
    ok &= same;
    notes.push(format!("1 vs 4 threads identical: {same}"));

    check(ok, notes.join("; "))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("overlap closed form equals enumeration", overlap_closure),
        ("degenerate recursion identities", degenerate_recursion),
        ("truncation radius cancels", radius_cancellation),
        (
            "EESM / exclusion radius consistency",
            eesm_radius_consistency,
        ),
        ("analytic vs simulated PLR", analytic_vs_simulation),
        ("optimal number of repetitions", optimal_repetitions),
        ("capacity vs bandwidth shape", capacity_shape),
        ("property suite", property_suite),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS [{}] {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name} ({secs:.1}s): {detail}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
