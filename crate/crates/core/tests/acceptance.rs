//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hmmfdr_core::chain::BinaryStationarySpec;
use hmmfdr_core::diagnostics::{delta_trace, lambda_convergence_trace, TraceOptions};
use hmmfdr_core::engine::{Direction, Scenario};
use hmmfdr_core::expansions::{
    backward_expansion, expected_r1_given_eta_check, expected_r2_given_eta0_stationary, mc_r2_given_eta0,
    r_double_prime, stationary_expansion, stationary_truncation,
};
use hmmfdr_core::fd;
use hmmfdr_core::fdr::{brute_force_optimal_micro, compare_methods, oracle_bh_micro, ComparisonConfig, MICRO};
use hmmfdr_core::mc::MeanSe;
use hmmfdr_core::models::{fisher_info_check, ModelSelector};
use hmmfdr_core::random;
use hmmfdr_core::trajectory::simulate;

type Outcome = Result<String, String>;

fn models() -> Vec<ModelSelector> {
    vec![ModelSelector::TranslationGaussian, ModelSelector::ScalingGaussian, ModelSelector::TStatistic { nu: 16 }]
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

/// 1. DP against path enumeration.
fn dp_vs_enumeration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let sels = [ModelSelector::TranslationGaussian, ModelSelector::ScalingGaussian];
    let mut worst = 0.0f64;
    for i in 0..200u64 {
        let model = sels[(i % 2) as usize].build().map_err(e)?;
        let spec = random::binary_stationary(&mut rng, 0.95, 0.02).validated().map_err(e)?;
        let w = rng.random_range(0..=6usize);
        let eps = rng.random_range(0.0..1.5);
        let tr = simulate(&spec, model.as_ref(), eps, w, w, i).map_err(e)?;
        let sc = Scenario::new(&spec, model.as_ref(), &tr).map_err(e)?;
        let f = sc.filter(eps).map_err(e)?;
        let dp = f.posterior(w, w).map_err(e)?;
        let bf = f.brute_force_posterior(w, w).map_err(e)?;
        for (x, y) in dp.entries.iter().zip(&bf.entries) {
            for a in 0..2 {
                worst = worst.max((x.posterior[a] - y.posterior[a]).abs());
            }
            worst = worst.max((x.rho - y.rho).abs());
            let via = f.rho_via_lambda(x.t, w, w).map_err(e)?;
            worst = worst.max((via - y.rho).abs());
        }
        for dir in [Direction::Forward, Direction::Backward] {
            let seq = f.l_sequence(dir, 0, w).map_err(e)?;
            for n in 1..=w {
                for a in 0..2 {
                    let want = f.brute_force_lambda(dir, 0, n, a).map_err(e)?;
                    worst = worst.max((seq.lambda(n, a).map_err(e)? - want).abs());
                }
            }
        }
        ensure(worst <= 1e-10, || format!("instance {i}: max abs difference {worst:.3e}"))?;
    }
    Ok(format!("200 instances, max abs difference {worst:.2e}"))
}

struct DerivativeStats {
    worst_first: f64,
    worst_second: f64,
    worst_closed: f64,
}

/// 2 and 3. Analytic derivatives against finite differences of the DP.
fn derivative_checks() -> Result<DerivativeStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    let sels = models();
    let big_t = 14usize;
    let mut stats = DerivativeStats { worst_first: 0.0, worst_second: 0.0, worst_closed: 0.0 };
    for i in 0..25u64 {
        let model = sels[(i % 3) as usize].build().map_err(e)?;
        let spec = random::binary_stationary(&mut rng, 0.8, 0.02).validated().map_err(e)?;
        let tr = simulate(&spec, model.as_ref(), 0.0, big_t, big_t, 100 + i).map_err(e)?;
        let sc = Scenario::new(&spec, model.as_ref(), &tr).map_err(e)?;
        let fwd = r_double_prime(&sc, big_t).map_err(e)?;
        let bwd = backward_expansion(&sc, big_t).map_err(e)?;

        let lam_f = |x: f64| sc.log_lambda_contrast(x, big_t as i64).expect("forward log ratio");
        let lam_b = |x: f64| sc.log_lambda_contrast(x, -(big_t as i64)).expect("backward log ratio");
        let total = |x: f64| sc.log_flr_over_llr(x, big_t, big_t).expect("flr over llr");
        let cases: [(&str, &dyn Fn(f64) -> f64, f64, f64); 3] = [
            ("forward", &lam_f, fwd.r1, fwd.r2),
            ("backward", &lam_b, bwd.r1, bwd.r2),
            ("sum", &total, fwd.r1 + bwd.r1, fwd.r2 + bwd.r2),
        ];
        for (name, f, r1, r2) in cases {
            let tol1 = 1e-6f64.max(1e-4 * r1.abs());
            let d1 = fd::first_derivative(f, 0.0, 1e-5, tol1).value;
            let err1 = (d1 - r1).abs();
            stats.worst_first = stats.worst_first.max(err1 / tol1);
            ensure(err1 <= tol1, || format!("instance {i} {name}: r1 {r1} vs FD {d1}"))?;

            let tol2 = 1e-3f64.max(1e-3 * r2.abs());
            let d2 = fd::second_derivative(f, 0.0, 1e-3, tol2).value;
            let err2 = (d2 - r2).abs();
            stats.worst_second = stats.worst_second.max(err2 / tol2);
            ensure(err2 <= tol2, || format!("instance {i} {name}: r2 {r2} vs FD {d2}"))?;
        }
        for (dir, general) in [(Direction::Forward, &fwd), (Direction::Backward, &bwd)] {
            let closed = stationary_expansion(&sc, dir, big_t).map_err(e)?;
            let diff = (closed.r1 - general.r1).abs().max((closed.r2 - general.r2).abs());
            stats.worst_closed = stats.worst_closed.max(diff);
            ensure(diff <= 1e-12, || format!("instance {i}: closed form differs by {diff:.3e}"))?;
        }
    }
    Ok(stats)
}

/// 4. Example with Gaussian translation noise and r = 0.5.
fn example_one() -> Outcome {
    let spec = BinaryStationarySpec::symmetric(0.5).map_err(e)?.validated().map_err(e)?;
    let model = ModelSelector::TranslationGaussian.build().map_err(e)?;
    let big_t = 40usize;
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let tr = simulate(&spec, model.as_ref(), 0.0, 0, big_t, seed).map_err(e)?;
        let sc = Scenario::new(&spec, model.as_ref(), &tr).map_err(e)?;
        let got = r_double_prime(&sc, big_t).map_err(e)?.r1;
        let want: f64 = (1..=big_t).map(|t| 0.5f64.powi(t as i32) * tr.noise_at(t as i64)[0]).sum();
        worst = worst.max((got - want).abs());
    }
    ensure(worst <= 1e-13, || format!("r1 differs from Σ r^t z_t by {worst:.3e}"))?;

    let target = expected_r2_given_eta0_stationary(&spec, model.as_ref(), 1).map_err(e)?;
    ensure((target - 1.0 / 3.0).abs() < 1e-15, || format!("closed form {target}"))?;
    let trunc = stationary_truncation(0.5);
    let r2 = mc_r2_given_eta0(&spec, model.as_ref(), 1, trunc, 10_000, 4004).map_err(e)?;
    ensure(r2.brackets(target, 4.0), || format!("E[r''|η0=1] = {} ± {}", r2.mean(), r2.std_error()))?;

    let path = simulate(&spec, model.as_ref(), 0.0, 0, trunc, 4005).map_err(e)?;
    let r1 = expected_r1_given_eta_check(&spec, model.as_ref(), path.eta(), 10_000, 4006).map_err(e)?;
    ensure(r1.brackets(0.0, 4.0), || format!("E[r'|η] = {} ± {}", r1.mean(), r1.std_error()))?;
    Ok(format!(
        "r1 roundoff {worst:.1e}; E[r''|η0=1] = {:.4} ± {:.4} (target 1/3); E[r'|η] = {:.4} ± {:.4}",
        r2.mean(),
        r2.std_error(),
        r1.mean(),
        r1.std_error()
    ))
}

/// 5. Fisher identities.
fn fisher() -> Outcome {
    let pinned = [1.0, 2.0, 0.9710329544378428];
    let mut parts = Vec::new();
    for (sel, want) in models().into_iter().zip(pinned) {
        let model = sel.build().map_err(e)?;
        ensure((model.fisher_info_at_zero() - want).abs() < 1e-12, || {
            format!("{}: closed form {} vs {want}", model.name(), model.fisher_info_at_zero())
        })?;
        let c = fisher_info_check(model.as_ref(), 200_000, 5005).map_err(e)?;
        ensure(c.brackets(4.0), || format!("{}: {c:?}", model.name()))?;
        parts.push(format!(
            "{} J={} sq={:.4}±{:.4} cross={:.4}±{:.4}",
            model.name(),
            want,
            c.score_squared.mean(),
            c.score_squared.std_error(),
            c.cross.mean(),
            c.cross.std_error()
        ));
    }
    Ok(parts.join("; "))
}

/// 6. Contraction, the Λ envelope, the κ = 1 bound and Λ range.
fn contraction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6006);
    let sels = models();
    let n_max = 25usize;
    let schedule: Vec<usize> = (1..=n_max).collect();
    let mut checked = 0;
    for i in 0..50u64 {
        let model = sels[(i % 3) as usize].build().map_err(e)?;
        let spec = match i % 3 {
            0 => random::binary_stationary(&mut rng, 0.9, 0.03).to_spec(),
            1 => random::stationary_spec(&mut rng, 3, 0.06),
            _ => random::persistent_binary_time_varying(&mut rng, -(n_max as i64), n_max as i64, 0.5, 0.06),
        }
        .validate()
        .map_err(e)?;
        let eps = rng.random_range(0.0..1.5);
        let tr = simulate(&spec, model.as_ref(), eps, n_max, n_max, 600 + i).map_err(e)?;
        let sc = Scenario::new(&spec, model.as_ref(), &tr).map_err(e)?;
        for dir in [Direction::Forward, Direction::Backward] {
            let t = delta_trace(&sc, eps, dir, n_max, &TraceOptions { derivatives: false, ..Default::default() })
                .map_err(e)?;
            ensure(t.violations.is_empty(), || format!("instance {i} {dir:?}: {:?}", t.violations))?;
            let b = t.bound.ok_or("missing kappa-one bound")?;
            ensure(b.gamma <= b.floor_gamma + 1e-12, || format!("instance {i}: γ {} above {}", b.gamma, b.floor_gamma))?;
            let l = lambda_convergence_trace(&sc, eps, dir, &schedule).map_err(e)?;
            ensure(l.violations.is_empty(), || format!("instance {i} {dir:?}: {:?}", l.violations))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} traces: Δ monotone, Δ_n ≤ αγ^n, envelope and Λ range hold"))
}

/// 7. Optimality of the oracle procedure under exact arithmetic.
fn optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7007);
    let mut nonempty = 0;
    for i in 0..200 {
        let q: Vec<i64> = (0..12)
            .map(|_| if rng.random_bool(0.4) { rng.random_range(0..=MICRO / 5) } else { rng.random_range(0..=MICRO) })
            .collect();
        let alpha = rng.random_range(1..=MICRO / 2);
        let (set, obj) = oracle_bh_micro(&q, alpha);
        let (_, best) = brute_force_optimal_micro(&q, alpha).map_err(e)?;
        ensure(obj == best, || format!("vector {i}: step-up {obj} vs optimum {best}"))?;
        let sum: i64 = set.iter().map(|&k| q[k]).sum();
        ensure(sum <= alpha * set.len() as i64, || format!("vector {i}: level exceeded"))?;
        if !set.is_empty() {
            nonempty += 1;
        }
    }
    Ok(format!("200 vectors (n = 12), objectives equal; {nonempty} with rejections"))
}

/// 8. Full against local ratios in the oracle procedure.
fn dependence_effect() -> Outcome {
    let model = ModelSelector::TranslationGaussian.build().map_err(e)?;
    let indep = BinaryStationarySpec::new(0.3, 0.7).map_err(e)?.validated().map_err(e)?;
    let cfg = ComparisonConfig { epsilon: 1.0, m: 20, n: 20, alpha: 0.1, replicates: 2000, seed: 8008 };
    let recs = compare_methods(&indep, model.as_ref(), &cfg).map_err(e)?;
    let differ = recs.iter().filter(|r| r.flr_rejected != r.llr_rejected).count();
    ensure(differ == 0, || format!("r = 0: {differ} replicates with different rejection sets"))?;

    let dep = BinaryStationarySpec::symmetric(0.7).map_err(e)?.validated().map_err(e)?;
    let recs = compare_methods(&dep, model.as_ref(), &ComparisonConfig { seed: 8009, ..cfg }).map_err(e)?;
    let flr = MeanSe::from_slice(&recs.iter().map(|r| r.flr.true_rejections as f64).collect::<Vec<_>>());
    let llr = MeanSe::from_slice(&recs.iter().map(|r| r.llr.true_rejections as f64).collect::<Vec<_>>());
    ensure(flr.mean() > llr.mean(), || format!("r = 0.7: FLR {} vs LLR {}", flr.mean(), llr.mean()))?;
    Ok(format!(
        "r = 0: identical sets in 2000 replicates; r = 0.7: mean true rejections FLR {:.3} > LLR {:.3}",
        flr.mean(),
        llr.mean()
    ))
}

fn main() {
    let mut failures = 0;
    let mut report = |id: u32, name: &str, out: Outcome, started: Instant| {
        let secs = started.elapsed().as_secs_f64();
        match out {
            Ok(msg) => println!("criterion {id} PASS [{secs:.1}s] {name}: {msg}"),
            Err(msg) => {
                failures += 1;
                println!("criterion {id} FAIL [{secs:.1}s] {name}: {msg}");
            }
        }
    };

    let t = Instant::now();
    report(1, "DP matches path enumeration", dp_vs_enumeration(), t);

    let t = Instant::now();
    let derivs = derivative_checks();
    let elapsed = t;
    match &derivs {
        Ok(s) => {
            report(
                2,
                "first derivative against finite differences",
                Ok(format!("25 instances x 3 models cycled; worst error/tolerance {:.3}", s.worst_first)),
                elapsed,
            );
            report(
                3,
                "second derivative and closed form",
                Ok(format!(
                    "worst error/tolerance {:.3}; closed vs general {:.1e}",
                    s.worst_second, s.worst_closed
                )),
                elapsed,
            );
        }
        Err(msg) => {
            report(2, "first derivative against finite differences", Err(msg.clone()), elapsed);
            report(3, "second derivative and closed form", Err(msg.clone()), elapsed);
        }
    }

    let t = Instant::now();
    report(4, "Gaussian example closed forms and expectations", example_one(), t);
    let t = Instant::now();
    report(5, "Fisher identities", fisher(), t);
    let t = Instant::now();
    report(6, "contraction diagnostics", contraction(), t);
    let t = Instant::now();
    report(7, "oracle procedure optimality", optimality(), t);
    let t = Instant::now();
    report(8, "dependence effect end to end", dependence_effect(), t);

    if failures > 0 {
        println!("acceptance: {failures} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all 8 criteria passed");
}
