//! Subcommand implementations. Each returns the invariant checks it ran;
//! the caller writes the summary and maps the verdict to the exit code.

use std::sync::Arc;

use anyhow::{bail, Context};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sha2::{Digest, Sha256};

use hmmfdr_core::diagnostics::{delta_trace, lambda_convergence_trace, TraceOptions};
use hmmfdr_core::expansions::{
    backward_expansion, expected_r1_given_eta_check, expected_r2_given_eta0, interchange_check, mc_r2_given_eta0,
    r_double_prime, stationary_expansion, stationary_truncation, ExpansionResult, InterchangeConfig,
};
use hmmfdr_core::fd;
use hmmfdr_core::fdr::{
    brute_force_optimal_micro, compare_methods, oracle_bh_micro, q_values, ComparisonConfig, Method, BRUTE_FORCE_MAX,
    MICRO,
};
use hmmfdr_core::mc::{replicate_rng, run_replicates, MeanSe};
use hmmfdr_core::models::fisher_info_check;
use hmmfdr_core::{
    simulate_with_rng, Direction, InteractionModel, Matrix, ModelSelector, PosteriorResult, Scenario, Transitions,
    ValidatedSpec,
};

use crate::config::{hex, ExperimentConfig};
use crate::output::{float, opt_float, Artifacts, Check, Table};

/// Largest path count for which `posterior` also runs the enumeration oracle.
const ENUMERATION_LIMIT: f64 = 65_536.0;
/// Replicates per ε that also run the enumeration oracle.
const ENUMERATION_REPLICATES: usize = 64;
const ENUMERATION_TOL: f64 = 1e-10;
const CLOSED_FORM_TOL: f64 = 1e-12;

/// Validated inputs shared by every subcommand.
pub struct Run {
    pub cfg: ExperimentConfig,
    pub spec: ValidatedSpec,
    pub model: Arc<dyn InteractionModel>,
    pub quiet: bool,
}

impl Run {
    pub fn new(cfg: ExperimentConfig, quiet: bool) -> anyhow::Result<Self> {
        let spec = cfg.spec.0.clone().into_spec().context("config field `spec`")?.validate().context("config field `spec`")?;
        let model = cfg.model.build().context("config field `model`")?;
        Ok(Run { cfg, spec, model, quiet })
    }

    fn progress(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("[hmmfdr] {}", msg.as_ref());
        }
    }

    fn model(&self) -> &dyn InteractionModel {
        self.model.as_ref()
    }

    fn states(&self) -> &[String] {
        &self.spec.spec().states
    }

    /// Replicate `k` draws from its own stream; the same streams are reused
    /// at every ε so a grid compares like with like.
    fn replicates<T, F>(&self, f: F) -> anyhow::Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, &mut ChaCha8Rng) -> anyhow::Result<T> + Sync,
    {
        run_replicates(self.cfg.replicates, self.cfg.seed, |k, rng| f(k, rng).with_context(|| format!("replicate {k}")))
            .into_iter()
            .collect()
    }

    /// Seed for an independent auxiliary stream, distinct from the replicate
    /// streams for any realistic replicate count.
    fn sub_seed(&self, j: u64) -> u64 {
        self.cfg.seed.wrapping_add(j.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    pub fn metadata(&self) -> serde_json::Value {
        let spec_text = serde_json::to_string(&self.cfg.spec).expect("spec serializes");
        let backward = if self.spec.is_stationary() && stationary_start(&self.spec) {
            "stationary law"
        } else {
            "initial law propagated backward through the declared transitions"
        };
        let mut meta = json!({
            "spec_hash": hex(&Sha256::digest(spec_text.as_bytes())),
            "states": self.states(),
            "model": self.model.name(),
            "epsilon": self.cfg.epsilon.values(),
            "window": { "m": self.cfg.window.m, "n": self.cfg.window.n },
            "replicates": self.cfg.replicates,
            "alpha": self.cfg.alpha,
            "seed": self.cfg.seed,
            "negative_index_marginals": backward,
        });
        if !self.spec.is_stationary() {
            // Indices outside the stored range reuse the nearest stored matrix.
            meta["transition_extension"] = json!("nearest");
        }
        meta
    }
}

fn stationary_start(spec: &ValidatedSpec) -> bool {
    match spec.transitions() {
        Transitions::Stationary(q) => hmmfdr_core::chain::stationary_distribution(q)
            .map(|pi| pi.iter().zip(spec.initial()).all(|(a, b)| (a - b).abs() < 1e-12))
            .unwrap_or(false),
        Transitions::TimeVarying { .. } => false,
    }
}

fn dir_label(d: Direction) -> &'static str {
    match d {
        Direction::Forward => "forward",
        Direction::Backward => "backward",
    }
}

fn worst(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, f64::max)
}

pub fn run_simulate(run: &Run, out: &mut Artifacts) -> anyhow::Result<Vec<Check>> {
    let (m, n) = (run.cfg.window.m, run.cfg.window.n);
    let d = run.model.noise_dim();
    let mut cols: Vec<String> = ["epsilon", "replicate", "t", "eta", "state"].map(String::from).to_vec();
    if d == 1 {
        cols.push("z".into());
    } else {
        cols.extend((0..d).map(|i| format!("z_{i}")));
    }
    cols.push("x".into());
    let mut table = Table::new(&cols);
    let mut mismatched = 0usize;
    let mut observations = 0usize;
    let mut deterministic = true;
    for (g, &eps) in run.cfg.epsilon.values().iter().enumerate() {
        run.progress(format!("simulate: epsilon = {eps}"));
        let trajs = run.replicates(|_, rng| Ok(simulate_with_rng(&run.spec, run.model(), eps, m, n, None, rng)?))?;
        if g == 0 {
            let again = simulate_with_rng(&run.spec, run.model(), eps, m, n, None, &mut replicate_rng(run.cfg.seed, 0))?;
            deterministic = again.eta() == trajs[0].eta()
                && again.z().iter().zip(trajs[0].z()).all(|(a, b)| a.to_bits() == b.to_bits())
                && again.x().iter().zip(trajs[0].x()).all(|(a, b)| a.to_bits() == b.to_bits());
        }
        for (k, tr) in trajs.iter().enumerate() {
            for t in tr.indices() {
                let eta = tr.eta_at(t);
                let mut row = vec![float(eps), k.to_string(), t.to_string(), eta.to_string(), run.states()[eta].clone()];
                row.extend(tr.noise_at(t).iter().map(|&z| float(z)));
                row.push(float(tr.x_at(t)));
                table.push(row);
                observations += 1;
                if tr.observation(run.model(), t, eps).to_bits() != tr.x_at(t).to_bits() {
                    mismatched += 1;
                }
            }
        }
    }
    out.csv("trajectories.csv", &table)?;
    Ok(vec![
        Check::new(
            "observation_recompute",
            mismatched == 0,
            format!("{mismatched} of {observations} observations differ from φ(z, θ_η(ε))"),
        ),
        Check::new("seed_determinism", deterministic, "replicate 0 redrawn from its seed is bit-identical"),
    ])
}

struct PosteriorRecord {
    post: PosteriorResult,
    enumeration_gap: Option<f64>,
}

pub fn run_posterior(run: &Run, out: &mut Artifacts) -> anyhow::Result<Vec<Check>> {
    let (m, n) = (run.cfg.window.m, run.cfg.window.n);
    let k = run.spec.num_states();
    let enumerate = (k as f64).powi((m + n + 1) as i32) <= ENUMERATION_LIMIT;
    let mut cols: Vec<String> = ["epsilon", "replicate", "t"].map(String::from).to_vec();
    cols.extend(run.states().iter().map(|s| format!("posterior_{s}")));
    cols.extend(["rho", "log_flr", "log_llr"].map(String::from));
    let mut table = Table::new(&cols);
    let mut law_gap = 0.0f64;
    let mut odds_gap = 0.0f64;
    let mut enum_gap: Option<f64> = None;
    for &eps in &run.cfg.epsilon.values() {
        run.progress(format!("posterior: epsilon = {eps}"));
        let recs = run.replicates(|r, rng| {
            let tr = simulate_with_rng(&run.spec, run.model(), eps, m, n, None, rng)?;
            let sc = Scenario::new(&run.spec, run.model(), &tr)?;
            let post = sc.posterior(eps, m, n)?;
            let enumeration_gap = if enumerate && r < ENUMERATION_REPLICATES {
                let bf = sc.brute_force_posterior(eps, m, n)?;
                Some(worst(post.entries.iter().zip(&bf.entries).flat_map(|(a, b)| {
                    a.posterior.iter().zip(&b.posterior).map(|(x, y)| (x - y).abs()).chain([(a.rho - b.rho).abs()])
                })))
            } else {
                None
            };
            Ok(PosteriorRecord { post, enumeration_gap })
        })?;
        for (r, rec) in recs.iter().enumerate() {
            for e in &rec.post.entries {
                let mut row = vec![float(eps), r.to_string(), e.t.to_string()];
                row.extend(e.posterior.iter().map(|&p| float(p)));
                row.extend([float(e.rho), float(e.log_flr), float(e.log_llr)]);
                table.push(row);
                law_gap = law_gap.max((e.posterior.iter().sum::<f64>() - 1.0).abs());
                let p1: f64 = (0..k).filter(|&a| run.spec.is_h1(a)).map(|a| e.posterior[a]).sum();
                if p1 < 1.0 {
                    odds_gap = odds_gap.max((e.rho - p1 / (1.0 - p1)).abs() / e.rho.max(1.0));
                }
            }
            if let Some(g) = rec.enumeration_gap {
                enum_gap = Some(enum_gap.unwrap_or(0.0).max(g));
            }
        }
    }
    out.csv("posterior.csv", &table)?;
    let mut checks = vec![
        Check::new("posterior_is_law", law_gap <= 1e-12, format!("max |Σ_a P(a) - 1| = {law_gap:.3e}")),
        Check::new("odds_match_posterior", odds_gap <= 1e-9, format!("max relative odds gap {odds_gap:.3e}")),
    ];
    if let Some(g) = enum_gap {
        checks.push(Check::new(
            "dp_matches_enumeration",
            g <= ENUMERATION_TOL,
            format!("max abs difference {g:.3e} over the first {ENUMERATION_REPLICATES} replicates per ε (tolerance {ENUMERATION_TOL:e})"),
        ));
    }
    Ok(checks)
}

fn binary_r(spec: &ValidatedSpec) -> Option<f64> {
    match spec.transitions() {
        Transitions::Stationary(q) if spec.is_binary() => Some(1.0 - q[(0, 1)] - q[(1, 0)]),
        _ => None,
    }
}

fn expansion_truncation(run: &Run) -> anyhow::Result<usize> {
    if let Some(t) = run.cfg.options.truncation {
        if t < 2 {
            bail!("config field `options.truncation`: must be at least 2");
        }
        return Ok(t);
    }
    match binary_r(&run.spec) {
        Some(r) => Ok(stationary_truncation(r).max(2)),
        None => bail!("config field `options.truncation` is required for time-varying chains"),
    }
}

struct ExpansionRecord {
    fwd: ExpansionResult,
    bwd: ExpansionResult,
    fd: [(f64, f64); 3],
    closed: [Option<(f64, f64)>; 2],
    series: Option<(f64, f64)>,
}

pub fn run_expand(run: &Run, out: &mut Artifacts) -> anyhow::Result<Vec<Check>> {
    if !run.spec.is_binary() {
        bail!("expand requires a binary chain whose second state is the only H1 state");
    }
    let big_t = expansion_truncation(run)?;
    let opts = &run.cfg.options;
    let gaussian_r = match (&run.cfg.model, binary_r(&run.spec)) {
        (ModelSelector::TranslationGaussian, Some(r)) if stationary_start(&run.spec) => Some(r),
        _ => None,
    };
    run.progress(format!("expand: truncation T = {big_t}"));
    let recs = run.replicates(|_, rng| {
        let tr = simulate_with_rng(&run.spec, run.model(), 0.0, big_t, big_t, None, rng)?;
        let sc = Scenario::new(&run.spec, run.model(), &tr)?;
        let fwd = r_double_prime(&sc, big_t)?;
        let bwd = backward_expansion(&sc, big_t)?;
        let t = big_t as i64;
        let lam_f = |x: f64| sc.log_lambda_contrast(x, t).unwrap_or(f64::NAN);
        let lam_b = |x: f64| sc.log_lambda_contrast(x, -t).unwrap_or(f64::NAN);
        let total = |x: f64| sc.log_flr_over_llr(x, big_t, big_t).unwrap_or(f64::NAN);
        let fns: [&dyn Fn(f64) -> f64; 3] = [&lam_f, &lam_b, &total];
        let targets = [(fwd.r1, fwd.r2), (bwd.r1, bwd.r2), (fwd.r1 + bwd.r1, fwd.r2 + bwd.r2)];
        let mut fdv = [(0.0, 0.0); 3];
        for i in 0..3 {
            let (r1, r2) = targets[i];
            fdv[i] = (
                fd::first_derivative(fns[i], 0.0, opts.fd_h1, first_tol(r1)).value,
                fd::second_derivative(fns[i], 0.0, opts.fd_h2, second_tol(r2)).value,
            );
        }
        let closed = [Direction::Forward, Direction::Backward]
            .map(|d| stationary_expansion(&sc, d, big_t).ok().map(|c| (c.r1, c.r2)));
        let series = gaussian_r.map(|r| {
            let s = |sign: i64| (1..=t).map(|u| r.powi(u as i32) * tr.noise_at(sign * u)[0]).sum::<f64>();
            (s(1), s(-1))
        });
        Ok(ExpansionRecord { fwd, bwd, fd: fdv, closed, series })
    })?;

    let mut terms = Table::new(&["replicate", "direction", "t", "d0t", "d1", "d2", "cum_r1", "cum_r2"]);
    let mut summary = Table::new(&[
        "replicate",
        "direction",
        "truncation",
        "r1",
        "r2",
        "tail_bound",
        "fd_r1",
        "fd_r2",
        "closed_r1",
        "closed_r2",
        "series_r1",
    ]);
    let (mut fd1_fail, mut fd2_fail, mut closed_gap, mut series_fail) = (0usize, 0usize, 0.0f64, 0usize);
    let mut fd1_ratio = 0.0f64;
    let mut fd2_ratio = 0.0f64;
    for (k, rec) in recs.iter().enumerate() {
        for res in [&rec.fwd, &rec.bwd] {
            for term in &res.terms {
                terms.push(vec![
                    k.to_string(),
                    dir_label(res.direction).into(),
                    term.t.to_string(),
                    float(term.d0t),
                    float(term.d1),
                    float(term.d2),
                    float(term.cum_r1),
                    float(term.cum_r2),
                ]);
            }
        }
        let rows = [
            ("forward", rec.fwd.r1, rec.fwd.r2, rec.fwd.tail_bound),
            ("backward", rec.bwd.r1, rec.bwd.r2, rec.bwd.tail_bound),
            ("sum", rec.fwd.r1 + rec.bwd.r1, rec.fwd.r2 + rec.bwd.r2, rec.fwd.tail_bound + rec.bwd.tail_bound),
        ];
        for (i, (label, r1, r2, tail)) in rows.into_iter().enumerate() {
            let (d1, d2) = rec.fd[i];
            let e1 = (d1 - r1).abs() / first_tol(r1);
            let e2 = (d2 - r2).abs() / second_tol(r2);
            fd1_ratio = fd1_ratio.max(e1);
            fd2_ratio = fd2_ratio.max(e2);
            fd1_fail += usize::from(!(e1 <= 1.0));
            fd2_fail += usize::from(!(e2 <= 1.0));
            let closed = rec.closed.get(i).copied().flatten();
            if let Some((c1, c2)) = closed {
                closed_gap = closed_gap.max((c1 - r1).abs()).max((c2 - r2).abs());
            }
            let series = rec.series.and_then(|(f, b)| match i {
                0 => Some(f),
                1 => Some(b),
                _ => None,
            });
            if let Some(s) = series {
                series_fail += usize::from(!((s - r1).abs() <= tail.max(1e-13)));
            }
            summary.push(vec![
                k.to_string(),
                label.into(),
                big_t.to_string(),
                float(r1),
                float(r2),
                float(tail),
                float(d1),
                float(d2),
                opt_float(closed.map(|c| c.0)),
                opt_float(closed.map(|c| c.1)),
                opt_float(series),
            ]);
        }
    }
    out.csv("expansion_terms.csv", &terms)?;
    out.csv("expansion.csv", &summary)?;
    let mut checks = vec![
        Check::new(
            "first_derivative_matches_fd",
            fd1_fail == 0,
            format!("{fd1_fail} failures; worst error/tolerance {fd1_ratio:.3} (tolerance max(1e-6, 1e-4|r1|))"),
        ),
        Check::new(
            "second_derivative_matches_fd",
            fd2_fail == 0,
            format!("{fd2_fail} failures; worst error/tolerance {fd2_ratio:.3} (tolerance max(1e-3, 1e-3|r2|))"),
        ),
    ];
    if recs.iter().any(|r| r.closed.iter().any(Option::is_some)) {
        checks.push(Check::new(
            "stationary_form_matches_general",
            closed_gap <= CLOSED_FORM_TOL,
            format!("max difference {closed_gap:.3e}"),
        ));
    }
    if gaussian_r.is_some() {
        checks.push(Check::new(
            "gaussian_series",
            series_fail == 0,
            format!("{series_fail} replicates where r1 differs from Σ r^t z_t beyond the tail bound"),
        ));
    }
    Ok(checks)
}

fn first_tol(r1: f64) -> f64 {
    1e-6f64.max(1e-4 * r1.abs())
}

fn second_tol(r2: f64) -> f64 {
    1e-3f64.max(1e-3 * r2.abs())
}

/// Every row of every transition matrix is the same law, so hidden states
/// are independent across indices.
fn independent_chain(spec: &ValidatedSpec) -> bool {
    let rows_equal = |m: &Matrix| (1..m.nrows()).all(|i| (m.row(i) - m.row(0)).amax() <= 1e-15);
    match spec.transitions() {
        Transitions::Stationary(q) => rows_equal(q),
        Transitions::TimeVarying { matrices, .. } => matrices.iter().all(rows_equal),
    }
}

pub fn run_test(run: &Run, out: &mut Artifacts) -> anyhow::Result<Vec<Check>> {
    let (m, n) = (run.cfg.window.m, run.cfg.window.n);
    let k_se = run.cfg.options.k_se;
    let alpha = run.cfg.alpha;
    let independent = independent_chain(&run.spec);
    let mut per = Table::new(&["epsilon", "replicate", "method", "rejections", "false_rejections", "fdp", "true_rejections"]);
    let mut agg = Table::new(&[
        "epsilon",
        "method",
        "mean_fdp",
        "se_fdp",
        "mean_true_rejections",
        "se_true_rejections",
        "mean_rejections",
    ]);
    let mut checks = Vec::new();
    let mut differing = 0usize;
    let mut optimality_gaps = 0usize;
    let mut optimality_checked = 0usize;
    for &eps in &run.cfg.epsilon.values() {
        run.progress(format!("test: epsilon = {eps}"));
        let cfg = ComparisonConfig { epsilon: eps, m, n, alpha, replicates: run.cfg.replicates, seed: run.cfg.seed };
        let recs = compare_methods(&run.spec, run.model(), &cfg).with_context(|| format!("epsilon = {eps}"))?;
        let mut stats = Vec::new();
        for (method, pick) in [(Method::Flr, 0), (Method::Llr, 1)] {
            let (mut fdp, mut tr, mut rej) = (MeanSe::default(), MeanSe::default(), MeanSe::default());
            for rec in &recs {
                let r = if pick == 0 { &rec.flr } else { &rec.llr };
                per.push(vec![
                    float(eps),
                    rec.replicate.to_string(),
                    method.label().into(),
                    r.rejections.to_string(),
                    r.false_rejections.to_string(),
                    float(r.fdp),
                    r.true_rejections.to_string(),
                ]);
                fdp.push(r.fdp);
                tr.push(r.true_rejections as f64);
                rej.push(r.rejections as f64);
            }
            agg.push(vec![
                float(eps),
                method.label().into(),
                float(fdp.mean()),
                float(fdp.std_error()),
                float(tr.mean()),
                float(tr.std_error()),
                float(rej.mean()),
            ]);
            stats.push(fdp);
        }
        let flr = &stats[0];
        let limit = alpha + k_se * flr.std_error();
        checks.push(Check::new(
            format!("flr_fdr_control[epsilon={eps}]"),
            flr.mean() <= limit,
            format!("mean FDP {:.4} ± {:.4} against α = {alpha}", flr.mean(), flr.std_error()),
        ));
        differing += recs.iter().filter(|r| r.flr_rejected != r.llr_rejected).count();

        if m + n + 1 <= BRUTE_FORCE_MAX {
            let tr = simulate_with_rng(&run.spec, run.model(), eps, m, n, None, &mut replicate_rng(run.cfg.seed, 0))?;
            let post = Scenario::new(&run.spec, run.model(), &tr)?.posterior(eps, m, n)?;
            let a = (alpha * MICRO as f64).round() as i64;
            for method in [Method::Flr, Method::Llr] {
                let q: Vec<i64> = q_values(&post, method).iter().map(|v| (v * MICRO as f64).round() as i64).collect();
                let (_, obj) = oracle_bh_micro(&q, a);
                let (_, best) = brute_force_optimal_micro(&q, a)?;
                optimality_checked += 1;
                optimality_gaps += usize::from(obj != best);
            }
        }
    }
    out.csv("test_replicates.csv", &per)?;
    out.csv("test_summary.csv", &agg)?;
    if independent {
        checks.push(Check::new(
            "flr_equals_llr_under_independence",
            differing == 0,
            format!("{differing} replicates with different rejection sets"),
        ));
    }
    if optimality_checked > 0 {
        checks.push(Check::new(
            "oracle_optimality",
            optimality_gaps == 0,
            format!("{optimality_checked} q-vectors rounded to 1e-6 against exhaustive search, {optimality_gaps} gaps"),
        ));
    }
    Ok(checks)
}

pub fn run_diagnose(run: &Run, out: &mut Artifacts) -> anyhow::Result<Vec<Check>> {
    let (m, n) = (run.cfg.window.m, run.cfg.window.n);
    let opts = &run.cfg.options;
    let n_max = opts.n_max.unwrap_or(m.min(n));
    if n_max == 0 || n_max > m.min(n) {
        bail!("config field `options.n_max`: {n_max} must lie in [1, min(m, n)] = [1, {}]", m.min(n));
    }
    let schedule = opts.schedule.clone().unwrap_or_else(|| (1..=n_max).collect());
    if schedule.iter().any(|&s| s > n_max) {
        bail!("config field `options.schedule`: entries must not exceed n_max = {n_max}");
    }
    let trace_opts = TraceOptions { derivatives: opts.derivatives, h1: opts.fd_h1, h2: opts.fd_h2 };
    let mut delta_tab = Table::new(&["epsilon", "replicate", "direction", "n", "delta", "delta_nu1", "delta_nu2", "bound"]);
    let mut lam_cols: Vec<String> = ["epsilon", "replicate", "direction", "n"].map(String::from).to_vec();
    lam_cols.extend(run.states().iter().map(|s| format!("lambda_{s}")));
    lam_cols.extend(["delta", "gap_to_last"].map(String::from));
    let mut lam_tab = Table::new(&lam_cols);
    let mut rate_tab = Table::new(&["epsilon", "replicate", "direction", "fitted_rate", "gamma", "floor_gamma", "alpha"]);
    let mut viol_tab = Table::new(&["epsilon", "replicate", "direction", "n", "what", "value", "limit"]);
    let (mut delta_viol, mut lambda_viol) = (0usize, 0usize);
    for &eps in &run.cfg.epsilon.values() {
        run.progress(format!("diagnose: epsilon = {eps}"));
        let recs = run.replicates(|_, rng| {
            let tr = simulate_with_rng(&run.spec, run.model(), eps, m, n, None, rng)?;
            let sc = Scenario::new(&run.spec, run.model(), &tr)?;
            let mut out = Vec::new();
            for d in [Direction::Forward, Direction::Backward] {
                out.push((delta_trace(&sc, eps, d, n_max, &trace_opts)?, lambda_convergence_trace(&sc, eps, d, &schedule)?));
            }
            Ok(out)
        })?;
        for (k, pair) in recs.iter().enumerate() {
            for (dt, lt) in pair {
                let dl = dir_label(dt.direction);
                let head = || vec![float(eps), k.to_string(), dl.to_string()];
                for row in &dt.rows {
                    let mut r = head();
                    r.extend([
                        row.n.to_string(),
                        float(row.delta),
                        opt_float(row.delta_nu1),
                        opt_float(row.delta_nu2),
                        opt_float(row.bound),
                    ]);
                    delta_tab.push(r);
                }
                for row in &lt.rows {
                    let mut r = head();
                    r.push(row.n.to_string());
                    r.extend(row.lambda.iter().map(|&x| float(x)));
                    r.extend([float(row.delta), float(row.gap_to_last)]);
                    lam_tab.push(r);
                }
                let mut r = head();
                r.extend([
                    opt_float(dt.fitted_rate),
                    opt_float(dt.bound.map(|b| b.gamma)),
                    opt_float(dt.bound.map(|b| b.floor_gamma)),
                    opt_float(dt.bound.map(|b| b.alpha)),
                ]);
                rate_tab.push(r);
                for v in dt.violations.iter().chain(&lt.violations) {
                    let mut r = head();
                    r.extend([v.n.to_string(), v.what.into(), float(v.value), float(v.limit)]);
                    viol_tab.push(r);
                }
                delta_viol += dt.violations.len();
                lambda_viol += lt.violations.len();
            }
        }
    }
    out.csv("contraction.csv", &delta_tab)?;
    out.csv("lambda.csv", &lam_tab)?;
    out.csv("rates.csv", &rate_tab)?;
    out.csv("violations.csv", &viol_tab)?;
    Ok(vec![
        Check::new(
            "contraction_monotone_and_bounded",
            delta_viol == 0,
            format!("{delta_viol} violations of Δ monotonicity or the geometric bound"),
        ),
        Check::new(
            "lambda_envelope_and_range",
            lambda_viol == 0,
            format!("{lambda_viol} violations of the Λ envelope or range"),
        ),
    ])
}

pub fn run_mc_verify(run: &Run, out: &mut Artifacts) -> anyhow::Result<Vec<Check>> {
    if !run.spec.is_binary() {
        bail!("mc-verify requires a binary chain whose second state is the only H1 state");
    }
    let opts = &run.cfg.options;
    let k_se = opts.k_se;
    let big_t = expansion_truncation(run)?;
    let reps = run.cfg.replicates;
    let model = run.model();
    let mut table = Table::new(&["check", "target", "estimate", "std_error", "z_score", "pass"]);
    let mut checks = Vec::new();
    // `se` is the standard error of `estimate - target`.
    let mut record = |name: String, target: f64, estimate: f64, se: f64, pass: bool| {
        let z = if se > 0.0 { (estimate - target).abs() / se } else { f64::INFINITY };
        table.push(vec![name.clone(), float(target), float(estimate), float(se), float(z), pass.to_string()]);
        checks.push(Check::new(name, pass, format!("estimate {estimate:.6} ± {se:.6} against {target:.6} ({k_se} SE)")));
    };
    let mut bracket = |name: String, target: f64, est: &MeanSe| {
        record(name, target, est.mean(), est.std_error(), est.brackets(target, k_se));
    };

    run.progress("mc-verify: Fisher identities");
    let fisher = fisher_info_check(model, opts.fisher_samples, run.sub_seed(1))?;
    let j = fisher.closed_form;
    bracket("fisher_score_squared".into(), j, &fisher.score_squared);
    bracket("fisher_cross".into(), j, &fisher.cross);

    run.progress(format!("mc-verify: E[r'(0) | η] with T = {big_t}"));
    let path = simulate_with_rng(&run.spec, model, 0.0, 0, big_t, None, &mut replicate_rng(run.sub_seed(2), 0))?;
    let r1 = expected_r1_given_eta_check(&run.spec, model, path.eta(), reps, run.sub_seed(3))?;
    bracket("expected_r1_given_eta".into(), 0.0, &r1);

    for a in 0..2 {
        run.progress(format!("mc-verify: E[r''(0) | η0 = {a}]"));
        let target = expected_r2_given_eta0(&run.spec, model, a, big_t)?;
        let est = mc_r2_given_eta0(&run.spec, model, a, big_t, reps, run.sub_seed(4 + a as u64))?;
        bracket(format!("expected_r2_given_eta0[{}]", run.states()[a]), target, &est);
    }

    run.progress("mc-verify: expectation and derivative interchange");
    let ic = InterchangeConfig {
        n: opts.interchange_n,
        label: 1,
        epsilon: opts.interchange_epsilon,
        replicates: opts.interchange_replicates,
        seed: run.sub_seed(6),
        outer_h: 1e-2,
        inner_h: 1e-4,
    };
    let interchange = interchange_check(&run.spec, model, &ic)?;
    for c in interchange {
        let (a, b) = (&c.derivative_of_mean, &c.mean_of_derivative);
        let se = a.std_error().hypot(b.std_error());
        record(format!("interchange_order{}", c.order), b.mean(), a.mean(), se, c.agrees(k_se, 1e-6));
    }
    out.csv("mc_verify.csv", &table)?;
    Ok(checks)
}
