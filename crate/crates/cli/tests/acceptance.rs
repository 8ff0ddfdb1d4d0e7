//! Acceptance criteria 1–12. Each criterion prints one PASS/FAIL line; the
//! process exits nonzero when any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use addsel::basis::{BasisSpec, BlockGram, Centering, DesignBlocks};
use addsel::config::{ExperimentConfig, MRule};
use addsel::diagnostics::{
    chi2_tail_bounds, estimate_event_e_failure, event_e_check_blocks, gaussian_design_blocks,
    rip_constant_detail, selection_error_bound, BoundParams,
};
use addsel::estimate::rate_experiment;
use addsel::geometry::{
    check_ric_chain, epsilon_constants, epsilon_constants_from_gram, kappa_values, phi_qstar,
    population_projection_residual, rho_qstar, rho_qstar_from_gram, ric_chain_lower_bound,
};
use addsel::law::DesignLaw;
use addsel::rng::stream;
use addsel::selection::projection_gap_blocks;
use addsel::simulate::{
    approximation_decay_experiment, gen_design, gen_model, resolve_level, run_trials, Summary,
};
use addsel::subsets;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

// ---------------------------------------------------------------------------
// independent oracles

/// Lower Cholesky factor of an SPD matrix.
fn chol_l(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone()
        .cholesky()
        .expect("Gram block must be positive definite")
        .l()
}

/// Largest canonical correlation between the column spans described by
/// (G11, G22, G12): σ_max(L1⁻¹ G12 L2⁻ᵀ).
fn cos_angle_oracle(g11: &DMatrix<f64>, g22: &DMatrix<f64>, g12: &DMatrix<f64>) -> f64 {
    let l1 = chol_l(g11);
    let l2 = chol_l(g22);
    let x = l1.solve_lower_triangular(g12).unwrap();
    let y = l2.solve_lower_triangular(&x.transpose()).unwrap();
    y.singular_values().max()
}

/// ρ over every pair of disjoint nonempty sets of size ≤ q*.
fn rho_oracle(gram: &BlockGram, qstar: usize) -> f64 {
    let q = gram.q();
    let mut best = 0.0_f64;
    for a in subsets::up_to(q, qstar).skip(1) {
        let rest: Vec<usize> = (0..q).filter(|j| !a.contains(j)).collect();
        for k in 1..=qstar.min(rest.len()) {
            for b in subsets::of_size(&rest, k) {
                best = best.max(cos_angle_oracle(
                    &gram.sub(&a),
                    &gram.sub(&b),
                    &gram.cross(&a, &b),
                ));
            }
        }
    }
    best
}

/// 1 − ε_{2q*}: smallest eigenvalue of the block-whitened Gram over all sets
/// of size ≤ 2q*.
fn one_minus_eps_oracle(gram: &BlockGram, qstar: usize) -> f64 {
    let q = gram.q();
    let mut worst = f64::INFINITY;
    for set in subsets::up_to(q, (2 * qstar).min(q)).skip(1) {
        let g = gram.sub(&set);
        let dims: Vec<usize> = set.iter().map(|&j| gram.block_dim(j)).collect();
        let total: usize = dims.iter().sum();
        let mut w = DMatrix::zeros(total, total);
        let mut at = 0;
        for (i, &j) in set.iter().enumerate() {
            let lj = chol_l(&gram.sub(&[j]));
            let inv = lj.try_inverse().unwrap();
            w.view_mut((at, at), (dims[i], dims[i])).copy_from(&inv);
            at += dims[i];
        }
        let m = &w * g * w.transpose();
        let m = (&m + m.transpose()) * 0.5;
        worst = worst.min(m.symmetric_eigenvalues().min());
    }
    worst
}

/// Block Gram BᵀB/N of a random matrix with a shared factor, so blocks are
/// correlated.
fn random_gram<R: Rng>(rng: &mut R, dims: &[usize], shared: f64) -> BlockGram {
    let d: usize = dims.iter().sum();
    let rows = 3 * d + 5;
    let mut b = DMatrix::<f64>::zeros(rows, d);
    let loadings: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    for i in 0..rows {
        let u: f64 = rng.sample(StandardNormal);
        for c in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            b[(i, c)] = z + shared * loadings[c] * u;
        }
    }
    BlockGram::new(b.transpose() * &b / rows as f64, dims).unwrap()
}

fn random_dims<R: Rng>(rng: &mut R, q: usize) -> Vec<usize> {
    (0..q).map(|_| rng.random_range(1..=3)).collect()
}

/// κ_l by enumeration of the component Gram F_ab = c_aᵀ G_ab c_b.
fn kappa_l_oracle(gram: &BlockGram, coeffs: &DVector<f64>, active: &[usize]) -> Vec<f64> {
    let comp = |j: usize| -> DVector<f64> {
        let cols = gram.columns(&[j]);
        DVector::from_iterator(cols.len(), cols.iter().map(|&c| coeffs[c]))
    };
    let s = active.len();
    let mut f = DMatrix::zeros(s, s);
    for a in 0..s {
        for b in 0..s {
            f[(a, b)] = (comp(active[a]).transpose()
                * gram.cross(&[active[a]], &[active[b]])
                * comp(active[b]))[(0, 0)];
        }
    }
    let mut out = vec![f64::INFINITY; s];
    for l in 1..=s {
        for set in subsets::of_size(&(0..s).collect::<Vec<_>>(), l) {
            let v: f64 = set
                .iter()
                .flat_map(|&a| set.iter().map(move |&b| (a, b)))
                .map(|(a, b)| f[(a, b)])
                .sum();
            out[l - 1] = out[l - 1].min(v);
        }
    }
    out
}

/// ‖f − P f‖²_n via SVD of the column space.
fn svd_residual(a: &DMatrix<f64>, f: &DVector<f64>) -> f64 {
    let n = f.len() as f64;
    if a.ncols() == 0 {
        return f.norm_squared() / n;
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.unwrap();
    let smax = svd.singular_values.max();
    let mut proj = 0.0;
    for (k, &sv) in svd.singular_values.iter().enumerate() {
        if sv > 1e-10 * smax {
            proj += u.column(k).dot(f).powi(2);
        }
    }
    (f.norm_squared() - proj).max(0.0) / n
}

// ---------------------------------------------------------------------------
// criteria

fn c1_pythagoras() -> Outcome {
    let t0 = Instant::now();
    let mut rng = stream(101, &[]);
    let mut worst = 0.0_f64;
    let mut violations = 0;
    let mut checks = 0;
    for inst in 0..100 {
        let q = rng.random_range(3..=6);
        let n = rng.random_range(40..=200);
        let levels: Vec<usize> = (0..q).map(|_| rng.random_range(2..=6)).collect();
        let spec = BasisSpec::new(levels, vec![true; q]).unwrap();
        let x = gen_design(&DesignLaw::IndependentUniform, n, q, 7000 + inst).unwrap();
        let blocks = DesignBlocks::build(&x, &spec, &Centering::Empirical).unwrap();
        let qstar = rng.random_range(1..=q);
        let s = rng.random_range(1..=qstar);
        let mut active = rand::seq::index::sample(&mut rng, q, s).into_vec();
        active.sort_unstable();
        let a0 = blocks.select(&active);
        let c = DVector::from_fn(a0.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let f = &a0 * c;
        let fnorm = f.norm_squared() / n as f64;
        for set in subsets::up_to(q, qstar) {
            let lhs = projection_gap_blocks(&blocks, &set, &active, &f).unwrap();
            let rhs = svd_residual(&blocks.select(&set), &f);
            let err = (lhs - rhs).abs() / fnorm;
            worst = worst.max(err);
            checks += 1;
            if err > 1e-8 {
                violations += 1;
            }
        }
    }
    let el = t0.elapsed();
    outcome(
        violations == 0 && within(el, 10.0),
        format!(
            "{checks} subset checks, {violations} violations, worst relative error {worst:.2e} (tol 1e-8), {:.2} s (limit 10 s)",
            el.as_secs_f64()
        ),
    )
}

fn c2_projection_gap() -> Outcome {
    let t0 = Instant::now();
    let mut rng = stream(202, &[]);
    let mut violations = 0;
    let mut rho_mismatch = 0_f64;
    let mut min_slack = f64::INFINITY;
    let mut checks = 0;
    for _ in 0..100 {
        let q = rng.random_range(3..=5);
        let qstar = rng.random_range(1..=2.min(q - 1));
        let s = rng.random_range(1..=qstar);
        let dims = random_dims(&mut rng, q);
        let shared = rng.random_range(0.2..1.5);
        let gram = random_gram(&mut rng, &dims, shared);
        let rho = rho_oracle(&gram, qstar);
        let lib_rho = rho_qstar_from_gram(&gram, qstar, u128::MAX).unwrap();
        rho_mismatch = rho_mismatch.max((rho - lib_rho).abs());
        let active: Vec<usize> = (0..s).collect();
        let total: usize = dims.iter().sum();
        let mut coeffs = DVector::zeros(total);
        for c in gram.columns(&active) {
            coeffs[c] = rng.sample::<f64, _>(StandardNormal);
        }
        let kappa_l = kappa_l_oracle(&gram, &coeffs, &active);
        for set in subsets::up_to(q, qstar) {
            let l = active.iter().filter(|j| !set.contains(j)).count();
            if l == 0 {
                continue;
            }
            let resid = population_projection_residual(&gram, &coeffs, &set).unwrap();
            let slack = resid - (1.0 - rho * rho) * kappa_l[l - 1];
            min_slack = min_slack.min(slack);
            checks += 1;
            if slack < -1e-10 {
                violations += 1;
            }
        }
    }
    let el = t0.elapsed();
    outcome(
        violations == 0 && rho_mismatch < 1e-8 && within(el, 30.0),
        format!(
            "{checks} checks, {violations} violations, min slack {min_slack:.3e}, library vs oracle rho max diff {rho_mismatch:.1e}, {:.2} s (limit 30 s)",
            el.as_secs_f64()
        ),
    )
}

fn c3_ric_chain() -> Outcome {
    let t0 = Instant::now();
    let mut rng = stream(303, &[]);
    let mut violations = 0;
    let mut corrected_violations = 0;
    let mut lib_mismatch = 0_f64;
    let mut example = String::new();
    for i in 0..100 {
        let (gram, qstar) = if i % 2 == 0 {
            let q = rng.random_range(3..=4);
            let m = [3, 5][rng.random_range(0..2)];
            let r = rng.random_range(0.1..0.7);
            let spec = BasisSpec::uniform(q, m, true).unwrap();
            (
                DesignLaw::GaussianCopula { r }.block_gram(&spec).unwrap(),
                rng.random_range(1..=2),
            )
        } else {
            let q = rng.random_range(3..=5);
            let dims = random_dims(&mut rng, q);
            let shared = rng.random_range(0.2..1.5);
            (
                random_gram(&mut rng, &dims, shared),
                rng.random_range(1..=2),
            )
        };
        let rho = rho_oracle(&gram, qstar);
        let lower = one_minus_eps_oracle(&gram, qstar);
        let (lib_eps, _) = epsilon_constants_from_gram(&gram, qstar, u128::MAX).unwrap();
        lib_mismatch = lib_mismatch.max(((1.0 - lib_eps) - lower).abs());
        if !check_ric_chain(rho, 1.0 - lower, qstar) {
            violations += 1;
            if example.is_empty() {
                let exponent = (qstar as f64).log2() + 1.0;
                example = format!(
                    "design {i}: q*={qstar}, rho={rho:.4}, 1-eps={lower:.4} < (1-rho^2)^{exponent}={:.4}",
                    (1.0 - rho * rho).powf(exponent)
                );
            }
        }
        if lower < ric_chain_lower_bound(rho, qstar) - 1e-10 {
            corrected_violations += 1;
        }
    }
    let el = t0.elapsed();
    outcome(
        violations == 0 && within(el, 60.0),
        format!(
            "{violations}/100 violations of 1-eps >= (1-rho^2)^(log2 q*+1) (first: {example}); \
             (1-rho)^(ceil(log2 q*)+1) violated {corrected_violations} times; library vs oracle eps diff {lib_mismatch:.1e}; {:.2} s (limit 60 s)",
            el.as_secs_f64()
        ),
    )
}

fn c4_sup_norm_ratio() -> Outcome {
    let t0 = Instant::now();
    let cases = [
        (DesignLaw::IndependentUniform, 3, 5, 1),
        (DesignLaw::IndependentUniform, 4, 3, 2),
        (DesignLaw::GaussianCopula { r: 0.3 }, 3, 5, 1),
        (DesignLaw::GaussianCopula { r: 0.5 }, 3, 3, 1),
        (DesignLaw::GaussianCopula { r: 0.3 }, 4, 3, 2),
    ];
    let mut violations = 0;
    let mut parts = Vec::new();
    for (law, q, m, qstar) in cases {
        let spec = BasisSpec::uniform(q, m, true).unwrap();
        let phi = phi_qstar(&spec, &law, (2 * qstar).min(q), 4096, u128::MAX).unwrap();
        let (eps, _) = epsilon_constants(&spec, &law, qstar, u128::MAX).unwrap();
        let c = law.density_bound(q);
        let bound = 2.0 / (c * (1.0 - eps));
        if phi * phi > bound {
            violations += 1;
        }
        parts.push(format!(
            "{}(q={q},m={m},q*={qstar}) phi^2={:.3}<={bound:.3}",
            law.kind(),
            phi * phi
        ));
    }
    let el = t0.elapsed();
    outcome(
        violations == 0 && within(el, 60.0),
        format!(
            "{violations} violations; {}; {:.2} s (limit 60 s)",
            parts.join(", "),
            el.as_secs_f64()
        ),
    )
}

fn c5_chi_square() -> Outcome {
    let t0 = Instant::now();
    let samples = 100_000;
    let mut violations = 0;
    for d in [1usize, 2, 5, 20] {
        let dist = ChiSquared::new(d as f64).unwrap();
        let mut rng = stream(505, &[d as u64]);
        let draws: Vec<f64> = (0..samples).map(|_| dist.sample(&mut rng)).collect();
        for x in [1.0, 2.0, 5.0, 10.0, 20.0] {
            let (upper, lower) = chi2_tail_bounds(d, x).unwrap();
            let df = d as f64;
            let up = draws.iter().filter(|&&v| v - df >= x).count() as f64 / samples as f64;
            let lo = draws.iter().filter(|&&v| df - v >= x).count() as f64 / samples as f64;
            for (p, b) in [(up, upper), (lo, lower)] {
                let se = (p * (1.0 - p) / samples as f64).sqrt();
                if p > b + 3.0 * se {
                    violations += 1;
                }
            }
        }
    }
    let el = t0.elapsed();
    outcome(
        violations == 0 && within(el, 30.0),
        format!(
            "40 tail checks at 1e5 draws, {violations} exceed bound + 3 stderr, {:.2} s (limit 30 s)",
            el.as_secs_f64()
        ),
    )
}

fn trial_summary(cfg: &ExperimentConfig) -> Summary {
    run_trials(cfg, &mut |_| Ok(())).unwrap()
}

fn c6_noiseless() -> Outcome {
    let t0 = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for (q, s, n) in [(8, 2, 100), (12, 3, 200)] {
        let cfg = ExperimentConfig {
            n,
            q,
            s,
            qstar: s,
            sigma: 0.0,
            tail_fraction: 0.0,
            m_rule: MRule::Fixed(5),
            trials: 50,
            seed: 6,
            ..ExperimentConfig::default()
        };
        let sum = trial_summary(&cfg);
        pass &= sum.errors == 0 && sum.exact == sum.trials;
        parts.push(format!(
            "(q={q},s={s},n={n}) exact {}/{}",
            sum.exact, sum.trials
        ));
    }
    let el = t0.elapsed();
    outcome(
        pass && within(el, 60.0),
        format!(
            "{}; {:.2} s (limit 60 s)",
            parts.join(", "),
            el.as_secs_f64()
        ),
    )
}

const C7_GRID: [usize; 4] = [100, 200, 400, 800];

fn c7_config(n: usize) -> ExperimentConfig {
    ExperimentConfig {
        n,
        q: 8,
        s: 2,
        qstar: 2,
        sigma: 0.5,
        kappa1: 1.0,
        alpha: 2.0,
        k_bound: 100.0,
        cprime: 0.001,
        m_rule: MRule::SampleSize,
        trials: 200,
        seed: 7,
        ..ExperimentConfig::default()
    }
}

fn c7_consistency(runs: &[Summary], elapsed: Duration) -> Outcome {
    let freq: Vec<f64> = runs.iter().map(|s| s.exact_freq.unwrap_or(0.0)).collect();
    let se: Vec<f64> = runs.iter().map(|s| s.exact_stderr.unwrap_or(0.0)).collect();
    let monotone = (1..freq.len())
        .all(|i| freq[i] >= freq[i - 1] - 2.0 * (se[i].powi(2) + se[i - 1].powi(2)).sqrt());
    let last = *freq.last().unwrap();
    let level = runs[0].level;
    let errors: usize = runs.iter().map(|s| s.errors).sum();
    let detail = C7_GRID
        .iter()
        .zip(&freq)
        .map(|(n, f)| format!("n={n}: {f:.3}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        last >= 0.95 && monotone && errors == 0 && within(elapsed, 300.0),
        format!(
            "level m={level}; exact-recovery {detail}; nondecreasing within 2 stderr: {monotone}; {:.1} s (limit 300 s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn c8_bound_dominance(runs: &[Summary]) -> Outcome {
    let cfg0 = c7_config(C7_GRID[0]);
    let level = resolve_level(&cfg0).unwrap();
    let spec = BasisSpec::uniform(cfg0.q, level, true).unwrap();
    let law = DesignLaw::IndependentUniform;
    let model = gen_model(
        cfg0.q,
        cfg0.s,
        cfg0.alpha,
        cfg0.k_bound,
        cfg0.kappa1,
        0.0,
        0,
    )
    .unwrap();
    let (_, kappa_l) = kappa_values(&model, &law).unwrap();
    let rho = rho_qstar(&spec, &law, cfg0.qstar, u128::MAX).unwrap();
    let d_l: Vec<usize> = (1..=cfg0.q).map(|l| spec.d_l(l)).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for (&n, sum) in C7_GRID.iter().zip(runs) {
        let (p_e, _) = estimate_event_e_failure(
            &law,
            &spec,
            n,
            cfg0.qstar,
            &model.active,
            cfg0.delta,
            100,
            808 + n as u64,
            u128::MAX,
        )
        .unwrap();
        let bound = selection_error_bound(&BoundParams {
            n,
            sigma2: cfg0.sigma * cfg0.sigma,
            rho,
            kappa_l: kappa_l.clone(),
            d_l: d_l.clone(),
            s: cfg0.s,
            qstar: cfg0.qstar,
            q: cfg0.q,
            delta: cfg0.delta,
            cprime: cfg0.cprime,
            p_event_e_complement: Some(p_e),
            include_truncation: false,
        });
        let fail = 1.0 - sum.success_freq.unwrap_or(0.0);
        let se = (fail * (1.0 - fail) / sum.completed.max(1) as f64).sqrt();
        match bound {
            Ok(b) => {
                let ok = fail <= b.total + 3.0 * se;
                pass &= ok;
                parts.push(format!(
                    "n={n}: failure {fail:.3} <= bound {:.3e} (P(E^c)={p_e:.2})",
                    b.total
                ));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("n={n}: bound unavailable ({e})"));
            }
        }
    }
    outcome(pass, parts.join(", "))
}

fn c9_gaussian_rip() -> Outcome {
    let t0 = Instant::now();
    let active: Vec<usize> = (0..5).collect();
    let trials = 50;
    let mut below = 0;
    let mut agree = 0;
    let mut deltas = Vec::new();
    for t in 0..trials {
        let blocks = gaussian_design_blocks(400, 100, 9000 + t).unwrap();
        let rip = rip_constant_detail(&blocks, 5, &active, 1_000_000_000).unwrap();
        let holds = event_e_check_blocks(&blocks, None, 5, &active, 0.5, 1_000_000_000).unwrap();
        below += usize::from(rip.delta <= 0.5);
        agree += usize::from(holds == (rip.delta <= 0.5));
        deltas.push(rip.delta);
    }
    deltas.sort_by(f64::total_cmp);
    let el = t0.elapsed();
    let frac = below as f64 / trials as f64;
    outcome(
        frac >= 0.95 && agree == trials as usize && within(el, 180.0),
        format!(
            "delta_5 <= 0.5 in {below}/{trials} ({:.0}%, need 95%), delta range [{:.3}, {:.3}] median {:.3}; \
             event E agrees with delta <= 0.5 in {agree}/{trials}; {:.1} s (limit 180 s)",
            100.0 * frac,
            deltas[0],
            deltas[deltas.len() - 1],
            deltas[deltas.len() / 2],
            el.as_secs_f64()
        ),
    )
}

fn c10_decay() -> Outcome {
    let t0 = Instant::now();
    let grid = [8, 16, 32, 64, 128];
    let mut pass = true;
    let mut parts = Vec::new();
    for alpha in [1.0, 2.0] {
        let rep = approximation_decay_experiment(alpha, 100.0, &grid, 10).unwrap();
        let l2 = rep.l2_slope.unwrap_or(f64::NAN);
        let sup = rep.sup_slope.unwrap_or(f64::NAN);
        let ok = (l2 + 2.0 * alpha).abs() <= 0.3 && (sup + 2.0 * alpha - 1.0).abs() <= 0.3;
        pass &= ok;
        parts.push(format!(
            "alpha={alpha}: L2 slope {l2:.3} (target {:.1}), sup slope {sup:.3} (target {:.1})",
            -2.0 * alpha,
            -(2.0 * alpha - 1.0)
        ));
    }
    let el = t0.elapsed();
    outcome(
        pass && within(el, 30.0),
        format!(
            "{}; {:.2} s (limit 30 s)",
            parts.join("; "),
            el.as_secs_f64()
        ),
    )
}

fn c11_rate() -> Outcome {
    let t0 = Instant::now();
    let cfg = ExperimentConfig {
        q: 4,
        s: 2,
        qstar: 2,
        sigma: 2.0,
        alpha: 2.0,
        kappa1: 1.0,
        m_rule: MRule::Fixed(5),
        seed: 11,
        ..ExperimentConfig::default()
    };
    let grid = [512, 1024, 2048, 4096, 8192];
    let rep = rate_experiment(&cfg, &grid, 20).unwrap();
    let slope = rep.slope.unwrap_or(f64::NAN);
    let el = t0.elapsed();
    outcome(
        (slope + 0.8).abs() <= 0.15 && within(el, 600.0),
        format!(
            "slope {slope:.3} (target -0.8 +/- 0.15), bootstrap band {:?}, mean risk {:?}, {:.1} s (limit 600 s)",
            rep.band.map(|(a, b)| (format!("{a:.3}"), format!("{b:.3}"))),
            rep.mean_risk.iter().map(|r| format!("{r:.2e}")).collect::<Vec<_>>(),
            el.as_secs_f64()
        ),
    )
}

fn run_cli(command: &str, config: &Path, out: &Path) -> Vec<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_addsel"))
        .args([command, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .status()
        .expect("binary runs");
    assert!(status.success(), "{command} exited with {status}");
    std::fs::read(out).unwrap()
}

fn c12_determinism() -> Outcome {
    let dir: PathBuf =
        std::env::temp_dir().join(format!("addsel-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cases = [
        ("geometry", "q = 3\ns = 2\nqstar = 2\ndesign.kind = gaussian-copula\ndesign.r = 0.3\nm_rule = fixed:3\nseed = 4\n"),
        ("simulate", "n = 120\nq = 5\ns = 2\nqstar = 2\ntrials = 12\nm_rule = fixed:4\nseed = 4\n"),
        ("estimate", "n = 100\nq = 3\ns = 2\nqstar = 2\nreps = 10\nn_grid = 64,128,256,512\nm_rule = fixed:4\nseed = 4\n"),
        ("diagnose", "n = 150\nq = 5\ns = 2\nqstar = 2\nm_rule = fixed:4\nmc_trials = 5\ndiagnostics = true\nseed = 4\n"),
    ];
    let mut parts = Vec::new();
    let mut pass = true;
    for (command, text) in cases {
        let config = dir.join(format!("{command}.cfg"));
        std::fs::write(&config, text).unwrap();
        let out = dir.join(format!("{command}.jsonl"));
        let first = run_cli(command, &config, &out);
        let second = run_cli(command, &config, &out);
        let same = first == second && !first.is_empty();
        pass &= same;
        parts.push(format!(
            "{command}: {} bytes, identical {same}",
            first.len()
        ));
    }
    let _ = std::fs::remove_dir_all(&dir);
    outcome(pass, parts.join(", "))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        }
    }
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |id: u32, name: &'static str, o: Outcome| {
        println!(
            "criterion {id} {}: {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((id, name, o));
    };
    report(1, "empirical Pythagoras", guarded(c1_pythagoras));
    report(2, "population projection gap", guarded(c2_projection_gap));
    report(3, "rho/epsilon chain", guarded(c3_ric_chain));
    report(4, "sup-norm ratio", guarded(c4_sup_norm_ratio));
    report(5, "chi-square tails", guarded(c5_chi_square));
    report(6, "noiseless exact recovery", guarded(c6_noiseless));

    let t7 = Instant::now();
    let runs = catch_unwind(|| {
        C7_GRID
            .iter()
            .map(|&n| trial_summary(&c7_config(n)))
            .collect::<Vec<_>>()
    });
    let el7 = t7.elapsed();
    match runs {
        Ok(runs) => {
            report(
                7,
                "consistency trend",
                guarded(|| c7_consistency(&runs, el7)),
            );
            report(8, "bound dominance", guarded(|| c8_bound_dominance(&runs)));
        }
        Err(_) => {
            report(
                7,
                "consistency trend",
                outcome(false, "trial runs panicked"),
            );
            report(8, "bound dominance", outcome(false, "trial runs panicked"));
        }
    }
    report(9, "Gaussian RIP regime", guarded(c9_gaussian_rip));
    report(10, "approximation rates", guarded(c10_decay));
    report(11, "component estimation rate", guarded(c11_rate));
    report(12, "CLI determinism", guarded(c12_determinism));

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed {:?}",
        results.len() - failed.len(),
        failed.len(),
        failed
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
