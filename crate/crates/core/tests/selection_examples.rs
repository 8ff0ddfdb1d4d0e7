mod common;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use addsel::basis::{BasisSpec, Centering, DesignBlocks};
use addsel::config::{ExperimentConfig, MRule};
use addsel::diagnostics::event_e_check_blocks;
use addsel::law::DesignLaw;
use addsel::selection::{
    compare_searches, empirical_norm_sq, project_norm_sq, projection_gap_blocks, residual_norm_sq,
    select_exhaustive, select_exhaustive_blocks, select_greedy, Dataset, SelectionOptions,
};
use addsel::simulate::{gen_design, gen_model, gen_response, run_trials};
use addsel::subsets;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn projection_norm_matches_normal_equations() {
    let mut g = rng(213);
    for _ in 0..20 {
        let a = common::gaussian_matrix(&mut g, 20, 5);
        let y = DVector::from_fn(20, |_, _| g.sample::<f64, _>(StandardNormal));
        let ata = a.transpose() * &a;
        let aty = a.transpose() * &y;
        let oracle = aty.dot(&ata.lu().solve(&aty).unwrap()) / 20.0;
        let got = project_norm_sq(&a, &y).unwrap();
        assert!((got - oracle).abs() <= 1e-8 * oracle);
    }
}

#[test]
fn linear_signal_on_first_covariate_is_selected() {
    let mut g = rng(221);
    let n = 100;
    let x = DMatrix::from_fn(n, 3, |_, _| g.random::<f64>() - 0.5);
    let y = x.column(0) * 1.7;
    let blocks = DesignBlocks::from_columns(&x / (n as f64).sqrt());
    let sigma2 = 1e-4;
    let res =
        select_exhaustive_blocks(&blocks, &y, 1, sigma2, &SelectionOptions::default()).unwrap();
    let brute = subsets::up_to(3, 1)
        .map(|s| {
            let v = project_norm_sq(&blocks.select(&s), &y).unwrap()
                - sigma2 * s.len() as f64 / n as f64;
            (s, v)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    assert_eq!(res.chosen, vec![0]);
    assert_eq!(brute.0, vec![0]);
}

#[test]
fn strong_signal_is_recovered() {
    let cfg = ExperimentConfig {
        n: 300,
        q: 6,
        s: 2,
        qstar: 2,
        sigma: 0.5,
        kappa1: 1.0,
        m_rule: MRule::Fixed(5),
        trials: 100,
        seed: 222,
        ..ExperimentConfig::default()
    };
    let sum = run_trials(&cfg, &mut |_| Ok(())).unwrap();
    assert!(sum.exact_freq.unwrap() >= 0.95, "{:?}", sum.exact_freq);
}

#[test]
fn greedy_is_exact_under_orthogonality() {
    let n = 64;
    for q in 3..=8 {
        // distinct frequencies of one covariate on an equispaced grid are exactly orthogonal
        let cols = DMatrix::from_fn(n, q, |i, j| {
            (2.0 * std::f64::consts::PI * (j + 1) as f64 * i as f64 / n as f64).cos()
                * (2.0 / n as f64).sqrt()
        });
        let blocks = DesignBlocks::from_columns(cols);
        let y = blocks.matrix().column(1) * 3.0 + blocks.matrix().column(q - 1) * 2.0;
        for qstar in 2..=q.min(4) {
            let opts = SelectionOptions::default();
            let ex = select_exhaustive_blocks(&blocks, &y, qstar, 0.0, &opts).unwrap();
            let gr =
                addsel::selection::select_greedy_blocks(&blocks, &y, qstar, 0.0, &opts).unwrap();
            assert_eq!(ex.chosen, vec![1, q - 1]);
            assert_eq!(gr.chosen, ex.chosen);
        }
    }
}

#[test]
fn greedy_discrepancy_is_flagged() {
    let mut g = rng(231);
    let n = 200;
    let x1 = DVector::from_fn(n, |_, _| g.random::<f64>());
    let x2 = DVector::from_fn(n, |_, _| g.random::<f64>());
    let x3 = DVector::from_fn(n, |i, _| (x1[i] + x2[i]) / 2.0);
    let x = DMatrix::from_columns(&[x1.clone(), x2.clone(), x3]);
    let y = DVector::from_fn(n, |i, _| x1[i] - x2[i] + 0.9 * (x1[i] + x2[i]));
    let data = Dataset::new(x, y).unwrap();
    // a single linear-ish basis function per covariate: cos(2πx) is monotone on [0, 1/2]
    let spec = BasisSpec::uniform(3, 2, true).unwrap();
    let cmp = compare_searches(&data, &spec, 2, 0.0, &SelectionOptions::default()).unwrap();
    let ex = select_exhaustive(&data, &spec, 2, 0.0, &SelectionOptions::default()).unwrap();
    let gr = select_greedy(&data, &spec, 2, 0.0, &SelectionOptions::default()).unwrap();
    assert_eq!(cmp.exhaustive, ex.chosen);
    assert_eq!(cmp.greedy, gr.chosen);
    assert_eq!(cmp.discrepancy, ex.chosen != gr.chosen);
    assert!(cmp.criterion_gap >= 0.0);
}

#[test]
fn constructed_greedy_counterexample() {
    // y = a1 + a2 with a3 = (a1 + a2)/√2 + small orthogonal part: greedy takes a3 first
    let n = 3;
    let e = DMatrix::<f64>::identity(n, n);
    let a1 = e.column(0).into_owned();
    let a2 = e.column(1).into_owned();
    let a3 = ((&a1 + &a2) / 2f64.sqrt()) * 0.99 + e.column(2) * (1.0 - 0.99f64 * 0.99).sqrt();
    let blocks = DesignBlocks::from_columns(DMatrix::from_columns(&[a1.clone(), a2.clone(), a3]));
    let y = &a1 + &a2;
    let opts = SelectionOptions::default();
    let ex = select_exhaustive_blocks(&blocks, &y, 2, 0.0, &opts).unwrap();
    let gr = addsel::selection::select_greedy_blocks(&blocks, &y, 2, 0.0, &opts).unwrap();
    assert_eq!(ex.chosen, vec![0, 1]);
    assert_ne!(gr.chosen, ex.chosen);
    assert!(gr.chosen.contains(&2));
}

#[test]
fn gap_equals_residual_for_f_in_active_span() {
    let mut g = rng(239);
    let spec = BasisSpec::uniform(4, 4, true).unwrap();
    let x = gen_design(&DesignLaw::IndependentUniform, 120, 4, 239).unwrap();
    let blocks = DesignBlocks::build(&x, &spec, &Centering::Empirical).unwrap();
    let active = [1, 3];
    let a0 = blocks.select(&active);
    let f = &a0 * DVector::from_fn(a0.ncols(), |_, _| g.sample::<f64, _>(StandardNormal));
    for set in subsets::up_to(4, 3) {
        let gap = projection_gap_blocks(&blocks, &set, &active, &f).unwrap();
        let resid = residual_norm_sq(&blocks.select(&set), &f).unwrap();
        assert!((gap - resid).abs() <= 1e-8 * empirical_norm_sq(&f));
    }
}

#[test]
fn gap_lower_bound_under_event_e() {
    let law = DesignLaw::IndependentUniform;
    let spec = BasisSpec::uniform(4, 3, true).unwrap();
    let centering = Centering::population(&spec, &law).unwrap();
    let population = law.block_gram(&spec).unwrap();
    let active = vec![0, 2];
    let qstar = 2;
    let delta = 0.5;
    let rho = 0.0;
    let mut checked = 0;
    for seed in 0..20 {
        let x = gen_design(&law, 2000, 4, 240 + seed).unwrap();
        let blocks = DesignBlocks::build(&x, &spec, &centering).unwrap();
        if !event_e_check_blocks(&blocks, Some(&population), qstar, &active, delta, u128::MAX)
            .unwrap()
        {
            continue;
        }
        let mut g = rng(seed);
        let dims: Vec<usize> = active.iter().map(|&j| blocks.block_dim(j)).collect();
        let coeffs: Vec<DVector<f64>> = dims
            .iter()
            .map(|&d| DVector::from_fn(d, |_, _| g.sample::<f64, _>(StandardNormal)))
            .collect();
        let part = |j: usize| -> DVector<f64> {
            let k = active.iter().position(|&a| a == j).unwrap();
            blocks.select(&[j]) * &coeffs[k]
        };
        let f: DVector<f64> = active
            .iter()
            .map(|&j| part(j))
            .fold(DVector::zeros(2000), |acc, v| acc + v);
        for set in subsets::up_to(4, qstar) {
            let missing: Vec<usize> = active
                .iter()
                .copied()
                .filter(|j| !set.contains(j))
                .collect();
            if missing.is_empty() {
                continue;
            }
            let v_missing = missing
                .iter()
                .map(|&j| part(j))
                .fold(DVector::zeros(2000), |acc, v| acc + v);
            let gap = projection_gap_blocks(&blocks, &set, &active, &f).unwrap();
            let lower =
                (1.0 - delta) / (1.0 + delta) * (1.0 - rho * rho) * empirical_norm_sq(&v_missing);
            assert!(
                gap >= lower - 1e-12,
                "seed {seed}, set {set:?}: {gap} < {lower}"
            );
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn selection_on_generated_data_is_reproducible() {
    let law = DesignLaw::IndependentUniform;
    let model = gen_model(5, 2, 2.0, 100.0, 1.0, 0.0, 1)
        .unwrap()
        .with_sigma(0.3);
    let x = gen_design(&law, 200, 5, 2).unwrap();
    let y = gen_response(&model, &x, 2).unwrap();
    let spec = BasisSpec::uniform(5, 5, true).unwrap();
    let data = Dataset::new(x, y).unwrap();
    let a = select_exhaustive(&data, &spec, 2, 0.09, &SelectionOptions::default()).unwrap();
    let b = select_exhaustive(&data, &spec, 2, 0.09, &SelectionOptions::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.chosen, model.active);
}
