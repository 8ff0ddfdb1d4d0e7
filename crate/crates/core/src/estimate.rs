//! Split-sample estimation of one component after selection.
//!
//! The first half of the sample selects Ĵ₀; the second half fits ordinary
//! least squares on V_{Ĵ₀ ∪ {target}} and the target block is read off.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::{phi, BasisSpec, Centering, DesignBlocks, TrigSeries};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::law::{DesignLaw, MarginalDensity};
use crate::linalg::PivotedQr;
use crate::rng::{self, derive_seed, label};
use crate::selection::{select_exhaustive, Dataset, SelectionOptions, RANK_TOL};
use crate::simulate::{
    gen_design, gen_model_shaped, gen_response, loglog_slope, resolve_level, AdditiveModel,
    ModelShape,
};
use crate::subsets;

/// Estimated coefficients of f̂ = Σ_k c_k φ_k over the basis of the target
/// space at level `level`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentEstimate {
    pub target: usize,
    pub level: usize,
    /// Basis index of `coefficients[0]`.
    pub first_index: usize,
    pub coefficients: Vec<f64>,
    /// Ĵ₀ from the first half.
    pub selected: Vec<usize>,
    pub n_half: usize,
    pub risk: Option<f64>,
}

impl ComponentEstimate {
    pub fn series(&self) -> TrigSeries {
        let mut c = vec![0.0; self.level];
        for (i, v) in self.coefficients.iter().enumerate() {
            c[self.first_index - 1 + i] = *v;
        }
        TrigSeries::new(c)
    }
}

/// Least squares of y on V_set with empirical centering; returns the target
/// block's coefficients in the φ_k scale.
pub fn fit_component(
    data: &Dataset,
    spec: &BasisSpec,
    set: &[usize],
    target: usize,
) -> Result<Vec<f64>> {
    if !set.contains(&target) {
        return Err(Error::domain("the fitted set must contain the target"));
    }
    let blocks = DesignBlocks::build(data.x(), spec, &Centering::Empirical)?;
    let cols = blocks.columns(set);
    let a = blocks.matrix().select_columns(cols.iter());
    let qr = PivotedQr::new(&a, RANK_TOL);
    if qr.rank() < a.ncols() {
        return Err(Error::RankDeficient {
            message: format!(
                "second-half design has rank {} < {} columns",
                qr.rank(),
                a.ncols()
            ),
            condition: qr.condition_estimate(),
        });
    }
    let b = qr.solve_least_squares(data.y())?;
    let start: usize = set
        .iter()
        .take_while(|&&j| j != target)
        .map(|&j| blocks.block_dim(j))
        .sum();
    let scale = 1.0 / (data.n() as f64).sqrt();
    Ok((0..blocks.block_dim(target))
        .map(|i| b[start + i] * scale)
        .collect())
}

/// Selects on the first half, fits on the second half.
pub fn estimate_component(
    dataset: &Dataset,
    spec: &BasisSpec,
    qstar: usize,
    sigma2: f64,
    target: usize,
    m_target: usize,
) -> Result<ComponentEstimate> {
    let total = dataset.n();
    if !total.is_multiple_of(2) || total < 2 {
        return Err(Error::domain(format!(
            "sample size {total} must be even and positive"
        )));
    }
    if target >= spec.q() {
        return Err(Error::domain(format!("target {target} out of range")));
    }
    let n = total / 2;
    let first = dataset.rows(0, n)?;
    let second = dataset.rows(n, total)?;
    let selected =
        select_exhaustive(&first, spec, qstar, sigma2, &SelectionOptions::default())?.chosen;
    let set = subsets::union(&selected, &[target]);
    let spec2 = spec.with_level(target, m_target)?;
    let coefficients = fit_component(&second, &spec2, &set, target)?;
    Ok(ComponentEstimate {
        target,
        level: m_target,
        first_index: spec2.first_index(target),
        coefficients,
        selected,
        n_half: n,
        risk: None,
    })
}

/// ‖f_t − f̂_t‖² under the marginal of the target covariate. Centered
/// estimates are taken with population-centered basis functions.
pub fn component_risk(model: &AdditiveModel, estimate: &ComponentEstimate, law: &DesignLaw) -> f64 {
    let t = estimate.target;
    let f = &model.components[t];
    let fhat = estimate.series();
    let marginal = law.marginal(t);
    if matches!(marginal, MarginalDensity::Uniform) && model.offsets[t] == 0.0 {
        let len = f.coeffs.len().max(fhat.coeffs.len());
        return (0..len)
            .map(|i| {
                let a = f.coeffs.get(i).copied().unwrap_or(0.0);
                let b = fhat.coeffs.get(i).copied().unwrap_or(0.0);
                (a - b) * (a - b)
            })
            .sum();
    }
    let means = marginal.basis_means(estimate.level);
    let centered = estimate.first_index == 2;
    let (xs, ws) = marginal.nodes();
    xs.iter()
        .zip(&ws)
        .map(|(&x, &w)| {
            let est: f64 = estimate
                .coefficients
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let k = estimate.first_index + i;
                    c * (phi(k, x) - if centered { means[k - 1] } else { 0.0 })
                })
                .sum();
            let d = f.eval(x) - model.offsets[t] - est;
            w * d * d
        })
        .sum()
}

/// Mean risks over a sample-size grid with a fitted log-log slope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    /// Per-half sample sizes.
    pub n_grid: Vec<usize>,
    pub m_target: Vec<usize>,
    pub mean_risk: Vec<f64>,
    pub risk_stderr: Vec<f64>,
    pub slope: Option<f64>,
    /// 95% percentile bootstrap band for the slope.
    pub band: Option<(f64, f64)>,
    pub target_slope: f64,
    /// Every risk is numerically zero.
    pub degenerate: bool,
    pub reps: usize,
    pub failures: usize,
}

const BOOTSTRAP_RESAMPLES: usize = 400;

/// Shape used by the rate experiment: a long decaying head so that the
/// truncation bias keeps shrinking as m grows.
pub const RATE_SHAPE: ModelShape = ModelShape {
    head_last: 41,
    tail_first: 81,
    tail_last: 120,
};

/// ceil(n^{1/(2α+1)}), guarded against rounding at exact powers.
pub fn default_m_target(n: usize, alpha: f64) -> usize {
    ((n as f64).powf(1.0 / (2.0 * alpha + 1.0)) - 1e-9)
        .ceil()
        .max(2.0) as usize
}

/// Risk of the split-sample estimator over `n_grid` (per-half sizes),
/// `reps` replications each.
pub fn rate_experiment(
    cfg: &ExperimentConfig,
    n_grid: &[usize],
    reps: usize,
) -> Result<RateReport> {
    rate_experiment_with(cfg, n_grid, reps, None)
}

/// As [`rate_experiment`], optionally with a fixed model.
pub fn rate_experiment_with(
    cfg: &ExperimentConfig,
    n_grid: &[usize],
    reps: usize,
    model: Option<AdditiveModel>,
) -> Result<RateReport> {
    if n_grid.len() < 4 {
        return Err(Error::domain(format!(
            "insufficient grid: {} points, need at least 4",
            n_grid.len()
        )));
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] == 0 {
        return Err(Error::domain("n grid must be increasing and positive"));
    }
    if reps < 10 {
        return Err(Error::domain(format!(
            "{reps} replications; need at least 10"
        )));
    }
    cfg.validate()?;
    let level = resolve_level(cfg)?;
    let spec = BasisSpec::uniform(cfg.q, level, true)?;
    let model = match model {
        Some(m) => m,
        None => gen_model_shaped(
            cfg.q,
            cfg.s,
            cfg.alpha,
            cfg.k_bound,
            cfg.kappa1,
            cfg.tail_fraction,
            derive_seed(cfg.seed, &[label::MODEL]),
            RATE_SHAPE,
        )?
        .with_sigma(cfg.sigma)
        .with_law(&cfg.design),
    };
    let target = match cfg.target {
        Some(t) => t,
        None => *model
            .active
            .first()
            .ok_or_else(|| Error::domain("no active component to estimate; set `target`"))?,
    };
    let m_target: Vec<usize> = n_grid
        .iter()
        .map(|&n| {
            cfg.m_target
                .unwrap_or_else(|| default_m_target(n, cfg.alpha))
        })
        .collect();
    let sigma2 = cfg.sigma * cfg.sigma;
    let jobs: Vec<(usize, usize)> = (0..n_grid.len())
        .flat_map(|i| (0..reps).map(move |r| (i, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::domain(format!("thread pool: {e}")))?;
    let risks: Vec<Option<f64>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, r)| {
                let seed = derive_seed(cfg.seed, &[i as u64, r as u64]);
                let run = || -> Result<f64> {
                    let x = gen_design(&cfg.design, 2 * n_grid[i], cfg.q, seed)?;
                    let y = gen_response(&model, &x, seed)?;
                    let est = estimate_component(
                        &Dataset::new(x, y)?,
                        &spec,
                        cfg.qstar,
                        sigma2,
                        target,
                        m_target[i],
                    )?;
                    Ok(component_risk(&model, &est, &cfg.design))
                };
                run()
                    .map_err(|e| log::warn!("rate replication ({i}, {r}) failed: {e}"))
                    .ok()
            })
            .collect()
    });
    let failures = risks.iter().filter(|r| r.is_none()).count();
    let per_n: Vec<Vec<f64>> = (0..n_grid.len())
        .map(|i| {
            risks[i * reps..(i + 1) * reps]
                .iter()
                .flatten()
                .copied()
                .collect()
        })
        .collect();
    if per_n.iter().any(Vec::is_empty) {
        return Err(Error::domain("every replication failed at some grid point"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mean_risk: Vec<f64> = per_n.iter().map(|v| mean(v)).collect();
    let risk_stderr: Vec<f64> = per_n
        .iter()
        .zip(&mean_risk)
        .map(|(v, m)| {
            if v.len() < 2 {
                return 0.0;
            }
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            (var / v.len() as f64).sqrt()
        })
        .collect();
    let xs: Vec<f64> = n_grid.iter().map(|&n| n as f64).collect();
    let degenerate = mean_risk.iter().all(|&r| r <= 1e-20);
    let (slope, band) = if degenerate {
        (None, None)
    } else {
        let slope = loglog_slope(&xs, &mean_risk);
        let mut boot = rng::stream(cfg.seed, &[label::BOOTSTRAP]);
        let mut slopes: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
            .filter_map(|_| {
                let means: Vec<f64> = per_n
                    .iter()
                    .map(|v| {
                        (0..v.len())
                            .map(|_| v[boot.random_range(0..v.len())])
                            .sum::<f64>()
                            / v.len() as f64
                    })
                    .collect();
                loglog_slope(&xs, &means)
            })
            .collect();
        slopes.sort_by(f64::total_cmp);
        let band = (!slopes.is_empty()).then(|| {
            let at = |p: f64| slopes[((p * (slopes.len() - 1) as f64).round()) as usize];
            (at(0.025), at(0.975))
        });
        (slope, band)
    };
    Ok(RateReport {
        n_grid: n_grid.to_vec(),
        m_target,
        mean_risk,
        risk_stderr,
        slope,
        band,
        target_slope: -2.0 * cfg.alpha / (2.0 * cfg.alpha + 1.0),
        degenerate,
        reps,
        failures,
    })
}

/// Convenience: fits every covariate at the selection levels (no selection).
pub fn full_model_estimate(
    data: &Dataset,
    spec: &BasisSpec,
    target: usize,
) -> Result<ComponentEstimate> {
    let all: Vec<usize> = (0..spec.q()).collect();
    Ok(ComponentEstimate {
        target,
        level: spec.level(target),
        first_index: spec.first_index(target),
        coefficients: fit_component(data, spec, &all, target)?,
        selected: all,
        n_half: data.n(),
        risk: None,
    })
}
