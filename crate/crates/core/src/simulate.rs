//! Synthetic additive models, seeded selection trials and the truncation
//! decay experiment.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::{BasisSpec, Centering, DesignBlocks, TrigSeries};
use crate::config::{ExperimentConfig, MRule};
use crate::diagnostics::{event_a_check, event_e_check_blocks, rip_constant};
use crate::error::{Error, Result};
use crate::geometry::{
    epsilon_constants, geometry_report, kappa_values, rho_qstar, GeometryOptions, GeometryReport,
};
use crate::law::DesignLaw;
use crate::rng::{self, derive_seed, label};
use crate::selection::{select_exhaustive, select_greedy, Dataset, SearchMode, SelectionOptions};

/// Ground truth f = Σ_j f_j with f_j = `components[j]` minus `offsets[j]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdditiveModel {
    pub q: usize,
    /// J₀, sorted.
    pub active: Vec<usize>,
    pub components: Vec<TrigSeries>,
    pub sigma: f64,
    pub alpha: Vec<f64>,
    pub k_bound: Vec<f64>,
    /// Population means of the components (zero under uniform marginals).
    pub offsets: Vec<f64>,
}

impl AdditiveModel {
    /// Validates and wraps one series per covariate.
    pub fn from_components(
        q: usize,
        components: Vec<TrigSeries>,
        sigma: f64,
        alpha: f64,
        k_bound: f64,
    ) -> Result<Self> {
        if components.len() != q {
            return Err(Error::Dimension {
                expected: q,
                got: components.len(),
            });
        }
        let model = AdditiveModel {
            q,
            active: (0..q)
                .filter(|&j| components[j].norm_sq_uniform() > 0.0)
                .collect(),
            components,
            sigma,
            alpha: vec![alpha; q],
            k_bound: vec![k_bound; q],
            offsets: vec![0.0; q],
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::validation(format!(
                "σ = {} must be finite and nonnegative",
                self.sigma
            )));
        }
        for (j, f) in self.components.iter().enumerate() {
            if f.coeffs.first().is_some_and(|&c| c != 0.0) {
                return Err(Error::validation(format!(
                    "component {j} has a constant term"
                )));
            }
            if !(self.alpha[j] > 0.5) || !(self.k_bound[j] > 0.0) {
                return Err(Error::validation(format!(
                    "component {j}: need α > 1/2 and K > 0"
                )));
            }
            let energy = f.sobolev_energy(self.alpha[j]);
            if energy > self.k_bound[j].powi(2) {
                return Err(Error::validation(format!(
                    "component {j} leaves the Sobolev ball: energy {energy:.6e} > K² = {:.6e}",
                    self.k_bound[j].powi(2)
                )));
            }
        }
        Ok(())
    }

    pub fn s(&self) -> usize {
        self.active.len()
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    /// Recenters the components at their population means under `law`.
    pub fn with_law(mut self, law: &DesignLaw) -> Self {
        self.offsets = (0..self.q)
            .map(|j| law.component_mean(j, &self.components[j]))
            .collect();
        self
    }

    pub fn active_components(&self) -> Vec<(usize, &TrigSeries)> {
        self.active
            .iter()
            .map(|&j| (j, &self.components[j]))
            .collect()
    }

    /// f_j(x).
    pub fn component(&self, j: usize, x: f64) -> f64 {
        self.components[j].eval(x) - self.offsets[j]
    }

    /// f(xⁱ) for every row.
    pub fn noiseless(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() != self.q {
            return Err(Error::Dimension {
                expected: self.q,
                got: x.ncols(),
            });
        }
        Ok(DVector::from_fn(x.nrows(), |i, _| {
            self.active
                .iter()
                .map(|&j| self.component(j, x[(i, j)]))
                .sum()
        }))
    }
}

/// n i.i.d. rows from `law`.
pub fn gen_design(law: &DesignLaw, n: usize, q: usize, seed: u64) -> Result<DMatrix<f64>> {
    law.sample(n, q, &mut rng::stream(seed, &[label::DESIGN]))
}

/// Y = f(X) + σ z with standard normal z.
pub fn gen_response(model: &AdditiveModel, x: &DMatrix<f64>, seed: u64) -> Result<DVector<f64>> {
    let mut y = model.noiseless(x)?;
    if model.sigma > 0.0 {
        let mut r = rng::stream(seed, &[label::RESPONSE]);
        for v in y.iter_mut() {
            let z: f64 = r.sample(StandardNormal);
            *v += model.sigma * z;
        }
    }
    Ok(y)
}

/// Shape of generated components: signal on basis indices 2..=`head_last`,
/// tail energy on `tail_first..=tail_last`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelShape {
    pub head_last: usize,
    pub tail_first: usize,
    pub tail_last: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape {
            head_last: 5,
            tail_first: 41,
            tail_last: 80,
        }
    }
}

fn weighted_energy(v: &[(usize, f64)], alpha: f64) -> f64 {
    v.iter()
        .map(|&(k, c)| (2.0 * PI * crate::basis::frequency(k) as f64).powf(2.0 * alpha) * c * c)
        .sum()
}

fn unit(v: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    let n = v.iter().map(|(_, c)| c * c).sum::<f64>().sqrt();
    v.into_iter().map(|(k, c)| (k, c / n)).collect()
}

fn decaying_direction<R: Rng>(
    first: usize,
    last: usize,
    alpha: f64,
    rng: &mut R,
) -> Vec<(usize, f64)> {
    unit(
        (first..=last)
            .map(|k| {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                (
                    k,
                    sign * (crate::basis::frequency(k) as f64).powf(-(alpha + 1.0)),
                )
            })
            .collect(),
    )
}

/// Random s-sparse model with ‖f_j‖² = `kappa1_target` (uniform norm) for
/// every active j, inside the Sobolev ball of radius K.
pub fn gen_model(
    q: usize,
    s: usize,
    alpha: f64,
    k_bound: f64,
    kappa1_target: f64,
    tail_fraction: f64,
    seed: u64,
) -> Result<AdditiveModel> {
    gen_model_shaped(
        q,
        s,
        alpha,
        k_bound,
        kappa1_target,
        tail_fraction,
        seed,
        ModelShape::default(),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn gen_model_shaped(
    q: usize,
    s: usize,
    alpha: f64,
    k_bound: f64,
    kappa1_target: f64,
    tail_fraction: f64,
    seed: u64,
    shape: ModelShape,
) -> Result<AdditiveModel> {
    if s > q || q == 0 {
        return Err(Error::domain(format!(
            "need s ≤ q and q ≥ 1, got s = {s}, q = {q}"
        )));
    }
    if !(kappa1_target > 0.0) || !(0.0..1.0).contains(&tail_fraction) {
        return Err(Error::domain("need κ₁ > 0 and tail fraction in [0, 1)"));
    }
    if !(alpha > 0.5) || !(k_bound > 0.0) {
        return Err(Error::domain("need α > 1/2 and K > 0"));
    }
    if shape.head_last < 3 || (tail_fraction > 0.0 && shape.tail_first <= shape.head_last) {
        return Err(Error::domain(
            "model shape must have a head of frequency one and a disjoint tail",
        ));
    }
    let mut r = rng::stream(seed, &[label::MODEL]);
    let mut active: Vec<usize> = index::sample(&mut r, q, s).into_vec();
    active.sort_unstable();
    // slight overshoot so that rounding cannot leave ‖f_j‖² below the target
    let kappa = kappa1_target * (1.0 + 1e-12);
    let cap = k_bound * k_bound * (1.0 - 1e-10);
    let tau = tail_fraction;
    let low = (2.0 * PI).powf(2.0 * alpha);
    let mut components = vec![TrigSeries::zero(); q];
    for &j in &active {
        let head = decaying_direction(2, shape.head_last, alpha, &mut r);
        let theta: f64 = r.random::<f64>() * 2.0 * PI;
        let tail = if tau > 0.0 {
            decaying_direction(shape.tail_first, shape.tail_last, alpha, &mut r)
        } else {
            Vec::new()
        };
        let e_tail = weighted_energy(&tail, alpha);
        let mix = |lambda: f64| -> Vec<(usize, f64)> {
            unit(
                head.iter()
                    .map(|&(k, c)| {
                        let base = match k {
                            2 => theta.cos(),
                            3 => theta.sin(),
                            _ => 0.0,
                        };
                        (k, (1.0 - lambda) * c + lambda * base)
                    })
                    .collect(),
            )
        };
        let total =
            |h: &[(usize, f64)]| kappa * ((1.0 - tau) * weighted_energy(h, alpha) + tau * e_tail);
        let feasible_max = k_bound * k_bound / ((1.0 - tau) * low + tau * e_tail);
        if total(&mix(1.0)) > cap {
            return Err(Error::Infeasible {
                message: format!("κ₁ = {kappa1_target} does not fit in the Sobolev ball"),
                feasible_max,
            });
        }
        let dir = if total(&mix(0.0)) <= cap {
            mix(0.0)
        } else {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if total(&mix(mid)) <= cap {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            mix(hi)
        };
        let len = if tau > 0.0 {
            shape.tail_last
        } else {
            shape.head_last
        };
        let mut coeffs = vec![0.0; len];
        let hs = ((1.0 - tau) * kappa).sqrt();
        for (k, c) in dir {
            coeffs[k - 1] = hs * c;
        }
        let ts = (tau * kappa).sqrt();
        for (k, c) in tail {
            coeffs[k - 1] = ts * c;
        }
        components[j] = TrigSeries::new(coeffs);
    }
    AdditiveModel::from_components(q, components, 0.0, alpha, k_bound)
}

/// Smallest integer m with m ≥ (C K² q*(1+ε') / (c'(1−ρ²)κ))^{1/(2α)}.
#[allow(clippy::too_many_arguments)]
pub fn m_lower_bound(
    cj: f64,
    kj: f64,
    qstar: usize,
    eps_prime: f64,
    cprime: f64,
    rho: f64,
    kappa: f64,
    alpha: f64,
) -> Result<usize> {
    if !(rho < 1.0) {
        return Err(Error::assumption(format!("ρ = {rho} must be below 1")));
    }
    if !(cj > 0.0
        && kj > 0.0
        && qstar > 0
        && eps_prime >= 0.0
        && cprime > 0.0
        && rho >= 0.0
        && kappa > 0.0
        && alpha > 0.0)
    {
        return Err(Error::domain("truncation-level inputs must be positive"));
    }
    let v = (cj * kj * kj * qstar as f64 * (1.0 + eps_prime)
        / (cprime * (1.0 - rho * rho) * kappa))
        .powf(1.0 / (2.0 * alpha));
    // an exact integer must not be bumped by rounding noise
    Ok((v * (1.0 - 1e-12)).ceil().max(1.0) as usize)
}

/// C_j = π^{-2α}/c: the Sobolev tail beyond basis index m is at most
/// K²(πm)^{-2α} under the uniform density, inflated by 1/c otherwise.
pub fn default_cj(alpha: f64, c: f64) -> f64 {
    PI.powf(-2.0 * alpha) / c
}

/// Smallest C with err(m) ≤ C K² m^{-2α} on the observed (m, err) pairs.
pub fn calibrate_cj(observed: &[(usize, f64)], k_bound: f64, alpha: f64) -> f64 {
    observed
        .iter()
        .map(|&(m, e)| e * (m as f64).powf(2.0 * alpha) / (k_bound * k_bound))
        .fold(0.0, f64::max)
}

/// Truncation level used by an experiment.
pub fn resolve_level(cfg: &ExperimentConfig) -> Result<usize> {
    match cfg.m_rule {
        MRule::Fixed(m) => Ok(m),
        MRule::SampleSize => {
            let law = &cfg.design;
            let c = law.density_bound(cfg.q);
            let cj = cfg.cj.unwrap_or_else(|| default_cj(cfg.alpha, c));
            let (rho, eps_prime, kappa) = if law.is_independent() {
                (0.0, 0.0, c * cfg.kappa1)
            } else {
                let spec = BasisSpec::uniform(cfg.q, cfg.m_geom, true)?;
                let rho = rho_qstar(&spec, law, cfg.qstar, cfg.budget)?;
                let (eps, eps_prime) = epsilon_constants(&spec, law, cfg.qstar, cfg.budget)?;
                (rho, eps_prime, (1.0 - eps).max(0.0) * cfg.kappa1)
            };
            Ok(m_lower_bound(
                cj,
                cfg.k_bound,
                cfg.qstar,
                eps_prime,
                cfg.cprime,
                rho,
                kappa,
                cfg.alpha,
            )?
            .max(2))
        }
    }
}

/// One selection trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub active: Vec<usize>,
    pub selected: Vec<usize>,
    pub success: bool,
    pub exact: bool,
    pub criterion_selected: Option<f64>,
    pub criterion_true: Option<f64>,
    pub delta_qstar: Option<f64>,
    pub event_e: Option<bool>,
    pub event_a: Option<bool>,
    pub error: Option<String>,
}

/// Aggregate over a batch; frequencies are over completed trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub record: &'static str,
    pub trials: usize,
    pub completed: usize,
    pub errors: usize,
    pub level: usize,
    pub successes: usize,
    pub success_freq: Option<f64>,
    pub success_stderr: Option<f64>,
    pub exact: usize,
    pub exact_freq: Option<f64>,
    pub exact_stderr: Option<f64>,
    pub event_e_failures: Option<usize>,
}

fn freq(k: usize, n: usize) -> (Option<f64>, Option<f64>) {
    if n == 0 {
        return (None, None);
    }
    let p = k as f64 / n as f64;
    (Some(p), Some((p * (1.0 - p) / n as f64).sqrt()))
}

struct TrialContext<'a> {
    cfg: &'a ExperimentConfig,
    spec: BasisSpec,
    population: Option<crate::basis::BlockGram>,
    centering: Option<Centering>,
    geometry: Option<GeometryReport>,
}

impl TrialContext<'_> {
    fn run(&self, t: usize) -> TrialRecord {
        let seed = derive_seed(self.cfg.seed, &[t as u64]);
        let mut rec = TrialRecord {
            trial: t,
            seed,
            active: Vec::new(),
            selected: Vec::new(),
            success: false,
            exact: false,
            criterion_selected: None,
            criterion_true: None,
            delta_qstar: None,
            event_e: None,
            event_a: None,
            error: None,
        };
        if let Err(e) = self.fill(&mut rec) {
            rec.error = Some(e.to_string());
            rec.success = false;
            rec.exact = false;
        }
        rec
    }

    fn fill(&self, rec: &mut TrialRecord) -> Result<()> {
        let cfg = self.cfg;
        let law = &cfg.design;
        let model = gen_model(
            cfg.q,
            cfg.s,
            cfg.alpha,
            cfg.k_bound,
            cfg.kappa1,
            cfg.tail_fraction,
            rec.seed,
        )?
        .with_sigma(cfg.sigma)
        .with_law(law);
        rec.active = model.active.clone();
        let x = gen_design(law, cfg.n, cfg.q, rec.seed)?;
        let y = gen_response(&model, &x, rec.seed)?;
        let data = Dataset::new(x, y)?;
        let opts = SelectionOptions {
            budget: cfg.budget,
            ..SelectionOptions::default()
        };
        let sigma2 = cfg.sigma * cfg.sigma;
        let sel = match cfg.search {
            SearchMode::Exhaustive => {
                select_exhaustive(&data, &self.spec, cfg.qstar, sigma2, &opts)?
            }
            SearchMode::Greedy => select_greedy(&data, &self.spec, cfg.qstar, sigma2, &opts)?,
        };
        rec.success = model.active.iter().all(|j| sel.chosen.contains(j));
        rec.exact = sel.chosen == model.active;
        rec.criterion_selected = sel.value_of(&sel.chosen);
        rec.criterion_true = sel.value_of(&model.active);
        rec.selected = sel.chosen;
        if let (Some(pop), Some(centering)) = (&self.population, &self.centering) {
            let blocks = DesignBlocks::build(data.x(), &self.spec, centering)?;
            rec.delta_qstar = Some(rip_constant(&blocks, cfg.qstar, &model.active, cfg.budget)?);
            rec.event_e = Some(event_e_check_blocks(
                &blocks,
                Some(pop),
                cfg.qstar,
                &model.active,
                cfg.delta,
                cfg.budget,
            )?);
            if let Some(geo) = &self.geometry {
                if !model.active.is_empty() {
                    let (kappa, kappa_l) = kappa_values(&model, law)?;
                    let geo = GeometryReport {
                        kappa: Some(kappa),
                        kappa_l,
                        ..geo.clone()
                    };
                    rec.event_a = Some(
                        event_a_check(&data, &model, &self.spec, law, &geo, cfg.cprime)?.holds,
                    );
                }
            }
        }
        Ok(())
    }
}

/// Runs `cfg.trials` seeded trials, passing each record to `sink` in trial
/// order. Per-trial failures are recorded and the batch continues.
pub fn run_trials(
    cfg: &ExperimentConfig,
    sink: &mut dyn FnMut(&TrialRecord) -> Result<()>,
) -> Result<Summary> {
    cfg.validate()?;
    let level = resolve_level(cfg)?;
    let spec = BasisSpec::uniform(cfg.q, level, true)?;
    let (population, centering, geometry) = if cfg.diagnostics {
        let geo = geometry_report(
            &spec,
            &cfg.design,
            None,
            cfg.qstar,
            &GeometryOptions {
                budget: cfg.budget,
                grid_size: None,
            },
        )?;
        (
            Some(cfg.design.block_gram(&spec)?),
            Some(Centering::population(&spec, &cfg.design)?),
            Some(geo),
        )
    } else {
        (None, None, None)
    };
    let ctx = TrialContext {
        cfg,
        spec,
        population,
        centering,
        geometry,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::domain(format!("thread pool: {e}")))?;
    let chunk = 4 * pool.current_num_threads().max(1);
    let mut summary = Summary {
        record: "summary",
        trials: cfg.trials,
        completed: 0,
        errors: 0,
        level,
        successes: 0,
        success_freq: None,
        success_stderr: None,
        exact: 0,
        exact_freq: None,
        exact_stderr: None,
        event_e_failures: cfg.diagnostics.then_some(0),
    };
    let mut start = 0;
    while start < cfg.trials {
        let end = (start + chunk).min(cfg.trials);
        let records: Vec<TrialRecord> =
            pool.install(|| (start..end).into_par_iter().map(|t| ctx.run(t)).collect());
        for rec in &records {
            if rec.error.is_some() {
                summary.errors += 1;
                log::warn!(
                    "trial {} failed: {}",
                    rec.trial,
                    rec.error.as_deref().unwrap_or("")
                );
            } else {
                summary.completed += 1;
                summary.successes += usize::from(rec.success);
                summary.exact += usize::from(rec.exact);
                if let (Some(f), Some(false)) = (summary.event_e_failures.as_mut(), rec.event_e) {
                    *f += 1;
                }
            }
            sink(rec)?;
        }
        start = end;
    }
    (summary.success_freq, summary.success_stderr) = freq(summary.successes, summary.completed);
    (summary.exact_freq, summary.exact_stderr) = freq(summary.exact, summary.completed);
    Ok(summary)
}

/// Least-squares slope of ln y on ln x; `None` if any y is not positive or
/// fewer than two points remain.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 || y.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Truncation errors of a Sobolev function and their log-log slopes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub m_grid: Vec<usize>,
    /// ‖h − Π_{V(m)} h‖².
    pub l2_errors: Vec<f64>,
    /// (√2 Σ_{k>m} |θ_k|)², the squared sup-norm of the worst-phase tail.
    pub sup_errors: Vec<f64>,
    pub l2_slope: Option<f64>,
    pub sup_slope: Option<f64>,
    /// Every error is zero: h is represented exactly on the whole grid.
    pub exact: bool,
}

/// Decay of the truncation error for h with θ_{2k}, θ_{2k+1} ∝ k^{-(α+0.55)}
/// scaled into the Sobolev ball of radius K.
pub fn approximation_decay_experiment(
    alpha: f64,
    k_bound: f64,
    m_grid: &[usize],
    seed: u64,
) -> Result<DecayReport> {
    approximation_decay_with_support(alpha, k_bound, m_grid, seed, None)
}

/// As [`approximation_decay_experiment`], optionally truncating h to basis
/// indices ≤ `support`.
pub fn approximation_decay_with_support(
    alpha: f64,
    k_bound: f64,
    m_grid: &[usize],
    seed: u64,
    support: Option<usize>,
) -> Result<DecayReport> {
    if m_grid.len() < 4 || m_grid.windows(2).any(|w| w[0] >= w[1]) || m_grid[0] == 0 {
        return Err(Error::domain(
            "m grid must be increasing with at least four positive points",
        ));
    }
    if !(alpha > 0.5) || !(k_bound > 0.0) {
        return Err(Error::domain("need α > 1/2 and K > 0"));
    }
    let m_max = *m_grid.last().unwrap();
    let len = support.unwrap_or(2000 * m_max + 1).max(1);
    let mut r = rng::stream(seed, &[label::MODEL]);
    let mut coeffs = vec![0.0; len];
    for (i, c) in coeffs.iter_mut().enumerate().skip(1) {
        let k = crate::basis::frequency(i + 1) as f64;
        let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
        *c = sign * k.powf(-(alpha + 0.55));
    }
    let mut h = TrigSeries::new(coeffs);
    let energy = h.sobolev_energy(alpha);
    if energy > 0.0 {
        let scale = 0.99 * k_bound / energy.sqrt();
        h.coeffs.iter_mut().for_each(|c| *c *= scale);
    }
    let l2_errors: Vec<f64> = m_grid.iter().map(|&m| h.tail_energy(m)).collect();
    let sup_errors: Vec<f64> = m_grid.iter().map(|&m| 2.0 * h.tail_l1(m).powi(2)).collect();
    let exact = l2_errors.iter().all(|&e| e == 0.0);
    let xs: Vec<f64> = m_grid.iter().map(|&m| m as f64).collect();
    Ok(DecayReport {
        m_grid: m_grid.to_vec(),
        l2_slope: loglog_slope(&xs, &l2_errors),
        sup_slope: loglog_slope(&xs, &sup_errors),
        l2_errors,
        sup_errors,
        exact,
    })
}
