//! Concentration events, restricted-isometry constants and the explicit
//! probability bounds for support recovery.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_bigint::BigUint;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{phi, BasisSpec, BlockGram, Centering, DesignBlocks, TrigSeries};
use crate::error::{Error, Result};
use crate::geometry::GeometryReport;
use crate::law::DesignLaw;
use crate::linalg::{inv_sqrt_spd, principal, spectral_norm, sym_extremes, sym_op_norm};
use crate::rng;
use crate::selection::{empirical_norm_sq, Dataset};
use crate::simulate::AdditiveModel;
use crate::subsets::{self, binom, check_budget};

const BUDGET_HINT: &str = "reduce q* or restrict the analysis to a subset of covariates";

/// Largest eigenvalue of the nonnegative 2 × 2 matrix [[a, b], [b, c]].
fn lam2(a: f64, b: f64, c: f64) -> f64 {
    0.5 * (a + c) + (0.25 * (a - c) * (a - c) + b * b).sqrt()
}

/// Deviation matrix E = AᵀA − I with per-block norms for bounding.
struct RipProblem {
    e: DMatrix<f64>,
    offsets: Vec<usize>,
    diag_norm: Vec<f64>,
    cross_norm: DMatrix<f64>,
    cross_fro2: DMatrix<f64>,
}

impl RipProblem {
    fn new(blocks: &DesignBlocks) -> Self {
        let a = blocks.matrix();
        let p = a.ncols();
        let e = a.transpose() * a - DMatrix::identity(p, p);
        Self::from_deviation(e, blocks.offsets().to_vec())
    }

    fn from_deviation(e: DMatrix<f64>, offsets: Vec<usize>) -> Self {
        let q = offsets.len() - 1;
        let range = |j: usize| -> Vec<usize> { (offsets[j]..offsets[j + 1]).collect() };
        let diag_norm = (0..q)
            .map(|j| sym_op_norm(&principal(&e, &range(j))))
            .collect();
        let mut cross_norm = DMatrix::zeros(q, q);
        let mut cross_fro2 = DMatrix::zeros(q, q);
        for j in 0..q {
            for k in (j + 1)..q {
                let blk = crate::linalg::submatrix(&e, &range(j), &range(k));
                let n = spectral_norm(&blk);
                let f = blk.norm_squared();
                cross_norm[(j, k)] = n;
                cross_norm[(k, j)] = n;
                cross_fro2[(j, k)] = f;
                cross_fro2[(k, j)] = f;
            }
        }
        RipProblem {
            e,
            offsets,
            diag_norm,
            cross_norm,
            cross_fro2,
        }
    }

    fn q(&self) -> usize {
        self.offsets.len() - 1
    }

    fn norm_of(&self, set: &[usize]) -> f64 {
        let cols: Vec<usize> = set
            .iter()
            .flat_map(|&j| self.offsets[j]..self.offsets[j + 1])
            .collect();
        if cols.is_empty() {
            return 0.0;
        }
        sym_op_norm(&principal(&self.e, &cols))
    }
}

fn cands_max_cross(prob: &RipProblem, c: usize) -> f64 {
    prob.cross_norm.row(c).iter().copied().fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Goal {
    /// Exact maximum.
    Exact,
    /// Stop as soon as a value above the threshold is found.
    Exceeds(f64),
}

/// Result of the restricted-isometry search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RipResult {
    pub delta: f64,
    /// A maximising set J ∪ J₀.
    pub worst_set: Vec<usize>,
    /// Search nodes visited (diagnostic).
    pub nodes: u64,
}

struct Search<'a> {
    prob: &'a RipProblem,
    cands: Vec<usize>,
    suf_diag: Vec<f64>,
    suf_cross: Vec<f64>,
    suf_pair: Vec<f64>,
    best: f64,
    best_set: Vec<usize>,
    goal: Goal,
    nodes: u64,
    bufs: Vec<Vec<f64>>,
}

impl<'a> Search<'a> {
    fn new(prob: &'a RipProblem, active: &[usize], goal: Goal) -> Self {
        let mut cands: Vec<usize> = (0..prob.q()).filter(|j| !active.contains(j)).collect();
        // strongest candidates first, so suffix maxima shrink quickly
        let potential = |c: usize| -> f64 {
            let cross = cands_max_cross(prob, c);
            prob.diag_norm[c] + cross
        };
        let mut keyed: Vec<(f64, usize)> = cands.iter().map(|&c| (potential(c), c)).collect();
        keyed.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        cands = keyed.into_iter().map(|(_, c)| c).collect();
        let len = cands.len();
        let mut suf_diag = vec![0.0_f64; len + 1];
        let mut suf_cross = vec![0.0_f64; len + 1];
        let mut suf_pair = vec![0.0_f64; len + 1];
        for i in (0..len).rev() {
            let ci = cands[i];
            suf_diag[i] = suf_diag[i + 1].max(prob.diag_norm[ci]);
            let mut cross = suf_cross[i + 1];
            let mut pair = suf_pair[i + 1];
            for &ck in &cands[i + 1..] {
                cross = cross.max(prob.cross_norm[(ci, ck)]);
                pair = pair.max(prob.norm_of(&[ci, ck]));
            }
            suf_cross[i] = cross;
            suf_pair[i] = pair;
        }
        Search {
            prob,
            cands,
            suf_diag,
            suf_cross,
            suf_pair,
            best: f64::NEG_INFINITY,
            best_set: Vec::new(),
            goal,
            nodes: 0,
            bufs: Vec::new(),
        }
    }

    fn threshold(&self) -> f64 {
        match self.goal {
            Goal::Exact => self.best,
            Goal::Exceeds(t) => self.best.max(t),
        }
    }

    fn record(&mut self, value: f64, set: &[usize]) -> bool {
        if value > self.best {
            self.best = value;
            let mut s = set.to_vec();
            s.sort_unstable();
            self.best_set = s;
        }
        matches!(self.goal, Goal::Exceeds(t) if self.best > t)
    }

    /// Greedy growth followed by single swaps; gives the search a strong
    /// starting incumbent.
    fn local_search(&mut self, active: &[usize], r: usize) -> bool {
        let len = self.cands.len();
        if r == 0 || len == 0 {
            let v = self.prob.norm_of(active);
            return self.record(v, active);
        }
        let mut seeds: Vec<usize> = (0..len).collect();
        seeds.sort_by(|&a, &b| {
            self.prob.diag_norm[self.cands[b]]
                .total_cmp(&self.prob.diag_norm[self.cands[a]])
                .then(a.cmp(&b))
        });
        seeds.truncate(10);
        for seed in seeds {
            let mut chosen = vec![self.cands[seed]];
            while chosen.len() < r {
                let mut best = (f64::NEG_INFINITY, usize::MAX);
                for &c in &self.cands {
                    if chosen.contains(&c) {
                        continue;
                    }
                    let set: Vec<usize> = active
                        .iter()
                        .chain(&chosen)
                        .chain(std::iter::once(&c))
                        .copied()
                        .collect();
                    let v = self.prob.norm_of(&set);
                    if v > best.0 {
                        best = (v, c);
                    }
                }
                chosen.push(best.1);
            }
            let mut current: Vec<usize> = active.iter().chain(&chosen).copied().collect();
            let mut value = self.prob.norm_of(&current);
            for _round in 0..20 {
                let mut improved = false;
                for pos in active.len()..current.len() {
                    for &c in &self.cands {
                        if current.contains(&c) {
                            continue;
                        }
                        let old = current[pos];
                        current[pos] = c;
                        let v = self.prob.norm_of(&current);
                        if v > value {
                            value = v;
                            improved = true;
                        } else {
                            current[pos] = old;
                        }
                    }
                }
                if !improved {
                    break;
                }
            }
            if self.record(value, &current) {
                return true;
            }
        }
        false
    }

    fn run(&mut self, active: &[usize], r: usize) {
        if self.local_search(active, r) || r == 0 {
            return;
        }
        let len = self.cands.len();
        let w: Vec<f64> = self
            .cands
            .iter()
            .map(|&c| active.iter().map(|&i| self.prob.cross_fro2[(i, c)]).sum())
            .collect();
        self.bufs = vec![vec![0.0; len]; r + 1];
        self.bufs[r] = w;
        let mut set = active.to_vec();
        self.node(&mut set, 0, r, f64::INFINITY);
    }

    /// Visits the node that extends `set` by `rem` candidates from
    /// `start..`. `self.bufs[rem]` holds w_i = Σ_{p∈set} ‖E_{p,i}‖²_F and
    /// `a_ub` bounds ‖E_set‖ from the parent without an eigensolve.
    fn node(&mut self, set: &mut Vec<usize>, start: usize, rem: usize, a_ub: f64) -> bool {
        self.nodes += 1;
        let len = self.cands.len();
        if len - start < rem {
            return false;
        }
        let w = std::mem::take(&mut self.bufs[rem]);
        let stop = self.expand(set, start, rem, a_ub, &w);
        self.bufs[rem] = w;
        stop
    }

    fn expand(
        &mut self,
        set: &mut Vec<usize>,
        start: usize,
        rem: usize,
        a_ub: f64,
        w: &[f64],
    ) -> bool {
        let len = self.cands.len();
        let b = top_sum(&w[start..], rem).sqrt();
        let c = if rem == 1 {
            self.suf_diag[start]
        } else {
            let gersh = self.suf_diag[start] + (rem - 1) as f64 * self.suf_cross[start];
            if rem == 2 {
                gersh.min(self.suf_pair[start])
            } else {
                gersh
            }
        };
        if lam2(a_ub, b, c) + 1e-12 <= self.threshold() {
            return false;
        }
        let a = self.prob.norm_of(set);
        if lam2(a, b, c) + 1e-12 <= self.threshold() {
            return false;
        }
        if rem == 1 {
            for k in start..len {
                let ck = self.cands[k];
                if lam2(a, w[k].sqrt(), self.prob.diag_norm[ck]) + 1e-12 <= self.threshold() {
                    continue;
                }
                set.push(ck);
                let v = self.prob.norm_of(set);
                let stop = self.record(v, set);
                set.pop();
                if stop {
                    return true;
                }
            }
            return false;
        }
        for k in start..=(len - rem) {
            let ck = self.cands[k];
            let child_ub = lam2(a, w[k].sqrt(), self.prob.diag_norm[ck]);
            let mut child = std::mem::take(&mut self.bufs[rem - 1]);
            for i in (k + 1)..len {
                child[i] = w[i] + self.prob.cross_fro2[(ck, self.cands[i])];
            }
            self.bufs[rem - 1] = child;
            set.push(ck);
            let stop = self.node(set, k + 1, rem - 1, child_ub);
            set.pop();
            if stop {
                return true;
            }
        }
        false
    }
}

/// Sum of the `k` largest entries.
fn top_sum(v: &[f64], k: usize) -> f64 {
    let mut top = [f64::NEG_INFINITY; 8];
    if k > top.len() {
        let mut s = v.to_vec();
        s.sort_unstable_by(|x, y| y.total_cmp(x));
        return s.iter().take(k).sum();
    }
    for &x in v {
        if x > top[k - 1] {
            let mut i = k - 1;
            while i > 0 && top[i - 1] < x {
                top[i] = top[i - 1];
                i -= 1;
            }
            top[i] = x;
        }
    }
    top[..k].iter().filter(|x| x.is_finite()).sum()
}

fn validate_active(q: usize, active: &[usize]) -> Result<Vec<usize>> {
    let mut a = active.to_vec();
    a.sort_unstable();
    a.dedup();
    if let Some(&bad) = a.iter().find(|&&j| j >= q) {
        return Err(Error::domain(format!(
            "active covariate {bad} out of range"
        )));
    }
    Ok(a)
}

/// Number of maximal sets J ∪ J₀ the RIP search ranges over.
pub fn rip_nominal_count(q: usize, qstar: usize, s: usize) -> u128 {
    let free = q.saturating_sub(s);
    binom(free, qstar.min(free))
}

fn rip_search(
    blocks: &DesignBlocks,
    qstar: usize,
    active: &[usize],
    budget: u128,
    goal: Goal,
) -> Result<RipResult> {
    let q = blocks.q();
    let active = validate_active(q, active)?;
    check_budget(
        rip_nominal_count(q, qstar, active.len()),
        budget,
        BUDGET_HINT,
    )?;
    let prob = RipProblem::new(blocks);
    let r = qstar.min(q - active.len());
    let mut search = Search::new(&prob, &active, goal);
    search.run(&active, r);
    Ok(RipResult {
        delta: search.best.max(0.0),
        worst_set: search.best_set,
        nodes: search.nodes,
    })
}

/// δ_{q*} = max_{|J| ≤ q*} ‖A_{J∪J₀}ᵀ A_{J∪J₀} − I‖_op, computed exactly.
///
/// The norm can only grow with the set, so the maximum is attained at
/// J ∩ J₀ = ∅ with |J| = min(q*, q − s). Those sets are searched by branch
/// and bound; the budget applies to their nominal count.
pub fn rip_constant(
    blocks: &DesignBlocks,
    qstar: usize,
    active: &[usize],
    budget: u128,
) -> Result<f64> {
    Ok(rip_search(blocks, qstar, active, budget, Goal::Exact)?.delta)
}

/// Like [`rip_constant`], also returning a maximising set.
pub fn rip_constant_detail(
    blocks: &DesignBlocks,
    qstar: usize,
    active: &[usize],
    budget: u128,
) -> Result<RipResult> {
    rip_search(blocks, qstar, active, budget, Goal::Exact)
}

/// Whether δ_{q*} > threshold, stopping at the first witness.
pub fn rip_exceeds(
    blocks: &DesignBlocks,
    qstar: usize,
    active: &[usize],
    threshold: f64,
    budget: u128,
) -> Result<bool> {
    let r = rip_search(blocks, qstar, active, budget, Goal::Exceeds(threshold))?;
    Ok(r.delta > threshold)
}

/// An n × q design with i.i.d. N(0, 1/n) entries, one column per block.
pub fn gaussian_design_blocks(n: usize, q: usize, seed: u64) -> Result<DesignBlocks> {
    if n == 0 || q == 0 {
        return Err(Error::domain("n and q must be positive"));
    }
    let mut r = rng::stream(seed, &[rng::label::DESIGN]);
    let scale = 1.0 / (n as f64).sqrt();
    let a = DMatrix::from_fn(n, q, |_, _| scale * r.sample::<f64, _>(StandardNormal));
    Ok(DesignBlocks::from_columns(a))
}

/// Checks ℰ_{δ,q*} on prebuilt blocks. `population` is the population Gram
/// of all blocks; `None` means it is the identity.
pub fn event_e_check_blocks(
    blocks: &DesignBlocks,
    population: Option<&BlockGram>,
    qstar: usize,
    active: &[usize],
    delta: f64,
    budget: u128,
) -> Result<bool> {
    if !(delta > 0.0) {
        return Err(Error::domain(format!("δ = {delta} must be positive")));
    }
    match population {
        Some(g) if !g.is_identity() => {
            if g.dims()
                != (0..blocks.q())
                    .map(|j| blocks.block_dim(j))
                    .collect::<Vec<_>>()
            {
                return Err(Error::Dimension {
                    expected: g.matrix().nrows(),
                    got: blocks.matrix().ncols(),
                });
            }
            event_e_generic(&blocks.gram(), g, qstar, active, delta, budget)
        }
        _ => Ok(!rip_exceeds(blocks, qstar, active, delta, budget)?),
    }
}

/// Checks ℰ_{δ,q*} from an empirical and a population Gram on the same blocks.
pub fn event_e_generic(
    empirical: &BlockGram,
    population: &BlockGram,
    qstar: usize,
    active: &[usize],
    delta: f64,
    budget: u128,
) -> Result<bool> {
    let q = population.q();
    let active = validate_active(q, active)?;
    let free: Vec<usize> = (0..q).filter(|j| !active.contains(j)).collect();
    let r = qstar.min(free.len());
    check_budget(binom(free.len(), r), budget, BUDGET_HINT)?;
    let sets: Vec<Vec<usize>> = subsets::of_size(&free, r).collect();
    let violated = sets
        .par_iter()
        .map(|extra| -> Result<bool> {
            let set = subsets::union(&active, extra);
            let cols = population.columns(&set);
            if cols.is_empty() {
                return Ok(false);
            }
            let w = inv_sqrt_spd(&population.sub(&set), &format!("population G{set:?}"))?;
            let m = &w * empirical.sub(&set) * &w;
            let (lo, hi) = sym_extremes(&m);
            Ok(lo < 1.0 - delta || hi > 1.0 + delta)
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(!violated.into_iter().any(|v| v))
}

/// Checks ℰ_{δ,q*} for a sample: the empirical norm of every g ∈ V_{J∪J₀},
/// |J| ≤ q*, stays within a factor 1 ± δ of its population norm.
pub fn event_e_check(
    dataset: &Dataset,
    spec: &BasisSpec,
    law: &DesignLaw,
    qstar: usize,
    active: &[usize],
    delta: f64,
    budget: u128,
) -> Result<bool> {
    let centering = Centering::population(spec, law)?;
    let blocks = DesignBlocks::build(dataset.x(), spec, &centering)?;
    let population = law.block_gram(spec)?;
    event_e_check_blocks(&blocks, Some(&population), qstar, active, delta, budget)
}

/// Monte Carlo estimate of P(ℰᶜ_{δ,q*}) with its binomial standard error.
#[allow(clippy::too_many_arguments)]
pub fn estimate_event_e_failure(
    law: &DesignLaw,
    spec: &BasisSpec,
    n: usize,
    qstar: usize,
    active: &[usize],
    delta: f64,
    trials: usize,
    seed: u64,
    budget: u128,
) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::domain("at least one trial is required"));
    }
    let centering = Centering::population(spec, law)?;
    let population = law.block_gram(spec)?;
    let failures = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<usize> {
            let mut r = rng::stream(seed, &[t as u64, rng::label::DESIGN]);
            let x = law.sample(n, spec.q(), &mut r)?;
            let blocks = DesignBlocks::build(&x, spec, &centering)?;
            let holds =
                event_e_check_blocks(&blocks, Some(&population), qstar, active, delta, budget)?;
            Ok(usize::from(!holds))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    let p = failures as f64 / trials as f64;
    Ok((p, (p * (1.0 - p) / trials as f64).sqrt()))
}

/// Outcome of the truncation-residual check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventACheck {
    pub holds: bool,
    pub residual_norm_sq: f64,
    pub threshold: f64,
}

/// Coefficients of Π_{V_j} f in the (population-centered) basis of V_j.
fn projection_coeffs(
    law: &DesignLaw,
    spec: &BasisSpec,
    j: usize,
    f: &TrigSeries,
) -> Result<Vec<f64>> {
    let idx: Vec<usize> = spec.indices(j).collect();
    if idx.is_empty() {
        return Ok(Vec::new());
    }
    let marginal = law.marginal(j);
    if matches!(marginal, crate::law::MarginalDensity::Uniform) {
        return Ok(idx
            .iter()
            .map(|&k| f.coeffs.get(k - 1).copied().unwrap_or(0.0))
            .collect());
    }
    let gram = law.block_gram(&BasisSpec::new(
        vec![spec.level(j)],
        vec![spec.is_centered(j)],
    )?)?;
    let means = law.basis_means(j, spec.level(j))?;
    let f_mean = law.component_mean(j, f);
    let (xs, ws) = marginal.nodes();
    let rhs = DVector::from_iterator(
        idx.len(),
        idx.iter().map(|&k| {
            let shift = if spec.is_centered(j) {
                means[k - 1]
            } else {
                0.0
            };
            xs.iter()
                .zip(&ws)
                .map(|(&x, &w)| w * (phi(k, x) - shift) * (f.eval(x) - f_mean))
                .sum::<f64>()
        }),
    );
    let chol = gram
        .matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular {
            block: format!("G[{j}]"),
            min_eigenvalue: sym_extremes(gram.matrix()).0,
        })?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// Checks ‖f − Σ_{j∈J₀} Π_{V_j} f_j‖²_n ≤ 2c'(1 − ρ²)κ at the sample.
pub fn event_a_check(
    dataset: &Dataset,
    model: &AdditiveModel,
    spec: &BasisSpec,
    law: &DesignLaw,
    geometry: &GeometryReport,
    cprime: f64,
) -> Result<EventACheck> {
    let kappa = match geometry.kappa {
        Some(k) => k,
        None if model.active.is_empty() => 0.0,
        None => return Err(Error::domain("geometry report carries no κ")),
    };
    let n = dataset.n();
    let mut resid = DVector::zeros(n);
    for &j in &model.active {
        let f = &model.components[j];
        let c = projection_coeffs(law, spec, j, f)?;
        let means = law.basis_means(j, spec.level(j))?;
        let idx: Vec<usize> = spec.indices(j).collect();
        let offset = model.offsets.get(j).copied().unwrap_or(0.0);
        for i in 0..n {
            let x = dataset.x()[(i, j)];
            let proj: f64 = idx
                .iter()
                .zip(&c)
                .map(|(&k, ck)| {
                    let shift = if spec.is_centered(j) {
                        means[k - 1]
                    } else {
                        0.0
                    };
                    ck * (phi(k, x) - shift)
                })
                .sum();
            resid[i] += f.eval(x) - offset - proj;
        }
    }
    let r = empirical_norm_sq(&resid);
    let threshold = 2.0 * cprime * (1.0 - geometry.rho_qstar.powi(2)) * kappa;
    Ok(EventACheck {
        holds: r <= threshold,
        residual_norm_sq: r,
        threshold,
    })
}

/// Upper- and lower-tail bounds for χ²(d) − d at deviation x:
/// (exp(−x²/(2(2d+2x))), exp(−x²/(4d))).
pub fn chi2_tail_bounds(d: usize, x: f64) -> Result<(f64, f64)> {
    if d == 0 {
        return Err(Error::domain("degrees of freedom must be positive"));
    }
    if !(x >= 0.0) {
        return Err(Error::domain(format!("deviation {x} must be nonnegative")));
    }
    let d = d as f64;
    Ok((
        (-x * x / (2.0 * (2.0 * d + 2.0 * x))).exp(),
        (-x * x / (4.0 * d)).exp(),
    ))
}

/// exp(−3nx / (8 ‖f − v‖²_∞)).
pub fn bennett_truncation_bound(n: usize, x: f64, sup_norm_sq: f64) -> Result<f64> {
    if !(x >= 0.0) || !(sup_norm_sq > 0.0) {
        return Err(Error::domain("need x ≥ 0 and a positive sup-norm bound"));
    }
    Ok((-3.0 * n as f64 * x / (8.0 * sup_norm_sq)).exp())
}

/// Both sides of Σ_{j ≤ q*} C(q, j) ≤ (eq/q*)^{q*}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetCount {
    /// Decimal representation of the exact count.
    pub exact: String,
    /// The bound, infinite when it exceeds the f64 range.
    pub bound: f64,
    pub ln_exact: f64,
    pub ln_bound: f64,
    pub holds: bool,
}

fn ln_biguint(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 1000 {
        let digits = x.to_u64_digits();
        return digits
            .iter()
            .rev()
            .fold(0.0_f64, |acc, &d| {
                acc * 18_446_744_073_709_551_616.0 + d as f64
            })
            .ln();
    }
    let shift = bits - 64;
    let top = (x >> shift).to_u64_digits();
    let head = top.first().copied().unwrap_or(0) as f64;
    head.ln() + shift as f64 * std::f64::consts::LN_2
}

pub fn subset_count_bound(q: usize, qstar: usize) -> Result<SubsetCount> {
    if qstar == 0 || qstar > q {
        return Err(Error::domain(format!(
            "need 1 ≤ q* ≤ q, got q* = {qstar}, q = {q}"
        )));
    }
    let mut term = BigUint::from(1u32);
    let mut total = BigUint::from(1u32);
    for j in 1..=qstar {
        term = term * BigUint::from(q - j + 1) / BigUint::from(j);
        total += &term;
    }
    let ln_bound = qstar as f64 * (1.0 + (q as f64 / qstar as f64).ln());
    let ln_exact = ln_biguint(&total);
    // exact comparison in integers when the bound is representable
    let holds = if ln_bound < 700.0 {
        let bound = ln_bound.exp();
        total.to_string().parse::<f64>().is_ok_and(|t| t <= bound)
    } else {
        ln_exact <= ln_bound
    };
    Ok(SubsetCount {
        exact: total.to_string(),
        bound: ln_bound.exp(),
        ln_exact,
        ln_bound,
        holds,
    })
}

/// (2/3)(1 − √c')² − 8(1+δ)/(1−δ)² · c' ≥ 1/2.
pub fn check_cprime(delta: f64, cprime: f64) -> bool {
    if !(delta > 0.0 && delta < 1.0 && cprime > 0.0 && cprime < 1.0) {
        return false;
    }
    let lhs = (2.0 / 3.0) * (1.0 - cprime.sqrt()).powi(2)
        - 8.0 * (1.0 + delta) / (1.0 - delta).powi(2) * cprime;
    lhs >= 0.5
}

/// c_δ = (1 − δ)² / (1 + δ).
pub fn c_delta(delta: f64) -> f64 {
    (1.0 - delta).powi(2) / (1.0 + delta)
}

/// Inputs of [`selection_error_bound`]. Vectors are indexed from l = 1:
/// `kappa_l[l-1] = κ_l`, `d_l[l-1] = d_l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub n: usize,
    pub sigma2: f64,
    pub rho: f64,
    pub kappa_l: Vec<f64>,
    pub d_l: Vec<usize>,
    pub s: usize,
    pub qstar: usize,
    pub q: usize,
    pub delta: f64,
    pub cprime: f64,
    /// Supplied or Monte Carlo estimate of P(ℰᶜ); omitted when `None`.
    pub p_event_e_complement: Option<f64>,
    /// Keep exp(−3n/(16 d_{q*})); it may be dropped when every f_j ∈ V_j.
    pub include_truncation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTermsL {
    pub l: usize,
    /// Σ_m C(s, l) C(q − s, m).
    pub weight: f64,
    pub chi_square: f64,
    pub gaussian_signal: f64,
    pub gaussian_truncation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub total: f64,
    pub p_event_e_complement: Option<f64>,
    pub truncation: f64,
    pub chi_square: f64,
    pub gaussian_signal: f64,
    pub gaussian_truncation: f64,
    pub per_l: Vec<BoundTermsL>,
}

/// Upper bound on P(J₀ ⊄ Ĵ₀) with the three exponential terms of each
/// (l, m) pair written out separately.
pub fn selection_error_bound(p: &BoundParams) -> Result<BoundReport> {
    if !(0.0..1.0).contains(&p.rho) {
        return Err(Error::assumption(format!(
            "ρ = {} must lie in [0, 1)",
            p.rho
        )));
    }
    if p.s > p.qstar || p.qstar > p.q || p.qstar == 0 {
        return Err(Error::domain("need s ≤ q* ≤ q and q* ≥ 1"));
    }
    if p.kappa_l.len() < p.s {
        return Err(Error::Dimension {
            expected: p.s,
            got: p.kappa_l.len(),
        });
    }
    if p.d_l.len() < p.qstar {
        return Err(Error::Dimension {
            expected: p.qstar,
            got: p.d_l.len(),
        });
    }
    if let Some(k) = p.kappa_l.iter().take(p.s).find(|&&k| !(k > 0.0)) {
        return Err(Error::assumption(format!("κ_l = {k} must be positive")));
    }
    if !(p.sigma2 >= 0.0) || p.n == 0 {
        return Err(Error::domain("need σ² ≥ 0 and n ≥ 1"));
    }
    if !check_cprime(p.delta, p.cprime) {
        return Err(Error::assumption(format!(
            "c' = {} violates the admissibility condition at δ = {}",
            p.cprime, p.delta
        )));
    }
    let n = p.n as f64;
    let cd = c_delta(p.delta);
    let gap = 1.0 - p.rho * p.rho;
    let truncation = if p.include_truncation && p.d_l[p.qstar - 1] > 0 {
        (-3.0 * n / (16.0 * p.d_l[p.qstar - 1] as f64)).exp()
    } else {
        0.0
    };
    let mut per_l = Vec::with_capacity(p.s);
    for l in 1..=p.s {
        let kl = p.kappa_l[l - 1];
        let d = p.d_l[p.qstar - p.s + l - 1] as f64;
        let weight: f64 = (0..=(p.qstar - (p.s - l)))
            .map(|m| binom(p.s, l) as f64 * binom(p.q - p.s, m) as f64)
            .sum();
        let (chi, g1, g2) = if p.sigma2 == 0.0 {
            (0.0, 0.0, 0.0)
        } else {
            let s2 = p.sigma2;
            let chi = 2.0
                * (-(cd * cd * n * n * gap * gap * kl * kl)
                    / (32.0 * (8.0 * s2 * s2 * d + cd * s2 * n * gap * kl)))
                    .exp();
            let g1 = (-(cd / 1024.0) * n * gap * kl / s2).exp();
            let g2 = (-(cd * cd / (16384.0 * p.cprime)) * n * gap * kl / s2).exp();
            (chi, g1, g2)
        };
        per_l.push(BoundTermsL {
            l,
            weight,
            chi_square: chi,
            gaussian_signal: g1,
            gaussian_truncation: g2,
        });
    }
    let chi_square: f64 = per_l.iter().map(|t| t.weight * t.chi_square).sum();
    let gaussian_signal: f64 = per_l.iter().map(|t| t.weight * t.gaussian_signal).sum();
    let gaussian_truncation: f64 = per_l.iter().map(|t| t.weight * t.gaussian_truncation).sum();
    let total = p.p_event_e_complement.unwrap_or(0.0)
        + truncation
        + chi_square
        + gaussian_signal
        + gaussian_truncation;
    Ok(BoundReport {
        total,
        p_event_e_complement: p.p_event_e_complement,
        truncation,
        chi_square,
        gaussian_signal,
        gaussian_truncation,
        per_l,
    })
}

/// Inputs of [`corollary_conditions`]; vectors indexed from l = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionParams {
    pub n: usize,
    pub q: usize,
    pub s: usize,
    pub qstar: usize,
    pub sigma2: f64,
    pub rho: f64,
    pub kappa: f64,
    pub kappa_l: Vec<f64>,
    pub d_l: Vec<usize>,
    /// ε_s for the q* = s analysis.
    pub eps_s: f64,
    pub alpha: f64,
    pub c3: f64,
    /// Drop the d log q terms (every f_j ∈ V_j).
    pub parametric: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub conditions: BTreeMap<String, bool>,
    /// Left-hand maxima, compared against c₃ n.
    pub values: BTreeMap<String, f64>,
}

/// Evaluates the max{…} ≤ c₃ n sample-size conditions.
pub fn corollary_conditions(p: &ConditionParams) -> Result<ConditionReport> {
    if p.s == 0 || p.qstar == 0 || p.s > p.q || p.qstar > p.q {
        return Err(Error::domain("need 1 ≤ s, q* ≤ q"));
    }
    if p.kappa_l.len() < p.s || p.d_l.len() < p.qstar.max(p.s) {
        return Err(Error::domain("κ_l and d_l must cover l = 1..max(s, q*)"));
    }
    if !(p.kappa > 0.0) || p.kappa_l.iter().take(p.s).any(|&k| !(k > 0.0)) {
        return Err(Error::assumption("κ must be positive"));
    }
    if !(0.0..1.0).contains(&p.rho) {
        return Err(Error::assumption(format!(
            "ρ = {} must lie in [0, 1)",
            p.rho
        )));
    }
    let cap = p.c3 * p.n as f64;
    let q = p.q as f64;
    let gap = 1.0 - p.rho * p.rho;
    let dimension_term = |d: usize| if p.parametric { 0.0 } else { d as f64 * q.ln() };
    let mut values = BTreeMap::new();

    let qs = p.qstar as f64;
    let dq = p.d_l[p.qstar - 1] as f64;
    let lg = (std::f64::consts::E * q / qs).ln();
    let c2 = [
        p.sigma2 * (qs * dq * lg).sqrt() / (gap * p.kappa),
        p.sigma2 * qs * lg / (gap * p.kappa),
        dimension_term(p.d_l[p.qstar - 1]),
    ];
    values.insert(
        "uniform_kappa".to_string(),
        c2.iter().copied().fold(0.0, f64::max),
    );

    let mut per_level_all = 0.0_f64;
    let mut per_l = Vec::new();
    for l in 1..=p.s {
        let lf = l as f64;
        let kl = p.kappa_l[l - 1];
        let lg = (std::f64::consts::E * q / lf).ln();
        let v = [
            p.sigma2 * (lf * p.d_l[l - 1] as f64 * lg).sqrt() / (gap * kl),
            p.sigma2 * lf * lg / (gap * kl),
            dimension_term(p.d_l[p.s - 1]),
        ]
        .iter()
        .copied()
        .fold(0.0, f64::max);
        per_level_all = per_level_all.max(v);
        per_l.push(v);
    }
    values.insert("per_level".to_string(), per_level_all);
    for (i, v) in per_l.iter().enumerate() {
        values.insert(format!("per_level_l{}", i + 1), *v);
    }

    if p.qstar == p.s {
        let k1 = p.kappa_l[0];
        let denom = gap * (1.0 - p.eps_s) * k1;
        let v = if denom > 0.0 {
            [
                p.sigma2 * (p.d_l[0] as f64 * q.ln()).sqrt() / denom,
                p.sigma2 * q.ln() / denom,
                dimension_term(p.d_l[p.s - 1]),
            ]
            .iter()
            .copied()
            .fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        values.insert("full_support".to_string(), v);

        let a = p.alpha;
        let s = p.s as f64;
        let v = [
            p.sigma2 * s.powf(1.0 / (4.0 * a)) * q.ln().sqrt()
                / k1.powf((4.0 * a + 1.0) / (4.0 * a)),
            p.sigma2 * q.ln() / k1,
            s.powf((2.0 * a + 1.0) / (2.0 * a)) * q.ln().powi(4) / k1.powf(1.0 / (2.0 * a)),
        ]
        .iter()
        .copied()
        .fold(0.0, f64::max);
        values.insert("nonparametric".to_string(), v);
    }

    let conditions = values.iter().map(|(k, &v)| (k.clone(), v <= cap)).collect();
    Ok(ConditionReport { conditions, values })
}

/// Everything the diagnose command reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DiagnosticsReport {
    pub delta_qstar: Option<f64>,
    /// (δ, whether ℰ_{δ,q*} holds).
    pub event_e_holds: Vec<(f64, bool)>,
    pub event_a: Option<EventACheck>,
    pub cprime_ok: bool,
    pub bound_terms: Option<BoundReport>,
    pub conditions: Option<ConditionReport>,
    pub subset_count: Option<SubsetCount>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_examples() {
        assert_eq!(chi2_tail_bounds(3, 0.0).unwrap(), (1.0, 1.0));
        let (u, _) = chi2_tail_bounds(2, 2.0).unwrap();
        assert!((u - 0.7788007830714049).abs() < 1e-15);
        let b = bennett_truncation_bound(16, 1.0, 3.0).unwrap();
        assert!((b - 0.1353352832366127).abs() < 1e-15);
        assert_eq!(bennett_truncation_bound(16, 0.0, 3.0).unwrap(), 1.0);
        assert!(check_cprime(0.5, 0.001));
        assert!(!check_cprime(0.5, 0.01));
    }

    #[test]
    fn subset_count_examples() {
        let c = subset_count_bound(8, 2).unwrap();
        assert_eq!(c.exact, "37");
        assert!((c.bound - (4.0 * std::f64::consts::E).powi(2)).abs() < 1e-9);
        assert!(c.holds);
        let c = subset_count_bound(30, 30).unwrap();
        assert_eq!(c.exact, (1u64 << 30).to_string());
        assert!(c.holds);
        let c = subset_count_bound(10_000, 5_000).unwrap();
        assert!(c.holds && c.bound.is_infinite());
        assert!(subset_count_bound(3, 0).is_err());
    }

    #[test]
    fn orthonormal_columns_have_zero_rip() {
        let a = DMatrix::identity(6, 4);
        let blocks = DesignBlocks::from_columns(a);
        let d = rip_constant(&blocks, 2, &[1], 1_000).unwrap();
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn identical_grams_give_the_event() {
        let g = BlockGram::new(
            DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 1.0]),
            &[1, 1, 1],
        )
        .unwrap();
        for delta in [1e-6, 0.1, 0.9] {
            assert!(event_e_generic(&g, &g, 1, &[0], delta, 100).unwrap());
        }
    }

    #[test]
    fn zero_noise_bound_reduces_to_event_terms() {
        let p = BoundParams {
            n: 100,
            sigma2: 0.0,
            rho: 0.0,
            kappa_l: vec![1.0],
            d_l: vec![3],
            s: 1,
            qstar: 1,
            q: 5,
            delta: 0.5,
            cprime: 0.001,
            p_event_e_complement: Some(0.25),
            include_truncation: false,
        };
        let r = selection_error_bound(&p).unwrap();
        assert_eq!(r.total, 0.25);
        let bad = BoundParams {
            rho: 1.0,
            ..p.clone()
        };
        assert!(matches!(
            selection_error_bound(&bad),
            Err(Error::Assumption(_))
        ));
        let bad = BoundParams {
            kappa_l: vec![0.0],
            ..p
        };
        assert!(matches!(
            selection_error_bound(&bad),
            Err(Error::Assumption(_))
        ));
    }
}
