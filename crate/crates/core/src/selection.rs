//! Empirical projections and the penalised projection-norm selector
//! Ĵ₀ = argmax_{|J| ≤ q*} ‖Π̂_J Y‖²_n − σ² d_J / n.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, Centering, DesignBlocks};
use crate::error::{Error, Result};
use crate::linalg::PivotedQr;
use crate::subsets::{self, check_budget, DEFAULT_BUDGET};

/// Relative rank tolerance of the orthogonal decomposition.
pub const RANK_TOL: f64 = 1e-10;

/// Relative tolerance (against ‖Y‖²_n) for ties in the criterion.
pub const TIE_REL_TOL: f64 = 1e-12;

/// Observed covariates (n × q, entries in [0,1]) and responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::domain("dataset needs at least one row"));
        }
        if y.len() != x.nrows() {
            return Err(Error::Dimension {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::validation("covariates must lie in [0, 1]"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("responses must be finite"));
        }
        Ok(Dataset { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn q(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// Rows `start..end` as a new dataset.
    pub fn rows(&self, start: usize, end: usize) -> Result<Dataset> {
        Dataset::new(
            self.x.rows(start, end - start).into_owned(),
            self.y.rows(start, end - start).into_owned(),
        )
    }

    /// Rows reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Dataset> {
        let x = DMatrix::from_fn(perm.len(), self.q(), |i, j| self.x[(perm[i], j)]);
        let y = DVector::from_fn(perm.len(), |i, _| self.y[perm[i]]);
        Dataset::new(x, y)
    }
}

/// ‖v‖²_n = (1/n) Σ vᵢ².
pub fn empirical_norm_sq(v: &DVector<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.norm_squared() / v.len() as f64
    }
}

/// ‖Π̂ Y‖²_n for the column space of `a`; zero for an empty design.
pub fn project_norm_sq(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    if a.nrows() != y.len() {
        return Err(Error::Dimension {
            expected: a.nrows(),
            got: y.len(),
        });
    }
    if a.ncols() == 0 || y.is_empty() {
        return Ok(0.0);
    }
    Ok(PivotedQr::new(a, RANK_TOL).projected_norm_sq(y) / y.len() as f64)
}

/// ‖v − Π̂ v‖²_n.
pub fn residual_norm_sq(a: &DMatrix<f64>, v: &DVector<f64>) -> Result<f64> {
    if a.nrows() != v.len() {
        return Err(Error::Dimension {
            expected: a.nrows(),
            got: v.len(),
        });
    }
    if a.ncols() == 0 {
        return Ok(empirical_norm_sq(v));
    }
    let p = PivotedQr::new(a, RANK_TOL).project(v);
    Ok(empirical_norm_sq(&(v - p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    Exhaustive,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    pub subset: Vec<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub chosen: Vec<usize>,
    /// Criterion values of the evaluated subsets, in evaluation order.
    pub criterion: Vec<SubsetScore>,
    pub sigma2: f64,
    pub qstar: usize,
    pub search_mode: SearchMode,
}

impl SelectionResult {
    pub fn value_of(&self, set: &[usize]) -> Option<f64> {
        self.criterion
            .iter()
            .find(|s| s.subset == set)
            .map(|s| s.value)
    }
}

#[derive(Debug, Clone)]
pub struct SelectionOptions {
    pub budget: u128,
    pub centering: Centering,
    /// Append a constant column to every candidate design.
    pub intercept: bool,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        SelectionOptions {
            budget: DEFAULT_BUDGET,
            centering: Centering::Empirical,
            intercept: false,
        }
    }
}

/// Criterion values closer than this to the best are ties, so rounding noise
/// in projection norms cannot break them.
fn tie_tolerance(y: &DVector<f64>) -> f64 {
    TIE_REL_TOL * empirical_norm_sq(y)
}

/// The preferred score among those within `tol` of the largest value.
fn best_of(scores: &[SubsetScore], tol: f64) -> Option<&SubsetScore> {
    let top = scores
        .iter()
        .map(|s| s.value)
        .fold(f64::NEG_INFINITY, f64::max);
    scores
        .iter()
        .filter(|s| s.value >= top - tol)
        .min_by(|a, b| {
            a.subset
                .len()
                .cmp(&b.subset.len())
                .then_with(|| a.subset.cmp(&b.subset))
        })
}

struct Criterion<'a> {
    blocks: &'a DesignBlocks,
    y: &'a DVector<f64>,
    sigma2: f64,
    intercept: bool,
}

impl Criterion<'_> {
    fn eval(&self, set: &[usize]) -> Result<f64> {
        let n = self.y.len();
        let mut cols = self.blocks.columns(set);
        let d: usize = set.iter().map(|&j| self.blocks.block_dim(j)).sum();
        let a = if self.intercept {
            let mut a = DMatrix::from_element(n, cols.len() + 1, 1.0 / (n as f64).sqrt());
            for (c, col) in cols.drain(..).enumerate() {
                a.set_column(c + 1, &self.blocks.matrix().column(col));
            }
            a
        } else {
            self.blocks.matrix().select_columns(cols.iter())
        };
        Ok(project_norm_sq(&a, self.y)? - self.sigma2 * d as f64 / n as f64)
    }
}

fn validate_inputs(blocks: &DesignBlocks, y: &DVector<f64>, sigma2: f64) -> Result<()> {
    if blocks.nrows() != y.len() {
        return Err(Error::Dimension {
            expected: blocks.nrows(),
            got: y.len(),
        });
    }
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::domain(format!(
            "σ² = {sigma2} must be finite and nonnegative"
        )));
    }
    Ok(())
}

/// Exhaustive search over every |J| ≤ q* on prebuilt design blocks.
pub fn select_exhaustive_blocks(
    blocks: &DesignBlocks,
    y: &DVector<f64>,
    qstar: usize,
    sigma2: f64,
    opts: &SelectionOptions,
) -> Result<SelectionResult> {
    validate_inputs(blocks, y, sigma2)?;
    let q = blocks.q();
    let count = subsets::count_up_to(q, qstar);
    check_budget(count, opts.budget, "use greedy search or reduce q*")?;
    let crit = Criterion {
        blocks,
        y,
        sigma2,
        intercept: opts.intercept,
    };
    let candidates: Vec<Vec<usize>> = subsets::up_to(q, qstar).collect();
    let criterion: Vec<SubsetScore> = candidates
        .into_par_iter()
        .map(|subset| {
            crit.eval(&subset)
                .map(|value| SubsetScore { subset, value })
        })
        .collect::<Result<_>>()?;
    let chosen = best_of(&criterion, tie_tolerance(y))
        .map(|s| s.subset.clone())
        .unwrap_or_default();
    Ok(SelectionResult {
        chosen,
        criterion,
        sigma2,
        qstar,
        search_mode: SearchMode::Exhaustive,
    })
}

/// Forward stepwise surrogate: adds the covariate with the best criterion
/// while the criterion strictly improves and |J| < q*.
pub fn select_greedy_blocks(
    blocks: &DesignBlocks,
    y: &DVector<f64>,
    qstar: usize,
    sigma2: f64,
    opts: &SelectionOptions,
) -> Result<SelectionResult> {
    validate_inputs(blocks, y, sigma2)?;
    let q = blocks.q();
    let crit = Criterion {
        blocks,
        y,
        sigma2,
        intercept: opts.intercept,
    };
    let mut current = SubsetScore {
        subset: Vec::new(),
        value: crit.eval(&[])?,
    };
    let tol = tie_tolerance(y);
    let mut criterion = vec![current.clone()];
    while current.subset.len() < qstar.min(q) {
        let step: Vec<SubsetScore> = (0..q)
            .filter(|j| !current.subset.contains(j))
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|j| {
                let subset = subsets::union(&current.subset, &[j]);
                crit.eval(&subset)
                    .map(|value| SubsetScore { subset, value })
            })
            .collect::<Result<_>>()?;
        let best = best_of(&step, tol).cloned();
        criterion.extend(step);
        match best {
            Some(b) if b.value > current.value + tol => current = b,
            _ => break,
        }
    }
    Ok(SelectionResult {
        chosen: current.subset,
        criterion,
        sigma2,
        qstar,
        search_mode: SearchMode::Greedy,
    })
}

fn build_blocks(
    dataset: &Dataset,
    spec: &BasisSpec,
    opts: &SelectionOptions,
) -> Result<DesignBlocks> {
    DesignBlocks::build(dataset.x(), spec, &opts.centering)
}

pub fn select_exhaustive(
    dataset: &Dataset,
    spec: &BasisSpec,
    qstar: usize,
    sigma2: f64,
    opts: &SelectionOptions,
) -> Result<SelectionResult> {
    check_budget(
        subsets::count_up_to(dataset.q(), qstar),
        opts.budget,
        "use greedy search or reduce q*",
    )?;
    let blocks = build_blocks(dataset, spec, opts)?;
    select_exhaustive_blocks(&blocks, dataset.y(), qstar, sigma2, opts)
}

pub fn select_greedy(
    dataset: &Dataset,
    spec: &BasisSpec,
    qstar: usize,
    sigma2: f64,
    opts: &SelectionOptions,
) -> Result<SelectionResult> {
    let blocks = build_blocks(dataset, spec, opts)?;
    select_greedy_blocks(&blocks, dataset.y(), qstar, sigma2, opts)
}

/// Outcome of running both searches on the same data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchComparison {
    pub exhaustive: Vec<usize>,
    pub greedy: Vec<usize>,
    pub discrepancy: bool,
    /// Criterion gap between the exhaustive and the greedy choice (≥ 0).
    pub criterion_gap: f64,
}

pub fn compare_searches(
    dataset: &Dataset,
    spec: &BasisSpec,
    qstar: usize,
    sigma2: f64,
    opts: &SelectionOptions,
) -> Result<SearchComparison> {
    let blocks = build_blocks(dataset, spec, opts)?;
    let ex = select_exhaustive_blocks(&blocks, dataset.y(), qstar, sigma2, opts)?;
    let gr = select_greedy_blocks(&blocks, dataset.y(), qstar, sigma2, opts)?;
    let v_ex = ex.value_of(&ex.chosen).unwrap_or(0.0);
    let v_gr = ex.value_of(&gr.chosen).unwrap_or(0.0);
    if gr.chosen != ex.chosen {
        log::info!(
            "greedy search chose {:?}, exhaustive {:?}",
            gr.chosen,
            ex.chosen
        );
    }
    Ok(SearchComparison {
        discrepancy: gr.chosen != ex.chosen,
        exhaustive: ex.chosen,
        greedy: gr.chosen,
        criterion_gap: v_ex - v_gr,
    })
}

/// ‖Π̂_{J₀} f‖²_n − ‖Π̂_J f‖²_n on prebuilt blocks.
pub fn projection_gap_blocks(
    blocks: &DesignBlocks,
    set: &[usize],
    active: &[usize],
    f: &DVector<f64>,
) -> Result<f64> {
    let q = blocks.q();
    if let Some(&bad) = set.iter().chain(active).find(|&&j| j >= q) {
        return Err(Error::domain(format!("covariate {bad} out of range")));
    }
    Ok(project_norm_sq(&blocks.select(active), f)? - project_norm_sq(&blocks.select(set), f)?)
}

pub fn empirical_projection_gap(
    dataset: &Dataset,
    spec: &BasisSpec,
    set: &[usize],
    active: &[usize],
    f_values: &DVector<f64>,
    centering: &Centering,
) -> Result<f64> {
    let blocks = DesignBlocks::build(dataset.x(), spec, centering)?;
    projection_gap_blocks(&blocks, set, active, f_values)
}
