//! Distributions of the covariate vector X on [0,1]^q and the population
//! inner products they induce on the trigonometric spaces.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;

use crate::basis::{phi, BasisSpec, BlockGram, TrigSeries};
use crate::error::{Error, Result};

/// Number of midpoint-rule nodes per covariate for population integrals.
pub const MIDPOINT_NODES: usize = 2048;

/// Tolerance on the total mass of a user-supplied density.
pub const DENSITY_MASS_TOL: f64 = 1e-6;

/// Standard normal distribution function.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

#[derive(Clone)]
pub struct DensityFn(pub Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl fmt::Debug for DensityFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("DensityFn(..)")
    }
}

/// A marginal density on [0,1].
#[derive(Debug, Clone)]
pub enum MarginalDensity {
    Uniform,
    /// Piecewise-constant heights on equal-width bins of [0,1].
    Table(Vec<f64>),
    Function(DensityFn),
}

impl MarginalDensity {
    pub fn function(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        MarginalDensity::Function(DensityFn(Arc::new(f)))
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            MarginalDensity::Uniform => 1.0,
            MarginalDensity::Table(h) => {
                let b = ((x * h.len() as f64).floor() as usize).min(h.len() - 1);
                h[b]
            }
            MarginalDensity::Function(f) => (f.0)(x),
        }
    }

    fn is_uniform(&self) -> bool {
        matches!(self, MarginalDensity::Uniform)
    }

    /// Midpoint nodes and density-weighted quadrature weights.
    pub fn nodes(&self) -> (Vec<f64>, Vec<f64>) {
        let n = MIDPOINT_NODES;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let ws = xs.iter().map(|&x| self.value(x) / n as f64).collect();
        (xs, ws)
    }

    pub fn validate(&self) -> Result<()> {
        if let MarginalDensity::Table(h) = self {
            if h.is_empty() {
                return Err(Error::validation("empty density table"));
            }
        }
        let (xs, ws) = self.nodes();
        if xs
            .iter()
            .any(|&x| self.value(x) < 0.0 || !self.value(x).is_finite())
        {
            return Err(Error::validation("density must be finite and nonnegative"));
        }
        let mass: f64 = ws.iter().sum();
        if (mass - 1.0).abs() > DENSITY_MASS_TOL {
            return Err(Error::validation(format!(
                "density integrates to {mass:.9}, not 1"
            )));
        }
        Ok(())
    }

    /// Largest c with c ≤ p ≤ 1/c on the quadrature nodes.
    pub fn bound(&self) -> f64 {
        if self.is_uniform() {
            return 1.0;
        }
        let (xs, _) = self.nodes();
        let (lo, hi) = xs.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), &x| {
            let p = self.value(x);
            (lo.min(p), hi.max(p))
        });
        lo.min(1.0 / hi)
    }

    /// E_p[φ_k] for k = 1..=m.
    pub fn basis_means(&self, m: usize) -> Vec<f64> {
        if self.is_uniform() {
            let mut v = vec![0.0; m];
            v[0] = 1.0;
            return v;
        }
        let (xs, ws) = self.nodes();
        (1..=m)
            .map(|k| xs.iter().zip(&ws).map(|(&x, &w)| w * phi(k, x)).sum())
            .collect()
    }

    /// E_p[f].
    pub fn mean(&self, f: &TrigSeries) -> f64 {
        if self.is_uniform() {
            return f.coeffs.first().copied().unwrap_or(0.0);
        }
        let (xs, ws) = self.nodes();
        xs.iter().zip(&ws).map(|(&x, &w)| w * f.eval(x)).sum()
    }

    /// Inverse distribution function by piecewise-linear interpolation of
    /// the CDF on equal bins.
    fn inverse_cdf(&self, heights: &[f64], u: f64) -> f64 {
        let b = heights.len();
        let width = 1.0 / b as f64;
        let mut acc = 0.0;
        for (i, &h) in heights.iter().enumerate() {
            let mass = h * width;
            if acc + mass >= u && mass > 0.0 {
                return ((i as f64) + (u - acc) / mass) * width;
            }
            acc += mass;
        }
        1.0 - f64::EPSILON
    }

    fn table_for_sampling(&self) -> Vec<f64> {
        match self {
            MarginalDensity::Uniform => vec![1.0],
            MarginalDensity::Table(h) => {
                let mass: f64 = h.iter().sum::<f64>() / h.len() as f64;
                h.iter().map(|v| v / mass).collect()
            }
            MarginalDensity::Function(_) => {
                let (xs, ws) = self.nodes();
                let mass: f64 = ws.iter().sum();
                xs.iter().map(|&x| self.value(x) / mass).collect()
            }
        }
    }
}

/// Joint law of the covariates.
#[derive(Debug, Clone)]
pub enum DesignLaw {
    IndependentUniform,
    /// Gaussian copula with equicorrelation `r` and uniform marginals.
    GaussianCopula {
        r: f64,
    },
    /// Independent covariates with the given marginals; a single entry is
    /// shared by every covariate.
    CustomDensity {
        marginals: Vec<MarginalDensity>,
    },
}

impl DesignLaw {
    pub fn kind(&self) -> &'static str {
        match self {
            DesignLaw::IndependentUniform => "independent-uniform",
            DesignLaw::GaussianCopula { .. } => "gaussian-copula",
            DesignLaw::CustomDensity { .. } => "custom-density",
        }
    }

    pub fn is_independent(&self) -> bool {
        match self {
            DesignLaw::GaussianCopula { r } => *r == 0.0,
            _ => true,
        }
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        match self {
            DesignLaw::IndependentUniform => Ok(()),
            DesignLaw::GaussianCopula { r } => {
                if !r.is_finite() || r.abs() >= 1.0 {
                    return Err(Error::validation(format!(
                        "copula correlation {r} must satisfy |r| < 1"
                    )));
                }
                if q > 1 && *r <= -1.0 / (q as f64 - 1.0) {
                    return Err(Error::validation(format!(
                        "equicorrelation {r} is not positive definite for q = {q}"
                    )));
                }
                Ok(())
            }
            DesignLaw::CustomDensity { marginals } => {
                if marginals.len() != 1 && marginals.len() != q {
                    return Err(Error::Dimension {
                        expected: q,
                        got: marginals.len(),
                    });
                }
                marginals.iter().try_for_each(MarginalDensity::validate)
            }
        }
    }

    pub fn marginal(&self, j: usize) -> MarginalDensity {
        match self {
            DesignLaw::CustomDensity { marginals } => {
                marginals[if marginals.len() == 1 { 0 } else { j }].clone()
            }
            _ => MarginalDensity::Uniform,
        }
    }

    /// The constant c of c ≤ p_j ≤ 1/c over the first `q` marginals.
    pub fn density_bound(&self, q: usize) -> f64 {
        (0..q.max(1))
            .map(|j| self.marginal(j).bound())
            .fold(f64::INFINITY, f64::min)
    }

    /// E[φ_k(X_j)], k = 1..=m.
    pub fn basis_means(&self, j: usize, m: usize) -> Result<Vec<f64>> {
        if m == 0 {
            return Err(Error::domain("level must be at least 1"));
        }
        Ok(self.marginal(j).basis_means(m))
    }

    /// Population Gram matrix of the concatenated bases of V_1..V_q.
    ///
    /// Centered spaces use the population-centered functions φ_k − E[φ_k].
    pub fn block_gram(&self, spec: &BasisSpec) -> Result<BlockGram> {
        let q = spec.q();
        self.validate(q)?;
        let dims: Vec<usize> = (0..q).map(|j| spec.dim(j)).collect();
        let offsets = spec.offsets();
        let total = offsets[q];
        let mut g = DMatrix::zeros(total, total);
        let means: Vec<Vec<f64>> = (0..q)
            .map(|j| self.basis_means(j, spec.level(j)))
            .collect::<Result<_>>()?;
        let shift = |j: usize, k: usize| {
            if spec.is_centered(j) {
                means[j][k - 1]
            } else {
                0.0
            }
        };

        // Diagonal blocks: marginal second moments.
        for j in 0..q {
            let marginal = self.marginal(j);
            let idx: Vec<usize> = spec.indices(j).collect();
            if marginal.is_uniform() {
                for (a, &k) in idx.iter().enumerate() {
                    for (b, &l) in idx.iter().enumerate() {
                        let raw = if k == l { 1.0 } else { 0.0 };
                        let centred = if spec.is_centered(j) {
                            raw - means[j][k - 1] * means[j][l - 1]
                        } else {
                            raw
                        };
                        g[(offsets[j] + a, offsets[j] + b)] = centred;
                    }
                }
            } else {
                let (xs, ws) = marginal.nodes();
                for (a, &k) in idx.iter().enumerate() {
                    for (b, &l) in idx.iter().enumerate().skip(a) {
                        let sk = shift(j, k);
                        let sl = shift(j, l);
                        let v: f64 = xs
                            .iter()
                            .zip(&ws)
                            .map(|(&x, &w)| w * (phi(k, x) - sk) * (phi(l, x) - sl))
                            .sum();
                        g[(offsets[j] + a, offsets[j] + b)] = v;
                        g[(offsets[j] + b, offsets[j] + a)] = v;
                    }
                }
            }
        }

        // Off-diagonal blocks.
        match self {
            DesignLaw::GaussianCopula { r } if *r != 0.0 && q > 1 => {
                let quad = CopulaQuadrature::new(*r, spec.max_level());
                let kmax = spec.max_level();
                let vals = quad.basis_values(kmax);
                let cross = quad.bilinear_matrix(&vals, &vals);
                for i in 0..q {
                    for j in 0..q {
                        if i == j {
                            continue;
                        }
                        for (a, k) in spec.indices(i).enumerate() {
                            for (b, l) in spec.indices(j).enumerate() {
                                // φ₁ ≡ 1 and uniform marginals give exact values
                                let raw = if k == 1 || l == 1 {
                                    if k == l {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                } else {
                                    cross[(k - 1, l - 1)]
                                };
                                g[(offsets[i] + a, offsets[j] + b)] = raw;
                            }
                        }
                    }
                }
            }
            _ => {
                for i in 0..q {
                    for j in 0..q {
                        if i == j {
                            continue;
                        }
                        for (a, k) in spec.indices(i).enumerate() {
                            for (b, l) in spec.indices(j).enumerate() {
                                let mk = means[i][k - 1] - shift(i, k);
                                let ml = means[j][l - 1] - shift(j, l);
                                g[(offsets[i] + a, offsets[j] + b)] = mk * ml;
                            }
                        }
                    }
                }
            }
        }
        BlockGram::new(g, &dims)
    }

    /// E[f(X_j)] for a component on covariate j.
    pub fn component_mean(&self, j: usize, f: &TrigSeries) -> f64 {
        self.marginal(j).mean(f)
    }

    /// Gram matrix of centered component functions, entry (a, b) equal to
    /// E[(f_a − E f_a)(X_{j_a}) (f_b − E f_b)(X_{j_b})].
    pub fn function_gram(&self, comps: &[(usize, &TrigSeries)]) -> Result<DMatrix<f64>> {
        let s = comps.len();
        let mut g = DMatrix::zeros(s, s);
        let means: Vec<f64> = comps
            .iter()
            .map(|(j, f)| self.component_mean(*j, f))
            .collect();
        for a in 0..s {
            let (ja, fa) = comps[a];
            let marginal = self.marginal(ja);
            let v = if marginal.is_uniform() {
                fa.coeffs.iter().skip(1).map(|c| c * c).sum()
            } else {
                let (xs, ws) = marginal.nodes();
                xs.iter()
                    .zip(&ws)
                    .map(|(&x, &w)| w * (fa.eval(x) - means[a]).powi(2))
                    .sum()
            };
            g[(a, a)] = v;
        }
        if let DesignLaw::GaussianCopula { r } = self {
            if *r != 0.0 && s > 1 {
                let kmax = comps.iter().map(|(_, f)| f.support()).max().unwrap_or(1);
                let quad = CopulaQuadrature::new(*r, kmax.max(1));
                let vals: Vec<Vec<f64>> = comps
                    .iter()
                    .zip(&means)
                    .map(|((_, f), &mu)| quad.u.iter().map(|&u| f.eval(u) - mu).collect())
                    .collect();
                for a in 0..s {
                    for b in (a + 1)..s {
                        if comps[a].0 == comps[b].0 {
                            continue;
                        }
                        let v = quad.bilinear(&vals[a], &vals[b]);
                        g[(a, b)] = v;
                        g[(b, a)] = v;
                    }
                }
            }
        }
        // Components on the same covariate share the marginal.
        for a in 0..s {
            for b in (a + 1)..s {
                if comps[a].0 == comps[b].0 {
                    let marginal = self.marginal(comps[a].0);
                    let (xs, ws) = marginal.nodes();
                    let v: f64 = xs
                        .iter()
                        .zip(&ws)
                        .map(|(&x, &w)| {
                            w * (comps[a].1.eval(x) - means[a]) * (comps[b].1.eval(x) - means[b])
                        })
                        .sum();
                    g[(a, b)] = v;
                    g[(b, a)] = v;
                }
            }
        }
        Ok(g)
    }

    /// Draws n i.i.d. rows.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, q: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        if n == 0 || q == 0 {
            return Err(Error::domain("n and q must be positive"));
        }
        self.validate(q)?;
        let mut x = DMatrix::zeros(n, q);
        match self {
            DesignLaw::IndependentUniform => {
                for i in 0..n {
                    for j in 0..q {
                        x[(i, j)] = rng.random::<f64>();
                    }
                }
            }
            DesignLaw::GaussianCopula { r } => {
                let r = *r;
                if r >= 0.0 {
                    let (a, b) = (r.sqrt(), (1.0 - r).sqrt());
                    for i in 0..n {
                        let common: f64 = rng.sample(StandardNormal);
                        for j in 0..q {
                            let e: f64 = rng.sample(StandardNormal);
                            x[(i, j)] = std_normal_cdf(a * common + b * e);
                        }
                    }
                } else {
                    let sigma = DMatrix::from_fn(q, q, |i, j| if i == j { 1.0 } else { r });
                    let chol = sigma.cholesky().ok_or_else(|| {
                        Error::validation("copula correlation not positive definite")
                    })?;
                    let l = chol.l();
                    for i in 0..n {
                        let e = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
                        let z = &l * e;
                        for j in 0..q {
                            x[(i, j)] = std_normal_cdf(z[j]);
                        }
                    }
                }
            }
            DesignLaw::CustomDensity { .. } => {
                let tables: Vec<Vec<f64>> = (0..q)
                    .map(|j| self.marginal(j).table_for_sampling())
                    .collect();
                for i in 0..n {
                    for j in 0..q {
                        let u: f64 = rng.random();
                        x[(i, j)] = self.marginal(j).inverse_cdf(&tables[j], u).clamp(0.0, 1.0);
                    }
                }
            }
        }
        Ok(x)
    }
}

/// Tensor trapezoid rule for E[g(U₁)h(U₂)] under a bivariate Gaussian copula,
/// carried out in the Gaussian coordinates z = Φ⁻¹(u).
pub(crate) struct CopulaQuadrature {
    r: f64,
    z: Vec<f64>,
    pub(crate) u: Vec<f64>,
    scale: f64,
}

impl CopulaQuadrature {
    const HALF_WIDTH: f64 = 8.5;

    pub(crate) fn new(r: f64, max_index: usize) -> Self {
        let kmax = (max_index / 2).max(1) as f64;
        // resolve the fastest oscillation of φ_k(Φ(z)) and the ridge width
        let omega = 2.0 * PI * kmax * 0.398_942_280_401_432_7;
        let h = 0.02_f64.min(0.25 / omega).min((1.0 - r * r).sqrt() / 8.0);
        let count = (2.0 * Self::HALF_WIDTH / h).ceil() as usize + 1;
        let h = 2.0 * Self::HALF_WIDTH / (count - 1) as f64;
        let z: Vec<f64> = (0..count)
            .map(|i| -Self::HALF_WIDTH + i as f64 * h)
            .collect();
        let u = z.iter().map(|&v| std_normal_cdf(v)).collect();
        let scale = h * h / (2.0 * PI * (1.0 - r * r).sqrt());
        CopulaQuadrature { r, z, u, scale }
    }

    fn weight_row(&self, a: usize, row: &mut [f64]) {
        let denom = 2.0 * (1.0 - self.r * self.r);
        let za = self.z[a];
        for (b, w) in row.iter_mut().enumerate() {
            let zb = self.z[b];
            let e = -(za * za + zb * zb - 2.0 * self.r * za * zb) / denom;
            *w = if e < -745.0 {
                0.0
            } else {
                self.scale * e.exp()
            };
        }
    }

    /// Basis values φ_k(u_a), one column per k = 1..=m.
    pub(crate) fn basis_values(&self, m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.u.len(), m, |a, k| phi(k + 1, self.u[a]))
    }

    pub(crate) fn bilinear(&self, f: &[f64], g: &[f64]) -> f64 {
        let mut row = vec![0.0; self.z.len()];
        let mut total = 0.0;
        for (a, &fa) in f.iter().enumerate() {
            if fa == 0.0 {
                continue;
            }
            self.weight_row(a, &mut row);
            total += fa * row.iter().zip(g).map(|(w, gb)| w * gb).sum::<f64>();
        }
        total
    }

    pub(crate) fn bilinear_matrix(&self, f: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
        let nodes = self.z.len();
        let mut row = vec![0.0; nodes];
        let mut out = DMatrix::zeros(f.ncols(), g.ncols());
        let mut t = vec![0.0; g.ncols()];
        for a in 0..nodes {
            self.weight_row(a, &mut row);
            for (l, tl) in t.iter_mut().enumerate() {
                let col = g.column(l);
                *tl = row.iter().zip(col.iter()).map(|(w, v)| w * v).sum();
            }
            for k in 0..f.ncols() {
                let fk = f[(a, k)];
                for (l, tl) in t.iter().enumerate() {
                    out[(k, l)] += fk * tl;
                }
            }
        }
        out
    }
}
