//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be
//! known; list values are comma separated.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::law::{DesignLaw, MarginalDensity};
use crate::selection::SearchMode;
use crate::subsets::DEFAULT_BUDGET;

/// How truncation levels are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MRule {
    /// The same level m for every covariate.
    Fixed(usize),
    /// Smallest level satisfying the truncation condition.
    #[serde(rename = "eq7")]
    SampleSize,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub n: usize,
    pub q: usize,
    pub s: usize,
    pub qstar: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub k_bound: f64,
    pub kappa1: f64,
    pub design: DesignLaw,
    pub m_rule: MRule,
    pub cprime: f64,
    pub delta: f64,
    pub trials: usize,
    pub seed: u64,
    pub threads: Option<usize>,
    pub tail_fraction: f64,
    pub search: SearchMode,
    pub diagnostics: bool,
    pub budget: u128,
    /// Truncation constant C_j; defaults to π^{-2α}/c.
    pub cj: Option<f64>,
    /// Level at which ρ and ε' are evaluated for the truncation rule under
    /// dependent designs.
    pub m_geom: usize,
    pub target: Option<usize>,
    pub m_target: Option<usize>,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub c3: f64,
    /// Grid size for the sup-norm ratio in geometry reports.
    pub grid: Option<usize>,
    /// Monte Carlo trials for P(ℰᶜ) in diagnostics (0 skips it).
    pub mc_trials: usize,
    /// Diagnose a Gaussian design N(0, 1/n) with one column per covariate.
    pub gaussian_design: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: 200,
            q: 8,
            s: 2,
            qstar: 2,
            sigma: 0.5,
            alpha: 2.0,
            k_bound: 100.0,
            kappa1: 1.0,
            design: DesignLaw::IndependentUniform,
            m_rule: MRule::Fixed(5),
            cprime: 0.001,
            delta: 0.5,
            trials: 100,
            seed: 0,
            threads: None,
            tail_fraction: 0.0,
            search: SearchMode::Exhaustive,
            diagnostics: false,
            budget: DEFAULT_BUDGET,
            cj: None,
            m_geom: 9,
            target: None,
            m_target: None,
            n_grid: vec![512, 1024, 2048, 4096, 8192],
            reps: 20,
            c3: 1.0,
            grid: None,
            mc_trials: 0,
            gaussian_design: false,
        }
    }
}

pub const KNOWN_KEYS: &[&str] = &[
    "n",
    "q",
    "s",
    "qstar",
    "sigma",
    "alpha",
    "K",
    "kappa1",
    "design.kind",
    "design.r",
    "design.density",
    "m_rule",
    "cprime",
    "delta",
    "trials",
    "seed",
    "threads",
    "tail_fraction",
    "search",
    "diagnostics",
    "budget",
    "cj",
    "m_geom",
    "target",
    "m_target",
    "n_grid",
    "reps",
    "c3",
    "grid",
    "mc_trials",
    "gaussian_design",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(key, format!("expected a boolean, got `{v}`"))),
    }
}

fn optional<T: std::str::FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v == "auto" || v == "none" {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = BTreeSet::new();
        let mut kind = "independent-uniform".to_string();
        let mut r = None;
        let mut density = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(line, format!("line {} is not key=value", lineno + 1))
            })?;
            let (key, v) = (key.trim(), value.trim());
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::config(key, "unknown key"));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, "duplicate key"));
            }
            match key {
                "n" => cfg.n = num(key, v)?,
                "q" => cfg.q = num(key, v)?,
                "s" => cfg.s = num(key, v)?,
                "qstar" => cfg.qstar = num(key, v)?,
                "sigma" => cfg.sigma = num(key, v)?,
                "alpha" => cfg.alpha = num(key, v)?,
                "K" => cfg.k_bound = num(key, v)?,
                "kappa1" => cfg.kappa1 = num(key, v)?,
                "design.kind" => kind = v.to_string(),
                "design.r" => r = Some(num::<f64>(key, v)?),
                "design.density" => density = Some(list::<f64>(key, v)?),
                "m_rule" => {
                    cfg.m_rule = if v == "eq7" {
                        MRule::SampleSize
                    } else if let Some(m) = v.strip_prefix("fixed:") {
                        MRule::Fixed(num(key, m)?)
                    } else {
                        return Err(Error::config(
                            key,
                            format!("expected fixed:<int> or eq7, got `{v}`"),
                        ));
                    }
                }
                "cprime" => cfg.cprime = num(key, v)?,
                "delta" => cfg.delta = num(key, v)?,
                "trials" => cfg.trials = num(key, v)?,
                "seed" => cfg.seed = num(key, v)?,
                "threads" => cfg.threads = optional(key, v)?,
                "tail_fraction" => cfg.tail_fraction = num(key, v)?,
                "search" => {
                    cfg.search = match v {
                        "exhaustive" => SearchMode::Exhaustive,
                        "greedy" => SearchMode::Greedy,
                        _ => return Err(Error::config(key, format!("unknown search `{v}`"))),
                    }
                }
                "diagnostics" => cfg.diagnostics = flag(key, v)?,
                "budget" => cfg.budget = num(key, v)?,
                "cj" => cfg.cj = optional(key, v)?,
                "m_geom" => cfg.m_geom = num(key, v)?,
                "target" => cfg.target = optional(key, v)?,
                "m_target" => cfg.m_target = optional(key, v)?,
                "n_grid" => cfg.n_grid = list(key, v)?,
                "reps" => cfg.reps = num(key, v)?,
                "c3" => cfg.c3 = num(key, v)?,
                "grid" => cfg.grid = optional(key, v)?,
                "mc_trials" => cfg.mc_trials = num(key, v)?,
                "gaussian_design" => cfg.gaussian_design = flag(key, v)?,
                _ => unreachable!("key list and match arms agree"),
            }
        }
        cfg.design = match kind.as_str() {
            "independent-uniform" => DesignLaw::IndependentUniform,
            "gaussian-copula" => DesignLaw::GaussianCopula {
                r: r.ok_or_else(|| Error::config("design.r", "required for gaussian-copula"))?,
            },
            "custom-density" => DesignLaw::CustomDensity {
                marginals: vec![MarginalDensity::Table(density.ok_or_else(|| {
                    Error::config("design.density", "required for custom-density")
                })?)],
            },
            other => {
                return Err(Error::config(
                    "design.kind",
                    format!("unknown design `{other}`"),
                ))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, m: &str| Err(Error::config(k, m));
        if self.q == 0 {
            return bad("q", "must be positive");
        }
        if self.s > self.q {
            return bad("s", "must not exceed q");
        }
        if self.qstar == 0 || self.qstar > self.q {
            return bad("qstar", "must lie in 1..=q");
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return bad("sigma", "must be finite and nonnegative");
        }
        if !(self.alpha > 0.5) {
            return bad("alpha", "must exceed 1/2");
        }
        if !(self.k_bound > 0.0) {
            return bad("K", "must be positive");
        }
        if !(self.kappa1 > 0.0) {
            return bad("kappa1", "must be positive");
        }
        if !(0.0..1.0).contains(&self.tail_fraction) {
            return bad("tail_fraction", "must lie in [0, 1)");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta", "must lie in (0, 1)");
        }
        if !(self.cprime > 0.0 && self.cprime < 1.0) {
            return bad("cprime", "must lie in (0, 1)");
        }
        if let MRule::Fixed(m) = self.m_rule {
            if m < 2 {
                return bad("m_rule", "fixed level must be at least 2");
            }
        }
        if let Some(t) = self.target {
            if t >= self.q {
                return bad("target", "must be a covariate index below q");
            }
        }
        if self.threads == Some(0) {
            return bad("threads", "must be positive");
        }
        if let Err(e) = self.design.validate(self.q) {
            return Err(Error::config("design.kind", e.to_string()));
        }
        Ok(())
    }
}
