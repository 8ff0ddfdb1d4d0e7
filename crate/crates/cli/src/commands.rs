use std::io::Write;

use serde_json::json;

use addsel::basis::{BasisSpec, Centering, DesignBlocks};
use addsel::config::ExperimentConfig;
use addsel::diagnostics::{
    check_cprime, corollary_conditions, estimate_event_e_failure, event_a_check,
    event_e_check_blocks, gaussian_design_blocks, rip_constant, selection_error_bound,
    subset_count_bound, BoundParams, ConditionParams, DiagnosticsReport,
};
use addsel::estimate::rate_experiment;
use addsel::geometry::{geometry_report, ric_chain_lower_bound, GeometryOptions, GeometryReport};
use addsel::rng::{derive_seed, label};
use addsel::selection::Dataset;
use addsel::simulate::{
    gen_design, gen_model, gen_response, resolve_level, run_trials, AdditiveModel,
};

use crate::Failure;

fn line(sink: &mut dyn Write, value: &impl serde::Serialize) -> Result<(), Failure> {
    writeln!(sink, "{}", serde_json::to_string(value)?)?;
    Ok(())
}

fn model_for(cfg: &ExperimentConfig) -> Result<Option<AdditiveModel>, Failure> {
    if cfg.s == 0 {
        return Ok(None);
    }
    let m = gen_model(
        cfg.q,
        cfg.s,
        cfg.alpha,
        cfg.k_bound,
        cfg.kappa1,
        cfg.tail_fraction,
        derive_seed(cfg.seed, &[label::MODEL]),
    )?;
    Ok(Some(m.with_sigma(cfg.sigma).with_law(&cfg.design)))
}

fn geometry_for(
    cfg: &ExperimentConfig,
    spec: &BasisSpec,
    model: Option<&AdditiveModel>,
) -> Result<GeometryReport, Failure> {
    Ok(geometry_report(
        spec,
        &cfg.design,
        model,
        cfg.qstar,
        &GeometryOptions {
            budget: cfg.budget,
            grid_size: cfg.grid,
        },
    )?)
}

pub fn geometry(cfg: &ExperimentConfig, sink: &mut dyn Write) -> Result<(), Failure> {
    let level = resolve_level(cfg)?;
    let spec = BasisSpec::uniform(cfg.q, level, true)?;
    let model = model_for(cfg)?;
    let report = geometry_for(cfg, &spec, model.as_ref())?;
    line(
        sink,
        &json!({
            "design": cfg.design.kind(),
            "level": level,
            "geometry": report,
            "ric_chain_lower_bound": ric_chain_lower_bound(report.rho_qstar, cfg.qstar),
        }),
    )
}

pub fn simulate(cfg: &ExperimentConfig, sink: &mut dyn Write) -> Result<(), Failure> {
    let mut io_error = None;
    let summary = run_trials(cfg, &mut |rec| {
        let res = serde_json::to_string(rec)
            .map_err(std::io::Error::other)
            .and_then(|s| writeln!(sink, "{s}"))
            .and_then(|_| sink.flush());
        if let Err(e) = res {
            io_error = Some(e);
            return Err(addsel::Error::domain("output write failed"));
        }
        Ok(())
    });
    if let Some(e) = io_error {
        return Err(Failure::Io(e));
    }
    line(sink, &summary?)
}

pub fn estimate(cfg: &ExperimentConfig, sink: &mut dyn Write) -> Result<(), Failure> {
    let report = rate_experiment(cfg, &cfg.n_grid, cfg.reps)?;
    line(sink, &json!({ "rate": report }))
}

pub fn diagnose(cfg: &ExperimentConfig, sink: &mut dyn Write) -> Result<(), Failure> {
    let active: Vec<usize> = (0..cfg.s).collect();
    let mut report = DiagnosticsReport {
        cprime_ok: check_cprime(cfg.delta, cfg.cprime),
        subset_count: Some(subset_count_bound(cfg.q, cfg.qstar)?),
        ..DiagnosticsReport::default()
    };
    if cfg.gaussian_design {
        let blocks = gaussian_design_blocks(cfg.n, cfg.q, cfg.seed)?;
        report.delta_qstar = Some(rip_constant(&blocks, cfg.qstar, &active, cfg.budget)?);
        let holds = event_e_check_blocks(&blocks, None, cfg.qstar, &active, cfg.delta, cfg.budget)?;
        report.event_e_holds.push((cfg.delta, holds));
        return line(
            sink,
            &json!({ "design": "gaussian", "diagnostics": report }),
        );
    }

    let level = resolve_level(cfg)?;
    let spec = BasisSpec::uniform(cfg.q, level, true)?;
    let model = model_for(cfg)?;
    let geo = geometry_for(cfg, &spec, model.as_ref())?;
    let d_l: Vec<usize> = (1..=cfg.q).map(|l| spec.d_l(l)).collect();
    let sigma2 = cfg.sigma * cfg.sigma;

    if let Some(model) = &model {
        let p_e = if cfg.mc_trials > 0 {
            Some(
                estimate_event_e_failure(
                    &cfg.design,
                    &spec,
                    cfg.n,
                    cfg.qstar,
                    &model.active,
                    cfg.delta,
                    cfg.mc_trials,
                    derive_seed(cfg.seed, &[label::DESIGN]),
                    cfg.budget,
                )?
                .0,
            )
        } else {
            None
        };
        let params = BoundParams {
            n: cfg.n,
            sigma2,
            rho: geo.rho_qstar,
            kappa_l: geo.kappa_l.clone(),
            d_l: d_l.clone(),
            s: model.s(),
            qstar: cfg.qstar,
            q: cfg.q,
            delta: cfg.delta,
            cprime: cfg.cprime,
            p_event_e_complement: p_e,
            include_truncation: cfg.tail_fraction > 0.0,
        };
        report.bound_terms = selection_error_bound(&params)
            .map_err(|e| log::warn!("bound skipped: {e}"))
            .ok();
        report.conditions = Some(corollary_conditions(&ConditionParams {
            n: cfg.n,
            q: cfg.q,
            s: model.s(),
            qstar: cfg.qstar,
            sigma2,
            rho: geo.rho_qstar,
            kappa: geo.kappa.unwrap_or(0.0),
            kappa_l: geo.kappa_l.clone(),
            d_l,
            eps_s: geo.eps_2qstar,
            alpha: cfg.alpha,
            c3: cfg.c3,
            parametric: cfg.tail_fraction == 0.0,
        })?);

        if cfg.diagnostics {
            let seed = derive_seed(cfg.seed, &[0]);
            let x = gen_design(&cfg.design, cfg.n, cfg.q, seed)?;
            let y = gen_response(model, &x, seed)?;
            let data = Dataset::new(x, y)?;
            let blocks =
                DesignBlocks::build(data.x(), &spec, &Centering::population(&spec, &cfg.design)?)?;
            let population = cfg.design.block_gram(&spec)?;
            report.delta_qstar = Some(rip_constant(&blocks, cfg.qstar, &model.active, cfg.budget)?);
            let holds = event_e_check_blocks(
                &blocks,
                Some(&population),
                cfg.qstar,
                &model.active,
                cfg.delta,
                cfg.budget,
            )?;
            report.event_e_holds.push((cfg.delta, holds));
            report.event_a = Some(event_a_check(
                &data,
                model,
                &spec,
                &cfg.design,
                &geo,
                cfg.cprime,
            )?);
        }
    }
    line(
        sink,
        &json!({
            "design": cfg.design.kind(),
            "level": level,
            "geometry": geo,
            "diagnostics": report,
        }),
    )
}
