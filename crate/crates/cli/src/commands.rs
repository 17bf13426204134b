//! Command orchestration and report emission.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};
use sns_core::bounds::{
    constant_c1, constant_c2, constants_table, hypothesis_report, BoundConstants, C2Certificate, HypothesisReport,
};
use sns_core::coupling::Coupler;
use sns_core::estimators::{DecayReport, DistanceRow, Estimators, GradientRow, MlhReport};
use sns_core::{BilinearWorkspace, FourierField, Simulator};

use crate::config::{ExperimentConfig, Resolved};
use crate::error::{CliError, Result};
use crate::identities::{run_identity_suite, SuiteConstants};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    VerifyIdentities,
    VerifyMoments,
    VerifyMlh,
    AsfProbe,
    Simulate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::VerifyIdentities => "verify-identities",
            Command::VerifyMoments => "verify-moments",
            Command::VerifyMlh => "verify-mlh",
            Command::AsfProbe => "asf-probe",
            Command::Simulate => "simulate",
        }
    }
}

/// Outcome of a command; the exit code follows from it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Violation,
    HypothesisFailure,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Pass => 0,
            Status::Violation => 1,
            Status::HypothesisFailure => 2,
        }
    }

    fn from_pass(pass: bool) -> Self {
        if pass {
            Status::Pass
        } else {
            Status::Violation
        }
    }
}

/// Exit code of a runtime error.
pub const RUNTIME_ERROR: u8 = 3;

/// Maps an error to its exit code: a failed hypothesis inside an estimator is 2.
pub fn error_exit_code(e: &CliError) -> u8 {
    match e {
        CliError::Core(sns_core::Error::Hypothesis { .. }) => Status::HypothesisFailure.exit_code(),
        _ => RUNTIME_ERROR,
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub status: Status,
    /// The deterministic report written to `report.json`.
    pub report: Value,
}

struct Context {
    cfg: ExperimentConfig,
    base: PathBuf,
    r: Resolved,
    sim: Arc<Simulator>,
    consts: BoundConstants,
    c2: C2Certificate,
    hypotheses: HypothesisReport,
}

impl Context {
    fn new(cfg: &ExperimentConfig, base: &Path) -> Result<Self> {
        let r = cfg.resolve(base)?;
        let ws = Arc::new(BilinearWorkspace::new(&r.grid));
        let sim = Arc::new(Simulator::new(ws, r.params.clone(), r.noise.clone(), cfg.integrator.dt)?);
        let c2 = constant_c2(&r.grid)?;
        let consts = BoundConstants::new(&r.params, &r.noise, constant_c1(&r.grid), c2.value);
        let hypotheses = hypothesis_report(&consts, &cfg.estimators.p_list);
        Ok(Self {
            cfg: cfg.clone(),
            base: base.to_path_buf(),
            r,
            sim,
            consts,
            c2,
            hypotheses,
        })
    }

    fn estimators(&self, n_paths: usize) -> Result<Estimators> {
        Ok(Estimators::new(self.sim.clone(), self.consts.clone(), n_paths, self.cfg.seed)?
            .with_drift(self.cfg.integrator.drift))
    }

    fn y_at(&self, z: f64) -> FourierField {
        &self.r.x0 + &(&self.r.z_direction * z)
    }

    fn constants(&self) -> Value {
        let z = (&self.r.y0 - &self.r.x0).norm();
        json!({
            "operating_point": { "y_norm": self.r.y0.norm(), "z_norm": z },
            "table": constants_table(&self.consts, self.r.y0.norm(), z),
            "bound_constants": self.consts,
            "c2_certificate": self.c2,
        })
    }

    /// Names of the failing hypotheses among `names` (prefix match).
    fn failing(&self, prefixes: &[&str]) -> Vec<String> {
        self.hypotheses
            .failures()
            .filter(|c| prefixes.iter().any(|p| c.name.starts_with(p)))
            .map(|c| c.name.clone())
            .collect()
    }
}

fn refused(names: Vec<String>) -> (Status, Value) {
    (Status::HypothesisFailure, json!({ "refused": names }))
}

fn csv_writer(out: &Path, name: &str) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(out.join(name))?)
}

fn identities(ctx: &Context) -> Result<(Status, Value)> {
    let consts = SuiteConstants {
        c1: ctx.consts.c1,
        c2: ctx.consts.c2,
    };
    let rep = run_identity_suite(&ctx.r.grid, &ctx.cfg.identities, consts, ctx.cfg.seed)?;
    Ok((Status::from_pass(rep.pass), serde_json::to_value(&rep)?))
}

fn decay_csv(out: &Path, reps: &[DecayReport]) -> Result<()> {
    let mut w = csv_writer(out, "zh_decay.csv")?;
    w.write_record(["p", "t", "moment", "stderr", "envelope", "pass"])?;
    for r in reps {
        for row in &r.rows {
            w.write_record([
                r.p.to_string(),
                format!("{}", row.t),
                format!("{:e}", row.moment.mean),
                format!("{:e}", row.moment.stderr),
                format!("{:e}", row.envelope),
                row.pass.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn moments(ctx: &Context, out: &Path) -> Result<(Status, Value)> {
    let flags = &ctx.cfg.experiments;
    let mut gates = Vec::new();
    if flags.exp_moment {
        gates.push("exp_moment");
    }
    if flags.zh_decay {
        gates.push("zh_decay");
    }
    let failing = ctx.failing(&gates);
    if !failing.is_empty() {
        return Ok(refused(failing));
    }
    let est = ctx.estimators(ctx.cfg.estimators.n_paths)?;
    let mut pass = true;
    let mut res = serde_json::Map::new();
    if flags.exp_moment {
        let e = est.exp_moment_check(&ctx.r.x0, ctx.cfg.integrator.t_end)?;
        pass &= e.report.pass;
        res.insert("exp_moment".into(), serde_json::to_value(&e)?);
    }
    if flags.zh_decay {
        let d = est.zh_moment_decay(&ctx.cfg.estimators.p_list, &ctx.r.x0, &ctx.r.y0, &ctx.cfg.estimators.t_grid)?;
        pass &= d.iter().all(|r| r.all_pass && r.fitted_rate.is_none_or(|k| k < 0.0));
        decay_csv(out, &d)?;
        res.insert("zh_decay".into(), serde_json::to_value(&d)?);
    }
    Ok((Status::from_pass(pass), Value::Object(res)))
}

fn mlh_csv(out: &Path, cells: &[MlhReport]) -> Result<()> {
    let mut w = csv_writer(out, "mlh.csv")?;
    w.write_record([
        "z_norm", "t", "test_function", "lhs", "lhs_stderr", "log_ptf_x", "entropy_term", "shift_term", "rhs", "sigma",
        "pass", "forced_rhs", "forced_pass", "effective_samples",
    ])?;
    for c in cells {
        w.write_record([
            format!("{}", c.z_norm),
            format!("{}", c.t),
            c.test_function.to_string(),
            format!("{:e}", c.report.lhs.mean),
            format!("{:e}", c.report.lhs.stderr),
            format!("{:e}", c.rhs_parts.log_ptf_x),
            format!("{:e}", c.rhs_parts.entropy_term),
            format!("{:e}", c.rhs_parts.shift_term),
            format!("{:e}", c.report.rhs),
            format!("{:e}", c.report.sigma),
            c.report.pass.to_string(),
            format!("{:e}", c.forced_rhs),
            c.forced_pass.to_string(),
            format!("{:.1}", c.effective_samples),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn gradient_csv(out: &Path, rows: &[(usize, GradientRow)]) -> Result<()> {
    let mut w = csv_writer(out, "gradient.csv")?;
    w.write_record(["test_function", "direction", "eps", "t", "quotient", "stderr", "envelope", "pass"])?;
    for (f, r) in rows {
        w.write_record([
            f.to_string(),
            r.direction.to_string(),
            format!("{:e}", r.eps),
            format!("{}", r.t),
            format!("{:e}", r.quotient.mean),
            format!("{:e}", r.quotient.stderr),
            format!("{:e}", r.envelope),
            r.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn mlh(ctx: &Context, out: &Path) -> Result<(Status, Value)> {
    if !ctx.hypotheses.all_pass {
        return Ok(refused(ctx.failing(&[""])));
    }
    let cfg = &ctx.cfg;
    let fs = cfg.test_functions(&ctx.r, &ctx.base)?;
    let forced = cfg.estimators.forced_failure;
    let est = ctx.estimators(cfg.estimators.n_paths)?;
    let mut pass = true;
    let mut scans = Vec::new();
    let mut flat = Vec::new();
    for &z in &cfg.estimators.z_norms {
        let y0 = ctx.y_at(z);
        let mut m = if cfg.experiments.mlh {
            est.mlh_matrix(&fs, &ctx.r.x0, &y0, &cfg.estimators.times)?
        } else {
            Default::default()
        };
        if !cfg.experiments.entropy {
            m.entropy.clear();
        }
        for c in &m.cells {
            pass &= if forced { c.forced_pass } else { c.report.pass };
            flat.push(c.clone());
        }
        // the bound gates; the agreement of the two entropy forms is diagnostic only
        pass &= m.entropy.iter().all(|e| e.bound.as_ref().is_none_or(|b| b.pass));
        scans.push(json!({ "z_norm": z, "cells": m.cells, "entropy": m.entropy }));
    }
    if cfg.experiments.mlh {
        mlh_csv(out, &flat)?;
    }

    let mut grad = Vec::new();
    if cfg.gradient.enabled {
        let g = ctx.estimators(cfg.gradient.n_paths)?;
        let dirs = cfg
            .gradient
            .directions
            .iter()
            .map(|d| d.resolve(&ctx.r.grid, &ctx.base))
            .collect::<Result<Vec<_>>>()?;
        for (i, f) in fs.iter().enumerate() {
            for row in g.gradient_probe(f, &ctx.r.x0, &dirs, &cfg.gradient.times, &cfg.gradient.eps_list)? {
                pass &= row.pass;
                grad.push((i, row));
            }
        }
        gradient_csv(out, &grad)?;
    }
    let res = json!({
        "forced_failure": forced,
        "test_functions": fs.iter().map(|f| f.describe()).collect::<Vec<_>>(),
        "scans": scans,
        "gradient": grad.iter().map(|(i, r)| json!({ "test_function": i, "row": r })).collect::<Vec<_>>(),
    });
    Ok((Status::from_pass(pass), res))
}

/// Upper bounds of one `(gamma, |x - y|)` series, in time order, are nonincreasing.
pub fn upper_monotone(rows: &[DistanceRow]) -> bool {
    rows.windows(2).all(|w| w[1].upper.mean <= w[0].upper.mean)
}

fn asf(ctx: &Context, out: &Path) -> Result<(Status, Value)> {
    let cfg = &ctx.cfg;
    let est = ctx.estimators(cfg.estimators.n_paths)?;
    let mut times = cfg.estimators.times.clone();
    times.sort_by(f64::total_cmp);
    let mut w = csv_writer(out, "dgamma.csv")?;
    w.write_record(["z_norm", "gamma", "t", "upper", "upper_stderr", "lower", "lower_stderr", "sandwich_ok"])?;
    let mut pass = true;
    let mut series = Vec::new();
    for &z in &cfg.estimators.z_norms {
        let rows = est.dgamma_distance_bounds(&ctx.r.x0, &ctx.y_at(z), &times, &cfg.estimators.gammas, cfg.estimators.dictionary_size)?;
        for &g in &cfg.estimators.gammas {
            let mut s: Vec<DistanceRow> = rows.iter().filter(|r| r.gamma == g).cloned().collect();
            s.sort_by(|a, b| a.t.total_cmp(&b.t));
            let monotone = upper_monotone(&s);
            let sandwich = s.iter().all(|r| r.sandwich_ok);
            pass &= monotone && sandwich;
            for r in &s {
                w.write_record([
                    format!("{z}"),
                    format!("{g}"),
                    format!("{}", r.t),
                    format!("{:e}", r.upper.mean),
                    format!("{:e}", r.upper.stderr),
                    format!("{:e}", r.lower.mean),
                    format!("{:e}", r.lower.stderr),
                    r.sandwich_ok.to_string(),
                ])?;
            }
            series.push(json!({ "z_norm": z, "gamma": g, "monotone_in_t": monotone, "sandwich_ok": sandwich, "rows": s }));
        }
    }
    w.flush()?;
    Ok((Status::from_pass(pass), json!({ "series": series })))
}

fn simulate(ctx: &Context, out: &Path) -> Result<(Status, Value)> {
    let cfg = &ctx.cfg;
    let t = cfg.integrator.t_end;
    let path = ctx.sim.simulate_x(&ctx.r.x0, t, cfg.seed)?;
    path.write_csv(fs::File::create(out.join("path.csv"))?)?;
    let last = path.states.last().expect("path has its start");
    let mut res = json!({
        "x": {
            "steps": path.len() - 1,
            "final_norm_sq": last.norm_sq(),
            "final_h1_norm_sq": last.h1_norm_sq(),
            "dissipation": path.dissipation.last(),
        }
    });
    if cfg.experiments.simulate_coupled {
        let c = Coupler::new(ctx.sim.clone(), &ctx.r.x0, &ctx.r.y0, cfg.integrator.drift)?;
        let tr = c.run_coupled(t, cfg.seed)?;
        tr.write_csv(fs::File::create(out.join("coupled.csv"))?)?;
        let n = tr.len() - 1;
        let (lo, hi) = tr.log_m_range();
        res["coupled"] = json!({
            "z_norm": c.z_norm(),
            "final_zl_norm": tr.zl[n].norm(),
            "final_zh_norm": tr.zh[n].norm(),
            "log_m_min": lo,
            "log_m_max": hi,
            "v_energy": tr.v_energy[n],
        });
    }
    Ok((Status::Pass, res))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Runs `cmd`, writing `report.json`, `constants.json` and the CSV artifacts into `out`.
/// Relative file paths in the config resolve against `base`.
pub fn run(cmd: Command, cfg: &ExperimentConfig, base: &Path, out: &Path) -> Result<Outcome> {
    fs::create_dir_all(out)?;
    let ctx = Context::new(cfg, base)?;
    let (status, results) = match cmd {
        Command::VerifyIdentities => identities(&ctx)?,
        Command::VerifyMoments => moments(&ctx, out)?,
        Command::VerifyMlh => mlh(&ctx, out)?,
        Command::AsfProbe => asf(&ctx, out)?,
        Command::Simulate => simulate(&ctx, out)?,
    };
    let constants = ctx.constants();
    let report = json!({
        "command": cmd.name(),
        "status": status,
        "exit_code": status.exit_code(),
        "seed": cfg.seed,
        "config": cfg,
        "hypotheses": ctx.hypotheses,
        "constants": constants,
        "results": results,
    });
    write_json(&out.join("report.json"), &report)?;
    write_json(&out.join("constants.json"), &constants)?;
    Ok(Outcome { status, report })
}

/// Run metadata excluded from the reproducibility contract.
pub fn write_metadata(out: &Path, cmd: Command, elapsed_s: f64, threads: usize, exit_code: u8) -> Result<()> {
    let ts = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    write_json(
        &out.join("metadata.json"),
        &json!({
            "command": cmd.name(),
            "unix_time": ts,
            "elapsed_s": elapsed_s,
            "threads": threads,
            "exit_code": exit_code,
            "version": env!("CARGO_PKG_VERSION"),
        }),
    )
}
