//! Subcommand bodies. Each writes its files under the output directory and
//! reports whether the run reached its target.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use midlmc::control::{solve_kbe, control_from_value};
use midlmc::index_sets::{boundary, build_index_set, complexity_constants, compute_weights, admissibility_violation};
use midlmc::particle_system::sample_law;
use midlmc::rates::fit_rates;
use midlmc::{
    estimate_stats, run_adaptive, run_dlmc_single, run_multilevel, Control, MixedDiffStats, MultiIndex, Problem,
    RateSet, Rational64, StreamKey, StreamRole,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Config, Mode, RatesConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Epoch reserved for the `pilot` subcommand streams.
const PILOT_EPOCH: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    NotConverged,
}

/// Error raised for an unusable configuration; maps to its own exit code.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub struct RunContext {
    pub config: Config,
    pub out: PathBuf,
    pub control_path: Option<PathBuf>,
    pub rates_path: Option<PathBuf>,
    pub timing: bool,
}

impl RunContext {
    fn stamp(&self) -> Value {
        json!({
            "version": VERSION,
            "seed": self.config.seed,
            "config_sha256": self.config.digest(),
        })
    }

    fn stamp_line(&self) -> String {
        format!("midlmc {VERSION} seed={} config_sha256={}", self.config.seed, self.config.digest())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn model_digest(config: &Config) -> String {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_vec(&config.model).expect("model section serialises");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Solves the offline control problem for the configured model.
pub fn offline_control(config: &Config) -> anyhow::Result<Control> {
    let model = config.model()?;
    let c = &config.control_grid;
    let key = StreamKey::new(config.seed, StreamRole::ControlLaw);
    let law = sample_law(&model, &key, c.law_particles, c.law_steps)?;
    let value = solve_kbe(&model, &law, &config.grid()?, &config.observable())?;
    Ok(control_from_value(&value, &model, &law, c.clip)?)
}

fn load_control(path: &Path) -> anyhow::Result<Control> {
    let f = File::open(path).with_context(|| format!("opening control file {}", path.display()))?;
    Ok(Control::read_csv(BufReader::new(f))?)
}

fn problem(ctx: &RunContext) -> anyhow::Result<Problem<f64>> {
    let cfg = &ctx.config;
    let mut p = Problem::new(cfg.model()?, cfg.hierarchy()?, cfg.observable());
    if let Some(path) = &ctx.control_path {
        p = p.with_control(Arc::new(load_control(path)?));
    } else if cfg.control_grid.enabled {
        p = p.with_control(Arc::new(offline_control(cfg)?));
    }
    Ok(p)
}

pub fn solve_control(ctx: &RunContext) -> anyhow::Result<Outcome> {
    let cfg = &ctx.config;
    let control = offline_control(cfg)?;
    let c = &cfg.control_grid;
    let comments = vec![
        ctx.stamp_line(),
        format!("law_particles={},law_steps={},model_sha256={}", c.law_particles, c.law_steps, model_digest(cfg)),
    ];
    let path = ctx.path("control.csv");
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    control.write_csv_annotated(&mut w, &comments)?;
    w.flush()?;
    let meta = json!({
        "stamp": ctx.stamp(),
        "law_particles": c.law_particles,
        "law_steps": c.law_steps,
        "model_sha256": model_digest(cfg),
        "grid": {
            "x_min": c.x_min, "x_max": c.x_max, "n_cells": c.n_cells, "n_tsteps": c.n_tsteps,
            "scheme": c.scheme,
        },
        "clip": control.clip,
        "max_abs_control": control.max_abs(),
    });
    write_json(&ctx.path("control.json"), &meta)?;
    Ok(Outcome::Done)
}

/// The pilot grid: `{0,1,2}²` plus both axes and their first neighbours
/// up to `levels`.
pub fn pilot_indices(levels: usize) -> Vec<MultiIndex> {
    let mut set = std::collections::BTreeSet::new();
    for a1 in 0..=2 {
        for a2 in 0..=2 {
            set.insert(MultiIndex::new(a1, a2));
        }
    }
    for l in 0..=levels {
        for r in 0..=1 {
            set.insert(MultiIndex::new(l, r));
            set.insert(MultiIndex::new(r, l));
        }
    }
    set.into_iter().collect()
}

const STATS_HEADER: &str = "alpha1,alpha2,mean,V1,V2,model_cost,wall_time,M1,M2,seed";

fn write_stats_csv(ctx: &RunContext, path: &Path, stats: &[MixedDiffStats]) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "# {}", ctx.stamp_line())?;
    writeln!(w, "{STATS_HEADER}")?;
    for s in stats {
        let wall = if ctx.timing { s.wall_time } else { 0.0 };
        writeln!(
            w,
            "{},{},{:e},{:e},{:e},{:e},{},{},{},{}",
            s.alpha.a1, s.alpha.a2, s.mean, s.v1, s.v2, s.model_cost, wall, s.m1, s.m2, ctx.config.seed
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn pilot(ctx: &RunContext) -> anyhow::Result<Outcome> {
    let cfg = &ctx.config;
    let problem = problem(ctx)?;
    let key = StreamKey::new(cfg.seed, StreamRole::Pilot).with_epoch(PILOT_EPOCH);
    let mut stats = BTreeMap::new();
    for alpha in pilot_indices(cfg.pilot.axis_levels) {
        let s = estimate_stats(&problem, midlmc::Quantity::MixedDifference, alpha, cfg.pilot.m1, cfg.pilot.m2, &key)?;
        stats.insert(alpha, s);
    }
    let list: Vec<MixedDiffStats> = stats.values().cloned().collect();
    write_stats_csv(ctx, &ctx.path("pilot_stats.csv"), &list)?;
    let gamma = cfg.adaptive.rates.gamma;
    let rates = match fit_rates(&stats, cfg.hierarchy.tau, cfg.pilot.axis_levels, gamma) {
        Ok(fit) => {
            let r = &fit.rates;
            json!({
                "stamp": ctx.stamp(),
                "rates": RatesConfig { b: [r.b1, r.b2], w: [r.w1, r.w2], s: [r.s1, r.s2], gamma },
                "qb": r.qb,
                "fits": fit.fits,
                "levels": [fit.levels.0, fit.levels.1],
            })
        }
        Err(e) => {
            eprintln!("warning: {e}");
            json!({ "stamp": ctx.stamp(), "rates": Value::Null, "error": e.to_string() })
        }
    };
    write_json(&ctx.path("rates.json"), &rates)?;
    Ok(Outcome::Done)
}

/// Reads rates from a `pilot` output (`{"rates": {...}}`) or a bare
/// `{b, w, s, gamma}` object.
pub fn read_rates(path: &Path) -> anyhow::Result<RatesConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let inner = v.get("rates").cloned().unwrap_or(v);
    if inner.is_null() {
        return Err(anyhow!(ConfigError(format!("{} holds no fitted rates", path.display()))));
    }
    serde_json::from_value(inner).map_err(|e| anyhow!(ConfigError(format!("rates in {}: {e}", path.display()))))
}

fn rates_of(ctx: &RunContext) -> anyhow::Result<RatesConfig> {
    match &ctx.rates_path {
        Some(p) => read_rates(p),
        None => Ok(ctx.config.adaptive.rates.clone()),
    }
}

pub fn estimate(ctx: &RunContext) -> anyhow::Result<Outcome> {
    let cfg = &ctx.config;
    let problem = problem(ctx)?;
    let mode = cfg.adaptive.mode;
    let (body, stats, converged) = match mode {
        Mode::Single => {
            let s = &cfg.adaptive.single;
            let r = run_dlmc_single(&problem, s.particles, s.steps, s.m1, s.m2, cfg.seed)?;
            let mut stats = r.stats.clone();
            if !ctx.timing {
                stats.wall_time = 0.0;
            }
            let body = json!({
                "estimate": r.estimate,
                "stat_err": r.stat_err,
                "particles": s.particles,
                "steps": s.steps,
                "stats": stats,
            });
            (body, vec![stats], true)
        }
        Mode::Adaptive | Mode::Multilevel => {
            let rc = rates_of(ctx)?;
            let acfg = cfg.adaptive_config();
            let pcfg = cfg.pilot_config();
            let mut report = if mode == Mode::Adaptive {
                let rates = RateSet::new(rc.b, rc.w, rc.s, rc.gamma, cfg.hierarchy.tau);
                run_adaptive(&problem, &rates, &acfg, &pcfg, cfg.seed)?
            } else {
                run_multilevel(&problem, &acfg, &pcfg, cfg.seed)?
            };
            if !ctx.timing {
                report = report.without_timing();
            }
            let converged = report.converged;
            let stats = report.per_alpha_stats.clone();
            (serde_json::to_value(&report)?, stats, converged)
        }
    };
    let doc = json!({ "stamp": ctx.stamp(), "mode": mode, "report": body });
    write_json(&ctx.path("report.json"), &doc)?;
    write_stats_csv(ctx, &ctx.path("per_alpha.csv"), &stats)?;
    Ok(if converged { Outcome::Done } else { Outcome::NotConverged })
}

fn ratio_string(r: &Rational64) -> String {
    if *r.denom() == 1 {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

fn exact(x: f64) -> anyhow::Result<Rational64> {
    Rational64::approximate_float(x).ok_or_else(|| anyhow!(ConfigError(format!("rate {x} has no rational form"))))
}

fn members(set: impl IntoIterator<Item = MultiIndex>) -> Vec<[usize; 2]> {
    set.into_iter().map(|a| [a.a1, a.a2]).collect()
}

pub fn plan(ctx: &RunContext, levels: &[f64]) -> anyhow::Result<Outcome> {
    let rc = rates_of(ctx)?;
    let tau = ctx.config.hierarchy.tau;
    let q = |v: [f64; 2]| -> anyhow::Result<[Rational64; 2]> { Ok([exact(v[0])?, exact(v[1])?]) };
    let rates = RateSet::new(q(rc.b)?, q(rc.w)?, q(rc.s)?, q(rc.gamma)?, tau);
    if let Some(why) = admissibility_violation(&rates) {
        return Err(anyhow!(ConfigError(format!("inadmissible rates: {why}"))));
    }
    let weights = compute_weights(&rates)?;
    let report = complexity_constants(&rates)?;
    let f = |r: &Rational64| *r.numer() as f64 / *r.denom() as f64;
    let mut sets = Vec::new();
    for &l in levels {
        let set = build_index_set(&weights, l)?;
        sets.push(json!({
            "L": l,
            "members": members(set.iter()),
            "boundary": members(boundary(&set)),
        }));
    }
    let doc = json!({
        "stamp": ctx.stamp(),
        "rates": rc,
        "weights": {
            "delta_bar": weights.delta_bar.iter().map(ratio_string).collect::<Vec<_>>(),
            "delta_bbar": weights.delta_bbar.iter().map(ratio_string).collect::<Vec<_>>(),
            "c_bar": ratio_string(&weights.c_bar),
            "c_bbar": ratio_string(&weights.c_bbar),
        },
        "complexity": {
            "chi_per_log_tau": [[ratio_string(&report.chi11), ratio_string(&report.chi12)],
                                [ratio_string(&report.chi21), ratio_string(&report.chi22)]],
            "eta_per_log_tau": [ratio_string(&report.eta1), ratio_string(&report.eta2)],
            "varsigma": ratio_string(&report.varsigma),
            "varrho": ratio_string(&report.varrho),
            "psi": ratio_string(&report.psi),
            "condition_holds": report.condition_holds,
            "work_exponent": ratio_string(&report.predicted_exponent),
            "log_power": ratio_string(&report.predicted_log_power),
            "work_exponent_f64": f(&report.predicted_exponent),
        },
        "index_sets": sets,
    });
    write_json(&ctx.path("plan.json"), &doc)?;
    Ok(Outcome::Done)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pilot_grid_covers_block_and_axes() {
        let g = pilot_indices(4);
        assert!(g.contains(&MultiIndex::new(2, 2)));
        assert!(g.contains(&MultiIndex::new(4, 1)));
        assert!(g.contains(&MultiIndex::new(1, 4)));
        assert!(!g.contains(&MultiIndex::new(3, 2)));
        assert_eq!(g.len(), 17);
    }

    #[test]
    fn rationals_print_reduced() {
        assert_eq!(ratio_string(&Rational64::new(4, 6)), "2/3");
        assert_eq!(ratio_string(&Rational64::new(3, 1)), "3");
        assert_eq!(exact(1.5).unwrap(), Rational64::new(3, 2));
    }
}
