//! Adaptive multi-index driver, variance extrapolation, and the single- and
//! multilevel baselines.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::allocation::{confidence_constant, optimal_samples, work_model, Allocation, VarianceMap};
use crate::error::{Error, Result};
use crate::index_sets::{boundary, build_index_set, compute_weights, admissibility_violation, IndexSet, RateSet};
use crate::mixed_difference::{estimate_stats, Hierarchy, MixedDiffStats, MultiIndex, Problem, Quantity};
use crate::randomness::{StreamKey, StreamRole};
use crate::scalar::{RateScalar, Real};

/// Sample sizes for the initial quantity estimate (`M̄`) and for the
/// seeded variances (`M̃`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotConfig {
    pub m1_bar: usize,
    pub m2_bar: usize,
    pub m1_tilde: usize,
    pub m2_tilde: usize,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self { m1_bar: 1000, m2_bar: 100, m1_tilde: 25, m2_tilde: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub tol_r: f64,
    pub theta: f64,
    pub nu: f64,
    /// Model-cost budget over the whole run, pilots included.
    pub max_cost: f64,
    pub l_start: f64,
    /// `L ← L · l_factor` between iterations.
    pub l_factor: f64,
    pub gamma: [f64; 2],
    pub max_iterations: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            tol_r: 0.1,
            theta: 0.5,
            nu: 0.05,
            max_cost: 1e12,
            l_start: 2.0,
            l_factor: 0.25f64.exp(),
            gamma: [1.0, 1.0],
            max_iterations: 200,
        }
    }
}

impl AdaptiveConfig {
    pub fn with_tol(mut self, tol_r: f64) -> Self {
        self.tol_r = tol_r;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::InvalidParameter(format!("theta must lie in (0, 1), got {}", self.theta)));
        }
        if !(self.tol_r > 0.0) {
            return Err(Error::InvalidParameter(format!("tol_r must be positive, got {}", self.tol_r)));
        }
        if !(self.l_start >= 2.0) {
            return Err(Error::InvalidParameter(format!("l_start must be at least 2, got {}", self.l_start)));
        }
        if !(self.l_factor > 1.0) {
            return Err(Error::InvalidParameter(format!("l_factor must exceed 1, got {}", self.l_factor)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub level: f64,
    pub set_size: usize,
    pub estimate: f64,
    pub rel_bias_est: f64,
    pub rel_stat_err_est: f64,
    pub model_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub estimate: f64,
    pub tol_r: f64,
    pub theta: f64,
    pub rel_bias_est: f64,
    pub rel_stat_err_est: f64,
    pub final_l: f64,
    pub index_set: IndexSet,
    pub allocation: Option<Allocation>,
    /// The `(V1, V2)` the final allocation was computed from.
    pub planning_variances: Vec<(MultiIndex, f64, f64)>,
    /// Model cost of the final estimator.
    pub total_model_cost: f64,
    /// Model cost of every sample drawn, pilots and discarded iterations
    /// included.
    pub cumulative_model_cost: f64,
    pub wall_time: f64,
    pub per_alpha_stats: Vec<MixedDiffStats>,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<IterationRecord>,
}

impl EstimatorReport {
    /// Zeroes times so that reports from identical runs compare equal.
    pub fn without_timing(mut self) -> Self {
        self.wall_time = 0.0;
        for s in &mut self.per_alpha_stats {
            s.wall_time = 0.0;
        }
        self
    }
}

/// Fills in `(V1, V2)` for every index of `target`, extrapolating beyond
/// the measured block `{0,1,2}²`. Measured values are returned unchanged.
pub fn extrapolate_variances(seed: &VarianceMap, rates: &RateSet<f64>, target: &IndexSet) -> Result<VarianceMap> {
    let tau = rates.tau as f64;
    let mut known: VarianceMap = seed.clone();
    // Lexicographic order visits every backward neighbour first.
    for alpha in target.iter() {
        if known.contains_key(&alpha) {
            continue;
        }
        let get = |a: Option<MultiIndex>| -> Result<(f64, f64)> {
            let a = a.ok_or_else(|| Error::MissingPredecessor(format!("{alpha}")))?;
            known.get(&a).copied().ok_or_else(|| Error::MissingPredecessor(format!("{a} (needed by {alpha})")))
        };
        let v = if alpha.a1 <= 1 {
            let (p1, p2) = (get(alpha.back(0, 1))?, get(alpha.back(0, 2))?);
            (
                (p1.0 / tau.powf(rates.w2)).max(p2.0 / tau.powf(2.0 * rates.w2)),
                (p1.1 / tau.powf(rates.s2)).max(p2.1 / tau.powf(2.0 * rates.s2)),
            )
        } else if alpha.a2 <= 1 {
            let (p1, p2) = (get(alpha.back(1, 0))?, get(alpha.back(2, 0))?);
            (
                (p1.0 / tau.powf(rates.w1)).max(p2.0 / tau.powf(2.0 * rates.w1)),
                (p1.1 / tau.powf(rates.s1)).max(p2.1 / tau.powf(2.0 * rates.s1)),
            )
        } else {
            let (up, left) = (get(alpha.back(0, 1))?, get(alpha.back(1, 0))?);
            (
                (up.0 / tau.powf(rates.w2)).max(left.0 / tau.powf(rates.w1)),
                (up.1 / tau.powf(rates.s2)).max(left.1 / tau.powf(rates.s1)),
            )
        };
        known.insert(alpha, v);
    }
    Ok(target.iter().map(|a| (a, known[&a])).collect())
}

/// Measured variances where the sample sizes allow, `fallback` elsewhere.
fn realized_variances(stats: &BTreeMap<MultiIndex, MixedDiffStats>, fallback: &VarianceMap) -> VarianceMap {
    stats
        .iter()
        .map(|(&a, s)| {
            let fb = fallback.get(&a).copied().unwrap_or((0.0, 0.0));
            let v1 = if s.m1 >= 2 { s.v1 } else { fb.0 };
            let v2 = if s.m2 >= 2 { s.v2 } else { fb.1 };
            (a, (v1, v2))
        })
        .collect()
}

fn rel_stat_err(allocation: &Allocation, variances: &VarianceMap, estimate: f64) -> f64 {
    allocation.c_nu * allocation.estimator_variance(variances).sqrt() / estimate.abs()
}

struct Run<'a, T: Real> {
    problem: &'a Problem<T>,
    quantity: Quantity,
    key: StreamKey,
    cumulative: f64,
}

impl<T: Real> Run<'_, T> {
    fn stats(&mut self, alpha: MultiIndex, m1: usize, m2: usize, epoch: u64) -> Result<MixedDiffStats> {
        let s = estimate_stats(self.problem, self.quantity, alpha, m1, m2, &self.key.with_epoch(epoch))?;
        self.cumulative += s.model_cost;
        Ok(s)
    }
}

const EPOCH_QOI: u64 = 0;
const EPOCH_SEED: u64 = 1;
const EPOCH_LOOP: u64 = 2;

/// Adaptive multi-index estimator of `E[G]` with relative tolerance
/// `cfg.tol_r`.
///
/// Runs that hit the cost budget or the iteration limit return the last
/// completed iteration with `converged = false`.
pub fn run_adaptive<T: Real, S: RateScalar>(
    problem: &Problem<T>,
    rates: &RateSet<S>,
    cfg: &AdaptiveConfig,
    pilot: &PilotConfig,
    master_seed: u64,
) -> Result<EstimatorReport> {
    cfg.validate()?;
    if let Some(why) = admissibility_violation(rates) {
        return Err(Error::Inadmissible(why));
    }
    let weights = compute_weights(rates)?;
    let rates_f = rates.to_f64();
    if rates_f.tau != problem.hierarchy.tau {
        return Err(Error::Config(format!(
            "rates use tau = {} but the hierarchy uses tau = {}",
            rates_f.tau, problem.hierarchy.tau
        )));
    }
    let start = Instant::now();
    let mut run = Run {
        problem,
        quantity: Quantity::MixedDifference,
        key: StreamKey::new(master_seed, StreamRole::OuterLaw),
        cumulative: 0.0,
    };

    let g0 = run.stats(MultiIndex::ZERO, pilot.m1_bar, pilot.m2_bar, EPOCH_QOI)?;
    let mut qoi = g0.mean;
    let mut seeded = VarianceMap::new();
    let mut seed_stats = BTreeMap::new();
    for a1 in 0..=2 {
        for a2 in 0..=2 {
            let alpha = MultiIndex::new(a1, a2);
            let s = run.stats(alpha, pilot.m1_tilde, pilot.m2_tilde, EPOCH_SEED)?;
            seeded.insert(alpha, (s.v1, s.v2));
            seed_stats.insert(alpha, s);
        }
    }

    let mut level = cfg.l_start;
    let mut previous: Option<IndexSet> = None;
    let mut history = Vec::new();
    let mut last: Option<(IndexSet, Allocation, BTreeMap<MultiIndex, MixedDiffStats>, f64, f64, VarianceMap)> = None;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        let mut set = build_index_set(&weights, level)?;
        // Levels that leave the set unchanged add nothing.
        while previous.as_ref().is_some_and(|p| p.members == set.members) {
            level *= cfg.l_factor;
            set = build_index_set(&weights, level)?;
        }
        let variances = extrapolate_variances(&seeded, &rates_f, &set)?;
        let allocation =
            optimal_samples(&variances, &problem.hierarchy, cfg.tol_r, cfg.theta, cfg.nu, qoi, cfg.gamma[0], cfg.gamma[1])?;
        let predicted = work_model(&allocation, &problem.hierarchy, 1.0, 1.0);
        if run.cumulative + predicted > cfg.max_cost {
            break;
        }
        let mut stats = BTreeMap::new();
        for e in &allocation.entries {
            let s = run.stats(e.alpha, e.m1, e.m2, EPOCH_LOOP + iterations as u64)?;
            stats.insert(e.alpha, s);
        }
        iterations += 1;
        qoi = stats.values().map(|s| s.mean).sum();
        if qoi == 0.0 {
            return Err(Error::ZeroQoi("the estimated quantity vanished".into()));
        }
        let bias = boundary(&set).iter().map(|a| stats[a].mean.abs()).sum::<f64>() / qoi.abs();
        let stat = rel_stat_err(&allocation, &realized_variances(&stats, &variances), qoi);
        let cost: f64 = stats.values().map(|s| s.model_cost).sum();
        history.push(IterationRecord {
            level,
            set_size: set.len(),
            estimate: qoi,
            rel_bias_est: bias,
            rel_stat_err_est: stat,
            model_cost: cost,
        });
        previous = Some(set.clone());
        last = Some((set, allocation, stats, bias, stat, variances));
        if bias <= (1.0 - cfg.theta) * cfg.tol_r {
            converged = true;
            break;
        }
        level *= cfg.l_factor;
    }

    let (index_set, allocation, stats, bias, stat, planned) = match last {
        Some(l) => (l.0, Some(l.1), l.2, l.3, l.4, l.5),
        None => {
            let g0_set = IndexSet::from_members([MultiIndex::ZERO], level);
            let mut m = BTreeMap::new();
            m.insert(MultiIndex::ZERO, g0.clone());
            (g0_set, None, m, f64::INFINITY, confidence_constant(cfg.nu) * g0.std_error() / qoi.abs(), VarianceMap::new())
        }
    };
    Ok(EstimatorReport {
        estimate: qoi,
        tol_r: cfg.tol_r,
        theta: cfg.theta,
        rel_bias_est: bias,
        rel_stat_err_est: stat,
        final_l: index_set.level,
        total_model_cost: stats.values().map(|s| s.model_cost).sum(),
        index_set,
        allocation,
        planning_variances: planned.into_iter().map(|(a, (v1, v2))| (a, v1, v2)).collect(),
        cumulative_model_cost: run.cumulative,
        wall_time: start.elapsed().as_secs_f64(),
        per_alpha_stats: stats.into_values().collect(),
        seed: master_seed,
        iterations,
        converged,
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleLevelResult {
    pub estimate: f64,
    /// Standard error of the estimate.
    pub stat_err: f64,
    pub stats: MixedDiffStats,
}

/// Nested estimator of `E[G]` at fixed `(P, N)`.
pub fn run_dlmc_single<T: Real>(
    problem: &Problem<T>,
    particles: usize,
    steps: usize,
    m1: usize,
    m2: usize,
    master_seed: u64,
) -> Result<SingleLevelResult> {
    let mut p = problem.clone();
    p.hierarchy = Hierarchy::new(particles, steps, problem.hierarchy.tau)?;
    let key = StreamKey::new(master_seed, StreamRole::OuterLaw);
    let stats = estimate_stats(&p, Quantity::Level, MultiIndex::ZERO, m1, m2, &key)?;
    Ok(SingleLevelResult { estimate: stats.mean, stat_err: stats.std_error(), stats })
}

/// Multilevel baseline on the diagonal `(ℓ, ℓ)` with level differences.
///
/// The variance of every new level is measured with `M̃` samples; the bias
/// is estimated by the last level's mean.
pub fn run_multilevel<T: Real>(
    problem: &Problem<T>,
    cfg: &AdaptiveConfig,
    pilot: &PilotConfig,
    master_seed: u64,
) -> Result<EstimatorReport> {
    if !(cfg.theta > 0.0 && cfg.theta < 1.0 && cfg.tol_r > 0.0) {
        return Err(Error::InvalidParameter("theta must lie in (0, 1) and tol_r must be positive".into()));
    }
    let start = Instant::now();
    let mut run = Run {
        problem,
        quantity: Quantity::DiagonalDifference,
        key: StreamKey::new(master_seed, StreamRole::OuterLaw),
        cumulative: 0.0,
    };
    let g0 = run.stats(MultiIndex::ZERO, pilot.m1_bar, pilot.m2_bar, EPOCH_QOI)?;
    let mut qoi = g0.mean;
    let mut variances = VarianceMap::new();
    let mut history = Vec::new();
    let mut last = None;
    let mut converged = false;
    let mut iterations = 0;
    let mut top = 0usize;

    while iterations < cfg.max_iterations {
        top += 1;
        for l in 0..=top {
            let alpha = MultiIndex::diagonal(l);
            if !variances.contains_key(&alpha) {
                let s = run.stats(alpha, pilot.m1_tilde, pilot.m2_tilde, EPOCH_SEED)?;
                variances.insert(alpha, (s.v1, s.v2));
            }
        }
        let allocation =
            optimal_samples(&variances, &problem.hierarchy, cfg.tol_r, cfg.theta, cfg.nu, qoi, cfg.gamma[0], cfg.gamma[1])?;
        let predicted = work_model(&allocation, &problem.hierarchy, 1.0, 1.0);
        if run.cumulative + predicted > cfg.max_cost {
            break;
        }
        let mut stats = BTreeMap::new();
        for e in &allocation.entries {
            let s = run.stats(e.alpha, e.m1, e.m2, EPOCH_LOOP + iterations as u64)?;
            stats.insert(e.alpha, s);
        }
        iterations += 1;
        qoi = stats.values().map(|s| s.mean).sum();
        if qoi == 0.0 {
            return Err(Error::ZeroQoi("the estimated quantity vanished".into()));
        }
        let bias = stats[&MultiIndex::diagonal(top)].mean.abs() / qoi.abs();
        let stat = rel_stat_err(&allocation, &realized_variances(&stats, &variances), qoi);
        history.push(IterationRecord {
            level: top as f64,
            set_size: top + 1,
            estimate: qoi,
            rel_bias_est: bias,
            rel_stat_err_est: stat,
            model_cost: stats.values().map(|s| s.model_cost).sum(),
        });
        last = Some((allocation, stats, bias, stat, variances.clone()));
        if bias <= (1.0 - cfg.theta) * cfg.tol_r {
            converged = true;
            break;
        }
    }

    let (allocation, stats, bias, stat, planned) = match last {
        Some(l) => (Some(l.0), l.1, l.2, l.3, l.4),
        None => {
            let mut m = BTreeMap::new();
            m.insert(MultiIndex::ZERO, g0.clone());
            (None, m, f64::INFINITY, confidence_constant(cfg.nu) * g0.std_error() / qoi.abs(), VarianceMap::new())
        }
    };
    let index_set = IndexSet::from_members(stats.keys().copied(), stats.len() as f64 - 1.0);
    Ok(EstimatorReport {
        estimate: qoi,
        tol_r: cfg.tol_r,
        theta: cfg.theta,
        rel_bias_est: bias,
        rel_stat_err_est: stat,
        final_l: index_set.level,
        total_model_cost: stats.values().map(|s| s.model_cost).sum(),
        index_set,
        allocation,
        planning_variances: planned.into_iter().map(|(a, (v1, v2))| (a, v1, v2)).collect(),
        cumulative_model_cost: run.cumulative,
        wall_time: start.elapsed().as_secs_f64(),
        per_alpha_stats: stats.into_values().collect(),
        seed: master_seed,
        iterations,
        converged,
        history,
    })
}
