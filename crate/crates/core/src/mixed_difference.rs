//! Multi-indices, the discretisation hierarchy, and the coupled samplers for
//! levels, mixed differences and diagonal differences of `G · 𝕃`.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoupled::{simulate_decoupled, ImportanceControl};
use crate::error::{Error, Result};
use crate::models::{ModelSpec, Observable};
use crate::particle_system::{simulate_law, EmpiricalLaw};
use crate::randomness::{draw_bundle, draw_path, draw_path_with, split_groups, NoiseBundle, PathNoise, StreamKey, StreamRole};
use crate::scalar::Real;

/// `α = (α₁, α₂)`: particle level and time level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct MultiIndex {
    pub a1: usize,
    pub a2: usize,
}

impl MultiIndex {
    pub const ZERO: MultiIndex = MultiIndex { a1: 0, a2: 0 };

    pub const fn new(a1: usize, a2: usize) -> Self {
        Self { a1, a2 }
    }

    pub fn diagonal(level: usize) -> Self {
        Self::new(level, level)
    }

    pub fn shifted(self, d1: usize, d2: usize) -> Self {
        Self::new(self.a1 + d1, self.a2 + d2)
    }

    /// `α − (d1, d2)` if it stays nonnegative.
    pub fn back(self, d1: usize, d2: usize) -> Option<Self> {
        Some(Self::new(self.a1.checked_sub(d1)?, self.a2.checked_sub(d2)?))
    }

    /// Componentwise `self ≤ other`.
    pub fn le(self, other: Self) -> bool {
        self.a1 <= other.a1 && self.a2 <= other.a2
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.a1, self.a2)
    }
}

/// `P_{α₁} = P₀ τ^{α₁}`, `N_{α₂} = N₀ τ^{α₂}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hierarchy {
    pub p0: usize,
    pub n0: usize,
    pub tau: usize,
}

impl Hierarchy {
    pub fn new(p0: usize, n0: usize, tau: usize) -> Result<Self> {
        if p0 == 0 || n0 == 0 {
            return Err(Error::Hierarchy("P0 and N0 must be positive".into()));
        }
        if tau < 2 {
            return Err(Error::Hierarchy(format!("tau must be at least 2, got {tau}")));
        }
        Ok(Self { p0, n0, tau })
    }

    /// The Kuramoto study hierarchy `P = 5·2^α₁`, `N = 4·2^α₂`.
    pub fn kuramoto() -> Self {
        Self { p0: 5, n0: 4, tau: 2 }
    }

    pub fn particles(&self, a1: usize) -> usize {
        self.p0 * self.tau.pow(a1 as u32)
    }

    pub fn steps(&self, a2: usize) -> usize {
        self.n0 * self.tau.pow(a2 as u32)
    }

    /// Work of `(M1, M2)` samples at `α`:
    /// `M1 N^γ₂ P^{1+γ₁} + M1 M2 N^γ₂ P^γ₁`.
    pub fn work(&self, alpha: MultiIndex, m1: f64, m2: f64, gamma1: f64, gamma2: f64) -> f64 {
        let p = self.particles(alpha.a1) as f64;
        let n = self.steps(alpha.a2) as f64;
        m1 * n.powf(gamma2) * p.powf(1.0 + gamma1) + m1 * m2 * n.powf(gamma2) * p.powf(gamma1)
    }
}

/// What a sample at `α` estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quantity {
    /// `G_α = G(X̄(T)) 𝕃` at `(P_{α₁}, N_{α₂})`.
    Level,
    /// The first order mixed difference in both directions.
    MixedDifference,
    /// `G_{(ℓ,ℓ)} − 𝒢_{(ℓ−1,ℓ−1)}`, both parameters refined together;
    /// `α` must be diagonal.
    DiagonalDifference,
}

/// Everything a sampler needs besides the random keys.
#[derive(Clone)]
pub struct Problem<T: Real> {
    pub model: ModelSpec<T>,
    pub hierarchy: Hierarchy,
    pub observable: Observable<T>,
    pub control: Option<Arc<dyn ImportanceControl<T>>>,
    /// Average the coarse-particle terms over all `τ` groups; otherwise
    /// only the first group is used.
    pub antithetic: bool,
}

impl<T: Real> fmt::Debug for Problem<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("model", &self.model)
            .field("hierarchy", &self.hierarchy)
            .field("controlled", &self.control.is_some())
            .field("antithetic", &self.antithetic)
            .finish()
    }
}

impl<T: Real> Problem<T> {
    pub fn new(model: ModelSpec<T>, hierarchy: Hierarchy, observable: Observable<T>) -> Self {
        Self { model, hierarchy, observable, control: None, antithetic: true }
    }

    pub fn with_control(mut self, control: Arc<dyn ImportanceControl<T>>) -> Self {
        self.control = Some(control);
        self
    }

    pub fn without_control(&self) -> Self {
        let mut p = self.clone();
        p.control = None;
        p
    }

    pub fn plain(mut self) -> Self {
        self.antithetic = false;
        self
    }

    fn control_ref(&self) -> Option<&dyn ImportanceControl<T>> {
        self.control.as_deref()
    }

    /// `G(X̄(T)) 𝕃` for one decoupled path against `law`.
    pub fn weighted_payoff(&self, law: &EmpiricalLaw<T>, noise: &PathNoise<T>) -> Result<T> {
        if let Some(c) = self.observable.as_constant() {
            if self.control.as_ref().is_none_or(|k| k.is_zero()) {
                return Ok(c);
            }
        }
        let r = simulate_decoupled(&self.model, law, self.control_ref(), noise, law.steps)?;
        Ok(self.observable.eval(&r.terminal) * r.likelihood)
    }
}

struct Prepared<T> {
    fine: EmpiricalLaw<T>,
    /// `(α₁, α₂−1)`.
    fine_back: Option<EmpiricalLaw<T>>,
    /// One law per particle group at `(α₁−1, α₂)`; for diagonal
    /// differences these sit at `(ℓ−1, ℓ−1)`.
    groups: Vec<EmpiricalLaw<T>>,
    groups_coarse_time: bool,
    /// `(α₁−1, α₂−1)`.
    groups_back: Vec<EmpiricalLaw<T>>,
}

fn check_quantity(quantity: Quantity, alpha: MultiIndex) -> Result<()> {
    if quantity == Quantity::DiagonalDifference && alpha.a1 != alpha.a2 {
        return Err(Error::Hierarchy(format!("diagonal difference at off-diagonal index {alpha}")));
    }
    Ok(())
}

fn groups_of<T: Real>(bundle: &NoiseBundle<T>, tau: usize, antithetic: bool) -> Result<Vec<NoiseBundle<T>>> {
    let groups = split_groups(bundle, tau)?;
    Ok(if antithetic { groups } else { groups.into_iter().take(1).collect() })
}

/// Simulates every law the quantity needs from `bundle`, which must hold
/// exactly `P_{α₁}` particles on `N_{α₂}` steps.
fn prepare<T: Real>(
    problem: &Problem<T>,
    quantity: Quantity,
    alpha: MultiIndex,
    bundle: &NoiseBundle<T>,
) -> Result<Prepared<T>> {
    let h = &problem.hierarchy;
    let m = &problem.model;
    let (pf, nf) = (h.particles(alpha.a1), h.steps(alpha.a2));
    let fine = simulate_law(m, bundle, pf, nf)?;
    let mut prep = Prepared { fine, fine_back: None, groups: Vec::new(), groups_coarse_time: false, groups_back: Vec::new() };
    match quantity {
        Quantity::Level => {}
        Quantity::MixedDifference => {
            let coarse = if alpha.a2 > 0 { Some(bundle.coarsened(h.tau)?) } else { None };
            if let Some(c) = &coarse {
                prep.fine_back = Some(simulate_law(m, c, pf, nf / h.tau)?);
            }
            if alpha.a1 > 0 {
                let pc = pf / h.tau;
                for g in groups_of(bundle, h.tau, problem.antithetic)? {
                    prep.groups.push(simulate_law(m, &g, pc, nf)?);
                }
                if let Some(c) = &coarse {
                    for g in groups_of(c, h.tau, problem.antithetic)? {
                        prep.groups_back.push(simulate_law(m, &g, pc, nf / h.tau)?);
                    }
                }
            }
        }
        Quantity::DiagonalDifference => {
            if alpha.a1 > 0 {
                let c = bundle.coarsened(h.tau)?;
                for g in groups_of(&c, h.tau, problem.antithetic)? {
                    prep.groups.push(simulate_law(m, &g, pf / h.tau, nf / h.tau)?);
                }
                prep.groups_coarse_time = true;
            }
        }
    }
    Ok(prep)
}

fn group_mean<T: Real>(problem: &Problem<T>, laws: &[EmpiricalLaw<T>], noise: &PathNoise<T>) -> Result<T> {
    let mut s = T::zero();
    for law in laws {
        s = s + problem.weighted_payoff(law, noise)?;
    }
    Ok(s / T::of_usize(laws.len()))
}

fn evaluate<T: Real>(problem: &Problem<T>, prep: &Prepared<T>, path: &PathNoise<T>) -> Result<T> {
    let tau = problem.hierarchy.tau;
    let needs_coarse = prep.fine_back.is_some() || prep.groups_coarse_time;
    let coarse = if needs_coarse { Some(path.coarsened(tau)?) } else { None };
    let fine_part = {
        let g = problem.weighted_payoff(&prep.fine, path)?;
        if prep.groups.is_empty() {
            g
        } else {
            let noise = if prep.groups_coarse_time { coarse.as_ref().expect("coarse path") } else { path };
            g - group_mean(problem, &prep.groups, noise)?
        }
    };
    let back_part = match &prep.fine_back {
        None => T::zero(),
        Some(law) => {
            let noise = coarse.as_ref().expect("coarse path");
            let g = problem.weighted_payoff(law, noise)?;
            if prep.groups_back.is_empty() {
                g
            } else {
                g - group_mean(problem, &prep.groups_back, noise)?
            }
        }
    };
    Ok(fine_part - back_part)
}

fn coarsen_to<T: Real>(bundle: &NoiseBundle<T>, particles: usize, steps: usize) -> Result<NoiseBundle<T>> {
    if bundle.particles() < particles {
        return Err(Error::Config(format!("bundle holds {} particles, {particles} needed", bundle.particles())));
    }
    if bundle.n_fine % steps != 0 {
        return Err(Error::Hierarchy(format!("{} steps do not coarsen to {steps}", bundle.n_fine)));
    }
    let b = if bundle.particles() == particles { bundle.clone() } else { bundle.slice(0, particles) };
    if b.n_fine == steps {
        Ok(b)
    } else {
        b.coarsened(b.n_fine / steps)
    }
}

/// One sample of `quantity` at `alpha` from caller-supplied randomness.
///
/// `bundle` may hold more particles or a finer grid than `α` needs; the
/// first `P_{α₁}` particles are used, coarsened to `N_{α₂}` steps, and the
/// same coarsening is applied to `path`. Nested use of one bundle across
/// several `α` therefore reuses the same driving noise.
pub fn sample_from_noise<T: Real>(
    problem: &Problem<T>,
    quantity: Quantity,
    alpha: MultiIndex,
    bundle: &NoiseBundle<T>,
    path: &PathNoise<T>,
) -> Result<T> {
    check_quantity(quantity, alpha)?;
    let h = &problem.hierarchy;
    let (pf, nf) = (h.particles(alpha.a1), h.steps(alpha.a2));
    let b = coarsen_to(bundle, pf, nf)?;
    if path.n_fine % nf != 0 {
        return Err(Error::Hierarchy(format!("path of {} steps does not coarsen to {nf}", path.n_fine)));
    }
    let p = if path.n_fine == nf { path.clone() } else { path.coarsened(path.n_fine / nf)? };
    let prep = prepare(problem, quantity, alpha, &b)?;
    evaluate(problem, &prep, &p)
}

/// One sample of the mixed difference with fresh keyed randomness.
pub fn sample_mixed_difference<T: Real>(
    problem: &Problem<T>,
    alpha: MultiIndex,
    key_outer: &StreamKey,
    key_inner: &StreamKey,
) -> Result<T> {
    let h = &problem.hierarchy;
    let (pf, nf) = (h.particles(alpha.a1), h.steps(alpha.a2));
    let bundle = draw_bundle(key_outer, &problem.model, pf, nf)?;
    let path = draw_path(key_inner, &problem.model, nf)?;
    sample_from_noise(problem, Quantity::MixedDifference, alpha, &bundle, &path)
}

/// Sample moments of a nested estimator at one multi-index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedDiffStats {
    pub alpha: MultiIndex,
    pub quantity: Quantity,
    pub mean: f64,
    /// Sample variance over the outer loop of the inner means.
    pub v1: f64,
    /// Mean over the outer loop of the inner sample variances.
    pub v2: f64,
    pub m1: usize,
    pub m2: usize,
    pub model_cost: f64,
    pub wall_time: f64,
    /// A variance was not estimable (`M < 2`) and was set to zero.
    pub clamped: bool,
}

impl MixedDiffStats {
    /// `V1/M1 + V2/(M1 M2)`.
    pub fn estimator_variance(&self) -> f64 {
        self.v1 / self.m1 as f64 + self.v2 / (self.m1 as f64 * self.m2 as f64)
    }

    pub fn std_error(&self) -> f64 {
        self.estimator_variance().sqrt()
    }

    /// Squared coefficient of variation of the estimator.
    pub fn cv2(&self) -> f64 {
        self.estimator_variance() / (self.mean * self.mean)
    }
}

fn mean_var(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, Some(ss / (n - 1.0)))
}

/// Nested Monte Carlo estimate of `E[quantity_α]` with `M1` laws and `M2`
/// paths per law. Outer samples run in parallel; results do not depend on
/// the number of workers.
pub fn estimate_stats<T: Real>(
    problem: &Problem<T>,
    quantity: Quantity,
    alpha: MultiIndex,
    m1: usize,
    m2: usize,
    key: &StreamKey,
) -> Result<MixedDiffStats> {
    if m1 == 0 || m2 == 0 {
        return Err(Error::InvalidParameter("M1 and M2 must be positive".into()));
    }
    check_quantity(quantity, alpha)?;
    let start = Instant::now();
    let h = &problem.hierarchy;
    let (pf, nf) = (h.particles(alpha.a1), h.steps(alpha.a2));
    let outer = key.with_role(StreamRole::OuterLaw).with_alpha(alpha);
    let inner = key.with_role(StreamRole::InnerPath).with_alpha(alpha);

    let per_law: Vec<(f64, Option<f64>)> = (0..m1)
        .into_par_iter()
        .map(|i| -> Result<(f64, Option<f64>)> {
            let bundle = draw_bundle(&outer.with_m1(i as u64), &problem.model, pf, nf)?;
            let prep = prepare(problem, quantity, alpha, &bundle)?;
            let mut values = Vec::with_capacity(m2);
            let family = inner.with_m1(i as u64).path_family();
            for j in 0..m2 {
                let path = draw_path_with(family.path_rng(j as u64), &problem.model, nf)?;
                values.push(evaluate(problem, &prep, &path)?.as_f64());
            }
            Ok(mean_var(&values))
        })
        .collect::<Result<_>>()?;

    let means: Vec<f64> = per_law.iter().map(|r| r.0).collect();
    let (mean, v1) = mean_var(&means);
    let mut clamped = v1.is_none();
    let v2 = if per_law.iter().all(|r| r.1.is_some()) {
        per_law.iter().map(|r| r.1.unwrap_or(0.0)).sum::<f64>() / m1 as f64
    } else {
        clamped = true;
        0.0
    };
    Ok(MixedDiffStats {
        alpha,
        quantity,
        mean,
        v1: v1.unwrap_or(0.0),
        v2,
        m1,
        m2,
        model_cost: h.work(alpha, m1 as f64, m2 as f64, 1.0, 1.0),
        wall_time: start.elapsed().as_secs_f64(),
        clamped,
    })
}

/// Estimator variance with importance sampling over the same estimator
/// without it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRatio {
    pub ratio: f64,
    pub with_control: MixedDiffStats,
    pub without_control: MixedDiffStats,
    /// The uncontrolled estimator variance was zero.
    pub degenerate: bool,
}

pub fn variance_ratio<T: Real>(
    problem: &Problem<T>,
    quantity: Quantity,
    alpha: MultiIndex,
    m1: usize,
    m2: usize,
    key: &StreamKey,
) -> Result<VarianceRatio> {
    let with_control = estimate_stats(problem, quantity, alpha, m1, m2, key)?;
    let without_control = estimate_stats(&problem.without_control(), quantity, alpha, m1, m2, key)?;
    let (a, b) = (with_control.estimator_variance(), without_control.estimator_variance());
    let degenerate = b == 0.0;
    let ratio = if degenerate {
        if a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    };
    Ok(VarianceRatio { ratio, with_control, without_control, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoupled::ConstantControl;
    use crate::models::make_kuramoto;

    fn kuramoto_problem(obs: Observable<f64>) -> Problem<f64> {
        let model = make_kuramoto(0.4, 1.0, 0.0, 0.2_f64.sqrt(), 0.2).unwrap();
        Problem::new(model, Hierarchy::kuramoto(), obs)
    }

    #[test]
    fn hierarchy_sizes_and_work() {
        let h = Hierarchy::kuramoto();
        assert_eq!((h.particles(0), h.particles(3)), (5, 40));
        assert_eq!((h.steps(0), h.steps(2)), (4, 16));
        assert_eq!(h.work(MultiIndex::ZERO, 10.0, 5.0, 1.0, 1.0), 2000.0);
        assert!(Hierarchy::new(5, 4, 1).is_err());
        assert!(Hierarchy::new(0, 4, 2).is_err());
    }

    #[test]
    fn multi_index_helpers() {
        let a = MultiIndex::new(2, 1);
        assert_eq!(a.back(1, 0), Some(MultiIndex::new(1, 1)));
        assert_eq!(a.back(0, 2), None);
        assert!(MultiIndex::new(1, 1).le(a));
        assert!(!MultiIndex::new(0, 2).le(a));
        assert_eq!(a.to_string(), "(2,1)");
    }

    #[test]
    fn constant_observable_differences_vanish() {
        let p = kuramoto_problem(Observable::constant(3.0));
        let key = StreamKey::new(1, StreamRole::OuterLaw);
        for &(a1, a2) in &[(0, 0), (1, 0), (0, 1), (2, 3)] {
            let alpha = MultiIndex::new(a1, a2);
            let s = sample_mixed_difference(&p, alpha, &key, &key.with_role(StreamRole::InnerPath)).unwrap();
            assert_eq!(s, if alpha == MultiIndex::ZERO { 3.0 } else { 0.0 });
        }
    }

    #[test]
    fn origin_reduces_to_level_sample() {
        let p = kuramoto_problem(Observable::mollified_indicator(0.5));
        let model = &p.model;
        let bundle = draw_bundle(&StreamKey::new(2, StreamRole::OuterLaw), model, 5, 4).unwrap();
        let path = draw_path(&StreamKey::new(2, StreamRole::InnerPath), model, 4).unwrap();
        let md = sample_from_noise(&p, Quantity::MixedDifference, MultiIndex::ZERO, &bundle, &path).unwrap();
        let lv = sample_from_noise(&p, Quantity::Level, MultiIndex::ZERO, &bundle, &path).unwrap();
        let dg = sample_from_noise(&p, Quantity::DiagonalDifference, MultiIndex::ZERO, &bundle, &path).unwrap();
        assert_eq!(md, lv);
        assert_eq!(dg, lv);
    }

    #[test]
    fn plain_sampler_telescopes() {
        let p = kuramoto_problem(Observable::mollified_indicator(0.5)).plain();
        let h = p.hierarchy;
        let bundle = draw_bundle(&StreamKey::new(3, StreamRole::OuterLaw), &p.model, h.particles(2), h.steps(2)).unwrap();
        let path = draw_path(&StreamKey::new(3, StreamRole::InnerPath), &p.model, h.steps(2)).unwrap();
        let mut sum = 0.0;
        for a1 in 0..=2 {
            for a2 in 0..=2 {
                sum += sample_from_noise(&p, Quantity::MixedDifference, MultiIndex::new(a1, a2), &bundle, &path).unwrap();
            }
        }
        let top = sample_from_noise(&p, Quantity::Level, MultiIndex::new(2, 2), &bundle, &path).unwrap();
        assert!((sum - top).abs() <= 1e-12 * top.abs().max(1e-300));
    }

    #[test]
    fn deterministic_model_has_zero_variances() {
        let model = make_kuramoto(0.0_f64, 1.0, 0.3, 0.0, 0.0).unwrap();
        let p = Problem::new(model, Hierarchy::kuramoto(), Observable::mollified_indicator(0.0));
        let s = estimate_stats(&p, Quantity::MixedDifference, MultiIndex::new(1, 1), 4, 3, &StreamKey::new(4, StreamRole::Pilot)).unwrap();
        assert_eq!((s.v1, s.v2), (0.0, 0.0));
        assert!(!s.clamped);
    }

    #[test]
    fn stats_independent_of_worker_count() {
        let p = kuramoto_problem(Observable::mollified_indicator(0.5)).with_control(Arc::new(ConstantControl(vec![0.3])));
        let key = StreamKey::new(5, StreamRole::Pilot);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_stats(&p, Quantity::MixedDifference, MultiIndex::new(1, 1), 12, 5, &key).unwrap())
        };
        let (a, b) = (run(1), run(3));
        assert_eq!((a.mean, a.v1, a.v2), (b.mean, b.v1, b.v2));
    }

    #[test]
    fn single_sample_marks_variance_clamped() {
        let p = kuramoto_problem(Observable::mollified_indicator(0.5));
        let s = estimate_stats(&p, Quantity::Level, MultiIndex::ZERO, 1, 1, &StreamKey::new(6, StreamRole::Pilot)).unwrap();
        assert!(s.clamped);
        assert_eq!((s.v1, s.v2), (0.0, 0.0));
    }

    #[test]
    fn zero_control_ratio_is_one() {
        let p = kuramoto_problem(Observable::mollified_indicator(0.5)).with_control(Arc::new(ConstantControl(vec![0.0])));
        let r = variance_ratio(&p, Quantity::Level, MultiIndex::new(1, 1), 10, 4, &StreamKey::new(7, StreamRole::Pilot)).unwrap();
        assert_eq!(r.ratio, 1.0);
    }

    #[test]
    fn off_diagonal_difference_rejected() {
        let p = kuramoto_problem(Observable::constant(1.0));
        let r = estimate_stats(&p, Quantity::DiagonalDifference, MultiIndex::new(1, 2), 2, 2, &StreamKey::new(8, StreamRole::Pilot));
        assert!(matches!(r, Err(Error::Hierarchy(_))));
    }
}
