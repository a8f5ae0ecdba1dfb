//! Profit-based multi-index sets, admissibility, boundaries, the complexity
//! constants of the work estimate, and an exhaustive optimality check for
//! profit level sets.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixed_difference::{Hierarchy, MixedDiffStats, MultiIndex};
use crate::scalar::{pmax, pmin, RateScalar};

/// Convergence rates of the bias (`b`), of `V1` (`w`), of `V2` (`s`) and of
/// the work (`γ`), all with respect to `τ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSet<S> {
    pub b1: S,
    pub b2: S,
    pub w1: S,
    pub w2: S,
    pub s1: S,
    pub s2: S,
    pub g1: S,
    pub g2: S,
    pub tau: usize,
    /// Bias constant, when fitted.
    pub qb: Option<f64>,
}

impl<S: RateScalar> RateSet<S> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(b: [S; 2], w: [S; 2], s: [S; 2], g: [S; 2], tau: usize) -> Self {
        let [b1, b2] = b;
        let [w1, w2] = w;
        let [s1, s2] = s;
        let [g1, g2] = g;
        Self { b1, b2, w1, w2, s1, s2, g1, g2, tau, qb: None }
    }

    /// `b = (1, 1)`, `w = (2, 2)`, `s = (2, 3/2)`, `γ = (1, 1)`, `τ = 2`.
    pub fn kuramoto() -> Self {
        let i = S::from_int;
        Self::new([i(1), i(1)], [i(2), i(2)], [i(2), i(3) / i(2)], [i(1), i(1)], 2)
    }

    pub fn to_f64(&self) -> RateSet<f64> {
        let f = |x: &S| x.to_f64_lossy();
        RateSet {
            b1: f(&self.b1),
            b2: f(&self.b2),
            w1: f(&self.w1),
            w2: f(&self.w2),
            s1: f(&self.s1),
            s2: f(&self.s2),
            g1: f(&self.g1),
            g2: f(&self.g2),
            tau: self.tau,
            qb: self.qb,
        }
    }

    fn two() -> S {
        S::from_int(2)
    }

    /// Unnormalised exponents `(1+γ₁−w₁)/2 + b₁`, `(γ₂−w₂)/2 + b₂`.
    fn bar_terms(&self) -> [S; 2] {
        let two = Self::two();
        [
            (S::one() + self.g1.clone() - self.w1.clone()) / two.clone() + self.b1.clone(),
            (self.g2.clone() - self.w2.clone()) / two + self.b2.clone(),
        ]
    }

    /// `(γ₁−s₁)/2 + b₁`, `(γ₂−s₂)/2 + b₂`.
    fn bbar_terms(&self) -> [S; 2] {
        let two = Self::two();
        [
            (self.g1.clone() - self.s1.clone()) / two.clone() + self.b1.clone(),
            (self.g2.clone() - self.s2.clone()) / two + self.b2.clone(),
        ]
    }
}

/// Normalised weighting vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights<S> {
    pub delta_bar: [S; 2],
    pub delta_bbar: [S; 2],
    pub c_bar: S,
    pub c_bbar: S,
    pub admissible: bool,
}

impl<S: RateScalar> Weights<S> {
    pub fn to_f64(&self) -> ([f64; 2], [f64; 2]) {
        let f = |v: &[S; 2]| [v[0].to_f64_lossy(), v[1].to_f64_lossy()];
        (f(&self.delta_bar), f(&self.delta_bbar))
    }
}

pub fn compute_weights<S: RateScalar>(rates: &RateSet<S>) -> Result<Weights<S>> {
    let bar = rates.bar_terms();
    let bbar = rates.bbar_terms();
    let c_bar = bar[0].clone() + bar[1].clone();
    let c_bbar = bbar[0].clone() + bbar[1].clone();
    if c_bar.is_zero() {
        return Err(Error::DegenerateRates("the first weight normaliser vanishes".into()));
    }
    if c_bbar.is_zero() {
        return Err(Error::DegenerateRates("the second weight normaliser vanishes".into()));
    }
    let delta_bar = [bar[0].clone() / c_bar.clone(), bar[1].clone() / c_bar.clone()];
    let delta_bbar = [bbar[0].clone() / c_bbar.clone(), bbar[1].clone() / c_bbar.clone()];
    let admissible = delta_bar.iter().chain(delta_bbar.iter()).all(|d| d.is_positive());
    Ok(Weights { delta_bar, delta_bbar, c_bar, c_bbar, admissible })
}

/// Names the violated admissibility inequality, if any.
pub fn admissibility_violation<S: RateScalar>(rates: &RateSet<S>) -> Option<String> {
    let bar = rates.bar_terms();
    let bbar = rates.bbar_terms();
    if !bar[0].is_positive() || !bbar[0].is_positive() {
        return Some(format!(
            "2 b1 >= max(w1 - 1, s1) - g1 fails for b1={:?}, w1={:?}, s1={:?}, g1={:?}",
            rates.b1, rates.w1, rates.s1, rates.g1
        ));
    }
    if !bar[1].is_positive() || !bbar[1].is_positive() {
        return Some(format!(
            "2 b2 >= max(w2, s2) - g2 fails for b2={:?}, w2={:?}, s2={:?}, g2={:?}",
            rates.b2, rates.w2, rates.s2, rates.g2
        ));
    }
    None
}

/// A finite set of multi-indices together with the level that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSet {
    pub members: BTreeSet<MultiIndex>,
    pub level: f64,
}

impl IndexSet {
    pub fn from_members(members: impl IntoIterator<Item = MultiIndex>, level: f64) -> Self {
        Self { members: members.into_iter().collect(), level }
    }

    pub fn contains(&self, alpha: MultiIndex) -> bool {
        self.members.contains(&alpha)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = MultiIndex> + '_ {
        self.members.iter().copied()
    }

    pub fn is_downward_closed(&self) -> bool {
        self.iter().all(|a| {
            a.back(1, 0).is_none_or(|b| self.contains(b)) && a.back(0, 1).is_none_or(|b| self.contains(b))
        })
    }

    pub fn max_a1(&self) -> usize {
        self.iter().map(|a| a.a1).max().unwrap_or(0)
    }

    pub fn max_a2(&self) -> usize {
        self.iter().map(|a| a.a2).max().unwrap_or(0)
    }
}

fn enumerate_below(mut inside: impl FnMut(MultiIndex) -> bool) -> BTreeSet<MultiIndex> {
    let mut out = BTreeSet::new();
    let mut a1 = 0;
    while inside(MultiIndex::new(a1, 0)) {
        let mut a2 = 0;
        while inside(MultiIndex::new(a1, a2)) {
            out.insert(MultiIndex::new(a1, a2));
            a2 += 1;
        }
        a1 += 1;
    }
    out
}

/// `{α : exp(δ̄·α) + exp(δ̄̄·α) ≤ L}`.
pub fn build_index_set<S: RateScalar>(weights: &Weights<S>, level: f64) -> Result<IndexSet> {
    if !weights.admissible {
        return Err(Error::Inadmissible("weights must be positive to give a finite set".into()));
    }
    let (d, dd) = weights.to_f64();
    let f = |a: MultiIndex| {
        let (x, y) = (a.a1 as f64, a.a2 as f64);
        (d[0] * x + d[1] * y).exp() + (dd[0] * x + dd[1] * y).exp()
    };
    Ok(IndexSet { members: enumerate_below(|a| f(a) <= level), level })
}

/// `{α ∈ ℐ : α+(1,0) ∉ ℐ or α+(0,1) ∉ ℐ}`.
pub fn boundary(set: &IndexSet) -> BTreeSet<MultiIndex> {
    set.iter()
        .filter(|a| !set.contains(a.shifted(1, 0)) || !set.contains(a.shifted(0, 1)))
        .collect()
}

/// The log-scaled exponent vectors of the profit model:
/// `ρ = ln τ (b₁, b₂)`, `ḡ = ln τ ((1+γ₁−w₁)/2, (γ₂−w₂)/2)`,
/// `ḡ̄ = ln τ ((γ₁−s₁)/2, (γ₂−s₂)/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfitExponents {
    pub rho: [f64; 2],
    pub g_bar: [f64; 2],
    pub g_bbar: [f64; 2],
}

impl ProfitExponents {
    pub fn from_rates<S: RateScalar>(rates: &RateSet<S>) -> Self {
        let r = rates.to_f64();
        let lt = (rates.tau as f64).ln();
        Self {
            rho: [lt * r.b1, lt * r.b2],
            g_bar: [lt * (1.0 + r.g1 - r.w1) / 2.0, lt * (r.g2 - r.w2) / 2.0],
            g_bbar: [lt * (r.g1 - r.s1) / 2.0, lt * (r.g2 - r.s2) / 2.0],
        }
    }

    fn dot(v: [f64; 2], a: MultiIndex) -> f64 {
        v[0] * a.a1 as f64 + v[1] * a.a2 as f64
    }

    /// Work model `exp(ḡ·α) + exp(ḡ̄·α)`.
    pub fn work(&self, a: MultiIndex) -> f64 {
        Self::dot(self.g_bar, a).exp() + Self::dot(self.g_bbar, a).exp()
    }

    /// Bias contribution `exp(−ρ·α)`.
    pub fn bias(&self, a: MultiIndex) -> f64 {
        (-Self::dot(self.rho, a)).exp()
    }

    pub fn profit(&self, a: MultiIndex) -> f64 {
        self.bias(a) / self.work(a)
    }
}

/// `exp(−ρ·α) / (exp(ḡ·α) + exp(ḡ̄·α))`.
pub fn profit<S: RateScalar>(alpha: MultiIndex, rates: &RateSet<S>) -> f64 {
    ProfitExponents::from_rates(rates).profit(alpha)
}

/// `{α : profit(α) ≥ v}`; requires admissible rates.
pub fn profit_level_set<S: RateScalar>(rates: &RateSet<S>, v: f64) -> Result<IndexSet> {
    if let Some(why) = admissibility_violation(rates) {
        return Err(Error::Inadmissible(why));
    }
    let e = ProfitExponents::from_rates(rates);
    Ok(IndexSet { members: enumerate_below(|a| e.profit(a) >= v), level: v })
}

/// `|mean| / (√(V1 P² N) + √(V2 P N))`; `+∞` when the denominator vanishes.
pub fn empirical_profit(stats: &MixedDiffStats, hierarchy: &Hierarchy) -> f64 {
    let p = hierarchy.particles(stats.alpha.a1) as f64;
    let n = hierarchy.steps(stats.alpha.a2) as f64;
    let den = (stats.v1 * p * p * n).sqrt() + (stats.v2 * p * n).sqrt();
    if den == 0.0 {
        f64::INFINITY
    } else {
        stats.mean.abs() / den
    }
}

/// Constants of the asymptotic work estimate. `chi*` and `eta*` are stored
/// per unit of `ln τ`; every ratio below is exact for rational input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport<S> {
    pub chi11: S,
    pub chi12: S,
    pub chi21: S,
    pub chi22: S,
    pub eta1: S,
    pub eta2: S,
    pub e1: u8,
    pub e2: u8,
    pub aleph1: u8,
    pub aleph2: u8,
    pub d1: u8,
    pub d2: u8,
    pub varsigma: S,
    pub varrho: S,
    pub psi: S,
    pub condition_holds: bool,
    /// `2 + 2ς`: work grows like `TOL^-(2+2ς)`.
    pub predicted_exponent: S,
    /// `2ϱ`: power of `log TOL⁻¹`.
    pub predicted_log_power: S,
}

impl<S: RateScalar> ComplexityReport<S> {
    pub fn log_tau_scaled(&self, tau: usize) -> [f64; 6] {
        let lt = (tau as f64).ln();
        [&self.chi11, &self.chi12, &self.chi21, &self.chi22, &self.eta1, &self.eta2].map(|x| x.to_f64_lossy() * lt)
    }
}

fn ratio<S: RateScalar>(num: S, den: S, name: &str) -> Result<S> {
    if den.is_zero() {
        Err(Error::DegenerateRates(format!("{name} has a zero denominator")))
    } else {
        Ok(num / den)
    }
}

fn tie_flag<S: RateScalar>(a: &S, b: &S) -> u8 {
    if a.ties(b) {
        2
    } else {
        1
    }
}

pub fn complexity_constants<S: RateScalar>(rates: &RateSet<S>) -> Result<ComplexityReport<S>> {
    let w = compute_weights(rates)?;
    let r = rates;
    let two = S::from_int(2);
    let one = S::one();
    let zero = S::zero();
    let (b1x2, b2x2) = (two.clone() * r.b1.clone(), two.clone() * r.b2.clone());
    let u1 = one.clone() + r.g1.clone() - r.w1.clone();
    let u2 = r.g2.clone() - r.w2.clone();
    let v1 = r.g1.clone() - r.s1.clone();
    let v2 = r.g2.clone() - r.s2.clone();
    let du1 = u1.clone() + b1x2.clone();
    let du2 = u2.clone() + b2x2.clone();
    let dv1 = v1.clone() + b1x2.clone();
    let dv2 = v2.clone() + b2x2.clone();

    let chi11 = w.c_bar.clone()
        * pmax(ratio(u1.clone(), du1.clone(), "chi11 (first term)")?, ratio(u2.clone(), du2.clone(), "chi11 (second term)")?);
    let chi12 = w.c_bar.clone()
        * pmax(ratio(v1.clone(), du1.clone(), "chi12 (first term)")?, ratio(v2.clone(), du2.clone(), "chi12 (second term)")?);
    let chi21 = w.c_bbar.clone()
        * pmax(ratio(u1.clone(), dv1.clone(), "chi21 (first term)")?, ratio(u2.clone(), dv2.clone(), "chi21 (second term)")?);
    let chi22 = w.c_bbar.clone()
        * pmax(ratio(v1.clone(), dv1.clone(), "chi22 (first term)")?, ratio(v2.clone(), dv2.clone(), "chi22 (second term)")?);
    let eta1 = w.c_bar.clone()
        * pmin(ratio(b1x2.clone(), du1.clone(), "eta1 (first term)")?, ratio(b2x2.clone(), du2.clone(), "eta1 (second term)")?);
    let eta2 = w.c_bbar.clone()
        * pmin(ratio(b1x2.clone(), dv1.clone(), "eta2 (first term)")?, ratio(b2x2.clone(), dv2.clone(), "eta2 (second term)")?);

    let e1 = tie_flag(&ratio(u1.clone(), b1x2.clone(), "e1")?, &ratio(u2.clone(), b2x2.clone(), "e1")?);
    let e2 = tie_flag(&ratio(v1.clone(), b1x2.clone(), "e2")?, &ratio(v2.clone(), b2x2.clone(), "e2")?);
    let aleph1 = tie_flag(&ratio(v1.clone(), du1.clone(), "aleph1")?, &ratio(v2.clone(), du2.clone(), "aleph1")?);
    let aleph2 = tie_flag(&ratio(u1.clone(), dv1.clone(), "aleph2")?, &ratio(u2.clone(), dv2.clone(), "aleph2")?);
    let d1 = u8::from(r.w1.ties(&(one.clone() + r.g1.clone()))) + u8::from(r.w2.ties(&r.g2));
    let d2 = u8::from(r.s1.ties(&r.g1)) + u8::from(r.s2.ties(&r.g2));

    let q11 = ratio(chi11.clone(), eta1.clone(), "chi11 / eta1")?;
    let q12 = ratio(chi12.clone(), eta1.clone(), "chi12 / eta1")?;
    let q21 = ratio(chi21.clone(), eta2.clone(), "chi21 / eta2")?;
    let q22 = ratio(chi22.clone(), eta2.clone(), "chi22 / eta2")?;
    let varsigma = pmin(
        pmax(pmax(zero.clone(), q11.clone()), q12.clone()),
        pmax(pmax(zero.clone(), q21.clone()), q22.clone()),
    );
    let from_int = |n: u8| S::from_int(n as i64);
    let varrho = if varsigma.ties(&zero) {
        from_int(d1.max(d2))
    } else if varsigma.ties(&q11) {
        (from_int(e1) - one.clone()) * (one.clone() + q11.clone())
    } else if varsigma.ties(&q12) {
        (from_int(aleph1) - one.clone()) + (from_int(e1) - one.clone()) * q12.clone()
    } else if varsigma.ties(&q21) {
        (from_int(aleph2) - one.clone()) + (from_int(e2) - one.clone()) * q21.clone()
    } else {
        (from_int(e2) - one.clone()) * (one.clone() + q22.clone())
    };

    let psi = pmin(
        pmin(ratio(one.clone() + r.g1.clone(), du1.clone(), "Psi (first term)")?, ratio(r.g2.clone(), du2, "Psi (second term)")?),
        pmin(ratio(one.clone() + r.g1.clone(), dv1, "Psi (third term)")?, ratio(r.g2.clone(), dv2, "Psi (fourth term)")?),
    );
    let bound = one.clone() + varsigma.clone();
    let condition_holds = psi < bound || psi.ties(&bound);
    let predicted_exponent = two.clone() + two.clone() * varsigma.clone();
    let predicted_log_power = two * varrho.clone();
    Ok(ComplexityReport {
        chi11,
        chi12,
        chi21,
        chi22,
        eta1,
        eta2,
        e1,
        e2,
        aleph1,
        aleph2,
        d1,
        d2,
        varsigma,
        varrho,
        psi,
        condition_holds,
        predicted_exponent,
        predicted_log_power,
    })
}

/// Outcome of the exhaustive search over subsets of `{0..bound}²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaCheck {
    pub candidate: BTreeSet<MultiIndex>,
    /// A subset with strictly less work and no more bias, if one exists.
    pub dominating: Option<BTreeSet<MultiIndex>>,
    pub subsets_checked: u64,
}

impl LemmaCheck {
    pub fn undominated(&self) -> bool {
        self.dominating.is_none()
    }
}

fn universe(bound: usize) -> Vec<MultiIndex> {
    (0..=bound).flat_map(|a1| (0..=bound).map(move |a2| MultiIndex::new(a1, a2))).collect()
}

/// Searches every subset `S` of `{0..bound}²` for one with
/// `W̃(S) < W̃(candidate)` and `B̃(S) ≤ B̃(candidate)`, where `W̃` sums the
/// work model over `S` and `B̃` sums `exp(−ρ·α)` over the universe minus `S`.
pub fn find_dominating(candidate: &BTreeSet<MultiIndex>, exps: &ProfitExponents, bound: usize) -> Result<LemmaCheck> {
    if bound > 4 {
        return Err(Error::InvalidParameter(format!("universe bound {bound} exceeds 4")));
    }
    let items = universe(bound);
    if candidate.iter().any(|a| a.a1 > bound || a.a2 > bound) {
        return Err(Error::InvalidParameter("candidate leaves the universe".into()));
    }
    let work: Vec<f64> = items.iter().map(|&a| exps.work(a)).collect();
    let bias: Vec<f64> = items.iter().map(|&a| exps.bias(a)).collect();
    let total_bias: f64 = bias.iter().sum();
    let mask_of = |s: &BTreeSet<MultiIndex>| -> u64 {
        items.iter().enumerate().filter(|(_, a)| s.contains(a)).fold(0, |m, (i, _)| m | (1 << i))
    };
    let eval = |mask: u64| -> (f64, f64) {
        let (mut w, mut b) = (0.0, 0.0);
        for i in 0..items.len() {
            if mask >> i & 1 == 1 {
                w += work[i];
                b += bias[i];
            }
        }
        (w, total_bias - b)
    };
    let (w0, b0) = eval(mask_of(candidate));
    let tol = 1e-12;
    let n = 1u64 << items.len();
    for mask in 0..n {
        let (w, b) = eval(mask);
        if w < w0 * (1.0 - tol) && b <= b0 + tol * total_bias {
            let set = items.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, a)| *a).collect();
            return Ok(LemmaCheck { candidate: candidate.clone(), dominating: Some(set), subsets_checked: mask + 1 });
        }
    }
    Ok(LemmaCheck { candidate: candidate.clone(), dominating: None, subsets_checked: n })
}

/// The profit level set `{α : profit ≥ v}` intersected with `{0..bound}²`,
/// checked for dominance by exhaustive enumeration.
pub fn check_lemma_optimality(
    rho: [f64; 2],
    g_bar: [f64; 2],
    g_bbar: [f64; 2],
    bound: usize,
    v: f64,
) -> Result<LemmaCheck> {
    let exps = ProfitExponents { rho, g_bar, g_bbar };
    let level: BTreeSet<MultiIndex> = universe(bound).into_iter().filter(|&a| exps.profit(a) >= v).collect();
    find_dominating(&level, &exps, bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Rational64;
    use proptest::prelude::*;

    type Q = Rational64;

    fn q(n: i64, d: i64) -> Q {
        Q::new(n, d)
    }

    #[test]
    fn kuramoto_weights_exact() {
        let w = compute_weights(&RateSet::<Q>::kuramoto()).unwrap();
        assert_eq!(w.delta_bar, [q(2, 3), q(1, 3)]);
        assert_eq!(w.delta_bbar, [q(2, 5), q(3, 5)]);
        assert_eq!((w.c_bar, w.c_bbar), (q(3, 2), q(5, 4)));
        assert!(w.admissible);
    }

    #[test]
    fn kuramoto_complexity_exact() {
        let c = complexity_constants(&RateSet::<Q>::kuramoto()).unwrap();
        assert_eq!(c.varsigma, q(0, 1));
        assert_eq!(c.varrho, q(1, 1));
        assert_eq!(c.psi, q(2, 3));
        assert_eq!((c.d1, c.d2), (1, 0));
        assert!(c.condition_holds);
        assert_eq!(c.predicted_exponent, q(2, 1));
        assert_eq!(c.predicted_log_power, q(2, 1));
        assert_eq!(c.chi11, q(0, 1));
        assert_eq!(c.eta1, q(3, 2));
    }

    #[test]
    fn isotropic_regimes() {
        let iso = |b: i64, s: (i64, i64), g: i64| {
            let s = q(s.0, s.1);
            RateSet::new([q(b, 1); 2], [s; 2], [s; 2], [q(g, 1); 2], 2)
        };
        let fast = complexity_constants(&iso(2, (3, 1), 1)).unwrap();
        assert_eq!(fast.varsigma, q(0, 1));
        let slow = complexity_constants(&iso(1, (3, 2), 1)).unwrap();
        assert_eq!(slow.predicted_exponent, q(2, 1) + (q(2, 1) - q(3, 2)) / q(1, 1));
    }

    #[test]
    fn inadmissible_rates_detected() {
        let r = RateSet::new([1.0, 0.1], [2.0, 2.0], [2.0, 1.5], [1.0, 1.0], 2);
        let w = compute_weights(&r).unwrap();
        assert!(!w.admissible);
        assert!(admissibility_violation(&r).unwrap().contains("b2"));
        assert!(matches!(build_index_set(&w, 10.0), Err(Error::Inadmissible(_))));
    }

    #[test]
    fn degenerate_normaliser() {
        let r = RateSet::new([q(0, 1); 2], [q(1, 1), q(1, 1)], [q(1, 1); 2], [q(0, 1), q(1, 1)], 2);
        assert!(matches!(compute_weights(&r), Err(Error::DegenerateRates(_))));
    }

    #[test]
    fn index_set_examples() {
        let w = compute_weights(&RateSet::<f64>::kuramoto()).unwrap();
        let s = build_index_set(&w, 2.0).unwrap();
        assert_eq!(s.members.into_iter().collect::<Vec<_>>(), vec![MultiIndex::ZERO]);
        let l = (2.0_f64 / 3.0).exp() + (0.4_f64).exp() + 1e-9;
        let s = build_index_set(&w, l).unwrap();
        assert!(s.contains(MultiIndex::new(1, 0)));
        assert!(s.is_downward_closed());
    }

    #[test]
    fn boundary_examples() {
        let single = IndexSet::from_members([MultiIndex::ZERO], 2.0);
        assert_eq!(boundary(&single), [MultiIndex::ZERO].into_iter().collect());
        let rect = IndexSet::from_members((0..=2).flat_map(|a| (0..=1).map(move |b| MultiIndex::new(a, b))), 0.0);
        let expected: BTreeSet<_> =
            [(2, 0), (2, 1), (0, 1), (1, 1)].into_iter().map(|(a, b)| MultiIndex::new(a, b)).collect();
        assert_eq!(boundary(&rect), expected);
    }

    #[test]
    fn profit_at_origin_and_monotone() {
        let r = RateSet::<f64>::kuramoto();
        assert_eq!(profit(MultiIndex::ZERO, &r), 0.5);
        for a in 0..5 {
            for b in 0..5 {
                let p = profit(MultiIndex::new(a, b), &r);
                assert!(profit(MultiIndex::new(a + 1, b), &r) < p);
                assert!(profit(MultiIndex::new(a, b + 1), &r) < p);
            }
        }
    }

    #[test]
    fn lemma_holds_for_kuramoto() {
        let e = ProfitExponents::from_rates(&RateSet::<f64>::kuramoto());
        let mut profits: Vec<f64> = universe(3).iter().map(|&a| e.profit(a)).collect();
        profits.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let v = profits[5];
        let check = check_lemma_optimality(e.rho, e.g_bar, e.g_bbar, 3, v).unwrap();
        assert!(check.candidate.len() >= 6);
        assert!(check.undominated());
        assert_eq!(check.subsets_checked, 1 << 16);
    }

    #[test]
    fn lemma_trivial_level() {
        let e = ProfitExponents::from_rates(&RateSet::<f64>::kuramoto());
        let check = check_lemma_optimality(e.rho, e.g_bar, e.g_bbar, 2, 0.5).unwrap();
        assert_eq!(check.candidate, [MultiIndex::ZERO].into_iter().collect());
        assert!(check.undominated());
    }

    proptest! {
        #[test]
        fn index_sets_downward_closed(b1 in 0.5_f64..2.0, b2 in 0.5_f64..2.0, l in 2.0_f64..200.0) {
            let r = RateSet::new([b1, b2], [2.0, 2.0], [2.0, 1.5], [1.0, 1.0], 2);
            let w = compute_weights(&r).unwrap();
            prop_assume!(w.admissible);
            let s = build_index_set(&w, l).unwrap();
            prop_assert!(s.is_downward_closed());
            prop_assert!(s.contains(MultiIndex::ZERO));
            let p = profit_level_set(&r, 1.0 / l).unwrap();
            prop_assert!(p.is_downward_closed());
            prop_assert!(boundary(&s).is_subset(&s.members));
        }
    }
}
