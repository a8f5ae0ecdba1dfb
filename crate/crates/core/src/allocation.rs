//! Optimal outer and inner sample counts under a relative variance budget,
//! and the work model of a multi-index estimator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixed_difference::{Hierarchy, MultiIndex};

/// Standard normal quantile `Φ⁻¹(p)` by Acklam's rational approximation
/// (relative error below `1.2e-9` on `(0, 1)`).
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00, 3.754408661907416e+00];
    const LOW: f64 = 0.02425;
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    }
}

/// `C_ν`, the `(1 − ν/2)` quantile.
pub fn confidence_constant(nu: f64) -> f64 {
    normal_quantile(1.0 - nu / 2.0)
}

/// Per-index variances `(V1, V2)`.
pub type VarianceMap = BTreeMap<MultiIndex, (f64, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationEntry {
    pub alpha: MultiIndex,
    pub m1: usize,
    pub m2: usize,
    /// Real-valued optimum before rounding.
    pub m1_real: f64,
    pub m1m2_real: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub entries: Vec<AllocationEntry>,
    pub theta: f64,
    pub tol_r: f64,
    pub c_nu: f64,
    pub qoi_estimate: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl Allocation {
    pub fn get(&self, alpha: MultiIndex) -> Option<&AllocationEntry> {
        self.entries.iter().find(|e| e.alpha == alpha)
    }

    /// `(θ TOL_r |qoi| / C_ν)²`.
    pub fn variance_budget(&self) -> f64 {
        (self.theta * self.tol_r * self.qoi_estimate.abs() / self.c_nu).powi(2)
    }

    /// `Σ V1/M1 + V2/(M1 M2)` with the rounded counts.
    pub fn estimator_variance(&self, variances: &VarianceMap) -> f64 {
        self.entries
            .iter()
            .map(|e| {
                let (v1, v2) = variances.get(&e.alpha).copied().unwrap_or((0.0, 0.0));
                v1 / e.m1 as f64 + v2 / (e.m1 as f64 * e.m2 as f64)
            })
            .sum()
    }
}

fn unit_costs(h: &Hierarchy, alpha: MultiIndex, g1: f64, g2: f64) -> (f64, f64) {
    let p = h.particles(alpha.a1) as f64;
    let n = h.steps(alpha.a2) as f64;
    (n.powf(g2) * p.powf(1.0 + g1), n.powf(g2) * p.powf(g1))
}

/// Lagrangian optimum of the work under
/// `Σ V1/M1 + V2/(M1 M2) ≤ (θ TOL_r qoi / C_ν)²`, then rounded up so that
/// `M1 ≥ ℳ₁` and `M1 M2 ≥ ℳ̃`.
#[allow(clippy::too_many_arguments)]
pub fn optimal_samples(
    variances: &VarianceMap,
    hierarchy: &Hierarchy,
    tol_r: f64,
    theta: f64,
    nu: f64,
    qoi: f64,
    gamma1: f64,
    gamma2: f64,
) -> Result<Allocation> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidParameter(format!("theta must lie in (0, 1), got {theta}")));
    }
    if !(tol_r > 0.0) {
        return Err(Error::InvalidParameter(format!("tol_r must be positive, got {tol_r}")));
    }
    if !(nu > 0.0 && nu < 1.0) {
        return Err(Error::InvalidParameter(format!("nu must lie in (0, 1), got {nu}")));
    }
    if qoi == 0.0 || !qoi.is_finite() {
        return Err(Error::ZeroQoi(format!("quantity of interest estimate is {qoi}")));
    }
    if variances.values().any(|&(a, b)| a < 0.0 || b < 0.0 || !a.is_finite() || !b.is_finite()) {
        return Err(Error::InvalidParameter("variances must be finite and nonnegative".into()));
    }
    let c_nu = confidence_constant(nu);
    let scale = (c_nu / (theta * tol_r * qoi)).powi(2);
    let sum: f64 = variances
        .iter()
        .map(|(&a, &(v1, v2))| {
            let (ca, cc) = unit_costs(hierarchy, a, gamma1, gamma2);
            (v1 * ca).sqrt() + (v2 * cc).sqrt()
        })
        .sum();
    let entries = variances
        .iter()
        .map(|(&alpha, &(v1, v2))| {
            let (ca, cc) = unit_costs(hierarchy, alpha, gamma1, gamma2);
            let m1_real = scale * (v1 / ca).sqrt() * sum;
            let m1m2_real = scale * (v2 / cc).sqrt() * sum;
            let m1 = (m1_real.ceil() as usize).max(1);
            let m2 = ((m1m2_real / m1 as f64).ceil() as usize).max(1);
            AllocationEntry { alpha, m1, m2, m1_real, m1m2_real }
        })
        .collect();
    Ok(Allocation { entries, theta, tol_r, c_nu, qoi_estimate: qoi, gamma1, gamma2 })
}

/// `Σ M1 N^γ₂ P^{1+γ₁} + M1 M2 N^γ₂ P^γ₁`.
pub fn work_model(allocation: &Allocation, hierarchy: &Hierarchy, gamma1: f64, gamma2: f64) -> f64 {
    allocation
        .entries
        .iter()
        .map(|e| hierarchy.work(e.alpha, e.m1 as f64, e.m2 as f64, gamma1, gamma2))
        .sum()
}

/// Work of the real-valued optimum, `(C_ν/(θ TOL_r qoi))² (Σ √(V1 a) + √(V2 c))²`.
pub fn optimal_real_work(allocation: &Allocation, variances: &VarianceMap, hierarchy: &Hierarchy) -> f64 {
    let sum: f64 = variances
        .iter()
        .map(|(&a, &(v1, v2))| {
            let (ca, cc) = unit_costs(hierarchy, a, allocation.gamma1, allocation.gamma2);
            (v1 * ca).sqrt() + (v2 * cc).sqrt()
        })
        .sum();
    sum * sum / allocation.variance_budget()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn quantile_matches_reference() {
        assert!((confidence_constant(0.05) - 1.959_963_984_540_054).abs() < 1e-8);
        let n = Normal::new(0.0, 1.0).unwrap();
        for &p in &[1e-10, 1e-4, 0.01, 0.02425, 0.3, 0.5, 0.8, 0.975, 0.999_999] {
            let exact = n.inverse_cdf(p);
            assert!((normal_quantile(p) - exact).abs() <= 1e-8 * exact.abs().max(1.0), "p = {p}");
        }
    }

    fn single(v1: f64, v2: f64) -> VarianceMap {
        [(MultiIndex::ZERO, (v1, v2))].into_iter().collect()
    }

    #[test]
    fn single_index_without_inner_variance() {
        let h = Hierarchy::kuramoto();
        let a = optimal_samples(&single(3.0, 0.0), &h, 0.1, 0.5, 0.05, 2.0, 1.0, 1.0).unwrap();
        let c = confidence_constant(0.05);
        let expected = ((c / (0.5 * 0.1 * 2.0)).powi(2) * 3.0).ceil() as usize;
        assert_eq!(a.entries[0].m1, expected);
        assert_eq!(a.entries[0].m2, 1);
    }

    #[test]
    fn halving_tolerance_quadruples() {
        let h = Hierarchy::kuramoto();
        let v: VarianceMap = [(MultiIndex::ZERO, (1.0, 4.0)), (MultiIndex::new(1, 0), (0.1, 0.3))].into_iter().collect();
        let a = optimal_samples(&v, &h, 0.2, 0.5, 0.05, 1.0, 1.0, 1.0).unwrap();
        let b = optimal_samples(&v, &h, 0.1, 0.5, 0.05, 1.0, 1.0, 1.0).unwrap();
        for (x, y) in a.entries.iter().zip(&b.entries) {
            assert!((y.m1_real / x.m1_real - 4.0).abs() < 1e-12);
            assert!((y.m1m2_real / x.m1m2_real - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_qoi_rejected() {
        let h = Hierarchy::kuramoto();
        assert!(matches!(optimal_samples(&single(1.0, 1.0), &h, 0.1, 0.5, 0.05, 0.0, 1.0, 1.0), Err(Error::ZeroQoi(_))));
    }

    #[test]
    fn work_examples() {
        let h1 = Hierarchy::new(1, 1, 2).unwrap();
        let one = |m1, m2| Allocation {
            entries: vec![AllocationEntry { alpha: MultiIndex::ZERO, m1, m2, m1_real: 0.0, m1m2_real: 0.0 }],
            theta: 0.5,
            tol_r: 0.1,
            c_nu: 1.96,
            qoi_estimate: 1.0,
            gamma1: 1.0,
            gamma2: 1.0,
        };
        assert_eq!(work_model(&one(1, 1), &h1, 1.0, 1.0), 2.0);
        assert_eq!(work_model(&one(10, 5), &Hierarchy::kuramoto(), 1.0, 1.0), 2000.0);
    }

    proptest! {
        #[test]
        fn ceilings_meet_the_budget(
            vs in prop::collection::vec((0.0_f64..10.0, 0.0_f64..10.0), 1..6),
            tol in 0.01_f64..0.5,
            qoi in 0.001_f64..10.0,
        ) {
            let h = Hierarchy::kuramoto();
            let v: VarianceMap = vs.iter().enumerate().map(|(i, &x)| (MultiIndex::new(i, i % 2), x)).collect();
            prop_assume!(v.values().any(|&(a, b)| a + b > 0.0));
            let a = optimal_samples(&v, &h, tol, 0.5, 0.05, qoi, 1.0, 1.0).unwrap();
            prop_assert!(a.estimator_variance(&v) <= a.variance_budget() * (1.0 + 1e-12));
            prop_assert!(a.entries.iter().all(|e| e.m1 >= 1 && e.m2 >= 1));
        }

        #[test]
        fn work_monotone_in_counts(m1 in 1usize..100, m2 in 1usize..100, a1 in 0usize..4, a2 in 0usize..4) {
            let h = Hierarchy::kuramoto();
            let w = |m1: usize, m2: usize, a: MultiIndex| h.work(a, m1 as f64, m2 as f64, 1.0, 1.0);
            let a = MultiIndex::new(a1, a2);
            prop_assert!(w(m1 + 1, m2, a) >= w(m1, m2, a));
            prop_assert!(w(m1, m2 + 1, a) >= w(m1, m2, a));
            prop_assert!(w(m1, m2, a.shifted(1, 0)) >= w(m1, m2, a));
            prop_assert!(w(m1, m2, a.shifted(0, 1)) >= w(m1, m2, a));
        }
    }
}
