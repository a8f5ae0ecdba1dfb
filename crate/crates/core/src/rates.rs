//! Pilot-based fits of the bias and variance decay rates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index_sets::RateSet;
use crate::mixed_difference::{MixedDiffStats, MultiIndex};

/// Which moment a fit describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Moment {
    Mean,
    V1,
    V2,
}

/// One shared-slope fit along an axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisFit {
    pub moment: Moment,
    /// 1 for the particle axis, 2 for the time axis.
    pub axis: u8,
    /// Decay rate: minus the fitted slope of `log_τ y` against the level.
    pub rate: f64,
    /// Intercepts for the other component fixed at 0 and 1.
    pub intercepts: Vec<f64>,
    pub residual_rms: f64,
    pub used: Vec<MultiIndex>,
    /// Points dropped because the moment was not positive.
    pub excluded: Vec<MultiIndex>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub rates: RateSet<f64>,
    pub fits: Vec<AxisFit>,
    pub levels: (usize, usize),
}

fn value(s: &MixedDiffStats, m: Moment) -> f64 {
    match m {
        Moment::Mean => s.mean.abs(),
        Moment::V1 => s.v1,
        Moment::V2 => s.v2,
    }
}

fn along(axis: u8, level: usize, row: usize) -> MultiIndex {
    if axis == 1 {
        MultiIndex::new(level, row)
    } else {
        MultiIndex::new(row, level)
    }
}

/// Least-squares weight of a point in log space. Means get their
/// delta-method precision `(mean / se)²`; variances are weighted equally.
fn weight(s: &MixedDiffStats, m: Moment) -> f64 {
    if m != Moment::Mean {
        return 1.0;
    }
    let se2 = s.estimator_variance();
    let w = s.mean * s.mean / se2;
    if w.is_finite() && w > 0.0 {
        w
    } else {
        1.0
    }
}

/// Weighted least squares for `log_τ y = c_row − rate · level` with one
/// intercept per row and a common slope.
fn fit_axis(
    stats: &BTreeMap<MultiIndex, MixedDiffStats>,
    tau: usize,
    moment: Moment,
    axis: u8,
    levels: (usize, usize),
) -> Result<AxisFit> {
    let lt = (tau as f64).ln();
    let rows = [0usize, 1];
    let mut pts: Vec<(usize, f64, f64, f64)> = Vec::new();
    let (mut used, mut excluded) = (Vec::new(), Vec::new());
    for (ri, &row) in rows.iter().enumerate() {
        for level in levels.0..=levels.1 {
            let a = along(axis, level, row);
            let Some(s) = stats.get(&a) else { continue };
            let y = value(s, moment);
            if y > 0.0 && y.is_finite() {
                pts.push((ri, level as f64, y.ln() / lt, weight(s, moment)));
                used.push(a);
            } else {
                excluded.push(a);
            }
        }
    }
    if pts.len() < 3 {
        return Err(Error::Fit(format!(
            "{moment:?} along axis {axis}: {} usable points, at least 3 needed",
            pts.len()
        )));
    }
    let mut means = Vec::new();
    for ri in 0..rows.len() {
        let g: Vec<&(usize, f64, f64, f64)> = pts.iter().filter(|p| p.0 == ri).collect();
        if g.is_empty() {
            means.push(None);
            continue;
        }
        let sw: f64 = g.iter().map(|p| p.3).sum();
        means.push(Some((
            g.iter().map(|p| p.3 * p.1).sum::<f64>() / sw,
            g.iter().map(|p| p.3 * p.2).sum::<f64>() / sw,
        )));
    }
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(ri, x, y, w) in &pts {
        let (mx, my) = means[ri].expect("row has points");
        sxy += w * (x - mx) * (y - my);
        sxx += w * (x - mx) * (x - mx);
    }
    if sxx == 0.0 {
        return Err(Error::Fit(format!("{moment:?} along axis {axis}: levels do not vary")));
    }
    let slope = sxy / sxx;
    let intercepts: Vec<f64> = means.iter().map(|m| m.map(|(mx, my)| my - slope * mx).unwrap_or(f64::NAN)).collect();
    let rss: f64 = pts.iter().map(|&(ri, x, y, _)| (y - intercepts[ri] - slope * x).powi(2)).sum();
    Ok(AxisFit {
        moment,
        axis,
        rate: -slope,
        intercepts,
        residual_rms: (rss / pts.len() as f64).sqrt(),
        used,
        excluded,
    })
}

/// Fits `b`, `w`, `s` along both axes from the levels `1..=axis_range`
/// with the other component at 0 and 1. The work rates are not fitted.
pub fn fit_rates(
    stats: &BTreeMap<MultiIndex, MixedDiffStats>,
    tau: usize,
    axis_range: usize,
    gamma: [f64; 2],
) -> Result<RateFit> {
    fit_rates_between(stats, tau, (1, axis_range), gamma)
}

pub fn fit_rates_between(
    stats: &BTreeMap<MultiIndex, MixedDiffStats>,
    tau: usize,
    levels: (usize, usize),
    gamma: [f64; 2],
) -> Result<RateFit> {
    if tau < 2 {
        return Err(Error::Fit("tau must be at least 2".into()));
    }
    let mut fits = Vec::new();
    for moment in [Moment::Mean, Moment::V1, Moment::V2] {
        for axis in [1u8, 2] {
            fits.push(fit_axis(stats, tau, moment, axis, levels)?);
        }
    }
    let r = |i: usize| fits[i].rate;
    let mut rates = RateSet::new([r(0), r(1)], [r(2), r(3)], [r(4), r(5)], gamma, tau);
    let lt = (tau as f64).ln();
    let mean_pts: Vec<(MultiIndex, f64)> = stats
        .iter()
        .filter(|(a, _)| fits[0].used.contains(a) || fits[1].used.contains(a))
        .map(|(a, s)| (*a, s.mean.abs()))
        .collect();
    if !mean_pts.is_empty() {
        let c: f64 = mean_pts
            .iter()
            .map(|(a, m)| m.ln() + (rates.b1 * a.a1 as f64 + rates.b2 * a.a2 as f64) * lt)
            .sum::<f64>()
            / mean_pts.len() as f64;
        rates.qb = Some(c.exp());
    }
    Ok(RateFit { rates, fits, levels })
}
