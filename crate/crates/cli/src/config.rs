//! Run configuration: one JSON document, every field defaulted.

use std::path::Path;

use anyhow::{bail, Context};
use midlmc::control::{GridSpec, TimeScheme, DEFAULT_CLIP};
use midlmc::index_sets::RateSet;
use midlmc::{make_kuramoto, AdaptiveConfig, Hierarchy, Model, Observable, PilotConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub model: ModelConfig,
    pub hierarchy: HierarchyConfig,
    pub control_grid: ControlConfig,
    pub pilot: PilotSection,
    pub adaptive: AdaptiveSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 1,
            model: ModelConfig::default(),
            hierarchy: HierarchyConfig::default(),
            control_grid: ControlConfig::default(),
            pilot: PilotSection::default(),
            adaptive: AdaptiveSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableConfig {
    /// `½(1 + tanh(3(x − K)))`.
    MollifiedIndicator { threshold: f64 },
    Constant { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub sigma: f64,
    pub horizon: f64,
    pub init_mean: f64,
    /// Variance of the Gaussian initial condition.
    pub init_variance: f64,
    pub xi_halfwidth: f64,
    pub observable: ObservableConfig,
    pub use_separable: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            sigma: 0.4,
            horizon: 1.0,
            init_mean: 0.0,
            init_variance: 0.2,
            xi_halfwidth: 0.2,
            observable: ObservableConfig::MollifiedIndicator { threshold: 3.5 },
            use_separable: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchyConfig {
    pub p0: usize,
    pub n0: usize,
    pub tau: usize,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        let h = Hierarchy::kuramoto();
        Self { p0: h.p0, n0: h.n0, tau: h.tau }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeConfig {
    BackwardEuler,
    Bdf2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    /// Without a control the estimators run plain nested Monte Carlo.
    pub enabled: bool,
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
    pub n_tsteps: usize,
    pub scheme: SchemeConfig,
    pub clip: f64,
    /// Particles and steps of the offline law.
    pub law_particles: usize,
    pub law_steps: usize,
}

impl Default for ControlConfig {
    fn default() -> Self {
        let g = GridSpec::<f64>::default();
        Self {
            enabled: true,
            x_min: g.x_min,
            x_max: g.x_max,
            n_cells: g.n_cells,
            n_tsteps: g.n_tsteps,
            scheme: SchemeConfig::Bdf2,
            clip: DEFAULT_CLIP,
            law_particles: 1000,
            law_steps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PilotSection {
    pub m1_bar: usize,
    pub m2_bar: usize,
    pub m1_tilde: usize,
    pub m2_tilde: usize,
    /// Samples per index for the `pilot` subcommand.
    pub m1: usize,
    pub m2: usize,
    /// Highest level along each axis in the pilot grid.
    pub axis_levels: usize,
}

impl Default for PilotSection {
    fn default() -> Self {
        let p = PilotConfig::default();
        Self {
            m1_bar: p.m1_bar,
            m2_bar: p.m2_bar,
            m1_tilde: p.m1_tilde,
            m2_tilde: p.m2_tilde,
            m1: 2000,
            m2: 100,
            axis_levels: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Adaptive,
    Multilevel,
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesConfig {
    pub b: [f64; 2],
    pub w: [f64; 2],
    pub s: [f64; 2],
    pub gamma: [f64; 2],
}

impl Default for RatesConfig {
    fn default() -> Self {
        Self { b: [1.0, 1.0], w: [2.0, 2.0], s: [2.0, 1.5], gamma: [1.0, 1.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SingleConfig {
    pub particles: usize,
    pub steps: usize,
    pub m1: usize,
    pub m2: usize,
}

impl Default for SingleConfig {
    fn default() -> Self {
        Self { particles: 40, steps: 32, m1: 1000, m2: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveSection {
    pub mode: Mode,
    pub tol_r: f64,
    pub theta: f64,
    pub nu: f64,
    pub max_cost: f64,
    pub l_start: f64,
    pub l_factor: f64,
    pub max_iterations: usize,
    pub rates: RatesConfig,
    pub single: SingleConfig,
}

impl Default for AdaptiveSection {
    fn default() -> Self {
        let a = AdaptiveConfig::default();
        Self {
            mode: Mode::Adaptive,
            tol_r: a.tol_r,
            theta: a.theta,
            nu: a.nu,
            max_cost: a.max_cost,
            l_start: a.l_start,
            l_factor: a.l_factor,
            max_iterations: a.max_iterations,
            rates: RatesConfig::default(),
            single: SingleConfig::default(),
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            }
        }
    }

    /// SHA-256 of the canonical JSON form, after overrides.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let m = &self.model;
        if !(m.init_variance >= 0.0) {
            bail!("model.init_variance must be nonnegative");
        }
        if !(m.horizon > 0.0) {
            bail!("model.horizon must be positive");
        }
        let a = &self.adaptive;
        if !(a.theta > 0.0 && a.theta < 1.0) {
            bail!("adaptive.theta must lie in (0, 1)");
        }
        if !(a.nu > 0.0 && a.nu < 1.0) {
            bail!("adaptive.nu must lie in (0, 1)");
        }
        if !(a.tol_r > 0.0) {
            bail!("adaptive.tol_r must be positive");
        }
        self.hierarchy()?;
        self.grid()?;
        Ok(())
    }

    pub fn model(&self) -> anyhow::Result<Model> {
        let m = &self.model;
        let mut spec = make_kuramoto(m.sigma, m.horizon, m.init_mean, m.init_variance.sqrt(), m.xi_halfwidth)?;
        spec.use_separable = m.use_separable;
        Ok(spec)
    }

    pub fn observable(&self) -> Observable<f64> {
        match self.model.observable {
            ObservableConfig::MollifiedIndicator { threshold } => Observable::mollified_indicator(threshold),
            ObservableConfig::Constant { value } => Observable::constant(value),
        }
    }

    pub fn hierarchy(&self) -> anyhow::Result<Hierarchy> {
        let h = &self.hierarchy;
        Ok(Hierarchy::new(h.p0, h.n0, h.tau)?)
    }

    pub fn grid(&self) -> anyhow::Result<GridSpec<f64>> {
        let c = &self.control_grid;
        let scheme = match c.scheme {
            SchemeConfig::BackwardEuler => TimeScheme::BackwardEuler,
            SchemeConfig::Bdf2 => TimeScheme::Bdf2,
        };
        Ok(GridSpec::new(c.x_min, c.x_max, c.n_cells, c.n_tsteps)?.with_scheme(scheme))
    }

    pub fn rates(&self) -> RateSet<f64> {
        let r = &self.adaptive.rates;
        RateSet::new(r.b, r.w, r.s, r.gamma, self.hierarchy.tau)
    }

    pub fn pilot_config(&self) -> PilotConfig {
        let p = &self.pilot;
        PilotConfig { m1_bar: p.m1_bar, m2_bar: p.m2_bar, m1_tilde: p.m1_tilde, m2_tilde: p.m2_tilde }
    }

    pub fn adaptive_config(&self) -> AdaptiveConfig {
        let a = &self.adaptive;
        AdaptiveConfig {
            tol_r: a.tol_r,
            theta: a.theta,
            nu: a.nu,
            max_cost: a.max_cost,
            l_start: a.l_start,
            l_factor: a.l_factor,
            gamma: a.rates.gamma,
            max_iterations: a.max_iterations,
        }
    }
}
