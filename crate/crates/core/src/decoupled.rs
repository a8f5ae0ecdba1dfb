//! The decoupled MV-SDE driven by a frozen empirical law, optionally under
//! an importance-sampling change of drift.

use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::particle_system::EmpiricalLaw;
use crate::randomness::{coarsen_strided, PathNoise};
use crate::scalar::Real;

/// A control `ζ(t, x)` shifting the drift by `σ ζ`.
pub trait ImportanceControl<T: Real>: Send + Sync {
    /// Writes `ζ(t, x)` into `out` (length `d`).
    fn eval(&self, t: T, x: &[T], out: &mut [T]);

    /// Controls that are identically zero leave the likelihood at exactly 1.
    fn is_zero(&self) -> bool {
        false
    }
}

/// `ζ ≡ c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantControl<T>(pub Vec<T>);

impl<T: Real> ImportanceControl<T> for ConstantControl<T> {
    fn eval(&self, _t: T, _x: &[T], out: &mut [T]) {
        out.copy_from_slice(&self.0);
    }
    fn is_zero(&self) -> bool {
        self.0.iter().all(|c| c.is_zero())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult<T> {
    pub terminal: Vec<T>,
    /// `𝕃 = Π exp(−½Δt‖ζ‖² − ⟨ΔW, ζ⟩)`.
    pub likelihood: T,
    /// `Σ ‖ζ‖² Δt`.
    pub control_energy: T,
}

impl<T: Real> PathResult<T> {
    pub fn log_likelihood(&self) -> T {
        self.likelihood.ln()
    }
}

/// Euler–Maruyama for the decoupled path against `law`, which must live on
/// the same `N`-step grid. The control is evaluated at the start of each
/// step.
pub fn simulate_decoupled<T: Real>(
    model: &ModelSpec<T>,
    law: &EmpiricalLaw<T>,
    control: Option<&dyn ImportanceControl<T>>,
    noise: &PathNoise<T>,
    steps: usize,
) -> Result<PathResult<T>> {
    if law.steps != steps {
        return Err(Error::Config(format!("law has {} steps, path asks for {steps}", law.steps)));
    }
    let d = model.dim;
    if noise.dim() != d || law.dim != d {
        return Err(Error::Config("path noise, law and model dimensions differ".into()));
    }
    if noise.n_fine % steps != 0 {
        return Err(Error::Hierarchy(format!(
            "path grid of {} steps is not a multiple of {steps}",
            noise.n_fine
        )));
    }
    let coarse;
    let incs: &[T] = if noise.n_fine == steps {
        &noise.wiener_incs
    } else {
        coarse = coarsen_strided(&noise.wiener_incs, d, noise.n_fine / steps)?;
        &coarse
    };
    let control = control.filter(|c| !c.is_zero());

    let dt = model.horizon / T::of_usize(steps);
    let half = T::of(0.5);
    let param = noise.param.unwrap_or_else(T::zero);
    let mut x = noise.initial.clone();
    let mut drift = vec![T::zero(); d];
    let mut sigma = vec![T::zero(); d * d];
    let mut zeta = vec![T::zero(); d];
    let mut log_lik = T::zero();
    let mut energy = T::zero();

    for n in 0..steps {
        let dw = &incs[n * d..(n + 1) * d];
        let m1 = law.kernel1_mean(model, n, &x);
        let m2 = law.kernel2_mean(model, n, &x);
        (model.drift)(&x, m1, param, &mut drift);
        (model.diffusion)(&x, m2, &mut sigma);
        if let Some(c) = control {
            c.eval(T::of_usize(n) * dt, &x, &mut zeta);
            let mut z2 = T::zero();
            let mut zdw = T::zero();
            for i in 0..d {
                z2 = z2 + zeta[i] * zeta[i];
                zdw = zdw + zeta[i] * dw[i];
            }
            log_lik = log_lik - half * dt * z2 - zdw;
            energy = energy + z2 * dt;
        }
        for i in 0..d {
            let mut shift = T::zero();
            let mut noise_term = T::zero();
            for j in 0..d {
                let s = sigma[i * d + j];
                if control.is_some() {
                    shift = shift + s * zeta[j];
                }
                noise_term = noise_term + s * dw[j];
            }
            x[i] = x[i] + (drift[i] + shift) * dt + noise_term;
        }
        if x.iter().any(|v| !v.is_finite()) || !log_lik.is_finite() {
            return Err(Error::Diverged { step: n, what: "decoupled path left the finite range".into() });
        }
    }

    let likelihood = if control.is_some() { log_lik.exp() } else { T::one() };
    if !(likelihood > T::zero()) || !likelihood.is_finite() {
        return Err(Error::Diverged { step: steps, what: format!("likelihood {likelihood} is not positive and finite") });
    }
    Ok(PathResult { terminal: x, likelihood, control_energy: energy })
}
