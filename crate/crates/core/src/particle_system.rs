//! Euler–Maruyama simulation of the interacting particle system and the
//! resulting discrete empirical law.

use crate::error::{Error, Result};
use crate::models::{ModelSpec, PairKernel};
use crate::randomness::{coarsen_strided, draw_bundle, NoiseBundle, StreamKey};
use crate::scalar::Real;

/// Time-discrete empirical law `μ^{P|N}`: all particle positions on the
/// uniform grid `t_n = nT/N`.
#[derive(Debug, Clone)]
pub struct EmpiricalLaw<T> {
    /// `[(N+1) × P × d]`.
    pub states: Vec<T>,
    pub particles: usize,
    pub steps: usize,
    pub horizon: T,
    pub dim: usize,
    summary1: KernelSummary<T>,
    summary2: KernelSummary<T>,
}

/// Per-time means of the right feature maps of a separable kernel.
#[derive(Debug, Clone)]
enum KernelSummary<T> {
    Zero,
    Separable { terms: usize, means: Vec<T> },
    Naive,
}

impl<T: Real> KernelSummary<T> {
    fn new(kernel: &dyn PairKernel<T>, use_separable: bool, steps: usize) -> Self {
        if kernel.is_zero() {
            KernelSummary::Zero
        } else if use_separable && kernel.separable_terms() > 0 {
            let terms = kernel.separable_terms();
            KernelSummary::Separable { terms, means: vec![T::zero(); (steps + 1) * terms] }
        } else {
            KernelSummary::Naive
        }
    }

    fn fill(&mut self, kernel: &dyn PairKernel<T>, n: usize, slice: &[T], dim: usize, scratch: &mut [T]) {
        if let KernelSummary::Separable { terms, means } = self {
            let out = &mut means[n * *terms..(n + 1) * *terms];
            out.iter_mut().for_each(|m| *m = T::zero());
            let p = slice.len() / dim;
            for y in slice.chunks(dim) {
                kernel.right_features(y, &mut scratch[..*terms]);
                for (m, g) in out.iter_mut().zip(scratch.iter()) {
                    *m = *m + *g;
                }
            }
            let inv = T::one() / T::of_usize(p);
            out.iter_mut().for_each(|m| *m = *m * inv);
        }
    }

    fn eval(&self, kernel: &dyn PairKernel<T>, n: usize, x: &[T], slice: &[T], dim: usize) -> T {
        match self {
            KernelSummary::Zero => T::zero(),
            KernelSummary::Separable { terms, means } => {
                let mut f = [T::zero(); 8];
                let mut buf;
                let fx: &mut [T] = if *terms <= f.len() {
                    &mut f[..*terms]
                } else {
                    buf = vec![T::zero(); *terms];
                    &mut buf
                };
                kernel.left_features(x, fx);
                fx.iter()
                    .zip(&means[n * terms..(n + 1) * terms])
                    .fold(T::zero(), |acc, (a, b)| acc + *a * *b)
            }
            KernelSummary::Naive => interaction_mean(kernel, x, slice, dim),
        }
    }
}

impl<T: Real> EmpiricalLaw<T> {
    /// Positions of all particles at grid time `t_n`, `[P × d]`.
    pub fn slice(&self, n: usize) -> &[T] {
        let len = self.particles * self.dim;
        &self.states[n * len..(n + 1) * len]
    }

    pub fn state(&self, n: usize, p: usize) -> &[T] {
        let base = (n * self.particles + p) * self.dim;
        &self.states[base..base + self.dim]
    }

    pub fn dt(&self) -> T {
        self.horizon / T::of_usize(self.steps)
    }

    /// `(1/P) Σ_j κ₁(x, X_j(t_n))`.
    pub fn kernel1_mean(&self, model: &ModelSpec<T>, n: usize, x: &[T]) -> T {
        self.summary1.eval(model.kernel1.as_ref(), n, x, self.slice(n), self.dim)
    }

    /// `(1/P) Σ_j κ₂(x, X_j(t_n))`.
    pub fn kernel2_mean(&self, model: &ModelSpec<T>, n: usize, x: &[T]) -> T {
        self.summary2.eval(model.kernel2.as_ref(), n, x, self.slice(n), self.dim)
    }

    /// Work units of one realization under the naive interaction model, `N·P²`.
    pub fn model_cost(&self) -> f64 {
        self.steps as f64 * (self.particles as f64).powi(2)
    }

    /// `(1/P) Σ_p X_p(t_n)` for component `k`.
    pub fn mean_at(&self, n: usize, k: usize) -> T {
        let s = self.slice(n);
        let sum = s.chunks(self.dim).fold(T::zero(), |acc, x| acc + x[k]);
        sum / T::of_usize(self.particles)
    }
}

/// Exact arithmetic mean of `kernel(x, y_j)` over a `[P × d]` slice.
pub fn interaction_mean<T: Real>(kernel: &dyn PairKernel<T>, x: &[T], slice: &[T], dim: usize) -> T {
    let p = slice.len() / dim;
    let sum = slice.chunks(dim).fold(T::zero(), |acc, y| acc + kernel.eval(x, y));
    sum / T::of_usize(p)
}

/// Simulates the first `particles` particles of `bundle` with `steps`
/// Euler–Maruyama steps. Increments are coarsened when the bundle is finer
/// than the requested grid.
pub fn simulate_law<T: Real>(
    model: &ModelSpec<T>,
    bundle: &NoiseBundle<T>,
    particles: usize,
    steps: usize,
) -> Result<EmpiricalLaw<T>> {
    if particles == 0 || steps == 0 {
        return Err(Error::InvalidParameter("particles and steps must be positive".into()));
    }
    if bundle.particles() < particles {
        return Err(Error::Config(format!(
            "bundle holds {} particles, {particles} requested",
            bundle.particles()
        )));
    }
    if bundle.dim != model.dim {
        return Err(Error::Config("bundle and model dimensions differ".into()));
    }
    if bundle.n_fine % steps != 0 {
        return Err(Error::Hierarchy(format!(
            "bundle grid of {} steps is not a multiple of {steps}",
            bundle.n_fine
        )));
    }
    let d = model.dim;
    let factor = bundle.n_fine / steps;
    let incs: Vec<T> = if factor == 1 {
        bundle.wiener_incs[..particles * steps * d].to_vec()
    } else {
        let mut v = Vec::with_capacity(particles * steps * d);
        for p in 0..particles {
            v.extend(coarsen_strided(bundle.increments_of(p), d, factor)?);
        }
        v
    };

    let dt = model.horizon / T::of_usize(steps);
    let width = particles * d;
    let mut states = vec![T::zero(); (steps + 1) * width];
    states[..width].copy_from_slice(&bundle.initials[..width]);

    let k1 = model.kernel1.as_ref();
    let k2 = model.kernel2.as_ref();
    let mut summary1 = KernelSummary::new(k1, model.use_separable, steps);
    let mut summary2 = KernelSummary::new(k2, model.use_separable, steps);
    let terms = k1.separable_terms().max(k2.separable_terms()).max(1);
    let mut scratch = vec![T::zero(); terms];
    let mut drift = vec![T::zero(); d];
    let mut sigma = vec![T::zero(); d * d];

    for n in 0..=steps {
        let (done, rest) = states.split_at_mut((n + 1) * width);
        let current = &done[n * width..];
        summary1.fill(k1, n, current, d, &mut scratch);
        summary2.fill(k2, n, current, d, &mut scratch);
        if n == steps {
            break;
        }
        let next = &mut rest[..width];
        for p in 0..particles {
            let x = &current[p * d..(p + 1) * d];
            let m1 = summary1.eval(k1, n, x, current, d);
            let m2 = summary2.eval(k2, n, x, current, d);
            (model.drift)(x, m1, bundle.param_of(p), &mut drift);
            (model.diffusion)(x, m2, &mut sigma);
            let dw = &incs[(p * steps + n) * d..(p * steps + n + 1) * d];
            for i in 0..d {
                let mut noise = T::zero();
                for j in 0..d {
                    noise = noise + sigma[i * d + j] * dw[j];
                }
                let v = x[i] + drift[i] * dt + noise;
                if !v.is_finite() {
                    return Err(Error::Diverged { step: n, what: format!("particle {p} left the finite range") });
                }
                next[p * d + i] = v;
            }
        }
    }

    Ok(EmpiricalLaw {
        states,
        particles,
        steps,
        horizon: model.horizon,
        dim: d,
        summary1,
        summary2,
    })
}

/// Draws a fresh bundle from `key` and simulates it.
pub fn sample_law<T: Real>(model: &ModelSpec<T>, key: &StreamKey, particles: usize, steps: usize) -> Result<EmpiricalLaw<T>> {
    let bundle = draw_bundle(key, model, particles, steps)?;
    simulate_law(model, &bundle, particles, steps)
}
