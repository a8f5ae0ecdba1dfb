//! Keyed random streams for the particle-system drivers (`ω`) and the
//! decoupled-path drivers (`ω̃`).
//!
//! Every stream is a ChaCha8 generator whose seed is the SHA-256 digest of
//! a [`StreamKey`]. Particles inside a bundle draw from distinct ChaCha
//! stream ids of the same seed, so particle `p` of a bundle does not depend
//! on how many particles the bundle holds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mixed_difference::MultiIndex;
use crate::models::ModelSpec;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StreamRole {
    OuterLaw,
    InnerPath,
    Pilot,
    ControlLaw,
}

impl StreamRole {
    fn tag(self) -> u8 {
        match self {
            StreamRole::OuterLaw => 1,
            StreamRole::InnerPath => 2,
            StreamRole::Pilot => 3,
            StreamRole::ControlLaw => 4,
        }
    }
}

/// Identifies one random stream. Equal keys give bit-identical draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub master_seed: u64,
    pub alpha: MultiIndex,
    pub m1: u64,
    pub m2: Option<u64>,
    pub role: StreamRole,
    /// Extra discriminator (adaptive iteration, experiment id).
    pub epoch: u64,
}

impl StreamKey {
    pub fn new(master_seed: u64, role: StreamRole) -> Self {
        Self { master_seed, alpha: MultiIndex::ZERO, m1: 0, m2: None, role, epoch: 0 }
    }

    pub fn with_alpha(self, alpha: MultiIndex) -> Self {
        Self { alpha, ..self }
    }

    pub fn with_m1(self, m1: u64) -> Self {
        Self { m1, ..self }
    }

    pub fn with_m2(self, m2: u64) -> Self {
        Self { m2: Some(m2), ..self }
    }

    pub fn with_role(self, role: StreamRole) -> Self {
        Self { role, ..self }
    }

    pub fn with_epoch(self, epoch: u64) -> Self {
        Self { epoch, ..self }
    }

    pub fn seed(&self) -> [u8; 32] {
        let mut h = self.hasher();
        match self.m2 {
            Some(m2) => {
                h.update([1]);
                h.update(m2.to_le_bytes());
            }
            None => h.update([0]),
        }
        h.finalize().into()
    }

    fn hasher(&self) -> Sha256 {
        let mut h = Sha256::new();
        h.update(b"midlmc/stream/v1");
        h.update(self.master_seed.to_le_bytes());
        h.update(self.epoch.to_le_bytes());
        h.update([self.role.tag()]);
        h.update((self.alpha.a1 as u64).to_le_bytes());
        h.update((self.alpha.a2 as u64).to_le_bytes());
        h.update(self.m1.to_le_bytes());
        h
    }

    /// Generator of this key. Keys differing only in `m2` share one hash
    /// and are told apart by the ChaCha stream number.
    pub fn rng(&self) -> ChaCha8Rng {
        match self.m2 {
            None => ChaCha8Rng::from_seed(self.seed()),
            Some(m2) => self.path_family().path_rng(m2),
        }
    }

    /// Generators for all `m2` under this key, hashed once.
    pub fn path_family(&self) -> PathFamily {
        let mut h = self.hasher();
        h.update([2]);
        PathFamily { base: ChaCha8Rng::from_seed(h.finalize().into()) }
    }

    /// Generator for sub-stream `id` of this key.
    pub fn substream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed());
        rng.set_stream(id);
        rng
    }
}

/// The streams `key.with_m2(j)` for one fixed key.
#[derive(Debug, Clone)]
pub struct PathFamily {
    base: ChaCha8Rng,
}

impl PathFamily {
    pub fn path_rng(&self, m2: u64) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream(m2);
        rng
    }
}

/// Randomness driving one realization of the `P`-particle system.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBundle<T> {
    /// `[P × n_fine × d]`, each entry `~ N(0, T / n_fine)`.
    pub wiener_incs: Vec<T>,
    /// `[P × d]`.
    pub initials: Vec<T>,
    /// `[P]`, empty when the model has no random parameter.
    pub params: Vec<T>,
    pub n_fine: usize,
    pub dim: usize,
}

impl<T: Real> NoiseBundle<T> {
    pub fn particles(&self) -> usize {
        self.initials.len() / self.dim
    }

    pub fn increments_of(&self, p: usize) -> &[T] {
        let len = self.n_fine * self.dim;
        &self.wiener_incs[p * len..(p + 1) * len]
    }

    pub fn initial_of(&self, p: usize) -> &[T] {
        &self.initials[p * self.dim..(p + 1) * self.dim]
    }

    pub fn param_of(&self, p: usize) -> T {
        self.params.get(p).copied().unwrap_or_else(T::zero)
    }

    /// Particles `start .. start + count` as a new bundle.
    pub fn slice(&self, start: usize, count: usize) -> NoiseBundle<T> {
        let len = self.n_fine * self.dim;
        NoiseBundle {
            wiener_incs: self.wiener_incs[start * len..(start + count) * len].to_vec(),
            initials: self.initials[start * self.dim..(start + count) * self.dim].to_vec(),
            params: if self.params.is_empty() {
                Vec::new()
            } else {
                self.params[start..start + count].to_vec()
            },
            n_fine: self.n_fine,
            dim: self.dim,
        }
    }

    /// Same particles with every path's increments summed in blocks of `factor`.
    pub fn coarsened(&self, factor: usize) -> Result<NoiseBundle<T>> {
        let len = self.n_fine * self.dim;
        let mut incs = Vec::with_capacity(self.wiener_incs.len() / factor.max(1));
        for path in self.wiener_incs.chunks(len.max(1)) {
            incs.extend(coarsen_strided(path, self.dim, factor)?);
        }
        Ok(NoiseBundle {
            wiener_incs: incs,
            initials: self.initials.clone(),
            params: self.params.clone(),
            n_fine: self.n_fine / factor,
            dim: self.dim,
        })
    }
}

/// Randomness driving one decoupled path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathNoise<T> {
    /// `[n_fine × d]`.
    pub wiener_incs: Vec<T>,
    pub initial: Vec<T>,
    pub param: Option<T>,
    pub n_fine: usize,
}

impl<T: Real> PathNoise<T> {
    pub fn dim(&self) -> usize {
        self.initial.len()
    }

    pub fn coarsened(&self, factor: usize) -> Result<PathNoise<T>> {
        Ok(PathNoise {
            wiener_incs: coarsen_strided(&self.wiener_incs, self.dim(), factor)?,
            initial: self.initial.clone(),
            param: self.param,
            n_fine: self.n_fine / factor,
        })
    }
}

fn check_grid(n_fine: usize, horizon: f64) -> Result<()> {
    if n_fine == 0 {
        return Err(Error::InvalidParameter("n_fine must be at least 1".into()));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    Ok(())
}

/// Draws the `ω` bundle for `particles` particles on a grid of `n_fine` steps.
pub fn draw_bundle<T: Real>(
    key: &StreamKey,
    model: &ModelSpec<T>,
    particles: usize,
    n_fine: usize,
) -> Result<NoiseBundle<T>> {
    if particles == 0 {
        return Err(Error::InvalidParameter("a bundle needs at least one particle".into()));
    }
    check_grid(n_fine, model.horizon.as_f64())?;
    let d = model.dim;
    let sd = (model.horizon / T::of_usize(n_fine)).sqrt();
    let mut wiener_incs = Vec::with_capacity(particles * n_fine * d);
    let mut initials = vec![T::zero(); particles * d];
    let mut params = Vec::with_capacity(if model.has_param() { particles } else { 0 });
    for p in 0..particles {
        let mut rng = key.substream(p as u64);
        model.init.sample_into(&mut rng, &mut initials[p * d..(p + 1) * d]);
        if let Some(law) = &model.param {
            params.push(law.sample(&mut rng));
        }
        for _ in 0..n_fine * d {
            wiener_incs.push(sd * T::standard_normal(&mut rng));
        }
    }
    Ok(NoiseBundle { wiener_incs, initials, params, n_fine, dim: d })
}

/// Draws the `ω̃` noise of one decoupled path.
pub fn draw_path<T: Real>(key: &StreamKey, model: &ModelSpec<T>, n_fine: usize) -> Result<PathNoise<T>> {
    draw_path_with(key.rng(), model, n_fine)
}

/// [`draw_path`] from an explicit generator.
pub fn draw_path_with<T: Real>(mut rng: ChaCha8Rng, model: &ModelSpec<T>, n_fine: usize) -> Result<PathNoise<T>> {
    check_grid(n_fine, model.horizon.as_f64())?;
    let d = model.dim;
    let sd = (model.horizon / T::of_usize(n_fine)).sqrt();
    let mut initial = vec![T::zero(); d];
    model.init.sample_into(&mut rng, &mut initial);
    let param = model.param.as_ref().map(|law| law.sample(&mut rng));
    let wiener_incs = (0..n_fine * d).map(|_| sd * T::standard_normal(&mut rng)).collect();
    Ok(PathNoise { wiener_incs, initial, param, n_fine })
}

/// Sums consecutive increments in blocks of `factor` (scalar series).
pub fn coarsen_increments<T: Real>(incs: &[T], factor: usize) -> Result<Vec<T>> {
    coarsen_strided(incs, 1, factor)
}

/// Block sums over time of a `[n × dim]` increment array.
///
/// Composite factors are applied one prime factor at a time (smallest
/// first). For prime `τ` this makes `coarsen(coarsen(x, τ^a), τ^b)` and
/// `coarsen(x, τ^(a+b))` agree bit for bit; otherwise they agree up to
/// rounding.
pub fn coarsen_strided<T: Real>(incs: &[T], dim: usize, factor: usize) -> Result<Vec<T>> {
    if factor == 0 || dim == 0 {
        return Err(Error::Hierarchy("coarsening factor and dimension must be positive".into()));
    }
    let steps = incs.len() / dim;
    if incs.len() % dim != 0 || steps % factor != 0 {
        return Err(Error::Hierarchy(format!(
            "{steps} time steps are not divisible by coarsening factor {factor}"
        )));
    }
    let mut out = incs.to_vec();
    let mut remaining = factor;
    while remaining > 1 {
        let q = smallest_prime_factor(remaining);
        out = block_sum(&out, dim, q);
        remaining /= q;
    }
    Ok(out)
}

fn block_sum<T: Real>(incs: &[T], dim: usize, factor: usize) -> Vec<T> {
    let steps = incs.len() / dim;
    let mut out = vec![T::zero(); steps / factor * dim];
    for (k, block) in incs.chunks(factor * dim).enumerate() {
        for j in 0..dim {
            let mut acc = block[j];
            for s in 1..factor {
                acc = acc + block[s * dim + j];
            }
            out[k * dim + j] = acc;
        }
    }
    out
}

fn smallest_prime_factor(n: usize) -> usize {
    let mut q = 2;
    while q * q <= n {
        if n % q == 0 {
            return q;
        }
        q += 1;
    }
    n
}

/// Splits a bundle into `tau` contiguous groups of equal size.
pub fn split_groups<T: Real>(bundle: &NoiseBundle<T>, tau: usize) -> Result<Vec<NoiseBundle<T>>> {
    let p = bundle.particles();
    if tau == 0 || p % tau != 0 {
        return Err(Error::Hierarchy(format!("{p} particles cannot be split into {tau} equal groups")));
    }
    let size = p / tau;
    Ok((0..tau).map(|a| bundle.slice(a * size, size)).collect())
}
