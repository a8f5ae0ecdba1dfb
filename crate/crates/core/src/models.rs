//! McKean–Vlasov models with pairwise interaction kernels, and observables.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Drift `b(x, k1, param) -> out` where `k1` is the interaction mean of
/// the first kernel and `param` is the per-path random parameter (zero when
/// the model has none).
pub type DriftFn<T> = Arc<dyn Fn(&[T], T, T, &mut [T]) + Send + Sync>;

/// Diffusion `σ(x, k2) -> out`, a row-major `d × d` matrix.
pub type DiffusionFn<T> = Arc<dyn Fn(&[T], T, &mut [T]) + Send + Sync>;

/// Pairwise interaction kernel `κ(x, y)`.
///
/// Kernels that admit a finite separable form `κ(x, y) = Σ_k f_k(x) g_k(y)`
/// report the number of terms and expose the feature maps, which lets an
/// interaction mean over `P` particles be evaluated in `O(1)` per query
/// after an `O(P)` reduction.
pub trait PairKernel<T: Real>: Send + Sync {
    fn eval(&self, x: &[T], y: &[T]) -> T;

    fn separable_terms(&self) -> usize {
        0
    }

    /// `f_k(x)` for `k < separable_terms()`.
    fn left_features(&self, _x: &[T], _out: &mut [T]) {}

    /// `g_k(y)` for `k < separable_terms()`.
    fn right_features(&self, _y: &[T], _out: &mut [T]) {}

    /// Identically zero kernels skip the interaction sum entirely.
    fn is_zero(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroKernel;

impl<T: Real> PairKernel<T> for ZeroKernel {
    fn eval(&self, _x: &[T], _y: &[T]) -> T {
        T::zero()
    }
    fn is_zero(&self) -> bool {
        true
    }
}

/// `κ(x, y) = c`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantKernel<T>(pub T);

impl<T: Real> PairKernel<T> for ConstantKernel<T> {
    fn eval(&self, _x: &[T], _y: &[T]) -> T {
        self.0
    }
    fn separable_terms(&self) -> usize {
        1
    }
    fn left_features(&self, _x: &[T], out: &mut [T]) {
        out[0] = self.0;
    }
    fn right_features(&self, _y: &[T], out: &mut [T]) {
        out[0] = T::one();
    }
}

/// Kuramoto coupling `κ(x, y) = sin(x₀ − y₀)`, separable through
/// `sin x cos y − cos x sin y`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SineKernel;

impl<T: Real> PairKernel<T> for SineKernel {
    fn eval(&self, x: &[T], y: &[T]) -> T {
        (x[0] - y[0]).sin()
    }
    fn separable_terms(&self) -> usize {
        2
    }
    fn left_features(&self, x: &[T], out: &mut [T]) {
        let (s, c) = x[0].sin_cos();
        out[0] = s;
        out[1] = -c;
    }
    fn right_features(&self, y: &[T], out: &mut [T]) {
        let (s, c) = y[0].sin_cos();
        out[0] = c;
        out[1] = s;
    }
}

/// Kernel backed by an arbitrary closure; always evaluated naively.
pub struct FnKernel<T>(pub Arc<dyn Fn(&[T], &[T]) -> T + Send + Sync>);

impl<T: Real> PairKernel<T> for FnKernel<T> {
    fn eval(&self, x: &[T], y: &[T]) -> T {
        (self.0)(x, y)
    }
}

/// Initial law `μ₀`, applied independently to every state component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialLaw<T> {
    Normal { mean: T, sd: T },
    Dirac(T),
}

impl<T: Real> InitialLaw<T> {
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [T]) {
        for x in out.iter_mut() {
            *x = match *self {
                InitialLaw::Normal { mean, sd } => mean + sd * T::standard_normal(rng),
                InitialLaw::Dirac(v) => v,
            };
        }
    }
}

/// Law of the per-path parameter `ξ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamLaw<T> {
    Uniform { lo: T, hi: T },
    Dirac(T),
}

impl<T: Real> ParamLaw<T> {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        match *self {
            ParamLaw::Uniform { lo, hi } => lo + (hi - lo) * T::unit_uniform(rng),
            ParamLaw::Dirac(v) => v,
        }
    }

    pub fn mean(&self) -> T {
        match *self {
            ParamLaw::Uniform { lo, hi } => (lo + hi) / T::of(2.0),
            ParamLaw::Dirac(v) => v,
        }
    }
}

/// An MV-SDE with pairwise interaction kernels:
/// `dX = b(X, ⟨κ₁(X, ·), μ⟩, ξ) dt + σ(X, ⟨κ₂(X, ·), μ⟩) dW`.
///
/// Immutable after construction and cheap to clone.
#[derive(Clone)]
pub struct ModelSpec<T: Real> {
    pub dim: usize,
    pub horizon: T,
    pub drift: DriftFn<T>,
    pub diffusion: DiffusionFn<T>,
    pub kernel1: Arc<dyn PairKernel<T>>,
    pub kernel2: Arc<dyn PairKernel<T>>,
    pub init: InitialLaw<T>,
    pub param: Option<ParamLaw<T>>,
    /// Use separable kernel forms when available. Results agree with the
    /// naive `O(P²)` sum up to rounding; the reported model cost does not
    /// depend on this switch.
    pub use_separable: bool,
}

impl<T: Real> fmt::Debug for ModelSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("init", &self.init)
            .field("param", &self.param)
            .field("use_separable", &self.use_separable)
            .finish_non_exhaustive()
    }
}

impl<T: Real> ModelSpec<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dim: usize,
        horizon: T,
        drift: DriftFn<T>,
        diffusion: DiffusionFn<T>,
        kernel1: Arc<dyn PairKernel<T>>,
        kernel2: Arc<dyn PairKernel<T>>,
        init: InitialLaw<T>,
        param: Option<ParamLaw<T>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if !(horizon > T::zero()) || !horizon.is_finite() {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self {
            dim,
            horizon,
            drift,
            diffusion,
            kernel1,
            kernel2,
            init,
            param,
            use_separable: true,
        })
    }

    /// Same model with the per-path parameter pinned to a constant.
    pub fn with_fixed_param(&self, value: T) -> Self {
        let mut m = self.clone();
        m.param = Some(ParamLaw::Dirac(value));
        m
    }

    /// Same model with the first interaction kernel removed.
    pub fn without_interaction(&self) -> Self {
        let mut m = self.clone();
        m.kernel1 = Arc::new(ZeroKernel);
        m
    }

    pub fn has_param(&self) -> bool {
        self.param.is_some()
    }
}

/// The Kuramoto oscillator model:
/// `dX = (ξ + ⟨sin(X − ·), μ⟩) dt + σ dW`, `X(0) ~ N(init_mean, init_sd²)`,
/// `ξ ~ U(−xi_halfwidth, xi_halfwidth)`.
pub fn make_kuramoto<T: Real>(
    sigma: T,
    horizon: T,
    init_mean: T,
    init_sd: T,
    xi_halfwidth: T,
) -> Result<ModelSpec<T>> {
    if !(sigma >= T::zero()) {
        return Err(Error::InvalidParameter(format!("sigma must be nonnegative, got {sigma}")));
    }
    if !(init_sd >= T::zero()) {
        return Err(Error::InvalidParameter(format!("init_sd must be nonnegative, got {init_sd}")));
    }
    if !(xi_halfwidth >= T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "xi_halfwidth must be nonnegative, got {xi_halfwidth}"
        )));
    }
    let drift: DriftFn<T> = Arc::new(|_x, k1, xi, out| out[0] = xi + k1);
    let diffusion: DiffusionFn<T> = Arc::new(move |_x, _k2, out| out[0] = sigma);
    let init = if init_sd > T::zero() {
        InitialLaw::Normal { mean: init_mean, sd: init_sd }
    } else {
        InitialLaw::Dirac(init_mean)
    };
    let param = if xi_halfwidth > T::zero() {
        ParamLaw::Uniform { lo: -xi_halfwidth, hi: xi_halfwidth }
    } else {
        ParamLaw::Dirac(T::zero())
    };
    ModelSpec::new(
        1,
        horizon,
        drift,
        diffusion,
        Arc::new(SineKernel),
        Arc::new(ZeroKernel),
        init,
        Some(param),
    )
}

/// `½(1 + tanh(3(x − K)))`, evaluated as `1 / (1 + e^{−6(x − K)})` so the
/// left tail keeps full relative precision.
pub fn mollified_indicator<T: Real>(x: T, threshold: T) -> T {
    T::one() / (T::one() + (T::of(-6.0) * (x - threshold)).exp())
}

/// Scalar observable `G: ℝᵈ → ℝ`.
#[derive(Clone)]
pub struct Observable<T> {
    eval: Arc<dyn Fn(&[T]) -> T + Send + Sync>,
    /// `G` never changes sign (required for the zero-variance control).
    pub sign_constant: bool,
    constant: Option<T>,
}

impl<T: Real> fmt::Debug for Observable<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observable")
            .field("sign_constant", &self.sign_constant)
            .field("constant", &self.constant)
            .finish_non_exhaustive()
    }
}

impl<T: Real> Observable<T> {
    pub fn new(f: impl Fn(&[T]) -> T + Send + Sync + 'static, sign_constant: bool) -> Self {
        Self { eval: Arc::new(f), sign_constant, constant: None }
    }

    pub fn mollified_indicator(threshold: T) -> Self {
        Self::new(move |x| mollified_indicator(x[0], threshold), true)
    }

    pub fn constant(c: T) -> Self {
        Self { eval: Arc::new(move |_| c), sign_constant: true, constant: Some(c) }
    }

    #[inline]
    pub fn eval(&self, x: &[T]) -> T {
        (self.eval)(x)
    }

    /// `Some(c)` when built by [`Observable::constant`].
    pub fn as_constant(&self) -> Option<T> {
        self.constant
    }
}
