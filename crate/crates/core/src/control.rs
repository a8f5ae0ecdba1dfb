//! Importance-sampling control from the linear Kolmogorov backward equation
//! `v_t + b v_x + ½σ² v_xx = 0`, `v(T, ·) = |G|`, solved on a uniform
//! space-time grid for scalar models.

use std::io::{BufRead, Write};

use crate::decoupled::ImportanceControl;
use crate::error::{Error, Result};
use crate::models::{ModelSpec, Observable};
use crate::particle_system::EmpiricalLaw;
use crate::scalar::Real;

/// Implicit time discretisation of the backward solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeScheme {
    /// First order, satisfies the discrete maximum principle.
    BackwardEuler,
    /// Second-order backward differentiation, started with one Euler step.
    #[default]
    Bdf2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec<T> {
    pub x_min: T,
    pub x_max: T,
    pub n_cells: usize,
    pub n_tsteps: usize,
    pub scheme: TimeScheme,
}

impl<T: Real> GridSpec<T> {
    pub fn new(x_min: T, x_max: T, n_cells: usize, n_tsteps: usize) -> Result<Self> {
        if !(x_min < x_max) {
            return Err(Error::InvalidParameter(format!("empty domain [{x_min}, {x_max}]")));
        }
        if n_cells < 8 {
            return Err(Error::InvalidParameter(format!("need at least 8 cells, got {n_cells}")));
        }
        if n_tsteps == 0 {
            return Err(Error::InvalidParameter("need at least one time step".into()));
        }
        Ok(Self { x_min, x_max, n_cells, n_tsteps, scheme: TimeScheme::default() })
    }

    pub fn with_scheme(self, scheme: TimeScheme) -> Self {
        Self { scheme, ..self }
    }

    /// Both resolutions doubled.
    pub fn refined(self) -> Self {
        Self { n_cells: self.n_cells * 2, n_tsteps: self.n_tsteps * 2, ..self }
    }

    pub fn dx(&self) -> T {
        (self.x_max - self.x_min) / T::of_usize(self.n_cells)
    }

    pub fn node(&self, i: usize) -> T {
        self.x_min + self.dx() * T::of_usize(i)
    }

    pub fn nodes(&self) -> usize {
        self.n_cells + 1
    }
}

impl<T: Real> Default for GridSpec<T> {
    fn default() -> Self {
        Self { x_min: T::of(-8.0), x_max: T::of(8.0), n_cells: 800, n_tsteps: 200, scheme: TimeScheme::default() }
    }
}

/// Default `ζ_max`.
pub const DEFAULT_CLIP: f64 = 10.0;

/// Smallest value kept in the value field: `√(min positive)`, far below
/// any `|G|` tail the grid resolves, so `log v` stays finite.
pub fn default_floor<T: Real>() -> T {
    T::min_positive_value().sqrt()
}

/// `v(t_k, x_i)` on the full grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField<T> {
    /// `[(n_tsteps+1) × (n_cells+1)]`, row `k` at `t_k = kT/n_tsteps`.
    pub values: Vec<T>,
    pub grid: GridSpec<T>,
    pub horizon: T,
    pub floor: T,
    /// Nodes raised to the floor during the solve.
    pub floor_hits: usize,
}

impl<T: Real> ValueField<T> {
    pub fn row(&self, k: usize) -> &[T] {
        let w = self.grid.nodes();
        &self.values[k * w..(k + 1) * w]
    }

    pub fn at(&self, k: usize, i: usize) -> T {
        self.values[k * self.grid.nodes() + i]
    }
}

fn law_index<T: Real>(t: T, horizon: T, law_steps: usize) -> usize {
    let s = (t / horizon * T::of_usize(law_steps)).round();
    s.to_usize().unwrap_or(0).min(law_steps)
}

fn kernel2_at<T: Real>(model: &ModelSpec<T>, law: &EmpiricalLaw<T>, n: usize, x: T) -> T {
    law.kernel2_mean(model, n, &[x])
}

/// Solves the backward equation with the per-path parameter at its mean and
/// the interaction means taken from `law` at the nearest law time.
pub fn solve_kbe<T: Real>(
    model: &ModelSpec<T>,
    law: &EmpiricalLaw<T>,
    grid: &GridSpec<T>,
    observable: &Observable<T>,
) -> Result<ValueField<T>> {
    solve_kbe_with_floor(model, law, grid, observable, default_floor())
}

pub fn solve_kbe_with_floor<T: Real>(
    model: &ModelSpec<T>,
    law: &EmpiricalLaw<T>,
    grid: &GridSpec<T>,
    observable: &Observable<T>,
    floor: T,
) -> Result<ValueField<T>> {
    if model.dim != 1 {
        return Err(Error::UnsupportedDimension(model.dim));
    }
    let nx = grid.nodes();
    let nt = grid.n_tsteps;
    let dx = grid.dx();
    let dt = model.horizon / T::of_usize(nt);
    let xi = model.param.as_ref().map(|p| p.mean()).unwrap_or_else(T::zero);
    let two = T::of(2.0);
    let half = T::of(0.5);

    let mut values = vec![T::zero(); (nt + 1) * nx];
    let mut g_max = T::zero();
    for i in 0..nx {
        let g = observable.eval(&[grid.node(i)]).abs();
        g_max = g_max.max(g);
        values[nt * nx + i] = g;
    }
    if let Some(c) = observable.as_constant() {
        // The solution is the terminal value itself.
        let v = c.abs().max(floor);
        values.iter_mut().for_each(|x| *x = v);
        return Ok(ValueField { values, grid: *grid, horizon: model.horizon, floor, floor_hits: 0 });
    }
    let neg_tol = T::of(1e-6) * g_max.max(T::min_positive_value());

    let (mut lo, mut di, mut up, mut rhs) = (vec![T::zero(); nx], vec![T::zero(); nx], vec![T::zero(); nx], vec![T::zero(); nx]);
    let mut scratch = vec![T::zero(); nx];
    let mut floor_hits = 0;
    let mut drift = [T::zero()];
    let mut sigma = [T::zero()];

    for k in (0..nt).rev() {
        let t = T::of_usize(k) * dt;
        let n = law_index(t, model.horizon, law.steps);
        let bdf2 = grid.scheme == TimeScheme::Bdf2 && k + 2 <= nt;
        let (beta, c1, c2) = if bdf2 { (T::of(1.5), two, -half) } else { (T::one(), T::one(), T::zero()) };

        for i in 0..nx {
            let x = grid.node(i);
            let k1 = law.kernel1_mean(model, n, &[x]);
            (model.drift)(&[x], k1, xi, &mut drift);
            (model.diffusion)(&[x], kernel2_at(model, law, n, x), &mut sigma);
            let b = drift[0];
            let a = sigma[0] * sigma[0];
            let diff = a / (two * dx * dx);
            let (l, c, u) = if b.abs() * dx <= a {
                let adv = b / (two * dx);
                (diff - adv, -two * diff, diff + adv)
            } else if b > T::zero() {
                (diff, -two * diff - b / dx, diff + b / dx)
            } else {
                (diff - b / dx, -two * diff + b / dx, diff)
            };
            let (l, u) = if i == 0 {
                (T::zero(), u + l)
            } else if i == nx - 1 {
                (l + u, T::zero())
            } else {
                (l, u)
            };
            lo[i] = -dt * l;
            di[i] = beta - dt * c;
            up[i] = -dt * u;
            let next = values[(k + 1) * nx + i];
            rhs[i] = if bdf2 { c1 * next + c2 * values[(k + 2) * nx + i] } else { next };
        }

        let row = &mut values[k * nx..(k + 1) * nx];
        thomas(&lo, &di, &up, &rhs, row, &mut scratch)?;
        for v in row.iter_mut() {
            if !v.is_finite() {
                return Err(Error::Solver(format!("non-finite value at time step {k}")));
            }
            if *v < -neg_tol {
                return Err(Error::Solver(format!("negative value {v} at time step {k}")));
            }
            if *v < floor {
                *v = floor;
                floor_hits += 1;
            }
        }
    }

    Ok(ValueField { values, grid: *grid, horizon: model.horizon, floor, floor_hits })
}

/// Direct elimination for a tridiagonal system; `lo[0]` and `up[n-1]` are ignored.
pub fn thomas<T: Real>(lo: &[T], di: &[T], up: &[T], rhs: &[T], out: &mut [T], scratch: &mut [T]) -> Result<()> {
    let n = di.len();
    let tiny = T::min_positive_value();
    let mut denom = di[0];
    if denom.abs() <= tiny {
        return Err(Error::Solver("zero pivot".into()));
    }
    scratch[0] = up[0] / denom;
    out[0] = rhs[0] / denom;
    for i in 1..n {
        denom = di[i] - lo[i] * scratch[i - 1];
        if denom.abs() <= tiny || !denom.is_finite() {
            return Err(Error::Solver(format!("zero pivot in row {i}")));
        }
        scratch[i] = if i + 1 < n { up[i] / denom } else { T::zero() };
        out[i] = (rhs[i] - lo[i] * out[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        out[i] = out[i] - scratch[i] * out[i + 1];
    }
    Ok(())
}

/// Nodal `ζ = σ ∂ₓ log v`, clipped to `[−clip, clip]`, interpolated bilinearly.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField<T> {
    pub grid: GridSpec<T>,
    pub horizon: T,
    pub clip: T,
    /// `[(n_tsteps+1) × (n_cells+1)]`.
    pub zeta: Vec<T>,
}

/// `∂ₓ log v` on row `k`: central differences inside, one-sided at the ends.
pub fn log_gradient_row<T: Real>(field: &ValueField<T>, k: usize) -> Vec<T> {
    let row = field.row(k);
    let logs: Vec<T> = row.iter().map(|v| v.ln()).collect();
    let dx = field.grid.dx();
    let n = logs.len();
    (0..n)
        .map(|i| match i {
            0 => (logs[1] - logs[0]) / dx,
            i if i == n - 1 => (logs[n - 1] - logs[n - 2]) / dx,
            i => (logs[i + 1] - logs[i - 1]) / (T::of(2.0) * dx),
        })
        .collect()
}

pub fn control_from_value<T: Real>(
    value: &ValueField<T>,
    model: &ModelSpec<T>,
    law: &EmpiricalLaw<T>,
    clip: T,
) -> Result<ControlField<T>> {
    if model.dim != 1 {
        return Err(Error::UnsupportedDimension(model.dim));
    }
    if !(clip > T::zero()) {
        return Err(Error::InvalidParameter(format!("clip must be positive, got {clip}")));
    }
    let grid = value.grid;
    let nt = grid.n_tsteps;
    let dt = value.horizon / T::of_usize(nt);
    let mut zeta = Vec::with_capacity(value.values.len());
    let mut sigma = [T::zero()];
    for k in 0..=nt {
        let n = law_index(T::of_usize(k) * dt, value.horizon, law.steps);
        for (i, g) in log_gradient_row(value, k).into_iter().enumerate() {
            let x = grid.node(i);
            (model.diffusion)(&[x], kernel2_at(model, law, n, x), &mut sigma);
            zeta.push((sigma[0] * g).max(-clip).min(clip));
        }
    }
    Ok(ControlField { grid, horizon: value.horizon, clip, zeta })
}

/// Offline solve and control extraction in one call.
pub fn solve_control<T: Real>(
    model: &ModelSpec<T>,
    law: &EmpiricalLaw<T>,
    grid: &GridSpec<T>,
    observable: &Observable<T>,
    clip: T,
) -> Result<ControlField<T>> {
    let v = solve_kbe(model, law, grid, observable)?;
    control_from_value(&v, model, law, clip)
}

const HEADER: &str = "# midlmc-control v1";

impl<T: Real> ControlField<T> {
    pub fn zero(grid: GridSpec<T>, horizon: T) -> Self {
        let len = (grid.n_tsteps + 1) * grid.nodes();
        Self { grid, horizon, clip: T::of(DEFAULT_CLIP), zeta: vec![T::zero(); len] }
    }

    pub fn nodal(&self, k: usize, i: usize) -> T {
        self.zeta[k * self.grid.nodes() + i]
    }

    /// Bilinear in `(t, x)`; `x` is clamped to the domain.
    pub fn eval_at(&self, t: T, x: T) -> T {
        let g = &self.grid;
        let nt = g.n_tsteps;
        let s = (t / self.horizon * T::of_usize(nt)).max(T::zero()).min(T::of_usize(nt));
        let k = s.floor().to_usize().unwrap_or(0).min(nt - 1);
        let ft = s - T::of_usize(k);
        let r = ((x - g.x_min) / g.dx()).max(T::zero()).min(T::of_usize(g.n_cells));
        let i = r.floor().to_usize().unwrap_or(0).min(g.n_cells - 1);
        let fx = r - T::of_usize(i);
        let at = |kk: usize, ii: usize| self.nodal(kk, ii);
        let lower = at(k, i) + fx * (at(k, i + 1) - at(k, i));
        let upper = at(k + 1, i) + fx * (at(k + 1, i + 1) - at(k + 1, i));
        lower + ft * (upper - lower)
    }

    pub fn max_abs(&self) -> T {
        self.zeta.iter().fold(T::zero(), |m, z| m.max(z.abs()))
    }

    /// Text serialisation: versioned header, grid line, one row per time node.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        self.write_csv_annotated(w, &[])
    }

    /// [`ControlField::write_csv`] with extra `# ` comment lines after the
    /// grid line. Readers skip them.
    pub fn write_csv_annotated<W: Write>(&self, mut w: W, comments: &[String]) -> std::io::Result<()> {
        let g = &self.grid;
        writeln!(w, "{HEADER}")?;
        writeln!(
            w,
            "# horizon={},x_min={},x_max={},n_cells={},n_tsteps={},clip={}",
            self.horizon, g.x_min, g.x_max, g.n_cells, g.n_tsteps, self.clip
        )?;
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        for row in self.zeta.chunks(g.nodes()) {
            let line: Vec<String> = row.iter().map(|z| z.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let bad = |m: &str| Error::Config(format!("control file: {m}"));
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| bad("unexpected end of file"))?
                .map_err(|e| bad(&e.to_string()))
        };
        if next()?.trim() != HEADER {
            return Err(bad("missing or unsupported version header"));
        }
        let meta = next()?;
        let meta = meta.trim().strip_prefix("# ").ok_or_else(|| bad("missing grid line"))?;
        let mut fields = std::collections::HashMap::new();
        for kv in meta.split(',') {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad("malformed grid line"))?;
            fields.insert(k.to_string(), v.to_string());
        }
        let real = |k: &str| -> Result<T> {
            let s = fields.get(k).ok_or_else(|| bad(&format!("missing {k}")))?;
            s.parse::<f64>().map(T::of).map_err(|_| bad(&format!("bad {k}")))
        };
        let int = |k: &str| -> Result<usize> {
            let s = fields.get(k).ok_or_else(|| bad(&format!("missing {k}")))?;
            s.parse::<usize>().map_err(|_| bad(&format!("bad {k}")))
        };
        let grid = GridSpec::new(real("x_min")?, real("x_max")?, int("n_cells")?, int("n_tsteps")?)?;
        let horizon = real("horizon")?;
        let clip = real("clip")?;
        let mut zeta = Vec::with_capacity((grid.n_tsteps + 1) * grid.nodes());
        for _ in 0..=grid.n_tsteps {
            let mut line = next()?;
            while line.starts_with('#') {
                line = next()?;
            }
            let before = zeta.len();
            for tok in line.trim().split(',') {
                zeta.push(tok.parse::<f64>().map(T::of).map_err(|_| bad("bad value"))?);
            }
            if zeta.len() - before != grid.nodes() {
                return Err(bad("row length does not match the grid"));
            }
        }
        Ok(Self { grid, horizon, clip, zeta })
    }
}

impl<T: Real> ImportanceControl<T> for ControlField<T> {
    fn eval(&self, t: T, x: &[T], out: &mut [T]) {
        out[0] = self.eval_at(t, x[0]);
    }
    fn is_zero(&self) -> bool {
        self.zeta.iter().all(|z| z.is_zero())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::make_kuramoto;
    use crate::particle_system::simulate_law;
    use crate::randomness::{draw_bundle, StreamKey, StreamRole};

    fn law_for(model: &ModelSpec<f64>, p: usize, n: usize) -> EmpiricalLaw<f64> {
        let b = draw_bundle(&StreamKey::new(21, StreamRole::ControlLaw), model, p, n).unwrap();
        simulate_law(model, &b, p, n).unwrap()
    }

    fn small_grid() -> GridSpec<f64> {
        GridSpec::new(-8.0, 8.0, 160, 40).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(1.0_f64, 1.0, 100, 10).is_err());
        assert!(GridSpec::new(0.0_f64, 1.0, 7, 10).is_err());
        assert!(GridSpec::new(0.0_f64, 1.0, 8, 0).is_err());
        let g = GridSpec::<f64>::default();
        assert_eq!((g.x_min, g.x_max, g.n_cells, g.n_tsteps), (-8.0, 8.0, 800, 200));
    }

    #[test]
    fn thomas_solves_small_system() {
        let (lo, di, up): ([f64; 3], [f64; 3], [f64; 3]) = ([0.0, 1.0, 1.0], [4.0, 4.0, 4.0], [1.0, 1.0, 0.0]);
        let x = [1.0_f64, -2.0, 3.0];
        let rhs = [4.0 * 1.0 - 2.0, 1.0 - 8.0 + 3.0, -2.0 + 12.0];
        let (mut out, mut s) = ([0.0; 3], [0.0; 3]);
        thomas(&lo, &di, &up, &rhs, &mut out, &mut s).unwrap();
        for (a, b) in out.iter().zip(&x) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn unit_observable_gives_unit_value_and_zero_control() {
        let model = make_kuramoto(0.4, 1.0, 0.0, 0.2_f64.sqrt(), 0.2).unwrap();
        let law = law_for(&model, 50, 20);
        for scheme in [TimeScheme::BackwardEuler, TimeScheme::Bdf2] {
            let grid = small_grid().with_scheme(scheme);
            let one = Observable::new(|_: &[f64]| 1.0, true);
            let v = solve_kbe(&model, &law, &grid, &one).unwrap();
            assert!(v.values.iter().all(|x| (x - 1.0).abs() < 1e-12));
            let c = control_from_value(&v, &model, &law, 10.0).unwrap();
            assert!(c.max_abs() < 1e-10);
        }
        let v = solve_kbe(&model, &law, &small_grid(), &Observable::constant(1.0)).unwrap();
        let c = control_from_value(&v, &model, &law, 10.0).unwrap();
        assert!(c.is_zero());
    }

    #[test]
    fn exponential_value_gives_constant_control() {
        let model = make_kuramoto(0.4, 1.0, 0.0, 0.0, 0.0).unwrap();
        let law = law_for(&model, 10, 10);
        let grid = small_grid();
        let a = 1.3;
        let values: Vec<f64> =
            (0..=grid.n_tsteps).flat_map(|_| (0..grid.nodes()).map(move |i| (a * grid.node(i)).exp())).collect();
        let v = ValueField { values, grid, horizon: 1.0, floor: 0.0, floor_hits: 0 };
        let c = control_from_value(&v, &model, &law, 10.0).unwrap();
        for z in &c.zeta {
            assert!((z - 0.4 * a).abs() < 1e-9);
        }
    }

    #[test]
    fn maximum_principle_backward_euler() {
        let model = make_kuramoto(0.4, 1.0, 0.0, 0.2_f64.sqrt(), 0.2).unwrap();
        let law = law_for(&model, 100, 20);
        let grid = small_grid().with_scheme(TimeScheme::BackwardEuler);
        let obs = Observable::mollified_indicator(0.5);
        let v = solve_kbe(&model, &law, &grid, &obs).unwrap();
        let last = v.row(grid.n_tsteps);
        let gmin = last.iter().cloned().fold(f64::INFINITY, f64::min);
        let gmax = last.iter().cloned().fold(0.0, f64::max);
        for x in &v.values {
            assert!(*x >= gmin.min(v.floor) - 1e-15 && *x <= gmax + 1e-12);
        }
    }

    #[test]
    fn control_points_toward_threshold() {
        let model = make_kuramoto(0.4, 1.0, 0.0, 0.2_f64.sqrt(), 0.2).unwrap();
        let law = law_for(&model, 200, 20);
        let grid = GridSpec::new(-8.0, 8.0, 320, 50).unwrap();
        let c = solve_control(&model, &law, &grid, &Observable::mollified_indicator(3.5), 10.0).unwrap();
        for i in 0..grid.nodes() {
            let x = grid.node(i);
            if x > -6.4 && x < 3.5 {
                assert!(c.nodal(0, i) > 0.0, "zeta(0, {x}) = {}", c.nodal(0, i));
            }
        }
        assert!(c.max_abs() <= 10.0);
    }

    #[test]
    fn dimension_is_checked() {
        let mut model = make_kuramoto(0.4, 1.0, 0.0, 0.0, 0.0).unwrap();
        let law = law_for(&model, 4, 4);
        model.dim = 2;
        assert!(matches!(
            solve_kbe(&model, &law, &small_grid(), &Observable::constant(1.0)),
            Err(Error::UnsupportedDimension(2))
        ));
    }

    fn ramp_field() -> ControlField<f64> {
        let grid = GridSpec::new(0.0, 8.0, 8, 4).unwrap();
        let zeta = (0..5).flat_map(|k| (0..9).map(move |i| (k * 10 + i) as f64)).collect();
        ControlField { grid, horizon: 1.0, clip: 100.0, zeta }
    }

    #[test]
    fn interpolation_rules() {
        let c = ramp_field();
        assert_eq!(c.eval_at(0.25, 3.0), 13.0);
        assert_eq!(c.eval_at(0.5, 3.5), 23.5);
        assert_eq!(c.eval_at(0.25, 100.0), 18.0);
        assert_eq!(c.eval_at(0.25, -100.0), 10.0);
        assert_eq!(c.eval_at(1.0, 8.0), 48.0);
        assert!((c.eval_at(0.125, 0.0) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let c = ramp_field();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let back = ControlField::<f64>::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, c);
        assert!(ControlField::<f64>::read_csv("# other\n".as_bytes()).is_err());
        let mut annotated = Vec::new();
        c.write_csv_annotated(&mut annotated, &["seed=3".into(), "note".into()]).unwrap();
        assert_eq!(ControlField::<f64>::read_csv(annotated.as_slice()).unwrap(), c);
    }
}
