//! Generating functionals of Poisson collapse trajectories.
//!
//! For a test function f with |1 + λ^{−1/2} f| ≤ 1 the stochastic exponent
//!
//! ε_t^f(ω) = exp(−λ^{1/2} ∫₀ᵗ f) · ∏_{r ∈ ω, r < t} (1 + λ^{−1/2} f(r))
//!
//! has unit mean, and χ̆_t(f) = ⟨χ_t ε_t^f⟩ solves the linear ODE
//! χ̆' = −K^λ(t) χ̆ with K^λ(r) = λ(I − C)(1 + λ^{−1/2} f(r)) + iH.
//!
//! Kernels are the functional derivatives of χ̆_t at f = 0:
//!
//! χ̃_t(r₁, …, r_n) = λ^{n/2} e^{−K(t−r_n)} (C − I) ⋯ (C − I) e^{−K r₁} η,
//!
//! so that χ̆_t(f) = Σ_n ∫_{r₁<…<r_n<t} f(r₁)⋯f(r_n) χ̃_t(r₁, …, r_n).

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{expm, identity, Operator, StateVector, I};
use crate::model::ValidatedModel;
use crate::ode::integrate_piecewise;
use crate::parallel::chunked_reduce;
use crate::rng::CounterRng;
use crate::quadrature::SimplexGrid;
use crate::trajectory::{check_grid, evolve_state_unchecked, sample_jumps, JumpRecord};

/// Slack allowed in |1 + λ^{−1/2} f| ≤ 1.
pub const ADMISSIBILITY_TOL: f64 = 1e-12;

/// Largest kernel order accepted by [`kernel_inner_product`].
pub const MAX_KERNEL_ORDER: usize = 4;

/// Truncation ratio above which [`kernel_inner_product`] warns.
pub const TRUNCATION_WARN: f64 = 1e-3;

/// RK4 step bound: h · (1 + ‖A‖) ≤ this.
const ODE_STEP_SCALE: f64 = 1e-2;

/// Piecewise-constant complex function, `values[k]` on `[grid[k], grid[k+1])`
/// and zero outside `[grid[0], grid[last])`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    grid: Vec<f64>,
    values: Vec<Complex64>,
    lambda_ref: f64,
}

impl TestFunction {
    pub fn new(grid: Vec<f64>, values: Vec<Complex64>, lambda_ref: f64) -> Result<Self> {
        if !(lambda_ref > 0.0) || !lambda_ref.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda_ref must be positive, got {lambda_ref}")));
        }
        check_grid(&grid, None)?;
        if grid.len() != values.len() + 1 {
            return Err(Error::InvalidGrid(format!(
                "{} grid points need {} cell values, found {}",
                grid.len(),
                grid.len() - 1,
                values.len()
            )));
        }
        let scale = lambda_ref.sqrt().recip();
        for (cell, v) in values.iter().enumerate() {
            if !v.re.is_finite() || !v.im.is_finite() {
                return Err(Error::NonFinite(format!("test function cell {cell}")));
            }
            let modulus = (Complex64::new(1.0, 0.0) + v * scale).norm();
            if modulus > 1.0 + ADMISSIBILITY_TOL {
                return Err(Error::InadmissibleTestFunction { cell, modulus });
            }
        }
        Ok(Self { grid, values, lambda_ref })
    }

    /// Cell values 1 + z/√λ drawn uniformly from the closed unit disc.
    pub fn random(grid: Vec<f64>, lambda_ref: f64, rng: &mut CounterRng) -> Result<Self> {
        let root = lambda_ref.sqrt();
        let values = (1..grid.len())
            .map(|_| {
                let w = Complex64::from_polar(rng.uniform().sqrt(), std::f64::consts::TAU * rng.uniform());
                (w - 1.0) * root
            })
            .collect();
        Self::new(grid, values, lambda_ref)
    }

    pub fn zero(grid: Vec<f64>, lambda_ref: f64) -> Result<Self> {
        let cells = grid.len().saturating_sub(1);
        Self::new(grid, vec![Complex64::new(0.0, 0.0); cells], lambda_ref)
    }

    pub fn constant(grid: Vec<f64>, value: Complex64, lambda_ref: f64) -> Result<Self> {
        let cells = grid.len().saturating_sub(1);
        Self::new(grid, vec![value; cells], lambda_ref)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn lambda_ref(&self) -> f64 {
        self.lambda_ref
    }

    pub fn value_at(&self, t: f64) -> Complex64 {
        if t < self.grid[0] || t >= *self.grid.last().unwrap() {
            return Complex64::new(0.0, 0.0);
        }
        let k = self.grid.partition_point(|&g| g <= t) - 1;
        self.values[k]
    }

    /// ∫₀ᵗ f, exact for piecewise-constant f.
    pub fn integral(&self, t: f64) -> Complex64 {
        self.cells()
            .map(|(a, b, v)| v * (b.min(t) - a).max(0.0))
            .sum()
    }

    /// ∫₀ᵗ f g over a shared grid.
    pub fn integral_product(&self, other: &TestFunction, t: f64) -> Result<Complex64> {
        self.check_compatible(other)?;
        Ok(self
            .cells()
            .zip(&other.values)
            .map(|((a, b, f), g)| f * g * (b.min(t) - a).max(0.0))
            .sum())
    }

    /// Complex conjugate; admissibility is preserved because λ is real.
    pub fn conj(&self) -> TestFunction {
        TestFunction {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v.conj()).collect(),
            lambda_ref: self.lambda_ref,
        }
    }

    fn cells(&self) -> impl Iterator<Item = (f64, f64, Complex64)> + '_ {
        self.grid.windows(2).zip(&self.values).map(|(w, &v)| (w[0], w[1], v))
    }

    fn check_compatible(&self, other: &TestFunction) -> Result<()> {
        if self.grid != other.grid || self.lambda_ref != other.lambda_ref {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }
}

/// f ∔ g = f + λ^{−1/2} f g + g, cellwise. Since
/// 1 + λ^{−1/2}(f ∔ g) = (1 + λ^{−1/2} f)(1 + λ^{−1/2} g) the result is admissible.
pub fn dot_plus(f: &TestFunction, g: &TestFunction) -> Result<TestFunction> {
    f.check_compatible(g)?;
    let scale = f.lambda_ref.sqrt().recip();
    let values = f.values.iter().zip(&g.values).map(|(a, b)| a + a * b * scale + b).collect();
    Ok(TestFunction { grid: f.grid.clone(), values, lambda_ref: f.lambda_ref })
}

/// ε_t^f(ω) in closed form.
pub fn stochastic_exponent(f: &TestFunction, jumps: &JumpRecord, t: f64) -> Result<Complex64> {
    check_lambda(f.lambda_ref, jumps.lambda)?;
    let scale = f.lambda_ref.sqrt().recip();
    let product: Complex64 = jumps
        .times
        .iter()
        .take_while(|&&s| s < t)
        .map(|&s| 1.0 + f.value_at(s) * scale)
        .product();
    Ok((-f.lambda_ref.sqrt() * f.integral(t)).exp() * product)
}

/// ε_t^f at every grid time, sharing one pass over the jumps.
fn exponent_path(f: &TestFunction, jumps: &JumpRecord, grid: &[f64]) -> Vec<Complex64> {
    let scale = f.lambda_ref.sqrt().recip();
    let mut product = Complex64::new(1.0, 0.0);
    let mut next = 0;
    grid.iter()
        .map(|&t| {
            while next < jumps.times.len() && jumps.times[next] < t {
                product *= 1.0 + f.value_at(jumps.times[next]) * scale;
                next += 1;
            }
            (-f.lambda_ref.sqrt() * f.integral(t)).exp() * product
        })
        .collect()
}

fn check_lambda(lambda_ref: f64, lambda: f64) -> Result<()> {
    if (lambda_ref - lambda).abs() > 1e-12 * lambda.abs().max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "test function built for λ = {lambda_ref}, process has λ = {lambda}"
        )));
    }
    Ok(())
}

fn check_model(model: &ValidatedModel, f: &TestFunction) -> Result<()> {
    if model.lambda() <= 0.0 {
        return Err(Error::InvalidArgument("generating functionals need λ > 0".into()));
    }
    check_lambda(f.lambda_ref, model.lambda())
}

/// K^λ(r) = λ(I − C)(1 + λ^{−1/2} f(r)) + iH for a given value f(r).
pub fn functional_generator(model: &ValidatedModel, f_value: Complex64) -> Operator {
    let d = model.dim();
    let lambda = model.lambda();
    (identity(d) - model.collapse()).scale(lambda) * (1.0 + f_value / lambda.sqrt()) + model.hamiltonian() * I
}

/// V̆_t(f) = time-ordered exp(−∫₀ᵗ K^λ), so that χ̆_t(f) = V̆_t(f) η.
pub fn genfun_propagator(model: &ValidatedModel, f: &TestFunction, grid: &[f64]) -> Result<Vec<Operator>> {
    check_model(model, f)?;
    check_grid(grid, None)?;
    Ok(integrate_functional(model, f, identity(model.dim()), grid))
}

/// χ̆_t(f) on `grid` by RK4 on the piecewise-constant generator.
pub fn genfun_ode(
    model: &ValidatedModel,
    f: &TestFunction,
    eta0: &StateVector,
    grid: &[f64],
) -> Result<Vec<StateVector>> {
    check_model(model, f)?;
    check_grid(grid, None)?;
    check_dim(eta0, model.dim())?;
    let init = Operator::from_column_slice(eta0.len(), 1, eta0.as_slice());
    Ok(integrate_functional(model, f, init, grid)
        .into_iter()
        .map(|m| StateVector::from_column_slice(m.as_slice()))
        .collect())
}

fn integrate_functional(model: &ValidatedModel, f: &TestFunction, init: Operator, grid: &[f64]) -> Vec<Operator> {
    integrate_piecewise(&init, grid, f.grid(), ODE_STEP_SCALE, |r| -functional_generator(model, f.value_at(r)))
}

fn check_dim(v: &StateVector, d: usize) -> Result<()> {
    if v.len() != d {
        return Err(Error::Dimension(format!("state has {} entries, model dimension {d}", v.len())));
    }
    Ok(())
}

/// Monte Carlo estimate of χ̆_t(f) along a grid.
#[derive(Debug, Clone)]
pub struct GenfunEstimate {
    pub grid: Vec<f64>,
    pub mean: Vec<StateVector>,
    /// sqrt(Σ_components Var / N) at each grid time.
    pub stderr: Vec<f64>,
    pub n: usize,
    pub seed_base: u64,
}

impl GenfunEstimate {
    pub fn last(&self) -> (&StateVector, f64) {
        (self.mean.last().unwrap(), *self.stderr.last().unwrap())
    }
}

struct VectorSums {
    sum: Vec<StateVector>,
    sum_sq: Vec<f64>,
}

/// Averages χ_t(ω) ε_t^f(ω) over N trajectories; trajectory `i` uses seed
/// `seed_base + i`, as in [`crate::trajectory::ensemble_average`].
pub fn genfun_mc_path(
    model: &ValidatedModel,
    f: &TestFunction,
    eta0: &StateVector,
    n: usize,
    grid: &[f64],
    seed_base: u64,
) -> Result<GenfunEstimate> {
    check_model(model, f)?;
    check_grid(grid, None)?;
    check_dim(eta0, model.dim())?;
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let t_max = grid.last().unwrap().max(f64::MIN_POSITIVE);
    let d = model.dim();
    let points = grid.len();
    let zero = || VectorSums { sum: vec![StateVector::zeros(d); points], sum_sq: vec![0.0; points] };
    let totals = chunked_reduce(
        n,
        zero,
        |acc, i| {
            let jumps = sample_jumps(model.lambda(), t_max, seed_base.wrapping_add(i as u64)).expect("validated inputs");
            let path = evolve_state_unchecked(model, &jumps, eta0, grid);
            let eps = exponent_path(f, &jumps, grid);
            for k in 0..points {
                let x = &path.chi[k] * eps[k];
                acc.sum_sq[k] += x.norm_squared();
                acc.sum[k] += x;
            }
        },
        |a, b| {
            for (x, y) in a.sum.iter_mut().zip(&b.sum) {
                *x += y;
            }
            for (x, y) in a.sum_sq.iter_mut().zip(&b.sum_sq) {
                *x += y;
            }
        },
    );
    let nf = n as f64;
    let mean: Vec<StateVector> = totals.sum.iter().map(|s| s.unscale(nf)).collect();
    let stderr = mean
        .iter()
        .zip(&totals.sum_sq)
        .map(|(m, s2)| {
            if n < 2 {
                0.0
            } else {
                ((s2 / nf - m.norm_squared()).max(0.0) / (nf - 1.0)).sqrt()
            }
        })
        .collect();
    Ok(GenfunEstimate { grid: grid.to_vec(), mean, stderr, n, seed_base })
}

/// Monte Carlo estimate of χ̆_t(f) at a single time.
pub fn genfun_mc(
    model: &ValidatedModel,
    f: &TestFunction,
    eta0: &StateVector,
    n: usize,
    t: f64,
    seed_base: u64,
) -> Result<(StateVector, f64)> {
    let grid = if t > 0.0 { vec![0.0, t] } else { vec![0.0] };
    let est = genfun_mc_path(model, f, eta0, n, &grid, seed_base)?;
    let (mean, stderr) = est.last();
    Ok((mean.clone(), stderr))
}

/// Monte Carlo mean of a complex scalar with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarEstimate {
    pub mean: Complex64,
    /// sqrt((Var Re + Var Im) / N)
    pub stderr: f64,
}

/// Average of ε_t^f · ε_t^g (or of ε_t^f alone when `g` is `None`) over
/// trajectories of intensity `f.lambda_ref()`.
pub fn exponent_mc(
    f: &TestFunction,
    g: Option<&TestFunction>,
    t: f64,
    n: usize,
    seed_base: u64,
) -> Result<ScalarEstimate> {
    if let Some(g) = g {
        f.check_compatible(g)?;
    }
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let lambda = f.lambda_ref;
    let (sum, sum_sq) = chunked_reduce(
        n,
        || (Complex64::new(0.0, 0.0), 0.0),
        |acc, i| {
            let jumps = sample_jumps(lambda, t.max(f64::MIN_POSITIVE), seed_base.wrapping_add(i as u64))
                .expect("validated inputs");
            let mut x = stochastic_exponent(f, &jumps, t).expect("matching intensity");
            if let Some(g) = g {
                x *= stochastic_exponent(g, &jumps, t).expect("matching intensity");
            }
            acc.0 += x;
            acc.1 += x.norm_sqr();
        },
        |a, b| {
            a.0 += b.0;
            a.1 += b.1;
        },
    );
    let nf = n as f64;
    let mean = sum / nf;
    let stderr = if n < 2 { 0.0 } else { ((sum_sq / nf - mean.norm_sqr()).max(0.0) / (nf - 1.0)).sqrt() };
    Ok(ScalarEstimate { mean, stderr })
}

/// χ̃_t(r₁, …, r_n) for a strictly ordered tuple in [0, t).
pub fn tilde_kernel(model: &ValidatedModel, eta: &StateVector, tuple: &[f64], t: f64) -> Result<StateVector> {
    check_dim(eta, model.dim())?;
    if !tuple.windows(2).all(|w| w[0] < w[1]) || tuple.first().is_some_and(|&r| r < 0.0) {
        return Err(Error::UnorderedTuple);
    }
    if tuple.last().is_some_and(|&r| r >= t) {
        return Err(Error::InvalidArgument(format!("kernel times must lie below t = {t}")));
    }
    Ok(KernelFactors::new(model).apply(eta, tuple, t))
}

struct KernelFactors {
    minus_k: Operator,
    jump: Operator,
}

impl KernelFactors {
    fn new(model: &ValidatedModel) -> Self {
        let d = model.dim();
        let jump = (model.collapse() - identity(d)).scale(model.lambda().sqrt());
        Self { minus_k: -model.generator(), jump }
    }

    fn apply(&self, eta: &StateVector, tuple: &[f64], t: f64) -> StateVector {
        let mut v = eta.clone();
        let mut now = 0.0;
        for &r in tuple {
            v = &self.jump * (expm(&self.minus_k.scale(r - now)) * v);
            now = r;
        }
        expm(&self.minus_k.scale(t - now)) * v
    }
}

/// Kernel values on the points of a [`SimplexGrid`], one vector per point.
#[derive(Debug, Clone)]
pub struct KernelTable {
    pub grid: SimplexGrid,
    pub dim: usize,
    /// `entries[n][p]` pairs with `grid.points[n][p]`.
    pub entries: Vec<Vec<StateVector>>,
}

impl KernelTable {
    /// Only the order-0 entry is nonzero.
    pub fn vacuum(eta: &StateVector, grid: &SimplexGrid) -> Self {
        let d = eta.len();
        let mut entries = vec![vec![eta.clone()]];
        for level in &grid.points[1..] {
            entries.push(vec![StateVector::zeros(d); level.len()]);
        }
        Self { grid: grid.clone(), dim: d, entries }
    }

    /// χ̃_t of the trajectory started at η, tabulated for t = `grid.t`.
    pub fn trajectory_kernels(model: &ValidatedModel, eta: &StateVector, grid: &SimplexGrid) -> Result<Self> {
        check_dim(eta, model.dim())?;
        let factors = KernelFactors::new(model);
        let entries = grid
            .points
            .iter()
            .map(|level| level.iter().map(|(tuple, _)| factors.apply(eta, tuple, grid.t)).collect())
            .collect();
        Ok(Self { grid: grid.clone(), dim: model.dim(), entries })
    }

    /// ε̃^g(r₁, …, r_n) = g(r₁)⋯g(r_n), times the fixed vector ξ.
    pub fn exponential(g: &TestFunction, xi: &StateVector, grid: &SimplexGrid) -> Self {
        let entries = grid
            .points
            .iter()
            .map(|level| {
                level
                    .iter()
                    .map(|(tuple, _)| {
                        let weight: Complex64 = tuple.iter().map(|&r| g.value_at(r)).product();
                        xi * weight
                    })
                    .collect()
            })
            .collect();
        Self { grid: grid.clone(), dim: xi.len(), entries }
    }
}

/// Result of the truncated Fock inner product.
#[derive(Debug, Clone)]
pub struct InnerProduct {
    pub value: Complex64,
    pub per_order: Vec<Complex64>,
    /// |last term| / |partial sum|.
    pub truncation_estimate: f64,
    pub warning: bool,
}

/// (φ | χ) = Σ_{n ≤ n_max} ∫_{r₁<…<r_n<t} ⟨φ(r), χ(r)⟩ dr on the shared simplex grid.
pub fn kernel_inner_product(phi: &KernelTable, chi: &KernelTable, n_max: usize) -> Result<InnerProduct> {
    if n_max > MAX_KERNEL_ORDER {
        return Err(Error::InvalidArgument(format!("n_max = {n_max} exceeds {MAX_KERNEL_ORDER}")));
    }
    let (a, b) = (&phi.grid, &chi.grid);
    if a.t != b.t || a.nodes_per_axis != b.nodes_per_axis || a.max_order() < n_max || b.max_order() < n_max {
        return Err(Error::GridMismatch);
    }
    if phi.dim != chi.dim {
        return Err(Error::Dimension(format!("kernel dimensions {} and {}", phi.dim, chi.dim)));
    }
    let per_order: Vec<Complex64> = (0..=n_max)
        .map(|n| {
            a.points[n]
                .iter()
                .zip(phi.entries[n].iter().zip(&chi.entries[n]))
                .map(|((_, w), (p, c))| p.dotc(c) * *w)
                .sum()
        })
        .collect();
    let value: Complex64 = per_order.iter().sum();
    let last = per_order.last().unwrap().norm();
    let truncation_estimate = if n_max == 0 || last == 0.0 {
        0.0
    } else if value.norm() == 0.0 {
        f64::INFINITY
    } else {
        last / value.norm()
    };
    let warning = truncation_estimate > TRUNCATION_WARN;
    if warning {
        log::warn!("kernel inner product truncated at order {n_max}: last-term ratio {truncation_estimate:.2e}");
    }
    Ok(InnerProduct { value, per_order, truncation_estimate, warning })
}
