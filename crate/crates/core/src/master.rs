//! Averaged dynamics.
//!
//! * [`integrate_master`]: dρ/dt = −i[H,ρ] + λ(CρC† − ρ) by classical RK4 on
//!   the vectorised d²-dimensional system.
//! * [`dyson_series`]: the same solution as a Poisson-weighted sum over
//!   ordered collapse times, each order integrated on Gauss–Legendre nodes
//!   in the interaction picture. Independent of the RK4 path.
//! * [`contraction_semigroup`]: ρ(t) = e^{−Kt}σe^{−K†t}, K = iH + R.

use crate::error::{Error, Result};
use crate::linalg::{
    hermiticity_residual, identity, min_eigenvalue, rk4_step_matrix, superop_left_right, trace,
    unvectorize, vectorize, Operator, I, TOL_PSD,
};
use crate::model::ValidatedModel;
use crate::quadrature::GaussRule;
use crate::trajectory::check_grid;

/// PSD floor used for integrated paths.
pub const PATH_PSD_FLOOR: f64 = -1e-8;

/// Default cap on the Dyson truncation order.
pub const DYSON_ORDER_CAP: usize = 40;

/// Density matrices on a time grid.
#[derive(Debug, Clone)]
pub struct DensityPath {
    pub grid: Vec<f64>,
    pub rho: Vec<Operator>,
    pub trace: Vec<f64>,
}

impl DensityPath {
    pub fn new(grid: Vec<f64>, rho: Vec<Operator>) -> Self {
        let trace = rho.iter().map(|r| trace(r).re).collect();
        Self { grid, rho, trace }
    }

    pub fn purity(&self, k: usize) -> f64 {
        trace(&(&self.rho[k] * &self.rho[k])).re
    }

    pub fn last(&self) -> &Operator {
        self.rho.last().expect("non-empty path")
    }
}

pub(crate) fn check_density(sigma: &Operator, d: usize) -> Result<()> {
    if sigma.nrows() != d || sigma.ncols() != d {
        return Err(Error::Dimension(format!("density is {}x{}, model dimension {d}", sigma.nrows(), sigma.ncols())));
    }
    let residual = hermiticity_residual(sigma);
    if residual > crate::linalg::TOL_HERM {
        return Err(Error::NotHermitian { what: "initial density".into(), residual });
    }
    let min_eig = min_eigenvalue(sigma);
    if min_eig < -TOL_PSD {
        return Err(Error::TooNegative { min_eig });
    }
    if trace(sigma).re > 1.0 + 1e-10 {
        return Err(Error::InvalidArgument("initial density has trace above 1".into()));
    }
    Ok(())
}

/// Vectorised master generator L with vec(dρ/dt) = L vec(ρ).
pub fn master_superoperator(model: &ValidatedModel) -> Operator {
    let d = model.dim();
    let id = identity(d);
    let h = model.hamiltonian();
    let c = model.collapse();
    let commutator = superop_left_right(h, &id) - superop_left_right(&id, h);
    let jump = superop_left_right(c, &c.adjoint()) - identity(d * d);
    commutator * (-I) + jump.scale(model.lambda())
}

/// RK4 step bound h = min(grid spacing, 10⁻³/(1 + λ)).
pub fn master_step(lambda: f64) -> f64 {
    1e-3 / (1.0 + lambda)
}

/// Fixed-step RK4 integration of the master equation, sampled on `grid`.
pub fn integrate_master(model: &ValidatedModel, sigma: &Operator, grid: &[f64]) -> Result<DensityPath> {
    check_density(sigma, model.dim())?;
    check_grid(grid, None)?;
    let generator = master_superoperator(model);
    integrate_linear(&generator, sigma, grid, master_step(model.lambda()))
}

/// RK4 on vec(ρ)' = L vec(ρ); every grid interval is split into equal substeps ≤ `h_max`.
pub(crate) fn integrate_linear(
    generator: &Operator,
    sigma: &Operator,
    grid: &[f64],
    h_max: f64,
) -> Result<DensityPath> {
    let d = sigma.nrows();
    let mut x = vectorize(sigma);
    let mut out = vec![sigma.clone()];
    let mut cached: Option<(u64, Operator)> = None;
    for w in grid.windows(2) {
        let span = w[1] - w[0];
        let steps = (span / h_max).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        let step = match &cached {
            Some((bits, m)) if *bits == h.to_bits() => m,
            _ => {
                cached = Some((h.to_bits(), rk4_step_matrix(generator, h)));
                &cached.as_ref().unwrap().1
            }
        };
        for _ in 0..steps {
            x = step * &x;
        }
        let rho = unvectorize(&x, d);
        let drift = hermiticity_residual(&rho);
        if drift > 1e-8 {
            return Err(Error::StepTooLarge { drift });
        }
        out.push(rho);
    }
    Ok(DensityPath::new(grid.to_vec(), out))
}

/// Result of a truncated Dyson–von Neumann sum.
#[derive(Debug, Clone)]
pub struct DysonResult {
    pub rho: Operator,
    /// Highest collapse order included.
    pub order: usize,
    /// Gauss–Legendre nodes used on [0, t].
    pub nodes: usize,
}

/// Poisson weights p_n = (λt)ⁿ e^{−λt}/n!
fn poisson_weight(mean: f64, n: usize) -> f64 {
    let mut log_p = -mean;
    for k in 1..=n {
        log_p += (mean / k as f64).ln();
    }
    if mean == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    log_p.exp()
}

/// Truncation order: the first n past the Poisson mode with p_n < tol.
pub fn dyson_order(lambda: f64, t: f64, tol: f64) -> usize {
    let mean = lambda * t;
    let mut n = mean.ceil() as usize;
    while poisson_weight(mean, n) >= tol {
        n += 1;
    }
    n
}

/// ρ(t) = Σ_n λⁿ ∫_{0<t₁<…<t_n<t} V_t σ V_t† e^{−λt} dt₁…dt_n.
pub fn dyson_series(model: &ValidatedModel, sigma: &Operator, t: f64, tol: f64) -> Result<DysonResult> {
    dyson_series_capped(model, sigma, t, tol, DYSON_ORDER_CAP)
}

pub fn dyson_series_capped(
    model: &ValidatedModel,
    sigma: &Operator,
    t: f64,
    tol: f64,
    cap: usize,
) -> Result<DysonResult> {
    check_density(sigma, model.dim())?;
    if !(t >= 0.0) || !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("need t ≥ 0 and tol > 0, got t = {t}, tol = {tol}")));
    }
    if t == 0.0 {
        return Ok(DysonResult { rho: sigma.clone(), order: 0, nodes: 0 });
    }
    let lambda = model.lambda();
    let order = if lambda == 0.0 { 0 } else { dyson_order(lambda, t, tol) };
    if order > cap {
        return Err(Error::TruncationBudgetExceeded { needed: order, cap });
    }

    let mut nodes = 8;
    let mut previous = dyson_on_rule(model, sigma, t, order, nodes);
    loop {
        let refined = dyson_on_rule(model, sigma, t, order, 2 * nodes);
        let change = crate::linalg::spectral_norm(&(&refined - &previous));
        nodes *= 2;
        previous = refined;
        if change <= tol / 10.0 || nodes >= 256 {
            break;
        }
    }
    Ok(DysonResult { rho: previous, order, nodes })
}

fn dyson_on_rule(model: &ValidatedModel, sigma: &Operator, t: f64, order: usize, m: usize) -> Operator {
    let lambda = model.lambda();
    let free = model.free();
    let c = model.collapse();
    let rule = GaussRule::new(m, 0.0, t);
    // interaction-picture collapse C̃(u) = e^{iHu} C e^{−iHu}
    let c_int: Vec<Operator> = rule
        .nodes
        .iter()
        .map(|&u| {
            let back = free.at(u);
            back.adjoint() * c * back
        })
        .collect();
    let jump = |k: usize, x: &Operator| &c_int[k] * x * c_int[k].adjoint();

    let mut sum = sigma.clone();
    let mut level = vec![sigma.clone(); m];
    for _ in 1..=order {
        let mapped: Vec<Operator> = (0..m).map(|k| jump(k, &level[k])).collect();
        let mut endpoint = Operator::zeros(sigma.nrows(), sigma.ncols());
        for k in 0..m {
            endpoint += mapped[k].scale(rule.weights[k]);
        }
        sum += endpoint.scale(lambda);
        level = (0..m)
            .map(|j| {
                let mut acc = Operator::zeros(sigma.nrows(), sigma.ncols());
                for k in 0..m {
                    acc += mapped[k].scale(rule.integration[j][k]);
                }
                acc.scale(lambda)
            })
            .collect();
    }
    let u = free.at(t);
    (&u * sum * u.adjoint()).scale((-lambda * t).exp())
}

/// ρ(t) = e^{−Kt}σe^{−K†t} for the given generator.
pub fn semigroup_path(k: &Operator, sigma: &Operator, grid: &[f64]) -> DensityPath {
    let rho = grid
        .iter()
        .map(|&t| {
            let v = crate::linalg::expm(&(-k.scale(t)));
            &v * sigma * v.adjoint()
        })
        .collect();
    DensityPath::new(grid.to_vec(), rho)
}

/// Large-number limit dynamics with K = iH + R.
pub fn contraction_semigroup(model: &ValidatedModel, sigma: &Operator, grid: &[f64]) -> Result<DensityPath> {
    let r = model.rate().ok_or(Error::MissingRate)?;
    let min_eig = min_eigenvalue(&(r + r.adjoint()));
    if min_eig < -TOL_PSD {
        return Err(Error::NotDissipative { min_eig });
    }
    check_density(sigma, model.dim())?;
    check_grid(grid, None)?;
    Ok(semigroup_path(&model.limit_generator()?, sigma, grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{diag, expm, outer, sigma_z, spectral_norm, state, trace_distance};
    use crate::model::{reference_model, reference_rate_model, ModelSpec};
    use crate::trajectory::uniform_grid;

    fn mixed_sigma() -> Operator {
        outer(&state(&[(0.6, 0.0), (0.0, 0.8)]))
    }

    #[test]
    fn unitary_case_is_von_neumann() {
        let m = ModelSpec::with_collapse(sigma_z(), identity(2), 2.0).validate().unwrap();
        let grid = uniform_grid(1.0, 0.1).unwrap();
        let path = integrate_master(&m, &mixed_sigma(), &grid).unwrap();
        for (k, &t) in grid.iter().enumerate() {
            let u = m.free().at(t);
            let expect = &u * mixed_sigma() * u.adjoint();
            assert!(spectral_norm(&(&path.rho[k] - expect)) < 1e-12);
            assert!((path.trace[k] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_decay_trace() {
        let m = ModelSpec::with_collapse(Operator::zeros(2, 2), diag(&[1.0, 0.8]), 1.0).validate().unwrap();
        let path = integrate_master(&m, &diag(&[0.0, 1.0]), &[0.0, 0.5, 1.0]).unwrap();
        assert!((path.trace[2] - (-0.36f64).exp()).abs() < 1e-12);
        assert!((path.trace[1] - (-0.18f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn trace_decreases_with_rate_given_by_defect() {
        let m = reference_model();
        let grid = uniform_grid(3.0, 0.01).unwrap();
        let path = integrate_master(&m, &mixed_sigma(), &grid).unwrap();
        let defect = m.collapse().adjoint() * m.collapse() - identity(2);
        for k in 1..grid.len() - 1 {
            assert!(path.trace[k + 1] <= path.trace[k]);
            let slope = (path.trace[k + 1] - path.trace[k - 1]) / 0.02;
            let expect = trace(&(&defect * &path.rho[k])).re * m.lambda();
            assert!(expect <= 0.0);
            assert!((slope - expect).abs() < 1e-4);
            assert!(hermiticity_residual(&path.rho[k]) < 1e-10);
            assert!(min_eigenvalue(&path.rho[k]) >= PATH_PSD_FLOOR);
        }
    }

    #[test]
    fn dyson_trivial_cases() {
        let m = reference_model();
        let r = dyson_series(&m, &mixed_sigma(), 0.0, 1e-12).unwrap();
        assert_eq!(r.rho, mixed_sigma());
        let free = ModelSpec::with_collapse(sigma_z(), diag(&[1.0, 0.8]), 0.0).validate().unwrap();
        let r = dyson_series(&free, &mixed_sigma(), 1.0, 1e-12).unwrap();
        let u = free.free().at(1.0);
        assert_eq!(r.order, 0);
        assert!(spectral_norm(&(r.rho - &u * mixed_sigma() * u.adjoint())) < 1e-14);
    }

    #[test]
    fn dyson_budget() {
        let m = ModelSpec::with_collapse(sigma_z(), diag(&[1.0, 0.8]), 50.0).validate().unwrap();
        assert!(matches!(
            dyson_series(&m, &mixed_sigma(), 1.0, 1e-12),
            Err(Error::TruncationBudgetExceeded { .. })
        ));
    }

    #[test]
    fn dyson_agrees_with_rk4_on_d2_and_d3() {
        let m = reference_model();
        let rk = integrate_master(&m, &mixed_sigma(), &[0.0, 1.0]).unwrap();
        let dy = dyson_series(&m, &mixed_sigma(), 1.0, 1e-12).unwrap();
        assert!(spectral_norm(&(rk.last() - &dy.rho)) < 1e-8);

        let h = crate::linalg::from_rows(&[
            &[(1.0, 0.0), (0.3, 0.2), (0.0, 0.0)],
            &[(0.3, -0.2), (-0.5, 0.0), (0.4, 0.0)],
            &[(0.0, 0.0), (0.4, 0.0), (0.2, 0.0)],
        ]);
        let c = crate::linalg::from_rows(&[
            &[(0.9, 0.0), (0.1, 0.0), (0.0, 0.0)],
            &[(0.0, 0.0), (0.7, 0.1), (0.0, 0.0)],
            &[(0.0, 0.1), (0.0, 0.0), (0.5, 0.0)],
        ]);
        let m3 = ModelSpec::with_collapse(h, c, 2.0).validate().unwrap();
        let sigma = diag(&[0.2, 0.3, 0.5]);
        let rk = integrate_master(&m3, &sigma, &[0.0, 0.7, 1.5]).unwrap();
        let dy = dyson_series(&m3, &sigma, 1.5, 1e-12).unwrap();
        assert!(spectral_norm(&(rk.last() - &dy.rho)) < 1e-8);
    }

    #[test]
    fn semigroup_trivial_cases() {
        let m = ModelSpec::with_rate(sigma_z(), Operator::zeros(2, 2), 1.0).validate().unwrap();
        let grid = uniform_grid(2.0, 0.5).unwrap();
        let path = contraction_semigroup(&m, &mixed_sigma(), &grid).unwrap();
        assert!(path.trace.iter().all(|&x| (x - 1.0).abs() < 1e-13));

        let r = 0.7;
        let m = ModelSpec::with_rate(Operator::zeros(2, 2), diag(&[0.0, r]), 10.0).validate().unwrap();
        let path = contraction_semigroup(&m, &diag(&[0.0, 1.0]), &grid).unwrap();
        for (k, &t) in grid.iter().enumerate() {
            assert!((path.trace[k] - (-2.0 * r * t).exp()).abs() < 1e-13);
        }
        assert!(matches!(
            contraction_semigroup(&reference_model(), &mixed_sigma(), &grid),
            Err(Error::MissingRate)
        ));
    }

    #[test]
    fn nonmixing_equation_residual() {
        let m = reference_rate_model(5.0).unwrap();
        let k = m.limit_generator().unwrap();
        let grid = uniform_grid(2.0, 0.25).unwrap();
        let h = 1e-4;
        for &t in &grid[1..] {
            let p = semigroup_path(&k, &mixed_sigma(), &[t - h, t, t + h]);
            let deriv = (&p.rho[2] - &p.rho[0]).unscale(2.0 * h);
            let residual = deriv + &k * &p.rho[1] + &p.rho[1] * k.adjoint();
            assert!(spectral_norm(&residual) <= 1e-6);
        }
    }

    #[test]
    fn semigroup_laws() {
        let k = reference_rate_model(3.0).unwrap().limit_generator().unwrap();
        for (s, t) in [(0.3, 0.9), (1.0, 2.5), (0.01, 4.0)] {
            let lhs = expm(&(-k.scale(s + t)));
            let rhs = expm(&(-k.scale(s))) * expm(&(-k.scale(t)));
            assert!(spectral_norm(&(&lhs - rhs)) <= 1e-11);
            assert!(spectral_norm(&lhs) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn master_converges_to_semigroup_at_rate_one_over_lambda() {
        let grid = [0.0, 0.5, 1.0];
        let mut errs = Vec::new();
        for lambda in [10.0, 100.0, 1000.0] {
            let m = reference_rate_model(lambda).unwrap();
            let master = integrate_master(&m, &mixed_sigma(), &grid).unwrap();
            let limit = contraction_semigroup(&m, &mixed_sigma(), &grid).unwrap();
            errs.push(trace_distance(master.last(), limit.last()));
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((5.0..=20.0).contains(&ratio), "ratio {ratio} from {errs:?}");
        }
    }
}
