//! Diffusion limit of the collapse dynamics.
//!
//! With C = I − R/λ and λ → ∞ the dilated evolution is driven by a Wiener
//! process w_t through the Itô–Schrödinger equation
//!
//! dψ = −(R + iH) ψ dt + i B ψ dw,   B = (R + R†)^{1/2}.
//!
//! Because K + K† = R + R† = B², the Itô drift of ‖ψ‖² vanishes and the norm
//! is conserved pathwise in continuous time.

use serde::{Deserialize, Serialize};

use crate::dilation::noise_root;
use crate::error::{Error, Result};
use crate::linalg::{hermiticity_residual, identity, outer, spectral_norm, Operator, StateVector, I, TOL_HERM};
use crate::model::ValidatedModel;
use crate::parallel::chunked_reduce;
use crate::rng::{CounterRng, Domain};

/// Largest accepted step.
pub const MAX_DT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Strong order 1/2; the norm error grows like √dt along a path.
    #[default]
    EulerMaruyama,
    /// Adds −½B²ψ(Δw² − dt); the norm error is O(dt) along a path.
    Milstein,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionOptions {
    pub scheme: Scheme,
    /// Rescale ψ to unit norm after every step. Changes the process; off by default.
    pub renormalize: bool,
    /// Record every this many steps (the final time is always recorded).
    pub record_every: usize,
}

impl Default for DiffusionOptions {
    fn default() -> Self {
        Self { scheme: Scheme::EulerMaruyama, renormalize: false, record_every: 1 }
    }
}

/// H, R and the derived K = R + iH, B = (R + R†)^{1/2}.
#[derive(Debug, Clone)]
pub struct DiffusionModel {
    h: Operator,
    r: Operator,
    k: Operator,
    b: Operator,
}

impl DiffusionModel {
    pub fn new(h: &Operator, r: &Operator) -> Result<Self> {
        let d = h.nrows();
        if h.ncols() != d || r.nrows() != d || r.ncols() != d {
            return Err(Error::Dimension(format!("H is {}x{}, R is {}x{}", h.nrows(), h.ncols(), r.nrows(), r.ncols())));
        }
        let residual = hermiticity_residual(h);
        if residual > TOL_HERM {
            return Err(Error::NotHermitian { what: "H".into(), residual });
        }
        let b = noise_root(r)?;
        Ok(Self { h: h.clone(), r: r.clone(), k: r + h * I, b })
    }

    /// Uses the model's rate operator R.
    pub fn from_model(model: &ValidatedModel) -> Result<Self> {
        Self::new(model.hamiltonian(), model.rate().ok_or(Error::MissingRate)?)
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.h
    }

    pub fn rate(&self) -> &Operator {
        &self.r
    }

    /// K = R + iH.
    pub fn generator(&self) -> &Operator {
        &self.k
    }

    /// B = (R + R†)^{1/2}.
    pub fn noise(&self) -> &Operator {
        &self.b
    }

    /// Right side of dρ/dt = −Kρ − ρK† + BρB.
    pub fn second_moment_rhs(&self, rho: &Operator) -> Operator {
        -(&self.k * rho) - rho * self.k.adjoint() + &self.b * rho * &self.b
    }
}

/// One path of the Itô–Schrödinger equation.
#[derive(Debug, Clone)]
pub struct DiffusionPath {
    pub grid: Vec<f64>,
    pub psi: Vec<StateVector>,
    /// Wiener increment of every step (not only recorded ones).
    pub wiener: Vec<f64>,
    pub dt: f64,
    pub seed: u64,
}

/// `steps` Gaussian increments of variance `dt` from the Wiener stream of `seed`.
pub fn wiener_increments(seed: u64, dt: f64, steps: usize) -> Vec<f64> {
    let mut rng = CounterRng::new(seed, Domain::Wiener);
    let scale = dt.sqrt();
    (0..steps).map(|_| rng.gaussian() * scale).collect()
}

/// Sums consecutive blocks of `factor` increments, giving the same Brownian
/// path at a coarser step.
pub fn coarsen(increments: &[f64], factor: usize) -> Vec<f64> {
    increments.chunks(factor).map(|c| c.iter().sum()).collect()
}

fn check_inputs(dm: &DiffusionModel, eta0: &StateVector, dt: f64) -> Result<()> {
    if eta0.len() != dm.dim() {
        return Err(Error::Dimension(format!("state has {} entries, model d = {}", eta0.len(), dm.dim())));
    }
    let n = eta0.norm_squared();
    if (n - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidArgument(format!("initial state must be normalized, ‖η‖² = {n}")));
    }
    if !(dt > 0.0) || dt > MAX_DT {
        return Err(Error::InvalidArgument(format!("dt must lie in (0, {MAX_DT}], got {dt}")));
    }
    Ok(())
}

fn step_count(dt: f64, t_max: f64) -> Result<usize> {
    if !(t_max > 0.0) || !t_max.is_finite() {
        return Err(Error::InvalidArgument(format!("t_max must be positive, got {t_max}")));
    }
    let steps = (t_max / dt).round();
    if ((steps * dt) - t_max).abs() > 1e-9 * t_max {
        return Err(Error::InvalidGrid(format!("t_max = {t_max} is not a multiple of dt = {dt}")));
    }
    Ok(steps as usize)
}

/// Per-step matrices: ψ ← (A₀ + Δw A₁ + Δw² A₂) ψ.
struct Stepper {
    a0: Operator,
    a1: Operator,
    a2: Option<Operator>,
}

impl Stepper {
    fn new(dm: &DiffusionModel, dt: f64, scheme: Scheme) -> Self {
        let d = dm.dim();
        let a1 = &dm.b * I;
        match scheme {
            Scheme::EulerMaruyama => Self { a0: identity(d) - dm.k.scale(dt), a1, a2: None },
            Scheme::Milstein => {
                let b2 = &dm.b * &dm.b;
                Self { a0: identity(d) - dm.k.scale(dt) + b2.scale(0.5 * dt), a1, a2: Some(b2.scale(-0.5)) }
            }
        }
    }

    fn apply(&self, psi: &StateVector, dw: f64) -> StateVector {
        let mut next = &self.a0 * psi + (&self.a1 * psi) * crate::linalg::re(dw);
        if let Some(a2) = &self.a2 {
            next += (a2 * psi) * crate::linalg::re(dw * dw);
        }
        next
    }
}

/// Integrates along given increments; returns ψ at every `record_every`-th
/// step and at the end.
pub fn integrate_increments(
    dm: &DiffusionModel,
    eta0: &StateVector,
    dt: f64,
    increments: &[f64],
    options: &DiffusionOptions,
) -> (Vec<f64>, Vec<StateVector>) {
    let stepper = Stepper::new(dm, dt, options.scheme);
    let every = options.record_every.max(1);
    let steps = increments.len();
    let mut grid = vec![0.0];
    let mut out = vec![eta0.clone()];
    let mut psi = eta0.clone();
    for (n, &dw) in increments.iter().enumerate() {
        psi = stepper.apply(&psi, dw);
        if options.renormalize {
            let norm = psi.norm();
            if norm > 0.0 {
                psi.unscale_mut(norm);
            }
        }
        if (n + 1) % every == 0 || n + 1 == steps {
            grid.push((n + 1) as f64 * dt);
            out.push(psi.clone());
        }
    }
    (grid, out)
}

/// Euler–Maruyama path of dψ + (R + iH)ψ dt = i(R + R†)^{1/2} ψ dw.
pub fn integrate_ito_schrodinger(
    h: &Operator,
    r: &Operator,
    eta0: &StateVector,
    dt: f64,
    t_max: f64,
    seed: u64,
) -> Result<DiffusionPath> {
    integrate_with(&DiffusionModel::new(h, r)?, eta0, dt, t_max, seed, &DiffusionOptions::default())
}

pub fn integrate_with(
    dm: &DiffusionModel,
    eta0: &StateVector,
    dt: f64,
    t_max: f64,
    seed: u64,
    options: &DiffusionOptions,
) -> Result<DiffusionPath> {
    check_inputs(dm, eta0, dt)?;
    let steps = step_count(dt, t_max)?;
    let wiener = wiener_increments(seed, dt, steps);
    let (grid, psi) = integrate_increments(dm, eta0, dt, &wiener, options);
    Ok(DiffusionPath { grid, psi, wiener, dt, seed })
}

/// Ensemble statistics of N diffusion paths.
#[derive(Debug, Clone)]
pub struct DiffusionEnsemble {
    pub grid: Vec<f64>,
    pub mean: Vec<StateVector>,
    /// sqrt(Σ_components Var / N) of the mean.
    pub mean_stderr: Vec<f64>,
    pub second_moment: Vec<Operator>,
    /// sqrt(Σ_entries Var / N) of the second moment.
    pub second_moment_stderr: Vec<f64>,
    /// Mean of ‖ψ‖² with its standard error.
    pub norm_sq: Vec<f64>,
    pub norm_sq_stderr: Vec<f64>,
    pub n: usize,
    pub seed_base: u64,
}

struct MomentSums {
    psi: Vec<StateVector>,
    psi_sq: Vec<f64>,
    rho: Vec<Operator>,
    rho_sq: Vec<f64>,
    q: Vec<f64>,
    q_sq: Vec<f64>,
}

/// Path `i` uses seed `seed_base + i`; bit-identical for any thread count.
pub fn diffusion_ensemble(
    dm: &DiffusionModel,
    eta0: &StateVector,
    n: usize,
    dt: f64,
    t_max: f64,
    seed_base: u64,
    options: &DiffusionOptions,
) -> Result<DiffusionEnsemble> {
    check_inputs(dm, eta0, dt)?;
    let steps = step_count(dt, t_max)?;
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let d = dm.dim();
    let (grid, _) = integrate_increments(dm, eta0, dt, &vec![0.0; steps], options);
    let points = grid.len();
    let sums = chunked_reduce(
        n,
        || MomentSums {
            psi: vec![StateVector::zeros(d); points],
            psi_sq: vec![0.0; points],
            rho: vec![Operator::zeros(d, d); points],
            rho_sq: vec![0.0; points],
            q: vec![0.0; points],
            q_sq: vec![0.0; points],
        },
        |acc, i| {
            let wiener = wiener_increments(seed_base.wrapping_add(i as u64), dt, steps);
            let (_, path) = integrate_increments(dm, eta0, dt, &wiener, options);
            for (k, psi) in path.iter().enumerate() {
                let rho = outer(psi);
                let q = psi.norm_squared();
                acc.psi_sq[k] += q;
                acc.rho_sq[k] += rho.norm_squared();
                acc.q[k] += q;
                acc.q_sq[k] += q * q;
                acc.psi[k] += psi;
                acc.rho[k] += rho;
            }
        },
        |a, b| {
            for k in 0..points {
                a.psi[k] += &b.psi[k];
                a.psi_sq[k] += b.psi_sq[k];
                a.rho[k] += &b.rho[k];
                a.rho_sq[k] += b.rho_sq[k];
                a.q[k] += b.q[k];
                a.q_sq[k] += b.q_sq[k];
            }
        },
    );
    let nf = n as f64;
    let spread = |sum_sq: f64, mean_sq: f64| {
        if n < 2 {
            0.0
        } else {
            ((sum_sq / nf - mean_sq).max(0.0) / (nf - 1.0)).sqrt()
        }
    };
    let mean: Vec<StateVector> = sums.psi.iter().map(|s| s.unscale(nf)).collect();
    let second_moment: Vec<Operator> = sums.rho.iter().map(|s| s.unscale(nf)).collect();
    let norm_sq: Vec<f64> = sums.q.iter().map(|s| s / nf).collect();
    let mean_stderr = (0..points).map(|k| spread(sums.psi_sq[k], mean[k].norm_squared())).collect();
    let second_moment_stderr =
        (0..points).map(|k| spread(sums.rho_sq[k], second_moment[k].norm_squared())).collect();
    let norm_sq_stderr = (0..points).map(|k| spread(sums.q_sq[k], norm_sq[k] * norm_sq[k])).collect();
    Ok(DiffusionEnsemble {
        grid,
        mean,
        mean_stderr,
        second_moment,
        second_moment_stderr,
        norm_sq,
        norm_sq_stderr,
        n,
        seed_base,
    })
}

/// RK4 solution of dρ/dt = −Kρ − ρK† + BρB on the grid 0, h, …, t_max.
pub fn second_moment_ode(dm: &DiffusionModel, sigma: &Operator, grid: &[f64]) -> Vec<Operator> {
    let mut out = Vec::with_capacity(grid.len());
    let mut rho = sigma.clone();
    let mut now = grid.first().copied().unwrap_or(0.0);
    let scale = 1.0 + spectral_norm(&dm.k) + spectral_norm(&dm.b).powi(2);
    for &t in grid {
        let span = t - now;
        if span > 0.0 {
            let steps = (span * scale / 1e-2).ceil().max(1.0) as usize;
            let h = span / steps as f64;
            for _ in 0..steps {
                let k1 = dm.second_moment_rhs(&rho);
                let k2 = dm.second_moment_rhs(&(&rho + k1.scale(0.5 * h)));
                let k3 = dm.second_moment_rhs(&(&rho + k2.scale(0.5 * h)));
                let k4 = dm.second_moment_rhs(&(&rho + k3.scale(h)));
                rho += (k1 + k2.scale(2.0) + k3.scale(2.0) + k4).scale(h / 6.0);
            }
        }
        now = t;
        out.push(rho.clone());
    }
    out
}

/// Bias bound of the Euler mean: ‖(I − K dt)^n − e^{−Kt}‖ ≤ ‖K‖² t dt.
pub fn mean_bias_bound(dm: &DiffusionModel, t: f64, dt: f64) -> f64 {
    spectral_norm(&dm.k).powi(2) * t * dt
}

/// Bias bound of the Euler second moment: (‖K‖ + ‖B‖²)² t dt.
pub fn second_moment_bias_bound(dm: &DiffusionModel, t: f64, dt: f64) -> f64 {
    (spectral_norm(&dm.k) + spectral_norm(&dm.b).powi(2)).powi(2) * t * dt
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c64, diag, expm, from_rows, sigma_z, state, trace};
    use crate::model::reference_rate;

    fn eta() -> StateVector {
        state(&[(std::f64::consts::FRAC_1_SQRT_2, 0.0), (0.0, std::f64::consts::FRAC_1_SQRT_2)])
    }

    fn fixture() -> DiffusionModel {
        DiffusionModel::new(&sigma_z(), &reference_rate()).unwrap()
    }

    #[test]
    fn rejects_indefinite_rate_and_large_steps() {
        assert!(matches!(DiffusionModel::new(&sigma_z(), &diag(&[0.1, -0.2])), Err(Error::NotDissipative { .. })));
        let dm = fixture();
        assert!(integrate_with(&dm, &eta(), 2e-3, 1.0, 0, &DiffusionOptions::default()).is_err());
        assert!(integrate_with(&dm, &state(&[(1.0, 0.0), (1.0, 0.0)]), 1e-3, 1.0, 0, &DiffusionOptions::default()).is_err());
    }

    #[test]
    fn zero_rate_is_unitary_evolution() {
        let h = from_rows(&[&[(0.5, 0.0), (0.2, 0.1)], &[(0.2, -0.1), (-0.3, 0.0)]]);
        let dt = 1e-4;
        let path = integrate_ito_schrodinger(&h, &Operator::zeros(2, 2), &eta(), dt, 1.0, 3).unwrap();
        let bound = 2.0 * dt * spectral_norm(&h).powi(2);
        for psi in &path.psi {
            assert!((psi.norm_squared() - 1.0).abs() <= bound);
        }
        let exact = expm(&(&h * c64(0.0, -1.0))) * eta();
        assert!((path.psi.last().unwrap() - exact).norm() < 1e-3);
    }

    #[test]
    fn increments_are_reproducible_with_unit_quadratic_variation() {
        let dt = 1e-4;
        let a = wiener_increments(42, dt, 10_000);
        assert_eq!(a, wiener_increments(42, dt, 10_000));
        assert_ne!(a, wiener_increments(43, dt, 10_000));
        let qv: f64 = a.iter().map(|x| x * x).sum();
        assert!((qv - 1.0).abs() <= 3.0 * (2.0 * dt).sqrt(), "{qv}");
    }

    #[test]
    fn coarsening_preserves_the_path() {
        let fine = wiener_increments(1, 1e-5, 1000);
        let coarse = coarsen(&fine, 10);
        assert_eq!(coarse.len(), 100);
        let total: f64 = fine.iter().sum();
        assert!((coarse.iter().sum::<f64>() - total).abs() < 1e-14);
    }

    #[test]
    fn scalar_path_matches_closed_form() {
        // dψ = −rψ dt + i√(2r) ψ dw has the Itô solution ψ_t = exp(i√(2r) w_t) η
        let r = 0.8;
        let dm = DiffusionModel::new(&Operator::zeros(1, 1), &diag(&[r])).unwrap();
        let one = state(&[(1.0, 0.0)]);
        for dt in [1e-3, 1e-4] {
            for seed in 0..5 {
                let path = integrate_with(&dm, &one, dt, 1.0, seed, &DiffusionOptions::default()).unwrap();
                let mut w = 0.0;
                let mut worst: f64 = 0.0;
                for (k, dw) in path.wiener.iter().enumerate() {
                    w += dw;
                    let exact = c64(0.0, (2.0 * r).sqrt() * w).exp();
                    worst = worst.max((path.psi[k + 1][0] - exact).norm());
                }
                assert!(worst <= 5.0 * dt.sqrt(), "dt = {dt}, seed = {seed}: {worst}");
            }
        }
    }

    #[test]
    fn euler_norm_drift_on_fixture() {
        let path = integrate_ito_schrodinger(&sigma_z(), &reference_rate(), &eta(), 1e-4, 1.0, 11).unwrap();
        let drift = (path.psi.last().unwrap().norm_squared() - 1.0).abs();
        assert!(drift <= 1e-2, "{drift}");
    }

    fn norm_errors(scheme: Scheme, seed: u64) -> (f64, f64) {
        let dm = fixture();
        let options = DiffusionOptions { scheme, ..Default::default() };
        let fine = wiener_increments(seed, 1e-5, 100_000);
        let coarse = coarsen(&fine, 10);
        let err = |dt, inc: &[f64]| {
            let (_, psi) = integrate_increments(&dm, &eta(), dt, inc, &options);
            (psi.last().unwrap().norm_squared() - 1.0).abs()
        };
        (err(1e-4, &coarse), err(1e-5, &fine))
    }

    #[test]
    fn milstein_norm_error_is_first_order() {
        for seed in [1, 2, 3] {
            let (coarse, fine) = norm_errors(Scheme::Milstein, seed);
            let ratio = coarse / fine;
            assert!((5.0..=20.0).contains(&ratio), "seed {seed}: {coarse:e} / {fine:e} = {ratio}");
        }
    }

    #[test]
    fn euler_norm_error_is_half_order() {
        // the Euler norm increment is B²(Δw² − dt), whose sum has RMS ~ √dt
        let mut log_ratios = 0.0;
        for seed in 1..=8 {
            let (coarse, fine) = norm_errors(Scheme::EulerMaruyama, seed);
            log_ratios += (coarse / fine).ln();
        }
        let ratio = (log_ratios / 8.0).exp();
        assert!(ratio > 1.5 && ratio < 6.0, "{ratio}");
    }

    #[test]
    fn ensemble_mean_follows_semigroup() {
        let dm = fixture();
        let dt = 1e-3;
        let ens = diffusion_ensemble(&dm, &eta(), 10_000, dt, 1.0, 7, &DiffusionOptions { record_every: 250, ..Default::default() })
            .unwrap();
        assert_eq!(ens.grid.len(), 5);
        for (k, &t) in ens.grid.iter().enumerate() {
            let exact = expm(&(-dm.generator() * c64(t, 0.0))) * eta();
            let gap = (&ens.mean[k] - exact).norm();
            assert!(gap <= 3.0 * ens.mean_stderr[k] + mean_bias_bound(&dm, t, dt) + 1e-12, "t = {t}: {gap}");
        }
    }

    #[test]
    fn ensemble_second_moment_follows_lindblad_equation() {
        let dm = fixture();
        let dt = 1e-3;
        let ens = diffusion_ensemble(&dm, &eta(), 10_000, dt, 1.0, 8, &DiffusionOptions { record_every: 500, ..Default::default() })
            .unwrap();
        let ode = second_moment_ode(&dm, &outer(&eta()), &ens.grid);
        for k in 0..ens.grid.len() {
            let t = ens.grid[k];
            let bias = second_moment_bias_bound(&dm, t, dt);
            let gap = (&ens.second_moment[k] - &ode[k]).norm();
            assert!(gap <= 3.0 * ens.second_moment_stderr[k] + bias + 1e-12, "t = {t}: {gap}");
            let tr = trace(&ens.second_moment[k]).re;
            assert!((tr - 1.0).abs() <= 3.0 * ens.norm_sq_stderr[k] + bias + 1e-12);
            assert!((trace(&ode[k]).re - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_rate_has_no_spread() {
        let dm = DiffusionModel::new(&sigma_z(), &Operator::zeros(2, 2)).unwrap();
        let ens = diffusion_ensemble(&dm, &eta(), 200, 1e-3, 0.5, 0, &DiffusionOptions::default()).unwrap();
        assert!(ens.mean_stderr.iter().all(|&s| s < 1e-7));
        assert!(ens.second_moment_stderr.iter().all(|&s| s < 1e-7));
    }

    #[test]
    fn ensemble_is_thread_count_invariant() {
        let dm = fixture();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
                diffusion_ensemble(&dm, &eta(), 300, 1e-3, 0.2, 5, &DiffusionOptions::default()).unwrap()
            })
        };
        let (a, b) = (run(1), run(5));
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.second_moment, b.second_moment);
    }

    #[test]
    fn renormalization_keeps_unit_norm() {
        let dm = fixture();
        let opts = DiffusionOptions { renormalize: true, ..Default::default() };
        let path = integrate_with(&dm, &eta(), 1e-3, 1.0, 2, &opts).unwrap();
        assert!(path.psi.iter().all(|p| (p.norm() - 1.0).abs() < 1e-14));
    }
}
