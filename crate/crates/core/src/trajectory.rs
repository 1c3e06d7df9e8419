//! Poisson collapse trajectories.
//!
//! Between events the state evolves unitarily under e^{−iHτ}; at each event
//! time the contraction C is applied. Events act with the forward-increment
//! convention: a jump at time s changes the state at times strictly greater
//! than s, so the value recorded at a grid point coinciding with a jump is
//! the pre-jump (left-limit) value.

use crate::error::{Error, Result};
use crate::linalg::{outer, Operator, StateVector};
use crate::master::DensityPath;
use crate::model::ValidatedModel;
use crate::parallel::chunked_reduce;
use crate::rng::{CounterRng, Domain};

/// Below this survival probability the a-posteriori state is not defined.
pub const Q_FLOOR: f64 = 1e-14;

/// Ordered event times of one Poisson trajectory on `[0, t_max)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpRecord {
    pub t_max: f64,
    pub times: Vec<f64>,
    pub lambda: f64,
    pub seed: u64,
}

impl JumpRecord {
    /// Explicit event times (for fixtures); `seed` is recorded as 0.
    pub fn from_times(lambda: f64, t_max: f64, times: Vec<f64>) -> Result<Self> {
        if !times.windows(2).all(|w| w[0] < w[1]) || times.iter().any(|&s| s < 0.0 || s >= t_max) {
            return Err(Error::InvalidArgument("jump times must be strictly increasing in [0, t_max)".into()));
        }
        Ok(Self { t_max, times, lambda, seed: 0 })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// n_t = |ω ∩ [0, t)|
    pub fn count_before(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s < t)
    }
}

/// Samples event times by exponential inter-arrivals.
pub fn sample_jumps(lambda: f64, t_max: f64, seed: u64) -> Result<JumpRecord> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::NegativeIntensity(lambda));
    }
    if !(t_max > 0.0) || !t_max.is_finite() {
        return Err(Error::InvalidArgument(format!("t_max must be positive, got {t_max}")));
    }
    let mut times = Vec::new();
    if lambda > 0.0 {
        let mut rng = CounterRng::new(seed, Domain::Jumps);
        let mut s = rng.exponential(lambda);
        while s < t_max {
            times.push(s);
            s += rng.exponential(lambda);
        }
    }
    Ok(JumpRecord { t_max, times, lambda, seed })
}

/// Uniform grid 0, h, …, t_max with `round(t_max / step)` intervals.
pub fn uniform_grid(t_max: f64, step: f64) -> Result<Vec<f64>> {
    if !(t_max > 0.0) || !(step > 0.0) {
        return Err(Error::InvalidGrid(format!("t_max = {t_max}, step = {step}")));
    }
    let n = ((t_max / step).round() as usize).max(1);
    Ok((0..=n).map(|k| t_max * k as f64 / n as f64).collect())
}

pub(crate) fn check_grid(grid: &[f64], t_max: Option<f64>) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidGrid("empty grid".into()));
    }
    if grid[0] != 0.0 {
        return Err(Error::InvalidGrid("grid must start at 0".into()));
    }
    if !grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidGrid("grid must be strictly increasing".into()));
    }
    if let Some(t_max) = t_max {
        if *grid.last().unwrap() > t_max {
            return Err(Error::InvalidGrid(format!("grid extends past t_max = {t_max}")));
        }
    }
    Ok(())
}

/// Drives any state through free evolution and jumps along a grid.
///
/// `free(state, τ)` advances by τ, `jump(state)` applies one collapse, and
/// `record(k, state)` observes the left-limit value at `grid[k]`.
pub(crate) fn walk<S>(
    jumps: &JumpRecord,
    grid: &[f64],
    state: &mut S,
    mut free: impl FnMut(&mut S, f64),
    mut jump: impl FnMut(&mut S),
    mut record: impl FnMut(usize, &S),
) {
    let mut now = 0.0;
    let mut next_jump = 0;
    for (k, &t) in grid.iter().enumerate() {
        while next_jump < jumps.times.len() && jumps.times[next_jump] < t {
            let s = jumps.times[next_jump];
            free(state, s - now);
            jump(state);
            now = s;
            next_jump += 1;
        }
        free(state, t - now);
        now = t;
        record(k, state);
    }
}

/// V_t(ω) = e^{−iH(t−t_n)} C ⋯ C e^{−iHt₁}, one factor C per event before t.
pub fn propagator_at(model: &ValidatedModel, jumps: &JumpRecord, t: f64) -> Result<Operator> {
    if t > jumps.t_max || t < 0.0 {
        return Err(Error::InvalidArgument(format!("t = {t} outside [0, {}]", jumps.t_max)));
    }
    let mut v = Operator::identity(model.dim(), model.dim());
    let c = model.collapse();
    walk(
        jumps,
        &[0.0, t][..if t == 0.0 { 1 } else { 2 }],
        &mut v,
        |v, tau| {
            if tau > 0.0 {
                *v = model.free().at(tau) * &*v;
            }
        },
        |v| *v = c * &*v,
        |_, _| {},
    );
    Ok(v)
}

/// Pure-state trajectory on a grid.
#[derive(Debug, Clone)]
pub struct TrajectoryPath {
    pub grid: Vec<f64>,
    pub chi: Vec<StateVector>,
    /// Survival probability q = ‖χ‖².
    pub q: Vec<f64>,
    /// A-posteriori state χ/‖χ‖, absent where q ≤ [`Q_FLOOR`].
    pub eta: Vec<Option<StateVector>>,
}

fn check_normalized(eta0: &StateVector, d: usize) -> Result<()> {
    if eta0.len() != d {
        return Err(Error::Dimension(format!("state has {} entries, model dimension {d}", eta0.len())));
    }
    let n = eta0.norm_squared();
    if (n - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidArgument(format!("initial state must be normalized, ‖η‖² = {n}")));
    }
    Ok(())
}

pub fn evolve_state(
    model: &ValidatedModel,
    jumps: &JumpRecord,
    eta0: &StateVector,
    grid: &[f64],
) -> Result<TrajectoryPath> {
    check_normalized(eta0, model.dim())?;
    check_grid(grid, Some(jumps.t_max))?;
    Ok(evolve_state_unchecked(model, jumps, eta0, grid))
}

pub(crate) fn evolve_state_unchecked(
    model: &ValidatedModel,
    jumps: &JumpRecord,
    eta0: &StateVector,
    grid: &[f64],
) -> TrajectoryPath {
    let n = grid.len();
    let mut chi = Vec::with_capacity(n);
    let c = model.collapse();
    let mut psi = eta0.clone();
    walk(
        jumps,
        grid,
        &mut psi,
        |psi, tau| {
            if tau > 0.0 {
                *psi = model.free().apply(tau, psi);
            }
        },
        |psi| *psi = c * &*psi,
        |_, psi| chi.push(psi.clone()),
    );
    let q: Vec<f64> = chi.iter().map(|v| v.norm_squared()).collect();
    let eta = chi
        .iter()
        .zip(&q)
        .map(|(v, &qk)| (qk > Q_FLOOR).then(|| v.unscale(qk.sqrt())))
        .collect();
    TrajectoryPath { grid: grid.to_vec(), chi, q, eta }
}

/// Stochastic density matrix: von Neumann evolution between events,
/// ρ ↦ CρC† at events.
pub fn evolve_density(
    model: &ValidatedModel,
    jumps: &JumpRecord,
    sigma: &Operator,
    grid: &[f64],
) -> Result<DensityPath> {
    crate::master::check_density(sigma, model.dim())?;
    check_grid(grid, Some(jumps.t_max))?;
    let c = model.collapse();
    let c_adj = c.adjoint();
    let mut rho = sigma.clone();
    let mut out = Vec::with_capacity(grid.len());
    walk(
        jumps,
        grid,
        &mut rho,
        |rho, tau| {
            if tau > 0.0 {
                let u = model.free().at(tau);
                *rho = &u * &*rho * u.adjoint();
            }
        },
        |rho| *rho = c * &*rho * &c_adj,
        |_, rho| out.push(rho.clone()),
    );
    Ok(DensityPath::new(grid.to_vec(), out))
}

/// Ensemble mean of N trajectories.
#[derive(Debug, Clone)]
pub struct EnsembleAverage {
    pub rho_bar: DensityPath,
    pub q_bar: Vec<f64>,
    pub q_stderr: Vec<f64>,
    /// Frobenius-norm standard error of ρ̄ at each grid point, sqrt(E‖ψψ†−ρ̄‖²_F / (N(N−1))).
    pub rho_stderr: Vec<f64>,
    pub n: usize,
    pub seed_base: u64,
}

struct Partial {
    rho: Vec<Operator>,
    q: Vec<f64>,
    q2: Vec<f64>,
}

impl Partial {
    fn zeros(points: usize, d: usize) -> Self {
        Self { rho: vec![Operator::zeros(d, d); points], q: vec![0.0; points], q2: vec![0.0; points] }
    }

    fn absorb(&mut self, other: &Partial) {
        for (a, b) in self.rho.iter_mut().zip(&other.rho) {
            *a += b;
        }
        for (a, b) in self.q.iter_mut().zip(&other.q) {
            *a += b;
        }
        for (a, b) in self.q2.iter_mut().zip(&other.q2) {
            *a += b;
        }
    }
}

/// Averages N independent trajectories; trajectory `i` uses seed
/// `seed_base + i`. Output is bit-identical for any thread count.
pub fn ensemble_average(
    model: &ValidatedModel,
    eta0: &StateVector,
    n: usize,
    grid: &[f64],
    seed_base: u64,
) -> Result<EnsembleAverage> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    check_normalized(eta0, model.dim())?;
    check_grid(grid, None)?;
    let t_max = *grid.last().unwrap();
    let d = model.dim();
    let points = grid.len();
    let lambda = model.lambda();

    let total = chunked_reduce(
        n,
        || Partial::zeros(points, d),
        |acc, i| {
            let jumps = sample_jumps(lambda, t_max.max(f64::MIN_POSITIVE), seed_base.wrapping_add(i as u64))
                .expect("validated inputs");
            let path = evolve_state_unchecked(model, &jumps, eta0, grid);
            for k in 0..points {
                acc.rho[k] += outer(&path.chi[k]);
                acc.q[k] += path.q[k];
                acc.q2[k] += path.q[k] * path.q[k];
            }
        },
        Partial::absorb,
    );
    let nf = n as f64;
    let rho: Vec<Operator> = total.rho.iter().map(|r| r.unscale(nf)).collect();
    let q_bar: Vec<f64> = total.q.iter().map(|s| s / nf).collect();
    let q_stderr = total
        .q2
        .iter()
        .zip(&q_bar)
        .map(|(s2, m)| {
            if n < 2 {
                0.0
            } else {
                ((s2 / nf - m * m).max(0.0) * nf / (nf - 1.0) / nf).sqrt()
            }
        })
        .collect();
    // ‖ψψ†‖²_F = q², so the second moment is already in q2
    let rho_stderr = total
        .q2
        .iter()
        .zip(&rho)
        .map(|(s2, r)| {
            if n < 2 {
                0.0
            } else {
                ((s2 / nf - r.norm_squared()).max(0.0) / (nf - 1.0)).sqrt()
            }
        })
        .collect();
    Ok(EnsembleAverage { rho_bar: DensityPath::new(grid.to_vec(), rho), q_bar, q_stderr, rho_stderr, n, seed_base })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{basis, diag, expm, identity, sigma_z, spectral_norm, state, trace_distance};
    use crate::model::{reference_model, ModelSpec};

    fn excited() -> StateVector {
        basis(2, 1)
    }

    fn decay_only() -> ValidatedModel {
        ModelSpec::with_collapse(Operator::zeros(2, 2), diag(&[1.0, 0.8]), 1.0).validate().unwrap()
    }

    #[test]
    fn zero_intensity_has_no_jumps() {
        assert!(sample_jumps(0.0, 10.0, 3).unwrap().is_empty());
    }

    #[test]
    fn jumps_are_reproducible_and_ordered() {
        let a = sample_jumps(3.0, 5.0, 11).unwrap();
        let b = sample_jumps(3.0, 5.0, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.times.windows(2).all(|w| w[0] < w[1]));
        assert!(a.times.iter().all(|&s| (0.0..5.0).contains(&s)));
        assert!(sample_jumps(-1.0, 1.0, 0).is_err());
        assert!(sample_jumps(1.0, 0.0, 0).is_err());
    }

    #[test]
    fn no_jump_propagator_is_free_evolution() {
        let m = reference_model();
        let jumps = JumpRecord::from_times(1.0, 2.0, vec![]).unwrap();
        let v = propagator_at(&m, &jumps, 1.3).unwrap();
        let expect = expm(&(sigma_z() * crate::linalg::c64(0.0, -1.3)));
        assert!(spectral_norm(&(v - expect)) < 1e-13);
    }

    #[test]
    fn trivial_hamiltonian_propagator_is_power_of_collapse() {
        let m = decay_only();
        let jumps = JumpRecord::from_times(1.0, 1.0, vec![0.3, 0.7]).unwrap();
        let v = propagator_at(&m, &jumps, 1.0).unwrap();
        assert!(spectral_norm(&(v - diag(&[1.0, 0.64]))) < 1e-15);
    }

    #[test]
    fn single_jump_propagator_matches_state_evolution() {
        let m = reference_model();
        let jumps = JumpRecord::from_times(1.0, 1.0, vec![0.5]).unwrap();
        let v = propagator_at(&m, &jumps, 1.0).unwrap();
        let half = m.free().at(0.5);
        let expect = &half * m.collapse() * &half;
        assert!(spectral_norm(&(&v - expect)) < 1e-13);
        let eta = state(&[(0.6, 0.0), (0.0, 0.8)]);
        let path = evolve_state(&m, &jumps, &eta, &[0.0, 0.25, 1.0]).unwrap();
        assert!((path.chi[2].clone() - v * &eta).norm() < 1e-12);
    }

    #[test]
    fn isometric_collapse_preserves_survival() {
        let m = ModelSpec::with_collapse(sigma_z(), identity(2), 5.0).validate().unwrap();
        let jumps = sample_jumps(5.0, 2.0, 9).unwrap();
        let grid = uniform_grid(2.0, 0.1).unwrap();
        let eta = state(&[(0.6, 0.0), (0.0, 0.8)]);
        let path = evolve_state(&m, &jumps, &eta, &grid).unwrap();
        for q in &path.q {
            assert!((q - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn survival_is_power_of_collapse_amplitude() {
        let m = decay_only();
        let grid = uniform_grid(3.0, 0.05).unwrap();
        let jumps = sample_jumps(1.0, 3.0, 21).unwrap();
        let path = evolve_state(&m, &jumps, &excited(), &grid).unwrap();
        for (k, &t) in grid.iter().enumerate() {
            let n = jumps.count_before(t) as i32;
            assert!((path.q[k] - 0.64f64.powi(n)).abs() < 1e-14);
        }
    }

    #[test]
    fn forward_increment_convention_on_two_jump_fixture() {
        let m = decay_only();
        let jumps = JumpRecord::from_times(1.0, 1.0, vec![0.25, 0.5]).unwrap();
        let grid = [0.0, 0.25, 0.3, 0.5, 0.6, 1.0];
        let path = evolve_state(&m, &jumps, &excited(), &grid).unwrap();
        let expect = [1.0, 1.0, 0.64, 0.64, 0.4096, 0.4096];
        for (q, e) in path.q.iter().zip(expect) {
            assert!((q - e).abs() < 1e-14, "{q} vs {e}");
        }
    }

    #[test]
    fn survival_is_monotone_and_eta_normalized() {
        let m = reference_model();
        let grid = uniform_grid(4.0, 0.01).unwrap();
        let eta = state(&[(0.6, 0.0), (0.0, 0.8)]);
        for seed in 0..50 {
            let jumps = sample_jumps(2.0, 4.0, seed).unwrap();
            let path = evolve_state(&m, &jumps, &eta, &grid).unwrap();
            assert!((path.q[0] - 1.0).abs() < 1e-14);
            assert!(path.q.windows(2).all(|w| w[1] <= w[0] + 1e-14));
            for e in path.eta.iter().flatten() {
                assert!((e.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn a_posteriori_state_absent_below_floor() {
        let m = ModelSpec::with_collapse(Operator::zeros(2, 2), diag(&[1.0, 0.0]), 1.0).validate().unwrap();
        let jumps = JumpRecord::from_times(1.0, 1.0, vec![0.1]).unwrap();
        let path = evolve_state(&m, &jumps, &excited(), &[0.0, 0.5]).unwrap();
        assert!(path.eta[0].is_some());
        assert!(path.eta[1].is_none());
        assert_eq!(path.q[1], 0.0);
    }

    #[test]
    fn density_matches_pure_state_outer_product() {
        let m = reference_model();
        let grid = uniform_grid(2.0, 0.05).unwrap();
        let eta = state(&[(0.6, 0.0), (0.0, 0.8)]);
        for seed in 0..20 {
            let jumps = sample_jumps(3.0, 2.0, seed).unwrap();
            let pure = evolve_state(&m, &jumps, &eta, &grid).unwrap();
            let mixed = evolve_density(&m, &jumps, &outer(&eta), &grid).unwrap();
            for k in 0..grid.len() {
                assert!(spectral_norm(&(outer(&pure.chi[k]) - &mixed.rho[k])) < 1e-12);
            }
        }
    }

    #[test]
    fn density_is_constant_without_dynamics_and_trace_drop_matches_defect() {
        let m = ModelSpec::with_collapse(Operator::zeros(2, 2), identity(2), 2.0).validate().unwrap();
        let sigma = diag(&[0.3, 0.7]);
        let jumps = sample_jumps(2.0, 1.0, 5).unwrap();
        let path = evolve_density(&m, &jumps, &sigma, &[0.0, 0.5, 1.0]).unwrap();
        for r in &path.rho {
            assert_eq!(r, &sigma);
        }

        let m = reference_model();
        let sigma = outer(&state(&[(0.6, 0.0), (0.0, 0.8)]));
        let jumps = JumpRecord::from_times(1.0, 1.0, vec![0.4]).unwrap();
        let path = evolve_density(&m, &jumps, &sigma, &[0.0, 0.4, 0.41]).unwrap();
        let before = &path.rho[1];
        let defect = identity(2) - m.collapse().adjoint() * m.collapse();
        let drop = crate::linalg::trace(&(&defect * before)).re;
        assert!(drop >= 0.0);
        assert!((path.trace[1] - path.trace[2] - drop).abs() < 1e-13);
    }

    #[test]
    fn single_member_ensemble_is_the_trajectory() {
        let m = reference_model();
        let grid = uniform_grid(1.0, 0.1).unwrap();
        let eta = state(&[(0.6, 0.0), (0.0, 0.8)]);
        let ens = ensemble_average(&m, &eta, 1, &grid, 77).unwrap();
        let jumps = sample_jumps(1.0, 1.0, 77).unwrap();
        let path = evolve_state(&m, &jumps, &eta, &grid).unwrap();
        for k in 0..grid.len() {
            assert!(spectral_norm(&(outer(&path.chi[k]) - &ens.rho_bar.rho[k])) < 1e-15);
            assert_eq!(ens.q_stderr[k], 0.0);
        }
    }

    #[test]
    fn ensemble_is_independent_of_thread_count() {
        let m = reference_model();
        let grid = uniform_grid(1.0, 0.1).unwrap();
        let eta = state(&[(0.6, 0.0), (0.0, 0.8)]);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| ensemble_average(&m, &eta, 1000, &grid, 5).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.q_bar, b.q_bar);
        assert_eq!(a.q_stderr, b.q_stderr);
        assert_eq!(a.rho_bar.rho, b.rho_bar.rho);
    }

    #[test]
    fn ensemble_survival_matches_poisson_generating_function() {
        // E[c^{2n}] = exp(λ t (c² − 1)) summed as a series: oracle independent of sampling
        let series = |t: f64| -> f64 {
            let (lambda, x) = (1.0f64, 0.64f64);
            let mut term = (-lambda * t).exp();
            let mut sum = 0.0;
            for n in 0..200 {
                if n > 0 {
                    term *= lambda * t / n as f64;
                }
                sum += term * x.powi(n);
            }
            sum
        };
        assert!((series(1.0) - (-0.36f64).exp()).abs() < 1e-14);
        let m = decay_only();
        let grid = uniform_grid(1.0, 0.25).unwrap();
        let ens = ensemble_average(&m, &excited(), 10_000, &grid, 1).unwrap();
        for (k, &t) in grid.iter().enumerate() {
            assert!((ens.q_bar[k] - series(t)).abs() <= 3.0 * ens.q_stderr[k] + 1e-15, "t={t}");
        }
        let exact_rho = diag(&[0.0, series(1.0)]);
        assert!(trace_distance(&ens.rho_bar.rho[4], &exact_rho) <= 3.0 * ens.rho_stderr[4]);
    }

    #[test]
    fn counting_increments_are_zero_or_one_on_fine_grids() {
        let h = 1e-4;
        let mut multi = 0usize;
        let mut cells = 0usize;
        for seed in 0..200 {
            let jumps = sample_jumps(2.0, 1.0, seed).unwrap();
            let n_cells = (1.0 / h) as usize;
            let mut counts = vec![0u32; n_cells];
            for &s in &jumps.times {
                counts[((s / h) as usize).min(n_cells - 1)] += 1;
            }
            cells += n_cells;
            multi += counts.iter().filter(|&&c| c > 1).count();
            // (Δn)² = Δn on every 0/1 increment
            assert!(counts.iter().filter(|&&c| c <= 1).all(|&c| c * c == c));
        }
        // P(Δn ≥ 2) ≈ (λh)²/2 = 2e-8 per cell
        assert!((multi as f64) / (cells as f64) < 1e-5);
    }

    #[test]
    fn large_number_limit_single_trajectory() {
        let eta = state(&[(0.6, 0.0), (0.0, 0.8)]);
        let grid = uniform_grid(1.0, 0.01).unwrap();
        let mut scaled = Vec::new();
        let mut errs = Vec::new();
        for &lambda in &[10.0, 100.0, 1000.0, 10_000.0] {
            let m = crate::model::reference_rate_model(lambda).unwrap();
            let k = m.limit_generator().unwrap();
            let jumps = sample_jumps(lambda, 1.0, 4242).unwrap();
            let path = evolve_state(&m, &jumps, &eta, &grid).unwrap();
            let err = grid
                .iter()
                .zip(&path.chi)
                .map(|(&t, chi)| (chi - expm(&(-k.scale(t))) * &eta).norm())
                .fold(0.0, f64::max);
            errs.push(err);
            scaled.push(err * lambda.sqrt());
        }
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
        let (lo, hi) = scaled.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        assert!(hi / lo <= 3.0, "λ^(1/2)·err = {scaled:?}");
    }
}
