//! Cross-oracle verification suite.
//!
//! Each check runs one property at a fixed seed and reports pass/fail, a
//! one-line summary of the measured quantities and its wall time against a
//! runtime budget. `Scale::Quick` divides every sample count by ten for a
//! fast smoke run; the tolerances are statistical and unchanged.

use std::time::Instant;

use serde::Serialize;

use crate::diffusion::{
    coarsen, diffusion_ensemble, integrate_increments, integrate_with, mean_bias_bound, wiener_increments,
    DiffusionModel, DiffusionOptions, Scheme,
};
use crate::dilation::{
    build_dilation, coherent_matrix_ode, compress, evolve_dilated, expansion_residual, limiting_coherent_ode,
    survival_ensemble, Flavor, METER_CAP, UNITARITY_TOL,
};
use crate::error::Result;
use crate::genfun::{dot_plus, exponent_mc, genfun_mc, genfun_ode, genfun_propagator, TestFunction};
use crate::linalg::{c64, diag, expm, outer, sigma_z, spectral_norm, state, trace_distance, Operator, StateVector};
use crate::master::{dyson_series, integrate_master};
use crate::model::{reference_model, reference_rate, ModelSpec, ValidatedModel};
use crate::parallel::chunked_reduce;
use crate::rng::{CounterRng, Domain};
use crate::trajectory::{ensemble_average, evolve_density, evolve_state, propagator_at, sample_jumps, uniform_grid, JumpRecord};
use crate::zeno::{zeno_sweep, ZenoConfig};

pub const CHECK_COUNT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Full,
    Quick,
}

impl Scale {
    fn samples(self, n: usize) -> usize {
        match self {
            Scale::Full => n,
            Scale::Quick => (n / 10).max(100),
        }
    }
}

/// Models the suite runs on.
#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub scale: Scale,
    /// d = 2 model in collapse form.
    pub fixture: ValidatedModel,
    /// Hamiltonian and rate operator of the rate-form fixture.
    pub rate_hamiltonian: Operator,
    pub rate: Operator,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { scale: Scale::Full, fixture: reference_model(), rate_hamiltonian: sigma_z(), rate: reference_rate() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub id: usize,
    pub name: &'static str,
    /// Numerical property holds.
    pub property_ok: bool,
    pub runtime_ok: bool,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
    pub budget_seconds: f64,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {:<28} {:>7.2}s / {:>3.0}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.budget_seconds,
            self.detail
        )
    }
}

struct Outcome {
    ok: bool,
    detail: String,
}

const CHECKS: [(&str, f64); CHECK_COUNT] = [
    ("poisson-law", 5.0),
    ("closed-form-survival", 10.0),
    ("master-triple-oracle", 30.0),
    ("density-state-consistency", 5.0),
    ("generating-functional", 60.0),
    ("dilation-algebra", 30.0),
    ("expansion-residual", 1.0),
    ("diffusion-limit", 60.0),
    ("zeno-sweep", 60.0),
    ("coherent-elements", 10.0),
];

/// Runs check `id` (1-based).
pub fn run_check(id: usize, config: &VerifyConfig) -> Result<CheckResult> {
    if !(1..=CHECK_COUNT).contains(&id) {
        return Err(crate::Error::InvalidArgument(format!("check id must be in 1..={CHECK_COUNT}, got {id}")));
    }
    let (name, budget) = CHECKS[id - 1];
    let start = Instant::now();
    let outcome = match id {
        1 => poisson_law(config),
        2 => closed_form_survival(config),
        3 => master_triple_oracle(config),
        4 => density_state_consistency(config),
        5 => generating_functional(config),
        6 => dilation_algebra(config),
        7 => expansion(config),
        8 => diffusion_limit(config),
        9 => zeno(config),
        _ => coherent_elements(config),
    }?;
    let seconds = start.elapsed().as_secs_f64();
    let runtime_ok = seconds < budget;
    Ok(CheckResult {
        id,
        name,
        property_ok: outcome.ok,
        runtime_ok,
        passed: outcome.ok && runtime_ok,
        detail: outcome.detail,
        seconds,
        budget_seconds: budget,
    })
}

pub fn run_all(config: &VerifyConfig) -> Result<Vec<CheckResult>> {
    (1..=CHECK_COUNT).map(|id| run_check(id, config)).collect()
}

/// Random d×d Hermitian matrix with Gaussian entries.
pub fn random_hermitian(d: usize, rng: &mut CounterRng) -> Operator {
    let a = Operator::from_fn(d, d, |_, _| c64(rng.gaussian(), rng.gaussian()));
    (&a + a.adjoint()).scale(0.5)
}

/// Random contraction with spectral norm in [0.5, 1], exactly 1 about 30% of the time.
pub fn random_contraction(d: usize, rng: &mut CounterRng) -> Operator {
    let a = Operator::from_fn(d, d, |_, _| c64(rng.gaussian(), rng.gaussian()));
    let scale = if rng.uniform() < 0.3 { 1.0 } else { 0.5 + 0.5 * rng.uniform() };
    a.unscale(spectral_norm(&a)).scale(scale)
}

/// Uniformly random unit vector.
pub fn random_state(d: usize, rng: &mut CounterRng) -> StateVector {
    let v = StateVector::from_fn(d, |_, _| c64(rng.gaussian(), rng.gaussian()));
    v.unscale(v.norm())
}

fn sci(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn fixture_state() -> StateVector {
    state(&[(0.6, 0.0), (0.0, 0.8)])
}

fn poisson_law(config: &VerifyConfig) -> Result<Outcome> {
    let n = config.scale.samples(100_000);
    let (lambda, t) = (1.0, 1.0);
    let counts = chunked_reduce(
        n,
        || [0usize; 6],
        |acc, i| {
            let k = sample_jumps(lambda, t, i as u64).expect("valid intensity").count_before(t);
            if k < 6 {
                acc[k] += 1;
            }
        },
        |a, b| a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
    );
    let mut ok = true;
    let mut worst: f64 = 0.0;
    let mut p = (-lambda * t).exp();
    for (k, &count) in counts.iter().enumerate() {
        if k > 0 {
            p *= lambda * t / k as f64;
        }
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        let z = (count as f64 / n as f64 - p).abs() / sigma;
        worst = worst.max(z);
        ok &= z <= 3.0;
    }
    Ok(Outcome { ok, detail: format!("N = {n}, max |z| over k = 0..5: {worst:.2}") })
}

fn closed_form_survival(config: &VerifyConfig) -> Result<Outcome> {
    let n = config.scale.samples(10_000);
    let model = ModelSpec::with_collapse(Operator::zeros(2, 2), diag(&[1.0, 0.8]), 1.0).validate()?;
    let eta = state(&[(0.0, 0.0), (1.0, 0.0)]);
    let grid = vec![0.0, 0.5, 1.0, 2.0];
    let ens = ensemble_average(&model, &eta, n, &grid, 2000)?;
    let master = integrate_master(&model, &outer(&eta), &grid)?;
    let mut ok = true;
    let mut worst_z: f64 = 0.0;
    let mut worst_master: f64 = 0.0;
    for k in 1..grid.len() {
        let exact = (-0.36 * grid[k]).exp();
        let z = (ens.q_bar[k] - exact).abs() / ens.q_stderr[k];
        let gap = (master.trace[k] - exact).abs();
        worst_z = worst_z.max(z);
        worst_master = worst_master.max(gap);
        ok &= z <= 3.0 && gap <= 1e-8;
    }
    Ok(Outcome { ok, detail: format!("N = {n}, max |z| = {worst_z:.2}, master trace error {worst_master:.1e}") })
}

fn master_triple_oracle(config: &VerifyConfig) -> Result<Outcome> {
    let n = config.scale.samples(10_000);
    let model = &config.fixture;
    let eta = random_state(model.dim(), &mut CounterRng::new(3, Domain::Fixtures));
    let sigma = outer(&eta);
    let master = integrate_master(model, &sigma, &[0.0, 1.0])?;
    let dyson = dyson_series(model, &sigma, 1.0, 1e-12)?;
    let ode_vs_series = trace_distance(master.last(), &dyson.rho);
    let ens = ensemble_average(model, &eta, n, &[0.0, 1.0], 3000)?;
    let envelope = 3.0 * ens.rho_stderr[1];
    let to_master = trace_distance(ens.rho_bar.last(), master.last());
    let to_series = trace_distance(ens.rho_bar.last(), &dyson.rho);
    Ok(Outcome {
        ok: ode_vs_series <= 1e-8 && to_master <= envelope && to_series <= envelope,
        detail: format!(
            "ODE vs series {ode_vs_series:.1e} (order {}); ensemble N = {n}: {to_master:.2e} / {to_series:.2e} ≤ {envelope:.2e}",
            dyson.order
        ),
    })
}

fn density_state_consistency(config: &VerifyConfig) -> Result<Outcome> {
    let model = &config.fixture;
    let grid = uniform_grid(2.0, 0.25)?;
    let mut rng = CounterRng::new(4, Domain::Fixtures);
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let eta = random_state(model.dim(), &mut rng);
        let jumps = sample_jumps(model.lambda(), 2.0, 4000 + seed)?;
        let path = evolve_state(model, &jumps, &eta, &grid)?;
        let density = evolve_density(model, &jumps, &outer(&eta), &grid)?;
        for (chi, rho) in path.chi.iter().zip(&density.rho) {
            worst = worst.max((rho - outer(chi)).norm());
        }
    }
    Ok(Outcome { ok: worst <= 1e-12, detail: format!("100 trajectories, max ‖ρ − χχ†‖ = {worst:.1e}") })
}

fn generating_functional(config: &VerifyConfig) -> Result<Outcome> {
    let n = config.scale.samples(100_000);
    let lambda = config.fixture.lambda();
    let t = 1.0;
    let grid = uniform_grid(t, 0.25)?;
    let mut rng = CounterRng::new(5, Domain::Fixtures);
    let mut ok = true;
    let mut worst_sum: f64 = 0.0;
    let mut worst_product: f64 = 0.0;
    for pair in 0..3u64 {
        let f = TestFunction::random(grid.clone(), lambda, &mut rng)?;
        let g = TestFunction::random(grid.clone(), lambda, &mut rng)?;
        let sum = exponent_mc(&dot_plus(&f, &g)?, None, t, n, 5000 + 2 * pair * n as u64)?;
        let product = exponent_mc(&f, Some(&g), t, n, 5000 + (2 * pair + 1) * n as u64)?;
        let z_sum = (sum.mean - 1.0).norm() / sum.stderr;
        let z_product = (product.mean - f.integral_product(&g, t)?.exp()).norm() / product.stderr;
        worst_sum = worst_sum.max(z_sum);
        worst_product = worst_product.max(z_product);
        ok &= z_sum <= 3.0 && z_product <= 3.0;
    }
    let model = &config.fixture;
    let n_state = config.scale.samples(10_000);
    let eta = fixture_state();
    let f = TestFunction::random(grid.clone(), lambda, &mut rng)?;
    let ode = genfun_ode(model, &f, &eta, &grid)?;
    let (mean, stderr) = genfun_mc(model, &f, &eta, n_state, t, 5500)?;
    let z_state = (&mean - ode.last().unwrap()).norm() / stderr;
    ok &= z_state <= 3.0;
    Ok(Outcome {
        ok,
        detail: format!(
            "N = {n}: max |z| ⟨ε^(f∔g)⟩ {worst_sum:.2}, ⟨ε^f ε^g⟩ {worst_product:.2}; MC vs ODE (N = {n_state}) |z| {z_state:.2}"
        ),
    })
}

fn dilation_algebra(config: &VerifyConfig) -> Result<Outcome> {
    let mut rng = CounterRng::new(6, Domain::Fixtures);
    let mut unitarity: f64 = 0.0;
    for trial in 0..50 {
        let c = random_contraction(1 + trial % 4, &mut rng);
        for flavor in [Flavor::Hermitian, Flavor::NonHermitian] {
            unitarity = unitarity.max(build_dilation(&c, flavor)?.unitarity_residual());
        }
    }

    let mut compression: f64 = 0.0;
    let t = 1.5;
    for trial in 0..100usize {
        let d = 1 + trial % 4;
        let c = random_contraction(d, &mut rng);
        let model = ModelSpec::with_collapse(random_hermitian(d, &mut rng), c.clone(), 2.0).validate()?;
        let eta = random_state(d, &mut rng);
        let mut times: Vec<f64> = (0..trial % 7).map(|_| t * rng.uniform()).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let jumps = JumpRecord::from_times(2.0, t, times)?;
        let target = propagator_at(&model, &jumps, t)? * &eta;
        for flavor in [Flavor::Hermitian, Flavor::NonHermitian] {
            let s = build_dilation(&c, flavor)?;
            let states = evolve_dilated(&s, &model, &jumps, &eta, &[0.0, t], METER_CAP)?;
            compression = compression.max((compress(states.last().unwrap(), &flavor.readout())? - &target).norm());
        }
    }

    let model = &config.fixture;
    let eta = fixture_state();
    let grid = vec![0.0, 0.5, 1.0, 2.0];
    let n = config.scale.samples(10_000);
    let master = integrate_master(model, &outer(&eta), &grid)?;
    let mut worst_z: f64 = 0.0;
    for flavor in [Flavor::Hermitian, Flavor::NonHermitian] {
        let s = build_dilation(model.collapse(), flavor)?;
        let table = survival_ensemble(&s, model, &eta, n, &grid, 6000, METER_CAP)?;
        for k in 1..grid.len() {
            worst_z = worst_z.max((table.mean[k] - master.trace[k]).abs() / table.stderr[k]);
        }
    }
    Ok(Outcome {
        ok: unitarity <= UNITARITY_TOL && compression <= 1e-12 && worst_z <= 3.0,
        detail: format!(
            "‖S†S − I‖ ≤ {unitarity:.1e}, compression error {compression:.1e}, survival (N = {n}) max |z| {worst_z:.2}"
        ),
    })
}

fn expansion(config: &VerifyConfig) -> Result<Outcome> {
    let lambdas = [1e2, 1e3, 1e4];
    let residuals = lambdas.iter().map(|&l| expansion_residual(&config.rate, l)).collect::<Result<Vec<_>>>()?;
    let ratios: Vec<f64> = residuals.windows(2).map(|w| w[0] / w[1]).collect();
    Ok(Outcome {
        ok: ratios.iter().all(|r| (20.0..=45.0).contains(r)),
        detail: format!("residuals {}, ratios {ratios:.1?}", sci(&residuals)),
    })
}

fn norm_error_ratio(dm: &DiffusionModel, eta: &StateVector, scheme: Scheme, seed: u64) -> f64 {
    let options = DiffusionOptions { scheme, ..Default::default() };
    let fine = wiener_increments(seed, 1e-5, 100_000);
    let coarse = coarsen(&fine, 10);
    let err = |dt, inc: &[f64]| {
        let (_, psi) = integrate_increments(dm, eta, dt, inc, &options);
        (psi.last().unwrap().norm_squared() - 1.0).abs()
    };
    err(1e-4, &coarse) / err(1e-5, &fine)
}

fn diffusion_limit(config: &VerifyConfig) -> Result<Outcome> {
    let dm = DiffusionModel::new(&config.rate_hamiltonian, &config.rate)?;
    let eta = random_state(dm.dim(), &mut CounterRng::new(8, Domain::Fixtures));
    let seeds = [8001, 8002, 8003];
    let milstein: Vec<f64> = seeds.iter().map(|&s| norm_error_ratio(&dm, &eta, Scheme::Milstein, s)).collect();
    let euler: Vec<f64> = seeds.iter().map(|&s| norm_error_ratio(&dm, &eta, Scheme::EulerMaruyama, s)).collect();
    let mut ok = milstein.iter().all(|r| (5.0..=20.0).contains(r));

    let n = config.scale.samples(10_000);
    let dt = 1e-3;
    let ens = diffusion_ensemble(&dm, &eta, n, dt, 1.0, 8100, &DiffusionOptions { record_every: 1000, ..Default::default() })?;
    let exact = expm(&(-dm.generator())) * &eta;
    let gap = (ens.mean.last().unwrap() - exact).norm();
    let envelope = 3.0 * ens.mean_stderr.last().unwrap() + mean_bias_bound(&dm, 1.0, dt);
    ok &= gap <= envelope;

    let r = 0.8;
    let scalar = DiffusionModel::new(&Operator::zeros(1, 1), &diag(&[r]))?;
    let one = state(&[(1.0, 0.0)]);
    let dt_scalar = 1e-4;
    let mut strong: f64 = 0.0;
    for seed in 8200..8205 {
        let path = integrate_with(&scalar, &one, dt_scalar, 1.0, seed, &DiffusionOptions::default())?;
        let mut w = 0.0;
        for (k, dw) in path.wiener.iter().enumerate() {
            w += dw;
            let closed = c64(0.0, (2.0 * r).sqrt() * w).exp();
            strong = strong.max((path.psi[k + 1][0] - closed).norm());
        }
    }
    let strong_bound = 5.0 * dt_scalar.sqrt();
    ok &= strong <= strong_bound;
    Ok(Outcome {
        ok,
        detail: format!(
            "norm-error ratio 1e-4/1e-5 Milstein {milstein:.1?} (Euler {euler:.1?}); ‖E ψ₁ − e^(−K)η‖ = {gap:.1e} ≤ {envelope:.1e}; scalar strong error {strong:.1e} ≤ {strong_bound:.1e}"
        ),
    })
}

fn zeno(config: &VerifyConfig) -> Result<Outcome> {
    let zc = ZenoConfig {
        n: config.scale.samples(10_000),
        n_diffusion: config.scale.samples(10_000),
        seed_base: 9000,
        ..Default::default()
    };
    let rows = zeno_sweep(&config.rate_hamiltonian, &config.rate, &[10.0, 100.0, 1000.0], &fixture_state(), &zc)?;
    let sup: Vec<f64> = rows[..3].iter().map(|r| r.sup_err_semigroup).collect();
    let dist: Vec<f64> = rows[..3].iter().map(|r| r.trace_dist_semigroup).collect();
    let decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    Ok(Outcome {
        ok: rows[..3].iter().all(|r| r.side_condition_ok) && decreasing(&sup) && decreasing(&dist),
        detail: format!("λ = 10, 100, 1000: sup error {}, ensemble trace distance {} (N = {})", sci(&sup), sci(&dist), zc.n),
    })
}

fn coherent_elements(config: &VerifyConfig) -> Result<Outcome> {
    let model = &config.fixture;
    let lambda = model.lambda();
    let s = build_dilation(model.collapse(), Flavor::NonHermitian)?;
    let grid = uniform_grid(1.0, 0.125)?;
    let mut rng = CounterRng::new(10, Domain::Fixtures);
    let f = TestFunction::random(grid.clone(), lambda, &mut rng)?;
    let g = TestFunction::random(grid.clone(), lambda, &mut rng)?;
    let zero = TestFunction::zero(grid.clone(), lambda)?;
    let u = coherent_matrix_ode(model, &s, [&g, &zero], [&f, &zero], &grid)?;
    let v = genfun_propagator(model, &dot_plus(&g.conj(), &f)?, &grid)?;
    let embedding = u.iter().zip(&v).map(|(a, b)| spectral_norm(&(a - b))).fold(0.0, f64::max);

    let short = vec![0.0, 0.5, 1.0];
    let mut errors = Vec::new();
    for lam in [1e2, 1e3, 1e4] {
        let model = ModelSpec::with_rate(config.rate_hamiltonian.clone(), config.rate.clone(), lam).validate()?;
        let s = build_dilation(model.collapse(), Flavor::NonHermitian)?;
        let f0 = TestFunction::constant(short.clone(), c64(-0.5, 0.0), lam)?;
        let f1 = TestFunction::new(short.clone(), vec![c64(-0.3, 0.2), c64(-0.8, 0.0)], lam)?;
        let g0 = TestFunction::zero(short.clone(), lam)?;
        let g1 = TestFunction::constant(short.clone(), c64(-0.2, -0.1), lam)?;
        let u = coherent_matrix_ode(&model, &s, [&g0, &g1], [&f0, &f1], &short)?;
        let limit = limiting_coherent_ode(&config.rate_hamiltonian, &config.rate, &g1, &f1, &short)?;
        errors.push(spectral_norm(&(&u[2] - &limit[2])));
    }
    let ok = embedding <= 1e-8 && errors.windows(2).all(|w| w[1] < w[0]);
    Ok(Outcome {
        ok,
        detail: format!("scalar embedding vs generating functional {embedding:.1e}; limit error λ = 1e2..1e4 {}", sci(&errors)),
    })
}
