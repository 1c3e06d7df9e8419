//! Unitary dilations of the collapse contraction.
//!
//! A contraction C on ℋ is the block of a unitary S on ℋ ⊗ ℂ² read between
//! meter vectors: C = (I ⊗ e)† S (I ⊗ e₀). Blocks are indexed S^i_k with the
//! superscript selecting the row and the subscript the column.
//!
//! Hermitian flavor (readout e = e₁):
//!
//! S = [[−(I − C†C)^{1/2}, C†], [C, (I − CC†)^{1/2}]]
//!
//! Non-Hermitian flavor (readout e = e₀):
//!
//! S = [[C, (I − CC†)^{1/2}], [−(I − C†C)^{1/2}, C†]]
//!
//! Along a counting trajectory every event adjoins a fresh meter in e₀ and
//! scatters ℋ against it with S; contracting all meters with the readout
//! vector recovers the contractive propagator V_t(ω) exactly.

use nalgebra::SVD;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    self, basis, identity, min_eigenvalue, psd_sqrt, spectral_norm, Operator, StateVector, UnitaryGroup, I,
    TOL_PSD,
};
use crate::genfun::TestFunction;
use crate::model::ValidatedModel;
use crate::ode::integrate_piecewise;
use crate::parallel::{chunked_reduce, mean_and_stderr};
use crate::trajectory::{check_grid, sample_jumps, walk, JumpRecord};

/// Default bound on the number of meters carried by a [`DilatedState`].
pub const METER_CAP: usize = 12;

/// ‖S†S − I‖ allowed after construction.
pub const UNITARITY_TOL: f64 = 1e-12;

/// Bound on the intertwining residual ‖C D − D_* C‖ + ‖D C† − C† D_*‖.
pub const INTERTWINING_TOL: f64 = 1e-10;

const ODE_STEP_SCALE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    Hermitian,
    #[value(name = "nonhermitian")]
    #[serde(rename = "nonhermitian")]
    NonHermitian,
}

impl Flavor {
    /// Meter vector paired with the output: e₁ for Hermitian, e₀ otherwise.
    pub fn readout(self) -> StateVector {
        match self {
            Flavor::Hermitian => basis(2, 1),
            Flavor::NonHermitian => basis(2, 0),
        }
    }
}

/// Defect roots D = (I − C†C)^{1/2} and D_* = (I − CC†)^{1/2}.
///
/// Both come from one singular value decomposition C = UΣV†, so
/// C D = UΣ(1 − Σ²)^{1/2}V† = D_* C holds to rounding even when some
/// singular values equal one.
pub fn defect_roots(c: &Operator) -> Result<(Operator, Operator)> {
    let d = c.nrows();
    if c.ncols() != d {
        return Err(Error::Dimension(format!("C is {}x{}", c.nrows(), c.ncols())));
    }
    let min_eig = min_eigenvalue(&(identity(d) - c.adjoint() * c));
    if min_eig < -TOL_PSD {
        return Err(Error::NotContraction { min_eig });
    }
    let svd = SVD::new(c.clone(), true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v = svd.v_t.expect("right singular vectors requested").adjoint();
    let roots: Vec<Complex64> = svd
        .singular_values
        .iter()
        .map(|&s| {
            let s = s.min(1.0);
            linalg::re(((1.0 - s) * (1.0 + s)).sqrt())
        })
        .collect();
    let roots = Operator::from_diagonal(&StateVector::from_vec(roots));
    Ok((&v * &roots * v.adjoint(), &u * &roots * u.adjoint()))
}

/// Assembles a 2d × 2d matrix from d × d blocks `[[a, b], [c, e]]`.
pub fn block_matrix(a: &Operator, b: &Operator, c: &Operator, e: &Operator) -> Operator {
    let d = a.nrows();
    let mut s = Operator::zeros(2 * d, 2 * d);
    s.view_mut((0, 0), (d, d)).copy_from(a);
    s.view_mut((0, d), (d, d)).copy_from(b);
    s.view_mut((d, 0), (d, d)).copy_from(c);
    s.view_mut((d, d), (d, d)).copy_from(e);
    s
}

#[derive(Debug, Clone)]
pub struct DilationMatrix {
    d: usize,
    s: Operator,
    flavor: Flavor,
    unitarity_residual: f64,
    intertwining_residual: f64,
}

/// Builds S for the given flavor and checks unitarity.
pub fn build_dilation(c: &Operator, flavor: Flavor) -> Result<DilationMatrix> {
    let (defect, co_defect) = defect_roots(c)?;
    let c_adj = c.adjoint();
    let s = match flavor {
        Flavor::Hermitian => block_matrix(&(-&defect), &c_adj, c, &co_defect),
        Flavor::NonHermitian => block_matrix(c, &co_defect, &(-&defect), &c_adj),
    };
    let d = c.nrows();
    let unitarity_residual = spectral_norm(&(s.adjoint() * &s - identity(2 * d)));
    let intertwining_residual = spectral_norm(&(c * &defect - &co_defect * c))
        + spectral_norm(&(&defect * &c_adj - &c_adj * &co_defect));
    if unitarity_residual > UNITARITY_TOL {
        return Err(Error::NotUnitary { residual: unitarity_residual });
    }
    if intertwining_residual > INTERTWINING_TOL {
        return Err(Error::NotUnitary { residual: intertwining_residual });
    }
    Ok(DilationMatrix { d, s, flavor, unitarity_residual, intertwining_residual })
}

impl DilationMatrix {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn matrix(&self) -> &Operator {
        &self.s
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    /// S^i_k: row block i, column block k.
    pub fn block(&self, i: usize, k: usize) -> Operator {
        assert!(i < 2 && k < 2, "block index out of range");
        self.s.view((i * self.d, k * self.d), (self.d, self.d)).into_owned()
    }

    /// (I ⊗ e)† S (I ⊗ e₀) with the flavor's readout e.
    pub fn collapse(&self) -> Operator {
        match self.flavor {
            Flavor::Hermitian => self.block(1, 0),
            Flavor::NonHermitian => self.block(0, 0),
        }
    }

    pub fn unitarity_residual(&self) -> f64 {
        self.unitarity_residual
    }

    pub fn intertwining_residual(&self) -> f64 {
        self.intertwining_residual
    }
}

/// Amplitudes on ℋ ⊗ (ℂ²)^{⊗n}. Entry `bits · d + a` holds system index `a`
/// and meter bits with the earliest event most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct DilatedState {
    d: usize,
    n: usize,
    amps: StateVector,
    t: f64,
    cap: usize,
}

impl DilatedState {
    /// η with no meters at t = 0.
    pub fn new(eta: &StateVector) -> Self {
        Self { d: eta.len(), n: 0, amps: eta.clone(), t: 0.0, cap: METER_CAP }
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    pub fn meters(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &StateVector {
        &self.amps
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn norm(&self) -> f64 {
        self.amps.norm()
    }
}

/// Free evolution for `dt_free`, then optionally one scattering event
/// against a fresh meter prepared in e₀.
pub fn dilated_step(
    dil: &DilationMatrix,
    free: &UnitaryGroup,
    state: &DilatedState,
    dt_free: f64,
    apply_jump: bool,
) -> Result<DilatedState> {
    if !(dt_free >= 0.0) {
        return Err(Error::InvalidArgument(format!("free evolution time must be non-negative, got {dt_free}")));
    }
    if dil.d != state.d || free.dim() != state.d {
        return Err(Error::Dimension(format!("dilation acts on d = {}, state has d = {}", dil.d, state.d)));
    }
    let mut next = state.clone();
    advance(dil, free, &mut next, dt_free, apply_jump)?;
    Ok(next)
}

fn advance(dil: &DilationMatrix, free: &UnitaryGroup, state: &mut DilatedState, dt: f64, jump: bool) -> Result<()> {
    let d = state.d;
    let columns = 1usize << state.n;
    if dt > 0.0 {
        let u = free.at(dt);
        let m = Operator::from_column_slice(d, columns, state.amps.as_slice());
        state.amps = StateVector::from_column_slice((u * m).as_slice());
        state.t += dt;
    }
    if jump {
        if state.n + 1 > state.cap {
            return Err(Error::MeterBudgetExceeded { needed: state.n + 1, cap: state.cap });
        }
        // adjoin e₀: each d-chunk c becomes [c, 0], so pairs form contiguous 2d columns
        let mut widened = Operator::zeros(2 * d, columns);
        for j in 0..columns {
            widened
                .view_mut((0, j), (d, 1))
                .copy_from_slice(&state.amps.as_slice()[j * d..(j + 1) * d]);
        }
        let scattered = &dil.s * widened;
        state.amps = StateVector::from_column_slice(scattered.as_slice());
        state.n += 1;
    }
    Ok(())
}

/// Contracts every meter against `e_out`.
pub fn compress(state: &DilatedState, e_out: &StateVector) -> Result<StateVector> {
    if e_out.len() != 2 {
        return Err(Error::Dimension(format!("meter vector has {} entries, expected 2", e_out.len())));
    }
    if (e_out.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument("meter vector must be normalized".into()));
    }
    let d = state.d;
    let w = [e_out[0].conj(), e_out[1].conj()];
    let mut out = StateVector::zeros(d);
    for j in 0..(1usize << state.n) {
        let weight: Complex64 = (0..state.n).map(|b| w[(j >> b) & 1]).product();
        if weight != Complex64::new(0.0, 0.0) {
            out += state.amps.rows(j * d, d) * weight;
        }
    }
    Ok(out)
}

fn check_model(dil: &DilationMatrix, model: &ValidatedModel) -> Result<()> {
    if dil.d != model.dim() {
        return Err(Error::Dimension(format!("dilation d = {}, model d = {}", dil.d, model.dim())));
    }
    let residual = spectral_norm(&(dil.collapse() - model.collapse()));
    if residual > 1e-12 {
        return Err(Error::InvalidArgument(format!("dilation does not dilate the model's C (residual {residual:.2e})")));
    }
    Ok(())
}

/// Dilated state at each grid time (left limits, as in the trajectory module).
pub fn evolve_dilated(
    dil: &DilationMatrix,
    model: &ValidatedModel,
    jumps: &JumpRecord,
    eta0: &StateVector,
    grid: &[f64],
    cap: usize,
) -> Result<Vec<DilatedState>> {
    check_model(dil, model)?;
    check_grid(grid, Some(jumps.t_max))?;
    if eta0.len() != model.dim() {
        return Err(Error::Dimension(format!("state has {} entries, model d = {}", eta0.len(), model.dim())));
    }
    let needed = jumps.count_before(*grid.last().unwrap());
    if needed > cap {
        return Err(Error::MeterBudgetExceeded { needed, cap });
    }
    let mut state = DilatedState::new(eta0).with_cap(cap);
    let mut out = Vec::with_capacity(grid.len());
    walk(
        jumps,
        grid,
        &mut state,
        |s, tau| advance(dil, model.free(), s, tau, false).expect("free evolution cannot fail"),
        |s| advance(dil, model.free(), s, 0.0, true).expect("meter budget checked"),
        |_, s| out.push(s.clone()),
    );
    Ok(out)
}

/// ‖compress‖² initially and right after each event up to `t`. Free
/// evolution is unitary and each event multiplies by C, so the sequence is
/// non-increasing.
pub fn survival_sequence(
    dil: &DilationMatrix,
    model: &ValidatedModel,
    jumps: &JumpRecord,
    eta0: &StateVector,
    t: f64,
) -> Result<Vec<f64>> {
    check_model(dil, model)?;
    let e_out = dil.flavor.readout();
    let mut state = DilatedState::new(eta0).with_cap(jumps.count_before(t).max(1));
    let mut out = vec![compress(&state, &e_out)?.norm_squared()];
    let mut now = 0.0;
    for &s in jumps.times.iter().take_while(|&&s| s < t) {
        advance(dil, model.free(), &mut state, s - now, true)?;
        now = s;
        out.push(compress(&state, &e_out)?.norm_squared());
    }
    Ok(out)
}

/// Ensemble mean of ‖compress(U_t(ω) η ⊗ e₀^{⊗n})‖² on a grid.
#[derive(Debug, Clone)]
pub struct SurvivalTable {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n: usize,
    pub seed_base: u64,
}

struct SurvivalSums {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    overflow: Option<usize>,
}

/// Trajectory `i` uses seed `seed_base + i`, exactly as the trajectory ensemble.
pub fn survival_ensemble(
    dil: &DilationMatrix,
    model: &ValidatedModel,
    eta0: &StateVector,
    n: usize,
    grid: &[f64],
    seed_base: u64,
    cap: usize,
) -> Result<SurvivalTable> {
    check_model(dil, model)?;
    check_grid(grid, None)?;
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let t_max = grid.last().unwrap().max(f64::MIN_POSITIVE);
    let e_out = dil.flavor.readout();
    let points = grid.len();
    let sums = chunked_reduce(
        n,
        || SurvivalSums { sum: vec![0.0; points], sum_sq: vec![0.0; points], overflow: None },
        |acc, i| {
            let jumps = sample_jumps(model.lambda(), t_max, seed_base.wrapping_add(i as u64)).expect("validated inputs");
            match evolve_dilated(dil, model, &jumps, eta0, grid, cap) {
                Ok(states) => {
                    for (k, s) in states.iter().enumerate() {
                        let q = compress(s, &e_out).expect("readout is a unit vector").norm_squared();
                        acc.sum[k] += q;
                        acc.sum_sq[k] += q * q;
                    }
                }
                Err(Error::MeterBudgetExceeded { needed, .. }) => {
                    acc.overflow = acc.overflow.max(Some(needed));
                }
                Err(e) => unreachable!("inputs validated up front: {e}"),
            }
        },
        |a, b| {
            for (x, y) in a.sum.iter_mut().zip(&b.sum) {
                *x += y;
            }
            for (x, y) in a.sum_sq.iter_mut().zip(&b.sum_sq) {
                *x += y;
            }
            a.overflow = a.overflow.max(b.overflow);
        },
    );
    if let Some(needed) = sums.overflow {
        return Err(Error::MeterBudgetExceeded { needed, cap });
    }
    let (mean, stderr) = sums.sum.iter().zip(&sums.sum_sq).map(|(&s, &s2)| mean_and_stderr(s, s2, n)).unzip();
    Ok(SurvivalTable { grid: grid.to_vec(), mean, stderr, n, seed_base })
}

/// Right-hand side operator A(t) of dU/dt = A(t) U for the coherent matrix
/// elements, given g_i = conj(g^i(t)) and f^k(t).
pub fn coherent_generator(model: &ValidatedModel, dil: &DilationMatrix, g: [Complex64; 2], f: [Complex64; 2]) -> Operator {
    let d = dil.d;
    let lambda = model.lambda();
    let root = lambda.sqrt();
    let shifted = |i: usize, k: usize| {
        let mut b = dil.block(i, k);
        if i == k {
            b -= identity(d);
        }
        b
    };
    let mut a = model.hamiltonian() * (-I) + shifted(0, 0).scale(lambda);
    for i in 0..2 {
        for k in 0..2 {
            a += shifted(i, k) * (g[i] * f[k]);
        }
        a += shifted(i, 0) * (g[i] * root);
        a += shifted(0, i) * (f[i] * root);
    }
    a
}

/// Coherent matrix elements U_t(ḡ•, f•) on `grid` for two-component test
/// functions g• = (g⁰, g¹), f• = (f⁰, f¹).
pub fn coherent_matrix_ode(
    model: &ValidatedModel,
    dil: &DilationMatrix,
    g: [&TestFunction; 2],
    f: [&TestFunction; 2],
    grid: &[f64],
) -> Result<Vec<Operator>> {
    check_model(dil, model)?;
    check_grid(grid, None)?;
    if model.lambda() <= 0.0 {
        return Err(Error::InvalidArgument("coherent elements need λ > 0".into()));
    }
    for h in g.iter().chain(f.iter()) {
        if (h.lambda_ref() - model.lambda()).abs() > 1e-12 * model.lambda().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "test function built for λ = {}, model has λ = {}",
                h.lambda_ref(),
                model.lambda()
            )));
        }
    }
    let breaks: Vec<f64> = g.iter().chain(f.iter()).flat_map(|h| h.grid().iter().copied()).collect();
    Ok(integrate_piecewise(&identity(dil.d), grid, &breaks, ODE_STEP_SCALE, |r| {
        coherent_generator(
            model,
            dil,
            [g[0].value_at(r).conj(), g[1].value_at(r).conj()],
            [f[0].value_at(r), f[1].value_at(r)],
        )
    }))
}

/// (R + R†)^{1/2}, or `NotDissipative` when R + R† is indefinite.
pub fn noise_root(r: &Operator) -> Result<Operator> {
    let sum = r + r.adjoint();
    psd_sqrt(&sum).map_err(|e| match e {
        Error::TooNegative { min_eig } => Error::NotDissipative { min_eig },
        other => other,
    })
}

/// Limit λ → ∞ of the coherent elements:
/// dU/dt = −(R + iH) U + (R + R†)^{1/2} U (f¹(t) − conj(g¹(t))).
pub fn limiting_coherent_ode(
    h: &Operator,
    r: &Operator,
    g1: &TestFunction,
    f1: &TestFunction,
    grid: &[f64],
) -> Result<Vec<Operator>> {
    check_grid(grid, None)?;
    let d = h.nrows();
    if r.nrows() != d || r.ncols() != d || h.ncols() != d {
        return Err(Error::Dimension(format!("H is {}x{}, R is {}x{}", h.nrows(), h.ncols(), r.nrows(), r.ncols())));
    }
    let b = noise_root(r)?;
    let k = r + h * I;
    let breaks: Vec<f64> = g1.grid().iter().chain(f1.grid()).copied().collect();
    Ok(integrate_piecewise(&identity(d), grid, &breaks, ODE_STEP_SCALE, |t| {
        &b * (f1.value_at(t) - g1.value_at(t).conj()) - &k
    }))
}

/// First- and second-order blocks of the non-Hermitian dilation of
/// C = I − R/λ: S = I + λ^{−1/2} B − λ^{−1} D + O(λ^{−3/2}) with
/// B = [[0, X], [−X, 0]], X = (R + R†)^{1/2}, and D = diag(R, R†).
pub fn expansion_blocks(r: &Operator) -> Result<(Operator, Operator)> {
    let x = noise_root(r)?;
    let zero = Operator::zeros(r.nrows(), r.ncols());
    Ok((block_matrix(&zero, &x, &(-&x), &zero), block_matrix(r, &zero, &zero, &r.adjoint())))
}

/// ‖S(λ) − (I + λ^{−1/2} B − λ^{−1} D)‖ for the non-Hermitian dilation.
pub fn expansion_residual(r: &Operator, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("λ must be positive, got {lambda}")));
    }
    let d = r.nrows();
    let c = identity(d) - r.unscale(lambda);
    let s = build_dilation(&c, Flavor::NonHermitian)?;
    let (b, dd) = expansion_blocks(r)?;
    let approx = identity(2 * d) + b.unscale(lambda.sqrt()) - dd.unscale(lambda);
    Ok(spectral_norm(&(s.matrix() - approx)))
}
