//! λ-sweep toward the frequent-collapse limit.
//!
//! For a fixed rate operator R each row runs the jump dynamics with
//! C(λ) = I − R/λ and measures the distance to the limiting contraction
//! semigroup e^{−Kt}, K = R + iH, and to the second moment of the diffusion
//! ensemble. A final row (λ = ∞) reports the diffusion ensemble itself.

use serde::Serialize;

use crate::diffusion::{diffusion_ensemble, DiffusionModel, DiffusionOptions};
use crate::error::{Error, Result};
use crate::linalg::{expm, min_eigenvalue, outer, re, trace_distance, Operator, StateVector, TOL_PSD};
use crate::model::ModelSpec;
use crate::trajectory::{ensemble_average, evolve_state, sample_jumps, uniform_grid};

#[derive(Debug, Clone, Serialize)]
pub struct ZenoConfig {
    pub t_max: f64,
    /// Grid step for the single-trajectory sup error.
    pub grid_step: f64,
    /// Jump trajectories per λ.
    pub n: usize,
    pub seed_base: u64,
    pub dt_diffusion: f64,
    pub n_diffusion: usize,
}

impl Default for ZenoConfig {
    fn default() -> Self {
        Self { t_max: 1.0, grid_step: 0.01, n: 10_000, seed_base: 4242, dt_diffusion: 1e-3, n_diffusion: 10_000 }
    }
}

/// One row of the sweep; `lambda = None` is the diffusion row.
#[derive(Debug, Clone, Serialize)]
pub struct ZenoRow {
    pub lambda: Option<f64>,
    /// sup_t ‖χ_t − e^{−Kt}η‖ for one trajectory (ensemble mean for the diffusion row).
    pub sup_err_semigroup: f64,
    /// Trace distance of the ensemble mean density at t_max to e^{−Kt}σe^{−K†t}.
    pub trace_dist_semigroup: f64,
    /// Trace distance of the ensemble mean density at t_max to the diffusion second moment.
    pub trace_dist_diffusion: f64,
    /// R†R ≤ λ(R + R†), equivalently C(λ)†C(λ) ≤ I.
    pub side_condition_ok: bool,
}

/// R†R ≤ λ(R + R†) within the PSD tolerance.
pub fn side_condition(r: &Operator, lambda: f64) -> bool {
    min_eigenvalue(&((r + r.adjoint()).scale(lambda) - r.adjoint() * r)) >= -TOL_PSD * lambda.max(1.0)
}

pub fn zeno_sweep(
    h: &Operator,
    r: &Operator,
    lambdas: &[f64],
    eta0: &StateVector,
    config: &ZenoConfig,
) -> Result<Vec<ZenoRow>> {
    if lambdas.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::InvalidArgument("every λ must be positive and finite".into()));
    }
    let dm = DiffusionModel::new(h, r)?;
    let grid = uniform_grid(config.t_max, config.grid_step)?;
    let t_max = *grid.last().unwrap();
    let k = dm.generator().clone();
    let semigroup_state = |t: f64| expm(&(-&k * re(t))) * eta0;
    let sigma = outer(eta0);
    let u_end = expm(&(-&k * re(t_max)));
    let rho_semigroup = &u_end * &sigma * u_end.adjoint();

    let every = ((config.grid_step / config.dt_diffusion).round() as usize).max(1);
    let diffusion = diffusion_ensemble(
        &dm,
        eta0,
        config.n_diffusion,
        config.dt_diffusion,
        t_max,
        config.seed_base,
        &DiffusionOptions { record_every: every, ..Default::default() },
    )?;
    let rho_diffusion = diffusion.second_moment.last().unwrap().clone();

    let mut rows = Vec::with_capacity(lambdas.len() + 1);
    for &lambda in lambdas {
        if !side_condition(r, lambda) {
            log::warn!("side condition R†R ≤ λ(R + R†) violated at λ = {lambda}; C(λ) is not a contraction");
            rows.push(ZenoRow {
                lambda: Some(lambda),
                sup_err_semigroup: f64::NAN,
                trace_dist_semigroup: f64::NAN,
                trace_dist_diffusion: f64::NAN,
                side_condition_ok: false,
            });
            continue;
        }
        let model = ModelSpec::with_rate(h.clone(), r.clone(), lambda).validate()?;
        let jumps = sample_jumps(lambda, t_max, config.seed_base)?;
        let path = evolve_state(&model, &jumps, eta0, &grid)?;
        let sup_err = grid
            .iter()
            .zip(&path.chi)
            .map(|(&t, chi)| (chi - semigroup_state(t)).norm())
            .fold(0.0, f64::max);
        let ens = ensemble_average(&model, eta0, config.n, &[0.0, t_max], config.seed_base)?;
        let rho_bar = ens.rho_bar.last();
        rows.push(ZenoRow {
            lambda: Some(lambda),
            sup_err_semigroup: sup_err,
            trace_dist_semigroup: trace_distance(rho_bar, &rho_semigroup),
            trace_dist_diffusion: trace_distance(rho_bar, &rho_diffusion),
            side_condition_ok: true,
        });
    }
    let sup_mean = diffusion
        .grid
        .iter()
        .zip(&diffusion.mean)
        .map(|(&t, m)| (m - semigroup_state(t)).norm())
        .fold(0.0, f64::max);
    rows.push(ZenoRow {
        lambda: None,
        sup_err_semigroup: sup_mean,
        trace_dist_semigroup: trace_distance(&rho_diffusion, &rho_semigroup),
        trace_dist_diffusion: 0.0,
        side_condition_ok: true,
    });
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{diag, sigma_z, state};
    use crate::model::reference_rate;

    #[test]
    fn side_condition_matches_contraction() {
        let r = reference_rate();
        // R†R ≤ λ(R + R†) ⟺ 0.1296 ≤ 0.72 λ on the second axis
        assert!(side_condition(&r, 1.0));
        assert!(side_condition(&r, 0.18));
        assert!(!side_condition(&r, 0.17));
        assert!(ModelSpec::with_rate(sigma_z(), r.clone(), 0.17).validate().is_err());
    }

    #[test]
    fn sweep_has_one_row_per_lambda_plus_diffusion() {
        let eta = state(&[(0.6, 0.0), (0.8, 0.0)]);
        let config = ZenoConfig { n: 2000, n_diffusion: 500, ..Default::default() };
        let rows = zeno_sweep(&sigma_z(), &reference_rate(), &[10.0, 100.0, 1000.0], &eta, &config).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows[3].lambda.is_none());
        assert!(rows[0].sup_err_semigroup > rows[1].sup_err_semigroup);
        assert!(rows[1].sup_err_semigroup > rows[2].sup_err_semigroup);
        assert!(rows[0].trace_dist_semigroup > rows[2].trace_dist_semigroup);
    }

    #[test]
    fn violated_side_condition_gives_flagged_row() {
        let eta = state(&[(1.0, 0.0), (0.0, 0.0)]);
        let config = ZenoConfig { n: 100, n_diffusion: 50, ..Default::default() };
        let rows = zeno_sweep(&sigma_z(), &diag(&[0.0, 2.0]), &[0.5, 10.0], &eta, &config).unwrap();
        assert!(!rows[0].side_condition_ok);
        assert!(rows[0].sup_err_semigroup.is_nan());
        assert!(rows[1].side_condition_ok);
    }
}
