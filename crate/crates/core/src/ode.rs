//! Classical RK4 for linear ODEs X' = A(t)X with piecewise-constant A.

use crate::linalg::{rk4_step_matrix, spectral_norm, Operator};

/// Integrates X' = A(t) X from `init` at t = 0 and returns X at each point of
/// `grid` (which must start at 0). `breaks` are the times where A may jump;
/// `generator(t)` is evaluated at piece midpoints. Step size per piece is
/// `min(piece, step_scale / (1 + ‖A‖))`.
pub fn integrate_piecewise(
    init: &Operator,
    grid: &[f64],
    breaks: &[f64],
    step_scale: f64,
    generator: impl Fn(f64) -> Operator,
) -> Vec<Operator> {
    let mut out = Vec::with_capacity(grid.len());
    let mut x = init.clone();
    out.push(x.clone());
    let mut cuts: Vec<f64> = breaks.to_vec();
    cuts.sort_by(f64::total_cmp);
    let mut next_cut = 0;
    for w in grid.windows(2) {
        let (mut a, b) = (w[0], w[1]);
        while next_cut < cuts.len() && cuts[next_cut] <= a {
            next_cut += 1;
        }
        loop {
            let end = if next_cut < cuts.len() && cuts[next_cut] < b { cuts[next_cut] } else { b };
            if end > a {
                let gen = generator(0.5 * (a + end));
                let h_max = step_scale / (1.0 + spectral_norm(&gen));
                let steps = ((end - a) / h_max).ceil().max(1.0) as usize;
                let step = rk4_step_matrix(&gen, (end - a) / steps as f64);
                for _ in 0..steps {
                    x = &step * &x;
                }
            }
            a = end;
            if end >= b {
                break;
            }
            next_cut += 1;
        }
        out.push(x.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{diag, expm};

    #[test]
    fn piecewise_constant_scalar_matches_closed_form() {
        let gen = |t: f64| if t < 0.4 { diag(&[-1.0]) } else { diag(&[0.5]) };
        let out = integrate_piecewise(&diag(&[1.0]), &[0.0, 0.3, 1.0], &[0.4], 1e-3, gen);
        assert!((out[1][(0, 0)].re - (-0.3f64).exp()).abs() < 1e-12);
        assert!((out[2][(0, 0)].re - (-0.4f64 + 0.3).exp()).abs() < 1e-12);
    }

    #[test]
    fn constant_generator_matches_expm() {
        let a = crate::linalg::from_rows(&[&[(0.0, -1.0), (0.2, 0.0)], &[(-0.2, 0.0), (-0.3, 1.0)]]);
        let out = integrate_piecewise(&crate::linalg::identity(2), &[0.0, 2.0], &[], 1e-3, |_| a.clone());
        assert!(spectral_norm(&(&out[1] - expm(&a.scale(2.0)))) < 1e-12);
    }
}
