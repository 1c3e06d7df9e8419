//! Gauss–Legendre rules, spectral indefinite integration and ordered-simplex
//! quadrature.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(m, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(m, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    (nodes, weights)
}

/// P_n(x) and P_n'(x).
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// P_0..P_{n}(x)
fn legendre_all(n: usize, x: f64) -> Vec<f64> {
    let mut p = vec![0.0; n + 1];
    p[0] = 1.0;
    if n >= 1 {
        p[1] = x;
    }
    for k in 2..=n {
        p[k] = ((2 * k - 1) as f64 * x * p[k - 1] - (k - 1) as f64 * p[k - 2]) / k as f64;
    }
    p
}

/// Gauss–Legendre rule on an interval with its spectral integration matrix.
///
/// `integration[j][k]` is ∫_a^{x_j} ℓ_k(u) du for the Lagrange basis ℓ_k on
/// the nodes, so `Σ_k integration[j][k] f(x_k)` is the indefinite integral of
/// the interpolant of `f` evaluated at node `j`.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub a: f64,
    pub b: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub integration: Vec<Vec<f64>>,
}

impl GaussRule {
    pub fn new(m: usize, a: f64, b: f64) -> Self {
        let (x, w) = gauss_legendre(m);
        let half = 0.5 * (b - a);
        let nodes = x.iter().map(|&xi| a + half * (xi + 1.0)).collect();
        let weights = w.iter().map(|&wi| wi * half).collect();

        // ℓ_k(u) = w_k Σ_{p<m} (p + ½) P_p(x_k) P_p(u), exact by discrete orthogonality;
        // ∫_{-1}^{x} P_0 = x + 1, ∫_{-1}^{x} P_p = (P_{p+1}(x) − P_{p−1}(x)) / (2p + 1).
        let legendre_at_nodes: Vec<Vec<f64>> = x.iter().map(|&xi| legendre_all(m, xi)).collect();
        let mut integration = vec![vec![0.0; m]; m];
        for j in 0..m {
            let pj = &legendre_at_nodes[j];
            let antiderivs: Vec<f64> = (0..m)
                .map(|p| if p == 0 { x[j] + 1.0 } else { (pj[p + 1] - pj[p - 1]) / (2 * p + 1) as f64 })
                .collect();
            for k in 0..m {
                let pk = &legendre_at_nodes[k];
                let s: f64 = (0..m).map(|p| (p as f64 + 0.5) * pk[p] * antiderivs[p]).sum();
                integration[j][k] = w[k] * s * half;
            }
        }
        Self { a, b, nodes, weights, integration }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Quadrature over the ordered simplex 0 ≤ r₁ < … < r_n < t in collapsed
/// coordinates r_n = t·u_n, r_k = r_{k+1}·u_k, so every point is a strictly
/// ordered tuple.
#[derive(Debug, Clone)]
pub struct SimplexGrid {
    pub t: f64,
    pub nodes_per_axis: usize,
    /// `points[n]` lists `(tuple, weight)` for order n; order 0 is the empty tuple.
    pub points: Vec<Vec<(Vec<f64>, f64)>>,
}

impl SimplexGrid {
    pub fn new(t: f64, nodes_per_axis: usize, max_order: usize) -> Self {
        let (x, w) = gauss_legendre(nodes_per_axis);
        let u: Vec<f64> = x.iter().map(|xi| 0.5 * (xi + 1.0)).collect();
        let wu: Vec<f64> = w.iter().map(|wi| 0.5 * wi).collect();
        let mut points = vec![vec![(Vec::new(), 1.0)]];
        for n in 1..=max_order {
            let mut level = Vec::with_capacity(nodes_per_axis.pow(n as u32));
            let total = nodes_per_axis.pow(n as u32);
            for flat in 0..total {
                // digits index u_n (outermost) down to u_1
                let mut idx = flat;
                let mut digits = vec![0usize; n];
                for slot in digits.iter_mut() {
                    *slot = idx % nodes_per_axis;
                    idx /= nodes_per_axis;
                }
                let mut tuple = vec![0.0; n];
                let mut upper = t;
                let mut weight = 1.0;
                for k in (0..n).rev() {
                    let uk = u[digits[k]];
                    tuple[k] = upper * uk;
                    weight *= wu[digits[k]] * upper;
                    upper = tuple[k];
                }
                level.push((tuple, weight));
            }
            points.push(level);
        }
        Self { t, nodes_per_axis, points }
    }

    pub fn max_order(&self) -> usize {
        self.points.len() - 1
    }
}
