//! Model specification, validation and the averaged generator.
//!
//! JSON schema (complex numbers are `[re, im]` pairs, matrices are arrays of rows):
//!
//! ```json
//! {
//!   "dim": 2,
//!   "H": [[[1, 0], [0, 0]], [[0, 0], [-1, 0]]],
//!   "C": [[[1, 0], [0, 0]], [[0, 0], [0.8, 0]]],
//!   "lambda": 1.0
//! }
//! ```
//!
//! `"C"` may be replaced (or accompanied) by `"R"`, the rate operator with
//! C = I − R/λ. When both are present they must agree.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    self, hermiticity_residual, identity, min_eigenvalue, spectral_norm, Operator, UnitaryGroup,
    I, TOL_HERM, TOL_PSD,
};

/// Unvalidated model: Hamiltonian, collapse contraction and intensity.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub h: Operator,
    pub c: Option<Operator>,
    pub r: Option<Operator>,
    pub lambda: f64,
}

impl ModelSpec {
    pub fn with_collapse(h: Operator, c: Operator, lambda: f64) -> Self {
        Self { h, c: Some(c), r: None, lambda }
    }

    pub fn with_rate(h: Operator, r: Operator, lambda: f64) -> Self {
        Self { h, c: None, r: Some(r), lambda }
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn validate(self) -> Result<ValidatedModel> {
        validate_model(self)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RawModel = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            path: format!("$.{}", e.path()),
            message: e.inner().to_string(),
        })?;
        raw.into_spec()
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Parse { path: p, message } => Error::Parse {
                path: format!("{}:{}", path.display(), p),
                message,
            },
            other => other,
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut obj = serde_json::json!({
            "dim": self.dim(),
            "H": matrix_to_json(&self.h),
            "lambda": self.lambda,
        });
        if let Some(c) = &self.c {
            obj["C"] = matrix_to_json(c);
        }
        if let Some(r) = &self.r {
            obj["R"] = matrix_to_json(r);
        }
        obj
    }
}

pub type RawMatrix = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    dim: usize,
    #[serde(rename = "H")]
    h: RawMatrix,
    #[serde(rename = "C", default)]
    c: Option<RawMatrix>,
    #[serde(rename = "R", default)]
    r: Option<RawMatrix>,
    lambda: f64,
}

impl RawModel {
    fn into_spec(self) -> Result<ModelSpec> {
        if self.dim == 0 {
            return Err(Error::Parse { path: "$.dim".into(), message: "must be positive".into() });
        }
        let h = matrix_from_raw(&self.h, self.dim, "$.H")?;
        let c = self.c.as_ref().map(|m| matrix_from_raw(m, self.dim, "$.C")).transpose()?;
        let r = self.r.as_ref().map(|m| matrix_from_raw(m, self.dim, "$.R")).transpose()?;
        if c.is_none() && r.is_none() {
            return Err(Error::Parse { path: "$".into(), message: "one of \"C\" or \"R\" is required".into() });
        }
        Ok(ModelSpec { h, c, r, lambda: self.lambda })
    }
}

pub fn matrix_from_raw(raw: &RawMatrix, dim: usize, path: &str) -> Result<Operator> {
    if raw.len() != dim {
        return Err(Error::Parse {
            path: path.to_string(),
            message: format!("expected {dim} rows, found {}", raw.len()),
        });
    }
    for (i, row) in raw.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::Parse {
                path: format!("{path}[{i}]"),
                message: format!("expected {dim} entries, found {}", row.len()),
            });
        }
        for (j, z) in row.iter().enumerate() {
            if !z[0].is_finite() || !z[1].is_finite() {
                return Err(Error::Parse {
                    path: format!("{path}[{i}][{j}]"),
                    message: "non-finite entry".into(),
                });
            }
        }
    }
    Ok(Operator::from_fn(dim, dim, |i, j| Complex64::new(raw[i][j][0], raw[i][j][1])))
}

pub fn matrix_to_json(m: &Operator) -> serde_json::Value {
    let rows: Vec<Vec<[f64; 2]>> = (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect();
    serde_json::to_value(rows).expect("matrix serializes")
}

/// A model that passed [`validate_model`]; immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct ValidatedModel {
    h: Operator,
    c: Operator,
    r: Option<Operator>,
    lambda: f64,
    free: UnitaryGroup,
    defect_min_eig: f64,
}

/// Checks the standing assumptions H = H†, C†C ≤ I, λ ≥ 0 and, when R is
/// given, C = I − R/λ.
pub fn validate_model(spec: ModelSpec) -> Result<ValidatedModel> {
    let ModelSpec { h, c, r, lambda } = spec;
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::NegativeIntensity(lambda));
    }
    let d = h.nrows();
    if d == 0 || h.ncols() != d {
        return Err(Error::Dimension(format!("H is {}x{}", h.nrows(), h.ncols())));
    }
    for (name, m) in [("C", c.as_ref()), ("R", r.as_ref())] {
        if let Some(m) = m {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::Dimension(format!("{name} is {}x{}, H is {d}x{d}", m.nrows(), m.ncols())));
            }
            if !linalg::is_finite(m) {
                return Err(Error::NonFinite(name.into()));
            }
        }
    }
    if !linalg::is_finite(&h) {
        return Err(Error::NonFinite("H".into()));
    }
    let residual = hermiticity_residual(&h);
    if residual > TOL_HERM {
        return Err(Error::NotHermitian { what: "H".into(), residual });
    }
    let c = match (c, &r) {
        (Some(c), Some(r)) => {
            if lambda == 0.0 {
                return Err(Error::InconsistentR { residual: f64::INFINITY });
            }
            let implied = identity(d) - r.unscale(lambda);
            let residual = spectral_norm(&(&implied - &c));
            if residual > TOL_HERM {
                return Err(Error::InconsistentR { residual });
            }
            c
        }
        (Some(c), None) => c,
        (None, Some(r)) => {
            if lambda == 0.0 {
                return Err(Error::InvalidArgument("C = I − R/λ needs λ > 0".into()));
            }
            identity(d) - r.unscale(lambda)
        }
        (None, None) => return Err(Error::InvalidArgument("model needs C or R".into())),
    };
    let defect = identity(d) - c.adjoint() * &c;
    let defect_min_eig = min_eigenvalue(&defect);
    if defect_min_eig < -TOL_PSD {
        return Err(Error::NotContraction { min_eig: defect_min_eig });
    }
    let free = UnitaryGroup::new(&h);
    Ok(ValidatedModel { h, c, r, lambda, free, defect_min_eig })
}

impl ValidatedModel {
    pub fn dim(&self) -> usize {
        self.h.nrows()
    }
    pub fn hamiltonian(&self) -> &Operator {
        &self.h
    }
    pub fn collapse(&self) -> &Operator {
        &self.c
    }
    pub fn rate(&self) -> Option<&Operator> {
        self.r.as_ref()
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    /// Cached e^{−iHτ}.
    pub fn free(&self) -> &UnitaryGroup {
        &self.free
    }
    /// Smallest eigenvalue of I − C†C.
    pub fn defect_min_eigenvalue(&self) -> f64 {
        self.defect_min_eig
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec { h: self.h.clone(), c: Some(self.c.clone()), r: self.r.clone(), lambda: self.lambda }
    }

    /// K = iH + λ(I − C).
    pub fn generator(&self) -> Operator {
        semigroup_generator(self)
    }

    /// Large-number limit generator K = iH + R.
    pub fn limit_generator(&self) -> Result<Operator> {
        let r = self.r.as_ref().ok_or(Error::MissingRate)?;
        Ok(&self.h * I + r)
    }
}

/// K = iH + λ(I − C)
pub fn semigroup_generator(model: &ValidatedModel) -> Operator {
    let d = model.dim();
    &model.h * I + (identity(d) - &model.c).scale(model.lambda)
}

/// The d=2 reference model: H = σ_z, C = diag(1, 0.8), λ = 1.
pub fn reference_model() -> ValidatedModel {
    ModelSpec::with_collapse(linalg::sigma_z(), linalg::diag(&[1.0, 0.8]), 1.0)
        .validate()
        .expect("reference model is valid")
}

/// Reference rate operator R = diag(0, 0.36).
pub fn reference_rate() -> Operator {
    linalg::diag(&[0.0, 0.36])
}

/// The R-form reference family: H = σ_z, C = I − R/λ with R = diag(0, 0.36).
pub fn reference_rate_model(lambda: f64) -> Result<ValidatedModel> {
    ModelSpec::with_rate(linalg::sigma_z(), reference_rate(), lambda).validate()
}
