//! File inputs and outputs: state and test-function JSON, CSV tables,
//! JSON reports and run manifests.
//!
//! A state is an array of `[re, im]` pairs. A test function is
//!
//! ```json
//! { "grid": [0.0, 0.5, 1.0], "values": [[-0.5, 0.1], [-0.2, 0.0]], "lambda_ref": 1.0 }
//! ```
//!
//! where `lambda_ref` may be omitted and then defaults to the model's λ.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genfun::TestFunction;
use crate::linalg::StateVector;

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

fn parse<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| Error::Parse { path: format!("{}:$.{}", path.display(), e.path()), message: e.inner().to_string() })
}

fn complex_values(raw: &[[f64; 2]], path: &Path, field: &str) -> Result<Vec<Complex64>> {
    raw.iter()
        .enumerate()
        .map(|(i, z)| {
            if z[0].is_finite() && z[1].is_finite() {
                Ok(Complex64::new(z[0], z[1]))
            } else {
                Err(Error::Parse { path: format!("{}:$.{field}[{i}]", path.display()), message: "non-finite entry".into() })
            }
        })
        .collect()
}

/// Reads a state vector of dimension `dim`.
pub fn load_state(path: &Path, dim: usize) -> Result<StateVector> {
    let raw: Vec<[f64; 2]> = parse(path, &read(path)?)?;
    if raw.len() != dim {
        return Err(Error::Parse {
            path: format!("{}:$", path.display()),
            message: format!("expected {dim} amplitudes, found {}", raw.len()),
        });
    }
    Ok(StateVector::from_vec(complex_values(&raw, path, "")?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTestFunction {
    grid: Vec<f64>,
    values: Vec<[f64; 2]>,
    #[serde(default)]
    lambda_ref: Option<f64>,
}

/// Reads a piecewise-constant test function; `lambda` is used when the file
/// has no `lambda_ref`.
pub fn load_test_function(path: &Path, lambda: f64) -> Result<TestFunction> {
    let raw: RawTestFunction = parse(path, &read(path)?)?;
    let values = complex_values(&raw.values, path, "values")?;
    TestFunction::new(raw.grid, values, raw.lambda_ref.unwrap_or(lambda))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, text + "\n").map_err(|source| Error::Io { path: path.display().to_string(), source })
}

/// Writes a header row and data rows as RFC 4180 CSV.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let io_err = |e: csv::Error| Error::Io { path: path.display().to_string(), source: e.into() };
    let mut writer = csv::Writer::from_path(path).map_err(io_err)?;
    writer.write_record(header).map_err(io_err)?;
    for row in rows {
        writer.write_record(row).map_err(io_err)?;
    }
    writer.flush().map_err(|source| Error::Io { path: path.display().to_string(), source })
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Reproducibility record written next to every output.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub workers: usize,
    pub wall_seconds: f64,
    pub outputs: Vec<PathBuf>,
}
