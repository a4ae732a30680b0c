//! Oscillator network parameters: validation, file I/O and synthetic grids.
//!
//! Files are JSON with 1-based coupling indices:
//!
//! ```json
//! {
//!   "omega_R": 376.99111843077515,
//!   "n_o": 2,
//!   "J": [1.0, 1.5],
//!   "D": [0.5, 0.5],
//!   "F": [0.2, -0.2],
//!   "couplings": [
//!     { "i": 1, "j": 2, "K": 1.0, "gamma": 0.05 },
//!     { "i": 2, "j": 1, "K": 1.0, "gamma": -0.05 }
//!   ]
//! }
//! ```

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reference angular frequency of a 60 Hz grid.
pub const OMEGA_R_60HZ: f64 = 120.0 * std::f64::consts::PI;

/// Reference frequency of synthetic grids (time in per-unit).
pub const SYNTH_OMEGA_R: f64 = 1.0;

/// Constants of a network of `n_o` coupled swing-equation oscillators.
///
/// `k` and `gamma` are dense `n_o x n_o` tables with zero diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParameters {
    pub omega_r: f64,
    pub j: Vec<f64>,
    pub d: Vec<f64>,
    pub f: Vec<f64>,
    pub k: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParameterFile {
    #[serde(rename = "omega_R")]
    omega_r: f64,
    n_o: usize,
    #[serde(rename = "J")]
    j: Vec<f64>,
    #[serde(rename = "D")]
    d: Vec<f64>,
    #[serde(rename = "F")]
    f: Vec<f64>,
    couplings: Vec<CouplingEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CouplingEntry {
    i: usize,
    j: usize,
    #[serde(rename = "K")]
    k: f64,
    gamma: f64,
}

impl NetworkParameters {
    /// Builds and validates a parameter set.
    pub fn new(
        omega_r: f64,
        j: Vec<f64>,
        d: Vec<f64>,
        f: Vec<f64>,
        k: DMatrix<f64>,
        gamma: DMatrix<f64>,
    ) -> Result<Self> {
        let params = NetworkParameters {
            omega_r,
            j,
            d,
            f,
            k,
            gamma,
        };
        params.validate()?;
        Ok(params)
    }

    /// Number of oscillators.
    pub fn n_o(&self) -> usize {
        self.j.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_o();
        if n == 0 {
            return Err(Error::Validation("network has no oscillators".into()));
        }
        if !self.omega_r.is_finite() {
            return Err(Error::Validation("omega_R is not finite".into()));
        }
        for (name, v) in [("D", &self.d), ("F", &self.f)] {
            if v.len() != n {
                return Err(Error::Validation(format!(
                    "{name} has length {} but n_o = {n}",
                    v.len()
                )));
            }
        }
        for (idx, &ji) in self.j.iter().enumerate() {
            if !(ji.is_finite() && ji > 0.0) {
                return Err(Error::Validation(format!(
                    "J_{} = {ji} must be finite and strictly positive",
                    idx + 1
                )));
            }
        }
        for (name, v) in [("D", &self.d), ("F", &self.f)] {
            if let Some(idx) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::Validation(format!(
                    "{name}_{} is not finite",
                    idx + 1
                )));
            }
        }
        for (idx, &di) in self.d.iter().enumerate() {
            if di < 0.0 {
                return Err(Error::Validation(format!(
                    "D_{} = {di} is negative",
                    idx + 1
                )));
            }
        }
        for (name, m) in [("K", &self.k), ("gamma", &self.gamma)] {
            if m.shape() != (n, n) {
                return Err(Error::Validation(format!(
                    "{name} has shape {:?}, expected ({n}, {n})",
                    m.shape()
                )));
            }
            for c in 0..n {
                for r in 0..n {
                    let v = m[(r, c)];
                    if !v.is_finite() {
                        return Err(Error::Validation(format!(
                            "{name}_({},{}) is not finite",
                            r + 1,
                            c + 1
                        )));
                    }
                    if r == c && v != 0.0 {
                        return Err(Error::Validation(format!(
                            "{name}_({},{}) = {v} must be zero on the diagonal",
                            r + 1,
                            c + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn from_file_repr(file: ParameterFile) -> Result<Self> {
        let n = file.n_o;
        if n == 0 {
            return Err(Error::Validation("n_o must be at least 1".into()));
        }
        for (name, v) in [("J", &file.j), ("D", &file.d), ("F", &file.f)] {
            if v.len() != n {
                return Err(Error::Validation(format!(
                    "{name} has length {} but n_o = {n}",
                    v.len()
                )));
            }
        }
        let mut k = DMatrix::zeros(n, n);
        let mut gamma = DMatrix::zeros(n, n);
        let mut seen = DMatrix::from_element(n, n, false);
        for (pos, c) in file.couplings.iter().enumerate() {
            if c.i == 0 || c.j == 0 || c.i > n || c.j > n {
                return Err(Error::Validation(format!(
                    "couplings[{pos}]: index ({}, {}) outside 1..={n}",
                    c.i, c.j
                )));
            }
            if c.i == c.j {
                return Err(Error::Validation(format!(
                    "couplings[{pos}]: self-coupling ({}, {}) is not allowed",
                    c.i, c.j
                )));
            }
            let (r, col) = (c.i - 1, c.j - 1);
            if seen[(r, col)] {
                return Err(Error::Validation(format!(
                    "couplings[{pos}]: duplicate entry ({}, {})",
                    c.i, c.j
                )));
            }
            seen[(r, col)] = true;
            k[(r, col)] = c.k;
            gamma[(r, col)] = c.gamma;
        }
        NetworkParameters::new(file.omega_r, file.j, file.d, file.f, k, gamma)
    }

    fn to_file_repr(&self) -> ParameterFile {
        let n = self.n_o();
        let mut couplings = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let (k, gamma) = (self.k[(i, j)], self.gamma[(i, j)]);
                if i != j && (k != 0.0 || gamma != 0.0) {
                    couplings.push(CouplingEntry {
                        i: i + 1,
                        j: j + 1,
                        k,
                        gamma,
                    });
                }
            }
        }
        ParameterFile {
            omega_r: self.omega_r,
            n_o: n,
            j: self.j.clone(),
            d: self.d.clone(),
            f: self.f.clone(),
            couplings,
        }
    }

    /// Parses the JSON parameter schema from a string.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ParameterFile = serde_json::from_str(text)
            .map_err(|e| Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        Self::from_file_repr(file)
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_file_repr())
            .expect("parameter file serialization cannot fail");
        s.push('\n');
        s
    }
}

/// Reads and validates a parameter file.
pub fn load_parameters(path: impl AsRef<Path>) -> Result<NetworkParameters> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    NetworkParameters::from_json_str(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_parameters(params: &NetworkParameters, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, params.to_json_string())?;
    Ok(())
}

/// Generates a deterministic synthetic network.
///
/// Couplings are drawn on a symmetric pattern with symmetric magnitudes and
/// antisymmetric phase shifts (`gamma_ji = -gamma_ij`). Drives are recentred to
/// sum to zero, so a synchronous state rotates at zero frequency.
pub fn synth_grid(n_o: usize, seed: u64, connectivity: f64) -> Result<NetworkParameters> {
    if n_o == 0 {
        return Err(Error::invalid("synth_grid needs at least one oscillator"));
    }
    if !(connectivity > 0.0 && connectivity <= 1.0) {
        return Err(Error::invalid(format!(
            "connectivity {connectivity} must lie in (0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j: Vec<f64> = (0..n_o).map(|_| rng.random_range(0.5..=2.0)).collect();
    let d: Vec<f64> = (0..n_o).map(|_| rng.random_range(0.1..=1.0)).collect();
    let mut f: Vec<f64> = (0..n_o).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let mean = f.iter().sum::<f64>() / n_o as f64;
    f.iter_mut().for_each(|v| *v -= mean);

    let mut k = DMatrix::zeros(n_o, n_o);
    let mut gamma = DMatrix::zeros(n_o, n_o);
    for a in 0..n_o {
        for b in (a + 1)..n_o {
            if rng.random::<f64>() < connectivity {
                let mag = rng.random_range(0.5..=2.0);
                let shift = rng.random_range(-0.3..=0.3);
                k[(a, b)] = mag;
                k[(b, a)] = mag;
                gamma[(a, b)] = shift;
                gamma[(b, a)] = -shift;
            }
        }
    }
    NetworkParameters::new(SYNTH_OMEGA_R, j, d, f, k, gamma)
}
