//! Run configuration: a plain-text `key = value` file.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; unknown keys and malformed values are rejected with the key
//! named in the error.

use crate::calculus::SolverConfig;
use crate::error::{Error, Result};
use crate::spectral::Delta0Reading;
use crate::tensors::TensorOptions;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::str::FromStr;

/// Every setting a command reads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Mesh refinement level.
    pub level: usize,
    /// Rank of the bundle.
    pub n: usize,
    /// Degree of the bundle; only 0 is implemented.
    pub k: i64,
    /// Seed of the random representation.
    pub seed: u64,
    pub solver: SolverConfig,
    /// Shift `c` of the resolvent `(Δ₀ + c)⁻¹` in the tensor formulas.
    pub shift: f64,
    /// Reading of `Δ₀` in the metric Hessian and the Ricci potential.
    pub delta0: Delta0Reading,
    /// Run the sign and variant audit alongside tensor evaluations.
    pub audit: bool,
    /// Declared formula variants substituted for the transcription.
    pub variants: Vec<String>,
    /// Directory receiving every artifact.
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            level: 3,
            n: 2,
            k: 0,
            seed: 7,
            solver: SolverConfig::default(),
            shift: 0.5,
            delta0: Delta0Reading::Functions,
            audit: false,
            variants: Vec::new(),
            output: PathBuf::from("out"),
        }
    }
}

/// Recognized keys, in the order they are written.
pub const KEYS: [&str; 12] = [
    "level",
    "n",
    "k",
    "seed",
    "solver.rel_tol",
    "solver.max_iter",
    "solver.direct_threshold",
    "formula.shift",
    "formula.delta0",
    "formula.audit",
    "formula.variants",
    "output",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value {value:?} for key {key}")))
}

fn delta0_name(d: Delta0Reading) -> &'static str {
    match d {
        Delta0Reading::Functions => "functions",
        Delta0Reading::OneForms => "one_forms",
    }
}

impl RunConfig {
    /// Parses a configuration file's contents on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("duplicate key {key}")));
            }
            c.set(key, value)?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Sets one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "level" => self.level = parse(key, value)?,
            "n" => self.n = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "solver.rel_tol" => self.solver.rel_tol = parse(key, value)?,
            "solver.max_iter" => self.solver.max_iter = parse(key, value)?,
            "solver.direct_threshold" => self.solver.direct_threshold = parse(key, value)?,
            "formula.shift" => self.shift = parse(key, value)?,
            "formula.delta0" => {
                self.delta0 = match value {
                    "functions" => Delta0Reading::Functions,
                    "one_forms" => Delta0Reading::OneForms,
                    _ => return Err(Error::Config(format!("invalid value {value:?} for key {key}: expected functions or one_forms"))),
                }
            }
            "formula.audit" => self.audit = parse(key, value)?,
            "formula.variants" => self.variants = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect(),
            "output" => self.output = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown key {other}"))),
        }
        Ok(())
    }

    /// Rejects values no command can use.
    pub fn validate(&self) -> Result<()> {
        if !(self.shift > 0.0 && self.shift.is_finite()) {
            return Err(Error::Config(format!("formula.shift must be positive, got {}", self.shift)));
        }
        if !(self.solver.rel_tol > 0.0 && self.solver.rel_tol < 1.0) {
            return Err(Error::Config(format!("solver.rel_tol must lie in (0, 1), got {}", self.solver.rel_tol)));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        let known: Vec<String> = crate::tensors::formulas::metric(self.shift, self.delta0)
            .variant_labels()
            .into_iter()
            .chain(crate::tensors::formulas::ricci().variant_labels())
            .collect();
        if let Some(v) = self.variants.iter().find(|v| !known.contains(v)) {
            return Err(Error::Config(format!("unknown variant {v} in formula.variants; known: {}", known.join(", "))));
        }
        Ok(())
    }

    /// The file form, every key written; `parse(to_kv())` reproduces `self`.
    pub fn to_kv(&self) -> String {
        let vals = [
            self.level.to_string(),
            self.n.to_string(),
            self.k.to_string(),
            self.seed.to_string(),
            format!("{:e}", self.solver.rel_tol),
            self.solver.max_iter.to_string(),
            self.solver.direct_threshold.to_string(),
            self.shift.to_string(),
            delta0_name(self.delta0).to_string(),
            self.audit.to_string(),
            self.variants.join(","),
            self.output.display().to_string(),
        ];
        KEYS.iter().zip(vals).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn tensor_options(&self) -> TensorOptions {
        TensorOptions { shift: self.shift, delta0: self.delta0, variants: self.variants.clone() }
    }
}
