//! Run configuration: a JSON document plus flat command line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use selfdual::problems::{preset, BoundarySpec, Check, Formulation, ProblemPreset};
use selfdual::solver::SolveOptions;

/// Pass thresholds applied on top of the certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub boundary: f64,
    pub mild: f64,
    pub oracle: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { boundary: 1e-6, mild: 1e-3, oracle: 1e-3 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Name of a built-in preset.
    pub preset: Option<String>,
    /// A full problem description, instead of `preset`.
    pub problem: Option<ProblemPreset>,
    /// Grid size.
    pub n: Option<usize>,
    /// Number of time intervals.
    #[serde(rename = "N")]
    pub intervals: Option<usize>,
    /// Horizon.
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    pub boundary: Option<BoundarySpec>,
    /// Exponential weight of parabolic formulations.
    pub omega: Option<f64>,
    pub seed: Option<u64>,
    /// Residuals to report in addition to the preset's own.
    pub checks: Vec<Check>,
    pub solver: SolveOptions,
    pub thresholds: Thresholds,
    /// JSON report path.
    pub out: Option<PathBuf>,
    /// CSV trajectory path.
    pub trajectory: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// The problem with every override applied, and the solver options.
    pub fn resolve(&self) -> Result<(ProblemPreset, SolveOptions)> {
        let mut problem = match (&self.preset, &self.problem) {
            (Some(name), None) => preset(name)?,
            (None, Some(p)) => p.clone(),
            (Some(_), Some(_)) => bail!("config sets both `preset` and `problem`"),
            (None, None) => bail!("config needs `preset` or `problem`"),
        };
        if let Some(n) = self.n {
            if n < 3 {
                bail!("`n` must be at least 3");
            }
            problem.grid.n = n;
        }
        if let Some(intervals) = self.intervals {
            if intervals == 0 {
                bail!("`N` must be positive");
            }
            problem.intervals = intervals;
        }
        if let Some(horizon) = self.horizon {
            if !(horizon > 0.0 && horizon.is_finite()) {
                bail!("`T` must be positive");
            }
            problem.horizon = horizon;
        }
        if let Some(b) = &self.boundary {
            problem.boundary = b.clone();
        }
        if let Some(omega) = self.omega {
            match &mut problem.formulation {
                Formulation::Transformed { rate, .. } | Formulation::Shifted { rate, .. } => *rate = omega,
                _ => bail!("`omega` applies to transformed and shifted formulations only"),
            }
        }
        for c in &self.checks {
            if !problem.checks.contains(c) {
                problem.checks.push(*c);
            }
        }
        let mut solver = self.solver.clone();
        if let Some(seed) = self.seed {
            solver.seed = seed;
        }
        solver.validate()?;
        Ok((problem, solver))
    }
}

/// `periodic`, `antiperiodic`, or a JSON boundary object.
pub fn parse_boundary(text: &str) -> Result<BoundarySpec> {
    match text {
        "periodic" => Ok(BoundarySpec::Periodic),
        "antiperiodic" => Ok(BoundarySpec::Antiperiodic),
        _ => serde_json::from_str(text)
            .with_context(|| format!("boundary must be periodic, antiperiodic or a JSON object, got `{text}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse(r#"{"preset": "gl_skew", "horizn": 1.0}"#).unwrap_err();
        assert!(format!("{err:#}").contains("horizn"), "{err:#}");
    }

    #[test]
    fn nested_unknown_key_is_named() {
        let err = RunConfig::parse(r#"{"preset": "gl_skew", "solver": {"restart": 1}}"#).unwrap_err();
        assert!(format!("{err:#}").contains("restart"), "{err:#}");
    }

    #[test]
    fn overrides_apply() {
        let cfg = RunConfig::parse(r#"{"preset": "gl_skew", "N": 32, "T": 0.5, "omega": 0.25, "seed": 7}"#).unwrap();
        let (p, opts) = cfg.resolve().unwrap();
        assert_eq!(p.intervals, 32);
        assert_eq!(p.horizon, 0.5);
        assert_eq!(opts.seed, 7);
        match p.formulation {
            Formulation::Transformed { rate, .. } => assert_eq!(rate, 0.25),
            _ => panic!("gl_skew is transformed"),
        }
    }

    #[test]
    fn omega_rejected_for_hamiltonian() {
        let cfg = RunConfig::parse(r#"{"preset": "ham_bilaplacian", "omega": 1.0}"#).unwrap();
        assert!(cfg.resolve().is_err());
    }

    #[test]
    fn needs_exactly_one_problem() {
        assert!(RunConfig::default().resolve().is_err());
        let mut cfg = RunConfig { preset: Some("gl_skew".into()), ..Default::default() };
        cfg.problem = Some(preset("gl_skew").unwrap());
        assert!(cfg.resolve().is_err());
    }

    #[test]
    fn boundary_flag() {
        assert_eq!(parse_boundary("antiperiodic").unwrap(), BoundarySpec::Antiperiodic);
        assert!(parse_boundary("sideways").is_err());
    }
}
