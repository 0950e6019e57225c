//! Minimization of assembled functionals with a zero-value certificate.
//!
//! Selfdual functionals are nonnegative with infimum zero at solutions, so the
//! attained value itself certifies the result: a value that is zero relative
//! to the problem scale is a global minimum and an (approximate) solution,
//! whatever the convexity of the functional.

pub mod lbfgs;

use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convex::ConvexFn;
use crate::error::{Error, Result};
use crate::pathspace::{AssembledFunctional, Path};
use lbfgs::{lbfgs, LbfgsOptions, Termination};

/// Lower certificate bound: values below `-NEGATIVE_SLACK * scale` mean the
/// functional is not selfdual as assembled.
pub const NEGATIVE_SLACK: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub max_iterations: usize,
    /// Sup-norm of the gradient in the free variables at which a run stops.
    pub gradient_tolerance: f64,
    /// Certificate threshold, relative to the problem scale.
    pub value_tolerance: f64,
    /// Randomized restarts in addition to the run from the initial path.
    pub restarts: usize,
    /// Perturbation `eps/2 |v|^2` added to phi (with the weight moved by eps).
    pub epsilon_coercify: Option<f64>,
    pub seed: u64,
    pub memory: usize,
    /// Use the time-Laplacian preconditioner.
    pub preconditioner: bool,
    /// Relative weight of the zeroth-order part of the preconditioner.
    pub preconditioner_rate: f64,
    /// Record the accepted objective values of the best run.
    pub keep_history: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iterations: 20_000,
            gradient_tolerance: 1e-11,
            value_tolerance: 1e-6,
            restarts: 4,
            epsilon_coercify: None,
            seed: 42,
            memory: 20,
            preconditioner: true,
            preconditioner_rate: 1.0,
            keep_history: false,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{name} must be positive")))
            }
        };
        positive(self.gradient_tolerance, "gradient_tolerance")?;
        positive(self.value_tolerance, "value_tolerance")?;
        positive(self.preconditioner_rate, "preconditioner_rate")?;
        if let Some(eps) = self.epsilon_coercify {
            positive(eps, "epsilon_coercify")?;
        }
        if self.memory == 0 || self.max_iterations == 0 {
            return Err(Error::Parameter("memory and max_iterations must be nonzero".into()));
        }
        Ok(())
    }
}

/// Outcome of a solve. `path` is in the functional's own variables; problem
/// drivers add the physical trajectory and residuals.
#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    #[serde(skip)]
    pub path: Path,
    pub attained_value: f64,
    pub scale: f64,
    pub certified: bool,
    pub boundary_residual: f64,
    pub mild_residual: Option<f64>,
    pub oracle_error: Option<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub gradient_norm: f64,
    pub termination: Termination,
    pub restarts_run: usize,
    pub best_restart: usize,
    pub history: Vec<f64>,
    pub warnings: Vec<String>,
    pub wall_time: f64,
}

/// Whether `value` certifies a zero minimum at the given scale.
pub fn is_certified(value: f64, scale: f64, tolerance: f64) -> bool {
    value <= tolerance * scale && value >= -NEGATIVE_SLACK * scale
}

/// `(phi + eps/2 |.|^2, w + eps)`: a strongly convex problem with the same
/// solutions; the boundary factor becomes `e^{-(w + eps) T}`.
pub fn coercify(phi: &ConvexFn, rate: f64, eps: f64) -> Result<(ConvexFn, f64)> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Parameter("coercify needs eps > 0".into()));
    }
    let reg = ConvexFn::isotropic(phi.dim(), eps)?;
    Ok((ConvexFn::sum(vec![phi.clone(), reg])?, rate + eps))
}

fn restart_start(z0: &DVector<f64>, seed: u64, k: usize) -> DVector<f64> {
    if k == 0 {
        return z0.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
    let amp = 0.1 * (1.0 + z0.amax());
    z0.map(|v| v + amp * rng.gen_range(-1.0..1.0))
}

/// Minimizes `f` from `init` (projected onto the endpoint constraints), with
/// `opts.restarts` perturbed restarts run concurrently. The run with the
/// smallest value wins; ties go to the earliest restart.
pub fn minimize(f: &AssembledFunctional, init: &Path, opts: &SolveOptions) -> Result<SolveReport> {
    opts.validate()?;
    let start = Instant::now();
    let z0 = f.restrict(init);
    if f.value(&f.embed(&z0)).finite().is_none() {
        return Err(Error::NonFiniteStart);
    }
    if f.objective(&z0).is_none() {
        return Err(Error::Unsupported("gradient unavailable at the initial path".into()));
    }
    let precond = if opts.preconditioner {
        Some(f.time_preconditioner(opts.preconditioner_rate)?)
    } else {
        None
    };
    let lopts = LbfgsOptions {
        memory: opts.memory,
        max_iterations: opts.max_iterations,
        gradient_tolerance: opts.gradient_tolerance,
        target_value: None,
        max_backtracks: 60,
        keep_history: opts.keep_history,
    };
    let runs: Vec<_> = (0..=opts.restarts)
        .into_par_iter()
        .map(|k| {
            let x0 = restart_start(&z0, opts.seed, k);
            let apply = precond.as_ref().map(|p| move |r: &DVector<f64>| p.apply(r));
            let pc = apply.as_ref().map(|a| a as &dyn Fn(&DVector<f64>) -> DVector<f64>);
            lbfgs(|z| f.objective(z), x0, &lopts, pc)
        })
        .collect();
    let mut best: Option<(usize, lbfgs::LbfgsOutcome)> = None;
    let mut warnings = Vec::new();
    for (k, run) in runs.into_iter().enumerate() {
        match run {
            Ok(out) => {
                let better = match &best {
                    None => true,
                    Some((_, b)) => out.value < b.value,
                };
                if better {
                    best = Some((k, out));
                }
            }
            Err(e) => warnings.push(format!("restart {k} failed: {e}")),
        }
    }
    let (best_restart, out) = best.ok_or(Error::LineSearch)?;
    let path = f.embed(&out.x);
    let terms = f.terms(&path).ok_or(Error::Domain)?;
    let value = terms.total();
    let scale = 1.0 + terms.magnitude;
    let certified = is_certified(value, scale, opts.value_tolerance);
    if value < -NEGATIVE_SLACK * scale {
        warnings.push(format!("negative attained value {value:.3e}: functional not selfdual as assembled"));
    }
    if let Some(w) = &f.info().window {
        if !w.beta_ok || !w.horizon_ok {
            warnings.push(format!(
                "existence window not met (beta bound {:.3e}, horizon bound {:.3e})",
                w.beta_bound, w.horizon_bound
            ));
        }
    }
    if !certified {
        log::warn!("uncertified: value {value:.3e} at scale {scale:.3e}");
    }
    Ok(SolveReport {
        boundary_residual: f.boundary_residual(&path),
        path,
        attained_value: value,
        scale,
        certified,
        mild_residual: None,
        oracle_error: None,
        iterations: out.iterations,
        evaluations: out.evaluations,
        gradient_norm: out.gradient.amax(),
        termination: out.termination,
        restarts_run: opts.restarts + 1,
        best_restart,
        history: out.history,
        warnings,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::BoundaryLagrangian;
    use crate::lagrangian::Lagrangian;
    use crate::pathspace::{assemble_parabolic, Discretization};

    #[test]
    fn decay_from_one() {
        let disc = Discretization::new(1.0, 64).unwrap();
        let l = Lagrangian::from_convex_pair(ConvexFn::isotropic(1, 1.0).unwrap()).unwrap();
        let bl = BoundaryLagrangian::initial(DVector::from_element(1, 1.0)).unwrap();
        let f = assemble_parabolic(l, bl, disc).unwrap();
        let opts = SolveOptions { restarts: 0, ..Default::default() };
        let r = minimize(&f, &Path::zeros(1, 64), &opts).unwrap();
        assert!(r.certified && r.attained_value <= 1e-10, "{}", r.attained_value);
        let err = (0..=64)
            .map(|k| (r.path.node(k)[0] - (-disc.node_time(k)).exp()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn coercify_rejects_zero() {
        assert!(coercify(&ConvexFn::zero(1), 0.0, 0.0).is_err());
        let (phi, rate) = coercify(&ConvexFn::linear(DVector::from_element(1, 1.0)), 0.5, 0.25).unwrap();
        assert_eq!(rate, 0.75);
        let g = phi.gradient(&DVector::from_element(1, 2.0)).unwrap();
        assert!((g[0] - 1.5).abs() < 1e-15);
    }
}
