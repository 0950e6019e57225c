//! Shared fixtures for the criterion benches.

use nalgebra::{DMatrix, DVector};

use selfdual::pathspace::Path;
use selfdual::problems::{preset, Problem};
use selfdual::Result;

/// The skew Schroedinger generator `i Lap` on a periodic grid of `n` nodes.
pub fn schrodinger_generator(n: usize) -> Result<DMatrix<f64>> {
    let mut spec = preset("gl_skew")?;
    spec.grid.n = n;
    let problem = Problem::build(&spec, None)?;
    let (m, _) = problem.affine_model().expect("gl_skew is affine");
    Ok(-(&m + m.transpose()) * 0.5 + &m)
}

/// A preset resized to `n` grid nodes and `intervals` time steps.
pub fn problem(name: &str, n: usize, intervals: usize) -> Result<Problem> {
    let mut spec = preset(name)?;
    spec.grid.n = n;
    spec.intervals = intervals;
    Problem::build(&spec, None)
}

/// A smooth, deterministic path admissible for the problem's constraints.
pub fn wavy_path(problem: &Problem) -> Path {
    let f = &problem.functional;
    let dim = f.dim();
    let intervals = f.discretization().intervals;
    let nodes = (0..=intervals)
        .map(|k| DVector::from_fn(dim, |i, _| (0.3 * i as f64 + 0.1 * k as f64).sin()))
        .collect();
    f.enforce(&Path::new(nodes).expect("nonempty path"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_is_skew() {
        let g = schrodinger_generator(8).unwrap();
        assert!((&g + g.transpose()).amax() < 1e-12);
    }
}
