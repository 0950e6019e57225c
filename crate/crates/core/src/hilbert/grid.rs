//! Second-order finite-difference operators on uniform 1-D grids.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridBc {
    Dirichlet,
    Periodic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GridOperator {
    /// Three-point Laplacian with homogeneous Dirichlet ends.
    DirichletLaplacian,
    /// Three-point Laplacian with periodic wrap-around.
    PeriodicLaplacian,
    /// Square of the Dirichlet Laplacian.
    Bilaplacian,
    /// Centred first derivative times a constant velocity (skew-symmetric).
    Advection { velocity: f64, bc: GridBc },
    /// Discrete H^1_0 Gram matrix `-h * Laplacian` (Dirichlet).
    H1Gram,
}

/// Matrix of a grid operator on `n` points with spacing `h`.
pub fn grid_operator(kind: GridOperator, n: usize, h: f64) -> Result<DMatrix<f64>> {
    if n < 3 {
        return Err(Error::Parameter(format!("grid needs at least 3 points, got {n}")));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Parameter(format!("grid spacing must be positive, got {h}")));
    }
    let lap = |periodic: bool| {
        let mut m = DMatrix::zeros(n, n);
        let c = 1.0 / (h * h);
        for j in 0..n {
            m[(j, j)] = -2.0 * c;
            if j + 1 < n {
                m[(j, j + 1)] = c;
                m[(j + 1, j)] = c;
            }
        }
        if periodic {
            m[(0, n - 1)] = c;
            m[(n - 1, 0)] = c;
        }
        m
    };
    Ok(match kind {
        GridOperator::DirichletLaplacian => lap(false),
        GridOperator::PeriodicLaplacian => lap(true),
        GridOperator::Bilaplacian => {
            let l = lap(false);
            &l * &l
        }
        GridOperator::Advection { velocity, bc } => {
            let mut m = DMatrix::zeros(n, n);
            let c = velocity / (2.0 * h);
            for j in 0..n - 1 {
                m[(j, j + 1)] = c;
                m[(j + 1, j)] = -c;
            }
            if bc == GridBc::Periodic {
                m[(n - 1, 0)] = c;
                m[(0, n - 1)] = -c;
            }
            m
        }
        GridOperator::H1Gram => -lap(false) * h,
    })
}

/// A uniform grid on `(0, length)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n: usize,
    pub length: f64,
    pub bc: GridBc,
}

impl Grid {
    pub fn new(n: usize, length: f64, bc: GridBc) -> Result<Self> {
        if n < 3 {
            return Err(Error::Parameter(format!("grid needs at least 3 points, got {n}")));
        }
        if !(length > 0.0) {
            return Err(Error::Parameter("grid length must be positive".into()));
        }
        Ok(Grid { n, length, bc })
    }

    pub fn spacing(&self) -> f64 {
        match self.bc {
            GridBc::Dirichlet => self.length / (self.n as f64 + 1.0),
            GridBc::Periodic => self.length / self.n as f64,
        }
    }

    /// Interior node positions.
    pub fn nodes(&self) -> DVector<f64> {
        let h = self.spacing();
        DVector::from_fn(self.n, |j, _| match self.bc {
            GridBc::Dirichlet => (j as f64 + 1.0) * h,
            GridBc::Periodic => j as f64 * h,
        })
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        let kind = match self.bc {
            GridBc::Dirichlet => GridOperator::DirichletLaplacian,
            GridBc::Periodic => GridOperator::PeriodicLaplacian,
        };
        grid_operator(kind, self.n, self.spacing()).expect("validated grid")
    }

    pub fn bilaplacian(&self) -> DMatrix<f64> {
        let l = self.laplacian();
        &l * &l
    }

    pub fn advection(&self, velocity: f64) -> DMatrix<f64> {
        grid_operator(
            GridOperator::Advection { velocity, bc: self.bc },
            self.n,
            self.spacing(),
        )
        .expect("validated grid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dirichlet_three_points() {
        let m = grid_operator(GridOperator::DirichletLaplacian, 3, 0.25).unwrap();
        let want = DMatrix::from_row_slice(
            3,
            3,
            &[-32.0, 16.0, 0.0, 16.0, -32.0, 16.0, 0.0, 16.0, -32.0],
        );
        assert_eq!(m, want);
    }

    #[test]
    fn too_few_points() {
        assert!(grid_operator(GridOperator::PeriodicLaplacian, 2, 0.1).is_err());
    }

    #[test]
    fn advection_is_skew() {
        for bc in [GridBc::Dirichlet, GridBc::Periodic] {
            let m = grid_operator(GridOperator::Advection { velocity: 0.7, bc }, 6, 0.2).unwrap();
            assert_eq!((&m + m.transpose()).abs().max(), 0.0);
        }
    }

    #[test]
    fn periodic_laplacian_annihilates_constants() {
        let g = Grid::new(8, 2.0 * std::f64::consts::PI, GridBc::Periodic).unwrap();
        let ones = DVector::from_element(8, 1.0);
        assert!((g.laplacian() * ones).amax() < 1e-12);
    }
}
