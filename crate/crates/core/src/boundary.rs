//! Boundary Lagrangians `l(a, b) = psi(a) + psi*(-b)` and their Hamiltonian
//! counterparts.
//!
//! The parabolic boundary term is evaluated at `a = u(0) - u(T)` and
//! `b = (u(0) + u(T)) / 2`; the Hamiltonian one at `a = u(T) - u(0)` and
//! `b = R (u(T) + u(0)) / 2`.

use nalgebra::{DMatrix, DVector};

use crate::convex::{ConvexFn, Extended};
use crate::error::{check_dim, Error, Result};

/// Catalog of boundary conditions.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryKind {
    /// `v(0) = v0`, from `psi(u) = |u|^2/4 - <u, v0>`.
    Initial { v0: DVector<f64> },
    /// `v(0) = Q v(T)`, from `psi = indicator{0}`.
    Periodic,
    /// `v(0) = -Q v(T)`, from `psi = 0`.
    Antiperiodic,
    /// Any other `psi`; enforced through the boundary term only.
    Custom,
}

#[derive(Clone, Debug)]
pub struct BoundaryLagrangian {
    kind: BoundaryKind,
    psi: ConvexFn,
    psi_conj: ConvexFn,
}

impl BoundaryLagrangian {
    pub fn initial(v0: DVector<f64>) -> Result<Self> {
        let d = v0.len();
        let psi = ConvexFn::quadratic(DMatrix::identity(d, d) * 0.5, -&v0, 0.0)?;
        let psi_conj = psi.conjugate()?;
        Ok(BoundaryLagrangian { kind: BoundaryKind::Initial { v0 }, psi, psi_conj })
    }

    pub fn periodic(dim: usize) -> Self {
        let psi = ConvexFn::indicator(DVector::zeros(dim));
        let psi_conj = ConvexFn::linear(DVector::zeros(dim));
        BoundaryLagrangian { kind: BoundaryKind::Periodic, psi, psi_conj }
    }

    pub fn antiperiodic(dim: usize) -> Self {
        let psi = ConvexFn::zero(dim);
        let psi_conj = ConvexFn::indicator(DVector::zeros(dim));
        BoundaryLagrangian { kind: BoundaryKind::Antiperiodic, psi, psi_conj }
    }

    pub fn from_psi(psi: ConvexFn) -> Result<Self> {
        let psi_conj = psi.conjugate()?;
        Ok(BoundaryLagrangian { kind: BoundaryKind::Custom, psi, psi_conj })
    }

    pub fn kind(&self) -> &BoundaryKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.psi.dim()
    }

    pub fn psi(&self) -> &ConvexFn {
        &self.psi
    }

    pub fn psi_conj(&self) -> &ConvexFn {
        &self.psi_conj
    }

    /// `l(a, b) = psi(a) + psi*(-b)`.
    pub fn eval(&self, a: &DVector<f64>, b: &DVector<f64>) -> Extended {
        self.psi.eval(a) + self.psi_conj.eval(&(-b))
    }

    pub fn gradient(&self, a: &DVector<f64>, b: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let ga = self.psi.gradient(a)?;
        let gb = -self.psi_conj.gradient(&(-b))?;
        Some((ga, gb))
    }

    /// `l(a, b) + <a, b>`, nonnegative.
    pub fn gap(&self, a: &DVector<f64>, b: &DVector<f64>) -> Extended {
        self.eval(a, b).plus(a.dot(b))
    }
}

/// Residual of a parabolic boundary condition for a path with endpoints
/// `start`, `end`; `transport` is `Q = e^{-wT} S_{-T}` (identity when absent).
pub fn boundary_residual(
    bl: &BoundaryLagrangian,
    start: &DVector<f64>,
    end: &DVector<f64>,
    transport: Option<&DMatrix<f64>>,
) -> Result<f64> {
    check_dim(bl.dim(), start.len())?;
    check_dim(bl.dim(), end.len())?;
    let w = match transport {
        Some(q) => q * end,
        None => end.clone(),
    };
    Ok(match bl.kind() {
        BoundaryKind::Initial { v0 } => (start - v0).norm(),
        BoundaryKind::Periodic => (start - &w).norm(),
        BoundaryKind::Antiperiodic => (start + &w).norm(),
        BoundaryKind::Custom => {
            let a = start - &w;
            let b = (start + &w) * 0.5;
            bl.gap(&a, &b).finite().unwrap_or(f64::INFINITY)
        }
    })
}

/// `psi_circle(p) = sup_x <p, A x> - psi(x) = psi*(A p)` for self-adjoint `A`.
pub fn psi_circle(psi: &ConvexFn, a_tilde: &DMatrix<f64>) -> Result<ConvexFn> {
    psi.conjugate()?.precomposed(a_tilde.clone())
}

/// How the Hamiltonian boundary Lagrangian is built from `psi`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// `l(x, p) = psi(x) + psi_circle(-p)`.
    Circle,
    /// `l(x, p) = psi(x) + psi*(beta p)`, whose scaled transform is its own mirror image.
    Conjugate,
}

#[derive(Clone, Debug, PartialEq)]
pub enum HamiltonianKind {
    Periodic,
    Antiperiodic,
    /// `p(0) = p0`, `q(T) = q0`.
    Mixed { p0: DVector<f64>, q0: DVector<f64> },
    Custom,
}

/// Boundary part of the Hamiltonian functional:
/// `l(a, b)/beta + (l/beta)*(b, a) - 2 <a, b>`.
#[derive(Clone, Debug)]
pub struct HamiltonianBoundary {
    kind: HamiltonianKind,
    psi: ConvexFn,
    psi_conj: ConvexFn,
    beta: f64,
    pairing: Pairing,
    a_tilde: DMatrix<f64>,
    a_tilde_inv: DMatrix<f64>,
}

impl HamiltonianBoundary {
    /// Boundary from an arbitrary `psi` on `X = H x H` with the doubled operator `A~`.
    pub fn from_psi(psi: ConvexFn, a_tilde: DMatrix<f64>, beta: f64, pairing: Pairing) -> Result<Self> {
        Self::build(HamiltonianKind::Custom, psi, a_tilde, beta, pairing)
    }

    pub fn periodic(a_tilde: DMatrix<f64>, beta: f64) -> Result<Self> {
        let d = a_tilde.nrows();
        Self::build(
            HamiltonianKind::Periodic,
            ConvexFn::indicator(DVector::zeros(d)),
            a_tilde,
            beta,
            Pairing::Circle,
        )
    }

    pub fn antiperiodic(a_tilde: DMatrix<f64>, beta: f64) -> Result<Self> {
        let d = a_tilde.nrows();
        Self::build(HamiltonianKind::Antiperiodic, ConvexFn::zero(d), a_tilde, beta, Pairing::Circle)
    }

    /// `psi(w) = beta/4 |w|^2 - beta <w, v0>` with `v0 = (-p0, q0)`; its zero set is
    /// `p(0) = p0`, `q(T) = q0`.
    pub fn mixed(p0: DVector<f64>, q0: DVector<f64>, a_tilde: DMatrix<f64>, beta: f64) -> Result<Self> {
        let n = p0.len();
        check_dim(n, q0.len())?;
        check_dim(2 * n, a_tilde.nrows())?;
        let mut v0 = DVector::zeros(2 * n);
        v0.rows_mut(0, n).copy_from(&(-&p0));
        v0.rows_mut(n, n).copy_from(&q0);
        let psi = ConvexFn::quadratic(DMatrix::identity(2 * n, 2 * n) * (0.5 * beta), -v0 * beta, 0.0)?;
        Self::build(HamiltonianKind::Mixed { p0, q0 }, psi, a_tilde, beta, Pairing::Conjugate)
    }

    fn build(
        kind: HamiltonianKind,
        psi: ConvexFn,
        a_tilde: DMatrix<f64>,
        beta: f64,
        pairing: Pairing,
    ) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::Parameter("beta must be positive".into()));
        }
        check_dim(psi.dim(), a_tilde.nrows())?;
        let a_tilde_inv = a_tilde
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("doubled operator".into()))?;
        let psi_conj = psi.conjugate()?;
        Ok(HamiltonianBoundary { kind, psi, psi_conj, beta, pairing, a_tilde, a_tilde_inv })
    }

    pub fn kind(&self) -> &HamiltonianKind {
        &self.kind
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn pairing(&self) -> Pairing {
        self.pairing
    }

    pub fn dim(&self) -> usize {
        self.psi.dim()
    }

    /// The boundary Lagrangian `l(x, p)`.
    pub fn ell(&self, x: &DVector<f64>, p: &DVector<f64>) -> Extended {
        match self.pairing {
            Pairing::Circle => self.psi.eval(x) + self.psi_conj.eval(&(&self.a_tilde * (-p))),
            Pairing::Conjugate => self.psi.eval(x) + self.psi_conj.eval(&(p * self.beta)),
        }
    }

    /// `(l/beta)*(q, y)`.
    pub fn ell_star_scaled(&self, q: &DVector<f64>, y: &DVector<f64>) -> Extended {
        let first = self.psi_conj.eval(&(q * self.beta));
        let second = match self.pairing {
            Pairing::Circle => self.psi.eval(&(&self.a_tilde_inv * y * (-self.beta))),
            Pairing::Conjugate => self.psi.eval(y),
        };
        (first + second).scale(1.0 / self.beta)
    }

    pub fn eval(&self, a: &DVector<f64>, b: &DVector<f64>) -> Extended {
        (self.ell(a, b).scale(1.0 / self.beta) + self.ell_star_scaled(b, a)).plus(-2.0 * a.dot(b))
    }

    pub fn gradient(&self, a: &DVector<f64>, b: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let beta = self.beta;
        match self.pairing {
            Pairing::Circle => {
                let inv = &self.a_tilde_inv;
                let ga = self.psi.gradient(a)? / beta
                    - inv.transpose() * self.psi.gradient(&(inv * a * (-beta)))?
                    - b * 2.0;
                let gb = -(self.a_tilde.transpose() * self.psi_conj.gradient(&(&self.a_tilde * (-b)))?)
                    / beta
                    + self.psi_conj.gradient(&(b * beta))?
                    - a * 2.0;
                Some((ga, gb))
            }
            Pairing::Conjugate => {
                let ga = self.psi.gradient(a)? * (2.0 / beta) - b * 2.0;
                let gb = self.psi_conj.gradient(&(b * beta))? * 2.0 - a * 2.0;
                Some((ga, gb))
            }
        }
    }
}

/// Residual of a Hamiltonian boundary condition. `start` is `v(0)` and
/// `end` is the transported end value `S_{-T} v(T)`.
pub fn hamiltonian_residual(
    hb: &HamiltonianBoundary,
    reflection: &DMatrix<f64>,
    start: &DVector<f64>,
    end: &DVector<f64>,
) -> f64 {
    match hb.kind() {
        HamiltonianKind::Periodic => (end - start).norm(),
        HamiltonianKind::Antiperiodic => (end + start).norm(),
        HamiltonianKind::Mixed { p0, q0 } => {
            let n = p0.len();
            let dp = start.rows(0, n) - p0;
            let dq = end.rows(n, n) - q0;
            (dp.norm_squared() + dq.norm_squared()).sqrt()
        }
        HamiltonianKind::Custom => {
            let a = end - start;
            let b = reflection * (end + start) * 0.5;
            hb.eval(&a, &b).finite().unwrap_or(f64::INFINITY)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn initial_conjugate_is_shifted_square() {
        let bl = BoundaryLagrangian::initial(v(&[0.0, 0.0])).unwrap();
        let p = v(&[1.0, 2.0]);
        assert!((bl.psi_conj().eval(&p).finite().unwrap() - 5.0).abs() < 1e-13);
    }

    #[test]
    fn initial_residual() {
        let bl = BoundaryLagrangian::initial(v(&[1.0, 0.0])).unwrap();
        let r = boundary_residual(&bl, &v(&[1.1, 0.0]), &v(&[0.0, 0.0]), None).unwrap();
        assert!((r - 0.1).abs() < 1e-14);
    }

    #[test]
    fn initial_gap_is_squared_distance() {
        let v0 = v(&[0.3, -0.7]);
        let bl = BoundaryLagrangian::initial(v0.clone()).unwrap();
        let (u0, ut) = (v(&[1.0, 2.0]), v(&[-0.5, 0.25]));
        let a = &u0 - &ut;
        let b = (&u0 + &ut) * 0.5;
        let gap = bl.gap(&a, &b).finite().unwrap();
        assert!((gap - (&u0 - &v0).norm_squared()).abs() < 1e-13);
    }

    #[test]
    fn periodic_and_antiperiodic_domains() {
        let p = BoundaryLagrangian::periodic(2);
        assert_eq!(p.eval(&v(&[0.0, 0.0]), &v(&[3.0, 1.0])), Extended::Finite(0.0));
        assert_eq!(p.eval(&v(&[0.1, 0.0]), &v(&[3.0, 1.0])), Extended::Infinite);
        let a = BoundaryLagrangian::antiperiodic(2);
        assert_eq!(a.eval(&v(&[5.0, 1.0]), &v(&[0.0, 0.0])), Extended::Finite(0.0));
        assert_eq!(a.eval(&v(&[5.0, 1.0]), &v(&[0.0, 0.2])), Extended::Infinite);
    }

    #[test]
    fn mixed_pairing_zero_set() {
        let a_tilde = DMatrix::from_diagonal(&v(&[2.0, 2.0]));
        let hb = HamiltonianBoundary::mixed(v(&[0.4]), v(&[-1.2]), a_tilde, 0.3).unwrap();
        // u = (p, q): p(0) = 0.4 and q(T) = -1.2.
        let u0 = v(&[0.4, 0.9]);
        let ut = v(&[2.0, -1.2]);
        let r = DMatrix::from_diagonal(&v(&[1.0, -1.0]));
        let a = &ut - &u0;
        let b = &r * (&ut + &u0) * 0.5;
        assert!(hb.eval(&a, &b).finite().unwrap().abs() < 1e-13);
        assert!(hamiltonian_residual(&hb, &r, &u0, &ut) < 1e-15);
        let moved = v(&[0.5, 0.9]);
        let a2 = &ut - &moved;
        let b2 = &r * (&ut + &moved) * 0.5;
        assert!(hb.eval(&a2, &b2).finite().unwrap() > 1e-4);
    }
}
