//! Proper convex lower-semicontinuous functions with extended real values.
//!
//! [`ConvexFn`] is a closed catalog of functions whose Legendre transforms are
//! again in the catalog. Compositions without a closed-form transform fall back
//! to an inner maximisation ([`ConvexFn::NumericConjugate`]) or, for
//! verification in low dimension, to a tabulated grid supremum.

use std::ops::Add;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::solver::lbfgs::{lbfgs, LbfgsOptions};

/// Relative tolerance for membership in singleton and box domains.
pub const DOMAIN_TOL: f64 = 1e-9;

/// An element of `R ∪ {+inf}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Extended {
    Finite(f64),
    Infinite,
}

impl Extended {
    pub fn finite(self) -> Option<f64> {
        match self {
            Extended::Finite(v) => Some(v),
            Extended::Infinite => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Extended::Finite(_))
    }

    /// Multiply by a nonnegative weight; `0 * inf` stays infinite.
    pub fn scale(self, w: f64) -> Extended {
        match self {
            Extended::Finite(v) => Extended::Finite(w * v),
            Extended::Infinite => Extended::Infinite,
        }
    }

    pub fn plus(self, v: f64) -> Extended {
        self + Extended::Finite(v)
    }
}

impl Add for Extended {
    type Output = Extended;
    fn add(self, rhs: Extended) -> Extended {
        match (self, rhs) {
            (Extended::Finite(a), Extended::Finite(b)) => Extended::Finite(a + b),
            _ => Extended::Infinite,
        }
    }
}

impl std::iter::Sum for Extended {
    fn sum<I: Iterator<Item = Extended>>(iter: I) -> Extended {
        iter.fold(Extended::Finite(0.0), |a, b| a + b)
    }
}

impl From<f64> for Extended {
    fn from(v: f64) -> Self {
        Extended::Finite(v)
    }
}

/// Effective domain descriptor.
#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    Whole,
    Singleton(DVector<f64>),
    /// `{x : |x - center|_inf <= radius}`.
    Box { center: DVector<f64>, radius: f64 },
    /// An affine subspace or something not described more precisely.
    Restricted,
}

/// Precomputed data of `x -> x^T H x / 2 + <lin, x> + constant`.
#[derive(Debug)]
pub struct Quad {
    pub hess: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub constant: f64,
    pinv: DMatrix<f64>,
    /// Projector onto the kernel of `hess`, absent when `hess` is definite.
    kernel: Option<DMatrix<f64>>,
}

impl Quad {
    fn new(hess: DMatrix<f64>, lin: DVector<f64>, constant: f64) -> Result<Self> {
        if !hess.is_square() {
            return Err(Error::Parameter("quadratic form must be square".into()));
        }
        check_dim(hess.nrows(), lin.len())?;
        let scale = 1.0 + hess.abs().max();
        if (&hess - hess.transpose()).abs().max() > 1e-10 * scale {
            return Err(Error::Parameter("quadratic form must be symmetric".into()));
        }
        let sym = (&hess + hess.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let cut = 1e-12 * scale;
        if eig.eigenvalues.min() < -cut {
            return Err(Error::Parameter(
                "quadratic form must be positive semidefinite".into(),
            ));
        }
        let n = sym.nrows();
        let mut pinv = DMatrix::zeros(n, n);
        let mut kernel = DMatrix::zeros(n, n);
        let mut singular = false;
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            let v = eig.eigenvectors.column(k);
            if lam > cut {
                pinv += v * v.transpose() / lam;
            } else {
                kernel += v * v.transpose();
                singular = true;
            }
        }
        Ok(Quad {
            hess: sym,
            lin,
            constant,
            pinv,
            kernel: singular.then_some(kernel),
        })
    }

    pub fn is_definite(&self) -> bool {
        self.kernel.is_none()
    }
}

/// Catalog of convex functions on `R^n`.
#[derive(Clone, Debug)]
pub enum ConvexFn {
    Zero { dim: usize },
    Quadratic(Arc<Quad>),
    /// Transform of a quadratic with singular Hessian: finite on an affine subspace.
    QuadraticDual(Arc<Quad>),
    /// `|x|^p / p` (Euclidean norm), `p > 1`.
    Power { dim: usize, exponent: f64 },
    /// `sum_i |x_i|^p / p`, `p > 1`.
    SeparablePower { dim: usize, exponent: f64 },
    Linear { coeff: DVector<f64> },
    Indicator { point: DVector<f64> },
    /// Indicator of `{ |x|_inf <= radius }`.
    BoxIndicator { dim: usize, radius: f64 },
    /// `weight * |x|_1`.
    L1 { dim: usize, weight: f64 },
    /// `weight * f(x)`, `weight > 0`.
    Scaled { weight: f64, inner: Box<ConvexFn> },
    /// `f(factor * x)`, `factor != 0`.
    Dilated { factor: f64, inner: Box<ConvexFn> },
    /// `f(x) + <shift, x>`.
    Tilted { inner: Box<ConvexFn>, shift: DVector<f64> },
    /// `f(x - offset)`.
    Translated { inner: Box<ConvexFn>, offset: DVector<f64> },
    /// `f(M x)`.
    Precomposed { inner: Box<ConvexFn>, map: Arc<DMatrix<f64>> },
    /// `sum_k f_k(x_k)` over consecutive coordinate blocks.
    Separable { parts: Vec<ConvexFn> },
    Sum { terms: Vec<ConvexFn> },
    /// `sup_x <x, p> - f(x)` by inner minimisation; `f` must be smooth and coercive.
    NumericConjugate { inner: Box<ConvexFn> },
    /// `max_i <x_i, p> - f(x_i)` over tabulated points.
    GridTable(Arc<GridTable>),
}

#[derive(Debug)]
pub struct GridTable {
    pub dim: usize,
    pub points: Vec<f64>,
    pub values: Vec<f64>,
}

impl GridTable {
    fn best(&self, p: &DVector<f64>) -> (usize, f64) {
        let d = self.dim;
        let mut best = (0, f64::NEG_INFINITY);
        for (i, v) in self.values.iter().enumerate() {
            let x = &self.points[i * d..(i + 1) * d];
            let s: f64 = x.iter().zip(p.iter()).map(|(a, b)| a * b).sum::<f64>() - v;
            if s > best.1 {
                best = (i, s);
            }
        }
        best
    }
}

fn in_box(x: &DVector<f64>, center: Option<&DVector<f64>>, radius: f64) -> bool {
    let slack = DOMAIN_TOL * (1.0 + radius);
    x.iter().enumerate().all(|(i, v)| {
        let c = center.map_or(0.0, |c| c[i]);
        (v - c).abs() <= radius + slack
    })
}

fn scalar_power_prox(v: f64, lambda: f64, p: f64) -> f64 {
    // Solve s + lambda s^{p-1} = |v| for s in [0, |v|].
    let target = v.abs();
    if target == 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0f64, target);
    let h = |s: f64| s + lambda * s.powf(p - 1.0) - target;
    let mut s = target;
    for _ in 0..200 {
        let val = h(s);
        if val.abs() <= 1e-15 * target {
            break;
        }
        if val > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let deriv = 1.0 + lambda * (p - 1.0) * s.powf(p - 2.0);
        let newton = s - val / deriv;
        s = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-16 * target {
            break;
        }
    }
    s.copysign(v)
}

impl ConvexFn {
    // ----- constructors -----

    pub fn zero(dim: usize) -> Self {
        ConvexFn::Zero { dim }
    }

    /// `x^T H x / 2 + <lin, x> + constant` with symmetric PSD `H`.
    pub fn quadratic(hess: DMatrix<f64>, lin: DVector<f64>, constant: f64) -> Result<Self> {
        Ok(ConvexFn::Quadratic(Arc::new(Quad::new(hess, lin, constant)?)))
    }

    /// `coeff |x|^2 / 2`.
    pub fn isotropic(dim: usize, coeff: f64) -> Result<Self> {
        if coeff < 0.0 {
            return Err(Error::Parameter("negative quadratic coefficient".into()));
        }
        ConvexFn::quadratic(
            DMatrix::identity(dim, dim) * coeff,
            DVector::zeros(dim),
            0.0,
        )
    }

    pub fn power(dim: usize, exponent: f64) -> Result<Self> {
        if !(exponent > 1.0) || !exponent.is_finite() {
            return Err(Error::Parameter(format!("power exponent must exceed 1, got {exponent}")));
        }
        Ok(ConvexFn::Power { dim, exponent })
    }

    pub fn separable_power(dim: usize, exponent: f64) -> Result<Self> {
        if !(exponent > 1.0) || !exponent.is_finite() {
            return Err(Error::Parameter(format!("power exponent must exceed 1, got {exponent}")));
        }
        Ok(ConvexFn::SeparablePower { dim, exponent })
    }

    pub fn linear(coeff: DVector<f64>) -> Self {
        ConvexFn::Linear { coeff }
    }

    pub fn indicator(point: DVector<f64>) -> Self {
        ConvexFn::Indicator { point }
    }

    pub fn box_indicator(dim: usize, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(Error::Parameter("box radius must be nonnegative".into()));
        }
        Ok(ConvexFn::BoxIndicator { dim, radius })
    }

    pub fn l1(dim: usize, weight: f64) -> Result<Self> {
        if !(weight >= 0.0) {
            return Err(Error::Parameter("l1 weight must be nonnegative".into()));
        }
        Ok(ConvexFn::L1 { dim, weight })
    }

    pub fn scaled(self, weight: f64) -> Result<Self> {
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(Error::Parameter("weight must be positive and finite".into()));
        }
        Ok(ConvexFn::Scaled { weight, inner: Box::new(self) })
    }

    pub fn dilated(self, factor: f64) -> Result<Self> {
        if factor == 0.0 || !factor.is_finite() {
            return Err(Error::Parameter("dilation factor must be nonzero".into()));
        }
        Ok(ConvexFn::Dilated { factor, inner: Box::new(self) })
    }

    pub fn tilted(self, shift: DVector<f64>) -> Result<Self> {
        check_dim(self.dim(), shift.len())?;
        Ok(ConvexFn::Tilted { inner: Box::new(self), shift })
    }

    pub fn translated(self, offset: DVector<f64>) -> Result<Self> {
        check_dim(self.dim(), offset.len())?;
        Ok(ConvexFn::Translated { inner: Box::new(self), offset })
    }

    pub fn precomposed(self, map: DMatrix<f64>) -> Result<Self> {
        check_dim(self.dim(), map.nrows())?;
        Ok(ConvexFn::Precomposed { inner: Box::new(self), map: Arc::new(map) })
    }

    pub fn separable(parts: Vec<ConvexFn>) -> Self {
        ConvexFn::Separable { parts }
    }

    pub fn sum(terms: Vec<ConvexFn>) -> Result<Self> {
        let Some(first) = terms.first() else {
            return Err(Error::Parameter("empty sum".into()));
        };
        let d = first.dim();
        for t in &terms {
            check_dim(d, t.dim())?;
        }
        Ok(ConvexFn::Sum { terms })
    }

    // ----- structure -----

    pub fn dim(&self) -> usize {
        match self {
            ConvexFn::Zero { dim }
            | ConvexFn::Power { dim, .. }
            | ConvexFn::SeparablePower { dim, .. }
            | ConvexFn::BoxIndicator { dim, .. }
            | ConvexFn::L1 { dim, .. } => *dim,
            ConvexFn::Quadratic(q) | ConvexFn::QuadraticDual(q) => q.lin.len(),
            ConvexFn::Linear { coeff } => coeff.len(),
            ConvexFn::Indicator { point } => point.len(),
            ConvexFn::Scaled { inner, .. }
            | ConvexFn::Dilated { inner, .. }
            | ConvexFn::Tilted { inner, .. }
            | ConvexFn::Translated { inner, .. }
            | ConvexFn::NumericConjugate { inner } => inner.dim(),
            ConvexFn::Precomposed { map, .. } => map.ncols(),
            ConvexFn::Separable { parts } => parts.iter().map(|p| p.dim()).sum(),
            ConvexFn::Sum { terms } => terms[0].dim(),
            ConvexFn::GridTable(t) => t.dim,
        }
    }

    pub fn domain(&self) -> Domain {
        match self {
            ConvexFn::Indicator { point } => Domain::Singleton(point.clone()),
            ConvexFn::BoxIndicator { dim, radius } => Domain::Box {
                center: DVector::zeros(*dim),
                radius: *radius,
            },
            ConvexFn::QuadraticDual(_) => Domain::Restricted,
            ConvexFn::Scaled { inner, .. } | ConvexFn::Tilted { inner, .. } => inner.domain(),
            ConvexFn::Translated { inner, offset } => match inner.domain() {
                Domain::Singleton(p) => Domain::Singleton(p + offset),
                Domain::Box { center, radius } => Domain::Box { center: center + offset, radius },
                d => d,
            },
            ConvexFn::Dilated { factor, inner } => match inner.domain() {
                Domain::Singleton(p) => Domain::Singleton(p / *factor),
                Domain::Box { center, radius } => Domain::Box {
                    center: center / *factor,
                    radius: radius / factor.abs(),
                },
                d => d,
            },
            ConvexFn::Precomposed { inner, .. } => match inner.domain() {
                Domain::Whole => Domain::Whole,
                _ => Domain::Restricted,
            },
            ConvexFn::Separable { parts } => {
                if parts.iter().all(|p| p.domain() == Domain::Whole) {
                    Domain::Whole
                } else {
                    Domain::Restricted
                }
            }
            ConvexFn::Sum { terms } => {
                if terms.iter().all(|p| p.domain() == Domain::Whole) {
                    Domain::Whole
                } else {
                    Domain::Restricted
                }
            }
            _ => Domain::Whole,
        }
    }

    /// Finite and differentiable everywhere.
    pub fn is_smooth(&self) -> bool {
        match self {
            ConvexFn::Zero { .. }
            | ConvexFn::Quadratic(_)
            | ConvexFn::Power { .. }
            | ConvexFn::SeparablePower { .. }
            | ConvexFn::Linear { .. } => true,
            ConvexFn::Scaled { inner, .. }
            | ConvexFn::Dilated { inner, .. }
            | ConvexFn::Tilted { inner, .. }
            | ConvexFn::Translated { inner, .. }
            | ConvexFn::Precomposed { inner, .. } => inner.is_smooth(),
            ConvexFn::Separable { parts } => parts.iter().all(|p| p.is_smooth()),
            ConvexFn::Sum { terms } => terms.iter().all(|p| p.is_smooth()),
            ConvexFn::NumericConjugate { inner } => inner.is_strongly_convex(),
            _ => false,
        }
    }

    /// Conservative test for a strongly convex function (smooth conjugate).
    fn is_strongly_convex(&self) -> bool {
        match self {
            ConvexFn::Quadratic(q) => q.is_definite(),
            ConvexFn::Scaled { inner, .. }
            | ConvexFn::Tilted { inner, .. }
            | ConvexFn::Translated { inner, .. }
            | ConvexFn::Dilated { inner, .. } => inner.is_strongly_convex(),
            ConvexFn::Separable { parts } => parts.iter().all(|p| p.is_strongly_convex()),
            ConvexFn::Sum { terms } => {
                terms.iter().all(|t| t.is_smooth()) && terms.iter().any(|t| t.is_strongly_convex())
            }
            _ => false,
        }
    }

    // ----- evaluation -----

    pub fn eval(&self, x: &DVector<f64>) -> Extended {
        debug_assert_eq!(x.len(), self.dim());
        match self {
            ConvexFn::Zero { .. } => Extended::Finite(0.0),
            ConvexFn::Quadratic(q) => {
                Extended::Finite(0.5 * x.dot(&(&q.hess * x)) + q.lin.dot(x) + q.constant)
            }
            ConvexFn::QuadraticDual(q) => {
                let r = x - &q.lin;
                if let Some(k) = &q.kernel {
                    if (k * &r).amax() > DOMAIN_TOL * (1.0 + r.amax()) {
                        return Extended::Infinite;
                    }
                }
                Extended::Finite(0.5 * r.dot(&(&q.pinv * &r)) - q.constant)
            }
            ConvexFn::Power { exponent, .. } => Extended::Finite(x.norm().powf(*exponent) / exponent),
            ConvexFn::SeparablePower { exponent, .. } => {
                Extended::Finite(x.iter().map(|v| v.abs().powf(*exponent)).sum::<f64>() / exponent)
            }
            ConvexFn::Linear { coeff } => Extended::Finite(coeff.dot(x)),
            ConvexFn::Indicator { point } => {
                if (x - point).amax() <= DOMAIN_TOL * (1.0 + point.amax()) {
                    Extended::Finite(0.0)
                } else {
                    Extended::Infinite
                }
            }
            ConvexFn::BoxIndicator { radius, .. } => {
                if in_box(x, None, *radius) {
                    Extended::Finite(0.0)
                } else {
                    Extended::Infinite
                }
            }
            ConvexFn::L1 { weight, .. } => Extended::Finite(weight * x.lp_norm(1)),
            ConvexFn::Scaled { weight, inner } => inner.eval(x).scale(*weight),
            ConvexFn::Dilated { factor, inner } => inner.eval(&(x * *factor)),
            ConvexFn::Tilted { inner, shift } => inner.eval(x).plus(shift.dot(x)),
            ConvexFn::Translated { inner, offset } => inner.eval(&(x - offset)),
            ConvexFn::Precomposed { inner, map } => inner.eval(&(&**map * x)),
            ConvexFn::Separable { parts } => {
                let mut at = 0;
                parts
                    .iter()
                    .map(|p| {
                        let d = p.dim();
                        let v = p.eval(&x.rows(at, d).into_owned());
                        at += d;
                        v
                    })
                    .sum()
            }
            ConvexFn::Sum { terms } => terms.iter().map(|t| t.eval(x)).sum(),
            ConvexFn::NumericConjugate { inner } => match numeric_sup(inner, x) {
                Ok((v, _)) => Extended::Finite(v),
                Err(_) => Extended::Infinite,
            },
            ConvexFn::GridTable(t) => {
                if t.values.is_empty() {
                    Extended::Infinite
                } else {
                    Extended::Finite(t.best(x).1)
                }
            }
        }
    }

    /// An element of the subdifferential at `x`, or `None` outside the domain.
    ///
    /// For the norm-type functions the minimal-norm subgradient is returned at
    /// kinks; for indicators the zero element of the normal cone.
    pub fn gradient(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        if !self.eval_domain_ok(x) {
            return None;
        }
        Some(match self {
            ConvexFn::Zero { dim } => DVector::zeros(*dim),
            ConvexFn::Quadratic(q) => &q.hess * x + &q.lin,
            ConvexFn::QuadraticDual(q) => &q.pinv * (x - &q.lin),
            ConvexFn::Power { exponent, .. } => {
                let n = x.norm();
                if n == 0.0 {
                    DVector::zeros(x.len())
                } else {
                    x * n.powf(exponent - 2.0)
                }
            }
            ConvexFn::SeparablePower { exponent, .. } => {
                x.map(|v| if v == 0.0 { 0.0 } else { v.abs().powf(exponent - 1.0).copysign(v) })
            }
            ConvexFn::Linear { coeff } => coeff.clone(),
            ConvexFn::Indicator { point } => DVector::zeros(point.len()),
            ConvexFn::BoxIndicator { dim, .. } => DVector::zeros(*dim),
            ConvexFn::L1 { weight, .. } => {
                x.map(|v| if v == 0.0 { 0.0 } else { weight.copysign(v) })
            }
            ConvexFn::Scaled { weight, inner } => inner.gradient(x)? * *weight,
            ConvexFn::Dilated { factor, inner } => inner.gradient(&(x * *factor))? * *factor,
            ConvexFn::Tilted { inner, shift } => inner.gradient(x)? + shift,
            ConvexFn::Translated { inner, offset } => inner.gradient(&(x - offset))?,
            ConvexFn::Precomposed { inner, map } => map.transpose() * inner.gradient(&(&**map * x))?,
            ConvexFn::Separable { parts } => {
                let mut out = DVector::zeros(x.len());
                let mut at = 0;
                for p in parts {
                    let d = p.dim();
                    let g = p.gradient(&x.rows(at, d).into_owned())?;
                    out.rows_mut(at, d).copy_from(&g);
                    at += d;
                }
                out
            }
            ConvexFn::Sum { terms } => {
                let mut out = DVector::zeros(x.len());
                for t in terms {
                    out += t.gradient(x)?;
                }
                out
            }
            ConvexFn::NumericConjugate { inner } => numeric_sup(inner, x).ok()?.1,
            ConvexFn::GridTable(t) => {
                let (i, _) = t.best(x);
                DVector::from_column_slice(&t.points[i * t.dim..(i + 1) * t.dim])
            }
        })
    }

    fn eval_domain_ok(&self, x: &DVector<f64>) -> bool {
        match self.domain() {
            Domain::Whole => true,
            _ => self.eval(x).is_finite(),
        }
    }

    // ----- duality -----

    /// Closed-form Legendre transform where the catalog allows it.
    ///
    /// Sums without a closed form become [`ConvexFn::NumericConjugate`] when
    /// every term is smooth and at least one is strongly convex.
    pub fn conjugate(&self) -> Result<ConvexFn> {
        Ok(match self {
            ConvexFn::Zero { dim } => ConvexFn::Indicator { point: DVector::zeros(*dim) },
            ConvexFn::Quadratic(q) => {
                if q.is_definite() {
                    let lin = -(&q.pinv * &q.lin);
                    let c = 0.5 * q.lin.dot(&(&q.pinv * &q.lin)) - q.constant;
                    ConvexFn::quadratic(q.pinv.clone(), lin, c)?
                } else {
                    ConvexFn::QuadraticDual(q.clone())
                }
            }
            ConvexFn::QuadraticDual(q) => ConvexFn::Quadratic(q.clone()),
            ConvexFn::Power { dim, exponent } => ConvexFn::Power {
                dim: *dim,
                exponent: exponent / (exponent - 1.0),
            },
            ConvexFn::SeparablePower { dim, exponent } => ConvexFn::SeparablePower {
                dim: *dim,
                exponent: exponent / (exponent - 1.0),
            },
            ConvexFn::Linear { coeff } => ConvexFn::Indicator { point: coeff.clone() },
            ConvexFn::Indicator { point } => ConvexFn::Linear { coeff: point.clone() },
            ConvexFn::BoxIndicator { dim, radius } => ConvexFn::L1 { dim: *dim, weight: *radius },
            ConvexFn::L1 { dim, weight } => ConvexFn::BoxIndicator { dim: *dim, radius: *weight },
            ConvexFn::Scaled { weight, inner } => ConvexFn::Scaled {
                weight: *weight,
                inner: Box::new(ConvexFn::Dilated {
                    factor: 1.0 / weight,
                    inner: Box::new(inner.conjugate()?),
                }),
            },
            ConvexFn::Dilated { factor, inner } => ConvexFn::Dilated {
                factor: 1.0 / factor,
                inner: Box::new(inner.conjugate()?),
            },
            ConvexFn::Tilted { inner, shift } => ConvexFn::Translated {
                inner: Box::new(inner.conjugate()?),
                offset: shift.clone(),
            },
            ConvexFn::Translated { inner, offset } => ConvexFn::Tilted {
                inner: Box::new(inner.conjugate()?),
                shift: offset.clone(),
            },
            ConvexFn::Precomposed { inner, map } => {
                if !map.is_square() {
                    return Err(Error::Unsupported("transform of a non-square precomposition".into()));
                }
                let inv = (**map)
                    .clone()
                    .try_inverse()
                    .ok_or_else(|| Error::Singular("precomposition map".into()))?;
                ConvexFn::Precomposed {
                    inner: Box::new(inner.conjugate()?),
                    map: Arc::new(inv.transpose()),
                }
            }
            ConvexFn::Separable { parts } => ConvexFn::Separable {
                parts: parts.iter().map(|p| p.conjugate()).collect::<Result<_>>()?,
            },
            ConvexFn::Sum { terms } => return sum_conjugate(terms),
            ConvexFn::NumericConjugate { inner } => (**inner).clone(),
            ConvexFn::GridTable(_) => {
                return Err(Error::Unsupported("transform of a tabulated conjugate".into()))
            }
        })
    }

    /// `f(x) + f*(p) - <x, p>`, nonnegative by Fenchel-Young.
    pub fn fenchel_young(&self, conj: &ConvexFn, x: &DVector<f64>, p: &DVector<f64>) -> Extended {
        (self.eval(x) + conj.eval(p)).plus(-x.dot(p))
    }

    // ----- proximal map -----

    /// `argmin_x f(x) + |x - v|^2 / (2 lambda)`.
    pub fn prox(&self, v: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
        if !(lambda > 0.0) {
            return Err(Error::Parameter("prox parameter must be positive".into()));
        }
        check_dim(self.dim(), v.len())?;
        Ok(match self {
            ConvexFn::Zero { .. } => v.clone(),
            ConvexFn::Quadratic(q) => {
                let n = v.len();
                let m = DMatrix::<f64>::identity(n, n) + &q.hess * lambda;
                let rhs = v - &q.lin * lambda;
                m.cholesky()
                    .ok_or_else(|| Error::Singular("prox system".into()))?
                    .solve(&rhs)
            }
            ConvexFn::Power { exponent, .. } => {
                let n = v.norm();
                if n == 0.0 {
                    v.clone()
                } else {
                    v * (scalar_power_prox(n, lambda, *exponent) / n)
                }
            }
            ConvexFn::SeparablePower { exponent, .. } => {
                v.map(|c| scalar_power_prox(c, lambda, *exponent))
            }
            ConvexFn::Linear { coeff } => v - coeff * lambda,
            ConvexFn::Indicator { point } => point.clone(),
            ConvexFn::BoxIndicator { radius, .. } => v.map(|c| c.clamp(-radius, *radius)),
            ConvexFn::L1 { weight, .. } => {
                let t = lambda * weight;
                v.map(|c| c.signum() * (c.abs() - t).max(0.0))
            }
            ConvexFn::Scaled { weight, inner } => inner.prox(v, lambda * weight)?,
            ConvexFn::Dilated { factor, inner } => {
                inner.prox(&(v * *factor), lambda * factor * factor)? / *factor
            }
            ConvexFn::Tilted { inner, shift } => inner.prox(&(v - shift * lambda), lambda)?,
            ConvexFn::Translated { inner, offset } => inner.prox(&(v - offset), lambda)? + offset,
            ConvexFn::Separable { parts } => {
                let mut out = DVector::zeros(v.len());
                let mut at = 0;
                for p in parts {
                    let d = p.dim();
                    let r = p.prox(&v.rows(at, d).into_owned(), lambda)?;
                    out.rows_mut(at, d).copy_from(&r);
                    at += d;
                }
                out
            }
            ConvexFn::QuadraticDual(_) | ConvexFn::NumericConjugate { .. } => {
                // Moreau: prox_{lambda f*}(v) = v - lambda prox_{f/lambda}(v / lambda).
                let primal = self.conjugate()?;
                let inner = primal.prox(&(v / lambda), 1.0 / lambda)?;
                v - inner * lambda
            }
            ConvexFn::Precomposed { .. } | ConvexFn::Sum { .. } => {
                if !self.is_smooth() {
                    return Err(Error::Unsupported("prox of a nonsmooth composite".into()));
                }
                let opts = LbfgsOptions {
                    gradient_tolerance: 1e-13 * (1.0 + v.amax() / lambda),
                    max_iterations: 5000,
                    ..Default::default()
                };
                let f = |x: &DVector<f64>| {
                    let val = self.eval(x).finite()?;
                    let d = x - v;
                    Some((val + d.norm_squared() / (2.0 * lambda), self.gradient(x)? + d / lambda))
                };
                lbfgs(f, v.clone(), &opts, None)?.x
            }
            ConvexFn::GridTable(_) => {
                return Err(Error::Unsupported("prox of a tabulated conjugate".into()))
            }
        })
    }
}

fn sum_conjugate(terms: &[ConvexFn]) -> Result<ConvexFn> {
    let d = terms[0].dim();
    let mut flat = Vec::new();
    let mut stack: Vec<&ConvexFn> = terms.iter().rev().collect();
    while let Some(t) = stack.pop() {
        match t {
            ConvexFn::Sum { terms } => stack.extend(terms.iter().rev()),
            other => flat.push(other),
        }
    }
    let mut hess = DMatrix::<f64>::zeros(d, d);
    let mut lin = DVector::<f64>::zeros(d);
    let mut constant = 0.0;
    let mut has_quad = false;
    let mut rest = Vec::new();
    for t in flat {
        match t {
            ConvexFn::Zero { .. } => {}
            ConvexFn::Linear { coeff } => lin += coeff,
            ConvexFn::Quadratic(q) => {
                hess += &q.hess;
                lin += &q.lin;
                constant += q.constant;
                has_quad = true;
            }
            other => rest.push(other.clone()),
        }
    }
    match (rest.len(), has_quad) {
        (0, true) => ConvexFn::quadratic(hess, lin, constant)?.conjugate(),
        (0, false) => Ok(ConvexFn::Indicator { point: lin }),
        (1, false) => {
            let base = rest.pop().expect("one term").conjugate()?;
            Ok(ConvexFn::Translated { inner: Box::new(base), offset: lin })
        }
        _ => {
            let primal = ConvexFn::Sum { terms: terms.to_vec() };
            if !primal.is_strongly_convex() {
                return Err(Error::Unsupported(
                    "transform of a sum without a strongly convex smooth term".into(),
                ));
            }
            Ok(ConvexFn::NumericConjugate { inner: Box::new(primal) })
        }
    }
}

/// `sup_x <x, p> - f(x)` and its maximiser, by quasi-Newton minimisation.
fn numeric_sup(f: &ConvexFn, p: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let opts = LbfgsOptions {
        gradient_tolerance: 1e-12 * (1.0 + p.amax()),
        max_iterations: 10_000,
        ..Default::default()
    };
    let obj = |x: &DVector<f64>| {
        let v = f.eval(x).finite()?;
        Some((v - x.dot(p), f.gradient(x)? - p))
    };
    let out = lbfgs(obj, DVector::zeros(p.len()), &opts, None)?;
    if out.gradient.amax() > 1e-7 * (1.0 + p.amax()) {
        return Err(Error::Inner(format!(
            "conjugate maximisation stopped with gradient {:.2e}",
            out.gradient.amax()
        )));
    }
    Ok((-out.value, out.x))
}

/// Tabulated transform `max_{x in grid} <x, p> - f(x)` over a box grid.
///
/// The table underestimates `f*` and increases monotonically under nested
/// refinement. Only dimensions up to three are accepted.
pub fn numeric_conjugate(
    f: &ConvexFn,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    resolution: usize,
) -> Result<ConvexFn> {
    let d = f.dim();
    if d > 3 {
        return Err(Error::Unsupported(format!("grid transform in dimension {d} > 3")));
    }
    check_dim(d, lower.len())?;
    check_dim(d, upper.len())?;
    if resolution < 2 {
        return Err(Error::Parameter("grid resolution must be at least 2".into()));
    }
    let total = resolution.pow(d as u32);
    let mut points = Vec::with_capacity(total * d);
    let mut values = Vec::with_capacity(total);
    let mut x = DVector::zeros(d);
    for idx in 0..total {
        let mut rem = idx;
        for k in 0..d {
            let i = rem % resolution;
            rem /= resolution;
            let s = i as f64 / (resolution - 1) as f64;
            x[k] = lower[k] + s * (upper[k] - lower[k]);
        }
        if let Extended::Finite(v) = f.eval(&x) {
            points.extend(x.iter());
            values.push(v);
        }
    }
    Ok(ConvexFn::GridTable(Arc::new(GridTable { dim: d, points, values })))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn power_four_transform() {
        let f = ConvexFn::power(1, 4.0).unwrap();
        let c = f.conjugate().unwrap();
        assert!((c.eval(&v(&[8.0])).finite().unwrap() - 0.75 * 8f64.powf(4.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_and_indicator() {
        let c = ConvexFn::zero(2).conjugate().unwrap();
        assert_eq!(c.eval(&v(&[0.0, 0.0])), Extended::Finite(0.0));
        assert_eq!(c.eval(&v(&[1e-3, 0.0])), Extended::Infinite);
    }

    #[test]
    fn quadratic_with_tilt() {
        let f = ConvexFn::quadratic(DMatrix::identity(1, 1), v(&[3.0]), 0.0).unwrap();
        let c = f.conjugate().unwrap();
        for p in [-2.0, 0.0, 5.0] {
            let want = 0.5 * (p - 3.0f64).powi(2);
            assert!((c.eval(&v(&[p])).finite().unwrap() - want).abs() < 1e-13);
        }
    }

    #[test]
    fn l1_prox() {
        let f = ConvexFn::l1(3, 1.0).unwrap();
        let r = f.prox(&v(&[1.5, -0.2, 0.0]), 0.5).unwrap();
        assert_eq!(r, v(&[1.0, 0.0, 0.0]));
    }

    #[test]
    fn singular_quadratic_dual() {
        let h = DMatrix::from_diagonal(&v(&[2.0, 0.0]));
        let f = ConvexFn::quadratic(h, v(&[0.0, 1.0]), 0.0).unwrap();
        let c = f.conjugate().unwrap();
        assert_eq!(c.eval(&v(&[1.0, 0.5])), Extended::Infinite);
        assert!((c.eval(&v(&[4.0, 1.0])).finite().unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn numeric_sum_transform() {
        let f = ConvexFn::sum(vec![
            ConvexFn::isotropic(2, 1.0).unwrap(),
            ConvexFn::power(2, 4.0).unwrap(),
        ])
        .unwrap();
        let c = f.conjugate().unwrap();
        assert!(matches!(c, ConvexFn::NumericConjugate { .. }));
        let p = v(&[0.7, -1.3]);
        let x = c.gradient(&p).unwrap();
        // Maximiser satisfies p = grad f(x).
        assert!((f.gradient(&x).unwrap() - &p).amax() < 1e-9);
        let fy = f.fenchel_young(&c, &x, &p).finite().unwrap();
        assert!(fy.abs() < 1e-10);
    }

    #[test]
    fn grid_table_under_estimates() {
        let f = ConvexFn::power(1, 4.0).unwrap();
        let exact = f.conjugate().unwrap();
        let coarse = numeric_conjugate(&f, &v(&[-3.0]), &v(&[3.0]), 61).unwrap();
        let fine = numeric_conjugate(&f, &v(&[-3.0]), &v(&[3.0]), 121).unwrap();
        for p in [-5.0, -1.0, 0.3, 2.0, 8.0] {
            let e = exact.eval(&v(&[p])).finite().unwrap();
            let a = coarse.eval(&v(&[p])).finite().unwrap();
            let b = fine.eval(&v(&[p])).finite().unwrap();
            assert!(a <= b + 1e-15 && b <= e + 1e-12);
            assert!(e - b < 1e-2);
        }
    }

    #[test]
    fn rejects_high_dimensional_grid() {
        let f = ConvexFn::zero(4);
        let z = DVector::zeros(4);
        assert!(matches!(
            numeric_conjugate(&f, &z, &z, 3),
            Err(Error::Unsupported(_))
        ));
    }
}
