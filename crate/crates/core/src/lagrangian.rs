//! Time-dependent antiselfdual (ASD) Lagrangians on `[0, T] x H x H`.
//!
//! A [`Lagrangian`] is an expression tree whose leaves are convex pairs
//! `phi(x) + phi*(-p)` and whose inner nodes are the operations that keep the
//! ASD property: skew shifts, unitary compositions, scalings, exponential
//! weights and inf-convolution regularisations. Values are extended reals and
//! gradients follow the tree by the chain rule.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::convex::{ConvexFn, Extended};
use crate::error::{check_dim, Error, Result};
use crate::hilbert::{Semigroup, Space};
use crate::oracle;
use crate::solver::lbfgs::{lbfgs, LbfgsOptions};

type ValueFn = dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> Extended + Send + Sync;
type GradFn = dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)>
    + Send
    + Sync;

/// Which arguments an inf-convolution regularisation smooths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegVariant {
    /// Smooths the state argument.
    State,
    /// Smooths the momentum argument.
    Momentum,
    /// Smooths both.
    Both,
}

/// A quadratic function `z^T Q z / 2 + <lin, z> + constant` of `z = (x, p)`.
#[derive(Clone, Debug)]
pub struct QuadForm {
    pub hess: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub constant: f64,
}

impl QuadForm {
    fn eval(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hess * z)) + self.lin.dot(z) + self.constant
    }

    /// `s * Q(M z)`.
    fn pullback(&self, m: &DMatrix<f64>, s: f64) -> QuadForm {
        QuadForm {
            hess: m.transpose() * &self.hess * m * s,
            lin: m.transpose() * &self.lin * s,
            constant: self.constant * s,
        }
    }

    /// Legendre transform evaluated at `w`; infinite off the range of `Q`.
    pub fn conjugate_at(&self, w: &DVector<f64>) -> Extended {
        let r = w - &self.lin;
        let sym = (&self.hess + self.hess.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let cut = 1e-12 * (1.0 + eig.eigenvalues.amax());
        let mut val = -self.constant;
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            let c = eig.eigenvectors.column(k).dot(&r);
            if lam > cut {
                val += 0.5 * c * c / lam;
            } else if c.abs() > 1e-9 * (1.0 + r.amax()) {
                return Extended::Infinite;
            }
        }
        Extended::Finite(val)
    }
}

#[derive(Clone)]
enum Node {
    ConvexPair { phi: ConvexFn, phi_conj: ConvexFn },
    SkewShift { base: Lagrangian, shift: Arc<DMatrix<f64>> },
    Unitary { base: Lagrangian, state: Semigroup, momentum: Semigroup },
    Scale { base: Lagrangian, factor: f64 },
    ExpScale { base: Lagrangian, rate: f64 },
    InfConv { base: Lagrangian, lambda: f64, variant: RegVariant },
    Custom { value: Arc<ValueFn>, grad: Option<Arc<GradFn>>, label: String },
}

/// An ASD Lagrangian, cheap to clone.
#[derive(Clone)]
pub struct Lagrangian {
    node: Arc<Node>,
    dim: usize,
}

impl fmt::Debug for Lagrangian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Lagrangian({})", self.describe())
    }
}

impl Lagrangian {
    fn wrap(node: Node, dim: usize) -> Self {
        Lagrangian { node: Arc::new(node), dim }
    }

    // ----- constructors -----

    /// `L(x, p) = phi(x) + phi*(-p)`.
    pub fn from_convex_pair(phi: ConvexFn) -> Result<Self> {
        let phi_conj = phi.conjugate()?;
        let dim = phi.dim();
        Ok(Lagrangian::wrap(Node::ConvexPair { phi, phi_conj }, dim))
    }

    /// `M(x, p) = L(x, shift x + p)` for a skew-adjoint `shift`.
    pub fn skew_shift(&self, shift: DMatrix<f64>) -> Result<Self> {
        check_dim(self.dim, shift.nrows())?;
        let defect = Space::euclidean(self.dim).skew_defect(&shift)?;
        if defect > 1e-9 {
            return Err(Error::NotSkew { defect });
        }
        Ok(Lagrangian::wrap(
            Node::SkewShift { base: self.clone(), shift: Arc::new(shift) },
            self.dim,
        ))
    }

    /// `L_S(t, x, p) = L(t, S_t x, Sbar_t p)`; `Sbar` defaults to `S`.
    pub fn unitary_compose(&self, state: Semigroup, momentum: Option<Semigroup>) -> Result<Self> {
        check_dim(self.dim, state.dim())?;
        let space = Space::euclidean(self.dim);
        for g in std::iter::once(&state).chain(momentum.iter()) {
            let defect = space.skew_defect(g.generator())?;
            if defect > 1e-9 {
                return Err(Error::NotSkew { defect });
            }
        }
        let momentum = momentum.unwrap_or_else(|| state.clone());
        Ok(Lagrangian::wrap(
            Node::Unitary { base: self.clone(), state, momentum },
            self.dim,
        ))
    }

    /// `L_mu(x, p) = mu^{-2} L(mu x, mu p)`.
    pub fn scale(&self, factor: f64) -> Result<Self> {
        if factor == 0.0 || !factor.is_finite() {
            return Err(Error::Parameter("scale factor must be nonzero".into()));
        }
        Ok(Lagrangian::wrap(Node::Scale { base: self.clone(), factor }, self.dim))
    }

    /// `e^{-2 w t} L(t, e^{w t} x, e^{w t} p)`.
    pub fn exp_scale(&self, rate: f64) -> Result<Self> {
        if !rate.is_finite() {
            return Err(Error::Parameter("weight must be finite".into()));
        }
        Ok(Lagrangian::wrap(Node::ExpScale { base: self.clone(), rate }, self.dim))
    }

    /// `e^{-2wt} [phi(e^{wt} S_t x) + phi*(-e^{wt} S_t p)]`.
    pub fn exp_weight(phi: ConvexFn, rate: f64, group: Option<Semigroup>) -> Result<Self> {
        let mut l = Lagrangian::from_convex_pair(phi)?;
        if let Some(g) = group {
            l = l.unitary_compose(g, None)?;
        }
        l.exp_scale(rate)
    }

    /// `e^{-2wt} [Phi(e^{wt} S_t x) + Phi*(-e^{wt} A_skew S_t x - e^{wt} Sbar_t p)]`.
    pub fn mixed_weight(
        phi: ConvexFn,
        skew: DMatrix<f64>,
        rate: f64,
        group: Option<Semigroup>,
        momentum_group: Option<Semigroup>,
    ) -> Result<Self> {
        let mut l = Lagrangian::from_convex_pair(phi)?.skew_shift(skew)?;
        match (group, momentum_group) {
            (Some(s), sbar) => l = l.unitary_compose(s, sbar)?,
            (None, Some(_)) => {
                return Err(Error::Parameter("momentum group given without state group".into()))
            }
            (None, None) => {}
        }
        l.exp_scale(rate)
    }

    /// Inf-convolution regularisation with parameter `lambda > 0`.
    pub fn infconv_reg(&self, lambda: f64, variant: RegVariant) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Parameter("regularisation parameter must be positive".into()));
        }
        Ok(Lagrangian::wrap(
            Node::InfConv { base: self.clone(), lambda, variant },
            self.dim,
        ))
    }

    /// A Lagrangian given by closures. The ASD property is not checked; use
    /// [`asd_check`].
    pub fn custom<F>(dim: usize, label: &str, value: F) -> Self
    where
        F: Fn(f64, &DVector<f64>, &DVector<f64>) -> Extended + Send + Sync + 'static,
    {
        Lagrangian::wrap(
            Node::Custom { value: Arc::new(value), grad: None, label: label.to_string() },
            dim,
        )
    }

    /// Like [`Lagrangian::custom`] with an explicit gradient.
    pub fn custom_with_gradient<F, G>(dim: usize, label: &str, value: F, grad: G) -> Self
    where
        F: Fn(f64, &DVector<f64>, &DVector<f64>) -> Extended + Send + Sync + 'static,
        G: Fn(f64, &DVector<f64>, &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)>
            + Send
            + Sync
            + 'static,
    {
        Lagrangian::wrap(
            Node::Custom {
                value: Arc::new(value),
                grad: Some(Arc::new(grad)),
                label: label.to_string(),
            },
            dim,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Provenance of the tree, e.g. `exp_scale(unitary(convex_pair))`.
    pub fn describe(&self) -> String {
        match &*self.node {
            Node::ConvexPair { .. } => "convex_pair".into(),
            Node::SkewShift { base, .. } => format!("skew_shift({})", base.describe()),
            Node::Unitary { base, .. } => format!("unitary({})", base.describe()),
            Node::Scale { base, factor } => format!("scale[{factor}]({})", base.describe()),
            Node::ExpScale { base, rate } => format!("exp_scale[{rate}]({})", base.describe()),
            Node::InfConv { base, lambda, variant } => {
                format!("infconv[{variant:?},{lambda}]({})", base.describe())
            }
            Node::Custom { label, .. } => format!("custom[{label}]"),
        }
    }

    /// The convex function of a leaf convex pair, when the tree is one.
    pub fn convex_pair(&self) -> Option<(&ConvexFn, &ConvexFn)> {
        match &*self.node {
            Node::ConvexPair { phi, phi_conj } => Some((phi, phi_conj)),
            _ => None,
        }
    }

    // ----- evaluation -----

    pub fn eval(&self, t: f64, x: &DVector<f64>, p: &DVector<f64>) -> Extended {
        match &*self.node {
            Node::ConvexPair { phi, phi_conj } => phi.eval(x) + phi_conj.eval(&(-p)),
            Node::SkewShift { base, shift } => base.eval(t, x, &(&**shift * x + p)),
            Node::Unitary { base, state, momentum } => {
                base.eval(t, &state.apply(t, x), &momentum.apply(t, p))
            }
            Node::Scale { base, factor } => {
                base.eval(t, &(x * *factor), &(p * *factor)).scale(factor.powi(-2))
            }
            Node::ExpScale { base, rate } => {
                let mu = (rate * t).exp();
                base.eval(t, &(x * mu), &(p * mu)).scale(mu.powi(-2))
            }
            Node::InfConv { base, lambda, variant } => {
                if let Some(q) = self.quadratic_form(t) {
                    let mut z = DVector::zeros(2 * self.dim);
                    z.rows_mut(0, self.dim).copy_from(x);
                    z.rows_mut(self.dim, self.dim).copy_from(p);
                    return Extended::Finite(q.eval(&z));
                }
                match infconv_inner(base, *lambda, *variant, t, x, p) {
                    Ok((v, _, _)) => Extended::Finite(v),
                    Err(_) => Extended::Infinite,
                }
            }
            Node::Custom { value, .. } => value(t, x, p),
        }
    }

    /// Gradient `(dL/dx, dL/dp)`; `None` where `L` is infinite or not differentiable.
    pub fn gradient(
        &self,
        t: f64,
        x: &DVector<f64>,
        p: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        match &*self.node {
            Node::ConvexPair { phi, phi_conj } => {
                let gx = phi.gradient(x)?;
                let gp = -phi_conj.gradient(&(-p))?;
                Some((gx, gp))
            }
            Node::SkewShift { base, shift } => {
                let (gx, gp) = base.gradient(t, x, &(&**shift * x + p))?;
                Some((gx + shift.transpose() * &gp, gp))
            }
            Node::Unitary { base, state, momentum } => {
                let s = state.at(t);
                let sb = momentum.at(t);
                let (gx, gp) = base.gradient(t, &(&*s * x), &(&*sb * p))?;
                Some((s.transpose() * gx, sb.transpose() * gp))
            }
            Node::Scale { base, factor } => {
                let (gx, gp) = base.gradient(t, &(x * *factor), &(p * *factor))?;
                Some((gx / *factor, gp / *factor))
            }
            Node::ExpScale { base, rate } => {
                let mu = (rate * t).exp();
                let (gx, gp) = base.gradient(t, &(x * mu), &(p * mu))?;
                Some((gx / mu, gp / mu))
            }
            Node::InfConv { base, lambda, variant } => {
                if let Some(q) = self.quadratic_form(t) {
                    let d = self.dim;
                    let mut z = DVector::zeros(2 * d);
                    z.rows_mut(0, d).copy_from(x);
                    z.rows_mut(d, d).copy_from(p);
                    let g = &q.hess * z + &q.lin;
                    return Some((g.rows(0, d).into_owned(), g.rows(d, d).into_owned()));
                }
                let (_, gx, gp) = infconv_inner(base, *lambda, *variant, t, x, p).ok()?;
                Some((gx, gp))
            }
            Node::Custom { grad, value, .. } => match grad {
                Some(g) => g(t, x, p),
                None => {
                    value(t, x, p).finite()?;
                    Some(oracle::fd_gradient_pair(|a, b| value(t, a, b).finite(), x, p, 1e-6)?)
                }
            },
        }
    }

    /// The Lagrangian at time `t` as an explicit quadratic form, when every
    /// node of the tree preserves quadratic structure.
    pub fn quadratic_form(&self, t: f64) -> Option<QuadForm> {
        let d = self.dim;
        match &*self.node {
            Node::ConvexPair { phi, phi_conj } => match (phi, phi_conj) {
                (ConvexFn::Quadratic(a), ConvexFn::Quadratic(b)) => {
                    let mut hess = DMatrix::zeros(2 * d, 2 * d);
                    hess.view_mut((0, 0), (d, d)).copy_from(&a.hess);
                    hess.view_mut((d, d), (d, d)).copy_from(&b.hess);
                    let mut lin = DVector::zeros(2 * d);
                    lin.rows_mut(0, d).copy_from(&a.lin);
                    lin.rows_mut(d, d).copy_from(&(-&b.lin));
                    Some(QuadForm { hess, lin, constant: a.constant + b.constant })
                }
                _ => None,
            },
            Node::SkewShift { base, shift } => {
                let q = base.quadratic_form(t)?;
                let mut m = DMatrix::<f64>::identity(2 * d, 2 * d);
                m.view_mut((d, 0), (d, d)).copy_from(&**shift);
                Some(q.pullback(&m, 1.0))
            }
            Node::Unitary { base, state, momentum } => {
                let q = base.quadratic_form(t)?;
                let m = crate::hilbert::block_diag(&state.at(t), &momentum.at(t));
                Some(q.pullback(&m, 1.0))
            }
            Node::Scale { base, factor } => {
                let q = base.quadratic_form(t)?;
                let m = DMatrix::<f64>::identity(2 * d, 2 * d) * *factor;
                Some(q.pullback(&m, factor.powi(-2)))
            }
            Node::ExpScale { base, rate } => {
                let q = base.quadratic_form(t)?;
                let mu = (rate * t).exp();
                let m = DMatrix::<f64>::identity(2 * d, 2 * d) * mu;
                Some(q.pullback(&m, mu.powi(-2)))
            }
            Node::InfConv { base, lambda, variant } => {
                let q = base.quadratic_form(t)?;
                infconv_quadratic(&q, d, *lambda, *variant)
            }
            Node::Custom { .. } => None,
        }
    }

    /// `L(t, x, -p) - <x, p>`: nonnegative, zero iff `p` lies in the vector field at `x`.
    pub fn fenchel_gap(&self, t: f64, x: &DVector<f64>, p: &DVector<f64>) -> Extended {
        self.eval(t, x, &(-p)).plus(-x.dot(p))
    }

    /// An element of the vector field `{p : L(t, x, -p) = <x, p>}`, found by
    /// minimising the Fenchel gap over `p`.
    pub fn vector_field(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim, x.len())?;
        let seed = match &*self.node {
            Node::ConvexPair { phi, .. } => phi.gradient(x).unwrap_or_else(|| DVector::zeros(self.dim)),
            _ => DVector::zeros(self.dim),
        };
        let obj = |p: &DVector<f64>| {
            let v = self.fenchel_gap(t, x, p).finite()?;
            let (_, gp) = self.gradient(t, x, &(-p))?;
            Some((v, -gp - x))
        };
        let opts = LbfgsOptions {
            gradient_tolerance: 1e-12 * (1.0 + x.amax()),
            max_iterations: 5000,
            ..Default::default()
        };
        let out = match lbfgs(obj, seed, &opts, None) {
            Ok(o) => o,
            Err(_) => return Err(Error::EmptyField { gap: f64::NAN }),
        };
        let scale = 1.0 + x.norm() * out.x.norm();
        if out.value > 1e-8 * scale {
            return Err(Error::EmptyField { gap: out.value });
        }
        Ok(out.x)
    }
}

/// Schur-complement form of the regularisations of a quadratic Lagrangian.
fn infconv_quadratic(q: &QuadForm, d: usize, lambda: f64, variant: RegVariant) -> Option<QuadForm> {
    // Variables: (x, r, inner...). Base arguments are a selection of them.
    let n_inner = match variant {
        RegVariant::State | RegVariant::Momentum => d,
        RegVariant::Both => 2 * d,
    };
    let n = 2 * d + n_inner;
    let mut sel = DMatrix::<f64>::zeros(2 * d, n);
    let id = DMatrix::<f64>::identity(d, d);
    let (x0, r0, i0) = (0, d, 2 * d);
    let mut extra = DMatrix::<f64>::zeros(n, n);
    let add_diff = |a: usize, b: usize, w: f64, m: &mut DMatrix<f64>| {
        // w/2 |v_a - v_b|^2
        for k in 0..d {
            m[(a + k, a + k)] += w;
            m[(b + k, b + k)] += w;
            m[(a + k, b + k)] -= w;
            m[(b + k, a + k)] -= w;
        }
    };
    let add_sq = |a: usize, w: f64, m: &mut DMatrix<f64>| {
        for k in 0..d {
            m[(a + k, a + k)] += w;
        }
    };
    match variant {
        RegVariant::State => {
            sel.view_mut((0, i0), (d, d)).copy_from(&id);
            sel.view_mut((d, r0), (d, d)).copy_from(&id);
            add_diff(x0, i0, 1.0 / lambda, &mut extra);
            add_sq(r0, lambda, &mut extra);
        }
        RegVariant::Momentum => {
            sel.view_mut((0, x0), (d, d)).copy_from(&id);
            sel.view_mut((d, i0), (d, d)).copy_from(&id);
            add_diff(r0, i0, 1.0 / lambda, &mut extra);
            add_sq(x0, lambda, &mut extra);
        }
        RegVariant::Both => {
            let (y0, s0) = (i0, i0 + d);
            sel.view_mut((0, y0), (d, d)).copy_from(&id);
            sel.view_mut((d, s0), (d, d)).copy_from(&id);
            add_diff(x0, y0, 1.0 / lambda, &mut extra);
            add_sq(r0, lambda, &mut extra);
            add_diff(s0, r0, 1.0 / lambda, &mut extra);
            add_sq(y0, lambda, &mut extra);
        }
    }
    let full = sel.transpose() * &q.hess * &sel + extra;
    let lin = sel.transpose() * &q.lin;
    let a_zz = full.view((0, 0), (2 * d, 2 * d)).into_owned();
    let a_zw = full.view((0, 2 * d), (2 * d, n_inner)).into_owned();
    let a_ww = full.view((2 * d, 2 * d), (n_inner, n_inner)).into_owned();
    let b_z = lin.rows(0, 2 * d).into_owned();
    let b_w = lin.rows(2 * d, n_inner).into_owned();
    let chol = a_ww.cholesky()?;
    let k = chol.solve(&a_zw.transpose());
    let kb = chol.solve(&b_w);
    Some(QuadForm {
        hess: a_zz - &a_zw * k,
        lin: b_z - &a_zw * &kb,
        constant: q.constant - 0.5 * b_w.dot(&kb),
    })
}

/// Value and gradient of a regularisation by inner minimisation.
fn infconv_inner(
    base: &Lagrangian,
    lambda: f64,
    variant: RegVariant,
    t: f64,
    x: &DVector<f64>,
    r: &DVector<f64>,
) -> Result<(f64, DVector<f64>, DVector<f64>)> {
    let d = base.dim();
    let opts = LbfgsOptions {
        gradient_tolerance: 1e-12 * (1.0 + x.amax() + r.amax()),
        max_iterations: 5000,
        ..Default::default()
    };
    match variant {
        RegVariant::State => {
            let obj = |y: &DVector<f64>| {
                let v = base.eval(t, y, r).finite()?;
                let (gx, _) = base.gradient(t, y, r)?;
                let diff = y - x;
                Some((v + diff.norm_squared() / (2.0 * lambda), gx + diff / lambda))
            };
            let out = lbfgs(obj, x.clone(), &opts, None)?;
            let y = out.x;
            let (_, gp) = base
                .gradient(t, &y, r)
                .ok_or_else(|| Error::Inner("base gradient".into()))?;
            let val = out.value + 0.5 * lambda * r.norm_squared();
            Ok((val, (x - &y) / lambda, gp + r * lambda))
        }
        RegVariant::Momentum => {
            let obj = |s: &DVector<f64>| {
                let v = base.eval(t, x, s).finite()?;
                let (_, gp) = base.gradient(t, x, s)?;
                let diff = s - r;
                Some((v + diff.norm_squared() / (2.0 * lambda), gp + diff / lambda))
            };
            let out = lbfgs(obj, r.clone(), &opts, None)?;
            let s = out.x;
            let (gx, _) = base
                .gradient(t, x, &s)
                .ok_or_else(|| Error::Inner("base gradient".into()))?;
            let val = out.value + 0.5 * lambda * x.norm_squared();
            Ok((val, gx + x * lambda, (r - &s) / lambda))
        }
        RegVariant::Both => {
            let obj = |w: &DVector<f64>| {
                let y = w.rows(0, d).into_owned();
                let s = w.rows(d, d).into_owned();
                let v = base.eval(t, &y, &s).finite()?;
                let (gx, gp) = base.gradient(t, &y, &s)?;
                let dy = &y - x;
                let ds = &s - r;
                let val = v
                    + dy.norm_squared() / (2.0 * lambda)
                    + ds.norm_squared() / (2.0 * lambda)
                    + 0.5 * lambda * y.norm_squared();
                let mut g = DVector::zeros(2 * d);
                g.rows_mut(0, d).copy_from(&(gx + dy / lambda + &y * lambda));
                g.rows_mut(d, d).copy_from(&(gp + ds / lambda));
                Some((val, g))
            };
            let mut w0 = DVector::zeros(2 * d);
            w0.rows_mut(0, d).copy_from(x);
            w0.rows_mut(d, d).copy_from(r);
            let out = lbfgs(obj, w0, &opts, None)?;
            let y = out.x.rows(0, d).into_owned();
            let s = out.x.rows(d, d).into_owned();
            let val = out.value + 0.5 * lambda * r.norm_squared();
            Ok((val, (x - y) / lambda, r * lambda + (r - s) / lambda))
        }
    }
}

/// One sample of an ASD check: time, state, momentum.
pub type AsdSample = (f64, DVector<f64>, DVector<f64>);

#[derive(Clone, Debug, serde::Serialize)]
pub struct AsdReport {
    /// `max |L*(p, x) - L(-x, -p)|` over the samples.
    pub max_deviation: f64,
    /// `min L(x, p) + <x, p>` over the samples.
    pub min_gap: f64,
    pub samples: usize,
    pub method: &'static str,
    pub passed: bool,
}

/// Sampled test of `L*(t; p, x) = L(t, -x, -p)`.
///
/// The transform is analytic for quadratic trees and otherwise a zooming grid
/// supremum over `(x, p)`, which needs state dimension at most two.
pub fn asd_check(l: &Lagrangian, samples: &[AsdSample], tol: f64) -> Result<AsdReport> {
    asd_check_with(l, samples, tol, false)
}

/// [`asd_check`] that always takes the grid supremum, even when the
/// analytic transform is available.
pub fn asd_check_grid(l: &Lagrangian, samples: &[AsdSample], tol: f64) -> Result<AsdReport> {
    asd_check_with(l, samples, tol, true)
}

fn asd_check_with(l: &Lagrangian, samples: &[AsdSample], tol: f64, force_grid: bool) -> Result<AsdReport> {
    let d = l.dim();
    let mut max_dev: f64 = 0.0;
    let mut min_gap = f64::INFINITY;
    let mut method = "analytic";
    for (t, x, p) in samples {
        check_dim(d, x.len())?;
        check_dim(d, p.len())?;
        let rhs = l.eval(*t, &(-x), &(-p));
        let mut w = DVector::zeros(2 * d);
        w.rows_mut(0, d).copy_from(p);
        w.rows_mut(d, d).copy_from(x);
        let analytic = if force_grid { None } else { l.quadratic_form(*t) };
        let lhs = match analytic {
            Some(q) => q.conjugate_at(&w),
            None => {
                if d > 2 {
                    return Err(Error::Unsupported(format!(
                        "grid ASD check in state dimension {d} > 2"
                    )));
                }
                method = "grid";
                let radius = 2.0 * (1.0 + x.amax().max(p.amax()));
                let f = |z: &DVector<f64>| {
                    let y = z.rows(0, d).into_owned();
                    let q = z.rows(d, d).into_owned();
                    l.eval(*t, &y, &q).finite().map(|v| y.dot(p) + q.dot(x) - v)
                };
                match oracle::grid_sup(f, &DVector::zeros(2 * d), radius, 1e-9) {
                    Some(v) => Extended::Finite(v),
                    None => Extended::Infinite,
                }
            }
        };
        let dev = match (lhs, rhs) {
            (Extended::Finite(a), Extended::Finite(b)) => (a - b).abs(),
            (Extended::Infinite, Extended::Infinite) => 0.0,
            _ => f64::INFINITY,
        };
        max_dev = max_dev.max(dev);
        if let Extended::Finite(v) = l.eval(*t, x, p) {
            min_gap = min_gap.min(v + x.dot(p));
        }
    }
    Ok(AsdReport {
        max_deviation: max_dev,
        min_gap,
        samples: samples.len(),
        method,
        passed: max_dev <= tol && min_gap >= -1e-9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn convex_pair_value() {
        let l = Lagrangian::from_convex_pair(ConvexFn::isotropic(1, 1.0).unwrap()).unwrap();
        assert_eq!(l.eval(0.0, &v(&[2.0]), &v(&[-3.0])), Extended::Finite(6.5));
        assert!((l.fenchel_gap(0.0, &v(&[2.0]), &v(&[2.0])).finite().unwrap()).abs() < 1e-15);
    }

    #[test]
    fn state_regularisation_closed_form() {
        let l = Lagrangian::from_convex_pair(ConvexFn::isotropic(1, 1.0).unwrap()).unwrap();
        for lam in [0.1, 1.0] {
            let r = l.infconv_reg(lam, RegVariant::State).unwrap();
            let (x, p) = (0.7, -1.9);
            let want = x * x / (2.0 * (1.0 + lam)) + (1.0 + lam) * p * p / 2.0;
            let got = r.eval(0.0, &v(&[x]), &v(&[p])).finite().unwrap();
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn vector_field_of_quadratic() {
        let l = Lagrangian::from_convex_pair(ConvexFn::isotropic(2, 3.0).unwrap()).unwrap();
        let p = l.vector_field(0.0, &v(&[1.0, -2.0])).unwrap();
        assert!((p - v(&[3.0, -6.0])).amax() < 1e-9);
    }
}
