//! Discretized trajectories on `[0, T]` and assembly of the selfdual
//! functionals minimized by the solver.
//!
//! A path is stored as its `N + 1` node values. Each interval contributes
//! `h * L(t, x_k, p_k)` where `x_k` is the state sample (the midpoint average
//! for [`Scheme::Midpoint`], the left node for [`Scheme::Forward`]) and
//! `p_k = (u_{k+1} - u_k) / h`. With the midpoint rule the pairing
//! `sum_k h <x_k, p_k>` telescopes exactly to `(|u_N|^2 - |u_0|^2) / 2`, so the
//! discrete functional keeps the zero-infimum property.
//!
//! Indicator boundary terms are not penalised: the endpoint they constrain is
//! eliminated from the free variables (see [`Endpoint`]).

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::Serialize;

use crate::boundary::{
    boundary_residual, hamiltonian_residual, BoundaryKind, BoundaryLagrangian, HamiltonianBoundary,
    HamiltonianKind,
};
use crate::convex::{ConvexFn, Extended};
use crate::error::{check_dim, Error, Result};
use crate::hilbert::{expm, HamiltonianBlocks, Semigroup, Space};
use crate::lagrangian::Lagrangian;

/// Intervals times dimension above which interval terms are evaluated in parallel.
const PARALLEL_WORK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Midpoint,
    Forward,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Discretization {
    pub horizon: f64,
    pub intervals: usize,
    pub scheme: Scheme,
}

impl Discretization {
    pub fn new(horizon: f64, intervals: usize) -> Result<Self> {
        Self::with_scheme(horizon, intervals, Scheme::Midpoint)
    }

    pub fn with_scheme(horizon: f64, intervals: usize, scheme: Scheme) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Parameter("horizon must be positive".into()));
        }
        if intervals < 2 {
            return Err(Error::Parameter("at least two intervals are required".into()));
        }
        Ok(Discretization { horizon, intervals, scheme })
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.intervals as f64
    }

    pub fn node_time(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.intervals as f64
    }

    pub fn node_times(&self) -> Vec<f64> {
        (0..=self.intervals).map(|k| self.node_time(k)).collect()
    }

    /// Time at which interval `k` is sampled.
    pub fn sample_time(&self, k: usize) -> f64 {
        match self.scheme {
            Scheme::Midpoint => self.horizon * (k as f64 + 0.5) / self.intervals as f64,
            Scheme::Forward => self.node_time(k),
        }
    }

    /// State sample and discrete derivative on interval `k`.
    fn sample(&self, path: &Path, k: usize) -> (DVector<f64>, DVector<f64>) {
        let (a, b) = (&path.nodes[k], &path.nodes[k + 1]);
        let p = (b - a) / self.step();
        let x = match self.scheme {
            Scheme::Midpoint => (a + b) * 0.5,
            Scheme::Forward => a.clone(),
        };
        (x, p)
    }

    /// Adds the pullback of `(gx, gp)` on interval `k` to the node gradient.
    fn scatter(&self, grad: &mut [DVector<f64>], k: usize, gx: &DVector<f64>, gp: &DVector<f64>) {
        let gp = gp / self.step();
        match self.scheme {
            Scheme::Midpoint => {
                let half = gx * 0.5;
                grad[k] += &half - &gp;
                grad[k + 1] += half + gp;
            }
            Scheme::Forward => {
                grad[k] += gx - &gp;
                grad[k + 1] += gp;
            }
        }
    }
}

/// Node values of a discrete trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    nodes: Vec<DVector<f64>>,
}

impl Path {
    pub fn new(nodes: Vec<DVector<f64>>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::Parameter("a path needs at least three nodes".into()));
        }
        let d = nodes[0].len();
        for n in &nodes {
            check_dim(d, n.len())?;
        }
        Ok(Path { nodes })
    }

    pub fn zeros(dim: usize, intervals: usize) -> Self {
        Path { nodes: vec![DVector::zeros(dim); intervals + 1] }
    }

    /// Samples `f` at the node times of `disc`.
    pub fn from_fn<F: Fn(f64) -> DVector<f64>>(disc: &Discretization, f: F) -> Self {
        Path { nodes: disc.node_times().into_iter().map(f).collect() }
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].len()
    }

    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[DVector<f64>] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> &DVector<f64> {
        &self.nodes[k]
    }

    pub fn start(&self) -> &DVector<f64> {
        &self.nodes[0]
    }

    pub fn end(&self) -> &DVector<f64> {
        &self.nodes[self.nodes.len() - 1]
    }

    pub fn into_nodes(self) -> Vec<DVector<f64>> {
        self.nodes
    }

    /// All node values concatenated, node-major.
    pub fn flatten(&self) -> DVector<f64> {
        let d = self.dim();
        let mut out = DVector::zeros(d * self.nodes.len());
        for (k, n) in self.nodes.iter().enumerate() {
            out.rows_mut(k * d, d).copy_from(n);
        }
        out
    }

    pub fn unflatten(dim: usize, flat: &DVector<f64>) -> Result<Self> {
        if dim == 0 || !flat.len().is_multiple_of(dim) {
            return Err(Error::Dimension { expected: dim, found: flat.len() });
        }
        Path::new((0..flat.len() / dim).map(|k| flat.rows(k * dim, dim).into_owned()).collect())
    }

    /// Largest node-wise Euclidean distance.
    pub fn sup_distance(&self, other: &Path) -> f64 {
        self.nodes
            .iter()
            .zip(&other.nodes)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.nodes.iter().map(|n| n.norm()).fold(0.0, f64::max)
    }

    pub fn map<F: Fn(usize, &DVector<f64>) -> DVector<f64>>(&self, f: F) -> Path {
        Path { nodes: self.nodes.iter().enumerate().map(|(k, n)| f(k, n)).collect() }
    }
}

/// How endpoint values relate to the free optimisation variables.
#[derive(Clone, Debug, PartialEq)]
pub enum Endpoint {
    /// Every node is free.
    Free,
    /// `u_N = sign * u_0`.
    Tied { sign: f64 },
    /// `u_0` is fixed to the given value.
    FixedStart(DVector<f64>),
    /// Selected components of `u_0` and of `u_N` are fixed.
    FixedComponents { start: Vec<(usize, f64)>, end: Vec<(usize, f64)> },
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Free(usize),
    Fixed(f64),
    Tied(usize, f64),
}

#[derive(Clone, Debug)]
struct Layout {
    dim: usize,
    slots: Vec<Slot>,
    free: usize,
}

impl Layout {
    fn new(endpoint: &Endpoint, dim: usize, intervals: usize) -> Result<Self> {
        let nodes = intervals + 1;
        let mut slots = Vec::with_capacity(nodes * dim);
        let mut free = 0;
        let mut next = || {
            free += 1;
            Slot::Free(free - 1)
        };
        match endpoint {
            Endpoint::Free => {
                for _ in 0..nodes * dim {
                    slots.push(next());
                }
            }
            Endpoint::Tied { sign } => {
                for _ in 0..intervals * dim {
                    slots.push(next());
                }
                for c in 0..dim {
                    slots.push(Slot::Tied(c, *sign));
                }
            }
            Endpoint::FixedStart(v0) => {
                check_dim(dim, v0.len())?;
                slots.extend(v0.iter().map(|v| Slot::Fixed(*v)));
                for _ in 0..intervals * dim {
                    slots.push(next());
                }
            }
            Endpoint::FixedComponents { start, end } => {
                let lookup = |list: &[(usize, f64)], c: usize| {
                    list.iter().find(|(i, _)| *i == c).map(|(_, v)| *v)
                };
                for &(i, _) in start.iter().chain(end) {
                    if i >= dim {
                        return Err(Error::Dimension { expected: dim, found: i + 1 });
                    }
                }
                for k in 0..nodes {
                    for c in 0..dim {
                        let fixed = match k {
                            0 => lookup(start, c),
                            _ if k == intervals => lookup(end, c),
                            _ => None,
                        };
                        slots.push(match fixed {
                            Some(v) => Slot::Fixed(v),
                            None => next(),
                        });
                    }
                }
            }
        }
        Ok(Layout { dim, slots, free })
    }

    fn to_path(&self, z: &DVector<f64>) -> Path {
        let d = self.dim;
        let nodes = self
            .slots
            .chunks(d)
            .map(|chunk| {
                DVector::from_iterator(
                    d,
                    chunk.iter().map(|s| match *s {
                        Slot::Free(i) => z[i],
                        Slot::Fixed(v) => v,
                        Slot::Tied(i, sign) => sign * z[i],
                    }),
                )
            })
            .collect();
        Path { nodes }
    }

    fn project(&self, path: &Path) -> DVector<f64> {
        let mut z = DVector::zeros(self.free);
        for (j, s) in self.slots.iter().enumerate() {
            if let Slot::Free(i) = *s {
                z[i] = path.nodes[j / self.dim][j % self.dim];
            }
        }
        z
    }

    fn pull_back(&self, grad: &[DVector<f64>]) -> DVector<f64> {
        let mut z = DVector::zeros(self.free);
        for (j, s) in self.slots.iter().enumerate() {
            let g = grad[j / self.dim][j % self.dim];
            match *s {
                Slot::Free(i) => z[i] += g,
                Slot::Tied(i, sign) => z[i] += sign * g,
                Slot::Fixed(_) => {}
            }
        }
        z
    }
}

/// A map `x -> Lambda_t(x)` entering the nonlinear functional
/// `L(t, u, u' + Lambda u) + <Lambda u, u>`.
pub trait NonlinearOp: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn apply(&self, t: f64, x: &DVector<f64>) -> DVector<f64>;
    /// `DLambda_t(x)^T w`, or `None` when no derivative is available.
    fn jacobian_transpose(&self, t: f64, x: &DVector<f64>, w: &DVector<f64>) -> Option<DVector<f64>>;
    fn label(&self) -> String;
}

/// A linear map as a [`NonlinearOp`].
#[derive(Clone, Debug)]
pub struct LinearMap(pub DMatrix<f64>);

impl NonlinearOp for LinearMap {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, _t: f64, x: &DVector<f64>) -> DVector<f64> {
        &self.0 * x
    }

    fn jacobian_transpose(&self, _t: f64, _x: &DVector<f64>, w: &DVector<f64>) -> Option<DVector<f64>> {
        Some(self.0.transpose() * w)
    }

    fn label(&self) -> String {
        "linear".into()
    }
}

/// The change of variables `v(t) = e^{wt} S_t u(t)`.
#[derive(Clone, Debug)]
pub struct Transform {
    pub rate: f64,
    pub group: Option<Semigroup>,
}

impl Transform {
    pub fn identity() -> Self {
        Transform { rate: 0.0, group: None }
    }

    pub fn is_identity(&self) -> bool {
        self.rate == 0.0 && self.group.as_ref().is_none_or(|g| g.is_trivial())
    }

    pub fn forward(&self, t: f64, u: &DVector<f64>) -> DVector<f64> {
        let v = match &self.group {
            Some(g) => g.apply(t, u),
            None => u.clone(),
        };
        v * (self.rate * t).exp()
    }

    pub fn inverse(&self, t: f64, v: &DVector<f64>) -> DVector<f64> {
        let u = match &self.group {
            Some(g) => g.apply(-t, v),
            None => v.clone(),
        };
        u * (-self.rate * t).exp()
    }

    pub fn to_physical(&self, disc: &Discretization, u: &Path) -> Path {
        u.map(|k, x| self.forward(disc.node_time(k), x))
    }

    pub fn from_physical(&self, disc: &Discretization, v: &Path) -> Path {
        v.map(|k, x| self.inverse(disc.node_time(k), x))
    }

    /// `Q = e^{-wT} S_{-T}`, the map in the boundary relation `v(0) = Q v(T)`.
    pub fn boundary_map(&self, horizon: f64, dim: usize) -> DMatrix<f64> {
        let s = match &self.group {
            Some(g) => (*g.at(-horizon)).clone(),
            None => DMatrix::identity(dim, dim),
        };
        s * (-self.rate * horizon).exp()
    }
}

/// Advisory existence window for the Hamiltonian functional.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WindowCheck {
    pub embedding_constant: f64,
    pub beta_bound: f64,
    pub horizon_bound: f64,
    pub beta_ok: bool,
    pub horizon_ok: bool,
}

impl WindowCheck {
    pub fn new(embedding_constant: f64, beta: f64, horizon: f64) -> Self {
        let c = embedding_constant;
        let beta_bound = 1.0 / (8.0 * c * horizon.sqrt());
        let horizon_bound = 1.0 / (64.0 * c * c * beta * beta);
        WindowCheck {
            embedding_constant: c,
            beta_bound,
            horizon_bound,
            beta_ok: beta < beta_bound,
            horizon_ok: horizon < horizon_bound,
        }
    }
}

/// Estimate of `c` in `sup_t |u(t)| <= c |u|_W` on the discrete path space,
/// with `|u|_W^2 = sum_k h (|A~ x_k|^2 + |p_k|^2)`.
///
/// Computed exactly for the discrete norm. The Gram matrix decouples along
/// the eigenvectors of `A~^T A~`, so the largest eigenvalue of a node block of
/// its inverse is the largest diagonal entry over the scalar time problems.
pub fn embedding_constant(a_tilde: &DMatrix<f64>, disc: &Discretization) -> Result<f64> {
    let n = disc.intervals;
    let h = disc.step();
    let ata = a_tilde.transpose() * a_tilde;
    let spectrum = ((&ata + ata.transpose()) * 0.5).symmetric_eigenvalues();
    let (wa, wb) = match disc.scheme {
        Scheme::Midpoint => (0.5, 0.5),
        Scheme::Forward => (1.0, 0.0),
    };
    let mut c2: f64 = 0.0;
    for lambda in spectrum.iter() {
        let lambda = lambda.max(0.0);
        let mut gram = DMatrix::<f64>::zeros(n + 1, n + 1);
        for k in 0..n {
            // state sample wa*u_k + wb*u_{k+1}, derivative (u_{k+1} - u_k)/h
            let coeffs = [(k, wa, -1.0 / h), (k + 1, wb, 1.0 / h)];
            for &(i, si, di) in &coeffs {
                for &(j, sj, dj) in &coeffs {
                    gram[(i, j)] += h * (lambda * si * sj + di * dj);
                }
            }
        }
        let chol = Cholesky::new(gram).ok_or_else(|| Error::Singular("path-space gram".into()))?;
        let inv = chol.inverse();
        c2 = (0..=n).map(|k| inv[(k, k)]).fold(c2, f64::max);
    }
    Ok(c2.max(0.0).sqrt())
}

#[derive(Clone, Debug)]
struct HamiltonianMaps {
    /// `x -> S x`.
    state: DMatrix<f64>,
    /// `x -> -J A S x`.
    drift: DMatrix<f64>,
    /// `p -> -J S p`.
    momentum: DMatrix<f64>,
}

#[derive(Clone, Debug)]
enum Kind {
    Parabolic {
        lagrangian: Lagrangian,
        boundary: BoundaryLagrangian,
    },
    Transformed {
        phi: ConvexFn,
        phi_conj: ConvexFn,
        transform: Transform,
        boundary: BoundaryLagrangian,
    },
    Hamiltonian {
        lagrangian: Lagrangian,
        boundary: HamiltonianBoundary,
        reflection: DMatrix<f64>,
        maps: Arc<Vec<HamiltonianMaps>>,
        group: Option<Semigroup>,
    },
    Nonlinear {
        lagrangian: Lagrangian,
        op: Arc<dyn NonlinearOp>,
        boundary: BoundaryLagrangian,
    },
}

/// Which functional was assembled and with what parameters.
#[derive(Clone, Debug, Serialize)]
pub struct FunctionalInfo {
    pub kind: &'static str,
    pub lagrangian: String,
    pub boundary: String,
    pub rate: Option<f64>,
    pub beta: Option<f64>,
    pub nonlinearity: Option<String>,
    pub window: Option<WindowCheck>,
}

/// Interval and boundary contributions at one path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Terms {
    pub interior: f64,
    pub boundary: f64,
    /// `sum_k h |L_k|`, the certificate scale without the leading 1.
    pub magnitude: f64,
}

impl Terms {
    pub fn total(&self) -> f64 {
        self.interior + self.boundary
    }
}

type IntervalOut = (f64, f64, DVector<f64>, DVector<f64>);

/// A selfdual functional on discrete paths, with value and gradient.
#[derive(Clone, Debug)]
pub struct AssembledFunctional {
    kind: Kind,
    disc: Discretization,
    dim: usize,
    endpoint: Endpoint,
    layout: Layout,
    info: FunctionalInfo,
}

fn parabolic_endpoint(bl: &BoundaryLagrangian) -> Endpoint {
    match bl.kind() {
        BoundaryKind::Initial { v0 } => Endpoint::FixedStart(v0.clone()),
        BoundaryKind::Periodic => Endpoint::Tied { sign: 1.0 },
        BoundaryKind::Antiperiodic => Endpoint::Tied { sign: -1.0 },
        BoundaryKind::Custom => Endpoint::Free,
    }
}

fn boundary_label(bl: &BoundaryLagrangian) -> String {
    match bl.kind() {
        BoundaryKind::Initial { .. } => "initial".into(),
        BoundaryKind::Periodic => "periodic".into(),
        BoundaryKind::Antiperiodic => "antiperiodic".into(),
        BoundaryKind::Custom => "custom".into(),
    }
}

/// `I(u) = sum_k h L(t_k, x_k, p_k) + l(u_0 - u_N, (u_0 + u_N)/2)`.
pub fn assemble_parabolic(
    lagrangian: Lagrangian,
    boundary: BoundaryLagrangian,
    disc: Discretization,
) -> Result<AssembledFunctional> {
    check_dim(lagrangian.dim(), boundary.dim())?;
    let info = FunctionalInfo {
        kind: "parabolic",
        lagrangian: lagrangian.describe(),
        boundary: boundary_label(&boundary),
        rate: None,
        beta: None,
        nonlinearity: None,
        window: None,
    };
    let endpoint = parabolic_endpoint(&boundary);
    let dim = lagrangian.dim();
    AssembledFunctional::build(Kind::Parabolic { lagrangian, boundary }, disc, dim, endpoint, info)
}

/// `I(u) = sum_k h e^{-2wt} [phi(e^{wt} S_t x_k) + phi*(-e^{wt} S_t p_k)] + l(...)`.
///
/// A minimizer `u` maps to `v = e^{wt} S_t u` solving
/// `v' = G v + w v - d phi(v)` with `v(0) = Q v(T)`-type boundary relations,
/// where `G` generates `S`.
pub fn assemble_transformed(
    phi: ConvexFn,
    rate: f64,
    group: Option<Semigroup>,
    boundary: BoundaryLagrangian,
    disc: Discretization,
) -> Result<AssembledFunctional> {
    let dim = phi.dim();
    check_dim(dim, boundary.dim())?;
    if let Some(g) = &group {
        check_dim(dim, g.dim())?;
        let defect = Space::euclidean(dim).skew_defect(g.generator())?;
        if defect > 1e-9 {
            return Err(Error::NotSkew { defect });
        }
    }
    if !rate.is_finite() {
        return Err(Error::Parameter("weight must be finite".into()));
    }
    let phi_conj = phi.conjugate()?;
    let info = FunctionalInfo {
        kind: "transformed",
        lagrangian: "exp_weight".into(),
        boundary: boundary_label(&boundary),
        rate: Some(rate),
        beta: None,
        nonlinearity: None,
        window: None,
    };
    let endpoint = parabolic_endpoint(&boundary);
    AssembledFunctional::build(
        Kind::Transformed { phi, phi_conj, transform: Transform { rate, group }, boundary },
        disc,
        dim,
        endpoint,
        info,
    )
}

/// The Hamiltonian functional on `X = H x H`:
/// `sum_k h [L(t, x, P) + <x, P>]` with `P = -J x' - J A x`, plus the
/// `beta`-scaled boundary term. With a group `S`, `x` and `P` are taken at
/// `v = S_t u`, so the minimizer maps back through `v = S_t u`.
pub fn assemble_hamiltonian(
    lagrangian: Lagrangian,
    boundary: HamiltonianBoundary,
    base: &DMatrix<f64>,
    disc: Discretization,
    group: Option<Semigroup>,
) -> Result<AssembledFunctional> {
    let n = base.nrows();
    let dim = 2 * n;
    check_dim(dim, lagrangian.dim())?;
    check_dim(dim, boundary.dim())?;
    let blocks = HamiltonianBlocks::new(&Space::euclidean(n), base)?;
    if let Some(g) = &group {
        check_dim(dim, g.dim())?;
        let defect = Space::euclidean(dim).skew_defect(g.generator())?;
        if defect > 1e-9 {
            return Err(Error::NotSkew { defect });
        }
    }
    let maps: Vec<HamiltonianMaps> = (0..disc.intervals)
        .map(|k| {
            let s = match &group {
                Some(g) => (*g.at(disc.sample_time(k))).clone(),
                None => DMatrix::identity(dim, dim),
            };
            let minus_j = -&blocks.symplectic;
            HamiltonianMaps {
                drift: &minus_j * &blocks.split * &s,
                momentum: &minus_j * &s,
                state: s,
            }
        })
        .collect();
    let c = embedding_constant(&blocks.doubled, &disc)?;
    let window = WindowCheck::new(c, boundary.beta(), disc.horizon);
    if !window.beta_ok || !window.horizon_ok {
        log::warn!(
            "Hamiltonian window violated: beta = {} (bound {:.3e}), T = {} (bound {:.3e})",
            boundary.beta(),
            window.beta_bound,
            disc.horizon,
            window.horizon_bound
        );
    }
    let endpoint = match boundary.kind() {
        HamiltonianKind::Periodic => Endpoint::Tied { sign: 1.0 },
        HamiltonianKind::Antiperiodic => Endpoint::Tied { sign: -1.0 },
        HamiltonianKind::Mixed { p0, q0 } => Endpoint::FixedComponents {
            start: p0.iter().enumerate().map(|(i, v)| (i, *v)).collect(),
            end: q0.iter().enumerate().map(|(i, v)| (n + i, *v)).collect(),
        },
        HamiltonianKind::Custom => Endpoint::Free,
    };
    let info = FunctionalInfo {
        kind: "hamiltonian",
        lagrangian: lagrangian.describe(),
        boundary: match boundary.kind() {
            HamiltonianKind::Periodic => "periodic".into(),
            HamiltonianKind::Antiperiodic => "antiperiodic".into(),
            HamiltonianKind::Mixed { .. } => "mixed".into(),
            HamiltonianKind::Custom => "custom".into(),
        },
        rate: None,
        beta: Some(boundary.beta()),
        nonlinearity: None,
        window: Some(window),
    };
    AssembledFunctional::build(
        Kind::Hamiltonian {
            lagrangian,
            boundary,
            reflection: blocks.reflection.clone(),
            maps: Arc::new(maps),
            group,
        },
        disc,
        dim,
        endpoint,
        info,
    )
}

/// Hamiltonian functional with `L(u, p) = phi(u) + phi*(J B u - p)` for an
/// operator `B` on `X` such that `J B` is skew-adjoint.
pub fn assemble_hamiltonian_phi(
    phi: ConvexFn,
    coupling: &DMatrix<f64>,
    boundary: HamiltonianBoundary,
    base: &DMatrix<f64>,
    disc: Discretization,
) -> Result<AssembledFunctional> {
    let n = base.nrows();
    check_dim(2 * n, coupling.nrows())?;
    let blocks = HamiltonianBlocks::new(&Space::euclidean(n), base)?;
    let shift = -(&blocks.symplectic * coupling);
    let lagrangian = Lagrangian::from_convex_pair(phi)?.skew_shift(shift)?;
    assemble_hamiltonian(lagrangian, boundary, base, disc, None)
}

/// `I(u) = sum_k h [L(t, x_k, p_k + Lambda_t x_k) + <Lambda_t x_k, x_k>] + l(...)`.
pub fn assemble_nonlinear(
    lagrangian: Lagrangian,
    op: Arc<dyn NonlinearOp>,
    boundary: BoundaryLagrangian,
    disc: Discretization,
) -> Result<AssembledFunctional> {
    let dim = lagrangian.dim();
    check_dim(dim, op.dim())?;
    check_dim(dim, boundary.dim())?;
    let info = FunctionalInfo {
        kind: "nonlinear",
        lagrangian: lagrangian.describe(),
        boundary: boundary_label(&boundary),
        rate: None,
        beta: None,
        nonlinearity: Some(op.label()),
        window: None,
    };
    let endpoint = parabolic_endpoint(&boundary);
    AssembledFunctional::build(Kind::Nonlinear { lagrangian, op, boundary }, disc, dim, endpoint, info)
}

impl AssembledFunctional {
    fn build(
        kind: Kind,
        disc: Discretization,
        dim: usize,
        endpoint: Endpoint,
        info: FunctionalInfo,
    ) -> Result<Self> {
        let layout = Layout::new(&endpoint, dim, disc.intervals)?;
        Ok(AssembledFunctional { kind, disc, dim, endpoint, layout, info })
    }

    /// Replaces the endpoint parameterization, e.g. to free all nodes.
    pub fn with_endpoint(mut self, endpoint: Endpoint) -> Result<Self> {
        self.layout = Layout::new(&endpoint, self.dim, self.disc.intervals)?;
        self.endpoint = endpoint;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn discretization(&self) -> &Discretization {
        &self.disc
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn info(&self) -> &FunctionalInfo {
        &self.info
    }

    pub fn kind_name(&self) -> &'static str {
        self.info.kind
    }

    /// Number of free optimisation variables.
    pub fn free_dim(&self) -> usize {
        self.layout.free
    }

    /// The path determined by free variables `z`.
    pub fn embed(&self, z: &DVector<f64>) -> Path {
        self.layout.to_path(z)
    }

    /// Free variables of `path`; constrained values are dropped.
    pub fn restrict(&self, path: &Path) -> DVector<f64> {
        self.layout.project(path)
    }

    /// Nearest path satisfying the endpoint parameterization.
    pub fn enforce(&self, path: &Path) -> Path {
        self.embed(&self.restrict(path))
    }

    /// The change of variables back to the physical trajectory, when the
    /// functional carries one.
    pub fn transform(&self) -> Transform {
        match &self.kind {
            Kind::Transformed { transform, .. } => transform.clone(),
            Kind::Hamiltonian { group, .. } => Transform { rate: 0.0, group: group.clone() },
            _ => Transform::identity(),
        }
    }

    fn check_path(&self, path: &Path) -> Result<()> {
        check_dim(self.dim, path.dim())?;
        check_dim(self.disc.intervals, path.intervals())
    }

    fn interval(&self, path: &Path, k: usize, want_grad: bool) -> Option<IntervalOut> {
        let t = self.disc.sample_time(k);
        let (x, p) = self.disc.sample(path, k);
        let empty = || DVector::zeros(0);
        match &self.kind {
            Kind::Parabolic { lagrangian, .. } => {
                let v = lagrangian.eval(t, &x, &p).finite()?;
                if !want_grad {
                    return Some((v, v.abs(), empty(), empty()));
                }
                let (gx, gp) = lagrangian.gradient(t, &x, &p)?;
                Some((v, v.abs(), gx, gp))
            }
            Kind::Transformed { phi, phi_conj, transform, .. } => {
                let mu = (transform.rate * t).exp();
                let s = transform.group.as_ref().map(|g| g.at(t));
                let lift = |w: &DVector<f64>| match &s {
                    Some(s) => &**s * w * mu,
                    None => w * mu,
                };
                let y = lift(&x);
                let z = -lift(&p);
                let w = mu.powi(-2);
                let v = (phi.eval(&y) + phi_conj.eval(&z)).finite()? * w;
                if !want_grad {
                    return Some((v, v.abs(), empty(), empty()));
                }
                let back = |g: DVector<f64>| match &s {
                    Some(s) => s.transpose() * g / mu,
                    None => g / mu,
                };
                let gx = back(phi.gradient(&y)?);
                let gp = -back(phi_conj.gradient(&z)?);
                Some((v, v.abs(), gx, gp))
            }
            Kind::Hamiltonian { lagrangian, maps, .. } => {
                let m = &maps[k];
                let state = &m.state * &x;
                let mom = &m.momentum * &p + &m.drift * &x;
                let l = lagrangian.eval(t, &state, &mom).finite()?;
                let v = l + state.dot(&mom);
                if !want_grad {
                    return Some((v, l.abs(), empty(), empty()));
                }
                let (g_state, g_mom) = lagrangian.gradient(t, &state, &mom)?;
                let a = g_state + &mom;
                let b = g_mom + &state;
                let gx = m.state.transpose() * a + m.drift.transpose() * &b;
                let gp = m.momentum.transpose() * b;
                Some((v, l.abs(), gx, gp))
            }
            Kind::Nonlinear { lagrangian, op, .. } => {
                let lam = op.apply(t, &x);
                let mom = &p + &lam;
                let l = lagrangian.eval(t, &x, &mom).finite()?;
                let v = l + lam.dot(&x);
                if !want_grad {
                    return Some((v, l.abs(), empty(), empty()));
                }
                let (gx, gp) = lagrangian.gradient(t, &x, &mom)?;
                let through = op.jacobian_transpose(t, &x, &(&gp + &x))?;
                Some((v, l.abs(), gx + through + lam, gp))
            }
        }
    }

    fn boundary_term(&self, path: &Path, want_grad: bool) -> Option<(f64, DVector<f64>, DVector<f64>)> {
        let (u0, un) = (path.start(), path.end());
        let empty = || DVector::zeros(0);
        match &self.kind {
            Kind::Parabolic { boundary, .. }
            | Kind::Transformed { boundary, .. }
            | Kind::Nonlinear { boundary, .. } => {
                let a = u0 - un;
                let b = (u0 + un) * 0.5;
                let v = boundary.eval(&a, &b).finite()?;
                if !want_grad {
                    return Some((v, empty(), empty()));
                }
                let (ga, gb) = boundary.gradient(&a, &b)?;
                let half = gb * 0.5;
                Some((v, &ga + &half, half - ga))
            }
            Kind::Hamiltonian { boundary, reflection, .. } => {
                let a = un - u0;
                let b = reflection * (un + u0) * 0.5;
                let v = boundary.eval(&a, &b).finite()?;
                if !want_grad {
                    return Some((v, empty(), empty()));
                }
                let (ga, gb) = boundary.gradient(&a, &b)?;
                let half = reflection.transpose() * gb * 0.5;
                Some((v, &half - &ga, half + ga))
            }
        }
    }

    fn intervals_eval(&self, path: &Path, want_grad: bool) -> Option<Vec<IntervalOut>> {
        let n = self.disc.intervals;
        if n * self.dim >= PARALLEL_WORK {
            (0..n).into_par_iter().map(|k| self.interval(path, k, want_grad)).collect()
        } else {
            (0..n).map(|k| self.interval(path, k, want_grad)).collect()
        }
    }

    /// Interval and boundary contributions, or `None` where the value is infinite.
    pub fn terms(&self, path: &Path) -> Option<Terms> {
        self.check_path(path).ok()?;
        let h = self.disc.step();
        let parts = self.intervals_eval(path, false)?;
        let interior = parts.iter().map(|p| p.0).sum::<f64>() * h;
        let magnitude = parts.iter().map(|p| p.1).sum::<f64>() * h;
        let (boundary, _, _) = self.boundary_term(path, false)?;
        Some(Terms { interior, boundary, magnitude })
    }

    pub fn value(&self, path: &Path) -> Extended {
        match self.terms(path) {
            Some(t) => Extended::Finite(t.total()),
            None => Extended::Infinite,
        }
    }

    /// Certificate scale `1 + sum_k h |L_k|`.
    pub fn scale(&self, path: &Path) -> f64 {
        1.0 + self.terms(path).map_or(0.0, |t| t.magnitude)
    }

    /// Value and node-wise gradient; `None` off the domain or where a
    /// derivative is unavailable.
    pub fn value_and_gradient(&self, path: &Path) -> Option<(f64, Vec<DVector<f64>>)> {
        self.check_path(path).ok()?;
        let h = self.disc.step();
        let parts = self.intervals_eval(path, true)?;
        let (bv, g0, gn) = self.boundary_term(path, true)?;
        let mut grad = vec![DVector::zeros(self.dim); self.disc.intervals + 1];
        let mut interior = 0.0;
        for (k, (v, _, gx, gp)) in parts.into_iter().enumerate() {
            interior += v;
            self.disc.scatter(&mut grad, k, &(gx * h), &(gp * h));
        }
        grad[0] += g0;
        let last = self.disc.intervals;
        grad[last] += gn;
        Some((interior * h + bv, grad))
    }

    /// Value and gradient in the free variables.
    pub fn objective(&self, z: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let path = self.embed(z);
        let (v, g) = self.value_and_gradient(&path)?;
        Some((v, self.layout.pull_back(&g)))
    }

    /// Violation of the boundary condition encoded by the boundary term,
    /// measured on the functional's own variables.
    pub fn boundary_residual(&self, path: &Path) -> f64 {
        match &self.kind {
            Kind::Parabolic { boundary, .. }
            | Kind::Transformed { boundary, .. }
            | Kind::Nonlinear { boundary, .. } => {
                boundary_residual(boundary, path.start(), path.end(), None).unwrap_or(f64::INFINITY)
            }
            Kind::Hamiltonian { boundary, reflection, .. } => {
                hamiltonian_residual(boundary, reflection, path.start(), path.end())
            }
        }
    }

    /// Inverse of `D^T D / h + rate^2 h M^T M` in the free variables, with `D`
    /// the difference and `M` the state-sampling operator, applied
    /// component-wise. Approximates the inverse Hessian of the functional
    /// when `L` is quadratic with curvature of order `rate`.
    pub fn time_preconditioner(&self, rate: f64) -> Result<TimePreconditioner> {
        TimePreconditioner::new(&self.layout, &self.disc, rate)
    }
}

/// Component-wise Cholesky solves with a time Laplacian; see
/// [`AssembledFunctional::time_preconditioner`].
#[derive(Clone, Debug)]
pub struct TimePreconditioner {
    /// For each component, free indices in node order and the factor.
    parts: Vec<(Vec<usize>, Arc<Cholesky<f64, Dyn>>)>,
    size: usize,
}

impl TimePreconditioner {
    fn new(layout: &Layout, disc: &Discretization, rate: f64) -> Result<Self> {
        let d = layout.dim;
        let nodes = disc.intervals + 1;
        let h = disc.step();
        let (wa, wb) = match disc.scheme {
            Scheme::Midpoint => (0.5, 0.5),
            Scheme::Forward => (1.0, 0.0),
        };
        let mut full = DMatrix::<f64>::zeros(nodes, nodes);
        for k in 0..disc.intervals {
            let coeffs = [(k, wa, -1.0), (k + 1, wb, 1.0)];
            for &(i, si, di) in &coeffs {
                for &(j, sj, dj) in &coeffs {
                    full[(i, j)] += di * dj / h + rate * rate * h * si * sj;
                }
            }
        }
        let mut cache: HashMap<Vec<i8>, Arc<Cholesky<f64, Dyn>>> = HashMap::new();
        let mut parts = Vec::with_capacity(d);
        for c in 0..d {
            let slots: Vec<Slot> = (0..nodes).map(|k| layout.slots[k * d + c]).collect();
            let mut free = Vec::new();
            for s in &slots {
                if let Slot::Free(i) = *s {
                    free.push(i);
                }
            }
            let signature: Vec<i8> = slots
                .iter()
                .map(|s| match *s {
                    Slot::Free(_) => 1,
                    Slot::Fixed(_) => 0,
                    Slot::Tied(_, sign) if sign > 0.0 => 2,
                    Slot::Tied(..) => 3,
                })
                .collect();
            let factor = match cache.get(&signature) {
                Some(f) => f.clone(),
                None => {
                    let local: HashMap<usize, usize> =
                        free.iter().enumerate().map(|(j, &i)| (i, j)).collect();
                    let mut e = DMatrix::<f64>::zeros(nodes, free.len());
                    for (k, s) in slots.iter().enumerate() {
                        match *s {
                            Slot::Free(i) => e[(k, local[&i])] = 1.0,
                            Slot::Tied(i, sign) => e[(k, local[&i])] += sign,
                            Slot::Fixed(_) => {}
                        }
                    }
                    let reduced = e.transpose() * &full * &e;
                    let f = Arc::new(
                        Cholesky::new(reduced)
                            .ok_or_else(|| Error::Singular("time preconditioner".into()))?,
                    );
                    cache.insert(signature, f.clone());
                    f
                }
            };
            parts.push((free, factor));
        }
        Ok(TimePreconditioner { parts, size: layout.free })
    }

    pub fn apply(&self, r: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.size);
        for (idx, factor) in &self.parts {
            let local = DVector::from_iterator(idx.len(), idx.iter().map(|&i| r[i]));
            let sol = factor.solve(&local);
            for (j, &i) in idx.iter().enumerate() {
                out[i] = sol[j];
            }
        }
        out
    }
}

/// Largest node residual of the mild (Duhamel) formulation
/// `v(t) = S_t v(0) - int_0^t S_{t-s} (F(s, v(s)) - w v(s)) ds`, with `S`
/// generated by `generator` and the integral by the trapezoidal rule.
pub fn mild_residual<F>(
    path: &Path,
    generator: &DMatrix<f64>,
    forcing: F,
    rate: f64,
    disc: &Discretization,
) -> Result<f64>
where
    F: Fn(f64, &DVector<f64>) -> Option<DVector<f64>>,
{
    check_dim(path.dim(), generator.nrows())?;
    check_dim(disc.intervals, path.intervals())?;
    let h = disc.step();
    let step = expm(&(generator * h));
    let integrand = |k: usize| -> Result<DVector<f64>> {
        let v = path.node(k);
        let f = forcing(disc.node_time(k), v).ok_or(Error::Domain)?;
        Ok(f - v * rate)
    };
    let mut free = path.start().clone();
    let mut integral = DVector::zeros(path.dim());
    let mut prev = integrand(0)?;
    let mut worst: f64 = 0.0;
    for k in 1..=disc.intervals {
        let cur = integrand(k)?;
        free = &step * free;
        integral = &step * (integral + &prev * (0.5 * h)) + &cur * (0.5 * h);
        let r = path.node(k) - &free + &integral;
        worst = worst.max(r.norm());
        prev = cur;
    }
    Ok(worst)
}

/// [`mild_residual`] with `F = grad phi`.
pub fn mild_residual_phi(
    path: &Path,
    generator: &DMatrix<f64>,
    phi: &ConvexFn,
    rate: f64,
    disc: &Discretization,
) -> Result<f64> {
    mild_residual(path, generator, |_, v| phi.gradient(v), rate, disc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn half_square(d: usize) -> ConvexFn {
        ConvexFn::isotropic(d, 1.0).unwrap()
    }

    #[test]
    fn zero_path_initial_zero() {
        let l = Lagrangian::from_convex_pair(half_square(1)).unwrap();
        let bl = BoundaryLagrangian::initial(v(&[0.0])).unwrap();
        let f = assemble_parabolic(l, bl, Discretization::new(1.0, 8).unwrap()).unwrap();
        assert_eq!(f.value(&Path::zeros(1, 8)), Extended::Finite(0.0));
    }

    #[test]
    fn periodic_mismatch_is_infinite() {
        let l = Lagrangian::from_convex_pair(half_square(1)).unwrap();
        let bl = BoundaryLagrangian::periodic(1);
        let f = assemble_parabolic(l, bl, Discretization::new(1.0, 4).unwrap()).unwrap();
        let mut nodes = vec![v(&[0.0]); 5];
        nodes[4] = v(&[1.0]);
        assert_eq!(f.value(&Path::new(nodes).unwrap()), Extended::Infinite);
    }

    #[test]
    fn layout_roundtrip_tied() {
        let layout = Layout::new(&Endpoint::Tied { sign: -1.0 }, 2, 3).unwrap();
        assert_eq!(layout.free, 6);
        let z = DVector::from_iterator(6, (0..6).map(|i| i as f64));
        let p = layout.to_path(&z);
        assert_eq!(p.end(), &(-p.start()));
        assert_eq!(layout.project(&p), z);
    }

    #[test]
    fn fixed_components_layout() {
        let ep = Endpoint::FixedComponents { start: vec![(0, 1.5)], end: vec![(1, -2.0)] };
        let layout = Layout::new(&ep, 2, 2).unwrap();
        assert_eq!(layout.free, 4);
        let p = layout.to_path(&DVector::zeros(4));
        assert_eq!(p.start()[0], 1.5);
        assert_eq!(p.end()[1], -2.0);
    }

    #[test]
    fn mild_residual_of_zero() {
        let disc = Discretization::new(1.0, 8).unwrap();
        let g = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let r = mild_residual_phi(&Path::zeros(2, 8), &g, &half_square(2), 0.3, &disc).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn embedding_constant_scalar_is_finite() {
        let disc = Discretization::new(1.0, 16).unwrap();
        let c = embedding_constant(&DMatrix::identity(1, 1), &disc).unwrap();
        // Continuum value for |u|^2_W = int u^2 + u'^2 on [0,1] is sqrt(coth 1).
        assert!((c - (1.0f64 / 1f64.tanh()).sqrt()).abs() < 1e-2, "{c}");
    }

    #[test]
    fn preconditioner_inverts_its_matrix() {
        let l = Lagrangian::from_convex_pair(half_square(1)).unwrap();
        let bl = BoundaryLagrangian::periodic(1);
        let f = assemble_parabolic(l, bl, Discretization::new(1.0, 6).unwrap()).unwrap();
        let pc = f.time_preconditioner(1.0).unwrap();
        // For phi = |x|^2/2 the functional is a quadratic whose Hessian is the
        // preconditioner matrix, so P^{-1} grad at z lands on z.
        let z = DVector::from_iterator(6, (0..6).map(|i| (i as f64).sin()));
        let (_, g) = f.objective(&z).unwrap();
        assert!((pc.apply(&g) - z).amax() < 1e-12);
    }
}
