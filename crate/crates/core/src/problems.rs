//! Preset evolution problems on one-dimensional grids.
//!
//! A [`ProblemPreset`] is a plain serializable description: a grid, operators
//! and convex potentials written in a small expression language ([`OpSpec`],
//! [`VecSpec`], [`PhiSpec`]), a [`Formulation`] naming which selfdual
//! functional to assemble, a boundary condition and the time discretization.
//! [`Problem::build`] turns it into an assembled functional together with the
//! physical model used for residuals and reference solutions.
//!
//! All formulations share one sign convention: the physical trajectory `v`
//! solves `v' = G v + w v - (linear dissipative and skew terms) - grad phi(v)`
//! with `G` the generator of the unitary group carried by the transform.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::boundary::{
    boundary_residual, hamiltonian_residual, BoundaryLagrangian, HamiltonianBoundary,
};
use crate::convex::ConvexFn;
use crate::error::{check_dim, Error, Result};
use crate::hilbert::{block2, complexify, times_i, Grid, GridBc, HamiltonianBlocks, Semigroup, Space};
use crate::lagrangian::Lagrangian;
use crate::oracle;
use crate::pathspace::{
    assemble_hamiltonian, assemble_nonlinear, assemble_parabolic, assemble_transformed, mild_residual,
    AssembledFunctional, Discretization, NonlinearOp, Path, Transform,
};
use crate::solver::{coercify, minimize, SolveOptions, SolveReport};

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 9] = [
    "gl_skew",
    "schrodinger_potential",
    "coupled_flow",
    "gl_diffusive",
    "gl_advection",
    "ham_bilaplacian",
    "ham_bilaplacian_isometry",
    "ham_transport",
    "nls_cubic",
];

/// Linear operators built from grid primitives. Grid primitives are `n x n`;
/// `times_i`, `complexify` and `block` double the size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum OpSpec {
    Zero,
    Identity,
    Laplacian,
    Bilaplacian,
    Advection { velocity: f64 },
    Diagonal { values: VecSpec },
    Scaled { factor: f64, of: Box<OpSpec> },
    Sum { terms: Vec<OpSpec> },
    Product { left: Box<OpSpec>, right: Box<OpSpec> },
    Transpose { of: Box<OpSpec> },
    /// Multiplication by `i` on the real representation.
    TimesI { of: Box<OpSpec> },
    /// The same real operator on real and imaginary parts.
    Complexify { of: Box<OpSpec> },
    /// `[[a, b], [c, d]]` on a product space.
    Block { a: Box<OpSpec>, b: Box<OpSpec>, c: Box<OpSpec>, d: Box<OpSpec> },
}

impl OpSpec {
    pub fn build(&self, grid: &Grid) -> Result<DMatrix<f64>> {
        let n = grid.n;
        Ok(match self {
            OpSpec::Zero => DMatrix::zeros(n, n),
            OpSpec::Identity => DMatrix::identity(n, n),
            OpSpec::Laplacian => grid.laplacian(),
            OpSpec::Bilaplacian => grid.bilaplacian(),
            OpSpec::Advection { velocity } => grid.advection(*velocity),
            OpSpec::Diagonal { values } => DMatrix::from_diagonal(&values.build(grid)?),
            OpSpec::Scaled { factor, of } => of.build(grid)? * *factor,
            OpSpec::Sum { terms } => {
                let mut it = terms.iter();
                let first = it
                    .next()
                    .ok_or_else(|| Error::Config("empty operator sum".into()))?
                    .build(grid)?;
                it.try_fold(first, |acc, t| {
                    let m = t.build(grid)?;
                    check_dim(acc.nrows(), m.nrows())?;
                    Ok::<_, Error>(acc + m)
                })?
            }
            OpSpec::Product { left, right } => {
                let (l, r) = (left.build(grid)?, right.build(grid)?);
                check_dim(l.ncols(), r.nrows())?;
                l * r
            }
            OpSpec::Transpose { of } => of.build(grid)?.transpose(),
            OpSpec::TimesI { of } => times_i(&of.build(grid)?),
            OpSpec::Complexify { of } => complexify(&of.build(grid)?),
            OpSpec::Block { a, b, c, d } => {
                let parts = [a.build(grid)?, b.build(grid)?, c.build(grid)?, d.build(grid)?];
                for p in &parts[1..] {
                    check_dim(parts[0].nrows(), p.nrows())?;
                }
                block2(&parts[0], &parts[1], &parts[2], &parts[3])
            }
        })
    }

    fn boxed(self) -> Box<OpSpec> {
        Box::new(self)
    }

    fn scaled(self, factor: f64) -> OpSpec {
        OpSpec::Scaled { factor, of: self.boxed() }
    }
}

/// Vectors sampled on the grid nodes. Node functions have length `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "vec", rename_all = "snake_case", deny_unknown_fields)]
pub enum VecSpec {
    Zeros,
    Constant { value: f64 },
    Cosine { amplitude: f64, frequency: f64 },
    Sine { amplitude: f64, frequency: f64 },
    Gaussian { amplitude: f64, center: f64, width: f64 },
    Values { values: Vec<f64> },
    Stack { parts: Vec<VecSpec> },
}

impl VecSpec {
    pub fn build(&self, grid: &Grid) -> Result<DVector<f64>> {
        let x = grid.nodes();
        Ok(match self {
            VecSpec::Zeros => DVector::zeros(grid.n),
            VecSpec::Constant { value } => DVector::from_element(grid.n, *value),
            VecSpec::Cosine { amplitude, frequency } => x.map(|s| amplitude * (frequency * s).cos()),
            VecSpec::Sine { amplitude, frequency } => x.map(|s| amplitude * (frequency * s).sin()),
            VecSpec::Gaussian { amplitude, center, width } => {
                x.map(|s| amplitude * (-((s - center) / width).powi(2)).exp())
            }
            VecSpec::Values { values } => DVector::from_column_slice(values),
            VecSpec::Stack { parts } => {
                let built: Vec<_> = parts.iter().map(|p| p.build(grid)).collect::<Result<_>>()?;
                let len = built.iter().map(|b| b.len()).sum();
                DVector::from_iterator(len, built.iter().flat_map(|b| b.iter().copied()))
            }
        })
    }

    fn sized(&self, grid: &Grid, dim: usize) -> Result<DVector<f64>> {
        let v = self.build(grid)?;
        check_dim(dim, v.len())?;
        Ok(v)
    }
}

/// Convex potentials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phi", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhiSpec {
    Zero,
    /// `coeff/2 |v|^2 + <tilt, v>`.
    Quadratic {
        coeff: f64,
        #[serde(default)]
        tilt: Option<VecSpec>,
    },
    /// `<op v, v>/2 + <tilt, v>` for a symmetric positive semidefinite `op`.
    Form {
        op: OpSpec,
        #[serde(default)]
        tilt: Option<VecSpec>,
    },
    /// `|v|^p / p + <tilt, v>`.
    Power {
        exponent: f64,
        #[serde(default)]
        tilt: Option<VecSpec>,
    },
    /// `sum_i |v_i|^p / p + <tilt, v>`.
    SeparablePower {
        exponent: f64,
        #[serde(default)]
        tilt: Option<VecSpec>,
    },
    /// Equal-size blocks, one potential each.
    Separable { parts: Vec<PhiSpec> },
    Sum { terms: Vec<PhiSpec> },
}

impl PhiSpec {
    fn tilt(tilt: &Option<VecSpec>, grid: &Grid, dim: usize) -> Result<DVector<f64>> {
        match tilt {
            Some(t) => t.sized(grid, dim),
            None => Ok(DVector::zeros(dim)),
        }
    }

    /// `(C, c)` with `grad phi(v) = C v + c`, when the potential is quadratic.
    pub fn affine(&self, grid: &Grid, dim: usize) -> Result<Option<(DMatrix<f64>, DVector<f64>)>> {
        Ok(match self {
            PhiSpec::Zero => Some((DMatrix::zeros(dim, dim), DVector::zeros(dim))),
            PhiSpec::Quadratic { coeff, tilt } => {
                Some((DMatrix::identity(dim, dim) * *coeff, Self::tilt(tilt, grid, dim)?))
            }
            PhiSpec::Form { op, tilt } => {
                let m = op.build(grid)?;
                check_dim(dim, m.nrows())?;
                Some(((&m + m.transpose()) * 0.5, Self::tilt(tilt, grid, dim)?))
            }
            PhiSpec::Power { exponent, tilt } | PhiSpec::SeparablePower { exponent, tilt }
                if *exponent == 2.0 =>
            {
                Some((DMatrix::identity(dim, dim), Self::tilt(tilt, grid, dim)?))
            }
            PhiSpec::Power { .. } | PhiSpec::SeparablePower { .. } => None,
            PhiSpec::Separable { parts } => {
                let k = Self::block_size(parts.len(), dim)?;
                let mut c = DMatrix::zeros(dim, dim);
                let mut lin = DVector::zeros(dim);
                for (i, p) in parts.iter().enumerate() {
                    let Some((ci, li)) = p.affine(grid, k)? else { return Ok(None) };
                    c.view_mut((i * k, i * k), (k, k)).copy_from(&ci);
                    lin.rows_mut(i * k, k).copy_from(&li);
                }
                Some((c, lin))
            }
            PhiSpec::Sum { terms } => {
                let mut c = DMatrix::zeros(dim, dim);
                let mut lin = DVector::zeros(dim);
                for t in terms {
                    let Some((ci, li)) = t.affine(grid, dim)? else { return Ok(None) };
                    c += ci;
                    lin += li;
                }
                Some((c, lin))
            }
        })
    }

    fn block_size(parts: usize, dim: usize) -> Result<usize> {
        if parts == 0 || !dim.is_multiple_of(parts) {
            return Err(Error::Config(format!("cannot split dimension {dim} into {parts} equal blocks")));
        }
        Ok(dim / parts)
    }

    pub fn build(&self, grid: &Grid, dim: usize) -> Result<ConvexFn> {
        if let Some((c, lin)) = self.affine(grid, dim)? {
            if matches!(self, PhiSpec::Zero) {
                return Ok(ConvexFn::zero(dim));
            }
            return ConvexFn::quadratic(c, lin, 0.0);
        }
        let tilted = |f: ConvexFn, tilt: &Option<VecSpec>| -> Result<ConvexFn> {
            match tilt {
                Some(t) => f.tilted(t.sized(grid, dim)?),
                None => Ok(f),
            }
        };
        match self {
            PhiSpec::Power { exponent, tilt } => tilted(ConvexFn::power(dim, *exponent)?, tilt),
            PhiSpec::SeparablePower { exponent, tilt } => {
                tilted(ConvexFn::separable_power(dim, *exponent)?, tilt)
            }
            PhiSpec::Separable { parts } => {
                let k = Self::block_size(parts.len(), dim)?;
                Ok(ConvexFn::separable(parts.iter().map(|p| p.build(grid, k)).collect::<Result<_>>()?))
            }
            PhiSpec::Sum { terms } => {
                ConvexFn::sum(terms.iter().map(|t| t.build(grid, dim)).collect::<Result<_>>()?)
            }
            _ => unreachable!("quadratic potentials handled above"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundarySpec {
    /// `v(0) = value`.
    Initial { value: VecSpec },
    /// Periodic up to the isometry and weight of the formulation.
    Periodic,
    Antiperiodic,
    /// Hamiltonian only: `p(0) = start`, `q(T) = end`.
    Mixed { start: VecSpec, end: VecSpec },
}

/// Which selfdual functional a preset is assembled into.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Formulation {
    /// `v' = G v + w v - grad phi(v)` with `G` skew, through the
    /// exponentially weighted convex pair.
    Transformed { generator: OpSpec, phi: PhiSpec, rate: f64 },
    /// `v' = G v - K v - P v + w v - grad psi(v)` with `G`, `K` skew and `P`
    /// positive, through the skew-shifted pair of `psi + <P v, v>/2`.
    Shifted {
        #[serde(default)]
        generator: Option<OpSpec>,
        skew: OpSpec,
        #[serde(default)]
        positive: Option<OpSpec>,
        psi: PhiSpec,
        rate: f64,
    },
    /// `J v' + J A v + J B v = grad phi(v)` on `H x H` with `A = (base, -base)`.
    /// With `isometry`, `B` must be skew and is carried by the group
    /// `e^{-tB}`; otherwise `J B` must be skew and enters as a skew shift.
    Hamiltonian { base: OpSpec, coupling: OpSpec, phi: PhiSpec, beta: f64, isometry: bool },
    /// `v' = i Lap v - i |v|^{r-1} v - K v - grad phi(v)` on a complex grid,
    /// weighted by `e^{epsilon t}` to make the Lagrangian coercive.
    Schrodinger {
        exponent: f64,
        epsilon: f64,
        phi: PhiSpec,
        #[serde(default)]
        advection: Option<OpSpec>,
    },
}

/// Residuals and comparisons a preset supports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Boundary,
    Mild,
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemPreset {
    pub name: String,
    pub description: String,
    pub grid: Grid,
    pub formulation: Formulation,
    pub boundary: BoundarySpec,
    pub horizon: f64,
    pub intervals: usize,
    pub checks: Vec<Check>,
}

fn lap() -> OpSpec {
    OpSpec::Laplacian
}

fn stack(parts: Vec<VecSpec>) -> VecSpec {
    VecSpec::Stack { parts }
}

fn block(a: OpSpec, b: OpSpec, c: OpSpec, d: OpSpec) -> OpSpec {
    OpSpec::Block { a: a.boxed(), b: b.boxed(), c: c.boxed(), d: d.boxed() }
}

fn unit_grid(n: usize) -> Grid {
    Grid { n, length: n as f64 + 1.0, bc: GridBc::Dirichlet }
}

/// The named preset at its default size.
pub fn preset(name: &str) -> Result<ProblemPreset> {
    let all = [Check::Boundary, Check::Mild, Check::Oracle].to_vec();
    let periodic16 = Grid { n: 16, length: 2.0 * PI, bc: GridBc::Periodic };
    let cos1 = VecSpec::Cosine { amplitude: 1.0, frequency: 1.0 };
    let sin_mode = |grid: &Grid| VecSpec::Sine { amplitude: 1.0, frequency: PI / grid.length };
    Ok(match name {
        "gl_skew" => ProblemPreset {
            name: name.into(),
            description: "u' + i Lap u + grad phi(u) + 0.5 u = 0 on a periodic grid, \
                          phi = |u|^2/2 + <cos x, u>, periodic up to the Schroedinger group"
                .into(),
            grid: periodic16,
            formulation: Formulation::Transformed {
                generator: OpSpec::TimesI { of: lap().scaled(-1.0).boxed() },
                phi: PhiSpec::Quadratic { coeff: 1.0, tilt: Some(stack(vec![cos1.clone(), VecSpec::Zeros])) },
                rate: -0.5,
            },
            boundary: BoundarySpec::Periodic,
            horizon: 1.0,
            intervals: 64,
            checks: all,
        },
        "schrodinger_potential" => ProblemPreset {
            name: name.into(),
            description: "i u' = Lap u - V u + delta f with V = 1 + cos(x)/2, through \
                          phi = eps/2 |u|^2 + delta <i f, u> and weight eps = 0.1"
                .into(),
            grid: periodic16,
            formulation: Formulation::Transformed {
                generator: OpSpec::TimesI {
                    of: OpSpec::Sum {
                        terms: vec![
                            lap(),
                            OpSpec::Diagonal {
                                values: VecSpec::Stack {
                                    parts: vec![VecSpec::Cosine { amplitude: -0.5, frequency: 1.0 }],
                                },
                            },
                            OpSpec::Identity.scaled(-1.0),
                        ],
                    }
                    .scaled(-1.0)
                    .boxed(),
                },
                phi: PhiSpec::Quadratic {
                    coeff: 0.1,
                    tilt: Some(stack(vec![
                        VecSpec::Zeros,
                        VecSpec::Gaussian { amplitude: 1.0, center: PI, width: 1.0 },
                    ])),
                },
                rate: 0.1,
            },
            boundary: BoundarySpec::Periodic,
            horizon: 1.0,
            intervals: 64,
            checks: all,
        },
        "coupled_flow" => {
            let grid = unit_grid(8);
            let a = OpSpec::Sum { terms: vec![lap(), OpSpec::Advection { velocity: 0.5 }] };
            ProblemPreset {
                name: name.into(),
                description: "coupled flows (x, y)' = (A y, -A^T x) - grad phi, A = Lap + 0.5 d/dx, \
                              phi = |(x, y)|^2/2 + <f, x>, periodic up to the group"
                    .into(),
                grid,
                formulation: Formulation::Transformed {
                    generator: block(
                        OpSpec::Zero,
                        a.clone(),
                        OpSpec::Transpose { of: a.boxed() }.scaled(-1.0),
                        OpSpec::Zero,
                    ),
                    phi: PhiSpec::Quadratic {
                        coeff: 1.0,
                        tilt: Some(stack(vec![sin_mode(&grid), VecSpec::Zeros])),
                    },
                    rate: 0.0,
                },
                boundary: BoundarySpec::Periodic,
                horizon: 1.0,
                intervals: 64,
                checks: all,
            }
        }
        "gl_diffusive" => {
            let grid = unit_grid(8);
            ProblemPreset {
                name: name.into(),
                description: "u' - (kappa + i) Lap u + grad psi(u) = 0 with kappa = 0.1, Dirichlet, \
                              psi = |u|^2/2 + <f, u>, e^{-wT} u(T) = u(0) with w = 0"
                    .into(),
                grid,
                formulation: Formulation::Shifted {
                    generator: None,
                    skew: OpSpec::TimesI { of: lap().scaled(-1.0).boxed() },
                    positive: Some(OpSpec::Complexify { of: lap().scaled(-0.1).boxed() }),
                    psi: PhiSpec::Quadratic {
                        coeff: 1.0,
                        tilt: Some(stack(vec![sin_mode(&grid), VecSpec::Zeros])),
                    },
                    rate: 0.0,
                },
                boundary: BoundarySpec::Periodic,
                horizon: 1.0,
                intervals: 64,
                checks: all,
            }
        }
        "gl_advection" => {
            let grid = unit_grid(8);
            ProblemPreset {
                name: name.into(),
                description: "u' - i Lap u + a u_x + grad phi(u) + 0.5 u = 0 with a = 0.5, Dirichlet, \
                              periodic up to the group e^{i t Lap}"
                    .into(),
                grid,
                formulation: Formulation::Shifted {
                    generator: Some(OpSpec::TimesI { of: lap().boxed() }),
                    skew: OpSpec::Complexify { of: OpSpec::Advection { velocity: 0.5 }.boxed() },
                    positive: None,
                    psi: PhiSpec::Quadratic {
                        coeff: 1.0,
                        tilt: Some(stack(vec![sin_mode(&grid), VecSpec::Zeros])),
                    },
                    rate: -0.5,
                },
                boundary: BoundarySpec::Periodic,
                horizon: 1.0,
                intervals: 64,
                checks: all,
            }
        }
        "ham_bilaplacian" => {
            let grid = unit_grid(8);
            ProblemPreset {
                name: name.into(),
                description: "-v' + Lap^2 v - Lap v = grad phi1(u), u' + Lap^2 u + Lap u = grad phi2(v), \
                              quadratic phi_i, periodic"
                    .into(),
                grid,
                formulation: Formulation::Hamiltonian {
                    base: OpSpec::Bilaplacian,
                    coupling: block(lap(), OpSpec::Zero, OpSpec::Zero, lap()),
                    phi: PhiSpec::Quadratic {
                        coeff: 1.0,
                        tilt: Some(stack(vec![
                            sin_mode(&grid),
                            VecSpec::Gaussian { amplitude: 0.5, center: 4.5, width: 2.0 },
                        ])),
                    },
                    beta: 1e-3,
                    isometry: false,
                },
                boundary: BoundarySpec::Periodic,
                horizon: 0.5,
                intervals: 64,
                checks: vec![Check::Boundary, Check::Oracle],
            }
        }
        "ham_bilaplacian_isometry" => {
            let grid = unit_grid(8);
            ProblemPreset {
                name: name.into(),
                description: "-v' + Lap^2 v - Lap u = grad phi1(u), u' + Lap^2 u - Lap v = grad phi2(v), \
                              quadratic phi_i, periodic up to the group of B = (-Lap v, Lap u)"
                    .into(),
                grid,
                formulation: Formulation::Hamiltonian {
                    base: OpSpec::Bilaplacian,
                    coupling: block(OpSpec::Zero, lap().scaled(-1.0), lap(), OpSpec::Zero),
                    phi: PhiSpec::Quadratic {
                        coeff: 1.0,
                        tilt: Some(stack(vec![sin_mode(&grid), VecSpec::Zeros])),
                    },
                    beta: 1e-3,
                    isometry: true,
                },
                boundary: BoundarySpec::Periodic,
                horizon: 0.5,
                intervals: 64,
                checks: vec![Check::Boundary, Check::Oracle],
            }
        }
        "ham_transport" => {
            let grid = unit_grid(8);
            let part = |tilt: VecSpec| PhiSpec::SeparablePower { exponent: 1.5, tilt: Some(tilt) };
            ProblemPreset {
                name: name.into(),
                description: "-v' - Lap(v + u) + b v_x = |u|^{p-2} u + g, u' - Lap(u + v) + a u_x = \
                              |v|^{q-2} v + f with p = q = 1.5, a = 0.5, b = -0.5, periodic up to the group"
                    .into(),
                grid,
                formulation: Formulation::Hamiltonian {
                    base: lap().scaled(-1.0),
                    coupling: block(
                        OpSpec::Advection { velocity: 0.5 },
                        lap().scaled(-1.0),
                        lap(),
                        OpSpec::Advection { velocity: -0.5 }.scaled(-1.0),
                    ),
                    phi: PhiSpec::Separable {
                        parts: vec![
                            part(VecSpec::Sine { amplitude: 0.1, frequency: PI / grid.length }),
                            part(VecSpec::Gaussian { amplitude: 0.05, center: 4.5, width: 2.0 }),
                        ],
                    },
                    beta: 1e-3,
                    isometry: true,
                },
                boundary: BoundarySpec::Periodic,
                horizon: 0.5,
                intervals: 64,
                checks: vec![Check::Boundary],
            }
        }
        "nls_cubic" => ProblemPreset {
            name: name.into(),
            description: "v' = i Lap v - i |v|^2 v on a Dirichlet grid of length 2 pi, \
                          v(0) = Gaussian, weight epsilon = 1"
                .into(),
            grid: Grid { n: 16, length: 2.0 * PI, bc: GridBc::Dirichlet },
            formulation: Formulation::Schrodinger { exponent: 3.0, epsilon: 1.0, phi: PhiSpec::Zero, advection: None },
            boundary: BoundarySpec::Initial {
                value: stack(vec![
                    VecSpec::Gaussian { amplitude: 1.0, center: PI, width: 1.0 },
                    VecSpec::Zeros,
                ]),
            },
            horizon: 0.1,
            intervals: 64,
            checks: all,
        },
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}' (known: {})",
                PRESET_NAMES.join(", ")
            )))
        }
    })
}

/// `Lambda_t(u) = -i Lap u + i e^{(r-1) eps t} |u|^{r-1} u` on the real
/// representation of `C^n`, so that `<Lambda_t u, u> = 0`.
#[derive(Clone, Debug)]
pub struct SchrodingerOp {
    linear: DMatrix<f64>,
    n: usize,
    exponent: f64,
    weight_rate: f64,
}

impl SchrodingerOp {
    pub fn new(laplacian: &DMatrix<f64>, exponent: f64, weight_rate: f64) -> Result<Self> {
        if !(exponent >= 1.0) {
            return Err(Error::Parameter("nonlinearity exponent must be at least 1".into()));
        }
        Ok(SchrodingerOp {
            linear: times_i(&(-laplacian)),
            n: laplacian.nrows(),
            exponent,
            weight_rate,
        })
    }

    fn coefficient(&self, t: f64) -> f64 {
        ((self.exponent - 1.0) * self.weight_rate * t).exp()
    }

    /// `i |u|^{r-1} u` without the weight.
    pub fn nonlinear_part(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let mut out = DVector::zeros(2 * n);
        for j in 0..n {
            let (a, b) = (x[j], x[n + j]);
            let g = (a * a + b * b).sqrt().powf(self.exponent - 1.0);
            out[j] = -g * b;
            out[n + j] = g * a;
        }
        out
    }
}

impl NonlinearOp for SchrodingerOp {
    fn dim(&self) -> usize {
        2 * self.n
    }

    fn apply(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        &self.linear * x + self.nonlinear_part(x) * self.coefficient(t)
    }

    fn jacobian_transpose(&self, t: f64, x: &DVector<f64>, w: &DVector<f64>) -> Option<DVector<f64>> {
        let n = self.n;
        let c = self.coefficient(t);
        let r = self.exponent;
        let mut out = self.linear.transpose() * w;
        for j in 0..n {
            let (a, b) = (x[j], x[n + j]);
            let m2 = a * a + b * b;
            let g = m2.sqrt().powf(r - 1.0);
            let (ga, gb) = if m2 > 0.0 {
                let k = (r - 1.0) * m2.sqrt().powf(r - 3.0);
                (k * a, k * b)
            } else {
                (0.0, 0.0)
            };
            let (w1, w2) = (w[j], w[n + j]);
            out[j] += c * (-b * ga * w1 + (g + a * ga) * w2);
            out[n + j] += c * ((-g - b * gb) * w1 + a * gb * w2);
        }
        Some(out)
    }

    fn label(&self) -> String {
        format!("schrodinger(r = {})", self.exponent)
    }
}

/// The physical equation behind a built problem, in the form
/// `v' = drift v + rate v - forcing(v)`.
#[derive(Clone, Debug)]
enum Physics {
    Parabolic {
        drift: DMatrix<f64>,
        phi: ConvexFn,
        rate: f64,
        boundary: BoundaryLagrangian,
        /// `(C, c)` with `grad phi = C v + c`.
        affine: Option<(DMatrix<f64>, DVector<f64>)>,
        /// Generator of the group in the boundary relation.
        group_generator: Option<DMatrix<f64>>,
    },
    Hamiltonian {
        drift: DMatrix<f64>,
        symplectic: DMatrix<f64>,
        boundary: HamiltonianBoundary,
        reflection: DMatrix<f64>,
        affine: Option<(DMatrix<f64>, DVector<f64>)>,
        coupling: DMatrix<f64>,
        isometry: bool,
    },
    Schrodinger {
        drift: DMatrix<f64>,
        op: SchrodingerOp,
        phi: ConvexFn,
        start: DVector<f64>,
    },
}

/// A preset turned into an assembled functional plus its physical model.
#[derive(Clone, Debug)]
pub struct Problem {
    pub preset: ProblemPreset,
    pub functional: AssembledFunctional,
    /// Map from the functional's variables to the physical trajectory.
    pub transform: Transform,
    pub initial: Path,
    pub warnings: Vec<String>,
    physics: Physics,
}

/// Solver report plus the physical trajectory.
#[derive(Clone, Debug)]
pub struct ProblemSolution {
    pub report: SolveReport,
    pub trajectory: Path,
}

fn parabolic_boundary(spec: &BoundarySpec, grid: &Grid, dim: usize) -> Result<BoundaryLagrangian> {
    match spec {
        BoundarySpec::Initial { value } => BoundaryLagrangian::initial(value.sized(grid, dim)?),
        BoundarySpec::Periodic => Ok(BoundaryLagrangian::periodic(dim)),
        BoundarySpec::Antiperiodic => Ok(BoundaryLagrangian::antiperiodic(dim)),
        BoundarySpec::Mixed { .. } => {
            Err(Error::Config("mixed endpoints apply to Hamiltonian formulations only".into()))
        }
    }
}

fn checked_group(generator: DMatrix<f64>) -> Result<Semigroup> {
    Semigroup::unitary(&Space::euclidean(generator.nrows()), generator)
}

impl Problem {
    /// Builds the functional. `epsilon` applies the coercive perturbation to
    /// parabolic formulations.
    pub fn build(preset: &ProblemPreset, epsilon: Option<f64>) -> Result<Self> {
        let grid = Grid::new(preset.grid.n, preset.grid.length, preset.grid.bc)
            .map_err(|e| Error::Config(e.to_string()))?;
        let disc = Discretization::new(preset.horizon, preset.intervals)?;
        let mut warnings = Vec::new();
        let (functional, transform, physics) = match &preset.formulation {
            Formulation::Transformed { generator, phi, rate } => {
                let g = generator.build(&grid)?;
                let dim = g.nrows();
                let group = checked_group(g.clone())?;
                let phi_fn = phi.build(&grid, dim)?;
                let (phi_used, rate_used) = match epsilon {
                    Some(eps) => coercify(&phi_fn, *rate, eps)?,
                    None => (phi_fn.clone(), *rate),
                };
                let bl = parabolic_boundary(&preset.boundary, &grid, dim)?;
                let f = assemble_transformed(phi_used, rate_used, Some(group.clone()), bl.clone(), disc)?;
                let transform = Transform { rate: rate_used, group: Some(group) };
                let physics = Physics::Parabolic {
                    drift: g.clone(),
                    phi: phi_fn,
                    rate: *rate,
                    boundary: bl,
                    affine: phi.affine(&grid, dim)?,
                    group_generator: Some(g),
                };
                (f, transform, physics)
            }
            Formulation::Shifted { generator, skew, positive, psi, rate } => {
                let k = skew.build(&grid)?;
                let dim = k.nrows();
                let space = Space::euclidean(dim);
                let defect = space.skew_defect(&k)?;
                if defect > 1e-9 {
                    return Err(Error::NotSkew { defect });
                }
                let p = match positive {
                    Some(op) => {
                        let m = op.build(&grid)?;
                        check_dim(dim, m.nrows())?;
                        let min = space.form_minimum(&m)?;
                        if min < -1e-10 {
                            return Err(Error::NotPositive { min });
                        }
                        m
                    }
                    None => DMatrix::zeros(dim, dim),
                };
                let group = match generator {
                    Some(op) => {
                        let g = op.build(&grid)?;
                        check_dim(dim, g.nrows())?;
                        Some(checked_group(g)?)
                    }
                    None => None,
                };
                let psi_fn = psi.build(&grid, dim)?;
                let (psi_used, rate_used) = match epsilon {
                    Some(eps) => coercify(&psi_fn, *rate, eps)?,
                    None => (psi_fn.clone(), *rate),
                };
                let sym = (&p + p.transpose()) * 0.5;
                let full = if sym.iter().all(|v| *v == 0.0) {
                    psi_used
                } else {
                    ConvexFn::sum(vec![psi_used, ConvexFn::quadratic(sym, DVector::zeros(dim), 0.0)?])?
                };
                let lag = Lagrangian::mixed_weight(full, k.clone(), rate_used, group.clone(), None)?;
                let bl = parabolic_boundary(&preset.boundary, &grid, dim)?;
                let f = assemble_parabolic(lag, bl.clone(), disc)?;
                let g = group.as_ref().map(|s| s.generator().clone());
                let drift = g.clone().unwrap_or_else(|| DMatrix::zeros(dim, dim)) - &k - &p;
                let physics = Physics::Parabolic {
                    drift,
                    phi: psi_fn,
                    rate: *rate,
                    boundary: bl,
                    affine: psi.affine(&grid, dim)?,
                    group_generator: g,
                };
                (f, Transform { rate: rate_used, group }, physics)
            }
            Formulation::Hamiltonian { base, coupling, phi, beta, isometry } => {
                if epsilon.is_some() {
                    warnings.push("epsilon_coercify ignored for Hamiltonian formulations".into());
                }
                let a = base.build(&grid)?;
                let n = a.nrows();
                let blocks = HamiltonianBlocks::new(&Space::euclidean(n), &a)?;
                let b = coupling.build(&grid)?;
                check_dim(2 * n, b.nrows())?;
                let phi_fn = phi.build(&grid, 2 * n)?;
                let boundary = match &preset.boundary {
                    BoundarySpec::Periodic => HamiltonianBoundary::periodic(blocks.doubled.clone(), *beta)?,
                    BoundarySpec::Antiperiodic => {
                        HamiltonianBoundary::antiperiodic(blocks.doubled.clone(), *beta)?
                    }
                    BoundarySpec::Mixed { start, end } => HamiltonianBoundary::mixed(
                        start.sized(&grid, n)?,
                        end.sized(&grid, n)?,
                        blocks.doubled.clone(),
                        *beta,
                    )?,
                    BoundarySpec::Initial { .. } => {
                        return Err(Error::Config(
                            "Hamiltonian formulations take periodic, antiperiodic or mixed endpoints".into(),
                        ))
                    }
                };
                let (lag, group) = if *isometry {
                    let group = checked_group(-&b)?;
                    (Lagrangian::from_convex_pair(phi_fn)?, Some(group))
                } else {
                    let shift = -(&blocks.symplectic * &b);
                    (Lagrangian::from_convex_pair(phi_fn)?.skew_shift(shift)?, None)
                };
                let f = assemble_hamiltonian(lag, boundary.clone(), &a, disc, group.clone())?;
                if let Some(w) = &f.info().window {
                    if !w.beta_ok || !w.horizon_ok {
                        warnings.push(format!(
                            "existence window not met: beta = {beta} vs bound {:.3e}, T = {} vs bound {:.3e}",
                            w.beta_bound, preset.horizon, w.horizon_bound
                        ));
                    }
                }
                let physics = Physics::Hamiltonian {
                    drift: -(&blocks.split + &b),
                    symplectic: blocks.symplectic.clone(),
                    boundary,
                    reflection: blocks.reflection.clone(),
                    affine: phi.affine(&grid, 2 * n)?,
                    coupling: b,
                    isometry: *isometry,
                };
                (f, Transform { rate: 0.0, group }, physics)
            }
            Formulation::Schrodinger { exponent, epsilon: weight, phi, advection } => {
                if epsilon.is_some() {
                    warnings.push("epsilon_coercify ignored: the Schroedinger formulation is already weighted".into());
                }
                if !(*weight > 0.0) {
                    return Err(Error::Config("Schroedinger weight epsilon must be positive".into()));
                }
                let n = grid.n;
                let dim = 2 * n;
                let lapl = grid.laplacian();
                let op = SchrodingerOp::new(&lapl, *exponent, *weight)?;
                let phi_fn = phi.build(&grid, dim)?;
                let reg = ConvexFn::isotropic(dim, *weight)?;
                let coercive = match phi {
                    PhiSpec::Zero => reg,
                    _ => ConvexFn::sum(vec![phi_fn.clone(), reg])?,
                };
                let mut lag = Lagrangian::from_convex_pair(coercive)?;
                let mut shift = DMatrix::zeros(dim, dim);
                if let Some(adv) = advection {
                    shift = adv.build(&grid)?;
                    check_dim(dim, shift.nrows())?;
                    lag = lag.skew_shift(shift.clone())?;
                }
                let lag = lag.exp_scale(*weight)?;
                let bl = parabolic_boundary(&preset.boundary, &grid, dim)?;
                let start = match &preset.boundary {
                    BoundarySpec::Initial { value } => value.sized(&grid, dim)?,
                    _ => return Err(Error::Config("the Schroedinger formulation needs initial data".into())),
                };
                let f = assemble_nonlinear(lag, Arc::new(op), bl, disc)?;
                let physics = Physics::Schrodinger {
                    drift: times_i(&lapl) - shift,
                    op: SchrodingerOp::new(&lapl, *exponent, 0.0)?,
                    phi: phi_fn,
                    start,
                };
                (f, Transform { rate: *weight, group: None }, physics)
            }
        };
        let dim = functional.dim();
        let initial = match &preset.boundary {
            BoundarySpec::Initial { value } => {
                let v0 = value.sized(&grid, dim)?;
                Path::from_fn(&disc, |_| v0.clone())
            }
            _ => functional.enforce(&Path::zeros(dim, disc.intervals)),
        };
        let initial = functional.enforce(&initial);
        Ok(Problem { preset: preset.clone(), functional, transform, initial, warnings, physics })
    }

    pub fn discretization(&self) -> &Discretization {
        self.functional.discretization()
    }

    pub fn dim(&self) -> usize {
        self.functional.dim()
    }

    /// Physical trajectory `v` of a path in the functional's variables.
    pub fn physical(&self, u: &Path) -> Path {
        self.transform.to_physical(self.discretization(), u)
    }

    /// Boundary residual of the physical trajectory.
    pub fn boundary_residual(&self, v: &Path) -> Result<f64> {
        let disc = self.discretization();
        let horizon = disc.horizon;
        match &self.physics {
            Physics::Parabolic { boundary, .. } => {
                let q = self.transform.boundary_map(horizon, self.dim());
                boundary_residual(boundary, v.start(), v.end(), Some(&q))
            }
            Physics::Hamiltonian { boundary, reflection, .. } => {
                let end = self.transform.inverse(horizon, v.end());
                Ok(hamiltonian_residual(boundary, reflection, v.start(), &end))
            }
            Physics::Schrodinger { start, .. } => Ok((v.start() - start).norm()),
        }
    }

    /// Largest node residual of the Duhamel formulation of the physical equation.
    pub fn mild_residual(&self, v: &Path) -> Result<f64> {
        let disc = self.discretization();
        match &self.physics {
            Physics::Parabolic { drift, phi, rate, .. } => {
                mild_residual(v, drift, |_, x| phi.gradient(x), *rate, disc)
            }
            // The drift has a backward component, so a Duhamel residual
            // propagated from v(0) measures its growth, not the solution.
            Physics::Hamiltonian { .. } => Err(Error::Unsupported(
                "the mild residual applies to parabolic and Schroedinger problems".into(),
            )),
            Physics::Schrodinger { drift, op, phi, .. } => mild_residual(
                v,
                drift,
                |_, x| Some(op.nonlinear_part(x) + phi.gradient(x)?),
                0.0,
                disc,
            ),
        }
    }

    /// `(M, f)` with `v' = -M v - f`, when the physical equation is affine.
    pub fn affine_model(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        match &self.physics {
            Physics::Parabolic { drift, rate, affine, .. } => {
                let (c, lin) = affine.as_ref()?;
                let dim = drift.nrows();
                Some((-drift - DMatrix::identity(dim, dim) * *rate + c, lin.clone()))
            }
            Physics::Hamiltonian { drift, symplectic, affine, .. } => {
                let (c, lin) = affine.as_ref()?;
                Some((-drift + symplectic * c, symplectic * lin))
            }
            Physics::Schrodinger { .. } => None,
        }
    }

    /// Independent reference trajectory at the node times, when one exists:
    /// matrix exponentials for affine problems, fine Runge-Kutta otherwise.
    pub fn reference(&self) -> Result<Option<Path>> {
        let disc = *self.discretization();
        let times = disc.node_times();
        let horizon = disc.horizon;
        let dim = self.dim();
        let nodes = match &self.physics {
            Physics::Parabolic { boundary, group_generator, .. } => {
                let Some((m, lin)) = self.affine_model() else { return Ok(None) };
                let lin = &lin;
                let weight = self.transform.rate;
                let q = |sign: f64| -> DMatrix<f64> {
                    let s = match group_generator {
                        Some(g) => (g * (-horizon)).exp(),
                        None => DMatrix::identity(dim, dim),
                    };
                    s * (sign * (-weight * horizon).exp())
                };
                let v0 = match boundary.kind() {
                    crate::boundary::BoundaryKind::Initial { v0 } => v0.clone(),
                    crate::boundary::BoundaryKind::Periodic => {
                        oracle::periodic_fixed_point(&m, lin, &q(1.0), horizon)?
                    }
                    crate::boundary::BoundaryKind::Antiperiodic => {
                        oracle::periodic_fixed_point(&m, lin, &q(-1.0), horizon)?
                    }
                    crate::boundary::BoundaryKind::Custom => return Ok(None),
                };
                oracle::linear_ode(&m, lin, &v0, &times)?
            }
            Physics::Hamiltonian { boundary, coupling, isometry, .. } => {
                let Some((m, f)) = self.affine_model() else { return Ok(None) };
                // u(T) = Q_end v(T) with Q_end the inverse group at T.
                let q_end = if *isometry { (coupling * horizon).exp() } else { DMatrix::identity(dim, dim) };
                let n = dim / 2;
                let v0 = match boundary.kind() {
                    crate::boundary::HamiltonianKind::Periodic => {
                        oracle::periodic_fixed_point(&m, &f, &q_end, horizon)?
                    }
                    crate::boundary::HamiltonianKind::Antiperiodic => {
                        oracle::periodic_fixed_point(&m, &f, &(-&q_end), horizon)?
                    }
                    crate::boundary::HamiltonianKind::Mixed { p0, q0 } => {
                        let mut b0 = DMatrix::zeros(dim, dim);
                        let mut sel = DMatrix::zeros(dim, dim);
                        for i in 0..n {
                            b0[(i, i)] = 1.0;
                            sel[(n + i, n + i)] = 1.0;
                        }
                        let mut target = DVector::zeros(dim);
                        target.rows_mut(0, n).copy_from(p0);
                        target.rows_mut(n, n).copy_from(q0);
                        oracle::linear_bvp(&m, &f, horizon, &b0, &(sel * &q_end), &target)?
                    }
                    crate::boundary::HamiltonianKind::Custom => return Ok(None),
                };
                oracle::linear_ode(&m, &f, &v0, &times)?
            }
            Physics::Schrodinger { drift, op, phi, start } => {
                let per_node = 40;
                let rhs = |_t: f64, v: &DVector<f64>| -> DVector<f64> {
                    let grad = phi.gradient(v).unwrap_or_else(|| DVector::from_element(v.len(), f64::NAN));
                    drift * v - op.nonlinear_part(v) - grad
                };
                let fine = oracle::rk4_reference(rhs, start, horizon, per_node * disc.intervals);
                fine.into_iter().step_by(per_node).collect()
            }
        };
        Ok(Some(Path::new(nodes)?))
    }

    /// Minimizes, maps back to the physical trajectory and fills in the
    /// residuals named by the preset's checks.
    pub fn solve(&self, opts: &SolveOptions) -> Result<ProblemSolution> {
        let start = Instant::now();
        let mut report = minimize(&self.functional, &self.initial, opts)?;
        let v = self.physical(&report.path);
        report.boundary_residual = self.boundary_residual(&v)?;
        if self.preset.checks.contains(&Check::Mild) {
            report.mild_residual = Some(self.mild_residual(&v)?);
        }
        if self.preset.checks.contains(&Check::Oracle) {
            if let Some(r) = self.reference()? {
                report.oracle_error = Some(v.sup_distance(&r));
            }
        }
        report.warnings.splice(0..0, self.warnings.iter().cloned());
        report.wall_time = start.elapsed().as_secs_f64();
        Ok(ProblemSolution { report, trajectory: v })
    }
}

/// Builds and solves a preset.
pub fn solve_problem(preset: &ProblemPreset, opts: &SolveOptions) -> Result<ProblemSolution> {
    Problem::build(preset, opts.epsilon_coercify)?.solve(opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_build() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            Problem::build(&p, None).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn presets_roundtrip_json() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            let text = serde_json::to_string(&p).unwrap();
            let back: ProblemPreset = serde_json::from_str(&text).unwrap();
            assert_eq!(back, p);
        }
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(preset("navier_stokes"), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_key_rejected() {
        let text = r#"{"phi":"quadratic","coeff":1.0,"tilt":null,"extra":1}"#;
        assert!(serde_json::from_str::<PhiSpec>(text).is_err());
    }

    #[test]
    fn schrodinger_pairing_vanishes() {
        let grid = Grid::new(6, 2.0 * PI, GridBc::Dirichlet).unwrap();
        let op = SchrodingerOp::new(&grid.laplacian(), 3.0, 0.5).unwrap();
        let x = DVector::from_fn(12, |i, _| ((i * 7 % 5) as f64 - 2.0) * 0.3);
        assert!(op.apply(0.4, &x).dot(&x).abs() < 1e-13);
    }
}
