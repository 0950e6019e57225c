//! Property suites behind `selfdual verify`.
//!
//! Each suite draws its samples from a ChaCha stream fixed by the seed, the
//! suite and the member index, so a suite gives the same report whether it
//! runs alone or inside `all`. Members run concurrently; results are
//! collected in catalog order.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{BoundaryLagrangian, HamiltonianBoundary, Pairing};
use crate::convex::{numeric_conjugate, ConvexFn, Extended};
use crate::error::Result;
use crate::hilbert::{Grid, GridBc, HamiltonianBlocks, Semigroup, Space};
use crate::lagrangian::{asd_check_grid, AsdSample, Lagrangian, RegVariant};
use crate::oracle;
use crate::pathspace::{
    assemble_hamiltonian, assemble_nonlinear, assemble_parabolic, assemble_transformed, AssembledFunctional,
    Discretization, Scheme,
};
use crate::problems::{preset, Problem, SchrodingerOp};

const SAMPLES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Duality,
    Lagrangian,
    Gradient,
    Oracle,
    All,
}

impl Suite {
    fn stream(self) -> u64 {
        match self {
            Suite::Duality => 1,
            Suite::Lagrangian => 2,
            Suite::Gradient => 3,
            Suite::Oracle => 4,
            Suite::All => 0,
        }
    }
}

/// Deliberate defects for checking that the suites can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Subtract the conjugate instead of adding it in the Fenchel-Young gap.
    Sign,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    AtMost,
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub bound: Bound,
    pub samples: usize,
    pub passed: bool,
    /// Catalog member with the worst measurement, for aggregated properties.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worst: Option<String>,
}

impl PropertyResult {
    fn at_most(name: impl Into<String>, measured: f64, threshold: f64, samples: usize) -> Self {
        PropertyResult {
            name: name.into(),
            measured,
            threshold,
            bound: Bound::AtMost,
            samples,
            passed: measured <= threshold,
            worst: None,
        }
    }

    fn at_least(name: impl Into<String>, measured: f64, threshold: f64, samples: usize) -> Self {
        PropertyResult {
            name: name.into(),
            measured,
            threshold,
            bound: Bound::AtLeast,
            samples,
            passed: measured >= threshold,
            worst: None,
        }
    }

    fn with_worst(mut self, name: &str) -> Self {
        self.worst = Some(name.to_string());
        self
    }

    /// One line: status, name, measured value against the threshold.
    pub fn summary(&self) -> String {
        let op = match self.bound {
            Bound::AtMost => "<=",
            Bound::AtLeast => ">=",
        };
        let worst = self.worst.as_ref().map(|w| format!(", worst {w}")).unwrap_or_default();
        format!(
            "{} {}: {:.3e} {op} {:.1e} ({} samples{worst})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.threshold,
            self.samples
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub schema: u32,
    pub suite: Suite,
    pub seed: u64,
    pub fault: Option<Fault>,
    pub passed: bool,
    pub properties: Vec<PropertyResult>,
    pub wall_time: f64,
}

impl VerifyReport {
    pub fn failures(&self) -> impl Iterator<Item = &PropertyResult> {
        self.properties.iter().filter(|p| !p.passed)
    }
}

/// Runs a suite. `fault` only affects the duality suite.
pub fn run(suite: Suite, seed: u64, fault: Option<Fault>) -> Result<VerifyReport> {
    let start = Instant::now();
    let mut properties = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::Duality {
        properties.extend(duality(seed, fault)?);
    }
    if all || suite == Suite::Lagrangian {
        properties.extend(lagrangian(seed)?);
        properties.extend(regularization(seed)?);
    }
    if all || suite == Suite::Gradient {
        properties.extend(gradient(seed)?);
    }
    if all || suite == Suite::Oracle {
        properties.extend(oracle_suite(seed)?);
    }
    Ok(VerifyReport {
        schema: 1,
        suite,
        seed,
        fault,
        passed: properties.iter().all(|p| p.passed),
        properties,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn rng_for(seed: u64, suite: Suite, member: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(suite.stream() << 32 | member as u64);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.gen_range(-radius..radius))
}

fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn skew(rng: &mut ChaCha8Rng, d: usize, size: f64) -> DMatrix<f64> {
    let b = uniform_matrix(rng, d, d);
    (&b - b.transpose()) * (0.5 * size)
}

fn finite(v: Extended) -> Option<f64> {
    v.finite()
}

// ----- duality -----

/// Where a catalog member is finite, for biconjugate samples.
#[derive(Clone, Debug)]
enum Support {
    Everywhere,
    Point(DVector<f64>),
    Cube(f64),
}

struct Member {
    name: String,
    f: ConvexFn,
    support: Support,
}

fn duality_catalog(seed: u64) -> Result<Vec<Member>> {
    let mut out = Vec::new();
    for (j, d) in [1usize, 2, 3, 5, 8].into_iter().enumerate() {
        let mut rng = rng_for(seed, Suite::Duality, 1000 + j);
        let c = uniform(&mut rng, d, 1.0);
        let b = uniform_matrix(&mut rng, d, d);
        let spd = b.transpose() * &b + DMatrix::identity(d, d) * 0.1;
        let mut map = uniform_matrix(&mut rng, d, d) * 0.5;
        for i in 0..d {
            map[(i, i)] += 2.0;
        }
        let mut add = |name: &str, f: ConvexFn, support: Support| {
            out.push(Member { name: format!("{name}.{d}d"), f, support });
        };
        add("zero", ConvexFn::zero(d), Support::Everywhere);
        add("isotropic", ConvexFn::isotropic(d, 1.3)?, Support::Everywhere);
        add("quadratic", ConvexFn::quadratic(spd, c.clone(), 0.2)?, Support::Everywhere);
        if d >= 2 {
            let low = uniform_matrix(&mut rng, 1, d);
            add(
                "quadratic_singular",
                ConvexFn::quadratic(low.transpose() * low, DVector::zeros(d), 0.0)?,
                Support::Everywhere,
            );
        }
        add("power_1.5", ConvexFn::power(d, 1.5)?, Support::Everywhere);
        add("power_3", ConvexFn::power(d, 3.0)?, Support::Everywhere);
        add("separable_power", ConvexFn::separable_power(d, 1.7)?, Support::Everywhere);
        add("linear", ConvexFn::linear(c.clone()), Support::Everywhere);
        add("indicator", ConvexFn::indicator(c.clone()), Support::Point(c.clone()));
        add("box_indicator", ConvexFn::box_indicator(d, 0.8)?, Support::Cube(0.8));
        add("l1", ConvexFn::l1(d, 0.6)?, Support::Everywhere);
        add("scaled", ConvexFn::power(d, 1.5)?.scaled(2.5)?, Support::Everywhere);
        add("dilated", ConvexFn::isotropic(d, 1.0)?.dilated(-1.7)?, Support::Everywhere);
        add("tilted", ConvexFn::power(d, 1.5)?.tilted(c.clone())?, Support::Everywhere);
        add("translated", ConvexFn::separable_power(d, 3.0)?.translated(c.clone())?, Support::Everywhere);
        add("precomposed", ConvexFn::power(d, 1.5)?.precomposed(map)?, Support::Everywhere);
        if d >= 2 {
            add(
                "separable",
                ConvexFn::separable(vec![ConvexFn::power(1, 1.5)?, ConvexFn::isotropic(d - 1, 2.0)?]),
                Support::Everywhere,
            );
        }
        add(
            "sum",
            ConvexFn::sum(vec![ConvexFn::power(d, 1.5)?, ConvexFn::isotropic(d, 0.5)?])?,
            Support::Everywhere,
        );
    }
    Ok(out)
}

fn support_sample(rng: &mut ChaCha8Rng, support: &Support, d: usize) -> DVector<f64> {
    match support {
        Support::Everywhere => uniform(rng, d, 2.0),
        Support::Point(c) => c.clone(),
        Support::Cube(r) => uniform(rng, d, *r),
    }
}

/// `(min gap, max equality defect, max biconjugate deviation, equality samples)`.
fn duality_member(m: &Member, rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<(f64, f64, f64, usize)> {
    let d = m.f.dim();
    let conj = m.f.conjugate()?;
    let biconj = conj.conjugate()?;
    let mut min_gap = f64::INFINITY;
    let mut max_eq: f64 = 0.0;
    let mut max_bi: f64 = 0.0;
    let mut eq_samples = 0;
    for i in 0..SAMPLES {
        let x = if i % 2 == 0 { uniform(rng, d, 2.0) } else { support_sample(rng, &m.support, d) };
        // Half the momenta are gradients at a nearby point so that both
        // functions are finite and the gap is small.
        let p = if i % 2 == 0 {
            uniform(rng, d, 2.0)
        } else {
            let y = &x + uniform(rng, d, 0.1);
            m.f.gradient(&y).unwrap_or_else(|| uniform(rng, d, 2.0))
        };
        let gap = match fault {
            None => m.f.fenchel_young(&conj, &x, &p),
            Some(Fault::Sign) => match (m.f.eval(&x), conj.eval(&p)) {
                (Extended::Finite(a), Extended::Finite(b)) => Extended::Finite(a - b - x.dot(&p)),
                _ => Extended::Infinite,
            },
        };
        if let Extended::Finite(g) = gap {
            min_gap = min_gap.min(g);
        }
        if let (Some(fx), Some(g)) = (finite(m.f.eval(&x)), m.f.gradient(&x)) {
            if let Some(gap) = finite(m.f.fenchel_young(&conj, &x, &g)) {
                let scale = 1.0 + fx.abs() + x.norm() * g.norm();
                max_eq = max_eq.max(gap.abs() / scale);
                eq_samples += 1;
            }
        }
        let z = support_sample(rng, &m.support, d);
        if let Some(fz) = finite(m.f.eval(&z)) {
            let dev = match biconj.eval(&z) {
                Extended::Finite(v) => (v - fz).abs() / (1.0 + fz.abs()),
                Extended::Infinite => f64::INFINITY,
            };
            max_bi = max_bi.max(dev);
        }
    }
    Ok((min_gap, max_eq, max_bi, eq_samples))
}

/// Fenchel-Young, equality case and biconjugate over the convex catalog,
/// plus a tabulated transform against its closed form.
pub fn duality(seed: u64, fault: Option<Fault>) -> Result<Vec<PropertyResult>> {
    let catalog = duality_catalog(seed)?;
    let per_member: Vec<(f64, f64, f64, usize)> = catalog
        .par_iter()
        .enumerate()
        .map(|(i, m)| duality_member(m, &mut rng_for(seed, Suite::Duality, i), fault))
        .collect::<Result<_>>()?;
    let total = catalog.len() * SAMPLES;
    let pick = |key: fn(&(f64, f64, f64, usize)) -> f64, lowest: bool| -> (f64, &str) {
        let mut best = (if lowest { f64::INFINITY } else { 0.0 }, catalog[0].name.as_str());
        for (m, r) in catalog.iter().zip(&per_member) {
            let v = key(r);
            if (lowest && v < best.0) || (!lowest && v > best.0) || v.is_nan() {
                best = (v, m.name.as_str());
            }
        }
        best
    };
    let (min_gap, gap_at) = pick(|r| r.0, true);
    let (max_eq, eq_at) = pick(|r| r.1, false);
    let (max_bi, bi_at) = pick(|r| r.2, false);
    let eq_samples = per_member.iter().map(|r| r.3).sum();

    let power = ConvexFn::power(1, 3.0)?;
    let resolution = 4001;
    let (lo, hi) = (-3.0, 3.0);
    let spacing = (hi - lo) / (resolution - 1) as f64;
    let table = numeric_conjugate(&power, &DVector::from_element(1, lo), &DVector::from_element(1, hi), resolution)?;
    let exact = power.conjugate()?;
    let mut rng = rng_for(seed, Suite::Duality, 999);
    let mut table_dev: f64 = 0.0;
    for _ in 0..200 {
        let p = uniform(&mut rng, 1, 2.0);
        let a = finite(table.eval(&p)).unwrap_or(f64::INFINITY);
        let b = finite(exact.eval(&p)).unwrap_or(f64::NEG_INFINITY);
        table_dev = table_dev.max((a - b).abs());
    }

    Ok(vec![
        PropertyResult::at_least("duality.fenchel_young", min_gap, -1e-9, total).with_worst(gap_at),
        PropertyResult::at_most("duality.equality", max_eq, 1e-8, eq_samples).with_worst(eq_at),
        PropertyResult::at_most("duality.biconjugate", max_bi, 1e-6, total).with_worst(bi_at),
        PropertyResult::at_most("duality.grid_transform", table_dev, spacing * spacing, 200),
    ])
}

// ----- Lagrangians -----

struct Instance {
    name: String,
    l: Lagrangian,
}

fn rotation_group(k: &DMatrix<f64>) -> Result<Semigroup> {
    Semigroup::unitary(&Space::euclidean(k.nrows()), k.clone())
}

fn lagrangian_catalog(seed: u64) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for d in [1usize, 2] {
        let mut rng = rng_for(seed, Suite::Lagrangian, 1000 + d);
        let tilt = uniform(&mut rng, d, 0.5);
        let phi = ConvexFn::power(d, 1.5)?.tilted(tilt)?;
        let quad = ConvexFn::isotropic(d, 1.0)?;
        let k = if d == 1 { DMatrix::zeros(1, 1) } else { skew(&mut rng, d, 1.4) };
        let group = rotation_group(&(if d == 1 { DMatrix::zeros(1, 1) } else { skew(&mut rng, d, 2.0) }))?;
        let pair = Lagrangian::from_convex_pair(phi.clone())?;
        let quad_pair = Lagrangian::from_convex_pair(quad)?;
        let mut add = |name: &str, l: Lagrangian| out.push(Instance { name: format!("{name}.{d}d"), l });
        add("convex_pair", pair.clone());
        add("skew_shift", pair.skew_shift(k.clone())?);
        add("unitary_compose", pair.unitary_compose(group.clone(), None)?);
        add("scale", pair.scale(1.7)?);
        add("exp_scale", pair.exp_scale(0.3)?);
        add("exp_weight", Lagrangian::exp_weight(phi.clone(), 0.4, Some(group.clone()))?);
        add("mixed_weight", Lagrangian::mixed_weight(phi.clone(), k.clone(), -0.3, Some(group.clone()), None)?);
        add("infconv_state_0.1", quad_pair.infconv_reg(0.1, RegVariant::State)?);
        add("infconv_state_1", quad_pair.infconv_reg(1.0, RegVariant::State)?);
        add("infconv_momentum", quad_pair.infconv_reg(0.5, RegVariant::Momentum)?);
        add("infconv_both", quad_pair.infconv_reg(0.5, RegVariant::Both)?);
        for c in 0..3 {
            let mut l = pair.clone();
            let mut ops = Vec::new();
            for _ in 0..3 {
                match rng.gen_range(0..4) {
                    0 => {
                        l = l.skew_shift(if d == 1 { DMatrix::zeros(1, 1) } else { skew(&mut rng, d, 1.0) })?;
                        ops.push("skew_shift");
                    }
                    1 => {
                        let g = if d == 1 { DMatrix::zeros(1, 1) } else { skew(&mut rng, d, 2.0) };
                        l = l.unitary_compose(rotation_group(&g)?, None)?;
                        ops.push("unitary_compose");
                    }
                    2 => {
                        l = l.scale(rng.gen_range(0.5..2.0))?;
                        ops.push("scale");
                    }
                    _ => {
                        l = l.exp_scale(rng.gen_range(-0.5..0.5))?;
                        ops.push("exp_scale");
                    }
                }
            }
            add(&format!("composition_{c}[{}]", ops.join(",")), l);
        }
    }
    Ok(out)
}

fn lagrangian_member(inst: &Instance, rng: &mut ChaCha8Rng) -> Result<(f64, f64, usize)> {
    let d = inst.l.dim();
    let samples: Vec<AsdSample> = (0..6)
        .map(|_| (rng.gen_range(0.0..1.0), uniform(rng, d, 1.5), uniform(rng, d, 1.5)))
        .collect();
    let asd = asd_check_grid(&inst.l, &samples, 1e-5)?;
    let mut min_gap = f64::INFINITY;
    for _ in 0..SAMPLES {
        let t = rng.gen_range(0.0..1.0);
        let x = uniform(rng, d, 2.0);
        let p = uniform(rng, d, 2.0);
        if let Extended::Finite(g) = inst.l.fenchel_gap(t, &x, &(-p)) {
            min_gap = min_gap.min(g);
        }
    }
    Ok((asd.max_deviation, min_gap, samples.len()))
}

/// Grid-conjugation ASD check and sampled Fenchel gap for every constructor
/// and three random compositions, in one and two dimensions.
pub fn lagrangian(seed: u64) -> Result<Vec<PropertyResult>> {
    let catalog = lagrangian_catalog(seed)?;
    let results: Vec<(f64, f64, usize)> = catalog
        .par_iter()
        .enumerate()
        .map(|(i, inst)| lagrangian_member(inst, &mut rng_for(seed, Suite::Lagrangian, i)))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (inst, (dev, gap, n)) in catalog.iter().zip(results) {
        out.push(PropertyResult::at_most(format!("lagrangian.asd.{}", inst.name), dev, 1e-5, n));
        out.push(PropertyResult::at_least(format!("lagrangian.gap.{}", inst.name), gap, -1e-9, SAMPLES));
    }

    let mut rng = rng_for(seed, Suite::Lagrangian, 500);
    let field = Lagrangian::from_convex_pair(ConvexFn::power(2, 1.5)?.tilted(uniform(&mut rng, 2, 0.5))?)?
        .skew_shift(skew(&mut rng, 2, 1.0))?;
    let mut worst: f64 = 0.0;
    let trials = 50;
    for _ in 0..trials {
        let x = uniform(&mut rng, 2, 1.5);
        let p = field.vector_field(0.0, &x)?;
        worst = worst.max(finite(field.fenchel_gap(0.0, &x, &p)).unwrap_or(f64::INFINITY));
    }
    out.push(PropertyResult::at_most("lagrangian.vector_field_gap", worst, 1e-8, trials));
    Ok(out)
}

/// State regularisation of the quadratic Lagrangian against its closed form,
/// monotonicity in the regularisation, and its ASD check.
pub fn regularization(seed: u64) -> Result<Vec<PropertyResult>> {
    let mut rng = rng_for(seed, Suite::Lagrangian, 600);
    let base = Lagrangian::from_convex_pair(ConvexFn::isotropic(1, 1.0)?)?;
    let mut closed: f64 = 0.0;
    let mut monotone = f64::NEG_INFINITY;
    let mut asd: f64 = 0.0;
    let n = 1000;
    for lambda in [0.1, 1.0] {
        let reg = base.infconv_reg(lambda, RegVariant::State)?;
        for _ in 0..n {
            let x = rng.gen_range(-3.0..3.0);
            let r = rng.gen_range(-3.0..3.0);
            let (xv, rv) = (DVector::from_element(1, x), DVector::from_element(1, r));
            let got = finite(reg.eval(0.0, &xv, &rv)).unwrap_or(f64::INFINITY);
            let want = x * x / (2.0 * (1.0 + lambda)) + (1.0 + lambda) * r * r / 2.0;
            closed = closed.max((got - want).abs());
            let upper = finite(base.eval(0.0, &xv, &rv)).unwrap_or(f64::INFINITY) + lambda * r * r / 2.0;
            monotone = monotone.max(got - upper);
        }
        let samples: Vec<AsdSample> =
            (0..6).map(|_| (0.0, uniform(&mut rng, 1, 1.5), uniform(&mut rng, 1, 1.5))).collect();
        asd = asd.max(asd_check_grid(&reg, &samples, 1e-5)?.max_deviation);
    }
    Ok(vec![
        PropertyResult::at_most("regularization.closed_form", closed, 1e-8, 2 * n),
        PropertyResult::at_most("regularization.monotone", monotone, 1e-12, 2 * n),
        PropertyResult::at_most("regularization.asd", asd, 1e-5, 12),
    ])
}

// ----- gradients -----

fn gradient_instances(seed: u64) -> Result<Vec<(String, AssembledFunctional)>> {
    let mut rng = rng_for(seed, Suite::Gradient, 1000);
    let disc = Discretization::new(0.7, 8)?;
    let d = 2;
    let phi = ConvexFn::sum(vec![
        ConvexFn::power(d, 1.5)?.tilted(uniform(&mut rng, d, 0.5))?,
        ConvexFn::isotropic(d, 0.5)?,
    ])?;
    let smooth_phi = ConvexFn::power(d, 1.5)?.tilted(uniform(&mut rng, d, 0.5))?;
    let k = skew(&mut rng, d, 1.0);
    let group = rotation_group(&skew(&mut rng, d, 2.0))?;
    let soft = BoundaryLagrangian::from_psi(ConvexFn::isotropic(d, 1.0)?)?;
    let mixed = Lagrangian::mixed_weight(smooth_phi.clone(), k.clone(), 0.3, Some(group.clone()), None)?;
    let mut out = vec![
        ("parabolic.free".to_string(), assemble_parabolic(mixed.clone(), soft.clone(), disc)?),
        (
            "parabolic.periodic".to_string(),
            assemble_parabolic(mixed.clone(), BoundaryLagrangian::periodic(d), disc)?,
        ),
        (
            "parabolic.forward".to_string(),
            assemble_parabolic(mixed, soft.clone(), Discretization::with_scheme(0.7, 8, Scheme::Forward)?)?,
        ),
        (
            "transformed.initial".to_string(),
            assemble_transformed(
                phi,
                -0.4,
                Some(group.clone()),
                BoundaryLagrangian::initial(uniform(&mut rng, d, 1.0))?,
                disc,
            )?,
        ),
        (
            "transformed.antiperiodic".to_string(),
            assemble_transformed(smooth_phi.clone(), 0.2, Some(group), BoundaryLagrangian::antiperiodic(d), disc)?,
        ),
    ];

    let n = 2;
    let b = uniform_matrix(&mut rng, n, n);
    let base = b.transpose() * b + DMatrix::identity(n, n);
    let blocks = HamiltonianBlocks::new(&Space::euclidean(n), &base)?;
    let ham_phi = ConvexFn::power(2 * n, 1.5)?.tilted(uniform(&mut rng, 2 * n, 0.5))?;
    let shift = skew(&mut rng, 2 * n, 1.0);
    let ham_l = Lagrangian::from_convex_pair(ham_phi.clone())?.skew_shift(shift)?;
    out.push((
        "hamiltonian.periodic".to_string(),
        assemble_hamiltonian(
            ham_l.clone(),
            HamiltonianBoundary::periodic(blocks.doubled.clone(), 0.01)?,
            &base,
            disc,
            None,
        )?,
    ));
    out.push((
        "hamiltonian.soft".to_string(),
        assemble_hamiltonian(
            ham_l,
            HamiltonianBoundary::from_psi(
                ConvexFn::isotropic(2 * n, 1.0)?,
                blocks.doubled.clone(),
                0.01,
                Pairing::Conjugate,
            )?,
            &base,
            disc,
            None,
        )?,
    ));
    out.push((
        "hamiltonian.isometry".to_string(),
        assemble_hamiltonian(
            Lagrangian::from_convex_pair(ham_phi)?,
            HamiltonianBoundary::mixed(
                uniform(&mut rng, n, 1.0),
                uniform(&mut rng, n, 1.0),
                blocks.doubled.clone(),
                0.01,
            )?,
            &base,
            disc,
            Some(rotation_group(&skew(&mut rng, 2 * n, 2.0))?),
        )?,
    ));

    let grid = Grid::new(3, PI, GridBc::Dirichlet)?;
    let op = SchrodingerOp::new(&grid.laplacian(), 3.0, 0.5)?;
    let nl = Lagrangian::from_convex_pair(ConvexFn::isotropic(6, 0.5)?)?.exp_scale(0.5)?;
    out.push((
        "nonlinear.initial".to_string(),
        assemble_nonlinear(nl.clone(), Arc::new(op.clone()), BoundaryLagrangian::initial(uniform(&mut rng, 6, 1.0))?, disc)?,
    ));
    out.push((
        "nonlinear.free".to_string(),
        assemble_nonlinear(nl, Arc::new(op), BoundaryLagrangian::from_psi(ConvexFn::isotropic(6, 1.0)?)?, disc)?,
    ));
    Ok(out)
}

/// `(max relative gradient error, min value relative to its scale)`.
fn gradient_member(f: &AssembledFunctional, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let mut worst: f64 = 0.0;
    let mut lowest = f64::INFINITY;
    for _ in 0..10 {
        let z = uniform(rng, f.free_dim(), 1.0);
        let analytic = f.objective(&z).map(|(_, g)| g);
        let numeric = oracle::fd_gradient(|w| f.objective(w).map(|(v, _)| v), &z, 1e-6);
        let err = match (analytic, numeric) {
            (Some(g), Some(fd)) => (g - &fd).amax() / fd.amax().max(1.0),
            _ => f64::INFINITY,
        };
        worst = worst.max(err);
        if let Some(t) = f.terms(&f.embed(&z)) {
            lowest = lowest.min(t.total() / (1.0 + t.magnitude));
        }
    }
    (worst, lowest)
}

/// Analytic gradients of every functional kind against central differences,
/// nonnegativity on random feasible paths, and the change-of-variables
/// identity between the transformed and weighted parabolic functionals.
pub fn gradient(seed: u64) -> Result<Vec<PropertyResult>> {
    let instances = gradient_instances(seed)?;
    let results: Vec<(f64, f64)> = instances
        .par_iter()
        .enumerate()
        .map(|(i, (_, f))| gradient_member(f, &mut rng_for(seed, Suite::Gradient, i)))
        .collect();
    let mut out = Vec::new();
    for ((name, _), (err, low)) in instances.iter().zip(results) {
        out.push(PropertyResult::at_most(format!("gradient.{name}"), err, 1e-5, 10));
        out.push(PropertyResult::at_least(format!("nonnegative.{name}"), low, -1e-8, 10));
    }

    let mut rng = rng_for(seed, Suite::Gradient, 900);
    let d = 3;
    let disc = Discretization::new(1.0, 12)?;
    let phi = ConvexFn::power(d, 1.5)?.tilted(uniform(&mut rng, d, 0.5))?;
    let group = rotation_group(&skew(&mut rng, d, 2.0))?;
    let bl = BoundaryLagrangian::from_psi(ConvexFn::isotropic(d, 1.0)?)?;
    let transformed = assemble_transformed(phi.clone(), 0.35, Some(group.clone()), bl.clone(), disc)?;
    let weighted = assemble_parabolic(Lagrangian::exp_weight(phi, 0.35, Some(group))?, bl, disc)?;
    let mut dev: f64 = 0.0;
    for _ in 0..10 {
        let z = uniform(&mut rng, transformed.free_dim(), 1.0);
        let path = transformed.embed(&z);
        match (finite(transformed.value(&path)), finite(weighted.value(&path))) {
            (Some(a), Some(b)) => dev = dev.max((a - b).abs() / (1.0 + a.abs())),
            _ => dev = f64::INFINITY,
        }
    }
    out.push(PropertyResult::at_most("change_of_variables", dev, 1e-10, 10));
    Ok(out)
}

// ----- oracles -----

const LINEAR_PRESETS: [&str; 7] = [
    "gl_skew",
    "schrodinger_potential",
    "coupled_flow",
    "gl_diffusive",
    "gl_advection",
    "ham_bilaplacian",
    "ham_bilaplacian_isometry",
];

/// `(cross-oracle deviation, boundary residual of the reference)`.
fn oracle_preset(name: &str) -> Result<(f64, f64)> {
    let problem = Problem::build(&preset(name)?, None)?;
    let reference = problem.reference()?.expect("linear preset has a reference");
    let (m, f) = problem.affine_model().expect("linear preset is affine");
    let disc = *problem.discretization();
    let per_node = 160;
    let fine = oracle::rk4_reference(|_, v| -(&m * v) - &f, reference.start(), disc.horizon, per_node * disc.intervals);
    let scale = 1.0 + reference.sup_norm();
    let dev = (0..=disc.intervals)
        .map(|k| (&fine[k * per_node] - reference.node(k)).amax())
        .fold(0.0, f64::max)
        / scale;
    Ok((dev, problem.boundary_residual(&reference)? / scale))
}

/// Cross-oracle agreement on every linear preset, the fixed-point property of
/// the periodic oracle, closed-form scalar cases and NLS mass conservation.
pub fn oracle_suite(seed: u64) -> Result<Vec<PropertyResult>> {
    let _ = seed;
    let results: Vec<(f64, f64)> = LINEAR_PRESETS.par_iter().map(|n| oracle_preset(n)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (name, (dev, bnd)) in LINEAR_PRESETS.iter().zip(results) {
        out.push(PropertyResult::at_most(format!("oracle.cross.{name}"), dev, 1e-8, 1));
        out.push(PropertyResult::at_most(format!("oracle.fixed_point.{name}"), bnd, 1e-10, 1));
    }

    let one = DMatrix::from_element(1, 1, 1.0);
    let decay = oracle::linear_ode(&one, &DVector::zeros(1), &DVector::from_element(1, 1.0), &[1.0])?;
    let mut closed = (decay[0][0] - (-1.0f64).exp()).abs();
    let rot = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 1.0]);
    let spin = oracle::linear_ode(&rot, &DVector::zeros(2), &DVector::from_vec(vec![1.0, 0.0]), &[PI])?;
    closed = closed.max((&spin[0] - DVector::from_vec(vec![-(-PI).exp(), 0.0])).amax());
    let (omega, horizon) = (0.3f64, 1.5f64);
    let q = (-omega * horizon).exp();
    let u0 = oracle::periodic_fixed_point(&one, &DVector::from_element(1, 1.0), &DMatrix::from_element(1, 1, q), horizon)?;
    let e = (-horizon).exp();
    closed = closed.max((u0[0] + q * (1.0 - e) / (1.0 - q * e)).abs());
    out.push(PropertyResult::at_most("oracle.closed_forms", closed, 1e-12, 3));

    let nls = Problem::build(&preset("nls_cubic")?, None)?;
    let reference = nls.reference()?.expect("nls reference");
    let mass0 = reference.start().norm_squared();
    let drift = reference
        .nodes()
        .iter()
        .map(|v| (v.norm_squared() - mass0).abs() / mass0)
        .fold(0.0, f64::max);
    out.push(PropertyResult::at_most("oracle.nls_mass", drift, 1e-6, reference.intervals() + 1));
    Ok(out)
}
