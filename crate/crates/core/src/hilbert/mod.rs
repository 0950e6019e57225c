//! Finite-dimensional Hilbert spaces, linear operators on them, unitary groups
//! and finite-difference grid operators.
//!
//! Vectors and operators are plain `nalgebra` types. A [`Space`] carries the
//! inner product (an optional Gram matrix) and answers adjoint and structural
//! questions about operators.

mod expm;
mod grid;

pub use expm::expm;
pub use grid::{grid_operator, Grid, GridBc, GridOperator};

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Default tolerance for structural operator tests.
pub const STRUCTURE_TOL: f64 = 1e-10;

/// A real inner-product space of fixed dimension.
///
/// Complex spaces of complex dimension `n` are represented as real spaces of
/// dimension `2n` with the real part stacked above the imaginary part.
#[derive(Clone, Debug)]
pub struct Space {
    dim: usize,
    gram: Option<Arc<GramData>>,
}

#[derive(Debug)]
struct GramData {
    gram: DMatrix<f64>,
    inv: DMatrix<f64>,
    chol_l: DMatrix<f64>,
}

impl Space {
    /// Euclidean space of the given dimension.
    pub fn euclidean(dim: usize) -> Self {
        Space { dim, gram: None }
    }

    /// Real representation of a complex space of complex dimension `n`.
    pub fn complex(n: usize) -> Self {
        Space::euclidean(2 * n)
    }

    /// Space with inner product `<x, y> = x^T G y`.
    pub fn with_gram(gram: DMatrix<f64>) -> Result<Self> {
        if !gram.is_square() {
            return Err(Error::BadGram);
        }
        let asym = (&gram - gram.transpose()).abs().max();
        if asym > STRUCTURE_TOL * (1.0 + gram.abs().max()) {
            return Err(Error::BadGram);
        }
        let chol = Cholesky::new(gram.clone()).ok_or(Error::BadGram)?;
        let inv = chol.inverse();
        let chol_l = chol.l();
        Ok(Space {
            dim: gram.nrows(),
            gram: Some(Arc::new(GramData { gram, inv, chol_l })),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The Gram matrix (identity for Euclidean spaces).
    pub fn gram(&self) -> DMatrix<f64> {
        match &self.gram {
            Some(g) => g.gram.clone(),
            None => DMatrix::identity(self.dim, self.dim),
        }
    }

    pub fn inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        match &self.gram {
            Some(g) => x.dot(&(&g.gram * y)),
            None => x.dot(y),
        }
    }

    pub fn norm(&self, x: &DVector<f64>) -> f64 {
        self.inner(x, x).max(0.0).sqrt()
    }

    fn check_op(&self, a: &DMatrix<f64>) -> Result<()> {
        check_dim(self.dim, a.nrows())?;
        check_dim(self.dim, a.ncols())
    }

    /// Adjoint with respect to the inner product: `G^{-1} A^T G`.
    pub fn adjoint(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_op(a)?;
        Ok(match &self.gram {
            Some(g) => &g.inv * a.transpose() * &g.gram,
            None => a.transpose(),
        })
    }

    /// Symmetric and skew parts `(A + A*)/2` and `(A - A*)/2`.
    pub fn split_parts(&self, a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let adj = self.adjoint(a)?;
        Ok(((a + &adj) * 0.5, (a - &adj) * 0.5))
    }

    /// Relative defect `|A + A*| / (1 + |A|)` (max-abs norms).
    pub fn skew_defect(&self, a: &DMatrix<f64>) -> Result<f64> {
        let adj = self.adjoint(a)?;
        Ok((a + adj).abs().max() / (1.0 + a.abs().max()))
    }

    pub fn is_skew(&self, a: &DMatrix<f64>, tol: f64) -> Result<bool> {
        Ok(self.skew_defect(a)? <= tol)
    }

    /// Smallest eigenvalue of the symmetric part of the quadratic form `<Ax, x>`.
    pub fn form_minimum(&self, a: &DMatrix<f64>) -> Result<f64> {
        self.check_op(a)?;
        // <Ax,x> = x^T G A x; with G = L L^T and y = L^T x this is y^T L^{-1} G A L^{-T} y.
        let m = match &self.gram {
            Some(g) => {
                let l = &g.chol_l;
                let linv = l
                    .clone()
                    .try_inverse()
                    .ok_or_else(|| Error::Singular("gram factor".into()))?;
                &linv * &g.gram * a * linv.transpose()
            }
            None => a.clone(),
        };
        let sym = (&m + m.transpose()) * 0.5;
        Ok(sym.symmetric_eigenvalues().min())
    }

    /// True when `<Ax, x> >= -tol * (1 + |A|)` for all x.
    pub fn is_positive(&self, a: &DMatrix<f64>, tol: f64) -> Result<bool> {
        Ok(self.form_minimum(a)? >= -tol * (1.0 + a.abs().max()))
    }

    /// Unitarity defect `|S* S - I|` (max-abs norm).
    pub fn unitary_defect(&self, s: &DMatrix<f64>) -> Result<f64> {
        let adj = self.adjoint(s)?;
        let id = DMatrix::<f64>::identity(self.dim, self.dim);
        Ok((adj * s - id).abs().max())
    }

    /// Coordinates in an orthonormal basis: `y = L^T x` with `G = L L^T`.
    pub fn to_orthonormal(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.gram {
            Some(g) => g.chol_l.transpose() * x,
            None => x.clone(),
        }
    }

    /// Inverse of [`Space::to_orthonormal`].
    pub fn from_orthonormal(&self, y: &DVector<f64>) -> DVector<f64> {
        match &self.gram {
            Some(g) => g
                .chol_l
                .transpose()
                .solve_upper_triangular(y)
                .expect("Cholesky factor is nonsingular"),
            None => y.clone(),
        }
    }

    /// Product space `H x H` with the block-diagonal inner product.
    pub fn product(&self) -> Space {
        match &self.gram {
            None => Space::euclidean(2 * self.dim),
            Some(g) => {
                let n = self.dim;
                let mut big = DMatrix::zeros(2 * n, 2 * n);
                big.view_mut((0, 0), (n, n)).copy_from(&g.gram);
                big.view_mut((n, n), (n, n)).copy_from(&g.gram);
                Space::with_gram(big).expect("block gram is SPD")
            }
        }
    }
}

/// Multiplication by `i` on the real representation of `C^n`.
pub fn complex_unit(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        j[(k, n + k)] = -1.0;
        j[(n + k, k)] = 1.0;
    }
    j
}

/// A real `n x n` operator acting on real and imaginary parts alike.
pub fn complexify(m: &DMatrix<f64>) -> DMatrix<f64> {
    block_diag(m, m)
}

/// The operator `i M` on the real representation of `C^n`.
pub fn times_i(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    out.view_mut((0, n), (n, n)).copy_from(&(-m));
    out.view_mut((n, 0), (n, n)).copy_from(m);
    out
}

pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut(a.shape(), b.shape()).copy_from(b);
    out
}

/// 2x2 block operator `[[a, b], [c, d]]` on `H x H`.
pub fn block2(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, d: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    out.view_mut((0, 0), (n, n)).copy_from(a);
    out.view_mut((0, n), (n, n)).copy_from(b);
    out.view_mut((n, 0), (n, n)).copy_from(c);
    out.view_mut((n, n), (n, n)).copy_from(d);
    out
}

/// Operators of the Hamiltonian product space `X = H x H` built from a
/// self-adjoint positive `A` on `H`.
#[derive(Clone, Debug)]
pub struct HamiltonianBlocks {
    /// Symplectic map `(p, q) -> (-q, p)`.
    pub symplectic: DMatrix<f64>,
    /// Reflection `(p, q) -> (p, -q)`.
    pub reflection: DMatrix<f64>,
    /// `(p, q) -> (A p, -A q)`.
    pub split: DMatrix<f64>,
    /// `(p, q) -> (A p, A q)`.
    pub doubled: DMatrix<f64>,
}

impl HamiltonianBlocks {
    pub fn new(space: &Space, a: &DMatrix<f64>) -> Result<Self> {
        let sym_defect = (a - space.adjoint(a)?).abs().max() / (1.0 + a.abs().max());
        if sym_defect > 1e-9 {
            return Err(Error::Parameter("Hamiltonian base operator must be self-adjoint".into()));
        }
        let min = space.form_minimum(a)?;
        if min <= 0.0 {
            return Err(Error::NotPositive { min });
        }
        let n = a.nrows();
        let id = DMatrix::<f64>::identity(n, n);
        let z = DMatrix::<f64>::zeros(n, n);
        Ok(HamiltonianBlocks {
            symplectic: block2(&z, &(-&id), &id, &z),
            reflection: block_diag(&id, &(-&id)),
            split: block_diag(a, &(-a)),
            doubled: block_diag(a, a),
        })
    }
}

/// The group `t -> exp(t G)` of a generator `G`, with a per-time cache.
#[derive(Clone, Debug)]
pub struct Semigroup {
    generator: Arc<DMatrix<f64>>,
    cache: Arc<RwLock<HashMap<u64, Arc<DMatrix<f64>>>>>,
}

impl Semigroup {
    pub fn new(generator: DMatrix<f64>) -> Self {
        assert!(generator.is_square(), "generator must be square");
        Semigroup {
            generator: Arc::new(generator),
            cache: Arc::new(RwLock::new(HashMap::new())),
        }
    }

    /// Group of a skew-adjoint generator; errors when the generator is not skew.
    pub fn unitary(space: &Space, generator: DMatrix<f64>) -> Result<Self> {
        let defect = space.skew_defect(&generator)?;
        if defect > 1e-9 {
            return Err(Error::NotSkew { defect });
        }
        Ok(Semigroup::new(generator))
    }

    /// The trivial group on a space of dimension `dim`.
    pub fn identity(dim: usize) -> Self {
        Semigroup::new(DMatrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.generator.nrows()
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    pub fn is_trivial(&self) -> bool {
        self.generator.iter().all(|v| *v == 0.0)
    }

    /// `exp(t G)`, cached by the bit pattern of `t`.
    pub fn at(&self, t: f64) -> Arc<DMatrix<f64>> {
        let key = t.to_bits();
        if let Some(m) = self.cache.read().expect("cache lock").get(&key) {
            return m.clone();
        }
        let m = if self.is_trivial() {
            DMatrix::identity(self.dim(), self.dim())
        } else {
            expm(&(&*self.generator * t))
        };
        let m = Arc::new(m);
        self.cache
            .write()
            .expect("cache lock")
            .entry(key)
            .or_insert(m)
            .clone()
    }

    pub fn apply(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        &*self.at(t) * x
    }

    /// Same generator with time reversed.
    pub fn reversed(&self) -> Semigroup {
        Semigroup::new(-(*self.generator).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjoint_under_gram() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = Space::with_gram(g).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.3, 0.7]);
        let adj = s.adjoint(&a).unwrap();
        let x = DVector::from_vec(vec![0.3, -1.1]);
        let y = DVector::from_vec(vec![1.7, 0.4]);
        let lhs = s.inner(&(&a * &x), &y);
        let rhs = s.inner(&x, &(&adj * &y));
        assert!((lhs - rhs).abs() < 1e-13);
    }

    #[test]
    fn split_parts_example() {
        let s = Space::euclidean(2);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let (sym, skew) = s.split_parts(&a).unwrap();
        assert_eq!(sym, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]));
        assert_eq!(skew, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
    }

    #[test]
    fn orthonormal_roundtrip() {
        let g = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let s = Space::with_gram(g).unwrap();
        let x = DVector::from_vec(vec![0.25, -2.0]);
        let y = s.to_orthonormal(&x);
        assert!((y.norm() - s.norm(&x)).abs() < 1e-13);
        assert!((s.from_orthonormal(&y) - x).norm() < 1e-13);
    }

    #[test]
    fn unitary_rejects_non_skew() {
        let s = Space::euclidean(2);
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(Semigroup::unitary(&s, g), Err(Error::NotSkew { .. })));
    }

    #[test]
    fn complex_unit_squares_to_minus_one() {
        let j = complex_unit(3);
        let id = DMatrix::<f64>::identity(6, 6);
        assert!((&j * &j + id).abs().max() == 0.0);
    }
}
