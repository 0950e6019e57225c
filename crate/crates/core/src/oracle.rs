//! Independent reference computations used to validate the solver.
//!
//! Nothing here shares code with the solver path: linear ODEs use nalgebra's
//! own matrix exponential on an augmented system, nonlinear references use a
//! classical fixed-step Runge-Kutta scheme, and suprema are found by a
//! derivative-free zooming grid search.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

fn augmented_flow(m: &DMatrix<f64>, f: &DVector<f64>, t: f64) -> (DMatrix<f64>, DVector<f64>) {
    let n = m.nrows();
    let mut aug = DMatrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(-m * t));
    aug.view_mut((0, n), (n, 1)).copy_from(&(-f * t));
    let e = aug.exp();
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, 1)).column(0).into_owned(),
    )
}

fn check_system(m: &DMatrix<f64>, f: &DVector<f64>) -> Result<()> {
    check_dim(m.nrows(), m.ncols())?;
    check_dim(m.nrows(), f.len())
}

/// Solution of `v' = -M v - f`, `v(0) = v0`, at the requested times.
pub fn linear_ode(
    m: &DMatrix<f64>,
    f: &DVector<f64>,
    v0: &DVector<f64>,
    times: &[f64],
) -> Result<Vec<DVector<f64>>> {
    check_system(m, f)?;
    check_dim(m.nrows(), v0.len())?;
    Ok(times
        .iter()
        .map(|&t| {
            let (phi, g) = augmented_flow(m, f, t);
            phi * v0 + g
        })
        .collect())
}

/// Initial value of the solution of `v' = -M v - f` with `v(0) = Q v(T)`.
pub fn periodic_fixed_point(
    m: &DMatrix<f64>,
    f: &DVector<f64>,
    q: &DMatrix<f64>,
    horizon: f64,
) -> Result<DVector<f64>> {
    check_system(m, f)?;
    check_dim(m.nrows(), q.nrows())?;
    let n = m.nrows();
    let (phi, g) = augmented_flow(m, f, horizon);
    let lhs = DMatrix::<f64>::identity(n, n) - q * phi;
    let rhs = q * g;
    let lu = lhs.lu();
    if lu.determinant().abs() < 1e-300 {
        return Err(Error::Singular("I - Q exp(-TM) is singular".into()));
    }
    lu.solve(&rhs)
        .ok_or_else(|| Error::Singular("I - Q exp(-TM) is singular".into()))
}

/// Initial value of the solution of `v' = -M v - f` with
/// `B0 v(0) + BT v(T) = c`.
pub fn linear_bvp(
    m: &DMatrix<f64>,
    f: &DVector<f64>,
    horizon: f64,
    b0: &DMatrix<f64>,
    bt: &DMatrix<f64>,
    c: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_system(m, f)?;
    let (phi, g) = augmented_flow(m, f, horizon);
    let lhs = b0 + bt * phi;
    let rhs = c - bt * g;
    lhs.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("boundary value problem is singular".into()))
}

/// Classical fourth-order Runge-Kutta on `v' = rhs(t, v)`, returning the
/// state at every step (`steps + 1` entries).
pub fn rk4_reference<F>(rhs: F, v0: &DVector<f64>, horizon: f64, steps: usize) -> Vec<DVector<f64>>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let h = horizon / steps as f64;
    let mut out = Vec::with_capacity(steps + 1);
    let mut v = v0.clone();
    out.push(v.clone());
    for k in 0..steps {
        let t = k as f64 * h;
        let k1 = rhs(t, &v);
        let k2 = rhs(t + 0.5 * h, &(&v + &k1 * (0.5 * h)));
        let k3 = rhs(t + 0.5 * h, &(&v + &k2 * (0.5 * h)));
        let k4 = rhs(t + h, &(&v + &k3 * h));
        v += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        out.push(v.clone());
    }
    out
}

/// Central finite-difference gradient; `None` if any probe leaves the domain.
pub fn fd_gradient<F>(f: F, x: &DVector<f64>, step: f64) -> Option<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Option<f64>,
{
    let mut g = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let h = step * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    Some(g)
}

/// Finite-difference gradient of a function of two vector arguments.
pub fn fd_gradient_pair<F>(
    f: F,
    x: &DVector<f64>,
    p: &DVector<f64>,
    step: f64,
) -> Option<(DVector<f64>, DVector<f64>)>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> Option<f64>,
{
    let gx = fd_gradient(|y| f(y, p), x, step)?;
    let gp = fd_gradient(|q| f(x, q), p, step)?;
    Some((gx, gp))
}

/// Supremum of a concave function by a zooming grid search.
///
/// Starts from the box of half-width `radius` around `center`, re-centres on
/// the best node while it sits on the box boundary, and otherwise shrinks the
/// box to two grid spacings around it until the half-width falls below `tol`.
/// Returns `None` when the function is nowhere finite on the first grid.
pub fn grid_sup<F>(f: F, center: &DVector<f64>, radius: f64, tol: f64) -> Option<f64>
where
    F: Fn(&DVector<f64>) -> Option<f64>,
{
    let k = center.len();
    let m: usize = match k {
        0 => return f(center),
        1 => 41,
        2 => 21,
        3 => 11,
        _ => 7,
    };
    let mut c = center.clone();
    let mut r = radius;
    let mut best_val = f64::NEG_INFINITY;
    let mut moves = 0;
    let total = m.pow(k as u32);
    let mut point = DVector::zeros(k);
    loop {
        let h = 2.0 * r / (m - 1) as f64;
        let mut level_best: Option<(f64, DVector<f64>, bool)> = None;
        for idx in 0..total {
            let mut rem = idx;
            let mut edge = false;
            for j in 0..k {
                let i = rem % m;
                rem /= m;
                edge |= i == 0 || i == m - 1;
                point[j] = c[j] - r + i as f64 * h;
            }
            if let Some(v) = f(&point) {
                if level_best.as_ref().is_none_or(|b| v > b.0) {
                    level_best = Some((v, point.clone(), edge));
                }
            }
        }
        let (v, p, edge) = level_best?;
        best_val = best_val.max(v);
        c = p;
        if edge && moves < 200 {
            moves += 1;
            continue;
        }
        r = 2.0 * h;
        if r <= tol * (1.0 + c.amax()) {
            return Some(best_val);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_decay() {
        let m = DMatrix::from_element(1, 1, 2.0);
        let f = DVector::from_element(1, 1.0);
        let v0 = DVector::from_element(1, 1.0);
        let out = linear_ode(&m, &f, &v0, &[0.0, 0.5, 1.0]).unwrap();
        for (t, v) in [0.0f64, 0.5, 1.0].iter().zip(out) {
            let want = (1.0 + 0.5) * (-2.0 * t).exp() - 0.5;
            assert!((v[0] - want).abs() < 1e-13);
        }
    }

    #[test]
    fn periodic_scalar() {
        let m = DMatrix::from_element(1, 1, 1.0);
        let f = DVector::from_element(1, -1.0);
        let q = DMatrix::identity(1, 1);
        let v0 = periodic_fixed_point(&m, &f, &q, 2.0).unwrap();
        assert!((v0[0] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn rk4_harmonic() {
        let rhs = |_t: f64, v: &DVector<f64>| DVector::from_vec(vec![v[1], -v[0]]);
        let v0 = DVector::from_vec(vec![1.0, 0.0]);
        let out = rk4_reference(rhs, &v0, 1.0, 200);
        assert!((out[200][0] - 1f64.cos()).abs() < 1e-9);
    }

    #[test]
    fn zoom_sup_of_concave() {
        let f = |z: &DVector<f64>| Some(-(z[0] - 3.3).powi(2) - 2.0 * (z[1] + 0.4).powi(2) + 1.25);
        let v = grid_sup(f, &DVector::zeros(2), 1.0, 1e-10).unwrap();
        assert!((v - 1.25).abs() < 1e-14);
    }
}
