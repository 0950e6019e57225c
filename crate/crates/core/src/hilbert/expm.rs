//! Matrix exponential by scaling and squaring with Padé approximants.

use nalgebra::DMatrix;

const THETA: [f64; 5] = [
    1.495585217958292e-2,
    2.539398330063230e-1,
    9.504178996162932e-1,
    2.097847961257068e0,
    5.371920351148152e0,
];

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn pade_low(a: &DMatrix<f64>, b: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let mut u = &id * b[1];
    let mut v = &id * b[0];
    let mut pow = id.clone();
    let m = b.len() - 1;
    let mut k = 2;
    while k <= m {
        pow = &pow * &a2;
        v += &pow * b[k];
        if k < m {
            u += &pow * b[k + 1];
        }
        k += 2;
    }
    (a * u, v)
}

fn pade13(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let b = &B13;
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u = a * (&a6 * inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let inner_v = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    (u, v)
}

fn solve_pade(u: DMatrix<f64>, v: DMatrix<f64>) -> DMatrix<f64> {
    let p = &v + &u;
    let q = &v - &u;
    q.lu()
        .solve(&p)
        .expect("Padé denominator is nonsingular for scaled arguments")
}

/// `exp(a)` for a square matrix.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    if n == 0 {
        return a.clone();
    }
    let nrm = norm1(a);
    if !nrm.is_finite() {
        return DMatrix::from_element(n, n, f64::NAN);
    }
    if nrm <= THETA[0] {
        let (u, v) = pade_low(a, &B3);
        return solve_pade(u, v);
    }
    if nrm <= THETA[1] {
        let (u, v) = pade_low(a, &B5);
        return solve_pade(u, v);
    }
    if nrm <= THETA[2] {
        let (u, v) = pade_low(a, &B7);
        return solve_pade(u, v);
    }
    if nrm <= THETA[3] {
        let (u, v) = pade_low(a, &B9);
        return solve_pade(u, v);
    }
    let s = ((nrm / THETA[4]).log2().ceil()).max(0.0) as i32;
    let scaled = a * 2f64.powi(-s);
    let (u, v) = pade13(&scaled);
    let mut r = solve_pade(u, v);
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_generator() {
        for &t in &[0.001, 0.3, 1.0, 2.5, 40.0] {
            let a = DMatrix::from_row_slice(2, 2, &[0.0, -t, t, 0.0]);
            let e = expm(&a);
            let want = DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
            assert!((e - want).abs().max() < 1e-12 * (1.0 + t));
        }
    }

    #[test]
    fn diagonal_and_nilpotent() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-3.0, 0.5, 7.0]));
        let e = expm(&a);
        for (i, v) in [-3.0f64, 0.5, 7.0].iter().enumerate() {
            assert!((e[(i, i)] - v.exp()).abs() < 1e-12 * v.exp());
        }
        let n = DMatrix::from_row_slice(2, 2, &[0.0, 5.0, 0.0, 0.0]);
        let e = expm(&n);
        assert!((e[(0, 1)] - 5.0).abs() < 1e-13);
        assert!((e[(0, 0)] - 1.0).abs() < 1e-14);
    }
}
