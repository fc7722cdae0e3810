//! Matrix exponential by scaling and squaring with diagonal Padé approximants.

use super::Mat;
use crate::error::{Error, Result};

const THETA: [(usize, f64); 5] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
    (13, 5.371920351148152e0),
];

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
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

fn one_norm(m: &Mat) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `(U, V)` for a low-degree approximant given its coefficient table.
fn pade_low(a: &Mat, b: &[f64]) -> (Mat, Mat) {
    let n = a.nrows();
    let eye = Mat::identity(n, n);
    let a2 = a * a;
    let mut power = eye.clone();
    let mut u_inner = Mat::zeros(n, n);
    let mut v = Mat::zeros(n, n);
    for k in 0..b.len() / 2 {
        v += &power * b[2 * k];
        u_inner += &power * b[2 * k + 1];
        power = &power * &a2;
    }
    (a * u_inner, v)
}

fn pade13(a: &Mat) -> (Mat, Mat) {
    let n = a.nrows();
    let b = &B13;
    let eye = Mat::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_hi = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = a * (u_hi + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &eye * b[1]);
    let v_hi = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = v_hi + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &eye * b[0];
    (u, v)
}

/// `exp(M)` for a square matrix.
///
/// Relative accuracy is near machine precision for moderate norms; an
/// [`Error::ExpOverflow`] is returned instead of silently producing
/// infinities.
pub fn matrix_exponential(m: &Mat) -> Result<Mat> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("expm of {}x{}", m.nrows(), m.ncols())));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let norm = one_norm(m);
    if !norm.is_finite() {
        return Err(Error::ExpOverflow { norm });
    }
    if norm == 0.0 {
        return Ok(Mat::identity(n, n));
    }

    let solve = |u: Mat, v: Mat| -> Result<Mat> {
        let p = &v + &u;
        let q = &v - &u;
        q.lu()
            .solve(&p)
            .ok_or_else(|| Error::Singular("Padé denominator".into()))
    };

    for &(deg, theta) in &THETA[..4] {
        if norm <= theta {
            let (u, v) = match deg {
                3 => pade_low(m, &B3),
                5 => pade_low(m, &B5),
                7 => pade_low(m, &B7),
                _ => pade_low(m, &B9),
            };
            return solve(u, v);
        }
    }

    let theta13 = THETA[4].1;
    let s = (norm / theta13).log2().ceil().max(0.0) as i32;
    if s > 1000 {
        return Err(Error::ExpOverflow { norm });
    }
    let scaled = m / 2f64.powi(s);
    let (u, v) = pade13(&scaled);
    let mut r = solve(u, v)?;
    for _ in 0..s {
        r = &r * &r;
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::ExpOverflow { norm });
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_is_identity() {
        assert_eq!(matrix_exponential(&Mat::zeros(3, 3)).unwrap(), Mat::identity(3, 3));
    }

    #[test]
    fn scalar_decay() {
        let e = matrix_exponential(&Mat::from_element(1, 1, -1.0)).unwrap();
        assert_relative_eq!(e[(0, 0)], (-1.0f64).exp(), max_relative = 1e-14);
        for x in [-30.0, -3.0, 0.01, 0.3, 2.0, 12.0] {
            let e = matrix_exponential(&Mat::from_element(1, 1, x)).unwrap();
            assert_relative_eq!(e[(0, 0)], f64::exp(x), max_relative = 1e-12);
        }
    }

    #[test]
    fn nilpotent_truncates() {
        let m = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e = matrix_exponential(&m).unwrap();
        assert_relative_eq!(e, Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]), epsilon = 1e-15);
    }

    #[test]
    fn rotation_generator() {
        let t = 2.5;
        let m = Mat::from_row_slice(2, 2, &[0.0, -t, t, 0.0]);
        let e = matrix_exponential(&m).unwrap();
        let expect = Mat::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
        assert_relative_eq!(e, expect, epsilon = 1e-13);
    }

    #[test]
    fn overflow_is_reported() {
        let m = Mat::from_element(1, 1, 1e6);
        assert!(matches!(matrix_exponential(&m), Err(Error::ExpOverflow { .. })));
    }

    proptest! {
        #[test]
        fn inverse_pair(seed in proptest::collection::vec(-1.0f64..1.0, 16), scale in 0.01f64..2.5) {
            let m = Mat::from_row_slice(4, 4, &seed) * scale;
            let e = matrix_exponential(&m).unwrap();
            let einv = matrix_exponential(&(-&m)).unwrap();
            let err = (&e * &einv - Mat::identity(4, 4)).norm();
            prop_assert!(err <= 1e-9, "err {err}");
        }
    }
}
