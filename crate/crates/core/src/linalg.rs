//! Small dense linear-algebra helpers on top of `faer`.

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub type CMat = Mat<C64>;

pub(crate) const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn to_complex(a: MatRef<'_, f64>) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| C64::new(a[(i, j)], 0.0))
}

pub fn one_norm(a: MatRef<'_, C64>) -> f64 {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(a: MatRef<'_, C64>) -> f64 {
    let mut m: f64 = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].norm());
        }
    }
    m
}

/// Largest entry of `a - a^dagger`.
pub fn hermiticity_defect(a: MatRef<'_, C64>) -> f64 {
    let n = a.nrows();
    let mut m: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            m = m.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    m
}

/// `[a, b] = ab - ba`.
pub fn commutator(a: MatRef<'_, C64>, b: MatRef<'_, C64>) -> CMat {
    a * b - b * a
}

/// Eigenvalues of a Hermitian matrix in ascending order. Only the lower
/// triangle is read.
pub fn hermitian_eigenvalues(a: MatRef<'_, C64>) -> Result<Vec<f64>> {
    a.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numerical(format!("Hermitian eigensolver failed: {e:?}")))
}

// Padé(13) coefficients of Higham's scaling-and-squaring method.
const PADE13: [f64; 14] = [
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
const THETA13: f64 = 5.371920351148152;

fn scaled(a: MatRef<'_, C64>, s: f64) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * s)
}

fn axpy(acc: &mut CMat, s: f64, x: MatRef<'_, C64>) {
    for j in 0..acc.ncols() {
        for i in 0..acc.nrows() {
            acc[(i, j)] += x[(i, j)] * s;
        }
    }
}

/// Matrix exponential by scaling and squaring with a degree-13 Padé
/// approximant.
pub fn expm(a: MatRef<'_, C64>) -> Result<CMat> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let norm = one_norm(a);
    if !norm.is_finite() {
        return Err(Error::Numerical("matrix exponential of a non-finite matrix".into()));
    }
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = scaled(a, 0.5f64.powi(squarings));
    let id = Mat::<C64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;

    let mut inner_u = scaled(a6.as_ref(), b[13]);
    axpy(&mut inner_u, b[11], a4.as_ref());
    axpy(&mut inner_u, b[9], a2.as_ref());
    let mut u = &a6 * &inner_u;
    axpy(&mut u, b[7], a6.as_ref());
    axpy(&mut u, b[5], a4.as_ref());
    axpy(&mut u, b[3], a2.as_ref());
    axpy(&mut u, b[1], id.as_ref());
    let u = &a * &u;

    let mut inner_v = scaled(a6.as_ref(), b[12]);
    axpy(&mut inner_v, b[10], a4.as_ref());
    axpy(&mut inner_v, b[8], a2.as_ref());
    let mut v = &a6 * &inner_v;
    axpy(&mut v, b[6], a6.as_ref());
    axpy(&mut v, b[4], a4.as_ref());
    axpy(&mut v, b[2], a2.as_ref());
    axpy(&mut v, b[0], id.as_ref());

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.partial_piv_lu().solve(&p);
    for _ in 0..squarings {
        r = &r * &r;
    }
    if r.as_ref().col_iter().any(|c| c.iter().any(|x| !x.re.is_finite() || !x.im.is_finite())) {
        return Err(Error::Numerical("matrix exponential overflowed".into()));
    }
    Ok(r)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_diagonal() {
        let a = Mat::from_fn(3, 3, |i, j| {
            if i == j {
                C64::new(i as f64 - 1.0, 0.5 * i as f64)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let e = expm(a.as_ref()).unwrap();
        for i in 0..3 {
            let want = a[(i, i)].exp();
            assert!((e[(i, i)] - want).norm() < 1e-13);
        }
    }

    #[test]
    fn expm_of_rotation_generator() {
        // exp(t [[0,1],[-1,0]]) = [[cos t, sin t], [-sin t, cos t]]
        let t = 37.25;
        let mut a = Mat::<C64>::zeros(2, 2);
        a[(0, 1)] = C64::new(t, 0.0);
        a[(1, 0)] = C64::new(-t, 0.0);
        let e = expm(a.as_ref()).unwrap();
        assert!((e[(0, 0)].re - t.cos()).abs() < 1e-11);
        assert!((e[(0, 1)].re - t.sin()).abs() < 1e-11);
        assert!((e[(1, 0)].re + t.sin()).abs() < 1e-11);
    }

    #[test]
    fn expm_of_jordan_block() {
        // exp([[l,1],[0,l]]) = e^l [[1,1],[0,1]]
        let l = -0.7;
        let mut a = Mat::<C64>::zeros(2, 2);
        a[(0, 0)] = C64::new(l, 0.0);
        a[(1, 1)] = C64::new(l, 0.0);
        a[(0, 1)] = C64::new(1.0, 0.0);
        let e = expm(a.as_ref()).unwrap();
        let el = l.exp();
        assert!((e[(0, 0)].re - el).abs() < 1e-14);
        assert!((e[(0, 1)].re - el).abs() < 1e-14);
        assert!(e[(1, 0)].norm() < 1e-15);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::default();
        s.add(1.0);
        for _ in 0..10 {
            s.add(1e-16);
        }
        s.add(-1.0);
        assert!((s.value() - 1e-15).abs() < 1e-30);
    }
}
