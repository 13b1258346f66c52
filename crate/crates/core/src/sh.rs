//! Real spherical-harmonic basis up to degree 4, with Jacobians.
//!
//! The basis is written as homogeneous harmonic polynomials in `(x, y, z)`, so
//! the Jacobian returned by [`eval_basis_grad`] is the gradient of those
//! polynomials. On the unit sphere they coincide with the usual orthonormal
//! real SH functions.

use std::ops::{Add, Mul, Sub};

pub const MAX_DEGREE: usize = 4;

#[inline]
pub const fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Band index `l` of flat coefficient index `i`.
#[inline]
pub fn band_of(i: usize) -> usize {
    (i as f64).sqrt() as usize
}

pub const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];
const C4: [f64; 9] = [
    2.503_342_941_796_704_6,
    -1.770_130_769_779_930_4,
    0.946_174_695_757_560_1,
    -0.669_046_543_557_289_2,
    0.105_785_546_915_204_31,
    -0.669_046_543_557_289_2,
    0.473_087_347_878_780_04,
    -1.770_130_769_779_930_4,
    0.625_835_735_449_176_1,
];

trait Poly: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Mul<f64, Output = Self> {
    fn constant(v: f64) -> Self;
}

impl Poly for f64 {
    #[inline]
    fn constant(v: f64) -> Self {
        v
    }
}

/// Value plus gradient with respect to `(x, y, z)`.
#[derive(Clone, Copy, Debug, Default)]
struct Dual3 {
    v: f64,
    d: [f64; 3],
}

impl Add for Dual3 {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Dual3 {
            v: self.v + o.v,
            d: [self.d[0] + o.d[0], self.d[1] + o.d[1], self.d[2] + o.d[2]],
        }
    }
}

impl Sub for Dual3 {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Dual3 {
            v: self.v - o.v,
            d: [self.d[0] - o.d[0], self.d[1] - o.d[1], self.d[2] - o.d[2]],
        }
    }
}

impl Mul for Dual3 {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Dual3 {
            v: self.v * o.v,
            d: [
                self.d[0] * o.v + self.v * o.d[0],
                self.d[1] * o.v + self.v * o.d[1],
                self.d[2] * o.v + self.v * o.d[2],
            ],
        }
    }
}

impl Mul<f64> for Dual3 {
    type Output = Self;
    #[inline]
    fn mul(self, s: f64) -> Self {
        Dual3 {
            v: self.v * s,
            d: [self.d[0] * s, self.d[1] * s, self.d[2] * s],
        }
    }
}

impl Poly for Dual3 {
    #[inline]
    fn constant(v: f64) -> Self {
        Dual3 { v, d: [0.0; 3] }
    }
}

fn basis<T: Poly>(degree: usize, x: T, y: T, z: T, out: &mut [T]) {
    debug_assert!(degree <= MAX_DEGREE);
    debug_assert!(out.len() >= coeff_count(degree));
    out[0] = T::constant(C0);
    if degree == 0 {
        return;
    }
    out[1] = y * -C1;
    out[2] = z * C1;
    out[3] = x * -C1;
    if degree == 1 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    out[4] = xy * C2[0];
    out[5] = yz * C2[1];
    out[6] = (zz * 2.0 - xx - yy) * C2[2];
    out[7] = xz * C2[3];
    out[8] = (xx - yy) * C2[4];
    if degree == 2 {
        return;
    }
    out[9] = y * (xx * 3.0 - yy) * C3[0];
    out[10] = xy * z * C3[1];
    out[11] = y * (zz * 4.0 - xx - yy) * C3[2];
    out[12] = z * (zz * 2.0 - xx * 3.0 - yy * 3.0) * C3[3];
    out[13] = x * (zz * 4.0 - xx - yy) * C3[4];
    out[14] = z * (xx - yy) * C3[5];
    out[15] = x * (xx - yy * 3.0) * C3[6];
    if degree == 3 {
        return;
    }
    let rr = xx + yy + zz;
    out[16] = xy * (xx - yy) * C4[0];
    out[17] = yz * (xx * 3.0 - yy) * C4[1];
    out[18] = xy * (zz * 6.0 - xx - yy) * C4[2];
    out[19] = yz * (zz * 4.0 - xx * 3.0 - yy * 3.0) * C4[3];
    out[20] = (zz * zz * 35.0 - zz * rr * 30.0 + rr * rr * 3.0) * C4[4];
    out[21] = xz * (zz * 4.0 - xx * 3.0 - yy * 3.0) * C4[5];
    out[22] = (xx - yy) * (zz * 6.0 - xx - yy) * C4[6];
    out[23] = xz * (xx - yy * 3.0) * C4[7];
    out[24] = (xx * (xx - yy * 3.0) - yy * (xx * 3.0 - yy)) * C4[8];
}

/// Evaluates the `(degree + 1)^2` basis functions at a unit direction.
pub fn eval_basis(degree: usize, dir: [f64; 3], out: &mut [f64]) {
    basis(degree, dir[0], dir[1], dir[2], out);
}

/// Basis values and their gradients with respect to the direction components.
pub fn eval_basis_grad(degree: usize, dir: [f64; 3], values: &mut [f64], grads: &mut [[f64; 3]]) {
    let n = coeff_count(degree);
    let mut tmp = [Dual3::default(); coeff_count(MAX_DEGREE)];
    let x = Dual3 { v: dir[0], d: [1.0, 0.0, 0.0] };
    let y = Dual3 { v: dir[1], d: [0.0, 1.0, 0.0] };
    let z = Dual3 { v: dir[2], d: [0.0, 0.0, 1.0] };
    basis(degree, x, y, z, &mut tmp[..n]);
    for i in 0..n {
        values[i] = tmp[i].v;
        grads[i] = tmp[i].d;
    }
}

/// Degree inferred from a coefficient count, if it is a perfect square.
pub fn degree_for_count(count: usize) -> Option<usize> {
    (0..=MAX_DEGREE).find(|&d| coeff_count(d) == count)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Gauss-Legendre nodes/weights on [-1, 1] via Newton iteration.
    fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
        }
        out
    }

    #[test]
    fn basis_is_orthonormal_on_sphere() {
        // Product quadrature exact for polynomials of degree <= 8 on the sphere.
        let nodes = gauss_legendre(12);
        let nphi = 24;
        let n = coeff_count(4);
        let mut gram = vec![0.0; n * n];
        let mut vals = vec![0.0; n];
        for &(ct, w) in &nodes {
            let st = (1.0 - ct * ct).sqrt();
            for j in 0..nphi {
                let phi = 2.0 * std::f64::consts::PI * j as f64 / nphi as f64;
                let d = [st * phi.cos(), st * phi.sin(), ct];
                eval_basis(4, d, &mut vals);
                let dw = w * 2.0 * std::f64::consts::PI / nphi as f64;
                for a in 0..n {
                    for b in 0..n {
                        gram[a * n + b] += dw * vals[a] * vals[b];
                    }
                }
            }
        }
        for a in 0..n {
            for b in 0..n {
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((gram[a * n + b] - expect).abs() < 1e-10, "({a},{b}) = {}", gram[a * n + b]);
            }
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let dir = [0.3, -0.5, 0.81];
        let n = coeff_count(4);
        let mut v = vec![0.0; n];
        let mut g = vec![[0.0; 3]; n];
        eval_basis_grad(4, dir, &mut v, &mut g);
        let h = 1e-6;
        for k in 0..3 {
            let mut dp = dir;
            let mut dm = dir;
            dp[k] += h;
            dm[k] -= h;
            let mut vp = vec![0.0; n];
            let mut vm = vec![0.0; n];
            eval_basis(4, dp, &mut vp);
            eval_basis(4, dm, &mut vm);
            for i in 0..n {
                let fd = (vp[i] - vm[i]) / (2.0 * h);
                assert!((fd - g[i][k]).abs() < 1e-8, "coef {i} axis {k}");
            }
        }
    }

    #[test]
    fn band_lookup() {
        assert_eq!(band_of(0), 0);
        assert_eq!(band_of(3), 1);
        assert_eq!(band_of(4), 2);
        assert_eq!(band_of(24), 4);
        assert_eq!(degree_for_count(9), Some(2));
        assert_eq!(degree_for_count(10), None);
    }
}
