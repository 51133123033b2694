//! Planar points, angles and 2×2 symmetric covariances.

use core::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Point or displacement in the floor plane, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Vec2<T> {
    #[inline]
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    /// Unit vector at `angle` radians from the +x axis.
    #[inline]
    pub fn from_angle(angle: T) -> Self {
        Self::new(angle.cos(), angle.sin())
    }

    #[inline]
    pub fn dot(self, other: Self) -> T {
        self.x * other.x + self.y * other.y
    }

    #[inline]
    pub fn cross(self, other: Self) -> T {
        self.x * other.y - self.y * other.x
    }

    #[inline]
    pub fn norm_sq(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn distance(self, other: Self) -> T {
        (self - other).norm()
    }

    #[inline]
    pub fn angle(self) -> T {
        self.y.atan2(self.x)
    }

    /// Rotate counter-clockwise by `angle`.
    #[inline]
    pub fn rotate(self, angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn cast<U: Scalar>(self) -> Vec2<U> {
        Vec2::new(U::lit(self.x.to_f64_lossy()), U::lit(self.y.to_f64_lossy()))
    }
}

impl<T: Scalar> Add for Vec2<T> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl<T: Scalar> AddAssign for Vec2<T> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        self.x = self.x + rhs.x;
        self.y = self.y + rhs.y;
    }
}

impl<T: Scalar> Sub for Vec2<T> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl<T: Scalar> Mul<T> for Vec2<T> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: T) -> Self {
        Self::new(self.x * rhs, self.y * rhs)
    }
}

impl<T: Scalar> Neg for Vec2<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

/// Wrap an angle into (−π, π].
pub fn wrap_angle<T: Scalar>(angle: T) -> T {
    let pi = T::PI();
    let two_pi = pi + pi;
    let mut a = angle % two_pi;
    if a <= -pi {
        a = a + two_pi;
    } else if a > pi {
        a = a - two_pi;
    }
    a
}

/// Symmetric 2×2 matrix, used for position covariances (m²).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Cov2<T> {
    pub xx: T,
    pub xy: T,
    pub yy: T,
}

impl<T: Scalar> Cov2<T> {
    #[inline]
    pub fn new(xx: T, xy: T, yy: T) -> Self {
        Self { xx, xy, yy }
    }

    #[inline]
    pub fn isotropic(variance: T) -> Self {
        Self::new(variance, T::zero(), variance)
    }

    #[inline]
    pub fn diag(a: T, b: T) -> Self {
        Self::new(a, T::zero(), b)
    }

    #[inline]
    pub fn zero() -> Self {
        Self::isotropic(T::zero())
    }

    #[inline]
    pub fn trace(&self) -> T {
        self.xx + self.yy
    }

    #[inline]
    pub fn det(&self) -> T {
        self.xx * self.yy - self.xy * self.xy
    }

    #[inline]
    pub fn scale(&self, k: T) -> Self {
        Self::new(self.xx * k, self.xy * k, self.yy * k)
    }

    #[inline]
    pub fn add(&self, other: &Self) -> Self {
        Self::new(self.xx + other.xx, self.xy + other.xy, self.yy + other.yy)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> (T, T) {
        let half = T::lit(0.5);
        let mean = (self.xx + self.yy) * half;
        let diff = (self.xx - self.yy) * half;
        let r = diff.hypot(self.xy);
        (mean - r, mean + r)
    }

    /// Largest marginal standard deviation, `sqrt(max(Σxx, Σyy))`.
    #[inline]
    pub fn max_marginal_std(&self) -> T {
        self.xx.max(self.yy).max(T::zero()).sqrt()
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if det <= T::zero() || !det.is_finite() {
            return None;
        }
        Some(Self::new(self.yy / det, -self.xy / det, self.xx / det))
    }

    /// Matrix-vector product.
    #[inline]
    pub fn apply(&self, v: Vec2<T>) -> Vec2<T> {
        Vec2::new(self.xx * v.x + self.xy * v.y, self.xy * v.x + self.yy * v.y)
    }

    /// `A·B` for symmetric `A`, `B`; the product is not symmetric in general,
    /// so this returns row-major `[a, b, c, d]`.
    #[inline]
    pub fn mul_full(&self, other: &Self) -> [T; 4] {
        [
            self.xx * other.xx + self.xy * other.xy,
            self.xx * other.xy + self.xy * other.yy,
            self.xy * other.xx + self.yy * other.xy,
            self.xy * other.xy + self.yy * other.yy,
        ]
    }

    /// Lower Cholesky factor `[l11, l21, l22]`; `None` unless PSD.
    pub fn cholesky(&self) -> Option<[T; 3]> {
        if self.xx < T::zero() {
            return None;
        }
        let l11 = self.xx.sqrt();
        if l11 == T::zero() {
            if self.xy != T::zero() || self.yy < T::zero() {
                return None;
            }
            return Some([T::zero(), T::zero(), self.yy.sqrt()]);
        }
        let l21 = self.xy / l11;
        let rest = self.yy - l21 * l21;
        let tol = T::lit(1e-12) * (self.xx + self.yy);
        if rest < -tol {
            return None;
        }
        Some([l11, l21, rest.max(T::zero()).sqrt()])
    }

    pub fn is_psd(&self, tol: T) -> bool {
        let (lo, _) = self.eigenvalues();
        lo >= -tol
    }
}

/// Bivariate normal density at `x` with the given mean and covariance.
/// Returns 0 for a singular covariance unless `x` coincides with the mean
/// along the degenerate direction (treated as +∞ → clipped to `T::max_value()`).
pub fn gaussian_density_2d<T: Scalar>(x: Vec2<T>, mean: Vec2<T>, cov: &Cov2<T>) -> T {
    let d = x - mean;
    match cov.inverse() {
        Some(inv) => {
            let m = d.dot(inv.apply(d));
            let norm = T::lit(2.0) * T::PI() * cov.det().sqrt();
            (-(m / T::lit(2.0))).exp() / norm
        }
        None => {
            if d.norm_sq() == T::zero() {
                T::max_value()
            } else {
                T::zero()
            }
        }
    }
}

/// Scalar normal density.
pub fn gaussian_density_1d<T: Scalar>(x: T, mean: T, variance: T) -> T {
    if variance <= T::zero() {
        return if x == mean { T::max_value() } else { T::zero() };
    }
    let d = x - mean;
    (-(d * d) / (T::lit(2.0) * variance)).exp() / (T::lit(2.0) * T::PI() * variance).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrap_edges() {
        let pi = std::f64::consts::PI;
        assert_eq!(wrap_angle(pi), pi);
        assert!((wrap_angle(-pi) - pi).abs() < 1e-15);
        assert!((wrap_angle(3.0 * pi) - pi).abs() < 1e-12);
        assert!((wrap_angle(0.5 - 4.0 * pi) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rotate_quarter_turn() {
        let v = Vec2::new(1.0f64, 0.0).rotate(std::f64::consts::FRAC_PI_2);
        assert!(v.x.abs() < 1e-15 && (v.y - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cov_eigen_and_inverse() {
        let c = Cov2::new(2.0f64, 1.0, 2.0);
        let (lo, hi) = c.eigenvalues();
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 3.0).abs() < 1e-12);
        let inv = c.inverse().unwrap();
        let p = c.mul_full(&inv);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1].abs() < 1e-12 && (p[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn density_normalizes_on_grid() {
        let cov = Cov2::new(0.5f64, 0.1, 0.3);
        let mean = Vec2::new(0.2, -0.1);
        let h = 0.02;
        let mut total = 0.0;
        for i in -250..250 {
            for j in -250..250 {
                let p = Vec2::new(i as f64 * h, j as f64 * h);
                total += gaussian_density_2d(p, mean, &cov) * h * h;
            }
        }
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    proptest! {
        #[test]
        fn wrap_stays_in_range(a in -100.0f64..100.0) {
            let w = wrap_angle(a);
            prop_assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
            prop_assert!(((w - a) / (2.0 * std::f64::consts::PI)).fract().abs() < 1e-9
                || (1.0 - ((w - a) / (2.0 * std::f64::consts::PI)).fract().abs()) < 1e-9);
        }

        #[test]
        fn cholesky_reconstructs(a in 0.01f64..5.0, b in 0.01f64..5.0, rho in -0.95f64..0.95) {
            let c = Cov2::new(a, rho * (a * b).sqrt(), b);
            let [l11, l21, l22] = c.cholesky().unwrap();
            prop_assert!((l11 * l11 - c.xx).abs() < 1e-12);
            prop_assert!((l11 * l21 - c.xy).abs() < 1e-12);
            prop_assert!((l21 * l21 + l22 * l22 - c.yy).abs() < 1e-12);
        }
    }
}
