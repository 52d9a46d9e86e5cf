//! Forward-mode differentiation with nestable first-order jets.
//!
//! A [`Dual<T>`] carries a value and one infinitesimal slot. Nesting
//! `Dual<Dual<T>>` gives mixed second derivatives, three levels give the third
//! directional derivatives needed for covariant derivatives of the Jacobi
//! endomorphism. All derivatives are exact up to floating point rounding.

use std::ops::{Add, Div, Mul, Neg, Sub};

use num_traits::{One, Zero};

use crate::error::Result;
use crate::scalar::Scalar;

/// `re + eps·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Scalar> Dual<T> {
    #[inline]
    pub fn new(re: T, eps: T) -> Self {
        Dual { re, eps }
    }

    #[inline]
    pub fn constant(re: T) -> Self {
        Dual { re, eps: T::zero() }
    }

    #[inline]
    pub fn variable(re: T) -> Self {
        Dual { re, eps: T::one() }
    }
}

impl<T: Scalar> Zero for Dual<T> {
    #[inline]
    fn zero() -> Self {
        Dual::constant(T::zero())
    }
    #[inline]
    fn is_zero(&self) -> bool {
        self.re.is_zero() && self.eps.is_zero()
    }
}

impl<T: Scalar> One for Dual<T> {
    #[inline]
    fn one() -> Self {
        Dual::constant(T::one())
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Dual::new(self.re + rhs.re, self.eps + rhs.eps)
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Dual::new(self.re - rhs.re, self.eps - rhs.eps)
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Dual::new(self.re * rhs.re, self.re * rhs.eps + self.eps * rhs.re)
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let q = self.re / rhs.re;
        Dual::new(q, (self.eps - q * rhs.eps) / rhs.re)
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    #[inline]
    fn from_f64(value: f64) -> Self {
        Dual::constant(T::from_f64(value))
    }

    #[inline]
    fn re(&self) -> f64 {
        self.re.re()
    }

    #[inline]
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Dual::new(s, self.eps / (s + s))
    }

    #[inline]
    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.eps * self.re.cos())
    }

    #[inline]
    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -(self.eps * self.re.sin()))
    }

    #[inline]
    fn powi(self, n: i32) -> Self {
        match n {
            0 => Dual::one(),
            1 => self,
            _ => Dual::new(
                self.re.powi(n),
                self.eps * T::from_f64(n as f64) * self.re.powi(n - 1),
            ),
        }
    }

    #[inline]
    fn line(value: f64, direction: f64) -> Self {
        Dual::new(T::line(value, direction), T::from_f64(direction))
    }

    #[inline]
    fn chain_coeff(&self, order: usize) -> f64 {
        if order == 0 {
            self.re.chain_coeff(0)
        } else {
            self.eps.chain_coeff(order - 1)
        }
    }

    #[inline]
    fn depth() -> usize {
        T::depth() + 1
    }
}

/// Single-level jet over `f64`.
pub type Jet1 = Dual<f64>;
/// Two nested levels: mixed second derivatives.
pub type Jet2 = Dual<Dual<f64>>;
/// Three nested levels: third directional derivatives.
pub type Jet3 = Dual<Dual<Dual<f64>>>;

/// A (possibly vector-valued) field on the slit tangent bundle that can be
/// evaluated over any scalar type.
///
/// Scalar fields return one component; `n×n` tensors return their entries in
/// row-major order.
pub trait PhaseField {
    fn eval<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<Vec<T>>;
}

impl<F: PhaseField + ?Sized> PhaseField for &F {
    fn eval<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        (**self).eval(x, v)
    }
}

/// Lifts `(x, v)` into jets with tangent `(dx, dv)`.
pub fn lift_point<T: Scalar>(x: &[T], v: &[T], dx: &[T], dv: &[T]) -> (Vec<Dual<T>>, Vec<Dual<T>>) {
    let xs = x.iter().zip(dx).map(|(&a, &b)| Dual::new(a, b)).collect();
    let vs = v.iter().zip(dv).map(|(&a, &b)| Dual::new(a, b)).collect();
    (xs, vs)
}

/// Derivative of `field` at `(x, v)` along the phase direction `(dx, dv)`.
pub fn derivative_along<T: Scalar, F: PhaseField>(
    field: &F,
    x: &[T],
    v: &[T],
    dx: &[T],
    dv: &[T],
) -> Result<Vec<T>> {
    let (xs, vs) = lift_point(x, v, dx, dv);
    Ok(field.eval(&xs, &vs)?.into_iter().map(|d| d.eps).collect())
}

/// Value and derivative of `field` along `(dx, dv)` from one jet pass.
pub fn value_and_derivative<T: Scalar, F: PhaseField>(
    field: &F,
    x: &[T],
    v: &[T],
    dx: &[T],
    dv: &[T],
) -> Result<(Vec<T>, Vec<T>)> {
    let (xs, vs) = lift_point(x, v, dx, dv);
    let out = field.eval(&xs, &vs)?;
    Ok((out.iter().map(|d| d.re).collect(), out.iter().map(|d| d.eps).collect()))
}

fn unit<T: Scalar>(n: usize, k: usize) -> Vec<T> {
    (0..n).map(|i| if i == k { T::one() } else { T::zero() }).collect()
}

/// Jacobian with respect to the base coordinates: entry `(i, j)` is
/// `∂field_i/∂x^j`, row-major with `n` columns.
pub fn jacobian_x<T: Scalar, F: PhaseField>(field: &F, x: &[T], v: &[T]) -> Result<Vec<T>> {
    jacobian(field, x, v, true)
}

/// Jacobian with respect to the fibre coordinates.
pub fn jacobian_v<T: Scalar, F: PhaseField>(field: &F, x: &[T], v: &[T]) -> Result<Vec<T>> {
    jacobian(field, x, v, false)
}

fn jacobian<T: Scalar, F: PhaseField>(field: &F, x: &[T], v: &[T], base: bool) -> Result<Vec<T>> {
    let n = x.len();
    let zero = vec![T::zero(); n];
    let mut columns = Vec::with_capacity(n);
    for j in 0..n {
        let e = unit::<T>(n, j);
        let col = if base {
            derivative_along(field, x, v, &e, &zero)?
        } else {
            derivative_along(field, x, v, &zero, &e)?
        };
        columns.push(col);
    }
    let m = columns.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        for col in &columns {
            out.push(col[i]);
        }
    }
    Ok(out)
}

/// `∂g/∂x` of a scalar field at a real phase point.
pub fn gradient_x<F: PhaseField>(g: &F, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    jacobian_x(g, x, v)
}

/// `∂g/∂v` of a scalar field at a real phase point.
pub fn gradient_v<F: PhaseField>(g: &F, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    jacobian_v(g, x, v)
}

/// Derivatives `dᵏ/dtᵏ g(p + t d)` at `t = 0` for `k = 1..=order` of the
/// first component of `g`.
pub fn directional<F: PhaseField>(
    g: &F,
    x: &[f64],
    v: &[f64],
    dx: &[f64],
    dv: &[f64],
    order: usize,
) -> Result<Vec<f64>> {
    fn run<T: Scalar, F: PhaseField>(
        g: &F,
        x: &[f64],
        v: &[f64],
        dx: &[f64],
        dv: &[f64],
        order: usize,
    ) -> Result<Vec<f64>> {
        let xs: Vec<T> = x.iter().zip(dx).map(|(&a, &b)| T::line(a, b)).collect();
        let vs: Vec<T> = v.iter().zip(dv).map(|(&a, &b)| T::line(a, b)).collect();
        let out = g.eval(&xs, &vs)?;
        Ok((1..=order).map(|k| out[0].chain_coeff(k)).collect())
    }
    match order {
        0 => Ok(Vec::new()),
        1 => run::<Jet1, F>(g, x, v, dx, dv, 1),
        2 => run::<Jet2, F>(g, x, v, dx, dv, 2),
        3 => run::<Jet3, F>(g, x, v, dx, dv, 3),
        _ => Err(crate::error::Error::InvalidArgument(format!(
            "directional derivatives are supported up to order 3, got {order}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Poly;

    // g = sin(x1) * v2^2 + x2 * v1 / v2
    impl PhaseField for Poly {
        fn eval<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
            Ok(vec![x[0].sin() * v[1].powi(2) + x[1] * v[0] / v[1]])
        }
    }

    fn poly(x: &[f64], v: &[f64]) -> f64 {
        x[0].sin() * v[1] * v[1] + x[1] * v[0] / v[1]
    }

    #[test]
    fn dual_arithmetic_follows_leibniz() {
        let a = Jet1::new(2.0, 1.0);
        let b = Jet1::new(3.0, 0.0);
        let p = a * a * b;
        assert_eq!(p.re, 12.0);
        assert_eq!(p.eps, 12.0);
        let q = b / a;
        assert!((q.eps + 0.75).abs() < 1e-15);
        let s = Jet1::new(4.0, 1.0).sqrt();
        assert!((s.eps - 0.25).abs() < 1e-15);
    }

    #[test]
    fn sin_of_line_through_origin() {
        struct Sin;
        impl PhaseField for Sin {
            fn eval<T: Scalar>(&self, x: &[T], _v: &[T]) -> Result<Vec<T>> {
                Ok(vec![x[0].sin()])
            }
        }
        let d = directional(&Sin, &[0.0], &[1.0], &[1.0], &[0.0], 3).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-15);
        assert!(d[1].abs() < 1e-15);
        assert!((d[2] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_central_differences() {
        let x = [0.3, -0.7];
        let v = [1.2, 0.8];
        let gx = gradient_x(&Poly, &x, &v).unwrap();
        let gv = gradient_v(&Poly, &x, &v).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let fd = (poly(&xp, &v) - poly(&xm, &v)) / (2.0 * h);
            assert!((fd - gx[k]).abs() < 1e-8);
            let mut vp = v;
            let mut vm = v;
            vp[k] += h;
            vm[k] -= h;
            let fd = (poly(&x, &vp) - poly(&x, &vm)) / (2.0 * h);
            assert!((fd - gv[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn mixed_seeds_commute() {
        let x = [0.3, -0.7];
        let v = [1.2, 0.8];
        let d1 = ([1.0, 0.5], [0.0, -1.0]);
        let d2 = ([0.0, 2.0], [0.3, 0.1]);
        let xs: Vec<Jet2> = x
            .iter()
            .enumerate()
            .map(|(i, &a)| Dual::new(Dual::new(a, d1.0[i]), Dual::new(d2.0[i], 0.0)))
            .collect();
        let vs: Vec<Jet2> = v
            .iter()
            .enumerate()
            .map(|(i, &a)| Dual::new(Dual::new(a, d1.1[i]), Dual::new(d2.1[i], 0.0)))
            .collect();
        let a = Poly.eval(&xs, &vs).unwrap()[0].eps.eps;
        let xs: Vec<Jet2> = x
            .iter()
            .enumerate()
            .map(|(i, &a)| Dual::new(Dual::new(a, d2.0[i]), Dual::new(d1.0[i], 0.0)))
            .collect();
        let vs: Vec<Jet2> = v
            .iter()
            .enumerate()
            .map(|(i, &a)| Dual::new(Dual::new(a, d2.1[i]), Dual::new(d1.1[i], 0.0)))
            .collect();
        let b = Poly.eval(&xs, &vs).unwrap()[0].eps.eps;
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn plain_and_order_zero_jets_agree_bitwise() {
        let x = [0.3, -0.7];
        let v = [1.2, 0.8];
        let plain = Poly.eval(&x, &v).unwrap()[0];
        let xs: Vec<Jet3> = x.iter().map(|&a| Jet3::from_f64(a)).collect();
        let vs: Vec<Jet3> = v.iter().map(|&a| Jet3::from_f64(a)).collect();
        let jet = Poly.eval(&xs, &vs).unwrap()[0];
        assert_eq!(plain.to_bits(), jet.re().to_bits());
    }
}
