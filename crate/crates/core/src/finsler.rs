//! Finsler functions, their fundamental tensor and geodesic spray, and
//! Finslerian arc length.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::jets::{jacobian_x, Dual, PhaseField};
use crate::linalg::{self, Mat};
use crate::scalar::Scalar;
use crate::spray::{PhasePoint, SprayModel};

/// A Finsler function `F(x, v)` given by a formula, with optional guards that
/// must stay strictly positive.
#[derive(Clone, Debug)]
pub struct FinslerModel {
    dim: usize,
    label: String,
    f: Expression,
    guards: Vec<Expression>,
}

impl FinslerModel {
    pub fn new(label: impl Into<String>, f: Expression, guards: Vec<Expression>) -> Result<Self> {
        let dim = f.dim();
        for e in std::iter::once(&f).chain(&guards) {
            if e.dim() != dim {
                return Err(Error::InvalidArgument(format!("formula `{}` has the wrong dimension", e.source())));
            }
            if let Some(p) = e.free_params().into_iter().next() {
                return Err(Error::UnboundParameter(p));
            }
        }
        Ok(FinslerModel { dim, label: label.into(), f, guards })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn formula(&self) -> &Expression {
        &self.f
    }

    /// `F(x, v)`, failing outside the admissible region (`F > 0`, guards
    /// positive, `v ≠ 0`).
    pub fn value<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<T> {
        if v.iter().all(|c| c.re() == 0.0) {
            return Err(Error::Domain("zero velocity".into()));
        }
        for g in &self.guards {
            let value = g.eval(x, v)?.re();
            if value.is_nan() || value <= 0.0 {
                return Err(Error::Domain(format!("guard `{}` is {value:e}", g.source())));
            }
        }
        let f = self.f.eval(x, v)?;
        if f.re().is_nan() || f.re() <= 0.0 {
            return Err(Error::Domain(format!("Finsler function is not positive ({:e})", f.re())));
        }
        Ok(f)
    }

    /// `E = F²/2`.
    pub fn energy<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<T> {
        let f = self.value(x, v)?;
        Ok(f * f * T::from_f64(0.5))
    }

    /// Geodesic spray coefficients: solves `g f = ∂E/∂x − (∂²E/∂v∂x) v`.
    pub fn spray_coeffs<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        let n = self.dim;
        let energy = EnergyField(self);
        let mut g = Mat::<T>::zeros(n, n);
        let mut mixed = vec![T::zero(); n];
        let zero = vec![T::zero(); n];
        for i in 0..n {
            let ei = unit::<T>(n, i);
            for j in i..n {
                let ej = unit::<T>(n, j);
                let h = second_derivative(&energy, x, v, (&zero, &ej), (&zero, &ei))?;
                g[(i, j)] = h;
                g[(j, i)] = h;
            }
            mixed[i] = second_derivative(&energy, x, v, (v, &zero), (&zero, &ei))?;
        }
        if !is_positive_definite(&g.re()) {
            return Err(Error::Domain("fundamental tensor is not positive definite".into()));
        }
        let grad_x = jacobian_x(&energy, x, v)?;
        let rhs: Vec<T> = grad_x.iter().zip(&mixed).map(|(&a, &b)| a - b).collect();
        linalg::solve(&g, &rhs)
    }
}

impl PhaseField for FinslerModel {
    fn eval<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        Ok(vec![self.value(x, v)?])
    }
}

/// `E = F²/2` as a field.
pub struct EnergyField<'a>(pub &'a FinslerModel);

impl PhaseField for EnergyField<'_> {
    fn eval<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        Ok(vec![self.0.energy(x, v)?])
    }
}

fn unit<T: Scalar>(n: usize, k: usize) -> Vec<T> {
    (0..n).map(|i| if i == k { T::one() } else { T::zero() }).collect()
}

/// Mixed second derivative of the first component of `field` along the
/// phase directions `d1` and `d2`.
fn second_derivative<T: Scalar, F: PhaseField>(
    field: &F,
    x: &[T],
    v: &[T],
    d1: (&[T], &[T]),
    d2: (&[T], &[T]),
) -> Result<T> {
    let lift = |base: &[T], a: &[T], b: &[T]| -> Vec<Dual<Dual<T>>> {
        base.iter()
            .zip(a)
            .zip(b)
            .map(|((&p, &s), &t)| Dual::new(Dual::new(p, s), Dual::new(t, T::zero())))
            .collect()
    };
    let xs = lift(x, d1.0, d2.0);
    let vs = lift(v, d1.1, d2.1);
    Ok(field.eval(&xs, &vs)?[0].eps.eps)
}

/// Cholesky test.
pub fn is_positive_definite(g: &Mat<f64>) -> bool {
    g.rows() == g.cols() && g.to_nalgebra().cholesky().is_some()
}

/// Fundamental tensor `g_ij = ∂²E/∂v^i∂v^j` and the energy at `p`.
pub fn fundamental_tensor(model: &FinslerModel, p: &PhasePoint) -> Result<(Mat<f64>, f64)> {
    let n = model.dim();
    let energy = EnergyField(model);
    let zero = vec![0.0; n];
    let mut g = Mat::zeros(n, n);
    for i in 0..n {
        let ei = unit::<f64>(n, i);
        for j in i..n {
            let ej = unit::<f64>(n, j);
            let h = second_derivative(&energy, &p.x, &p.v, (&zero, &ej), (&zero, &ei))?;
            g[(i, j)] = h;
            g[(j, i)] = h;
        }
    }
    Ok((g, model.energy(&p.x, &p.v)?))
}

/// The geodesic spray of `F`.
pub fn geodesic_spray(model: &FinslerModel) -> SprayModel {
    SprayModel::finsler(Arc::new(model.clone()))
}

/// A parametrized curve `t ↦ (x(t), ẋ(t))`.
pub trait Curve {
    fn at(&self, t: f64) -> Result<PhasePoint>;
}

impl<F: Fn(f64) -> Result<PhasePoint>> Curve for F {
    fn at(&self, t: f64) -> Result<PhasePoint> {
        self(t)
    }
}

/// `∫ₐᵇ F(ċ) dt` by composite Simpson with `intervals` (rounded up to even)
/// panels. Every sample must be admissible.
pub fn arc_length<C: Curve + ?Sized>(model: &FinslerModel, curve: &C, a: f64, b: f64, intervals: usize) -> Result<f64> {
    let integrand = |t: f64| -> Result<f64> {
        let p = curve.at(t)?;
        model.value(&p.x, &p.v)
    };
    simpson(integrand, a, b, intervals)
}

fn simpson(mut g: impl FnMut(f64) -> Result<f64>, a: f64, b: f64, intervals: usize) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let m = intervals.max(2).div_ceil(2) * 2;
    let h = (b - a) / m as f64;
    let mut sum = g(a)? + g(b)?;
    for k in 1..m {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * g(a + k as f64 * h)?;
    }
    Ok(sum * h / 3.0)
}

/// Arc length along a curve that may cross short inadmissible windows (for
/// instance the guard margin around a metric singularity).
///
/// The admissible pieces are integrated by Simpson's rule; each excluded
/// window is located by bisection to `1e-12` and bridged by the trapezoid
/// rule on the integrand values at its two ends.
#[derive(Clone, Debug, PartialEq)]
pub struct BridgedLength {
    pub length: f64,
    /// Excluded windows `(t_in, t_out)`.
    pub windows: Vec<(f64, f64)>,
}

pub fn arc_length_bridged<C: Curve + ?Sized>(
    model: &FinslerModel,
    curve: &C,
    a: f64,
    b: f64,
    intervals: usize,
) -> Result<BridgedLength> {
    let value = |t: f64| -> Result<f64> {
        let p = curve.at(t)?;
        model.value(&p.x, &p.v)
    };
    let ok = |t: f64| value(t).is_ok();
    if !ok(a) || !ok(b) {
        return Err(Error::Domain("curve endpoints must be admissible".into()));
    }
    let m = intervals.max(2);
    let h = (b - a) / m as f64;
    let grid: Vec<f64> = (0..=m).map(|k| a + k as f64 * h).collect();
    let mut pieces = Vec::new();
    let mut windows = Vec::new();
    let mut start = a;
    let mut k = 0;
    while k < m {
        if ok(grid[k + 1]) {
            k += 1;
            continue;
        }
        let t_in = boundary(&ok, grid[k], grid[k + 1]);
        let mut j = k + 1;
        while !ok(grid[j]) {
            j += 1;
        }
        let t_out = boundary(&ok, grid[j], grid[j - 1]);
        pieces.push((start, t_in));
        windows.push((t_in, t_out));
        start = t_out;
        k = j;
    }
    pieces.push((start, b));
    let mut length = 0.0;
    for (lo, hi) in pieces {
        let panels = (((hi - lo) / h).ceil() as usize).max(2) * 2;
        length += simpson(value, lo, hi, panels)?;
    }
    for &(lo, hi) in &windows {
        length += 0.5 * (hi - lo) * (value(lo)? + value(hi)?);
    }
    Ok(BridgedLength { length, windows })
}

/// Last admissible point between an admissible `good` and inadmissible `bad`.
fn boundary(ok: &impl Fn(f64) -> bool, mut good: f64, mut bad: f64) -> f64 {
    while (bad - good).abs() > 1e-12 {
        let mid = 0.5 * (good + bad);
        if ok(mid) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    good
}
