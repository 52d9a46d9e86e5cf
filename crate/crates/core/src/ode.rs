//! Adaptive Dormand–Prince 5(4) integration with PI step control and the
//! method's native fourth-order continuous extension.
//!
//! A right-hand side that reports a domain error is treated as a rejected
//! step: the step shrinks, and once it cannot shrink further the solution is
//! truncated at the last accepted time instead of failing.

use crate::error::{Error, Result};

/// Mixed absolute/relative error tolerance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub atol: f64,
    pub rtol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { atol: 1e-10, rtol: 1e-9 }
    }
}

impl Tolerance {
    pub fn new(atol: f64, rtol: f64) -> Self {
        Tolerance { atol, rtol }
    }

    pub fn scaled(self, k: f64) -> Self {
        Tolerance { atol: self.atol * k, rtol: self.rtol * k }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdeOptions {
    pub tol: Tolerance,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { tol: Tolerance::default(), h_max: f64::INFINITY, max_steps: 100_000 }
    }
}

impl From<Tolerance> for OdeOptions {
    fn from(tol: Tolerance) -> Self {
        OdeOptions { tol, ..Default::default() }
    }
}

/// Why integration ended.
#[derive(Clone, Debug, PartialEq)]
pub enum Stop {
    Completed,
    /// The right-hand side left its domain just after `t`.
    DomainLimit { t: f64, reason: String },
}

#[derive(Clone, Debug)]
struct Segment {
    t0: f64,
    h: f64,
    rcont: [Vec<f64>; 5],
}

impl Segment {
    fn eval(&self, t: f64) -> Vec<f64> {
        let th = (t - self.t0) / self.h;
        let u = 1.0 - th;
        let [r1, r2, r3, r4, r5] = &self.rcont;
        (0..r1.len())
            .map(|i| r1[i] + th * (r2[i] + u * (r3[i] + th * (r4[i] + u * r5[i]))))
            .collect()
    }

    fn derivative(&self, t: f64) -> Vec<f64> {
        let th = (t - self.t0) / self.h;
        let u = 1.0 - th;
        let [_, r2, r3, r4, r5] = &self.rcont;
        (0..r2.len())
            .map(|i| {
                let a = r4[i] + u * r5[i];
                let da = -r5[i];
                let b = r3[i] + th * a;
                let db = a + th * da;
                let c = r2[i] + u * b;
                let dc = -b + u * db;
                (c + th * dc) / self.h
            })
            .collect()
    }
}

/// Accepted steps plus dense output between them.
#[derive(Clone, Debug)]
pub struct Solution {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    segments: Vec<Segment>,
    pub stop: Stop,
    pub rejected: usize,
}

impl Solution {
    pub fn t_start(&self) -> f64 {
        self.t[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.t.last().expect("solution has at least one node")
    }

    pub fn truncated(&self) -> bool {
        !matches!(self.stop, Stop::Completed)
    }

    /// Whether `t` lies in the integrated span, allowing a few ulps of
    /// slack at either end for grids computed by multiplication.
    pub fn contains(&self, t: f64) -> bool {
        let slack = 64.0 * f64::EPSILON * self.t_start().abs().max(self.t_end().abs()).max(1.0);
        t >= self.t_start() - slack && t <= self.t_end() + slack
    }

    fn segment(&self, t: f64) -> Option<&Segment> {
        if !self.contains(t) || self.segments.is_empty() {
            return None;
        }
        let k = self.t.partition_point(|&s| s <= t).saturating_sub(1);
        self.segments.get(k.min(self.segments.len() - 1))
    }

    /// Dense value at `t`; `None` outside the integrated span.
    pub fn eval(&self, t: f64) -> Option<Vec<f64>> {
        if self.segments.is_empty() {
            return (t == self.t_start()).then(|| self.y[0].clone());
        }
        self.segment(t).map(|s| s.eval(t))
    }

    /// Time derivative of the dense interpolant.
    pub fn derivative(&self, t: f64) -> Option<Vec<f64>> {
        self.segment(t).map(|s| s.derivative(t))
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn axpy(y: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    (0..y.len()).map(|i| y[i] + h * terms.iter().map(|(c, k)| c * k[i]).sum::<f64>()).collect()
}

fn err_norm(err: &[f64], y0: &[f64], y1: &[f64], tol: Tolerance) -> f64 {
    let n = err.len().max(1) as f64;
    (err.iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sk = tol.atol + tol.rtol * a.abs().max(b.abs());
            (e / sk).powi(2)
        })
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Integrates `y' = rhs(t, y)` from `t0` to `t_end > t0`.
pub fn integrate<F>(mut rhs: F, t0: f64, y0: &[f64], t_end: f64, opts: &OdeOptions) -> Result<Solution>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let tol = opts.tol;
    let mut sol = Solution { t: vec![t0], y: vec![y0.to_vec()], segments: Vec::new(), stop: Stop::Completed, rejected: 0 };
    if t_end <= t0 {
        return Ok(sol);
    }
    let mut k1 = match rhs(t0, y0) {
        Ok(k) => k,
        Err(e) if e.is_domain() => {
            sol.stop = Stop::DomainLimit { t: t0, reason: e.to_string() };
            return Ok(sol);
        }
        Err(e) => return Err(e),
    };
    let span = t_end - t0;
    let mut h = initial_step(&mut rhs, t0, y0, &k1, tol).min(span).min(opts.h_max);
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut facold: f64 = 1e-4;
    let mut last_rejected = false;
    const BETA: f64 = 0.04;
    const SAFE: f64 = 0.9;
    let expo1 = 0.2 - BETA * 0.75;

    for _ in 0..opts.max_steps {
        if t >= t_end {
            return Ok(sol);
        }
        let h_min = 1e-14 * t.abs().max(span);
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        match try_step(&mut rhs, t, &y, &k1, h) {
            Ok(step) => {
                let err = err_norm(&step.err, &y, &step.y1, tol);
                let fac11 = err.powf(expo1);
                if err <= 1.0 {
                    let fac = (fac11 / facold.powf(BETA) / SAFE).clamp(0.1, 5.0);
                    facold = err.max(1e-4);
                    let t_new = if last { t_end } else { t + h };
                    sol.segments.push(Segment { t0: t, h, rcont: step.rcont });
                    sol.t.push(t_new);
                    sol.y.push(step.y1.clone());
                    t = t_new;
                    y = step.y1;
                    k1 = step.k7;
                    let mut h_new = h / fac;
                    if last_rejected {
                        h_new = h_new.min(h);
                    }
                    last_rejected = false;
                    h = h_new.min(opts.h_max);
                } else {
                    sol.rejected += 1;
                    last_rejected = true;
                    h /= (fac11 / SAFE).min(5.0);
                    if h < h_min {
                        return Err(Error::StepSizeCollapse { t });
                    }
                }
            }
            Err(e) if e.is_domain() => {
                sol.rejected += 1;
                last_rejected = true;
                h *= 0.25;
                if h < h_min {
                    sol.stop = Stop::DomainLimit { t, reason: e.to_string() };
                    return Ok(sol);
                }
            }
            Err(Error::StepSizeCollapse { .. }) => {
                sol.rejected += 1;
                last_rejected = true;
                h *= 0.25;
                if h < h_min {
                    return Err(Error::StepSizeCollapse { t });
                }
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::StepSizeCollapse { t })
}

struct Step {
    y1: Vec<f64>,
    k7: Vec<f64>,
    err: Vec<f64>,
    rcont: [Vec<f64>; 5],
}

fn try_step<F>(rhs: &mut F, t: f64, y: &[f64], k1: &[f64], h: f64) -> Result<Step>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let k2 = rhs(t + C2 * h, &axpy(y, h, &[(A21, k1)]))?;
    let k3 = rhs(t + C3 * h, &axpy(y, h, &[(A31, k1), (A32, &k2)]))?;
    let k4 = rhs(t + C4 * h, &axpy(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]))?;
    let k5 = rhs(t + C5 * h, &axpy(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]))?;
    let k6 = rhs(t + h, &axpy(y, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]))?;
    let y1 = axpy(y, h, &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
    let k7 = rhs(t + h, &y1)?;
    if y1.iter().chain(&k7).any(|c| !c.is_finite()) {
        return Err(Error::StepSizeCollapse { t });
    }
    let n = y.len();
    let err: Vec<f64> = (0..n)
        .map(|i| h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]))
        .collect();
    let ydiff: Vec<f64> = (0..n).map(|i| y1[i] - y[i]).collect();
    let bspl: Vec<f64> = (0..n).map(|i| h * k1[i] - ydiff[i]).collect();
    let r4: Vec<f64> = (0..n).map(|i| ydiff[i] - h * k7[i] - bspl[i]).collect();
    let r5: Vec<f64> = (0..n)
        .map(|i| h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]))
        .collect();
    Ok(Step { y1, k7, err, rcont: [y.to_vec(), ydiff, bspl, r4, r5] })
}

fn initial_step<F>(rhs: &mut F, t0: f64, y0: &[f64], f0: &[f64], tol: Tolerance) -> f64
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let scale = |i: usize| tol.atol + tol.rtol * y0[i].abs();
    let n = y0.len().max(1) as f64;
    let d0 = (y0.iter().enumerate().map(|(i, v)| (v / scale(i)).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f0.iter().enumerate().map(|(i, v)| (v / scale(i)).powi(2)).sum::<f64>() / n).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1 = axpy(y0, h0, &[(1.0, f0)]);
    let d2 = match rhs(t0 + h0, &y1) {
        Ok(f1) => {
            (f1.iter().zip(f0).enumerate().map(|(i, (a, b))| ((a - b) / scale(i)).powi(2)).sum::<f64>() / n).sqrt()
                / h0
        }
        Err(_) => return h0,
    };
    let m = d1.max(d2);
    let h1 = if m <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / m).powf(0.2) };
    (100.0 * h0).min(h1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic(_: f64, y: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![y[1], -y[0]])
    }

    #[test]
    fn harmonic_oscillator_to_tolerance() {
        let sol = integrate(harmonic, 0.0, &[0.0, 1.0], 10.0, &OdeOptions::default()).unwrap();
        assert_eq!(sol.stop, Stop::Completed);
        let end = sol.y.last().unwrap();
        assert!((end[0] - 10f64.sin()).abs() < 1e-8);
        assert!((end[1] - 10f64.cos()).abs() < 1e-8);
    }

    #[test]
    fn dense_output_is_accurate_between_nodes() {
        let sol = integrate(harmonic, 0.0, &[0.0, 1.0], 6.0, &OdeOptions::default()).unwrap();
        let mut worst: f64 = 0.0;
        let mut worst_d: f64 = 0.0;
        for k in 0..600 {
            let t = k as f64 * 0.01 + 0.003;
            let y = sol.eval(t).unwrap();
            worst = worst.max((y[0] - t.sin()).abs());
            let d = sol.derivative(t).unwrap();
            worst_d = worst_d.max((d[0] - t.cos()).abs());
        }
        assert!(worst < 1e-8, "{worst}");
        assert!(worst_d < 1e-7, "{worst_d}");
        assert!(sol.eval(6.5).is_none());
    }

    #[test]
    fn domain_wall_truncates() {
        // y' = 1 with the domain y < 1.
        let rhs = |_: f64, y: &[f64]| -> Result<Vec<f64>> {
            if y[0] >= 1.0 {
                Err(Error::Domain("wall".into()))
            } else {
                Ok(vec![1.0])
            }
        };
        let sol = integrate(rhs, 0.0, &[0.0], 5.0, &OdeOptions::default()).unwrap();
        assert!(sol.truncated());
        assert!((sol.t_end() - 1.0).abs() < 1e-9, "{}", sol.t_end());
    }

    #[test]
    fn blow_up_collapses_step_size() {
        let rhs = |_: f64, y: &[f64]| -> Result<Vec<f64>> { Ok(vec![y[0] * y[0]]) };
        let r = integrate(rhs, 0.0, &[1.0], 2.0, &OdeOptions::default());
        assert!(matches!(r, Err(Error::StepSizeCollapse { t }) if (t - 1.0).abs() < 1e-3));
    }
}
